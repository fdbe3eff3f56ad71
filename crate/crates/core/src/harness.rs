//! Seeded experiment loops, per-step CSV traces and per-step summaries.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::time::Instant;

use crate::belief::{expected_total_risk, BeliefState};
use crate::config::Experiment;
use crate::error::{Error, Result};
use crate::metrics::{evaluate, true_total_risk};
use crate::rng;
use crate::scm::{sample_scm, Intervention};
use crate::strategy::{select_intervention, Policy};

pub const TRACE_HEADER: [&str; 15] = [
    "trial",
    "step",
    "policy",
    "chosen_nodes",
    "chosen_values",
    "expected_total_risk",
    "true_total_risk",
    "kl_max",
    "kl_median",
    "mmd_max",
    "mmd_median",
    "candidates_evaluated",
    "candidate_values",
    "elapsed_ms",
    "status",
];

pub const SUMMARY_HEADER: [&str; 9] = [
    "policy",
    "step",
    "trials",
    "expected_total_risk",
    "true_total_risk",
    "kl_max",
    "kl_median",
    "mmd_max",
    "mmd_median",
];

/// Random-stream keys below a `(trial, step)` path.
const DRAW_KEY: u64 = 1;
const SELECT_KEY: u64 = 2;
const METRICS_KEY: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricColumns {
    pub kl_max: f64,
    pub kl_median: f64,
    pub mmd_max: f64,
    pub mmd_median: f64,
}

/// One line of the trace. Step 0 is the no-data baseline and has no chosen
/// intervention; a row with a non-`ok` status ends its trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub trial: usize,
    pub step: usize,
    pub policy: String,
    pub chosen: Option<Intervention>,
    pub expected_total_risk: Option<f64>,
    pub true_total_risk: Option<f64>,
    pub metrics: Option<MetricColumns>,
    pub candidates_evaluated: usize,
    /// Value of every candidate in candidate order; empty for the baselines.
    pub values: Vec<f64>,
    pub elapsed_ms: Option<f64>,
    pub status: String,
}

impl TraceRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

fn metrics_due(e: &Experiment, step: usize) -> bool {
    e.metrics.enabled && (step % e.metrics.stride == 0 || step == e.run.steps)
}

/// Runs every configured policy for every trial. Rows come out policy-major,
/// then trial, then step. Random streams depend on `(seed, trial, step)` only,
/// so all policies see the same noise at the same step.
pub fn run_experiment(e: &Experiment) -> Vec<TraceRow> {
    let mut rows = Vec::new();
    for &policy in &e.policies {
        for trial in 0..e.run.trials {
            run_trial(e, policy, trial, &mut rows);
        }
    }
    rows
}

/// Runs one trial, appending its rows. An error stops the trial after a
/// diagnostic row.
pub fn run_trial(e: &Experiment, policy: Policy, trial: usize, rows: &mut Vec<TraceRow>) {
    let mut belief = match BeliefState::empty(e.prior.clone()) {
        Ok(b) => b,
        Err(err) => {
            rows.push(error_row(trial, 0, policy, &err));
            return;
        }
    };
    for step in 0..=e.run.steps {
        match trial_step(e, policy, trial, step, &belief) {
            Ok((row, next)) => {
                rows.push(row);
                if let Some(b) = next {
                    belief = b;
                }
            }
            Err(err) => {
                rows.push(error_row(trial, step, policy, &err));
                return;
            }
        }
    }
}

fn trial_step(
    e: &Experiment,
    policy: Policy,
    trial: usize,
    step: usize,
    belief: &BeliefState,
) -> Result<(TraceRow, Option<BeliefState>)> {
    let start = Instant::now();
    let path = [trial as u64, step as u64];
    let key = |k: u64| [path[0], path[1], k];
    let (chosen, values, next) = if step == 0 {
        (None, Vec::new(), None)
    } else {
        let sel = select_intervention(
            policy,
            belief,
            &e.candidates,
            &e.costs,
            &e.risk,
            &e.params,
            rng::derive_seed(e.run.seed, &key(SELECT_KEY)),
        )?;
        let draw = sample_scm(
            &e.truth,
            &sel.intervention,
            &mut rng::stream(e.run.seed, &key(DRAW_KEY)),
        )?;
        let next = belief.with_draw(draw)?;
        (Some(sel.intervention), sel.values, Some(next))
    };
    let b = next.as_ref().unwrap_or(belief);
    let metrics = if metrics_due(e, step) {
        let r = evaluate(
            &e.truth,
            b,
            &e.candidates,
            &e.risk,
            &e.metrics_params(),
            rng::derive_seed(e.run.seed, &key(METRICS_KEY)),
        )?;
        Some(MetricColumns {
            kl_max: r.kl_max,
            kl_median: r.kl_median,
            mmd_max: r.mmd_max,
            mmd_median: r.mmd_median,
        })
    } else {
        None
    };
    let row = TraceRow {
        trial,
        step,
        policy: policy.name().to_string(),
        chosen,
        expected_total_risk: Some(expected_total_risk(b, &e.risk)),
        true_total_risk: Some(true_total_risk(&e.truth, b, &e.risk)),
        metrics,
        candidates_evaluated: values.len(),
        values,
        elapsed_ms: e
            .run
            .record_timing
            .then(|| start.elapsed().as_secs_f64() * 1e3),
        status: "ok".into(),
    };
    Ok((row, next))
}

fn error_row(trial: usize, step: usize, policy: Policy, err: &Error) -> TraceRow {
    TraceRow {
        trial,
        step,
        policy: policy.name().to_string(),
        chosen: None,
        expected_total_risk: None,
        true_total_risk: None,
        metrics: None,
        candidates_evaluated: 0,
        values: Vec::new(),
        elapsed_ms: None,
        status: format!("error: {err}"),
    }
}

/// 17 significant digits, enough to round-trip any f64.
fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

fn join<T>(items: impl Iterator<Item = T>, f: impl Fn(T) -> String) -> String {
    items.map(f).collect::<Vec<_>>().join(";")
}

pub fn write_trace<W: Write>(out: W, rows: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for r in rows {
        let (nodes, values) = match &r.chosen {
            Some(i) => (
                join(i.clamps().iter(), |c| c.0.to_string()),
                join(i.clamps().iter(), |c| fmt_f64(c.1)),
            ),
            None => (String::new(), String::new()),
        };
        let m = r.metrics;
        w.write_record([
            r.trial.to_string(),
            r.step.to_string(),
            r.policy.clone(),
            nodes,
            values,
            fmt_opt(r.expected_total_risk),
            fmt_opt(r.true_total_risk),
            fmt_opt(m.map(|m| m.kl_max)),
            fmt_opt(m.map(|m| m.kl_median)),
            fmt_opt(m.map(|m| m.mmd_max)),
            fmt_opt(m.map(|m| m.mmd_median)),
            r.candidates_evaluated.to_string(),
            join(r.values.iter(), |v| fmt_f64(*v)),
            fmt_opt(r.elapsed_ms),
            r.status.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn parse_field<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::InvalidArgument(format!("bad {what} field `{s}` in trace")))
}

fn parse_opt(s: &str, what: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse_field(s, what).map(Some)
    }
}

pub fn read_trace<R: Read>(input: R) -> Result<Vec<TraceRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.iter().ne(TRACE_HEADER) {
        return Err(Error::InvalidArgument("trace header does not match".into()));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let f = |k: usize| rec.get(k).unwrap_or("");
        // Empty fields mean no choice at step 0 and the null intervention later.
        let chosen = if f(3).is_empty() && f(4).is_empty() {
            let later = f(1) != "0" && f(14) == "ok";
            later.then(Intervention::null)
        } else {
            let nodes = f(3)
                .split(';')
                .map(|s| parse_field::<usize>(s, "chosen_nodes"))
                .collect::<Result<Vec<_>>>()?;
            let values = f(4)
                .split(';')
                .map(|s| parse_field::<f64>(s, "chosen_values"))
                .collect::<Result<Vec<_>>>()?;
            if nodes.len() != values.len() {
                return Err(Error::InvalidArgument("chosen nodes and values differ in length".into()));
            }
            Some(Intervention::new(nodes.into_iter().zip(values).collect())?)
        };
        let kl_max = parse_opt(f(7), "kl_max")?;
        let metrics = match kl_max {
            Some(kl_max) => Some(MetricColumns {
                kl_max,
                kl_median: parse_field(f(8), "kl_median")?,
                mmd_max: parse_field(f(9), "mmd_max")?,
                mmd_median: parse_field(f(10), "mmd_median")?,
            }),
            None => None,
        };
        rows.push(TraceRow {
            trial: parse_field(f(0), "trial")?,
            step: parse_field(f(1), "step")?,
            policy: f(2).to_string(),
            chosen,
            expected_total_risk: parse_opt(f(5), "expected_total_risk")?,
            true_total_risk: parse_opt(f(6), "true_total_risk")?,
            metrics,
            candidates_evaluated: parse_field(f(11), "candidates_evaluated")?,
            values: if f(12).is_empty() {
                Vec::new()
            } else {
                f(12)
                    .split(';')
                    .map(|v| parse_field(v, "candidate_values"))
                    .collect::<Result<Vec<f64>>>()?
            },
            elapsed_ms: parse_opt(f(13), "elapsed_ms")?,
            status: f(14).to_string(),
        });
    }
    Ok(rows)
}

/// Across-trial means for one policy at one step. A metric column is only
/// averaged when every trial has it at that step.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub policy: String,
    pub step: usize,
    pub trials: usize,
    pub expected_total_risk: f64,
    pub true_total_risk: f64,
    pub metrics: Option<MetricColumns>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Per-(policy, step) means. Every trial of a policy must cover the same
/// steps, and failed trials are rejected.
pub fn summarize(rows: &[TraceRow]) -> Result<Vec<SummaryRow>> {
    if let Some(bad) = rows.iter().find(|r| !r.is_ok()) {
        return Err(Error::RaggedTraces(format!(
            "policy {} trial {} stopped at step {}: {}",
            bad.policy, bad.trial, bad.step, bad.status
        )));
    }
    // policy (first-seen order) -> trial -> step -> row
    let mut order: Vec<&str> = Vec::new();
    let mut by: BTreeMap<&str, BTreeMap<usize, BTreeMap<usize, &TraceRow>>> = BTreeMap::new();
    for r in rows {
        if !order.contains(&r.policy.as_str()) {
            order.push(&r.policy);
        }
        let prev = by
            .entry(&r.policy)
            .or_default()
            .entry(r.trial)
            .or_default()
            .insert(r.step, r);
        if prev.is_some() {
            return Err(Error::RaggedTraces(format!(
                "policy {} trial {} repeats step {}",
                r.policy, r.trial, r.step
            )));
        }
    }
    let mut out = Vec::new();
    for p in order {
        let trials = &by[p];
        let mut it = trials.iter();
        let (t0, first) = it.next().expect("policy has a trial");
        let steps: Vec<usize> = first.keys().copied().collect();
        for (t, s) in it {
            if s.keys().ne(steps.iter()) {
                return Err(Error::RaggedTraces(format!(
                    "policy {p}: trial {t} has {} steps, trial {t0} has {}",
                    s.len(),
                    steps.len()
                )));
            }
        }
        for &step in &steps {
            let at: Vec<&TraceRow> = trials.values().map(|s| s[&step]).collect();
            let ms: Option<Vec<MetricColumns>> = at.iter().map(|r| r.metrics).collect();
            out.push(SummaryRow {
                policy: p.to_string(),
                step,
                trials: at.len(),
                expected_total_risk: mean(at.iter().filter_map(|r| r.expected_total_risk)),
                true_total_risk: mean(at.iter().filter_map(|r| r.true_total_risk)),
                metrics: ms.map(|ms| MetricColumns {
                    kl_max: mean(ms.iter().map(|m| m.kl_max)),
                    kl_median: mean(ms.iter().map(|m| m.kl_median)),
                    mmd_max: mean(ms.iter().map(|m| m.mmd_max)),
                    mmd_median: mean(ms.iter().map(|m| m.mmd_median)),
                }),
            });
        }
    }
    Ok(out)
}

pub fn write_summary<W: Write>(out: W, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for r in rows {
        let m = r.metrics;
        w.write_record([
            r.policy.clone(),
            r.step.to_string(),
            r.trials.to_string(),
            fmt_f64(r.expected_total_risk),
            fmt_f64(r.true_total_risk),
            fmt_opt(m.map(|m| m.kl_max)),
            fmt_opt(m.map(|m| m.kl_median)),
            fmt_opt(m.map(|m| m.mmd_max)),
            fmt_opt(m.map(|m| m.mmd_median)),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{presets, ExperimentConfig};

    fn small(steps: usize) -> Experiment {
        let mut c = ExperimentConfig::from_toml(presets::SMALL).unwrap();
        c.run.steps = steps;
        c.resolve().unwrap()
    }

    fn row(trial: usize, step: usize, risk: f64) -> TraceRow {
        TraceRow {
            trial,
            step,
            policy: "random".into(),
            chosen: None,
            expected_total_risk: Some(risk),
            true_total_risk: Some(risk),
            metrics: None,
            candidates_evaluated: 0,
            values: Vec::new(),
            elapsed_ms: None,
            status: "ok".into(),
        }
    }

    #[test]
    fn zero_steps_gives_prior_baselines() {
        let mut e = small(0);
        e.metrics.enabled = false;
        let rows = run_experiment(&e);
        assert_eq!(rows.len(), e.policies.len() * e.run.trials);
        for r in &rows {
            assert_eq!(r.step, 0);
            assert_eq!(r.expected_total_risk, Some(3.0));
            assert!(r.chosen.is_none());
        }
    }

    #[test]
    fn trace_round_trips_and_is_deterministic() {
        let e = small(3);
        let rows = run_experiment(&e);
        assert!(rows.iter().all(TraceRow::is_ok));
        let mut a = Vec::new();
        write_trace(&mut a, &rows).unwrap();
        let mut b = Vec::new();
        write_trace(&mut b, &run_experiment(&e)).unwrap();
        assert_eq!(a, b);
        assert_eq!(read_trace(&a[..]).unwrap(), rows);
        // metrics at step 0 (stride 5) and at the last step only
        let with: Vec<usize> = rows
            .iter()
            .filter(|r| r.trial == 0 && r.policy == "observe" && r.metrics.is_some())
            .map(|r| r.step)
            .collect();
        assert_eq!(with, vec![0, 3]);
    }

    #[test]
    fn seeds_change_choices() {
        let mut e = small(4);
        e.policies = vec![Policy::Random];
        e.metrics.enabled = false;
        let a = run_experiment(&e);
        e.run.seed += 1;
        let b = run_experiment(&e);
        let chosen = |rows: &[TraceRow]| rows.iter().map(|r| r.chosen.clone()).collect::<Vec<_>>();
        assert_ne!(chosen(&a), chosen(&b));
    }

    #[test]
    fn summary_means() {
        let rows = vec![row(0, 0, 1.0), row(0, 1, 1.0), row(1, 0, 3.0), row(1, 1, 5.0)];
        let s = summarize(&rows).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].true_total_risk, 2.0);
        assert_eq!(s[1].true_total_risk, 3.0);
        assert_eq!(s[0].trials, 2);
    }

    #[test]
    fn ragged_is_an_error() {
        let rows = vec![row(0, 0, 1.0), row(0, 1, 1.0), row(1, 0, 3.0)];
        assert!(matches!(summarize(&rows), Err(Error::RaggedTraces(_))));
    }

    #[test]
    fn float_format_round_trips() {
        for x in [0.1, 1.0 / 3.0, 5.0, -1e-300, 123456.789] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
    }
}
