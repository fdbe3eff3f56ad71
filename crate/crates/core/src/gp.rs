//! Exact Gaussian-process regression with known homoscedastic noise.
//!
//! For data `(x_s, y_s)`, Gram matrix `K_st = k(x_s, x_t)` and noise `σ²`:
//!
//! ```text
//! μ(x)    = k(x, X) (K + σ²I)⁻¹ y
//! k(x, y) = k(x, y) − k(x, X) (K + σ²I)⁻¹ k(X, y)
//! ```
//!
//! `(K + σ²I)` is factorized once as `L Lᵀ` when the posterior is fitted.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelKind {
    /// `amplitude · exp(−‖x−y‖² / (2ℓ²))`
    Rbf,
    /// `amplitude` everywhere; the GP over constant functions.
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernel {
    pub kind: KernelKind,
    pub bandwidth: f64,
    pub amplitude: f64,
}

impl Kernel {
    pub fn rbf(bandwidth: f64, amplitude: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::InvalidArgument(format!("kernel bandwidth {bandwidth} must be positive")));
        }
        if !(amplitude > 0.0 && amplitude.is_finite()) {
            return Err(Error::InvalidArgument(format!("kernel amplitude {amplitude} must be positive")));
        }
        Ok(Self {
            kind: KernelKind::Rbf,
            bandwidth,
            amplitude,
        })
    }

    pub fn constant(amplitude: f64) -> Result<Self> {
        if !(amplitude > 0.0 && amplitude.is_finite()) {
            return Err(Error::InvalidArgument(format!("kernel amplitude {amplitude} must be positive")));
        }
        Ok(Self {
            kind: KernelKind::Constant,
            bandwidth: 1.0,
            amplitude,
        })
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                found: y.len(),
            });
        }
        Ok(self.k(x, y))
    }

    #[inline]
    pub(crate) fn k(&self, x: &[f64], y: &[f64]) -> f64 {
        match self.kind {
            KernelKind::Constant => self.amplitude,
            KernelKind::Rbf => {
                let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                self.amplitude * (-d2 / (2.0 * self.bandwidth * self.bandwidth)).exp()
            }
        }
    }
}

pub fn kernel_eval(k: &Kernel, x: &[f64], y: &[f64]) -> Result<f64> {
    k.eval(x, y)
}

/// Noisy evaluations `(x_pa(n), x_n)` of one structural function.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionData {
    dim: usize,
    inputs: Vec<Vec<f64>>,
    outputs: Vec<f64>,
    noise_var: f64,
}

impl RegressionData {
    pub fn new(dim: usize, noise_var: f64) -> Result<Self> {
        if !(noise_var > 0.0 && noise_var.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise variance {noise_var} must be positive")));
        }
        Ok(Self {
            dim,
            inputs: Vec::new(),
            outputs: Vec::new(),
            noise_var,
        })
    }

    pub fn from_pairs(
        dim: usize,
        noise_var: f64,
        pairs: impl IntoIterator<Item = (Vec<f64>, f64)>,
    ) -> Result<Self> {
        let mut data = Self::new(dim, noise_var)?;
        for (x, y) in pairs {
            data.push(x, y)?;
        }
        Ok(data)
    }

    pub fn push(&mut self, input: Vec<f64>, output: f64) -> Result<()> {
        if input.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: input.len(),
            });
        }
        if !output.is_finite() || input.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDraw("regression pair has non-finite entries".into()));
        }
        self.inputs.push(input);
        self.outputs.push(output);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[f64] {
        &self.outputs
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }
}

/// The posterior GP of one structural function, with `(K + σ²I)` factorized.
#[derive(Debug, Clone)]
pub struct NodePosterior {
    kernel: Kernel,
    data: RegressionData,
    /// Row-major lower-triangular Cholesky factor, `n × n`.
    chol: Vec<f64>,
    /// `(K + σ²I)⁻¹ y`
    alpha: Vec<f64>,
    jitter: f64,
}

impl NodePosterior {
    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn data(&self) -> &RegressionData {
        &self.data
    }

    pub fn noise_var(&self) -> f64 {
        self.data.noise_var
    }

    /// Diagonal jitter that was needed on top of `σ²`.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn mean_var(&self, x: &[f64]) -> Result<(f64, f64)> {
        if x.len() != self.data.dim {
            return Err(Error::DimensionMismatch {
                expected: self.data.dim,
                found: x.len(),
            });
        }
        Ok(self.mean_var_unchecked(x))
    }

    pub(crate) fn mean_var_unchecked(&self, x: &[f64]) -> (f64, f64) {
        let mut v = self.cross(x);
        let mean = dot(&v, &self.alpha);
        self.solve_lower(&mut v);
        let var = self.kernel.k(x, x) - dot(&v, &v);
        (mean, var.clamp(0.0, self.kernel.amplitude))
    }

    pub(crate) fn mean_unchecked(&self, x: &[f64]) -> f64 {
        self.data
            .inputs
            .iter()
            .zip(&self.alpha)
            .map(|(xs, a)| self.kernel.k(x, xs) * a)
            .sum()
    }

    /// `k(X, x)` against the training inputs.
    pub(crate) fn cross(&self, x: &[f64]) -> Vec<f64> {
        self.data.inputs.iter().map(|xs| self.kernel.k(x, xs)).collect()
    }

    /// `L⁻¹ k(X, x)`; the squared norm of this is the variance explained by
    /// the data at `x`.
    pub(crate) fn whitened_cross(&self, x: &[f64]) -> Vec<f64> {
        let mut v = self.cross(x);
        self.solve_lower(&mut v);
        v
    }

    /// In-place forward substitution `b ← L⁻¹ b`.
    pub(crate) fn solve_lower(&self, b: &mut [f64]) {
        let n = self.data.len();
        for i in 0..n {
            let row = &self.chol[i * n..i * n + i];
            let s: f64 = row.iter().zip(&b[..i]).map(|(l, v)| l * v).sum();
            b[i] = (b[i] - s) / self.chol[i * n + i];
        }
    }
}

pub fn fit_posterior(kernel: &Kernel, data: &RegressionData) -> Result<NodePosterior> {
    let n = data.len();
    let mut gram = DMatrix::<f64>::zeros(n, n);
    for s in 0..n {
        for t in 0..=s {
            let v = kernel.k(&data.inputs[s], &data.inputs[t]);
            gram[(s, t)] = v;
            gram[(t, s)] = v;
        }
        gram[(s, s)] += data.noise_var;
    }
    let mut jitter = JITTER_START * kernel.amplitude;
    let factor = loop {
        let mut attempt = gram.clone();
        for s in 0..n {
            attempt[(s, s)] += jitter;
        }
        if let Some(c) = attempt.cholesky() {
            break c.unpack();
        }
        jitter *= 2.0;
        if jitter > JITTER_MAX * kernel.amplitude {
            return Err(Error::IllConditioned {
                max_jitter: JITTER_MAX * kernel.amplitude,
            });
        }
    };
    let mut chol = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            chol[i * n + j] = factor[(i, j)];
        }
    }
    let mut post = NodePosterior {
        kernel: *kernel,
        data: data.clone(),
        chol,
        alpha: data.outputs.clone(),
        jitter,
    };
    // alpha = L⁻ᵀ L⁻¹ y
    let mut alpha = std::mem::take(&mut post.alpha);
    post.solve_lower(&mut alpha);
    for i in (0..n).rev() {
        let mut s = alpha[i];
        for k in i + 1..n {
            s -= post.chol[k * n + i] * alpha[k];
        }
        alpha[i] = s / post.chol[i * n + i];
    }
    post.alpha = alpha;
    Ok(post)
}

pub fn posterior_mean_var(p: &NodePosterior, x: &[f64]) -> Result<(f64, f64)> {
    p.mean_var(x)
}

/// Conjugate update of a zero-mean Gaussian prior on a constant from noisy
/// observations of it. Returns `(mean, variance)`.
pub fn constant_posterior(prior_var: f64, noise_var: f64, observations: &[f64]) -> (f64, f64) {
    let m = observations.len() as f64;
    let var = 1.0 / (1.0 / prior_var + m / noise_var);
    let sum: f64 = observations.iter().sum();
    (var * sum / noise_var, var)
}

/// Posterior variance of a constant after `count` observations.
pub(crate) fn constant_posterior_var(prior_var: f64, noise_var: f64, count: usize) -> f64 {
    1.0 / (1.0 / prior_var + count as f64 / noise_var)
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct dense solve of the closed-form posterior; shares no code with
    /// the cached factorization path.
    fn naive(kernel: &Kernel, data: &RegressionData, x: &[f64]) -> (f64, f64) {
        let n = data.len();
        let a = DMatrix::from_fn(n, n, |s, t| {
            kernel.eval(&data.inputs()[s], &data.inputs()[t]).unwrap()
                + if s == t { data.noise_var() } else { 0.0 }
        });
        let inv = a.try_inverse().unwrap();
        let kx: Vec<f64> = data.inputs().iter().map(|xs| kernel.eval(x, xs).unwrap()).collect();
        let mut mean = 0.0;
        let mut red = 0.0;
        for s in 0..n {
            for t in 0..n {
                mean += kx[s] * inv[(s, t)] * data.outputs()[t];
                red += kx[s] * inv[(s, t)] * kx[t];
            }
        }
        (mean, kernel.eval(x, x).unwrap() - red)
    }

    fn random_data(rng: &mut ChaCha8Rng, dim: usize, n: usize, noise: f64) -> RegressionData {
        RegressionData::from_pairs(
            dim,
            noise,
            (0..n).map(|_| {
                let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-6.0..6.0)).collect();
                (x, rng.random_range(-3.0..3.0))
            }),
        )
        .unwrap()
    }

    #[test]
    fn kernel_examples() {
        let k = Kernel::rbf(1.0, 1.0).unwrap();
        assert_eq!(k.eval(&[0.3], &[0.3]).unwrap(), 1.0);
        assert!((k.eval(&[0.0], &[1.0]).unwrap() - 0.606_530_659_712_633_4).abs() < 1e-15);
        let k5 = Kernel::rbf(5.0, 1.0).unwrap();
        let v = k5.eval(&[0.0, 0.0], &[3.0, 4.0]).unwrap();
        assert!((v - (-0.5f64).exp()).abs() < 1e-15);
        assert!(matches!(k.eval(&[0.0], &[0.0, 1.0]), Err(Error::DimensionMismatch { .. })));
        assert!(Kernel::rbf(0.0, 1.0).is_err());
    }

    #[test]
    fn empty_data_is_prior() {
        let k = Kernel::rbf(1.0, 1.0).unwrap();
        let p = fit_posterior(&k, &RegressionData::new(1, 0.1).unwrap()).unwrap();
        assert_eq!(p.mean_var(&[2.5]).unwrap(), (0.0, 1.0));
    }

    #[test]
    fn one_pair_by_hand() {
        let k = Kernel::rbf(1.0, 1.0).unwrap();
        let data = RegressionData::from_pairs(1, 0.1, [(vec![0.4], 1.1)]).unwrap();
        let p = fit_posterior(&k, &data).unwrap();
        let (m, v) = p.mean_var(&[0.4]).unwrap();
        assert!((m - 1.0).abs() < 1e-9, "{m}");
        assert!((v - (1.0 - 1.0 / 1.1)).abs() < 1e-9, "{v}");
        assert!(matches!(p.mean_var(&[0.4, 1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn far_field_reverts_to_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = Kernel::rbf(1.0, 1.0).unwrap();
        let data = random_data(&mut rng, 1, 10, 0.1);
        let p = fit_posterior(&k, &data).unwrap();
        let (m, v) = p.mean_var(&[100.0]).unwrap();
        assert!(m.abs() < 1e-6 && (v - 1.0).abs() < 1e-6);
    }

    #[test]
    fn matches_naive_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..100 {
            let dim = 1 + trial % 2;
            let n = rng.random_range(0..=30);
            let k = Kernel::rbf(rng.random_range(0.5..2.0), rng.random_range(0.5..2.0)).unwrap();
            let noise = rng.random_range(0.05..1.0);
            let data = random_data(&mut rng, dim, n, noise);
            let p = fit_posterior(&k, &data).unwrap();
            for _ in 0..10 {
                let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-7.0..7.0)).collect();
                let (m, v) = p.mean_var(&x).unwrap();
                let (mn, vn) = naive(&k, &data, &x);
                assert!((m - mn).abs() < 1e-8, "mean {m} vs {mn}");
                assert!((v - vn.max(0.0)).abs() < 1e-8, "var {v} vs {vn}");
                assert!((p.mean_unchecked(&x) - m).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn adding_a_datum_never_increases_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let k = Kernel::rbf(1.0, 1.0).unwrap();
        for _ in 0..20 {
            let n = rng.random_range(0..15);
            let mut data = random_data(&mut rng, 1, n, 0.1);
            let before = fit_posterior(&k, &data).unwrap();
            data.push(vec![rng.random_range(-6.0..6.0)], 0.3).unwrap();
            let after = fit_posterior(&k, &data).unwrap();
            for _ in 0..100 {
                let x = [rng.random_range(-8.0..8.0)];
                let v0 = before.mean_var(&x).unwrap().1;
                let v1 = after.mean_var(&x).unwrap().1;
                assert!(v1 <= v0 + 1e-10, "{v1} > {v0}");
            }
        }
    }

    #[test]
    fn interpolates_as_noise_vanishes() {
        let k = Kernel::rbf(1.0, 1.0).unwrap();
        let data =
            RegressionData::from_pairs(1, 1e-8, [(vec![-1.0], 0.5), (vec![0.5], -2.0), (vec![2.0], 1.0)])
                .unwrap();
        let p = fit_posterior(&k, &data).unwrap();
        for (x, y) in data.inputs().iter().zip(data.outputs()) {
            assert!((p.mean_var(x).unwrap().0 - y).abs() < 1e-3);
        }
    }

    #[test]
    fn duplicate_inputs_fit() {
        let k = Kernel::rbf(1.0, 1.0).unwrap();
        let data = RegressionData::from_pairs(1, 1e-12, (0..5).map(|_| (vec![1.0], 2.0))).unwrap();
        let p = fit_posterior(&k, &data).unwrap();
        assert!(p.jitter() >= 1e-10);
        assert!(p.mean_var(&[1.0]).unwrap().1 >= 0.0);
    }

    #[test]
    fn constant_posterior_examples() {
        assert_eq!(constant_posterior(2.0, 0.5, &[]), (0.0, 2.0));
        assert_eq!(constant_posterior(1.0, 1.0, &[2.0]), (1.0, 0.5));
        let obs = vec![1.7; 1_000_000];
        let (m, v) = constant_posterior(1.0, 0.1, &obs);
        assert!((m - 1.7).abs() < 1e-6 && v < 1e-6);
    }

    #[test]
    fn constant_posterior_is_constant_kernel_gp() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let prior = rng.random_range(0.2..3.0);
            let noise = rng.random_range(0.05..2.0);
            let obs: Vec<f64> = (0..rng.random_range(0..12)).map(|_| rng.random_range(-4.0..4.0)).collect();
            let data = RegressionData::from_pairs(0, noise, obs.iter().map(|&y| (vec![], y))).unwrap();
            let p = fit_posterior(&Kernel::constant(prior).unwrap(), &data).unwrap();
            let (m, v) = p.mean_var(&[]).unwrap();
            let (mc, vc) = constant_posterior(prior, noise, &obs);
            assert!((m - mc).abs() < 1e-8 && (v - vc).abs() < 1e-8);
        }
    }
}
