//! Weighted entropy of zero-mean Gaussian vectors and the AR(1) process.
//!
//! With `X ~ N(0, C)` in dimension `n`, `H = 1/2 ln((2 pi e)^n det C)` and
//! `q(x) = x^T C^{-1} x`, the weighted information is
//! `phi(x) (H - n/2 + q(x)/2)`, so
//!
//! ```text
//! WE = (H - n/2) E[phi] + 1/2 E[q phi].
//! ```
//!
//! For `phi = exp(x^T M t + 1/2 x^T A x)` with `M = C^{-1} - A` positive
//! definite, the tilted law `phi f / E[phi]` is `N(t, M^{-1})`, which gives
//!
//! ```text
//! E[phi] = exp(1/2 t^T M t) / sqrt(det(I - C A))
//! WE     = E[phi] (H - n/2 + 1/2 tr (I - A C)^{-1} + 1/2 t^T C^{-1} t).
//! ```

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{exact_joint_we_multiplicative, KernelOperator, LogValue};

const SYMMETRY_TOL: f64 = 1e-12;

/// `1/2 ln(2 pi e)`, the entropy of a standard normal.
pub fn normal_entropy() -> f64 {
    0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln()
}

#[derive(Debug, Clone)]
pub struct GaussianModel {
    cov: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    log_det: f64,
}

impl GaussianModel {
    pub fn new(cov: DMatrix<f64>) -> Result<Self> {
        if !cov.is_square() || cov.nrows() == 0 {
            return Err(Error::invalid("covariance must be square and non-empty"));
        }
        if cov.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("covariance has non-finite entries"));
        }
        let asym = (&cov - cov.transpose()).abs().max();
        if asym > SYMMETRY_TOL * cov.abs().max().max(1.0) {
            return Err(Error::invalid(format!("covariance is not symmetric (max deviation {asym:e})")));
        }
        let chol = Cholesky::new(cov.clone())
            .ok_or_else(|| Error::NotPositiveDefinite("covariance factorization failed".into()))?;
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Ok(Self { cov, chol, log_det })
    }

    /// Stationary AR(1) block `X_{j+1} = alpha X_j + Z_{j+1}` of length `n`,
    /// covariance `alpha^{|i-j|} / (1 - alpha^2)`.
    pub fn ar1(alpha: f64, n: usize) -> Result<Self> {
        if !(alpha.abs() < 1.0) {
            return Err(Error::invalid(format!("AR(1) coefficient must satisfy |alpha| < 1, got {alpha}")));
        }
        if n == 0 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        let c = 1.0 / (1.0 - alpha * alpha);
        Self::new(DMatrix::from_fn(n, n, |i, j| c * alpha.powi((i as i32 - j as i32).abs())))
    }

    pub fn dim(&self) -> usize {
        self.cov.nrows()
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn precision(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// `x^T C^{-1} x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let v = DVector::from_column_slice(x);
        let y = self.chol.l_dirty().solve_lower_triangular(&v).expect("factor is non-singular");
        y.norm_squared()
    }

    /// `-ln f(x)`.
    pub fn neg_log_density(&self, x: &[f64]) -> f64 {
        let n = self.dim() as f64;
        0.5 * (n * (2.0 * std::f64::consts::PI).ln() + self.log_det + self.quad_form(x))
    }

    /// `L z` for a standard normal vector `z`.
    pub fn sample(&self, rng: &mut impl rand::Rng) -> Vec<f64> {
        let n = self.dim();
        let z = DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)));
        let l = self.chol.l();
        (l * z).iter().copied().collect()
    }
}

/// Tridiagonal AR(1) precision: diagonal `(1, 1 + alpha^2, .., 1 + alpha^2, 1)`,
/// off-diagonal `-alpha`; `[1 - alpha^2]` when `n = 1`.
pub fn ar1_precision(alpha: f64, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            if n == 1 {
                1.0 - alpha * alpha
            } else if i == 0 || i == n - 1 {
                1.0
            } else {
                1.0 + alpha * alpha
            }
        } else if i.abs_diff(j) == 1 {
            -alpha
        } else {
            0.0
        }
    })
}

pub fn gaussian_entropy(model: &GaussianModel) -> f64 {
    model.dim() as f64 * normal_entropy() + 0.5 * model.log_det
}

/// WE for the constant weight `alpha n`.
pub fn we_constant_wf(model: &GaussianModel, alpha: f64) -> f64 {
    alpha * model.dim() as f64 * gaussian_entropy(model)
}

/// `(H - n/2) E[phi] + 1/2 E[q phi]` from the two moments of the weight.
pub fn we_additive_gaussian(model: &GaussianModel, mean_phi: f64, mean_q_phi: f64) -> f64 {
    (gaussian_entropy(model) - 0.5 * model.dim() as f64) * mean_phi + 0.5 * mean_q_phi
}

/// `E[(x^T M x)(x^T A x)] = tr(MC) tr(AC) + 2 tr(MCAC)` for symmetric `M`, `A`.
pub fn wick_quadratic_pair(cov: &DMatrix<f64>, m: &DMatrix<f64>, a: &DMatrix<f64>) -> f64 {
    let mc = m * cov;
    let ac = a * cov;
    mc.trace() * ac.trace() + 2.0 * (mc * ac).trace()
}

fn check_symmetric(a: &DMatrix<f64>, n: usize, what: &str) -> Result<()> {
    if a.shape() != (n, n) {
        return Err(Error::invalid(format!("{what} must be {n}x{n}")));
    }
    let asym = (a - a.transpose()).abs().max();
    if asym > SYMMETRY_TOL * a.abs().max().max(1.0) {
        return Err(Error::invalid(format!("{what} is not symmetric")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticWE {
    pub entropy: f64,
    /// `E[x^T A x] = tr(AC)`.
    pub mean_phi: f64,
    /// `E[q x^T A x] = (n + 2) tr(AC)`.
    pub mean_q_phi: f64,
    pub we: f64,
}

/// WE for `phi(x) = x^T A x`.
pub fn we_quadratic_wf(model: &GaussianModel, a: &DMatrix<f64>) -> Result<QuadraticWE> {
    check_symmetric(a, model.dim(), "A")?;
    let mean_phi = (a * model.covariance()).trace();
    let mean_q_phi = wick_quadratic_pair(model.covariance(), &model.precision(), a);
    Ok(QuadraticWE {
        entropy: gaussian_entropy(model),
        mean_phi,
        mean_q_phi,
        we: we_additive_gaussian(model, mean_phi, mean_q_phi),
    })
}

/// `phi(x) (H - n/2 + q(x)/2)` at a point.
pub fn weighted_information_at(model: &GaussianModel, x: &[f64], phi_x: f64) -> f64 {
    phi_x * model.neg_log_density(x)
}

/// Weight `exp(x^T (C^{-1} - A) t + 1/2 x^T A x)`.
#[derive(Debug, Clone)]
pub struct ExpQuadraticWF {
    a: DMatrix<f64>,
    /// `(C^{-1} - A) t`.
    linear: DVector<f64>,
}

impl ExpQuadraticWF {
    pub fn new(model: &GaussianModel, a: DMatrix<f64>, t: &[f64]) -> Result<Self> {
        let n = model.dim();
        check_symmetric(&a, n, "A")?;
        if t.len() != n {
            return Err(Error::invalid(format!("t must have {n} entries")));
        }
        let m = model.precision() - &a;
        let linear = &m * DVector::from_column_slice(t);
        Ok(Self { a, linear })
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let v = DVector::from_column_slice(x);
        (self.linear.dot(&v) + 0.5 * v.dot(&(&self.a * &v))).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpQuadraticWE {
    pub entropy: f64,
    pub mean_phi: f64,
    pub we: f64,
}

/// Closed-form WE for the exponential-quadratic weight.
pub fn we_exp_quadratic(model: &GaussianModel, a: &DMatrix<f64>, t: &[f64]) -> Result<ExpQuadraticWE> {
    let n = model.dim();
    check_symmetric(a, n, "A")?;
    if t.len() != n {
        return Err(Error::invalid(format!("t must have {n} entries")));
    }
    let prec = model.precision();
    let m = &prec - a;
    let m_chol = Cholesky::new(m.clone())
        .ok_or_else(|| Error::NotPositiveDefinite("C^{-1} - A must be positive definite".into()))?;
    let tv = DVector::from_column_slice(t);
    let log_det_m = 2.0 * m_chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    // det(I - CA) = det(C) det(M).
    let log_det_i_ca = model.log_det() + log_det_m;
    let mean_phi = (0.5 * tv.dot(&(&m * &tv)) - 0.5 * log_det_i_ca).exp();
    // (I - AC)^{-1} = C^{-1} M^{-1}.
    let trace_term = (&prec * m_chol.inverse()).trace();
    let h = gaussian_entropy(model);
    let bracket = h - 0.5 * n as f64 + 0.5 * trace_term + 0.5 * tv.dot(&(&prec * &tv));
    Ok(ExpQuadraticWE {
        entropy: h,
        mean_phi,
        we: mean_phi * bracket,
    })
}

/// WE of the product weight `prod_j phi(x_j)` over an AR(1) block of length
/// `n`, via a Gauss–Legendre discretization of the transfer kernel on
/// `[-x_max, x_max]` with `nodes` points.
pub fn ar1_we_multiplicative(
    alpha: f64,
    phi: impl Fn(f64) -> f64,
    n: usize,
    x_max: f64,
    nodes: usize,
) -> Result<LogValue> {
    let op = KernelOperator::ar1_gaussian(alpha, x_max, nodes, phi)?;
    let pi = op.stationary().expect("AR(1) kernel carries its stationary law").to_vec();
    exact_joint_we_multiplicative(&op, &pi, true, n)
}

/// Normalized combinations whose limits are `h - 1/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateNormalizers {
    /// `(WE - E[q phi]/2) / (n E[phi])`.
    pub mean_normalized: f64,
    /// `(H - n/2) / n`, the value every weight shares.
    pub entropy_normalized: f64,
}

pub fn gaussian_rate_normalizers(
    model: &GaussianModel,
    we: f64,
    mean_phi: f64,
    mean_q_phi: f64,
) -> Result<RateNormalizers> {
    if mean_phi == 0.0 {
        return Err(Error::Precondition("normalizer needs E[phi] != 0".into()));
    }
    let n = model.dim() as f64;
    Ok(RateNormalizers {
        mean_normalized: (we - 0.5 * mean_q_phi) / (n * mean_phi),
        entropy_normalized: (gaussian_entropy(model) - 0.5 * n) / n,
    })
}

/// `(I(x) - q(x) phi(x)/2) / (n phi(x))` at a point.
pub fn pointwise_rate_normalizer(model: &GaussianModel, x: &[f64], phi_x: f64) -> Result<f64> {
    if phi_x == 0.0 {
        return Err(Error::Precondition("pointwise normalizer needs phi(x) != 0".into()));
    }
    let i = weighted_information_at(model, x, phi_x);
    Ok((i - 0.5 * model.quad_form(x) * phi_x) / (model.dim() as f64 * phi_x))
}

/// `I(x)/phi(x) + n/2 - q(x)/2`, equal to `H` at every `x` where `phi(x) != 0`.
pub fn entropy_witness(model: &GaussianModel, x: &[f64], phi_x: f64) -> Result<f64> {
    if phi_x == 0.0 {
        return Err(Error::Precondition("witness needs phi(x) != 0".into()));
    }
    let i = weighted_information_at(model, x, phi_x);
    Ok(i / phi_x + 0.5 * model.dim() as f64 - 0.5 * model.quad_form(x))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MCOracleConfig {
    pub samples: usize,
    pub seed: u64,
    /// Batches used for the standard error; batch `b` draws from stream `b`.
    pub batches: usize,
}

impl Default for MCOracleConfig {
    fn default() -> Self {
        Self {
            samples: 1_000_000,
            seed: 0,
            batches: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    /// Standard error from the spread of batch means.
    pub se: f64,
}

impl McEstimate {
    /// `|value - mean| <= k se`.
    pub fn agrees(&self, value: f64, k: f64) -> bool {
        (value - self.mean).abs() <= k * self.se
    }
}

/// Monte Carlo estimate of `E[g(X)]`, `X ~ N(0, C)`.
pub fn mc_expectation(
    model: &GaussianModel,
    g: impl Fn(&[f64]) -> f64 + Sync,
    cfg: &MCOracleConfig,
) -> Result<McEstimate> {
    if cfg.batches < 2 || cfg.samples < cfg.batches {
        return Err(Error::invalid("need at least two batches and one sample per batch"));
    }
    let per_batch = cfg.samples / cfg.batches;
    let means: Vec<f64> = (0..cfg.batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(b as u64);
            let mut acc = 0.0;
            for _ in 0..per_batch {
                acc += g(&model.sample(&mut rng));
            }
            acc / per_batch as f64
        })
        .collect();
    let k = means.len() as f64;
    let mean = means.iter().sum::<f64>() / k;
    let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (k - 1.0);
    Ok(McEstimate {
        mean,
        se: (var / k).sqrt(),
    })
}

/// Monte Carlo estimate of `E[phi(X) (-ln f(X))]`.
pub fn mc_weighted_entropy(
    model: &GaussianModel,
    phi: impl Fn(&[f64]) -> f64 + Sync,
    cfg: &MCOracleConfig,
) -> Result<McEstimate> {
    mc_expectation(model, |x| phi(x) * model.neg_log_density(x), cfg)
}
