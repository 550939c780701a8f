//! Metric pressure, tilted and twisted laws, the variational audit and the
//! topological entropy of the separation set.
//!
//! For a weighted kernel `W` with stationary law `pi`:
//!
//! ```text
//! Xi_n      = <pi, W^{n-1} phi>                 partition function
//! pbar_n(x) = pi(x_0) prod W(x_{j-1}, x_j) phi(x_{n-1}) / Xi_n
//! ptilde(x,y) = W(x,y) Phi(y) / (mu Phi(x)),  pitilde = Psi Phi
//! h(Q) + L(Q) <= ln mu,  L(Q) = E_Q ln W(X_0, X_1)
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::markov::{entropy_rate, FiniteMarkovModel};
use crate::model::{enumeration_size, for_each_string, xlogx};
use crate::quadrature::trapezoid;
use crate::spectral::{krein_rutman, KernelOperator, KrOptions, KreinRutmanResult};

fn require_stationary(op: &KernelOperator) -> Result<&[f64]> {
    op.stationary()
        .ok_or_else(|| Error::Precondition("kernel has no stationary law".into()))
}

/// `ln Xi_n` for `n = 1..=n_max`, carried in log scale.
pub fn log_partition_series(op: &KernelOperator, n_max: usize) -> Result<Vec<f64>> {
    if n_max == 0 {
        return Err(Error::invalid("string length must be at least 1"));
    }
    let pi = require_stationary(op)?;
    let mut v = op.phi().to_vec();
    let mut log_scale = 0.0;
    let mut out = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        let xi = op.inner(pi, &v);
        out.push(if xi > 0.0 { xi.ln() + log_scale } else { f64::NEG_INFINITY });
        if n < n_max {
            v = op.apply_right(&v);
            let m = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            if m == 0.0 {
                out.resize(n_max, f64::NEG_INFINITY);
                break;
            }
            v.iter_mut().for_each(|x| *x /= m);
            log_scale += m.ln();
        }
    }
    Ok(out)
}

/// `ln Xi_n`.
pub fn log_partition_function(op: &KernelOperator, n: usize) -> Result<f64> {
    Ok(*log_partition_series(op, n)?.last().expect("non-empty"))
}

/// `(1/n) ln Xi_n` for `n = 1..=n_max`.
pub fn pressure_estimate(op: &KernelOperator, n_max: usize) -> Result<Vec<f64>> {
    Ok(log_partition_series(op, n_max)?
        .into_iter()
        .enumerate()
        .map(|(i, l)| l / (i + 1) as f64)
        .collect())
}

fn finite_alphabet(op: &KernelOperator) -> Result<()> {
    if op.node_weights().iter().any(|&w| w != 1.0) {
        return Err(Error::Precondition("operation needs a finite alphabet with counting weights".into()));
    }
    Ok(())
}

/// The tilted law `pbar_n` over all strings, in enumeration order.
pub fn tilted_pmf(op: &KernelOperator, n: usize) -> Result<Vec<f64>> {
    finite_alphabet(op)?;
    if n == 0 {
        return Err(Error::invalid("string length must be at least 1"));
    }
    let pi = require_stationary(op)?;
    let k = op.size();
    let w = op.kernel();
    let phi = op.phi();
    let mut out = Vec::with_capacity(enumeration_size(k, n)?);
    for_each_string(k, n, |_, s| {
        let mut f = pi[s[0]] * phi[s[n - 1]];
        for pair in s.windows(2) {
            f *= w[(pair[0], pair[1])];
        }
        out.push(f);
    })?;
    let total: f64 = out.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroIterate);
    }
    out.iter_mut().for_each(|f| *f /= total);
    Ok(out)
}

/// Chain with transitions `W(x,y) w_y Phi(y) / (mu Phi(x))` on the nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct TwistedChain {
    pub chain: FiniteMarkovModel,
    /// `Psi Phi w` as probability masses.
    pub pi_tilde: Vec<f64>,
    /// Largest `|row sum - 1|` before the chain was built.
    pub row_sum_error: f64,
    /// `max |pitilde ptilde - pitilde|`.
    pub stationarity_residual: f64,
}

pub fn twist(op: &KernelOperator, eigen: &KreinRutmanResult) -> Result<TwistedChain> {
    let n = op.size();
    let (phi_r, psi_l, mu) = (&eigen.phi_right, &eigen.psi_left, eigen.mu);
    if !(mu > 0.0) || phi_r.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Precondition("eigendata must be strictly positive".into()));
    }
    let w = op.node_weights();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|x| {
            (0..n)
                .map(|y| op.kernel()[(x, y)] * w[y] * phi_r[y] / (mu * phi_r[x]))
                .collect()
        })
        .collect();
    let row_sum_error = rows
        .iter()
        .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    let pi_tilde: Vec<f64> = (0..n).map(|x| psi_l[x] * phi_r[x] * w[x]).collect();
    let stationarity_residual = (0..n)
        .map(|y| ((0..n).map(|x| pi_tilde[x] * rows[x][y]).sum::<f64>() - pi_tilde[y]).abs())
        .fold(0.0, f64::max);
    let chain = FiniteMarkovModel::new(rows)?;
    Ok(TwistedChain {
        chain,
        pi_tilde,
        row_sum_error,
        stationarity_residual,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariationalAudit {
    #[serde(rename = "h_Q")]
    pub h_q: f64,
    #[serde(rename = "L_Q")]
    pub l_q: f64,
    /// `ln mu - h_Q - L_Q`.
    pub slack: f64,
    /// False when `Q` charges a transition where `W` vanishes.
    #[serde(skip)]
    pub applicable: bool,
}

pub fn variational_audit(q: &FiniteMarkovModel, op: &KernelOperator, mu: f64) -> Result<VariationalAudit> {
    finite_alphabet(op)?;
    let k = op.size();
    if q.state_count() != k {
        return Err(Error::invalid("candidate chain has the wrong number of states"));
    }
    let pi_q = q.pi();
    let mut l_q = 0.0;
    let mut applicable = true;
    for (x, &px) in pi_q.iter().enumerate() {
        for y in 0..k {
            let mass = px * q.p(x, y);
            if mass == 0.0 {
                continue;
            }
            let w = op.kernel()[(x, y)];
            if w > 0.0 {
                l_q += mass * w.ln();
            } else {
                applicable = false;
            }
        }
    }
    if !applicable {
        l_q = f64::NEG_INFINITY;
    }
    let h_q = entropy_rate(q);
    Ok(VariationalAudit {
        h_q,
        l_q,
        slack: mu.ln() - h_q - l_q,
        applicable,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub mu: f64,
    #[serde(rename = "B0")]
    pub b0: f64,
    pub candidates: Vec<VariationalAudit>,
    pub min_slack: f64,
    /// `|slack|` of the twisted chain, which attains equality.
    pub equality_witness_residual: f64,
}

/// Audit `count` random chains whose rows are Dirichlet draws centred on the
/// twisted chain's rows, with concentrations spread over four decades.
/// Candidate `i` uses stream `i` of the seeded generator.
pub fn randomized_audit(op: &KernelOperator, eigen: &KreinRutmanResult, count: usize, seed: u64) -> Result<AuditReport> {
    finite_alphabet(op)?;
    let twisted = twist(op, eigen)?;
    let witness = variational_audit(&twisted.chain, op, eigen.mu)?;
    let base = twisted.chain.transition().clone();
    let k = op.size();

    let candidates: Vec<VariationalAudit> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let log_conc = Uniform::new(-1.0f64, 3.0).expect("valid range").sample(&mut rng);
            let conc = 10f64.powf(log_conc);
            for _ in 0..64 {
                let rows: Vec<Vec<f64>> = (0..k)
                    .map(|x| {
                        let mut row: Vec<f64> = (0..k)
                            .map(|y| {
                                let p = base[(x, y)];
                                if p > 0.0 {
                                    Gamma::new(conc * p, 1.0).expect("positive shape").sample(&mut rng)
                                } else {
                                    0.0
                                }
                            })
                            .collect();
                        let s: f64 = row.iter().sum();
                        if s > 0.0 {
                            row.iter_mut().for_each(|v| *v /= s);
                        }
                        row
                    })
                    .collect();
                if let Ok(q) = FiniteMarkovModel::new(rows) {
                    return variational_audit(&q, op, eigen.mu);
                }
            }
            Err(Error::Precondition("could not draw an irreducible candidate".into()))
        })
        .collect::<Result<_>>()?;
    let min_slack = candidates.iter().map(|c| c.slack).fold(f64::INFINITY, f64::min);
    Ok(AuditReport {
        mu: eigen.mu,
        b0: eigen.mu.ln(),
        candidates,
        min_slack,
        equality_witness_residual: witness.slack.abs(),
    })
}

/// `KL(ptilde_n || pbar_n)` from the closed form
/// `ln Xi_n - (n-1) ln mu + E[ln Psi - ln pi] + E[ln Phi - ln phi]`,
/// expectations under `pitilde`.
pub fn kl_twisted_vs_tilted(op: &KernelOperator, eigen: &KreinRutmanResult, n: usize) -> Result<f64> {
    let pi = require_stationary(op)?;
    let ln_xi = log_partition_function(op, n)?;
    let w = op.node_weights();
    let mut boundary = 0.0;
    for x in 0..op.size() {
        let mass = eigen.psi_left[x] * eigen.phi_right[x] * w[x];
        if mass == 0.0 {
            continue;
        }
        boundary += mass
            * ((eigen.psi_left[x] / pi[x]).ln() + (eigen.phi_right[x] / op.phi()[x]).ln());
    }
    Ok(ln_xi - (n - 1) as f64 * eigen.mu.ln() + boundary)
}

/// `KL(q_n || pbar_n)` by enumeration; `+inf` when `q_n` charges a string of
/// zero tilted mass.
pub fn gibbs_gap(q: &FiniteMarkovModel, op: &KernelOperator, n: usize) -> Result<f64> {
    let pbar = tilted_pmf(op, n)?;
    let qn = crate::markov::markov_joint_pmf(q, n, q.pi())?;
    let mut total = 0.0;
    for (a, b) in qn.iter().zip(&pbar) {
        if *a == 0.0 {
            continue;
        }
        if *b == 0.0 {
            return Ok(f64::INFINITY);
        }
        total += xlogx(*a) - a * b.ln();
    }
    Ok(total)
}

/// Grid and weight for the separation-set examples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeparationDomain {
    pub lo: f64,
    pub hi: f64,
    /// Grid step; should divide `a` for the indicator to be resolved exactly.
    pub step: f64,
}

impl SeparationDomain {
    /// `[-8, 8]` with step `1/64`.
    pub fn standard() -> Self {
        Self {
            lo: -8.0,
            hi: 8.0,
            step: 1.0 / 64.0,
        }
    }
}

fn separation(d: f64, a: f64, eps: f64) -> f64 {
    if d > a + eps {
        1.0
    } else if d >= a - eps {
        if a > 0.0 {
            0.5
        } else {
            1.0
        }
    } else {
        0.0
    }
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Kernel `e^{chi(x)} 1(|x - y| > a)` on the domain with Lebesgue node weights.
pub fn separation_operator(chi: impl Fn(f64) -> f64, a: f64, domain: &SeparationDomain) -> Result<KernelOperator> {
    if !(a >= 0.0 && a.is_finite()) {
        return Err(Error::invalid(format!("separation must be non-negative, got {a}")));
    }
    let rule = trapezoid(domain.lo, domain.hi, domain.step)?;
    let x = &rule.nodes;
    let n = x.len();
    let eps = 1e-9 * domain.step;
    let ind = nalgebra::DMatrix::from_fn(n, n, |u, v| separation((x[u] - x[v]).abs(), a, eps));
    let weight = x.iter().map(|&u| chi(u).exp()).collect();
    KernelOperator::from_parts(rule.nodes.clone(), rule.weights, weight, ind, None)
}

/// Topological pressure `ln mu` of the kernel `e^{chi(x)} 1(|x - y| > a)`.
pub fn topological_pressure(
    chi: impl Fn(f64) -> f64,
    a: f64,
    domain: &SeparationDomain,
    opts: &KrOptions,
) -> Result<f64> {
    let op = separation_operator(chi, a, domain)?;
    Ok(krein_rutman(&op, opts)?.mu.ln())
}

/// Topological entropy of the separation set under the standard normal
/// reference measure: `ln mu` of `W(x,y) = g(x) 1(|x - y| > a)`.
pub fn topological_entropy(a: f64, domain: &SeparationDomain, opts: &KrOptions) -> Result<f64> {
    topological_pressure(|x| std_normal_pdf(x).ln(), a, domain, opts)
}

/// `ln nu^n(A_n)` for `n = 1..=n_max` by the recursion
/// `v_1 = 1`, `v_{m+1}(y) = int v_m(x) g(x) 1(|x - y| > a) dx`,
/// `nu^m(A_m) = int v_m g`.
pub fn separation_volume_series(a: f64, domain: &SeparationDomain, n_max: usize) -> Result<Vec<f64>> {
    if n_max == 0 {
        return Err(Error::invalid("string length must be at least 1"));
    }
    let op = separation_operator(|x| std_normal_pdf(x).ln(), a, domain)?;
    let g = op.phi().to_vec();
    let mut v = vec![1.0; op.size()];
    let mut log_scale = 0.0;
    let mut out = Vec::with_capacity(n_max);
    for m in 1..=n_max {
        let vol = op.inner(&v, &g);
        out.push(vol.ln() + log_scale);
        if m < n_max {
            // (v g) pushed through the indicator: the left action of the kernel.
            v = op.apply_left(&v);
            let s = v.iter().fold(0.0f64, |s, x| s.max(*x));
            if s == 0.0 {
                out.resize(n_max, f64::NEG_INFINITY);
                break;
            }
            v.iter_mut().for_each(|x| *x /= s);
            log_scale += s.ln();
        }
    }
    Ok(out)
}

/// `(1/n) ln nu^n(A_n)`.
pub fn topological_entropy_direct(a: f64, domain: &SeparationDomain, n: usize) -> Result<f64> {
    Ok(separation_volume_series(a, domain, n)?.last().expect("non-empty") / n as f64)
}

/// One-step growth `ln(nu^{n+1}(A) / nu^n(A))`.
pub fn topological_growth_rate(a: f64, domain: &SeparationDomain, n: usize) -> Result<f64> {
    let s = separation_volume_series(a, domain, n + 1)?;
    Ok(s[n] - s[n - 1])
}
