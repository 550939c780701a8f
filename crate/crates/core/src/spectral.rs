//! Weighted transfer operators `W(u,v) = phi(u) p(v|u)` and their Perron data.
//!
//! An operator lives on a set of nodes with positive node weights `w`
//! (counting weights for finite alphabets, quadrature weights for
//! discretized continuous kernels):
//!
//! ```text
//! (W f)(u)   = sum_v W(u,v) w_v f(v)
//! (g W^T)(v) = sum_u g(u) w_u W(u,v)
//! <f, g>     = sum_u w_u f(u) g(u)
//! ```
//!
//! [`krein_rutman`] returns the principal eigenvalue `mu` with right and left
//! eigenfunctions normalized so that `<Psi, Phi> = 1`. The multiplicative
//! rates are `B0 = ln mu` and
//!
//! ```text
//! B1 = -(1/mu^2) <Psi, phi> <Phi, pi> sum_{x,y} Psi(x) G(x,y) Phi(y),
//! G(x,y) = phi(x) p(y|x) ln p(y|x).
//! ```

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::markov::{stationary_distribution, FiniteMarkovModel, Initial};
use crate::model::{check_finite, check_nonnegative, xlogx};
use crate::quadrature::gauss_legendre;

#[derive(Debug, Clone, PartialEq)]
pub struct KernelOperator {
    nodes: Vec<f64>,
    node_weights: Vec<f64>,
    phi: Vec<f64>,
    transition: DMatrix<f64>,
    kernel: DMatrix<f64>,
    stationary: Option<Vec<f64>>,
}

impl KernelOperator {
    /// General constructor. `transition[(u, v)]` is `p(v|u)` (a density with
    /// respect to the node weights); `stationary`, when known, is the
    /// stationary density at the nodes.
    pub fn from_parts(
        nodes: Vec<f64>,
        node_weights: Vec<f64>,
        phi: Vec<f64>,
        transition: DMatrix<f64>,
        stationary: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n = nodes.len();
        if n == 0 {
            return Err(Error::invalid("kernel needs at least one node"));
        }
        if node_weights.len() != n || phi.len() != n || transition.shape() != (n, n) {
            return Err(Error::invalid("kernel parts have inconsistent sizes"));
        }
        if let Some(i) = node_weights.iter().position(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::invalid(format!("node weight {i} is not positive")));
        }
        check_finite(&phi, "phi")?;
        check_nonnegative(&phi)?;
        if transition.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
            return Err(Error::invalid("transition values must be finite and non-negative"));
        }
        if let Some(s) = &stationary {
            if s.len() != n {
                return Err(Error::invalid("stationary law has the wrong size"));
            }
            check_finite(s, "stationary law")?;
        }
        let kernel = DMatrix::from_fn(n, n, |u, v| phi[u] * transition[(u, v)]);
        Ok(Self {
            nodes,
            node_weights,
            phi,
            transition,
            kernel,
            stationary,
        })
    }

    /// Finite chain with counting weights and its stationary law.
    pub fn from_markov(model: &FiniteMarkovModel, phi: &[f64]) -> Result<Self> {
        let k = model.state_count();
        if phi.len() != k {
            return Err(Error::invalid(format!("weight has {} entries for {k} states", phi.len())));
        }
        Self::from_parts(
            (0..k).map(|i| i as f64).collect(),
            vec![1.0; k],
            phi.to_vec(),
            model.transition().clone(),
            Some(model.pi().to_vec()),
        )
    }

    /// Chain on `{0..=n}` with `p(y|x) = (1 - e^{-(x+1)}) e^{-(x+1) y}` cut at `n`.
    ///
    /// Rows lose the tail mass `e^{-(x+1)(n+1)}`. The stationary law is that
    /// of the row-renormalized truncated chain.
    pub fn geometric_chain(n: usize, phi: impl Fn(f64) -> f64) -> Result<Self> {
        let k = n + 1;
        let p = |x: usize, y: usize| {
            let r = (x + 1) as f64;
            (1.0 - (-r).exp()) * (-r * y as f64).exp()
        };
        let transition = DMatrix::from_fn(k, k, p);
        let mut normalized = transition.clone();
        for x in 0..k {
            let s: f64 = normalized.row(x).sum();
            normalized.row_mut(x).iter_mut().for_each(|v| *v /= s);
        }
        let pi = stationary_distribution(&normalized)?;
        let nodes: Vec<f64> = (0..k).map(|i| i as f64).collect();
        let phi = nodes.iter().map(|&x| phi(x)).collect();
        Self::from_parts(nodes, vec![1.0; k], phi, transition, Some(pi))
    }

    /// Continuous chain on `[0, x_max]` with `p(y|x) = (x+1) e^{-(x+1) y}`,
    /// stationary density proportional to `e^{-x}/(x+1)`.
    pub fn exponential_chain(x_max: f64, nodes: usize, phi: impl Fn(f64) -> f64) -> Result<Self> {
        let rule = gauss_legendre(nodes, 0.0, x_max)?;
        let x = &rule.nodes;
        let transition = DMatrix::from_fn(nodes, nodes, |u, v| (x[u] + 1.0) * (-(x[u] + 1.0) * x[v]).exp());
        let pi = normalized_on(&rule.weights, x.iter().map(|&u| (-u).exp() / (u + 1.0)).collect());
        let phi = x.iter().map(|&u| phi(u)).collect();
        Self::from_parts(rule.nodes.clone(), rule.weights, phi, transition, Some(pi))
    }

    /// AR(1) transition `N(alpha u, 1)` on `[-x_max, x_max]`, stationary law
    /// `N(0, 1/(1 - alpha^2))`.
    pub fn ar1_gaussian(alpha: f64, x_max: f64, nodes: usize, phi: impl Fn(f64) -> f64) -> Result<Self> {
        if !(alpha.abs() < 1.0) {
            return Err(Error::invalid(format!("AR(1) coefficient must satisfy |alpha| < 1, got {alpha}")));
        }
        let rule = gauss_legendre(nodes, -x_max, x_max)?;
        let x = &rule.nodes;
        let transition = DMatrix::from_fn(nodes, nodes, |u, v| std_normal_pdf(x[v] - alpha * x[u]));
        let var = 1.0 / (1.0 - alpha * alpha);
        let pi = normalized_on(&rule.weights, x.iter().map(|&u| (-u * u / (2.0 * var)).exp()).collect());
        let phi = x.iter().map(|&u| phi(u)).collect();
        Self::from_parts(rule.nodes.clone(), rule.weights, phi, transition, Some(pi))
    }

    pub fn size(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn node_weights(&self) -> &[f64] {
        &self.node_weights
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    /// `W(u,v)` at the nodes.
    pub fn kernel(&self) -> &DMatrix<f64> {
        &self.kernel
    }

    pub fn stationary(&self) -> Option<&[f64]> {
        self.stationary.as_deref()
    }

    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        self.node_weights.iter().zip(f).zip(g).map(|((w, a), b)| w * a * b).sum()
    }

    /// `(W f)(u)`.
    pub fn apply_right(&self, f: &[f64]) -> Vec<f64> {
        let n = self.size();
        let wf: Vec<f64> = (0..n).map(|v| self.node_weights[v] * f[v]).collect();
        (0..n)
            .map(|u| (0..n).map(|v| self.kernel[(u, v)] * wf[v]).sum())
            .collect()
    }

    /// `(g W^T)(v)`.
    pub fn apply_left(&self, g: &[f64]) -> Vec<f64> {
        let n = self.size();
        let wg: Vec<f64> = (0..n).map(|u| self.node_weights[u] * g[u]).collect();
        (0..n)
            .map(|v| (0..n).map(|u| wg[u] * self.kernel[(u, v)]).sum())
            .collect()
    }

    /// Matrix of `f -> W f` in node coordinates, `W diag(w)`.
    pub fn right_matrix(&self) -> DMatrix<f64> {
        let mut m = self.kernel.clone();
        for (v, &w) in self.node_weights.iter().enumerate() {
            m.column_mut(v).iter_mut().for_each(|x| *x *= w);
        }
        m
    }

    /// `G(x,y) = phi(x) p(y|x) ln p(y|x)`.
    pub fn log_kernel(&self) -> DMatrix<f64> {
        let n = self.size();
        DMatrix::from_fn(n, n, |u, v| self.phi[u] * xlogx(self.transition[(u, v)]))
    }

    /// `sum_{x,y} w_x w_y f(x) M(x,y) g(y)`.
    fn bilinear(&self, f: &[f64], m: &DMatrix<f64>, g: &[f64]) -> f64 {
        let n = self.size();
        (0..n)
            .map(|u| {
                let row: f64 = (0..n).map(|v| m[(u, v)] * self.node_weights[v] * g[v]).sum();
                self.node_weights[u] * f[u] * row
            })
            .sum()
    }
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn normalized_on(weights: &[f64], mut f: Vec<f64>) -> Vec<f64> {
    let total: f64 = weights.iter().zip(&f).map(|(w, v)| w * v).sum();
    f.iter_mut().for_each(|v| *v /= total);
    f
}

/// Smallest `k` such that the `(k+1)`-step kernel is strictly positive at
/// every node pair, searching `k <= k_max`.
pub fn check_doeblin(op: &KernelOperator, k_max: usize) -> Option<usize> {
    let n = op.size();
    let words = n.div_ceil(64);
    let positive = |bits: &[u64]| (0..n).all(|v| bits[v / 64] >> (v % 64) & 1 == 1);
    let base: Vec<Vec<u64>> = (0..n)
        .map(|u| {
            let mut row = vec![0u64; words];
            for v in 0..n {
                if op.kernel[(u, v)] > 0.0 {
                    row[v / 64] |= 1 << (v % 64);
                }
            }
            row
        })
        .collect();
    let mut pattern = base.clone();
    for k in 0..=k_max {
        if pattern.iter().all(|row| positive(row)) {
            return Some(k);
        }
        if k == k_max {
            break;
        }
        // Row u of the next pattern is the union of base rows reachable in one step.
        let next: Vec<Vec<u64>> = pattern
            .iter()
            .map(|row| {
                let mut out = vec![0u64; words];
                for w in 0..n {
                    if row[w / 64] >> (w % 64) & 1 == 1 {
                        out.iter_mut().zip(&base[w]).for_each(|(o, b)| *o |= b);
                    }
                }
                out
            })
            .collect();
        if next == pattern {
            return None;
        }
        pattern = next;
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HSReport {
    /// `sum_{x,y} w_x w_y W(x,y) W(y,x)`.
    pub hs_value: f64,
    pub finite: bool,
}

pub fn hilbert_schmidt_check(op: &KernelOperator) -> HSReport {
    let n = op.size();
    let w = &op.node_weights;
    let mut total = 0.0;
    for u in 0..n {
        for v in 0..n {
            total += w[u] * w[v] * op.kernel[(u, v)] * op.kernel[(v, u)];
        }
    }
    HSReport {
        hs_value: total,
        finite: total.is_finite(),
    }
}

/// Hilbert–Schmidt value along a refinement sequence. The last report is
/// flagged non-finite when the values keep growing by more than `growth`
/// per level instead of settling.
pub fn hilbert_schmidt_refinement(
    build: impl Fn(usize) -> Result<KernelOperator>,
    sizes: &[usize],
    growth: f64,
) -> Result<Vec<HSReport>> {
    let mut reports: Vec<HSReport> = Vec::with_capacity(sizes.len());
    for &s in sizes {
        reports.push(hilbert_schmidt_check(&build(s)?));
    }
    let diverging = reports.len() >= 3
        && reports
            .windows(2)
            .all(|w| w[1].hs_value > growth * w[0].hs_value);
    if diverging {
        if let Some(last) = reports.last_mut() {
            last.finite = false;
        }
    }
    Ok(reports)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KrOptions {
    /// Relative tolerance on successive eigenvalue estimates and iterates.
    pub tol: f64,
    pub max_iter: usize,
    /// Search bound for [`check_doeblin`].
    pub doeblin_k_max: usize,
}

impl Default for KrOptions {
    fn default() -> Self {
        Self {
            tol: 1e-13,
            max_iter: 200_000,
            doeblin_k_max: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KreinRutmanResult {
    pub mu: f64,
    /// Right eigenfunction `Phi`, `W Phi = mu Phi`, unit norm.
    pub phi_right: Vec<f64>,
    /// Left eigenfunction `Psi`, `Psi W^T = mu Psi`, `<Psi, Phi> = 1`.
    pub psi_left: Vec<f64>,
    /// Empirical spectral gap from the contraction of iterate differences.
    /// An estimate only, not a certified bound.
    pub gap_estimate: f64,
    pub residual_right: f64,
    pub residual_left: f64,
    pub iterations: usize,
    pub doeblin_k: usize,
}

struct PowerOutcome {
    vector: Vec<f64>,
    contraction: f64,
    iterations: usize,
}

fn power_iterate(
    op: &KernelOperator,
    apply: impl Fn(&[f64]) -> Vec<f64>,
    opts: &KrOptions,
) -> Result<PowerOutcome> {
    let n = op.size();
    let mut f = vec![1.0; n];
    let mass = op.inner(&f, &vec![1.0; n]);
    f.iter_mut().for_each(|v| *v /= mass);
    let ones = vec![1.0; n];
    let mut prev_mu = f64::NAN;
    let mut prev_diff: Option<f64> = None;
    let mut contraction = 0.0;
    let mut last_change = f64::INFINITY;
    for it in 1..=opts.max_iter {
        let mut g = apply(&f);
        let mu = op.inner(&g, &ones);
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(Error::ZeroIterate);
        }
        g.iter_mut().for_each(|v| *v /= mu);
        let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let diff = g.iter().zip(&f).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / scale;
        if let Some(pd) = prev_diff {
            if pd > 1e-8 && diff > 0.0 {
                contraction = diff / pd;
            }
        }
        prev_diff = Some(diff);
        f = g;
        last_change = (mu - prev_mu).abs() / mu;
        if last_change <= opts.tol && diff <= 10.0 * opts.tol {
            return Ok(PowerOutcome {
                vector: f,
                contraction,
                iterations: it,
            });
        }
        prev_mu = mu;
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iter,
        last_change,
    })
}

/// Principal eigenvalue and eigenfunctions by power iteration on `W` and `W^T`.
pub fn krein_rutman(op: &KernelOperator, opts: &KrOptions) -> Result<KreinRutmanResult> {
    let doeblin_k = check_doeblin(op, opts.doeblin_k_max).ok_or_else(|| {
        Error::DoeblinFailure(format!(
            "no iterate of order <= {} is strictly positive",
            opts.doeblin_k_max + 1
        ))
    })?;
    let right = power_iterate(op, |f| op.apply_right(f), opts)?;
    let left = power_iterate(op, |g| op.apply_left(g), opts)?;

    let mut phi = right.vector;
    let norm = op.inner(&phi, &phi).sqrt();
    phi.iter_mut().for_each(|v| *v /= norm);
    let mut psi = left.vector;
    let pairing = op.inner(&psi, &phi);
    psi.iter_mut().for_each(|v| *v /= pairing);

    let w_phi = op.apply_right(&phi);
    let mu = op.inner(&psi, &w_phi);
    let psi_w = op.apply_left(&psi);
    let residual = |a: &[f64], b: &[f64]| a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - mu * y).abs()));
    let contraction = right.contraction.max(left.contraction).clamp(0.0, 1.0);
    Ok(KreinRutmanResult {
        mu,
        residual_right: residual(&w_phi, &phi),
        residual_left: residual(&psi_w, &psi),
        phi_right: phi,
        psi_left: psi,
        gap_estimate: (1.0 - contraction).max(f64::EPSILON),
        iterations: right.iterations.max(left.iterations),
        doeblin_k,
    })
}

/// Largest singular value of `W` as an operator on `L2(w)`.
pub fn operator_norm(op: &KernelOperator) -> f64 {
    let n = op.size();
    let sw: Vec<f64> = op.node_weights.iter().map(|w| w.sqrt()).collect();
    let b = DMatrix::from_fn(n, n, |u, v| sw[u] * op.kernel[(u, v)] * sw[v]);
    let bt = b.transpose();
    let mut x = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut sigma2 = 0.0;
    for _ in 0..10_000 {
        let y = &bt * (&b * &x);
        let norm = y.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let done = (norm - sigma2).abs() <= 1e-14 * norm;
        sigma2 = norm;
        x = y / norm;
        if done {
            break;
        }
    }
    sigma2.sqrt()
}

/// Which validity conditions were checked for the multiplicative rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub doeblin_k: usize,
    pub hilbert_schmidt: HSReport,
    /// `sup W` finite on the nodes.
    pub kernel_bounded: bool,
    /// `<phi, phi>` finite.
    pub weight_square_integrable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimaryMultiplicativeRate {
    pub b0: f64,
    pub mu: f64,
    /// Reported next to `mu`; the two agree only for normal kernels.
    pub operator_norm: f64,
    pub conditions: ConditionReport,
    pub eigen: KreinRutmanResult,
}

/// `B0 = ln mu`.
pub fn primary_rate_multiplicative(op: &KernelOperator, opts: &KrOptions) -> Result<PrimaryMultiplicativeRate> {
    let eigen = krein_rutman(op, opts)?;
    let hs = hilbert_schmidt_check(op);
    let conditions = ConditionReport {
        doeblin_k: eigen.doeblin_k,
        hilbert_schmidt: hs,
        kernel_bounded: op.kernel.iter().all(|v| v.is_finite()),
        weight_square_integrable: op.inner(&op.phi, &op.phi).is_finite(),
    };
    Ok(PrimaryMultiplicativeRate {
        b0: eigen.mu.ln(),
        mu: eigen.mu,
        operator_norm: operator_norm(op),
        conditions,
        eigen,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecondaryMultiplicativeRate {
    /// `Psi` on the first argument of `G`, `Phi` on the second.
    pub b1: f64,
    /// The opposite placement, `Phi(x) G(x,y) Psi(y)`, kept for comparison.
    pub b1_swapped: f64,
}

pub fn secondary_rate_multiplicative(
    op: &KernelOperator,
    eigen: &KreinRutmanResult,
) -> Result<SecondaryMultiplicativeRate> {
    let pi = op
        .stationary()
        .ok_or_else(|| Error::Precondition("kernel has no stationary law".into()))?;
    let g = op.log_kernel();
    let (phi_r, psi_l) = (&eigen.phi_right, &eigen.psi_left);
    let pre = -op.inner(psi_l, &op.phi) * op.inner(phi_r, pi) / (eigen.mu * eigen.mu);
    Ok(SecondaryMultiplicativeRate {
        b1: pre * op.bilinear(psi_l, &g, phi_r),
        b1_swapped: pre * op.bilinear(phi_r, &g, psi_l),
    })
}

/// A real number carried as `sign * exp(ln_abs)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogValue {
    pub ln_abs: f64,
    pub sign: f64,
}

impl LogValue {
    pub fn value(&self) -> f64 {
        self.sign * self.ln_abs.exp()
    }
}

/// Vector with a separate log scale: `exp(log_scale) * v`.
struct Scaled {
    v: Vec<f64>,
    log_scale: f64,
}

impl Scaled {
    fn new(mut v: Vec<f64>, mut log_scale: f64) -> Self {
        let m = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if m > 0.0 && m.is_finite() {
            v.iter_mut().for_each(|x| *x /= m);
            log_scale += m.ln();
        }
        Self { v, log_scale }
    }
}

/// Exact WE of the product weight `prod_j phi(x_j)` on strings of length `n`.
///
/// `lambda` is the initial density at the nodes. With `boundary` the term
/// `-<lambda ln lambda, W^{n-1} phi>` is included; the bulk is
/// `-sum_{l=1}^{n-1} <lambda W^{T(l-1)}, G W^{n-1-l} phi>`. Iterates are
/// rescaled every step so long strings do not overflow.
pub fn exact_joint_we_multiplicative(
    op: &KernelOperator,
    lambda: &[f64],
    boundary: bool,
    n: usize,
) -> Result<LogValue> {
    if n == 0 {
        return Err(Error::invalid("string length must be at least 1"));
    }
    if lambda.len() != op.size() {
        return Err(Error::invalid("initial law has the wrong size"));
    }
    check_finite(lambda, "initial law")?;
    check_nonnegative(lambda)?;
    let g = op.log_kernel();

    let mut tails = Vec::with_capacity(n);
    tails.push(Scaled::new(op.phi.clone(), 0.0));
    for m in 1..n {
        let prev = &tails[m - 1];
        tails.push(Scaled::new(op.apply_right(&prev.v), prev.log_scale));
    }

    let mut terms: Vec<(f64, f64)> = Vec::with_capacity(n);
    if boundary {
        let ll: Vec<f64> = lambda.iter().map(|&l| xlogx(l)).collect();
        let t = &tails[n - 1];
        terms.push((-op.inner(&ll, &t.v), t.log_scale));
    }
    let mut head = Scaled::new(lambda.to_vec(), 0.0);
    for l in 1..n {
        let t = &tails[n - 1 - l];
        terms.push((-op.bilinear(&head.v, &g, &t.v), head.log_scale + t.log_scale));
        if l + 1 < n {
            head = Scaled::new(op.apply_left(&head.v), head.log_scale);
        }
    }

    let top = terms
        .iter()
        .filter(|(v, _)| *v != 0.0)
        .map(|&(_, s)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return Ok(LogValue {
            ln_abs: f64::NEG_INFINITY,
            sign: 0.0,
        });
    }
    let total: f64 = terms.iter().map(|&(v, s)| v * (s - top).exp()).sum();
    Ok(LogValue {
        ln_abs: total.abs().ln() + top,
        sign: total.signum() * if total == 0.0 { 0.0 } else { 1.0 },
    })
}

/// [`exact_joint_we_multiplicative`] for a finite chain.
pub fn exact_joint_we_multiplicative_chain(
    model: &FiniteMarkovModel,
    phi: &[f64],
    n: usize,
    initial: &Initial,
) -> Result<LogValue> {
    let op = KernelOperator::from_markov(model, phi)?;
    let (lambda, boundary) = match initial {
        Initial::Stationary => (model.pi().to_vec(), true),
        Initial::Law(l) => (l.clone(), true),
        Initial::Conditional(l) => (l.clone(), false),
    };
    let lambda = crate::model::validate_pmf(&lambda, "initial law")?;
    exact_joint_we_multiplicative(&op, &lambda, boundary, n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Refined {
    pub op: KernelOperator,
    pub eigen: KreinRutmanResult,
    pub size: usize,
    /// `|mu_last - mu_previous|`.
    pub mu_change: f64,
}

/// Double the discretization size until `mu` moves by less than `tol`.
pub fn refine_until_stable(
    build: impl Fn(usize) -> Result<KernelOperator>,
    start: usize,
    tol: f64,
    max_doublings: usize,
    opts: &KrOptions,
) -> Result<Refined> {
    let mut size = start.max(1);
    let mut op = build(size)?;
    let mut eigen = krein_rutman(&op, opts)?;
    for _ in 0..max_doublings {
        let next_size = size * 2;
        let next_op = build(next_size)?;
        let next = krein_rutman(&next_op, opts)?;
        let change = (next.mu - eigen.mu).abs();
        size = next_size;
        op = next_op;
        eigen = next;
        if change < tol {
            return Ok(Refined {
                op,
                eigen,
                size,
                mu_change: change,
            });
        }
    }
    Err(Error::QuadratureNonConvergence(format!(
        "principal eigenvalue not stable to {tol:e} after {max_doublings} doublings (size {size})"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::iid::iid_multiplicative_we;
    use crate::markov::markov_joint_pmf;
    use crate::model::{joint_weighted_entropy_enumerated, DiscreteModel, JointWF};
    use proptest::prelude::*;

    fn chain(rows: Vec<Vec<f64>>) -> FiniteMarkovModel {
        FiniteMarkovModel::new(rows).unwrap()
    }

    fn separation(a: f64, h: f64) -> KernelOperator {
        let domain = crate::pressure::SeparationDomain { lo: -8.0, hi: 8.0, step: h };
        crate::pressure::separation_operator(|x| -0.5 * x * x - 0.5 * (2.0 * std::f64::consts::PI).ln(), a, &domain)
            .unwrap()
    }

    fn dense_radius(op: &KernelOperator) -> f64 {
        op.right_matrix()
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    fn two_state() -> KernelOperator {
        KernelOperator::from_markov(&chain(vec![vec![0.5, 0.5]; 2]), &[1.0, 2.0]).unwrap()
    }

    #[test]
    fn kernel_construction() {
        let p = chain(vec![vec![0.2, 0.8], vec![0.6, 0.4]]);
        let op = KernelOperator::from_markov(&p, &[1.0, 1.0]).unwrap();
        assert_eq!(op.kernel(), p.transition());
        for u in 0..2 {
            assert!((op.kernel().row(u).sum() - 1.0).abs() < 1e-12);
        }
        let w = two_state();
        assert_eq!(w.kernel(), &DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 1.0, 1.0]));
        assert!(KernelOperator::from_markov(&p, &[1.0, -1.0]).is_err());
    }

    #[test]
    fn geometric_chain_entries() {
        let phi = |x: f64| (-x / 2.0).exp();
        let op = KernelOperator::geometric_chain(10, phi).unwrap();
        let (x, y) = (2usize, 3usize);
        let expected = phi(2.0) * (1.0 - (-3f64).exp()) * (-9f64).exp();
        assert!((op.kernel()[(x, y)] - expected).abs() < 1e-15);
        let pi = op.stationary().unwrap();
        assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn doeblin_examples() {
        assert_eq!(check_doeblin(&two_state(), 5), Some(0));
        let flip = KernelOperator::from_markov(&chain(vec![vec![0.0, 1.0], vec![1.0, 0.0]]), &[1.0, 1.0]).unwrap();
        assert_eq!(check_doeblin(&flip, 100), None);
        let lazy = KernelOperator::from_markov(&chain(vec![vec![0.0, 1.0], vec![0.5, 0.5]]), &[1.0, 1.0]).unwrap();
        assert_eq!(check_doeblin(&lazy, 5), Some(1));
        let topo = separation(1.0, 0.25);
        assert_eq!(check_doeblin(&topo, 5), Some(1));
    }

    #[test]
    fn hilbert_schmidt_examples() {
        let op = KernelOperator::from_markov(&chain(vec![vec![0.5, 0.5]; 2]), &[1.0, 1.0]).unwrap();
        assert!((hilbert_schmidt_check(&op).hs_value - 1.0).abs() < 1e-15);
        let zero = KernelOperator::from_markov(&chain(vec![vec![0.5, 0.5]; 2]), &[0.0, 0.0]).unwrap();
        assert_eq!(hilbert_schmidt_check(&zero).hs_value, 0.0);
        let topo = separation(0.5, 1.0 / 16.0);
        let hs = hilbert_schmidt_check(&topo);
        assert!(hs.finite && hs.hs_value < 1.0 && hs.hs_value > 0.0);

        let reports =
            hilbert_schmidt_refinement(|n| KernelOperator::ar1_gaussian(0.5, 8.0, n, |_| 1.0), &[16, 32, 64], 1.5)
                .unwrap();
        assert!(reports.last().unwrap().finite);
    }

    #[test]
    fn krein_rutman_two_state() {
        let r = krein_rutman(&two_state(), &KrOptions::default()).unwrap();
        assert!((r.mu - 1.5).abs() < 1e-13);
        let ratio = r.phi_right[1] / r.phi_right[0];
        assert!((ratio - 2.0).abs() < 1e-12);
        assert!((r.psi_left[0] - r.psi_left[1]).abs() < 1e-12);
        let op = two_state();
        assert!((op.inner(&r.psi_left, &r.phi_right) - 1.0).abs() < 1e-12);
        assert!((primary_rate_multiplicative(&op, &KrOptions::default()).unwrap().b0 - 1.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn stochastic_kernel_has_unit_eigenvalue() {
        let m = chain(vec![vec![0.7, 0.2, 0.1], vec![0.1, 0.6, 0.3], vec![0.3, 0.3, 0.4]]);
        let c = 2.5;
        let op = KernelOperator::from_markov(&m, &[c; 3]).unwrap();
        let r = krein_rutman(&op, &KrOptions::default()).unwrap();
        assert!((r.mu - c).abs() < 1e-12);
        let phi0 = r.phi_right[0];
        assert!(r.phi_right.iter().all(|v| (v - phi0).abs() < 1e-12));
        let scale = r.psi_left[0] / m.pi()[0];
        for (a, b) in r.psi_left.iter().zip(m.pi()) {
            assert!((a - scale * b).abs() < 1e-12);
        }
    }

    #[test]
    fn iid_rows_reduce_to_mean_weight() {
        let p = vec![0.2, 0.5, 0.3];
        let phi = [1.5, 0.4, 2.0];
        let op = KernelOperator::from_markov(&chain(vec![p.clone(); 3]), &phi).unwrap();
        let r = primary_rate_multiplicative(&op, &KrOptions::default()).unwrap();
        let mean: f64 = p.iter().zip(&phi).map(|(a, b)| a * b).sum();
        assert!((r.b0 - mean.ln()).abs() < 1e-12);
        assert!((r.mu - dense_radius(&op)).abs() < 1e-10);
    }

    #[test]
    fn periodic_kernel_is_rejected() {
        let flip = KernelOperator::from_markov(&chain(vec![vec![0.0, 1.0], vec![1.0, 0.0]]), &[1.0, 1.0]).unwrap();
        assert!(matches!(krein_rutman(&flip, &KrOptions::default()), Err(Error::DoeblinFailure(_))));
    }

    #[test]
    fn unweighted_we_is_joint_entropy() {
        let m = chain(vec![vec![0.7, 0.2, 0.1], vec![0.1, 0.6, 0.3], vec![0.3, 0.3, 0.4]]);
        for n in 1..=6 {
            let joint = markov_joint_pmf(&m, n, m.pi()).unwrap();
            let h = crate::model::standard_entropy(&joint);
            let we = exact_joint_we_multiplicative_chain(&m, &[1.0; 3], n, &Initial::Stationary)
                .unwrap()
                .value();
            assert!((we - h).abs() < 1e-12);
        }
    }

    #[test]
    fn multiplicative_we_matches_enumeration() {
        let m = chain(vec![vec![0.7, 0.2, 0.1], vec![0.1, 0.6, 0.3], vec![0.3, 0.3, 0.4]]);
        let phi = vec![0.5, 1.7, 1.1];
        let lambda = vec![0.2, 0.0, 0.8];
        for n in 1..=8 {
            for (init, start) in [
                (Initial::Stationary, m.pi().to_vec()),
                (Initial::Law(lambda.clone()), lambda.clone()),
            ] {
                let joint = markov_joint_pmf(&m, n, &start).unwrap();
                let brute = joint_weighted_entropy_enumerated(&joint, 3, n, &JointWF::Multiplicative(phi.clone()))
                    .unwrap();
                let fast = exact_joint_we_multiplicative_chain(&m, &phi, n, &init).unwrap().value();
                assert!((brute - fast).abs() < 1e-10 * brute.abs().max(1.0), "n={n}");
            }
        }
    }

    #[test]
    fn multiplicative_we_iid_closed_form() {
        let p = vec![0.4, 0.35, 0.25];
        let phi = vec![0.5, 1.5, 2.0];
        let m = chain(vec![p.clone(); 3]);
        let model = DiscreteModel::new(p, phi.clone()).unwrap();
        for n in [1usize, 2, 10, 100] {
            let closed = iid_multiplicative_we(&model, n).unwrap();
            let fast = exact_joint_we_multiplicative_chain(&m, &phi, n, &Initial::Stationary).unwrap().value();
            assert!((closed - fast).abs() < 1e-10 * closed);
        }
    }

    #[test]
    fn long_strings_do_not_overflow() {
        let m = chain(vec![vec![0.6, 0.4], vec![0.3, 0.7]]);
        let we = exact_joint_we_multiplicative_chain(&m, &[3.0, 5.0], 2000, &Initial::Stationary).unwrap();
        assert!(we.ln_abs.is_finite() && we.sign == 1.0);
        assert!(we.value().is_infinite());
    }

    #[test]
    fn deterministic_kernel_has_zero_b1() {
        let m = chain(vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0]]);
        let op = KernelOperator::from_markov(&m, &[1.0, 2.0, 3.0]).unwrap();
        // Periodic, so feed eigendata of the cycle directly: mu^3 = 6.
        let mu = 6f64.cbrt();
        let eigen = KreinRutmanResult {
            mu,
            phi_right: vec![1.0; 3],
            psi_left: vec![1.0 / 3.0; 3],
            gap_estimate: 0.0,
            residual_right: 0.0,
            residual_left: 0.0,
            iterations: 0,
            doeblin_k: 0,
        };
        let b1 = secondary_rate_multiplicative(&op, &eigen).unwrap();
        assert_eq!(b1.b1, 0.0);
        assert_eq!(b1.b1_swapped, 0.0);
    }

    #[test]
    fn iid_secondary_rate_matches_closed_form() {
        let p = vec![0.2, 0.5, 0.3];
        let phi = [1.5, 0.4, 2.0];
        let op = KernelOperator::from_markov(&chain(vec![p.clone(); 3]), &phi).unwrap();
        let eigen = krein_rutman(&op, &KrOptions::default()).unwrap();
        let b1 = secondary_rate_multiplicative(&op, &eigen).unwrap().b1;
        let model = DiscreteModel::new(p, phi.to_vec()).unwrap();
        // WE(n) = n Hw mu^(n-1), so WE/(n mu^n) = Hw / mu.
        let expected = crate::model::weighted_entropy(&model) / eigen.mu;
        assert!((b1 - expected).abs() < 1e-12);
    }

    #[test]
    fn b1_pairing_is_decided_by_the_exact_slope() {
        let m = chain(vec![vec![0.8, 0.2], vec![0.35, 0.65]]);
        let phi = [0.6, 1.8];
        let op = KernelOperator::from_markov(&m, &phi).unwrap();
        let eigen = krein_rutman(&op, &KrOptions::default()).unwrap();
        let rates = secondary_rate_multiplicative(&op, &eigen).unwrap();
        let scaled = |n: usize| {
            let we = exact_joint_we_multiplicative_chain(&m, &phi, n, &Initial::Stationary).unwrap();
            (we.ln_abs - n as f64 * eigen.mu.ln()).exp()
        };
        let slope = scaled(301) - scaled(300);
        assert!((slope - rates.b1).abs() < 1e-9);
        assert!((slope - rates.b1_swapped).abs() > 1e-4);
    }

    #[test]
    fn ar1_kernel_converges_under_refinement() {
        let opts = KrOptions::default();
        let r = refine_until_stable(
            |n| KernelOperator::ar1_gaussian(0.5, 10.0, n, |x| (-x * x / 4.0).exp()),
            16,
            1e-8,
            6,
            &opts,
        )
        .unwrap();
        assert!(r.mu_change < 1e-8);
        assert!(r.eigen.phi_right.iter().all(|&v| v > 0.0));
        let pi = r.op.stationary().unwrap();
        assert!((r.op.inner(pi, &vec![1.0; r.size]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exponential_chain_kernel() {
        let opts = KrOptions::default();
        let r = refine_until_stable(
            |n| KernelOperator::exponential_chain(25.0, n, |x| (-x).exp()),
            16,
            1e-8,
            6,
            &opts,
        )
        .unwrap();
        assert!(r.eigen.mu > 0.0 && r.eigen.mu < 1.0);
        assert!(hilbert_schmidt_check(&r.op).finite);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn adjointness(seed_rows in proptest::collection::vec(proptest::collection::vec(0.05f64..1.0, 4), 4),
                       phi in proptest::collection::vec(0.1f64..3.0, 4),
                       f in proptest::collection::vec(-2.0f64..2.0, 4),
                       g in proptest::collection::vec(-2.0f64..2.0, 4)) {
            let rows: Vec<Vec<f64>> = seed_rows.iter().map(|r| {
                let s: f64 = r.iter().sum();
                r.iter().map(|v| v / s).collect()
            }).collect();
            let op = KernelOperator::from_markov(&chain(rows), &phi).unwrap();
            let lhs = op.inner(&g, &op.apply_right(&f));
            let rhs = op.inner(&op.apply_left(&g), &f);
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }

        #[test]
        fn power_iteration_matches_dense_solve(k in 2usize..7,
                                               raw in proptest::collection::vec(0.01f64..1.0, 49),
                                               phi in proptest::collection::vec(0.2f64..3.0, 7)) {
            let rows: Vec<Vec<f64>> = (0..k).map(|x| {
                let r = &raw[x * 7..x * 7 + k];
                let s: f64 = r.iter().sum();
                r.iter().map(|v| v / s).collect()
            }).collect();
            let op = KernelOperator::from_markov(&chain(rows), &phi[..k]).unwrap();
            let r = krein_rutman(&op, &KrOptions::default()).unwrap();
            prop_assert!((r.mu - dense_radius(&op)).abs() < 1e-10);
            prop_assert!(r.phi_right.iter().all(|&v| v > 0.0));
            prop_assert!(r.psi_left.iter().all(|&v| v > 0.0));
            prop_assert!((op.inner(&r.psi_left, &r.phi_right) - 1.0).abs() < 1e-12);
            prop_assert!(r.gap_estimate > 0.0 && r.gap_estimate <= 1.0);
        }

        #[test]
        fn log_rate_converges_to_ln_mu(k in 2usize..6,
                                       raw in proptest::collection::vec(0.05f64..1.0, 25),
                                       phi in proptest::collection::vec(0.5f64..2.0, 5)) {
            let rows: Vec<Vec<f64>> = (0..k).map(|x| {
                let r = &raw[x * 5..x * 5 + k];
                let s: f64 = r.iter().sum();
                r.iter().map(|v| v / s).collect()
            }).collect();
            let m = chain(rows);
            let op = KernelOperator::from_markov(&m, &phi[..k]).unwrap();
            let r = krein_rutman(&op, &KrOptions::default()).unwrap();
            let err = |n: usize| {
                let we = exact_joint_we_multiplicative_chain(&m, &phi[..k], n, &Initial::Stationary).unwrap();
                (we.ln_abs / n as f64 - r.mu.ln()).abs()
            };
            let errs: Vec<f64> = [100usize, 200, 400].iter().map(|&n| err(n)).collect();
            prop_assert!(errs.windows(2).all(|w| w[1] <= w[0]));
            prop_assert!(errs[2] <= 10.0 / 400.0 * (1.0 + r.gap_estimate.ln().abs()));
        }
    }
}
