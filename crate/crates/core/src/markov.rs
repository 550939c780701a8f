//! Finite-state Markov chains: stationary law, entropy rate, exact additive
//! joint WE by forward recursion, and the additive rates `A0`, `A1`.
//!
//! Higher-order chains are handled by state augmentation: a chain of order
//! `k` on alphabet `X` is a first-order chain on `X^k` whose state
//! `(x_0, .., x_{k-1})` moves to `(x_1, .., x_k)` with probability
//! `p(x_k | x_0 .. x_{k-1})`. See [`augment_order`].

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{check_finite, enumeration_size, for_each_string, validate_pmf, xlogx};

/// Tolerance for `pi P = pi`.
pub const STATIONARITY_TOL: f64 = 1e-10;
/// `|E_pi phi|` below this counts as a centred weight.
pub const CENTRED_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMarkovModel {
    transition: DMatrix<f64>,
    pi: Vec<f64>,
    initial: Option<Vec<f64>>,
}

impl FiniteMarkovModel {
    /// Build from rows `P[x][y] = p(y|x)`; the stationary law is computed.
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let k = rows.len();
        if k == 0 {
            return Err(Error::invalid("transition matrix has no rows"));
        }
        let mut data = Vec::with_capacity(k * k);
        for (x, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(Error::invalid(format!(
                    "row {x} has {} entries, expected {k}",
                    row.len()
                )));
            }
            data.extend(validate_pmf(row, &format!("transition row {x}"))?);
        }
        Self::from_matrix(DMatrix::from_row_slice(k, k, &data))
    }

    pub fn from_matrix(transition: DMatrix<f64>) -> Result<Self> {
        if !transition.is_square() || transition.nrows() == 0 {
            return Err(Error::invalid("transition matrix must be square and non-empty"));
        }
        let mut transition = transition;
        for x in 0..transition.nrows() {
            let row: Vec<f64> = transition.row(x).iter().copied().collect();
            let row = validate_pmf(&row, &format!("transition row {x}"))?;
            for (y, v) in row.into_iter().enumerate() {
                transition[(x, y)] = v;
            }
        }
        let pi = stationary_distribution(&transition)?;
        Ok(Self {
            transition,
            pi,
            initial: None,
        })
    }

    /// Attach an initial law `lambda`; requires `supp lambda ⊆ supp pi`.
    pub fn with_initial(mut self, lambda: Vec<f64>) -> Result<Self> {
        self.initial = Some(self.check_initial(&lambda)?);
        Ok(self)
    }

    fn check_initial(&self, lambda: &[f64]) -> Result<Vec<f64>> {
        if lambda.len() != self.state_count() {
            return Err(Error::invalid(format!(
                "initial law has {} entries for {} states",
                lambda.len(),
                self.state_count()
            )));
        }
        let lambda = validate_pmf(lambda, "initial law")?;
        if let Some(x) = (0..lambda.len()).find(|&x| lambda[x] > 0.0 && self.pi[x] == 0.0) {
            return Err(Error::Precondition(format!(
                "initial law charges state {x} outside the support of the stationary law"
            )));
        }
        Ok(lambda)
    }

    pub fn state_count(&self) -> usize {
        self.transition.nrows()
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    #[inline]
    pub fn p(&self, x: usize, y: usize) -> f64 {
        self.transition[(x, y)]
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn initial(&self) -> Option<&[f64]> {
        self.initial.as_deref()
    }

    /// `E_pi[f]`.
    pub fn stationary_mean(&self, f: &[f64]) -> f64 {
        self.pi.iter().zip(f).map(|(p, v)| p * v).sum()
    }

    fn check_weight(&self, phi: &[f64]) -> Result<()> {
        if phi.len() != self.state_count() {
            return Err(Error::invalid(format!(
                "weight has {} entries for {} states",
                phi.len(),
                self.state_count()
            )));
        }
        check_finite(phi, "phi")
    }

    /// Initial-law vector and whether the `-ln lambda(x_0)` term is included.
    fn start(&self, initial: &Initial) -> Result<(Vec<f64>, bool)> {
        Ok(match initial {
            Initial::Stationary => (self.pi.clone(), true),
            Initial::Law(l) => (self.check_initial(l)?, true),
            Initial::Conditional(l) => (self.check_initial(l)?, false),
        })
    }
}

/// Which law starts the chain, and whether its log enters the information.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Initial {
    /// Start from `pi`, information includes `-ln pi(x_0)`.
    Stationary,
    /// Start from `lambda`, information includes `-ln lambda(x_0)`.
    Law(Vec<f64>),
    /// Start from `lambda`, information is `-sum ln p(x_l | x_{l-1})` only.
    Conditional(Vec<f64>),
}

fn reachable(adj: &DMatrix<f64>, from: usize, transpose: bool) -> Vec<bool> {
    let k = adj.nrows();
    let mut seen = vec![false; k];
    let mut queue = VecDeque::from([from]);
    seen[from] = true;
    while let Some(x) = queue.pop_front() {
        for y in 0..k {
            let edge = if transpose { adj[(y, x)] } else { adj[(x, y)] };
            if edge > 0.0 && !seen[y] {
                seen[y] = true;
                queue.push_back(y);
            }
        }
    }
    seen
}

/// Whether every state reaches every other along positive transitions.
pub fn is_irreducible(p: &DMatrix<f64>) -> bool {
    reachable(p, 0, false).iter().all(|&r| r) && reachable(p, 0, true).iter().all(|&r| r)
}

/// Unique stationary law of an irreducible stochastic matrix.
pub fn stationary_distribution(p: &DMatrix<f64>) -> Result<Vec<f64>> {
    let k = p.nrows();
    let fwd = reachable(p, 0, false);
    let bwd = reachable(p, 0, true);
    if let Some(x) = (0..k).find(|&x| !fwd[x] || !bwd[x]) {
        let side = if !fwd[x] { "unreachable from" } else { "cannot reach" };
        return Err(Error::NotIrreducible(format!("state {x} {side} state 0")));
    }
    // (P^T - I) pi = 0 with the last equation replaced by sum(pi) = 1.
    let mut a = p.transpose() - DMatrix::<f64>::identity(k, k);
    for y in 0..k {
        a[(k - 1, y)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(k);
    b[k - 1] = 1.0;
    let sol = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::NotIrreducible("balance equations are singular".into()))?;
    let mut pi: Vec<f64> = sol.iter().map(|&v| if v < 0.0 && v > -1e-14 { 0.0 } else { v }).collect();
    if pi.iter().any(|&v| v <= 0.0 || !v.is_finite()) {
        return Err(Error::NotIrreducible(format!("degenerate stationary solution {pi:?}")));
    }
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|v| *v /= total);
    let residual = (0..k)
        .map(|y| ((0..k).map(|x| pi[x] * p[(x, y)]).sum::<f64>() - pi[y]).abs())
        .fold(0.0, f64::max);
    if residual > STATIONARITY_TOL {
        return Err(Error::NotIrreducible(format!("stationarity residual {residual:e}")));
    }
    Ok(pi)
}

/// Entropy rate `h = -sum_x pi(x) sum_y p(y|x) ln p(y|x)`.
pub fn entropy_rate(model: &FiniteMarkovModel) -> f64 {
    let k = model.state_count();
    -(0..k)
        .map(|x| model.pi[x] * (0..k).map(|y| xlogx(model.p(x, y))).sum::<f64>())
        .sum::<f64>()
}

/// Exact joint WE for the additive weight `sum_j phi(X_j)` on strings of length `n`.
pub fn exact_joint_we_additive(
    model: &FiniteMarkovModel,
    phi: &[f64],
    n: usize,
    initial: &Initial,
) -> Result<f64> {
    Ok(*joint_we_additive_series(model, phi, n, initial)?
        .last()
        .expect("series is non-empty for n >= 1"))
}

/// `WE(1), .., WE(n_max)` from one forward pass.
///
/// Per state the pass carries the mass, `E[S; X=x]`, `E[L; X=x]` and
/// `E[S L; X=x]` where `S` is the running weight and `L` the running
/// information. Cost `O(n_max k^2)`.
pub fn joint_we_additive_series(
    model: &FiniteMarkovModel,
    phi: &[f64],
    n_max: usize,
    initial: &Initial,
) -> Result<Vec<f64>> {
    if n_max == 0 {
        return Err(Error::invalid("string length must be at least 1"));
    }
    model.check_weight(phi)?;
    let (lambda, boundary) = model.start(initial)?;
    let k = model.state_count();
    // -ln p, zero where p = 0 (those transitions carry no mass).
    let neg_log: Vec<f64> = model
        .transition
        .iter()
        .map(|&p| if p > 0.0 { -p.ln() } else { 0.0 })
        .collect();
    let nl = |x: usize, y: usize| neg_log[x + y * k];

    let mut mass = lambda.clone();
    let mut s: Vec<f64> = (0..k).map(|x| lambda[x] * phi[x]).collect();
    let mut l: Vec<f64> = (0..k)
        .map(|x| if boundary { -xlogx(lambda[x]) } else { 0.0 })
        .collect();
    let mut c: Vec<f64> = (0..k).map(|x| phi[x] * l[x]).collect();

    let mut out = Vec::with_capacity(n_max);
    out.push(c.iter().sum());
    let (mut m2, mut s2, mut l2, mut c2) = (vec![0.0; k], vec![0.0; k], vec![0.0; k], vec![0.0; k]);
    for _ in 1..n_max {
        m2.iter_mut().for_each(|v| *v = 0.0);
        s2.iter_mut().for_each(|v| *v = 0.0);
        l2.iter_mut().for_each(|v| *v = 0.0);
        c2.iter_mut().for_each(|v| *v = 0.0);
        for x in 0..k {
            if mass[x] == 0.0 && s[x] == 0.0 && l[x] == 0.0 && c[x] == 0.0 {
                continue;
            }
            for y in 0..k {
                let p = model.p(x, y);
                if p == 0.0 {
                    continue;
                }
                let w = nl(x, y);
                m2[y] += p * mass[x];
                s2[y] += p * (s[x] + mass[x] * phi[y]);
                l2[y] += p * (l[x] + mass[x] * w);
                c2[y] += p * (c[x] + s[x] * w + phi[y] * l[x] + phi[y] * mass[x] * w);
            }
        }
        std::mem::swap(&mut mass, &mut m2);
        std::mem::swap(&mut s, &mut s2);
        std::mem::swap(&mut l, &mut l2);
        std::mem::swap(&mut c, &mut c2);
        out.push(c.iter().sum());
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrimaryAdditiveRate {
    /// `E_pi[phi]`.
    pub alpha: f64,
    /// Entropy rate.
    pub h: f64,
    pub a0: f64,
}

/// `A0 = E_pi[phi] h`.
pub fn primary_rate_additive(model: &FiniteMarkovModel, phi: &[f64]) -> Result<PrimaryAdditiveRate> {
    model.check_weight(phi)?;
    let alpha = model.stationary_mean(phi);
    let h = entropy_rate(model);
    Ok(PrimaryAdditiveRate { alpha, h, a0: alpha * h })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoeblinReport {
    /// Minimum one-step transition probability.
    pub rho: f64,
    /// Smallest `k >= 1` with `P^k > 0` entrywise, if found within the search bound.
    pub k: Option<usize>,
}

impl DoeblinReport {
    /// Mixing bound `|p^(s)(x,y) - pi(y)| <= 2 (1 - rho)^s`.
    pub fn geometric_bound(&self, s: usize) -> f64 {
        2.0 * (1.0 - self.rho).powi(s as i32)
    }
}

pub fn doeblin_report(model: &FiniteMarkovModel, k_max: usize) -> DoeblinReport {
    let p = &model.transition;
    let rho = p.iter().copied().fold(f64::INFINITY, f64::min);
    let mut power = p.clone();
    let mut k = None;
    for step in 1..=k_max.max(1) {
        if power.iter().all(|&v| v > 0.0) {
            k = Some(step);
            break;
        }
        power = &power * p;
    }
    DoeblinReport { rho, k }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecondaryAdditiveRate {
    pub a1: f64,
    /// Terms summed in each of the two series.
    pub depth: usize,
    /// A-priori bound on the neglected tail.
    pub tail_bound: f64,
}

const MAX_SERIES_DEPTH: usize = 50_000_000;

/// Secondary additive rate `A1` for a centred weight (`E_pi phi = 0`) on a
/// chain with all transitions positive.
///
/// `A1 = -(sum_{s>=0} <a, P^s phi> + sum_{s>=0} <(pi phi) P^s, b>)` with
/// `a(y) = sum_x pi(x) p(x,y) ln p(x,y)` and `b(y) = sum_z p(y,z) ln p(y,z)`:
/// the first series pairs a transition with a later weight, the second a
/// weight with a later transition. Summation stops once the Doeblin tail bound
/// drops below `tol`.
pub fn secondary_rate_additive(
    model: &FiniteMarkovModel,
    phi: &[f64],
    tol: f64,
) -> Result<SecondaryAdditiveRate> {
    model.check_weight(phi)?;
    if !(tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    let centre = model.stationary_mean(phi);
    if centre.abs() > CENTRED_TOL {
        return Err(Error::Precondition(format!(
            "secondary additive rate needs E_pi[phi] = 0, got {centre:e}"
        )));
    }
    let report = doeblin_report(model, 1);
    if report.rho <= 0.0 {
        return Err(Error::DoeblinFailure(
            "some transition probability is zero; the series bound needs rho > 0".into(),
        ));
    }
    let k = model.state_count();
    let rho = report.rho;
    let max_phi = phi.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let max_plogp = model.transition.iter().fold(0.0f64, |m, &p| m.max(xlogx(p).abs()));
    let scale = 2.0 * (k * k) as f64 * max_phi * max_plogp * 2.0 / rho;
    let tail = |s: usize| scale * (1.0 - rho).powf(s as f64);

    let a: Vec<f64> = (0..k)
        .map(|y| (0..k).map(|x| model.pi[x] * xlogx(model.p(x, y))).sum())
        .collect();
    let b: Vec<f64> = (0..k).map(|y| (0..k).map(|z| xlogx(model.p(y, z))).sum()).collect();

    let mut right = phi.to_vec(); // P^s phi
    let mut left: Vec<f64> = (0..k).map(|x| model.pi[x] * phi[x]).collect(); // (pi phi) P^s
    let mut sum = 0.0;
    let mut depth = 0;
    while tail(depth) >= tol {
        if depth >= MAX_SERIES_DEPTH {
            return Err(Error::DoeblinFailure(format!(
                "series bound did not reach {tol:e} within {MAX_SERIES_DEPTH} terms (rho = {rho:e})"
            )));
        }
        sum += dot(&a, &right) + dot(&left, &b);
        right = (0..k).map(|x| (0..k).map(|y| model.p(x, y) * right[y]).sum()).collect();
        left = (0..k).map(|y| (0..k).map(|x| left[x] * model.p(x, y)).sum()).collect();
        depth += 1;
    }
    Ok(SecondaryAdditiveRate {
        a1: -sum,
        depth,
        tail_bound: tail(depth),
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Joint law of `(X_0, .., X_{n-1})` over all strings (see [`for_each_string`]).
pub fn markov_joint_pmf(model: &FiniteMarkovModel, n: usize, start: &[f64]) -> Result<Vec<f64>> {
    let k = model.state_count();
    let mut out = Vec::with_capacity(enumeration_size(k, n)?);
    for_each_string(k, n, |_, s| {
        let mut f = start[s[0]];
        for w in s.windows(2) {
            f *= model.p(w[0], w[1]);
        }
        out.push(f);
    })?;
    Ok(out)
}

/// Lift an order-`order` chain on `alphabet` symbols to a first-order chain on tuples.
///
/// `conditional(history)` returns `p(. | history)` for a history of length
/// `order`. Tuples are indexed as in [`for_each_string`]. An additive weight
/// `phi` on symbols becomes `phi(last symbol)` on tuples (see
/// [`augmented_weight`]).
pub fn augment_order(
    alphabet: usize,
    order: usize,
    conditional: impl Fn(&[usize]) -> Vec<f64>,
) -> Result<FiniteMarkovModel> {
    if order == 0 {
        return Err(Error::invalid("order must be at least 1"));
    }
    let states = enumeration_size(alphabet, order)?;
    let mut rows = vec![vec![0.0; states]; states];
    let mut failure = None;
    for_each_string(alphabet, order, |i, hist| {
        let probs = conditional(hist);
        if probs.len() != alphabet {
            failure = Some(Error::invalid(format!(
                "conditional law for history {hist:?} has {} entries",
                probs.len()
            )));
            return;
        }
        let shifted = (i % (states / alphabet)) * alphabet;
        for (sym, p) in probs.into_iter().enumerate() {
            rows[i][shifted + sym] = p;
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    FiniteMarkovModel::new(rows)
}

/// Weight on tuples equal to `phi` of the most recent symbol.
pub fn augmented_weight(phi: &[f64], order: usize) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for_each_string(phi.len(), order, |_, t| out.push(phi[t[order - 1]]))?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::iid::iid_additive_rates;
    use crate::model::{joint_weighted_entropy_enumerated, standard_entropy, DiscreteModel, JointWF};

    fn worked() -> FiniteMarkovModel {
        FiniteMarkovModel::new(vec![vec![0.9, 0.1], vec![0.5, 0.5]]).unwrap()
    }

    #[test]
    fn stationary_examples() {
        let m = worked();
        assert!((m.pi()[0] - 5.0 / 6.0).abs() < 1e-14);
        assert!((m.pi()[1] - 1.0 / 6.0).abs() < 1e-14);

        let ds = FiniteMarkovModel::new(vec![
            vec![0.2, 0.3, 0.5],
            vec![0.5, 0.2, 0.3],
            vec![0.3, 0.5, 0.2],
        ])
        .unwrap();
        for &v in ds.pi() {
            assert!((v - 1.0 / 3.0).abs() < 1e-14);
        }

        let p = vec![0.1, 0.6, 0.3];
        let iid = FiniteMarkovModel::new(vec![p.clone(); 3]).unwrap();
        for (a, b) in iid.pi().iter().zip(&p) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn reducible_chain_is_rejected() {
        let err = FiniteMarkovModel::new(vec![vec![1.0, 0.0], vec![0.5, 0.5]]).unwrap_err();
        assert!(matches!(err, Error::NotIrreducible(_)));
        assert!(FiniteMarkovModel::new(vec![vec![0.5, 0.6], vec![0.5, 0.5]]).is_err());
    }

    #[test]
    fn periodic_chain_still_has_stationary_law() {
        let m = FiniteMarkovModel::new(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(m.pi(), &[0.5, 0.5]);
        assert_eq!(entropy_rate(&m), 0.0);
    }

    #[test]
    fn entropy_rate_examples() {
        let u = FiniteMarkovModel::new(vec![vec![0.25; 4]; 4]).unwrap();
        assert!((entropy_rate(&u) - 4f64.ln()).abs() < 1e-15);
        let perm = FiniteMarkovModel::new(vec![
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![1.0, 0.0, 0.0],
        ])
        .unwrap();
        assert_eq!(entropy_rate(&perm), 0.0);
        assert!((entropy_rate(&worked()) - 0.38642700791953105).abs() < 1e-12);
    }

    #[test]
    fn initial_support_check() {
        let m = worked();
        assert!(m.clone().with_initial(vec![1.0, 0.0]).is_ok());
        assert!(m.with_initial(vec![0.5, 0.6]).is_err());
    }

    #[test]
    fn additive_we_matches_iid_closed_form() {
        let p = vec![0.2, 0.5, 0.3];
        let phi = vec![1.0, -0.5, 2.0];
        let chain = FiniteMarkovModel::new(vec![p.clone(); 3]).unwrap();
        let rates = iid_additive_rates(&DiscreteModel::new(p, phi.clone()).unwrap());
        let series = joint_we_additive_series(&chain, &phi, 30, &Initial::Stationary).unwrap();
        for (i, we) in series.iter().enumerate() {
            let n = i + 1;
            assert!((we - rates.we(n)).abs() < 1e-10 * (1.0 + rates.we(n).abs()));
        }
    }

    #[test]
    fn additive_we_matches_enumeration() {
        let m = FiniteMarkovModel::new(vec![
            vec![0.7, 0.2, 0.1],
            vec![0.1, 0.6, 0.3],
            vec![0.3, 0.3, 0.4],
        ])
        .unwrap();
        let phi = vec![1.5, -0.7, 0.2];
        let lambda = vec![0.5, 0.0, 0.5];
        for n in 1..=8 {
            for (init, start) in [
                (Initial::Stationary, m.pi().to_vec()),
                (Initial::Law(lambda.clone()), lambda.clone()),
            ] {
                let joint = markov_joint_pmf(&m, n, &start).unwrap();
                let brute =
                    joint_weighted_entropy_enumerated(&joint, 3, n, &JointWF::Additive(phi.clone())).unwrap();
                let fast = exact_joint_we_additive(&m, &phi, n, &init).unwrap();
                assert!((brute - fast).abs() < 1e-10, "n={n}");
            }
        }
    }

    #[test]
    fn conditional_initial_drops_boundary_term() {
        let m = worked();
        let phi = vec![1.0, 1.0];
        let lambda = vec![0.3, 0.7];
        let with = exact_joint_we_additive(&m, &phi, 5, &Initial::Law(lambda.clone())).unwrap();
        let without = exact_joint_we_additive(&m, &phi, 5, &Initial::Conditional(lambda.clone())).unwrap();
        // phi = 1 so the boundary contributes n H(lambda).
        assert!((with - without - 5.0 * standard_entropy(&lambda)).abs() < 1e-12);
    }

    #[test]
    fn zero_weight_gives_zero() {
        let we = exact_joint_we_additive(&worked(), &[0.0, 0.0], 50, &Initial::Stationary).unwrap();
        assert_eq!(we, 0.0);
    }

    #[test]
    fn additive_we_is_linear_in_phi() {
        let m = worked();
        let f1 = [0.3, -1.2];
        let f2 = [2.0, 0.7];
        let (a, b) = (1.7, -0.4);
        let combo = [a * f1[0] + b * f2[0], a * f1[1] + b * f2[1]];
        let n = 40;
        let lhs = exact_joint_we_additive(&m, &combo, n, &Initial::Stationary).unwrap();
        let rhs = a * exact_joint_we_additive(&m, &f1, n, &Initial::Stationary).unwrap()
            + b * exact_joint_we_additive(&m, &f2, n, &Initial::Stationary).unwrap();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn primary_rate_examples() {
        let m = worked();
        let r = primary_rate_additive(&m, &[1.0, 1.0]).unwrap();
        assert!((r.a0 - 0.38642700791953105).abs() < 1e-12);
        let centred = primary_rate_additive(&m, &[1.0, -5.0]).unwrap();
        assert!(centred.a0.abs() < 1e-15);
    }

    #[test]
    fn secondary_rate_iid_reduction() {
        let p = vec![0.25, 0.75];
        let chain = FiniteMarkovModel::new(vec![p.clone(), p]).unwrap();
        let r = secondary_rate_additive(&chain, &[3.0, -1.0], 1e-13).unwrap();
        assert!((r.a1 - 0.8239592165010823).abs() < 1e-12);
        let zero = secondary_rate_additive(&chain, &[0.0, 0.0], 1e-12).unwrap();
        assert_eq!(zero.a1, 0.0);
    }

    #[test]
    fn secondary_rate_preconditions() {
        let m = worked();
        assert!(matches!(
            secondary_rate_additive(&m, &[1.0, 1.0], 1e-10),
            Err(Error::Precondition(_))
        ));
        let sparse = FiniteMarkovModel::new(vec![vec![0.0, 1.0], vec![0.5, 0.5]]).unwrap();
        // pi = (1/3, 2/3); phi = (2, -1) is centred.
        assert!(matches!(
            secondary_rate_additive(&sparse, &[2.0, -1.0], 1e-10),
            Err(Error::DoeblinFailure(_))
        ));
    }

    #[test]
    fn secondary_rate_matches_slope() {
        let m = worked();
        // pi = (5/6, 1/6): phi = (1, -5) is centred.
        let phi = [1.0, -5.0];
        let a1 = secondary_rate_additive(&m, &phi, 1e-13).unwrap().a1;
        let series = joint_we_additive_series(&m, &phi, 2001, &Initial::Stationary).unwrap();
        let slope = series[2000] - series[1999];
        assert!((slope - a1).abs() < 1e-6, "{slope} vs {a1}");
        // WE(n)/n -> A1 at rate 1/n.
        let n = 2000.0;
        assert!((series[1999] / n - a1).abs() < 50.0 / n);
    }

    #[test]
    fn secondary_rate_truncation_is_stable() {
        let m = worked();
        let phi = [1.0, -5.0];
        let tol = 1e-9;
        let coarse = secondary_rate_additive(&m, &phi, tol).unwrap();
        let fine = secondary_rate_additive(&m, &phi, tol * 1e-3).unwrap();
        assert!(fine.depth > coarse.depth);
        assert!((coarse.a1 - fine.a1).abs() < tol);
    }

    #[test]
    fn doeblin_report_values() {
        let r = doeblin_report(&worked(), 5);
        assert_eq!(r.rho, 0.1);
        assert_eq!(r.k, Some(1));
        assert!(r.geometric_bound(3) < r.geometric_bound(2));
        let lazy = FiniteMarkovModel::new(vec![vec![0.0, 1.0], vec![0.5, 0.5]]).unwrap();
        assert_eq!(doeblin_report(&lazy, 5).k, Some(2));
        let flip = FiniteMarkovModel::new(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(doeblin_report(&flip, 50).k, None);
    }

    #[test]
    fn order_two_augmentation() {
        // p(next = 1 | a, b) depends on both symbols.
        let table = |h: &[usize]| {
            let q = 0.2 + 0.3 * h[0] as f64 + 0.4 * h[1] as f64;
            vec![1.0 - q, q]
        };
        let m = augment_order(2, 2, table).unwrap();
        assert_eq!(m.state_count(), 4);
        // (a, b) -> (b, c)
        assert!((m.p(0b01, 0b11) - 0.6).abs() < 1e-15);
        assert!((m.p(0b10, 0b00) - 0.5).abs() < 1e-15);
        assert_eq!(m.p(0b10, 0b11), 0.0);
        assert_eq!(augmented_weight(&[5.0, 7.0], 2).unwrap(), vec![5.0, 7.0, 5.0, 7.0]);
    }
}
