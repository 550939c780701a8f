//! Finite-alphabet primitives: one-digit models, joint weight functions and
//! the brute-force enumeration oracle for joint weighted entropy.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Strings enumerated by [`joint_weighted_entropy_enumerated`] are capped at this count.
pub const ENUMERATION_LIMIT: u64 = 10_000_000;

/// Absolute tolerance accepted on `sum(p) = 1` without touching the input.
pub const NORMALIZATION_TOL: f64 = 1e-12;
/// Deviations below this are renormalized; larger ones are rejected.
pub const RENORMALIZE_TOL: f64 = 1e-9;

/// Output unit. Everything is computed in nats; bits are produced only at output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogBase {
    #[default]
    #[serde(rename = "nat")]
    Natural,
    #[serde(rename = "bits")]
    Base2,
}

impl LogBase {
    /// Convert a value expressed in nats into this base.
    pub fn convert(self, nats: f64) -> f64 {
        match self {
            LogBase::Natural => nats,
            LogBase::Base2 => nats / std::f64::consts::LN_2,
        }
    }

    /// Inverse of [`LogBase::convert`].
    pub fn to_nats(self, value: f64) -> f64 {
        match self {
            LogBase::Natural => value,
            LogBase::Base2 => value * std::f64::consts::LN_2,
        }
    }
}

impl FromStr for LogBase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nat" | "nats" | "e" => Ok(LogBase::Natural),
            "bits" | "bit" | "2" => Ok(LogBase::Base2),
            other => Err(Error::invalid(format!("unknown log base '{other}'"))),
        }
    }
}

impl fmt::Display for LogBase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LogBase::Natural => "nat",
            LogBase::Base2 => "bits",
        })
    }
}

/// `p ln p` with the convention `0 ln 0 = 0`.
#[inline]
pub fn xlogx(p: f64) -> f64 {
    if p == 0.0 {
        0.0
    } else {
        p * p.ln()
    }
}

/// Check that `pmf` is a probability vector.
///
/// Sums within [`NORMALIZATION_TOL`] of one are returned unchanged, sums within
/// [`RENORMALIZE_TOL`] are rescaled, anything else is rejected.
pub fn validate_pmf(pmf: &[f64], what: &str) -> Result<Vec<f64>> {
    let bad = |reason: String| Error::InvalidDistribution {
        what: what.to_string(),
        reason,
    };
    if pmf.is_empty() {
        return Err(bad("empty".into()));
    }
    for (i, &p) in pmf.iter().enumerate() {
        if !p.is_finite() || p < 0.0 {
            return Err(bad(format!("entry {i} is {p}")));
        }
    }
    let total: f64 = pmf.iter().sum();
    let dev = (total - 1.0).abs();
    if dev <= NORMALIZATION_TOL {
        Ok(pmf.to_vec())
    } else if dev < RENORMALIZE_TOL {
        Ok(pmf.iter().map(|p| p / total).collect())
    } else {
        Err(bad(format!("sums to {total}")))
    }
}

pub(crate) fn check_finite(values: &[f64], what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::invalid(format!("{what}[{i}] is not finite"))),
        None => Ok(()),
    }
}

pub(crate) fn check_nonnegative(values: &[f64]) -> Result<()> {
    match values.iter().position(|&v| v < 0.0) {
        Some(index) => Err(Error::NegativeWeight {
            index,
            value: values[index],
        }),
        None => Ok(()),
    }
}

/// A one-digit law `p` on `{0, .., k-1}` with a one-digit weight `phi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteModel {
    pmf: Vec<f64>,
    phi: Vec<f64>,
}

impl DiscreteModel {
    pub fn new(pmf: Vec<f64>, phi: Vec<f64>) -> Result<Self> {
        if pmf.len() != phi.len() {
            return Err(Error::invalid(format!(
                "pmf has {} entries but phi has {}",
                pmf.len(),
                phi.len()
            )));
        }
        let pmf = validate_pmf(&pmf, "pmf")?;
        check_finite(&phi, "phi")?;
        Ok(Self { pmf, phi })
    }

    /// Model with `phi = 1`, i.e. plain Shannon quantities.
    pub fn unweighted(pmf: Vec<f64>) -> Result<Self> {
        let k = pmf.len();
        Self::new(pmf, vec![1.0; k])
    }

    pub fn alphabet_size(&self) -> usize {
        self.pmf.len()
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    /// `E_p[phi]`.
    pub fn mean_phi(&self) -> f64 {
        self.pmf.iter().zip(&self.phi).map(|(p, f)| p * f).sum()
    }

    pub fn require_nonnegative_phi(&self) -> Result<()> {
        check_nonnegative(&self.phi)
    }

    /// Same law with a different weight.
    pub fn with_phi(&self, phi: Vec<f64>) -> Result<Self> {
        Self::new(self.pmf.clone(), phi)
    }
}

/// Weighted information `-phi(x) ln p(x)` of a single outcome.
pub fn weighted_information(x: usize, model: &DiscreteModel) -> Result<f64> {
    let (p, phi) = match (model.pmf.get(x), model.phi.get(x)) {
        (Some(&p), Some(&phi)) => (p, phi),
        _ => {
            return Err(Error::invalid(format!(
                "symbol {x} outside alphabet of size {}",
                model.alphabet_size()
            )))
        }
    };
    if phi == 0.0 {
        return Ok(0.0);
    }
    if p == 0.0 {
        return Err(Error::InfiniteInformation { symbol: x });
    }
    Ok(-phi * p.ln())
}

/// Shannon entropy `-sum p ln p`.
pub fn standard_entropy(pmf: &[f64]) -> f64 {
    -pmf.iter().map(|&p| xlogx(p)).sum::<f64>()
}

/// Weighted entropy `-sum phi(x) p(x) ln p(x)`.
pub fn weighted_entropy(model: &DiscreteModel) -> f64 {
    -model
        .pmf
        .iter()
        .zip(&model.phi)
        .map(|(&p, &phi)| if phi == 0.0 { 0.0 } else { phi * xlogx(p) })
        .sum::<f64>()
}

/// One-digit WE `H^w_phi(p)`; identical to [`weighted_entropy`].
pub fn one_digit_we(model: &DiscreteModel) -> f64 {
    weighted_entropy(model)
}

pub type StringEvaluator = Arc<dyn Fn(&[usize]) -> f64 + Send + Sync>;

/// Weight function on strings of symbols.
#[derive(Clone)]
pub enum JointWF {
    /// `sum_j phi(x_j)`
    Additive(Vec<f64>),
    /// `prod_j phi(x_j)`
    Multiplicative(Vec<f64>),
    Constant(f64),
    Custom(StringEvaluator),
}

impl fmt::Debug for JointWF {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            JointWF::Additive(phi) => f.debug_tuple("Additive").field(phi).finish(),
            JointWF::Multiplicative(phi) => f.debug_tuple("Multiplicative").field(phi).finish(),
            JointWF::Constant(c) => f.debug_tuple("Constant").field(c).finish(),
            JointWF::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl JointWF {
    pub fn additive(model: &DiscreteModel) -> Self {
        JointWF::Additive(model.phi.clone())
    }

    pub fn multiplicative(model: &DiscreteModel) -> Self {
        JointWF::Multiplicative(model.phi.clone())
    }

    pub fn custom(f: impl Fn(&[usize]) -> f64 + Send + Sync + 'static) -> Self {
        JointWF::Custom(Arc::new(f))
    }

    pub fn evaluate(&self, string: &[usize]) -> f64 {
        match self {
            JointWF::Additive(phi) => string.iter().map(|&x| phi[x]).sum(),
            JointWF::Multiplicative(phi) => string.iter().map(|&x| phi[x]).product(),
            JointWF::Constant(c) => *c,
            JointWF::Custom(f) => f(string),
        }
    }

    fn check_alphabet(&self, alphabet_size: usize) -> Result<()> {
        match self {
            JointWF::Additive(phi) | JointWF::Multiplicative(phi) if phi.len() != alphabet_size => {
                Err(Error::invalid(format!(
                    "weight has {} entries for an alphabet of size {alphabet_size}",
                    phi.len()
                )))
            }
            _ => Ok(()),
        }
    }
}

/// Number of strings of length `n`, or [`Error::SizeGuard`] past [`ENUMERATION_LIMIT`].
pub fn enumeration_size(alphabet_size: usize, n: usize) -> Result<usize> {
    if alphabet_size == 0 {
        return Err(Error::invalid("empty alphabet"));
    }
    let requested = (alphabet_size as f64).powi(n as i32);
    if requested > ENUMERATION_LIMIT as f64 {
        return Err(Error::SizeGuard {
            requested,
            limit: ENUMERATION_LIMIT,
        });
    }
    Ok(alphabet_size.pow(n as u32))
}

/// Visit every string of length `n` in lexicographic order (`x_0` most
/// significant), passing its index and digits.
pub fn for_each_string(
    alphabet_size: usize,
    n: usize,
    mut visit: impl FnMut(usize, &[usize]),
) -> Result<()> {
    let total = enumeration_size(alphabet_size, n)?;
    let mut digits = vec![0usize; n];
    for index in 0..total {
        visit(index, &digits);
        for d in digits.iter_mut().rev() {
            *d += 1;
            if *d < alphabet_size {
                break;
            }
            *d = 0;
        }
    }
    Ok(())
}

/// IID product law over all strings of length `n`, indexed as in [`for_each_string`].
pub fn product_pmf(pmf: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(enumeration_size(pmf.len(), n)?);
    for_each_string(pmf.len(), n, |_, s| {
        out.push(s.iter().map(|&x| pmf[x]).product())
    })?;
    Ok(out)
}

/// Brute-force joint WE `-sum_x phi_n(x) f_n(x) ln f_n(x)` over all strings.
///
/// `joint_pmf` is indexed as in [`for_each_string`]. This is the ground-truth
/// oracle the recursive WE routines are checked against.
pub fn joint_weighted_entropy_enumerated(
    joint_pmf: &[f64],
    alphabet_size: usize,
    n: usize,
    wf: &JointWF,
) -> Result<f64> {
    let total = enumeration_size(alphabet_size, n)?;
    if joint_pmf.len() != total {
        return Err(Error::invalid(format!(
            "joint pmf has {} entries, expected {total}",
            joint_pmf.len()
        )));
    }
    wf.check_alphabet(alphabet_size)?;
    let mut acc = 0.0;
    for_each_string(alphabet_size, n, |i, s| {
        let f = joint_pmf[i];
        if f > 0.0 {
            let w = wf.evaluate(s);
            if w != 0.0 {
                acc -= w * f * f.ln();
            }
        }
    })?;
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn wi_uniform_is_ln_k() {
        let m = DiscreteModel::unweighted(vec![0.25; 4]).unwrap();
        for x in 0..4 {
            assert!(close(weighted_information(x, &m).unwrap(), 4f64.ln(), 1e-15));
        }
    }

    #[test]
    fn wi_zero_weight_and_certain_outcome() {
        let m = DiscreteModel::new(vec![0.0, 1.0], vec![0.0, 7.5]).unwrap();
        assert_eq!(weighted_information(0, &m).unwrap(), 0.0);
        assert_eq!(weighted_information(1, &m).unwrap(), 0.0);
    }

    #[test]
    fn wi_zero_probability_nonzero_weight_is_an_error() {
        let m = DiscreteModel::new(vec![0.0, 1.0], vec![2.0, 1.0]).unwrap();
        assert_eq!(
            weighted_information(0, &m),
            Err(Error::InfiniteInformation { symbol: 0 })
        );
        assert!(weighted_information(2, &m).is_err());
    }

    #[test]
    fn we_worked_values() {
        let bern = DiscreteModel::unweighted(vec![0.5, 0.5]).unwrap();
        assert!(close(weighted_entropy(&bern), 2f64.ln(), 1e-15));

        let ind = DiscreteModel::new(vec![0.25, 0.75], vec![1.0, 0.0]).unwrap();
        assert!(close(weighted_entropy(&ind), 0.3465735902799727, 1e-12));

        let signed = DiscreteModel::new(vec![0.25, 0.75], vec![3.0, -1.0]).unwrap();
        assert!(close(weighted_entropy(&signed), 0.8239592165010823, 1e-12));
    }

    #[test]
    fn standard_entropy_values() {
        assert!(close(standard_entropy(&[0.2; 5]), 5f64.ln(), 1e-15));
        assert_eq!(standard_entropy(&[1.0, 0.0]), 0.0);
        assert!(close(standard_entropy(&[0.25, 0.75]), 0.5623351446188083, 1e-12));
    }

    #[test]
    fn pmf_validation_policy() {
        assert!(DiscreteModel::unweighted(vec![0.5, 0.5 + 5e-13]).is_ok());
        let renorm = DiscreteModel::unweighted(vec![0.5, 0.5 + 5e-10]).unwrap();
        assert!(close(renorm.pmf().iter().sum::<f64>(), 1.0, 1e-15));
        assert!(DiscreteModel::unweighted(vec![0.5, 0.6]).is_err());
        assert!(DiscreteModel::unweighted(vec![-0.1, 1.1]).is_err());
        assert!(DiscreteModel::new(vec![0.5, 0.5], vec![1.0]).is_err());
        assert!(DiscreteModel::new(vec![0.5, 0.5], vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn log_base_round_trip() {
        for v in [0.0, 1.0, -3.5, 0.123456789012345, 1e-300, 123456.789] {
            let back = LogBase::Base2.to_nats(LogBase::Base2.convert(v));
            assert!((back - v).abs() <= 1e-15 * v.abs().max(1.0));
        }
        assert_eq!(LogBase::Base2.convert(2f64.ln()), 1.0);
        assert_eq!("bits".parse::<LogBase>().unwrap(), LogBase::Base2);
        assert!("dits".parse::<LogBase>().is_err());
    }

    #[test]
    fn joint_wf_evaluation() {
        let phi = vec![1.5, -2.0, 0.5];
        let s = [0, 1, 2, 2];
        assert_eq!(JointWF::Additive(phi.clone()).evaluate(&s), 1.5 - 2.0 + 0.5 + 0.5);
        assert_eq!(JointWF::Multiplicative(phi).evaluate(&s), 1.5 * -2.0 * 0.5 * 0.5);
        assert_eq!(JointWF::Constant(4.0).evaluate(&s), 4.0);
        assert_eq!(JointWF::custom(|s| s.len() as f64).evaluate(&s), 4.0);
    }

    #[test]
    fn enumeration_n1_equals_marginal_we() {
        let m = DiscreteModel::new(vec![0.1, 0.6, 0.3], vec![2.0, -1.0, 0.25]).unwrap();
        let we = joint_weighted_entropy_enumerated(m.pmf(), 3, 1, &JointWF::additive(&m)).unwrap();
        assert!(close(we, weighted_entropy(&m), 1e-15));
    }

    #[test]
    fn enumeration_bernoulli_additive_n3() {
        let joint = product_pmf(&[0.5, 0.5], 3).unwrap();
        let we =
            joint_weighted_entropy_enumerated(&joint, 2, 3, &JointWF::Additive(vec![1.0, 1.0]))
                .unwrap();
        assert!(close(we, 9.0 * 2f64.ln(), 1e-12));
    }

    #[test]
    fn enumeration_guard() {
        let err = enumeration_size(10, 8).unwrap_err();
        assert!(matches!(err, Error::SizeGuard { .. }));
        assert_eq!(enumeration_size(10, 7).unwrap(), 10_000_000);
        let joint = vec![0.25; 4];
        assert!(joint_weighted_entropy_enumerated(&joint, 2, 3, &JointWF::Constant(1.0)).is_err());
    }

    #[test]
    fn lexicographic_order() {
        let mut seen = Vec::new();
        for_each_string(2, 2, |i, s| seen.push((i, s.to_vec()))).unwrap();
        assert_eq!(
            seen,
            vec![(0, vec![0, 0]), (1, vec![0, 1]), (2, vec![1, 0]), (3, vec![1, 1])]
        );
    }

    fn arb_model(k: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
        (
            prop::collection::vec(0.01f64..1.0, k),
            prop::collection::vec(-3.0f64..3.0, k),
            prop::collection::vec(-3.0f64..3.0, k),
        )
            .prop_map(|(w, a, b)| {
                let s: f64 = w.iter().sum();
                (w.iter().map(|x| x / s).collect(), a, b)
            })
    }

    proptest! {
        #[test]
        fn constant_one_is_joint_entropy((p, _, _) in arb_model(3), n in 1usize..5) {
            let joint = product_pmf(&p, n).unwrap();
            let we = joint_weighted_entropy_enumerated(&joint, 3, n, &JointWF::Constant(1.0)).unwrap();
            prop_assert!((we - standard_entropy(&joint)).abs() <= 1e-12);
        }

        #[test]
        fn we_is_linear_in_phi((p, f1, f2) in arb_model(4), a in -5.0f64..5.0, b in -5.0f64..5.0) {
            let combo: Vec<f64> = f1.iter().zip(&f2).map(|(x, y)| a * x + b * y).collect();
            let lhs = weighted_entropy(&DiscreteModel::new(p.clone(), combo).unwrap());
            let rhs = a * weighted_entropy(&DiscreteModel::new(p.clone(), f1).unwrap())
                + b * weighted_entropy(&DiscreteModel::new(p, f2).unwrap());
            prop_assert!((lhs - rhs).abs() <= 1e-12);
        }

        #[test]
        fn we_nonnegative_for_nonnegative_phi((p, f, _) in arb_model(5), c in 0.0f64..10.0) {
            let phi: Vec<f64> = f.iter().map(|x| x.abs()).collect();
            let m = DiscreteModel::new(p, phi.clone()).unwrap();
            prop_assert!(weighted_entropy(&m) >= 0.0);
            let scaled = m.with_phi(phi.iter().map(|x| c * x).collect()).unwrap();
            prop_assert!((weighted_entropy(&scaled) - c * weighted_entropy(&m)).abs()
                <= 1e-13 * (1.0 + c * weighted_entropy(&m)));
        }
    }
}
