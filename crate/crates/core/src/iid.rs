//! Closed-form WE and rates for IID strings.
//!
//! With one-digit law `p`, weight `phi`, `H = H(p)` and `Hw = H^w_phi(p)`:
//!
//! ```text
//! additive:        WE(n) = n(n-1) H E[phi] + n Hw      =: n(n-1) A0 + n A1
//! multiplicative:  WE(n) = n Hw (E[phi])^(n-1)         =: B0^(n-1) n B1
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{standard_entropy, weighted_entropy, DiscreteModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdditiveRatePair {
    /// Primary rate, limit of `WE(n)/n^2`.
    pub a0: f64,
    /// Secondary rate.
    pub a1: f64,
}

impl AdditiveRatePair {
    /// `n(n-1) A0 + n A1`.
    pub fn we(&self, n: usize) -> f64 {
        let n = n as f64;
        n * (n - 1.0) * self.a0 + n * self.a1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultiplicativeRatePair {
    /// Per-step factor `E[phi]`.
    pub b0: f64,
    /// `ln E[phi]`; `-inf` when the factor vanishes (see `b0_vanishes`).
    pub b0_log: f64,
    pub b0_vanishes: bool,
    pub b1: f64,
}

pub fn iid_additive_rates(model: &DiscreteModel) -> AdditiveRatePair {
    AdditiveRatePair {
        a0: standard_entropy(model.pmf()) * model.mean_phi(),
        a1: weighted_entropy(model),
    }
}

pub fn iid_multiplicative_rates(model: &DiscreteModel) -> Result<MultiplicativeRatePair> {
    model.require_nonnegative_phi()?;
    let b0 = model.mean_phi();
    let b0_vanishes = b0 == 0.0;
    Ok(MultiplicativeRatePair {
        b0,
        b0_log: if b0_vanishes { f64::NEG_INFINITY } else { b0.ln() },
        b0_vanishes,
        b1: weighted_entropy(model),
    })
}

/// `n H^w_phi(p) (E phi)^(n-1)`; zero for `n >= 2` when `E phi = 0`.
pub fn iid_multiplicative_we(model: &DiscreteModel, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("string length must be at least 1"));
    }
    let rates = iid_multiplicative_rates(model)?;
    Ok(n as f64 * rates.b1 * rates.b0.powi(n as i32 - 1))
}
