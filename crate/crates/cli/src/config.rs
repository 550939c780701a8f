//! Per-command config schemas. Each document is flat TOML; unknown keys are
//! rejected. `resolve` fills every default so the digest sees the config
//! that actually ran.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))
}

fn ones(k: usize) -> Vec<f64> {
    vec![1.0; k]
}

fn check_rows(states: usize, rows: &[Vec<f64>]) -> Result<(), CliError> {
    if states == 0 {
        return Err(CliError::Schema("states must be at least 1".into()));
    }
    if rows.len() != states || rows.iter().any(|r| r.len() != states) {
        return Err(CliError::Schema(format!("rows must be a {states}x{states} array")));
    }
    Ok(())
}

fn check_len(name: &str, v: &Option<Vec<f64>>, k: usize) -> Result<(), CliError> {
    match v {
        Some(v) if v.len() != k => Err(CliError::Schema(format!("{name} needs {k} entries, got {}", v.len()))),
        _ => Ok(()),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IidConfig {
    pub pmf: Vec<f64>,
    /// Per-symbol weight; defaults to 1.
    pub phi: Option<Vec<f64>>,
    /// Longest string length in the WE series.
    #[serde(default = "default_iid_n")]
    pub n_max: usize,
    /// Cross-check every series value by enumerating all strings.
    #[serde(default)]
    pub verify_enumeration: bool,
}

fn default_iid_n() -> usize {
    8
}

impl IidConfig {
    pub fn resolve(mut self) -> Result<Self, CliError> {
        check_len("phi", &self.phi, self.pmf.len())?;
        self.phi.get_or_insert_with(|| ones(self.pmf.len()));
        if self.n_max == 0 {
            return Err(CliError::Schema("n_max must be at least 1".into()));
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkovConfig {
    pub states: usize,
    /// Transition matrix, row `x` is `p(.|x)`.
    pub rows: Vec<Vec<f64>>,
    pub phi: Option<Vec<f64>>,
    /// Initial law; the stationary law when absent.
    pub lambda: Option<Vec<f64>>,
    #[serde(default = "default_markov_n")]
    pub n_max: usize,
    /// Truncation tolerance for the secondary-rate series.
    #[serde(default = "default_series_tol")]
    pub series_tol: f64,
    #[serde(default)]
    pub verify_enumeration: bool,
}

fn default_markov_n() -> usize {
    100
}

fn default_series_tol() -> f64 {
    1e-13
}

impl MarkovConfig {
    pub fn resolve(mut self) -> Result<Self, CliError> {
        check_rows(self.states, &self.rows)?;
        check_len("phi", &self.phi, self.states)?;
        check_len("lambda", &self.lambda, self.states)?;
        self.phi.get_or_insert_with(|| ones(self.states));
        if self.n_max == 0 {
            return Err(CliError::Schema("n_max must be at least 1".into()));
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GaussianWeight {
    /// `scale * n`.
    Constant,
    /// `x^T A x`.
    Quadratic,
    /// `exp(x^T (C^{-1} - A) t + x^T A x / 2)`.
    ExpQuadratic,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianConfig {
    /// Explicit covariance; exclusive with `ar1_alpha`.
    pub covariance: Option<Vec<Vec<f64>>>,
    /// Stationary AR(1) block with this coefficient and length `dim`.
    pub ar1_alpha: Option<f64>,
    pub dim: Option<usize>,
    pub weight: GaussianWeight,
    #[serde(default = "default_scale")]
    pub scale: f64,
    pub a: Option<Vec<Vec<f64>>>,
    pub t: Option<Vec<f64>>,
    /// Monte Carlo cross-check sample count; 0 skips it.
    #[serde(default)]
    pub mc_samples: usize,
}

fn default_scale() -> f64 {
    1.0
}

impl GaussianConfig {
    pub fn resolve(mut self) -> Result<Self, CliError> {
        let n = match (&self.covariance, self.ar1_alpha) {
            (Some(c), None) => {
                if self.dim.is_some_and(|d| d != c.len()) {
                    return Err(CliError::Schema("dim disagrees with covariance".into()));
                }
                if c.is_empty() || c.iter().any(|r| r.len() != c.len()) {
                    return Err(CliError::Schema("covariance must be a non-empty square array".into()));
                }
                c.len()
            }
            (None, Some(_)) => self
                .dim
                .filter(|&d| d > 0)
                .ok_or_else(|| CliError::Schema("ar1_alpha needs a positive dim".into()))?,
            _ => return Err(CliError::Schema("give exactly one of covariance or ar1_alpha".into())),
        };
        self.dim = Some(n);
        match self.weight {
            GaussianWeight::Constant => {}
            GaussianWeight::Quadratic => {
                if self.a.is_none() {
                    return Err(CliError::Schema("quadratic weight needs a".into()));
                }
            }
            GaussianWeight::ExpQuadratic => {
                self.a.get_or_insert_with(|| vec![vec![0.0; n]; n]);
                self.t.get_or_insert_with(|| vec![0.0; n]);
            }
        }
        if let Some(a) = &self.a {
            if a.len() != n || a.iter().any(|r| r.len() != n) {
                return Err(CliError::Schema(format!("a must be {n}x{n}")));
            }
        }
        check_len("t", &self.t, n)?;
        Ok(self)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PressureConfig {
    pub states: usize,
    pub rows: Vec<Vec<f64>>,
    pub phi: Vec<f64>,
    pub lambda: Option<Vec<f64>>,
    #[serde(default = "default_pressure_n")]
    pub n_max: usize,
    /// Random stationary chains checked against the variational bound; 0 skips it.
    #[serde(default)]
    pub audit_count: usize,
}

fn default_pressure_n() -> usize {
    200
}

impl PressureConfig {
    pub fn resolve(self) -> Result<Self, CliError> {
        check_rows(self.states, &self.rows)?;
        check_len("phi", &Some(self.phi.clone()), self.states)?;
        check_len("lambda", &self.lambda, self.states)?;
        if self.n_max < 2 {
            return Err(CliError::Schema("n_max must be at least 2".into()));
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcessKind {
    Chain,
    Ar1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    Smb,
    WiAdditive,
    WiMultiplicative,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub process: ProcessKind,
    pub states: Option<usize>,
    pub rows: Option<Vec<Vec<f64>>>,
    pub lambda: Option<Vec<f64>>,
    /// Chain weight table, used by both WI statistics.
    pub phi: Option<Vec<f64>>,
    pub alpha: Option<f64>,
    /// AR(1) additive weight `c0 + c2 x^2`.
    pub additive_weight: Option<[f64; 2]>,
    /// AR(1) multiplicative weight `exp(b0 + b2 x^2)`.
    pub log_weight: Option<[f64; 2]>,
    /// Path length.
    pub n: usize,
    /// Number of independent paths, seeded `seed, seed + 1, ..`.
    #[serde(default = "default_seeds")]
    pub seeds: u64,
    pub statistics: Option<Vec<Statistic>>,
}

fn default_seeds() -> u64 {
    1
}

impl SimulateConfig {
    pub fn resolve(mut self) -> Result<Self, CliError> {
        match self.process {
            ProcessKind::Chain => {
                let states = self
                    .states
                    .ok_or_else(|| CliError::Schema("chain process needs states".into()))?;
                let rows = self
                    .rows
                    .as_ref()
                    .ok_or_else(|| CliError::Schema("chain process needs rows".into()))?;
                check_rows(states, rows)?;
                check_len("phi", &self.phi, states)?;
                check_len("lambda", &self.lambda, states)?;
                self.phi.get_or_insert_with(|| ones(states));
                if self.alpha.is_some() || self.additive_weight.is_some() || self.log_weight.is_some() {
                    return Err(CliError::Schema("alpha and AR(1) weights do not apply to a chain".into()));
                }
            }
            ProcessKind::Ar1 => {
                if self.alpha.is_none() {
                    return Err(CliError::Schema("ar1 process needs alpha".into()));
                }
                if self.states.is_some() || self.rows.is_some() || self.lambda.is_some() || self.phi.is_some() {
                    return Err(CliError::Schema("states, rows, lambda and phi do not apply to ar1".into()));
                }
                self.additive_weight.get_or_insert([0.0, 1.0]);
                self.log_weight.get_or_insert([0.0, -0.25]);
            }
        }
        if self.n == 0 || self.seeds == 0 {
            return Err(CliError::Schema("n and seeds must be at least 1".into()));
        }
        let stats = self.statistics.get_or_insert_with(|| {
            vec![Statistic::Smb, Statistic::WiAdditive, Statistic::WiMultiplicative]
        });
        stats.sort();
        stats.dedup();
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let r: Result<IidConfig, _> = toml::from_str("pmf = [0.5, 0.5]\nbogus = 1\n");
        assert!(r.is_err());
    }

    #[test]
    fn defaults_are_filled() {
        let c: IidConfig = toml::from_str("pmf = [0.25, 0.75]\n").unwrap();
        let c = c.resolve().unwrap();
        assert_eq!(c.phi, Some(vec![1.0, 1.0]));
        assert_eq!(c.n_max, 8);
    }

    #[test]
    fn shape_errors() {
        let c: MarkovConfig = toml::from_str("states = 2\nrows = [[1.0]]\n").unwrap();
        assert!(matches!(c.resolve(), Err(CliError::Schema(_))));
        let g: GaussianConfig = toml::from_str("weight = \"constant\"\n").unwrap();
        assert!(matches!(g.resolve(), Err(CliError::Schema(_))));
        let s: SimulateConfig = toml::from_str("process = \"ar1\"\nn = 10\n").unwrap();
        assert!(matches!(s.resolve(), Err(CliError::Schema(_))));
    }
}
