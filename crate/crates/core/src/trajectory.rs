//! Simulated paths and the running statistics whose almost-sure limits are
//! the entropy rate, the additive WI rate and the multiplicative WI rate.

use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::markov::{entropy_rate, FiniteMarkovModel};
use crate::gaussian::normal_entropy;

/// A process that can be sampled and whose conditional laws are known exactly.
#[derive(Debug, Clone, PartialEq)]
pub enum Process {
    /// Starts from the attached initial law, or from `pi` when none is set.
    Chain(FiniteMarkovModel),
    /// Stationary `X_{j+1} = alpha X_j + Z_{j+1}`.
    Ar1 { alpha: f64 },
}

impl Process {
    pub fn ar1(alpha: f64) -> Result<Self> {
        if !(alpha.abs() < 1.0) {
            return Err(Error::invalid(format!("AR(1) coefficient must satisfy |alpha| < 1, got {alpha}")));
        }
        Ok(Process::Ar1 { alpha })
    }

    pub fn entropy_rate(&self) -> f64 {
        match self {
            Process::Chain(m) => entropy_rate(m),
            Process::Ar1 { .. } => normal_entropy(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Path {
    Symbols(Vec<usize>),
    Reals(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub path: Path,
    pub seed: u64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        match &self.path {
            Path::Symbols(s) => s.len(),
            Path::Reals(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn draw(cumulative: &[f64], u: f64) -> usize {
    cumulative
        .iter()
        .position(|&c| u < c)
        .unwrap_or(cumulative.len() - 1)
}

fn cumulative(p: impl Iterator<Item = f64>) -> Vec<f64> {
    p.scan(0.0, |acc, v| {
        *acc += v;
        Some(*acc)
    })
    .collect()
}

/// Path of length `n`; the same `(process, n, seed)` gives the same path.
pub fn simulate(process: &Process, n: usize, seed: u64) -> Result<Trajectory> {
    if n == 0 {
        return Err(Error::invalid("path length must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let path = match process {
        Process::Chain(m) => {
            let k = m.state_count();
            let start = m.initial().unwrap_or(m.pi());
            let start_cdf = cumulative(start.iter().copied());
            let rows: Vec<Vec<f64>> = (0..k).map(|x| cumulative((0..k).map(|y| m.p(x, y)))).collect();
            let mut path = Vec::with_capacity(n);
            let mut x = draw(&start_cdf, rng.random::<f64>() * start_cdf[k - 1]);
            path.push(x);
            for _ in 1..n {
                let row = &rows[x];
                x = draw(row, rng.random::<f64>() * row[k - 1]);
                path.push(x);
            }
            Path::Symbols(path)
        }
        Process::Ar1 { alpha } => {
            let sd = (1.0 - alpha * alpha).sqrt().recip();
            let mut path = Vec::with_capacity(n);
            let z: f64 = StandardNormal.sample(&mut rng);
            let mut x = sd * z;
            path.push(x);
            for _ in 1..n {
                let z: f64 = StandardNormal.sample(&mut rng);
                x = alpha * x + z;
                path.push(x);
            }
            Path::Reals(path)
        }
    };
    Ok(Trajectory { path, seed })
}

/// One-digit weight: a table over symbols or a function of a real state.
#[derive(Clone)]
pub enum Weight {
    Table(Vec<f64>),
    Function(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for Weight {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Weight::Table(t) => f.debug_tuple("Table").field(t).finish(),
            Weight::Function(_) => f.write_str("Function(..)"),
        }
    }
}

impl Weight {
    pub fn function(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Weight::Function(Arc::new(f))
    }

    fn along(&self, traj: &Trajectory) -> Result<Vec<f64>> {
        match (self, &traj.path) {
            (Weight::Table(t), Path::Symbols(s)) => s
                .iter()
                .map(|&x| {
                    t.get(x)
                        .copied()
                        .ok_or_else(|| Error::invalid(format!("weight table has no entry for symbol {x}")))
                })
                .collect(),
            (Weight::Function(f), Path::Reals(r)) => Ok(r.iter().map(|&x| f(x)).collect()),
            (Weight::Function(f), Path::Symbols(s)) => Ok(s.iter().map(|&x| f(x as f64)).collect()),
            (Weight::Table(_), Path::Reals(_)) => Err(Error::invalid("a weight table needs a symbolic path")),
        }
    }
}

/// `-ln lambda(x_0)` followed by `-ln p(x_{j-1}, x_j)` along the path.
fn information_increments(traj: &Trajectory, process: &Process) -> Result<Vec<f64>> {
    match (process, &traj.path) {
        (Process::Chain(m), Path::Symbols(s)) => {
            let start = m.initial().unwrap_or(m.pi());
            let mut out = Vec::with_capacity(s.len());
            for (j, &x) in s.iter().enumerate() {
                if x >= m.state_count() {
                    return Err(Error::invalid(format!("symbol {x} outside the state space")));
                }
                let p = if j == 0 { start[x] } else { m.p(s[j - 1], x) };
                if p == 0.0 {
                    return Err(Error::InfiniteInformation { symbol: x });
                }
                out.push(-p.ln());
            }
            Ok(out)
        }
        (Process::Ar1 { alpha }, Path::Reals(r)) => {
            let ln2pi = (2.0 * std::f64::consts::PI).ln();
            let var0 = 1.0 / (1.0 - alpha * alpha);
            let mut out = Vec::with_capacity(r.len());
            for (j, &x) in r.iter().enumerate() {
                out.push(if j == 0 {
                    0.5 * (ln2pi + var0.ln() + x * x / var0)
                } else {
                    let d = x - alpha * r[j - 1];
                    0.5 * (ln2pi + d * d)
                });
            }
            Ok(out)
        }
        _ => Err(Error::invalid("path type does not match the process")),
    }
}

/// Checkpoints `2^k <= n`, with `n` appended when it is not a power of two.
pub fn geometric_checkpoints(n: usize) -> Vec<usize> {
    let mut out: Vec<usize> = std::iter::successors(Some(1usize), |&c| c.checked_mul(2))
        .take_while(|&c| c <= n)
        .collect();
    if out.last() != Some(&n) && n > 0 {
        out.push(n);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub statistic: String,
    pub seed: u64,
    pub target: f64,
    pub checkpoints: Vec<usize>,
    pub estimates: Vec<f64>,
    /// `|last estimate - target|`.
    pub final_error: f64,
    /// Standard error of the final estimate from batch means along the path.
    pub batch_se: f64,
    /// Checkpoints dropped because the statistic was undefined there.
    pub skipped: Vec<usize>,
}

const BATCHES: usize = 20;

/// Batch means of `values` over `BATCHES` equal blocks.
fn batch_means(values: &[f64]) -> Vec<f64> {
    let size = (values.len() / BATCHES).max(1);
    values
        .chunks(size)
        .filter(|c| c.len() == size)
        .map(|c| c.iter().sum::<f64>() / size as f64)
        .collect()
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let k = v.len() as f64;
    let m = v.iter().sum::<f64>() / k;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (k - 1.0)
    } else {
        0.0
    };
    (m, var)
}

fn se_of_mean(values: &[f64]) -> f64 {
    let b = batch_means(values);
    let (_, var) = mean_var(&b);
    (var / b.len() as f64).sqrt()
}

fn report(
    statistic: &str,
    seed: u64,
    target: f64,
    checkpoints: Vec<usize>,
    estimates: Vec<f64>,
    batch_se: f64,
    skipped: Vec<usize>,
) -> ConvergenceReport {
    let final_error = estimates.last().map_or(f64::NAN, |e| (e - target).abs());
    ConvergenceReport {
        statistic: statistic.to_string(),
        seed,
        target,
        checkpoints,
        estimates,
        final_error,
        batch_se,
        skipped,
    }
}

/// `-(1/n) ln f_n(path)` against the entropy rate.
pub fn empirical_smb(traj: &Trajectory, process: &Process) -> Result<ConvergenceReport> {
    let inc = information_increments(traj, process)?;
    let checkpoints = geometric_checkpoints(inc.len());
    let mut estimates = Vec::with_capacity(checkpoints.len());
    let mut acc = 0.0;
    let mut next = 0;
    for (j, v) in inc.iter().enumerate() {
        acc += v;
        if checkpoints[next] == j + 1 {
            estimates.push(acc / (j + 1) as f64);
            next += 1;
        }
    }
    Ok(report(
        "smb",
        traj.seed,
        process.entropy_rate(),
        checkpoints,
        estimates,
        se_of_mean(&inc),
        Vec::new(),
    ))
}

/// `(sum phi(X_j)) (-ln f_n) / n^2` against `E_pi[phi] h`.
///
/// `mean_phi` is the stationary mean of the weight.
pub fn empirical_wi_additive(
    traj: &Trajectory,
    process: &Process,
    phi: &Weight,
    mean_phi: f64,
) -> Result<ConvergenceReport> {
    let inc = information_increments(traj, process)?;
    let w = phi.along(traj)?;
    let checkpoints = geometric_checkpoints(inc.len());
    let mut estimates = Vec::with_capacity(checkpoints.len());
    let (mut s, mut l) = (0.0, 0.0);
    let mut next = 0;
    for j in 0..inc.len() {
        s += w[j];
        l += inc[j];
        if checkpoints[next] == j + 1 {
            let n = (j + 1) as f64;
            estimates.push((s / n) * (l / n));
            next += 1;
        }
    }
    // Delta method on the product of the two batch means.
    let bw = batch_means(&w);
    let bl = batch_means(&inc);
    let (mw, vw) = mean_var(&bw);
    let (ml, vl) = mean_var(&bl);
    let k = bw.len() as f64;
    let cov = if bw.len() > 1 {
        bw.iter().zip(&bl).map(|(a, b)| (a - mw) * (b - ml)).sum::<f64>() / (k - 1.0)
    } else {
        0.0
    };
    let var = (ml * ml * vw + mw * mw * vl + 2.0 * mw * ml * cov) / k;
    Ok(report(
        "wi_additive",
        traj.seed,
        mean_phi * process.entropy_rate(),
        checkpoints,
        estimates,
        var.max(0.0).sqrt(),
        Vec::new(),
    ))
}

/// Report for the multiplicative WI rate, with the log-information term kept apart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplicativeReport {
    pub report: ConvergenceReport,
    /// `(1/n) ln(-ln f_n)` at the kept checkpoints; tends to zero.
    pub log_information_term: Vec<f64>,
}

/// `(1/n) ln(prod phi(X_j) (-ln f_n))` against `E_pi[ln phi]`.
///
/// `mean_log_phi` is the stationary mean of `ln phi`. Checkpoints where
/// `-ln f_n <= 0` are skipped.
pub fn empirical_wi_multiplicative(
    traj: &Trajectory,
    process: &Process,
    phi: &Weight,
    mean_log_phi: f64,
) -> Result<MultiplicativeReport> {
    let inc = information_increments(traj, process)?;
    let w = phi.along(traj)?;
    if let Some(j) = w.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::Precondition(format!("weight must be positive on the path, step {j} has {}", w[j])));
    }
    let lw: Vec<f64> = w.iter().map(|v| v.ln()).collect();
    let all = geometric_checkpoints(inc.len());
    let (mut checkpoints, mut estimates, mut skipped, mut tail) = (vec![], vec![], vec![], vec![]);
    let (mut s, mut l) = (0.0, 0.0);
    let mut next = 0;
    for j in 0..inc.len() {
        s += lw[j];
        l += inc[j];
        if all[next] == j + 1 {
            let n = (j + 1) as f64;
            if l > 0.0 {
                checkpoints.push(j + 1);
                estimates.push((s + l.ln()) / n);
                tail.push(l.ln() / n);
            } else {
                skipped.push(j + 1);
            }
            next += 1;
        }
    }
    Ok(MultiplicativeReport {
        report: report(
            "wi_multiplicative",
            traj.seed,
            mean_log_phi,
            checkpoints,
            estimates,
            se_of_mean(&lw),
            skipped,
        ),
        log_information_term: tail,
    })
}

/// Run `f` on independent paths for each seed in parallel; results follow
/// the order of `seeds`.
pub fn across_seeds<T: Send>(
    process: &Process,
    n: usize,
    seeds: &[u64],
    f: impl Fn(&Trajectory) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    seeds
        .par_iter()
        .map(|&seed| simulate(process, n, seed).and_then(|t| f(&t)))
        .collect()
}

/// Least-squares slope of `ln(mean |error|)` against `ln n` over checkpoints
/// `>= min_n`, errors averaged over the reports.
pub fn error_decay_slope(reports: &[ConvergenceReport], min_n: usize) -> Option<f64> {
    let first = reports.first()?;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (i, &n) in first.checkpoints.iter().enumerate() {
        if n < min_n {
            continue;
        }
        let mean_err = reports
            .iter()
            .map(|r| (r.estimates[i] - r.target).abs())
            .sum::<f64>()
            / reports.len() as f64;
        if mean_err > 0.0 {
            xs.push((n as f64).ln());
            ys.push(mean_err.ln());
        }
    }
    if xs.len() < 2 {
        return None;
    }
    let (mx, _) = mean_var(&xs);
    let (my, _) = mean_var(&ys);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Some(sxy / sxx)
}

/// `{:.16e}`: 17 significant digits, round-trips every `f64`.
pub fn format_number(v: f64) -> String {
    format!("{v:.16e}")
}

/// Write reports as CSV rows `(seed, n_checkpoint, statistic, value, target, abs_error)`.
pub fn write_reports_csv<W: Write>(out: W, reports: &[ConvergenceReport]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let io = |e: csv::Error| Error::invalid(format!("csv output failed: {e}"));
    w.write_record(["seed", "n_checkpoint", "statistic", "value", "target", "abs_error"])
        .map_err(io)?;
    for r in reports {
        for (&n, &v) in r.checkpoints.iter().zip(&r.estimates) {
            w.write_record([
                r.seed.to_string(),
                n.to_string(),
                r.statistic.clone(),
                format_number(v),
                format_number(r.target),
                format_number((v - r.target).abs()),
            ])
            .map_err(io)?;
        }
    }
    w.flush().map_err(|e| Error::invalid(format!("csv output failed: {e}")))?;
    Ok(())
}
