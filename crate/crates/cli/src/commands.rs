use nalgebra::DMatrix;
use serde_json::{json, Value};

use werate_core::gaussian::{
    gaussian_rate_normalizers, mc_weighted_entropy, we_constant_wf, we_exp_quadratic, we_quadratic_wf,
    ExpQuadraticWF, GaussianModel, MCOracleConfig,
};
use werate_core::iid::{iid_additive_rates, iid_multiplicative_rates, iid_multiplicative_we};
use werate_core::markov::{
    doeblin_report, entropy_rate, joint_we_additive_series, markov_joint_pmf, primary_rate_additive,
    secondary_rate_additive, FiniteMarkovModel, Initial,
};
use werate_core::model::{
    joint_weighted_entropy_enumerated, product_pmf, standard_entropy, weighted_entropy, DiscreteModel, JointWF,
};
use werate_core::pressure::{kl_twisted_vs_tilted, pressure_estimate, randomized_audit, twist, variational_audit};
use werate_core::spectral::{
    exact_joint_we_multiplicative, primary_rate_multiplicative, secondary_rate_multiplicative, KernelOperator,
    KrOptions,
};
use werate_core::trajectory::{
    across_seeds, empirical_smb, empirical_wi_additive, empirical_wi_multiplicative, geometric_checkpoints,
    write_reports_csv, ConvergenceReport, Process, Weight,
};
use werate_core::{Error, LogBase};

use crate::config::{
    GaussianConfig, GaussianWeight, IidConfig, MarkovConfig, PressureConfig, ProcessKind, SimulateConfig, Statistic,
};
use crate::error::CliError;
use crate::output::{num, Report};

/// Longest path a single `simulate` run may request.
pub const MAX_PATH_LENGTH: usize = 100_000_000;
/// Cap on total simulated steps over all seeds and statistics.
pub const MAX_TOTAL_STEPS: u128 = 2_000_000_000;

type WeightFn = Box<dyn Fn(&[f64]) -> f64 + Sync>;

pub struct Context {
    pub seed: u64,
    pub base: LogBase,
}

pub struct CommandOutput {
    pub report: Report,
    /// Replaces the report's series CSV when set.
    pub csv: Option<Vec<u8>>,
}

impl CommandOutput {
    fn from_report(report: Report) -> Self {
        Self { report, csv: None }
    }

    pub fn csv_bytes(&self) -> Result<Option<Vec<u8>>, CliError> {
        match &self.csv {
            Some(c) => Ok(Some(c.clone())),
            None if self.report.has_series() => self.report.series_csv().map(Some),
            None => Ok(None),
        }
    }
}

fn chain(states_rows: &[Vec<f64>], lambda: &Option<Vec<f64>>) -> Result<FiniteMarkovModel, CliError> {
    let m = FiniteMarkovModel::new(states_rows.to_vec())?;
    Ok(match lambda {
        Some(l) => m.with_initial(l.clone())?,
        None => m,
    })
}

fn initial_of(lambda: &Option<Vec<f64>>) -> Initial {
    match lambda {
        Some(l) => Initial::Law(l.clone()),
        None => Initial::Stationary,
    }
}

pub fn iid(cfg: &IidConfig, ctx: &Context) -> Result<CommandOutput, CliError> {
    let phi = cfg.phi.clone().expect("resolved");
    let model = DiscreteModel::new(cfg.pmf.clone(), phi)?;
    let mut r = Report::new(ctx.base);
    let add = iid_additive_rates(&model);
    r.log("A0", add.a0);
    r.log("A1", add.a1);
    r.log("entropy", standard_entropy(model.pmf()));
    r.log("weighted_entropy", weighted_entropy(&model));
    r.plain("mean_phi", model.mean_phi());

    let mult = match iid_multiplicative_rates(&model) {
        Ok(m) => Some(m),
        Err(Error::NegativeWeight { .. }) => None,
        Err(e) => return Err(e.into()),
    };
    match mult {
        Some(m) => {
            r.plain("B0", m.b0);
            r.log("B0_log", m.b0_log);
            r.value("B0_vanishes", m.b0_vanishes);
            r.log("B1", m.b1);
        }
        None => r.value("multiplicative", "skipped: weight takes negative values"),
    }

    let mut worst: f64 = 0.0;
    let mut final_add = 0.0;
    for n in 1..=cfg.n_max {
        let we_add = add.we(n);
        final_add = we_add;
        r.log_series(n, "we_additive", we_add);
        let we_mult = if mult.is_some() {
            let v = iid_multiplicative_we(&model, n)?;
            r.log_series(n, "we_multiplicative", v);
            Some(v)
        } else {
            None
        };
        if cfg.verify_enumeration {
            let k = model.alphabet_size();
            let joint = product_pmf(model.pmf(), n)?;
            let e = joint_weighted_entropy_enumerated(&joint, k, n, &JointWF::additive(&model))?;
            worst = worst.max((e - we_add).abs());
            if let Some(v) = we_mult {
                let e = joint_weighted_entropy_enumerated(&joint, k, n, &JointWF::multiplicative(&model))?;
                worst = worst.max((e - v).abs());
            }
        }
    }
    r.log("we_additive_final", final_add);
    r.value("n_max", cfg.n_max);
    if cfg.verify_enumeration {
        r.log("enumeration_max_error", worst);
    }
    Ok(CommandOutput::from_report(r))
}

pub fn markov(cfg: &MarkovConfig, ctx: &Context) -> Result<CommandOutput, CliError> {
    let phi = cfg.phi.clone().expect("resolved");
    let model = chain(&cfg.rows, &cfg.lambda)?;
    let initial = initial_of(&cfg.lambda);
    let mut r = Report::new(ctx.base);
    r.plain_list("pi", model.pi());
    r.log("entropy_rate", entropy_rate(&model));
    let primary = primary_rate_additive(&model, &phi)?;
    r.plain("mean_phi", primary.alpha);
    r.log("A0", primary.a0);
    match secondary_rate_additive(&model, &phi, cfg.series_tol) {
        Ok(s) => {
            r.log("A1", s.a1);
            r.value("A1_depth", s.depth);
            r.log("A1_tail_bound", s.tail_bound);
        }
        Err(Error::Precondition(m)) => {
            r.value("A1", Value::Null);
            r.value("A1_note", m);
        }
        Err(e) => return Err(e.into()),
    }
    let d = doeblin_report(&model, 64);
    r.plain("doeblin_rho", d.rho);
    r.value("doeblin_k", d.k.map_or(Value::Null, Value::from));

    let series = joint_we_additive_series(&model, &phi, cfg.n_max, &initial)?;
    for (i, &we) in series.iter().enumerate() {
        let n = i + 1;
        r.log_series(n, "we_additive", we);
        r.log_series(n, "we_over_n2", we / (n * n) as f64);
    }
    let last = *series.last().expect("n_max >= 1");
    r.log("we_final", last);
    r.log("we_final_over_n2", last / (cfg.n_max * cfg.n_max) as f64);
    r.value("n_max", cfg.n_max);

    if cfg.verify_enumeration {
        let start = model.initial().unwrap_or(model.pi()).to_vec();
        let wf = JointWF::custom({
            let phi = phi.clone();
            move |s: &[usize]| s.iter().map(|&x| phi[x]).sum()
        });
        let mut worst: f64 = 0.0;
        for (i, &we) in series.iter().enumerate() {
            let n = i + 1;
            let joint = markov_joint_pmf(&model, n, &start)?;
            let e = joint_weighted_entropy_enumerated(&joint, model.state_count(), n, &wf)?;
            worst = worst.max((e - we).abs());
        }
        r.log("enumeration_max_error", worst);
    }
    Ok(CommandOutput::from_report(r))
}

fn matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    DMatrix::from_fn(n, rows.first().map_or(0, |r| r.len()), |i, j| rows[i][j])
}

pub fn gaussian(cfg: &GaussianConfig, ctx: &Context) -> Result<CommandOutput, CliError> {
    let n = cfg.dim.expect("resolved");
    let model = match (&cfg.covariance, cfg.ar1_alpha) {
        (Some(c), _) => GaussianModel::new(matrix(c))?,
        (None, Some(alpha)) => GaussianModel::ar1(alpha, n)?,
        (None, None) => unreachable!("resolved config has a model"),
    };
    let mut r = Report::new(ctx.base);
    r.value("dim", n);
    r.plain("ln_det_covariance", model.log_det());
    let (we, mean_phi, phi): (f64, f64, WeightFn) = match cfg.weight {
        GaussianWeight::Constant => {
            let c = cfg.scale * n as f64;
            (we_constant_wf(&model, cfg.scale), c, Box::new(move |_| c))
        }
        GaussianWeight::Quadratic => {
            let a = matrix(cfg.a.as_ref().expect("resolved"));
            let q = we_quadratic_wf(&model, &a)?;
            r.plain("mean_q_phi", q.mean_q_phi);
            if q.mean_phi != 0.0 {
                let norm = gaussian_rate_normalizers(&model, q.we, q.mean_phi, q.mean_q_phi)?;
                r.log("rate_normalizer", norm.mean_normalized);
            }
            let phi = move |x: &[f64]| {
                let v = nalgebra::DVector::from_column_slice(x);
                v.dot(&(&a * &v))
            };
            (q.we, q.mean_phi, Box::new(phi))
        }
        GaussianWeight::ExpQuadratic => {
            let a = matrix(cfg.a.as_ref().expect("resolved"));
            let t = cfg.t.clone().expect("resolved");
            let e = we_exp_quadratic(&model, &a, &t)?;
            let wf = ExpQuadraticWF::new(&model, a, &t)?;
            (e.we, e.mean_phi, Box::new(move |x: &[f64]| wf.eval(x)))
        }
    };
    let h = werate_core::gaussian::gaussian_entropy(&model);
    r.log("entropy", h);
    r.log("we", we);
    r.plain("mean_phi", mean_phi);
    r.log_series(n, "entropy", h);
    r.log_series(n, "we", we);
    if cfg.mc_samples > 0 {
        let mc = MCOracleConfig {
            samples: cfg.mc_samples,
            seed: ctx.seed,
            batches: 100.min(cfg.mc_samples),
        };
        let est = mc_weighted_entropy(&model, phi, &mc)?;
        r.log("mc_mean", est.mean);
        r.log("mc_se", est.se);
        r.plain("mc_z", if est.se > 0.0 { (we - est.mean).abs() / est.se } else { f64::NAN });
    }
    Ok(CommandOutput::from_report(r))
}

pub fn pressure(cfg: &PressureConfig, ctx: &Context) -> Result<CommandOutput, CliError> {
    let model = chain(&cfg.rows, &cfg.lambda)?;
    let op = KernelOperator::from_markov(&model, &cfg.phi)?;
    let opts = KrOptions::default();
    let prim = primary_rate_multiplicative(&op, &opts)?;
    let eigen = &prim.eigen;
    let mut r = Report::new(ctx.base);
    r.plain("mu", prim.mu);
    r.log("B0", prim.b0);
    r.plain("operator_norm", prim.operator_norm);
    r.plain("gap_estimate", eigen.gap_estimate);
    r.plain_list("phi_right", &eigen.phi_right);
    r.plain_list("psi_left", &eigen.psi_left);
    r.plain("residual_right", eigen.residual_right);
    r.plain("residual_left", eigen.residual_left);
    r.value("iterations", eigen.iterations);
    r.value("doeblin_k", eigen.doeblin_k);
    r.plain("hilbert_schmidt", prim.conditions.hilbert_schmidt.hs_value);

    let b1 = secondary_rate_multiplicative(&op, eigen)?;
    r.log("B1", b1.b1);
    r.log("B1_swapped", b1.b1_swapped);

    let t = twist(&op, eigen)?;
    let rows: Vec<Vec<f64>> = (0..op.size())
        .map(|x| (0..op.size()).map(|y| t.chain.p(x, y)).collect())
        .collect();
    r.matrix("twisted_rows", &rows);
    r.plain_list("twisted_pi", &t.pi_tilde);
    r.log("twisted_slack", variational_audit(&t.chain, &op, eigen.mu)?.slack);
    r.log("kl_rate", kl_twisted_vs_tilted(&op, eigen, cfg.n_max)? / cfg.n_max as f64);

    let p = pressure_estimate(&op, cfg.n_max)?;
    for (i, &v) in p.iter().enumerate() {
        r.log_series(i + 1, "pressure", v);
    }
    r.log("pressure_final", *p.last().expect("n_max >= 2"));

    let lambda = model.initial().unwrap_or(model.pi()).to_vec();
    let mut last_rate = f64::NAN;
    for n in geometric_checkpoints(cfg.n_max) {
        let we = exact_joint_we_multiplicative(&op, &lambda, true, n)?;
        last_rate = we.ln_abs / n as f64;
        r.log_series(n, "log_we_rate", last_rate);
    }
    r.log("log_we_rate_final", last_rate);
    r.value("n_max", cfg.n_max);

    if cfg.audit_count > 0 {
        let audit = randomized_audit(&op, eigen, cfg.audit_count, ctx.seed)?;
        r.value("audit_count", cfg.audit_count);
        r.log("audit_min_slack", audit.min_slack);
        r.log("audit_equality_residual", audit.equality_witness_residual);
    }
    Ok(CommandOutput::from_report(r))
}

fn scale_report(rep: &mut ConvergenceReport, base: LogBase) {
    rep.target = base.convert(rep.target);
    rep.final_error = base.convert(rep.final_error);
    rep.batch_se = base.convert(rep.batch_se);
    rep.estimates.iter_mut().for_each(|e| *e = base.convert(*e));
}

fn statistic_name(s: Statistic) -> &'static str {
    match s {
        Statistic::Smb => "smb",
        Statistic::WiAdditive => "wi_additive",
        Statistic::WiMultiplicative => "wi_multiplicative",
    }
}

pub fn simulate(cfg: &SimulateConfig, ctx: &Context) -> Result<CommandOutput, CliError> {
    let stats = cfg.statistics.clone().expect("resolved");
    let total = cfg.n as u128 * cfg.seeds as u128 * stats.len() as u128;
    if cfg.n > MAX_PATH_LENGTH || total > MAX_TOTAL_STEPS {
        return Err(Error::SizeGuard {
            requested: total as f64,
            limit: MAX_TOTAL_STEPS as u64,
        }
        .into());
    }
    let (process, add_weight, add_target, mult_weight, mult_target) = match cfg.process {
        ProcessKind::Chain => {
            let m = chain(cfg.rows.as_ref().expect("resolved"), &cfg.lambda)?;
            let phi = cfg.phi.clone().expect("resolved");
            let mean = m.stationary_mean(&phi);
            let log_phi: Vec<f64> = phi.iter().map(|v| v.ln()).collect();
            let mean_log = m.stationary_mean(&log_phi);
            (Process::Chain(m), Weight::Table(phi.clone()), mean, Weight::Table(phi), mean_log)
        }
        ProcessKind::Ar1 => {
            let alpha = cfg.alpha.expect("resolved");
            let p = Process::ar1(alpha)?;
            let var = 1.0 / (1.0 - alpha * alpha);
            let [c0, c2] = cfg.additive_weight.expect("resolved");
            let [b0, b2] = cfg.log_weight.expect("resolved");
            (
                p,
                Weight::function(move |x| c0 + c2 * x * x),
                c0 + c2 * var,
                Weight::function(move |x| (b0 + b2 * x * x).exp()),
                b0 + b2 * var,
            )
        }
    };
    let seeds: Vec<u64> = (0..cfg.seeds).map(|i| ctx.seed.wrapping_add(i)).collect();
    let mut reports: Vec<ConvergenceReport> = Vec::new();
    let mut summary = serde_json::Map::new();
    for &s in &stats {
        let mut tails: Vec<Option<f64>> = vec![None; seeds.len()];
        let mut runs = match s {
            Statistic::Smb => across_seeds(&process, cfg.n, &seeds, |t| empirical_smb(t, &process))?,
            Statistic::WiAdditive => across_seeds(&process, cfg.n, &seeds, |t| {
                empirical_wi_additive(t, &process, &add_weight, add_target)
            })?,
            Statistic::WiMultiplicative => {
                let out = across_seeds(&process, cfg.n, &seeds, |t| {
                    empirical_wi_multiplicative(t, &process, &mult_weight, mult_target)
                })?;
                for (slot, m) in tails.iter_mut().zip(&out) {
                    *slot = m.log_information_term.last().copied();
                }
                out.into_iter().map(|m| m.report).collect()
            }
        };
        runs.iter_mut().for_each(|rep| scale_report(rep, ctx.base));
        let finals: Vec<f64> = runs.iter().map(|rep| *rep.estimates.last().unwrap_or(&f64::NAN)).collect();
        let mean_final = finals.iter().sum::<f64>() / finals.len() as f64;
        let max_err = runs.iter().map(|rep| rep.final_error).fold(0.0f64, f64::max);
        let per_run: Vec<Value> = runs
            .iter()
            .zip(&tails)
            .map(|(rep, tail)| {
                let mut v = json!({
                    "seed": rep.seed,
                    "final": num(*rep.estimates.last().unwrap_or(&f64::NAN)),
                    "final_error": num(rep.final_error),
                    "batch_se": num(rep.batch_se),
                    "skipped_checkpoints": rep.skipped,
                });
                if let Some(t) = tail {
                    v["log_information_term"] = num(ctx.base.convert(*t));
                }
                v
            })
            .collect();
        summary.insert(
            statistic_name(s).into(),
            json!({
                "target": num(runs[0].target),
                "mean_final": num(mean_final),
                "max_final_error": num(max_err),
                "runs": per_run,
            }),
        );
        reports.extend(runs);
    }
    let mut r = Report::new(ctx.base);
    r.value("n", cfg.n);
    r.value("seeds", seeds.clone());
    r.log("entropy_rate", process.entropy_rate());
    r.value("statistics", Value::Object(summary));
    let mut csv = Vec::new();
    write_reports_csv(&mut csv, &reports)?;
    Ok(CommandOutput { report: r, csv: Some(csv) })
}
