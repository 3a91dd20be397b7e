//! One seeded training run from a configuration, and the artifacts it leaves.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use dualhash_core::data::{build_pairs, gen_gaussian_clusters, nearest_centroid_accuracy, Split};
use dualhash_core::metrics::{evaluate, quantization_error, EvalOptions, RetrievalReport};
use dualhash_core::model::{write_params, MlpSpec};
use dualhash_core::numerics::{Matrix, Rng, Vector};
use dualhash_core::optimizer::baselines::{run_baseline, BaselineKind, BaselineParams};
use dualhash_core::optimizer::lyapunov::{l_tilde, LyapunovConfig, PositivityReport};
use dualhash_core::optimizer::{run, Batch, Diagnostics, RunOptions, StoMParams, StoRMParams, Variant};
use dualhash_core::problem::{estimate_lipschitz, HashingProblem, TwoBlockProblem};

use crate::config::{core_field, EvalPoint, ExperimentConfig, Method};
use crate::CliError;

const STREAM_DATA: u64 = 10;
const STREAM_PAIRS: u64 = 11;
const STREAM_INIT: u64 = 12;
const STREAM_LIPSCHITZ: u64 = 13;

/// Everything a run needs before the first iteration.
pub struct Setup {
    pub problem: HashingProblem,
    pub x1: Vector,
    pub query: (Matrix, Vec<u64>),
    pub lipschitz: f64,
    pub centroid_accuracy: f64,
}

pub fn build_setup(cfg: &ExperimentConfig) -> Result<Setup, CliError> {
    let root = Rng::seed_from(cfg.seed);
    let ds = gen_gaussian_clusters(&mut root.split(STREAM_DATA), &cfg.data.cluster_spec())
        .map_err(|e| CliError::Config(core_field("data", e)))?;
    let (features, labels) = ds.part(Split::Train);
    let query = ds.part(Split::Query);
    let pairs = build_pairs(&labels, cfg.data.pair_mode(), &mut root.split(STREAM_PAIRS))
        .map_err(|e| CliError::Config(core_field("data", e)))?;
    let spec = MlpSpec::new(cfg.widths()).map_err(|e| CliError::Config(core_field("model", e)))?;
    let x1 = spec.init_params(&mut root.split(STREAM_INIT));
    let centroid_accuracy = nearest_centroid_accuracy(&features, &labels);
    // Baselines without a W-term still build the problem with a tiny λ; it only
    // feeds the DualHash Lagrangian, which they never evaluate.
    let lambda = if cfg.solver.lambda > 0.0 { cfg.solver.lambda } else { 1e-12 };
    let problem = HashingProblem::new(
        features,
        labels,
        spec,
        cfg.model.alpha_loss,
        pairs,
        cfg.solver.gamma,
        lambda,
    )
    .map_err(|e| CliError::Config(core_field("solver", e)))?;
    let lipschitz = match cfg.solver.lipschitz {
        Some(l) => l,
        None => {
            let u1 = problem.outputs(&x1)?;
            estimate_lipschitz(
                &problem,
                &x1,
                &u1,
                cfg.solver.lipschitz_iters,
                &mut root.split(STREAM_LIPSCHITZ),
            )?
        }
    };
    Ok(Setup {
        problem,
        x1,
        query,
        lipschitz,
        centroid_accuracy,
    })
}

/// One row of `diagnostics.csv`. Empty cells mean "not measured".
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagRow {
    pub iteration: usize,
    pub lagrangian: Option<f64>,
    pub objective: Option<f64>,
    pub lyapunov: Option<f64>,
    pub dx_sq: Option<f64>,
    pub db_sq: Option<f64>,
    pub dlam_sq: Option<f64>,
    pub stationarity: Option<f64>,
    pub quant_error: Option<f64>,
    pub sigma_sq: Option<f64>,
    pub lam_max_abs: Option<f64>,
    pub identity_violation: Option<f64>,
    pub estimator_error_sq: Option<f64>,
    pub plain_error_sq: Option<f64>,
    pub dual_increment_lhs: Option<f64>,
    pub dual_increment_rhs: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Schedule {
    pub eta_k: f64,
    pub rho_k: Option<f64>,
    pub tau: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub batch: Option<usize>,
    pub b1: Option<usize>,
    pub l_tilde: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub method: String,
    pub seed: u64,
    pub iterations: usize,
    pub rows: usize,
    pub train_size: usize,
    pub query_size: usize,
    pub nearest_centroid_accuracy: f64,
    pub lipschitz: f64,
    pub schedule: Schedule,
    pub sampled_r: Option<usize>,
    pub evaluated_at: EvalPoint,
    pub final_objective: f64,
    pub train_quant_error: f64,
    pub max_lam_abs: Option<f64>,
    pub max_identity_violation: Option<f64>,
    pub positivity: Option<PositivityReport>,
    pub warnings: Vec<String>,
    pub retrieval: RetrievalReport,
    pub wall_clock_seconds: f64,
}

pub struct RunOutput {
    pub report: RunReport,
    pub params: Vector,
    pub spec: MlpSpec,
}

fn batch_of(size: usize) -> Batch {
    if size == 0 {
        Batch::Full
    } else {
        Batch::Sampled(size)
    }
}

fn batch_size(b: Batch) -> Option<usize> {
    match b {
        Batch::Full => None,
        Batch::Sampled(k) => Some(k),
    }
}

/// Train and evaluate. Diagnostics rows are pushed into `rows` as they are
/// produced, so a diverged run still leaves its history there.
pub fn run_experiment(cfg: &ExperimentConfig, rows: &mut Vec<DiagRow>) -> Result<RunOutput, CliError> {
    cfg.validate()?;
    let start = Instant::now();
    let setup = build_setup(cfg)?;
    let p = &setup.problem;
    let s = &cfg.solver;
    let l_f = setup.lipschitz;
    let batch = batch_of(s.batch);
    let mut warnings = Vec::new();
    let cadence = cfg.diagnostics.cadence(s.iterations);

    let (params, schedule, sampled_r, final_objective, lam, viol, positivity) = if s.method.is_dualhash() {
        if s.tau * l_f > s.delta_tilde.sqrt() {
            warnings.push(format!(
                "tau * L_F = {:.4} exceeds sqrt(delta_tilde) = {:.4}",
                s.tau * l_f,
                s.delta_tilde.sqrt()
            ));
        }
        let (variant, schedule, lyap) = match s.method {
            Method::DualhashStom => {
                let sp = StoMParams::from_schedule(s.eta, l_f, s.alpha, s.beta, s.tau, batch)
                    .map_err(|e| CliError::Config(core_field("solver", e)))?;
                let lyap = LyapunovConfig::new(l_f, s.tau, s.delta, s.nu, s.alpha, s.beta, sp.eta).ok();
                let schedule = Schedule {
                    eta_k: sp.eta,
                    rho_k: None,
                    tau: Some(s.tau),
                    alpha: Some(s.alpha),
                    beta: Some(s.beta),
                    batch: batch_size(batch),
                    b1: None,
                    l_tilde: None,
                };
                (Variant::StoM(sp), schedule, lyap)
            }
            _ => {
                let lt = l_tilde(l_f, s.tau, s.delta);
                let sp = StoRMParams::from_schedule(s.eta, s.rho, lt, s.tau, s.c_b, batch, s.iterations)
                    .map_err(|e| CliError::Config(core_field("solver", e)))?;
                let lyap = LyapunovConfig::for_storm(l_f, s.tau, s.delta, s.nu, sp.eta).ok();
                let schedule = Schedule {
                    eta_k: sp.eta,
                    rho_k: Some(sp.rho),
                    tau: Some(s.tau),
                    alpha: None,
                    beta: None,
                    batch: batch_size(batch),
                    b1: batch_size(sp.b1),
                    l_tilde: Some(lt),
                };
                (Variant::StoRM(sp), schedule, lyap)
            }
        };
        let positivity = lyap.as_ref().map(|c| c.positivity());
        if let Some(r) = &positivity {
            if !r.all_hold() && s.method == Method::DualhashStom {
                warnings.push("Lyapunov positivity conditions do not all hold for these constants".into());
            }
        }
        let d = &cfg.diagnostics;
        let opts = RunOptions {
            iterations: s.iterations,
            b_init: s.b_init,
            diagnostics: Diagnostics {
                log_every: cadence,
                stationarity: d.stationarity,
                heavy_every: d.heavy_every,
                variance_probe: d.variance_probe,
                estimator_error: d.estimator_error,
                lyapunov: if d.lyapunov { lyap } else { None },
                dual_increment: if d.dual_increment { Some(l_f) } else { None },
            },
            divergence_factor: 1e6,
        };
        let summary = run(p, &variant, setup.x1.clone(), cfg.seed, &opts, |r| {
            let st = r.stationarity;
            rows.push(DiagRow {
                iteration: r.iteration,
                lagrangian: Some(r.lagrangian),
                objective: None,
                lyapunov: r.lyapunov,
                dx_sq: st.map(|s| s.dx_sq),
                db_sq: st.map(|s| s.db_sq),
                dlam_sq: st.map(|s| s.dlam_sq),
                stationarity: st.map(|s| s.total),
                quant_error: r.quant_error,
                sigma_sq: r.sigma_sq,
                lam_max_abs: Some(r.lam_max_abs),
                identity_violation: Some(r.identity_violation),
                estimator_error_sq: r.estimator_error_sq,
                plain_error_sq: r.plain_error_sq,
                dual_increment_lhs: r.dual_increment.map(|d| d.lhs),
                dual_increment_rhs: r.dual_increment.map(|d| d.rhs),
            })
        })?;
        let x = match cfg.eval.point {
            EvalPoint::Last => summary.state.x.clone(),
            EvalPoint::Sampled => summary.x_r.clone(),
        };
        (
            x,
            schedule,
            Some(summary.sampled_r),
            summary.final_lagrangian,
            Some(summary.max_lam_abs),
            Some(summary.max_identity_violation),
            positivity,
        )
    } else {
        let kind = match s.method {
            Method::Sgdm => BaselineKind::Sgdm,
            Method::SpgdWcr => BaselineKind::SpgdWcr,
            _ => BaselineKind::Dhn,
        };
        let bp = BaselineParams {
            kind,
            lambda: s.lambda,
            gamma: s.gamma,
            eta: s.eta / l_f,
            alpha: s.alpha,
            beta: s.beta,
            batch,
        };
        bp.validate().map_err(|e| CliError::Config(core_field("solver", e)))?;
        let summary = run_baseline(p, &bp, setup.x1.clone(), cfg.seed, s.iterations, cadence, |r| {
            rows.push(DiagRow {
                iteration: r.iteration,
                lagrangian: None,
                objective: Some(r.objective),
                lyapunov: None,
                dx_sq: None,
                db_sq: None,
                dlam_sq: None,
                stationarity: None,
                quant_error: Some(r.quant_error),
                sigma_sq: None,
                lam_max_abs: None,
                identity_violation: None,
                estimator_error_sq: None,
                plain_error_sq: None,
                dual_increment_lhs: None,
                dual_increment_rhs: None,
            })
        })?;
        let schedule = Schedule {
            eta_k: bp.eta,
            rho_k: None,
            tau: None,
            alpha: Some(s.alpha),
            beta: Some(s.beta),
            batch: batch_size(batch),
            b1: None,
            l_tilde: None,
        };
        (summary.x, schedule, None, summary.final_objective, None, None, None)
    };

    let spec = p.spec().clone();
    let db_u = spec.forward_all(&params, p.features())?;
    let q_u = spec.forward_all(&params, &setup.query.0)?;
    let eval = EvalOptions {
        top_n: cfg.eval.top_n,
        topk: cfg.eval.topk.clone(),
        pr_points: cfg.eval.pr_points,
    };
    let retrieval = evaluate(&q_u, &setup.query.1, &db_u, p.labels(), &eval)?;
    let report = RunReport {
        method: s.method.name().to_string(),
        seed: cfg.seed,
        iterations: s.iterations,
        rows: rows.len(),
        train_size: p.n(),
        query_size: setup.query.1.len(),
        nearest_centroid_accuracy: setup.centroid_accuracy,
        lipschitz: l_f,
        schedule,
        sampled_r,
        evaluated_at: cfg.eval.point,
        final_objective,
        train_quant_error: quantization_error(&db_u),
        max_lam_abs: lam,
        max_identity_violation: viol,
        positivity,
        warnings,
        retrieval,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    Ok(RunOutput { report, params, spec })
}

pub fn write_diagnostics<W: Write>(rows: &[DiagRow], out: W) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: impl IntoIterator<Item = T>) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// `config.toml`, `diagnostics.csv`, `report.json`, the curve CSVs and
/// (optionally) `params.txt` under `dir`.
pub fn write_artifacts(dir: &Path, cfg: &ExperimentConfig, rows: &[DiagRow], out: &RunOutput) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.toml"), cfg.to_toml_string())?;
    write_diagnostics(rows, BufWriter::new(File::create(dir.join("diagnostics.csv"))?))?;
    let mut json = serde_json::to_string_pretty(&out.report)?;
    json.push('\n');
    fs::write(dir.join("report.json"), json)?;
    let r = &out.report.retrieval;
    write_csv(&dir.join("pr_curve.csv"), &["recall", "precision"], r.pr_curve.iter().copied())?;
    write_csv(&dir.join("topk.csv"), &["k", "precision"], r.ap_at_topk.iter().copied())?;
    write_csv(
        &dir.join("hamming_hist.csv"),
        &["distance", "intra", "inter"],
        r.intra_hist.iter().zip(&r.inter_hist).enumerate().map(|(d, (a, b))| (d, *a, *b)),
    )?;
    if cfg.output.write_params {
        let mut f = BufWriter::new(File::create(dir.join("params.txt"))?);
        write_params(&out.spec, &out.params, &mut f)?;
        f.flush()?;
    }
    Ok(())
}
