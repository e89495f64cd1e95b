//! The four subcommands: `gen-data`, `simulate`, `bounds`, and `sweep`.
//!
//! Everything funnels through [`assemble`], which turns a validated config
//! into data, models, curvature constants, the mixing matrix, and the
//! theoretical bounds, so every command sees the exact same experiment.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::PathBuf;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{ExperimentConfig, StepSize};
use crate::error::CliError;
use dfl_core::datagen::{export_datasets_csv, generate, import_datasets_csv, optimal_model};
use dfl_core::linalg::{deviation_matrix, mean_vector, spectral_norm};
use dfl_core::losses::estimate_constants;
use dfl_core::metrics::{compute_metrics, export_csv, EpochMetrics};
use dfl_core::theory::max_step_size;
use dfl_core::topology::{contraction_factor, metropolis_weights};
use dfl_core::{
    ClientDataset, EpochSchedule, Federation, FederationInit, LossModel, MixingMatrix,
    ModelParams, RunOptions, SmoothnessConstants, SyntheticSpec, TheoryBounds, TrajectoryRecord,
};

/// RNG stream for drawing initial models; client data streams occupy
/// `0..M*N`, so this can never collide with them.
const INIT_STREAM: u64 = 1 << 62;

/// Slack added to every dominance check, mirroring the acceptance
/// tolerances.
const BOUND_TOL: f64 = 1e-9;
/// Largest admissible movement of the cross-server average during any
/// consensus iteration.
const MEAN_SHIFT_TOL: f64 = 1e-12;
/// Both geometric transients must fall below this before the limiting
/// tolerance `epsilon` is enforced on the final epoch.
const TRANSIENT_TOL: f64 = 1e-12;

/// 17 significant digits: enough for an exact f64 round trip.
fn full(v: f64) -> String {
    format!("{v:.16e}")
}

/// A config resolved into concrete runnable pieces.
pub struct Experiment {
    pub datasets: Vec<ClientDataset>,
    pub models: Vec<LossModel>,
    pub w_star: ModelParams,
    pub constants: SmoothnessConstants,
    pub mixing: MixingMatrix,
    pub inits: Vec<ModelParams>,
    pub gamma: f64,
    /// Convergence gate `min(1/(L t_c), 1/(mu t_c))`.
    pub gate: f64,
    pub sigma_a: f64,
    pub gap0: f64,
    /// Absent when gamma is at or above the gate; such runs cannot be
    /// certified, so no bound is defined for them.
    pub bounds: Option<TheoryBounds>,
}

pub fn assemble(cfg: &ExperimentConfig) -> Result<Experiment, CliError> {
    let graph = cfg.topology.build()?;
    let m = graph.num_servers();
    let kind = cfg.loss.to_kind()?;
    let datasets = load_datasets(cfg, m)?;
    let dim = datasets[0].dim();
    let w_star = optimal_model(&datasets, kind.regularizer())?;
    let models = datasets
        .iter()
        .map(|d| LossModel::new(kind, d.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    let inits = initial_models(cfg, m, dim);
    let center = mean_vector(&inits);
    let radius = cfg
        .run
        .region_radius
        .unwrap_or_else(|| default_radius(&inits, &center, &w_star));
    let constants = estimate_constants(&models, &center, radius)?;
    let gate = max_step_size(&constants, cfg.schedule.t_c);
    let gamma = cfg.step_size.resolve(gate);
    let mixing = metropolis_weights(&graph)?;
    let sigma_a = contraction_factor(&mixing, cfg.schedule.t_s);
    let delta0 = spectral_norm(&deviation_matrix(&inits, &center));
    let gap0 = (&center - &w_star).norm();
    let bounds = if gamma < gate {
        Some(TheoryBounds::new(
            constants,
            sigma_a,
            delta0,
            gamma,
            cfg.schedule.t_c,
            cfg.schedule.t_s,
            m,
        )?)
    } else {
        None
    };
    Ok(Experiment {
        datasets,
        models,
        w_star,
        constants,
        mixing,
        inits,
        gamma,
        gate,
        sigma_a,
        gap0,
        bounds,
    })
}

fn load_datasets(cfg: &ExperimentConfig, m: usize) -> Result<Vec<ClientDataset>, CliError> {
    let datasets = match (&cfg.data.synthetic, &cfg.data.csv) {
        (Some(s), None) => {
            let spec = SyntheticSpec {
                m,
                n: s.clients_per_server,
                d_points: s.points_per_client,
                dim: s.dim,
                w_true: DVector::from_vec(s.w_true.clone()),
                noise_std: s.noise_std,
                feature_std: s.feature_std,
                seed: cfg.run.seed,
            };
            generate(&spec)?
        }
        (None, Some(csv)) => import_datasets_csv(&csv.path)?,
        _ => unreachable!("config validation enforces exactly one data source"),
    };
    let ids: BTreeSet<usize> = datasets.iter().map(|d| d.server_id()).collect();
    let expected: BTreeSet<usize> = (0..m).collect();
    if ids != expected {
        return Err(CliError::Config(format!(
            "dataset covers servers {ids:?} but the topology has {m} servers (ids 0..{m})"
        )));
    }
    Ok(datasets)
}

fn initial_models(cfg: &ExperimentConfig, m: usize, dim: usize) -> Vec<ModelParams> {
    let scale = cfg.run.init_scale;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);
    rng.set_stream(INIT_STREAM);
    let draw = |rng: &mut ChaCha8Rng| DVector::from_fn(dim, |_, _| rng.random_range(-scale..scale));
    match cfg.run.init.as_str() {
        "zeros" => vec![DVector::zeros(dim); m],
        "random-shared" => {
            let w0 = draw(&mut rng);
            vec![w0; m]
        }
        "random-per-server" => (0..m).map(|_| draw(&mut rng)).collect(),
        other => unreachable!("config validation rejects init `{other}`"),
    }
}

/// Certification ball when the config leaves `region_radius` unset: wide
/// enough to contain every initial model, the optimum, and the iterates
/// between them, with a 4x margin.
fn default_radius(inits: &[ModelParams], center: &ModelParams, w_star: &ModelParams) -> f64 {
    let spread = inits
        .iter()
        .map(|w| (w - center).norm())
        .fold(0.0, f64::max);
    4.0 * (spread + (center - w_star).norm() + 1.0)
}

pub fn cmd_gen_data(cfg: &ExperimentConfig) -> Result<(), CliError> {
    if cfg.data.synthetic.is_none() {
        return Err(CliError::Config(
            "gen-data needs a [data.synthetic] table; the config points at an existing CSV".into(),
        ));
    }
    let ex = assemble(cfg)?;
    let run_dir = cfg.run_dir();
    std::fs::create_dir_all(&run_dir).map_err(CliError::io(&run_dir))?;
    let path = run_dir.join("dataset.csv");
    export_datasets_csv(&ex.datasets, &path)?;
    let rows: usize = ex.datasets.iter().map(|d| d.len()).sum();
    println!("dataset={}", path.display());
    println!("rows={rows}");
    let coords: Vec<String> = ex.w_star.iter().map(|v| full(*v)).collect();
    println!("w_star={}", coords.join(","));
    println!("mu={}", full(ex.constants.mu));
    println!("l={}", full(ex.constants.l));
    println!("theta={}", full(ex.constants.theta));
    println!("region_radius={}", full(ex.constants.region_radius));
    Ok(())
}

pub fn cmd_bounds(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let ex = assemble(cfg)?;
    let Some(bounds) = &ex.bounds else {
        return Err(CliError::Config(format!(
            "step size {} is not below the convergence gate min(1/(L T_C), 1/(mu T_C)) = {}; \
             the bounds are undefined",
            ex.gamma, ex.gate
        )));
    };
    println!("sigma_a={}", full(bounds.sigma_a));
    println!("lambda={}", full(bounds.lambda));
    println!("capital_lambda={}", full(bounds.capital_lambda));
    println!("y0={}", full(bounds.y0));
    println!("epsilon={}", full(bounds.epsilon_bound()));
    println!("max_step_size={}", full(ex.gate));
    Ok(())
}

/// What one simulation leaves behind, for the summary line and for sweep
/// rows.
pub struct SimSummary {
    pub run_dir: PathBuf,
    pub sigma_a: f64,
    pub epsilon: f64,
    pub final_consensus: f64,
    pub final_gap_max: f64,
    pub certified: bool,
}

pub fn cmd_simulate(cfg: &ExperimentConfig, quiet: bool) -> Result<SimSummary, CliError> {
    let ex = assemble(cfg)?;
    let run_dir = cfg.run_dir();
    std::fs::create_dir_all(&run_dir).map_err(CliError::io(&run_dir))?;

    let schedule = EpochSchedule::new(cfg.schedule.t_c, cfg.schedule.t_s)?;
    let mut fed = Federation::new(
        ex.models.clone(),
        ex.mixing,
        schedule,
        ex.gamma,
        FederationInit::PerServer(ex.inits),
        ex.constants,
        cfg.run.exec_mode()?,
    )?;
    let record = fed.run(RunOptions {
        num_epochs: cfg.run.num_epochs,
        stop_tolerance: cfg.run.stop_tolerance,
        record_iterates: cfg.flags.record_iterates,
        override_step_gate: cfg.flags.override_step_gate,
    })?;

    let rows = compute_metrics(&record, &ex.w_star, ex.bounds.as_ref(), &ex.models)?;
    export_csv(&rows, run_dir.join("metrics.csv"))?;
    write_final_models(&record, &run_dir)?;
    if cfg.flags.record_iterates {
        write_iterate_logs(&record, &run_dir)?;
    }

    let last = rows.last().expect("records hold at least epoch 0");
    let epsilon = ex
        .bounds
        .as_ref()
        .map_or(f64::NAN, TheoryBounds::epsilon_bound);
    if !quiet {
        println!("run_dir={}", run_dir.display());
        println!("certified={}", record.certified());
        println!(
            "final_gap_max={} epsilon={}",
            full(last.gap_max),
            full(epsilon)
        );
    }

    if record.certified() {
        if let Some(bounds) = &ex.bounds {
            verify_certified(&rows, &record, bounds, ex.gap0)?;
        }
    }

    Ok(SimSummary {
        run_dir,
        sigma_a: ex.sigma_a,
        epsilon,
        final_consensus: last.consensus_err_max,
        final_gap_max: last.gap_max,
        certified: record.certified(),
    })
}

/// Checks a certified trajectory against every bound the theory promises.
/// Any violation is a defect in the theory or the implementation, never in
/// the user's config, and exits with code 3.
fn verify_certified(
    rows: &[EpochMetrics],
    record: &TrajectoryRecord,
    bounds: &TheoryBounds,
    gap0: f64,
) -> Result<(), CliError> {
    for r in rows {
        if !(r.consensus_err_max <= r.lemma1_bound + BOUND_TOL) {
            return Err(CliError::BoundViolation(format!(
                "epoch {}: consensus error {} exceeds the server-deviation bound {}",
                r.epoch,
                full(r.consensus_err_max),
                full(r.lemma1_bound)
            )));
        }
        if !(r.gap_avg <= r.lemma4_bound + BOUND_TOL) {
            return Err(CliError::BoundViolation(format!(
                "epoch {}: average optimality gap {} exceeds its bound {}",
                r.epoch,
                full(r.gap_avg),
                full(r.lemma4_bound)
            )));
        }
    }
    let drift_bound = bounds.client_drift_bound();
    if !(record.max_drift <= drift_bound + BOUND_TOL) {
        return Err(CliError::BoundViolation(format!(
            "client drift {} exceeds the bound gamma*t_c*theta = {}",
            full(record.max_drift),
            full(drift_bound)
        )));
    }
    if !(record.max_consensus_mean_shift < MEAN_SHIFT_TOL) {
        return Err(CliError::BoundViolation(format!(
            "the cross-server average moved by {} during a consensus phase",
            full(record.max_consensus_mean_shift)
        )));
    }
    let last = rows.last().expect("nonempty");
    let p = last.epoch as f64;
    let sigma_transient = bounds.sigma_a.powf(p) * bounds.delta0;
    let lambda_transient = bounds.capital_lambda.powf(p) * gap0;
    let epsilon = bounds.epsilon_bound();
    if sigma_transient < TRANSIENT_TOL && lambda_transient < TRANSIENT_TOL && epsilon.is_finite()
    {
        if !(last.gap_max <= epsilon + BOUND_TOL) {
            return Err(CliError::BoundViolation(format!(
                "final max optimality gap {} exceeds the limiting tolerance epsilon = {}",
                full(last.gap_max),
                full(epsilon)
            )));
        }
    }
    Ok(())
}

fn write_final_models(record: &TrajectoryRecord, run_dir: &std::path::Path) -> Result<(), CliError> {
    let finals = &record.final_snapshot().server_models;
    let dim = finals[0].len();
    let mut out = String::from("server");
    for j in 1..=dim {
        let _ = write!(out, ",w{j}");
    }
    out.push('\n');
    for (i, w) in finals.iter().enumerate() {
        let _ = write!(out, "{i}");
        for v in w.iter() {
            let _ = write!(out, ",{}", full(*v));
        }
        out.push('\n');
    }
    let path = run_dir.join("final_models.csv");
    std::fs::write(&path, out).map_err(CliError::io(path))
}

fn write_iterate_logs(record: &TrajectoryRecord, run_dir: &std::path::Path) -> Result<(), CliError> {
    let mut drift = String::from("epoch,client,step,drift\n");
    let mut consensus = String::from("epoch,iteration,deviation\n");
    for log in &record.iterate_logs {
        for (k, per_step) in log.client_drift.iter().enumerate() {
            for (t, d) in per_step.iter().enumerate() {
                let _ = writeln!(drift, "{},{},{},{}", log.epoch, k, t + 1, full(*d));
            }
        }
        for (q, d) in log.consensus_deviation.iter().enumerate() {
            let _ = writeln!(consensus, "{},{},{}", log.epoch, q + 1, full(*d));
        }
    }
    let drift_path = run_dir.join("iterate_drift.csv");
    std::fs::write(&drift_path, drift).map_err(CliError::io(drift_path))?;
    let consensus_path = run_dir.join("iterate_consensus.csv");
    std::fs::write(&consensus_path, consensus).map_err(CliError::io(consensus_path))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SweepParam {
    Gamma,
    TC,
    TS,
    Topology,
}

impl SweepParam {
    pub fn parse(name: &str) -> Result<Self, CliError> {
        match name {
            "gamma" => Ok(SweepParam::Gamma),
            "t_c" => Ok(SweepParam::TC),
            "t_s" => Ok(SweepParam::TS),
            "topology" => Ok(SweepParam::Topology),
            other => Err(CliError::Config(format!(
                "sweep parameter must be gamma, t_c, t_s, or topology, got `{other}`"
            ))),
        }
    }

    fn key(&self) -> &'static str {
        match self {
            SweepParam::Gamma => "gamma",
            SweepParam::TC => "t_c",
            SweepParam::TS => "t_s",
            SweepParam::Topology => "topology",
        }
    }
}

fn patch(cfg: &mut ExperimentConfig, param: SweepParam, token: &str) -> Result<(), CliError> {
    match param {
        SweepParam::Gamma => cfg.step_size = StepSize::parse(token)?,
        SweepParam::TC => {
            cfg.schedule.t_c = token
                .parse()
                .map_err(|_| CliError::Config(format!("t_c value `{token}` is not a count")))?
        }
        SweepParam::TS => {
            cfg.schedule.t_s = token
                .parse()
                .map_err(|_| CliError::Config(format!("t_s value `{token}` is not a count")))?
        }
        SweepParam::Topology => cfg.topology.repoint(token),
    }
    cfg.validate()
}

fn status_of(err: &CliError) -> &'static str {
    match err.exit_code() {
        3 => "bound-violation",
        4 => "numeric-failure",
        _ => "config-error",
    }
}

pub fn cmd_sweep(base: &ExperimentConfig, param: SweepParam, values: &str) -> Result<(), CliError> {
    let tokens: Vec<&str> = values
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .collect();
    if tokens.is_empty() {
        return Err(CliError::Config("sweep needs at least one value".into()));
    }

    let key = param.key();
    let mut csv = format!(
        "{key},status,certified,sigma_a,epsilon,final_consensus_err_max,final_gap_max,run_dir\n"
    );
    for token in &tokens {
        let mut point = base.clone();
        let outcome = patch(&mut point, param, token).and_then(|()| cmd_simulate(&point, true));
        match outcome {
            Ok(s) => {
                println!("{key}={token} status=ok run_dir={}", s.run_dir.display());
                let _ = writeln!(
                    csv,
                    "{token},ok,{},{},{},{},{},{}",
                    s.certified,
                    full(s.sigma_a),
                    full(s.epsilon),
                    full(s.final_consensus),
                    full(s.final_gap_max),
                    s.run_dir.display()
                );
            }
            Err(e) => {
                let status = status_of(&e);
                eprintln!("{key}={token} status={status}: {e}");
                println!("{key}={token} status={status}");
                let _ = writeln!(csv, "{token},{status},,,,,,");
            }
        }
    }

    let run_dir = base.run_dir();
    std::fs::create_dir_all(&run_dir).map_err(CliError::io(&run_dir))?;
    let path = run_dir.join(format!("sweep_{key}.csv"));
    std::fs::write(&path, csv).map_err(CliError::io(&path))?;
    println!("sweep_csv={}", path.display());
    Ok(())
}
