//! The alternating client/consensus training protocol.
//!
//! One epoch runs four lockstep phases:
//!
//! 1. every client takes `T_C` gradient steps from its server's model,
//! 2. each server averages its clients' final models,
//! 3. servers run `T_S` synchronous consensus iterations `W <- A W`,
//! 4. each server broadcasts its model back to its clients.
//!
//! All reductions (client averages, consensus row sums) run in ascending
//! index order, so sequential and parallel execution produce bit-identical
//! trajectories. The step-size gate `gamma < min(1/(L T_C), 1/(mu T_C))`
//! is enforced before a run unless explicitly overridden, and every client
//! iterate is checked against the ball on which the gradient bound `theta`
//! was certified; leaving it flags the run as uncertified rather than
//! failing it.

use crate::linalg::{deviation_matrix, mean_vector, spectral_norm};
use crate::losses::{LossError, LossModel, ModelParams, SmoothnessConstants};
use crate::topology::MixingMatrix;
use nalgebra::DVector;
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use std::collections::BTreeMap;
use thiserror::Error;

/// Relative slack on the certification-ball radius before an iterate
/// counts as escaped; absorbs floating-point dust on the boundary.
const REGION_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(
        "step size {gamma} violates the convergence gate \
         min(1/(L*T_C), 1/(mu*T_C)) = {bound}; override the gate to run anyway"
    )]
    StepSizeViolation { gamma: f64, bound: f64 },
    #[error("step size must be finite and non-negative, got {0}")]
    InvalidStepSize(f64),
    #[error("epoch schedule needs t_c >= 1 and t_s >= 1, got t_c={t_c}, t_s={t_s}")]
    InvalidSchedule { t_c: usize, t_s: usize },
    #[error("{0}")]
    Loss(#[from] LossError),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("mixing matrix is {matrix}x{matrix} but the federation has {servers} servers")]
    MixingDimension { matrix: usize, servers: usize },
    #[error("server ids must cover 0..{expected} exactly; found server {got}")]
    ServerIdGap { expected: usize, got: usize },
    #[error("duplicate client id {client} under server {server}")]
    DuplicateClient { server: usize, client: usize },
    #[error("initial models: expected {expected} vectors, got {got}")]
    InitCount { expected: usize, got: usize },
    #[error("cannot aggregate an empty model list")]
    EmptyAggregation,
    #[error(
        "non-finite value at {} (step size too large?)",
        overflow_site(*epoch, *server, *client, *step)
    )]
    NumericOverflow {
        epoch: Option<usize>,
        server: usize,
        client: Option<usize>,
        step: usize,
    },
}

/// Human-readable location of a numeric overflow; `client` distinguishes a
/// gradient step from a consensus iteration.
fn overflow_site(epoch: Option<usize>, server: usize, client: Option<usize>, step: usize) -> String {
    let mut site = String::new();
    if let Some(p) = epoch {
        site.push_str(&format!("epoch {p}, "));
    }
    site.push_str(&format!("server {server}"));
    match client {
        Some(c) => site.push_str(&format!(", client {c}, gradient step {step}")),
        None => site.push_str(&format!(", consensus iteration {step}")),
    }
    site
}

/// Whether independent work (clients within a phase, server rows within a
/// consensus iteration) runs on the rayon pool or on the calling thread.
///
/// Without the `parallel` feature both variants run sequentially. Results
/// are bit-identical in every case.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecMode {
    Sequential,
    Parallel,
}

/// Per-epoch iteration counts: `t_c` client gradient steps followed by
/// `t_s` server consensus steps.
#[derive(Debug, Clone, Copy)]
pub struct EpochSchedule {
    t_c: usize,
    t_s: usize,
}

impl EpochSchedule {
    pub fn new(t_c: usize, t_s: usize) -> Result<Self, EngineError> {
        if t_c < 1 || t_s < 1 {
            return Err(EngineError::InvalidSchedule { t_c, t_s });
        }
        Ok(Self { t_c, t_s })
    }

    pub fn t_c(&self) -> usize {
        self.t_c
    }

    pub fn t_s(&self) -> usize {
        self.t_s
    }

    /// Total iterations per epoch.
    pub fn t_e(&self) -> usize {
        self.t_c + self.t_s
    }
}

/// One client's local model and risk function.
#[derive(Debug, Clone)]
pub struct ClientState {
    w: ModelParams,
    model: LossModel,
}

impl ClientState {
    pub fn new(w: ModelParams, model: LossModel) -> Result<Self, EngineError> {
        if w.len() != model.dim() {
            return Err(EngineError::DimensionMismatch {
                expected: model.dim(),
                got: w.len(),
            });
        }
        Ok(Self { w, model })
    }

    pub fn w(&self) -> &ModelParams {
        &self.w
    }

    pub fn model(&self) -> &LossModel {
        &self.model
    }

    /// One gradient step `w <- w - gamma * grad f(w)`: exactly one gradient
    /// evaluation, coordinates updated in ascending order.
    pub fn local_update(&mut self, gamma: f64) -> Result<(), EngineError> {
        let mut grad = DVector::zeros(self.w.len());
        self.model.gradient_into(&self.w, &mut grad)?;
        if !grad.iter().all(|v| v.is_finite()) {
            return Err(EngineError::NumericOverflow {
                epoch: None,
                server: self.model.server_id(),
                client: Some(self.model.client_id()),
                step: 0,
            });
        }
        for l in 0..self.w.len() {
            self.w[l] -= gamma * grad[l];
        }
        Ok(())
    }
}

/// One server's model and its clients.
#[derive(Debug, Clone)]
pub struct ServerState {
    w: ModelParams,
    clients: Vec<ClientState>,
}

impl ServerState {
    pub fn new(w: ModelParams, clients: Vec<ClientState>) -> Result<Self, EngineError> {
        if clients.is_empty() {
            return Err(EngineError::EmptyAggregation);
        }
        for c in &clients {
            if c.w.len() != w.len() {
                return Err(EngineError::DimensionMismatch {
                    expected: w.len(),
                    got: c.w.len(),
                });
            }
        }
        Ok(Self { w, clients })
    }

    pub fn w(&self) -> &ModelParams {
        &self.w
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    /// Runs `t_c` local updates on every client and returns the final
    /// client models. Client state is updated in place; callers are
    /// expected to have broadcast the server model beforehand.
    pub fn run_client_phase(
        &mut self,
        t_c: usize,
        gamma: f64,
    ) -> Result<Vec<ModelParams>, EngineError> {
        for c in &mut self.clients {
            for _ in 0..t_c {
                c.local_update(gamma)?;
            }
        }
        Ok(self.clients.iter().map(|c| c.w.clone()).collect())
    }
}

/// Mean of the given models, accumulated in ascending index order.
pub fn aggregate(models: &[ModelParams]) -> Result<ModelParams, EngineError> {
    let Some(first) = models.first() else {
        return Err(EngineError::EmptyAggregation);
    };
    let d = first.len();
    let mut acc = DVector::zeros(d);
    for m in models {
        if m.len() != d {
            return Err(EngineError::DimensionMismatch {
                expected: d,
                got: m.len(),
            });
        }
        for l in 0..d {
            acc[l] += m[l];
        }
    }
    let count = models.len() as f64;
    for l in 0..d {
        acc[l] /= count;
    }
    Ok(acc)
}

/// Initial server models: one shared vector or one per server.
#[derive(Debug, Clone)]
pub enum FederationInit {
    Shared(ModelParams),
    PerServer(Vec<ModelParams>),
}

/// Controls for [`Federation::run`].
#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub num_epochs: usize,
    /// Stop early once `max_i ||w^i_p - w^i_{p-1}||` falls below this.
    pub stop_tolerance: Option<f64>,
    /// Keep per-step drift and per-iteration consensus logs (off by
    /// default; snapshots always capture epoch boundaries).
    pub record_iterates: bool,
    /// Skip the step-size gate. The resulting record is marked
    /// uncertified when the gate would have failed.
    pub override_step_gate: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            num_epochs: 0,
            stop_tolerance: None,
            record_iterates: false,
            override_step_gate: false,
        }
    }
}

impl RunOptions {
    pub fn new(num_epochs: usize) -> Self {
        Self {
            num_epochs,
            ..Self::default()
        }
    }
}

/// State of the federation at one epoch boundary.
#[derive(Debug, Clone)]
pub struct EpochSnapshot {
    pub epoch: usize,
    pub server_models: Vec<ModelParams>,
    /// Cross-server average `w_bar_p`.
    pub mean_model: ModelParams,
    /// `max_i ||w^i_p - w_bar_p||`.
    pub consensus_error: f64,
    /// Spectral norm of the stacked deviation matrix `W_p - 1 w_bar_p'`.
    pub deviation_norm: f64,
    /// Largest `||w^{ij}_s - w^i_{p-1}||` observed during the epoch's
    /// client phase (0 for the initial snapshot).
    pub max_client_drift: f64,
}

/// Optional per-iteration logs for one epoch.
#[derive(Debug, Clone)]
pub struct IterateLog {
    pub epoch: usize,
    /// `client_drift[k][t]` is client `k`'s distance from its server's
    /// epoch-start model after local step `t`; clients are indexed in
    /// (server, client) order.
    pub client_drift: Vec<Vec<f64>>,
    /// `max_i ||w^i - w_bar||` after each consensus iteration.
    pub consensus_deviation: Vec<f64>,
}

/// Complete output of a run: epoch-boundary snapshots plus certification
/// metadata.
#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub snapshots: Vec<EpochSnapshot>,
    /// Largest client drift seen anywhere in the run.
    pub max_drift: f64,
    /// Largest movement of the cross-server average during any consensus
    /// iteration; double stochasticity keeps this at rounding level.
    pub max_consensus_mean_shift: f64,
    /// Whether some iterate left the theta-certification ball.
    pub region_escaped: bool,
    pub first_escape_epoch: Option<usize>,
    /// Whether the step size satisfied the convergence gate.
    pub step_gate_satisfied: bool,
    /// Per-epoch logs; empty unless requested in [`RunOptions`].
    pub iterate_logs: Vec<IterateLog>,
}

impl TrajectoryRecord {
    pub fn final_snapshot(&self) -> &EpochSnapshot {
        self.snapshots.last().expect("records hold at least epoch 0")
    }

    /// Bound checks are only meaningful when the gate held and no iterate
    /// left the certified region.
    pub fn certified(&self) -> bool {
        self.step_gate_satisfied && !self.region_escaped
    }
}

struct ClientOutcome {
    max_drift: f64,
    escaped: bool,
    drift_log: Option<Vec<f64>>,
}

/// Per-phase parameters shared by every client task.
#[derive(Clone, Copy)]
struct PhaseCtx<'a> {
    gamma: f64,
    t_c: usize,
    center: &'a ModelParams,
    radius: f64,
    epoch: usize,
    record: bool,
}

fn client_task(
    c: &mut ClientState,
    phase_start: &ModelParams,
    ctx: PhaseCtx<'_>,
    server: usize,
    client: usize,
) -> Result<ClientOutcome, EngineError> {
    let d = c.w.len();
    let mut grad = DVector::zeros(d);
    let mut max_drift = 0.0f64;
    let mut escaped = false;
    let mut drift_log = ctx.record.then(|| Vec::with_capacity(ctx.t_c));
    for t in 0..ctx.t_c {
        c.model.gradient_into(&c.w, &mut grad)?;
        if !grad.iter().all(|v| v.is_finite()) {
            return Err(EngineError::NumericOverflow {
                epoch: Some(ctx.epoch),
                server,
                client: Some(client),
                step: t,
            });
        }
        for l in 0..d {
            c.w[l] -= ctx.gamma * grad[l];
        }
        let mut drift_sq = 0.0;
        let mut center_sq = 0.0;
        for l in 0..d {
            let dv = c.w[l] - phase_start[l];
            drift_sq += dv * dv;
            let cv = c.w[l] - ctx.center[l];
            center_sq += cv * cv;
        }
        let drift = drift_sq.sqrt();
        if !drift.is_finite() || !center_sq.is_finite() {
            return Err(EngineError::NumericOverflow {
                epoch: Some(ctx.epoch),
                server,
                client: Some(client),
                step: t,
            });
        }
        max_drift = max_drift.max(drift);
        if let Some(log) = drift_log.as_mut() {
            log.push(drift);
        }
        if center_sq.sqrt() > ctx.radius * (1.0 + REGION_TOL) {
            escaped = true;
        }
    }
    Ok(ClientOutcome {
        max_drift,
        escaped,
        drift_log,
    })
}

/// The whole system: servers with their clients, the mixing matrix, the
/// schedule, and the run's certification bookkeeping.
#[derive(Debug, Clone)]
pub struct Federation {
    servers: Vec<ServerState>,
    mixing: MixingMatrix,
    schedule: EpochSchedule,
    gamma: f64,
    mode: ExecMode,
    constants: SmoothnessConstants,
    region_center: ModelParams,
    epoch: usize,
    max_drift: f64,
    max_mean_shift: f64,
    first_escape_epoch: Option<usize>,
}

impl Federation {
    /// Assembles a federation. `models` must cover server ids `0..M`
    /// (M from the mixing matrix) with at least one client each; clients
    /// are ordered by `(server_id, client_id)`. Every server and client
    /// starts at the initial model, so the post-broadcast invariant holds
    /// from epoch 0.
    pub fn new(
        models: Vec<LossModel>,
        mixing: MixingMatrix,
        schedule: EpochSchedule,
        gamma: f64,
        init: FederationInit,
        constants: SmoothnessConstants,
        mode: ExecMode,
    ) -> Result<Self, EngineError> {
        if !gamma.is_finite() || gamma < 0.0 {
            return Err(EngineError::InvalidStepSize(gamma));
        }
        let m = mixing.dim();
        let mut groups: BTreeMap<usize, Vec<LossModel>> = BTreeMap::new();
        for model in models {
            groups.entry(model.server_id()).or_default().push(model);
        }
        if let Some(&highest) = groups.keys().max() {
            if highest >= m {
                return Err(EngineError::ServerIdGap {
                    expected: m,
                    got: highest,
                });
            }
        }
        let init_models: Vec<ModelParams> = match init {
            FederationInit::Shared(w0) => vec![w0; m],
            FederationInit::PerServer(ws) => {
                if ws.len() != m {
                    return Err(EngineError::InitCount {
                        expected: m,
                        got: ws.len(),
                    });
                }
                ws
            }
        };
        let dim = init_models[0].len();
        for w in &init_models {
            if w.len() != dim {
                return Err(EngineError::DimensionMismatch {
                    expected: dim,
                    got: w.len(),
                });
            }
        }
        let mut servers = Vec::with_capacity(m);
        for i in 0..m {
            let mut group = groups.remove(&i).ok_or(EngineError::ServerIdGap {
                expected: m,
                got: i,
            })?;
            group.sort_by_key(|model| model.client_id());
            for pair in group.windows(2) {
                if pair[0].client_id() == pair[1].client_id() {
                    return Err(EngineError::DuplicateClient {
                        server: i,
                        client: pair[0].client_id(),
                    });
                }
            }
            let clients = group
                .into_iter()
                .map(|model| ClientState::new(init_models[i].clone(), model))
                .collect::<Result<Vec<_>, _>>()?;
            servers.push(ServerState::new(init_models[i].clone(), clients)?);
        }
        let region_center = mean_vector(&init_models);
        Ok(Self {
            servers,
            mixing,
            schedule,
            gamma,
            mode,
            constants,
            region_center,
            epoch: 0,
            max_drift: 0.0,
            max_mean_shift: 0.0,
            first_escape_epoch: None,
        })
    }

    pub fn num_servers(&self) -> usize {
        self.servers.len()
    }

    pub fn dim(&self) -> usize {
        self.region_center.len()
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn schedule(&self) -> EpochSchedule {
        self.schedule
    }

    pub fn mixing(&self) -> &MixingMatrix {
        &self.mixing
    }

    pub fn constants(&self) -> SmoothnessConstants {
        self.constants
    }

    pub fn servers(&self) -> &[ServerState] {
        &self.servers
    }

    pub fn server_models(&self) -> Vec<ModelParams> {
        self.servers.iter().map(|s| s.w.clone()).collect()
    }

    /// The convergence gate `min(1/(L t_c), 1/(mu t_c))`.
    pub fn step_size_gate(&self) -> f64 {
        let t_c = self.schedule.t_c as f64;
        (1.0 / (self.constants.l * t_c)).min(1.0 / (self.constants.mu * t_c))
    }

    /// State snapshot at the current epoch boundary.
    pub fn snapshot(&self) -> EpochSnapshot {
        self.snapshot_with_drift(0.0)
    }

    fn snapshot_with_drift(&self, max_client_drift: f64) -> EpochSnapshot {
        let server_models = self.server_models();
        let mean_model = mean_vector(&server_models);
        let consensus_error = server_models
            .iter()
            .map(|w| (w - &mean_model).norm())
            .fold(0.0, f64::max);
        let deviation_norm = spectral_norm(&deviation_matrix(&server_models, &mean_model));
        EpochSnapshot {
            epoch: self.epoch,
            server_models,
            mean_model,
            consensus_error,
            deviation_norm,
            max_client_drift,
        }
    }

    fn client_phase(&mut self, record: bool) -> Result<(f64, Option<Vec<Vec<f64>>>), EngineError> {
        let starts: Vec<ModelParams> = self.servers.iter().map(|s| s.w.clone()).collect();
        let ctx = PhaseCtx {
            gamma: self.gamma,
            t_c: self.schedule.t_c,
            center: &self.region_center,
            radius: self.constants.region_radius,
            epoch: self.epoch + 1,
            record,
        };

        #[cfg(feature = "parallel")]
        let outcomes: Vec<Vec<Result<ClientOutcome, EngineError>>> =
            if self.mode == ExecMode::Parallel {
                self.servers
                    .par_iter_mut()
                    .enumerate()
                    .map(|(i, s)| {
                        let start = &starts[i];
                        s.clients
                            .par_iter_mut()
                            .enumerate()
                            .map(|(j, c)| client_task(c, start, ctx, i, j))
                            .collect()
                    })
                    .collect()
            } else {
                sequential_client_phase(&mut self.servers, &starts, ctx)
            };
        #[cfg(not(feature = "parallel"))]
        let outcomes = sequential_client_phase(&mut self.servers, &starts, ctx);

        let mut max_drift = 0.0f64;
        let mut escaped = false;
        let mut logs = record.then(Vec::new);
        for server_outcomes in outcomes {
            for outcome in server_outcomes {
                let outcome = outcome?;
                max_drift = max_drift.max(outcome.max_drift);
                escaped |= outcome.escaped;
                if let (Some(logs), Some(log)) = (logs.as_mut(), outcome.drift_log) {
                    logs.push(log);
                }
            }
        }
        if escaped && self.first_escape_epoch.is_none() {
            self.first_escape_epoch = Some(self.epoch + 1);
        }
        Ok((max_drift, logs))
    }

    fn aggregate_phase(&mut self) {
        for s in &mut self.servers {
            let d = s.w.len();
            let count = s.clients.len() as f64;
            for l in 0..d {
                let mut acc = 0.0;
                for c in &s.clients {
                    acc += c.w[l];
                }
                s.w[l] = acc / count;
            }
        }
    }

    fn consensus_core(&mut self, record: bool) -> Result<Option<Vec<f64>>, EngineError> {
        let mut prev: Vec<ModelParams> = self.servers.iter().map(|s| s.w.clone()).collect();
        let mean_before = mean_vector(&prev);
        let mut next = prev.clone();
        let mut deviations = record.then(|| Vec::with_capacity(self.schedule.t_s));
        for it in 0..self.schedule.t_s {
            mix_once(&self.mixing, &prev, &mut next, self.mode);
            for (i, w) in next.iter().enumerate() {
                if !w.iter().all(|v| v.is_finite()) {
                    return Err(EngineError::NumericOverflow {
                        epoch: Some(self.epoch + 1),
                        server: i,
                        client: None,
                        step: it,
                    });
                }
            }
            // double stochasticity should keep the running average fixed;
            // track the worst observed violation for certification
            let mean = mean_vector(&next);
            self.max_mean_shift = self.max_mean_shift.max((&mean - &mean_before).norm());
            if let Some(devs) = deviations.as_mut() {
                let worst = next.iter().map(|w| (w - &mean).norm()).fold(0.0, f64::max);
                devs.push(worst);
            }
            std::mem::swap(&mut prev, &mut next);
        }
        for (s, w) in self.servers.iter_mut().zip(prev) {
            s.w = w;
        }
        Ok(deviations)
    }

    /// Applies `t_s` consensus iterations to the current server models.
    pub fn run_consensus_phase(&mut self) -> Result<(), EngineError> {
        self.consensus_core(false).map(|_| ())
    }

    fn broadcast(&mut self) {
        for s in &mut self.servers {
            for c in &mut s.clients {
                c.w.copy_from(&s.w);
            }
        }
    }

    /// One full epoch: client phase, aggregation, consensus, broadcast.
    /// Returns the new epoch-boundary snapshot.
    pub fn run_epoch(&mut self) -> Result<EpochSnapshot, EngineError> {
        let (snapshot, _) = self.epoch_core(false)?;
        Ok(snapshot)
    }

    fn epoch_core(
        &mut self,
        record: bool,
    ) -> Result<(EpochSnapshot, Option<IterateLog>), EngineError> {
        let (epoch_drift, drift_logs) = self.client_phase(record)?;
        self.aggregate_phase();
        let consensus_devs = self.consensus_core(record)?;
        self.broadcast();
        self.epoch += 1;
        self.max_drift = self.max_drift.max(epoch_drift);
        let log = record.then(|| IterateLog {
            epoch: self.epoch,
            client_drift: drift_logs.unwrap_or_default(),
            consensus_deviation: consensus_devs.unwrap_or_default(),
        });
        Ok((self.snapshot_with_drift(epoch_drift), log))
    }

    /// Runs up to `num_epochs` epochs (stopping early at `stop_tolerance`
    /// if set) and returns the trajectory, including the epoch-0 snapshot.
    pub fn run(&mut self, options: RunOptions) -> Result<TrajectoryRecord, EngineError> {
        let gate = self.step_size_gate();
        let gate_ok = self.gamma < gate;
        if !gate_ok && !options.override_step_gate {
            return Err(EngineError::StepSizeViolation {
                gamma: self.gamma,
                bound: gate,
            });
        }
        let mut record = TrajectoryRecord {
            snapshots: vec![self.snapshot()],
            max_drift: self.max_drift,
            max_consensus_mean_shift: self.max_mean_shift,
            region_escaped: self.first_escape_epoch.is_some(),
            first_escape_epoch: self.first_escape_epoch,
            step_gate_satisfied: gate_ok,
            iterate_logs: Vec::new(),
        };
        for _ in 0..options.num_epochs {
            let prev_models: Option<Vec<ModelParams>> =
                options.stop_tolerance.map(|_| self.server_models());
            let (snapshot, log) = self.epoch_core(options.record_iterates)?;
            record.snapshots.push(snapshot);
            if let Some(log) = log {
                record.iterate_logs.push(log);
            }
            if let (Some(tol), Some(prev)) = (options.stop_tolerance, prev_models) {
                let moved = self
                    .servers
                    .iter()
                    .zip(&prev)
                    .map(|(s, w)| (&s.w - w).norm())
                    .fold(0.0, f64::max);
                if moved < tol {
                    break;
                }
            }
        }
        record.max_drift = self.max_drift;
        record.max_consensus_mean_shift = self.max_mean_shift;
        record.region_escaped = self.first_escape_epoch.is_some();
        record.first_escape_epoch = self.first_escape_epoch;
        Ok(record)
    }
}

fn sequential_client_phase(
    servers: &mut [ServerState],
    starts: &[ModelParams],
    ctx: PhaseCtx<'_>,
) -> Vec<Vec<Result<ClientOutcome, EngineError>>> {
    servers
        .iter_mut()
        .enumerate()
        .map(|(i, s)| {
            let start = &starts[i];
            s.clients
                .iter_mut()
                .enumerate()
                .map(|(j, c)| client_task(c, start, ctx, i, j))
                .collect()
        })
        .collect()
}

/// One synchronous consensus iteration: `next[i] = sum_j a_ij prev[j]`,
/// accumulated over the row support in ascending column order.
fn mix_once(mixing: &MixingMatrix, prev: &[ModelParams], next: &mut [ModelParams], mode: ExecMode) {
    let apply = |i: usize, out: &mut ModelParams| {
        let d = out.len();
        out.fill(0.0);
        for &(j, a) in mixing.row_support(i) {
            let src = &prev[j];
            for l in 0..d {
                out[l] += a * src[l];
            }
        }
    };
    #[cfg(feature = "parallel")]
    if mode == ExecMode::Parallel {
        next.par_iter_mut().enumerate().for_each(|(i, out)| apply(i, out));
        return;
    }
    #[cfg(not(feature = "parallel"))]
    let _ = mode;
    for (i, out) in next.iter_mut().enumerate() {
        apply(i, out);
    }
}
