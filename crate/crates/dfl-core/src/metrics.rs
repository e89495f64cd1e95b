//! Per-epoch diagnostics derived from a run record, plus CSV export.
//!
//! Every quantity is recomputed from the recorded server models, so a
//! metrics row never depends on what the engine chose to cache. Numbers
//! are written with 17 significant digits, which round-trip to the exact
//! same float on parse.

use crate::engine::TrajectoryRecord;
use crate::linalg::mean_vector;
use crate::losses::{global_objective, LossError, LossModel, ModelParams};
use crate::theory::TheoryBounds;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

/// Column order of the metrics CSV; [`export_csv`] and [`parse_csv`] both
/// pin to exactly this header.
pub const CSV_HEADER: &str =
    "epoch,consensus_err_max,consensus_err_mean,gap_max,gap_avg,lemma1_bound,lemma4_bound,epsilon,objective";

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("record holds no snapshots")]
    EmptyRecord,
    #[error("snapshot {epoch} holds no server models")]
    EmptySnapshot { epoch: usize },
    #[error("reference model has dimension {expected}, snapshot models have {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{0}")]
    Loss(#[from] LossError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
}

/// One row of diagnostics at an epoch boundary.
///
/// The bound columns are `NaN` when no [`TheoryBounds`] was supplied (or,
/// for `epsilon`, when the step size is zero and the bound is undefined).
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// `max_i ||w^i_p - w_bar_p||`.
    pub consensus_err_max: f64,
    /// `(1/M) sum_i ||w^i_p - w_bar_p||`.
    pub consensus_err_mean: f64,
    /// `max_i ||w^i_p - w*||`.
    pub gap_max: f64,
    /// `||w_bar_p - w*||`.
    pub gap_avg: f64,
    /// Server-deviation bound at this epoch.
    pub lemma1_bound: f64,
    /// Average-optimality bound at this epoch.
    pub lemma4_bound: f64,
    /// Steady-state radius; constant across epochs.
    pub epsilon: f64,
    /// Pooled objective at the mean model, `f(w_bar_p)`.
    pub objective: f64,
}

/// Computes one [`EpochMetrics`] row per snapshot in the record.
///
/// `w_star` is the pooled minimizer the gaps are measured against,
/// `models` the client risks defining the objective column, and `bounds`
/// the optional theoretical envelope (its lemma bounds use the recorded
/// epoch-0 state for the initial gap).
pub fn compute_metrics(
    record: &TrajectoryRecord,
    w_star: &ModelParams,
    bounds: Option<&TheoryBounds>,
    models: &[LossModel],
) -> Result<Vec<EpochMetrics>, MetricsError> {
    if record.snapshots.is_empty() {
        return Err(MetricsError::EmptyRecord);
    }
    for snap in &record.snapshots {
        if snap.server_models.is_empty() {
            return Err(MetricsError::EmptySnapshot { epoch: snap.epoch });
        }
        for w in &snap.server_models {
            if w.len() != w_star.len() {
                return Err(MetricsError::DimensionMismatch {
                    expected: w_star.len(),
                    got: w.len(),
                });
            }
        }
    }

    let first = &record.snapshots[0];
    let initial_gap = (mean_vector(&first.server_models) - w_star).norm();
    let epsilon = bounds.map_or(f64::NAN, TheoryBounds::epsilon_bound);

    let mut rows = Vec::with_capacity(record.snapshots.len());
    for snap in &record.snapshots {
        let mean = mean_vector(&snap.server_models);
        let mut consensus_err_max: f64 = 0.0;
        let mut consensus_sum = 0.0;
        let mut gap_max: f64 = 0.0;
        for w in &snap.server_models {
            let dev = (w - &mean).norm();
            consensus_err_max = consensus_err_max.max(dev);
            consensus_sum += dev;
            gap_max = gap_max.max((w - w_star).norm());
        }
        rows.push(EpochMetrics {
            epoch: snap.epoch,
            consensus_err_max,
            consensus_err_mean: consensus_sum / snap.server_models.len() as f64,
            gap_max,
            gap_avg: (&mean - w_star).norm(),
            lemma1_bound: bounds.map_or(f64::NAN, |b| b.server_deviation_bound(snap.epoch)),
            lemma4_bound: bounds
                .map_or(f64::NAN, |b| b.average_optimality_bound(snap.epoch, initial_gap)),
            epsilon,
            objective: global_objective(models, &mean)?,
        });
    }
    Ok(rows)
}

/// 17 significant digits: enough to reproduce any f64 exactly on parse.
fn fmt_full(v: f64) -> String {
    format!("{v:.16e}")
}

fn io_err(path: &Path, source: std::io::Error) -> MetricsError {
    MetricsError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn render(metrics: &[EpochMetrics], sep: char, prefix: &str) -> String {
    let mut out = String::from(prefix);
    out.push_str(&CSV_HEADER.replace(',', &sep.to_string()));
    out.push('\n');
    for row in metrics {
        let _ = write!(out, "{}", row.epoch);
        for v in [
            row.consensus_err_max,
            row.consensus_err_mean,
            row.gap_max,
            row.gap_avg,
            row.lemma1_bound,
            row.lemma4_bound,
            row.epsilon,
            row.objective,
        ] {
            let _ = write!(out, "{sep}{}", fmt_full(v));
        }
        out.push('\n');
    }
    out
}

/// Writes the metrics table as CSV (header always included, one row per
/// epoch).
pub fn export_csv<P: AsRef<Path>>(metrics: &[EpochMetrics], path: P) -> Result<(), MetricsError> {
    let path = path.as_ref();
    std::fs::write(path, render(metrics, ',', "")).map_err(|e| io_err(path, e))
}

/// Same table in gnuplot-friendly form: space-separated, `#`-commented
/// header.
pub fn export_gnuplot<P: AsRef<Path>>(
    metrics: &[EpochMetrics],
    path: P,
) -> Result<(), MetricsError> {
    let path = path.as_ref();
    std::fs::write(path, render(metrics, ' ', "# ")).map_err(|e| io_err(path, e))
}

/// Reads a file written by [`export_csv`] back into metrics rows.
pub fn parse_csv<P: AsRef<Path>>(path: P) -> Result<Vec<EpochMetrics>, MetricsError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let parse_err = |line: usize, msg: String| MetricsError::Parse {
        path: path.display().to_string(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == CSV_HEADER => {}
        Some((_, header)) => {
            return Err(parse_err(1, format!("unexpected header {header:?}")));
        }
        None => return Err(parse_err(1, "empty file".into())),
    }
    let mut rows = Vec::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != 9 {
            return Err(parse_err(line, format!("expected 9 fields, got {}", fields.len())));
        }
        let epoch: usize = fields[0]
            .parse()
            .map_err(|_| parse_err(line, format!("invalid epoch {:?}", fields[0])))?;
        let mut vals = [0.0_f64; 8];
        for (slot, field) in vals.iter_mut().zip(&fields[1..]) {
            *slot = field
                .parse()
                .map_err(|_| parse_err(line, format!("invalid value {field:?}")))?;
        }
        rows.push(EpochMetrics {
            epoch,
            consensus_err_max: vals[0],
            consensus_err_mean: vals[1],
            gap_max: vals[2],
            gap_avg: vals[3],
            lemma1_bound: vals[4],
            lemma4_bound: vals[5],
            epsilon: vals[6],
            objective: vals[7],
        });
    }
    Ok(rows)
}
