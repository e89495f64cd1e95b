//! Seeded synthetic regression data and the exact pooled optimum.
//!
//! Features are drawn with independent zero-mean normal entries, labels as
//! `y = w_true'x + noise`. Every client gets its own counter-based RNG
//! stream (one ChaCha stream per client index), so datasets are
//! reproducible and independent of generation order.
//!
//! The convergence bounds all reference the exact minimizer `w*` of the
//! pooled objective on the realized data, not `w_true`; `optimal_model`
//! computes it from the normal equations and certifies it by the gradient
//! residual.

use crate::losses::{
    global_gradient, ClientDataset, DataPoint, LossError, LossKind, LossModel, ModelParams,
};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

/// `optimal_model` rejects solutions whose pooled gradient norm exceeds
/// this; anything larger signals an ill-conditioned system.
const RESIDUAL_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("{name} must be at least 1, got {got}")]
    InvalidCount { name: &'static str, got: usize },
    #[error("w_true has dimension {got}, expected {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("{name} must be {requirement}, got {value}")]
    InvalidStd {
        name: &'static str,
        requirement: &'static str,
        value: f64,
    },
    #[error("ridge coefficient must be finite and non-negative, got {0}")]
    BadRegularizer(f64),
    #[error("no datasets supplied")]
    EmptyInput,
    #[error("datasets mix feature dimensions {expected} and {got}")]
    MixedDims { expected: usize, got: usize },
    #[error("pooled Gram matrix is singular; add a ridge term or more data")]
    SingularSystem,
    #[error("normal-equation solution has gradient residual {residual:.3e} (tolerance 1e-9)")]
    ResidualTooLarge { residual: f64 },
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
    #[error("{0}")]
    Loss(#[from] LossError),
}

/// Configuration for one synthetic experiment: `m` servers times `n`
/// clients, `d_points` observations of dimension `dim` each.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub m: usize,
    pub n: usize,
    pub d_points: usize,
    pub dim: usize,
    pub w_true: ModelParams,
    pub noise_std: f64,
    pub feature_std: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DatagenError> {
        for (name, got) in [
            ("m", self.m),
            ("n", self.n),
            ("d_points", self.d_points),
            ("dim", self.dim),
        ] {
            if got < 1 {
                return Err(DatagenError::InvalidCount { name, got });
            }
        }
        if self.w_true.len() != self.dim {
            return Err(DatagenError::DimMismatch {
                expected: self.dim,
                got: self.w_true.len(),
            });
        }
        if !self.noise_std.is_finite() || self.noise_std < 0.0 {
            return Err(DatagenError::InvalidStd {
                name: "noise_std",
                requirement: "finite and non-negative",
                value: self.noise_std,
            });
        }
        if !self.feature_std.is_finite() || self.feature_std <= 0.0 {
            return Err(DatagenError::InvalidStd {
                name: "feature_std",
                requirement: "finite and positive",
                value: self.feature_std,
            });
        }
        Ok(())
    }
}

/// Generates one dataset per `(server, client)` pair in row-major order.
///
/// Client `k = server*n + client` draws from ChaCha stream `k` of the
/// spec's seed: per point, `dim` feature entries then one noise term.
pub fn generate(spec: &SyntheticSpec) -> Result<Vec<ClientDataset>, DatagenError> {
    spec.validate()?;
    let features = Normal::new(0.0, spec.feature_std).expect("validated std");
    let noise = Normal::new(0.0, spec.noise_std).expect("validated std");
    let mut datasets = Vec::with_capacity(spec.m * spec.n);
    for k in 0..spec.m * spec.n {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(k as u64);
        let mut points = Vec::with_capacity(spec.d_points);
        for _ in 0..spec.d_points {
            let x: Vec<f64> = (0..spec.dim).map(|_| features.sample(&mut rng)).collect();
            let mut dot = 0.0;
            for l in 0..spec.dim {
                dot += spec.w_true[l] * x[l];
            }
            let y = dot + noise.sample(&mut rng);
            points.push(DataPoint::new(x, y));
        }
        datasets.push(ClientDataset::new(points, k / spec.n, k % spec.n)?);
    }
    Ok(datasets)
}

/// Exact minimizer of the pooled objective
/// `(1/M) sum_i (1/N_i) sum_j f^{ij}(w)` with an optional shared ridge
/// term, solved directly from the normal equations.
///
/// The result is certified by evaluating the actual pooled gradient at the
/// solution; a residual above `1e-9` is rejected.
pub fn optimal_model(datasets: &[ClientDataset], reg: f64) -> Result<ModelParams, DatagenError> {
    if datasets.is_empty() {
        return Err(DatagenError::EmptyInput);
    }
    if !reg.is_finite() || reg < 0.0 {
        return Err(DatagenError::BadRegularizer(reg));
    }
    let dim = datasets[0].dim();
    let mut groups: BTreeMap<usize, Vec<&ClientDataset>> = BTreeMap::new();
    for ds in datasets {
        if ds.dim() != dim {
            return Err(DatagenError::MixedDims {
                expected: dim,
                got: ds.dim(),
            });
        }
        groups.entry(ds.server_id()).or_default().push(ds);
    }
    let m = groups.len() as f64;
    let mut h = DMatrix::zeros(dim, dim);
    let mut b = DVector::zeros(dim);
    for group in groups.values() {
        let n_i = group.len() as f64;
        for ds in group {
            let weight = 1.0 / (m * n_i * ds.len() as f64);
            for p in ds.points() {
                for a in 0..dim {
                    let wx = weight * p.x[a];
                    for c in 0..dim {
                        h[(a, c)] += wx * p.x[c];
                    }
                    b[a] += wx * p.y;
                }
            }
        }
    }
    for a in 0..dim {
        h[(a, a)] += reg;
    }
    let chol = h.cholesky().ok_or(DatagenError::SingularSystem)?;
    let w_star = chol.solve(&b);

    let kind = if reg == 0.0 {
        LossKind::LeastSquares
    } else {
        LossKind::Ridge { reg }
    };
    let models: Vec<LossModel> = datasets
        .iter()
        .map(|ds| LossModel::new(kind, ds.clone()))
        .collect::<Result<_, _>>()?;
    let residual = global_gradient(&models, &w_star)?.norm();
    if residual >= RESIDUAL_TOL {
        return Err(DatagenError::ResidualTooLarge { residual });
    }
    Ok(w_star)
}

fn io_err(path: &Path, source: std::io::Error) -> DatagenError {
    DatagenError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes datasets as CSV with header `server,client,y,x1,...,xd`.
/// Values use the shortest decimal form that parses back to the same
/// float, so a round trip is exact.
pub fn export_datasets_csv<P: AsRef<Path>>(
    datasets: &[ClientDataset],
    path: P,
) -> Result<(), DatagenError> {
    let path = path.as_ref();
    if datasets.is_empty() {
        return Err(DatagenError::EmptyInput);
    }
    let dim = datasets[0].dim();
    let mut out = String::from("server,client,y");
    for l in 1..=dim {
        let _ = write!(out, ",x{l}");
    }
    out.push('\n');
    for ds in datasets {
        if ds.dim() != dim {
            return Err(DatagenError::MixedDims {
                expected: dim,
                got: ds.dim(),
            });
        }
        for p in ds.points() {
            let _ = write!(out, "{},{},{}", ds.server_id(), ds.client_id(), p.y);
            for l in 0..dim {
                let _ = write!(out, ",{}", p.x[l]);
            }
            out.push('\n');
        }
    }
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Reads a dataset CSV produced by [`export_datasets_csv`] (or compatible),
/// grouping rows into one dataset per `(server, client)` pair.
pub fn import_datasets_csv<P: AsRef<Path>>(path: P) -> Result<Vec<ClientDataset>, DatagenError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let parse_err = |line: usize, msg: String| DatagenError::Parse {
        path: path.display().to_string(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty file".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 4 || cols[0] != "server" || cols[1] != "client" || cols[2] != "y" {
        return Err(parse_err(
            1,
            format!("expected header server,client,y,x1,...; got {header:?}"),
        ));
    }
    let dim = cols.len() - 3;
    let mut groups: BTreeMap<(usize, usize), Vec<DataPoint>> = BTreeMap::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != dim + 3 {
            return Err(parse_err(
                line,
                format!("expected {} fields, got {}", dim + 3, fields.len()),
            ));
        }
        let server: usize = fields[0]
            .parse()
            .map_err(|_| parse_err(line, format!("invalid server id {:?}", fields[0])))?;
        let client: usize = fields[1]
            .parse()
            .map_err(|_| parse_err(line, format!("invalid client id {:?}", fields[1])))?;
        let y: f64 = fields[2]
            .parse()
            .map_err(|_| parse_err(line, format!("invalid label {:?}", fields[2])))?;
        let mut x = Vec::with_capacity(dim);
        for f in &fields[3..] {
            x.push(
                f.parse::<f64>()
                    .map_err(|_| parse_err(line, format!("invalid feature {f:?}")))?,
            );
        }
        groups.entry((server, client)).or_default().push(DataPoint::new(x, y));
    }
    groups
        .into_iter()
        .map(|((server, client), points)| {
            ClientDataset::new(points, server, client).map_err(DatagenError::from)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::global_objective;
    use rand::Rng;

    fn spec(m: usize, n: usize, d_points: usize, w_true: Vec<f64>, noise: f64, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            m,
            n,
            d_points,
            dim: w_true.len(),
            w_true: DVector::from_vec(w_true),
            noise_std: noise,
            feature_std: 1.0,
            seed,
        }
    }

    #[test]
    fn noiseless_data_identifies_the_generator() {
        let s = spec(2, 2, 30, vec![1.0, -2.0, 0.5], 0.0, 7);
        let datasets = generate(&s).unwrap();
        let w_star = optimal_model(&datasets, 0.0).unwrap();
        assert!((w_star - s.w_true).norm() < 1e-8);
    }

    #[test]
    fn paper_scale_recovers_the_planted_model() {
        let s = spec(5, 5, 100, vec![5.0, 2.0], 0.1, 2024);
        let datasets = generate(&s).unwrap();
        assert_eq!(datasets.len(), 25);
        assert!(datasets.iter().all(|d| d.len() == 100));
        let w_star = optimal_model(&datasets, 0.0).unwrap();
        assert!((w_star - DVector::from_vec(vec![5.0, 2.0])).norm() < 0.2);
    }

    #[test]
    fn generation_is_deterministic_per_seed() {
        let s = spec(3, 2, 10, vec![1.0, 1.0], 0.3, 99);
        let a = generate(&s).unwrap();
        let b = generate(&s).unwrap();
        for (da, db) in a.iter().zip(&b) {
            assert_eq!(da.points(), db.points());
        }
        let mut other = s.clone();
        other.seed = 100;
        let c = generate(&other).unwrap();
        assert_ne!(a[0].points(), c[0].points());
    }

    #[test]
    fn client_streams_are_distinct_and_disjoint() {
        let s = spec(3, 3, 25, vec![2.0, -1.0], 0.2, 5);
        let datasets = generate(&s).unwrap();
        let mut labels = std::collections::BTreeSet::new();
        for ds in &datasets {
            for p in ds.points() {
                labels.insert(p.y.to_bits());
            }
        }
        // continuous noise: any collision would indicate duplicated points
        assert_eq!(labels.len(), 3 * 3 * 25);
    }

    #[test]
    fn rank_deficient_gram_is_rejected() {
        let ds = ClientDataset::new(vec![DataPoint::new(vec![1.0, 0.0], 7.0)], 0, 0).unwrap();
        assert!(matches!(
            optimal_model(&[ds], 0.0),
            Err(DatagenError::SingularSystem)
        ));
    }

    #[test]
    fn symmetric_clients_cancel_to_zero() {
        // two clients with isotropic Hessians and minimizers c and -c
        let build = |c: f64, client| {
            ClientDataset::new(
                vec![
                    DataPoint::new(vec![1.0, 0.0], c),
                    DataPoint::new(vec![0.0, 1.0], c),
                ],
                0,
                client,
            )
            .unwrap()
        };
        let w_star = optimal_model(&[build(1.5, 0), build(-1.5, 1)], 0.0).unwrap();
        assert!(w_star.norm() < 1e-12);
    }

    #[test]
    fn gradient_vanishes_at_the_reported_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for trial in 0..10 {
            let dim = rng.random_range(1..4);
            let w_true: Vec<f64> = (0..dim).map(|_| rng.random_range(-4.0..4.0)).collect();
            let s = spec(
                rng.random_range(1..4),
                rng.random_range(1..4),
                rng.random_range(20..50),
                w_true,
                0.2,
                trial,
            );
            let datasets = generate(&s).unwrap();
            let reg = if trial % 2 == 0 { 0.0 } else { 0.3 };
            let w_star = optimal_model(&datasets, reg).unwrap();
            let kind = if reg == 0.0 {
                LossKind::LeastSquares
            } else {
                LossKind::Ridge { reg }
            };
            let models: Vec<LossModel> = datasets
                .iter()
                .map(|d| LossModel::new(kind, d.clone()).unwrap())
                .collect();
            assert!(global_gradient(&models, &w_star).unwrap().norm() < 1e-9);
        }
    }

    #[test]
    fn optimum_beats_random_perturbations() {
        let s = spec(2, 3, 40, vec![3.0, -1.0], 0.15, 33);
        let datasets = generate(&s).unwrap();
        let w_star = optimal_model(&datasets, 0.0).unwrap();
        let models: Vec<LossModel> = datasets
            .iter()
            .map(|d| LossModel::new(LossKind::LeastSquares, d.clone()).unwrap())
            .collect();
        let base = global_objective(&models, &w_star).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        for _ in 0..100 {
            let xi = DVector::from_fn(2, |_, _| rng.random_range(-0.5..0.5));
            let perturbed = global_objective(&models, &(&w_star + xi)).unwrap();
            assert!(base <= perturbed + 1e-15);
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let s = spec(2, 2, 15, vec![0.5, 2.5, -3.0], 0.4, 77);
        let datasets = generate(&s).unwrap();
        export_datasets_csv(&datasets, &path).unwrap();

        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("server,client,y,x1,x2,x3\n"));
        assert_eq!(text.lines().count(), 1 + 2 * 2 * 15);

        let back = import_datasets_csv(&path).unwrap();
        assert_eq!(back.len(), datasets.len());
        for (a, b) in datasets.iter().zip(&back) {
            assert_eq!(a.server_id(), b.server_id());
            assert_eq!(a.client_id(), b.client_id());
            assert_eq!(a.points(), b.points());
        }
    }

    #[test]
    fn csv_import_reports_bad_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "server,client,y,x1\n0,0,1.0,2.0\n0,zero,1.0,2.0\n").unwrap();
        match import_datasets_csv(&path) {
            Err(DatagenError::Parse { line: 3, .. }) => {}
            other => panic!("expected parse error on line 3, got {other:?}"),
        }
        std::fs::write(&path, "foo,bar\n").unwrap();
        assert!(matches!(
            import_datasets_csv(&path),
            Err(DatagenError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn spec_validation_catches_bad_fields() {
        let mut s = spec(1, 1, 1, vec![1.0], 0.0, 0);
        s.m = 0;
        assert!(matches!(
            s.validate(),
            Err(DatagenError::InvalidCount { name: "m", .. })
        ));
        let mut s = spec(1, 1, 1, vec![1.0], 0.0, 0);
        s.feature_std = 0.0;
        assert!(s.validate().is_err());
        let mut s = spec(1, 1, 1, vec![1.0], 0.0, 0);
        s.noise_std = -0.1;
        assert!(s.validate().is_err());
        let s = spec(1, 1, 1, vec![1.0, 2.0], 0.0, 0);
        let s = SyntheticSpec { dim: 1, ..s };
        assert!(matches!(s.validate(), Err(DatagenError::DimMismatch { .. })));
    }
}
