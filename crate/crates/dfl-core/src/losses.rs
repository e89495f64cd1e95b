//! Client risk functions and their curvature constants.
//!
//! Every client `j` of server `i` owns a dataset `D^{ij}` of labeled points
//! and minimizes the empirical risk `f^{ij}(w) = (1/D) sum_k l(w; (x_k, y_k))`.
//! The loss library is restricted to quadratics (least squares, optionally
//! ridge-regularized) so that the strong-convexity modulus `mu`, the
//! smoothness modulus `L`, and the gradient bound `theta` have closed forms.
//!
//! Gradient evaluation follows a fixed operation order (points in index
//! order, dot product before residual, final scale by `1/D` as a division)
//! so that trajectories are reproducible bit-for-bit.

use nalgebra::{DMatrix, DVector};
use std::collections::BTreeMap;
use thiserror::Error;

/// A model parameter vector `w` in `R^d`.
pub type ModelParams = DVector<f64>;

/// Relative floor under which a Hessian eigenvalue counts as zero.
const POSITIVE_DEFINITE_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("client ({server},{client}) has an empty dataset")]
    EmptyDataset { server: usize, client: usize },
    #[error("client ({server},{client}) mixes feature dimensions {first} and {other}")]
    RaggedFeatures {
        server: usize,
        client: usize,
        first: usize,
        other: usize,
    },
    #[error("client ({server},{client}) contains a non-finite data entry")]
    NonFiniteData { server: usize, client: usize },
    #[error("ridge coefficient must be finite and non-negative, got {0}")]
    InvalidRegularizer(f64),
    #[error(
        "client ({server},{client}) violates strong convexity: \
         smallest Hessian eigenvalue {min_eig:.3e} (add a ridge term or more data)"
    )]
    NotStronglyConvex {
        server: usize,
        client: usize,
        min_eig: f64,
    },
    #[error("no loss models supplied")]
    NoModels,
    #[error("region radius must be finite and positive, got {0}")]
    InvalidRegionRadius(f64),
}

/// One labeled observation: feature vector `x` and scalar label `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataPoint {
    pub x: DVector<f64>,
    pub y: f64,
}

impl DataPoint {
    pub fn new(x: Vec<f64>, y: f64) -> Self {
        Self {
            x: DVector::from_vec(x),
            y,
        }
    }
}

/// The dataset held by one client, identified by zero-based
/// `(server_id, client_id)` coordinates.
#[derive(Debug, Clone)]
pub struct ClientDataset {
    points: Vec<DataPoint>,
    server_id: usize,
    client_id: usize,
}

impl ClientDataset {
    /// Validates that the dataset is non-empty, dimensionally consistent,
    /// and free of non-finite entries.
    pub fn new(
        points: Vec<DataPoint>,
        server_id: usize,
        client_id: usize,
    ) -> Result<Self, LossError> {
        if points.is_empty() {
            return Err(LossError::EmptyDataset {
                server: server_id,
                client: client_id,
            });
        }
        let dim = points[0].x.len();
        for p in &points {
            if p.x.len() != dim {
                return Err(LossError::RaggedFeatures {
                    server: server_id,
                    client: client_id,
                    first: dim,
                    other: p.x.len(),
                });
            }
            if !p.y.is_finite() || p.x.iter().any(|v| !v.is_finite()) {
                return Err(LossError::NonFiniteData {
                    server: server_id,
                    client: client_id,
                });
            }
        }
        Ok(Self {
            points,
            server_id,
            client_id,
        })
    }

    pub fn points(&self) -> &[DataPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].x.len()
    }

    pub fn server_id(&self) -> usize {
        self.server_id
    }

    pub fn client_id(&self) -> usize {
        self.client_id
    }
}

/// Loss family. Both are quadratic in `w`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    /// `l(w; (x, y)) = (w'x - y)^2 / 2`
    LeastSquares,
    /// Least squares plus `(reg / 2) * ||w||^2`
    Ridge { reg: f64 },
}

impl LossKind {
    pub fn regularizer(&self) -> f64 {
        match self {
            LossKind::LeastSquares => 0.0,
            LossKind::Ridge { reg } => *reg,
        }
    }
}

/// The empirical risk of one client: a [`LossKind`] over a [`ClientDataset`].
#[derive(Debug, Clone)]
pub struct LossModel {
    kind: LossKind,
    dataset: ClientDataset,
}

impl LossModel {
    pub fn new(kind: LossKind, dataset: ClientDataset) -> Result<Self, LossError> {
        let reg = kind.regularizer();
        if !reg.is_finite() || reg < 0.0 {
            return Err(LossError::InvalidRegularizer(reg));
        }
        Ok(Self { kind, dataset })
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    pub fn dataset(&self) -> &ClientDataset {
        &self.dataset
    }

    pub fn dim(&self) -> usize {
        self.dataset.dim()
    }

    pub fn server_id(&self) -> usize {
        self.dataset.server_id
    }

    pub fn client_id(&self) -> usize {
        self.dataset.client_id
    }

    fn check_dim(&self, w: &ModelParams) -> Result<(), LossError> {
        if w.len() != self.dim() {
            return Err(LossError::DimensionMismatch {
                expected: self.dim(),
                got: w.len(),
            });
        }
        Ok(())
    }

    /// Empirical risk `f^{ij}(w) = (1/D) sum_k (w'x_k - y_k)^2 / 2`,
    /// plus `(reg / 2) * ||w||^2` for ridge.
    pub fn value(&self, w: &ModelParams) -> Result<f64, LossError> {
        self.check_dim(w)?;
        let d = self.dim();
        let mut acc = 0.0;
        for p in &self.dataset.points {
            let mut dot = 0.0;
            for l in 0..d {
                dot += w[l] * p.x[l];
            }
            let r = dot - p.y;
            acc += 0.5 * r * r;
        }
        acc /= self.dataset.len() as f64;
        let reg = self.kind.regularizer();
        if reg != 0.0 {
            let mut sq = 0.0;
            for l in 0..d {
                sq += w[l] * w[l];
            }
            acc += 0.5 * reg * sq;
        }
        Ok(acc)
    }

    /// Gradient `(1/D) sum_k (w'x_k - y_k) x_k`, plus `reg * w` for ridge.
    pub fn gradient(&self, w: &ModelParams) -> Result<ModelParams, LossError> {
        let mut out = DVector::zeros(self.dim());
        self.gradient_into(w, &mut out)?;
        Ok(out)
    }

    /// Allocation-free gradient used by the simulation hot loop.
    ///
    /// Operation order is fixed: points in index order, per-point dot product
    /// accumulated left to right, final scale as a division by `D`, ridge
    /// term added last.
    pub fn gradient_into(&self, w: &ModelParams, out: &mut ModelParams) -> Result<(), LossError> {
        self.check_dim(w)?;
        if out.len() != self.dim() {
            return Err(LossError::DimensionMismatch {
                expected: self.dim(),
                got: out.len(),
            });
        }
        let d = self.dim();
        out.fill(0.0);
        for p in &self.dataset.points {
            let mut dot = 0.0;
            for l in 0..d {
                dot += w[l] * p.x[l];
            }
            let r = dot - p.y;
            for l in 0..d {
                out[l] += r * p.x[l];
            }
        }
        let count = self.dataset.len() as f64;
        for l in 0..d {
            out[l] /= count;
        }
        let reg = self.kind.regularizer();
        if reg != 0.0 {
            for l in 0..d {
                out[l] += reg * w[l];
            }
        }
        Ok(())
    }

    /// Constant Hessian `(1/D) sum_k x_k x_k' + reg * I`.
    pub fn hessian(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mut h = DMatrix::zeros(d, d);
        for p in &self.dataset.points {
            for a in 0..d {
                for b in 0..d {
                    h[(a, b)] += p.x[a] * p.x[b];
                }
            }
        }
        h /= self.dataset.len() as f64;
        let reg = self.kind.regularizer();
        for a in 0..d {
            h[(a, a)] += reg;
        }
        h
    }

    /// Extreme Hessian eigenvalues `(min, max)`.
    pub fn hessian_eigen_range(&self) -> (f64, f64) {
        let eig = self.hessian().symmetric_eigen();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in eig.eigenvalues.iter() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }
}

/// Analysis constants shared by the whole federation.
///
/// `theta` bounds every client gradient norm on the ball of radius
/// `region_radius` around the initial model; it is certified there and
/// nowhere else.
#[derive(Debug, Clone, Copy)]
pub struct SmoothnessConstants {
    /// Strong-convexity modulus: smallest Hessian eigenvalue over all clients.
    pub mu: f64,
    /// Smoothness modulus: largest Hessian eigenvalue over all clients.
    pub l: f64,
    /// Gradient-norm bound over the certified region.
    pub theta: f64,
    /// Radius of the certification ball around the initial model.
    pub region_radius: f64,
}

/// Estimates `mu`, `L`, and `theta` for a set of quadratic client risks.
///
/// `theta` uses the sound closed-form bound
/// `||H^{ij}|| * R + ||grad f^{ij}(w0)||` per client, maximized over
/// clients; it over-covers the true supremum, which keeps every inequality
/// it feeds valid.
pub fn estimate_constants(
    models: &[LossModel],
    w0: &ModelParams,
    region_radius: f64,
) -> Result<SmoothnessConstants, LossError> {
    if models.is_empty() {
        return Err(LossError::NoModels);
    }
    if !region_radius.is_finite() || region_radius <= 0.0 {
        return Err(LossError::InvalidRegionRadius(region_radius));
    }
    let dim = models[0].dim();
    let mut mu = f64::INFINITY;
    let mut l = 0.0f64;
    let mut theta = 0.0f64;
    for m in models {
        if m.dim() != dim {
            return Err(LossError::DimensionMismatch {
                expected: dim,
                got: m.dim(),
            });
        }
        let (lo, hi) = m.hessian_eigen_range();
        if lo <= POSITIVE_DEFINITE_TOL * hi.max(1.0) {
            return Err(LossError::NotStronglyConvex {
                server: m.server_id(),
                client: m.client_id(),
                min_eig: lo,
            });
        }
        mu = mu.min(lo);
        l = l.max(hi);
        let grad_at_w0 = m.gradient(w0)?.norm();
        theta = theta.max(hi * region_radius + grad_at_w0);
    }
    Ok(SmoothnessConstants {
        mu,
        l,
        theta,
        region_radius,
    })
}

fn grouped_by_server(models: &[LossModel]) -> BTreeMap<usize, Vec<&LossModel>> {
    let mut groups: BTreeMap<usize, Vec<&LossModel>> = BTreeMap::new();
    for m in models {
        groups.entry(m.server_id()).or_default().push(m);
    }
    groups
}

/// Global objective `f(w) = (1/M) sum_i (1/N_i) sum_j f^{ij}(w)`.
pub fn global_objective(models: &[LossModel], w: &ModelParams) -> Result<f64, LossError> {
    if models.is_empty() {
        return Err(LossError::NoModels);
    }
    let groups = grouped_by_server(models);
    let mut acc = 0.0;
    for group in groups.values() {
        let mut server_acc = 0.0;
        for m in group {
            server_acc += m.value(w)?;
        }
        acc += server_acc / group.len() as f64;
    }
    Ok(acc / groups.len() as f64)
}

/// Gradient of the global objective, weighted as in [`global_objective`].
pub fn global_gradient(models: &[LossModel], w: &ModelParams) -> Result<ModelParams, LossError> {
    if models.is_empty() {
        return Err(LossError::NoModels);
    }
    let groups = grouped_by_server(models);
    let mut acc = DVector::zeros(w.len());
    for group in groups.values() {
        let mut server_acc = DVector::zeros(w.len());
        for m in group {
            server_acc += m.gradient(w)?;
        }
        acc += server_acc / group.len() as f64;
    }
    Ok(acc / groups.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single_point_model(x: Vec<f64>, y: f64, kind: LossKind) -> LossModel {
        let ds = ClientDataset::new(vec![DataPoint::new(x, y)], 0, 0).unwrap();
        LossModel::new(kind, ds).unwrap()
    }

    fn random_model(rng: &mut ChaCha8Rng, dim: usize, count: usize, kind: LossKind) -> LossModel {
        let points = (0..count)
            .map(|_| {
                let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
                let y = rng.random_range(-3.0..3.0);
                DataPoint::new(x, y)
            })
            .collect();
        LossModel::new(kind, ClientDataset::new(points, 0, 0).unwrap()).unwrap()
    }

    #[test]
    fn zero_residual_gives_zero_loss() {
        let m = single_point_model(vec![1.0, 0.0], 0.0, LossKind::LeastSquares);
        let w = DVector::from_vec(vec![0.0, 0.0]);
        assert_eq!(m.value(&w).unwrap(), 0.0);
    }

    #[test]
    fn unit_residual_gives_half() {
        let m = single_point_model(vec![1.0, 0.0], 1.0, LossKind::LeastSquares);
        let w = DVector::from_vec(vec![0.0, 0.0]);
        assert_eq!(m.value(&w).unwrap(), 0.5);
    }

    #[test]
    fn ridge_term_alone_when_residual_vanishes() {
        // w'x = 3 matches y exactly, so only (reg/2)||w||^2 = 25 remains
        let m = single_point_model(vec![1.0, 0.0], 3.0, LossKind::Ridge { reg: 2.0 });
        let w = DVector::from_vec(vec![3.0, 4.0]);
        assert_eq!(m.value(&w).unwrap(), 25.0);
    }

    #[test]
    fn gradient_of_single_point() {
        let m = single_point_model(vec![1.0, 0.0], 0.0, LossKind::LeastSquares);
        let w = DVector::from_vec(vec![2.0, 5.0]);
        let g = m.gradient(&w).unwrap();
        assert_eq!(g, DVector::from_vec(vec![2.0, 0.0]));
    }

    #[test]
    fn gradient_vanishes_at_normal_equation_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_model(&mut rng, 3, 40, LossKind::LeastSquares);
        let h = m.hessian();
        // b = (1/D) sum y_k x_k, so that grad = H w - b
        let mut b = DVector::zeros(3);
        for p in m.dataset().points() {
            b += p.y * &p.x;
        }
        b /= m.dataset().len() as f64;
        let w_star = h.lu().solve(&b).unwrap();
        assert!(m.gradient(&w_star).unwrap().norm() < 1e-10);
    }

    #[test]
    fn gradient_matches_central_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..30 {
            let dim = rng.random_range(1..5);
            let kind = if trial % 3 == 0 {
                LossKind::Ridge {
                    reg: rng.random_range(0.0..2.0),
                }
            } else {
                LossKind::LeastSquares
            };
            let count = rng.random_range(1..30);
            let m = random_model(&mut rng, dim, count, kind);
            let w = DVector::from_fn(dim, |_, _| rng.random_range(-2.0..2.0));
            let g = m.gradient(&w).unwrap();
            let h = 1e-6;
            let mut fd = DVector::zeros(dim);
            for l in 0..dim {
                let mut wp = w.clone();
                let mut wm = w.clone();
                wp[l] += h;
                wm[l] -= h;
                fd[l] = (m.value(&wp).unwrap() - m.value(&wm).unwrap()) / (2.0 * h);
            }
            let rel = (&fd - &g).norm() / g.norm().max(1.0);
            assert!(rel < 1e-5, "trial {trial}: relative error {rel}");
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let m = single_point_model(vec![1.0, 0.0], 0.0, LossKind::LeastSquares);
        let w = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert!(matches!(
            m.value(&w),
            Err(LossError::DimensionMismatch { expected: 2, got: 3 })
        ));
        assert!(m.gradient(&w).is_err());
    }

    #[test]
    fn identity_hessian_gives_unit_constants() {
        // points sqrt(2)*e1, sqrt(2)*e2 make (1/D) sum x x' the 2x2 identity
        let s = 2.0f64.sqrt();
        let ds = ClientDataset::new(
            vec![
                DataPoint::new(vec![s, 0.0], 0.0),
                DataPoint::new(vec![0.0, s], 0.0),
            ],
            0,
            0,
        )
        .unwrap();
        let m = LossModel::new(LossKind::LeastSquares, ds).unwrap();
        let w0 = DVector::zeros(2);
        let c = estimate_constants(&[m], &w0, 1.0).unwrap();
        assert!((c.mu - 1.0).abs() < 1e-12);
        assert!((c.l - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ridge_shifts_both_eigenvalues() {
        // Hessian diag(1,2) from points (sqrt(2),0) and (0,2), then reg = 3
        let ds = ClientDataset::new(
            vec![
                DataPoint::new(vec![2.0f64.sqrt(), 0.0], 0.0),
                DataPoint::new(vec![0.0, 2.0], 0.0),
            ],
            0,
            0,
        )
        .unwrap();
        let m = LossModel::new(LossKind::Ridge { reg: 3.0 }, ds).unwrap();
        let w0 = DVector::zeros(2);
        let c = estimate_constants(&[m], &w0, 1.0).unwrap();
        assert!((c.mu - 4.0).abs() < 1e-12);
        assert!((c.l - 5.0).abs() < 1e-12);
    }

    #[test]
    fn singular_gram_without_ridge_is_rejected() {
        let m = single_point_model(vec![1.0, 0.0], 7.0, LossKind::LeastSquares);
        let w0 = DVector::zeros(2);
        match estimate_constants(&[m], &w0, 1.0) {
            Err(LossError::NotStronglyConvex { server: 0, client: 0, .. }) => {}
            other => panic!("expected NotStronglyConvex, got {other:?}"),
        }
    }

    #[test]
    fn smoothness_bound_cross_checked_by_power_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let dim = rng.random_range(2..5);
            let count = rng.random_range(dim..40);
            let m = random_model(&mut rng, dim, count, LossKind::LeastSquares);
            let h = m.hessian();
            // independent power-iteration oracle for the top eigenvalue
            let mut v = DVector::from_element(dim, 1.0);
            v[0] += 0.25;
            v /= v.norm();
            let mut lambda = 0.0;
            for _ in 0..20_000 {
                let hv = &h * &v;
                let next = v.dot(&hv);
                v = &hv / hv.norm();
                if (next - lambda).abs() < 1e-14 {
                    lambda = next;
                    break;
                }
                lambda = next;
            }
            let (_, hi) = m.hessian_eigen_range();
            assert!((hi - lambda).abs() < 1e-8, "eigen {hi} vs power {lambda}");
        }
    }

    #[test]
    fn strong_convexity_and_smoothness_witnesses() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        for _ in 0..25 {
            let dim = rng.random_range(1..4);
            let count = rng.random_range(dim + 2..30);
            let m = random_model(&mut rng, dim, count, LossKind::LeastSquares);
            let w0 = DVector::zeros(dim);
            let c = match estimate_constants(std::slice::from_ref(&m), &w0, 1.0) {
                Ok(c) => c,
                Err(LossError::NotStronglyConvex { .. }) => continue,
                Err(e) => panic!("{e}"),
            };
            let w = DVector::from_fn(dim, |_, _| rng.random_range(-2.0..2.0));
            let v = DVector::from_fn(dim, |_, _| rng.random_range(-2.0..2.0));
            let fw = m.value(&w).unwrap();
            let fv = m.value(&v).unwrap();
            let gv = m.gradient(&v).unwrap();
            let gw = m.gradient(&w).unwrap();
            let diff = &w - &v;
            // f(w) >= f(v) + grad(v)'(w - v) + (mu/2)||w - v||^2
            assert!(fw + 1e-9 >= fv + gv.dot(&diff) + 0.5 * c.mu * diff.norm_squared());
            // ||grad(w) - grad(v)|| <= L ||w - v||
            assert!((&gw - &gv).norm() <= c.l * diff.norm() + 1e-9);
        }
    }

    #[test]
    fn theta_covers_gradients_inside_the_region() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let m = random_model(&mut rng, 3, 50, LossKind::LeastSquares);
        let w0 = DVector::from_vec(vec![0.5, -0.5, 1.0]);
        let radius = 2.0;
        let c = estimate_constants(std::slice::from_ref(&m), &w0, radius).unwrap();
        for _ in 0..200 {
            // random point inside the certification ball
            let mut u = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
            let n = u.norm();
            if n > 0.0 {
                u *= rng.random_range(0.0..radius) / n;
            }
            let w = &w0 + u;
            assert!(m.gradient(&w).unwrap().norm() <= c.theta + 1e-12);
        }
    }

    #[test]
    fn global_objective_weights_servers_equally() {
        // two servers with different client counts; each server mean is
        // averaged before the cross-server mean
        let m00 = single_point_model(vec![1.0], 1.0, LossKind::LeastSquares);
        let mut points = vec![DataPoint::new(vec![1.0], 3.0)];
        points.push(DataPoint::new(vec![1.0], 3.0));
        let ds10 = ClientDataset::new(points, 1, 0).unwrap();
        let m10 = LossModel::new(LossKind::LeastSquares, ds10).unwrap();
        let ds11 = ClientDataset::new(vec![DataPoint::new(vec![1.0], 5.0)], 1, 1).unwrap();
        let m11 = LossModel::new(LossKind::LeastSquares, ds11).unwrap();
        let w = DVector::from_vec(vec![0.0]);
        // server 0: 0.5; server 1: (4.5 + 12.5) / 2 = 8.5; global: 4.5
        let got = global_objective(&[m00, m10, m11], &w).unwrap();
        assert!((got - 4.5).abs() < 1e-12);
    }
}
