//! Server communication graphs and consensus mixing matrices.
//!
//! Servers exchange models over an undirected graph. Consensus averaging
//! uses a doubly-stochastic mixing matrix `A` supported on the graph's
//! edges plus self-loops, with all supported entries bounded away from
//! zero. The per-epoch contraction factor is
//! `sigma_A = ||A^{T_S} - (1/M) 1 1'||` in the spectral norm; it governs
//! how fast `T_S` consensus iterations shrink server disagreement.

use crate::linalg::spectral_norm;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;
use thiserror::Error;

/// Maximum resampling attempts before `erdos_renyi` gives up on finding a
/// connected draw.
const ER_MAX_ATTEMPTS: usize = 10_000;

/// Row and column sums of a mixing matrix must match 1 this closely.
const STOCHASTIC_TOL: f64 = 1e-12;

/// Supported entries must exceed the reported alpha by this margin.
const ALPHA_MARGIN: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("graph must have at least one server")]
    EmptyGraph,
    #[error("vertex {vertex} out of range for {m} servers")]
    VertexOutOfRange { vertex: usize, m: usize },
    #[error("self-loop on vertex {0} is not allowed")]
    SelfLoop(usize),
    #[error("duplicate edge ({i},{j})")]
    DuplicateEdge { i: usize, j: usize },
    #[error("graph is disconnected")]
    Disconnected,
    #[error("edge probability must lie in [0,1], got {0}")]
    InvalidProbability(f64),
    #[error("no connected graph drawn after {0} attempts (edge probability too small?)")]
    SamplingExhausted(usize),
    #[error("edge list line {line}: {msg}")]
    EdgeListParse { line: usize, msg: String },
    #[error("mixing matrix is {rows}x{cols}, expected {m}x{m}")]
    MatrixShape { rows: usize, cols: usize, m: usize },
    #[error("mixing matrix entry ({i},{j}) = {value} is not finite or is negative")]
    InvalidEntry { i: usize, j: usize, value: f64 },
    #[error("mixing matrix entry ({i},{j}) = {value} lies outside the graph support")]
    UnsupportedEntry { i: usize, j: usize, value: f64 },
    #[error("{which} {index} of the mixing matrix sums to {sum}, not 1")]
    NotStochastic {
        which: &'static str,
        index: usize,
        sum: f64,
    },
    #[error("smallest supported mixing entry {0} leaves no positive alpha")]
    AlphaUnderflow(f64),
}

/// Undirected communication graph over `M` servers, indices `0..M`.
#[derive(Debug, Clone)]
pub struct ServerGraph {
    m: usize,
    edges: BTreeSet<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
}

impl ServerGraph {
    /// Builds a graph from unordered vertex pairs. Rejects self-loops,
    /// duplicates (in either orientation), and out-of-range indices.
    pub fn from_edges(m: usize, edges: &[(usize, usize)]) -> Result<Self, TopologyError> {
        if m == 0 {
            return Err(TopologyError::EmptyGraph);
        }
        let mut set = BTreeSet::new();
        for &(a, b) in edges {
            if a >= m {
                return Err(TopologyError::VertexOutOfRange { vertex: a, m });
            }
            if b >= m {
                return Err(TopologyError::VertexOutOfRange { vertex: b, m });
            }
            if a == b {
                return Err(TopologyError::SelfLoop(a));
            }
            let key = (a.min(b), a.max(b));
            if !set.insert(key) {
                return Err(TopologyError::DuplicateEdge { i: key.0, j: key.1 });
            }
        }
        let mut adjacency = vec![Vec::new(); m];
        for &(a, b) in &set {
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        Ok(Self {
            m,
            edges: set,
            adjacency,
        })
    }

    /// Every pair of distinct servers connected.
    pub fn complete(m: usize) -> Result<Self, TopologyError> {
        let mut edges = Vec::new();
        for i in 0..m {
            for j in i + 1..m {
                edges.push((i, j));
            }
        }
        Self::from_edges(m, &edges)
    }

    /// Ring `0-1-...-(m-1)-0`. For `m <= 2` this degenerates to a path.
    pub fn cycle(m: usize) -> Result<Self, TopologyError> {
        if m <= 2 {
            return Self::path(m);
        }
        let mut edges: Vec<(usize, usize)> = (0..m - 1).map(|i| (i, i + 1)).collect();
        edges.push((m - 1, 0));
        Self::from_edges(m, &edges)
    }

    /// Chain `0-1-...-(m-1)`.
    pub fn path(m: usize) -> Result<Self, TopologyError> {
        let edges: Vec<(usize, usize)> = (0..m.saturating_sub(1)).map(|i| (i, i + 1)).collect();
        Self::from_edges(m, &edges)
    }

    /// Vertex 0 connected to every other vertex.
    pub fn star(m: usize) -> Result<Self, TopologyError> {
        let edges: Vec<(usize, usize)> = (1..m).map(|j| (0, j)).collect();
        Self::from_edges(m, &edges)
    }

    /// Erdos-Renyi draw with edge probability `p`, rejection-sampled until
    /// connected. Deterministic for a fixed seed.
    pub fn erdos_renyi(m: usize, p: f64, seed: u64) -> Result<Self, TopologyError> {
        if m == 0 {
            return Err(TopologyError::EmptyGraph);
        }
        if !(0.0..=1.0).contains(&p) {
            return Err(TopologyError::InvalidProbability(p));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..ER_MAX_ATTEMPTS {
            let mut edges = Vec::new();
            for i in 0..m {
                for j in i + 1..m {
                    if rng.random::<f64>() < p {
                        edges.push((i, j));
                    }
                }
            }
            let g = Self::from_edges(m, &edges)?;
            if is_connected(&g) {
                return Ok(g);
            }
        }
        Err(TopologyError::SamplingExhausted(ER_MAX_ATTEMPTS))
    }

    /// Parses an edge list with one `i j` pair per line, 1-indexed.
    /// Blank lines and lines starting with `#` are skipped.
    pub fn from_edge_list_text(m: usize, text: &str) -> Result<Self, TopologyError> {
        let mut edges = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let mut parts = trimmed.split_whitespace();
            let a = parse_vertex(parts.next(), line)?;
            let b = parse_vertex(parts.next(), line)?;
            if let Some(extra) = parts.next() {
                return Err(TopologyError::EdgeListParse {
                    line,
                    msg: format!("unexpected trailing token {extra:?}"),
                });
            }
            edges.push((a - 1, b - 1));
        }
        Self::from_edges(m, &edges)
    }

    pub fn num_servers(&self) -> usize {
        self.m
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }
}

fn parse_vertex(token: Option<&str>, line: usize) -> Result<usize, TopologyError> {
    let token = token.ok_or(TopologyError::EdgeListParse {
        line,
        msg: "expected two vertex indices".into(),
    })?;
    let v: usize = token.parse().map_err(|_| TopologyError::EdgeListParse {
        line,
        msg: format!("invalid vertex index {token:?}"),
    })?;
    if v == 0 {
        return Err(TopologyError::EdgeListParse {
            line,
            msg: "vertex indices are 1-based".into(),
        });
    }
    Ok(v)
}

/// True iff every vertex is reachable from vertex 0 (breadth-first).
pub fn is_connected(g: &ServerGraph) -> bool {
    let mut seen = vec![false; g.m];
    let mut queue = std::collections::VecDeque::new();
    seen[0] = true;
    queue.push_back(0);
    let mut count = 1;
    while let Some(v) = queue.pop_front() {
        for &u in g.neighbors(v) {
            if !seen[u] {
                seen[u] = true;
                count += 1;
                queue.push_back(u);
            }
        }
    }
    count == g.m
}

/// Doubly-stochastic consensus weights supported on a [`ServerGraph`]
/// plus self-loops. Immutable once validated.
#[derive(Debug, Clone)]
pub struct MixingMatrix {
    entries: DMatrix<f64>,
    alpha: f64,
    /// Per row: `(column, weight)` pairs on the support, ascending column.
    support: Vec<Vec<(usize, f64)>>,
}

impl MixingMatrix {
    /// Validates a candidate matrix against the graph: nonnegative entries,
    /// zero outside edges and the diagonal, rows and columns summing to 1
    /// within `1e-12`, and a positive lower bound on supported entries.
    pub fn new(entries: DMatrix<f64>, graph: &ServerGraph) -> Result<Self, TopologyError> {
        let m = graph.num_servers();
        if entries.nrows() != m || entries.ncols() != m {
            return Err(TopologyError::MatrixShape {
                rows: entries.nrows(),
                cols: entries.ncols(),
                m,
            });
        }
        let mut min_supported = f64::INFINITY;
        for i in 0..m {
            for j in 0..m {
                let v = entries[(i, j)];
                if !v.is_finite() || v < 0.0 {
                    return Err(TopologyError::InvalidEntry { i, j, value: v });
                }
                let supported = i == j || graph.has_edge(i, j);
                if supported {
                    min_supported = min_supported.min(v);
                } else if v != 0.0 {
                    return Err(TopologyError::UnsupportedEntry { i, j, value: v });
                }
            }
        }
        for i in 0..m {
            let mut row = 0.0;
            let mut col = 0.0;
            for j in 0..m {
                row += entries[(i, j)];
                col += entries[(j, i)];
            }
            if (row - 1.0).abs() > STOCHASTIC_TOL {
                return Err(TopologyError::NotStochastic {
                    which: "row",
                    index: i,
                    sum: row,
                });
            }
            if (col - 1.0).abs() > STOCHASTIC_TOL {
                return Err(TopologyError::NotStochastic {
                    which: "column",
                    index: i,
                    sum: col,
                });
            }
        }
        let alpha = min_supported - ALPHA_MARGIN;
        if alpha <= 0.0 {
            return Err(TopologyError::AlphaUnderflow(min_supported));
        }
        let mut support = vec![Vec::new(); m];
        for i in 0..m {
            for j in 0..m {
                if i == j || graph.has_edge(i, j) {
                    support[i].push((j, entries[(i, j)]));
                }
            }
        }
        Ok(Self {
            entries,
            alpha,
            support,
        })
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    /// Largest `alpha` such that every supported entry exceeds it.
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Supported `(column, weight)` pairs of row `i`, ascending by column.
    /// The consensus engine iterates these in order so that weighted sums
    /// are reproducible.
    pub fn row_support(&self, i: usize) -> &[(usize, f64)] {
        &self.support[i]
    }
}

/// Builds the Metropolis-Hastings weights for a connected graph:
/// `a_ij = 1/(1 + max(deg i, deg j))` on edges, diagonal filling the row
/// to 1. Doubly stochastic and symmetric by construction.
pub fn metropolis_weights(g: &ServerGraph) -> Result<MixingMatrix, TopologyError> {
    if !is_connected(g) {
        return Err(TopologyError::Disconnected);
    }
    let m = g.num_servers();
    let mut entries = DMatrix::zeros(m, m);
    for i in 0..m {
        let mut off_row = 0.0;
        for &j in g.neighbors(i) {
            let w = 1.0 / (1.0 + g.degree(i).max(g.degree(j)) as f64);
            entries[(i, j)] = w;
            off_row += w;
        }
        entries[(i, i)] = 1.0 - off_row;
    }
    MixingMatrix::new(entries, g)
}

fn matrix_power(a: &DMatrix<f64>, mut k: usize) -> DMatrix<f64> {
    let m = a.nrows();
    let mut result = DMatrix::identity(m, m);
    let mut base = a.clone();
    while k > 0 {
        if k & 1 == 1 {
            result = &result * &base;
        }
        k >>= 1;
        if k > 0 {
            base = &base * &base;
        }
    }
    result
}

/// Contraction factor `sigma_A = ||A^{t_s} - (1/M) 1 1'||` (spectral norm).
///
/// One consensus phase multiplies the stacked deviation matrix by
/// `A^{t_s} - (1/M) 1 1'`, so server disagreement shrinks by at least this
/// factor per epoch. Strictly below 1 for connected graphs.
pub fn contraction_factor(a: &MixingMatrix, t_s: usize) -> f64 {
    assert!(t_s >= 1, "consensus phase needs at least one iteration");
    let m = a.dim();
    let mut dev = matrix_power(a.entries(), t_s);
    let uniform = 1.0 / m as f64;
    for v in dev.iter_mut() {
        *v -= uniform;
    }
    spectral_norm(&dev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn random_connected(m: usize, seed: u64) -> ServerGraph {
        // p well above the connectivity threshold keeps rejection cheap
        let p = 0.3 + 0.6 * ((seed % 7) as f64 / 7.0);
        ServerGraph::erdos_renyi(m, p, seed).unwrap()
    }

    #[test]
    fn single_vertex_is_connected() {
        let g = ServerGraph::from_edges(1, &[]).unwrap();
        assert!(is_connected(&g));
    }

    #[test]
    fn two_isolated_vertices_are_not_connected() {
        let g = ServerGraph::from_edges(2, &[]).unwrap();
        assert!(!is_connected(&g));
    }

    #[test]
    fn five_cycle_is_connected() {
        assert!(is_connected(&ServerGraph::cycle(5).unwrap()));
    }

    #[test]
    fn edge_validation() {
        assert!(matches!(
            ServerGraph::from_edges(0, &[]),
            Err(TopologyError::EmptyGraph)
        ));
        assert!(matches!(
            ServerGraph::from_edges(3, &[(0, 3)]),
            Err(TopologyError::VertexOutOfRange { vertex: 3, m: 3 })
        ));
        assert!(matches!(
            ServerGraph::from_edges(3, &[(1, 1)]),
            Err(TopologyError::SelfLoop(1))
        ));
        assert!(matches!(
            ServerGraph::from_edges(3, &[(0, 1), (1, 0)]),
            Err(TopologyError::DuplicateEdge { i: 0, j: 1 })
        ));
    }

    #[test]
    fn edge_list_text_round_trip() {
        let g = ServerGraph::from_edge_list_text(4, "1 2\n2 3\n# comment\n\n3 4\n").unwrap();
        assert_eq!(g.num_edges(), 3);
        assert!(g.has_edge(0, 1) && g.has_edge(1, 2) && g.has_edge(2, 3));

        let bad = ServerGraph::from_edge_list_text(4, "1 2\n2 x\n");
        assert!(matches!(bad, Err(TopologyError::EdgeListParse { line: 2, .. })));
        let zero = ServerGraph::from_edge_list_text(4, "0 1\n");
        assert!(matches!(zero, Err(TopologyError::EdgeListParse { line: 1, .. })));
    }

    #[test]
    fn erdos_renyi_is_deterministic_and_connected() {
        for seed in 0..10 {
            let g1 = ServerGraph::erdos_renyi(8, 0.4, seed).unwrap();
            let g2 = ServerGraph::erdos_renyi(8, 0.4, seed).unwrap();
            let e1: Vec<_> = g1.edges().collect();
            let e2: Vec<_> = g2.edges().collect();
            assert_eq!(e1, e2);
            assert!(is_connected(&g1));
        }
    }

    #[test]
    fn metropolis_two_node_path_is_uniform() {
        let a = metropolis_weights(&ServerGraph::path(2).unwrap()).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(a.entries()[(i, j)], 0.5);
            }
        }
    }

    #[test]
    fn metropolis_triangle_is_uniform_third() {
        let a = metropolis_weights(&ServerGraph::cycle(3).unwrap()).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((a.entries()[(i, j)] - 1.0 / 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn metropolis_star_weights() {
        let a = metropolis_weights(&ServerGraph::star(5).unwrap()).unwrap();
        let e = a.entries();
        for j in 1..5 {
            assert!((e[(0, j)] - 0.2).abs() < 1e-15);
            assert!((e[(j, 0)] - 0.2).abs() < 1e-15);
            assert!((e[(j, j)] - 0.8).abs() < 1e-15);
        }
        assert!((e[(0, 0)] - 0.2).abs() < 1e-15);
        // double stochasticity is enforced by the constructor; spot-check anyway
        for i in 0..5 {
            let row: f64 = (0..5).map(|j| e[(i, j)]).sum();
            let col: f64 = (0..5).map(|j| e[(j, i)]).sum();
            assert!((row - 1.0).abs() < 1e-12 && (col - 1.0).abs() < 1e-12);
        }
        assert!(a.alpha() > 0.0 && a.alpha() < 0.2);
    }

    #[test]
    fn metropolis_rejects_disconnected_graph() {
        let g = ServerGraph::from_edges(4, &[(0, 1), (2, 3)]).unwrap();
        assert!(matches!(
            metropolis_weights(&g),
            Err(TopologyError::Disconnected)
        ));
    }

    #[test]
    fn validation_rejects_bad_matrices() {
        let g = ServerGraph::path(3).unwrap();
        // entry outside the support (corner 0-2 is not an edge of the path)
        let mut m = metropolis_weights(&g).unwrap().entries().clone();
        m[(0, 2)] = 0.1;
        m[(0, 0)] -= 0.1;
        m[(2, 0)] = 0.1;
        m[(2, 2)] -= 0.1;
        assert!(matches!(
            MixingMatrix::new(m, &g),
            Err(TopologyError::UnsupportedEntry { i: 0, j: 2, .. })
        ));
        // broken row sum
        let mut m = metropolis_weights(&g).unwrap().entries().clone();
        m[(0, 0)] += 0.25;
        assert!(matches!(
            MixingMatrix::new(m, &g),
            Err(TopologyError::NotStochastic { which: "row", index: 0, .. })
        ));
        // negative entry
        let mut m = metropolis_weights(&g).unwrap().entries().clone();
        m[(0, 0)] = -m[(0, 0)];
        assert!(matches!(
            MixingMatrix::new(m, &g),
            Err(TopologyError::InvalidEntry { i: 0, j: 0, .. })
        ));
        // a zero on the support leaves no positive alpha
        let mut m = metropolis_weights(&ServerGraph::path(2).unwrap())
            .unwrap()
            .entries()
            .clone();
        m[(0, 0)] = 0.0;
        m[(0, 1)] = 1.0;
        m[(1, 0)] = 1.0;
        m[(1, 1)] = 0.0;
        assert!(matches!(
            MixingMatrix::new(m, &ServerGraph::path(2).unwrap()),
            Err(TopologyError::AlphaUnderflow(_))
        ));
    }

    #[test]
    fn row_support_is_ascending_and_complete() {
        let g = ServerGraph::star(5).unwrap();
        let a = metropolis_weights(&g).unwrap();
        let center: Vec<usize> = a.row_support(0).iter().map(|&(j, _)| j).collect();
        assert_eq!(center, vec![0, 1, 2, 3, 4]);
        let leaf: Vec<usize> = a.row_support(3).iter().map(|&(j, _)| j).collect();
        assert_eq!(leaf, vec![0, 3]);
    }

    #[test]
    fn complete_graph_uniform_weights_contract_to_zero() {
        for m in [2usize, 3, 5, 8] {
            let g = ServerGraph::complete(m).unwrap();
            let uniform = DMatrix::from_element(m, m, 1.0 / m as f64);
            let a = MixingMatrix::new(uniform, &g).unwrap();
            for t_s in [1usize, 3, 10] {
                assert!(contraction_factor(&a, t_s) < 1e-12);
            }
        }
    }

    #[test]
    fn four_cycle_contracts_at_one_third() {
        // eigenvalues of the 4-cycle Metropolis matrix are {1, 1/3, -1/3, 1/3}
        let a = metropolis_weights(&ServerGraph::cycle(4).unwrap()).unwrap();
        let sigma = contraction_factor(&a, 1);
        assert!((sigma - 1.0 / 3.0).abs() < 1e-10, "sigma = {sigma}");

        // independent oracle: dense SVD of the deviation matrix
        let mut dev = a.entries().clone();
        for v in dev.iter_mut() {
            *v -= 0.25;
        }
        let svd_top = dev.svd(false, false).singular_values[0];
        assert!((sigma - svd_top).abs() < 1e-10);
    }

    #[test]
    fn power_identity_for_symmetric_matrices() {
        for seed in 0..8 {
            let g = random_connected(6, seed);
            let a = metropolis_weights(&g).unwrap();
            let one = contraction_factor(&a, 1);
            let three = contraction_factor(&a, 3);
            assert!(
                (three - one.powi(3)).abs() < 1e-10,
                "seed {seed}: {three} vs {}",
                one.powi(3)
            );
            // oracle for the T_S = 3 power: plain repeated multiplication
            let e = a.entries();
            let cubed = e * e * e;
            let mut dev = cubed.clone();
            for v in dev.iter_mut() {
                *v -= 1.0 / 6.0;
            }
            let oracle = dev.svd(false, false).singular_values[0];
            assert!((three - oracle).abs() < 1e-10);
        }
    }

    #[test]
    fn double_stochasticity_survives_powers() {
        for seed in 0..5 {
            let g = random_connected(7, seed + 100);
            let a = metropolis_weights(&g).unwrap();
            let p = matrix_power(a.entries(), 64);
            for i in 0..7 {
                let row: f64 = (0..7).map(|j| p[(i, j)]).sum();
                let col: f64 = (0..7).map(|j| p[(j, i)]).sum();
                assert!((row - 1.0).abs() < 1e-10);
                assert!((col - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn contraction_below_one_on_random_connected_graphs() {
        for trial in 0..50u64 {
            let m = 2 + (trial % 11) as usize;
            let g = random_connected(m, trial * 13 + 1);
            let a = metropolis_weights(&g).unwrap();
            let t_s = 1 + (trial % 30) as usize;
            let sigma = contraction_factor(&a, t_s);
            assert!(sigma < 1.0, "trial {trial}: sigma = {sigma}");
            assert!(sigma >= 0.0);
        }
    }

    #[test]
    fn contraction_is_non_increasing_in_t_s() {
        for seed in 0..6 {
            let g = random_connected(5, seed + 40);
            let a = metropolis_weights(&g).unwrap();
            let mut prev = f64::INFINITY;
            for t_s in 1..=8 {
                let sigma = contraction_factor(&a, t_s);
                assert!(sigma <= prev + 1e-12, "t_s {t_s}: {sigma} > {prev}");
                prev = sigma;
            }
        }
    }

    #[test]
    fn consensus_contraction_bounds_deviation_shrinkage() {
        use crate::linalg::{deviation_matrix, mean_vector};
        use rand::{Rng, SeedableRng};
        use rand_chacha::ChaCha8Rng;

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for trial in 0..10u64 {
            let m = 3 + (trial % 5) as usize;
            let g = random_connected(m, trial + 70);
            let a = metropolis_weights(&g).unwrap();
            let t_s = 1 + (trial % 4) as usize;
            let sigma = contraction_factor(&a, t_s);

            let d = 3;
            let rows: Vec<DVector<f64>> = (0..m)
                .map(|_| DVector::from_fn(d, |_, _| rng.random_range(-5.0..5.0)))
                .collect();
            let mean = mean_vector(&rows);
            let before = spectral_norm(&deviation_matrix(&rows, &mean));

            let p = matrix_power(a.entries(), t_s);
            let mixed: Vec<DVector<f64>> = (0..m)
                .map(|i| {
                    let mut acc = DVector::zeros(d);
                    for j in 0..m {
                        acc += p[(i, j)] * &rows[j];
                    }
                    acc
                })
                .collect();
            let mixed_mean = mean_vector(&mixed);
            let after = spectral_norm(&deviation_matrix(&mixed, &mixed_mean));
            assert!(
                after <= sigma * before + 1e-10,
                "trial {trial}: m={m} t_s={t_s} sigma={sigma:.17} before={before:.17} after={after:.17} excess={:.3e}",
                after - sigma * before
            );
        }
    }
}
