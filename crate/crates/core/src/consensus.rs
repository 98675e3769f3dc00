//! Sensor-network graphs, Metropolis weights and the synchronous average-consensus engine.
//!
//! The engine mixes one equally-shaped tensor per node with
//! `x_i <- x_i + sum_{j in N_i} a_ij (x_j - x_i)` until the nodes agree. Links are
//! ideal: synchronous rounds, no loss, in-order delivery.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const BYTES_PER_SCALAR: u64 = 8;
const HARD_ROUND_CAP: usize = 1_000_000;

/// Undirected graph over nodes `0..n`. Self-loops are implicit and never stored.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConsensusGraph {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl ConsensusGraph {
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("graph needs at least one node".into()));
        }
        let mut set = BTreeSet::new();
        for (i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::InvalidArgument(format!("edge ({i}, {j}) out of range for {n} nodes")));
            }
            if i == j {
                return Err(Error::InvalidArgument(format!("self-loop at node {i}")));
            }
            set.insert((i.min(j), i.max(j)));
        }
        Ok(Self { n, edges: set })
    }

    pub fn ring(n: usize) -> Result<Self> {
        Self::new(n, (0..n).filter(|_| n > 1).map(|i| (i, (i + 1) % n)))
    }

    pub fn path(n: usize) -> Result<Self> {
        Self::new(n, (1..n).map(|i| (i - 1, i)))
    }

    pub fn complete(n: usize) -> Result<Self> {
        Self::new(n, (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))))
    }

    /// Connects every pair of positions closer than `radius`.
    pub fn from_positions(positions: &[[f64; 2]], radius: f64) -> Result<Self> {
        let n = positions.len();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let (dx, dy) = (positions[i][0] - positions[j][0], positions[i][1] - positions[j][1]);
                if dx.hypot(dy) <= radius {
                    edges.push((i, j));
                }
            }
        }
        Self::new(n, edges)
    }

    /// Random geometric graph: `n` nodes uniform in a square of side `d` centred at the origin.
    pub fn random_geometric(n: usize, d: f64, radius: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let half = d / 2.0;
        let pos: Vec<[f64; 2]> = (0..n)
            .map(|_| [rng.random_range(-half..=half), rng.random_range(-half..=half)])
            .collect();
        Self::from_positions(&pos, radius)
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter_map(|&(a, b)| {
                if a == i {
                    Some(b)
                } else if b == i {
                    Some(a)
                } else {
                    None
                }
            })
            .collect()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.edges.iter().filter(|&&(a, b)| a == i || b == i).count()
    }

    /// Connected components, each sorted, ordered by smallest member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut parent: Vec<usize> = (0..self.n).collect();
        fn find(p: &mut [usize], x: usize) -> usize {
            let mut r = x;
            while p[r] != r {
                r = p[r];
            }
            let mut c = x;
            while p[c] != r {
                let next = p[c];
                p[c] = r;
                c = next;
            }
            r
        }
        for &(a, b) in &self.edges {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut root_index = vec![usize::MAX; self.n];
        for v in 0..self.n {
            let r = find(&mut parent, v);
            if root_index[r] == usize::MAX {
                root_index[r] = groups.len();
                groups.push(Vec::new());
            }
            groups[root_index[r]].push(v);
        }
        groups
    }

    pub fn is_connected(&self) -> bool {
        self.components().len() == 1
    }
}

/// Doubly stochastic mixing matrix `A`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConsensusWeights {
    a: DMatrix<f64>,
}

impl ConsensusWeights {
    /// Validates row/column stochasticity, a positive diagonal and nonnegative entries.
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() || a.nrows() == 0 {
            return Err(Error::InvalidArgument("consensus weights must be a nonempty square matrix".into()));
        }
        let n = a.nrows();
        for i in 0..n {
            if !(a[(i, i)] > 0.0) {
                return Err(Error::InvalidArgument(format!("a[{i}][{i}] must be positive")));
            }
            if (a.row(i).sum() - 1.0).abs() > 1e-12 || (a.column(i).sum() - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidArgument(format!("row/column {i} does not sum to one")));
            }
        }
        if a.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::InvalidArgument("consensus weights must be nonnegative".into()));
        }
        Ok(Self { a })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn node_count(&self) -> usize {
        self.a.nrows()
    }

    /// Out-degree of node `i` in the communication graph implied by `A`.
    pub fn degree(&self, i: usize) -> usize {
        (0..self.node_count()).filter(|&j| j != i && self.a[(i, j)] > 0.0).count()
    }

    /// Largest eigenvalue modulus of `A` on the complement of the consensus direction.
    pub fn second_largest_modulus(&self) -> f64 {
        let n = self.node_count();
        let a = (&self.a + self.a.transpose()) * 0.5 - DMatrix::from_element(n, n, 1.0 / n as f64);
        SymmetricEigen::new(a).eigenvalues.amax()
    }
}

/// Metropolis rule: `a_ij = 1 / (1 + max(deg_i, deg_j))` on edges, remainder on the diagonal.
pub fn metropolis_weights(graph: &ConsensusGraph) -> Result<ConsensusWeights> {
    let comps = graph.components();
    if comps.len() > 1 {
        return Err(Error::Disconnected { components: comps });
    }
    let n = graph.node_count();
    let deg: Vec<usize> = (0..n).map(|i| graph.degree(i)).collect();
    let mut a = DMatrix::zeros(n, n);
    for (i, j) in graph.edges() {
        let v = 1.0 / (1 + deg[i].max(deg[j])) as f64;
        a[(i, j)] = v;
        a[(j, i)] = v;
    }
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| a[(i, j)]).sum();
        a[(i, i)] = 1.0 - off;
    }
    ConsensusWeights::new(a)
}

/// Stopping rule: stop once the nodes agree to `tol` (max entrywise spread) or after
/// `max_rounds` rounds. `max_rounds = 0` means no round limit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StopRule {
    pub max_rounds: usize,
    pub tol: f64,
}

impl Default for StopRule {
    fn default() -> Self {
        Self {
            max_rounds: 500,
            tol: 1e-10,
        }
    }
}

impl StopRule {
    pub fn validate(&self) -> Result<()> {
        if self.tol.is_nan() || self.tol < 0.0 {
            return Err(Error::Config(format!("consensus tolerance must be >= 0, got {}", self.tol)));
        }
        if self.max_rounds == 0 && !(self.tol > 0.0) {
            return Err(Error::Config("consensus needs max_rounds >= 1 or tol > 0".into()));
        }
        Ok(())
    }
}

/// Message and byte accounting for one consensus run.
///
/// Two encodings are metered per message: the executed `(Gamma, xi)` payload and the
/// alternative raw `(Y, R, y)` payload a node could send instead.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ConsensusLedger {
    pub rounds: usize,
    pub converged: bool,
    /// Final max entrywise spread across nodes.
    pub disagreement: f64,
    /// Directed-link transmissions over all rounds.
    pub messages: u64,
    pub bytes_gamma_xi: u64,
    pub bytes_raw: u64,
    degrees: Vec<usize>,
    payload_bytes: u64,
    raw_payload_bytes: Vec<u64>,
}

impl ConsensusLedger {
    /// Bytes of one message carrying an `m x m` matrix and an `m`-vector.
    pub fn gamma_xi_message_bytes(m: usize) -> u64 {
        (m * (m + 1)) as u64 * BYTES_PER_SCALAR
    }

    /// Bytes of one message carrying `Y` (n_y x m), `R` (n_y x n_y) and `y` (n_y).
    pub fn raw_message_bytes(m: usize, n_y: usize) -> u64 {
        (n_y * m + n_y * n_y + n_y) as u64 * BYTES_PER_SCALAR
    }

    /// Fills in the raw-encoding byte counts for sample size `m` and per-node measurement sizes.
    pub fn with_raw_encoding(mut self, m: usize, n_y: &[usize]) -> Self {
        self.raw_payload_bytes = n_y.iter().map(|&d| Self::raw_message_bytes(m, d)).collect();
        self.bytes_raw = self
            .degrees
            .iter()
            .zip(&self.raw_payload_bytes)
            .map(|(&deg, &b)| self.rounds as u64 * deg as u64 * b)
            .sum();
        self
    }

    /// Bytes sent by node `i` under the `(Gamma, xi)` encoding.
    pub fn sent_gamma_xi(&self, i: usize) -> u64 {
        self.rounds as u64 * self.degrees.get(i).copied().unwrap_or(0) as u64 * self.payload_bytes
    }

    /// Bytes node `i` would have sent under the raw encoding.
    pub fn sent_raw(&self, i: usize) -> u64 {
        let per = self.raw_payload_bytes.get(i).copied().unwrap_or(0);
        self.rounds as u64 * self.degrees.get(i).copied().unwrap_or(0) as u64 * per
    }

    pub fn payload_bytes(&self) -> u64 {
        self.payload_bytes
    }
}

fn check_shapes(values: &[DMatrix<f64>]) -> Result<(usize, usize)> {
    let shape = values.first().map(|v| v.shape()).unwrap_or((0, 0));
    for (i, v) in values.iter().enumerate() {
        if v.shape() != shape {
            return Err(Error::ShapeMismatch {
                node: i,
                expected: shape,
                got: v.shape(),
            });
        }
    }
    Ok(shape)
}

/// One synchronous mixing round.
pub fn consensus_round(a: &ConsensusWeights, values: &[DMatrix<f64>]) -> Result<Vec<DMatrix<f64>>> {
    if values.len() != a.node_count() {
        return Err(Error::Dimension {
            context: "consensus node count",
            expected: a.node_count(),
            got: values.len(),
        });
    }
    check_shapes(values)?;
    Ok(mix(a.matrix(), values))
}

fn mix(a: &DMatrix<f64>, values: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
    let n = values.len();
    (0..n)
        .map(|i| {
            let mut next = values[i].clone();
            for j in 0..n {
                let aij = a[(i, j)];
                if j != i && aij != 0.0 {
                    next.zip_zip_apply(&values[j], &values[i], |acc, xj, xi| *acc += aij * (xj - xi));
                }
            }
            next
        })
        .collect()
}

/// Max over entries of the spread `max_i x_i - min_i x_i`.
pub fn disagreement(values: &[DMatrix<f64>]) -> f64 {
    let Some(first) = values.first() else {
        return 0.0;
    };
    let mut worst = 0.0f64;
    for idx in 0..first.len() {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            lo = lo.min(v[idx]);
            hi = hi.max(v[idx]);
        }
        worst = worst.max(hi - lo);
    }
    worst
}

/// Iterates [`consensus_round`] until the stop rule fires. Non-convergence within the
/// round limit is reported through `ConsensusLedger::converged`, not as an error.
pub fn run_consensus(
    a: &ConsensusWeights,
    initial: Vec<DMatrix<f64>>,
    stop: StopRule,
) -> Result<(Vec<DMatrix<f64>>, ConsensusLedger)> {
    stop.validate()?;
    if initial.len() != a.node_count() {
        return Err(Error::Dimension {
            context: "consensus node count",
            expected: a.node_count(),
            got: initial.len(),
        });
    }
    let (rows, cols) = check_shapes(&initial)?;
    let n = a.node_count();
    let degrees: Vec<usize> = (0..n).map(|i| a.degree(i)).collect();
    let links: u64 = degrees.iter().map(|&d| d as u64).sum();
    let cap = if stop.max_rounds == 0 {
        HARD_ROUND_CAP
    } else {
        stop.max_rounds
    };

    let mut values = initial;
    let mut spread = disagreement(&values);
    let mut rounds = 0;
    while rounds < cap && !(spread <= stop.tol) {
        values = mix(a.matrix(), &values);
        rounds += 1;
        spread = disagreement(&values);
    }

    let payload_bytes = (rows * cols) as u64 * BYTES_PER_SCALAR;
    let messages = rounds as u64 * links;
    let ledger = ConsensusLedger {
        rounds,
        converged: spread <= stop.tol,
        disagreement: spread,
        messages,
        bytes_gamma_xi: messages * payload_bytes,
        bytes_raw: 0,
        degrees,
        payload_bytes,
        raw_payload_bytes: Vec::new(),
    };
    Ok((values, ledger))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalars(v: &[f64]) -> Vec<DMatrix<f64>> {
        v.iter().map(|&x| DMatrix::from_element(1, 1, x)).collect()
    }

    fn random_connected(rng: &mut ChaCha8Rng, n: usize) -> ConsensusGraph {
        // Random spanning tree plus extra edges.
        let mut edges = Vec::new();
        for i in 1..n {
            edges.push((rng.random_range(0..i), i));
        }
        for _ in 0..rng.random_range(0..=n) {
            let (i, j) = (rng.random_range(0..n), rng.random_range(0..n));
            if i != j {
                edges.push((i, j));
            }
        }
        ConsensusGraph::new(n, edges).unwrap()
    }

    #[test]
    fn two_node_weights() {
        let a = metropolis_weights(&ConsensusGraph::path(2).unwrap()).unwrap();
        assert_eq!(a.matrix(), &DMatrix::from_element(2, 2, 0.5));
    }

    #[test]
    fn three_node_path_weights() {
        let a = metropolis_weights(&ConsensusGraph::path(3).unwrap()).unwrap();
        let t = 1.0 / 3.0;
        let expected = DMatrix::from_row_slice(3, 3, &[2.0 * t, t, 0.0, t, t, t, 0.0, t, 2.0 * t]);
        assert!((a.matrix() - expected).amax() < 1e-15);
    }

    #[test]
    fn complete_graph_is_uniform() {
        for n in 2..8 {
            let a = metropolis_weights(&ConsensusGraph::complete(n).unwrap()).unwrap();
            assert!((a.matrix() - DMatrix::from_element(n, n, 1.0 / n as f64)).amax() < 1e-15);
        }
    }

    #[test]
    fn disconnected_graph_lists_components() {
        let g = ConsensusGraph::new(4, [(0, 1), (2, 3)]).unwrap();
        match metropolis_weights(&g) {
            Err(Error::Disconnected { components }) => assert_eq!(components, vec![vec![0, 1], vec![2, 3]]),
            other => panic!("expected disconnected error, got {other:?}"),
        }
    }

    #[test]
    fn self_loops_are_rejected() {
        assert!(ConsensusGraph::new(3, [(1, 1)]).is_err());
        assert!(ConsensusGraph::new(3, [(0, 3)]).is_err());
    }

    #[test]
    fn equal_values_are_a_fixed_point() {
        let a = metropolis_weights(&ConsensusGraph::ring(5).unwrap()).unwrap();
        let v = vec![DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]); 5];
        assert_eq!(consensus_round(&a, &v).unwrap(), v);
    }

    #[test]
    fn two_nodes_average_in_one_round() {
        let a = metropolis_weights(&ConsensusGraph::path(2).unwrap()).unwrap();
        let out = consensus_round(&a, &scalars(&[0.0, 2.0])).unwrap();
        assert_eq!(out, scalars(&[1.0, 1.0]));

        let stop = StopRule { max_rounds: 1, tol: 0.0 };
        let (vals, ledger) = run_consensus(&a, scalars(&[0.0, 2.0]), stop).unwrap();
        assert_eq!(vals, scalars(&[1.0, 1.0]));
        assert_eq!(ledger.rounds, 1);
        assert_eq!(ledger.messages, 2);
    }

    #[test]
    fn path_contracts_at_second_eigenvalue_rate() {
        let a = metropolis_weights(&ConsensusGraph::path(3).unwrap()).unwrap();
        let lambda2 = a.second_largest_modulus();
        let initial_dev = ((2.0f64).powi(2) + 1.0 + 1.0).sqrt();
        let mut v = scalars(&[3.0, 0.0, 0.0]);
        for r in 1..30 {
            v = consensus_round(&a, &v).unwrap();
            for x in &v {
                assert!((x[(0, 0)] - 1.0).abs() <= lambda2.powi(r) * initial_dev + 1e-12);
            }
        }
    }

    #[test]
    fn infinite_tolerance_is_vacuous() {
        let a = metropolis_weights(&ConsensusGraph::ring(4).unwrap()).unwrap();
        let init = scalars(&[1.0, 2.0, 3.0, 4.0]);
        let (vals, ledger) = run_consensus(&a, init.clone(), StopRule { max_rounds: 10, tol: f64::INFINITY }).unwrap();
        assert_eq!(vals, init);
        assert_eq!(ledger.rounds, 0);
        assert!(ledger.converged);
    }

    #[test]
    fn ring_reaches_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = metropolis_weights(&ConsensusGraph::ring(5).unwrap()).unwrap();
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(-10.0..10.0)).collect();
        let mean = x.iter().sum::<f64>() / 5.0;
        let (vals, ledger) = run_consensus(&a, scalars(&x), StopRule { max_rounds: 500, tol: 1e-10 }).unwrap();
        assert!(ledger.converged);
        for v in vals {
            assert!((v[(0, 0)] - mean).abs() <= 1e-10);
        }
    }

    #[test]
    fn non_convergence_is_reported_not_raised() {
        let a = metropolis_weights(&ConsensusGraph::path(6).unwrap()).unwrap();
        let (_, ledger) = run_consensus(&a, scalars(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]), StopRule { max_rounds: 2, tol: 1e-14 }).unwrap();
        assert_eq!(ledger.rounds, 2);
        assert!(!ledger.converged);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = metropolis_weights(&ConsensusGraph::path(2).unwrap()).unwrap();
        let v = vec![DMatrix::zeros(2, 2), DMatrix::zeros(2, 3)];
        assert!(matches!(consensus_round(&a, &v), Err(Error::ShapeMismatch { node: 1, .. })));
    }

    #[test]
    fn invalid_stop_rule() {
        assert!(StopRule { max_rounds: 0, tol: 0.0 }.validate().is_err());
        assert!(StopRule { max_rounds: 0, tol: 1e-3 }.validate().is_ok());
    }

    #[test]
    fn ledger_byte_counts() {
        let a = metropolis_weights(&ConsensusGraph::ring(6).unwrap()).unwrap();
        let m = 50;
        let init: Vec<DMatrix<f64>> = (0..6).map(|i| DMatrix::from_element(m, m + 1, i as f64)).collect();
        let (_, ledger) = run_consensus(&a, init, StopRule { max_rounds: 3, tol: 0.0 }).unwrap();
        let ledger = ledger.with_raw_encoding(m, &[2; 6]);
        assert_eq!(ledger.payload_bytes(), ConsensusLedger::gamma_xi_message_bytes(m));
        assert_eq!(ledger.messages, 3 * 12);
        assert_eq!(ledger.bytes_gamma_xi, 36 * 50 * 51 * 8);
        assert_eq!(ledger.bytes_raw, 36 * (2 * 50 + 4 + 2) * 8);
        assert_eq!(ledger.sent_gamma_xi(0), 3 * 2 * 50 * 51 * 8);
    }

    #[test]
    fn random_graphs_preserve_mean_and_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let n = rng.random_range(2..=10);
            let g = random_connected(&mut rng, n);
            let a = metropolis_weights(&g).unwrap();
            assert_eq!(a.matrix(), &a.matrix().transpose());
            let mut v: Vec<DMatrix<f64>> = (0..n).map(|_| DMatrix::from_fn(2, 3, |_, _| rng.random_range(-1.0..1.0))).collect();
            let mean0: DMatrix<f64> = v.iter().sum::<DMatrix<f64>>() / n as f64;
            for _ in 0..20 {
                v = consensus_round(&a, &v).unwrap();
                let mean: DMatrix<f64> = v.iter().sum::<DMatrix<f64>>() / n as f64;
                assert!((mean - &mean0).amax() <= 1e-12);
            }
        }
    }

    #[test]
    fn geometric_graph_connects_close_nodes() {
        let g = ConsensusGraph::from_positions(&[[0.0, 0.0], [1.0, 0.0], [5.0, 0.0]], 1.5).unwrap();
        assert_eq!(g.edges().collect::<Vec<_>>(), vec![(0, 1)]);
        assert!(!g.is_connected());
        let r = ConsensusGraph::random_geometric(10, 100.0, 200.0, 1).unwrap();
        assert!(r.is_connected());
    }
}
