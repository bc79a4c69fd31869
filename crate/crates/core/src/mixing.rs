//! Network topologies and symmetric doubly stochastic mixing matrices.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Off-diagonal Frobenius tolerance for the Jacobi sweeps (relative to ‖M‖_F).
pub const JACOBI_TOL: f64 = 1e-12;
/// Maximum number of cyclic Jacobi sweeps.
pub const JACOBI_MAX_SWEEPS: usize = 100;
/// Eigenvalues in `[-PSD_CLAMP, PSD_CLAMP]` are treated as rounding noise and set to zero.
pub const PSD_CLAMP: f64 = 1e-10;

const SYMMETRY_TOL: f64 = 1e-12;
const RANDOM_REDRAW_CAP: u64 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TopologyKind {
    Ring,
    Path,
    Star,
    Complete,
    Random { edge_prob: f64, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Topology {
    pub kind: TopologyKind,
    pub agents: usize,
}

impl Topology {
    pub fn new(kind: TopologyKind, agents: usize) -> Self {
        Self { kind, agents }
    }

    pub fn ring(agents: usize) -> Self {
        Self::new(TopologyKind::Ring, agents)
    }
}

/// Undirected simple graph on `k` nodes. Edges are stored as `(i, j)` with `i < j`, sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyList {
    k: usize,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

impl AdjacencyList {
    pub fn from_edges(k: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut list: Vec<(usize, usize)> = Vec::new();
        for (a, b) in edges {
            if a >= k || b >= k {
                return Err(Error::InvalidConfig(format!(
                    "edge ({a}, {b}) references a node outside 0..{k}"
                )));
            }
            if a == b {
                return Err(Error::InvalidConfig(format!("self-loop at node {a}")));
            }
            list.push((a.min(b), a.max(b)));
        }
        list.sort_unstable();
        list.dedup();
        let mut neighbors = vec![Vec::new(); k];
        for &(a, b) in &list {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for n in &mut neighbors {
            n.sort_unstable();
        }
        Ok(Self {
            k,
            edges: list,
            neighbors,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.k
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.neighbors[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.neighbors[node].len()
    }

    pub fn is_connected(&self) -> bool {
        if self.k == 0 {
            return false;
        }
        let mut seen = vec![false; self.k];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for &v in &self.neighbors[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    queue.push_back(v);
                }
            }
        }
        count == self.k
    }
}

pub fn build_graph(topo: &Topology) -> Result<AdjacencyList> {
    let k = topo.agents;
    if k == 0 {
        return Err(Error::InvalidConfig("agent count K must be at least 1".into()));
    }
    match topo.kind {
        TopologyKind::Ring => {
            let edges = (0..k).filter_map(|i| {
                let j = (i + 1) % k;
                (i != j).then_some((i, j))
            });
            AdjacencyList::from_edges(k, edges)
        }
        TopologyKind::Path => AdjacencyList::from_edges(k, (1..k).map(|i| (i - 1, i))),
        TopologyKind::Star => AdjacencyList::from_edges(k, (1..k).map(|i| (0, i))),
        TopologyKind::Complete => AdjacencyList::from_edges(
            k,
            (0..k).flat_map(|i| ((i + 1)..k).map(move |j| (i, j))),
        ),
        TopologyKind::Random { edge_prob, seed } => {
            if !(edge_prob > 0.0 && edge_prob <= 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "edge_prob must lie in (0, 1], got {edge_prob}"
                )));
            }
            // redraw with an incremented seed until the graph is connected
            for attempt in 0..RANDOM_REDRAW_CAP {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt));
                let mut edges = Vec::new();
                for i in 0..k {
                    for j in (i + 1)..k {
                        if rng.random::<f64>() < edge_prob {
                            edges.push((i, j));
                        }
                    }
                }
                let adj = AdjacencyList::from_edges(k, edges)?;
                if adj.is_connected() {
                    return Ok(adj);
                }
            }
            Err(Error::InvalidConfig(format!(
                "no connected random graph found for K={k}, p={edge_prob} after {RANDOM_REDRAW_CAP} draws"
            )))
        }
    }
}

/// Symmetric doubly stochastic mixing matrix together with its spectrum.
#[derive(Debug, Clone)]
pub struct MixingMatrix {
    w: DMatrix<f64>,
    eigvals: DVector<f64>,
    eigvecs: DMatrix<f64>,
    lambda: f64,
    lambda_min_nonzero: f64,
    is_psd: bool,
}

impl MixingMatrix {
    /// Wraps an arbitrary symmetric doubly stochastic matrix and caches its spectrum.
    pub fn from_matrix(w: DMatrix<f64>) -> Result<Self> {
        let k = w.nrows();
        if k == 0 || w.ncols() != k {
            return Err(Error::ShapeMismatch(format!(
                "mixing matrix must be square and non-empty, got {}x{}",
                w.nrows(),
                w.ncols()
            )));
        }
        let (eigvals, eigvecs) = eigh_symmetric(&w, JACOBI_TOL)?;
        let lambda = if k > 1 { eigvals[1] } else { 0.0 };
        let lambda_min_nonzero = eigvals
            .iter()
            .copied()
            .filter(|&v| v > 1e-12)
            .fold(f64::INFINITY, f64::min);
        let is_psd = eigvals[k - 1] >= -1e-12;
        Ok(Self {
            w,
            eigvals,
            eigvecs,
            lambda,
            lambda_min_nonzero,
            is_psd,
        })
    }

    pub fn size(&self) -> usize {
        self.w.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    /// Eigenvalues in descending order.
    pub fn eigvals(&self) -> &DVector<f64> {
        &self.eigvals
    }

    /// Orthonormal eigenvectors as columns, matching [`Self::eigvals`].
    pub fn eigvecs(&self) -> &DMatrix<f64> {
        &self.eigvecs
    }

    /// Second-largest eigenvalue.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Smallest strictly positive eigenvalue.
    pub fn lambda_min_nonzero(&self) -> f64 {
        self.lambda_min_nonzero
    }

    pub fn is_psd(&self) -> bool {
        self.is_psd
    }

    /// `(I + W) / 2`.
    pub fn lazy(&self) -> Result<Self> {
        let k = self.size();
        Self::from_matrix((DMatrix::identity(k, k) + &self.w) * 0.5)
    }

    /// Row-major CSV dump with 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.size() {
            let row: Vec<String> = (0..self.size())
                .map(|j| format!("{:.16e}", self.w[(i, j)]))
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Metropolis–Hastings weights `w_kl = 1 / (1 + max(deg_k, deg_l))`, diagonal takes the remainder.
pub fn metropolis_weights(adj: &AdjacencyList, lazy: bool) -> Result<MixingMatrix> {
    if !adj.is_connected() {
        return Err(Error::Disconnected);
    }
    let k = adj.num_nodes();
    let mut w = DMatrix::zeros(k, k);
    for &(a, b) in adj.edges() {
        let weight = 1.0 / (1.0 + adj.degree(a).max(adj.degree(b)) as f64);
        w[(a, b)] = weight;
        w[(b, a)] = weight;
    }
    for i in 0..k {
        let off: f64 = adj.neighbors(i).iter().map(|&j| w[(i, j)]).sum();
        w[(i, i)] = 1.0 - off;
    }
    if lazy {
        w = (DMatrix::identity(k, k) + w) * 0.5;
    }
    MixingMatrix::from_matrix(w)
}

/// Convenience: graph + Metropolis weights in one call.
pub fn mixing_for(topo: &Topology, lazy: bool) -> Result<MixingMatrix> {
    metropolis_weights(&build_graph(topo)?, lazy)
}

fn off_diagonal_norm(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[(i, j)] * a[(i, j)];
            }
        }
    }
    s.sqrt()
}

fn jacobi_sweep(a: &mut DMatrix<f64>, v: &mut DMatrix<f64>) {
    let n = a.nrows();
    for p in 0..n - 1 {
        for q in (p + 1)..n {
            let apq = a[(p, q)];
            if apq == 0.0 {
                continue;
            }
            let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            for r in 0..n {
                let arp = a[(r, p)];
                let arq = a[(r, q)];
                a[(r, p)] = c * arp - s * arq;
                a[(r, q)] = s * arp + c * arq;
            }
            for r in 0..n {
                let apr = a[(p, r)];
                let aqr = a[(q, r)];
                a[(p, r)] = c * apr - s * aqr;
                a[(q, r)] = s * apr + c * aqr;
            }
            for r in 0..n {
                let vrp = v[(r, p)];
                let vrq = v[(r, q)];
                v[(r, p)] = c * vrp - s * vrq;
                v[(r, q)] = s * vrp + c * vrq;
            }
        }
    }
}

/// Symmetric eigendecomposition by cyclic Jacobi sweeps.
///
/// Returns eigenvalues in descending order and the matching orthonormal
/// eigenvectors as columns. Each eigenvector is sign-normalized so that its
/// entries sum to a positive value (or, when the sum vanishes, so that its first
/// non-negligible entry is positive); this pins the top eigenvector of a
/// connected mixing matrix to `+1/√K`.
pub fn eigh_symmetric(m: &DMatrix<f64>, tol: f64) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::ShapeMismatch(format!(
            "eigh_symmetric expects a square matrix, got {}x{}",
            n,
            m.ncols()
        )));
    }
    let asym = (m - m.transpose()).amax();
    if asym > SYMMETRY_TOL {
        return Err(Error::NotSymmetric { residual: asym });
    }
    let mut a = (m + m.transpose()) * 0.5;
    let mut v = DMatrix::<f64>::identity(n, n);
    let scale = a.norm();
    let threshold = tol * scale.max(f64::MIN_POSITIVE);

    let mut converged = n <= 1 || off_diagonal_norm(&a) <= threshold;
    let mut sweeps = 0;
    while !converged && sweeps < JACOBI_MAX_SWEEPS {
        sweeps += 1;
        jacobi_sweep(&mut a, &mut v);
        converged = off_diagonal_norm(&a) <= threshold;
        if converged {
            // convergence is quadratic: one more sweep takes the eigenvectors
            // from O(tol / gap) to rounding level
            jacobi_sweep(&mut a, &mut v);
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            sweeps,
            residual: off_diagonal_norm(&a),
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let eigvals = DVector::from_iterator(n, order.iter().map(|&i| a[(i, i)]));
    let mut eigvecs = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = v.column(src).into_owned();
        let sum: f64 = col.iter().sum();
        let flip = if sum.abs() > 1e-10 {
            sum < 0.0
        } else {
            col.iter()
                .find(|x| x.abs() > 1e-10)
                .is_some_and(|&x| x < 0.0)
        };
        if flip {
            col.neg_mut();
        }
        eigvecs.set_column(dst, &col);
    }
    Ok((eigvals, eigvecs))
}

/// Symmetric PSD square root via the eigendecomposition.
pub fn sqrt_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (vals, vecs) = eigh_symmetric(m, JACOBI_TOL)?;
    let mut roots = DVector::zeros(vals.len());
    for (i, &v) in vals.iter().enumerate() {
        if v < -PSD_CLAMP {
            return Err(Error::NotPsd { min_eigenvalue: v });
        }
        // eigenvalues at rounding level are zero; their roots would be ~1e-8
        roots[i] = if v.abs() <= PSD_CLAMP { 0.0 } else { v.sqrt() };
    }
    let s = &vecs * DMatrix::from_diagonal(&roots) * vecs.transpose();
    Ok((&s + s.transpose()) * 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn ring_w(k: usize, lazy: bool) -> MixingMatrix {
        mixing_for(&Topology::ring(k), lazy).unwrap()
    }

    #[test]
    fn ring_edges() {
        let adj = build_graph(&Topology::ring(4)).unwrap();
        assert_eq!(adj.edges(), &[(0, 1), (0, 3), (1, 2), (2, 3)]);
    }

    #[test]
    fn complete_edge_count() {
        let adj = build_graph(&Topology::new(TopologyKind::Complete, 3)).unwrap();
        assert_eq!(adj.edges().len(), 3);
    }

    #[test]
    fn random_with_p_one_is_complete() {
        let random = build_graph(&Topology::new(
            TopologyKind::Random {
                edge_prob: 1.0,
                seed: 11,
            },
            5,
        ))
        .unwrap();
        let complete = build_graph(&Topology::new(TopologyKind::Complete, 5)).unwrap();
        assert_eq!(random.edges(), complete.edges());
    }

    #[test]
    fn zero_agents_rejected() {
        assert!(matches!(
            build_graph(&Topology::ring(0)),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn bad_edge_prob_rejected() {
        let topo = Topology::new(
            TopologyKind::Random {
                edge_prob: 0.0,
                seed: 0,
            },
            4,
        );
        assert!(build_graph(&topo).is_err());
    }

    #[test]
    fn disconnected_graph_rejected() {
        let adj = AdjacencyList::from_edges(4, [(0, 1), (2, 3)]).unwrap();
        assert!(matches!(
            metropolis_weights(&adj, false),
            Err(Error::Disconnected)
        ));
    }

    #[test]
    fn metropolis_two_nodes() {
        let w = mixing_for(&Topology::new(TopologyKind::Complete, 2), false).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((w.matrix()[(i, j)] - 0.5).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn metropolis_ring_four() {
        let w = ring_w(4, false);
        let third = 1.0 / 3.0;
        let expected = DMatrix::from_row_slice(
            4,
            4,
            &[
                third, third, 0.0, third, //
                third, third, third, 0.0, //
                0.0, third, third, third, //
                third, 0.0, third, third,
            ],
        );
        assert!((w.matrix() - expected).amax() < 1e-15);
        assert!(!w.is_psd());
    }

    #[test]
    fn lazy_ring_four_spectrum() {
        let w = ring_w(4, true);
        let expected = [1.0, 2.0 / 3.0, 2.0 / 3.0, 1.0 / 3.0];
        for (got, want) in w.eigvals().iter().zip(expected) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
        assert!((w.lambda() - 2.0 / 3.0).abs() < 1e-12);
        assert!((w.lambda_min_nonzero() - 1.0 / 3.0).abs() < 1e-12);
        assert!(w.is_psd());
    }

    #[test]
    fn eigh_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0, 2.0]));
        let (vals, vecs) = eigh_symmetric(&m, JACOBI_TOL).unwrap();
        assert_eq!(vals.as_slice(), &[3.0, 2.0, 1.0]);
        let perm = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        assert_eq!(vecs, perm);
    }

    #[test]
    fn eigh_two_by_two() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let (vals, _) = eigh_symmetric(&m, JACOBI_TOL).unwrap();
        assert!((vals[0] - 3.0).abs() < 1e-14);
        assert!((vals[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn eigh_rejects_asymmetric() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(matches!(
            eigh_symmetric(&m, JACOBI_TOL),
            Err(Error::NotSymmetric { .. })
        ));
    }

    #[test]
    fn eigh_random_eight_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = DMatrix::from_fn(8, 8, |_, _| rng.random::<f64>() - 0.5);
        let m = &a + a.transpose();
        let (vals, vecs) = eigh_symmetric(&m, JACOBI_TOL).unwrap();
        let rec = &vecs * DMatrix::from_diagonal(&vals) * vecs.transpose();
        assert!((&m - rec).norm() <= 1e-10 * m.norm());
        let gram = vecs.transpose() * &vecs;
        assert!((gram - DMatrix::identity(8, 8)).norm() <= 1e-10);
        // cross-check against an independent eigensolver
        let mut reference: Vec<f64> = m.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
        reference.sort_by(|a, b| b.total_cmp(a));
        for (got, want) in vals.iter().zip(reference) {
            assert!((got - want).abs() < 1e-10);
        }
    }

    #[test]
    fn sqrt_identity_and_diagonal() {
        let i3 = DMatrix::<f64>::identity(3, 3);
        assert!((sqrt_psd(&i3).unwrap() - &i3).amax() < 1e-14);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0, 0.0]));
        let s = sqrt_psd(&d).unwrap();
        let want = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0, 0.0]));
        assert!((s - want).amax() < 1e-14);
    }

    #[test]
    fn sqrt_of_laplacian_lazy_ring() {
        let w = ring_w(4, true);
        let l = DMatrix::identity(4, 4) - w.matrix();
        let s = sqrt_psd(&l).unwrap();
        let expected = [0.0, 1.0 / 3f64.sqrt(), 1.0 / 3f64.sqrt(), (2.0f64 / 3.0).sqrt()];
        for (j, want) in expected.iter().enumerate() {
            let v = w.eigvecs().column(j);
            let sv = &s * v;
            assert!((sv - v * *want).amax() < 1e-10, "mode {j}");
        }
        assert!((&s * &s - &l).norm() < 1e-10);
    }

    #[test]
    fn sqrt_rejects_negative() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1e-6]));
        assert!(matches!(sqrt_psd(&m), Err(Error::NotPsd { .. })));
        let tiny = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1e-12]));
        assert!(sqrt_psd(&tiny).is_ok());
    }

    #[test]
    fn csv_dump_is_row_major() {
        let w = ring_w(3, false);
        let csv = w.to_csv();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().all(|l| l.split(',').count() == 3));
    }

    fn check_mixing(w: &MixingMatrix) {
        let k = w.size();
        let m = w.matrix();
        assert!((m - m.transpose()).amax() <= 1e-12);
        for i in 0..k {
            let row: f64 = m.row(i).sum();
            assert!((row - 1.0).abs() <= 1e-12);
            for j in 0..k {
                assert!(m[(i, j)] >= 0.0);
            }
        }
        assert!((w.eigvals()[0] - 1.0).abs() <= 1e-12);
        let top = w.eigvecs().column(0);
        let expected = 1.0 / (k as f64).sqrt();
        assert!(top.iter().all(|&v| (v - expected).abs() <= 1e-12));
        for j in 0..k {
            let v = w.eigvecs().column(j);
            let r = m * v - v * w.eigvals()[j];
            assert!(r.amax() <= 1e-10);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn generated_mixing_matrices_are_valid(k in 1usize..14, p in 0.15f64..1.0, seed in any::<u64>(), lazy in any::<bool>()) {
            let topo = Topology::new(TopologyKind::Random { edge_prob: p, seed }, k);
            let w = mixing_for(&topo, lazy).unwrap();
            check_mixing(&w);
            if lazy {
                prop_assert!(w.is_psd());
                if k > 1 {
                    prop_assert!(w.lambda() < 1.0 - 1e-12);
                }
            }
        }

        #[test]
        fn sqrt_squares_back(n in 1usize..=16, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
            // rank-deficient on purpose half of the time
            let cols = if seed % 2 == 0 { n } else { n.div_ceil(2) };
            let b = a.columns(0, cols).into_owned();
            let m = &b * b.transpose();
            let s = sqrt_psd(&m).unwrap();
            prop_assert!((&s * &s - &m).norm() <= 1e-10 * m.norm().max(1.0));
        }
    }

    #[test]
    fn structured_topologies_are_valid() {
        for kind in [TopologyKind::Ring, TopologyKind::Path, TopologyKind::Star, TopologyKind::Complete] {
            for k in 1..10 {
                for lazy in [false, true] {
                    check_mixing(&mixing_for(&Topology::new(kind, k), lazy).unwrap());
                }
            }
        }
    }
}
