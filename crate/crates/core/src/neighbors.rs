//! Exact k-nearest-neighbor graphs and the structures built on top of them:
//! Isomap geodesics, LLE reconstruction weights, `M = (I - W)^T (I - W)` and
//! the spectral (Laplacian Eigenmaps) initializer.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linalg::{sym_eigh, Matrix, Metric, SpectrumEnd, SymMatrix};

pub const DEFAULT_K: usize = 15;
pub const DEFAULT_LLE_REG: f64 = 1e-3;

/// Per-point list of the `k` nearest other points, closest first.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborGraph {
    n: usize,
    k: usize,
    metric: Metric,
    indices: Vec<usize>,
    dists: Vec<f64>,
}

impl NeighborGraph {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    /// Distances matching [`Self::neighbors`]: Euclidean lengths for the
    /// squared-Euclidean metric, L1 lengths for L1.
    pub fn distances(&self, i: usize) -> &[f64] {
        &self.dists[i * self.k..(i + 1) * self.k]
    }

    /// Undirected adjacency lists (union of directed edges), each sorted by
    /// neighbor index.
    pub fn symmetrized(&self) -> Vec<Vec<(usize, f64)>> {
        let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.n];
        for i in 0..self.n {
            for (&j, &d) in self.neighbors(i).iter().zip(self.distances(i)) {
                adj[i].push((j, d));
                adj[j].push((i, d));
            }
        }
        for row in &mut adj {
            row.sort_by_key(|e| e.0);
            row.dedup_by_key(|e| e.0);
        }
        adj
    }
}

/// Exact k-NN by full per-row sort; ties go to the lower point index.
pub fn knn_graph(x: &Matrix, k: usize, metric: Metric) -> Result<NeighborGraph> {
    let n = x.rows();
    if k == 0 || k >= n {
        return Err(Error::InvalidParameter(format!(
            "k must satisfy 1 <= k < n (k = {k}, n = {n})"
        )));
    }
    let mut indices = Vec::with_capacity(n * k);
    let mut dists = Vec::with_capacity(n * k);
    let mut row: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    for i in 0..n {
        row.clear();
        row.extend(
            (0..n)
                .filter(|&j| j != i)
                .map(|j| (metric.eval(x.row(i), x.row(j)), j)),
        );
        let by_dist = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < row.len() {
            row.select_nth_unstable_by(k - 1, by_dist);
            row.truncate(k);
        }
        row.sort_by(by_dist);
        for &(d, j) in row.iter() {
            indices.push(j);
            dists.push(match metric {
                Metric::EuclideanSq => d.sqrt(),
                Metric::L1 => d,
            });
        }
    }
    Ok(NeighborGraph {
        n,
        k,
        metric,
        indices,
        dists,
    })
}

#[derive(Clone, Copy, PartialEq)]
struct Frontier {
    dist: f64,
    node: usize,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn dijkstra(adj: &[Vec<(usize, f64)>], source: usize, dist: &mut [f64]) {
    dist.iter_mut().for_each(|d| *d = f64::INFINITY);
    dist[source] = 0.0;
    let mut heap = BinaryHeap::new();
    heap.push(Frontier {
        dist: 0.0,
        node: source,
    });
    while let Some(Frontier { dist: d, node }) = heap.pop() {
        if d > dist[node] {
            continue;
        }
        for &(next, w) in &adj[node] {
            let cand = d + w;
            if cand < dist[next] {
                dist[next] = cand;
                heap.push(Frontier {
                    dist: cand,
                    node: next,
                });
            }
        }
    }
}

/// Shortest-path distances along the k-NN graph.
#[derive(Clone, Debug)]
pub struct Geodesics {
    pub dists: SymMatrix,
    /// Entry-wise squares of `dists`, ready for classical MDS.
    pub squared: SymMatrix,
}

/// All-pairs Dijkstra over the union-symmetrized graph.
pub fn geodesic_dists(g: &NeighborGraph) -> Result<Geodesics> {
    let n = g.n();
    let adj = g.symmetrized();
    let mut all = vec![0.0; n * n];
    for (s, row) in all.chunks_mut(n).enumerate() {
        dijkstra(&adj, s, row);
        if let Some(b) = row.iter().position(|d| d.is_infinite()) {
            return Err(Error::Disconnected { a: s, b });
        }
    }
    let dists = SymMatrix::from_upper(n, |i, j| all[i * n + j]);
    let squared = dists.map(|d| d * d);
    Ok(Geodesics { dists, squared })
}

/// Sparse LLE reconstruction weights; row `i` is supported on the
/// neighbors of point `i` and sums to one.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightMatrix {
    n: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl WeightMatrix {
    pub fn from_rows(n: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        if rows.len() != n {
            return Err(Error::ShapeMismatch {
                expected: format!("{n} rows"),
                got: format!("{}", rows.len()),
            });
        }
        if let Some(&(j, _)) = rows.iter().flatten().find(|(j, _)| *j >= n) {
            return Err(Error::InvalidParameter(format!("column {j} out of range")));
        }
        Ok(Self { n, rows })
    }

    /// The all-zero weight matrix (no reconstruction, pure repulsion in
    /// DK-LLE).
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            rows: vec![Vec::new(); n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i]
            .iter()
            .find(|(c, _)| *c == j)
            .map_or(0.0, |&(_, w)| w)
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.n, self.n);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, w) in row {
                m.set(i, j, m.get(i, j) + w);
            }
        }
        m
    }

    /// `||(I - W) Y||_F^2`, the LLE reconstruction error of `Y`.
    pub fn reconstruction_error(&self, y: &Matrix) -> f64 {
        let mut total = 0.0;
        for (i, row) in self.rows.iter().enumerate() {
            let mut r = y.row(i).to_vec();
            for &(j, w) in row {
                for (a, b) in r.iter_mut().zip(y.row(j)) {
                    *a -= w * b;
                }
            }
            total += r.iter().map(|v| v * v).sum::<f64>();
        }
        total
    }
}

/// Solves `A x = b` in place by Gaussian elimination with partial pivoting.
/// Returns `None` when a pivot falls below `tol * max|A|`.
fn solve_dense(mut a: Vec<f64>, mut b: Vec<f64>, n: usize) -> Option<Vec<f64>> {
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-13 * scale.max(f64::MIN_POSITIVE);
    for col in 0..n {
        let piv = (col..n).max_by(|&r, &s| a[r * n + col].abs().total_cmp(&a[s * n + col].abs()))?;
        if a[piv * n + col].abs() <= tol {
            return None;
        }
        if piv != col {
            for j in 0..n {
                a.swap(col * n + j, piv * n + j);
            }
            b.swap(col, piv);
        }
        for r in (col + 1)..n {
            let f = a[r * n + col] / a[col * n + col];
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                a[r * n + j] -= f * a[col * n + j];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = ((r + 1)..n).map(|j| a[r * n + j] * x[j]).sum();
        x[r] = (b[r] - s) / a[r * n + r];
    }
    Some(x)
}

fn solve_weights(
    g: &NeighborGraph,
    reg: f64,
    local_gram: impl Fn(usize, &[usize]) -> Vec<f64>,
) -> Result<WeightMatrix> {
    if !(reg >= 0.0) || !reg.is_finite() {
        return Err(Error::InvalidParameter(format!("regularization {reg} must be >= 0")));
    }
    let k = g.k();
    let mut rows = Vec::with_capacity(g.n());
    for i in 0..g.n() {
        let nbrs = g.neighbors(i);
        let mut c = local_gram(i, nbrs);
        let trace: f64 = (0..k).map(|a| c[a * k + a]).sum();
        if reg > 0.0 {
            let bump = if trace > 0.0 { reg * trace } else { reg };
            for a in 0..k {
                c[a * k + a] += bump;
            }
        }
        let w = solve_dense(c, vec![1.0; k], k).ok_or(Error::SingularSystem { point: i })?;
        let total: f64 = w.iter().sum();
        if total == 0.0 || !total.is_finite() {
            return Err(Error::SingularSystem { point: i });
        }
        rows.push(nbrs.iter().zip(&w).map(|(&j, &wj)| (j, wj / total)).collect());
    }
    WeightMatrix::from_rows(g.n(), rows)
}

/// LLE step one: per-point affine weights minimizing
/// `||x_i - sum_j w_ij x_j||^2`, with `reg * trace(C_i)` added to the
/// diagonal of each local Gram matrix `C_i`.
pub fn lle_weights(x: &Matrix, g: &NeighborGraph, reg: f64) -> Result<WeightMatrix> {
    if x.rows() != g.n() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} points", g.n()),
            got: format!("{}", x.rows()),
        });
    }
    solve_weights(g, reg, |i, nbrs| {
        let k = nbrs.len();
        let xi = x.row(i);
        let z: Vec<Vec<f64>> = nbrs
            .iter()
            .map(|&j| x.row(j).iter().zip(xi).map(|(a, b)| a - b).collect())
            .collect();
        let mut c = vec![0.0; k * k];
        for a in 0..k {
            for b in a..k {
                let v = crate::linalg::dot(&z[a], &z[b]);
                c[a * k + b] = v;
                c[b * k + a] = v;
            }
        }
        c
    })
}

/// Kernelized LLE weights: the local Gram matrix is taken in the feature
/// space of `kernel`, `C_ab = k_ii - k_ia - k_ib + k_ab`.
pub fn lle_weights_kernel(kernel: &SymMatrix, g: &NeighborGraph, reg: f64) -> Result<WeightMatrix> {
    if kernel.size() != g.n() {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{} kernel", g.n(), g.n()),
            got: format!("{}x{}", kernel.size(), kernel.size()),
        });
    }
    solve_weights(g, reg, |i, nbrs| {
        let k = nbrs.len();
        let mut c = vec![0.0; k * k];
        for (a, &ja) in nbrs.iter().enumerate() {
            for (b, &jb) in nbrs.iter().enumerate() {
                c[a * k + b] =
                    kernel.get(i, i) - kernel.get(i, ja) - kernel.get(i, jb) + kernel.get(ja, jb);
            }
        }
        c
    })
}

/// `M = (I - W)^T (I - W)`, accumulated one sparse row of `I - W` at a time.
pub fn m_matrix(w: &WeightMatrix) -> SymMatrix {
    let n = w.n();
    let mut m = vec![0.0; n * n];
    let mut entries: Vec<(usize, f64)> = Vec::new();
    for i in 0..n {
        entries.clear();
        entries.push((i, 1.0));
        for &(j, wij) in w.row(i) {
            match entries.iter_mut().find(|(c, _)| *c == j) {
                Some(e) => e.1 -= wij,
                None => entries.push((j, -wij)),
            }
        }
        for &(a, va) in &entries {
            for &(b, vb) in &entries {
                m[a * n + b] += va * vb;
            }
        }
    }
    SymMatrix::from_upper(n, |i, j| m[i * n + j])
}

/// Breadth-first check that the positive entries of `k` connect all points.
fn check_connected(k: &SymMatrix) -> Result<()> {
    let n = k.size();
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    while let Some(i) = queue.pop_front() {
        for (j, &v) in k.row(i).iter().enumerate() {
            if v > 0.0 && !seen[j] {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    match seen.iter().position(|s| !s) {
        Some(b) => Err(Error::Disconnected { a: 0, b }),
        None => Ok(()),
    }
}

/// Spectral initialization: the `d` eigenvectors of
/// `I - D^{-1/2} K D^{-1/2}` after the trivial one, perturbed by seeded noise
/// at `1e-5` of each column's range and rescaled to max-abs 10 per column.
pub fn laplacian_eigenmaps_init(k: &SymMatrix, d: usize, seed: u64) -> Result<Matrix> {
    let n = k.size();
    if d == 0 || d + 1 > n {
        return Err(Error::InvalidParameter(format!(
            "need 1 <= d < n for a spectral embedding (d = {d}, n = {n})"
        )));
    }
    if let Some((i, j)) = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .find(|&(i, j)| k.get(i, j) < 0.0)
    {
        return Err(Error::InvalidParameter(format!(
            "affinity ({i}, {j}) is negative"
        )));
    }
    check_connected(k)?;
    let inv_sqrt_deg: Vec<f64> = (0..n)
        .map(|i| 1.0 / k.row(i).iter().sum::<f64>().sqrt())
        .collect();
    let lap = SymMatrix::from_upper(n, |i, j| {
        let off = k.get(i, j) * inv_sqrt_deg[i] * inv_sqrt_deg[j];
        if i == j {
            1.0 - off
        } else {
            -off
        }
    });
    let pairs = sym_eigh(&lap, d + 1, SpectrumEnd::Smallest)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    let mut out = Matrix::zeros(n, d);
    for c in 0..d {
        let col = pairs.vector(c + 1);
        let max_abs = col.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let jitter = 1e-5 * max_abs;
        let noisy: Vec<f64> = col.iter().map(|v| v + jitter * unit.sample(&mut rng)).collect();
        let max_noisy = noisy.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let scale = if max_noisy > 0.0 { 10.0 / max_noisy } else { 0.0 };
        for (i, v) in noisy.iter().enumerate() {
            out.set(i, c, v * scale);
        }
    }
    Ok(out)
}
