//! Optimizers: full-batch descent, the sampled UMAP-style optimizer and the
//! low-rank approximate PCA gradient.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::kernels::cauchy;
use crate::linalg::{double_center, frob_inner, gram, sym_eigh, Matrix, SpectrumEnd, SymMatrix};
use crate::neighbors::{laplacian_eigenmaps_init, NeighborGraph};
use crate::objectives::{GradientScheme, DEFAULT_UMAP_EPS};

pub const DEFAULT_EPOCHS: usize = 500;
pub const DEFAULT_NEGATIVE_SAMPLES: usize = 5;
pub const DEFAULT_DESCENT_LR: f64 = 1e-3;
pub const DEFAULT_EFFECTIVE_LR: f64 = 1.0;
/// Largest Euclidean length of a single sampled move, before the step size.
pub const MOVE_CLIP: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum LrDecay {
    None,
    #[default]
    LinearToZero,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    RandomGaussian { scale: f64 },
    LaplacianEigenmaps,
    Provided,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub lr_decay: LrDecay,
    pub init: Init,
    pub negative_samples: usize,
    pub record_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            epochs: DEFAULT_EPOCHS,
            learning_rate: DEFAULT_DESCENT_LR,
            lr_decay: LrDecay::LinearToZero,
            init: Init::LaplacianEigenmaps,
            negative_samples: DEFAULT_NEGATIVE_SAMPLES,
            record_every: 1,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidParameter("epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.record_every == 0 {
            return Err(Error::InvalidParameter("record_every must be >= 1".into()));
        }
        if let Init::RandomGaussian { scale } = self.init {
            if !(scale > 0.0) {
                return Err(Error::InvalidParameter(format!("init scale must be > 0, got {scale}")));
            }
        }
        Ok(())
    }

    /// Step size used during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_decay {
            LrDecay::None => self.learning_rate,
            LrDecay::LinearToZero => self.learning_rate * (1.0 - epoch as f64 / self.epochs as f64),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub embedding: Matrix,
    /// `(epoch, loss)`; the loss is measured before that epoch's update, and
    /// the last entry (`epoch == epochs`) is the final embedding.
    pub loss_curve: Vec<(usize, f64)>,
    pub grad_norm_curve: Vec<(usize, f64)>,
    /// Loss of the optional probe scheme on the same trajectory.
    pub probe_curve: Vec<(usize, f64)>,
    pub wall_time: f64,
}

/// Starting embedding for `init`. `affinity` is required for Laplacian
/// Eigenmaps; `Provided` has to be supplied by the caller.
pub fn initial_embedding(
    init: Init,
    n: usize,
    d: usize,
    affinity: Option<&SymMatrix>,
    seed: u64,
) -> Result<Matrix> {
    match init {
        Init::RandomGaussian { scale } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok(Matrix::from_fn(n, d, |_, _| {
                scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
            }))
        }
        Init::LaplacianEigenmaps => {
            let k = affinity.ok_or_else(|| {
                Error::InvalidParameter("laplacian_eigenmaps init needs an affinity matrix".into())
            })?;
            laplacian_eigenmaps_init(k, d, seed)
        }
        Init::Provided => Err(Error::InvalidParameter(
            "init = provided but no embedding was given".into(),
        )),
    }
}

fn check_finite(epoch: usize, quantity: &str, ok: bool) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::NonFinite {
            epoch,
            quantity: quantity.into(),
        })
    }
}

/// Synchronous full-batch gradient descent `Y <- Y - lr_t * grad(Y)`.
pub fn descend(
    scheme: &GradientScheme,
    y0: &Matrix,
    cfg: &RunConfig,
    loss_probe: Option<&GradientScheme>,
) -> Result<RunResult> {
    cfg.validate()?;
    if y0.rows() != scheme.n() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} rows", scheme.n()),
            got: format!("{}", y0.rows()),
        });
    }
    let start = Instant::now();
    let mut y = y0.clone();
    let mut loss_curve = Vec::new();
    let mut grad_curve = Vec::new();
    let mut probe_curve = Vec::new();
    for epoch in 0..=cfg.epochs {
        let (loss, grad) = scheme.evaluate(&y)?;
        check_finite(epoch, "loss", loss.is_finite())?;
        check_finite(epoch, "gradient", grad.is_finite())?;
        if epoch % cfg.record_every == 0 || epoch == cfg.epochs {
            loss_curve.push((epoch, loss));
            grad_curve.push((epoch, grad.frob_norm()));
            if let Some(p) = loss_probe {
                let v = p.loss(&y)?;
                check_finite(epoch, "probe loss", v.is_finite())?;
                probe_curve.push((epoch, v));
            }
        }
        if epoch == cfg.epochs {
            break;
        }
        let lr = cfg.lr_at(epoch);
        for (a, g) in y.as_mut_slice().iter_mut().zip(grad.as_slice()) {
            *a -= lr * g;
        }
    }
    check_finite(cfg.epochs, "embedding", y.is_finite())?;
    Ok(RunResult {
        embedding: y,
        loss_curve,
        grad_norm_curve: grad_curve,
        probe_curve,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Undirected edges `(i, j, weight)` with `i < j` on the symmetrized graph
/// and positive affinity, in index order.
fn edge_list(kx: &SymMatrix, g: &NeighborGraph) -> Vec<(usize, usize, f64)> {
    let mut edges = Vec::new();
    for (i, nbrs) in g.symmetrized().iter().enumerate() {
        for &(j, _) in nbrs {
            if j > i && kx.get(i, j) > 0.0 {
                edges.push((i, j, kx.get(i, j)));
            }
        }
    }
    edges
}

#[inline]
fn clipped_step(coeff: f64, a: &[f64], b: &[f64], out: &mut [f64]) {
    let mut norm = 0.0;
    for ((o, p), q) in out.iter_mut().zip(a).zip(b) {
        *o = coeff * (p - q);
        norm += *o * *o;
    }
    let norm = norm.sqrt();
    if norm > MOVE_CLIP {
        let s = MOVE_CLIP / norm;
        out.iter_mut().for_each(|o| *o *= s);
    }
}

fn add_row(y: &mut Matrix, i: usize, step: &[f64], lr: f64) {
    for (a, s) in y.row_mut(i).iter_mut().zip(step) {
        *a += lr * s;
    }
}

/// Number of times each edge fires over `epochs`, proportional to its weight.
pub fn edge_schedule(weights: &[f64], epochs: usize) -> Vec<usize> {
    let wmax = weights.iter().cloned().fold(0.0, f64::max);
    weights
        .iter()
        .map(|&w| ((epochs as f64 * w / wmax).ceil() as usize).clamp(1, epochs))
        .collect()
}

/// The sampled optimizer: every scheduled edge pulls its endpoints together
/// and one endpoint (alternating between firings) is pushed away from
/// `negative_samples` uniformly drawn points. Moves are applied in place. The loss curve reports `probe` (the
/// fuzzy cross-entropy on `kx` when `None`).
pub fn umap_effective_optimize(
    kx: &SymMatrix,
    g: &NeighborGraph,
    y0: &Matrix,
    cfg: &RunConfig,
    probe: Option<&GradientScheme>,
) -> Result<RunResult> {
    cfg.validate()?;
    let n = kx.size();
    if g.n() != n || y0.rows() != n {
        return Err(Error::ShapeMismatch {
            expected: format!("{n} points"),
            got: format!("graph {} / embedding {}", g.n(), y0.rows()),
        });
    }
    if cfg.negative_samples == 0 {
        return Err(Error::InvalidParameter("negative_samples must be >= 1".into()));
    }
    let edges = edge_list(kx, g);
    if edges.is_empty() {
        return Err(Error::InvalidParameter("affinity graph has no edges".into()));
    }
    let default_probe;
    let probe = match probe {
        Some(p) => p,
        None => {
            default_probe = GradientScheme::umap_intended(kx.clone(), DEFAULT_UMAP_EPS)?;
            &default_probe
        }
    };

    let start = Instant::now();
    let weights: Vec<f64> = edges.iter().map(|e| e.2).collect();
    let counts = edge_schedule(&weights, cfg.epochs);
    let mut fired = vec![0usize; edges.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut y = y0.clone();
    let d = y.cols();
    let mut step = vec![0.0; d];
    let mut loss_curve = Vec::new();
    let mut grad_curve = Vec::new();

    for epoch in 0..=cfg.epochs {
        if epoch % cfg.record_every == 0 || epoch == cfg.epochs {
            let (loss, grad) = probe.evaluate(&y)?;
            check_finite(epoch, "probe loss", loss.is_finite())?;
            loss_curve.push((epoch, loss));
            grad_curve.push((epoch, grad.frob_norm()));
        }
        if epoch == cfg.epochs {
            break;
        }
        let lr = cfg.lr_at(epoch);
        for (e, &(a, b, _)) in edges.iter().enumerate() {
            let c = counts[e];
            if fired[e] >= c || fired[e] * cfg.epochs / c != epoch {
                continue;
            }
            // the endpoint that receives the negative samples alternates
            let (i, j) = if (fired[e] + e).is_multiple_of(2) { (a, b) } else { (b, a) };
            fired[e] += 1;

            let u: f64 = y.row(i).iter().zip(y.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            let coeff = -2.0 * cauchy(u);
            clipped_step(coeff, y.row(i), y.row(j), &mut step);
            add_row(&mut y, i, &step, lr);
            add_row(&mut y, j, &step, -lr);

            for _ in 0..cfg.negative_samples {
                let t = rng.random_range(0..n);
                if t == i {
                    continue;
                }
                let u: f64 = y.row(i).iter().zip(y.row(t)).map(|(a, b)| (a - b) * (a - b)).sum();
                let k = cauchy(u);
                let coeff = 2.0 * k * k / (1.0 - k).max(DEFAULT_UMAP_EPS);
                clipped_step(coeff, y.row(i), y.row(t), &mut step);
                add_row(&mut y, i, &step, lr);
            }
        }
        check_finite(epoch, "embedding", y.is_finite())?;
    }
    Ok(RunResult {
        embedding: y,
        loss_curve,
        grad_norm_curve: grad_curve,
        probe_curve: Vec::new(),
        wall_time: start.elapsed().as_secs_f64(),
    })
}

#[derive(Clone, Debug)]
pub struct LowRankGradient {
    /// `-4 C (G' - G_Y) C Y`.
    pub gradient: Matrix,
    /// `-4 C (G_X - G_Y) C Y`.
    pub exact: Matrix,
    /// `<grad, grad'>_F`.
    pub alignment: f64,
    pub condition_holds: bool,
    /// `||G_X - G'||_F^2`.
    pub approx_error: f64,
    /// `||G_X - G_X^rank||_F^2`.
    pub tail_error: f64,
}

/// PCA gradient from an approximation `G' = G_X^rank + s E` of `G_X`, where
/// `E` is a seeded random symmetric matrix and `s >= 0` is chosen so that
/// `||G_X - G'||_F^2 = (1 + perturb) ||G_X - G_X^rank||_F^2`.
pub fn lowrank_pca_gradient(
    gx: &SymMatrix,
    y: &Matrix,
    rank: usize,
    perturb: f64,
    seed: u64,
) -> Result<LowRankGradient> {
    let n = gx.size();
    if rank == 0 || rank > n {
        return Err(Error::InvalidParameter(format!("rank {rank} must be in 1..={n}")));
    }
    if !(perturb >= 0.0) {
        return Err(Error::InvalidParameter(format!("perturb must be >= 0, got {perturb}")));
    }
    if y.rows() != n {
        return Err(Error::ShapeMismatch {
            expected: format!("{n} rows"),
            got: format!("{}", y.rows()),
        });
    }
    let eig = sym_eigh(gx, rank, SpectrumEnd::Largest)?;
    let truncated = SymMatrix::from_upper(n, |i, j| {
        (0..rank)
            .map(|k| eig.values[k] * eig.vectors.get(i, k) * eig.vectors.get(j, k))
            .sum()
    });
    let tail = gx.sub(&truncated)?;
    let tail_sq = tail.frob_norm().powi(2);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = SymMatrix::from_upper(n, |_, _| {
        <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
    });
    let a = noise.frob_norm().powi(2);
    let b = frob_inner(tail.as_matrix(), noise.as_matrix())?;
    let s = if tail_sq == 0.0 || perturb == 0.0 && b <= 0.0 {
        0.0
    } else {
        (b + (b * b + a * perturb * tail_sq).sqrt()) / a
    };
    let approx = truncated.add(&noise.scaled(s))?;
    let approx_error = gx.sub(&approx)?.frob_norm().powi(2);

    let gy = gram(y);
    let exact = double_center(&gx.sub(&gy)?).mul_mat(y)?.scaled(-4.0);
    let gradient = if rank == n && perturb == 0.0 {
        exact.clone()
    } else {
        double_center(&approx.sub(&gy)?).mul_mat(y)?.scaled(-4.0)
    };
    let alignment = frob_inner(&exact, &gradient)?;

    let lam_k = eig.values[rank - 1];
    let residual_sq = gx.sub(&gy)?.frob_norm().powi(2);
    let condition_holds = lam_k > 0.0
        && residual_sq >= (1.0 + perturb) * (eig.values[0] / lam_k) * tail_sq;

    Ok(LowRankGradient {
        gradient,
        exact,
        alignment,
        condition_holds,
        approx_error,
        tail_error: tail_sq,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::input_kernel_matrix;
    use crate::linalg::{procrustes_residual, Metric};
    use crate::neighbors::{knn_graph, lle_weights, DEFAULT_LLE_REG};
    use crate::oracles::pca_oracle;
    use approx::assert_abs_diff_eq;

    fn random_points(n: usize, d: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0))
    }

    fn cfg(epochs: usize, lr: f64) -> RunConfig {
        RunConfig {
            epochs,
            learning_rate: lr,
            lr_decay: LrDecay::None,
            init: Init::Provided,
            ..RunConfig::default()
        }
    }

    #[test]
    fn fixed_point_is_kept() {
        let x = random_points(20, 4, 1);
        let y0 = pca_oracle(&x, 4).unwrap().embedding;
        let scheme = GradientScheme::pca(&x);
        let r = descend(&scheme, &y0, &cfg(20, 1e-3), None).unwrap();
        assert!(r.embedding.max_abs_diff(&y0) <= 1e-12);
    }

    #[test]
    fn pca_descent_reaches_oracle() {
        let x = Matrix::from_fn(60, 5, {
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            move |_, c| rng.random_range(-1.0..1.0) * (3.0 - 0.5 * c as f64)
        });
        let scheme = GradientScheme::pca(&x);
        let y0 = initial_embedding(Init::RandomGaussian { scale: 1.0 }, 60, 2, None, 3).unwrap();
        let lam = sym_eigh(&double_center(&gram(&x)), 1, SpectrumEnd::Largest).unwrap().values[0];
        let r = descend(&scheme, &y0, &cfg(3000, 0.1 / (4.0 * lam)), None).unwrap();
        let oracle = pca_oracle(&x, 2).unwrap().embedding;
        assert!(procrustes_residual(&crate::linalg::center_rows(&r.embedding), &oracle).unwrap() <= 1e-2);
        for w in r.loss_curve.windows(2) {
            assert!(w[1].1 <= w[0].1 + 1e-9);
        }
    }

    #[test]
    fn descent_is_deterministic_and_probes() {
        let x = random_points(30, 3, 4);
        let g = knn_graph(&x, 5, Metric::EuclideanSq).unwrap();
        let scheme = GradientScheme::dklle(lle_weights(&x, &g, DEFAULT_LLE_REG).unwrap());
        let probe = GradientScheme::pca(&x);
        let y0 = random_points(30, 2, 5);
        let c = RunConfig {
            record_every: 3,
            ..cfg(10, 1e-2)
        };
        let a = descend(&scheme, &y0, &c, Some(&probe)).unwrap();
        let b = descend(&scheme, &y0, &c, Some(&probe)).unwrap();
        assert_eq!(a.embedding, b.embedding);
        assert_eq!(a.loss_curve, b.loss_curve);
        assert_eq!(a.probe_curve.len(), a.loss_curve.len());
        let epochs: Vec<usize> = a.loss_curve.iter().map(|p| p.0).collect();
        assert_eq!(epochs, vec![0, 3, 6, 9, 10]);
    }

    #[test]
    fn non_finite_aborts_with_epoch() {
        let x = random_points(10, 3, 6);
        let scheme = GradientScheme::pca(&x);
        let y0 = random_points(10, 2, 7);
        let err = descend(&scheme, &y0, &cfg(50, 1e6), None).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }), "{err:?}");
    }

    #[test]
    fn dklle_descent_is_monotone() {
        let x = random_points(100, 3, 8);
        let g = knn_graph(&x, 10, Metric::EuclideanSq).unwrap();
        let scheme = GradientScheme::dklle(lle_weights(&x, &g, DEFAULT_LLE_REG).unwrap());
        let y0 = random_points(100, 2, 9);
        let r = descend(&scheme, &y0, &cfg(200, 1e-3), None).unwrap();
        for w in r.loss_curve.windows(2) {
            assert!(w[1].1 <= w[0].1 + 1e-9);
        }
    }

    #[test]
    fn lr_schedule() {
        let c = RunConfig {
            epochs: 4,
            learning_rate: 2.0,
            ..RunConfig::default()
        };
        let lrs: Vec<f64> = (0..4).map(|e| c.lr_at(e)).collect();
        assert_eq!(lrs, vec![2.0, 1.5, 1.0, 0.5]);
        assert!(RunConfig { epochs: 0, ..c.clone() }.validate().is_err());
        assert!(RunConfig { learning_rate: 0.0, ..c }.validate().is_err());
    }

    #[test]
    fn schedule_counts() {
        assert_eq!(edge_schedule(&[1.0, 0.5, 0.01], 10), vec![10, 5, 1]);
    }

    #[test]
    fn single_edge_single_epoch() {
        // two points joined by one edge, a third point as the only other target
        let x = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![5.0]]).unwrap();
        let g = knn_graph(&x, 1, Metric::EuclideanSq).unwrap();
        let kx = SymMatrix::from_upper(3, |i, j| if (i, j) == (0, 1) { 1.0 } else { 0.0 });
        let y0 = Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap();
        let c = RunConfig {
            epochs: 1,
            learning_rate: 0.5,
            negative_samples: 1,
            ..cfg(1, 0.5)
        };
        let r = umap_effective_optimize(&kx, &g, &y0, &c, None).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        let target = rng.random_range(0..3usize);
        let mut y = y0.clone();
        // attraction: coefficient -2 k, k = 1/2 at unit distance
        let att = -2.0 * 0.5 * (0.0 - 1.0) * 0.5;
        y.set(0, 0, y.get(0, 0) + att);
        y.set(1, 0, y.get(1, 0) - att);
        if target != 0 {
            let diff: Vec<f64> = (0..2).map(|c| y.get(0, c) - y.get(target, c)).collect();
            let u: f64 = diff.iter().map(|v| v * v).sum();
            let k = 1.0 / (1.0 + u);
            let coeff = 2.0 * k * k / (1.0 - k).max(DEFAULT_UMAP_EPS);
            let mut step: Vec<f64> = diff.iter().map(|v| coeff * v).collect();
            let norm = step.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > MOVE_CLIP {
                step.iter_mut().for_each(|v| *v *= MOVE_CLIP / norm);
            }
            for c in 0..2 {
                y.set(0, c, y.get(0, c) + 0.5 * step[c]);
            }
        }
        assert!(r.embedding.max_abs_diff(&y) <= 1e-15);
        assert_eq!(r.loss_curve.len(), 2);
    }

    #[test]
    fn effective_optimizer_is_deterministic_and_bounded() {
        let x = random_points(80, 3, 10);
        let g = knn_graph(&x, 8, Metric::EuclideanSq).unwrap();
        let kx = input_kernel_matrix(&x, &g, Default::default()).unwrap();
        let y0 = initial_embedding(Init::LaplacianEigenmaps, 80, 2, Some(&kx), 1).unwrap();
        let c = RunConfig {
            epochs: 50,
            learning_rate: 1.0,
            record_every: 10,
            ..RunConfig::default()
        };
        let a = umap_effective_optimize(&kx, &g, &y0, &c, None).unwrap();
        let b = umap_effective_optimize(&kx, &g, &y0, &c, None).unwrap();
        assert_eq!(a.embedding, b.embedding);
        assert_eq!(a.loss_curve, b.loss_curve);
        assert!(a.embedding.is_finite());
        let other = umap_effective_optimize(&kx, &g, &y0, &RunConfig { seed: 1, ..c.clone() }, None).unwrap();
        assert_ne!(a.embedding, other.embedding);
        assert!(a.loss_curve.last().unwrap().1 < a.loss_curve[0].1);
        let empty = SymMatrix::zeros(80);
        assert!(umap_effective_optimize(&empty, &g, &y0, &c, None).is_err());
    }

    #[test]
    fn lowrank_exact_cases() {
        let x = random_points(15, 4, 11);
        let gx = gram(&x);
        let y = random_points(15, 2, 12);
        let r = lowrank_pca_gradient(&gx, &y, 15, 0.0, 1).unwrap();
        assert_eq!(r.gradient, r.exact);
        assert_abs_diff_eq!(r.alignment, r.exact.frob_norm().powi(2), epsilon = 1e-12);

        let opt = pca_oracle(&x, 4).unwrap().embedding;
        let gxc = double_center(&gx);
        let r = lowrank_pca_gradient(&gxc, &opt, 15, 0.0, 1).unwrap();
        assert!(r.gradient.frob_norm() <= 1e-9 * gxc.frob_norm());
        assert!(lowrank_pca_gradient(&gx, &y, 16, 0.0, 1).is_err());
    }

    #[test]
    fn lowrank_perturbation_meets_bound() {
        let x = random_points(20, 8, 13);
        let gx = gram(&x);
        let y = random_points(20, 2, 14);
        let r = lowrank_pca_gradient(&gx, &y, 3, 0.1, 5).unwrap();
        assert_abs_diff_eq!(r.approx_error, 1.1 * r.tail_error, epsilon = 1e-9 * r.tail_error);
    }
}
