//! Input-space affinities `K_X` and the output-space kernel `k_y`.

use crate::error::{Error, Result};
use crate::linalg::{gram, sym_eigh, Matrix, SpectrumEnd, SymMatrix};
use crate::neighbors::NeighborGraph;

pub const CALIBRATION_ITERS: usize = 64;
pub const CALIBRATION_TOL: f64 = 1e-3;

/// Kernel on squared embedding distances.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum OutputKernel {
    /// Plain inner products; only meaningful at the Gram-matrix level.
    Linear,
    /// `k(u) = 1 / (1 + u)` (UMAP with `a = b = 1`).
    #[default]
    Cauchy,
}

#[inline]
pub fn cauchy(u: f64) -> f64 {
    1.0 / (1.0 + u)
}

/// `dk/du = -k(u)^2` for the Cauchy kernel.
#[inline]
pub fn cauchy_deriv(u: f64) -> f64 {
    let k = cauchy(u);
    -k * k
}

fn check_u(u: f64) -> Result<()> {
    if !(u >= 0.0) || !u.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "squared distance must be finite and >= 0, got {u}"
        )));
    }
    Ok(())
}

pub fn output_kernel(kind: OutputKernel, u: f64) -> Result<f64> {
    check_u(u)?;
    match kind {
        OutputKernel::Cauchy => Ok(cauchy(u)),
        OutputKernel::Linear => Err(Error::InvalidParameter(
            "the linear kernel has no pointwise form; use the Gram matrix".into(),
        )),
    }
}

/// Derivative of the kernel with respect to the squared distance. The
/// factor 2 from `d||y_i - y_j||^2 / dy_i` is not included.
pub fn output_kernel_deriv(kind: OutputKernel, u: f64) -> Result<f64> {
    check_u(u)?;
    match kind {
        OutputKernel::Cauchy => Ok(cauchy_deriv(u)),
        OutputKernel::Linear => Err(Error::InvalidParameter(
            "the linear kernel derivative is constant and handled by the scheme".into(),
        )),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub enum InputKernelKind {
    Linear,
    /// `exp(-||x_i - x_j||^2 / (2 sigma^2))` over all pairs.
    RbfFixed { sigma: f64 },
    /// UMAP's smoothed k-NN affinities, zero outside the neighbor graph.
    #[default]
    RbfLocal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Symmetrize {
    None,
    /// `a + a^T - a * a^T` entry-wise.
    #[default]
    FuzzyUnion,
    /// `(a + a^T) / 2`.
    Average,
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct InputKernelSpec {
    pub kind: InputKernelKind,
    pub symmetrize: Symmetrize,
}

/// Result of calibrating one row of the local RBF kernel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalScale {
    pub rho: f64,
    pub sigma: f64,
    /// `sum_j exp(-max(0, d_ij - rho) / sigma) - log2(k)`.
    pub residual: f64,
    /// The search ended on a bracket endpoint.
    pub hit_bound: bool,
}

fn membership_sum(dists: &[f64], rho: f64, sigma: f64) -> f64 {
    dists.iter().map(|d| (-(d - rho).max(0.0) / sigma).exp()).sum()
}

/// Per-point `(rho, sigma)` so that each neighbor row sums to `log2(k)`.
pub fn calibrate_local(g: &NeighborGraph) -> Result<Vec<LocalScale>> {
    let n = g.n();
    let global_mean = (0..n).flat_map(|i| g.distances(i)).sum::<f64>() / (n * g.k()) as f64;
    if global_mean == 0.0 {
        return Err(Error::DegenerateData);
    }
    let target = (g.k() as f64).log2();
    let scales = (0..n)
        .map(|i| {
            let dists = g.distances(i);
            let rho = dists.iter().copied().find(|&d| d > 0.0).unwrap_or(0.0);
            let row_mean = dists.iter().sum::<f64>() / dists.len() as f64;
            let mean = if row_mean > 0.0 { row_mean } else { global_mean };
            let (lo_bound, hi_bound) = (1e-3 * mean, 1e3 * mean);
            let (mut lo, mut hi) = (lo_bound, hi_bound);
            for _ in 0..CALIBRATION_ITERS {
                let mid = 0.5 * (lo + hi);
                if membership_sum(dists, rho, mid) > target {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let sigma = 0.5 * (lo + hi);
            let residual = membership_sum(dists, rho, sigma) - target;
            let span = hi_bound - lo_bound;
            let hit_bound = residual.abs() > CALIBRATION_TOL
                && ((sigma - lo_bound) < 1e-9 * span || (hi_bound - sigma) < 1e-9 * span);
            LocalScale {
                rho,
                sigma,
                residual,
                hit_bound,
            }
        })
        .collect();
    Ok(scales)
}

fn symmetrize(a: &Matrix, how: Symmetrize) -> Result<SymMatrix> {
    let n = a.rows();
    match how {
        Symmetrize::None => SymMatrix::new(a.clone()),
        Symmetrize::FuzzyUnion => Ok(SymMatrix::from_upper(n, |i, j| {
            let (p, q) = (a.get(i, j), a.get(j, i));
            p + q - p * q
        })),
        Symmetrize::Average => Ok(SymMatrix::from_upper(n, |i, j| {
            0.5 * (a.get(i, j) + a.get(j, i))
        })),
    }
}

/// Builds `K_X`. Symmetrization is applied last.
pub fn input_kernel_matrix(x: &Matrix, g: &NeighborGraph, spec: InputKernelSpec) -> Result<SymMatrix> {
    let n = x.rows();
    if n != g.n() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} points", g.n()),
            got: format!("{n}"),
        });
    }
    let directed = match spec.kind {
        InputKernelKind::Linear => gram(x).into_matrix(),
        InputKernelKind::RbfFixed { sigma } => {
            if !(sigma > 0.0) {
                return Err(Error::InvalidParameter(format!("sigma must be > 0, got {sigma}")));
            }
            let denom = 2.0 * sigma * sigma;
            crate::linalg::sq_dist_matrix(x, crate::linalg::Metric::EuclideanSq)
                .map(|d| (-d / denom).exp())
                .into_matrix()
        }
        InputKernelKind::RbfLocal => {
            let scales = calibrate_local(g)?;
            let mut a = Matrix::zeros(n, n);
            for (i, s) in scales.iter().enumerate() {
                for (&j, &d) in g.neighbors(i).iter().zip(g.distances(i)) {
                    a.set(i, j, (-(d - s.rho).max(0.0) / s.sigma).exp());
                }
            }
            a
        }
    };
    if spec.kind == InputKernelKind::RbfLocal && spec.symmetrize == Symmetrize::None {
        return Err(Error::InvalidParameter(
            "local RBF affinities are directed; choose fuzzy_union or average".into(),
        ));
    }
    symmetrize(&directed, spec.symmetrize)
}

/// `lambda_min(K) / ||K||_F`. Fuzzy-union kernels may come out indefinite;
/// this reports it without enforcing anything.
pub fn psd_diagnostic(k: &SymMatrix) -> Result<f64> {
    let norm = k.frob_norm();
    if norm == 0.0 {
        return Ok(0.0);
    }
    let low = sym_eigh(k, 1, SpectrumEnd::Smallest)?;
    Ok(low.values[0] / norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Metric;
    use crate::neighbors::knn_graph;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(n: usize, d: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn cauchy_values() {
        assert_eq!(output_kernel(OutputKernel::Cauchy, 0.0).unwrap(), 1.0);
        assert_eq!(output_kernel(OutputKernel::Cauchy, 1.0).unwrap(), 0.5);
        assert_eq!(output_kernel(OutputKernel::Cauchy, 3.0).unwrap(), 0.25);
        assert!(output_kernel(OutputKernel::Linear, 1.0).is_err());
        assert!(output_kernel(OutputKernel::Cauchy, -1.0).is_err());
    }

    #[test]
    fn cauchy_derivative_values_and_finite_differences() {
        assert_eq!(output_kernel_deriv(OutputKernel::Cauchy, 0.0).unwrap(), -1.0);
        assert_eq!(output_kernel_deriv(OutputKernel::Cauchy, 1.0).unwrap(), -0.25);
        assert!(output_kernel_deriv(OutputKernel::Linear, 1.0).is_err());
        let h = 1e-6;
        for u in [0.1, 2.0, 10.0] {
            let fd = (cauchy(u + h) - cauchy(u - h)) / (2.0 * h);
            let exact = output_kernel_deriv(OutputKernel::Cauchy, u).unwrap();
            assert!(((fd - exact) / exact).abs() <= 1e-6, "u={u}");
        }
    }

    #[test]
    fn fixed_rbf_identical_points_and_fuzzy_formula() {
        let x = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0], vec![0.0, 3.0]]).unwrap();
        let g = knn_graph(&x, 1, Metric::EuclideanSq).unwrap();
        let plain = input_kernel_matrix(
            &x,
            &g,
            InputKernelSpec {
                kind: InputKernelKind::RbfFixed { sigma: 0.7 },
                symmetrize: Symmetrize::None,
            },
        )
        .unwrap();
        assert_eq!(plain.get(0, 1), 1.0);
        let fuzzy = input_kernel_matrix(
            &x,
            &g,
            InputKernelSpec {
                kind: InputKernelKind::RbfFixed { sigma: 0.7 },
                symmetrize: Symmetrize::FuzzyUnion,
            },
        )
        .unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let a = plain.get(i, j);
                assert_abs_diff_eq!(fuzzy.get(i, j), 2.0 * a - a * a, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn local_rbf_rows_hit_log2_k() {
        for seed in 0..5 {
            let x = random_points(80, 4, seed);
            let g = knn_graph(&x, 15, Metric::EuclideanSq).unwrap();
            let scales = calibrate_local(&g).unwrap();
            let target = 15f64.log2();
            for (i, s) in scales.iter().enumerate() {
                let sum: f64 = g
                    .distances(i)
                    .iter()
                    .map(|d| (-(d - s.rho).max(0.0) / s.sigma).exp())
                    .sum();
                assert!((sum - target).abs() <= CALIBRATION_TOL || s.hit_bound);
                assert!(!s.hit_bound);
            }
            let k = input_kernel_matrix(&x, &g, InputKernelSpec::default()).unwrap();
            for i in 0..80 {
                assert_eq!(k.get(i, i), 0.0);
                for j in 0..80 {
                    let v = k.get(i, j);
                    assert!((0.0..=1.0).contains(&v));
                    let linked = g.neighbors(i).contains(&j) || g.neighbors(j).contains(&i);
                    if !linked {
                        assert_eq!(v, 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn local_rbf_rejects_identical_points_and_missing_symmetrization() {
        let x = Matrix::from_rows(&[vec![2.0], vec![2.0], vec![2.0]]).unwrap();
        let g = knn_graph(&x, 1, Metric::EuclideanSq).unwrap();
        assert!(matches!(
            input_kernel_matrix(&x, &g, InputKernelSpec::default()),
            Err(Error::DegenerateData)
        ));
        let y = random_points(10, 2, 1);
        let g = knn_graph(&y, 3, Metric::EuclideanSq).unwrap();
        let spec = InputKernelSpec {
            kind: InputKernelKind::RbfLocal,
            symmetrize: Symmetrize::None,
        };
        assert!(input_kernel_matrix(&y, &g, spec).is_err());
    }

    #[test]
    fn psd_diagnostic_examples() {
        assert_abs_diff_eq!(psd_diagnostic(&SymMatrix::identity(4)).unwrap(), 0.5, epsilon = 1e-14);
        let x = random_points(12, 3, 2);
        assert!(psd_diagnostic(&gram(&x)).unwrap() >= -1e-10);

        // compare against a full eigensolve
        let x = random_points(30, 3, 3);
        let g = knn_graph(&x, 5, Metric::EuclideanSq).unwrap();
        let k = input_kernel_matrix(&x, &g, InputKernelSpec::default()).unwrap();
        let all = sym_eigh(&k, 30, SpectrumEnd::Largest).unwrap();
        let min = all.values.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_abs_diff_eq!(psd_diagnostic(&k).unwrap(), min / k.frob_norm(), epsilon = 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn fuzzy_union_stays_in_unit_interval(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let m = Matrix::from_rows(&[vec![0.0, a], vec![b, 0.0]]).unwrap();
            let s = symmetrize(&m, Symmetrize::FuzzyUnion).unwrap();
            proptest::prop_assert!((0.0..=1.0).contains(&s.get(0, 1)));
        }

        #[test]
        fn cauchy_derivative_is_negative(u in 0.0f64..1e6) {
            proptest::prop_assert!(output_kernel_deriv(OutputKernel::Cauchy, u).unwrap() < 0.0);
        }
    }
}
