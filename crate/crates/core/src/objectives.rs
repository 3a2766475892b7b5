//! Losses and analytic gradients for every scheme, each also expressed in
//! attraction/repulsion form
//!
//! ```text
//! grad_i = -c * sum_j l_ij * delta_ij * (y_i - y_j)
//! ```
//!
//! where `delta_ij` is the derivative of the output kernel with respect to
//! the squared distance `||y_i - y_j||^2`.
//!
//! | scheme        | `l_ij`                                   | `delta_ij`  | `c` |
//! |---------------|------------------------------------------|-------------|-----|
//! | PCA/cMDS/Isomap | `[C (G_X - G_Y) C]_ij`                 | `-1/2`      | 8   |
//! | DK-PCA        | `[C (K_X - K_Y) C]_ij`                   | `-k_ij^2`   | 8   |
//! | DK-LLE        | `w_ij + w_ji - v_ij - 1/n`               | `-k_ij^2`   | 4   |
//! | UMAP intended | `kx/ky - (1 - kx) / max(1 - ky, eps)`    | `-k_ij^2`   | 4   |
//!
//! The linear kernel enters through `C G_Y C = -1/2 C D_Y C`, which is where
//! its constant `-1/2` comes from. `c` collects the factor 2 from
//! `d||y_i - y_j||^2 / dy_i` and the factor 2 from each unordered pair
//! appearing twice in the sum (plus the 2 from squaring in the Frobenius
//! losses).

use crate::error::{Error, Result};
use crate::kernels::{cauchy, OutputKernel};
use crate::linalg::{double_center, Matrix, SymMatrix};
use crate::neighbors::{m_matrix, Geodesics, WeightMatrix};

pub const DEFAULT_UMAP_EPS: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SchemeName {
    Pca,
    Cmds,
    Isomap,
    Dkpca,
    Dklle,
    UmapIntended,
}

impl SchemeName {
    pub fn as_str(self) -> &'static str {
        match self {
            SchemeName::Pca => "pca",
            SchemeName::Cmds => "cmds",
            SchemeName::Isomap => "isomap",
            SchemeName::Dkpca => "dkpca",
            SchemeName::Dklle => "dklle",
            SchemeName::UmapIntended => "umap_intended",
        }
    }
}

/// Per-pair scalars of the attraction/repulsion form.
#[derive(Clone, Debug)]
pub struct PairField {
    /// `l_ij`, attraction minus repulsion.
    pub l: Matrix,
    /// `delta_ij`, kernel derivative w.r.t. squared distance.
    pub delta: Matrix,
    pub c: f64,
}

/// `grad_i = -c sum_j l_ij delta_ij (y_i - y_j)`, summed in index order.
pub fn assemble_pairwise(field: &PairField, y: &Matrix) -> Result<Matrix> {
    let n = y.rows();
    if field.l.shape() != (n, n) || field.delta.shape() != (n, n) {
        return Err(Error::ShapeMismatch {
            expected: format!("{n}x{n} pair field"),
            got: format!("{:?}", field.l.shape()),
        });
    }
    let d = y.cols();
    let mut grad = Matrix::zeros(n, d);
    for i in 0..n {
        let yi = y.row(i);
        let mut acc = vec![0.0; d];
        for j in 0..n {
            let s = field.l.get(i, j) * field.delta.get(i, j);
            if s == 0.0 {
                continue;
            }
            for (a, (p, q)) in acc.iter_mut().zip(yi.iter().zip(y.row(j))) {
                *a += s * (p - q);
            }
        }
        for (g, a) in grad.row_mut(i).iter_mut().zip(&acc) {
            *g = -field.c * a;
        }
    }
    Ok(grad)
}

fn check_points(n: usize, y: &Matrix) -> Result<()> {
    if y.rows() != n {
        return Err(Error::ShapeMismatch {
            expected: format!("{n} embedding rows"),
            got: format!("{}", y.rows()),
        });
    }
    Ok(())
}

fn require_cauchy(k: OutputKernel, use_instead: &str) -> Result<()> {
    match k {
        OutputKernel::Cauchy => Ok(()),
        OutputKernel::Linear => Err(Error::InvalidParameter(format!(
            "linear output kernel passed; use {use_instead} instead"
        ))),
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Cauchy kernel matrix of `Y` (diagonal 1).
pub fn cauchy_matrix(y: &Matrix) -> SymMatrix {
    SymMatrix::from_upper(y.rows(), |i, j| {
        if i == j {
            1.0
        } else {
            cauchy(sq_dist(y.row(i), y.row(j)))
        }
    })
}

// ---------------------------------------------------------------- PCA

/// `C (G_X - Y Y^T) C`, the residual matrix shared by the PCA loss and
/// gradient.
pub fn pca_residual(gx: &SymMatrix, y: &Matrix) -> Result<SymMatrix> {
    check_points(gx.size(), y)?;
    let gy = crate::linalg::gram(y);
    Ok(double_center(&gx.sub(&gy)?))
}

/// `||C (G_X - G_Y) C||_F^2`.
pub fn pca_loss(gx_c: &SymMatrix, y: &Matrix) -> Result<f64> {
    Ok(pca_residual(gx_c, y)?.frob_norm().powi(2))
}

/// `-4 C (G_X - G_Y) C Y`.
pub fn pca_gradient(gx_c: &SymMatrix, y: &Matrix) -> Result<Matrix> {
    let l = pca_residual(gx_c, y)?;
    Ok(l.mul_mat(y)?.scaled(-4.0))
}

pub fn pca_pair_field(gx_c: &SymMatrix, y: &Matrix) -> Result<PairField> {
    let n = gx_c.size();
    Ok(PairField {
        l: pca_residual(gx_c, y)?.into_matrix(),
        delta: Matrix::from_fn(n, n, |_, _| -0.5),
        c: 8.0,
    })
}

/// `-1/2 C D C` for a squared-dissimilarity matrix.
pub fn cmds_target(d: &SymMatrix) -> Result<SymMatrix> {
    if let Some(i) = (0..d.size()).find(|&i| d.get(i, i).abs() > 1e-12) {
        return Err(Error::InvalidParameter(format!(
            "dissimilarity diagonal must be zero (entry {i} is {})",
            d.get(i, i)
        )));
    }
    Ok(double_center(d).scaled(-0.5))
}

// ------------------------------------------------------------- DK-PCA

fn dkpca_residual(kx_c: &SymMatrix, y: &Matrix) -> Result<(SymMatrix, SymMatrix)> {
    check_points(kx_c.size(), y)?;
    let ky = cauchy_matrix(y);
    let l = double_center(&kx_c.sub(&ky)?);
    Ok((l, ky))
}

/// `||K_X - C K_Y C||_F^2` with `K_Y` the Cauchy kernel matrix of `Y`.
pub fn dkpca_loss(kx_c: &SymMatrix, y: &Matrix, k: OutputKernel) -> Result<f64> {
    require_cauchy(k, "pca_loss")?;
    Ok(dkpca_residual(kx_c, y)?.0.frob_norm().powi(2))
}

pub fn dkpca_pair_field(kx_c: &SymMatrix, y: &Matrix, k: OutputKernel) -> Result<PairField> {
    require_cauchy(k, "pca_gradient")?;
    let (l, ky) = dkpca_residual(kx_c, y)?;
    Ok(PairField {
        l: l.into_matrix(),
        delta: ky.map(|v| -v * v).into_matrix(),
        c: 8.0,
    })
}

pub fn dkpca_gradient(kx_c: &SymMatrix, y: &Matrix, k: OutputKernel) -> Result<Matrix> {
    assemble_pairwise(&dkpca_pair_field(kx_c, y, k)?, y)
}

// ------------------------------------------------------------- DK-LLE

/// DK-LLE pair scalars split into their attraction (`w_ij + w_ji`) and
/// repulsion (`v_ij + 1/n`, `V = W^T W`) parts. Diagonals are zero.
#[derive(Clone, Debug)]
pub struct DkLleScalars {
    pub attraction: SymMatrix,
    pub repulsion: SymMatrix,
}

pub fn dklle_scalars(w: &WeightMatrix) -> DkLleScalars {
    let n = w.n();
    let mut v = vec![0.0; n * n];
    let mut a = vec![0.0; n * n];
    for r in 0..n {
        let row = w.row(r);
        for &(i, wi) in row {
            a[r * n + i] += wi;
            a[i * n + r] += wi;
            for &(j, wj) in row {
                v[i * n + j] += wi * wj;
            }
        }
    }
    let inv_n = 1.0 / n as f64;
    DkLleScalars {
        attraction: SymMatrix::from_upper(n, |i, j| if i == j { 0.0 } else { a[i * n + j] }),
        repulsion: SymMatrix::from_upper(n, |i, j| {
            if i == j {
                0.0
            } else {
                v[i * n + j] + inv_n
            }
        }),
    }
}

/// `Tr(M K_Y) + (1/n) sum_{i,j} k_y(||y_i - y_j||^2)` over all ordered
/// pairs including `i = j`; `K_Y` is the raw (uncentered) kernel matrix.
pub fn dklle_loss(m: &SymMatrix, y: &Matrix, k: OutputKernel) -> Result<f64> {
    require_cauchy(k, "an LLE eigensolver")?;
    let n = m.size();
    check_points(n, y)?;
    let inv_n = 1.0 / n as f64;
    let mut total = 0.0;
    for i in 0..n {
        let mut row = m.get(i, i) + inv_n;
        for j in 0..n {
            if j != i {
                row += (m.get(i, j) + inv_n) * cauchy(sq_dist(y.row(i), y.row(j)));
            }
        }
        total += row;
    }
    Ok(total)
}

pub fn dklle_pair_field(w: &WeightMatrix, y: &Matrix, k: OutputKernel) -> Result<PairField> {
    require_cauchy(k, "an LLE eigensolver")?;
    let n = w.n();
    check_points(n, y)?;
    let s = dklle_scalars(w);
    let ky = cauchy_matrix(y);
    Ok(PairField {
        l: s.attraction.sub(&s.repulsion)?.into_matrix(),
        delta: ky.map(|v| -v * v).into_matrix(),
        c: 4.0,
    })
}

pub fn dklle_gradient(w: &WeightMatrix, y: &Matrix, k: OutputKernel) -> Result<Matrix> {
    assemble_pairwise(&dklle_pair_field(w, y, k)?, y)
}

// ------------------------------------------------------ UMAP intended

fn check_affinities(kx: &SymMatrix) -> Result<()> {
    let n = kx.size();
    for i in 0..n {
        for j in 0..n {
            let v = kx.get(i, j);
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidParameter(format!(
                    "affinity ({i}, {j}) = {v} outside [0, 1]"
                )));
            }
        }
    }
    Ok(())
}

/// Fuzzy cross-entropy `sum_{i != j} -kx log ky - (1 - kx) log max(1 - ky, eps)`.
pub fn umap_intended_loss(kx: &SymMatrix, y: &Matrix, eps: f64) -> Result<f64> {
    check_points(kx.size(), y)?;
    let n = kx.size();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let a = kx.get(i, j);
            let u = sq_dist(y.row(i), y.row(j));
            // -log ky = log(1 + u)
            total += a * u.ln_1p() - (1.0 - a) * (u / (1.0 + u)).max(eps).ln();
        }
    }
    Ok(total)
}

pub fn umap_intended_pair_field(
    kx: &SymMatrix,
    y: &Matrix,
    k: OutputKernel,
    eps: f64,
) -> Result<PairField> {
    require_cauchy(k, "a Gram-matrix scheme")?;
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("eps must be > 0, got {eps}")));
    }
    check_points(kx.size(), y)?;
    let n = kx.size();
    let ky = cauchy_matrix(y);
    let l = Matrix::from_fn(n, n, |i, j| {
        if i == j {
            return 0.0;
        }
        let (a, b) = (kx.get(i, j), ky.get(i, j));
        a / b - (1.0 - a) / (1.0 - b).max(eps)
    });
    Ok(PairField {
        l,
        delta: ky.map(|v| -v * v).into_matrix(),
        c: 4.0,
    })
}

/// Full-batch gradient of the fuzzy cross-entropy over all pairs.
pub fn umap_intended_gradient(kx: &SymMatrix, y: &Matrix, k: OutputKernel, eps: f64) -> Result<Matrix> {
    assemble_pairwise(&umap_intended_pair_field(kx, y, k, eps)?, y)
}

// ------------------------------------------------------------ schemes

/// A named objective with its precomputed target.
#[derive(Clone, Debug)]
pub enum GradientScheme {
    /// PCA, classical MDS and Isomap: the target is `C G_X C` or
    /// `-1/2 C D C`.
    Gram { name: SchemeName, target: SymMatrix },
    DkPca { target: SymMatrix },
    DkLle {
        weights: WeightMatrix,
        /// `M + J/n`: the per-pair coefficient of `k_y` in the loss.
        coeffs: SymMatrix,
        m: SymMatrix,
    },
    UmapIntended { kx: SymMatrix, eps: f64 },
}

impl GradientScheme {
    pub fn pca(x: &Matrix) -> Self {
        GradientScheme::Gram {
            name: SchemeName::Pca,
            target: double_center(&crate::linalg::gram(x)),
        }
    }

    pub fn cmds(dsq: &SymMatrix) -> Result<Self> {
        Ok(GradientScheme::Gram {
            name: SchemeName::Cmds,
            target: cmds_target(dsq)?,
        })
    }

    pub fn isomap(geo: &Geodesics) -> Result<Self> {
        Ok(GradientScheme::Gram {
            name: SchemeName::Isomap,
            target: cmds_target(&geo.squared)?,
        })
    }

    /// DK-PCA against `K_X`, which is double-centered here.
    pub fn dkpca(kx: &SymMatrix) -> Self {
        GradientScheme::DkPca {
            target: double_center(kx),
        }
    }

    pub fn dklle(weights: WeightMatrix) -> Self {
        let m = m_matrix(&weights);
        let inv_n = 1.0 / weights.n() as f64;
        let coeffs = m.map(|v| v + inv_n);
        GradientScheme::DkLle { weights, coeffs, m }
    }

    pub fn umap_intended(kx: SymMatrix, eps: f64) -> Result<Self> {
        check_affinities(&kx)?;
        if !(eps > 0.0) {
            return Err(Error::InvalidParameter(format!("eps must be > 0, got {eps}")));
        }
        Ok(GradientScheme::UmapIntended { kx, eps })
    }

    pub fn name(&self) -> SchemeName {
        match self {
            GradientScheme::Gram { name, .. } => *name,
            GradientScheme::DkPca { .. } => SchemeName::Dkpca,
            GradientScheme::DkLle { .. } => SchemeName::Dklle,
            GradientScheme::UmapIntended { .. } => SchemeName::UmapIntended,
        }
    }

    pub fn n(&self) -> usize {
        match self {
            GradientScheme::Gram { target, .. } | GradientScheme::DkPca { target } => target.size(),
            GradientScheme::DkLle { weights, .. } => weights.n(),
            GradientScheme::UmapIntended { kx, .. } => kx.size(),
        }
    }

    pub fn output_kernel(&self) -> OutputKernel {
        match self {
            GradientScheme::Gram { .. } => OutputKernel::Linear,
            _ => OutputKernel::Cauchy,
        }
    }

    pub fn loss(&self, y: &Matrix) -> Result<f64> {
        match self {
            GradientScheme::Gram { target, .. } => pca_loss(target, y),
            GradientScheme::DkPca { target } => dkpca_loss(target, y, OutputKernel::Cauchy),
            GradientScheme::DkLle { m, .. } => dklle_loss(m, y, OutputKernel::Cauchy),
            GradientScheme::UmapIntended { kx, eps } => umap_intended_loss(kx, y, *eps),
        }
    }

    pub fn gradient(&self, y: &Matrix) -> Result<Matrix> {
        Ok(self.evaluate(y)?.1)
    }

    /// Loss and gradient in one pass over the pairs.
    pub fn evaluate(&self, y: &Matrix) -> Result<(f64, Matrix)> {
        match self {
            GradientScheme::Gram { target, .. } => {
                let l = pca_residual(target, y)?;
                let loss = l.frob_norm().powi(2);
                Ok((loss, l.mul_mat(y)?.scaled(-4.0)))
            }
            GradientScheme::DkPca { target } => {
                let field = dkpca_pair_field(target, y, OutputKernel::Cauchy)?;
                let loss = field.l.frob_norm().powi(2);
                Ok((loss, assemble_pairwise(&field, y)?))
            }
            GradientScheme::DkLle { coeffs, .. } => dklle_fused(coeffs, y),
            GradientScheme::UmapIntended { kx, eps } => {
                let loss = umap_intended_loss(kx, y, *eps)?;
                let grad = umap_intended_gradient(kx, y, OutputKernel::Cauchy, *eps)?;
                Ok((loss, grad))
            }
        }
    }

    pub fn pair_field(&self, y: &Matrix) -> Result<PairField> {
        match self {
            GradientScheme::Gram { target, .. } => pca_pair_field(target, y),
            GradientScheme::DkPca { target } => dkpca_pair_field(target, y, OutputKernel::Cauchy),
            GradientScheme::DkLle { weights, .. } => dklle_pair_field(weights, y, OutputKernel::Cauchy),
            GradientScheme::UmapIntended { kx, eps } => {
                umap_intended_pair_field(kx, y, OutputKernel::Cauchy, *eps)
            }
        }
    }
}

/// DK-LLE loss and gradient without materializing the pair field:
/// `grad_i = 4 sum_j (M + J/n)_ij delta_ij (y_i - y_j)`.
fn dklle_fused(coeffs: &SymMatrix, y: &Matrix) -> Result<(f64, Matrix)> {
    let n = coeffs.size();
    check_points(n, y)?;
    let d = y.cols();
    let mut grad = Matrix::zeros(n, d);
    let mut loss = 0.0;
    let mut acc = vec![0.0; d];
    for i in 0..n {
        let yi = y.row(i);
        let crow = coeffs.row(i);
        acc.iter_mut().for_each(|a| *a = 0.0);
        let mut row_loss = crow[i];
        for j in 0..n {
            if j == i {
                continue;
            }
            let yj = y.row(j);
            let u = sq_dist(yi, yj);
            let k = 1.0 / (1.0 + u);
            row_loss += crow[j] * k;
            let s = crow[j] * (-k * k);
            for (a, (p, q)) in acc.iter_mut().zip(yi.iter().zip(yj)) {
                *a += s * (p - q);
            }
        }
        loss += row_loss;
        for (g, a) in grad.row_mut(i).iter_mut().zip(&acc) {
            *g = 4.0 * a;
        }
    }
    Ok((loss, grad))
}

/// Column sums of a gradient field; zero for translation-invariant losses.
pub fn column_sums(g: &Matrix) -> Vec<f64> {
    let mut s = vec![0.0; g.cols()];
    for i in 0..g.rows() {
        for (a, v) in s.iter_mut().zip(g.row(i)) {
            *a += v;
        }
    }
    s
}
