//! Direct eigensolver embeddings and a finite-difference gradient.

use crate::error::{Error, Result};
use crate::linalg::{double_center, gram, sym_eigh, Matrix, SpectrumEnd, SymMatrix};
use crate::objectives::cmds_target;

/// Eigenvalues at or below this fraction of the largest are treated as zero.
pub const RANK_TOL: f64 = 1e-10;
pub const NULL_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OracleMethod {
    Pca,
    Cmds,
    Lle,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleEmbedding {
    pub embedding: Matrix,
    pub spectrum: Vec<f64>,
    pub method: OracleMethod,
    /// Number of trailing columns set to zero because the target rank is
    /// smaller than `d`.
    pub padded: usize,
}

fn top_scaled(b: &SymMatrix, d: usize, method: OracleMethod) -> Result<OracleEmbedding> {
    let n = b.size();
    let eig = sym_eigh(b, d, SpectrumEnd::Largest)?;
    let top = eig.values.first().copied().unwrap_or(0.0).max(0.0);
    let mut emb = Matrix::zeros(n, d);
    let mut padded = 0;
    for k in 0..d {
        let lam = eig.values[k];
        if lam <= RANK_TOL * top || lam <= 0.0 {
            padded += 1;
            continue;
        }
        let s = lam.sqrt();
        for i in 0..n {
            emb.set(i, k, eig.vectors.get(i, k) * s);
        }
    }
    Ok(OracleEmbedding {
        embedding: emb,
        spectrum: eig.values,
        method,
        padded,
    })
}

/// Top-`d` principal coordinates `U sqrt(Lambda)` of `C X X^T C`.
pub fn pca_oracle(x: &Matrix, d: usize) -> Result<OracleEmbedding> {
    if d == 0 || d > x.rows().min(x.cols()) {
        return Err(Error::InvalidParameter(format!(
            "d = {d} must be in 1..=min(n, D) = {}",
            x.rows().min(x.cols())
        )));
    }
    top_scaled(&double_center(&gram(x)), d, OracleMethod::Pca)
}

/// Classical MDS on squared dissimilarities, clamping negative eigenvalues.
pub fn cmds_oracle(dsq: &SymMatrix, d: usize) -> Result<OracleEmbedding> {
    if d == 0 || d > dsq.size() {
        return Err(Error::InvalidParameter(format!("d = {d} must be in 1..={}", dsq.size())));
    }
    let b = cmds_target(dsq)?;
    let scale = b.frob_norm();
    let out = top_scaled(&b, d, OracleMethod::Cmds)?;
    if scale > 0.0 && out.spectrum[0] <= RANK_TOL * scale {
        return Err(Error::Undefined(
            "dissimilarities have no positive spectrum to embed".into(),
        ));
    }
    Ok(out)
}

/// Bottom eigenvectors of `M` above the null threshold, scaled so that
/// `Y^T Y / n = I`.
pub fn lle_oracle(m: &SymMatrix, d: usize) -> Result<OracleEmbedding> {
    let n = m.size();
    if d == 0 || d >= n {
        return Err(Error::InvalidParameter(format!("d = {d} must be in 1..{n}")));
    }
    let all = sym_eigh(m, n, SpectrumEnd::Smallest)?;
    let threshold = NULL_TOL * m.frob_norm();
    let keep: Vec<usize> = (0..n).filter(|&k| all.values[k] > threshold).take(d).collect();
    if keep.len() < d {
        return Err(Error::Undefined(format!(
            "only {} eigenvalues above the null threshold, need {d}",
            keep.len()
        )));
    }
    let s = (n as f64).sqrt();
    let emb = Matrix::from_fn(n, d, |i, c| all.vectors.get(i, keep[c]) * s);
    Ok(OracleEmbedding {
        embedding: emb,
        spectrum: keep.iter().map(|&k| all.values[k]).collect(),
        method: OracleMethod::Lle,
        padded: 0,
    })
}

/// Central differences `(f(Y + h e) - f(Y - h e)) / 2h` per coordinate.
pub fn finite_diff_grad<F>(loss: F, y: &Matrix, h: f64) -> Result<Matrix>
where
    F: Fn(&Matrix) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::InvalidParameter(format!("step h must be > 0, got {h}")));
    }
    let mut probe = y.clone();
    let mut out = Matrix::zeros(y.rows(), y.cols());
    for i in 0..y.rows() {
        for c in 0..y.cols() {
            let orig = y.get(i, c);
            probe.set(i, c, orig + h);
            let up = loss(&probe)?;
            probe.set(i, c, orig - h);
            let down = loss(&probe)?;
            probe.set(i, c, orig);
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::NonFinite {
                    epoch: 0,
                    quantity: format!("loss at probe ({i}, {c})"),
                });
            }
            out.set(i, c, (up - down) / (2.0 * h));
        }
    }
    Ok(out)
}
