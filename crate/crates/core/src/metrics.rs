//! Neighborhood preservation, k-NN accuracy and loss-curve normalization.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Metric};
use crate::neighbors::knn_graph;

/// Leave-one-out k-NN majority vote in `y`. Ties go to the smallest label.
/// A single-class label set gives 1.0.
pub fn knn_accuracy(y: &Matrix, labels: &[usize], k: usize) -> Result<f64> {
    let n = y.rows();
    if labels.len() != n {
        return Err(Error::ShapeMismatch {
            expected: format!("{n} labels"),
            got: format!("{}", labels.len()),
        });
    }
    let g = knn_graph(y, k, Metric::EuclideanSq)?;
    let mut votes: BTreeMap<usize, usize> = BTreeMap::new();
    let mut correct = 0usize;
    for i in 0..n {
        votes.clear();
        for &j in g.neighbors(i) {
            *votes.entry(labels[j]).or_insert(0) += 1;
        }
        // BTreeMap iterates labels ascending; keep the first maximum
        let mut best = (0usize, 0usize);
        for (&label, &count) in &votes {
            if count > best.1 {
                best = (label, count);
            }
        }
        if best.0 == labels[i] {
            correct += 1;
        }
    }
    Ok(correct as f64 / n as f64)
}

pub fn is_single_class(labels: &[usize]) -> bool {
    labels.windows(2).all(|w| w[0] == w[1])
}

fn check_pair(x: &Matrix, y: &Matrix, k: usize) -> Result<()> {
    if x.rows() != y.rows() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} rows", x.rows()),
            got: format!("{}", y.rows()),
        });
    }
    if k == 0 || k >= x.rows() {
        return Err(Error::InvalidParameter(format!("k = {k} must be in 1..{}", x.rows())));
    }
    Ok(())
}

/// `B(X, Y; k)` for every `k` in `1..=kmax`: the fraction of points whose
/// `k`-th nearest neighbor is the same point in both spaces.
pub fn preservation_curve(x: &Matrix, y: &Matrix, kmax: usize) -> Result<Vec<f64>> {
    check_pair(x, y, kmax)?;
    let n = x.rows();
    let gx = knn_graph(x, kmax, Metric::EuclideanSq)?;
    let gy = knn_graph(y, kmax, Metric::EuclideanSq)?;
    let mut hits = vec![0usize; kmax];
    for i in 0..n {
        for (r, (a, b)) in gx.neighbors(i).iter().zip(gy.neighbors(i)).enumerate() {
            if a == b {
                hits[r] += 1;
            }
        }
    }
    Ok(hits.into_iter().map(|h| h as f64 / n as f64).collect())
}

pub fn neighborhood_b(x: &Matrix, y: &Matrix, k: usize) -> Result<f64> {
    Ok(preservation_curve(x, y, k)?[k - 1])
}

/// Denominator of the averaged preservation over ranks `l..=m`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Divisor {
    /// `m - l`, one less than the number of terms.
    #[default]
    Exclusive,
    /// `m - l + 1`, a true mean.
    Inclusive,
}

impl Divisor {
    fn value(self, l: usize, m: usize) -> usize {
        match self {
            Divisor::Exclusive => m - l,
            Divisor::Inclusive => m - l + 1,
        }
    }
}

fn ratio_from_curve(curve: &[f64], l: usize, m: usize, divisor: Divisor) -> Result<f64> {
    if l == 0 || l > m {
        return Err(Error::InvalidParameter(format!("need 1 <= l <= m, got l = {l}, m = {m}")));
    }
    let div = divisor.value(l, m);
    if div == 0 {
        return Err(Error::InvalidParameter(format!(
            "l = m = {l} leaves a zero divisor"
        )));
    }
    let b1 = curve[0];
    if b1 == 0.0 {
        return Err(Error::Undefined(
            "nearest neighbor is never preserved (B(X, Y; 1) = 0)".into(),
        ));
    }
    let sum: f64 = curve[l - 1..m].iter().sum();
    Ok(sum / div as f64 / b1)
}

/// Average of `B(X, Y; k)` over `k = l..=m`, relative to `B(X, Y; 1)`.
pub fn preservation_ratio(x: &Matrix, y: &Matrix, l: usize, m: usize, divisor: Divisor) -> Result<f64> {
    check_pair(x, y, m.max(1))?;
    let curve = preservation_curve(x, y, m)?;
    ratio_from_curve(&curve, l, m, divisor)
}

/// Mean fraction of shared members between the `k`-NN sets in `X` and `Y`.
pub fn topk_overlap(x: &Matrix, y: &Matrix, k: usize) -> Result<f64> {
    check_pair(x, y, k)?;
    let n = x.rows();
    let gx = knn_graph(x, k, Metric::EuclideanSq)?;
    let gy = knn_graph(y, k, Metric::EuclideanSq)?;
    let mut total = 0usize;
    for i in 0..n {
        let mut a = gx.neighbors(i).to_vec();
        a.sort_unstable();
        total += gy
            .neighbors(i)
            .iter()
            .filter(|j| a.binary_search(j).is_ok())
            .count();
    }
    Ok(total as f64 / (n * k) as f64)
}

/// Affine rescale of the losses to `[0, 1]` (max to 1, min to 0). A
/// constant curve maps to zeros.
pub fn normalize_loss_curve(curve: &[(usize, f64)]) -> Vec<(usize, f64)> {
    normalize_jointly(&[curve]).pop().unwrap_or_default()
}

/// Rescale several curves with one shared affine map, using the minimum and
/// maximum over all of them.
pub fn normalize_jointly(curves: &[&[(usize, f64)]]) -> Vec<Vec<(usize, f64)>> {
    let all = curves.iter().flat_map(|c| c.iter().map(|p| p.1));
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    let span = hi - lo;
    curves
        .iter()
        .map(|c| {
            c.iter()
                .map(|&(e, v)| (e, if span > 0.0 { (v - lo) / span } else { 0.0 }))
                .collect()
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub knn_accuracy: Option<f64>,
    pub preservation_by_k: BTreeMap<usize, f64>,
    pub preservation_ratios: Vec<(usize, usize, f64)>,
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRequest {
    pub knn_k: usize,
    pub preservation_k: usize,
    pub ratio_pairs: Vec<(usize, usize)>,
    pub divisor: Divisor,
}

impl Default for MetricRequest {
    fn default() -> Self {
        MetricRequest {
            knn_k: 5,
            preservation_k: 10,
            ratio_pairs: vec![(2, 5), (6, 10)],
            divisor: Divisor::Exclusive,
        }
    }
}

/// All requested metrics between the input `x` and its embedding `y`.
pub fn metric_report(
    x: &Matrix,
    y: &Matrix,
    labels: Option<&[usize]>,
    req: &MetricRequest,
) -> Result<MetricReport> {
    let mut report = MetricReport::default();
    let kmax = req
        .ratio_pairs
        .iter()
        .map(|p| p.1)
        .chain(std::iter::once(req.preservation_k))
        .max()
        .unwrap_or(1);
    let curve = preservation_curve(x, y, kmax)?;
    for k in 1..=req.preservation_k {
        report.preservation_by_k.insert(k, curve[k - 1]);
    }
    for &(l, m) in &req.ratio_pairs {
        match ratio_from_curve(&curve, l, m, req.divisor) {
            Ok(r) => report.preservation_ratios.push((l, m, r)),
            Err(e) => report.notes.push(format!("ratio ({l}, {m}): {e}")),
        }
    }
    if let Some(labels) = labels {
        if is_single_class(labels) {
            report.notes.push("single label class; knn accuracy is trivially 1".into());
        }
        report.knn_accuracy = Some(knn_accuracy(y, labels, req.knn_k)?);
    }
    Ok(report)
}
