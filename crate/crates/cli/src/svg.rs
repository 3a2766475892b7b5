//! Scatter plots as standalone SVG 1.1 documents.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ardr_core::linalg::Matrix;

use crate::CliError;

pub const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];
pub const CANVAS: f64 = 600.0;
pub const RADIUS: f64 = 2.0;
const MARGIN: f64 = 0.05;

fn bounds(values: &[f64]) -> (f64, f64) {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    (lo - MARGIN * span, span * (1.0 + 2.0 * MARGIN))
}

/// SVG text for the first two columns of `y`. The flag reports whether
/// columns beyond the second were dropped.
pub fn scatter_svg(y: &Matrix, labels: Option<&[usize]>) -> Result<(String, bool), CliError> {
    if y.cols() < 2 {
        return Err(CliError::Config(format!(
            "scatter plot needs at least 2 columns, got {}",
            y.cols()
        )));
    }
    if let Some(l) = labels {
        if l.len() != y.rows() {
            return Err(CliError::Config(format!(
                "{} labels for {} points",
                l.len(),
                y.rows()
            )));
        }
    }
    let (x0, xs) = bounds(&y.column(0));
    let (y0, ys) = bounds(&y.column(1));
    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\" standalone=\"no\"?>\n");
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{c}\" height=\"{c}\" viewBox=\"0 0 {c} {c}\">",
        c = CANVAS
    );
    let _ = writeln!(out, "<rect width=\"{c}\" height=\"{c}\" fill=\"#ffffff\"/>", c = CANVAS);
    for i in 0..y.rows() {
        let px = (y.get(i, 0) - x0) / xs * CANVAS;
        let py = CANVAS - (y.get(i, 1) - y0) / ys * CANVAS;
        let color = PALETTE[labels.map_or(0, |l| l[i] % PALETTE.len())];
        let _ = writeln!(
            out,
            "<circle cx=\"{px:.3}\" cy=\"{py:.3}\" r=\"{RADIUS}\" fill=\"{color}\"/>"
        );
    }
    out.push_str("</svg>\n");
    Ok((out, y.cols() > 2))
}

pub fn emit_scatter_svg(y: &Matrix, labels: Option<&[usize]>, path: &Path) -> Result<bool, CliError> {
    let (text, dropped) = scatter_svg(y, labels)?;
    fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(dropped)
}
