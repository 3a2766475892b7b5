//! Dataset loading: CSV files and seeded synthetic generators.

use std::f64::consts::PI;
use std::fs;
use std::path::PathBuf;

use ardr_core::linalg::Matrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Pareto, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SWISS_ROLL_BINS: usize = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Generator {
    SwissRoll {
        #[serde(default)]
        noise: f64,
        #[serde(default)]
        extra_on_manifold: usize,
    },
    Plane,
    PlanePlusLine {
        #[serde(default = "default_line_fraction")]
        line_fraction: f64,
    },
    PlanePareto {
        #[serde(default = "default_alpha")]
        alpha: f64,
    },
    GaussianBlobs {
        #[serde(default = "default_centers")]
        centers: usize,
        #[serde(default = "default_spread")]
        spread: f64,
        #[serde(default = "default_dim")]
        dim: usize,
    },
}

fn default_line_fraction() -> f64 {
    0.2
}
fn default_alpha() -> f64 {
    1.5
}
fn default_centers() -> usize {
    5
}
fn default_spread() -> f64 {
    4.0
}
fn default_dim() -> usize {
    10
}

impl Generator {
    /// Parameter-free defaults for a kind name as used on the command line.
    pub fn from_kind(kind: &str) -> Result<Self, CliError> {
        Ok(match kind {
            "swiss_roll" => Generator::SwissRoll {
                noise: 0.0,
                extra_on_manifold: 0,
            },
            "plane" => Generator::Plane,
            "plane_plus_line" => Generator::PlanePlusLine {
                line_fraction: default_line_fraction(),
            },
            "plane_pareto" => Generator::PlanePareto {
                alpha: default_alpha(),
            },
            "gaussian_blobs" => Generator::GaussianBlobs {
                centers: default_centers(),
                spread: default_spread(),
                dim: default_dim(),
            },
            other => return Err(CliError::Config(format!("unknown dataset kind '{other}'"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(flatten)]
    pub generator: Generator,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Csv {
        path: PathBuf,
        #[serde(default)]
        label_column: Option<usize>,
    },
    Synthetic(SyntheticSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub source: Source,
    #[serde(default)]
    pub subsample: Option<usize>,
    #[serde(default)]
    pub subsample_seed: u64,
    #[serde(default)]
    pub standardize: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub labels: Option<Vec<usize>>,
    /// Original label strings for CSV input, indexed by label id.
    pub label_names: Option<Vec<String>>,
}

pub fn load_dataset(spec: &DatasetSpec) -> Result<Dataset, CliError> {
    let mut data = match &spec.source {
        Source::Csv { path, label_column } => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            parse_csv(&text, *label_column)?
        }
        Source::Synthetic(s) => generate(s)?,
    };
    if let Some(m) = spec.subsample {
        data = subsample(&data, m, spec.subsample_seed)?;
    }
    if spec.standardize {
        data.x = standardize(&data.x);
    }
    Ok(data)
}

fn is_numeric(field: &str) -> bool {
    field.trim().parse::<f64>().is_ok()
}

/// Comma-separated values without quoting. The first row is a header when
/// any of its feature fields is not a number.
pub fn parse_csv(text: &str, label_column: Option<usize>) -> Result<Dataset, CliError> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .peekable();
    if let Some((_, first)) = lines.peek() {
        let header = first
            .split(',')
            .enumerate()
            .any(|(c, f)| Some(c) != label_column && !is_numeric(f));
        if header {
            lines.next();
        }
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut names: Vec<String> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let mut arity = None;
    for (idx, line) in lines {
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        match arity {
            None => arity = Some(fields.len()),
            Some(a) if a != fields.len() => {
                return Err(CliError::Parse {
                    line: lineno,
                    msg: format!("expected {a} fields, found {}", fields.len()),
                })
            }
            _ => {}
        }
        if let Some(lc) = label_column {
            if lc >= fields.len() {
                return Err(CliError::Parse {
                    line: lineno,
                    msg: format!("label column {lc} missing ({} fields)", fields.len()),
                });
            }
        }
        let mut row = Vec::with_capacity(fields.len());
        for (c, f) in fields.iter().enumerate() {
            if Some(c) == label_column {
                let id = match names.iter().position(|n| n == f) {
                    Some(p) => p,
                    None => {
                        names.push(f.to_string());
                        names.len() - 1
                    }
                };
                labels.push(id);
                continue;
            }
            let v: f64 = f.parse().map_err(|_| CliError::Parse {
                line: lineno,
                msg: format!("field {} ('{f}') is not a number", c + 1),
            })?;
            if !v.is_finite() {
                return Err(CliError::Parse {
                    line: lineno,
                    msg: format!("field {} is not finite", c + 1),
                });
            }
            row.push(v);
        }
        rows.push(row);
    }
    if rows.is_empty() || rows[0].is_empty() {
        return Err(CliError::Parse {
            line: 1,
            msg: "no numeric data".into(),
        });
    }
    let x = Matrix::from_rows(&rows).map_err(CliError::Core)?;
    Ok(Dataset {
        x,
        labels: label_column.map(|_| labels),
        label_names: label_column.map(|_| names),
    })
}

/// Uniform sample of `m` rows without replacement, kept in original order.
pub fn subsample(data: &Dataset, m: usize, seed: u64) -> Result<Dataset, CliError> {
    let n = data.x.rows();
    if m > n || m == 0 {
        return Err(CliError::Config(format!("subsample {m} must be in 1..={n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, n, m).into_vec();
    idx.sort_unstable();
    let x = Matrix::from_fn(m, data.x.cols(), |i, c| data.x.get(idx[i], c));
    Ok(Dataset {
        x,
        labels: data.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
        label_names: data.label_names.clone(),
    })
}

/// Per-column zero mean and unit variance; constant columns become zero.
pub fn standardize(x: &Matrix) -> Matrix {
    let n = x.rows() as f64;
    let means = x.column_means();
    let sds: Vec<f64> = (0..x.cols())
        .map(|c| {
            let var = (0..x.rows()).map(|i| (x.get(i, c) - means[c]).powi(2)).sum::<f64>() / n;
            var.sqrt()
        })
        .collect();
    Matrix::from_fn(x.rows(), x.cols(), |i, c| {
        if sds[c] > 0.0 {
            (x.get(i, c) - means[c]) / sds[c]
        } else {
            0.0
        }
    })
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn swiss_point(t: f64, h: f64) -> [f64; 3] {
    [t * t.cos(), h, t * t.sin()]
}

fn roll_bin(t: f64) -> usize {
    let frac = (t - 1.5 * PI) / (3.0 * PI);
    ((frac * SWISS_ROLL_BINS as f64) as usize).min(SWISS_ROLL_BINS - 1)
}

pub fn generate(spec: &SyntheticSpec) -> Result<Dataset, CliError> {
    let n = spec.n;
    if n == 0 {
        return Err(CliError::Config("synthetic n must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut labels: Option<Vec<usize>> = None;
    match spec.generator {
        Generator::SwissRoll {
            noise,
            extra_on_manifold,
        } => {
            if !(noise >= 0.0) {
                return Err(CliError::Config(format!("noise must be >= 0, got {noise}")));
            }
            let mut lab = Vec::with_capacity(n + extra_on_manifold);
            for i in 0..n + extra_on_manifold {
                let t = 1.5 * PI * (1.0 + 2.0 * rng.random::<f64>());
                let h = 21.0 * rng.random::<f64>();
                let mut p = swiss_point(t, h);
                if i < n && noise > 0.0 {
                    p.iter_mut().for_each(|v| *v += noise * normal(&mut rng));
                }
                rows.push(p.to_vec());
                lab.push(roll_bin(t));
            }
            labels = Some(lab);
        }
        Generator::Plane => {
            for _ in 0..n {
                rows.push(vec![10.0 * rng.random::<f64>(), 10.0 * rng.random::<f64>(), 0.0]);
            }
        }
        Generator::PlanePlusLine { line_fraction } => {
            if !(0.0..=1.0).contains(&line_fraction) {
                return Err(CliError::Config(format!(
                    "line_fraction must be in [0, 1], got {line_fraction}"
                )));
            }
            let on_line = (n as f64 * line_fraction).round() as usize;
            let mut lab = Vec::with_capacity(n);
            for i in 0..n {
                if i < n - on_line {
                    rows.push(vec![10.0 * rng.random::<f64>(), 10.0 * rng.random::<f64>(), 0.0]);
                    lab.push(0);
                } else {
                    rows.push(vec![5.0, 5.0, 10.0 * rng.random::<f64>()]);
                    lab.push(1);
                }
            }
            labels = Some(lab);
        }
        Generator::PlanePareto { alpha } => {
            let dist = Pareto::new(1.0, alpha)
                .map_err(|e| CliError::Config(format!("pareto alpha {alpha}: {e}")))?;
            for _ in 0..n {
                let (a, b) = (10.0 * rng.random::<f64>(), 10.0 * rng.random::<f64>());
                rows.push(vec![a, b, dist.sample(&mut rng) - 1.0]);
            }
        }
        Generator::GaussianBlobs {
            centers,
            spread,
            dim,
        } => {
            if centers == 0 || dim == 0 || !(spread > 0.0) {
                return Err(CliError::Config(
                    "gaussian_blobs needs centers >= 1, dim >= 1, spread > 0".into(),
                ));
            }
            let mids: Vec<Vec<f64>> = (0..centers)
                .map(|_| (0..dim).map(|_| rng.random_range(-10.0..10.0)).collect())
                .collect();
            let mut lab = Vec::with_capacity(n);
            for i in 0..n {
                let c = i % centers;
                rows.push(mids[c].iter().map(|m| m + spread * normal(&mut rng)).collect());
                lab.push(c);
            }
            labels = Some(lab);
        }
    }
    Ok(Dataset {
        x: Matrix::from_rows(&rows).map_err(CliError::Core)?,
        labels,
        label_names: None,
    })
}
