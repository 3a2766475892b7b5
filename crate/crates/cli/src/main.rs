use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context as _, Result};
use ardr::config::{DivisorKind, ExperimentConfig, MetricsConfig};
use ardr::datasets::{generate, parse_csv, Generator, SyntheticSpec};
use ardr::experiment::{embedding_csv, run_experiment, write_outputs, ExperimentOutput};
use ardr_core::metrics::{metric_report, normalize_jointly};
use clap::{Parser, Subcommand};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "ardr", version, about = "Gradient-based dimensionality reduction experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a JSON config.
    Run {
        config: PathBuf,
        #[command(flatten)]
        over: Overrides,
    },
    /// Write a synthetic dataset as CSV (label in the last column).
    Generate {
        kind: String,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare an embedding against its input.
    Metrics {
        #[arg(long)]
        x: PathBuf,
        #[arg(long)]
        y: PathBuf,
        /// CSV with one label per row.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        knn_k: usize,
        #[arg(long, default_value_t = 10)]
        preservation_k: usize,
        #[arg(long)]
        inclusive: bool,
    },
    /// Run two configs and report their differences.
    Compare {
        config_a: PathBuf,
        config_b: PathBuf,
        #[command(flatten)]
        over: Overrides,
    },
}

#[derive(clap::Args, Clone, Default)]
struct Overrides {
    /// Output directory (for compare: parent of `a/` and `b/`).
    #[arg(long)]
    outputs: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    scheme: Option<String>,
    /// Dotted-path assignment such as `run.learning_rate=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Overrides {
    fn assignments(&self) -> Vec<String> {
        let mut v = Vec::new();
        if let Some(s) = self.seed {
            v.push(format!("run.seed={s}"));
        }
        if let Some(e) = self.epochs {
            v.push(format!("run.epochs={e}"));
        }
        if let Some(s) = &self.scheme {
            v.push(format!("scheme.name=\"{s}\""));
        }
        v.extend(self.set.iter().cloned());
        v
    }
}

fn load(path: &Path, over: &Overrides) -> Result<ExperimentConfig> {
    Ok(ExperimentConfig::load(path, &over.assignments())?)
}

fn execute(cfg: &ExperimentConfig, dir: &Path) -> Result<ExperimentOutput> {
    let out = run_experiment(cfg)?;
    for w in write_outputs(cfg, &out, dir)? {
        eprintln!("warning: {w}");
    }
    Ok(out)
}

fn summary(out: &ExperimentOutput) -> Value {
    json!({
        "final_loss": out.fit.loss_curve.last().map(|p| p.1),
        "knn_accuracy": out.report.knn_accuracy,
        "preservation_ratios": out.report.preservation_ratios.iter()
            .map(|&(l, m, r)| json!({"l": l, "m": m, "ratio": r}))
            .collect::<Vec<_>>(),
    })
}

fn compare(a: &ExperimentConfig, b: &ExperimentConfig, root: &Path) -> Result<Value> {
    let ra = execute(a, &root.join("a"))?;
    let rb = execute(b, &root.join("b"))?;
    let joint = normalize_jointly(&[&ra.fit.loss_curve, &rb.fit.loss_curve]);
    let last = |c: &Vec<(usize, f64)>| c.last().map(|p| p.1);
    let ratio_diff: Vec<Value> = ra
        .report
        .preservation_ratios
        .iter()
        .zip(&rb.report.preservation_ratios)
        .map(|(&(l, m, x), &(_, _, y))| json!({"l": l, "m": m, "abs_diff": (x - y).abs()}))
        .collect();
    let knn_diff = match (ra.report.knn_accuracy, rb.report.knn_accuracy) {
        (Some(x), Some(y)) => Some((x - y).abs()),
        _ => None,
    };
    Ok(json!({
        "a": {"scheme": a.scheme.name.as_str(), "summary": summary(&ra),
              "final_loss_joint_normalized": last(&joint[0])},
        "b": {"scheme": b.scheme.name.as_str(), "summary": summary(&rb),
              "final_loss_joint_normalized": last(&joint[1])},
        "preservation_ratio_abs_diff": ratio_diff,
        "knn_accuracy_abs_diff": knn_diff,
    }))
}

fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).with_context(|| path.display().to_string())?;
    let mut names: Vec<&str> = Vec::new();
    let mut ids = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let id = match names.iter().position(|n| *n == line) {
            Some(p) => p,
            None => {
                names.push(line);
                names.len() - 1
            }
        };
        ids.push(id);
    }
    if ids.is_empty() {
        bail!("{}: no labels found", path.display());
    }
    Ok(ids)
}

fn read_matrix(path: &Path) -> Result<ardr_core::linalg::Matrix> {
    let text = fs::read_to_string(path).with_context(|| path.display().to_string())?;
    Ok(parse_csv(&text, None)?.x)
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, over } => {
            let mut cfg = load(&config, &over)?;
            if let Some(o) = over.outputs {
                cfg.outputs = o;
            }
            let out = execute(&cfg, &cfg.outputs)?;
            println!("{}", serde_json::to_string(&summary(&out))?);
        }
        Command::Generate { kind, n, seed, out } => {
            let data = generate(&SyntheticSpec {
                n,
                seed,
                generator: Generator::from_kind(&kind)?,
            })?;
            let mut text = embedding_csv(&data.x);
            if let Some(labels) = &data.labels {
                text = text
                    .lines()
                    .zip(labels)
                    .map(|(row, l)| format!("{row},{l}\n"))
                    .collect();
            }
            fs::write(&out, text).with_context(|| out.display().to_string())?;
        }
        Command::Metrics {
            x,
            y,
            labels,
            knn_k,
            preservation_k,
            inclusive,
        } => {
            let xm = read_matrix(&x)?;
            let ym = read_matrix(&y)?;
            let labels = labels.as_deref().map(read_labels).transpose()?;
            let mc = MetricsConfig {
                knn_k,
                preservation_k,
                divisor: if inclusive {
                    DivisorKind::Inclusive
                } else {
                    DivisorKind::Exclusive
                },
                ..MetricsConfig::default()
            };
            let r = metric_report(&xm, &ym, labels.as_deref(), &mc.to_request())?;
            let ratios: Vec<Value> = r
                .preservation_ratios
                .iter()
                .map(|&(l, m, v)| json!({"l": l, "m": m, "ratio": v}))
                .collect();
            let pres: serde_json::Map<String, Value> = r
                .preservation_by_k
                .iter()
                .map(|(k, v)| (k.to_string(), json!(v)))
                .collect();
            let doc = json!({
                "knn_accuracy": r.knn_accuracy,
                "preservation_by_k": pres,
                "preservation_ratios": ratios,
                "notes": r.notes,
            });
            println!("{}", serde_json::to_string_pretty(&doc)?);
        }
        Command::Compare {
            config_a,
            config_b,
            over,
        } => {
            let a = load(&config_a, &over)?;
            let b = load(&config_b, &over)?;
            let root = over.outputs.clone().unwrap_or_else(|| a.outputs.join("compare"));
            let doc = compare(&a, &b, &root)?;
            let text = serde_json::to_string_pretty(&doc)?;
            fs::write(root.join("compare.json"), format!("{text}\n"))?;
            println!("{text}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
