//! Runs one configured experiment and writes its artifacts.

use std::fs;
use std::path::Path;

use ardr_core::engine::{descend, initial_embedding, umap_effective_optimize, Init, RunResult};
use ardr_core::kernels::input_kernel_matrix;
use ardr_core::linalg::{sq_dist_matrix, Matrix, SymMatrix};
use ardr_core::metrics::{metric_report, normalize_loss_curve, MetricReport};
use ardr_core::neighbors::{
    geodesic_dists, knn_graph, lle_weights, lle_weights_kernel, m_matrix, NeighborGraph, WeightMatrix,
};
use ardr_core::objectives::GradientScheme;
use ardr_core::oracles::{cmds_oracle, lle_oracle, pca_oracle};
use ardr_core::linalg::Metric;
use serde_json::{json, Map, Value};

use crate::config::{DivisorKind, ExperimentConfig, InitConfig, SchemeConfig, SchemeKind};
use crate::datasets::{load_dataset, parse_csv, Dataset};
use crate::svg::emit_scatter_svg;
use crate::CliError;

/// Lazily built neighborhood structures shared by the schemes.
pub struct Context<'a> {
    pub x: &'a Matrix,
    pub scheme: &'a SchemeConfig,
    graph: Option<NeighborGraph>,
    kx: Option<SymMatrix>,
}

impl<'a> Context<'a> {
    pub fn new(x: &'a Matrix, scheme: &'a SchemeConfig) -> Self {
        Context {
            x,
            scheme,
            graph: None,
            kx: None,
        }
    }

    pub fn graph(&mut self) -> Result<&NeighborGraph, CliError> {
        if self.graph.is_none() {
            self.graph = Some(knn_graph(self.x, self.scheme.k, Metric::EuclideanSq)?);
        }
        Ok(self.graph.as_ref().expect("graph built"))
    }

    pub fn kx(&mut self) -> Result<&SymMatrix, CliError> {
        if self.kx.is_none() {
            let spec = self.scheme.input_kernel.to_spec()?;
            let k = input_kernel_matrix(self.x, self.graph()?, spec)?;
            self.kx = Some(k);
        }
        Ok(self.kx.as_ref().expect("kernel built"))
    }

    pub fn weights(&mut self) -> Result<WeightMatrix, CliError> {
        let reg = self.scheme.lle_reg;
        if self.scheme.kernel_weights {
            let k = self.kx()?.clone();
            Ok(lle_weights_kernel(&k, self.graph()?, reg)?)
        } else {
            let x = self.x;
            Ok(lle_weights(x, self.graph()?, reg)?)
        }
    }

    /// The differentiable objective behind `kind`.
    pub fn gradient_scheme(&mut self, kind: SchemeKind) -> Result<GradientScheme, CliError> {
        Ok(match kind {
            SchemeKind::Pca | SchemeKind::PcaOracle => GradientScheme::pca(self.x),
            SchemeKind::Cmds | SchemeKind::CmdsOracle => {
                GradientScheme::cmds(&sq_dist_matrix(self.x, self.scheme.metric.into()))?
            }
            SchemeKind::Isomap | SchemeKind::IsomapOracle => {
                GradientScheme::isomap(&geodesic_dists(self.graph()?)?)?
            }
            SchemeKind::Dkpca => GradientScheme::dkpca(self.kx()?),
            SchemeKind::Dklle | SchemeKind::LleOracle => GradientScheme::dklle(self.weights()?),
            SchemeKind::UmapIntended | SchemeKind::UmapEffective => {
                GradientScheme::umap_intended(self.kx()?.clone(), self.scheme.eps)?
            }
        })
    }
}

#[derive(Clone, Debug)]
pub struct Fit {
    pub embedding: Matrix,
    /// `(epoch, loss)` of the recorded objective; empty for oracles.
    pub loss_curve: Vec<(usize, f64)>,
    pub wall_time: f64,
}

fn from_run(r: RunResult, use_probe: bool) -> Fit {
    Fit {
        embedding: r.embedding,
        loss_curve: if use_probe { r.probe_curve } else { r.loss_curve },
        wall_time: r.wall_time,
    }
}

fn start_embedding(ctx: &mut Context, cfg: &ExperimentConfig) -> Result<Matrix, CliError> {
    let n = ctx.x.rows();
    let d = cfg.scheme.dim;
    match &cfg.run.init {
        InitConfig::Provided { path } => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            let y = parse_csv(&text, None)?.x;
            if y.shape() != (n, d) {
                return Err(CliError::Config(format!(
                    "provided init is {:?}, expected ({n}, {d})",
                    y.shape()
                )));
            }
            Ok(y)
        }
        InitConfig::LaplacianEigenmaps => {
            let k = ctx.kx()?;
            Ok(initial_embedding(Init::LaplacianEigenmaps, n, d, Some(k), cfg.run.seed)?)
        }
        InitConfig::RandomGaussian { scale } => Ok(initial_embedding(
            Init::RandomGaussian { scale: *scale },
            n,
            d,
            None,
            cfg.run.seed,
        )?),
    }
}

/// Embeds `x` with the configured scheme.
pub fn fit(x: &Matrix, cfg: &ExperimentConfig) -> Result<Fit, CliError> {
    let kind = cfg.scheme.name;
    let d = cfg.scheme.dim;
    let mut ctx = Context::new(x, &cfg.scheme);
    if kind.is_oracle() {
        let o = match kind {
            SchemeKind::PcaOracle => pca_oracle(x, d)?,
            SchemeKind::CmdsOracle => cmds_oracle(&sq_dist_matrix(x, cfg.scheme.metric.into()), d)?,
            SchemeKind::IsomapOracle => cmds_oracle(&geodesic_dists(ctx.graph()?)?.squared, d)?,
            _ => lle_oracle(&m_matrix(&ctx.weights()?), d)?,
        };
        return Ok(Fit {
            embedding: o.embedding,
            loss_curve: Vec::new(),
            wall_time: 0.0,
        });
    }
    let run = cfg.run.to_run_config(kind);
    let y0 = start_embedding(&mut ctx, cfg)?;
    let probe = match cfg.scheme.probe {
        Some(p) => Some(ctx.gradient_scheme(p)?),
        None => None,
    };
    if kind == SchemeKind::UmapEffective {
        let kx = ctx.kx()?.clone();
        let g = ctx.graph()?;
        let r = umap_effective_optimize(&kx, g, &y0, &run, probe.as_ref())?;
        return Ok(from_run(r, false));
    }
    let scheme = ctx.gradient_scheme(kind)?;
    let r = descend(&scheme, &y0, &run, probe.as_ref())?;
    Ok(from_run(r, probe.is_some()))
}

#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub data: Dataset,
    pub fit: Fit,
    pub report: MetricReport,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput, CliError> {
    let data = load_dataset(&cfg.dataset)?;
    let fit = fit(&data.x, cfg)?;
    let report = metric_report(
        &data.x,
        &fit.embedding,
        data.labels.as_deref(),
        &cfg.metrics.to_request(),
    )?;
    Ok(ExperimentOutput { data, fit, report })
}

/// Decimal with 17 significant digits, which round-trips every `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn embedding_csv(y: &Matrix) -> String {
    let mut s = String::new();
    for i in 0..y.rows() {
        let row: Vec<String> = y.row(i).iter().map(|&v| fmt_f64(v)).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

pub fn loss_curve_csv(curve: &[(usize, f64)]) -> String {
    let mut s = String::from("epoch,raw,normalized\n");
    for ((e, raw), (_, norm)) in curve.iter().zip(normalize_loss_curve(curve)) {
        s.push_str(&format!("{e},{},{}\n", fmt_f64(*raw), fmt_f64(norm)));
    }
    s
}

pub fn metrics_json(cfg: &ExperimentConfig, out: &ExperimentOutput) -> Value {
    let r = &out.report;
    let mut pres = Map::new();
    for (k, b) in &r.preservation_by_k {
        pres.insert(k.to_string(), json!(b));
    }
    let ratios: Vec<Value> = r
        .preservation_ratios
        .iter()
        .map(|&(l, m, ratio)| json!({"l": l, "m": m, "ratio": ratio}))
        .collect();
    json!({
        "scheme": cfg.scheme.name.as_str(),
        "n": out.fit.embedding.rows(),
        "dim": out.fit.embedding.cols(),
        "final_loss": out.fit.loss_curve.last().map(|p| p.1),
        "knn_k": cfg.metrics.knn_k,
        "knn_accuracy": r.knn_accuracy,
        "preservation_by_k": pres,
        "ratio_divisor": match cfg.metrics.divisor {
            DivisorKind::Exclusive => "exclusive",
            DivisorKind::Inclusive => "inclusive",
        },
        "preservation_ratios": ratios,
        "notes": r.notes,
    })
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Writes `embedding.csv`, `loss_curve.csv`, `metrics.json` and
/// `scatter.svg` into `dir`. Returns warnings for the caller to print.
pub fn write_outputs(cfg: &ExperimentConfig, out: &ExperimentOutput, dir: &Path) -> Result<Vec<String>, CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    write(&dir.join("embedding.csv"), &embedding_csv(&out.fit.embedding))?;
    write(&dir.join("loss_curve.csv"), &loss_curve_csv(&out.fit.loss_curve))?;
    let metrics = serde_json::to_string_pretty(&metrics_json(cfg, out)).expect("json");
    write(&dir.join("metrics.json"), &(metrics + "\n"))?;
    let mut warnings = Vec::new();
    if out.fit.embedding.cols() >= 2 {
        let dropped = emit_scatter_svg(&out.fit.embedding, out.data.labels.as_deref(), &dir.join("scatter.svg"))?;
        if dropped {
            warnings.push("scatter.svg shows the first two coordinates only".to_string());
        }
    } else {
        warnings.push("1-dimensional embedding; scatter.svg not written".to_string());
    }
    Ok(warnings)
}
