//! JSON experiment configuration.

use std::fs;
use std::path::{Path, PathBuf};

use ardr_core::engine::{self, Init, LrDecay, RunConfig};
use ardr_core::kernels::{InputKernelKind, InputKernelSpec, Symmetrize};
use ardr_core::linalg::Metric;
use ardr_core::metrics::{Divisor, MetricRequest};
use ardr_core::neighbors::{DEFAULT_K, DEFAULT_LLE_REG};
use ardr_core::objectives::DEFAULT_UMAP_EPS;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::datasets::DatasetSpec;
use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    Pca,
    Cmds,
    Isomap,
    Dkpca,
    Dklle,
    UmapIntended,
    UmapEffective,
    PcaOracle,
    CmdsOracle,
    IsomapOracle,
    LleOracle,
}

impl SchemeKind {
    pub fn is_oracle(self) -> bool {
        matches!(
            self,
            SchemeKind::PcaOracle | SchemeKind::CmdsOracle | SchemeKind::IsomapOracle | SchemeKind::LleOracle
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SchemeKind::Pca => "pca",
            SchemeKind::Cmds => "cmds",
            SchemeKind::Isomap => "isomap",
            SchemeKind::Dkpca => "dkpca",
            SchemeKind::Dklle => "dklle",
            SchemeKind::UmapIntended => "umap_intended",
            SchemeKind::UmapEffective => "umap_effective",
            SchemeKind::PcaOracle => "pca_oracle",
            SchemeKind::CmdsOracle => "cmds_oracle",
            SchemeKind::IsomapOracle => "isomap_oracle",
            SchemeKind::LleOracle => "lle_oracle",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    #[default]
    Euclidean,
    L1,
}

impl From<MetricKind> for Metric {
    fn from(m: MetricKind) -> Metric {
        match m {
            MetricKind::Euclidean => Metric::EuclideanSq,
            MetricKind::L1 => Metric::L1,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Linear,
    RbfFixed,
    #[default]
    RbfLocal,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SymmetrizeKind {
    None,
    #[default]
    FuzzyUnion,
    Average,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    #[serde(default)]
    pub kind: KernelKind,
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub symmetrize: SymmetrizeKind,
}

impl KernelConfig {
    pub fn to_spec(&self) -> Result<InputKernelSpec, CliError> {
        let kind = match self.kind {
            KernelKind::Linear => InputKernelKind::Linear,
            KernelKind::RbfLocal => InputKernelKind::RbfLocal,
            KernelKind::RbfFixed => InputKernelKind::RbfFixed {
                sigma: self
                    .sigma
                    .ok_or_else(|| CliError::Config("rbf_fixed kernel needs sigma".into()))?,
            },
        };
        let symmetrize = match self.symmetrize {
            SymmetrizeKind::None => Symmetrize::None,
            SymmetrizeKind::FuzzyUnion => Symmetrize::FuzzyUnion,
            SymmetrizeKind::Average => Symmetrize::Average,
        };
        Ok(InputKernelSpec { kind, symmetrize })
    }
}

fn default_dim() -> usize {
    2
}
fn default_k() -> usize {
    DEFAULT_K
}
fn default_reg() -> f64 {
    DEFAULT_LLE_REG
}
fn default_eps() -> f64 {
    DEFAULT_UMAP_EPS
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeConfig {
    pub name: SchemeKind,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_k")]
    pub k: usize,
    /// Dissimilarity for `cmds` / `cmds_oracle`.
    #[serde(default)]
    pub metric: MetricKind,
    #[serde(default)]
    pub input_kernel: KernelConfig,
    #[serde(default = "default_reg")]
    pub lle_reg: f64,
    /// Solve DK-LLE weights in the input-kernel feature space.
    #[serde(default)]
    pub kernel_weights: bool,
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Scheme whose loss is recorded along the trajectory.
    #[serde(default)]
    pub probe: Option<SchemeKind>,
}

impl SchemeConfig {
    pub fn new(name: SchemeKind) -> Self {
        SchemeConfig {
            name,
            dim: default_dim(),
            k: default_k(),
            metric: MetricKind::default(),
            input_kernel: KernelConfig::default(),
            lle_reg: default_reg(),
            kernel_weights: false,
            eps: default_eps(),
            probe: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitConfig {
    RandomGaussian {
        #[serde(default = "default_init_scale")]
        scale: f64,
    },
    #[default]
    LaplacianEigenmaps,
    Provided {
        path: PathBuf,
    },
}

fn default_init_scale() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayKind {
    None,
    #[default]
    LinearToZero,
}

fn default_epochs() -> usize {
    engine::DEFAULT_EPOCHS
}
fn default_negatives() -> usize {
    engine::DEFAULT_NEGATIVE_SAMPLES
}
fn default_record() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Defaults to 1.0 for `umap_effective` and 1e-3 otherwise.
    #[serde(default)]
    pub learning_rate: Option<f64>,
    #[serde(default)]
    pub lr_decay: DecayKind,
    #[serde(default)]
    pub init: InitConfig,
    #[serde(default = "default_negatives")]
    pub negative_samples: usize,
    #[serde(default = "default_record")]
    pub record_every: usize,
}

impl Default for RunSpec {
    fn default() -> Self {
        RunSpec {
            seed: 0,
            epochs: default_epochs(),
            learning_rate: None,
            lr_decay: DecayKind::default(),
            init: InitConfig::default(),
            negative_samples: default_negatives(),
            record_every: default_record(),
        }
    }
}

impl RunSpec {
    pub fn to_run_config(&self, scheme: SchemeKind) -> RunConfig {
        let lr = self.learning_rate.unwrap_or(match scheme {
            SchemeKind::UmapEffective => engine::DEFAULT_EFFECTIVE_LR,
            _ => engine::DEFAULT_DESCENT_LR,
        });
        RunConfig {
            seed: self.seed,
            epochs: self.epochs,
            learning_rate: lr,
            lr_decay: match self.lr_decay {
                DecayKind::None => LrDecay::None,
                DecayKind::LinearToZero => LrDecay::LinearToZero,
            },
            init: match self.init {
                InitConfig::RandomGaussian { scale } => Init::RandomGaussian { scale },
                InitConfig::LaplacianEigenmaps => Init::LaplacianEigenmaps,
                InitConfig::Provided { .. } => Init::Provided,
            },
            negative_samples: self.negative_samples,
            record_every: self.record_every,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivisorKind {
    #[default]
    Exclusive,
    Inclusive,
}

fn default_knn() -> usize {
    5
}
fn default_pres() -> usize {
    10
}
fn default_pairs() -> Vec<(usize, usize)> {
    vec![(2, 5), (6, 10)]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    #[serde(default = "default_knn")]
    pub knn_k: usize,
    #[serde(default = "default_pres")]
    pub preservation_k: usize,
    #[serde(default = "default_pairs")]
    pub ratio_pairs: Vec<(usize, usize)>,
    #[serde(default)]
    pub divisor: DivisorKind,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            knn_k: default_knn(),
            preservation_k: default_pres(),
            ratio_pairs: default_pairs(),
            divisor: DivisorKind::default(),
        }
    }
}

impl MetricsConfig {
    pub fn to_request(&self) -> MetricRequest {
        MetricRequest {
            knn_k: self.knn_k,
            preservation_k: self.preservation_k,
            ratio_pairs: self.ratio_pairs.clone(),
            divisor: match self.divisor {
                DivisorKind::Exclusive => Divisor::Exclusive,
                DivisorKind::Inclusive => Divisor::Inclusive,
            },
        }
    }
}

fn default_outputs() -> PathBuf {
    PathBuf::from("ardr_out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub scheme: SchemeConfig,
    #[serde(default)]
    pub run: RunSpec,
    #[serde(default = "default_outputs")]
    pub outputs: PathBuf,
    #[serde(default)]
    pub metrics: MetricsConfig,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        Self::from_value(serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?)
    }

    pub fn from_value(v: Value) -> Result<Self, CliError> {
        serde_json::from_value(v).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads a config file and applies `key.path=value` overrides. Values
    /// are parsed as JSON when possible and taken as strings otherwise.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let mut v: Value =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        for o in overrides {
            apply_override(&mut v, o)?;
        }
        Self::from_value(v)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

pub fn apply_override(root: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override '{assignment}' is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::Config(format!("override '{path}': '{key}' is not inside an object")))?;
        if i + 1 == keys.len() {
            obj.insert(key.to_string(), value);
            return Ok(());
        }
        node = obj
            .entry(key.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}
