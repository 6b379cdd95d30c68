//! Experiment configuration read from TOML.

use std::path::{Path, PathBuf};

use dataval::learners::{LogisticParams, TreeParams};
use dataval::{ConvergenceConfig, LearnerSpec, Metric};
use serde::Deserialize;

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Detect,
    Removal,
    Addition,
    Runtime,
}

impl TaskKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TaskKind::Detect => "detect",
            TaskKind::Removal => "removal",
            TaskKind::Addition => "addition",
            TaskKind::Runtime => "runtime",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Blobs {
        /// Defaults to the sum of the split sizes.
        n: Option<usize>,
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default = "default_classes")]
        classes: usize,
        #[serde(default = "default_sep")]
        sep: f64,
    },
    Friedman {
        n: Option<usize>,
    },
    Csv {
        path: PathBuf,
        label_column: usize,
        #[serde(default)]
        regression: bool,
    },
}

fn default_dim() -> usize {
    10
}
fn default_classes() -> usize {
    2
}
fn default_sep() -> f64 {
    1.5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    #[serde(default = "default_train")]
    pub train: usize,
    #[serde(default = "default_valid")]
    pub valid: usize,
    #[serde(default = "default_test")]
    pub test: usize,
}

fn default_train() -> usize {
    1000
}
fn default_valid() -> usize {
    100
}
fn default_test() -> usize {
    3000
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train: default_train(),
            valid: default_valid(),
            test: default_test(),
        }
    }
}

impl SplitConfig {
    pub fn total(&self) -> usize {
        self.train + self.valid + self.test
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKindConfig {
    LabelFlip,
    FeatureGauss,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(default = "default_noise_kind")]
    pub kind: NoiseKindConfig,
    #[serde(default = "default_rate")]
    pub rate: f64,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
}

fn default_noise_kind() -> NoiseKindConfig {
    NoiseKindConfig::LabelFlip
}
fn default_rate() -> f64 {
    0.2
}
fn default_sigma() -> f64 {
    2.0
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            kind: default_noise_kind(),
            rate: default_rate(),
            sigma: default_sigma(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LearnerConfig {
    Logistic {
        l2: Option<f64>,
        epochs: Option<usize>,
        step: Option<f64>,
    },
    Tree {
        max_depth: Option<usize>,
        min_split: Option<usize>,
    },
    Knn {
        k: usize,
    },
    Constant,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig::Logistic {
            l2: None,
            epochs: None,
            step: None,
        }
    }
}

impl LearnerConfig {
    pub fn to_spec(self) -> LearnerSpec {
        match self {
            LearnerConfig::Logistic { l2, epochs, step } => {
                let d = LogisticParams::default();
                LearnerSpec::Logistic(LogisticParams {
                    l2: l2.unwrap_or(d.l2),
                    epochs: epochs.unwrap_or(d.epochs),
                    step: step.unwrap_or(d.step),
                })
            }
            LearnerConfig::Tree {
                max_depth,
                min_split,
            } => LearnerSpec::Tree(tree_params(max_depth, min_split)),
            LearnerConfig::Knn { k } => LearnerSpec::Knn { k },
            LearnerConfig::Constant => LearnerSpec::Constant,
        }
    }
}

fn tree_params(max_depth: Option<usize>, min_split: Option<usize>) -> TreeParams {
    let d = TreeParams::default();
    TreeParams {
        max_depth: max_depth.unwrap_or(d.max_depth),
        min_split: min_split.unwrap_or(d.min_split),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceToml {
    pub gr_threshold: Option<f64>,
    pub min_permutations: Option<usize>,
    pub max_permutations: Option<usize>,
    pub trunc_tol: Option<f64>,
    pub trunc_patience: Option<usize>,
    pub n_chains: Option<usize>,
}

impl ConvergenceToml {
    fn resolve(&self) -> ConvergenceConfig {
        let d = ConvergenceConfig::default();
        ConvergenceConfig {
            gr_threshold: self.gr_threshold.unwrap_or(d.gr_threshold),
            min_permutations: self.min_permutations.unwrap_or(d.min_permutations),
            max_permutations: self.max_permutations.unwrap_or(d.max_permutations),
            trunc_tol: self.trunc_tol.unwrap_or(d.trunc_tol),
            trunc_patience: self.trunc_patience.unwrap_or(d.trunc_patience),
            n_chains: self.n_chains.unwrap_or(d.n_chains),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OobBase {
    Tree,
    Learner,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LavaCostKind {
    ClassWise,
    Fixed,
}

/// One `[[valuator]]` entry, selected by its `name` key.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum ValuatorConfig {
    Loo {
        label: Option<String>,
    },
    DataShapley {
        label: Option<String>,
    },
    BetaShapley {
        label: Option<String>,
        #[serde(default = "default_alpha")]
        alpha: f64,
        #[serde(default = "default_beta")]
        beta: f64,
    },
    DataBanzhaf {
        label: Option<String>,
        #[serde(default = "default_models")]
        n_subsets: usize,
    },
    InfluenceSubset {
        label: Option<String>,
        #[serde(default = "default_models")]
        n_subsets: usize,
    },
    Ame {
        label: Option<String>,
        #[serde(default = "default_models")]
        n_subsets: usize,
    },
    KnnShapley {
        label: Option<String>,
        /// Defaults to 10% of the training set size.
        k: Option<usize>,
    },
    VolumeShapley {
        label: Option<String>,
    },
    Lava {
        label: Option<String>,
        cost: Option<LavaCostKind>,
        label_weight: Option<f64>,
        epsilon_scale: Option<f64>,
    },
    DataOob {
        label: Option<String>,
        #[serde(default = "default_models")]
        n_estimators: usize,
        /// `tree` bags decision trees; `learner` bags the configured learner.
        base: Option<OobBase>,
        max_depth: Option<usize>,
        min_split: Option<usize>,
    },
    Random {
        label: Option<String>,
    },
}

fn default_alpha() -> f64 {
    16.0
}
fn default_beta() -> f64 {
    1.0
}
fn default_models() -> usize {
    1000
}

impl ValuatorConfig {
    pub fn name(&self) -> &'static str {
        match self {
            ValuatorConfig::Loo { .. } => "loo",
            ValuatorConfig::DataShapley { .. } => "data_shapley",
            ValuatorConfig::BetaShapley { .. } => "beta_shapley",
            ValuatorConfig::DataBanzhaf { .. } => "data_banzhaf",
            ValuatorConfig::InfluenceSubset { .. } => "influence_subset",
            ValuatorConfig::Ame { .. } => "ame",
            ValuatorConfig::KnnShapley { .. } => "knn_shapley",
            ValuatorConfig::VolumeShapley { .. } => "volume_shapley",
            ValuatorConfig::Lava { .. } => "lava",
            ValuatorConfig::DataOob { .. } => "data_oob",
            ValuatorConfig::Random { .. } => "random",
        }
    }

    /// Name used in the output files and for deriving random streams.
    pub fn label(&self) -> &str {
        let label = match self {
            ValuatorConfig::Loo { label }
            | ValuatorConfig::DataShapley { label }
            | ValuatorConfig::BetaShapley { label, .. }
            | ValuatorConfig::DataBanzhaf { label, .. }
            | ValuatorConfig::InfluenceSubset { label, .. }
            | ValuatorConfig::Ame { label, .. }
            | ValuatorConfig::KnnShapley { label, .. }
            | ValuatorConfig::VolumeShapley { label }
            | ValuatorConfig::Lava { label, .. }
            | ValuatorConfig::DataOob { label, .. }
            | ValuatorConfig::Random { label } => label,
        };
        label.as_deref().unwrap_or(self.name())
    }

    pub(crate) fn oob_tree(&self) -> TreeParams {
        match self {
            ValuatorConfig::DataOob {
                max_depth,
                min_split,
                ..
            } => tree_params(*max_depth, *min_split),
            _ => TreeParams::default(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    name: Option<String>,
    dataset: Option<DatasetConfig>,
    #[serde(default)]
    split: SplitConfig,
    #[serde(default)]
    noise: NoiseConfig,
    #[serde(default)]
    learner: LearnerConfig,
    metric: Option<String>,
    convergence: Option<ConvergenceToml>,
    #[serde(default)]
    valuator: Vec<ValuatorConfig>,
    tasks: Option<Vec<TaskKind>>,
    seeds: Option<Vec<u64>>,
    output_dir: Option<PathBuf>,
    curve_step: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub dataset: DatasetConfig,
    pub split: SplitConfig,
    pub noise: NoiseConfig,
    pub learner: LearnerSpec,
    /// `None` picks accuracy for classification and negative MSE for regression.
    pub metric: Option<Metric>,
    pub convergence: ConvergenceConfig,
    pub valuators: Vec<ValuatorConfig>,
    pub tasks: Vec<TaskKind>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub curve_step: usize,
}

/// Reads and validates a config file. Relative paths inside it resolve
/// against the file's directory.
pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("experiment");
    let mut cfg = parse_config_str(&text, stem)?;
    if let DatasetConfig::Csv { path, .. } = &mut cfg.dataset {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
    if cfg.output_dir.is_relative() {
        cfg.output_dir = base.join(&cfg.output_dir);
    }
    Ok(cfg)
}

/// Parses config text; `default_name` names the experiment when the file
/// does not.
pub fn parse_config_str(text: &str, default_name: &str) -> Result<ExperimentConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
    let dataset = raw
        .dataset
        .ok_or_else(|| HarnessError::Config("missing [dataset] section".into()))?;
    let metric = raw
        .metric
        .map(|m| {
            m.parse::<Metric>()
                .map_err(|e| HarnessError::Config(format!("metric: {e}")))
        })
        .transpose()?;
    let cfg = ExperimentConfig {
        name: raw.name.unwrap_or_else(|| default_name.to_string()),
        dataset,
        split: raw.split,
        noise: raw.noise,
        learner: raw.learner.to_spec(),
        metric,
        convergence: raw.convergence.map(|c| c.resolve()).unwrap_or_default(),
        valuators: raw.valuator,
        tasks: raw.tasks.unwrap_or_else(|| vec![TaskKind::Detect]),
        seeds: raw.seeds.unwrap_or_else(|| vec![0]),
        output_dir: raw.output_dir.unwrap_or_else(|| PathBuf::from("results")),
        curve_step: raw.curve_step.unwrap_or(5),
    };
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(HarnessError::Config(msg));
        if self.seeds.is_empty() {
            return fail("seeds: at least one seed is required".into());
        }
        if self.valuators.is_empty() {
            return fail("valuator: at least one [[valuator]] entry is required".into());
        }
        if self.tasks.is_empty() {
            return fail("tasks: at least one task is required".into());
        }
        let mut labels: Vec<&str> = self.valuators.iter().map(|v| v.label()).collect();
        labels.sort_unstable();
        if let Some(w) = labels.windows(2).find(|w| w[0] == w[1]) {
            return fail(format!(
                "valuator: label {:?} is used twice; set distinct `label` keys",
                w[0]
            ));
        }
        if labels
            .iter()
            .any(|l| l.is_empty() || l.contains(',') || l.contains('"') || l.contains('\n'))
        {
            return fail(
                "valuator: labels must be non-empty and free of commas, quotes and newlines".into(),
            );
        }
        if self.split.train == 0 {
            return fail("split.train must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.noise.rate) {
            return fail(format!(
                "noise.rate must lie in [0, 1], got {}",
                self.noise.rate
            ));
        }
        if !(self.noise.sigma >= 0.0 && self.noise.sigma.is_finite()) {
            return fail(format!(
                "noise.sigma must be finite and >= 0, got {}",
                self.noise.sigma
            ));
        }
        if self.curve_step == 0 {
            return fail("curve_step must be >= 1".into());
        }
        self.learner
            .validate()
            .map_err(|e| HarnessError::Config(format!("learner: {e}")))?;
        self.convergence
            .validate()
            .map_err(|e| HarnessError::Config(format!("convergence: {e}")))?;
        match &self.dataset {
            DatasetConfig::Blobs {
                n,
                dim,
                classes,
                sep,
            } => {
                if *dim == 0 || *classes == 0 || sep.is_nan() || *sep <= 0.0 {
                    return fail("dataset: blobs need dim >= 1, classes >= 1 and sep > 0".into());
                }
                if n.is_some_and(|n| n < self.split.total()) {
                    return fail(format!(
                        "dataset.n is smaller than the split total {}",
                        self.split.total()
                    ));
                }
            }
            DatasetConfig::Friedman { n } => {
                if n.is_some_and(|n| n < self.split.total()) {
                    return fail(format!(
                        "dataset.n is smaller than the split total {}",
                        self.split.total()
                    ));
                }
            }
            DatasetConfig::Csv { .. } => {}
        }
        for v in &self.valuators {
            let bad = match v {
                ValuatorConfig::BetaShapley { alpha, beta, .. } => !(*alpha > 0.0 && *beta > 0.0),
                ValuatorConfig::DataBanzhaf { n_subsets, .. } => *n_subsets < 2,
                ValuatorConfig::InfluenceSubset { n_subsets, .. }
                | ValuatorConfig::Ame { n_subsets, .. } => *n_subsets == 0,
                ValuatorConfig::KnnShapley { k, .. } => *k == Some(0),
                ValuatorConfig::DataOob { n_estimators, .. } => *n_estimators == 0,
                ValuatorConfig::Lava {
                    label_weight,
                    epsilon_scale,
                    ..
                } => {
                    label_weight.is_some_and(|w| w.is_nan() || w < 0.0)
                        || epsilon_scale.is_some_and(|e| e.is_nan() || e <= 0.0)
                }
                _ => false,
            };
            if bad {
                return fail(format!("valuator {:?}: invalid hyperparameter", v.label()));
            }
        }
        Ok(())
    }

    pub fn with_tasks(mut self, tasks: Vec<TaskKind>) -> Self {
        self.tasks = tasks;
        self
    }
}
