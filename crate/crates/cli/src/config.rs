use std::path::{Path, PathBuf};

use aggclass::aggregate::{Task, TaskKind};
use aggclass::data::SyntheticSpec;
use aggclass::eval::BagRule;
use aggclass::model::{AdamConfig, Architecture, Head, DEFAULT_HIDDEN};
use aggclass::train::{Method, TrainConfig};
use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const OUT_ENV: &str = "AGGCLASS_OUT";
pub const DEFAULT_OUT: &str = "aggclass-out";
pub const DEFAULT_EPOCHS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic {
        #[serde(default)]
        spec: Option<SyntheticSpec>,
        #[serde(default = "default_n")]
        n: usize,
        #[serde(default = "default_split")]
        split: [f64; 3],
    },
    Csv {
        train: PathBuf,
        val: Option<PathBuf>,
        test: Option<PathBuf>,
        #[serde(default = "default_label_column")]
        label_column: String,
    },
}

fn default_n() -> usize {
    5000
}

fn default_split() -> [f64; 3] {
    [0.3, 0.1, 0.6]
}

fn default_label_column() -> String {
    "label".into()
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic { spec: None, n: default_n(), split: default_split() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Linear,
    #[default]
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub hidden: usize,
    pub head: Option<Head>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { kind: ModelKind::Mlp, hidden: DEFAULT_HIDDEN, head: None }
    }
}

/// Training fields; anything left out takes the task's default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: Option<usize>,
    pub warmup: Option<bool>,
    pub warmup_epochs: Option<usize>,
    pub use_confidence: Option<bool>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub seed: Option<u64>,
    pub val_fraction: Option<f64>,
    pub method: Option<Method>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum FitOn {
    #[default]
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    pub m: Option<usize>,
    pub k: Option<usize>,
    pub n_groups: usize,
    pub val_groups: usize,
    pub test_groups: usize,
    pub data: DataSource,
    pub model: ModelConfig,
    pub train: TrainSection,
    /// For bags: the class name counted as positive.
    pub positive_class: Option<String>,
    pub fit_permutation_on: FitOn,
    pub bag_rule: BagRule,
    pub seed: u64,
    #[serde(skip_serializing)]
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            task: TaskKind::Pairwise,
            m: None,
            k: None,
            n_groups: 3000,
            val_groups: 500,
            test_groups: 1000,
            data: DataSource::default(),
            model: ModelConfig::default(),
            train: TrainSection::default(),
            positive_class: None,
            fit_permutation_on: FitOn::Validation,
            bag_rule: BagRule::Probability,
            seed: 0,
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Group size: explicit, fixed by the task, or a default of 3.
    pub fn group_size(&self) -> usize {
        self.task.fixed_group_size().or(self.m).unwrap_or(3)
    }

    pub fn task_for(&self, k: usize) -> Result<Task> {
        if let (Some(fixed), Some(m)) = (self.task.fixed_group_size(), self.m) {
            if fixed != m {
                bail!("task {} requires m = {fixed}, config has m = {m}", self.task);
            }
        }
        Ok(Task::new(self.task, self.group_size(), self.k.unwrap_or(k))?)
    }

    pub fn head(&self) -> Result<Head> {
        let default = match self.task {
            TaskKind::Mil => Head::Sigmoid,
            TaskKind::Rank | TaskKind::OrdinalTriplet => Head::Cumulative,
            _ => Head::Softmax,
        };
        let head = self.model.head.unwrap_or(default);
        if head == Head::Sigmoid && self.k.is_some_and(|k| k != 2) {
            bail!("a sigmoid head needs k = 2");
        }
        Ok(head)
    }

    pub fn architecture(&self, d: usize, k: usize) -> Result<Architecture> {
        let outputs = self.head()?.outputs_for(k);
        Ok(match self.model.kind {
            ModelKind::Linear => Architecture::Linear { d, outputs },
            ModelKind::Mlp => Architecture::Mlp { d, hidden: self.model.hidden, outputs },
        })
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.train;
        let epochs = t.epochs.unwrap_or(DEFAULT_EPOCHS);
        let mut c = TrainConfig::for_task(self.task, epochs);
        if let Some(v) = t.warmup {
            c.warmup = v;
        }
        if let Some(v) = t.warmup_epochs {
            c.warmup_epochs = v;
        }
        if !c.warmup {
            c.warmup_epochs = t.warmup_epochs.unwrap_or(0);
        }
        if let Some(v) = t.use_confidence {
            c.use_confidence = v;
        }
        if let Some(v) = t.batch_size {
            c.batch_size = v;
        }
        let lr = t.lr.unwrap_or(match self.model.kind {
            ModelKind::Mlp => AdamConfig::MLP_LR,
            ModelKind::Linear => AdamConfig::LINEAR_LR,
        });
        c.optimizer = AdamConfig::with_lr(lr);
        c.seed = t.seed.unwrap_or(self.seed);
        if let Some(v) = t.val_fraction {
            c.val_fraction = v;
        }
        if let Some(v) = t.method {
            c.method = v;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
    }

    /// Default mixture: `k` unit-spread classes on a circle of radius 2.
    pub fn synthetic_spec(&self) -> SyntheticSpec {
        if let DataSource::Synthetic { spec: Some(spec), .. } = &self.data {
            return spec.clone();
        }
        let k = self.k.unwrap_or(if self.task == TaskKind::Mil { 2 } else { 3 });
        let means = (0..k)
            .map(|c| {
                let a = 2.0 * std::f64::consts::PI * c as f64 / k as f64;
                vec![2.0 * a.cos(), 2.0 * a.sin()]
            })
            .collect();
        SyntheticSpec::balanced(means, 1.0, self.seed)
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form. The
    /// output directory is not part of it.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&bytes);
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
