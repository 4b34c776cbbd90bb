//! Run configuration, read from a TOML file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use snn_dep::attacks::AttackConfig;
use snn_dep::data::SyntheticSpec;
use snn_dep::dep::OptimizerConfig;
use snn_dep::snn::LifConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Vanilla,
    AdversarialTraining,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    None,
    /// Clean base stream, FGSM-perturbed poison batches.
    CPlusP,
    /// FGSM-perturbed base stream, clean poison batches.
    PPlusC,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    AppendEnd,
    ReplaceRandom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeteroConfig {
    pub scheme: Scheme,
    pub start_epoch: usize,
    pub batches_per_epoch: usize,
    pub placement: Placement,
}

impl Default for HeteroConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::None,
            start_epoch: 0,
            batches_per_epoch: 0,
            placement: Placement::AppendEnd,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Mlp,
    Conv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Hidden widths of the MLP, or of the dense layers after the convolutions.
    pub hidden: Vec<usize>,
    /// Output channels of the two convolutions (conv models only).
    pub channels: Vec<usize>,
    pub init_gain: f64,
    pub lif: LifConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Mlp,
            hidden: vec![128, 64],
            channels: vec![8, 16],
            init_gain: 1.0,
            lif: LifConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic,
    Cifar10,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataSource,
    /// Samples held out from the synthetic set for testing.
    pub test_size: usize,
    pub synthetic: SyntheticSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_limit: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_limit: Option<usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            test_size: 400,
            synthetic: SyntheticSpec::default(),
            train_path: None,
            test_path: None,
            train_limit: None,
            test_limit: None,
        }
    }
}

fn train_attack_default() -> AttackConfig {
    AttackConfig::poison()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSection {
    /// Budget for adversarial training and poisoned batches.
    #[serde(default = "train_attack_default", deserialize_with = "over_train_default")]
    pub train: AttackConfig,
    #[serde(default)]
    pub eval: AttackConfig,
}

/// Keys missing from `[attack.train]` fall back to the poison defaults rather
/// than the eval defaults.
fn over_train_default<'de, D: serde::Deserializer<'de>>(d: D) -> Result<AttackConfig, D::Error> {
    use serde::de::Error as _;
    let given = toml::Table::deserialize(d)?;
    let mut merged = toml::Table::try_from(train_attack_default()).map_err(D::Error::custom)?;
    merged.extend(given);
    merged.try_into().map_err(D::Error::custom)
}

impl Default for AttackSection {
    fn default() -> Self {
        Self {
            train: train_attack_default(),
            eval: AttackConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    /// Attach `rho`/`pr` to every evaluation record.
    pub enabled: bool,
    pub batch_size: usize,
    pub k: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            batch_size: 128,
            k: 5,
            tol: snn_dep::hessian::DEFAULT_TOL,
            max_iter: snn_dep::hessian::DEFAULT_MAX_ITER,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub epochs: usize,
    pub time_steps: usize,
    pub batch_size: usize,
    pub mode: TrainMode,
    /// Evaluate every this many epochs (the last epoch is always evaluated).
    pub eval_every: usize,
    /// Include FGSM/PGD accuracies in evaluation records.
    pub eval_attacks: bool,
    /// Adds `wall_time` to metrics records, which makes them run-dependent.
    pub record_wall_time: bool,
    /// Adds per-parameter DEP diagnostics to the step log.
    pub dep_diagnostics: bool,
    pub model: ModelConfig,
    pub data: DataConfig,
    pub optimizer: OptimizerConfig,
    pub attack: AttackSection,
    pub hetero: HeteroConfig,
    pub probe: ProbeConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 30,
            time_steps: 4,
            batch_size: 64,
            mode: TrainMode::Vanilla,
            eval_every: 1,
            eval_attacks: true,
            record_wall_time: false,
            dep_diagnostics: false,
            model: ModelConfig::default(),
            data: DataConfig::default(),
            optimizer: OptimizerConfig::default(),
            attack: AttackSection::default(),
            hetero: HeteroConfig::default(),
            probe: ProbeConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).context("parsing run config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml_str(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.time_steps == 0 {
            bail!("time_steps must be >= 1");
        }
        if self.batch_size == 0 {
            bail!("batch_size must be >= 1");
        }
        if self.hetero.scheme != Scheme::None && self.hetero.start_epoch > self.epochs {
            bail!(
                "hetero.start_epoch {} exceeds epochs {}",
                self.hetero.start_epoch,
                self.epochs
            );
        }
        if self.model.kind == ModelKind::Conv && self.model.channels.len() != 2 {
            bail!("conv models need exactly two entries in model.channels");
        }
        if self.data.source == DataSource::Cifar10 && self.data.train_path.is_none() {
            bail!("data.train_path is required for cifar10");
        }
        self.model.lif.validate()?;
        self.optimizer.validate()?;
        self.attack.train.validate()?;
        self.attack.eval.validate()?;
        Ok(())
    }

    /// Base-stream mode after accounting for the hetero scheme: `c_plus_p`
    /// trains on clean data, `p_plus_c` on perturbed data.
    pub fn base_mode(&self) -> TrainMode {
        match self.hetero.scheme {
            Scheme::None => self.mode,
            Scheme::CPlusP => TrainMode::Vanilla,
            Scheme::PPlusC => TrainMode::AdversarialTraining,
        }
    }

    /// The desk-scale reference task: 4-class 3×16×16 synthetic images with a
    /// weak per-pixel class signal, MLP 768-128-64-4, T = 4, batch 64,
    /// 30 epochs. The signal and learning rate are set so that clean training
    /// converges while a 2/255 FGSM batch is far from clean data.
    pub fn reference() -> Self {
        let mut cfg = Self::default();
        cfg.model.init_gain = 3.0;
        cfg.optimizer.learning_rate = 0.003;
        cfg.data.synthetic.shape = vec![3, 16, 16];
        cfg.data.synthetic.separation = 0.015;
        cfg.data.synthetic.spread = 0.03;
        cfg
    }
}
