//! Run configuration shared by every stage.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use vqi_core::cam::Method;
use vqi_core::metrics::{EvalConfig, TimingMode, DEFAULT_IOU_THRESHOLD};
use vqi_core::model::TrainConfig;
use vqi_core::synth::SynthConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Dataset directory: `images/`, `train.json`, `eval.json`, `confusers.json`.
    pub data_dir: PathBuf,
    /// Artifact directory written by the stages.
    pub out_dir: PathBuf,
    /// Seeds both the synthetic data and training; overrides the nested seeds.
    pub seed: u64,
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub methods: Vec<Method>,
    pub iou_threshold: f64,
    pub timing: TimingMode,
    /// Dilation radius of the default enlargement op, in pixels.
    pub enlarge_radius: usize,
    pub port: u16,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
            seed: 0,
            synth: SynthConfig::default(),
            train: TrainConfig::default(),
            methods: Method::ALL.to_vec(),
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            timing: TimingMode::CostModel,
            enlarge_radius: 2,
            port: 8080,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Synthetic-data settings with the run seed applied.
    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            seed: self.seed,
            ..self.synth.clone()
        }
    }

    /// Training settings with the run seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            iou_threshold: self.iou_threshold,
            timing: self.timing,
            ..EvalConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.synth_config().validate()?;
        if self.methods.is_empty() {
            bail!("no explanation methods configured");
        }
        if !(0.0..=1.0).contains(&self.iou_threshold) {
            bail!("iou_threshold {} is outside [0, 1]", self.iou_threshold);
        }
        if self.train.batch_size == 0 {
            bail!("train.batch_size must be positive");
        }
        Ok(())
    }

    /// Checks that the dataset directory exists; stages after `synth` call this.
    pub fn require_data(&self) -> Result<()> {
        if !self.data_dir.is_dir() {
            return Err(crate::MissingArtifact::new(&self.data_dir, "synth").into());
        }
        Ok(())
    }

    pub fn out(&self, name: impl AsRef<Path>) -> PathBuf {
        self.out_dir.join(name)
    }
}
