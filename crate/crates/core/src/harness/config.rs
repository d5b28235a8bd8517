//! Experiment configuration, loadable from TOML.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::adain::StyleTrainConfig;
use crate::augment::CropFlip;
use crate::baselines::{DEFAULT_ETA, DEFAULT_GAMMA};
use crate::data::{generate_synthetic_domains, load_image_folder, MultiDomainDataset, SyntheticSpec, TargetMode};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Baseline,
    Rotation,
    MixupPixel,
    MixupFeature,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Baseline, Method::Rotation, Method::MixupPixel, Method::MixupFeature];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::Rotation => "rotation",
            Method::MixupPixel => "mixup-pixel",
            Method::MixupFeature => "mixup-feature",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

/// Whether training images pass through style augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Augmentation {
    #[serde(alias = "original")]
    Original,
    #[serde(alias = "stylized")]
    Stylized,
}

impl Augmentation {
    pub fn as_str(self) -> &'static str {
        match self {
            Augmentation::Original => "Original",
            Augmentation::Stylized => "Stylized",
        }
    }
}

impl fmt::Display for Augmentation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Augmentation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "original" => Ok(Augmentation::Original),
            "stylized" => Ok(Augmentation::Stylized),
            _ => Err(Error::Config(format!("unknown augmentation `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetSource {
    Synthetic {
        #[serde(default)]
        spec: SyntheticSpec,
        #[serde(default)]
        seed: u64,
    },
    /// `root/<domain>/<class>/<image>` on disk, resized to `resolution`.
    Folder { path: PathBuf, resolution: usize },
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synthetic {
            spec: SyntheticSpec::default(),
            seed: 0,
        }
    }
}

impl DatasetSource {
    pub fn load(&self) -> Result<MultiDomainDataset> {
        match self {
            DatasetSource::Synthetic { spec, seed } => generate_synthetic_domains(spec, *seed),
            DatasetSource::Folder { path, resolution } => {
                let load = load_image_folder(path, *resolution)?;
                if !load.skipped.is_empty() {
                    log::warn!("skipped {} unreadable image(s) under {}", load.skipped.len(), path.display());
                }
                Ok(load.dataset)
            }
        }
    }
}

/// Channel widths of the four zero-padded conv-relu-maxpool blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierArch {
    pub channels: [usize; 4],
}

impl Default for ClassifierArch {
    fn default() -> Self {
        Self {
            channels: [16, 32, 64, 64],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub arch: ClassifierArch,
    pub iterations: usize,
    pub learning_rate: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    /// Images drawn from each source domain per batch.
    pub per_domain: usize,
    /// Source-validation cadence in iterations; the last iteration is always evaluated.
    pub val_every: usize,
    pub train_ratio: f64,
    pub crop_flip: CropFlip,
    pub eval_batch: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            arch: ClassifierArch::default(),
            iterations: 3000,
            learning_rate: 0.001,
            momentum: 0.9,
            weight_decay: 1e-4,
            per_domain: 8,
            val_every: 100,
            train_ratio: 0.9,
            crop_flip: CropFlip::default(),
            eval_batch: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub target_mode: TargetMode,
    pub method: Method,
    pub augmentation: Augmentation,
    /// Stylization strength.
    pub alpha: f32,
    /// Per-sample stylization probability.
    pub p: f32,
    /// Rotation loss weight.
    pub eta: f32,
    /// Mixup Beta parameter.
    pub gamma: f32,
    pub style: StyleTrainConfig,
    /// Pre-trained style model to use instead of training one.
    pub style_checkpoint: Option<PathBuf>,
    /// Train a fresh style model for every run instead of one per target.
    pub retrain_style_per_run: bool,
    pub classifier: ClassifierConfig,
    pub n_runs: usize,
    /// Run `r` uses seed `base_seed + r`.
    pub base_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSource::default(),
            target_mode: TargetMode::Whole,
            method: Method::Baseline,
            augmentation: Augmentation::Original,
            alpha: 1.0,
            p: 0.75,
            eta: DEFAULT_ETA,
            gamma: DEFAULT_GAMMA,
            style: StyleTrainConfig::default(),
            style_checkpoint: None,
            retrain_style_per_run: false,
            classifier: ClassifierConfig::default(),
            n_runs: 3,
            base_seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return bad(format!("p must lie in [0, 1], got {}", self.p));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return bad(format!("eta must be non-negative, got {}", self.eta));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be non-negative, got {}", self.gamma));
        }
        if self.n_runs == 0 {
            return bad("n_runs must be positive".into());
        }
        let c = &self.classifier;
        if c.iterations == 0 || c.val_every == 0 || c.per_domain == 0 || c.eval_batch == 0 {
            return bad("classifier iterations, val_every, per_domain and eval_batch must be positive".into());
        }
        if c.arch.channels.contains(&0) {
            return bad("classifier channel widths must be positive".into());
        }
        if !(c.learning_rate > 0.0 && c.learning_rate.is_finite()) {
            return bad(format!("classifier learning rate must be positive, got {}", c.learning_rate));
        }
        if !(0.0..1.0).contains(&c.momentum) || !(c.weight_decay >= 0.0) {
            return bad("classifier momentum must lie in [0, 1) and weight decay be non-negative".into());
        }
        if !(c.train_ratio > 0.0 && c.train_ratio < 1.0) {
            return bad(format!("train_ratio must lie in (0, 1), got {}", c.train_ratio));
        }
        if self.augmentation == Augmentation::Stylized && self.style_checkpoint.is_none() {
            // a style phase runs; its settings must be usable
            self.style.validate().map_err(|e| Error::Config(format!("style phase: {e}")))?;
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    /// Seed of run `r`.
    pub fn run_seed(&self, r: usize) -> u64 {
        self.base_seed + r as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.eta, 0.5);
        assert_eq!(cfg.gamma, 0.4);
        assert_eq!(cfg.classifier.learning_rate, 0.001);
        assert_eq!(cfg.n_runs, 3);
        let text = cfg.to_toml_string();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_file_uses_defaults() {
        let cfg = ExperimentConfig::from_toml_str(
            "method = \"mixup-feature\"\naugmentation = \"Stylized\"\np = 0.5\n[classifier]\niterations = 10\n",
        )
        .unwrap();
        assert_eq!(cfg.method, Method::MixupFeature);
        assert_eq!(cfg.augmentation, Augmentation::Stylized);
        assert_eq!(cfg.classifier.iterations, 10);
        assert_eq!(cfg.classifier.per_domain, 8);
    }

    #[test]
    fn out_of_range_values_are_rejected() {
        for text in ["p = 1.5", "alpha = -0.1", "gamma = -1.0", "n_runs = 0", "[classifier]\niterations = 0", "bogus = 1"] {
            assert!(ExperimentConfig::from_toml_str(text).is_err(), "{text}");
        }
    }

    #[test]
    fn enum_names_parse() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert_eq!("stylized".parse::<Augmentation>().unwrap(), Augmentation::Stylized);
        assert!("fancy".parse::<Method>().is_err());
    }
}
