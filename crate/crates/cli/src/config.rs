//! Experiment configuration: one flat TOML table. Every key has a default, so
//! an empty file is a valid toy experiment. `key=value` overrides from the
//! command line are parsed as TOML values and applied before validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use xcam_core::aanet::{AANetConfig, LossWeights, ReidTrainConfig};
use xcam_core::camera_transfer::{GeneratorAdv, TransferConfig};
use xcam_core::dataset::{Protocol, ToyGenSpec};
use xcam_core::nn::LrSchedule;
use xcam_core::retrieval::{CameraFilter, ExtractConfig};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// Existing dataset manifest; when absent a toy dataset is generated.
    pub manifest: Option<PathBuf>,
    pub seed: u64,

    pub toy_ids: usize,
    pub toy_cameras: usize,
    pub toy_per: usize,
    pub toy_size: usize,

    pub use_transfer: bool,
    pub target_camera: Option<usize>,
    /// Also translate query/gallery images (their camera labels are kept).
    pub translate_eval: bool,
    pub translate_pass_through_target: bool,
    pub gan_lr: f64,
    pub gan_beta1: f64,
    pub gan_beta2: f64,
    pub gan_epochs_constant: usize,
    pub gan_epochs_decay: usize,
    pub gan_batch: usize,
    pub gan_width: usize,
    pub gan_res_blocks: usize,
    pub gan_n_critic: usize,
    pub gan_generator_adv: GeneratorAdv,
    pub lambda_dom: f64,
    pub lambda_rec: f64,

    pub reid_lr: f64,
    pub reid_lr_factor: f64,
    pub reid_epochs_high: usize,
    pub reid_epochs_low: usize,
    pub reid_momentum: f64,
    pub reid_weight_decay: f64,
    pub reid_batch: usize,
    pub reid_width: usize,
    pub reid_stem_channels: usize,
    pub embedding_dim: usize,
    pub align_lr_scale: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub use_alignment: bool,
    pub use_attention: bool,
    /// Fixed halves without alignment or attention; overrides the two switches.
    pub rigid_split: bool,

    pub alpha: f64,
    pub normalize_features: bool,
    pub protocol: Protocol,
    pub filter: CameraFilter,
    pub trials: usize,
    pub max_rank: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "toy".into(),
            manifest: None,
            seed: 1,
            toy_ids: 32,
            toy_cameras: 4,
            toy_per: 4,
            toy_size: 64,
            use_transfer: true,
            target_camera: None,
            translate_eval: false,
            translate_pass_through_target: false,
            gan_lr: 5e-4,
            gan_beta1: 0.5,
            gan_beta2: 0.999,
            gan_epochs_constant: 60,
            gan_epochs_decay: 60,
            gan_batch: 16,
            gan_width: 16,
            gan_res_blocks: 2,
            gan_n_critic: 5,
            gan_generator_adv: GeneratorAdv::NonSaturating,
            lambda_dom: 0.5,
            lambda_rec: 10.0,
            reid_lr: 0.1,
            reid_lr_factor: 0.1,
            reid_epochs_high: 40,
            reid_epochs_low: 10,
            reid_momentum: 0.9,
            reid_weight_decay: 5e-4,
            reid_batch: 16,
            reid_width: 16,
            reid_stem_channels: 16,
            embedding_dim: 64,
            align_lr_scale: 0.01,
            lambda1: 1.0,
            lambda2: 1.0,
            use_alignment: true,
            use_attention: true,
            rigid_split: false,
            alpha: 0.5,
            normalize_features: true,
            protocol: Protocol::Veri,
            filter: CameraFilter::CrossCamera,
            trials: 10,
            max_rank: 50,
        }
    }
}

/// Apply `key=value` overrides to a parsed table.
pub fn apply_overrides(table: &mut toml::Table, overrides: &[String]) -> Result<(), CliError> {
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("override {item:?} is not key=value")))?;
        let key = key.trim();
        let raw = raw.trim();
        // Bare words (paths, enum names) are taken as strings.
        let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
            Ok(mut t) => t.remove("v").expect("parsed key"),
            Err(_) => toml::Value::String(raw.to_string()),
        };
        table.insert(key.to_string(), value);
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))?;
        apply_overrides(&mut table, overrides)?;
        let cfg: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Validation(format!("config: {}", e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("reading config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text, overrides)?;
        // Relative manifest paths are relative to the config file.
        if let (Some(m), Some(dir)) = (&cfg.manifest, path.parent()) {
            if m.is_relative() {
                cfg.manifest = Some(dir.join(m));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Validation(m));
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha {} outside [0, 1]", self.alpha));
        }
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 || self.lambda_dom < 0.0 || self.lambda_rec < 0.0 {
            return bad("loss weights must be non-negative".into());
        }
        if self.gan_lr <= 0.0 || self.reid_lr <= 0.0 {
            return bad("learning rates must be positive".into());
        }
        if self.trials == 0 || self.max_rank == 0 {
            return bad("trials and max_rank must be positive".into());
        }
        if self.reid_batch < 2 || self.gan_batch == 0 {
            return bad("reid_batch must be >= 2 and gan_batch positive".into());
        }
        if let Some(m) = &self.manifest {
            if !m.exists() {
                return bad(format!("manifest {} does not exist", m.display()));
            }
        }
        Ok(())
    }

    pub fn toy_spec(&self) -> ToyGenSpec {
        let mut spec = ToyGenSpec::new(self.toy_ids, self.toy_cameras, self.toy_per, self.toy_size, self.seed);
        spec.name = self.name.clone();
        spec
    }

    pub fn transfer_config(&self, image_size: usize) -> TransferConfig {
        let mut t = TransferConfig::toy(image_size, self.seed);
        t.width = self.gan_width;
        t.res_blocks = self.gan_res_blocks;
        t.schedule = LrSchedule::LinearDecay {
            base: self.gan_lr,
            constant_epochs: self.gan_epochs_constant,
            decay_epochs: self.gan_epochs_decay,
        };
        t.beta1 = self.gan_beta1;
        t.beta2 = self.gan_beta2;
        t.batch_size = self.gan_batch;
        t.lambda_dom = self.lambda_dom;
        t.lambda_rec = self.lambda_rec;
        t.n_critic = self.gan_n_critic;
        t.generator_adv = self.gan_generator_adv;
        t
    }

    pub fn model_config(&self, image_size: usize) -> AANetConfig {
        let mut m = AANetConfig::toy(0, image_size);
        m.width = self.reid_width;
        m.stem_channels = self.reid_stem_channels;
        m.embedding_dim = self.embedding_dim;
        m.align_lr_scale = self.align_lr_scale;
        m.use_alignment = self.use_alignment;
        m.use_attention = self.use_attention;
        if self.rigid_split {
            m = m.rigid();
        }
        m
    }

    pub fn reid_config(&self, image_size: usize) -> ReidTrainConfig {
        let mut r = ReidTrainConfig::toy(image_size, self.seed);
        r.model = self.model_config(image_size);
        r.schedule = LrSchedule::StepDrop {
            base: self.reid_lr,
            high_epochs: self.reid_epochs_high,
            low_epochs: self.reid_epochs_low,
            factor: self.reid_lr_factor,
        };
        r.momentum = self.reid_momentum;
        r.weight_decay = self.reid_weight_decay;
        r.batch_size = self.reid_batch;
        r.weights = LossWeights {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
        };
        r
    }

    pub fn extract_config(&self) -> ExtractConfig {
        ExtractConfig {
            alpha: self.alpha,
            normalize: self.normalize_features,
            ..ExtractConfig::default()
        }
    }

    /// Row label prefix, e.g. `transfer-AANet`.
    pub fn method_label(&self) -> String {
        let data = if self.use_transfer { "transfer" } else { "original" };
        let net = if self.rigid_split || !(self.use_alignment || self.use_attention) {
            "Rigid"
        } else {
            "AANet"
        };
        format!("{data}-{net}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(ExperimentConfig::from_toml("", &[]).unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn overrides_win_over_file_values() {
        let cfg = ExperimentConfig::from_toml(
            "seed = 3\nalpha = 0.25\n",
            &["seed=9".into(), "filter=none".into(), "use_transfer=false".into()],
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.alpha, 0.25);
        assert_eq!(cfg.filter, CameraFilter::None);
        assert!(!cfg.use_transfer);
        assert_eq!(cfg.method_label(), "original-AANet");
    }

    #[test]
    fn unknown_keys_and_bad_values_are_validation_errors() {
        assert!(matches!(ExperimentConfig::from_toml("bogus = 1", &[]), Err(CliError::Validation(_))));
        assert!(matches!(ExperimentConfig::from_toml("alpha = 2.0", &[]), Err(CliError::Validation(_))));
        assert!(matches!(ExperimentConfig::from_toml("", &["novalue".into()]), Err(CliError::Usage(_))));
    }

    #[test]
    fn echo_roundtrips() {
        let cfg = ExperimentConfig {
            rigid_split: true,
            target_camera: Some(2),
            ..ExperimentConfig::default()
        };
        let again = ExperimentConfig::from_toml(&cfg.to_toml(), &[]).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(again.method_label(), "transfer-Rigid");
    }
}
