//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored; unknown keys are errors. Relative
//! paths resolve against the directory holding the config file. Every run
//! writes the fully resolved configuration next to its outputs, and that file
//! can be fed back with `--config` to repeat the run.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use recipe_core::imageops::{AugmentConfig, PolicyTable, IMAGENET_MEAN, IMAGENET_STD};
use recipe_core::inference::TtaConfig;
use recipe_core::losses::{CombinedLossConfig, LossMode, TripletConfig};
use recipe_core::model::ModelConfig;
use recipe_core::optim::LrSchedule;
use sha2::{Digest, Sha256};

use crate::UsageError;

pub const RESOLVED_CONFIG: &str = "resolved-config.txt";

/// Where the AutoAugment sub-policies come from.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicySource {
    ImageNet,
    /// Every sub-policy is a no-op.
    None,
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train_manifest: Option<PathBuf>,
    pub val_manifest: Option<PathBuf>,
    pub merge_splits: bool,
    pub classes: usize,
    pub image_size: usize,
    pub channels: [usize; 3],
    pub embed_dim: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub loss: LossMode,
    pub smoothing: f64,
    pub aux_weight: f64,
    pub triplet_margin: f64,
    pub arcface_scale: f64,
    pub arcface_margin: f64,
    pub pk_classes: usize,
    pub pk_samples: usize,
    pub base_lr: f64,
    pub warmup_epochs: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub area_min: f64,
    pub area_max: f64,
    pub aspect_min: f64,
    pub aspect_max: f64,
    pub flip_prob: f64,
    pub cutmix_prob: f64,
    pub cutmix_alpha: f64,
    pub autoaugment: PolicySource,
    pub tta_scales: Option<Vec<usize>>,
    pub tta_area_min: f64,
    pub tta_area_max: f64,
    pub seed: u64,
    pub init_checkpoint: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    /// The desk-scale preset: 32×32 images, ten classes, batch 128, 20 epochs.
    fn default() -> Self {
        Self {
            train_manifest: None,
            val_manifest: None,
            merge_splits: false,
            classes: 10,
            image_size: 32,
            channels: [16, 32, 64],
            embed_dim: 64,
            batch_size: 128,
            epochs: 20,
            loss: LossMode::Ce,
            smoothing: 0.1,
            aux_weight: 1.0,
            triplet_margin: 0.3,
            arcface_scale: 30.0,
            arcface_margin: 0.5,
            pk_classes: 8,
            pk_samples: 4,
            base_lr: 0.1,
            warmup_epochs: 1,
            momentum: 0.9,
            weight_decay: 1e-4,
            area_min: 0.08,
            area_max: 1.0,
            aspect_min: 3.0 / 4.0,
            aspect_max: 4.0 / 3.0,
            flip_prob: 0.5,
            cutmix_prob: 0.5,
            cutmix_alpha: 1.0,
            autoaugment: PolicySource::ImageNet,
            tta_scales: None,
            tta_area_min: 0.8,
            tta_area_max: 1.0,
            seed: 0,
            init_checkpoint: None,
            out_dir: PathBuf::from("run"),
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, UsageError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| UsageError(format!("{key}: cannot parse {value:?}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, UsageError> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(UsageError(format!("{key}: expected true or false, got {value:?}"))),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>, UsageError> {
    value.split(',').map(|v| parse_value(key, v.trim())).collect()
}

fn optional_path(value: &str, base: &Path) -> Option<PathBuf> {
    (!value.is_empty() && value != "none").then(|| base.join(value))
}

fn path_text(p: &Option<PathBuf>) -> String {
    p.as_ref().map_or_else(|| "none".to_string(), |p| p.display().to_string())
}

impl RunConfig {
    /// Reads a config file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut cfg = Self::default();
        cfg.apply_text(&text, base)?;
        Ok(cfg)
    }

    /// Applies `key = value` lines on top of the current values.
    pub fn apply_text(&mut self, text: &str, base: &Path) -> Result<(), UsageError> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| UsageError(format!("config line {}: expected key = value, got {line:?}", n + 1)))?;
            self.set(key.trim(), value.trim(), base)?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<(), UsageError> {
        match key {
            "train_manifest" => self.train_manifest = optional_path(value, base),
            "val_manifest" => self.val_manifest = optional_path(value, base),
            "merge_splits" => self.merge_splits = parse_bool(key, value)?,
            "classes" => self.classes = parse_value(key, value)?,
            "image_size" => self.image_size = parse_value(key, value)?,
            "channels" => {
                let c = parse_list(key, value)?;
                self.channels = c
                    .try_into()
                    .map_err(|c: Vec<usize>| UsageError(format!("channels: expected 3 values, got {}", c.len())))?;
            }
            "embed_dim" => self.embed_dim = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "loss" => self.loss = value.parse().map_err(|e| UsageError(format!("loss: {e}")))?,
            "smoothing" => self.smoothing = parse_value(key, value)?,
            "aux_weight" => self.aux_weight = parse_value(key, value)?,
            "triplet_margin" => self.triplet_margin = parse_value(key, value)?,
            "arcface_scale" => self.arcface_scale = parse_value(key, value)?,
            "arcface_margin" => self.arcface_margin = parse_value(key, value)?,
            "pk_classes" => self.pk_classes = parse_value(key, value)?,
            "pk_samples" => self.pk_samples = parse_value(key, value)?,
            "base_lr" => self.base_lr = parse_value(key, value)?,
            "warmup_epochs" => self.warmup_epochs = parse_value(key, value)?,
            "momentum" => self.momentum = parse_value(key, value)?,
            "weight_decay" => self.weight_decay = parse_value(key, value)?,
            "area_min" => self.area_min = parse_value(key, value)?,
            "area_max" => self.area_max = parse_value(key, value)?,
            "aspect_min" => self.aspect_min = parse_value(key, value)?,
            "aspect_max" => self.aspect_max = parse_value(key, value)?,
            "flip_prob" => self.flip_prob = parse_value(key, value)?,
            "cutmix_prob" => self.cutmix_prob = parse_value(key, value)?,
            "cutmix_alpha" => self.cutmix_alpha = parse_value(key, value)?,
            "autoaugment" => {
                self.autoaugment = match value {
                    "imagenet" => PolicySource::ImageNet,
                    "none" => PolicySource::None,
                    path => PolicySource::File(base.join(path)),
                }
            }
            "tta_scales" => self.tta_scales = if value == "auto" { None } else { Some(parse_list(key, value)?) },
            "tta_area_min" => self.tta_area_min = parse_value(key, value)?,
            "tta_area_max" => self.tta_area_max = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "init_checkpoint" => self.init_checkpoint = optional_path(value, base),
            "out_dir" => self.out_dir = base.join(value),
            _ => return Err(UsageError(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Checks ranges of every field and builds the derived configs once.
    pub fn validate(&self) -> anyhow::Result<()> {
        let usage = |e: recipe_core::Error| UsageError(e.to_string());
        if self.classes < 2 {
            return Err(UsageError(format!("classes must be at least 2, got {}", self.classes)).into());
        }
        if self.batch_size == 0 {
            return Err(UsageError("batch_size must be positive".into()).into());
        }
        if self.loss == LossMode::CeTriplet && (self.pk_classes < 2 || self.pk_samples < 2 || self.pk_classes > self.classes) {
            return Err(UsageError(format!(
                "triplet sampling needs 2 <= pk_classes <= classes and pk_samples >= 2, got {}x{}",
                self.pk_classes, self.pk_samples
            ))
            .into());
        }
        if !(0.0..=1.0).contains(&self.momentum) || !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return Err(UsageError("momentum must lie in [0, 1] and weight_decay must be >= 0".into()).into());
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return Err(UsageError(format!("smoothing must lie in [0, 1), got {}", self.smoothing)).into());
        }
        self.model_config().validate().map_err(usage)?;
        self.augment_config()?.validate().map_err(usage)?;
        self.tta_config().validate().map_err(usage)?;
        if self.epochs > 0 {
            self.schedule(1).map_err(usage)?;
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig { channels: self.channels, embed_dim: self.embed_dim, classes: self.classes, input_size: self.image_size }
    }

    pub fn loss_config(&self) -> CombinedLossConfig {
        CombinedLossConfig {
            mode: self.loss,
            aux_weight: self.aux_weight,
            smoothing: self.smoothing,
            triplet: TripletConfig { margin: self.triplet_margin },
            arcface_scale: self.arcface_scale,
            arcface_margin: self.arcface_margin,
        }
    }

    pub fn augment_config(&self) -> anyhow::Result<AugmentConfig> {
        let policy = match &self.autoaugment {
            PolicySource::ImageNet => PolicyTable::imagenet(),
            PolicySource::None => PolicyTable::identity(),
            PolicySource::File(p) => PolicyTable::load(p).map_err(|e| UsageError(format!("policy {}: {e}", p.display())))?,
        };
        Ok(AugmentConfig {
            out_size: self.image_size,
            area_range: (self.area_min, self.area_max),
            aspect_range: (self.aspect_min, self.aspect_max),
            flip_prob: self.flip_prob,
            cutmix_prob: self.cutmix_prob,
            cutmix_alpha: self.cutmix_alpha,
            cutmix_patch: None,
            mean: IMAGENET_MEAN,
            std: IMAGENET_STD,
            policy: Arc::new(policy),
        })
    }

    pub fn tta_config(&self) -> TtaConfig {
        let mut cfg = TtaConfig::for_base_size(self.image_size);
        if let Some(s) = &self.tta_scales {
            cfg.scales = s.clone();
        }
        cfg.area_range = (self.tta_area_min, self.tta_area_max);
        cfg
    }

    /// Samples per optimizer step: `P·Q` under triplet sampling.
    pub fn effective_batch(&self) -> usize {
        if self.loss == LossMode::CeTriplet {
            self.pk_classes * self.pk_samples
        } else {
            self.batch_size
        }
    }

    pub fn schedule(&self, steps_per_epoch: usize) -> recipe_core::Result<LrSchedule> {
        LrSchedule::new(
            self.base_lr,
            self.effective_batch(),
            self.warmup_epochs * steps_per_epoch,
            self.epochs * steps_per_epoch,
        )
    }

    /// Every key with its resolved value, in a fixed order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").expect("writing to a string");
        kv("train_manifest", path_text(&self.train_manifest));
        kv("val_manifest", path_text(&self.val_manifest));
        kv("merge_splits", self.merge_splits.to_string());
        kv("classes", self.classes.to_string());
        kv("image_size", self.image_size.to_string());
        kv("channels", self.channels.map(|c| c.to_string()).join(","));
        kv("embed_dim", self.embed_dim.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("epochs", self.epochs.to_string());
        kv("loss", self.loss.to_string());
        kv("smoothing", self.smoothing.to_string());
        kv("aux_weight", self.aux_weight.to_string());
        kv("triplet_margin", self.triplet_margin.to_string());
        kv("arcface_scale", self.arcface_scale.to_string());
        kv("arcface_margin", self.arcface_margin.to_string());
        kv("pk_classes", self.pk_classes.to_string());
        kv("pk_samples", self.pk_samples.to_string());
        kv("base_lr", self.base_lr.to_string());
        kv("warmup_epochs", self.warmup_epochs.to_string());
        kv("momentum", self.momentum.to_string());
        kv("weight_decay", self.weight_decay.to_string());
        kv("area_min", self.area_min.to_string());
        kv("area_max", self.area_max.to_string());
        kv("aspect_min", self.aspect_min.to_string());
        kv("aspect_max", self.aspect_max.to_string());
        kv("flip_prob", self.flip_prob.to_string());
        kv("cutmix_prob", self.cutmix_prob.to_string());
        kv("cutmix_alpha", self.cutmix_alpha.to_string());
        kv(
            "autoaugment",
            match &self.autoaugment {
                PolicySource::ImageNet => "imagenet".into(),
                PolicySource::None => "none".into(),
                PolicySource::File(p) => p.display().to_string(),
            },
        );
        kv(
            "tta_scales",
            self.tta_scales.as_ref().map_or_else(|| "auto".into(), |s| s.iter().map(usize::to_string).collect::<Vec<_>>().join(",")),
        );
        kv("tta_area_min", self.tta_area_min.to_string());
        kv("tta_area_max", self.tta_area_max.to_string());
        kv("seed", self.seed.to_string());
        kv("init_checkpoint", path_text(&self.init_checkpoint));
        kv("out_dir", self.out_dir.display().to_string());
        s
    }

    /// SHA-256 of the resolved configuration without the output directory,
    /// so the same run written to two places has one digest.
    pub fn digest(&self) -> [u8; 32] {
        let text: String = self.to_text().lines().filter(|l| !l.starts_with("out_dir ")).map(|l| format!("{l}\n")).collect();
        Sha256::digest(text.as_bytes()).into()
    }

    /// The resolved configuration without the output directory (stored in
    /// checkpoint metadata).
    pub fn metadata(&self) -> String {
        self.to_text().lines().filter(|l| !l.starts_with("out_dir ")).map(|l| format!("{l}\n")).collect()
    }

    /// Makes every path absolute (relative to the working directory).
    pub fn resolve_paths(&mut self) -> anyhow::Result<()> {
        for p in [&mut self.train_manifest, &mut self.val_manifest, &mut self.init_checkpoint].into_iter().flatten() {
            *p = std::path::absolute(&*p)?;
        }
        if let PolicySource::File(p) = &mut self.autoaugment {
            *p = std::path::absolute(&*p)?;
        }
        self.out_dir = std::path::absolute(&self.out_dir)?;
        Ok(())
    }

    pub fn write_resolved(&self, dir: &Path) -> anyhow::Result<PathBuf> {
        let path = dir.join(RESOLVED_CONFIG);
        std::fs::write(&path, self.to_text())?;
        Ok(path)
    }
}
