use std::path::PathBuf;

use crate::data::AugmentConfig;
use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::network::RethNetConfig;

/// Which augmentation the training loop applies before cropping.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AugmentMode {
    /// Use samples as stored; the crop setting is ignored.
    None,
    /// Random crop only.
    Crop,
    /// Rotation, zoom, flip and random crop.
    Standard,
}

impl AugmentMode {
    pub fn name(self) -> &'static str {
        match self {
            AugmentMode::None => "none",
            AugmentMode::Crop => "crop",
            AugmentMode::Standard => "standard",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(AugmentMode::None),
            "crop" => Ok(AugmentMode::Crop),
            "standard" => Ok(AugmentMode::Standard),
            _ => Err(Error::Config(format!("augment must be none, crop or standard, got {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub lr_drop_every: usize,
    pub lr_drop_factor: f64,
    pub momentum: f64,
    pub epochs: usize,
    /// Samples whose gradients are averaged into one update.
    pub batch_size: usize,
    pub crop_h: usize,
    pub crop_w: usize,
    pub augment: AugmentMode,
    /// Use only the first `n` training samples; 0 means all.
    pub train_samples: usize,
    /// Seeds parameter init, sample order and augmentation. Overrides `model.seed`.
    pub seed: u64,
    pub dataset_root: PathBuf,
    pub model: RethNetConfig,
}

impl Default for TrainConfig {
    /// lr 0.001 divided by 10 every 50 of 200 epochs, momentum 0.9, batches
    /// of 4, 32x32 crops with full augmentation.
    fn default() -> Self {
        TrainConfig {
            base_lr: 1e-3,
            lr_drop_every: 50,
            lr_drop_factor: 10.0,
            momentum: 0.9,
            epochs: 200,
            batch_size: 4,
            crop_h: 32,
            crop_w: 32,
            augment: AugmentMode::Standard,
            train_samples: 0,
            seed: 0,
            dataset_root: PathBuf::from("data"),
            model: RethNetConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad(format!("base_lr must be positive, got {}", self.base_lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.lr_drop_factor > 1.0 && self.lr_drop_factor.is_finite()) {
            return bad(format!("lr_drop_factor must exceed 1, got {}", self.lr_drop_factor));
        }
        if self.lr_drop_every == 0 {
            return bad("lr_drop_every must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.crop_h == 0 || self.crop_w == 0 {
            return bad("crop extents must be positive".into());
        }
        self.model.validate()
    }

    pub fn augment_config(&self) -> Option<AugmentConfig> {
        match self.augment {
            AugmentMode::None => None,
            AugmentMode::Crop => Some(AugmentConfig::crop_only(self.crop_h, self.crop_w)),
            AugmentMode::Standard => Some(AugmentConfig::standard(self.crop_h, self.crop_w)),
        }
    }

    /// The model config with the training seed applied.
    pub fn seeded_model(&self) -> RethNetConfig {
        RethNetConfig {
            seed: self.seed,
            ..self.model.clone()
        }
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.set("base_lr", self.base_lr);
        kv.set("lr_drop_every", self.lr_drop_every);
        kv.set("lr_drop_factor", self.lr_drop_factor);
        kv.set("momentum", self.momentum);
        kv.set("epochs", self.epochs);
        kv.set("batch_size", self.batch_size);
        kv.set("crop_h", self.crop_h);
        kv.set("crop_w", self.crop_w);
        kv.set("augment", self.augment.name());
        kv.set("train_samples", self.train_samples);
        kv.set("seed", self.seed);
        kv.set("dataset_root", self.dataset_root.display());
        kv.extend_prefixed("model", &self.model.to_kv());
        kv
    }

    /// Reads a config; absent keys keep their defaults. Unknown top-level
    /// keys are rejected so typos do not pass silently.
    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        const KNOWN: [&str; 12] = [
            "base_lr",
            "lr_drop_every",
            "lr_drop_factor",
            "momentum",
            "epochs",
            "batch_size",
            "crop_h",
            "crop_w",
            "augment",
            "train_samples",
            "seed",
            "dataset_root",
        ];
        if let Some(k) = kv
            .keys()
            .find(|k| !k.starts_with("model.") && !k.starts_with("state.") && !KNOWN.contains(k))
        {
            return Err(Error::Config(format!("unknown config key {k:?}")));
        }
        let d = TrainConfig::default();
        let cfg = TrainConfig {
            base_lr: kv.get_or("base_lr", d.base_lr)?,
            lr_drop_every: kv.get_or("lr_drop_every", d.lr_drop_every)?,
            lr_drop_factor: kv.get_or("lr_drop_factor", d.lr_drop_factor)?,
            momentum: kv.get_or("momentum", d.momentum)?,
            epochs: kv.get_or("epochs", d.epochs)?,
            batch_size: kv.get_or("batch_size", d.batch_size)?,
            crop_h: kv.get_or("crop_h", d.crop_h)?,
            crop_w: kv.get_or("crop_w", d.crop_w)?,
            augment: kv.raw("augment").map_or(Ok(d.augment), AugmentMode::parse)?,
            train_samples: kv.get_or("train_samples", d.train_samples)?,
            seed: kv.get_or("seed", d.seed)?,
            dataset_root: kv.raw("dataset_root").map_or(d.dataset_root, PathBuf::from),
            model: RethNetConfig::from_kv(&kv.section("model"))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_kv(&KvMap::parse(text)?)
    }
}
