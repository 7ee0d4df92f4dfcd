use crate::blocks::BlockVariant;
use crate::error::{Error, Result};
use crate::kv::KvMap;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StageConfig {
    pub out_channels: usize,
    pub stride: usize,
    /// Block after the stage; `None` leaves a plain separable-conv stage.
    pub variant: Option<BlockVariant>,
    /// Slicing coefficient at the configured input size.
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RethNetConfig {
    pub input_h: usize,
    pub input_w: usize,
    pub input_c: usize,
    pub num_classes: usize,
    pub stages: Vec<StageConfig>,
    pub decoder_low_level_stage: usize,
    pub decoder_channels: usize,
    pub se_ratio: usize,
    pub seed: u64,
}

impl Default for RethNetConfig {
    /// Desk-scale default: 64x64x3 input, three stride-2 stages of 16/32/64
    /// channels with a ConvLSTM block each, 4x4 patches everywhere.
    fn default() -> Self {
        RethNetConfig {
            input_h: 64,
            input_w: 64,
            input_c: 3,
            num_classes: 6,
            stages: vec![
                StageConfig {
                    out_channels: 16,
                    stride: 2,
                    variant: Some(BlockVariant::RethinkerE),
                    n: 8,
                },
                StageConfig {
                    out_channels: 32,
                    stride: 2,
                    variant: Some(BlockVariant::RethinkerE),
                    n: 4,
                },
                StageConfig {
                    out_channels: 64,
                    stride: 2,
                    variant: Some(BlockVariant::RethinkerE),
                    n: 2,
                },
            ],
            decoder_low_level_stage: 1,
            decoder_channels: 32,
            se_ratio: 4,
            seed: 0,
        }
    }
}

impl RethNetConfig {
    pub fn output_stride(&self) -> usize {
        self.stages.iter().map(|s| s.stride).product()
    }

    /// Spatial extent `(h, w)` after each stage for an input of `h x w`.
    pub fn stage_extents(&self, h: usize, w: usize) -> Vec<(usize, usize)> {
        let (mut h, mut w) = (h, w);
        self.stages
            .iter()
            .map(|s| {
                h = h.div_ceil(s.stride);
                w = w.div_ceil(s.stride);
                (h, w)
            })
            .collect()
    }

    /// Patch extent `(H', W')` of every stage at the configured input size.
    pub fn patch_sizes(&self) -> Vec<(usize, usize)> {
        self.stage_extents(self.input_h, self.input_w)
            .into_iter()
            .zip(&self.stages)
            .map(|((h, w), s)| (h / s.n.max(1), w / s.n.max(1)))
            .collect()
    }

    /// Same variant in every block position that has one.
    pub fn with_variant(&self, variant: BlockVariant) -> Self {
        let mut cfg = self.clone();
        for s in &mut cfg.stages {
            if s.variant.is_some() {
                s.variant = Some(variant);
            }
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.num_classes < 2 {
            return bad(format!("num_classes must be at least 2, got {}", self.num_classes));
        }
        if self.num_classes > 255 {
            return bad(format!("num_classes {} exceeds the 8-bit mask range", self.num_classes));
        }
        if self.input_c == 0 || self.input_h == 0 || self.input_w == 0 {
            return bad("input extents must be positive".into());
        }
        if self.stages.is_empty() {
            return bad("at least one stage is required".into());
        }
        let os = self.output_stride();
        if ![4, 8, 16].contains(&os) {
            return bad(format!("output stride {os} not in {{4, 8, 16}}"));
        }
        if self.input_h % os != 0 || self.input_w % os != 0 {
            return bad(format!(
                "input {}x{} not divisible by output stride {os}",
                self.input_h, self.input_w
            ));
        }
        if self.decoder_low_level_stage >= self.stages.len() {
            return bad(format!(
                "decoder_low_level_stage {} out of range for {} stages",
                self.decoder_low_level_stage,
                self.stages.len()
            ));
        }
        if self.decoder_channels == 0 {
            return bad("decoder_channels must be positive".into());
        }
        let extents = self.stage_extents(self.input_h, self.input_w);
        for (i, (s, (h, w))) in self.stages.iter().zip(extents).enumerate() {
            if s.out_channels == 0 || s.stride == 0 {
                return bad(format!("stage {i}: channels and stride must be positive"));
            }
            let Some(variant) = s.variant else { continue };
            if self.se_ratio == 0 || s.out_channels % self.se_ratio != 0 {
                return bad(format!(
                    "stage {i}: {} channels not divisible by se_ratio {}",
                    s.out_channels, self.se_ratio
                ));
            }
            if variant.uses_patches() && (s.n == 0 || h % s.n != 0 || w % s.n != 0) {
                return bad(format!("stage {i}: n={} does not divide extent {h}x{w}", s.n));
            }
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.set("input_h", self.input_h);
        kv.set("input_w", self.input_w);
        kv.set("input_c", self.input_c);
        kv.set("num_classes", self.num_classes);
        kv.set("decoder_low_level_stage", self.decoder_low_level_stage);
        kv.set("decoder_channels", self.decoder_channels);
        kv.set("se_ratio", self.se_ratio);
        kv.set("seed", self.seed);
        kv.set("num_stages", self.stages.len());
        for (i, s) in self.stages.iter().enumerate() {
            kv.set(format!("stages.{i}.out_channels"), s.out_channels);
            kv.set(format!("stages.{i}.stride"), s.stride);
            kv.set(format!("stages.{i}.n"), s.n);
            kv.set(
                format!("stages.{i}.variant"),
                s.variant.map_or("none", BlockVariant::name),
            );
        }
        kv
    }

    /// Reads a config; missing keys fall back to [`RethNetConfig::default`].
    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        let d = RethNetConfig::default();
        let stage_count = match kv.get::<usize>("num_stages")? {
            Some(n) => n,
            None => {
                let mut n = d.stages.len();
                while kv.keys().any(|k| k.starts_with(&format!("stages.{n}."))) {
                    n += 1;
                }
                n
            }
        };
        let mut stages = Vec::with_capacity(stage_count);
        for i in 0..stage_count {
            let fallback = d.stages.get(i).cloned().unwrap_or(StageConfig {
                out_channels: 16,
                stride: 1,
                variant: None,
                n: 1,
            });
            let sk = kv.section(&format!("stages.{i}"));
            let variant = match sk.raw("variant") {
                None => fallback.variant,
                Some("none") => None,
                Some(v) => Some(v.parse::<BlockVariant>().map_err(Error::Config)?),
            };
            stages.push(StageConfig {
                out_channels: sk.get_or("out_channels", fallback.out_channels)?,
                stride: sk.get_or("stride", fallback.stride)?,
                variant,
                n: sk.get_or("n", fallback.n)?,
            });
        }
        let cfg = RethNetConfig {
            input_h: kv.get_or("input_h", d.input_h)?,
            input_w: kv.get_or("input_w", d.input_w)?,
            input_c: kv.get_or("input_c", d.input_c)?,
            num_classes: kv.get_or("num_classes", d.num_classes)?,
            stages,
            decoder_low_level_stage: kv.get_or("decoder_low_level_stage", d.decoder_low_level_stage)?,
            decoder_channels: kv.get_or("decoder_channels", d.decoder_channels)?,
            se_ratio: kv.get_or("se_ratio", d.se_ratio)?,
            seed: kv.get_or("seed", d.seed)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
