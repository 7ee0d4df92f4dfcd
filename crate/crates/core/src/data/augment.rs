//! Geometric augmentation: rotation, zoom and horizontal flip about the image
//! centre, then a crop. Implemented by inverse mapping every output pixel
//! centre into the source; the image is sampled bilinearly, the mask by
//! nearest neighbour, and mask pixels that land outside the source become
//! [`IGNORE_INDEX`](crate::IGNORE_INDEX).

use rand::Rng;

use super::SegSample;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::IGNORE_INDEX;

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentConfig {
    pub max_rotation_deg: f64,
    pub zoom_min: f64,
    pub zoom_max: f64,
    pub flip_prob: f64,
    pub crop_h: usize,
    pub crop_w: usize,
}

impl AugmentConfig {
    /// ±15° rotation, zoom in [0.8, 1.2], flip with p = 0.5.
    pub fn standard(crop_h: usize, crop_w: usize) -> Self {
        AugmentConfig {
            max_rotation_deg: 15.0,
            zoom_min: 0.8,
            zoom_max: 1.2,
            flip_prob: 0.5,
            crop_h,
            crop_w,
        }
    }

    /// No geometric change, only a random crop.
    pub fn crop_only(crop_h: usize, crop_w: usize) -> Self {
        AugmentConfig {
            max_rotation_deg: 0.0,
            zoom_min: 1.0,
            zoom_max: 1.0,
            flip_prob: 0.0,
            crop_h,
            crop_w,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.max_rotation_deg >= 0.0 && self.max_rotation_deg < 180.0) {
            return Err(Error::Config(format!("rotation bound {} outside [0, 180)", self.max_rotation_deg)));
        }
        if !(self.zoom_min > 0.0 && self.zoom_min <= self.zoom_max && self.zoom_max.is_finite()) {
            return Err(Error::Config(format!(
                "zoom range [{}, {}] invalid",
                self.zoom_min, self.zoom_max
            )));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::Config(format!("flip probability {} outside [0, 1]", self.flip_prob)));
        }
        if self.crop_h == 0 || self.crop_w == 0 {
            return Err(Error::Config("crop extents must be positive".into()));
        }
        Ok(())
    }
}

/// One realisation of the random transform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentDraw {
    /// Rotation in radians.
    pub theta: f64,
    pub zoom: f64,
    pub flip: bool,
    pub crop_y: usize,
    pub crop_x: usize,
}

impl AugmentDraw {
    /// No rotation, zoom or flip; crop centred in an `h x w` frame.
    pub fn identity(h: usize, w: usize, crop_h: usize, crop_w: usize) -> Self {
        AugmentDraw {
            theta: 0.0,
            zoom: 1.0,
            flip: false,
            crop_y: h.saturating_sub(crop_h) / 2,
            crop_x: w.saturating_sub(crop_w) / 2,
        }
    }

    pub fn sample(cfg: &AugmentConfig, h: usize, w: usize, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        if cfg.crop_h > h || cfg.crop_w > w {
            return Err(Error::Data(format!(
                "crop {}x{} larger than {h}x{w} sample",
                cfg.crop_h, cfg.crop_w
            )));
        }
        let max = cfg.max_rotation_deg.to_radians();
        let theta = if max > 0.0 { rng.gen_range(-max..=max) } else { 0.0 };
        let zoom = if cfg.zoom_max > cfg.zoom_min {
            rng.gen_range(cfg.zoom_min..=cfg.zoom_max)
        } else {
            cfg.zoom_min
        };
        let flip = rng.gen_bool(cfg.flip_prob);
        let crop_y = rng.gen_range(0..=h - cfg.crop_h);
        let crop_x = rng.gen_range(0..=w - cfg.crop_w);
        Ok(AugmentDraw {
            theta,
            zoom,
            flip,
            crop_y,
            crop_x,
        })
    }
}

/// Applies `draw` and crops `crop_h x crop_w`.
pub fn apply_augment(s: &SegSample, draw: &AugmentDraw, crop_h: usize, crop_w: usize) -> Result<SegSample> {
    let (h, w) = (s.height(), s.width());
    if crop_h == 0 || crop_w == 0 || draw.crop_y + crop_h > h || draw.crop_x + crop_w > w {
        return Err(Error::Data(format!(
            "crop {crop_h}x{crop_w} at ({}, {}) exceeds {h}x{w} sample",
            draw.crop_y, draw.crop_x
        )));
    }
    if !(draw.zoom > 0.0 && draw.theta.is_finite()) {
        return Err(Error::Data(format!("invalid transform {draw:?}")));
    }
    let (cy, cx) = (h as f64 / 2.0, w as f64 / 2.0);
    let (sin, cos) = draw.theta.sin_cos();
    let src = s.image.data();
    let mut image = Vec::with_capacity(crop_h * crop_w * 3);
    let mut mask = Vec::with_capacity(crop_h * crop_w);
    for oy in draw.crop_y..draw.crop_y + crop_h {
        for ox in draw.crop_x..draw.crop_x + crop_w {
            let dy = oy as f64 + 0.5 - cy;
            let mut dx = ox as f64 + 0.5 - cx;
            if draw.flip {
                dx = -dx;
            }
            let (dy, dx) = (dy / draw.zoom, dx / draw.zoom);
            // Inverse rotation of the output offset.
            let sy = cy + cos * dy - sin * dx;
            let sx = cx + sin * dy + cos * dx;

            let (ny, nx) = (sy.floor(), sx.floor());
            let inside = ny >= 0.0 && nx >= 0.0 && ny < h as f64 && nx < w as f64;
            mask.push(if inside {
                s.mask[ny as usize * w + nx as usize]
            } else {
                IGNORE_INDEX
            });
            if !inside {
                image.extend([0.0; 3]);
                continue;
            }
            let (fy, fx) = ((sy - 0.5).max(0.0), (sx - 0.5).max(0.0));
            let (y0, x0) = ((fy.floor() as usize).min(h - 1), (fx.floor() as usize).min(w - 1));
            let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
            let (ty, tx) = (fy - y0 as f64, fx - x0 as f64);
            for ch in 0..3 {
                let at = |y: usize, x: usize| src[(y * w + x) * 3 + ch];
                let top = at(y0, x0) * (1.0 - tx) + at(y0, x1) * tx;
                let bot = at(y1, x0) * (1.0 - tx) + at(y1, x1) * tx;
                image.push(top * (1.0 - ty) + bot * ty);
            }
        }
    }
    SegSample::new(Tensor::new([crop_h, crop_w, 3], image)?, mask)
}

/// Draws a transform from `cfg` and applies it.
pub fn augment(s: &SegSample, cfg: &AugmentConfig, rng: &mut impl Rng) -> Result<SegSample> {
    let draw = AugmentDraw::sample(cfg, s.height(), s.width(), rng)?;
    apply_augment(s, &draw, cfg.crop_h, cfg.crop_w)
}
