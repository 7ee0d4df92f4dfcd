//! Synthetic context-dependent segmentation data, image/mask files and
//! training-time augmentation.

mod augment;
mod dataset;
mod oracle;
mod pnm;
mod synth;

pub use augment::{apply_augment, augment, AugmentConfig, AugmentDraw};
pub use dataset::{generate_dataset, load_spec, load_split, read_sample, split_base, write_sample, Split, SPEC_FILE};
pub use oracle::{window_oracle_mask, window_oracle_report, WINDOW_SIGMA, WINDOW_SIZE};
pub use pnm::{parse_pgm, parse_ppm, read_pgm, read_ppm, write_pgm, write_ppm};
pub use synth::{generate_sample, texture_value, CoOccurrenceSpec};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::IGNORE_INDEX;

/// An RGB image in `[0, 1]` with its per-pixel class mask.
#[derive(Clone, Debug, PartialEq)]
pub struct SegSample {
    /// `(H, W, 3)`.
    pub image: Tensor<f64>,
    /// Row-major `H * W` class ids; [`IGNORE_INDEX`] marks unlabeled pixels.
    pub mask: Vec<u8>,
}

impl SegSample {
    pub fn new(image: Tensor<f64>, mask: Vec<u8>) -> Result<Self> {
        let s = image.shape();
        if s.len() != 3 || s[2] != 3 {
            return Err(Error::Data(format!("image must be (H, W, 3), got {s:?}")));
        }
        if mask.len() != s[0] * s[1] {
            return Err(Error::Data(format!(
                "mask has {} pixels, image is {}x{}",
                mask.len(),
                s[0],
                s[1]
            )));
        }
        Ok(SegSample { image, mask })
    }

    pub fn height(&self) -> usize {
        self.image.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[1]
    }

    /// Fails if any labeled pixel is `>= num_classes`.
    pub fn check_classes(&self, num_classes: usize) -> Result<()> {
        match self.mask.iter().position(|&m| m != IGNORE_INDEX && m as usize >= num_classes) {
            Some(i) => Err(Error::Data(format!(
                "mask class {} at pixel {i} out of range for {num_classes} classes",
                self.mask[i]
            ))),
            None => Ok(()),
        }
    }

    /// The top-left `h x w` window starting at `(y, x)`.
    pub fn crop(&self, y: usize, x: usize, h: usize, w: usize) -> Result<SegSample> {
        if y + h > self.height() || x + w > self.width() || h == 0 || w == 0 {
            return Err(Error::Data(format!(
                "crop {h}x{w} at ({y}, {x}) exceeds {}x{} sample",
                self.height(),
                self.width()
            )));
        }
        let sw = self.width();
        let image = Tensor::from_fn([h, w, 3], |i| {
            let (r, rest) = (i / (w * 3), i % (w * 3));
            self.image.data()[((y + r) * sw + x) * 3 + rest]
        });
        let mask = (0..h * w).map(|i| self.mask[(y + i / w) * sw + x + i % w]).collect();
        Ok(SegSample { image, mask })
    }
}
