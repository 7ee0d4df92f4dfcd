use std::path::{Path, PathBuf};

use super::{evaluate_samples, Checkpoint};
use crate::data::{load_split, read_ppm, write_pgm, write_ppm, Split};
use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::network::Model;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Overlay colour of each class id (cycled for ids past the table).
pub const PALETTE: [[u8; 3]; 8] = [
    [0, 0, 0],
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
];

/// Weight of the class colour in the overlay; the image gets the rest.
pub const OVERLAY_ALPHA: f64 = 0.5;

pub fn class_color(class: u8) -> [u8; 3] {
    PALETTE[class as usize % PALETTE.len()]
}

/// Eval-mode metrics of a checkpoint on one split of a dataset.
pub fn evaluate_checkpoint<T: Scalar>(ck: &Checkpoint, root: &Path, split: Split) -> Result<MetricReport> {
    let model = ck.model::<T>()?;
    let (spec, samples) = load_split(root, split)?;
    let k = model.config().num_classes;
    if spec.num_classes != k {
        return Err(Error::Data(format!(
            "checkpoint predicts {k} classes but the dataset has {}",
            spec.num_classes
        )));
    }
    evaluate_samples(&model, &samples)
}

/// Paths written by [`infer_file`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InferOutputs {
    pub mask: PathBuf,
    pub overlay: PathBuf,
}

/// Blends the class colours over the image.
pub fn overlay(image: &Tensor<f64>, mask: &[u8]) -> Tensor<f64> {
    Tensor::from_fn(image.shape().to_vec(), |i| {
        let c = class_color(mask[i / 3])[i % 3] as f64 / 255.0;
        (1.0 - OVERLAY_ALPHA) * image.data()[i] + OVERLAY_ALPHA * c
    })
}

/// Predicts the mask of the PPM at `input` and writes `<prefix>_mask.pgm` and
/// `<prefix>_overlay.ppm`.
pub fn infer_file<T: Scalar>(model: &Model<T>, input: &Path, prefix: &Path) -> Result<InferOutputs> {
    let image = read_ppm(input)?;
    let (h, w) = (image.shape()[0], image.shape()[1]);
    let mask = model.predict_mask(&image.cast())?;
    let with_suffix = |s: &str| {
        let mut p = prefix.as_os_str().to_owned();
        p.push(s);
        PathBuf::from(p)
    };
    let out = InferOutputs {
        mask: with_suffix("_mask.pgm"),
        overlay: with_suffix("_overlay.ppm"),
    };
    write_pgm(&out.mask, h, w, &mask)?;
    write_ppm(&out.overlay, &overlay(&image, &mask))?;
    Ok(out)
}
