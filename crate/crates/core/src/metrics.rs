//! Confusion-matrix accumulation and the segmentation scores derived from it.
//!
//! Rows are ground truth, columns prediction. Classes absent from both truth
//! and prediction have an undefined IoU and are left out of the means.

use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        ConfusionMatrix {
            k: num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    /// Builds a matrix from row-major counts.
    pub fn from_counts(num_classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != num_classes * num_classes {
            return Err(Error::Data(format!(
                "{} counts for a {num_classes}x{num_classes} matrix",
                counts.len()
            )));
        }
        Ok(ConfusionMatrix { k: num_classes, counts })
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds one count per pixel whose truth label is not `ignore_index`.
    pub fn accumulate(&mut self, pred: &[u8], truth: &[u8], ignore_index: u8) -> Result<()> {
        if pred.len() != truth.len() {
            return Err(Error::Data(format!(
                "prediction has {} pixels, truth has {}",
                pred.len(),
                truth.len()
            )));
        }
        for (i, (&p, &t)) in pred.iter().zip(truth).enumerate() {
            if t == ignore_index {
                continue;
            }
            let (p, t) = (p as usize, t as usize);
            if p >= self.k || t >= self.k {
                return Err(Error::Data(format!(
                    "class id {} at pixel {i} out of range for {} classes",
                    p.max(t),
                    self.k
                )));
            }
            self.counts[t * self.k + p] += 1;
        }
        Ok(())
    }

    /// Element-wise sum; associative and commutative.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.k != self.k {
            return Err(Error::Data(format!(
                "cannot merge {}-class and {}-class matrices",
                self.k, other.k
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    fn row(&self, c: usize) -> u64 {
        self.counts[c * self.k..(c + 1) * self.k].iter().sum()
    }

    fn col(&self, c: usize) -> u64 {
        (0..self.k).map(|r| self.get(r, c)).sum()
    }

    fn non_empty(&self) -> Result<()> {
        if self.total() == 0 {
            return Err(Error::Data("confusion matrix has no scored pixels".into()));
        }
        Ok(())
    }

    /// IoU per class; `None` where the class occurs in neither truth nor prediction.
    pub fn per_class_iou(&self) -> Result<Vec<Option<f64>>> {
        self.non_empty()?;
        Ok((0..self.k)
            .map(|c| {
                let tp = self.get(c, c);
                let denom = self.row(c) + self.col(c) - tp;
                (denom > 0).then(|| tp as f64 / denom as f64)
            })
            .collect())
    }

    pub fn per_class_dice(&self) -> Result<Vec<Option<f64>>> {
        self.non_empty()?;
        Ok((0..self.k)
            .map(|c| {
                let denom = self.row(c) + self.col(c);
                (denom > 0).then(|| 2.0 * self.get(c, c) as f64 / denom as f64)
            })
            .collect())
    }

    pub fn miou(&self) -> Result<f64> {
        Ok(mean_defined(&self.per_class_iou()?))
    }

    pub fn dice(&self) -> Result<f64> {
        Ok(mean_defined(&self.per_class_dice()?))
    }

    pub fn pixel_acc(&self) -> Result<f64> {
        self.non_empty()?;
        let trace: u64 = (0..self.k).map(|c| self.get(c, c)).sum();
        Ok(trace as f64 / self.total() as f64)
    }

    pub fn report(&self) -> Result<MetricReport> {
        Ok(MetricReport {
            miou: self.miou()?,
            pixel_acc: self.pixel_acc()?,
            dice: self.dice()?,
            per_class_iou: self.per_class_iou()?,
            pixels: self.total(),
        })
    }
}

fn mean_defined(values: &[Option<f64>]) -> f64 {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    if defined.is_empty() {
        0.0
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub miou: f64,
    pub pixel_acc: f64,
    pub dice: f64,
    pub per_class_iou: Vec<Option<f64>>,
    pub pixels: u64,
}

impl MetricReport {
    /// Mean IoU over a subset of classes, skipping undefined entries.
    pub fn mean_iou_of(&self, classes: &[usize]) -> f64 {
        let picked: Vec<Option<f64>> = classes
            .iter()
            .filter_map(|&c| self.per_class_iou.get(c).copied())
            .collect();
        mean_defined(&picked)
    }

    /// Flat `key = value` text.
    pub fn to_kv_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "miou = {}", self.miou).unwrap();
        writeln!(s, "pixel_acc = {}", self.pixel_acc).unwrap();
        writeln!(s, "dice = {}", self.dice).unwrap();
        writeln!(s, "pixels = {}", self.pixels).unwrap();
        for (c, v) in self.per_class_iou.iter().enumerate() {
            match v {
                Some(v) => writeln!(s, "iou.{c} = {v}").unwrap(),
                None => writeln!(s, "iou.{c} = nan").unwrap(),
            }
        }
        s
    }

    /// Two-line CSV: header then values.
    pub fn to_csv(&self) -> String {
        let mut header = vec!["miou".to_string(), "pixel_acc".into(), "dice".into(), "pixels".into()];
        let mut row = vec![
            self.miou.to_string(),
            self.pixel_acc.to_string(),
            self.dice.to_string(),
            self.pixels.to_string(),
        ];
        for (c, v) in self.per_class_iou.iter().enumerate() {
            header.push(format!("iou_{c}"));
            row.push(v.map_or_else(|| "nan".into(), |v| v.to_string()));
        }
        format!("{}\n{}\n", header.join(","), row.join(","))
    }
}
