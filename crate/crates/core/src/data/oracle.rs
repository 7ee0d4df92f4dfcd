//! Purely local reference classifier for the co-occurrence benchmark.
//!
//! Every pixel is labelled with the class whose texture template best matches
//! the `WINDOW_SIZE x WINDOW_SIZE` neighbourhood around it, by squared error
//! weighted with a Gaussian of `WINDOW_SIGMA` pixels centred on the pixel (so
//! that small disks are not drowned by the surrounding background). Classes
//! sharing a texture tie exactly; ties are broken uniformly at random, which
//! is the best any classifier without context can do.

use rand::Rng;

use super::{texture_value, CoOccurrenceSpec, SegSample};
use crate::error::Result;
use crate::metrics::{ConfusionMatrix, MetricReport};
use crate::IGNORE_INDEX;

pub const WINDOW_SIZE: usize = 9;
pub const WINDOW_SIGMA: f64 = 1.5;

/// Window-oracle prediction for one image.
pub fn window_oracle_mask(spec: &CoOccurrenceSpec, sample: &SegSample, rng: &mut impl Rng) -> Vec<u8> {
    let (h, w) = (sample.height(), sample.width());
    let img = sample.image.data();
    let class_groups = spec.class_groups();
    let num_groups = class_groups.iter().max().map_or(0, |m| m + 1);
    let members: Vec<Vec<u8>> = (0..num_groups)
        .map(|g| (0..spec.num_classes as u8).filter(|&c| class_groups[c as usize] == g).collect())
        .collect();

    // Per-pixel squared error against every group's template.
    let mut err = vec![0.0f64; num_groups * h * w];
    for y in 0..h {
        for x in 0..w {
            for (g, e) in err[(y * w + x) * num_groups..][..num_groups].iter_mut().enumerate() {
                let t = texture_value(g, y, x);
                *e = (0..3).map(|c| (img[(y * w + x) * 3 + c] - t[c]).powi(2)).sum();
            }
        }
    }

    let r = WINDOW_SIZE / 2;
    let weight: Vec<f64> = (0..=r)
        .map(|d| (-((d * d) as f64) / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp())
        .collect();
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let mut score = vec![0.0f64; num_groups];
            for yy in y.saturating_sub(r)..(y + r + 1).min(h) {
                for xx in x.saturating_sub(r)..(x + r + 1).min(w) {
                    let wt = weight[yy.abs_diff(y)] * weight[xx.abs_diff(x)];
                    for (s, e) in score.iter_mut().zip(&err[(yy * w + xx) * num_groups..][..num_groups]) {
                        *s += wt * e;
                    }
                }
            }
            let best = (0..num_groups)
                .min_by(|&a, &b| score[a].total_cmp(&score[b]))
                .expect("at least one group");
            let m = &members[best];
            out.push(m[rng.gen_range(0..m.len())]);
        }
    }
    out
}

/// Confusion-matrix report of the window oracle over `samples`.
pub fn window_oracle_report(spec: &CoOccurrenceSpec, samples: &[SegSample], rng: &mut impl Rng) -> Result<MetricReport> {
    let mut cm = ConfusionMatrix::new(spec.num_classes);
    for s in samples {
        let pred = window_oracle_mask(spec, s, rng);
        cm.accumulate(&pred, &s.mask, IGNORE_INDEX)?;
    }
    cm.report()
}
