use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{evaluate_samples, TrainConfig, Trainer};
use crate::blocks::BlockVariant;
use crate::data::{load_split, window_oracle_report, Split};
use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::scalar::Scalar;

/// Test-split outcome of one (variant, seed) training run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub variant: BlockVariant,
    pub seed: u64,
    pub miou: f64,
    /// Mean IoU over the classes that belong to texture pairs.
    pub paired_iou: f64,
    pub report: MetricReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub paired_classes: Vec<usize>,
    pub runs: Vec<RunResult>,
    pub oracle_miou: f64,
    pub oracle_paired_iou: f64,
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl AblationReport {
    pub fn variants(&self) -> Vec<BlockVariant> {
        let mut v: Vec<BlockVariant> = Vec::new();
        for r in &self.runs {
            if !v.contains(&r.variant) {
                v.push(r.variant);
            }
        }
        v
    }

    pub fn mious(&self, variant: BlockVariant) -> Vec<f64> {
        self.runs.iter().filter(|r| r.variant == variant).map(|r| r.miou).collect()
    }

    pub fn paired_ious(&self, variant: BlockVariant) -> Vec<f64> {
        self.runs.iter().filter(|r| r.variant == variant).map(|r| r.paired_iou).collect()
    }

    /// Difference of mean mIoU, `a - b`.
    pub fn gap(&self, a: BlockVariant, b: BlockVariant) -> f64 {
        mean_sd(&self.mious(a)).0 - mean_sd(&self.mious(b)).0
    }

    /// `sqrt((sd_a^2 + sd_b^2) / 2)` of the mIoU over seeds.
    pub fn pooled_sd(&self, a: BlockVariant, b: BlockVariant) -> f64 {
        let (sa, sb) = (mean_sd(&self.mious(a)).1, mean_sd(&self.mious(b)).1);
        ((sa * sa + sb * sb) / 2.0).sqrt()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{:<12} {:>5} {:>18} {:>18}", "variant", "runs", "mIoU mean±sd", "paired IoU mean±sd").unwrap();
        for v in self.variants() {
            let (m, sd) = mean_sd(&self.mious(v));
            let (pm, psd) = mean_sd(&self.paired_ious(v));
            writeln!(
                s,
                "{:<12} {:>5} {:>11.4} ± {:<6.4} {:>11.4} ± {:<6.4}",
                v.name(),
                self.mious(v).len(),
                m,
                sd,
                pm,
                psd
            )
            .unwrap();
        }
        writeln!(
            s,
            "{:<12} {:>5} {:>11.4}          {:>11.4}",
            "window9x9", "-", self.oracle_miou, self.oracle_paired_iou
        )
        .unwrap();
        let vs = self.variants();
        if vs.contains(&BlockVariant::RethinkerE) && vs.contains(&BlockVariant::BaselineC) {
            let (e, c) = (BlockVariant::RethinkerE, BlockVariant::BaselineC);
            writeln!(
                s,
                "gap rethinker_e - baseline_c = {:.4} (pooled sd {:.4})",
                self.gap(e, c),
                self.pooled_sd(e, c)
            )
            .unwrap();
        }
        s
    }

    /// One row per run plus one for the window oracle.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant,seed,miou,paired_iou,pixel_acc,dice\n");
        for r in &self.runs {
            writeln!(
                s,
                "{},{},{},{},{},{}",
                r.variant.name(),
                r.seed,
                r.miou,
                r.paired_iou,
                r.report.pixel_acc,
                r.report.dice
            )
            .unwrap();
        }
        writeln!(s, "window9x9,,{},{},,", self.oracle_miou, self.oracle_paired_iou).unwrap();
        s
    }
}

/// Fails unless `a` and `b` are equal apart from their block variants.
pub fn check_comparable(a: &TrainConfig, b: &TrainConfig) -> Result<()> {
    let strip = |c: &TrainConfig| {
        let mut c = c.clone();
        for s in &mut c.model.stages {
            s.variant = s.variant.map(|_| BlockVariant::BaselineC);
        }
        c
    };
    let (sa, sb) = (strip(a), strip(b));
    if sa != sb {
        let (ka, kb) = (sa.to_kv(), sb.to_kv());
        let diff = ka
            .keys()
            .chain(kb.keys())
            .find(|k| ka.raw(k) != kb.raw(k))
            .unwrap_or("?")
            .to_string();
        return Err(Error::Config(format!(
            "ablation configs differ in more than the block variant (first difference: {diff})"
        )));
    }
    Ok(())
}

/// Trains every variant for every seed `base.seed .. base.seed + seeds` on
/// the train split and scores the final model on the test split, next to the
/// window oracle. With `out`, each run's checkpoints and log go to
/// `out/<variant>_seed<seed>/`.
pub fn ablate<T: Scalar>(
    base: &TrainConfig,
    variants: &[BlockVariant],
    seeds: usize,
    out: Option<&Path>,
    mut on_run: impl FnMut(&RunResult),
) -> Result<AblationReport> {
    if variants.is_empty() || seeds == 0 {
        return Err(Error::Config("ablation needs at least one variant and one seed".into()));
    }
    if base.model.stages.iter().all(|s| s.variant.is_none()) {
        return Err(Error::Config("model has no block positions to ablate".into()));
    }
    let configs: Vec<TrainConfig> = variants
        .iter()
        .map(|&v| TrainConfig {
            model: base.model.with_variant(v),
            ..base.clone()
        })
        .collect();
    for c in &configs {
        c.validate()?;
        check_comparable(&configs[0], c)?;
    }

    let (spec, train) = load_split(&base.dataset_root, Split::Train)?;
    let (_, test) = load_split(&base.dataset_root, Split::Test)?;
    if spec.num_classes != base.model.num_classes {
        return Err(Error::Data(format!(
            "model predicts {} classes but the dataset has {}",
            base.model.num_classes, spec.num_classes
        )));
    }
    let paired = spec.paired_classes();

    let mut runs = Vec::new();
    for s in 0..seeds as u64 {
        for (cfg, &variant) in configs.iter().zip(variants) {
            let cfg = TrainConfig {
                seed: base.seed + s,
                ..cfg.clone()
            };
            let mut trainer = Trainer::<T>::new(cfg.clone())?;
            let dir = out.map(|o| o.join(format!("{}_seed{}", variant.name(), cfg.seed)));
            trainer.run(&train, &[], dir.as_deref(), |_| {})?;
            let report = evaluate_samples(trainer.model(), &test)?;
            let r = RunResult {
                variant,
                seed: cfg.seed,
                miou: report.miou,
                paired_iou: report.mean_iou_of(&paired),
                report,
            };
            on_run(&r);
            runs.push(r);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(base.seed);
    let oracle = window_oracle_report(&spec, &test, &mut rng)?;
    Ok(AblationReport {
        oracle_paired_iou: oracle.mean_iou_of(&paired),
        oracle_miou: oracle.miou,
        paired_classes: paired,
        runs,
    })
}
