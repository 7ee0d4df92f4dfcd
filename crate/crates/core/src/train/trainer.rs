use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{lr_at, momentum_step, zero_velocities, Checkpoint, TrainConfig};
use crate::data::{augment, SegSample};
use crate::error::{Error, Result};
use crate::metrics::{ConfusionMatrix, MetricReport};
use crate::network::{Mode, Model, StatUpdate};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor};
use crate::IGNORE_INDEX;

/// Generator stream of the training loop (sample order and augmentation).
const LOOP_STREAM: u64 = 1;

pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LOG_FILE: &str = "log.csv";

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_miou: Option<f64>,
}

impl EpochLog {
    pub const CSV_HEADER: &'static str = "epoch,lr,train_loss,val_miou";

    pub fn csv_row(&self) -> String {
        let val = self.val_miou.map_or_else(|| "nan".into(), |v| v.to_string());
        format!("{},{},{},{val}", self.epoch, self.lr, self.train_loss)
    }
}

/// Loss and parameter gradients of one sample, plus its normalisation stats.
pub struct SampleGrad<T> {
    pub loss: f64,
    pub grads: BTreeMap<String, Tensor<T>>,
    pub stats: Vec<StatUpdate<T>>,
}

/// Training-mode forward and backward pass on one sample.
pub fn sample_gradients<T: Scalar>(model: &Model<T>, sample: &SegSample) -> Result<SampleGrad<T>> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, true);
    let x = tape.constant(sample.image.cast());
    let out = model.forward(&mut tape, &bound, x, Mode::Train)?;
    let loss = tape.softmax_cross_entropy(out.logits, &sample.mask, IGNORE_INDEX)?;
    let mut g = tape.backward(loss)?;
    let grads = bound
        .iter()
        .filter_map(|(name, v)| g.take(v).map(|t| (name.to_string(), t)))
        .collect();
    Ok(SampleGrad {
        loss: tape.value(loss).item().to_f64_lossy(),
        grads,
        stats: out.stat_updates,
    })
}

/// Eval-mode confusion-matrix report of `model` over `samples`.
pub fn evaluate_samples<T: Scalar>(model: &Model<T>, samples: &[SegSample]) -> Result<MetricReport> {
    let mut cm = ConfusionMatrix::new(model.config().num_classes);
    for s in samples {
        let pred = model.predict_mask(&s.image.cast())?;
        cm.accumulate(&pred, &s.mask, IGNORE_INDEX)?;
    }
    cm.report()
}

/// Momentum-SGD training state: model, velocities, epoch counter and the
/// generator driving sample order and augmentation.
pub struct Trainer<T: Scalar> {
    cfg: TrainConfig,
    model: Model<T>,
    velocities: BTreeMap<String, Tensor<T>>,
    epoch: usize,
    best_val_miou: Option<f64>,
    rng: ChaCha8Rng,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let model = Model::build(cfg.seeded_model())?;
        let velocities = zero_velocities(model.params());
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(LOOP_STREAM);
        Ok(Trainer {
            cfg,
            model,
            velocities,
            epoch: 0,
            best_val_miou: None,
            rng,
        })
    }

    /// Resumes from a checkpoint. `epochs` overrides the stored total when given.
    pub fn from_checkpoint(ck: &Checkpoint, epochs: Option<usize>) -> Result<Self> {
        let mut cfg = ck.config.clone();
        if let Some(e) = epochs {
            cfg.epochs = e;
        }
        let model = ck.model::<T>()?;
        let velocities = ck.velocities::<T>();
        for (name, p) in model.params() {
            if velocities.get(name).map(Tensor::shape) != Some(p.shape()) {
                return Err(Error::Checkpoint(format!("velocity for {name} missing or misshapen")));
            }
        }
        Ok(Trainer {
            cfg,
            model,
            velocities,
            epoch: ck.epoch,
            best_val_miou: ck.best_val_miou,
            rng: ck.rng.restore(),
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(
            &self.cfg,
            &self.model,
            &self.velocities,
            self.epoch,
            self.best_val_miou,
            &self.rng,
        )
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn model(&self) -> &Model<T> {
        &self.model
    }

    pub fn velocities(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.velocities
    }

    /// Completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// One update from the mean gradient over `batch`; returns the mean loss.
    /// `label` names the step in error messages.
    pub fn step(&mut self, batch: &[SegSample], lr: f64, label: &str) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        let mut sum: BTreeMap<String, Tensor<T>> = BTreeMap::new();
        let mut loss = 0.0;
        for s in batch {
            let g = sample_gradients(&self.model, s)?;
            if !g.loss.is_finite() {
                return Err(Error::NonFinite(format!("loss is {} at {label}", g.loss)));
            }
            if let Some((name, _)) = g.grads.iter().find(|(_, t)| !t.all_finite()) {
                return Err(Error::NonFinite(format!("gradient of {name} is not finite at {label}")));
            }
            loss += g.loss;
            self.model.apply_stat_updates(&g.stats);
            for (name, t) in g.grads {
                match sum.get_mut(&name) {
                    Some(acc) => acc.add_assign(&t),
                    None => {
                        sum.insert(name, t);
                    }
                }
            }
        }
        let inv = T::one() / T::from_usize_lossy(batch.len());
        for t in sum.values_mut() {
            for v in t.data_mut() {
                *v *= inv;
            }
        }
        momentum_step(self.model.params_mut(), &sum, &mut self.velocities, lr, self.cfg.momentum)?;
        Ok(loss / batch.len() as f64)
    }

    fn prepare(&mut self, s: &SegSample) -> Result<SegSample> {
        match self.cfg.augment_config() {
            Some(a) => augment(s, &a, &mut self.rng),
            None => Ok(s.clone()),
        }
    }

    /// One pass over `train` in a freshly shuffled order; returns the mean
    /// per-sample loss.
    pub fn train_epoch(&mut self, train: &[SegSample]) -> Result<f64> {
        let used = match self.cfg.train_samples {
            0 => train.len(),
            n => n.min(train.len()),
        };
        if used == 0 {
            return Err(Error::Data("no training samples".into()));
        }
        let mut order: Vec<usize> = (0..used).collect();
        order.shuffle(&mut self.rng);
        let lr = lr_at(self.epoch, &self.cfg);
        let mut total = 0.0;
        for (step, chunk) in order.chunks(self.cfg.batch_size).enumerate() {
            let batch = chunk
                .iter()
                .map(|&i| self.prepare(&train[i]))
                .collect::<Result<Vec<_>>>()?;
            let label = format!("epoch {} step {step}", self.epoch);
            total += self.step(&batch, lr, &label)? * batch.len() as f64;
        }
        Ok(total / used as f64)
    }

    /// Trains until `cfg.epochs`, evaluating on `val` after every epoch.
    ///
    /// With `out`, writes `last.ckpt` every epoch, `best.ckpt` whenever val
    /// mIoU improves (every epoch when there is no val set), and appends one
    /// row per epoch to `log.csv`.
    pub fn run(
        &mut self,
        train: &[SegSample],
        val: &[SegSample],
        out: Option<&Path>,
        mut on_epoch: impl FnMut(&EpochLog),
    ) -> Result<Vec<EpochLog>> {
        if let Some(dir) = out {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let log = dir.join(LOG_FILE);
            if self.epoch == 0 || !log.exists() {
                fs::write(&log, format!("{}\n", EpochLog::CSV_HEADER)).map_err(|e| Error::io(&log, e))?;
            }
            if self.epoch >= self.cfg.epochs {
                let ck = self.checkpoint();
                ck.save(&dir.join(LAST_CHECKPOINT))?;
                if !dir.join(BEST_CHECKPOINT).exists() {
                    ck.save(&dir.join(BEST_CHECKPOINT))?;
                }
            }
        }
        let mut logs = Vec::new();
        while self.epoch < self.cfg.epochs {
            let lr = lr_at(self.epoch, &self.cfg);
            let train_loss = self.train_epoch(train)?;
            let val_miou = if val.is_empty() {
                None
            } else {
                Some(evaluate_samples(&self.model, val)?.miou)
            };
            let entry = EpochLog {
                epoch: self.epoch,
                lr,
                train_loss,
                val_miou,
            };
            self.epoch += 1;
            let improved = match (val_miou, self.best_val_miou) {
                (None, _) => true,
                (Some(v), None) => {
                    self.best_val_miou = Some(v);
                    true
                }
                (Some(v), Some(b)) if v > b => {
                    self.best_val_miou = Some(v);
                    true
                }
                _ => false,
            };
            if let Some(dir) = out {
                let ck = self.checkpoint();
                ck.save(&dir.join(LAST_CHECKPOINT))?;
                if improved {
                    ck.save(&dir.join(BEST_CHECKPOINT))?;
                }
                let log = dir.join(LOG_FILE);
                let mut f = OpenOptions::new().append(true).open(&log).map_err(|e| Error::io(&log, e))?;
                writeln!(f, "{}", entry.csv_row()).map_err(|e| Error::io(&log, e))?;
            }
            on_epoch(&entry);
            logs.push(entry);
        }
        Ok(logs)
    }
}
