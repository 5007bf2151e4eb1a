use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step, AdamState};
use super::{EpochRecord, TrainConfig, CURVE_HEADER};
use crate::codec::write_atomic;
use crate::data::{make_batch, SliceSample};
use crate::error::{Error, Result};
use crate::kernels::Mode;
use crate::loss::{loss_forward, FrozenLoss, LossConfig};
use crate::metrics::{predict_slice, ConfusionMatrix, DiceReport};
use crate::model::{load_weights, save_weights, Checkpoint, QuickTumorNet, TrainProgress};
use crate::tensor::{Scalar, Tensor};

pub const CURVE_FILE: &str = "curve.csv";
pub const BEST_FILE: &str = "best.qtnw";
pub const LAST_FILE: &str = "last.qtnw";

/// Aggregates of one pass over the training slices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// Mean batch loss, weighted by batch size.
    pub loss: f64,
    /// Pixel accuracy of the train-mode predictions seen during the epoch.
    pub accuracy: f64,
    pub steps: usize,
}

fn correct_pixels<T: Scalar>(probs: &Tensor<T>, labels: &[u8]) -> u64 {
    let s = probs.shape();
    let hw = s.plane();
    let mut correct = 0;
    for b in 0..s.n {
        let item = probs.item(b);
        for j in 0..hw {
            let mut best = 0;
            for c in 1..s.c {
                if item[c * hw + j] > item[best * hw + j] {
                    best = c;
                }
            }
            correct += (labels[b * hw + j] as usize == best) as u64;
        }
    }
    correct
}

/// Batch order for one epoch: a seeded shuffle, one stream per epoch so the
/// order does not depend on how many epochs ran before in this process.
fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// One pass over `samples`: forward (train mode), loss with sets and gammas
/// frozen at the current probabilities, backward, Adam.
pub fn train_epoch<T: Scalar>(
    net: &mut QuickTumorNet<T>,
    state: &mut AdamState<T>,
    samples: &[SliceSample],
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<EpochStats> {
    if samples.is_empty() {
        return Err(Error::Empty("training set has no slices".into()));
    }
    cfg.validate()?;
    let order = epoch_order(samples.len(), cfg.shuffle_seed, epoch);
    let (mut loss_sum, mut weight, mut correct, mut pixels) = (0.0, 0usize, 0u64, 0u64);
    let mut steps = 0;
    for chunk in order.chunks(cfg.batch_size) {
        let batch: Vec<&SliceSample> = chunk.iter().map(|&i| &samples[i]).collect();
        let (x, labels) = make_batch::<T>(&batch)?;
        let (probs, tape) = net.forward(&x, Mode::Train)?;
        let frozen = FrozenLoss::freeze(&probs, &labels, &cfg.loss)?;
        let terms = frozen.value(&probs)?;
        // the loss clamps probabilities, so NaN outputs can still score finite
        if !terms.total.is_finite() || !probs.is_finite() {
            return Err(Error::Divergence { epoch, last_good: None });
        }
        let dprobs = frozen.gradient(&probs)?;
        let mut grads = net.backward(tape, &dprobs)?;
        if let Some(layer) = grads.first_non_finite() {
            return Err(Error::NonFiniteGradient {
                layer: layer.to_string(),
            });
        }
        if let Some(max) = cfg.clip_grad_norm {
            let norm = grads.global_norm();
            if norm > max {
                grads.scale(T::of(max / norm));
            }
        }
        adam_step(net.params_mut(), &grads, state, cfg.learning_rate)?;
        loss_sum += terms.total * batch.len() as f64;
        weight += batch.len();
        correct += correct_pixels(&probs, labels.data());
        pixels += labels.len() as u64;
        steps += 1;
    }
    Ok(EpochStats {
        loss: loss_sum / weight as f64,
        accuracy: correct as f64 / pixels as f64,
        steps,
    })
}

/// Mean loss over `samples` in batches, without updating anything (the
/// batch-norm running statistics of `net` are left untouched).
pub fn dataset_loss<T: Scalar>(
    net: &QuickTumorNet<T>,
    samples: &[SliceSample],
    loss: &LossConfig,
    batch_size: usize,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("no slices to score".into()));
    }
    let mut scratch = net.clone();
    let (mut sum, mut n) = (0.0, 0);
    for chunk in samples.chunks(batch_size.max(1)) {
        let batch: Vec<&SliceSample> = chunk.iter().collect();
        let (x, labels) = make_batch::<T>(&batch)?;
        let (probs, _) = scratch.forward(&x, Mode::Train)?;
        let terms = loss_forward(&probs, &labels, loss)?;
        sum += terms.total * batch.len() as f64;
        n += batch.len();
    }
    Ok(sum / n as f64)
}

/// Infer-mode pixel accuracy and mean foreground Dice over `samples`.
pub fn validate<T: Scalar>(net: &QuickTumorNet<T>, samples: &[SliceSample]) -> Result<(f64, Option<f64>)> {
    if samples.is_empty() {
        return Err(Error::Empty("validation set has no slices".into()));
    }
    let classes = net.config().num_classes;
    let mut confusion = ConfusionMatrix::new(classes);
    let mut dice = vec![Vec::new(); classes];
    for s in samples {
        let (_, pred) = predict_slice(net, s)?;
        confusion.add(&pred, &s.mask)?;
        for (c, values) in dice.iter_mut().enumerate() {
            if let Some(d) = crate::metrics::dice_per_class(&pred, &s.mask, c as u8)? {
                values.push(d);
            }
        }
    }
    Ok((
        confusion.accuracy().unwrap_or(0.0),
        DiceReport::from_values(dice).foreground_mean,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best: PathBuf,
    pub last: PathBuf,
}

fn append_row(path: &Path, row: &str) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut f = OpenOptions::new().append(true).open(path).map_err(io)?;
    writeln!(f, "{row}").map_err(io)?;
    f.sync_data().map_err(io)
}

fn write_curve(path: &Path, rows: &[String]) -> Result<()> {
    let mut text = format!("{CURVE_HEADER}\n");
    for r in rows {
        text.push_str(r);
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

/// Trains for up to `cfg.max_epochs` epochs, validating after each one.
///
/// Under `cfg.checkpoint_dir` it maintains `curve.csv` (one row appended per
/// epoch), `last.qtnw` (weights, optimizer state and progress, enough to
/// resume) and `best.qtnw` (highest validation Dice). With `cfg.resume` set
/// and a `last.qtnw` present, training continues after its last epoch.
pub fn fit<T: Scalar>(
    net: &mut QuickTumorNet<T>,
    train: &[SliceSample],
    val: &[SliceSample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<FitOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training split has no slices".into()));
    }
    if val.is_empty() {
        return Err(Error::Empty("validation split has no slices".into()));
    }
    let dir = &cfg.checkpoint_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let curve = dir.join(CURVE_FILE);
    let best_path = dir.join(BEST_FILE);
    let last_path = dir.join(LAST_FILE);

    let mut state = AdamState::new();
    let mut records: Vec<EpochRecord> = Vec::new();
    let mut history: Vec<String> = Vec::new();
    let mut best: Option<(usize, (f64, f64))> = None;

    if cfg.resume && last_path.exists() {
        let ckpt: Checkpoint<T> = load_weights(&last_path)?;
        if ckpt.config != *net.config() {
            return Err(Error::Config(format!(
                "{} was trained with a different model configuration",
                last_path.display()
            )));
        }
        let progress = ckpt.progress.ok_or_else(|| {
            Error::Config(format!("{} has no training progress to resume", last_path.display()))
        })?;
        state = ckpt.optimizer.unwrap_or_default();
        *net = QuickTumorNet::from_parts(ckpt.config, ckpt.params, ckpt.seed)?;
        for row in &progress.history {
            records.push(EpochRecord::from_csv_row(row)?);
        }
        history = progress.history;
        best = progress
            .best_epoch
            .and_then(|e| records.iter().find(|r| r.epoch == e))
            .map(|r| (r.epoch, r.score()));
    }
    // the CSV is rebuilt from the checkpointed history so a crash between
    // appending a row and saving last.qtnw cannot leave a duplicate epoch
    write_curve(&curve, &history)?;

    let start_epoch = records.last().map_or(1, |r| r.epoch + 1);
    for epoch in start_epoch..=cfg.max_epochs {
        let clock = Instant::now();
        let stats = match train_epoch(net, &mut state, train, cfg, epoch) {
            Err(Error::Divergence { epoch, .. }) => {
                return Err(Error::Divergence {
                    epoch,
                    last_good: last_path.exists().then(|| last_path.clone()),
                })
            }
            other => other?,
        };
        let (val_acc, val_dice) = validate(net, val)?;
        let record = EpochRecord {
            epoch,
            train_loss: stats.loss,
            train_acc: stats.accuracy,
            val_acc,
            val_dice,
            seconds: if cfg.record_time { clock.elapsed().as_secs_f64() } else { 0.0 },
        };
        let row = record.to_csv_row();
        append_row(&curve, &row)?;
        history.push(row);

        let improved = best.is_none_or(|(_, score)| record.score() > score);
        if improved {
            best = Some((epoch, record.score()));
        }
        let progress = TrainProgress {
            epoch,
            best_score: best.map(|(_, s)| s.0),
            best_epoch: best.map(|(e, _)| e),
            history: history.clone(),
        };
        if improved {
            let ckpt = Checkpoint {
                config: *net.config(),
                seed: net.seed(),
                params: net.params().clone(),
                optimizer: None,
                progress: Some(progress.clone()),
            };
            save_weights(&ckpt, &best_path)?;
        }
        let ckpt = Checkpoint {
            config: *net.config(),
            seed: net.seed(),
            params: net.params().clone(),
            optimizer: Some(state.clone()),
            progress: Some(progress),
        };
        save_weights(&ckpt, &last_path)?;
        on_epoch(&record);
        records.push(record);
    }
    Ok(FitOutcome {
        best_epoch: best.map_or(0, |b| b.0),
        records,
        best: best_path,
        last: last_path,
    })
}
