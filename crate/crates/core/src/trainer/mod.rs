//! Adam, the epoch loop and the learning-curve log.

pub mod adam;
mod train;

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::tensor::Precision;

pub use adam::{adam_step, AdamState};
pub use train::{dataset_loss, fit, train_epoch, validate, EpochStats, FitOutcome, BEST_FILE, CURVE_FILE, LAST_FILE};

pub const CURVE_HEADER: &str = "epoch,train_loss,train_acc,val_acc,val_dice,seconds";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub shuffle_seed: u64,
    pub precision: Precision,
    pub checkpoint_dir: PathBuf,
    /// Rescale the global gradient norm down to this value; off by default.
    pub clip_grad_norm: Option<f64>,
    /// Log wall-clock seconds per epoch. Disable to make the curve CSV and
    /// checkpoints byte-reproducible.
    pub record_time: bool,
    /// Continue from `last.qtnw` in `checkpoint_dir` if present.
    pub resume: bool,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            max_epochs: 200,
            batch_size: 8,
            shuffle_seed: 0,
            precision: Precision::F32,
            checkpoint_dir: PathBuf::from("."),
            clip_grad_norm: None,
            record_time: true,
            resume: false,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            problems.push(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            problems.push("batch_size must be >= 1".to_string());
        }
        if self.max_epochs == 0 {
            problems.push("max_epochs must be >= 1".to_string());
        }
        if let Some(c) = self.clip_grad_norm {
            if !(c > 0.0) {
                problems.push(format!("clip_grad_norm must be > 0, got {c}"));
            }
        }
        if let Err(e) = self.loss.validate() {
            problems.push(e.to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

/// One learning-curve row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    /// `None` when no validation slice contains a tumour class.
    pub val_dice: Option<f64>,
    pub seconds: f64,
}

impl EpochRecord {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.epoch,
            self.train_loss,
            self.train_acc,
            self.val_acc,
            self.val_dice.map(|d| d.to_string()).unwrap_or_default(),
            self.seconds
        )
    }

    pub fn from_csv_row(row: &str) -> Result<Self> {
        let bad = || Error::Config(format!("malformed learning-curve row {row:?}"));
        let f: Vec<&str> = row.trim_end().split(',').collect();
        if f.len() != 6 {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        Ok(EpochRecord {
            epoch: f[0].parse().map_err(|_| bad())?,
            train_loss: num(f[1])?,
            train_acc: num(f[2])?,
            val_acc: num(f[3])?,
            val_dice: if f[4].is_empty() { None } else { Some(num(f[4])?) },
            seconds: num(f[5])?,
        })
    }

    /// Checkpoint selection key: validation Dice first, pixel accuracy as the
    /// tie-breaker. A missing Dice ranks below any measured one.
    pub fn score(&self) -> (f64, f64) {
        (self.val_dice.unwrap_or(-1.0), self.val_acc)
    }
}

impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch {:>4}  loss {:.5}  train_acc {:.4}  val_acc {:.4}  val_dice {}  {:.1}s",
            self.epoch,
            self.train_loss,
            self.train_acc,
            self.val_acc,
            self.val_dice.map(|d| format!("{d:.4}")).unwrap_or_else(|| "-".into()),
            self.seconds
        )
    }
}
