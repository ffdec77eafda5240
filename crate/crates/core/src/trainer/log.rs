use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    pub wall_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub wall_ms: u64,
}

/// Per-step and per-epoch training history plus the config it ran with.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub config: serde_json::Value,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

pub const STEP_LOG_FILE: &str = "train_log.csv";
pub const EPOCH_LOG_FILE: &str = "epochs.csv";

impl TrainLog {
    pub fn new(config: serde_json::Value) -> Self {
        Self {
            config,
            ..Self::default()
        }
    }

    pub(crate) fn push_step(&mut self, record: StepRecord) -> Result<()> {
        if let Some(last) = self.steps.last() {
            if record.step <= last.step {
                return Err(Error::contract(format!(
                    "step {} after step {}",
                    record.step, last.step
                )));
            }
        }
        self.steps.push(record);
        Ok(())
    }

    pub fn initial_loss(&self) -> Option<f64> {
        self.steps.first().map(|s| s.loss)
    }

    pub fn final_train_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_loss)
    }

    pub fn steps_csv(&self) -> String {
        let mut out = String::from("step,epoch,loss,lr,wall_ms\n");
        for s in &self.steps {
            let _ = writeln!(out, "{},{},{},{},{}", s.step, s.epoch, s.loss, s.lr, s.wall_ms);
        }
        out
    }

    pub fn epochs_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,val_accuracy,wall_ms\n");
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                e.epoch, e.train_loss, e.val_loss, e.val_accuracy, e.wall_ms
            );
        }
        out
    }

    /// Equality ignoring wall-clock columns.
    pub fn same_trajectory(&self, other: &TrainLog) -> bool {
        let steps = self.steps.len() == other.steps.len()
            && self.steps.iter().zip(&other.steps).all(|(a, b)| {
                (a.step, a.epoch, a.loss.to_bits(), a.lr.to_bits())
                    == (b.step, b.epoch, b.loss.to_bits(), b.lr.to_bits())
            });
        let epochs = self.epochs.len() == other.epochs.len()
            && self.epochs.iter().zip(&other.epochs).all(|(a, b)| {
                (
                    a.epoch,
                    a.train_loss.to_bits(),
                    a.val_loss.to_bits(),
                    a.val_accuracy.to_bits(),
                ) == (
                    b.epoch,
                    b.train_loss.to_bits(),
                    b.val_loss.to_bits(),
                    b.val_accuracy.to_bits(),
                )
            });
        steps && epochs && self.config == other.config
    }

    /// Writes both CSV files into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        for (name, body) in [(STEP_LOG_FILE, self.steps_csv()), (EPOCH_LOG_FILE, self.epochs_csv())] {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}
