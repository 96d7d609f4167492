//! Validation-driven learning-rate decay and early stopping.
//!
//! Both count consecutive epochs without an improvement, where improving
//! means beating the best loss so far by more than [`IMPROVEMENT_THRESHOLD`].
//! The counter firing at exactly `patience` is the trigger.

use serde::{Deserialize, Serialize};

pub const IMPROVEMENT_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Tracker {
    best: f64,
    bad_epochs: usize,
}

impl Tracker {
    fn new() -> Self {
        Self { best: f64::INFINITY, bad_epochs: 0 }
    }

    /// Returns true when the loss improved.
    fn observe(&mut self, loss: f64) -> bool {
        if loss < self.best - IMPROVEMENT_THRESHOLD {
            self.best = loss;
            self.bad_epochs = 0;
            true
        } else {
            self.bad_epochs += 1;
            false
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    tracker: Tracker,
}

impl PlateauScheduler {
    pub fn new(lr: f64, factor: f64, patience: usize) -> Self {
        assert!(factor > 0.0 && factor < 1.0, "factor must be in (0, 1)");
        assert!(patience >= 1, "patience must be >= 1");
        Self { lr, factor, patience, tracker: Tracker::new() }
    }

    /// Feed one epoch's validation loss; returns the learning rate for the next epoch.
    pub fn step(&mut self, val_loss: f64) -> f64 {
        self.tracker.observe(val_loss);
        if self.tracker.bad_epochs >= self.patience {
            self.lr *= self.factor;
            self.tracker.bad_epochs = 0;
        }
        self.lr
    }

    pub fn bad_epochs(&self) -> usize {
        self.tracker.bad_epochs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopDecision {
    Continue,
    Stop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    pub patience: usize,
    tracker: Tracker,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        assert!(patience >= 1, "patience must be >= 1");
        Self { patience, tracker: Tracker::new() }
    }

    pub fn step(&mut self, val_loss: f64) -> StopDecision {
        self.tracker.observe(val_loss);
        if self.tracker.bad_epochs >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    pub fn best(&self) -> f64 {
        self.tracker.best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn improvement_resets_plateau_counter() {
        let mut s = PlateauScheduler::new(1e-4, 0.5, 5);
        s.step(1.0);
        for _ in 0..3 {
            s.step(1.0);
        }
        assert_eq!(s.bad_epochs(), 3);
        assert_eq!(s.step(0.5), 1e-4);
        assert_eq!(s.bad_epochs(), 0);
    }

    #[test]
    fn sub_threshold_decrease_is_not_improvement() {
        let mut s = EarlyStopping::new(2);
        s.step(1.0);
        assert_eq!(s.step(1.0 - 5e-7), StopDecision::Continue);
        assert_eq!(s.step(1.0 - 9e-7), StopDecision::Stop);
    }
}
