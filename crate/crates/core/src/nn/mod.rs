//! Dense and recurrent kernels with hand-written gradients.

pub mod checkpoint;
pub mod dense;
pub mod gradcheck;
pub mod loss;
pub mod lstm;
pub mod param;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use dense::{Dense, Embedding};
pub use gradcheck::{grad_check, GradCheckReport, Module};
pub use loss::{softmax, softmax_cross_entropy};
pub use lstm::{bidirectional, lstm_cell_forward, lstm_sequence_forward, LstmCache, LstmCellParams, LstmLayer};
pub use param::{adam_step, Adam, AdamConfig, Parameter};
pub use tensor::Tensor;

/// Early-stopping bookkeeping on a metric where lower is better.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    epochs_since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping { patience, best: f64::INFINITY, best_epoch: 0, epochs_since_best: 0 }
    }

    /// Records `metric` for `epoch`; returns true when it is a new best.
    pub fn observe(&mut self, epoch: usize, metric: f64) -> bool {
        if metric < self.best {
            self.best = metric;
            self.best_epoch = epoch;
            self.epochs_since_best = 0;
            true
        } else {
            self.epochs_since_best += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.epochs_since_best >= self.patience
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

#[cfg(test)]
mod tests {
    use super::EarlyStopping;

    #[test]
    fn stops_patience_epochs_after_best() {
        let mut es = EarlyStopping::new(20);
        let mut stopped_at = None;
        for epoch in 1..=400 {
            es.observe(epoch, epoch as f64); // strictly worsening
            if es.should_stop() {
                stopped_at = Some(epoch);
                break;
            }
        }
        assert_eq!(es.best_epoch(), 1);
        assert_eq!(stopped_at, Some(21));
    }

    #[test]
    fn improvement_resets_counter() {
        let mut es = EarlyStopping::new(2);
        es.observe(1, 1.0);
        es.observe(2, 2.0);
        assert!(es.observe(3, 0.5));
        es.observe(4, 0.9);
        assert!(!es.should_stop());
        es.observe(5, 0.9);
        assert!(es.should_stop());
        assert_eq!(es.best_epoch(), 3);
    }
}
