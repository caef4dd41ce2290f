//! Piecewise-constant learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Base rate multiplied by `gamma` at each milestone crossed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base: f64,
    pub gamma: f64,
    pub milestones: Vec<usize>,
}

impl LrSchedule {
    pub fn new(base: f64, gamma: f64, milestones: Vec<usize>) -> Result<Self> {
        let s = LrSchedule { base, gamma, milestones };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base > 0.0 && self.base.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.base)));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("lr decay factor must be positive, got {}", self.gamma)));
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "lr milestones must be strictly increasing, got {:?}",
                self.milestones
            )));
        }
        Ok(())
    }

    /// Rate for the epoch that follows `completed` finished epochs.
    pub fn rate(&self, completed: usize) -> f64 {
        let crossed = self.milestones.iter().filter(|&&m| m <= completed).count();
        self.base * self.gamma.powi(crossed as i32)
    }
}

/// Learning rate after `epoch` completed epochs.
pub fn lr_schedule(epoch: usize, schedule: &LrSchedule) -> Result<f64> {
    schedule.validate()?;
    Ok(schedule.rate(epoch))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_decays_by_hand() {
        let s = LrSchedule::new(0.1, 0.1, vec![2, 4]).unwrap();
        assert!((lr_schedule(5, &s).unwrap() - 0.001).abs() < 1e-15);
        assert_eq!(s.rate(0), 0.1);
        assert_eq!(s.rate(1), 0.1);
        assert!((s.rate(2) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn lth_column_milestones() {
        let s = LrSchedule::new(0.05, 0.1, vec![170, 340, 510]).unwrap();
        assert_eq!(s.rate(169), 0.05);
        assert!((s.rate(170) - 0.005).abs() < 1e-15);
        assert!((s.rate(1199) - 0.00005).abs() < 1e-15);
    }

    #[test]
    fn unsorted_milestones_rejected() {
        assert!(matches!(LrSchedule::new(0.1, 0.1, vec![4, 2]), Err(Error::Config(_))));
        let bad = LrSchedule {
            base: 0.1,
            gamma: 0.1,
            milestones: vec![3, 3],
        };
        assert!(lr_schedule(0, &bad).is_err());
    }

    #[test]
    fn no_milestones_is_constant() {
        let s = LrSchedule::new(0.0005, 0.1, vec![]).unwrap();
        assert_eq!(s.rate(10_000), 0.0005);
    }
}
