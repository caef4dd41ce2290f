use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Training strategy: plain attention distillation or one of the three
/// prune-while-distilling variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "SAD")]
    Sad,
    #[serde(rename = "SP-SAD")]
    SpSad,
    #[serde(rename = "LTH-SAD")]
    LthSad,
    #[serde(rename = "SS-SAD")]
    SsSad,
}

impl Strategy {
    pub fn prunes(self) -> bool {
        self != Strategy::Sad
    }

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Sad => "SAD",
            Strategy::SpSad => "SP-SAD",
            Strategy::LthSad => "LTH-SAD",
            Strategy::SsSad => "SS-SAD",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('_', "-").as_str() {
            "SAD" => Ok(Strategy::Sad),
            "SP-SAD" => Ok(Strategy::SpSad),
            "LTH-SAD" => Ok(Strategy::LthSad),
            "SS-SAD" => Ok(Strategy::SsSad),
            _ => Err(Error::Config(format!("unknown strategy {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Criterion {
    #[default]
    FilterL1,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scope {
    #[default]
    PerLayer,
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    /// Fraction of each layer's original channels removed per round.
    pub rate: f64,
    /// Epochs between pruning events.
    pub every: usize,
    pub strategy: Strategy,
    #[serde(default)]
    pub criterion: Criterion,
    #[serde(default)]
    pub scope: Scope,
}

impl PruneConfig {
    pub fn new(rate: f64, every: usize, strategy: Strategy) -> Self {
        PruneConfig {
            rate,
            every,
            strategy,
            criterion: Criterion::FilterL1,
            scope: Scope::PerLayer,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rate > 0.0 && self.rate < 1.0) {
            return Err(Error::Config(format!("prune rate must lie in (0, 1), got {}", self.rate)));
        }
        if self.every == 0 {
            return Err(Error::Config("prune_every must be at least 1".into()));
        }
        Ok(())
    }

    /// Channels removed from a layer of `original` channels in one round.
    pub fn per_round(&self, original: usize) -> usize {
        removal_count(self.rate, original)
    }
}

/// `floor(rate · n)`, tolerant of binary rounding just below an integer.
pub(crate) fn removal_count(rate: f64, n: usize) -> usize {
    (rate * n as f64 + 1e-9).floor() as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategy_names_round_trip() {
        for s in [Strategy::Sad, Strategy::SpSad, Strategy::LthSad, Strategy::SsSad] {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        assert!("lth_sad".parse::<Strategy>().is_ok());
        assert!("magic".parse::<Strategy>().is_err());
    }

    #[test]
    fn rates_outside_unit_interval_rejected() {
        assert!(PruneConfig::new(0.0, 1, Strategy::LthSad).validate().is_err());
        assert!(PruneConfig::new(1.0, 1, Strategy::LthSad).validate().is_err());
        assert!(PruneConfig::new(0.1, 0, Strategy::LthSad).validate().is_err());
        assert!(PruneConfig::new(0.1, 20, Strategy::SpSad).validate().is_ok());
    }

    #[test]
    fn removal_count_floors() {
        assert_eq!(removal_count(0.30, 64), 19);
        assert_eq!(removal_count(0.29, 100), 29);
        assert_eq!(removal_count(0.05, 16), 0);
    }
}
