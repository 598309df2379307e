//! Sensor and trajectory perturbations.

pub mod depth;
pub mod filters;
pub mod motion;
pub mod rgb;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Severity level in `1..=5`, indexing a row of the parameter tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct SeverityLevel(u8);

impl SeverityLevel {
    pub const ALL: [SeverityLevel; 5] = [
        SeverityLevel(1),
        SeverityLevel(2),
        SeverityLevel(3),
        SeverityLevel(4),
        SeverityLevel(5),
    ];

    pub fn new(level: u8) -> Result<Self> {
        if (1..=5).contains(&level) {
            Ok(SeverityLevel(level))
        } else {
            Err(Error::invalid(format!("severity level {level} outside 1..=5")))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub(crate) fn index(self) -> usize {
        self.0 as usize - 1
    }
}

impl TryFrom<u8> for SeverityLevel {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        SeverityLevel::new(v)
    }
}

impl From<SeverityLevel> for u8 {
    fn from(l: SeverityLevel) -> u8 {
        l.0
    }
}

/// Constant severity over a sequence, or frame-to-frame variation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbMode {
    #[default]
    Static,
    Dynamic,
}
