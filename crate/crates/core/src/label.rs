use std::fmt;

use serde::{Deserialize, Serialize};

/// Ground truth or predicted class. Contaminated is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Clean = 0,
    Contaminated = 1,
}

impl Label {
    pub fn as_f64(self) -> f64 {
        self as u8 as f64
    }

    pub fn from_bit(bit: u8) -> Option<Self> {
        match bit {
            0 => Some(Label::Clean),
            1 => Some(Label::Contaminated),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Clean => "clean",
            Label::Contaminated => "contaminated",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
