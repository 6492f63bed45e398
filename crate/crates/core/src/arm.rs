use serde::{Deserialize, Serialize};
use std::fmt;

/// One of the two treatments. `Control` is arm 0, `Treatment` is arm 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Arm {
    Control,
    Treatment,
}

impl Arm {
    pub const BOTH: [Arm; 2] = [Arm::Control, Arm::Treatment];

    #[inline]
    pub fn index(self) -> usize {
        match self {
            Arm::Control => 0,
            Arm::Treatment => 1,
        }
    }

    #[inline]
    pub fn from_index(i: usize) -> Option<Arm> {
        match i {
            0 => Some(Arm::Control),
            1 => Some(Arm::Treatment),
            _ => None,
        }
    }

    #[inline]
    pub fn other(self) -> Arm {
        match self {
            Arm::Control => Arm::Treatment,
            Arm::Treatment => Arm::Control,
        }
    }

    /// Fair coin: `true` maps to the treatment arm.
    #[inline]
    pub fn from_coin(heads: bool) -> Arm {
        if heads {
            Arm::Treatment
        } else {
            Arm::Control
        }
    }
}

impl From<Arm> for u8 {
    fn from(a: Arm) -> u8 {
        a.index() as u8
    }
}

impl TryFrom<u8> for Arm {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, Self::Error> {
        Arm::from_index(v as usize).ok_or_else(|| format!("arm must be 0 or 1, got {v}"))
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index())
    }
}
