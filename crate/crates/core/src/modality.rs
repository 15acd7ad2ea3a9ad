use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Sensing domain of an image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Visible,
    Thermal,
}

impl Modality {
    pub const ALL: [Modality; 2] = [Modality::Visible, Modality::Thermal];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Visible => "visible",
            Modality::Thermal => "thermal",
        }
    }

    /// Compact tag used by binary files.
    pub fn tag(self) -> u8 {
        match self {
            Modality::Visible => 0,
            Modality::Thermal => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Modality::Visible),
            1 => Some(Modality::Thermal),
            _ => None,
        }
    }

    pub fn other(self) -> Self {
        match self {
            Modality::Visible => Modality::Thermal,
            Modality::Thermal => Modality::Visible,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "visible" | "v" => Ok(Modality::Visible),
            "thermal" | "t" => Ok(Modality::Thermal),
            other => Err(Error::invalid(format!("unknown modality tag `{other}`"))),
        }
    }
}
