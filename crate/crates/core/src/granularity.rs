use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Unit of prediction. The declaration order is also the fusion tie-break
/// order: on equal scores the character head wins, then BPE, then WordPiece.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Granularity {
    #[serde(rename = "char")]
    Char,
    #[serde(rename = "bpe")]
    Bpe,
    #[serde(rename = "wp")]
    WordPiece,
}

impl Granularity {
    pub const ALL: [Granularity; 3] = [Granularity::Char, Granularity::Bpe, Granularity::WordPiece];

    pub fn as_str(self) -> &'static str {
        match self {
            Granularity::Char => "char",
            Granularity::Bpe => "bpe",
            Granularity::WordPiece => "wp",
        }
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "char" => Ok(Granularity::Char),
            "bpe" => Ok(Granularity::Bpe),
            "wp" | "wordpiece" => Ok(Granularity::WordPiece),
            other => Err(Error::Config(format!(
                "unknown granularity {other:?} (expected char, bpe or wp)"
            ))),
        }
    }
}
