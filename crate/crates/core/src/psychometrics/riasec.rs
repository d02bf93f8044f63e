use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Holland occupational types, each with a representative-occupation identity prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Riasec {
    Realistic,
    Investigative,
    Artistic,
    Social,
    Enterprising,
    Conventional,
}

impl Riasec {
    pub const ALL: [Riasec; 6] = [
        Riasec::Realistic,
        Riasec::Investigative,
        Riasec::Artistic,
        Riasec::Social,
        Riasec::Enterprising,
        Riasec::Conventional,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Riasec::Realistic => "realistic",
            Riasec::Investigative => "investigative",
            Riasec::Artistic => "artistic",
            Riasec::Social => "social",
            Riasec::Enterprising => "enterprising",
            Riasec::Conventional => "conventional",
        }
    }

    pub fn occupation(self) -> &'static str {
        match self {
            Riasec::Realistic => "carpenter",
            Riasec::Investigative => "research scientist",
            Riasec::Artistic => "artist",
            Riasec::Social => "teacher",
            Riasec::Enterprising => "sales manager",
            Riasec::Conventional => "accountant",
        }
    }

    pub fn identity_prompt(self) -> &'static str {
        match self {
            Riasec::Realistic => "You are a carpenter who takes pride in building sturdy, well-made furniture and timber frames.",
            Riasec::Investigative => {
                "You are a research scientist and want to discover how the natural world works through careful experiments."
            }
            Riasec::Artistic => "You are an artist and want to create original works that express your feelings and ideas.",
            Riasec::Social => "You are a teacher and want to help every student learn and grow.",
            Riasec::Enterprising => {
                "You are a sales manager and want to lead your team to win new customers and grow the business."
            }
            Riasec::Conventional => "You are an accountant and want to keep every record accurate, orderly and complete.",
        }
    }
}

impl fmt::Display for Riasec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Riasec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Riasec::ALL
            .into_iter()
            .find(|r| r.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown RIASEC type '{s}'"))
    }
}
