use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    OobRead,
    OobWrite,
    DivByZero,
    IntegerWrapTrap,
    Hang,
    Crash,
}

impl FaultKind {
    pub const ALL: [FaultKind; 6] = [
        FaultKind::OobRead,
        FaultKind::OobWrite,
        FaultKind::DivByZero,
        FaultKind::IntegerWrapTrap,
        FaultKind::Hang,
        FaultKind::Crash,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FaultKind::OobRead => "oob_read",
            FaultKind::OobWrite => "oob_write",
            FaultKind::DivByZero => "div_by_zero",
            FaultKind::IntegerWrapTrap => "integer_wrap_trap",
            FaultKind::Hang => "hang",
            FaultKind::Crash => "crash",
        }
    }
}

impl fmt::Display for FaultKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FaultKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FaultKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown fault kind {s:?}"))
    }
}

/// A fault caught by the oracle. `site` is a function-level label that stays
/// stable between runs of the same build.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultReport {
    pub kind: FaultKind,
    pub site: String,
    pub detail: String,
    pub test_case_id: Option<u64>,
}

impl FaultReport {
    pub fn new(kind: FaultKind, site: impl Into<String>, detail: impl Into<String>) -> Self {
        FaultReport { kind, site: site.into(), detail: detail.into(), test_case_id: None }
    }

    pub fn signature(&self) -> FaultSignature {
        FaultSignature { kind: self.kind, site: self.site.clone() }
    }
}

impl fmt::Display for FaultReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at {} ({})", self.kind, self.site, self.detail)
    }
}

/// Dedup key: two faults are the same defect iff kind and site agree.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct FaultSignature {
    pub kind: FaultKind,
    pub site: String,
}

impl fmt::Display for FaultSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.kind, self.site)
    }
}

impl FromStr for FaultSignature {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, site) = s.split_once('@').ok_or_else(|| format!("expected kind@site, got {s:?}"))?;
        Ok(FaultSignature { kind: kind.parse()?, site: site.to_string() })
    }
}

impl From<FaultSignature> for String {
    fn from(s: FaultSignature) -> String {
        s.to_string()
    }
}

impl TryFrom<String> for FaultSignature {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

/// Division that traps instead of panicking.
pub fn checked_div(a: u32, b: u32, site: &str) -> Result<u32, FaultReport> {
    a.checked_div(b)
        .ok_or_else(|| FaultReport::new(FaultKind::DivByZero, site, format!("{a} / {b}")))
}

/// Subtraction that traps on unsigned wrap.
pub fn checked_sub(a: usize, b: usize, site: &str) -> Result<usize, FaultReport> {
    a.checked_sub(b)
        .ok_or_else(|| FaultReport::new(FaultKind::IntegerWrapTrap, site, format!("{a} - {b}")))
}
