use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::harness::FaultKind;

use super::TcpState;

/// Identifier of a seeded validation bug.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BugId {
    B1,
    B2,
    B3,
    B4,
    B5,
    B6,
    B7,
    B8,
}

impl BugId {
    pub const ALL: [BugId; 8] = [BugId::B1, BugId::B2, BugId::B3, BugId::B4, BugId::B5, BugId::B6, BugId::B7, BugId::B8];

    pub fn code(self) -> &'static str {
        match self {
            BugId::B1 => "B1",
            BugId::B2 => "B2",
            BugId::B3 => "B3",
            BugId::B4 => "B4",
            BugId::B5 => "B5",
            BugId::B6 => "B6",
            BugId::B7 => "B7",
            BugId::B8 => "B8",
        }
    }

    pub fn info(self) -> &'static SeededBug {
        &CATALOG[self as usize]
    }
}

impl fmt::Display for BugId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for BugId {
    type Err = String;

    /// Accepts the code (`B3`) or the name (`OPTLEN-OOB`), any case.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BugId::ALL
            .into_iter()
            .find(|b| b.code().eq_ignore_ascii_case(s) || b.info().name.eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown bug {s:?}"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BugPattern {
    MissingLengthFieldValidation,
    MissingPacketSizeValidation,
    MissingHeaderValueValidation,
    MissingIntegerWrapValidation,
    InfiniteLoop,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeededBug {
    pub id: BugId,
    pub name: &'static str,
    pub pattern: BugPattern,
    pub site: &'static str,
    /// `None` when the faulting path is reachable in any state.
    pub required_state: Option<TcpState>,
    pub expected_kind: FaultKind,
    /// The published defect class this bug imitates.
    pub modeled_on: &'static str,
    pub removed_check: &'static str,
}

static CATALOG: [SeededBug; 8] = [
    SeededBug {
        id: BugId::B1,
        name: "DOFF-OOB",
        pattern: BugPattern::MissingLengthFieldValidation,
        site: "tcp_parse_options",
        required_state: None,
        expected_kind: FaultKind::OobRead,
        modeled_on: "FreeRTOS+TCP option parsing trusting the TCP data offset",
        removed_check: "data_offset * 4 <= segment length",
    },
    SeededBug {
        id: BugId::B2,
        name: "MSS-DIV0",
        pattern: BugPattern::MissingHeaderValueValidation,
        site: "tcp_mss_option",
        required_state: Some(TcpState::Listen),
        expected_kind: FaultKind::DivByZero,
        modeled_on: "FreeRTOS+TCP and uIP division by a zero MSS option",
        removed_check: "mss != 0",
    },
    SeededBug {
        id: BugId::B3,
        name: "OPTLEN-OOB",
        pattern: BugPattern::MissingLengthFieldValidation,
        site: "tcp_option_value",
        required_state: None,
        expected_kind: FaultKind::OobRead,
        modeled_on: "lwIP and uIP option walkers trusting the option length byte",
        removed_check: "option end <= options region end",
    },
    SeededBug {
        id: BugId::B4,
        name: "TRUNC-TCP-OOB",
        pattern: BugPattern::MissingPacketSizeValidation,
        site: "tcp_input",
        required_state: None,
        expected_kind: FaultKind::OobRead,
        modeled_on: "FreeRTOS+TCP reading a fixed TCP header from a truncated segment",
        removed_check: "segment length >= 20",
    },
    SeededBug {
        id: BugId::B5,
        name: "LEN-UNDERFLOW",
        pattern: BugPattern::MissingIntegerWrapValidation,
        site: "ipv4_input",
        required_state: None,
        expected_kind: FaultKind::IntegerWrapTrap,
        modeled_on: "FreeRTOS+TCP payload length underflow from the IPv4 total length",
        removed_check: "total_length >= ihl * 4",
    },
    SeededBug {
        id: BugId::B6,
        name: "IP6EXT-OOB",
        pattern: BugPattern::MissingLengthFieldValidation,
        site: "ipv6_ext_headers",
        required_state: None,
        expected_kind: FaultKind::OobRead,
        modeled_on: "IPv6 extension header length trusted past the payload",
        removed_check: "extension header end <= payload end",
    },
    SeededBug {
        id: BugId::B7,
        name: "OPT-INFLOOP",
        pattern: BugPattern::InfiniteLoop,
        site: "tcp_parse_options",
        required_state: None,
        expected_kind: FaultKind::Hang,
        modeled_on: "uIP option walker with no progress on a zero option length",
        removed_check: "option length >= 2",
    },
    SeededBug {
        id: BugId::B8,
        name: "STATEFUL-FLAGS-OOB",
        pattern: BugPattern::MissingPacketSizeValidation,
        site: "tcp_fast_path",
        required_state: Some(TcpState::Established),
        expected_kind: FaultKind::OobRead,
        modeled_on: "Zephyr established-state flag check on a truncated segment",
        removed_check: "segment length >= 20 before the flags peek",
    },
];

pub fn seeded_bug_catalog() -> &'static [SeededBug] {
    &CATALOG
}

/// Where the option-length bug applies.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum B3Form {
    /// Every option's length is trusted.
    #[default]
    SingleOption,
    /// Only the second and later length-bearing options are trusted, so two
    /// options are needed to reach the fault.
    TwoOption,
}

impl FromStr for B3Form {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "single-option" | "single" => Ok(B3Form::SingleOption),
            "two-option" | "two" => Ok(B3Form::TwoOption),
            _ => Err(format!("unknown B3 form {s:?}")),
        }
    }
}

/// Enabled bugs.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BugSet(BTreeSet<BugId>);

impl BugSet {
    pub fn none() -> Self {
        BugSet::default()
    }

    pub fn all() -> Self {
        BugId::ALL.into_iter().collect()
    }

    pub fn contains(&self, id: BugId) -> bool {
        self.0.contains(&id)
    }

    pub fn insert(&mut self, id: BugId) {
        self.0.insert(id);
    }

    pub fn iter(&self) -> impl Iterator<Item = BugId> + '_ {
        self.0.iter().copied()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }
}

impl FromIterator<BugId> for BugSet {
    fn from_iter<I: IntoIterator<Item = BugId>>(iter: I) -> Self {
        BugSet(iter.into_iter().collect())
    }
}
