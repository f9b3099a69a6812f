use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::harness::{FaultReport, FaultSignature};

/// Packs template index, plan id and scenario index so that numeric order
/// matches discovery order of a single-worker run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TestCaseId(pub u64);

impl TestCaseId {
    pub fn new(template: usize, plan: u64, scenario: usize) -> Self {
        debug_assert!(template < 256 && scenario < 256 && plan < 1 << 48);
        TestCaseId((template as u64) << 56 | plan << 8 | scenario as u64)
    }

    pub fn template(self) -> usize {
        (self.0 >> 56) as usize
    }

    pub fn plan(self) -> u64 {
        (self.0 >> 8) & ((1 << 48) - 1)
    }

    pub fn scenario(self) -> usize {
        (self.0 & 0xff) as usize
    }
}

impl fmt::Display for TestCaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}-p{}-s{}", self.template(), self.plan(), self.scenario())
    }
}

/// A fault together with what produced it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultRecord {
    pub report: FaultReport,
    pub test_case: TestCaseId,
    pub template: String,
    pub scenario_id: String,
    pub plan: String,
    pub frame_hex: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DedupEntry {
    /// The record with the smallest test case id.
    pub representative: FaultRecord,
    pub count: u64,
}

/// Incremental dedup by fault signature.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dedup {
    entries: BTreeMap<FaultSignature, DedupEntry>,
}

impl Dedup {
    pub fn add(&mut self, record: FaultRecord) {
        self.add_counted(record, 1);
    }

    fn add_counted(&mut self, record: FaultRecord, count: u64) {
        let sig = record.report.signature();
        match self.entries.get_mut(&sig) {
            Some(e) => {
                e.count += count;
                if record.test_case < e.representative.test_case {
                    e.representative = record;
                }
            }
            None => {
                self.entries.insert(sig, DedupEntry { representative: record, count });
            }
        }
    }

    pub fn merge(&mut self, other: Dedup) {
        for (_, e) in other.entries {
            self.add_counted(e.representative, e.count);
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &BTreeMap<FaultSignature, DedupEntry> {
        &self.entries
    }

    pub fn into_entries(self) -> BTreeMap<FaultSignature, DedupEntry> {
        self.entries
    }
}

/// Groups fault records by signature.
pub fn dedupe(records: impl IntoIterator<Item = FaultRecord>) -> BTreeMap<FaultSignature, DedupEntry> {
    let mut d = Dedup::default();
    for r in records {
        d.add(r);
    }
    d.into_entries()
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioStats {
    pub cases: u64,
    pub processed: u64,
    pub dropped: u64,
    pub faults: u64,
    pub prefix_mismatches: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateStats {
    pub template: String,
    pub plans_considered: u64,
    pub plans_emitted: u64,
    pub plans_suppressed: u64,
    pub scenarios: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Totals {
    pub test_cases: u64,
    /// Test cases keyed by the number of instructions in the plan.
    pub per_n: BTreeMap<usize, u64>,
    pub faults: u64,
    pub wall_time_ms: u64,
    pub stopped_early: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UniqueFault {
    pub signature: String,
    pub kind: String,
    pub site: String,
    pub first_test_case: TestCaseId,
    pub first_test_case_label: String,
    pub count: u64,
    pub template: String,
    pub scenario: String,
    pub plan: String,
    pub reproducer: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub totals: Totals,
    pub templates: Vec<TemplateStats>,
    pub unique_faults: Vec<UniqueFault>,
    pub per_scenario: BTreeMap<String, ScenarioStats>,
    pub warnings: Vec<String>,
}

impl CampaignReport {
    pub fn signatures(&self) -> Vec<String> {
        self.unique_faults.iter().map(|f| f.signature.clone()).collect()
    }

    pub fn to_text(&self) -> String {
        let t = &self.totals;
        let mut out = String::new();
        out.push_str(&format!(
            "test cases: {}  faults: {}  unique: {}  wall time: {:.2}s{}\n",
            t.test_cases,
            t.faults,
            self.unique_faults.len(),
            t.wall_time_ms as f64 / 1000.0,
            if t.stopped_early { "  (stopped at fault budget)" } else { "" }
        ));
        for (n, c) in &t.per_n {
            out.push_str(&format!("  N={n}: {c} cases\n"));
        }
        out.push_str("templates:\n");
        for s in &self.templates {
            out.push_str(&format!(
                "  {:<9} plans {:>7} (suppressed {:>5}) x {} scenarios\n",
                s.template, s.plans_emitted, s.plans_suppressed, s.scenarios
            ));
        }
        out.push_str("scenarios:\n");
        for (id, s) in &self.per_scenario {
            out.push_str(&format!(
                "  {:<16} cases {:>7}  processed {:>7}  dropped {:>7}  faults {:>6}  prefix mismatches {}\n",
                id, s.cases, s.processed, s.dropped, s.faults, s.prefix_mismatches
            ));
        }
        if self.unique_faults.is_empty() {
            out.push_str("no faults\n");
        } else {
            out.push_str("unique faults:\n");
            for f in &self.unique_faults {
                out.push_str(&format!(
                    "  {:<32} x{:<6} first {} [{} {}] {}\n",
                    f.signature,
                    f.count,
                    f.first_test_case_label,
                    f.template,
                    f.scenario,
                    f.plan.trim_end().replace('\n', "; ")
                ));
                if let Some(p) = &f.reproducer {
                    out.push_str(&format!("    reproducer: {}\n", p.display()));
                }
            }
        }
        for w in &self.warnings {
            out.push_str(&format!("warning: {w}\n"));
        }
        out
    }
}
