use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::generator::{GeneratorConfig, StridePolicy};
use crate::packet::{PacketTemplate, Proto};
use crate::refstack::{B3Form, BugId, RefStackConfig};
use crate::harness::DEFAULT_STEP_BUDGET;
use crate::scenario::{all_builtin_scenarios, builtin_scenario, Scenario};

use super::CampaignError;

/// Where test cases are executed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TargetSpec {
    RefStack(RefStackConfig),
    /// An agent listening on a TCP address.
    Agent { address: String },
}

#[derive(Clone, Debug)]
pub struct CampaignConfig {
    pub protocols: BTreeSet<Proto>,
    pub generator: GeneratorConfig,
    pub scenarios: Vec<Scenario>,
    pub target: TargetSpec,
    pub workers: usize,
    pub deadline: Duration,
    pub output_dir: Option<PathBuf>,
    /// Stop once this many unique faults are known.
    pub fault_budget: Option<usize>,
    pub checkpoint_every: u64,
    pub resume: bool,
    pub pcap: bool,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        let generator = GeneratorConfig::default();
        CampaignConfig {
            protocols: generator.protocols.clone(),
            generator,
            scenarios: all_builtin_scenarios(),
            target: TargetSpec::RefStack(RefStackConfig::default()),
            workers: 1,
            deadline: Duration::from_secs(2),
            output_dir: None,
            fault_budget: None,
            checkpoint_every: 1000,
            resume: false,
            pcap: false,
        }
    }
}

impl CampaignConfig {
    pub fn validate(&self) -> Result<(), CampaignError> {
        let bad = |m: &str| Err(CampaignError::Config(m.to_string()));
        if self.workers == 0 {
            return bad("workers must be at least 1");
        }
        if self.deadline.is_zero() {
            return bad("deadline must be positive");
        }
        if self.templates().is_empty() {
            return bad("protocols must name at least one network and one transport protocol");
        }
        if self.scenarios.is_empty() {
            return bad("no scenarios selected");
        }
        if self.checkpoint_every == 0 {
            return bad("checkpoint interval must be positive");
        }
        for t in self.templates() {
            self.generator
                .validate(crate::generator::PlanTarget::entities(&t, &self.generator).len())
                .map_err(|e| CampaignError::Config(format!("{}: {e}", t.label())))?;
        }
        Ok(())
    }

    /// The network × transport templates the protocol set selects.
    pub fn templates(&self) -> Vec<PacketTemplate> {
        let mut out = Vec::new();
        for net in [Proto::Ipv4, Proto::Ipv6] {
            for tr in [Proto::Tcp, Proto::Udp] {
                if self.protocols.contains(&net) && self.protocols.contains(&tr) {
                    out.push(PacketTemplate::of(net, Some(tr)).expect("valid layer stack"));
                }
            }
        }
        out
    }

    pub fn scenarios_for(&self, transport: Proto) -> Vec<&Scenario> {
        self.scenarios.iter().filter(|s| s.protocol == transport).collect()
    }

    /// Reads a TOML config; relative paths resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self, CampaignError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CampaignError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    pub fn from_toml(text: &str, base: &Path) -> Result<Self, CampaignError> {
        let file: CampaignFile = toml::from_str(text).map_err(|e| CampaignError::Config(e.to_string()))?;
        file.resolve(base)
    }
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignFile {
    pub protocols: Option<Vec<Proto>>,
    pub workers: Option<usize>,
    pub deadline_ms: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub fault_budget: Option<usize>,
    pub checkpoint_every: Option<u64>,
    #[serde(default)]
    pub resume: bool,
    #[serde(default)]
    pub pcap: bool,
    #[serde(default)]
    pub generator: GeneratorSection,
    #[serde(default)]
    pub scenarios: ScenarioSection,
    #[serde(default)]
    pub target: TargetSection,
    #[serde(default)]
    pub refstack: RefStackSection,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSection {
    pub max_entities: Option<usize>,
    pub value_count: Option<u32>,
    pub stride: Option<u64>,
    pub include_truncation: Option<bool>,
    pub include_reserved: Option<bool>,
    #[serde(default)]
    pub overrides: BTreeMap<String, StridePolicy>,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    /// Builtin scenario ids; all builtins when absent.
    pub builtin: Option<Vec<String>>,
    /// Extra scenario files.
    #[serde(default)]
    pub files: Vec<PathBuf>,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSection {
    /// `refstack` (default) or `agent`.
    pub kind: Option<String>,
    pub address: Option<String>,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RefStackSection {
    #[serde(default)]
    pub bugs: Vec<String>,
    pub b3_form: Option<String>,
    pub step_budget: Option<u64>,
}

impl CampaignFile {
    pub fn resolve(self, base: &Path) -> Result<CampaignConfig, CampaignError> {
        let cfg_err = |m: String| CampaignError::Config(m);
        let mut c = CampaignConfig::default();
        if let Some(p) = self.protocols {
            c.protocols = p.into_iter().collect();
        }
        c.generator.protocols = c.protocols.clone();
        let g = self.generator;
        if let Some(n) = g.max_entities {
            c.generator.max_entities = n;
        }
        match (g.value_count, g.stride) {
            (Some(_), Some(_)) => return Err(cfg_err("set either generator.value_count or generator.stride".into())),
            (Some(k), None) => c.generator.stride_policy = StridePolicy::ValueCount(k),
            (None, Some(s)) => c.generator.stride_policy = StridePolicy::Stride(s),
            (None, None) => {}
        }
        if let Some(t) = g.include_truncation {
            c.generator.include_truncation = t;
        }
        if let Some(r) = g.include_reserved {
            c.generator.include_reserved = r;
        }
        c.generator.overrides = g.overrides;

        let mut scenarios = match self.scenarios.builtin {
            Some(ids) => ids.iter().map(|id| builtin_scenario(id)).collect::<Result<Vec<_>, _>>()
                .map_err(|e| cfg_err(e.to_string()))?,
            None => all_builtin_scenarios(),
        };
        for f in self.scenarios.files {
            let path = base.join(f);
            let text = std::fs::read_to_string(&path).map_err(|e| cfg_err(format!("{}: {e}", path.display())))?;
            scenarios.push(Scenario::parse(&text).map_err(|e| cfg_err(format!("{}: {e}", path.display())))?);
        }
        c.scenarios = scenarios;

        if let Some(w) = self.workers {
            c.workers = w;
        }
        if let Some(ms) = self.deadline_ms {
            c.deadline = Duration::from_millis(ms);
        }
        c.output_dir = self.output_dir.map(|d| base.join(d));
        c.fault_budget = self.fault_budget;
        if let Some(n) = self.checkpoint_every {
            c.checkpoint_every = n;
        }
        c.resume = self.resume;
        c.pcap = self.pcap;

        let bugs = self.refstack.bugs.iter().map(|b| b.parse::<BugId>()).collect::<Result<_, _>>().map_err(cfg_err)?;
        let b3_form = match self.refstack.b3_form {
            Some(f) => f.parse::<B3Form>().map_err(cfg_err)?,
            None => B3Form::default(),
        };
        c.target = match self.target.kind.as_deref().unwrap_or("refstack") {
            "refstack" => TargetSpec::RefStack(RefStackConfig {
                bugs,
                b3_form,
                deadline: c.deadline,
                step_budget: self.refstack.step_budget.unwrap_or(DEFAULT_STEP_BUDGET),
            }),
            "agent" => TargetSpec::Agent {
                address: self.target.address.ok_or_else(|| cfg_err("target.address is required for an agent".into()))?,
            },
            other => return Err(cfg_err(format!("unknown target kind {other:?}"))),
        };
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_file() {
        let text = r#"
            protocols = ["ipv4", "tcp"]
            workers = 3
            deadline_ms = 500
            output_dir = "out"
            fault_budget = 4
            [generator]
            max_entities = 1
            stride = 64
            include_truncation = false
            [generator.overrides]
            "tcp.window" = { value_count = 3 }
            [scenarios]
            builtin = ["tcp-listen", "tcp-established"]
            [refstack]
            bugs = ["B1", "MSS-DIV0"]
            b3_form = "two-option"
        "#;
        let c = CampaignConfig::from_toml(text, Path::new("/base")).unwrap();
        assert_eq!(c.templates().len(), 1);
        assert_eq!(c.workers, 3);
        assert_eq!(c.generator.stride_policy, StridePolicy::Stride(64));
        assert_eq!(c.generator.overrides["tcp.window"], StridePolicy::ValueCount(3));
        assert_eq!(c.scenarios.len(), 2);
        assert_eq!(c.output_dir, Some(PathBuf::from("/base/out")));
        let TargetSpec::RefStack(r) = &c.target else { panic!() };
        assert!(r.bugs.contains(BugId::B2) && r.bugs.len() == 2);
        assert_eq!(r.b3_form, B3Form::TwoOption);
        assert_eq!(r.deadline, Duration::from_millis(500));
    }

    #[test]
    fn defaults_and_errors() {
        let c = CampaignConfig::from_toml("", Path::new(".")).unwrap();
        assert_eq!(c.templates().len(), 4);
        assert_eq!(c.scenarios.len(), 8);
        assert!(CampaignConfig::from_toml("workers = 0", Path::new(".")).is_err());
        assert!(CampaignConfig::from_toml("deadline_ms = 0", Path::new(".")).is_err());
        assert!(CampaignConfig::from_toml("protocols = [\"ipv4\"]", Path::new(".")).is_err());
        assert!(CampaignConfig::from_toml("bogus = 1", Path::new(".")).is_err());
        assert!(CampaignConfig::from_toml("[refstack]\nbugs = [\"B9\"]", Path::new(".")).is_err());
        assert!(CampaignConfig::from_toml("[target]\nkind = \"agent\"", Path::new(".")).is_err());
    }
}
