//! Self-contained fault reproducers.
//!
//! ```text
//! # stackprobe reproducer
//! signature div_by_zero@tcp_mss_option     # or `none`
//! test-case t0-p57-s0
//! template ipv4/tcp
//! bugs B2                                  # refstack bugs; empty for other targets
//! b3-form single-option
//! [scenario]
//! ...scenario steps...
//! [mutation]
//! insert tcp mss 0x0000
//! [frame]
//! 02 00 00 00 00 01 ...
//! ```

use std::path::Path;

use crate::harness::{DeliveryResult, FaultSignature, Target};
use crate::mutation::MutationPlan;
use crate::packet::hexdump::{hexdump, parse_hex};
use crate::packet::{PacketTemplate, Proto};
use crate::refstack::{B3Form, BugId, BugSet, RefStackConfig};
use crate::scenario::{bind_mutant, run_prefix, Scenario};

use super::CampaignError;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Reproducer {
    pub signature: Option<FaultSignature>,
    pub test_case: Option<String>,
    pub template: PacketTemplate,
    pub bugs: BugSet,
    pub b3_form: B3Form,
    pub scenario: Scenario,
    pub plan: MutationPlan,
    pub frame: Vec<u8>,
}

/// Outcome of re-running a reproducer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReplayOutcome {
    pub expected: Option<FaultSignature>,
    pub observed: Option<FaultSignature>,
    pub result: DeliveryResult,
}

impl ReplayOutcome {
    pub fn reproduced(&self) -> bool {
        self.expected == self.observed
    }
}

pub fn parse_template_label(label: &str) -> Result<PacketTemplate, String> {
    let (net, tr) = label.split_once('/').ok_or_else(|| format!("bad template {label:?}"))?;
    let net: Proto = net.parse().map_err(|_| format!("bad network {net:?}"))?;
    let tr: Proto = tr.parse().map_err(|_| format!("bad transport {tr:?}"))?;
    PacketTemplate::of(net, Some(tr)).map_err(|e| e.to_string())
}

impl Reproducer {
    pub fn to_text(&self) -> String {
        let mut out = String::from("# stackprobe reproducer\n");
        match &self.signature {
            Some(s) => out.push_str(&format!("signature {s}\n")),
            None => out.push_str("signature none\n"),
        }
        if let Some(tc) = &self.test_case {
            out.push_str(&format!("test-case {tc}\n"));
        }
        out.push_str(&format!("template {}\n", self.template.label()));
        let bugs: Vec<&str> = self.bugs.iter().map(|b| b.code()).collect();
        out.push_str(format!("bugs {}", bugs.join(",")).trim_end());
        out.push('\n');
        let form = match self.b3_form {
            B3Form::SingleOption => "single-option",
            B3Form::TwoOption => "two-option",
        };
        out.push_str(&format!("b3-form {form}\n"));
        out.push_str("[scenario]\n");
        out.push_str(&self.scenario.to_text());
        out.push_str("[mutation]\n");
        let plan = self.plan.to_text();
        let plan = plan.trim_end();
        if !plan.is_empty() {
            out.push_str(plan);
            out.push('\n');
        }
        out.push_str("[frame]\n");
        out.push_str(&hexdump(&self.frame));
        out.push('\n');
        out
    }

    pub fn parse(text: &str) -> Result<Self, CampaignError> {
        let bad = |m: String| CampaignError::Reproducer(m);
        let mut section = "";
        let (mut header, mut scenario, mut mutation, mut frame) = (Vec::new(), String::new(), Vec::new(), String::new());
        for line in text.lines() {
            let t = line.trim();
            if let Some(name) = t.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
                section = match name {
                    "scenario" | "mutation" | "frame" => name,
                    other => return Err(bad(format!("unknown section [{other}]"))),
                };
                continue;
            }
            match section {
                "" if !t.is_empty() && !t.starts_with('#') => header.push(t.to_string()),
                "scenario" => {
                    scenario.push_str(line);
                    scenario.push('\n');
                }
                "mutation" if !t.is_empty() => mutation.push(t.to_string()),
                "frame" => {
                    frame.push_str(t);
                    frame.push(' ');
                }
                _ => {}
            }
        }
        let mut signature = None;
        let mut test_case = None;
        let mut template = None;
        let mut bugs = BugSet::none();
        let mut b3_form = B3Form::default();
        for h in header {
            let (key, value) = h.split_once(char::is_whitespace).map_or((h.as_str(), ""), |(k, v)| (k, v.trim()));
            match key {
                "signature" if value == "none" => signature = None,
                "signature" => signature = Some(value.parse().map_err(bad)?),
                "test-case" => test_case = Some(value.to_string()),
                "template" => template = Some(parse_template_label(value).map_err(bad)?),
                "bugs" => {
                    bugs = value
                        .split(',')
                        .filter(|s| !s.trim().is_empty())
                        .map(|s| s.trim().parse::<BugId>())
                        .collect::<Result<_, _>>()
                        .map_err(bad)?
                }
                "b3-form" => b3_form = value.parse().map_err(bad)?,
                other => return Err(bad(format!("unknown header {other:?}"))),
            }
        }
        Ok(Reproducer {
            signature,
            test_case,
            template: template.ok_or_else(|| bad("missing template".into()))?,
            bugs,
            b3_form,
            scenario: Scenario::parse(&scenario).map_err(|e| bad(e.to_string()))?,
            plan: MutationPlan::from_text(&mutation.join("\n"))?,
            frame: parse_hex(&frame).map_err(bad)?,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CampaignError> {
        let text = std::fs::read_to_string(path).map_err(|e| CampaignError::Reproducer(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Refstack configuration the reproducer was recorded against.
    pub fn refstack_config(&self) -> RefStackConfig {
        RefStackConfig { bugs: self.bugs.clone(), b3_form: self.b3_form, ..Default::default() }
    }

    /// Re-runs the scenario and mutant on `target`. Fails if the rebuilt
    /// frame differs from the recorded one.
    pub fn replay<T: Target + ?Sized>(&self, target: &mut T) -> Result<ReplayOutcome, CampaignError> {
        target.reset()?;
        let ctx = run_prefix(&self.scenario, target, self.template.network())?;
        let frame = bind_mutant(&ctx, &self.template, &self.plan)?;
        if frame.bytes() != self.frame.as_slice() {
            return Err(CampaignError::FrameMismatch {
                expected: hexdump(frame.bytes()),
                recorded: hexdump(&self.frame),
            });
        }
        let result = target.deliver(frame.bytes())?;
        target.end_test()?;
        Ok(ReplayOutcome {
            expected: self.signature.clone(),
            observed: result.fault().map(|f| f.signature()),
            result,
        })
    }
}
