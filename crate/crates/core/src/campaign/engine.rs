use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, BTreeSet};
use std::hash::{Hash, Hasher};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use crossbeam_channel::bounded;
use serde::{Deserialize, Serialize};

use crate::generator::generate;
use crate::harness::agent::AgentClient;
use crate::harness::{DeliveryResult, FaultSignature, HarnessError, Target};
use crate::mutation::MutationPlan;
use crate::packet::hexdump::hexdump;
use crate::packet::pcap::PcapWriter;
use crate::packet::PacketTemplate;
use crate::refstack::{B3Form, BugSet, RefStack};
use crate::scenario::{bind_mutant, run_prefix, Scenario, ScenarioError};

use super::config::{CampaignConfig, TargetSpec};
use super::report::{CampaignReport, Dedup, FaultRecord, ScenarioStats, TemplateStats, TestCaseId, Totals, UniqueFault};
use super::reproducer::Reproducer;
use super::CampaignError;

const MAX_WARNINGS: usize = 100;

/// Opens one private target instance for a worker.
pub fn open_target(spec: &TargetSpec) -> Result<Box<dyn Target>, CampaignError> {
    match spec {
        TargetSpec::RefStack(cfg) => Ok(Box::new(RefStack::new(cfg.clone()))),
        TargetSpec::Agent { address } => {
            let stream = TcpStream::connect(address)
                .map_err(|e| CampaignError::Harness(HarnessError::Unreachable(format!("{address}: {e}"))))?;
            stream.set_nodelay(true).ok();
            Ok(Box::new(AgentClient::new(stream)))
        }
    }
}

fn target_bugs(spec: &TargetSpec) -> (BugSet, B3Form) {
    match spec {
        TargetSpec::RefStack(c) => (c.bugs.clone(), c.b3_form),
        TargetSpec::Agent { .. } => (BugSet::none(), B3Form::default()),
    }
}

/// What one test case did.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CaseOutcome {
    Processed,
    Dropped(String),
    Fault(crate::harness::FaultReport, Vec<u8>),
    PrefixMismatch(String),
}

/// reset → prefix → bind → deliver.
pub fn run_case<T: Target + ?Sized>(
    target: &mut T,
    scenario: &Scenario,
    template: &PacketTemplate,
    plan: &MutationPlan,
) -> Result<CaseOutcome, CampaignError> {
    target.reset()?;
    let ctx = match run_prefix(scenario, target, template.network()) {
        Ok(c) => c,
        Err(ScenarioError::Harness(e)) => return Err(e.into()),
        Err(e) => return Ok(CaseOutcome::PrefixMismatch(e.to_string())),
    };
    let frame = match bind_mutant(&ctx, template, plan) {
        Ok(f) => f,
        Err(e) => return Ok(CaseOutcome::PrefixMismatch(format!("binding failed: {e}"))),
    };
    let result = target.deliver(frame.bytes())?;
    target.end_test()?;
    Ok(match result {
        DeliveryResult::Processed => CaseOutcome::Processed,
        DeliveryResult::Dropped(r) => CaseOutcome::Dropped(r),
        other => CaseOutcome::Fault(other.fault().expect("fault outcome"), frame.into_bytes()),
    })
}

struct WorkItem {
    seq: u64,
    template: usize,
    plan: MutationPlan,
}

#[derive(Default)]
struct ItemResult {
    n: usize,
    scenarios: Vec<(String, CaseOutcome)>,
    faults: Vec<FaultRecord>,
}

/// Results folded in work-item order, so the committed state only ever
/// covers a contiguous prefix of the plan stream.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
struct Committed {
    units_done: u64,
    totals: Totals,
    per_scenario: BTreeMap<String, ScenarioStats>,
    dedup: Dedup,
    warnings: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    fingerprint: u64,
    state: Committed,
}

struct Aggregator {
    pending: BTreeMap<u64, ItemResult>,
    state: Committed,
    since_checkpoint: u64,
    checkpoint_every: u64,
    checkpoint_path: Option<PathBuf>,
    fingerprint: u64,
    fault_budget: Option<usize>,
}

impl Aggregator {
    fn submit(&mut self, seq: u64, result: ItemResult) -> Result<bool, CampaignError> {
        self.pending.insert(seq, result);
        while let Some(r) = self.pending.remove(&self.state.units_done) {
            self.commit(r);
        }
        if self.since_checkpoint >= self.checkpoint_every {
            self.since_checkpoint = 0;
            self.write_checkpoint()?;
        }
        Ok(self.fault_budget.is_some_and(|b| self.state.dedup.len() >= b))
    }

    fn commit(&mut self, r: ItemResult) {
        let s = &mut self.state;
        s.units_done += 1;
        for (scenario, outcome) in r.scenarios {
            s.totals.test_cases += 1;
            *s.totals.per_n.entry(r.n).or_default() += 1;
            self.since_checkpoint += 1;
            let st = s.per_scenario.entry(scenario).or_default();
            st.cases += 1;
            match outcome {
                CaseOutcome::Processed => st.processed += 1,
                CaseOutcome::Dropped(_) => st.dropped += 1,
                CaseOutcome::Fault(..) => st.faults += 1,
                CaseOutcome::PrefixMismatch(m) => {
                    st.prefix_mismatches += 1;
                    if s.warnings.len() < MAX_WARNINGS {
                        s.warnings.push(m);
                    }
                }
            }
        }
        for f in r.faults {
            s.totals.faults += 1;
            s.dedup.add(f);
        }
        if s.totals.test_cases % 10_000 < 8 {
            log::info!("{} test cases, {} unique faults", s.totals.test_cases, s.dedup.len());
        }
    }

    fn write_checkpoint(&self) -> Result<(), CampaignError> {
        let Some(path) = &self.checkpoint_path else { return Ok(()) };
        let cp = Checkpoint { fingerprint: self.fingerprint, state: self.state.clone() };
        let json = serde_json::to_vec(&cp).map_err(|e| CampaignError::Output(e.to_string()))?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, json).map_err(|e| CampaignError::Output(format!("{}: {e}", tmp.display())))?;
        std::fs::rename(&tmp, path).map_err(|e| CampaignError::Output(format!("{}: {e}", path.display())))
    }
}

fn fingerprint(config: &CampaignConfig) -> u64 {
    let mut h = DefaultHasher::new();
    format!("{:?}", (&config.protocols, &config.generator, &config.scenarios, &config.target)).hash(&mut h);
    h.finish()
}

fn load_checkpoint(path: &Path, fingerprint: u64) -> Option<Committed> {
    let bytes = std::fs::read(path).ok()?;
    let cp: Checkpoint = serde_json::from_slice(&bytes).ok()?;
    if cp.fingerprint != fingerprint {
        log::warn!("checkpoint {} belongs to a different configuration; starting over", path.display());
        return None;
    }
    Some(cp.state)
}

/// Runs every plan of every selected template under every scenario of the
/// template's transport protocol.
pub fn run_campaign(config: &CampaignConfig) -> Result<CampaignReport, CampaignError> {
    config.validate()?;
    let started = Instant::now();
    let templates = config.templates();
    let scenario_sets: Vec<Vec<(usize, &Scenario)>> = templates
        .iter()
        .map(|t| {
            config
                .scenarios
                .iter()
                .enumerate()
                .filter(|(_, s)| Some(s.protocol) == t.transport())
                .collect()
        })
        .collect();

    let checkpoint_path = match &config.output_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| CampaignError::Output(format!("{}: {e}", dir.display())))?;
            Some(dir.join("checkpoint.json"))
        }
        None => None,
    };
    let fp = fingerprint(config);
    let resumed = match (&checkpoint_path, config.resume) {
        (Some(p), true) => load_checkpoint(p, fp),
        _ => None,
    };
    let skip = resumed.as_ref().map_or(0, |s| s.units_done);
    if skip > 0 {
        log::info!("resuming after {skip} completed plans");
    }
    let aggregator = Mutex::new(Aggregator {
        pending: BTreeMap::new(),
        state: resumed.unwrap_or_default(),
        since_checkpoint: 0,
        checkpoint_every: config.checkpoint_every,
        checkpoint_path: checkpoint_path.clone(),
        fingerprint: fp,
        fault_budget: config.fault_budget,
    });

    // Open every target up front so an unreachable endpoint fails fast.
    let targets = (0..config.workers).map(|_| open_target(&config.target)).collect::<Result<Vec<_>, _>>()?;

    let stop = AtomicBool::new(false);
    let first_error: Mutex<Option<CampaignError>> = Mutex::new(None);
    let (tx, rx) = bounded::<WorkItem>(4 * config.workers);
    let mut template_stats = Vec::new();
    let mut generator_warnings = Vec::new();

    std::thread::scope(|scope| {
        for mut target in targets {
            let rx = rx.clone();
            let (aggregator, stop, first_error) = (&aggregator, &stop, &first_error);
            let (templates, scenario_sets) = (&templates, &scenario_sets);
            scope.spawn(move || {
                for item in rx.iter() {
                    if stop.load(Ordering::Relaxed) {
                        continue;
                    }
                    let template = &templates[item.template];
                    let mut result = ItemResult { n: item.plan.instructions.len(), ..Default::default() };
                    for &(si, scenario) in &scenario_sets[item.template] {
                        let id = TestCaseId::new(item.template, item.plan.plan_id, si);
                        let outcome = match run_case(&mut target, scenario, template, &item.plan) {
                            Ok(o) => o,
                            Err(e) => {
                                first_error.lock().expect("error slot").get_or_insert(e);
                                stop.store(true, Ordering::Relaxed);
                                return;
                            }
                        };
                        if let CaseOutcome::Fault(report, frame) = &outcome {
                            let mut report = report.clone();
                            report.test_case_id = Some(id.0);
                            result.faults.push(FaultRecord {
                                report,
                                test_case: id,
                                template: template.label(),
                                scenario_id: scenario.id.clone(),
                                plan: item.plan.to_text(),
                                frame_hex: hexdump(frame),
                            });
                        }
                        result.scenarios.push((scenario.id.clone(), outcome));
                    }
                    match aggregator.lock().expect("aggregator").submit(item.seq, result) {
                        Ok(true) => stop.store(true, Ordering::Relaxed),
                        Ok(false) => {}
                        Err(e) => {
                            first_error.lock().expect("error slot").get_or_insert(e);
                            stop.store(true, Ordering::Relaxed);
                        }
                    }
                }
            });
        }
        drop(rx);

        let mut seq = 0u64;
        'templates: for (ti, template) in templates.iter().enumerate() {
            let mut stats = TemplateStats {
                template: template.label(),
                scenarios: scenario_sets[ti].len() as u64,
                ..Default::default()
            };
            if scenario_sets[ti].is_empty() {
                generator_warnings.push(format!("{}: no scenarios for this transport", template.label()));
                template_stats.push(stats);
                continue;
            }
            let mut stream = match generate(template, &config.generator) {
                Ok(s) => s,
                Err(e) => {
                    first_error.lock().expect("error slot").get_or_insert(e.into());
                    stop.store(true, Ordering::Relaxed);
                    break;
                }
            };
            for plan in stream.by_ref() {
                if stop.load(Ordering::Relaxed) {
                    let s = stream.stats();
                    (stats.plans_considered, stats.plans_emitted, stats.plans_suppressed) = (s.considered, s.emitted, s.suppressed);
                    template_stats.push(stats);
                    break 'templates;
                }
                let plan = match plan {
                    Ok(p) => p,
                    Err(e) => {
                        generator_warnings.push(format!("{}: {e}", template.label()));
                        continue;
                    }
                };
                if seq >= skip && tx.send(WorkItem { seq, template: ti, plan }).is_err() {
                    break 'templates;
                }
                seq += 1;
            }
            let s = stream.stats();
            (stats.plans_considered, stats.plans_emitted, stats.plans_suppressed) = (s.considered, s.emitted, s.suppressed);
            template_stats.push(stats);
        }
        drop(tx);
    });

    if let Some(e) = first_error.into_inner().expect("error slot") {
        return Err(e);
    }
    let agg = aggregator.into_inner().expect("aggregator");
    let stopped_early = stop.load(Ordering::Relaxed);
    let mut state = agg.state;
    state.totals.wall_time_ms = started.elapsed().as_millis() as u64;
    state.totals.stopped_early = stopped_early;
    state.warnings.extend(generator_warnings);
    if let Some(p) = &checkpoint_path {
        let cp = Checkpoint { fingerprint: fp, state: state.clone() };
        let json = serde_json::to_vec(&cp).map_err(|e| CampaignError::Output(e.to_string()))?;
        std::fs::write(p, json).map_err(|e| CampaignError::Output(format!("{}: {e}", p.display())))?;
    }

    let mut report = CampaignReport {
        totals: state.totals,
        templates: template_stats,
        unique_faults: Vec::new(),
        per_scenario: state.per_scenario,
        warnings: state.warnings,
    };
    let (bugs, b3_form) = target_bugs(&config.target);
    for (sig, entry) in state.dedup.into_entries() {
        let rep = entry.representative;
        let reproducer = match &config.output_dir {
            Some(dir) => Some(write_reproducer(dir, &sig, &rep, config, &bugs, b3_form)?),
            None => None,
        };
        report.unique_faults.push(UniqueFault {
            signature: sig.to_string(),
            kind: sig.kind.to_string(),
            site: sig.site.clone(),
            first_test_case: rep.test_case,
            first_test_case_label: rep.test_case.to_string(),
            count: entry.count,
            template: rep.template,
            scenario: rep.scenario_id,
            plan: rep.plan,
            reproducer,
        });
    }
    if let Some(dir) = &config.output_dir {
        write_outputs(dir, &report, config.pcap)?;
    }
    Ok(report)
}

fn write_reproducer(
    dir: &Path,
    sig: &FaultSignature,
    rep: &FaultRecord,
    config: &CampaignConfig,
    bugs: &BugSet,
    b3_form: B3Form,
) -> Result<PathBuf, CampaignError> {
    let out = |e: String| CampaignError::Output(e);
    let scenario = config
        .scenarios
        .iter()
        .find(|s| s.id == rep.scenario_id)
        .ok_or_else(|| out(format!("scenario {} vanished", rep.scenario_id)))?;
    let repro = Reproducer {
        signature: Some(sig.clone()),
        test_case: Some(rep.test_case.to_string()),
        template: super::reproducer::parse_template_label(&rep.template).map_err(out)?,
        bugs: bugs.clone(),
        b3_form,
        scenario: scenario.clone(),
        plan: MutationPlan::from_text(&rep.plan)?,
        frame: crate::packet::hexdump::parse_hex(&rep.frame_hex).map_err(out)?,
    };
    let repro_dir = dir.join("reproducers");
    std::fs::create_dir_all(&repro_dir).map_err(|e| out(format!("{}: {e}", repro_dir.display())))?;
    let path = repro_dir.join(format!("{}-{}.repro", sig.kind, sig.site));
    std::fs::write(&path, repro.to_text()).map_err(|e| out(format!("{}: {e}", path.display())))?;
    Ok(path)
}

fn write_outputs(dir: &Path, report: &CampaignReport, pcap: bool) -> Result<(), CampaignError> {
    let out = |p: &Path, e: String| CampaignError::Output(format!("{}: {e}", p.display()));
    let json_path = dir.join("report.json");
    let json = serde_json::to_string_pretty(report).map_err(|e| out(&json_path, e.to_string()))?;
    std::fs::write(&json_path, json).map_err(|e| out(&json_path, e.to_string()))?;
    let text_path = dir.join("report.txt");
    std::fs::write(&text_path, report.to_text()).map_err(|e| out(&text_path, e.to_string()))?;
    if pcap {
        let pcap_path = dir.join("faults.pcap");
        let file = std::fs::File::create(&pcap_path).map_err(|e| out(&pcap_path, e.to_string()))?;
        let mut w = PcapWriter::new(std::io::BufWriter::new(file)).map_err(|e| out(&pcap_path, e.to_string()))?;
        for (i, f) in report.unique_faults.iter().enumerate() {
            let Some(path) = &f.reproducer else { continue };
            let repro = Reproducer::load(path)?;
            w.write_frame(i as u32, 0, &repro.frame).map_err(|e| out(&pcap_path, e.to_string()))?;
        }
        std::io::Write::flush(&mut w.into_inner()).map_err(|e| out(&pcap_path, e.to_string()))?;
    }
    Ok(())
}

/// Signature set of a report, for comparisons.
pub fn signature_set(report: &CampaignReport) -> BTreeSet<String> {
    report.unique_faults.iter().map(|f| f.signature.clone()).collect()
}
