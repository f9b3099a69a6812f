use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use stackprobe_core::campaign::{open_target, run_campaign, CampaignConfig, CampaignError, Reproducer, TargetSpec};
use stackprobe_core::generator::{count_plans, generate};
use stackprobe_core::harness::agent::serve_listener;
use stackprobe_core::harness::DeliveryResult;
use stackprobe_core::refstack::{seeded_bug_catalog, B3Form, BugId, BugSet, RefStack, RefStackConfig};
use stackprobe_core::scenario::all_builtin_scenarios;

/// Systematic packet-validation testing for TCP/IP stacks.
#[derive(Parser)]
#[command(name = "stackprobe", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run or size a campaign.
    #[command(subcommand)]
    Campaign(CampaignCmd),
    /// Re-run a reproducer script and compare the fault signature.
    Replay(ReplayArgs),
    /// Built-in state scenarios.
    #[command(subcommand)]
    Scenarios(ListCmd),
    /// Seeded bugs of the reference stack.
    #[command(subcommand)]
    Bugs(ListCmd),
    /// Serve the reference stack over the agent protocol.
    Agent(AgentArgs),
}

#[derive(Subcommand)]
enum CampaignCmd {
    /// Execute every plan under every scenario.
    Run(RunArgs),
    /// Print plan and test-case counts without executing anything.
    Count(CountArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `workers` from the config file.
    #[arg(long)]
    workers: Option<usize>,
    /// Overrides `output_dir` from the config file.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Also write fault frames to faults.pcap.
    #[arg(long)]
    pcap: bool,
    /// Continue from the checkpoint in the output directory.
    #[arg(long)]
    resume: bool,
    /// Print the report as JSON instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct CountArgs {
    #[arg(long)]
    config: PathBuf,
    /// Materialize the streams to report suppressed duplicates too.
    #[arg(long)]
    exact: bool,
}

#[derive(Args)]
struct ReplayArgs {
    script: PathBuf,
    /// Replay against an agent instead of the in-process reference stack.
    #[arg(long)]
    agent: Option<String>,
}

#[derive(Subcommand)]
enum ListCmd {
    List,
}

#[derive(Args)]
struct AgentArgs {
    #[arg(long, default_value = "127.0.0.1:7070")]
    listen: String,
    /// Comma-separated bug ids or names, or `all`.
    #[arg(long, default_value = "")]
    bugs: String,
    #[arg(long, default_value = "single-option")]
    b3_form: String,
    /// Exit after serving this many connections.
    #[arg(long)]
    connections: Option<usize>,
}

/// Outcome classes mapped to the process exit code.
enum Status {
    Clean,
    Faults,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(Status::Clean) => ExitCode::from(0),
        Ok(Status::Faults) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cmd: Command) -> Result<Status> {
    match cmd {
        Command::Campaign(CampaignCmd::Run(args)) => campaign_run(args),
        Command::Campaign(CampaignCmd::Count(args)) => campaign_count(args),
        Command::Replay(args) => replay(args),
        Command::Scenarios(ListCmd::List) => {
            for s in all_builtin_scenarios() {
                let state = s.injection_state.map_or("stateless".to_string(), |st| st.to_string());
                println!("{:<18} {:<4} {:<12} {} steps", s.id, s.protocol, state, s.steps.len());
            }
            Ok(Status::Clean)
        }
        Command::Bugs(ListCmd::List) => {
            for b in seeded_bug_catalog() {
                let state = b.required_state.map_or("any".to_string(), |st| st.to_string());
                println!("{} {:<20} {}@{}  state={}", b.id, b.name, b.expected_kind, b.site, state);
                println!("   missing check: {}", b.removed_check);
                println!("   modeled on: {}", b.modeled_on);
            }
            Ok(Status::Clean)
        }
        Command::Agent(args) => agent(args),
    }
}

fn load(path: &Path) -> Result<CampaignConfig> {
    CampaignConfig::load(path).with_context(|| format!("loading {}", path.display()))
}

fn campaign_run(args: RunArgs) -> Result<Status> {
    let mut config = load(&args.config)?;
    if let Some(w) = args.workers {
        config.workers = w;
    }
    if let Some(dir) = args.output {
        config.output_dir = Some(dir);
    }
    config.pcap |= args.pcap;
    config.resume |= args.resume;
    if config.pcap && config.output_dir.is_none() {
        bail!("--pcap needs an output directory");
    }
    let report = run_campaign(&config)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{}", report.to_text());
    }
    Ok(if report.unique_faults.is_empty() { Status::Clean } else { Status::Faults })
}

fn campaign_count(args: CountArgs) -> Result<Status> {
    let config = load(&args.config)?;
    let mut total_cases = 0u128;
    for t in config.templates() {
        let scenarios = t.transport().map_or(0, |tr| config.scenarios_for(tr).len()) as u128;
        let plans = count_plans(&t, &config.generator)?;
        if args.exact {
            let mut stream = generate(&t, &config.generator)?;
            let emitted = stream.by_ref().count() as u128;
            let stats = stream.stats();
            println!(
                "{:<10} plans {:>10}  emitted {:>10}  suppressed {:>8}  scenarios {}  test cases {}",
                t.label(),
                plans,
                emitted,
                stats.suppressed,
                scenarios,
                emitted * scenarios
            );
            total_cases += emitted * scenarios;
        } else {
            println!("{:<10} plans {:>10}  scenarios {}  test cases <= {}", t.label(), plans, scenarios, plans * scenarios);
            total_cases += plans * scenarios;
        }
    }
    let bound = if args.exact { "" } else { "<= " };
    println!("total test cases {bound}{total_cases}");
    Ok(Status::Clean)
}

fn replay(args: ReplayArgs) -> Result<Status> {
    let repro = Reproducer::load(&args.script)?;
    let mut target = match &args.agent {
        Some(address) => open_target(&TargetSpec::Agent { address: address.clone() })?,
        None => Box::new(RefStack::new(repro.refstack_config())),
    };
    let outcome = match repro.replay(&mut *target) {
        Err(e @ CampaignError::FrameMismatch { .. }) => bail!("frame/plan mismatch: {e}"),
        other => other?,
    };
    let show = |s: &Option<stackprobe_core::harness::FaultSignature>| s.as_ref().map_or("none".to_string(), |s| s.to_string());
    println!("expected  {}", show(&outcome.expected));
    println!("observed  {}", show(&outcome.observed));
    match &outcome.result {
        DeliveryResult::Fault(f) => println!("detail    {}", f.detail),
        DeliveryResult::Dropped(r) => println!("dropped   {r}"),
        _ => {}
    }
    println!("reproduced {}", if outcome.reproduced() { "yes" } else { "no" });
    Ok(if outcome.observed.is_some() { Status::Faults } else { Status::Clean })
}

fn parse_bugs(text: &str) -> Result<BugSet> {
    if text.eq_ignore_ascii_case("all") {
        return Ok(BugSet::all());
    }
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<BugId>().map_err(anyhow::Error::msg))
        .collect()
}

fn agent(args: AgentArgs) -> Result<Status> {
    let config = RefStackConfig {
        bugs: parse_bugs(&args.bugs)?,
        b3_form: args.b3_form.parse::<B3Form>().map_err(anyhow::Error::msg)?,
        ..Default::default()
    };
    let listener = TcpListener::bind(&args.listen).with_context(|| format!("binding {}", args.listen))?;
    eprintln!("agent listening on {}", listener.local_addr()?);
    serve_listener(listener, move || RefStack::new(config.clone()), args.connections)?;
    Ok(Status::Clean)
}
