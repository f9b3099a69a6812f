use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn stackprobe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stackprobe")).args(args).output().expect("spawn stackprobe")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("campaign.toml");
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

const SMALL: &str = r#"
protocols = ["ipv4", "tcp"]
output_dir = "out"

[generator]
max_entities = 1

[scenarios]
builtin = ["tcp-listen", "tcp-established"]
"#;

#[test]
fn lists() {
    let bugs = stackprobe(&["bugs", "list"]);
    assert_eq!(bugs.status.code(), Some(0));
    for id in ["B1", "B2", "B3", "B4", "B5", "B6", "B7", "B8"] {
        assert!(stdout(&bugs).contains(id));
    }
    let scenarios = stackprobe(&["scenarios", "list"]);
    assert_eq!(scenarios.status.code(), Some(0));
    assert_eq!(stdout(&scenarios).lines().count(), 8);
    assert!(stdout(&scenarios).contains("FIN-WAIT-2"));
}

#[test]
fn clean_run_exits_zero_and_count_agrees() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{SMALL}\n[refstack]\nbugs = []\n"));
    let run = stackprobe(&["campaign", "run", "--config", &cfg, "--json"]);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    let text = stdout(&run);
    let cases: u64 = text
        .lines()
        .find_map(|l| l.trim().strip_prefix("\"test_cases\": "))
        .map(|v| v.trim_end_matches(',').parse().unwrap())
        .unwrap();

    let count = stackprobe(&["campaign", "count", "--config", &cfg, "--exact"]);
    assert_eq!(count.status.code(), Some(0));
    assert!(stdout(&count).contains(&format!("total test cases {cases}")), "{}", stdout(&count));
    assert!(dir.path().join("out/report.json").exists());
}

#[test]
fn faults_exit_one_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{SMALL}\n[refstack]\nbugs = [\"B2\"]\n"));
    let run = stackprobe(&["campaign", "run", "--config", &cfg, "--pcap"]);
    assert_eq!(run.status.code(), Some(1));
    assert!(stdout(&run).contains("div_by_zero@tcp_mss_option"));
    assert!(dir.path().join("out/faults.pcap").exists());

    let script = dir.path().join("out/reproducers/div_by_zero-tcp_mss_option.repro");
    let replay = stackprobe(&["replay", script.to_str().unwrap()]);
    assert_eq!(replay.status.code(), Some(1));
    assert!(stdout(&replay).contains("reproduced yes"));

    let text = std::fs::read_to_string(&script).unwrap();
    let (head, frame) = text.split_once("[frame]\n").unwrap();
    let tampered = format!("{head}[frame]\n{}", frame.replacen("45 00", "46 00", 1));
    let bad = dir.path().join("tampered.repro");
    std::fs::write(&bad, tampered).unwrap();
    let replay = stackprobe(&["replay", bad.to_str().unwrap()]);
    assert_eq!(replay.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&replay.stderr).contains("mismatch"));
}

#[test]
fn bad_config_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "workers = 0\n");
    let run = stackprobe(&["campaign", "run", "--config", &cfg]);
    assert_eq!(run.status.code(), Some(2));
    let cfg = write_config(dir.path(), "bogus_key = 1\n");
    assert_eq!(stackprobe(&["campaign", "count", "--config", &cfg]).status.code(), Some(2));
    assert_eq!(stackprobe(&["replay", "/nonexistent.repro"]).status.code(), Some(2));
}

#[test]
fn campaign_against_agent_process() {
    let mut agent = Command::new(env!("CARGO_BIN_EXE_stackprobe"))
        .args(["agent", "--listen", "127.0.0.1:0", "--bugs", "B1,B5", "--connections", "1"])
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(agent.stderr.take().unwrap()).read_line(&mut line).unwrap();
    let address = line.trim().rsplit(' ').next().unwrap().to_string();

    let dir = tempfile::tempdir().unwrap();
    let body = SMALL.replace("output_dir = \"out\"", "workers = 1");
    let cfg = write_config(dir.path(), &format!("{body}\n[target]\nkind = \"agent\"\naddress = \"{address}\"\n"));
    let run = stackprobe(&["campaign", "run", "--config", &cfg]);
    if run.status.code() != Some(1) {
        agent.kill().ok();
    }
    assert_eq!(run.status.code(), Some(1), "{}", String::from_utf8_lossy(&run.stderr));
    let out = stdout(&run);
    assert!(out.contains("oob_read@tcp_parse_options"));
    assert!(out.contains("integer_wrap_trap@ipv4_input"));
    assert!(agent.wait().unwrap().success());
}
