use std::fs;
use std::path::Path;
use std::process::{Command, Output};

/// Small problems so each invocation takes well under a second.
const SMALL: &[&str] = &[
    "--override",
    "mm.i_star=1",
    "--override",
    "mm.horizon=5",
    "--override",
    "hft.i_star=1",
    "--override",
    "hft.horizon=5",
    "--override",
    "q_max=6",
    "--override",
    "volume.horizon=300",
    "--override",
    "vwap.run_horizon=300",
];

fn booklab(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_booklab"))
        .arg("--out")
        .arg(out)
        .args(SMALL)
        .args(args)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn data_rows(path: &Path) -> usize {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .count()
        - 1
}

#[test]
fn missing_key_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../../configs/default.toml"
    ))
    .unwrap();
    let cut: String = text
        .lines()
        .filter(|l| !l.starts_with("mm.kappa "))
        .map(|l| format!("{l}\n"))
        .collect();
    let cfg = dir.path().join("cut.toml");
    fs::write(&cfg, cut).unwrap();
    let o = booklab(dir.path(), &["--config", cfg.to_str().unwrap(), "stats"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("mm.kappa"), "{}", stderr(&o));
}

#[test]
fn unknown_override_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = booklab(dir.path(), &["--override", "mm.nope=1", "stats"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("mm.nope"));
}

#[test]
fn mismatched_queue_caps_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = booklab(dir.path(), &["--override", "vwap.q_max=8", "stats"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("vwap.q_max"));
}

#[test]
fn simulate_without_policy_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = booklab(dir.path(), &["simulate", "mm"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("mm.policy"));
}

#[test]
fn policy_from_another_grid_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let o = booklab(dir.path(), &["solve", "mm"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = booklab(dir.path(), &["--override", "mm.dt=0.25", "simulate", "mm"]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    let o = booklab(dir.path(), &["--override", "mm.i_star=2", "simulate", "mm"]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

fn grid_value(path: &Path, key: &str) -> String {
    let text = fs::read_to_string(path).unwrap();
    text.lines()
        .filter_map(|l| l.split_once('='))
        .find(|(k, _)| k.trim() == key)
        .map(|(_, v)| v.trim().to_string())
        .unwrap_or_else(|| panic!("{key} missing from {}", path.display()))
}

#[test]
fn halving_dt_doubles_the_steps() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(booklab(a.path(), &["solve", "mm"]).status.success());
    assert!(
        booklab(b.path(), &["--override", "mm.dt=0.25", "solve", "mm"])
            .status
            .success()
    );
    let sa: usize = grid_value(&a.path().join("mm_grid.txt"), "steps")
        .parse()
        .unwrap();
    let sb: usize = grid_value(&b.path().join("mm_grid.txt"), "steps")
        .parse()
        .unwrap();
    assert_eq!(sa, 10);
    assert_eq!(sb, 2 * sa);
}

#[test]
fn one_path_one_path_file_and_full_histograms() {
    let dir = tempfile::tempdir().unwrap();
    assert!(booklab(dir.path(), &["solve", "mm"]).status.success());
    let o = booklab(
        dir.path(),
        &[
            "--paths",
            "1",
            "--override",
            "stats.bins=7",
            "simulate",
            "mm",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let paths: Vec<_> = fs::read_dir(dir.path())
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().starts_with("mm_path_"))
        .collect();
    assert_eq!(paths.len(), 1);
    assert_eq!(data_rows(&dir.path().join("mm_runs.csv")), 1);
    assert_eq!(data_rows(&dir.path().join("mm_gain_hist.csv")), 7);
    assert_eq!(data_rows(&dir.path().join("mm_passive_gain_hist.csv")), 7);
}

#[test]
fn broker_simulation_needs_no_policy() {
    let dir = tempfile::tempdir().unwrap();
    let o = booklab(dir.path(), &["--paths", "4", "simulate", "vwap"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(data_rows(&dir.path().join("vwap_runs.csv")), 4);
    let summary = fs::read_to_string(dir.path().join("vwap_summary.txt")).unwrap();
    assert!(summary.starts_with("# booklab "));
}

#[test]
fn market_runs_six_agents() {
    let dir = tempfile::tempdir().unwrap();
    assert!(booklab(dir.path(), &["solve", "mm"]).status.success());
    assert!(booklab(dir.path(), &["solve", "hft"]).status.success());
    let o = booklab(dir.path(), &["run-market"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let agents = fs::read_dir(dir.path())
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().starts_with("market_agent_"))
        .count();
    assert_eq!(agents, 6);
    let replay = dir.path().join("market_replay.json");
    let o = booklab(
        dir.path(),
        &["run-market", "--replay", replay.to_str().unwrap()],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read_to_string(dir.path().join("market_summary.txt")).unwrap(),
        fs::read_to_string(dir.path().join("market_summary_replay.txt")).unwrap()
    );
}
