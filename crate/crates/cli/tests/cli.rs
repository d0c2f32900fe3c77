use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: [&str; 12] = [
    "--override",
    "node_count=12",
    "--override",
    "slots=40",
    "--override",
    "body_bits=1024",
    "--override",
    "gamma=2",
    "--override",
    "area_side=40",
    "--override",
    "range=20",
];

fn twoldag(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_twoldag"))
        .arg("--output-dir")
        .arg(out)
        .args(args)
        .env_remove("TWOLDAG_OUT")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(|r| r.unwrap()).collect()
}

#[test]
fn run_writes_metrics_and_replays_from_its_config() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let first = twoldag(&a, &[&SMALL[..], &["run"]].concat());
    assert_eq!(code(&first), 0, "{}", String::from_utf8_lossy(&first.stderr));
    for f in ["storage.csv", "comm.csv", "cdf_storage.csv", "cdf_comm.csv", "metrics.json", "config.toml"] {
        assert!(a.join(f).exists(), "{f}");
    }
    assert_eq!(rows(&a.join("storage.csv")).len(), 12 * 40);
    let config = a.join("config.toml");
    let again = twoldag(&b, &["--config", config.to_str().unwrap(), "run"]);
    assert_eq!(code(&again), 0);
    for f in ["storage.csv", "comm.csv", "cdf_storage.csv", "cdf_comm.csv", "config.toml"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn unknown_override_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = twoldag(dir.path(), &["--override", "nodes=3", "run"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("nodes"));
    let o = twoldag(dir.path(), &["--override", "slots", "run"]);
    assert_eq!(code(&o), 1);
    let o = twoldag(dir.path(), &["--override", "gamma=30", "run"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn config_files_may_use_sections_and_overrides_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("base.cfg");
    fs::write(&cfg, "[network]\nnode_count = 7\narea_side = 30.0\n\n[run]\nslots = 5\nsweep_gammas = [1, 2]\n").unwrap();
    let out = dir.path().join("out");
    let o = twoldag(&out, &["--config", cfg.to_str().unwrap(), "--override", "node_count=9", "--override", "gamma=2", "topology"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(rows(&out.join("topology_nodes.csv")).len(), 9);

    fs::write(&cfg, "node_count = = 3\n").unwrap();
    assert_eq!(code(&twoldag(&out, &["--config", cfg.to_str().unwrap(), "run"])), 1);
    fs::write(&cfg, "colour = \"blue\"\n").unwrap();
    assert_eq!(code(&twoldag(&out, &["--config", cfg.to_str().unwrap(), "run"])), 1);
    let missing = dir.path().join("missing.cfg");
    assert_eq!(code(&twoldag(&out, &["--config", missing.to_str().unwrap(), "run"])), 1);
}

#[test]
fn output_directory_defaults_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_twoldag"))
        .args(["--override", "node_count=5", "--override", "gamma=2", "topology"])
        .env("TWOLDAG_OUT", dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert_eq!(rows(&dir.path().join("topology_nodes.csv")).len(), 5);
    let edges = rows(&dir.path().join("topology_edges.csv"));
    assert!(edges.len() >= 4);
}

#[test]
fn bounds_on_honest_run_are_all_ok() {
    let dir = tempfile::tempdir().unwrap();
    let o = twoldag(dir.path(), &[&SMALL[..], &["--override", "rate_max=3", "bounds"]].concat());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let mut r = csv::Reader::from_path(dir.path().join("bounds.csv")).unwrap();
    assert_eq!(r.headers().unwrap(), vec!["proposition", "slot", "node", "measured", "bound", "ok"]);
    let all = rows(&dir.path().join("bounds.csv"));
    assert!(all.len() > 40 + 2 * 12 * 40);
    assert!(all.iter().all(|row| &row[5] == "true"));
    let kinds: std::collections::BTreeSet<&str> = all.iter().map(|row| row.get(0).unwrap()).collect();
    assert!(kinds.contains("total_blocks") && kinds.contains("storage") && kinds.contains("message_floor"));
}

#[test]
fn compare_reuses_metrics_and_handles_empty_runs() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    assert_eq!(code(&twoldag(&run, &[&SMALL[..], &["run"]].concat())), 0);
    let out = dir.path().join("cmp");
    let metrics = run.join("metrics.json");
    let o = twoldag(&out, &["compare", "--metrics", metrics.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let table = rows(&out.join("compare.csv"));
    assert_eq!(table.len(), 40);
    let direct = dir.path().join("direct");
    assert_eq!(code(&twoldag(&direct, &[&SMALL[..], &["compare"]].concat())), 0);
    assert_eq!(fs::read(out.join("compare.csv")).unwrap(), fs::read(direct.join("compare.csv")).unwrap());

    let empty = dir.path().join("empty");
    assert_eq!(code(&twoldag(&empty, &["--override", "slots=0", "--override", "node_count=4", "--override", "gamma=1", "compare"])), 0);
    let text = fs::read_to_string(empty.join("compare.csv")).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("slot,twoldag_storage_bits,"));

    let missing = dir.path().join("none.json");
    assert_eq!(code(&twoldag(&out, &["compare", "--metrics", missing.to_str().unwrap()])), 2);
}

#[test]
fn compare_default_scenario_shows_both_gaps() {
    let dir = tempfile::tempdir().unwrap();
    let o = twoldag(dir.path(), &["compare"]);
    assert_eq!(code(&o), 0);
    let table = rows(&dir.path().join("compare.csv"));
    let last = table.last().unwrap();
    let storage: f64 = last[7].parse().unwrap();
    let comm: f64 = last[9].parse().unwrap();
    assert!(storage >= 40.0, "{storage}");
    assert!(comm >= 1e3, "{comm}");
}

#[test]
fn sweep_writes_curves() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "--override", "node_count=9", "--override", "slots=30", "--override", "body_bits=512", "--override", "area_side=30",
        "--override", "range=20", "--override", "sweep_gammas=1,2", "--override", "sweep_repetitions=1", "--override", "gamma=2",
        "sweep",
    ];
    let o = twoldag(dir.path(), &args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(rows(&dir.path().join("sweep.csv")).len(), 2 * 3 * 30);
    let o = twoldag(dir.path(), &["--override", "node_count=9", "--override", "sweep_gammas=5", "--override", "gamma=2", "sweep"]);
    assert_eq!(code(&o), 1);
}
