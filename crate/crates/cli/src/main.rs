use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};
use thiserror::Error;
use twoldag::analysis::{
    baseline_costs, prop1_total_blocks, prop2_header_cache_bound, prop3_storage_bound, prop4_message_floor,
    prop6_message_ceiling, BaselineModel, Prop6, RateProfile,
};
use twoldag::sim::config::CONFIG_KEYS;
use twoldag::sim::export::{export_metrics, export_sweep, import_metrics_json, ExportError, Format};
use twoldag::sim::*;
use twoldag::topology::TopologyError;

/// Simulator for a two-layer DAG ledger with Proof-of-Path consensus.
#[derive(Parser, Debug)]
#[command(name = "twoldag", version)]
struct Cli {
    /// Flat `key = value` config file; TOML sections are flattened.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory that receives the report files.
    #[arg(long, global = true, env = "TWOLDAG_OUT", default_value = "twoldag-out")]
    output_dir: PathBuf,
    /// Applied after the config file, in order. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand, Debug)]
enum Verb {
    /// Generate the node placement and radio links only.
    Topology,
    /// Run the slot simulation and export storage, traffic and session metrics.
    Run,
    /// Consensus failure probability over time under silent attackers.
    Sweep,
    /// Run, then check every measured quantity against its analytic bound.
    Bounds,
    /// Per-slot mean storage and traffic next to PBFT and IOTA models.
    Compare {
        /// Reuse the metrics.json of an earlier run instead of simulating.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
}

#[derive(Debug, Error)]
enum CliError {
    #[error("cannot read config {path}: {source}")]
    ReadConfig { path: PathBuf, source: std::io::Error },
    #[error("config {path} is not valid: {source}")]
    ParseConfig { path: PathBuf, source: Box<toml::de::Error> },
    #[error("override `{0}` is not of the form key=value")]
    BadOverride(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Export(#[from] ExportError),
    #[error("cannot write {path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::ReadConfig { .. }
            | CliError::ParseConfig { .. }
            | CliError::BadOverride(_)
            | CliError::Config(_)
            | CliError::Topology(_)
            | CliError::Sim(SimError::Config(_)) => 1,
            _ => 2,
        }
    }
}

fn flatten(table: &toml::Table, out: &mut Vec<(String, String)>) {
    for (key, value) in table {
        let text = match value {
            toml::Value::Table(inner) => {
                flatten(inner, out);
                continue;
            }
            toml::Value::String(s) => s.clone(),
            toml::Value::Array(items) => items
                .iter()
                .map(|v| match v {
                    toml::Value::String(s) => s.clone(),
                    other => other.to_string(),
                })
                .collect::<Vec<_>>()
                .join(","),
            other => other.to_string(),
        };
        out.push((key.clone(), text));
    }
}

fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<SimConfig, CliError> {
    let mut config = SimConfig::default();
    if let Some(path) = path {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::ReadConfig { path: path.into(), source })?;
        let table: toml::Table =
            toml::from_str(&text).map_err(|source| CliError::ParseConfig { path: path.into(), source: Box::new(source) })?;
        let mut pairs = Vec::new();
        flatten(&table, &mut pairs);
        for (k, v) in pairs {
            config.set(&k, &v)?;
        }
    }
    for o in overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| CliError::BadOverride(o.clone()))?;
        config.set(k.trim(), v)?;
    }
    config.check()?;
    Ok(config)
}

struct Table {
    path: PathBuf,
    writer: csv::Writer<std::fs::File>,
}

impl Table {
    fn create(dir: &Path, name: &str, header: &[&str]) -> Result<Table, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Csv { path: dir.into(), source: e.into() })?;
        let path = dir.join(name);
        let mut writer = csv::Writer::from_path(&path).map_err(|source| CliError::Csv { path: path.clone(), source })?;
        writer.write_record(header).map_err(|source| CliError::Csv { path: path.clone(), source })?;
        Ok(Table { path, writer })
    }

    fn row(&mut self, fields: &[String]) -> Result<(), CliError> {
        self.writer.write_record(fields).map_err(|source| CliError::Csv { path: self.path.clone(), source })
    }

    fn finish(mut self) -> Result<PathBuf, CliError> {
        self.writer.flush().map_err(|e| CliError::Csv { path: self.path.clone(), source: e.into() })?;
        Ok(self.path)
    }
}

fn topology(config: &SimConfig, out: &Path) -> Result<(), CliError> {
    let t = gen_topology(config)?;
    let pos = t.positions.clone().unwrap_or_default();
    let mut nodes = Table::create(out, "topology_nodes.csv", &["node", "x", "y", "degree"])?;
    for v in t.nodes() {
        let (x, y) = pos.get(usize::from(v)).copied().unwrap_or_default();
        nodes.row(&[v.to_string(), x.to_string(), y.to_string(), t.degree(v).to_string()])?;
    }
    nodes.finish()?;
    let edges = t.edges();
    let mut table = Table::create(out, "topology_edges.csv", &["a", "b"])?;
    for (a, b) in &edges {
        table.row(&[a.to_string(), b.to_string()])?;
    }
    table.finish()?;
    let mean = 2.0 * edges.len() as f64 / t.node_count() as f64;
    println!("{} nodes, {} links, mean degree {mean:.2}, connected: {}", t.node_count(), edges.len(), t.is_connected());
    Ok(())
}

fn simulate(config: &SimConfig) -> Result<(SimRun, RateProfile), CliError> {
    let run = Simulation::new(config.clone())?.run()?;
    let rates = rate_profile(&run.world, config.body_bits);
    Ok((run, rates))
}

fn run(config: &SimConfig, out: &Path) -> Result<(), CliError> {
    let (run, rates) = simulate(config)?;
    let m = &run.metrics;
    let written = export_metrics(m, config, &rates, out, Format::Both)?;
    let ok = m.sessions.iter().filter(|s| s.succeeded()).count();
    println!("{} slots, {} blocks, {} validations ({ok} reached consensus)", m.slots, m.total_blocks.last().unwrap_or(&0), m.sessions.len());
    if m.slots > 0 {
        let last = m.slots - 1;
        println!(
            "mean per-node storage {:.4e} bits, traffic {:.4e} bits",
            m.mean_at(last, |r| r.storage_bits()),
            m.mean_at(last, |r| r.communication_bits())
        );
    }
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn sweep(config: &SimConfig, out: &Path) -> Result<(), CliError> {
    let result = attack_sweep(config, &config.sweep_gammas, &DEFAULT_FRACTIONS, config.sweep_repetitions)?;
    for p in &result.points {
        let zero = p.slots_to_zero.map_or("never".to_string(), |s| s.to_string());
        println!(
            "gamma {:>3}  malicious {:>3}  targets {:>4}  unresolved {:>3}  slots to zero failure {zero}",
            p.gamma, p.malicious, p.targets, p.unresolved
        );
    }
    for p in export_sweep(&result, config, out)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}

/// Returns the number of violated bounds.
fn bounds(config: &SimConfig, out: &Path) -> Result<u64, CliError> {
    let (run, rates) = simulate(config)?;
    let m = &run.metrics;
    let mut table = Table::create(out, "bounds.csv", &["proposition", "slot", "node", "measured", "bound", "ok"])?;
    let mut tally: Vec<(&str, u64, u64)> = Vec::new();
    let mut emit = |table: &mut Table, name: &'static str, slot: u32, node: String, measured: u128, bound: u128, ok: bool| {
        match tally.iter_mut().find(|t| t.0 == name) {
            Some(t) => {
                t.1 += 1;
                t.2 += u64::from(!ok);
            }
            None => tally.push((name, 1, u64::from(!ok))),
        }
        table.row(&[name.to_string(), slot.to_string(), node, measured.to_string(), bound.to_string(), ok.to_string()])
    };
    for slot in 0..m.slots {
        let t = u64::from(slot) + 1;
        let blocks = m.total_blocks[slot as usize];
        let expected = prop1_total_blocks(t, &rates);
        emit(&mut table, "total_blocks", slot, String::new(), blocks.into(), expected.into(), blocks == expected)?;
        for r in m.slot_records(slot) {
            let h = prop2_header_cache_bound(t, &rates, r.node).expect("node in profile").floor().to_integer();
            emit(&mut table, "header_cache", slot, r.node.to_string(), r.h_bits.into(), h, u128::from(r.h_bits) <= h)?;
            let s = prop3_storage_bound(t, &rates, r.node).expect("node in profile").floor().to_integer();
            emit(&mut table, "storage", slot, r.node.to_string(), r.storage_bits().into(), s, u128::from(r.storage_bits()) <= s)?;
        }
    }
    let ceiling = prop6_message_ceiling(&rates, config.gamma);
    for s in m.sessions.iter().filter(|s| s.succeeded()) {
        let total = s.messages + s.retrieval_messages;
        if s.trusted_steps == 0 {
            let floor = prop4_message_floor(s.gamma);
            emit(&mut table, "message_floor", s.slot, s.validator.to_string(), total.into(), floor.into(), total >= floor)?;
        }
        if let Prop6::Bound(b) = ceiling {
            let b = b.floor().to_integer();
            emit(&mut table, "message_ceiling", s.slot, s.validator.to_string(), total.into(), b, u128::from(total) <= b)?;
        }
    }
    let path = table.finish()?;
    let mut violations = 0;
    for (name, checked, bad) in &tally {
        println!("{name:<16} checked {checked:>8}  violated {bad}");
        violations += bad;
    }
    if matches!(ceiling, Prop6::Inapplicable) {
        println!("message_ceiling  not applicable: the gamma-th and next fastest rates are equal");
    }
    println!("wrote {}", path.display());
    Ok(violations)
}

fn compare(config: &SimConfig, metrics: Option<&Path>, out: &Path) -> Result<(), CliError> {
    let (m, config) = match metrics {
        Some(path) => {
            let (manifest, m) = import_metrics_json(path)?;
            let mut c = SimConfig::default();
            for (k, v) in &manifest.config {
                c.set(k, v)?;
            }
            (m, c)
        }
        None => (simulate(config)?.0.metrics, config.clone()),
    };
    let rates = rate_profile(&World::from_config(&config), config.body_bits);
    let mut table = Table::create(
        out,
        "compare.csv",
        &[
            "slot",
            "twoldag_storage_bits",
            "pbft_storage_bits",
            "iota_storage_bits",
            "twoldag_comm_bits",
            "pbft_comm_bits",
            "iota_comm_bits",
            "pbft_storage_ratio",
            "iota_storage_ratio",
            "pbft_comm_ratio",
            "iota_comm_ratio",
        ],
    )?;
    let mut last = None;
    for slot in 0..m.slots {
        let t = u64::from(slot) + 1;
        let storage = m.mean_at(slot, |r| r.storage_bits());
        let comm = m.mean_at(slot, |r| r.communication_bits());
        let pbft = baseline_costs(BaselineModel::Pbft, t, &rates);
        let iota = baseline_costs(BaselineModel::Iota, t, &rates);
        let ratios = [pbft.storage_bits / storage, iota.storage_bits / storage, pbft.communication_bits / comm, iota.communication_bits / comm];
        let mut row = vec![slot.to_string()];
        row.extend(
            [storage, pbft.storage_bits, iota.storage_bits, comm, pbft.communication_bits, iota.communication_bits]
                .iter()
                .chain(&ratios)
                .map(|x| x.to_string()),
        );
        table.row(&row)?;
        last = Some(ratios);
    }
    let path = table.finish()?;
    if let Some([ps, is, pc, ic]) = last {
        println!("final slot: storage PBFT/2LDAG {ps:.1}x IOTA/2LDAG {is:.1}x; traffic PBFT/2LDAG {pc:.3e}x IOTA/2LDAG {ic:.3e}x");
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn defaults_help() -> String {
    let defaults = SimConfig::default().to_pairs();
    let mut text = String::from("Config keys (default in brackets):\n");
    for ((key, help), (_, value)) in CONFIG_KEYS.iter().zip(defaults) {
        text.push_str(&format!("  {key:<20} {help} [{value}]\n"));
    }
    text.push_str("\nExit codes: 0 success, 1 config error, 2 runtime error, 3 a bound was violated.");
    text
}

fn main() -> ExitCode {
    let matches = Cli::command().after_long_help(defaults_help()).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    let result = load_config(cli.config.as_deref(), &cli.overrides).and_then(|config| {
        let out = cli.output_dir.as_path();
        match &cli.verb {
            Verb::Topology => topology(&config, out).map(|_| 0),
            Verb::Run => run(&config, out).map(|_| 0),
            Verb::Sweep => sweep(&config, out).map(|_| 0),
            Verb::Bounds => bounds(&config, out).map(|v| if v > 0 { 3 } else { 0 }),
            Verb::Compare { metrics } => compare(&config, metrics.as_deref(), out).map(|_| 0),
        }
    });
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
