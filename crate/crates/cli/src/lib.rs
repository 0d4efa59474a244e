//! Configuration loading, parameter sweeps and CSV reports for the
//! `coopbeacon` simulator.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use coopbeacon::receiver::Scheme;
use coopbeacon::sim::{MetricsReport, Scenario, SimConfig, KINDS};
use coopbeacon::Micros;
use serde_json::{Map, Value};
use thiserror::Error;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Io { .. } => EXIT_IO,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Flags shared by all subcommands. Values given here win over the file.
#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// JSON file with SimConfig fields; missing fields take defaults.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub scenario: Option<Scenario>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub runs: Option<u32>,
    /// Inner-disc node count (static) or target density (highway).
    #[arg(long = "N", value_name = "N")]
    pub n: Option<u32>,
    #[arg(long)]
    pub alpha: Option<usize>,
    #[arg(long)]
    pub pr_loss: Option<f64>,
    #[arg(long, value_name = "MS")]
    pub t_vrfc_ms: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub n_adv: Option<u32>,
    #[arg(long)]
    pub gamma_adv: Option<f64>,
    #[arg(long)]
    pub scheme: Option<Scheme>,
    #[arg(long)]
    pub duration: Option<f64>,
}

impl ConfigArgs {
    /// Loads the file (if any), applies overrides and validates.
    pub fn resolve(&self) -> Result<SimConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => load_config(p)?,
            None => SimConfig::default(),
        };
        macro_rules! set {
            ($($f:ident => $g:ident),*) => {$(
                if let Some(v) = self.$f { cfg.$g = v; }
            )*};
        }
        set!(scenario => scenario, seed => seed, runs => runs, n => n, alpha => alpha, pr_loss => pr_loss,
             gamma => gamma, n_adv => n_adv, gamma_adv => gamma_adv, scheme => scheme, duration => duration);
        if let Some(ms) = self.t_vrfc_ms {
            cfg.t_vrfc = ms / 1000.0;
        }
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }
}

pub fn load_config(path: &Path) -> Result<SimConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// A base configuration and optional cartesian sweep over its fields.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub base: SimConfig,
    pub sweep: Vec<(String, Vec<Value>)>,
    pub output_dir: PathBuf,
}

/// Parses `name=v1,v2,...`. Values are JSON literals, with bare words taken
/// as strings.
pub fn parse_sweep_param(s: &str) -> Result<(String, Vec<Value>), String> {
    let (name, values) = s.split_once('=').ok_or_else(|| format!("expected NAME=V1,V2,... in `{s}`"))?;
    let name = if name == "N" { "n" } else { name };
    let values: Vec<Value> = values
        .split(',')
        .filter(|v| !v.is_empty())
        .map(|v| serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string())))
        .collect();
    if values.is_empty() {
        return Err(format!("no values for `{name}`"));
    }
    Ok((name.to_string(), values))
}

impl ExperimentSpec {
    /// One configuration per sweep cell, with a directory-safe label.
    pub fn cells(&self) -> Result<Vec<(String, SimConfig)>, CliError> {
        let base = serde_json::to_value(&self.base).expect("config serializes");
        let Value::Object(base) = base else { unreachable!("config is an object") };
        for (name, values) in &self.sweep {
            if !base.contains_key(name) {
                return Err(CliError::Config(format!("unknown sweep parameter `{name}`")));
            }
            if values.is_empty() {
                return Err(CliError::Config(format!("empty value list for `{name}`")));
            }
        }
        let mut cells: Vec<(Vec<String>, Map<String, Value>)> = vec![(Vec::new(), base)];
        for (name, values) in &self.sweep {
            cells = cells
                .into_iter()
                .flat_map(|(label, obj)| {
                    values.iter().map(move |v| {
                        let mut obj = obj.clone();
                        obj.insert(name.clone(), v.clone());
                        let shown = match v {
                            Value::String(s) => s.clone(),
                            other => other.to_string(),
                        };
                        let mut label = label.clone();
                        label.push(format!("{name}={shown}"));
                        (label, obj)
                    })
                })
                .collect();
        }
        cells
            .into_iter()
            .map(|(label, obj)| {
                let cfg: SimConfig = serde_json::from_value(Value::Object(obj)).map_err(|e| CliError::Config(e.to_string()))?;
                cfg.validate().map_err(|e| CliError::Config(format!("{}: {e}", label.join(","))))?;
                let label = if label.is_empty() { "base".to_string() } else { label.join(",") };
                Ok((label, cfg))
            })
            .collect()
    }
}

/// Seconds with six decimals, exact for integer microseconds.
pub fn fmt_secs(t: Micros) -> String {
    let sign = if t < 0 { "-" } else { "" };
    let a = t.unsigned_abs();
    format!("{sign}{}.{:06}", a / 1_000_000, a % 1_000_000)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub const SUMMARY_HEADER: [&str; 10] = [
    "run_id",
    "scenario",
    "N",
    "alpha",
    "pr_loss",
    "scheme",
    "avg_waiting_s",
    "ratio_sig",
    "ratio_coop",
    "ratio_tesla",
];
pub const WAITING_HEADER: [&str; 7] = ["run_id", "node_id", "pc_id", "received_at_s", "validated_at_s", "waited_s", "kind"];
pub const DELAYS_HEADER: [&str; 6] = ["run_id", "rx_node", "pc_id", "first_seen_s", "first_validated_s", "delay_s"];
pub const RATIO_HEADER: [&str; 5] = ["run_id", "rx_node", "encountered", "validated", "ratio"];

fn csv_writer(dir: &Path, name: &str) -> Result<(csv::Writer<fs::File>, PathBuf), CliError> {
    let path = dir.join(name);
    let file = fs::File::create(&path).map_err(io_err(&path))?;
    Ok((csv::Writer::from_writer(file), path))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::Io {
        path: path.to_path_buf(),
        source: e.into(),
    }
}

/// Writes the four CSV reports and the effective configuration into `dir`.
pub fn write_reports(report: &MetricsReport, dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let cfg = &report.config;

    let (mut w, path) = csv_writer(dir, "summary.csv")?;
    let e = csv_err(&path);
    w.write_record(SUMMARY_HEADER).map_err(&e)?;
    let fixed = |run_id: String, avg: Option<f64>, r: [f64; 3]| {
        vec![
            run_id,
            cfg.scenario.as_str().to_string(),
            cfg.n.to_string(),
            cfg.effective_alpha().to_string(),
            format!("{:.6}", cfg.pr_loss),
            cfg.scheme.as_str().to_string(),
            fmt_opt(avg),
            format!("{:.6}", r[0]),
            format!("{:.6}", r[1]),
            format!("{:.6}", r[2]),
        ]
    };
    for r in &report.runs {
        w.write_record(fixed(r.run_id.to_string(), r.avg_waiting(), r.type_ratios())).map_err(&e)?;
    }
    w.write_record(fixed("avg".to_string(), report.avg_waiting(), report.type_ratios())).map_err(&e)?;
    w.flush().map_err(io_err(&path))?;

    let (mut w, path) = csv_writer(dir, "waiting_times.csv")?;
    let e = csv_err(&path);
    w.write_record(WAITING_HEADER).map_err(&e)?;
    for r in &report.runs {
        for x in &r.waiting {
            w.write_record([
                r.run_id.to_string(),
                x.node.to_string(),
                x.pc.to_string(),
                fmt_secs(x.received_at),
                fmt_secs(x.validated_at),
                fmt_secs(x.waited()),
                x.kind.as_str().to_string(),
            ])
            .map_err(&e)?;
        }
    }
    w.flush().map_err(io_err(&path))?;

    let (mut w, path) = csv_writer(dir, "psnym_delays.csv")?;
    let e = csv_err(&path);
    w.write_record(DELAYS_HEADER).map_err(&e)?;
    for r in &report.runs {
        for p in &r.psnym {
            let (Some(v), Some(d)) = (p.first_validated, p.delay()) else { continue };
            w.write_record([
                r.run_id.to_string(),
                p.rx_node.to_string(),
                p.pc.to_string(),
                fmt_secs(p.first_seen),
                fmt_secs(v),
                fmt_secs(d),
            ])
            .map_err(&e)?;
        }
    }
    w.flush().map_err(io_err(&path))?;

    let (mut w, path) = csv_writer(dir, "psnym_ratio.csv")?;
    let e = csv_err(&path);
    w.write_record(RATIO_HEADER).map_err(&e)?;
    for r in &report.runs {
        for x in &r.ratios {
            w.write_record([
                r.run_id.to_string(),
                x.rx_node.to_string(),
                x.encountered.to_string(),
                x.validated.to_string(),
                fmt_opt(x.ratio()),
            ])
            .map_err(&e)?;
        }
    }
    w.flush().map_err(io_err(&path))?;

    let path = dir.join("effective_config.json");
    let json = serde_json::to_string_pretty(cfg).expect("config serializes");
    fs::write(&path, json + "\n").map_err(io_err(&path))?;
    Ok(())
}

/// One-line human summary of a report.
pub fn describe(report: &MetricsReport) -> String {
    let r = report.type_ratios();
    let kinds: Vec<String> = KINDS.iter().zip(r).map(|(k, v)| format!("{}={v:.3}", k.as_str())).collect();
    format!(
        "{} {} N={} alpha={} pr_loss={}: avg waiting {}, {}, pseudonym ratio {}",
        report.config.scenario.as_str(),
        report.config.scheme.as_str(),
        report.config.n,
        report.config.effective_alpha(),
        report.config.pr_loss,
        report.avg_waiting().map_or("n/a".into(), |w| format!("{w:.6} s")),
        kinds.join(" "),
        report.psnym_ratio().map_or("n/a".into(), |x| format!("{x:.6}")),
    )
}
