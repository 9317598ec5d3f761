//! The `bimodal-cl` command line: `gen`, `run` and `compare`.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | other I/O failure (writing outputs, reading run directories) |
//! | 2 | usage or configuration error |
//! | 3 | dataset file could not be read or parsed |
//! | 4 | training diverged |
//! | 5 | runs passed to `compare` come from different task streams |
//!
//! # Experiment config
//!
//! A TOML document; every key is optional and unknown keys are rejected.
//!
//! ```toml
//! data = "ds.clds"          # dataset path, overridden by --data
//!
//! [split]
//! protocol = "cil"          # "cil" or "dil"
//! num_tasks = 5             # cil only
//! test_fraction = 0.2
//! seed = 0
//! domain_order = [0, 1, 2]  # dil only; defaults to all domains ascending
//!
//! [run]                     # see RunConfig; --method/--memory/--seed override
//! method = "gdro"
//! epochs_per_task = 10
//! memory_capacity = 100
//! [run.gdro]
//! lambda = 0.5
//! [run.optimizer]
//! mode = "adam-style"
//!
//! [output]
//! dir = "runs"              # parent of run directories, overridden by --out
//! ```
//!
//! # Run directory
//!
//! `cmd_run` writes `<out>/<method>-m<memory>-s<seed>/` containing
//! `accuracy.csv`, `curve.csv`, `log.jsonl`, `curve.svg` and `run.json`.
//! Each CSV starts with a `#` line naming the method, memory, seed and the
//! SHA-256 of the effective configuration.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{self, Dataset, ShiftKind};
use crate::error::Error;
use crate::report::{self, Series};
use crate::runner::{self, Method, Protocol, RunConfig, TaskStream};

pub const OUT_ENV: &str = "BIMODAL_CL_OUT";

#[derive(Debug, Parser)]
#[command(name = "bimodal-cl", version, about = "Continual learning for bimodal contrastive encoders")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Gen(GenArgs),
    /// Run one continual-learning experiment.
    Run(RunArgs),
    /// Aggregate finished runs into a comparison table and plot.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub classes: usize,
    #[arg(long)]
    pub per_class: usize,
    #[arg(long)]
    pub dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Minimum distance between class means.
    #[arg(long, default_value_t = 3.0)]
    pub separation: f64,
    /// Per-coordinate noise standard deviation.
    #[arg(long, default_value_t = 0.5)]
    pub noise: f64,
    /// Number of domains; above 1 the base data is replicated under shifts.
    #[arg(long, default_value_t = 1)]
    pub domains: usize,
    /// rotation, scaling or mean-offset.
    #[arg(long, default_value = "rotation")]
    pub shift: String,
    #[arg(long, default_value_t = 1.0)]
    pub magnitude: f64,
    /// Also export the dataset as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset file; overrides `data` in the config.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Parent directory for the run directory.
    #[arg(long, env = OUT_ENV)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub memory: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    /// Run directories written by `run`.
    #[arg(required = true, num_args = 2..)]
    pub runs: Vec<PathBuf>,
    /// Where to write compare.csv and compare.svg.
    #[arg(long, env = OUT_ENV)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub protocol: Protocol,
    pub num_tasks: usize,
    pub test_fraction: f64,
    pub seed: u64,
    pub domain_order: Option<Vec<u32>>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            protocol: Protocol::ClassIncremental,
            num_tasks: 5,
            test_fraction: 0.2,
            seed: 0,
            domain_order: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: Option<PathBuf>,
    pub split: SplitConfig,
    pub run: RunConfig,
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, Error> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.run.validate()?;
        let s = &self.split;
        if !(s.test_fraction > 0.0 && s.test_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "split.test_fraction must be in (0, 1), got {}",
                s.test_fraction
            )));
        }
        if s.protocol == Protocol::ClassIncremental && s.num_tasks == 0 {
            return Err(Error::InvalidConfig("split.num_tasks must be >= 1".into()));
        }
        Ok(())
    }

    /// SHA-256 over the run and split settings (paths excluded).
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(&(&self.split, &self.run)).expect("config serializes");
        hex(&Sha256::digest(json.as_bytes()))
    }
}

/// Metadata written to `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: Method,
    pub memory: usize,
    pub seed: u64,
    pub config_sha256: String,
    /// Identifies the task stream: dataset bytes plus split settings.
    pub stream_fingerprint: String,
    pub curve: Vec<f64>,
    #[serde(rename = "final")]
    pub final_accuracy: f64,
}

/// An error together with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub error: Error,
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.error.fmt(f)
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(error: Error) -> Self {
        let code = match &error {
            Error::Io { .. } => 1,
            Error::MalformedFile(_) | Error::VersionMismatch { .. } => 3,
            Error::Divergence { .. } => 4,
            Error::IncompatibleRuns(_) => 5,
            _ => 2,
        };
        CliError { code, error }
    }
}

fn dataset_error(error: Error) -> CliError {
    CliError { code: 3, error }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code, printing diagnostics to standard error.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(&a).map(|ds| {
            let domains = match ds.num_domains() {
                0 => String::new(),
                n => format!(", {n} domains"),
            };
            println!(
                "wrote {} samples ({} classes, dim {}{}) to {}",
                ds.samples.len(),
                ds.num_classes,
                ds.input_dim,
                domains,
                a.output.display()
            );
        }),
        Command::Run(a) => cmd_run(&a).map(|(dir, s)| {
            println!(
                "{} memory={} seed={}: final accuracy {:.4}; outputs in {}",
                s.method,
                s.memory,
                s.seed,
                s.final_accuracy,
                dir.display()
            );
        }),
        Command::Compare(a) => cmd_compare(&a).map(|rows| {
            for r in rows {
                println!("{} memory={} runs={}: {:.4} ± {:.4}", r.method, r.memory, r.runs, r.mean, r.std);
            }
        }),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}

pub fn cmd_gen(args: &GenArgs) -> Result<Dataset, CliError> {
    let base = data::gen_synthetic(args.classes, args.per_class, args.dim, args.separation, args.noise, args.seed)?;
    let ds = if args.domains > 1 {
        let kind: ShiftKind = args.shift.parse()?;
        data::gen_domain_shift(&base, args.domains, kind, args.magnitude, args.seed.wrapping_add(1))?
    } else {
        base
    };
    data::save(&ds, &args.output)?;
    if let Some(path) = &args.csv {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        data::export_csv(&ds, std::io::BufWriter::new(file))?;
    }
    Ok(ds)
}

fn load_config(args: &RunArgs) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
            ExperimentConfig::parse(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(m) = &args.method {
        cfg.run.method = m.parse()?;
    }
    if let Some(m) = args.memory {
        cfg.run.memory_capacity = m;
    }
    if let Some(s) = args.seed {
        cfg.run.seed = s;
    }
    if let Some(d) = &args.data {
        cfg.data = Some(d.clone());
    }
    if let Some(o) = &args.out {
        cfg.output.dir = Some(o.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Builds the task stream and its fingerprint.
pub fn build_stream(cfg: &ExperimentConfig, dataset_bytes: &[u8]) -> Result<(TaskStream, String), CliError> {
    let ds = data::decode(dataset_bytes).map_err(dataset_error)?;
    let s = &cfg.split;
    let stream = match s.protocol {
        Protocol::ClassIncremental => data::split_cil(&ds, s.num_tasks, s.test_fraction, s.seed)?,
        Protocol::DomainIncremental => {
            let order = s
                .domain_order
                .clone()
                .unwrap_or_else(|| (0..ds.num_domains() as u32).collect());
            data::split_dil(&ds, &order, s.test_fraction, s.seed)?
        }
    };
    let mut h = Sha256::new();
    h.update(dataset_bytes);
    h.update(serde_json::to_string(s).expect("split serializes").as_bytes());
    Ok((stream, hex(&h.finalize())))
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::from(Error::io(path, e)))
}

/// Runs one experiment and writes its run directory.
pub fn cmd_run(args: &RunArgs) -> Result<(PathBuf, RunSummary), CliError> {
    let cfg = load_config(args)?;
    let data_path = cfg
        .data
        .clone()
        .ok_or_else(|| Error::InvalidConfig("no dataset: pass --data or set `data` in the config".into()))?;
    let bytes = fs::read(&data_path).map_err(|e| dataset_error(Error::io(&data_path, e)))?;
    let (stream, fingerprint) = build_stream(&cfg, &bytes)?;

    let out = runner::run(&stream, &cfg.run)?;
    let run = &cfg.run;
    let config_sha256 = cfg.hash();
    let comment = format!(
        "method={} memory={} seed={} config_sha256={}",
        run.method, run.memory_capacity, run.seed, config_sha256
    );
    let parent = cfg.output.dir.clone().unwrap_or_else(|| PathBuf::from("runs"));
    let dir = parent.join(format!("{}-m{}-s{}", run.method, run.memory_capacity, run.seed));
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

    let curve = out.matrix.curve();
    write(&dir.join("accuracy.csv"), &report::accuracy_csv(&out.matrix, &comment))?;
    write(&dir.join("curve.csv"), &report::curve_csv(&out.matrix, &comment))?;
    write(&dir.join("log.jsonl"), &report::log_jsonl(&out.log))?;
    let series = Series {
        name: run.method.to_string(),
        points: curve.iter().enumerate().map(|(t, a)| ((t + 1) as f64, *a)).collect(),
        errors: None,
    };
    write(
        &dir.join("curve.svg"),
        &report::svg_line_chart(&format!("{} (memory {})", run.method, run.memory_capacity), "task", "accuracy", &[series]),
    )?;
    let summary = RunSummary {
        method: run.method,
        memory: run.memory_capacity,
        seed: run.seed,
        config_sha256,
        stream_fingerprint: fingerprint,
        final_accuracy: out.matrix.final_aggregate(),
        curve,
    };
    write(
        &dir.join("run.json"),
        &(serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n"),
    )?;
    Ok((dir, summary))
}

/// One row of `compare.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub method: Method,
    pub memory: usize,
    pub runs: usize,
    pub mean: f64,
    pub std: f64,
}

fn read_run(dir: &Path) -> Result<(RunSummary, Vec<f64>), CliError> {
    let json_path = dir.join("run.json");
    let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let summary: RunSummary = serde_json::from_str(&text)
        .map_err(|e| Error::InvalidConfig(format!("{}: {e}", json_path.display())))?;
    let csv_path = dir.join("curve.csv");
    let text = fs::read_to_string(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    let curve = report::parse_curve_csv(&text)
        .map_err(|e| Error::InvalidConfig(format!("{}: {e}", csv_path.display())))?;
    if curve.is_empty() {
        return Err(Error::InvalidConfig(format!("{} has no rows", csv_path.display())).into());
    }
    Ok((summary, curve))
}

/// Groups runs by (method, memory) and reports final accuracy mean and
/// sample standard deviation, recomputed from each run's `curve.csv`.
pub fn cmd_compare(args: &CompareArgs) -> Result<Vec<CompareRow>, CliError> {
    if args.runs.len() < 2 {
        return Err(Error::InvalidConfig("compare needs at least two run directories".into()).into());
    }
    let runs = args.runs.iter().map(|d| read_run(d)).collect::<Result<Vec<_>, _>>()?;
    let fingerprint = runs[0].0.stream_fingerprint.clone();
    if let Some((s, _)) = runs.iter().find(|(s, _)| s.stream_fingerprint != fingerprint) {
        return Err(Error::IncompatibleRuns(format!(
            "{} memory={} seed={} was trained on a different task stream",
            s.method, s.memory, s.seed
        ))
        .into());
    }

    let mut groups: BTreeMap<(Method, usize), Vec<Vec<f64>>> = BTreeMap::new();
    for (s, curve) in runs {
        groups.entry((s.method, s.memory)).or_default().push(curve);
    }

    let mut rows = Vec::new();
    let mut series = Vec::new();
    let mut csv = format!("# stream_fingerprint={fingerprint}\nmethod,memory,runs,final_mean,final_std\n");
    for ((method, memory), curves) in &groups {
        let finals: Vec<f64> = curves.iter().map(|c| *c.last().expect("non-empty curve")).collect();
        let (mean, std) = report::mean_std(&finals);
        csv.push_str(&format!("{method},{memory},{},{mean},{std}\n", curves.len()));
        rows.push(CompareRow {
            method: *method,
            memory: *memory,
            runs: curves.len(),
            mean,
            std,
        });
        let len = curves.iter().map(Vec::len).min().unwrap_or(0);
        let stats: Vec<(f64, f64)> = (0..len)
            .map(|t| report::mean_std(&curves.iter().map(|c| c[t]).collect::<Vec<_>>()))
            .collect();
        series.push(Series {
            name: format!("{method} (m={memory})"),
            points: stats.iter().enumerate().map(|(t, s)| ((t + 1) as f64, s.0)).collect(),
            errors: Some(stats.iter().map(|s| s.1).collect()),
        });
    }

    let out = args.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    write(&out.join("compare.csv"), &csv)?;
    write(
        &out.join("compare.svg"),
        &report::svg_line_chart("accuracy after each task (mean ± std)", "task", "accuracy", &series),
    )?;
    Ok(rows)
}
