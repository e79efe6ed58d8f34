//! Command-line front end.
//!
//! Exit codes: `0` success, `2` configuration or validation failure, `3`
//! failure inside a computation.

pub mod config;
pub mod report;

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use crate::analysis::{flip_criterion, logit_remainder_with_trace, margin_report, remainder_sweep, ShiftReport};
use crate::error::Error;
use crate::io::{adapters_to_string, model_to_string, write_atomic};
use crate::lora::LoraSet;
use crate::model::{build_model, forward, TransformerModel};
use config::{ExperimentConfig, ReportFormat};
use report::{num, MarginResults, ReportFile, SweepResults};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_COMPUTE: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "lorashift",
    version,
    about = "First-order LoRA logit-shift analysis on a toy transformer"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the seeded model and write it as a model file.
    GenModel(CommonArgs),
    /// Draw the configured adapters and write them as an adapter file.
    GenLora(CommonArgs),
    /// Exact shift, first-order terms and remainder per target token.
    Analyze(CommonArgs),
    /// Fact-margin decomposition and flip diagnostics.
    Margin(CommonArgs),
    /// Remainder scaling over the configured epsilon grid.
    Sweep(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Experiment config file (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `output.dir` in the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Report formats; overrides `output.formats` in the config.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub format: Option<Vec<ReportFormat>>,
    /// Replaces the model seed.
    #[arg(long)]
    pub seed_override: Option<u64>,
}

/// Failure with its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl CliError {
    fn config(e: Error) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: format!("config error: {e}"),
        }
    }

    fn compute(op: &str, e: Error) -> Self {
        Self {
            code: EXIT_COMPUTE,
            message: format!("{op} failed: {e}"),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// What a command wrote.
#[derive(Debug, Default)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub stdout: Vec<String>,
    pub stderr: Vec<String>,
}

struct Prepared {
    config: ExperimentConfig,
    out_dir: PathBuf,
    formats: Vec<ReportFormat>,
}

fn prepare(args: &CommonArgs) -> CliResult<Prepared> {
    let mut config = ExperimentConfig::load(&args.config).map_err(CliError::config)?;
    if let Some(seed) = args.seed_override {
        config.model.seed = seed;
    }
    config.validate().map_err(CliError::config)?;
    let out_dir = args
        .out
        .clone()
        .or_else(|| config.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let mut formats = args.format.clone().unwrap_or_else(|| config.output.formats.clone());
    if formats.is_empty() {
        formats = vec![ReportFormat::Json, ReportFormat::Csv];
    }
    Ok(Prepared {
        config,
        out_dir,
        formats,
    })
}

fn write(out: &mut Outcome, path: PathBuf, text: &str) -> CliResult<()> {
    write_atomic(&path, text.as_bytes()).map_err(|e| CliError::compute("write", e))?;
    out.files.push(path);
    Ok(())
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn model_and_adapters(config: &ExperimentConfig) -> CliResult<(TransformerModel, LoraSet)> {
    let model = build_model(&config.model).map_err(CliError::config)?;
    let set = config.build_adapters(&model).map_err(CliError::config)?;
    Ok((model, set))
}

fn rank_notes(set: &LoraSet, out: &mut Outcome) {
    out.stderr.extend(set.adapters().filter_map(|a| a.rank_note()));
}

fn gen_model(p: &Prepared) -> CliResult<Outcome> {
    let model = build_model(&p.config.model).map_err(CliError::config)?;
    let text = model_to_string(&model).map_err(|e| CliError::compute("serialize model", e))?;
    let mut out = Outcome::default();
    let path = p.out_dir.join("model.toml");
    write(&mut out, path.clone(), &text)?;
    out.stdout
        .push(format!("{}  {}", sha256_hex(text.as_bytes()), path.display()));
    Ok(out)
}

fn gen_lora(p: &Prepared) -> CliResult<Outcome> {
    let (_, set) = model_and_adapters(&p.config)?;
    let text = adapters_to_string(&set).map_err(|e| CliError::compute("serialize adapters", e))?;
    let mut out = Outcome::default();
    rank_notes(&set, &mut out);
    let path = p.out_dir.join("adapters.toml");
    write(&mut out, path.clone(), &text)?;
    out.stdout
        .push(format!("{}  {}", sha256_hex(text.as_bytes()), path.display()));
    Ok(out)
}

fn analyze(p: &Prepared) -> CliResult<Outcome> {
    let targets = p.config.require_targets().map_err(CliError::config)?;
    let (model, set) = model_and_adapters(&p.config)?;
    let set = set.with_scale(p.config.epsilon);
    let trace = forward(&model, &p.config.tokens).map_err(|e| CliError::compute("forward", e))?;
    let reports: Vec<ShiftReport> = targets
        .iter()
        .map(|&y| logit_remainder_with_trace(&model, &trace, &set, y))
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::compute("logit_remainder", e))?;

    let mut out = Outcome::default();
    rank_notes(&set, &mut out);
    for r in &reports {
        out.stdout.push(format!(
            "y={} exact={} first_order={} remainder={}",
            r.token,
            num(r.exact_shift),
            num(r.first_order_total),
            num(r.remainder)
        ));
    }
    if p.formats.contains(&ReportFormat::Json) {
        let file = ReportFile::new("analyze", model.digest_hex(), &p.config, reports.clone());
        let text = file.to_json().map_err(|e| CliError::compute("serialize report", e))?;
        write(&mut out, p.out_dir.join("analyze.json"), &text)?;
    }
    if p.formats.contains(&ReportFormat::Csv) {
        write(&mut out, p.out_dir.join("analyze.csv"), &report::shift_csv(&reports))?;
        write(
            &mut out,
            p.out_dir.join("analyze_sites.csv"),
            &report::shift_sites_csv(&reports),
        )?;
    }
    Ok(out)
}

fn margin(p: &Prepared) -> CliResult<Outcome> {
    let (y_doc, y_pre) = p.config.require_margin_pair().map_err(CliError::config)?;
    let (model, set) = model_and_adapters(&p.config)?;
    let set = set.with_scale(p.config.epsilon);
    let report = margin_report(&model, &set, &p.config.tokens, y_doc, y_pre)
        .map_err(|e| CliError::compute("margin_report", e))?;
    let results = MarginResults {
        flip: flip_criterion(&report),
        report,
    };
    let mut out = Outcome::default();
    rank_notes(&set, &mut out);
    out.stdout.push(format!(
        "m0={} m={} first_order_margin={} flip_predicted={} flip_actual={}",
        num(results.report.m0),
        num(results.report.m),
        num(results.report.first_order_margin),
        results.report.flip_predicted,
        results.report.flip_actual
    ));
    if p.formats.contains(&ReportFormat::Json) {
        let file = ReportFile::new("margin", model.digest_hex(), &p.config, results.clone());
        let text = file.to_json().map_err(|e| CliError::compute("serialize report", e))?;
        write(&mut out, p.out_dir.join("margin.json"), &text)?;
    }
    if p.formats.contains(&ReportFormat::Csv) {
        write(&mut out, p.out_dir.join("margin.csv"), &report::margin_csv(&results))?;
    }
    Ok(out)
}

fn sweep(p: &Prepared) -> CliResult<Outcome> {
    let targets = p.config.require_targets().map_err(CliError::config)?;
    let [y] = targets[..] else {
        return Err(CliError::config(Error::config(
            "y",
            "sweep takes exactly one target token",
        )));
    };
    let grid = p.config.require_grid().map_err(CliError::config)?;
    let (model, set) = model_and_adapters(&p.config)?;
    let sweep = remainder_sweep(&model, &set, &p.config.tokens, y, grid)
        .map_err(|e| CliError::compute("remainder_sweep", e))?;
    let mut out = Outcome::default();
    rank_notes(&set, &mut out);
    out.stdout.push(match sweep.fitted_slope {
        Some(s) => format!("fitted_slope={}", num(s)),
        None => "linear_exact=true".into(),
    });
    if p.formats.contains(&ReportFormat::Csv) {
        write(&mut out, p.out_dir.join("sweep.csv"), &report::sweep_csv(&sweep))?;
    }
    if p.formats.contains(&ReportFormat::Json) {
        let file = ReportFile::new("sweep", model.digest_hex(), &p.config, SweepResults { token: y, sweep });
        let text = file.to_json().map_err(|e| CliError::compute("serialize report", e))?;
        write(&mut out, p.out_dir.join("sweep.json"), &text)?;
    }
    Ok(out)
}

/// Executes a parsed command without touching the process streams.
pub fn execute(command: &Command) -> CliResult<Outcome> {
    let (args, run): (&CommonArgs, fn(&Prepared) -> CliResult<Outcome>) = match command {
        Command::GenModel(a) => (a, gen_model),
        Command::GenLora(a) => (a, gen_lora),
        Command::Analyze(a) => (a, analyze),
        Command::Margin(a) => (a, margin),
        Command::Sweep(a) => (a, sweep),
    };
    run(&prepare(args)?)
}

/// Parses `args` (including the program name), runs the command, prints
/// its output and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(out) => {
            for line in &out.stderr {
                eprintln!("note: {line}");
            }
            for line in &out.stdout {
                println!("{line}");
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}

/// Convenience for tests and embedding: run `command` with `config` and `out`.
pub fn run_with(command: &str, config: &Path, out: &Path) -> CliResult<Outcome> {
    let args = ["lorashift", command, "--config"]
        .map(OsString::from)
        .into_iter()
        .chain([
            config.as_os_str().to_owned(),
            "--out".into(),
            out.as_os_str().to_owned(),
        ]);
    let cli = Cli::try_parse_from(args).map_err(|e| CliError {
        code: EXIT_CONFIG,
        message: e.to_string(),
    })?;
    execute(&cli.command)
}
