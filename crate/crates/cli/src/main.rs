use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rexzero::corpus::Setting;
use rexzero::harness::{self, Checkpoints, EvalTarget, EvaluateOptions, ExperimentConfig, OUTPUT_ENV};
use rexzero::metrics::MatchMode;
use rexzero::zerocard::ClassifierMode;
use rexzero::Error;
use serde_json::{json, Value};

/// Zero-cardinality relation extraction experiments.
#[derive(Parser)]
#[command(name = "rexzero", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Materialize NZ/WZ settings and their statistics.
    Prepare(Common),
    /// Write the synthetic corpus as raw JSONL files.
    Synth(Common),
    /// Check prepared data against the expected statistics.
    ValidateStats(Common),
    /// Train the zero-cardinality classifier on WZ.
    TrainClassifier(Common),
    /// Train the configured extractor on the training setting.
    TrainExtractor(Common),
    /// Score a checkpoint on the test setting.
    Evaluate(EvaluateArgs),
    /// Render report tables from a run directory.
    Report(ReportArgs),
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config and REXZERO_OUT.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_setting)]
    train_setting: Option<Setting>,
    #[arg(long, value_parser = parse_setting)]
    test_setting: Option<Setting>,
    /// Extractor name.
    #[arg(long)]
    extractor: Option<String>,
    #[arg(long, value_parser = parse_mode)]
    classifier_mode: Option<ClassifierMode>,
    #[arg(long, value_parser = parse_match)]
    match_mode: Option<MatchMode>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Pipeline {
    EndToEnd,
    TwoStep,
    Classifier,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum, default_value = "end-to-end")]
    pipeline: Pipeline,
    #[arg(long)]
    extractor_checkpoint: Option<PathBuf>,
    #[arg(long)]
    classifier_checkpoint: Option<PathBuf>,
    /// Accept a checkpoint trained under a different setting.
    #[arg(long)]
    allow_setting_override: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory; defaults to the config's output directory.
    run_dir: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

fn parse_setting(s: &str) -> Result<Setting, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_mode(s: &str) -> Result<ClassifierMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_match(s: &str) -> Result<MatchMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

impl Common {
    fn config(&self) -> rexzero::Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => {
                let mut c = ExperimentConfig::default();
                c.override_output(std::env::var_os(OUTPUT_ENV).map(PathBuf::from));
                c
            }
        };
        config.override_output(self.out.clone());
        if let Some(seed) = self.seed {
            config.seed = Some(seed);
        }
        if let Some(s) = self.train_setting {
            config.train_setting = s;
        }
        if let Some(s) = self.test_setting {
            config.test_setting = s;
        }
        if let Some(name) = &self.extractor {
            config.extractor.name = name.clone();
        }
        if let Some(mode) = self.classifier_mode {
            config.classifier.mode = mode;
        }
        if let Some(mode) = self.match_mode {
            config.match_mode = mode;
        }
        config.validate()?;
        Ok(config)
    }
}

fn run(command: Command) -> rexzero::Result<Value> {
    Ok(match command {
        Command::Prepare(c) => {
            let s = harness::cmd_prepare(&c.config()?)?;
            json!({
                "data_dir": s.data_dir,
                "stats": s.stats,
                "stats_ok": s.validation.as_ref().map(|r| r.all_pass()),
            })
        }
        Command::Synth(c) => serde_json::to_value(harness::cmd_synth(&c.config()?)?)?,
        Command::ValidateStats(c) => {
            let report = harness::cmd_validate_stats(&c.config()?)?;
            if !report.all_pass() {
                return Err(Error::Contract(format!(
                    "{} statistics cells differ from the expected counts",
                    report.rows.iter().filter(|r| !r.pass).count()
                )));
            }
            serde_json::to_value(report)?
        }
        Command::TrainClassifier(c) => json!({ "checkpoint": harness::cmd_train_classifier(&c.config()?)? }),
        Command::TrainExtractor(c) => json!({ "checkpoint": harness::cmd_train_extractor(&c.config()?)? }),
        Command::Evaluate(a) => {
            let target = match a.pipeline {
                Pipeline::EndToEnd => EvalTarget::EndToEnd,
                Pipeline::TwoStep => EvalTarget::TwoStep,
                Pipeline::Classifier => EvalTarget::Classifier,
            };
            let checkpoints = Checkpoints {
                extractor: a.extractor_checkpoint,
                classifier: a.classifier_checkpoint,
            };
            let opts = EvaluateOptions {
                allow_setting_override: a.allow_setting_override,
            };
            serde_json::to_value(harness::cmd_evaluate(&a.common.config()?, target, &checkpoints, opts)?)?
        }
        Command::Report(a) => {
            let dir = match a.run_dir {
                Some(d) => d,
                None => a.common.config()?.output_dir,
            };
            let report = harness::cmd_report(&dir)?;
            print!("{}", report.text);
            return Ok(Value::Null);
        }
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": "usage", "message": e.to_string().trim_end() }));
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(Value::Null) => ExitCode::SUCCESS,
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).expect("values serialize"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            ExitCode::FAILURE
        }
    }
}
