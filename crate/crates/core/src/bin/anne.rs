use std::path::PathBuf;
use std::process::ExitCode;

use anne::experiment::{self, ExperimentConfig};
use anne::pipeline::{PipelineConfig, Selector};
use anne::Error;
use clap::{Args, Parser, Subcommand};
use serde_json::Value;

#[derive(Parser)]
#[command(name = "anne", version, about = "Noisy-label sample selection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named preset, applied beneath the config file.
    #[arg(long)]
    preset: Option<String>,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    selector: Option<Selector>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override any config field, e.g. `--set train.epochs=20`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig, Error> {
        let mut raw = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("--config {}: {e}", path.display())))?;
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("config: {e}")))?
            }
            None => Value::Object(Default::default()),
        };
        if let Some(p) = &self.preset {
            raw["preset"] = Value::String(p.clone());
        }
        if let Some(s) = self.seed {
            raw["seeds"] = serde_json::json!([s]);
        }
        if let Some(sel) = self.selector {
            experiment::set_path(&mut raw, &format!("pipeline.selector=\"{sel}\""))?;
            raw["selectors"] = serde_json::json!([sel.to_string()]);
        }
        if let Some(out) = &self.out {
            raw["out_dir"] = Value::String(out.display().to_string());
        }
        for s in &self.set {
            experiment::set_path(&mut raw, s)?;
        }
        ExperimentConfig::from_value(raw)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/test files and a manifest per seed.
    Gen(ConfigArgs),
    /// Run a selector on a stored dataset and stored predictions.
    Select {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        preds: PathBuf,
        /// Take the pipeline settings from this experiment config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        selector: Option<Selector>,
        /// Neighbourhood size for `fixed_knn`.
        #[arg(long = "K", alias = "k")]
        k: Option<usize>,
        /// Report path; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train per seed and write model, history and report.
    Train(ConfigArgs),
    /// Test accuracy of a stored model.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Also write the model's predictions on the dataset.
        #[arg(long)]
        preds_out: Option<PathBuf>,
    },
    /// Compare selectors across seeds; writes compare.csv and compare.json.
    Compare {
        #[command(flatten)]
        args: ConfigArgs,
        /// Comma-separated selector list, overriding the config.
        #[arg(long, value_delimiter = ',')]
        selectors: Vec<Selector>,
    },
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), Error> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Gen(args) => print_json(&experiment::cmd_gen(&args.resolve()?)?),
        Command::Select { dataset, preds, config, selector, k, out } => {
            let mut pipeline = match config {
                Some(path) => ExperimentConfig::load(path)?.pipeline,
                None => PipelineConfig::default(),
            };
            if let Some(s) = selector {
                pipeline.selector = s;
            }
            if let Some(k) = k {
                match pipeline.selector {
                    Selector::FixedKnn(_) => pipeline.selector = Selector::FixedKnn(k),
                    other => return Err(Error::Config(format!("--K: only applies to fixed_knn, selector is {other}"))),
                }
            }
            let report = experiment::cmd_select(dataset, preds, &pipeline)?;
            match out {
                Some(path) => experiment::write_report(path, &report),
                None => print_json(&report),
            }
        }
        Command::Train(args) => print_json(&experiment::cmd_train(&args.resolve()?)?),
        Command::Eval { model, dataset, preds_out } => {
            print_json(&experiment::cmd_eval(model, dataset, preds_out.as_deref())?)
        }
        Command::Compare { args, selectors } => {
            let mut config = args.resolve()?;
            if !selectors.is_empty() {
                config.selectors = selectors;
            }
            print_json(&experiment::cmd_compare(&config)?.rows)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(experiment::exit_code(&e) as u8)
        }
    }
}
