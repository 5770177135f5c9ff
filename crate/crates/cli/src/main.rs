use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use stellar_core::eval::{emit_plots, DataSource, EvalReport, ExperimentConfig, Session};
use stellar_core::{dataset, persist, synthgen, Error, Result};

#[derive(Parser)]
#[command(name = "stellar", version, about = "Wi-Fi fingerprint localization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (JSON); defaults apply when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic benchmark as dataset CSV files
    Generate(Common),
    /// Train the encoder and classifier and save model files
    Train(Common),
    /// Evaluate the device x CI grid
    Evaluate(Common),
    /// Sweep the positive dropout fraction
    SweepD(Common),
    /// Sweep fingerprints per reference point
    SweepSamples(Common),
    /// Compare against the KNN baselines
    Compare(Common),
    /// Re-emit plot data from a report
    Plots {
        #[command(flatten)]
        common: Common,
        /// Report to read; defaults to <out>/report.json
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p).map_err(|e| e.in_stage("config"))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &c.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn mkdir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn publish(report: &EvalReport, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths = vec![report.write(dir).map_err(|e| e.in_stage("report"))?];
    paths.extend(emit_plots(report, dir).map_err(|e| e.in_stage("plots"))?);
    Ok(paths)
}

fn generate(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let DataSource::Synthetic { world_seed } = cfg.source else {
        return Err(Error::Config("generate needs a synthetic source".into()));
    };
    mkdir(&cfg.out_dir)?;
    let mut paths = Vec::new();
    for b in synthgen::default_benchmark(world_seed.unwrap_or(cfg.seed))? {
        let path = cfg.out_dir.join(format!("{}.csv", b.dataset.building_id()));
        dataset::save_csv(&b.dataset, &path)?;
        paths.push(path);
    }
    Ok(paths)
}

fn train(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let mut session = Session::new(cfg)?;
    let (d, k) = (session.prepared().config.miner.d_fraction, session.prepared().config.split.train_per_rp);
    let fit = session.stellar(d, k)?;
    mkdir(&cfg.out_dir)?;
    let encoder = cfg.out_dir.join("encoder.json");
    let ensemble = cfg.out_dir.join("ensemble.json");
    let history = cfg.out_dir.join("loss_history.json");
    persist::save_siamese(&fit.model, &encoder)?;
    persist::save_ensemble(&fit.ensemble, &ensemble)?;
    let body = json!({
        "param_hash": fit.model.param_hash(),
        "param_count": fit.model.params.count(),
        "siamese_loss": fit.loss_history,
        "boost_loss": fit.ensemble.train_loss,
    });
    let text = serde_json::to_string_pretty(&body)? + "\n";
    std::fs::write(&history, text).map_err(|e| Error::io(&history, e))?;
    Ok(vec![encoder, ensemble, history])
}

fn run(cli: Cli) -> Result<Vec<PathBuf>> {
    match cli.command {
        Command::Generate(c) => generate(&config(&c)?),
        Command::Train(c) => train(&config(&c)?),
        Command::Evaluate(c) => {
            let cfg = config(&c)?;
            publish(&Session::new(&cfg)?.run_pipeline()?, &cfg.out_dir)
        }
        Command::SweepD(c) => {
            let cfg = config(&c)?;
            publish(&Session::new(&cfg)?.sweep_d_report()?, &cfg.out_dir)
        }
        Command::SweepSamples(c) => {
            let cfg = config(&c)?;
            publish(&Session::new(&cfg)?.sweep_samples_report()?, &cfg.out_dir)
        }
        Command::Compare(c) => {
            let cfg = config(&c)?;
            publish(&Session::new(&cfg)?.compare_report()?, &cfg.out_dir)
        }
        Command::Plots { common, report } => {
            let cfg = config(&common)?;
            let path = report.unwrap_or_else(|| cfg.out_dir.join("report.json"));
            let report = EvalReport::load(&path).map_err(|e| e.in_stage("report"))?;
            emit_plots(&report, &cfg.out_dir).map_err(|e| e.in_stage("plots"))
        }
    }
}

fn error_json(e: &Error) -> serde_json::Value {
    let message = match e {
        Error::Stage { source, .. } => source.to_string(),
        other => other.to_string(),
    };
    json!({ "error": { "stage": e.stage(), "message": message } })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.render().to_string();
            eprintln!("{}", json!({ "error": { "stage": "args", "message": message.trim_end() } }));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::FAILURE
        }
    }
}
