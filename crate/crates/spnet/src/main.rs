use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spnet::config::RunConfig;
use spnet::error::{Error, Result};
use spnet::manifest::Manifest;
use spnet::pipeline;
use spnet::synth::{synth, SynthOptions};

#[derive(Parser)]
#[command(name = "spnet", version, about = "Spherical depth-image shape classification and retrieval")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the depth images every later stage needs.
    Render(RunArgs),
    /// Train the single-view backbone.
    Train(RunArgs),
    /// Learn view weights with the backbone frozen and keep the top M.
    Select(RunArgs),
    /// Train the multi-view ensemble.
    Ensemble(RunArgs),
    /// Report test accuracy of the backbone and ensemble.
    Eval(RunArgs),
    /// Rank test objects by ensemble descriptors and score the rankings.
    Retrieve(RunArgs),
    /// Write a procedural labelled corpus and its manifest.
    Synth(SynthArgs),
    /// Check backpropagation against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// uv, kavrayskiy7, eckert4 or cassini.
    #[arg(long)]
    projection: Option<String>,
    /// selected, plain, major_axes, mvcnn12 or full.
    #[arg(long)]
    views: Option<String>,
    #[arg(long)]
    topm: Option<usize>,
    /// max, avg or weighted.
    #[arg(long)]
    agg: Option<String>,
    /// l1 or l2.
    #[arg(long)]
    metric: Option<String>,
    /// Extra `key=value` settings, as in the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// Total number of objects.
    #[arg(long, default_value_t = 30)]
    count: usize,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 0.25)]
    test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl RunArgs {
    fn load(&self) -> Result<(Manifest, RunConfig)> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let flags = [
            ("seed", self.seed.map(|s| s.to_string())),
            ("projection", self.projection.clone()),
            ("views", self.views.clone()),
            ("top_m", self.topm.map(|m| m.to_string())),
            ("aggregation", self.agg.clone()),
            ("metric", self.metric.clone()),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                cfg.set(k, &v).map_err(Error::Setting)?;
            }
        }
        for kv in &self.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| Error::Setting(format!("expected KEY=VALUE, got {kv:?}")))?;
            cfg.set(k.trim(), v.trim()).map_err(Error::Setting)?;
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        cfg.validate()?;
        Ok((Manifest::load(&self.manifest)?, cfg))
    }
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Render(a) => {
            let (m, cfg) = a.load()?;
            let report = pipeline::cmd_render(&m, &cfg)?;
            eprintln!("rendered {} images, {} already present", report.written, report.skipped);
            for (id, msg) in &report.errors {
                eprintln!("error: {id}: {msg}");
            }
            if !report.errors.is_empty() {
                return Err(Error::Records(report.errors.len()));
            }
        }
        Command::Train(a) => {
            let (m, cfg) = a.load()?;
            let s = pipeline::cmd_train(&m, &cfg)?;
            if let Some(last) = s.final_train {
                eprintln!("trained {} epochs; last train accuracy {:.4}, loss {:.4}", s.epochs_run, last.accuracy, last.loss);
            }
        }
        Command::Select(a) => {
            let (m, cfg) = a.load()?;
            let bank = pipeline::cmd_select(&m, &cfg)?;
            println!("{}", bank.selected.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(","));
        }
        Command::Ensemble(a) => {
            let (m, cfg) = a.load()?;
            let model = pipeline::cmd_ensemble(&m, &cfg)?;
            eprintln!("ensemble of {} views trained", model.views());
        }
        Command::Eval(a) => {
            let (m, cfg) = a.load()?;
            print_json(&pipeline::cmd_eval(&m, &cfg)?)?;
        }
        Command::Retrieve(a) => {
            let (m, cfg) = a.load()?;
            print_json(&pipeline::cmd_retrieve(&m, &cfg)?)?;
        }
        Command::Synth(a) => {
            let opts = SynthOptions {
                count: a.count,
                classes: a.classes,
                test_fraction: a.test_fraction,
                seed: a.seed,
                ..SynthOptions::default()
            };
            let m = synth(&a.out, &opts)?;
            eprintln!("wrote {} objects to {}", m.records.len(), Path::new(&a.out).join("manifest.csv").display());
        }
        Command::Gradcheck { seed } => {
            let s = pipeline::cmd_gradcheck(seed)?;
            print_json(&s)?;
            if !s.passed {
                return Err(Error::Setting(format!("max relative error {} exceeds {}", s.max_rel_error, s.tolerance)));
            }
        }
    }
    Ok(())
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("SPNET_THREADS") else {
        return Ok(());
    };
    let n: usize = v.parse().ok().filter(|&n| n > 0).ok_or_else(|| Error::Setting(format!("SPNET_THREADS={v:?}")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Error::Setting(e.to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match configure_threads().and_then(|_| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
