//! `nsplearn`: generate constrained demonstrations, learn null-space
//! projections from them, and reproduce the result tables and sweeps.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use nullspace_core::constraint::ConstraintEstimate;
use nullspace_core::evaluation::{evaluate, CSV_HEADER};
use nullspace_core::experiment::{self, ExperimentConfig, Method, Scenario, Table};
use nullspace_core::io;
use nullspace_core::Error;

#[derive(Parser)]
#[command(name = "nsplearn", version, about = "Learn null-space projections from constrained motion data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true)]
    scenario: Option<Scenario>,
    #[arg(long, global = true)]
    method: Option<Method>,
    /// Overrides the number of trials of table and sweep commands.
    #[arg(long, global = true)]
    trials: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Write `train.txt` and `test.txt` for one scenario.
    Generate(#[command(flatten)] Common),
    /// Fit `ũ_ns` and a constraint to a training set.
    Learn {
        #[command(flatten)]
        common: Common,
        /// Training dataset.
        #[arg(long)]
        data: PathBuf,
    },
    /// Score a learnt estimate on a held-out dataset with ground truth.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Held-out dataset.
        #[arg(long)]
        data: PathBuf,
        /// Directory written by `learn`.
        #[arg(long)]
        model: PathBuf,
    },
    /// Toy-policy table: the three toy policies.
    ReproduceTable1(#[command(flatten)] Common),
    /// Arm table: the three arm constraints, both methods.
    ReproduceTable2(#[command(flatten)] Common),
    /// Metrics against the number of training points.
    SweepDataSize(#[command(flatten)] Common),
    /// Metrics against the injected policy noise.
    SweepNoise(#[command(flatten)] Common),
}

fn config(common: &Common) -> nullspace_core::Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(s) = common.scenario {
        cfg.scenario = Some(s);
    }
    if let Some(m) = common.method {
        cfg.method = Some(m);
    }
    if let Some(t) = common.trials {
        cfg.n_trials = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write(dir: &Path, name: &str, contents: &str) -> anyhow::Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn write_table(dir: &Path, stem: &str, table: &Table) -> anyhow::Result<()> {
    let summary = write(dir, &format!("{stem}.csv"), &table.to_csv())?;
    write(dir, &format!("{stem}_trials.csv"), &table.trials_csv())?;
    print!("{}", table.to_csv());
    eprintln!("wrote {}", summary.display());
    Ok(())
}

fn generate(common: &Common) -> anyhow::Result<()> {
    let cfg = config(common)?;
    let (train, test) = experiment::generate_data(&cfg, cfg.seed)?;
    fs::create_dir_all(&common.out)?;
    io::write_dataset(&train, &common.out.join("train.txt"))?;
    io::write_dataset(&test, &common.out.join("test.txt"))?;
    eprintln!(
        "wrote {} training and {} test observations to {}",
        train.len(),
        test.len(),
        common.out.display()
    );
    Ok(())
}

fn learn(common: &Common, data: &Path) -> anyhow::Result<()> {
    let mut cfg = config(common)?;
    let train = io::read_dataset(data)?;
    if cfg.scenario.is_none() {
        cfg.scenario = Some(train.meta.scenario.parse()?);
        cfg.validate()?;
    }
    let learnt = experiment::learn(&cfg, &train, &[cfg.method()], cfg.seed)?;
    let (_, fit) = learnt.fits.first().ok_or_else(|| anyhow!("no constraint was fitted"))?;
    fs::create_dir_all(&common.out)?;
    if let Some(model) = &learnt.model {
        io::write_model(model, &common.out.join("model.txt"))?;
    }
    io::write_estimate(&fit.estimate, &common.out.join("estimate.txt"))?;
    if let Some(d) = &fit.diagnostic {
        eprintln!("warning: {d}");
    }
    eprintln!(
        "learnt {} row(s) with {} (combined error {:e}); wrote {}",
        fit.estimate.n_rows(),
        fit.estimate.method_name(),
        fit.objective,
        common.out.display()
    );
    Ok(())
}

fn evaluate_cmd(common: &Common, data: &Path, model_dir: &Path) -> anyhow::Result<()> {
    let cfg = config(common)?;
    let test = io::read_dataset(data)?;
    let estimate: ConstraintEstimate = io::read_estimate(&model_dir.join("estimate.txt"))?;
    let model_path = model_dir.join("model.txt");
    let model = if model_path.exists() {
        Some(io::read_model(&model_path)?)
    } else {
        None
    };
    let report = evaluate(&estimate, model.as_ref(), &test)?;
    let scenario = cfg.scenario.map_or(test.meta.scenario.clone(), |s| s.name().to_string());
    let csv = format!(
        "{CSV_HEADER}\n{}\n",
        report.csv_row(&scenario, estimate.method_name(), 0)
    );
    write(&common.out, "report.csv", &csv)?;
    print!("{csv}");
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Generate(c) => generate(c),
        Command::Learn { common, data } => learn(common, data),
        Command::Evaluate { common, data, model } => evaluate_cmd(common, data, model),
        Command::ReproduceTable1(c) => write_table(&c.out, "table1", &experiment::reproduce_table1(&config(c)?)?),
        Command::ReproduceTable2(c) => write_table(&c.out, "table2", &experiment::reproduce_table2(&config(c)?)?),
        Command::SweepDataSize(c) => {
            write_table(&c.out, "sweep_data_size", &experiment::sweep_data_size(&config(c)?)?)
        }
        Command::SweepNoise(c) => write_table(&c.out, "sweep_noise", &experiment::sweep_noise(&config(c)?)?),
    }
}

/// Configuration problems exit with 2 like usage errors; everything else with 1.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_)) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
