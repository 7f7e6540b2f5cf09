//! `ebb`: churn prediction on daily activity series.
//!
//! Subcommands cover the whole pipeline (generate, label, build-dataset,
//! train, evaluate) plus the three experiment protocols (run-standard,
//! run-sweep-t0, run-time-robustness). Command-line flags override config
//! file values, which override built-in defaults.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data-coverage error,
//! 4 numeric failure, 1 anything else.

use std::path::PathBuf;
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};

use ebb_core::dataset::{self, EligibilityParams, SetKind};
use ebb_core::experiments::{self, ExperimentConfig};
use ebb_core::labeling::{self, ChurnParams};
use ebb_core::metrics::MetricsReport;
use ebb_core::optim::{self, TrainerConfig};
use ebb_core::rnn::{self, Architecture, CellKind};
use ebb_core::synth::{self, PopulationConfig};
use ebb_core::timeseries::{self, FeatureSchema};
use ebb_core::Error;

#[derive(Parser)]
#[command(name = "ebb", version, about = "Churn prediction with recurrent networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic population as activity and registration files
    Generate(GenerateArgs),
    /// Compute churn labels for a dense series file
    Label(LabelArgs),
    /// Build a learning or test sample set from activity logs
    BuildDataset(BuildDatasetArgs),
    /// Train a network on a sample-set file
    Train(TrainArgs),
    /// Evaluate a saved model on a sample-set file
    Evaluate(EvaluateArgs),
    /// Run the standard cell-comparison experiment
    RunStandard(ExperimentArgs),
    /// Run the T_0 sweep experiment
    RunSweepT0(ExperimentArgs),
    /// Run the time-robustness experiment
    RunTimeRobustness(ExperimentArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Population config (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Directory for activity.csv and registrations.csv
    #[arg(long)]
    out_dir: PathBuf,
    /// Override the configured player count
    #[arg(long)]
    players: Option<usize>,
    /// Override the configured seed
    #[arg(long)]
    seed: Option<u64>,
    /// Also export the dense per-player series to this file
    #[arg(long)]
    dense: Option<PathBuf>,
}

#[derive(Args)]
struct LabelArgs {
    /// Dense series file (player_id,date,<features>)
    #[arg(long)]
    series: PathBuf,
    /// Output file (player_id,date,c,y); y is empty where the horizon
    /// leaves the series
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 35)]
    t_c: u32,
    #[arg(long, default_value_t = 30)]
    t_pred: u32,
}

#[derive(Args)]
struct BuildDatasetArgs {
    #[arg(long)]
    activity: PathBuf,
    #[arg(long)]
    registrations: PathBuf,
    /// First day of the ingestion window
    #[arg(long)]
    start_date: NaiveDate,
    /// Last day of the ingestion window
    #[arg(long)]
    end_date: NaiveDate,
    /// Reference date t
    #[arg(long)]
    t: NaiveDate,
    /// learning or test
    #[arg(long)]
    kind: String,
    /// Global lower bound T_0 (learning sets; defaults to the window start)
    #[arg(long)]
    t0: Option<NaiveDate>,
    #[arg(long, default_value_t = 60)]
    t0_offset: u32,
    #[arg(long, default_value_t = 60)]
    t_h: u32,
    #[arg(long, default_value_t = 30)]
    recent_window: u32,
    #[arg(long, default_value_t = 1)]
    min_active_days: u32,
    #[arg(long, default_value_t = 35)]
    t_c: u32,
    #[arg(long, default_value_t = 30)]
    t_pred: u32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Sample-set file produced by build-dataset
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "lstm")]
    cell: String,
    #[arg(long, default_value_t = 128)]
    first_layer: usize,
    #[arg(long, default_value_t = 64)]
    second_layer: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    alpha: f64,
    #[arg(long, default_value_t = 0.9)]
    decay: f64,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    /// Model output file
    #[arg(long)]
    out: PathBuf,
    /// Optional training log (epoch, mean loss, wall seconds)
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Write the machine-readable key/value report here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment config (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Override the output directory
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Override the seed list, comma-separated
    #[arg(long)]
    seeds: Option<String>,
    /// Override the cell kinds, comma-separated
    #[arg(long)]
    cells: Option<String>,
    /// Override the epoch count
    #[arg(long)]
    epochs: Option<usize>,
    /// Override the classification threshold
    #[arg(long)]
    threshold: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Schema(_) => 2,
        Error::Coverage { .. } => 3,
        Error::Numeric { .. } => 4,
        _ => 1,
    }
}

fn run(command: Command) -> ebb_core::Result<()> {
    match command {
        Command::Generate(args) => generate(args),
        Command::Label(args) => label(args),
        Command::BuildDataset(args) => build_dataset(args),
        Command::Train(args) => train(args),
        Command::Evaluate(args) => evaluate(args),
        Command::RunStandard(args) => {
            let config = apply_overrides(ExperimentConfig::load(&args.config)?, &args)?;
            let outcome = experiments::run_standard(&config)?;
            print!("{}", experiments::render_summary_table(&outcome));
            eprintln!("results written to {}", config.output_dir.display());
            Ok(())
        }
        Command::RunSweepT0(args) => {
            let config = apply_overrides(ExperimentConfig::load(&args.config)?, &args)?;
            let outcome = experiments::run_sweep_t0(&config)?;
            for point in &outcome.points {
                println!(
                    "T_0 {}  samples {}  {}",
                    point.t0,
                    point.learning_size,
                    point
                        .aggregate
                        .as_ref()
                        .map(|a| format!(
                            "accuracy {}",
                            ebb_core::metrics::format_mean_std(&a.accuracy)
                        ))
                        .unwrap_or_else(|| "skipped (empty learning set)".into())
                );
            }
            eprintln!("results written to {}", config.output_dir.display());
            Ok(())
        }
        Command::RunTimeRobustness(args) => {
            let config = apply_overrides(ExperimentConfig::load(&args.config)?, &args)?;
            let outcome = experiments::run_time_robustness(&config)?;
            for point in &outcome.points {
                println!(
                    "t' {}  frozen accuracy {}  fresh accuracy {}",
                    point.t_prime,
                    ebb_core::metrics::format_mean_std(&point.frozen_aggregate.accuracy),
                    ebb_core::metrics::format_mean_std(&point.fresh_aggregate.accuracy),
                );
            }
            eprintln!("results written to {}", config.output_dir.display());
            Ok(())
        }
    }
}

fn apply_overrides(
    mut config: ExperimentConfig,
    args: &ExperimentArgs,
) -> ebb_core::Result<ExperimentConfig> {
    if let Some(dir) = &args.output_dir {
        config.output_dir = dir.clone();
    }
    if let Some(seeds) = &args.seeds {
        config.seeds = seeds
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<u64>()
                    .map_err(|e| Error::config(format!("bad seed {s:?}: {e}")))
            })
            .collect::<ebb_core::Result<_>>()?;
    }
    if let Some(cells) = &args.cells {
        config.architecture.cells = cells
            .split(',')
            .map(|s| s.trim().parse::<CellKind>())
            .collect::<ebb_core::Result<_>>()?;
    }
    if let Some(epochs) = args.epochs {
        config.trainer.n_epochs = epochs;
    }
    if let Some(threshold) = args.threshold {
        config.threshold = threshold;
    }
    Ok(config)
}

fn generate(args: GenerateArgs) -> ebb_core::Result<()> {
    let mut config = PopulationConfig::from_toml_file(&args.config)?;
    if let Some(players) = args.players {
        config.player_count = players;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    config.validate()?;
    let histories = synth::generate_population(&config)?;
    std::fs::create_dir_all(&args.out_dir)?;
    let schema = FeatureSchema::canonical();

    let activity_path = args.out_dir.join("activity.csv");
    let file = std::io::BufWriter::new(std::fs::File::create(&activity_path)?);
    timeseries::write_activity_rows(file, &histories, &schema)?;

    let registrations: Vec<timeseries::Registration> = histories
        .iter()
        .map(|h| timeseries::Registration {
            player_id: h.player_id.clone(),
            registration_date: h.registration_date,
            initial_days_since_active: 0,
        })
        .collect();
    let reg_path = args.out_dir.join("registrations.csv");
    let file = std::io::BufWriter::new(std::fs::File::create(&reg_path)?);
    timeseries::write_registrations(file, &registrations)?;

    if let Some(dense) = &args.dense {
        let file = std::io::BufWriter::new(std::fs::File::create(dense)?);
        timeseries::write_dense_series(file, &histories, &schema)?;
    }
    eprintln!(
        "generated {} players over {}..{} into {}",
        histories.len(),
        config.start_date,
        config.end_date,
        args.out_dir.display()
    );
    Ok(())
}

fn label(args: LabelArgs) -> ebb_core::Result<()> {
    let schema = FeatureSchema::canonical();
    let params = ChurnParams::new(args.t_c, args.t_pred)?;
    let file = std::io::BufReader::new(std::fs::File::open(&args.series)?);
    let histories = timeseries::read_dense_series(file, &schema)?;
    let mut out = String::from("player_id,date,c,y\n");
    let mut rows = 0usize;
    for history in &histories {
        let Some((first, last)) = labeling::churn_variable_range(history, &params) else {
            continue;
        };
        let indicator_range = labeling::churn_indicator_range(history, &params);
        for t in first..=last {
            let c = labeling::churn_variable(history, t, &params, &schema)?;
            let y = match indicator_range {
                Some((yf, yl)) if t >= yf && t <= yl => {
                    labeling::churn_indicator(history, t, &params, &schema)?.to_string()
                }
                _ => String::new(),
            };
            out.push_str(&format!(
                "{},{},{},{}\n",
                history.player_id,
                history.date_at(t),
                c,
                y
            ));
            rows += 1;
        }
    }
    std::fs::write(&args.out, out)?;
    eprintln!("wrote {} label rows to {}", rows, args.out.display());
    Ok(())
}

fn build_dataset(args: BuildDatasetArgs) -> ebb_core::Result<()> {
    let schema = FeatureSchema::canonical();
    let rows = timeseries::read_activity_file(&args.activity)?;
    let regs = timeseries::read_registration_file(&args.registrations)?;
    let histories =
        timeseries::ingest_activity_log(&rows, &regs, &schema, (args.start_date, args.end_date))?;
    let churn = ChurnParams::new(args.t_c, args.t_pred)?;
    let eligibility = EligibilityParams {
        t0: args.t0.unwrap_or(args.start_date),
        t0_offset: args.t0_offset,
        t_pred: args.t_pred,
        t_h: args.t_h,
        recent_activity_window: args.recent_window,
        min_active_days: args.min_active_days,
    };
    let set = match args.kind.as_str() {
        "learning" => dataset::build_learning_set(&histories, args.t, &eligibility, &churn, &schema)?,
        "test" => dataset::build_test_set(&histories, args.t, &eligibility, &churn, &schema)?,
        other => return Err(Error::config(format!("kind must be learning or test, got {other:?}"))),
    };
    let file = std::io::BufWriter::new(std::fs::File::create(&args.out)?);
    dataset::write_sample_set(file, &set, &schema, &eligibility, &churn)?;
    eprintln!(
        "{:?} set at {}: {} samples ({} excluded) -> {}",
        set.kind,
        set.as_of,
        set.len(),
        set.excluded,
        args.out.display()
    );
    Ok(())
}

fn train(args: TrainArgs) -> ebb_core::Result<()> {
    let file = std::io::BufReader::new(std::fs::File::open(&args.dataset)?);
    let (set, header) = dataset::read_sample_set(file)?;
    if set.kind != SetKind::Learning {
        eprintln!("note: training on a {:?} set", set.kind);
    }
    let cell: CellKind = args.cell.parse()?;
    let arch = Architecture::new(cell, args.first_layer, args.second_layer, header.schema.len())?;
    let config = TrainerConfig {
        alpha: args.alpha,
        decay: args.decay,
        batch_size: args.batch_size,
        n_epochs: args.epochs,
        seed: args.seed,
        ..TrainerConfig::default()
    };
    let mut log = String::from("epoch,mean_loss,wall_secs\n");
    let outcome = optim::train_with(&arch, &set, &config, |e| {
        eprintln!(
            "epoch {}/{}  loss {:.6}  ({:.1}s)",
            e.epoch + 1,
            config.n_epochs,
            e.mean_loss,
            e.wall_secs
        );
        log.push_str(&format!("{},{},{}\n", e.epoch, e.mean_loss, e.wall_secs));
    })?;
    rnn::save_model_file(&args.out, &outcome.parameters)?;
    if let Some(path) = &args.log {
        std::fs::write(path, log)?;
    }
    eprintln!("model saved to {}", args.out.display());
    Ok(())
}

fn report_key_values(report: &MetricsReport) -> String {
    let mut out = String::new();
    let c = report.counts;
    out.push_str(&format!("threshold={}\n", report.threshold));
    out.push_str(&format!("seed={}\n", report.seed));
    out.push_str(&format!("tp={}\n", c.true_positives));
    out.push_str(&format!("fp={}\n", c.false_positives));
    out.push_str(&format!("tn={}\n", c.true_negatives));
    out.push_str(&format!("fn={}\n", c.false_negatives));
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_else(|| "n/a".into());
    out.push_str(&format!("precision={}\n", fmt(report.metrics.precision)));
    out.push_str(&format!("recall={}\n", fmt(report.metrics.recall)));
    out.push_str(&format!("accuracy={}\n", report.metrics.accuracy));
    out
}

fn evaluate(args: EvaluateArgs) -> ebb_core::Result<()> {
    let params = rnn::load_model_file(&args.model)?;
    let file = std::io::BufReader::new(std::fs::File::open(&args.dataset)?);
    let (set, _) = dataset::read_sample_set(file)?;
    let report = experiments::evaluate_model(&params, &set, args.threshold, params.seed())?;
    let c = report.counts;
    println!(
        "{} samples at threshold {}",
        set.len(),
        report.threshold
    );
    println!("            predicted churn   predicted retained");
    println!("churn       {:>15}   {:>18}", c.true_positives, c.false_negatives);
    println!("retained    {:>15}   {:>18}", c.false_positives, c.true_negatives);
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "n/a".into());
    println!("precision (churn): {}", fmt(report.metrics.precision));
    println!("recall (churn):    {}", fmt(report.metrics.recall));
    println!("accuracy:          {:.6}", report.metrics.accuracy);
    let kv = report_key_values(&report);
    match &args.out {
        Some(path) => std::fs::write(path, kv)?,
        None => print!("{kv}"),
    }
    Ok(())
}
