//! The three experiment protocols behind the CLI: the standard cell
//! comparison at a reference date, the sweep over the global lower bound
//! `T_0`, and time robustness (a frozen model followed across later test
//! dates against freshly trained ones).
//!
//! Every run writes a manifest with the fully resolved config so it can be
//! reproduced exactly, and all output files are deterministic: rerunning the
//! same config produces byte-identical results. Wall-clock progress goes to
//! stderr only.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chrono::{Days, NaiveDate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    build_learning_set, build_test_set, class_balance, EligibilityParams, SampleSet,
};
use crate::error::{Error, Result};
use crate::labeling::ChurnParams;
use crate::metrics::{self, format_mean_std, MetricsReport, SeedAggregate};
use crate::optim::{self, TrainerConfig};
use crate::rnn::{self, Architecture, CellKind, NetworkParameters};
use crate::synth::PopulationConfig;
use crate::timeseries::{
    ingest_activity_log, read_activity_file, read_registration_file, FeatureSchema, PlayerHistory,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Standard,
    SweepT0,
    TimeRobustness,
}

/// Where the player histories come from: a population-generator config, or
/// a pair of activity/registration files with an ingestion window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DataSource {
    Generator {
        generator: PathBuf,
    },
    Files {
        activity: PathBuf,
        registrations: PathBuf,
        start_date: NaiveDate,
        end_date: NaiveDate,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureConfig {
    /// Cell kinds to compare; the sweep and robustness protocols use exactly
    /// one.
    pub cells: Vec<CellKind>,
    pub first_layer: usize,
    pub second_layer: usize,
}

/// Eligibility knobs as they appear in config files; the prediction horizon
/// itself comes from the churn section.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EligibilitySection {
    pub t0: NaiveDate,
    #[serde(default = "default_t0_offset")]
    pub t0_offset: u32,
    #[serde(default = "default_t_h")]
    pub t_h: u32,
    #[serde(default = "default_recent_window")]
    pub recent_activity_window: u32,
    #[serde(default = "default_min_active")]
    pub min_active_days: u32,
}

fn default_t0_offset() -> u32 {
    60
}
fn default_t_h() -> u32 {
    60
}
fn default_recent_window() -> u32 {
    30
}
fn default_min_active() -> u32 {
    1
}
fn default_threshold() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    /// Reference date `t` at which models are learned and evaluated.
    pub t: NaiveDate,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    pub data: DataSource,
    pub architecture: ArchitectureConfig,
    #[serde(default)]
    pub trainer: TrainerConfig,
    pub eligibility: EligibilitySection,
    #[serde(default)]
    pub churn: ChurnParams,
    /// Ascending `T_0` values for the sweep protocol.
    #[serde(default)]
    pub t0_values: Vec<NaiveDate>,
    /// Ascending evaluation dates (`>= t`) for the robustness protocol.
    #[serde(default)]
    pub eval_dates: Vec<NaiveDate>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::config(format!("experiment config: {e}")))?;
        Ok(config)
    }

    /// Loads a config file, resolving relative data paths against the
    /// config's own directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut config = Self::from_toml_str(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.data {
            DataSource::Generator { generator } => fix(generator),
            DataSource::Files {
                activity,
                registrations,
                ..
            } => {
                fix(activity);
                fix(registrations);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("seeds must not be empty"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::config("threshold must lie strictly between 0 and 1"));
        }
        if self.architecture.cells.is_empty() {
            return Err(Error::config("architecture.cells must not be empty"));
        }
        self.trainer.validate()?;
        self.eligibility_params().validate()?;
        let upper = self.t - Days::new(self.churn.t_pred as u64);
        match self.kind {
            ExperimentKind::Standard => {}
            ExperimentKind::SweepT0 => {
                if self.architecture.cells.len() != 1 {
                    return Err(Error::config("the T_0 sweep uses exactly one cell kind"));
                }
                if self.t0_values.is_empty() {
                    return Err(Error::config("t0_values must not be empty for the sweep"));
                }
                if self.t0_values.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::config("t0_values must be strictly ascending"));
                }
                if self.t0_values.iter().any(|&v| v > upper) {
                    return Err(Error::config(format!(
                        "every T_0 must be at most t - T_pred = {upper}"
                    )));
                }
            }
            ExperimentKind::TimeRobustness => {
                if self.architecture.cells.len() != 1 {
                    return Err(Error::config("time robustness uses exactly one cell kind"));
                }
                if self.eval_dates.is_empty() {
                    return Err(Error::config("eval_dates must not be empty"));
                }
                if self.eval_dates.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::config("eval_dates must be strictly ascending"));
                }
                if self.eval_dates[0] < self.t {
                    return Err(Error::config("eval_dates must start at or after t"));
                }
            }
        }
        Ok(())
    }

    pub fn eligibility_params(&self) -> EligibilityParams {
        EligibilityParams {
            t0: self.eligibility.t0,
            t0_offset: self.eligibility.t0_offset,
            t_pred: self.churn.t_pred,
            t_h: self.eligibility.t_h,
            recent_activity_window: self.eligibility.recent_activity_window,
            min_active_days: self.eligibility.min_active_days,
        }
    }

    /// Loads (or generates) the player histories behind this experiment.
    pub fn load_histories(&self) -> Result<Vec<PlayerHistory>> {
        match &self.data {
            DataSource::Generator { generator } => {
                let population = PopulationConfig::from_toml_file(generator)?;
                crate::synth::generate_population(&population)
            }
            DataSource::Files {
                activity,
                registrations,
                start_date,
                end_date,
            } => {
                let rows = read_activity_file(activity)?;
                let regs = read_registration_file(registrations)?;
                ingest_activity_log(
                    &rows,
                    &regs,
                    &FeatureSchema::canonical(),
                    (*start_date, *end_date),
                )
            }
        }
    }
}

/// Fails fast when the data range cannot support the protocol, before any
/// training starts.
fn check_coverage(
    histories: &[PlayerHistory],
    needed_start: NaiveDate,
    needed_end: NaiveDate,
) -> Result<()> {
    let Some(first) = histories.first() else {
        return Err(Error::InvalidInput("no player histories".into()));
    };
    let have_start = first.start_date;
    let have_end = first.end_date();
    if have_start > needed_start || have_end < needed_end {
        return Err(Error::Coverage {
            needed_start,
            needed_end,
            have_start,
            have_end,
        });
    }
    Ok(())
}

/// Scores every sample and assembles a metrics report.
pub fn evaluate_model(
    params: &NetworkParameters,
    set: &SampleSet,
    threshold: f64,
    seed: u64,
) -> Result<MetricsReport> {
    let probabilities: Vec<f64> = set
        .samples
        .par_iter()
        .map(|s| rnn::forward(params, &s.trajectory))
        .collect::<Result<_>>()?;
    let labels: Vec<u8> = set.samples.iter().map(|s| s.label).collect();
    metrics::evaluate(&probabilities, &labels, threshold, seed)
}

fn train_one(
    config: &ExperimentConfig,
    cell: CellKind,
    seed: u64,
    learning: &SampleSet,
    context: &str,
) -> Result<NetworkParameters> {
    let arch = Architecture::new(
        cell,
        config.architecture.first_layer,
        config.architecture.second_layer,
        FeatureSchema::canonical().len(),
    )?;
    let trainer = config.trainer.with_seed(seed);
    let outcome = optim::train_with(&arch, learning, &trainer, |log| {
        eprintln!(
            "[{context}] cell={cell} seed={seed} epoch {}/{} loss {:.6} ({:.1}s)",
            log.epoch + 1,
            trainer.n_epochs,
            log.mean_loss,
            log.wall_secs
        );
    })?;
    Ok(outcome.parameters)
}

fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Serialize)]
struct Manifest<'a> {
    format_version: u32,
    package_version: &'a str,
    config: &'a ExperimentConfig,
}

fn write_manifest(config: &ExperimentConfig, dir: &Path) -> Result<()> {
    let manifest = Manifest {
        format_version: 1,
        package_version: env!("CARGO_PKG_VERSION"),
        config,
    };
    let text = toml::to_string_pretty(&manifest)
        .map_err(|e| Error::config(format!("manifest encode: {e}")))?;
    write_atomic(&dir.join("manifest.toml"), &text)
}

fn opt_metric(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "n/a".into())
}

fn metrics_csv_rows(out: &mut String, key: &str, reports: &[MetricsReport]) {
    for r in reports {
        let c = r.counts;
        let _ = writeln!(
            out,
            "{key},{},{},{},{},{},{},{},{}",
            r.seed,
            c.true_positives,
            c.false_positives,
            c.true_negatives,
            c.false_negatives,
            opt_metric(r.metrics.precision),
            opt_metric(r.metrics.recall),
            r.metrics.accuracy,
        );
    }
}

// ---------------------------------------------------------------------------
// Standard experiment
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct CellSummary {
    pub cell: CellKind,
    pub reports: Vec<MetricsReport>,
    pub aggregate: SeedAggregate,
}

#[derive(Clone, Debug)]
pub struct StandardOutcome {
    pub cells: Vec<CellSummary>,
    pub learning_size: usize,
    pub learning_excluded: usize,
    pub test_size: usize,
    pub learning_balance: f64,
    pub test_balance: f64,
}

/// Renders the per-cell aggregate table: one row per cell kind,
/// `mean ± std` per metric.
pub fn render_summary_table(outcome: &StandardOutcome) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "learning set: {} samples ({} excluded), churn fraction {:.4}",
        outcome.learning_size, outcome.learning_excluded, outcome.learning_balance
    );
    let _ = writeln!(
        out,
        "test set:     {} samples, churn fraction {:.4}",
        outcome.test_size, outcome.test_balance
    );
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "{:<6} | {:>21} | {:>21} | {:>21}",
        "layer", "precision (churn)", "recall (churn)", "accuracy"
    );
    let _ = writeln!(out, "{}", "-".repeat(78));
    for cell in &outcome.cells {
        let _ = writeln!(
            out,
            "{:<6} | {:>21} | {:>21} | {:>21}",
            cell.cell.name(),
            format_mean_std(&cell.aggregate.precision),
            format_mean_std(&cell.aggregate.recall),
            format_mean_std(&cell.aggregate.accuracy),
        );
    }
    out
}

/// The standard protocol: build `LS_t` and `TS_t` once, then train and
/// evaluate every (cell kind, seed) pair and aggregate per cell.
pub fn run_standard(config: &ExperimentConfig) -> Result<StandardOutcome> {
    config.validate()?;
    if config.kind != ExperimentKind::Standard {
        return Err(Error::config("config kind is not `standard`"));
    }
    let schema = FeatureSchema::canonical();
    let eligibility = config.eligibility_params();
    let histories = config.load_histories()?;
    check_coverage(
        &histories,
        config.eligibility.t0 - Days::new(config.eligibility.t_h as u64),
        config.t + Days::new((config.churn.t_pred + config.churn.t_c) as u64),
    )?;

    let learning = build_learning_set(&histories, config.t, &eligibility, &config.churn, &schema)?;
    let test = build_test_set(&histories, config.t, &eligibility, &config.churn, &schema)?;
    eprintln!(
        "[standard] learning set {} samples ({} excluded), test set {} samples",
        learning.len(),
        learning.excluded,
        test.len()
    );

    std::fs::create_dir_all(&config.output_dir)?;
    let mut cells = Vec::new();
    for &cell in &config.architecture.cells {
        let mut reports = Vec::new();
        for &seed in &config.seeds {
            let params = train_one(config, cell, seed, &learning, "standard")?;
            rnn::save_model_file(
                config.output_dir.join(format!("model_{}_seed{}.ebbm", cell.name(), seed)),
                &params,
            )?;
            let report = evaluate_model(&params, &test, config.threshold, seed)?;
            eprintln!(
                "[standard] cell={cell} seed={seed} accuracy {:.4}",
                report.metrics.accuracy
            );
            reports.push(report);
        }
        let aggregate = metrics::aggregate_over_seeds(&reports)?;
        cells.push(CellSummary {
            cell,
            reports,
            aggregate,
        });
    }

    let outcome = StandardOutcome {
        cells,
        learning_size: learning.len(),
        learning_excluded: learning.excluded,
        test_size: test.len(),
        learning_balance: class_balance(&learning)?,
        test_balance: class_balance(&test)?,
    };

    write_manifest(config, &config.output_dir)?;
    write_atomic(
        &config.output_dir.join("table.txt"),
        &render_summary_table(&outcome),
    )?;
    let mut csv = String::from("cell,seed,tp,fp,tn,fn,precision,recall,accuracy\n");
    for cell in &outcome.cells {
        metrics_csv_rows(&mut csv, cell.cell.name(), &cell.reports);
    }
    write_atomic(&config.output_dir.join("metrics.csv"), &csv)?;
    let mut agg = String::from("cell,metric,mean,std,defined,skipped\n");
    for cell in &outcome.cells {
        for (metric, value) in [
            ("precision", &cell.aggregate.precision),
            ("recall", &cell.aggregate.recall),
            ("accuracy", &cell.aggregate.accuracy),
        ] {
            let _ = writeln!(
                agg,
                "{},{},{},{},{},{}",
                cell.cell.name(),
                metric,
                opt_metric(value.mean),
                opt_metric(value.std),
                value.defined,
                value.skipped
            );
        }
    }
    write_atomic(&config.output_dir.join("aggregate.csv"), &agg)?;
    Ok(outcome)
}

// ---------------------------------------------------------------------------
// T_0 sweep
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub t0: NaiveDate,
    pub learning_size: usize,
    /// True when the learning set at this `T_0` was empty and the point was
    /// recorded but not trained.
    pub skipped: bool,
    pub reports: Vec<MetricsReport>,
    pub aggregate: Option<SeedAggregate>,
}

#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub points: Vec<SweepPoint>,
    pub test_size: usize,
}

/// The `T_0` sweep: one model per (T_0, seed) at fixed `t`, all evaluated on
/// the same `TS_t`.
pub fn run_sweep_t0(config: &ExperimentConfig) -> Result<SweepOutcome> {
    config.validate()?;
    if config.kind != ExperimentKind::SweepT0 {
        return Err(Error::config("config kind is not `sweep-t0`"));
    }
    let schema = FeatureSchema::canonical();
    let histories = config.load_histories()?;
    let min_t0 = config.t0_values[0];
    check_coverage(
        &histories,
        min_t0 - Days::new(config.eligibility.t_h as u64),
        config.t + Days::new((config.churn.t_pred + config.churn.t_c) as u64),
    )?;
    let cell = config.architecture.cells[0];

    let base_eligibility = config.eligibility_params();
    let test = build_test_set(&histories, config.t, &base_eligibility, &config.churn, &schema)?;

    std::fs::create_dir_all(&config.output_dir)?;
    let mut points = Vec::new();
    for &t0 in &config.t0_values {
        let eligibility = EligibilityParams {
            t0,
            ..base_eligibility
        };
        let learning =
            build_learning_set(&histories, config.t, &eligibility, &config.churn, &schema)?;
        eprintln!("[sweep-t0] T_0={t0}: {} learning samples", learning.len());
        if learning.is_empty() {
            points.push(SweepPoint {
                t0,
                learning_size: 0,
                skipped: true,
                reports: Vec::new(),
                aggregate: None,
            });
            continue;
        }
        let mut reports = Vec::new();
        for &seed in &config.seeds {
            let params = train_one(config, cell, seed, &learning, "sweep-t0")?;
            rnn::save_model_file(
                config
                    .output_dir
                    .join(format!("model_t0_{t0}_seed{seed}.ebbm")),
                &params,
            )?;
            reports.push(evaluate_model(&params, &test, config.threshold, seed)?);
        }
        let aggregate = metrics::aggregate_over_seeds(&reports)?;
        points.push(SweepPoint {
            t0,
            learning_size: learning.len(),
            skipped: false,
            reports,
            aggregate: Some(aggregate),
        });
    }

    let outcome = SweepOutcome {
        points,
        test_size: test.len(),
    };
    write_manifest(config, &config.output_dir)?;
    let mut sizes = String::from("t0,learning_size,skipped\n");
    for p in &outcome.points {
        let _ = writeln!(sizes, "{},{},{}", p.t0, p.learning_size, p.skipped);
    }
    write_atomic(&config.output_dir.join("sweep_points.csv"), &sizes)?;
    let mut csv = String::from("t0,seed,tp,fp,tn,fn,precision,recall,accuracy\n");
    for p in &outcome.points {
        metrics_csv_rows(&mut csv, &p.t0.to_string(), &p.reports);
    }
    write_atomic(&config.output_dir.join("sweep_metrics.csv"), &csv)?;
    let mut agg = String::from("t0,metric,mean,std\n");
    for p in &outcome.points {
        if let Some(a) = &p.aggregate {
            for (metric, value) in [
                ("precision", &a.precision),
                ("recall", &a.recall),
                ("accuracy", &a.accuracy),
            ] {
                let _ = writeln!(
                    agg,
                    "{},{},{},{}",
                    p.t0,
                    metric,
                    opt_metric(value.mean),
                    opt_metric(value.std)
                );
            }
        }
    }
    write_atomic(&config.output_dir.join("sweep_aggregate.csv"), &agg)?;
    Ok(outcome)
}

// ---------------------------------------------------------------------------
// Time robustness
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct RobustnessPoint {
    pub t_prime: NaiveDate,
    pub test_size: usize,
    pub frozen: Vec<MetricsReport>,
    pub fresh: Vec<MetricsReport>,
    pub frozen_aggregate: SeedAggregate,
    pub fresh_aggregate: SeedAggregate,
}

#[derive(Clone, Debug)]
pub struct RobustnessOutcome {
    pub base: NaiveDate,
    pub points: Vec<RobustnessPoint>,
}

/// Time robustness: train once at `t` per seed (the frozen models), then at
/// every `t'` evaluate them on `TS_t'` next to models freshly trained on
/// `LS_t'` with the same seeds.
pub fn run_time_robustness(config: &ExperimentConfig) -> Result<RobustnessOutcome> {
    config.validate()?;
    if config.kind != ExperimentKind::TimeRobustness {
        return Err(Error::config("config kind is not `time-robustness`"));
    }
    let schema = FeatureSchema::canonical();
    let histories = config.load_histories()?;
    let last = *config.eval_dates.last().expect("validated nonempty");
    check_coverage(
        &histories,
        config.eligibility.t0 - Days::new(config.eligibility.t_h as u64),
        last + Days::new((config.churn.t_pred + config.churn.t_c) as u64),
    )?;
    let cell = config.architecture.cells[0];
    let eligibility = config.eligibility_params();

    std::fs::create_dir_all(&config.output_dir)?;
    let base_learning =
        build_learning_set(&histories, config.t, &eligibility, &config.churn, &schema)?;
    let mut frozen_models = Vec::new();
    for &seed in &config.seeds {
        let params = train_one(config, cell, seed, &base_learning, "robustness/frozen")?;
        rnn::save_model_file(
            config.output_dir.join(format!("model_frozen_seed{seed}.ebbm")),
            &params,
        )?;
        frozen_models.push((seed, params));
    }

    let mut points = Vec::new();
    for &t_prime in &config.eval_dates {
        let test = build_test_set(&histories, t_prime, &eligibility, &config.churn, &schema)?;
        let mut frozen = Vec::new();
        for (seed, params) in &frozen_models {
            frozen.push(evaluate_model(params, &test, config.threshold, *seed)?);
        }
        let fresh_learning =
            build_learning_set(&histories, t_prime, &eligibility, &config.churn, &schema)?;
        let mut fresh = Vec::new();
        for &seed in &config.seeds {
            let params = train_one(config, cell, seed, &fresh_learning, "robustness/fresh")?;
            rnn::save_model_file(
                config
                    .output_dir
                    .join(format!("model_fresh_{t_prime}_seed{seed}.ebbm")),
                &params,
            )?;
            fresh.push(evaluate_model(&params, &test, config.threshold, seed)?);
        }
        eprintln!(
            "[robustness] t'={t_prime}: frozen acc {:.4}, fresh acc {:.4} ({} test samples)",
            metrics::aggregate_over_seeds(&frozen)?.accuracy.mean.unwrap_or(f64::NAN),
            metrics::aggregate_over_seeds(&fresh)?.accuracy.mean.unwrap_or(f64::NAN),
            test.len()
        );
        points.push(RobustnessPoint {
            t_prime,
            test_size: test.len(),
            frozen_aggregate: metrics::aggregate_over_seeds(&frozen)?,
            fresh_aggregate: metrics::aggregate_over_seeds(&fresh)?,
            frozen,
            fresh,
        });
    }

    let outcome = RobustnessOutcome {
        base: config.t,
        points,
    };
    write_manifest(config, &config.output_dir)?;
    let mut csv = String::from("t_prime,model,seed,tp,fp,tn,fn,precision,recall,accuracy\n");
    for p in &outcome.points {
        metrics_csv_rows(&mut csv, &format!("{},frozen", p.t_prime), &p.frozen);
        metrics_csv_rows(&mut csv, &format!("{},fresh", p.t_prime), &p.fresh);
    }
    write_atomic(&config.output_dir.join("robustness_metrics.csv"), &csv)?;
    let mut agg = String::from("t_prime,model,metric,mean,std\n");
    for p in &outcome.points {
        for (model, a) in [("frozen", &p.frozen_aggregate), ("fresh", &p.fresh_aggregate)] {
            for (metric, value) in [
                ("precision", &a.precision),
                ("recall", &a.recall),
                ("accuracy", &a.accuracy),
            ] {
                let _ = writeln!(
                    agg,
                    "{},{},{},{},{}",
                    p.t_prime,
                    model,
                    metric,
                    opt_metric(value.mean),
                    opt_metric(value.std)
                );
            }
        }
    }
    write_atomic(&config.output_dir.join("robustness_aggregate.csv"), &agg)?;
    Ok(outcome)
}
