//! Synthetic player populations.
//!
//! Stands in for production activity logs: a mixture of behavioural
//! archetypes draws per-day activity over the canonical feature schema, a
//! per-day hazard sends players into permanent inactivity, and optional
//! population-wide shock events rescale feature intensities inside a date
//! range. Generation is deterministic in the config seed, with one RNG
//! stream per player so populations are reproducible under parallelism.

use std::collections::BTreeMap;

use chrono::{Datelike, Days, NaiveDate};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{build_test_set, class_balance, EligibilityParams};
use crate::error::{Error, Result};
use crate::labeling::ChurnParams;
use crate::timeseries::{fill_days_since_active, DailyActivity, FeatureSchema, PlayerHistory};

/// One behavioural profile in the mixture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchetypeSpec {
    pub name: String,
    /// Mixture weight; all weights must sum to 1.
    pub weight: f64,
    /// Probability of an active day, before weekly modulation.
    pub daily_activity_rate: f64,
    pub mean_plays: f64,
    pub mean_tickets: f64,
    pub mean_deposits: f64,
    pub mean_withdrawals: f64,
    pub mean_connections: f64,
    pub ggr_mean: f64,
    pub ggr_std: f64,
    /// Per-day probability of entering permanent inactivity.
    pub churn_hazard: f64,
    /// Monday-first multipliers on the activity rate; mean must be 1.
    pub weekly_profile: [f64; 7],
}

/// A population-wide event that rescales feature intensities (and optionally
/// the activity rate, under the key `daily_activity_rate`) inside an
/// inclusive date range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShockEvent {
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub multipliers: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistrationWindow {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationConfig {
    pub seed: u64,
    pub player_count: usize,
    pub start_date: NaiveDate,
    pub end_date: NaiveDate,
    /// Registration dates are drawn uniformly from this window.
    pub registration: RegistrationWindow,
    #[serde(rename = "archetype")]
    pub archetypes: Vec<ArchetypeSpec>,
    #[serde(rename = "shock", default)]
    pub shocks: Vec<ShockEvent>,
}

impl PopulationConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: PopulationConfig =
            toml::from_str(text).map_err(|e| Error::config(format!("population config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_toml_file(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config(format!("population config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.player_count < 1 {
            return Err(Error::config("player_count must be at least 1"));
        }
        if self.start_date > self.end_date {
            return Err(Error::config("start_date is after end_date"));
        }
        if self.registration.start > self.registration.end {
            return Err(Error::config("registration window is inverted"));
        }
        if self.registration.start < self.start_date || self.registration.end > self.end_date {
            return Err(Error::config(
                "registration window must lie inside the data range",
            ));
        }
        if self.archetypes.is_empty() {
            return Err(Error::config("at least one archetype is required"));
        }
        let weight_sum: f64 = self.archetypes.iter().map(|a| a.weight).sum();
        if (weight_sum - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!(
                "archetype weights sum to {weight_sum}, expected 1"
            )));
        }
        let schema = FeatureSchema::canonical();
        for a in &self.archetypes {
            if a.weight < 0.0 {
                return Err(Error::config(format!("archetype {:?}: negative weight", a.name)));
            }
            if !(0.0..=1.0).contains(&a.daily_activity_rate) {
                return Err(Error::config(format!(
                    "archetype {:?}: daily_activity_rate outside [0, 1]",
                    a.name
                )));
            }
            if !(0.0..=1.0).contains(&a.churn_hazard) {
                return Err(Error::config(format!(
                    "archetype {:?}: churn_hazard outside [0, 1]",
                    a.name
                )));
            }
            for mean in [
                a.mean_plays,
                a.mean_tickets,
                a.mean_deposits,
                a.mean_withdrawals,
                a.mean_connections,
                a.ggr_std,
            ] {
                if mean < 0.0 || !mean.is_finite() {
                    return Err(Error::config(format!(
                        "archetype {:?}: negative or non-finite intensity",
                        a.name
                    )));
                }
            }
            let profile_mean = a.weekly_profile.iter().sum::<f64>() / 7.0;
            if a.weekly_profile.iter().any(|&w| w < 0.0) || (profile_mean - 1.0).abs() > 1e-9 {
                return Err(Error::config(format!(
                    "archetype {:?}: weekly_profile must be non-negative with mean 1",
                    a.name
                )));
            }
        }
        for shock in &self.shocks {
            if shock.start > shock.end {
                return Err(Error::config("shock date range is inverted"));
            }
            for (key, &mult) in &shock.multipliers {
                let known = key == "daily_activity_rate"
                    || schema
                        .feature_index(key)
                        .is_some_and(|i| Some(i) != schema.days_since_active_index());
                if !known {
                    return Err(Error::config(format!(
                        "shock multiplier targets unknown feature {key:?}"
                    )));
                }
                if mult < 0.0 || !mult.is_finite() {
                    return Err(Error::config(format!(
                        "shock multiplier for {key:?} must be finite and non-negative"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Per-day multipliers assembled from the shocks covering one date.
#[derive(Clone, Copy)]
struct DayMultipliers {
    rate: f64,
    plays: f64,
    casino_ggr: f64,
    tickets: f64,
    sport_ggr: f64,
    deposits: f64,
    withdrawals: f64,
    connections: f64,
}

impl DayMultipliers {
    fn identity() -> Self {
        DayMultipliers {
            rate: 1.0,
            plays: 1.0,
            casino_ggr: 1.0,
            tickets: 1.0,
            sport_ggr: 1.0,
            deposits: 1.0,
            withdrawals: 1.0,
            connections: 1.0,
        }
    }
}

fn multiplier_table(config: &PopulationConfig) -> Vec<DayMultipliers> {
    let days = (config.end_date - config.start_date).num_days() as usize + 1;
    let mut table = vec![DayMultipliers::identity(); days];
    for shock in &config.shocks {
        for (i, entry) in table.iter_mut().enumerate() {
            let date = config.start_date + Days::new(i as u64);
            if date < shock.start || date > shock.end {
                continue;
            }
            for (key, &mult) in &shock.multipliers {
                match key.as_str() {
                    "daily_activity_rate" => entry.rate *= mult,
                    "casino_plays" => entry.plays *= mult,
                    "casino_ggr" => entry.casino_ggr *= mult,
                    "sport_tickets" => entry.tickets *= mult,
                    "sport_ggr" => entry.sport_ggr *= mult,
                    "deposits" => entry.deposits *= mult,
                    "withdrawals" => entry.withdrawals *= mult,
                    "connections" => entry.connections *= mult,
                    _ => unreachable!("validated earlier"),
                }
            }
        }
    }
    table
}

fn poisson_count(rng: &mut ChaCha8Rng, mean: f64) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    let dist = Poisson::new(mean).expect("positive finite mean");
    dist.sample(rng)
}

fn truncated_normal(rng: &mut ChaCha8Rng, mean: f64, std: f64) -> f64 {
    if std <= 0.0 {
        return mean;
    }
    let dist = Normal::new(mean, std).expect("finite parameters");
    dist.sample(rng).clamp(mean - 5.0 * std, mean + 5.0 * std)
}

fn generate_player(
    config: &PopulationConfig,
    schema: &FeatureSchema,
    multipliers: &[DayMultipliers],
    index: usize,
) -> PlayerHistory {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64);
    let player_id = format!("p{index:06}");

    let reg_span = (config.registration.end - config.registration.start).num_days() as u64;
    let registration_date =
        config.registration.start + Days::new(rng.gen_range(0..=reg_span));

    let archetype = {
        let mut pick = rng.gen_range(0.0..1.0);
        let mut chosen = config.archetypes.last().expect("nonempty");
        for a in &config.archetypes {
            if pick < a.weight {
                chosen = a;
                break;
            }
            pick -= a.weight;
        }
        chosen
    };

    let n_days = (config.end_date - config.start_date).num_days() as usize + 1;
    let mut days = Vec::with_capacity(n_days);
    let mut alive = true;
    for i in 0..n_days {
        let date = config.start_date + Days::new(i as u64);
        let mut values = vec![0.0; schema.len()];
        if date >= registration_date {
            if alive && rng.gen_bool(archetype.churn_hazard) {
                alive = false;
            }
            if alive {
                let m = &multipliers[i];
                let weekday = date.weekday().num_days_from_monday() as usize;
                let rate = (archetype.daily_activity_rate
                    * archetype.weekly_profile[weekday]
                    * m.rate)
                    .clamp(0.0, 1.0);
                let active = rng.gen_bool(rate);
                if active {
                    let mean_plays = archetype.mean_plays * m.plays;
                    let mean_tickets = archetype.mean_tickets * m.tickets;
                    let mean_deposits = archetype.mean_deposits * m.deposits;
                    values[0] = poisson_count(&mut rng, mean_plays);
                    values[2] = poisson_count(&mut rng, mean_tickets);
                    values[4] = poisson_count(&mut rng, mean_deposits);
                    // An active day must carry at least one churn-defining
                    // event; bump the likeliest feature unless a shock has
                    // zeroed them all.
                    if values[0] + values[2] + values[4] == 0.0 {
                        let means = [mean_plays, mean_tickets, mean_deposits];
                        if let Some(best) = (0..3)
                            .filter(|&k| means[k] > 0.0)
                            .max_by(|&a, &b| means[a].total_cmp(&means[b]))
                        {
                            values[[0, 2, 4][best]] = 1.0;
                        }
                    }
                    if values[0] > 0.0 {
                        values[1] = truncated_normal(
                            &mut rng,
                            archetype.ggr_mean,
                            archetype.ggr_std,
                        ) * m.casino_ggr;
                    }
                    if values[2] > 0.0 {
                        values[3] = truncated_normal(
                            &mut rng,
                            archetype.ggr_mean * 0.5,
                            archetype.ggr_std * 0.5,
                        ) * m.sport_ggr;
                    }
                    values[5] = poisson_count(
                        &mut rng,
                        archetype.mean_withdrawals * m.withdrawals,
                    );
                    values[6] = 1.0
                        + poisson_count(&mut rng, archetype.mean_connections * m.connections);
                } else {
                    // Players sometimes log in without any gambling activity.
                    values[6] =
                        poisson_count(&mut rng, archetype.mean_connections * m.connections * 0.25);
                }
            }
        }
        days.push(DailyActivity { values });
    }

    let mut history = PlayerHistory {
        player_id,
        registration_date,
        start_date: config.start_date,
        days,
    };
    fill_days_since_active(&mut history, schema, 0);
    history
}

/// Generates the whole population, sorted by player id. Players generate in
/// parallel; output is a pure function of the config.
pub fn generate_population(config: &PopulationConfig) -> Result<Vec<PlayerHistory>> {
    config.validate()?;
    let schema = FeatureSchema::canonical();
    let multipliers = multiplier_table(config);
    let histories: Vec<PlayerHistory> = (0..config.player_count)
        .into_par_iter()
        .map(|i| generate_player(config, &schema, &multipliers, i))
        .collect();
    Ok(histories)
}

/// Scales every archetype's churn hazard by bisection until the test-set
/// churn prevalence at `t` lands within ±0.02 of `target`, estimating over
/// at least 5000 players. Returns the adjusted config (with its original
/// player count).
pub fn calibrate_prevalence(
    config: &PopulationConfig,
    target: f64,
    t: NaiveDate,
    churn: &ChurnParams,
    eligibility: &EligibilityParams,
) -> Result<PopulationConfig> {
    const TOLERANCE: f64 = 0.02;
    if !(0.0..1.0).contains(&target) {
        return Err(Error::config("target prevalence must lie in [0, 1)"));
    }
    config.validate()?;

    let scaled = |scale: f64| -> PopulationConfig {
        let mut out = config.clone();
        for a in &mut out.archetypes {
            a.churn_hazard = (a.churn_hazard * scale).clamp(0.0, 1.0);
        }
        out
    };
    let prevalence = |scale: f64| -> Result<f64> {
        let mut probe = scaled(scale);
        probe.player_count = probe.player_count.max(5000);
        let histories = generate_population(&probe)?;
        let schema = FeatureSchema::canonical();
        let set = build_test_set(&histories, t, eligibility, churn, &schema)?;
        class_balance(&set)
    };

    let current = prevalence(1.0)?;
    if (current - target).abs() <= TOLERANCE {
        return Ok(config.clone());
    }

    let floor = prevalence(0.0)?;
    if floor > target + TOLERANCE {
        return Err(Error::Calibration(format!(
            "natural (hazard-free) prevalence {floor:.3} already exceeds target {target:.3}"
        )));
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut p_hi = current;
    let mut growth = 0;
    while p_hi < target - TOLERANCE {
        hi *= 2.0;
        growth += 1;
        if growth > 8 {
            return Err(Error::Calibration(format!(
                "prevalence saturates at {p_hi:.3}, below target {target:.3}"
            )));
        }
        p_hi = prevalence(hi)?;
    }
    if current > target {
        // target lies between scale 0 and 1
        hi = 1.0;
    }

    for _ in 0..24 {
        let mid = 0.5 * (lo + hi);
        let p = prevalence(mid)?;
        if (p - target).abs() <= TOLERANCE {
            return Ok(scaled(mid));
        }
        if p < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::Calibration(
        "bisection did not converge within 24 iterations".into(),
    ))
}
