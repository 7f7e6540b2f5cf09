//! Churn labels: the active-day predicate, the per-day churn variable, and
//! the horizon churn indicator.
//!
//! A day is active when at least one churn-defining feature is nonzero. The
//! churn variable `c_t` flags a fully inactive window of `T_c` days ending at
//! `t`; the indicator `y_t` flags that churn occurs at least once in the
//! `T_pred` days after `t`. Churn-defining features are counts, so the zero
//! test is exact, with no float tolerance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timeseries::{DailyActivity, FeatureSchema, PlayerHistory};

/// Churn definition parameters: `T_c` inactive days define churn, `T_pred`
/// is the prediction horizon.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChurnParams {
    pub t_c: u32,
    pub t_pred: u32,
}

impl ChurnParams {
    pub fn new(t_c: u32, t_pred: u32) -> Result<Self> {
        if t_c < 1 || t_pred < 1 {
            return Err(Error::config("T_c and T_pred must both be at least 1"));
        }
        Ok(ChurnParams { t_c, t_pred })
    }
}

/// The values used throughout the experiments: 35 inactive days define a
/// churn event, predicted over a 30-day horizon.
impl Default for ChurnParams {
    fn default() -> Self {
        ChurnParams { t_c: 35, t_pred: 30 }
    }
}

/// True iff any churn-defining feature of `x` is nonzero.
pub fn is_active_day(x: &DailyActivity, schema: &FeatureSchema) -> bool {
    schema
        .churn_defining_indices()
        .iter()
        .any(|&i| x.values[i] != 0.0)
}

fn churn_window_sum(history: &PlayerHistory, t: usize, t_c: usize, schema: &FeatureSchema) -> f64 {
    let mut sum = 0.0;
    for day in &history.days[t + 1 - t_c..=t] {
        for &i in schema.churn_defining_indices() {
            sum += day.values[i].abs();
        }
    }
    sum
}

/// The churn variable `c_t`: 1 iff the churn-defining features sum to zero
/// in absolute value over the `T_c` days ending at day index `t`.
pub fn churn_variable(
    history: &PlayerHistory,
    t: usize,
    params: &ChurnParams,
    schema: &FeatureSchema,
) -> Result<u8> {
    let t_c = params.t_c as usize;
    if t + 1 < t_c || t >= history.len() {
        return Err(Error::WindowUnderflow {
            index: t,
            needed: t_c,
            available: history.len(),
        });
    }
    let sum = churn_window_sum(history, t, t_c, schema);
    Ok(u8::from(sum == 0.0))
}

/// The churn indicator `y_t`: 1 iff churn occurs at least once in days
/// `t+1 ..= t+T_pred`. Errors rather than truncating when the horizon leaves
/// the series, so labels are never silently corrupted.
pub fn churn_indicator(
    history: &PlayerHistory,
    t: usize,
    params: &ChurnParams,
    schema: &FeatureSchema,
) -> Result<u8> {
    let t_pred = params.t_pred as usize;
    let last_needed = t + t_pred;
    if last_needed >= history.len() {
        return Err(Error::InsufficientFuture {
            index: t,
            needed: last_needed,
            last: history.len().saturating_sub(1),
        });
    }
    for i in t + 1..=last_needed {
        if churn_variable(history, i, params, schema)? == 1 {
            return Ok(1);
        }
    }
    Ok(0)
}

/// Range of day indexes `t` for which the churn variable is computable.
pub fn churn_variable_range(history: &PlayerHistory, params: &ChurnParams) -> Option<(usize, usize)> {
    let t_c = params.t_c as usize;
    if history.len() < t_c {
        return None;
    }
    Some((t_c - 1, history.len() - 1))
}

/// Range of day indexes `t` for which the churn indicator is computable.
pub fn churn_indicator_range(
    history: &PlayerHistory,
    params: &ChurnParams,
) -> Option<(usize, usize)> {
    let t_c = params.t_c as usize;
    let t_pred = params.t_pred as usize;
    // c_{t+1} is the earliest variable the indicator consumes, so t+1 must be
    // at least T_c - 1.
    let first = t_c.saturating_sub(2);
    let last = history.len().checked_sub(t_pred + 1)?;
    if first > last {
        return None;
    }
    Some((first, last))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timeseries::{ingest_activity_log, ActivityRow, Registration};
    use chrono::NaiveDate;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn date(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    /// A history with one deposit on each listed day index, zero elsewhere.
    fn history_with_active_days(len: usize, active: &[usize]) -> PlayerHistory {
        let schema = FeatureSchema::canonical();
        let start = date("2019-01-01");
        let rows: Vec<ActivityRow> = active
            .iter()
            .map(|&i| ActivityRow {
                player_id: "p".into(),
                date: start + chrono::Days::new(i as u64),
                feature: "deposits".into(),
                value: 1.0,
            })
            .collect();
        let regs = [Registration {
            player_id: "p".into(),
            registration_date: date("2018-01-01"),
            initial_days_since_active: 0,
        }];
        let end = start + chrono::Days::new(len as u64 - 1);
        ingest_activity_log(&rows, &regs, &schema, (start, end))
            .unwrap()
            .remove(0)
    }

    /// Brute-force oracle: is there any active day in the window of `t_c`
    /// days ending at `t`?
    fn oracle_churn_variable(active: &[bool], t: usize, t_c: usize) -> u8 {
        let any = (t + 1 - t_c..=t).any(|i| active[i]);
        u8::from(!any)
    }

    fn oracle_churn_indicator(active: &[bool], t: usize, p: &ChurnParams) -> u8 {
        let any = (t + 1..=t + p.t_pred as usize)
            .any(|i| oracle_churn_variable(active, i, p.t_c as usize) == 1);
        u8::from(any)
    }

    #[test]
    fn active_day_predicate() {
        let schema = FeatureSchema::canonical();
        let mut x = DailyActivity::zeros(8);
        assert!(!is_active_day(&x, &schema));

        x.values[4] = 1.0; // one deposit
        assert!(is_active_day(&x, &schema));

        let mut y = DailyActivity::zeros(8);
        y.values[6] = 3.0; // connections are not churn-defining
        assert!(!is_active_day(&y, &schema));
    }

    #[test]
    fn fully_inactive_window_is_churn() {
        let schema = FeatureSchema::canonical();
        let params = ChurnParams::default();
        let h = history_with_active_days(60, &[]);
        assert_eq!(churn_variable(&h, 34, &params, &schema).unwrap(), 1);
        assert_eq!(churn_variable(&h, 59, &params, &schema).unwrap(), 1);
    }

    #[test]
    fn one_active_day_in_window_clears_churn() {
        let schema = FeatureSchema::canonical();
        let params = ChurnParams::default();
        let t = 50;
        let h = history_with_active_days(60, &[t - 10]);
        assert_eq!(churn_variable(&h, t, &params, &schema).unwrap(), 0);
        // Outside the window the play is invisible again.
        assert_eq!(churn_variable(&h, t - 11, &params, &schema).unwrap(), 1);
    }

    #[test]
    fn window_underflow_errors() {
        let schema = FeatureSchema::canonical();
        let params = ChurnParams::default();
        let h = history_with_active_days(60, &[]);
        assert!(matches!(
            churn_variable(&h, 33, &params, &schema),
            Err(Error::WindowUnderflow { .. })
        ));
    }

    #[test]
    fn indicator_insufficient_future_errors() {
        let schema = FeatureSchema::canonical();
        let params = ChurnParams::default();
        let h = history_with_active_days(60, &[]);
        assert!(matches!(
            churn_indicator(&h, 40, &params, &schema),
            Err(Error::InsufficientFuture { .. })
        ));
    }

    #[test]
    fn always_active_player_never_churns() {
        let schema = FeatureSchema::canonical();
        let params = ChurnParams::default();
        let all: Vec<usize> = (0..120).collect();
        let h = history_with_active_days(120, &all);
        for t in 34..=89 {
            assert_eq!(churn_indicator(&h, t, &params, &schema).unwrap(), 0);
        }
    }

    #[test]
    fn permanent_inactivity_fires_within_horizon() {
        // Hand timeline: activity stops after day t - T_c + 1, so the first
        // fully inactive window ends at day t + 1, inside the horizon.
        let schema = FeatureSchema::canonical();
        let params = ChurnParams::default();
        let t = 60;
        let last_active = t - params.t_c as usize + 1;
        let active: Vec<usize> = (0..=last_active).collect();
        let h = history_with_active_days(120, &active);
        assert_eq!(churn_indicator(&h, t, &params, &schema).unwrap(), 1);
        assert_eq!(
            churn_variable(&h, t + 1, &params, &schema).unwrap(),
            1,
            "first inactive window ends exactly at t+1"
        );
        assert_eq!(churn_variable(&h, t, &params, &schema).unwrap(), 0);
    }

    #[test]
    fn random_histories_match_brute_force_oracles() {
        let schema = FeatureSchema::canonical();
        let params = ChurnParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for case in 0..50 {
            let len = 100;
            // Mix sparse and dense activity so both label values appear.
            let rate = match case % 3 {
                0 => 0.02,
                1 => 0.10,
                _ => 0.5,
            };
            let active_days: Vec<usize> =
                (0..len).filter(|_| rng.gen_bool(rate)).collect();
            let mut active = vec![false; len];
            for &i in &active_days {
                active[i] = true;
            }
            let h = history_with_active_days(len, &active_days);
            for t in params.t_c as usize - 1..len {
                assert_eq!(
                    churn_variable(&h, t, &params, &schema).unwrap(),
                    oracle_churn_variable(&active, t, params.t_c as usize),
                    "case {case} churn_variable at t={t}"
                );
            }
            let (first, last) = churn_indicator_range(&h, &params).unwrap();
            for t in first..=last {
                assert_eq!(
                    churn_indicator(&h, t, &params, &schema).unwrap(),
                    oracle_churn_indicator(&active, t, &params),
                    "case {case} churn_indicator at t={t}"
                );
            }
        }
    }

    #[test]
    fn indicator_equals_max_of_churn_variables() {
        let schema = FeatureSchema::canonical();
        let params = ChurnParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let active_days: Vec<usize> = (0..150).filter(|_| rng.gen_bool(0.05)).collect();
        let h = history_with_active_days(150, &active_days);
        let (first, last) = churn_indicator_range(&h, &params).unwrap();
        for t in first..=last {
            let max_c = (t + 1..=t + params.t_pred as usize)
                .map(|i| churn_variable(&h, i, &params, &schema).unwrap())
                .max()
                .unwrap();
            assert_eq!(churn_indicator(&h, t, &params, &schema).unwrap(), max_c);
        }
    }

    #[test]
    fn indicator_invariant_under_positive_scaling() {
        let schema = FeatureSchema::canonical();
        let params = ChurnParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let active_days: Vec<usize> = (0..120).filter(|_| rng.gen_bool(0.07)).collect();
        let mut h = history_with_active_days(120, &active_days);
        let (first, last) = churn_indicator_range(&h, &params).unwrap();
        let before: Vec<u8> = (first..=last)
            .map(|t| churn_indicator(&h, t, &params, &schema).unwrap())
            .collect();
        for day in &mut h.days {
            for &i in schema.churn_defining_indices() {
                day.values[i] *= 17.5;
            }
        }
        let after: Vec<u8> = (first..=last)
            .map(|t| churn_indicator(&h, t, &params, &schema).unwrap())
            .collect();
        assert_eq!(before, after);
    }

    #[test]
    fn inserting_active_day_forces_nonchurn() {
        let schema = FeatureSchema::canonical();
        let params = ChurnParams::default();
        let t = 70;
        for offset in 0..params.t_c as usize {
            let h = history_with_active_days(80, &[t - offset]);
            assert_eq!(churn_variable(&h, t, &params, &schema).unwrap(), 0);
        }
    }
}
