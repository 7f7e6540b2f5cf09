//! Learning-set and test-set construction.
//!
//! A learning set `LS_t` holds every pair (trajectory at `t'`, churn
//! indicator at `t'`) whose label is computable from data known at `t`
//! (`t' <= t - T_pred`) and whose player passes the activity conditions:
//! `t'` at or after `max(T_0, registration + offset)`, and at least
//! `min_active_days` active days in the window preceding `t'`. The test set
//! `TS_t` applies the same conditions at `t'` = `t` itself.

use std::io::{BufRead, BufReader, Read, Write};

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeling::{self, is_active_day, ChurnParams};
use crate::timeseries::{
    slice_trajectory, FeatureSchema, PlayerHistory, PlayerId, Trajectory,
};

/// Sample-eligibility parameters. `t_pred` mirrors the churn horizon so the
/// upper bound `t - T_pred` is explicit here; keep it equal to
/// [`ChurnParams::t_pred`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EligibilityParams {
    /// Global lower bound `T_0` on sample dates, shared by all players.
    pub t0: NaiveDate,
    /// Per-player lower bound: this many days after registration.
    pub t0_offset: u32,
    /// Prediction horizon, bounding samples to `t' <= t - T_pred`.
    pub t_pred: u32,
    /// Trajectory length cap `T_h` in days.
    pub t_h: u32,
    /// Length of the recent-activity window preceding each candidate `t'`.
    pub recent_activity_window: u32,
    /// Minimum active days required inside that window.
    pub min_active_days: u32,
}

impl EligibilityParams {
    pub fn standard(t0: NaiveDate) -> Self {
        EligibilityParams {
            t0,
            t0_offset: 60,
            t_pred: 30,
            t_h: 60,
            recent_activity_window: 30,
            min_active_days: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.recent_activity_window < 1 {
            return Err(Error::config("recent_activity_window must be at least 1"));
        }
        if self.t_h < 1 {
            return Err(Error::config("T_h must be at least 1"));
        }
        Ok(())
    }

    /// `max(T_0, registration + offset)`: the first date at which this
    /// player's pairs may enter a learning set.
    pub fn player_lower_bound(&self, registration: NaiveDate) -> NaiveDate {
        self.t0.max(registration + Days::new(self.t0_offset as u64))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetKind {
    Learning,
    Test,
}

/// One (trajectory, churn indicator) pair with its provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub trajectory: Trajectory,
    pub label: u8,
    pub player_id: PlayerId,
    pub t_prime: NaiveDate,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub kind: SetKind,
    pub as_of: NaiveDate,
    pub samples: Vec<LabeledSample>,
    /// Candidate pairs dropped because their label was not computable from
    /// the available series; counted rather than silently discarded.
    pub excluded: usize,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Fraction of samples labeled churn.
pub fn class_balance(set: &SampleSet) -> Result<f64> {
    if set.samples.is_empty() {
        return Err(Error::UndefinedRatio);
    }
    let ones = set.samples.iter().filter(|s| s.label == 1).count();
    Ok(ones as f64 / set.samples.len() as f64)
}

fn active_prefix_counts(history: &PlayerHistory, schema: &FeatureSchema) -> Vec<u32> {
    // counts[i] = number of active days among indexes 0..i
    let mut counts = Vec::with_capacity(history.len() + 1);
    counts.push(0);
    let mut acc = 0u32;
    for day in &history.days {
        if is_active_day(day, schema) {
            acc += 1;
        }
        counts.push(acc);
    }
    counts
}

/// Active days within the `window` days strictly before day index `t`
/// (`[t - window, t - 1]`); days before the series start count as inactive.
fn recent_active_days(prefix: &[u32], t: usize, window: usize) -> u32 {
    let lo = t.saturating_sub(window);
    prefix[t] - prefix[lo]
}

/// All dates `t'` at which `history` contributes a learning pair to `LS_t`:
/// `max(T_0, registration + offset) <= t' <= t - T_pred`, with at least
/// `min_active_days` active days in the window preceding `t'`. The series
/// start is a further lower bound since a trajectory must exist at `t'`.
pub fn eligible_learning_times(
    history: &PlayerHistory,
    t: NaiveDate,
    params: &EligibilityParams,
    schema: &FeatureSchema,
) -> Vec<NaiveDate> {
    let upper = t - Days::new(params.t_pred as u64);
    let lower = params
        .player_lower_bound(history.registration_date)
        .max(history.start_date);
    if lower > upper || history.is_empty() {
        return Vec::new();
    }
    let upper = upper.min(history.end_date());
    let prefix = active_prefix_counts(history, schema);
    let window = params.recent_activity_window as usize;
    let mut out = Vec::new();
    let mut date = lower;
    while date <= upper {
        let index = history
            .date_index(date)
            .expect("date clamped into series range");
        if recent_active_days(&prefix, index, window) >= params.min_active_days {
            out.push(date);
        }
        date = date + Days::new(1);
    }
    out
}

/// Builds `LS_t`: one sample per (player, eligible `t'`), ordered by
/// player id then date. Pairs whose label cannot be computed from the series
/// are counted in `excluded` instead of failing the build.
pub fn build_learning_set(
    histories: &[PlayerHistory],
    t: NaiveDate,
    params: &EligibilityParams,
    churn: &ChurnParams,
    schema: &FeatureSchema,
) -> Result<SampleSet> {
    params.validate()?;
    let mut order: Vec<&PlayerHistory> = histories.iter().collect();
    order.sort_by(|a, b| a.player_id.cmp(&b.player_id));

    let mut samples = Vec::new();
    let mut excluded = 0usize;
    for history in order {
        for t_prime in eligible_learning_times(history, t, params, schema) {
            let index = history
                .date_index(t_prime)
                .expect("eligible date lies in series");
            let label = match labeling::churn_indicator(history, index, churn, schema) {
                Ok(label) => label,
                Err(
                    Error::WindowUnderflow { .. } | Error::InsufficientFuture { .. },
                ) => {
                    excluded += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let trajectory = slice_trajectory(history, t_prime, params.t_h as usize)?;
            samples.push(LabeledSample {
                trajectory,
                label,
                player_id: history.player_id.clone(),
                t_prime,
            });
        }
    }
    Ok(SampleSet {
        kind: SetKind::Learning,
        as_of: t,
        samples,
        excluded,
    })
}

/// Builds `TS_t`: one sample at `t'` = `t` per player registered for at
/// least the offset and active in the recent window. Labels at `t` require
/// data through `t + T_pred`; a shortfall is a hard error, never a silent
/// truncation.
pub fn build_test_set(
    histories: &[PlayerHistory],
    t: NaiveDate,
    params: &EligibilityParams,
    churn: &ChurnParams,
    schema: &FeatureSchema,
) -> Result<SampleSet> {
    params.validate()?;
    let mut order: Vec<&PlayerHistory> = histories.iter().collect();
    order.sort_by(|a, b| a.player_id.cmp(&b.player_id));

    let mut samples = Vec::new();
    for history in order {
        let Some(index) = history.date_index(t) else {
            return Err(Error::DateRange {
                date: t,
                start: history.start_date,
                end: history.end_date(),
            });
        };
        if t < history.registration_date + Days::new(params.t0_offset as u64) {
            continue;
        }
        let prefix = active_prefix_counts(history, schema);
        if recent_active_days(&prefix, index, params.recent_activity_window as usize)
            < params.min_active_days
        {
            continue;
        }
        let label = labeling::churn_indicator(history, index, churn, schema)?;
        let trajectory = slice_trajectory(history, t, params.t_h as usize)?;
        samples.push(LabeledSample {
            trajectory,
            label,
            player_id: history.player_id.clone(),
            t_prime: t,
        });
    }
    Ok(SampleSet {
        kind: SetKind::Test,
        as_of: t,
        samples,
        excluded: 0,
    })
}

// ---------------------------------------------------------------------------
// Sample-set files
// ---------------------------------------------------------------------------

/// Everything needed to interpret a sample file, written as a JSON header
/// line ahead of the records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleFileHeader {
    pub kind: SetKind,
    pub as_of: NaiveDate,
    pub schema: FeatureSchema,
    pub eligibility: EligibilityParams,
    pub churn: ChurnParams,
    pub excluded: usize,
}

/// Writes a sample set: one JSON header line, then one record per sample as
/// `player_id,t_prime,label,length,` followed by the trajectory's feature
/// values in day-major order with round-trip float precision.
pub fn write_sample_set(
    mut writer: impl Write,
    set: &SampleSet,
    schema: &FeatureSchema,
    eligibility: &EligibilityParams,
    churn: &ChurnParams,
) -> Result<()> {
    let header = SampleFileHeader {
        kind: set.kind,
        as_of: set.as_of,
        schema: schema.clone(),
        eligibility: *eligibility,
        churn: *churn,
        excluded: set.excluded,
    };
    let header_json = serde_json::to_string(&header)
        .map_err(|e| Error::SampleFile(format!("header encode: {e}")))?;
    writeln!(writer, "{header_json}")?;
    let mut line = String::new();
    for sample in &set.samples {
        line.clear();
        line.push_str(&sample.player_id);
        line.push(',');
        line.push_str(&sample.t_prime.to_string());
        line.push(',');
        line.push_str(&sample.label.to_string());
        line.push(',');
        line.push_str(&sample.trajectory.len().to_string());
        for day in &sample.trajectory.days {
            for v in &day.values {
                line.push(',');
                line.push_str(&v.to_string());
            }
        }
        writeln!(writer, "{line}")?;
    }
    Ok(())
}

/// Reads a sample file back into the set and its header.
pub fn read_sample_set(reader: impl Read) -> Result<(SampleSet, SampleFileHeader)> {
    let mut lines = BufReader::new(reader).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::SampleFile("empty sample file".into()))??;
    let header: SampleFileHeader = serde_json::from_str(&header_line)
        .map_err(|e| Error::SampleFile(format!("header decode: {e}")))?;
    let n = header.schema.len();
    let mut samples = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let mut next = |what: &str| {
            fields
                .next()
                .ok_or_else(|| Error::SampleFile(format!("record {}: missing {what}", lineno + 2)))
        };
        let player_id = next("player_id")?.to_string();
        let t_prime: NaiveDate = next("t_prime")?
            .parse()
            .map_err(|e| Error::SampleFile(format!("record {}: bad date: {e}", lineno + 2)))?;
        let label: u8 = next("label")?
            .parse()
            .map_err(|e| Error::SampleFile(format!("record {}: bad label: {e}", lineno + 2)))?;
        if label > 1 {
            return Err(Error::SampleFile(format!(
                "record {}: label must be 0 or 1",
                lineno + 2
            )));
        }
        let length: usize = next("length")?
            .parse()
            .map_err(|e| Error::SampleFile(format!("record {}: bad length: {e}", lineno + 2)))?;
        let mut days = Vec::with_capacity(length);
        for d in 0..length {
            let mut values = Vec::with_capacity(n);
            for f in 0..n {
                let field = next("feature value")?;
                let v: f64 = field.parse().map_err(|e| {
                    Error::SampleFile(format!(
                        "record {}: bad value at day {d} feature {f}: {e}",
                        lineno + 2
                    ))
                })?;
                values.push(v);
            }
            days.push(crate::timeseries::DailyActivity { values });
        }
        if fields.next().is_some() {
            return Err(Error::SampleFile(format!(
                "record {}: trailing fields",
                lineno + 2
            )));
        }
        samples.push(LabeledSample {
            trajectory: Trajectory {
                days,
                end_time: t_prime,
            },
            label,
            player_id,
            t_prime,
        });
    }
    let set = SampleSet {
        kind: header.kind,
        as_of: header.as_of,
        samples,
        excluded: header.excluded,
    };
    Ok((set, header))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timeseries::{ingest_activity_log, ActivityRow, Registration};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn date(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn make_history(
        id: &str,
        registration: &str,
        window: (NaiveDate, NaiveDate),
        active_days: &[usize],
    ) -> PlayerHistory {
        let schema = FeatureSchema::canonical();
        // Activity can only start at registration.
        let rows: Vec<ActivityRow> = active_days
            .iter()
            .map(|&i| ActivityRow {
                player_id: id.into(),
                date: window.0 + Days::new(i as u64),
                feature: "casino_plays".into(),
                value: 1.0,
            })
            .filter(|r| r.date >= date(registration))
            .collect();
        let regs = [Registration {
            player_id: id.into(),
            registration_date: date(registration),
            initial_days_since_active: 0,
        }];
        ingest_activity_log(&rows, &regs, &schema, window)
            .unwrap()
            .remove(0)
    }

    fn standard_params(t0: &str) -> EligibilityParams {
        EligibilityParams::standard(date(t0))
    }

    #[test]
    fn young_player_has_no_eligible_times() {
        let schema = FeatureSchema::canonical();
        let window = (date("2019-01-01"), date("2020-03-01"));
        let all: Vec<usize> = (0..426).collect();
        // Registered 10 days before t: t0^p is far beyond t - T_pred.
        let h = make_history("p1", "2019-12-22", window, &all);
        let times = eligible_learning_times(
            &h,
            date("2020-01-01"),
            &standard_params("2019-01-01"),
            &schema,
        );
        assert!(times.is_empty());
    }

    #[test]
    fn continuously_active_player_hits_the_bound() {
        let schema = FeatureSchema::canonical();
        let window = (date("2019-01-01"), date("2020-03-01"));
        let all: Vec<usize> = (0..426).collect();
        let h = make_history("p1", "2019-01-15", window, &all);
        // T_0 = 2019-08-24, t - T_pred = 2019-12-02: gap of 100 days.
        let params = standard_params("2019-08-24");
        let t = date("2020-01-01");
        let times = eligible_learning_times(&h, t, &params, &schema);
        assert_eq!(times.len(), 101);
        assert_eq!(times[0], date("2019-08-24"));
        assert_eq!(*times.last().unwrap(), date("2019-12-02"));
    }

    #[test]
    fn inactivity_gap_excludes_dates() {
        let schema = FeatureSchema::canonical();
        let window = (date("2019-01-01"), date("2020-03-01"));
        // Active every day except a 40-day silence starting at index 250.
        let active: Vec<usize> = (0..426).filter(|i| !(250..290).contains(i)).collect();
        let h = make_history("p1", "2019-01-15", window, &active);
        let params = standard_params("2019-08-24");
        let t = date("2020-01-01");
        let times = eligible_learning_times(&h, t, &params, &schema);
        // Dates whose preceding 30-day window is fully inside the silence are
        // excluded: indexes 280..290 relative to the window start.
        for gap_index in 280..290 {
            let excluded = window.0 + Days::new(gap_index as u64);
            assert!(!times.contains(&excluded), "{excluded} should be excluded");
        }
        let back = window.0 + Days::new(291);
        assert!(times.contains(&back), "activity resumes at index 290");
    }

    #[test]
    fn eligible_times_match_brute_force_scan() {
        let schema = FeatureSchema::canonical();
        let churn = ChurnParams::default();
        let window = (date("2019-01-01"), date("2020-03-01"));
        let n_days = 426usize;
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        for case in 0..20 {
            let rate = if case % 2 == 0 { 0.05 } else { 0.4 };
            let active: Vec<usize> = (0..n_days).filter(|_| rng.gen_bool(rate)).collect();
            let reg = window.0 + Days::new(rng.gen_range(0..200));
            let h = {
                let mut h = make_history("p1", "2019-01-01", window, &active);
                h.registration_date = reg;
                // Re-derive zero-fill semantics: clear pre-registration days.
                for i in 0..h.len() {
                    if h.date_at(i) < reg {
                        for v in &mut h.days[i].values {
                            *v = 0.0;
                        }
                    }
                }
                crate::timeseries::fill_days_since_active(&mut h, &schema, 0);
                h
            };
            let params = standard_params("2019-06-01");
            let t = date("2020-01-01");
            let got = eligible_learning_times(&h, t, &params, &schema);
            // Brute force directly from the definition.
            let mut want = Vec::new();
            let lower = params.player_lower_bound(reg).max(h.start_date);
            let upper = t - Days::new(params.t_pred as u64);
            let mut d = lower;
            while d <= upper {
                let idx = h.date_index(d).unwrap();
                let lo = idx.saturating_sub(params.recent_activity_window as usize);
                let count = (lo..idx)
                    .filter(|&i| is_active_day(&h.days[i], &schema))
                    .count() as u32;
                if count >= params.min_active_days {
                    want.push(d);
                }
                d = d + Days::new(1);
            }
            assert_eq!(got, want, "case {case}");
            let _ = churn;
        }
    }

    #[test]
    fn always_active_learning_set_is_all_retained() {
        let schema = FeatureSchema::canonical();
        let churn = ChurnParams::default();
        let window = (date("2019-01-01"), date("2020-03-01"));
        let all: Vec<usize> = (0..426).collect();
        let h = make_history("p1", "2019-01-15", window, &all);
        let params = standard_params("2019-11-18");
        let t = date("2020-01-01");
        let set = build_learning_set(&[h], t, &params, &churn, &schema).unwrap();
        // k = t - T_pred - T_0 + 1 = 15 days.
        assert_eq!(set.len(), 15);
        assert_eq!(set.excluded, 0);
        assert!(set.samples.iter().all(|s| s.label == 0));
        assert!(set.samples.iter().all(|s| s.trajectory.len() == 60));
    }

    #[test]
    fn permanent_inactivity_timeline() {
        let schema = FeatureSchema::canonical();
        let churn = ChurnParams::default();
        let window = (date("2019-01-01"), date("2020-06-01"));
        // Active through day D (index 290), silent afterwards.
        let d_index = 290usize;
        let active: Vec<usize> = (0..=d_index).collect();
        let h = make_history("p1", "2019-01-15", window, &active);
        let d_date = window.0 + Days::new(d_index as u64);
        let params = standard_params("2019-08-24");
        let t = date("2020-06-01");
        let set = build_learning_set(&[h], t, &params, &churn, &schema).unwrap();

        // Condition (ii) keeps dates up to D + 30 (the window [D, D+29]
        // still contains the last active day).
        let last = set.samples.last().unwrap();
        assert_eq!(last.t_prime, d_date + Days::new(30));

        // The churn window completes 35 days after the last active day, so
        // eligible dates from D + 5 onward see it inside their horizon.
        for sample in &set.samples {
            let days_after = (sample.t_prime - d_date).num_days();
            let expected = u8::from(days_after >= 5);
            assert_eq!(
                sample.label, expected,
                "label at {} ({} days after last activity)",
                sample.t_prime, days_after
            );
        }
    }

    #[test]
    fn empty_history_set_builds_empty_sample_set() {
        let schema = FeatureSchema::canonical();
        let churn = ChurnParams::default();
        let params = standard_params("2019-08-24");
        let set =
            build_learning_set(&[], date("2020-01-01"), &params, &churn, &schema).unwrap();
        assert!(set.is_empty());
        assert_eq!(set.kind, SetKind::Learning);
    }

    #[test]
    fn test_set_registration_boundary() {
        let schema = FeatureSchema::canonical();
        let churn = ChurnParams::default();
        let window = (date("2019-01-01"), date("2020-03-01"));
        let t = date("2020-01-01");
        let all: Vec<usize> = (0..426).collect();
        // Registered 59 days before t: excluded. 60 days: included.
        let h59 = make_history("p59", "2019-11-03", window, &all);
        let h60 = make_history("p60", "2019-11-02", window, &all);
        let params = standard_params("2019-08-24");
        let set = build_test_set(&[h59, h60], t, &params, &churn, &schema).unwrap();
        let ids: Vec<&str> = set.samples.iter().map(|s| s.player_id.as_str()).collect();
        assert_eq!(ids, vec!["p60"]);
        assert!(set.samples.iter().all(|s| s.t_prime == t));
    }

    #[test]
    fn test_set_single_recent_deposit_qualifies() {
        let schema = FeatureSchema::canonical();
        let churn = ChurnParams::default();
        let window = (date("2019-01-01"), date("2020-03-01"));
        let t = date("2020-01-01");
        let t_index = (t - window.0).num_days() as usize;
        // One deposit 29 days before t, otherwise silent.
        let h = make_history("p1", "2019-01-15", window, &[t_index - 29]);
        let params = standard_params("2019-08-24");
        let set = build_test_set(&[h], t, &params, &churn, &schema).unwrap();
        assert_eq!(set.len(), 1);
        // Silent since then, so the churn window completes inside the horizon.
        assert_eq!(set.samples[0].label, 1);
    }

    #[test]
    fn test_set_insufficient_future_errors() {
        let schema = FeatureSchema::canonical();
        let churn = ChurnParams::default();
        let window = (date("2019-01-01"), date("2020-01-15"));
        let all: Vec<usize> = (0..380).collect();
        let h = make_history("p1", "2019-01-15", window, &all);
        let params = standard_params("2019-08-24");
        let err = build_test_set(&[h], date("2020-01-01"), &params, &churn, &schema);
        assert!(matches!(err, Err(Error::InsufficientFuture { .. })));
    }

    #[test]
    fn engineered_cohort_balance() {
        let schema = FeatureSchema::canonical();
        let churn = ChurnParams::default();
        let window = (date("2019-01-01"), date("2020-03-01"));
        let t = date("2020-01-01");
        let t_index = (t - window.0).num_days() as usize;
        let mut histories = Vec::new();
        for p in 0..100 {
            let id = format!("p{p:03}");
            let active: Vec<usize> = if p < 22 {
                // Last active 20 days before t, then silent: certain churn.
                (0..=t_index - 20).collect()
            } else {
                (0..426).collect()
            };
            histories.push(make_history(&id, "2019-01-15", window, &active));
        }
        let params = standard_params("2019-08-24");
        let set = build_test_set(&histories, t, &params, &churn, &schema).unwrap();
        assert_eq!(set.len(), 100);
        assert!((class_balance(&set).unwrap() - 0.22).abs() < 1e-12);
    }

    #[test]
    fn class_balance_basics() {
        let schema = FeatureSchema::canonical();
        let churn = ChurnParams::default();
        let window = (date("2019-01-01"), date("2020-03-01"));
        let all: Vec<usize> = (0..426).collect();
        let h = make_history("p1", "2019-01-15", window, &all);
        let params = standard_params("2019-11-18");
        let t = date("2020-01-01");
        let set = build_learning_set(&[h], t, &params, &churn, &schema).unwrap();
        assert_eq!(class_balance(&set).unwrap(), 0.0);

        let empty = SampleSet {
            kind: SetKind::Test,
            as_of: t,
            samples: Vec::new(),
            excluded: 0,
        };
        assert!(matches!(class_balance(&empty), Err(Error::UndefinedRatio)));

        let mut mixed = set.clone();
        mixed.samples.truncate(4);
        mixed.samples[0].label = 1;
        mixed.samples[3].label = 1;
        assert_eq!(class_balance(&mixed).unwrap(), 0.5);
    }

    #[test]
    fn per_player_count_respects_bound() {
        let schema = FeatureSchema::canonical();
        let churn = ChurnParams::default();
        let window = (date("2019-01-01"), date("2020-03-01"));
        let params = standard_params("2019-08-24");
        let t = date("2020-01-01");
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for case in 0..10 {
            let rate: f64 = [1.0, 0.3, 0.08][case % 3];
            let active: Vec<usize> = (0..426).filter(|_| rng.gen_bool(rate)).collect();
            let h = make_history("p1", "2019-03-01", window, &active);
            let bound = (t - Days::new(params.t_pred as u64)
                - params.player_lower_bound(h.registration_date))
            .num_days()
                + 1;
            let set = build_learning_set(&[h], t, &params, &churn, &schema).unwrap();
            assert!(set.len() as i64 <= bound, "case {case}");
            if rate == 1.0 {
                assert_eq!(set.len() as i64, bound, "always-active reaches the bound");
            }
        }
    }

    #[test]
    fn learning_samples_never_peek_past_t() {
        let schema = FeatureSchema::canonical();
        let churn = ChurnParams::default();
        let window = (date("2019-01-01"), date("2020-03-01"));
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let active: Vec<usize> = (0..426).filter(|_| rng.gen_bool(0.3)).collect();
        let h = make_history("p1", "2019-02-01", window, &active);
        let params = standard_params("2019-08-24");
        let t = date("2020-01-01");
        let set = build_learning_set(&[h], t, &params, &churn, &schema).unwrap();
        assert!(!set.is_empty());
        for s in &set.samples {
            assert!(s.t_prime <= t - Days::new(params.t_pred as u64));
            assert_eq!(s.trajectory.end_time, s.t_prime);
            assert!(s.trajectory.len() <= params.t_h as usize);
        }
    }

    #[test]
    fn rebuild_is_deterministic() {
        let schema = FeatureSchema::canonical();
        let churn = ChurnParams::default();
        let window = (date("2019-01-01"), date("2020-03-01"));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut histories = Vec::new();
        for p in 0..20 {
            let active: Vec<usize> = (0..426).filter(|_| rng.gen_bool(0.25)).collect();
            histories.push(make_history(&format!("p{p:02}"), "2019-02-01", window, &active));
        }
        let params = standard_params("2019-08-24");
        let t = date("2020-01-01");
        let a = build_learning_set(&histories, t, &params, &churn, &schema).unwrap();
        let b = build_learning_set(&histories, t, &params, &churn, &schema).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sample_file_roundtrip() {
        let schema = FeatureSchema::canonical();
        let churn = ChurnParams::default();
        let window = (date("2019-01-01"), date("2020-03-01"));
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut histories = Vec::new();
        for p in 0..5 {
            let active: Vec<usize> = (0..426).filter(|_| rng.gen_bool(0.2)).collect();
            histories.push(make_history(&format!("p{p}"), "2019-02-01", window, &active));
        }
        let params = standard_params("2019-11-18");
        let t = date("2020-01-01");
        let set = build_learning_set(&histories, t, &params, &churn, &schema).unwrap();
        assert!(!set.is_empty());

        let mut buf = Vec::new();
        write_sample_set(&mut buf, &set, &schema, &params, &churn).unwrap();
        let (back, header) = read_sample_set(buf.as_slice()).unwrap();
        assert_eq!(back, set);
        assert_eq!(header.schema, schema);
        assert_eq!(header.eligibility, params);
        assert_eq!(header.churn, churn);
    }
}
