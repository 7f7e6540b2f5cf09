//! Daily activity time series: feature schema, raw-log ingestion, dense
//! per-player series, and trajectory slicing.
//!
//! Raw transactional logs arrive as sparse `(player, date, feature, value)`
//! rows aggregated per day. Ingestion turns them into one dense series per
//! player over a fixed window, filling absent days with zero vectors and
//! deriving the days-since-last-active feature as it goes.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type PlayerId = String;

/// How a feature behaves numerically.
///
/// `Count` features are non-negative integers stored as reals, `Currency`
/// features may be negative (a winning player costs the house money), and
/// `DaysSinceActive` is derived from the other features rather than ingested.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Count,
    Currency,
    DaysSinceActive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureDef {
    pub name: String,
    pub kind: FeatureKind,
    pub churn_defining: bool,
}

impl FeatureDef {
    fn new(name: &str, kind: FeatureKind, churn_defining: bool) -> Self {
        FeatureDef {
            name: name.to_string(),
            kind,
            churn_defining,
        }
    }
}

/// Ordered feature schema. Feature order is fixed and explicit: serialized
/// series, sample files and network inputs all use this order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<FeatureDef>", into = "Vec<FeatureDef>")]
pub struct FeatureSchema {
    features: Vec<FeatureDef>,
    churn_indices: Vec<usize>,
    days_since_active: Option<usize>,
}

impl FeatureSchema {
    pub fn new(features: Vec<FeatureDef>) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::Schema("schema has no features".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for f in &features {
            if !seen.insert(f.name.as_str()) {
                return Err(Error::Schema(format!("duplicate feature name {:?}", f.name)));
            }
        }
        let churn_indices: Vec<usize> = features
            .iter()
            .enumerate()
            .filter(|(_, f)| f.churn_defining)
            .map(|(i, _)| i)
            .collect();
        if churn_indices.is_empty() {
            return Err(Error::Schema("no churn-defining features".into()));
        }
        if churn_indices.len() >= features.len() {
            return Err(Error::Schema(
                "churn-defining features must be a strict subset of all features".into(),
            ));
        }
        let dsa: Vec<usize> = features
            .iter()
            .enumerate()
            .filter(|(_, f)| f.kind == FeatureKind::DaysSinceActive)
            .map(|(i, _)| i)
            .collect();
        if dsa.len() > 1 {
            return Err(Error::Schema(
                "at most one days-since-active feature allowed".into(),
            ));
        }
        if let Some(&i) = dsa.first() {
            if features[i].churn_defining {
                return Err(Error::Schema(
                    "the derived days-since-active feature cannot be churn-defining".into(),
                ));
            }
        }
        Ok(FeatureSchema {
            features,
            churn_indices,
            days_since_active: dsa.first().copied(),
        })
    }

    /// The eight-feature schema used throughout: three churn-defining counts
    /// (casino plays, sport betting tickets, deposits), two gross-gaming-revenue
    /// amounts, withdrawal and connection counts, and the derived
    /// days-since-last-active counter.
    pub fn canonical() -> Self {
        FeatureSchema::new(vec![
            FeatureDef::new("casino_plays", FeatureKind::Count, true),
            FeatureDef::new("casino_ggr", FeatureKind::Currency, false),
            FeatureDef::new("sport_tickets", FeatureKind::Count, true),
            FeatureDef::new("sport_ggr", FeatureKind::Currency, false),
            FeatureDef::new("deposits", FeatureKind::Count, true),
            FeatureDef::new("withdrawals", FeatureKind::Count, false),
            FeatureDef::new("connections", FeatureKind::Count, false),
            FeatureDef::new("days_since_active", FeatureKind::DaysSinceActive, false),
        ])
        .expect("canonical schema is valid")
    }

    /// Number of features, `n`.
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Number of churn-defining features, `n_c`.
    pub fn churn_defining_count(&self) -> usize {
        self.churn_indices.len()
    }

    pub fn churn_defining_indices(&self) -> &[usize] {
        &self.churn_indices
    }

    pub fn features(&self) -> &[FeatureDef] {
        &self.features
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn days_since_active_index(&self) -> Option<usize> {
        self.days_since_active
    }
}

impl TryFrom<Vec<FeatureDef>> for FeatureSchema {
    type Error = Error;
    fn try_from(features: Vec<FeatureDef>) -> Result<Self> {
        FeatureSchema::new(features)
    }
}

impl From<FeatureSchema> for Vec<FeatureDef> {
    fn from(s: FeatureSchema) -> Vec<FeatureDef> {
        s.features
    }
}

/// One day of aggregated activity, in schema order.
#[derive(Clone, Debug, PartialEq)]
pub struct DailyActivity {
    pub values: Vec<f64>,
}

impl DailyActivity {
    pub fn zeros(n: usize) -> Self {
        DailyActivity {
            values: vec![0.0; n],
        }
    }
}

/// Dense daily series for one player. One entry per calendar day from
/// `start_date`, no gaps; days before the registration date are all-zero.
#[derive(Clone, Debug, PartialEq)]
pub struct PlayerHistory {
    pub player_id: PlayerId,
    pub registration_date: NaiveDate,
    pub start_date: NaiveDate,
    pub days: Vec<DailyActivity>,
}

impl PlayerHistory {
    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }

    /// Last covered calendar date.
    pub fn end_date(&self) -> NaiveDate {
        self.date_at(self.days.len().saturating_sub(1))
    }

    pub fn date_at(&self, index: usize) -> NaiveDate {
        self.start_date + chrono::Days::new(index as u64)
    }

    /// Index of `date` within the series, if covered.
    pub fn date_index(&self, date: NaiveDate) -> Option<usize> {
        let offset = (date - self.start_date).num_days();
        if offset < 0 || offset as usize >= self.days.len() {
            None
        } else {
            Some(offset as usize)
        }
    }
}

/// The tail of a player's series ending at `end_time`, at most `T_h` days long.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub days: Vec<DailyActivity>,
    pub end_time: NaiveDate,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }
}

/// Returns the last `min(T_h, index(t)+1)` days of `history` ending at `t`
/// inclusive.
pub fn slice_trajectory(history: &PlayerHistory, t: NaiveDate, t_h: usize) -> Result<Trajectory> {
    let index = history.date_index(t).ok_or(Error::DateRange {
        date: t,
        start: history.start_date,
        end: history.end_date(),
    })?;
    let take = t_h.min(index + 1);
    let days = history.days[index + 1 - take..=index].to_vec();
    Ok(Trajectory { days, end_time: t })
}

/// One sparse input row: a per-day aggregate for a single feature.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivityRow {
    pub player_id: PlayerId,
    pub date: NaiveDate,
    pub feature: String,
    pub value: f64,
}

/// Registration record. `initial_days_since_active` seeds the derived
/// counter at the window start for players registered before it; it defaults
/// to 0, which understates the counter for players with unknown prior
/// inactivity.
#[derive(Clone, Debug, PartialEq)]
pub struct Registration {
    pub player_id: PlayerId,
    pub registration_date: NaiveDate,
    pub initial_days_since_active: u32,
}

fn is_active_values(values: &[f64], schema: &FeatureSchema) -> bool {
    schema
        .churn_defining_indices()
        .iter()
        .any(|&i| values[i] != 0.0)
}

/// Fills the days-since-active feature in place from the churn-defining
/// features. Pre-registration days stay all-zero; from the registration day
/// on, the counter resets to 0 on active days and otherwise grows by one per
/// day, starting from `seed` at the first counted day.
pub fn fill_days_since_active(history: &mut PlayerHistory, schema: &FeatureSchema, seed: u32) {
    let Some(dsa) = schema.days_since_active_index() else {
        return;
    };
    let mut prev = seed as f64;
    for i in 0..history.days.len() {
        let date = history.date_at(i);
        if date < history.registration_date {
            history.days[i].values[dsa] = 0.0;
            continue;
        }
        // The seed only applies when the player predates the window; a player
        // registering inside it starts from 0 by construction.
        if date == history.registration_date {
            prev = 0.0;
        }
        let value = if is_active_values(&history.days[i].values, schema) {
            0.0
        } else {
            prev + 1.0
        };
        history.days[i].values[dsa] = value;
        prev = value;
    }
}

/// Builds one dense `PlayerHistory` per registered player over
/// `window = [start, end]` (inclusive). Missing days are zero-filled,
/// duplicate `(player, date, feature)` rows are summed, and the
/// days-since-active feature is derived during ingestion.
pub fn ingest_activity_log(
    rows: &[ActivityRow],
    registrations: &[Registration],
    schema: &FeatureSchema,
    window: (NaiveDate, NaiveDate),
) -> Result<Vec<PlayerHistory>> {
    let (start, end) = window;
    if start > end {
        return Err(Error::InvalidInput(format!(
            "window start {start} after end {end}"
        )));
    }
    let n_days = (end - start).num_days() as usize + 1;

    let mut players: BTreeMap<&str, &Registration> = BTreeMap::new();
    for reg in registrations {
        if players.insert(reg.player_id.as_str(), reg).is_some() {
            return Err(Error::InvalidInput(format!(
                "duplicate registration for player {:?}",
                reg.player_id
            )));
        }
    }

    let mut histories: BTreeMap<&str, PlayerHistory> = players
        .iter()
        .map(|(&id, reg)| {
            (
                id,
                PlayerHistory {
                    player_id: id.to_string(),
                    registration_date: reg.registration_date,
                    start_date: start,
                    days: vec![DailyActivity::zeros(schema.len()); n_days],
                },
            )
        })
        .collect();

    for row in rows {
        let feature = schema.feature_index(&row.feature).ok_or_else(|| {
            Error::Schema(format!("unknown feature name {:?}", row.feature))
        })?;
        if schema.days_since_active_index() == Some(feature) {
            return Err(Error::Schema(format!(
                "feature {:?} is derived and cannot appear in the activity log",
                row.feature
            )));
        }
        if !row.value.is_finite() {
            return Err(Error::InvalidInput(format!(
                "non-finite value for ({}, {}, {})",
                row.player_id, row.date, row.feature
            )));
        }
        if schema.features()[feature].kind == FeatureKind::Count && row.value < 0.0 {
            return Err(Error::InvalidInput(format!(
                "negative count {} for ({}, {}, {})",
                row.value, row.player_id, row.date, row.feature
            )));
        }
        if row.date < start || row.date > end {
            return Err(Error::DateRange {
                date: row.date,
                start,
                end,
            });
        }
        let history = histories.get_mut(row.player_id.as_str()).ok_or_else(|| {
            Error::InvalidInput(format!(
                "player {:?} has activity but no registration record",
                row.player_id
            ))
        })?;
        if row.date < history.registration_date {
            return Err(Error::InvalidInput(format!(
                "player {:?} has activity on {} before registration {}",
                row.player_id, row.date, history.registration_date
            )));
        }
        let index = (row.date - start).num_days() as usize;
        history.days[index].values[feature] += row.value;
    }

    let mut out: Vec<PlayerHistory> = histories.into_values().collect();
    for history in &mut out {
        let seed = players[history.player_id.as_str()].initial_days_since_active;
        fill_days_since_active(history, schema, seed);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Tabular IO
// ---------------------------------------------------------------------------

const ACTIVITY_HEADER: [&str; 4] = ["player_id", "date", "feature", "value"];

fn parse_date(s: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map_err(|e| Error::InvalidInput(format!("bad date {s:?}: {e}")))
}

fn parse_value(s: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|e| Error::InvalidInput(format!("bad value {s:?}: {e}")))
}

/// Reads sparse activity rows (`player_id,date,feature,value`).
pub fn read_activity_rows(reader: impl Read) -> Result<Vec<ActivityRow>> {
    let mut csv = csv::Reader::from_reader(reader);
    let header = csv.headers()?.clone();
    if header.iter().ne(ACTIVITY_HEADER) {
        return Err(Error::InvalidInput(format!(
            "expected header {:?}, got {:?}",
            ACTIVITY_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut rows = Vec::new();
    for record in csv.records() {
        let record = record?;
        if record.len() != 4 {
            return Err(Error::InvalidInput(format!(
                "activity row has {} fields, expected 4",
                record.len()
            )));
        }
        rows.push(ActivityRow {
            player_id: record[0].to_string(),
            date: parse_date(&record[1])?,
            feature: record[2].to_string(),
            value: parse_value(&record[3])?,
        });
    }
    Ok(rows)
}

pub fn read_activity_file(path: impl AsRef<Path>) -> Result<Vec<ActivityRow>> {
    read_activity_rows(std::fs::File::open(path)?)
}

/// Writes the nonzero raw-feature cells of dense histories back out as sparse
/// activity rows. The derived days-since-active feature is skipped; it is
/// recomputed on ingestion.
pub fn write_activity_rows(
    writer: impl Write,
    histories: &[PlayerHistory],
    schema: &FeatureSchema,
) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(ACTIVITY_HEADER)?;
    for history in histories {
        for (i, day) in history.days.iter().enumerate() {
            let date = history.date_at(i);
            for (f, def) in schema.features().iter().enumerate() {
                if def.kind == FeatureKind::DaysSinceActive || day.values[f] == 0.0 {
                    continue;
                }
                csv.write_record([
                    history.player_id.as_str(),
                    &date.to_string(),
                    &def.name,
                    &day.values[f].to_string(),
                ])?;
            }
        }
    }
    csv.flush()?;
    Ok(())
}

/// Reads a registration file: `player_id,registration_date` with an optional
/// third `days_since_active` column seeding the derived counter at the
/// ingestion window start.
pub fn read_registrations(reader: impl Read) -> Result<Vec<Registration>> {
    let mut csv = csv::Reader::from_reader(reader);
    let header = csv.headers()?.clone();
    let cols: Vec<&str> = header.iter().collect();
    let with_seed = match cols.as_slice() {
        ["player_id", "registration_date"] => false,
        ["player_id", "registration_date", "days_since_active"] => true,
        other => {
            return Err(Error::InvalidInput(format!(
                "unexpected registration header {:?}",
                other.join(",")
            )))
        }
    };
    let mut regs = Vec::new();
    for record in csv.records() {
        let record = record?;
        let seed = if with_seed {
            record
                .get(2)
                .unwrap_or("0")
                .parse::<u32>()
                .map_err(|e| Error::InvalidInput(format!("bad days_since_active seed: {e}")))?
        } else {
            0
        };
        regs.push(Registration {
            player_id: record[0].to_string(),
            registration_date: parse_date(&record[1])?,
            initial_days_since_active: seed,
        });
    }
    Ok(regs)
}

pub fn read_registration_file(path: impl AsRef<Path>) -> Result<Vec<Registration>> {
    read_registrations(std::fs::File::open(path)?)
}

pub fn write_registrations(writer: impl Write, registrations: &[Registration]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    let with_seed = registrations
        .iter()
        .any(|r| r.initial_days_since_active != 0);
    if with_seed {
        csv.write_record(["player_id", "registration_date", "days_since_active"])?;
    } else {
        csv.write_record(["player_id", "registration_date"])?;
    }
    for reg in registrations {
        if with_seed {
            csv.write_record([
                reg.player_id.as_str(),
                &reg.registration_date.to_string(),
                &reg.initial_days_since_active.to_string(),
            ])?;
        } else {
            csv.write_record([reg.player_id.as_str(), &reg.registration_date.to_string()])?;
        }
    }
    csv.flush()?;
    Ok(())
}

/// Exports dense series as `player_id,date,<feature names>`, one row per
/// player-day. Floats use round-trip precision.
pub fn write_dense_series(
    writer: impl Write,
    histories: &[PlayerHistory],
    schema: &FeatureSchema,
) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    let mut header = vec!["player_id".to_string(), "date".to_string()];
    header.extend(schema.features().iter().map(|f| f.name.clone()));
    csv.write_record(&header)?;
    for history in histories {
        for (i, day) in history.days.iter().enumerate() {
            let mut record = vec![history.player_id.clone(), history.date_at(i).to_string()];
            record.extend(day.values.iter().map(|v| v.to_string()));
            csv.write_record(&record)?;
        }
    }
    csv.flush()?;
    Ok(())
}

/// Reads a dense series file back. Registration dates are not part of the
/// dense format, so each returned history reports its own start date as the
/// registration date; use the sparse log plus registration file when
/// eligibility decisions matter.
pub fn read_dense_series(reader: impl Read, schema: &FeatureSchema) -> Result<Vec<PlayerHistory>> {
    let mut csv = csv::Reader::from_reader(reader);
    let header = csv.headers()?.clone();
    let mut expected = vec!["player_id".to_string(), "date".to_string()];
    expected.extend(schema.features().iter().map(|f| f.name.clone()));
    if header.iter().ne(expected.iter().map(|s| s.as_str())) {
        return Err(Error::InvalidInput(format!(
            "dense header {:?} does not match schema",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut grouped: BTreeMap<String, Vec<(NaiveDate, DailyActivity)>> = BTreeMap::new();
    for record in csv.records() {
        let record = record?;
        if record.len() != schema.len() + 2 {
            return Err(Error::InvalidInput(format!(
                "dense row has {} fields, expected {}",
                record.len(),
                schema.len() + 2
            )));
        }
        let date = parse_date(&record[1])?;
        let values = (2..record.len())
            .map(|i| parse_value(&record[i]))
            .collect::<Result<Vec<f64>>>()?;
        grouped
            .entry(record[0].to_string())
            .or_default()
            .push((date, DailyActivity { values }));
    }
    let mut out = Vec::with_capacity(grouped.len());
    for (player_id, mut days) in grouped {
        days.sort_by_key(|(d, _)| *d);
        let start = days[0].0;
        for (i, (date, _)) in days.iter().enumerate() {
            if *date != start + chrono::Days::new(i as u64) {
                return Err(Error::InvalidInput(format!(
                    "dense series for {player_id:?} is not gap-free at {date}"
                )));
            }
        }
        out.push(PlayerHistory {
            player_id,
            registration_date: start,
            start_date: start,
            days: days.into_iter().map(|(_, d)| d).collect(),
        });
    }
    Ok(out)
}
