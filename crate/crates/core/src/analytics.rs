//! Descriptive outputs over an episode set: index-event week histogram,
//! pandemic-period strata and the stratified demographics table.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::concepts::ConceptId;
use crate::episode::{age_at, gestational_week_of, week_index, GestationalTiming, PregnancyEpisode};
use crate::error::{Error, Result};
use crate::ingest::{ClinicalEvent, EventTable, Person, PersonId, PersonTable};
use crate::tabular;

/// Highest histogram bucket; later weeks are counted here.
pub const HISTOGRAM_MAX_WEEK: u32 = 45;
pub const SUPPRESSION_MASK: &str = "-";
pub const DEFAULT_SUPPRESSION_THRESHOLD: u64 = 20;
/// First day of week 28.
const THIRD_TRIMESTER_DAY: i64 = 189;

pub fn default_cutoff() -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 3, 1).unwrap()
}

/// Index-event dates per person, ascending and deduplicated.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IndexEvents {
    by_person: BTreeMap<PersonId, Vec<NaiveDate>>,
}

impl IndexEvents {
    /// Keeps events whose concept is in `concepts`, or all when `None`.
    pub fn from_events<'a>(
        events: impl IntoIterator<Item = &'a ClinicalEvent>,
        concepts: Option<&BTreeSet<ConceptId>>,
    ) -> Self {
        let mut by_person: BTreeMap<PersonId, Vec<NaiveDate>> = BTreeMap::new();
        for e in events {
            if concepts.is_none_or(|c| c.contains(&e.concept_id)) {
                by_person.entry(e.person_id).or_default().push(e.event_date);
            }
        }
        for dates in by_person.values_mut() {
            dates.sort_unstable();
            dates.dedup();
        }
        IndexEvents { by_person }
    }

    pub fn dates(&self, person: PersonId) -> &[NaiveDate] {
        self.by_person.get(&person).map_or(&[], Vec::as_slice)
    }

    pub fn person_count(&self) -> usize {
        self.by_person.len()
    }
}

/// An episode together with the index events that belong to it: dated on or
/// before its delivery and after the person's previous delivery.
#[derive(Debug, Clone)]
pub struct ScopedEpisode<'a> {
    pub episode: &'a PregnancyEpisode,
    pub index_dates: &'a [NaiveDate],
}

impl ScopedEpisode<'_> {
    pub fn earliest(&self) -> Option<NaiveDate> {
        self.index_dates.first().copied()
    }
}

pub fn scope_index_events<'a>(episodes: &'a [PregnancyEpisode], index: &'a IndexEvents) -> Vec<ScopedEpisode<'a>> {
    let mut order: Vec<&PregnancyEpisode> = episodes.iter().collect();
    order.sort_by_key(|e| (e.person_id, e.dod));
    let mut scoped = Vec::with_capacity(order.len());
    let mut previous: Option<(PersonId, NaiveDate)> = None;
    for episode in order {
        let dates = index.dates(episode.person_id);
        let lower = match previous {
            Some((p, dod)) if p == episode.person_id => dates.partition_point(|d| *d <= dod),
            _ => 0,
        };
        let upper = dates.partition_point(|d| *d <= episode.dod);
        scoped.push(ScopedEpisode {
            episode,
            index_dates: &dates[lower..upper.max(lower)],
        });
        previous = Some((episode.person_id, episode.dod));
    }
    scoped
}

pub const TIMING_HEADER: [&str; 6] = [
    "person_id",
    "episode_index",
    "index_concept_id",
    "event_date",
    "gestational_week",
    "trimester",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TimelineRow {
    pub person_id: PersonId,
    pub episode_index: u32,
    pub index_concept_id: ConceptId,
    pub event_date: NaiveDate,
    pub timing: GestationalTiming,
}

/// Places each index event on the timeline of the episode it belongs to:
/// the first episode delivered on or after the event, or the person's last
/// episode for events after every delivery. Events of persons without
/// episodes are skipped.
pub fn timeline(episodes: &[PregnancyEpisode], index_events: &[ClinicalEvent]) -> Vec<TimelineRow> {
    let mut by_person: BTreeMap<PersonId, Vec<&PregnancyEpisode>> = BTreeMap::new();
    for e in episodes {
        by_person.entry(e.person_id).or_default().push(e);
    }
    for list in by_person.values_mut() {
        list.sort_by_key(|e| e.dod);
    }
    let mut rows: Vec<TimelineRow> = index_events
        .iter()
        .filter_map(|ev| {
            let list = by_person.get(&ev.person_id)?;
            let i = list.partition_point(|e| e.dod < ev.event_date).min(list.len() - 1);
            let episode = list[i];
            Some(TimelineRow {
                person_id: ev.person_id,
                episode_index: episode.episode_index,
                index_concept_id: ev.concept_id,
                event_date: ev.event_date,
                timing: gestational_week_of(ev.event_date, episode),
            })
        })
        .collect();
    rows.sort_by_key(|r| (r.person_id, r.episode_index, r.event_date, r.index_concept_id));
    rows.dedup();
    rows
}

pub fn write_timeline<W: Write>(rows: &[TimelineRow], out: W) -> std::io::Result<()> {
    let mut w = tabular::csv_writer(out);
    w.write_record(TIMING_HEADER)?;
    for r in rows {
        w.write_record([
            r.person_id.to_string(),
            r.episode_index.to_string(),
            r.index_concept_id.to_string(),
            r.event_date.to_string(),
            r.timing.week.to_string(),
            r.timing.trimester.as_str().to_string(),
        ])?;
    }
    w.flush()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WeekHistogram {
    /// Index `w` counts week `w`; index 0 is pre-pregnancy.
    pub counts: Vec<u64>,
}

impl WeekHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Buckets the earliest in-scope index event of each episode by gestational
/// week. Weeks past the last bucket are folded into it.
pub fn infection_week_histogram(episodes: &[PregnancyEpisode], index: &IndexEvents) -> WeekHistogram {
    let mut counts = vec![0u64; HISTOGRAM_MAX_WEEK as usize + 1];
    for scoped in scope_index_events(episodes, index) {
        if let Some(date) = scoped.earliest() {
            let week = gestational_week_of(date, scoped.episode).week.min(HISTOGRAM_MAX_WEEK);
            counts[week as usize] += 1;
        }
    }
    WeekHistogram { counts }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum PandemicStratum {
    Pre,
    Peri,
}

pub fn pandemic_stratum_of(dod: NaiveDate, cutoff: NaiveDate) -> PandemicStratum {
    if dod < cutoff {
        PandemicStratum::Pre
    } else {
        PandemicStratum::Peri
    }
}

pub fn suppress_small_cells(count: u64, threshold: u64) -> String {
    if count < threshold {
        SUPPRESSION_MASK.to_string()
    } else {
        count.to_string()
    }
}

/// Inclusive date windows for each stratum. Deliveries in neither window
/// fall out of the table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StratumWindows {
    pub pre_start: NaiveDate,
    pub pre_end: NaiveDate,
    pub peri_start: NaiveDate,
    pub peri_end: NaiveDate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrataSpec {
    pub cutoff: NaiveDate,
    /// When set, replaces the single cutoff.
    pub windows: Option<StratumWindows>,
    pub threshold: u64,
}

impl Default for StrataSpec {
    fn default() -> Self {
        StrataSpec {
            cutoff: default_cutoff(),
            windows: None,
            threshold: DEFAULT_SUPPRESSION_THRESHOLD,
        }
    }
}

impl StrataSpec {
    pub fn stratum_of(&self, dod: NaiveDate) -> Option<PandemicStratum> {
        match &self.windows {
            None => Some(pandemic_stratum_of(dod, self.cutoff)),
            Some(w) if (w.pre_start..=w.pre_end).contains(&dod) => Some(PandemicStratum::Pre),
            Some(w) if (w.peri_start..=w.peri_end).contains(&dod) => Some(PandemicStratum::Peri),
            Some(_) => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(w) = &self.windows {
            if w.pre_start > w.pre_end || w.peri_start > w.peri_end || w.pre_end >= w.peri_start {
                return Err(Error::Config("stratum windows must be ordered and disjoint".into()));
            }
        }
        if self.threshold == 0 {
            return Err(Error::Config("suppression threshold must be positive".into()));
        }
        Ok(())
    }
}

pub const AGE_GROUPS: [(&str, u32, u32); 7] = [
    ("15-19", 15, 19),
    ("20-24", 20, 24),
    ("25-29", 25, 29),
    ("30-34", 30, 34),
    ("35-39", 35, 39),
    ("40-44", 40, 44),
    ("45-49", 45, 49),
];

pub const RACE_LABELS: [&str; 7] = [
    "White",
    "Black",
    "Hispanic/Latino",
    "Asian",
    "NHOPI",
    "Other/unknown",
    "Multiracial",
];

pub fn age_group(age: u32) -> Option<&'static str> {
    AGE_GROUPS
        .iter()
        .find(|(_, lo, hi)| (*lo..=*hi).contains(&age))
        .map(|(label, _, _)| *label)
}

/// Hispanic ethnicity takes precedence over the race code.
pub fn race_category(person: &Person) -> &'static str {
    let ethnicity = person.ethnicity.to_ascii_lowercase();
    if ethnicity.contains("hispanic") && !ethnicity.contains("not") && !ethnicity.contains("non") {
        return "Hispanic/Latino";
    }
    let race = person.race.to_ascii_lowercase();
    if race.contains("multi") || race.contains("more than one") || race.contains("multiple") {
        "Multiracial"
    } else if race.contains("hawaiian") || race.contains("pacific") || race == "nhopi" {
        "NHOPI"
    } else if race.contains("white") {
        "White"
    } else if race.contains("black") || race.contains("african") {
        "Black"
    } else if race.contains("asian") {
        "Asian"
    } else {
        "Other/unknown"
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConceptSet {
    pub name: String,
    pub concepts: BTreeSet<ConceptId>,
}

/// Reads a concept-set file: a `concept_id` column, other columns ignored.
pub fn load_concept_set(name: &str, path: &Path) -> Result<ConceptSet> {
    let wrap = |source: Error| Error::ConceptSet {
        name: name.to_string(),
        source: Box::new(source),
    };
    let content = tabular::read_to_string(path).map_err(wrap)?;
    parse_concept_set(name, &content, path).map_err(wrap)
}

pub fn parse_concept_set(name: &str, content: &str, path: &Path) -> Result<ConceptSet> {
    let mut rdr = tabular::reader(content);
    let header = rdr.byte_headers().map_err(|e| Error::Schema {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    if header.get(0).map(|h| String::from_utf8_lossy(h).trim().to_string()).as_deref() != Some("concept_id") {
        return Err(Error::Schema {
            path: path.to_path_buf(),
            message: "first column must be `concept_id`".into(),
        });
    }
    let mut concepts = BTreeSet::new();
    let mut record = csv::ByteRecord::new();
    while rdr.read_byte_record(&mut record).map_err(|e| Error::Schema {
        path: path.to_path_buf(),
        message: e.to_string(),
    })? {
        let id = tabular::field(&record, 0)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::row(path, tabular::line_of(&record), "invalid concept_id"))?;
        concepts.insert(ConceptId(id));
    }
    Ok(ConceptSet {
        name: name.to_string(),
        concepts,
    })
}

pub const COLUMN_LABELS: [&str; 8] = [
    "Pre-pandemic total",
    "Peri-pandemic total",
    "COVID-19 before DOD: No",
    "COVID-19 before DOD: Yes",
    "COVID-19 in first/second trimester: No",
    "COVID-19 in first/second trimester: Yes",
    "COVID-19 in third trimester: No",
    "COVID-19 in third trimester: Yes",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TableRow {
    pub characteristic: String,
    pub category: String,
    pub counts: Vec<u64>,
}

/// Counts per (row, column). Raw counts are kept; suppression happens when
/// rendering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StratifiedTable {
    pub columns: Vec<String>,
    pub column_totals: Vec<u64>,
    pub rows: Vec<TableRow>,
}

/// Which of the table columns an episode belongs to.
fn columns_for(scoped: &ScopedEpisode<'_>, stratum: PandemicStratum) -> Vec<usize> {
    let episode = scoped.episode;
    match stratum {
        PandemicStratum::Pre => vec![0],
        PandemicStratum::Peri => {
            let weeks: Vec<u32> = scoped
                .index_dates
                .iter()
                .map(|d| week_index(episode.start_date, *d))
                .collect();
            let any_index = !weeks.is_empty();
            let early = weeks.iter().any(|w| (1..=27).contains(w));
            let late = weeks.iter().any(|w| *w >= 28);
            let mut cols = vec![1, if any_index { 3 } else { 2 }, if early { 5 } else { 4 }];
            if episode.gestation_days >= THIRD_TRIMESTER_DAY {
                cols.push(if late { 7 } else { 6 });
            }
            cols
        }
    }
}

fn has_event_by(events: Option<&[ClinicalEvent]>, set: &ConceptSet, dod: NaiveDate) -> bool {
    events.is_some_and(|evs| {
        evs.iter()
            .take_while(|e| e.event_date <= dod)
            .any(|e| set.concepts.contains(&e.concept_id))
    })
}

/// Builds the demographics table. Comorbidity rows count an episode as Yes
/// when the person has any event from the set dated on or before delivery.
pub fn stratified_table(
    episodes: &[PregnancyEpisode],
    persons: &PersonTable,
    index: &IndexEvents,
    events: &EventTable,
    comorbidities: &[ConceptSet],
    strata: &StrataSpec,
) -> StratifiedTable {
    let ncols = COLUMN_LABELS.len();
    let mut rows: Vec<TableRow> = Vec::new();
    let mut push_rows = |characteristic: &str, categories: &[&str]| {
        for c in categories {
            rows.push(TableRow {
                characteristic: characteristic.to_string(),
                category: c.to_string(),
                counts: vec![0; ncols],
            });
        }
    };
    push_rows("Age group", &AGE_GROUPS.map(|(l, _, _)| l));
    push_rows("Race", &RACE_LABELS);
    for set in comorbidities {
        push_rows(&set.name, &["No", "Yes"]);
    }
    let race_offset = AGE_GROUPS.len();
    let comorbidity_offset = race_offset + RACE_LABELS.len();

    let events_of = |person: PersonId| -> Option<&[ClinicalEvent]> {
        events
            .groups
            .binary_search_by_key(&person, |g| g.person_id)
            .ok()
            .map(|i| events.groups[i].events.as_slice())
    };

    let mut column_totals = vec![0u64; ncols];
    for scoped in scope_index_events(episodes, index) {
        let episode = scoped.episode;
        let Some(stratum) = strata.stratum_of(episode.dod) else {
            continue;
        };
        let cols = columns_for(&scoped, stratum);
        let mut hit_rows = Vec::new();
        if let Some(person) = persons.get(episode.person_id) {
            if let Some(group) = age_at(person.birth_date, episode.dod).and_then(age_group) {
                hit_rows.push(AGE_GROUPS.iter().position(|(l, _, _)| *l == group).unwrap());
            }
            let race = race_category(person);
            hit_rows.push(race_offset + RACE_LABELS.iter().position(|l| *l == race).unwrap());
        }
        let person_events = events_of(episode.person_id);
        for (i, set) in comorbidities.iter().enumerate() {
            let yes = has_event_by(person_events, set, episode.dod);
            hit_rows.push(comorbidity_offset + 2 * i + usize::from(yes));
        }
        for &c in &cols {
            column_totals[c] += 1;
            for &r in &hit_rows {
                rows[r].counts[c] += 1;
            }
        }
    }
    StratifiedTable {
        columns: COLUMN_LABELS.iter().map(|s| s.to_string()).collect(),
        column_totals,
        rows,
    }
}

fn percent(count: u64, total: u64) -> String {
    if total == 0 {
        String::new()
    } else {
        format!("{:.1}%", count as f64 * 100.0 / total as f64)
    }
}

/// Cell text for a count; `threshold` of `None` shows raw counts.
fn cell(count: u64, total: u64, threshold: Option<u64>) -> (String, String) {
    match threshold {
        Some(t) if count < t => (SUPPRESSION_MASK.into(), SUPPRESSION_MASK.into()),
        _ => (count.to_string(), percent(count, total)),
    }
}

pub fn render_markdown(table: &StratifiedTable, histogram: Option<&WeekHistogram>, threshold: Option<u64>) -> String {
    let mut md = String::new();
    md.push_str("# Cohort report\n\n");
    match threshold {
        Some(t) => md.push_str(&format!("Counts below {t} are shown as `{SUPPRESSION_MASK}`.\n\n")),
        None => md.push_str("Counts are unsuppressed.\n\n"),
    }
    md.push_str("| Characteristic | Category |");
    for c in &table.columns {
        md.push_str(&format!(" {c} |"));
    }
    md.push_str("\n|---|---|");
    md.push_str(&"---:|".repeat(table.columns.len()));
    md.push_str("\n| Total | n |");
    for &t in &table.column_totals {
        md.push_str(&format!(" {} |", cell(t, t, threshold).0));
    }
    md.push('\n');
    for row in &table.rows {
        md.push_str(&format!("| {} | {} |", row.characteristic, row.category));
        for (&n, &total) in row.counts.iter().zip(&table.column_totals) {
            let (count, pct) = cell(n, total, threshold);
            if pct.is_empty() || pct == SUPPRESSION_MASK {
                md.push_str(&format!(" {count} |"));
            } else {
                md.push_str(&format!(" {count} ({pct}) |"));
            }
        }
        md.push('\n');
    }
    if let Some(h) = histogram {
        md.push_str("\n## Index events by gestational week\n\nWeek 0 is pre-pregnancy; the last row includes later weeks.\n\n| Week | Count |\n|---:|---:|\n");
        for (week, &n) in h.counts.iter().enumerate() {
            md.push_str(&format!("| {week} | {} |\n", cell(n, 0, threshold).0));
        }
    }
    md
}

pub fn write_table_csv<W: Write>(table: &StratifiedTable, threshold: Option<u64>, out: W) -> std::io::Result<()> {
    let mut w = tabular::csv_writer(out);
    w.write_record(["characteristic", "category", "column", "count", "percent"])?;
    for (c, &total) in table.columns.iter().zip(&table.column_totals) {
        let (count, _) = cell(total, total, threshold);
        w.write_record(["Total", "n", c, &count, ""])?;
    }
    for row in &table.rows {
        for ((c, &n), &total) in table.columns.iter().zip(&row.counts).zip(&table.column_totals) {
            let (count, pct) = cell(n, total, threshold);
            w.write_record([&row.characteristic, &row.category, c, &count, &pct])?;
        }
    }
    w.flush()
}

pub fn write_histogram_csv<W: Write>(histogram: &WeekHistogram, threshold: Option<u64>, out: W) -> std::io::Result<()> {
    let mut w = tabular::csv_writer(out);
    w.write_record(["week", "count"])?;
    for (week, &n) in histogram.counts.iter().enumerate() {
        w.write_record([week.to_string(), cell(n, 0, threshold).0])?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::concepts::{AccuracyLevel, Domain, Registries};
    use crate::episode::ExtremeFlag;
    use chrono::Duration;

    fn date(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn episode(person: i64, start: &str, days: i64) -> PregnancyEpisode {
        let start_date = date(start);
        PregnancyEpisode {
            person_id: PersonId(person),
            episode_index: 1,
            start_date,
            dod: start_date + Duration::days(days),
            gestation_days: days,
            ga_accuracy: AccuracyLevel::High,
            dod_domain_rank: 1,
            extreme_flag: ExtremeFlag::None,
            conflict_flag: false,
            ga_anchor_concept_id: None,
            dod_anchor_concept_id: None,
        }
    }

    fn index_at(person: i64, dates: &[NaiveDate]) -> IndexEvents {
        let events: Vec<ClinicalEvent> = dates
            .iter()
            .map(|d| ClinicalEvent {
                person_id: PersonId(person),
                concept_id: ConceptId(37311061),
                domain: Domain::Condition,
                event_date: *d,
            })
            .collect();
        IndexEvents::from_events(&events, None)
    }

    #[test]
    fn pre_pregnancy_event_lands_in_week_zero() {
        let e = episode(1, "2020-01-01", 280);
        let h = infection_week_histogram(&[e.clone()], &index_at(1, &[e.start_date - Duration::days(5)]));
        assert_eq!(h.counts[0], 1);
        assert_eq!(h.total(), 1);
    }

    #[test]
    fn episode_without_index_event_counts_nowhere() {
        let h = infection_week_histogram(&[episode(1, "2020-01-01", 280)], &IndexEvents::default());
        assert_eq!(h.total(), 0);
        assert_eq!(h.counts.len(), 46);
    }

    #[test]
    fn earliest_event_wins() {
        let e = episode(1, "2020-01-01", 280);
        let w10 = e.start_date + Duration::days(63);
        let w30 = e.start_date + Duration::days(203);
        let h = infection_week_histogram(&[e], &index_at(1, &[w30, w10]));
        assert_eq!(h.counts[10], 1);
        assert_eq!(h.counts[30], 0);
    }

    #[test]
    fn events_after_previous_delivery_belong_to_next_episode() {
        let first = episode(1, "2018-01-01", 280);
        let mut second = episode(1, "2019-03-01", 280);
        second.episode_index = 2;
        let between = first.dod + Duration::days(10);
        let index = index_at(1, &[between]);
        let both = [first, second];
        let scoped = scope_index_events(&both, &index);
        assert!(scoped[0].index_dates.is_empty());
        assert_eq!(scoped[1].index_dates, &[between]);
        let h = infection_week_histogram(&both, &index);
        assert_eq!(h.counts[0], 1);
    }

    #[test]
    fn strata_examples() {
        let cutoff = default_cutoff();
        assert_eq!(pandemic_stratum_of(date("2020-02-29"), cutoff), PandemicStratum::Pre);
        assert_eq!(pandemic_stratum_of(date("2020-05-01"), cutoff), PandemicStratum::Peri);
        assert_eq!(pandemic_stratum_of(date("2020-04-01"), cutoff), PandemicStratum::Peri);
        let windows = StrataSpec {
            windows: Some(StratumWindows {
                pre_start: date("2018-06-01"),
                pre_end: date("2020-02-29"),
                peri_start: date("2020-05-01"),
                peri_end: date("2021-05-31"),
            }),
            ..StrataSpec::default()
        };
        assert_eq!(windows.stratum_of(date("2020-04-01")), None);
        assert_eq!(windows.stratum_of(date("2020-05-01")), Some(PandemicStratum::Peri));
    }

    #[test]
    fn suppression_examples() {
        assert_eq!(suppress_small_cells(19, 20), "-");
        assert_eq!(suppress_small_cells(20, 20), "20");
        assert_eq!(suppress_small_cells(0, 20), "-");
    }

    fn persons(n: i64) -> PersonTable {
        PersonTable::from_persons((1..=n).map(|id| Person {
            person_id: PersonId(id),
            birth_date: date("1990-03-01"),
            sex: "F".into(),
            race: "White".into(),
            ethnicity: "Not Hispanic or Latino".into(),
        }))
    }

    #[test]
    fn empty_table_is_all_zero_and_masked() {
        let t = stratified_table(
            &[],
            &persons(0),
            &IndexEvents::default(),
            &EventTable::default(),
            &[],
            &StrataSpec::default(),
        );
        assert!(t.column_totals.iter().all(|&n| n == 0));
        assert!(t.rows.iter().all(|r| r.counts.iter().all(|&n| n == 0)));
        let md = render_markdown(&t, None, Some(20));
        assert!(!md.contains(" 0 |"));
    }

    #[test]
    fn saturated_comorbidity_is_full_yes() {
        let n = 25;
        let episodes: Vec<_> = (1..=n).map(|p| episode(p, "2020-01-01", 280)).collect();
        let events: Vec<ClinicalEvent> = (1..=n)
            .map(|p| ClinicalEvent {
                person_id: PersonId(p),
                concept_id: ConceptId(433736),
                domain: Domain::Condition,
                event_date: date("2020-02-01"),
            })
            .collect();
        let table = EventTable::from_events(events, &persons(n), &Registries::default());
        let obesity = ConceptSet {
            name: "Obesity".into(),
            concepts: [ConceptId(433736)].into(),
        };
        let t = stratified_table(
            &episodes,
            &persons(n),
            &IndexEvents::default(),
            &table,
            &[obesity],
            &StrataSpec::default(),
        );
        let yes = t.rows.iter().find(|r| r.characteristic == "Obesity" && r.category == "Yes").unwrap();
        for (n, total) in yes.counts.iter().zip(&t.column_totals) {
            assert_eq!(n, total);
        }
        assert_eq!(t.column_totals[1], 25);
        assert_eq!(t.column_totals[6], 25);
        let mut csv = Vec::new();
        write_table_csv(&t, Some(20), &mut csv).unwrap();
        assert!(String::from_utf8(csv).unwrap().contains("Obesity,Yes,Peri-pandemic total,25,100.0%"));
    }

    #[test]
    fn third_trimester_columns_need_week_28() {
        let short = episode(1, "2020-01-01", 180);
        let index = index_at(1, &[short.start_date + Duration::days(100)]);
        let scoped = scope_index_events(std::slice::from_ref(&short), &index);
        assert_eq!(columns_for(&scoped[0], PandemicStratum::Peri), vec![1, 3, 5]);
    }

    #[test]
    fn race_categories() {
        let mut p = persons(1).get(PersonId(1)).unwrap().clone();
        assert_eq!(race_category(&p), "White");
        p.ethnicity = "Hispanic or Latino".into();
        assert_eq!(race_category(&p), "Hispanic/Latino");
        p.ethnicity.clear();
        p.race = "Native Hawaiian or Other Pacific Islander".into();
        assert_eq!(race_category(&p), "NHOPI");
        p.race = "Unknown".into();
        assert_eq!(race_category(&p), "Other/unknown");
    }

    #[test]
    fn concept_set_parsing() {
        let set = parse_concept_set("Obesity", "concept_id,name\n433736,Obesity\n", Path::new("x.csv")).unwrap();
        assert_eq!(set.concepts.len(), 1);
        assert!(parse_concept_set("x", "id\n1\n", Path::new("x.csv")).is_err());
        let err = load_concept_set("Diabetes", Path::new("/nonexistent/diabetes.csv")).unwrap_err();
        assert!(err.to_string().contains("Diabetes"));
    }

    #[test]
    fn timeline_assigns_events_to_episodes() {
        let first = episode(1, "2018-01-01", 280);
        let mut second = episode(1, "2019-03-01", 280);
        second.episode_index = 2;
        let ev = |d: NaiveDate| ClinicalEvent {
            person_id: PersonId(1),
            concept_id: ConceptId(37311061),
            domain: Domain::Condition,
            event_date: d,
        };
        let rows = timeline(
            &[first.clone(), second.clone()],
            &[
                ev(first.start_date),
                ev(first.dod + Duration::days(3)),
                ev(second.dod + Duration::days(3)),
                ClinicalEvent { person_id: PersonId(2), ..ev(first.start_date) },
            ],
        );
        let got: Vec<(u32, u32, &str)> = rows
            .iter()
            .map(|r| (r.episode_index, r.timing.week, r.timing.trimester.as_str()))
            .collect();
        assert_eq!(got, vec![(1, 1, "first"), (2, 0, "pre"), (2, 41, "post_delivery")]);
    }
}
