//! Seeded synthetic cohorts with known truth.
//!
//! Randomness comes from ChaCha8: the base seed selects the key and each
//! person id selects a stream, so a person's records do not depend on how
//! many other persons are generated or on thread scheduling. Noise uses a
//! second family of streams, so enabling a noise channel never changes the
//! clean records it perturbs.

use std::io::Write;
use std::path::Path;

use chrono::{Duration, Months, NaiveDate};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::concepts::{AccuracyLevel, ConceptId, DodConceptSpec, GaConceptSpec, Registries, MAX_WEEK};
use crate::config::EngineConfig;
use crate::episode::week_index;
use crate::error::{Error, Result};
use crate::eval::{TruthEpisode, TRUTH_HEADER};
use crate::ga::ga_days;
use crate::ingest::{self, ClinicalEvent, Person, PersonId};
use crate::tabular;

pub const DEFAULT_INDEX_CONCEPT: ConceptId = ConceptId(37311061);
const NOISE_STREAM_BIT: u64 = 1 << 63;

/// GA events emitted per antenatal visit, by accuracy level. A level is
/// skipped at a visit when none of its concepts covers that week.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EventsPerVisit {
    pub high: usize,
    pub moderate_high: usize,
    pub moderate_low: usize,
    pub low: usize,
}

impl Default for EventsPerVisit {
    fn default() -> Self {
        EventsPerVisit {
            high: 1,
            moderate_high: 1,
            moderate_low: 0,
            low: 1,
        }
    }
}

impl EventsPerVisit {
    fn get(&self, level: AccuracyLevel) -> usize {
        match level {
            AccuracyLevel::High => self.high,
            AccuracyLevel::ModerateHigh => self.moderate_high,
            AccuracyLevel::ModerateLow => self.moderate_low,
            AccuracyLevel::Low => self.low,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Per GA event.
    pub drop_ga: f64,
    /// Per gestation: one Low event whose implied start is 15-60 days off.
    pub conflict_ga: f64,
    /// Per gestation: a second High event on the date of an existing one,
    /// a few weeks apart.
    pub same_date_conflict: f64,
    /// Per GA or delivery event.
    pub shift: f64,
    pub shift_max_days: i64,
    /// Per delivery event.
    pub drop_dod: f64,
    /// Per gestation: index event 1-30 days before the start.
    pub pre_pregnancy_index: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            drop_ga: 0.0,
            conflict_ga: 0.0,
            same_date_conflict: 0.0,
            shift: 0.0,
            shift_max_days: 3,
            drop_dod: 0.0,
            pre_pregnancy_index: 0.0,
        }
    }
}

impl NoiseConfig {
    pub fn is_silent(&self) -> bool {
        self.rates().iter().all(|(_, r)| *r == 0.0)
    }

    fn rates(&self) -> [(&'static str, f64); 6] {
        [
            ("drop_ga", self.drop_ga),
            ("conflict_ga", self.conflict_ga),
            ("same_date_conflict", self.same_date_conflict),
            ("shift", self.shift),
            ("drop_dod", self.drop_dod),
            ("pre_pregnancy_index", self.pre_pregnancy_index),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, rate) in self.rates() {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::Config(format!("noise rate {name} must lie in [0, 1], got {rate}")));
            }
        }
        if self.shift > 0.0 && self.shift_max_days < 1 {
            return Err(Error::Config("shift_max_days must be at least 1 when shift noise is on".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_persons: usize,
    pub first_person_id: i64,
    /// Relative weights for 1, 2 and 3 gestations per person.
    pub gestation_weights: [f64; 3],
    pub gestation_mean_days: f64,
    pub gestation_sd_days: f64,
    pub gestation_min_days: i64,
    pub gestation_max_days: i64,
    pub visit_weeks: Vec<u32>,
    pub events_per_visit: EventsPerVisit,
    pub dod_events: usize,
    /// Every delivery falls inside this window.
    pub dod_window_start: NaiveDate,
    pub dod_window_end: NaiveDate,
    /// Age in whole years at the first delivery.
    pub min_age: u32,
    pub max_age: u32,
    pub min_gap_days: i64,
    /// Truth gestations of one person are at least this far apart in both
    /// start and delivery; one more than the engines' clustering window.
    pub separation_days: i64,
    pub index_concept: ConceptId,
    /// Per gestation: one index event somewhere between start and delivery.
    pub index_rate: f64,
    pub noise: NoiseConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 1,
            n_persons: 100,
            first_person_id: 1,
            gestation_weights: [0.6, 0.3, 0.1],
            gestation_mean_days: 274.0,
            gestation_sd_days: 12.0,
            gestation_min_days: 100,
            gestation_max_days: 320,
            visit_weeks: vec![8, 12, 16, 20, 24, 28, 32, 36, 38, 40],
            events_per_visit: EventsPerVisit::default(),
            dod_events: 2,
            dod_window_start: NaiveDate::from_ymd_opt(2018, 6, 1).unwrap(),
            dod_window_end: NaiveDate::from_ymd_opt(2021, 5, 31).unwrap(),
            min_age: 18,
            max_age: 40,
            min_gap_days: 60,
            separation_days: EngineConfig::default().window_days + 1,
            index_concept: DEFAULT_INDEX_CONCEPT,
            index_rate: 0.3,
            noise: NoiseConfig::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.gestation_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0))
            || self.gestation_weights.iter().sum::<f64>() <= 0.0
        {
            return cfg("gestation_weights must be non-negative with a positive sum".into());
        }
        if self.gestation_min_days < 1 || self.gestation_min_days > self.gestation_max_days {
            return cfg(format!(
                "gestation clamp [{}, {}] is invalid",
                self.gestation_min_days, self.gestation_max_days
            ));
        }
        if !(self.gestation_sd_days >= 0.0 && self.gestation_mean_days.is_finite()) {
            return cfg("gestation distribution must have finite mean and non-negative sd".into());
        }
        if let Some(w) = self.visit_weeks.iter().find(|w| **w == 0 || **w > MAX_WEEK) {
            return cfg(format!("visit week {w} outside 1..={MAX_WEEK}"));
        }
        if self.dod_window_start > self.dod_window_end {
            return cfg("dod window start is after its end".into());
        }
        if self.min_age > self.max_age {
            return cfg("min_age exceeds max_age".into());
        }
        if self.min_gap_days < 1 || self.separation_days < 1 {
            return cfg("min_gap_days and separation_days must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.index_rate) {
            return cfg(format!("index_rate must lie in [0, 1], got {}", self.index_rate));
        }
        if self.first_person_id < 0 {
            return cfg("first_person_id must be non-negative".into());
        }
        self.noise.validate()
    }
}

/// Registry concepts usable by the generator. Concepts present in both
/// registries are left out so that no event feeds both engines.
#[derive(Debug, Clone)]
pub struct ConceptPools {
    /// `ga[level][week]`: concepts of that level covering that week.
    ga: Vec<Vec<Vec<GaConceptSpec>>>,
    dod: Vec<DodConceptSpec>,
}

impl ConceptPools {
    pub fn new(registries: &Registries) -> Result<Self> {
        let mut ga = vec![vec![Vec::new(); MAX_WEEK as usize + 1]; AccuracyLevel::ALL.len()];
        for spec in registries.ga.iter().filter(|s| !registries.dod.contains(s.concept_id)) {
            for week in spec.week_low..=spec.week_high {
                ga[level_slot(spec.accuracy)][week as usize].push(spec.clone());
            }
        }
        let dod: Vec<DodConceptSpec> = registries
            .dod
            .iter()
            .filter(|s| !registries.ga.contains(s.concept_id))
            .cloned()
            .collect();
        if dod.is_empty() {
            return Err(Error::Generation("no delivery concepts available".into()));
        }
        Ok(ConceptPools { ga, dod })
    }

    fn ga_at(&self, level: AccuracyLevel, week: u32) -> &[GaConceptSpec] {
        self.ga[level_slot(level)]
            .get(week as usize)
            .map_or(&[], Vec::as_slice)
    }

    fn all_of(&self, level: AccuracyLevel) -> Vec<&GaConceptSpec> {
        let mut specs: Vec<&GaConceptSpec> = self.ga[level_slot(level)].iter().flatten().collect();
        specs.sort_by_key(|s| s.concept_id);
        specs.dedup_by_key(|s| s.concept_id);
        specs
    }
}

fn level_slot(level: AccuracyLevel) -> usize {
    usize::from(level.rank() - 1)
}

/// One generated gestation before it is flattened into tables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthGestation {
    pub start: NaiveDate,
    pub dod: NaiveDate,
    pub ga_events: Vec<ClinicalEvent>,
    pub dod_events: Vec<ClinicalEvent>,
    pub index_dates: Vec<NaiveDate>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthPerson {
    pub person: Person,
    /// In chronological order.
    pub gestations: Vec<SynthGestation>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NoiseRecord {
    pub person_id: PersonId,
    pub episode_index: u32,
    pub channel: &'static str,
    pub concept_id: ConceptId,
    pub original_date: Option<NaiveDate>,
    pub new_date: Option<NaiveDate>,
}

pub const NOISE_LOG_HEADER: [&str; 6] = [
    "person_id",
    "episode_index",
    "channel",
    "concept_id",
    "original_date",
    "new_date",
];

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SynthCohort {
    pub persons: Vec<Person>,
    /// Canonically sorted GA and delivery events.
    pub events: Vec<ClinicalEvent>,
    pub index_events: Vec<ClinicalEvent>,
    pub truth: Vec<TruthEpisode>,
    pub noise_log: Vec<NoiseRecord>,
}

fn person_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const RACES: [(&str, f64); 7] = [
    ("White", 0.52),
    ("Black or African American", 0.18),
    ("Asian", 0.05),
    ("Native Hawaiian or Other Pacific Islander", 0.01),
    ("Multiple races", 0.01),
    ("Other", 0.03),
    ("Unknown", 0.20),
];

/// Generates one person's clean records.
pub fn generate_person(config: &SynthConfig, pools: &ConceptPools, person_id: PersonId) -> Result<SynthPerson> {
    let mut rng = person_rng(config.seed, person_id.0 as u64);

    let n = WeightedIndex::new(config.gestation_weights)
        .map_err(|e| Error::Config(format!("gestation_weights: {e}")))?
        .sample(&mut rng)
        + 1;
    let normal = Normal::new(config.gestation_mean_days, config.gestation_sd_days)
        .map_err(|e| Error::Config(format!("gestation distribution: {e}")))?;
    let lengths: Vec<i64> = (0..n)
        .map(|_| {
            (normal.sample(&mut rng).round() as i64).clamp(config.gestation_min_days, config.gestation_max_days)
        })
        .collect();

    // Gap between a delivery and the next start.
    let min_gaps: Vec<i64> = lengths
        .windows(2)
        .map(|w| {
            config
                .min_gap_days
                .max(config.separation_days - w[0])
                .max(config.separation_days - w[1])
        })
        .collect();
    let min_span: i64 = min_gaps.iter().zip(&lengths[1..]).map(|(g, l)| g + l).sum();
    let window_len = (config.dod_window_end - config.dod_window_start).num_days();
    if min_span > window_len {
        return Err(Error::Generation(format!(
            "person {person_id}: {n} gestations need deliveries spread over {min_span} days \
             but the delivery window spans only {window_len}"
        )));
    }
    let mut slack = window_len - min_span;
    let mut gaps = Vec::with_capacity(min_gaps.len());
    for g in &min_gaps {
        let extra = rng.random_range(0..=slack.min(365));
        slack -= extra;
        gaps.push(g + extra);
    }
    let first_dod = config.dod_window_start + Duration::days(rng.random_range(0..=slack));

    let mut gestations = Vec::with_capacity(n);
    let mut dod = first_dod;
    for (i, &len) in lengths.iter().enumerate() {
        if i > 0 {
            dod = dod + Duration::days(gaps[i - 1] + len);
        }
        let start = dod - Duration::days(len);
        gestations.push(generate_gestation(config, pools, person_id, start, dod, &mut rng));
    }

    let age = rng.random_range(config.min_age..=config.max_age);
    let birth_date = first_dod
        .checked_sub_months(Months::new(12 * age))
        .ok_or_else(|| Error::Generation("birth date out of range".into()))?
        - Duration::days(rng.random_range(0..=364));
    let race_weights = WeightedIndex::new(RACES.iter().map(|(_, w)| *w)).expect("static weights");
    let race = RACES[race_weights.sample(&mut rng)].0.to_string();
    let ethnicity = if rng.random_bool(0.18) {
        "Hispanic or Latino"
    } else {
        "Not Hispanic or Latino"
    };
    Ok(SynthPerson {
        person: Person {
            person_id,
            birth_date,
            sex: "F".into(),
            race,
            ethnicity: ethnicity.into(),
        },
        gestations,
    })
}

fn generate_gestation(
    config: &SynthConfig,
    pools: &ConceptPools,
    person_id: PersonId,
    start: NaiveDate,
    dod: NaiveDate,
    rng: &mut ChaCha8Rng,
) -> SynthGestation {
    let length = (dod - start).num_days();
    let mut ga_events = Vec::new();
    for &week in &config.visit_weeks {
        if 7 * i64::from(week) >= length {
            continue;
        }
        let date = start + Duration::days(7 * i64::from(week));
        for level in AccuracyLevel::ALL {
            let pool = pools.ga_at(level, week);
            for spec in pool.choose_multiple(rng, config.events_per_visit.get(level)) {
                ga_events.push(ClinicalEvent {
                    person_id,
                    concept_id: spec.concept_id,
                    domain: spec.domain,
                    event_date: date,
                });
            }
        }
    }
    let dod_events = pools
        .dod
        .choose_multiple(rng, config.dod_events)
        .map(|spec| ClinicalEvent {
            person_id,
            concept_id: spec.concept_id,
            domain: spec.domain,
            event_date: dod,
        })
        .collect();
    let mut index_dates = Vec::new();
    if config.index_rate > 0.0 && rng.random_bool(config.index_rate) {
        index_dates.push(start + Duration::days(rng.random_range(0..=length)));
    }
    SynthGestation {
        start,
        dod,
        ga_events,
        dod_events,
        index_dates,
    }
}

/// Perturbs one person's gestations in place and logs every change.
pub fn inject_noise(
    person: &mut SynthPerson,
    noise: &NoiseConfig,
    pools: &ConceptPools,
    seed: u64,
) -> Vec<NoiseRecord> {
    let mut log = Vec::new();
    if noise.is_silent() {
        return log;
    }
    let person_id = person.person.person_id;
    let mut rng = person_rng(seed, person_id.0 as u64 | NOISE_STREAM_BIT);
    let low_pool = pools.all_of(AccuracyLevel::Low);

    for (i, g) in person.gestations.iter_mut().enumerate() {
        let episode_index = i as u32 + 1;
        let record = |channel, concept_id, original_date, new_date| NoiseRecord {
            person_id,
            episode_index,
            channel,
            concept_id,
            original_date,
            new_date,
        };
        let length = (g.dod - g.start).num_days();

        if noise.drop_ga > 0.0 {
            g.ga_events.retain(|e| {
                let drop = rng.random_bool(noise.drop_ga);
                if drop {
                    log.push(record("drop_ga", e.concept_id, Some(e.event_date), None));
                }
                !drop
            });
        }

        if noise.conflict_ga > 0.0 && rng.random_bool(noise.conflict_ga) {
            let magnitude = rng.random_range(15..=60);
            let sign: i64 = if rng.random_bool(0.5) { 1 } else { -1 };
            let mut placed = None;
            for offset in [sign * magnitude, -sign * magnitude] {
                let fits: Vec<&&GaConceptSpec> = low_pool
                    .iter()
                    .filter(|s| (0..=length).contains(&(ga_days(s) + offset)))
                    .collect();
                if let Some(spec) = fits.choose(&mut rng) {
                    placed = Some((**spec, offset));
                    break;
                }
            }
            if let Some((spec, offset)) = placed {
                let date = g.start + Duration::days(ga_days(spec) + offset);
                g.ga_events.push(ClinicalEvent {
                    person_id,
                    concept_id: spec.concept_id,
                    domain: spec.domain,
                    event_date: date,
                });
                log.push(record("conflict_ga", spec.concept_id, None, Some(date)));
            }
        }

        if noise.same_date_conflict > 0.0 && rng.random_bool(noise.same_date_conflict) {
            let highs: Vec<(ClinicalEvent, u32)> = g
                .ga_events
                .iter()
                .filter_map(|e| {
                    let days = (e.event_date - g.start).num_days();
                    let week = u32::try_from(days / 7).ok()?;
                    pools
                        .ga_at(AccuracyLevel::High, week)
                        .iter()
                        .any(|s| s.concept_id == e.concept_id)
                        .then_some((*e, week))
                })
                .collect();
            if let Some((event, week)) = highs.choose(&mut rng).copied() {
                let delta = rng.random_range(2..=4);
                let other = if week > delta && rng.random_bool(0.5) { week - delta } else { week + delta };
                if let Some(spec) = pools.ga_at(AccuracyLevel::High, other).first() {
                    g.ga_events.push(ClinicalEvent {
                        person_id,
                        concept_id: spec.concept_id,
                        domain: spec.domain,
                        event_date: event.event_date,
                    });
                    log.push(record("same_date_conflict", spec.concept_id, None, Some(event.event_date)));
                }
            }
        }

        if noise.shift > 0.0 {
            for e in g.ga_events.iter_mut().chain(g.dod_events.iter_mut()) {
                if rng.random_bool(noise.shift) {
                    let days = rng.random_range(1..=noise.shift_max_days);
                    let moved = if rng.random_bool(0.5) { e.event_date + Duration::days(days) } else { e.event_date - Duration::days(days) };
                    log.push(record("shift", e.concept_id, Some(e.event_date), Some(moved)));
                    e.event_date = moved;
                }
            }
        }

        if noise.drop_dod > 0.0 {
            g.dod_events.retain(|e| {
                let drop = rng.random_bool(noise.drop_dod);
                if drop {
                    log.push(record("drop_dod", e.concept_id, Some(e.event_date), None));
                }
                !drop
            });
        }

        if noise.pre_pregnancy_index > 0.0 && rng.random_bool(noise.pre_pregnancy_index) {
            let date = g.start - Duration::days(rng.random_range(1..=30));
            g.index_dates.push(date);
            g.index_dates.sort_unstable();
            log.push(record("pre_pregnancy_index", ConceptId(0), None, Some(date)));
        }
    }
    log
}

/// Generates a cohort on the global rayon pool. Output does not depend on
/// the number of worker threads.
pub fn generate_cohort(config: &SynthConfig, registries: &Registries) -> Result<SynthCohort> {
    config.validate()?;
    let pools = ConceptPools::new(registries)?;
    let first = config.first_person_id;
    let people: Vec<(SynthPerson, Vec<NoiseRecord>)> = (0..config.n_persons as i64)
        .into_par_iter()
        .map(|i| {
            let mut p = generate_person(config, &pools, PersonId(first + i))?;
            let log = inject_noise(&mut p, &config.noise, &pools, config.seed);
            Ok((p, log))
        })
        .collect::<Result<_>>()?;

    let mut cohort = SynthCohort::default();
    for (p, log) in people {
        let person_id = p.person.person_id;
        for (i, g) in p.gestations.iter().enumerate() {
            cohort.events.extend(&g.ga_events);
            cohort.events.extend(&g.dod_events);
            cohort.index_events.extend(g.index_dates.iter().map(|d| ClinicalEvent {
                person_id,
                concept_id: config.index_concept,
                domain: crate::concepts::Domain::Condition,
                event_date: *d,
            }));
            cohort.truth.push(TruthEpisode {
                person_id,
                episode_index: i as u32 + 1,
                true_start: g.start,
                true_dod: g.dod,
                index_event_week: g.index_dates.first().map(|d| week_index(g.start, *d)),
            });
        }
        cohort.noise_log.extend(log);
        cohort.persons.push(p.person);
    }
    ingest::sort_events(&mut cohort.events);
    ingest::sort_events(&mut cohort.index_events);
    Ok(cohort)
}

pub fn write_truth<W: Write>(truth: &[TruthEpisode], out: W) -> std::io::Result<()> {
    let mut w = tabular::csv_writer(out);
    w.write_record(TRUTH_HEADER)?;
    for t in truth {
        w.write_record([
            t.person_id.to_string(),
            t.episode_index.to_string(),
            t.true_start.to_string(),
            t.true_dod.to_string(),
            t.index_event_week.map(|w| w.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()
}

pub fn write_noise_log<W: Write>(log: &[NoiseRecord], out: W) -> std::io::Result<()> {
    let mut w = tabular::csv_writer(out);
    w.write_record(NOISE_LOG_HEADER)?;
    let date = |d: Option<NaiveDate>| d.map(|d| d.to_string()).unwrap_or_default();
    for r in log {
        w.write_record([
            r.person_id.to_string(),
            r.episode_index.to_string(),
            r.channel.to_string(),
            r.concept_id.to_string(),
            date(r.original_date),
            date(r.new_date),
        ])?;
    }
    w.flush()
}

/// Writes persons.csv, events.csv, index_events.csv, truth.csv and
/// noise_log.csv into `dir`.
pub fn write_cohort(cohort: &SynthCohort, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let create = |name: &str| {
        let path = dir.join(name);
        std::fs::File::create(&path)
            .map(std::io::BufWriter::new)
            .map_err(|e| Error::io(path, e))
    };
    let wrap = |name: &str| {
        let path = dir.join(name);
        move |e: std::io::Error| Error::io(path, e)
    };
    ingest::write_persons(&cohort.persons, create("persons.csv")?).map_err(wrap("persons.csv"))?;
    ingest::write_events(&cohort.events, create("events.csv")?).map_err(wrap("events.csv"))?;
    ingest::write_events(&cohort.index_events, create("index_events.csv")?).map_err(wrap("index_events.csv"))?;
    write_truth(&cohort.truth, create("truth.csv")?).map_err(wrap("truth.csv"))?;
    write_noise_log(&cohort.noise_log, create("noise_log.csv")?).map_err(wrap("noise_log.csv"))?;
    Ok(())
}
