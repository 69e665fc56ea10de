//! Brute-force reference for the start and delivery engines, plus the random
//! per-person instances used to compare against them. Works on plain day
//! numbers and re-derives accuracy, midpoint and rank from raw inputs.
#![allow(dead_code)]

use std::collections::BTreeMap;

use chrono::{Duration, NaiveDate};
use gestation_core::concepts::{GaConceptSpec, Registries};
use gestation_core::dod::{infer_delivery_dates, DeliveryRecord};
use gestation_core::ga::{candidates_for, infer_gestation_starts, GestationStart};
use gestation_core::{ClinicalEvent, ConceptId, Domain, EngineConfig, PersonId};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const WINDOW: i64 = 270;
pub const CONFLICT_DAYS: i64 = 14;

fn epoch() -> NaiveDate {
    NaiveDate::from_ymd_opt(2000, 1, 1).unwrap()
}

pub fn day(d: NaiveDate) -> i64 {
    (d - epoch()).num_days()
}

pub fn date(day: i64) -> NaiveDate {
    epoch() + Duration::days(day)
}

#[derive(Debug, Clone, Copy)]
pub struct RawGa {
    pub concept: i64,
    pub event_day: i64,
    pub week_low: u32,
    pub week_high: u32,
}

/// (start day, anchor concept, anchor event day, accuracy tier, conflict, cluster size)
pub type GaRow = (i64, i64, i64, u8, bool, usize);

fn tier(low: u32, high: u32) -> u8 {
    let width = high - low + 1;
    if width == 1 {
        1
    } else if width <= 5 {
        2
    } else if width <= 10 {
        3
    } else {
        4
    }
}

fn implied_start(c: &RawGa) -> i64 {
    let midpoint_days = (3.5 * f64::from(c.week_low + c.week_high)).ceil() as i64;
    c.event_day - midpoint_days
}

fn better_ga(a: &RawGa, b: &RawGa) -> bool {
    let (ta, tb) = (tier(a.week_low, a.week_high), tier(b.week_low, b.week_high));
    if ta != tb {
        return ta < tb;
    }
    if a.event_day != b.event_day {
        return a.event_day < b.event_day;
    }
    a.concept < b.concept
}

pub fn ga_reference(candidates: &[RawGa]) -> Vec<GaRow> {
    let mut remaining: Vec<RawGa> = candidates.to_vec();
    let mut out = Vec::new();
    while !remaining.is_empty() {
        let mut best = 0;
        for i in 1..remaining.len() {
            if better_ga(&remaining[i], &remaining[best]) {
                best = i;
            }
        }
        let anchor = remaining[best];
        let anchor_start = implied_start(&anchor);
        let (taken, kept): (Vec<RawGa>, Vec<RawGa>) = remaining
            .into_iter()
            .partition(|c| (implied_start(c) - anchor_start).abs() <= WINDOW);
        let conflict = taken.iter().any(|c| {
            tier(c.week_low, c.week_high) == 1 && (implied_start(c) - anchor_start).abs() > CONFLICT_DAYS
        });
        out.push((
            anchor_start,
            anchor.concept,
            anchor.event_day,
            tier(anchor.week_low, anchor.week_high),
            conflict,
            taken.len(),
        ));
        remaining = kept;
    }
    out.sort_by_key(|r| r.0);
    out
}

#[derive(Debug, Clone, Copy)]
pub struct RawDod {
    pub concept: i64,
    pub day: i64,
    pub domain: &'static str,
}

/// (dod day, anchor concept, rank, cluster size)
pub type DodRow = (i64, i64, u8, usize);

fn rank(domain: &str) -> u8 {
    match domain {
        "Procedure" => 1,
        "Condition" => 2,
        _ => 3,
    }
}

fn better_dod(a: &RawDod, b: &RawDod) -> bool {
    if rank(a.domain) != rank(b.domain) {
        return rank(a.domain) < rank(b.domain);
    }
    if a.day != b.day {
        return a.day > b.day;
    }
    a.concept < b.concept
}

pub fn dod_reference(events: &[RawDod]) -> Vec<DodRow> {
    let mut remaining: Vec<RawDod> = events.to_vec();
    let mut out = Vec::new();
    while !remaining.is_empty() {
        let mut best = 0;
        for i in 1..remaining.len() {
            if better_dod(&remaining[i], &remaining[best]) {
                best = i;
            }
        }
        let anchor = remaining[best];
        let before = remaining.len();
        remaining.retain(|e| (e.day - anchor.day).abs() > WINDOW);
        out.push((anchor.day, anchor.concept, rank(anchor.domain), before - remaining.len()));
    }
    out.sort_by(|a, b| b.0.cmp(&a.0));
    out
}

pub fn ga_rows(starts: &[GestationStart]) -> Vec<GaRow> {
    starts
        .iter()
        .map(|s| {
            (
                day(s.start_date),
                s.anchor.event.concept_id.0,
                day(s.anchor.event.event_date),
                s.accuracy as u8,
                s.conflict_flag,
                s.cluster_size,
            )
        })
        .collect()
}

pub fn dod_rows(records: &[DeliveryRecord]) -> Vec<DodRow> {
    records
        .iter()
        .map(|r| (day(r.dod), r.anchor_concept_id.0, r.domain_rank, r.cluster_size))
        .collect()
}

/// One random person: GA events from the shipped GA set and delivery events
/// from the shipped delivery set, dated around a few shared centres so that
/// windows overlap, tie and sit on the 270-day boundary.
pub struct Instance {
    pub ga_events: Vec<ClinicalEvent>,
    pub dod_events: Vec<ClinicalEvent>,
}

pub fn random_instance(rng: &mut ChaCha8Rng, registries: &Registries) -> Instance {
    let ga_specs: Vec<&GaConceptSpec> = registries.ga.iter().collect();
    let dod_specs: Vec<_> = registries.dod.iter().collect();
    let person_id = PersonId(1);
    let centres: Vec<i64> = (0..rng.random_range(1..=3)).map(|_| rng.random_range(6000..7200)).collect();
    let offset = |rng: &mut ChaCha8Rng| -> i64 {
        let centre = *centres.choose(rng).unwrap();
        match rng.random_range(0..6) {
            0 => centre,
            1 => centre + [-271, -270, 270, 271].choose(rng).unwrap(),
            2 => centre + rng.random_range(-20..=20),
            _ => centre + rng.random_range(-400..=400),
        }
    };

    let ga_events = (0..rng.random_range(0..=10))
        .map(|_| {
            let spec = ga_specs.choose(rng).unwrap();
            ClinicalEvent {
                person_id,
                concept_id: spec.concept_id,
                domain: spec.domain,
                event_date: date(offset(rng)),
            }
        })
        .collect();
    let dod_events = (0..rng.random_range(0..=10))
        .map(|_| {
            let spec = dod_specs.choose(rng).unwrap();
            let domain = if rng.random_bool(0.1) {
                *[Domain::Measurement, Domain::Drug].choose(rng).unwrap()
            } else {
                spec.domain
            };
            ClinicalEvent {
                person_id,
                concept_id: spec.concept_id,
                domain,
                event_date: date(offset(rng)),
            }
        })
        .collect();
    Instance { ga_events, dod_events }
}

/// Compares both engines with the reference on one instance.
pub fn check_instance(inst: &Instance, registries: &Registries) -> Result<(), String> {
    let config = EngineConfig::default();
    let raw_ga: Vec<RawGa> = inst
        .ga_events
        .iter()
        .map(|e| {
            let spec = registries.ga.get(e.concept_id).expect("GA concept");
            RawGa {
                concept: e.concept_id.0,
                event_day: day(e.event_date),
                week_low: spec.week_low,
                week_high: spec.week_high,
            }
        })
        .collect();
    let got = ga_rows(&infer_gestation_starts(&candidates_for(&inst.ga_events, &registries.ga), &config));
    let want = ga_reference(&raw_ga);
    if got != want {
        return Err(format!("GA mismatch\n  engine:    {got:?}\n  reference: {want:?}"));
    }

    let raw_dod: Vec<RawDod> = inst
        .dod_events
        .iter()
        .map(|e| RawDod {
            concept: e.concept_id.0,
            day: day(e.event_date),
            domain: e.domain.as_str(),
        })
        .collect();
    let got = dod_rows(&infer_delivery_dates(&inst.dod_events, &config));
    let want = dod_reference(&raw_dod);
    if got != want {
        return Err(format!("DOD mismatch\n  engine:    {got:?}\n  reference: {want:?}"));
    }
    Ok(())
}

/// Runs `n` random instances from `seed`; returns the number of mismatches
/// and the first failure.
pub fn run_instances(seed: u64, n: usize, registries: &Registries) -> (usize, Option<String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0;
    let mut first = None;
    for i in 0..n {
        let inst = random_instance(&mut rng, registries);
        if let Err(e) = check_instance(&inst, registries) {
            mismatches += 1;
            first.get_or_insert_with(|| format!("instance {i}: {e}"));
        }
    }
    (mismatches, first)
}

/// Persons holding two dates closer than the window. Dates are grouped per
/// person; the same person may appear in any order.
pub fn separation_violations(dates: impl IntoIterator<Item = (PersonId, NaiveDate)>) -> Vec<(PersonId, NaiveDate, NaiveDate)> {
    let mut by_person: BTreeMap<PersonId, Vec<NaiveDate>> = BTreeMap::new();
    for (p, d) in dates {
        by_person.entry(p).or_default().push(d);
    }
    let mut bad = Vec::new();
    for (p, mut ds) in by_person {
        ds.sort_unstable();
        for w in ds.windows(2) {
            if (w[1] - w[0]).num_days() <= WINDOW {
                bad.push((p, w[0], w[1]));
            }
        }
    }
    bad
}

pub fn concept(id: i64) -> ConceptId {
    ConceptId(id)
}
