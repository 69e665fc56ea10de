//! Gestational-age engine.
//!
//! Every GA-bearing event implies a pregnancy start date: the event date
//! minus the midpoint of the concept's week range. Candidates are then
//! consumed best-first (accuracy rank, earliest event date, lowest concept
//! id); each pick becomes a gestation start and absorbs every remaining
//! candidate whose implied start lies within the window of its own.

use chrono::{Duration, NaiveDate};
use serde::Serialize;

use crate::concepts::{AccuracyLevel, ConceptId, GaConceptSpec, GaRegistry};
use crate::config::EngineConfig;
use crate::ingest::{ClinicalEvent, PersonId};

/// Midpoint of the week range in days, halves rounded up.
pub fn ga_days(spec: &GaConceptSpec) -> i64 {
    ga_days_for_range(spec.week_low, spec.week_high)
}

pub fn ga_days_for_range(week_low: u32, week_high: u32) -> i64 {
    (7 * i64::from(week_low + week_high) + 1) / 2
}

pub fn start_date_from_event(event_date: NaiveDate, spec: &GaConceptSpec) -> NaiveDate {
    event_date - Duration::days(ga_days(spec))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GaCandidate {
    pub event: ClinicalEvent,
    pub week_low: u32,
    pub week_high: u32,
    pub accuracy: AccuracyLevel,
    pub start_date: NaiveDate,
}

impl GaCandidate {
    pub fn new(event: ClinicalEvent, spec: &GaConceptSpec) -> Self {
        GaCandidate {
            event,
            week_low: spec.week_low,
            week_high: spec.week_high,
            accuracy: spec.accuracy,
            start_date: start_date_from_event(event.event_date, spec),
        }
    }

    pub fn concept_id(&self) -> ConceptId {
        self.event.concept_id
    }

    fn priority(&self) -> (AccuracyLevel, NaiveDate, ConceptId) {
        (self.accuracy, self.event.event_date, self.event.concept_id)
    }
}

/// GA candidates for one person's events, in event order.
pub fn candidates_for(events: &[ClinicalEvent], registry: &GaRegistry) -> Vec<GaCandidate> {
    events
        .iter()
        .filter_map(|e| registry.get(e.concept_id).map(|spec| GaCandidate::new(*e, spec)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GestationStart {
    pub person_id: PersonId,
    pub start_date: NaiveDate,
    pub anchor: GaCandidate,
    pub accuracy: AccuracyLevel,
    pub conflict_flag: bool,
    pub cluster_size: usize,
}

/// One person's gestation starts, sorted by start date.
pub fn infer_gestation_starts(candidates: &[GaCandidate], config: &EngineConfig) -> Vec<GestationStart> {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by_key(|&i| candidates[i].priority());

    let mut absorbed = vec![false; candidates.len()];
    let mut starts = Vec::new();
    for &anchor_idx in &order {
        if absorbed[anchor_idx] {
            continue;
        }
        let anchor = candidates[anchor_idx];
        let mut cluster_size = 0;
        let mut conflict_flag = false;
        for (i, c) in candidates.iter().enumerate() {
            if absorbed[i] {
                continue;
            }
            let gap = (c.start_date - anchor.start_date).num_days().abs();
            if gap <= config.window_days {
                absorbed[i] = true;
                cluster_size += 1;
                if c.accuracy == AccuracyLevel::High && gap > config.conflict_threshold_days {
                    conflict_flag = true;
                }
            }
        }
        starts.push(GestationStart {
            person_id: anchor.event.person_id,
            start_date: anchor.start_date,
            anchor,
            accuracy: anchor.accuracy,
            conflict_flag,
            cluster_size,
        });
    }
    starts.sort_by_key(|s| s.start_date);
    starts
}
