//! Delivery-date engine: best domain rank first, latest date within a rank,
//! then the lowest concept id. Each pick absorbs every remaining event dated
//! within the window.

use chrono::NaiveDate;
use serde::Serialize;

use crate::concepts::{ConceptId, Domain, DodRegistry};
use crate::config::EngineConfig;
use crate::ingest::{ClinicalEvent, PersonId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DeliveryRecord {
    pub person_id: PersonId,
    pub dod: NaiveDate,
    pub anchor_concept_id: ConceptId,
    pub domain_rank: u8,
    pub cluster_size: usize,
}

/// Rank of an event's domain. Domains outside procedure/condition/observation
/// rank last; callers report them.
pub fn delivery_rank(domain: Domain) -> u8 {
    domain.dod_rank().unwrap_or(3)
}

pub fn delivery_events<'a>(
    events: &'a [ClinicalEvent],
    registry: &'a DodRegistry,
) -> impl Iterator<Item = &'a ClinicalEvent> + 'a {
    events.iter().filter(|e| registry.contains(e.concept_id))
}

/// One person's delivery records, latest first.
pub fn infer_delivery_dates(events: &[ClinicalEvent], config: &EngineConfig) -> Vec<DeliveryRecord> {
    let mut order: Vec<usize> = (0..events.len()).collect();
    order.sort_by_key(|&i| {
        let e = &events[i];
        (
            delivery_rank(e.domain),
            std::cmp::Reverse(e.event_date),
            e.concept_id,
        )
    });

    let mut absorbed = vec![false; events.len()];
    let mut records = Vec::new();
    for &anchor_idx in &order {
        if absorbed[anchor_idx] {
            continue;
        }
        let anchor = events[anchor_idx];
        let mut cluster_size = 0;
        for (i, e) in events.iter().enumerate() {
            if !absorbed[i] && (e.event_date - anchor.event_date).num_days().abs() <= config.window_days {
                absorbed[i] = true;
                cluster_size += 1;
            }
        }
        records.push(DeliveryRecord {
            person_id: anchor.person_id,
            dod: anchor.event_date,
            anchor_concept_id: anchor.concept_id,
            domain_rank: delivery_rank(anchor.domain),
            cluster_size,
        });
    }
    records.sort_by(|a, b| b.dod.cmp(&a.dod));
    records
}
