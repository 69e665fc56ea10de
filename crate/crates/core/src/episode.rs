//! Consolidation of gestation starts and delivery records into pregnancy
//! episodes, cohort filters, and gestational timing of arbitrary dates.

use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::Serialize;

use crate::concepts::{AccuracyLevel, ConceptId};
use crate::config::{CohortFilter, EngineConfig};
use crate::dod::DeliveryRecord;
use crate::ga::GestationStart;
use crate::ingest::{PersonId, PersonTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum ExtremeFlag {
    None,
    Short,
    Long,
}

impl ExtremeFlag {
    pub fn classify(gestation_days: i64, config: &EngineConfig) -> Self {
        if gestation_days < config.extreme_short_days {
            ExtremeFlag::Short
        } else if gestation_days > config.extreme_long_days {
            ExtremeFlag::Long
        } else {
            ExtremeFlag::None
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ExtremeFlag::None => "none",
            ExtremeFlag::Short => "short",
            ExtremeFlag::Long => "long",
        }
    }
}

impl FromStr for ExtremeFlag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(ExtremeFlag::None),
            "short" => Ok(ExtremeFlag::Short),
            "long" => Ok(ExtremeFlag::Long),
            other => Err(format!("unknown extreme flag `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PregnancyEpisode {
    pub person_id: PersonId,
    pub episode_index: u32,
    pub start_date: NaiveDate,
    pub dod: NaiveDate,
    pub gestation_days: i64,
    pub ga_accuracy: AccuracyLevel,
    pub dod_domain_rank: u8,
    pub extreme_flag: ExtremeFlag,
    pub conflict_flag: bool,
    /// Not part of episodes.csv; kept for provenance in memory.
    pub ga_anchor_concept_id: Option<ConceptId>,
    pub dod_anchor_concept_id: Option<ConceptId>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MatchOutcome {
    /// Sorted by start date, indexed from 1.
    pub episodes: Vec<PregnancyEpisode>,
    pub unmatched_starts: Vec<GestationStart>,
    pub unmatched_dods: Vec<DeliveryRecord>,
}

/// Pairs one person's delivery records with gestation starts. Deliveries are
/// taken latest first; each takes the unused start whose gestation length
/// falls inside the match bounds and lies closest to the target length.
pub fn match_episodes(
    starts: &[GestationStart],
    dods: &[DeliveryRecord],
    config: &EngineConfig,
) -> MatchOutcome {
    let mut used = vec![false; starts.len()];
    let mut by_latest: Vec<&DeliveryRecord> = dods.iter().collect();
    by_latest.sort_by(|a, b| b.dod.cmp(&a.dod));

    let mut episodes = Vec::new();
    let mut unmatched_dods = Vec::new();
    for dod in by_latest {
        let best = starts
            .iter()
            .enumerate()
            .filter(|(i, _)| !used[*i])
            .filter_map(|(i, s)| {
                let days = (dod.dod - s.start_date).num_days();
                (config.match_min_days..=config.match_max_days)
                    .contains(&days)
                    .then_some((i, days))
            })
            .min_by_key(|&(i, days)| ((days - config.match_target_days).abs(), starts[i].start_date));
        match best {
            Some((i, gestation_days)) => {
                used[i] = true;
                let start = &starts[i];
                episodes.push(PregnancyEpisode {
                    person_id: dod.person_id,
                    episode_index: 0,
                    start_date: start.start_date,
                    dod: dod.dod,
                    gestation_days,
                    ga_accuracy: start.accuracy,
                    dod_domain_rank: dod.domain_rank,
                    extreme_flag: ExtremeFlag::classify(gestation_days, config),
                    conflict_flag: start.conflict_flag,
                    ga_anchor_concept_id: Some(start.anchor.concept_id()),
                    dod_anchor_concept_id: Some(dod.anchor_concept_id),
                });
            }
            None => unmatched_dods.push(*dod),
        }
    }
    unmatched_dods.sort_by_key(|d| d.dod);
    reindex(&mut episodes);
    let unmatched_starts = starts
        .iter()
        .zip(&used)
        .filter(|(_, &u)| !u)
        .map(|(s, _)| *s)
        .collect();
    MatchOutcome {
        episodes,
        unmatched_starts,
        unmatched_dods,
    }
}

/// Sorts one person's episodes by start date and numbers them from 1.
pub fn reindex(episodes: &mut [PregnancyEpisode]) {
    episodes.sort_by_key(|e| e.start_date);
    for (i, e) in episodes.iter_mut().enumerate() {
        e.episode_index = i as u32 + 1;
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CohortExclusion {
    MissingPerson,
    OutsideWindow,
    AgeOutOfRange(u32),
}

impl fmt::Display for CohortExclusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CohortExclusion::MissingPerson => f.write_str("person missing from persons table"),
            CohortExclusion::OutsideWindow => f.write_str("delivery outside study window"),
            CohortExclusion::AgeOutOfRange(age) => write!(f, "age {age} at delivery outside range"),
        }
    }
}

/// Whole years between birth and the given date.
pub fn age_at(birth_date: NaiveDate, on: NaiveDate) -> Option<u32> {
    on.years_since(birth_date)
}

pub fn cohort_exclusion(
    episode: &PregnancyEpisode,
    persons: &PersonTable,
    filter: &CohortFilter,
) -> Option<CohortExclusion> {
    let Some(person) = persons.get(episode.person_id) else {
        return Some(CohortExclusion::MissingPerson);
    };
    if episode.dod < filter.window_start || episode.dod > filter.window_end {
        return Some(CohortExclusion::OutsideWindow);
    }
    let age = age_at(person.birth_date, episode.dod).unwrap_or(0);
    if age < filter.min_age || age > filter.max_age {
        return Some(CohortExclusion::AgeOutOfRange(age));
    }
    None
}

/// Keeps episodes passing the cohort filter; returns the rest with reasons.
/// Surviving episodes are renumbered per person.
pub fn apply_cohort_filters(
    episodes: Vec<PregnancyEpisode>,
    persons: &PersonTable,
    filter: &CohortFilter,
) -> (Vec<PregnancyEpisode>, Vec<(PregnancyEpisode, CohortExclusion)>) {
    let mut kept = Vec::new();
    let mut excluded = Vec::new();
    for e in episodes {
        match cohort_exclusion(&e, persons, filter) {
            None => kept.push(e),
            Some(reason) => excluded.push((e, reason)),
        }
    }
    kept.sort_by_key(|e| (e.person_id, e.start_date));
    let mut i = 0;
    while i < kept.len() {
        let j = i + kept[i..].iter().take_while(|e| e.person_id == kept[i].person_id).count();
        reindex(&mut kept[i..j]);
        i = j;
    }
    (kept, excluded)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Trimester {
    Pre,
    First,
    Second,
    Third,
    PostDelivery,
}

impl Trimester {
    pub fn as_str(self) -> &'static str {
        match self {
            Trimester::Pre => "pre",
            Trimester::First => "first",
            Trimester::Second => "second",
            Trimester::Third => "third",
            Trimester::PostDelivery => "post_delivery",
        }
    }
}

/// Week 0 is pre-pregnancy; 1-13 first, 14-27 second, 28 on third.
pub fn trimester_of(week: u32) -> Trimester {
    match week {
        0 => Trimester::Pre,
        1..=13 => Trimester::First,
        14..=27 => Trimester::Second,
        _ => Trimester::Third,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GestationalTiming {
    pub week: u32,
    pub trimester: Trimester,
}

/// Day 0 of the pregnancy falls in week 1.
pub fn week_index(start_date: NaiveDate, date: NaiveDate) -> u32 {
    let days = (date - start_date).num_days();
    if days < 0 {
        0
    } else {
        (days / 7) as u32 + 1
    }
}

pub fn gestational_week_of(event_date: NaiveDate, episode: &PregnancyEpisode) -> GestationalTiming {
    if event_date < episode.start_date {
        return GestationalTiming {
            week: 0,
            trimester: Trimester::Pre,
        };
    }
    let week = week_index(episode.start_date, event_date);
    let trimester = if event_date > episode.dod {
        Trimester::PostDelivery
    } else {
        trimester_of(week)
    };
    GestationalTiming { week, trimester }
}
