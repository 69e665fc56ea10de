//! End-to-end inference: per-person GA and DOD engines, episode matching,
//! cohort filtering, invariant checks and the CSV writers for the results.

use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use rayon::prelude::*;

use crate::concepts::{AccuracyLevel, ConceptId, Registries};
use crate::config::{CohortFilter, EngineConfig};
use crate::dod::{self, DeliveryRecord};
use crate::episode::{self, CohortExclusion, ExtremeFlag, PregnancyEpisode};
use crate::error::{Error, Result};
use crate::ga::{self, GestationStart};
use crate::ingest::{EventTable, PersonEvents, PersonId, PersonTable};
use crate::tabular;

pub const EPISODES_HEADER: [&str; 9] = [
    "person_id",
    "episode_index",
    "start_date",
    "dod",
    "gestation_days",
    "ga_accuracy",
    "dod_domain_rank",
    "extreme_flag",
    "conflict_flag",
];
pub const GA_COHORT_HEADER: [&str; 7] = [
    "person_id",
    "start_date",
    "anchor_concept_id",
    "anchor_event_date",
    "accuracy",
    "cluster_size",
    "conflict_flag",
];
pub const DOD_COHORT_HEADER: [&str; 5] = ["person_id", "dod", "anchor_concept_id", "domain_rank", "cluster_size"];
pub const DIAGNOSTICS_HEADER: [&str; 5] = ["kind", "person_id", "date", "concept_id", "detail"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Diagnostic {
    /// Event for a person missing from the persons table.
    QuarantinedEvent { line: u64, person_id: PersonId, concept_id: ConceptId, date: NaiveDate },
    DomainMismatch { line: u64, concept_id: ConceptId, detail: String },
    /// Delivery event whose domain has no rank of its own.
    RankFallback { person_id: PersonId, concept_id: ConceptId, date: NaiveDate, domain: String },
    UnmatchedStart { person_id: PersonId, start: GestationStart },
    UnmatchedDelivery { person_id: PersonId, delivery: DeliveryRecord },
    CohortExcluded { person_id: PersonId, dod: NaiveDate, reason: CohortExclusion },
}

impl Diagnostic {
    pub fn kind(&self) -> &'static str {
        match self {
            Diagnostic::QuarantinedEvent { .. } => "quarantined_event",
            Diagnostic::DomainMismatch { .. } => "domain_mismatch",
            Diagnostic::RankFallback { .. } => "rank_fallback",
            Diagnostic::UnmatchedStart { .. } => "unmatched_start",
            Diagnostic::UnmatchedDelivery { .. } => "unmatched_dod",
            Diagnostic::CohortExcluded { .. } => "cohort_excluded",
        }
    }

    fn fields(&self) -> [String; 5] {
        let kind = self.kind().to_string();
        match self {
            Diagnostic::QuarantinedEvent { line, person_id, concept_id, date } => [
                kind,
                person_id.to_string(),
                date.to_string(),
                concept_id.to_string(),
                format!("line {line}: person not in persons table"),
            ],
            Diagnostic::DomainMismatch { line, concept_id, detail } => {
                [kind, String::new(), String::new(), concept_id.to_string(), format!("line {line}: {detail}")]
            }
            Diagnostic::RankFallback { person_id, concept_id, date, domain } => [
                kind,
                person_id.to_string(),
                date.to_string(),
                concept_id.to_string(),
                format!("{domain} delivery event ranked 3"),
            ],
            Diagnostic::UnmatchedStart { person_id, start } => [
                kind,
                person_id.to_string(),
                start.start_date.to_string(),
                start.anchor.concept_id().to_string(),
                format!("{} start without plausible delivery", start.accuracy),
            ],
            Diagnostic::UnmatchedDelivery { person_id, delivery } => [
                kind,
                person_id.to_string(),
                delivery.dod.to_string(),
                delivery.anchor_concept_id.to_string(),
                format!("rank {} delivery without plausible start", delivery.domain_rank),
            ],
            Diagnostic::CohortExcluded { person_id, dod, reason } => {
                [kind, person_id.to_string(), dod.to_string(), String::new(), reason.to_string()]
            }
        }
    }
}

/// Everything inferred for one person before cohort filtering.
#[derive(Debug, Clone, Default)]
pub struct PersonInference {
    pub starts: Vec<GestationStart>,
    pub deliveries: Vec<DeliveryRecord>,
    pub episodes: Vec<PregnancyEpisode>,
    pub diagnostics: Vec<Diagnostic>,
}

pub fn infer_person(group: &PersonEvents, registries: &Registries, config: &EngineConfig) -> PersonInference {
    let candidates = ga::candidates_for(&group.events, &registries.ga);
    let starts = ga::infer_gestation_starts(&candidates, config);

    let delivery_events: Vec<_> = dod::delivery_events(&group.events, &registries.dod).copied().collect();
    let mut diagnostics: Vec<Diagnostic> = delivery_events
        .iter()
        .filter(|e| e.domain.dod_rank().is_none())
        .map(|e| Diagnostic::RankFallback {
            person_id: e.person_id,
            concept_id: e.concept_id,
            date: e.event_date,
            domain: e.domain.to_string(),
        })
        .collect();
    let deliveries = dod::infer_delivery_dates(&delivery_events, config);

    let outcome = episode::match_episodes(&starts, &deliveries, config);
    diagnostics.extend(outcome.unmatched_starts.iter().map(|s| Diagnostic::UnmatchedStart {
        person_id: group.person_id,
        start: *s,
    }));
    diagnostics.extend(outcome.unmatched_dods.iter().map(|d| Diagnostic::UnmatchedDelivery {
        person_id: group.person_id,
        delivery: *d,
    }));
    PersonInference {
        starts,
        deliveries,
        episodes: outcome.episodes,
        diagnostics,
    }
}

#[derive(Debug, Clone, Default)]
pub struct InferenceOutput {
    /// Cohort-filtered, ordered by person then episode index.
    pub episodes: Vec<PregnancyEpisode>,
    pub ga_cohort: Vec<GestationStart>,
    pub dod_cohort: Vec<DeliveryRecord>,
    pub diagnostics: Vec<Diagnostic>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub engine: EngineConfig,
    pub cohort: CohortFilter,
    /// `None` or `Some(1)` runs on the calling thread.
    pub threads: Option<usize>,
}

/// Runs every person through the engines. Output order depends only on the
/// input, never on the thread count.
pub fn run_inference(
    events: &EventTable,
    persons: &PersonTable,
    registries: &Registries,
    options: &RunOptions,
) -> Result<InferenceOutput> {
    options.engine.validate()?;
    options.cohort.validate()?;

    let per_person: Vec<PersonInference> = match options.threads {
        None | Some(0) | Some(1) => events
            .groups
            .iter()
            .map(|g| infer_person(g, registries, &options.engine))
            .collect(),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("cannot start {n} worker threads: {e}")))?;
            pool.install(|| {
                events
                    .groups
                    .par_iter()
                    .map(|g| infer_person(g, registries, &options.engine))
                    .collect()
            })
        }
    };

    let mut out = InferenceOutput::default();
    out.diagnostics.extend(events.quarantined.iter().map(|q| Diagnostic::QuarantinedEvent {
        line: q.line,
        person_id: q.event.person_id,
        concept_id: q.event.concept_id,
        date: q.event.event_date,
    }));
    out.diagnostics.extend(events.domain_mismatches.iter().map(|m| Diagnostic::DomainMismatch {
        line: m.line,
        concept_id: m.concept_id,
        detail: format!("event domain {} but registry domain {}", m.event_domain, m.registry_domain),
    }));

    let mut matched = Vec::new();
    for p in per_person {
        check_person(&p, &options.engine)?;
        out.ga_cohort.extend(p.starts);
        out.dod_cohort.extend(p.deliveries);
        matched.extend(p.episodes);
        out.diagnostics.extend(p.diagnostics);
    }

    let (kept, excluded) = episode::apply_cohort_filters(matched, persons, &options.cohort);
    out.diagnostics.extend(excluded.into_iter().map(|(e, reason)| Diagnostic::CohortExcluded {
        person_id: e.person_id,
        dod: e.dod,
        reason,
    }));
    out.episodes = kept;
    Ok(out)
}

fn check_person(p: &PersonInference, config: &EngineConfig) -> Result<()> {
    for w in p.starts.windows(2) {
        if (w[1].start_date - w[0].start_date).num_days() <= config.window_days {
            return Err(Error::Invariant(format!(
                "person {}: starts {} and {} within {} days",
                w[0].person_id, w[0].start_date, w[1].start_date, config.window_days
            )));
        }
    }
    for w in p.deliveries.windows(2) {
        if (w[0].dod - w[1].dod).num_days() <= config.window_days {
            return Err(Error::Invariant(format!(
                "person {}: deliveries {} and {} within {} days",
                w[0].person_id, w[1].dod, w[0].dod, config.window_days
            )));
        }
    }
    for e in &p.episodes {
        let days = (e.dod - e.start_date).num_days();
        if days != e.gestation_days
            || !(config.match_min_days..=config.match_max_days).contains(&days)
            || e.extreme_flag != ExtremeFlag::classify(days, config)
        {
            return Err(Error::Invariant(format!(
                "person {} episode {}: inconsistent gestation of {} days",
                e.person_id, e.episode_index, e.gestation_days
            )));
        }
    }
    Ok(())
}

pub fn write_episodes<W: Write>(episodes: &[PregnancyEpisode], out: W) -> std::io::Result<()> {
    let mut w = tabular::csv_writer(out);
    w.write_record(EPISODES_HEADER)?;
    for e in episodes {
        w.write_record([
            e.person_id.to_string(),
            e.episode_index.to_string(),
            e.start_date.to_string(),
            e.dod.to_string(),
            e.gestation_days.to_string(),
            e.ga_accuracy.as_str().to_string(),
            e.dod_domain_rank.to_string(),
            e.extreme_flag.as_str().to_string(),
            e.conflict_flag.to_string(),
        ])?;
    }
    w.flush()
}

pub fn write_ga_cohort<W: Write>(starts: &[GestationStart], out: W) -> std::io::Result<()> {
    let mut w = tabular::csv_writer(out);
    w.write_record(GA_COHORT_HEADER)?;
    for s in starts {
        w.write_record([
            s.person_id.to_string(),
            s.start_date.to_string(),
            s.anchor.concept_id().to_string(),
            s.anchor.event.event_date.to_string(),
            s.accuracy.as_str().to_string(),
            s.cluster_size.to_string(),
            s.conflict_flag.to_string(),
        ])?;
    }
    w.flush()
}

pub fn write_dod_cohort<W: Write>(records: &[DeliveryRecord], out: W) -> std::io::Result<()> {
    let mut w = tabular::csv_writer(out);
    w.write_record(DOD_COHORT_HEADER)?;
    for d in records {
        w.write_record([
            d.person_id.to_string(),
            d.dod.to_string(),
            d.anchor_concept_id.to_string(),
            d.domain_rank.to_string(),
            d.cluster_size.to_string(),
        ])?;
    }
    w.flush()
}

pub fn write_diagnostics<W: Write>(diagnostics: &[Diagnostic], out: W) -> std::io::Result<()> {
    let mut w = tabular::csv_writer(out);
    w.write_record(DIAGNOSTICS_HEADER)?;
    for d in diagnostics {
        w.write_record(d.fields())?;
    }
    w.flush()
}

pub fn read_episodes(path: &Path) -> Result<Vec<PregnancyEpisode>> {
    let content = tabular::read_to_string(path)?;
    parse_episodes(&content, path)
}

pub fn parse_episodes(content: &str, path: &Path) -> Result<Vec<PregnancyEpisode>> {
    let mut rdr = tabular::reader(content);
    tabular::check_header(path, &mut rdr, &EPISODES_HEADER)?;
    let mut episodes = Vec::new();
    let mut record = csv::ByteRecord::new();
    while rdr.read_byte_record(&mut record).map_err(|e| Error::Schema {
        path: path.to_path_buf(),
        message: e.to_string(),
    })? {
        let line = tabular::line_of(&record);
        let bad = |column: &str| Error::row(path, line, format!("invalid {column}"));
        let get = |i: usize| tabular::field(&record, i).unwrap_or("");
        let start_date = tabular::parse_iso_date(get(2)).ok_or_else(|| bad("start_date"))?;
        let dod = tabular::parse_iso_date(get(3)).ok_or_else(|| bad("dod"))?;
        let gestation_days: i64 = get(4).parse().map_err(|_| bad("gestation_days"))?;
        if (dod - start_date).num_days() != gestation_days {
            return Err(Error::row(path, line, "gestation_days disagrees with start_date and dod"));
        }
        episodes.push(PregnancyEpisode {
            person_id: PersonId(get(0).parse().map_err(|_| bad("person_id"))?),
            episode_index: get(1).parse().map_err(|_| bad("episode_index"))?,
            start_date,
            dod,
            gestation_days,
            ga_accuracy: get(5).parse::<AccuracyLevel>().map_err(|_| bad("ga_accuracy"))?,
            dod_domain_rank: get(6).parse().map_err(|_| bad("dod_domain_rank"))?,
            extreme_flag: get(7).parse().map_err(|_| bad("extreme_flag"))?,
            conflict_flag: tabular::parse_bool(get(8)).ok_or_else(|| bad("conflict_flag"))?,
            ga_anchor_concept_id: None,
            dod_anchor_concept_id: None,
        });
    }
    Ok(episodes)
}
