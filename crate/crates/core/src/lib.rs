//! Rule-based inference of pregnancy episodes from dated clinical events.
//!
//! The pipeline reads person and event tables, derives gestation starts from
//! gestational-age concepts and delivery dates from delivery concepts, pairs
//! them into episodes and places index events on each episode's timeline.

pub mod analytics;
pub mod concepts;
pub mod config;
pub mod dod;
pub mod episode;
pub mod error;
pub mod eval;
pub mod ga;
pub mod ingest;
pub mod pipeline;
pub mod synth;
mod tabular;

pub use concepts::{AccuracyLevel, ConceptId, Domain, GaRegistry, DodRegistry, Registries};
pub use config::{CohortFilter, EngineConfig};
pub use episode::{PregnancyEpisode, Trimester};
pub use error::{Error, Result};
pub use ingest::{ClinicalEvent, PersonId};
pub use tabular::parse_iso_date;
