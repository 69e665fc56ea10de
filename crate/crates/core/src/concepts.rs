//! Concept sets for gestational age (GA) and date of delivery (DOD), plus
//! keyword phenotyping over a local vocabulary table.
//!
//! The GA set maps each concept to a curated gestational-week range. The
//! accuracy level is never trusted from the file: it is re-derived from the
//! range width and a mismatch fails the load.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tabular;

/// Shipped GA concept set.
pub const SHIPPED_GA_CONCEPTS: &str = include_str!("../data/ga_concepts.csv");
/// Shipped DOD concept set.
pub const SHIPPED_DOD_CONCEPTS: &str = include_str!("../data/dod_concepts.csv");

pub const GA_HEADER: [&str; 7] = [
    "concept_id",
    "name",
    "accuracy_level",
    "week_low",
    "week_high",
    "domain",
    "vocabulary",
];
pub const DOD_HEADER: [&str; 4] = ["concept_id", "name", "domain", "vocabulary"];
pub const VOCABULARY_HEADER: [&str; 5] = ["concept_id", "name", "domain", "standard", "valid"];

/// Widest range a GA concept may imply: one trimester.
pub const MAX_RANGE_WEEKS: u32 = 13;
pub const MAX_WEEK: u32 = 45;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ConceptId(pub i64);

impl fmt::Display for ConceptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Domain {
    Condition,
    Procedure,
    Observation,
    Measurement,
    Drug,
}

impl Domain {
    pub const ALL: [Domain; 5] = [
        Domain::Condition,
        Domain::Procedure,
        Domain::Observation,
        Domain::Measurement,
        Domain::Drug,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Condition => "Condition",
            Domain::Procedure => "Procedure",
            Domain::Observation => "Observation",
            Domain::Measurement => "Measurement",
            Domain::Drug => "Drug",
        }
    }

    /// Delivery-date priority: procedure, then condition, then observation.
    /// Other domains have no rank.
    pub fn dod_rank(self) -> Option<u8> {
        match self {
            Domain::Procedure => Some(1),
            Domain::Condition => Some(2),
            Domain::Observation => Some(3),
            Domain::Measurement | Domain::Drug => None,
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Domain {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Domain::ALL
            .into_iter()
            .find(|d| d.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown domain `{s}`"))
    }
}

/// GA accuracy tier. Lower rank means a narrower implied week range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AccuracyLevel {
    High = 1,
    ModerateHigh = 2,
    ModerateLow = 3,
    Low = 4,
}

impl AccuracyLevel {
    pub const ALL: [AccuracyLevel; 4] = [
        AccuracyLevel::High,
        AccuracyLevel::ModerateHigh,
        AccuracyLevel::ModerateLow,
        AccuracyLevel::Low,
    ];

    pub fn rank(self) -> u8 {
        self as u8
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AccuracyLevel::High => "high",
            AccuracyLevel::ModerateHigh => "moderate_high",
            AccuracyLevel::ModerateLow => "moderate_low",
            AccuracyLevel::Low => "low",
        }
    }
}

impl fmt::Display for AccuracyLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AccuracyLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AccuracyLevel::ALL
            .into_iter()
            .find(|a| a.as_str() == s.trim())
            .ok_or_else(|| format!("unknown accuracy level `{s}`"))
    }
}

/// Maps an inclusive week range to its accuracy tier by width
/// (1 week, 2-5, 6-10, 11-13).
pub fn classify_accuracy(week_low: u32, week_high: u32) -> Result<AccuracyLevel> {
    if week_low < 1 || week_low > week_high || week_high > MAX_WEEK {
        return Err(Error::InvalidRange {
            low: week_low,
            high: week_high,
        });
    }
    let width = week_high - week_low + 1;
    Ok(match width {
        1 => AccuracyLevel::High,
        2..=5 => AccuracyLevel::ModerateHigh,
        6..=10 => AccuracyLevel::ModerateLow,
        11..=MAX_RANGE_WEEKS => AccuracyLevel::Low,
        _ => {
            return Err(Error::RangeTooBroad {
                low: week_low,
                high: week_high,
            })
        }
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GaConceptSpec {
    pub concept_id: ConceptId,
    pub name: String,
    pub week_low: u32,
    pub week_high: u32,
    pub accuracy: AccuracyLevel,
    pub domain: Domain,
    pub vocabulary: String,
}

impl GaConceptSpec {
    pub fn width_weeks(&self) -> u32 {
        self.week_high - self.week_low + 1
    }

    pub fn contains_week(&self, week: u32) -> bool {
        (self.week_low..=self.week_high).contains(&week)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DodConceptSpec {
    pub concept_id: ConceptId,
    pub name: String,
    pub domain: Domain,
    pub domain_rank: u8,
    pub vocabulary: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabularyEntry {
    pub concept_id: ConceptId,
    pub name: String,
    pub domain: Domain,
    pub standard: bool,
    pub valid: bool,
}

/// Per-accuracy concept counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccuracyCounts {
    pub total: usize,
    pub high: usize,
    pub moderate_high: usize,
    pub moderate_low: usize,
    pub low: usize,
}

impl AccuracyCounts {
    fn add(&mut self, level: AccuracyLevel) {
        self.total += 1;
        match level {
            AccuracyLevel::High => self.high += 1,
            AccuracyLevel::ModerateHigh => self.moderate_high += 1,
            AccuracyLevel::ModerateLow => self.moderate_low += 1,
            AccuracyLevel::Low => self.low += 1,
        }
    }

    fn manifest_line(&self) -> String {
        format!(
            "#manifest total={} high={} mh={} ml={} low={}",
            self.total, self.high, self.moderate_high, self.moderate_low, self.low
        )
    }
}

/// Immutable GA concept registry keyed by concept id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GaRegistry {
    concepts: BTreeMap<ConceptId, GaConceptSpec>,
}

impl GaRegistry {
    pub fn from_specs(specs: impl IntoIterator<Item = GaConceptSpec>) -> Result<Self> {
        let mut concepts = BTreeMap::new();
        for spec in specs {
            let expected = classify_accuracy(spec.week_low, spec.week_high)?;
            if expected != spec.accuracy {
                return Err(Error::Config(format!(
                    "concept {} declares {} but its range implies {}",
                    spec.concept_id, spec.accuracy, expected
                )));
            }
            concepts.insert(spec.concept_id, spec);
        }
        Ok(GaRegistry { concepts })
    }

    pub fn shipped() -> Self {
        parse_ga_concepts(SHIPPED_GA_CONCEPTS, Path::new("<shipped ga_concepts.csv>"))
            .expect("shipped GA concept file is valid")
    }

    pub fn get(&self, id: ConceptId) -> Option<&GaConceptSpec> {
        self.concepts.get(&id)
    }

    pub fn contains(&self, id: ConceptId) -> bool {
        self.concepts.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &GaConceptSpec> {
        self.concepts.values()
    }

    pub fn counts(&self) -> AccuracyCounts {
        let mut counts = AccuracyCounts::default();
        for spec in self.concepts.values() {
            counts.add(spec.accuracy);
        }
        counts
    }
}

/// Immutable DOD concept registry keyed by concept id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DodRegistry {
    concepts: BTreeMap<ConceptId, DodConceptSpec>,
}

impl DodRegistry {
    pub fn from_specs(specs: impl IntoIterator<Item = DodConceptSpec>) -> Self {
        DodRegistry {
            concepts: specs.into_iter().map(|s| (s.concept_id, s)).collect(),
        }
    }

    pub fn shipped() -> Self {
        parse_dod_concepts(SHIPPED_DOD_CONCEPTS, Path::new("<shipped dod_concepts.csv>"))
            .expect("shipped DOD concept file is valid")
    }

    pub fn get(&self, id: ConceptId) -> Option<&DodConceptSpec> {
        self.concepts.get(&id)
    }

    pub fn contains(&self, id: ConceptId) -> bool {
        self.concepts.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &DodConceptSpec> {
        self.concepts.values()
    }
}

/// Both registries, as consumed by ingestion and the engines.
#[derive(Debug, Clone, Default)]
pub struct Registries {
    pub ga: GaRegistry,
    pub dod: DodRegistry,
}

impl Registries {
    pub fn shipped() -> Self {
        Registries {
            ga: GaRegistry::shipped(),
            dod: DodRegistry::shipped(),
        }
    }

    /// Domain the registries record for a concept, GA set first.
    pub fn domain_of(&self, id: ConceptId) -> Option<Domain> {
        self.ga
            .get(id)
            .map(|c| c.domain)
            .or_else(|| self.dod.get(id).map(|c| c.domain))
    }
}

fn parse_manifest(content: &str, path: &Path) -> Result<Option<BTreeMap<String, usize>>> {
    let Some(line) = tabular::comment_lines(content).find_map(|l| l.strip_prefix("manifest")) else {
        return Ok(None);
    };
    let mut fields = BTreeMap::new();
    for token in line.split_whitespace() {
        let (key, value) = token.split_once('=').ok_or_else(|| Error::Manifest {
            path: path.to_path_buf(),
            message: format!("malformed token `{token}`"),
        })?;
        let value = value.parse().map_err(|_| Error::Manifest {
            path: path.to_path_buf(),
            message: format!("non-numeric value in `{token}`"),
        })?;
        fields.insert(key.to_string(), value);
    }
    Ok(Some(fields))
}

fn check_manifest(
    path: &Path,
    manifest: &BTreeMap<String, usize>,
    actual: &[(&str, usize)],
) -> Result<()> {
    for key in manifest.keys() {
        if !actual.iter().any(|(k, _)| k == key) {
            return Err(Error::Manifest {
                path: path.to_path_buf(),
                message: format!("unknown key `{key}`"),
            });
        }
    }
    for (key, found) in actual {
        if let Some(&declared) = manifest.get(*key) {
            if declared != *found {
                return Err(Error::Manifest {
                    path: path.to_path_buf(),
                    message: format!("{key}: manifest declares {declared}, file holds {found}"),
                });
            }
        }
    }
    Ok(())
}

fn parse_id(record: &csv::ByteRecord, idx: usize, path: &Path) -> Result<ConceptId> {
    let line = tabular::line_of(record);
    tabular::field(record, idx)
        .and_then(|s| s.parse().ok())
        .map(ConceptId)
        .ok_or_else(|| Error::row(path, line, "invalid concept_id"))
}

fn parse_week(record: &csv::ByteRecord, idx: usize, path: &Path, column: &str) -> Result<u32> {
    tabular::field(record, idx)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::row(path, tabular::line_of(record), format!("invalid {column}")))
}

fn text(record: &csv::ByteRecord, idx: usize, path: &Path) -> Result<String> {
    tabular::field(record, idx)
        .map(str::to_string)
        .ok_or_else(|| Error::row(path, tabular::line_of(record), "missing or non-UTF-8 field"))
}

/// Parses GA concept CSV content. `path` names the origin in diagnostics.
pub fn parse_ga_concepts(content: &str, path: &Path) -> Result<GaRegistry> {
    let manifest = parse_manifest(content, path)?;
    let mut reader = tabular::reader(content);
    tabular::check_header(path, &mut reader, &GA_HEADER)?;

    let mut concepts: BTreeMap<ConceptId, GaConceptSpec> = BTreeMap::new();
    for record in reader.byte_records() {
        let record = record.map_err(|e| Error::Schema {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let line = tabular::line_of(&record);
        let concept_id = parse_id(&record, 0, path)?;
        let declared: AccuracyLevel = text(&record, 2, path)?
            .parse()
            .map_err(|e: String| Error::row(path, line, e))?;
        let week_low = parse_week(&record, 3, path, "week_low")?;
        let week_high = parse_week(&record, 4, path, "week_high")?;
        let accuracy = classify_accuracy(week_low, week_high)
            .map_err(|e| Error::row(path, line, format!("concept {concept_id}: {e}")))?;
        if accuracy != declared {
            return Err(Error::row(
                path,
                line,
                format!("concept {concept_id}: declared {declared}, range {week_low}-{week_high} implies {accuracy}"),
            ));
        }
        let spec = GaConceptSpec {
            concept_id,
            name: text(&record, 1, path)?,
            week_low,
            week_high,
            accuracy,
            domain: text(&record, 5, path)?
                .parse()
                .map_err(|e: String| Error::row(path, line, e))?,
            vocabulary: text(&record, 6, path)?,
        };
        if let Some(existing) = concepts.get(&concept_id) {
            if *existing != spec {
                return Err(Error::row(
                    path,
                    line,
                    format!("concept {concept_id} repeated with conflicting fields"),
                ));
            }
            continue;
        }
        concepts.insert(concept_id, spec);
    }

    let registry = GaRegistry { concepts };
    if let Some(manifest) = manifest {
        let c = registry.counts();
        check_manifest(
            path,
            &manifest,
            &[
                ("total", c.total),
                ("high", c.high),
                ("mh", c.moderate_high),
                ("ml", c.moderate_low),
                ("low", c.low),
            ],
        )?;
    }
    Ok(registry)
}

pub fn load_ga_concepts(path: &Path) -> Result<GaRegistry> {
    parse_ga_concepts(&tabular::read_to_string(path)?, path)
}

pub fn parse_dod_concepts(content: &str, path: &Path) -> Result<DodRegistry> {
    let manifest = parse_manifest(content, path)?;
    let mut reader = tabular::reader(content);
    tabular::check_header(path, &mut reader, &DOD_HEADER)?;

    let mut concepts: BTreeMap<ConceptId, DodConceptSpec> = BTreeMap::new();
    for record in reader.byte_records() {
        let record = record.map_err(|e| Error::Schema {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let line = tabular::line_of(&record);
        let concept_id = parse_id(&record, 0, path)?;
        let domain_text = text(&record, 2, path)?;
        let domain: Domain = domain_text
            .parse()
            .map_err(|e: String| Error::row(path, line, e))?;
        let domain_rank = domain.dod_rank().ok_or_else(|| {
            Error::row(
                path,
                line,
                format!("concept {concept_id}: domain {domain} has no delivery rank"),
            )
        })?;
        let spec = DodConceptSpec {
            concept_id,
            name: text(&record, 1, path)?,
            domain,
            domain_rank,
            vocabulary: text(&record, 3, path)?,
        };
        if let Some(existing) = concepts.get(&concept_id) {
            if *existing != spec {
                return Err(Error::row(
                    path,
                    line,
                    format!("concept {concept_id} repeated with conflicting fields"),
                ));
            }
            continue;
        }
        concepts.insert(concept_id, spec);
    }

    if let Some(manifest) = manifest {
        check_manifest(path, &manifest, &[("total", concepts.len())])?;
    }
    Ok(DodRegistry { concepts })
}

pub fn load_dod_concepts(path: &Path) -> Result<DodRegistry> {
    parse_dod_concepts(&tabular::read_to_string(path)?, path)
}

/// Writes the canonical form: manifest, header, rows ordered by concept id.
pub fn write_ga_concepts<W: Write>(registry: &GaRegistry, mut out: W) -> std::io::Result<()> {
    writeln!(out, "{}", registry.counts().manifest_line())?;
    let mut w = tabular::csv_writer(out);
    w.write_record(GA_HEADER)?;
    for c in registry.iter() {
        w.write_record([
            c.concept_id.to_string().as_str(),
            &c.name,
            c.accuracy.as_str(),
            &c.week_low.to_string(),
            &c.week_high.to_string(),
            c.domain.as_str(),
            &c.vocabulary,
        ])?;
    }
    w.flush()
}

pub fn write_dod_concepts<W: Write>(registry: &DodRegistry, mut out: W) -> std::io::Result<()> {
    writeln!(out, "#manifest total={}", registry.len())?;
    let mut w = tabular::csv_writer(out);
    w.write_record(DOD_HEADER)?;
    for c in registry.iter() {
        w.write_record([
            c.concept_id.to_string().as_str(),
            &c.name,
            c.domain.as_str(),
            &c.vocabulary,
        ])?;
    }
    w.flush()
}

pub fn parse_vocabulary(content: &str, path: &Path) -> Result<Vec<VocabularyEntry>> {
    let mut reader = tabular::reader(content);
    tabular::check_header(path, &mut reader, &VOCABULARY_HEADER)?;
    let mut seen = BTreeSet::new();
    let mut entries = Vec::new();
    for record in reader.byte_records() {
        let record = record.map_err(|e| Error::Schema {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let line = tabular::line_of(&record);
        let concept_id = parse_id(&record, 0, path)?;
        if !seen.insert(concept_id) {
            return Err(Error::row(path, line, format!("duplicate concept_id {concept_id}")));
        }
        let flag = |idx: usize, column: &str| {
            tabular::field(&record, idx)
                .and_then(tabular::parse_bool)
                .ok_or_else(|| Error::row(path, line, format!("{column} must be true or false")))
        };
        entries.push(VocabularyEntry {
            concept_id,
            name: text(&record, 1, path)?,
            domain: text(&record, 2, path)?
                .parse()
                .map_err(|e: String| Error::row(path, line, e))?,
            standard: flag(3, "standard")?,
            valid: flag(4, "valid")?,
        });
    }
    Ok(entries)
}

pub fn load_vocabulary(path: &Path) -> Result<Vec<VocabularyEntry>> {
    parse_vocabulary(&tabular::read_to_string(path)?, path)
}

/// Default keyword stems for GA phenotyping.
pub const DEFAULT_KEYWORDS: [&str; 3] = ["trimester", "gestation", "pregnan"];
/// Default domain filter for GA phenotyping.
pub const DEFAULT_PHENOTYPE_DOMAINS: [Domain; 4] = [
    Domain::Condition,
    Domain::Observation,
    Domain::Procedure,
    Domain::Measurement,
];

/// Case-insensitive substring search over concept names, filtered by domain
/// and by the standard/valid flags. Results are ordered by concept id.
pub fn phenotype_search<S: AsRef<str>>(
    vocabulary: &[VocabularyEntry],
    keywords: &[S],
    domains: &BTreeSet<Domain>,
    standard_only: bool,
    valid_only: bool,
) -> Result<Vec<VocabularyEntry>> {
    if keywords.is_empty() {
        return Err(Error::Config("phenotype search needs at least one keyword".into()));
    }
    let needles: Vec<String> = keywords.iter().map(|k| k.as_ref().to_lowercase()).collect();
    let mut hits: Vec<VocabularyEntry> = vocabulary
        .iter()
        .filter(|e| domains.contains(&e.domain))
        .filter(|e| !standard_only || e.standard)
        .filter(|e| !valid_only || e.valid)
        .filter(|e| {
            let name = e.name.to_lowercase();
            needles.iter().any(|k| name.contains(k.as_str()))
        })
        .cloned()
        .collect();
    hits.sort_by_key(|e| e.concept_id);
    Ok(hits)
}

pub fn write_vocabulary<W: Write>(entries: &[VocabularyEntry], out: W) -> std::io::Result<()> {
    let mut w = tabular::csv_writer(out);
    w.write_record(VOCABULARY_HEADER)?;
    for e in entries {
        w.write_record([
            e.concept_id.to_string().as_str(),
            &e.name,
            e.domain.as_str(),
            if e.standard { "true" } else { "false" },
            if e.valid { "true" } else { "false" },
        ])?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn origin() -> &'static Path {
        Path::new("test.csv")
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(classify_accuracy(40, 40).unwrap(), AccuracyLevel::High);
        assert_eq!(classify_accuracy(9, 13).unwrap(), AccuracyLevel::ModerateHigh);
        assert_eq!(classify_accuracy(28, 35).unwrap(), AccuracyLevel::ModerateLow);
        assert_eq!(classify_accuracy(1, 13).unwrap(), AccuracyLevel::Low);
        assert!(matches!(
            classify_accuracy(1, 20),
            Err(Error::RangeTooBroad { low: 1, high: 20 })
        ));
        assert!(matches!(classify_accuracy(0, 3), Err(Error::InvalidRange { .. })));
        assert!(matches!(classify_accuracy(5, 4), Err(Error::InvalidRange { .. })));
        assert!(matches!(classify_accuracy(40, 46), Err(Error::InvalidRange { .. })));
    }

    #[test]
    fn accuracy_rank_order() {
        let ranks: Vec<u8> = AccuracyLevel::ALL.iter().map(|a| a.rank()).collect();
        assert_eq!(ranks, vec![1, 2, 3, 4]);
        assert!(AccuracyLevel::High < AccuracyLevel::Low);
    }

    #[test]
    fn shipped_ga_partition() {
        let counts = GaRegistry::shipped().counts();
        assert_eq!(
            counts,
            AccuracyCounts {
                total: 138,
                high: 42,
                moderate_high: 9,
                moderate_low: 5,
                low: 82
            }
        );
    }

    #[test]
    fn shipped_ranges_within_one_trimester() {
        for c in GaRegistry::shipped().iter() {
            assert!(c.width_weeks() <= MAX_RANGE_WEEKS, "{}", c.concept_id);
        }
    }

    #[test]
    fn shipped_dod_count_and_ranks() {
        let dod = DodRegistry::shipped();
        assert_eq!(dod.len(), 105);
        for c in dod.iter() {
            assert_eq!(Some(c.domain_rank), c.domain.dod_rank());
        }
        assert_eq!(dod.get(ConceptId(2110316)).unwrap().domain_rank, 1);
    }

    #[test]
    fn empty_ga_file() {
        let reg = parse_ga_concepts(&GA_HEADER.join(","), origin()).unwrap();
        assert!(reg.is_empty());
        assert_eq!(reg.counts(), AccuracyCounts::default());
    }

    #[test]
    fn ga_identical_duplicate_collapses() {
        let row = "444098,\"Gestation period, 40 weeks\",high,40,40,Condition,SNOMED";
        let content = format!("{}\n{row}\n{row}\n", GA_HEADER.join(","));
        assert_eq!(parse_ga_concepts(&content, origin()).unwrap().len(), 1);
    }

    #[test]
    fn ga_conflicting_duplicate_fails() {
        let content = format!(
            "{}\n444098,a,high,40,40,Condition,SNOMED\n444098,b,high,40,40,Condition,SNOMED\n",
            GA_HEADER.join(",")
        );
        let err = parse_ga_concepts(&content, origin()).unwrap_err();
        assert!(matches!(err, Error::Row { line: 3, .. }), "{err}");
    }

    #[test]
    fn ga_accuracy_mismatch_names_row() {
        let content = format!(
            "{}\n4239938,First trimester pregnancy,high,1,13,Condition,SNOMED\n",
            GA_HEADER.join(",")
        );
        let err = parse_ga_concepts(&content, origin()).unwrap_err();
        assert!(matches!(err, Error::Row { line: 2, .. }));
        assert!(err.to_string().contains("4239938"));
    }

    #[test]
    fn ga_manifest_mismatch_fails() {
        let content = format!(
            "#manifest total=2 high=2 mh=0 ml=0 low=0\n{}\n444098,x,high,40,40,Condition,SNOMED\n",
            GA_HEADER.join(",")
        );
        assert!(matches!(
            parse_ga_concepts(&content, origin()),
            Err(Error::Manifest { .. })
        ));
    }

    #[test]
    fn ga_bad_header() {
        let content = "concept_id,name\n1,x\n";
        assert!(matches!(
            parse_ga_concepts(content, origin()),
            Err(Error::Schema { .. })
        ));
    }

    #[test]
    fn dod_duplicate_procedure() {
        let row = "2110316,Cesarean delivery only,Procedure,CPT4";
        let content = format!("{}\n{row}\n{row}\n", DOD_HEADER.join(","));
        let reg = parse_dod_concepts(&content, origin()).unwrap();
        assert_eq!(reg.len(), 1);
        assert_eq!(reg.get(ConceptId(2110316)).unwrap().domain_rank, 1);
    }

    #[test]
    fn dod_measurement_rejected() {
        let content = format!("{}\n1,Some lab,Measurement,LOINC\n", DOD_HEADER.join(","));
        assert!(matches!(
            parse_dod_concepts(&content, origin()),
            Err(Error::Row { line: 2, .. })
        ));
        let content = format!("{}\n1,Thing,Device,X\n", DOD_HEADER.join(","));
        assert!(parse_dod_concepts(&content, origin()).is_err());
    }

    #[test]
    fn canonical_form_is_fixed_point() {
        let reg = GaRegistry::shipped();
        let mut first = Vec::new();
        write_ga_concepts(&reg, &mut first).unwrap();
        let again = parse_ga_concepts(std::str::from_utf8(&first).unwrap(), origin()).unwrap();
        assert_eq!(again, reg);
        let mut second = Vec::new();
        write_ga_concepts(&again, &mut second).unwrap();
        assert_eq!(first, second);

        let dod = DodRegistry::shipped();
        let mut first = Vec::new();
        write_dod_concepts(&dod, &mut first).unwrap();
        let again = parse_dod_concepts(std::str::from_utf8(&first).unwrap(), origin()).unwrap();
        assert_eq!(again, dod);
    }

    fn entry(id: i64, name: &str, domain: Domain) -> VocabularyEntry {
        VocabularyEntry {
            concept_id: ConceptId(id),
            name: name.into(),
            domain,
            standard: true,
            valid: true,
        }
    }

    #[test]
    fn phenotype_examples() {
        let vocab = vec![
            entry(3, "Third trimester pregnancy", Domain::Condition),
            entry(2, "Hypertensive disorder", Domain::Condition),
            entry(1, "PREGNANCY test", Domain::Measurement),
        ];
        let domains: BTreeSet<Domain> = DEFAULT_PHENOTYPE_DOMAINS.into_iter().collect();
        let hits = phenotype_search(&vocab, &DEFAULT_KEYWORDS, &domains, true, true).unwrap();
        let ids: Vec<i64> = hits.iter().map(|e| e.concept_id.0).collect();
        assert_eq!(ids, vec![1, 3]);
        let only_pregnan = phenotype_search(&vocab, &["pregnan"], &domains, true, true).unwrap();
        assert_eq!(only_pregnan.len(), 2);
    }

    #[test]
    fn phenotype_filters() {
        let mut nonstandard = entry(1, "Pregnant", Domain::Condition);
        nonstandard.standard = false;
        let mut invalid = entry(2, "Pregnant", Domain::Condition);
        invalid.valid = false;
        let drug = entry(3, "Pregnancy vitamins", Domain::Drug);
        let vocab = vec![nonstandard, invalid, drug];
        let domains: BTreeSet<Domain> = DEFAULT_PHENOTYPE_DOMAINS.into_iter().collect();
        assert!(phenotype_search(&vocab, &DEFAULT_KEYWORDS, &domains, true, true)
            .unwrap()
            .is_empty());
        assert_eq!(
            phenotype_search(&vocab, &DEFAULT_KEYWORDS, &domains, false, false)
                .unwrap()
                .len(),
            2
        );
        let none: [&str; 0] = [];
        assert!(phenotype_search(&vocab, &none, &domains, true, true).is_err());
    }

    #[test]
    fn vocabulary_parse() {
        let content = "concept_id,name,domain,standard,valid\n1,\"Pregnancy, first\",condition,true,false\n";
        let v = parse_vocabulary(content, origin()).unwrap();
        assert_eq!(v[0].domain, Domain::Condition);
        assert!(v[0].standard && !v[0].valid);
        let dup = "concept_id,name,domain,standard,valid\n1,a,Condition,true,true\n1,b,Condition,true,true\n";
        assert!(parse_vocabulary(dup, origin()).is_err());
        let bad = "concept_id,name,domain,standard,valid\n1,a,Condition,yes,true\n";
        assert!(parse_vocabulary(bad, origin()).is_err());
    }
}
