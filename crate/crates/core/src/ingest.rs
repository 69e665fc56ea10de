//! Person and clinical-event tables.
//!
//! Events are grouped by person and ordered by
//! `(event_date, concept_id, domain rank)`, which makes every "first" pick in
//! the engines deterministic.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::concepts::{ConceptId, Domain, Registries};
use crate::error::{Error, Result};
use crate::tabular;

pub const PERSONS_HEADER: [&str; 5] = ["person_id", "birth_date", "sex", "race", "ethnicity"];
pub const EVENTS_HEADER: [&str; 4] = ["person_id", "concept_id", "domain", "event_date"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PersonId(pub i64);

impl fmt::Display for PersonId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

pub fn earliest_valid_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(1900, 1, 1).unwrap()
}

pub fn latest_valid_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2100, 12, 31).unwrap()
}

fn in_valid_window(d: NaiveDate) -> bool {
    (earliest_valid_date()..=latest_valid_date()).contains(&d)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Person {
    pub person_id: PersonId,
    pub birth_date: NaiveDate,
    pub sex: String,
    pub race: String,
    pub ethnicity: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PersonTable {
    persons: BTreeMap<PersonId, Person>,
}

impl PersonTable {
    pub fn from_persons(persons: impl IntoIterator<Item = Person>) -> Self {
        PersonTable {
            persons: persons.into_iter().map(|p| (p.person_id, p)).collect(),
        }
    }

    pub fn get(&self, id: PersonId) -> Option<&Person> {
        self.persons.get(&id)
    }

    pub fn contains(&self, id: PersonId) -> bool {
        self.persons.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.persons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.persons.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Person> {
        self.persons.values()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClinicalEvent {
    pub person_id: PersonId,
    pub concept_id: ConceptId,
    pub domain: Domain,
    pub event_date: NaiveDate,
}

impl ClinicalEvent {
    /// Canonical within-table ordering key.
    pub fn sort_key(&self) -> (PersonId, NaiveDate, ConceptId, u8, Domain) {
        (
            self.person_id,
            self.event_date,
            self.concept_id,
            self.domain.dod_rank().unwrap_or(4),
            self.domain,
        )
    }
}

pub fn sort_events(events: &mut [ClinicalEvent]) {
    events.sort_unstable_by_key(ClinicalEvent::sort_key);
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PersonEvents {
    pub person_id: PersonId,
    pub events: Vec<ClinicalEvent>,
}

/// An event whose person is absent from the persons table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuarantinedEvent {
    pub line: u64,
    pub event: ClinicalEvent,
}

/// An event whose domain disagrees with the registry entry for its concept.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainMismatch {
    pub line: u64,
    pub concept_id: ConceptId,
    pub event_domain: Domain,
    pub registry_domain: Domain,
}

#[derive(Debug, Clone, Default)]
pub struct EventTable {
    /// Ordered by person id.
    pub groups: Vec<PersonEvents>,
    pub quarantined: Vec<QuarantinedEvent>,
    pub domain_mismatches: Vec<DomainMismatch>,
    pub row_count: usize,
}

impl EventTable {
    pub fn grouped_count(&self) -> usize {
        self.groups.iter().map(|g| g.events.len()).sum()
    }

    /// Groups already-validated events. Lines are 0 for in-memory input.
    pub fn from_events(
        events: Vec<ClinicalEvent>,
        persons: &PersonTable,
        registries: &Registries,
    ) -> Self {
        let row_count = events.len();
        let lined = events.into_iter().map(|e| (0, e)).collect();
        group(lined, row_count, persons, registries)
    }
}

fn group(
    lined: Vec<(u64, ClinicalEvent)>,
    row_count: usize,
    persons: &PersonTable,
    registries: &Registries,
) -> EventTable {
    let mut kept = Vec::with_capacity(lined.len());
    let mut quarantined = Vec::new();
    let mut domain_mismatches = Vec::new();
    for (line, event) in lined {
        if let Some(registry_domain) = registries.domain_of(event.concept_id) {
            if registry_domain != event.domain {
                domain_mismatches.push(DomainMismatch {
                    line,
                    concept_id: event.concept_id,
                    event_domain: event.domain,
                    registry_domain,
                });
            }
        }
        if persons.contains(event.person_id) {
            kept.push(event);
        } else {
            quarantined.push(QuarantinedEvent { line, event });
        }
    }
    sort_events(&mut kept);

    let mut groups: Vec<PersonEvents> = Vec::new();
    for event in kept {
        match groups.last_mut() {
            Some(g) if g.person_id == event.person_id => g.events.push(event),
            _ => groups.push(PersonEvents {
                person_id: event.person_id,
                events: vec![event],
            }),
        }
    }
    EventTable {
        groups,
        quarantined,
        domain_mismatches,
        row_count,
    }
}

fn parse_person_id(record: &csv::ByteRecord, path: &Path) -> Result<PersonId> {
    tabular::field(record, 0)
        .and_then(|s| s.parse().ok())
        .map(PersonId)
        .ok_or_else(|| Error::row(path, tabular::line_of(record), "invalid person_id"))
}

fn parse_date_field(record: &csv::ByteRecord, idx: usize, path: &Path, column: &str) -> Result<NaiveDate> {
    let line = tabular::line_of(record);
    let raw = tabular::field(record, idx).unwrap_or("");
    let date = tabular::parse_iso_date(raw)
        .ok_or_else(|| Error::row(path, line, format!("invalid {column} `{raw}`")))?;
    if !in_valid_window(date) {
        return Err(Error::row(
            path,
            line,
            format!("{column} {date} outside 1900-01-01..2100-12-31"),
        ));
    }
    Ok(date)
}

pub fn read_persons<R: Read>(reader: R, path: &Path) -> Result<PersonTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(reader);
    tabular::check_header(path, &mut rdr, &PERSONS_HEADER)?;
    let today = chrono::Utc::now().date_naive();
    let mut persons: BTreeMap<PersonId, Person> = BTreeMap::new();
    let mut record = csv::ByteRecord::new();
    loop {
        match rdr.read_byte_record(&mut record) {
            Ok(true) => {}
            Ok(false) => break,
            Err(e) => {
                return Err(Error::Schema {
                    path: path.to_path_buf(),
                    message: e.to_string(),
                })
            }
        }
        let line = tabular::line_of(&record);
        let person_id = parse_person_id(&record, path)?;
        let birth_date = parse_date_field(&record, 1, path, "birth_date")?;
        if birth_date > today {
            return Err(Error::row(path, line, format!("birth_date {birth_date} is in the future")));
        }
        let text = |idx| tabular::field(&record, idx).unwrap_or("").to_string();
        let person = Person {
            person_id,
            birth_date,
            sex: text(2),
            race: text(3),
            ethnicity: text(4),
        };
        if let Some(existing) = persons.get(&person_id) {
            if *existing != person {
                return Err(Error::row(
                    path,
                    line,
                    format!("person {person_id} repeated with conflicting fields"),
                ));
            }
            continue;
        }
        persons.insert(person_id, person);
    }
    Ok(PersonTable { persons })
}

pub fn load_persons(path: &Path) -> Result<PersonTable> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_persons(std::io::BufReader::new(file), path)
}

pub fn read_events<R: Read>(
    reader: R,
    path: &Path,
    persons: &PersonTable,
    registries: &Registries,
) -> Result<EventTable> {
    let lined = read_event_rows(reader, path)?;
    let row_count = lined.len();
    Ok(group(lined, row_count, persons, registries))
}

/// Parses event rows in file order, each with its line number.
pub fn read_event_rows<R: Read>(reader: R, path: &Path) -> Result<Vec<(u64, ClinicalEvent)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .buffer_capacity(1 << 20)
        .from_reader(reader);
    tabular::check_header(path, &mut rdr, &EVENTS_HEADER)?;
    let mut lined = Vec::new();
    let mut record = csv::ByteRecord::new();
    loop {
        match rdr.read_byte_record(&mut record) {
            Ok(true) => {}
            Ok(false) => break,
            Err(e) => {
                return Err(Error::Schema {
                    path: path.to_path_buf(),
                    message: e.to_string(),
                })
            }
        }
        let line = tabular::line_of(&record);
        if record.len() != EVENTS_HEADER.len() {
            return Err(Error::row(path, line, "wrong number of fields"));
        }
        let person_id = parse_person_id(&record, path)?;
        let concept_id = tabular::field(&record, 1)
            .and_then(|s| s.parse().ok())
            .map(ConceptId)
            .ok_or_else(|| Error::row(path, line, "invalid concept_id"))?;
        let domain: Domain = tabular::field(&record, 2)
            .unwrap_or("")
            .parse()
            .map_err(|e: String| Error::row(path, line, e))?;
        let event_date = parse_date_field(&record, 3, path, "event_date")?;
        lined.push((
            line,
            ClinicalEvent {
                person_id,
                concept_id,
                domain,
                event_date,
            },
        ));
    }
    Ok(lined)
}

/// Events of a file as a flat list, without person checks.
pub fn load_event_list(path: &Path) -> Result<Vec<ClinicalEvent>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(read_event_rows(file, path)?.into_iter().map(|(_, e)| e).collect())
}

pub fn load_events(path: &Path, persons: &PersonTable, registries: &Registries) -> Result<EventTable> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_events(file, path, persons, registries)
}

pub fn write_persons<'a, W: Write>(
    persons: impl IntoIterator<Item = &'a Person>,
    out: W,
) -> std::io::Result<()> {
    let mut w = tabular::csv_writer(out);
    w.write_record(PERSONS_HEADER)?;
    for p in persons {
        w.write_record([
            p.person_id.to_string().as_str(),
            &p.birth_date.to_string(),
            &p.sex,
            &p.race,
            &p.ethnicity,
        ])?;
    }
    w.flush()
}

pub fn write_events<'a, W: Write>(
    events: impl IntoIterator<Item = &'a ClinicalEvent>,
    out: W,
) -> std::io::Result<()> {
    let mut w = tabular::csv_writer(out);
    w.write_record(EVENTS_HEADER)?;
    for e in events {
        w.write_record([
            e.person_id.to_string().as_str(),
            &e.concept_id.to_string(),
            e.domain.as_str(),
            &e.event_date.to_string(),
        ])?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn origin() -> &'static Path {
        Path::new("t.csv")
    }

    fn persons(csv: &str) -> Result<PersonTable> {
        read_persons(csv.as_bytes(), origin())
    }

    const ONE_PERSON: &str = "person_id,birth_date,sex,race,ethnicity\n1,1990-04-02,F,White,Not Hispanic\n";

    #[test]
    fn one_person() {
        let t = persons(ONE_PERSON).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.get(PersonId(1)).unwrap().race, "White");
    }

    #[test]
    fn invalid_month_names_row() {
        let err = persons("person_id,birth_date,sex,race,ethnicity\n1,1990-01-01,F,W,N\n2,2020-13-01,F,W,N\n")
            .unwrap_err();
        assert!(matches!(err, Error::Row { line: 3, .. }), "{err}");
    }

    #[test]
    fn identical_persons_collapse_conflicting_fail() {
        let dup = format!("{ONE_PERSON}1,1990-04-02,F,White,Not Hispanic\n");
        assert_eq!(persons(&dup).unwrap().len(), 1);
        let conflict = format!("{ONE_PERSON}1,1991-04-02,F,White,Not Hispanic\n");
        assert!(persons(&conflict).is_err());
    }

    #[test]
    fn future_birth_rejected() {
        assert!(persons("person_id,birth_date,sex,race,ethnicity\n1,2099-01-01,F,W,N\n").is_err());
    }

    fn events(csv: &str) -> Result<EventTable> {
        let p = persons(ONE_PERSON).unwrap();
        read_events(csv.as_bytes(), origin(), &p, &Registries::shipped())
    }

    #[test]
    fn events_sorted_by_date_then_concept() {
        let t = events(
            "person_id,concept_id,domain,event_date\n1,500,Condition,2020-01-02\n1,500,Condition,2020-01-01\n1,400,Condition,2020-01-01\n",
        )
        .unwrap();
        let order: Vec<(String, i64)> = t.groups[0]
            .events
            .iter()
            .map(|e| (e.event_date.to_string(), e.concept_id.0))
            .collect();
        assert_eq!(
            order,
            vec![
                ("2020-01-01".into(), 400),
                ("2020-01-01".into(), 500),
                ("2020-01-02".into(), 500)
            ]
        );
    }

    #[test]
    fn unknown_person_is_quarantined() {
        let t = events("person_id,concept_id,domain,event_date\n1,1,Condition,2020-01-01\n9,1,Condition,2020-01-01\n")
            .unwrap();
        assert_eq!(t.quarantined.len(), 1);
        assert_eq!(t.quarantined[0].line, 3);
        assert_eq!(t.grouped_count() + t.quarantined.len(), t.row_count);
    }

    #[test]
    fn bad_rows_fail_with_line() {
        for bad in [
            "1,1,Condition,2020-02-30",
            "1,1,Condition,",
            "1,x,Condition,2020-01-01",
            "1,1,Visit,2020-01-01",
            "1,1,Condition,1899-12-31",
        ] {
            let err = events(&format!("person_id,concept_id,domain,event_date\n{bad}\n")).unwrap_err();
            assert!(matches!(err, Error::Row { line: 2, .. }), "{bad}: {err}");
        }
    }

    #[test]
    fn domain_mismatch_is_a_warning() {
        // 444098 is a Condition in the GA set.
        let t = events("person_id,concept_id,domain,event_date\n1,444098,Observation,2020-01-01\n").unwrap();
        assert_eq!(t.domain_mismatches.len(), 1);
        assert_eq!(t.grouped_count(), 1);
    }
}
