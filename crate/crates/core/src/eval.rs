//! Agreement statistics and scoring against synthetic ground truth.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::Serialize;

use crate::episode::PregnancyEpisode;
use crate::error::{Error, Result};
use crate::ingest::PersonId;
use crate::tabular;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    labels: Vec<String>,
    /// Row-major; rows are rater A, columns rater B.
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(labels: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = labels.len();
        if k < 2 {
            return Err(Error::Config("confusion matrix needs at least two categories".into()));
        }
        if counts.len() != k || counts.iter().any(|r| r.len() != k) {
            return Err(Error::Config(format!("confusion matrix must be {k}x{k}")));
        }
        Ok(ConfusionMatrix { labels, counts })
    }

    /// Labels default to 1..k.
    pub fn from_rows(counts: Vec<Vec<u64>>) -> Result<Self> {
        let labels = (1..=counts.len()).map(|i| i.to_string()).collect();
        Self::new(labels, counts)
    }

    pub fn k(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

/// Reads a square matrix CSV: header `,<label>,...`, then one row per label
/// with the row label first.
pub fn parse_matrix(content: &str, path: &Path) -> Result<ConfusionMatrix> {
    let mut rdr = tabular::reader(content);
    let header = rdr.headers().map_err(|e| Error::Schema {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let labels: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    let mut counts = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Schema {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let row_label = record.get(0).unwrap_or("").trim();
        if record.len() != labels.len() + 1 {
            return Err(Error::row(path, line, "row length does not match header"));
        }
        if labels.get(counts.len()).map(String::as_str) != Some(row_label) {
            return Err(Error::row(path, line, format!("row label `{row_label}` does not match column order")));
        }
        let row = record
            .iter()
            .skip(1)
            .map(|c| c.trim().parse::<u64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::row(path, line, "counts must be non-negative integers"))?;
        counts.push(row);
    }
    ConfusionMatrix::new(labels, counts).map_err(|e| Error::Schema {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn load_matrix(path: &Path) -> Result<ConfusionMatrix> {
    parse_matrix(&tabular::read_to_string(path)?, path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Weighting {
    Unweighted,
    Linear,
}

impl Weighting {
    fn weight(self, i: usize, j: usize, k: usize) -> f64 {
        match self {
            Weighting::Unweighted => f64::from(u8::from(i == j)),
            Weighting::Linear => 1.0 - i.abs_diff(j) as f64 / (k - 1) as f64,
        }
    }
}

impl fmt::Display for Weighting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Weighting::Unweighted => "unweighted",
            Weighting::Linear => "linear",
        })
    }
}

impl FromStr for Weighting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "unweighted" | "none" => Ok(Weighting::Unweighted),
            "linear" => Ok(Weighting::Linear),
            other => Err(format!("unknown weighting `{other}` (expected unweighted or linear)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KappaResult {
    pub kappa: f64,
    pub observed_agreement: f64,
    pub expected_agreement: f64,
    pub weighting: Weighting,
}

pub fn cohen_kappa(matrix: &ConfusionMatrix, weighting: Weighting) -> Result<KappaResult> {
    let k = matrix.k();
    let n = matrix.total() as f64;
    if n == 0.0 {
        return Err(Error::DegenerateKappa);
    }
    let rows: Vec<f64> = matrix.counts.iter().map(|r| r.iter().sum::<u64>() as f64).collect();
    let cols: Vec<f64> = (0..k)
        .map(|j| matrix.counts.iter().map(|r| r[j]).sum::<u64>() as f64)
        .collect();
    let mut p_o = 0.0;
    let mut p_e = 0.0;
    for i in 0..k {
        for j in 0..k {
            let w = weighting.weight(i, j, k);
            p_o += w * matrix.counts[i][j] as f64;
            p_e += w * rows[i] * cols[j];
        }
    }
    p_o /= n;
    p_e /= n * n;
    if (1.0 - p_e).abs() < 1e-12 {
        return Err(Error::DegenerateKappa);
    }
    Ok(KappaResult {
        kappa: (p_o - p_e) / (1.0 - p_e),
        observed_agreement: p_o,
        expected_agreement: p_e,
        weighting,
    })
}

pub const TRUTH_HEADER: [&str; 5] = ["person_id", "episode_index", "true_start", "true_dod", "index_event_week"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TruthEpisode {
    pub person_id: PersonId,
    pub episode_index: u32,
    pub true_start: NaiveDate,
    pub true_dod: NaiveDate,
    pub index_event_week: Option<u32>,
}

pub fn parse_truth(content: &str, path: &Path) -> Result<Vec<TruthEpisode>> {
    let mut rdr = tabular::reader(content);
    tabular::check_header(path, &mut rdr, &TRUTH_HEADER)?;
    let mut out = Vec::new();
    let mut record = csv::ByteRecord::new();
    while rdr.read_byte_record(&mut record).map_err(|e| Error::Schema {
        path: path.to_path_buf(),
        message: e.to_string(),
    })? {
        let line = tabular::line_of(&record);
        let bad = |column: &str| Error::row(path, line, format!("invalid {column}"));
        let get = |i: usize| tabular::field(&record, i).unwrap_or("");
        let week = get(4);
        out.push(TruthEpisode {
            person_id: PersonId(get(0).parse().map_err(|_| bad("person_id"))?),
            episode_index: get(1).parse().map_err(|_| bad("episode_index"))?,
            true_start: tabular::parse_iso_date(get(2)).ok_or_else(|| bad("true_start"))?,
            true_dod: tabular::parse_iso_date(get(3)).ok_or_else(|| bad("true_dod"))?,
            index_event_week: if week.is_empty() {
                None
            } else {
                Some(week.parse().map_err(|_| bad("index_event_week"))?)
            },
        });
    }
    Ok(out)
}

pub fn load_truth(path: &Path) -> Result<Vec<TruthEpisode>> {
    parse_truth(&tabular::read_to_string(path)?, path)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct RoundTripScore {
    pub truth_episodes: usize,
    pub inferred_episodes: usize,
    pub truth_persons: usize,
    pub exact_start: f64,
    pub start_within_7: f64,
    pub exact_dod: f64,
    pub dod_within_1: f64,
    pub episode_count_match: f64,
}

impl RoundTripScore {
    pub fn is_perfect(&self) -> bool {
        [
            self.exact_start,
            self.start_within_7,
            self.exact_dod,
            self.dod_within_1,
            self.episode_count_match,
        ]
        .iter()
        .all(|&f| f == 1.0)
    }
}

/// Scores inferred episodes against truth. Within a person, truth and
/// inferred episodes are paired closest-delivery first, each used once. Unpaired truth episodes and
/// persons absent from the inference count as misses.
pub fn round_trip_score(inferred: &[PregnancyEpisode], truth: &[TruthEpisode]) -> RoundTripScore {
    let mut by_person: BTreeMap<PersonId, Vec<&PregnancyEpisode>> = BTreeMap::new();
    for e in inferred {
        by_person.entry(e.person_id).or_default().push(e);
    }
    let mut truth_by_person: BTreeMap<PersonId, Vec<&TruthEpisode>> = BTreeMap::new();
    for t in truth {
        truth_by_person.entry(t.person_id).or_default().push(t);
    }

    let (mut exact_start, mut start_7, mut exact_dod, mut dod_1, mut count_match) = (0, 0, 0, 0, 0);
    for (person, truths) in &truth_by_person {
        let candidates = by_person.get(person).map_or(&[][..], Vec::as_slice);
        if candidates.len() == truths.len() {
            count_match += 1;
        }
        let mut pairs: Vec<(i64, usize, usize)> = Vec::new();
        for (ti, t) in truths.iter().enumerate() {
            for (ei, e) in candidates.iter().enumerate() {
                pairs.push(((e.dod - t.true_dod).num_days().abs(), ti, ei));
            }
        }
        pairs.sort_unstable();
        let mut truth_used = vec![false; truths.len()];
        let mut inferred_used = vec![false; candidates.len()];
        for (dod_gap, ti, ei) in pairs {
            if truth_used[ti] || inferred_used[ei] {
                continue;
            }
            truth_used[ti] = true;
            inferred_used[ei] = true;
            let start_gap = (candidates[ei].start_date - truths[ti].true_start).num_days().abs();
            exact_start += usize::from(start_gap == 0);
            start_7 += usize::from(start_gap <= 7);
            exact_dod += usize::from(dod_gap == 0);
            dod_1 += usize::from(dod_gap <= 1);
        }
    }
    let frac = |n: usize, d: usize| if d == 0 { 1.0 } else { n as f64 / d as f64 };
    RoundTripScore {
        truth_episodes: truth.len(),
        inferred_episodes: inferred.len(),
        truth_persons: truth_by_person.len(),
        exact_start: frac(exact_start, truth.len()),
        start_within_7: frac(start_7, truth.len()),
        exact_dod: frac(exact_dod, truth.len()),
        dod_within_1: frac(dod_1, truth.len()),
        episode_count_match: frac(count_match, truth_by_person.len()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::concepts::AccuracyLevel;
    use crate::episode::ExtremeFlag;

    fn table4() -> ConfusionMatrix {
        ConfusionMatrix::from_rows(vec![vec![33, 1, 0], vec![2, 1, 1], vec![0, 1, 1]]).unwrap()
    }

    #[test]
    fn table4_linear() {
        let r = cohen_kappa(&table4(), Weighting::Linear).unwrap();
        assert!((r.observed_agreement - 0.9375).abs() < 1e-12);
        assert!((r.expected_agreement - 0.83375).abs() < 1e-12);
        assert!((r.kappa - 0.62406).abs() < 1e-4);
    }

    #[test]
    fn perfect_agreement_is_one() {
        let m = ConfusionMatrix::from_rows(vec![vec![10, 0, 0], vec![0, 4, 0], vec![0, 0, 3]]).unwrap();
        assert_eq!(cohen_kappa(&m, Weighting::Unweighted).unwrap().kappa, 1.0);
    }

    #[test]
    fn independence_is_zero() {
        let m = ConfusionMatrix::from_rows(vec![vec![25, 25], vec![25, 25]]).unwrap();
        assert_eq!(cohen_kappa(&m, Weighting::Unweighted).unwrap().kappa, 0.0);
    }

    #[test]
    fn degenerate_marginals_are_an_error() {
        let m = ConfusionMatrix::from_rows(vec![vec![5, 0], vec![0, 0]]).unwrap();
        assert!(matches!(cohen_kappa(&m, Weighting::Unweighted), Err(Error::DegenerateKappa)));
        let empty = ConfusionMatrix::from_rows(vec![vec![0, 0], vec![0, 0]]).unwrap();
        assert!(matches!(cohen_kappa(&empty, Weighting::Linear), Err(Error::DegenerateKappa)));
    }

    #[test]
    fn matrix_shape_checked() {
        assert!(ConfusionMatrix::from_rows(vec![vec![1]]).is_err());
        assert!(ConfusionMatrix::from_rows(vec![vec![1, 2], vec![3]]).is_err());
    }

    #[test]
    fn matrix_csv() {
        let m = parse_matrix(
            ",High,Moderate,Low\nHigh,33,1,0\nModerate,2,1,1\nLow,0,1,1\n",
            Path::new("m.csv"),
        )
        .unwrap();
        assert_eq!(m, ConfusionMatrix::new(vec!["High".into(), "Moderate".into(), "Low".into()], table4().counts).unwrap());
        assert!(parse_matrix(",A,B\nB,1,2\nA,3,4\n", Path::new("m.csv")).is_err());
        assert!(parse_matrix(",A,B\nA,1,-2\nB,3,4\n", Path::new("m.csv")).is_err());
    }

    fn date(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn inferred(person: i64, start: &str, dod: &str) -> PregnancyEpisode {
        let (start_date, dod) = (date(start), date(dod));
        PregnancyEpisode {
            person_id: PersonId(person),
            episode_index: 1,
            start_date,
            dod,
            gestation_days: (dod - start_date).num_days(),
            ga_accuracy: AccuracyLevel::High,
            dod_domain_rank: 1,
            extreme_flag: ExtremeFlag::None,
            conflict_flag: false,
            ga_anchor_concept_id: None,
            dod_anchor_concept_id: None,
        }
    }

    fn truth(person: i64, index: u32, start: &str, dod: &str) -> TruthEpisode {
        TruthEpisode {
            person_id: PersonId(person),
            episode_index: index,
            true_start: date(start),
            true_dod: date(dod),
            index_event_week: None,
        }
    }

    #[test]
    fn lossless_is_perfect() {
        let s = round_trip_score(
            &[inferred(1, "2020-01-01", "2020-10-07")],
            &[truth(1, 1, "2020-01-01", "2020-10-07")],
        );
        assert!(s.is_perfect());
    }

    #[test]
    fn near_start_counts_within_seven() {
        let s = round_trip_score(
            &[inferred(1, "2020-01-05", "2020-10-07")],
            &[truth(1, 1, "2020-01-01", "2020-10-07")],
        );
        assert_eq!(s.exact_start, 0.0);
        assert_eq!(s.start_within_7, 1.0);
        assert_eq!(s.exact_dod, 1.0);
    }

    #[test]
    fn missing_episode_and_person() {
        let s = round_trip_score(
            &[inferred(1, "2020-01-01", "2020-10-07")],
            &[
                truth(1, 1, "2018-01-01", "2018-10-07"),
                truth(1, 2, "2020-01-01", "2020-10-07"),
                truth(2, 1, "2020-01-01", "2020-10-07"),
            ],
        );
        assert_eq!(s.episode_count_match, 0.0);
        assert!((s.exact_dod - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn truth_csv() {
        let t = parse_truth(
            "person_id,episode_index,true_start,true_dod,index_event_week\n1,1,2020-01-01,2020-10-07,\n1,2,2021-01-01,2021-10-07,12\n",
            Path::new("truth.csv"),
        )
        .unwrap();
        assert_eq!(t[0].index_event_week, None);
        assert_eq!(t[1].index_event_week, Some(12));
    }
}
