use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Constants shared by the GA engine, the DOD engine and episode matching.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    /// Half-width of the clustering window; inclusive.
    pub window_days: i64,
    /// Absorbed High-accuracy candidates further than this from the anchor
    /// raise the conflict flag.
    pub conflict_threshold_days: i64,
    pub match_min_days: i64,
    pub match_max_days: i64,
    /// Gestation length a plausible (start, dod) pair is pulled towards.
    pub match_target_days: i64,
    pub extreme_short_days: i64,
    pub extreme_long_days: i64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            window_days: 270,
            conflict_threshold_days: 14,
            match_min_days: 140,
            match_max_days: 308,
            match_target_days: 280,
            extreme_short_days: 150,
            extreme_long_days: 300,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("window_days", self.window_days),
            ("conflict_threshold_days", self.conflict_threshold_days),
            ("match_min_days", self.match_min_days),
            ("match_max_days", self.match_max_days),
            ("match_target_days", self.match_target_days),
            ("extreme_short_days", self.extreme_short_days),
            ("extreme_long_days", self.extreme_long_days),
        ];
        for (name, value) in positive {
            if value <= 0 {
                return Err(Error::Config(format!("{name} must be positive, got {value}")));
            }
        }
        if self.match_min_days >= self.match_max_days {
            return Err(Error::Config(format!(
                "match bounds must satisfy min < max, got [{}, {}]",
                self.match_min_days, self.match_max_days
            )));
        }
        if self.extreme_short_days >= self.extreme_long_days {
            return Err(Error::Config("extreme_short_days must be below extreme_long_days".into()));
        }
        Ok(())
    }
}

/// Cohort inclusion: delivery inside the study window and maternal age
/// (whole years at delivery) inside the age bounds. All bounds inclusive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortFilter {
    pub window_start: NaiveDate,
    pub window_end: NaiveDate,
    pub min_age: u32,
    pub max_age: u32,
}

impl Default for CohortFilter {
    fn default() -> Self {
        CohortFilter {
            window_start: NaiveDate::from_ymd_opt(2018, 6, 1).unwrap(),
            window_end: NaiveDate::from_ymd_opt(2021, 5, 31).unwrap(),
            min_age: 15,
            max_age: 49,
        }
    }
}

impl CohortFilter {
    pub fn validate(&self) -> Result<()> {
        if self.window_start > self.window_end {
            return Err(Error::Config("cohort window start is after its end".into()));
        }
        if self.min_age > self.max_age {
            return Err(Error::Config("cohort min_age exceeds max_age".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        EngineConfig::default().validate().unwrap();
        CohortFilter::default().validate().unwrap();
    }

    #[test]
    fn rejects_inverted_bounds() {
        let cfg = EngineConfig {
            match_min_days: 300,
            match_max_days: 200,
            ..EngineConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = EngineConfig {
            window_days: 0,
            ..EngineConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
