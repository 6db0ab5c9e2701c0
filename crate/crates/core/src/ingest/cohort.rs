use serde::{Deserialize, Serialize};

/// One ICU stay as seen by the cohort filter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StayRecord {
    pub subject_id: String,
    pub stay_id: String,
    pub age_years: u32,
    pub duration_hours: f64,
    /// 1 for the subject's first known admission.
    pub admission_ordinal: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortCriteria {
    pub min_age_years: u32,
    pub min_stay_hours: f64,
    pub max_stay_days: f64,
    pub first_stay_only: bool,
}

impl Default for CohortCriteria {
    fn default() -> Self {
        CohortCriteria {
            min_age_years: 15,
            min_stay_hours: 12.0,
            max_stay_days: 10.0,
            first_stay_only: true,
        }
    }
}

impl CohortCriteria {
    pub fn admits(&self, s: &StayRecord) -> bool {
        s.age_years >= self.min_age_years
            && s.duration_hours >= self.min_stay_hours
            && s.duration_hours < self.max_stay_days * 24.0
            && (!self.first_stay_only || s.admission_ordinal == 1)
    }
}

/// Stays meeting every criterion, in input order.
pub fn select_cohort(stays: &[StayRecord], criteria: &CohortCriteria) -> Vec<StayRecord> {
    stays.iter().filter(|s| criteria.admits(s)).cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stay(age: u32, hours: f64, ordinal: u32) -> StayRecord {
        StayRecord {
            subject_id: "s".into(),
            stay_id: "1".into(),
            age_years: age,
            duration_hours: hours,
            admission_ordinal: ordinal,
        }
    }

    #[test]
    fn exclusions() {
        let c = CohortCriteria::default();
        assert!(!c.admits(&stay(40, 6.0, 1)));
        assert!(!c.admits(&stay(14, 48.0, 1)));
        assert!(!c.admits(&stay(40, 48.0, 2)));
        assert!(!c.admits(&stay(40, 240.0, 1)));
        assert!(c.admits(&stay(15, 12.0, 1)));
    }
}
