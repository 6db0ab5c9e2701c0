use std::path::Path;

use serde::{Deserialize, Serialize};

use super::cohort::StayRecord;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Continuous,
    Discrete,
}

/// One charted value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub subject_id: String,
    /// Minutes since the stay started.
    #[serde(rename = "timestamp_min")]
    pub timestamp: i64,
    pub variable: String,
    pub value: f64,
    pub kind: EventKind,
}

/// Reads `subject_id,timestamp_min,variable,value,kind` rows.
pub fn read_events(path: &Path) -> Result<Vec<EventRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (line, rec) in rdr.deserialize::<EventRecord>().enumerate() {
        let rec = rec.map_err(|e| Error::malformed(path, format!("row {}: {e}", line + 2)))?;
        if rec.timestamp < 0 || !rec.value.is_finite() {
            return Err(Error::malformed(
                path,
                format!("row {}: negative timestamp or non-finite value", line + 2),
            ));
        }
        out.push(rec);
    }
    Ok(out)
}

/// Reads `subject_id,stay_id,age_years,duration_hours,admission_ordinal` rows.
pub fn read_stays(path: &Path) -> Result<Vec<StayRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    rdr.deserialize::<StayRecord>()
        .enumerate()
        .map(|(line, r)| r.map_err(|e| Error::malformed(path, format!("row {}: {e}", line + 2))))
        .collect()
}
