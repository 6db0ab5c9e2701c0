//! From long-format event logs to normalized mixed batches, plus a seeded
//! synthetic cohort with planted cross-type coupling.

mod cohort;
mod events;
mod fixture;
mod grid;
mod io;

pub use cohort::{select_cohort, CohortCriteria, StayRecord};
pub use events::{read_events, read_stays, EventKind, EventRecord};
pub use fixture::{make_fixture, Fixture, FixtureSpec};
pub use grid::{
    aggregate_hourly, clip_outliers, denormalize, impute_simple, normalize, HourlyGrid, NormStats,
    Normalized, VarRange, VariableSpec,
};
pub use io::{read_dataset, write_dataset, DatasetManifest, DATASET_FORMAT};
