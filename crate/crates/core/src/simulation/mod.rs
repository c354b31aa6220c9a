//! Simulated two-arm trials with known principal-stratum truths.

mod config;
mod generate;
mod oracle;
mod study;

pub use config::{make_null, Assignment, SettingConfig, PRESETS};
pub use generate::generate_trial;
pub use oracle::{oracle_truth, OracleEntry, OracleTruth, ORACLE_CHUNK};
pub use study::{run_study, run_study_with_truth, StudyOptions, StudyReport, StudyRow, TrialEstimate, TrialOutcome};
