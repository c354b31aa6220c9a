//! Multiple-imputation estimators for the treatment effect among adherers.
//!
//! A randomized two-arm trial records baseline covariates `X`, intermediate
//! measurements `Z(1..K-1)`, per-period adherence indicators `I(1..K-1)` and a
//! final outcome `Y`. A subject adheres (`A = 1`) when every indicator is 1.
//! Principal strata are defined by the *potential* adherence under both
//! treatments, which is never jointly observed. This crate fills in the
//! missing potential outcomes by proper multiple imputation from arm-specific
//! regression models, evaluates stratum means on every completed dataset and
//! pools them.
//!
//! Module map:
//!
//! * [`trial_data`] holds the observed data model, validation and CSV IO.
//! * [`imputation`] fits the regression models and produces completed datasets.
//! * [`estimators`] evaluates stratum means per imputation and pools them.
//! * [`inference`] provides the stratified bootstrap and Rubin's rules.
//! * [`simulation`] generates trials, computes Monte Carlo truths and runs
//!   replication studies.
//! * [`rng`] derives reproducible random substreams from task coordinates.

pub mod error;
pub mod estimators;
pub mod imputation;
pub mod inference;
pub mod numeric;
pub mod rng;
pub mod simulation;
pub mod trial_data;

pub use error::{Error, Result};
pub use estimators::{
    estimate, estimate_cell, estimate_principal_score_comparator, EmptyStratumPolicy,
    EstimateTriple, Parameter, StratumEstimate, Subset, Treatment,
};
pub use imputation::{
    impute_many, impute_once, write_long_csv, DegeneratePolicy, ImputationModels, ImputationPlan,
    ImputedDataset, ParameterDraw, PlanMode,
};
pub use inference::{
    analyze, bootstrap, rubin_pool, within_variance, z_test, BootstrapOptions, BootstrapResult,
    PointAnalysis, RubinResult,
};
pub use simulation::{
    generate_trial, make_null, oracle_truth, run_study, run_study_with_truth, Assignment,
    OracleTruth, SettingConfig, StudyOptions, StudyReport,
};
pub use trial_data::{
    adherence, validate, Arm, CellSource, PotentialOutcomeFrame, PotentialOutcomeTable,
    StratumLabel, SubjectRecord, TrialDataset, Violation,
};
