use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::SettingConfig;
use super::generate::generate_trial;
use super::oracle::{oracle_truth, OracleTruth};
use crate::error::{Error, Result};
use crate::estimators::{EmptyStratumPolicy, Parameter, Treatment};
use crate::imputation::{ImputationModels, ImputationPlan, PlanMode};
use crate::inference::{analyze_with_models, bootstrap, z_test, BootstrapOptions};
use crate::numeric::mean;
use crate::rng::{derive_seed, tag};
use crate::trial_data::StratumLabel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyOptions {
    /// Simulated trials `R`.
    pub replications: usize,
    /// Imputations `M` for the point estimate.
    pub imputations: usize,
    /// Bootstrap replicates `B`; 0 disables the bootstrap.
    pub bootstrap_replicates: usize,
    /// Imputations per bootstrap replicate; defaults to `imputations`.
    pub bootstrap_imputations: Option<usize>,
    pub seed: u64,
    pub mode: PlanMode,
    pub alpha: f64,
    /// Subjects simulated for the truth.
    pub oracle_n: usize,
}

impl StudyOptions {
    pub fn new(replications: usize, imputations: usize, bootstrap_replicates: usize, seed: u64) -> Self {
        Self {
            replications,
            imputations,
            bootstrap_replicates,
            bootstrap_imputations: None,
            seed,
            mode: PlanMode::Full,
            alpha: 0.05,
            oracle_n: 2_000_000,
        }
    }

    pub fn bootstrap_imputations(&self) -> usize {
        self.bootstrap_imputations.unwrap_or(self.imputations)
    }
}

/// Per-parameter results of one simulated trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialEstimate {
    pub parameter: Parameter,
    pub estimate: f64,
    pub rubin_se: f64,
    pub rubin_ci: (f64, f64),
    pub boot_se: Option<f64>,
    pub boot_ci: Option<(f64, f64)>,
    /// Two-sided p-value against 0, from the bootstrap SE when available.
    pub p_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub replication: usize,
    pub result: std::result::Result<Vec<TrialEstimate>, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub parameter: Parameter,
    pub truth: f64,
    pub estimate: f64,
    pub bias: f64,
    pub boot_se: Option<f64>,
    pub boot_cp: Option<f64>,
    pub rubin_se: f64,
    pub rubin_cp: f64,
    /// Share of trials rejecting `parameter = 0` at level `alpha`.
    pub reject_rate: f64,
    /// Mean interval widths.
    pub rubin_width: f64,
    pub boot_width: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub config: SettingConfig,
    pub options: StudyOptions,
    pub truth: OracleTruth,
    pub rows: Vec<StudyRow>,
    /// Trials that produced estimates.
    pub completed: usize,
    /// `(replication, message)` of the excluded trials.
    pub failures: Vec<(usize, String)>,
    pub trials: Vec<TrialOutcome>,
}

impl StudyReport {
    pub fn row(&self, stratum: StratumLabel, treatment: Treatment) -> Option<&StudyRow> {
        self.rows
            .iter()
            .find(|r| r.parameter.stratum == stratum && r.parameter.treatment == treatment)
    }

    /// Writes the summary table. Under a null configuration a `reject_rate`
    /// column is added, filled for the `S++` difference only.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let null = self.config.is_null();
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| Error::Io {
            path: "<study report>".into(),
            source: e.into(),
        };
        let mut header = vec!["parameter", "true", "estimate", "bias", "boot_se", "boot_cp", "rubin_se", "rubin_cp"];
        if null {
            header.push("reject_rate");
        }
        w.write_record(&header).map_err(io)?;
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.rows {
            let mut rec = vec![
                r.parameter.name(),
                r.truth.to_string(),
                r.estimate.to_string(),
                r.bias.to_string(),
                opt(r.boot_se),
                opt(r.boot_cp),
                r.rubin_se.to_string(),
                r.rubin_cp.to_string(),
            ];
            if null {
                let tested = r.parameter.stratum == StratumLabel::SPlusPlus
                    && r.parameter.treatment == Treatment::Difference;
                rec.push(if tested { r.reject_rate.to_string() } else { String::new() });
            }
            w.write_record(&rec).map_err(io)?;
        }
        w.flush().map_err(|source| Error::Io {
            path: "<study report>".into(),
            source,
        })
    }
}

fn run_trial(
    cfg: &SettingConfig,
    options: &StudyOptions,
    plan: &ImputationPlan,
    parameters: &[Parameter],
    replication: usize,
) -> Result<Vec<TrialEstimate>> {
    let trial_seed = derive_seed(options.seed, &[tag::TRIAL, replication as u64]);
    let (dataset, _) = generate_trial(cfg, trial_seed)?;
    let models = ImputationModels::fit(&dataset, plan)?;
    let analyses = analyze_with_models(
        &models,
        &dataset,
        options.imputations,
        trial_seed,
        parameters,
        EmptyStratumPolicy::Error,
        true,
    )?;
    let boot = if options.bootstrap_replicates > 0 {
        let mut b = BootstrapOptions::new(options.bootstrap_replicates, options.bootstrap_imputations(), trial_seed);
        b.alpha = options.alpha;
        let estimates: Vec<f64> = analyses.iter().map(|a| a.estimate.pooled).collect();
        Some(bootstrap(&dataset, plan, &b, parameters, &estimates)?)
    } else {
        None
    };
    analyses
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let rubin = a.rubin()?;
            let (boot_se, boot_ci) = match &boot {
                Some(b) => (Some(b[i].se), Some(b[i].ci)),
                None => (None, None),
            };
            let est = a.estimate.pooled;
            Ok(TrialEstimate {
                parameter: a.estimate.parameter(),
                estimate: est,
                rubin_se: rubin.se(),
                rubin_ci: rubin.interval(options.alpha),
                boot_se,
                boot_ci,
                p_value: z_test(est, boot_se.unwrap_or(rubin.se()), 0.0)?,
            })
        })
        .collect()
}

fn covers(ci: (f64, f64), truth: f64) -> f64 {
    if ci.0 <= truth && truth <= ci.1 {
        1.0
    } else {
        0.0
    }
}

/// Runs `R` simulated trials against a precomputed truth.
pub fn run_study_with_truth(cfg: &SettingConfig, options: &StudyOptions, truth: OracleTruth) -> Result<StudyReport> {
    cfg.validate()?;
    if options.replications == 0 {
        return Err(Error::InvalidArgument("at least one replication is required".into()));
    }
    if options.imputations < 2 {
        return Err(Error::InvalidArgument("Rubin's rules need at least two imputations".into()));
    }
    if options.bootstrap_replicates == 1 {
        return Err(Error::InvalidArgument("the bootstrap needs at least two replicates".into()));
    }
    let plan = ImputationPlan::new(options.mode, 1, cfg.n_intermediate());
    let parameters = Parameter::study_set();
    let trials: Vec<TrialOutcome> = (0..options.replications)
        .into_par_iter()
        .map(|r| TrialOutcome {
            replication: r,
            result: run_trial(cfg, options, &plan, &parameters, r).map_err(|e| e.to_string()),
        })
        .collect();
    let ok: Vec<&Vec<TrialEstimate>> = trials.iter().filter_map(|t| t.result.as_ref().ok()).collect();
    let failures: Vec<(usize, String)> = trials
        .iter()
        .filter_map(|t| t.result.as_ref().err().map(|e| (t.replication, e.clone())))
        .collect();
    if ok.is_empty() {
        return Err(Error::Inference(format!(
            "all {} replications failed; first error: {}",
            options.replications, failures[0].1
        )));
    }
    let mut rows = Vec::with_capacity(parameters.len());
    for (i, p) in parameters.iter().enumerate() {
        let t = truth.parameter(*p)?;
        let col = |f: &dyn Fn(&TrialEstimate) -> f64| mean(&ok.iter().map(|e| f(&e[i])).collect::<Vec<_>>());
        let estimate = col(&|e| e.estimate);
        let with_boot = options.bootstrap_replicates > 0;
        rows.push(StudyRow {
            parameter: *p,
            truth: t,
            estimate,
            bias: estimate - t,
            boot_se: with_boot.then(|| col(&|e| e.boot_se.unwrap_or(f64::NAN))),
            boot_cp: with_boot.then(|| col(&|e| e.boot_ci.map_or(f64::NAN, |ci| covers(ci, t)))),
            rubin_se: col(&|e| e.rubin_se),
            rubin_cp: col(&|e| covers(e.rubin_ci, t)),
            reject_rate: col(&|e| if e.p_value < options.alpha { 1.0 } else { 0.0 }),
            rubin_width: col(&|e| e.rubin_ci.1 - e.rubin_ci.0),
            boot_width: with_boot.then(|| col(&|e| e.boot_ci.map_or(f64::NAN, |ci| ci.1 - ci.0))),
        });
    }
    Ok(StudyReport {
        config: cfg.clone(),
        options: options.clone(),
        truth,
        rows,
        completed: ok.len(),
        failures,
        trials,
    })
}

/// Simulation study: the truth from [`oracle_truth`] with `options.oracle_n`
/// subjects, then `R` independent trials each estimated, bootstrapped and
/// pooled by Rubin's rules.
pub fn run_study(cfg: &SettingConfig, options: &StudyOptions) -> Result<StudyReport> {
    let truth = oracle_truth(cfg, options.oracle_n, derive_seed(options.seed, &[tag::ORACLE]))?;
    run_study_with_truth(cfg, options, truth)
}
