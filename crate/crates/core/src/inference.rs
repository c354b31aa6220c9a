//! Uncertainty for pooled stratum estimates: stratified bootstrap with
//! re-imputation, and Rubin's rules with Barnard-Rubin degrees of freedom.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::estimators::{cell_sums, cell_values, cell_with_count, Subset, EmptyStratumPolicy, Parameter, StratumEstimate, Treatment};
use crate::imputation::{imputation_stream, ImputationModels, ImputationPlan, ImputedDataset};
use crate::numeric::{mean, sample_variance};
use crate::rng::{derive_seed, stream, tag};
use crate::trial_data::{Arm, PotentialOutcomeTable, StratumLabel, SubjectRecord, TrialDataset};

/// Share of skipped bootstrap replicates above which a result is flagged.
pub const UNRELIABLE_SKIP_SHARE: f64 = 0.10;

fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

fn t_quantile(p: f64, df: f64) -> f64 {
    if !df.is_finite() || df > 1e7 {
        return normal_quantile(p);
    }
    StudentsT::new(0.0, 1.0, df)
        .expect("df > 0")
        .inverse_cdf(p)
}

/// Two-sided normal p-value of `estimate` against `null`.
pub fn z_test(estimate: f64, se: f64, null: f64) -> Result<f64> {
    if !(se > 0.0) {
        return Err(Error::Inference(format!("standard error must be positive, got {se}")));
    }
    let z = (estimate - null) / se;
    Ok(erfc(z.abs() / std::f64::consts::SQRT_2))
}

/// Rubin's rules for one scalar parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RubinResult {
    pub imputations: usize,
    pub qbar: f64,
    /// Mean within-imputation variance.
    pub w: f64,
    /// Between-imputation variance.
    pub b: f64,
    pub total_var: f64,
    /// Barnard-Rubin degrees of freedom.
    pub df: f64,
    /// 95% interval.
    pub ci: (f64, f64),
}

impl RubinResult {
    pub fn se(&self) -> f64 {
        self.total_var.sqrt()
    }

    pub fn interval(&self, alpha: f64) -> (f64, f64) {
        let half = t_quantile(1.0 - alpha / 2.0, self.df) * self.se();
        (self.qbar - half, self.qbar + half)
    }
}

/// Pools per-imputation estimates and variances.
///
/// `n_complete_df` is the complete-data degrees of freedom; pass
/// `f64::INFINITY` for the large-sample form.
pub fn rubin_pool(estimates: &[f64], variances: &[f64], n_complete_df: f64) -> Result<RubinResult> {
    let m = estimates.len();
    if m < 2 {
        return Err(Error::Inference("Rubin's rules need at least two imputations".into()));
    }
    if variances.len() != m {
        return Err(Error::Inference("one variance per estimate is required".into()));
    }
    if variances.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::Inference("within-imputation variances must be non-negative".into()));
    }
    if !(n_complete_df > 0.0) {
        return Err(Error::Inference("complete-data degrees of freedom must be positive".into()));
    }
    let qbar = mean(estimates);
    let w = mean(variances);
    let b = sample_variance(estimates);
    let inflation = 1.0 + 1.0 / m as f64;
    let total_var = w + inflation * b;
    let lambda = if total_var > 0.0 { inflation * b / total_var } else { 0.0 };
    let df_old = if lambda > 0.0 {
        (m - 1) as f64 / (lambda * lambda)
    } else {
        f64::INFINITY
    };
    let df_obs = if n_complete_df.is_finite() {
        (n_complete_df + 1.0) / (n_complete_df + 3.0) * n_complete_df * (1.0 - lambda)
    } else {
        f64::INFINITY
    };
    let df = match (df_old.is_finite(), df_obs.is_finite()) {
        (_, _) if df_obs == 0.0 => df_old,
        (true, true) => df_old * df_obs / (df_old + df_obs),
        (true, false) => df_old,
        (false, _) => df_obs,
    };
    let mut out = RubinResult {
        imputations: m,
        qbar,
        w,
        b,
        total_var,
        df,
        ci: (qbar, qbar),
    };
    out.ci = out.interval(0.05);
    Ok(out)
}

fn single_arm_within(
    table: &PotentialOutcomeTable,
    stratum: StratumLabel,
    arm: Arm,
    subset: Subset,
    scratch: &mut Vec<f64>,
) -> Result<f64> {
    let sums = cell_values(table, stratum, arm, subset, scratch);
    if sums.count < 2 {
        return Err(Error::Inference(format!(
            "within-imputation variance needs at least two subjects, stratum {stratum} has {}",
            sums.count
        )));
    }
    Ok(sample_variance(scratch) / sums.count as f64)
}

pub(crate) fn within_variance_table(
    table: &PotentialOutcomeTable,
    parameter: Parameter,
    scratch: &mut Vec<f64>,
) -> Result<f64> {
    let one = |arm, scratch: &mut Vec<f64>| {
        single_arm_within(table, parameter.stratum, arm, parameter.subset, scratch)
    };
    match parameter.treatment {
        Treatment::Control => one(Arm::Control, scratch),
        Treatment::Experimental => one(Arm::Experimental, scratch),
        Treatment::Difference => Ok(one(Arm::Control, scratch)? + one(Arm::Experimental, scratch)?),
    }
}

/// Variance of the cell mean within one imputation: sample variance of the
/// included outcomes over their count; a difference adds both arms.
pub fn within_variance(
    imputed: &ImputedDataset,
    stratum: StratumLabel,
    treatment: Treatment,
    subset: Subset,
) -> Result<f64> {
    within_variance_table(
        &imputed.table,
        Parameter::new(stratum, treatment, subset),
        &mut Vec::new(),
    )
}

/// Complete-data degrees of freedom for a parameter with mean denominator
/// `n_effective`.
pub fn complete_data_df(treatment: Treatment, n_effective: f64) -> f64 {
    let df = match treatment {
        Treatment::Difference => 2.0 * n_effective - 2.0,
        _ => n_effective - 1.0,
    };
    df.max(1.0)
}

/// Pooled estimate of a parameter with the per-imputation ingredients of
/// Rubin's rules.
#[derive(Clone, Debug, PartialEq)]
pub struct PointAnalysis {
    pub estimate: StratumEstimate,
    /// Within-imputation variances aligned with `estimate.per_imputation`;
    /// empty when some imputation had fewer than two subjects in an arm cell.
    pub within: Vec<f64>,
}

impl PointAnalysis {
    pub fn rubin(&self) -> Result<RubinResult> {
        if self.within.len() != self.estimate.per_imputation.len() {
            return Err(Error::Inference(format!(
                "{}: within-imputation variance needs at least two subjects per arm in every imputation",
                self.estimate.parameter()
            )));
        }
        rubin_pool(
            &self.estimate.per_imputation,
            &self.within,
            complete_data_df(self.estimate.treatment, self.estimate.n_effective),
        )
    }
}

type CellOutcome = Result<(f64, usize, Option<f64>)>;

struct ArmCell {
    key: (StratumLabel, Subset, Arm),
    mean: Option<(f64, usize)>,
    within: Option<f64>,
}

fn evaluate_parameters(
    table: &PotentialOutcomeTable,
    m: usize,
    parameters: &[Parameter],
    with_variance: bool,
    scratch: &mut Vec<f64>,
) -> Vec<CellOutcome> {
    // Both arms of a difference are shared with the single-arm parameters.
    let mut cache: Vec<ArmCell> = Vec::with_capacity(2 * parameters.len());
    let mut arm_cell = |stratum, subset, arm| -> (Option<(f64, usize)>, Option<f64>) {
        if let Some(c) = cache.iter().find(|c| c.key == (stratum, subset, arm)) {
            return (c.mean, c.within);
        }
        let sums = if with_variance {
            cell_values(table, stratum, arm, subset, scratch)
        } else {
            cell_sums(table, stratum, arm, subset)
        };
        let mean = (sums.count > 0).then(|| (sums.sum / sums.count as f64, sums.count));
        let within = (with_variance && sums.count >= 2).then(|| sample_variance(scratch) / sums.count as f64);
        cache.push(ArmCell {
            key: (stratum, subset, arm),
            mean,
            within,
        });
        (mean, within)
    };
    parameters
        .iter()
        .map(|p| {
            let arms: &[Arm] = match p.treatment {
                Treatment::Control => &[Arm::Control],
                Treatment::Experimental => &[Arm::Experimental],
                Treatment::Difference => &[Arm::Experimental, Arm::Control],
            };
            let mut value = 0.0;
            let mut count = 0;
            let mut within = with_variance.then_some(0.0);
            for (i, &arm) in arms.iter().enumerate() {
                let (mean, w) = arm_cell(p.stratum, p.subset, arm);
                let (v, n) = mean.ok_or_else(|| Error::EmptyStratum {
                    m,
                    stratum: p.stratum,
                    subset: p.subset.to_string(),
                })?;
                if i == 0 {
                    value = v;
                    count = n;
                } else {
                    value -= v;
                }
                within = match (within, w) {
                    (Some(acc), Some(w)) => Some(acc + w),
                    _ => None,
                };
            }
            Ok((value, count, within))
        })
        .collect()
}

fn pool_outcomes(
    parameters: &[Parameter],
    per_m: Vec<Vec<CellOutcome>>,
    policy: EmptyStratumPolicy,
) -> Result<Vec<PointAnalysis>> {
    let mut out = Vec::with_capacity(parameters.len());
    for (i, p) in parameters.iter().enumerate() {
        let mut values = Vec::with_capacity(per_m.len());
        let mut counts = Vec::with_capacity(per_m.len());
        let mut within = Vec::with_capacity(per_m.len());
        let mut within_complete = true;
        let mut skipped = 0;
        for row in &per_m {
            match &row[i] {
                Ok((v, n, w)) => {
                    values.push(*v);
                    counts.push(*n as f64);
                    match w {
                        Some(w) => within.push(*w),
                        None => within_complete = false,
                    }
                }
                Err(Error::EmptyStratum { .. }) if policy == EmptyStratumPolicy::Skip => skipped += 1,
                Err(Error::EmptyStratum { m, stratum, subset }) => {
                    return Err(Error::EmptyStratum {
                        m: *m,
                        stratum: *stratum,
                        subset: subset.clone(),
                    })
                }
                Err(e) => return Err(Error::Inference(e.to_string())),
            }
        }
        if values.is_empty() {
            return Err(Error::EmptyStratum {
                m: per_m.len().saturating_sub(1),
                stratum: p.stratum,
                subset: p.subset.to_string(),
            });
        }
        if !within_complete {
            within.clear();
        }
        out.push(PointAnalysis {
            estimate: StratumEstimate {
                stratum: p.stratum,
                treatment: p.treatment,
                subset: p.subset,
                pooled: mean(&values),
                n_effective: mean(&counts),
                per_imputation: values,
                skipped,
            },
            within,
        });
    }
    Ok(out)
}

/// Imputes `imputations` times from fitted `models` and pools every
/// parameter without retaining the completed datasets.
pub fn analyze_with_models(
    models: &ImputationModels,
    dataset: &TrialDataset,
    imputations: usize,
    seed: u64,
    parameters: &[Parameter],
    policy: EmptyStratumPolicy,
    with_variance: bool,
) -> Result<Vec<PointAnalysis>> {
    if imputations == 0 {
        return Err(Error::InvalidArgument("at least one imputation is required".into()));
    }
    let per_m: Vec<Vec<CellOutcome>> = (0..imputations)
        .into_par_iter()
        .map(|m| {
            let (_, mut rng) = imputation_stream(seed, m);
            let imp = models.impute(dataset, m, &mut rng)?;
            Ok(evaluate_parameters(&imp.table, m, parameters, with_variance, &mut Vec::new()))
        })
        .collect::<Result<_>>()?;
    pool_outcomes(parameters, per_m, policy)
}

/// Fits, imputes and pools in one call.
pub fn analyze(
    dataset: &TrialDataset,
    plan: &ImputationPlan,
    imputations: usize,
    seed: u64,
    parameters: &[Parameter],
    policy: EmptyStratumPolicy,
) -> Result<Vec<PointAnalysis>> {
    let models = ImputationModels::fit(dataset, plan)?;
    analyze_with_models(&models, dataset, imputations, seed, parameters, policy, true)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOptions {
    /// Bootstrap replicates `B`.
    pub replicates: usize,
    /// Imputations per replicate.
    pub imputations: usize,
    pub seed: u64,
    pub alpha: f64,
    /// Applied to imputations within a replicate.
    pub policy: EmptyStratumPolicy,
}

impl BootstrapOptions {
    pub fn new(replicates: usize, imputations: usize, seed: u64) -> Self {
        Self {
            replicates,
            imputations,
            seed,
            alpha: 0.05,
            policy: EmptyStratumPolicy::Skip,
        }
    }
}

/// Bootstrap distribution of one parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub parameter: Parameter,
    /// Requested replicates `B`.
    pub replicates: usize,
    /// Values of the replicates that produced an estimate, in replicate order.
    pub replicate_estimates: Vec<f64>,
    pub skipped: usize,
    pub estimate: f64,
    pub se: f64,
    pub ci: (f64, f64),
    /// More than [`UNRELIABLE_SKIP_SHARE`] of the replicates were skipped.
    pub unreliable: bool,
}

impl BootstrapResult {
    /// Normal-approximation interval around `estimate` from replicate values.
    pub fn from_replicates(
        parameter: Parameter,
        replicates: usize,
        values: Vec<f64>,
        estimate: f64,
        alpha: f64,
    ) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::Inference(format!(
                "{parameter}: only {} of {replicates} bootstrap replicates produced an estimate",
                values.len()
            )));
        }
        let se = sample_variance(&values).sqrt();
        let half = normal_quantile(1.0 - alpha / 2.0) * se;
        let skipped = replicates - values.len();
        Ok(Self {
            parameter,
            replicates,
            skipped,
            estimate,
            se,
            ci: (estimate - half, estimate + half),
            unreliable: skipped as f64 > UNRELIABLE_SKIP_SHARE * replicates as f64,
            replicate_estimates: values,
        })
    }
}

/// Resamples subjects with replacement within each arm, keeping arm sizes.
pub fn resample_by_arm<R: Rng + ?Sized>(dataset: &TrialDataset, rng: &mut R) -> TrialDataset {
    let mut records: Vec<SubjectRecord> = Vec::with_capacity(dataset.len());
    for arm in Arm::BOTH {
        let pool: Vec<&SubjectRecord> = dataset.records().iter().filter(|r| r.arm == arm).collect();
        for _ in 0..pool.len() {
            let src = pool[rng.random_range(0..pool.len())];
            let mut r = src.clone();
            r.subject_id = format!("{}#{}", src.subject_id, records.len());
            records.push(r);
        }
    }
    TrialDataset::new(records, dataset.n_covariates(), dataset.n_intermediate())
        .expect("resampling preserves the dataset shape")
}

/// Replicate values per parameter (`None` when the replicate failed).
pub fn bootstrap_replicates(
    dataset: &TrialDataset,
    plan: &ImputationPlan,
    options: &BootstrapOptions,
    parameters: &[Parameter],
) -> Result<Vec<Vec<Option<f64>>>> {
    if options.replicates < 2 {
        return Err(Error::InvalidArgument("the bootstrap needs at least two replicates".into()));
    }
    if options.imputations == 0 {
        return Err(Error::InvalidArgument("at least one imputation per replicate is required".into()));
    }
    let per_replicate: Vec<Vec<Option<f64>>> = (0..options.replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream(options.seed, &[tag::RESAMPLE, b as u64]);
            let sample = resample_by_arm(dataset, &mut rng);
            let Ok(models) = ImputationModels::fit(&sample, plan) else {
                return vec![None; parameters.len()];
            };
            let seed_b = derive_seed(options.seed, &[tag::BOOTSTRAP, b as u64]);
            let mut sums = vec![0.0; parameters.len()];
            let mut counts = vec![0usize; parameters.len()];
            let mut failed = vec![false; parameters.len()];
            for m in 0..options.imputations {
                let (_, mut rng) = imputation_stream(seed_b, m);
                let Ok(imp) = models.impute(&sample, m, &mut rng) else {
                    return vec![None; parameters.len()];
                };
                for (i, p) in parameters.iter().enumerate() {
                    match cell_with_count(&imp.table, m, p.stratum, p.treatment, p.subset) {
                        Ok((v, _)) => {
                            sums[i] += v;
                            counts[i] += 1;
                        }
                        Err(_) if options.policy == EmptyStratumPolicy::Skip => {}
                        Err(_) => failed[i] = true,
                    }
                }
            }
            (0..parameters.len())
                .map(|i| (!failed[i] && counts[i] > 0).then(|| sums[i] / counts[i] as f64))
                .collect()
        })
        .collect();
    Ok((0..parameters.len())
        .map(|i| per_replicate.iter().map(|r| r[i]).collect())
        .collect())
}

/// Stratified bootstrap with re-imputation of every replicate. `estimates`
/// are the point estimates the intervals are centred on, aligned with
/// `parameters`.
pub fn bootstrap(
    dataset: &TrialDataset,
    plan: &ImputationPlan,
    options: &BootstrapOptions,
    parameters: &[Parameter],
    estimates: &[f64],
) -> Result<Vec<BootstrapResult>> {
    if estimates.len() != parameters.len() {
        return Err(Error::InvalidArgument("one point estimate per parameter is required".into()));
    }
    let reps = bootstrap_replicates(dataset, plan, options, parameters)?;
    parameters
        .iter()
        .zip(reps)
        .zip(estimates)
        .map(|((p, values), &est)| {
            BootstrapResult::from_replicates(
                *p,
                options.replicates,
                values.into_iter().flatten().collect(),
                est,
                options.alpha,
            )
        })
        .collect()
}
