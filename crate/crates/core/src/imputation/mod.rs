//! Arm-specific regression models and proper multiple imputation of the
//! potential outcomes under both treatments.
//!
//! For each arm `t` the models are fitted on arm-`t` subjects only, in visit
//! order: `Z(k) | X, Z(<k)` on subjects observed at visit `k`, `Y | X, Z` on
//! adherers, and `I(k) | X, Z(k)` on subjects still at risk before visit `k`.
//! Every imputation draws fresh model parameters and then, for every subject
//! of both arms, fills the arm-`t` frame: observed cells are copied, missing
//! own-arm `Z`/`Y` and all counterfactual cells are drawn. Counterfactual
//! adherence is drawn visit by visit and is absorbing at the first 0.

mod linear;
mod logistic;

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use linear::{aliased_columns, fit_linear, LinearImputationModel};
pub use logistic::{fit_logistic, LogisticImputationModel, RIDGE, RIDGE_ESCALATED};

use crate::error::{Error, Result};
use crate::numeric::expit;
use crate::rng::{derive_seed, stream, tag, StreamRng};
use crate::trial_data::{
    validate, Arm, CellSource, PotentialOutcomeFrame, PotentialOutcomeTable, TrialDataset,
};

/// Which predictors enter the imputation models.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PlanMode {
    /// Baseline covariates and intermediate measurements.
    Full,
    /// Baseline covariates only (principal-score comparator).
    BaselineOnly,
}

impl std::str::FromStr for PlanMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(PlanMode::Full),
            "baseline-only" | "baseline_only" => Ok(PlanMode::BaselineOnly),
            _ => Err(Error::InvalidArgument(format!("unknown plan mode `{s}`"))),
        }
    }
}

/// How logistic parameters enter each imputation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParameterDraw {
    /// Draw from the normal approximation of the posterior.
    Proper,
    /// Reuse the point estimate in every imputation.
    PlugIn,
}

/// What to do when a step's data cannot support the requested model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DegeneratePolicy {
    /// Report the fit error.
    Strict,
    /// Drop aliased predictors, then trailing predictors until the fit is
    /// identified; impute a single-class indicator as that class.
    Reduce,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Predictor {
    Intercept,
    Covariate(usize),
    Intermediate(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StepTarget {
    Intermediate(usize),
    Outcome,
    Adherence(usize),
}

impl fmt::Display for StepTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepTarget::Intermediate(k) => write!(f, "z{}", k + 1),
            StepTarget::Outcome => write!(f, "y"),
            StepTarget::Adherence(k) => write!(f, "i{}", k + 1),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub target: StepTarget,
    pub predictors: Vec<Predictor>,
}

/// Ordered regression steps, applied identically within each arm.
#[derive(Clone, Debug, PartialEq)]
pub struct ImputationPlan {
    mode: PlanMode,
    n_covariates: usize,
    n_intermediate: usize,
    steps: Vec<Step>,
    pub logistic_draw: ParameterDraw,
    pub degenerate: DegeneratePolicy,
}

impl ImputationPlan {
    pub fn new(mode: PlanMode, n_covariates: usize, n_intermediate: usize) -> Self {
        let baseline = || {
            std::iter::once(Predictor::Intercept)
                .chain((0..n_covariates).map(Predictor::Covariate))
                .collect::<Vec<_>>()
        };
        let with_z = |zs: std::ops::Range<usize>| {
            let mut p = baseline();
            if mode == PlanMode::Full {
                p.extend(zs.map(Predictor::Intermediate));
            }
            p
        };
        let mut steps = Vec::with_capacity(2 * n_intermediate + 1);
        for k in 0..n_intermediate {
            steps.push(Step {
                target: StepTarget::Intermediate(k),
                predictors: with_z(0..k),
            });
        }
        steps.push(Step {
            target: StepTarget::Outcome,
            predictors: with_z(0..n_intermediate),
        });
        for k in 0..n_intermediate {
            steps.push(Step {
                target: StepTarget::Adherence(k),
                predictors: with_z(k..k + 1),
            });
        }
        Self {
            mode,
            n_covariates,
            n_intermediate,
            steps,
            logistic_draw: ParameterDraw::Proper,
            degenerate: DegeneratePolicy::Reduce,
        }
    }

    pub fn for_dataset(mode: PlanMode, dataset: &TrialDataset) -> Self {
        Self::new(mode, dataset.n_covariates(), dataset.n_intermediate())
    }

    pub fn with_logistic_draw(mut self, draw: ParameterDraw) -> Self {
        self.logistic_draw = draw;
        self
    }

    pub fn with_degenerate_policy(mut self, policy: DegeneratePolicy) -> Self {
        self.degenerate = policy;
        self
    }

    pub fn mode(&self) -> PlanMode {
        self.mode
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    /// Verifies that every predictor is observed or imputed before it is used.
    pub fn check(&self) -> Result<()> {
        let mut seen_z = vec![false; self.n_intermediate];
        let mut seen_y = false;
        let mut seen_i = vec![false; self.n_intermediate];
        for step in &self.steps {
            for p in &step.predictors {
                let ok = match *p {
                    Predictor::Intercept => true,
                    Predictor::Covariate(c) => c < self.n_covariates,
                    Predictor::Intermediate(k) => k < self.n_intermediate && seen_z[k],
                };
                if !ok || (self.mode == PlanMode::BaselineOnly && matches!(p, Predictor::Intermediate(_))) {
                    return Err(Error::InvalidArgument(format!(
                        "step {} uses {p:?} before it is available",
                        step.target
                    )));
                }
            }
            match step.target {
                StepTarget::Intermediate(k) => seen_z[k] = true,
                StepTarget::Outcome => seen_y = true,
                StepTarget::Adherence(k) => seen_i[k] = true,
            }
        }
        if !(seen_y && seen_z.iter().all(|&s| s) && seen_i.iter().all(|&s| s)) {
            return Err(Error::InvalidArgument("plan does not cover every variable".into()));
        }
        Ok(())
    }
}

#[inline]
fn linear_predictor(predictors: &[Predictor], coef: &[f64], x: &[f64], z: &[f64]) -> f64 {
    predictors
        .iter()
        .zip(coef)
        .map(|(p, c)| {
            c * match *p {
                Predictor::Intercept => 1.0,
                Predictor::Covariate(i) => x[i],
                Predictor::Intermediate(k) => z[k],
            }
        })
        .sum()
}

#[derive(Clone, Debug)]
struct FittedLinear {
    predictors: Vec<Predictor>,
    model: LinearImputationModel,
}

#[derive(Clone, Debug)]
enum FittedBinary {
    Logistic {
        predictors: Vec<Predictor>,
        model: LogisticImputationModel,
    },
    Constant(bool),
}

#[derive(Clone, Debug)]
struct ArmModels {
    intermediate: Vec<FittedLinear>,
    outcome: FittedLinear,
    adherence: Vec<FittedBinary>,
}

/// Models of both arms fitted once per dataset; every imputation draws its
/// own parameters from them.
#[derive(Clone, Debug)]
pub struct ImputationModels {
    plan: ImputationPlan,
    arms: [ArmModels; 2],
}

struct StepData {
    rows: Vec<Vec<f64>>,
    continuous: Vec<f64>,
    binary: Vec<bool>,
}

fn predictor_row(
    predictors: &[Predictor],
    x: &[f64],
    z: &[Option<f64>],
) -> Option<Vec<f64>> {
    predictors
        .iter()
        .map(|p| match *p {
            Predictor::Intercept => Some(1.0),
            Predictor::Covariate(i) => Some(x[i]),
            Predictor::Intermediate(k) => z[k],
        })
        .collect()
}

fn step_data(dataset: &TrialDataset, arm: Arm, step: &Step) -> Result<StepData> {
    let mut data = StepData {
        rows: Vec::new(),
        continuous: Vec::new(),
        binary: Vec::new(),
    };
    for r in dataset.records().iter().filter(|r| r.arm == arm) {
        let response = match step.target {
            StepTarget::Intermediate(k) => r.z[k].map(|v| (v, false)),
            StepTarget::Outcome => r.y.map(|v| (v, false)),
            StepTarget::Adherence(k) => {
                let at_risk = r.adherence[..k].iter().all(|f| *f == Some(true));
                if at_risk {
                    r.adherence[k].map(|f| (0.0, f))
                } else {
                    None
                }
            }
        };
        let Some((value, flag)) = response else { continue };
        let row = predictor_row(&step.predictors, &r.x, &r.z).ok_or_else(|| {
            Error::InvalidDataset(format!(
                "subject {}: predictor of {} is missing",
                r.subject_id, step.target
            ))
        })?;
        data.rows.push(row);
        data.continuous.push(value);
        data.binary.push(flag);
    }
    Ok(data)
}

fn design_matrix(rows: &[Vec<f64>], columns: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), columns.len(), |i, j| rows[i][columns[j]])
}

fn fit_linear_step(
    data: &StepData,
    predictors: &[Predictor],
    policy: DegeneratePolicy,
) -> Result<FittedLinear> {
    let n = data.rows.len();
    let all: Vec<usize> = (0..predictors.len()).collect();
    let response = DVector::from_column_slice(&data.continuous);
    if policy == DegeneratePolicy::Strict {
        let model = fit_linear(&design_matrix(&data.rows, &all), &response)?;
        return Ok(FittedLinear {
            predictors: predictors.to_vec(),
            model,
        });
    }
    if n == 0 {
        return Err(Error::InsufficientData { n, q: 1 });
    }
    if n == 1 {
        // No residual information: the single value is imputed as a point mass.
        let model = LinearImputationModel::from_parts(
            DVector::from_element(1, data.continuous[0]),
            DMatrix::identity(1, 1),
            0.0,
            1,
        )?;
        return Ok(FittedLinear {
            predictors: vec![Predictor::Intercept],
            model,
        });
    }
    let aliased = aliased_columns(&design_matrix(&data.rows, &all));
    let mut columns: Vec<usize> = all.into_iter().filter(|c| !aliased.contains(c)).collect();
    while columns.len() > 1 && n <= columns.len() {
        columns.pop();
    }
    let model = fit_linear(&design_matrix(&data.rows, &columns), &response)?;
    Ok(FittedLinear {
        predictors: columns.iter().map(|&c| predictors[c]).collect(),
        model,
    })
}

fn fit_binary_step(
    data: &StepData,
    predictors: &[Predictor],
    policy: DegeneratePolicy,
) -> Result<FittedBinary> {
    let n = data.rows.len();
    let all: Vec<usize> = (0..predictors.len()).collect();
    if policy == DegeneratePolicy::Strict {
        let model = fit_logistic(&design_matrix(&data.rows, &all), &data.binary)?;
        return Ok(FittedBinary::Logistic {
            predictors: predictors.to_vec(),
            model,
        });
    }
    if n == 0 {
        return Err(Error::InsufficientData { n, q: 1 });
    }
    let ones = data.binary.iter().filter(|&&b| b).count();
    if ones == 0 || ones == n {
        return Ok(FittedBinary::Constant(ones == n));
    }
    let aliased = aliased_columns(&design_matrix(&data.rows, &all));
    let columns: Vec<usize> = all.into_iter().filter(|c| !aliased.contains(c)).collect();
    let model = fit_logistic(&design_matrix(&data.rows, &columns), &data.binary)?;
    Ok(FittedBinary::Logistic {
        predictors: columns.iter().map(|&c| predictors[c]).collect(),
        model,
    })
}

fn annotate(arm: Arm, target: StepTarget) -> impl Fn(Error) -> Error {
    move |source| Error::Step {
        arm,
        step: target.to_string(),
        source: Box::new(source),
    }
}

impl ImputationModels {
    /// Fits every step of `plan` within each arm of `dataset`.
    pub fn fit(dataset: &TrialDataset, plan: &ImputationPlan) -> Result<Self> {
        plan.check()?;
        if plan.n_covariates != dataset.n_covariates() || plan.n_intermediate != dataset.n_intermediate() {
            return Err(Error::InvalidArgument("plan shape differs from the dataset".into()));
        }
        let violations = validate(dataset);
        if let Some(first) = violations.first() {
            return Err(Error::InvalidDataset(format!(
                "{first} ({} violation(s) in total)",
                violations.len()
            )));
        }
        for arm in Arm::BOTH {
            if dataset.arm_size(arm) == 0 {
                return Err(Error::InvalidDataset(format!("arm {arm} has no subjects")));
            }
        }
        let fit_arm = |arm: Arm| -> Result<ArmModels> {
            let mut intermediate = Vec::with_capacity(plan.n_intermediate);
            let mut outcome = None;
            let mut adherence = Vec::with_capacity(plan.n_intermediate);
            for step in &plan.steps {
                let on_err = annotate(arm, step.target);
                let data = step_data(dataset, arm, step).map_err(&on_err)?;
                match step.target {
                    StepTarget::Intermediate(_) => intermediate.push(
                        fit_linear_step(&data, &step.predictors, plan.degenerate).map_err(&on_err)?,
                    ),
                    StepTarget::Outcome => {
                        outcome = Some(
                            fit_linear_step(&data, &step.predictors, plan.degenerate)
                                .map_err(&on_err)?,
                        )
                    }
                    StepTarget::Adherence(_) => adherence.push(
                        fit_binary_step(&data, &step.predictors, plan.degenerate).map_err(&on_err)?,
                    ),
                }
            }
            Ok(ArmModels {
                intermediate,
                outcome: outcome.expect("plan.check guarantees an outcome step"),
                adherence,
            })
        };
        Ok(Self {
            plan: plan.clone(),
            arms: [fit_arm(Arm::Control)?, fit_arm(Arm::Experimental)?],
        })
    }

    pub fn plan(&self) -> &ImputationPlan {
        &self.plan
    }

    /// Draws model parameters and completes one copy of `dataset`.
    pub fn impute<R: Rng + ?Sized>(
        &self,
        dataset: &TrialDataset,
        m: usize,
        rng: &mut R,
    ) -> Result<ImputedDataset> {
        let drawn = [
            self.draw_arm(Arm::Control, rng)?,
            self.draw_arm(Arm::Experimental, rng)?,
        ];
        let periods = dataset.n_intermediate();
        let mut table = PotentialOutcomeTable::with_arms(dataset.arms(), periods);
        for (j, record) in dataset.records().iter().enumerate() {
            for t in Arm::BOTH {
                let params = &drawn[t.index()];
                let cell = PotentialOutcomeTable::cell(j, t);
                let span = cell * periods..(cell + 1) * periods;
                let own = record.arm == t;

                let z = &mut table.z[span.clone()];
                let z_source = &mut table.z_source[span.clone()];
                for k in 0..periods {
                    match record.z[k].filter(|_| own) {
                        Some(v) => {
                            z[k] = v;
                            z_source[k] = CellSource::Observed;
                        }
                        None => {
                            let (pred, coef, sigma) = &params.intermediate[k];
                            let noise: f64 = rng.sample(StandardNormal);
                            z[k] = linear_predictor(pred, coef, &record.x, z) + sigma * noise;
                            z_source[k] = CellSource::Imputed;
                        }
                    }
                }
                let z = &table.z[span.clone()];

                match record.y.filter(|_| own) {
                    Some(v) => {
                        table.y[cell] = v;
                        table.y_source[cell] = CellSource::Observed;
                    }
                    None => {
                        let (pred, coef, sigma) = &params.outcome;
                        let noise: f64 = rng.sample(StandardNormal);
                        table.y[cell] = linear_predictor(pred, coef, &record.x, z) + sigma * noise;
                        table.y_source[cell] = CellSource::Imputed;
                    }
                }

                let mut at_risk = true;
                for k in 0..periods {
                    let idx = span.start + k;
                    let flag = if own {
                        table.flag_source[idx] = CellSource::Observed;
                        record.adherence[k].unwrap_or(false) && at_risk
                    } else {
                        table.flag_source[idx] = CellSource::Imputed;
                        at_risk
                            && match &params.adherence[k] {
                                DrawnBinary::Constant(c) => *c,
                                DrawnBinary::Logit(pred, coef) => {
                                    let p = expit(linear_predictor(pred, coef, &record.x, z));
                                    rng.random::<f64>() < p
                                }
                            }
                    };
                    table.flags[idx] = flag;
                    at_risk = flag;
                }
                table.adherent[cell] = at_risk;
            }
        }
        Ok(ImputedDataset {
            m,
            mode: self.plan.mode,
            stream_id: 0,
            table,
        })
    }

    fn draw_arm<R: Rng + ?Sized>(&self, arm: Arm, rng: &mut R) -> Result<DrawnArm> {
        let models = &self.arms[arm.index()];
        let linear = |f: &FittedLinear, rng: &mut R| {
            let (coef, sigma) = f.model.draw(rng);
            (f.predictors.clone(), coef.as_slice().to_vec(), sigma)
        };
        let intermediate = models
            .intermediate
            .iter()
            .map(|f| linear(f, rng))
            .collect();
        let outcome = linear(&models.outcome, rng);
        let mut adherence = Vec::with_capacity(models.adherence.len());
        for (k, f) in models.adherence.iter().enumerate() {
            adherence.push(match f {
                FittedBinary::Constant(c) => DrawnBinary::Constant(*c),
                FittedBinary::Logistic { predictors, model } => {
                    let coef = match self.plan.logistic_draw {
                        ParameterDraw::Proper => model.draw(rng),
                        ParameterDraw::PlugIn if model.converged() => Ok(model.coef_hat().clone()),
                        ParameterDraw::PlugIn => Err(Error::NotConverged),
                    }
                    .map_err(annotate(arm, StepTarget::Adherence(k)))?;
                    DrawnBinary::Logit(predictors.clone(), coef.as_slice().to_vec())
                }
            });
        }
        Ok(DrawnArm {
            intermediate,
            outcome,
            adherence,
        })
    }
}

type DrawnLinear = (Vec<Predictor>, Vec<f64>, f64);

enum DrawnBinary {
    Logit(Vec<Predictor>, Vec<f64>),
    Constant(bool),
}

struct DrawnArm {
    intermediate: Vec<DrawnLinear>,
    outcome: DrawnLinear,
    adherence: Vec<DrawnBinary>,
}

/// One completed dataset: potential outcomes under both treatments for
/// every subject.
#[derive(Clone, Debug, PartialEq)]
pub struct ImputedDataset {
    pub m: usize,
    pub mode: PlanMode,
    pub stream_id: u64,
    pub table: PotentialOutcomeTable,
}

impl ImputedDataset {
    pub fn frame(&self, j: usize) -> PotentialOutcomeFrame<'_> {
        self.table.frame(j)
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

/// Fits the models and produces imputation `m` from `rng`.
pub fn impute_once<R: Rng + ?Sized>(
    dataset: &TrialDataset,
    plan: &ImputationPlan,
    m: usize,
    rng: &mut R,
) -> Result<ImputedDataset> {
    ImputationModels::fit(dataset, plan)?.impute(dataset, m, rng)
}

/// Substream used by imputation `m` below `seed`.
pub fn imputation_stream(seed: u64, m: usize) -> (u64, StreamRng) {
    let path = [tag::IMPUTATION, m as u64];
    (derive_seed(seed, &path), stream(seed, &path))
}

/// `count` independent imputations; imputation `m` draws from its own
/// substream of `seed`, so the output does not depend on scheduling.
pub fn impute_many(
    dataset: &TrialDataset,
    plan: &ImputationPlan,
    count: usize,
    seed: u64,
) -> Result<Vec<ImputedDataset>> {
    if count == 0 {
        return Err(Error::InvalidArgument("at least one imputation is required".into()));
    }
    let models = ImputationModels::fit(dataset, plan)?;
    models.impute_many(dataset, count, seed)
}

impl ImputationModels {
    pub fn impute_many(
        &self,
        dataset: &TrialDataset,
        count: usize,
        seed: u64,
    ) -> Result<Vec<ImputedDataset>> {
        (0..count)
            .into_par_iter()
            .map(|m| {
                let (id, mut rng) = imputation_stream(seed, m);
                let mut imp = self.impute(dataset, m, &mut rng)?;
                imp.stream_id = id;
                Ok(imp)
            })
            .collect()
    }
}

/// Writes imputations in long format:
/// `subject_id,m,t,z1..z{K-1},i1..i{K-1},a,y,provenance`.
///
/// `provenance` has one character per cell in column order (`z`, `i`, `y`):
/// `o` observed, `i` imputed.
pub fn write_long_csv<W: std::io::Write>(
    dataset: &TrialDataset,
    imputations: &[ImputedDataset],
    writer: W,
) -> Result<()> {
    let periods = dataset.n_intermediate();
    let mut w = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| Error::InvalidArgument(e.to_string());
    let mut header = vec!["subject_id".to_string(), "m".into(), "t".into()];
    header.extend((1..=periods).map(|k| format!("z{k}")));
    header.extend((1..=periods).map(|k| format!("i{k}")));
    header.extend(["a".to_string(), "y".into(), "provenance".into()]);
    w.write_record(&header).map_err(err)?;
    for imp in imputations {
        for (j, r) in dataset.records().iter().enumerate() {
            let f = imp.frame(j);
            for t in Arm::BOTH {
                let mut row = vec![r.subject_id.clone(), imp.m.to_string(), t.to_string()];
                row.extend(f.z(t).iter().map(|v| v.to_string()));
                row.extend(f.flags(t).iter().map(|&b| u8::from(b).to_string()));
                row.push(u8::from(f.adherent(t)).to_string());
                row.push(f.y(t).to_string());
                let prov: String = f
                    .z_source(t)
                    .iter()
                    .chain(f.flag_source(t))
                    .chain(std::iter::once(&f.y_source(t)))
                    .map(|s| s.code())
                    .collect();
                row.push(prov);
                w.write_record(&row).map_err(err)?;
            }
        }
    }
    w.flush().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trial_data::SubjectRecord;

    fn subject(id: &str, arm: Arm, x: f64, z: [Option<f64>; 2], i: [Option<bool>; 2], y: Option<f64>) -> SubjectRecord {
        SubjectRecord {
            subject_id: id.into(),
            arm,
            x: vec![x],
            z: z.to_vec(),
            adherence: i.to_vec(),
            y,
        }
    }

    #[test]
    fn full_plan_orders_steps_by_visit() {
        let plan = ImputationPlan::new(PlanMode::Full, 1, 3);
        plan.check().unwrap();
        let targets: Vec<String> = plan.steps().iter().map(|s| s.target.to_string()).collect();
        assert_eq!(targets, ["z1", "z2", "z3", "y", "i1", "i2", "i3"]);
        assert_eq!(
            plan.steps()[2].predictors,
            vec![
                Predictor::Intercept,
                Predictor::Covariate(0),
                Predictor::Intermediate(0),
                Predictor::Intermediate(1)
            ]
        );
        assert_eq!(
            plan.steps()[5].predictors,
            vec![Predictor::Intercept, Predictor::Covariate(0), Predictor::Intermediate(1)]
        );
    }

    #[test]
    fn baseline_plan_has_no_intermediate_predictors() {
        let plan = ImputationPlan::new(PlanMode::BaselineOnly, 2, 3);
        plan.check().unwrap();
        assert!(plan
            .steps()
            .iter()
            .all(|s| s.predictors == vec![Predictor::Intercept, Predictor::Covariate(0), Predictor::Covariate(1)]));
    }

    #[test]
    fn constant_arm_imputes_the_constant() {
        let t = Some(true);
        let mut records = Vec::new();
        for j in 0..5 {
            records.push(subject(&format!("c{j}"), Arm::Control, 8.0, [Some(7.5), Some(7.0)], [t, t], Some(6.5)));
            let x = 7.0 + j as f64 * 0.4;
            let z1 = 7.0 + 0.1 * j as f64;
            let (z2, i2, y) = if j % 2 == 0 {
                (Some(6.0 + 0.2 * x), Some(j != 4), if j != 4 { Some(5.0 + 0.3 * z1) } else { None })
            } else {
                (None, None, None)
            };
            let i1 = Some(j % 2 == 0);
            records.push(subject(&format!("e{j}"), Arm::Experimental, x, [Some(z1), z2], [i1, i2], y));
        }
        let ds = TrialDataset::new(records, 1, 2).unwrap();
        let plan = ImputationPlan::for_dataset(PlanMode::Full, &ds);
        let imps = impute_many(&ds, &plan, 4, 9).unwrap();
        for imp in &imps {
            for j in 0..ds.len() {
                let f = imp.frame(j);
                assert!((f.y(Arm::Control) - 6.5).abs() < 1e-12);
                assert!(f.adherent(Arm::Control));
                let z = f.z(Arm::Control);
                assert!((z[0] - 7.5).abs() < 1e-12 && (z[1] - 7.0).abs() < 1e-12, "{z:?}");
            }
        }
    }

    #[test]
    fn strict_policy_reports_step() {
        let t = Some(true);
        let records = vec![
            subject("a", Arm::Control, 1.0, [Some(1.0), Some(1.0)], [t, t], Some(1.0)),
            subject("b", Arm::Experimental, 2.0, [Some(1.0), Some(1.0)], [t, t], Some(1.0)),
        ];
        let ds = TrialDataset::new(records, 1, 2).unwrap();
        let plan = ImputationPlan::for_dataset(PlanMode::Full, &ds)
            .with_degenerate_policy(DegeneratePolicy::Strict);
        match ImputationModels::fit(&ds, &plan) {
            Err(Error::Step { arm, step, .. }) => {
                assert_eq!(arm, Arm::Control);
                assert_eq!(step, "z1");
            }
            other => panic!("expected a step error, got {other:?}"),
        }
    }

    #[test]
    fn invalid_dataset_is_rejected() {
        let records = vec![
            subject("a", Arm::Control, 1.0, [Some(1.0), Some(1.0)], [Some(false), Some(true)], None),
            subject("b", Arm::Experimental, 2.0, [Some(1.0), Some(1.0)], [Some(true); 2], Some(1.0)),
        ];
        let ds = TrialDataset::new(records, 1, 2).unwrap();
        let plan = ImputationPlan::for_dataset(PlanMode::Full, &ds);
        assert!(matches!(ImputationModels::fit(&ds, &plan), Err(Error::InvalidDataset(_))));
    }
}
