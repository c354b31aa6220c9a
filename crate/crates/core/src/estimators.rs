//! Stratum means evaluated on completed datasets and pooled over imputations.
//!
//! Within one imputation every cell is a weighted mean of `Y(t)` with 0/1
//! weights given by stratum membership:
//!
//! | stratum | weight of subject `j` |
//! |---------|-----------------------|
//! | `S*+`   | `A_j(1)`              |
//! | `S++`   | `A_j(0) A_j(1)`       |
//!
//! Membership and outcomes come from the observed data under the randomized
//! arm and from the imputations otherwise. Numerator and denominator are
//! accumulated separately over each randomized arm and then added, so the
//! `E0`, `E1` and `E0 ∪ E1` cells agree term by term with the per-arm sums.
//! `S+*` is evaluated as `S*+` after relabeling the arms.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imputation::{ImputationPlan, ImputedDataset, PlanMode};
use crate::numeric::mean;
use crate::trial_data::{Arm, PotentialOutcomeTable, StratumLabel, TrialDataset};

/// Treatment whose mean is estimated, or the experimental-minus-control
/// difference.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Treatment {
    Control,
    Experimental,
    Difference,
}

impl Treatment {
    pub fn swapped(self) -> Treatment {
        match self {
            Treatment::Control => Treatment::Experimental,
            Treatment::Experimental => Treatment::Control,
            Treatment::Difference => Treatment::Difference,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Treatment::Control => "0",
            Treatment::Experimental => "1",
            Treatment::Difference => "d",
        }
    }
}

impl From<Arm> for Treatment {
    fn from(a: Arm) -> Self {
        match a {
            Arm::Control => Treatment::Control,
            Arm::Experimental => Treatment::Experimental,
        }
    }
}

impl fmt::Display for Treatment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Randomized subjects entering a cell: `E0`, `E1` or both.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Subset {
    E0,
    E1,
    All,
}

impl Subset {
    pub fn swapped(self) -> Subset {
        match self {
            Subset::E0 => Subset::E1,
            Subset::E1 => Subset::E0,
            Subset::All => Subset::All,
        }
    }

    pub fn includes(self, arm: Arm) -> bool {
        match self {
            Subset::E0 => arm == Arm::Control,
            Subset::E1 => arm == Arm::Experimental,
            Subset::All => true,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Subset::E0 => "e0",
            Subset::E1 => "e1",
            Subset::All => "e0+e1",
        }
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Subset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "e0" => Ok(Subset::E0),
            "e1" => Ok(Subset::E1),
            "all" | "e0+e1" | "e0ue1" => Ok(Subset::All),
            _ => Err(Error::InvalidArgument(format!("unknown subset `{s}`"))),
        }
    }
}

/// One estimand: stratum, treatment component and subject subset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Parameter {
    pub stratum: StratumLabel,
    pub treatment: Treatment,
    pub subset: Subset,
}

impl Parameter {
    pub fn new(stratum: StratumLabel, treatment: Treatment, subset: Subset) -> Self {
        Self {
            stratum,
            treatment,
            subset,
        }
    }

    /// The six parameters of the simulation studies, all on `E0 ∪ E1`.
    pub fn study_set() -> [Parameter; 6] {
        use StratumLabel::*;
        use Treatment::*;
        [
            Parameter::new(SStarPlus, Control, Subset::All),
            Parameter::new(SStarPlus, Experimental, Subset::All),
            Parameter::new(SStarPlus, Difference, Subset::All),
            Parameter::new(SPlusPlus, Control, Subset::All),
            Parameter::new(SPlusPlus, Experimental, Subset::All),
            Parameter::new(SPlusPlus, Difference, Subset::All),
        ]
    }

    /// Short name such as `mu_d_++`.
    pub fn name(&self) -> String {
        let s = match self.stratum {
            StratumLabel::SStarPlus => "*+",
            StratumLabel::SPlusStar => "+*",
            StratumLabel::SPlusPlus => "++",
        };
        let base = format!("mu_{}_{}", self.treatment, s);
        if self.subset == Subset::All {
            base
        } else {
            format!("{base}[{}]", self.subset)
        }
    }
}

impl fmt::Display for Parameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// What to do with an imputation whose stratum cell is empty.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EmptyStratumPolicy {
    Error,
    /// Pool over the remaining imputations and count the skips.
    Skip,
}

/// Weighted-mean cell of a single arm: the included outcomes and their count.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub(crate) struct CellSums {
    pub sum: f64,
    pub count: usize,
}

/// Accumulates the `S*+` cell (or `S+*` when `flip`) and optionally the
/// included outcomes. With `flip` every arm index is exchanged.
fn weighted_cell(
    table: &PotentialOutcomeTable,
    stratum: StratumLabel,
    outcome_arm: Arm,
    subset: Subset,
    mut included: Option<&mut Vec<f64>>,
) -> CellSums {
    let (flip, both) = match stratum {
        StratumLabel::SStarPlus => (false, false),
        StratumLabel::SPlusStar => (true, false),
        StratumLabel::SPlusPlus => (false, true),
    };
    let relabel = |a: Arm| if flip { a.other() } else { a };
    // Work in relabeled coordinates: the stratum is always `A(1) = 1`.
    let outcome_arm = relabel(outcome_arm);
    let subset = if flip { subset.swapped() } else { subset };
    let mut per_arm = [CellSums::default(); 2];
    let mut per_arm_values: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for j in 0..table.len() {
        let arm = relabel(table.arm(j));
        if !subset.includes(arm) {
            continue;
        }
        let in_stratum = table.adherent(j, relabel(Arm::Experimental))
            && (!both || table.adherent(j, relabel(Arm::Control)));
        if in_stratum {
            let y = table.y(j, relabel(outcome_arm));
            let acc = &mut per_arm[arm.index()];
            acc.sum += y;
            acc.count += 1;
            if included.is_some() {
                per_arm_values[arm.index()].push(y);
            }
        }
    }
    if let Some(out) = included.as_deref_mut() {
        out.clear();
        out.extend(per_arm_values.iter().flatten());
    }
    CellSums {
        sum: per_arm[0].sum + per_arm[1].sum,
        count: per_arm[0].count + per_arm[1].count,
    }
}

pub(crate) fn cell_sums(
    table: &PotentialOutcomeTable,
    stratum: StratumLabel,
    arm: Arm,
    subset: Subset,
) -> CellSums {
    weighted_cell(table, stratum, arm, subset, None)
}

pub(crate) fn cell_values(
    table: &PotentialOutcomeTable,
    stratum: StratumLabel,
    arm: Arm,
    subset: Subset,
    out: &mut Vec<f64>,
) -> CellSums {
    weighted_cell(table, stratum, arm, subset, Some(out))
}

/// Value of one cell, with its denominator, on a single completed table.
pub fn cell_with_count(
    table: &PotentialOutcomeTable,
    m: usize,
    stratum: StratumLabel,
    treatment: Treatment,
    subset: Subset,
) -> Result<(f64, usize)> {
    let mean_of = |arm: Arm| {
        let s = cell_sums(table, stratum, arm, subset);
        if s.count == 0 {
            Err(Error::EmptyStratum {
                m,
                stratum,
                subset: subset.to_string(),
            })
        } else {
            Ok((s.sum / s.count as f64, s.count))
        }
    };
    match treatment {
        Treatment::Control => mean_of(Arm::Control),
        Treatment::Experimental => mean_of(Arm::Experimental),
        Treatment::Difference => {
            let (t1, n) = mean_of(Arm::Experimental)?;
            let (t0, _) = mean_of(Arm::Control)?;
            Ok((t1 - t0, n))
        }
    }
}

/// Evaluates one cell of the estimator table on imputation `imputed`.
pub fn estimate_cell(
    imputed: &ImputedDataset,
    stratum: StratumLabel,
    treatment: Treatment,
    subset: Subset,
) -> Result<f64> {
    cell_with_count(&imputed.table, imputed.m, stratum, treatment, subset).map(|(v, _)| v)
}

/// Pooled estimate of one parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StratumEstimate {
    pub stratum: StratumLabel,
    pub treatment: Treatment,
    pub subset: Subset,
    /// Cell value per imputation that entered the pool.
    pub per_imputation: Vec<f64>,
    pub pooled: f64,
    /// Mean denominator over the pooled imputations.
    pub n_effective: f64,
    /// Imputations dropped for an empty stratum.
    pub skipped: usize,
}

impl StratumEstimate {
    pub fn parameter(&self) -> Parameter {
        Parameter::new(self.stratum, self.treatment, self.subset)
    }

    pub fn imputations(&self) -> usize {
        self.per_imputation.len()
    }
}

/// Control, experimental and difference estimates for one stratum and subset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateTriple {
    pub control: StratumEstimate,
    pub experimental: StratumEstimate,
    pub difference: StratumEstimate,
}

impl EstimateTriple {
    pub fn get(&self, t: Treatment) -> &StratumEstimate {
        match t {
            Treatment::Control => &self.control,
            Treatment::Experimental => &self.experimental,
            Treatment::Difference => &self.difference,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &StratumEstimate> {
        [&self.control, &self.experimental, &self.difference].into_iter()
    }
}

/// Pools one parameter over imputations.
pub fn pool_parameter(
    imputations: &[ImputedDataset],
    parameter: Parameter,
    policy: EmptyStratumPolicy,
) -> Result<StratumEstimate> {
    if imputations.is_empty() {
        return Err(Error::InvalidArgument("at least one imputation is required".into()));
    }
    let mut values = Vec::with_capacity(imputations.len());
    let mut counts = Vec::with_capacity(imputations.len());
    let mut skipped = 0;
    for imp in imputations {
        match cell_with_count(&imp.table, imp.m, parameter.stratum, parameter.treatment, parameter.subset) {
            Ok((v, n)) => {
                values.push(v);
                counts.push(n as f64);
            }
            Err(e @ Error::EmptyStratum { .. }) => match policy {
                EmptyStratumPolicy::Error => return Err(e),
                EmptyStratumPolicy::Skip => skipped += 1,
            },
            Err(e) => return Err(e),
        }
    }
    if values.is_empty() {
        return Err(Error::EmptyStratum {
            m: imputations.len() - 1,
            stratum: parameter.stratum,
            subset: parameter.subset.to_string(),
        });
    }
    Ok(StratumEstimate {
        stratum: parameter.stratum,
        treatment: parameter.treatment,
        subset: parameter.subset,
        pooled: mean(&values),
        n_effective: mean(&counts),
        per_imputation: values,
        skipped,
    })
}

/// Pooled control, experimental and difference estimates for `stratum`.
pub fn estimate(
    imputations: &[ImputedDataset],
    stratum: StratumLabel,
    subset: Subset,
    policy: EmptyStratumPolicy,
) -> Result<EstimateTriple> {
    let get = |t| pool_parameter(imputations, Parameter::new(stratum, t, subset), policy);
    Ok(EstimateTriple {
        control: get(Treatment::Control)?,
        experimental: get(Treatment::Experimental)?,
        difference: get(Treatment::Difference)?,
    })
}

/// The same pipeline with imputation models restricted to baseline
/// covariates (principal-score comparator).
pub fn estimate_principal_score_comparator(
    dataset: &TrialDataset,
    imputations: usize,
    seed: u64,
    stratum: StratumLabel,
    subset: Subset,
) -> Result<EstimateTriple> {
    let plan = ImputationPlan::for_dataset(PlanMode::BaselineOnly, dataset);
    let imps = crate::imputation::impute_many(dataset, &plan, imputations, seed)?;
    estimate(&imps, stratum, subset, EmptyStratumPolicy::Error)
}

/// Evaluates every parameter on every imputation in parallel; rows follow
/// `parameters`, columns follow imputation order.
pub fn cell_matrix(
    imputations: &[ImputedDataset],
    parameters: &[Parameter],
) -> Vec<Vec<Result<(f64, usize)>>> {
    parameters
        .par_iter()
        .map(|p| {
            imputations
                .iter()
                .map(|imp| cell_with_count(&imp.table, imp.m, p.stratum, p.treatment, p.subset))
                .collect()
        })
        .collect()
}
