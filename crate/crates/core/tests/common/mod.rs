#![allow(dead_code)]

use adace_core::{
    adherence, Arm, CellSource, ImputedDataset, StratumLabel, SubjectRecord, Subset, Treatment, TrialDataset,
};
use proptest::prelude::*;

/// One generated subject: arm, covariate, first non-adherent period
/// (`periods` means completer), intermediates, outcome and whether
/// post-dropout indicators are written as explicit zeros.
pub type SubjectSpec = (bool, f64, usize, Vec<f64>, f64, bool);

pub fn subject_spec(periods: usize) -> impl Strategy<Value = SubjectSpec> {
    (
        any::<bool>(),
        -3.0..3.0f64,
        // Mostly completers so that small fixtures stay estimable.
        prop_oneof![2 => Just(periods), 1 => 0..periods],
        prop::collection::vec(-2.0..2.0f64, periods),
        -5.0..5.0f64,
        any::<bool>(),
    )
}

pub fn record_from_spec(id: usize, spec: &SubjectSpec, periods: usize) -> SubjectRecord {
    let (arm, x, dropout, z, y, explicit) = spec;
    let mut zs = Vec::with_capacity(periods);
    let mut flags = Vec::with_capacity(periods);
    for k in 0..periods {
        // Visit k is observed when every earlier indicator was 1.
        zs.push((k <= *dropout).then_some(z[k]));
        flags.push(if k < *dropout {
            Some(true)
        } else if k == *dropout || *explicit {
            Some(false)
        } else {
            None
        });
    }
    SubjectRecord {
        subject_id: format!("s{id}"),
        arm: if *arm { Arm::Experimental } else { Arm::Control },
        x: vec![*x],
        z: zs,
        adherence: flags,
        y: (*dropout == periods).then_some(*y),
    }
}

/// Builds a dataset; the first two subjects are forced into different arms.
pub fn dataset_from_specs(specs: &[SubjectSpec], periods: usize) -> TrialDataset {
    let mut records: Vec<SubjectRecord> = specs
        .iter()
        .enumerate()
        .map(|(i, s)| record_from_spec(i, s, periods))
        .collect();
    records[0].arm = Arm::Control;
    records[1].arm = Arm::Experimental;
    TrialDataset::new(records, 1, periods).unwrap()
}

pub fn dataset_strategy(n: usize, periods: usize) -> impl Strategy<Value = TrialDataset> {
    prop::collection::vec(subject_spec(periods), n).prop_map(move |s| dataset_from_specs(&s, periods))
}

pub fn completer(id: &str, arm: Arm, x: f64, z: &[f64], y: f64) -> SubjectRecord {
    SubjectRecord {
        subject_id: id.into(),
        arm,
        x: vec![x],
        z: z.iter().map(|v| Some(*v)).collect(),
        adherence: vec![Some(true); z.len()],
        y: Some(y),
    }
}

/// Numerator and denominator of one arm's contribution, written out cell by
/// cell for the `A(1) = 1` and `A(0) = A(1) = 1` strata.
pub fn arm_terms(
    dataset: &TrialDataset,
    imp: &ImputedDataset,
    both: bool,
    t: Arm,
    randomized: Arm,
) -> (f64, f64) {
    let mut num = 0.0;
    let mut den = 0.0;
    for (j, r) in dataset.records().iter().enumerate() {
        if r.arm != randomized {
            continue;
        }
        let f = imp.frame(j);
        let a = if adherence(r).unwrap() { 1.0 } else { 0.0 };
        let y_obs = r.y.unwrap_or(0.0);
        let a_other = if f.adherent(randomized.other()) { 1.0 } else { 0.0 };
        let (w, y) = match (both, randomized, t) {
            // A(1) = 1 stratum.
            (false, Arm::Control, Arm::Control) => (a_other, a * y_obs + (1.0 - a) * f.y(Arm::Control)),
            (false, Arm::Experimental, Arm::Control) => (a, f.y(Arm::Control)),
            (false, Arm::Control, Arm::Experimental) => (a_other, f.y(Arm::Experimental)),
            (false, Arm::Experimental, Arm::Experimental) => (a, y_obs),
            // Both-adherent stratum.
            (true, Arm::Control, Arm::Control) => (a * a_other, y_obs),
            (true, Arm::Experimental, Arm::Control) => (a * a_other, f.y(Arm::Control)),
            (true, Arm::Control, Arm::Experimental) => (a * a_other, f.y(Arm::Experimental)),
            (true, Arm::Experimental, Arm::Experimental) => (a * a_other, y_obs),
        };
        num += w * y;
        den += w;
    }
    (num, den)
}

pub fn direct_cell(dataset: &TrialDataset, imp: &ImputedDataset, both: bool, t: Arm, subset: Subset) -> Option<f64> {
    let (n0, d0) = arm_terms(dataset, imp, both, t, Arm::Control);
    let (n1, d1) = arm_terms(dataset, imp, both, t, Arm::Experimental);
    let (num, den) = match subset {
        Subset::E0 => (n0, d0),
        Subset::E1 => (n1, d1),
        Subset::All => (n0 + n1, d0 + d1),
    };
    (den > 0.0).then(|| num / den)
}

/// The `A(0) = 1` stratum is the `A(1) = 1` stratum of the relabeled trial.
pub fn direct_value(
    dataset: &TrialDataset,
    imp: &ImputedDataset,
    stratum: StratumLabel,
    t: Arm,
    subset: Subset,
) -> Option<f64> {
    match stratum {
        StratumLabel::SStarPlus => direct_cell(dataset, imp, false, t, subset),
        StratumLabel::SPlusPlus => direct_cell(dataset, imp, true, t, subset),
        StratumLabel::SPlusStar => {
            let swapped = ImputedDataset {
                table: imp.table.swap_arms(),
                ..imp.clone()
            };
            direct_cell(&dataset.swap_arms(), &swapped, false, t.other(), subset.swapped())
        }
    }
}

pub fn direct_pooled(
    dataset: &TrialDataset,
    imps: &[ImputedDataset],
    stratum: StratumLabel,
    treatment: Treatment,
    subset: Subset,
) -> Option<f64> {
    let mut total = 0.0;
    for imp in imps {
        let v = |t| direct_value(dataset, imp, stratum, t, subset);
        total += match treatment {
            Treatment::Control => v(Arm::Control)?,
            Treatment::Experimental => v(Arm::Experimental)?,
            Treatment::Difference => v(Arm::Experimental)? - v(Arm::Control)?,
        };
    }
    Some(total / imps.len() as f64)
}

pub fn check_frames(dataset: &TrialDataset, imp: &ImputedDataset) -> Result<(), TestCaseError> {
    prop_assert_eq!(imp.len(), dataset.len());
    for (j, r) in dataset.records().iter().enumerate() {
        let f = imp.frame(j);
        prop_assert_eq!(f.arm(), r.arm);
        for t in Arm::BOTH {
            let own = t == r.arm;
            let flags = f.flags(t);
            // Complete and finite.
            prop_assert!(f.z(t).iter().all(|v| v.is_finite()));
            prop_assert!(f.y(t).is_finite());
            // Monotone indicators and A(t) as their product.
            for k in 1..flags.len() {
                prop_assert!(flags[k - 1] || !flags[k]);
            }
            prop_assert_eq!(f.adherent(t), flags.iter().all(|&b| b));
            if !own {
                prop_assert!(f.z_source(t).iter().all(|&s| s == CellSource::Imputed));
                prop_assert!(f.flag_source(t).iter().all(|&s| s == CellSource::Imputed));
                prop_assert_eq!(f.y_source(t), CellSource::Imputed);
                continue;
            }
            for (k, z) in r.z.iter().enumerate() {
                match z {
                    Some(v) => {
                        prop_assert_eq!(f.z(t)[k].to_bits(), v.to_bits());
                        prop_assert_eq!(f.z_source(t)[k], CellSource::Observed);
                    }
                    None => prop_assert_eq!(f.z_source(t)[k], CellSource::Imputed),
                }
            }
            for (k, flag) in r.adherence.iter().enumerate() {
                if let Some(b) = flag {
                    prop_assert_eq!(flags[k], *b);
                }
            }
            match r.y {
                Some(y) => {
                    prop_assert_eq!(f.y(t).to_bits(), y.to_bits());
                    prop_assert_eq!(f.y_source(t), CellSource::Observed);
                }
                None => prop_assert_eq!(f.y_source(t), CellSource::Imputed),
            }
            prop_assert_eq!(f.adherent(t), r.y.is_some());
        }
    }
    Ok(())
}

/// Solves `a x = b` by Gauss-Jordan elimination with partial pivoting,
/// followed by two rounds of iterative refinement.
pub fn gauss_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let solve = |rhs: &[f64]| -> Vec<f64> {
        let mut m: Vec<Vec<f64>> = a.iter().zip(rhs).map(|(row, &r)| {
            let mut row = row.clone();
            row.push(r);
            row
        }).collect();
        for col in 0..n {
            let pivot = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs())).unwrap();
            m.swap(col, pivot);
            for i in 0..n {
                if i != col {
                    let f = m[i][col] / m[col][col];
                    for c in col..=n {
                        m[i][c] -= f * m[col][c];
                    }
                }
            }
        }
        (0..n).map(|i| m[i][n] / m[i][i]).collect()
    };
    let mut x = solve(b);
    for _ in 0..2 {
        let resid: Vec<f64> = (0..n)
            .map(|i| b[i] - a[i].iter().zip(&x).map(|(p, q)| p * q).sum::<f64>())
            .collect();
        let dx = solve(&resid);
        for (xi, d) in x.iter_mut().zip(dx) {
            *xi += d;
        }
    }
    x
}
