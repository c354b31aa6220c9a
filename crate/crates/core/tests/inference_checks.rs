mod common;

use adace_core::inference::{bootstrap_replicates, complete_data_df};
use adace_core::rng::stream;
use adace_core::{
    analyze, bootstrap, generate_trial, impute_many, rubin_pool, within_variance, Arm, BootstrapOptions,
    BootstrapResult, EmptyStratumPolicy, ImputationPlan, ImputedDataset, Parameter, PlanMode, SettingConfig,
    StratumLabel, SubjectRecord, Subset, Treatment, TrialDataset,
};
use common::completer;
use rand::Rng;

#[test]
fn rubin_pooling_hand_values() {
    let r = rubin_pool(&[1.0, 3.0], &[1.0, 1.0], f64::INFINITY).unwrap();
    assert_eq!(r.qbar, 2.0);
    assert_eq!(r.w, 1.0);
    assert_eq!(r.b, 2.0);
    assert_eq!(r.total_var, 4.0);
    assert_eq!(r.se(), 2.0);

    let same = rubin_pool(&[0.5; 4], &[0.25, 0.5, 0.75, 1.0], 40.0).unwrap();
    assert_eq!(same.b, 0.0);
    assert_eq!(same.total_var, same.w);
    assert_eq!(same.w, 0.625);
    assert!(rubin_pool(&[1.0], &[1.0], 10.0).is_err());
    assert!(rubin_pool(&[1.0, 2.0], &[1.0, -1.0], 10.0).is_err());
}

#[test]
fn complete_data_degrees_of_freedom() {
    assert_eq!(complete_data_df(Treatment::Control, 50.0), 49.0);
    assert_eq!(complete_data_df(Treatment::Difference, 50.0), 98.0);
    assert_eq!(complete_data_df(Treatment::Experimental, 1.0), 1.0);
}

fn toy(control_y: &[f64], experimental_y: &[f64]) -> TrialDataset {
    let mut records = Vec::new();
    for (arm, ys) in [(Arm::Control, control_y), (Arm::Experimental, experimental_y)] {
        for (i, &y) in ys.iter().enumerate() {
            let id = format!("{arm}-{i}");
            records.push(completer(&id, arm, i as f64, &[0.1 * i as f64], y));
        }
    }
    TrialDataset::new(records, 1, 1).unwrap()
}

fn one_imputation(dataset: &TrialDataset) -> ImputedDataset {
    let plan = ImputationPlan::for_dataset(PlanMode::Full, dataset);
    impute_many(dataset, &plan, 1, 1).unwrap().remove(0)
}

#[test]
fn within_variance_of_included_outcomes() {
    let imp = one_imputation(&toy(&[1.0, 2.0, 4.0], &[7.0, 7.0, 7.0]));
    let v = within_variance(&imp, StratumLabel::SStarPlus, Treatment::Experimental, Subset::E1).unwrap();
    assert_eq!(v, 0.0);

    let imp = one_imputation(&toy(&[1.0, 2.0, 4.0], &[0.0, 2.0]));
    let v = within_variance(&imp, StratumLabel::SStarPlus, Treatment::Experimental, Subset::E1).unwrap();
    assert_eq!(v, 1.0);

    let imp = one_imputation(&toy(&[1.0, 2.0, 4.0], &[5.0]));
    assert!(within_variance(&imp, StratumLabel::SStarPlus, Treatment::Experimental, Subset::E1).is_err());
}

/// Ten subjects per arm; three control subjects drop out after the visit.
fn ten_subject_trial() -> TrialDataset {
    let mut rng = stream(3, &[99]);
    let mut records = Vec::new();
    for arm in Arm::BOTH {
        for i in 0..10 {
            let x: f64 = rng.random_range(-1.0..1.0);
            let z = 0.5 * x + rng.random_range(-0.5..0.5);
            let y = 1.0 + x + z + rng.random_range(-1.0..1.0) + arm.index() as f64;
            let mut r = completer(&format!("{arm}-{i}"), arm, x, &[z], y);
            if arm == Arm::Control && i < 3 {
                r.adherence = vec![Some(false)];
                r.y = None;
            }
            records.push(r);
        }
    }
    TrialDataset::new(records, 1, 1).unwrap()
}

/// Cell value and its resampling variance computed from frame values:
/// subjects of arm `t` are resampled with replacement and the weighted mean
/// of their values is recomputed.
fn resampled_variance(dataset: &TrialDataset, imp: &ImputedDataset, t: Arm, both: bool) -> f64 {
    let members: Vec<(f64, f64)> = dataset
        .records()
        .iter()
        .enumerate()
        .filter(|(_, r)| r.arm == t)
        .map(|(j, _)| {
            let f = imp.frame(j);
            let mut w = f64::from(u8::from(f.adherent(t)));
            if both {
                w *= f64::from(u8::from(f.adherent(t.other())));
            }
            (w, f.y(t))
        })
        .collect();
    let mut rng = stream(4, &[99]);
    let reps = 20_000;
    let mut values = Vec::with_capacity(reps);
    while values.len() < reps {
        let (mut num, mut den) = (0.0, 0.0);
        for _ in 0..members.len() {
            let (w, y) = members[rng.random_range(0..members.len())];
            num += w * y;
            den += w;
        }
        if den > 0.0 {
            values.push(num / den);
        }
    }
    let mean = values.iter().sum::<f64>() / reps as f64;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps - 1) as f64
}

#[test]
fn within_variance_agrees_with_nested_resampling() {
    let dataset = ten_subject_trial();
    let imp = one_imputation(&dataset);
    let cases = [
        (StratumLabel::SStarPlus, false),
        (StratumLabel::SPlusPlus, true),
    ];
    for (stratum, both) in cases {
        let analytic = within_variance(&imp, stratum, Treatment::Experimental, Subset::E1).unwrap();
        let brute = resampled_variance(&dataset, &imp, Arm::Experimental, both);
        let rel = (analytic - brute).abs() / brute;
        assert!(rel < 0.2, "{stratum}: {analytic} vs {brute}");
    }
}

fn setting_trial(n_per_arm: usize, seed: u64) -> TrialDataset {
    let cfg = SettingConfig {
        n_per_arm,
        ..SettingConfig::setting1()
    };
    generate_trial(&cfg, seed).unwrap().0
}

fn parameters() -> Vec<Parameter> {
    Parameter::study_set().to_vec()
}

#[test]
fn bootstrap_is_deterministic_and_extends_with_more_replicates() {
    let dataset = setting_trial(40, 12);
    let plan = ImputationPlan::for_dataset(PlanMode::Full, &dataset);
    let small = BootstrapOptions::new(8, 4, 21);
    let large = BootstrapOptions::new(16, 4, 21);
    let a = bootstrap_replicates(&dataset, &plan, &small, &parameters()).unwrap();
    let again = bootstrap_replicates(&dataset, &plan, &small, &parameters()).unwrap();
    let b = bootstrap_replicates(&dataset, &plan, &large, &parameters()).unwrap();
    assert_eq!(a, again);
    for (short, long) in a.iter().zip(&b) {
        assert_eq!(short.as_slice(), &long[..short.len()]);
    }
}

#[test]
fn bootstrap_se_ignores_replicate_order() {
    let values = vec![0.3, -0.1, 0.7, 0.2, 0.05, -0.4];
    let p = parameters()[0];
    let forward = BootstrapResult::from_replicates(p, 6, values.clone(), 0.1, 0.05).unwrap();
    let mut reversed = values;
    reversed.reverse();
    let backward = BootstrapResult::from_replicates(p, 6, reversed, 0.1, 0.05).unwrap();
    assert!((forward.se - backward.se).abs() < 1e-15);
}

#[test]
fn constant_outcome_gives_zero_bootstrap_se() {
    let records: Vec<SubjectRecord> = (0..12)
        .map(|i| {
            let arm = if i % 2 == 0 { Arm::Control } else { Arm::Experimental };
            completer(&format!("c{i}"), arm, 1.0, &[2.0, 2.0], 3.0)
        })
        .collect();
    let dataset = TrialDataset::new(records, 1, 2).unwrap();
    let plan = ImputationPlan::for_dataset(PlanMode::Full, &dataset);
    let params = [Parameter::new(StratumLabel::SPlusPlus, Treatment::Experimental, Subset::All)];
    let results = bootstrap(&dataset, &plan, &BootstrapOptions::new(10, 3, 4), &params, &[3.0]).unwrap();
    // Zero up to the rounding of the least-squares solve.
    let r = &results[0];
    assert!(r.se < 1e-12, "se {}", r.se);
    assert!((r.ci.0 - 3.0).abs() < 1e-12 && (r.ci.1 - 3.0).abs() < 1e-12);
    assert!(r.replicate_estimates.iter().all(|&v| (v - 3.0).abs() < 1e-12));
}

#[test]
fn baseline_only_analysis_differs_from_full() {
    let dataset = setting_trial(150, 31);
    let params = parameters();
    let pooled = |mode| {
        let plan = ImputationPlan::for_dataset(mode, &dataset);
        analyze(&dataset, &plan, 10, 5, &params, EmptyStratumPolicy::Error)
            .unwrap()
            .into_iter()
            .map(|a| a.estimate.pooled)
            .collect::<Vec<f64>>()
    };
    let full = pooled(PlanMode::Full);
    let baseline = pooled(PlanMode::BaselineOnly);
    assert!(full.iter().zip(&baseline).any(|(a, b)| (a - b).abs() > 1e-3));
}

#[test]
fn rubin_from_analysis_uses_every_imputation() {
    let dataset = setting_trial(150, 32);
    let plan = ImputationPlan::for_dataset(PlanMode::Full, &dataset);
    let params = parameters();
    let analyses = analyze(&dataset, &plan, 20, 9, &params, EmptyStratumPolicy::Error).unwrap();
    for a in &analyses {
        let r = a.rubin().unwrap();
        assert_eq!(r.imputations, 20);
        assert_eq!(r.qbar, a.estimate.pooled);
        assert!(r.total_var >= r.w && r.w > 0.0);
        assert!(r.ci.0 < r.qbar && r.qbar < r.ci.1);
    }
}
