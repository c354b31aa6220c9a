mod common;

use adace_core::imputation::imputation_stream;
use adace_core::{
    generate_trial, impute_many, Arm, ImputationModels, ImputationPlan, PlanMode,
    SettingConfig, SubjectRecord, TrialDataset,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn fixture() -> impl Strategy<Value = TrialDataset> {
    (8usize..=16, 1usize..=3).prop_flat_map(|(n, periods)| common::dataset_strategy(n, periods))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 1000, max_global_rejects: 4000, ..ProptestConfig::default() })]

    #[test]
    fn observed_cells_survive_and_indicators_are_monotone(dataset in fixture(), seed in any::<u64>()) {
        for mode in [PlanMode::Full, PlanMode::BaselineOnly] {
            let plan = ImputationPlan::for_dataset(mode, &dataset);
            let imps = impute_many(&dataset, &plan, 2, seed);
            prop_assume!(imps.is_ok());
            for imp in imps.unwrap() {
                common::check_frames(&dataset, &imp)?;
            }
        }
    }

    #[test]
    fn seeds_change_draws_but_not_observed_cells(dataset in fixture(), s in any::<u64>()) {
        let plan = ImputationPlan::for_dataset(PlanMode::Full, &dataset);
        let a = impute_many(&dataset, &plan, 3, s);
        prop_assume!(a.is_ok());
        let a = a.unwrap();
        let again = impute_many(&dataset, &plan, 3, s).unwrap();
        prop_assert_eq!(&a, &again);
        let b = impute_many(&dataset, &plan, 3, s.wrapping_add(1)).unwrap();
        for (ia, ib) in a.iter().zip(&b) {
            common::check_frames(&dataset, ib)?;
            for (j, r) in dataset.records().iter().enumerate() {
                let (fa, fb) = (ia.frame(j), ib.frame(j));
                if r.y.is_some() {
                    prop_assert_eq!(fa.y(r.arm).to_bits(), fb.y(r.arm).to_bits());
                }
                for (k, z) in r.z.iter().enumerate() {
                    if z.is_some() {
                        prop_assert_eq!(fa.z(r.arm)[k].to_bits(), fb.z(r.arm)[k].to_bits());
                    }
                }
            }
        }
    }

    #[test]
    fn dataset_csv_round_trips(dataset in fixture()) {
        let mut bytes = Vec::new();
        dataset.write_csv(&mut bytes).unwrap();
        let back = TrialDataset::read_csv(bytes.as_slice()).unwrap();
        prop_assert_eq!(back, dataset);
    }
}

#[test]
fn single_imputation_and_zero_count() {
    let (dataset, _) = generate_trial(&small_setting(30), 3).unwrap();
    let plan = ImputationPlan::for_dataset(PlanMode::Full, &dataset);
    let one = impute_many(&dataset, &plan, 1, 9).unwrap();
    assert_eq!(one.len(), 1);
    assert_eq!(one[0].m, 0);
    assert!(impute_many(&dataset, &plan, 0, 9).is_err());
}

#[test]
fn imputation_m_only_depends_on_its_own_stream() {
    let (dataset, _) = generate_trial(&small_setting(40), 5).unwrap();
    let plan = ImputationPlan::for_dataset(PlanMode::Full, &dataset);
    let many = impute_many(&dataset, &plan, 6, 77).unwrap();
    let models = ImputationModels::fit(&dataset, &plan).unwrap();
    let (_, mut rng) = imputation_stream(77, 4);
    let single = models.impute(&dataset, 4, &mut rng).unwrap();
    assert_eq!(single.table, many[4].table);
}

fn small_setting(n_per_arm: usize) -> SettingConfig {
    SettingConfig {
        n_per_arm,
        ..SettingConfig::setting1()
    }
}

/// `E[Y(t) | X = x]` implied by the generating model.
fn conditional_mean(cfg: &SettingConfig, x: f64, t: Arm) -> f64 {
    let t = t.index() as f64;
    let mut mean = cfg.beta0 + cfg.beta1 * x + cfg.beta2 * t;
    for k in 0..cfg.n_intermediate() {
        mean += cfg.beta3[k] * (cfg.alpha0[k] + cfg.alpha1[k] * x + cfg.alpha2[k] * t);
    }
    mean
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[test]
fn counterfactual_outcomes_track_the_generating_model() {
    let cfg = small_setting(5_000);
    let (dataset, _) = generate_trial(&cfg, 2024).unwrap();
    let plan = ImputationPlan::for_dataset(PlanMode::Full, &dataset);
    let m = 40;
    let imps = impute_many(&dataset, &plan, m, 11).unwrap();
    for arm in Arm::BOTH {
        let other = arm.other();
        let members: Vec<usize> = (0..dataset.len()).filter(|&j| dataset.records()[j].arm == arm).collect();
        let target = members
            .iter()
            .map(|&j| conditional_mean(&cfg, dataset.records()[j].x[0], other))
            .sum::<f64>()
            / members.len() as f64;
        let per_m: Vec<f64> = imps
            .iter()
            .map(|imp| members.iter().map(|&j| imp.frame(j).y(other)).sum::<f64>() / members.len() as f64)
            .collect();
        let (mean, sd) = mean_sd(&per_m);
        // The spread across imputations stands in for the estimation error
        // of the fitted models; the second term is the Monte Carlo error.
        let se = sd * (1.0 + 1.0 / m as f64).sqrt();
        assert!(
            (mean - target).abs() < 3.0 * se,
            "arm {arm}: imputed {mean}, model {target}, se {se}"
        );
    }
}

/// Copies every control subject into the experimental arm so that both
/// arms fit identical models.
fn mirrored(dataset: &TrialDataset) -> TrialDataset {
    let control: Vec<SubjectRecord> =
        dataset.records().iter().filter(|r| r.arm == Arm::Control).cloned().collect();
    let mut records = control.clone();
    records.extend(control.into_iter().map(|mut r| {
        r.subject_id.push_str("-twin");
        r.arm = Arm::Experimental;
        r
    }));
    TrialDataset::new(records, dataset.n_covariates(), dataset.n_intermediate()).unwrap()
}

#[test]
fn twins_in_opposite_arms_are_exchangeable() {
    let (base, _) = generate_trial(&small_setting(60), 8).unwrap();
    let dataset = mirrored(&base);
    let half = dataset.len() / 2;
    let plan = ImputationPlan::for_dataset(PlanMode::Full, &dataset);
    let imps = impute_many(&dataset, &plan, 10_000, 5).unwrap();
    // A dropout and a completer.
    let dropout = (0..half).find(|&j| dataset.records()[j].y.is_none()).unwrap();
    let completer = (0..half).find(|&j| dataset.records()[j].y.is_some()).unwrap();
    for j in [dropout, completer] {
        let twin = j + half;
        let a: Vec<f64> = imps.iter().map(|imp| imp.frame(j).y(Arm::Experimental)).collect();
        let b: Vec<f64> = imps.iter().map(|imp| imp.frame(twin).y(Arm::Control)).collect();
        assert_ne!(a, b, "twins must draw independently");
        let (ma, sa) = mean_sd(&a);
        let (mb, sb) = mean_sd(&b);
        let se = ((sa * sa + sb * sb) / a.len() as f64).sqrt();
        assert!((ma - mb).abs() < 3.0 * se, "subject {j}: {ma} vs {mb}, se {se}");
        let fa: f64 = imps.iter().filter(|imp| imp.frame(j).adherent(Arm::Experimental)).count() as f64;
        let fb: f64 = imps.iter().filter(|imp| imp.frame(twin).adherent(Arm::Control)).count() as f64;
        let n = imps.len() as f64;
        let p = (fa + fb) / (2.0 * n);
        let se = (2.0 * p * (1.0 - p) / n).sqrt();
        assert!(((fa - fb) / n).abs() < 3.0 * se.max(1e-3));
    }
}

/// Least-squares slope on each column of `[1, x, z1..]` for the stacked
/// rows, with standard errors.
fn ols(rows: &[Vec<f64>], y: &[f64]) -> (DVector<f64>, DVector<f64>) {
    let p = rows[0].len();
    let x = DMatrix::from_fn(rows.len(), p, |i, c| rows[i][c]);
    let y = DVector::from_column_slice(y);
    let xtx_inv = (x.transpose() * &x).try_inverse().unwrap();
    let coef = &xtx_inv * x.transpose() * &y;
    let resid = &y - &x * &coef;
    let s2 = resid.norm_squared() / (rows.len() - p) as f64;
    let se = DVector::from_fn(p, |i, _| (s2 * xtx_inv[(i, i)]).sqrt());
    (coef, se)
}

#[test]
fn baseline_only_outcomes_ignore_intermediates() {
    let cfg = small_setting(2_000);
    let (dataset, _) = generate_trial(&cfg, 99).unwrap();
    let periods = dataset.n_intermediate();
    for mode in [PlanMode::BaselineOnly, PlanMode::Full] {
        let plan = ImputationPlan::for_dataset(mode, &dataset);
        let imp = &impute_many(&dataset, &plan, 1, 3).unwrap()[0];
        // Imputed Y(1) of control subjects on (1, X, imputed Z(1)).
        let mut rows = Vec::new();
        let mut ys = Vec::new();
        for (j, r) in dataset.records().iter().enumerate() {
            if r.arm != Arm::Control {
                continue;
            }
            let f = imp.frame(j);
            let mut row = vec![1.0, r.x[0]];
            row.extend_from_slice(f.z(Arm::Experimental));
            rows.push(row);
            ys.push(f.y(Arm::Experimental));
        }
        let (coef, se) = ols(&rows, &ys);
        for k in 0..periods {
            let (c, s) = (coef[2 + k], se[2 + k]);
            match mode {
                PlanMode::BaselineOnly => assert!(c.abs() < 4.0 * s, "z{}: {c} (se {s})", k + 1),
                PlanMode::Full => assert!((c - cfg.beta3[k]).abs() < 0.1, "z{}: {c}", k + 1),
            }
        }
    }
}

#[test]
fn randomized_fixtures_are_mostly_imputable() {
    use proptest::strategy::ValueTree;
    use proptest::test_runner::TestRunner;
    let mut runner = TestRunner::deterministic();
    let strategy = fixture();
    let total: usize = 1_000;
    let ok = (0..total)
        .filter(|&s| {
            let dataset = strategy.new_tree(&mut runner).unwrap().current();
            let plan = ImputationPlan::for_dataset(PlanMode::Full, &dataset);
            impute_many(&dataset, &plan, 1, s as u64).is_ok()
        })
        .count();
    eprintln!("{ok} of {total} fixtures imputable");
    assert!(ok * 10 >= total * 9, "only {ok} of {total} fixtures imputable");
}
