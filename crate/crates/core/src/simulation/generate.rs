use rand::Rng;
use rand_distr::StandardNormal;

use super::config::{Assignment, SettingConfig};
use crate::error::Result;
use crate::numeric::expit;
use crate::rng::{stream, tag, StreamRng};
use crate::trial_data::{Arm, CellSource, PotentialOutcomeTable, SubjectRecord, TrialDataset};

/// Draws the potential outcomes of one subject under treatment `t` into
/// `z` and `flags`; returns `(A(t), Y(t))`.
#[inline]
pub(crate) fn draw_potential<R: Rng + ?Sized>(
    cfg: &SettingConfig,
    x: f64,
    t: Arm,
    rng: &mut R,
    z: &mut [f64],
    flags: &mut [bool],
) -> (bool, f64) {
    let t = t.index() as f64;
    let mut y = cfg.beta0 + cfg.beta1 * x + cfg.beta2 * t;
    for k in 0..z.len() {
        let eta: f64 = rng.sample(StandardNormal);
        z[k] = cfg.alpha0[k] + cfg.alpha1[k] * x + cfg.alpha2[k] * t + cfg.sigma_eta * eta;
        y += cfg.beta3[k] * z[k];
    }
    let eps: f64 = rng.sample(StandardNormal);
    y += cfg.sigma_eps * eps;
    let mut at_risk = true;
    for k in 0..z.len() {
        if at_risk {
            let p = expit(cfg.gamma0 + cfg.gamma1 * x + cfg.gamma3[k] * z[k]);
            at_risk = rng.random::<f64>() < p;
        }
        flags[k] = at_risk;
    }
    (at_risk, y)
}

#[inline]
pub(crate) fn draw_covariate<R: Rng + ?Sized>(cfg: &SettingConfig, rng: &mut R) -> f64 {
    let u: f64 = rng.sample(StandardNormal);
    cfg.mu_x + cfg.sigma_x * u
}

/// Simulates one trial. Returns the observed dataset and the full table of
/// potential outcomes; cells the dataset shows are marked observed, the rest
/// latent.
///
/// Each subject draws `X`, then its arm under coin assignment, then the
/// control and experimental potential outcomes from independent noise.
pub fn generate_trial(cfg: &SettingConfig, seed: u64) -> Result<(TrialDataset, PotentialOutcomeTable)> {
    cfg.validate()?;
    let mut rng: StreamRng = stream(seed, &[tag::TRIAL]);
    let n = 2 * cfg.n_per_arm;
    let k = cfg.n_intermediate();
    let mut arms = Vec::with_capacity(n);
    let mut xs = Vec::with_capacity(n);
    let mut z = vec![0.0; 2 * n * k];
    let mut flags = vec![false; 2 * n * k];
    let mut adherent = vec![false; 2 * n];
    let mut y = vec![0.0; 2 * n];
    for j in 0..n {
        let x = draw_covariate(cfg, &mut rng);
        let arm = match cfg.assignment {
            Assignment::Split if j < cfg.n_per_arm => Arm::Control,
            Assignment::Split => Arm::Experimental,
            Assignment::Coin if rng.random::<bool>() => Arm::Experimental,
            Assignment::Coin => Arm::Control,
        };
        for t in Arm::BOTH {
            let c = PotentialOutcomeTable::cell(j, t);
            let (a, yt) = draw_potential(
                cfg,
                x,
                t,
                &mut rng,
                &mut z[c * k..(c + 1) * k],
                &mut flags[c * k..(c + 1) * k],
            );
            adherent[c] = a;
            y[c] = yt;
        }
        arms.push(arm);
        xs.push(x);
    }

    let mut table = PotentialOutcomeTable::with_arms(arms.clone(), k);
    table.z_source.fill(CellSource::Latent);
    table.flag_source.fill(CellSource::Latent);
    table.y_source.fill(CellSource::Latent);
    let mut records = Vec::with_capacity(n);
    for (j, (&arm, &x)) in arms.iter().zip(&xs).enumerate() {
        let c = PotentialOutcomeTable::cell(j, arm);
        let span = c * k..(c + 1) * k;
        let own_flags = &flags[span.clone()];
        let own_z = &z[span.clone()];
        let mut rz = Vec::with_capacity(k);
        let mut rf = Vec::with_capacity(k);
        let mut at_risk = true;
        for i in 0..k {
            if at_risk {
                rz.push(Some(own_z[i]));
                table.z_source[span.start + i] = CellSource::Observed;
                table.flag_source[span.start + i] = CellSource::Observed;
                rf.push(Some(own_flags[i]));
                at_risk = own_flags[i];
            } else {
                rz.push(None);
                rf.push(Some(false));
            }
        }
        let ry = if adherent[c] {
            table.y_source[c] = CellSource::Observed;
            Some(y[c])
        } else {
            None
        };
        records.push(SubjectRecord {
            subject_id: format!("S{:05}", j + 1),
            arm,
            x: vec![x],
            z: rz,
            adherence: rf,
            y: ry,
        });
    }
    table.z = z;
    table.flags = flags;
    table.adherent = adherent;
    table.y = y;
    let dataset = TrialDataset::new(records, 1, k)?;
    Ok((dataset, table))
}
