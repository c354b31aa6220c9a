//! Ridge-stabilized logistic regression fitted by Newton-Raphson (IRLS),
//! with normal-approximation posterior draws.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numeric::expit;

pub const RIDGE: f64 = 1e-6;
pub const RIDGE_ESCALATED: f64 = 1e-2;
const SCORE_TOLERANCE: f64 = 1e-8;
const MAX_ITERATIONS: usize = 100;
/// Linear predictors beyond this magnitude indicate (quasi-)separation.
const SEPARATION_ETA: f64 = 30.0;

#[derive(Clone, Debug)]
pub struct LogisticImputationModel {
    coef_hat: DVector<f64>,
    cov_hat: DMatrix<f64>,
    root: DMatrix<f64>,
    converged: bool,
    ridge: f64,
    iterations: usize,
}

impl LogisticImputationModel {
    /// Assembles a model; `cov_hat` must be symmetric positive semidefinite.
    pub fn from_parts(coef_hat: DVector<f64>, cov_hat: DMatrix<f64>, converged: bool) -> Result<Self> {
        let q = coef_hat.len();
        if cov_hat.nrows() != q || cov_hat.ncols() != q {
            return Err(Error::InvalidModel("covariance shape mismatch".into()));
        }
        let root = psd_root(&cov_hat)?;
        Ok(Self {
            coef_hat,
            cov_hat,
            root,
            converged,
            ridge: 0.0,
            iterations: 0,
        })
    }

    pub fn coef_hat(&self) -> &DVector<f64> {
        &self.coef_hat
    }

    /// Inverse of the penalized observed information at the estimate.
    pub fn cov_hat(&self) -> &DMatrix<f64> {
        &self.cov_hat
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    /// Ridge penalty that was finally used.
    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn n_coef(&self) -> usize {
        self.coef_hat.len()
    }

    /// Draws `gamma* ~ N(gamma_hat, cov_hat)`. Refuses unconverged fits.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DVector<f64>> {
        if !self.converged {
            return Err(Error::NotConverged);
        }
        let zeta = DVector::from_fn(self.coef_hat.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        Ok(&self.coef_hat + &self.root * zeta)
    }
}

/// Square root `L` with `L L' = m` for a symmetric PSD matrix.
fn psd_root(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(chol) = m.clone().cholesky() {
        return Ok(chol.l());
    }
    let eig = m.clone().symmetric_eigen();
    let scale = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if eig.eigenvalues.iter().any(|&v| v < -1e-10 * scale.max(1e-300)) {
        return Err(Error::InvalidModel("covariance is not positive semidefinite".into()));
    }
    let sqrt = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&sqrt))
}

fn softplus(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

struct Newton {
    beta: DVector<f64>,
    converged: bool,
    iterations: usize,
    max_abs_eta: f64,
}

fn penalized_loglik(design: &DMatrix<f64>, y: &[bool], beta: &DVector<f64>, ridge: f64) -> f64 {
    let eta = design * beta;
    let ll: f64 = eta
        .iter()
        .zip(y)
        .map(|(&e, &yi)| if yi { e - softplus(e) } else { -softplus(e) })
        .sum();
    ll - 0.5 * ridge * beta.norm_squared()
}

fn newton(design: &DMatrix<f64>, y: &[bool], ridge: f64) -> Newton {
    let (n, q) = design.shape();
    let mut beta = DVector::zeros(q);
    let mut loglik = penalized_loglik(design, y, &beta, ridge);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        let eta = design * &beta;
        let mut score = -ridge * &beta;
        let mut info = DMatrix::identity(q, q) * ridge;
        for i in 0..n {
            let p = expit(eta[i]);
            let row = design.row(i);
            let resid = if y[i] { 1.0 - p } else { -p };
            let w = p * (1.0 - p);
            for a in 0..q {
                score[a] += row[a] * resid;
                for b in 0..=a {
                    info[(a, b)] += w * row[a] * row[b];
                }
            }
        }
        if score.amax() < SCORE_TOLERANCE {
            converged = true;
            break;
        }
        for a in 0..q {
            for b in 0..a {
                info[(b, a)] = info[(a, b)];
            }
        }
        let Some(chol) = info.cholesky() else { break };
        let step = chol.solve(&score);
        let mut scale = 1.0;
        let mut accepted = false;
        while scale > 1e-10 {
            let candidate = &beta + &step * scale;
            let ll = penalized_loglik(design, y, &candidate, ridge);
            if ll.is_finite() && ll >= loglik - 1e-12 * loglik.abs() {
                beta = candidate;
                loglik = ll;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        iterations += 1;
        if !accepted {
            break;
        }
    }
    let max_abs_eta = (design * &beta).amax();
    Newton {
        beta,
        converged,
        iterations,
        max_abs_eta,
    }
}

fn information(design: &DMatrix<f64>, beta: &DVector<f64>, ridge: f64) -> DMatrix<f64> {
    let q = design.ncols();
    let eta = design * beta;
    let mut info = DMatrix::identity(q, q) * ridge;
    for (i, e) in eta.iter().enumerate() {
        let p = expit(*e);
        let w = p * (1.0 - p);
        let row = design.row(i);
        info += row.transpose() * row * w;
    }
    info
}

/// Fits `logit P(y = 1) = design * gamma`.
///
/// The fit starts with a negligible ridge penalty and escalates to
/// [`RIDGE_ESCALATED`] when Newton fails to converge or the linear predictor
/// diverges (separation). A single-class response is an error.
pub fn fit_logistic(design: &DMatrix<f64>, response: &[bool]) -> Result<LogisticImputationModel> {
    let (n, _) = design.shape();
    if response.len() != n {
        return Err(Error::InvalidModel("response length differs from design rows".into()));
    }
    let ones = response.iter().filter(|&&v| v).count();
    if ones == 0 || ones == n {
        return Err(Error::Separation);
    }
    let mut ridge = RIDGE;
    let mut fit = newton(design, response, ridge);
    if !fit.converged || fit.max_abs_eta > SEPARATION_ETA {
        ridge = RIDGE_ESCALATED;
        fit = newton(design, response, ridge);
    }
    let info = information(design, &fit.beta, ridge);
    let cov_hat = info
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::InvalidModel("information matrix is singular".into()))?;
    let root = psd_root(&cov_hat)?;
    Ok(LogisticImputationModel {
        coef_hat: fit.beta,
        cov_hat,
        root,
        converged: fit.converged,
        ridge,
        iterations: fit.iterations,
    })
}
