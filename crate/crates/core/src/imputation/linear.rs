//! Least-squares imputation model with normal / inverse-chi-square draws.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Relative threshold on `|R_jj| / ||X_j||` below which a column is aliased.
const ALIAS_TOLERANCE: f64 = 1e-9;

/// Fitted linear regression with the sufficient statistics for a proper
/// posterior draw.
#[derive(Clone, Debug)]
pub struct LinearImputationModel {
    coef_hat: DVector<f64>,
    xtx_inv: DMatrix<f64>,
    /// Upper-triangular `U` with `U U' = (X'X)^-1`.
    root: DMatrix<f64>,
    s2_hat: f64,
    df: usize,
}

impl LinearImputationModel {
    /// Assembles a model from its parts; `xtx_inv` must be symmetric
    /// positive definite.
    pub fn from_parts(
        coef_hat: DVector<f64>,
        xtx_inv: DMatrix<f64>,
        s2_hat: f64,
        df: usize,
    ) -> Result<Self> {
        let q = coef_hat.len();
        if xtx_inv.nrows() != q || xtx_inv.ncols() != q {
            return Err(Error::InvalidModel("covariance shape mismatch".into()));
        }
        if df < 1 || !(s2_hat >= 0.0) {
            return Err(Error::InvalidModel(format!(
                "need df >= 1 and s2 >= 0, got df={df}, s2={s2_hat}"
            )));
        }
        let chol = xtx_inv
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidModel("(X'X)^-1 is not positive definite".into()))?;
        Ok(Self {
            coef_hat,
            xtx_inv,
            root: chol.l(),
            s2_hat,
            df,
        })
    }

    pub fn coef_hat(&self) -> &DVector<f64> {
        &self.coef_hat
    }

    pub fn xtx_inv(&self) -> &DMatrix<f64> {
        &self.xtx_inv
    }

    pub fn s2_hat(&self) -> f64 {
        self.s2_hat
    }

    pub fn df(&self) -> usize {
        self.df
    }

    pub fn n_coef(&self) -> usize {
        self.coef_hat.len()
    }

    /// Draws `(beta*, sigma*)`: `sigma*^2 = s2 df / g` with `g ~ chi2(df)`, then
    /// `beta* ~ N(beta_hat, sigma*^2 (X'X)^-1)`.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (DVector<f64>, f64) {
        let g: f64 = ChiSquared::new(self.df as f64)
            .expect("df >= 1")
            .sample(rng);
        let sigma = (self.s2_hat * self.df as f64 / g).sqrt();
        let q = self.coef_hat.len();
        let zeta = DVector::from_fn(q, |_, _| rng.sample::<f64, _>(StandardNormal));
        let shift = &self.root * zeta * sigma;
        (&self.coef_hat + shift, sigma)
    }
}

/// Ordinary least squares through a Householder QR factorization.
///
/// Errors with [`Error::InsufficientData`] when `n <= q` and with
/// [`Error::SingularDesign`] when a column is (numerically) a linear
/// combination of the preceding ones.
pub fn fit_linear(design: &DMatrix<f64>, response: &DVector<f64>) -> Result<LinearImputationModel> {
    let (n, q) = design.shape();
    if response.len() != n {
        return Err(Error::InvalidModel("response length differs from design rows".into()));
    }
    if n <= q {
        return Err(Error::InsufficientData { n, q });
    }
    if !aliased_columns(design).is_empty() {
        return Err(Error::SingularDesign);
    }
    let qr = design.clone().qr();
    let r = qr.r();
    let qty = qr.q().transpose() * response;
    let coef_hat = r
        .solve_upper_triangular(&qty)
        .ok_or(Error::SingularDesign)?;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(q, q))
        .ok_or(Error::SingularDesign)?;
    let xtx_inv = &r_inv * r_inv.transpose();
    let resid = response - design * &coef_hat;
    let df = n - q;
    let s2_hat = resid.norm_squared() / df as f64;
    Ok(LinearImputationModel {
        coef_hat,
        xtx_inv,
        root: r_inv,
        s2_hat,
        df,
    })
}

/// Indices of columns that are numerically dependent on earlier columns.
pub fn aliased_columns(design: &DMatrix<f64>) -> Vec<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut out = Vec::new();
    for j in 0..design.ncols() {
        let mut v = design.column(j).clone_owned();
        let norm = v.norm();
        // Two Gram-Schmidt passes keep the residual accurate.
        for _ in 0..2 {
            for b in &basis {
                let c = b.dot(&v);
                v.axpy(-c, b, 1.0);
            }
        }
        let rest = v.norm();
        if norm == 0.0 || rest <= ALIAS_TOLERANCE * norm {
            out.push(j);
        } else {
            basis.push(v / rest);
        }
    }
    out
}
