//! Datasets and the least-squares M-estimation loss.

use std::path::Path;
use std::sync::{Arc, OnceLock};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Regressors and everything derived from them alone. Shared between a dataset
/// and its wild-bootstrap replicates, which only replace the outcome.
#[derive(Debug)]
pub struct Design {
    pub x: DMatrix<f64>,
    pub column_names: Vec<String>,
    pub has_intercept: bool,
    /// `X'X / n`
    pub gram: DMatrix<f64>,
    gram_chol: Cholesky<f64, Dyn>,
    products: OnceLock<Option<Products>>,
}

/// Row-wise products `z_i = vec(x_i x_i')` and their second moment, used to
/// evaluate the least-squares score covariance in O(p^4) instead of O(n p^2).
#[derive(Debug)]
struct Products {
    z: DMatrix<f64>,
    /// `Z'Z / n`, the fourth moments of the regressors.
    fourth: DMatrix<f64>,
}

/// Per-outcome moments: `(1/n) Z'y^2` and `(1/n) Z' diag(y) X`.
#[derive(Debug, Clone)]
struct OutcomeMoments {
    zy2: DVector<f64>,
    zyx: DMatrix<f64>,
}

impl Design {
    pub fn new(x: DMatrix<f64>, column_names: Vec<String>, has_intercept: bool) -> Result<Self> {
        let (n, p) = x.shape();
        if column_names.len() != p {
            return Err(Error::Dimension(format!(
                "{} column names for {p} columns",
                column_names.len()
            )));
        }
        if n <= p {
            return Err(Error::Data(format!("need n > p, got n = {n}, p = {p}")));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("design contains non-finite entries".into()));
        }
        let sv = x.clone().singular_values();
        let smax = sv.max();
        let smin = sv.min();
        if !(smin > 1e-10 * smax) {
            return Err(Error::RankDeficient(format!(
                "smallest singular value {smin:.3e} vs largest {smax:.3e}"
            )));
        }
        let gram = x.tr_mul(&x) / n as f64;
        let gram_chol = Cholesky::new(gram.clone())
            .ok_or_else(|| Error::RankDeficient("X'X is not positive definite".into()))?;
        Ok(Design {
            x,
            column_names,
            has_intercept,
            gram,
            gram_chol,
            products: OnceLock::new(),
        })
    }

    fn products(&self) -> Option<&Products> {
        self.products
            .get_or_init(|| {
                let (n, p) = self.x.shape();
                if p > 16 || n < 2 * p * p {
                    return None;
                }
                let z =
                    DMatrix::from_fn(n, p * p, |i, jk| self.x[(i, jk / p)] * self.x[(i, jk % p)]);
                let fourth = z.tr_mul(&z) / n as f64;
                Some(Products { z, fourth })
            })
            .as_ref()
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn gram_solve(&self, v: &DVector<f64>) -> DVector<f64> {
        self.gram_chol.solve(v)
    }

    pub fn gram_chol(&self) -> &Cholesky<f64, Dyn> {
        &self.gram_chol
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub y: DVector<f64>,
    design: Arc<Design>,
    /// `X'y / n`
    xty: DVector<f64>,
    moments: OnceLock<Option<OutcomeMoments>>,
}

impl Dataset {
    pub fn new(
        y: DVector<f64>,
        x: DMatrix<f64>,
        column_names: Vec<String>,
        has_intercept: bool,
    ) -> Result<Self> {
        let design = Arc::new(Design::new(x, column_names, has_intercept)?);
        Self::from_design(design, y)
    }

    /// Dataset with default column names `x0, x1, ...`.
    pub fn from_matrix(y: DVector<f64>, x: DMatrix<f64>, has_intercept: bool) -> Result<Self> {
        let names = (0..x.ncols()).map(|j| format!("x{j}")).collect();
        Self::new(y, x, names, has_intercept)
    }

    pub fn from_design(design: Arc<Design>, y: DVector<f64>) -> Result<Self> {
        if y.len() != design.n() {
            return Err(Error::Dimension(format!(
                "y has length {}, X has {} rows",
                y.len(),
                design.n()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("outcome contains non-finite entries".into()));
        }
        let xty = design.x.tr_mul(&y) / design.n() as f64;
        Ok(Dataset {
            y,
            design,
            xty,
            moments: OnceLock::new(),
        })
    }

    /// Same regressors, new outcome.
    pub fn with_outcome(&self, y: DVector<f64>) -> Result<Self> {
        Self::from_design(Arc::clone(&self.design), y)
    }

    pub fn design(&self) -> &Arc<Design> {
        &self.design
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.design.x
    }

    pub fn n(&self) -> usize {
        self.design.n()
    }

    pub fn p(&self) -> usize {
        self.design.p()
    }

    pub fn column_names(&self) -> &[String] {
        &self.design.column_names
    }

    pub fn has_intercept(&self) -> bool {
        self.design.has_intercept
    }

    /// `X'y / n`
    pub fn xty(&self) -> &DVector<f64> {
        &self.xty
    }

    fn outcome_moments(&self) -> Option<(&Products, &OutcomeMoments)> {
        let products = self.design.products()?;
        let m = self
            .moments
            .get_or_init(|| {
                let n = self.n() as f64;
                let y2 = self.y.map(|v| v * v);
                let zy2 = products.z.tr_mul(&y2) / n;
                let mut yx = self.design.x.clone();
                for (i, mut row) in yx.row_iter_mut().enumerate() {
                    row *= self.y[i];
                }
                let zyx = products.z.tr_mul(&yx) / n;
                Some(OutcomeMoments { zy2, zyx })
            })
            .as_ref()?;
        Some((products, m))
    }

    /// `(1/n) sum_i x_i x_i' r_i^2` with `r = y - X theta`, through the cached
    /// moments when the design is small enough.
    fn weighted_gram(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        let p = self.p();
        if let Some((products, m)) = self.outcome_moments() {
            let outer = theta * theta.transpose();
            let outer = DVector::from_column_slice(outer.as_slice());
            let v = &m.zy2 - &m.zyx * theta * 2.0 + &products.fourth * outer;
            return DMatrix::from_column_slice(p, p, v.as_slice());
        }
        let r = self.residuals(theta);
        let mut xr = self.design.x.clone();
        for (i, mut row) in xr.row_iter_mut().enumerate() {
            row *= r[i];
        }
        xr.tr_mul(&xr) / self.n() as f64
    }

    pub fn residuals(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.y - &self.design.x * theta
    }

    /// Coefficient of determination of the fit `X theta`.
    pub fn r_squared(&self, theta: &DVector<f64>) -> f64 {
        let resid = self.residuals(theta);
        let mean = self.y.mean();
        let tss: f64 = self.y.iter().map(|v| (v - mean).powi(2)).sum();
        1.0 - resid.norm_squared() / tss
    }

    /// Read a CSV with a header row. `regressors` defaults to every column
    /// except the outcome; a leading column of ones named `(intercept)` is
    /// prepended when `add_intercept` is set.
    pub fn from_csv(
        path: &Path,
        outcome: &str,
        regressors: Option<&[String]>,
        add_intercept: bool,
    ) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let headers: Vec<String> = reader
            .headers()?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        let find = |name: &str| {
            headers.iter().position(|h| h == name).ok_or_else(|| {
                Error::Data(format!("column '{name}' not found in {}", path.display()))
            })
        };
        let y_col = find(outcome)?;
        let x_cols: Vec<usize> = match regressors {
            Some(names) => names.iter().map(|n| find(n)).collect::<Result<_>>()?,
            None => (0..headers.len()).filter(|&j| j != y_col).collect(),
        };
        let mut y = Vec::new();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record?;
            let parse = |j: usize| -> Result<f64> {
                let field = record.get(j).unwrap_or("").trim();
                field.parse::<f64>().map_err(|_| {
                    Error::Data(format!(
                        "row {}: column '{}' is not numeric: '{field}'",
                        i + 1,
                        headers[j]
                    ))
                })
            };
            y.push(parse(y_col)?);
            let mut row = Vec::with_capacity(x_cols.len() + 1);
            if add_intercept {
                row.push(1.0);
            }
            for &j in &x_cols {
                row.push(parse(j)?);
            }
            rows.push(row);
        }
        let n = rows.len();
        let p = x_cols.len() + add_intercept as usize;
        let x = DMatrix::from_fn(n, p, |i, j| rows[i][j]);
        let mut names = Vec::with_capacity(p);
        if add_intercept {
            names.push("(intercept)".to_string());
        }
        names.extend(x_cols.iter().map(|&j| headers[j].clone()));
        Dataset::new(DVector::from_vec(y), x, names, add_intercept)
    }
}

/// Normalization of the least-squares criterion.
///
/// `Half` is `(1/2n)||y - X theta||^2`; `Mean` is `(1/n)||y - X theta||^2`.
/// Estimates, tolerances and risk are identical under both; the multiplier and
/// the individual shadow prices under `Mean` are exactly twice those under `Half`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossScale {
    #[default]
    Half,
    Mean,
}

impl LossScale {
    fn factor(self) -> f64 {
        match self {
            LossScale::Half => 1.0,
            LossScale::Mean => 2.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LossEvaluation {
    pub value: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
    pub score_rows: DMatrix<f64>,
}

/// An M-estimation loss `phi_n(theta) = (1/n) sum_i phi(Z_i; theta)`.
pub trait Loss: Send + Sync {
    fn value(&self, data: &Dataset, theta: &DVector<f64>) -> Result<f64>;
    fn gradient(&self, data: &Dataset, theta: &DVector<f64>) -> Result<DVector<f64>>;
    fn hessian(&self, data: &Dataset, theta: &DVector<f64>) -> Result<DMatrix<f64>>;
    /// Per-observation scores `psi_i(theta)`, one row per observation.
    fn score_rows(&self, data: &Dataset, theta: &DVector<f64>) -> Result<DMatrix<f64>>;

    fn evaluate(&self, data: &Dataset, theta: &DVector<f64>) -> Result<LossEvaluation> {
        Ok(LossEvaluation {
            value: self.value(data, theta)?,
            grad: self.gradient(data, theta)?,
            hess: self.hessian(data, theta)?,
            score_rows: self.score_rows(data, theta)?,
        })
    }

    /// `Some` when the loss is exactly least squares, enabling closed-form paths.
    fn as_least_squares(&self) -> Option<&LeastSquares> {
        None
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LeastSquares {
    pub scale: LossScale,
}

impl LeastSquares {
    pub fn new(scale: LossScale) -> Self {
        LeastSquares { scale }
    }

    /// `kappa` in `psi_i = -kappa x_i (y_i - x_i' theta)`.
    pub fn kappa(&self) -> f64 {
        self.scale.factor()
    }

    fn check(data: &Dataset, theta: &DVector<f64>) -> Result<()> {
        if theta.len() != data.p() {
            return Err(Error::Dimension(format!(
                "theta has length {}, design has {} columns",
                theta.len(),
                data.p()
            )));
        }
        Ok(())
    }
}

impl Loss for LeastSquares {
    fn value(&self, data: &Dataset, theta: &DVector<f64>) -> Result<f64> {
        Self::check(data, theta)?;
        let r = data.residuals(theta);
        Ok(self.kappa() * r.norm_squared() / (2.0 * data.n() as f64))
    }

    fn gradient(&self, data: &Dataset, theta: &DVector<f64>) -> Result<DVector<f64>> {
        Self::check(data, theta)?;
        // kappa (X'X/n theta - X'y/n), without forming residuals
        Ok((&data.design().gram * theta - data.xty()) * self.kappa())
    }

    fn hessian(&self, data: &Dataset, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        Self::check(data, theta)?;
        Ok(&data.design().gram * self.kappa())
    }

    fn score_rows(&self, data: &Dataset, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        Self::check(data, theta)?;
        let r = data.residuals(theta);
        let mut s = data.x().clone();
        let k = -self.kappa();
        for (i, mut row) in s.row_iter_mut().enumerate() {
            row *= k * r[i];
        }
        Ok(s)
    }

    fn as_least_squares(&self) -> Option<&LeastSquares> {
        Some(self)
    }
}

/// Centered plug-in `(1/n) sum_i (psi_i - psi_bar)(psi_i - psi_bar)'`.
pub fn score_covariance(
    loss: &dyn Loss,
    data: &Dataset,
    theta: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    if let Some(ls) = loss.as_least_squares() {
        if theta.len() != data.p() {
            return Err(Error::Dimension(format!(
                "theta has length {}, expected {}",
                theta.len(),
                data.p()
            )));
        }
        let k2 = ls.kappa() * ls.kappa();
        let mean = data.xty() - &data.design().gram * theta;
        let mut cov = data.weighted_gram(theta) - &mean * mean.transpose();
        cov *= k2;
        let t = cov.transpose();
        return Ok((cov + t) * 0.5);
    }
    let scores = loss.score_rows(data, theta)?;
    Ok(centered_covariance(&scores))
}

pub(crate) fn centered_covariance(scores: &DMatrix<f64>) -> DMatrix<f64> {
    let n = scores.nrows() as f64;
    let mean = scores.row_mean();
    let mut cov = scores.tr_mul(scores) / n;
    cov -= mean.transpose() * &mean;
    // exact symmetry
    let t = cov.transpose();
    (cov + t) * 0.5
}

/// Unconstrained minimizer of the least-squares loss (normal equations).
pub fn fit_unconstrained(data: &Dataset) -> DVector<f64> {
    data.design().gram_solve(data.xty())
}
