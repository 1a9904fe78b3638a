//! The restriction system `g(theta)` together with the credibility matrix and
//! the aggregate quadratic form `h(theta) = g' Sigma^-1 g`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::dsl::{parse_restriction, RestrictionExpr};
use crate::error::{Error, Result};

/// How the credibility matrix is specified in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SigmaSpec {
    #[default]
    Identity,
    Diagonal(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

impl SigmaSpec {
    pub fn to_matrix(&self, q: usize) -> Result<DMatrix<f64>> {
        match self {
            SigmaSpec::Identity => Ok(DMatrix::identity(q, q)),
            SigmaSpec::Diagonal(d) => {
                if d.len() != q {
                    return Err(Error::InvalidSigma(format!(
                        "diagonal has {} entries, expected {q}",
                        d.len()
                    )));
                }
                Ok(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
            }
            SigmaSpec::Full(rows) => {
                if rows.len() != q || rows.iter().any(|r| r.len() != q) {
                    return Err(Error::InvalidSigma(format!("expected a {q}x{q} matrix")));
                }
                Ok(DMatrix::from_fn(q, q, |i, j| rows[i][j]))
            }
        }
    }
}

/// Affine restrictions `g(theta) = R theta - r`, cached for the closed-form paths.
#[derive(Debug, Clone)]
pub struct AffineForm {
    pub r_mat: DMatrix<f64>,
    pub r_vec: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct RestrictionSystem {
    exprs: Vec<RestrictionExpr>,
    labels: Vec<String>,
    sigma: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    sigma_diagonal: bool,
    dim: usize,
    affine: Option<AffineForm>,
}

impl RestrictionSystem {
    pub fn new(exprs: Vec<RestrictionExpr>, sigma: DMatrix<f64>) -> Result<Self> {
        let labels = exprs.iter().map(|e| e.source.clone()).collect();
        Self::with_labels(exprs, sigma, labels)
    }

    pub fn with_labels(
        exprs: Vec<RestrictionExpr>,
        sigma: DMatrix<f64>,
        labels: Vec<String>,
    ) -> Result<Self> {
        let q = exprs.len();
        if q == 0 {
            return Err(Error::Config("at least one restriction is required".into()));
        }
        let dim = exprs[0].dim;
        if exprs.iter().any(|e| e.dim != dim) {
            return Err(Error::Dimension(
                "restrictions are bound to different parameter dimensions".into(),
            ));
        }
        if labels.len() != q {
            return Err(Error::Dimension(format!(
                "{} labels for {q} restrictions",
                labels.len()
            )));
        }
        if sigma.nrows() != q || sigma.ncols() != q {
            return Err(Error::InvalidSigma(format!(
                "Sigma is {}x{}, expected {q}x{q}",
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        for i in 0..q {
            for j in 0..i {
                if (sigma[(i, j)] - sigma[(j, i)]).abs() > 1e-12 {
                    return Err(Error::InvalidSigma("not symmetric".into()));
                }
            }
        }
        let chol = Cholesky::new(sigma.clone())
            .ok_or_else(|| Error::InvalidSigma("not positive definite".into()))?;
        let sigma_diagonal = (0..q).all(|i| (0..q).all(|j| i == j || sigma[(i, j)] == 0.0));
        let affine = if exprs.iter().all(RestrictionExpr::is_affine) {
            let zero = vec![0.0; dim];
            let mut r_mat = DMatrix::zeros(q, dim);
            let mut r_vec = DVector::zeros(q);
            for (j, e) in exprs.iter().enumerate() {
                let jet = e.expr.jet(&zero);
                r_mat.row_mut(j).copy_from(&jet.grad.transpose());
                r_vec[j] = -jet.value;
            }
            Some(AffineForm { r_mat, r_vec })
        } else {
            None
        };
        Ok(RestrictionSystem {
            exprs,
            labels,
            sigma,
            chol,
            sigma_diagonal,
            dim,
            affine,
        })
    }

    pub fn parse<S: AsRef<str>>(texts: &[S], p: usize, sigma: &SigmaSpec) -> Result<Self> {
        let exprs = texts
            .iter()
            .map(|t| parse_restriction(t.as_ref(), p))
            .collect::<Result<Vec<_>>>()?;
        let sigma = sigma.to_matrix(exprs.len())?;
        Self::new(exprs, sigma)
    }

    pub fn q(&self) -> usize {
        self.exprs.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn exprs(&self) -> &[RestrictionExpr] {
        &self.exprs
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn sigma_is_diagonal(&self) -> bool {
        self.sigma_diagonal
    }

    pub fn affine(&self) -> Option<&AffineForm> {
        self.affine.as_ref()
    }

    /// Largest eigenvalue of Sigma.
    pub fn sigma_max_eigenvalue(&self) -> f64 {
        self.sigma
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::MIN, f64::max)
    }

    pub fn sigma_inv_apply(&self, v: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(v)
    }

    pub fn sigma_inv_apply_mat(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(m)
    }

    fn check(&self, theta: &DVector<f64>) -> Result<()> {
        if theta.len() != self.dim {
            return Err(Error::Dimension(format!(
                "theta has length {}, restrictions expect {}",
                theta.len(),
                self.dim
            )));
        }
        Ok(())
    }

    pub fn eval_g(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        self.check(theta)?;
        Ok(self.g_unchecked(theta))
    }

    fn g_unchecked(&self, theta: &DVector<f64>) -> DVector<f64> {
        match &self.affine {
            Some(af) => &af.r_mat * theta - &af.r_vec,
            None => DVector::from_iterator(
                self.q(),
                self.exprs.iter().map(|e| e.eval(theta.as_slice())),
            ),
        }
    }

    /// Jacobian `G[j, k] = d g_j / d theta_k`.
    pub fn eval_jacobian(&self, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check(theta)?;
        Ok(self.jacobian_unchecked(theta))
    }

    fn jacobian_unchecked(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        if let Some(af) = &self.affine {
            return af.r_mat.clone();
        }
        let mut g = DMatrix::zeros(self.q(), self.dim);
        for (j, e) in self.exprs.iter().enumerate() {
            let jet = e.expr.jet(theta.as_slice());
            g.row_mut(j).copy_from(&jet.grad.transpose());
        }
        g
    }

    pub fn eval_h(&self, theta: &DVector<f64>) -> Result<f64> {
        self.check(theta)?;
        let g = self.g_unchecked(theta);
        Ok(g.dot(&self.sigma_inv_apply(&g)))
    }

    /// `a(theta) = 2 G' Sigma^-1 g`.
    pub fn eval_h_grad(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        self.check(theta)?;
        let g = self.g_unchecked(theta);
        let jac = self.jacobian_unchecked(theta);
        Ok(jac.transpose() * self.sigma_inv_apply(&g) * 2.0)
    }

    /// `2 G' Sigma^-1 G + 2 sum_j [Sigma^-1 g]_j Hess(g_j)`.
    pub fn eval_h_hess(&self, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(self.eval_all(theta)?.h_hess)
    }

    /// Everything the solvers need at one point, sharing the AST passes.
    pub fn eval_all(&self, theta: &DVector<f64>) -> Result<RestrictionEval> {
        self.check(theta)?;
        let q = self.q();
        let p = self.dim;
        let (g, jac, hessians) = match &self.affine {
            Some(af) => (&af.r_mat * theta - &af.r_vec, af.r_mat.clone(), None),
            None => {
                let mut g = DVector::zeros(q);
                let mut jac = DMatrix::zeros(q, p);
                let mut hs = Vec::with_capacity(q);
                for (j, e) in self.exprs.iter().enumerate() {
                    let jet = e.expr.jet(theta.as_slice());
                    g[j] = jet.value;
                    jac.row_mut(j).copy_from(&jet.grad.transpose());
                    hs.push(jet.hess);
                }
                (g, jac, Some(hs))
            }
        };
        let sig_inv_g = self.sigma_inv_apply(&g);
        let h = g.dot(&sig_inv_g);
        let h_grad = jac.transpose() * &sig_inv_g * 2.0;
        let mut h_hess = jac.transpose() * self.sigma_inv_apply_mat(&jac) * 2.0;
        if let Some(hs) = hessians {
            for (j, hj) in hs.iter().enumerate() {
                h_hess += hj * (2.0 * sig_inv_g[j]);
            }
        }
        Ok(RestrictionEval {
            g,
            sig_inv_g,
            jacobian: jac,
            h,
            h_grad,
            h_hess,
        })
    }
}

#[derive(Debug, Clone)]
pub struct RestrictionEval {
    pub g: DVector<f64>,
    pub sig_inv_g: DVector<f64>,
    pub jacobian: DMatrix<f64>,
    pub h: f64,
    pub h_grad: DVector<f64>,
    pub h_hess: DMatrix<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn theta(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    fn slope_zero_restrictions(p: usize) -> Vec<String> {
        (1..p).map(|j| format!("theta[{j}]=0")).collect()
    }

    #[test]
    fn case_two_and_three_truths() {
        let mut texts = slope_zero_restrictions(11);
        texts.push("theta[1]+theta[2]+theta[3]+theta[4]=0".into());
        let sys = RestrictionSystem::parse(&texts, 11, &SigmaSpec::Identity).unwrap();
        let case2 = theta(&[0.1, 0.3, 0.2, -0.5, 0.0, 0.3, 0.0, 0.4, 0.0, -0.2, 0.0]);
        let case3 = theta(&[0.1, 0.3, 0.0, -0.5, 0.0, 0.3, 0.0, 0.4, 0.0, -0.2, 0.0]);
        assert_eq!(sys.eval_g(&case2).unwrap()[10], 0.0);
        assert!((sys.eval_g(&case3).unwrap()[10] + 0.2).abs() < 1e-15);
    }

    #[test]
    fn identity_sigma_hand_values() {
        // g = (1, 2) with G = I2
        let sys =
            RestrictionSystem::parse(&["theta[0]", "theta[1]"], 2, &SigmaSpec::Identity).unwrap();
        let t = theta(&[1.0, 2.0]);
        assert_eq!(sys.eval_h(&t).unwrap(), 5.0);
        assert_eq!(sys.eval_h_grad(&t).unwrap(), theta(&[2.0, 4.0]));
        let zero = theta(&[0.0, 0.0]);
        assert_eq!(sys.eval_h(&zero).unwrap(), 0.0);
        assert_eq!(sys.eval_h_grad(&zero).unwrap(), theta(&[0.0, 0.0]));
        assert_eq!(sys.eval_g(&zero).unwrap(), zero);
    }

    #[test]
    fn solow_unrestricted_linear_gap() {
        let sys = RestrictionSystem::parse(
            &[
                "theta[1]+theta[2]=0",
                "theta[1]-(-theta[2])^2=0",
                "theta[1]-(-theta[2])^3=0",
            ],
            3,
            &SigmaSpec::Identity,
        )
        .unwrap();
        let g = sys.eval_g(&theta(&[4.651, 1.2756, -2.7087])).unwrap();
        assert!((g[0] + 1.4331).abs() < 1e-12);
        assert!(sys.affine().is_none());
    }

    #[test]
    fn affine_cache_matches_ast() {
        let sys = RestrictionSystem::parse(
            &["2*theta[0] - theta[2] + 1", "theta[1] = 3"],
            3,
            &SigmaSpec::Diagonal(vec![2.0, 0.5]),
        )
        .unwrap();
        let af = sys.affine().unwrap();
        let t = theta(&[0.3, -0.2, 1.7]);
        let ast: Vec<f64> = sys.exprs().iter().map(|e| e.eval(t.as_slice())).collect();
        let cached = &af.r_mat * &t - &af.r_vec;
        for j in 0..2 {
            assert!((ast[j] - cached[j]).abs() < 1e-15);
        }
        assert!(sys.sigma_is_diagonal());
    }

    #[test]
    fn invalid_sigma_rejected() {
        let texts = ["theta[0]", "theta[1]"];
        let asym = SigmaSpec::Full(vec![vec![1.0, 0.5], vec![0.4, 1.0]]);
        assert!(matches!(
            RestrictionSystem::parse(&texts, 2, &asym),
            Err(Error::InvalidSigma(_))
        ));
        let indef = SigmaSpec::Full(vec![vec![1.0, 2.0], vec![2.0, 1.0]]);
        assert!(matches!(
            RestrictionSystem::parse(&texts, 2, &indef),
            Err(Error::InvalidSigma(_))
        ));
        let wrong = SigmaSpec::Diagonal(vec![1.0]);
        assert!(matches!(
            RestrictionSystem::parse(&texts, 2, &wrong),
            Err(Error::InvalidSigma(_))
        ));
        let empty: [&str; 0] = [];
        assert!(RestrictionSystem::parse(&empty, 2, &SigmaSpec::Identity).is_err());
    }

    #[test]
    fn dimension_mismatch() {
        let sys = RestrictionSystem::parse(&["theta[0]"], 2, &SigmaSpec::Identity).unwrap();
        assert!(matches!(
            sys.eval_g(&theta(&[1.0])),
            Err(Error::Dimension(_))
        ));
    }
}
