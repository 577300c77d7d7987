use nalgebra::{DMatrix, DVector};

use crate::error::{Result, TgpError};
use crate::kernel::{spd_inverse, SpdFactor};

/// Fixed hyperparameters of the hierarchical model. They never change
/// during a run.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    /// Prior mean of beta0.
    pub mu: DVector<f64>,
    /// Prior covariance of beta0.
    pub b: DMatrix<f64>,
    /// W^{-1} ~ Wishart((rho V)^{-1}, rho).
    pub v: DMatrix<f64>,
    pub rho: f64,
    pub alpha_sigma: f64,
    pub q_sigma: f64,
    pub alpha_tau: f64,
    pub q_tau: f64,
    /// Rate of the exponential nugget prior.
    pub lambda_g: f64,
    /// Tree prior: a node at depth q splits with probability a (1 + q)^-b.
    pub tree_a: f64,
    pub tree_b: f64,
}

impl HyperParams {
    /// Weakly informative defaults for unit-cube inputs and standardized
    /// responses, with `m` linear coefficients (intercept included).
    pub fn defaults(m: usize) -> Self {
        HyperParams {
            mu: DVector::zeros(m),
            b: DMatrix::identity(m, m),
            v: DMatrix::identity(m, m),
            rho: m as f64,
            alpha_sigma: 5.0,
            q_sigma: 5.0,
            alpha_tau: 5.0,
            q_tau: 5.0,
            lambda_g: 10.0,
            tree_a: 0.5,
            tree_b: 2.0,
        }
    }

    pub fn m(&self) -> usize {
        self.mu.len()
    }

    /// Collects every violated constraint instead of stopping at the first.
    pub fn problems(&self) -> Vec<String> {
        let m = self.m();
        let mut out = Vec::new();
        if m == 0 {
            out.push("mu must have at least one entry".to_string());
        }
        for (name, mat) in [("B", &self.b), ("V", &self.v)] {
            if mat.nrows() != m || mat.ncols() != m {
                out.push(format!("{name} must be {m}x{m}"));
            } else if SpdFactor::new(mat).is_err() || (mat - mat.transpose()).amax() > 1e-12 {
                out.push(format!("{name} must be symmetric positive definite"));
            }
        }
        if !(self.rho >= m as f64) {
            out.push(format!("rho must be at least {m}, got {}", self.rho));
        }
        for (name, v) in [
            ("alpha_sigma", self.alpha_sigma),
            ("q_sigma", self.q_sigma),
            ("alpha_tau", self.alpha_tau),
            ("q_tau", self.q_tau),
            ("lambda_g", self.lambda_g),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                out.push(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.tree_a > 0.0 && self.tree_a < 1.0) {
            out.push(format!("tree_a must lie in (0, 1), got {}", self.tree_a));
        }
        if !(self.tree_b >= 0.0) {
            out.push(format!("tree_b must be nonnegative, got {}", self.tree_b));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(TgpError::Config(p))
        }
    }

    pub fn b_inv(&self) -> Result<DMatrix<f64>> {
        spd_inverse(&self.b)
    }
}

/// Shared hierarchical parameters (beta0, W), updated once per round.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperState {
    pub beta0: DVector<f64>,
    pub w: DMatrix<f64>,
    pub w_inv: DMatrix<f64>,
    pub w_log_det: f64,
}

impl HyperState {
    pub fn new(beta0: DVector<f64>, w: DMatrix<f64>) -> Result<Self> {
        let factor = SpdFactor::new(&w)?;
        Ok(HyperState {
            beta0,
            w_inv: factor.inverse(),
            w_log_det: factor.log_det(),
            w,
        })
    }

    /// Build from a draw of W^{-1}.
    pub fn from_w_inv(beta0: DVector<f64>, w_inv: DMatrix<f64>) -> Result<Self> {
        let factor = SpdFactor::new(&w_inv)?;
        Ok(HyperState {
            beta0,
            w: factor.inverse(),
            w_log_det: -factor.log_det(),
            w_inv,
        })
    }

    /// Starting point: beta0 = mu and W = V.
    pub fn initial(fixed: &HyperParams) -> Result<Self> {
        HyperState::new(fixed.mu.clone(), fixed.v.clone())
    }
}
