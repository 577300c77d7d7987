//! Power-family correlation functions, correlation matrices with a nugget,
//! and the symmetric positive definite algebra the rest of the crate uses.
//!
//! All distances are measured on the unit-cube scale, so range parameters
//! are unitless.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, TgpError};

/// Smallest nugget a proposal may take before it is rejected outright.
pub const NUGGET_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrFamily {
    /// One range parameter shared by every input dimension.
    Isotropic,
    /// One range parameter per input dimension.
    Separable,
}

impl CorrFamily {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "isotropic" | "iso" => Some(CorrFamily::Isotropic),
            "separable" | "sep" => Some(CorrFamily::Separable),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CorrFamily::Isotropic => "isotropic",
            CorrFamily::Separable => "separable",
        }
    }

    /// Number of range parameters for inputs of dimension `dim`.
    pub fn range_len(self, dim: usize) -> usize {
        match self {
            CorrFamily::Isotropic => 1,
            CorrFamily::Separable => dim,
        }
    }
}

/// Correlation parameters of one region: range(s), nugget and the fixed power.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrParams {
    pub family: CorrFamily,
    pub range: Vec<f64>,
    pub nugget: f64,
    pub power: f64,
}

impl CorrParams {
    pub fn isotropic(range: f64, nugget: f64, power: f64) -> Result<Self> {
        let p = CorrParams {
            family: CorrFamily::Isotropic,
            range: vec![range],
            nugget,
            power,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn separable(range: Vec<f64>, nugget: f64, power: f64) -> Result<Self> {
        let p = CorrParams {
            family: CorrFamily::Separable,
            range,
            nugget,
            power,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        check_power(self.power)?;
        if !(self.nugget > 0.0) || !self.nugget.is_finite() {
            return Err(TgpError::ParamDomain(format!(
                "nugget must be positive, got {}",
                self.nugget
            )));
        }
        if self.range.is_empty() {
            return Err(TgpError::ParamDomain("empty range vector".into()));
        }
        if self.family == CorrFamily::Isotropic && self.range.len() != 1 {
            return Err(TgpError::DimensionMismatch {
                expected: 1,
                found: self.range.len(),
            });
        }
        for &d in &self.range {
            check_range(d)?;
        }
        Ok(())
    }

    /// Underlying correlation K*(x1, x2) without the nugget. Inputs are
    /// assumed already validated.
    pub fn correlation(&self, x1: &[f64], x2: &[f64]) -> f64 {
        match self.family {
            CorrFamily::Isotropic => {
                let sq: f64 = x1.iter().zip(x2).map(|(a, b)| (a - b) * (a - b)).sum();
                (-powered_distance(sq, self.power) / self.range[0]).exp()
            }
            CorrFamily::Separable => {
                let s: f64 = x1
                    .iter()
                    .zip(x2)
                    .zip(&self.range)
                    .map(|((a, b), d)| abs_pow((a - b).abs(), self.power) / d)
                    .sum();
                (-s).exp()
            }
        }
    }
}

fn check_power(p0: f64) -> Result<()> {
    if p0 > 0.0 && p0 <= 2.0 {
        Ok(())
    } else {
        Err(TgpError::ParamDomain(format!(
            "power must lie in (0, 2], got {p0}"
        )))
    }
}

fn check_range(d: f64) -> Result<()> {
    if d > 0.0 && d.is_finite() {
        Ok(())
    } else {
        Err(TgpError::ParamDomain(format!(
            "range parameter must be positive, got {d}"
        )))
    }
}

// ||x||^p from the squared norm.
fn powered_distance(sq: f64, p0: f64) -> f64 {
    if p0 == 2.0 {
        sq
    } else if sq == 0.0 {
        0.0
    } else {
        sq.powf(p0 / 2.0)
    }
}

fn abs_pow(a: f64, p0: f64) -> f64 {
    if p0 == 2.0 {
        a * a
    } else if a == 0.0 {
        0.0
    } else {
        a.powf(p0)
    }
}

/// exp(-||x1 - x2||^p0 / d).
pub fn corr_isotropic(x1: &[f64], x2: &[f64], d: f64, p0: f64) -> Result<f64> {
    check_range(d)?;
    check_power(p0)?;
    if x1.len() != x2.len() {
        return Err(TgpError::DimensionMismatch {
            expected: x1.len(),
            found: x2.len(),
        });
    }
    let sq: f64 = x1.iter().zip(x2).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((-powered_distance(sq, p0) / d).exp())
}

/// exp(-sum_i |x1_i - x2_i|^p0 / d_i).
pub fn corr_separable(x1: &[f64], x2: &[f64], d: &[f64], p0: f64) -> Result<f64> {
    check_power(p0)?;
    if x1.len() != x2.len() {
        return Err(TgpError::DimensionMismatch {
            expected: x1.len(),
            found: x2.len(),
        });
    }
    if d.len() != x1.len() {
        return Err(TgpError::DimensionMismatch {
            expected: x1.len(),
            found: d.len(),
        });
    }
    for &di in d {
        check_range(di)?;
    }
    let s: f64 = x1
        .iter()
        .zip(x2)
        .zip(d)
        .map(|((a, b), di)| abs_pow((a - b).abs(), p0) / di)
        .sum();
    Ok((-s).exp())
}

/// Correlation with the nugget added when the two points carry the same
/// observation index. Replicated coordinates with different indices get no
/// nugget.
pub fn corr_with_nugget(
    xj: &[f64],
    xk: &[f64],
    params: &CorrParams,
    same_index: bool,
) -> Result<f64> {
    params.validate()?;
    let base = match params.family {
        CorrFamily::Isotropic => corr_isotropic(xj, xk, params.range[0], params.power)?,
        CorrFamily::Separable => corr_separable(xj, xk, &params.range, params.power)?,
    };
    Ok(if same_index { base + params.nugget } else { base })
}

/// Cholesky factor of a symmetric positive definite matrix, stored as the
/// upper triangle `R` with `A = R^T R`.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    upper: DMatrix<f64>,
}

impl SpdFactor {
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(TgpError::DimensionMismatch {
                expected: n,
                found: a.ncols(),
            });
        }
        let mut r = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            let head = r.view((0, j), (j, 1)).norm_squared();
            let pivot = a[(j, j)] - head;
            if !(pivot > 0.0) || !pivot.is_finite() {
                return Err(TgpError::IllConditioned { pivot, index: j });
            }
            let rjj = pivot.sqrt();
            r[(j, j)] = rjj;
            for i in (j + 1)..n {
                let dot = if j == 0 {
                    0.0
                } else {
                    r.view((0, j), (j, 1)).dot(&r.view((0, i), (j, 1)))
                };
                r[(j, i)] = (a[(j, i)] - dot) / rjj;
            }
        }
        Ok(SpdFactor { upper: r })
    }

    pub fn dim(&self) -> usize {
        self.upper.nrows()
    }

    pub fn upper(&self) -> &DMatrix<f64> {
        &self.upper
    }

    /// log|A| = 2 sum log R_ii.
    pub fn log_det(&self) -> f64 {
        2.0 * self.upper.diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }

    /// R^{-T} b, so that b^T A^{-1} b = |R^{-T} b|^2.
    pub fn whiten_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut y = b.clone();
        self.upper.tr_solve_upper_triangular_mut(&mut y);
        y
    }

    pub fn whiten_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = b.clone();
        self.upper.tr_solve_upper_triangular_mut(&mut y);
        y
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut y = self.whiten_vec(b);
        self.upper.solve_upper_triangular_mut(&mut y);
        y
    }

    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = self.whiten_mat(b);
        self.upper.solve_upper_triangular_mut(&mut y);
        y
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let mut inv = self.solve_mat(&DMatrix::identity(self.dim(), self.dim()));
        symmetrize(&mut inv);
        inv
    }
}

/// Replace `a` by (a + a^T) / 2 in place.
pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// Inverse of an SPD matrix via its Cholesky factor.
pub fn spd_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(SpdFactor::new(a)?.inverse())
}

/// Correlation matrix of one region with its factorization.
#[derive(Debug, Clone)]
pub struct CorrMatrix {
    pub k: DMatrix<f64>,
    pub factor: SpdFactor,
    pub log_det: f64,
}

impl CorrMatrix {
    pub fn dim(&self) -> usize {
        self.k.nrows()
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.factor.solve_vec(b)
    }

    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.factor.solve_mat(b)
    }
}

/// Builds K with K[j][k] = K*(x_j, x_k) + g 1{j = k} and factorizes it.
pub fn build_corr_matrix(points: &[&[f64]], params: &CorrParams) -> Result<CorrMatrix> {
    params.validate()?;
    let n = points.len();
    if n == 0 {
        return Err(TgpError::ParamDomain(
            "correlation matrix needs at least one point".into(),
        ));
    }
    let dim = points[0].len();
    if params.family == CorrFamily::Separable && params.range.len() != dim {
        return Err(TgpError::DimensionMismatch {
            expected: dim,
            found: params.range.len(),
        });
    }
    for p in points {
        if p.len() != dim {
            return Err(TgpError::DimensionMismatch {
                expected: dim,
                found: p.len(),
            });
        }
    }
    let mut k = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        k[(j, j)] = 1.0 + params.nugget;
        for i in (j + 1)..n {
            let v = params.correlation(points[i], points[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    let factor = SpdFactor::new(&k)?;
    let log_det = factor.log_det();
    Ok(CorrMatrix { k, factor, log_det })
}

/// Correlations k(x) between a query point and every row of `points`, no nugget.
pub fn cross_correlations(x: &[f64], points: &[&[f64]], params: &CorrParams) -> DVector<f64> {
    DVector::from_iterator(points.len(), points.iter().map(|p| params.correlation(x, p)))
}
