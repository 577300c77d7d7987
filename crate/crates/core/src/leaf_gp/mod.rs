//! The per-region hierarchical GP: conjugate full conditionals for the
//! linear and variance parameters, the marginal posterior of the
//! correlation parameters with beta and sigma^2 integrated out, and the
//! Metropolis-Hastings updates of range and nugget.

mod corr_mh;
pub mod dist;
mod hyper;

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use statrs::function::gamma::ln_gamma;

pub use corr_mh::{
    corr_log_acceptance, ln_prior_corr, mh_update_corr, mh_update_nugget, mh_update_range,
    prior_draw_corr, sliding_window, window_bounds, CorrUpdate,
};
pub use hyper::{HyperParams, HyperState};

use crate::error::{Result, TgpError};
use crate::kernel::{build_corr_matrix, CorrMatrix, CorrParams, SpdFactor};

/// Design rows, regression matrix F = (1, X) and responses of one region.
#[derive(Debug, Clone)]
pub struct RegionData {
    pub points: Vec<Vec<f64>>,
    pub f: DMatrix<f64>,
    pub z: DVector<f64>,
}

impl RegionData {
    pub fn new(points: Vec<Vec<f64>>, z: Vec<f64>) -> Self {
        let n = points.len();
        let dim = points.first().map_or(0, |p| p.len());
        let f = DMatrix::from_fn(n, dim + 1, |i, j| if j == 0 { 1.0 } else { points[i][j - 1] });
        RegionData {
            points,
            f,
            z: DVector::from_vec(z),
        }
    }

    pub fn from_rows(x: &[Vec<f64>], z: &[f64], rows: &[usize]) -> Self {
        RegionData::new(
            rows.iter().map(|&r| x[r].clone()).collect(),
            rows.iter().map(|&r| z[r]).collect(),
        )
    }

    pub fn n(&self) -> usize {
        self.points.len()
    }

    pub fn point_refs(&self) -> Vec<&[f64]> {
        self.points.iter().map(|p| p.as_slice()).collect()
    }
}

/// Regression vector f(x) = (1, x).
pub fn regressors(x: &[f64]) -> DVector<f64> {
    DVector::from_iterator(x.len() + 1, std::iter::once(1.0).chain(x.iter().copied()))
}

/// Correlation-dependent quantities reused by every conditional.
#[derive(Debug, Clone)]
pub struct LeafCache {
    pub corr: CorrMatrix,
    pub kinv_f: DMatrix<f64>,
    pub kinv_z: DVector<f64>,
    pub ftkf: DMatrix<f64>,
    pub ftkz: DVector<f64>,
    pub ztkz: f64,
}

impl LeafCache {
    pub fn build(region: &RegionData, params: &CorrParams) -> Result<Self> {
        let corr = build_corr_matrix(&region.point_refs(), params)?;
        let kinv_f = corr.solve_mat(&region.f);
        let kinv_z = corr.solve_vec(&region.z);
        let ftkf = region.f.tr_mul(&kinv_f);
        let ftkz = region.f.tr_mul(&kinv_z);
        let ztkz = region.z.dot(&kinv_z);
        Ok(LeafCache {
            corr,
            kinv_f,
            kinv_z,
            ftkf,
            ftkz,
            ztkz,
        })
    }
}

/// Parameters of one region, without any cached factorizations. This is
/// what a posterior sample stores.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafParams {
    pub rows: Vec<usize>,
    pub beta: DVector<f64>,
    pub sigma2: f64,
    pub tau2: f64,
    pub corr: CorrParams,
}

/// A region's parameters together with its data and cached factorizations.
#[derive(Debug, Clone)]
pub struct LeafState {
    pub params: LeafParams,
    pub region: RegionData,
    pub cache: LeafCache,
}

impl LeafState {
    pub fn new(region: RegionData, params: LeafParams) -> Result<Self> {
        if region.n() != params.rows.len() {
            return Err(TgpError::DimensionMismatch {
                expected: params.rows.len(),
                found: region.n(),
            });
        }
        let cache = LeafCache::build(&region, &params.corr)?;
        Ok(LeafState {
            params,
            region,
            cache,
        })
    }

    pub fn n(&self) -> usize {
        self.region.n()
    }

    pub fn m(&self) -> usize {
        self.region.f.ncols()
    }

    /// Replace the correlation parameters with an already-built cache.
    pub fn set_corr(&mut self, corr: CorrParams, cache: LeafCache) {
        self.params.corr = corr;
        self.cache = cache;
    }
}

/// Full conditional of beta given everything but sigma^2 scaling:
/// beta | rest ~ N(mean, sigma^2 cov).
#[derive(Debug, Clone)]
pub struct BetaPosterior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// Cholesky factor of the precision cov^{-1}.
    pub precision: SpdFactor,
    /// Remainder of the completed square, psi in the sigma^2 conditional.
    pub psi: f64,
}

impl BetaPosterior {
    /// Conjugate update from the sufficient statistics F^T K^-1 F, F^T K^-1 Z
    /// and Z^T K^-1 Z. Zero statistics give the prior.
    pub fn from_stats(
        ftkf: &DMatrix<f64>,
        ftkz: &DVector<f64>,
        ztkz: f64,
        tau2: f64,
        state: &HyperState,
    ) -> Result<Self> {
        let prior_prec = &state.w_inv / tau2;
        let precision_mat = ftkf + &prior_prec;
        let precision = SpdFactor::new(&precision_mat)
            .map_err(|e| TgpError::Numeric(format!("beta precision not SPD: {e}")))?;
        let prior_term = &prior_prec * &state.beta0;
        let rhs = ftkz + &prior_term;
        let mean = precision.solve_vec(&rhs);
        let psi = ztkz + state.beta0.dot(&prior_term) - rhs.dot(&mean);
        Ok(BetaPosterior {
            mean,
            cov: precision.inverse(),
            precision,
            psi,
        })
    }

    pub fn log_det_cov(&self) -> f64 {
        -self.precision.log_det()
    }
}

/// Mean and covariance (up to the sigma^2 factor) of beta's full conditional.
pub fn beta_conditional(leaf: &LeafState, state: &HyperState) -> Result<BetaPosterior> {
    BetaPosterior::from_stats(
        &leaf.cache.ftkf,
        &leaf.cache.ftkz,
        leaf.cache.ztkz,
        leaf.params.tau2,
        state,
    )
}

/// Log marginal likelihood of a region with beta and sigma^2 integrated out,
/// all normalizing constants included. The prior of the correlation
/// parameters is not included.
pub fn log_marginal_likelihood(
    leaf: &LeafState,
    fixed: &HyperParams,
    state: &HyperState,
) -> Result<f64> {
    marginal_from_cache(&leaf.cache, leaf.params.tau2, fixed, state)
}

pub(crate) fn marginal_from_cache(
    cache: &LeafCache,
    tau2: f64,
    fixed: &HyperParams,
    state: &HyperState,
) -> Result<f64> {
    let post = BetaPosterior::from_stats(&cache.ftkf, &cache.ftkz, cache.ztkz, tau2, state)?;
    let n = cache.corr.dim() as f64;
    let m = cache.ftkf.nrows() as f64;
    let (a, q) = (fixed.alpha_sigma, fixed.q_sigma);
    let qpsi = q + post.psi;
    if !(qpsi > 0.0) || !qpsi.is_finite() {
        return Err(TgpError::Numeric(format!(
            "q_sigma + psi must be positive, got {qpsi}"
        )));
    }
    let det_part = 0.5
        * (post.log_det_cov() - n * (2.0 * PI).ln() - cache.corr.log_det - state.w_log_det
            - m * tau2.ln());
    Ok(det_part + 0.5 * a * (0.5 * q).ln() + ln_gamma(0.5 * (a + n))
        - 0.5 * (a + n) * (0.5 * qpsi).ln()
        - ln_gamma(0.5 * a))
}

/// Log marginal posterior of the correlation parameters: the integrated
/// likelihood plus log p(d, g).
pub fn log_marginal_k(leaf: &LeafState, fixed: &HyperParams, state: &HyperState) -> Result<f64> {
    Ok(log_marginal_likelihood(leaf, fixed, state)? + ln_prior_corr(&leaf.params.corr, fixed))
}

/// sigma^2 | Z, K, beta0, W, tau^2 ~ IG((alpha_sigma + n)/2, (q_sigma + psi)/2).
pub fn draw_sigma2_marginal<R: Rng + ?Sized>(
    leaf: &LeafState,
    fixed: &HyperParams,
    state: &HyperState,
    rng: &mut R,
) -> Result<f64> {
    let psi = beta_conditional(leaf, state)?.psi;
    dist::sample_inv_gamma(
        0.5 * (fixed.alpha_sigma + leaf.n() as f64),
        0.5 * (fixed.q_sigma + psi),
        rng,
    )
}

/// Gibbs draw of beta given the leaf's current sigma^2.
pub fn draw_beta<R: Rng + ?Sized>(
    leaf: &LeafState,
    state: &HyperState,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let post = beta_conditional(leaf, state)?;
    Ok(sample_beta(&post, leaf.params.sigma2, rng))
}

fn sample_beta<R: Rng + ?Sized>(post: &BetaPosterior, sigma2: f64, rng: &mut R) -> DVector<f64> {
    // cov^{-1} = R^T R, so R^{-1} e has covariance cov
    let mut e = DVector::from_fn(post.mean.len(), |_, _| dist::standard_normal(rng));
    post.precision.upper().solve_upper_triangular_mut(&mut e);
    &post.mean + e * sigma2.sqrt()
}

/// tau^2 | rest ~ IG((alpha_tau + m)/2, (q_tau + b)/2) with
/// b = (beta - beta0)^T W^{-1} (beta - beta0) / sigma^2.
pub fn draw_tau2<R: Rng + ?Sized>(
    leaf: &LeafParams,
    fixed: &HyperParams,
    state: &HyperState,
    rng: &mut R,
) -> Result<f64> {
    let diff = &leaf.beta - &state.beta0;
    let b = diff.dot(&(&state.w_inv * &diff)) / leaf.sigma2;
    let m = leaf.beta.len() as f64;
    dist::sample_inv_gamma(0.5 * (fixed.alpha_tau + m), 0.5 * (fixed.q_tau + b), rng)
}

/// Scale matrix (rho V + V_hat)^{-1} and degrees of freedom rho + R of the
/// Wishart full conditional of W^{-1}.
pub fn w_inv_conditional(
    leaves: &[&LeafParams],
    fixed: &HyperParams,
    state: &HyperState,
) -> Result<(DMatrix<f64>, f64)> {
    let mut v_hat = &fixed.v * fixed.rho;
    for leaf in leaves {
        let diff = &leaf.beta - &state.beta0;
        v_hat += (&diff * diff.transpose()) / (leaf.sigma2 * leaf.tau2);
    }
    let scale = SpdFactor::new(&v_hat)
        .map_err(|e| TgpError::Numeric(format!("W scale not SPD: {e}")))?
        .inverse();
    Ok((scale, fixed.rho + leaves.len() as f64))
}

/// Draw of W from its inverse-Wishart full conditional.
pub fn draw_w<R: Rng + ?Sized>(
    leaves: &[&LeafParams],
    fixed: &HyperParams,
    state: &HyperState,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let (scale, df) = w_inv_conditional(leaves, fixed, state)?;
    let w_inv = dist::sample_wishart(&scale, df, rng)?;
    Ok(SpdFactor::new(&w_inv)
        .map_err(|e| TgpError::Numeric(format!("W^-1 draw not SPD: {e}")))?
        .inverse())
}

/// Mean and covariance of beta0's full conditional.
pub fn beta0_conditional(
    leaves: &[&LeafParams],
    fixed: &HyperParams,
    state: &HyperState,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let b_inv = fixed.b_inv()?;
    let mut weight = 0.0;
    let mut weighted_beta = DVector::zeros(fixed.m());
    for leaf in leaves {
        let w = 1.0 / (leaf.sigma2 * leaf.tau2);
        weight += w;
        weighted_beta += &leaf.beta * w;
    }
    let precision = &b_inv + &state.w_inv * weight;
    let factor = SpdFactor::new(&precision)
        .map_err(|e| TgpError::Numeric(format!("beta0 precision not SPD: {e}")))?;
    let rhs = &b_inv * &fixed.mu + &state.w_inv * weighted_beta;
    Ok((factor.solve_vec(&rhs), factor.inverse()))
}

pub fn draw_beta0<R: Rng + ?Sized>(
    leaves: &[&LeafParams],
    fixed: &HyperParams,
    state: &HyperState,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let (mean, cov) = beta0_conditional(leaves, fixed, state)?;
    let factor = SpdFactor::new(&cov)?;
    Ok(dist::sample_mvn(&mean, &factor, rng))
}

/// sigma^2 from its marginal conditional, then beta given the new sigma^2.
/// Used after a region is created by a tree move.
pub fn refresh_linear<R: Rng + ?Sized>(
    leaf: &mut LeafState,
    fixed: &HyperParams,
    state: &HyperState,
    rng: &mut R,
) -> Result<()> {
    let post = beta_conditional(leaf, state)?;
    let sigma2 = dist::sample_inv_gamma(
        0.5 * (fixed.alpha_sigma + leaf.n() as f64),
        0.5 * (fixed.q_sigma + post.psi),
        rng,
    )?;
    leaf.params.sigma2 = sigma2;
    leaf.params.beta = sample_beta(&post, sigma2, rng);
    Ok(())
}

/// One within-leaf sweep: correlation MH, sigma^2, beta, tau^2.
pub fn update_leaf<R: Rng + ?Sized>(
    leaf: &mut LeafState,
    fixed: &HyperParams,
    state: &HyperState,
    mode: CorrUpdate,
    rng: &mut R,
) -> Result<bool> {
    let accepted = mh_update_corr(leaf, fixed, state, mode, rng)?;
    refresh_linear(leaf, fixed, state, rng)?;
    leaf.params.tau2 = draw_tau2(&leaf.params, fixed, state, rng)?;
    Ok(accepted)
}
