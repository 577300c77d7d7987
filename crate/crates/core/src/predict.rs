//! Kriging per posterior sample and model averaging across samples.
//!
//! Within one leaf the prediction at x is normal with
//!
//! ```text
//! mean = f(x)^T b + k(x)^T K^-1 (Z - F b)
//! var  = sigma^2 [kappa(x, x) - q(x)^T C^-1 q(x)]
//! ```
//!
//! where b is the conditional mean of beta, C = K + tau^2 F W F^T,
//! q(x) = k(x) + tau^2 F W f(x) and kappa(x, y) = K(x, y) + tau^2 f(x)^T W f(y).
//! The nugget enters kappa(x, x), so intervals cover new noisy responses.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Result, TgpError};
use crate::kernel::{build_corr_matrix, cross_correlations, SpdFactor};
use crate::leaf_gp::{dist, regressors, BetaPosterior, HyperState, LeafParams, RegionData};
use crate::sampler::PosteriorSample;
use crate::tree::{partition, Tree};

/// Cached kriging quantities of one leaf.
#[derive(Debug, Clone)]
pub struct LeafPredictor {
    points: Vec<Vec<f64>>,
    f: DMatrix<f64>,
    params: LeafParams,
    w: DMatrix<f64>,
    beta_tilde: DVector<f64>,
    /// K^-1 (Z - F beta_tilde)
    weights: DVector<f64>,
    c: SpdFactor,
}

impl LeafPredictor {
    pub fn new(region: &RegionData, params: &LeafParams, hyper: &HyperState) -> Result<Self> {
        let corr = build_corr_matrix(&region.point_refs(), &params.corr)?;
        let kinv_f = corr.solve_mat(&region.f);
        let kinv_z = corr.solve_vec(&region.z);
        let post = BetaPosterior::from_stats(
            &region.f.tr_mul(&kinv_f),
            &region.f.tr_mul(&kinv_z),
            region.z.dot(&kinv_z),
            params.tau2,
            hyper,
        )?;
        let resid = &region.z - &region.f * &post.mean;
        let weights = corr.solve_vec(&resid);
        let c = &corr.k + &region.f * &hyper.w * region.f.transpose() * params.tau2;
        Ok(LeafPredictor {
            points: region.points.clone(),
            f: region.f.clone(),
            params: params.clone(),
            w: hyper.w.clone(),
            beta_tilde: post.mean,
            weights,
            c: SpdFactor::new(&c)?,
        })
    }

    /// Predictive mean and variance at `x`.
    pub fn moments(&self, x: &[f64]) -> Result<(f64, f64)> {
        let dim = self.points.first().map_or(x.len(), |p| p.len());
        if x.len() != dim {
            return Err(TgpError::DimensionMismatch {
                expected: dim,
                found: x.len(),
            });
        }
        let refs: Vec<&[f64]> = self.points.iter().map(|p| p.as_slice()).collect();
        let k = cross_correlations(x, &refs, &self.params.corr);
        let fx = regressors(x);
        let mean = fx.dot(&self.beta_tilde) + k.dot(&self.weights);
        let tau2 = self.params.tau2;
        let wf = &self.w * &fx;
        let q = &k + &self.f * &wf * tau2;
        let kappa = 1.0 + self.params.corr.nugget + tau2 * fx.dot(&wf);
        let reduction = self.c.whiten_vec(&q).norm_squared();
        let var = self.params.sigma2 * (kappa - reduction);
        if !(var > 0.0) || !var.is_finite() {
            return Err(TgpError::Numeric(format!(
                "predictive variance {var} is not positive"
            )));
        }
        Ok((mean, var))
    }
}

/// Moments at `x` for one leaf; see [`LeafPredictor`].
pub fn predictive_moments(
    x: &[f64],
    region: &RegionData,
    params: &LeafParams,
    hyper: &HyperState,
) -> Result<(f64, f64)> {
    LeafPredictor::new(region, params, hyper)?.moments(x)
}

/// Leaf rows of a stored tree, re-derived from the training inputs when
/// the sample does not carry them.
fn leaf_rows(tree: &Tree<LeafParams>, x: &[Vec<f64>]) -> Result<Vec<Vec<usize>>> {
    let leaves = tree.leaves();
    if leaves.iter().all(|l| !l.rows.is_empty()) {
        return Ok(leaves.iter().map(|l| l.rows.clone()).collect());
    }
    partition(tree, x, 1)
}

/// Per-query (mean, variance) under one posterior sample, on the scaled
/// response. Queries are routed by the sample's tree.
pub fn predict_sample(
    queries: &[Vec<f64>],
    sample: &PosteriorSample,
    x: &[Vec<f64>],
    z: &[f64],
) -> Result<Vec<(f64, f64)>> {
    let dim = x.first().map_or(0, Vec::len);
    if let Some(bad) = queries.iter().find(|q| q.len() != dim) {
        return Err(TgpError::DimensionMismatch {
            expected: dim,
            found: bad.len(),
        });
    }
    let hyper = HyperState::new(sample.beta0.clone(), sample.w.clone())?;
    let leaves = sample.tree.leaves();
    let rows = leaf_rows(&sample.tree, x)?;
    let mut predictors: Vec<Option<LeafPredictor>> = vec![None; leaves.len()];
    let mut out = Vec::with_capacity(queries.len());
    for q in queries {
        let i = sample.tree.leaf_index(q);
        if predictors[i].is_none() {
            let region = RegionData::from_rows(x, z, &rows[i]);
            predictors[i] = Some(LeafPredictor::new(&region, leaves[i], &hyper)?);
        }
        let p = predictors[i].as_ref().expect("predictor built above");
        out.push(p.moments(q)?);
    }
    Ok(out)
}

/// Affine map from the standardized response back to the original units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResponseScale {
    pub mean: f64,
    pub sd: f64,
}

impl ResponseScale {
    pub const IDENTITY: ResponseScale = ResponseScale { mean: 0.0, sd: 1.0 };

    pub fn unscale(&self, v: f64) -> f64 {
        self.mean + self.sd * v
    }
}

impl Default for ResponseScale {
    fn default() -> Self {
        ResponseScale::IDENTITY
    }
}

/// Posterior predictive draws pooled over samples, one per sample and
/// query, kept sorted per query. All values are on the original scale.
#[derive(Debug, Clone)]
pub struct PooledDraws {
    /// Average of the per-sample kriging means.
    pub mean: Vec<f64>,
    /// Standard deviation of the normal mixture over samples.
    pub sd: Vec<f64>,
    pub draws: Vec<Vec<f64>>,
}

fn sample_seed(seed: u64, s: &PosteriorSample) -> u64 {
    // distinct (chain, round) pairs get distinct, well-mixed seeds
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for v in [s.chain as u64, s.round as u64] {
        h = (h ^ v).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h ^= h >> 31;
    }
    h
}

/// Mean of `values` that is independent of their order and exact when
/// they are all equal.
fn stable_mean(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let mut m = 0.0;
    for (k, v) in values.iter().enumerate() {
        m += (v - m) / (k + 1) as f64;
    }
    m
}

/// Draw one normal variate per (sample, query). Each draw has its own
/// random stream keyed by (seed, chain, round, query), so the result does
/// not depend on sample order.
pub fn pooled_draws(
    queries: &[Vec<f64>],
    samples: &[PosteriorSample],
    x: &[Vec<f64>],
    z: &[f64],
    scale: ResponseScale,
    seed: u64,
) -> Result<PooledDraws> {
    if samples.is_empty() {
        return Err(TgpError::EmptySamples);
    }
    let per_sample: Vec<Vec<(f64, f64, f64)>> = samples
        .par_iter()
        .map(|s| {
            let moments = predict_sample(queries, s, x, z)?;
            let base = sample_seed(seed, s);
            Ok(moments
                .into_iter()
                .enumerate()
                .map(|(j, (m, v))| {
                    let mut rng = ChaCha8Rng::seed_from_u64(base);
                    rng.set_stream(j as u64);
                    let draw = m + v.sqrt() * dist::standard_normal(&mut rng);
                    (m, v, draw)
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let nq = queries.len();
    let mut out = PooledDraws {
        mean: Vec::with_capacity(nq),
        sd: Vec::with_capacity(nq),
        draws: Vec::with_capacity(nq),
    };
    for j in 0..nq {
        let mut means: Vec<f64> = per_sample.iter().map(|p| p[j].0).collect();
        let mut vars: Vec<f64> = per_sample.iter().map(|p| p[j].1).collect();
        let mut second: Vec<f64> = per_sample.iter().map(|p| p[j].1 + p[j].0 * p[j].0).collect();
        let mean = stable_mean(&mut means);
        let var = if vars.iter().all(|v| *v == vars[0]) && means.iter().all(|m| *m == mean) {
            vars[0]
        } else {
            (stable_mean(&mut second) - mean * mean).max(stable_mean(&mut vars))
        };
        let mut draws: Vec<f64> = per_sample.iter().map(|p| scale.unscale(p[j].2)).collect();
        draws.sort_by(f64::total_cmp);
        out.mean.push(scale.unscale(mean));
        out.sd.push(scale.sd * var.sqrt());
        out.draws.push(draws);
    }
    Ok(out)
}

/// Empirical quantile of sorted values with linear interpolation.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = p.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Model-averaged predictions on the original response scale.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveSummary {
    pub levels: Vec<f64>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub median: Vec<f64>,
    /// quantiles[j][i] is the `levels[i]` quantile at query j.
    pub quantiles: Vec<Vec<f64>>,
    /// Pooled draws per query (one per posterior sample).
    pub draws: usize,
    /// Queries outside the unit cube of the scaled inputs.
    pub extrapolated: usize,
}

impl PredictiveSummary {
    pub fn from_draws(pooled: &PooledDraws, levels: &[f64], extrapolated: usize) -> Self {
        PredictiveSummary {
            levels: levels.to_vec(),
            mean: pooled.mean.clone(),
            sd: pooled.sd.clone(),
            median: pooled.draws.iter().map(|d| quantile(d, 0.5)).collect(),
            quantiles: pooled
                .draws
                .iter()
                .map(|d| levels.iter().map(|&p| quantile(d, p)).collect())
                .collect(),
            draws: pooled.draws.first().map_or(0, Vec::len),
            extrapolated,
        }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// Quantile column by level, e.g. `quantile_at(0.05)`.
    pub fn quantile_at(&self, level: f64) -> Option<Vec<f64>> {
        let i = self.levels.iter().position(|&l| (l - level).abs() < 1e-12)?;
        Some(self.quantiles.iter().map(|q| q[i]).collect())
    }
}

pub fn check_levels(levels: &[f64]) -> Result<()> {
    if let Some(bad) = levels.iter().find(|&&p| !(p > 0.0 && p < 1.0)) {
        return Err(TgpError::ParamDomain(format!(
            "quantile levels must lie in (0, 1), got {bad}"
        )));
    }
    Ok(())
}

fn outside_unit_cube(q: &[f64]) -> bool {
    q.iter().any(|&v| !(0.0..=1.0).contains(&v))
}

/// Pool one predictive draw per sample and query and summarize. Queries
/// are in scaled input coordinates.
pub fn aggregate(
    queries: &[Vec<f64>],
    samples: &[PosteriorSample],
    x: &[Vec<f64>],
    z: &[f64],
    levels: &[f64],
    scale: ResponseScale,
    seed: u64,
) -> Result<PredictiveSummary> {
    check_levels(levels)?;
    let pooled = pooled_draws(queries, samples, x, z, scale, seed)?;
    let extrapolated = queries.iter().filter(|q| outside_unit_cube(q)).count();
    Ok(PredictiveSummary::from_draws(&pooled, levels, extrapolated))
}

/// Column name of a quantile level: 0.05 -> q05, 0.975 -> q97.5.
pub fn quantile_name(level: f64) -> String {
    let pct = level * 100.0;
    if (pct - pct.round()).abs() < 1e-9 {
        format!("q{:02}", pct.round() as i64)
    } else {
        format!("q{}", (pct * 1e6).round() / 1e6)
    }
}

/// CSV with the query coordinates, mean, lower quantiles, median, upper
/// quantiles and the mixture standard deviation.
pub fn write_summary<W: Write>(
    summary: &PredictiveSummary,
    coords: &[Vec<f64>],
    names: &[String],
    out: W,
) -> Result<()> {
    let err = |e: csv::Error| TgpError::Parse(format!("writing predictions: {e}"));
    let mut w = csv::Writer::from_writer(out);
    let lower: Vec<usize> = (0..summary.levels.len())
        .filter(|&i| summary.levels[i] < 0.5)
        .collect();
    let upper: Vec<usize> = (0..summary.levels.len())
        .filter(|&i| summary.levels[i] >= 0.5)
        .collect();
    let mut header: Vec<String> = names.to_vec();
    header.push("mean".into());
    header.extend(lower.iter().map(|&i| quantile_name(summary.levels[i])));
    header.push("median".into());
    header.extend(upper.iter().map(|&i| quantile_name(summary.levels[i])));
    header.push("sd".into());
    w.write_record(&header).map_err(err)?;
    for (j, c) in coords.iter().enumerate() {
        let mut rec: Vec<String> = c.iter().map(|v| v.to_string()).collect();
        rec.push(summary.mean[j].to_string());
        rec.extend(lower.iter().map(|&i| summary.quantiles[j][i].to_string()));
        rec.push(summary.median[j].to_string());
        rec.extend(upper.iter().map(|&i| summary.quantiles[j][i].to_string()));
        rec.push(summary.sd[j].to_string());
        w.write_record(&rec).map_err(err)?;
    }
    w.flush()
        .map_err(|e| TgpError::Parse(format!("writing predictions: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests;
