use rand::Rng;

use super::{
    dist, log_marginal_likelihood, marginal_from_cache, HyperParams, HyperState, LeafCache,
    LeafState,
};
use crate::error::Result;
use crate::kernel::{CorrFamily, CorrParams, NUGGET_FLOOR};

/// How the correlation parameters of a leaf are proposed each round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CorrUpdate {
    /// Nugget and all ranges proposed together, one accept/reject.
    #[default]
    Block,
    /// Nugget first, then each range component, each with its own test.
    PerComponent,
    /// Correlation parameters held at their current values.
    Fixed,
}

impl CorrUpdate {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "block" => Some(CorrUpdate::Block),
            "component" | "per_component" | "per-component" => Some(CorrUpdate::PerComponent),
            "fixed" => Some(CorrUpdate::Fixed),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CorrUpdate::Block => "block",
            CorrUpdate::PerComponent => "component",
            CorrUpdate::Fixed => "fixed",
        }
    }
}

/// Support (3x/4, 4x/3) of the sliding-window proposal around `x`.
pub fn window_bounds(x: f64) -> (f64, f64) {
    (0.75 * x, x * 4.0 / 3.0)
}

pub fn sliding_window<R: Rng + ?Sized>(x: f64, rng: &mut R) -> f64 {
    let (lo, hi) = window_bounds(x);
    rng.random_range(lo..hi)
}

/// log p(d, g): gamma-mixture prior on every range component and an
/// exponential prior on the nugget.
pub fn ln_prior_corr(corr: &CorrParams, fixed: &HyperParams) -> f64 {
    corr.range.iter().map(|&d| dist::ln_range_prior(d)).sum::<f64>()
        + dist::ln_exp_pdf(corr.nugget, fixed.lambda_g)
}

/// Draw correlation parameters from their prior.
pub fn prior_draw_corr<R: Rng + ?Sized>(
    fixed: &HyperParams,
    dim: usize,
    family: CorrFamily,
    power: f64,
    rng: &mut R,
) -> Result<CorrParams> {
    let range = (0..family.range_len(dim))
        .map(|_| dist::sample_range_prior(rng))
        .collect();
    let mut nugget = dist::sample_exp(fixed.lambda_g, rng)?;
    // an exponential draw can underflow to 0 with vanishing probability
    if nugget < NUGGET_FLOOR {
        nugget = NUGGET_FLOOR;
    }
    let p = CorrParams {
        family,
        range,
        nugget,
        power,
    };
    p.validate()?;
    Ok(p)
}

/// Log MH acceptance ratio for replacing the leaf's correlation parameters
/// by `proposed` (with its cache) under uniform sliding-window proposals.
/// The window around x has width 7x/12, so the reverse/forward proposal
/// ratio is x / x* for every changed component.
pub fn corr_log_acceptance(
    leaf: &LeafState,
    proposed: &CorrParams,
    proposed_cache: &LeafCache,
    fixed: &HyperParams,
    state: &HyperState,
) -> Result<f64> {
    let current = &leaf.params.corr;
    let before = log_marginal_likelihood(leaf, fixed, state)? + ln_prior_corr(current, fixed);
    let after = marginal_from_cache(proposed_cache, leaf.params.tau2, fixed, state)?
        + ln_prior_corr(proposed, fixed);
    let mut correction = (current.nugget / proposed.nugget).ln();
    for (d, ds) in current.range.iter().zip(&proposed.range) {
        correction += (d / ds).ln();
    }
    Ok(after - before + correction)
}

fn try_proposal<R: Rng + ?Sized>(
    leaf: &mut LeafState,
    proposed: CorrParams,
    fixed: &HyperParams,
    state: &HyperState,
    rng: &mut R,
) -> Result<bool> {
    if proposed.nugget < NUGGET_FLOOR {
        return Ok(false);
    }
    // a proposal whose correlation matrix cannot be factorized is rejected
    let cache = match LeafCache::build(&leaf.region, &proposed) {
        Ok(c) => c,
        Err(_) => return Ok(false),
    };
    let log_ratio = corr_log_acceptance(leaf, &proposed, &cache, fixed, state)?;
    let u: f64 = rng.random();
    if log_ratio >= 0.0 || u.ln() < log_ratio {
        leaf.set_corr(proposed, cache);
        Ok(true)
    } else {
        Ok(false)
    }
}

/// Sliding-window MH update of the leaf's correlation parameters. Returns
/// whether any proposal was accepted.
pub fn mh_update_corr<R: Rng + ?Sized>(
    leaf: &mut LeafState,
    fixed: &HyperParams,
    state: &HyperState,
    mode: CorrUpdate,
    rng: &mut R,
) -> Result<bool> {
    match mode {
        CorrUpdate::Fixed => Ok(false),
        CorrUpdate::Block => {
            let current = &leaf.params.corr;
            let proposed = CorrParams {
                nugget: sliding_window(current.nugget, rng),
                range: current.range.iter().map(|&d| sliding_window(d, rng)).collect(),
                ..current.clone()
            };
            try_proposal(leaf, proposed, fixed, state, rng)
        }
        CorrUpdate::PerComponent => {
            let mut any = mh_update_nugget(leaf, fixed, state, rng)?;
            for i in 0..leaf.params.corr.range.len() {
                any |= mh_update_range(leaf, i, fixed, state, rng)?;
            }
            Ok(any)
        }
    }
}

/// MH update of the nugget alone.
pub fn mh_update_nugget<R: Rng + ?Sized>(
    leaf: &mut LeafState,
    fixed: &HyperParams,
    state: &HyperState,
    rng: &mut R,
) -> Result<bool> {
    let mut proposed = leaf.params.corr.clone();
    proposed.nugget = sliding_window(proposed.nugget, rng);
    try_proposal(leaf, proposed, fixed, state, rng)
}

/// MH update of range component `i` alone.
pub fn mh_update_range<R: Rng + ?Sized>(
    leaf: &mut LeafState,
    i: usize,
    fixed: &HyperParams,
    state: &HyperState,
    rng: &mut R,
) -> Result<bool> {
    let mut proposed = leaf.params.corr.clone();
    proposed.range[i] = sliding_window(proposed.range[i], rng);
    try_proposal(leaf, proposed, fixed, state, rng)
}
