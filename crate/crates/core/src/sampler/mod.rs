//! Markov chain orchestration: one tree move, then within-leaf updates,
//! then the shared hierarchical parameters, repeated for each round.
//! Chains run in parallel with independent random streams.

mod io;

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Result, TgpError};
use crate::kernel::{CorrFamily, CorrParams, SpdFactor};
use crate::leaf_gp::{
    dist, draw_beta0, draw_w, log_marginal_k, log_marginal_likelihood, prior_draw_corr,
    refresh_linear, update_leaf, CorrUpdate, HyperParams, HyperState, LeafParams, LeafState,
    RegionData,
};
use crate::tree::{
    self, partition, LeafModel, MoveKind, MoveOutcome, MoveWeights,
    SplitContext, Tree,
};

pub use io::{
    checkpoint_path, parse_checkpoint, parse_samples, write_checkpoint, write_samples,
    write_trace, Checkpoint,
};

/// Everything that defines the statistical model apart from the data.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub fixed: HyperParams,
    pub family: CorrFamily,
    pub power: f64,
    /// Minimum number of rows per leaf.
    pub n_min: usize,
    pub corr_update: CorrUpdate,
}

impl ModelSpec {
    /// Default model for `dim` inputs: isotropic Gaussian correlation and
    /// leaves of at least m + 2 rows.
    pub fn defaults(dim: usize) -> Self {
        let m = dim + 1;
        ModelSpec {
            fixed: HyperParams::defaults(m),
            family: CorrFamily::Isotropic,
            power: 2.0,
            n_min: m + 2,
            corr_update: CorrUpdate::Block,
        }
    }

    pub fn problems(&self, dim: usize) -> Vec<String> {
        let mut out = self.fixed.problems();
        if self.fixed.m() != dim + 1 {
            out.push(format!(
                "hyperparameters are sized for {} coefficients but the data need {}",
                self.fixed.m(),
                dim + 1
            ));
        }
        if !(self.power > 0.0 && self.power <= 2.0) {
            out.push(format!("power must lie in (0, 2], got {}", self.power));
        }
        if self.n_min < 1 {
            out.push("n_min must be positive".into());
        }
        out
    }

    /// Starting correlation parameters: range 0.5 in every component,
    /// nugget 0.1.
    pub fn initial_corr(&self, dim: usize) -> CorrParams {
        CorrParams {
            family: self.family,
            range: vec![0.5; self.family.range_len(dim)],
            nugget: 0.1,
            power: self.power,
        }
    }
}

/// Run length, thinning and parallelism.
#[derive(Debug, Clone, PartialEq)]
pub struct McmcConfig {
    pub rounds: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub chains: usize,
    pub seed: u64,
    pub weights: MoveWeights,
    /// Rounds between checkpoints; only used with `checkpoint_dir`.
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
}

impl McmcConfig {
    pub fn new(rounds: usize, burn_in: usize, thin: usize, chains: usize, seed: u64) -> Self {
        McmcConfig {
            rounds,
            burn_in,
            thin,
            chains,
            seed,
            weights: MoveWeights::default(),
            checkpoint_every: 1000,
            checkpoint_dir: None,
        }
    }

    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.burn_in >= self.rounds {
            out.push(format!(
                "burn_in ({}) must be smaller than rounds ({})",
                self.burn_in, self.rounds
            ));
        }
        if self.thin == 0 {
            out.push("thin must be at least 1".into());
        }
        if self.chains == 0 {
            out.push("chains must be at least 1".into());
        }
        if self.checkpoint_every == 0 {
            out.push("checkpoint_every must be at least 1".into());
        }
        if let Err(e) = self.weights.validate() {
            out.push(e.to_string());
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

    /// Whether the state after round `r` (0-based) is saved.
    pub fn is_saved(&self, r: usize) -> bool {
        r >= self.burn_in && (r - self.burn_in + 1).is_multiple_of(self.thin)
    }

    pub fn samples_per_chain(&self) -> usize {
        (self.rounds - self.burn_in) / self.thin
    }

    pub fn total_samples(&self) -> usize {
        self.chains * self.samples_per_chain()
    }
}

/// One saved draw of the tree and all parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSample {
    pub chain: usize,
    pub round: usize,
    pub tree: Tree<LeafParams>,
    pub beta0: DVector<f64>,
    pub w: DMatrix<f64>,
    pub log_posterior: f64,
}

impl PosteriorSample {
    pub fn num_leaves(&self) -> usize {
        self.tree.num_leaves()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub round: usize,
    pub chain: usize,
    pub leaves: usize,
    pub log_posterior: f64,
}

/// Proposal and acceptance counts per move type.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MoveStats {
    pub proposed: [usize; 5],
    pub accepted: [usize; 5],
}

impl MoveStats {
    fn record(&mut self, out: &MoveOutcome) {
        let i = MoveKind::ALL.iter().position(|&k| k == out.kind).unwrap_or(0);
        self.proposed[i] += usize::from(out.proposed);
        self.accepted[i] += usize::from(out.accepted);
    }

    pub fn acceptance(&self, kind: MoveKind) -> Option<f64> {
        let i = MoveKind::ALL.iter().position(|&k| k == kind)?;
        (self.proposed[i] > 0).then(|| self.accepted[i] as f64 / self.proposed[i] as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainFailure {
    pub chain: usize,
    pub round: usize,
    pub message: String,
    pub exit_code: i32,
}

#[derive(Debug, Clone, Default)]
pub struct ChainOutput {
    pub samples: Vec<PosteriorSample>,
    pub trace: Vec<TraceRow>,
    pub stats: MoveStats,
    pub failure: Option<ChainFailure>,
}

/// Pooled output of all chains, ordered by chain then round.
#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub samples: Vec<PosteriorSample>,
    pub trace: Vec<TraceRow>,
    pub stats: Vec<MoveStats>,
    pub failures: Vec<ChainFailure>,
}

/// Live state of one chain.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub chain: usize,
    /// Number of completed rounds.
    pub round: usize,
    pub tree: Tree<LeafState>,
    pub hyper: HyperState,
    pub rng: ChaCha8Rng,
}

/// Random stream of chain `chain` under the master seed.
pub fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

/// The GP leaves as seen by the tree moves: the likelihood integrates out
/// beta and sigma^2, and new leaves draw correlation parameters and tau^2
/// from their priors.
pub struct GpLeafModel<'a> {
    pub x: &'a [Vec<f64>],
    pub z: &'a [f64],
    pub spec: &'a ModelSpec,
    pub hyper: &'a HyperState,
}

impl LeafModel for GpLeafModel<'_> {
    type Leaf = LeafState;

    fn rows<'l>(&self, leaf: &'l LeafState) -> &'l [usize] {
        &leaf.params.rows
    }

    fn inherit(&self, from: &LeafState, rows: Vec<usize>) -> Result<LeafState> {
        let region = RegionData::from_rows(self.x, self.z, &rows);
        let params = LeafParams {
            rows,
            ..from.params.clone()
        };
        LeafState::new(region, params)
    }

    fn fresh<R: Rng + ?Sized>(
        &self,
        like: &LeafState,
        rows: Vec<usize>,
        rng: &mut R,
    ) -> Result<LeafState> {
        let dim = self.x[0].len();
        let fixed = &self.spec.fixed;
        let corr = prior_draw_corr(fixed, dim, self.spec.family, self.spec.power, rng)?;
        let tau2 = dist::sample_inv_gamma(fixed.alpha_tau / 2.0, fixed.q_tau / 2.0, rng)?;
        let region = RegionData::from_rows(self.x, self.z, &rows);
        let params = LeafParams {
            rows,
            tau2,
            corr,
            ..like.params.clone()
        };
        LeafState::new(region, params)
    }

    fn log_likelihood(&self, leaf: &LeafState) -> Result<f64> {
        log_marginal_likelihood(leaf, &self.spec.fixed, self.hyper)
    }

    fn refresh<R: Rng + ?Sized>(&self, leaf: &mut LeafState, rng: &mut R) -> Result<()> {
        refresh_linear(leaf, &self.spec.fixed, self.hyper, rng)
    }
}

/// Within-leaf sweep: correlation MH, sigma^2, beta and tau^2 per leaf.
pub fn update_leaves<R: Rng + ?Sized>(
    tree: &mut Tree<LeafState>,
    spec: &ModelSpec,
    hyper: &HyperState,
    rng: &mut R,
) -> Result<()> {
    for leaf in tree.leaves_mut() {
        update_leaf(leaf, &spec.fixed, hyper, spec.corr_update, rng)?;
    }
    Ok(())
}

/// beta0 given the leaves, then W given the leaves and the new beta0.
pub fn update_hierarchy<R: Rng + ?Sized>(
    leaves: &[&LeafParams],
    fixed: &HyperParams,
    hyper: &HyperState,
    rng: &mut R,
) -> Result<HyperState> {
    let beta0 = draw_beta0(leaves, fixed, hyper, rng)?;
    let with_beta0 = HyperState {
        beta0: beta0.clone(),
        ..hyper.clone()
    };
    let w = draw_w(leaves, fixed, &with_beta0, rng)?;
    HyperState::new(beta0, w)
}

/// Sampler bound to one scaled dataset and model.
pub struct Sampler<'a> {
    x: &'a [Vec<f64>],
    z: &'a [f64],
    spec: &'a ModelSpec,
    ctx: SplitContext<'a>,
}

impl<'a> Sampler<'a> {
    pub fn new(x: &'a [Vec<f64>], z: &'a [f64], spec: &'a ModelSpec) -> Result<Self> {
        if x.len() != z.len() {
            return Err(TgpError::DimensionMismatch {
                expected: x.len(),
                found: z.len(),
            });
        }
        let ctx = SplitContext::new(x, spec.n_min, spec.fixed.tree_a, spec.fixed.tree_b)?;
        let problems = spec.problems(ctx.dim());
        if !problems.is_empty() {
            return Err(TgpError::Config(problems));
        }
        if x.len() < spec.n_min {
            return Err(TgpError::Config(vec![format!(
                "{} rows is fewer than the minimum leaf size {}",
                x.len(),
                spec.n_min
            )]));
        }
        Ok(Sampler { x, z, spec, ctx })
    }

    pub fn spec(&self) -> &ModelSpec {
        self.spec
    }

    pub fn context(&self) -> &SplitContext<'a> {
        &self.ctx
    }

    fn model<'s>(&'s self, hyper: &'s HyperState) -> GpLeafModel<'s> {
        GpLeafModel {
            x: self.x,
            z: self.z,
            spec: self.spec,
            hyper,
        }
    }

    /// Single-leaf tree at the prior means, with beta and sigma^2 drawn
    /// from their conditionals.
    pub fn initial_state(&self, seed: u64, chain: usize) -> Result<ChainState> {
        let mut rng = chain_rng(seed, chain);
        let hyper = HyperState::initial(&self.spec.fixed)?;
        let rows: Vec<usize> = (0..self.x.len()).collect();
        let params = LeafParams {
            rows: rows.clone(),
            beta: self.spec.fixed.mu.clone(),
            sigma2: 1.0,
            tau2: 1.0,
            corr: self.spec.initial_corr(self.ctx.dim()),
        };
        let mut leaf = LeafState::new(RegionData::from_rows(self.x, self.z, &rows), params)?;
        refresh_linear(&mut leaf, &self.spec.fixed, &hyper, &mut rng)?;
        Ok(ChainState {
            chain,
            round: 0,
            tree: Tree::new(leaf),
            hyper,
            rng,
        })
    }

    /// Rebuild live leaves for stored parameters, re-deriving each leaf's
    /// rows from the data.
    pub fn restore_tree(&self, tree: &Tree<LeafParams>) -> Result<Tree<LeafState>> {
        let parts = partition(tree, self.x, self.spec.n_min)?;
        let mut parts = parts.into_iter();
        tree.try_map(|p| {
            let rows = parts.next().unwrap_or_default();
            let region = RegionData::from_rows(self.x, self.z, &rows);
            LeafState::new(region, LeafParams { rows, ..p.clone() })
        })
    }

    /// One round: tree move, within-leaf updates, hierarchical draws.
    pub fn round(&self, state: &mut ChainState, weights: &MoveWeights) -> Result<MoveOutcome> {
        let model = self.model(&state.hyper);
        let outcome = tree::step(&mut state.tree, &model, &self.ctx, weights, &mut state.rng)?;
        update_leaves(&mut state.tree, self.spec, &state.hyper, &mut state.rng)?;
        let leaves: Vec<&LeafParams> = state.tree.leaves().into_iter().map(|l| &l.params).collect();
        state.hyper = update_hierarchy(&leaves, &self.spec.fixed, &state.hyper, &mut state.rng)?;
        state.round += 1;
        Ok(outcome)
    }

    /// Tree shape prior + per-leaf marginal (with correlation prior) +
    /// tau^2 priors + priors of beta0 and W^{-1}.
    pub fn log_posterior(&self, state: &ChainState) -> Result<f64> {
        log_posterior(self.context(), &state.tree, &state.hyper, self.spec)
    }

    /// Saved form of the state after its latest round.
    pub fn snapshot(&self, state: &ChainState) -> Result<PosteriorSample> {
        Ok(PosteriorSample {
            log_posterior: self.log_posterior(state)?,
            ..self.snapshot_without_posterior(state)
        })
    }

    /// Run chain `chain` from its initial state.
    pub fn run_chain(&self, config: &McmcConfig, chain: usize) -> ChainOutput {
        match self.initial_state(config.seed, chain) {
            Ok(state) => self.continue_chain(config, state),
            Err(e) => ChainOutput {
                failure: Some(ChainFailure {
                    chain,
                    round: 0,
                    exit_code: e.exit_code(),
                    message: e.to_string(),
                }),
                ..ChainOutput::default()
            },
        }
    }

    /// Run `state` until `config.rounds` rounds are complete.
    pub fn continue_chain(&self, config: &McmcConfig, mut state: ChainState) -> ChainOutput {
        let mut out = ChainOutput {
            samples: Vec::with_capacity(config.samples_per_chain()),
            trace: Vec::with_capacity(config.rounds),
            ..ChainOutput::default()
        };
        while state.round < config.rounds {
            let result = self.round(&mut state, &config.weights).and_then(|o| {
                out.stats.record(&o);
                let lp = self.log_posterior(&state)?;
                out.trace.push(TraceRow {
                    round: state.round - 1,
                    chain: state.chain,
                    leaves: state.tree.num_leaves(),
                    log_posterior: lp,
                });
                if config.is_saved(state.round - 1) {
                    out.samples.push(PosteriorSample {
                        log_posterior: lp,
                        ..self.snapshot_without_posterior(&state)
                    });
                }
                if let Some(dir) = &config.checkpoint_dir {
                    if state.round.is_multiple_of(config.checkpoint_every) {
                        write_checkpoint(dir, &state)?;
                    }
                }
                Ok(())
            });
            if let Err(e) = result {
                if let Some(dir) = &config.checkpoint_dir {
                    // best effort: the failure itself is what gets reported
                    let _ = write_checkpoint(dir, &state);
                }
                out.failure = Some(ChainFailure {
                    chain: state.chain,
                    round: state.round,
                    exit_code: e.exit_code(),
                    message: e.to_string(),
                });
                break;
            }
        }
        out
    }

    fn snapshot_without_posterior(&self, state: &ChainState) -> PosteriorSample {
        PosteriorSample {
            chain: state.chain,
            // rounds are reported 0-based
            round: state.round.saturating_sub(1),
            tree: state.tree.map(|l| l.params.clone()),
            beta0: state.hyper.beta0.clone(),
            w: state.hyper.w.clone(),
            log_posterior: f64::NAN,
        }
    }

    /// Resume a chain from a checkpoint.
    pub fn resume(&self, checkpoint: &Checkpoint) -> Result<ChainState> {
        let mut rng = ChaCha8Rng::from_seed(checkpoint.rng_seed);
        rng.set_stream(checkpoint.rng_stream);
        rng.set_word_pos(checkpoint.rng_word_pos);
        Ok(ChainState {
            chain: checkpoint.chain,
            round: checkpoint.round,
            tree: self.restore_tree(&checkpoint.tree)?,
            hyper: HyperState::new(checkpoint.beta0.clone(), checkpoint.w.clone())?,
            rng,
        })
    }

    /// All chains in parallel, pooled.
    pub fn run(&self, config: &McmcConfig) -> Result<RunOutput> {
        config.validate()?;
        let outputs: Vec<ChainOutput> = (0..config.chains)
            .into_par_iter()
            .map(|c| self.run_chain(config, c))
            .collect();
        let mut run = RunOutput::default();
        for o in outputs {
            run.samples.extend(o.samples);
            run.trace.extend(o.trace);
            run.stats.push(o.stats);
            run.failures.extend(o.failure);
        }
        Ok(run)
    }
}

/// See [`Sampler::log_posterior`].
pub fn log_posterior(
    ctx: &SplitContext,
    tree: &Tree<LeafState>,
    hyper: &HyperState,
    spec: &ModelSpec,
) -> Result<f64> {
    let fixed = &spec.fixed;
    let mut lp = ctx.log_prior(tree)?;
    for leaf in tree.leaves() {
        lp += log_marginal_k(leaf, fixed, hyper)?;
        lp += dist::ln_inv_gamma_pdf(leaf.params.tau2, fixed.alpha_tau / 2.0, fixed.q_tau / 2.0);
    }
    lp += dist::ln_mvn_pdf(&hyper.beta0, &fixed.mu, &SpdFactor::new(&fixed.b)?);
    let scale = SpdFactor::new(&(&fixed.v * fixed.rho))?.inverse();
    lp += dist::ln_wishart_pdf(&hyper.w_inv, &SpdFactor::new(&scale)?, fixed.rho)?;
    Ok(lp)
}

/// Fit all chains; see [`Sampler::run`].
pub fn run_chains(
    x: &[Vec<f64>],
    z: &[f64],
    spec: &ModelSpec,
    config: &McmcConfig,
) -> Result<RunOutput> {
    Sampler::new(x, z, spec)?.run(config)
}

/// The saved sample with the highest log posterior; ties go to the
/// earliest round (then the lowest chain).
pub fn map_tree(samples: &[PosteriorSample]) -> Result<&PosteriorSample> {
    let mut best: Option<&PosteriorSample> = None;
    for s in samples {
        best = match best {
            None => Some(s),
            Some(b) => {
                let better = s.log_posterior > b.log_posterior
                    || (s.log_posterior == b.log_posterior
                        && (s.round, s.chain) < (b.round, b.chain));
                Some(if better { s } else { b })
            }
        };
    }
    best.ok_or(TgpError::EmptySamples)
}
