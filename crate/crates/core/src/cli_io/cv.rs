//! K-fold cross-validation of predictive interval coverage.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::FitConfig;
use super::data::Dataset;
use crate::error::{Result, TgpError};
use crate::predict::{pooled_draws, quantile};
use crate::sampler::{run_chains, ModelSpec};

/// Seeded random assignment of `0..n` to `folds` groups of near-equal
/// size. Each group is sorted.
pub fn assign_folds(n: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 || folds > n {
        return Err(TgpError::ParamDomain(format!(
            "folds must lie in [2, {n}], got {folds}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = vec![Vec::new(); folds];
    for (k, i) in order.into_iter().enumerate() {
        out[k % folds].push(i);
    }
    for f in &mut out {
        f.sort_unstable();
    }
    Ok(out)
}

/// Central interval at `level` from sorted draws.
pub fn interval(sorted: &[f64], level: f64) -> (f64, f64) {
    let tail = (1.0 - level) / 2.0;
    (quantile(sorted, tail), quantile(sorted, 1.0 - tail))
}

/// Predictions for one held-out row, on the original response scale.
#[derive(Debug, Clone, PartialEq)]
pub struct HeldOut {
    pub row: usize,
    pub fold: usize,
    pub observed: f64,
    pub mean: f64,
    /// Pooled predictive draws, sorted.
    pub draws: Vec<f64>,
}

impl HeldOut {
    pub fn covered(&self, level: f64) -> bool {
        let (lo, hi) = interval(&self.draws, level);
        lo <= self.observed && self.observed <= hi
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    pub folds: usize,
    pub level: f64,
    pub fold_coverage: Vec<f64>,
    /// Share of all held-out rows inside their interval.
    pub coverage: f64,
    /// Ordered by fold, then row.
    pub held_out: Vec<HeldOut>,
}

impl CvReport {
    pub fn from_held_out(folds: usize, level: f64, held_out: Vec<HeldOut>) -> Self {
        let (fold_coverage, coverage) = coverage_at(&held_out, folds, level);
        CvReport {
            folds,
            level,
            fold_coverage,
            coverage,
            held_out,
        }
    }

    /// Per-fold and pooled coverage at another level, from the same draws.
    pub fn coverage_at(&self, level: f64) -> (Vec<f64>, f64) {
        coverage_at(&self.held_out, self.folds, level)
    }

    pub fn write_rows<W: Write>(&self, out: W) -> Result<()> {
        write_rows(&self.held_out, self.level, out)
    }

    pub fn write_summary<W: Write>(&self, out: W) -> Result<()> {
        let err = |e: csv::Error| TgpError::Parse(format!("writing report: {e}"));
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["fold", "rows", "level", "coverage"]).map_err(err)?;
        for (k, c) in self.fold_coverage.iter().enumerate() {
            let rows = self.held_out.iter().filter(|h| h.fold == k).count();
            w.write_record([k.to_string(), rows.to_string(), self.level.to_string(), c.to_string()])
                .map_err(err)?;
        }
        w.write_record([
            "all".to_string(),
            self.held_out.len().to_string(),
            self.level.to_string(),
            self.coverage.to_string(),
        ])
        .map_err(err)?;
        w.flush().map_err(|e| TgpError::Parse(e.to_string()))?;
        Ok(())
    }
}

fn coverage_at(held_out: &[HeldOut], folds: usize, level: f64) -> (Vec<f64>, f64) {
    let mut hits = vec![0usize; folds];
    let mut sizes = vec![0usize; folds];
    for h in held_out {
        sizes[h.fold] += 1;
        hits[h.fold] += usize::from(h.covered(level));
    }
    let per = hits
        .iter()
        .zip(&sizes)
        .map(|(&h, &n)| if n == 0 { 0.0 } else { h as f64 / n as f64 })
        .collect();
    let total = hits.iter().sum::<usize>() as f64 / held_out.len().max(1) as f64;
    (per, total)
}

/// One CSV row per held-out observation.
pub fn write_rows<W: Write>(held_out: &[HeldOut], level: f64, out: W) -> Result<()> {
    let err = |e: csv::Error| TgpError::Parse(format!("writing report: {e}"));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["fold", "row", "observed", "mean", "lower", "upper", "covered"])
        .map_err(err)?;
    for h in held_out {
        let (lo, hi) = interval(&h.draws, level);
        w.write_record([
            h.fold.to_string(),
            h.row.to_string(),
            h.observed.to_string(),
            h.mean.to_string(),
            lo.to_string(),
            hi.to_string(),
            u8::from(h.covered(level)).to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| TgpError::Parse(e.to_string()))?;
    Ok(())
}

/// Chain seed of fold `k`, distinct across folds.
pub fn fold_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_add((k as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Fits on the complement of one fold and predicts its rows.
pub fn run_fold(
    data: &Dataset,
    cfg: &FitConfig,
    spec: &ModelSpec,
    fold: usize,
    rows: &[usize],
) -> Result<Vec<HeldOut>> {
    let train_rows: Vec<usize> = (0..data.len()).filter(|i| rows.binary_search(i).is_err()).collect();
    let train = data.subset(&train_rows)?;
    let mut mcmc = cfg.mcmc.clone();
    mcmc.seed = fold_seed(cfg.mcmc.seed, fold);
    mcmc.checkpoint_dir = None;
    let run = run_chains(&train.x, &train.z, spec, &mcmc)?;
    if run.samples.is_empty() {
        let why = run.failures.first().map_or("no samples saved".to_string(), |f| f.message.clone());
        return Err(TgpError::Numeric(format!("fold {fold}: {why}")));
    }
    let queries: Vec<Vec<f64>> = rows.iter().map(|&i| train.scale.scale_x(&data.x_raw[i])).collect();
    let pooled = pooled_draws(&queries, &run.samples, &train.x, &train.z, train.scale.response, mcmc.seed)?;
    Ok(rows
        .iter()
        .zip(pooled.draws)
        .zip(pooled.mean)
        .map(|((&row, draws), mean)| HeldOut {
            row,
            fold,
            observed: data.z_raw[row],
            mean,
            draws,
        })
        .collect())
}

/// Runs every fold, at most `cfg.workers` at a time. All folds are checked
/// for enough training rows before any fitting starts.
pub fn cross_validate(
    data: &Dataset,
    cfg: &FitConfig,
    folds: usize,
    level: f64,
    seed: u64,
) -> Result<CvReport> {
    if !(level > 0.0 && level < 1.0) {
        return Err(TgpError::ParamDomain(format!("level must lie in (0, 1), got {level}")));
    }
    let spec = cfg.model_spec(data.dim())?;
    let groups = assign_folds(data.len(), folds, seed)?;
    let short: Vec<String> = groups
        .iter()
        .enumerate()
        .filter(|(_, g)| data.len() - g.len() < spec.n_min)
        .map(|(k, g)| {
            format!(
                "fold {k} leaves {} training rows, fewer than n_min = {}",
                data.len() - g.len(),
                spec.n_min
            )
        })
        .collect();
    if !short.is_empty() {
        return Err(TgpError::Config(short));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| TgpError::Numeric(format!("thread pool: {e}")))?;
    let per_fold: Vec<Vec<HeldOut>> = pool.install(|| {
        groups
            .par_iter()
            .enumerate()
            .map(|(k, rows)| run_fold(data, cfg, &spec, k, rows))
            .collect::<Result<_>>()
    })?;
    Ok(CvReport::from_held_out(folds, level, per_fold.into_iter().flatten().collect()))
}
