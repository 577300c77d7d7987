//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line for
//! each, and exits non-zero if any failed.
//!
//! ```text
//! cargo test --release --test acceptance
//! ```

use std::path::PathBuf;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use treed_gp::cli_io::cv::cross_validate;
use treed_gp::cli_io::synthetic::{LgbbLike, StepFunction};
use treed_gp::cli_io::{
    cmd_predict, fit, load_csv, FitConfig, FittedModel, PredictRequest, QuerySource,
};
use treed_gp::kernel::{CorrFamily, CorrParams, SpdFactor};
use treed_gp::leaf_gp::dist::{sample_inv_gamma, sample_mvn, sample_wishart, standard_normal};
use treed_gp::leaf_gp::{
    update_leaf, CorrUpdate, HyperParams, HyperState, LeafParams, LeafState, RegionData,
};
use treed_gp::predict::{predict_sample, predictive_moments};
use treed_gp::sampler::{map_tree, run_chains, update_hierarchy, McmcConfig, ModelSpec};
use treed_gp::tree::{step, FlatModel, MoveWeights, Node, SplitContext, Tree};

struct Outcome {
    pass: bool,
    detail: String,
}

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

// ---------------------------------------------------------------- 1

/// Leaf count of a forward draw of the tree prior on `x`, or `None` when a
/// node picks an input with no admissible split value.
fn forward_leaves(rows: Vec<usize>, depth: usize, x: &[Vec<f64>], n_min: usize, rng: &mut ChaCha8Rng) -> Option<usize> {
    if rng.random::<f64>() >= 0.5 * (1.0 + depth as f64).powi(-2) {
        return Some(1);
    }
    let u = rng.random_range(0..x[0].len());
    let mut v: Vec<f64> = rows.iter().map(|&i| x[i][u]).collect();
    v.sort_by(f64::total_cmp);
    let choices: Vec<f64> = (0..v.len().saturating_sub(1))
        .filter(|&i| i + 1 >= n_min && v.len() - i > n_min && v[i] < v[i + 1])
        .map(|i| v[i])
        .collect();
    if choices.is_empty() {
        return None;
    }
    let s = choices[rng.random_range(0..choices.len())];
    let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x[i][u] <= s);
    Some(forward_leaves(l, depth + 1, x, n_min, rng)? + forward_leaves(r, depth + 1, x, n_min, rng)?)
}

fn histogram(sizes: &[usize], cap: usize) -> Vec<f64> {
    let mut h = vec![0.0; cap];
    for &s in sizes {
        h[s.min(cap) - 1] += 1.0;
    }
    h.iter().map(|c| c / sizes.len() as f64).collect()
}

fn prior_recovery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x: Vec<Vec<f64>> = (0..80).map(|_| vec![rng.random(), rng.random()]).collect();
    let n_min = 5;
    let mut forward = Vec::with_capacity(1_000_000);
    while forward.len() < 1_000_000 {
        if let Some(k) = forward_leaves((0..x.len()).collect(), 0, &x, n_min, &mut rng) {
            forward.push(k);
        }
    }
    let ctx = SplitContext::new(&x, n_min, 0.5, 2.0).unwrap();
    let mut tree = Tree::new((0..x.len()).collect::<Vec<usize>>());
    let w = MoveWeights::default();
    let mut chain = Vec::with_capacity(100_000);
    for _ in 0..100_000 {
        step(&mut tree, &FlatModel, &ctx, &w, &mut rng).unwrap();
        chain.push(tree.num_leaves());
    }
    let (a, b) = (histogram(&chain, 6), histogram(&forward, 6));
    let tv = 0.5 * a.iter().zip(&b).map(|(p, q)| (p - q).abs()).sum::<f64>();
    Outcome {
        pass: tv < 0.05,
        detail: format!("TV {tv:.4} (limit 0.05); chain {a:.3?} vs forward {b:.3?}"),
    }
}

// ---------------------------------------------------------------- 2

fn corr_oracle(p: &CorrParams, a: &[f64], b: &[f64]) -> f64 {
    match p.family {
        CorrFamily::Isotropic => {
            let dist2: f64 = a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum();
            (-dist2.sqrt().powf(p.power) / p.range[0]).exp()
        }
        CorrFamily::Separable => {
            let s: f64 = a
                .iter()
                .zip(b)
                .zip(&p.range)
                .map(|((u, v), d)| (u - v).abs().powf(p.power) / d)
                .sum();
            (-s).exp()
        }
    }
}

fn kriging_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(1..=10);
        let dim = rng.random_range(1..=3);
        let m = dim + 1;
        let pts: Vec<Vec<f64>> = (0..=n).map(|_| (0..dim).map(|_| rng.random()).collect()).collect();
        let family = if rng.random::<bool>() { CorrFamily::Isotropic } else { CorrFamily::Separable };
        let corr = CorrParams {
            family,
            range: (0..family.range_len(dim)).map(|_| rng.random_range(0.05..2.0)).collect(),
            nugget: rng.random_range(1e-3..0.5),
            power: [1.0, 1.5, 2.0][rng.random_range(0..3)],
        };
        let beta0 = DVector::from_fn(m, |_, _| rng.random_range(-2.0..2.0));
        let a = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
        let w = &a * a.transpose() + DMatrix::identity(m, m) * 0.5;
        let tau2 = rng.random_range(0.1..3.0);
        let sigma2 = rng.random_range(0.1..3.0);
        let z: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();

        // joint of (Z, z(x)) with beta integrated against N(beta0, sigma2 tau2 W)
        let f = DMatrix::from_fn(n + 1, m, |i, j| if j == 0 { 1.0 } else { pts[i][j - 1] });
        let k = DMatrix::from_fn(n + 1, n + 1, |i, j| {
            corr_oracle(&corr, &pts[i], &pts[j]) + if i == j { corr.nugget } else { 0.0 }
        });
        let cov = (k + &f * &w * f.transpose() * tau2) * sigma2;
        let mean = &f * &beta0;
        let czz = cov.view((0, 0), (n, n)).into_owned();
        let czq = cov.view((0, n), (n, 1)).into_owned();
        let chol = czz.cholesky().expect("SPD joint");
        let resid = DVector::from_fn(n, |i, _| z[i] - mean[i]);
        let want_mean = mean[n] + (czq.transpose() * chol.solve(&resid))[0];
        let want_var = cov[(n, n)] - (czq.transpose() * chol.solve(&czq))[(0, 0)];

        let region = RegionData::new(pts[..n].to_vec(), z);
        let params = LeafParams {
            rows: (0..n).collect(),
            beta: beta0.clone(),
            sigma2,
            tau2,
            corr,
        };
        let hyper = HyperState::new(beta0, w).unwrap();
        let (got_mean, got_var) = predictive_moments(&pts[n], &region, &params, &hyper).unwrap();
        worst = worst
            .max((got_mean - want_mean).abs() / want_mean.abs().max(1.0))
            .max((got_var - want_var).abs() / want_var.abs());
    }
    Outcome {
        pass: worst < 1e-8,
        detail: format!("largest relative error {worst:.2e} over 100 instances (limit 1e-8)"),
    }
}

// ---------------------------------------------------------------- 3

const GEWEKE_DRAWS: usize = 50_000;

fn geweke_hyper() -> HyperParams {
    let mut h = HyperParams::defaults(2);
    h.alpha_sigma = 10.0;
    h.q_sigma = 10.0;
    h.alpha_tau = 20.0;
    h.q_tau = 10.0;
    h.rho = 16.0;
    h
}

/// (beta0_0, beta0_1, W_00, W_11, tau2)
fn stats(hyper: &HyperState, tau2: f64) -> [f64; 5] {
    [hyper.beta0[0], hyper.beta0[1], hyper.w[(0, 0)], hyper.w[(1, 1)], tau2]
}

struct PriorDraw {
    hyper: HyperState,
    beta: DVector<f64>,
    sigma2: f64,
    tau2: f64,
}

fn draw_prior(h: &HyperParams, rng: &mut ChaCha8Rng) -> PriorDraw {
    let beta0 = sample_mvn(&h.mu, &SpdFactor::new(&h.b).unwrap(), rng);
    let scale = SpdFactor::new(&(&h.v * h.rho)).unwrap().inverse();
    let w_inv = sample_wishart(&scale, h.rho, rng).unwrap();
    let w = SpdFactor::new(&w_inv).unwrap().inverse();
    let sigma2 = sample_inv_gamma(h.alpha_sigma / 2.0, h.q_sigma / 2.0, rng).unwrap();
    let tau2 = sample_inv_gamma(h.alpha_tau / 2.0, h.q_tau / 2.0, rng).unwrap();
    let beta = sample_mvn(&beta0, &SpdFactor::new(&(&w * (sigma2 * tau2))).unwrap(), rng);
    PriorDraw {
        hyper: HyperState::new(beta0, w).unwrap(),
        beta,
        sigma2,
        tau2,
    }
}

/// Mean and standard error of each column; `batches` > 1 uses batch means.
fn moments(rows: &[[f64; 10]], batches: usize) -> Vec<(f64, f64)> {
    let size = rows.len() / batches;
    (0..10)
        .map(|c| {
            let mean = rows.iter().map(|r| r[c]).sum::<f64>() / rows.len() as f64;
            let (var, n) = if batches > 1 {
                let bm: Vec<f64> = rows
                    .chunks(size)
                    .map(|ch| ch.iter().map(|r| r[c]).sum::<f64>() / ch.len() as f64)
                    .collect();
                (bm.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (bm.len() - 1) as f64, bm.len())
            } else {
                (rows.iter().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / (rows.len() - 1) as f64, rows.len())
            };
            (mean, (var / n as f64).sqrt())
        })
        .collect()
}

fn with_squares(s: [f64; 5]) -> [f64; 10] {
    let mut out = [0.0; 10];
    for i in 0..5 {
        out[i] = s[i];
        out[5 + i] = s[i] * s[i];
    }
    out
}

fn geweke() -> Outcome {
    let h = geweke_hyper();
    let pts: Vec<Vec<f64>> = [0.1, 0.3, 0.5, 0.7, 0.9].iter().map(|&v| vec![v]).collect();
    let corr = CorrParams::isotropic(0.3, 0.1, 2.0).unwrap();
    let refs: Vec<&[f64]> = pts.iter().map(Vec::as_slice).collect();
    let k = treed_gp::kernel::build_corr_matrix(&refs, &corr).unwrap().k;
    let f = DMatrix::from_fn(5, 2, |i, j| if j == 0 { 1.0 } else { pts[i][0] });
    let mut rng = ChaCha8Rng::seed_from_u64(3);

    let marginal: Vec<[f64; 10]> = (0..GEWEKE_DRAWS)
        .map(|_| {
            let d = draw_prior(&h, &mut rng);
            with_squares(stats(&d.hyper, d.tau2))
        })
        .collect();

    let d = draw_prior(&h, &mut rng);
    let mut hyper = d.hyper;
    let mut params = LeafParams {
        rows: (0..5).collect(),
        beta: d.beta,
        sigma2: d.sigma2,
        tau2: d.tau2,
        corr,
    };
    let mut successive = Vec::with_capacity(GEWEKE_DRAWS);
    for _ in 0..GEWEKE_DRAWS {
        let z = sample_mvn(&(&f * &params.beta), &SpdFactor::new(&(&k * params.sigma2)).unwrap(), &mut rng);
        let region = RegionData::new(pts.clone(), z.iter().copied().collect());
        let mut leaf = LeafState::new(region, params.clone()).unwrap();
        update_leaf(&mut leaf, &h, &hyper, CorrUpdate::Fixed, &mut rng).unwrap();
        params = leaf.params;
        hyper = update_hierarchy(&[&params], &h, &hyper, &mut rng).unwrap();
        successive.push(with_squares(stats(&hyper, params.tau2)));
    }

    let a = moments(&marginal, 1);
    let b = moments(&successive, 50);
    let names = ["b0_0", "b0_1", "W_00", "W_11", "tau2"];
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for c in 0..10 {
        let zscore = (a[c].0 - b[c].0) / (a[c].1.powi(2) + b[c].1.powi(2)).sqrt();
        worst = worst.max(zscore.abs());
        let label = if c < 5 { names[c].to_string() } else { format!("{}^2", names[c - 5]) };
        parts.push(format!("{label} {zscore:+.2}"));
    }
    Outcome {
        pass: worst < 4.0,
        detail: format!("max |z| {worst:.2} (limit 4); {}", parts.join(", ")),
    }
}

// ---------------------------------------------------------------- 4, 5

fn motorcycle_config(out: PathBuf) -> FitConfig {
    let mut cfg = FitConfig::new(data_dir().join("mcycle.csv"));
    cfg.out = out;
    cfg.mcmc = McmcConfig::new(20_000, 5_000, 10, 4, 1);
    cfg
}

fn motorcycle(dir: &std::path::Path) -> (Outcome, Outcome) {
    let cfg = motorcycle_config(dir.to_path_buf());
    let data = load_csv(&cfg.data, None, 1).unwrap();
    let report = fit(&cfg, &data).unwrap();
    let model = FittedModel::load(dir).unwrap();
    let mut counts = [0usize; 16];
    for s in &model.samples {
        counts[s.num_leaves().min(15)] += 1;
    }
    let mode = (0..16).max_by_key(|&k| (counts[k], std::cmp::Reverse(k))).unwrap();
    let mean = report.mean_leaves;
    let partitions = Outcome {
        pass: (2.5..=4.0).contains(&mean) && mode == 3,
        detail: format!(
            "mean leaves {mean:.3} (want [2.5, 4.0]), mode {mode} (want 3); counts for 1..6 leaves {:?}",
            &counts[1..7]
        ),
    };

    let times: Vec<Vec<f64>> = (0..=110).map(|i| vec![2.4 + 0.5 * i as f64]).collect();
    let summary = model.predict(&times, &[0.05, 0.95], 11).unwrap();
    let lo = summary.quantile_at(0.05).unwrap();
    let hi = summary.quantile_at(0.95).unwrap();
    let width = |keep: &dyn Fn(f64) -> bool| {
        let w: Vec<f64> = times
            .iter()
            .enumerate()
            .filter(|(_, t)| keep(t[0]))
            .map(|(j, _)| hi[j] - lo[j])
            .collect();
        w.iter().sum::<f64>() / w.len() as f64
    };
    let middle = width(&|t| (15.0..=30.0).contains(&t));
    let early = width(&|t| t < 12.0);
    let hetero = Outcome {
        pass: middle > 3.0 * early,
        detail: format!(
            "mean 90% width {middle:.2} over [15, 30] ms vs {early:.2} below 12 ms, ratio {:.1} (want > 3)",
            middle / early
        ),
    };
    (partitions, hetero)
}

// ---------------------------------------------------------------- 6

fn cv_coverage() -> Outcome {
    let mut cfg = FitConfig::new(data_dir().join("mcycle.csv"));
    cfg.mcmc = McmcConfig::new(10_000, 2_000, 5, 2, 1);
    let data = load_csv(&cfg.data, None, 1).unwrap();
    let report = cross_validate(&data, &cfg, 10, 0.9, 7).unwrap();
    let c = report.coverage;
    Outcome {
        pass: (0.85..=1.0).contains(&c),
        detail: format!(
            "pooled coverage {c:.3} (want [0.85, 1.0]); per fold {:.2?}",
            report.fold_coverage
        ),
    }
}

// ---------------------------------------------------------------- 7

fn step_recovery() -> Outcome {
    let step = StepFunction::default();
    let spec = ModelSpec::defaults(1);
    let mut hits = 0;
    let mut found = Vec::new();
    for seed in 0..20 {
        let data = step.generate(seed).unwrap();
        let run = run_chains(&data.x, &data.z, &spec, &McmcConfig::new(3_000, 1_000, 2, 1, seed)).unwrap();
        let map = map_tree(&run.samples).unwrap();
        let first = match map.tree.root() {
            Node::Split { rule, .. } => Some(data.scale.unscale_x(&[rule.value])[0]),
            Node::Leaf(_) => None,
        };
        if first.is_some_and(|s| (s - step.split).abs() <= step.cell()) {
            hits += 1;
        }
        found.push(first.map_or("none".to_string(), |s| format!("{s:.3}")));
    }
    Outcome {
        pass: hits >= 18,
        detail: format!("{hits}/20 MAP root splits within one cell of {} (want >= 18); {}", step.split, found.join(" ")),
    }
}

// ---------------------------------------------------------------- 8

fn lgbb(dir: &std::path::Path) -> Outcome {
    let data = LgbbLike::default().generate(1).unwrap();
    let mut cfg = FitConfig::new("unused");
    cfg.out = dir.to_path_buf();
    cfg.family = CorrFamily::Separable;
    cfg.mcmc = McmcConfig::new(4_000, 1_000, 5, 2, 2);
    fit(&cfg, &data).unwrap();
    let model = FittedModel::load(dir).unwrap();

    // predictive variance ignores the response values
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let other_z: Vec<f64> = (0..data.len()).map(|_| standard_normal(&mut rng)).collect();
    let probe: Vec<Vec<f64>> = (0..25).map(|_| vec![rng.random(), rng.random()]).collect();
    let mut var_gap: f64 = 0.0;
    for s in model.samples.iter().step_by(60) {
        let a = predict_sample(&probe, s, &model.data.x, &model.data.z).unwrap();
        let b = predict_sample(&probe, s, &model.data.x, &other_z).unwrap();
        for ((_, va), (_, vb)) in a.iter().zip(&b) {
            var_gap = var_gap.max((va - vb).abs() / va);
        }
    }

    // per-sample jumps across mach splits
    let mut jumps = 0;
    let mut with_mach_split = 0;
    for s in &model.samples {
        if let Some((_, rule)) = s.tree.rules().into_iter().find(|(_, r)| r.var == 0) {
            with_mach_split += 1;
            let alpha = 0.5;
            let q = vec![vec![rule.value, alpha], vec![rule.value + 1e-9, alpha]];
            let m = predict_sample(&q, s, &model.data.x, &model.data.z).unwrap();
            if (m[0].0 - m[1].0).abs() > 1e-6 {
                jumps += 1;
            }
        }
    }

    // aggregated slice over mach at fixed alpha
    let out = dir.join("slice.csv");
    let pred = cmd_predict(&PredictRequest {
        model: dir.to_path_buf(),
        queries: QuerySource::Grid("121x1".into()),
        levels: vec![0.05, 0.95],
        fix: vec![("alpha".into(), 10.0)],
        out: Some(out.clone()),
        seed: 4,
    })
    .unwrap();
    let s = &pred.summary;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for j in 0..s.len() - 1 {
        let (m0, m1) = (pred.queries[j][0], pred.queries[j + 1][0]);
        if (m0 - LgbbLike::RIDGE).abs() <= 0.5 || (m1 - LgbbLike::RIDGE).abs() <= 0.5 {
            continue;
        }
        let pooled = ((s.sd[j].powi(2) + s.sd[j + 1].powi(2)) / 2.0).sqrt();
        worst = worst.max((s.mean[j + 1] - s.mean[j]).abs() / pooled);
        checked += 1;
    }
    let rows = std::fs::read_to_string(&out).unwrap().lines().count() - 1;
    Outcome {
        pass: var_gap < 1e-10 && jumps > 0 && worst <= 3.0 && rows == 121,
        detail: format!(
            "variance change under new Z {var_gap:.1e} (limit 1e-10); {jumps}/{with_mach_split} samples with a mach split jump there; \
             largest adjacent mean step {worst:.2} pooled sd over {checked} pairs away from the ridge (limit 3); {rows} slice rows"
        ),
    }
}

// ----------------------------------------------------------------

fn main() {
    let args: Vec<String> = std::env::args().collect();
    if args.iter().any(|a| a == "--list") {
        // `cargo test -- --list` probes every target; nothing to list here
        return;
    }
    let tmp = tempfile::tempdir().unwrap();
    let mut failed = 0;
    let mut report = |id: usize, name: &str, start: Instant, o: Outcome| {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        failed += usize::from(!o.pass);
        println!("[{tag}] {id} {name}: {} ({:.1} s)", o.detail, start.elapsed().as_secs_f64());
    };
    let t = Instant::now();
    report(1, "prior recovery", t, prior_recovery());
    let t = Instant::now();
    report(2, "kriging oracle", t, kriging_oracle());
    let t = Instant::now();
    report(3, "conditional correctness", t, geweke());
    let t = Instant::now();
    let (parts, hetero) = motorcycle(&tmp.path().join("mcycle"));
    report(4, "motorcycle partition count", t, parts);
    report(5, "heteroscedasticity", t, hetero);
    let t = Instant::now();
    report(6, "cross-validation coverage", t, cv_coverage());
    let t = Instant::now();
    report(7, "step-function split recovery", t, step_recovery());
    let t = Instant::now();
    report(8, "LGBB-like pipeline", t, lgbb(&tmp.path().join("lgbb")));
    println!("{} of 8 criteria passed", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
