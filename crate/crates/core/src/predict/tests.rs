use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::kernel::{CorrFamily, CorrParams, NUGGET_FLOOR};
use crate::tree::{Node, SplitRule};

struct Instance {
    region: RegionData,
    params: LeafParams,
    hyper: HyperState,
}

fn random_spd(m: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(m, m) * 0.3
}

fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let dim = rng.random_range(1..=3);
    let n = rng.random_range(2..=12);
    let points: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..dim).map(|_| rng.random::<f64>()).collect())
        .collect();
    let z: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let power = [1.0, 1.5, 2.0][rng.random_range(0..3)];
    let nugget = rng.random_range(0.01..0.5);
    let corr = if rng.random::<bool>() {
        CorrParams::isotropic(rng.random_range(0.05..1.5), nugget, power).unwrap()
    } else {
        CorrParams::separable(
            (0..dim).map(|_| rng.random_range(0.05..1.5)).collect(),
            nugget,
            power,
        )
        .unwrap()
    };
    let m = dim + 1;
    let beta0 = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
    Instance {
        region: RegionData::new(points, z),
        params: LeafParams {
            rows: Vec::new(),
            beta: DVector::zeros(m),
            sigma2: rng.random_range(0.1..3.0),
            tau2: rng.random_range(0.1..3.0),
            corr,
        },
        hyper: HyperState::new(beta0, random_spd(m, rng)).unwrap(),
    }
}

/// Explicit correlation, written out without the kernel module.
fn corr(p: &CorrParams, a: &[f64], b: &[f64]) -> f64 {
    match p.family {
        CorrFamily::Isotropic => {
            let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
            (-d2.sqrt().powf(p.power) / p.range[0]).exp()
        }
        CorrFamily::Separable => {
            let s: f64 = a
                .iter()
                .zip(b)
                .zip(&p.range)
                .map(|((x, y), d)| (x - y).abs().powf(p.power) / d)
                .sum();
            (-s).exp()
        }
    }
}

fn f_row(x: &[f64]) -> Vec<f64> {
    std::iter::once(1.0).chain(x.iter().copied()).collect()
}

/// Condition the joint normal of (Z, z(x)) with beta ~ N(beta0, sigma^2 tau^2 W)
/// integrated out.
fn oracle(inst: &Instance, x: &[f64]) -> (f64, f64) {
    let pts = &inst.region.points;
    let n = pts.len();
    let p = &inst.params;
    let w = &inst.hyper.w;
    let fx = DVector::from_vec(f_row(x));
    let f = DMatrix::from_fn(n, fx.len(), |i, j| f_row(&pts[i])[j]);
    let mut cov = DMatrix::zeros(n + 1, n + 1);
    let mut rows_f = f.clone().insert_row(n, 0.0);
    rows_f.set_row(n, &fx.transpose());
    for i in 0..=n {
        for j in 0..=n {
            let a = if i < n { pts[i].as_slice() } else { x };
            let b = if j < n { pts[j].as_slice() } else { x };
            let k = corr(&p.corr, a, b) + if i == j { p.corr.nugget } else { 0.0 };
            let lin = (rows_f.row(i) * w * rows_f.row(j).transpose())[(0, 0)];
            cov[(i, j)] = p.sigma2 * (k + p.tau2 * lin);
        }
    }
    let mu = &rows_f * &inst.hyper.beta0;
    let s11 = cov.view((0, 0), (n, n)).into_owned();
    let s12 = cov.view((0, n), (n, 1)).into_owned();
    let inv = s11.try_inverse().unwrap();
    let dz = &inst.region.z - mu.rows(0, n);
    let mean = mu[n] + (s12.transpose() * &inv * dz)[(0, 0)];
    let var = cov[(n, n)] - (s12.transpose() * &inv * &s12)[(0, 0)];
    (mean, var)
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + b.abs())
}

#[test]
fn moments_match_joint_normal_conditioning() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..100 {
        let inst = random_instance(&mut rng);
        let dim = inst.region.points[0].len();
        let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-0.2..1.2)).collect();
        let (m, v) = predictive_moments(&x, &inst.region, &inst.params, &inst.hyper).unwrap();
        let (om, ov) = oracle(&inst, &x);
        assert!(close(m, om, 1e-8), "case {case}: mean {m} vs {om}");
        assert!(close(v, ov, 1e-8), "case {case}: var {v} vs {ov}");
    }
}

#[test]
fn tiny_nugget_interpolates_training_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut inst = random_instance(&mut rng);
    inst.params.corr.nugget = NUGGET_FLOOR;
    let pred = LeafPredictor::new(&inst.region, &inst.params, &inst.hyper).unwrap();
    for (i, p) in inst.region.points.iter().enumerate() {
        let (m, v) = pred.moments(p).unwrap();
        assert!((m - inst.region.z[i]).abs() < 1e-5, "{m} vs {}", inst.region.z[i]);
        assert!(v < 1e-5 * inst.params.sigma2, "{v}");
    }
}

#[test]
fn variance_ignores_responses_and_is_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..20 {
        let inst = random_instance(&mut rng);
        let other = RegionData::new(
            inst.region.points.clone(),
            inst.region.z.iter().map(|v| 3.0 * v - 1.0).collect(),
        );
        let dim = inst.region.points[0].len();
        let a = LeafPredictor::new(&inst.region, &inst.params, &inst.hyper).unwrap();
        let b = LeafPredictor::new(&other, &inst.params, &inst.hyper).unwrap();
        for _ in 0..5 {
            let x: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
            let (_, va) = a.moments(&x).unwrap();
            let (_, vb) = b.moments(&x).unwrap();
            assert_eq!(va, vb);
            let fx = regressors(&x);
            let kappa = 1.0
                + inst.params.corr.nugget
                + inst.params.tau2 * fx.dot(&(&inst.hyper.w * &fx));
            assert!(va <= inst.params.sigma2 * kappa * (1.0 + 1e-12));
        }
    }
}

#[test]
fn wrong_query_dimension_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let inst = random_instance(&mut rng);
    let dim = inst.region.points[0].len();
    let x = vec![0.5; dim + 1];
    assert!(matches!(
        predictive_moments(&x, &inst.region, &inst.params, &inst.hyper),
        Err(TgpError::DimensionMismatch { .. })
    ));
}

fn line_data(n: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let x: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64 / (n - 1) as f64]).collect();
    let z = x.iter().map(|p| (5.0 * p[0]).sin()).collect();
    (x, z)
}

fn leaf(sigma2: f64, range: f64) -> LeafParams {
    LeafParams {
        rows: Vec::new(),
        beta: DVector::zeros(2),
        sigma2,
        tau2: 0.5,
        corr: CorrParams::isotropic(range, 0.05, 2.0).unwrap(),
    }
}

fn sample(chain: usize, round: usize, tree: Tree<LeafParams>) -> PosteriorSample {
    PosteriorSample {
        chain,
        round,
        tree,
        beta0: DVector::from_vec(vec![0.1, -0.2]),
        w: DMatrix::identity(2, 2),
        log_posterior: 0.0,
    }
}

fn varied_samples(x: &[Vec<f64>]) -> Vec<PosteriorSample> {
    (0..12)
        .map(|r| {
            let tree = if r % 3 == 0 {
                Tree::new(leaf(0.5 + 0.1 * r as f64, 0.2))
            } else {
                Tree::from_root(Node::split(
                    SplitRule { var: 0, value: x[8 + r][0] },
                    Node::Leaf(leaf(0.3, 0.1 + 0.01 * r as f64)),
                    Node::Leaf(leaf(0.9, 0.4)),
                ))
            };
            sample(r % 2, r, tree)
        })
        .collect()
}

fn grid(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| vec![i as f64 / (n - 1) as f64]).collect()
}

#[test]
fn identical_single_leaf_samples_reproduce_kriging_mean() {
    let (x, z) = line_data(15);
    let params = leaf(0.7, 0.3);
    let samples: Vec<_> = (0..7).map(|r| sample(0, r, Tree::new(params.clone()))).collect();
    let queries = grid(9);
    let summary = aggregate(&queries, &samples, &x, &z, &[0.1, 0.9], ResponseScale::IDENTITY, 3)
        .unwrap();
    let hyper = HyperState::new(samples[0].beta0.clone(), samples[0].w.clone()).unwrap();
    let all: Vec<usize> = (0..x.len()).collect();
    let pred = LeafPredictor::new(&RegionData::from_rows(&x, &z, &all), &params, &hyper).unwrap();
    for (j, q) in queries.iter().enumerate() {
        let (m, v) = pred.moments(q).unwrap();
        assert_eq!(summary.mean[j], m);
        assert_eq!(summary.sd[j], v.sqrt());
    }
}

#[test]
fn summary_ignores_sample_order() {
    let (x, z) = line_data(30);
    let samples = varied_samples(&x);
    let mut shuffled = samples.clone();
    shuffled.reverse();
    shuffled.swap(2, 7);
    let q = grid(11);
    let levels = [0.05, 0.5, 0.95];
    let a = aggregate(&q, &samples, &x, &z, &levels, ResponseScale::IDENTITY, 9).unwrap();
    let b = aggregate(&q, &shuffled, &x, &z, &levels, ResponseScale::IDENTITY, 9).unwrap();
    assert_eq!(a, b);
    let c = aggregate(&q, &samples, &x, &z, &levels, ResponseScale::IDENTITY, 10).unwrap();
    assert_ne!(a.median, c.median);
}

#[test]
fn stored_rows_and_partitioned_rows_agree() {
    let (x, z) = line_data(30);
    let samples = varied_samples(&x);
    let with_rows: Vec<PosteriorSample> = samples
        .iter()
        .map(|s| {
            let parts = partition(&s.tree, &x, 1).unwrap();
            let mut k = 0;
            let tree = s.tree.map(|l| {
                let out = LeafParams {
                    rows: parts[k].clone(),
                    ..l.clone()
                };
                k += 1;
                out
            });
            PosteriorSample { tree, ..s.clone() }
        })
        .collect();
    let q = grid(7);
    for (a, b) in samples.iter().zip(&with_rows) {
        assert_eq!(
            predict_sample(&q, a, &x, &z).unwrap(),
            predict_sample(&q, b, &x, &z).unwrap()
        );
    }
}

#[test]
fn quantiles_increase_with_level() {
    let (x, z) = line_data(30);
    let samples = varied_samples(&x);
    let levels = [0.025, 0.05, 0.25, 0.5, 0.75, 0.95, 0.975];
    let s = aggregate(&grid(13), &samples, &x, &z, &levels, ResponseScale::IDENTITY, 1).unwrap();
    for j in 0..s.len() {
        assert!(s.quantiles[j].windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(s.quantiles[j][3], s.median[j]);
    }
    assert_eq!(s.draws, samples.len());
}

#[test]
fn back_transform_is_affine() {
    let (x, z) = line_data(30);
    let samples = varied_samples(&x);
    let q = grid(5);
    let levels = [0.05, 0.95];
    let scale = ResponseScale { mean: 12.0, sd: 3.5 };
    let a = aggregate(&q, &samples, &x, &z, &levels, ResponseScale::IDENTITY, 4).unwrap();
    let b = aggregate(&q, &samples, &x, &z, &levels, scale, 4).unwrap();
    for j in 0..q.len() {
        assert!((b.mean[j] - scale.unscale(a.mean[j])).abs() < 1e-12);
        assert!((b.sd[j] - 3.5 * a.sd[j]).abs() < 1e-12);
        assert!((b.median[j] - scale.unscale(a.median[j])).abs() < 1e-12);
        for i in 0..2 {
            assert!((b.quantiles[j][i] - scale.unscale(a.quantiles[j][i])).abs() < 1e-12);
        }
    }
}

#[test]
fn pooled_quantiles_follow_the_predictive_normal() {
    let (x, z) = line_data(15);
    let params = leaf(0.7, 0.3);
    let samples: Vec<_> = (0..4000)
        .map(|r| sample(r % 4, r, Tree::new(params.clone())))
        .collect();
    let s = aggregate(&[vec![0.37]], &samples, &x, &z, &[0.05, 0.95], ResponseScale::IDENTITY, 2)
        .unwrap();
    let (m, sd) = (s.mean[0], s.sd[0]);
    // normal quantile +-1.645 sd; Monte Carlo error with 4000 draws is ~0.04 sd
    assert!((s.quantiles[0][0] - (m - 1.6449 * sd)).abs() < 0.12 * sd);
    assert!((s.quantiles[0][1] - (m + 1.6449 * sd)).abs() < 0.12 * sd);
    assert!((s.median[0] - m).abs() < 0.08 * sd);
}

#[test]
fn extrapolated_queries_are_counted() {
    let (x, z) = line_data(30);
    let samples = varied_samples(&x);
    let q = vec![vec![-0.1], vec![0.5], vec![1.0], vec![1.3]];
    let s = aggregate(&q, &samples, &x, &z, &[0.05], ResponseScale::IDENTITY, 0).unwrap();
    assert_eq!(s.extrapolated, 2);
}

#[test]
fn bad_inputs_are_rejected() {
    let (x, z) = line_data(30);
    let q = grid(3);
    assert!(matches!(
        aggregate(&q, &[], &x, &z, &[0.5], ResponseScale::IDENTITY, 0),
        Err(TgpError::EmptySamples)
    ));
    let samples = varied_samples(&x);
    assert!(aggregate(&q, &samples, &x, &z, &[1.0], ResponseScale::IDENTITY, 0).is_err());
    assert!(aggregate(&[vec![0.1, 0.2]], &samples, &x, &z, &[0.5], ResponseScale::IDENTITY, 0)
        .is_err());
}

#[test]
fn quantile_interpolates_linearly() {
    let v = [1.0, 2.0, 4.0];
    assert_eq!(quantile(&v, 0.0), 1.0);
    assert_eq!(quantile(&v, 0.25), 1.5);
    assert_eq!(quantile(&v, 0.5), 2.0);
    assert_eq!(quantile(&v, 1.0), 4.0);
    assert_eq!(quantile(&[7.0], 0.3), 7.0);
}

#[test]
fn column_names_and_csv_layout() {
    assert_eq!(quantile_name(0.05), "q05");
    assert_eq!(quantile_name(0.95), "q95");
    assert_eq!(quantile_name(0.975), "q97.5");
    let s = PredictiveSummary {
        levels: vec![0.05, 0.95],
        mean: vec![1.0],
        sd: vec![0.5],
        median: vec![1.1],
        quantiles: vec![vec![0.2, 1.8]],
        draws: 3,
        extrapolated: 0,
    };
    let mut buf = Vec::new();
    write_summary(&s, &[vec![0.25]], &["times".to_string()], &mut buf).unwrap();
    assert_eq!(
        String::from_utf8(buf).unwrap(),
        "times,mean,q05,median,q95,sd\n0.25,1,0.2,1.1,1.8,0.5\n"
    );
}
