//! Fit the motorcycle impact data and print the posterior over the number
//! of regions and a table of predictive intervals.
//!
//! ```text
//! cargo run --release --example motorcycle [rounds]
//! ```

use std::path::Path;

use treed_gp::cli_io::{fit, load_csv, FitConfig, FittedModel};
use treed_gp::sampler::McmcConfig;

fn main() -> treed_gp::error::Result<()> {
    let rounds: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20_000);
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mcycle.csv");
    let out = tempfile_dir();
    let mut cfg = FitConfig::new(&path);
    cfg.out = out.clone();
    cfg.mcmc = McmcConfig::new(rounds, rounds / 4, 10, 4, 1);
    let data = load_csv(&path, None, 1)?;
    let report = fit(&cfg, &data)?;
    println!("{} samples, mean leaf count {:.2}", report.samples, report.mean_leaves);

    let model = FittedModel::load(&out)?;
    let mut counts = [0usize; 8];
    for s in &model.samples {
        counts[s.num_leaves().min(7)] += 1;
    }
    for (k, c) in counts.iter().enumerate().skip(1).filter(|(_, c)| **c > 0) {
        println!("  {k} leaves: {:.3}", *c as f64 / model.samples.len() as f64);
    }
    let map = model.map_tree()?;
    for (depth, rule) in map.tree.rules() {
        let t = model.data.scale.unscale_x(&[rule.value])[0];
        println!("  MAP split at depth {depth}: times <= {t:.1}");
    }

    let times: Vec<Vec<f64>> = (0..=22).map(|i| vec![2.5 * i as f64 + 2.4]).collect();
    let s = model.predict(&times, &[0.05, 0.95], 0)?;
    let (lo, hi) = (s.quantile_at(0.05).unwrap(), s.quantile_at(0.95).unwrap());
    println!("{:>6} {:>9} {:>9} {:>9}", "time", "q05", "mean", "q95");
    for (j, t) in times.iter().enumerate() {
        println!("{:>6.1} {:>9.2} {:>9.2} {:>9.2}", t[0], lo[j], s.mean[j], hi[j]);
    }
    std::fs::remove_dir_all(&out).ok();
    Ok(())
}

fn tempfile_dir() -> std::path::PathBuf {
    std::env::temp_dir().join(format!("tgp-motorcycle-{}", std::process::id()))
}
