//! Fit a two-input surface with a sharp ridge and input-dependent noise,
//! then predict a one-input slice with intervals.
//!
//! ```text
//! cargo run --release --example lgbb_slice
//! ```

use treed_gp::cli_io::commands::grid_points;
use treed_gp::cli_io::synthetic::LgbbLike;
use treed_gp::cli_io::{fit, FitConfig, FittedModel};
use treed_gp::kernel::CorrFamily;
use treed_gp::sampler::McmcConfig;

fn main() -> treed_gp::error::Result<()> {
    let data = LgbbLike::default().generate(1)?;
    let out = std::env::temp_dir().join(format!("tgp-lgbb-{}", std::process::id()));
    let mut cfg = FitConfig::new("synthetic");
    cfg.out = out.clone();
    cfg.family = CorrFamily::Separable;
    cfg.mcmc = McmcConfig::new(4_000, 1_000, 5, 2, 2);
    let report = fit(&cfg, &data)?;
    println!("mean leaf count {:.2}", report.mean_leaves);

    let model = FittedModel::load(&out)?;
    let alpha = 10.0;
    let slice = grid_points(&[25, 1], &model.data.scale, &model.data.input_names, &[("alpha".into(), alpha)])?;
    let s = model.predict(&slice, &[0.05, 0.95], 0)?;
    let (lo, hi) = (s.quantile_at(0.05).unwrap(), s.quantile_at(0.95).unwrap());
    println!("slice at alpha = {alpha}");
    println!("{:>6} {:>8} {:>8} {:>8} {:>8}", "mach", "truth", "q05", "mean", "q95");
    for (j, q) in slice.iter().enumerate() {
        println!(
            "{:>6.2} {:>8.3} {:>8.3} {:>8.3} {:>8.3}",
            q[0],
            LgbbLike::mean(q[0], alpha),
            lo[j],
            s.mean[j],
            hi[j]
        );
    }
    std::fs::remove_dir_all(&out).ok();
    Ok(())
}
