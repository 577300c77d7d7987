//! Ten-fold cross-validation of 90% predictive interval coverage on the
//! motorcycle data.
//!
//! ```text
//! cargo run --release --example cross_validation
//! ```

use std::path::Path;

use treed_gp::cli_io::{cross_validate, load_csv, FitConfig};
use treed_gp::sampler::McmcConfig;

fn main() -> treed_gp::error::Result<()> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mcycle.csv");
    let data = load_csv(&path, None, 1)?;
    let mut cfg = FitConfig::new(&path);
    cfg.mcmc = McmcConfig::new(5_000, 1_000, 5, 2, 1);
    let report = cross_validate(&data, &cfg, 10, 0.9, 7)?;
    for (k, c) in report.fold_coverage.iter().enumerate() {
        println!("fold {k}: {c:.3}");
    }
    println!("pooled coverage at 0.9: {:.3}", report.coverage);
    for level in [0.5, 0.8, 0.95, 0.99] {
        println!("pooled coverage at {level}: {:.3}", report.coverage_at(level).1);
    }
    Ok(())
}
