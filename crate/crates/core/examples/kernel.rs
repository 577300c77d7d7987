//! Correlation matrices for the two kernel families and the effect of the
//! nugget on conditioning.
//!
//! ```text
//! cargo run --example kernel
//! ```

use treed_gp::kernel::{build_corr_matrix, CorrParams};

fn main() -> treed_gp::error::Result<()> {
    let points: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 / 5.0, (i % 3) as f64 / 2.0]).collect();
    let refs: Vec<&[f64]> = points.iter().map(Vec::as_slice).collect();

    let iso = CorrParams::isotropic(0.2, 0.01, 2.0)?;
    let sep = CorrParams::separable(vec![0.05, 1.0], 0.01, 2.0)?;
    for (name, params) in [("isotropic", &iso), ("separable", &sep)] {
        let c = build_corr_matrix(&refs, params)?;
        println!("{name} correlation, log det {:.3}", c.log_det);
        for i in 0..c.k.nrows() {
            let row: Vec<String> = (0..c.k.ncols()).map(|j| format!("{:.3}", c.k[(i, j)])).collect();
            println!("  {}", row.join(" "));
        }
    }

    // near-duplicate inputs: a tiny nugget leaves the matrix close to singular
    let close: Vec<Vec<f64>> = (0..20).map(|i| vec![0.5 + 1e-4 * i as f64]).collect();
    let refs: Vec<&[f64]> = close.iter().map(Vec::as_slice).collect();
    for nugget in [1e-8, 1e-4, 1e-2, 1e-1] {
        let params = CorrParams::isotropic(1.0, nugget, 2.0)?;
        match build_corr_matrix(&refs, &params) {
            Ok(c) => println!("nugget {nugget:e}: log det {:.2}", c.log_det),
            Err(e) => println!("nugget {nugget:e}: {e}"),
        }
    }
    Ok(())
}
