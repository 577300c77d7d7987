//! Predictive moments of a single Gaussian-process region: the mean
//! interpolates the data up to the nugget and the variance grows away
//! from it.
//!
//! ```text
//! cargo run --example kriging
//! ```

use nalgebra::{DMatrix, DVector};
use treed_gp::kernel::CorrParams;
use treed_gp::leaf_gp::{HyperState, LeafParams, RegionData};
use treed_gp::predict::LeafPredictor;

fn main() -> treed_gp::error::Result<()> {
    let xs = [0.1, 0.3, 0.45, 0.7, 0.9];
    let region = RegionData::new(
        xs.iter().map(|&v| vec![v]).collect(),
        xs.iter().map(|&v: &f64| (6.0 * v).sin()).collect(),
    );
    let params = LeafParams {
        rows: (0..xs.len()).collect(),
        beta: DVector::zeros(2),
        sigma2: 0.5,
        tau2: 1.0,
        corr: CorrParams::isotropic(0.1, 1e-4, 2.0)?,
    };
    let hyper = HyperState::new(DVector::zeros(2), DMatrix::identity(2, 2))?;
    let predictor = LeafPredictor::new(&region, &params, &hyper)?;
    println!("{:>6} {:>9} {:>9} {:>9}", "x", "truth", "mean", "sd");
    for i in 0..=20 {
        let x = i as f64 / 20.0;
        let (mean, var) = predictor.moments(&[x])?;
        println!("{x:>6.2} {:>9.4} {mean:>9.4} {:>9.4}", (6.0 * x).sin(), var.sqrt());
    }
    Ok(())
}
