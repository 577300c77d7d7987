//! Synthetic datasets with known structure.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::data::Dataset;
use crate::error::Result;
use crate::leaf_gp::dist::standard_normal;

/// One input on an even grid over `[0, 1]`, a jump from `low` to `high`
/// at `split`, and Gaussian noise.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFunction {
    pub n: usize,
    pub split: f64,
    pub low: f64,
    pub high: f64,
    pub noise_sd: f64,
}

impl Default for StepFunction {
    fn default() -> Self {
        StepFunction {
            n: 60,
            split: 0.5,
            low: 0.0,
            high: 1.0,
            noise_sd: 0.05,
        }
    }
}

impl StepFunction {
    pub fn design(&self) -> Vec<f64> {
        (0..self.n).map(|i| i as f64 / (self.n - 1) as f64).collect()
    }

    /// Spacing of the design grid.
    pub fn cell(&self) -> f64 {
        1.0 / (self.n - 1) as f64
    }

    pub fn mean(&self, x: f64) -> f64 {
        if x < self.split {
            self.low
        } else {
            self.high
        }
    }

    pub fn generate(&self, seed: u64) -> Result<Dataset> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs = self.design();
        let z = xs
            .iter()
            .map(|&x| self.mean(x) + self.noise_sd * standard_normal(&mut rng))
            .collect();
        Dataset::new(
            "synthetic:step",
            vec!["x".into()],
            "y".into(),
            xs.into_iter().map(|x| vec![x]).collect(),
            z,
        )
    }
}

/// A two-input surface loosely shaped like a lift response over speed
/// (`mach`, 0 to 6) and angle of attack (`alpha`, -5 to 30). Lift rises
/// with alpha, climbs toward a sharp ridge at `mach = 1` and decays beyond
/// it. Noise is larger below `mach = 1.5`.
#[derive(Debug, Clone, PartialEq)]
pub struct LgbbLike {
    pub n: usize,
    pub noise_low_speed: f64,
    pub noise_high_speed: f64,
}

impl Default for LgbbLike {
    fn default() -> Self {
        LgbbLike {
            n: 160,
            noise_low_speed: 0.05,
            noise_high_speed: 0.02,
        }
    }
}

impl LgbbLike {
    pub const RIDGE: f64 = 1.0;
    pub const MACH: (f64, f64) = (0.0, 6.0);
    pub const ALPHA: (f64, f64) = (-5.0, 30.0);

    pub fn mean(mach: f64, alpha: f64) -> f64 {
        let base = 0.2 + (alpha - Self::ALPHA.0) / (Self::ALPHA.1 - Self::ALPHA.0);
        let trend = if mach <= Self::RIDGE {
            1.0 + 0.5 * mach * mach
        } else {
            1.5 / mach.sqrt()
        };
        base * trend + 0.3 * (-(mach - Self::RIDGE).abs() / 0.05).exp()
    }

    pub fn noise_sd(&self, mach: f64) -> f64 {
        if mach < 1.5 {
            self.noise_low_speed
        } else {
            self.noise_high_speed
        }
    }

    /// Half the runs cover the whole box, half the low-speed corner
    /// `mach < 2`.
    pub fn generate(&self, seed: u64) -> Result<Dataset> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::with_capacity(self.n);
        let mut z = Vec::with_capacity(self.n);
        for i in 0..self.n {
            let top = if i % 2 == 0 { Self::MACH.1 } else { 2.0 };
            let mach = rng.random_range(Self::MACH.0..top);
            let alpha = rng.random_range(Self::ALPHA.0..Self::ALPHA.1);
            z.push(Self::mean(mach, alpha) + self.noise_sd(mach) * standard_normal(&mut rng));
            x.push(vec![mach, alpha]);
        }
        Dataset::new(
            "synthetic:lgbb",
            vec!["mach".into(), "alpha".into()],
            "lift".into(),
            x,
            z,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_data_shape() {
        let s = StepFunction::default();
        let d = s.generate(3).unwrap();
        assert_eq!((d.len(), d.dim()), (60, 1));
        assert_eq!(d.x_raw[0][0], 0.0);
        assert_eq!(d.x_raw[59][0], 1.0);
        let below: Vec<f64> = d.z_raw[..30].to_vec();
        let above: Vec<f64> = d.z_raw[30..].to_vec();
        assert!(below.iter().all(|&v| v < 0.5) && above.iter().all(|&v| v > 0.5));
        assert_eq!(s.generate(3).unwrap().z_raw, d.z_raw);
    }

    #[test]
    fn lgbb_surface_shape() {
        let g = LgbbLike::default();
        let d = g.generate(1).unwrap();
        assert_eq!((d.len(), d.dim()), (160, 2));
        // continuous trend, sharp peak at the ridge
        let a = 10.0;
        let left = LgbbLike::mean(1.0 - 1e-9, a);
        let right = LgbbLike::mean(1.0 + 1e-9, a);
        assert!((left - right).abs() < 1e-6);
        assert!(LgbbLike::mean(1.0, a) > LgbbLike::mean(0.8, a) + 0.2);
        assert!(LgbbLike::mean(1.0, 30.0) > LgbbLike::mean(1.0, -5.0));
        let low_speed = d.x_raw.iter().filter(|p| p[0] < 2.0).count();
        assert!(low_speed > 90);
    }
}
