//! Sampling and log-density helpers for the conjugate updates.
//!
//! Conventions: `Gamma(shape, rate)` for the range prior, and the
//! inverse-gamma `IG(shape, scale)` with density proportional to
//! `x^-(shape+1) exp(-scale / x)`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::error::{Result, TgpError};
use crate::kernel::{symmetrize, SpdFactor};

pub fn sample_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    let g = Gamma::new(shape, 1.0 / rate)
        .map_err(|e| TgpError::ParamDomain(format!("gamma({shape}, {rate}): {e}")))?;
    Ok(g.sample(rng))
}

pub fn sample_inv_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> Result<f64> {
    if !(shape > 0.0 && scale > 0.0) || !scale.is_finite() {
        return Err(TgpError::ParamDomain(format!(
            "inverse gamma needs positive shape and scale, got ({shape}, {scale})"
        )));
    }
    Ok(1.0 / sample_gamma(shape, scale, rng)?)
}

pub fn sample_exp<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> Result<f64> {
    let e = Exp::new(rate).map_err(|e| TgpError::ParamDomain(format!("exp({rate}): {e}")))?;
    Ok(e.sample(rng))
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Draw from N(mean, cov) given the factor of `cov`.
pub fn sample_mvn<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    cov: &SpdFactor,
    rng: &mut R,
) -> DVector<f64> {
    let e = DVector::from_fn(mean.len(), |_, _| standard_normal(rng));
    mean + cov.upper().tr_mul(&e)
}

/// Wishart draw with the given scale matrix and degrees of freedom
/// (Bartlett decomposition). The mean of the draw is `df * scale`.
pub fn sample_wishart<R: Rng + ?Sized>(
    scale: &DMatrix<f64>,
    df: f64,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let m = scale.nrows();
    if df <= (m as f64) - 1.0 {
        return Err(TgpError::ParamDomain(format!(
            "wishart degrees of freedom {df} too small for dimension {m}"
        )));
    }
    let factor = SpdFactor::new(scale)?;
    let lower = factor.upper().transpose();
    let mut a = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        let chi2 = 2.0 * sample_gamma((df - i as f64) / 2.0, 1.0, rng)?;
        a[(i, i)] = chi2.sqrt();
        for j in 0..i {
            a[(i, j)] = standard_normal(rng);
        }
    }
    let la = lower * a;
    let mut out = &la * la.transpose();
    symmetrize(&mut out);
    Ok(out)
}

/// log of the Gamma(shape, rate) density.
pub fn ln_gamma_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

pub fn ln_inv_gamma_pdf(x: f64, shape: f64, scale: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * scale.ln() - ln_gamma(shape) - (shape + 1.0) * x.ln() - scale / x
}

/// log of the range prior: an equal mixture of Gamma(1, 20) and Gamma(10, 10).
pub fn ln_range_prior(d: f64) -> f64 {
    if d <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let a = ln_gamma_pdf(d, 1.0, 20.0);
    let b = ln_gamma_pdf(d, 10.0, 10.0);
    let hi = a.max(b);
    hi + (0.5 * ((a - hi).exp() + (b - hi).exp())).ln()
}

pub fn sample_range_prior<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // both components have valid parameters, so the draws cannot fail
    if rng.random::<bool>() {
        sample_gamma(1.0, 20.0, rng).expect("valid gamma")
    } else {
        sample_gamma(10.0, 10.0, rng).expect("valid gamma")
    }
}

pub fn ln_exp_pdf(x: f64, rate: f64) -> f64 {
    if x < 0.0 {
        f64::NEG_INFINITY
    } else {
        rate.ln() - rate * x
    }
}

pub fn ln_mvn_pdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &SpdFactor) -> f64 {
    let r = cov.whiten_vec(&(x - mean));
    -0.5 * (x.len() as f64 * (2.0 * PI).ln() + cov.log_det() + r.norm_squared())
}

fn ln_multivariate_gamma(a: f64, m: usize) -> f64 {
    let mf = m as f64;
    mf * (mf - 1.0) / 4.0 * PI.ln() + (0..m).map(|j| ln_gamma(a - j as f64 / 2.0)).sum::<f64>()
}

/// log Wishart density of `x` with the given scale and degrees of freedom.
pub fn ln_wishart_pdf(x: &DMatrix<f64>, scale: &SpdFactor, df: f64) -> Result<f64> {
    let m = x.nrows();
    let xf = SpdFactor::new(x)?;
    let tr = (scale.solve_mat(x)).trace();
    let mf = m as f64;
    Ok((df - mf - 1.0) / 2.0 * xf.log_det()
        - tr / 2.0
        - df * mf / 2.0 * 2f64.ln()
        - df / 2.0 * scale.log_det()
        - ln_multivariate_gamma(df / 2.0, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn range_prior_integrates_to_one() {
        // trapezoid on a fine grid; the mixture has negligible mass past 6
        let h = 1e-5;
        let total: f64 = (1..600_000).map(|i| ln_range_prior(i as f64 * h).exp() * h).sum();
        assert!((total - 1.0).abs() < 1e-3, "{total}");
    }

    #[test]
    fn inverse_gamma_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (shape, scale) = (6.0, 10.0);
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| sample_inv_gamma(shape, scale, &mut rng).unwrap())
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let want = scale / (shape - 1.0);
        let var = scale * scale / ((shape - 1.0).powi(2) * (shape - 2.0));
        assert!((mean - want).abs() < 3.0 * (var / n as f64).sqrt());
    }

    #[test]
    fn wishart_density_normalizes_in_one_dimension() {
        // For m = 1, W(s, df) is Gamma(df / 2, rate 1 / (2 s)).
        let scale = SpdFactor::new(&DMatrix::from_element(1, 1, 0.7)).unwrap();
        let x = DMatrix::from_element(1, 1, 1.3);
        let got = ln_wishart_pdf(&x, &scale, 4.0).unwrap();
        let want = ln_gamma_pdf(1.3, 2.0, 1.0 / 1.4);
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn wishart_rejects_small_df() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sample_wishart(&DMatrix::identity(3, 3), 1.5, &mut rng).is_err());
    }
}
