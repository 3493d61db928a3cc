//! Randomized quantile (Dunn–Smyth) residuals and normality checks.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF, DiscreteCDF, Normal, Poisson};

use crate::error::{Error, Result};
use crate::estimator::FitResult;
use crate::model::{DyadIndex, Family, ModelSpec, MultiviewData};

const U_CLAMP: f64 = 1e-12;
pub const DEFAULT_ENVELOPE_DRAWS: usize = 200;

/// Residuals over every observed dyad, layer-major in dyad order.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSet {
    pub residuals: Vec<f64>,
    pub uniforms: Vec<f64>,
    pub seed: u64,
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("valid normal")
}

/// `F(y - 1)` and `F(y)` for one response.
fn cdf_bounds(family: Family, y: u32, mean: f64) -> Result<(f64, f64)> {
    match family {
        Family::Bernoulli => match y {
            0 => Ok((0.0, 1.0 - mean)),
            1 => Ok((1.0 - mean, 1.0)),
            _ => Err(Error::Domain(format!("Bernoulli response {y}"))),
        },
        Family::Poisson => {
            if mean <= 0.0 {
                return Ok(if y == 0 { (0.0, 1.0) } else { (1.0, 1.0) });
            }
            let d = Poisson::new(mean).map_err(|e| Error::Domain(e.to_string()))?;
            let lower = if y == 0 { 0.0 } else { d.cdf(u64::from(y) - 1) };
            Ok((lower, d.cdf(u64::from(y))))
        }
    }
}

/// Dunn–Smyth residuals for responses with the given fitted means.
pub fn dunn_smyth_from_means(
    family: Family,
    data: &MultiviewData,
    means: &[DMatrix<f64>],
    index: &DyadIndex,
    seed: u64,
) -> Result<ResidualSet> {
    if means.len() != data.n_layers() {
        return Err(Error::Dimension(format!(
            "{} mean matrices for {} layers",
            means.len(),
            data.n_layers()
        )));
    }
    let normal = std_normal();
    let per_layer: Vec<Vec<(f64, f64)>> = means
        .par_iter()
        .enumerate()
        .map(|(k, mu)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            index
                .pairs()
                .iter()
                .map(|&(i, j)| {
                    let (lo, hi) = cdf_bounds(family, data.get(k, i, j), mu[(i, j)])?;
                    let draw: f64 = rng.random();
                    let u = (lo + draw * (hi - lo)).clamp(U_CLAMP, 1.0 - U_CLAMP);
                    Ok((u, normal.inverse_cdf(u)))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let (uniforms, residuals) = per_layer.into_iter().flatten().unzip();
    Ok(ResidualSet {
        residuals,
        uniforms,
        seed,
    })
}

/// Dunn–Smyth residuals of a fitted model.
pub fn dunn_smyth_residuals(fit: &FitResult, data: &MultiviewData, seed: u64) -> Result<ResidualSet> {
    let spec: &ModelSpec = &fit.spec;
    data.check_spec(spec)?;
    let index = DyadIndex::for_spec(spec)?;
    dunn_smyth_from_means(spec.family, data, &fit.pi_hat()?, &index, seed)
}

/// Normal Q-Q pairs with a simulated pointwise 95% envelope.
#[derive(Debug, Clone, PartialEq)]
pub struct QqData {
    pub theoretical: Vec<f64>,
    pub sample: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Sorted residuals against `Phi^-1((i - 0.5) / N)`, plus the 2.5% and 97.5%
/// pointwise quantiles of `draws` sorted standard-normal samples.
pub fn qq_data(residuals: &[f64], draws: usize, seed: u64) -> Result<QqData> {
    let n = residuals.len();
    if n == 0 {
        return Err(Error::Domain("no residuals".into()));
    }
    let normal = std_normal();
    let mut sample = residuals.to_vec();
    sample.sort_by(f64::total_cmp);
    let theoretical = (1..=n).map(|i| normal.inverse_cdf((i as f64 - 0.5) / n as f64)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sims: Vec<Vec<f64>> = vec![Vec::with_capacity(draws); n];
    for _ in 0..draws {
        let mut s: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        s.sort_by(f64::total_cmp);
        for (col, v) in sims.iter_mut().zip(s) {
            col.push(v);
        }
    }
    let (mut lower, mut upper) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for col in &mut sims {
        col.sort_by(f64::total_cmp);
        lower.push(quantile(col, 0.025));
        upper.push(quantile(col, 0.975));
    }
    Ok(QqData {
        theoretical,
        sample,
        lower,
        upper,
    })
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Kolmogorov–Smirnov statistic and asymptotic p-value against `N(0, 1)`.
pub fn ks_test_normal(sample: &[f64]) -> Result<(f64, f64)> {
    let n = sample.len();
    if n == 0 {
        return Err(Error::Domain("empty sample".into()));
    }
    let normal = std_normal();
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let nf = n as f64;
    let d = sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal.cdf(x);
            (f - i as f64 / nf).max((i + 1) as f64 / nf - f)
        })
        .fold(0.0, f64::max);
    let sqrt_n = nf.sqrt();
    Ok((d, kolmogorov_sf((sqrt_n + 0.12 + 0.11 / sqrt_n) * d)))
}

/// Upper tail of the Kolmogorov distribution.
fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=200 {
        let jf = j as f64;
        let term = (-2.0 * jf * jf * lambda * lambda).exp();
        sum += if j % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Pearson chi-square test of uniformity on `bins` equal-width bins.
pub fn chi_square_uniform(uniforms: &[f64], bins: usize) -> Result<(f64, f64)> {
    if uniforms.is_empty() || bins < 2 {
        return Err(Error::Domain("need data and at least two bins".into()));
    }
    let mut counts = vec![0usize; bins];
    for &u in uniforms {
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::Domain(format!("{u} is not in [0, 1]")));
        }
        counts[((u * bins as f64) as usize).min(bins - 1)] += 1;
    }
    let expected = uniforms.len() as f64 / bins as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let chi = ChiSquared::new((bins - 1) as f64).map_err(|e| Error::Domain(e.to_string()))?;
    Ok((stat, chi.sf(stat)))
}
