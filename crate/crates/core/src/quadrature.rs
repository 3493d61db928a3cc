//! Exact per-layer marginal likelihood by tensor-product Gauss–Hermite
//! quadrature, used as ground truth for the Laplace approximation.
//!
//! The integrand is centred at its own mode and scaled by its own
//! curvature before the rule is applied, so narrow posteriors (large
//! networks) are resolved with a modest number of points per axis. The
//! mode search here is deliberately separate from the Laplace solver.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use rayon::prelude::*;

use crate::laplace::{data_layers, laplace_loglayer, InnerOptions};
use crate::model::{
    check_sigma, conditional_logpdf, linear_predictor, log_latent_density, Loadings, ModelSpec, MultiviewData, LN_2PI,
};

pub const MAX_DIM: usize = 3;
pub const DEFAULT_ORDER: usize = 30;

/// Tensor-product rule for the standard normal weight in `dim` dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<Vec<f64>>,
    pub log_weights: Vec<f64>,
    pub order: usize,
}

/// One-dimensional Gauss–Hermite nodes and log-weights for the standard
/// normal density (weights sum to one).
pub fn gauss_hermite(order: usize) -> (Vec<f64>, Vec<f64>) {
    // Newton iteration on orthonormal Hermite polynomials for the weight
    // exp(-x^2), then rescaled to the N(0, 1) weight.
    const PIM4: f64 = 0.751_125_544_464_942_5;
    let n = order;
    let mut x = vec![0.0; n];
    let mut lw = vec![0.0; n];
    let half = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0f64;
    for i in 0..half {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.855_75 * (2.0 * nf + 1.0).powf(-0.166_67),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = PIM4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        let l = (2.0f64).ln() - 2.0 * pp.abs().ln() - 0.5 * std::f64::consts::PI.ln();
        lw[i] = l;
        lw[n - 1 - i] = l;
    }
    let nodes = x.iter().map(|v| v * std::f64::consts::SQRT_2).collect();
    (nodes, lw)
}

impl QuadratureRule {
    pub fn new(dim: usize, order: usize) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::Unsupported(format!(
                "quadrature supports 1..={MAX_DIM} dimensions, got {dim}"
            )));
        }
        if order == 0 {
            return Err(Error::InvalidSpec("quadrature order must be positive".into()));
        }
        let (x, lw) = gauss_hermite(order);
        let total = order.pow(dim as u32);
        let mut nodes = Vec::with_capacity(total);
        let mut log_weights = Vec::with_capacity(total);
        for flat in 0..total {
            let mut rem = flat;
            let mut node = Vec::with_capacity(dim);
            let mut l = 0.0;
            for _ in 0..dim {
                let i = rem % order;
                rem /= order;
                node.push(x[i]);
                l += lw[i];
            }
            nodes.push(node);
            log_weights.push(l);
        }
        Ok(Self {
            nodes,
            log_weights,
            order,
        })
    }

    pub fn dim(&self) -> usize {
        self.nodes.first().map_or(0, Vec::len)
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Log of the integrand: edge log-likelihood plus latent log-density.
fn log_integrand(alpha: &Loadings, y: &[u32], sigma: &DMatrix<f64>, spec: &ModelSpec, z: &[f64]) -> Result<f64> {
    let offset = spec.factor_offset();
    let mut total = log_latent_density(z, sigma)?;
    for (d, &yd) in y.iter().enumerate() {
        total += conditional_logpdf(spec.family, i64::from(yd), linear_predictor(alpha.row(d), z, offset))?;
    }
    Ok(total)
}

/// Mode and negative Hessian of the log integrand, found by a plain damped
/// Newton iteration.
fn centre(alpha: &Loadings, y: &[u32], sigma_inv: &DMatrix<f64>, sigma: &DMatrix<f64>, spec: &ModelSpec) -> Option<(Vec<f64>, DMatrix<f64>)> {
    let q = spec.q;
    let offset = spec.factor_offset();
    let mut z = vec![0.0; q];
    let derivs = |z: &[f64]| {
        let mut g = vec![0.0; q];
        let mut h = sigma_inv.clone();
        for r in 0..q {
            for s in 0..q {
                g[r] -= sigma_inv[(r, s)] * z[s];
            }
        }
        for (d, &yd) in y.iter().enumerate() {
            let row = alpha.row(d);
            let eta = linear_predictor(row, z, offset);
            let mu = spec.family.mean(eta);
            let w = spec.family.weight(eta);
            for r in 0..q {
                g[r] += (f64::from(yd) - mu) * row[offset + r];
                for s in 0..q {
                    h[(r, s)] += w * row[offset + r] * row[offset + s];
                }
            }
        }
        (g, h)
    };
    let mut f = log_integrand(alpha, y, sigma, spec, &z).ok()?;
    for _ in 0..200 {
        let (g, h) = derivs(&z);
        if g.iter().all(|v| v.abs() < 1e-12 * (1.0 + f.abs())) {
            return Some((z, h));
        }
        let step = h.clone().cholesky()?.solve(&DVector::from_vec(g));
        let mut t = 1.0;
        loop {
            let trial: Vec<f64> = z.iter().zip(step.iter()).map(|(a, b)| a + t * b).collect();
            let ft = log_integrand(alpha, y, sigma, spec, &trial).ok()?;
            if ft >= f || t < 1e-10 {
                if ft >= f {
                    z = trial;
                    f = ft;
                }
                break;
            }
            t *= 0.5;
        }
        if t < 1e-10 {
            break;
        }
    }
    let (_, h) = derivs(&z);
    Some((z, h))
}

/// Exact log marginal density of one layer, `log ∫ prod g(y|z) h(z) dz`,
/// by tensor Gauss–Hermite quadrature with `order` points per axis.
pub fn marginal_loglayer_quadrature(
    alpha: &Loadings,
    y_layer: &[u32],
    sigma: &DMatrix<f64>,
    spec: &ModelSpec,
    order: usize,
) -> Result<f64> {
    if spec.q > MAX_DIM {
        return Err(Error::Unsupported(format!(
            "exact quadrature supports q <= {MAX_DIM}, got q = {}",
            spec.q
        )));
    }
    if order < 10 {
        return Err(Error::InvalidSpec(format!("quadrature order must be at least 10, got {order}")));
    }
    if alpha.n_rows() != y_layer.len() || alpha.n_cols() != spec.n_cols() {
        return Err(Error::Dimension("loadings and layer do not match".into()));
    }
    check_sigma(sigma, spec.q)?;
    let sigma_chol = sigma
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Domain("sigma is not positive definite".into()))?;
    let sigma_inv = sigma_chol.inverse();

    // z = c + C u with C C' the inverse curvature at the mode; falls back to
    // the prior scale when the mode search fails.
    let (c, scale) = match centre(alpha, y_layer, &sigma_inv, sigma, spec)
        .and_then(|(c, h)| h.cholesky().map(|ch| (c, ch.inverse())))
        .and_then(|(c, cov)| cov.cholesky().map(|ch| (c, ch.l())))
    {
        Some(v) => v,
        None => (vec![0.0; spec.q], sigma_chol.l()),
    };
    let log_det_scale: f64 = scale.diagonal().iter().map(|d| d.ln()).sum();

    let rule = QuadratureRule::new(spec.q, order)?;
    let mut terms = Vec::with_capacity(rule.nodes.len());
    let mut z = vec![0.0; spec.q];
    for (u, lw) in rule.nodes.iter().zip(&rule.log_weights) {
        for r in 0..spec.q {
            z[r] = c[r] + (0..=r).map(|s| scale[(r, s)] * u[s]).sum::<f64>();
        }
        let uu: f64 = u.iter().map(|v| v * v).sum();
        terms.push(lw + log_integrand(alpha, y_layer, sigma, spec, &z)? + 0.5 * uu);
    }
    Ok(log_det_scale + 0.5 * spec.q as f64 * LN_2PI + log_sum_exp(&terms))
}

/// Quadrature value at `order` and `2 * order`, with the self-convergence
/// verdict at tolerance `1e-8`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureCheck {
    pub value: f64,
    pub refined: f64,
    pub converged: bool,
}

pub fn marginal_loglayer_checked(
    alpha: &Loadings,
    y_layer: &[u32],
    sigma: &DMatrix<f64>,
    spec: &ModelSpec,
    order: usize,
) -> Result<QuadratureCheck> {
    let value = marginal_loglayer_quadrature(alpha, y_layer, sigma, spec, order)?;
    let refined = marginal_loglayer_quadrature(alpha, y_layer, sigma, spec, 2 * order)?;
    Ok(QuadratureCheck {
        value,
        refined,
        converged: (value - refined).abs() < 1e-8,
    })
}

/// Signed Laplace error `log f~ - log f` in nats.
pub fn laplace_error(
    alpha: &Loadings,
    y_layer: &[u32],
    sigma: &DMatrix<f64>,
    spec: &ModelSpec,
    order: usize,
) -> Result<f64> {
    let exact = marginal_loglayer_quadrature(alpha, y_layer, sigma, spec, order)?;
    let (approx, _) = laplace_loglayer(alpha, y_layer, sigma, spec, &InnerOptions::default())?;
    Ok(approx - exact)
}

/// Laplace and exact log densities of one layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerComparison {
    pub laplace: f64,
    pub exact: QuadratureCheck,
}

impl LayerComparison {
    pub fn error(&self) -> f64 {
        self.laplace - self.exact.value
    }
}

/// Compares every layer of `data` under fixed parameters, in parallel.
pub fn compare_layers(
    alpha: &Loadings,
    sigma: &DMatrix<f64>,
    data: &MultiviewData,
    spec: &ModelSpec,
    inner: &InnerOptions,
    order: usize,
) -> Result<Vec<LayerComparison>> {
    let layers = data_layers(data, spec)?;
    layers
        .par_iter()
        .enumerate()
        .map(|(k, y)| {
            let run = || -> Result<LayerComparison> {
                let (laplace, _) = laplace_loglayer(alpha, y, sigma, spec, inner)?;
                let exact = marginal_loglayer_checked(alpha, y, sigma, spec, order)?;
                if !exact.converged {
                    log::warn!(
                        "layer {k}: quadrature at orders {order} and {} differ by {:.3e}",
                        2 * order,
                        (exact.value - exact.refined).abs()
                    );
                }
                Ok(LayerComparison { laplace, exact })
            };
            run().map_err(|e| e.in_layer(k))
        })
        .collect()
}
