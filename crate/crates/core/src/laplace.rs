//! Laplace approximation of the per-layer marginal likelihood.
//!
//! For one layer the integrand is `exp(Phi(z))` with
//! `Phi(z) = sum_d {y_d eta_d - b(eta_d) + c(y_d)} - z' P z / 2` and
//! `P = Sigma^{-1}`. Its mode `z_hat` is found by damped Newton; the
//! curvature there is `Gamma = sum_d b''(eta_d) a_d a_d' + P`, where `a_d`
//! is the factor part of the dyad's loading row. The approximate layer
//! log-likelihood is
//!
//! `-1/2 log|Gamma| - 1/2 log|Sigma| + Phi(z_hat)`
//!
//! (the `2 pi` normalisations cancel). Gradients are total derivatives:
//! the dependence of `z_hat` on the parameters enters through the
//! log-determinant term via the implicit function theorem.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{
    check_sigma, linear_predictor, Assumption, Family, Loadings, ModelSpec, MultiviewData, LN_2PI,
};

/// Controls for the per-layer mode search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerOptions {
    /// Bound on the infinity norm of `dQ/dz` (with the `1/m` scaling of `Q`).
    pub tol: f64,
    pub max_iters: usize,
    pub max_halvings: usize,
}

impl Default for InnerOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iters: 100,
            max_halvings: 30,
        }
    }
}

/// How gradients of the approximate log-likelihood are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    #[default]
    Analytic,
    #[serde(alias = "fd")]
    FiniteDifference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerSolveResult {
    pub z_hat: DVector<f64>,
    pub gamma: DMatrix<f64>,
    /// Newton passes, counting the final convergence check.
    pub iterations: usize,
    /// Infinity norm of `dQ/dz` at `z_hat`.
    pub grad_norm: f64,
}

/// Approximate log-likelihood over all layers, with optional gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplaceEval {
    pub loglik: f64,
    pub per_layer: Vec<f64>,
    pub z_modes: Vec<DVector<f64>>,
    /// `m x p` gradient with respect to the loadings.
    pub grad_alpha: Option<DMatrix<f64>>,
    /// Gradient with respect to the lower triangle of sigma (A2' only).
    pub grad_sigma: Option<Vec<f64>>,
}

/// Sigma together with its inverse and log-determinant.
#[derive(Debug, Clone)]
pub(crate) struct LatentPrior {
    pub sigma: DMatrix<f64>,
    pub precision: DMatrix<f64>,
    pub log_det: f64,
}

impl LatentPrior {
    pub fn new(sigma: &DMatrix<f64>, q: usize) -> Result<Self> {
        check_sigma(sigma, q)?;
        let chol = sigma
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Domain("sigma is not positive definite".into()))?;
        let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Ok(Self {
            sigma: sigma.clone(),
            precision: chol.inverse(),
            log_det,
        })
    }

    pub fn for_spec(sigma: &DMatrix<f64>, spec: &ModelSpec) -> Result<Self> {
        if spec.assumption == Assumption::A2 && *sigma != DMatrix::identity(spec.q, spec.q) {
            return Err(Error::InvalidSpec("sigma must be the identity under A2".into()));
        }
        Self::new(sigma, spec.q)
    }
}

fn check_layer(alpha: &Loadings, y: &[u32], spec: &ModelSpec) -> Result<()> {
    if alpha.n_rows() != spec.n_dyads() || alpha.n_cols() != spec.n_cols() {
        return Err(Error::Dimension(format!(
            "loadings are {}x{} but the spec needs {}x{}",
            alpha.n_rows(),
            alpha.n_cols(),
            spec.n_dyads(),
            spec.n_cols()
        )));
    }
    if y.len() != alpha.n_rows() {
        return Err(Error::Dimension(format!(
            "layer has {} dyads, expected {}",
            y.len(),
            alpha.n_rows()
        )));
    }
    Ok(())
}

fn layer_log_base(family: Family, y: &[u32]) -> f64 {
    match family {
        Family::Bernoulli => 0.0,
        Family::Poisson => y.iter().map(|&v| family.log_base(v)).sum(),
    }
}

/// `Phi(z)` without the `c(y)` constant.
fn layer_objective(alpha: &Loadings, y: &[u32], prior: &LatentPrior, spec: &ModelSpec, z: &[f64]) -> f64 {
    let offset = spec.factor_offset();
    let mut total = 0.0;
    for (d, &yd) in y.iter().enumerate() {
        let eta = linear_predictor(alpha.row(d), z, offset);
        total += f64::from(yd) * eta - spec.family.cumulant(eta);
    }
    let zv = DVector::from_column_slice(z);
    total - 0.5 * zv.dot(&(&prior.precision * &zv))
}

/// Gradient `dPhi/dz` and curvature `Gamma` at `z`.
fn layer_derivatives(
    alpha: &Loadings,
    y: &[u32],
    prior: &LatentPrior,
    spec: &ModelSpec,
    z: &[f64],
) -> (DVector<f64>, DMatrix<f64>) {
    let q = spec.q;
    let offset = spec.factor_offset();
    let zv = DVector::from_column_slice(z);
    let mut grad = -(&prior.precision * &zv);
    let mut gamma = prior.precision.clone();
    for (d, &yd) in y.iter().enumerate() {
        let row = alpha.row(d);
        let eta = linear_predictor(row, z, offset);
        let resid = f64::from(yd) - spec.family.mean(eta);
        let w = spec.family.weight(eta);
        let a = &row[offset..];
        for r in 0..q {
            grad[r] += resid * a[r];
            let wa = w * a[r];
            for s in 0..=r {
                gamma[(r, s)] += wa * a[s];
            }
        }
    }
    for r in 0..q {
        for s in 0..r {
            gamma[(s, r)] = gamma[(r, s)];
        }
    }
    (grad, gamma)
}

/// Cholesky factor of `Gamma`, adding diagonal jitter if the plain
/// factorisation fails.
fn factor_gamma(gamma: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(ch) = gamma.clone().cholesky() {
        return Ok(ch);
    }
    let n = gamma.nrows();
    let mut jitter = 1e-8;
    while jitter <= 1e-2 {
        let trial = gamma + DMatrix::<f64>::identity(n, n) * jitter;
        if let Some(ch) = trial.cholesky() {
            log::warn!("curvature matrix needed jitter {jitter:e} to factorise");
            return Ok(ch);
        }
        jitter *= 2.0;
    }
    Err(Error::Domain("curvature matrix is not positive definite".into()))
}

fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

pub(crate) fn solve_mode_from(
    alpha: &Loadings,
    y: &[u32],
    prior: &LatentPrior,
    spec: &ModelSpec,
    opts: &InnerOptions,
    start: &[f64],
) -> Result<InnerSolveResult> {
    let m = y.len().max(1) as f64;
    let mut z: Vec<f64> = start.to_vec();
    let mut phi = layer_objective(alpha, y, prior, spec, &z);
    if !phi.is_finite() {
        z.iter_mut().for_each(|v| *v = 0.0);
        phi = layer_objective(alpha, y, prior, spec, &z);
    }
    let mut iterations = 0;
    loop {
        iterations += 1;
        let (grad, gamma) = layer_derivatives(alpha, y, prior, spec, &z);
        let grad_norm = grad.amax() / m;
        if grad_norm <= opts.tol {
            return Ok(InnerSolveResult {
                z_hat: DVector::from_vec(z),
                gamma,
                iterations,
                grad_norm,
            });
        }
        if iterations >= opts.max_iters || !grad_norm.is_finite() {
            return Err(Error::InnerSolve {
                iterations,
                residual: grad_norm,
                last_iterate: z,
            });
        }
        let chol = factor_gamma(&gamma)?;
        let step = chol.solve(&grad);
        let slope = grad.dot(&step);
        let noise_floor = 64.0 * f64::EPSILON * (1.0 + phi.abs());
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..=opts.max_halvings {
            let trial: Vec<f64> = z.iter().zip(step.iter()).map(|(a, b)| a + t * b).collect();
            let phi_new = layer_objective(alpha, y, prior, spec, &trial);
            let armijo = phi_new >= phi + 1e-4 * t * slope;
            // Near the optimum the predicted gain drops below rounding noise;
            // a Newton step is then taken as long as it does not visibly hurt.
            let at_floor = t * slope <= noise_floor && phi_new >= phi - noise_floor;
            if phi_new.is_finite() && (armijo || at_floor) {
                z = trial;
                phi = phi_new;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(Error::InnerSolve {
                iterations,
                residual: grad_norm,
                last_iterate: z,
            });
        }
    }
}

/// Per-layer value and, optionally, gradient pieces.
#[derive(Debug, Clone)]
pub(crate) struct LayerEval {
    pub loglik: f64,
    pub solve: InnerSolveResult,
    /// Row-major `m x p` gradient of the layer log-likelihood.
    pub grad_alpha: Option<Vec<f64>>,
    /// Symmetric matrix `d loglik / d Sigma`.
    pub grad_sigma: Option<DMatrix<f64>>,
}

pub(crate) fn eval_layer(
    alpha: &Loadings,
    y: &[u32],
    prior: &LatentPrior,
    spec: &ModelSpec,
    opts: &InnerOptions,
    start: &[f64],
    with_grad: bool,
) -> Result<LayerEval> {
    let solve = solve_mode_from(alpha, y, prior, spec, opts, start)?;
    let chol = factor_gamma(&solve.gamma)?;
    let z = solve.z_hat.as_slice();
    let phi = layer_objective(alpha, y, prior, spec, z) + layer_log_base(spec.family, y);
    let loglik = -0.5 * log_det(&chol) - 0.5 * prior.log_det + phi;
    if !with_grad {
        return Ok(LayerEval {
            loglik,
            solve,
            grad_alpha: None,
            grad_sigma: None,
        });
    }

    let q = spec.q;
    let p = spec.n_cols();
    let offset = spec.factor_offset();
    let family = spec.family;
    let g_inv = chol.inverse();

    // u = d log|Gamma| / dz = sum_d b'''(eta_d) (a_d' G a_d) a_d
    let mut u = DVector::zeros(q);
    let mut cache = Vec::with_capacity(y.len());
    for (d, &yd) in y.iter().enumerate() {
        let row = alpha.row(d);
        let a = DVector::from_column_slice(&row[offset..]);
        let eta = linear_predictor(row, z, offset);
        let ga = &g_inv * &a;
        let h = a.dot(&ga);
        let w3 = family.weight_slope(eta);
        u.axpy(w3 * h, &a, 1.0);
        cache.push((f64::from(yd) - family.mean(eta), family.weight(eta), w3, h, ga, a));
    }
    // v = G (dF/dz)' with dF/dz = -u/2 at the mode.
    let v = &g_inv * &u * -0.5;

    let mut grad = vec![0.0; y.len() * p];
    for (d, (resid, w, w3, h, ga, a)) in cache.iter().enumerate() {
        let va = v.dot(a);
        let common = resid - 0.5 * w3 * h - w * va;
        let out = &mut grad[d * p..(d + 1) * p];
        if offset == 1 {
            out[0] = common;
        }
        for r in 0..q {
            out[offset + r] = common * z[r] - w * ga[r] + resid * v[r];
        }
    }

    let zv = &solve.z_hat;
    let m_mat = (&prior.sigma - zv * zv.transpose() - &g_inv) * 0.5
        - (zv * v.transpose() + &v * zv.transpose()) * 0.5;
    let grad_sigma = -(&prior.precision * m_mat * &prior.precision);

    Ok(LayerEval {
        loglik,
        solve,
        grad_alpha: Some(grad),
        grad_sigma: Some(grad_sigma),
    })
}

/// Evaluates every layer, in parallel, from the given warm starts.
pub(crate) fn eval_layers(
    alpha: &Loadings,
    layers: &[Vec<u32>],
    prior: &LatentPrior,
    spec: &ModelSpec,
    opts: &InnerOptions,
    starts: &[DVector<f64>],
    with_grad: bool,
) -> Result<Vec<LayerEval>> {
    layers
        .par_iter()
        .zip(starts.par_iter())
        .enumerate()
        .map(|(k, (y, start))| {
            eval_layer(alpha, y, prior, spec, opts, start.as_slice(), with_grad)
                .map_err(|e| e.in_layer(k))
        })
        .collect()
}

/// `Q(alpha, z, y)`: the layer's complete-data log-likelihood divided by `m`.
pub fn q_function(
    alpha: &Loadings,
    z: &[f64],
    y_layer: &[u32],
    sigma: &DMatrix<f64>,
    spec: &ModelSpec,
) -> Result<f64> {
    check_layer(alpha, y_layer, spec)?;
    if z.len() != spec.q {
        return Err(Error::Dimension(format!("z has length {}, expected {}", z.len(), spec.q)));
    }
    let prior = LatentPrior::new(sigma, spec.q)?;
    let m = y_layer.len() as f64;
    let total = layer_objective(alpha, y_layer, &prior, spec, z) + layer_log_base(spec.family, y_layer)
        - 0.5 * prior.log_det
        - 0.5 * spec.q as f64 * LN_2PI;
    Ok(total / m)
}

/// Mode of `Q` in `z`, starting from the prior mode `z = 0`.
pub fn solve_latent_mode(
    alpha: &Loadings,
    y_layer: &[u32],
    sigma: &DMatrix<f64>,
    spec: &ModelSpec,
    opts: &InnerOptions,
) -> Result<InnerSolveResult> {
    check_layer(alpha, y_layer, spec)?;
    let prior = LatentPrior::new(sigma, spec.q)?;
    solve_mode_from(alpha, y_layer, &prior, spec, opts, &vec![0.0; spec.q])
}

/// Curvature matrix `Gamma(alpha, z_hat, Sigma)`.
pub fn gamma_matrix(
    alpha: &Loadings,
    z_hat: &[f64],
    sigma: &DMatrix<f64>,
    spec: &ModelSpec,
) -> Result<DMatrix<f64>> {
    if z_hat.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("z_hat must be finite".into()));
    }
    let prior = LatentPrior::new(sigma, spec.q)?;
    // The curvature does not depend on the responses.
    let y = vec![0u32; alpha.n_rows()];
    check_layer(alpha, &y, spec)?;
    Ok(layer_derivatives(alpha, &y, &prior, spec, z_hat).1)
}

/// Laplace-approximated log marginal density of one layer.
pub fn laplace_loglayer(
    alpha: &Loadings,
    y_layer: &[u32],
    sigma: &DMatrix<f64>,
    spec: &ModelSpec,
    opts: &InnerOptions,
) -> Result<(f64, InnerSolveResult)> {
    check_layer(alpha, y_layer, spec)?;
    let prior = LatentPrior::new(sigma, spec.q)?;
    let eval = eval_layer(alpha, y_layer, &prior, spec, opts, &vec![0.0; spec.q], false)?;
    Ok((eval.loglik, eval.solve))
}

pub(crate) fn data_layers(data: &MultiviewData, spec: &ModelSpec) -> Result<Vec<Vec<u32>>> {
    data.check_spec(spec)?;
    let index = crate::model::DyadIndex::for_spec(spec)?;
    Ok(data.dyad_responses(&index))
}

/// Approximate log-likelihood summed over layers.
pub fn laplace_loglik(
    alpha: &Loadings,
    sigma: &DMatrix<f64>,
    data: &MultiviewData,
    spec: &ModelSpec,
    opts: &InnerOptions,
) -> Result<LaplaceEval> {
    let layers = data_layers(data, spec)?;
    evaluate(alpha, sigma, &layers, spec, opts, false)
}

fn evaluate(
    alpha: &Loadings,
    sigma: &DMatrix<f64>,
    layers: &[Vec<u32>],
    spec: &ModelSpec,
    opts: &InnerOptions,
    with_grad: bool,
) -> Result<LaplaceEval> {
    if layers.is_empty() {
        return Err(Error::InvalidSpec("at least one layer is required".into()));
    }
    if let Some(y) = layers.first() {
        check_layer(alpha, y, spec)?;
    }
    let prior = LatentPrior::for_spec(sigma, spec)?;
    let starts = vec![DVector::zeros(spec.q); layers.len()];
    let evals = eval_layers(alpha, layers, &prior, spec, opts, &starts, with_grad)?;
    let per_layer: Vec<f64> = evals.iter().map(|e| e.loglik).collect();
    let loglik = per_layer.iter().sum();
    let (grad_alpha, grad_sigma) = if with_grad {
        let (m, p) = (alpha.n_rows(), alpha.n_cols());
        let mut ga = vec![0.0; m * p];
        let mut gs = DMatrix::zeros(spec.q, spec.q);
        for e in &evals {
            for (acc, g) in ga.iter_mut().zip(e.grad_alpha.as_ref().expect("gradient requested")) {
                *acc += g;
            }
            gs += e.grad_sigma.as_ref().expect("gradient requested");
        }
        let gs = (spec.assumption == Assumption::A2Prime).then(|| sigma_elements(&gs));
        (Some(DMatrix::from_row_slice(m, p, &ga)), gs)
    } else {
        (None, None)
    };
    Ok(LaplaceEval {
        loglik,
        per_layer,
        z_modes: evals.into_iter().map(|e| e.solve.z_hat).collect(),
        grad_alpha,
        grad_sigma,
    })
}

/// Maps a symmetric matrix gradient to the free elements `sigma_ij`,
/// `i >= j`, in row-major lower-triangle order. Off-diagonal elements move
/// both symmetric entries.
pub(crate) fn sigma_elements(grad: &DMatrix<f64>) -> Vec<f64> {
    let q = grad.nrows();
    let mut out = Vec::with_capacity(q * (q + 1) / 2);
    for i in 0..q {
        for j in 0..=i {
            out.push(if i == j { grad[(i, i)] } else { grad[(i, j)] + grad[(j, i)] });
        }
    }
    out
}

/// Gradient of the approximate log-likelihood with respect to the loadings.
pub fn grad_alpha(
    alpha: &Loadings,
    sigma: &DMatrix<f64>,
    data: &MultiviewData,
    spec: &ModelSpec,
    opts: &InnerOptions,
    mode: GradientMode,
) -> Result<DMatrix<f64>> {
    let layers = data_layers(data, spec)?;
    match mode {
        GradientMode::Analytic => Ok(evaluate(alpha, sigma, &layers, spec, opts, true)?
            .grad_alpha
            .expect("gradient requested")),
        GradientMode::FiniteDifference => {
            let (m, p) = (alpha.n_rows(), alpha.n_cols());
            let mut out = DMatrix::zeros(m, p);
            for d in 0..m {
                for l in 0..p {
                    let h = FD_STEP * (1.0 + alpha.get(d, l).abs());
                    let mut plus = alpha.clone();
                    plus.set(d, l, alpha.get(d, l) + h);
                    let mut minus = alpha.clone();
                    minus.set(d, l, alpha.get(d, l) - h);
                    let fp = evaluate(&plus, sigma, &layers, spec, opts, false)?.loglik;
                    let fm = evaluate(&minus, sigma, &layers, spec, opts, false)?.loglik;
                    out[(d, l)] = (fp - fm) / (2.0 * h);
                }
            }
            Ok(out)
        }
    }
}

pub(crate) const FD_STEP: f64 = 1e-5;

/// Gradient with respect to the free elements of sigma (A2' only), ordered
/// as the row-major lower triangle.
pub fn grad_sigma(
    alpha: &Loadings,
    sigma: &DMatrix<f64>,
    data: &MultiviewData,
    spec: &ModelSpec,
    opts: &InnerOptions,
    mode: GradientMode,
) -> Result<Vec<f64>> {
    if spec.assumption != Assumption::A2Prime {
        return Err(Error::InvalidSpec("sigma is fixed under A2".into()));
    }
    let layers = data_layers(data, spec)?;
    match mode {
        GradientMode::Analytic => Ok(evaluate(alpha, sigma, &layers, spec, opts, true)?
            .grad_sigma
            .expect("gradient requested")),
        GradientMode::FiniteDifference => {
            let q = spec.q;
            let mut out = Vec::with_capacity(q * (q + 1) / 2);
            for i in 0..q {
                for j in 0..=i {
                    let h = FD_STEP * (1.0 + sigma[(i, j)].abs());
                    let shifted = |delta: f64| {
                        let mut s = sigma.clone();
                        s[(i, j)] += delta;
                        if i != j {
                            s[(j, i)] += delta;
                        }
                        s
                    };
                    let fp = evaluate(alpha, &shifted(h), &layers, spec, opts, false)?.loglik;
                    let fm = evaluate(alpha, &shifted(-h), &layers, spec, opts, false)?.loglik;
                    out.push((fp - fm) / (2.0 * h));
                }
            }
            Ok(out)
        }
    }
}
