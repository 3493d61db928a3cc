//! Metropolis-within-Gibbs sampler for the Bernoulli model without
//! intercept, with independent standard normal priors on every loading and
//! latent variable.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::laplace::data_layers;
use crate::model::{mean_matrices, softplus, Family, Loadings, ModelSpec, MultiviewData, LN_2PI};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    pub n_iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub proposal_sd: f64,
    pub seed: u64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            n_iterations: 20_000,
            burn_in: 5_000,
            thin: 10,
            proposal_sd: 1.0,
            seed: 0,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.n_iterations {
            return Err(Error::InvalidSpec("burn_in must be smaller than n_iterations".into()));
        }
        if self.thin == 0 {
            return Err(Error::InvalidSpec("thin must be at least 1".into()));
        }
        if !(self.proposal_sd > 0.0 && self.proposal_sd.is_finite()) {
            return Err(Error::InvalidSpec("proposal_sd must be positive".into()));
        }
        Ok(())
    }
}

/// Current values of every sampled quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct McmcState {
    /// `m x q`, row-major.
    pub alpha: Vec<f64>,
    /// `K x q`, row-major.
    pub z: Vec<f64>,
    pub m: usize,
    pub q: usize,
    pub k: usize,
}

impl McmcState {
    pub fn zeros(m: usize, q: usize, k: usize) -> Self {
        Self {
            alpha: vec![0.0; m * q],
            z: vec![0.0; k * q],
            m,
            q,
            k,
        }
    }

    /// Independent draws from the priors.
    pub fn from_prior(m: usize, q: usize, k: usize, rng: &mut impl Rng) -> Self {
        let mut s = Self::zeros(m, q, k);
        for v in s.alpha.iter_mut().chain(s.z.iter_mut()) {
            *v = rng.sample(StandardNormal);
        }
        s
    }

    #[inline]
    fn eta(&self, d: usize, k: usize) -> f64 {
        let a = &self.alpha[d * self.q..(d + 1) * self.q];
        let z = &self.z[k * self.q..(k + 1) * self.q];
        a.iter().zip(z).map(|(x, y)| x * y).sum()
    }
}

/// Dyad responses, `layers[k][d]`.
pub type Layers = [Vec<u32>];

#[inline]
fn log_std_normal(x: f64) -> f64 {
    -0.5 * x * x - 0.5 * LN_2PI
}

#[inline]
fn bernoulli_loglik(y: u32, eta: f64) -> f64 {
    f64::from(y) * eta - softplus(eta)
}

/// Log full conditional of loading `(d, l)`, up to a constant.
pub fn log_full_conditional_alpha(entry: (usize, usize), state: &McmcState, layers: &Layers) -> f64 {
    let (d, l) = entry;
    let mut total = log_std_normal(state.alpha[d * state.q + l]);
    for (k, y) in layers.iter().enumerate() {
        total += bernoulli_loglik(y[d], state.eta(d, k));
    }
    total
}

/// Log full conditional of latent variable `l` in layer `k`, up to a constant.
pub fn log_full_conditional_z(k: usize, l: usize, state: &McmcState, layers: &Layers) -> f64 {
    let mut total = log_std_normal(state.z[k * state.q + l]);
    for (d, &y) in layers[k].iter().enumerate() {
        total += bernoulli_loglik(y, state.eta(d, k));
    }
    total
}

/// Joint log posterior, up to a constant.
pub fn log_posterior(state: &McmcState, layers: &Layers) -> f64 {
    let prior: f64 = state.alpha.iter().chain(&state.z).map(|v| log_std_normal(*v)).sum();
    let mut lik = 0.0;
    for (k, y) in layers.iter().enumerate() {
        for (d, &yd) in y.iter().enumerate() {
            lik += bernoulli_loglik(yd, state.eta(d, k));
        }
    }
    prior + lik
}

/// Metropolis acceptance given the log-density change and `u ~ U(0, 1)`.
#[inline]
pub fn accept(delta: f64, u: f64) -> bool {
    u.ln() < delta
}

/// Accepted proposals in one sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SweepStats {
    pub alpha_accepted: usize,
    pub z_accepted: usize,
}

/// One sweep: every loading, then every latent variable, one at a time.
pub fn mwg_step(state: &mut McmcState, layers: &Layers, proposal: &Normal<f64>, rng: &mut impl Rng) -> SweepStats {
    let mut stats = SweepStats::default();
    let q = state.q;
    for d in 0..state.m {
        for l in 0..q {
            let idx = d * q + l;
            let current = state.alpha[idx];
            let before = log_full_conditional_alpha((d, l), state, layers);
            state.alpha[idx] = current + proposal.sample(rng);
            let after = log_full_conditional_alpha((d, l), state, layers);
            if accept(after - before, rng.random()) {
                stats.alpha_accepted += 1;
            } else {
                state.alpha[idx] = current;
            }
        }
    }
    for k in 0..state.k {
        for l in 0..q {
            let idx = k * q + l;
            let current = state.z[idx];
            let before = log_full_conditional_z(k, l, state, layers);
            state.z[idx] = current + proposal.sample(rng);
            let after = log_full_conditional_z(k, l, state, layers);
            if accept(after - before, rng.random()) {
                stats.z_accepted += 1;
            } else {
                state.z[idx] = current;
            }
        }
    }
    stats
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSample {
    /// Retained loading draws, each `m x q` row-major.
    pub alpha_draws: Vec<Vec<f64>>,
    /// Retained latent draws, each `K x q` row-major.
    pub z_draws: Vec<Vec<f64>>,
    pub alpha_acceptance: f64,
    pub z_acceptance: f64,
    /// Posterior mean of the edge probabilities, one `n x n` matrix per layer.
    pub pi_mean: Vec<DMatrix<f64>>,
    pub config: McmcConfig,
}

fn check_spec(spec: &ModelSpec) -> Result<()> {
    if spec.family != Family::Bernoulli {
        return Err(Error::Unsupported("the sampler handles the Bernoulli family only".into()));
    }
    if spec.include_intercept {
        return Err(Error::Unsupported("the sampler handles models without intercept only".into()));
    }
    Ok(())
}

/// Runs the sampler from a prior draw.
pub fn run_mwg(data: &MultiviewData, spec: &ModelSpec, config: &McmcConfig) -> Result<PosteriorSample> {
    check_spec(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let init = McmcState::from_prior(spec.n_dyads(), spec.q, data.n_layers(), &mut rng);
    run_chain(data, spec, config, init, &mut rng)
}

/// Runs the sampler from a given state.
pub fn run_mwg_from(data: &MultiviewData, spec: &ModelSpec, config: &McmcConfig, init: McmcState) -> Result<PosteriorSample> {
    check_spec(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    run_chain(data, spec, config, init, &mut rng)
}

fn run_chain(
    data: &MultiviewData,
    spec: &ModelSpec,
    config: &McmcConfig,
    mut state: McmcState,
    rng: &mut ChaCha8Rng,
) -> Result<PosteriorSample> {
    config.validate()?;
    let layers = data_layers(data, spec)?;
    let (m, q, k) = (spec.n_dyads(), spec.q, layers.len());
    if state.m != m || state.q != q || state.k != k || state.alpha.len() != m * q || state.z.len() != k * q {
        return Err(Error::Dimension("initial state does not match the data".into()));
    }
    let proposal = Normal::new(0.0, config.proposal_sd).map_err(|e| Error::InvalidSpec(e.to_string()))?;
    let n = spec.n_nodes;
    let mut pi_sum = vec![DMatrix::zeros(n, n); k];
    let mut alpha_draws = Vec::new();
    let mut z_draws = Vec::new();
    let mut totals = SweepStats::default();
    for it in 0..config.n_iterations {
        let s = mwg_step(&mut state, &layers, &proposal, rng);
        totals.alpha_accepted += s.alpha_accepted;
        totals.z_accepted += s.z_accepted;
        if it >= config.burn_in && (it - config.burn_in).is_multiple_of(config.thin) {
            let alpha = Loadings::from_rows(m, q, state.alpha.clone())?;
            let z: Vec<DVector<f64>> = state.z.chunks(q).map(DVector::from_column_slice).collect();
            for (acc, pi) in pi_sum.iter_mut().zip(mean_matrices(&alpha, &z, spec)?) {
                *acc += pi;
            }
            alpha_draws.push(state.alpha.clone());
            z_draws.push(state.z.clone());
        }
    }
    let kept = alpha_draws.len() as f64;
    let iters = config.n_iterations as f64;
    let alpha_acceptance = totals.alpha_accepted as f64 / (iters * (m * q) as f64);
    let z_acceptance = totals.z_accepted as f64 / (iters * (k * q) as f64);
    for (name, rate) in [("loading", alpha_acceptance), ("latent", z_acceptance)] {
        if !(0.05..0.8).contains(&rate) {
            log::warn!("{name} acceptance rate {rate:.3} is outside (0.05, 0.8)");
        }
    }
    Ok(PosteriorSample {
        alpha_draws,
        z_draws,
        alpha_acceptance,
        z_acceptance,
        pi_mean: pi_sum.into_iter().map(|p| p / kept).collect(),
        config: *config,
    })
}
