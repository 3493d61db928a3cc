//! Synthetic multiview networks and the Monte Carlo replication harness.

use nalgebra::{DMatrix, DVector};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Normal, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{build_constraints, fit_glamle, FitOptions, FitStatus};
use crate::metrics::{eigen_error_mean, rmse_pi};
use crate::model::{mean_matrices, Assumption, DyadIndex, Family, Loadings, ModelSpec, MultiviewData};

/// Latent variance used under A2' when none is given.
pub const DEFAULT_A2PRIME_VARIANCE: f64 = 1.5;

/// Monte Carlo design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McPlan {
    pub n_replicates: usize,
    pub spec: ModelSpec,
    /// Number of layers.
    pub k: usize,
    pub generator_seed: u64,
    pub loading_sd: f64,
    /// Diagonal of sigma under A2'.
    pub sigma_diag: Option<Vec<f64>>,
    /// Dyad rows whose RMSE is reported.
    pub tracked_dyads: Vec<usize>,
}

impl McPlan {
    pub fn new(spec: ModelSpec, k: usize, n_replicates: usize, generator_seed: u64) -> Self {
        Self {
            n_replicates,
            spec,
            k,
            generator_seed,
            loading_sd: 1.0,
            sigma_diag: None,
            tracked_dyads: vec![0, 1, 2],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.n_replicates == 0 {
            return Err(Error::InvalidSpec("n_replicates must be at least 1".into()));
        }
        if self.k == 0 {
            return Err(Error::InvalidSpec("at least one layer is required".into()));
        }
        if !(self.loading_sd >= 0.0 && self.loading_sd.is_finite()) {
            return Err(Error::InvalidSpec("loading_sd must be finite and nonnegative".into()));
        }
        if let Some(diag) = &self.sigma_diag {
            if diag.len() != self.spec.q || diag.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(Error::InvalidSpec("sigma_diag needs q positive entries".into()));
            }
        }
        let m = self.spec.n_dyads();
        if let Some(d) = self.tracked_dyads.iter().find(|&&d| d >= m) {
            return Err(Error::InvalidSpec(format!("tracked dyad {d} exceeds m = {m}")));
        }
        Ok(())
    }

    pub fn sigma(&self) -> DMatrix<f64> {
        let q = self.spec.q;
        match self.spec.assumption {
            Assumption::A2 => DMatrix::identity(q, q),
            Assumption::A2Prime => match &self.sigma_diag {
                Some(d) => DMatrix::from_diagonal(&DVector::from_column_slice(d)),
                None => DMatrix::identity(q, q) * DEFAULT_A2PRIME_VARIANCE,
            },
        }
    }
}

/// Ground truth of one simulated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTruth {
    pub alpha_true: Loadings,
    pub sigma_true: DMatrix<f64>,
    pub z_true: Vec<DVector<f64>>,
    pub pi_true: Vec<DMatrix<f64>>,
}

/// Independent generator for `(seed, replicate, purpose)`.
fn substream(seed: u64, replicate: usize, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate as u64 * 4 + purpose);
    rng
}

fn truth_from_rng(plan: &McPlan, rng: &mut ChaCha8Rng) -> Result<SimTruth> {
    plan.validate()?;
    let spec = &plan.spec;
    let (m, p, q) = (spec.n_dyads(), spec.n_cols(), spec.q);
    let normal = Normal::new(0.0, plan.loading_sd).map_err(|e| Error::InvalidSpec(e.to_string()))?;
    let values = (0..m * p).map(|_| normal.sample(rng)).collect();
    let mut alpha = Loadings::from_rows(m, p, values)?;
    let mut sigma = plan.sigma();
    build_constraints(spec).apply(&mut alpha, &mut sigma, spec);

    let chol = sigma
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Domain("sigma is not positive definite".into()))?
        .l();
    let z: Vec<DVector<f64>> = (0..plan.k)
        .map(|_| {
            let e = DVector::from_fn(q, |_, _| StandardNormal.sample(rng));
            &chol * e
        })
        .collect();
    let pi_true = mean_matrices(&alpha, &z, spec)?;
    Ok(SimTruth {
        alpha_true: alpha,
        sigma_true: sigma,
        z_true: z,
        pi_true,
    })
}

/// Draws loadings and latent variables for the plan's seed.
pub fn gen_truth(plan: &McPlan) -> Result<SimTruth> {
    truth_from_rng(plan, &mut substream(plan.generator_seed, 0, 0))
}

/// Draws every edge independently given the truth.
pub fn gen_network(truth: &SimTruth, spec: &ModelSpec, seed: u64) -> Result<MultiviewData> {
    spec.validate()?;
    let n = spec.n_nodes;
    let index = DyadIndex::for_spec(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(truth.pi_true.len());
    for pi in &truth.pi_true {
        if pi.nrows() != n || pi.ncols() != n {
            return Err(Error::Dimension("truth does not match the spec".into()));
        }
        let mut y = vec![0u32; n * n];
        for &(i, j) in index.pairs() {
            let mu = pi[(i, j)];
            let v = match spec.family {
                Family::Bernoulli => {
                    let b = Bernoulli::new(mu).map_err(|e| Error::Domain(e.to_string()))?;
                    u32::from(b.sample(&mut rng))
                }
                Family::Poisson if mu == 0.0 => 0,
                Family::Poisson => {
                    let d = Poisson::new(mu).map_err(|e| Error::Domain(e.to_string()))?;
                    let draw: f64 = d.sample(&mut rng);
                    if draw > f64::from(u32::MAX) {
                        return Err(Error::Range(format!("Poisson draw with mean {mu} overflows")));
                    }
                    draw as u32
                }
            };
            y[i * n + j] = v;
            if !spec.directed {
                y[j * n + i] = v;
            }
        }
        layers.push(y);
    }
    MultiviewData::from_layers(n, spec.directed, layers)
}

/// Truth and network of one replicate, plus the seeds it was drawn with.
#[derive(Debug, Clone, PartialEq)]
pub struct Replicate {
    pub truth: SimTruth,
    pub data: MultiviewData,
    pub network_seed: u64,
    pub fit_seed: u64,
}

fn replicate_seeds(plan: &McPlan, replicate: usize) -> (u64, u64) {
    (
        substream(plan.generator_seed, replicate, 1).next_u64(),
        substream(plan.generator_seed, replicate, 2).next_u64(),
    )
}

/// Generates replicate `replicate` of the plan without fitting it.
pub fn simulate_replicate(plan: &McPlan, replicate: usize) -> Result<Replicate> {
    let (network_seed, fit_seed) = replicate_seeds(plan, replicate);
    let truth = truth_from_rng(plan, &mut substream(plan.generator_seed, replicate, 0))?;
    let data = gen_network(&truth, &plan.spec, network_seed)?;
    Ok(Replicate {
        truth,
        data,
        network_seed,
        fit_seed,
    })
}

/// One row of the Monte Carlo metric table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McRow {
    pub replicate: usize,
    pub network_seed: u64,
    pub fit_seed: u64,
    pub status: Option<FitStatus>,
    pub converged: bool,
    pub loglik: Option<f64>,
    pub grad_norm: Option<f64>,
    pub n_outer_iters: Option<usize>,
    pub eigen_error_mean: Option<f64>,
    /// RMSE of the fitted means at each tracked dyad.
    pub rmse_pi: Vec<Option<f64>>,
    pub error: Option<String>,
}

/// Simulates and fits one replicate.
pub fn run_replicate(plan: &McPlan, fit_opts: &FitOptions, replicate: usize) -> McRow {
    let (network_seed, fit_seed) = replicate_seeds(plan, replicate);
    let mut row = McRow {
        replicate,
        network_seed,
        fit_seed,
        status: None,
        converged: false,
        loglik: None,
        grad_norm: None,
        n_outer_iters: None,
        eigen_error_mean: None,
        rmse_pi: vec![None; plan.tracked_dyads.len()],
        error: None,
    };
    let outcome = (|| -> Result<()> {
        let Replicate { truth, data, .. } = simulate_replicate(plan, replicate)?;
        let opts = FitOptions {
            seed: fit_seed,
            ..fit_opts.clone()
        };
        let fit = fit_glamle(&data, &plan.spec, &opts)?;
        row.status = Some(fit.status);
        row.converged = fit.converged;
        row.loglik = Some(fit.loglik);
        row.grad_norm = Some(fit.grad_norm);
        row.n_outer_iters = Some(fit.n_outer_iters);
        let pi_hat = fit.pi_hat()?;
        row.eigen_error_mean = Some(eigen_error_mean(&pi_hat, &truth.pi_true)?);
        let index = DyadIndex::for_spec(&plan.spec)?;
        for (slot, &d) in row.rmse_pi.iter_mut().zip(&plan.tracked_dyads) {
            *slot = Some(rmse_pi(&pi_hat, &truth.pi_true, index.pair(d))?);
        }
        Ok(())
    })();
    if let Err(e) = outcome {
        log::warn!("replicate {replicate} failed: {e}");
        row.error = Some(e.to_string());
    }
    row
}

/// Runs every replicate (in parallel) and returns rows in replicate order.
pub fn run_monte_carlo(plan: &McPlan, fit_opts: &FitOptions) -> Result<Vec<McRow>> {
    plan.validate()?;
    Ok((0..plan.n_replicates)
        .into_par_iter()
        .map(|r| run_replicate(plan, fit_opts, r))
        .collect())
}

/// Fraction of replicates that raised an error.
pub fn failure_fraction(rows: &[McRow]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    rows.iter().filter(|r| r.error.is_some()).count() as f64 / rows.len() as f64
}
