//! The Laplace-approximated maximum likelihood estimator: identifiability
//! constraints, parameter packing, the outer quasi-Newton loop and sandwich
//! inference.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::laplace::{data_layers, eval_layers, GradientMode, InnerOptions, LatentPrior, LayerEval, FD_STEP};
use crate::lbfgs::{self, inf_norm, LbfgsOptions, Objective, Termination};
use crate::model::{mean_matrices, Assumption, Family, Loadings, ModelSpec, MultiviewData};

/// Parameterization of sigma under A2'.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaStructure {
    /// Independent latent factors with free variances.
    #[default]
    Diagonal,
    /// Unrestricted positive definite matrix.
    Full,
}

/// Identifiability restrictions on the loadings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConstraintSet {
    /// `(dyad_row, factor_col)` entries of the factor block fixed at zero.
    pub zero_entries: BTreeSet<(usize, usize)>,
    /// `(dyad_row, factor_col)` entries required to be nonnegative, one per
    /// factor column.
    pub sign_anchors: Vec<(usize, usize)>,
    /// Additional user zeros, in full loading coordinates `(dyad_row, col)`.
    pub extra_zeros: BTreeSet<(usize, usize)>,
    pub sigma: SigmaStructure,
}

/// Upper-triangular zeros and diagonal sign anchors in the first `q` rows of
/// the factor block.
pub fn build_constraints(spec: &ModelSpec) -> ConstraintSet {
    let m = spec.n_dyads();
    let mut zero_entries = BTreeSet::new();
    for d in 0..spec.q.min(m) {
        for l in d + 1..spec.q {
            zero_entries.insert((d, l));
        }
    }
    ConstraintSet {
        zero_entries,
        sign_anchors: (0..spec.q.min(m)).map(|l| (l, l)).collect(),
        extra_zeros: BTreeSet::new(),
        sigma: SigmaStructure::Diagonal,
    }
}

impl ConstraintSet {
    /// Every loading fixed at zero, in full loading coordinates.
    pub fn loading_zeros(&self, spec: &ModelSpec) -> BTreeSet<(usize, usize)> {
        let offset = spec.factor_offset();
        self.zero_entries
            .iter()
            .map(|&(d, l)| (d, offset + l))
            .chain(self.extra_zeros.iter().copied())
            .collect()
    }

    fn anchors_full(&self, spec: &ModelSpec) -> Vec<(usize, usize)> {
        let offset = spec.factor_offset();
        self.sign_anchors.iter().map(|&(d, l)| (d, offset + l)).collect()
    }

    fn check(&self, spec: &ModelSpec) -> Result<()> {
        let (m, p) = (spec.n_dyads(), spec.n_cols());
        for &(d, l) in &self.zero_entries {
            if d >= m || l >= spec.q {
                return Err(Error::InvalidSpec(format!("zero constraint ({d}, {l}) is out of range")));
            }
        }
        for &(d, l) in &self.extra_zeros {
            if d >= m || l >= p {
                return Err(Error::InvalidSpec(format!("mask entry ({d}, {l}) is out of range")));
            }
        }
        Ok(())
    }

    /// Zeroes constrained loadings and flips factor columns whose anchor is
    /// negative, adjusting sigma to match. Returns the flipped factor columns.
    pub fn apply(&self, alpha: &mut Loadings, sigma: &mut DMatrix<f64>, spec: &ModelSpec) -> Vec<usize> {
        let zeros = self.loading_zeros(spec);
        alpha.constrain(zeros.iter().copied());
        let offset = spec.factor_offset();
        let flipped: Vec<usize> = self
            .sign_anchors
            .iter()
            .filter(|&&(d, l)| alpha.get(d, offset + l) < 0.0)
            .map(|&(_, l)| l)
            .collect();
        for &l in &flipped {
            for d in 0..alpha.n_rows() {
                let v = alpha.get(d, offset + l);
                alpha.set(d, offset + l, -v);
            }
            for r in 0..sigma.nrows() {
                if r != l {
                    sigma[(r, l)] = -sigma[(r, l)];
                    sigma[(l, r)] = -sigma[(l, r)];
                }
            }
        }
        flipped
    }
}

/// Mapping between model parameters and the free-parameter vector: free
/// loadings in row-major order, then sigma's log-Cholesky factor (A2' only).
#[derive(Debug, Clone)]
struct Layout {
    m: usize,
    p: usize,
    q: usize,
    offset: usize,
    free: Vec<(usize, usize)>,
    zeros: BTreeSet<(usize, usize)>,
    anchors: Vec<(usize, usize)>,
    sigma: Option<SigmaStructure>,
}

impl Layout {
    fn new(spec: &ModelSpec, constraints: &ConstraintSet) -> Result<Self> {
        spec.validate()?;
        constraints.check(spec)?;
        let (m, p) = (spec.n_dyads(), spec.n_cols());
        let zeros = constraints.loading_zeros(spec);
        let free = (0..m)
            .flat_map(|d| (0..p).map(move |l| (d, l)))
            .filter(|e| !zeros.contains(e))
            .collect();
        Ok(Self {
            m,
            p,
            q: spec.q,
            offset: spec.factor_offset(),
            free,
            anchors: constraints
                .anchors_full(spec)
                .into_iter()
                .filter(|e| !zeros.contains(e))
                .collect(),
            zeros,
            sigma: (spec.assumption == Assumption::A2Prime).then_some(constraints.sigma),
        })
    }

    /// Lower-triangle positions of the Cholesky factor that carry a parameter.
    fn sigma_slots(&self) -> Vec<(usize, usize)> {
        match self.sigma {
            None => Vec::new(),
            Some(SigmaStructure::Diagonal) => (0..self.q).map(|i| (i, i)).collect(),
            Some(SigmaStructure::Full) => (0..self.q).flat_map(|i| (0..=i).map(move |j| (i, j))).collect(),
        }
    }

    fn len(&self) -> usize {
        self.free.len() + self.sigma_slots().len()
    }

    fn check_len(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.len() {
            return Err(Error::InvalidVector(format!(
                "expected {} free parameters, got {}",
                self.len(),
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidVector("free parameters must be finite".into()));
        }
        Ok(())
    }

    fn cholesky_factor(&self, x: &[f64]) -> DMatrix<f64> {
        let mut l = DMatrix::identity(self.q, self.q);
        for (&(i, j), &v) in self.sigma_slots().iter().zip(&x[self.free.len()..]) {
            l[(i, j)] = if i == j { v.exp() } else { v };
        }
        l
    }

    /// Unpacks without touching sign anchors.
    fn unpack_raw(&self, x: &[f64]) -> Result<(Loadings, DMatrix<f64>)> {
        self.check_len(x)?;
        let mut alpha = Loadings::zeros(self.m, self.p);
        for (&(d, l), &v) in self.free.iter().zip(x) {
            alpha.set(d, l, v);
        }
        alpha.constrain(self.zeros.iter().copied());
        let l = self.cholesky_factor(x);
        let sigma = &l * l.transpose();
        Ok((alpha, sigma))
    }

    fn pack(&self, alpha: &Loadings, sigma: &DMatrix<f64>) -> Result<Vec<f64>> {
        if alpha.n_rows() != self.m || alpha.n_cols() != self.p {
            return Err(Error::Dimension(format!(
                "loadings are {}x{}, expected {}x{}",
                alpha.n_rows(),
                alpha.n_cols(),
                self.m,
                self.p
            )));
        }
        let mut x: Vec<f64> = self.free.iter().map(|&(d, l)| alpha.get(d, l)).collect();
        if let Some(structure) = self.sigma {
            if sigma.nrows() != self.q || sigma.ncols() != self.q {
                return Err(Error::Dimension("sigma does not match q".into()));
            }
            if structure == SigmaStructure::Diagonal {
                let off = sigma.iter().enumerate().any(|(k, v)| k % (self.q + 1) != 0 && *v != 0.0);
                if off {
                    return Err(Error::Domain("sigma must be diagonal under the diagonal structure".into()));
                }
            }
            let l = sigma
                .clone()
                .cholesky()
                .ok_or_else(|| Error::Domain("sigma is not positive definite".into()))?
                .l();
            for (i, j) in self.sigma_slots() {
                x.push(if i == j { l[(i, i)].ln() } else { l[(i, j)] });
            }
        }
        Ok(x)
    }

    /// Free-parameter gradient from loading and sigma gradients.
    fn free_gradient(&self, grad_alpha: &[f64], grad_sigma: Option<&DMatrix<f64>>, x: &[f64]) -> Vec<f64> {
        let mut g: Vec<f64> = self.free.iter().map(|&(d, l)| grad_alpha[d * self.p + l]).collect();
        if let (Some(_), Some(s)) = (self.sigma, grad_sigma) {
            let l = self.cholesky_factor(x);
            let dl = s * &l * 2.0;
            for (i, j) in self.sigma_slots() {
                g.push(if i == j { dl[(i, i)] * l[(i, i)] } else { dl[(i, j)] });
            }
        }
        g
    }

    /// Flips factor columns with a negative anchor. Returns the flipped
    /// factor columns and the free coordinates that changed sign.
    fn canonicalize(&self, x: &mut [f64]) -> (Vec<usize>, Vec<usize>) {
        let mut cols = Vec::new();
        for &(d, l) in &self.anchors {
            if let Some(k) = self.free.iter().position(|&e| e == (d, l)) {
                if x[k] < 0.0 {
                    cols.push(l - self.offset);
                }
            }
        }
        if cols.is_empty() {
            return (cols, Vec::new());
        }
        let mut coords = Vec::new();
        for (k, &(_, l)) in self.free.iter().enumerate() {
            if l >= self.offset && cols.contains(&(l - self.offset)) {
                coords.push(k);
            }
        }
        let base = self.free.len();
        for (k, (i, j)) in self.sigma_slots().into_iter().enumerate() {
            if i != j && (cols.contains(&i) != cols.contains(&j)) {
                coords.push(base + k);
            }
        }
        for &k in &coords {
            x[k] = -x[k];
        }
        (cols, coords)
    }
}

/// Free-parameter vector for the given loadings and sigma.
pub fn pack_params(
    alpha: &Loadings,
    sigma: &DMatrix<f64>,
    spec: &ModelSpec,
    constraints: &ConstraintSet,
) -> Result<Vec<f64>> {
    Layout::new(spec, constraints)?.pack(alpha, sigma)
}

/// Loadings and sigma for a free-parameter vector, with factor columns
/// flipped so that every sign anchor is nonnegative.
pub fn unpack_params(x: &[f64], spec: &ModelSpec, constraints: &ConstraintSet) -> Result<(Loadings, DMatrix<f64>)> {
    let layout = Layout::new(spec, constraints)?;
    let (mut alpha, mut sigma) = layout.unpack_raw(x)?;
    constraints.apply(&mut alpha, &mut sigma, spec);
    Ok((alpha, sigma))
}

/// Number of free parameters.
pub fn n_free_params(spec: &ModelSpec, constraints: &ConstraintSet) -> Result<usize> {
    Ok(Layout::new(spec, constraints)?.len())
}

/// Starting point of the outer optimization.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum StartStrategy {
    /// Small random loadings, empirical intercepts, identity sigma.
    #[default]
    Default,
    Given { alpha: Loadings, sigma: DMatrix<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub outer_tol: f64,
    pub rel_tol: f64,
    pub max_outer_iters: usize,
    pub inner: InnerOptions,
    pub gradient: GradientMode,
    pub start: StartStrategy,
    pub seed: u64,
    pub compute_vcov: bool,
    pub sigma_structure: SigmaStructure,
    /// Additional loadings fixed at zero, `(dyad_row, col)`.
    pub extra_zeros: BTreeSet<(usize, usize)>,
    /// A free parameter beyond this magnitude marks the fit as divergent.
    pub divergence_bound: f64,
    pub start_sd: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            outer_tol: 1e-5,
            rel_tol: 1e-9,
            max_outer_iters: 1000,
            inner: InnerOptions::default(),
            gradient: GradientMode::Analytic,
            start: StartStrategy::Default,
            seed: 0,
            compute_vcov: false,
            sigma_structure: SigmaStructure::Diagonal,
            extra_zeros: BTreeSet::new(),
            divergence_bound: 10.0,
            start_sd: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Gradient,
    RelativeChange,
    MaxIterations,
    LineSearchFailed,
    Diverged,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub alpha_hat: Loadings,
    pub sigma_hat: DMatrix<f64>,
    pub z_modes: Vec<DVector<f64>>,
    pub loglik: f64,
    pub loglik_trace: Vec<f64>,
    pub grad_norm: f64,
    pub converged: bool,
    pub status: FitStatus,
    pub n_outer_iters: usize,
    pub vcov: Option<DMatrix<f64>>,
    pub vcov_error: Option<String>,
    pub seed: u64,
    pub spec: ModelSpec,
    pub constraints: ConstraintSet,
    pub inner: InnerOptions,
}

impl FitResult {
    /// Free-parameter vector of the estimate.
    pub fn params(&self) -> Result<Vec<f64>> {
        pack_params(&self.alpha_hat, &self.sigma_hat, &self.spec, &self.constraints)
    }

    /// Fitted conditional means, one `n x n` matrix per layer.
    pub fn pi_hat(&self) -> Result<Vec<DMatrix<f64>>> {
        mean_matrices(&self.alpha_hat, &self.z_modes, &self.spec)
    }
}

/// Log-likelihood, per-layer scores and latent modes.
type Scores = (f64, Vec<Vec<f64>>, Vec<DVector<f64>>);

struct Outer<'a> {
    layers: &'a [Vec<u32>],
    spec: &'a ModelSpec,
    layout: &'a Layout,
    inner: InnerOptions,
    mode: GradientMode,
    warm: Vec<DVector<f64>>,
    last_error: Option<Error>,
}

impl Outer<'_> {
    fn layer_evals(&self, x: &[f64], with_grad: bool) -> Result<Vec<LayerEval>> {
        let (alpha, sigma) = self.layout.unpack_raw(x)?;
        let prior = LatentPrior::new(&sigma, self.spec.q)?;
        eval_layers(&alpha, self.layers, &prior, self.spec, &self.inner, &self.warm, with_grad)
    }

    fn loglik(&self, x: &[f64]) -> Result<f64> {
        Ok(self.layer_evals(x, false)?.iter().map(|e| e.loglik).sum())
    }

    /// Per-layer free-parameter scores.
    fn scores(&self, x: &[f64]) -> Result<Scores> {
        let evals = self.layer_evals(x, true)?;
        let loglik = evals.iter().map(|e| e.loglik).sum();
        let scores = evals
            .iter()
            .map(|e| {
                self.layout.free_gradient(
                    e.grad_alpha.as_deref().expect("gradient requested"),
                    e.grad_sigma.as_ref(),
                    x,
                )
            })
            .collect();
        Ok((loglik, scores, evals.into_iter().map(|e| e.solve.z_hat).collect()))
    }

    fn gradient(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        match self.mode {
            GradientMode::Analytic => {
                let (loglik, scores, modes) = self.scores(x)?;
                let mut g = vec![0.0; x.len()];
                for s in &scores {
                    for (a, b) in g.iter_mut().zip(s) {
                        *a += b;
                    }
                }
                self.warm = modes;
                Ok((loglik, g))
            }
            GradientMode::FiniteDifference => {
                let evals = self.layer_evals(x, false)?;
                let loglik = evals.iter().map(|e| e.loglik).sum();
                self.warm = evals.into_iter().map(|e| e.solve.z_hat).collect();
                let mut g = Vec::with_capacity(x.len());
                let mut probe = x.to_vec();
                for i in 0..x.len() {
                    let h = FD_STEP * (1.0 + x[i].abs());
                    probe[i] = x[i] + h;
                    let fp = self.loglik(&probe)?;
                    probe[i] = x[i] - h;
                    let fm = self.loglik(&probe)?;
                    probe[i] = x[i];
                    g.push((fp - fm) / (2.0 * h));
                }
                Ok((loglik, g))
            }
        }
    }
}

impl Objective for Outer<'_> {
    fn eval(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        match self.gradient(x) {
            Ok((f, g)) => Ok((-f, g.into_iter().map(|v| -v).collect())),
            Err(e) => {
                let out = Error::InvalidVector(e.to_string());
                self.last_error = Some(e);
                Err(out)
            }
        }
    }

    fn after_step(&mut self, x: &mut [f64]) -> Vec<usize> {
        let (cols, coords) = self.layout.canonicalize(x);
        for z in &mut self.warm {
            for &l in &cols {
                z[l] = -z[l];
            }
        }
        coords
    }
}

fn default_start(layers: &[Vec<u32>], spec: &ModelSpec, layout: &Layout, opts: &FitOptions) -> Result<Vec<f64>> {
    let normal = Normal::new(0.0, opts.start_sd)
        .map_err(|_| Error::InvalidSpec(format!("start_sd must be nonnegative, got {}", opts.start_sd)))?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let k = layers.len() as f64;
    let mut alpha = Loadings::zeros(layout.m, layout.p);
    for &(d, l) in &layout.free {
        let v = if l < layout.offset {
            let mean = (layers.iter().map(|y| f64::from(y[d])).sum::<f64>() + 0.5) / (k + 1.0);
            match spec.family {
                Family::Bernoulli => (mean / (1.0 - mean)).ln(),
                Family::Poisson => mean.ln(),
            }
        } else {
            normal.sample(&mut rng)
        };
        alpha.set(d, l, v);
    }
    for &(d, l) in &layout.anchors {
        alpha.set(d, l, alpha.get(d, l).abs());
    }
    layout.pack(&alpha, &DMatrix::identity(spec.q, spec.q))
}

/// Maximizes the Laplace-approximated log-likelihood.
pub fn fit_glamle(data: &MultiviewData, spec: &ModelSpec, opts: &FitOptions) -> Result<FitResult> {
    spec.validate()?;
    let layers = data_layers(data, spec)?;
    let mut constraints = build_constraints(spec);
    constraints.extra_zeros = opts.extra_zeros.clone();
    constraints.sigma = opts.sigma_structure;
    let layout = Layout::new(spec, &constraints)?;

    let mut x0 = match &opts.start {
        StartStrategy::Default => default_start(&layers, spec, &layout, opts)?,
        StartStrategy::Given { alpha, sigma } => layout.pack(alpha, sigma)?,
    };
    layout.canonicalize(&mut x0);

    let mut outer = Outer {
        layers: &layers,
        spec,
        layout: &layout,
        inner: opts.inner,
        mode: opts.gradient,
        warm: vec![DVector::zeros(spec.q); layers.len()],
        last_error: None,
    };
    let lopts = LbfgsOptions {
        max_iters: opts.max_outer_iters,
        grad_tol: opts.outer_tol,
        rel_tol: opts.rel_tol,
        ..LbfgsOptions::default()
    };
    let run = match lbfgs::minimize(&mut outer, x0, &lopts) {
        Ok(r) => r,
        Err(_) => return Err(outer.last_error.take().unwrap_or_else(|| Error::InvalidVector("objective failed".into()))),
    };
    if run.termination == Termination::LineSearchFailed {
        if let Some(e) = outer.last_error.take() {
            if matches!(&e, Error::Layer { source, .. } if matches!(**source, Error::InnerSolve { .. })) {
                return Err(e);
            }
        }
    }

    // Final modes at the accepted iterate.
    let evals = outer.layer_evals(&run.x, false)?;
    let loglik: f64 = evals.iter().map(|e| e.loglik).sum();
    let z_modes: Vec<DVector<f64>> = evals.into_iter().map(|e| e.solve.z_hat).collect();
    let (alpha_hat, sigma_hat) = layout.unpack_raw(&run.x)?;
    for &(d, l) in &layout.anchors {
        if alpha_hat.get(d, l) == 0.0 {
            log::warn!("sign anchor ({d}, {l}) is exactly zero; column sign is not identified");
        }
    }

    let mut status = match run.termination {
        Termination::Gradient => FitStatus::Gradient,
        Termination::RelativeChange => FitStatus::RelativeChange,
        Termination::MaxIterations => FitStatus::MaxIterations,
        Termination::LineSearchFailed => FitStatus::LineSearchFailed,
    };
    if run.x.iter().any(|v| v.abs() > opts.divergence_bound) {
        log::warn!("parameter magnitude exceeds {}; estimates diverge", opts.divergence_bound);
        status = FitStatus::Diverged;
    }
    let converged = matches!(status, FitStatus::Gradient | FitStatus::RelativeChange);
    if !converged {
        log::warn!("outer optimization did not converge: {status:?}");
    }

    let mut fit = FitResult {
        alpha_hat,
        sigma_hat,
        z_modes,
        loglik,
        loglik_trace: run.trace.iter().map(|f| -f).collect(),
        grad_norm: inf_norm(&run.grad),
        converged,
        status,
        n_outer_iters: run.iterations,
        vcov: None,
        vcov_error: None,
        seed: opts.seed,
        spec: spec.clone(),
        constraints,
        inner: opts.inner,
    };
    if opts.compute_vcov {
        match sandwich_vcov(&fit, data, spec) {
            Ok(v) => fit.vcov = Some(v),
            Err(e) => {
                log::warn!("sandwich covariance unavailable: {e}");
                fit.vcov_error = Some(e.to_string());
            }
        }
    }
    Ok(fit)
}

/// The matrices behind the sandwich covariance.
#[derive(Debug, Clone)]
pub struct SandwichParts {
    /// Mean outer product of per-layer scores.
    pub a: DMatrix<f64>,
    /// Negative mean derivative of the per-layer scores.
    pub b: DMatrix<f64>,
    /// Sum of the per-layer scores at the estimate.
    pub score_sum: Vec<f64>,
}

/// Computes `A` and `B` at the fitted parameters.
pub fn sandwich_parts(fit: &FitResult, data: &MultiviewData, spec: &ModelSpec) -> Result<SandwichParts> {
    let layers = data_layers(data, spec)?;
    let layout = Layout::new(spec, &fit.constraints)?;
    let x = layout.pack(&fit.alpha_hat, &fit.sigma_hat)?;
    let k = layers.len() as f64;
    let n = x.len();
    let mut outer = Outer {
        layers: &layers,
        spec,
        layout: &layout,
        inner: fit.inner,
        mode: GradientMode::Analytic,
        warm: fit.z_modes.clone(),
        last_error: None,
    };
    let (_, scores, _) = outer.scores(&x)?;
    let mut a = DMatrix::zeros(n, n);
    let mut score_sum = vec![0.0; n];
    for s in &scores {
        let v = DVector::from_column_slice(s);
        a += &v * v.transpose();
        for (acc, si) in score_sum.iter_mut().zip(s) {
            *acc += si;
        }
    }
    a /= k;

    let mut b = DMatrix::zeros(n, n);
    let mut probe = x.clone();
    for j in 0..n {
        let h = FD_STEP * (1.0 + x[j].abs());
        probe[j] = x[j] + h;
        let (_, gp) = outer.gradient(&probe)?;
        outer.warm = fit.z_modes.clone();
        probe[j] = x[j] - h;
        let (_, gm) = outer.gradient(&probe)?;
        outer.warm = fit.z_modes.clone();
        probe[j] = x[j];
        for i in 0..n {
            b[(i, j)] = -(gp[i] - gm[i]) / (2.0 * h * k);
        }
    }
    let b = (&b + b.transpose()) * 0.5;
    Ok(SandwichParts { a, b, score_sum })
}

/// Eigenvalues at or below this fraction of the largest are treated as zero.
const RANK_TOL: f64 = 1e-7;

/// Sandwich covariance `B^-1 A B^-T` over the free parameters.
pub fn sandwich_vcov(fit: &FitResult, data: &MultiviewData, spec: &ModelSpec) -> Result<DMatrix<f64>> {
    if !fit.converged {
        return Err(Error::Domain("sandwich covariance requires a converged fit".into()));
    }
    let parts = sandwich_parts(fit, data, spec)?;
    let b_inv = inverse_checked(&parts.b)?;
    let v = &b_inv * &parts.a * b_inv.transpose();
    Ok((&v + v.transpose()) * 0.5)
}

fn inverse_checked(b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(b.clone());
    let scale = eig.eigenvalues.amax();
    let null: Vec<usize> = (0..b.nrows())
        .filter(|&i| eig.eigenvalues[i] <= RANK_TOL * scale)
        .collect();
    if scale == 0.0 || !null.is_empty() {
        let null_directions = null
            .iter()
            .map(|&i| {
                let v = eig.eigenvectors.column(i);
                let top = v.amax();
                (0..v.len()).filter(|&r| v[r].abs() >= 0.1 * top).collect()
            })
            .collect();
        return Err(Error::RankDeficient { null_directions });
    }
    let inv_vals = eig.eigenvalues.map(|l| 1.0 / l);
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&inv_vals) * eig.eigenvectors.transpose())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaldResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

/// Wald statistic for `R theta = r` with `k` layers.
pub fn wald_test(
    fit: &FitResult,
    vcov: &DMatrix<f64>,
    restriction: &DMatrix<f64>,
    target: &DVector<f64>,
    k: usize,
) -> Result<WaldResult> {
    let theta = DVector::from_vec(fit.params()?);
    let df = restriction.nrows();
    if restriction.ncols() != theta.len() || target.len() != df || vcov.shape() != (theta.len(), theta.len()) {
        return Err(Error::Dimension("restriction, target and covariance do not conform".into()));
    }
    if df == 0 || restriction.clone().svd(false, false).rank(1e-12) < df {
        return Err(Error::InvalidSpec("restriction matrix must have full row rank".into()));
    }
    let diff = restriction * &theta - target;
    let middle = restriction * vcov * restriction.transpose();
    let chol = middle
        .cholesky()
        .ok_or_else(|| Error::Singular("R V R' is not positive definite".into()))?;
    let statistic = k as f64 * diff.dot(&chol.solve(&diff));
    let chi = ChiSquared::new(df as f64).map_err(|e| Error::InvalidSpec(e.to_string()))?;
    Ok(WaldResult {
        statistic,
        df,
        p_value: chi.sf(statistic),
    })
}
