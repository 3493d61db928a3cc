//! Data model shared by every estimator: model specification, dyad indexing,
//! exponential-family link functions and the complete-data log-likelihood.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Edge response distribution. Both members use the canonical link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Bernoulli,
    Poisson,
}

/// Distribution of the layer-level latent variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Assumption {
    /// Standard normal latent variables, covariance fixed to the identity.
    #[serde(rename = "a2")]
    A2,
    /// Zero-mean normal latent variables with an estimated covariance.
    #[serde(rename = "a2prime")]
    A2Prime,
}

impl std::str::FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bernoulli" => Ok(Family::Bernoulli),
            "poisson" => Ok(Family::Poisson),
            other => Err(Error::InvalidSpec(format!("unknown family '{other}'"))),
        }
    }
}

impl std::str::FromStr for Assumption {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a2" => Ok(Assumption::A2),
            "a2prime" | "a2'" => Ok(Assumption::A2Prime),
            other => Err(Error::InvalidSpec(format!("unknown assumption '{other}'"))),
        }
    }
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(eta))` without overflow.
#[inline]
pub fn softplus(eta: f64) -> f64 {
    eta.max(0.0) + (-eta.abs()).exp().ln_1p()
}

impl Family {
    /// Conditional mean `b'(eta)`.
    #[inline]
    pub fn mean(self, eta: f64) -> f64 {
        match self {
            Family::Bernoulli => sigmoid(eta),
            Family::Poisson => eta.exp(),
        }
    }

    /// Cumulant function `b(eta)`.
    #[inline]
    pub fn cumulant(self, eta: f64) -> f64 {
        match self {
            Family::Bernoulli => softplus(eta),
            Family::Poisson => eta.exp(),
        }
    }

    /// Variance function `b''(eta)`; the curvature weight of one dyad.
    #[inline]
    pub fn weight(self, eta: f64) -> f64 {
        match self {
            Family::Bernoulli => {
                let p = sigmoid(eta);
                p * (1.0 - p)
            }
            Family::Poisson => eta.exp(),
        }
    }

    /// Third derivative `b'''(eta)`.
    #[inline]
    pub fn weight_slope(self, eta: f64) -> f64 {
        match self {
            Family::Bernoulli => {
                let p = sigmoid(eta);
                p * (1.0 - p) * (1.0 - 2.0 * p)
            }
            Family::Poisson => eta.exp(),
        }
    }

    /// Base-measure term `c(y)`: zero for Bernoulli, `-log(y!)` for Poisson.
    pub fn log_base(self, y: u32) -> f64 {
        match self {
            Family::Bernoulli => 0.0,
            Family::Poisson if y < 2 => 0.0,
            Family::Poisson => -ln_gamma(f64::from(y) + 1.0),
        }
    }

    pub fn in_support(self, y: i64) -> bool {
        match self {
            Family::Bernoulli => y == 0 || y == 1,
            Family::Poisson => y >= 0 && y <= i64::from(u32::MAX),
        }
    }
}

/// Everything that fixes the shape of a GGLLVM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    /// Latent dimension.
    pub q: usize,
    pub include_intercept: bool,
    pub assumption: Assumption,
    pub directed: bool,
    pub n_nodes: usize,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.q == 0 {
            return Err(Error::InvalidSpec("latent dimension q must be at least 1".into()));
        }
        if self.n_nodes < 2 {
            return Err(Error::InvalidSpec("a network needs at least 2 nodes".into()));
        }
        Ok(())
    }

    /// Number of loading columns per dyad.
    pub fn n_cols(&self) -> usize {
        self.q + usize::from(self.include_intercept)
    }

    /// Column index of the first factor loading.
    pub fn factor_offset(&self) -> usize {
        usize::from(self.include_intercept)
    }

    pub fn n_dyads(&self) -> usize {
        // n_nodes >= 2 is enforced by validate(); fall back to 0 for malformed specs.
        dyad_count(self.n_nodes, self.directed).unwrap_or(0)
    }
}

/// Number of dyads in a network without self-edges.
pub fn dyad_count(n_nodes: usize, directed: bool) -> Result<usize> {
    if n_nodes < 2 {
        return Err(Error::InvalidSpec(format!(
            "dyad count needs at least 2 nodes, got {n_nodes}"
        )));
    }
    let ordered = n_nodes * (n_nodes - 1);
    Ok(if directed { ordered } else { ordered / 2 })
}

/// Row-major bijection between node pairs and dyad rows.
///
/// Directed networks enumerate every `(i, j)` with `i != j`; undirected
/// networks enumerate `i < j`. Looking up `(j, i)` in an undirected index
/// returns the row of `(i, j)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DyadIndex {
    n_nodes: usize,
    directed: bool,
    pairs: Vec<(usize, usize)>,
    rows: Vec<Option<usize>>,
}

impl DyadIndex {
    pub fn new(n_nodes: usize, directed: bool) -> Result<Self> {
        let m = dyad_count(n_nodes, directed)?;
        let mut pairs = Vec::with_capacity(m);
        let mut rows = vec![None; n_nodes * n_nodes];
        for i in 0..n_nodes {
            for j in 0..n_nodes {
                if i == j || (!directed && j < i) {
                    continue;
                }
                rows[i * n_nodes + j] = Some(pairs.len());
                if !directed {
                    rows[j * n_nodes + i] = Some(pairs.len());
                }
                pairs.push((i, j));
            }
        }
        Ok(Self {
            n_nodes,
            directed,
            pairs,
            rows,
        })
    }

    pub fn for_spec(spec: &ModelSpec) -> Result<Self> {
        Self::new(spec.n_nodes, spec.directed)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn directed(&self) -> bool {
        self.directed
    }

    pub fn pair(&self, row: usize) -> (usize, usize) {
        self.pairs[row]
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn row(&self, i: usize, j: usize) -> Option<usize> {
        if i >= self.n_nodes || j >= self.n_nodes {
            return None;
        }
        self.rows[i * self.n_nodes + j]
    }
}

/// `K` layers of dense `n x n` integer responses with structural-zero diagonals.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiviewData {
    pub node_labels: Vec<String>,
    pub layer_labels: Vec<String>,
    pub directed: bool,
    /// One row-major `n x n` matrix per layer.
    responses: Vec<Vec<u32>>,
}

impl MultiviewData {
    pub fn new(
        node_labels: Vec<String>,
        layer_labels: Vec<String>,
        directed: bool,
        responses: Vec<Vec<u32>>,
    ) -> Result<Self> {
        let n = node_labels.len();
        if n < 2 {
            return Err(Error::InvalidSpec("a network needs at least 2 nodes".into()));
        }
        if layer_labels.len() != responses.len() {
            return Err(Error::Dimension(format!(
                "{} layer labels for {} layers",
                layer_labels.len(),
                responses.len()
            )));
        }
        for (k, layer) in responses.iter().enumerate() {
            if layer.len() != n * n {
                return Err(Error::Dimension(format!(
                    "layer {k} has {} entries, expected {}",
                    layer.len(),
                    n * n
                )));
            }
            for i in 0..n {
                if layer[i * n + i] != 0 {
                    return Err(Error::Domain(format!("layer {k} has a self-edge at node {i}")));
                }
                if !directed {
                    for j in (i + 1)..n {
                        if layer[i * n + j] != layer[j * n + i] {
                            return Err(Error::Domain(format!(
                                "layer {k} is not symmetric at ({i}, {j})"
                            )));
                        }
                    }
                }
            }
        }
        Ok(Self {
            node_labels,
            layer_labels,
            directed,
            responses,
        })
    }

    /// Builds a dataset with generated labels.
    pub fn from_layers(n_nodes: usize, directed: bool, responses: Vec<Vec<u32>>) -> Result<Self> {
        let nodes = default_labels("v", n_nodes);
        let layers = default_labels("L", responses.len());
        Self::new(nodes, layers, directed, responses)
    }

    pub fn n_nodes(&self) -> usize {
        self.node_labels.len()
    }

    pub fn n_layers(&self) -> usize {
        self.responses.len()
    }

    pub fn get(&self, layer: usize, i: usize, j: usize) -> u32 {
        self.responses[layer][i * self.n_nodes() + j]
    }

    pub fn layer(&self, layer: usize) -> &[u32] {
        &self.responses[layer]
    }

    /// Responses of one layer in dyad order.
    pub fn layer_dyads(&self, layer: usize, index: &DyadIndex) -> Vec<u32> {
        index
            .pairs()
            .iter()
            .map(|&(i, j)| self.get(layer, i, j))
            .collect()
    }

    /// All layers in dyad order.
    pub fn dyad_responses(&self, index: &DyadIndex) -> Vec<Vec<u32>> {
        (0..self.n_layers())
            .map(|k| self.layer_dyads(k, index))
            .collect()
    }

    pub fn check_family(&self, family: Family) -> Result<()> {
        for (k, layer) in self.responses.iter().enumerate() {
            if let Some(&y) = layer.iter().find(|&&y| !family.in_support(i64::from(y))) {
                return Err(Error::Domain(format!(
                    "layer {k} contains value {y} outside the {family:?} support"
                )));
            }
        }
        Ok(())
    }

    /// Checks that the data can be analysed under `spec`.
    pub fn check_spec(&self, spec: &ModelSpec) -> Result<()> {
        spec.validate()?;
        if spec.n_nodes != self.n_nodes() {
            return Err(Error::InvalidSpec(format!(
                "spec has {} nodes but data has {}",
                spec.n_nodes,
                self.n_nodes()
            )));
        }
        if spec.directed != self.directed {
            return Err(Error::InvalidSpec("directedness of spec and data differ".into()));
        }
        if self.n_layers() == 0 {
            return Err(Error::InvalidSpec("data has no layers".into()));
        }
        self.check_family(spec.family)
    }
}

pub(crate) fn default_labels(prefix: &str, n: usize) -> Vec<String> {
    let width = n.saturating_sub(1).to_string().len();
    (0..n).map(|i| format!("{prefix}{i:0width$}")).collect()
}

/// Dyad-level loadings, `m x p`, stored row-major.
///
/// Columns are the intercept (when present) followed by the `q` factor
/// loadings. Entries listed in `mask` are held at exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Loadings {
    m: usize,
    p: usize,
    values: Vec<f64>,
    mask: BTreeSet<(usize, usize)>,
}

impl Loadings {
    pub fn zeros(m: usize, p: usize) -> Self {
        Self {
            m,
            p,
            values: vec![0.0; m * p],
            mask: BTreeSet::new(),
        }
    }

    pub fn for_spec(spec: &ModelSpec) -> Self {
        Self::zeros(spec.n_dyads(), spec.n_cols())
    }

    pub fn from_rows(m: usize, p: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != m * p {
            return Err(Error::Dimension(format!(
                "{} loading values for a {m}x{p} matrix",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("loadings must be finite".into()));
        }
        Ok(Self {
            m,
            p,
            values,
            mask: BTreeSet::new(),
        })
    }

    pub fn n_rows(&self) -> usize {
        self.m
    }

    pub fn n_cols(&self) -> usize {
        self.p
    }

    #[inline]
    pub fn row(&self, d: usize) -> &[f64] {
        &self.values[d * self.p..(d + 1) * self.p]
    }

    #[inline]
    pub fn row_mut(&mut self, d: usize) -> &mut [f64] {
        &mut self.values[d * self.p..(d + 1) * self.p]
    }

    #[inline]
    pub fn get(&self, d: usize, l: usize) -> f64 {
        self.values[d * self.p + l]
    }

    #[inline]
    pub fn set(&mut self, d: usize, l: usize, v: f64) {
        self.values[d * self.p + l] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn mask(&self) -> &BTreeSet<(usize, usize)> {
        &self.mask
    }

    /// Fixes the given entries at zero.
    pub fn constrain(&mut self, entries: impl IntoIterator<Item = (usize, usize)>) {
        for (d, l) in entries {
            self.set(d, l, 0.0);
            self.mask.insert((d, l));
        }
    }

    pub fn is_constrained(&self, d: usize, l: usize) -> bool {
        self.mask.contains(&(d, l))
    }

    /// Checks finiteness and that masked entries are exactly zero.
    pub fn validate(&self) -> Result<()> {
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("loadings must be finite".into()));
        }
        for &(d, l) in &self.mask {
            if self.get(d, l) != 0.0 {
                return Err(Error::Domain(format!("constrained loading ({d}, {l}) is nonzero")));
            }
        }
        Ok(())
    }

    fn check_spec(&self, spec: &ModelSpec) -> Result<()> {
        if self.m != spec.n_dyads() || self.p != spec.n_cols() {
            return Err(Error::Dimension(format!(
                "loadings are {}x{} but the spec needs {}x{}",
                self.m,
                self.p,
                spec.n_dyads(),
                spec.n_cols()
            )));
        }
        Ok(())
    }
}

/// Per-layer latent modes and the latent covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub z_modes: Vec<DVector<f64>>,
    pub sigma: DMatrix<f64>,
}

impl LatentState {
    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        check_sigma(&self.sigma, spec.q)?;
        if spec.assumption == Assumption::A2 && self.sigma != DMatrix::identity(spec.q, spec.q) {
            return Err(Error::Domain("under A2 sigma must be the identity".into()));
        }
        if self.z_modes.iter().any(|z| z.len() != spec.q) {
            return Err(Error::Dimension("latent modes must have length q".into()));
        }
        Ok(())
    }
}

/// Linear predictor `alpha_d' (1, z')'` (or `alpha_d' z` without intercept).
#[inline]
pub(crate) fn linear_predictor(row: &[f64], z: &[f64], offset: usize) -> f64 {
    let mut eta = if offset == 1 { row[0] } else { 0.0 };
    for (a, zr) in row[offset..].iter().zip(z) {
        eta += a * zr;
    }
    eta
}

/// Conditional mean of one edge given its linear predictor.
pub fn mean_response(family: Family, eta: f64) -> Result<f64> {
    if !eta.is_finite() {
        return Err(Error::Domain(format!("linear predictor {eta} is not finite")));
    }
    let mu = family.mean(eta);
    if mu.is_infinite() {
        return Err(Error::Range(format!("exp({eta}) overflows")));
    }
    Ok(mu)
}

/// Log conditional density of one edge response.
pub fn conditional_logpdf(family: Family, y: i64, eta: f64) -> Result<f64> {
    if !family.in_support(y) {
        return Err(Error::Domain(format!("response {y} outside the {family:?} support")));
    }
    let yu = y as u32;
    Ok(f64::from(yu) * eta - family.cumulant(eta) + family.log_base(yu))
}

/// Conditional mean matrices, one `n x n` matrix per latent vector, with a
/// zero diagonal and symmetric fill for undirected networks.
pub fn mean_matrices(alpha: &Loadings, z: &[DVector<f64>], spec: &ModelSpec) -> Result<Vec<DMatrix<f64>>> {
    alpha.check_spec(spec)?;
    let index = DyadIndex::for_spec(spec)?;
    let n = spec.n_nodes;
    let offset = spec.factor_offset();
    z.iter()
        .map(|zk| {
            if zk.len() != spec.q {
                return Err(Error::Dimension(format!("z has length {}, expected {}", zk.len(), spec.q)));
            }
            let mut out = DMatrix::zeros(n, n);
            for (d, &(i, j)) in index.pairs().iter().enumerate() {
                let mu = mean_response(spec.family, linear_predictor(alpha.row(d), zk.as_slice(), offset))?;
                out[(i, j)] = mu;
                if !spec.directed {
                    out[(j, i)] = mu;
                }
            }
            Ok(out)
        })
        .collect()
}

pub(crate) fn check_sigma(sigma: &DMatrix<f64>, q: usize) -> Result<()> {
    if sigma.nrows() != q || sigma.ncols() != q {
        return Err(Error::Dimension(format!(
            "sigma is {}x{}, expected {q}x{q}",
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    if (sigma - sigma.transpose()).amax() > 1e-12 * sigma.amax().max(1.0) {
        return Err(Error::Domain("sigma is not symmetric".into()));
    }
    Ok(())
}

/// Log of the `N(0, sigma)` density at `z`.
pub fn log_latent_density(z: &[f64], sigma: &DMatrix<f64>) -> Result<f64> {
    let q = z.len();
    check_sigma(sigma, q)?;
    let chol = sigma
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Domain("sigma is not positive definite".into()))?;
    let zv = DVector::from_column_slice(z);
    let solved = chol.solve(&zv);
    let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    Ok(-0.5 * zv.dot(&solved) - 0.5 * log_det - 0.5 * q as f64 * (2.0 * PI).ln())
}

/// Complete-data log-likelihood of one layer at latent value `z`:
/// the sum of edge log-densities plus the latent log-density.
pub fn complete_data_loglik(
    alpha: &Loadings,
    z: &[f64],
    y_layer: &[u32],
    sigma: &DMatrix<f64>,
    spec: &ModelSpec,
) -> Result<f64> {
    alpha.check_spec(spec)?;
    if z.len() != spec.q {
        return Err(Error::Dimension(format!("z has length {}, expected {}", z.len(), spec.q)));
    }
    if y_layer.len() != alpha.n_rows() {
        return Err(Error::Dimension(format!(
            "layer has {} dyads, expected {}",
            y_layer.len(),
            alpha.n_rows()
        )));
    }
    let offset = spec.factor_offset();
    let mut total = 0.0;
    for (d, &y) in y_layer.iter().enumerate() {
        let eta = linear_predictor(alpha.row(d), z, offset);
        total += conditional_logpdf(spec.family, i64::from(y), eta)?;
    }
    Ok(total + log_latent_density(z, sigma)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn spec3(q: usize) -> ModelSpec {
        ModelSpec {
            family: Family::Bernoulli,
            q,
            include_intercept: true,
            assumption: Assumption::A2,
            directed: true,
            n_nodes: 3,
        }
    }

    #[test]
    fn dyad_counts() {
        assert_eq!(dyad_count(18, true).unwrap(), 306);
        assert_eq!(dyad_count(28, true).unwrap(), 756);
        assert_eq!(dyad_count(3, false).unwrap(), 3);
        assert!(matches!(dyad_count(1, true), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn dyad_order_is_row_major() {
        let idx = DyadIndex::new(3, true).unwrap();
        assert_eq!(idx.pairs(), &[(0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1)]);
        let und = DyadIndex::new(4, false).unwrap();
        assert_eq!(und.pairs(), &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]);
        assert_eq!(und.row(3, 1), Some(4));
        assert_eq!(und.row(2, 2), None);
    }

    #[test]
    fn mean_response_examples() {
        assert_eq!(mean_response(Family::Bernoulli, 0.0).unwrap(), 0.5);
        assert_eq!(mean_response(Family::Poisson, 0.0).unwrap(), 1.0);
        let p = mean_response(Family::Bernoulli, 50.0).unwrap();
        assert!((1.0 - p).abs() <= 1e-15);
        assert_eq!(mean_response(Family::Bernoulli, -800.0).unwrap(), 0.0);
        assert!(matches!(mean_response(Family::Poisson, 800.0), Err(Error::Range(_))));
    }

    #[test]
    fn conditional_logpdf_examples() {
        assert_abs_diff_eq!(
            conditional_logpdf(Family::Bernoulli, 1, 0.0).unwrap(),
            -std::f64::consts::LN_2,
            epsilon = 1e-15
        );
        assert_eq!(conditional_logpdf(Family::Poisson, 0, 0.0).unwrap(), -1.0);
        // -log(1 + e^2)
        let expected = -(1.0 + 2f64.exp()).ln();
        assert_abs_diff_eq!(expected, -2.126_928_011_042_972_5, epsilon = 1e-12);
        assert_abs_diff_eq!(
            conditional_logpdf(Family::Bernoulli, 0, 2.0).unwrap(),
            expected,
            epsilon = 1e-14
        );
        assert!(matches!(conditional_logpdf(Family::Bernoulli, 2, 0.0), Err(Error::Domain(_))));
        assert!(matches!(conditional_logpdf(Family::Poisson, -1, 0.0), Err(Error::Domain(_))));
        // Poisson constant is -log(y!)
        let lp = conditional_logpdf(Family::Poisson, 3, 0.0).unwrap();
        assert_abs_diff_eq!(lp, -1.0 - 6f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn complete_data_loglik_examples() {
        let spec = spec3(1);
        let alpha = Loadings::for_spec(&spec);
        let y = [1, 0, 1, 1, 0, 0];
        let sigma = DMatrix::identity(1, 1);
        let at0 = complete_data_loglik(&alpha, &[0.0], &y, &sigma, &spec).unwrap();
        assert_abs_diff_eq!(at0, 6.0 * 0.5f64.ln() - 0.5 * (2.0 * PI).ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(at0, -5.077_822, epsilon = 1e-6);
        let at1 = complete_data_loglik(&alpha, &[1.0], &y, &sigma, &spec).unwrap();
        assert_abs_diff_eq!(at1, at0 - 0.5, epsilon = 1e-12);
    }

    #[test]
    fn complete_data_loglik_rejects_non_spd_sigma() {
        let spec = spec3(1);
        let alpha = Loadings::for_spec(&spec);
        let sigma = DMatrix::from_element(1, 1, -1.0);
        let r = complete_data_loglik(&alpha, &[0.0], &[0; 6], &sigma, &spec);
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn complete_data_loglik_matches_naive_double_loop() {
        // Independent oracle: iterate the adjacency matrix directly.
        let spec = ModelSpec {
            family: Family::Poisson,
            q: 2,
            include_intercept: true,
            assumption: Assumption::A2Prime,
            directed: true,
            n_nodes: 4,
        };
        let idx = DyadIndex::for_spec(&spec).unwrap();
        let vals: Vec<f64> = (0..idx.len() * 3).map(|i| ((i * 37 % 11) as f64 - 5.0) / 10.0).collect();
        let alpha = Loadings::from_rows(idx.len(), 3, vals).unwrap();
        let y: Vec<u32> = (0..idx.len()).map(|d| (d * 7 % 4) as u32).collect();
        let z = [0.3, -0.7];
        let sigma = DMatrix::from_row_slice(2, 2, &[1.5, 0.2, 0.2, 0.8]);

        let mut naive = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                if i == j {
                    continue;
                }
                let d = idx.row(i, j).unwrap();
                let a = alpha.row(d);
                let eta = a[0] + a[1] * z[0] + a[2] * z[1];
                let yy = f64::from(y[d]);
                let fact: f64 = (1..=y[d]).map(f64::from).product();
                naive += yy * eta - eta.exp() - fact.ln();
            }
        }
        let det = 1.5 * 0.8 - 0.04;
        let quad = (0.8 * z[0] * z[0] - 2.0 * 0.2 * z[0] * z[1] + 1.5 * z[1] * z[1]) / det;
        naive += -0.5 * quad - 0.5 * det.ln() - (2.0 * PI).ln();

        let got = complete_data_loglik(&alpha, &z, &y, &sigma, &spec).unwrap();
        assert_abs_diff_eq!(got, naive, epsilon = 1e-10);
    }

    proptest! {
        #[test]
        fn dyad_index_round_trips(n in 2usize..12, directed: bool) {
            let idx = DyadIndex::new(n, directed).unwrap();
            prop_assert_eq!(idx.len(), dyad_count(n, directed).unwrap());
            for d in 0..idx.len() {
                let (i, j) = idx.pair(d);
                prop_assert_eq!(idx.row(i, j), Some(d));
            }
        }

        #[test]
        fn logistic_symmetry(eta in -700.0f64..700.0) {
            let s = mean_response(Family::Bernoulli, eta).unwrap()
                + mean_response(Family::Bernoulli, -eta).unwrap();
            prop_assert!((s - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn bernoulli_logpdf_difference_is_eta(eta in -50.0f64..50.0) {
            let d = conditional_logpdf(Family::Bernoulli, 1, eta).unwrap()
                - conditional_logpdf(Family::Bernoulli, 0, eta).unwrap();
            prop_assert!((d - eta).abs() <= 1e-10);
        }

        #[test]
        fn complete_data_loglik_is_rotation_invariant(
            seed in 0u64..1000,
            angle in 0.0f64..(2.0 * PI),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let spec = ModelSpec { q: 2, n_nodes: 4, ..spec3(2) };
            let m = spec.n_dyads();
            let vals: Vec<f64> = (0..m * 3).map(|_| rng.random_range(-1.5..1.5)).collect();
            let alpha = Loadings::from_rows(m, 3, vals).unwrap();
            let y: Vec<u32> = (0..m).map(|_| rng.random_range(0..2)).collect();
            let z = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let (c, s) = (angle.cos(), angle.sin());
            // alpha_(2) -> O alpha_(2) per row, z -> O z
            let mut rot = alpha.clone();
            for d in 0..m {
                let r = alpha.row(d);
                rot.set(d, 1, c * r[1] - s * r[2]);
                rot.set(d, 2, s * r[1] + c * r[2]);
            }
            let zr = [c * z[0] - s * z[1], s * z[0] + c * z[1]];
            let sigma = DMatrix::identity(2, 2);
            let a = complete_data_loglik(&alpha, &z, &y, &sigma, &spec).unwrap();
            let b = complete_data_loglik(&rot, &zr, &y, &sigma, &spec).unwrap();
            prop_assert!((a - b).abs() <= 1e-10);
        }
    }
}
