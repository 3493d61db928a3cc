//! On-disk formats: edge-list CSV input, JSON fit/truth/chain files, CSV
//! result tables and the flat Monte Carlo plan.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::diagnostics::{QqData, ResidualSet};
use crate::error::{Error, Result};
use crate::estimator::{build_constraints, FitOptions, FitResult, FitStatus, SigmaStructure};
use crate::laplace::{GradientMode, InnerOptions};
use crate::mcmc::{McmcConfig, PosteriorSample};
use crate::model::{Assumption, DyadIndex, Family, Loadings, ModelSpec, MultiviewData};
use crate::quadrature::LayerComparison;
use crate::simulate::{McPlan, McRow, SimTruth};

pub const FORMAT_VERSION: &str = "1.0";
const SUPPORTED_MAJOR: u32 = 1;

/// Rejects versions whose major component differs from the supported one.
pub fn check_version(version: &str) -> Result<()> {
    let major = version
        .split('.')
        .next()
        .and_then(|m| m.trim().parse::<u32>().ok())
        .ok_or_else(|| Error::Format(format!("malformed format_version '{version}'")))?;
    if major != SUPPORTED_MAJOR {
        return Err(Error::Format(format!(
            "unsupported format_version {version} (this build reads {SUPPORTED_MAJOR}.x)"
        )));
    }
    Ok(())
}

/// Formats a real with 17 significant digits.
pub fn fmt_real(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_real).unwrap_or_default()
}

/// Parse settings for an edge list.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IngestOptions {
    pub family: Family,
    /// `None` takes the `# directed=` header, defaulting to directed.
    pub directed: Option<bool>,
}

fn parse_err(line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        line: line as usize,
        message: message.into(),
    }
}

/// Reads an edge list from any reader.
pub fn read_edge_list(reader: impl Read, opts: &IngestOptions) -> Result<MultiviewData> {
    let mut buf = BufReader::new(reader);
    // Leading `# key=value` lines.
    let mut directed_header = None;
    let mut consumed = 0u64;
    let mut rest = String::new();
    loop {
        let mut line = String::new();
        if buf.read_line(&mut line)? == 0 {
            break;
        }
        consumed += 1;
        let trimmed = line.trim();
        if let Some(meta) = trimmed.strip_prefix('#') {
            if let Some((key, value)) = meta.split_once('=') {
                match key.trim() {
                    "format_version" => check_version(value.trim())?,
                    "directed" => {
                        directed_header = Some(value.trim().parse::<bool>().map_err(|_| {
                            parse_err(consumed, format!("bad directed flag '{}'", value.trim()))
                        })?)
                    }
                    _ => {}
                }
            }
            continue;
        }
        rest = line;
        consumed -= 1;
        break;
    }
    buf.read_to_string(&mut rest)?;
    let directed = opts.directed.or(directed_header).unwrap_or(true);

    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(rest.as_bytes());
    let headers = csv.headers().map_err(|e| parse_err(consumed + 1, e.to_string()))?.clone();
    let expected = ["layer", "src", "dst", "value"];
    if headers.len() != 4 || headers.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(parse_err(consumed + 1, "header must be layer,src,dst,value"));
    }
    let mut rows = Vec::new();
    for record in csv.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(consumed + line, e.to_string())
        })?;
        let line = consumed + record.position().map_or(0, |p| p.line());
        if record.len() != 4 {
            return Err(parse_err(line, "expected 4 fields"));
        }
        let value: i64 = record[3]
            .parse()
            .map_err(|_| parse_err(line, format!("value '{}' is not an integer", &record[3])))?;
        if !opts.family.in_support(value) {
            return Err(parse_err(line, format!("value {value} outside the {:?} support", opts.family)));
        }
        if record[1] == record[2] {
            return Err(parse_err(line, format!("self-edge {},{}", &record[1], &record[2])));
        }
        rows.push((line, record[0].to_string(), record[1].to_string(), record[2].to_string(), value as u32));
    }
    if rows.is_empty() {
        return Err(parse_err(consumed + 1, "no edges"));
    }

    let nodes: BTreeSet<&str> = rows.iter().flat_map(|r| [r.2.as_str(), r.3.as_str()]).collect();
    let layers: BTreeSet<&str> = rows.iter().map(|r| r.1.as_str()).collect();
    let node_index: BTreeMap<&str, usize> = nodes.iter().enumerate().map(|(i, n)| (*n, i)).collect();
    let layer_index: BTreeMap<&str, usize> = layers.iter().enumerate().map(|(i, n)| (*n, i)).collect();
    let n = nodes.len();
    let mut values = vec![vec![0u32; n * n]; layers.len()];
    let mut seen: BTreeMap<(usize, usize, usize), (u64, u32)> = BTreeMap::new();
    for (line, layer, src, dst, value) in &rows {
        let k = layer_index[layer.as_str()];
        let (i, j) = (node_index[src.as_str()], node_index[dst.as_str()]);
        if let Some(&(first, _)) = seen.get(&(k, i, j)) {
            return Err(parse_err(*line, format!("duplicate row for ({layer}, {src}, {dst}), first at line {first}")));
        }
        if !directed {
            if let Some(&(first, v)) = seen.get(&(k, j, i)) {
                if v != *value {
                    return Err(parse_err(
                        *line,
                        format!("undirected edge ({layer}, {src}, {dst}) conflicts with line {first}"),
                    ));
                }
            }
            values[k][j * n + i] = *value;
        }
        seen.insert((k, i, j), (*line, *value));
        values[k][i * n + j] = *value;
    }
    MultiviewData::new(
        nodes.iter().map(|s| s.to_string()).collect(),
        layers.iter().map(|s| s.to_string()).collect(),
        directed,
        values,
    )
}

/// Reads an edge list from a file.
pub fn ingest(path: &Path, opts: &IngestOptions) -> Result<MultiviewData> {
    read_edge_list(File::open(path)?, opts)
}

/// Writes every dyad of every layer, zeros included.
pub fn write_edge_list(data: &MultiviewData, writer: impl Write) -> Result<()> {
    let mut w = BufWriter::new(writer);
    writeln!(w, "# format_version={FORMAT_VERSION}")?;
    writeln!(w, "# directed={}", data.directed)?;
    let mut csv = csv::Writer::from_writer(w);
    csv_io(csv.write_record(["layer", "src", "dst", "value"]))?;
    let index = DyadIndex::new(data.n_nodes(), data.directed)?;
    for k in 0..data.n_layers() {
        for &(i, j) in index.pairs() {
            let v = data.get(k, i, j).to_string();
            csv_io(csv.write_record([
                data.layer_labels[k].as_str(),
                data.node_labels[i].as_str(),
                data.node_labels[j].as_str(),
                v.as_str(),
            ]))?;
        }
    }
    csv_io(csv.flush().map_err(csv::Error::from))?;
    Ok(())
}

fn csv_io(r: std::result::Result<(), csv::Error>) -> Result<()> {
    r.map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("{other:?}")),
    })
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn rows_matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let p = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != p) {
        return Err(Error::Format(format!("{what} rows differ in length")));
    }
    Ok(DMatrix::from_row_iterator(n, p, rows.iter().flatten().copied()))
}

fn loadings_rows(alpha: &Loadings) -> Vec<Vec<f64>> {
    (0..alpha.n_rows()).map(|d| alpha.row(d).to_vec()).collect()
}

fn rows_loadings(rows: &[Vec<f64>]) -> Result<Loadings> {
    let p = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != p) {
        return Err(Error::Format("alpha rows differ in length".into()));
    }
    Loadings::from_rows(rows.len(), p, rows.concat())
}

/// Serialized estimation result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitFile {
    pub format_version: String,
    pub method: String,
    pub spec: ModelSpec,
    pub node_labels: Vec<String>,
    pub layer_labels: Vec<String>,
    /// One row per dyad in dyad order.
    pub alpha: Vec<Vec<f64>>,
    pub sigma: Vec<Vec<f64>>,
    pub z_modes: Vec<Vec<f64>>,
    pub loglik: f64,
    pub loglik_trace: Vec<f64>,
    pub converged: bool,
    pub status: FitStatus,
    pub grad_norm: f64,
    pub n_outer_iters: usize,
    pub seed: u64,
    pub sigma_structure: SigmaStructure,
    /// Loadings fixed at zero beyond the identifiability constraints.
    pub extra_zeros: Vec<(usize, usize)>,
    pub inner_tol: f64,
    pub inner_max_iters: usize,
    pub inner_max_halvings: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vcov: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vcov_error: Option<String>,
}

impl FitFile {
    pub fn from_fit(fit: &FitResult, data: &MultiviewData) -> Self {
        Self {
            format_version: FORMAT_VERSION.into(),
            method: "laplace".into(),
            spec: fit.spec.clone(),
            node_labels: data.node_labels.clone(),
            layer_labels: data.layer_labels.clone(),
            alpha: loadings_rows(&fit.alpha_hat),
            sigma: matrix_rows(&fit.sigma_hat),
            z_modes: fit.z_modes.iter().map(|z| z.iter().copied().collect()).collect(),
            loglik: fit.loglik,
            loglik_trace: fit.loglik_trace.clone(),
            converged: fit.converged,
            status: fit.status,
            grad_norm: fit.grad_norm,
            n_outer_iters: fit.n_outer_iters,
            seed: fit.seed,
            sigma_structure: fit.constraints.sigma,
            extra_zeros: fit.constraints.extra_zeros.iter().copied().collect(),
            inner_tol: fit.inner.tol,
            inner_max_iters: fit.inner.max_iters,
            inner_max_halvings: fit.inner.max_halvings,
            vcov: fit.vcov.as_ref().map(matrix_rows),
            vcov_error: fit.vcov_error.clone(),
        }
    }

    pub fn to_fit(&self) -> Result<FitResult> {
        check_version(&self.format_version)?;
        self.spec.validate()?;
        let alpha_vals = rows_loadings(&self.alpha)?;
        if alpha_vals.n_rows() != self.spec.n_dyads() || alpha_vals.n_cols() != self.spec.n_cols() {
            return Err(Error::Format("alpha does not match the spec".into()));
        }
        let mut constraints = build_constraints(&self.spec);
        constraints.sigma = self.sigma_structure;
        constraints.extra_zeros = self.extra_zeros.iter().copied().collect();
        let mut alpha = alpha_vals;
        let zeros = constraints.loading_zeros(&self.spec);
        if zeros.iter().any(|&(d, l)| alpha.get(d, l) != 0.0) {
            return Err(Error::Format("constrained loadings are nonzero".into()));
        }
        alpha.constrain(zeros);
        let z_modes = self
            .z_modes
            .iter()
            .map(|z| {
                if z.len() != self.spec.q {
                    return Err(Error::Format("latent mode has the wrong length".into()));
                }
                Ok(DVector::from_column_slice(z))
            })
            .collect::<Result<_>>()?;
        Ok(FitResult {
            alpha_hat: alpha,
            sigma_hat: rows_matrix(&self.sigma, "sigma")?,
            z_modes,
            loglik: self.loglik,
            loglik_trace: self.loglik_trace.clone(),
            grad_norm: self.grad_norm,
            converged: self.converged,
            status: self.status,
            n_outer_iters: self.n_outer_iters,
            vcov: self.vcov.as_deref().map(|v| rows_matrix(v, "vcov")).transpose()?,
            vcov_error: self.vcov_error.clone(),
            seed: self.seed,
            spec: self.spec.clone(),
            constraints,
            inner: InnerOptions {
                tol: self.inner_tol,
                max_iters: self.inner_max_iters,
                max_halvings: self.inner_max_halvings,
            },
        })
    }
}

/// Serialized simulation truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub format_version: String,
    pub spec: ModelSpec,
    pub seed: u64,
    pub node_labels: Vec<String>,
    pub layer_labels: Vec<String>,
    pub alpha: Vec<Vec<f64>>,
    pub sigma: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
}

impl TruthFile {
    pub fn new(truth: &SimTruth, spec: &ModelSpec, seed: u64, data: &MultiviewData) -> Self {
        Self {
            format_version: FORMAT_VERSION.into(),
            spec: spec.clone(),
            seed,
            node_labels: data.node_labels.clone(),
            layer_labels: data.layer_labels.clone(),
            alpha: loadings_rows(&truth.alpha_true),
            sigma: matrix_rows(&truth.sigma_true),
            z: truth.z_true.iter().map(|z| z.iter().copied().collect()).collect(),
        }
    }
}

/// Serialized sampler output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainFile {
    pub format_version: String,
    pub method: String,
    pub spec: ModelSpec,
    pub config: McmcConfig,
    pub node_labels: Vec<String>,
    pub layer_labels: Vec<String>,
    pub alpha_acceptance: f64,
    pub z_acceptance: f64,
    pub alpha_draws: Vec<Vec<f64>>,
    pub z_draws: Vec<Vec<f64>>,
}

impl ChainFile {
    pub fn new(sample: &PosteriorSample, spec: &ModelSpec, data: &MultiviewData) -> Self {
        Self {
            format_version: FORMAT_VERSION.into(),
            method: "mcmc".into(),
            spec: spec.clone(),
            config: sample.config,
            node_labels: data.node_labels.clone(),
            layer_labels: data.layer_labels.clone(),
            alpha_acceptance: sample.alpha_acceptance,
            z_acceptance: sample.z_acceptance,
            alpha_draws: sample.alpha_draws.clone(),
            z_draws: sample.z_draws.clone(),
        }
    }
}

/// Writes a value as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(value: &T, writer: impl Write) -> Result<()> {
    let mut w = BufWriter::new(writer);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Reads a JSON document carrying a `format_version` field.
pub fn read_versioned_json<T: for<'de> Deserialize<'de>>(reader: impl Read) -> Result<T> {
    let value: serde_json::Value = serde_json::from_reader(BufReader::new(reader))?;
    let version = value
        .get("format_version")
        .and_then(|v| v.as_str())
        .ok_or_else(|| Error::Format("missing format_version".into()))?;
    check_version(version)?;
    Ok(serde_json::from_value(value)?)
}

pub fn read_fit(path: &Path) -> Result<FitResult> {
    read_versioned_json::<FitFile>(File::open(path)?)?.to_fit()
}

/// Per-layer fitted or posterior mean edge values.
pub fn write_mean_table(means: &[DMatrix<f64>], data: &MultiviewData, column: &str, writer: impl Write) -> Result<()> {
    let mut w = BufWriter::new(writer);
    writeln!(w, "# format_version={FORMAT_VERSION}")?;
    writeln!(w, "layer,src,dst,{column}")?;
    let index = DyadIndex::new(data.n_nodes(), data.directed)?;
    for (k, mu) in means.iter().enumerate() {
        for &(i, j) in index.pairs() {
            writeln!(
                w,
                "{},{},{},{}",
                data.layer_labels[k],
                data.node_labels[i],
                data.node_labels[j],
                fmt_real(mu[(i, j)])
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_oracle_table(rows: &[LayerComparison], data: &MultiviewData, writer: impl Write) -> Result<()> {
    let mut w = BufWriter::new(writer);
    writeln!(w, "# format_version={FORMAT_VERSION}")?;
    writeln!(w, "layer,log_f_laplace,log_f_exact,error,log_f_exact_refined,self_converged")?;
    for (label, r) in data.layer_labels.iter().zip(rows) {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            label,
            fmt_real(r.laplace),
            fmt_real(r.exact.value),
            fmt_real(r.error()),
            fmt_real(r.exact.refined),
            r.exact.converged
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_metric_table(rows: &[McRow], tracked: &[usize], writer: impl Write) -> Result<()> {
    let mut w = BufWriter::new(writer);
    writeln!(w, "# format_version={FORMAT_VERSION}")?;
    let mut header = String::from(
        "replicate,network_seed,fit_seed,status,converged,loglik,grad_norm,n_outer_iters,eigen_error_mean",
    );
    for d in tracked {
        header.push_str(&format!(",rmse_pi_dyad{d}"));
    }
    header.push_str(",error");
    writeln!(w, "{header}")?;
    for r in rows {
        let status = r
            .status
            .map(|s| serde_json::to_value(s).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default())
            .unwrap_or_default();
        let mut line = format!(
            "{},{},{},{},{},{},{},{},{}",
            r.replicate,
            r.network_seed,
            r.fit_seed,
            status,
            r.converged,
            fmt_opt(r.loglik),
            fmt_opt(r.grad_norm),
            r.n_outer_iters.map(|v| v.to_string()).unwrap_or_default(),
            fmt_opt(r.eigen_error_mean)
        );
        for v in &r.rmse_pi {
            line.push(',');
            line.push_str(&fmt_opt(*v));
        }
        line.push(',');
        if let Some(e) = &r.error {
            line.push('"');
            line.push_str(&e.replace('"', "\"\""));
            line.push('"');
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_residual_table(set: &ResidualSet, data: &MultiviewData, writer: impl Write) -> Result<()> {
    let mut w = BufWriter::new(writer);
    writeln!(w, "# format_version={FORMAT_VERSION}")?;
    writeln!(w, "layer,src,dst,value,uniform,residual")?;
    let index = DyadIndex::new(data.n_nodes(), data.directed)?;
    let m = index.len();
    for (obs, (u, r)) in set.uniforms.iter().zip(&set.residuals).enumerate() {
        let (k, d) = (obs / m, obs % m);
        let (i, j) = index.pair(d);
        writeln!(
            w,
            "{},{},{},{},{},{}",
            data.layer_labels[k],
            data.node_labels[i],
            data.node_labels[j],
            data.get(k, i, j),
            fmt_real(*u),
            fmt_real(*r)
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_qq_table(qq: &QqData, writer: impl Write) -> Result<()> {
    let mut w = BufWriter::new(writer);
    writeln!(w, "# format_version={FORMAT_VERSION}")?;
    writeln!(w, "index,theoretical,sample,envelope_lower,envelope_upper")?;
    for i in 0..qq.sample.len() {
        writeln!(
            w,
            "{},{},{},{},{}",
            i + 1,
            fmt_real(qq.theoretical[i]),
            fmt_real(qq.sample[i]),
            fmt_real(qq.lower[i]),
            fmt_real(qq.upper[i])
        )?;
    }
    w.flush()?;
    Ok(())
}

fn default_true() -> bool {
    true
}
fn default_loading_sd() -> f64 {
    1.0
}
fn default_tracked() -> Vec<usize> {
    vec![0, 1, 2]
}

/// Flat Monte Carlo plan file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanFile {
    #[serde(default)]
    pub format_version: Option<String>,
    pub n_replicates: usize,
    pub n_nodes: usize,
    pub layers: usize,
    pub factors: usize,
    pub family: Family,
    pub assumption: Assumption,
    #[serde(default = "default_true")]
    pub directed: bool,
    #[serde(default = "default_true")]
    pub intercept: bool,
    pub generator_seed: u64,
    #[serde(default = "default_loading_sd")]
    pub loading_sd: f64,
    #[serde(default)]
    pub sigma_diag: Option<Vec<f64>>,
    #[serde(default = "default_tracked")]
    pub tracked_dyads: Vec<usize>,
    #[serde(default)]
    pub outer_tol: Option<f64>,
    #[serde(default)]
    pub rel_tol: Option<f64>,
    #[serde(default)]
    pub max_outer_iters: Option<usize>,
    #[serde(default)]
    pub gradient: Option<GradientMode>,
    #[serde(default)]
    pub sigma_structure: Option<SigmaStructure>,
}

impl PlanFile {
    pub fn parse(text: &str) -> Result<Self> {
        let plan: PlanFile = toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        if let Some(v) = &plan.format_version {
            check_version(v)?;
        }
        Ok(plan)
    }

    pub fn into_parts(self) -> Result<(McPlan, FitOptions)> {
        let spec = ModelSpec {
            family: self.family,
            q: self.factors,
            include_intercept: self.intercept,
            assumption: self.assumption,
            directed: self.directed,
            n_nodes: self.n_nodes,
        };
        let plan = McPlan {
            n_replicates: self.n_replicates,
            spec,
            k: self.layers,
            generator_seed: self.generator_seed,
            loading_sd: self.loading_sd,
            sigma_diag: self.sigma_diag,
            tracked_dyads: self.tracked_dyads,
        };
        plan.validate()?;
        let defaults = FitOptions::default();
        let opts = FitOptions {
            outer_tol: self.outer_tol.unwrap_or(defaults.outer_tol),
            rel_tol: self.rel_tol.unwrap_or(defaults.rel_tol),
            max_outer_iters: self.max_outer_iters.unwrap_or(defaults.max_outer_iters),
            gradient: self.gradient.unwrap_or(defaults.gradient),
            sigma_structure: self.sigma_structure.unwrap_or(defaults.sigma_structure),
            ..defaults
        };
        Ok((plan, opts))
    }
}
