//! Competitor clustering: k-means under the Euclidean (Frobenius) distance,
//! the affine-invariant Riemannian distance and the log-determinant
//! divergence.
//!
//! The clustering loop reuses the K-Tensors initialization, restart and
//! convergence conventions so that comparisons differ only in the metric.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ktensors::{check_sample, repair_empty, FitConfig};
use crate::linalg;
use crate::psd::PsdMatrix;
use crate::seeding::{derive_seed, random_partition, rng_from_seed};

/// Relative ridge: matrices whose smallest eigenvalue falls below
/// `DEFAULT_RIDGE * spectral_radius` get that amount added to the diagonal.
pub const DEFAULT_RIDGE: f64 = 1e-8;

/// Iteration cap and step tolerance of the affine-invariant centroid.
pub const KARCHER_MAX_ITER: usize = 50;
pub const KARCHER_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Euclidean,
    AffineInvariant,
    LogDet,
}

impl MetricKind {
    pub const ALL: [MetricKind; 3] = [MetricKind::Euclidean, MetricKind::AffineInvariant, MetricKind::LogDet];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Euclidean => "euclidean",
            MetricKind::AffineInvariant => "affine_invariant",
            MetricKind::LogDet => "log_det",
        }
    }

    /// How cluster centers are computed under this metric.
    pub fn centroid_rule(self) -> &'static str {
        match self {
            MetricKind::Euclidean => "arithmetic_mean",
            MetricKind::AffineInvariant => "karcher_mean",
            MetricKind::LogDet => "arithmetic_mean",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(MetricKind::Euclidean),
            "affine_invariant" => Ok(MetricKind::AffineInvariant),
            "log_det" => Ok(MetricKind::LogDet),
            other => Err(Error::InvalidConfig(format!("unknown metric {other:?}"))),
        }
    }
}

fn check_pair(a: &PsdMatrix, b: &PsdMatrix) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    Ok(())
}

/// `||a - b||_F`.
pub fn dist_euclidean(a: &PsdMatrix, b: &PsdMatrix) -> Result<f64> {
    check_pair(a, b)?;
    Ok((a.as_matrix() - b.as_matrix()).norm())
}

/// Eigendecomposition with the relative ridge applied when needed.
fn regularized_eigen(m: &DMatrix<f64>, ridge: f64) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let (mut values, vectors) = linalg::symmetric_eigen(m)?;
    let radius = values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let floor = ridge * radius;
    let min = values.last().copied().unwrap_or(0.0);
    if min < floor {
        values.iter_mut().for_each(|v| *v += floor);
    }
    if !(values.last().copied().unwrap_or(0.0) > 0.0) {
        return Err(Error::SingularAfterRidge);
    }
    Ok((values, vectors))
}

/// `m` itself, or `m + ridge * radius * I` when it is (nearly) singular.
fn regularize(m: &DMatrix<f64>, ridge: f64) -> Result<DMatrix<f64>> {
    let (values, vectors) = regularized_eigen(m, ridge)?;
    Ok(linalg::reconstruct(&values, &vectors))
}

fn inv_sqrt(m: &DMatrix<f64>, ridge: f64) -> Result<DMatrix<f64>> {
    let (values, vectors) = regularized_eigen(m, ridge)?;
    let inv: Vec<f64> = values.iter().map(|v| 1.0 / v.sqrt()).collect();
    Ok(linalg::reconstruct(&inv, &vectors))
}

/// Eigenvalues of `w m w` for a symmetric whitening matrix `w`.
fn whitened_eigenvalues(m: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<Vec<f64>> {
    let values = linalg::symmetric_eigen(&linalg::congruence(m, w))?.0;
    if values.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::SingularAfterRidge);
    }
    Ok(values)
}

fn affine_sq_from_eigenvalues(values: &[f64]) -> f64 {
    values.iter().map(|v| v.ln().powi(2)).sum()
}

fn logdet_from_eigenvalues(values: &[f64]) -> f64 {
    values.iter().map(|&v| v - 1.0 - v.ln()).sum::<f64>().max(0.0)
}

/// `||log(a^{-1/2} b a^{-1/2})||_F`, after ridge regularization of both
/// arguments (`ridge` is relative to each matrix's spectral radius).
pub fn dist_affine_invariant(a: &PsdMatrix, b: &PsdMatrix, ridge: f64) -> Result<f64> {
    check_pair(a, b)?;
    let w = inv_sqrt(a.as_matrix(), ridge)?;
    let b = regularize(b.as_matrix(), ridge)?;
    Ok(affine_sq_from_eigenvalues(&whitened_eigenvalues(&b, &w)?).sqrt())
}

/// `tr(b^{-1} a - I) - log det(b^{-1} a)`; not symmetric in its arguments.
pub fn dist_logdet(a: &PsdMatrix, b: &PsdMatrix, ridge: f64) -> Result<f64> {
    check_pair(a, b)?;
    let w = inv_sqrt(b.as_matrix(), ridge)?;
    let a = regularize(a.as_matrix(), ridge)?;
    Ok(logdet_from_eigenvalues(&whitened_eigenvalues(&a, &w)?))
}

/// Principal logarithm `U diag(log lambda) U^T` of a positive definite matrix.
pub fn matrix_log(m: &PsdMatrix) -> Result<DMatrix<f64>> {
    let (values, vectors) = linalg::symmetric_eigen(m.as_matrix())?;
    if values.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::SingularMatrix);
    }
    let logs: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    Ok(linalg::reconstruct(&logs, &vectors))
}

/// `U diag(exp lambda) U^T` of a symmetric matrix; always positive definite.
pub fn matrix_exp(sym: &DMatrix<f64>) -> Result<PsdMatrix> {
    Ok(PsdMatrix::from_trusted(linalg::spectral_map(&linalg::symmetrize(sym), f64::exp)?))
}

/// Result of [`kmeans_metric`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricModel {
    pub k: usize,
    pub metric: MetricKind,
    pub centroid_rule: String,
    pub centroids: Vec<PsdMatrix>,
    pub assignments: Vec<usize>,
    /// Sum of each observation's distance to its centroid: squared for the
    /// two metrics, the divergence `d(psi_i, c)` itself for log-det.
    pub loss: f64,
    pub loss_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub seed: u64,
    pub ridge: f64,
    /// Observations that needed the ridge.
    pub ridged_observations: usize,
    pub best_restart: usize,
    pub restart_losses: Vec<f64>,
    pub empty_cluster_repairs: usize,
}

struct Center {
    m: DMatrix<f64>,
    /// `m^{-1/2}`, unused for the Euclidean metric.
    whitener: DMatrix<f64>,
}

impl Center {
    fn new(m: DMatrix<f64>, metric: MetricKind) -> Result<Self> {
        let whitener = match metric {
            MetricKind::Euclidean => DMatrix::zeros(0, 0),
            _ => inv_sqrt(&m, DEFAULT_RIDGE)?,
        };
        Ok(Self { m, whitener })
    }
}

fn loss_to_center(x: &DMatrix<f64>, c: &Center, metric: MetricKind) -> Result<f64> {
    Ok(match metric {
        MetricKind::Euclidean => (x - &c.m).norm_squared(),
        MetricKind::AffineInvariant => affine_sq_from_eigenvalues(&whitened_eigenvalues(x, &c.whitener)?),
        MetricKind::LogDet => logdet_from_eigenvalues(&whitened_eigenvalues(x, &c.whitener)?),
    })
}

fn cluster_cost(cluster: &[&DMatrix<f64>], c: &Center, metric: MetricKind) -> Result<f64> {
    cluster.iter().map(|x| loss_to_center(x, c, metric)).sum()
}

fn arithmetic_mean(cluster: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let p = cluster[0].nrows();
    let mut acc = DMatrix::zeros(p, p);
    for x in cluster {
        acc += *x;
    }
    linalg::symmetrize(&(acc / cluster.len() as f64))
}

/// Karcher mean under the affine-invariant metric by the fixed-point
/// iteration `X <- X^{1/2} exp(mean_i log(X^{-1/2} psi_i X^{-1/2})) X^{1/2}`.
pub fn karcher_mean(sample: &[PsdMatrix]) -> Result<PsdMatrix> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    let p = sample[0].dim();
    let prepared = sample
        .iter()
        .map(|m| {
            if m.dim() != p {
                return Err(Error::DimMismatch { expected: p, found: m.dim() });
            }
            regularize(m.as_matrix(), DEFAULT_RIDGE)
        })
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&DMatrix<f64>> = prepared.iter().collect();
    let start = arithmetic_mean(&refs);
    Ok(PsdMatrix::from_trusted(karcher_iterate(&refs, start)?))
}

fn karcher_iterate(cluster: &[&DMatrix<f64>], start: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut x = start;
    for _ in 0..KARCHER_MAX_ITER {
        let (values, vectors) = regularized_eigen(&x, DEFAULT_RIDGE)?;
        let root: Vec<f64> = values.iter().map(|v| v.sqrt()).collect();
        let inv_root: Vec<f64> = root.iter().map(|r| 1.0 / r).collect();
        let sqrt_x = linalg::reconstruct(&root, &vectors);
        let w = linalg::reconstruct(&inv_root, &vectors);
        let p = x.nrows();
        let mut step = DMatrix::zeros(p, p);
        for m in cluster {
            step += linalg::spectral_map(&linalg::congruence(m, &w), f64::ln)?;
        }
        step /= cluster.len() as f64;
        let next = linalg::congruence(&linalg::spectral_map(&step, f64::exp)?, &sqrt_x);
        let size = step.norm();
        x = next;
        if size < KARCHER_TOL {
            break;
        }
    }
    Ok(x)
}

fn estimate_center(
    cluster: &[&DMatrix<f64>],
    metric: MetricKind,
    incumbent: Option<&Center>,
) -> Result<Center> {
    match metric {
        // Both minimize the cluster cost exactly: the mean for squared
        // Frobenius, and for the divergence measured as d(psi_i, c).
        MetricKind::Euclidean | MetricKind::LogDet => Center::new(arithmetic_mean(cluster), metric),
        MetricKind::AffineInvariant => {
            let start = incumbent.map_or_else(|| arithmetic_mean(cluster), |c| c.m.clone());
            let candidate = Center::new(karcher_iterate(cluster, start)?, metric)?;
            let Some(inc) = incumbent else {
                return Ok(candidate);
            };
            // The fixed-point step is not guaranteed to descend; never let
            // the centroid update raise the cluster cost.
            if cluster_cost(cluster, &candidate, metric)? <= cluster_cost(cluster, inc, metric)? {
                Ok(candidate)
            } else {
                Center::new(inc.m.clone(), metric)
            }
        }
    }
}

/// Lloyd-style k-means under `metric`, best of `config.restarts` random
/// partitions (the same partitions K-Tensors would start from for an equal
/// seed). `k` overrides `config.k`.
pub fn kmeans_metric(
    sample: &[PsdMatrix],
    k: usize,
    metric: MetricKind,
    config: &FitConfig,
) -> Result<MetricModel> {
    let cfg = FitConfig { k, ..config.clone() };
    cfg.validate()?;
    check_sample(sample, k)?;
    let (prepared, ridged) = prepare(sample, metric)?;
    let mut best: Option<MetricModel> = None;
    let mut losses = Vec::with_capacity(cfg.restarts);
    for r in 0..cfg.restarts {
        let mut rng = rng_from_seed(derive_seed(cfg.seed, &[r as u64]));
        let init = random_partition(sample.len(), k, &mut rng)?;
        let mut model = run_kmeans(&prepared, &cfg, metric, &init)?;
        model.best_restart = r;
        model.ridged_observations = ridged;
        losses.push(model.loss);
        if best.as_ref().is_none_or(|b| model.loss < b.loss) {
            best = Some(model);
        }
    }
    let mut model = best.expect("at least one restart");
    model.restart_losses = losses;
    Ok(model)
}

/// A single k-means run from the given initial labels.
pub fn kmeans_from_partition(
    sample: &[PsdMatrix],
    metric: MetricKind,
    config: &FitConfig,
    initial: &[usize],
) -> Result<MetricModel> {
    config.validate()?;
    check_sample(sample, config.k)?;
    if initial.len() != sample.len() {
        return Err(Error::LengthMismatch {
            left: initial.len(),
            right: sample.len(),
        });
    }
    if initial.iter().any(|&l| l >= config.k) {
        return Err(Error::InvalidConfig("initial label out of range".into()));
    }
    let (prepared, ridged) = prepare(sample, metric)?;
    let mut model = run_kmeans(&prepared, config, metric, initial)?;
    model.ridged_observations = ridged;
    Ok(model)
}

fn prepare(sample: &[PsdMatrix], metric: MetricKind) -> Result<(Vec<DMatrix<f64>>, usize)> {
    let mut ridged = 0;
    let mut out = Vec::with_capacity(sample.len());
    for m in sample {
        if metric == MetricKind::Euclidean {
            out.push(m.as_matrix().clone());
            continue;
        }
        let r = regularize(m.as_matrix(), DEFAULT_RIDGE)?;
        if r != *m.as_matrix() {
            ridged += 1;
        }
        out.push(r);
    }
    Ok((out, ridged))
}

fn run_kmeans(
    data: &[DMatrix<f64>],
    config: &FitConfig,
    metric: MetricKind,
    initial: &[usize],
) -> Result<MetricModel> {
    let k = config.k;
    let mut partition = initial.to_vec();
    let mut repairs = repair_empty(&mut partition, &vec![0.0; data.len()], k);
    let mut centers: Vec<Center> = Vec::new();
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut assignments = partition.clone();

    for iter in 1..=config.max_iter {
        iterations = iter;
        let mut next = Vec::with_capacity(k);
        for c in 0..k {
            let cluster: Vec<&DMatrix<f64>> = data
                .iter()
                .zip(&partition)
                .filter(|(_, &l)| l == c)
                .map(|(m, _)| m)
                .collect();
            next.push(estimate_center(&cluster, metric, centers.get(c))?);
        }
        centers = next;
        let mut labels = Vec::with_capacity(data.len());
        let mut dists = Vec::with_capacity(data.len());
        for x in data {
            let mut best = (0, f64::INFINITY);
            for (c, center) in centers.iter().enumerate() {
                let d = loss_to_center(x, center, metric)?;
                if d < best.1 {
                    best = (c, d);
                }
            }
            labels.push(best.0);
            dists.push(best.1);
        }
        let loss: f64 = dists.iter().sum();
        let previous = trace.last().copied();
        trace.push(loss);
        assignments = labels.clone();
        if labels == partition {
            converged = true;
            break;
        }
        if let Some(prev) = previous {
            if (prev - loss).abs() <= config.tol * loss.max(1.0) {
                converged = true;
                break;
            }
        }
        partition = labels;
        repairs += repair_empty(&mut partition, &dists, k);
    }

    let loss = *trace.last().expect("max_iter >= 1");
    Ok(MetricModel {
        k,
        metric,
        centroid_rule: metric.centroid_rule().to_string(),
        centroids: centers.into_iter().map(|c| PsdMatrix::from_trusted(c.m)).collect(),
        assignments,
        loss,
        loss_trace: trace,
        iterations,
        converged,
        seed: config.seed,
        ridge: DEFAULT_RIDGE,
        ridged_observations: 0,
        best_restart: 0,
        restart_losses: vec![loss],
        empty_cluster_repairs: repairs,
    })
}
