//! K-Tensors clustering: batch (Lloyd-style) updates with either CPC
//! estimator, and a Hartigan-style single-observation exchange variant.
//!
//! All variants share one objective, the sum over observations of the squared
//! residual to the closest cluster frame.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cpc::{self, CpcInit, DEFAULT_FG_MAX_SWEEPS, DEFAULT_FG_TOL};
use crate::error::{Error, Result};
use crate::projection::{min_residual_sq, residual_sq};
use crate::psd::{OrthonormalFrame, PsdMatrix};
use crate::seeding::{derive_seed, random_partition, rng_from_seed};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Alternate per-cluster CPC estimation and reassignment.
    Lloyd,
    /// Lloyd with the eigen-of-sum CPC estimate.
    Fast,
    /// Move one observation at a time while the objective strictly drops.
    Hartigan,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Lloyd => "lloyd",
            Algorithm::Fast => "fast",
            Algorithm::Hartigan => "hartigan",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lloyd" => Ok(Algorithm::Lloyd),
            "fast" => Ok(Algorithm::Fast),
            "hartigan" => Ok(Algorithm::Hartigan),
            other => Err(Error::InvalidConfig(format!("unknown algorithm {other:?}"))),
        }
    }
}

/// Per-cluster CPC estimator used by [`Algorithm::Lloyd`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CpcSolver {
    Fg,
    Fast,
}

impl FromStr for CpcSolver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fg" => Ok(CpcSolver::Fg),
            "fast" => Ok(CpcSolver::Fast),
            other => Err(Error::InvalidConfig(format!("unknown CPC solver {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub k: usize,
    pub algorithm: Algorithm,
    pub cpc_solver: CpcSolver,
    pub restarts: usize,
    pub max_iter: usize,
    /// Relative loss-change tolerance.
    pub tol: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            k: 2,
            algorithm: Algorithm::Lloyd,
            cpc_solver: CpcSolver::Fg,
            restarts: 10,
            max_iter: 100,
            tol: 1e-10,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if self.restarts < 1 {
            return Err(Error::InvalidConfig("restarts must be at least 1".into()));
        }
        if self.max_iter < 1 {
            return Err(Error::InvalidConfig("max_iter must be at least 1".into()));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::InvalidConfig("tol must be non-negative".into()));
        }
        Ok(())
    }
}

/// A fitted clustering.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub frames: Vec<OrthonormalFrame>,
    pub assignments: Vec<usize>,
    pub loss: f64,
    pub loss_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub seed: u64,
    pub algorithm: Algorithm,
    pub cpc_solver: CpcSolver,
    /// Restart that produced this model.
    pub best_restart: usize,
    /// Final loss of every restart, in restart order.
    pub restart_losses: Vec<f64>,
    /// Clusters re-seeded after emptying out during the winning run.
    pub empty_cluster_repairs: usize,
    /// Stationarity residual of each frame on its final members (0 for empty clusters).
    pub stationarity_residuals: Vec<f64>,
    /// Hartigan only: partition objective initially and after every accepted move.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub move_trace: Vec<f64>,
}

pub(crate) fn check_sample(sample: &[PsdMatrix], k: usize) -> Result<usize> {
    if sample.len() < k || sample.is_empty() {
        return Err(Error::TooFewObservations { n: sample.len(), k });
    }
    let p = sample[0].dim();
    if let Some(bad) = sample.iter().find(|m| m.dim() != p) {
        return Err(Error::DimMismatch {
            expected: p,
            found: bad.dim(),
        });
    }
    Ok(p)
}

/// Assign every observation to its closest frame; returns labels and the
/// summed squared distances.
pub fn assign_all(sample: &[PsdMatrix], frames: &[OrthonormalFrame]) -> Result<(Vec<usize>, f64)> {
    let (labels, dists) = assign_with_distances(sample, frames)?;
    Ok((labels, dists.iter().sum()))
}

fn assign_with_distances(
    sample: &[PsdMatrix],
    frames: &[OrthonormalFrame],
) -> Result<(Vec<usize>, Vec<f64>)> {
    let mut labels = Vec::with_capacity(sample.len());
    let mut dists = Vec::with_capacity(sample.len());
    for psi in sample {
        let (h, d) = min_residual_sq(psi, frames)?;
        labels.push(h);
        dists.push(d);
    }
    Ok((labels, dists))
}

/// Sum over observations of the squared minimal distance to the frames.
pub fn total_loss(sample: &[PsdMatrix], frames: &[OrthonormalFrame]) -> Result<f64> {
    Ok(assign_all(sample, frames)?.1)
}

/// Dispatch on `config.algorithm`.
pub fn fit(sample: &[PsdMatrix], config: &FitConfig) -> Result<ClusterModel> {
    match config.algorithm {
        Algorithm::Lloyd => fit_lloyd(sample, config),
        Algorithm::Fast => fit_fast(sample, config),
        Algorithm::Hartigan => fit_hartigan(sample, config),
    }
}

/// Batch K-Tensors with `config.cpc_solver` as the per-cluster estimator.
pub fn fit_lloyd(sample: &[PsdMatrix], config: &FitConfig) -> Result<ClusterModel> {
    let cfg = FitConfig {
        algorithm: Algorithm::Lloyd,
        ..config.clone()
    };
    fit_restarts(sample, &cfg)
}

/// Batch K-Tensors with the eigen-of-sum estimator.
pub fn fit_fast(sample: &[PsdMatrix], config: &FitConfig) -> Result<ClusterModel> {
    let cfg = FitConfig {
        algorithm: Algorithm::Fast,
        cpc_solver: CpcSolver::Fast,
        ..config.clone()
    };
    fit_restarts(sample, &cfg)
}

/// Hartigan-style exchange with eigen-of-sum frames.
pub fn fit_hartigan(sample: &[PsdMatrix], config: &FitConfig) -> Result<ClusterModel> {
    let cfg = FitConfig {
        algorithm: Algorithm::Hartigan,
        cpc_solver: CpcSolver::Fast,
        ..config.clone()
    };
    fit_restarts(sample, &cfg)
}

fn fit_restarts(sample: &[PsdMatrix], config: &FitConfig) -> Result<ClusterModel> {
    config.validate()?;
    check_sample(sample, config.k)?;
    let mut best: Option<ClusterModel> = None;
    let mut losses = Vec::with_capacity(config.restarts);
    for r in 0..config.restarts {
        let mut rng = rng_from_seed(derive_seed(config.seed, &[r as u64]));
        let init = random_partition(sample.len(), config.k, &mut rng)?;
        let mut model = fit_from_partition(sample, config, &init)?;
        model.best_restart = r;
        losses.push(model.loss);
        // Strict comparison keeps the earliest restart on ties.
        if best.as_ref().is_none_or(|b| model.loss < b.loss) {
            best = Some(model);
        }
    }
    let mut model = best.expect("at least one restart");
    model.restart_losses = losses;
    Ok(model)
}

/// A single run of `config.algorithm` from the given initial labels.
pub fn fit_from_partition(
    sample: &[PsdMatrix],
    config: &FitConfig,
    initial: &[usize],
) -> Result<ClusterModel> {
    config.validate()?;
    check_sample(sample, config.k)?;
    if initial.len() != sample.len() {
        return Err(Error::LengthMismatch {
            left: initial.len(),
            right: sample.len(),
        });
    }
    if let Some(&bad) = initial.iter().find(|&&l| l >= config.k) {
        return Err(Error::InvalidConfig(format!(
            "initial label {bad} out of range for k = {}",
            config.k
        )));
    }
    match config.algorithm {
        Algorithm::Hartigan => run_hartigan(sample, config, initial),
        Algorithm::Fast => run_lloyd(sample, config, CpcSolver::Fast, initial),
        Algorithm::Lloyd => run_lloyd(sample, config, config.cpc_solver, initial),
    }
}

fn members<'a>(sample: &'a [PsdMatrix], labels: &[usize], k: usize) -> Vec<&'a PsdMatrix> {
    sample
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == k)
        .map(|(m, _)| m)
        .collect()
}

/// Move observations into empty clusters, largest current distance first,
/// taking only from clusters with more than one member. Returns the number
/// of clusters re-seeded.
pub(crate) fn repair_empty(labels: &mut [usize], dists: &[f64], k: usize) -> usize {
    let mut counts = vec![0usize; k];
    for &l in labels.iter() {
        counts[l] += 1;
    }
    let mut repairs = 0;
    let mut taken = vec![false; labels.len()];
    for c in 0..k {
        if counts[c] > 0 {
            continue;
        }
        let pick = (0..labels.len())
            .filter(|&i| !taken[i] && counts[labels[i]] > 1)
            .fold(None, |best: Option<usize>, i| match best {
                Some(b) if dists[b] >= dists[i] => Some(b),
                _ => Some(i),
            });
        let i = pick.expect("n >= k guarantees a donor cluster");
        counts[labels[i]] -= 1;
        labels[i] = c;
        counts[c] += 1;
        taken[i] = true;
        repairs += 1;
    }
    repairs
}

fn estimate_frame(
    cluster: &[&PsdMatrix],
    solver: CpcSolver,
    incumbent: Option<&OrthonormalFrame>,
) -> Result<OrthonormalFrame> {
    let candidate = match solver {
        CpcSolver::Fast => cpc::fast_cpc(cluster)?,
        CpcSolver::Fg => cpc::fg_cpc(cluster, &CpcInit::EigenOfMean, DEFAULT_FG_MAX_SWEEPS, DEFAULT_FG_TOL)?,
    };
    let Some(inc) = incumbent else {
        return Ok(candidate.frame);
    };
    // Keep the update only if it does not raise this cluster's loss; this is
    // what makes the batch loss sequence monotone.
    let inc_obj = cpc::cpc_objective(cluster, inc)?;
    if candidate.objective <= inc_obj {
        return Ok(candidate.frame);
    }
    match solver {
        CpcSolver::Fast => Ok(inc.clone()),
        CpcSolver::Fg => {
            let warm = cpc::fg_cpc(cluster, &CpcInit::Frame(inc.clone()), DEFAULT_FG_MAX_SWEEPS, DEFAULT_FG_TOL)?;
            Ok(if warm.objective <= inc_obj { warm.frame } else { inc.clone() })
        }
    }
}

fn stationarity_by_cluster(
    sample: &[PsdMatrix],
    frames: &[OrthonormalFrame],
    labels: &[usize],
) -> Result<Vec<f64>> {
    frames
        .iter()
        .enumerate()
        .map(|(c, f)| {
            let m = members(sample, labels, c);
            if m.is_empty() {
                Ok(0.0)
            } else {
                cpc::stationarity_residual(&m, f)
            }
        })
        .collect()
}

fn run_lloyd(
    sample: &[PsdMatrix],
    config: &FitConfig,
    solver: CpcSolver,
    initial: &[usize],
) -> Result<ClusterModel> {
    let k = config.k;
    let mut partition = initial.to_vec();
    let mut repairs = repair_empty(&mut partition, &vec![0.0; sample.len()], k);
    let mut frames: Vec<OrthonormalFrame> = Vec::new();
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut assignments = partition.clone();

    for iter in 1..=config.max_iter {
        iterations = iter;
        let mut next = Vec::with_capacity(k);
        for c in 0..k {
            let cluster = members(sample, &partition, c);
            next.push(estimate_frame(&cluster, solver, frames.get(c))?);
        }
        frames = next;
        let (labels, dists) = assign_with_distances(sample, &frames)?;
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
    Ok(ClusterModel {
        k,
        stationarity_residuals: stationarity_by_cluster(sample, &frames, &assignments)?,
        frames,
        assignments,
        loss,
        loss_trace: trace,
        iterations,
        converged,
        seed: config.seed,
        algorithm: config.algorithm,
        cpc_solver: solver,
        best_restart: 0,
        restart_losses: vec![loss],
        empty_cluster_repairs: repairs,
        move_trace: Vec::new(),
    })
}

struct ClusterState {
    frame: OrthonormalFrame,
    loss: f64,
}

fn cluster_state(cluster: &[&PsdMatrix]) -> Result<ClusterState> {
    let frame = cpc::fast_cpc(cluster)?.frame;
    let loss = cluster_loss(cluster, &frame)?;
    Ok(ClusterState { frame, loss })
}

fn cluster_loss(cluster: &[&PsdMatrix], frame: &OrthonormalFrame) -> Result<f64> {
    cluster.iter().map(|m| residual_sq(m, frame)).sum()
}

fn run_hartigan(sample: &[PsdMatrix], config: &FitConfig, initial: &[usize]) -> Result<ClusterModel> {
    let k = config.k;
    let n = sample.len();
    let mut labels = initial.to_vec();
    let repairs = repair_empty(&mut labels, &vec![0.0; n], k);

    let mut states = (0..k)
        .map(|c| cluster_state(&members(sample, &labels, c)))
        .collect::<Result<Vec<_>>>()?;
    let mut counts = vec![0usize; k];
    for &l in &labels {
        counts[l] += 1;
    }
    let objective = |states: &[ClusterState]| states.iter().map(|s| s.loss).sum::<f64>();
    let mut current = objective(&states);
    let mut move_trace = vec![current];
    let mut trace = Vec::new();
    let mut converged = false;
    let mut sweeps = 0;

    while sweeps < config.max_iter {
        sweeps += 1;
        let mut moved = false;
        for i in 0..n {
            let from = labels[i];
            if counts[from] == 1 {
                continue;
            }
            let mut without: Vec<&PsdMatrix> = members(sample, &labels, from);
            without.retain(|m| !std::ptr::eq(*m, &sample[i]));
            let shrunk = cluster_state(&without)?;

            let mut best: Option<(usize, f64, ClusterState)> = None;
            for to in (0..k).filter(|&c| c != from) {
                let mut with = members(sample, &labels, to);
                with.push(&sample[i]);
                let grown = cluster_state(&with)?;
                let delta = (shrunk.loss + grown.loss) - (states[from].loss + states[to].loss);
                if best.as_ref().is_none_or(|b| delta < b.1) {
                    best = Some((to, delta, grown));
                }
            }
            let Some((to, delta, grown)) = best else { continue };
            if delta < -1e-12 * current.max(1.0) {
                labels[i] = to;
                counts[from] -= 1;
                counts[to] += 1;
                states[from] = shrunk;
                states[to] = grown;
                current = objective(&states);
                move_trace.push(current);
                moved = true;
            }
        }
        if !moved {
            // Single exchanges are exhausted; try reassigning everything to
            // its closest current frame and keep it only on a strict decrease.
            let frames: Vec<OrthonormalFrame> = states.iter().map(|s| s.frame.clone()).collect();
            let (mut candidate, dists) = assign_with_distances(sample, &frames)?;
            repair_empty(&mut candidate, &dists, k);
            if candidate != labels {
                let cand_states = (0..k)
                    .map(|c| cluster_state(&members(sample, &candidate, c)))
                    .collect::<Result<Vec<_>>>()?;
                let cand_obj = objective(&cand_states);
                if cand_obj < current - 1e-12 * current.max(1.0) {
                    labels = candidate;
                    states = cand_states;
                    counts = vec![0usize; k];
                    for &l in &labels {
                        counts[l] += 1;
                    }
                    current = cand_obj;
                    move_trace.push(current);
                    moved = true;
                }
            }
        }
        trace.push(current);
        if !moved {
            converged = true;
            break;
        }
    }

    let frames: Vec<OrthonormalFrame> = states.into_iter().map(|s| s.frame).collect();
    let (assignments, loss) = assign_all(sample, &frames)?;
    if loss < *trace.last().expect("at least one sweep") {
        trace.push(loss);
    }
    Ok(ClusterModel {
        k,
        stationarity_residuals: stationarity_by_cluster(sample, &frames, &assignments)?,
        frames,
        assignments,
        loss,
        loss_trace: trace,
        iterations: sweeps,
        converged,
        seed: config.seed,
        algorithm: Algorithm::Hartigan,
        cpc_solver: CpcSolver::Fast,
        best_restart: 0,
        restart_losses: vec![loss],
        empty_cluster_repairs: repairs,
        move_trace,
    })
}
