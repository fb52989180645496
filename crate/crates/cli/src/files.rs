//! On-disk JSON formats. Every file carries the tool name and version.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use ktensors_core::baselines::MetricModel;
use ktensors_core::ktensors::{ClusterModel, FitConfig};
use ktensors_core::psd::PsdMatrix;
use ktensors_core::simgen::LabeledSample;
use ktensors_core::Result;

use crate::TOOL;

#[derive(Serialize)]
pub struct SampleFile {
    tool: &'static str,
    #[serde(flatten)]
    sample: LabeledSample,
}

impl SampleFile {
    pub fn new(sample: LabeledSample) -> Self {
        Self { tool: TOOL, sample }
    }
}

/// What `fit` and `eval` need from a sample file; labels are optional so
/// unlabelled data can be clustered too.
#[derive(Deserialize)]
pub struct SampleInput {
    pub matrices: Vec<PsdMatrix>,
    #[serde(default)]
    pub labels: Option<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedModel {
    #[serde(rename = "ktensors")]
    KTensors(ClusterModel),
    Metric(MetricModel),
}

impl FittedModel {
    /// Final loss, iterations and convergence flag.
    pub fn summary(&self) -> (f64, usize, bool) {
        match self {
            FittedModel::KTensors(m) => (m.loss, m.iterations, m.converged),
            FittedModel::Metric(m) => (m.loss, m.iterations, m.converged),
        }
    }

    pub fn assignments(&self) -> &[usize] {
        match self {
            FittedModel::KTensors(m) => &m.assignments,
            FittedModel::Metric(m) => &m.assignments,
        }
    }

    pub fn k(&self) -> usize {
        match self {
            FittedModel::KTensors(m) => m.k,
            FittedModel::Metric(m) => m.k,
        }
    }
}

#[derive(Serialize, Deserialize)]
pub struct ModelFile {
    pub tool: String,
    /// `lloyd`, `fast`, `hartigan` or a baseline metric name.
    pub method: String,
    /// Restart, iteration and seed settings (`algorithm` and `cpc_solver`
    /// apply to K-Tensors methods only).
    pub config: FitConfig,
    pub model: FittedModel,
}

impl ModelFile {
    pub fn new(method: &str, model: FittedModel, config: FitConfig) -> Self {
        Self {
            tool: TOOL.to_string(),
            method: method.to_string(),
            config,
            model,
        }
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let reader = BufReader::new(File::open(path)?);
    Ok(serde_json::from_reader(reader)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}
