//! Simulated samples with known cluster structure.
//!
//! Two generators are provided. The Cook-structure model draws
//! `psi_i = U_k Lambda_i U_k^T + E_i` with a per-observation random spectrum
//! and PSD noise of fixed Frobenius norm. The Wishart model draws
//! `psi_i ~ W_p(df, U_k Lambda_i U_k^T)`, again with a per-observation spectrum. In both, the cluster frames `U_k` are small
//! random rotations of one shared base frame, so clusters differ only in
//! their eigenvectors and `separation` sets how far apart those are.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::psd::{random_orthonormal, OrthonormalFrame, PsdMatrix};
use crate::seeding::rng_from_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    Cook,
    Wishart,
}

impl Generator {
    pub fn as_str(self) -> &'static str {
        match self {
            Generator::Cook => "cook",
            Generator::Wishart => "wishart",
        }
    }
}

impl fmt::Display for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Generator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cook" => Ok(Generator::Cook),
            "wishart" => Ok(Generator::Wishart),
            other => Err(Error::InvalidConfig(format!("unknown generator {other:?}"))),
        }
    }
}

pub const DEFAULT_P: usize = 5;
pub const DEFAULT_K: usize = 2;
pub const DEFAULT_N_PER_CLUSTER: usize = 40;
pub const DEFAULT_EIGENVALUE_LAW: [f64; 2] = [1.0, 10.0];
pub const DEFAULT_SEPARATION: f64 = 0.3;
pub const DEFAULT_NOISE_LEVEL: f64 = 0.3;
pub const DEFAULT_DF: usize = 20;

/// Degrees of freedom of the Wishart draws that shape the Cook noise.
fn cook_noise_df(p: usize) -> usize {
    p
}

/// Everything needed to regenerate a sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub id: String,
    pub generator: Generator,
    pub p: usize,
    pub n_per_cluster: usize,
    pub k: usize,
    /// Cook: Frobenius norm of every noise matrix.
    pub noise_level: f64,
    /// Wishart: degrees of freedom.
    pub df: usize,
    /// 0 gives identical cluster frames; 1 rotates each cluster frame by up
    /// to a right angle away from the shared base frame.
    pub separation: f64,
    /// Range of the uniform eigenvalue draws.
    pub eigenvalue_law: [f64; 2],
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            id: "default".into(),
            generator: Generator::Cook,
            p: DEFAULT_P,
            n_per_cluster: DEFAULT_N_PER_CLUSTER,
            k: DEFAULT_K,
            noise_level: DEFAULT_NOISE_LEVEL,
            df: DEFAULT_DF,
            separation: DEFAULT_SEPARATION,
            eigenvalue_law: DEFAULT_EIGENVALUE_LAW,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.p < 1 {
            return bad("p must be at least 1".into());
        }
        if self.k < 1 || self.n_per_cluster < 1 {
            return bad("k and n_per_cluster must be at least 1".into());
        }
        if !(self.noise_level >= 0.0) || !self.noise_level.is_finite() {
            return bad(format!("noise_level must be non-negative, got {}", self.noise_level));
        }
        if !(0.0..=1.0).contains(&self.separation) {
            return bad(format!("separation must lie in [0, 1], got {}", self.separation));
        }
        let [lo, hi] = self.eigenvalue_law;
        if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
            return bad(format!("eigenvalue_law must satisfy 0 <= lo <= hi, got [{lo}, {hi}]"));
        }
        if self.generator == Generator::Wishart && self.df < self.p {
            return bad(format!("df = {} must be at least p = {}", self.df, self.p));
        }
        Ok(())
    }

    /// Number of observations, `k * n_per_cluster`.
    pub fn n(&self) -> usize {
        self.k * self.n_per_cluster
    }

    /// The varying parameter of the scenario: noise level or degrees of freedom.
    pub fn noise_or_df(&self) -> f64 {
        match self.generator {
            Generator::Cook => self.noise_level,
            Generator::Wishart => self.df as f64,
        }
    }
}

/// Generating parameters of a sample.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Truth {
    pub base_frame: OrthonormalFrame,
    pub frames: Vec<OrthonormalFrame>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LabeledSample {
    pub config: ScenarioConfig,
    pub matrices: Vec<PsdMatrix>,
    pub labels: Vec<usize>,
    pub truth: Truth,
}

impl LabeledSample {
    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }
}

/// Generate with a fresh stream seeded from `config.seed`.
pub fn generate(config: &ScenarioConfig) -> Result<LabeledSample> {
    let mut rng = rng_from_seed(config.seed);
    match config.generator {
        Generator::Cook => gen_cook(config, &mut rng),
        Generator::Wishart => gen_wishart(config, &mut rng),
    }
}

/// A uniformly random skew-symmetric direction with unit spectral norm.
fn random_skew<R: Rng + ?Sized>(p: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(p, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let skew = (&g - g.transpose()) * 0.5;
    let norm = skew.clone().svd(false, false).singular_values.max();
    if norm > 0.0 {
        skew / norm
    } else {
        skew
    }
}

/// `U0 exp(separation * pi/2 * S_k)` for independent random unit directions `S_k`.
fn cluster_frames<R: Rng + ?Sized>(
    config: &ScenarioConfig,
    rng: &mut R,
) -> Result<(OrthonormalFrame, Vec<OrthonormalFrame>)> {
    let p = config.p;
    let base = random_orthonormal(p, rng);
    let angle = config.separation * FRAC_PI_2;
    let mut frames = Vec::with_capacity(config.k);
    for _ in 0..config.k {
        let rotation = (random_skew(p, rng) * angle).exp();
        frames.push(OrthonormalFrame::new(base.as_matrix() * rotation)?);
    }
    Ok((base, frames))
}

fn uniform_spectrum<R: Rng + ?Sized>(p: usize, law: [f64; 2], rng: &mut R) -> Vec<f64> {
    let [lo, hi] = law;
    (0..p)
        .map(|_| if hi > lo { rng.random_range(lo..hi) } else { lo })
        .collect()
}

/// One Wishart `W_p(df, I)` draw as the Bartlett factor `A` (so `W = A A^T`):
/// lower triangular, `A_ii = sqrt(chi2(df - i))`, standard normal below.
fn bartlett_factor<R: Rng + ?Sized>(p: usize, df: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    let mut a = DMatrix::zeros(p, p);
    for i in 0..p {
        let chi = ChiSquared::new((df - i) as f64)
            .map_err(|e| Error::InvalidConfig(format!("chi-squared with {} df: {e}", df - i)))?;
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample(StandardNormal);
        }
    }
    Ok(a)
}

/// `W ~ W_p(df, L L^T)` given the Cholesky-like factor `L` of the scale.
pub fn sample_wishart<R: Rng + ?Sized>(
    scale_factor: &DMatrix<f64>,
    df: usize,
    rng: &mut R,
) -> Result<PsdMatrix> {
    let p = scale_factor.nrows();
    if df < p {
        return Err(Error::InvalidConfig(format!("df = {df} must be at least p = {p}")));
    }
    let la = scale_factor * bartlett_factor(p, df, rng)?;
    Ok(PsdMatrix::from_trusted(&la * la.transpose()))
}

/// A PSD noise matrix with Frobenius norm exactly `level`: a `W_p(p, I)`
/// draw rescaled.
fn cook_noise<R: Rng + ?Sized>(p: usize, level: f64, rng: &mut R) -> Result<DMatrix<f64>> {
    let w = sample_wishart(&DMatrix::identity(p, p), cook_noise_df(p), rng)?.into_matrix();
    let norm = w.norm();
    Ok(if norm > 0.0 { w * (level / norm) } else { w })
}

fn check_generator(config: &ScenarioConfig, expected: Generator) -> Result<()> {
    config.validate()?;
    if config.generator != expected {
        return Err(Error::InvalidConfig(format!(
            "config is for the {} generator, not {}",
            config.generator, expected
        )));
    }
    Ok(())
}

/// Cook-structure sample; observations are ordered cluster by cluster.
pub fn gen_cook<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> Result<LabeledSample> {
    check_generator(config, Generator::Cook)?;
    let p = config.p;
    let (base, frames) = cluster_frames(config, rng)?;
    let mut matrices = Vec::with_capacity(config.n());
    let mut labels = Vec::with_capacity(config.n());
    for (k, frame) in frames.iter().enumerate() {
        for _ in 0..config.n_per_cluster {
            let spectrum = uniform_spectrum(p, config.eigenvalue_law, rng);
            let signal = PsdMatrix::from_diagonal(&spectrum)?.conjugate(frame);
            let mut m = signal.into_matrix();
            if config.noise_level > 0.0 {
                m += cook_noise(p, config.noise_level, rng)?;
            }
            matrices.push(PsdMatrix::new(m)?);
            labels.push(k);
        }
    }
    Ok(LabeledSample {
        config: config.clone(),
        matrices,
        labels,
        truth: Truth { base_frame: base, frames },
    })
}

/// Wishart sample: observation `i` of cluster `k` is drawn from
/// `W_p(df, U_k Lambda_i U_k^T)` with its own uniform spectrum `Lambda_i`, so
/// clusters share eigenvalue laws and differ only in eigenvectors.
/// Observations are ordered cluster by cluster.
pub fn gen_wishart<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> Result<LabeledSample> {
    check_generator(config, Generator::Wishart)?;
    let p = config.p;
    let (base, frames) = cluster_frames(config, rng)?;
    let mut matrices = Vec::with_capacity(config.n());
    let mut labels = Vec::with_capacity(config.n());
    for (k, frame) in frames.iter().enumerate() {
        for _ in 0..config.n_per_cluster {
            let root: Vec<f64> = uniform_spectrum(p, config.eigenvalue_law, rng)
                .iter()
                .map(|d| d.sqrt())
                .collect();
            // U Lambda^{1/2} is a square root of the scale; Bartlett accepts any.
            let factor = frame.as_matrix() * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(root));
            matrices.push(sample_wishart(&factor, config.df, rng)?);
            labels.push(k);
        }
    }
    Ok(LabeledSample {
        config: config.clone(),
        matrices,
        labels,
        truth: Truth { base_frame: base, frames },
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    Table1,
    Table2,
}

impl FromStr for GridKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table1" => Ok(GridKind::Table1),
            "table2" => Ok(GridKind::Table2),
            other => Err(Error::InvalidConfig(format!("unknown grid {other:?}"))),
        }
    }
}

impl GridKind {
    pub fn as_str(self) -> &'static str {
        match self {
            GridKind::Table1 => "table1",
            GridKind::Table2 => "table2",
        }
    }
}

/// The benchmark scenarios: Cook noise levels 0.1..0.6 or Wishart degrees
/// of freedom 10..45, every other parameter at its default. Seeds are left
/// at zero; the benchmark derives one per replication.
pub fn scenario_grid(kind: GridKind) -> Vec<ScenarioConfig> {
    match kind {
        GridKind::Table1 => (1..=6)
            .map(|i| {
                let noise = i as f64 / 10.0;
                ScenarioConfig {
                    id: format!("cook_noise_{noise:.1}"),
                    generator: Generator::Cook,
                    noise_level: noise,
                    ..ScenarioConfig::default()
                }
            })
            .collect(),
        GridKind::Table2 => (0..8)
            .map(|i| {
                let df = 10 + 5 * i;
                ScenarioConfig {
                    id: format!("wishart_df_{df}"),
                    generator: Generator::Wishart,
                    df,
                    noise_level: 0.0,
                    ..ScenarioConfig::default()
                }
            })
            .collect(),
    }
}
