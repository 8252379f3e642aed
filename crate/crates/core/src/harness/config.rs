use crate::error::{input, Error, Result};
use crate::fbsde::SchemeConfig;
use crate::model::ModelSpec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Initial law with bounded support.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialLaw {
    Uniform { low: f64, high: f64 },
    TruncatedGaussian { mean: f64, std: f64, low: f64, high: f64 },
}

impl Default for InitialLaw {
    fn default() -> Self {
        InitialLaw::Uniform { low: -1.0, high: 1.0 }
    }
}

/// Stream reserved for initial conditions, far from the Brownian streams.
const XI_STREAM_OFFSET: u64 = 1 << 40;

impl InitialLaw {
    pub fn validate(&self) -> Result<()> {
        let (low, high) = match *self {
            InitialLaw::Uniform { low, high } => (low, high),
            InitialLaw::TruncatedGaussian { mean, std, low, high } => {
                if !(std > 0.0) || !mean.is_finite() {
                    return input("truncated gaussian needs finite mean and positive std");
                }
                (low, high)
            }
        };
        if !(low.is_finite() && high.is_finite() && low < high) {
            return input("initial law needs a bounded box low < high");
        }
        Ok(())
    }

    /// Coordinates of particle i are drawn from their own stream so the
    /// first N initial conditions agree for every population size.
    pub fn sample(&self, seed: u64, particles: usize, dim: usize) -> Result<Vec<f64>> {
        self.validate()?;
        let mut out = Vec::with_capacity(particles * dim);
        for i in 0..particles {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(XI_STREAM_OFFSET + i as u64);
            for _ in 0..dim {
                out.push(self.draw(&mut rng));
            }
        }
        Ok(out)
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            InitialLaw::Uniform { low, high } => rng.random_range(low..high),
            InitialLaw::TruncatedGaussian { mean, std, low, high } => loop {
                let v = mean + std * rng.sample::<f64, _>(StandardNormal);
                if (low..=high).contains(&v) {
                    break v;
                }
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    /// Riccati feedback for linear-quadratic models, particle FBSDE solver otherwise.
    #[default]
    Auto,
    Riccati,
    Fbsde,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// E sup_t |X^OL - X^MF|^2 per player.
    SupState,
    /// E int |alpha^OL - alpha^MF|^2 dt per player.
    IntControl,
    /// sup_t d_2^2 of the state marginal against the reference.
    W2State,
    /// int d_2^2 of the joint state-control law against the reference.
    W2Joint,
}

pub const ALL_METRICS: [Metric; 4] = [
    Metric::SupState,
    Metric::IntControl,
    Metric::W2State,
    Metric::W2Joint,
];

impl Metric {
    pub fn name(&self) -> &'static str {
        match self {
            Metric::SupState => "sup_state",
            Metric::IntControl => "int_control",
            Metric::W2State => "w2_state",
            Metric::W2Joint => "w2_joint",
        }
    }
}

fn default_seeds() -> Vec<u64> {
    (0..8).collect()
}

fn default_dt() -> f64 {
    1e-2
}

fn default_moment_order() -> f64 {
    8.0
}

fn default_trials() -> usize {
    10_000
}

fn default_joint_max_n() -> usize {
    32
}

fn default_joint_samples() -> usize {
    11
}

fn default_metrics() -> Vec<Metric> {
    ALL_METRICS.to_vec()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Model file, relative to the config file's directory.
    pub model: PathBuf,
    pub n_list: Vec<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Size M of the mean-field reference population; 4 max N when absent.
    #[serde(default)]
    pub reference_particles: Option<usize>,
    /// Population for `solve-mf`/`solve-np`; the first entry of `n_list` when absent.
    #[serde(default)]
    pub particles: Option<usize>,
    #[serde(default)]
    pub m0: InitialLaw,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<Metric>,
    /// Moment order p used for the reference rate.
    #[serde(default = "default_moment_order")]
    pub moment_order: f64,
    #[serde(default)]
    pub backend: Backend,
    #[serde(default = "default_trials")]
    pub monotonicity_trials: usize,
    #[serde(default)]
    pub monotonicity_seed: u64,
    /// Largest N for which the joint Wasserstein metric is computed.
    #[serde(default = "default_joint_max_n")]
    pub joint_max_n: usize,
    /// Number of time points in the joint Wasserstein quadrature.
    #[serde(default = "default_joint_samples")]
    pub joint_samples: usize,
    #[serde(default)]
    pub scheme: SchemeConfig,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let c: ExperimentConfig = toml::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut c = Self::from_toml_str(&std::fs::read_to_string(path)?)?;
        c.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(c)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_list.is_empty() {
            return input("n_list is empty");
        }
        if self.n_list[0] < 2 {
            return input("populations need at least two players");
        }
        if self.n_list.windows(2).any(|w| w[0] >= w[1]) {
            return input("n_list must be strictly increasing");
        }
        if self.seeds.is_empty() {
            return input("seeds is empty");
        }
        if !(self.dt > 0.0) {
            return input("dt must be positive");
        }
        let max_n = *self.n_list.last().unwrap();
        if let Some(m) = self.reference_particles {
            if m < 4 * max_n {
                return input(format!("reference_particles {m} is below 4 max N = {}", 4 * max_n));
            }
        }
        if self.metrics.is_empty() {
            return input("no metric selected");
        }
        if self.joint_samples < 2 {
            return input("joint_samples must be at least 2");
        }
        self.m0.validate()?;
        self.scheme.validate()
    }

    pub fn max_n(&self) -> usize {
        *self.n_list.last().expect("validated")
    }

    pub fn reference_size(&self) -> usize {
        self.reference_particles.unwrap_or(4 * self.max_n())
    }

    pub fn population(&self) -> usize {
        self.particles.unwrap_or(self.n_list[0])
    }

    pub fn model_path(&self) -> PathBuf {
        if self.model.is_absolute() {
            self.model.clone()
        } else {
            self.base_dir.join(&self.model)
        }
    }

    pub fn load_model(&self) -> Result<ModelSpec> {
        ModelSpec::load(&self.model_path())
    }

    /// Scheme with the experiment's time step.
    pub fn scheme(&self) -> SchemeConfig {
        SchemeConfig {
            dt: self.dt,
            ..self.scheme.clone()
        }
    }

    /// Replace the seed list by `count` consecutive seeds from `base`.
    pub fn reseed(&mut self, base: u64) {
        let n = self.seeds.len() as u64;
        self.seeds = (base..base + n).collect();
    }
}
