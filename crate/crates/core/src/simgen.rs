//! Synthetic bivariate variable-domain data with full ground truth.
//!
//! Domain lengths are integers in `[10, 100]`, observations sit on the integer
//! grid `1..=T_i`. Variable 1 uses sine/cosine eigenfunctions rescaled to each
//! subject's domain, variable 2 a domain-length-weighted blend of sines and
//! cosines with weight `Φ(T_i; 30, 10)`. Scores are independent Gaussians with
//! variances `0.5^(k-1)`.

use std::f64::consts::PI;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dataset::{FunctionalDataset, Series, SubjectRecord};
use crate::error::{config, Result};

pub const DOMAIN_MIN: usize = 10;
pub const DOMAIN_MAX: usize = 100;
pub const GEOMETRIC_P: f64 = 0.06;
pub const DEFAULT_COMPONENTS: usize = 10;
pub const VARIABLE_NAMES: [&str; 2] = ["X1", "X2"];

/// Distribution of subject domain lengths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DomainDistribution {
    /// Integer uniform on `{10, …, 100}`.
    #[serde(rename = "uniform")]
    Uniform,
    /// `10 + min(G, 90)`, `G` the number of failures before the first success
    /// with success probability 0.06.
    #[serde(rename = "nbinom")]
    BoundedGeometric,
}

impl DomainDistribution {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Uniform => "uniform",
            Self::BoundedGeometric => "nbinom",
        }
    }
}

impl std::str::FromStr for DomainDistribution {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" | "D1" => Ok(Self::Uniform),
            "nbinom" | "geometric" | "D2" => Ok(Self::BoundedGeometric),
            other => Err(config(format!("unknown domain distribution {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub domain_dist: DomainDistribution,
    pub sigma: f64,
    pub n_components: usize,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(n: usize, domain_dist: DomainDistribution, sigma: f64, seed: u64) -> Self {
        Self {
            n,
            domain_dist,
            sigma,
            n_components: DEFAULT_COMPONENTS,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(config("simulation needs at least 2 subjects"));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(config(format!(
                "noise sd must be non-negative, got {}",
                self.sigma
            )));
        }
        if self.n_components == 0 {
            return Err(config("at least one component is required"));
        }
        Ok(())
    }
}

/// Ground truth for one simulated subject. Curves are indexed `[variable][t - 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectTruth {
    pub subject_id: String,
    pub domain_length: usize,
    pub grid: Vec<f64>,
    /// `[variable][component]`
    pub scores: Vec<Vec<f64>>,
    /// `[variable][component][t - 1]`
    pub eigenfunctions: Vec<Vec<Vec<f64>>>,
    pub noiseless: Vec<Vec<f64>>,
    pub noisy: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTruth {
    pub config: SimConfig,
    pub eigenvalues: Vec<f64>,
    pub subjects: Vec<SubjectTruth>,
}

/// `λ_k = 0.5^(k-1)`.
pub fn eigenvalues(n: usize) -> Vec<f64> {
    (0..n).map(|k| 0.5f64.powi(k as i32)).collect()
}

/// Mean of variable 1: `0.0001 (t − 120)² + 3 sin(π t / 60)`.
pub fn mean_x1(t: f64) -> f64 {
    1e-4 * (t - 120.0).powi(2) + 3.0 * (PI * t / 60.0).sin()
}

/// Mean of variable 2: `0.0001 (t − 20)² + 3 sin(π t / 60)`.
pub fn mean_x2(t: f64) -> f64 {
    1e-4 * (t - 20.0).powi(2) + 3.0 * (PI * t / 60.0).sin()
}

/// Gaussian CDF `Φ(x; mean, sd)`.
pub fn normal_cdf(x: f64, mean: f64, sd: f64) -> f64 {
    Normal::new(mean, sd).expect("positive sd").cdf(x)
}

/// Blend weight of the second variable's eigenfunctions, `Φ(T; 30, 10)`.
pub fn type2_weight(domain_length: f64) -> f64 {
    normal_cdf(domain_length, 30.0, 10.0)
}

fn scaled_sin(j: usize, t: f64, big_t: f64) -> f64 {
    (2.0 * j as f64 * PI * t / big_t).sin() * (2.0 / big_t).sqrt()
}

fn scaled_cos(j: usize, t: f64, big_t: f64) -> f64 {
    (2.0 * j as f64 * PI * t / big_t).cos() * (2.0 / big_t).sqrt()
}

/// Sine/cosine eigenfunctions on `1..=T`: components `2j-1` and `2j` are
/// `sin(2jπt/T)√(2/T)` and `cos(2jπt/T)√(2/T)`.
pub fn eigenfunctions_type1_n(domain_length: usize, n: usize) -> Vec<Vec<f64>> {
    let big_t = domain_length as f64;
    (0..n)
        .map(|k| {
            let j = k / 2 + 1;
            (1..=domain_length)
                .map(|t| {
                    if k % 2 == 0 {
                        scaled_sin(j, t as f64, big_t)
                    } else {
                        scaled_cos(j, t as f64, big_t)
                    }
                })
                .collect()
        })
        .collect()
}

pub fn eigenfunctions_type1(domain_length: usize) -> Vec<Vec<f64>> {
    eigenfunctions_type1_n(domain_length, DEFAULT_COMPONENTS)
}

/// Weighted eigenfunctions on `1..=T`: `W sin(2jπt/T)√(2/T) + (1−W) cos(2jπt/T)√(2/T)`.
pub fn eigenfunctions_type2_n(domain_length: usize, n: usize) -> Vec<Vec<f64>> {
    let big_t = domain_length as f64;
    let w = type2_weight(big_t);
    (1..=n)
        .map(|j| {
            (1..=domain_length)
                .map(|t| {
                    let t = t as f64;
                    w * scaled_sin(j, t, big_t) + (1.0 - w) * scaled_cos(j, t, big_t)
                })
                .collect()
        })
        .collect()
}

pub fn eigenfunctions_type2(domain_length: usize) -> Vec<Vec<f64>> {
    eigenfunctions_type2_n(domain_length, DEFAULT_COMPONENTS)
}

/// Integer domain lengths drawn from `dist`.
pub fn sample_domains<R: Rng + ?Sized>(
    dist: DomainDistribution,
    n: usize,
    rng: &mut R,
) -> Vec<usize> {
    match dist {
        DomainDistribution::Uniform => (0..n)
            .map(|_| rng.random_range(DOMAIN_MIN..=DOMAIN_MAX))
            .collect(),
        DomainDistribution::BoundedGeometric => {
            let geo = Geometric::new(GEOMETRIC_P).expect("valid probability");
            let cap = (DOMAIN_MAX - DOMAIN_MIN) as u64;
            (0..n)
                .map(|_| DOMAIN_MIN + geo.sample(rng).min(cap) as usize)
                .collect()
        }
    }
}

/// Seed for stream `stream` derived from `base`: the first output of a ChaCha8
/// generator keyed by `base` on stream `stream`.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(stream);
    rng.next_u64()
}

/// Generate a bivariate dataset together with its ground truth.
pub fn generate(cfg: &SimConfig) -> Result<(FunctionalDataset, SimTruth)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let lambdas = eigenvalues(cfg.n_components);
    let domains = sample_domains(cfg.domain_dist, cfg.n, &mut rng);

    let mut records = Vec::with_capacity(cfg.n);
    let mut truths = Vec::with_capacity(cfg.n);
    for (i, &big_t) in domains.iter().enumerate() {
        let subject_id = format!("S{:04}", i + 1);
        let grid: Vec<f64> = (1..=big_t).map(|t| t as f64).collect();
        let eigenfunctions = vec![
            eigenfunctions_type1_n(big_t, cfg.n_components),
            eigenfunctions_type2_n(big_t, cfg.n_components),
        ];
        let means: [fn(f64) -> f64; 2] = [mean_x1, mean_x2];

        let scores: Vec<Vec<f64>> = (0..2)
            .map(|_| {
                lambdas
                    .iter()
                    .map(|l| {
                        let z: f64 = rng.sample(StandardNormal);
                        z * l.sqrt()
                    })
                    .collect()
            })
            .collect();

        let mut noiseless = Vec::with_capacity(2);
        let mut noisy = Vec::with_capacity(2);
        for v in 0..2 {
            let clean: Vec<f64> = grid
                .iter()
                .enumerate()
                .map(|(ti, &t)| {
                    let random: f64 = scores[v]
                        .iter()
                        .zip(&eigenfunctions[v])
                        .map(|(xi, phi)| xi * phi[ti])
                        .sum();
                    means[v](t) + random
                })
                .collect();
            let observed: Vec<f64> = clean
                .iter()
                .map(|x| {
                    let z: f64 = rng.sample(StandardNormal);
                    x + cfg.sigma * z
                })
                .collect();
            noiseless.push(clean);
            noisy.push(observed);
        }

        records.push(SubjectRecord {
            subject_id: subject_id.clone(),
            domain_length: big_t as f64,
            series: noisy
                .iter()
                .map(|v| Series::new(grid.clone(), v.clone()))
                .collect(),
        });
        truths.push(SubjectTruth {
            subject_id,
            domain_length: big_t,
            grid,
            scores,
            eigenfunctions,
            noiseless,
            noisy,
        });
    }
    let dataset = FunctionalDataset::new(
        VARIABLE_NAMES.iter().map(|s| s.to_string()).collect(),
        records,
    )?;
    Ok((
        dataset,
        SimTruth {
            config: cfg.clone(),
            eigenvalues: lambdas,
            subjects: truths,
        },
    ))
}
