//! JSON configuration for `fit` and `benchmark`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use vdmfpca::baseline::StandardMfpcaConfig;
use vdmfpca::mfpca::MfpcaConfig;
use vdmfpca::pspline::PenaltySpec;
use vdmfpca::simgen::DomainDistribution;
use vdmfpca::ufpca::{SmootherConfig, UfpcaConfig};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub degree: usize,
    pub mean_basis: [usize; 2],
    pub cov_basis: [usize; 3],
    pub score_basis: usize,
    pub penalty_order: usize,
    pub lambda_grid: Vec<f64>,
    pub pve_univariate: f64,
    pub k_max: usize,
    pub k_fixed: Option<usize>,
    pub pve_multivariate: f64,
    pub m_max: Option<usize>,
    pub m_fixed: Option<usize>,
    pub include_diagonal: bool,
    pub grid_step: f64,
    /// Subjects with fewer observations in any variable are dropped; 0 disables.
    pub min_obs: usize,
    /// Per-variable `[lo, hi]`; rows outside are dropped before fitting.
    pub plausible_ranges: BTreeMap<String, [f64; 2]>,
    /// Number of equally spaced domain lengths for the exported curves.
    pub export_domains: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        let s = SmootherConfig::default();
        let u = UfpcaConfig::default();
        let m = MfpcaConfig::default();
        Self {
            degree: s.degree,
            mean_basis: s.mean_basis,
            cov_basis: s.cov_basis,
            score_basis: m.score_basis,
            penalty_order: s.penalty.order,
            lambda_grid: s.penalty.lambda_grid,
            pve_univariate: u.pve,
            k_max: u.k_max,
            k_fixed: None,
            pve_multivariate: m.pve,
            m_max: None,
            m_fixed: None,
            include_diagonal: false,
            grid_step: u.grid_step,
            min_obs: 0,
            plausible_ranges: BTreeMap::new(),
            export_domains: 20,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> CliResult<()> {
        self.penalty().validate()?;
        let unit = |name: &str, v: f64| {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(CliError::Config(format!(
                    "{name} must lie in (0, 1], got {v}"
                )))
            }
        };
        unit("pve_univariate", self.pve_univariate)?;
        unit("pve_multivariate", self.pve_multivariate)?;
        if !(self.grid_step > 0.0) {
            return Err(CliError::Config(format!(
                "grid_step must be positive, got {}",
                self.grid_step
            )));
        }
        if self.k_max == 0 || self.k_fixed == Some(0) {
            return Err(CliError::Config(
                "component counts must be at least 1".into(),
            ));
        }
        for (v, [lo, hi]) in &self.plausible_ranges {
            if !(lo < hi) {
                return Err(CliError::Config(format!(
                    "plausible range for {v} is empty"
                )));
            }
        }
        Ok(())
    }

    pub fn penalty(&self) -> PenaltySpec {
        PenaltySpec {
            order: self.penalty_order,
            lambda_grid: self.lambda_grid.clone(),
        }
    }

    pub fn mfpca(&self) -> MfpcaConfig {
        MfpcaConfig {
            univariate: UfpcaConfig {
                smoother: SmootherConfig {
                    degree: self.degree,
                    mean_basis: self.mean_basis,
                    cov_basis: self.cov_basis,
                    penalty: self.penalty(),
                },
                grid_step: self.grid_step,
                pve: self.pve_univariate,
                k_max: self.k_max,
                k_fixed: self.k_fixed,
                include_diagonal: self.include_diagonal,
            },
            score_basis: self.score_basis,
            pve: self.pve_multivariate,
            m_max: self.m_max,
            m_fixed: self.m_fixed,
        }
    }

    pub fn standard(&self) -> StandardMfpcaConfig {
        StandardMfpcaConfig {
            grid_step: self.grid_step,
            pve_univariate: self.pve_univariate,
            k_max: self.k_max,
            pve_multivariate: self.pve_multivariate,
        }
    }

    /// Read a config file. A manifest written by `fit` is accepted too: its
    /// `config` entry is used.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let inner = match value.get("config") {
            Some(c) if value.get("command").is_some() => c.clone(),
            _ => value,
        };
        let cfg: Self = serde_json::from_value(inner)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One simulation setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub n: usize,
    pub domain_dist: DomainDistribution,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSet {
    pub scenarios: Vec<Scenario>,
    pub n_bins: Vec<usize>,
    /// Eigenfunctions scored per variable.
    pub n_pc: usize,
    pub fit: FitConfig,
}

impl Default for ScenarioSet {
    fn default() -> Self {
        let scenarios = [100, 500]
            .into_iter()
            .flat_map(|n| {
                [
                    DomainDistribution::Uniform,
                    DomainDistribution::BoundedGeometric,
                ]
                .into_iter()
                .flat_map(move |d| {
                    [0.01, 0.1, 1.0].into_iter().map(move |sigma| Scenario {
                        n,
                        domain_dist: d,
                        sigma,
                    })
                })
            })
            .collect();
        Self {
            scenarios,
            n_bins: vec![5, 10],
            n_pc: 2,
            fit: FitConfig::default(),
        }
    }
}

impl ScenarioSet {
    pub fn validate(&self) -> CliResult<()> {
        if self.scenarios.is_empty() {
            return Err(CliError::Config("no scenarios".into()));
        }
        for s in &self.scenarios {
            if s.n < 2 || !(s.sigma >= 0.0) {
                return Err(CliError::Config(format!("invalid scenario {s:?}")));
            }
        }
        if self.n_bins.iter().any(|&b| b < 2) {
            return Err(CliError::Config("bin counts must be at least 2".into()));
        }
        if self.n_pc == 0 {
            return Err(CliError::Config("n_pc must be at least 1".into()));
        }
        self.fit.validate()
    }

    /// Read a scenario file: either a full object or a bare list of scenarios.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let set: Self = if value.is_array() {
            let scenarios = serde_json::from_value(value)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            Self {
                scenarios,
                ..Self::default()
            }
        } else {
            serde_json::from_value(value)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        };
        set.validate()?;
        Ok(set)
    }
}
