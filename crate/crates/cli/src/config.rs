use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use smallloss::calibrate::SHIPPED_THRESHOLD;
use smallloss::engine::DEFAULT_ADDITIVE_SLACK;
use smallloss::lewis_l1::DEFAULT_C_LEWIS;
use smallloss::sparsify::DEFAULT_C_M;
use smallloss::PhiSpec;

use crate::CliError;

/// One file, one section per module. Every section has defaults except the
/// ones naming what to run.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub seed: Option<u64>,
    pub experiment: Option<String>,
    #[serde(default)]
    pub conjugate: ConjugateSection,
    #[serde(default)]
    pub controller: ControllerSection,
    #[serde(default)]
    pub engine: EngineSection,
    #[serde(default)]
    pub sparsify: SparsifySection,
    #[serde(default)]
    pub lewis_l1: LewisSection,
    pub instance: Option<InstanceSection>,
    pub sensitivity: Option<SensitivitySection>,
    pub lowerbound: Option<LowerboundSection>,
    #[serde(default)]
    pub calibrate: CalibrateSection,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConjugateSection {
    pub phi: PhiSpec,
    pub u_min: f64,
    pub u_max: f64,
    pub points: usize,
}

impl Default for ConjugateSection {
    fn default() -> Self {
        Self {
            phi: PhiSpec::PowerLog { c1: 1.0, q: 1.0, c2: 0.0 },
            u_min: 0.01,
            u_max: 100.0,
            points: 41,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerSection {
    /// Defaults to `min(1, H_T^{-1/q})` for power-log φ, else `1e-6`.
    pub a0: Option<f64>,
    /// Extra cap on top of the oracle's own.
    pub eps_cap: Option<f64>,
    pub adaptive: bool,
    pub fixed_grid: Vec<f64>,
}

impl Default for ControllerSection {
    fn default() -> Self {
        Self {
            a0: None,
            eps_cap: None,
            adaptive: true,
            fixed_grid: Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    /// Sparsify-then-minimize (submodular instances).
    Sparsifier,
    /// Exact prefix minimizer (submodular instances).
    Exact,
    /// Lewis-weight sampling (ℓ1 instances).
    Lewis,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineSection {
    pub seeds: usize,
    pub additive_slack: f64,
    /// Defaults to the sparsifier for submodular instances and Lewis sampling
    /// for ℓ1 instances.
    pub oracle: Option<OracleKind>,
}

impl Default for EngineSection {
    fn default() -> Self {
        Self {
            seeds: 1,
            additive_slack: DEFAULT_ADDITIVE_SLACK,
            oracle: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiSource {
    /// `16·c_M·(n²+1)·(n + ln T)·ε^{-3}` from the sensitivity cap.
    Analytic,
    /// Upper envelope of coupled sensitivity measurements.
    Measured,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SparsifySection {
    pub c_m: f64,
    pub phi_source: PhiSource,
    pub phi_trials: usize,
    /// Explicit φ; overrides `phi_source`.
    pub phi: Option<PhiSpec>,
}

impl Default for SparsifySection {
    fn default() -> Self {
        Self {
            c_m: DEFAULT_C_M,
            phi_source: PhiSource::Analytic,
            phi_trials: 100,
            phi: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LewisSection {
    pub c_m: f64,
}

impl Default for LewisSection {
    fn default() -> Self {
        Self { c_m: DEFAULT_C_LEWIS }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InstanceSection {
    Planted { n: usize, horizon: usize, opt: usize },
    RandomSubmodular { n: usize, horizon: usize },
    Zero { n: usize, horizon: usize },
    Rademacher { n: usize, horizon: usize },
    /// Every edge of a hypergraph file becomes one loss.
    HypergraphFile { path: PathBuf },
    L1 {
        horizon: usize,
        d: usize,
        #[serde(default = "unit")]
        radius: f64,
        #[serde(default)]
        outlier_frac: f64,
    },
}

fn unit() -> f64 {
    1.0
}

fn default_delta() -> f64 {
    0.05
}

fn default_half() -> f64 {
    0.5
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeFamily {
    DirectedCut,
    Mixed,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SensitivitySection {
    Submodular {
        n: Option<usize>,
        edges: Option<usize>,
        family: Option<EdgeFamily>,
        path: Option<PathBuf>,
        eps: f64,
        #[serde(default = "default_delta")]
        delta: f64,
    },
    L1 {
        rows: usize,
        d: usize,
        #[serde(default = "default_half")]
        eps: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeLearner {
    Conversion,
    Zero,
    One,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LowerboundSection {
    Rademacher {
        n: usize,
        horizon: usize,
        draws: usize,
        #[serde(default = "floor_ratio")]
        floor: f64,
    },
    MistakeTree { horizon: usize, learner: TreeLearner },
}

fn floor_ratio() -> f64 {
    0.2
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
pub enum CalibrationTarget {
    #[serde(rename = "c_M")]
    #[value(name = "c_M")]
    CM,
    #[serde(rename = "c_m")]
    #[value(name = "c_m")]
    Cm,
    #[serde(rename = "phi")]
    #[value(name = "phi")]
    Phi,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrateSection {
    pub target: Option<CalibrationTarget>,
    pub threshold: f64,
    /// Overrides the reference family's trial count.
    pub trials: Option<usize>,
    /// Ground set and horizon for the measured φ.
    pub n: usize,
    pub horizon: usize,
}

impl Default for CalibrateSection {
    fn default() -> Self {
        Self {
            target: None,
            threshold: SHIPPED_THRESHOLD,
            trials: None,
            n: 5,
            horizon: 1024,
        }
    }
}

impl Config {
    /// Reads TOML or JSON by extension (`.json` is JSON, anything else TOML).
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        if is_json {
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
        } else {
            toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
        }
    }

    pub fn root_seed(&self) -> Result<u64, CliError> {
        self.seed
            .ok_or_else(|| CliError::Usage("a root seed is required (config `seed` or --seed)".into()))
    }

    /// sha256 of the compact JSON of the effective configuration.
    pub fn digest(&self) -> Result<String, CliError> {
        let bytes = serde_json::to_vec(self).map_err(|e| CliError::Usage(format!("config not serializable: {e}")))?;
        Ok(smallloss::engine::config_digest(&bytes))
    }
}
