use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lookdown::{Init, DEFAULT_MEMORY_BUDGET};
use crate::measure::LambdaMeasure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Global,
    LocalLeft,
    LocalRight,
    RhoOrigin,
    NvCheck,
    LawCheck,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Global => "global",
            Mode::LocalLeft => "local_left",
            Mode::LocalRight => "local_right",
            Mode::RhoOrigin => "rho_origin",
            Mode::NvCheck => "nv_check",
            Mode::LawCheck => "law_check",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Dyadic range `eps = 2^-k`, `k_min <= k <= k_max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpsGrid {
    pub k_min: u32,
    pub k_max: u32,
}

impl EpsGrid {
    pub fn exponents(&self) -> impl Iterator<Item = u32> {
        self.k_min..=self.k_max
    }

    pub fn values(&self) -> Vec<f64> {
        self.exponents().map(|k| (-(k as f64)).exp2()).collect()
    }
}

/// Either `count` evenly spaced times `T j / count`, `j = 1..=count`, or an
/// explicit list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TGrid {
    Count(usize),
    List(Vec<f64>),
}

fn default_d() -> usize {
    1
}

fn default_alpha_star() -> f64 {
    0.25
}

fn default_init() -> String {
    "point:0".into()
}

fn default_budget() -> u64 {
    DEFAULT_MEMORY_BUDGET
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub measure: String,
    pub n: u32,
    #[serde(default = "default_d")]
    pub d: usize,
    pub horizon: f64,
    pub eps_grid: EpsGrid,
    pub t_grid: TGrid,
    #[serde(default)]
    pub c_values: Vec<f64>,
    pub replicas: u64,
    pub seed: u64,
    /// Required for table measures; overrides the measure's own exponent.
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default = "default_alpha_star")]
    pub alpha_star: f64,
    /// `t` for local_left, `s` for local_right.
    #[serde(default)]
    pub fixed_time: Option<f64>,
    /// Initial block count for nv_check (defaults to `n`).
    #[serde(default)]
    pub n0: Option<u64>,
    #[serde(default)]
    pub s_values: Vec<f64>,
    #[serde(default)]
    pub r_values: Vec<f64>,
    /// Measure driving the direct-coalescent side of law_check.
    #[serde(default)]
    pub compare_measure: Option<String>,
    #[serde(default = "default_init")]
    pub init: String,
    #[serde(default = "default_budget")]
    pub memory_budget: u64,
}

impl ExperimentConfig {
    /// Skeleton with the given mode and measure; grids default to one eps
    /// (`2^-4`) and one time.
    pub fn new(mode: Mode, measure: &str) -> Self {
        ExperimentConfig {
            mode,
            measure: measure.into(),
            n: 100,
            d: 1,
            horizon: 1.0,
            eps_grid: EpsGrid { k_min: 4, k_max: 4 },
            t_grid: TGrid::Count(1),
            c_values: Vec::new(),
            replicas: 1,
            seed: 0,
            beta: None,
            alpha_star: default_alpha_star(),
            fixed_time: None,
            n0: None,
            s_values: Vec::new(),
            r_values: Vec::new(),
            compare_measure: None,
            init: default_init(),
            memory_budget: DEFAULT_MEMORY_BUDGET,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("bad config JSON: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn lambda(&self) -> Result<LambdaMeasure> {
        LambdaMeasure::parse(&self.measure)
    }

    pub fn initial(&self) -> Result<Init> {
        Init::parse(&self.init, self.d)
    }

    /// Exponent used for the target constants.
    pub fn modulus_beta(&self) -> Result<f64> {
        if let Some(b) = self.beta {
            return Ok(b);
        }
        self.lambda()?.modulus_beta().ok_or_else(|| {
            Error::Config(format!(
                "measure {:?} does not determine beta; pass it explicitly",
                self.measure
            ))
        })
    }

    /// `sqrt(2 beta / (beta - 1))` in global mode, `sqrt(2 / (beta - 1))` otherwise.
    pub fn target(&self) -> Result<f64> {
        let beta = self.modulus_beta()?;
        Ok(match self.mode {
            Mode::Global => global_constant(beta),
            _ => local_constant(beta),
        })
    }

    /// The `t` values of the experiment.
    pub fn times(&self) -> Vec<f64> {
        match &self.t_grid {
            TGrid::Count(k) => (1..=*k).map(|j| self.horizon * j as f64 / *k as f64).collect(),
            TGrid::List(v) => v.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.lambda().map_err(|e| Error::Config(e.to_string()))?;
        if let Some(c) = &self.compare_measure {
            LambdaMeasure::parse(c).map_err(|e| Error::Config(e.to_string()))?;
        }
        if self.replicas < 1 {
            return bad("replicas must be at least 1".into());
        }
        if self.n < 2 {
            return bad(format!("n = {} must be at least 2", self.n));
        }
        if self.d < 1 {
            return bad("d must be at least 1".into());
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad(format!("horizon = {} must be positive", self.horizon));
        }
        if self.eps_grid.k_min > self.eps_grid.k_max || self.eps_grid.k_max > 40 {
            return bad(format!("bad eps grid {:?}", self.eps_grid));
        }
        // h is increasing only below 1/e
        if (-(self.eps_grid.k_min as f64)).exp2() > (-1.0f64).exp() {
            return bad(format!("eps = 2^-{} exceeds 1/e", self.eps_grid.k_min));
        }
        if self.horizon < (-(self.eps_grid.k_min as f64)).exp2() {
            return bad("horizon is shorter than the largest eps".into());
        }
        if let TGrid::List(v) = &self.t_grid {
            if v.iter().any(|&t| !(t > 0.0 && t <= self.horizon)) {
                return bad("t grid must lie in (0, horizon]".into());
            }
        }
        if let TGrid::Count(0) = self.t_grid {
            return bad("t grid count must be positive".into());
        }
        if !(self.alpha_star > 0.0 && self.alpha_star < 0.5) {
            return bad(format!("alpha_star = {} must lie in (0, 1/2)", self.alpha_star));
        }
        if let Some(b) = self.beta {
            if !(b > 1.0 && b <= 2.0) {
                return bad(format!("beta = {b} must lie in (1, 2]"));
            }
        }
        if matches!(self.mode, Mode::Global | Mode::LocalLeft | Mode::LocalRight | Mode::RhoOrigin) {
            self.modulus_beta()?;
            self.initial().map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }
}

pub fn global_constant(beta: f64) -> f64 {
    (2.0 * beta / (beta - 1.0)).sqrt()
}

pub fn local_constant(beta: f64) -> f64 {
    (2.0 / (beta - 1.0)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn target_constants() {
        assert_eq!(global_constant(2.0), 2.0);
        assert!((global_constant(1.5) - 6f64.sqrt()).abs() < 1e-15);
        assert_eq!(local_constant(1.5), 2.0);
        assert!((local_constant(2.0) - 2f64.sqrt()).abs() < 1e-15);
        let mut cfg = ExperimentConfig::new(Mode::Global, "mix:0.2+beta:1.5");
        assert_eq!(cfg.target().unwrap(), 2.0);
        cfg.mode = Mode::LocalRight;
        assert_eq!(cfg.target().unwrap(), ExperimentConfig::new(Mode::LocalLeft, "kingman:1").target().unwrap());
    }

    #[test]
    fn json_round_trip() {
        let mut cfg = ExperimentConfig::new(Mode::NvCheck, "beta:1.5");
        cfg.t_grid = TGrid::List(vec![0.25, 0.5]);
        cfg.s_values = vec![1e-3, 1e-2];
        cfg.c_values = vec![0.1, 2.5];
        cfg.n0 = Some(100_000);
        let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn invalid_configs_are_config_errors() {
        let mut cfg = ExperimentConfig::new(Mode::Global, "kingman:1");
        cfg.eps_grid = EpsGrid { k_min: 1, k_max: 3 };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = ExperimentConfig::new(Mode::Global, "table:/nonexistent.csv");
        assert!(cfg.validate().is_err());
        assert!(ExperimentConfig::from_json("{\"mode\": \"global\", \"bogus\": 1}").is_err());
    }

    #[test]
    fn time_grids() {
        let mut cfg = ExperimentConfig::new(Mode::Global, "kingman:1");
        cfg.t_grid = TGrid::Count(4);
        assert_eq!(cfg.times(), vec![0.25, 0.5, 0.75, 1.0]);
    }
}
