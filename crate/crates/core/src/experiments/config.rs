use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::{
    cell_apoptosis, lotka_volterra, viscous_burgers, ApoptosisParams, ApoptosisTarget, DifferentialSystem,
    HiddenInput, HiddenMode, LvParams,
};
use crate::error::{Error, Result};
use crate::sampling::{BurgersSettings, TimeSchedule};
use crate::trainer::TrainConfig;
use crate::ude::UdeConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Pinn,
    Ude,
    Both,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemConfig {
    LotkaVolterra {
        #[serde(default)]
        params: LvParams,
        #[serde(default)]
        hidden_mode: HiddenMode,
        #[serde(default)]
        hidden_inputs: Option<Vec<HiddenInput>>,
    },
    Apoptosis {
        #[serde(default)]
        params: ApoptosisParams,
        target: ApoptosisTarget,
        #[serde(default)]
        hidden_inputs: Option<Vec<HiddenInput>>,
    },
    Burgers {
        nu: f64,
        #[serde(default)]
        reference: BurgersSettings,
        #[serde(default)]
        hidden_inputs: Option<Vec<HiddenInput>>,
    },
}

impl SystemConfig {
    pub fn build(&self) -> Result<DifferentialSystem> {
        let (sys, inputs) = match self {
            SystemConfig::LotkaVolterra {
                params,
                hidden_mode,
                hidden_inputs,
            } => (lotka_volterra(*params, *hidden_mode)?, hidden_inputs),
            SystemConfig::Apoptosis {
                params,
                target,
                hidden_inputs,
            } => (cell_apoptosis(*params, *target)?, hidden_inputs),
            SystemConfig::Burgers { nu, hidden_inputs, .. } => (viscous_burgers(*nu)?, hidden_inputs),
        };
        match inputs {
            Some(h) => sys.with_hidden_inputs(h.clone()),
            None => Ok(sys),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub schedule: TimeSchedule,
    /// Relative noise level `eps`.
    #[serde(default)]
    pub noise: f64,
    /// Spatial measurement points per time (PDEs only).
    #[serde(default = "default_spatial_points")]
    pub spatial_points: usize,
    /// Maximum RK4 step of the ODE reference.
    #[serde(default = "default_reference_step")]
    pub reference_step: f64,
}

fn default_spatial_points() -> usize {
    256
}

fn default_reference_step() -> f64 {
    1e-3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollocationConfig {
    pub n_interior: usize,
    #[serde(default)]
    pub n_boundary: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SymregProtocol {
    /// Fit on the network evaluated at the measured states.
    #[default]
    TrainingData,
    /// Fit on the network evaluated along the model's own solution (the
    /// surrogate for the physics-informed method, the integrated UDE).
    Trajectory,
    Both,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SymregSettings {
    pub thresholds: Vec<f64>,
    pub max_degree: u32,
    pub ridge: f64,
    pub protocol: SymregProtocol,
    pub trajectory_points: usize,
    /// The reported model is the simplest first-front model whose MSE is
    /// below this fraction of the mean squared target.
    pub selection_tolerance: f64,
    /// Expected terms, used only to set the `recovered` flag.
    pub target: Option<Vec<String>>,
}

impl Default for SymregSettings {
    fn default() -> Self {
        SymregSettings {
            thresholds: vec![0.01, 0.05, 0.1, 0.2, 0.4],
            max_degree: 3,
            ridge: 1e-6,
            protocol: SymregProtocol::TrainingData,
            trajectory_points: 300,
            selection_tolerance: 1e-2,
            target: None,
        }
    }
}

/// One experiment: system, data, collocation, training and distillation
/// settings plus the seeds to run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub method: Method,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub system: SystemConfig,
    pub data: DataConfig,
    pub collocation: CollocationConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub ude: Option<UdeConfig>,
    #[serde(default)]
    pub symreg: SymregSettings,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn from_value(value: toml::Value) -> Result<Self> {
        Ok(value.try_into()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn system(&self) -> Result<DifferentialSystem> {
        self.system.build()
    }

    /// Checks everything that can be checked without computing.
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::config("experiment name is empty"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seed list is empty"));
        }
        let system = self.system()?;
        if let SystemConfig::Burgers { reference, .. } = &self.system {
            if reference.intervals < 4 || reference.output_times < 2 {
                return Err(Error::config("Burgers reference needs at least 4 intervals and 2 output times"));
            }
        }
        self.data.schedule.times(system.domain.horizon)?;
        if !(self.data.noise >= 0.0 && self.data.noise.is_finite()) {
            return Err(Error::config(format!("noise level {} must be nonnegative", self.data.noise)));
        }
        if !(self.data.reference_step > 0.0) {
            return Err(Error::config("reference step must be positive"));
        }
        if !system.is_ode() && self.data.spatial_points < 2 {
            return Err(Error::config("PDE data needs at least two spatial points"));
        }
        if self.collocation.n_interior == 0 {
            return Err(Error::config("n_interior must be positive"));
        }
        if !system.is_ode() && self.collocation.n_boundary == 0 {
            return Err(Error::config("PDE runs need boundary collocation points"));
        }
        self.train.validate()?;
        self.train.apply_to(&system)?;
        if let Some(u) = &self.ude {
            u.validate()?;
        }
        if matches!(self.method, Method::Ude | Method::Both) {
            if self.ude.is_none() {
                return Err(Error::config("method needs a [ude] section"));
            }
            if !system.is_ode() {
                return Err(Error::config("the UDE baseline supports ODE systems only"));
            }
        }
        let s = &self.symreg;
        if s.thresholds.is_empty() || s.thresholds.iter().any(|t| !(*t >= 0.0)) {
            return Err(Error::config("symreg thresholds must be a nonempty list of nonnegative numbers"));
        }
        if s.max_degree == 0 || !(s.ridge >= 0.0) || s.trajectory_points < 2 {
            return Err(Error::config("symreg needs max_degree >= 1, ridge >= 0, trajectory_points >= 2"));
        }
        Ok(())
    }
}

/// Independent stream seed for a purpose tag (splitmix64 finalizer).
pub fn derive_seed(seed: u64, purpose: u64) -> u64 {
    let mut z = seed ^ purpose.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
