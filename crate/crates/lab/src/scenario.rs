//! Typed scenarios built from a [`Config`].

use std::path::Path;
use std::sync::Arc;

use scl_core::curve::{ConstantSignal, SharedSignal};
use scl_core::limit::SolverConfig;
use scl_core::nls::{GrenierConfig, NlsConfig};
use scl_core::synthesis::{SynthesisConfig, TargetSpec};
use scl_core::trig::TrigPolynomial;
use scl_core::{PeriodicField, PeriodicGrid};

use crate::config::{Config, ConfigError, FieldExpr};

pub const IDENTITY_CFG: &str = include_str!("../scenarios/identity.cfg");
pub const RETARGET_SMALL_CFG: &str = include_str!("../scenarios/retarget_small.cfg");

const KEYS: &[&str] = &[
    "name",
    "seed",
    "grid.n",
    "spec.T",
    "spec.eps",
    "spec.g0",
    "spec.g1",
    "spec.v0",
    "spec.v1",
    "spec.ghat0",
    "spec.ghat1",
    "spec.vhat0",
    "spec.vhat1",
    "spec.A0",
    "synth.N",
    "synth.delta",
    "synth.intervals",
    "synth.ramp_intervals",
    "synth.max_osc",
    "synth.smoothing",
    "synth.max_segments",
    "solver.cfl",
    "solver.max_dt",
    "solver.min_steps_per_gap",
    "solver.outputs",
    "solver.k",
    "nls.hbar",
    "nls.dt_max",
    "nls.min_steps_per_gap",
    "nls.outputs",
    "grenier.cfl",
    "grenier.max_dt",
    "grenier.min_steps_per_gap",
    "control.source",
    "control.eta0",
    "control.eta1",
    "sweeps.N",
    "sweeps.osc",
    "sweeps.hbar",
    "sweeps.dt",
    "sweeps.grid",
    "identities.n",
];

/// Where the physical forcing of a simulation comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum ControlSource {
    /// Run the synthesis pipeline and use its E₀ controls.
    Synthesized,
    /// Time-independent mean-zero pair (η₀, η₁).
    Constant([TrigPolynomial; 2]),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Sweeps {
    pub big_n: Vec<usize>,
    pub osc: Vec<usize>,
    pub hbar: Vec<f64>,
    pub dt: Vec<f64>,
    pub grid: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub config: Config,
    pub grid: PeriodicGrid,
    pub spec: TargetSpec,
    pub big_n: usize,
    pub synth: SynthesisConfig,
    /// Solver for replays of the physical (rate-form) forcing.
    pub replay: SolverConfig,
    pub hbar: f64,
    pub nls: NlsConfig,
    pub grenier: GrenierConfig,
    pub control: ControlSource,
    pub sweeps: Sweeps,
    pub seed: u64,
    pub identities_n: usize,
}

fn field_or(cfg: &Config, key: &str, grid: &PeriodicGrid, default: PeriodicField) -> Result<PeriodicField, ConfigError> {
    Ok(cfg.field(key, grid)?.unwrap_or(default))
}

fn positive(key: &str, v: f64) -> Result<f64, ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(ConfigError::BadValue { key: key.into(), value: v.to_string(), reason: "must be positive".into() })
    }
}

fn control_poly(cfg: &Config, key: &str) -> Result<TrigPolynomial, ConfigError> {
    match cfg.raw(key) {
        None => Ok(TrigPolynomial::zero(1)),
        Some(v) => {
            let e = FieldExpr::parse(key, v)?;
            if e.constant != 0.0 {
                return Err(ConfigError::BadValue {
                    key: key.into(),
                    value: v.into(),
                    reason: "controls must have zero mean".into(),
                });
            }
            Ok(e.modes)
        }
    }
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_config(Config::load(path)?)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Self::from_config(Config::parse(text)?)
    }

    pub fn from_config(cfg: Config) -> Result<Self, ConfigError> {
        cfg.check_keys(KEYS)?;
        let name: String = cfg.require("name")?;
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(ConfigError::BadValue {
                key: "name".into(),
                value: name,
                reason: "use letters, digits, '-' or '_'".into(),
            });
        }
        let n: usize = cfg.get_or("grid.n", 256)?;
        let grid = PeriodicGrid::new(n).map_err(|e| ConfigError::BadValue {
            key: "grid.n".into(),
            value: n.to_string(),
            reason: e.to_string(),
        })?;
        let horizon = positive("spec.T", cfg.require("spec.T")?)?;
        let eps = positive("spec.eps", cfg.require("spec.eps")?)?;
        let g0 = cfg.field("spec.g0", &grid)?.ok_or(ConfigError::Missing { key: "spec.g0".into() })?;
        let zero = PeriodicField::zeros(&grid);
        let g1 = field_or(&cfg, "spec.g1", &grid, zero.clone())?;
        let v0 = field_or(&cfg, "spec.v0", &grid, zero.clone())?;
        let v1 = field_or(&cfg, "spec.v1", &grid, zero.clone())?;
        let spec = TargetSpec {
            ghat0: field_or(&cfg, "spec.ghat0", &grid, g0.clone())?,
            ghat1: field_or(&cfg, "spec.ghat1", &grid, g1.clone())?,
            vhat0: field_or(&cfg, "spec.vhat0", &grid, v0.clone())?,
            vhat1: field_or(&cfg, "spec.vhat1", &grid, v1.clone())?,
            a0: field_or(&cfg, "spec.A0", &grid, zero)?,
            g0,
            g1,
            v0,
            v1,
            horizon,
            eps,
        };

        let d = SynthesisConfig::default();
        let synth = SynthesisConfig {
            intervals: cfg.get_or("synth.intervals", d.intervals)?,
            ramp_intervals: cfg.get_or("synth.ramp_intervals", d.ramp_intervals)?,
            delta_fraction: positive("synth.delta", cfg.get_or("synth.delta", d.delta_fraction)?)?,
            max_osc: cfg.get_or("synth.max_osc", d.max_osc)?,
            smoothing: cfg.get_or("synth.smoothing", d.smoothing)?,
            max_segments: cfg.get_or("synth.max_segments", d.max_segments)?,
            solver: d.solver,
        };
        let replay = SolverConfig {
            cfl: cfg.get_or("solver.cfl", 0.5)?,
            max_dt: cfg.get("solver.max_dt")?,
            min_steps_per_gap: cfg.get_or("solver.min_steps_per_gap", 16)?,
            outputs: cfg.get_or("solver.outputs", 20)?,
            k: cfg.get_or("solver.k", 3)?,
            ..SolverConfig::default()
        };
        let nd = NlsConfig::default();
        let nls = NlsConfig {
            dt_max: cfg.get_or("nls.dt_max", nd.dt_max)?,
            min_steps_per_gap: cfg.get_or("nls.min_steps_per_gap", nd.min_steps_per_gap)?,
            outputs: cfg.get_or("nls.outputs", nd.outputs)?,
            ..nd
        };
        let gd = GrenierConfig::default();
        let grenier = GrenierConfig {
            cfl: cfg.get_or("grenier.cfl", gd.cfl)?,
            max_dt: cfg.get("grenier.max_dt")?,
            min_steps_per_gap: cfg.get_or("grenier.min_steps_per_gap", gd.min_steps_per_gap)?,
            outputs: nls.outputs,
            ..gd
        };
        let control = match cfg.raw("control.source").unwrap_or("synthesized") {
            "synthesized" => ControlSource::Synthesized,
            "constant" => ControlSource::Constant([control_poly(&cfg, "control.eta0")?, control_poly(&cfg, "control.eta1")?]),
            other => {
                return Err(ConfigError::BadValue {
                    key: "control.source".into(),
                    value: other.into(),
                    reason: "expected `synthesized` or `constant`".into(),
                })
            }
        };
        let sweeps = Sweeps {
            big_n: cfg.list("sweeps.N")?.unwrap_or_else(|| vec![1, 2, 3]),
            osc: cfg.list("sweeps.osc")?.unwrap_or_else(|| vec![4, 8, 16, 32]),
            hbar: cfg.list("sweeps.hbar")?.unwrap_or_else(|| (3..=7).map(|p| 0.5f64.powi(p)).collect()),
            dt: cfg.list("sweeps.dt")?.unwrap_or_else(|| vec![0.04, 0.02, 0.01, 0.005]),
            grid: cfg.list("sweeps.grid")?.unwrap_or_else(|| vec![32, 64, 128, 256]),
        };
        Ok(Scenario {
            name,
            grid,
            spec,
            big_n: cfg.get_or("synth.N", 2)?,
            synth,
            replay,
            hbar: positive("nls.hbar", cfg.get_or("nls.hbar", 1.0 / 16.0)?)?,
            nls,
            grenier,
            control,
            sweeps,
            seed: cfg.get_or("seed", 0)?,
            identities_n: cfg.get_or("identities.n", 6)?,
            config: cfg,
        })
    }

    /// Copy with one key overridden and re-validated.
    pub fn with(&self, key: &str, value: impl Into<String>) -> Result<Self, ConfigError> {
        let mut c = self.config.clone();
        c.set(key, value);
        Self::from_config(c)
    }

    /// Forcing of a constant-control scenario.
    pub fn constant_signal(&self) -> Option<SharedSignal> {
        match &self.control {
            ControlSource::Constant(p) => {
                Some(Arc::new(ConstantSignal([p[0].to_field(&self.grid), p[1].to_field(&self.grid)])))
            }
            ControlSource::Synthesized => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_scenarios_parse() {
        for text in [IDENTITY_CFG, RETARGET_SMALL_CFG] {
            let s = Scenario::parse(text).unwrap();
            s.spec.validate().unwrap();
        }
    }
}
