//! Experiment configuration: a versioned TOML schema.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use pulsefront_core::{EigenOptions, ModelConfig, ModelSpec, PeriodicGrid};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Eigen,
    Dispersion,
    Speed,
    Wave,
    Simulate,
    VerifyAll,
    Barrier,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Eigen => "eigen",
            Task::Dispersion => "dispersion",
            Task::Speed => "speed",
            Task::Wave => "wave",
            Task::Simulate => "simulate",
            Task::VerifyAll => "verify-all",
            Task::Barrier => "barrier",
        }
    }

    /// Table holding the task's own settings, if it has one.
    fn block(self) -> Option<&'static str> {
        match self {
            Task::VerifyAll => None,
            t => Some(t.name()),
        }
    }
}

/// Wave or barrier speed: a number or the minimal speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpeedChoice {
    Value(f64),
    Named(Named),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Named {
    Critical,
}

impl SpeedChoice {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        if s == "critical" {
            return Ok(SpeedChoice::Named(Named::Critical));
        }
        s.parse()
            .map(SpeedChoice::Value)
            .map_err(|_| CliError::config("speed", format!("expected a number or `critical`, got `{s}`")))
    }

    pub fn resolve(self, c_star: f64) -> f64 {
        match self {
            SpeedChoice::Value(c) => c,
            SpeedChoice::Named(Named::Critical) => c_star,
        }
    }

    pub fn is_critical(self) -> bool {
        matches!(self, SpeedChoice::Named(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Numerics {
    /// Unit-cell nodes per axis for eigenproblems.
    pub points: usize,
    pub eigen_tol: f64,
    pub eigen_max_iter: usize,
}

impl Default for Numerics {
    fn default() -> Self {
        let o = EigenOptions::default();
        Self {
            points: 16,
            eigen_tol: o.tol,
            eigen_max_iter: o.max_iter,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EigenBlock {
    pub direction: Option<Vec<f64>>,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DispersionBlock {
    pub direction: Option<Vec<f64>>,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub samples: usize,
}

impl Default for DispersionBlock {
    fn default() -> Self {
        Self {
            direction: None,
            lambda_min: 0.0,
            lambda_max: 3.0,
            samples: 31,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpeedBlock {
    pub direction: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaveBlock {
    /// Integer direction `p`; defaults to the first lattice vector.
    pub direction: Option<Vec<f64>>,
    pub speed: SpeedChoice,
    pub a: Option<f64>,
    pub r_max: Option<f64>,
    pub tol: f64,
    /// Defaults to 400, or 2000 at the minimal speed.
    pub max_iter: Option<usize>,
}

impl Default for WaveBlock {
    fn default() -> Self {
        Self {
            direction: None,
            speed: SpeedChoice::Named(Named::Critical),
            a: None,
            r_max: None,
            tol: 1e-7,
            max_iter: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialDatum {
    /// Compactly supported bump in one component.
    Bump,
    /// `eta_hat` in every component.
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateBlock {
    /// Box corners; ignored when `cells` is set.
    pub lo: Option<Vec<f64>>,
    pub hi: Option<Vec<f64>>,
    pub h: f64,
    /// Periodic torus of this many unit cells per axis.
    pub cells: Option<Vec<usize>>,
    pub per_cell: usize,
    pub horizon: f64,
    pub dt: f64,
    pub initial: InitialDatum,
    pub height: f64,
    pub radius: f64,
    pub component: usize,
    /// Steps between trajectory snapshots.
    pub snapshot_every: usize,
    pub theta: f64,
    pub sample_every: f64,
    pub floor_radius: f64,
    pub extinction_threshold: f64,
}

impl Default for SimulateBlock {
    fn default() -> Self {
        Self {
            lo: None,
            hi: None,
            h: 0.1,
            cells: None,
            per_cell: 16,
            horizon: 30.0,
            dt: 0.01,
            initial: InitialDatum::Bump,
            height: 1.0,
            radius: 2.0,
            component: 0,
            snapshot_every: 500,
            theta: 0.1,
            sample_every: 0.5,
            floor_radius: 5.0,
            extinction_threshold: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyBlock {
    /// Wave speeds as multiples of `c*`.
    pub factors: Vec<f64>,
    pub critical_max_iter: usize,
    pub max_iter: usize,
    pub below_factor: f64,
    /// Hair-trigger box half-width, spacing, horizon and time step.
    pub half_width: f64,
    pub h: f64,
    pub horizon: f64,
    pub dt: f64,
    pub bump_height: f64,
    pub floor_radius: f64,
}

impl Default for VerifyBlock {
    fn default() -> Self {
        Self {
            factors: vec![1.0, 1.2, 2.0],
            critical_max_iter: 2000,
            max_iter: 1000,
            below_factor: 0.9,
            half_width: 40.0,
            h: 0.1,
            horizon: 30.0,
            dt: 0.01,
            bump_height: 1e-3,
            floor_radius: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BarrierChoice {
    SuperH,
    SubOmega,
    SubOmegaStar,
    SuperHStar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BarrierBlock {
    pub kind: BarrierChoice,
    pub direction: Option<Vec<f64>>,
    /// Ignored by the critical kinds.
    pub speed: SpeedChoice,
}

impl Default for BarrierBlock {
    fn default() -> Self {
        Self {
            kind: BarrierChoice::SuperH,
            direction: None,
            speed: SpeedChoice::Value(2.5),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub schema: u32,
    pub task: Task,
    pub model: ModelConfig,
    pub numerics: Numerics,
    pub eigen: EigenBlock,
    pub dispersion: DispersionBlock,
    pub speed: SpeedBlock,
    pub wave: WaveBlock,
    pub simulate: SimulateBlock,
    pub verify: VerifyBlock,
    pub barrier: BarrierBlock,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
}

fn block<T: DeserializeOwned + Default>(table: &toml::Table, key: &str) -> Result<T, CliError> {
    match table.get(key) {
        None => Ok(T::default()),
        Some(v) => T::deserialize(v.clone()).map_err(|e| CliError::config(key, e.message().to_string())),
    }
}

const KEYS: [&str; 12] = [
    "schema",
    "task",
    "model",
    "numerics",
    "eigen",
    "dispersion",
    "speed",
    "wave",
    "simulate",
    "verify",
    "barrier",
    "output",
];

impl ExperimentConfig {
    pub fn new(task: Task, model: ModelConfig) -> Self {
        Self {
            schema: SCHEMA_VERSION,
            task,
            model,
            numerics: Numerics::default(),
            eigen: EigenBlock::default(),
            dispersion: DispersionBlock::default(),
            speed: SpeedBlock::default(),
            wave: WaveBlock::default(),
            simulate: SimulateBlock::default(),
            verify: VerifyBlock::default(),
            barrier: BarrierBlock::default(),
            output: None,
        }
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::config("", e.message()))?;
        if let Some(k) = table.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(CliError::config(k, "unknown key"));
        }
        let schema = table
            .get("schema")
            .and_then(|v| v.as_integer())
            .ok_or_else(|| CliError::config("schema", "missing schema version"))?;
        if schema != SCHEMA_VERSION as i64 {
            return Err(CliError::config("schema", format!("unsupported version {schema}")));
        }
        let task: Task = table
            .get("task")
            .ok_or_else(|| CliError::config("task", "missing task"))?
            .clone()
            .try_into()
            .map_err(|e: toml::de::Error| CliError::config("task", e.message()))?;
        if let Some(b) = task.block() {
            if !table.contains_key(b) {
                return Err(CliError::config(b, format!("task `{}` needs a [{b}] table", task.name())));
            }
        }
        let model = table.get("model").ok_or_else(|| CliError::config("model", "missing model table"))?;
        let model = ModelConfig::from_toml(model, "model")?;
        let output = match table.get("output") {
            None => None,
            Some(v) => Some(
                v.as_str()
                    .ok_or_else(|| CliError::config("output", "expected a string"))?
                    .to_string(),
            ),
        };
        let cfg = Self {
            schema: SCHEMA_VERSION,
            task,
            model,
            numerics: block(&table, "numerics")?,
            eigen: block(&table, "eigen")?,
            dispersion: block(&table, "dispersion")?,
            speed: block(&table, "speed")?,
            wave: block(&table, "wave")?,
            simulate: block(&table, "simulate")?,
            verify: block(&table, "verify")?,
            barrier: block(&table, "barrier")?,
            output,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical TOML rendering; the manifest hash is taken over this text.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let n = &self.numerics;
        positive("numerics.eigen_tol", n.eigen_tol)?;
        if n.points < 4 {
            return Err(CliError::config("numerics.points", "need at least 4 points per axis"));
        }
        let d = &self.dispersion;
        if d.samples < 2 || !(d.lambda_max > d.lambda_min) {
            return Err(CliError::config("dispersion", "need samples >= 2 and lambda_max > lambda_min"));
        }
        positive("wave.tol", self.wave.tol)?;
        if let SpeedChoice::Value(c) = self.wave.speed {
            positive("wave.speed", c)?;
        }
        let s = &self.simulate;
        positive("simulate.h", s.h)?;
        positive("simulate.dt", s.dt)?;
        positive("simulate.horizon", s.horizon)?;
        positive("simulate.theta", s.theta)?;
        positive("simulate.extinction_threshold", s.extinction_threshold)?;
        positive("simulate.sample_every", s.sample_every)?;
        if s.snapshot_every == 0 {
            return Err(CliError::config("simulate.snapshot_every", "must be positive"));
        }
        let v = &self.verify;
        positive("verify.h", v.h)?;
        positive("verify.dt", v.dt)?;
        positive("verify.horizon", v.horizon)?;
        positive("verify.half_width", v.half_width)?;
        for (path, dir) in [
            ("eigen.direction", &self.eigen.direction),
            ("dispersion.direction", &self.dispersion.direction),
            ("speed.direction", &self.speed.direction),
            ("wave.direction", &self.wave.direction),
            ("barrier.direction", &self.barrier.direction),
        ] {
            if let Some(p) = dir {
                check_direction(path, p)?;
            }
        }
        if let Some(p) = &self.wave.direction {
            if p.iter().any(|v| v.fract() != 0.0) {
                return Err(CliError::config("wave.direction", "entries must be integers"));
            }
        }
        Ok(())
    }

    pub fn build_model(&self) -> Result<ModelSpec, CliError> {
        let m = self.model.build()?;
        let dim = m.dim();
        for (path, dir) in [
            ("eigen.direction", &self.eigen.direction),
            ("dispersion.direction", &self.dispersion.direction),
            ("speed.direction", &self.speed.direction),
            ("wave.direction", &self.wave.direction),
            ("barrier.direction", &self.barrier.direction),
        ] {
            if let Some(p) = dir {
                if p.len() != dim {
                    return Err(CliError::config(path, format!("expected {dim} entries, got {}", p.len())));
                }
            }
        }
        Ok(m)
    }

    pub fn eigen_options(&self) -> EigenOptions {
        EigenOptions {
            tol: self.numerics.eigen_tol,
            max_iter: self.numerics.eigen_max_iter,
            ..EigenOptions::default()
        }
    }

    pub fn grid(&self, dim: usize) -> Result<PeriodicGrid, CliError> {
        Ok(PeriodicGrid::uniform(dim, self.numerics.points)?)
    }
}

fn positive(path: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::config(path, format!("must be positive, got {v}")))
    }
}

fn check_direction(path: &str, p: &[f64]) -> Result<(), CliError> {
    if p.is_empty() || p.iter().any(|v| !v.is_finite()) {
        return Err(CliError::config(path, "expected finite entries"));
    }
    if p.iter().all(|&v| v == 0.0) {
        return Err(CliError::config(path, "direction vector is zero"));
    }
    Ok(())
}

/// Unit vector along `p`, or `e1` when absent.
pub fn unit(p: Option<&[f64]>, dim: usize) -> Vec<f64> {
    match p {
        Some(p) => {
            let n = p.iter().map(|v| v * v).sum::<f64>().sqrt();
            p.iter().map(|v| v / n).collect()
        }
        None => {
            let mut e = vec![0.0; dim];
            e[0] = 1.0;
            e
        }
    }
}
