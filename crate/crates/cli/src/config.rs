//! Experiment configuration: one JSON document per run.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use wentzell_core::{
    assemble, build_disk_mesh, build_interval_mesh, build_rect_mesh, BulkSurfaceMesh, DVector, DiscreteSystem, Scheme,
};

/// A rejected configuration. `field` is a dotted path into the document.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{field}: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Single-line machine-readable form, as printed on stderr.
    pub fn to_json_line(&self) -> String {
        serde_json::json!({
            "error": "invalid_config",
            "field": self.field,
            "message": self.message,
        })
        .to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GeometryConfig {
    Interval { a: f64, b: f64, n: usize },
    Rect { lx: f64, ly: f64, nx: usize, ny: usize },
    Disk { radius: f64, nr: usize, ntheta: usize },
}

/// β on Γ: a bare number, or a named profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BetaConfig {
    Constant(f64),
    Profile(BetaProfile),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum BetaProfile {
    /// `c0 + cx·x + cy·y`.
    Affine { c0: f64, cx: f64, cy: f64 },
    /// `mean + amplitude·cos(k·φ)` with φ the polar angle of the node.
    Angular { mean: f64, amplitude: f64, k: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum StateConfig {
    Zero,
    Constant { value: f64 },
    /// Lowest eigenvector of the generator, unit in the 𝕏² norm.
    Eigenmode,
    /// Product of sines over the bounding box, `k` half-waves per axis.
    BulkMode { k: u32 },
    /// Unit-norm seeded Gaussian state.
    Random { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ForcingConfig {
    Zero,
    Constant { value: f64 },
    /// `amplitude·sin(2π·frequency·t)` on every boundary node.
    Sine { amplitude: f64, frequency: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskConfig {
    Simulate {
        initial: StateConfig,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        forcing: Option<ForcingConfig>,
    },
    Adjoint {
        #[serde(rename = "final")]
        final_state: StateConfig,
    },
    Carleman {
        lambda: Vec<f64>,
        #[serde(rename = "R")]
        r: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        m: Option<f64>,
        samples: usize,
        seed: u64,
    },
    Observability {
        samples: usize,
        seed: u64,
    },
    Control {
        initial: StateConfig,
        eps: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cg_tol: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cg_maxit: Option<usize>,
    },
}

impl TaskConfig {
    pub fn name(&self) -> &'static str {
        match self {
            TaskConfig::Simulate { .. } => "simulate",
            TaskConfig::Adjoint { .. } => "adjoint",
            TaskConfig::Carleman { .. } => "carleman",
            TaskConfig::Observability { .. } => "observability",
            TaskConfig::Control { .. } => "control",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub geometry: GeometryConfig,
    pub gamma: f64,
    pub delta: f64,
    pub beta: BetaConfig,
    /// Declared lower bound on β; defaults to its minimum over Γ.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta0: Option<f64>,
    #[serde(rename = "T")]
    pub t_final: f64,
    pub nt: usize,
    pub theta: f64,
    pub task: TaskConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

pub const DEFAULT_M: f64 = 2.0;
pub const DEFAULT_CG_TOL: f64 = 1e-10;

impl ExperimentConfig {
    /// Parses and validates. Structural errors carry the JSON path of the
    /// offending value.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let field = if path == "." { "<root>".to_string() } else { path };
            ConfigError::new(field, e.inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 over the canonical serialization, ignoring `output_dir`.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn scheme(&self) -> Scheme {
        Scheme::from_theta(self.theta).expect("validated")
    }

    /// Checks every numeric constraint the pipeline will impose, including
    /// those that need the mesh and β.
    pub fn validate(&self) -> Result<(), ConfigError> {
        positive("gamma", self.gamma)?;
        if !(self.delta.is_finite() && self.delta >= 0.0) {
            return Err(ConfigError::new("delta", format!("must be nonnegative, got {}", self.delta)));
        }
        positive("T", self.t_final)?;
        if self.nt < 2 {
            return Err(ConfigError::new("nt", format!("must be at least 2, got {}", self.nt)));
        }
        if self.theta != 0.5 && self.theta != 1.0 {
            return Err(ConfigError::new("theta", format!("must be 0.5 or 1, got {}", self.theta)));
        }
        let mesh = self.build_mesh()?;
        let beta = self.beta_values(&mesh)?;
        let beta_min = beta.iter().copied().fold(f64::INFINITY, f64::min);
        if let Some(b0) = self.beta0 {
            if !(b0.is_finite() && b0 >= 0.0) {
                return Err(ConfigError::new("beta0", format!("must be nonnegative, got {b0}")));
            }
            if beta_min < b0 {
                return Err(ConfigError::new("beta0", format!("beta falls to {beta_min} below the bound {b0}")));
            }
        }
        let beta0 = self.beta0.unwrap_or(beta_min);

        match &self.task {
            TaskConfig::Simulate { initial, forcing } => {
                self.validate_state("task.simulate.initial", initial, beta0)?;
                match forcing {
                    Some(ForcingConfig::Constant { value }) => finite("task.simulate.forcing.constant.value", *value)?,
                    Some(ForcingConfig::Sine { amplitude, frequency }) => {
                        finite("task.simulate.forcing.sine.amplitude", *amplitude)?;
                        finite("task.simulate.forcing.sine.frequency", *frequency)?;
                    }
                    _ => {}
                }
            }
            TaskConfig::Adjoint { final_state } => self.validate_state("task.adjoint.final", final_state, beta0)?,
            TaskConfig::Carleman {
                lambda,
                r,
                m,
                samples,
                ..
            } => {
                need_beta0("task", beta0)?;
                non_empty_positive("task.carleman.lambda", lambda)?;
                non_empty_positive("task.carleman.R", r)?;
                if let Some(m) = m {
                    if !(m.is_finite() && *m > 1.0) {
                        return Err(ConfigError::new("task.carleman.m", format!("must exceed 1, got {m}")));
                    }
                }
                if *samples == 0 {
                    return Err(ConfigError::new("task.carleman.samples", "must be at least 1"));
                }
            }
            TaskConfig::Observability { samples, .. } => {
                need_beta0("task", beta0)?;
                if *samples == 0 {
                    return Err(ConfigError::new("task.observability.samples", "must be at least 1"));
                }
            }
            TaskConfig::Control {
                initial,
                eps,
                cg_tol,
                cg_maxit,
            } => {
                self.validate_state("task.control.initial", initial, beta0)?;
                non_empty_positive("task.control.eps", eps)?;
                if let Some(tol) = cg_tol {
                    if !(*tol > 0.0 && *tol < 1.0) {
                        return Err(ConfigError::new("task.control.cg_tol", format!("must lie in (0, 1), got {tol}")));
                    }
                }
                if *cg_maxit == Some(0) {
                    return Err(ConfigError::new("task.control.cg_maxit", "must be at least 1"));
                }
            }
        }
        Ok(())
    }

    fn validate_state(&self, field: &str, s: &StateConfig, beta0: f64) -> Result<(), ConfigError> {
        match s {
            StateConfig::Constant { value } => finite(&format!("{field}.constant.value"), *value),
            StateConfig::Eigenmode => need_beta0(field, beta0),
            StateConfig::BulkMode { k } if *k == 0 => Err(ConfigError::new(format!("{field}.bulk_mode.k"), "must be at least 1")),
            _ => Ok(()),
        }
    }

    pub fn build_mesh(&self) -> Result<BulkSurfaceMesh, ConfigError> {
        let geo = |name: &str, e: wentzell_core::Error| ConfigError::new(format!("geometry.{name}"), e.to_string());
        match self.geometry {
            GeometryConfig::Interval { a, b, n } => {
                finite("geometry.interval.a", a)?;
                finite("geometry.interval.b", b)?;
                if !(b > a) {
                    return Err(ConfigError::new("geometry.interval.b", format!("must exceed a = {a}, got {b}")));
                }
                if n == 0 {
                    return Err(ConfigError::new("geometry.interval.n", "must be at least 1"));
                }
                build_interval_mesh(a, b, n).map_err(|e| geo("interval.n", e))
            }
            GeometryConfig::Rect { lx, ly, nx, ny } => {
                positive("geometry.rect.lx", lx)?;
                positive("geometry.rect.ly", ly)?;
                if nx == 0 {
                    return Err(ConfigError::new("geometry.rect.nx", "must be at least 1"));
                }
                if ny == 0 {
                    return Err(ConfigError::new("geometry.rect.ny", "must be at least 1"));
                }
                build_rect_mesh(lx, ly, nx, ny).map_err(|e| geo("rect.nx", e))
            }
            GeometryConfig::Disk { radius, nr, ntheta } => {
                positive("geometry.disk.radius", radius)?;
                if nr == 0 {
                    return Err(ConfigError::new("geometry.disk.nr", "must be at least 1"));
                }
                if ntheta < 3 {
                    return Err(ConfigError::new("geometry.disk.ntheta", format!("must be at least 3, got {ntheta}")));
                }
                build_disk_mesh(radius, nr, ntheta).map_err(|e| geo("disk.ntheta", e))
            }
        }
    }

    pub fn beta_values(&self, mesh: &BulkSurfaceMesh) -> Result<DVector<f64>, ConfigError> {
        let values: Vec<f64> = mesh
            .boundary_nodes
            .iter()
            .map(|&i| {
                let p = mesh.nodes[i];
                match &self.beta {
                    BetaConfig::Constant(v) => *v,
                    BetaConfig::Profile(BetaProfile::Affine { c0, cx, cy }) => c0 + cx * p[0] + cy * p[1],
                    BetaConfig::Profile(BetaProfile::Angular { mean, amplitude, k }) => {
                        mean + amplitude * (*k as f64 * p[1].atan2(p[0])).cos()
                    }
                }
            })
            .collect();
        if let Some(b) = values.iter().find(|b| !(b.is_finite() && **b >= 0.0)) {
            return Err(ConfigError::new("beta", format!("must be finite and nonnegative on the boundary, got {b}")));
        }
        Ok(DVector::from_vec(values))
    }

    pub fn build_system(&self) -> Result<DiscreteSystem, ConfigError> {
        let mesh = self.build_mesh()?;
        let beta = self.beta_values(&mesh)?;
        assemble(&mesh, self.gamma, self.delta, &beta).map_err(|e| ConfigError::new("geometry", e.to_string()))
    }
}

fn finite(field: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::new(field, format!("must be finite, got {v}")))
    }
}

fn positive(field: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(ConfigError::new(field, format!("must be positive, got {v}")))
    }
}

fn non_empty_positive(field: &str, vs: &[f64]) -> Result<(), ConfigError> {
    if vs.is_empty() {
        return Err(ConfigError::new(field, "must not be empty"));
    }
    for (i, v) in vs.iter().enumerate() {
        positive(&format!("{field}[{i}]"), *v)?;
    }
    Ok(())
}

fn need_beta0(field: &str, beta0: f64) -> Result<(), ConfigError> {
    if beta0 > 0.0 {
        Ok(())
    } else {
        Err(ConfigError::new(
            if field == "task" { "beta0".to_string() } else { field.to_string() },
            "needs a positive lower bound on beta",
        ))
    }
}
