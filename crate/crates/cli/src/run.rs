//! Task dispatch and artifact writing.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;
use wentzell_core::carleman::{threshold_violations, weight_bounds};
use wentzell_core::observability::observation_energy;
use wentzell_core::sampling::{normalize, unit_random_states};
use wentzell_core::{
    build_eta, carleman_sweep, check_energy_identity, estimate_coercivity, estimate_ct, solve_backward, solve_forward,
    synthesize_control, verify_null, BoundarySignal, CarlemanParams, ControlProblem, DVector, DiscreteSystem,
    SweepSpec,
};

use crate::config::{ConfigError, ExperimentConfig, ForcingConfig, StateConfig, TaskConfig, DEFAULT_CG_TOL, DEFAULT_M};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            _ => 1,
        }
    }

    pub fn to_json_line(&self) -> String {
        match self {
            RunError::Config(e) => e.to_json_line(),
            RunError::Numerical(m) => json!({"error": "numerical", "message": m}).to_string(),
            RunError::Io(e) => json!({"error": "io", "message": e.to_string()}).to_string(),
        }
    }
}

impl From<wentzell_core::Error> for RunError {
    fn from(e: wentzell_core::Error) -> Self {
        match e {
            wentzell_core::Error::InvalidParameter { name, reason } => RunError::Config(ConfigError::new(name, reason)),
            wentzell_core::Error::Io(e) => RunError::Io(e),
            other => RunError::Numerical(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub config_hash: String,
    pub versions: BTreeMap<String, String>,
    pub task: String,
    pub status: String,
    pub partial: bool,
    pub error: Option<String>,
    pub outputs: Vec<String>,
    pub summary: BTreeMap<String, Value>,
}

/// Collects artifacts for one run; every file carries the config hash.
struct Artifacts {
    dir: PathBuf,
    hash: String,
    outputs: Vec<String>,
    summary: BTreeMap<String, Value>,
}

impl Artifacts {
    fn csv(&mut self, name: &str, body: impl FnOnce(&mut Vec<u8>) -> wentzell_core::Result<()>) -> Result<(), RunError> {
        let mut buf = format!("# config_hash={}\n", self.hash).into_bytes();
        body(&mut buf)?;
        fs::write(self.dir.join(name), buf)?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn json(&mut self, name: &str, value: impl Serialize) -> Result<(), RunError> {
        let mut v = serde_json::to_value(value).map_err(|e| RunError::Numerical(e.to_string()))?;
        let obj = match v {
            Value::Object(ref mut m) => m,
            _ => unreachable!("artifact JSON is always an object"),
        };
        obj.insert("config_hash".into(), Value::String(self.hash.clone()));
        let mut w = BufWriter::new(File::create(self.dir.join(name))?);
        serde_json::to_writer_pretty(&mut w, &v).map_err(std::io::Error::from)?;
        writeln!(w)?;
        w.flush()?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn scalar(&mut self, key: impl Into<String>, value: impl Serialize) {
        self.summary
            .insert(key.into(), serde_json::to_value(value).expect("scalar serializes"));
    }
}

/// Output directory: explicit flag, then the config, then `env_dir`, then `./out`.
pub fn resolve_out_dir(flag: Option<PathBuf>, cfg: &ExperimentConfig, env_dir: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| cfg.output_dir.clone())
        .or(env_dir)
        .unwrap_or_else(|| PathBuf::from("out"))
}

/// Runs the configured task and writes its artifacts plus `manifest.json`
/// into `dir`. The manifest is written even when the pipeline fails, with
/// `partial = true` and whatever outputs were finished.
pub fn run(cfg: &ExperimentConfig, dir: &Path) -> Result<Manifest, RunError> {
    cfg.validate()?;
    fs::create_dir_all(dir)?;
    let mut art = Artifacts {
        dir: dir.to_path_buf(),
        hash: cfg.hash(),
        outputs: Vec::new(),
        summary: BTreeMap::new(),
    };
    let outcome = art
        .json("config.json", json!({ "config": cfg }))
        .and_then(|_| dispatch(cfg, &mut art));

    let mut versions = BTreeMap::new();
    versions.insert("wentzell-core".to_string(), wentzell_core::VERSION.to_string());
    versions.insert("wentzell-cli".to_string(), env!("CARGO_PKG_VERSION").to_string());
    let manifest = Manifest {
        config_hash: art.hash.clone(),
        versions,
        task: cfg.task.name().to_string(),
        status: if outcome.is_ok() { "ok" } else { "failed" }.to_string(),
        partial: outcome.is_err(),
        error: outcome.as_ref().err().map(|e| e.to_string()),
        outputs: art.outputs.clone(),
        summary: art.summary.clone(),
    };
    let mut w = BufWriter::new(File::create(dir.join(MANIFEST))?);
    serde_json::to_writer_pretty(&mut w, &manifest).map_err(std::io::Error::from)?;
    writeln!(w)?;
    w.flush()?;
    outcome.map(|_| manifest)
}

fn dispatch(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<(), RunError> {
    let sys = cfg.build_system()?;
    let scheme = cfg.scheme();
    let (t, nt) = (cfg.t_final, cfg.nt);
    art.scalar("dim", sys.dim());
    art.scalar("num_boundary", sys.num_boundary());
    art.scalar("h", sys.mesh.h);

    match &cfg.task {
        TaskConfig::Simulate { initial, forcing } => {
            let u0 = build_state(&sys, initial)?;
            let g = build_forcing(&sys, t, nt, forcing.as_ref().unwrap_or(&ForcingConfig::Zero));
            let traj = solve_forward(&sys, &u0, &g, t, nt, scheme)?;
            art.csv("trajectory.csv", |w| traj.write_csv(w))?;
            art.csv("forcing.csv", |w| g.write_csv(w, t, &sys))?;
            let summary = traj.summary(&sys)?;
            let last = summary.steps.last().expect("at least one step");
            art.scalar("initial_norm", summary.steps[0].norm_x2);
            art.scalar("final_norm", last.norm_x2);
            art.scalar("final_max_abs", last.max_abs);
            art.json("summary.json", &summary)?;
        }
        TaskConfig::Adjoint { final_state } => {
            let phi = build_state(&sys, final_state)?;
            let adj = solve_backward(&sys, &phi, t, nt, scheme)?;
            art.csv("adjoint.csv", |w| adj.write_csv(w))?;
            let summary = adj.summary(&sys)?;
            let defect = check_energy_identity(&sys, &adj)?;
            let obs = observation_energy(&sys, &adj);
            art.scalar("final_norm", summary.steps.last().expect("at least one step").norm_x2);
            art.scalar("initial_norm", summary.steps[0].norm_x2);
            art.scalar("energy_identity_defect", defect);
            art.scalar("observation_energy", obs);
            art.json(
                "summary.json",
                json!({ "trajectory": summary, "energy_identity_defect": defect, "observation_energy": obs }),
            )?;
        }
        TaskConfig::Carleman {
            lambda,
            r,
            m,
            samples,
            seed,
        } => {
            let m = m.unwrap_or(DEFAULT_M);
            let eta = build_eta(&sys.mesh)?;
            let grid: Vec<(f64, f64)> = lambda.iter().flat_map(|&l| r.iter().map(move |&r| (l, r))).collect();
            let spec = SweepSpec {
                grid: grid.clone(),
                m,
                t_final: t,
                steps: nt,
                scheme,
            };
            let table = carleman_sweep(&sys, &eta, &spec, *samples, *seed)?;
            art.csv("carleman_sweep.csv", |w| table.write_csv(w))?;

            let mut cells = Vec::with_capacity(grid.len());
            for (cell, &(l, rr)) in table.cells.iter().zip(&grid) {
                let params = CarlemanParams::new(l, rr, m, t, eta.clone())?;
                let bounds = weight_bounds(&params, &sys.mesh, nt)?;
                cells.push((l, rr, cell.max_ratio, bounds, threshold_violations(&eta, l).len()));
            }
            art.csv("carleman_cells.csv", |w| {
                writeln!(w, "lambda,R,max_ratio,log_floor_mid,min_theta_xi,theta_xi_floor,threshold_violations")?;
                for (l, rr, max_ratio, b, v) in &cells {
                    writeln!(
                        w,
                        "{l},{rr},{max_ratio},{},{},{},{v}",
                        b.log_floor_mid, b.min_theta_xi, b.theta_xi_floor
                    )?;
                }
                Ok(())
            })?;
            let cells: Vec<Value> = cells
                .iter()
                .map(|(l, rr, max_ratio, b, v)| {
                    json!({ "lambda": l, "R": rr, "max_ratio": max_ratio, "bounds": b, "threshold_violations": v })
                })
                .collect();
            let max_ratio = table.cells.iter().map(|c| c.max_ratio).fold(f64::NEG_INFINITY, f64::max);
            let min_ratio = table.rows.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);
            art.scalar("max_ratio", max_ratio);
            art.scalar("min_ratio", min_ratio);
            art.json("carleman.json", json!({ "m": m, "samples": samples, "seed": seed, "cells": cells }))?;
            if !table.rows.iter().all(|r| r.ratio.is_finite() && r.ratio > 0.0) {
                return Err(RunError::Numerical("non-finite or nonpositive Carleman ratio".into()));
            }
        }
        TaskConfig::Observability { samples, seed } => {
            let report = estimate_ct(&sys, t, nt, scheme, *samples, *seed)?;
            art.csv("observability.csv", |w| report.write_csv(w))?;
            art.scalar("CT_estimate", report.ct_estimate);
            art.json("observability.json", &report)?;
        }
        TaskConfig::Control {
            initial,
            eps,
            cg_tol,
            cg_maxit,
        } => {
            let u0 = build_state(&sys, initial)?;
            let u0_norm = sys.apply_mass(&u0).dot(&u0).sqrt();
            art.scalar("initial_norm", u0_norm);
            let mut rows = Vec::with_capacity(eps.len());
            let mut failure = None;
            for &e in eps {
                let mut p = ControlProblem::new(&sys, u0.clone(), t, nt, scheme, e)?;
                p.cg_tol = cg_tol.unwrap_or(DEFAULT_CG_TOL);
                if let Some(maxit) = cg_maxit {
                    p.cg_maxit = *maxit;
                }
                let res = synthesize_control(&p)?;
                let check = verify_null(&p, &res)?;
                let label = format!("{e:e}");
                art.csv(&format!("control_{label}.csv"), |w| res.write_csv(w, &p))?;
                let relative = if u0_norm > 0.0 { res.final_norm / u0_norm } else { 0.0 };
                art.json(
                    &format!("control_{label}.json"),
                    json!({ "result": res.summary(), "checks": check, "relative_final_norm": relative }),
                )?;
                art.scalar(format!("final_norm[{label}]"), res.final_norm);
                art.scalar(format!("control_norm[{label}]"), res.control_norm);
                art.scalar(format!("iterations[{label}]"), res.iterations);
                rows.push((res.summary(), relative));
                if !res.converged {
                    failure = Some(format!(
                        "CG did not converge for eps = {e} after {} iterations (relative residual {:e})",
                        res.iterations, res.relative_residual
                    ));
                    break;
                }
            }
            art.csv("scaling.csv", |w| {
                writeln!(w, "eps,final_norm,relative_final_norm,control_norm,cost,iterations,converged,ratio_to_previous")?;
                let mut prev: Option<f64> = None;
                for (s, rel) in &rows {
                    let ratio = prev.map(|p| (p / s.final_norm).to_string()).unwrap_or_default();
                    writeln!(
                        w,
                        "{},{},{},{},{},{},{},{}",
                        s.eps, s.final_norm, rel, s.control_norm, s.cost, s.iterations, s.converged, ratio
                    )?;
                    prev = Some(s.final_norm);
                }
                Ok(())
            })?;
            if let Some(msg) = failure {
                return Err(RunError::Numerical(msg));
            }
        }
    }
    Ok(())
}

fn build_state(sys: &DiscreteSystem, s: &StateConfig) -> Result<DVector<f64>, RunError> {
    let n = sys.dim();
    Ok(match s {
        StateConfig::Zero => DVector::zeros(n),
        StateConfig::Constant { value } => DVector::from_element(n, *value),
        StateConfig::Eigenmode => estimate_coercivity(sys)?.eigenvector,
        StateConfig::BulkMode { k } => {
            let nodes = &sys.mesh.nodes;
            let lo = |d: usize| nodes.iter().map(|p| p[d]).fold(f64::INFINITY, f64::min);
            let hi = |d: usize| nodes.iter().map(|p| p[d]).fold(f64::NEG_INFINITY, f64::max);
            let k = *k as f64;
            let axes: Vec<(f64, f64)> = (0..sys.mesh.dim).map(|d| (lo(d), hi(d) - lo(d))).collect();
            let v = DVector::from_iterator(
                n,
                nodes.iter().map(|p| {
                    axes.iter()
                        .enumerate()
                        .map(|(d, (a, len))| (k * std::f64::consts::PI * (p[d] - a) / len).sin())
                        .product::<f64>()
                }),
            );
            // can vanish on every node for coarse meshes and large k
            if v.amax() > 0.0 {
                normalize(sys, v)?
            } else {
                v
            }
        }
        StateConfig::Random { seed } => unit_random_states(sys, 1, *seed)?.remove(0),
    })
}

fn build_forcing(sys: &DiscreteSystem, t_final: f64, steps: usize, f: &ForcingConfig) -> BoundarySignal {
    match *f {
        ForcingConfig::Zero => BoundarySignal::zeros(steps, sys.num_boundary()),
        ForcingConfig::Constant { value } => BoundarySignal::constant(steps, DVector::from_element(sys.num_boundary(), value)),
        ForcingConfig::Sine { amplitude, frequency } => BoundarySignal::from_fn(sys, t_final, steps, |t, _| {
            amplitude * (2.0 * std::f64::consts::PI * frequency * t).sin()
        }),
    }
}
