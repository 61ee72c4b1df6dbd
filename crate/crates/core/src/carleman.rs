//! Carleman weights and both sides of the weighted estimate, evaluated on
//! discrete backward trajectories.
//!
//! With `θ(t) = 1/(t(T-t))`, `ξ(x) = exp(λ(m‖η‖∞ + η(x)))`,
//! `p(x) = exp(2λm‖η‖∞) - ξ(x)` and `α = θ p`, the left side is
//!
//! ```text
//! λ³R² ∫∫_Ω θ³ξ³e^{-2Rα} φ² + λ ∫∫_Ω θξe^{-2Rα} |∇φ|² + λ²R² ∫∫_Γ θ³ξ³e^{-2Rα} φ_Γ²
//! ```
//!
//! and the right side is `∫∫_Γ θξe^{-2Rα} |∂ₜφ_Γ + δΔ_Γφ_Γ - γ∂_νφ|²`.
//! Time integrals use the interior nodes of the uniform grid; the weighted
//! integrands vanish at t = 0 and t = T.

use std::io::Write;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::{cell_gradients, DiscreteSystem};
use crate::error::{check_len, Error, Result};
use crate::evolution::{recover_normal_flux, time_grid, Propagator, Scheme, Trajectory};
use crate::mesh::{BulkSurfaceMesh, EtaField};
use crate::sampling::unit_random_states;

#[derive(Debug, Clone, PartialEq)]
pub struct CarlemanParams {
    pub lambda: f64,
    pub r: f64,
    pub m: f64,
    pub t_final: f64,
    pub eta: EtaField,
}

impl CarlemanParams {
    pub fn new(lambda: f64, r: f64, m: f64, t_final: f64, eta: EtaField) -> Result<Self> {
        for (name, v) in [("lambda", lambda), ("R", r), ("T", t_final)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::param(name, format!("must be positive, got {v}")));
            }
        }
        if !(m.is_finite() && m > 1.0) {
            return Err(Error::param("m", format!("must exceed 1, got {m}")));
        }
        Ok(CarlemanParams {
            lambda,
            r,
            m,
            t_final,
            eta,
        })
    }

    pub fn theta(&self, t: f64) -> f64 {
        1.0 / (t * (self.t_final - t))
    }

    /// `dθ/dt = (2t - T) / (t(T-t))²`.
    pub fn theta_t(&self, t: f64) -> f64 {
        let d = t * (self.t_final - t);
        (2.0 * t - self.t_final) / (d * d)
    }

    fn log_xi(&self, node: usize) -> f64 {
        self.lambda * (self.m * self.eta.sup_norm + self.eta.values[node])
    }

    pub fn xi(&self, node: usize) -> f64 {
        self.log_xi(node).exp()
    }

    pub fn p(&self, node: usize) -> f64 {
        (2.0 * self.lambda * self.m * self.eta.sup_norm).exp() - self.xi(node)
    }

    pub fn alpha(&self, node: usize, t: f64) -> f64 {
        self.theta(t) * self.p(node)
    }

    /// `(θξ)^k e^{-2Rα}`, evaluated in log space so that tiny factors
    /// underflow cleanly to zero.
    pub fn weight(&self, k: f64, node: usize, t: f64) -> f64 {
        self.log_weight(k, node, t).exp()
    }

    pub fn log_weight(&self, k: f64, node: usize, t: f64) -> f64 {
        let th = self.theta(t);
        k * (th.ln() + self.log_xi(node)) - 2.0 * self.r * th * self.p(node)
    }

    /// `4 e^{λm‖η‖∞} / T²`, the analytic minimum of θξ, evaluated as
    /// `θ(T/2) e^{λm‖η‖∞}` so that it rounds the same way as grid values.
    pub fn theta_xi_floor(&self) -> f64 {
        self.theta(0.5 * self.t_final) * (self.lambda * (self.m * self.eta.sup_norm)).exp()
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if t > 0.0 && t < self.t_final {
            Ok(())
        } else {
            Err(Error::param("times", format!("weights are singular at t = {t}; need 0 < t < {}", self.t_final)))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightEval {
    pub theta: Vec<f64>,
    pub xi: Vec<f64>,
    /// `alpha[time][node]`.
    pub alpha: Vec<Vec<f64>>,
    /// `e^{-2Rα}`, same layout as `alpha`.
    pub exp_factor: Vec<Vec<f64>>,
}

pub fn eval_weights(params: &CarlemanParams, mesh: &BulkSurfaceMesh, times: &[f64]) -> Result<WeightEval> {
    check_len("eta field", mesh.num_nodes(), params.eta.values.len())?;
    for &t in times {
        params.check_time(t)?;
    }
    let n = mesh.num_nodes();
    let xi = (0..n).map(|i| params.xi(i)).collect();
    let theta = times.iter().map(|&t| params.theta(t)).collect();
    let alpha: Vec<Vec<f64>> = times
        .iter()
        .map(|&t| (0..n).map(|i| params.alpha(i, t)).collect())
        .collect();
    let exp_factor = alpha
        .iter()
        .map(|row| row.iter().map(|a| (-2.0 * params.r * a).exp()).collect())
        .collect();
    Ok(WeightEval {
        theta,
        xi,
        alpha,
        exp_factor,
    })
}

/// Weight extrema over a uniform grid with `steps` intervals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightBounds {
    /// min of θ³ξ³e^{-2Rα} over all nodes and grid times in [T/4, 3T/4].
    pub floor_mid: f64,
    /// Natural log of `floor_mid`; stays finite when the floor itself
    /// underflows.
    pub log_floor_mid: f64,
    /// max of θξe^{-2Rα} over boundary nodes and interior grid times.
    pub ceiling_boundary: f64,
    /// min of θξ over all nodes and interior grid times.
    pub min_theta_xi: f64,
    pub theta_xi_floor: f64,
    /// max of |α_t| / (θ²ξ²) with α_t = θ_t p.
    pub varsigma1: f64,
}

pub fn weight_bounds(params: &CarlemanParams, mesh: &BulkSurfaceMesh, steps: usize) -> Result<WeightBounds> {
    check_len("eta field", mesh.num_nodes(), params.eta.values.len())?;
    if steps < 2 {
        return Err(Error::param("nt", "need at least one interior time node"));
    }
    let t_final = params.t_final;
    let times = time_grid(t_final, steps);
    let mut b = WeightBounds {
        floor_mid: f64::INFINITY,
        log_floor_mid: f64::INFINITY,
        ceiling_boundary: 0.0,
        min_theta_xi: f64::INFINITY,
        theta_xi_floor: params.theta_xi_floor(),
        varsigma1: 0.0,
    };
    for &t in &times[1..steps] {
        let th = params.theta(t);
        let mid = t >= 0.25 * t_final && t <= 0.75 * t_final;
        for i in 0..mesh.num_nodes() {
            let xi = params.xi(i);
            b.min_theta_xi = b.min_theta_xi.min(th * xi);
            b.varsigma1 = b.varsigma1.max((params.theta_t(t) * params.p(i)).abs() / (th * th * xi * xi));
            if mid {
                b.log_floor_mid = b.log_floor_mid.min(params.log_weight(3.0, i, t));
            }
            if mesh.is_boundary(i) {
                b.ceiling_boundary = b.ceiling_boundary.max(params.weight(1.0, i, t));
            }
        }
    }
    b.floor_mid = b.log_floor_mid.exp();
    Ok(b)
}

/// Per-node lower bound on λ required pointwise by the convexity argument:
/// `max(2|Δη|/|∇η|², 4|∇|∇η|²|/|∇η|³)`; infinite where ∇η vanishes.
pub fn lambda_threshold(eta: &EtaField) -> Vec<f64> {
    (0..eta.values.len())
        .map(|i| {
            let g = eta.gradient[i];
            let h = eta.hessian[i];
            let gn = eta.gradient_norm(i);
            if gn == 0.0 {
                return f64::INFINITY;
            }
            // ∇|∇η|² = 2 H ∇η
            let hg = [2.0 * (h[0][0] * g[0] + h[0][1] * g[1]), 2.0 * (h[1][0] * g[0] + h[1][1] * g[1])];
            let hg_norm = (hg[0] * hg[0] + hg[1] * hg[1]).sqrt();
            (2.0 * eta.laplacian[i].abs() / (gn * gn)).max(4.0 * hg_norm / (gn * gn * gn))
        })
        .collect()
}

/// Nodes where `lambda` does not exceed [`lambda_threshold`].
pub fn threshold_violations(eta: &EtaField, lambda: f64) -> Vec<usize> {
    lambda_threshold(eta)
        .into_iter()
        .enumerate()
        .filter(|&(_, th)| lambda < th)
        .map(|(i, _)| i)
        .collect()
}

fn check_trajectory(sys: &DiscreteSystem, adj: &Trajectory, params: &CarlemanParams) -> Result<()> {
    if adj.states.len() < 3 {
        return Err(Error::param("trajectory", "need at least one interior time node"));
    }
    check_len("trajectory state", sys.dim(), adj.states[0].len())?;
    check_len("eta field", sys.dim(), params.eta.values.len())?;
    if (adj.t_final() - params.t_final).abs() > 1e-12 * params.t_final {
        return Err(Error::Mismatch(format!(
            "trajectory ends at {}, weights use T = {}",
            adj.t_final(),
            params.t_final
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarlemanLhs {
    /// ∫∫_Ω θ³ξ³e^{-2Rα} φ²
    pub bulk: f64,
    /// ∫∫_Ω θξe^{-2Rα} |∇φ|²
    pub gradient: f64,
    /// ∫∫_Γ θ³ξ³e^{-2Rα} φ_Γ²
    pub boundary: f64,
    pub total: f64,
}

pub fn carleman_lhs_terms(sys: &DiscreteSystem, adj: &Trajectory, params: &CarlemanParams) -> Result<CarlemanLhs> {
    check_trajectory(sys, adj, params)?;
    let mesh = &sys.mesh;
    let (mut bulk, mut gradient, mut boundary) = (0.0, 0.0, 0.0);
    for n in 1..adj.steps() {
        let t = adj.times[n];
        let phi = &adj.states[n];
        let w3: Vec<f64> = (0..sys.dim()).map(|i| params.weight(3.0, i, t)).collect();
        let w1: Vec<f64> = (0..sys.dim()).map(|i| params.weight(1.0, i, t)).collect();
        bulk += adj.dt * (0..sys.dim()).map(|i| sys.bulk_mass[i] * w3[i] * phi[i] * phi[i]).sum::<f64>();
        let grads = cell_gradients(mesh, phi);
        gradient += adj.dt
            * mesh
                .cells
                .iter()
                .zip(&grads)
                .enumerate()
                .map(|(c, (cell, g))| {
                    let w = cell.iter().map(|&v| w1[v]).sum::<f64>() / cell.len() as f64;
                    mesh.cell_measure(c) * w * (g[0] * g[0] + g[1] * g[1])
                })
                .sum::<f64>();
        boundary += adj.dt
            * mesh
                .boundary_nodes
                .iter()
                .enumerate()
                .map(|(k, &i)| sys.surface_mass[k] * w3[i] * phi[i] * phi[i])
                .sum::<f64>();
    }
    let (l, r) = (params.lambda, params.r);
    Ok(CarlemanLhs {
        bulk,
        gradient,
        boundary,
        total: l.powi(3) * r * r * bulk + l * gradient + l * l * r * r * boundary,
    })
}

pub fn carleman_lhs(sys: &DiscreteSystem, adj: &Trajectory, params: &CarlemanParams) -> Result<f64> {
    Ok(carleman_lhs_terms(sys, adj, params)?.total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhsPath {
    /// Discrete ∂ₜφ_Γ, Δ_Γ and the variational normal flux.
    Direct,
    /// βφ_Γ, substituted from the adjoint boundary equation.
    Equation,
}

pub fn carleman_rhs(sys: &DiscreteSystem, adj: &Trajectory, params: &CarlemanParams, path: RhsPath) -> Result<f64> {
    check_trajectory(sys, adj, params)?;
    let flux = match path {
        RhsPath::Direct => Some(recover_normal_flux(sys, adj)?),
        RhsPath::Equation => None,
    };
    let mut total = 0.0;
    for n in 1..adj.steps() {
        let t = adj.times[n];
        let reaction = sys.trace(&adj.states[n]).component_mul(&sys.beta);
        let combo: DVector<f64> = match &flux {
            // φ̇_Γ + δΔ_Γφ_Γ - γ∂_νφ = (equation-based flux + βφ_Γ) - variational flux
            Some(f) => &f.equation[n] + &reaction - &f.variational[n],
            None => reaction,
        };
        total += adj.dt
            * sys
                .mesh
                .boundary_nodes
                .iter()
                .enumerate()
                .map(|(k, &i)| sys.surface_mass[k] * params.weight(1.0, i, t) * combo[k] * combo[k])
                .sum::<f64>();
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    /// `(λ, R)` cells, evaluated in order.
    pub grid: Vec<(f64, f64)>,
    pub m: f64,
    pub t_final: f64,
    pub steps: usize,
    pub scheme: Scheme,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub r: f64,
    pub sample_id: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub lambda: f64,
    pub r: f64,
    pub max_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub cells: Vec<SweepCell>,
}

impl SweepTable {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "lambda,R,sample_id,lhs,rhs,ratio")?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{},{},{}", r.lambda, r.r, r.sample_id, r.lhs, r.rhs, r.ratio)?;
        }
        Ok(())
    }
}

/// Empirical ratio LHS/RHS (equation path) over seeded unit final data for
/// every `(λ, R)` cell. Rows come out in grid-major, sample-minor order
/// regardless of how many threads run the cells.
pub fn carleman_sweep(
    sys: &DiscreteSystem,
    eta: &EtaField,
    spec: &SweepSpec,
    samples: usize,
    seed: u64,
) -> Result<SweepTable> {
    if samples == 0 {
        return Err(Error::param("samples", "must be at least 1"));
    }
    let params: Vec<CarlemanParams> = spec
        .grid
        .iter()
        .map(|&(l, r)| CarlemanParams::new(l, r, spec.m, spec.t_final, eta.clone()))
        .collect::<Result<_>>()?;
    let prop = Propagator::new(sys, spec.t_final, spec.steps, spec.scheme)?;
    let data = unit_random_states(sys, samples, seed)?;
    let trajectories: Vec<Trajectory> = data.par_iter().map(|d| prop.backward(d)).collect::<Result<_>>()?;

    let jobs: Vec<(usize, usize)> = (0..params.len())
        .flat_map(|c| (0..samples).map(move |s| (c, s)))
        .collect();
    let rows: Vec<SweepRow> = jobs
        .par_iter()
        .map(|&(c, s)| {
            let p = &params[c];
            let lhs = carleman_lhs(sys, &trajectories[s], p)?;
            let rhs = carleman_rhs(sys, &trajectories[s], p, RhsPath::Equation)?;
            Ok(SweepRow {
                lambda: p.lambda,
                r: p.r,
                sample_id: s,
                lhs,
                rhs,
                ratio: lhs / rhs,
            })
        })
        .collect::<Result<_>>()?;
    let cells = params
        .iter()
        .enumerate()
        .map(|(c, p)| SweepCell {
            lambda: p.lambda,
            r: p.r,
            max_ratio: rows[c * samples..(c + 1) * samples]
                .iter()
                .map(|r| r.ratio)
                .fold(f64::NEG_INFINITY, f64::max),
        })
        .collect();
    Ok(SweepTable { rows, cells })
}
