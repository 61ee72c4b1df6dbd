//! Empirical observability constant, the discrete energy identity of the
//! backward problem, and the boundary interpolation inequality.

use std::io::Write;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::{estimate_coercivity, norm_x2, DiscreteSystem};
use crate::error::{check_len, Error, Result};
use crate::evolution::{Propagator, Scheme, Trajectory};
use crate::sampling::{normalize, unit_random_states};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleRatio {
    /// `None` for the extremal (lowest mode) candidate.
    pub sample_id: Option<usize>,
    pub initial_energy: f64,
    pub observation_energy: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservabilityReport {
    #[serde(rename = "CT_estimate")]
    pub ct_estimate: f64,
    pub samples: usize,
    #[serde(rename = "T")]
    pub t_final: f64,
    pub steps: usize,
    pub scheme: Scheme,
    pub seed: u64,
    pub per_sample: Vec<SampleRatio>,
}

impl ObservabilityReport {
    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "sample_id,initial_energy,observation_energy,ratio")?;
        for s in &self.per_sample {
            let id = s.sample_id.map_or_else(|| "extremal".to_string(), |i| i.to_string());
            writeln!(w, "{id},{},{},{}", s.initial_energy, s.observation_energy, s.ratio)?;
        }
        Ok(())
    }
}

/// `Σ dt ∫_Γ |β φ_Γ^{n+θ}|² dσ` along a backward trajectory.
pub fn observation_energy(sys: &DiscreteSystem, adj: &Trajectory) -> f64 {
    (0..adj.steps())
        .map(|n| adj.dt * sys.surface_norm_sq(&sys.trace(&adj.adjoint_level(n)).component_mul(&sys.beta)))
        .sum()
}

/// `‖Φ(0)‖²_M` against the observation energy for the backward solution
/// with final datum `phi_t`.
pub fn observation_ratio(prop: &Propagator<'_>, phi_t: &DVector<f64>) -> Result<SampleRatio> {
    let sys = prop.system();
    let adj = prop.backward(phi_t)?;
    let initial_energy = norm_x2(sys, adj.initial())?.powi(2);
    let observation_energy = observation_energy(sys, &adj);
    if !(observation_energy > 0.0 && observation_energy.is_finite()) {
        return Err(Error::Numerical(format!(
            "observation energy is {observation_energy} for a nonzero final datum"
        )));
    }
    Ok(SampleRatio {
        sample_id: None,
        initial_energy,
        observation_energy,
        ratio: initial_energy / observation_energy,
    })
}

/// Largest observed ratio over `samples` seeded unit final data plus the
/// lowest generalized eigenvector of `(K, M)`.
pub fn estimate_ct(
    sys: &DiscreteSystem,
    t_final: f64,
    steps: usize,
    scheme: Scheme,
    samples: usize,
    seed: u64,
) -> Result<ObservabilityReport> {
    if !sys.is_coercive_boundary() {
        return Err(Error::param(
            "beta0",
            format!("observability needs beta >= beta0 > 0, got beta0 = {}", sys.beta0),
        ));
    }
    if samples == 0 {
        return Err(Error::param("samples", "must be at least 1"));
    }
    let prop = Propagator::new(sys, t_final, steps, scheme)?;
    let data = unit_random_states(sys, samples, seed)?;
    let mut per_sample: Vec<SampleRatio> = data
        .par_iter()
        .enumerate()
        .map(|(i, d)| {
            observation_ratio(&prop, d).map(|s| SampleRatio {
                sample_id: Some(i),
                ..s
            })
        })
        .collect::<Result<_>>()?;
    let lowest = normalize(sys, estimate_coercivity(sys)?.eigenvector)?;
    per_sample.push(observation_ratio(&prop, &lowest)?);
    let ct_estimate = per_sample.iter().map(|s| s.ratio).fold(0.0, f64::max);
    Ok(ObservabilityReport {
        ct_estimate,
        samples,
        t_final,
        steps,
        scheme,
        seed,
        per_sample,
    })
}

/// Largest relative defect, over steps, of the energy balance
/// `(‖Φⁿ⁺¹‖²_M - ‖Φⁿ‖²_M) / (2dt) = (Φ^{n+θ})ᵀ K Φ^{n+θ}`.
///
/// Crank–Nicolson satisfies it exactly; implicit Euler carries the extra
/// dissipation `(θ - ½) dt ‖M⁻¹KΦ^{n+θ}‖²_M`, which is O(dt) for smooth data.
pub fn check_energy_identity(sys: &DiscreteSystem, adj: &Trajectory) -> Result<f64> {
    if adj.states.len() < 2 {
        return Err(Error::param("trajectory", "at least 2 time levels are needed"));
    }
    check_len("trajectory state", sys.dim(), adj.states[0].len())?;
    let energy = |v: &DVector<f64>| sys.apply_mass(v).dot(v);
    let mut worst: f64 = 0.0;
    for n in 0..adj.steps() {
        let rate = (energy(&adj.states[n + 1]) - energy(&adj.states[n])) / (2.0 * adj.dt);
        let level = adj.adjoint_level(n);
        let form = sys.stiffness.quadratic_form(&level);
        let scale = rate.abs().max(form.abs());
        if scale > 0.0 {
            worst = worst.max((rate - form).abs() / scale);
        }
    }
    Ok(worst)
}

/// `(uᵀK_Γu, ‖u‖_{M_Γ} ‖M_Γ⁻¹K_Γu‖_{M_Γ})` for a field on Γ.
pub fn check_interpolation(sys: &DiscreteSystem, u: &DVector<f64>) -> Result<(f64, f64)> {
    if sys.mesh.dim != 2 {
        return Err(Error::param("dim", "the boundary of an interval has no surface gradient"));
    }
    if !(sys.delta > 0.0) {
        return Err(Error::param("delta", "surface diffusion must be positive"));
    }
    check_len("boundary field", sys.num_boundary(), u.len())?;
    let ku = sys.surface_stiffness.mul_vec(u);
    let lhs = u.dot(&ku);
    let lap = ku.component_div(&sys.surface_mass);
    let rhs = sys.surface_norm_sq(u).sqrt() * sys.surface_norm_sq(&lap).sqrt();
    Ok((lhs, rhs))
}
