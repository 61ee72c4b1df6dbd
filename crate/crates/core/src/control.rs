//! Boundary null controls by penalized HUM.
//!
//! The control-to-final-state map `𝒯` and its 𝕏²-adjoint give the Gramian
//! `Λ = 𝒯𝒯*`: solve backward from `Φ_T`, feed the boundary trace as the
//! control, and read off the final state of the forward solve from rest.
//! The penalized problem `(Λ + εI) Φ̂ = -e^{TA} U₀` is solved by conjugate
//! gradient in the M inner product, and the control is the trace of the
//! backward solution from `Φ̂`.

use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::assembly::DiscreteSystem;
use crate::error::{check_len, Error, Result};
use crate::evolution::{duality_residual, BoundarySignal, Propagator, Scheme, Trajectory};

#[derive(Debug, Clone)]
pub struct ControlProblem<'a> {
    pub sys: &'a DiscreteSystem,
    pub u0: DVector<f64>,
    pub t_final: f64,
    pub steps: usize,
    pub scheme: Scheme,
    pub eps: f64,
    pub cg_tol: f64,
    pub cg_maxit: usize,
}

impl<'a> ControlProblem<'a> {
    /// Defaults: `cg_tol = 1e-10`, `cg_maxit = 2·dim`.
    pub fn new(
        sys: &'a DiscreteSystem,
        u0: DVector<f64>,
        t_final: f64,
        steps: usize,
        scheme: Scheme,
        eps: f64,
    ) -> Result<Self> {
        let p = ControlProblem {
            sys,
            u0,
            t_final,
            steps,
            scheme,
            eps,
            cg_tol: 1e-10,
            cg_maxit: 2 * sys.dim(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(Error::param("eps", format!("must be positive, got {}", self.eps)));
        }
        if !(self.cg_tol > 0.0 && self.cg_tol < 1.0) {
            return Err(Error::param("cg_tol", format!("must lie in (0, 1), got {}", self.cg_tol)));
        }
        if self.steps < 2 {
            return Err(Error::param("nt", format!("must be at least 2, got {}", self.steps)));
        }
        if self.cg_maxit == 0 {
            return Err(Error::param("cg_maxit", "must be at least 1"));
        }
        check_len("initial state", self.sys.dim(), self.u0.len())
    }
}

/// `Λ = 𝒯𝒯*` on a fixed grid.
#[derive(Debug, Clone)]
pub struct Gramian<'a> {
    prop: Propagator<'a>,
}

impl<'a> Gramian<'a> {
    pub fn new(sys: &'a DiscreteSystem, t_final: f64, steps: usize, scheme: Scheme) -> Result<Self> {
        Ok(Gramian {
            prop: Propagator::new(sys, t_final, steps, scheme)?,
        })
    }

    pub fn propagator(&self) -> &Propagator<'a> {
        &self.prop
    }

    /// `𝒯*Φ_T`: the boundary trace of the backward solution.
    pub fn control_from(&self, phi_t: &DVector<f64>) -> Result<(BoundarySignal, Trajectory)> {
        let adj = self.prop.backward(phi_t)?;
        Ok((BoundarySignal::from_adjoint_trace(self.prop.system(), &adj, 1.0), adj))
    }

    pub fn apply(&self, phi_t: &DVector<f64>) -> Result<DVector<f64>> {
        let (g, _) = self.control_from(phi_t)?;
        let zero = DVector::zeros(self.prop.system().dim());
        self.prop.forward_final(&zero, &g)
    }
}

pub fn gramian_apply(
    sys: &DiscreteSystem,
    phi_t: &DVector<f64>,
    t_final: f64,
    steps: usize,
    scheme: Scheme,
) -> Result<DVector<f64>> {
    Gramian::new(sys, t_final, steps, scheme)?.apply(phi_t)
}

#[derive(Debug, Clone)]
pub struct ControlResult {
    pub g: BoundarySignal,
    /// `‖U(T)‖_M` under the synthesized control.
    pub final_norm: f64,
    /// Discrete `L²(Σ_T)` norm of `g`.
    pub control_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Final CG residual relative to the right-hand side.
    pub relative_residual: f64,
    /// `½‖g‖² + ‖U(T)‖²_M / (2ε)`.
    pub cost: f64,
    pub eps: f64,
    pub adjoint_final: DVector<f64>,
    pub adjoint_initial: DVector<f64>,
    pub final_state: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlSummary {
    pub final_norm: f64,
    pub control_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub relative_residual: f64,
    pub cost: f64,
    pub eps: f64,
}

impl ControlResult {
    pub fn summary(&self) -> ControlSummary {
        ControlSummary {
            final_norm: self.final_norm,
            control_norm: self.control_norm,
            iterations: self.iterations,
            converged: self.converged,
            relative_residual: self.relative_residual,
            cost: self.cost,
            eps: self.eps,
        }
    }

    pub fn write_csv<W: Write>(&self, w: W, problem: &ControlProblem<'_>) -> Result<()> {
        self.g.write_csv(w, problem.t_final, problem.sys)
    }
}

fn m_dot(sys: &DiscreteSystem, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    sys.apply_mass(a).dot(b)
}

pub fn synthesize_control(problem: &ControlProblem<'_>) -> Result<ControlResult> {
    problem.validate()?;
    let sys = problem.sys;
    let gram = Gramian::new(sys, problem.t_final, problem.steps, problem.scheme)?;
    let prop = gram.propagator();
    let apply = |v: &DVector<f64>| -> Result<DVector<f64>> { Ok(gram.apply(v)? + v * problem.eps) };

    let b = -prop.free_final(&problem.u0)?;
    let b_norm = m_dot(sys, &b, &b).sqrt();
    let mut x = DVector::zeros(sys.dim());
    let mut iterations = 0;
    let mut rel = 0.0;
    let mut converged = true;
    if b_norm > 0.0 {
        let mut r = b.clone();
        let mut p = r.clone();
        let mut rr = m_dot(sys, &r, &r);
        let (mut best_x, mut best_rr) = (x.clone(), rr);
        converged = false;
        while iterations < problem.cg_maxit {
            let ap = apply(&p)?;
            let pap = m_dot(sys, &p, &ap);
            if !(pap > 0.0) {
                return Err(Error::Numerical(format!("penalized Gramian lost positivity: <p, Ap> = {pap}")));
            }
            let a = rr / pap;
            x.axpy(a, &p, 1.0);
            r.axpy(-a, &ap, 1.0);
            iterations += 1;
            let rr_new = m_dot(sys, &r, &r);
            if rr_new < best_rr {
                best_rr = rr_new;
                best_x.copy_from(&x);
            }
            if rr_new.sqrt() <= problem.cg_tol * b_norm {
                converged = true;
                break;
            }
            p = &r + &p * (rr_new / rr);
            rr = rr_new;
        }
        if !converged {
            x = best_x;
        }
        rel = best_rr.sqrt() / b_norm;
    }

    let (g, adj) = gram.control_from(&x)?;
    let final_state = prop.forward_final(&problem.u0, &g)?;
    let final_norm = m_dot(sys, &final_state, &final_state).sqrt();
    let control_norm = g.l2_norm_sq(sys, prop.dt(), problem.scheme).sqrt();
    Ok(ControlResult {
        final_norm,
        control_norm,
        iterations,
        converged,
        relative_residual: rel,
        cost: 0.5 * control_norm * control_norm + final_norm * final_norm / (2.0 * problem.eps),
        eps: problem.eps,
        adjoint_initial: adj.initial().clone(),
        adjoint_final: x,
        final_state,
        g,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NullReport {
    pub final_norm: f64,
    /// Final norm with `g` interpolated onto a grid of `2·nt` steps.
    pub final_norm_refined: f64,
    /// `|⟨U(T), Φ̂_T⟩_M + ε‖Φ̂_T‖²_M|`.
    pub optimality_residual: f64,
    /// `|‖g‖² - ⟨ΛΦ̂_T, Φ̂_T⟩_M|`, relative to `‖g‖²`.
    pub control_cost_defect: f64,
    /// Relative residual of the forward/backward duality identity.
    pub duality_residual: f64,
}

/// Independent checks on a synthesized control: re-simulation at double
/// resolution, first-order optimality, and the duality identity.
pub fn verify_null(problem: &ControlProblem<'_>, result: &ControlResult) -> Result<NullReport> {
    problem.validate()?;
    let sys = problem.sys;
    let gram = Gramian::new(sys, problem.t_final, problem.steps, problem.scheme)?;
    let prop = gram.propagator();

    let fwd = prop.forward(&problem.u0, &result.g)?;
    let final_norm = m_dot(sys, fwd.last(), fwd.last()).sqrt();
    let fine = Propagator::new(sys, problem.t_final, 2 * problem.steps, problem.scheme)?;
    let refined = fine.forward_final(&problem.u0, &result.g.refined(problem.scheme))?;
    let final_norm_refined = m_dot(sys, &refined, &refined).sqrt();

    let phi = &result.adjoint_final;
    let optimality_residual = (m_dot(sys, fwd.last(), phi) + problem.eps * m_dot(sys, phi, phi)).abs();

    let g_sq = result.g.l2_norm_sq(sys, prop.dt(), problem.scheme);
    let gram_form = m_dot(sys, &gram.apply(phi)?, phi);
    let control_cost_defect = if g_sq > 0.0 {
        (g_sq - gram_form).abs() / g_sq
    } else {
        gram_form.abs()
    };

    let adj = prop.backward(phi)?;
    let duality = duality_residual(sys, &fwd, &adj, &result.g)?;
    Ok(NullReport {
        final_norm,
        final_norm_refined,
        optimality_residual,
        control_cost_defect,
        duality_residual: duality.relative(),
    })
}
