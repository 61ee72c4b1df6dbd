//! Time integration of the forward system and of the backward adjoint system.
//!
//! The forward θ-step is
//!
//! ```text
//! (M + θ dt K) Uⁿ⁺¹ = (M - (1-θ) dt K) Uⁿ + dt B g^{n+θ},   g^{n+θ} = (1-θ) gⁿ + θ gⁿ⁺¹
//! ```
//!
//! and the backward step is its exact M-adjoint:
//!
//! ```text
//! Φ^{n+θ} = (M + θ dt K)⁻¹ M Φⁿ⁺¹,   Φⁿ = M⁻¹ (M - (1-θ) dt K) Φ^{n+θ}
//! ```
//!
//! so that `⟨Uᴺ,Φᴺ⟩_M - ⟨U⁰,Φ⁰⟩_M = Σ dt (g^{n+θ})ᵀ Bᵀ Φ^{n+θ}` holds to
//! roundoff. The intermediate level satisfies `Φ^{n+θ} = θ Φⁿ + (1-θ) Φⁿ⁺¹`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::assembly::{norm_x2, DiscreteSystem};
use crate::error::{check_len, Error, Result};
use crate::sparse::{CsrMatrix, EnvelopeCholesky};

/// Largest system accepted by the dense oracles.
pub const DENSE_MAX_DIM: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    CrankNicolson,
    ImplicitEuler,
}

impl Scheme {
    pub fn theta(self) -> f64 {
        match self {
            Scheme::CrankNicolson => 0.5,
            Scheme::ImplicitEuler => 1.0,
        }
    }

    pub fn from_theta(theta: f64) -> Result<Self> {
        if theta == 0.5 {
            Ok(Scheme::CrankNicolson)
        } else if theta == 1.0 {
            Ok(Scheme::ImplicitEuler)
        } else {
            Err(Error::param("theta", format!("must be 0.5 or 1, got {theta}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub scheme: Scheme,
    pub dt: f64,
}

impl Trajectory {
    /// A trajectory that stays at `state` (used for frozen-time checks).
    pub fn constant(state: DVector<f64>, t_final: f64, steps: usize, scheme: Scheme) -> Self {
        let dt = t_final / steps as f64;
        Trajectory {
            times: time_grid(t_final, steps),
            states: vec![state; steps + 1],
            scheme,
            dt,
        }
    }

    pub fn steps(&self) -> usize {
        self.states.len().saturating_sub(1)
    }

    pub fn t_final(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }

    pub fn initial(&self) -> &DVector<f64> {
        &self.states[0]
    }

    pub fn last(&self) -> &DVector<f64> {
        self.states.last().expect("non-empty trajectory")
    }

    /// Intermediate level `Φ^{n+θ} = θ Φⁿ + (1-θ) Φⁿ⁺¹` of a backward trajectory.
    pub fn adjoint_level(&self, n: usize) -> DVector<f64> {
        let th = self.scheme.theta();
        if th == 1.0 {
            self.states[n].clone()
        } else {
            &self.states[n] * th + &self.states[n + 1] * (1.0 - th)
        }
    }

    fn same_grid(&self, other: &Trajectory) -> bool {
        self.states.len() == other.states.len() && self.scheme == other.scheme && self.dt == other.dt
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,node_id,value")?;
        for (t, s) in self.times.iter().zip(&self.states) {
            for (i, v) in s.iter().enumerate() {
                writeln!(w, "{t},{i},{v}")?;
            }
        }
        Ok(())
    }

    pub fn summary(&self, sys: &DiscreteSystem) -> Result<TrajectorySummary> {
        let steps = self
            .times
            .iter()
            .zip(&self.states)
            .map(|(&t, s)| {
                Ok(StepNorm {
                    t,
                    norm_x2: norm_x2(sys, s)?,
                    max_abs: s.amax(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(TrajectorySummary {
            scheme: self.scheme,
            dt: self.dt,
            steps,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepNorm {
    pub t: f64,
    pub norm_x2: f64,
    pub max_abs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub scheme: Scheme,
    pub dt: f64,
    pub steps: Vec<StepNorm>,
}

pub fn time_grid(t_final: f64, steps: usize) -> Vec<f64> {
    let dt = t_final / steps as f64;
    (0..=steps)
        .map(|n| if n == steps { t_final } else { n as f64 * dt })
        .collect()
}

/// Boundary data sampled at the time nodes: `values[n][k]` is g(tₙ) at
/// boundary slot `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundarySignal {
    pub values: Vec<DVector<f64>>,
}

impl BoundarySignal {
    pub fn zeros(steps: usize, num_boundary: usize) -> Self {
        BoundarySignal {
            values: vec![DVector::zeros(num_boundary); steps + 1],
        }
    }

    pub fn constant(steps: usize, value: DVector<f64>) -> Self {
        BoundarySignal {
            values: vec![value; steps + 1],
        }
    }

    pub fn from_fn(sys: &DiscreteSystem, t_final: f64, steps: usize, f: impl Fn(f64, [f64; 2]) -> f64) -> Self {
        let mesh = &sys.mesh;
        BoundarySignal {
            values: time_grid(t_final, steps)
                .into_iter()
                .map(|t| {
                    DVector::from_iterator(
                        mesh.num_boundary_nodes(),
                        mesh.boundary_nodes.iter().map(|&i| f(t, mesh.nodes[i])),
                    )
                })
                .collect(),
        }
    }

    /// Boundary control realizing `sign · trace(Φ^{n+θ})` on every step of
    /// the backward trajectory `adj`. Crank–Nicolson samples sit on the
    /// time nodes; implicit Euler stores step `n` at the right endpoint tₙ₊₁.
    pub fn from_adjoint_trace(sys: &DiscreteSystem, adj: &Trajectory, sign: f64) -> Self {
        let tr = |s: &DVector<f64>| sys.trace(s) * sign;
        let values = match adj.scheme {
            Scheme::CrankNicolson => adj.states.iter().map(tr).collect(),
            Scheme::ImplicitEuler => std::iter::once(tr(&adj.states[0]))
                .chain(adj.states[..adj.steps()].iter().map(tr))
                .collect(),
        };
        BoundarySignal { values }
    }

    pub fn steps(&self) -> usize {
        self.values.len().saturating_sub(1)
    }

    pub fn num_boundary(&self) -> usize {
        self.values.first().map_or(0, |v| v.len())
    }

    /// `g^{n+θ}`.
    pub fn step_level(&self, n: usize, scheme: Scheme) -> DVector<f64> {
        match scheme {
            Scheme::ImplicitEuler => self.values[n + 1].clone(),
            Scheme::CrankNicolson => (&self.values[n] + &self.values[n + 1]) * 0.5,
        }
    }

    /// Discrete `L²(Σ_T)` norm squared, `Σ dt ∫_Γ |g^{n+θ}|² dσ`.
    pub fn l2_norm_sq(&self, sys: &DiscreteSystem, dt: f64, scheme: Scheme) -> f64 {
        (0..self.steps())
            .map(|n| dt * sys.surface_norm_sq(&self.step_level(n, scheme)))
            .sum()
    }

    /// The same signal on a grid with half the step: linear interpolation for
    /// node-sampled (Crank–Nicolson) data, piecewise constant per step for
    /// right-endpoint (implicit Euler) data.
    pub fn refined(&self, scheme: Scheme) -> Self {
        let mut values = Vec::with_capacity(2 * self.steps() + 1);
        values.push(self.values[0].clone());
        for n in 0..self.steps() {
            let mid = match scheme {
                Scheme::CrankNicolson => (&self.values[n] + &self.values[n + 1]) * 0.5,
                Scheme::ImplicitEuler => self.values[n + 1].clone(),
            };
            values.push(mid);
            values.push(self.values[n + 1].clone());
        }
        BoundarySignal { values }
    }

    pub fn write_csv<W: Write>(&self, mut w: W, t_final: f64, sys: &DiscreteSystem) -> Result<()> {
        writeln!(w, "t,boundary_node,g")?;
        for (t, g) in time_grid(t_final, self.steps()).iter().zip(&self.values) {
            for (k, v) in g.iter().enumerate() {
                writeln!(w, "{t},{},{v}", sys.mesh.boundary_nodes[k])?;
            }
        }
        Ok(())
    }
}

/// A factorized θ-step on a fixed uniform grid. The factorization is
/// computed once and shared by forward and backward sweeps.
#[derive(Debug, Clone)]
pub struct Propagator<'a> {
    sys: &'a DiscreteSystem,
    scheme: Scheme,
    t_final: f64,
    steps: usize,
    dt: f64,
    lhs: EnvelopeCholesky,
    explicit: CsrMatrix,
}

impl<'a> Propagator<'a> {
    pub fn new(sys: &'a DiscreteSystem, t_final: f64, steps: usize, scheme: Scheme) -> Result<Self> {
        if !(t_final.is_finite() && t_final > 0.0) {
            return Err(Error::param("T", format!("must be positive, got {t_final}")));
        }
        if steps == 0 {
            return Err(Error::param("nt", "must be at least 1"));
        }
        let dt = t_final / steps as f64;
        let th = scheme.theta();
        let lhs = EnvelopeCholesky::factor(&sys.mass.linear_combination(1.0, &sys.stiffness, th * dt))?;
        let explicit = sys.mass.linear_combination(1.0, &sys.stiffness, -(1.0 - th) * dt);
        Ok(Propagator {
            sys,
            scheme,
            t_final,
            steps,
            dt,
            lhs,
            explicit,
        })
    }

    pub fn system(&self) -> &'a DiscreteSystem {
        self.sys
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    fn check_signal(&self, g: &BoundarySignal) -> Result<()> {
        check_len("boundary signal (time samples)", self.steps + 1, g.values.len())?;
        check_len("boundary signal (nodes)", self.sys.num_boundary(), g.num_boundary())
    }

    fn forward_step(&self, u: &DVector<f64>, g: &BoundarySignal, n: usize) -> DVector<f64> {
        let mut rhs = self.explicit.mul_vec(u);
        let level = g.step_level(n, self.scheme);
        if level.iter().any(|&v| v != 0.0) {
            rhs += self.sys.injection.mul_vec(&level) * self.dt;
        }
        self.lhs.solve_in_place(&mut rhs);
        rhs
    }

    pub fn forward(&self, u0: &DVector<f64>, g: &BoundarySignal) -> Result<Trajectory> {
        check_len("initial state", self.sys.dim(), u0.len())?;
        self.check_signal(g)?;
        let mut states = Vec::with_capacity(self.steps + 1);
        states.push(u0.clone());
        for n in 0..self.steps {
            let next = self.forward_step(&states[n], g, n);
            states.push(next);
        }
        Ok(Trajectory {
            times: time_grid(self.t_final, self.steps),
            states,
            scheme: self.scheme,
            dt: self.dt,
        })
    }

    /// Final state only, without storing the trajectory.
    pub fn forward_final(&self, u0: &DVector<f64>, g: &BoundarySignal) -> Result<DVector<f64>> {
        check_len("initial state", self.sys.dim(), u0.len())?;
        self.check_signal(g)?;
        let mut u = u0.clone();
        for n in 0..self.steps {
            u = self.forward_step(&u, g, n);
        }
        Ok(u)
    }

    /// Free evolution `e^{TA} U₀` of the discrete scheme.
    pub fn free_final(&self, u0: &DVector<f64>) -> Result<DVector<f64>> {
        self.forward_final(u0, &BoundarySignal::zeros(self.steps, self.sys.num_boundary()))
    }

    pub fn backward(&self, phi_t: &DVector<f64>) -> Result<Trajectory> {
        check_len("final datum", self.sys.dim(), phi_t.len())?;
        let mut states = vec![DVector::zeros(self.sys.dim()); self.steps + 1];
        states[self.steps] = phi_t.clone();
        for n in (0..self.steps).rev() {
            let mut level = self.sys.apply_mass(&states[n + 1]);
            self.lhs.solve_in_place(&mut level);
            states[n] = self.sys.apply_mass_inverse(&self.explicit.mul_vec(&level));
        }
        Ok(Trajectory {
            times: time_grid(self.t_final, self.steps),
            states,
            scheme: self.scheme,
            dt: self.dt,
        })
    }
}

pub fn solve_forward(
    sys: &DiscreteSystem,
    u0: &DVector<f64>,
    g: &BoundarySignal,
    t_final: f64,
    steps: usize,
    scheme: Scheme,
) -> Result<Trajectory> {
    Propagator::new(sys, t_final, steps, scheme)?.forward(u0, g)
}

pub fn solve_backward(
    sys: &DiscreteSystem,
    phi_t: &DVector<f64>,
    t_final: f64,
    steps: usize,
    scheme: Scheme,
) -> Result<Trajectory> {
    Propagator::new(sys, t_final, steps, scheme)?.backward(phi_t)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualityResidual {
    pub absolute: f64,
    /// Sum of magnitudes of the terms in the identity.
    pub scale: f64,
}

impl DualityResidual {
    pub fn relative(&self) -> f64 {
        if self.scale == 0.0 {
            self.absolute
        } else {
            self.absolute / self.scale
        }
    }
}

/// Residual of `⟨Uᴺ,Φᴺ⟩_M - ⟨U⁰,Φ⁰⟩_M = Σ dt (g^{n+θ})ᵀ Bᵀ Φ^{n+θ}`.
pub fn duality_residual(
    sys: &DiscreteSystem,
    fwd: &Trajectory,
    adj: &Trajectory,
    g: &BoundarySignal,
) -> Result<DualityResidual> {
    if !fwd.same_grid(adj) {
        return Err(Error::Mismatch(format!(
            "forward has {} states ({:?}, dt {}), adjoint has {} ({:?}, dt {})",
            fwd.states.len(),
            fwd.scheme,
            fwd.dt,
            adj.states.len(),
            adj.scheme,
            adj.dt
        )));
    }
    check_len("boundary signal (time samples)", fwd.states.len(), g.values.len())?;
    let end = sys.apply_mass(fwd.last()).dot(adj.last());
    let start = sys.apply_mass(fwd.initial()).dot(adj.initial());
    let mut source = 0.0;
    let mut source_abs = 0.0;
    for n in 0..fwd.steps() {
        let term = fwd.dt * sys.injection.transpose_mul_vec(&adj.adjoint_level(n)).dot(&g.step_level(n, fwd.scheme));
        source += term;
        source_abs += term.abs();
    }
    Ok(DualityResidual {
        absolute: (end - start - source).abs(),
        scale: end.abs() + start.abs() + source_abs,
    })
}

/// Exact semigroup `e^{τA}` of the semi-discrete system, from the symmetric
/// eigendecomposition of `M^{-1/2} K M^{-1/2}`.
#[derive(Debug, Clone)]
pub struct DenseSemigroup {
    sqrt_mass: DVector<f64>,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
}

impl DenseSemigroup {
    pub fn new(sys: &DiscreteSystem) -> Result<Self> {
        let n = sys.dim();
        if n > DENSE_MAX_DIM {
            return Err(Error::TooLarge {
                dim: n,
                max: DENSE_MAX_DIM,
            });
        }
        let sqrt_mass = sys.mass_diagonal().map(f64::sqrt);
        let k = sys.stiffness.to_dense();
        let sym = DMatrix::from_fn(n, n, |i, j| k[(i, j)] / (sqrt_mass[i] * sqrt_mass[j]));
        let eig = sym.symmetric_eigen();
        Ok(DenseSemigroup {
            sqrt_mass,
            eigenvalues: eig.eigenvalues,
            eigenvectors: eig.eigenvectors,
        })
    }

    /// Generalized eigenvalues of `(K, M)`, unsorted.
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn apply(&self, tau: f64, v: &DVector<f64>) -> DVector<f64> {
        let w = v.component_mul(&self.sqrt_mass);
        let mut c = self.eigenvectors.tr_mul(&w);
        for (ci, &l) in c.iter_mut().zip(self.eigenvalues.iter()) {
            *ci *= (-tau * l).exp();
        }
        (&self.eigenvectors * c).component_div(&self.sqrt_mass)
    }
}

/// Mild solution at time `T` by the variation-of-constants formula with the
/// dense exponential and midpoint quadrature over `steps` subintervals.
pub fn duhamel_final(
    sys: &DiscreteSystem,
    u0: &DVector<f64>,
    g: &BoundarySignal,
    t_final: f64,
    steps: usize,
) -> Result<DVector<f64>> {
    check_len("initial state", sys.dim(), u0.len())?;
    if t_final == 0.0 {
        return Ok(u0.clone());
    }
    if !(t_final.is_finite() && t_final > 0.0) {
        return Err(Error::param("T", format!("must be nonnegative, got {t_final}")));
    }
    if steps == 0 {
        return Err(Error::param("nt", "must be at least 1"));
    }
    check_len("boundary signal (time samples)", steps + 1, g.values.len())?;
    let semigroup = DenseSemigroup::new(sys)?;
    let dt = t_final / steps as f64;
    let mut u = semigroup.apply(t_final, u0);
    for n in 0..steps {
        let mid = (&g.values[n] + &g.values[n + 1]) * 0.5;
        if mid.iter().all(|&v| v == 0.0) {
            continue;
        }
        let s = (n as f64 + 0.5) * dt;
        let forcing = sys.apply_mass_inverse(&sys.injection.mul_vec(&mid));
        u += semigroup.apply(t_final - s, &forcing) * dt;
    }
    Ok(u)
}

/// Two estimates of `γ ∂_ν φ` along a backward trajectory.
#[derive(Debug, Clone)]
pub struct NormalFlux {
    /// From the discrete Green formula: `(γ K_bulk φ - M_bulk ∂ₜφ)` on Γ per unit σ.
    pub variational: Vec<DVector<f64>>,
    /// From the boundary equation: `∂ₜφ_Γ + δ Δ_Γ φ_Γ - β φ_Γ`.
    pub equation: Vec<DVector<f64>>,
    /// `L²(Σ_T)` distance between the two over interior time nodes.
    pub discrepancy: f64,
    pub relative_discrepancy: f64,
}

/// Discrete time derivative: centered inside, one-sided at the ends.
pub fn time_derivative(traj: &Trajectory, n: usize) -> DVector<f64> {
    let s = &traj.states;
    let last = traj.steps();
    if n == 0 {
        (&s[1] - &s[0]) / traj.dt
    } else if n == last {
        (&s[last] - &s[last - 1]) / traj.dt
    } else {
        (&s[n + 1] - &s[n - 1]) / (2.0 * traj.dt)
    }
}

pub fn recover_normal_flux(sys: &DiscreteSystem, traj: &Trajectory) -> Result<NormalFlux> {
    if traj.states.len() < 3 {
        return Err(Error::param("trajectory", "at least 3 time levels are needed for a centered difference"));
    }
    check_len("trajectory state", sys.dim(), traj.states[0].len())?;
    let mut variational = Vec::with_capacity(traj.states.len());
    let mut equation = Vec::with_capacity(traj.states.len());
    for (n, phi) in traj.states.iter().enumerate() {
        let dphi = time_derivative(traj, n);
        let kb = sys.bulk_stiffness.mul_vec(phi);
        let phi_g = sys.trace(phi);
        let dphi_g = sys.trace(&dphi);
        let var = DVector::from_iterator(
            sys.num_boundary(),
            sys.mesh.boundary_nodes.iter().enumerate().map(|(k, &i)| {
                (sys.gamma * kb[i] - sys.bulk_mass[i] * dphi[i]) / sys.surface_mass[k]
            }),
        );
        let mut eq = dphi_g - phi_g.component_mul(&sys.beta);
        if sys.delta > 0.0 {
            eq += sys.laplace_beltrami(&phi_g) * sys.delta;
        }
        variational.push(var);
        equation.push(eq);
    }
    let (mut diff, mut norm) = (0.0, 0.0);
    for n in 1..traj.steps() {
        diff += traj.dt * sys.surface_norm_sq(&(&variational[n] - &equation[n]));
        norm += traj.dt * sys.surface_norm_sq(&equation[n]);
    }
    let discrepancy = diff.sqrt();
    Ok(NormalFlux {
        variational,
        equation,
        discrepancy,
        relative_discrepancy: if norm > 0.0 { discrepancy / norm.sqrt() } else { discrepancy },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::assemble;
    use crate::mesh::build_interval_mesh;

    fn interval(n: usize, beta: f64) -> DiscreteSystem {
        let m = build_interval_mesh(0.0, 1.0, n).unwrap();
        assemble(&m, 1.0, 0.0, &DVector::from_element(2, beta)).unwrap()
    }

    #[test]
    fn zero_data_stay_zero() {
        let sys = interval(8, 1.0);
        let g = BoundarySignal::zeros(10, 2);
        let tr = solve_forward(&sys, &DVector::zeros(9), &g, 1.0, 10, Scheme::CrankNicolson).unwrap();
        assert!(tr.states.iter().all(|s| s.amax() == 0.0));
        let adj = solve_backward(&sys, &DVector::zeros(9), 1.0, 10, Scheme::ImplicitEuler).unwrap();
        assert!(adj.states.iter().all(|s| s.amax() == 0.0));
        assert_eq!(tr.times.len(), tr.states.len());
    }

    #[test]
    fn constants_preserved_without_reaction() {
        let sys = interval(8, 0.0);
        let c = DVector::from_element(9, 0.75);
        for scheme in [Scheme::CrankNicolson, Scheme::ImplicitEuler] {
            let tr = solve_forward(&sys, &c, &BoundarySignal::zeros(16, 2), 2.0, 16, scheme).unwrap();
            for s in &tr.states {
                assert!((s - &c).amax() <= 1e-15, "{s}");
            }
        }
    }

    #[test]
    fn theta_validation() {
        assert_eq!(Scheme::from_theta(0.5).unwrap(), Scheme::CrankNicolson);
        assert_eq!(Scheme::from_theta(1.0).unwrap(), Scheme::ImplicitEuler);
        assert!(Scheme::from_theta(0.7).is_err());
    }

    #[test]
    fn rejects_bad_grid_and_dims() {
        let sys = interval(4, 1.0);
        let g = BoundarySignal::zeros(4, 2);
        assert!(solve_forward(&sys, &DVector::zeros(5), &g, 0.0, 4, Scheme::ImplicitEuler).is_err());
        assert!(solve_forward(&sys, &DVector::zeros(5), &g, 1.0, 0, Scheme::ImplicitEuler).is_err());
        assert!(solve_forward(&sys, &DVector::zeros(4), &g, 1.0, 4, Scheme::ImplicitEuler).is_err());
        assert!(solve_forward(&sys, &DVector::zeros(5), &g, 1.0, 5, Scheme::ImplicitEuler).is_err());
    }

    #[test]
    fn adjoint_level_matches_implicit_substep() {
        let sys = interval(6, 1.0);
        let p = Propagator::new(&sys, 1.0, 5, Scheme::CrankNicolson).unwrap();
        let phi_t = DVector::from_fn(7, |i, _| (i as f64 * 0.9).cos());
        let adj = p.backward(&phi_t).unwrap();
        let lhs = sys.mass.linear_combination(1.0, &sys.stiffness, 0.5 * p.dt());
        let direct = EnvelopeCholesky::factor(&lhs).unwrap().solve(&sys.apply_mass(&phi_t));
        assert!((adj.adjoint_level(4) - direct).amax() < 1e-14);
    }

    #[test]
    fn duhamel_zero_horizon_is_identity() {
        let sys = interval(4, 1.0);
        let u0 = DVector::from_fn(5, |i, _| i as f64);
        let out = duhamel_final(&sys, &u0, &BoundarySignal::zeros(3, 2), 0.0, 3).unwrap();
        assert_eq!(out, u0);
    }

    #[test]
    fn duhamel_rejects_large_systems() {
        let sys = interval(250, 1.0);
        let err = duhamel_final(&sys, &DVector::zeros(251), &BoundarySignal::zeros(2, 2), 1.0, 2);
        assert!(matches!(err, Err(Error::TooLarge { .. })));
    }

    #[test]
    fn duality_rejects_mismatched_steps() {
        let sys = interval(4, 1.0);
        let fwd = solve_forward(&sys, &DVector::zeros(5), &BoundarySignal::zeros(8, 2), 1.0, 8, Scheme::ImplicitEuler).unwrap();
        let adj = solve_backward(&sys, &DVector::zeros(5), 1.0, 4, Scheme::ImplicitEuler).unwrap();
        assert!(matches!(
            duality_residual(&sys, &fwd, &adj, &BoundarySignal::zeros(8, 2)),
            Err(Error::Mismatch(_))
        ));
    }

    #[test]
    fn steady_linear_profile_flux() {
        let sys = interval(2, 0.0);
        let phi = DVector::from_vec(vec![0.0, 0.5, 1.0]);
        let tr = Trajectory::constant(phi, 1.0, 4, Scheme::ImplicitEuler);
        let flux = recover_normal_flux(&sys, &tr).unwrap();
        for v in &flux.variational {
            assert_eq!(v[1], 1.0);
            assert_eq!(v[0], -1.0);
        }
    }

    #[test]
    fn flux_needs_three_levels() {
        let sys = interval(2, 0.0);
        let tr = Trajectory::constant(DVector::zeros(3), 1.0, 1, Scheme::ImplicitEuler);
        assert!(recover_normal_flux(&sys, &tr).is_err());
    }

    #[test]
    fn signal_refinement_preserves_levels() {
        let g = BoundarySignal {
            values: vec![DVector::from_element(1, 0.0), DVector::from_element(1, 2.0), DVector::from_element(1, 4.0)],
        };
        let r = g.refined(Scheme::CrankNicolson);
        assert_eq!(r.values.iter().map(|v| v[0]).collect::<Vec<_>>(), vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        let r = g.refined(Scheme::ImplicitEuler);
        assert_eq!(r.values.iter().map(|v| v[0]).collect::<Vec<_>>(), vec![0.0, 2.0, 2.0, 4.0, 4.0]);
    }
}
