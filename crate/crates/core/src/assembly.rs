//! Discrete bulk–surface operators.
//!
//! Unknowns are trace-coupled: one degree of freedom per bulk node, and the
//! boundary nodes carry both the bulk and the surface measure. With linear
//! Lagrange elements and lumped mass,
//!
//! * `M = M_bulk + M_Γ` (diagonal) is the discrete inner product of L²(Ω)×L²(Γ),
//! * `K = γ K_bulk + δ K_Γ + M_Γ diag(β)` is the energy form,
//! * `B = Pᵀ M_Γ` injects boundary data `g` into the surface equation.
//!
//! The generator of the semi-discrete flow is `A = -M⁻¹K`.

use std::io::Write;

use nalgebra::DVector;

use crate::error::{check_len, Error, Result};
use crate::mesh::BulkSurfaceMesh;
use crate::sparse::{CsrMatrix, EnvelopeCholesky};

pub const COERCIVITY_TOL: f64 = 1e-10;
pub const COERCIVITY_MAX_ITER: usize = 10_000;

/// A bulk field and a boundary field.
#[derive(Debug, Clone, PartialEq)]
pub struct StatePair {
    pub bulk: DVector<f64>,
    pub surface: DVector<f64>,
}

impl StatePair {
    pub fn new(mesh: &BulkSurfaceMesh, bulk: DVector<f64>, surface: DVector<f64>) -> Result<Self> {
        check_len("state pair bulk", mesh.num_nodes(), bulk.len())?;
        check_len("state pair surface", mesh.num_boundary_nodes(), surface.len())?;
        Ok(StatePair { bulk, surface })
    }

    /// The pair whose surface part is the trace of `bulk`.
    pub fn from_trace(mesh: &BulkSurfaceMesh, bulk: DVector<f64>) -> Result<Self> {
        let surface = trace(mesh, &bulk)?;
        Self::new(mesh, bulk, surface)
    }

    /// Coupled dof vector: bulk values inside, surface values on boundary nodes.
    pub fn to_coupled(&self, mesh: &BulkSurfaceMesh) -> DVector<f64> {
        let mut v = self.bulk.clone();
        for (k, &i) in mesh.boundary_nodes.iter().enumerate() {
            v[i] = self.surface[k];
        }
        v
    }

    pub fn is_trace_coupled(&self, mesh: &BulkSurfaceMesh) -> bool {
        mesh.boundary_nodes
            .iter()
            .enumerate()
            .all(|(k, &i)| (self.bulk[i] - self.surface[k]).abs() <= 1e-14)
    }
}

/// Restriction of a bulk field to the boundary nodes.
pub fn trace(mesh: &BulkSurfaceMesh, bulk: &DVector<f64>) -> Result<DVector<f64>> {
    check_len("trace", mesh.num_nodes(), bulk.len())?;
    Ok(DVector::from_iterator(
        mesh.num_boundary_nodes(),
        mesh.boundary_nodes.iter().map(|&i| bulk[i]),
    ))
}

#[derive(Debug, Clone)]
pub struct DiscreteSystem {
    pub mesh: BulkSurfaceMesh,
    pub gamma: f64,
    pub delta: f64,
    /// β at each boundary node.
    pub beta: DVector<f64>,
    pub beta0: f64,
    /// 𝕏² mass, diagonal.
    pub mass: CsrMatrix,
    /// The form 𝔼_δ.
    pub stiffness: CsrMatrix,
    /// `n × n_Γ` boundary injection.
    pub injection: CsrMatrix,
    pub bulk_mass: DVector<f64>,
    pub bulk_stiffness: CsrMatrix,
    /// σ-weights per boundary node.
    pub surface_mass: DVector<f64>,
    /// Arclength stiffness of Γ in boundary numbering (`n_Γ × n_Γ`); empty in 1D.
    pub surface_stiffness: CsrMatrix,
    mass_diag: DVector<f64>,
}

impl DiscreteSystem {
    pub fn dim(&self) -> usize {
        self.mesh.num_nodes()
    }

    pub fn num_boundary(&self) -> usize {
        self.mesh.num_boundary_nodes()
    }

    pub fn mass_diagonal(&self) -> &DVector<f64> {
        &self.mass_diag
    }

    pub fn apply_mass(&self, x: &DVector<f64>) -> DVector<f64> {
        x.component_mul(&self.mass_diag)
    }

    pub fn apply_mass_inverse(&self, x: &DVector<f64>) -> DVector<f64> {
        x.component_div(&self.mass_diag)
    }

    /// `A x = -M⁻¹ K x`.
    pub fn apply_generator(&self, x: &DVector<f64>) -> DVector<f64> {
        -self.apply_mass_inverse(&self.stiffness.mul_vec(x))
    }

    /// Discrete Laplace–Beltrami `Δ_Γ u = -M_Γ⁻¹ K_Γ u` on a boundary field.
    pub fn laplace_beltrami(&self, u: &DVector<f64>) -> DVector<f64> {
        -self.surface_stiffness.mul_vec(u).component_div(&self.surface_mass)
    }

    pub fn trace(&self, x: &DVector<f64>) -> DVector<f64> {
        trace(&self.mesh, x).expect("state dimension matches mesh")
    }

    /// Whether the lower bound β ≥ β₀ > 0 holds.
    pub fn is_coercive_boundary(&self) -> bool {
        self.beta0 > 0.0
    }

    /// Quadrature `∫_Γ f² dσ` of a boundary field.
    pub fn surface_norm_sq(&self, f: &DVector<f64>) -> f64 {
        f.iter().zip(self.surface_mass.iter()).map(|(v, m)| m * v * v).sum()
    }

    pub fn write_matrices<W: Write>(&self, mut w: W) -> Result<()> {
        for (name, m) in [
            ("mass", &self.mass),
            ("stiffness", &self.stiffness),
            ("injection", &self.injection),
        ] {
            writeln!(w, "%% {name}")?;
            m.write_coordinate(&mut w)?;
        }
        Ok(())
    }
}

/// Nodal β from a closure evaluated at boundary node coordinates.
pub fn beta_from_fn(mesh: &BulkSurfaceMesh, f: impl Fn([f64; 2]) -> f64) -> DVector<f64> {
    DVector::from_iterator(
        mesh.num_boundary_nodes(),
        mesh.boundary_nodes.iter().map(|&i| f(mesh.nodes[i])),
    )
}

pub fn assemble(mesh: &BulkSurfaceMesh, gamma: f64, delta: f64, beta: &DVector<f64>) -> Result<DiscreteSystem> {
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::param("gamma", format!("must be positive, got {gamma}")));
    }
    if !(delta.is_finite() && delta >= 0.0) {
        return Err(Error::param("delta", format!("must be nonnegative, got {delta}")));
    }
    check_len("beta", mesh.num_boundary_nodes(), beta.len())?;
    if let Some(b) = beta.iter().find(|b| !(b.is_finite() && **b >= 0.0)) {
        return Err(Error::param("beta", format!("must be nonnegative at every boundary node, got {b}")));
    }

    let n = mesh.num_nodes();
    let nb = mesh.num_boundary_nodes();

    let mut bulk_mass = DVector::zeros(n);
    let mut kb = Vec::with_capacity(mesh.cells.len() * 9);
    for (c, cell) in mesh.cells.iter().enumerate() {
        let measure = mesh.cell_measure(c);
        let share = measure / cell.len() as f64;
        for &v in cell {
            bulk_mass[v] += share;
        }
        let grads = shape_gradients(mesh, c);
        for (a, &va) in cell.iter().enumerate() {
            for (b, &vb) in cell.iter().enumerate() {
                let k = measure * (grads[a][0] * grads[b][0] + grads[a][1] * grads[b][1]);
                kb.push((va, vb, k));
            }
        }
    }
    let bulk_stiffness = CsrMatrix::from_triplets(n, n, &kb);

    let surface_mass = DVector::from_vec(mesh.boundary_weights());
    let mut ks = Vec::with_capacity(4 * mesh.boundary_edges.len());
    for &e in &mesh.boundary_edges {
        let inv = 1.0 / mesh.edge_length(e);
        let (p, q) = (
            mesh.boundary_slot(e[0]).expect("edge on boundary"),
            mesh.boundary_slot(e[1]).expect("edge on boundary"),
        );
        ks.extend([(p, p, inv), (q, q, inv), (p, q, -inv), (q, p, -inv)]);
    }
    let surface_stiffness = CsrMatrix::from_triplets(nb, nb, &ks);

    let mut mass_diag = bulk_mass.clone();
    let mut k = Vec::with_capacity(kb.len() + ks.len() + nb);
    k.extend(kb.iter().map(|&(i, j, v)| (i, j, gamma * v)));
    if delta > 0.0 {
        k.extend(
            surface_stiffness
                .triplets()
                .map(|(p, q, v)| (mesh.boundary_nodes[p], mesh.boundary_nodes[q], delta * v)),
        );
    }
    let mut inj = Vec::with_capacity(nb);
    for (p, &i) in mesh.boundary_nodes.iter().enumerate() {
        mass_diag[i] += surface_mass[p];
        k.push((i, i, surface_mass[p] * beta[p]));
        inj.push((i, p, surface_mass[p]));
    }

    let beta0 = beta.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(DiscreteSystem {
        mesh: mesh.clone(),
        gamma,
        delta,
        beta: beta.clone(),
        beta0,
        mass: CsrMatrix::from_diagonal(&mass_diag),
        stiffness: CsrMatrix::from_triplets(n, n, &k),
        injection: CsrMatrix::from_triplets(n, nb, &inj),
        bulk_mass,
        bulk_stiffness,
        surface_mass,
        surface_stiffness,
        mass_diag,
    })
}

/// Gradients of the linear shape functions of cell `c`, constant per cell.
pub fn shape_gradients(mesh: &BulkSurfaceMesh, c: usize) -> Vec<[f64; 2]> {
    let cell = &mesh.cells[c];
    match mesh.dim {
        1 => {
            let (x0, x1) = (mesh.nodes[cell[0]][0], mesh.nodes[cell[1]][0]);
            let inv = 1.0 / (x1 - x0);
            vec![[-inv, 0.0], [inv, 0.0]]
        }
        _ => {
            let p: Vec<[f64; 2]> = cell.iter().map(|&v| mesh.nodes[v]).collect();
            let two_area = 2.0 * crate::mesh::triangle_area(p[0], p[1], p[2]);
            (0..3)
                .map(|a| {
                    let (j, k) = ((a + 1) % 3, (a + 2) % 3);
                    [(p[j][1] - p[k][1]) / two_area, (p[k][0] - p[j][0]) / two_area]
                })
                .collect()
        }
    }
}

/// Gradient of a piecewise-linear field on each cell.
pub fn cell_gradients(mesh: &BulkSurfaceMesh, values: &DVector<f64>) -> Vec<[f64; 2]> {
    (0..mesh.cells.len())
        .map(|c| {
            shape_gradients(mesh, c)
                .iter()
                .zip(&mesh.cells[c])
                .fold([0.0, 0.0], |acc, (g, &v)| [acc[0] + g[0] * values[v], acc[1] + g[1] * values[v]])
        })
        .collect()
}

pub fn inner_x2(sys: &DiscreteSystem, u: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
    check_len("inner product (left)", sys.dim(), u.len())?;
    check_len("inner product (right)", sys.dim(), v.len())?;
    Ok(u.iter()
        .zip(v.iter())
        .zip(sys.mass_diag.iter())
        .map(|((a, b), m)| a * m * b)
        .sum())
}

pub fn norm_x2(sys: &DiscreteSystem, u: &DVector<f64>) -> Result<f64> {
    Ok(inner_x2(sys, u, u)?.sqrt())
}

#[derive(Debug, Clone)]
pub struct CoercivityEstimate {
    /// Smallest generalized eigenvalue of `(K, M)`.
    pub value: f64,
    /// Corresponding eigenvector, unit in the 𝕏² norm.
    pub eigenvector: DVector<f64>,
    pub iterations: usize,
}

/// Inverse power iteration for the smallest eigenvalue of `K x = c M x`.
pub fn estimate_coercivity(sys: &DiscreteSystem) -> Result<CoercivityEstimate> {
    if !sys.is_coercive_boundary() {
        return Err(Error::param(
            "beta0",
            format!("coercivity needs beta >= beta0 > 0, got beta0 = {}", sys.beta0),
        ));
    }
    let chol = EnvelopeCholesky::factor(&sys.stiffness)?;
    let mut x = DVector::from_element(sys.dim(), 1.0);
    x /= norm_x2(sys, &x)?;
    for it in 1..=COERCIVITY_MAX_ITER {
        let mut y = chol.solve(&sys.apply_mass(&x));
        y /= norm_x2(sys, &y)?;
        let ky = sys.stiffness.mul_vec(&y);
        let rho = y.dot(&ky);
        // residual measured in the M⁻¹ norm, the dual of the 𝕏² norm
        let r = &ky - sys.apply_mass(&y) * rho;
        let res = r.component_div(&sys.mass_diag).dot(&r).sqrt();
        x = y;
        if res <= COERCIVITY_TOL * rho {
            return Ok(CoercivityEstimate {
                value: rho,
                eigenvector: x,
                iterations: it,
            });
        }
    }
    Err(Error::NoConvergence {
        method: "inverse power iteration",
        iterations: COERCIVITY_MAX_ITER,
    })
}
