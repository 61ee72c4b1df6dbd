//! Model domains with explicit boundary structure, and the auxiliary field η
//! used to build Carleman weights.
//!
//! A [`BulkSurfaceMesh`] carries the bulk complex (segments in 1D, triangles in
//! 2D) together with the boundary curve: the boundary node list, the boundary
//! edges (empty in 1D), outward unit normals and the lumped surface measure σ
//! at each boundary node. In 1D σ is the counting measure on the two
//! endpoints.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const NORMAL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Geometry {
    Interval { a: f64, b: f64 },
    Rectangle { lx: f64, ly: f64 },
    Disk { radius: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BulkSurfaceMesh {
    pub dim: usize,
    pub geometry: Geometry,
    /// Node coordinates; the second component is 0 in 1D.
    pub nodes: Vec<[f64; 2]>,
    /// Segments `[i, j]` in 1D, triangles `[i, j, k]` in 2D.
    pub cells: Vec<Vec<usize>>,
    /// Boundary nodes, counterclockwise along Γ in 2D.
    pub boundary_nodes: Vec<usize>,
    pub boundary_edges: Vec<[usize; 2]>,
    /// Outward unit normal at each boundary node (same order as `boundary_nodes`).
    pub outward_normals: Vec<[f64; 2]>,
    pub h: f64,
    boundary_slot: Vec<Option<usize>>,
}

impl BulkSurfaceMesh {
    fn finish(
        dim: usize,
        geometry: Geometry,
        nodes: Vec<[f64; 2]>,
        cells: Vec<Vec<usize>>,
        boundary_nodes: Vec<usize>,
        boundary_edges: Vec<[usize; 2]>,
        outward_normals: Vec<[f64; 2]>,
    ) -> Result<Self> {
        let mut boundary_slot = vec![None; nodes.len()];
        for (k, &i) in boundary_nodes.iter().enumerate() {
            let slot = boundary_slot
                .get_mut(i)
                .ok_or_else(|| Error::InvalidMesh(format!("boundary node {i} out of range")))?;
            *slot = Some(k);
        }
        let mut mesh = BulkSurfaceMesh {
            dim,
            geometry,
            nodes,
            cells,
            boundary_nodes,
            boundary_edges,
            outward_normals,
            h: 0.0,
            boundary_slot,
        };
        mesh.h = (0..mesh.cells.len())
            .map(|c| mesh.cell_diameter(c))
            .fold(0.0, f64::max);
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_boundary_nodes(&self) -> usize {
        self.boundary_nodes.len()
    }

    /// Position of bulk node `node` in `boundary_nodes`, if it lies on Γ.
    pub fn boundary_slot(&self, node: usize) -> Option<usize> {
        self.boundary_slot[node]
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.boundary_slot[node].is_some()
    }

    pub fn interior_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_nodes()).filter(|&i| !self.is_boundary(i))
    }

    pub fn edge_length(&self, e: [usize; 2]) -> f64 {
        dist(self.nodes[e[0]], self.nodes[e[1]])
    }

    /// Length (1D) or area (2D) of a cell.
    pub fn cell_measure(&self, c: usize) -> f64 {
        let cell = &self.cells[c];
        match self.dim {
            1 => dist(self.nodes[cell[0]], self.nodes[cell[1]]),
            _ => triangle_area(self.nodes[cell[0]], self.nodes[cell[1]], self.nodes[cell[2]]).abs(),
        }
    }

    fn cell_diameter(&self, c: usize) -> f64 {
        let cell = &self.cells[c];
        let mut d = 0.0f64;
        for a in 0..cell.len() {
            for b in a + 1..cell.len() {
                d = d.max(dist(self.nodes[cell[a]], self.nodes[cell[b]]));
            }
        }
        d
    }

    /// Lumped surface measure at each boundary node: half of each adjacent
    /// edge length in 2D, unit mass per endpoint in 1D.
    pub fn boundary_weights(&self) -> Vec<f64> {
        if self.dim == 1 {
            return vec![1.0; self.num_boundary_nodes()];
        }
        let mut w = vec![0.0; self.num_boundary_nodes()];
        for &e in &self.boundary_edges {
            let half = 0.5 * self.edge_length(e);
            for v in e {
                w[self.boundary_slot[v].expect("edge endpoint on boundary")] += half;
            }
        }
        w
    }

    /// Total σ-measure of Γ.
    pub fn boundary_measure(&self) -> f64 {
        self.boundary_weights().iter().sum()
    }

    /// Boundary nodes where Γ is not smooth (rectangle corners).
    pub fn corner_nodes(&self) -> Vec<usize> {
        match self.geometry {
            Geometry::Rectangle { lx, ly } => self
                .boundary_nodes
                .iter()
                .copied()
                .filter(|&i| {
                    let [x, y] = self.nodes[i];
                    (x == 0.0 || x == lx) && (y == 0.0 || y == ly)
                })
                .collect(),
            _ => Vec::new(),
        }
    }

    /// Checks the structural invariants: valid trace map, boundary of the cell
    /// complex equal to the declared boundary, unit normals.
    pub fn validate(&self) -> Result<()> {
        let n = self.num_nodes();
        let bad = |msg: String| Err(Error::InvalidMesh(msg));
        if self.boundary_nodes.iter().any(|&i| i >= n) {
            return bad("boundary node index out of range".into());
        }
        if self.outward_normals.len() != self.boundary_nodes.len() {
            return bad("one normal per boundary node required".into());
        }
        for (k, nu) in self.outward_normals.iter().enumerate() {
            if ((nu[0] * nu[0] + nu[1] * nu[1]).sqrt() - 1.0).abs() > NORMAL_TOL {
                return bad(format!("normal at boundary slot {k} is not unit length"));
            }
        }
        let declared: BTreeSet<usize> = self.boundary_nodes.iter().copied().collect();
        if declared.len() != self.boundary_nodes.len() {
            return bad("duplicate boundary nodes".into());
        }
        match self.dim {
            1 => {
                if self.boundary_nodes.len() != 2 || !self.boundary_edges.is_empty() {
                    return bad("1D boundary must be exactly two nodes and no edges".into());
                }
                let mut count = vec![0usize; n];
                for c in &self.cells {
                    for &v in c {
                        count[v] += 1;
                    }
                }
                let topo: BTreeSet<usize> = (0..n).filter(|&i| count[i] == 1).collect();
                if topo != declared {
                    return bad("boundary nodes differ from the boundary of the cell complex".into());
                }
            }
            2 => {
                let mut faces = std::collections::BTreeMap::<[usize; 2], usize>::new();
                for c in &self.cells {
                    for k in 0..3 {
                        let (a, b) = (c[k], c[(k + 1) % 3]);
                        *faces.entry([a.min(b), a.max(b)]).or_default() += 1;
                    }
                }
                let topo: BTreeSet<[usize; 2]> = faces
                    .into_iter()
                    .filter(|&(_, k)| k == 1)
                    .map(|(e, _)| e)
                    .collect();
                let edges: BTreeSet<[usize; 2]> = self
                    .boundary_edges
                    .iter()
                    .map(|e| [e[0].min(e[1]), e[0].max(e[1])])
                    .collect();
                if topo != edges {
                    return bad("boundary edges differ from the boundary of the cell complex".into());
                }
                let edge_nodes: BTreeSet<usize> = edges.iter().flatten().copied().collect();
                if edge_nodes != declared {
                    return bad("boundary nodes differ from boundary edge endpoints".into());
                }
            }
            d => return bad(format!("unsupported dimension {d}")),
        }
        Ok(())
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer(w, &MeshExport::from(self))?;
        Ok(())
    }
}

/// JSON layout of an exported mesh.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MeshExport {
    pub dim: usize,
    pub nodes: Vec<Vec<f64>>,
    pub cells: Vec<Vec<usize>>,
    pub boundary_nodes: Vec<usize>,
    pub boundary_edges: Vec<[usize; 2]>,
    pub normals: Vec<Vec<f64>>,
}

impl From<&BulkSurfaceMesh> for MeshExport {
    fn from(m: &BulkSurfaceMesh) -> Self {
        let trim = |p: &[f64; 2]| p[..m.dim].to_vec();
        MeshExport {
            dim: m.dim,
            nodes: m.nodes.iter().map(trim).collect(),
            cells: m.cells.clone(),
            boundary_nodes: m.boundary_nodes.clone(),
            boundary_edges: m.boundary_edges.clone(),
            normals: m.outward_normals.iter().map(trim).collect(),
        }
    }
}

fn dist(p: [f64; 2], q: [f64; 2]) -> f64 {
    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
}

pub(crate) fn triangle_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

fn positive(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::param(name, format!("must be positive and finite, got {v}")))
    }
}

fn at_least(name: &'static str, v: usize, min: usize) -> Result<()> {
    if v >= min {
        Ok(())
    } else {
        Err(Error::param(name, format!("must be at least {min}, got {v}")))
    }
}

/// `n` equal cells on `[a, b]`.
pub fn build_interval_mesh(a: f64, b: f64, n: usize) -> Result<BulkSurfaceMesh> {
    if !(a.is_finite() && b.is_finite() && a < b) {
        return Err(Error::param("interval", format!("need a < b, got [{a}, {b}]")));
    }
    at_least("n", n, 2)?;
    let nodes = (0..=n)
        .map(|i| {
            let x = if i == n { b } else { a + (b - a) * i as f64 / n as f64 };
            [x, 0.0]
        })
        .collect();
    let cells = (0..n).map(|i| vec![i, i + 1]).collect();
    BulkSurfaceMesh::finish(
        1,
        Geometry::Interval { a, b },
        nodes,
        cells,
        vec![0, n],
        Vec::new(),
        vec![[-1.0, 0.0], [1.0, 0.0]],
    )
}

/// Structured triangulation of `[0, lx] × [0, ly]`, each square split along
/// its lower-left to upper-right diagonal.
pub fn build_rect_mesh(lx: f64, ly: f64, nx: usize, ny: usize) -> Result<BulkSurfaceMesh> {
    positive("lx", lx)?;
    positive("ly", ly)?;
    at_least("nx", nx, 2)?;
    at_least("ny", ny, 2)?;
    let id = |i: usize, j: usize| j * (nx + 1) + i;
    let coord = |k: usize, n: usize, l: f64| if k == n { l } else { l * k as f64 / n as f64 };

    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            nodes.push([coord(i, nx, lx), coord(j, ny, ly)]);
        }
    }
    let mut cells = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            cells.push(vec![a, b, c]);
            cells.push(vec![a, c, d]);
        }
    }

    // counterclockwise walk: bottom, right, top, left
    let mut ring = Vec::with_capacity(2 * (nx + ny));
    ring.extend((0..nx).map(|i| id(i, 0)));
    ring.extend((0..ny).map(|j| id(nx, j)));
    ring.extend((1..=nx).rev().map(|i| id(i, ny)));
    ring.extend((1..=ny).rev().map(|j| id(0, j)));
    let edges: Vec<[usize; 2]> = (0..ring.len())
        .map(|k| [ring[k], ring[(k + 1) % ring.len()]])
        .collect();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let normals = ring
        .iter()
        .map(|&v| {
            let [x, y] = nodes[v];
            let nx_ = if x == 0.0 { -1.0 } else if x == lx { 1.0 } else { 0.0 };
            let ny_ = if y == 0.0 { -1.0 } else if y == ly { 1.0 } else { 0.0 };
            if nx_ != 0.0 && ny_ != 0.0 {
                [nx_ * s, ny_ * s]
            } else {
                [nx_, ny_]
            }
        })
        .collect();
    BulkSurfaceMesh::finish(2, Geometry::Rectangle { lx, ly }, nodes, cells, ring, edges, normals)
}

/// Disk of radius `rho`: a center node and `nr` concentric rings of `ntheta`
/// nodes each. The outer ring is an inscribed polygon of Γ.
pub fn build_disk_mesh(rho: f64, nr: usize, ntheta: usize) -> Result<BulkSurfaceMesh> {
    positive("rho", rho)?;
    at_least("nr", nr, 2)?;
    at_least("ntheta", ntheta, 8)?;
    let id = |k: usize, j: usize| 1 + (k - 1) * ntheta + (j % ntheta);
    let mut nodes = vec![[0.0, 0.0]];
    for k in 1..=nr {
        let r = rho * k as f64 / nr as f64;
        for j in 0..ntheta {
            let phi = 2.0 * PI * j as f64 / ntheta as f64;
            nodes.push([r * phi.cos(), r * phi.sin()]);
        }
    }
    let mut cells = Vec::with_capacity(ntheta * (2 * nr - 1));
    for j in 0..ntheta {
        cells.push(vec![0, id(1, j), id(1, j + 1)]);
    }
    for k in 1..nr {
        for j in 0..ntheta {
            let (a, b, c, d) = (id(k, j), id(k, j + 1), id(k + 1, j + 1), id(k + 1, j));
            cells.push(vec![a, d, c]);
            cells.push(vec![a, c, b]);
        }
    }
    let ring: Vec<usize> = (0..ntheta).map(|j| id(nr, j)).collect();
    let edges = (0..ntheta).map(|j| [id(nr, j), id(nr, j + 1)]).collect();
    let normals = (0..ntheta)
        .map(|j| {
            let phi = 2.0 * PI * j as f64 / ntheta as f64;
            [phi.cos(), phi.sin()]
        })
        .collect();
    BulkSurfaceMesh::finish(2, Geometry::Disk { radius: rho }, nodes, cells, ring, edges, normals)
}

/// The field η: positive inside, zero on Γ, with negative outward normal
/// derivative (except at rectangle corners, where it vanishes).
#[derive(Debug, Clone, PartialEq)]
pub struct EtaField {
    pub values: Vec<f64>,
    pub gradient: Vec<[f64; 2]>,
    pub hessian: Vec<[[f64; 2]; 2]>,
    pub laplacian: Vec<f64>,
    pub sup_norm: f64,
    /// ∇η·ν at each boundary node.
    pub boundary_normal_derivative: Vec<f64>,
}

impl EtaField {
    pub fn gradient_norm(&self, node: usize) -> f64 {
        let g = self.gradient[node];
        (g[0] * g[0] + g[1] * g[1]).sqrt()
    }
}

pub fn build_eta(mesh: &BulkSurfaceMesh) -> Result<EtaField> {
    mesh.validate()?;
    let n = mesh.num_nodes();
    let mut values = Vec::with_capacity(n);
    let mut gradient = Vec::with_capacity(n);
    let mut hessian = Vec::with_capacity(n);
    for (i, &[x, y]) in mesh.nodes.iter().enumerate() {
        let (v, g, hs) = match mesh.geometry {
            Geometry::Interval { a, b } => ((x - a) * (b - x), [a + b - 2.0 * x, 0.0], [[-2.0, 0.0], [0.0, 0.0]]),
            Geometry::Disk { radius } => (
                radius * radius - (x * x + y * y),
                [-2.0 * x, -2.0 * y],
                [[-2.0, 0.0], [0.0, -2.0]],
            ),
            Geometry::Rectangle { lx, ly } => {
                let c = 16.0 / (lx * lx * ly * ly);
                let (fx, fy) = (x * (lx - x), y * (ly - y));
                let (dfx, dfy) = (lx - 2.0 * x, ly - 2.0 * y);
                let mixed = c * dfx * dfy;
                (
                    c * fx * fy,
                    [c * dfx * fy, c * fx * dfy],
                    [[-2.0 * c * fy, mixed], [mixed, -2.0 * c * fx]],
                )
            }
        };
        // exact zero on Γ: the inscribed disk polygon has |x| = ρ only up to rounding
        values.push(if mesh.is_boundary(i) { 0.0 } else { v });
        gradient.push(g);
        hessian.push(hs);
    }
    let laplacian = hessian.iter().map(|h| h[0][0] + h[1][1]).collect();
    let sup_norm = values.iter().copied().fold(0.0, f64::max);
    let boundary_normal_derivative = mesh
        .boundary_nodes
        .iter()
        .zip(&mesh.outward_normals)
        .map(|(&i, nu)| gradient[i][0] * nu[0] + gradient[i][1] * nu[1])
        .collect();
    Ok(EtaField {
        values,
        gradient,
        hessian,
        laplacian,
        sup_norm,
        boundary_normal_derivative,
    })
}
