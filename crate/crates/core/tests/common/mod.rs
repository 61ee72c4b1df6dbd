#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use wentzell_core::{assemble, build_interval_mesh, BoundarySignal, DVector, DiscreteSystem};

pub fn interval(n: usize, gamma: f64, delta: f64, beta: f64) -> DiscreteSystem {
    let mesh = build_interval_mesh(0.0, 1.0, n).unwrap();
    assemble(&mesh, gamma, delta, &DVector::from_element(2, beta)).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)))
}

pub fn normal_signal(rng: &mut ChaCha8Rng, steps: usize, nb: usize) -> BoundarySignal {
    BoundarySignal {
        values: (0..=steps).map(|_| normal_vec(rng, nb)).collect(),
    }
}

pub fn m_dot(sys: &DiscreteSystem, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .zip(sys.mass_diagonal().iter())
        .map(|((x, y), m)| x * y * m)
        .sum()
}

pub fn m_norm(sys: &DiscreteSystem, a: &DVector<f64>) -> f64 {
    m_dot(sys, a, a).sqrt()
}

/// `sin(πx)` on the unit interval.
pub fn sine_mode(sys: &DiscreteSystem) -> DVector<f64> {
    DVector::from_iterator(
        sys.dim(),
        sys.mesh.nodes.iter().map(|p| (std::f64::consts::PI * p[0]).sin()),
    )
}
