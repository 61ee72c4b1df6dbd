//! Seeded random data for sweeps.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::assembly::{norm_x2, DiscreteSystem};
use crate::error::{Error, Result};

/// `count` states with i.i.d. standard normal entries, each scaled to unit
/// 𝕏² norm. The same seed always yields the same sequence.
pub fn unit_random_states(sys: &DiscreteSystem, count: usize, seed: u64) -> Result<Vec<DVector<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let v = DVector::from_iterator(sys.dim(), (0..sys.dim()).map(|_| StandardNormal.sample(&mut rng)));
            normalize(sys, v)
        })
        .collect()
}

/// Scales `v` to unit 𝕏² norm; the zero vector is rejected.
pub fn normalize(sys: &DiscreteSystem, v: DVector<f64>) -> Result<DVector<f64>> {
    let n = norm_x2(sys, &v)?;
    if n == 0.0 || !n.is_finite() {
        return Err(Error::param("final datum", "cannot normalize a zero or non-finite state"));
    }
    Ok(v / n)
}
