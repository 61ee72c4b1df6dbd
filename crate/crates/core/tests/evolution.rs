mod common;

use common::{interval, m_norm, normal_vec, rng};
use wentzell_core::evolution::DenseSemigroup;
use wentzell_core::sampling::unit_random_states;
use wentzell_core::{
    duhamel_final, estimate_coercivity, recover_normal_flux, solve_backward, solve_forward, BoundarySignal, DVector,
    Propagator, Scheme,
};

#[test]
fn implicit_euler_tracks_dense_exponential() {
    let sys = interval(32, 1.0, 0.0, 1.0);
    let mut r = rng(1);
    let u0 = normal_vec(&mut r, sys.dim());
    let g = BoundarySignal::zeros(64, 2);
    let u = solve_forward(&sys, &u0, &g, 1.0, 64, Scheme::ImplicitEuler).unwrap();
    let exact = DenseSemigroup::new(&sys).unwrap().apply(1.0, &u0);
    assert!(m_norm(&sys, &(u.last() - &exact)) <= 0.1 * m_norm(&sys, &exact));
}

#[test]
fn duhamel_without_source_is_exponential() {
    let sys = interval(8, 1.0, 0.0, 1.0);
    let u0 = DVector::from_fn(9, |i, _| 1.0 + i as f64);
    let a = duhamel_final(&sys, &u0, &BoundarySignal::zeros(4, 2), 0.3, 4).unwrap();
    let b = DenseSemigroup::new(&sys).unwrap().apply(0.3, &u0);
    assert!((a - b).amax() <= 1e-15);
}

#[test]
fn duhamel_agrees_with_crank_nicolson_for_constant_source() {
    let sys = interval(8, 1.0, 0.0, 1.0);
    let u0 = DVector::from_fn(9, |i, _| (i as f64 * 0.4).sin());
    let g = |steps| BoundarySignal::constant(steps, DVector::from_vec(vec![1.0, -0.5]));
    let exact = duhamel_final(&sys, &u0, &g(16384), 1.0, 16384).unwrap();
    let u = solve_forward(&sys, &u0, &g(256), 1.0, 256, Scheme::CrankNicolson).unwrap();
    assert!(m_norm(&sys, &(u.last() - &exact)) <= 1e-4 * m_norm(&sys, &exact));
}

#[test]
fn backward_norm_grows_toward_final_time() {
    let sys = interval(16, 1.0, 0.0, 1.0);
    for scheme in [Scheme::CrankNicolson, Scheme::ImplicitEuler] {
        for phi in unit_random_states(&sys, 5, 2).unwrap() {
            let adj = solve_backward(&sys, &phi, 1.0, 40, scheme).unwrap();
            // Φ(t) = e^{(T-t)A} Φ_T contracts as t moves back from T
            for w in adj.states.windows(2) {
                assert!(m_norm(&sys, &w[0]) <= m_norm(&sys, &w[1]) * (1.0 + 1e-14));
            }
        }
    }
    // against the dense flow
    let phi = &unit_random_states(&sys, 1, 3).unwrap()[0];
    let dense = DenseSemigroup::new(&sys).unwrap();
    let norms: Vec<f64> = (0..=10).map(|k| m_norm(&sys, &dense.apply(k as f64 / 10.0, phi))).collect();
    assert!(norms.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn energy_decay_bound() {
    let sys = interval(16, 1.0, 0.0, 1.0);
    let c = estimate_coercivity(&sys).unwrap().value;
    let (t, nt) = (1.0, 50);
    let dt = t / nt as f64;
    let mut r = rng(4);
    let u0 = normal_vec(&mut r, sys.dim());
    let tr = solve_forward(&sys, &u0, &BoundarySignal::zeros(nt, 2), t, nt, Scheme::ImplicitEuler).unwrap();
    let n0 = m_norm(&sys, &u0);
    for (n, s) in tr.states.iter().enumerate() {
        assert!(m_norm(&sys, s) <= n0 * (1.0 + c * dt).powi(-(n as i32)) * (1.0 + 1e-12));
        if n > 0 {
            assert!(m_norm(&sys, s) <= m_norm(&sys, &tr.states[n - 1]));
        }
    }
}

#[test]
fn positivity_with_nonnegative_source() {
    let sys = interval(16, 1.0, 0.0, 1.0);
    let mut r = rng(5);
    for _ in 0..10 {
        let u0 = normal_vec(&mut r, sys.dim()).map(f64::abs);
        let g = BoundarySignal {
            values: (0..=20).map(|_| normal_vec(&mut r, 2).map(f64::abs)).collect(),
        };
        let tr = solve_forward(&sys, &u0, &g, 1.0, 20, Scheme::ImplicitEuler).unwrap();
        assert!(tr.states.iter().all(|s| s.min() >= -1e-14));
    }
}

#[test]
fn flux_paths_converge_under_time_refinement() {
    let sys = interval(32, 1.0, 0.0, 1.0);
    let phi = &unit_random_states(&sys, 1, 6).unwrap()[0];
    let gaps: Vec<f64> = [128, 256, 512]
        .iter()
        .map(|&nt| {
            let adj = solve_backward(&sys, phi, 1.0, nt, Scheme::ImplicitEuler).unwrap();
            recover_normal_flux(&sys, &adj).unwrap().relative_discrepancy
        })
        .collect();
    assert!(gaps[1] < gaps[0] && gaps[2] < gaps[1], "{gaps:?}");
}

#[test]
fn constant_state_has_no_flux() {
    let sys = interval(8, 1.0, 0.0, 0.0);
    let adj = solve_backward(&sys, &DVector::from_element(9, 2.0), 1.0, 8, Scheme::CrankNicolson).unwrap();
    let f = recover_normal_flux(&sys, &adj).unwrap();
    for (a, b) in f.variational.iter().zip(&f.equation) {
        assert!(a.amax() <= 1e-12 && b.amax() <= 1e-12);
    }
}

#[test]
fn signal_refinement_keeps_final_state_close() {
    let sys = interval(16, 1.0, 0.0, 1.0);
    let g = BoundarySignal::from_fn(&sys, 1.0, 32, |t, x| (3.0 * t).cos() * (1.0 - x[0]));
    let u0 = DVector::zeros(17);
    for scheme in [Scheme::CrankNicolson, Scheme::ImplicitEuler] {
        let coarse = Propagator::new(&sys, 1.0, 32, scheme).unwrap().forward_final(&u0, &g).unwrap();
        let fine = Propagator::new(&sys, 1.0, 64, scheme)
            .unwrap()
            .forward_final(&u0, &g.refined(scheme))
            .unwrap();
        assert!(m_norm(&sys, &(coarse - &fine)) <= 0.05 * m_norm(&sys, &fine));
    }
}
