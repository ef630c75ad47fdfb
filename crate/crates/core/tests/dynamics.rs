use std::collections::HashMap;

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gsbeats::params::{preset, Params};
use gsbeats::trajectory::chain::{self, Chain, DIM};
use gsbeats::trajectory::{run_for, step_coefficients, JumpKind, Simulation};

fn two_level_params() -> Params {
    let mut cfg = preset("fig2a").unwrap().config.clone();
    cfg.b_gauss = 0.0;
    cfg.sim.sigma_decay = false;
    cfg.sim.cavity_coupling = false;
    cfg.sim.absorption = false;
    cfg.resolve().unwrap()
}

/// Closed-form `(g, e)` of `g' = -i W e`, `e' = -i W g + d e` from `(1, 0)`.
fn rabi(t: f64, w: f64, d: C64) -> (C64, C64) {
    let root = (d * d - 4.0 * w * w).sqrt();
    let (l1, l2) = ((d + root) / 2.0, (d - root) / 2.0);
    let (x1, x2) = ((l1 * t).exp(), (l2 * t).exp());
    let g = (l1 * x2 - l2 * x1) / (l1 - l2);
    let e = -C64::i() * w * (x1 - x2) / (l1 - l2);
    (g, e)
}

fn rabi_inputs(p: &Params) -> (f64, C64) {
    let g = p.cavity.g_max;
    let w = p.drive.v_photons_empty.sqrt() * g * p.scheme.cg_dyn(0, 0);
    let d = C64::new(-0.5 * p.cavity.gamma, p.drive.detuning);
    (w, d)
}

#[test]
fn zero_photon_pair_is_a_damped_rabi_oscillation() {
    let p = two_level_params();
    let (w, d) = rabi_inputs(&p);
    let coeffs = step_coefficients(&p, C64::new(p.drive.v_photons_empty.sqrt(), 0.0), 0, p.cavity.g_max);
    let u = chain::propagator(&chain::generator(&p.scheme, &coeffs), p.sim.dt);
    let mut x: Chain = [C64::new(0.0, 0.0); DIM];
    x[0] = C64::new(1.0, 0.0);
    for k in 1..=400 {
        x = chain::apply(&u, &x);
        let (g, e) = rabi(k as f64 * p.sim.dt, w, d);
        assert!((x[0] - g).norm() < 1e-6 && (x[1] - e).norm() < 1e-6, "step {k}");
    }
}

#[test]
fn trajectory_restarts_the_oscillation_after_each_jump() {
    let p = two_level_params();
    let (w, d) = rabi_inputs(&p);
    let mut sim = Simulation::stationary(&p, 4, &[p.cavity.g_max]);
    let mut last_jump = 0.0;
    let mut jumps = 0;
    for _ in 0..4000 {
        let report = sim.step().unwrap();
        for e in &report.events {
            assert_eq!(e.kind, JumpKind::SpontaneousPi);
            last_jump = e.time;
            jumps += 1;
        }
        let (g, e) = rabi(sim.time - last_jump, w, d);
        let n = (g.norm_sqr() + e.norm_sqr()).sqrt();
        let a = sim.atoms[0].a();
        // a jump keeps the phase of the excited amplitude
        let ov = a[0] * (g / n).conj() + a[1] * (e / n).conj();
        let ph = ov / ov.norm();
        assert!((a[0] - ph * g / n).norm() < 1e-6 && (a[1] - ph * e / n).norm() < 1e-6, "t = {}", sim.time);
    }
    assert!(jumps > 10, "{jumps}");
}

/// `int_0^dt gamma |e(t)|^2 dt` summed over decay channels, by Simpson's rule.
fn integrated_jump_rate(p: &Params, gen: &chain::Generator, x: &Chain, centre: i32) -> f64 {
    let n = 64;
    let h = p.sim.dt / n as f64;
    let branching: f64 = (-1..=1).map(|q| p.scheme.cg(centre - q, q).powi(2)).sum();
    let rate = |t: f64| {
        let y = chain::apply(&chain::propagator(gen, t), x);
        p.cavity.gamma * branching * y[1].norm_sqr()
    };
    let mut s = rate(0.0) + rate(p.sim.dt);
    for k in 1..n {
        s += rate(k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

#[test]
fn norm_decay_matches_jump_rate_every_step() {
    let p = preset("fig2a").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..200 {
        let centre = rng.random_range(-2..=2);
        let coupling = p.cavity.g_max * rng.random::<f64>();
        let alpha = C64::new(2.0 * rng.random::<f64>(), rng.random::<f64>() - 0.5);
        let coeffs = step_coefficients(&p, alpha, centre, coupling);
        let gen = chain::generator(&p.scheme, &coeffs);
        let mut x: Chain = [C64::new(0.0, 0.0); DIM];
        for v in x.iter_mut() {
            *v = C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
        }
        let n0 = chain::base_norm_sqr(&x);
        for v in x.iter_mut() {
            *v /= n0.sqrt();
        }
        let after = chain::apply(&chain::propagator(&gen, p.sim.dt), &x);
        let lost = 1.0 - chain::base_norm_sqr(&after);
        let jumped = integrated_jump_rate(&p, &gen, &x, centre);
        assert!((lost - jumped).abs() < 1e-8, "centre {centre}: {lost} vs {jumped}");
    }
}

fn check_ledger(p: &Params, seed: u64, duration: f64) -> usize {
    let mut sim = Simulation::new(p, seed);
    let start: HashMap<u64, i32> = sim.atoms.iter().map(|a| (a.id, a.centre)).collect();
    let rec = run_for(&mut sim, duration).unwrap();
    assert!(rec.ledger_violations.is_empty(), "{:?}", rec.ledger_violations);
    // photon angular momentum from the event stream alone
    let mut carried: HashMap<u64, i32> = HashMap::new();
    for e in &rec.events {
        if let (Some(id), Some(q)) = (e.atom_id, e.kind.q()) {
            *carried.entry(id).or_default() += q;
        }
    }
    for at in &sim.atoms {
        let m0 = start.get(&at.id).copied().unwrap_or(at.initial_centre);
        let photons = carried.get(&at.id).copied().unwrap_or(0);
        assert_eq!(at.centre + photons, m0 + at.cavity_shift, "atom {}", at.id);
    }
    rec.events.len()
}

#[test]
fn angular_momentum_ledger_is_conserved() {
    let p = preset("fig2b").unwrap();
    let mut events = 0;
    for seed in 1..=3 {
        events += check_ledger(&p, seed, 40e-6);
    }
    let mut cfg = p.config.clone();
    cfg.sim.cavity_jumps = true;
    let q = cfg.resolve().unwrap();
    for seed in 1..=3 {
        events += check_ledger(&q, seed, 40e-6);
    }
    assert!(events > 100, "{events}");
}

#[test]
fn mean_coupling_sum_is_nbar() {
    let mut cfg = preset("fig2a").unwrap().config.clone();
    cfg.drive.v_photons = 0.0;
    cfg.sim.cavity_coupling = false;
    cfg.sim.flux_stride = 10;
    let p = cfg.resolve().unwrap();
    let mut sum = 0.0;
    let mut n = 0;
    for seed in 1..=4 {
        let rec = gsbeats::trajectory::run_trajectory(&p, 6e-3, seed).unwrap();
        sum += rec.observables.iter().map(|o| o.coupling_sum).sum::<f64>();
        n += rec.observables.len();
    }
    let mean = sum / n as f64;
    assert!((mean / p.beam.nbar - 1.0).abs() < 0.05, "{mean}");
}
