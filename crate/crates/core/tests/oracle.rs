mod common;

use common::{stationary_params, MeModel};
use gsbeats::trajectory::{run_for, Simulation};

#[test]
fn photon_number_matches_trajectory_ensemble() {
    let p = stationary_params(5.0, 2.5);
    let g = p.cavity.g_max;
    let runs = 10_000;
    let duration = 2e-6;
    let mut sum: Vec<f64> = Vec::new();
    let mut sq: Vec<f64> = Vec::new();
    for seed in 0..runs {
        let mut sim = Simulation::stationary(&p, seed, &[g]);
        let rec = run_for(&mut sim, duration).unwrap();
        if sum.is_empty() {
            sum = vec![0.0; rec.observables.len()];
            sq = vec![0.0; rec.observables.len()];
        }
        for (k, o) in rec.observables.iter().enumerate() {
            sum[k] += o.h_photons;
            sq[k] += o.h_photons * o.h_photons;
        }
    }
    let me = MeModel::new(&p, g, 2);
    let substeps = 8;
    let h = p.sim.dt / substeps as f64;
    let mut r = me.ground_state(0);
    for k in 0..sum.len() {
        let n = runs as f64;
        let mean = sum[k] / n;
        let se = ((sq[k] / n - mean * mean).max(0.0) / (n - 1.0)).sqrt();
        let reference = me.photon_number(&r);
        // before the first jump every trajectory is identical
        let tol = 3.0 * se + 1e-6 * reference.abs();
        assert!((mean - reference).abs() <= tol, "t = {:.2} us: {mean} vs {reference} (se {se})", k as f64 * 0.1);
        r = me.evolve(&r, h, substeps * p.sim.flux_stride, false);
    }
}

#[test]
fn third_photon_is_negligible_at_weak_drive() {
    let p = stationary_params(5.0, 0.01);
    let g = p.cavity.g_max;
    let two = MeModel::new(&p, g, 2);
    let three = MeModel::new(&p, g, 3);
    let h = p.sim.dt / 4.0;
    let (mut r2, mut r3) = (two.ground_state(0), three.ground_state(0));
    for _ in 0..20 {
        r2 = two.evolve(&r2, h, 40, false);
        r3 = three.evolve(&r3, h, 40, false);
        let (n2, n3) = (two.photon_number(&r2), three.photon_number(&r3));
        // two-photon amplitudes stay small
        let p2: f64 = (0..two.dim).filter(|&i| two.photons(i) == 2).map(|i| r2[i * two.dim + i].re).sum();
        assert!(p2.sqrt() < 1e-3, "{p2}");
        assert!((n3 - n2).abs() / n3 < 1e-4, "{n2} vs {n3}");
    }
}
