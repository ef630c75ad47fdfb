//! Brute-force density-matrix reference for one stationary atom.
//!
//! The basis is every ground and excited sublevel times `0..=nmax` H-mode
//! photons in ordinary Fock normalization. The evolution is the linear master
//! equation the trajectory ensemble averages: drive, Zeeman shifts, emission
//! into the H mode without reabsorption, cavity loss without recycling, and
//! spontaneous decay with recycling.

#![allow(dead_code)]

pub mod recursion;

use num_complex::Complex64 as C64;

use gsbeats::correlator::{run_correlation_stationary, run_ensemble_with, Normalization};
use gsbeats::params::{preset, Params};

const I: C64 = C64 { re: 0.0, im: 1.0 };

pub type Mat = Vec<C64>;

#[derive(Debug, Clone)]
pub struct MeModel {
    pub fg: i32,
    pub fe: i32,
    pub nmax: usize,
    pub levels: usize,
    pub dim: usize,
    /// Non-Hermitian generator as `(row, col, value)`.
    pub gen: Vec<(usize, usize, C64)>,
    /// Decay operators as `(to, from, amplitude)` per polarization.
    pub jumps: Vec<Vec<(usize, usize, f64)>>,
}

impl MeModel {
    pub fn new(p: &Params, coupling: f64, nmax: usize) -> Self {
        let s = &p.scheme;
        let (fg, fe) = (s.fg, s.fe);
        let levels = (2 * fg + 1 + 2 * fe + 1) as usize;
        let dim = levels * (nmax + 1);
        let z = &p.derived.zeeman;
        let alpha = p.drive.v_photons_empty.sqrt();
        let omega = alpha * coupling;
        let ground = |m: i32, n: usize| n * levels + (m + fg) as usize;
        let excited = |m: i32, n: usize| n * levels + (2 * fg + 1 + m + fe) as usize;
        let mut gen = Vec::new();
        let mut jumps = vec![Vec::new(); 3];
        for n in 0..=nmax {
            let loss = -(n as f64) * C64::new(p.cavity.kappa, p.cavity.birefringence_split);
            for m in -fg..=fg {
                gen.push((ground(m, n), ground(m, n), -I * (m as f64 * z.delta_g) + loss));
            }
            for m in -fe..=fe {
                let e = excited(m, n);
                let diag = -I * (m as f64 * z.delta_e - p.drive.detuning) - 0.5 * p.cavity.gamma + loss;
                gen.push((e, e, diag));
                if m.abs() <= fg {
                    let c = s.cg_dyn(m, 0);
                    gen.push((e, ground(m, n), -I * omega * c));
                    gen.push((ground(m, n), e, -I * omega * c));
                }
                for (k, q) in [-1, 0, 1].into_iter().enumerate() {
                    let mg = m - q;
                    if mg.abs() > fg {
                        continue;
                    }
                    let amp = if p.sim.sigma_decay {
                        s.cg(mg, q)
                    } else if q == 0 {
                        1.0
                    } else {
                        0.0
                    };
                    if amp != 0.0 {
                        jumps[k].push((ground(mg, n), e, p.cavity.gamma.sqrt() * amp));
                    }
                    // H photon: x polarization = (e_-1 - e_+1)/sqrt 2
                    if q != 0 && n < nmax && p.sim.cavity_coupling {
                        let h = if q == 1 { -1.0 } else { 1.0 } / 2f64.sqrt();
                        let w = s.cg_dyn(mg, q) * h * ((n + 1) as f64).sqrt();
                        if w != 0.0 {
                            gen.push((ground(mg, n + 1), e, -I * coupling * w));
                        }
                    }
                }
            }
        }
        Self { fg, fe, nmax, levels, dim, gen, jumps }
    }

    pub fn zero(&self) -> Mat {
        vec![C64::new(0.0, 0.0); self.dim * self.dim]
    }

    /// `|g_m, 0><g_m, 0|`.
    pub fn ground_state(&self, m: i32) -> Mat {
        let mut r = self.zero();
        let k = (m + self.fg) as usize;
        r[k * self.dim + k] = C64::new(1.0, 0.0);
        r
    }

    pub fn photons(&self, idx: usize) -> usize {
        idx / self.levels
    }

    /// `G R + R G^dag + sum_q J_q R J_q^dag`.
    pub fn lindblad(&self, r: &Mat) -> Mat {
        let d = self.dim;
        let mut out = self.zero();
        for &(row, col, v) in &self.gen {
            for j in 0..d {
                out[row * d + j] += v * r[col * d + j];
                out[j * d + row] += r[j * d + col] * v.conj();
            }
        }
        for ops in &self.jumps {
            for &(a, b, x) in ops {
                for &(c, e, y) in ops {
                    out[a * d + c] += r[b * d + e] * (x * y);
                }
            }
        }
        out
    }

    /// Adjoint map `G^dag O + O G + sum_q J_q^dag O J_q`.
    pub fn adjoint(&self, o: &Mat) -> Mat {
        let d = self.dim;
        let mut out = self.zero();
        for &(row, col, v) in &self.gen {
            for j in 0..d {
                out[col * d + j] += v.conj() * o[row * d + j];
                out[j * d + col] += o[j * d + row] * v;
            }
        }
        for ops in &self.jumps {
            for &(a, b, x) in ops {
                for &(c, e, y) in ops {
                    out[b * d + e] += o[a * d + c] * (x * y);
                }
            }
        }
        out
    }

    pub fn rk4(&self, r: &Mat, h: f64, adjoint: bool) -> Mat {
        let f = |x: &Mat| if adjoint { self.adjoint(x) } else { self.lindblad(x) };
        let axpy = |x: &Mat, k: &Mat, s: f64| -> Mat { x.iter().zip(k).map(|(a, b)| a + b * s).collect() };
        let k1 = f(r);
        let k2 = f(&axpy(r, &k1, 0.5 * h));
        let k3 = f(&axpy(r, &k2, 0.5 * h));
        let k4 = f(&axpy(r, &k3, h));
        r.iter()
            .enumerate()
            .map(|(i, x)| x + (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) * (h / 6.0))
            .collect()
    }

    /// `n` steps of `h`.
    pub fn evolve(&self, r: &Mat, h: f64, n: usize, adjoint: bool) -> Mat {
        let mut x = r.clone();
        for _ in 0..n {
            x = self.rk4(&x, h, adjoint);
        }
        x
    }

    pub fn trace(&self, r: &Mat) -> f64 {
        (0..self.dim).map(|i| r[i * self.dim + i].re).sum()
    }

    /// `tr(b^dag b R)`.
    pub fn photon_number(&self, r: &Mat) -> f64 {
        (0..self.dim).map(|i| self.photons(i) as f64 * r[i * self.dim + i].re).sum()
    }

    /// Photon-number operator restricted to exactly `n` photons, times `n`.
    pub fn number_in_sector(&self, n: usize) -> Mat {
        let mut o = self.zero();
        for i in 0..self.dim {
            if self.photons(i) == n {
                o[i * self.dim + i] = C64::new(n as f64, 0.0);
            }
        }
        o
    }

    /// `b R b^dag` expressed in `target`, a model with `nmax - 1` photons.
    pub fn lower(&self, r: &Mat, target: &MeModel) -> Mat {
        assert_eq!(target.levels, self.levels);
        let d = self.dim;
        let mut out = target.zero();
        let map = |i: usize| -> Option<(usize, f64)> {
            let n = self.photons(i);
            (n > 0 && n - 1 <= target.nmax).then(|| (i - self.levels, (n as f64).sqrt()))
        };
        for i in 0..d {
            let Some((ti, si)) = map(i) else { continue };
            for j in 0..d {
                let Some((tj, sj)) = map(j) else { continue };
                out[ti * target.dim + tj] = r[i * d + j] * (si * sj);
            }
        }
        out
    }
}

pub fn trace_product(a: &Mat, b: &Mat, dim: usize) -> f64 {
    let mut s = C64::new(0.0, 0.0);
    for i in 0..dim {
        for j in 0..dim {
            s += a[i * dim + j] * b[j * dim + i];
        }
    }
    s.re
}

/// Reference `g2` on the non-negative delay bins, normalized by the squared
/// mean first-detection weight.
///
/// Samples and delay bins follow the correlator's schedule exactly, so bins
/// near `tau_max` average over the same, slightly smaller, set of samples.
pub fn regression_g2(p: &Params, coupling: f64, substeps: usize) -> Vec<f64> {
    let s = &p.sim;
    let base = MeModel::new(p, coupling, 2);
    let cond = MeModel::new(p, coupling, 1);
    let h = s.dt / substeps as f64;
    let burn = (s.burn_in / s.dt).round() as usize;
    let total = burn + (s.duration / s.dt).round() as usize;
    let bins = s.tau_bins;
    let bstep = s.tau_bin_steps;
    let reach = (bins - 1) * bstep;

    // samples whose late bins fall off the end are kept separately
    let mut r = base.ground_state(0);
    let mut all = cond.zero();
    let mut tail: Vec<(usize, Mat)> = Vec::new();
    let mut weight = 0.0;
    let mut samples = 0usize;
    for k in 0..total {
        if k >= burn && (k - burn) % s.sample_every == 0 {
            let x = base.lower(&r, &cond);
            weight += base.photon_number(&r);
            samples += 1;
            for (a, b) in all.iter_mut().zip(&x) {
                *a += b;
            }
            if k + reach >= total {
                tail.push((k, x));
            }
        }
        r = base.evolve(&r, h, substeps, false);
    }
    let mean_w = weight / samples as f64;

    // detected intensity of the collapsed state, one photon left in the cavity
    let mut obs = cond.number_in_sector(1);
    let mut out = Vec::with_capacity(bins);
    for j in 0..bins {
        let mut sj = all.clone();
        let mut count = samples;
        for (k, x) in &tail {
            if k + j * bstep >= total {
                count -= 1;
                for (a, b) in sj.iter_mut().zip(x) {
                    *a -= b;
                }
            }
        }
        let num = trace_product(&obs, &sj, cond.dim) / count as f64;
        out.push(num / (mean_w * mean_w));
        obs = cond.evolve(&obs, h, substeps * bstep, true);
    }
    out
}

/// One on-axis atom held at `m = 0`, drive fixed at its empty-cavity value.
pub fn stationary_params(b_gauss: f64, v_photons: f64) -> Params {
    let mut cfg = preset("fig2a").unwrap().config.clone();
    cfg.b_gauss = b_gauss;
    cfg.drive.v_photons = v_photons;
    cfg.sim.absorption = false;
    cfg.sim.burn_in_us = 5.0;
    cfg.sim.duration_us = 50.0;
    cfg.sim.tau_max_us = 3.0;
    cfg.sim.flux_stride = 20;
    cfg.resolve().unwrap()
}

/// Conditional-state `g2` against the regression reference.
#[derive(Debug, Clone, Copy)]
pub struct OracleComparison {
    pub samples: u64,
    pub worst_z: f64,
    /// Fraction of delay bins within three standard errors.
    pub within: f64,
    pub mean_z_sq: f64,
}

pub fn compare_with_regression(b_gauss: f64, seeds: u64) -> OracleComparison {
    let p = stationary_params(b_gauss, 2.5);
    let g = p.cavity.g_max;
    let seeds: Vec<u64> = (1..=seeds).collect();
    let ens = run_ensemble_with(&seeds, 1, &p, |p, s| run_correlation_stationary(p, s, &[g])).unwrap();
    let curve = ens.accumulator.finalize(Normalization::IntensityProduct).unwrap();
    let reference = regression_g2(&p, g, 4);
    let z0 = curve.zero_index();
    let zs: Vec<f64> = reference
        .iter()
        .enumerate()
        .map(|(k, r)| (curve.total()[z0 + k] - r) / curve.stderr[z0 + k])
        .collect();
    let n = zs.len() as f64;
    OracleComparison {
        samples: curve.samples,
        worst_z: zs.iter().fold(0.0, |m, z| m.max(z.abs())),
        within: zs.iter().filter(|z| z.abs() <= 3.0).count() as f64 / n,
        mean_z_sq: zs.iter().map(|z| z * z).sum::<f64>() / n,
    }
}
