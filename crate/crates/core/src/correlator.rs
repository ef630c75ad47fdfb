//! Conditional-state estimate of `g2(tau)` and its decomposition.
//!
//! At regular sample times the collapsed state `b|psi>` is installed next to
//! the base state and both are propagated together. The detected field is
//! `b + beta` with a coherent background `beta`, so a sample started at `t`
//! and read at `t + tau` yields
//!
//! ```text
//! |X> = (b + beta2) (b + beta1) |psi>      (propagated between detections)
//! ```
//!
//! whose squared norm splits exactly into one-atom, two-atom, homodyne and
//! residual parts. `g2` is the mean of `|X|^2` over samples divided by the
//! squared mean first-detection weight and, by default, rescaled so the
//! long-delay plateau sits at one.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::params::Params;
use crate::trajectory::chain::ZERO;
use crate::trajectory::{dot, norm_sqr, pair_dot, two_photon_norm, AtomInstance, Sample, Simulation};

pub const CHANNELS: usize = 5;
pub const CHANNEL_NAMES: [&str; CHANNELS] = ["total", "one_atom", "two_atom", "homodyne", "residual"];

/// One evaluation of `|X|^2` and its parts.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ChannelValues {
    pub total: f64,
    pub one_atom: f64,
    pub two_atom: f64,
    pub homodyne: f64,
    pub residual: f64,
}

impl ChannelValues {
    pub fn as_array(&self) -> [f64; CHANNELS] {
        [self.total, self.one_atom, self.two_atom, self.homodyne, self.residual]
    }

    pub fn parts_sum(&self) -> f64 {
        self.one_atom + self.two_atom + self.homodyne + self.residual
    }
}

fn cond_p1(c: &[C64]) -> &[C64] {
    &c[0..4]
}

fn cond_p2(c: &[C64]) -> &[C64] {
    &c[4..10]
}

/// Channel values for live sample `slot`.
///
/// The parts use `O(N)` sums; `total` is evaluated independently from the
/// explicit pair products so the decomposition can be checked.
pub fn sample_channels(atoms: &[AtomInstance], slot: usize, sample: &Sample, beta2: C64) -> ChannelValues {
    let b1 = sample.beta1;
    let b2 = beta2;
    let b12 = b1 * b2;
    let b12_sq = b12.norm_sqr();

    let mut one = 0.0;
    let mut sum_t = ZERO;
    let mut sum_t_sq = 0.0;
    let mut sum_u = ZERO;
    let mut sum_u_sq = 0.0;
    let mut sum_n1 = 0.0;
    let mut sum_np1 = 0.0;
    let mut sum_n1_np1 = 0.0;
    let mut sum_nq = 0.0;
    let mut sum_n1_nq = 0.0;
    let mut sum_r = ZERO;
    let mut sum_r_sq = 0.0;
    let mut sum_d = 0.0;
    let mut sum_v = ZERO;
    let mut sum_v_sq = 0.0;
    for at in atoms {
        let c = &at.conditional[slot];
        let a = &at.chain[0..2];
        let a1 = at.a1();
        let a2 = at.a2();
        let p1 = cond_p1(c);
        let p2 = cond_p2(c);
        one += norm_sqr(p2);
        let t = dot(a1, p1);
        sum_t += t;
        sum_t_sq += t.norm_sqr();
        let u = pair_dot(a, &p2[2..4]);
        sum_u += u;
        sum_u_sq += u.norm_sqr();
        let n1 = norm_sqr(a1);
        let np1 = norm_sqr(p1);
        sum_n1 += n1;
        sum_np1 += np1;
        sum_n1_np1 += n1 * np1;
        let mut q = [ZERO; 4];
        for k in 0..4 {
            q[k] = b1 * a1[k] + b2 * p1[k];
        }
        let nq = norm_sqr(&q);
        sum_nq += nq;
        sum_n1_nq += n1 * nq;
        let r = dot(a1, &q);
        sum_r += r;
        sum_r_sq += r.norm_sqr();
        let mut d = [ZERO; 6];
        for k in 0..6 {
            d[k] = 2.0 * b1 * a2[k] + b2 * p2[k];
        }
        sum_d += norm_sqr(&d);
        let v = pair_dot(a, &d[2..4]);
        sum_v += v;
        sum_v_sq += v.norm_sqr();
    }

    let two = sum_t.norm_sqr() - sum_t_sq + sum_u.norm_sqr() - sum_u_sq;
    let homodyne = 2.0 * (b1.conj() * b2 * sum_t).re + 2.0 * (b12.conj() * sum_u).re;
    let pairs_diag = sum_n1 * sum_np1 - sum_n1_np1;
    let betas = b1.norm_sqr() * sum_n1 + b2.norm_sqr() * sum_np1;
    let ghost = sample.ghost * (sum_n1 + b2.norm_sqr());
    let x1_pairs = sum_n1 * sum_nq - sum_n1_nq + sum_r.norm_sqr() - sum_r_sq;
    let x1_doubles = sum_d + sum_v.norm_sqr() - sum_v_sq;
    let x1_singles = b12_sq * sum_n1;
    let x2 = 2.0 * b12_sq * two_photon_norm(atoms);
    let residual = pairs_diag + betas + b12_sq + ghost + x1_pairs + x1_doubles + x1_singles + x2;

    ChannelValues {
        total: direct_total(atoms, slot, sample, beta2),
        one_atom: one,
        two_atom: two,
        homodyne,
        residual,
    }
}

/// `|x (x) y + z (x) w|^2`; first factors act on atom `i`, second on atom `j`.
fn pair_tensor_norm(x: &[C64], y: &[C64], z: &[C64], w: &[C64]) -> f64 {
    let mut s = 0.0;
    for i in 0..x.len() {
        for j in 0..y.len() {
            s += (x[i] * y[j] + z[i] * w[j]).norm_sqr();
        }
    }
    s
}

/// `|sum_i v_i A_i + c A|^2` where `v_i` sits at the centre pair of atom `i`
/// (index range `centre`) and `A_i` omits atom `i`.
fn zero_odd_norm(atoms: &[AtomInstance], vecs: &[Vec<C64>], centre: std::ops::Range<usize>, c: C64) -> f64 {
    let mut s = c.norm_sqr();
    for (i, at) in atoms.iter().enumerate() {
        s += norm_sqr(&vecs[i]);
        let ov = pair_dot(&at.chain[0..2], &vecs[i][centre.clone()]);
        s += 2.0 * (c.conj() * ov).re;
        for (j, bt) in atoms.iter().enumerate() {
            if i != j {
                // <v_i A_i | v_j A_j> = <v_i|a_i> <a_j|v_j>
                let oj = pair_dot(&bt.chain[0..2], &vecs[j][centre.clone()]);
                s += (ov.conj() * oj).re;
            }
        }
    }
    s
}

fn direct_total(atoms: &[AtomInstance], slot: usize, sample: &Sample, beta2: C64) -> f64 {
    let b1 = sample.beta1;
    let b2 = beta2;
    let b12 = b1 * b2;
    let n = atoms.len();
    let p1: Vec<&[C64]> = atoms.iter().map(|a| cond_p1(&a.conditional[slot])).collect();
    let p2: Vec<Vec<C64>> = atoms.iter().map(|a| cond_p2(&a.conditional[slot]).to_vec()).collect();
    let q: Vec<Vec<C64>> = atoms
        .iter()
        .zip(&p1)
        .map(|(a, p)| a.a1().iter().zip(p.iter()).map(|(x, y)| b1 * x + b2 * y).collect())
        .collect();
    let d: Vec<Vec<C64>> = atoms
        .iter()
        .zip(&p2)
        .map(|(a, p)| a.a2().iter().zip(p.iter()).map(|(x, y)| 2.0 * b1 * x + b2 * y).collect())
        .collect();
    let a2: Vec<Vec<C64>> = atoms.iter().map(|a| a.a2().to_vec()).collect();

    // |X0|^2
    let mut x0 = zero_odd_norm(atoms, &p2, 2..4, b12);
    x0 += q.iter().map(|v| norm_sqr(v)).sum::<f64>();
    // |X1|^2
    let mut x1 = zero_odd_norm(atoms, &d, 2..4, ZERO);
    x1 += b12.norm_sqr() * atoms.iter().map(|a| norm_sqr(a.a1())).sum::<f64>();
    // |S2|^2
    let mut s2 = zero_odd_norm(atoms, &a2, 2..4, ZERO);
    for i in 0..n {
        for j in (i + 1)..n {
            let ai = atoms[i].a1();
            let aj = atoms[j].a1();
            x0 += pair_tensor_norm(p1[i], aj, ai, p1[j]);
            x1 += pair_tensor_norm(&q[i], aj, ai, &q[j]);
            s2 += norm_sqr(ai) * norm_sqr(aj);
        }
    }
    let x2 = 2.0 * b12.norm_sqr() * s2;
    let ghost = sample.ghost * (atoms.iter().map(|a| norm_sqr(a.a1())).sum::<f64>() + b2.norm_sqr());
    x0 + x1 + x2 + ghost
}

/// Running sums of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchSums {
    pub numerators: Vec<[f64; CHANNELS]>,
    pub counts: Vec<u64>,
    pub weight_sum: f64,
    pub samples: u64,
    /// Largest `|total - sum of parts| / max(|total|, tiny)` seen.
    pub max_decomposition_error: f64,
}

impl BatchSums {
    pub fn new(bins: usize) -> Self {
        Self {
            numerators: vec![[0.0; CHANNELS]; bins],
            counts: vec![0; bins],
            weight_sum: 0.0,
            samples: 0,
            max_decomposition_error: 0.0,
        }
    }

    pub fn add(&mut self, bin: usize, v: &ChannelValues) -> Result<()> {
        if bin >= self.counts.len() {
            return Err(Error::Logic(format!("delay bin {bin} outside 0..{}", self.counts.len())));
        }
        let arr = v.as_array();
        for (acc, x) in self.numerators[bin].iter_mut().zip(arr) {
            *acc += x;
        }
        self.counts[bin] += 1;
        let scale = v.total.abs().max(v.one_atom.abs()).max(v.residual.abs()).max(1e-300);
        let err = (v.total - v.parts_sum()).abs() / scale;
        self.max_decomposition_error = self.max_decomposition_error.max(err);
        Ok(())
    }
}

/// Neumaier-compensated sum.
#[derive(Debug, Clone, Copy, Default)]
struct KahanSum {
    sum: f64,
    c: f64,
}

impl KahanSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.c += (self.sum - t) + x;
        } else {
            self.c += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(self) -> f64 {
        self.sum + self.c
    }
}

/// Per-seed batches of delay-binned sums.
///
/// Merging is a union keyed by seed and `finalize` reduces in key order, so
/// the result does not depend on the order batches arrived in.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationAccumulator {
    pub tau_bin: f64,
    pub bins: usize,
    pub batches: BTreeMap<u64, BatchSums>,
}

/// Finalized `g2` on a symmetric delay grid.
#[derive(Debug, Clone, PartialEq)]
pub struct G2Curve {
    pub tau: Vec<f64>,
    /// Indexed like [`CHANNEL_NAMES`].
    pub channels: [Vec<f64>; CHANNELS],
    pub stderr: Vec<f64>,
    pub mean_weight: f64,
    /// Long-delay mean of the total over the squared mean weight.
    pub plateau: f64,
    /// Non-negative delay bins the plateau is averaged over.
    pub plateau_bins: std::ops::Range<usize>,
    pub normalization: Normalization,
    pub samples: u64,
    pub batches: usize,
}

/// How `g2` is scaled.
///
/// The conditional state leaks norm whenever its own H photon leaves the
/// cavity, since the truncated expansion cannot re-enter it; the long-delay
/// plateau absorbs that leak, the intensity product does not.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Normalization {
    /// Divide by the squared mean first-detection weight.
    IntensityProduct,
    /// Additionally divide by the mean over the last `fraction` of delays.
    Plateau { fraction: f64 },
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization::Plateau { fraction: 0.25 }
    }
}

impl Normalization {
    /// Bins averaged for the plateau; the last quarter when not specified.
    pub fn plateau_range(&self, bins: usize) -> std::ops::Range<usize> {
        let fraction = match self {
            Normalization::Plateau { fraction } => fraction.clamp(0.0, 1.0),
            Normalization::IntensityProduct => 0.25,
        };
        let len = ((bins as f64 * fraction).round() as usize).clamp(1, bins.max(1));
        bins.saturating_sub(len)..bins
    }
}

impl G2Curve {
    pub fn total(&self) -> &[f64] {
        &self.channels[0]
    }

    pub fn channel(&self, name: &str) -> Option<&[f64]> {
        CHANNEL_NAMES.iter().position(|n| *n == name).map(|i| self.channels[i].as_slice())
    }

    /// Index of `tau = 0`.
    pub fn zero_index(&self) -> usize {
        self.tau.len() / 2
    }

    /// Non-negative half `(tau, values)` of a channel.
    pub fn positive(&self, channel: usize) -> (&[f64], &[f64]) {
        let z = self.zero_index();
        (&self.tau[z..], &self.channels[channel][z..])
    }

    pub fn tau_step(&self) -> f64 {
        if self.tau.len() > 1 {
            self.tau[1] - self.tau[0]
        } else {
            0.0
        }
    }
}

impl CorrelationAccumulator {
    pub fn new(tau_bin: f64, bins: usize) -> Self {
        Self {
            tau_bin,
            bins,
            batches: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, seed: u64, batch: BatchSums) -> Result<()> {
        if batch.counts.len() != self.bins {
            return Err(Error::Logic("batch has a different delay grid".into()));
        }
        if self.batches.insert(seed, batch).is_some() {
            return Err(Error::Logic(format!("seed {seed} merged twice")));
        }
        Ok(())
    }

    pub fn merge(mut self, other: CorrelationAccumulator) -> Result<Self> {
        if other.bins != self.bins || other.tau_bin != self.tau_bin {
            return Err(Error::Logic("accumulators have different delay grids".into()));
        }
        for (seed, b) in other.batches {
            self.insert(seed, b)?;
        }
        Ok(self)
    }

    pub fn max_decomposition_error(&self) -> f64 {
        self.batches.values().map(|b| b.max_decomposition_error).fold(0.0, f64::max)
    }

    /// Bin-wise `(total, parts sum)` of the raw numerators.
    pub fn numerator_check(&self) -> Vec<(f64, f64)> {
        (0..self.bins)
            .map(|k| {
                let mut total = KahanSum::default();
                let mut parts = KahanSum::default();
                for b in self.batches.values() {
                    let n = b.numerators[k];
                    total.add(n[0]);
                    for x in &n[1..] {
                        parts.add(*x);
                    }
                }
                (total.value(), parts.value())
            })
            .collect()
    }

    /// Mean first-detection weight over all samples.
    pub fn mean_weight(&self) -> Result<f64> {
        let mut wsum = KahanSum::default();
        let mut samples = 0u64;
        for b in self.batches.values() {
            wsum.add(b.weight_sum);
            samples += b.samples;
        }
        let wsum = wsum.value();
        if samples == 0 || !(wsum > 0.0) {
            return Err(Error::InsufficientData("no sample carried first-detection weight".into()));
        }
        Ok(wsum / samples as f64)
    }

    /// Unnormalized mean of `|X|^2` per delay bin and channel.
    fn raw_means(&self) -> [Vec<f64>; CHANNELS] {
        let mut half: [Vec<f64>; CHANNELS] = Default::default();
        for (ch, out) in half.iter_mut().enumerate() {
            for k in 0..self.bins {
                let mut num = KahanSum::default();
                let mut count = 0u64;
                for b in self.batches.values() {
                    num.add(b.numerators[k][ch]);
                    count += b.counts[k];
                }
                out.push(if count > 0 { num.value() / count as f64 } else { f64::NAN });
            }
        }
        half
    }

    pub fn finalize(&self, normalization: Normalization) -> Result<G2Curve> {
        let mean_w = self.mean_weight()?;
        let samples = self.batches.values().map(|b| b.samples).sum();
        let raw = self.raw_means();
        let product = mean_w * mean_w;
        let plateau_range = normalization.plateau_range(self.bins);
        let plateau = {
            let vals: Vec<f64> = raw[0][plateau_range.clone()].iter().copied().filter(|x| x.is_finite()).collect();
            if vals.is_empty() {
                f64::NAN
            } else {
                vals.iter().sum::<f64>() / vals.len() as f64 / product
            }
        };
        let scale = match normalization {
            Normalization::IntensityProduct => 1.0 / product,
            Normalization::Plateau { .. } => {
                if !(plateau > 0.0) {
                    return Err(Error::InsufficientData("long-delay plateau is empty".into()));
                }
                1.0 / (plateau * product)
            }
        };
        let half: Vec<Vec<f64>> = raw.iter().map(|c| c.iter().map(|x| x * scale).collect()).collect();
        // batch means of the raw total
        let per_batch: Vec<Vec<f64>> = self
            .batches
            .values()
            .map(|b| {
                (0..self.bins)
                    .map(|k| {
                        if b.counts[k] > 0 {
                            b.numerators[k][0] / b.counts[k] as f64
                        } else {
                            f64::NAN
                        }
                    })
                    .collect()
            })
            .collect();
        let mut stderr_half = Vec::with_capacity(self.bins);
        for k in 0..self.bins {
            let vals: Vec<f64> = per_batch.iter().map(|v| v[k]).filter(|x| x.is_finite()).collect();
            if vals.len() < 2 {
                stderr_half.push(f64::NAN);
                continue;
            }
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (vals.len() - 1) as f64;
            stderr_half.push((var / vals.len() as f64).sqrt() * scale);
        }
        let mirror = |h: &[f64]| -> Vec<f64> { h.iter().skip(1).rev().chain(h.iter()).copied().collect() };
        let tau_half: Vec<f64> = (0..self.bins).map(|k| k as f64 * self.tau_bin).collect();
        let tau: Vec<f64> = tau_half.iter().skip(1).rev().map(|t| -t).chain(tau_half.iter().copied()).collect();
        Ok(G2Curve {
            tau,
            channels: [
                mirror(&half[0]),
                mirror(&half[1]),
                mirror(&half[2]),
                mirror(&half[3]),
                mirror(&half[4]),
            ],
            stderr: mirror(&stderr_half),
            mean_weight: mean_w,
            plateau,
            plateau_bins: plateau_range,
            normalization,
            samples,
            batches: self.batches.len(),
        })
    }
}

/// Summary of one correlation trajectory.
#[derive(Debug, Clone)]
pub struct CorrelationRun {
    pub seed: u64,
    pub batch: BatchSums,
    pub mean_v_photons: f64,
    pub mean_h_photons: f64,
    pub mean_atoms: f64,
    pub mean_coupling_sum: f64,
    pub spontaneous_jumps: u64,
    pub cavity_emissions: u64,
    pub dropped_arrivals: u64,
    /// Detected flux after burn-in, one value per `flux_stride` steps.
    pub flux: Vec<f64>,
}

/// Runs one trajectory with conditional sampling.
pub fn run_correlation(params: &Params, seed: u64) -> Result<CorrelationRun> {
    let sim = Simulation::new(params, seed);
    drive_correlation(sim, seed)
}

/// Same as [`run_correlation`] for fixed atoms at the given couplings.
pub fn run_correlation_stationary(params: &Params, seed: u64, couplings: &[f64]) -> Result<CorrelationRun> {
    let sim = Simulation::stationary(params, seed, couplings);
    drive_correlation(sim, seed)
}

fn drive_correlation(mut sim: Simulation<'_>, seed: u64) -> Result<CorrelationRun> {
    let p = sim.params;
    let s = &p.sim;
    let burn = (s.burn_in / s.dt).round() as u64;
    let total = burn + (s.duration / s.dt).round() as u64;
    let lifetime = s.sample_lifetime_steps() as u64;
    let bin_steps = s.tau_bin_steps as u64;
    let mut batch = BatchSums::new(s.tau_bins);
    let mut flux = Vec::new();
    let (mut v_sum, mut h_sum, mut at_sum, mut cs_sum, mut n_obs) = (0.0, 0.0, 0.0, 0.0, 0u64);
    let (mut spont, mut cav) = (0u64, 0u64);
    for k in 0..total {
        if k >= burn {
            if (k - burn) % s.sample_every as u64 == 0 {
                let sample = sim.begin_sample();
                batch.weight_sum += sample.weight;
                batch.samples += 1;
            }
            if (k - burn) % s.flux_stride as u64 == 0 {
                let o = sim.observables();
                flux.push(o.detected_flux);
                v_sum += o.v_photons;
                h_sum += o.h_photons;
                at_sum += o.atoms as f64;
                cs_sum += o.coupling_sum;
                n_obs += 1;
            }
        }
        if !sim.samples.is_empty() {
            let beta2 = sim.beta();
            for slot in 0..sim.samples.len() {
                let sample = sim.samples[slot];
                let age = sim.step_index - sample.start_step;
                if !sample.valid || age % bin_steps != 0 {
                    continue;
                }
                let values = sample_channels(&sim.atoms, slot, &sample, beta2);
                batch.add((age / bin_steps) as usize, &values)?;
            }
            sim.retire_samples(lifetime.saturating_sub(1));
        }
        let report = sim.step()?;
        for e in &report.events {
            if e.atom_id.is_some() {
                spont += 1;
            } else {
                cav += 1;
            }
        }
    }
    let n = n_obs.max(1) as f64;
    Ok(CorrelationRun {
        seed,
        batch,
        mean_v_photons: v_sum / n,
        mean_h_photons: h_sum / n,
        mean_atoms: at_sum / n,
        mean_coupling_sum: cs_sum / n,
        spontaneous_jumps: spont,
        cavity_emissions: cav,
        dropped_arrivals: sim.dropped_arrivals,
        flux,
    })
}

/// Ensemble result: merged accumulator plus per-seed run summaries.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub accumulator: CorrelationAccumulator,
    pub runs: Vec<CorrelationRun>,
}

impl Ensemble {
    pub fn mean_v_photons(&self) -> f64 {
        self.runs.iter().map(|r| r.mean_v_photons).sum::<f64>() / self.runs.len().max(1) as f64
    }
}

/// Runs one trajectory per seed on `workers` threads and merges the batches.
pub fn run_ensemble(params: &Params, seeds: &[u64], workers: usize) -> Result<Ensemble> {
    run_ensemble_with(seeds, workers, params, |p, seed| run_correlation(p, seed))
}

pub fn run_ensemble_with<F>(seeds: &[u64], workers: usize, params: &Params, run: F) -> Result<Ensemble>
where
    F: Fn(&Params, u64) -> Result<CorrelationRun> + Sync,
{
    if seeds.is_empty() {
        return Err(Error::invalid("seeds", "at least one seed is required"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Logic(format!("worker pool: {e}")))?;
    let runs: Vec<CorrelationRun> =
        pool.install(|| seeds.par_iter().map(|&seed| run(params, seed)).collect::<Result<Vec<_>>>())?;
    let s = &params.sim;
    let mut acc = CorrelationAccumulator::new(s.tau_bin(), s.tau_bins);
    for r in &runs {
        acc.insert(r.seed, r.batch.clone())?;
    }
    Ok(Ensemble { accumulator: acc, runs })
}

/// Result of a spectral peak search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BeatEstimate {
    Beat {
        frequency: f64,
        uncertainty: f64,
        /// Peak power over the median spectral floor.
        significance: f64,
    },
    NoBeat {
        significance: f64,
    },
}

impl BeatEstimate {
    pub fn frequency(&self) -> Option<f64> {
        match self {
            BeatEstimate::Beat { frequency, .. } => Some(*frequency),
            BeatEstimate::NoBeat { .. } => None,
        }
    }
}

/// Frequency band searched for the peak, Hz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeatWindow {
    pub f_min: f64,
    pub f_max: f64,
}

impl Default for BeatWindow {
    fn default() -> Self {
        Self {
            f_min: 1.0e6,
            f_max: 20.0e6,
        }
    }
}

/// Dominant oscillation frequency of a uniformly sampled curve, normally the
/// non-negative delays of a `g2`.
///
/// The slow trend is removed first: the curve minus its Gaussian low-pass of
/// width `1 / f_min` (mirrored at both ends), whose gain differs from one by
/// under `exp(-2 pi^2)` anywhere above `f_min`; without `f_min` only the mean
/// is removed. Then Hann-tapered, zero-padded eight-fold; the peak inside the
/// window is refined with a parabola through the three highest bins; a
/// maximum that is not a local peak (window edge) counts as no beat. The
/// spectral floor is the median power above `f_min`, but at least 40 dB
/// under the strongest component. The quoted uncertainty scales the bin
/// width by `sqrt(floor / curvature)`.
pub fn beat_frequency(values: &[f64], spacing: f64, window: BeatWindow) -> Result<BeatEstimate> {
    let n = values.len();
    if n < 8 || !(spacing > 0.0) {
        return Err(Error::InsufficientData("curve too short for a spectrum".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InsufficientData("curve has empty delay bins".into()));
    }
    let flat = if window.f_min > 0.0 {
        remove_trend(values, 1.0 / (window.f_min * spacing))
    } else {
        values.to_vec()
    };
    let mean = flat.iter().sum::<f64>() / n as f64;
    let len = (8 * n).next_power_of_two();
    let mut buf: Vec<rustfft::num_complex::Complex<f64>> = vec![rustfft::num_complex::Complex::new(0.0, 0.0); len];
    for (k, v) in flat.iter().enumerate() {
        let w = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * k as f64 / (n - 1) as f64).cos();
        buf[k].re = (v - mean) * w;
    }
    FftPlanner::new().plan_fft_forward(len).process(&mut buf);
    let df = 1.0 / (len as f64 * spacing);
    let power: Vec<f64> = buf[..len / 2].iter().map(|c| c.norm_sqr()).collect();
    let lo = ((window.f_min / df).ceil() as usize).max(1);
    let hi = ((window.f_max / df).floor() as usize).min(power.len() - 2);
    if lo + 2 > hi {
        return Err(Error::InsufficientData("beat window outside the resolvable band".into()));
    }
    let (peak, &p0) = power[lo..=hi]
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, p)| (i + lo, p))
        .expect("non-empty window");
    let mut floor_vals: Vec<f64> = power[lo..].to_vec();
    floor_vals.sort_by(f64::total_cmp);
    // never trust more than 40 dB below the strongest component: taper
    // sidelobes of a noiseless curve sit far under that
    let strongest = power.iter().copied().fold(0.0, f64::max);
    let floor = floor_vals[floor_vals.len() / 2].max(1e-4 * strongest).max(f64::MIN_POSITIVE);
    let significance = p0 / floor;
    let (ym, y0, yp) = (power[peak - 1], p0, power[peak + 1]);
    // a maximum on the window edge is the tail of something outside it
    if significance < 3.0 || ym >= y0 || yp >= y0 {
        return Ok(BeatEstimate::NoBeat { significance });
    }
    let curvature = ym - 2.0 * y0 + yp;
    let shift = if curvature < 0.0 {
        (0.5 * (ym - yp) / curvature).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    let frequency = (peak as f64 + shift) * df;
    let uncertainty = if curvature < 0.0 {
        df * (floor / -curvature).sqrt()
    } else {
        df
    };
    Ok(BeatEstimate::Beat {
        frequency,
        uncertainty,
        significance,
    })
}

/// `values` minus their Gaussian smoothing with width `sigma` samples.
fn remove_trend(values: &[f64], sigma: f64) -> Vec<f64> {
    let n = values.len() as isize;
    let r = (4.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (0..=r).map(|k| (-0.5 * (k as f64 / sigma).powi(2)).exp()).collect();
    let norm = kernel[0] + 2.0 * kernel[1..].iter().sum::<f64>();
    // whole-sample mirror: -1 -> 0, n -> n - 1
    let at = |mut i: isize| {
        loop {
            if i < 0 {
                i = -i - 1;
            } else if i >= n {
                i = 2 * n - i - 1;
            } else {
                return values[i as usize];
            }
        }
    };
    (0..n)
        .map(|i| {
            let smooth = kernel[0] * at(i) + (1..=r).map(|k| kernel[k as usize] * (at(i - k) + at(i + k))).sum::<f64>();
            at(i) - smooth / norm
        })
        .collect()
}

/// Circular intensity autocorrelation `<F(t) F(t + k h)> / <F>^2`, `k = 0..lags`.
///
/// This is the coincidence rate a detector pair would register from a
/// periodically repeated classical rate `F`.
pub fn trace_g2(trace: &[f64], lags: usize) -> Result<Vec<f64>> {
    let n = trace.len();
    if n == 0 {
        return Err(Error::InsufficientData("empty flux trace".into()));
    }
    let mean = trace.iter().sum::<f64>() / n as f64;
    if !(mean > 0.0) {
        return Err(Error::InsufficientData("flux trace has zero mean".into()));
    }
    let mut buf: Vec<rustfft::num_complex::Complex<f64>> =
        trace.iter().map(|&x| rustfft::num_complex::Complex::new(x, 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for c in buf.iter_mut() {
        *c = rustfft::num_complex::Complex::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let scale = 1.0 / (n as f64 * n as f64 * mean * mean);
    Ok((0..=lags).map(|k| buf[k % n].re * scale).collect())
}

/// CSV with `#` parameter echo, the seed list and one row per delay.
pub fn curve_csv(curve: &G2Curve, params: Option<&Params>, seeds: &[u64]) -> String {
    let mut s = String::new();
    if let Some(p) = params {
        for line in p.config.to_text().lines() {
            let _ = writeln!(s, "# {line}");
        }
    }
    let seed_list: Vec<String> = seeds.iter().map(u64::to_string).collect();
    let _ = writeln!(s, "# seeds = {}", seed_list.join(","));
    let _ = writeln!(s, "# samples = {}, batches = {}", curve.samples, curve.batches);
    s.push_str("tau_s,g2_total,g2_one_atom,g2_two_atom,g2_homodyne,g2_residual,stderr_total\n");
    for i in 0..curve.tau.len() {
        let _ = write!(s, "{:.6e}", curve.tau[i]);
        for ch in &curve.channels {
            let _ = write!(s, ",{:.10e}", ch[i]);
        }
        let _ = writeln!(s, ",{:.10e}", curve.stderr[i]);
    }
    s
}

/// Reads `(tau, g2_total)` back from a curve CSV.
pub fn parse_curve_csv(text: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut tau = Vec::new();
    let mut g2 = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("tau") {
            continue;
        }
        let mut cols = line.split(',');
        let parse = |c: Option<&str>| -> Result<f64> {
            c.and_then(|x| x.trim().parse::<f64>().ok()).ok_or_else(|| Error::Format {
                record: i + 1,
                message: "expected numeric tau and g2 columns".into(),
            })
        };
        tau.push(parse(cols.next())?);
        g2.push(parse(cols.next())?);
    }
    if tau.len() < 2 {
        return Err(Error::InsufficientData("curve has fewer than two rows".into()));
    }
    Ok((tau, g2))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_cosine_frequency() {
        let h = 10e-9;
        let f = 4.67e6;
        let v: Vec<f64> = (0..801).map(|k| (2.0 * std::f64::consts::PI * f * k as f64 * h).cos()).collect();
        let est = beat_frequency(&v, h, BeatWindow::default()).unwrap();
        let got = est.frequency().unwrap();
        let grid = 1.0 / (801.0 * h);
        assert!((got - f).abs() < grid, "{got}");
    }

    #[test]
    fn flat_curve_has_no_beat() {
        let v = vec![1.0; 400];
        let mut noisy = v.clone();
        let mut x = 0.3f64;
        for n in noisy.iter_mut() {
            x = (x * 3.9 * (1.0 - x)).fract();
            *n += 1e-3 * (x - 0.5);
        }
        assert!(matches!(
            beat_frequency(&noisy, 10e-9, BeatWindow::default()).unwrap(),
            BeatEstimate::NoBeat { .. }
        ));
    }

    fn envelope(k: usize) -> f64 {
        let t = k as f64 * 10e-9;
        1.0 + 4.0 * (-(t / 1.8e-6).powi(2)).exp()
    }

    #[test]
    fn transit_envelope_alone_has_no_beat() {
        let v: Vec<f64> = (0..601).map(envelope).collect();
        assert!(matches!(
            beat_frequency(&v, 10e-9, BeatWindow::default()).unwrap(),
            BeatEstimate::NoBeat { .. }
        ));
    }

    #[test]
    fn weak_beat_on_a_large_envelope() {
        let f = 1.87e6;
        for phase in [0.0, 1.0, 2.0, 3.0] {
            let v: Vec<f64> = (0..601)
                .map(|k| {
                    let e = envelope(k) - 1.0;
                    1.0 + e * (1.0 + 0.05 * (2.0 * std::f64::consts::PI * f * k as f64 * 10e-9 + phase).cos())
                })
                .collect();
            let got = beat_frequency(&v, 10e-9, BeatWindow::default()).unwrap().frequency().unwrap();
            assert!((got - f).abs() < 0.02e6, "phase {phase}: {got}");
        }
    }

    #[test]
    fn trace_g2_of_constant_is_one() {
        let g = trace_g2(&[2.0; 64], 10).unwrap();
        assert!(g.iter().all(|x| (x - 1.0).abs() < 1e-12));
    }

    #[test]
    fn trace_g2_of_square_wave() {
        let t: Vec<f64> = (0..100).map(|k| if k % 10 < 5 { 2.0 } else { 0.0 }).collect();
        let g = trace_g2(&t, 10).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-12);
        assert!(g[5].abs() < 1e-12);
        assert!((g[10] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_bin_is_a_logic_error() {
        let mut b = BatchSums::new(3);
        assert!(matches!(b.add(3, &ChannelValues::default()), Err(Error::Logic(_))));
    }

    #[test]
    fn zero_weight_is_insufficient() {
        let acc = CorrelationAccumulator::new(1e-8, 4);
        assert!(matches!(acc.finalize(Normalization::default()), Err(Error::InsufficientData(_))));
    }
}
