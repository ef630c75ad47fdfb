//! Quantum-trajectory engine for the driven beam.
//!
//! The joint state is kept in the truncated product expansion: every atom
//! owns a zero-photon pair `a`, one-photon pairs `a'` and two-photon pairs
//! `a''` (see [`chain`]), and the H-mode photon sectors are implied by the
//! block structure. Each atom's `a` is renormalized after every step; the
//! same factor is applied to all blocks of that atom, which rescales the
//! whole expansion uniformly.
//!
//! Spontaneous emission uses waiting-time sampling per atom: a uniform
//! threshold is drawn after each jump and the jump fires when the
//! accumulated no-jump probability of that atom's `a` block crosses it.

pub mod beam;
pub mod chain;

use std::collections::VecDeque;
use std::fmt::Write as _;

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::Params;
use chain::{Chain, CondChain, StepCoefficients, COND_DIM, DIM, PAIR_LAYOUT, ZERO};

pub use beam::mode_coupling;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JumpKind {
    SpontaneousPi,
    SpontaneousSigmaPlus,
    SpontaneousSigmaMinus,
    CavityH,
}

impl JumpKind {
    pub fn from_q(q: i32) -> Self {
        match q {
            1 => JumpKind::SpontaneousSigmaPlus,
            -1 => JumpKind::SpontaneousSigmaMinus,
            _ => JumpKind::SpontaneousPi,
        }
    }

    pub fn q(self) -> Option<i32> {
        match self {
            JumpKind::SpontaneousPi => Some(0),
            JumpKind::SpontaneousSigmaPlus => Some(1),
            JumpKind::SpontaneousSigmaMinus => Some(-1),
            JumpKind::CavityH => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            JumpKind::SpontaneousPi => "pi",
            JumpKind::SpontaneousSigmaPlus => "sigma+",
            JumpKind::SpontaneousSigmaMinus => "sigma-",
            JumpKind::CavityH => "cavity_h",
        }
    }
}

/// One quantum jump. `atom_id` is set for spontaneous emission only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpEvent {
    pub kind: JumpKind,
    pub atom_id: Option<u64>,
    pub time: f64,
}

/// Event log, one `time kind atom_id` record per line.
pub fn format_event_log(events: &[JumpEvent]) -> String {
    let mut s = String::new();
    for e in events {
        let id = e.atom_id.map_or_else(|| "-".to_string(), |i| i.to_string());
        let _ = writeln!(s, "{:.12e} {} {}", e.time, e.kind.label(), id);
    }
    s
}

#[derive(Debug, Clone)]
pub struct AtomInstance {
    pub id: u64,
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    /// Centre sublevel `m_i` of the expansion.
    pub centre: i32,
    pub initial_centre: i32,
    pub chain: Chain,
    /// Conditional `(b', b'')` blocks, aligned with the live samples.
    pub conditional: VecDeque<CondChain>,
    /// Overrides the mode profile (stationary atoms).
    pub fixed_coupling: Option<f64>,
    pub sigma_plus: u32,
    pub sigma_minus: u32,
    /// Net centre shift from resolved cavity emissions.
    pub cavity_shift: i32,
    threshold: f64,
    survival: f64,
}

impl AtomInstance {
    fn fresh(id: u64, position: [f64; 3], velocity: [f64; 3], centre: i32, live: usize, threshold: f64) -> Self {
        let mut chain = [ZERO; DIM];
        chain[0] = C64::new(1.0, 0.0);
        Self {
            id,
            position,
            velocity,
            centre,
            initial_centre: centre,
            chain,
            conditional: std::iter::repeat_n([ZERO; COND_DIM], live).collect(),
            fixed_coupling: None,
            sigma_plus: 0,
            sigma_minus: 0,
            cavity_shift: 0,
            threshold,
            survival: 1.0,
        }
    }

    pub fn a(&self) -> [C64; 2] {
        [self.chain[0], self.chain[1]]
    }

    pub fn a1(&self) -> &[C64] {
        &self.chain[2..6]
    }

    pub fn a2(&self) -> &[C64] {
        &self.chain[6..12]
    }

    /// Centre predicted from the jump record alone.
    pub fn ledger_centre(&self) -> i32 {
        self.initial_centre + self.sigma_minus as i32 - self.sigma_plus as i32 + self.cavity_shift
    }

    fn scale(&mut self, s: f64) {
        for x in self.chain.iter_mut() {
            *x *= s;
        }
        for c in self.conditional.iter_mut() {
            for x in c.iter_mut() {
                *x *= s;
            }
        }
    }
}

/// A conditional sample started at `start_step`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub start_step: u64,
    /// Background amplitude at the first detection.
    pub beta1: C64,
    /// First-detection probability density (photons).
    pub weight: f64,
    /// Conditional weight carried off by departed atoms.
    pub ghost: f64,
    pub valid: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observables {
    pub time: f64,
    /// `<b^dag b>` of the scattered H field.
    pub h_photons: f64,
    /// Detected photon flux `2 kappa |(b + beta) psi|^2`, photons/s.
    pub detected_flux: f64,
    pub v_photons: f64,
    pub atoms: usize,
    /// `sum_i (g_i / g_max)^2`.
    pub coupling_sum: f64,
}

#[derive(Debug, Clone, Default)]
pub struct StepReport {
    pub events: Vec<JumpEvent>,
    /// Ids of atoms that left during the step.
    pub departed: Vec<u64>,
}

/// `<x|y>` of two `(g, e)` pairs.
#[inline]
pub fn pair_dot(x: &[C64], y: &[C64]) -> C64 {
    x[0].conj() * y[0] + x[1].conj() * y[1]
}

#[inline]
pub fn norm_sqr(x: &[C64]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum()
}

#[inline]
pub fn dot(x: &[C64], y: &[C64]) -> C64 {
    x.iter().zip(y).map(|(a, b)| a.conj() * b).sum()
}

/// `|S2|^2` of the two-photon sector `1/2 sum a'_i a'_j + sum a''_i`.
pub fn two_photon_norm(atoms: &[AtomInstance]) -> f64 {
    let mut s1 = 0.0;
    let mut s1_sq = 0.0;
    let mut doubles = 0.0;
    let mut u = ZERO;
    let mut u_sq = 0.0;
    for at in atoms {
        let n1 = norm_sqr(at.a1());
        s1 += n1;
        s1_sq += n1 * n1;
        doubles += norm_sqr(at.a2());
        let ov = pair_dot(&at.chain[0..2], &at.chain[8..10]);
        u += ov;
        u_sq += ov.norm_sqr();
    }
    0.5 * (s1 * s1 - s1_sq) + doubles + u.norm_sqr() - u_sq
}

pub fn one_photon_norm(atoms: &[AtomInstance]) -> f64 {
    atoms.iter().map(|a| norm_sqr(a.a1())).sum()
}

/// Trajectory state plus the live conditional samples.
pub struct Simulation<'p> {
    pub params: &'p Params,
    pub atoms: Vec<AtomInstance>,
    pub alpha: C64,
    pub time: f64,
    pub step_index: u64,
    pub samples: VecDeque<Sample>,
    pub dropped_arrivals: u64,
    arrival_rate: f64,
    next_id: u64,
    rng: ChaCha8Rng,
}

impl<'p> Simulation<'p> {
    /// Beam-fed simulation with the region pre-filled at its mean density.
    pub fn new(params: &'p Params, seed: u64) -> Self {
        let mut sim = Self::empty(params, seed, params.derived.arrival_rate);
        let fill = beam::initial_fill(&params.cavity, &params.beam, sim.arrival_rate, &mut sim.rng);
        for e in fill {
            sim.push_atom(e);
        }
        sim
    }

    /// Fixed atoms at the given couplings (rad/s), all pumped to `m = 0`.
    pub fn stationary(params: &'p Params, seed: u64, couplings: &[f64]) -> Self {
        let mut sim = Self::empty(params, seed, 0.0);
        for &g in couplings {
            let e = beam::Entry {
                position: [0.0; 3],
                velocity: [0.0; 3],
                centre: 0,
            };
            sim.push_atom(e);
            sim.atoms.last_mut().expect("just pushed").fixed_coupling = Some(g);
        }
        sim
    }

    fn empty(params: &'p Params, seed: u64, arrival_rate: f64) -> Self {
        Self {
            params,
            atoms: Vec::new(),
            alpha: C64::new(params.drive.v_photons_empty.sqrt(), 0.0),
            time: 0.0,
            step_index: 0,
            samples: VecDeque::new(),
            dropped_arrivals: 0,
            arrival_rate,
            next_id: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn push_atom(&mut self, e: beam::Entry) {
        if self.atoms.len() >= self.params.beam.max_atoms {
            self.dropped_arrivals += 1;
            return;
        }
        let threshold = self.rng.random::<f64>();
        let atom = AtomInstance::fresh(self.next_id, e.position, e.velocity, e.centre, self.samples.len(), threshold);
        self.next_id += 1;
        self.atoms.push(atom);
    }

    pub fn alpha0(&self) -> f64 {
        self.params.drive.v_photons_empty.sqrt()
    }

    pub fn coupling(&self, atom: &AtomInstance) -> f64 {
        atom.fixed_coupling.unwrap_or_else(|| {
            beam::mode_coupling(atom.position, &self.params.cavity, self.params.beam.standing_wave)
        })
    }

    /// Background field amplitude in the detected mode.
    pub fn beta(&self) -> C64 {
        let d = &self.params.drive;
        let b = C64::from_polar(self.params.derived.beta_abs, d.beta_phase);
        let a0 = self.alpha0();
        if d.beta_follows_drive && a0 > 0.0 {
            b * self.alpha / a0
        } else {
            b
        }
    }

    /// Quasi-static driven-mode amplitude for the current atomic dipoles.
    fn update_alpha(&mut self) {
        let a0 = self.alpha0();
        if !self.params.sim.absorption {
            self.alpha = C64::new(a0, 0.0);
            return;
        }
        let kappa = self.params.cavity.kappa;
        let mut source = ZERO;
        for at in &self.atoms {
            let g = self.coupling(at);
            let sigma = at.chain[0].conj() * at.chain[1];
            source += sigma * (g * self.params.scheme.cg_dyn(at.centre, 0));
        }
        self.alpha = C64::new(a0, 0.0) - C64::i() * source / kappa;
    }

    fn coefficients(&self, atom: &AtomInstance, coupling: f64) -> StepCoefficients {
        step_coefficients(self.params, self.alpha, atom.centre, coupling)
    }


    pub fn observables(&self) -> Observables {
        let n1 = one_photon_norm(&self.atoms);
        let n2 = two_photon_norm(&self.atoms);
        let beta = self.beta();
        let b2 = beta.norm_sqr();
        let g_max = self.params.cavity.g_max;
        let coupling_sum = if g_max > 0.0 {
            self.atoms.iter().map(|a| (self.coupling(a) / g_max).powi(2)).sum()
        } else {
            0.0
        };
        Observables {
            time: self.time,
            h_photons: n1 + 4.0 * n2,
            detected_flux: 2.0 * self.params.cavity.kappa * first_detection_weight(n1, n2, b2),
            v_photons: self.alpha.norm_sqr(),
            atoms: self.atoms.len(),
            coupling_sum,
        }
    }

    /// One integration step of length `params.sim.dt`.
    pub fn step(&mut self) -> Result<StepReport> {
        let p = self.params;
        let dt = p.sim.dt;
        let mut report = StepReport::default();
        self.update_alpha();
        let shift = C64::new(p.cavity.kappa * dt, p.cavity.birefringence_split * dt).exp();

        for idx in 0..self.atoms.len() {
            let mid = {
                let at = &self.atoms[idx];
                match at.fixed_coupling {
                    Some(g) => g,
                    None => {
                        let mut pos = at.position;
                        for k in 0..3 {
                            pos[k] += 0.5 * dt * at.velocity[k];
                        }
                        beam::mode_coupling(pos, &p.cavity, p.beam.standing_wave)
                    }
                }
            };
            let coeffs = self.coefficients(&self.atoms[idx], mid);
            let gen = chain::generator(&p.scheme, &coeffs);
            let u = chain::propagator(&gen, dt);
            let evolved = chain::apply(&u, &self.atoms[idx].chain);
            let n_end = chain::base_norm_sqr(&evolved);
            if n_end > 1.0 + 1e-9 {
                return Err(Error::Instability {
                    dt,
                    message: format!("zero-photon norm grew to {n_end}"),
                });
            }
            let at = &mut self.atoms[idx];
            if at.survival * n_end > at.threshold {
                at.survival *= n_end;
                at.chain = evolved;
                for c in at.conditional.iter_mut() {
                    *c = chain::apply_conditional(&u, shift, c);
                }
                at.scale(1.0 / n_end.sqrt());
                continue;
            }
            // The jump time is located by log-linear interpolation of the
            // no-jump probability across the step.
            let frac = if n_end > 0.0 {
                ((at.survival / at.threshold).ln() / (1.0 / n_end).ln()).clamp(0.0, 1.0)
            } else {
                0.5
            };
            let t1 = frac * dt;
            let u1 = chain::propagator(&gen, t1);
            let shift1 = C64::new(p.cavity.kappa * t1, p.cavity.birefringence_split * t1).exp();
            at.chain = chain::apply(&u1, &at.chain);
            for c in at.conditional.iter_mut() {
                *c = chain::apply_conditional(&u1, shift1, c);
            }
            let n1 = chain::base_norm_sqr(&at.chain);
            at.scale(1.0 / n1.sqrt());
            let kind = spontaneous_jump(at, &p.scheme, p.sim.sigma_decay, &mut self.rng)?;
            report.events.push(JumpEvent {
                kind,
                atom_id: Some(at.id),
                time: self.time + t1,
            });
            at.threshold = self.rng.random::<f64>();
            let t2 = dt - t1;
            let gen2 = chain::generator(&p.scheme, &step_coefficients(p, self.alpha, at.centre, mid));
            let u2 = chain::propagator(&gen2, t2);
            let shift2 = C64::new(p.cavity.kappa * t2, p.cavity.birefringence_split * t2).exp();
            at.chain = chain::apply(&u2, &at.chain);
            for c in at.conditional.iter_mut() {
                *c = chain::apply_conditional(&u2, shift2, c);
            }
            let n2 = chain::base_norm_sqr(&at.chain);
            at.survival = n2;
            at.scale(1.0 / n2.sqrt());
        }

        // Cavity emissions are sampled from the scattered-photon flux.
        let n_h = one_photon_norm(&self.atoms) + 4.0 * two_photon_norm(&self.atoms);
        let p_cav = 2.0 * p.cavity.kappa * n_h * dt;
        let u: f64 = self.rng.random();
        if u < p_cav {
            report.events.push(JumpEvent {
                kind: JumpKind::CavityH,
                atom_id: None,
                time: self.time + dt,
            });
            if p.sim.cavity_jumps {
                self.resolve_cavity_emission()?;
            }
        }

        self.advance_beam(dt, &mut report);
        self.time += dt;
        self.step_index += 1;
        Ok(report)
    }

    fn advance_beam(&mut self, dt: f64, report: &mut StepReport) {
        let p = self.params;
        let h = p.beam.region_half_width;
        for at in self.atoms.iter_mut() {
            if at.fixed_coupling.is_none() {
                for k in 0..3 {
                    at.position[k] += at.velocity[k] * dt;
                }
            }
        }
        let mut kept = Vec::with_capacity(self.atoms.len());
        for at in self.atoms.drain(..) {
            if at.fixed_coupling.is_none() && at.position[0] > h {
                for (s, c) in self.samples.iter_mut().zip(at.conditional.iter()) {
                    s.ghost += norm_sqr(&c[0..4]);
                }
                report.departed.push(at.id);
            } else {
                kept.push(at);
            }
        }
        self.atoms = kept;
        for lead in beam::arrivals(self.arrival_rate, dt, &mut self.rng) {
            let e = beam::sample_entry(&p.cavity, &p.beam, lead, &mut self.rng);
            self.push_atom(e);
        }
    }

    /// Collapses the expansion onto one emitting atom and helicity, chosen by
    /// weight. Ground coherence between the two helicities is not retained.
    fn resolve_cavity_emission(&mut self) -> Result<()> {
        let weights: Vec<f64> = self.atoms.iter().map(|a| norm_sqr(a.a1())).collect();
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::Logic("cavity emission with no one-photon amplitude".into()));
        }
        let mut r = self.rng.random::<f64>() * total;
        let mut pick = weights.len() - 1;
        for (i, w) in weights.iter().enumerate() {
            if r < *w {
                pick = i;
                break;
            }
            r -= w;
        }
        let at = &mut self.atoms[pick];
        let minus = norm_sqr(&at.chain[2..4]);
        let plus = norm_sqr(&at.chain[4..6]);
        let down = self.rng.random::<f64>() * (minus + plus) < minus;
        let old = at.chain;
        let mut chain = [ZERO; DIM];
        let (pair, step, lower, upper) = if down { (1, -1, 3, 4) } else { (2, 1, 4, 5) };
        chain[0] = old[2 * pair];
        chain[1] = old[2 * pair + 1];
        for (dst, src) in [(1usize, lower), (2usize, upper)] {
            chain[2 * dst] = 2.0 * old[2 * src];
            chain[2 * dst + 1] = 2.0 * old[2 * src + 1];
        }
        let n = chain::base_norm_sqr(&chain);
        if n <= 0.0 {
            return Err(Error::Logic("resolved emission left an empty atom".into()));
        }
        at.chain = chain;
        at.centre += step;
        at.cavity_shift += step;
        at.scale(1.0 / n.sqrt());
        at.survival = 1.0;
        at.threshold = self.rng.random::<f64>();
        for s in self.samples.iter_mut() {
            s.valid = false;
        }
        Ok(())
    }

    /// Starts a conditional sample: `b' = a'`, `b'' = 2 a''` on every atom.
    pub fn begin_sample(&mut self) -> Sample {
        let n1 = one_photon_norm(&self.atoms);
        let n2 = two_photon_norm(&self.atoms);
        let beta1 = self.beta();
        let weight = first_detection_weight(n1, n2, beta1.norm_sqr());
        for at in self.atoms.iter_mut() {
            let mut c = [ZERO; COND_DIM];
            c[..4].copy_from_slice(&at.chain[2..6]);
            for k in 4..COND_DIM {
                c[k] = 2.0 * at.chain[k + 2];
            }
            at.conditional.push_back(c);
        }
        let s = Sample {
            start_step: self.step_index,
            beta1,
            weight,
            ghost: 0.0,
            valid: true,
        };
        self.samples.push_back(s);
        s
    }

    /// Drops samples older than `max_age` steps.
    pub fn retire_samples(&mut self, max_age: u64) {
        while let Some(s) = self.samples.front() {
            if self.step_index - s.start_step <= max_age {
                break;
            }
            self.samples.pop_front();
            for at in self.atoms.iter_mut() {
                at.conditional.pop_front();
            }
        }
    }

    /// Applies a spontaneous-emission jump of polarization `q` to atom `id`.
    pub fn apply_jump(&mut self, id: u64, q: i32) -> Result<()> {
        let at = self
            .atoms
            .iter_mut()
            .find(|a| a.id == id)
            .ok_or_else(|| Error::Logic(format!("no atom with id {id}")))?;
        let weight = channel_weight(at, &self.params.scheme, q, self.params.sim.sigma_decay);
        if weight <= 0.0 {
            return Err(Error::Logic(format!("jump q={q} on atom {id} has zero probability")));
        }
        jump_blocks(at, &self.params.scheme, q, self.params.sim.sigma_decay);
        Ok(())
    }
}

pub fn step_coefficients(p: &Params, alpha: C64, centre: i32, coupling: f64) -> StepCoefficients {
    StepCoefficients {
        centre,
        coupling,
        alpha,
        delta_g: p.derived.zeeman.delta_g,
        delta_e: p.derived.zeeman.delta_e,
        detuning: p.drive.detuning,
        gamma: p.cavity.gamma,
        kappa: p.cavity.kappa,
        birefringence: p.cavity.birefringence_split,
        cavity_coupling: p.sim.cavity_coupling,
    }
}

/// `|(b + beta) psi|^2` for one- and two-photon norms `n1`, `|S2|^2 = n2`.
pub fn first_detection_weight(n1: f64, n2: f64, beta_sq: f64) -> f64 {
    n1 + beta_sq + 4.0 * n2 + beta_sq * n1 + 2.0 * beta_sq * n2
}

fn jump_coefficient(scheme: &crate::angmom::LevelScheme, m_excited: i32, q: i32, sigma_decay: bool) -> f64 {
    if !scheme.excited_valid(m_excited) {
        return 0.0;
    }
    if !sigma_decay {
        return if q == 0 && scheme.ground_valid(m_excited) { 1.0 } else { 0.0 };
    }
    scheme.cg(m_excited - q, q)
}

fn channel_weight(at: &AtomInstance, scheme: &crate::angmom::LevelScheme, q: i32, sigma_decay: bool) -> f64 {
    jump_coefficient(scheme, at.centre, q, sigma_decay).powi(2) * at.chain[1].norm_sqr()
}

/// Maps every pair `(g, e) -> (c e, 0)`, shifts the centre to `m - q` and
/// renormalizes on the new zero-photon pair.
fn jump_blocks(at: &mut AtomInstance, scheme: &crate::angmom::LevelScheme, q: i32, sigma_decay: bool) {
    let mut coeff = [0.0; chain::PAIRS];
    for (p, &(offset, _)) in PAIR_LAYOUT.iter().enumerate() {
        coeff[p] = jump_coefficient(scheme, at.centre + offset, q, sigma_decay);
    }
    for p in 0..chain::PAIRS {
        at.chain[2 * p] = at.chain[2 * p + 1] * coeff[p];
        at.chain[2 * p + 1] = ZERO;
    }
    for c in at.conditional.iter_mut() {
        for p in 1..chain::PAIRS {
            let k = 2 * (p - 1);
            c[k] = c[k + 1] * coeff[p];
            c[k + 1] = ZERO;
        }
    }
    at.centre -= q;
    match q {
        1 => at.sigma_plus += 1,
        -1 => at.sigma_minus += 1,
        _ => {}
    }
    let n = chain::base_norm_sqr(&at.chain);
    at.scale(1.0 / n.sqrt());
}

fn spontaneous_jump<R: Rng>(
    at: &mut AtomInstance,
    scheme: &crate::angmom::LevelScheme,
    sigma_decay: bool,
    rng: &mut R,
) -> Result<JumpKind> {
    let w: Vec<f64> = [-1, 0, 1].iter().map(|&q| channel_weight(at, scheme, q, sigma_decay)).collect();
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Logic(format!("atom {} jumped with no excited amplitude", at.id)));
    }
    let mut r = rng.random::<f64>() * total;
    let mut q = 1;
    for (k, wk) in w.iter().enumerate() {
        if r < *wk {
            q = k as i32 - 1;
            break;
        }
        r -= wk;
    }
    if w[(q + 1) as usize] <= 0.0 {
        q = if w[1] > 0.0 { 0 } else if w[0] > 0.0 { -1 } else { 1 };
    }
    jump_blocks(at, scheme, q, sigma_decay);
    Ok(JumpKind::from_q(q))
}

/// Output of [`run_trajectory`].
#[derive(Debug, Clone, Default)]
pub struct TrajectoryRecord {
    pub observables: Vec<Observables>,
    pub events: Vec<JumpEvent>,
    pub dropped_arrivals: u64,
    /// `(atom id, ledger centre, actual centre)` checked at every jump.
    pub ledger_violations: Vec<(u64, i32, i32)>,
}

/// Runs the base state for `duration` seconds without conditional samples.
pub fn run_trajectory(params: &Params, duration: f64, seed: u64) -> Result<TrajectoryRecord> {
    let mut sim = Simulation::new(params, seed);
    run_for(&mut sim, duration)
}

pub fn run_for(sim: &mut Simulation<'_>, duration: f64) -> Result<TrajectoryRecord> {
    let steps = (duration / sim.params.sim.dt).round() as u64;
    let stride = sim.params.sim.flux_stride as u64;
    let mut rec = TrajectoryRecord::default();
    for k in 0..steps {
        if k % stride == 0 {
            rec.observables.push(sim.observables());
        }
        let report = sim.step()?;
        for e in &report.events {
            if let Some(id) = e.atom_id {
                if let Some(at) = sim.atoms.iter().find(|a| a.id == id) {
                    if at.ledger_centre() != at.centre {
                        rec.ledger_violations.push((id, at.ledger_centre(), at.centre));
                    }
                }
            }
        }
        rec.events.extend(report.events);
    }
    rec.dropped_arrivals = sim.dropped_arrivals;
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{load_config_str, Config};

    fn base_text() -> &'static str {
        "[field]\nb = 5\n[beam]\nnbar = 0.2\nregion = 1.25\n"
    }

    #[test]
    fn empty_cavity_is_a_fixed_point() {
        let p = load_config_str("[field]\nb = 5\n[beam]\nnbar = 0\n").unwrap();
        let mut sim = Simulation::new(&p, 1);
        let a0 = sim.alpha;
        for _ in 0..100 {
            let r = sim.step().unwrap();
            assert!(r.events.is_empty());
        }
        assert!(sim.atoms.is_empty());
        assert_eq!(sim.alpha, a0);
    }

    #[test]
    fn duration_zero_is_empty() {
        let p = load_config_str(base_text()).unwrap();
        let rec = run_trajectory(&p, 0.0, 3).unwrap();
        assert!(rec.observables.is_empty() && rec.events.is_empty());
    }

    #[test]
    fn same_seed_same_stream() {
        let p = load_config_str(base_text()).unwrap();
        let a = run_trajectory(&p, 20e-6, 11).unwrap();
        let b = run_trajectory(&p, 20e-6, 11).unwrap();
        assert_eq!(a.events, b.events);
        assert_eq!(a.observables, b.observables);
        assert_eq!(format_event_log(&a.events), format_event_log(&b.events));
    }

    #[test]
    fn pi_jump_from_excited_zero() {
        let p = load_config_str(base_text()).unwrap();
        let mut sim = Simulation::stationary(&p, 0, &[0.0]);
        sim.atoms[0].chain = [ZERO; DIM];
        sim.atoms[0].chain[1] = C64::new(1.0, 0.0);
        sim.apply_jump(0, 0).unwrap();
        let at = &sim.atoms[0];
        assert_eq!(at.centre, 0);
        assert!((at.chain[0].norm() - 1.0).abs() < 1e-14);
        assert_eq!(at.chain[1], ZERO);
    }

    #[test]
    fn sigma_plus_lowers_centre() {
        let p = load_config_str(base_text()).unwrap();
        let mut sim = Simulation::stationary(&p, 0, &[0.0]);
        sim.atoms[0].chain[1] = C64::new(0.5, 0.0);
        sim.apply_jump(0, 1).unwrap();
        assert_eq!(sim.atoms[0].centre, -1);
        assert_eq!(sim.atoms[0].ledger_centre(), -1);
    }

    #[test]
    fn jump_past_the_edge_is_rejected() {
        let p = load_config_str(base_text()).unwrap();
        let mut sim = Simulation::stationary(&p, 0, &[0.0]);
        let at = &mut sim.atoms[0];
        at.centre = 3;
        at.initial_centre = 3;
        at.chain[1] = C64::new(0.5, 0.0);
        // e_3 -> g_4 via sigma- is outside the ground manifold
        assert!(matches!(sim.apply_jump(0, -1), Err(Error::Logic(_))));
        assert!(sim.apply_jump(0, 1).is_ok());
    }

    #[test]
    fn jumps_also_act_on_conditional_blocks() {
        let p = load_config_str(base_text()).unwrap();
        let mut sim = Simulation::stationary(&p, 0, &[p.cavity.g_max]);
        for _ in 0..40 {
            sim.step().unwrap();
        }
        sim.begin_sample();
        let before = sim.atoms[0].conditional[0];
        let id = sim.atoms[0].id;
        sim.apply_jump(id, 0).unwrap();
        let after = sim.atoms[0].conditional[0];
        for k in (1..COND_DIM).step_by(2) {
            assert_eq!(after[k], ZERO);
        }
        assert!(norm_sqr(&before) > 0.0);
    }

    #[test]
    fn arrival_cap_counts_drops() {
        let cfg = Config {
            b_gauss: 5.0,
            beam: crate::params::BeamConfig {
                nbar: 0.2,
                region_waists: 1.25,
                max_atoms: 1,
                ..Default::default()
            },
            ..Default::default()
        };
        // the cap check rejects this config, so build the params by hand
        assert!(cfg.resolve().is_err());
        let mut p = load_config_str(base_text()).unwrap();
        p.beam.max_atoms = 1;
        let rec = run_trajectory(&p, 100e-6, 5).unwrap();
        assert!(rec.dropped_arrivals > 0);
        assert!(rec.observables.iter().all(|o| o.atoms <= 1));
    }
}
