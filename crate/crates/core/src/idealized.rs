//! Closed-form single-atom beat.
//!
//! An atom in `|g_m>` scatters a first H photon into `|g_{m-1}>` or
//! `|g_{m+1}>`. The two ground amplitudes precess with opposite phases
//! `+-delta_g tau`, are re-excited by the drive and return to `|g_m>` with a
//! second H photon; the two paths interfere at `2 delta_g`. This is the
//! small-`N` limit of the one-atom channel of the full simulation.
//!
//! The second-photon return to `|g_{m-+2}>` does not interfere; it enters only
//! as the incoherent weights `leak_minus`, `leak_plus` (zero drops it).

use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt::Write as _;

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::params::Params;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdealBeatParams {
    /// Ground Zeeman shift per unit `m`, rad/s.
    pub delta_g: f64,
    /// Excited Zeeman shift per unit `m`, rad/s.
    pub delta_e: f64,
    /// `delta_e - delta_g`, rad/s.
    pub delta: f64,
    /// Excited-state damping in the response denominators, rad/s.
    pub gamma: f64,
    /// Path weight through `|g_{m-1}>`.
    pub cg_minus: f64,
    /// Path weight through `|g_{m+1}>`.
    pub cg_plus: f64,
    /// Non-interfering weight from `|e_{m-1}>` into `|g_{m-2}>`.
    pub leak_minus: f64,
    /// Non-interfering weight from `|e_{m+1}>` into `|g_{m+2}>`.
    pub leak_plus: f64,
    pub m: i32,
}

impl IdealBeatParams {
    /// Builds the two-path scheme of a resolved parameter set around `|g_m>`.
    ///
    /// Path weights multiply the first emission, the pi re-excitation and the
    /// second emission coefficients, each weighted by the H projection.
    pub fn from_params(p: &Params, m: i32) -> Result<Self> {
        let s = &p.scheme;
        if !s.ground_valid(m) {
            return Err(Error::Domain(format!("m = {m} outside the ground manifold")));
        }
        let h = FRAC_1_SQRT_2;
        // emission e_M -> g_{M - q} has coefficient cg(M - q, q)
        let path = |mid: i32, first_q: i32| -> (f64, f64) {
            if !s.ground_valid(mid) || !s.excited_valid(mid) {
                return (0.0, 0.0);
            }
            let first = h * s.cg(mid, first_q).abs();
            let drive = s.cg_dyn(mid, 0).abs();
            let back = h * s.cg(m, -first_q).abs();
            let leak_m = mid - first_q;
            let leak = if s.ground_valid(leak_m) {
                h * s.cg(leak_m, first_q).abs()
            } else {
                0.0
            };
            (first * drive * back, first * drive * leak)
        };
        // sigma with q = +1 lowers m
        let (cg_minus, leak_minus) = path(m - 1, 1);
        let (cg_plus, leak_plus) = path(m + 1, -1);
        let z = p.derived.zeeman;
        Ok(Self {
            delta_g: z.delta_g,
            delta_e: z.delta_e,
            delta: z.delta_e - z.delta_g,
            gamma: 0.5 * p.cavity.gamma,
            cg_minus,
            cg_plus,
            leak_minus,
            leak_plus,
            m,
        })
    }

    fn check(&self) -> Result<()> {
        if !(self.gamma > 0.0) {
            return Err(Error::Domain("gamma must be positive".into()));
        }
        Ok(())
    }

    /// Response denominators of the two excited amplitudes.
    fn denominators(&self) -> (C64, C64) {
        let m = f64::from(self.m);
        (
            C64::new(self.gamma, -(m - 1.0) * self.delta),
            C64::new(self.gamma, (m + 1.0) * self.delta),
        )
    }

    /// `(V, theta)` of `1 + V cos(2 delta_g tau + theta)`.
    pub fn visibility_phase(&self) -> Result<(f64, f64)> {
        self.check()?;
        let (dm, dp) = self.denominators();
        let cm = self.cg_minus / dm;
        let cp = self.cg_plus / dp;
        let leaks = (self.leak_minus / dm).norm_sqr() + (self.leak_plus / dp).norm_sqr();
        let mean = cm.norm_sqr() + cp.norm_sqr() + leaks;
        if mean == 0.0 {
            return Ok((0.0, 0.0));
        }
        let cross = cm * cp.conj();
        Ok((2.0 * cross.norm() / mean, cross.arg()))
    }
}

/// `phi(tau) = delta_g tau`.
pub fn precession_phase(tau: f64, delta_g: f64) -> f64 {
    delta_g * tau
}

/// Excited amplitudes `(c_-, c_+)` sustained by the precessing ground pair.
pub fn excited_superposition(tau: f64, p: &IdealBeatParams) -> Result<(C64, C64)> {
    p.check()?;
    let (dm, dp) = p.denominators();
    let phase = precession_phase(tau, p.delta_g);
    let minus = p.cg_minus * C64::from_polar(1.0, phase) / dm;
    let plus = p.cg_plus * C64::from_polar(1.0, -phase) / dp;
    Ok((minus, plus))
}

/// Relative probability of the second photon at delay `tau`, including the
/// non-interfering leak paths.
pub fn second_photon_probability(tau: f64, p: &IdealBeatParams) -> Result<f64> {
    let (cm, cp) = excited_superposition(tau, p)?;
    let (dm, dp) = p.denominators();
    Ok((cm + cp).norm_sqr() + (p.leak_minus / dm).norm_sqr() + (p.leak_plus / dp).norm_sqr())
}

/// `exp(-tau^2 / sigma^2) [1 + V cos(2 delta_g |tau| + theta)]`.
///
/// `transit_sigma` is the 1/e half-width of the envelope. The curve is even
/// in `tau`, like a measured autocorrelation.
pub fn ideal_g2_shape(tau_grid: &[f64], p: &IdealBeatParams, transit_sigma: f64) -> Result<Vec<f64>> {
    if !(transit_sigma > 0.0) {
        return Err(Error::Domain("transit_sigma must be positive".into()));
    }
    let (v, theta) = p.visibility_phase()?;
    Ok(tau_grid
        .iter()
        .map(|&t| {
            let envelope = (-(t / transit_sigma).powi(2)).exp();
            envelope * (1.0 + v * (2.0 * p.delta_g * t.abs() + theta).cos())
        })
        .collect())
}

/// CSV in the correlator column layout; only the one-atom column is filled.
pub fn ideal_curve_csv(tau: &[f64], values: &[f64], p: &IdealBeatParams, transit_sigma: f64) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# idealized single-atom beat, m = {}", p.m);
    let _ = writeln!(
        s,
        "# delta_g = {:?} rad/s, delta = {:?} rad/s, gamma = {:?} rad/s, transit_sigma = {:?} s",
        p.delta_g, p.delta, p.gamma, transit_sigma
    );
    s.push_str("tau_s,g2_total,g2_one_atom,g2_two_atom,g2_homodyne,g2_residual,stderr_total\n");
    for (t, v) in tau.iter().zip(values) {
        let _ = writeln!(s, "{t:.6e},{v:.10e},{v:.10e},0,0,0,0");
    }
    s
}
