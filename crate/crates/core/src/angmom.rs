//! Angular-momentum algebra for a single `F -> F'` dipole transition.
//!
//! Clebsch-Gordan coefficients follow the Condon-Shortley convention and are
//! evaluated with the closed-form Racah sum. Zeeman shifts are linear in the
//! field (no Breit-Rabi terms).

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Bohr magneton over Planck's constant, in MHz per gauss.
pub const MU_B_OVER_H_MHZ_PER_GAUSS: f64 = 1.399624;

/// Polarization index of a dipole photon, `q in {-1, 0, +1}`.
pub const POLARIZATIONS: [i32; 3] = [-1, 0, 1];

/// Exponent of prime `p` in `n!`.
fn legendre(n: i32, p: i32) -> i32 {
    let mut e = 0;
    let mut q = n / p;
    while q > 0 {
        e += q;
        q /= p;
    }
    e
}

fn primes_upto(n: i32) -> Vec<i32> {
    (2..=n).filter(|&k| (2..k).take_while(|d| d * d <= k).all(|d| k % d != 0)).collect()
}

/// `sqrt(prod num! / prod den!)` from exact prime exponents, so ratios that
/// are exactly one come out as exactly one.
fn factorial_ratio_sqrt(num: &[i32], den: &[i32], primes: &[i32]) -> f64 {
    let mut whole = 1.0;
    let mut under_root = 1.0;
    for &p in primes {
        let e: i32 = num.iter().map(|&n| legendre(n, p)).sum::<i32>() - den.iter().map(|&n| legendre(n, p)).sum::<i32>();
        let pf = p as f64;
        whole *= pf.powi(e.div_euclid(2));
        if e.rem_euclid(2) == 1 {
            under_root *= pf;
        }
    }
    whole * under_root.sqrt()
}

/// `<j1 m1; j2 m2 | j m>` for integer angular momenta.
///
/// Returns 0 for any combination forbidden by the selection rules.
pub fn clebsch_gordan_general(j1: i32, m1: i32, j2: i32, m2: i32, j: i32, m: i32) -> f64 {
    if j1 < 0 || j2 < 0 || j < 0 {
        return 0.0;
    }
    if m1.abs() > j1 || m2.abs() > j2 || m.abs() > j || m1 + m2 != m {
        return 0.0;
    }
    if j < (j1 - j2).abs() || j > j1 + j2 {
        return 0.0;
    }
    let primes = primes_upto(j1 + j2 + j + 1);
    let pre_num = [2 * j + 1, j1 + j2 - j, j1 - j2 + j, -j1 + j2 + j, j + m, j - m, j1 - m1, j1 + m1, j2 - m2, j2 + m2];
    // 2j + 1 = (2j + 1)! / (2j)!
    let pre_den = [2 * j, j1 + j2 + j + 1];
    let k_min = 0.max(j2 - j - m1).max(j1 - j + m2);
    let k_max = (j1 + j2 - j).min(j1 - m1).min(j2 + m2);
    let mut sum = 0.0;
    for k in k_min..=k_max {
        let den = [
            k,
            j1 + j2 - j - k,
            j1 - m1 - k,
            j2 + m2 - k,
            j - j2 + m1 + k,
            j - j1 - m2 + k,
        ];
        // each term carries the full prefactor; squaring the denominators
        // puts them under the same root
        let den2: Vec<i32> = den.iter().chain(den.iter()).copied().collect();
        let term = factorial_ratio_sqrt(&pre_num, [&pre_den[..], &den2].concat().as_slice(), &primes);
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign * term;
    }
    sum
}

/// `<Fg m; 1 q | Fe m+q>` for a dipole transition.
///
/// Returns 0 when `|m+q| > Fe`. Fails for negative `F`, `|m| > Fg`,
/// `|q| > 1` or `|Fe - Fg| > 1`.
pub fn clebsch_gordan(fg: i32, m: i32, q: i32, fe: i32) -> Result<f64> {
    if fg < 0 || fe < 0 {
        return Err(Error::Domain(format!("negative F (Fg={fg}, Fe={fe})")));
    }
    if m.abs() > fg {
        return Err(Error::Domain(format!("|m|={} exceeds Fg={fg}", m.abs())));
    }
    if q.abs() > 1 {
        return Err(Error::Domain(format!("dipole polarization q={q}")));
    }
    if (fe - fg).abs() > 1 {
        return Err(Error::Domain(format!("|Fe-Fg| > 1 (Fg={fg}, Fe={fe})")));
    }
    Ok(clebsch_gordan_general(fg, m, 1, q, fe, m + q))
}

/// Landé factor of a hyperfine level, nuclear term neglected.
///
/// `j2` and `i2` are twice the electronic and nuclear angular momenta.
pub fn lande_gf(f: i32, j2: i32, i2: i32, g_j: f64) -> Result<f64> {
    if f <= 0 {
        return Err(Error::Domain(format!(
            "F={f} has no per-m Zeeman splitting"
        )));
    }
    if j2 < 0 || i2 < 0 {
        return Err(Error::Domain("negative J or I".into()));
    }
    let f2 = 2 * f;
    if f2 < (j2 - i2).abs() || f2 > j2 + i2 || (f2 + j2 + i2) % 2 != 0 {
        return Err(Error::Domain(format!(
            "F={f} violates the triangle rule with J={}/2, I={}/2",
            j2, i2
        )));
    }
    let ff = f as f64 * (f as f64 + 1.0);
    let jj = (j2 as f64 / 2.0) * (j2 as f64 / 2.0 + 1.0);
    let ii = (i2 as f64 / 2.0) * (i2 as f64 / 2.0 + 1.0);
    Ok(g_j * (ff + jj - ii) / (2.0 * ff))
}

/// Ground and excited manifolds of the driven transition.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelScheme {
    pub fg: i32,
    pub fe: i32,
    /// Twice the nuclear spin.
    pub i2: i32,
    pub gf_ground: f64,
    pub gf_excited: f64,
    /// Raw coefficients, indexed `[m + Fg][q + 1]`.
    raw: Vec<[f64; 3]>,
    /// `cg(0, 0)`, the normalization used by the dynamics.
    pi_reference: f64,
}

impl LevelScheme {
    pub fn new(fg: i32, fe: i32, i2: i32, gf_ground: f64, gf_excited: f64) -> Result<Self> {
        if fg < 0 || fe < 0 || (fe - fg).abs() > 1 || (fg == 0 && fe == 0) {
            return Err(Error::Domain(format!(
                "no dipole transition between Fg={fg} and Fe={fe}"
            )));
        }
        let mut raw = Vec::with_capacity((2 * fg + 1) as usize);
        for m in -fg..=fg {
            let mut row = [0.0; 3];
            for (k, &q) in POLARIZATIONS.iter().enumerate() {
                row[k] = clebsch_gordan(fg, m, q, fe)?;
            }
            raw.push(row);
        }
        // F -> F has a forbidden 0 -> 0 pi line; fall back to the strongest pi line.
        let mut pi_reference = raw[fg as usize][1].abs();
        if pi_reference < 1e-12 {
            pi_reference = raw.iter().map(|r| r[1].abs()).fold(0.0, f64::max);
        }
        if pi_reference < 1e-12 {
            return Err(Error::Domain("transition has no pi component".into()));
        }
        Ok(Self {
            fg,
            fe,
            i2,
            gf_ground,
            gf_excited,
            raw,
            pi_reference,
        })
    }

    /// The ⁸⁵Rb D2 line `F=3 -> F'=4` with the given electronic g-factors.
    pub fn rb85_d2(gj_ground: f64, gj_excited: f64) -> Result<Self> {
        let gf_ground = lande_gf(3, 1, 5, gj_ground)?;
        let gf_excited = lande_gf(4, 3, 5, gj_excited)?;
        Self::new(3, 4, 5, gf_ground, gf_excited)
    }

    pub fn ground_valid(&self, m: i32) -> bool {
        m.abs() <= self.fg
    }

    pub fn excited_valid(&self, m: i32) -> bool {
        m.abs() <= self.fe
    }

    /// Raw `<Fg m; 1 q | Fe m+q>`; zero outside the manifold. Squares are branching ratios.
    pub fn cg(&self, m: i32, q: i32) -> f64 {
        if m.abs() > self.fg || q.abs() > 1 {
            return 0.0;
        }
        self.raw[(m + self.fg) as usize][(q + 1) as usize]
    }

    /// Coefficient rescaled so the reference pi line `m=0 -> m'=0` equals 1.
    pub fn cg_dyn(&self, m: i32, q: i32) -> f64 {
        self.cg(m, q) / self.pi_reference
    }

    pub fn pi_reference(&self) -> f64 {
        self.pi_reference
    }
}

/// Zeeman shifts per unit `m`, angular frequencies in rad/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZeemanSplitting {
    pub delta_g: f64,
    pub delta_e: f64,
    /// `delta_e - delta_g`.
    pub delta: f64,
}

pub fn zeeman_detunings(b_gauss: f64, scheme: &LevelScheme) -> Result<ZeemanSplitting> {
    if !(b_gauss >= 0.0) {
        return Err(Error::Domain(format!("magnetic field {b_gauss} G < 0")));
    }
    let per_gauss = 2.0 * PI * MU_B_OVER_H_MHZ_PER_GAUSS * 1e6;
    let delta_g = per_gauss * scheme.gf_ground * b_gauss;
    let delta_e = per_gauss * scheme.gf_excited * b_gauss;
    Ok(ZeemanSplitting {
        delta_g,
        delta_e,
        delta: delta_e - delta_g,
    })
}
