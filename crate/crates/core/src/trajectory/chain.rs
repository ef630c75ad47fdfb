//! Per-atom amplitude chain and its short-time propagator.
//!
//! One atom carries six `(ground, excited)` pairs relative to its centre
//! sublevel `m`: the zero-photon pair `a`, two one-photon pairs `a'` at
//! `m -/+ 1` and three two-photon pairs `a''` at `m - 2, m, m + 2`. The
//! generator is lower triangular in photon number because H-mode
//! reabsorption is dropped, so the conditional (one photon fewer) chain is
//! the lower-right block of the same propagator times `exp(kappa dt)`.

use num_complex::Complex64 as C64;

use crate::angmom::LevelScheme;

pub const PAIRS: usize = 6;
pub const DIM: usize = 2 * PAIRS;
/// Length of the conditional chain `(b', b'')`.
pub const COND_DIM: usize = DIM - 2;

/// `(offset from centre, H photons)` of every pair.
pub const PAIR_LAYOUT: [(i32, u32); PAIRS] = [(0, 0), (-1, 1), (1, 1), (-2, 2), (0, 2), (2, 2)];

/// Pair reached by emitting an H photon from pair `p` with polarization `q`.
pub fn emission_target(p: usize, q: i32) -> Option<usize> {
    match (p, q) {
        (0, 1) => Some(1),
        (0, -1) => Some(2),
        (1, 1) => Some(3),
        (1, -1) => Some(4),
        (2, 1) => Some(4),
        (2, -1) => Some(5),
        _ => None,
    }
}

/// Spherical components of the H polarization, `x = (-e_{+1} + e_{-1}) / sqrt 2`.
pub fn h_weight(q: i32) -> f64 {
    match q {
        1 => -std::f64::consts::FRAC_1_SQRT_2,
        -1 => std::f64::consts::FRAC_1_SQRT_2,
        _ => 0.0,
    }
}

pub type Chain = [C64; DIM];
pub type CondChain = [C64; COND_DIM];
pub type Matrix = [[C64; DIM]; DIM];

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Frozen coefficients for one atom over one step.
#[derive(Debug, Clone, Copy)]
pub struct StepCoefficients {
    pub centre: i32,
    /// Coupling `g(r)` to both modes, rad/s.
    pub coupling: f64,
    /// Semiclassical driven-mode amplitude, sqrt(photons).
    pub alpha: C64,
    pub delta_g: f64,
    pub delta_e: f64,
    pub detuning: f64,
    pub gamma: f64,
    pub kappa: f64,
    pub birefringence: f64,
    pub cavity_coupling: bool,
}

/// Sparse generator `G` with `d/dt x = G x`, stored as `(row, col, value)`
/// triplets sorted by column.
#[derive(Debug, Clone)]
pub struct Generator {
    entries: [(usize, usize, C64); 40],
    len: usize,
    /// First entry whose column lies in pair `p` or later.
    pair_start: [usize; PAIRS + 1],
}

impl Generator {
    pub fn entries(&self) -> &[(usize, usize, C64)] {
        &self.entries[..self.len]
    }

    fn push(&mut self, r: usize, c: usize, v: C64) {
        self.entries[self.len] = (r, c, v);
        self.len += 1;
    }
}

pub fn generator(scheme: &LevelScheme, c: &StepCoefficients) -> Generator {
    let mut out = Generator {
        entries: [(0, 0, ZERO); 40],
        len: 0,
        pair_start: [0; PAIRS + 1],
    };
    let i = C64::i();
    let omega = c.alpha * c.coupling;
    for (p, &(offset, n)) in PAIR_LAYOUT.iter().enumerate() {
        out.pair_start[p] = out.len;
        let m = c.centre + offset;
        let photon = -(n as f64) * C64::new(c.kappa, c.birefringence);
        let g_ok = scheme.ground_valid(m);
        let e_ok = scheme.excited_valid(m);
        let pi = if g_ok && e_ok { scheme.cg_dyn(m, 0) } else { 0.0 };
        let driven = pi != 0.0 && omega != ZERO;
        // ground column
        if g_ok {
            out.push(2 * p, 2 * p, -i * (m as f64 * c.delta_g) + photon);
            if driven {
                out.push(2 * p + 1, 2 * p, -i * omega * pi);
            }
        }
        // excited column
        if e_ok {
            let diag = -i * (m as f64 * c.delta_e - c.detuning) - 0.5 * c.gamma + photon;
            out.push(2 * p + 1, 2 * p + 1, diag);
            if driven {
                out.push(2 * p, 2 * p + 1, -i * omega.conj() * pi);
            }
            if c.cavity_coupling && c.coupling != 0.0 {
                for q in [1, -1] {
                    let Some(target) = emission_target(p, q) else {
                        continue;
                    };
                    let mg = m - q;
                    if !scheme.ground_valid(mg) {
                        continue;
                    }
                    let w = scheme.cg_dyn(mg, q) * h_weight(q);
                    if w != 0.0 {
                        out.push(2 * target, 2 * p + 1, -i * c.coupling * w);
                    }
                }
            }
        }
    }
    out.pair_start[PAIRS] = out.len;
    out
}

fn one_norm(entries: &[(usize, usize, C64)]) -> f64 {
    let mut cols = [0.0; DIM];
    for &(_, c, v) in entries {
        cols[c] += v.norm();
    }
    cols.into_iter().fold(0.0, f64::max)
}

fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = [[ZERO; DIM]; DIM];
    for r in 0..DIM {
        for k in 0..DIM {
            let x = a[r][k];
            if x == ZERO {
                continue;
            }
            for c in 0..DIM {
                out[r][c] += x * b[k][c];
            }
        }
    }
    out
}

/// `exp(G t)` by Taylor series with scaling and squaring.
///
/// Column `j` only reaches rows of its own pair and later ones, so each
/// column's series runs over the entries from that pair onward.
pub fn propagator(gen: &Generator, t: f64) -> Matrix {
    let entries = gen.entries();
    let theta = one_norm(entries) * t;
    let squarings = if theta > 0.5 {
        (theta / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let h = t / f64::from(1u32 << squarings);
    let mut u = [[ZERO; DIM]; DIM];
    for col in 0..DIM {
        let first = gen.pair_start[col / 2];
        let local = &entries[first..];
        let lo = col & !1;
        let mut term = [ZERO; DIM];
        term[col] = C64::new(1.0, 0.0);
        u[col][col] = C64::new(1.0, 0.0);
        for k in 1..=30 {
            let mut next = [ZERO; DIM];
            for &(r, c, v) in local {
                next[r] += v * term[c];
            }
            let scale = h / k as f64;
            let mut size = 0.0f64;
            for r in lo..DIM {
                let x = next[r] * scale;
                next[r] = x;
                u[r][col] += x;
                size = size.max(x.re.abs() + x.im.abs());
            }
            term = next;
            if size < 1e-17 {
                break;
            }
        }
    }
    for _ in 0..squarings {
        u = matmul(&u, &u);
    }
    u
}

pub fn apply(u: &Matrix, x: &Chain) -> Chain {
    let mut out = [ZERO; DIM];
    for r in 0..DIM {
        let mut s = ZERO;
        // lower triangular in pairs: row pair r/2 only sees pairs <= r/2
        for c in 0..(r / 2 + 1) * 2 {
            s += u[r][c] * x[c];
        }
        out[r] = s;
    }
    out
}

/// Propagates a conditional chain: lower-right block of `u` times `shift`.
pub fn apply_conditional(u: &Matrix, shift: C64, x: &CondChain) -> CondChain {
    let mut out = [ZERO; COND_DIM];
    for r in 0..COND_DIM {
        let mut s = ZERO;
        for c in 0..(r / 2 + 1) * 2 {
            s += u[r + 2][c + 2] * x[c];
        }
        out[r] = s * shift;
    }
    out
}

/// `|a|^2` of the zero-photon pair.
pub fn base_norm_sqr(x: &Chain) -> f64 {
    x[0].norm_sqr() + x[1].norm_sqr()
}
