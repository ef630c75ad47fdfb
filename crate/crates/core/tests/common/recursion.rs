//! Clebsch-Gordan coefficients from the ladder recursion.

use std::collections::HashMap;

/// Coupled states `|J M>` of `j1 (x) j2` as vectors over `(m1, m2)`, built
/// from the top of each `J` ladder with the lowering operator.
pub struct Coupled {
    j1: i32,
    j2: i32,
    states: HashMap<(i32, i32), Vec<f64>>,
}

impl Coupled {
    pub fn new(j1: i32, j2: i32) -> Self {
        let mut c = Coupled {
            j1,
            j2,
            states: HashMap::new(),
        };
        for j in ((j1 - j2).abs()..=j1 + j2).rev() {
            // component orthogonal to the larger-J states with the same M
            let mut v = vec![0.0; c.len()];
            for m1 in -j1..=j1 {
                if (j - m1).abs() <= j2 {
                    v[c.idx(m1, j - m1)] = 1.0 + 0.1 * (m1 + j1) as f64;
                }
            }
            // two passes keep the projection clean to rounding
            for _ in 0..2 {
                for big in (j + 1)..=(j1 + j2) {
                    let u = &c.states[&(big, j)];
                    let ov: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
                    for (x, y) in v.iter_mut().zip(u) {
                        *x -= ov * y;
                    }
                }
            }
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let sign = if v[c.idx(j1, j - j1)] < 0.0 { -1.0 } else { 1.0 };
            v.iter_mut().for_each(|x| *x *= sign / n);
            let mut m = j;
            c.states.insert((j, m), v.clone());
            while m > -j {
                let mut w = vec![0.0; c.len()];
                for m1 in -j1..=j1 {
                    for m2 in -j2..=j2 {
                        let x = v[c.idx(m1, m2)];
                        if x == 0.0 {
                            continue;
                        }
                        if m1 > -j1 {
                            w[c.idx(m1 - 1, m2)] += x * lower(j1, m1);
                        }
                        if m2 > -j2 {
                            w[c.idx(m1, m2 - 1)] += x * lower(j2, m2);
                        }
                    }
                }
                let norm = lower(j, m);
                w.iter_mut().for_each(|x| *x /= norm);
                m -= 1;
                c.states.insert((j, m), w.clone());
                v = w;
            }
        }
        c
    }

    fn len(&self) -> usize {
        ((2 * self.j1 + 1) * (2 * self.j2 + 1)) as usize
    }

    fn idx(&self, m1: i32, m2: i32) -> usize {
        ((m1 + self.j1) * (2 * self.j2 + 1) + m2 + self.j2) as usize
    }

    pub fn cg(&self, m1: i32, m2: i32, j: i32) -> f64 {
        match self.states.get(&(j, m1 + m2)) {
            Some(v) => v[self.idx(m1, m2)],
            None => 0.0,
        }
    }
}

fn lower(j: i32, m: i32) -> f64 {
    ((j * (j + 1) - m * (m - 1)) as f64).sqrt()
}
