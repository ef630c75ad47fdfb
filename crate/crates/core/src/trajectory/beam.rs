//! Atomic-beam geometry: mode profile, arrivals and departures.
//!
//! The cavity axis is `z`. Atoms fly along `x` (tilted towards `z` by the
//! beam tilt), enter at `x = -h` with `y` uniform in `[-h, h]` and a uniform
//! standing-wave phase, and leave once `x > h`.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::params::{BeamParams, CavityParams};

/// `g_max exp(-rho^2 / w^2) cos(2 pi z / lambda)`, with `rho^2 = x^2 + y^2`.
pub fn mode_coupling(position: [f64; 3], cavity: &CavityParams, standing_wave: bool) -> f64 {
    let [x, y, z] = position;
    let w2 = cavity.waist * cavity.waist;
    let radial = (-(x * x + y * y) / w2).exp();
    let axial = if standing_wave {
        (2.0 * PI * z / cavity.wavelength).cos()
    } else {
        1.0
    };
    cavity.g_max * radial * axial
}

pub fn velocity(speed: f64, tilt: f64) -> [f64; 3] {
    [speed * tilt.cos(), 0.0, speed * tilt.sin()]
}

/// Standing-wave field periods swept per second by the axial velocity.
pub fn field_periods_per_second(speed: f64, tilt: f64, wavelength: f64) -> f64 {
    (speed * tilt.sin()).abs() / wavelength
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entry {
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    /// Centre sublevel the atom was pumped into.
    pub centre: i32,
}

pub fn sample_speed<R: Rng>(beam: &BeamParams, rng: &mut R) -> f64 {
    if beam.speed_spread == 0.0 {
        return beam.mean_speed;
    }
    let normal = Normal::new(beam.mean_speed, beam.speed_spread).expect("validated spread");
    loop {
        let v: f64 = normal.sample(rng);
        if v > 0.1 * beam.mean_speed {
            return v;
        }
    }
}

fn sample_centre<R: Rng>(beam: &BeamParams, rng: &mut R) -> i32 {
    if beam.pump_fidelity >= 1.0 || rng.random::<f64>() < beam.pump_fidelity {
        0
    } else if rng.random::<bool>() {
        1
    } else {
        -1
    }
}

/// New atom at the entry plane, advanced by `lead` seconds of flight.
pub fn sample_entry<R: Rng>(cavity: &CavityParams, beam: &BeamParams, lead: f64, rng: &mut R) -> Entry {
    let h = beam.region_half_width;
    let speed = sample_speed(beam, rng);
    let v = velocity(speed, beam.tilt);
    let y = rng.random_range(-h..h);
    let z = rng.random_range(0.0..cavity.wavelength);
    let centre = sample_centre(beam, rng);
    Entry {
        position: [-h + v[0] * lead, y, z + v[2] * lead],
        velocity: v,
        centre,
    }
}

/// Atoms already in flight at the start of a trajectory.
pub fn initial_fill<R: Rng>(
    cavity: &CavityParams,
    beam: &BeamParams,
    arrival_rate: f64,
    rng: &mut R,
) -> Vec<Entry> {
    let h = beam.region_half_width;
    let axial = beam.mean_speed * beam.tilt.cos();
    let mean = arrival_rate * 2.0 * h / axial;
    if mean <= 0.0 {
        return Vec::new();
    }
    let n = Poisson::new(mean).expect("positive mean").sample(rng) as usize;
    (0..n)
        .map(|_| {
            let mut e = sample_entry(cavity, beam, 0.0, rng);
            e.position[0] = rng.random_range(-h..h);
            e
        })
        .collect()
}

/// Arrival lead times within one step of length `dt`.
pub fn arrivals<R: Rng>(arrival_rate: f64, dt: f64, rng: &mut R) -> Vec<f64> {
    let mean = arrival_rate * dt;
    if mean <= 0.0 {
        return Vec::new();
    }
    let n = Poisson::new(mean).expect("positive mean").sample(rng) as usize;
    (0..n).map(|_| rng.random_range(0.0..dt)).collect()
}
