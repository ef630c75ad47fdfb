//! Experiment configuration.
//!
//! The config file is flat `key = value` text grouped under `[section]`
//! headers; `#` starts a comment. Every number is entered in the units the
//! lab quotes it in (frequencies as `/2π` in MHz, fields in gauss, lengths in
//! μm, times in ns or μs as noted in `CONFIG_REFERENCE`). [`Config`] keeps
//! those user units verbatim so that serialization round-trips exactly;
//! [`Params`] is the resolved, SI-unit view every other module consumes.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use crate::angmom::{lande_gf, zeeman_detunings, LevelScheme, ZeemanSplitting};
use crate::error::{Error, Result};

const TWO_PI_MHZ: f64 = 2.0 * PI * 1e6;

/// Birefringent splitting above which a warning is emitted, in MHz.
pub const BIREFRINGENCE_WARN_MHZ: f64 = 0.2;

/// Human-readable key reference, printed by the CLI.
pub const CONFIG_REFERENCE: &str = "\
[cavity]  kappa (MHz, field decay /2pi) | gamma (MHz, linewidth /2pi) | g_max (MHz, /2pi)
          waist (um) | length (um) | wavelength (um) | birefringence (MHz, /2pi)
[atom]    fg | fe | nuclear_spin_x2 | j_ground_x2 | j_excited_x2 | gj_ground | gj_excited
[field]   b (gauss, required)
[beam]    nbar (required) | speed (m/s) | speed_spread (m/s, gaussian sd) | tilt (deg)
          pump_fidelity | region (waists) | standing_wave (bool) | max_atoms
[drive]   v_photons | detuning (MHz) | background (|beta|^2 / reference H photons)
          background_sweep (comma list) | beta_phase (deg) | beta_follows_drive (bool)
[sim]     dt (ns) | duration (us) | burn_in (us) | sample_interval (ns) | tau_max (us)
          tau_bin (ns) | absorption | sigma_decay | cavity_coupling | cavity_jumps (bool)
          flux_stride
[clicks]  efficiency | dark_rate (Hz) | dead_time (ns) | afterpulse_probability
          afterpulse_delay (ns) | bin_width (ns) | tau_max (us)";

#[derive(Debug, Clone, PartialEq)]
pub struct CavityConfig {
    pub kappa_mhz: f64,
    pub gamma_mhz: f64,
    pub g_max_mhz: f64,
    pub waist_um: f64,
    pub length_um: f64,
    pub wavelength_um: f64,
    pub birefringence_mhz: f64,
}

impl Default for CavityConfig {
    fn default() -> Self {
        Self {
            kappa_mhz: 3.2,
            gamma_mhz: 6.0,
            g_max_mhz: 1.5,
            waist_um: 56.0,
            length_um: 2200.0,
            wavelength_um: 0.78024,
            birefringence_mhz: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AtomConfig {
    pub fg: i32,
    pub fe: i32,
    pub nuclear_spin_x2: i32,
    pub j_ground_x2: i32,
    pub j_excited_x2: i32,
    pub gj_ground: f64,
    pub gj_excited: f64,
}

impl Default for AtomConfig {
    fn default() -> Self {
        // 85Rb 5S1/2 F=3 -> 5P3/2 F'=4
        Self {
            fg: 3,
            fe: 4,
            nuclear_spin_x2: 5,
            j_ground_x2: 1,
            j_excited_x2: 3,
            gj_ground: 2.00233,
            gj_excited: 1.3362,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamConfig {
    pub nbar: f64,
    pub speed: f64,
    pub speed_spread: f64,
    pub tilt_deg: f64,
    pub pump_fidelity: f64,
    pub region_waists: f64,
    pub standing_wave: bool,
    pub max_atoms: usize,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self {
            nbar: 0.0,
            speed: 22.0,
            speed_spread: 0.0,
            tilt_deg: 0.0,
            pump_fidelity: 1.0,
            region_waists: 3.0,
            standing_wave: true,
            max_atoms: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriveConfig {
    pub v_photons: f64,
    pub detuning_mhz: f64,
    pub background: f64,
    pub background_sweep: Vec<f64>,
    pub beta_phase_deg: f64,
    pub beta_follows_drive: bool,
}

impl Default for DriveConfig {
    fn default() -> Self {
        Self {
            v_photons: 2.5,
            detuning_mhz: 0.0,
            background: 0.0,
            background_sweep: Vec::new(),
            beta_phase_deg: 0.0,
            beta_follows_drive: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub dt_ns: f64,
    pub duration_us: f64,
    pub burn_in_us: f64,
    pub sample_interval_ns: f64,
    pub tau_max_us: f64,
    pub tau_bin_ns: f64,
    pub absorption: bool,
    pub sigma_decay: bool,
    pub cavity_coupling: bool,
    pub cavity_jumps: bool,
    pub flux_stride: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt_ns: 2.5,
            duration_us: 100.0,
            burn_in_us: 10.0,
            sample_interval_ns: 100.0,
            tau_max_us: 4.0,
            tau_bin_ns: 10.0,
            absorption: true,
            sigma_decay: true,
            cavity_coupling: true,
            cavity_jumps: false,
            flux_stride: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClickConfig {
    pub efficiency: f64,
    pub dark_rate: f64,
    pub dead_time_ns: f64,
    pub afterpulse_probability: f64,
    pub afterpulse_delay_ns: f64,
    pub bin_width_ns: f64,
    pub tau_max_us: f64,
}

impl Default for ClickConfig {
    fn default() -> Self {
        Self {
            efficiency: 1.0,
            dark_rate: 0.0,
            dead_time_ns: 0.0,
            afterpulse_probability: 0.0,
            afterpulse_delay_ns: 50.0,
            bin_width_ns: 10.0,
            tau_max_us: 4.0,
        }
    }
}

impl ClickConfig {
    /// SI view; values are checked by [`Config::resolve`].
    pub fn resolve(&self) -> ClickParams {
        ClickParams {
            efficiency: self.efficiency,
            dark_rate: self.dark_rate,
            dead_time: self.dead_time_ns * 1e-9,
            afterpulse_probability: self.afterpulse_probability,
            afterpulse_delay: self.afterpulse_delay_ns * 1e-9,
            bin_width: self.bin_width_ns * 1e-9,
            tau_max: self.tau_max_us * 1e-6,
        }
    }
}

/// Parameter set in the units it was written in.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Config {
    pub cavity: CavityConfig,
    pub atom: AtomConfig,
    pub b_gauss: f64,
    pub beam: BeamConfig,
    pub drive: DriveConfig,
    pub sim: SimConfig,
    pub clicks: ClickConfig,
}

/// Cavity quantities in SI (angular frequencies in rad/s, lengths in m).
#[derive(Debug, Clone, PartialEq)]
pub struct CavityParams {
    pub kappa: f64,
    pub gamma: f64,
    pub g_max: f64,
    pub waist: f64,
    pub length: f64,
    pub wavelength: f64,
    pub birefringence_split: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamParams {
    pub mean_speed: f64,
    pub speed_spread: f64,
    pub nbar: f64,
    pub tilt: f64,
    pub pump_fidelity: f64,
    /// Half-width of the interaction region (m).
    pub region_half_width: f64,
    pub standing_wave: bool,
    pub max_atoms: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriveParams {
    pub v_photons_empty: f64,
    pub detuning: f64,
    /// `|beta|^2` as a fraction of the reference H-mode photon number.
    pub background_fraction: f64,
    pub beta_phase: f64,
    pub beta_follows_drive: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimParams {
    pub dt: f64,
    pub duration: f64,
    pub burn_in: f64,
    pub sample_every: usize,
    pub tau_bin_steps: usize,
    pub tau_bins: usize,
    pub absorption: bool,
    pub sigma_decay: bool,
    pub cavity_coupling: bool,
    pub cavity_jumps: bool,
    pub flux_stride: usize,
}

impl SimParams {
    pub fn tau_bin(&self) -> f64 {
        self.tau_bin_steps as f64 * self.dt
    }

    pub fn sample_interval(&self) -> f64 {
        self.sample_every as f64 * self.dt
    }

    /// Age in steps after which a conditional sample retires.
    pub fn sample_lifetime_steps(&self) -> usize {
        (self.tau_bins - 1) * self.tau_bin_steps
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClickParams {
    pub efficiency: f64,
    pub dark_rate: f64,
    pub dead_time: f64,
    pub afterpulse_probability: f64,
    pub afterpulse_delay: f64,
    pub bin_width: f64,
    pub tau_max: f64,
}

/// Derived quantities echoed alongside every run.
#[derive(Debug, Clone, PartialEq)]
pub struct Derived {
    pub cooperativity: f64,
    pub saturation_photons: f64,
    pub transit_time: f64,
    pub zeeman: ZeemanSplitting,
    pub arrival_rate: f64,
    pub expected_atoms: f64,
    pub reference_h_photons: f64,
    pub beta_abs: f64,
}

impl Derived {
    pub fn beat_prediction_hz(&self) -> f64 {
        2.0 * self.zeeman.delta_g / (2.0 * PI)
    }
}

/// Fully resolved parameter set.
#[derive(Debug, Clone)]
pub struct Params {
    pub config: Config,
    pub scheme: LevelScheme,
    pub cavity: CavityParams,
    pub b_gauss: f64,
    pub beam: BeamParams,
    pub drive: DriveParams,
    pub sim: SimParams,
    pub clicks: ClickParams,
    pub derived: Derived,
    pub warnings: Vec<String>,
}

pub fn cooperativity(c: &CavityParams) -> f64 {
    c.g_max * c.g_max / (c.gamma * c.kappa)
}

pub fn saturation_photon_number(c: &CavityParams) -> Result<f64> {
    if c.g_max == 0.0 {
        return Err(Error::Domain("saturation photon number needs g_max > 0".into()));
    }
    Ok(c.gamma * c.gamma / (3.0 * c.g_max * c.g_max))
}

pub fn transit_time(c: &CavityParams, b: &BeamParams) -> Result<f64> {
    if b.mean_speed == 0.0 {
        return Err(Error::Domain("transit time needs a non-zero speed".into()));
    }
    Ok(c.waist / b.mean_speed)
}

/// Mean of `∫ (g/g_max)^2 dt` for one atom crossing the region.
///
/// The mode intensity profile `exp(-2 rho^2 / w^2)` is integrated along the
/// flight direction and averaged over the uniform entry offset; the standing
/// wave contributes its spatial mean of 1/2.
pub fn coupling_dose(c: &CavityParams, b: &BeamParams) -> f64 {
    let w = c.waist;
    let h = b.region_half_width;
    let line = w * (PI / 2.0).sqrt() * erf(2f64.sqrt() * h / w);
    let transverse_avg = line / (2.0 * h);
    let axial_speed = b.mean_speed * b.tilt.cos();
    let sw = if b.standing_wave { 0.5 } else { 1.0 };
    sw * line / axial_speed * transverse_avg
}

/// Abramowitz-Stegun 7.1.26 is too coarse for the N-bar self-test; this is
/// the Numerical Recipes `erfc` Chebyshev fit (|rel err| < 1.2e-7).
pub fn erf(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let ans = t
        * (-z * z - 1.26551223
            + t * (1.00002368
                + t * (0.37409196
                    + t * (0.09678418
                        + t * (-0.18628806
                            + t * (0.27886807
                                + t * (-1.13520398
                                    + t * (1.48851587 + t * (-0.82215223 + t * 0.17087277)))))))))
            .exp();
    if x >= 0.0 {
        1.0 - ans
    } else {
        ans - 1.0
    }
}

/// Single maximally coupled atom in `|g0>`: weak-scattering estimate of the
/// H-mode photon number, used only to express the background as a fraction.
fn reference_h_photons(scheme: &LevelScheme, c: &CavityParams, d: &DriveParams, nbar: f64) -> f64 {
    let omega = c.g_max * d.v_photons_empty.sqrt();
    let half_gamma = 0.5 * c.gamma;
    let p_e = omega * omega / (d.detuning * d.detuning + half_gamma * half_gamma + 2.0 * omega * omega);
    let w_h = 0.5 * (scheme.cg_dyn(-1, 1).powi(2) + scheme.cg_dyn(1, -1).powi(2));
    let per_atom = c.g_max * c.g_max * w_h * p_e / (c.kappa + half_gamma).powi(2);
    per_atom * nbar.max(1e-3)
}

impl Config {
    pub fn resolve(&self) -> Result<Params> {
        let mut warnings = Vec::new();
        let cv = &self.cavity;
        for (key, v) in [
            ("kappa", cv.kappa_mhz),
            ("gamma", cv.gamma_mhz),
            ("waist", cv.waist_um),
            ("length", cv.length_um),
            ("wavelength", cv.wavelength_um),
        ] {
            if !(v > 0.0) {
                return Err(Error::invalid(key, format!("must be > 0, got {v}")));
            }
        }
        if !(cv.g_max_mhz >= 0.0) {
            return Err(Error::invalid("g_max", "must be >= 0"));
        }
        if !(cv.birefringence_mhz >= 0.0) {
            return Err(Error::invalid("birefringence", "must be >= 0"));
        }
        if cv.birefringence_mhz > BIREFRINGENCE_WARN_MHZ {
            warnings.push(format!(
                "birefringence {} MHz exceeds the {} MHz expected for this cavity",
                cv.birefringence_mhz, BIREFRINGENCE_WARN_MHZ
            ));
        }
        let cavity = CavityParams {
            kappa: cv.kappa_mhz * TWO_PI_MHZ,
            gamma: cv.gamma_mhz * TWO_PI_MHZ,
            g_max: cv.g_max_mhz * TWO_PI_MHZ,
            waist: cv.waist_um * 1e-6,
            length: cv.length_um * 1e-6,
            wavelength: cv.wavelength_um * 1e-6,
            birefringence_split: cv.birefringence_mhz * TWO_PI_MHZ,
        };

        let at = &self.atom;
        let gf_ground = lande_gf(at.fg, at.j_ground_x2, at.nuclear_spin_x2, at.gj_ground)
            .map_err(|e| Error::invalid("fg", e.to_string()))?;
        let gf_excited = lande_gf(at.fe, at.j_excited_x2, at.nuclear_spin_x2, at.gj_excited)
            .map_err(|e| Error::invalid("fe", e.to_string()))?;
        let scheme = LevelScheme::new(at.fg, at.fe, at.nuclear_spin_x2, gf_ground, gf_excited)
            .map_err(|e| Error::invalid("fe", e.to_string()))?;

        if !(self.b_gauss >= 0.0) {
            return Err(Error::invalid("b", "field must be >= 0"));
        }

        let bm = &self.beam;
        if !(bm.nbar >= 0.0) {
            return Err(Error::invalid("nbar", format!("must be >= 0, got {}", bm.nbar)));
        }
        if !(bm.speed > 0.0) {
            return Err(Error::invalid("speed", "must be > 0"));
        }
        if !(bm.speed_spread >= 0.0) || bm.speed_spread > 0.5 * bm.speed {
            return Err(Error::invalid("speed_spread", "must lie in [0, speed/2]"));
        }
        if !(bm.tilt_deg.abs() < 45.0) {
            return Err(Error::invalid("tilt", "must be below 45 degrees"));
        }
        if !(0.0..=1.0).contains(&bm.pump_fidelity) {
            return Err(Error::invalid("pump_fidelity", "must lie in [0, 1]"));
        }
        if !(bm.region_waists > 0.0) {
            return Err(Error::invalid("region", "must be > 0"));
        }
        if bm.max_atoms == 0 || bm.max_atoms > 32 {
            return Err(Error::invalid("max_atoms", "must lie in 1..=32"));
        }
        let beam = BeamParams {
            mean_speed: bm.speed,
            speed_spread: bm.speed_spread,
            nbar: bm.nbar,
            tilt: bm.tilt_deg.to_radians(),
            pump_fidelity: bm.pump_fidelity,
            region_half_width: bm.region_waists * cavity.waist,
            standing_wave: bm.standing_wave,
            max_atoms: bm.max_atoms,
        };

        let dr = &self.drive;
        if !(dr.v_photons >= 0.0) {
            return Err(Error::invalid("v_photons", "must be >= 0"));
        }
        if !(dr.background >= 0.0) || dr.background_sweep.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::invalid("background", "must be >= 0"));
        }
        let drive = DriveParams {
            v_photons_empty: dr.v_photons,
            detuning: dr.detuning_mhz * TWO_PI_MHZ,
            background_fraction: dr.background,
            beta_phase: dr.beta_phase_deg.to_radians(),
            beta_follows_drive: dr.beta_follows_drive,
        };

        let sm = &self.sim;
        if !(sm.dt_ns > 0.0) {
            return Err(Error::invalid("dt", "must be > 0"));
        }
        let steps = |key: &str, value_ns: f64| -> Result<usize> {
            let n = value_ns / sm.dt_ns;
            let r = n.round();
            if r < 1.0 || (n - r).abs() > 1e-9 * n.max(1.0) {
                return Err(Error::invalid(key, format!("{value_ns} ns is not a multiple of dt")));
            }
            Ok(r as usize)
        };
        let sample_every = steps("sample_interval", sm.sample_interval_ns)?;
        let tau_bin_steps = steps("tau_bin", sm.tau_bin_ns)?;
        if !(sm.tau_max_us > 0.0) {
            return Err(Error::invalid("tau_max", "must be > 0"));
        }
        let tau_bins = (sm.tau_max_us * 1e3 / sm.tau_bin_ns).round() as usize + 1;
        if !(sm.duration_us >= 0.0) || !(sm.burn_in_us >= 0.0) {
            return Err(Error::invalid("duration", "must be >= 0"));
        }
        if sm.flux_stride == 0 {
            return Err(Error::invalid("flux_stride", "must be >= 1"));
        }
        let sim = SimParams {
            dt: sm.dt_ns * 1e-9,
            duration: sm.duration_us * 1e-6,
            burn_in: sm.burn_in_us * 1e-6,
            sample_every,
            tau_bin_steps,
            tau_bins,
            absorption: sm.absorption,
            sigma_decay: sm.sigma_decay,
            cavity_coupling: sm.cavity_coupling,
            cavity_jumps: sm.cavity_jumps,
            flux_stride: sm.flux_stride,
        };

        let ck = &self.clicks;
        if !(ck.efficiency > 0.0 && ck.efficiency <= 1.0) {
            return Err(Error::invalid("efficiency", "must lie in (0, 1]"));
        }
        if !(ck.dark_rate >= 0.0) || !(ck.dead_time_ns >= 0.0) {
            return Err(Error::invalid("dark_rate", "must be >= 0"));
        }
        if !(0.0..=1.0).contains(&ck.afterpulse_probability) {
            return Err(Error::invalid("afterpulse_probability", "must lie in [0, 1]"));
        }
        if !(ck.bin_width_ns > 0.0) || !(ck.tau_max_us > 0.0) || !(ck.afterpulse_delay_ns > 0.0) {
            return Err(Error::invalid("bin_width", "must be > 0"));
        }
        let clicks = ck.resolve();

        let zeeman = zeeman_detunings(self.b_gauss, &scheme)?;
        let dose = coupling_dose(&cavity, &beam);
        let arrival_rate = if beam.nbar > 0.0 { beam.nbar / dose } else { 0.0 };
        let axial_speed = beam.mean_speed * beam.tilt.cos();
        let expected_atoms = arrival_rate * 2.0 * beam.region_half_width / axial_speed;
        if expected_atoms * 1.5 > beam.max_atoms as f64 {
            return Err(Error::invalid(
                "nbar",
                format!(
                    "about {expected_atoms:.1} atoms in the region on average, above the cap of {} \
                     simultaneous atoms with margin; lower nbar or shrink `region`",
                    beam.max_atoms
                ),
            ));
        }
        let reference_h_photons = reference_h_photons(&scheme, &cavity, &drive, beam.nbar);
        let beta_abs = (drive.background_fraction * reference_h_photons).sqrt();
        let derived = Derived {
            cooperativity: cooperativity(&cavity),
            saturation_photons: saturation_photon_number(&cavity)?,
            transit_time: transit_time(&cavity, &beam)?,
            zeeman,
            arrival_rate,
            expected_atoms,
            reference_h_photons,
            beta_abs,
        };

        Ok(Params {
            config: self.clone(),
            scheme,
            cavity,
            b_gauss: self.b_gauss,
            beam,
            drive,
            sim,
            clicks,
            derived,
            warnings,
        })
    }

    /// Serializes every key, defaults included.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let c = &self.cavity;
        let _ = writeln!(s, "[cavity]");
        let _ = writeln!(s, "kappa = {:?}", c.kappa_mhz);
        let _ = writeln!(s, "gamma = {:?}", c.gamma_mhz);
        let _ = writeln!(s, "g_max = {:?}", c.g_max_mhz);
        let _ = writeln!(s, "waist = {:?}", c.waist_um);
        let _ = writeln!(s, "length = {:?}", c.length_um);
        let _ = writeln!(s, "wavelength = {:?}", c.wavelength_um);
        let _ = writeln!(s, "birefringence = {:?}", c.birefringence_mhz);
        let a = &self.atom;
        let _ = writeln!(s, "\n[atom]");
        let _ = writeln!(s, "fg = {}", a.fg);
        let _ = writeln!(s, "fe = {}", a.fe);
        let _ = writeln!(s, "nuclear_spin_x2 = {}", a.nuclear_spin_x2);
        let _ = writeln!(s, "j_ground_x2 = {}", a.j_ground_x2);
        let _ = writeln!(s, "j_excited_x2 = {}", a.j_excited_x2);
        let _ = writeln!(s, "gj_ground = {:?}", a.gj_ground);
        let _ = writeln!(s, "gj_excited = {:?}", a.gj_excited);
        let _ = writeln!(s, "\n[field]");
        let _ = writeln!(s, "b = {:?}", self.b_gauss);
        let b = &self.beam;
        let _ = writeln!(s, "\n[beam]");
        let _ = writeln!(s, "nbar = {:?}", b.nbar);
        let _ = writeln!(s, "speed = {:?}", b.speed);
        let _ = writeln!(s, "speed_spread = {:?}", b.speed_spread);
        let _ = writeln!(s, "tilt = {:?}", b.tilt_deg);
        let _ = writeln!(s, "pump_fidelity = {:?}", b.pump_fidelity);
        let _ = writeln!(s, "region = {:?}", b.region_waists);
        let _ = writeln!(s, "standing_wave = {}", b.standing_wave);
        let _ = writeln!(s, "max_atoms = {}", b.max_atoms);
        let d = &self.drive;
        let _ = writeln!(s, "\n[drive]");
        let _ = writeln!(s, "v_photons = {:?}", d.v_photons);
        let _ = writeln!(s, "detuning = {:?}", d.detuning_mhz);
        let _ = writeln!(s, "background = {:?}", d.background);
        let sweep: Vec<String> = d.background_sweep.iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(s, "{}", format!("background_sweep = {}", sweep.join(", ")).trim_end());
        let _ = writeln!(s, "beta_phase = {:?}", d.beta_phase_deg);
        let _ = writeln!(s, "beta_follows_drive = {}", d.beta_follows_drive);
        let m = &self.sim;
        let _ = writeln!(s, "\n[sim]");
        let _ = writeln!(s, "dt = {:?}", m.dt_ns);
        let _ = writeln!(s, "duration = {:?}", m.duration_us);
        let _ = writeln!(s, "burn_in = {:?}", m.burn_in_us);
        let _ = writeln!(s, "sample_interval = {:?}", m.sample_interval_ns);
        let _ = writeln!(s, "tau_max = {:?}", m.tau_max_us);
        let _ = writeln!(s, "tau_bin = {:?}", m.tau_bin_ns);
        let _ = writeln!(s, "absorption = {}", m.absorption);
        let _ = writeln!(s, "sigma_decay = {}", m.sigma_decay);
        let _ = writeln!(s, "cavity_coupling = {}", m.cavity_coupling);
        let _ = writeln!(s, "cavity_jumps = {}", m.cavity_jumps);
        let _ = writeln!(s, "flux_stride = {}", m.flux_stride);
        let k = &self.clicks;
        let _ = writeln!(s, "\n[clicks]");
        let _ = writeln!(s, "efficiency = {:?}", k.efficiency);
        let _ = writeln!(s, "dark_rate = {:?}", k.dark_rate);
        let _ = writeln!(s, "dead_time = {:?}", k.dead_time_ns);
        let _ = writeln!(s, "afterpulse_probability = {:?}", k.afterpulse_probability);
        let _ = writeln!(s, "afterpulse_delay = {:?}", k.afterpulse_delay_ns);
        let _ = writeln!(s, "bin_width = {:?}", k.bin_width_ns);
        let _ = writeln!(s, "tau_max = {:?}", k.tau_max_us);
        s
    }
}

fn parse_f64(key: &str, line: usize, v: &str) -> Result<f64> {
    v.parse::<f64>().map_err(|_| Error::Config {
        key: key.into(),
        line,
        message: format!("expected a number, got `{v}`"),
    })
}

fn parse_int<T: std::str::FromStr>(key: &str, line: usize, v: &str) -> Result<T> {
    v.parse::<T>().map_err(|_| Error::Config {
        key: key.into(),
        line,
        message: format!("expected an integer, got `{v}`"),
    })
}

fn parse_bool(key: &str, line: usize, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config {
            key: key.into(),
            line,
            message: format!("expected true/false, got `{v}`"),
        }),
    }
}

fn parse_list(key: &str, line: usize, v: &str) -> Result<Vec<f64>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_f64(key, line, s))
        .collect()
}

/// Parses config text without range validation.
pub fn parse_config(text: &str) -> Result<Config> {
    let mut cfg = Config::default();
    let mut section = String::new();
    let mut saw_b = false;
    let mut saw_nbar = false;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[') {
            let name = name.strip_suffix(']').ok_or_else(|| Error::Config {
                key: content.into(),
                line,
                message: "unterminated section header".into(),
            })?;
            section = name.trim().to_string();
            if !matches!(
                section.as_str(),
                "cavity" | "atom" | "field" | "beam" | "drive" | "sim" | "clicks"
            ) {
                return Err(Error::Config {
                    key: section,
                    line,
                    message: "unknown section".into(),
                });
            }
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
            key: content.into(),
            line,
            message: "expected `key = value`".into(),
        })?;
        let key = key.trim();
        let v = value.trim();
        let unknown = || Error::Config {
            key: key.into(),
            line,
            message: if section.is_empty() {
                "key outside of any section".into()
            } else {
                format!("unknown key in [{section}]")
            },
        };
        match section.as_str() {
            "cavity" => {
                let c = &mut cfg.cavity;
                let slot = match key {
                    "kappa" => &mut c.kappa_mhz,
                    "gamma" => &mut c.gamma_mhz,
                    "g_max" => &mut c.g_max_mhz,
                    "waist" => &mut c.waist_um,
                    "length" => &mut c.length_um,
                    "wavelength" => &mut c.wavelength_um,
                    "birefringence" => &mut c.birefringence_mhz,
                    _ => return Err(unknown()),
                };
                *slot = parse_f64(key, line, v)?;
            }
            "atom" => {
                let a = &mut cfg.atom;
                match key {
                    "fg" => a.fg = parse_int(key, line, v)?,
                    "fe" => a.fe = parse_int(key, line, v)?,
                    "nuclear_spin_x2" => a.nuclear_spin_x2 = parse_int(key, line, v)?,
                    "j_ground_x2" => a.j_ground_x2 = parse_int(key, line, v)?,
                    "j_excited_x2" => a.j_excited_x2 = parse_int(key, line, v)?,
                    "gj_ground" => a.gj_ground = parse_f64(key, line, v)?,
                    "gj_excited" => a.gj_excited = parse_f64(key, line, v)?,
                    _ => return Err(unknown()),
                }
            }
            "field" => match key {
                "b" => {
                    cfg.b_gauss = parse_f64(key, line, v)?;
                    saw_b = true;
                }
                _ => return Err(unknown()),
            },
            "beam" => {
                let b = &mut cfg.beam;
                match key {
                    "nbar" => {
                        b.nbar = parse_f64(key, line, v)?;
                        saw_nbar = true;
                    }
                    "speed" => b.speed = parse_f64(key, line, v)?,
                    "speed_spread" => b.speed_spread = parse_f64(key, line, v)?,
                    "tilt" => b.tilt_deg = parse_f64(key, line, v)?,
                    "pump_fidelity" => b.pump_fidelity = parse_f64(key, line, v)?,
                    "region" => b.region_waists = parse_f64(key, line, v)?,
                    "standing_wave" => b.standing_wave = parse_bool(key, line, v)?,
                    "max_atoms" => b.max_atoms = parse_int(key, line, v)?,
                    _ => return Err(unknown()),
                }
            }
            "drive" => {
                let d = &mut cfg.drive;
                match key {
                    "v_photons" => d.v_photons = parse_f64(key, line, v)?,
                    "detuning" => d.detuning_mhz = parse_f64(key, line, v)?,
                    "background" => d.background = parse_f64(key, line, v)?,
                    "background_sweep" => d.background_sweep = parse_list(key, line, v)?,
                    "beta_phase" => d.beta_phase_deg = parse_f64(key, line, v)?,
                    "beta_follows_drive" => d.beta_follows_drive = parse_bool(key, line, v)?,
                    _ => return Err(unknown()),
                }
            }
            "sim" => {
                let m = &mut cfg.sim;
                match key {
                    "dt" => m.dt_ns = parse_f64(key, line, v)?,
                    "duration" => m.duration_us = parse_f64(key, line, v)?,
                    "burn_in" => m.burn_in_us = parse_f64(key, line, v)?,
                    "sample_interval" => m.sample_interval_ns = parse_f64(key, line, v)?,
                    "tau_max" => m.tau_max_us = parse_f64(key, line, v)?,
                    "tau_bin" => m.tau_bin_ns = parse_f64(key, line, v)?,
                    "absorption" => m.absorption = parse_bool(key, line, v)?,
                    "sigma_decay" => m.sigma_decay = parse_bool(key, line, v)?,
                    "cavity_coupling" => m.cavity_coupling = parse_bool(key, line, v)?,
                    "cavity_jumps" => m.cavity_jumps = parse_bool(key, line, v)?,
                    "flux_stride" => m.flux_stride = parse_int(key, line, v)?,
                    _ => return Err(unknown()),
                }
            }
            "clicks" => {
                let k = &mut cfg.clicks;
                let slot = match key {
                    "efficiency" => &mut k.efficiency,
                    "dark_rate" => &mut k.dark_rate,
                    "dead_time" => &mut k.dead_time_ns,
                    "afterpulse_probability" => &mut k.afterpulse_probability,
                    "afterpulse_delay" => &mut k.afterpulse_delay_ns,
                    "bin_width" => &mut k.bin_width_ns,
                    "tau_max" => &mut k.tau_max_us,
                    _ => return Err(unknown()),
                };
                *slot = parse_f64(key, line, v)?;
            }
            _ => return Err(unknown()),
        }
    }
    for (seen, key) in [(saw_b, "b"), (saw_nbar, "nbar")] {
        if !seen {
            return Err(Error::Config {
                key: key.into(),
                line: 0,
                message: "missing required key".into(),
            });
        }
    }
    Ok(cfg)
}

/// Parses and validates config text, re-tagging validation errors with the
/// line the offending key was set on.
pub fn load_config_str(text: &str) -> Result<Params> {
    let cfg = parse_config(text)?;
    cfg.resolve().map_err(|e| match e {
        Error::Invalid { key, message } => Error::Config {
            line: find_key_line(text, &key),
            key,
            message,
        },
        other => other,
    })
}

pub fn load_config(path: &Path) -> Result<Params> {
    let text = std::fs::read_to_string(path)?;
    load_config_str(&text)
}

fn find_key_line(text: &str, key: &str) -> usize {
    text.lines()
        .enumerate()
        .filter_map(|(i, l)| {
            let content = l.split('#').next()?.trim();
            let (k, _) = content.split_once('=')?;
            (k.trim() == key).then_some(i + 1)
        })
        .last()
        .unwrap_or(0)
}

pub const PRESET_NAMES: [&str; 4] = ["fig2a", "fig2b", "fig3", "fig4"];

pub fn preset_text(name: &str) -> Option<&'static str> {
    match name {
        "fig2a" => Some(include_str!("../presets/fig2a.conf")),
        "fig2b" => Some(include_str!("../presets/fig2b.conf")),
        "fig3" => Some(include_str!("../presets/fig3.conf")),
        "fig4" => Some(include_str!("../presets/fig4.conf")),
        _ => None,
    }
}

pub fn preset(name: &str) -> Result<Params> {
    let text = preset_text(name)
        .ok_or_else(|| Error::invalid("preset", format!("unknown preset `{name}`")))?;
    load_config_str(text)
}

impl Params {
    /// Derived-quantity echo as `quantity,value,unit` CSV rows.
    pub fn derived_csv(&self) -> String {
        let d = &self.derived;
        let mut s = String::from("quantity,value,unit\n");
        let rows: [(&str, f64, &str); 12] = [
            ("cooperativity", d.cooperativity, "1"),
            ("saturation_photon_number", d.saturation_photons, "1"),
            ("transit_time", d.transit_time, "s"),
            ("delta_g_over_2pi", d.zeeman.delta_g / (2.0 * PI), "Hz"),
            ("delta_e_over_2pi", d.zeeman.delta_e / (2.0 * PI), "Hz"),
            ("Delta_over_2pi", d.zeeman.delta / (2.0 * PI), "Hz"),
            ("beat_prediction", d.beat_prediction_hz(), "Hz"),
            ("gf_ground", self.scheme.gf_ground, "1"),
            ("gf_excited", self.scheme.gf_excited, "1"),
            ("arrival_rate", d.arrival_rate, "1/s"),
            ("expected_atoms_in_region", d.expected_atoms, "1"),
            ("background_beta_abs", d.beta_abs, "sqrt(photons)"),
        ];
        for (name, value, unit) in rows {
            let _ = writeln!(s, "{name},{value:?},{unit}");
        }
        s
    }

    /// Copy with a different background fraction (used by sweeps).
    pub fn with_background(&self, fraction: f64) -> Result<Params> {
        let mut cfg = self.config.clone();
        cfg.drive.background = fraction;
        cfg.resolve()
    }
}
