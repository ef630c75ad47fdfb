//! Detector time stamps: synthesis from a flux trace, file formats and the
//! cross-channel coincidence estimate of `g2(tau)`.
//!
//! Ticks are 164 ps. Binary files start with a 16-byte header
//! (`b"GSBT"`, version `u32`, tick length in femtoseconds `u64`, all little
//! endian) followed by 9-byte records `(channel: u8, tick: u64)`. Text files
//! hold one `channel tick` pair per line; `#` starts a comment.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Poisson};

use crate::correlator::{trace_g2, Normalization};
use crate::error::{Error, Result};
use crate::params::ClickParams;

pub const TICK_FS: u64 = 164_000;
pub const TICK_SECONDS: f64 = 164e-12;
pub const MAGIC: [u8; 4] = *b"GSBT";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;
const RECORD_LEN: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ClickRecord {
    pub channel: u8,
    pub tick: u64,
}

/// Per-channel sorted tick lists.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClickStreams {
    pub channels: [Vec<u64>; 2],
    /// Observation time in seconds, when known from synthesis.
    pub duration: Option<f64>,
    pub warnings: Vec<String>,
}

impl ClickStreams {
    pub fn total(&self) -> usize {
        self.channels[0].len() + self.channels[1].len()
    }

    /// All records merged in tick order; ties put channel 0 first.
    pub fn records(&self) -> Vec<ClickRecord> {
        let mut out = Vec::with_capacity(self.total());
        let (a, b) = (&self.channels[0], &self.channels[1]);
        let (mut i, mut j) = (0, 0);
        while i < a.len() || j < b.len() {
            if j >= b.len() || (i < a.len() && a[i] <= b[j]) {
                out.push(ClickRecord { channel: 0, tick: a[i] });
                i += 1;
            } else {
                out.push(ClickRecord { channel: 1, tick: b[j] });
                j += 1;
            }
        }
        out
    }

    /// Swaps the two detector labels.
    pub fn swapped(&self) -> Self {
        Self {
            channels: [self.channels[1].clone(), self.channels[0].clone()],
            duration: self.duration,
            warnings: self.warnings.clone(),
        }
    }
}

/// Uniformly sampled photon rate, read as piecewise linear and periodic.
#[derive(Debug, Clone, PartialEq)]
pub struct FluxTrace {
    /// Sample spacing, s.
    pub spacing: f64,
    /// Rate samples, photons/s.
    pub values: Vec<f64>,
}

impl FluxTrace {
    pub fn period(&self) -> f64 {
        self.spacing * self.values.len() as f64
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len().max(1) as f64
    }

    fn check(&self) -> Result<()> {
        if !(self.spacing > 0.0) {
            return Err(Error::invalid("spacing", "flux spacing must be positive"));
        }
        if self.values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid("flux", "flux must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Detections over `duration` seconds from the periodically repeated trace.
///
/// Arrival times come from time-rescaling: unit exponential increments of the
/// integrated rate `efficiency * flux`, inverted exactly on each linear
/// segment through a cumulative table of one period. Each detection goes to
/// either detector with probability 1/2. Dark counts, afterpulses and dead
/// time follow the click parameters.
pub fn synthesize_clicks(trace: &FluxTrace, duration: f64, cfg: &ClickParams, seed: u64) -> Result<ClickStreams> {
    trace.check()?;
    if !(cfg.efficiency > 0.0 && cfg.efficiency <= 1.0) {
        return Err(Error::invalid("efficiency", "efficiency must lie in (0, 1]"));
    }
    if !(duration >= 0.0) {
        return Err(Error::invalid("duration", "duration must be non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut times: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    let n = trace.values.len();
    if n > 0 && trace.mean() > 0.0 {
        let h = trace.spacing;
        let rate = |k: usize| cfg.efficiency * trace.values[k % n];
        // integrated rate at the start of each segment of one period
        let mut cum = Vec::with_capacity(n + 1);
        cum.push(0.0);
        for k in 0..n {
            cum.push(cum[k] + 0.5 * h * (rate(k) + rate(k + 1)));
        }
        let per_period = cum[n];
        let mut mass = 0.0f64;
        loop {
            mass += Distribution::<f64>::sample(&Exp1, &mut rng);
            let periods = (mass / per_period).floor();
            let rem = mass - periods * per_period;
            let seg = cum.partition_point(|&c| c <= rem).clamp(1, n) - 1;
            let (r0, r1) = (rate(seg), rate(seg + 1));
            let need = rem - cum[seg];
            let slope = (r1 - r0) / h;
            // solve r0 x + slope x^2 / 2 = need
            let x = if slope.abs() * h < 1e-12 * (r0 + r1) {
                need / r0
            } else {
                let disc = (r0 * r0 + 2.0 * slope * need).max(0.0);
                2.0 * need / (r0 + disc.sqrt())
            };
            let t = periods * trace.period() + seg as f64 * h + x.clamp(0.0, h);
            if t >= duration {
                break;
            }
            let ch = usize::from(rng.random::<bool>());
            times[ch].push(t);
        }
    }
    if cfg.afterpulse_probability > 0.0 {
        for ch in 0..2 {
            let extra: Vec<f64> = times[ch]
                .iter()
                .filter(|_| rng.random::<f64>() < cfg.afterpulse_probability)
                .map(|t| t + cfg.afterpulse_delay)
                .filter(|t| *t < duration)
                .collect();
            times[ch].extend(extra);
        }
    }
    if cfg.dark_rate > 0.0 && duration > 0.0 {
        for ch in times.iter_mut() {
            let k: f64 = Poisson::new(cfg.dark_rate * duration)
                .map_err(|e| Error::invalid("dark_rate", e.to_string()))?
                .sample(&mut rng);
            for _ in 0..k as u64 {
                ch.push(rng.random_range(0.0..duration));
            }
        }
    }
    let mut channels: [Vec<u64>; 2] = [Vec::new(), Vec::new()];
    for (out, ts) in channels.iter_mut().zip(times.iter_mut()) {
        ts.sort_by(f64::total_cmp);
        let dead = (cfg.dead_time / TICK_SECONDS).round() as u64;
        let mut last: Option<u64> = None;
        for t in ts.iter() {
            let tick = (t / TICK_SECONDS).floor() as u64;
            if let Some(l) = last {
                if dead > 0 && tick < l + dead {
                    continue;
                }
            }
            out.push(tick);
            last = Some(tick);
        }
    }
    Ok(ClickStreams {
        channels,
        duration: Some(duration),
        warnings: Vec::new(),
    })
}

/// Binary encoding of merged records.
pub fn write_binary<W: Write>(streams: &ClickStreams, mut w: W) -> Result<()> {
    let mut buf = Vec::with_capacity(HEADER_LEN + RECORD_LEN * streams.total());
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&TICK_FS.to_le_bytes());
    for r in streams.records() {
        buf.push(r.channel);
        buf.extend_from_slice(&r.tick.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Text encoding, one `channel tick` line per record.
pub fn write_text<W: Write>(streams: &ClickStreams, mut w: W) -> Result<()> {
    let mut s = String::from("# channel tick (164 ps)\n");
    for r in streams.records() {
        s.push_str(&format!("{} {}\n", r.channel, r.tick));
    }
    w.write_all(s.as_bytes())?;
    Ok(())
}

struct Collector {
    streams: ClickStreams,
}

impl Collector {
    fn new() -> Self {
        Self {
            streams: ClickStreams::default(),
        }
    }

    fn push(&mut self, record: usize, channel: u64, tick: u64) -> Result<()> {
        let ch = match channel {
            0 | 1 => channel as usize,
            _ => {
                return Err(Error::Format {
                    record,
                    message: format!("unknown channel {channel}"),
                })
            }
        };
        let list = &mut self.streams.channels[ch];
        if let Some(&last) = list.last() {
            if tick < last {
                return Err(Error::Format {
                    record,
                    message: format!("tick {tick} precedes {last} on channel {ch}"),
                });
            }
        }
        list.push(tick);
        Ok(())
    }

    fn finish(mut self) -> ClickStreams {
        if self.streams.total() == 0 {
            self.streams.warnings.push("no click records".into());
        }
        self.streams
    }
}

/// Parses binary (detected by the magic) or text time stamps.
///
/// Record numbers in errors are 1-based: binary record index, or text line.
pub fn parse_timestamps(bytes: &[u8]) -> Result<ClickStreams> {
    if bytes.len() >= 4 && bytes[..4] == MAGIC {
        return parse_binary(bytes);
    }
    let text = std::str::from_utf8(bytes).map_err(|_| Error::Format {
        record: 0,
        message: "neither the binary header nor UTF-8 text".into(),
    })?;
    parse_text(text)
}

fn parse_binary(bytes: &[u8]) -> Result<ClickStreams> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format {
            record: 0,
            message: "truncated header".into(),
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Format {
            record: 0,
            message: format!("unsupported version {version}"),
        });
    }
    let tick_fs = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    if tick_fs != TICK_FS {
        return Err(Error::Format {
            record: 0,
            message: format!("tick length {tick_fs} fs, expected {TICK_FS}"),
        });
    }
    let body = &bytes[HEADER_LEN..];
    if body.len() % RECORD_LEN != 0 {
        return Err(Error::Format {
            record: body.len() / RECORD_LEN + 1,
            message: "truncated record".into(),
        });
    }
    let mut c = Collector::new();
    for (i, rec) in body.chunks_exact(RECORD_LEN).enumerate() {
        let tick = u64::from_le_bytes(rec[1..9].try_into().expect("8 bytes"));
        c.push(i + 1, u64::from(rec[0]), tick)?;
    }
    Ok(c.finish())
}

fn parse_text(text: &str) -> Result<ClickStreams> {
    let mut c = Collector::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(|ch: char| ch == ',' || ch.is_whitespace()).filter(|f| !f.is_empty()).collect();
        let bad = || Error::Format {
            record: i + 1,
            message: format!("expected `channel tick`, found `{line}`"),
        };
        if fields.len() != 2 {
            return Err(bad());
        }
        let ch: u64 = fields[0].parse().map_err(|_| bad())?;
        let tick: u64 = fields[1].parse().map_err(|_| bad())?;
        c.push(i + 1, ch, tick)?;
    }
    Ok(c.finish())
}

/// Cross-channel coincidence histogram over `+-tau_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoincidenceHistogram {
    pub bin_width: f64,
    /// Bin centres, s; bin `k` covers delays with `|tau|` in `[|tau_k| - w/2, |tau_k| + w/2)`.
    pub tau: Vec<f64>,
    /// Pairs with `t1 - t0` in the bin.
    pub counts: Vec<u64>,
    /// Integer tick offsets inside each bin.
    pub offsets: Vec<u64>,
    /// Uncorrelated expectation `N0 N1 (T - |tau|) / T^2 * offsets * tick`.
    pub expected: Vec<f64>,
    pub singles_rates: [f64; 2],
    pub duration: f64,
}

impl CoincidenceHistogram {
    /// Exact sum of two histograms over the same bins, as if the two records
    /// were independent pieces of one measurement.
    pub fn merge(&mut self, other: &CoincidenceHistogram) -> Result<()> {
        if self.bin_width != other.bin_width || self.tau.len() != other.tau.len() {
            return Err(Error::invalid("bin_width", "histograms use different bins"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        for (a, b) in self.expected.iter_mut().zip(&other.expected) {
            *a += b;
        }
        let total = self.duration + other.duration;
        for ch in 0..2 {
            self.singles_rates[ch] = (self.singles_rates[ch] * self.duration + other.singles_rates[ch] * other.duration) / total;
        }
        self.duration = total;
        Ok(())
    }
}

/// Normalized click estimate of `g2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClickG2 {
    pub tau: Vec<f64>,
    pub g2: Vec<f64>,
    pub stderr: Vec<f64>,
    pub histogram: CoincidenceHistogram,
}

/// Histogram of `t1 - t0` over all pairs with `|t1 - t0| <= tau_max + w/2`.
pub fn coincidence_histogram(streams: &ClickStreams, bin_width: f64, tau_max: f64) -> Result<CoincidenceHistogram> {
    let (a, b) = (&streams.channels[0], &streams.channels[1]);
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientData("both detector channels need clicks".into()));
    }
    if !(bin_width > 0.0 && tau_max >= 0.0) {
        return Err(Error::invalid("bin_width", "bin width must be positive and tau_max non-negative"));
    }
    let half = (tau_max / bin_width).round() as i64;
    let nbins = (2 * half + 1) as usize;
    let w_ticks = bin_width / TICK_SECONDS;
    // bin k >= 0 holds |d| in [end(k-1), end(k)), mirrored for k < 0, so
    // swapping the channels reflects the histogram exactly
    let end = |k: i64| ((k as f64 + 0.5) * w_ticks).ceil() as i64;
    let max_d = end(half) - 1;
    let width = |k: i64| -> u64 {
        match k.unsigned_abs() as i64 {
            0 => (2 * end(0) - 1) as u64,
            a => (end(a) - end(a - 1)) as u64,
        }
    };
    let offsets: Vec<u64> = (-half..=half).map(width).collect();
    let mut counts = vec![0u64; nbins];
    let mut start = 0usize;
    for &t0 in a {
        let t0 = t0 as i64;
        while start < b.len() && (b[start] as i64) - t0 < -max_d {
            start += 1;
        }
        let mut j = start;
        while j < b.len() {
            let d = b[j] as i64 - t0;
            if d > max_d {
                break;
            }
            let m = d.abs();
            let mut k = ((m as f64 / w_ticks) + 0.5).floor() as i64;
            // guard against rounding at bin edges
            if m >= end(k) {
                k += 1;
            } else if k > 0 && m < end(k - 1) {
                k -= 1;
            }
            let k = if d < 0 { -k } else { k };
            counts[(k + half) as usize] += 1;
            j += 1;
        }
    }
    let duration = match streams.duration {
        Some(d) if d > 0.0 => d,
        _ => {
            let first = a[0].min(b[0]);
            let last = a[a.len() - 1].max(b[b.len() - 1]);
            ((last - first) as f64 + 1.0) * TICK_SECONDS
        }
    };
    let tau: Vec<f64> = (-half..=half).map(|k| k as f64 * bin_width).collect();
    let pairs = a.len() as f64 * b.len() as f64 / (duration * duration);
    let expected = tau
        .iter()
        .zip(&offsets)
        .map(|(t, &n)| pairs * (duration - t.abs()).max(0.0) * n as f64 * TICK_SECONDS)
        .collect();
    Ok(CoincidenceHistogram {
        bin_width,
        tau,
        counts,
        offsets,
        expected,
        singles_rates: [a.len() as f64 / duration, b.len() as f64 / duration],
        duration,
    })
}

/// Coincidences normalized by the uncorrelated expectation
/// `r0 r1 (T - |tau|) (offsets * tick)`, with Poisson errors.
///
/// `Normalization::Plateau` additionally rescales so the outer bins on both
/// sides average to one.
pub fn estimate_g2(streams: &ClickStreams, bin_width: f64, tau_max: f64, normalization: Normalization) -> Result<ClickG2> {
    g2_from_histogram(coincidence_histogram(streams, bin_width, tau_max)?, normalization)
}

/// Normalizes a (possibly merged) histogram.
pub fn g2_from_histogram(hist: CoincidenceHistogram, normalization: Normalization) -> Result<ClickG2> {
    let mut g2 = Vec::with_capacity(hist.counts.len());
    let mut err = Vec::with_capacity(hist.counts.len());
    for (&c, &expected) in hist.counts.iter().zip(&hist.expected) {
        if expected > 0.0 {
            g2.push(c as f64 / expected);
            err.push((c.max(1) as f64).sqrt() / expected);
        } else {
            g2.push(f64::NAN);
            err.push(f64::NAN);
        }
    }
    if let Normalization::Plateau { .. } = normalization {
        let half = g2.len() / 2 + 1;
        let range = normalization.plateau_range(half);
        let outer: Vec<f64> = range
            .clone()
            .map(|k| g2[g2.len() / 2 + k])
            .chain(range.map(|k| g2[g2.len() / 2 - k]))
            .filter(|x| x.is_finite())
            .collect();
        let plateau = outer.iter().sum::<f64>() / outer.len().max(1) as f64;
        if !(plateau > 0.0) {
            return Err(Error::InsufficientData("no coincidences in the plateau bins".into()));
        }
        for (g, e) in g2.iter_mut().zip(err.iter_mut()) {
            *g /= plateau;
            *e /= plateau;
        }
    }
    Ok(ClickG2 {
        tau: hist.tau.clone(),
        g2,
        stderr: err,
        histogram: hist,
    })
}

/// Expected click estimate for a synthesized trace when the bin width equals
/// the trace spacing: the node autocorrelation smoothed by the bin-averaged
/// autocorrelation of the linear interpolant, weights `[1, 76, 230, 76, 1] / 384`.
/// Returns lags `0..=lags` in units of the spacing.
pub fn expected_click_g2(trace: &FluxTrace, lags: usize) -> Result<Vec<f64>> {
    trace.check()?;
    let c = trace_g2(&trace.values, lags + 2)?;
    let at = |k: i64| c[k.unsigned_abs() as usize];
    const W: [f64; 5] = [1.0, 76.0, 230.0, 76.0, 1.0];
    Ok((0..=lags as i64)
        .map(|k| (-2..=2).map(|j| W[(j + 2) as usize] * at(k + j)).sum::<f64>() / 384.0)
        .collect())
}

/// CSV matching the correlator layout; only the total and its error are set.
pub fn click_curve_csv(est: &ClickG2, clicks: usize) -> String {
    let h = &est.histogram;
    let mut s = format!(
        "# click estimate: {} clicks, duration {:?} s, singles {:?} {:?} /s, bin {:?} s\n",
        clicks, h.duration, h.singles_rates[0], h.singles_rates[1], h.bin_width
    );
    s.push_str("tau_s,g2_total,g2_one_atom,g2_two_atom,g2_homodyne,g2_residual,stderr_total\n");
    for i in 0..est.tau.len() {
        s.push_str(&format!("{:.6e},{:.10e},,,,,{:.10e}\n", est.tau[i], est.g2[i], est.stderr[i]));
    }
    s
}
