use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gsbeats::clicks::{self, ClickStreams, FluxTrace};
use gsbeats::correlator::{self, BeatEstimate, BeatWindow, Ensemble, Normalization};
use gsbeats::idealized::{ideal_curve_csv, ideal_g2_shape, IdealBeatParams};
use gsbeats::params::{self, ClickConfig, ClickParams, Params};
use gsbeats::{Error, Result};
use sha2::{Digest, Sha256};

mod seeds;

#[derive(Parser)]
#[command(name = "gsbeats", version, about = "Ground-state quantum beats in cavity photon correlations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a trajectory ensemble and write g2 with its decomposition.
    Simulate {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        run: RunArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate the closed-form single-atom beat.
    Ideal {
        #[command(flatten)]
        source: Source,
        /// Ground sublevel the atom starts in.
        #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
        m: i32,
        /// Envelope 1/e half-width in us (default: transit time / sqrt 2).
        #[arg(long)]
        sigma_us: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Synthesize detector time stamps from a flux trace or an inline run.
    Clicks {
        #[command(flatten)]
        source: OptionalSource,
        #[command(flatten)]
        run: RunArgs,
        /// Flux CSV written by `simulate`; without it the ensemble is run inline.
        #[arg(long)]
        flux: Option<PathBuf>,
        /// Observation time in seconds (default: one pass over the trace).
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long, value_enum, default_value_t = Format::Binary)]
        format: Format,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate g2 from one or more time-stamp files.
    Correlate {
        #[command(flatten)]
        source: OptionalSource,
        /// Binary or text time-stamp files; histograms are summed.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Bin width in ns (default from the config, else 10).
        #[arg(long)]
        bin_width_ns: Option<f64>,
        /// Largest delay in us (default from the config, else 4).
        #[arg(long)]
        tau_max_us: Option<f64>,
        #[arg(long, value_enum, default_value_t = NormArg::Rates)]
        normalization: NormArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Report the dominant oscillation frequency of a g2 CSV.
    Beatfreq {
        curve: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        f_min_mhz: f64,
        #[arg(long, default_value_t = 20.0)]
        f_max_mhz: f64,
    },
    /// Print derived quantities of a parameter set.
    DumpDerived {
        #[command(flatten)]
        source: Source,
        /// Print the fully enumerated config instead.
        #[arg(long)]
        echo_config: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Source {
    /// Config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in preset: fig2a, fig2b, fig3, fig4.
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Args)]
#[group(required = false, multiple = false)]
struct OptionalSource {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Args)]
struct RunArgs {
    /// Seeds, e.g. `1,2,7` or `1..17` (end exclusive) or `1..=16`.
    #[arg(long)]
    seeds: Option<String>,
    /// Worker threads (default: available cores).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Binary,
    Text,
}

#[derive(Clone, Copy, ValueEnum)]
enum NormArg {
    Rates,
    Plateau,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::Invalid { .. } | Error::Domain(_) | Error::Format { .. } => 2,
        Error::Instability { .. } | Error::Logic(_) => 3,
        Error::InsufficientData(_) => 4,
        Error::Io(_) => 1,
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Simulate { source, run, out } => {
            let p = load(source.config.as_deref(), source.preset.as_deref())?;
            simulate(&p, &run, &out)
        }
        Command::Ideal { source, m, sigma_us, out } => {
            let p = load(source.config.as_deref(), source.preset.as_deref())?;
            ideal(&p, m, sigma_us, &out)
        }
        Command::Clicks {
            source,
            run,
            flux,
            duration,
            format,
            out,
        } => make_clicks(&source, &run, flux.as_deref(), duration, format, &out),
        Command::Correlate {
            source,
            inputs,
            bin_width_ns,
            tau_max_us,
            normalization,
            out,
        } => correlate(&source, &inputs, bin_width_ns, tau_max_us, normalization, &out),
        Command::Beatfreq {
            curve,
            f_min_mhz,
            f_max_mhz,
        } => beatfreq(&curve, f_min_mhz, f_max_mhz),
        Command::DumpDerived {
            source,
            echo_config,
            out,
        } => {
            let p = load(source.config.as_deref(), source.preset.as_deref())?;
            let text = if echo_config { p.config.to_text() } else { p.derived_csv() };
            for w in &p.warnings {
                eprintln!("warning: {w}");
            }
            match out {
                Some(path) => write_all(&[(path, text.into_bytes())]),
                None => {
                    print!("{text}");
                    Ok(())
                }
            }
        }
    }
}

fn load(config: Option<&Path>, preset: Option<&str>) -> Result<Params> {
    let p = match (config, preset) {
        (Some(path), _) => params::load_config(path)?,
        (None, Some(name)) => params::preset(name)?,
        (None, None) => return Err(Error::invalid("config", "give --config or --preset")),
    };
    for w in &p.warnings {
        eprintln!("warning: {w}");
    }
    Ok(p)
}

fn load_optional(source: &OptionalSource) -> Result<Option<Params>> {
    if source.config.is_none() && source.preset.is_none() {
        return Ok(None);
    }
    load(source.config.as_deref(), source.preset.as_deref()).map(Some)
}

fn workers(run: &RunArgs) -> usize {
    run.workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1)
}

fn require_seeds(run: &RunArgs) -> Result<Vec<u64>> {
    let list = seeds::parse(run.seeds.as_deref().unwrap_or(""))?;
    if list.is_empty() {
        return Err(Error::invalid("seeds", "seeds must be given explicitly, e.g. --seeds 1..=16"));
    }
    Ok(list)
}

/// Writes every file or none: files already written are removed on failure.
fn write_all(files: &[(PathBuf, Vec<u8>)]) -> Result<()> {
    let mut written: Vec<&Path> = Vec::new();
    for (path, bytes) in files {
        if let Err(e) = std::fs::write(path, bytes) {
            for w in written {
                let _ = std::fs::remove_file(w);
            }
            return Err(e.into());
        }
        written.push(path);
    }
    Ok(())
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn flux_csv(spacing: f64, flux: &[f64]) -> String {
    let mut s = format!("# spacing_s = {spacing:?}\nt_s,flux_per_s\n");
    for (k, f) in flux.iter().enumerate() {
        let _ = writeln!(s, "{:.6e},{:.10e}", k as f64 * spacing, f);
    }
    s
}

fn parse_flux_csv(text: &str) -> Result<FluxTrace> {
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("t_s") {
            continue;
        }
        let bad = || Error::Format {
            record: i + 1,
            message: format!("expected `t_s,flux_per_s`, found `{line}`"),
        };
        let (t, f) = line.split_once(',').ok_or_else(bad)?;
        times.push(t.trim().parse::<f64>().map_err(|_| bad())?);
        values.push(f.trim().parse::<f64>().map_err(|_| bad())?);
    }
    if values.len() < 2 {
        return Err(Error::InsufficientData("flux trace needs at least two samples".into()));
    }
    let spacing = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
    Ok(FluxTrace { spacing, values })
}

fn runs_csv(ens: &Ensemble) -> String {
    let mut s = String::from(
        "seed,mean_v_photons,mean_h_photons,mean_atoms,mean_coupling_sum,spontaneous_jumps,cavity_emissions,dropped_arrivals\n",
    );
    for r in &ens.runs {
        let _ = writeln!(
            s,
            "{},{:.10e},{:.10e},{:.10e},{:.10e},{},{},{}",
            r.seed,
            r.mean_v_photons,
            r.mean_h_photons,
            r.mean_atoms,
            r.mean_coupling_sum,
            r.spontaneous_jumps,
            r.cavity_emissions,
            r.dropped_arrivals
        );
    }
    s
}

fn describe_beat(b: &BeatEstimate) -> String {
    match b {
        BeatEstimate::Beat {
            frequency,
            uncertainty,
            significance,
        } => format!(
            "beat {:.4} MHz +- {:.4} MHz (significance {:.1})",
            frequency * 1e-6,
            uncertainty * 1e-6,
            significance
        ),
        BeatEstimate::NoBeat { significance } => format!("no beat (significance {significance:.1})"),
    }
}

fn simulate(p: &Params, run: &RunArgs, out: &Path) -> Result<()> {
    let seeds = require_seeds(run)?;
    let workers = workers(run);
    let started = Instant::now();
    let sweep: Vec<Option<f64>> = if p.config.drive.background_sweep.is_empty() {
        vec![None]
    } else {
        p.config.drive.background_sweep.iter().copied().map(Some).collect()
    };
    let spacing = p.sim.dt * p.sim.flux_stride as f64;
    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    for (i, bg) in sweep.iter().enumerate() {
        let params = match bg {
            Some(b) => p.with_background(*b)?,
            None => p.clone(),
        };
        let suffix = if bg.is_some() { format!("_bg{i}") } else { String::new() };
        let ens = correlator::run_ensemble(&params, &seeds, workers)?;
        let curve = ens.accumulator.finalize(Normalization::default())?;
        let beat = correlator::beat_frequency(curve.positive(0).1, curve.tau_step(), BeatWindow::default())?;
        println!(
            "g2{suffix}: {} samples, mean V photons {:.3}, {}",
            curve.samples,
            ens.mean_v_photons(),
            describe_beat(&beat)
        );
        files.push((format!("g2{suffix}.csv"), correlator::curve_csv(&curve, Some(&params), &seeds).into_bytes()));
        let flux: Vec<f64> = ens.runs.iter().flat_map(|r| r.flux.iter().copied()).collect();
        files.push((format!("flux{suffix}.csv"), flux_csv(spacing, &flux).into_bytes()));
        files.push((format!("runs{suffix}.csv"), runs_csv(&ens).into_bytes()));
    }
    let outputs: serde_json::Map<String, serde_json::Value> =
        files.iter().map(|(name, bytes)| (name.clone(), sha256_hex(bytes).into())).collect();
    let manifest = serde_json::json!({
        "command": "simulate",
        "config": p.config.to_text(),
        "seeds": seeds,
        "workers": workers,
        "wall_clock_s": started.elapsed().as_secs_f64(),
        "outputs": outputs,
    });
    let mut manifest_text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Logic(e.to_string()))?;
    manifest_text.push('\n');
    files.push(("manifest.json".into(), manifest_text.into_bytes()));
    std::fs::create_dir_all(out)?;
    let files: Vec<(PathBuf, Vec<u8>)> = files.into_iter().map(|(n, b)| (out.join(n), b)).collect();
    write_all(&files)
}

fn ideal(p: &Params, m: i32, sigma_us: Option<f64>, out: &Path) -> Result<()> {
    let ip = IdealBeatParams::from_params(p, m)?;
    let sigma = match sigma_us {
        Some(s) => s * 1e-6,
        None => p.derived.transit_time / std::f64::consts::SQRT_2,
    };
    let bins = p.sim.tau_bins as i64;
    let step = p.sim.tau_bin();
    let tau: Vec<f64> = (-(bins - 1)..bins).map(|k| k as f64 * step).collect();
    let values = ideal_g2_shape(&tau, &ip, sigma)?;
    let (v, theta) = ip.visibility_phase()?;
    println!(
        "visibility {:.4}, phase {:.4} rad, beat {:.4} MHz",
        v,
        theta,
        2.0 * ip.delta_g.abs() / (2.0 * std::f64::consts::PI) * 1e-6
    );
    write_all(&[(out.to_path_buf(), ideal_curve_csv(&tau, &values, &ip, sigma).into_bytes())])
}

fn click_params(p: Option<&Params>) -> ClickParams {
    p.map_or_else(|| ClickConfig::default().resolve(), |p| p.clicks.clone())
}

fn make_clicks(
    source: &OptionalSource,
    run: &RunArgs,
    flux: Option<&Path>,
    duration: Option<f64>,
    format: Format,
    out: &Path,
) -> Result<()> {
    let p = load_optional(source)?;
    let seeds = require_seeds(run)?;
    let trace = match flux {
        Some(path) => parse_flux_csv(&std::fs::read_to_string(path)?)?,
        None => {
            let p = p
                .as_ref()
                .ok_or_else(|| Error::invalid("flux", "give --flux or a config/preset to simulate inline"))?;
            let ens = correlator::run_ensemble(p, &seeds, workers(run))?;
            FluxTrace {
                spacing: p.sim.dt * p.sim.flux_stride as f64,
                values: ens.runs.iter().flat_map(|r| r.flux.iter().copied()).collect(),
            }
        }
    };
    let duration = duration.unwrap_or_else(|| trace.period());
    let streams = clicks::synthesize_clicks(&trace, duration, &click_params(p.as_ref()), seeds[0])?;
    let mut bytes = Vec::new();
    match format {
        Format::Binary => clicks::write_binary(&streams, &mut bytes)?,
        Format::Text => clicks::write_text(&streams, &mut bytes)?,
    }
    println!(
        "{} clicks ({} / {}) over {:.6} s",
        streams.total(),
        streams.channels[0].len(),
        streams.channels[1].len(),
        duration
    );
    write_all(&[(out.to_path_buf(), bytes)])
}

fn correlate(
    source: &OptionalSource,
    inputs: &[PathBuf],
    bin_width_ns: Option<f64>,
    tau_max_us: Option<f64>,
    normalization: NormArg,
    out: &Path,
) -> Result<()> {
    let p = load_optional(source)?;
    let cp = click_params(p.as_ref());
    let bin = bin_width_ns.map_or(cp.bin_width, |b| b * 1e-9);
    let tau_max = tau_max_us.map_or(cp.tau_max, |t| t * 1e-6);
    let mut merged: Option<clicks::CoincidenceHistogram> = None;
    let mut total = 0usize;
    for path in inputs {
        let streams: ClickStreams = clicks::parse_timestamps(&std::fs::read(path)?)?;
        for w in &streams.warnings {
            eprintln!("warning: {}: {w}", path.display());
        }
        total += streams.total();
        let h = clicks::coincidence_histogram(&streams, bin, tau_max)?;
        match merged.as_mut() {
            Some(m) => m.merge(&h)?,
            None => merged = Some(h),
        }
    }
    let hist = merged.ok_or_else(|| Error::InsufficientData("no input files".into()))?;
    let norm = match normalization {
        NormArg::Rates => Normalization::IntensityProduct,
        NormArg::Plateau => Normalization::default(),
    };
    let est = clicks::g2_from_histogram(hist, norm)?;
    let zero = est.tau.len() / 2;
    println!("{total} clicks, g2(0) = {:.4} +- {:.4}", est.g2[zero], est.stderr[zero]);
    write_all(&[(out.to_path_buf(), clicks::click_curve_csv(&est, total).into_bytes())])
}

fn beatfreq(curve: &Path, f_min_mhz: f64, f_max_mhz: f64) -> Result<()> {
    let (tau, values) = correlator::parse_curve_csv(&std::fs::read_to_string(curve)?)?;
    if tau.len() < 2 {
        return Err(Error::InsufficientData("curve has fewer than two rows".into()));
    }
    let spacing = (tau[tau.len() - 1] - tau[0]) / (tau.len() - 1) as f64;
    // symmetric curves: non-negative delays only
    let start = tau.iter().position(|t| *t >= 0.0).unwrap_or(0);
    let values = &values[start..];
    let window = BeatWindow {
        f_min: f_min_mhz * 1e6,
        f_max: f_max_mhz * 1e6,
    };
    match correlator::beat_frequency(values, spacing, window)? {
        BeatEstimate::Beat {
            frequency,
            uncertainty,
            significance,
        } => {
            println!("frequency_mhz = {:.6}", frequency * 1e-6);
            println!("uncertainty_mhz = {:.6}", uncertainty * 1e-6);
            println!("significance = {significance:.3}");
        }
        BeatEstimate::NoBeat { significance } => {
            println!("no_beat");
            println!("significance = {significance:.3}");
        }
    }
    Ok(())
}
