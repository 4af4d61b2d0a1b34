//! Subcommand drivers. Each command reads its upstream artifacts from the
//! output directory, writes its own next to them and always leaves a copy of
//! the resolved configuration behind.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::analysis::{self, AnalysisError, SpectralProfile};
use crate::config::{ConfigError, RunConfig};
use crate::events::{self, Event, EventError, EventSimParams};
use crate::retina::{self, IntensityStack, RetinaError};
use crate::segment::{self, CalibrationEntry, FocalCalibrationMap, PlaneStatus, SegmentError};

pub const RESOLVED_CONFIG: &str = "config.resolved.toml";
pub const STACK_FILE: &str = "stack.bin";
pub const PEAK_CSV: &str = "peak_profile.csv";
pub const RAY_COUNTS_CSV: &str = "ray_counts.csv";
pub const BEST_FOCUS_CSV: &str = "best_focus.csv";
pub const COMPOSITE_EVENTS: &str = "events";
pub const FRAME_SPECTRAL_CSV: &str = "spectral_frames.csv";
pub const EVENT_SPECTRAL_CSV: &str = "spectral_events.csv";
pub const CALIBRATION_CSV: &str = "calibration.csv";
pub const LABELED_CSV: &str = "labeled_events.csv";
pub const PLANES_CSV: &str = "planes.csv";
pub const SIDE_LOBES_CSV: &str = "side_lobes.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Trace,
    Sweep,
    Events,
    Analyze,
    Calibrate,
    Segment,
    Spectrum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Io,
    MissingInput,
    Algorithm,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Config => 2,
            ErrorKind::Io => 3,
            ErrorKind::MissingInput => 4,
            ErrorKind::Algorithm => 5,
        }
    }
}

#[derive(Debug, Error)]
#[error("{message}")]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    fn new(kind: ErrorKind, message: impl std::fmt::Display) -> Self {
        Self {
            kind,
            message: message.to_string(),
        }
    }

    fn config(message: impl std::fmt::Display) -> Self {
        Self::new(ErrorKind::Config, message)
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        let kind = match e {
            ConfigError::Io { .. } => ErrorKind::Io,
            _ => ErrorKind::Config,
        };
        Self::new(kind, e)
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::new(ErrorKind::Io, format!("{}: {e}", path.display()))
}

fn retina_err(e: RetinaError) -> CliError {
    match e {
        RetinaError::Io(_) => CliError::new(ErrorKind::Io, e),
        RetinaError::WavelengthNotInStack(_) | RetinaError::InvalidGrid(_) => CliError::config(e),
        RetinaError::Format(_) => CliError::new(ErrorKind::MissingInput, e),
        _ => CliError::new(ErrorKind::Algorithm, e),
    }
}

fn event_err(e: EventError) -> CliError {
    match e {
        EventError::Io(_) => CliError::new(ErrorKind::Io, e),
        EventError::InvalidActuator(_) | EventError::InvalidParams(_) | EventError::MappingGap { .. } => {
            CliError::config(e)
        }
        EventError::Stack(inner) => retina_err(inner),
        EventError::Parse { .. } | EventError::Format(_) | EventError::MissingFocalField => {
            CliError::new(ErrorKind::MissingInput, e)
        }
        _ => CliError::new(ErrorKind::Algorithm, e),
    }
}

fn analysis_err(e: AnalysisError) -> CliError {
    match e {
        AnalysisError::Io(_) => CliError::new(ErrorKind::Io, e),
        AnalysisError::Parse { .. } => CliError::new(ErrorKind::MissingInput, e),
        AnalysisError::MissingReference(_) | AnalysisError::NonPositiveQE(_) => CliError::config(e),
        AnalysisError::Events(inner) => event_err(inner),
        AnalysisError::Stack(inner) => retina_err(inner),
        _ => CliError::new(ErrorKind::Algorithm, e),
    }
}

fn segment_err(e: SegmentError) -> CliError {
    match e {
        SegmentError::Io(_) | SegmentError::Csv(_) => CliError::new(ErrorKind::Io, e),
        SegmentError::NoCalibration
        | SegmentError::InvalidCalibration(_)
        | SegmentError::InvalidParams(_)
        | SegmentError::WindowTooLarge { .. } => CliError::config(e),
        SegmentError::DegenerateHistogram => CliError::new(ErrorKind::Algorithm, e),
    }
}

fn open_input(path: &Path) -> Result<BufReader<File>> {
    match File::open(path) {
        Ok(f) => Ok(BufReader::new(f)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(CliError::new(
            ErrorKind::MissingInput,
            format!("{} not found; run the upstream command first", path.display()),
        )),
        Err(e) => Err(io_err(path, e)),
    }
}

/// Creates files in the output directory and remembers what was written.
struct Sink {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Sink {
    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.dir.join(name);
        let f = File::create(&path).map_err(|e| io_err(&path, e))?;
        self.written.push(path);
        Ok(BufWriter::new(f))
    }

    fn finish(&self, w: BufWriter<File>) -> Result<()> {
        w.into_inner()
            .map_err(|e| CliError::new(ErrorKind::Io, e.error()))?
            .sync_all()
            .map_err(|e| CliError::new(ErrorKind::Io, e))
    }
}

macro_rules! csv_line {
    ($w:expr, $($arg:tt)*) => {
        writeln!($w, $($arg)*).map_err(|e| CliError::new(ErrorKind::Io, e))
    };
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn load_stack(dir: &Path) -> Result<IntensityStack> {
    IntensityStack::read_from(open_input(&dir.join(STACK_FILE))?).map_err(retina_err)
}

/// Stream file stem for one wavelength.
pub fn events_stem(wavelength_nm: f64) -> String {
    format!("events_{wavelength_nm}nm")
}

fn load_events(path: &Path) -> Result<Vec<Event>> {
    events::read_any(open_input(path)?).map_err(event_err)
}

/// Runs one subcommand on a worker pool of `threads` (default: all cores).
pub fn run(cmd: Command, cfg: &RunConfig, out: &Path, threads: Option<usize>) -> Result<Vec<PathBuf>> {
    let threads = threads
        .or(cfg.threads)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::config(format!("threads: {e}")))?;
    pool.install(|| run_in_pool(cmd, cfg, out))
}

fn run_in_pool(cmd: Command, cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    std::fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let mut sink = Sink {
        dir: out.to_path_buf(),
        written: vec![],
    };
    let mut w = sink.create(RESOLVED_CONFIG)?;
    w.write_all(cfg.to_toml().as_bytes())
        .map_err(|e| CliError::new(ErrorKind::Io, e))?;
    sink.finish(w)?;
    match cmd {
        Command::Trace => cmd_trace(cfg, &mut sink, false)?,
        Command::Sweep => cmd_trace(cfg, &mut sink, true)?,
        Command::Events => cmd_events(cfg, &mut sink)?,
        Command::Analyze => cmd_analyze(cfg, &mut sink)?,
        Command::Calibrate => cmd_calibrate(cfg, &mut sink)?,
        Command::Segment => cmd_segment(cfg, &mut sink)?,
        Command::Spectrum => cmd_spectrum(cfg, &mut sink)?,
    }
    Ok(sink.written)
}

fn cmd_trace(cfg: &RunConfig, sink: &mut Sink, focus_table: bool) -> Result<()> {
    let sphere = cfg
        .sphere
        .as_ref()
        .ok_or_else(|| CliError::config("sphere: section is required"))?
        .build()?;
    let sources = cfg.trace_configs()?;
    let distances = cfg.distances().expect("trace_configs checked the sweep section");
    eprintln!(
        "tracing {} wavelength(s) x {} distance(s), {} rays each",
        sources.len(),
        distances.len(),
        sources[0].1.n_rays
    );
    let stack = retina::sweep_sources(&sphere, &cfg.pupil, &sources, &distances, &cfg.retina).map_err(retina_err)?;

    let mut w = sink.create(STACK_FILE)?;
    stack.write_to(&mut w).map_err(retina_err)?;
    sink.finish(w)?;
    let mut w = sink.create(PEAK_CSV)?;
    stack.write_peak_csv(&mut w).map_err(retina_err)?;
    sink.finish(w)?;

    let mut w = sink.create(RAY_COUNTS_CSV)?;
    csv_line!(w, "wavelength_nm,emitted,blocked,totally_reflected,escaped,exited")?;
    for (l, c) in stack.wavelengths.iter().zip(&stack.metadata.counts) {
        csv_line!(
            w,
            "{l},{},{},{},{},{}",
            c.emitted,
            c.blocked,
            c.totally_reflected,
            c.escaped,
            c.exited
        )?;
        println!(
            "{l} nm: {} emitted, {} blocked, {} TIR, {} escaped, {} exited",
            c.emitted, c.blocked, c.totally_reflected, c.escaped, c.exited
        );
    }
    sink.finish(w)?;

    if focus_table {
        let norm = stack.normalized_peak_profiles();
        let mut w = sink.create(BEST_FOCUS_CSV)?;
        csv_line!(
            w,
            "wavelength_nm,best_focus_mm,peak_row,peak_col,peak_count,normalized_peak"
        )?;
        for (i, &l) in stack.wavelengths.iter().enumerate() {
            let f = stack.best_focus(l).map_err(retina_err)?;
            let (row, col) = stack.peak_pixel(l).map_err(retina_err)?;
            let peak = stack
                .peak_profile(l)
                .map_err(retina_err)?
                .iter()
                .map(|p| p.1)
                .max()
                .unwrap_or(0);
            let np = norm[i].iter().map(|p| p.1).fold(0.0, f64::max);
            csv_line!(w, "{l},{f},{row},{col},{peak},{np}")?;
        }
        sink.finish(w)?;
    }
    Ok(())
}

fn sim_params(cfg: &RunConfig, stack: &IntensityStack) -> EventSimParams {
    let mut p = cfg.events.sim;
    if let Some(rel) = cfg.events.log_epsilon_rel {
        let peak = stack.raw().iter().copied().max().unwrap_or(0) as f64;
        p.log_epsilon = (rel * peak).max(f64::MIN_POSITIVE);
    }
    p
}

fn write_stream(sink: &mut Sink, stem: &str, events: &[Event], csv: bool) -> Result<()> {
    let mut w = sink.create(&format!("{stem}.bin"))?;
    events::write_binary(events, &mut w).map_err(event_err)?;
    sink.finish(w)?;
    if csv {
        let mut w = sink.create(&format!("{stem}.csv"))?;
        events::write_csv(events, &mut w).map_err(event_err)?;
        sink.finish(w)?;
    }
    Ok(())
}

fn cmd_events(cfg: &RunConfig, sink: &mut Sink) -> Result<()> {
    let stack = load_stack(&sink.dir)?;
    let params = sim_params(cfg, &stack);
    let mapping = cfg.mapping();
    let spec = &cfg.events;
    let csv = spec.write_csv.unwrap_or(true);
    let synth = |weights: &[(f64, f64)]| -> Result<Vec<Event>> {
        match &spec.dwell {
            Some(scan) => events::synthesize_dwell_events(&stack, weights, scan, &params, &mapping),
            None => {
                let profile = cfg
                    .actuator
                    .as_ref()
                    .ok_or_else(|| CliError::config("actuator: section is required for a sweep recording"))?;
                events::synthesize_events_weighted(&stack, weights, profile, &params, &mapping)
            }
        }
        .map_err(event_err)
    };
    match &spec.weights {
        Some(weights) => {
            let ev = synth(weights)?;
            eprintln!("composite: {} events", ev.len());
            write_stream(sink, COMPOSITE_EVENTS, &ev, csv)?;
        }
        None => {
            for &l in &stack.wavelengths {
                let mut ev = synth(&[(l, 1.0)])?;
                if let Some(pw) = spec.peak_window {
                    let (row, col) = stack.peak_pixel(l).map_err(retina_err)?;
                    ev = analysis::events_in_window(&ev, &analysis::PixelWindow::around(row, col, pw.half));
                }
                eprintln!("{l} nm: {} events", ev.len());
                write_stream(sink, &events_stem(l), &ev, csv)?;
            }
        }
    }
    Ok(())
}

fn write_spectral(sink: &mut Sink, name: &str, profiles: &[SpectralProfile], cfg: &RunConfig) -> Result<()> {
    let rows = analysis::analyze_profiles(profiles, &cfg.analysis.options()).map_err(analysis_err)?;
    for r in &rows {
        eprintln!(
            "{name}: {} nm f0 {:.3} mm fwhm {:.3} mm eta {}",
            r.wavelength_nm,
            r.f0_mm,
            r.fwhm_mm,
            fmt_opt(r.eta)
        );
    }
    let mut w = sink.create(name)?;
    analysis::write_spectral_csv(&rows, &mut w).map_err(analysis_err)?;
    sink.finish(w)
}

fn cmd_analyze(cfg: &RunConfig, sink: &mut Sink) -> Result<()> {
    let stack = load_stack(&sink.dir)?;
    write_spectral(sink, FRAME_SPECTRAL_CSV, &analysis::profiles_from_stack(&stack), cfg)?;

    let paths: Vec<PathBuf> = stack
        .wavelengths
        .iter()
        .map(|&l| sink.dir.join(format!("{}.bin", events_stem(l))))
        .collect();
    if !paths.iter().all(|p| p.exists()) {
        eprintln!("no per-wavelength event streams; skipping the event path");
        return Ok(());
    }
    let mapping = cfg.mapping();
    let grouping = cfg.analysis.grouping(&stack.distances, &mapping);
    let profiles: Vec<SpectralProfile> = stack
        .wavelengths
        .iter()
        .zip(&paths)
        .map(|(&l, p)| Ok(analysis::profile_from_events(&load_events(p)?, l, &grouping, &mapping)))
        .collect::<Result<_>>()?;
    write_spectral(sink, EVENT_SPECTRAL_CSV, &profiles, cfg)
}

fn cmd_calibrate(cfg: &RunConfig, sink: &mut Sink) -> Result<()> {
    let spec = cfg
        .calibrate
        .as_ref()
        .ok_or_else(|| CliError::config("calibrate: section is required"))?;
    let inputs = analysis::read_calibration_csv(open_input(&spec.input)?).map_err(analysis_err)?;
    let rows = analysis::calibration_targets(&inputs, spec.p_dark_nw, spec.reference_nm).map_err(analysis_err)?;
    let mut w = sink.create(CALIBRATION_CSV)?;
    analysis::write_calibration_csv(&rows, &mut w).map_err(analysis_err)?;
    sink.finish(w)
}

fn cmd_segment(cfg: &RunConfig, sink: &mut Sink) -> Result<()> {
    let events = load_events(&sink.dir.join(format!("{COMPOSITE_EVENTS}.bin")))?;
    let stack_path = sink.dir.join(STACK_FILE);
    let stack = if stack_path.exists() {
        Some(load_stack(&sink.dir)?)
    } else {
        None
    };
    let layout = stack.as_ref().map_or(cfg.retina, |s| s.layout);
    let entries = match (&cfg.segment.calibration, &stack) {
        (Some(e), _) => e.clone(),
        (None, Some(s)) => {
            let offset = cfg.mapping().offset_mm;
            s.wavelengths
                .iter()
                .map(|&l| {
                    Ok(CalibrationEntry {
                        label: format!("{l}nm"),
                        wavelength_nm: l,
                        position_mm: s.best_focus(l).map_err(retina_err)? - offset,
                    })
                })
                .collect::<Result<_>>()?
        }
        (None, None) => {
            return Err(CliError::new(
                ErrorKind::MissingInput,
                "segment needs segment.calibration or a stack to derive it from",
            ))
        }
    };
    let calib = FocalCalibrationMap::new(entries).map_err(segment_err)?;
    let result = segment::segment_sweep(&events, &calib, &cfg.segment.params(), layout.n_phi, layout.n_theta)
        .map_err(segment_err)?;

    let mut w = sink.create(LABELED_CSV)?;
    segment::write_labeled_csv(&events, &result, &calib, &mut w).map_err(segment_err)?;
    sink.finish(w)?;

    let mut w = sink.create(PLANES_CSV)?;
    csv_line!(w, "label,status,n_events,vx_px_s,vy_px_s,threshold,n_labeled")?;
    for p in &result.planes {
        let label = &calib.entries[p.entry].label;
        let status = match p.status {
            PlaneStatus::Labeled => "labeled",
            PlaneStatus::EmptyPlane => "empty",
            PlaneStatus::Flat => "flat",
        };
        if p.status == PlaneStatus::EmptyPlane {
            eprintln!("warning: plane {label} has no events");
        }
        csv_line!(
            w,
            "{label},{status},{},{},{},{},{}",
            p.n_events,
            p.velocity.0,
            p.velocity.1,
            fmt_opt(p.threshold),
            p.n_labeled
        )?;
    }
    sink.finish(w)?;

    if cfg.segment.write_masks {
        for p in &result.planes {
            if let Some(mask) = &p.mask {
                let mut w = sink.create(&format!("mask_{}.pgm", calib.entries[p.entry].label))?;
                segment::write_mask_pgm(mask, layout.n_phi, layout.n_theta, &mut w).map_err(segment_err)?;
                sink.finish(w)?;
            }
        }
    }
    eprintln!("labeled {} of {} events", result.n_labeled(), events.len());
    Ok(())
}

fn cmd_spectrum(cfg: &RunConfig, sink: &mut Sink) -> Result<()> {
    let stack = load_stack(&sink.dir)?;
    let composites: Vec<(String, Vec<(f64, f64)>)> = if cfg.spectrum.composites.is_empty() {
        stack
            .wavelengths
            .iter()
            .map(|&l| (format!("{l}nm"), vec![(l, 1.0)]))
            .collect()
    } else {
        cfg.spectrum
            .composites
            .iter()
            .map(|c| (c.name.clone(), c.weights.clone()))
            .collect()
    };
    let [r0, r1] = cfg.spectrum.side_lobe_rows.unwrap_or([1, stack.layout.n_theta]);
    if r1 > stack.layout.n_theta || r0 >= r1 {
        return Err(CliError::config("spectrum.side_lobe_rows: outside the stack's retina"));
    }
    let mut lobes = Vec::with_capacity(composites.len());
    for (name, weights) in &composites {
        let g = retina::radial_log_gradient(&stack, weights, cfg.spectrum.reduction).map_err(retina_err)?;
        let mut w = sink.create(&format!("gradient_{name}.csv"))?;
        csv_line!(w, "distance_mm,theta_deg,d_log_intensity")?;
        for (di, d) in g.distances.iter().enumerate() {
            for (ri, t) in g.radial_deg.iter().enumerate() {
                csv_line!(w, "{d},{t},{}", g.at(di, ri))?;
            }
        }
        sink.finish(w)?;
        lobes.push(g.side_lobe_profile(r0..r1));
    }
    let mut w = sink.create(SIDE_LOBES_CSV)?;
    let header: Vec<&str> = composites.iter().map(|c| c.0.as_str()).collect();
    csv_line!(w, "distance_mm,{}", header.join(","))?;
    for (di, d) in stack.distances.iter().enumerate() {
        let cells: Vec<String> = lobes.iter().map(|l| l[di].to_string()).collect();
        csv_line!(w, "{d},{}", cells.join(","))?;
    }
    sink.finish(w)
}
