//! C ABI over the chromafocus pipeline.
//!
//! Every function returns a [`CfStatus`]; on failure the message is kept per
//! thread and read with [`cf_last_error`]. Objects are opaque handles that
//! the caller frees with the matching `*_free` function. Panics never cross
//! the boundary; they come back as `CF_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use chromafocus::cli::{self, Command, ErrorKind};
use chromafocus::config::RunConfig;
use chromafocus::dispersion::{self, DispersionModel};
use chromafocus::events::{self, Event};
use chromafocus::retina::IntensityStack;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CfStatus {
    CfOk = 0,
    CfNullPointer = 1,
    CfInvalidArgument = 2,
    CfConfig = 3,
    CfIo = 4,
    CfMissingInput = 5,
    CfAlgorithm = 6,
    CfPanic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CfCommand {
    CfTrace = 0,
    CfSweep = 1,
    CfEvents = 2,
    CfAnalyze = 3,
    CfCalibrate = 4,
    CfSegment = 5,
    CfSpectrum = 6,
}

impl From<CfCommand> for Command {
    fn from(c: CfCommand) -> Self {
        match c {
            CfCommand::CfTrace => Command::Trace,
            CfCommand::CfSweep => Command::Sweep,
            CfCommand::CfEvents => Command::Events,
            CfCommand::CfAnalyze => Command::Analyze,
            CfCommand::CfCalibrate => Command::Calibrate,
            CfCommand::CfSegment => Command::Segment,
            CfCommand::CfSpectrum => Command::Spectrum,
        }
    }
}

/// One event as laid out for C.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CfEvent {
    pub t_us: u64,
    pub x: u16,
    pub y: u16,
    pub p: i8,
    pub f_um: u32,
}

impl From<&Event> for CfEvent {
    fn from(e: &Event) -> Self {
        Self {
            t_us: e.t_us,
            x: e.x,
            y: e.y,
            p: e.p,
            f_um: e.f_um,
        }
    }
}

/// Opaque run configuration.
pub struct CfConfig(RunConfig);

/// Opaque intensity stack.
pub struct CfStack(IntensityStack);

/// Opaque event stream.
pub struct CfEvents(Vec<Event>);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(CfStatus, String);

type Outcome = Result<(), Failure>;

fn fail(status: CfStatus, message: impl std::fmt::Display) -> Failure {
    Failure(status, message.to_string())
}

fn set_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

/// Runs `f`, records its error text, and maps panics to `CF_PANIC`.
fn guard(f: impl FnOnce() -> Outcome) -> CfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            CfStatus::CfOk
        }
        Ok(Err(Failure(status, message))) => {
            set_error(&message);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("internal panic: {msg}"));
            CfStatus::CfPanic
        }
    }
}

fn cli_status(kind: ErrorKind) -> CfStatus {
    match kind {
        ErrorKind::Config => CfStatus::CfConfig,
        ErrorKind::Io => CfStatus::CfIo,
        ErrorKind::MissingInput => CfStatus::CfMissingInput,
        ErrorKind::Algorithm => CfStatus::CfAlgorithm,
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(CfStatus::CfNullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(CfStatus::CfInvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| fail(CfStatus::CfNullPointer, format!("{what} is null")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| fail(CfStatus::CfNullPointer, format!("{what} is null")))
}

/// Message for the last failed call on this thread; empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn cf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, NUL-terminated and static.
#[no_mangle]
pub extern "C" fn cf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Loads and validates a TOML config file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cf_config_load(path: *const c_char, out: *mut *mut CfConfig) -> CfStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let path = str_arg(path, "path")?;
        let cfg = RunConfig::load(Path::new(path)).map_err(|e| {
            let e = cli::CliError::from(e);
            fail(cli_status(e.kind), e)
        })?;
        *out = Box::into_raw(Box::new(CfConfig(cfg)));
        Ok(())
    })
}

/// Parses and validates a config from TOML text.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cf_config_parse(toml: *const c_char, out: *mut *mut CfConfig) -> CfStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let text = str_arg(toml, "toml")?;
        let cfg = RunConfig::from_toml(text, "<string>").map_err(|e| fail(CfStatus::CfConfig, e))?;
        *out = Box::into_raw(Box::new(CfConfig(cfg)));
        Ok(())
    })
}

/// Sets the config's random seed.
///
/// # Safety
/// `cfg` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn cf_config_set_seed(cfg: *mut CfConfig, seed: u64) -> CfStatus {
    guard(|| {
        out_arg(cfg, "cfg")?.0.seed = seed;
        Ok(())
    })
}

/// # Safety
/// `cfg` must come from `cf_config_load`/`cf_config_parse` and not be used
/// afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn cf_config_free(cfg: *mut CfConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Runs one pipeline step, writing its artifacts under `out_dir`.
/// `threads == 0` uses the config's setting or all cores.
///
/// # Safety
/// `cfg` must be a live handle; `out_dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn cf_run(
    cfg: *const CfConfig,
    command: CfCommand,
    out_dir: *const c_char,
    threads: usize,
) -> CfStatus {
    guard(|| {
        let cfg = ref_arg(cfg, "cfg")?;
        let dir = str_arg(out_dir, "out_dir")?;
        let threads = (threads > 0).then_some(threads);
        cli::run(command.into(), &cfg.0, Path::new(dir), threads).map_err(|e| fail(cli_status(e.kind), e))?;
        Ok(())
    })
}

/// Reads a `stack.bin` file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cf_stack_read(path: *const c_char, out: *mut *mut CfStack) -> CfStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let path = str_arg(path, "path")?;
        let file = std::fs::File::open(path).map_err(|e| {
            let status = if e.kind() == std::io::ErrorKind::NotFound {
                CfStatus::CfMissingInput
            } else {
                CfStatus::CfIo
            };
            fail(status, format!("{path}: {e}"))
        })?;
        let stack = IntensityStack::read_from(std::io::BufReader::new(file)).map_err(|e| fail(CfStatus::CfIo, e))?;
        *out = Box::into_raw(Box::new(CfStack(stack)));
        Ok(())
    })
}

/// Stack dimensions. Any output pointer may be null.
///
/// # Safety
/// `stack` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn cf_stack_dims(
    stack: *const CfStack,
    n_wavelengths: *mut usize,
    n_distances: *mut usize,
    n_theta: *mut usize,
    n_phi: *mut usize,
) -> CfStatus {
    guard(|| {
        let s = &ref_arg(stack, "stack")?.0;
        for (p, v) in [
            (n_wavelengths, s.wavelengths.len()),
            (n_distances, s.distances.len()),
            (n_theta, s.layout.n_theta),
            (n_phi, s.layout.n_phi),
        ] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Retina distance (mm) of the plane with the brightest bin for a swept
/// wavelength.
///
/// # Safety
/// `stack` must be a live handle; `out_mm` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cf_stack_best_focus(stack: *const CfStack, wavelength_nm: f64, out_mm: *mut f64) -> CfStatus {
    guard(|| {
        let s = &ref_arg(stack, "stack")?.0;
        let out = out_arg(out_mm, "out_mm")?;
        *out = s
            .best_focus(wavelength_nm)
            .map_err(|e| fail(CfStatus::CfInvalidArgument, e))?;
        Ok(())
    })
}

/// Copies one plane (row-major, `n_theta * n_phi` counts) into `buf`.
///
/// # Safety
/// `stack` must be a live handle; `buf` must hold `len` elements.
#[no_mangle]
pub unsafe extern "C" fn cf_stack_copy_plane(
    stack: *const CfStack,
    wavelength_idx: usize,
    distance_idx: usize,
    buf: *mut u32,
    len: usize,
) -> CfStatus {
    guard(|| {
        let s = &ref_arg(stack, "stack")?.0;
        if wavelength_idx >= s.wavelengths.len() || distance_idx >= s.distances.len() {
            return Err(fail(CfStatus::CfInvalidArgument, "plane index out of range"));
        }
        let plane = s.plane(wavelength_idx, distance_idx);
        if len < plane.len() {
            return Err(fail(
                CfStatus::CfInvalidArgument,
                format!("buffer holds {len} values, plane needs {}", plane.len()),
            ));
        }
        if buf.is_null() {
            return Err(fail(CfStatus::CfNullPointer, "buf is null"));
        }
        std::slice::from_raw_parts_mut(buf, plane.len()).copy_from_slice(plane);
        Ok(())
    })
}

/// # Safety
/// `stack` must come from `cf_stack_read` and not be used afterwards. Null
/// is ignored.
#[no_mangle]
pub unsafe extern "C" fn cf_stack_free(stack: *mut CfStack) {
    if !stack.is_null() {
        drop(Box::from_raw(stack));
    }
}

/// Reads an event stream in the binary or CSV format.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cf_events_read(path: *const c_char, out: *mut *mut CfEvents) -> CfStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let path = str_arg(path, "path")?;
        let file = std::fs::File::open(path).map_err(|e| {
            let status = if e.kind() == std::io::ErrorKind::NotFound {
                CfStatus::CfMissingInput
            } else {
                CfStatus::CfIo
            };
            fail(status, format!("{path}: {e}"))
        })?;
        let ev = events::read_any(std::io::BufReader::new(file)).map_err(|e| fail(CfStatus::CfIo, e))?;
        *out = Box::into_raw(Box::new(CfEvents(ev)));
        Ok(())
    })
}

/// Number of events in the stream, 0 for a null handle.
///
/// # Safety
/// `events` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn cf_events_len(events: *const CfEvents) -> usize {
    events.as_ref().map_or(0, |e| e.0.len())
}

/// Copies event `index` into `out`.
///
/// # Safety
/// `events` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cf_events_get(events: *const CfEvents, index: usize, out: *mut CfEvent) -> CfStatus {
    guard(|| {
        let ev = &ref_arg(events, "events")?.0;
        let out = out_arg(out, "out")?;
        let e = ev
            .get(index)
            .ok_or_else(|| fail(CfStatus::CfInvalidArgument, format!("index {index} >= {}", ev.len())))?;
        *out = e.into();
        Ok(())
    })
}

/// # Safety
/// `events` must come from `cf_events_read` and not be used afterwards.
/// Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn cf_events_free(events: *mut CfEvents) {
    if !events.is_null() {
        drop(Box::from_raw(events));
    }
}

/// Refractive index of a named material preset (e.g. "n-bk7").
///
/// # Safety
/// `preset` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cf_refractive_index(preset: *const c_char, wavelength_nm: f64, out: *mut f64) -> CfStatus {
    guard(|| {
        let name = str_arg(preset, "preset")?;
        let out = out_arg(out, "out")?;
        let model = DispersionModel::preset(name).ok_or_else(|| {
            fail(
                CfStatus::CfInvalidArgument,
                format!(
                    "unknown preset {name:?}; known: {}",
                    DispersionModel::preset_names().join(", ")
                ),
            )
        })?;
        *out = model
            .refractive_index(wavelength_nm)
            .map_err(|e| fail(CfStatus::CfInvalidArgument, e))?;
        Ok(())
    })
}

/// Paraxial ball-lens focal lengths (mm) for index `n` and diameter `d`.
///
/// # Safety
/// `efl_mm` and `bfl_mm` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cf_ball_lens_focal_lengths(
    n: f64,
    diameter_mm: f64,
    efl_mm: *mut f64,
    bfl_mm: *mut f64,
) -> CfStatus {
    guard(|| {
        let efl = out_arg(efl_mm, "efl_mm")?;
        let bfl = out_arg(bfl_mm, "bfl_mm")?;
        let f = dispersion::focal_lengths(n, diameter_mm).map_err(|e| fail(CfStatus::CfInvalidArgument, e))?;
        *efl = f.efl_mm;
        *bfl = f.bfl_mm;
        Ok(())
    })
}
