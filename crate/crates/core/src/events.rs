//! Event-camera streams synthesised from focal sweeps.
//!
//! Each retina pixel `(θ row, φ column)` becomes a sensor pixel `(y, x)`. A
//! sweep is replayed in time by driving an actuator back and forth across the
//! stack distances; every pixel runs a log temporal-contrast ladder.
//!
//! Event file layout, all little-endian:
//!
//! ```text
//! "CPHEVT01"   8 bytes
//! count        u32
//! per event    u64 t (µs), u16 x, u16 y, i8 p, u32 f (µm)
//! ```

use std::io::{BufRead, BufReader, Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::retina::{IntensityStack, RetinaError};

pub const EVENT_MAGIC: &[u8; 8] = b"CPHEVT01";
pub const CSV_HEADER: [&str; 5] = ["t_us", "x", "y", "p", "f_um"];

/// Relative slack when comparing a log change against the contrast threshold.
const LADDER_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum EventError {
    #[error("time {t_us} µs is outside the sweep [0, {end_us}] µs")]
    OutOfSweep { t_us: f64, end_us: u64 },
    #[error("actuator range maps to [{lo_mm}, {hi_mm}] mm but the stack covers [{stack_lo_mm}, {stack_hi_mm}] mm")]
    MappingGap {
        lo_mm: f64,
        hi_mm: f64,
        stack_lo_mm: f64,
        stack_hi_mm: f64,
    },
    #[error("need at least two stack distances inside the actuator range, got {0}")]
    InsufficientDistances(usize),
    #[error("invalid actuator: {0}")]
    InvalidActuator(String),
    #[error("invalid event parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Stack(#[from] RetinaError),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("event data has no focal-distance field")]
    MissingFocalField,
    #[error("event file format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EventError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Event {
    pub t_us: u64,
    pub x: u16,
    pub y: u16,
    pub p: i8,
    pub f_um: u32,
}

impl Event {
    pub fn sort_key(&self) -> (u64, u16, u16, i8) {
        (self.t_us, self.y, self.x, self.p)
    }
}

pub fn sort_events(events: &mut [Event]) {
    events.sort_unstable_by_key(|e| (e.sort_key(), e.f_um));
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Waveform {
    #[default]
    Triangular,
    Sinusoidal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActuatorProfile {
    pub f_min_mm: f64,
    pub f_max_mm: f64,
    pub frequency_hz: f64,
    #[serde(default)]
    pub waveform: Waveform,
    pub n_cycles: u32,
}

impl ActuatorProfile {
    pub fn validate(&self) -> Result<()> {
        if !(self.f_min_mm.is_finite() && self.f_max_mm.is_finite() && self.f_min_mm < self.f_max_mm) {
            return Err(EventError::InvalidActuator(format!(
                "actuator range needs f_min < f_max, got {} .. {} mm",
                self.f_min_mm, self.f_max_mm
            )));
        }
        if !(self.frequency_hz > 0.0 && self.frequency_hz.is_finite()) {
            return Err(EventError::InvalidActuator(format!(
                "frequency must be positive, got {} Hz",
                self.frequency_hz
            )));
        }
        if self.period_us() < 2 {
            return Err(EventError::InvalidActuator("period shorter than 2 µs".into()));
        }
        if self.n_cycles == 0 {
            return Err(EventError::InvalidActuator("n_cycles must be at least 1".into()));
        }
        Ok(())
    }

    /// One forward-backward cycle, rounded to whole microseconds so that
    /// every cycle replays identically on the integer clock.
    pub fn period_us(&self) -> u64 {
        (1e6 / self.frequency_hz).round() as u64
    }

    pub fn duration_us(&self) -> u64 {
        self.period_us() * self.n_cycles as u64
    }

    fn span(&self) -> f64 {
        self.f_max_mm - self.f_min_mm
    }

    /// Actuator position in mm at `t_us`.
    pub fn position(&self, t_us: f64) -> Result<f64> {
        let end_us = self.duration_us();
        if !(t_us >= 0.0 && t_us <= end_us as f64) {
            return Err(EventError::OutOfSweep { t_us, end_us });
        }
        let period = self.period_us() as f64;
        let phase = (t_us % period) / period;
        let u = match self.waveform {
            Waveform::Triangular => {
                if phase <= 0.5 {
                    2.0 * phase
                } else {
                    2.0 - 2.0 * phase
                }
            }
            Waveform::Sinusoidal => 0.5 * (1.0 - (std::f64::consts::TAU * phase).cos()),
        };
        Ok(self.f_min_mm + self.span() * u)
    }

    /// Time offset within a cycle at which the actuator passes `position_mm`.
    fn offset_in_cycle(&self, position_mm: f64, forward: bool) -> f64 {
        let period = self.period_us() as f64;
        let u = ((position_mm - self.f_min_mm) / self.span()).clamp(0.0, 1.0);
        let phase = match self.waveform {
            Waveform::Triangular => 0.5 * u,
            Waveform::Sinusoidal => (1.0 - 2.0 * u).acos() / std::f64::consts::TAU,
        };
        if forward {
            phase * period
        } else {
            (1.0 - phase) * period
        }
    }
}

/// Free-function form of [`ActuatorProfile::position`].
pub fn actuator_position(profile: &ActuatorProfile, t_us: f64) -> Result<f64> {
    profile.position(t_us)
}

/// Retina distance (from the sphere centre) = actuator position + offset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ActuatorMapping {
    pub offset_mm: f64,
}

impl ActuatorMapping {
    pub fn distance(&self, position_mm: f64) -> f64 {
        position_mm + self.offset_mm
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceInit {
    /// Reference starts at the pixel's first sample, so the first frame is silent.
    #[default]
    FirstFrame,
    /// Reference starts at a dark pixel, `log(0 + ε)`.
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EventSimParams {
    pub contrast: f64,
    pub init: ReferenceInit,
    pub refractory_us: u64,
    pub log_epsilon: f64,
}

impl Default for EventSimParams {
    fn default() -> Self {
        Self {
            contrast: 0.2,
            init: ReferenceInit::FirstFrame,
            refractory_us: 0,
            log_epsilon: 1.0,
        }
    }
}

impl EventSimParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.contrast > 0.0 && self.contrast.is_finite()) {
            return Err(EventError::InvalidParams(format!(
                "contrast threshold must be positive, got {}",
                self.contrast
            )));
        }
        if !(self.log_epsilon > 0.0 && self.log_epsilon.is_finite()) {
            return Err(EventError::InvalidParams(format!(
                "log epsilon must be positive, got {}",
                self.log_epsilon
            )));
        }
        Ok(())
    }
}

/// One replayed frame: the stack plane shown at time `t_us`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t_us: u64,
    pub distance_idx: usize,
    pub position_mm: f64,
}

/// Replay schedule: one sample per stack distance crossing, forward then
/// backward, for every cycle. Turnaround planes are shown once.
pub fn sample_schedule(distances: &[f64], profile: &ActuatorProfile, mapping: &ActuatorMapping) -> Result<Vec<Sample>> {
    profile.validate()?;
    let (lo, hi) = (mapping.distance(profile.f_min_mm), mapping.distance(profile.f_max_mm));
    let tol = 1e-9 * hi.abs().max(1.0);
    let (stack_lo, stack_hi) = match (distances.first(), distances.last()) {
        (Some(&a), Some(&b)) => (a, b),
        _ => return Err(EventError::InsufficientDistances(0)),
    };
    if stack_lo > lo + tol || stack_hi < hi - tol {
        return Err(EventError::MappingGap {
            lo_mm: lo,
            hi_mm: hi,
            stack_lo_mm: stack_lo,
            stack_hi_mm: stack_hi,
        });
    }
    let inside: Vec<usize> = (0..distances.len())
        .filter(|&i| distances[i] >= lo - tol && distances[i] <= hi + tol)
        .collect();
    if inside.len() < 2 {
        return Err(EventError::InsufficientDistances(inside.len()));
    }
    let period = profile.period_us();
    let mut samples = Vec::with_capacity(2 * inside.len() * profile.n_cycles as usize);
    for c in 0..profile.n_cycles as u64 {
        let base = c * period;
        let forward = inside.iter().skip(usize::from(c > 0));
        let backward = inside.iter().rev().skip(1);
        for (&i, fwd) in forward.map(|i| (i, true)).chain(backward.map(|i| (i, false))) {
            let position_mm = distances[i] - mapping.offset_mm;
            let t_us = base + profile.offset_in_cycle(position_mm, fwd).round() as u64;
            samples.push(Sample {
                t_us,
                distance_idx: i,
                position_mm: profile.position(t_us as f64)?,
            });
        }
    }
    Ok(samples)
}

/// Runs the contrast ladder on every pixel of `frames` (row-major, `width`
/// columns) replayed in `samples` order.
pub fn events_from_frames(
    frames: &[Vec<f64>],
    width: usize,
    samples: &[Sample],
    params: &EventSimParams,
) -> Result<Vec<Event>> {
    params.validate()?;
    let n_px = frames.first().map_or(0, |f| f.len());
    if frames.iter().any(|f| f.len() != n_px) || (n_px > 0 && (width == 0 || n_px % width != 0)) {
        return Err(EventError::InvalidParams("frames must share one raster".into()));
    }
    if samples.iter().any(|s| s.distance_idx >= frames.len()) {
        return Err(EventError::InvalidParams("sample refers to a missing frame".into()));
    }
    let f_um: Vec<u32> = samples
        .iter()
        .map(|s| (s.position_mm * 1000.0).round().max(0.0) as u32)
        .collect();
    let eps = params.log_epsilon;
    let used: Vec<usize> = {
        let mut u: Vec<usize> = samples.iter().map(|s| s.distance_idx).collect();
        u.sort_unstable();
        u.dedup();
        u
    };
    let mut events: Vec<Event> = (0..n_px)
        .into_par_iter()
        .with_min_len(1024)
        .flat_map_iter(|px| {
            let first = frames[used[0]][px];
            if used.iter().all(|&i| frames[i][px] == first) && params.init == ReferenceInit::FirstFrame {
                return Vec::new();
            }
            let (x, y) = ((px % width) as u16, (px / width) as u16);
            pixel_ladder(samples, &f_um, params, |i| (frames[i][px] + eps).ln(), eps.ln())
                .into_iter()
                .map(|(t_us, p, f)| Event { t_us, x, y, p, f_um: f })
                .collect()
        })
        .collect();
    sort_events(&mut events);
    Ok(events)
}

fn pixel_ladder(
    samples: &[Sample],
    f_um: &[u32],
    params: &EventSimParams,
    log_at: impl Fn(usize) -> f64,
    dark: f64,
) -> Vec<(u64, i8, u32)> {
    let mut out = Vec::new();
    let Some(first) = samples.first() else {
        return out;
    };
    let l0 = match params.init {
        ReferenceInit::FirstFrame => log_at(first.distance_idx),
        ReferenceInit::Zero => dark,
    };
    let c = params.contrast;
    let mut k: i64 = 0;
    let mut last: Option<u64> = None;
    for (s, &f) in samples.iter().zip(f_um) {
        let l = log_at(s.distance_idx);
        loop {
            let rel = (l - l0) / c - k as f64;
            let p: i8 = if rel >= 1.0 - LADDER_TOL {
                1
            } else if rel <= -1.0 + LADDER_TOL {
                -1
            } else {
                break;
            };
            if last.is_some_and(|lt| s.t_us - lt < params.refractory_us) {
                break;
            }
            out.push((s.t_us, p, f));
            k += p as i64;
            last = Some(s.t_us);
        }
    }
    out
}

/// Event stream for a weighted sum of per-wavelength planes, e.g. several
/// coloured sources sharing one sensor.
pub fn synthesize_events_weighted(
    stack: &IntensityStack,
    weights: &[(f64, f64)],
    profile: &ActuatorProfile,
    params: &EventSimParams,
    mapping: &ActuatorMapping,
) -> Result<Vec<Event>> {
    params.validate()?;
    let samples = sample_schedule(&stack.distances, profile, mapping)?;
    let frames: Vec<Vec<f64>> = (0..stack.distances.len())
        .map(|di| stack.composite_plane(weights, di))
        .collect::<std::result::Result<_, _>>()?;
    events_from_frames(&frames, stack.layout.n_phi, &samples, params)
}

/// Actuator parked at each position in turn while the image drifts at a
/// constant velocity, as when the scene or camera moves during a dwell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DwellScan {
    pub positions_mm: Vec<f64>,
    pub dwell_us: u64,
    pub frames_per_dwell: usize,
    /// Image drift in pixels/s as `[x, y]`.
    pub velocity_px_s: [f64; 2],
}

impl DwellScan {
    pub fn validate(&self) -> Result<()> {
        if self.positions_mm.is_empty() || self.positions_mm.iter().any(|p| !p.is_finite()) {
            return Err(EventError::InvalidParams("dwell scan needs finite positions".into()));
        }
        if self.frames_per_dwell < 2 || self.dwell_us < self.frames_per_dwell as u64 {
            return Err(EventError::InvalidParams(
                "dwell scan needs at least two frames per dwell and one µs per frame".into(),
            ));
        }
        if self.velocity_px_s.iter().any(|v| !v.is_finite()) {
            return Err(EventError::InvalidParams("drift velocity must be finite".into()));
        }
        Ok(())
    }

    /// Frame time within a dwell.
    pub fn frame_offset_us(&self, j: usize) -> u64 {
        (j as u64 * self.dwell_us) / self.frames_per_dwell as u64
    }
}

/// Bilinear sample of a row-major plane, zero outside.
pub fn sample_bilinear(plane: &[f64], width: usize, height: usize, x: f64, y: f64) -> f64 {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let mut v = 0.0;
    for (dx, wx) in [(0i64, 1.0 - fx), (1, fx)] {
        for (dy, wy) in [(0i64, 1.0 - fy), (1, fy)] {
            let (xi, yi) = (x0 as i64 + dx, y0 as i64 + dy);
            let w = wx * wy;
            if w > 0.0 && xi >= 0 && yi >= 0 && (xi as usize) < width && (yi as usize) < height {
                v += w * plane[yi as usize * width + xi as usize];
            }
        }
    }
    v
}

/// Events for a dwell scan of a weighted composite. Each dwell shows the
/// stack plane nearest its retina distance, translated by the drift, and
/// starts its own ladders from the dwell's first frame. Dwell `k` occupies
/// `[k·dwell, (k+1)·dwell)`.
pub fn synthesize_dwell_events(
    stack: &IntensityStack,
    weights: &[(f64, f64)],
    scan: &DwellScan,
    params: &EventSimParams,
    mapping: &ActuatorMapping,
) -> Result<Vec<Event>> {
    params.validate()?;
    scan.validate()?;
    let d = &stack.distances;
    let (width, height) = (stack.layout.n_phi, stack.layout.n_theta);
    let mut events = Vec::new();
    for (k, &pos) in scan.positions_mm.iter().enumerate() {
        let r = mapping.distance(pos);
        let tol = 1e-9 * r.abs().max(1.0);
        if r < d[0] - tol || r > d[d.len() - 1] + tol {
            return Err(EventError::MappingGap {
                lo_mm: r,
                hi_mm: r,
                stack_lo_mm: d[0],
                stack_hi_mm: d[d.len() - 1],
            });
        }
        let di = (0..d.len())
            .min_by(|&a, &b| (d[a] - r).abs().total_cmp(&(d[b] - r).abs()))
            .expect("non-empty stack");
        let plane = stack.composite_plane(weights, di)?;
        let start = k as u64 * scan.dwell_us;
        let frames: Vec<Vec<f64>> = (0..scan.frames_per_dwell)
            .map(|j| {
                let tau = scan.frame_offset_us(j) as f64 * 1e-6;
                let (sx, sy) = (scan.velocity_px_s[0] * tau, scan.velocity_px_s[1] * tau);
                (0..width * height)
                    .map(|px| {
                        sample_bilinear(
                            &plane,
                            width,
                            height,
                            (px % width) as f64 - sx,
                            (px / width) as f64 - sy,
                        )
                    })
                    .collect()
            })
            .collect();
        let samples: Vec<Sample> = (0..scan.frames_per_dwell)
            .map(|j| Sample {
                t_us: start + scan.frame_offset_us(j),
                distance_idx: j,
                position_mm: pos,
            })
            .collect();
        events.extend(events_from_frames(&frames, width, &samples, params)?);
    }
    Ok(events)
}

pub fn synthesize_events(
    stack: &IntensityStack,
    wavelength_nm: f64,
    profile: &ActuatorProfile,
    params: &EventSimParams,
    mapping: &ActuatorMapping,
) -> Result<Vec<Event>> {
    synthesize_events_weighted(stack, &[(wavelength_nm, 1.0)], profile, params, mapping)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "by", rename_all = "snake_case", deny_unknown_fields)]
pub enum RateBinning {
    Time { bin_us: u64 },
    Focal { bin_um: u32 },
}

/// Event counts over equal-width bins starting at `origin`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateHistogram {
    pub origin: f64,
    pub width: f64,
    pub counts: Vec<f64>,
}

impl RateHistogram {
    pub fn centers(&self) -> Vec<f64> {
        (0..self.counts.len())
            .map(|i| self.origin + (i as f64 + 0.5) * self.width)
            .collect()
    }

    pub fn normalized(&self) -> Self {
        let peak = self.counts.iter().copied().fold(0.0, f64::max);
        let mut out = self.clone();
        if peak > 0.0 {
            out.counts.iter_mut().for_each(|c| *c /= peak);
        }
        out
    }

    /// Centre of the highest bin, first on ties.
    pub fn argmax(&self) -> Option<f64> {
        let mut best: Option<(usize, f64)> = None;
        for (i, &c) in self.counts.iter().enumerate() {
            if best.is_none_or(|b| c > b.1) {
                best = Some((i, c));
            }
        }
        best.map(|(i, _)| self.origin + (i as f64 + 0.5) * self.width)
    }
}

pub fn event_rate_profile(events: &[Event], binning: RateBinning, normalize: bool) -> RateHistogram {
    let (width, key): (u64, fn(&Event) -> u64) = match binning {
        RateBinning::Time { bin_us } => (bin_us.max(1), |e| e.t_us),
        RateBinning::Focal { bin_um } => (bin_um.max(1) as u64, |e| e.f_um as u64),
    };
    let Some(lo) = events.iter().map(|e| key(e) / width).min() else {
        return RateHistogram {
            origin: 0.0,
            width: width as f64,
            counts: Vec::new(),
        };
    };
    let hi = events.iter().map(|e| key(e) / width).max().unwrap_or(lo);
    let mut counts = vec![0.0; (hi - lo + 1) as usize];
    for e in events {
        counts[(key(e) / width - lo) as usize] += 1.0;
    }
    let h = RateHistogram {
        origin: (lo * width) as f64,
        width: width as f64,
        counts,
    };
    if normalize {
        h.normalized()
    } else {
        h
    }
}

pub fn write_binary<W: Write>(events: &[Event], mut w: W) -> Result<()> {
    let n = u32::try_from(events.len()).map_err(|_| EventError::Format("more than u32::MAX events".into()))?;
    let mut buf = Vec::with_capacity(12 + events.len() * 17);
    buf.extend_from_slice(EVENT_MAGIC);
    buf.write_u32::<LittleEndian>(n)?;
    for e in events {
        buf.write_u64::<LittleEndian>(e.t_us)?;
        buf.write_u16::<LittleEndian>(e.x)?;
        buf.write_u16::<LittleEndian>(e.y)?;
        buf.write_i8(e.p)?;
        buf.write_u32::<LittleEndian>(e.f_um)?;
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_binary<R: Read>(r: R) -> Result<Vec<Event>> {
    let mut r = BufReader::new(r);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != EVENT_MAGIC {
        return Err(EventError::Format("bad magic, not an event file".into()));
    }
    let n = r.read_u32::<LittleEndian>()? as usize;
    let mut out = Vec::with_capacity(n.min(1 << 24));
    for _ in 0..n {
        out.push(Event {
            t_us: r.read_u64::<LittleEndian>()?,
            x: r.read_u16::<LittleEndian>()?,
            y: r.read_u16::<LittleEndian>()?,
            p: r.read_i8()?,
            f_um: r.read_u32::<LittleEndian>()?,
        });
    }
    Ok(out)
}

pub fn write_csv<W: Write>(events: &[Event], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let fmt = |e: csv::Error| EventError::Format(e.to_string());
    out.write_record(CSV_HEADER).map_err(fmt)?;
    for e in events {
        out.write_record([
            e.t_us.to_string(),
            e.x.to_string(),
            e.y.to_string(),
            e.p.to_string(),
            e.f_um.to_string(),
        ])
        .map_err(fmt)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads `t_us,x,y,p,f_um` CSV; columns may appear in any order.
pub fn read_csv<R: Read>(r: R) -> Result<Vec<Event>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(r));
    let header = rdr
        .headers()
        .map_err(|e| EventError::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let col = |name: &str| header.iter().position(|h| h == name);
    let f_col = col("f_um").ok_or(EventError::MissingFocalField)?;
    let mut cols = [0usize; 4];
    for (slot, name) in cols.iter_mut().zip(["t_us", "x", "y", "p"]) {
        *slot = col(name).ok_or_else(|| EventError::Parse {
            line: 1,
            message: format!("missing column {name}"),
        })?;
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| EventError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize, name: &str| -> Result<&str> {
            rec.get(i).ok_or_else(|| EventError::Parse {
                line,
                message: format!("missing {name}"),
            })
        };
        let bad = |name: &str, v: &str| EventError::Parse {
            line,
            message: format!("bad {name} value {v:?}"),
        };
        let parse = |i: usize, name: &str| -> Result<i64> {
            let v = field(i, name)?;
            v.parse::<i64>().map_err(|_| bad(name, v))
        };
        let t = parse(cols[0], "t_us")?;
        let x = parse(cols[1], "x")?;
        let y = parse(cols[2], "y")?;
        let p = parse(cols[3], "p")?;
        let f = parse(f_col, "f_um")?;
        if t < 0 {
            return Err(bad("t_us", &t.to_string()));
        }
        if !(0..=u16::MAX as i64).contains(&x) {
            return Err(bad("x", &x.to_string()));
        }
        if !(0..=u16::MAX as i64).contains(&y) {
            return Err(bad("y", &y.to_string()));
        }
        if p != 1 && p != -1 {
            return Err(bad("p", &p.to_string()));
        }
        if !(0..=u32::MAX as i64).contains(&f) {
            return Err(bad("f_um", &f.to_string()));
        }
        out.push(Event {
            t_us: t as u64,
            x: x as u16,
            y: y as u16,
            p: p as i8,
            f_um: f as u32,
        });
    }
    Ok(out)
}

/// Reads either format, sniffing the binary magic.
pub fn read_any<R: Read>(r: R) -> Result<Vec<Event>> {
    let mut r = BufReader::new(r);
    let head = r.fill_buf()?;
    if head.starts_with(EVENT_MAGIC) {
        read_binary(r)
    } else {
        read_csv(r)
    }
}
