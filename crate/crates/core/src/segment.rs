//! Colour-from-focus segmentation of event streams: accumulate the events of
//! one focal dwell, undo linear motion by contrast maximisation, score local
//! sharpness, binarise with Otsu and label the events in the sharp regions.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::Event;

#[derive(Debug, Error)]
pub enum SegmentError {
    #[error("calibration map has no entries")]
    NoCalibration,
    #[error("invalid calibration: {0}")]
    InvalidCalibration(String),
    #[error("window {window} does not fit a {width}x{height} image")]
    WindowTooLarge { window: usize, width: usize, height: usize },
    #[error("histogram has a single value")]
    DegenerateHistogram,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SegmentError>;

/// Row-major `f64` image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Population variance over all pixels.
    pub fn variance(&self) -> f64 {
        population_variance(self.data.iter().copied(), self.data.len())
    }
}

fn population_variance(values: impl Iterator<Item = f64> + Clone, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64
}

/// Per-pixel event counts, polarity-agnostic. Events outside the raster are
/// ignored.
pub fn accumulate_event_image(events: &[Event], width: usize, height: usize) -> Image {
    let mut img = Image::zeros(width, height);
    for e in events {
        let (x, y) = (e.x as usize, e.y as usize);
        if x < width && y < height {
            img.data[y * width + x] += 1.0;
        }
    }
    img
}

/// Square grid of candidate velocities in pixels/s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VelocityGrid {
    pub min_px_s: f64,
    pub max_px_s: f64,
    pub steps: usize,
}

impl Default for VelocityGrid {
    fn default() -> Self {
        Self {
            min_px_s: -100.0,
            max_px_s: 100.0,
            steps: 21,
        }
    }
}

impl VelocityGrid {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || !(self.min_px_s.is_finite() && self.max_px_s.is_finite()) {
            return Err(SegmentError::InvalidParams(
                "velocity grid needs finite bounds and steps >= 1".into(),
            ));
        }
        if self.steps > 1 && self.max_px_s <= self.min_px_s {
            return Err(SegmentError::InvalidParams("velocity grid max must exceed min".into()));
        }
        Ok(())
    }

    pub fn axis(&self) -> Vec<f64> {
        if self.steps == 1 {
            return vec![0.5 * (self.min_px_s + self.max_px_s)];
        }
        let step = (self.max_px_s - self.min_px_s) / (self.steps - 1) as f64;
        (0..self.steps).map(|i| self.min_px_s + step * i as f64).collect()
    }

    /// All `(vx, vy)` pairs, `vy` outer.
    pub fn candidates(&self) -> Vec<(f64, f64)> {
        let axis = self.axis();
        axis.iter()
            .flat_map(|&vy| axis.iter().map(move |&vx| (vx, vy)))
            .collect()
    }
}

fn warp(e: &Event, v: (f64, f64), t_ref: u64) -> (f64, f64) {
    let dt = (e.t_us as f64 - t_ref as f64) * 1e-6;
    (e.x as f64 - v.0 * dt, e.y as f64 - v.1 * dt)
}

/// Bilinear vote of every event, warped to `t_ref` at velocity `v`.
pub fn warped_image(events: &[Event], v: (f64, f64), t_ref: u64, width: usize, height: usize) -> Image {
    let mut img = Image::zeros(width, height);
    for e in events {
        let (x, y) = warp(e, v, t_ref);
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
            for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
                let (xi, yi) = (x0 as i64 + dx, y0 as i64 + dy);
                let w = wx * wy;
                if w > 0.0 && xi >= 0 && yi >= 0 && (xi as usize) < width && (yi as usize) < height {
                    img.data[yi as usize * width + xi as usize] += w;
                }
            }
        }
    }
    img
}

#[derive(Debug, Clone, PartialEq)]
pub struct CmaxResult {
    pub velocity: (f64, f64),
    pub image: Image,
    pub variance: f64,
    /// Reference time the events were warped to (first event).
    pub t_ref_us: u64,
    /// All events share one timestamp, so no warp can change the image.
    pub degenerate: bool,
}

/// Exhaustive contrast maximisation over `grid`. Ties go to the slowest
/// candidate, then to grid order.
pub fn cmax_linear(events: &[Event], width: usize, height: usize, grid: &VelocityGrid) -> Result<CmaxResult> {
    grid.validate()?;
    let t_ref = events.iter().map(|e| e.t_us).min().unwrap_or(0);
    let t_max = events.iter().map(|e| e.t_us).max().unwrap_or(0);
    if t_max == t_ref {
        let image = warped_image(events, (0.0, 0.0), t_ref, width, height);
        return Ok(CmaxResult {
            velocity: (0.0, 0.0),
            variance: image.variance(),
            image,
            t_ref_us: t_ref,
            degenerate: true,
        });
    }
    let cands = grid.candidates();
    let scores: Vec<f64> = cands
        .par_iter()
        .map(|&v| warped_image(events, v, t_ref, width, height).variance())
        .collect();
    let speed = |v: (f64, f64)| v.0 * v.0 + v.1 * v.1;
    let mut best = 0;
    for i in 1..cands.len() {
        if scores[i] > scores[best] || (scores[i] == scores[best] && speed(cands[i]) < speed(cands[best])) {
            best = i;
        }
    }
    let velocity = cands[best];
    let image = warped_image(events, velocity, t_ref, width, height);
    Ok(CmaxResult {
        velocity,
        variance: scores[best],
        image,
        t_ref_us: t_ref,
        degenerate: false,
    })
}

/// Population variance of every `window`×`window` patch, stride 1. The map
/// is `(width - window + 1) × (height - window + 1)`; entry `(i, j)` scores
/// the patch whose top-left pixel is `(i, j)`.
pub fn sharpness_map(image: &Image, window: usize) -> Result<Image> {
    if window == 0 || window > image.width || window > image.height {
        return Err(SegmentError::WindowTooLarge {
            window,
            width: image.width,
            height: image.height,
        });
    }
    let mw = image.width - window + 1;
    let mh = image.height - window + 1;
    let n = window * window;
    let data: Vec<f64> = (0..mh)
        .into_par_iter()
        .flat_map_iter(|j| {
            (0..mw).map(move |i| {
                let patch = (j..j + window).flat_map(|y| {
                    image.data[y * image.width + i..y * image.width + i + window]
                        .iter()
                        .copied()
                });
                population_variance(patch, n)
            })
        })
        .collect();
    Ok(Image {
        width: mw,
        height: mh,
        data,
    })
}

const OTSU_BINS: usize = 256;

fn otsu_bin(v: f64, lo: f64, width: f64) -> usize {
    (((v - lo) / width) as usize).min(OTSU_BINS - 1)
}

/// Otsu threshold over a 256-bin histogram of the value range. Values at or
/// above the returned threshold form the upper class. Ties go to the lowest
/// threshold.
pub fn otsu_threshold(values: &[f64]) -> Result<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(SegmentError::DegenerateHistogram);
    }
    let width = (hi - lo) / OTSU_BINS as f64;
    let mut hist = [0f64; OTSU_BINS];
    for &v in values {
        hist[otsu_bin(v, lo, width)] += 1.0;
    }
    let total: f64 = hist.iter().sum();
    let weighted: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c).sum();
    let (mut w0, mut s0) = (0.0, 0.0);
    let mut best = (f64::NEG_INFINITY, 0usize);
    for (k, &c) in hist.iter().enumerate().take(OTSU_BINS - 1) {
        w0 += c;
        s0 += k as f64 * c;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = s0 / w0;
        let m1 = (weighted - s0) / w1;
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if between > best.0 {
            best = (between, k);
        }
    }
    Ok(lo + (best.1 + 1) as f64 * width)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationEntry {
    pub label: String,
    pub wavelength_nm: f64,
    pub position_mm: f64,
}

/// Actuator positions of best focus per wavelength, visited in `visit_order`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FocalCalibrationMap {
    pub entries: Vec<CalibrationEntry>,
    pub visit_order: Vec<usize>,
}

impl FocalCalibrationMap {
    /// Visits entries in order of increasing actuator position.
    pub fn new(entries: Vec<CalibrationEntry>) -> Result<Self> {
        let mut visit_order: Vec<usize> = (0..entries.len()).collect();
        visit_order.sort_by(|&a, &b| entries[a].position_mm.total_cmp(&entries[b].position_mm));
        let map = Self { entries, visit_order };
        map.validate()?;
        Ok(map)
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(SegmentError::NoCalibration);
        }
        for (i, a) in self.entries.iter().enumerate() {
            if !a.position_mm.is_finite() {
                return Err(SegmentError::InvalidCalibration(format!(
                    "entry {:?} has a non-finite position",
                    a.label
                )));
            }
            for b in &self.entries[i + 1..] {
                if a.label == b.label {
                    return Err(SegmentError::InvalidCalibration(format!(
                        "duplicate label {:?}",
                        a.label
                    )));
                }
                if a.position_mm == b.position_mm {
                    return Err(SegmentError::InvalidCalibration(format!(
                        "labels {:?} and {:?} share position {} mm",
                        a.label, b.label, a.position_mm
                    )));
                }
            }
        }
        let mut seen = vec![false; self.entries.len()];
        for &i in &self.visit_order {
            if i >= seen.len() || std::mem::replace(&mut seen[i], true) {
                return Err(SegmentError::InvalidCalibration(
                    "visit order must be a permutation of the entries".into(),
                ));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(SegmentError::InvalidCalibration(
                "visit order must be a permutation of the entries".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentMode {
    /// Labeled events leave the pool before the next plane.
    #[default]
    Static,
    /// Every plane sees the full stream; a later plane may relabel an event.
    Dynamic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentParams {
    pub window: usize,
    pub velocity_grid: VelocityGrid,
    pub mode: SegmentMode,
    /// Dwell half-width as a fraction of the actuator range.
    pub dwell_fraction: f64,
    /// Actuator range in mm; defaults to the span of the stream's f values.
    pub actuator_range_mm: Option<f64>,
}

impl Default for SegmentParams {
    fn default() -> Self {
        Self {
            window: 30,
            velocity_grid: VelocityGrid::default(),
            mode: SegmentMode::Static,
            dwell_fraction: 0.02,
            actuator_range_mm: None,
        }
    }
}

impl SegmentParams {
    pub fn validate(&self) -> Result<()> {
        self.velocity_grid.validate()?;
        if self.window == 0 {
            return Err(SegmentError::InvalidParams("window must be at least 1".into()));
        }
        if !(self.dwell_fraction > 0.0 && self.dwell_fraction.is_finite()) {
            return Err(SegmentError::InvalidParams("dwell_fraction must be positive".into()));
        }
        if let Some(r) = self.actuator_range_mm {
            if !(r > 0.0 && r.is_finite()) {
                return Err(SegmentError::InvalidParams("actuator_range_mm must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlaneStatus {
    Labeled,
    /// No events in the dwell.
    EmptyPlane,
    /// Sharpness map was flat; nothing labeled.
    Flat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaneResult {
    pub entry: usize,
    pub status: PlaneStatus,
    pub n_events: usize,
    pub velocity: (f64, f64),
    pub sharpness: Option<Image>,
    pub threshold: Option<f64>,
    /// Pixels covered by at least one above-threshold window, row-major.
    pub mask: Option<Vec<bool>>,
    pub n_labeled: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationResult {
    /// Entry index per input event.
    pub labels: Vec<Option<usize>>,
    /// One per visited plane, in visit order.
    pub planes: Vec<PlaneResult>,
    pub width: usize,
    pub height: usize,
}

impl SegmentationResult {
    pub fn n_labeled(&self) -> usize {
        self.labels.iter().filter(|l| l.is_some()).count()
    }
}

/// Union of the `window`×`window` patches whose score reaches `threshold`.
fn window_mask(map: &Image, window: usize, threshold: f64, width: usize, height: usize) -> Vec<bool> {
    // 2-D difference array over patch footprints.
    let mut diff = vec![0i64; (width + 1) * (height + 1)];
    let w1 = width + 1;
    for j in 0..map.height {
        for i in 0..map.width {
            if map.at(i, j) >= threshold {
                diff[j * w1 + i] += 1;
                diff[j * w1 + i + window] -= 1;
                diff[(j + window) * w1 + i] -= 1;
                diff[(j + window) * w1 + i + window] += 1;
            }
        }
    }
    for y in 0..=height {
        for x in 1..=width {
            diff[y * w1 + x] += diff[y * w1 + x - 1];
        }
    }
    for y in 1..=height {
        for x in 0..=width {
            diff[y * w1 + x] += diff[(y - 1) * w1 + x];
        }
    }
    (0..height)
        .flat_map(|y| (0..width).map(move |x| (x, y)))
        .map(|(x, y)| diff[y * w1 + x] > 0)
        .collect()
}

/// Labels events plane by plane along the calibration's visit order.
pub fn segment_sweep(
    events: &[Event],
    calib: &FocalCalibrationMap,
    params: &SegmentParams,
    width: usize,
    height: usize,
) -> Result<SegmentationResult> {
    calib.validate()?;
    params.validate()?;
    if params.window > width || params.window > height {
        return Err(SegmentError::WindowTooLarge {
            window: params.window,
            width,
            height,
        });
    }
    let range = params.actuator_range_mm.unwrap_or_else(|| {
        let lo = events.iter().map(|e| e.f_um).min().unwrap_or(0);
        let hi = events.iter().map(|e| e.f_um).max().unwrap_or(0);
        (hi - lo) as f64 / 1000.0
    });
    let tol_um = params.dwell_fraction * range * 1000.0;

    let mut labels: Vec<Option<usize>> = vec![None; events.len()];
    let mut planes = Vec::with_capacity(calib.visit_order.len());
    for &entry in &calib.visit_order {
        let centre_um = calib.entries[entry].position_mm * 1000.0;
        let idx: Vec<usize> = (0..events.len())
            .filter(|&i| (events[i].f_um as f64 - centre_um).abs() <= tol_um)
            .filter(|&i| params.mode == SegmentMode::Dynamic || labels[i].is_none())
            .collect();
        let mut plane = PlaneResult {
            entry,
            status: PlaneStatus::EmptyPlane,
            n_events: idx.len(),
            velocity: (0.0, 0.0),
            sharpness: None,
            threshold: None,
            mask: None,
            n_labeled: 0,
        };
        if idx.is_empty() {
            planes.push(plane);
            continue;
        }
        let dwell: Vec<Event> = idx.iter().map(|&i| events[i]).collect();
        let cmax = cmax_linear(&dwell, width, height, &params.velocity_grid)?;
        plane.velocity = cmax.velocity;
        let map = sharpness_map(&cmax.image, params.window)?;
        let threshold = match otsu_threshold(&map.data) {
            Ok(t) => t,
            Err(SegmentError::DegenerateHistogram) => {
                plane.status = PlaneStatus::Flat;
                plane.sharpness = Some(map);
                planes.push(plane);
                continue;
            }
            Err(e) => return Err(e),
        };
        let mask = window_mask(&map, params.window, threshold, width, height);
        for (&i, e) in idx.iter().zip(&dwell) {
            let (x, y) = warp(e, cmax.velocity, cmax.t_ref_us);
            let (xr, yr) = (x.round(), y.round());
            if xr >= 0.0
                && yr >= 0.0
                && (xr as usize) < width
                && (yr as usize) < height
                && mask[yr as usize * width + xr as usize]
            {
                labels[i] = Some(entry);
                plane.n_labeled += 1;
            }
        }
        plane.status = PlaneStatus::Labeled;
        plane.threshold = Some(threshold);
        plane.sharpness = Some(map);
        plane.mask = Some(mask);
        planes.push(plane);
    }
    Ok(SegmentationResult {
        labels,
        planes,
        width,
        height,
    })
}

pub const LABELED_CSV_HEADER: [&str; 6] = ["t_us", "x", "y", "p", "f_um", "label"];

/// Events with their label text; unlabeled events get an empty cell.
pub fn write_labeled_csv<W: Write>(
    events: &[Event],
    result: &SegmentationResult,
    calib: &FocalCalibrationMap,
    w: W,
) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(LABELED_CSV_HEADER)?;
    for (e, l) in events.iter().zip(&result.labels) {
        let label = l.map(|i| calib.entries[i].label.as_str()).unwrap_or("");
        out.write_record([
            e.t_us.to_string(),
            e.x.to_string(),
            e.y.to_string(),
            e.p.to_string(),
            e.f_um.to_string(),
            label.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Binary PGM ("P5"), 255 inside the mask.
pub fn write_mask_pgm<W: Write>(mask: &[bool], width: usize, height: usize, mut w: W) -> Result<()> {
    if mask.len() != width * height {
        return Err(SegmentError::InvalidParams(format!(
            "mask has {} pixels, expected {}",
            mask.len(),
            width * height
        )));
    }
    write!(w, "P5\n{width} {height}\n255\n")?;
    let bytes: Vec<u8> = mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
    w.write_all(&bytes)?;
    Ok(())
}
