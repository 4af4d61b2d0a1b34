//! Hemispherical retinas, focal-distance sweeps and the intensity-stack file.
//!
//! The retina is a hemisphere of radius `R_retina` centred on the lens, facing
//! +z. Pixels are equal-angle `(θ, φ)` bins: θ is the polar angle from +z,
//! φ the azimuth in `[0, 2π)`.
//!
//! Stack file layout, all little-endian:
//!
//! ```text
//! "CPHSTK01"                                   8 bytes
//! n_λ, n_dist, n_theta, n_phi                  u32 each
//! wavelengths                                  n_λ × f64 (nm)
//! distances                                    n_dist × f64 (mm)
//! metadata length, metadata JSON               u32 + UTF-8 bytes
//! counts                                       u32, λ-major, then distance, then θ rows
//! ```

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Vec3;
use crate::pupil::PupilMask;
use crate::tracer::{trace_point_source, ExitRay, GrinSphere, RayCounts, TraceConfig, TraceError};

pub const STACK_MAGIC: &[u8; 8] = b"CPHSTK01";

/// Added to counts before taking logs.
pub const LOG_EPSILON: f64 = 1.0;

#[derive(Debug, Error)]
pub enum RetinaError {
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("wavelength {0} nm is not in the stack")]
    WavelengthNotInStack(f64),
    #[error("need at least two retina distances, got {0}")]
    InsufficientDistances(usize),
    #[error("invalid retina grid: {0}")]
    InvalidGrid(String),
    #[error("invalid stack: {0}")]
    InvalidStack(String),
    #[error("stack file format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, RetinaError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetinaLayout {
    pub n_theta: usize,
    pub n_phi: usize,
    #[serde(default = "default_max_polar")]
    pub max_polar_deg: f64,
}

fn default_max_polar() -> f64 {
    90.0
}

impl Default for RetinaLayout {
    fn default() -> Self {
        Self {
            n_theta: 256,
            n_phi: 256,
            max_polar_deg: 90.0,
        }
    }
}

impl RetinaLayout {
    pub fn validate(&self) -> Result<()> {
        if self.n_theta < 8 || self.n_phi < 8 {
            return Err(RetinaError::InvalidGrid(format!(
                "{}×{} bins, need at least 8×8",
                self.n_theta, self.n_phi
            )));
        }
        if self.n_theta > u16::MAX as usize + 1 || self.n_phi > u16::MAX as usize + 1 {
            return Err(RetinaError::InvalidGrid("at most 65536 bins per axis".into()));
        }
        if !(self.max_polar_deg > 0.0 && self.max_polar_deg <= 90.0) {
            return Err(RetinaError::InvalidGrid(format!(
                "max polar angle {} deg must lie in (0, 90]",
                self.max_polar_deg
            )));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.n_theta * self.n_phi
    }

    /// Bin centre polar angle in degrees.
    pub fn theta_center_deg(&self, row: usize) -> f64 {
        (row as f64 + 0.5) * self.max_polar_deg / self.n_theta as f64
    }

    /// `(row, col)` of a point on the hemisphere, or `None` beyond the rim.
    pub fn bin_of(&self, hit: &Vec3) -> Option<(usize, usize)> {
        let theta = hit.xy().norm().atan2(hit.z);
        let max = self.max_polar_deg.to_radians();
        if theta > max {
            return None;
        }
        let row = ((theta / max * self.n_theta as f64) as usize).min(self.n_theta - 1);
        let phi = hit.y.atan2(hit.x).rem_euclid(std::f64::consts::TAU);
        let col = ((phi / std::f64::consts::TAU * self.n_phi as f64) as usize).min(self.n_phi - 1);
        Some((row, col))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetinaGrid {
    pub radius_mm: f64,
    pub layout: RetinaLayout,
}

/// One accumulated retina image.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub counts: Vec<u32>,
    /// Exit rays that left through the rim of the hemisphere.
    pub missed: u64,
}

/// Where an exit ray meets the sphere of radius `radius_mm`.
pub fn propagate_to_retina(ray: &ExitRay, radius_mm: f64) -> Vec3 {
    let b = ray.position.dot(&ray.direction);
    let c = ray.position.norm_squared() - radius_mm * radius_mm;
    let t = -b + (b * b - c).max(0.0).sqrt();
    ray.position + ray.direction * t
}

/// Bins every exit ray on the hemisphere described by `grid`.
pub fn accumulate(exit_rays: &[ExitRay], grid: &RetinaGrid) -> Plane {
    let layout = &grid.layout;
    let mut counts = vec![0u32; layout.n_bins()];
    let mut missed = 0u64;
    for ray in exit_rays {
        let hit = propagate_to_retina(ray, grid.radius_mm);
        match layout.bin_of(&hit) {
            Some((row, col)) => counts[row * layout.n_phi + col] += 1,
            None => missed += 1,
        }
    }
    Plane { counts, missed }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StackMetadata {
    pub max_polar_deg: f64,
    pub sphere: Option<GrinSphere>,
    pub pupil: Option<PupilMask>,
    /// One trace configuration per wavelength.
    pub traces: Vec<TraceConfig>,
    pub ds_mm: Option<f64>,
    /// Ray accounting per wavelength.
    pub counts: Vec<RayCounts>,
    /// Missed tallies, `[λ][distance]`.
    pub missed: Vec<Vec<u64>>,
}

/// Retina images indexed by `(wavelength, distance, θ row, φ column)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityStack {
    pub wavelengths: Vec<f64>,
    pub distances: Vec<f64>,
    pub layout: RetinaLayout,
    planes: Vec<u32>,
    pub metadata: StackMetadata,
}

fn strictly_increasing(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite()) && v.windows(2).all(|w| w[1] > w[0])
}

impl IntensityStack {
    pub fn new(
        wavelengths: Vec<f64>,
        distances: Vec<f64>,
        layout: RetinaLayout,
        planes: Vec<u32>,
        metadata: StackMetadata,
    ) -> Result<Self> {
        layout.validate()?;
        if wavelengths.is_empty() || distances.is_empty() {
            return Err(RetinaError::InvalidStack("empty wavelength or distance list".into()));
        }
        if !strictly_increasing(&wavelengths) {
            return Err(RetinaError::InvalidStack(
                "wavelengths must be strictly increasing".into(),
            ));
        }
        if !strictly_increasing(&distances) {
            return Err(RetinaError::InvalidStack(
                "distances must be strictly increasing".into(),
            ));
        }
        let expected = wavelengths.len() * distances.len() * layout.n_bins();
        if planes.len() != expected {
            return Err(RetinaError::InvalidStack(format!(
                "{} counts, expected {expected}",
                planes.len()
            )));
        }
        Ok(Self {
            wavelengths,
            distances,
            layout,
            planes,
            metadata,
        })
    }

    pub fn wavelength_index(&self, wavelength_nm: f64) -> Result<usize> {
        self.wavelengths
            .iter()
            .position(|&l| (l - wavelength_nm).abs() < 1e-9)
            .ok_or(RetinaError::WavelengthNotInStack(wavelength_nm))
    }

    pub fn plane(&self, wavelength_idx: usize, distance_idx: usize) -> &[u32] {
        let n = self.layout.n_bins();
        let start = (wavelength_idx * self.distances.len() + distance_idx) * n;
        &self.planes[start..start + n]
    }

    pub fn raw(&self) -> &[u32] {
        &self.planes
    }

    pub fn peak_profile(&self, wavelength_nm: f64) -> Result<Vec<(f64, u32)>> {
        let li = self.wavelength_index(wavelength_nm)?;
        Ok(self
            .distances
            .iter()
            .enumerate()
            .map(|(di, &d)| (d, self.plane(li, di).iter().copied().max().unwrap_or(0)))
            .collect())
    }

    /// Peak profiles for every wavelength, divided by the largest peak in the
    /// whole stack so heights stay comparable across wavelengths.
    pub fn normalized_peak_profiles(&self) -> Vec<Vec<(f64, f64)>> {
        let raw: Vec<Vec<(f64, u32)>> = self
            .wavelengths
            .iter()
            .map(|&l| self.peak_profile(l).expect("own wavelength"))
            .collect();
        let global = raw.iter().flatten().map(|p| p.1).max().unwrap_or(0).max(1) as f64;
        raw.into_iter()
            .map(|p| p.into_iter().map(|(d, v)| (d, v as f64 / global)).collect())
            .collect()
    }

    /// Distance of the highest peak for `wavelength_nm` (first on ties).
    pub fn best_focus(&self, wavelength_nm: f64) -> Result<f64> {
        let profile = self.peak_profile(wavelength_nm)?;
        let mut best = profile[0];
        for &p in &profile[1..] {
            if p.1 > best.1 {
                best = p;
            }
        }
        Ok(best.0)
    }

    /// `(row, col)` of the brightest bin over all distances for one
    /// wavelength, first in (distance, row, col) order on ties.
    pub fn peak_pixel(&self, wavelength_nm: f64) -> Result<(usize, usize)> {
        let li = self.wavelength_index(wavelength_nm)?;
        let mut best = (0u32, 0usize);
        for di in 0..self.distances.len() {
            for (i, &c) in self.plane(li, di).iter().enumerate() {
                if c > best.0 {
                    best = (c, i);
                }
            }
        }
        Ok((best.1 / self.layout.n_phi, best.1 % self.layout.n_phi))
    }

    /// Weighted sum of per-wavelength planes at one distance.
    pub fn composite_plane(&self, weights: &[(f64, f64)], distance_idx: usize) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.layout.n_bins()];
        for &(l, w) in weights {
            let li = self.wavelength_index(l)?;
            for (o, &c) in out.iter_mut().zip(self.plane(li, distance_idx)) {
                *o += w * c as f64;
            }
        }
        Ok(out)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(STACK_MAGIC)?;
        for v in [
            self.wavelengths.len(),
            self.distances.len(),
            self.layout.n_theta,
            self.layout.n_phi,
        ] {
            w.write_u32::<LittleEndian>(v as u32)?;
        }
        for &l in &self.wavelengths {
            w.write_f64::<LittleEndian>(l)?;
        }
        for &d in &self.distances {
            w.write_f64::<LittleEndian>(d)?;
        }
        let mut meta = self.metadata.clone();
        meta.max_polar_deg = self.layout.max_polar_deg;
        let json = serde_json::to_vec(&meta).map_err(|e| RetinaError::Format(e.to_string()))?;
        w.write_u32::<LittleEndian>(json.len() as u32)?;
        w.write_all(&json)?;
        let mut body = Vec::with_capacity(self.planes.len() * 4);
        for &c in &self.planes {
            body.write_u32::<LittleEndian>(c)?;
        }
        w.write_all(&body)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != STACK_MAGIC {
            return Err(RetinaError::Format("bad magic, not a stack file".into()));
        }
        let n_l = r.read_u32::<LittleEndian>()? as usize;
        let n_d = r.read_u32::<LittleEndian>()? as usize;
        let n_theta = r.read_u32::<LittleEndian>()? as usize;
        let n_phi = r.read_u32::<LittleEndian>()? as usize;
        let read_f64s =
            |r: &mut R, n: usize| -> Result<Vec<f64>> { (0..n).map(|_| Ok(r.read_f64::<LittleEndian>()?)).collect() };
        let wavelengths = read_f64s(&mut r, n_l)?;
        let distances = read_f64s(&mut r, n_d)?;
        let json_len = r.read_u32::<LittleEndian>()? as usize;
        let mut json = vec![0u8; json_len];
        r.read_exact(&mut json)?;
        let metadata: StackMetadata =
            serde_json::from_slice(&json).map_err(|e| RetinaError::Format(format!("metadata: {e}")))?;
        let n = n_l
            .checked_mul(n_d)
            .and_then(|v| v.checked_mul(n_theta))
            .and_then(|v| v.checked_mul(n_phi))
            .ok_or_else(|| RetinaError::Format("dimension overflow".into()))?;
        let mut body = vec![0u8; n * 4];
        r.read_exact(&mut body)?;
        let planes = body
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let layout = RetinaLayout {
            n_theta,
            n_phi,
            max_polar_deg: if metadata.max_polar_deg > 0.0 {
                metadata.max_polar_deg
            } else {
                90.0
            },
        };
        Self::new(wavelengths, distances, layout, planes, metadata)
    }

    /// Peak-profile CSV: `lambda_nm,distance_mm,peak,total`.
    pub fn write_peak_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["lambda_nm", "distance_mm", "peak", "total"])
            .map_err(csv_err)?;
        for (li, &l) in self.wavelengths.iter().enumerate() {
            for (di, &d) in self.distances.iter().enumerate() {
                let plane = self.plane(li, di);
                let peak = plane.iter().copied().max().unwrap_or(0);
                let total: u64 = plane.iter().map(|&c| c as u64).sum();
                out.write_record([l.to_string(), d.to_string(), peak.to_string(), total.to_string()])
                    .map_err(csv_err)?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> RetinaError {
    RetinaError::Format(e.to_string())
}

/// Traces once per wavelength and accumulates at every distance, reusing the
/// exit rays across distances.
pub fn sweep(
    sphere: &GrinSphere,
    mask: &PupilMask,
    cfg: &TraceConfig,
    wavelengths: &[f64],
    distances: &[f64],
    layout: &RetinaLayout,
) -> Result<IntensityStack> {
    let sources: Vec<(f64, TraceConfig)> = wavelengths.iter().map(|&l| (l, cfg.clone())).collect();
    sweep_sources(sphere, mask, &sources, distances, layout)
}

/// Like [`sweep`], but each wavelength carries its own source configuration,
/// e.g. point sources of different colours at different field positions.
pub fn sweep_sources(
    sphere: &GrinSphere,
    mask: &PupilMask,
    sources: &[(f64, TraceConfig)],
    distances: &[f64],
    layout: &RetinaLayout,
) -> Result<IntensityStack> {
    layout.validate()?;
    let wavelengths: Vec<f64> = sources.iter().map(|s| s.0).collect();
    if wavelengths.is_empty() || distances.is_empty() {
        return Err(RetinaError::InvalidStack("empty wavelength or distance list".into()));
    }
    if !strictly_increasing(&wavelengths) || !strictly_increasing(distances) {
        return Err(RetinaError::InvalidStack(
            "wavelengths and distances must be strictly increasing".into(),
        ));
    }
    if distances[0] <= sphere.radius_mm {
        return Err(RetinaError::InvalidGrid(format!(
            "retina distance {} mm must exceed the sphere radius {} mm",
            distances[0], sphere.radius_mm
        )));
    }
    let mut planes = Vec::with_capacity(wavelengths.len() * distances.len() * layout.n_bins());
    let mut counts = Vec::new();
    let mut missed = Vec::new();
    for (l, cfg) in sources {
        let traced = trace_point_source(sphere, mask, cfg, *l)?;
        let per_distance: Vec<Plane> = distances
            .par_iter()
            .map(|&d| {
                accumulate(
                    &traced.exit_rays,
                    &RetinaGrid {
                        radius_mm: d,
                        layout: *layout,
                    },
                )
            })
            .collect();
        missed.push(per_distance.iter().map(|p| p.missed).collect());
        for p in per_distance {
            planes.extend_from_slice(&p.counts);
        }
        counts.push(traced.counts);
    }
    let metadata = StackMetadata {
        max_polar_deg: layout.max_polar_deg,
        sphere: Some(sphere.clone()),
        pupil: Some(mask.clone()),
        ds_mm: sources.first().map(|s| s.1.step_for(sphere.radius_mm)),
        traces: sources.iter().map(|s| s.1.clone()).collect(),
        counts,
        missed,
    };
    IntensityStack::new(wavelengths, distances.to_vec(), *layout, planes, metadata)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum AzimuthalReduction {
    /// Mean over all φ columns.
    #[default]
    Mean,
    /// Mean over columns `start..end`, for pupils without rotational symmetry.
    Slice { start: usize, end: usize },
}

/// `∂ log(I + ε) / ∂R_retina` over `(distance, θ row)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMap {
    pub distances: Vec<f64>,
    /// θ bin centres in degrees.
    pub radial_deg: Vec<f64>,
    /// Row-major `[distance][θ row]`.
    pub values: Vec<f64>,
}

impl GradientMap {
    pub fn at(&self, distance_idx: usize, radial_idx: usize) -> f64 {
        self.values[distance_idx * self.radial_deg.len() + radial_idx]
    }

    /// Cross-section along the distance axis, averaged over θ rows `rows`.
    pub fn side_lobe_profile(&self, rows: std::ops::Range<usize>) -> Vec<f64> {
        let n = rows.len().max(1) as f64;
        (0..self.distances.len())
            .map(|di| rows.clone().map(|r| self.at(di, r)).sum::<f64>() / n)
            .collect()
    }
}

/// Radial log-intensity gradient along the retina-distance axis for a source
/// with the given spectral `weights` (`(λ, weight)` pairs).
pub fn radial_log_gradient(
    stack: &IntensityStack,
    weights: &[(f64, f64)],
    reduction: AzimuthalReduction,
) -> Result<GradientMap> {
    let nd = stack.distances.len();
    if nd < 2 {
        return Err(RetinaError::InsufficientDistances(nd));
    }
    let layout = stack.layout;
    let (c0, c1) = match reduction {
        AzimuthalReduction::Mean => (0, layout.n_phi),
        AzimuthalReduction::Slice { start, end } => {
            if start >= end || end > layout.n_phi {
                return Err(RetinaError::InvalidGrid(format!(
                    "azimuth slice {start}..{end} outside 0..{}",
                    layout.n_phi
                )));
            }
            (start, end)
        }
    };
    let radial: Vec<Vec<f64>> = (0..nd)
        .map(|di| {
            let plane = stack.composite_plane(weights, di)?;
            Ok((0..layout.n_theta)
                .map(|row| {
                    let cells = &plane[row * layout.n_phi + c0..row * layout.n_phi + c1];
                    cells.iter().map(|&v| (v + LOG_EPSILON).ln()).sum::<f64>() / cells.len() as f64
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let d = &stack.distances;
    let mut values = Vec::with_capacity(nd * layout.n_theta);
    for di in 0..nd {
        let (lo, hi) = (di.saturating_sub(1), (di + 1).min(nd - 1));
        let span = d[hi] - d[lo];
        for row in 0..layout.n_theta {
            values.push((radial[hi][row] - radial[lo][row]) / span);
        }
    }
    Ok(GradientMap {
        distances: d.clone(),
        radial_deg: (0..layout.n_theta).map(|r| layout.theta_center_deg(r)).collect(),
        values,
    })
}

/// Euclidean distance between two equally long profiles.
pub fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}
