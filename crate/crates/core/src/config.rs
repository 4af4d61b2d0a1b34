//! Run configuration. One TOML file drives every subcommand; sections a
//! command does not use may be left out.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{AnalysisOptions, FocalGrouping, DEFAULT_SLOPE_CAP};
use crate::dispersion::DispersionModel;
use crate::events::{ActuatorMapping, ActuatorProfile, DwellScan, EventSimParams};
use crate::pupil::PupilMask;
use crate::retina::{AzimuthalReduction, RetinaLayout};
use crate::segment::{CalibrationEntry, SegmentMode, SegmentParams, VelocityGrid};
use crate::tracer::{Emission, GrinSphere, TraceConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    /// `field` is the dotted key of the offending setting.
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn invalid(field: &str, message: impl std::fmt::Display) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        message: message.to_string(),
    }
}

pub type Result<T> = std::result::Result<T, ConfigError>;

/// A refractive index given as a constant, a preset name or a full model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Material {
    Index(f64),
    Preset(String),
    Model(DispersionModel),
}

impl Material {
    pub fn resolve(&self, field: &str) -> Result<DispersionModel> {
        match self {
            Material::Index(n) => Ok(DispersionModel::constant(*n)),
            Material::Preset(name) => DispersionModel::preset(name).ok_or_else(|| {
                invalid(
                    field,
                    format!(
                        "unknown preset {name:?}, expected one of {:?}",
                        DispersionModel::preset_names()
                    ),
                )
            }),
            Material::Model(m) => DispersionModel::new(m.kind.clone(), m.valid_range).map_err(|e| invalid(field, e)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SphereSpec {
    pub radius_mm: f64,
    pub core: Material,
    pub outer: Material,
    pub medium: Material,
}

impl SphereSpec {
    pub fn build(&self) -> Result<GrinSphere> {
        GrinSphere::new(
            self.radius_mm,
            self.core.resolve("sphere.core")?,
            self.outer.resolve("sphere.outer")?,
            self.medium.resolve("sphere.medium")?,
        )
        .map_err(|e| invalid("sphere", e))
    }
}

/// Where the point source sits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "at", rename_all = "snake_case", deny_unknown_fields)]
pub enum Placement {
    #[default]
    Axis,
    Angles {
        field_deg: f64,
        #[serde(default)]
        azimuth_deg: f64,
    },
    /// Source aimed so its image lands in retina bin `[row, col]`. One bin
    /// for all wavelengths, or one per wavelength.
    Bins { bins: Vec<[usize; 2]> },
}

fn default_source_distance() -> f64 {
    1e6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceSpec {
    pub n_rays: usize,
    #[serde(default)]
    pub ds_mm: Option<f64>,
    #[serde(default = "default_source_distance")]
    pub source_distance_mm: f64,
    #[serde(default)]
    pub source: Placement,
    #[serde(default)]
    pub emission: Emission,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Distances {
    List(Vec<f64>),
    /// `count` evenly spaced distances from `start_mm` to `stop_mm` inclusive.
    Range {
        start_mm: f64,
        stop_mm: f64,
        count: usize,
    },
}

impl Distances {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Distances::List(v) => v.clone(),
            Distances::Range {
                start_mm,
                stop_mm,
                count,
            } => match count {
                0 => vec![],
                1 => vec![*start_mm],
                n => (0..*n)
                    .map(|i| start_mm + (stop_mm - start_mm) * i as f64 / (n - 1) as f64)
                    .collect(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub wavelengths_nm: Vec<f64>,
    pub distances_mm: Distances,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeakWindow {
    /// Half-width in pixels around each wavelength's brightest bin.
    pub half: u16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct EventsSpec {
    pub sim: EventSimParams,
    /// When set, ε is this fraction of the stack's brightest bin instead of
    /// `sim.log_epsilon`.
    pub log_epsilon_rel: Option<f64>,
    /// Composite `(λ, weight)` source. Without it each wavelength gets its
    /// own stream.
    pub weights: Option<Vec<(f64, f64)>>,
    pub peak_window: Option<PeakWindow>,
    /// Dwell-with-drift recording instead of replaying the actuator sweep.
    pub dwell: Option<DwellScan>,
    pub write_csv: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "by", rename_all = "snake_case", deny_unknown_fields)]
pub enum GroupingSpec {
    /// Nearest stack distance, expressed as an actuator position.
    #[default]
    StackDistances,
    Bins {
        bin_um: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSpec {
    pub smoothing_window: usize,
    pub max_eta_nm: Option<f64>,
    pub slope_cap: f64,
    pub grouping: GroupingSpec,
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        let o = AnalysisOptions::default();
        Self {
            smoothing_window: o.smoothing_window,
            max_eta_nm: o.max_eta_nm,
            slope_cap: DEFAULT_SLOPE_CAP,
            grouping: GroupingSpec::default(),
        }
    }
}

impl AnalysisSpec {
    pub fn options(&self) -> AnalysisOptions {
        AnalysisOptions {
            smoothing_window: self.smoothing_window,
            max_eta_nm: self.max_eta_nm,
            slope_cap: self.slope_cap,
        }
    }

    pub fn grouping(&self, distances: &[f64], mapping: &ActuatorMapping) -> FocalGrouping {
        match self.grouping {
            GroupingSpec::StackDistances => {
                FocalGrouping::Positions(distances.iter().map(|d| d - mapping.offset_mm).collect())
            }
            GroupingSpec::Bins { bin_um } => FocalGrouping::Bins { bin_um },
        }
    }
}

fn default_reference() -> f64 {
    1000.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateSpec {
    /// CSV with `lambda_nm,qe,p_full_nw` columns; relative paths resolve
    /// against the config file.
    pub input: PathBuf,
    pub p_dark_nw: f64,
    #[serde(default = "default_reference")]
    pub reference_nm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmentSpec {
    pub window: usize,
    pub velocity_grid: VelocityGrid,
    pub mode: SegmentMode,
    pub dwell_fraction: f64,
    pub actuator_range_mm: Option<f64>,
    /// Explicit calibration. Without it, entries come from the stack's best
    /// focus per wavelength, as actuator positions.
    pub calibration: Option<Vec<CalibrationEntry>>,
    pub write_masks: bool,
}

impl Default for SegmentSpec {
    fn default() -> Self {
        let p = SegmentParams::default();
        Self {
            window: p.window,
            velocity_grid: p.velocity_grid,
            mode: p.mode,
            dwell_fraction: p.dwell_fraction,
            actuator_range_mm: p.actuator_range_mm,
            calibration: None,
            write_masks: true,
        }
    }
}

impl SegmentSpec {
    pub fn params(&self) -> SegmentParams {
        SegmentParams {
            window: self.window,
            velocity_grid: self.velocity_grid.clone(),
            mode: self.mode,
            dwell_fraction: self.dwell_fraction,
            actuator_range_mm: self.actuator_range_mm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Composite {
    pub name: String,
    pub weights: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumSpec {
    /// Defaults to one composite per stack wavelength.
    pub composites: Vec<Composite>,
    pub reduction: AzimuthalReduction,
    /// θ rows averaged into the side-lobe profile; defaults to all but row 0.
    pub side_lobe_rows: Option<[usize; 2]>,
}

fn full_aperture() -> PupilMask {
    PupilMask::FullAperture
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: u32,
    #[serde(default)]
    pub seed: u64,
    /// Worker count. Never written to the resolved config: outputs do not
    /// depend on it.
    #[serde(default, skip_serializing)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub sphere: Option<SphereSpec>,
    #[serde(default = "full_aperture")]
    pub pupil: PupilMask,
    #[serde(default)]
    pub trace: Option<TraceSpec>,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub retina: RetinaLayout,
    #[serde(default)]
    pub actuator: Option<ActuatorProfile>,
    /// Defaults to the first sweep distance, so actuator position 0 sits at
    /// the start of the stack.
    #[serde(default)]
    pub mapping: Option<ActuatorMapping>,
    #[serde(default)]
    pub events: EventsSpec,
    #[serde(default)]
    pub analysis: AnalysisSpec,
    #[serde(default)]
    pub calibrate: Option<CalibrateSpec>,
    #[serde(default)]
    pub segment: SegmentSpec,
    #[serde(default)]
    pub spectrum: SpectrumSpec,
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file. Relative input paths are made
    /// relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text, &path.display().to_string())?;
        if let (Some(c), Some(dir)) = (cfg.calibrate.as_mut(), path.parent()) {
            if c.input.is_relative() {
                c.input = dir.join(&c.input);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn distances(&self) -> Option<Vec<f64>> {
        self.sweep.as_ref().map(|s| s.distances_mm.values())
    }

    /// The configured mapping, or offset = first sweep distance.
    pub fn mapping(&self) -> ActuatorMapping {
        self.mapping.unwrap_or_else(|| ActuatorMapping {
            offset_mm: self.distances().and_then(|d| d.first().copied()).unwrap_or(0.0),
        })
    }

    /// One trace configuration per sweep wavelength.
    pub fn trace_configs(&self) -> Result<Vec<(f64, TraceConfig)>> {
        let trace = self
            .trace
            .as_ref()
            .ok_or_else(|| invalid("trace", "section is required"))?;
        let sweep = self
            .sweep
            .as_ref()
            .ok_or_else(|| invalid("sweep", "section is required"))?;
        sweep
            .wavelengths_nm
            .iter()
            .enumerate()
            .map(|(i, &l)| {
                let (field, az) = match &trace.source {
                    Placement::Axis => (0.0, 0.0),
                    Placement::Angles { field_deg, azimuth_deg } => (*field_deg, *azimuth_deg),
                    Placement::Bins { bins } => {
                        let [row, col] = if bins.len() == 1 { bins[0] } else { bins[i] };
                        (
                            self.retina.theta_center_deg(row),
                            (col as f64 + 0.5) * 360.0 / self.retina.n_phi as f64 - 180.0,
                        )
                    }
                };
                let mut cfg = TraceConfig::off_axis(trace.n_rays, trace.source_distance_mm, field, az);
                cfg.ds_mm = trace.ds_mm;
                cfg.emission = trace.emission.clone();
                cfg.seed = self.seed;
                Ok((l, cfg))
            })
            .collect()
    }

    /// Checks every present section before any compute.
    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(invalid(
                "schema",
                format!("expected {SCHEMA_VERSION}, got {}", self.schema),
            ));
        }
        if self.threads == Some(0) {
            return Err(invalid("threads", "must be at least 1"));
        }
        let sphere = self.sphere.as_ref().map(|s| s.build()).transpose()?;
        self.pupil.validate().map_err(|e| invalid("pupil", e))?;
        self.retina.validate().map_err(|e| invalid("retina", e))?;
        if let Some(sweep) = &self.sweep {
            let w = &sweep.wavelengths_nm;
            if w.is_empty() || w.iter().any(|l| !l.is_finite()) || w.windows(2).any(|p| p[1] <= p[0]) {
                return Err(invalid(
                    "sweep.wavelengths_nm",
                    "must be finite and strictly increasing",
                ));
            }
            let d = sweep.distances_mm.values();
            if d.is_empty() || d.iter().any(|x| !x.is_finite()) || d.windows(2).any(|p| p[1] <= p[0]) {
                return Err(invalid("sweep.distances_mm", "must be finite and strictly increasing"));
            }
            if let Some(s) = &sphere {
                if let Some(&bad) = d.iter().find(|&&x| x <= s.radius_mm) {
                    return Err(invalid(
                        "sweep.distances_mm",
                        format!("{bad} mm lies inside the sphere"),
                    ));
                }
                for &l in w {
                    s.at_wavelength(l).map_err(|e| invalid("sweep.wavelengths_nm", e))?;
                }
            }
        }
        if let Some(trace) = &self.trace {
            if trace.n_rays == 0 && !matches!(trace.emission, Emission::UniformGrid { .. }) {
                return Err(invalid("trace.n_rays", "must be positive"));
            }
            if let Placement::Bins { bins } = &trace.source {
                let n = self.sweep.as_ref().map_or(1, |s| s.wavelengths_nm.len());
                if bins.len() != 1 && bins.len() != n {
                    return Err(invalid(
                        "trace.source.bins",
                        format!("need 1 or {n} bins, got {}", bins.len()),
                    ));
                }
                if let Some(b) = bins
                    .iter()
                    .find(|b| b[0] >= self.retina.n_theta || b[1] >= self.retina.n_phi)
                {
                    return Err(invalid("trace.source.bins", format!("bin {b:?} is outside the retina")));
                }
            }
            if let (Some(s), Some(_)) = (&sphere, &self.sweep) {
                for (_, cfg) in self.trace_configs()? {
                    cfg.validate(s.radius_mm).map_err(|e| invalid("trace", e))?;
                }
            }
        }
        if let Some(a) = &self.actuator {
            a.validate().map_err(|e| invalid("actuator", e))?;
        }
        self.events.sim.validate().map_err(|e| invalid("events.sim", e))?;
        if let Some(r) = self.events.log_epsilon_rel {
            if !(r > 0.0 && r.is_finite()) {
                return Err(invalid("events.log_epsilon_rel", "must be positive"));
            }
        }
        if self.events.weights.is_some() && self.events.peak_window.is_some() {
            return Err(invalid(
                "events.peak_window",
                "applies to per-wavelength streams only, not events.weights",
            ));
        }
        if let Some(d) = &self.events.dwell {
            d.validate().map_err(|e| invalid("events.dwell", e))?;
        }
        if self.analysis.smoothing_window == 0 {
            return Err(invalid("analysis.smoothing_window", "must be at least 1"));
        }
        if let GroupingSpec::Bins { bin_um: 0 } = self.analysis.grouping {
            return Err(invalid("analysis.grouping.bin_um", "must be positive"));
        }
        if let Some(c) = &self.calibrate {
            if !(c.p_dark_nw >= 0.0 && c.p_dark_nw.is_finite()) {
                return Err(invalid("calibrate.p_dark_nw", "must be non-negative"));
            }
        }
        self.segment.params().validate().map_err(|e| invalid("segment", e))?;
        if let Some(entries) = &self.segment.calibration {
            crate::segment::FocalCalibrationMap::new(entries.clone()).map_err(|e| invalid("segment.calibration", e))?;
        }
        if let Some([a, b]) = self.spectrum.side_lobe_rows {
            if a >= b || b > self.retina.n_theta {
                return Err(invalid(
                    "spectrum.side_lobe_rows",
                    format!("{a}..{b} outside 0..{}", self.retina.n_theta),
                ));
            }
        }
        Ok(())
    }
}
