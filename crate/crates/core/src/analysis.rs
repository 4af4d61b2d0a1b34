//! Best focus, FWHM, the wavelength/focal-distance mapping and resolving power.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::{ActuatorMapping, ActuatorProfile, Event, EventError};
use crate::retina::{IntensityStack, RetinaError};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("need at least {min} samples, got {got}")]
    TooFewSamples { min: usize, got: usize },
    #[error("profile has no interior peak")]
    NoPeak,
    #[error("peak at f0 = {f0_mm} mm has no half-maximum crossing on one side")]
    AmbiguousPeak { f0_mm: f64 },
    #[error("wavelength {0} nm is outside the focus curve")]
    OutOfCurveRange(f64),
    #[error("focus curve is flat at {0} nm, dλ/df exceeds the cap")]
    ZeroSlope(f64),
    #[error("spectral width must be positive")]
    DivisionByZeroWidth,
    #[error("reference wavelength {0} nm not in the calibration rows")]
    MissingReference(f64),
    #[error("QE at {0} nm must lie in (0, 1]")]
    NonPositiveQE(f64),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error(transparent)]
    Events(#[from] EventError),
    #[error(transparent)]
    Stack(#[from] RetinaError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, AnalysisError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileSource {
    FramePeakIntensity,
    EventRate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralProfile {
    pub wavelength_nm: f64,
    /// `(f mm, response)` sorted by f.
    pub samples: Vec<(f64, f64)>,
    pub source: ProfileSource,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakFit {
    pub f0_mm: f64,
    pub fwhm_mm: f64,
}

/// Centred moving average; windows are truncated at the ends.
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let half = window.max(1) / 2;
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(values.len());
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Peak location and full width at half maximum. The half level sits halfway
/// between the profile minimum and the peak; crossings are linearly
/// interpolated. `window` is the moving-average length (1 disables it).
pub fn find_peak_and_fwhm(samples: &[(f64, f64)], window: usize) -> Result<PeakFit> {
    if samples.len() < 5 {
        return Err(AnalysisError::TooFewSamples {
            min: 5,
            got: samples.len(),
        });
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let f: Vec<f64> = sorted.iter().map(|s| s.0).collect();
    let y = smooth(&sorted.iter().map(|s| s.1).collect::<Vec<_>>(), window);

    let non_decreasing = y.windows(2).all(|w| w[1] >= w[0]);
    let non_increasing = y.windows(2).all(|w| w[1] <= w[0]);
    if non_decreasing || non_increasing {
        return Err(AnalysisError::NoPeak);
    }
    let (mut peak, mut top) = (0, y[0]);
    for (i, &v) in y.iter().enumerate() {
        if v > top {
            peak = i;
            top = v;
        }
    }
    let base = y.iter().copied().fold(f64::INFINITY, f64::min);
    let half = base + 0.5 * (top - base);
    let f0 = f[peak];
    let cross = |i: usize, j: usize| f[i] + (half - y[i]) / (y[j] - y[i]) * (f[j] - f[i]);
    let left = (0..peak).rev().find(|&i| y[i] <= half).map(|i| cross(i, i + 1));
    let right = (peak + 1..y.len()).find(|&i| y[i] <= half).map(|i| cross(i - 1, i));
    match (left, right) {
        (Some(l), Some(r)) => Ok(PeakFit {
            f0_mm: f0,
            fwhm_mm: r - l,
        }),
        _ => Err(AnalysisError::AmbiguousPeak { f0_mm: f0 }),
    }
}

/// Monotone piecewise-cubic (PCHIP) interpolant through `(λ, f0)` points.
#[derive(Debug, Clone, PartialEq)]
pub struct FocusCurve {
    lambdas: Vec<f64>,
    f0: Vec<f64>,
    slopes: Vec<f64>,
}

fn pchip_end_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let s = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if s.signum() != d0.signum() || d0 == 0.0 {
        0.0
    } else if d0.signum() != d1.signum() && s.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        s
    }
}

impl FocusCurve {
    pub fn new(points: &[(f64, f64)]) -> Result<Self> {
        if points.len() < 2 {
            return Err(AnalysisError::TooFewSamples {
                min: 2,
                got: points.len(),
            });
        }
        let lambdas: Vec<f64> = points.iter().map(|p| p.0).collect();
        let f0: Vec<f64> = points.iter().map(|p| p.1).collect();
        if !lambdas.windows(2).all(|w| w[1] > w[0]) || points.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
            return Err(AnalysisError::Invalid(
                "focus curve wavelengths must be finite and strictly increasing".into(),
            ));
        }
        let n = points.len();
        let h: Vec<f64> = lambdas.windows(2).map(|w| w[1] - w[0]).collect();
        let d: Vec<f64> = (0..n - 1).map(|k| (f0[k + 1] - f0[k]) / h[k]).collect();
        let mut slopes = vec![0.0; n];
        if n == 2 {
            slopes = vec![d[0], d[0]];
        } else {
            for k in 1..n - 1 {
                if d[k - 1] * d[k] > 0.0 {
                    let w1 = 2.0 * h[k] + h[k - 1];
                    let w2 = h[k] + 2.0 * h[k - 1];
                    slopes[k] = (w1 + w2) / (w1 / d[k - 1] + w2 / d[k]);
                }
            }
            slopes[0] = pchip_end_slope(h[0], h[1], d[0], d[1]);
            slopes[n - 1] = pchip_end_slope(h[n - 2], h[n - 3], d[n - 2], d[n - 3]);
        }
        Ok(Self { lambdas, f0, slopes })
    }

    pub fn points(&self) -> Vec<(f64, f64)> {
        self.lambdas.iter().copied().zip(self.f0.iter().copied()).collect()
    }

    fn segment(&self, lambda: f64) -> Result<usize> {
        let (lo, hi) = (self.lambdas[0], *self.lambdas.last().unwrap());
        if !(lambda >= lo && lambda <= hi) {
            return Err(AnalysisError::OutOfCurveRange(lambda));
        }
        Ok(self
            .lambdas
            .windows(2)
            .position(|w| lambda <= w[1])
            .unwrap_or(self.lambdas.len() - 2))
    }

    /// Interpolated best-focus distance.
    pub fn f0_at(&self, lambda: f64) -> Result<f64> {
        let k = self.segment(lambda)?;
        let h = self.lambdas[k + 1] - self.lambdas[k];
        let t = (lambda - self.lambdas[k]) / h;
        let (t2, t3) = (t * t, t * t * t);
        Ok((2.0 * t3 - 3.0 * t2 + 1.0) * self.f0[k]
            + (t3 - 2.0 * t2 + t) * h * self.slopes[k]
            + (-2.0 * t3 + 3.0 * t2) * self.f0[k + 1]
            + (t3 - t2) * h * self.slopes[k + 1])
    }

    /// `df0/dλ` in mm/nm.
    pub fn slope_at(&self, lambda: f64) -> Result<f64> {
        let k = self.segment(lambda)?;
        let h = self.lambdas[k + 1] - self.lambdas[k];
        let t = (lambda - self.lambdas[k]) / h;
        let t2 = t * t;
        Ok((6.0 * t2 - 6.0 * t) / h * self.f0[k]
            + (3.0 * t2 - 4.0 * t + 1.0) * self.slopes[k]
            + (-6.0 * t2 + 6.0 * t) / h * self.f0[k + 1]
            + (3.0 * t2 - 2.0 * t) * self.slopes[k + 1])
    }
}

/// Largest `|dλ/df|` (nm/mm) accepted before the mapping counts as flat.
pub const DEFAULT_SLOPE_CAP: f64 = 1e6;

/// `Δλ = |dλ/df| · FWHM` at `λ`.
pub fn spectral_width(curve: &FocusCurve, lambda: f64, fwhm_mm: f64, slope_cap: f64) -> Result<f64> {
    let dfdl = curve.slope_at(lambda)?.abs();
    if dfdl * slope_cap < 1.0 {
        return Err(AnalysisError::ZeroSlope(lambda));
    }
    Ok(fwhm_mm / dfdl)
}

/// `η = λ / Δλ`.
pub fn resolving_power(lambda: f64, dlambda: f64) -> Result<f64> {
    if dlambda > 0.0 {
        Ok(lambda / dlambda)
    } else {
        Err(AnalysisError::DivisionByZeroWidth)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisOptions {
    pub smoothing_window: usize,
    /// Wavelengths above this get no Δλ/η; `None` reports all.
    pub max_eta_nm: Option<f64>,
    pub slope_cap: f64,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            smoothing_window: 5,
            max_eta_nm: Some(700.0),
            slope_cap: DEFAULT_SLOPE_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralRow {
    pub wavelength_nm: f64,
    pub f0_mm: f64,
    pub fwhm_mm: f64,
    pub dlambda_nm: Option<f64>,
    pub eta: Option<f64>,
}

/// Peak fit per profile, a focus curve over all of them, then Δλ and η.
pub fn analyze_profiles(profiles: &[SpectralProfile], opts: &AnalysisOptions) -> Result<Vec<SpectralRow>> {
    let mut sorted: Vec<&SpectralProfile> = profiles.iter().collect();
    sorted.sort_by(|a, b| a.wavelength_nm.total_cmp(&b.wavelength_nm));
    let fits: Vec<PeakFit> = sorted
        .iter()
        .map(|p| find_peak_and_fwhm(&p.samples, opts.smoothing_window))
        .collect::<Result<_>>()?;
    let points: Vec<(f64, f64)> = sorted
        .iter()
        .zip(&fits)
        .map(|(p, f)| (p.wavelength_nm, f.f0_mm))
        .collect();
    let curve = if points.len() >= 2 {
        Some(FocusCurve::new(&points)?)
    } else {
        None
    };
    sorted
        .iter()
        .zip(&fits)
        .map(|(p, fit)| {
            let l = p.wavelength_nm;
            let reported = opts.max_eta_nm.is_none_or(|m| l <= m);
            let (dl, eta) = match (&curve, reported) {
                (Some(c), true) => {
                    let dl = spectral_width(c, l, fit.fwhm_mm, opts.slope_cap)?;
                    (Some(dl), resolving_power(l, dl).ok())
                }
                _ => (None, None),
            };
            Ok(SpectralRow {
                wavelength_nm: l,
                f0_mm: fit.f0_mm,
                fwhm_mm: fit.fwhm_mm,
                dlambda_nm: dl,
                eta,
            })
        })
        .collect()
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_spectral_csv<W: Write>(rows: &[SpectralRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let fmt = |e: csv::Error| AnalysisError::Invalid(e.to_string());
    out.write_record(["lambda_nm", "f0_mm", "fwhm_mm", "dlambda_nm", "eta"])
        .map_err(fmt)?;
    for r in rows {
        out.write_record([
            r.wavelength_nm.to_string(),
            r.f0_mm.to_string(),
            r.fwhm_mm.to_string(),
            opt_cell(r.dlambda_nm),
            opt_cell(r.eta),
        ])
        .map_err(fmt)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationInput {
    pub lambda_nm: f64,
    pub qe: f64,
    pub p_full_nw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub lambda_nm: f64,
    pub qe: f64,
    pub p_full_nw: f64,
    pub p_dark_nw: f64,
    pub p_adjusted_nw: f64,
    pub p_target_nw: f64,
}

/// Source powers that give every wavelength the same detected signal as the
/// reference wavelength.
pub fn calibration_targets(
    rows: &[CalibrationInput],
    p_dark_nw: f64,
    reference_nm: f64,
) -> Result<Vec<CalibrationRow>> {
    if let Some(bad) = rows.iter().find(|r| !(r.qe > 0.0 && r.qe <= 1.0)) {
        return Err(AnalysisError::NonPositiveQE(bad.lambda_nm));
    }
    if let Some(bad) = rows.iter().find(|r| r.p_full_nw < 0.0 || !r.p_full_nw.is_finite()) {
        return Err(AnalysisError::Invalid(format!(
            "negative full power at {} nm",
            bad.lambda_nm
        )));
    }
    if !(p_dark_nw >= 0.0) {
        return Err(AnalysisError::Invalid("dark power must be non-negative".into()));
    }
    let reference = rows
        .iter()
        .find(|r| (r.lambda_nm - reference_nm).abs() < 1e-9)
        .ok_or(AnalysisError::MissingReference(reference_nm))?;
    let signal = reference.p_full_nw * reference.qe - p_dark_nw;
    if signal <= 0.0 {
        return Err(AnalysisError::Invalid(format!(
            "reference signal at {reference_nm} nm is not above the dark level"
        )));
    }
    Ok(rows
        .iter()
        .map(|r| CalibrationRow {
            lambda_nm: r.lambda_nm,
            qe: r.qe,
            p_full_nw: r.p_full_nw,
            p_dark_nw,
            p_adjusted_nw: r.p_full_nw * r.qe - p_dark_nw,
            p_target_nw: signal / r.qe,
        })
        .collect())
}

/// Reads `lambda_nm,qe,p_full_nw` rows.
pub fn read_calibration_csv<R: Read>(r: R) -> Result<Vec<CalibrationInput>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let mut out = Vec::new();
    for rec in rdr.deserialize::<CalibrationInput>() {
        out.push(rec.map_err(|e| AnalysisError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_calibration_csv<W: Write>(rows: &[CalibrationRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r).map_err(|e| AnalysisError::Invalid(e.to_string()))?;
    }
    out.flush()?;
    Ok(())
}

/// Peak intensity against retina distance, one profile per stack wavelength.
pub fn profiles_from_stack(stack: &IntensityStack) -> Vec<SpectralProfile> {
    stack
        .wavelengths
        .iter()
        .map(|&l| SpectralProfile {
            wavelength_nm: l,
            samples: stack
                .peak_profile(l)
                .expect("own wavelength")
                .into_iter()
                .map(|(d, p)| (d, p as f64))
                .collect(),
            source: ProfileSource::FramePeakIntensity,
        })
        .collect()
}

/// Keeps events from cycles `lead .. n_cycles - trail`. A cycle owns the
/// interval `(cP, (c+1)P]`, so an event on a boundary belongs to the cycle
/// that ends there.
pub fn trim_cycles(events: &[Event], profile: &ActuatorProfile, lead: u32, trail: u32) -> Vec<Event> {
    let period = profile.period_us();
    let keep = lead as u64..profile.n_cycles.saturating_sub(trail) as u64;
    events
        .iter()
        .filter(|e| keep.contains(&(e.t_us.saturating_sub(1) / period)))
        .map(|e| Event {
            t_us: e.t_us - lead as u64 * period,
            ..*e
        })
        .collect()
}

/// Inclusive pixel window. Restricting a stream to the pixels of a focused
/// PSF gives its event rate rather than that of the whole defocused blur.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PixelWindow {
    pub x: [u16; 2],
    pub y: [u16; 2],
}

impl PixelWindow {
    /// Square window of half-width `half` around `(row, col)`, clipped at 0.
    pub fn around(row: usize, col: usize, half: u16) -> Self {
        let (r, c) = (row as u16, col as u16);
        Self {
            x: [c.saturating_sub(half), c.saturating_add(half)],
            y: [r.saturating_sub(half), r.saturating_add(half)],
        }
    }

    pub fn contains(&self, e: &Event) -> bool {
        (self.x[0]..=self.x[1]).contains(&e.x) && (self.y[0]..=self.y[1]).contains(&e.y)
    }
}

pub fn events_in_window(events: &[Event], window: &PixelWindow) -> Vec<Event> {
    events.iter().copied().filter(|e| window.contains(e)).collect()
}

/// How event focal distances are grouped into a rate profile.
#[derive(Debug, Clone, PartialEq)]
pub enum FocalGrouping {
    /// Equal bins of this width in µm; samples at the bin centres.
    Bins { bin_um: u32 },
    /// Nearest of these actuator positions (mm), e.g. the stack distances of
    /// a simulated sweep.
    Positions(Vec<f64>),
}

/// Event count against focal distance (mm).
pub fn event_rate_samples(events: &[Event], grouping: &FocalGrouping) -> Vec<(f64, f64)> {
    match grouping {
        FocalGrouping::Bins { bin_um } => {
            let h =
                crate::events::event_rate_profile(events, crate::events::RateBinning::Focal { bin_um: *bin_um }, false);
            h.centers().into_iter().map(|c| c / 1000.0).zip(h.counts).collect()
        }
        FocalGrouping::Positions(positions) => {
            let mut counts = vec![0.0; positions.len()];
            for e in events {
                let f = e.f_um as f64 / 1000.0;
                let nearest = positions
                    .iter()
                    .enumerate()
                    .min_by(|a, b| (a.1 - f).abs().total_cmp(&(b.1 - f).abs()));
                if let Some((i, _)) = nearest {
                    counts[i] += 1.0;
                }
            }
            positions.iter().copied().zip(counts).collect()
        }
    }
}

/// Event-rate profile for one wavelength's recording. Samples are reported
/// as retina distances (`f + offset`) so they line up with frame profiles.
pub fn profile_from_events(
    events: &[Event],
    wavelength_nm: f64,
    grouping: &FocalGrouping,
    mapping: &ActuatorMapping,
) -> SpectralProfile {
    SpectralProfile {
        wavelength_nm,
        samples: event_rate_samples(events, grouping)
            .into_iter()
            .map(|(f, c)| (mapping.distance(f), c))
            .collect(),
        source: ProfileSource::EventRate,
    }
}
