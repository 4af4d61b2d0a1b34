//! Wavelength-dependent refractive index models and paraxial ball-lens optics.
//!
//! All wavelengths are in nanometres and all lengths in millimetres. Cauchy and
//! Sellmeier coefficients follow the usual micrometre convention (`B` in µm²,
//! `C` in µm²).

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DispersionError {
    #[error("wavelength {wavelength_nm} nm outside valid range [{min_nm}, {max_nm}] nm")]
    OutOfRange {
        wavelength_nm: f64,
        min_nm: f64,
        max_nm: f64,
    },
    #[error("degenerate lens: refractive index {index} must exceed 1")]
    DegenerateLens { index: f64 },
    #[error("object at the focal plane (d_o = {object_distance_mm} mm, EFL = {efl_mm} mm)")]
    AtFocalPlane { object_distance_mm: f64, efl_mm: f64 },
    #[error("invalid dispersion model: {0}")]
    InvalidModel(String),
    #[error("invalid lens: {0}")]
    InvalidLens(String),
}

pub type Result<T> = std::result::Result<T, DispersionError>;

/// Closed form (or table) behind a [`DispersionModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DispersionKind {
    Constant {
        n: f64,
    },
    /// `n = A + B / λ²` with λ in µm.
    Cauchy {
        a: f64,
        b: f64,
    },
    /// Three-term Sellmeier: `n² = 1 + Σ Bᵢ λ² / (λ² − Cᵢ)` with λ in µm.
    Sellmeier {
        b: [f64; 3],
        c: [f64; 3],
    },
    /// Piecewise-linear interpolation through `(λ_nm, n)` pairs.
    Tabulated {
        points: Vec<(f64, f64)>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DispersionModel {
    pub kind: DispersionKind,
    /// Inclusive `(λ_min, λ_max)` in nm.
    pub valid_range: (f64, f64),
}

// Schott N-BK7 datasheet coefficients. K9 is the equivalent Chinese glass.
const NBK7_B: [f64; 3] = [1.039_612_12, 0.231_792_344, 1.010_469_45];
const NBK7_C: [f64; 3] = [0.006_000_698_67, 0.020_017_914_4, 103.560_653];

const SYNTHETIC_GRID_NM: [f64; 9] = [400.0, 450.0, 500.0, 550.0, 600.0, 650.0, 700.0, 750.0, 800.0];

impl DispersionModel {
    pub fn new(kind: DispersionKind, valid_range: (f64, f64)) -> Result<Self> {
        let (lo, hi) = valid_range;
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo < hi) {
            return Err(DispersionError::InvalidModel(format!(
                "valid range ({lo}, {hi}) must satisfy 0 < min < max"
            )));
        }
        match &kind {
            DispersionKind::Constant { n } => {
                if !n.is_finite() || *n <= 0.0 {
                    return Err(DispersionError::InvalidModel(format!(
                        "constant index {n} must be positive"
                    )));
                }
            }
            DispersionKind::Cauchy { a, b } => {
                if !a.is_finite() || !b.is_finite() {
                    return Err(DispersionError::InvalidModel(
                        "Cauchy coefficients must be finite".into(),
                    ));
                }
            }
            DispersionKind::Sellmeier { b, c } => {
                if b.iter().chain(c.iter()).any(|v| !v.is_finite()) || c.iter().any(|&v| v < 0.0) {
                    return Err(DispersionError::InvalidModel(
                        "Sellmeier coefficients must be finite with C ≥ 0".into(),
                    ));
                }
                // A pole inside the valid range would make n(λ) meaningless there.
                let (lo2, hi2) = ((lo / 1000.0).powi(2), (hi / 1000.0).powi(2));
                if c.iter().any(|&ci| ci >= lo2 && ci <= hi2) {
                    return Err(DispersionError::InvalidModel(
                        "Sellmeier resonance inside the valid range".into(),
                    ));
                }
            }
            DispersionKind::Tabulated { points } => {
                if points.len() < 2 {
                    return Err(DispersionError::InvalidModel("table needs at least two points".into()));
                }
                if points.windows(2).any(|w| w[1].0 <= w[0].0) {
                    return Err(DispersionError::InvalidModel(
                        "table wavelengths must be strictly increasing".into(),
                    ));
                }
                if points
                    .iter()
                    .any(|p| !p.0.is_finite() || !p.1.is_finite() || p.1 <= 0.0)
                {
                    return Err(DispersionError::InvalidModel(
                        "table entries must be finite with positive index".into(),
                    ));
                }
                let first = points[0].0;
                let last = points[points.len() - 1].0;
                if lo < first || hi > last {
                    return Err(DispersionError::InvalidModel(format!(
                        "valid range ({lo}, {hi}) exceeds table span ({first}, {last})"
                    )));
                }
            }
        }
        Ok(Self { kind, valid_range })
    }

    pub fn constant(n: f64) -> Self {
        Self {
            kind: DispersionKind::Constant { n },
            valid_range: (200.0, 2500.0),
        }
    }

    /// Schott N-BK7, valid 300–2500 nm.
    pub fn nbk7() -> Self {
        Self {
            kind: DispersionKind::Sellmeier { b: NBK7_B, c: NBK7_C },
            valid_range: (300.0, 2500.0),
        }
    }

    /// Synthetic GRIN core index, about 1.52 at 400 nm to 1.50 at 800 nm.
    ///
    /// Not measured data: sampled from a Cauchy curve through those endpoints.
    pub fn synthetic_core() -> Self {
        Self::synthetic_table(1.52, 1.50)
    }

    /// Synthetic GRIN outer-shell index, about 1.38 to 1.36 over 400–800 nm.
    pub fn synthetic_outer() -> Self {
        Self::synthetic_table(1.38, 1.36)
    }

    /// Synthetic aquatic medium index, about 1.343 to 1.331 over 400–800 nm.
    pub fn synthetic_medium() -> Self {
        Self::synthetic_table(1.343, 1.331)
    }

    fn synthetic_table(n_400: f64, n_800: f64) -> Self {
        // Cauchy A + B/λ² pinned at both ends so the table has normal dispersion
        // with steeper slope in the blue.
        let inv_sq = |nm: f64| 1.0 / (nm / 1000.0).powi(2);
        let b = (n_400 - n_800) / (inv_sq(400.0) - inv_sq(800.0));
        let a = n_800 - b * inv_sq(800.0);
        let points = SYNTHETIC_GRID_NM
            .iter()
            .map(|&nm| (nm, ((a + b * inv_sq(nm)) * 1e6).round() / 1e6))
            .collect();
        Self {
            kind: DispersionKind::Tabulated { points },
            valid_range: (400.0, 800.0),
        }
    }

    /// Look up a shipped preset by name.
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "n-bk7" | "k9" => Some(Self::nbk7()),
            "synthetic-core" => Some(Self::synthetic_core()),
            "synthetic-outer" => Some(Self::synthetic_outer()),
            "synthetic-medium" => Some(Self::synthetic_medium()),
            "air" | "vacuum" => Some(Self::constant(1.0)),
            "water" => Some(Self::constant(1.333)),
            _ => None,
        }
    }

    pub fn preset_names() -> &'static [&'static str] {
        &[
            "n-bk7",
            "k9",
            "synthetic-core",
            "synthetic-outer",
            "synthetic-medium",
            "air",
            "vacuum",
            "water",
        ]
    }

    pub fn contains(&self, wavelength_nm: f64) -> bool {
        wavelength_nm >= self.valid_range.0 && wavelength_nm <= self.valid_range.1
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.kind, DispersionKind::Constant { .. })
    }

    /// Refractive index at `wavelength_nm`. Never extrapolates.
    pub fn refractive_index(&self, wavelength_nm: f64) -> Result<f64> {
        if !self.contains(wavelength_nm) {
            return Err(DispersionError::OutOfRange {
                wavelength_nm,
                min_nm: self.valid_range.0,
                max_nm: self.valid_range.1,
            });
        }
        let um = wavelength_nm / 1000.0;
        let n = match &self.kind {
            DispersionKind::Constant { n } => *n,
            DispersionKind::Cauchy { a, b } => a + b / (um * um),
            DispersionKind::Sellmeier { b, c } => {
                let x = um * um;
                let sum: f64 = b.iter().zip(c).map(|(bi, ci)| bi * x / (x - ci)).sum();
                (1.0 + sum).sqrt()
            }
            DispersionKind::Tabulated { points } => interpolate_table(points, wavelength_nm),
        };
        Ok(n)
    }

    /// Checks `n > 1` (lens) or `n ≥ 1` (medium) at every table node and on a
    /// dense grid across the valid range.
    pub fn validate_index_floor(&self, strict: bool) -> Result<()> {
        let (lo, hi) = self.valid_range;
        let mut probes: Vec<f64> = (0..=64).map(|i| lo + (hi - lo) * i as f64 / 64.0).collect();
        if let DispersionKind::Tabulated { points } = &self.kind {
            probes.extend(points.iter().map(|p| p.0).filter(|&l| self.contains(l)));
        }
        for l in probes {
            let n = self.refractive_index(l)?;
            let ok = if strict { n > 1.0 } else { n >= 1.0 };
            if !ok {
                return Err(DispersionError::InvalidModel(format!(
                    "index {n} at {l} nm violates the {} 1.0 floor",
                    if strict { ">" } else { "≥" }
                )));
            }
        }
        Ok(())
    }
}

fn interpolate_table(points: &[(f64, f64)], x: f64) -> f64 {
    let idx = points.partition_point(|p| p.0 <= x);
    if idx == 0 {
        return points[0].1;
    }
    if idx >= points.len() {
        return points[points.len() - 1].1;
    }
    let (x0, y0) = points[idx - 1];
    let (x1, y1) = points[idx];
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallLensSpec {
    pub diameter_mm: f64,
    pub material: DispersionModel,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocalLengths {
    /// Effective focal length, measured from the lens centre.
    pub efl_mm: f64,
    /// Back focal length, measured from the rear surface. Negative when the
    /// focus falls inside the ball.
    pub bfl_mm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageConjugate {
    pub image_distance_mm: f64,
    pub magnification: f64,
}

impl BallLensSpec {
    pub fn new(diameter_mm: f64, material: DispersionModel) -> Result<Self> {
        if !(diameter_mm.is_finite() && diameter_mm > 0.0) {
            return Err(DispersionError::InvalidLens(format!(
                "diameter {diameter_mm} mm must be positive"
            )));
        }
        Ok(Self { diameter_mm, material })
    }

    /// The 100 mm K9 (N-BK7) ball of the bench setup.
    pub fn k9_100mm() -> Self {
        Self {
            diameter_mm: 100.0,
            material: DispersionModel::nbk7(),
        }
    }

    pub fn efl_bfl(&self, wavelength_nm: f64) -> Result<FocalLengths> {
        let n = self.material.refractive_index(wavelength_nm)?;
        focal_lengths(n, self.diameter_mm)
    }

    pub fn image_distance_and_magnification(
        &self,
        wavelength_nm: f64,
        object_distance_mm: f64,
    ) -> Result<ImageConjugate> {
        let efl = self.efl_bfl(wavelength_nm)?.efl_mm;
        image_conjugate(efl, object_distance_mm)
    }

    /// `BFL(λ2) − BFL(λ1)`.
    pub fn longitudinal_chromatic_shift(&self, lambda1_nm: f64, lambda2_nm: f64) -> Result<f64> {
        let b1 = self.efl_bfl(lambda1_nm)?.bfl_mm;
        let b2 = self.efl_bfl(lambda2_nm)?.bfl_mm;
        Ok(b2 - b1)
    }
}

/// Paraxial ball-lens focal lengths for index `n` and diameter `d`.
pub fn focal_lengths(n: f64, diameter_mm: f64) -> Result<FocalLengths> {
    if !(n > 1.0) {
        return Err(DispersionError::DegenerateLens { index: n });
    }
    let efl_mm = n * diameter_mm / (4.0 * (n - 1.0));
    Ok(FocalLengths {
        efl_mm,
        bfl_mm: efl_mm - diameter_mm / 2.0,
    })
}

/// Thin-lens conjugate `1/EFL = 1/d_o + 1/d_i`, `M = −d_i/d_o`.
pub fn image_conjugate(efl_mm: f64, object_distance_mm: f64) -> Result<ImageConjugate> {
    if !(object_distance_mm > 0.0) {
        return Err(DispersionError::InvalidLens(format!(
            "object distance {object_distance_mm} mm must be positive"
        )));
    }
    if (object_distance_mm - efl_mm).abs() < 1e-9 * efl_mm.abs() {
        return Err(DispersionError::AtFocalPlane {
            object_distance_mm,
            efl_mm,
        });
    }
    // Written as a product to stay accurate when d_o is huge.
    let image_distance_mm = efl_mm * object_distance_mm / (object_distance_mm - efl_mm);
    Ok(ImageConjugate {
        image_distance_mm,
        magnification: -image_distance_mm / object_distance_mm,
    })
}
