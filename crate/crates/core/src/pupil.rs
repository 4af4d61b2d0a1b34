//! Binary pupil masks evaluated where a ray meets the lens sphere.
//!
//! Mask geometry lives in the pupil frame: polar angle is measured from the
//! axis pointing from the sphere centre towards the source, azimuth around it.

use serde::{Deserialize, Serialize};

use crate::geom::{angle_between, spherical_unit, Frame, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum PupilMask {
    FullAperture,
    CircularHole {
        half_angle_deg: f64,
        /// Hole centre in the pupil frame; `[0, 0, 1]` is on-axis.
        #[serde(default = "on_axis")]
        center_axis: [f64; 3],
    },
    Annulus {
        inner_half_angle_deg: f64,
        outer_half_angle_deg: f64,
    },
    /// Band between two parallel planes, `width` wide, centred `offset` away
    /// from the axis along the direction at `orientation` azimuth.
    OffAxisSlit {
        width_angle_deg: f64,
        offset_angle_deg: f64,
        orientation_deg: f64,
    },
    /// Points within `band_width/2` of a polyline drawn on the sphere.
    /// Vertices are `(azimuth, polar)` pairs in degrees.
    PolylineBand {
        vertices: Vec<(f64, f64)>,
        band_width_deg: f64,
    },
}

fn on_axis() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}

impl PupilMask {
    pub fn circular(half_angle_deg: f64) -> Self {
        Self::CircularHole {
            half_angle_deg,
            center_axis: on_axis(),
        }
    }

    /// Approximate W-shaped band loosely modelled on a cuttlefish pupil.
    /// The geometry is illustrative, not measured.
    pub fn w_shape() -> Self {
        // (x, y) angular offsets in degrees, converted to (azimuth, polar).
        let planar = [(-24.0, 12.0), (-12.0, -10.0), (0.0, 6.0), (12.0, -10.0), (24.0, 12.0)];
        let vertices = planar
            .iter()
            .map(|&(x, y): &(f64, f64)| (y.atan2(x).to_degrees(), x.hypot(y)))
            .collect();
        Self::PolylineBand {
            vertices,
            band_width_deg: 6.0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let angle_ok = |a: f64| a.is_finite() && (0.0..=180.0).contains(&a);
        match self {
            Self::FullAperture => Ok(()),
            Self::CircularHole {
                half_angle_deg,
                center_axis,
            } => {
                if !angle_ok(*half_angle_deg) {
                    return Err(format!("half_angle_deg {half_angle_deg} out of [0, 180]"));
                }
                if Vec3::from(*center_axis).norm() < 1e-12 {
                    return Err("center_axis must be non-zero".into());
                }
                Ok(())
            }
            Self::Annulus {
                inner_half_angle_deg,
                outer_half_angle_deg,
            } => {
                if !angle_ok(*inner_half_angle_deg)
                    || !angle_ok(*outer_half_angle_deg)
                    || inner_half_angle_deg > outer_half_angle_deg
                {
                    return Err("annulus needs 0 ≤ inner ≤ outer ≤ 180 degrees".into());
                }
                Ok(())
            }
            Self::OffAxisSlit {
                width_angle_deg,
                offset_angle_deg,
                orientation_deg,
            } => {
                if !(width_angle_deg.is_finite() && *width_angle_deg > 0.0)
                    || !offset_angle_deg.is_finite()
                    || !orientation_deg.is_finite()
                {
                    return Err("slit needs a positive width and finite angles".into());
                }
                Ok(())
            }
            Self::PolylineBand {
                vertices,
                band_width_deg,
            } => {
                if vertices.is_empty() {
                    return Err("polyline band needs at least one vertex".into());
                }
                if !(band_width_deg.is_finite() && *band_width_deg > 0.0) {
                    return Err("band width must be positive".into());
                }
                Ok(())
            }
        }
    }

    /// Whether a ray entering the sphere at `entry_point` (unit vector from the
    /// centre) passes. `source_axis` points from the centre towards the source.
    pub fn transmits(&self, entry_point: &Vec3, source_axis: &Vec3) -> bool {
        let frame = Frame::from_axis(source_axis);
        self.transmits_local(&frame.to_local(entry_point))
    }

    /// Transmission at a unit point already in the pupil frame (+z is the
    /// pupil axis).
    pub fn transmits_local(&self, p: &Vec3) -> bool {
        if p.z < 0.0 {
            return false;
        }
        match self {
            Self::FullAperture => true,
            Self::CircularHole {
                half_angle_deg,
                center_axis,
            } => {
                let c = Vec3::from(*center_axis).normalize();
                angle_between(p, &c) <= half_angle_deg.to_radians()
            }
            Self::Annulus {
                inner_half_angle_deg,
                outer_half_angle_deg,
            } => {
                let polar = angle_between(p, &Vec3::z());
                polar >= inner_half_angle_deg.to_radians() && polar <= outer_half_angle_deg.to_radians()
            }
            Self::OffAxisSlit {
                width_angle_deg,
                offset_angle_deg,
                orientation_deg,
            } => {
                let (s, c) = orientation_deg.to_radians().sin_cos();
                let across = (p.x * c + p.y * s).clamp(-1.0, 1.0).asin();
                (across - offset_angle_deg.to_radians()).abs() <= 0.5 * width_angle_deg.to_radians()
            }
            Self::PolylineBand {
                vertices,
                band_width_deg,
            } => {
                let pts: Vec<Vec3> = vertices
                    .iter()
                    .map(|&(az, polar)| spherical_unit(polar.to_radians(), az.to_radians()))
                    .collect();
                distance_to_polyline(p, &pts) <= 0.5 * band_width_deg.to_radians()
            }
        }
    }
}

/// Great-circle distance from `p` to the polyline through `pts`.
fn distance_to_polyline(p: &Vec3, pts: &[Vec3]) -> f64 {
    let mut best = pts.iter().map(|v| angle_between(p, v)).fold(f64::INFINITY, f64::min);
    for seg in pts.windows(2) {
        let (a, b) = (&seg[0], &seg[1]);
        let n = a.cross(b);
        let nn = n.norm();
        if nn < 1e-15 {
            continue;
        }
        let n = n / nn;
        let q = p - n * p.dot(&n);
        if q.norm() < 1e-15 {
            continue;
        }
        let q = q.normalize();
        // q lies on the minor arc a→b when it is "after" a and "before" b.
        if a.cross(&q).dot(&n) >= 0.0 && q.cross(b).dot(&n) >= 0.0 {
            best = best.min(p.dot(&n).abs().clamp(0.0, 1.0).asin());
        }
    }
    best
}

/// Transmitted fraction of the front hemisphere's solid angle.
///
/// Uses a deterministic equal-area Fibonacci lattice, so repeated calls give
/// identical results.
pub fn open_fraction(mask: &PupilMask, n_samples: usize) -> f64 {
    let n = n_samples.max(1);
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let open = (0..n)
        .filter(|&k| {
            let cos_polar = 1.0 - (k as f64 + 0.5) / n as f64;
            let sin_polar = (1.0 - cos_polar * cos_polar).sqrt();
            let (s, c) = (k as f64 * golden).sin_cos();
            mask.transmits_local(&Vec3::new(sin_polar * c, sin_polar * s, cos_polar))
        })
        .count();
    open as f64 / n as f64
}
