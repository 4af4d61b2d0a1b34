//! Graded-index ball-lens ray caster.
//!
//! The sphere is centred at the origin. Sources sit in front of it and the
//! retina side is wherever the rays leave. Inside the sphere the index follows
//!
//! ```text
//! n(r, λ) = n_core(λ) / (1 + (n_core(λ)/n_outer(λ) − 1) · r²/R²)
//! ```
//!
//! and rays are marched with an explicit Euler scheme
//! `X ← X + e·ds`, `e ← normalize(e + ∇n/n · ds)`, both right-hand sides
//! evaluated at the old position.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dispersion::{DispersionError, DispersionModel};
use crate::geom::{Frame, Vec3};
use crate::pupil::PupilMask;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TraceError {
    #[error(transparent)]
    Dispersion(#[from] DispersionError),
    #[error("point at r = {r_mm} mm lies outside the sphere of radius {radius_mm} mm")]
    OutOfSphere { r_mm: f64, radius_mm: f64 },
    #[error("trace configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, TraceError>;

#[derive(Debug, Error, Clone, Copy, PartialEq)]
#[error("total internal reflection")]
pub struct TotalInternalReflection;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrinSphere {
    pub radius_mm: f64,
    pub core: DispersionModel,
    pub outer: DispersionModel,
    /// Surrounding medium, used on both sides of the sphere.
    pub medium: DispersionModel,
}

impl GrinSphere {
    pub fn new(radius_mm: f64, core: DispersionModel, outer: DispersionModel, medium: DispersionModel) -> Result<Self> {
        if !(radius_mm.is_finite() && radius_mm > 0.0) {
            return Err(TraceError::Config(format!("radius {radius_mm} mm must be positive")));
        }
        core.validate_index_floor(true)?;
        outer.validate_index_floor(true)?;
        medium.validate_index_floor(false)?;
        Ok(Self {
            radius_mm,
            core,
            outer,
            medium,
        })
    }

    /// A uniform-index ball (GRIN off).
    pub fn homogeneous(radius_mm: f64, material: DispersionModel, medium: DispersionModel) -> Result<Self> {
        Self::new(radius_mm, material.clone(), material, medium)
    }

    /// The synthetic GRIN preset in the synthetic aquatic medium.
    pub fn synthetic(radius_mm: f64) -> Self {
        Self {
            radius_mm,
            core: DispersionModel::synthetic_core(),
            outer: DispersionModel::synthetic_outer(),
            medium: DispersionModel::synthetic_medium(),
        }
    }

    /// Freeze all indices at one wavelength.
    pub fn at_wavelength(&self, wavelength_nm: f64) -> Result<GrinProfile> {
        Ok(GrinProfile {
            radius_mm: self.radius_mm,
            n_core: self.core.refractive_index(wavelength_nm)?,
            n_outer: self.outer.refractive_index(wavelength_nm)?,
            n_medium: self.medium.refractive_index(wavelength_nm)?,
        })
    }

    /// `n(r, λ)`; errors when `r` is outside `[0, R]`.
    pub fn grin_index(&self, r_mm: f64, wavelength_nm: f64) -> Result<f64> {
        self.at_wavelength(wavelength_nm)?.index_at_radius(r_mm)
    }

    /// Analytic `∇n` at `x`; requires `|x| < R`.
    pub fn grin_gradient(&self, x: &Vec3, wavelength_nm: f64) -> Result<Vec3> {
        let p = self.at_wavelength(wavelength_nm)?;
        let r = x.norm();
        if r >= self.radius_mm {
            return Err(TraceError::OutOfSphere {
                r_mm: r,
                radius_mm: self.radius_mm,
            });
        }
        Ok(p.gradient(x))
    }
}

/// A [`GrinSphere`] evaluated at a single wavelength.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrinProfile {
    pub radius_mm: f64,
    pub n_core: f64,
    pub n_outer: f64,
    pub n_medium: f64,
}

impl GrinProfile {
    pub fn is_homogeneous(&self) -> bool {
        self.n_core == self.n_outer
    }

    fn shape(&self) -> f64 {
        self.n_core / self.n_outer - 1.0
    }

    pub fn index_at_radius(&self, r_mm: f64) -> Result<f64> {
        if !(0.0..=self.radius_mm).contains(&r_mm) {
            return Err(TraceError::OutOfSphere {
                r_mm,
                radius_mm: self.radius_mm,
            });
        }
        Ok(self.index_at_r2(r_mm * r_mm))
    }

    fn index_at_r2(&self, r2: f64) -> f64 {
        self.n_core / (1.0 + self.shape() * r2 / (self.radius_mm * self.radius_mm))
    }

    pub fn gradient(&self, x: &Vec3) -> Vec3 {
        let r2r = self.radius_mm * self.radius_mm;
        let k = self.shape();
        let q = 1.0 + k * x.norm_squared() / r2r;
        x * (-2.0 * self.n_core * k / (r2r * q * q))
    }

    /// `∇n / n` at `x`, sharing the denominator of both factors.
    #[inline]
    fn log_gradient(&self, x: &Vec3) -> Vec3 {
        let r2r = self.radius_mm * self.radius_mm;
        let k = self.shape();
        let q = 1.0 + k * x.norm_squared() / r2r;
        x * (-2.0 * k / (r2r * q))
    }

    /// One Euler step.
    #[inline]
    pub fn step(&self, ray: &Ray, ds: f64) -> Ray {
        let g = self.log_gradient(&ray.position);
        Ray {
            position: ray.position + ray.direction * ds,
            direction: (ray.direction + g * ds).normalize(),
            status: ray.status,
        }
    }
}

/// Vector Snell refraction.
///
/// `normal` may face either way; it is flipped to oppose `e0`. Returns the
/// refracted unit direction.
pub fn refract(e0: &Vec3, normal: &Vec3, n_from: f64, n_to: f64) -> std::result::Result<Vec3, TotalInternalReflection> {
    let mut n = *normal;
    let mut cos_i = -e0.dot(&n);
    if cos_i < 0.0 {
        n = -n;
        cos_i = -cos_i;
    }
    let eta = n_from / n_to;
    let sin2_i = (1.0 - cos_i * cos_i).max(0.0);
    let sin2_r = eta * eta * sin2_i;
    if sin2_r > 1.0 {
        return Err(TotalInternalReflection);
    }
    let cos_r = (1.0 - sin2_r).sqrt();
    Ok((e0 * eta + n * (eta * cos_i - cos_r)).normalize())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RayStatus {
    Propagating,
    Blocked,
    TotallyReflected,
    /// Missed the sphere, or never found the exit within the step budget.
    Escaped,
    Landed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub position: Vec3,
    pub direction: Vec3,
    pub status: RayStatus,
}

impl Ray {
    pub fn new(position: Vec3, direction: Vec3) -> Self {
        Self {
            position,
            direction: direction.normalize(),
            status: RayStatus::Propagating,
        }
    }
}

/// Single Euler step of `ray` inside `sphere` at `wavelength_nm`.
pub fn step_inside(sphere: &GrinSphere, ray: &Ray, wavelength_nm: f64, ds: f64) -> Result<Ray> {
    Ok(sphere.at_wavelength(wavelength_nm)?.step(ray, ds))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case", deny_unknown_fields)]
pub enum Emission {
    /// Golden-angle spiral, uniform in solid angle over the cone. `None`
    /// picks the half-angle that exactly subtends the sphere.
    FibonacciCone {
        #[serde(default)]
        half_angle_deg: Option<f64>,
    },
    /// Square grid of angular offsets, clipped to the cone. Ignores `n_rays`.
    UniformGrid {
        #[serde(default)]
        half_angle_deg: Option<f64>,
        n_per_axis: usize,
    },
}

impl Default for Emission {
    fn default() -> Self {
        Self::FibonacciCone { half_angle_deg: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceConfig {
    pub n_rays: usize,
    /// Euler step; defaults to `R/1000`.
    #[serde(default)]
    pub ds_mm: Option<f64>,
    pub source_position: [f64; 3],
    /// Point the emission cone is centred on.
    #[serde(default)]
    pub aim_point: [f64; 3],
    #[serde(default)]
    pub emission: Emission,
    /// Pupil frame axis; defaults to the direction from the centre to the source.
    #[serde(default)]
    pub pupil_axis: Option<[f64; 3]>,
    #[serde(default)]
    pub seed: u64,
}

impl TraceConfig {
    /// On-axis source at `distance_mm` in front of the sphere (towards −z).
    pub fn on_axis(n_rays: usize, distance_mm: f64) -> Self {
        Self {
            n_rays,
            ds_mm: None,
            source_position: [0.0, 0.0, -distance_mm],
            aim_point: [0.0; 3],
            emission: Emission::default(),
            pupil_axis: None,
            seed: 0,
        }
    }

    /// Source at `distance_mm` from the centre, `field_deg` off the −z axis,
    /// rotated by `azimuth_deg` around it.
    pub fn off_axis(n_rays: usize, distance_mm: f64, field_deg: f64, azimuth_deg: f64) -> Self {
        let dir = crate::geom::spherical_unit(field_deg.to_radians(), azimuth_deg.to_radians());
        let pos = Vec3::new(dir.x, dir.y, -dir.z) * distance_mm;
        Self {
            source_position: [pos.x, pos.y, pos.z],
            ..Self::on_axis(n_rays, distance_mm)
        }
    }

    pub fn step_for(&self, radius_mm: f64) -> f64 {
        self.ds_mm.unwrap_or(radius_mm / 1000.0)
    }

    pub fn validate(&self, radius_mm: f64) -> Result<()> {
        let ds = self.step_for(radius_mm);
        if !(ds.is_finite() && ds > 0.0) {
            return Err(TraceError::Config(format!("ds {ds} mm must be positive")));
        }
        if ds > radius_mm / 100.0 {
            return Err(TraceError::Config(format!(
                "ds {ds} mm exceeds R/100 = {} mm",
                radius_mm / 100.0
            )));
        }
        let source = Vec3::from(self.source_position);
        if source.norm() <= radius_mm {
            return Err(TraceError::Config("source must lie outside the sphere".into()));
        }
        let axis = Vec3::from(self.aim_point) - source;
        if axis.norm() == 0.0 {
            return Err(TraceError::Config("aim point coincides with the source".into()));
        }
        let half = self.half_angle(radius_mm);
        if !(half.is_finite() && half > 0.0 && half < std::f64::consts::FRAC_PI_2) {
            return Err(TraceError::Config(format!(
                "emission half-angle {} deg must lie in (0, 90)",
                half.to_degrees()
            )));
        }
        let subtended = (radius_mm / source.norm()).asin();
        let off_centre = crate::geom::angle_between(&axis.normalize(), &(-source).normalize());
        if off_centre - half >= subtended {
            return Err(TraceError::Config("emission cone misses the sphere".into()));
        }
        match &self.emission {
            Emission::FibonacciCone { .. } if self.n_rays == 0 => {
                Err(TraceError::Config("n_rays must be at least 1".into()))
            }
            Emission::UniformGrid { n_per_axis, .. } if *n_per_axis == 0 => {
                Err(TraceError::Config("n_per_axis must be at least 1".into()))
            }
            _ => Ok(()),
        }
    }

    fn half_angle(&self, radius_mm: f64) -> f64 {
        let configured = match &self.emission {
            Emission::FibonacciCone { half_angle_deg } | Emission::UniformGrid { half_angle_deg, .. } => {
                *half_angle_deg
            }
        };
        match configured {
            Some(deg) => deg.to_radians(),
            None => (radius_mm / Vec3::from(self.source_position).norm()).asin(),
        }
    }

    /// Emission directions in a deterministic order.
    fn directions(&self, radius_mm: f64) -> Vec<Vec3> {
        let source = Vec3::from(self.source_position);
        let frame = Frame::from_axis(&(Vec3::from(self.aim_point) - source));
        let half = self.half_angle(radius_mm);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let shift_u: f64 = rng.gen();
        let shift_phi: f64 = rng.gen();
        let sin_half_2 = (0.5 * half).sin();
        let local = |polar: f64, az: f64| {
            let (sp, cp) = polar.sin_cos();
            let (sa, ca) = az.sin_cos();
            frame.to_world(&Vec3::new(sp * ca, sp * sa, cp))
        };
        match &self.emission {
            Emission::FibonacciCone { .. } => {
                let n = self.n_rays;
                let golden = 0.5 * (3.0 - 5f64.sqrt());
                (0..n)
                    .map(|k| {
                        // 1 − cos θ uniform, written via sin(θ/2) to keep tiny cones exact.
                        let u = ((k as f64 + 0.5) / n as f64 + shift_u).fract();
                        let polar = 2.0 * (u.sqrt() * sin_half_2).asin();
                        let az = std::f64::consts::TAU * (k as f64 * golden + shift_phi).fract();
                        local(polar, az)
                    })
                    .collect()
            }
            Emission::UniformGrid { n_per_axis, .. } => {
                let m = *n_per_axis;
                let mut out = Vec::with_capacity(m * m);
                for i in 0..m {
                    for j in 0..m {
                        let cell = |idx: usize| {
                            if m == 1 {
                                0.0
                            } else {
                                half * (2.0 * idx as f64 / (m - 1) as f64 - 1.0)
                            }
                        };
                        let (ax, ay) = (cell(j), cell(i));
                        let polar = ax.hypot(ay);
                        if polar <= half {
                            out.push(local(polar, ay.atan2(ax)));
                        }
                    }
                }
                out
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExitRay {
    pub position: Vec3,
    pub direction: Vec3,
    /// Where the ray entered the sphere.
    pub entry: Vec3,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RayCounts {
    pub emitted: u64,
    pub blocked: u64,
    pub totally_reflected: u64,
    pub escaped: u64,
    pub exited: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceResult {
    pub exit_rays: Vec<ExitRay>,
    pub counts: RayCounts,
}

enum Outcome {
    Exited(ExitRay),
    Blocked,
    TotallyReflected,
    Escaped,
}

/// Positive root of `|x + e s| = R` for a point inside (or on) the sphere.
#[inline]
fn chord_to_surface(x: &Vec3, e: &Vec3, radius: f64) -> f64 {
    let b = x.dot(e);
    let c = x.norm_squared() - radius * radius;
    (-b + (b * b - c).max(0.0).sqrt()).max(0.0)
}

fn onto_sphere(p: Vec3, radius: f64) -> Vec3 {
    p * (radius / p.norm())
}

/// Marches a ray that has just refracted into the sphere at `entry` until it
/// reaches the surface again. Returns the exit point and inside direction.
fn march(profile: &GrinProfile, entry: Vec3, direction: Vec3, ds: f64, max_steps: usize) -> Option<(Vec3, Vec3)> {
    let radius = profile.radius_mm;
    if profile.is_homogeneous() {
        let s = chord_to_surface(&entry, &direction, radius);
        return Some((onto_sphere(entry + direction * s, radius), direction));
    }
    let r2 = radius * radius;
    let mut ray = Ray::new(entry, direction);
    for _ in 0..max_steps {
        let next = ray.position + ray.direction * ds;
        if next.norm_squared() >= r2 {
            // Shortened last step: it ends on the surface and still bends.
            let s = chord_to_surface(&ray.position, &ray.direction, radius);
            let last = profile.step(&ray, s);
            return Some((onto_sphere(last.position, radius), last.direction));
        }
        ray = profile.step(&ray, ds);
    }
    None
}

fn trace_one(
    profile: &GrinProfile,
    mask: &PupilMask,
    pupil_frame: &Frame,
    source: &Vec3,
    dir: &Vec3,
    ds: f64,
    max_steps: usize,
) -> Outcome {
    let radius = profile.radius_mm;
    // Closest approach via the cross product stays exact for distant sources.
    let h2 = source.cross(dir).norm_squared();
    if h2 >= radius * radius {
        return Outcome::Escaped;
    }
    let t = -source.dot(dir) - (radius * radius - h2).sqrt();
    if t <= 0.0 {
        return Outcome::Escaped;
    }
    let entry = onto_sphere(source + dir * t, radius);
    let normal = entry / radius;
    if !mask.transmits_local(&pupil_frame.to_local(&normal)) {
        return Outcome::Blocked;
    }
    let inside = match refract(dir, &normal, profile.n_medium, profile.n_outer) {
        Ok(e) => e,
        Err(_) => return Outcome::TotallyReflected,
    };
    let Some((exit, e_in)) = march(profile, entry, inside, ds, max_steps) else {
        return Outcome::Escaped;
    };
    match refract(&e_in, &(exit / radius), profile.n_outer, profile.n_medium) {
        Ok(e_out) => Outcome::Exited(ExitRay {
            position: exit,
            direction: e_out,
            entry,
        }),
        Err(_) => Outcome::TotallyReflected,
    }
}

/// Casts every ray of `cfg` from the point source through `mask` and the
/// sphere. Output order follows the emission order, so results do not depend
/// on the rayon pool size.
pub fn trace_point_source(
    sphere: &GrinSphere,
    mask: &PupilMask,
    cfg: &TraceConfig,
    wavelength_nm: f64,
) -> Result<TraceResult> {
    cfg.validate(sphere.radius_mm)?;
    mask.validate().map_err(TraceError::Config)?;
    let profile = sphere.at_wavelength(wavelength_nm)?;
    let ds = cfg.step_for(sphere.radius_mm);
    // Generous budget: a diameter chord is 2R/ds steps.
    let max_steps = (20.0 * sphere.radius_mm / ds).ceil() as usize + 16;
    let source = Vec3::from(cfg.source_position);
    let pupil_axis = cfg.pupil_axis.map(Vec3::from).unwrap_or(source);
    if pupil_axis.norm() == 0.0 {
        return Err(TraceError::Config("pupil axis must be non-zero".into()));
    }
    let pupil_frame = Frame::from_axis(&pupil_axis);
    let directions = cfg.directions(sphere.radius_mm);

    let outcomes: Vec<Outcome> = directions
        .par_iter()
        .with_min_len(256)
        .map(|dir| trace_one(&profile, mask, &pupil_frame, &source, dir, ds, max_steps))
        .collect();

    let mut counts = RayCounts {
        emitted: outcomes.len() as u64,
        ..RayCounts::default()
    };
    let mut exit_rays = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        match o {
            Outcome::Exited(r) => {
                counts.exited += 1;
                exit_rays.push(r);
            }
            Outcome::Blocked => counts.blocked += 1,
            Outcome::TotallyReflected => counts.totally_reflected += 1,
            Outcome::Escaped => counts.escaped += 1,
        }
    }
    Ok(TraceResult { exit_rays, counts })
}

/// Traces a ray that starts outside the sphere with an explicit origin and
/// direction (no pupil). Used for reversibility checks.
pub fn trace_single(profile: &GrinProfile, origin: &Vec3, direction: &Vec3, ds: f64) -> Option<ExitRay> {
    let max_steps = (20.0 * profile.radius_mm / ds).ceil() as usize + 16;
    let frame = Frame::from_axis(origin);
    match trace_one(
        profile,
        &PupilMask::FullAperture,
        &frame,
        origin,
        &direction.normalize(),
        ds,
        max_steps,
    ) {
        Outcome::Exited(r) => Some(r),
        _ => None,
    }
}

/// z coordinate where an exit ray passes closest to the optical (z) axis.
pub fn axial_crossing(ray: &ExitRay) -> Option<f64> {
    let (p, e) = (&ray.position, &ray.direction);
    let transverse = e.x * e.x + e.y * e.y;
    if transverse < 1e-30 {
        return None;
    }
    let t = -(p.x * e.x + p.y * e.y) / transverse;
    Some(p.z + t * e.z)
}
