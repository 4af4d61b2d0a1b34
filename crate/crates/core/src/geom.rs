use nalgebra::Vector3;

pub type Vec3 = Vector3<f64>;

/// Orthonormal frame whose `w` axis is the given direction.
#[derive(Debug, Clone, Copy)]
pub struct Frame {
    pub u: Vec3,
    pub v: Vec3,
    pub w: Vec3,
}

impl Frame {
    pub fn from_axis(axis: &Vec3) -> Self {
        let w = axis.normalize();
        let helper = if w.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
        let u = (helper - w * helper.dot(&w)).normalize();
        let v = w.cross(&u);
        Self { u, v, w }
    }

    pub fn to_local(&self, p: &Vec3) -> Vec3 {
        Vec3::new(p.dot(&self.u), p.dot(&self.v), p.dot(&self.w))
    }

    pub fn to_world(&self, p: &Vec3) -> Vec3 {
        self.u * p.x + self.v * p.y + self.w * p.z
    }
}

/// Unit vector from polar angle (from +z) and azimuth, both in radians.
pub fn spherical_unit(polar: f64, azimuth: f64) -> Vec3 {
    let (sp, cp) = polar.sin_cos();
    let (sa, ca) = azimuth.sin_cos();
    Vec3::new(sp * ca, sp * sa, cp)
}

/// Angle between two unit vectors, accurate near 0 and π.
pub fn angle_between(a: &Vec3, b: &Vec3) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}
