use chromafocus::geom::*;

#[test]
fn frame_is_orthonormal() {
    for axis in [Vec3::z(), -Vec3::z(), Vec3::new(1.0, 2.0, -0.5), Vec3::x()] {
        let f = Frame::from_axis(&axis);
        assert!((f.u.norm() - 1.0).abs() < 1e-12);
        assert!((f.v.norm() - 1.0).abs() < 1e-12);
        assert!(f.u.dot(&f.v).abs() < 1e-12);
        assert!(f.u.dot(&f.w).abs() < 1e-12);
        assert!((f.w - axis.normalize()).norm() < 1e-12);
        let p = Vec3::new(0.3, -0.2, 0.9);
        assert!((f.to_world(&f.to_local(&p)) - p).norm() < 1e-12);
    }
}

#[test]
fn small_angles_are_accurate() {
    let a = Vec3::z();
    let b = spherical_unit(1e-9, 0.3);
    assert!((angle_between(&a, &b) - 1e-9).abs() < 1e-20);
}
