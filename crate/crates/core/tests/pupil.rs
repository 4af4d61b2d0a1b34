use chromafocus::geom::{spherical_unit, Vec3};
use chromafocus::pupil::*;
use proptest::prelude::*;

fn at(polar_deg: f64, az_deg: f64) -> Vec3 {
    spherical_unit(polar_deg.to_radians(), az_deg.to_radians())
}

#[test]
fn full_aperture_front_hemisphere() {
    let axis = Vec3::new(0.0, 0.0, -1.0);
    for polar in [0.0, 30.0, 60.0, 89.9] {
        // Points facing the source sit around -z.
        let p = -at(polar, 40.0);
        assert!(PupilMask::FullAperture.transmits(&p, &axis));
    }
    assert!(!PupilMask::FullAperture.transmits(&Vec3::z(), &axis));
}

#[test]
fn circular_hole() {
    let m = PupilMask::circular(10.0);
    assert!(!m.transmits(&at(15.0, 0.0), &Vec3::z()));
    assert!(m.transmits(&at(9.0, 123.0), &Vec3::z()));
}

#[test]
fn off_centre_hole() {
    let c = at(20.0, 0.0);
    let m = PupilMask::CircularHole {
        half_angle_deg: 5.0,
        center_axis: [c.x, c.y, c.z],
    };
    assert!(!m.transmits_local(&Vec3::z()));
    assert!(m.transmits_local(&at(22.0, 0.0)));
}

#[test]
fn annulus() {
    let m = PupilMask::Annulus {
        inner_half_angle_deg: 5.0,
        outer_half_angle_deg: 10.0,
    };
    assert!(m.transmits(&at(7.0, 200.0), &Vec3::z()));
    assert!(!m.transmits(&at(3.0, 200.0), &Vec3::z()));
    assert!(!m.transmits(&at(12.0, 200.0), &Vec3::z()));
}

#[test]
fn slit() {
    let m = PupilMask::OffAxisSlit {
        width_angle_deg: 4.0,
        offset_angle_deg: 10.0,
        orientation_deg: 0.0,
    };
    assert!(m.transmits_local(&at(10.0, 0.0)));
    assert!(!m.transmits_local(&at(10.0, 180.0)));
    assert!(!m.transmits_local(&Vec3::z()));
    // Along the slit direction the band extends far.
    let x = 10f64.to_radians().sin();
    let p = Vec3::new(x, 0.5, (1.0 - x * x - 0.25).sqrt());
    assert!(m.transmits_local(&p));
}

#[test]
fn w_band_passes_its_vertices_and_blocks_the_axis_gap() {
    let m = PupilMask::w_shape();
    if let PupilMask::PolylineBand { vertices, .. } = &m {
        for &(az, polar) in vertices {
            assert!(m.transmits_local(&at(polar, az)));
        }
    }
    // Midpoint of the first stroke lies on the band.
    let a = at(26.83f64, 153.43);
    let b = at(15.62, -140.19);
    assert!(m.transmits_local(&(a + b).normalize()));
    // Well below the W, nothing passes.
    assert!(!m.transmits_local(&at(30.0, -90.0)));
}

#[test]
fn open_fraction_examples() {
    assert_eq!(open_fraction(&PupilMask::FullAperture, 4000), 1.0);
    assert!((open_fraction(&PupilMask::circular(90.0), 4000) - 1.0).abs() < 0.01);
    let cap = 1.0 - 30f64.to_radians().cos();
    let a = PupilMask::Annulus {
        inner_half_angle_deg: 0.0,
        outer_half_angle_deg: 30.0,
    };
    assert!((open_fraction(&a, 4000) - cap).abs() < 0.01);
    assert_eq!(open_fraction(&a, 4000), open_fraction(&a, 4000));
}

#[test]
fn validation() {
    assert!(PupilMask::circular(200.0).validate().is_err());
    assert!(PupilMask::Annulus {
        inner_half_angle_deg: 10.0,
        outer_half_angle_deg: 5.0
    }
    .validate()
    .is_err());
    assert!(PupilMask::w_shape().validate().is_ok());
}

proptest! {
    #[test]
    fn larger_hole_never_blocks_more(
        polar in 0.0f64..90.0, az in 0.0f64..360.0, h in 0.0f64..90.0, dh in 0.0f64..45.0
    ) {
        let p = at(polar, az);
        if PupilMask::circular(h).transmits_local(&p) {
            prop_assert!(PupilMask::circular(h + dh).transmits_local(&p));
        }
    }

    #[test]
    fn annulus_from_zero_is_a_hole(polar in 0.0f64..90.0, az in 0.0f64..360.0, h in 0.0f64..90.0) {
        let p = at(polar, az);
        let ann = PupilMask::Annulus { inner_half_angle_deg: 0.0, outer_half_angle_deg: h };
        prop_assert_eq!(ann.transmits_local(&p), PupilMask::circular(h).transmits_local(&p));
    }

    #[test]
    fn annulus_fractions_add(a in 1.0f64..40.0, extra in 1.0f64..40.0) {
        let b = a + extra;
        let ann = |i, o| PupilMask::Annulus { inner_half_angle_deg: i, outer_half_angle_deg: o };
        let lhs = open_fraction(&ann(a, b), 5000) + open_fraction(&ann(0.0, a), 5000);
        let rhs = open_fraction(&ann(0.0, b), 5000);
        prop_assert!((lhs - rhs).abs() < 0.005);
    }

    #[test]
    fn transmits_is_deterministic(polar in 0.0f64..90.0, az in 0.0f64..360.0) {
        let m = PupilMask::w_shape();
        let p = at(polar, az);
        prop_assert_eq!(m.transmits_local(&p), m.transmits_local(&p));
    }
}
