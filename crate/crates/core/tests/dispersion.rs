use approx::assert_abs_diff_eq;
use chromafocus::dispersion::*;

#[test]
fn constant_model() {
    assert_eq!(DispersionModel::constant(1.5).refractive_index(550.0).unwrap(), 1.5);
}

#[test]
fn nbk7_at_d_line() {
    // Schott catalogue n_d = 1.51680
    let n = DispersionModel::nbk7().refractive_index(587.6).unwrap();
    assert_abs_diff_eq!(n, 1.51680, epsilon = 1e-4);
}

#[test]
fn tabulated_midpoint() {
    let m = DispersionModel::new(
        DispersionKind::Tabulated {
            points: vec![(400.0, 1.53), (700.0, 1.51)],
        },
        (400.0, 700.0),
    )
    .unwrap();
    assert_abs_diff_eq!(m.refractive_index(550.0).unwrap(), 1.52, epsilon = 1e-12);
}

#[test]
fn out_of_range_is_an_error() {
    let m = DispersionModel::synthetic_core();
    assert!(matches!(
        m.refractive_index(399.0),
        Err(DispersionError::OutOfRange { .. })
    ));
    assert!(m.refractive_index(800.0).is_ok());
    assert!(matches!(
        DispersionModel::nbk7().refractive_index(2600.0),
        Err(DispersionError::OutOfRange { .. })
    ));
}

#[test]
fn rejects_bad_tables() {
    let unsorted = DispersionKind::Tabulated {
        points: vec![(500.0, 1.5), (400.0, 1.6)],
    };
    assert!(DispersionModel::new(unsorted, (400.0, 500.0)).is_err());
    let short_span = DispersionKind::Tabulated {
        points: vec![(400.0, 1.5), (500.0, 1.49)],
    };
    assert!(DispersionModel::new(short_span, (400.0, 600.0)).is_err());
}

#[test]
fn synthetic_presets_match_documented_endpoints() {
    for (m, a, b) in [
        (DispersionModel::synthetic_core(), 1.52, 1.50),
        (DispersionModel::synthetic_outer(), 1.38, 1.36),
        (DispersionModel::synthetic_medium(), 1.343, 1.331),
    ] {
        assert_abs_diff_eq!(m.refractive_index(400.0).unwrap(), a, epsilon = 1e-6);
        assert_abs_diff_eq!(m.refractive_index(800.0).unwrap(), b, epsilon = 1e-6);
    }
}

#[test]
fn presets_are_monotone_non_increasing() {
    for m in [
        DispersionModel::nbk7(),
        DispersionModel::synthetic_core(),
        DispersionModel::synthetic_outer(),
        DispersionModel::synthetic_medium(),
        DispersionModel {
            kind: DispersionKind::Cauchy { a: 1.5, b: 0.004 },
            valid_range: (400.0, 1000.0),
        },
    ] {
        let (lo, hi) = (m.valid_range.0.max(400.0), m.valid_range.1.min(1000.0));
        let mut prev = f64::INFINITY;
        for i in 0..=200 {
            let l = lo + (hi - lo) * i as f64 / 200.0;
            let n = m.refractive_index(l).unwrap();
            assert!(n <= prev, "{m:?} increases at {l}");
            prev = n;
        }
        m.validate_index_floor(true).unwrap();
    }
}

#[test]
fn efl_bfl_examples() {
    let f = focal_lengths(1.5, 100.0).unwrap();
    assert_abs_diff_eq!(f.efl_mm, 75.0, epsilon = 1e-12);
    assert_abs_diff_eq!(f.bfl_mm, 25.0, epsilon = 1e-12);
    let f = focal_lengths(2.0, 100.0).unwrap();
    assert_abs_diff_eq!(f.efl_mm, 50.0, epsilon = 1e-12);
    assert_abs_diff_eq!(f.bfl_mm, 0.0, epsilon = 1e-12);
    // Independently evaluated: 1.5168·100 / (4·0.5168) = 73.37461...
    let f = focal_lengths(1.5168, 100.0).unwrap();
    assert_abs_diff_eq!(f.efl_mm, 73.3746, epsilon = 1e-3);
    assert_abs_diff_eq!(f.bfl_mm, 23.3746, epsilon = 1e-3);
    // Focus inside the ball is reported as a negative BFL.
    assert!(focal_lengths(3.0, 100.0).unwrap().bfl_mm < 0.0);
}

#[test]
fn degenerate_lens() {
    assert!(matches!(
        focal_lengths(1.0, 100.0),
        Err(DispersionError::DegenerateLens { .. })
    ));
    let lens = BallLensSpec::new(10.0, DispersionModel::constant(0.9)).unwrap();
    assert!(lens.efl_bfl(550.0).is_err());
    assert!(BallLensSpec::new(0.0, DispersionModel::nbk7()).is_err());
}

#[test]
fn image_distance_examples() {
    let c = image_conjugate(75.0, 1e12).unwrap();
    assert_abs_diff_eq!(c.image_distance_mm, 75.0, epsilon = 1e-6);
    let c = image_conjugate(75.0, 150.0).unwrap();
    assert_abs_diff_eq!(c.image_distance_mm, 150.0, epsilon = 1e-9);
    assert_abs_diff_eq!(c.magnification, -1.0, epsilon = 1e-12);
    // EFL = 73.37461 → d_i = 1/(1/73.37461 − 1/500) = 85.9942
    let efl = focal_lengths(1.5168, 100.0).unwrap().efl_mm;
    let c = image_conjugate(efl, 500.0).unwrap();
    assert_abs_diff_eq!(c.image_distance_mm, 85.98, epsilon = 0.05);
    assert!(matches!(
        image_conjugate(75.0, 75.0),
        Err(DispersionError::AtFocalPlane { .. })
    ));
}

#[test]
fn chromatic_shift() {
    let flat = BallLensSpec::new(100.0, DispersionModel::constant(1.5)).unwrap();
    assert_eq!(flat.longitudinal_chromatic_shift(450.0, 650.0).unwrap(), 0.0);

    let k9 = BallLensSpec::k9_100mm();
    let blue = k9.longitudinal_chromatic_shift(400.0, 450.0).unwrap();
    let red = k9.longitudinal_chromatic_shift(650.0, 700.0).unwrap();
    assert!(blue.abs() > red.abs());
    // Two independent Sellmeier + EFL evaluations give 0.99886 mm.
    assert_abs_diff_eq!(
        k9.longitudinal_chromatic_shift(450.0, 650.0).unwrap(),
        0.998_862,
        epsilon = 1e-5
    );
    assert!(matches!(
        k9.longitudinal_chromatic_shift(450.0, 3000.0),
        Err(DispersionError::OutOfRange { .. })
    ));
}

#[test]
fn efl_matches_image_distance_at_infinity() {
    let k9 = BallLensSpec::k9_100mm();
    for l in [450.0, 550.0, 650.0] {
        let efl = k9.efl_bfl(l).unwrap().efl_mm;
        let di = k9.image_distance_and_magnification(l, 1e15).unwrap().image_distance_mm;
        assert!(((di - efl) / efl).abs() < 1e-6);
    }
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn shift_is_antisymmetric(l1 in 400.0f64..1000.0, l2 in 400.0f64..1000.0) {
            let k9 = BallLensSpec::k9_100mm();
            let a = k9.longitudinal_chromatic_shift(l1, l2).unwrap();
            let b = k9.longitudinal_chromatic_shift(l2, l1).unwrap();
            prop_assert!((a + b).abs() < 1e-12);
        }

        #[test]
        fn bfl_increases_with_wavelength(l1 in 400.0f64..999.0, dl in 0.5f64..100.0) {
            let k9 = BallLensSpec::k9_100mm();
            let l2 = (l1 + dl).min(1000.0);
            prop_assume!(l2 > l1);
            prop_assert!(k9.efl_bfl(l2).unwrap().bfl_mm > k9.efl_bfl(l1).unwrap().bfl_mm);
        }

        #[test]
        fn efl_decreases_with_index(n1 in 1.01f64..3.0, dn in 0.001f64..1.0) {
            let a = focal_lengths(n1, 50.0).unwrap().efl_mm;
            let b = focal_lengths(n1 + dn, 50.0).unwrap().efl_mm;
            prop_assert!(b < a);
        }
    }
}
