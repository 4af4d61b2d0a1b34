use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use chromafocus_ffi::*;

const SMALL: &str = r#"
schema = 1

[sphere]
radius_mm = 30.0
core = "synthetic-core"
outer = "synthetic-outer"
medium = "synthetic-medium"

[retina]
n_theta = 16
n_phi = 32
max_polar_deg = 20.0

[trace]
n_rays = 500
emission = { scheme = "fibonacci_cone", half_angle_deg = 0.0018 }

[sweep]
wavelengths_nm = [500.0, 600.0]
distances_mm = [95.0, 100.0, 105.0]

[actuator]
f_min_mm = 0.0
f_max_mm = 10.0
frequency_hz = 1.0
waveform = "triangular"
n_cycles = 1

[mapping]
offset_mm = 95.0
"#;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(cf_last_error()) }
        .to_string_lossy()
        .into_owned()
}

fn cpath(p: &Path) -> CString {
    c(p.to_str().unwrap())
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(cf_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn sweep_and_events_through_handles() {
    let tmp = tempfile::tempdir().unwrap();
    let text = c(SMALL);
    let mut cfg = ptr::null_mut();
    unsafe {
        assert_eq!(cf_config_parse(text.as_ptr(), &mut cfg), CfStatus::CfOk);
        assert_eq!(cf_config_set_seed(cfg, 3), CfStatus::CfOk);
        let out = cpath(tmp.path());
        assert_eq!(
            cf_run(cfg, CfCommand::CfSweep, out.as_ptr(), 1),
            CfStatus::CfOk,
            "{}",
            last_error()
        );
        assert_eq!(
            cf_run(cfg, CfCommand::CfEvents, out.as_ptr(), 0),
            CfStatus::CfOk,
            "{}",
            last_error()
        );
        assert_eq!(last_error(), "");

        let mut stack = ptr::null_mut();
        let p = cpath(&tmp.path().join("stack.bin"));
        assert_eq!(cf_stack_read(p.as_ptr(), &mut stack), CfStatus::CfOk);
        let (mut nw, mut nd, mut nt, mut np) = (0, 0, 0, 0);
        assert_eq!(cf_stack_dims(stack, &mut nw, &mut nd, &mut nt, &mut np), CfStatus::CfOk);
        assert_eq!((nw, nd, nt, np), (2, 3, 16, 32));
        assert_eq!(
            cf_stack_dims(stack, ptr::null_mut(), &mut nd, ptr::null_mut(), ptr::null_mut()),
            CfStatus::CfOk
        );

        let mut buf = vec![0u32; nt * np];
        assert_eq!(
            cf_stack_copy_plane(stack, 1, 2, buf.as_mut_ptr(), buf.len()),
            CfStatus::CfOk
        );
        assert!(buf.iter().any(|&v| v > 0));
        assert_eq!(
            cf_stack_copy_plane(stack, 1, 2, buf.as_mut_ptr(), 3),
            CfStatus::CfInvalidArgument
        );
        assert_eq!(
            cf_stack_copy_plane(stack, 2, 0, buf.as_mut_ptr(), buf.len()),
            CfStatus::CfInvalidArgument
        );

        let mut f = 0.0;
        assert_eq!(cf_stack_best_focus(stack, 500.0, &mut f), CfStatus::CfOk);
        assert!([95.0, 100.0, 105.0].contains(&f));
        assert_eq!(cf_stack_best_focus(stack, 550.0, &mut f), CfStatus::CfInvalidArgument);
        cf_stack_free(stack);

        let mut ev = ptr::null_mut();
        let p = cpath(&tmp.path().join("events_500nm.bin"));
        assert_eq!(cf_events_read(p.as_ptr(), &mut ev), CfStatus::CfOk, "{}", last_error());
        let n = cf_events_len(ev);
        assert!(n > 0);
        let mut e = CfEvent::default();
        assert_eq!(cf_events_get(ev, 0, &mut e), CfStatus::CfOk);
        assert!(e.p == 1 || e.p == -1);
        assert_eq!(cf_events_get(ev, n, &mut e), CfStatus::CfInvalidArgument);
        cf_events_free(ev);
        cf_config_free(cfg);
    }
}

#[test]
fn errors_map_to_status_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = ptr::null_mut();
    unsafe {
        let bad = c("schema = 1\nbogus = 2\n");
        assert_eq!(cf_config_parse(bad.as_ptr(), &mut cfg), CfStatus::CfConfig);
        assert!(last_error().contains("bogus"));
        assert!(cfg.is_null());

        let missing = cpath(&tmp.path().join("nope.toml"));
        assert_eq!(cf_config_load(missing.as_ptr(), &mut cfg), CfStatus::CfIo);

        let text = c(SMALL);
        assert_eq!(cf_config_parse(text.as_ptr(), &mut cfg), CfStatus::CfOk);
        let out = cpath(tmp.path());
        assert_eq!(
            cf_run(cfg, CfCommand::CfAnalyze, out.as_ptr(), 1),
            CfStatus::CfMissingInput
        );
        assert_eq!(
            cf_run(ptr::null(), CfCommand::CfTrace, out.as_ptr(), 1),
            CfStatus::CfNullPointer
        );
        assert_eq!(cf_run(cfg, CfCommand::CfTrace, ptr::null(), 1), CfStatus::CfNullPointer);
        cf_config_free(cfg);

        let mut stack = ptr::null_mut();
        let p = cpath(&tmp.path().join("stack.bin"));
        assert_eq!(cf_stack_read(p.as_ptr(), &mut stack), CfStatus::CfMissingInput);
        assert_eq!(cf_events_len(ptr::null()), 0);

        let invalid = [0xffu8, 0xfe, 0];
        assert_eq!(
            cf_config_parse(invalid.as_ptr().cast(), &mut cfg),
            CfStatus::CfInvalidArgument
        );

        cf_config_free(ptr::null_mut());
        cf_stack_free(ptr::null_mut());
        cf_events_free(ptr::null_mut());
    }
}

#[test]
fn optics_helpers() {
    let mut n = 0.0;
    unsafe {
        let name = c("n-bk7");
        assert_eq!(cf_refractive_index(name.as_ptr(), 587.6, &mut n), CfStatus::CfOk);
        assert!((n - 1.5168).abs() < 1e-3);
        let name = c("unobtainium");
        assert_eq!(
            cf_refractive_index(name.as_ptr(), 587.6, &mut n),
            CfStatus::CfInvalidArgument
        );
        assert!(last_error().contains("n-bk7"));

        let (mut efl, mut bfl) = (0.0, 0.0);
        assert_eq!(
            cf_ball_lens_focal_lengths(1.5, 100.0, &mut efl, &mut bfl),
            CfStatus::CfOk
        );
        assert!((efl - 75.0).abs() < 1e-12 && (bfl - 25.0).abs() < 1e-12);
        assert_eq!(
            cf_ball_lens_focal_lengths(1.0, 100.0, &mut efl, &mut bfl),
            CfStatus::CfInvalidArgument
        );
        assert_eq!(
            cf_ball_lens_focal_lengths(1.5, 100.0, ptr::null_mut(), &mut bfl),
            CfStatus::CfNullPointer
        );
    }
}

#[test]
fn header_declares_the_api_and_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/chromafocus.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "cf_last_error",
        "cf_config_load",
        "cf_config_parse",
        "cf_run",
        "cf_stack_read",
        "cf_stack_copy_plane",
        "cf_events_get",
        "cf_refractive_index",
        "typedef struct CfStack CfStack",
        "CF_MISSING_INPUT = 5",
    ] {
        assert!(text.contains(name), "{name} missing from header");
    }
    // Syntax-check with the system C compiler when there is one.
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"chromafocus.h\"\nint main(void) { CfConfig *c = 0; return cf_config_load(\"x\", &c) == CF_OK; }\n",
    )
    .unwrap();
    match std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header.parent().unwrap())
        .arg(&src)
        .output()
    {
        Ok(o) => assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr)),
        Err(e) => eprintln!("no C compiler ({e}); skipped the compile check"),
    }
}
