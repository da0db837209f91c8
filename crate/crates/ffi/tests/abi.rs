use std::ffi::{CStr, CString};
use std::ptr;

use overlap_sde_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(osd_last_error()) }
        .to_string_lossy()
        .into_owned()
}

fn values(f: impl Fn(*mut f64, usize, *mut usize) -> OsdStatus) -> Vec<f64> {
    let mut len = 0;
    assert_eq!(f(ptr::null_mut(), 0, &mut len), OsdStatus::Ok);
    let mut buf = vec![0.0; len];
    assert_eq!(f(buf.as_mut_ptr(), buf.len(), &mut len), OsdStatus::Ok);
    buf
}

#[test]
fn grid_and_eigen_round_trip() {
    unsafe {
        let mut grid = ptr::null_mut();
        assert_eq!(osd_grid_new(4.0, 4, 32, &mut grid), OsdStatus::Ok);
        let mut h = 0.0;
        assert_eq!(osd_grid_spacing(grid, &mut h), OsdStatus::Ok);
        assert_eq!(h, 1.0);
        let mut eig = ptr::null_mut();
        assert_eq!(osd_eigen_solve(grid, 0.0, 8, &mut eig), OsdStatus::Ok);
        let vals = values(|b, c, l| osd_eigen_values(eig, b, c, l));
        assert_eq!(vals.len(), 8);
        assert!(vals[..4].iter().all(|v| v.abs() < 1e-9));
        let pi2 = std::f64::consts::PI.powi(2);
        assert!(vals[4..].iter().all(|v| (v / pi2 - 1.0).abs() < 1e-3), "{vals:?}");
        let mut short = [0.0; 2];
        let mut len = 0;
        assert_eq!(
            osd_eigen_values(eig, short.as_mut_ptr(), 2, &mut len),
            OsdStatus::InvalidArgument
        );
        assert_eq!(len, 8);
        assert!(last_error().contains("buffer"));
        osd_eigen_free(eig);
        osd_grid_free(grid);
    }
}

#[test]
fn errors_map_to_status_codes() {
    unsafe {
        let mut grid = ptr::null_mut();
        assert_eq!(osd_grid_new(1.0, 2, 8, &mut grid), OsdStatus::InvalidArgument);
        assert!(grid.is_null());
        assert!(last_error().contains("3 elements"));
        assert_eq!(osd_grid_new(1.0, 4, 8, ptr::null_mut()), OsdStatus::NullPointer);
        let mut h = 0.0;
        assert_eq!(osd_grid_spacing(ptr::null(), &mut h), OsdStatus::NullPointer);
        let bad = CString::new("[grid]\nlength = -1.0\n").unwrap();
        let mut cfg = ptr::null_mut();
        assert_eq!(osd_config_from_toml(bad.as_ptr(), &mut cfg), OsdStatus::Config);
        let mut g = ptr::null_mut();
        assert_eq!(osd_grid_new(4.0, 4, 16, &mut g), OsdStatus::Ok);
        assert!(last_error().is_empty());
        let mut eig = ptr::null_mut();
        assert_eq!(osd_eigen_solve(g, 1.0, 12, &mut eig), OsdStatus::Ok);
        let mut rate = 0.0;
        // No slow cluster separates at full coupling.
        assert_eq!(osd_eigen_slow_rate(eig, &mut rate), OsdStatus::Numerical);
        osd_eigen_free(eig);
        osd_grid_free(g);
        osd_grid_free(ptr::null_mut());
    }
}

#[test]
fn coefficients_and_members_match_the_library() {
    let text = CString::new(
        "[grid]\nlength = 6.283185307179586\nelements = 8\nsubgrid = 16\n\
         [noise]\nmodes = 16\ndecay = 3.0\n\
         [spde]\nalpha = 1.0\nsigma = 0.5\ndt = 0.001\nhorizon = 0.05\n\
         [model]\nkinds = [\"holistic\"]\n\
         [ensemble]\nmembers = 4\nseed = 3\nreference_points = 128\n",
    )
    .unwrap();
    unsafe {
        let mut cfg = ptr::null_mut();
        assert_eq!(
            osd_config_from_toml(text.as_ptr(), &mut cfg),
            OsdStatus::Ok,
            "{}",
            last_error()
        );
        let mut coeffs = ptr::null_mut();
        assert_eq!(osd_coeffs_compute(cfg, &mut coeffs), OsdStatus::Ok);
        let hat = values(|b, c, l| osd_coeffs_hat_alpha(coeffs, b, c, l));
        let q = values(|b, c, l| osd_coeffs_deviation(coeffs, b, c, l));
        assert_eq!(hat.len(), 8);
        assert!(hat.iter().all(|a| *a < 1.0 && *a > 0.9));
        assert!(q.iter().all(|v| *v >= 0.0));
        osd_coeffs_free(coeffs);

        let run =
            |target: OsdTarget, member| values(|b, c, l| osd_simulate_member(cfg, target as u32, member, b, c, l));
        let a = run(OsdTarget::Holistic, 1);
        assert_eq!(a, run(OsdTarget::Holistic, 1));
        assert_ne!(a, run(OsdTarget::Holistic, 2));
        assert_eq!(run(OsdTarget::Reference, 1).len(), 8);
        let mut len = 0;
        assert_eq!(
            osd_simulate_member(cfg, 99, 0, ptr::null_mut(), 0, &mut len),
            OsdStatus::InvalidArgument
        );

        assert_eq!(osd_config_set_seed(cfg, 4), OsdStatus::Ok);
        assert_ne!(a, run(OsdTarget::Holistic, 1));
        osd_config_free(cfg);
    }
}

#[test]
fn header_is_valid_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/overlap_sde.h");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(
        &src,
        format!("#include \"{header}\"\nint main(void) {{ return (int)OSD_STATUS_OK; }}\n"),
    )
    .unwrap();
    match std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only"])
        .arg(&src)
        .status()
    {
        Ok(s) => assert!(s.success()),
        Err(_) => eprintln!("no C compiler found; header syntax not checked"),
    }
}
