use std::ffi::{CStr, CString};
use std::ptr;

use flatcover_ffi::*;

fn last_error() -> String {
    let p = fc_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn hyperbolic() -> *mut FcPhase {
    let (j, k, c) = ([1u32], [1u32], [1.0f64]);
    let mut p = ptr::null_mut();
    let st = unsafe { fc_phase_new(2, j.as_ptr(), k.as_ptr(), c.as_ptr(), 1, &mut p) };
    assert_eq!(st, FcStatus::Ok);
    p
}

#[test]
fn phase_roundtrip_and_defect() {
    let p = hyperbolic();
    let mut v = 0.0;
    let xi = [0.5, 0.25];
    assert_eq!(unsafe { fc_phase_eval(p, xi.as_ptr(), &mut v) }, FcStatus::Ok);
    assert_eq!(v, 0.125);
    // Axis box of width 0.2 and height 0.1: defect is w·h.
    let bx = [0.5, 0.5, 0.1, 0.0, 0.0, 0.05];
    assert_eq!(unsafe { fc_flat_defect(p, bx.as_ptr(), &mut v) }, FcStatus::Ok);
    assert!((v - 0.02).abs() < 1e-15);
    let mut flat = false;
    assert_eq!(unsafe { fc_is_flat(p, bx.as_ptr(), 0.011, 2.0, &mut flat) }, FcStatus::Ok);
    assert!(flat);
    assert_eq!(unsafe { fc_is_flat(p, bx.as_ptr(), 0.01, 1.0, &mut flat) }, FcStatus::Ok);
    assert!(!flat);
    unsafe { fc_phase_free(p) };
}

#[test]
fn json_phase_and_errors() {
    let good = CString::new(r#"{"degree":2,"coeffs":[[1,1,1.0]]}"#).unwrap();
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { fc_phase_from_json(good.as_ptr(), &mut p) }, FcStatus::Ok);
    unsafe { fc_phase_free(p) };

    let bad = CString::new("{nope").unwrap();
    let mut q = ptr::null_mut();
    assert_eq!(unsafe { fc_phase_from_json(bad.as_ptr(), &mut q) }, FcStatus::InvalidInput);
    assert!(q.is_null());
    assert!(last_error().contains("json"));

    assert_eq!(unsafe { fc_phase_from_json(ptr::null(), &mut q) }, FcStatus::NullPointer);
    assert!(last_error().contains("null"));

    let mut c = ptr::null_mut();
    assert_eq!(unsafe { fc_cover_canonical(0.3, &mut c) }, FcStatus::InvalidInput);
    let flat_box = [0.5, 0.5, 0.1, 0.0, 0.2, 0.0];
    let ph = hyperbolic();
    let mut v = 0.0;
    assert_eq!(unsafe { fc_flat_defect(ph, flat_box.as_ptr(), &mut v) }, FcStatus::Degenerate);
    unsafe { fc_phase_free(ph) };
    unsafe { fc_phase_free(ptr::null_mut()) };
}

#[test]
fn covers_through_the_abi() {
    let p = hyperbolic();
    let mut c = ptr::null_mut();
    assert_eq!(unsafe { fc_cover_build_hp(p, 1.0 / 64.0, 4.0, &mut c) }, FcStatus::Ok);
    let n = unsafe { fc_cover_len(c) };
    assert!(n > 0);
    let mut m = [0.0f64; 6];
    assert_eq!(unsafe { fc_cover_member(c, 0, m.as_mut_ptr()) }, FcStatus::Ok);
    let mut flat = false;
    assert_eq!(unsafe { fc_is_flat(p, m.as_ptr(), 1.0 / 64.0, 4.0, &mut flat) }, FcStatus::Ok);
    assert!(flat);
    assert_eq!(unsafe { fc_cover_member(c, n, m.as_mut_ptr()) }, FcStatus::InvalidInput);

    let (mut passed, mut overlap) = (false, 0u32);
    assert_eq!(unsafe { fc_cover_verify(c, p, 0.1, 256, &mut passed, &mut overlap) }, FcStatus::Ok);
    assert!(passed);
    assert!(overlap as f64 <= 4.0 * 4.0 * 6.0);

    let mut s = ptr::null_mut();
    assert_eq!(unsafe { fc_cover_to_json(c, &mut s) }, FcStatus::Ok);
    let text = unsafe { CStr::from_ptr(s) }.to_str().unwrap().to_owned();
    assert!(text.contains("\"schema_version\""));
    unsafe { fc_string_free(s) };
    unsafe { fc_cover_free(c) };

    let mut axis = ptr::null_mut();
    assert_eq!(unsafe { fc_cover_hp_axis(1.0 / 16.0, &mut axis) }, FcStatus::Ok);
    assert_eq!(unsafe { fc_cover_len(axis) }, 5 * 16);
    unsafe { fc_cover_free(axis) };
    assert_eq!(unsafe { fc_cover_len(ptr::null()) }, 0);
    unsafe { fc_phase_free(p) };
}

#[test]
fn pell_and_version() {
    let (mut v, mut b) = (0.0, 0u64);
    assert_eq!(unsafe { fc_pell_gap(1, 0.0, &mut v, &mut b) }, FcStatus::Ok);
    assert_eq!(b, 1);
    assert!((v - (2f64.sqrt() - 1.0)).abs() < 1e-15);
    assert_eq!(unsafe { fc_pell_gap(0, 0.0, &mut v, &mut b) }, FcStatus::InvalidInput);
    let ver = unsafe { CStr::from_ptr(fc_version()) }.to_str().unwrap();
    assert_eq!(ver, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_export() {
    let dir = env!("CARGO_MANIFEST_DIR");
    let src = std::fs::read_to_string(format!("{dir}/src/lib.rs")).unwrap();
    let header = std::fs::read_to_string(format!("{dir}/include/flatcover.h")).unwrap();
    let names: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(names.len() >= 15);
    for n in names {
        assert!(header.contains(&format!("{n}(")), "{n} missing from header");
    }
}

#[test]
fn header_compiles_as_c() {
    let dir = env!("CARGO_MANIFEST_DIR");
    let Ok(out) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(format!("{dir}/include/flatcover.h"))
        .output()
    else {
        eprintln!("cc not available; skipping");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
