use std::ffi::{CStr, CString};
use std::ptr;

use ehps_ffi::*;

fn last_error() -> String {
    let p = ehps_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn minimal_model(seed: u64) -> *mut EhpsModel {
    let mut m = ptr::null_mut();
    let status = unsafe { ehps_model_generate(seed, 60, 12, EhpsLayout::Minimal, &mut m) };
    assert_eq!(status, EhpsStatus::Ok);
    m
}

#[test]
fn model_lifecycle_and_forward() {
    let m = minimal_model(3);
    let (nv, nj) = unsafe { (ehps_model_num_vertices(m), ehps_model_num_joints(m)) };
    assert_eq!((nv, nj), (60, 12));

    let theta = vec![0.0; nj * 3];
    let zeros = [0.0; 10];
    let shift = [0.1, -0.2, 0.3];
    let mut verts = vec![0.0; nv * 3];
    let mut joints = vec![0.0; nj * 3];
    let status = unsafe {
        ehps_forward(m, theta.as_ptr(), zeros.as_ptr(), zeros.as_ptr(), shift.as_ptr(), verts.as_mut_ptr(), joints.as_mut_ptr())
    };
    assert_eq!(status, EhpsStatus::Ok);

    // Save, reload and compare the posed mesh.
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.json").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { ehps_model_save(m, path.as_ptr()) }, EhpsStatus::Ok);
    let mut reloaded = ptr::null_mut();
    assert_eq!(unsafe { ehps_model_load(path.as_ptr(), &mut reloaded) }, EhpsStatus::Ok);
    let mut verts2 = vec![0.0; nv * 3];
    let mut joints2 = vec![0.0; nj * 3];
    let status = unsafe {
        ehps_forward(reloaded, theta.as_ptr(), zeros.as_ptr(), zeros.as_ptr(), shift.as_ptr(), verts2.as_mut_ptr(), joints2.as_mut_ptr())
    };
    assert_eq!(status, EhpsStatus::Ok);
    assert_eq!(verts, verts2);
    assert_eq!(joints, joints2);

    // Translation-only pose against the unshifted mesh: error is |shift|.
    let origin = [0.0; 3];
    let mut rest = vec![0.0; nv * 3];
    unsafe {
        ehps_forward(m, theta.as_ptr(), zeros.as_ptr(), zeros.as_ptr(), origin.as_ptr(), rest.as_mut_ptr(), joints2.as_mut_ptr());
    }
    let mut err = 0.0;
    let status = unsafe {
        ehps_position_error(verts.as_ptr(), rest.as_ptr(), nv, EhpsAlignment::None, ptr::null(), ptr::null(), &mut err)
    };
    assert_eq!(status, EhpsStatus::Ok);
    let norm = (0.01f64 + 0.04 + 0.09).sqrt() * 1000.0;
    assert!((err - norm).abs() < 1e-9, "{err} vs {norm}");
    let status = unsafe {
        ehps_position_error(verts.as_ptr(), rest.as_ptr(), nv, EhpsAlignment::Procrustes, ptr::null(), ptr::null(), &mut err)
    };
    assert_eq!(status, EhpsStatus::Ok);
    assert!(err < 1e-9);
    let status = unsafe {
        ehps_position_error(verts.as_ptr(), rest.as_ptr(), nv, EhpsAlignment::RootTranslation, shift.as_ptr(), origin.as_ptr(), &mut err)
    };
    assert_eq!(status, EhpsStatus::Ok);
    assert!(err < 1e-9);

    unsafe {
        ehps_model_free(m);
        ehps_model_free(reloaded);
        ehps_model_free(ptr::null_mut());
    }
}

#[test]
fn errors_map_to_status_codes() {
    let mut m = ptr::null_mut();
    let status = unsafe { ehps_model_generate(0, 100, 12, EhpsLayout::Canonical, &mut m) };
    assert_eq!(status, EhpsStatus::InvalidArgument);
    assert!(m.is_null());
    assert!(!last_error().is_empty());

    let status = unsafe { ehps_model_generate(0, 60, 12, EhpsLayout::Minimal, ptr::null_mut()) };
    assert_eq!(status, EhpsStatus::NullPointer);
    assert!(last_error().contains("out"));

    let missing = CString::new("/nonexistent/model.json").unwrap();
    assert_eq!(unsafe { ehps_model_load(missing.as_ptr(), &mut m) }, EhpsStatus::IoError);

    let line = [0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 2.0, 0.0, 0.0];
    let (mut s, mut r, mut t) = (0.0, [0.0; 9], [0.0; 3]);
    let status = unsafe { ehps_umeyama(line.as_ptr(), line.as_ptr(), 3, true, &mut s, r.as_mut_ptr(), t.as_mut_ptr()) };
    assert_eq!(status, EhpsStatus::DegenerateGeometry);

    let mut out = 0.0;
    assert_eq!(unsafe { ehps_detection_normalized(10.0, 0.0, &mut out) }, EhpsStatus::InvalidArgument);
    assert_eq!(unsafe { ehps_model_num_joints(ptr::null()) }, 0);
}

#[test]
fn umeyama_recovers_similarity() {
    let src = [0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 3.0, 1.0, 1.0, 1.0];
    // 90° about z, scale 2, translation (1, 2, 3).
    let dst: Vec<f64> = src
        .chunks(3)
        .flat_map(|p| [-2.0 * p[1] + 1.0, 2.0 * p[0] + 2.0, 2.0 * p[2] + 3.0])
        .collect();
    let (mut s, mut r, mut t) = (0.0, [0.0; 9], [0.0; 3]);
    let status = unsafe { ehps_umeyama(src.as_ptr(), dst.as_ptr(), 5, true, &mut s, r.as_mut_ptr(), t.as_mut_ptr()) };
    assert_eq!(status, EhpsStatus::Ok);
    let expected_r = [0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0];
    assert!((s - 2.0).abs() < 1e-12);
    for (a, b) in r.iter().zip(expected_r) {
        assert!((a - b).abs() < 1e-12);
    }
    for (a, b) in t.iter().zip([1.0, 2.0, 3.0]) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn mpe_and_planning() {
    let basket = CString::new("whole-body").unwrap();
    let names: Vec<CString> = ["AGORA-val", "UBody", "EgoBody", "3DPW", "EHF"]
        .into_iter()
        .map(|s| CString::new(s).unwrap())
        .collect();
    let ids: Vec<*const std::ffi::c_char> = names.iter().map(|s| s.as_ptr()).collect();
    let values = [119.0, 110.1, 114.2, 110.2, 100.5];
    let mut out = 0.0;
    let status = unsafe { ehps_mpe(basket.as_ptr(), ids.as_ptr(), values.as_ptr(), 5, ptr::null(), 0, &mut out) };
    assert_eq!(status, EhpsStatus::Ok);
    assert!((out - 110.8).abs() < 0.05);

    let agora = CString::new("AGORA").unwrap();
    let trained = [agora.as_ptr()];
    let status = unsafe { ehps_mpe(basket.as_ptr(), ids.as_ptr(), values.as_ptr(), 5, trained.as_ptr(), 1, &mut out) };
    assert_eq!(status, EhpsStatus::Ok);
    assert!((out - (110.1 + 114.2 + 110.2 + 100.5) / 4.0).abs() < 1e-12);

    let sizes = [1000usize, 1000, 1000, 1000];
    let mut lengths = [0usize; 4];
    let status = unsafe { ehps_plan_lengths(EhpsStrategy::Weighted, 4, sizes.as_ptr(), 4, 100, lengths.as_mut_ptr()) };
    assert_eq!(status, EhpsStatus::Ok);
    assert_eq!(lengths, [40, 30, 20, 10]);
    let status = unsafe { ehps_plan_lengths(EhpsStrategy::Balanced, 0, sizes.as_ptr(), 4, 2, lengths.as_mut_ptr()) };
    assert_eq!(status, EhpsStatus::InvalidArgument);
}

#[test]
fn header_declares_every_entry_point() {
    let header = include_str!("../include/ehps.h");
    let src = include_str!("../src/lib.rs");
    let exported: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exported.len() >= 12, "{exported:?}");
    for name in exported {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
    for ty in ["typedef struct EhpsModel EhpsModel;", "EHPS_STATUS_OK = 0", "EHPS_STATUS_PANIC"] {
        assert!(header.contains(ty));
    }
}
