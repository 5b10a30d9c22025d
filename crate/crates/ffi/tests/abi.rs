use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use kernsurv_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(ks_last_error_message()) }.to_string_lossy().into_owned()
}

fn toy_dataset() -> *mut KsDataset {
    let x = [0.0, 1.0, 2.0, 3.0];
    let t = [1.0, 2.0, 3.0, 4.0];
    let e = [1u8, 0, 1, 1];
    let mut out = ptr::null_mut();
    let status = unsafe { ks_dataset_from_arrays(x.as_ptr(), 4, 1, t.as_ptr(), e.as_ptr(), &mut out) };
    assert_eq!(status, KsStatus::Ok);
    out
}

#[test]
fn dataset_accessors() {
    let data = toy_dataset();
    unsafe {
        assert_eq!(ks_dataset_len(data), 4);
        assert_eq!(ks_dataset_feature_dim(data), 1);
        let mut frac = 0.0;
        assert_eq!(ks_dataset_censored_fraction(data, &mut frac), KsStatus::Ok);
        assert_eq!(frac, 0.25);
        ks_dataset_free(data);
        assert_eq!(ks_dataset_len(ptr::null()), 0);
    }
}

#[test]
fn null_and_bad_inputs() {
    unsafe {
        let mut out = ptr::null_mut();
        let status = ks_dataset_from_arrays(ptr::null(), 2, 1, ptr::null(), ptr::null(), &mut out);
        assert_eq!(status, KsStatus::NullPointer);
        assert!(last_error().contains("features"));
        assert!(out.is_null());

        let x = [0.0, 1.0];
        let t = [-1.0, 2.0];
        let e = [1u8, 1];
        let status = ks_dataset_from_arrays(x.as_ptr(), 2, 1, t.as_ptr(), e.as_ptr(), &mut out);
        assert_ne!(status, KsStatus::Ok);
        assert!(!last_error().is_empty());

        let path = CString::new("/nonexistent/file.csv").unwrap();
        let col_t = CString::new("time").unwrap();
        let col_e = CString::new("event").unwrap();
        let status = ks_dataset_load_csv(path.as_ptr(), col_t.as_ptr(), col_e.as_ptr(), ptr::null(), &mut out);
        assert_eq!(status, KsStatus::Io);

        ks_dataset_free(ptr::null_mut());
        ks_model_free(ptr::null_mut());
        ks_curve_free(ptr::null_mut());
    }
}

#[test]
fn csv_round_trip_through_model_file() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("d.csv");
    std::fs::write(&csv, "a,b,time,event\n0,1,1,1\n1,0,2,0\n2,2,3,1\n3,1,4,1\n0.5,0.5,2.5,1\n").unwrap();
    let path = CString::new(csv.to_str().unwrap()).unwrap();
    let col_t = CString::new("time").unwrap();
    let col_e = CString::new("event").unwrap();
    let feats = CString::new("a,b").unwrap();
    let arch = CString::new("diag").unwrap();
    unsafe {
        let mut data = ptr::null_mut();
        assert_eq!(
            ks_dataset_load_csv(path.as_ptr(), col_t.as_ptr(), col_e.as_ptr(), feats.as_ptr(), &mut data),
            KsStatus::Ok
        );
        assert_eq!(ks_dataset_feature_dim(data), 2);

        let mut model = ptr::null_mut();
        assert_eq!(
            ks_model_fit(data, arch.as_ptr(), 0, 0, 3, 4, 0.01, 0, 9, &mut model),
            KsStatus::Ok,
            "{}",
            last_error()
        );
        assert_eq!(ks_model_input_dim(model), 2);
        let mut len = 0;
        assert_eq!(ks_model_params(model, ptr::null_mut(), 0, &mut len), KsStatus::Ok);
        assert_eq!(len, 2);

        let saved = CString::new(dir.path().join("m.json").to_str().unwrap()).unwrap();
        assert_eq!(ks_model_save(model, saved.as_ptr()), KsStatus::Ok);
        let mut loaded = ptr::null_mut();
        assert_eq!(ks_model_load(saved.as_ptr(), &mut loaded), KsStatus::Ok);

        let q = [1.0, 0.5];
        let (mut a, mut b) = (0.0, 0.0);
        assert_eq!(ks_model_predict_time(model, q.as_ptr(), 2, 0, f64::NAN, &mut a), KsStatus::Ok);
        assert_eq!(ks_model_predict_time(loaded, q.as_ptr(), 2, 0, f64::NAN, &mut b), KsStatus::Ok);
        assert_eq!(a.to_bits(), b.to_bits());

        let mut curve = ptr::null_mut();
        assert_eq!(ks_model_predict_curve(loaded, q.as_ptr(), 2, &mut curve), KsStatus::Ok);
        let m = ks_curve_len(curve);
        let mut times = vec![0.0; m];
        let mut surv = vec![0.0; m];
        assert_eq!(ks_curve_copy(curve, times.as_mut_ptr(), surv.as_mut_ptr(), m), KsStatus::Ok);
        assert!(surv.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(ks_curve_at(curve, times[0] - 1.0), 1.0);
        assert_eq!(ks_curve_median(curve).to_bits(), a.to_bits());
        assert_eq!(
            ks_curve_copy(curve, times.as_mut_ptr(), surv.as_mut_ptr(), m - 1),
            KsStatus::InvalidArgument
        );

        let mut mean = 0.0;
        assert_eq!(ks_model_predict_time(model, q.as_ptr(), 2, 1, 10.0, &mut mean), KsStatus::Ok);
        assert!(mean > 0.0 && mean <= 10.0);

        let bad = [1.0];
        let mut none = ptr::null_mut();
        assert_eq!(ks_model_predict_curve(model, bad.as_ptr(), 1, &mut none), KsStatus::DimensionMismatch);

        ks_curve_free(curve);
        ks_model_free(loaded);
        ks_model_free(model);
        ks_dataset_free(data);
    }
}

#[test]
fn unknown_architecture() {
    let data = toy_dataset();
    let arch = CString::new("transformer").unwrap();
    let mut model = ptr::null_mut();
    let status = unsafe { ks_model_fit(data, arch.as_ptr(), 0, 0, 1, 4, 0.01, 0, 0, &mut model) };
    assert_eq!(status, KsStatus::InvalidArgument);
    assert!(last_error().contains("transformer"));
    unsafe { ks_dataset_free(data) };
}

#[test]
fn synthetic_and_quantile() {
    unsafe {
        let beta = [1.0];
        let mut data = ptr::null_mut();
        assert_eq!(ks_dataset_synthetic_exponential(200, 3, beta.as_ptr(), 1, 0.0, 4, &mut data), KsStatus::Ok);
        assert_eq!(ks_dataset_len(data), 200);
        let mut frac = 1.0;
        ks_dataset_censored_fraction(data, &mut frac);
        assert_eq!(frac, 0.0);
        ks_dataset_free(data);

        let scores = [1.0, 2.0, 3.0, 4.0];
        let mut q = 0.0;
        assert_eq!(ks_marginal_quantile(scores.as_ptr(), 4, 0.2, &mut q), KsStatus::Ok);
        assert_eq!(q, 4.0);
        assert_eq!(ks_marginal_quantile(scores.as_ptr(), 4, 0.01, &mut q), KsStatus::Ok);
        assert_eq!(q, f64::INFINITY);
        assert_eq!(ks_marginal_quantile(scores.as_ptr(), 4, 1.5, &mut q), KsStatus::InvalidArgument);
    }
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(ks_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(crate_dir().join("include/kernsurv.h")).unwrap();
    let source = std::fs::read_to_string(crate_dir().join("src/lib.rs")).unwrap();
    let exports: Vec<&str> = source
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 15);
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
    assert!(header.contains("typedef struct KsModel KsModel;"));
    assert!(header.contains("KS_STATUS_DIMENSION_MISMATCH = 5"));
}

/// Directory holding the library artifacts built alongside this test binary.
fn artifact_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(Path::parent).unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_static_library() {
    let lib = artifact_dir().join("libkernsurv_ffi.a");
    if !lib.exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: C compiler or static library unavailable");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new("cc")
        .arg(crate_dir().join("tests/c/smoke.c"))
        .arg("-I")
        .arg(crate_dir().join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C smoke program failed to compile");
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "exit {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}
