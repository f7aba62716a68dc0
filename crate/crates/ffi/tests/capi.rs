use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use uwseg::model::SegModel;
use uwseg_ffi::*;

fn last_error() -> String {
    let p = uwseg_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn square(h: usize, w: usize, r0: usize, r1: usize) -> Vec<u8> {
    (0..h * w)
        .map(|i| ((r0..=r1).contains(&(i / w)) && (r0..=r1).contains(&(i % w))) as u8)
        .collect()
}

#[test]
fn dsc_and_nsd_match_core() {
    let y = square(10, 10, 2, 6);
    let y_hat = square(10, 10, 3, 7);
    let dims = [10usize, 10];
    let mut d = -1.0;
    let mut n = -1.0;
    unsafe {
        assert_eq!(uwseg_dsc(y.as_ptr(), y_hat.as_ptr(), dims.as_ptr(), 2, &mut d), UwsegStatus::Ok);
        assert_eq!(uwseg_nsd(y.as_ptr(), y_hat.as_ptr(), dims.as_ptr(), 2, 1.0, &mut n), UwsegStatus::Ok);
    }
    // 16 shared pixels of 25 + 25.
    assert!((d - 32.0 / 50.0).abs() < 1e-15);
    assert!(n > 0.0 && n < 1.0);
}

#[test]
fn non_binary_mask_is_rejected_with_message() {
    let mut y = square(4, 4, 1, 2);
    y[5] = 2;
    let dims = [4usize, 4];
    let mut d = -1.0;
    let status = unsafe { uwseg_dsc(y.as_ptr(), y.as_ptr(), dims.as_ptr(), 2, &mut d) };
    assert_eq!(status, UwsegStatus::NonBinary);
    assert_eq!(d, -1.0);
    assert!(last_error().contains("y[5]"));
}

#[test]
fn null_and_bad_rank_are_reported() {
    let dims = [4usize, 4];
    let mut d = 0.0;
    let status = unsafe { uwseg_dsc(ptr::null(), ptr::null(), dims.as_ptr(), 2, &mut d) };
    assert_eq!(status, UwsegStatus::NullPointer);
    let y = [0u8; 16];
    let status = unsafe { uwseg_dsc(y.as_ptr(), y.as_ptr(), dims.as_ptr(), 1, &mut d) };
    assert_eq!(status, UwsegStatus::InvalidArgument);
}

#[test]
fn signed_distance_map_signs() {
    let m = square(9, 9, 2, 6);
    let dims = [9usize, 9];
    let mut out = vec![f64::NAN; 81];
    let status = unsafe { uwseg_signed_distance_map(m.as_ptr(), dims.as_ptr(), 2, out.as_mut_ptr()) };
    assert_eq!(status, UwsegStatus::Ok);
    assert!(out[4 * 9 + 4] < 0.0);
    assert_eq!(out[2 * 9 + 2], 0.0);
    assert!(out[0] > 0.0);
}

#[test]
fn combine_and_stationary_point() {
    let mut s2 = 0.0;
    assert_eq!(unsafe { uwseg_stationary_sigma2(1.0, &mut s2) }, UwsegStatus::Ok);
    assert!((s2 - 1.0).abs() < 1e-12);
    let losses = [1.0, 2.0];
    let log_vars = [0.0, 0.0];
    let mut total = 0.0;
    let status = unsafe { uwseg_combine(losses.as_ptr(), log_vars.as_ptr(), 2, &mut total) };
    assert_eq!(status, UwsegStatus::Ok);
    assert!((total - (1.5 + 2.0 * 2f64.ln())).abs() < 1e-12);
    assert_eq!(unsafe { uwseg_stationary_sigma2(-1.0, &mut s2) }, UwsegStatus::InvalidArgument);
}

#[test]
fn model_roundtrip_through_handle() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let model = SegModel::new(7, 4).unwrap();
    model.save(&path).unwrap();
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let mut handle: *mut UwsegModel = ptr::null_mut();
    unsafe {
        assert_eq!(uwseg_model_load(cpath.as_ptr(), &mut handle), UwsegStatus::Ok);
        let mut width = 0;
        assert_eq!(uwseg_model_width(handle, &mut width), UwsegStatus::Ok);
        assert_eq!(width, 4);

        let (h, w) = (12, 10);
        let image: Vec<f64> = (0..h * w).map(|i| (i % 7) as f64 / 7.0).collect();
        let bx = [2usize, 2, 8, 7];
        let mut prob = vec![0.0; h * w];
        let status = uwseg_model_predict(handle, image.as_ptr(), h, w, bx.as_ptr(), prob.as_mut_ptr());
        assert_eq!(status, UwsegStatus::Ok);
        let img = uwseg::Grid::new(vec![h, w], image.clone()).unwrap();
        let prompt = uwseg::model::BoxPrompt::new(2, 2, 8, 7).unwrap();
        assert_eq!(prob, model.predict(&img, &prompt).unwrap().data());

        let outside = [2usize, 2, 13, 7];
        let status = uwseg_model_predict(handle, image.as_ptr(), h, w, outside.as_ptr(), prob.as_mut_ptr());
        assert_eq!(status, UwsegStatus::ShapeMismatch);
        uwseg_model_free(handle);
    }
}

#[test]
fn missing_checkpoint_is_io_error() {
    let cpath = CString::new("/nonexistent/model.ckpt").unwrap();
    let mut handle: *mut UwsegModel = ptr::null_mut();
    let status = unsafe { uwseg_model_load(cpath.as_ptr(), &mut handle) };
    assert_eq!(status, UwsegStatus::Io);
    assert!(handle.is_null());
    assert!(last_error().contains("/nonexistent/model.ckpt"));
}

#[test]
fn generate_dataset_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = CString::new(dir.path().to_str().unwrap()).unwrap();
    let cfg = CString::new(r#"{"shape": {"height": 24, "width": 24, "max_half_extent": 8.0}, "train": 2, "val": 1, "test": 1}"#).unwrap();
    let status = unsafe { uwseg_generate_dataset(out.as_ptr(), 3, cfg.as_ptr()) };
    assert_eq!(status, UwsegStatus::Ok, "{}", last_error());
    assert!(dir.path().join("manifest.json").exists());

    let bad = CString::new(r#"{"trian": 2}"#).unwrap();
    let status = unsafe { uwseg_generate_dataset(out.as_ptr(), 3, bad.as_ptr()) };
    assert_eq!(status, UwsegStatus::Format);
}

#[test]
fn version_is_nul_terminated() {
    let v = unsafe { CStr::from_ptr(uwseg_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

/// The generated header compiles as C when a C compiler is present.
#[test]
fn header_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/uwseg.h");
    assert!(header.exists());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(
        &src,
        format!(
            "#include \"{}\"\nint main(void) {{ return uwseg_version() == 0 || UWSEG_STATUS_OK != 0; }}\n",
            header.display()
        ),
    )
    .unwrap();
    match Command::new("cc").args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only"]).arg(&src).output() {
        Ok(out) => assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr)),
        Err(_) => eprintln!("no C compiler; skipped"),
    }
}
