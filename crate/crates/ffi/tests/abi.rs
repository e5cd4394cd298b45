use std::ffi::CString;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use landmark_rl_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 256];
    let n = unsafe { lr_last_error(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..n.min(255)].iter().map(|&c| c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

fn cpath(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

#[test]
fn volume_round_trip_and_shape() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = ptr::null_mut();
    assert_eq!(unsafe { lr_volume_generate(32, 32, 32, 4.5, 3, &mut v) }, LrStatus::Ok);
    let mut dims = [0usize; 3];
    let mut sp = [0f64; 3];
    assert_eq!(unsafe { lr_volume_shape(v, dims.as_mut_ptr(), sp.as_mut_ptr()) }, LrStatus::Ok);
    assert_eq!((dims, sp), ([32; 3], [4.5; 3]));

    let path = cpath(&dir.path().join("v.lsv"));
    assert_eq!(unsafe { lr_volume_save(v, path.as_ptr()) }, LrStatus::Ok);
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { lr_volume_load(path.as_ptr(), &mut back) }, LrStatus::Ok);
    let n = lr_num_landmarks();
    let (mut a, mut b) = (vec![0.0; 3 * n], vec![0.0; 3 * n]);
    unsafe {
        assert_eq!(lr_volume_landmarks(v, a.as_mut_ptr()), LrStatus::Ok);
        assert_eq!(lr_volume_landmarks(back, b.as_mut_ptr()), LrStatus::Ok);
        lr_volume_free(v);
        lr_volume_free(back);
    }
    assert_eq!(a, b);
}

#[test]
fn locate_and_score() {
    let mut v = ptr::null_mut();
    let mut m = ptr::null_mut();
    let preset = CString::new("tiny").unwrap();
    unsafe {
        assert_eq!(lr_volume_generate(32, 32, 32, 4.5, 9, &mut v), LrStatus::Ok);
        assert_eq!(lr_model_init(preset.as_ptr(), 1, &mut m), LrStatus::Ok);
    }
    let n = lr_num_landmarks();
    let mut pos = vec![0i64; 3 * n];
    assert_eq!(unsafe { lr_locate(m, v, 20, 5, pos.as_mut_ptr()) }, LrStatus::Ok);
    assert!(pos.iter().all(|&c| (0..32).contains(&c)));

    let mut gt = vec![0.0; 3 * n];
    unsafe { lr_volume_landmarks(v, gt.as_mut_ptr()) };
    let exact: Vec<i64> = gt.iter().map(|c| c.round() as i64).collect();
    let mut score = -1.0;
    assert_eq!(unsafe { lr_pck(v, exact.as_ptr(), 10.0, &mut score) }, LrStatus::Ok);
    assert_eq!(score, 100.0);
    assert_eq!(unsafe { lr_pck(v, exact.as_ptr(), -1.0, &mut score) }, LrStatus::InvalidArgument);
    unsafe {
        lr_model_free(m);
        lr_volume_free(v);
    }
}

#[test]
fn errors_map_to_codes_with_messages() {
    let mut v = ptr::null_mut();
    let missing = CString::new("/nonexistent/v.lsv").unwrap();
    assert_eq!(unsafe { lr_volume_load(missing.as_ptr(), &mut v) }, LrStatus::Io);
    assert!(v.is_null());
    assert!(!last_error().is_empty());

    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.lsc");
    std::fs::write(&junk, b"garbage").unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { lr_model_load(cpath(&junk).as_ptr(), &mut m) }, LrStatus::Format);
    assert!(last_error().contains("format"));

    let bad = CString::new("huge").unwrap();
    assert_eq!(unsafe { lr_model_init(bad.as_ptr(), 0, &mut m) }, LrStatus::InvalidArgument);
    assert_eq!(unsafe { lr_volume_load(ptr::null(), &mut v) }, LrStatus::NullPointer);
    assert_eq!(unsafe { lr_volume_generate(2, 2, 2, 1.0, 0, &mut v) }, LrStatus::InvalidArgument);
    assert_eq!(unsafe { lr_locate(ptr::null(), ptr::null(), 1, 0, ptr::null_mut()) }, LrStatus::NullPointer);

    assert_eq!(unsafe { lr_volume_generate(32, 32, 32, 4.5, 0, &mut v) }, LrStatus::Ok);
    assert!(last_error().is_empty());
    unsafe {
        lr_volume_free(v);
        lr_volume_free(ptr::null_mut());
        lr_model_free(ptr::null_mut());
    }
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/landmark_rl.h")
}

#[test]
fn header_declares_every_export() {
    let h = std::fs::read_to_string(header()).unwrap();
    for f in [
        "lr_num_landmarks",
        "lr_last_error",
        "lr_volume_generate",
        "lr_volume_load",
        "lr_volume_save",
        "lr_volume_shape",
        "lr_volume_landmarks",
        "lr_volume_free",
        "lr_model_load",
        "lr_model_init",
        "lr_model_free",
        "lr_locate",
        "lr_pck",
    ] {
        assert!(h.contains(&format!(" {f}(")), "{f} missing from header");
    }
    assert!(h.contains("typedef struct LrModel LrModel;"));
    assert!(h.contains("LR_STATUS_FORMAT = 3"));
}

#[test]
fn header_compiles_as_c() {
    let src = "#include \"landmark_rl.h\"\nint main(void) { LrVolume *v = 0; size_t n = lr_num_landmarks(); (void)v; return (int)n - 15; }\n";
    let dir = tempfile::tempdir().unwrap();
    let c = dir.path().join("t.c");
    std::fs::write(&c, src).unwrap();
    let status = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header().parent().unwrap())
        .arg(&c)
        .status()
        .expect("a C compiler on PATH");
    assert!(status.success());
}
