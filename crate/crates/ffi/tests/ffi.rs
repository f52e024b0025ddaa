use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::ptr;

use invariant_inr::checkpoint::save_checkpoint;
use invariant_inr::config::RunConfig;
use invariant_inr::geometry::{DiscreteImage, Pose};
use invariant_inr::train::Trainer;
use invariant_inr_ffi::*;

const TINY: &str = r#"
seed = 3
[dataset]
side = 8
[model]
latent_dim = 4
side = 8
fourier_features = 4
hyper_hidden = [8]
decoder_hidden = [8]
[model.encoder]
blocks = [{channels = 4, stride = 2}]
head_hidden = [8]
"#;

fn write_checkpoint(dir: &Path) -> (PathBuf, Trainer) {
    let cfg = RunConfig::from_toml(TINY).unwrap();
    let trainer = Trainer::new(&cfg).unwrap();
    let path = dir.join("checkpoint.bin");
    save_checkpoint(&path, &cfg, &trainer).unwrap();
    (path, trainer)
}

fn load(path: &Path) -> *mut IrlModel {
    let c = CString::new(path.to_str().unwrap()).unwrap();
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { irl_model_load(c.as_ptr(), &mut handle) }, IrlStatus::Ok);
    assert!(!handle.is_null());
    handle
}

fn last_error() -> String {
    let p = irl_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn test_image() -> Vec<f64> {
    (0..64).map(|i| ((i * 7) % 11) as f64 / 10.0).collect()
}

#[test]
fn dims_match_config() {
    let dir = tempfile::tempdir().unwrap();
    let (path, _) = write_checkpoint(dir.path());
    let h = load(&path);
    let (mut d, mut c, mut s) = (0usize, 0usize, 0usize);
    assert_eq!(unsafe { irl_model_dims(h, &mut d, &mut c, &mut s) }, IrlStatus::Ok);
    assert_eq!((d, c, s), (4, 1, 8));
    assert_eq!(unsafe { irl_model_dims(h, ptr::null_mut(), ptr::null_mut(), &mut s) }, IrlStatus::Ok);
    unsafe { irl_model_free(h) };
}

#[test]
fn encode_and_render_match_rust_api() {
    let dir = tempfile::tempdir().unwrap();
    let (path, trainer) = write_checkpoint(dir.path());
    let h = load(&path);

    let px = test_image();
    let mut z = [0.0; 4];
    let mut pose = [0.0; 3];
    let st = unsafe { irl_model_encode(h, px.as_ptr(), px.len(), z.as_mut_ptr(), z.len(), pose.as_mut_ptr()) };
    assert_eq!(st, IrlStatus::Ok);
    let want = trainer.model.encode(&DiscreteImage::new(1, 8, px).unwrap()).unwrap();
    assert_eq!(z.to_vec(), want.z);
    assert_eq!(pose, [want.theta_hat, want.tau_hat[0], want.tau_hat[1]]);

    let mut out = vec![0.0; 64];
    let st = unsafe { irl_model_render(h, z.as_ptr(), 4, 0.3, 0.1, -0.2, out.as_mut_ptr(), out.len()) };
    assert_eq!(st, IrlStatus::Ok);
    let img = trainer.model.render_code(&z, &Pose::new(0.3, [0.1, -0.2])).unwrap();
    assert_eq!(out, img.pixels());
    unsafe { irl_model_free(h) };
}

#[test]
fn shape_mismatch_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let (path, _) = write_checkpoint(dir.path());
    let h = load(&path);
    let px = vec![0.0; 63];
    let mut z = [0.0; 4];
    let mut pose = [0.0; 3];
    let st = unsafe { irl_model_encode(h, px.as_ptr(), px.len(), z.as_mut_ptr(), 4, pose.as_mut_ptr()) };
    assert_eq!(st, IrlStatus::ShapeMismatch);
    assert!(last_error().contains("63"));

    let mut out = vec![0.0; 64];
    let st = unsafe { irl_model_render(h, z.as_ptr(), 3, 0.0, 0.0, 0.0, out.as_mut_ptr(), 64) };
    assert_eq!(st, IrlStatus::ShapeMismatch);
    unsafe { irl_model_free(h) };
}

#[test]
fn null_pointers_are_rejected() {
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { irl_model_load(ptr::null(), &mut handle) }, IrlStatus::NullPointer);
    assert!(handle.is_null());
    let mut d = 0usize;
    assert_eq!(
        unsafe { irl_model_dims(ptr::null(), &mut d, ptr::null_mut(), ptr::null_mut()) },
        IrlStatus::NullPointer
    );
    let mut z = [0.0; 4];
    assert_eq!(
        unsafe { irl_model_encode(ptr::null(), ptr::null(), 0, z.as_mut_ptr(), 4, ptr::null_mut()) },
        IrlStatus::NullPointer
    );
    unsafe { irl_model_free(ptr::null_mut()) };
}

#[test]
fn missing_file_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let c = CString::new(dir.path().join("nope.bin").to_str().unwrap()).unwrap();
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { irl_model_load(c.as_ptr(), &mut handle) }, IrlStatus::Io);
    assert!(!last_error().is_empty());
}

#[test]
fn corrupt_file_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let (path, _) = write_checkpoint(dir.path());
    let mut bytes = std::fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xff;
    std::fs::write(&path, &bytes).unwrap();
    let c = CString::new(path.to_str().unwrap()).unwrap();
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { irl_model_load(c.as_ptr(), &mut handle) }, IrlStatus::CorruptCheckpoint);
    assert!(handle.is_null());
}

#[test]
fn header_declares_every_entry_point() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/invariant_inr.h")).unwrap();
    for sym in [
        "irl_last_error",
        "irl_model_load",
        "irl_model_free",
        "irl_model_dims",
        "irl_model_encode",
        "irl_model_render",
        "typedef struct IrlModel IrlModel",
        "IRL_STATUS_OK = 0",
        "IRL_STATUS_CORRUPT_CHECKPOINT = 4",
    ] {
        assert!(header.contains(sym), "header lacks {sym}");
    }
}
