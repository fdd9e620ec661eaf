use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use cstts::model_io::FeatureNormalizer;
use cstts::text::SymbolTable;
use cstts::tts::{TtsArch, TtsConfig, TtsModel};
use cstts_ffi::*;

fn last_error() -> String {
    let p = cstts_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn demo() -> *mut CsttsFrontend {
    let mut fe = ptr::null_mut();
    assert_eq!(unsafe { cstts_frontend_new_demo(&mut fe) }, CsttsStatus::Ok);
    fe
}

fn tone(n: usize, hz: f32) -> Vec<f32> {
    (0..n).map(|i| 0.4 * (std::f32::consts::TAU * hz * i as f32 / 16_000.0).sin()).collect()
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(cstts_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn tokenize_reports_the_needed_length_when_the_buffer_is_short() {
    let fe = demo();
    let text = CString::new("music ni3 hao3").unwrap();
    let mut len = 0usize;
    let st = unsafe { cstts_frontend_tokenize(fe, text.as_ptr(), ptr::null_mut(), 0, &mut len) };
    assert_eq!(st, CsttsStatus::BufferTooSmall);
    assert!(len > 3);

    let mut ids = vec![0u32; len];
    let st = unsafe { cstts_frontend_tokenize(fe, text.as_ptr(), ids.as_mut_ptr(), ids.len(), &mut len) };
    assert_eq!(st, CsttsStatus::Ok);
    let vocab = unsafe { cstts_frontend_vocab_size(fe) };
    assert!(ids.iter().all(|&i| (i as usize) < vocab));
    unsafe { cstts_frontend_free(fe) };
}

#[test]
fn failures_set_a_status_and_a_thread_local_message() {
    let fe = demo();
    let text = CString::new("qwxz").unwrap();
    let mut len = 0usize;
    let mut ids = [0u32; 64];
    let st = unsafe { cstts_frontend_tokenize(fe, text.as_ptr(), ids.as_mut_ptr(), 64, &mut len) };
    assert_eq!(st, CsttsStatus::Lookup);
    assert!(last_error().contains("qwxz"));

    let other = std::thread::spawn(|| cstts_last_error_message().is_null()).join().unwrap();
    assert!(other, "errors must not leak across threads");
    cstts_clear_error();
    assert!(cstts_last_error_message().is_null());

    let st = unsafe { cstts_frontend_tokenize(ptr::null(), text.as_ptr(), ids.as_mut_ptr(), 64, &mut len) };
    assert_eq!(st, CsttsStatus::NullPointer);
    assert!(last_error().contains("frontend"));

    let bad = [0xffu8, 0];
    let st = unsafe { cstts_frontend_tokenize(fe, bad.as_ptr().cast(), ids.as_mut_ptr(), 64, &mut len) };
    assert_eq!(st, CsttsStatus::InvalidUtf8);
    unsafe { cstts_frontend_free(fe) };
    unsafe { cstts_frontend_free(ptr::null_mut()) };
}

#[test]
fn audio_round_trips_through_features_and_the_vocoder() {
    let samples = tone(16_000, 150.0);
    let mut f = ptr::null_mut();
    assert_eq!(unsafe { cstts_features_from_audio(samples.as_ptr(), samples.len(), &mut f) }, CsttsStatus::Ok);
    let (frames, dim) = unsafe { (cstts_features_frames(f), cstts_features_dim(f)) };
    assert_eq!(dim, 20);
    assert!(frames > 90);

    let mut data = vec![0f32; frames * dim];
    let mut len = 0;
    assert_eq!(unsafe { cstts_features_copy(f, data.as_mut_ptr(), data.len(), &mut len) }, CsttsStatus::Ok);
    assert_eq!(len, frames * dim);
    assert!(data.iter().all(|x| x.is_finite()));

    let dir = tempfile::tempdir().unwrap();
    let feat_path = CString::new(dir.path().join("a.lpcnet").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { cstts_features_save(f, feat_path.as_ptr()) }, CsttsStatus::Ok);
    let mut g = ptr::null_mut();
    assert_eq!(unsafe { cstts_features_load(feat_path.as_ptr(), &mut g) }, CsttsStatus::Ok);
    assert_eq!(unsafe { cstts_features_frames(g) }, frames);

    let mut n = 0;
    assert_eq!(unsafe { cstts_render(g, 1, ptr::null_mut(), 0, &mut n) }, CsttsStatus::BufferTooSmall);
    let mut pcm = vec![0f32; n];
    assert_eq!(unsafe { cstts_render(g, 1, pcm.as_mut_ptr(), n, &mut n) }, CsttsStatus::Ok);
    assert_eq!(n, frames * 160);
    assert!(pcm.iter().any(|&x| x != 0.0));

    let wav = CString::new(dir.path().join("a.wav").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { cstts_render_wav(g, 1, wav.as_ptr()) }, CsttsStatus::Ok);
    assert!(std::fs::metadata(dir.path().join("a.wav")).unwrap().len() > 44);
    unsafe {
        cstts_features_free(f);
        cstts_features_free(g);
    }
}

#[test]
fn empty_audio_is_rejected() {
    let mut f = ptr::null_mut();
    assert_eq!(unsafe { cstts_features_from_audio(ptr::null(), 0, &mut f) }, CsttsStatus::EmptyInput);
    assert!(f.is_null());
}

#[test]
fn a_saved_model_synthesizes_through_the_c_api() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fs.json");
    let table = SymbolTable::canonical();
    let model =
        TtsModel::new(TtsArch::FastSpeech, TtsConfig::default(), &table, FeatureNormalizer::identity(20), 0.01, 1.0)
            .unwrap();
    model.save(&path).unwrap();

    let fe = demo();
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { cstts_tts_load(cpath.as_ptr(), fe, &mut m) }, CsttsStatus::Ok);
    let text = CString::new("tea cha2").unwrap();
    let mut f = ptr::null_mut();
    let mut truncated = -1;
    assert_eq!(unsafe { cstts_tts_synthesize(m, fe, text.as_ptr(), &mut f, &mut truncated) }, CsttsStatus::Ok);
    assert!(truncated == 0 || truncated == 1);
    assert!(unsafe { cstts_features_frames(f) } > 0);

    let missing = CString::new(dir.path().join("none.json").to_str().unwrap()).unwrap();
    let mut m2 = ptr::null_mut();
    assert_ne!(unsafe { cstts_tts_load(missing.as_ptr(), fe, &mut m2) }, CsttsStatus::Ok);
    assert!(last_error().contains("none.json"));
    unsafe {
        cstts_features_free(f);
        cstts_tts_free(m);
        cstts_frontend_free(fe);
    }
}

#[test]
fn generated_header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/cstts.h");
    let text = std::fs::read_to_string(header).unwrap();
    for name in ["cstts_frontend_tokenize", "cstts_tts_synthesize", "cstts_render_wav", "CSTTS_STATUS_BUFFER_TOO_SMALL"] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let Ok(out) = Command::new("cc").args(["-fsyntax-only", "-x", "c", header]).output() else {
        eprintln!("no C compiler; skipping syntax check");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
