//! C ABI for the cstts frontend, TTS inference and the DSP vocoder.
//!
//! Every fallible call returns a [`CsttsStatus`]; on failure the message is
//! kept per thread and read with [`cstts_last_error_message`]. Objects are
//! opaque handles created by `*_new`/`*_load` functions and released with
//! the matching `*_free`. Handles are not thread-safe unless stated.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use cstts::dsp::{extract_lpcnet_features, AudioClip, FeatureConfig, FeatureTrack};
use cstts::text::{tokenize_mixed, BilingualLexicon, SymbolTable};
use cstts::tts::{synthesize, SynthesisOptions, TtsModel};
use cstts::vocoder::{render, VocoderSpec};
use cstts::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CsttsStatus {
    Ok = 0,
    NullPointer,
    InvalidUtf8,
    /// The caller's buffer is too small; the required length was written.
    BufferTooSmall,
    EmptyInput,
    Format,
    Type,
    InsufficientData,
    Validation,
    Lookup,
    Config,
    Data,
    Argument,
    Numeric,
    Checkpoint,
    Subprocess,
    Io,
    /// A Rust panic was caught at the boundary.
    Panic,
}

impl From<&Error> for CsttsStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::EmptyInput(_) => Self::EmptyInput,
            Error::Format(_) | Error::Wav(_) => Self::Format,
            Error::Type(_) => Self::Type,
            Error::InsufficientData(_) => Self::InsufficientData,
            Error::Validation(_) => Self::Validation,
            Error::Lookup(_) => Self::Lookup,
            Error::Config(_) => Self::Config,
            Error::Data(_) => Self::Data,
            Error::Argument(_) => Self::Argument,
            Error::Numeric(_) => Self::Numeric,
            Error::Checkpoint(_) | Error::Json(_) => Self::Checkpoint,
            Error::Subprocess(_) => Self::Subprocess,
            Error::Io { .. } => Self::Io,
            Error::Stage { source, .. } => Self::from(source.as_ref()),
        }
    }
}

/// Lexicon and symbol table.
pub struct CsttsFrontend {
    lexicon: BilingualLexicon,
    table: SymbolTable,
}

/// A trained TTS model. Synthesis only reads it, so one handle may serve
/// several threads at once.
pub struct CsttsTtsModel {
    model: TtsModel,
}

/// LPCNet feature frames, 20 values per frame.
pub struct CsttsFeatures {
    track: FeatureTrack,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("NULs were replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(CsttsStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(CsttsStatus::from(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CsttsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CsttsStatus::Ok,
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            CsttsStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(CsttsStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail(CsttsStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Copies `src` into a caller buffer of `cap` elements, always reporting
/// the full length through `len_out`.
unsafe fn fill<T: Copy>(src: &[T], buf: *mut T, cap: usize, len_out: *mut usize) -> Result<(), Fail> {
    if len_out.is_null() {
        return Err(null("len_out"));
    }
    *len_out = src.len();
    if cap < src.len() {
        return Err(Fail(CsttsStatus::BufferTooSmall, format!("buffer holds {cap}, need {}", src.len())));
    }
    if !src.is_empty() {
        if buf.is_null() {
            return Err(null("buf"));
        }
        std::ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    }
    Ok(())
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cstts_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn cstts_clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cstts_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Frontend with the built-in demo lexicon.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn cstts_frontend_new_demo(out: *mut *mut CsttsFrontend) -> CsttsStatus {
    guard(|| put(out, CsttsFrontend { lexicon: BilingualLexicon::demo(), table: SymbolTable::canonical() }, "out"))
}

/// Frontend from an English lexicon file and an optional translation table
/// (`translations` may be NULL).
///
/// # Safety
/// Strings must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cstts_frontend_load(
    lexicon: *const c_char,
    translations: *const c_char,
    out: *mut *mut CsttsFrontend,
) -> CsttsStatus {
    guard(|| {
        let lex_path = str_arg(lexicon, "lexicon")?;
        let tr = if translations.is_null() { None } else { Some(str_arg(translations, "translations")?) };
        let table = SymbolTable::canonical();
        let lexicon = BilingualLexicon::load(Path::new(lex_path), tr.map(Path::new))?;
        lexicon.validate(&table)?;
        put(out, CsttsFrontend { lexicon, table }, "out")
    })
}

/// # Safety
/// `fe` must come from a frontend constructor and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cstts_frontend_free(fe: *mut CsttsFrontend) {
    if !fe.is_null() {
        drop(Box::from_raw(fe));
    }
}

/// Number of symbols the frontend emits ids for.
///
/// # Safety
/// `fe` must be a live frontend handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn cstts_frontend_vocab_size(fe: *const CsttsFrontend) -> usize {
    fe.as_ref().map_or(0, |f| f.table.len())
}

/// Tokenizes English, pinyin or mixed text into symbol ids. The id count
/// (including the final end-of-utterance id) is written to `len_out` even
/// when `cap` is too small.
///
/// # Safety
/// `ids` must have room for `cap` values; `text` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn cstts_frontend_tokenize(
    fe: *const CsttsFrontend,
    text: *const c_char,
    ids: *mut u32,
    cap: usize,
    len_out: *mut usize,
) -> CsttsStatus {
    guard(|| {
        let fe = ref_arg(fe, "frontend")?;
        let seq = tokenize_mixed(str_arg(text, "text")?, &fe.lexicon, &fe.table)?;
        let v: Vec<u32> = seq.ids.iter().map(|&i| i as u32).collect();
        fill(&v, ids, cap, len_out)
    })
}

/// Loads a TTS checkpoint built for the frontend's symbol table.
///
/// # Safety
/// `path` must be NUL-terminated, `fe` live, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cstts_tts_load(
    path: *const c_char,
    fe: *const CsttsFrontend,
    out: *mut *mut CsttsTtsModel,
) -> CsttsStatus {
    guard(|| {
        let fe = ref_arg(fe, "frontend")?;
        let model = TtsModel::load(Path::new(str_arg(path, "path")?), &fe.table)?;
        put(out, CsttsTtsModel { model }, "out")
    })
}

/// # Safety
/// `m` must come from [`cstts_tts_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cstts_tts_free(m: *mut CsttsTtsModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Synthesizes LPCNet features for `text`. `truncated_out` (may be NULL)
/// receives 1 when decoding hit the frame cap.
///
/// # Safety
/// Handles must be live; `text` NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cstts_tts_synthesize(
    m: *const CsttsTtsModel,
    fe: *const CsttsFrontend,
    text: *const c_char,
    out: *mut *mut CsttsFeatures,
    truncated_out: *mut i32,
) -> CsttsStatus {
    guard(|| {
        let m = ref_arg(m, "model")?;
        let fe = ref_arg(fe, "frontend")?;
        let seq = tokenize_mixed(str_arg(text, "text")?, &fe.lexicon, &fe.table)?;
        let s = synthesize(&m.model, &seq, &SynthesisOptions::default())?;
        if !truncated_out.is_null() {
            *truncated_out = i32::from(s.truncated);
        }
        put(out, CsttsFeatures { track: s.features }, "out")
    })
}

/// LPCNet analysis of 16 kHz mono samples in [-1, 1].
///
/// # Safety
/// `samples` must point to `n` readable floats.
#[no_mangle]
pub unsafe extern "C" fn cstts_features_from_audio(
    samples: *const f32,
    n: usize,
    out: *mut *mut CsttsFeatures,
) -> CsttsStatus {
    guard(|| {
        if samples.is_null() && n > 0 {
            return Err(null("samples"));
        }
        let s: &[f32] = if n == 0 { &[] } else { std::slice::from_raw_parts(samples, n) };
        let clip = AudioClip::new(s.iter().map(|&x| f64::from(x)).collect(), cstts::dsp::audio::SAMPLE_RATE)?;
        let track = extract_lpcnet_features(&clip, &FeatureConfig::default())?;
        put(out, CsttsFeatures { track }, "out")
    })
}

/// Reads a feature file and its `.meta` sidecar.
///
/// # Safety
/// `path` must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cstts_features_load(path: *const c_char, out: *mut *mut CsttsFeatures) -> CsttsStatus {
    guard(|| {
        let track = FeatureTrack::load(str_arg(path, "path")?)?;
        put(out, CsttsFeatures { track }, "out")
    })
}

/// # Safety
/// `f` must be live; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn cstts_features_save(f: *const CsttsFeatures, path: *const c_char) -> CsttsStatus {
    guard(|| Ok(ref_arg(f, "features")?.track.save(str_arg(path, "path")?)?))
}

/// # Safety
/// `f` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn cstts_features_frames(f: *const CsttsFeatures) -> usize {
    f.as_ref().map_or(0, |f| f.track.num_frames())
}

/// # Safety
/// `f` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn cstts_features_dim(f: *const CsttsFeatures) -> usize {
    f.as_ref().map_or(0, |f| f.track.dim())
}

/// Copies the frames row-major into `buf`.
///
/// # Safety
/// `buf` must have room for `cap` floats.
#[no_mangle]
pub unsafe extern "C" fn cstts_features_copy(
    f: *const CsttsFeatures,
    buf: *mut f32,
    cap: usize,
    len_out: *mut usize,
) -> CsttsStatus {
    guard(|| {
        let f = ref_arg(f, "features")?;
        let v: Vec<f32> = f.track.data().iter().map(|&x| x as f32).collect();
        fill(&v, buf, cap, len_out)
    })
}

/// # Safety
/// `f` must come from a features constructor and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cstts_features_free(f: *mut CsttsFeatures) {
    if !f.is_null() {
        drop(Box::from_raw(f));
    }
}

fn render_clip(f: &CsttsFeatures, seed: u64) -> Result<AudioClip, Fail> {
    let spec = VocoderSpec { seed, ..VocoderSpec::default() };
    Ok(render(&f.track, &spec)?)
}

/// Renders features with the DSP vocoder into 16 kHz samples.
///
/// # Safety
/// `buf` must have room for `cap` floats.
#[no_mangle]
pub unsafe extern "C" fn cstts_render(
    f: *const CsttsFeatures,
    seed: u64,
    buf: *mut f32,
    cap: usize,
    len_out: *mut usize,
) -> CsttsStatus {
    guard(|| {
        let clip = render_clip(ref_arg(f, "features")?, seed)?;
        let v: Vec<f32> = clip.samples().iter().map(|&x| x as f32).collect();
        fill(&v, buf, cap, len_out)
    })
}

/// Renders features with the DSP vocoder to a 16-bit WAV file.
///
/// # Safety
/// `f` must be live; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn cstts_render_wav(f: *const CsttsFeatures, seed: u64, path: *const c_char) -> CsttsStatus {
    guard(|| {
        let clip = render_clip(ref_arg(f, "features")?, seed)?;
        Ok(clip.write_wav(str_arg(path, "path")?)?)
    })
}
