//! C ABI over `orid-core`.
//!
//! Every function returns an [`OridStatus`]; on failure the thread's last
//! error message is available from [`orid_last_error`]. Handles are opaque
//! and must be released with their matching `_free` function. Strings
//! returned through out-pointers are owned by the caller and released with
//! [`orid_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use orid_core::corpus::{Image, Sample, Split};
use orid_core::ds_graph::{assign_sentence_to_organ, build_adjacency, load_ds_graph, DsGraph};
use orid_core::harness::checkpoint;
use orid_core::metrics::score_reports;
use orid_core::model::OridModel;
use orid_core::organ::{OrganId, PerOrgan};
use orid_core::vision::MaskBundle;
use orid_core::OridError;

/// Result codes shared by every entry point.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OridStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Checkpoint = 4,
    InvalidArgument = 5,
    Shape = 6,
    Parse = 7,
    Panic = 8,
    Other = 9,
}

/// Number of organs; arrays indexed by organ use the order lung, heart, bone, pleural, mediastinum.
pub const ORID_ORGAN_COUNT: usize = 5;

/// A loaded model.
pub struct OridModelHandle {
    model: OridModel,
}

/// A disease-symptom graph.
pub struct OridDsGraphHandle {
    graph: DsGraph,
}

/// Corpus metrics; field order matches the printed metric table.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct OridMetrics {
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    pub meteor: f64,
    pub rouge_l: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(OridStatus, String);

impl From<OridError> for Failure {
    fn from(e: OridError) -> Self {
        let status = match &e {
            OridError::Io(_) => OridStatus::Io,
            OridError::Checkpoint(_) => OridStatus::Checkpoint,
            OridError::Shape(_) | OridError::Resolution { .. } | OridError::MaskChannels { .. } => OridStatus::Shape,
            OridError::Parse { .. } | OridError::DsGraph(_) | OridError::Json(_) => OridStatus::Parse,
            OridError::InvalidArgument(_) | OridError::TokenOutOfRange { .. } | OridError::EmptyCorpus => {
                OridStatus::InvalidArgument
            }
            _ => OridStatus::Other,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: OridStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> OridStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            OridStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&msg);
            OridStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(OridStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(OridStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| fail(OridStatus::NullPointer, format!("{name} is null")))
}

fn out_arg<T>(p: *mut T, name: &str) -> Result<*mut T, Failure> {
    if p.is_null() {
        Err(fail(OridStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(p)
    }
}

fn c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).unwrap_or_default().into_raw()
}

/// Message for the last failing call on this thread; empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn orid_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn orid_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn orid_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn orid_model_load(path: *const c_char, out: *mut *mut OridModelHandle) -> OridStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let path = str_arg(path, "path")?;
        let model = checkpoint::load(path)?;
        *out = Box::into_raw(Box::new(OridModelHandle { model }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`orid_model_load`] and not be freed twice. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn orid_model_free(model: *mut OridModelHandle) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Vocabulary size, image side and channel count the model expects.
///
/// # Safety
/// Pointers must be valid; any out-pointer may be null to skip it.
#[no_mangle]
pub unsafe extern "C" fn orid_model_info(
    model: *const OridModelHandle,
    vocab_size: *mut usize,
    image_size: *mut usize,
    image_channels: *mut usize,
) -> OridStatus {
    guard(|| {
        let m = &ref_arg(model, "model")?.model;
        if let Some(v) = vocab_size.as_mut() {
            *v = m.vocab.len();
        }
        if let Some(v) = image_size.as_mut() {
            *v = m.config.vision.image_size;
        }
        if let Some(v) = image_channels.as_mut() {
            *v = m.config.vision.image_channels;
        }
        Ok(())
    })
}

/// Mask channel count of an organ (index in canonical order), or 0 when out of range.
#[no_mangle]
pub extern "C" fn orid_organ_mask_channels(organ: usize) -> usize {
    OrganId::from_index(organ).map_or(0, OrganId::mask_channels)
}

/// Generates a report for one image.
///
/// `image` is `height * width * channels` floats in `[0, 1]`, row-major HxWxC.
/// `masks` holds five pointers (one per organ) to binary stacks of
/// `orid_organ_mask_channels(o) * mask_height * mask_width` bytes, CxHxW.
/// `descriptions` holds five NUL-terminated organ descriptions.
/// On success `*report` receives a string to release with [`orid_string_free`].
/// When `alpha` is non-null it receives five importance coefficients and
/// `*has_alpha` is set to whether the model computed them.
///
/// # Safety
/// Buffers must be valid for the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn orid_model_generate(
    model: *const OridModelHandle,
    image: *const f32,
    height: usize,
    width: usize,
    channels: usize,
    masks: *const *const u8,
    mask_height: usize,
    mask_width: usize,
    descriptions: *const *const c_char,
    beam_width: usize,
    report: *mut *mut c_char,
    alpha: *mut f64,
    has_alpha: *mut bool,
) -> OridStatus {
    guard(|| {
        let m = &ref_arg(model, "model")?.model;
        let report = out_arg(report, "report")?;
        *report = ptr::null_mut();
        if image.is_null() || masks.is_null() || descriptions.is_null() {
            return Err(fail(OridStatus::NullPointer, "image, masks and descriptions are required"));
        }
        if beam_width == 0 {
            return Err(fail(OridStatus::InvalidArgument, "beam_width must be positive"));
        }
        let n = height * width * channels;
        let pixels = std::slice::from_raw_parts(image, n).to_vec();
        let mask_ptrs = std::slice::from_raw_parts(masks, ORID_ORGAN_COUNT);
        let plane = mask_height * mask_width;
        let stacks = PerOrgan::try_from_fn(|o| {
            let p = mask_ptrs[o.index()];
            if p.is_null() {
                return Err(fail(OridStatus::NullPointer, format!("{o} mask is null")));
            }
            Ok(std::slice::from_raw_parts(p, o.mask_channels() * plane).to_vec())
        })?;
        let desc_ptrs = std::slice::from_raw_parts(descriptions, ORID_ORGAN_COUNT);
        let descs = PerOrgan::try_from_fn(|o| str_arg(desc_ptrs[o.index()], "description").map(str::to_string))?;
        let sample = Sample {
            id: "ffi".into(),
            image: Image { height, width, channels, data: pixels },
            masks: MaskBundle::new(mask_height, mask_width, stacks)?,
            descriptions: descs,
            report: String::new(),
            split: Split::Test,
        };
        let input = m.prepare(&sample)?;
        let gen = m.generate(&input, beam_width)?;
        if let Some(flag) = has_alpha.as_mut() {
            *flag = gen.alpha.is_some();
        }
        if !alpha.is_null() {
            let a = gen.alpha.unwrap_or([0.0; ORID_ORGAN_COUNT]);
            std::slice::from_raw_parts_mut(alpha, ORID_ORGAN_COUNT).copy_from_slice(&a);
        }
        *report = c_string(m.detokenize(&gen.hypothesis.tokens));
        Ok(())
    })
}

/// The bundled disease-symptom graph.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn orid_ds_graph_default(out: *mut *mut OridDsGraphHandle) -> OridStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = Box::into_raw(Box::new(OridDsGraphHandle { graph: DsGraph::default() }));
        Ok(())
    })
}

/// Parses a disease-symptom graph file.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn orid_ds_graph_load(path: *const c_char, out: *mut *mut OridDsGraphHandle) -> OridStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let graph = load_ds_graph(str_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(OridDsGraphHandle { graph }));
        Ok(())
    })
}

/// # Safety
/// `graph` must come from this library and not be freed twice. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn orid_ds_graph_free(graph: *mut OridDsGraphHandle) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// Organs a normalized sentence refers to, as a bitmask (bit `i` = organ `i`).
///
/// # Safety
/// `graph` and `sentence` must be valid; `organs` must be writable.
#[no_mangle]
pub unsafe extern "C" fn orid_ds_graph_assign(
    graph: *const OridDsGraphHandle,
    sentence: *const c_char,
    organs: *mut u32,
) -> OridStatus {
    guard(|| {
        let g = &ref_arg(graph, "graph")?.graph;
        let organs = out_arg(organs, "organs")?;
        let s = str_arg(sentence, "sentence")?;
        *organs = assign_sentence_to_organ(s, g).iter().fold(0u32, |acc, o| acc | (1 << o.index()));
        Ok(())
    })
}

/// Writes the 6x6 row-major adjacency (five organs, then the total node).
///
/// # Safety
/// `out` must hold 36 doubles.
#[no_mangle]
pub unsafe extern "C" fn orid_ds_graph_adjacency(graph: *const OridDsGraphHandle, out: *mut f64) -> OridStatus {
    guard(|| {
        let g = &ref_arg(graph, "graph")?.graph;
        let out = out_arg(out, "out")?;
        let adj = build_adjacency(g);
        std::slice::from_raw_parts_mut(out, 36).copy_from_slice(adj.as_mat().data());
        Ok(())
    })
}

/// Scores `n` generated reports against references.
///
/// # Safety
/// `predictions` and `references` must each hold `n` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn orid_score(
    predictions: *const *const c_char,
    references: *const *const c_char,
    n: usize,
    out: *mut OridMetrics,
) -> OridStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        if predictions.is_null() || references.is_null() {
            return Err(fail(OridStatus::NullPointer, "predictions and references are required"));
        }
        let read = |arr: *const *const c_char| -> Result<Vec<&str>, Failure> {
            std::slice::from_raw_parts(arr, n).iter().map(|&p| str_arg(p, "report")).collect()
        };
        let t = score_reports(&read(predictions)?, &read(references)?)?;
        *out = OridMetrics {
            bleu1: t.bleu1,
            bleu2: t.bleu2,
            bleu3: t.bleu3,
            bleu4: t.bleu4,
            meteor: t.meteor,
            rouge_l: t.rouge_l,
            precision: t.precision,
            recall: t.recall,
            f1: t.f1,
        };
        Ok(())
    })
}
