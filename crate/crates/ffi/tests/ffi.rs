use std::ffi::{c_char, CStr, CString};
use std::ptr;

use orid_core::config::ModelConfig;
use orid_core::corpus::{synth_masks, Vocabulary};
use orid_core::ds_graph::{build_adjacency, DsGraph};
use orid_core::harness::checkpoint;
use orid_core::model::OridModel;
use orid_core::organ::OrganId;
use orid_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(orid_last_error()) }.to_string_lossy().into_owned()
}

fn graph() -> *mut OridDsGraphHandle {
    let mut g = ptr::null_mut();
    assert_eq!(unsafe { orid_ds_graph_default(&mut g) }, OridStatus::Ok);
    assert!(!g.is_null());
    g
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(orid_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn ds_graph_assign_and_adjacency() {
    let g = graph();
    let s = CString::new("the heart size is normal").unwrap();
    let mut organs = 0u32;
    assert_eq!(unsafe { orid_ds_graph_assign(g, s.as_ptr(), &mut organs) }, OridStatus::Ok);
    assert_eq!(organs, 1 << OrganId::Heart.index());

    let mut adj = [0.0f64; 36];
    assert_eq!(unsafe { orid_ds_graph_adjacency(g, adj.as_mut_ptr()) }, OridStatus::Ok);
    let want = build_adjacency(&DsGraph::default());
    assert_eq!(&adj[..], want.as_mat().data());
    for v in 0..6 {
        assert_eq!(adj[v * 6 + v], 1.0);
    }
    unsafe { orid_ds_graph_free(g) };
}

#[test]
fn ds_graph_load_errors() {
    let mut g = ptr::null_mut();
    let missing = CString::new("/nonexistent/graph.txt").unwrap();
    assert_eq!(unsafe { orid_ds_graph_load(missing.as_ptr(), &mut g) }, OridStatus::Io);
    assert!(g.is_null());
    assert!(!last_error().is_empty());
    assert_eq!(unsafe { orid_ds_graph_load(ptr::null(), &mut g) }, OridStatus::NullPointer);
    assert!(last_error().contains("path"));
}

#[test]
fn score_identical_reports() {
    let a = CString::new("the lungs are clear. the heart size is normal.").unwrap();
    let preds = [a.as_ptr()];
    let refs = [a.as_ptr()];
    let mut m = OridMetrics::default();
    assert_eq!(unsafe { orid_score(preds.as_ptr(), refs.as_ptr(), 1, &mut m) }, OridStatus::Ok);
    assert_eq!(m.bleu4, 1.0);
    assert_eq!(m.rouge_l, 1.0);
    assert!(m.meteor > 0.99 && m.meteor < 1.0);
    assert_eq!(last_error(), "");
}

#[test]
fn score_rejects_empty_and_null() {
    let mut m = OridMetrics::default();
    let none: [*const c_char; 0] = [];
    assert_eq!(unsafe { orid_score(none.as_ptr(), none.as_ptr(), 0, &mut m) }, OridStatus::InvalidArgument);
    assert_eq!(unsafe { orid_score(ptr::null(), ptr::null(), 1, &mut m) }, OridStatus::NullPointer);
    let bad = [c"\xff".as_ptr()];
    assert_eq!(unsafe { orid_score(bad.as_ptr(), bad.as_ptr(), 1, &mut m) }, OridStatus::InvalidUtf8);
}

#[test]
fn model_load_rejects_bad_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("junk.ckpt");
    std::fs::write(&path, b"not a checkpoint").unwrap();
    let p = CString::new(path.to_str().unwrap()).unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { orid_model_load(p.as_ptr(), &mut h) }, OridStatus::Checkpoint);
    assert!(h.is_null());
    assert_eq!(unsafe { orid_model_load(p.as_ptr(), ptr::null_mut()) }, OridStatus::NullPointer);
}

#[test]
fn organ_mask_channels() {
    let got: Vec<usize> = (0..5).map(|i| orid_organ_mask_channels(i)).collect();
    let want: Vec<usize> = OrganId::ALL.iter().map(|o| o.mask_channels()).collect();
    assert_eq!(got, want);
    assert_eq!(orid_organ_mask_channels(5), 0);
}

#[test]
fn model_round_trip_generates_like_the_library() {
    let vocab = Vocabulary::from_words(["the", "lungs", "are", "clear", "heart", "is", "normal"].map(String::from)).unwrap();
    let model = OridModel::new(ModelConfig::toy(), vocab, build_adjacency(&DsGraph::default()), 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("toy.ckpt");
    checkpoint::save(&model, &path).unwrap();

    let p = CString::new(path.to_str().unwrap()).unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { orid_model_load(p.as_ptr(), &mut h) }, OridStatus::Ok, "{}", last_error());
    let (mut vocab_size, mut size, mut channels) = (0usize, 0usize, 0usize);
    assert_eq!(unsafe { orid_model_info(h, &mut vocab_size, &mut size, &mut channels) }, OridStatus::Ok);
    assert_eq!((vocab_size, size, channels), (11, 8, 1));

    let image: Vec<f32> = (0..size * size * channels).map(|i| (i % 7) as f32 / 7.0).collect();
    let bundle = synth_masks(size);
    let stacks: Vec<Vec<u8>> = OrganId::ALL
        .iter()
        .map(|&o| {
            let mut v = Vec::new();
            for c in 0..o.mask_channels() {
                for y in 0..size {
                    for x in 0..size {
                        v.push(bundle.get(o, c, y, x));
                    }
                }
            }
            v
        })
        .collect();
    let mask_ptrs: Vec<*const u8> = stacks.iter().map(|s| s.as_ptr()).collect();
    let texts: Vec<CString> = ["lungs are clear", "heart is normal", "", "", "the"].iter().map(|s| CString::new(*s).unwrap()).collect();
    let desc_ptrs: Vec<*const c_char> = texts.iter().map(|s| s.as_ptr()).collect();

    let mut report: *mut c_char = ptr::null_mut();
    let mut alpha = [0.0f64; 5];
    let mut has_alpha = false;
    let status = unsafe {
        orid_model_generate(
            h,
            image.as_ptr(),
            size,
            size,
            channels,
            mask_ptrs.as_ptr(),
            size,
            size,
            desc_ptrs.as_ptr(),
            3,
            &mut report,
            alpha.as_mut_ptr(),
            &mut has_alpha,
        )
    };
    assert_eq!(status, OridStatus::Ok, "{}", last_error());
    let text = unsafe { CStr::from_ptr(report) }.to_str().unwrap().to_string();
    unsafe { orid_string_free(report) };
    assert!(has_alpha);
    assert!(alpha.iter().all(|&a| a > 0.0 && a < 1.0));

    let sample = orid_core::corpus::Sample {
        id: "x".into(),
        image: orid_core::corpus::Image { height: size, width: size, channels, data: image.clone() },
        masks: bundle,
        descriptions: orid_core::organ::PerOrgan::from_fn(|o| texts[o.index()].to_str().unwrap().to_string()),
        report: String::new(),
        split: orid_core::corpus::Split::Test,
    };
    let direct = model.generate(&model.prepare(&sample).unwrap(), 3).unwrap();
    assert_eq!(text, model.detokenize(&direct.hypothesis.tokens));
    assert_eq!(Some(alpha), direct.alpha);

    let status = unsafe {
        orid_model_generate(
            h,
            image.as_ptr(),
            size - 1,
            size,
            channels,
            mask_ptrs.as_ptr(),
            size,
            size,
            desc_ptrs.as_ptr(),
            3,
            &mut report,
            ptr::null_mut(),
            ptr::null_mut(),
        )
    };
    assert_eq!(status, OridStatus::Shape, "{}", last_error());
    assert!(report.is_null());
    unsafe { orid_model_free(h) };
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/orid.h");
    let text = std::fs::read_to_string(header).unwrap();
    for f in ["orid_model_load", "orid_model_generate", "orid_ds_graph_assign", "orid_score", "orid_last_error"] {
        assert!(text.contains(f), "{f} missing from header");
    }
    let Ok(out) = std::process::Command::new("cc").args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c", header]).output() else {
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
