use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use engagement_core::annotation::{combine_dimensions, BehavioralLabel, CombinedLabel, EmotionalLabel};
use engagement_core::dataset::FaceGrid;
use engagement_core::models::{build_small_cnn_with, Checkpoint, Network, SmallCnnConfig};
use engagement_core::preprocess::{fit_pixel_stats, normalize_image, prepare_input};
use engagement_ffi::*;
use ndarray::Axis;

fn last_error() -> String {
    let p = eng_last_error();
    assert!(!p.is_null(), "expected an error message");
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn grid(seed: u32) -> Vec<u8> {
    (0..ENG_IMAGE_PIXELS as u32).map(|i| ((i * 37 + seed * 101) % 251) as u8).collect()
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(eng_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn combine_matches_core_for_every_pair() {
    let bs = [
        (ENG_BEHAVIORAL_ON_TASK, BehavioralLabel::OnTask),
        (ENG_BEHAVIORAL_OFF_TASK, BehavioralLabel::OffTask),
        (ENG_BEHAVIORAL_CANT_DECIDE, BehavioralLabel::CantDecide),
    ];
    let es = [
        (ENG_EMOTIONAL_SATISFIED, EmotionalLabel::Satisfied),
        (ENG_EMOTIONAL_CONFUSED, EmotionalLabel::Confused),
        (ENG_EMOTIONAL_BORED, EmotionalLabel::Bored),
        (ENG_EMOTIONAL_CANT_DECIDE, EmotionalLabel::CantDecide),
    ];
    for (bc, b) in bs {
        for (ec, e) in es {
            let mut out = -1;
            assert_eq!(unsafe { eng_combine_dimensions(bc, ec, &mut out) }, EngStatus::Ok);
            let want = match combine_dimensions(b, e) {
                CombinedLabel::Engaged => ENG_COMBINED_ENGAGED,
                CombinedLabel::Disengaged => ENG_COMBINED_DISENGAGED,
                CombinedLabel::Undecidable => ENG_COMBINED_UNDECIDABLE,
            };
            assert_eq!(out, want);
            assert!(eng_last_error().is_null());
        }
    }
    let mut out = 0;
    assert_eq!(unsafe { eng_combine_dimensions(3, 0, &mut out) }, EngStatus::InvalidArgument);
    assert!(last_error().contains("behavioral"));
    assert_eq!(unsafe { eng_combine_dimensions(0, 0, ptr::null_mut()) }, EngStatus::NullPointer);
    // a success clears the previous message
    assert_eq!(unsafe { eng_combine_dimensions(0, 0, &mut out) }, EngStatus::Ok);
    assert!(eng_last_error().is_null());
}

#[test]
fn lr_schedule() {
    let mut a = 0.0;
    for k in 0..=5u64 {
        assert_eq!(unsafe { eng_lr_at_step(0.002, 0.8, 500, 500 * k, &mut a) }, EngStatus::Ok);
        let want = (0..k).fold(0.002, |x, _| x * 0.8);
        assert_eq!(a, want);
    }
    assert_eq!(unsafe { eng_lr_at_step(0.002, 0.8, 0, 10, &mut a) }, EngStatus::InvalidArgument);
    assert_eq!(unsafe { eng_lr_at_step(0.002, 1.5, 500, 10, &mut a) }, EngStatus::InvalidArgument);
    assert_eq!(unsafe { eng_lr_at_step(0.002, 0.8, 500, u64::MAX, &mut a) }, EngStatus::Ok);
    assert_eq!(a, 0.0);
}

#[test]
fn metrics() {
    let (mut acc, mut f) = (0.0, 0.0);
    unsafe {
        assert_eq!(eng_accuracy(269, 229, 150, 40, &mut acc), EngStatus::Ok);
        assert_eq!(eng_f1(269, 150, 40, &mut f), EngStatus::Ok);
    }
    assert!((acc - 498.0 / 688.0).abs() < 1e-15);
    let (p, r) = (269.0 / 419.0, 269.0 / 309.0);
    assert!((f - 2.0 * p * r / (p + r)).abs() < 1e-15);
    assert_eq!(unsafe { eng_accuracy(0, 0, 0, 0, &mut acc) }, EngStatus::Metric);
    assert!(last_error().contains("empty"));

    let scores = [0.1, 0.4, 0.35, 0.8];
    let pos = [0u8, 0, 1, 1];
    let mut auc = 0.0;
    assert_eq!(unsafe { eng_auc(scores.as_ptr(), pos.as_ptr(), 4, &mut auc) }, EngStatus::Ok);
    assert_eq!(auc, 0.75);
    assert_eq!(unsafe { eng_auc(ptr::null(), pos.as_ptr(), 4, &mut auc) }, EngStatus::NullPointer);
    let one_class = [1u8; 4];
    assert_eq!(unsafe { eng_auc(scores.as_ptr(), one_class.as_ptr(), 4, &mut auc) }, EngStatus::Metric);
}

#[test]
fn kappa_textbook_example() {
    // 10 items, 14 raters, 5 categories; kappa is 0.210 to three places
    #[rustfmt::skip]
    let counts: [u32; 50] = [
        0, 0, 0, 0, 14,
        0, 2, 6, 4, 2,
        0, 0, 3, 5, 6,
        0, 3, 9, 2, 0,
        2, 2, 8, 1, 1,
        7, 7, 0, 0, 0,
        3, 2, 6, 3, 0,
        2, 5, 3, 2, 2,
        6, 5, 2, 1, 0,
        0, 2, 2, 3, 7,
    ];
    let mut k = 0.0;
    assert_eq!(unsafe { eng_fleiss_kappa(counts.as_ptr(), 10, 5, &mut k) }, EngStatus::Ok);
    assert!((k - 0.210).abs() < 5e-4, "{k}");
    assert_eq!(unsafe { eng_fleiss_kappa(counts.as_ptr(), 10, 0, &mut k) }, EngStatus::InvalidArgument);
    let uneven = [3u32, 0, 1, 1];
    assert_eq!(unsafe { eng_fleiss_kappa(uneven.as_ptr(), 2, 2, &mut k) }, EngStatus::InvalidArgument);
}

#[test]
fn normalization() {
    let px = grid(3);
    let mut out = vec![0.0; ENG_IMAGE_PIXELS];
    assert_eq!(unsafe { eng_normalize_image(px.as_ptr(), px.len(), out.as_mut_ptr()) }, EngStatus::Ok);
    let want = normalize_image(&FaceGrid::new(px).unwrap()).unwrap();
    assert_eq!(out, want.iter().copied().collect::<Vec<_>>());

    let flat = vec![9u8; ENG_IMAGE_PIXELS];
    assert_eq!(
        unsafe { eng_normalize_image(flat.as_ptr(), flat.len(), out.as_mut_ptr()) },
        EngStatus::Normalization
    );
    let short = [9u8; 100];
    assert_eq!(unsafe { eng_normalize_image(short.as_ptr(), 100, out.as_mut_ptr()) }, EngStatus::Shape);
}

fn save_model(path: &Path, with_stats: bool) -> (Network<f32>, Checkpoint) {
    let cfg = SmallCnnConfig { conv_filters: [4, 8], fc_width: 16, ..Default::default() };
    let net = Network::<f32>::init(build_small_cnn_with(3, &cfg).unwrap(), 11).unwrap();
    let normed: Vec<_> = (0..4).map(|s| normalize_image(&FaceGrid::new(grid(s)).unwrap()).unwrap()).collect();
    let stats = with_stats.then(|| fit_pixel_stats(&normed).unwrap());
    let ckpt = Checkpoint::from_network(&net, stats, 7, None);
    ckpt.save(path).unwrap();
    (net, ckpt)
}

fn load(path: &Path) -> (EngStatus, *mut EngModel) {
    let c = CString::new(path.to_str().unwrap()).unwrap();
    let mut model = ptr::null_mut();
    let status = unsafe { eng_model_load(c.as_ptr(), &mut model) };
    (status, model)
}

#[test]
fn model_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.safetensors");
    let (net, ckpt) = save_model(&path, true);
    let (status, model) = load(&path);
    assert_eq!(status, EngStatus::Ok);
    assert!(!model.is_null());

    let mut classes = 0;
    assert_eq!(unsafe { eng_model_num_classes(model, &mut classes) }, EngStatus::Ok);
    assert_eq!(classes, 3);

    let px = grid(9);
    let mut probs = [0f32; 3];
    let mut class = usize::MAX;
    let status = unsafe { eng_model_predict(model, px.as_ptr(), px.len(), probs.as_mut_ptr(), 3, &mut class) };
    assert_eq!(status, EngStatus::Ok);
    let input = prepare_input(&FaceGrid::new(px.clone()).unwrap(), ckpt.pixel_stats.as_ref().unwrap()).unwrap();
    let want = net.forward(&input.insert_axis(Axis(0)).insert_axis(Axis(0))).unwrap();
    assert_eq!(probs.to_vec(), want.row(0).to_vec());
    let argmax = (0..3).fold(0, |b, i| if probs[i] > probs[b] { i } else { b });
    assert_eq!(class, argmax);

    // class_out is optional; a short probs buffer is not
    let status = unsafe { eng_model_predict(model, px.as_ptr(), px.len(), probs.as_mut_ptr(), 3, ptr::null_mut()) };
    assert_eq!(status, EngStatus::Ok);
    let status = unsafe { eng_model_predict(model, px.as_ptr(), px.len(), probs.as_mut_ptr(), 2, ptr::null_mut()) };
    assert_eq!(status, EngStatus::InvalidArgument);
    let status = unsafe { eng_model_predict(model, px.as_ptr(), 48, probs.as_mut_ptr(), 3, ptr::null_mut()) };
    assert_eq!(status, EngStatus::Shape);

    unsafe {
        eng_model_free(model);
        eng_model_free(ptr::null_mut());
    }
}

#[test]
fn load_errors() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.safetensors");
    let (status, model) = load(&missing);
    assert_eq!(status, EngStatus::Io);
    assert!(model.is_null());
    assert!(last_error().contains("absent.safetensors"));

    let bare = dir.path().join("bare.safetensors");
    save_model(&bare, false);
    let (status, model) = load(&bare);
    assert_eq!(status, EngStatus::Checkpoint);
    assert!(model.is_null());
    assert!(last_error().contains("pixel statistics"));

    let junk = dir.path().join("junk.safetensors");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    assert_eq!(load(&junk).0, EngStatus::Checkpoint);

    let mut out = ptr::null_mut();
    assert_eq!(unsafe { eng_model_load(ptr::null(), &mut out) }, EngStatus::NullPointer);
    let mut classes = 0;
    assert_eq!(unsafe { eng_model_num_classes(ptr::null(), &mut classes) }, EngStatus::NullPointer);
}

#[test]
fn errors_are_per_thread() {
    let mut out = 0;
    assert_eq!(unsafe { eng_combine_dimensions(9, 0, &mut out) }, EngStatus::InvalidArgument);
    std::thread::spawn(|| assert!(eng_last_error().is_null())).join().unwrap();
    assert!(!eng_last_error().is_null());
}
