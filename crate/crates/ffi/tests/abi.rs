use std::ffi::{c_char, CString};
use std::ptr;

use dsal_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0u8; 256];
    let n = unsafe { dsal_last_error_message(buf.as_mut_ptr() as *mut c_char, buf.len()) };
    buf.truncate(n.min(255));
    String::from_utf8(buf).unwrap()
}

fn disk(size: usize) -> (Vec<f64>, Vec<u8>) {
    let c = size as f64 / 2.0;
    let mask: Vec<u8> = (0..size * size)
        .map(|i| {
            let (y, x) = ((i / size) as f64, (i % size) as f64);
            u8::from((y - c).powi(2) + (x - c).powi(2) < (size as f64 / 4.0).powi(2))
        })
        .collect();
    let image = mask.iter().map(|&m| 0.2 + 0.6 * m as f64).collect();
    (image, mask)
}

#[test]
fn segmenter_lifecycle() {
    let (image, mask) = disk(16);
    let mut model: *mut DsalSegmenter = ptr::null_mut();
    unsafe {
        assert_eq!(dsal_segmenter_new(7, &mut model), DsalStatus::Ok);
        assert!(!model.is_null());
        let status =
            dsal_segmenter_train(model, image.as_ptr(), mask.as_ptr(), 1, 16, 16, 2, 1e-3, 1);
        assert_eq!(status, DsalStatus::Ok);

        let (mut l, mut m, mut f) = (vec![0.0; 256], vec![0.0; 256], vec![0.0; 256]);
        let status = dsal_segmenter_predict(
            model,
            image.as_ptr(),
            16,
            16,
            l.as_mut_ptr(),
            m.as_mut_ptr(),
            f.as_mut_ptr(),
        );
        assert_eq!(status, DsalStatus::Ok);
        assert!(f.iter().all(|p| (0.0..=1.0).contains(p)));

        let mut scores = DsalScores::default();
        assert_eq!(
            dsal_score(l.as_ptr(), m.as_ptr(), f.as_ptr(), 16, 16, &mut scores),
            DsalStatus::Ok
        );
        assert!((scores.uncertainty + scores.mean_dsc - 1.0).abs() < 1e-12);
        assert!((0.0..=0.5).contains(&scores.confidence));

        let dir = tempfile::tempdir().unwrap();
        let path = CString::new(dir.path().join("m.ckpt").to_str().unwrap()).unwrap();
        assert_eq!(dsal_segmenter_save(model, path.as_ptr()), DsalStatus::Ok);
        let mut loaded: *mut DsalSegmenter = ptr::null_mut();
        assert_eq!(
            dsal_segmenter_load(path.as_ptr(), &mut loaded),
            DsalStatus::Ok
        );
        let mut f2 = vec![0.0; 256];
        let status = dsal_segmenter_predict(
            loaded,
            image.as_ptr(),
            16,
            16,
            ptr::null_mut(),
            ptr::null_mut(),
            f2.as_mut_ptr(),
        );
        assert_eq!(status, DsalStatus::Ok);
        assert_eq!(f, f2);

        dsal_segmenter_free(model);
        dsal_segmenter_free(loaded);
        dsal_segmenter_free(ptr::null_mut());
    }
}

#[test]
fn crf_and_ensemble() {
    let (image, mask) = disk(12);
    let prob: Vec<f64> = mask
        .iter()
        .map(|&m| if m == 1 { 0.8 } else { 0.2 })
        .collect();
    let mut out = vec![0u8; 144];
    unsafe {
        let mut params = dsal_crf_params_default();
        params.gaussian_compat = 0.0;
        params.bilateral_compat = 0.0;
        let status = dsal_crf_infer(
            &params,
            image.as_ptr(),
            prob.as_ptr(),
            12,
            12,
            out.as_mut_ptr(),
        );
        assert_eq!(status, DsalStatus::Ok);
        assert_eq!(out, mask);

        let center = dsal_crf_params_default();
        let mut ens: *mut DsalEnsemble = ptr::null_mut();
        assert_eq!(
            dsal_ensemble_new(&center, 5, 0.05, 3, &mut ens),
            DsalStatus::Ok
        );
        assert_eq!(dsal_ensemble_size(ens), 5);
        let status =
            dsal_ensemble_refine(ens, image.as_ptr(), prob.as_ptr(), 12, 12, out.as_mut_ptr());
        assert_eq!(status, DsalStatus::Ok);
        let mut d = 0.0;
        assert_eq!(
            dsal_dice(out.as_ptr(), mask.as_ptr(), 144, &mut d),
            DsalStatus::Ok
        );
        assert!(d > 0.9, "dice {d}");
        dsal_ensemble_free(ens);

        let mut even: *mut DsalEnsemble = ptr::null_mut();
        assert_eq!(
            dsal_ensemble_new(&center, 4, 0.05, 3, &mut even),
            DsalStatus::InvalidArgument
        );
        assert!(even.is_null());
        assert!(!last_error().is_empty());
    }
}

#[test]
fn presets_round_trip() {
    let isic = dsal_crf_params_isic();
    assert_eq!(isic.steps, 2);
    assert!((isic.gaussian_sdims - 29.93).abs() < 1e-12);
    let rsna = dsal_crf_params_rsna();
    assert_eq!(rsna.steps, 1);
}

#[test]
fn errors_are_reported() {
    unsafe {
        let mut out = 0.0;
        assert_eq!(
            dsal_dice(ptr::null(), ptr::null(), 4, &mut out),
            DsalStatus::NullPointer
        );
        assert!(last_error().contains("null"));

        let a = [0u8, 2, 1];
        assert_eq!(
            dsal_dice(a.as_ptr(), a.as_ptr(), 3, &mut out),
            DsalStatus::InvalidArgument
        );

        let missing = CString::new("/nonexistent/dir/m.ckpt").unwrap();
        let mut model: *mut DsalSegmenter = ptr::null_mut();
        assert_eq!(
            dsal_segmenter_load(missing.as_ptr(), &mut model),
            DsalStatus::Io
        );

        let p = [0.5; 4];
        let bad = [0.5, 1.5, 0.5, 0.5];
        let mut s = DsalScores::default();
        assert_eq!(
            dsal_score(p.as_ptr(), p.as_ptr(), bad.as_ptr(), 2, 2, &mut s),
            DsalStatus::InvalidArgument
        );
        assert_eq!(
            dsal_score(p.as_ptr(), p.as_ptr(), p.as_ptr(), 0, 2, &mut s),
            DsalStatus::InvalidArgument
        );

        let mut small = [0 as c_char; 4];
        let full = dsal_last_error_message(small.as_mut_ptr(), small.len());
        assert!(full > 3);
        assert_eq!(small[3], 0);
    }
}

#[test]
fn header_declares_every_entry_point() {
    let header =
        std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/dsal.h")).unwrap();
    for name in [
        "dsal_last_error_message",
        "dsal_crf_params_default",
        "dsal_segmenter_new",
        "dsal_segmenter_load",
        "dsal_segmenter_save",
        "dsal_segmenter_free",
        "dsal_segmenter_predict",
        "dsal_segmenter_train",
        "dsal_score",
        "dsal_dice",
        "dsal_crf_infer",
        "dsal_ensemble_new",
        "dsal_ensemble_load",
        "dsal_ensemble_refine",
        "dsal_ensemble_free",
        "typedef struct DsalSegmenter DsalSegmenter",
        "DSAL_STATUS_NULL_POINTER = 1",
    ] {
        assert!(header.contains(name), "missing {name}");
    }
}
