use std::ffi::{CStr, CString};
use std::ptr;

use phreservoir_ffi::*;

fn preset(name: &str) -> *mut PhrModel {
    let name = CString::new(name).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { phr_model_preset(name.as_ptr(), &mut m) }, PhrStatus::Ok);
    assert!(!m.is_null());
    m
}

fn last_error() -> String {
    let p = phr_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn moran_from_preset_matches_reference_layout() {
    let m = preset("two-regime-poisson");
    let mut chain = ptr::null_mut();
    unsafe {
        assert_eq!(phr_moran_from_model(m, 5.0, 20.0, 0, 1.0, &mut chain), PhrStatus::Ok);
        let mut s = 0;
        assert_eq!(phr_moran_states(chain, &mut s), PhrStatus::Ok);
        assert_eq!(s, 5);
        let mut buf = vec![0.0; 25];
        assert_eq!(phr_moran_matrix(chain, buf.as_mut_ptr(), 25), PhrStatus::Ok);
        assert!((buf[0] - 0.881).abs() < 5e-3);
        assert!((buf[5] - 0.693).abs() < 5e-3);
        assert_eq!(
            phr_moran_matrix(chain, buf.as_mut_ptr(), 24),
            PhrStatus::InvalidArgument
        );

        let (mut r, mut a, mut t) = (0.0, 0.0, 0.0);
        assert_eq!(phr_moran_reliability(chain, 2, 3, &mut r), PhrStatus::Ok);
        assert_eq!(phr_moran_availability(chain, 2, 3, &mut a), PhrStatus::Ok);
        assert_eq!(phr_moran_mttf(chain, 2, &mut t), PhrStatus::Ok);
        assert!(a >= r && r > 0.0 && t > 1.0);

        assert_eq!(phr_moran_reliability(chain, 0, 1, &mut r), PhrStatus::InvalidArgument);
        assert!(last_error().contains("empty"));
        phr_moran_free(chain);
        phr_model_free(m);
    }
}

#[test]
fn json_round_trip_and_loglik() {
    let m = preset("three-regime-exponential");
    unsafe {
        let mut json = ptr::null_mut();
        assert_eq!(phr_model_to_json(m, &mut json), PhrStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(phr_model_from_json(json, &mut back), PhrStatus::Ok);
        let obs = [0.2, 3.5, 20.0, 11.0, 0.4];
        let (mut a, mut b) = (0.0, 0.0);
        assert_eq!(phr_model_loglik(m, obs.as_ptr(), obs.len(), &mut a), PhrStatus::Ok);
        assert_eq!(phr_model_loglik(back, obs.as_ptr(), obs.len(), &mut b), PhrStatus::Ok);
        assert_eq!(a, b);
        let (mut d, mut s) = (0, 0);
        assert_eq!(phr_model_dimensions(back, &mut d, &mut s), PhrStatus::Ok);
        assert_eq!((d, s), (3, 4));
        phr_string_free(json);
        phr_model_free(back);
        phr_model_free(m);
    }
}

#[test]
fn errors_map_to_status_codes() {
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(phr_model_preset(ptr::null(), &mut m), PhrStatus::NullPointer);
        assert!(m.is_null());
        let bad = CString::new("{not json").unwrap();
        assert_eq!(phr_model_from_json(bad.as_ptr(), &mut m), PhrStatus::DataError);
        let unknown = CString::new("nope").unwrap();
        assert_eq!(phr_model_preset(unknown.as_ptr(), &mut m), PhrStatus::InvalidArgument);

        let model = preset("two-regime-poisson");
        let mut ll = 0.0;
        let obs = [0.0, 2.5];
        // 2.5 has zero mass under both regimes
        assert_eq!(
            phr_model_loglik(model, obs.as_ptr(), 2, &mut ll),
            PhrStatus::NumericalError
        );
        assert!(last_error().contains("step 1"));
        let mut fitted = ptr::null_mut();
        let fams = CString::new("degenerate:0,poisson").unwrap();
        let layout = [1usize, 1];
        assert_eq!(
            phr_fit(obs.as_ptr(), 1, layout.as_ptr(), 2, fams.as_ptr(), 2, 1, &mut fitted, &mut ll),
            PhrStatus::InvalidArgument
        );
        assert!(fitted.is_null());
        let fams = CString::new("gamma").unwrap();
        assert_eq!(
            phr_fit(obs.as_ptr(), 2, layout.as_ptr(), 2, fams.as_ptr(), 2, 1, &mut fitted, &mut ll),
            PhrStatus::InvalidArgument
        );
        phr_model_free(model);
        phr_model_free(ptr::null_mut());
        phr_string_free(ptr::null_mut());
    }
}

#[test]
fn fit_simulate_forecast() {
    let m = preset("two-regime-poisson");
    unsafe {
        let mut signals = vec![0.0; 120];
        let mut regimes = vec![0usize; 120];
        assert_eq!(
            phr_simulate_path(m, 120, 11, signals.as_mut_ptr(), regimes.as_mut_ptr()),
            PhrStatus::Ok
        );
        assert!(regimes.iter().zip(&signals).all(|(r, y)| *r != 0 || *y == 0.0));

        let fams = CString::new("degenerate:0,poisson").unwrap();
        let layout = [2usize, 2];
        let mut fitted = ptr::null_mut();
        let mut ll = 0.0;
        assert_eq!(
            phr_fit(signals.as_ptr(), 120, layout.as_ptr(), 2, fams.as_ptr(), 3, 5, &mut fitted, &mut ll),
            PhrStatus::Ok,
            "{}",
            last_error()
        );
        assert!(ll.is_finite());

        let levels = [0.05, 0.5, 0.95];
        let mut mean = vec![0.0; 5];
        let mut q = vec![0.0; 15];
        assert_eq!(
            phr_forecast(fitted, 5, 200, 3, levels.as_ptr(), 3, mean.as_mut_ptr(), q.as_mut_ptr()),
            PhrStatus::Ok
        );
        for h in 0..5 {
            assert!(q[h * 3] <= q[h * 3 + 1] && q[h * 3 + 1] <= q[h * 3 + 2]);
        }
        phr_model_free(fitted);
        phr_model_free(m);
    }
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/phreservoir.h"))
        .expect("generated header");
    for name in [
        "phr_last_error",
        "phr_model_preset",
        "phr_model_from_json",
        "phr_model_to_json",
        "phr_model_free",
        "phr_fit",
        "phr_moran_from_model",
        "phr_moran_matrix",
        "phr_moran_mttf",
        "phr_forecast",
        "phr_simulate_path",
        "PHR_STATUS_OK",
        "typedef struct PhrModel PhrModel",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

#[test]
fn header_compiles_as_c_and_cxx() {
    let dir = env!("CARGO_MANIFEST_DIR");
    let example = format!("{dir}/examples/smoke.c");
    let include = format!("-I{dir}/include");
    for (compiler, lang) in [("cc", "c"), ("c++", "c++")] {
        let status = std::process::Command::new(compiler)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang, &include, &example])
            .status();
        match status {
            Ok(s) => assert!(s.success(), "{compiler} rejected the header"),
            Err(e) => eprintln!("{compiler} unavailable ({e}); header not compiled"),
        }
    }
}
