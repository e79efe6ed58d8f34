use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use lorashift::analysis::{logit_remainder, margin_report};
use lorashift::linalg::SeededRng;
use lorashift::lora::{random_lora, LoraSet};
use lorashift::model::{build_model, forward, ModelConfig, SiteId, Slot};
use lorashift_ffi::*;

const TOKENS: [usize; 3] = [3, 1, 4];

fn last_error() -> String {
    unsafe { CStr::from_ptr(ls_last_error()) }
        .to_string_lossy()
        .into_owned()
}

struct Handles {
    model: *mut LsModel,
    set: *mut LsLoraSet,
}

impl Handles {
    fn reference(epsilon: f64) -> Self {
        let mut cfg = std::mem::MaybeUninit::<LsModelConfig>::uninit();
        let mut model = ptr::null_mut();
        let mut set = ptr::null_mut();
        unsafe {
            assert_eq!(ls_model_config_reference(cfg.as_mut_ptr()), LsStatus::Ok);
            assert_eq!(ls_model_build(cfg.as_ptr(), &mut model), LsStatus::Ok);
            assert_eq!(ls_lora_set_new(epsilon, &mut set), LsStatus::Ok);
            let st = ls_lora_set_add_random(set, model, 2, LsSlot::MlpDown, 2, 1.0, 11, 0.2);
            assert_eq!(st, LsStatus::Ok);
        }
        Handles { model, set }
    }
}

impl Drop for Handles {
    fn drop(&mut self) {
        unsafe {
            ls_lora_set_free(self.set);
            ls_model_free(self.model);
        }
    }
}

fn core_set(eps: f64) -> (lorashift::model::TransformerModel, LoraSet) {
    let m = build_model(&ModelConfig::reference()).unwrap();
    let mut rng = SeededRng::new(11);
    let a = random_lora(&mut rng, &m, SiteId::new(2, Slot::MlpDown), 2, 1.0, 0.2).unwrap();
    let set = LoraSet::from_adapters([a]).unwrap().with_scale(eps);
    (m, set)
}

#[test]
fn results_match_core_bitwise() {
    let h = Handles::reference(0.01);
    let (m, set) = core_set(0.01);

    let mut logits = vec![0.0; 50];
    assert_eq!(
        unsafe { ls_forward_logits(h.model, TOKENS.as_ptr(), 3, logits.as_mut_ptr(), 50) },
        LsStatus::Ok
    );
    assert_eq!(logits, forward(&m, &TOKENS).unwrap().logits.as_slice());

    let mut digest = [0u8; 32];
    assert_eq!(unsafe { ls_model_digest(h.model, digest.as_mut_ptr()) }, LsStatus::Ok);
    assert_eq!(digest, m.digest());

    let mut shift = LsShiftSummary::default();
    assert_eq!(
        unsafe { ls_logit_remainder(h.model, h.set, TOKENS.as_ptr(), 3, 5, &mut shift) },
        LsStatus::Ok
    );
    let want = logit_remainder(&m, &set, &TOKENS, 5).unwrap();
    assert_eq!(shift.exact_shift, want.exact_shift);
    assert_eq!(shift.first_order_total, want.first_order_total);
    assert_eq!(shift.remainder, want.remainder);
    assert_eq!(shift.delta_norm, want.delta_norm);

    let mut site = 0.0;
    let st = unsafe { ls_site_first_order(h.model, h.set, TOKENS.as_ptr(), 3, 2, LsSlot::MlpDown, 5, &mut site) };
    assert_eq!(st, LsStatus::Ok);
    assert_eq!(site, want.first_order_total);

    let mut margin = LsMarginSummary::default();
    assert_eq!(
        unsafe { ls_margin(h.model, h.set, TOKENS.as_ptr(), 3, 10, 20, &mut margin) },
        LsStatus::Ok
    );
    let want = margin_report(&m, &set, &TOKENS, 10, 20).unwrap();
    assert_eq!((margin.m0, margin.m), (want.m0, want.m));
    assert!(margin.identity_consistent);
}

#[test]
fn sweep_reports_second_order_remainder() {
    let h = Handles::reference(1.0);
    let grid = [1e-1, 3e-2, 1e-2, 3e-3, 1e-3, 3e-4];
    let mut out = LsSweepSummary::default();
    let mut rem = [0.0; 6];
    let st = unsafe {
        ls_remainder_sweep(
            h.model,
            h.set,
            TOKENS.as_ptr(),
            3,
            5,
            grid.as_ptr(),
            6,
            &mut out,
            rem.as_mut_ptr(),
        )
    };
    assert_eq!(st, LsStatus::Ok);
    assert!(out.has_slope && (1.8..=2.2).contains(&out.fitted_slope));
    assert!(out.tail_decreasing && !out.linear_exact);
    assert!(rem.iter().all(|r| r.is_finite() && *r != 0.0));

    let bad = [1e-3, 1e-2];
    let st = unsafe {
        ls_remainder_sweep(
            h.model,
            h.set,
            TOKENS.as_ptr(),
            3,
            5,
            bad.as_ptr(),
            2,
            &mut out,
            ptr::null_mut(),
        )
    };
    assert_eq!(st, LsStatus::InvalidInput);
    assert!(!last_error().is_empty());
}

#[test]
fn errors_map_to_status_codes() {
    let h = Handles::reference(1.0);
    let mut logits = [0.0; 50];
    unsafe {
        assert_eq!(
            ls_forward_logits(ptr::null(), TOKENS.as_ptr(), 3, logits.as_mut_ptr(), 50),
            LsStatus::NullPointer
        );
        assert_eq!(
            ls_forward_logits(h.model, TOKENS.as_ptr(), 3, logits.as_mut_ptr(), 49),
            LsStatus::Dimension
        );
        let bad = [3usize, 99];
        assert_eq!(
            ls_forward_logits(h.model, bad.as_ptr(), 2, logits.as_mut_ptr(), 50),
            LsStatus::InvalidInput
        );
        assert!(last_error().contains("99"), "{}", last_error());
        let st = ls_lora_set_add_random(h.set, h.model, 2, LsSlot::MlpDown, 2, 1.0, 1, 0.2);
        assert_eq!(st, LsStatus::Site);
        let st = ls_lora_set_add_random(h.set, h.model, 9, LsSlot::AttnOut, 2, 1.0, 1, 0.2);
        assert_eq!(st, LsStatus::Site);
        let mut m = LsMarginSummary::default();
        assert_eq!(
            ls_margin(h.model, h.set, TOKENS.as_ptr(), 3, 4, 4, &mut m),
            LsStatus::InvalidInput
        );
        assert_eq!(ls_lora_set_set_epsilon(h.set, f64::NAN), LsStatus::InvalidInput);
        let mut missing = ptr::null_mut();
        let p = CString::new("/nonexistent/model.toml").unwrap();
        assert_ne!(ls_model_load(p.as_ptr(), &mut missing), LsStatus::Ok);
        assert!(missing.is_null());
        ls_model_free(ptr::null_mut());
        ls_lora_set_free(ptr::null_mut());
    }
}

#[test]
fn explicit_adapter_and_file_round_trip() {
    let h = Handles::reference(0.5);
    let dir = tempfile::tempdir().unwrap();
    let mp = CString::new(dir.path().join("m.toml").to_str().unwrap()).unwrap();
    let ap = CString::new(dir.path().join("a.toml").to_str().unwrap()).unwrap();
    unsafe {
        let b = vec![0.1; 32 * 2];
        let a = vec![-0.2; 2 * 32];
        assert_eq!(
            ls_lora_set_add(h.set, h.model, 0, LsSlot::AttnOut, 2, 1.0, b.as_ptr(), a.as_ptr()),
            LsStatus::Ok
        );
        assert_eq!(ls_lora_set_len(h.set), 2);
        assert_eq!(ls_model_save(h.model, mp.as_ptr()), LsStatus::Ok);
        assert_eq!(ls_lora_set_save(h.set, ap.as_ptr()), LsStatus::Ok);

        let mut model = ptr::null_mut();
        let mut set = ptr::null_mut();
        assert_eq!(ls_model_load(mp.as_ptr(), &mut model), LsStatus::Ok);
        assert_eq!(ls_lora_set_load(ap.as_ptr(), &mut set), LsStatus::Ok);
        let (mut x, mut y) = (LsShiftSummary::default(), LsShiftSummary::default());
        assert_eq!(
            ls_logit_remainder(h.model, h.set, TOKENS.as_ptr(), 3, 7, &mut x),
            LsStatus::Ok
        );
        assert_eq!(
            ls_logit_remainder(model, set, TOKENS.as_ptr(), 3, 7, &mut y),
            LsStatus::Ok
        );
        assert_eq!(x.exact_shift.to_bits(), y.exact_shift.to_bits());
        assert_eq!(x.epsilon, 0.5);
        assert_eq!(ls_model_vocab(model), 50);
        ls_lora_set_free(set);
        ls_model_free(model);
    }
}

/// Compiles `tests/smoke.c` against the generated header and the static
/// library when a C compiler is on the path.
#[test]
fn c_smoke_program() {
    let crate_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let profile_dir = std::env::current_exe()
        .unwrap()
        .parent()
        .unwrap()
        .parent()
        .unwrap()
        .to_path_buf();
    let lib = profile_dir.join("liblorashift_ffi.a");
    if Command::new("cc").arg("--version").output().is_err() || !lib.exists() {
        eprintln!("skipping C smoke test: no cc or {} missing", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let out = Command::new("cc")
        .arg(crate_dir.join("tests/smoke.c"))
        .arg("-I")
        .arg(crate_dir.join("include"))
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&exe)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&exe).output().unwrap();
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert!(run.status.success(), "{stdout}{}", String::from_utf8_lossy(&run.stderr));
    assert!(stdout.contains("identity 1"), "{stdout}");
}
