//! C ABI for `lorashift`.
//!
//! Models and adapter sets cross the boundary as opaque handles that the
//! caller owns and releases with the matching `*_free` function. Every
//! fallible call returns an [`LsStatus`]; on failure the message is available
//! from [`ls_last_error`] on the same thread until the next failing call.
//! Panics are caught and reported as [`LsStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use lorashift::analysis::{first_order_single, flip_criterion, logit_remainder, margin_report, remainder_sweep};
use lorashift::io::{adapters_to_string, load_adapters, load_model, model_to_string, write_atomic};
use lorashift::linalg::{Matrix, SeededRng};
use lorashift::lora::{random_lora, LoraAdapter, LoraSet};
use lorashift::model::{build_model, forward, Activation, ModelConfig, NormKind, SiteId, Slot, TransformerModel};
use lorashift::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Dimension = 3,
    Degenerate = 4,
    Config = 5,
    Site = 6,
    Stale = 7,
    InsufficientData = 8,
    NonFinite = 9,
    Parse = 10,
    Io = 11,
    Panic = 99,
}

impl From<&Error> for LsStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Dimension { .. } => LsStatus::Dimension,
            Error::Degenerate { .. } => LsStatus::Degenerate,
            Error::Input(_) => LsStatus::InvalidInput,
            Error::Config { .. } => LsStatus::Config,
            Error::Site { .. } => LsStatus::Site,
            Error::Stale(_) => LsStatus::Stale,
            Error::InsufficientData(_) => LsStatus::InsufficientData,
            Error::NonFinite(_) => LsStatus::NonFinite,
            Error::Parse(_) => LsStatus::Parse,
            Error::Io(_) => LsStatus::Io,
        }
    }
}

/// Activation selector for [`LsModelConfig`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LsActivation {
    GeluTanh = 0,
    Tanh = 1,
    Identity = 2,
}

/// Normalisation selector for [`LsModelConfig`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LsNorm {
    RmsNorm = 0,
    Identity = 1,
}

/// Adapter location within a layer. Callers must pass one of the declared
/// values; the same holds for the other enums.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LsSlot {
    AttnOut = 0,
    MlpDown = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct LsModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub vocab: usize,
    pub seq_capacity: usize,
    pub activation: LsActivation,
    pub norm: LsNorm,
    pub init_scale: f64,
    pub seed: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct LsShiftSummary {
    pub epsilon: f64,
    pub exact_shift: f64,
    pub first_order_total: f64,
    pub remainder: f64,
    pub delta_norm: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct LsMarginSummary {
    pub m0: f64,
    pub m: f64,
    pub first_order_margin: f64,
    pub margin_remainder: f64,
    pub flip_predicted: bool,
    pub flip_actual: bool,
    /// The flip inequality agrees with the sign of `m`.
    pub identity_consistent: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct LsSweepSummary {
    /// Valid only when `has_slope` is true.
    pub fitted_slope: f64,
    pub has_slope: bool,
    pub linear_exact: bool,
    /// `remainder / eps` strictly decreases over the last three grid points.
    pub tail_decreasing: bool,
}

/// Opaque model handle.
pub struct LsModel(TransformerModel);

/// Opaque adapter-set handle.
pub struct LsLoraSet(LoraSet);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = c);
}

struct Fail(LsStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(LsStatus::from(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(LsStatus::NullPointer, format!("null pointer: {what}"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> LsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LsStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            LsStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn deref_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn path<'a>(p: *const c_char) -> Result<&'a Path, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(LsStatus::InvalidInput, "path is not valid UTF-8".into()))?;
    Ok(Path::new(s))
}

fn site(layer: usize, slot: LsSlot) -> SiteId {
    let slot = match slot {
        LsSlot::AttnOut => Slot::AttnOut,
        LsSlot::MlpDown => Slot::MlpDown,
    };
    SiteId::new(layer, slot)
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

/// Message of the last failing call on this thread; empty if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ls_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ls_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Fills `out` with the reference configuration.
///
/// # Safety
/// `out` must be null or point to writable memory for one `LsModelConfig`.
#[no_mangle]
pub unsafe extern "C" fn ls_model_config_reference(out: *mut LsModelConfig) -> LsStatus {
    guard(|| {
        let r = ModelConfig::reference();
        write_out(
            out,
            LsModelConfig {
                n_layers: r.n_layers,
                d_model: r.d_model,
                d_ff: r.d_ff,
                vocab: r.vocab,
                seq_capacity: r.seq_capacity,
                activation: LsActivation::GeluTanh,
                norm: LsNorm::RmsNorm,
                init_scale: r.init_scale,
                seed: r.seed,
            },
            "out",
        )
    })
}

/// Builds a seeded model.
///
/// # Safety
/// `config` must be null or valid; `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn ls_model_build(config: *const LsModelConfig, out: *mut *mut LsModel) -> LsStatus {
    guard(|| {
        let c = deref(config, "config")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = ModelConfig {
            n_layers: c.n_layers,
            d_model: c.d_model,
            d_ff: c.d_ff,
            vocab: c.vocab,
            seq_capacity: c.seq_capacity,
            activation: match c.activation {
                LsActivation::GeluTanh => Activation::GeluTanh,
                LsActivation::Tanh => Activation::Tanh,
                LsActivation::Identity => Activation::Identity,
            },
            norm: match c.norm {
                LsNorm::RmsNorm => NormKind::RmsNorm,
                LsNorm::Identity => NormKind::Identity,
            },
            init_scale: c.init_scale,
            seed: c.seed,
        };
        let model = build_model(&cfg)?;
        out.write(Box::into_raw(Box::new(LsModel(model))));
        Ok(())
    })
}

/// Loads a model file written by `ls_model_save` or the command-line tool.
///
/// # Safety
/// `path` must be null or a NUL-terminated string; `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn ls_model_load(path_: *const c_char, out: *mut *mut LsModel) -> LsStatus {
    guard(|| {
        let p = path(path_)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let model = load_model(p)?;
        out.write(Box::into_raw(Box::new(LsModel(model))));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a live handle; `path_` must be null or NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ls_model_save(model: *const LsModel, path_: *const c_char) -> LsStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let p = path(path_)?;
        write_atomic(p, model_to_string(&m.0)?.as_bytes())?;
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ls_model_free(model: *mut LsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Vocabulary size, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ls_model_vocab(model: *const LsModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.config().vocab)
}

/// Writes the 32-byte SHA-256 digest of the model weights to `out`.
///
/// # Safety
/// `model` must be null or live; `out` must be null or hold 32 bytes.
#[no_mangle]
pub unsafe extern "C" fn ls_model_digest(model: *const LsModel, out: *mut u8) -> LsStatus {
    guard(|| {
        let m = deref(model, "model")?;
        if out.is_null() {
            return Err(null("out"));
        }
        ptr::copy_nonoverlapping(m.0.digest().as_ptr(), out, 32);
        Ok(())
    })
}

/// Final-position logits for `tokens`; `out` must hold `out_len == vocab`
/// values.
///
/// # Safety
/// Pointers must be null or valid for the given lengths.
#[no_mangle]
pub unsafe extern "C" fn ls_forward_logits(
    model: *const LsModel,
    tokens: *const usize,
    n_tokens: usize,
    out: *mut f64,
    out_len: usize,
) -> LsStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let toks = slice(tokens, n_tokens, "tokens")?;
        let trace = forward(&m.0, toks)?;
        let logits = trace.logits.as_slice();
        if out_len != logits.len() {
            return Err(Fail(
                LsStatus::Dimension,
                format!("output buffer holds {out_len} values, vocab is {}", logits.len()),
            ));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        ptr::copy_nonoverlapping(logits.as_ptr(), out, logits.len());
        Ok(())
    })
}

/// Creates an empty adapter set with global scale `epsilon`.
///
/// # Safety
/// `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn ls_lora_set_new(epsilon: f64, out: *mut *mut LsLoraSet) -> LsStatus {
    guard(|| {
        if !epsilon.is_finite() {
            return Err(Fail(LsStatus::InvalidInput, "epsilon must be finite".into()));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        out.write(Box::into_raw(Box::new(LsLoraSet(LoraSet::new().with_scale(epsilon)))));
        Ok(())
    })
}

/// Loads an adapter file.
///
/// # Safety
/// `path_` must be null or NUL-terminated; `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn ls_lora_set_load(path_: *const c_char, out: *mut *mut LsLoraSet) -> LsStatus {
    guard(|| {
        let p = path(path_)?;
        if out.is_null() {
            return Err(null("out"));
        }
        out.write(Box::into_raw(Box::new(LsLoraSet(load_adapters(p)?))));
        Ok(())
    })
}

/// # Safety
/// `set` must be null or live; `path_` must be null or NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ls_lora_set_save(set: *const LsLoraSet, path_: *const c_char) -> LsStatus {
    guard(|| {
        let s = deref(set, "set")?;
        let p = path(path_)?;
        write_atomic(p, adapters_to_string(&s.0)?.as_bytes())?;
        Ok(())
    })
}

/// Releases an adapter set. Null is ignored.
///
/// # Safety
/// `set` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ls_lora_set_free(set: *mut LsLoraSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// # Safety
/// `set` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn ls_lora_set_set_epsilon(set: *mut LsLoraSet, epsilon: f64) -> LsStatus {
    guard(|| {
        let s = deref_mut(set, "set")?;
        if !epsilon.is_finite() {
            return Err(Fail(LsStatus::InvalidInput, "epsilon must be finite".into()));
        }
        s.0 = s.0.with_scale(epsilon);
        Ok(())
    })
}

/// Number of adapters in the set, or 0 for a null handle.
///
/// # Safety
/// `set` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn ls_lora_set_len(set: *const LsLoraSet) -> usize {
    set.as_ref().map_or(0, |s| s.0.len())
}

/// Adds a Gaussian adapter drawn from `seed` (entries `scale * N(0, 1)`,
/// `B` first) at the given site of `model`.
///
/// # Safety
/// `set` and `model` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn ls_lora_set_add_random(
    set: *mut LsLoraSet,
    model: *const LsModel,
    layer: usize,
    slot: LsSlot,
    rank: usize,
    alpha: f64,
    seed: u64,
    scale: f64,
) -> LsStatus {
    guard(|| {
        let s = deref_mut(set, "set")?;
        let m = deref(model, "model")?;
        let mut rng = SeededRng::new(seed);
        let adapter = random_lora(&mut rng, &m.0, site(layer, slot), rank, alpha, scale)?;
        s.0.insert(adapter)?;
        Ok(())
    })
}

/// Adds an adapter from row-major `b` (`d_out x rank`) and `a`
/// (`rank x d_in`), with shapes taken from the site of `model`.
///
/// # Safety
/// `set` and `model` must be null or live; `b` and `a` must be null or hold
/// the stated number of values.
#[no_mangle]
pub unsafe extern "C" fn ls_lora_set_add(
    set: *mut LsLoraSet,
    model: *const LsModel,
    layer: usize,
    slot: LsSlot,
    rank: usize,
    alpha: f64,
    b: *const f64,
    a: *const f64,
) -> LsStatus {
    guard(|| {
        let s = deref_mut(set, "set")?;
        let m = deref(model, "model")?;
        let id = site(layer, slot);
        let (d_out, d_in) = m.0.site_shape(id)?;
        if rank == 0 {
            return Err(Fail(LsStatus::InvalidInput, "LoRA rank must be at least 1".into()));
        }
        let b = Matrix::new(d_out, rank, slice(b, d_out * rank, "b")?.to_vec())?;
        let a = Matrix::new(rank, d_in, slice(a, rank * d_in, "a")?.to_vec())?;
        let adapter = LoraAdapter::new(id, b, a, alpha)?;
        adapter.check_for(&m.0)?;
        s.0.insert(adapter)?;
        Ok(())
    })
}

/// Exact logit shift of token `y`, its first-order prediction and the
/// remainder.
///
/// # Safety
/// Handles must be null or live; `tokens` must hold `n_tokens` values;
/// `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn ls_logit_remainder(
    model: *const LsModel,
    set: *const LsLoraSet,
    tokens: *const usize,
    n_tokens: usize,
    y: usize,
    out: *mut LsShiftSummary,
) -> LsStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let s = deref(set, "set")?;
        let r = logit_remainder(&m.0, &s.0, slice(tokens, n_tokens, "tokens")?, y)?;
        write_out(
            out,
            LsShiftSummary {
                epsilon: r.epsilon,
                exact_shift: r.exact_shift,
                first_order_total: r.first_order_total,
                remainder: r.remainder,
                delta_norm: r.delta_norm,
            },
            "out",
        )
    })
}

/// First-order logit shift of token `y` from the set's adapter at one site
/// (including the set's epsilon).
///
/// # Safety
/// As for [`ls_logit_remainder`]; `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn ls_site_first_order(
    model: *const LsModel,
    set: *const LsLoraSet,
    tokens: *const usize,
    n_tokens: usize,
    layer: usize,
    slot: LsSlot,
    y: usize,
    out: *mut f64,
) -> LsStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let s = deref(set, "set")?;
        let id = site(layer, slot);
        let adapter =
            s.0.get(id)
                .ok_or_else(|| Fail(LsStatus::Site, format!("no adapter at {id}")))?;
        let trace = forward(&m.0, slice(tokens, n_tokens, "tokens")?)?;
        let v = first_order_single(&m.0, &trace, adapter, s.0.epsilon(), y)?;
        write_out(out, v, "out")
    })
}

/// Margin `logit(y_doc) - logit(y_pre)` before and after the adapters, with
/// its first-order prediction and flip diagnostics.
///
/// # Safety
/// As for [`ls_logit_remainder`].
#[no_mangle]
pub unsafe extern "C" fn ls_margin(
    model: *const LsModel,
    set: *const LsLoraSet,
    tokens: *const usize,
    n_tokens: usize,
    y_doc: usize,
    y_pre: usize,
    out: *mut LsMarginSummary,
) -> LsStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let s = deref(set, "set")?;
        let r = margin_report(&m.0, &s.0, slice(tokens, n_tokens, "tokens")?, y_doc, y_pre)?;
        let flip = flip_criterion(&r);
        write_out(
            out,
            LsMarginSummary {
                m0: r.m0,
                m: r.m,
                first_order_margin: r.first_order_margin,
                margin_remainder: r.margin_remainder,
                flip_predicted: r.flip_predicted,
                flip_actual: r.flip_actual,
                identity_consistent: flip.identity_consistent,
            },
            "out",
        )
    })
}

/// Remainder sweep over a strictly decreasing positive `grid`. If
/// `remainders` is non-null it receives one remainder per grid point.
///
/// # Safety
/// As for [`ls_logit_remainder`]; `grid` must hold `n_grid` values and
/// `remainders` must be null or hold `n_grid` values.
#[no_mangle]
pub unsafe extern "C" fn ls_remainder_sweep(
    model: *const LsModel,
    set: *const LsLoraSet,
    tokens: *const usize,
    n_tokens: usize,
    y: usize,
    grid: *const f64,
    n_grid: usize,
    out: *mut LsSweepSummary,
    remainders: *mut f64,
) -> LsStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let s = deref(set, "set")?;
        let g = slice(grid, n_grid, "grid")?;
        let r = remainder_sweep(&m.0, &s.0, slice(tokens, n_tokens, "tokens")?, y, g)?;
        if !remainders.is_null() {
            for (i, row) in r.rows.iter().enumerate() {
                remainders.add(i).write(row.remainder);
            }
        }
        write_out(
            out,
            LsSweepSummary {
                fitted_slope: r.fitted_slope.unwrap_or(f64::NAN),
                has_slope: r.fitted_slope.is_some(),
                linear_exact: r.linear_exact,
                tail_decreasing: r.tail_strictly_decreasing(3),
            },
            "out",
        )
    })
}
