//! C ABI for `ehps-core`.
//!
//! Conventions:
//! - every fallible call returns an [`EhpsStatus`]; on failure the message is
//!   available from [`ehps_last_error_message`] on the same thread;
//! - points are flat `double` arrays of `n * 3` values (x, y, z interleaved);
//! - models are opaque [`EhpsModel`] handles released with [`ehps_model_free`];
//! - output pointers are written only on success.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ehps_core::benchmark::{self, BenchmarkBasket, LeaderboardEntry};
use ehps_core::body_model::{self, BodyModelData, FullPoseState, Layout, Vec3, NUM_BETAS, NUM_EXPRESSIONS};
use ehps_core::metrics::{self, AlignmentMode};
use ehps_core::sampler::{self, SampleStrategy};
use ehps_core::Error;

/// Result code of every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EhpsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DegenerateGeometry = 3,
    ParseError = 4,
    EmptyInput = 5,
    MissingValue = 6,
    RankDeficient = 7,
    TrainingFailure = 8,
    IoError = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EhpsLayout {
    Canonical = 0,
    Minimal = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EhpsAlignment {
    None = 0,
    /// Needs the two anchor points.
    RootTranslation = 1,
    Procrustes = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EhpsStrategy {
    Balanced = 0,
    Weighted = 1,
    Concatenated = 2,
}

/// Opaque body model.
pub struct EhpsModel {
    inner: BodyModelData,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> EhpsStatus {
    match e {
        Error::InvalidArgument(_) => EhpsStatus::InvalidArgument,
        Error::DegenerateGeometry(_) => EhpsStatus::DegenerateGeometry,
        Error::Parse { .. } => EhpsStatus::ParseError,
        Error::EmptyInput(_) => EhpsStatus::EmptyInput,
        Error::MissingValue(_) => EhpsStatus::MissingValue,
        Error::RankDeficient { .. } => EhpsStatus::RankDeficient,
        Error::TrainingFailure { .. } => EhpsStatus::TrainingFailure,
        Error::Io { .. } => EhpsStatus::IoError,
    }
}

enum Fail {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

/// Runs `f`, recording any failure (including a panic) as the last error.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> EhpsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EhpsStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_last_error(format!("null pointer: {what}"));
            EhpsStatus::NullPointer
        }
        Ok(Err(Fail::Core(e))) => {
            set_last_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_last_error("internal panic".into());
            EhpsStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn points(p: *const f64, n: usize, what: &'static str) -> Result<Vec<Vec3>, Fail> {
    Ok(slice(p, n * 3, what)?
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect())
}

unsafe fn string(p: *const c_char, what: &'static str) -> Result<String, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| Fail::Core(Error::InvalidArgument(format!("{what} is not UTF-8"))))
}

unsafe fn strings(p: *const *const c_char, n: usize, what: &'static str) -> Result<Vec<String>, Fail> {
    slice(p, n, what)?.iter().map(|&s| string(s, what)).collect()
}

unsafe fn model<'a>(m: *const EhpsModel) -> Result<&'a BodyModelData, Fail> {
    m.as_ref().map(|m| &m.inner).ok_or(Fail::Null("model"))
}

unsafe fn put<T>(out: *mut T, value: T, what: &'static str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null(what));
    }
    out.write(value);
    Ok(())
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ehps_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Generates a deterministic toy model into `*out`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn ehps_model_generate(
    seed: u64,
    num_vertices: usize,
    num_joints: usize,
    layout: EhpsLayout,
    out: *mut *mut EhpsModel,
) -> EhpsStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let layout = match layout {
            EhpsLayout::Canonical => Layout::Canonical,
            EhpsLayout::Minimal => Layout::Minimal,
        };
        let inner = body_model::gen_toy_model(seed, num_vertices, num_joints, layout)?;
        put(out, Box::into_raw(Box::new(EhpsModel { inner })), "out")
    })
}

/// Loads a model JSON file into `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` as for [`ehps_model_generate`].
#[no_mangle]
pub unsafe extern "C" fn ehps_model_load(path: *const c_char, out: *mut *mut EhpsModel) -> EhpsStatus {
    guard(|| {
        let path = string(path, "path")?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let inner = body_model::load_model(path)?;
        put(out, Box::into_raw(Box::new(EhpsModel { inner })), "out")
    })
}

/// # Safety
/// `model` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ehps_model_save(model: *const EhpsModel, path: *const c_char) -> EhpsStatus {
    guard(|| {
        let m = self::model(model)?;
        body_model::save_model(m, string(path, "path")?)?;
        Ok(())
    })
}

/// Releases a handle. NULL is a no-op.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ehps_model_free(model: *mut EhpsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Vertex count, or 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ehps_model_num_vertices(model: *const EhpsModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.num_vertices())
}

/// Joint count, or 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ehps_model_num_joints(model: *const EhpsModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.num_joints())
}

/// Poses the model. `theta` holds J×3 axis-angles, `beta` and `psi` 10 values
/// each, `translation` 3. Writes V×3 vertices and J×3 joints (meters).
///
/// # Safety
/// All pointers must reference arrays of the sizes above.
#[no_mangle]
pub unsafe extern "C" fn ehps_forward(
    model: *const EhpsModel,
    theta: *const f64,
    beta: *const f64,
    psi: *const f64,
    translation: *const f64,
    out_vertices: *mut f64,
    out_joints: *mut f64,
) -> EhpsStatus {
    guard(|| {
        let m = self::model(model)?;
        let (nv, nj) = (m.num_vertices(), m.num_joints());
        let t = slice(translation, 3, "translation")?;
        let state = FullPoseState {
            theta: points(theta, nj, "theta")?,
            beta: slice(beta, NUM_BETAS, "beta")?.to_vec(),
            psi: slice(psi, NUM_EXPRESSIONS, "psi")?.to_vec(),
            translation: [t[0], t[1], t[2]],
        };
        let vertices = slice_mut(out_vertices, nv * 3, "out_vertices")?;
        let joints = slice_mut(out_joints, nj * 3, "out_joints")?;
        let mesh = body_model::forward(m, &state)?;
        vertices.copy_from_slice(mesh.vertices.as_flattened());
        joints.copy_from_slice(mesh.joints.as_flattened());
        Ok(())
    })
}

/// Mean per-point error in millimeters after `alignment`. The anchors are
/// single points (3 values) and are only read for root translation.
///
/// # Safety
/// `pred` and `gt` must hold `n * 3` values; anchors 3 values when read.
#[no_mangle]
pub unsafe extern "C" fn ehps_position_error(
    pred: *const f64,
    gt: *const f64,
    n: usize,
    alignment: EhpsAlignment,
    pred_anchor: *const f64,
    gt_anchor: *const f64,
    out_mm: *mut f64,
) -> EhpsStatus {
    guard(|| {
        let p = points(pred, n, "pred")?;
        let g = points(gt, n, "gt")?;
        let (mode, anchor) = match alignment {
            EhpsAlignment::None => (AlignmentMode::None, None),
            EhpsAlignment::Procrustes => (AlignmentMode::ProcrustesSimilarity, None),
            EhpsAlignment::RootTranslation => {
                let pa = points(pred_anchor, 1, "pred_anchor")?[0];
                let ga = points(gt_anchor, 1, "gt_anchor")?[0];
                (AlignmentMode::RootTranslation { joint: None }, Some((pa, ga)))
            }
        };
        put(out_mm, metrics::position_error(&p, &g, &mode, anchor)?, "out_mm")
    })
}

/// Least-squares similarity mapping `source` onto `target`:
/// `target ≈ scale · R · source + t`. `R` is written row-major (9 values).
///
/// # Safety
/// `source`/`target` hold `n * 3` values; outputs hold 1, 9 and 3 values.
#[no_mangle]
pub unsafe extern "C" fn ehps_umeyama(
    source: *const f64,
    target: *const f64,
    n: usize,
    with_scale: bool,
    out_scale: *mut f64,
    out_rotation: *mut f64,
    out_translation: *mut f64,
) -> EhpsStatus {
    guard(|| {
        let s = points(source, n, "source")?;
        let t = points(target, n, "target")?;
        if out_scale.is_null() {
            return Err(Fail::Null("out_scale"));
        }
        let rot = slice_mut(out_rotation, 9, "out_rotation")?;
        let tr = slice_mut(out_translation, 3, "out_translation")?;
        let sim = metrics::umeyama_align(&s, &t, with_scale)?;
        for r in 0..3 {
            for c in 0..3 {
                rot[r * 3 + c] = sim.rotation[(r, c)];
            }
        }
        tr.copy_from_slice(sim.translation.as_slice());
        put(out_scale, sim.scale, "out_scale")
    })
}

/// Mean primary error of one subject over a named basket (`whole-body`,
/// `hand`, `hand-pa` or a basket JSON path). Benchmarks whose dataset appears
/// in `trained_on` are excluded.
///
/// # Safety
/// `benchmark_ids` and `values` hold `n` entries; `trained_on` holds
/// `n_trained` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn ehps_mpe(
    basket: *const c_char,
    benchmark_ids: *const *const c_char,
    values_mm: *const f64,
    n: usize,
    trained_on: *const *const c_char,
    n_trained: usize,
    out_mm: *mut f64,
) -> EhpsStatus {
    guard(|| {
        let basket = BenchmarkBasket::resolve(&string(basket, "basket")?)?;
        let ids = strings(benchmark_ids, n, "benchmark_ids")?;
        let values = slice(values_mm, n, "values_mm")?;
        let trained = strings(trained_on, n_trained, "trained_on")?;
        let entry = LeaderboardEntry::new(
            "subject",
            ids.iter().map(String::as_str).zip(values.iter().copied()),
            trained.iter().map(String::as_str),
        );
        put(out_mm, benchmark::mpe(&entry, &basket)?, "out_mm")
    })
}

/// `error_mm / f1` for detection-aware benchmarks.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ehps_detection_normalized(error_mm: f64, f1: f64, out: *mut f64) -> EhpsStatus {
    guard(|| put(out, metrics::detection_normalized(error_mm, f1)?, "out"))
}

/// Per-dataset target lengths for `n` datasets given best rank first.
/// `ratio` is only used by the weighted strategy; `total` is ignored by
/// concatenation.
///
/// # Safety
/// `sizes` and `out_lengths` hold `n` values.
#[no_mangle]
pub unsafe extern "C" fn ehps_plan_lengths(
    strategy: EhpsStrategy,
    ratio: u32,
    sizes: *const usize,
    n: usize,
    total: usize,
    out_lengths: *mut usize,
) -> EhpsStatus {
    guard(|| {
        let sizes = slice(sizes, n, "sizes")?;
        let out = slice_mut(out_lengths, n, "out_lengths")?;
        let strategy = match strategy {
            EhpsStrategy::Balanced => SampleStrategy::Balanced,
            EhpsStrategy::Weighted => SampleStrategy::Weighted { ratio },
            EhpsStrategy::Concatenated => SampleStrategy::Concatenated,
        };
        let ranked: Vec<(String, usize)> = sizes.iter().enumerate().map(|(i, &s)| (format!("d{i}"), s)).collect();
        let plan = sampler::plan_lengths(&ranked, strategy, total)?;
        for (o, l) in out.iter_mut().zip(plan.values()) {
            *o = *l;
        }
        Ok(())
    })
}
