//! C ABI for `perfhom`.
//!
//! Every entry point returns a [`PerfhomStatus`]; results travel through
//! out-pointers. Objects are opaque handles created by `*_new`/`*_run`
//! functions and released by the matching `*_free`. On failure the message
//! of the most recent error on the calling thread is available from
//! [`perfhom_last_error_message`]. Panics never cross the boundary.
//!
//! Status codes 1–4 coincide with the exit codes of the `perfhom` binary.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};

use perfhom::cell_problem::{homogenize, EffectiveTensor};
use perfhom::config::RunConfig;
use perfhom::geometry::build_unit_cell;
use perfhom::harness::FieldSnapshot;
use perfhom::timestep::RunRecord;
use perfhom::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerfhomStatus {
    Ok = 0,
    /// File system or serialization failure.
    Io = 1,
    /// Invalid configuration or geometry.
    Config = 2,
    /// A linear solve, factorization or positivity safeguard failed.
    Solver = 3,
    /// A consistency check or internal invariant failed.
    Invariant = 4,
    NullPointer = 10,
    InvalidArgument = 11,
    /// Index outside the valid range, or an output buffer too small.
    OutOfRange = 12,
    /// A Rust panic was caught; the handle involved should be discarded.
    Panic = 13,
}

/// Parsed and validated run configuration.
pub struct PerfhomConfig(RunConfig);

/// Effective diffusion tensor with porosity and diagnostics.
pub struct PerfhomTensor(EffectiveTensor);

/// A finished micro or macro run: time record plus snapshots on the full grid.
pub struct PerfhomRun {
    record: RunRecord,
    snapshots: Vec<FieldSnapshot>,
    dim: usize,
    extents: [usize; 3],
    h: f64,
}

/// Scalar diagnostics of a [`PerfhomRun`].
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct PerfhomRunSummary {
    pub final_time: f64,
    /// Largest relative per-step mass-balance residual.
    pub max_balance_residual: f64,
    pub min_value: f64,
    /// Time-integrated boundary inflow of each species.
    pub inflow: [f64; 3],
    pub h: f64,
    pub dim: u32,
    pub halvings: u32,
    pub steps: usize,
    pub snapshots: usize,
    /// Values per species in one snapshot.
    pub points: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(PerfhomStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e.exit_code() {
            1 => PerfhomStatus::Io,
            2 => PerfhomStatus::Config,
            3 => PerfhomStatus::Solver,
            _ => PerfhomStatus::Invariant,
        };
        Failure(status, e.to_string())
    }
}

fn fail<T>(status: PerfhomStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PerfhomStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PerfhomStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            PerfhomStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    match p.as_ref() {
        Some(r) => Ok(r),
        None => fail(PerfhomStatus::NullPointer, format!("`{name}` is null")),
    }
}

unsafe fn write_out<T>(out: *mut T, value: T, name: &str) -> Result<(), Failure> {
    if out.is_null() {
        return fail(PerfhomStatus::NullPointer, format!("`{name}` is null"));
    }
    out.write(value);
    Ok(())
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).unwrap_or_default().into_raw()
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn perfhom_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or null if none occurred.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn perfhom_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from a `perfhom_*` function returning `char *` and must not
/// be freed twice.
#[no_mangle]
pub unsafe extern "C" fn perfhom_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

// ---------------------------------------------------------------- config

/// Parses and validates a TOML configuration. Missing keys take defaults.
///
/// # Safety
/// `toml` must be a NUL-terminated UTF-8 string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn perfhom_config_from_toml(toml: *const c_char, out: *mut *mut PerfhomConfig) -> PerfhomStatus {
    guard(|| {
        if toml.is_null() {
            return fail(PerfhomStatus::NullPointer, "`toml` is null");
        }
        let Ok(text) = CStr::from_ptr(toml).to_str() else {
            return fail(PerfhomStatus::InvalidArgument, "configuration is not valid UTF-8");
        };
        let cfg = RunConfig::from_toml(text)?;
        write_out(out, Box::into_raw(Box::new(PerfhomConfig(cfg))), "out")
    })
}

/// The resolved configuration (all defaults filled in) as TOML.
/// Release with [`perfhom_string_free`].
///
/// # Safety
/// `cfg` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn perfhom_config_to_toml(cfg: *const PerfhomConfig, out: *mut *mut c_char) -> PerfhomStatus {
    guard(|| {
        let cfg = deref(cfg, "cfg")?;
        write_out(out, into_c_string(cfg.0.to_toml()), "out")
    })
}

/// Number of ε values in the configuration, largest first.
///
/// # Safety
/// `cfg` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn perfhom_config_epsilon_count(cfg: *const PerfhomConfig, out: *mut usize) -> PerfhomStatus {
    guard(|| write_out(out, deref(cfg, "cfg")?.0.epsilons().len(), "out"))
}

/// The `index`-th ε value, largest first.
///
/// # Safety
/// `cfg` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn perfhom_config_epsilon(cfg: *const PerfhomConfig, index: usize, out: *mut f64) -> PerfhomStatus {
    guard(|| {
        let eps = deref(cfg, "cfg")?.0.epsilons();
        match eps.get(index) {
            Some(&e) => write_out(out, e, "out"),
            None => fail(PerfhomStatus::OutOfRange, format!("ε index {index} out of range (have {})", eps.len())),
        }
    })
}

/// # Safety
/// `cfg` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn perfhom_config_free(cfg: *mut PerfhomConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

// ---------------------------------------------------------------- cell

/// Solves the cell problem on an `m^dim` raster of the unit cell with a
/// centred spherical hole of radius `hole_radius`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn perfhom_cell_homogenize(
    dim: u32,
    hole_radius: f64,
    m: u32,
    out: *mut *mut PerfhomTensor,
) -> PerfhomStatus {
    guard(|| {
        if out.is_null() {
            return fail(PerfhomStatus::NullPointer, "`out` is null");
        }
        let tensor = homogenize(&build_unit_cell(dim as usize, hole_radius, m as usize)?)?;
        write_out(out, Box::into_raw(Box::new(PerfhomTensor(tensor))), "out")
    })
}

/// # Safety
/// `t` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn perfhom_tensor_dim(t: *const PerfhomTensor, out: *mut u32) -> PerfhomStatus {
    guard(|| write_out(out, deref(t, "t")?.0.dim as u32, "out"))
}

/// Entry `D_ij` (zero-based).
///
/// # Safety
/// `t` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn perfhom_tensor_entry(t: *const PerfhomTensor, i: u32, j: u32, out: *mut f64) -> PerfhomStatus {
    guard(|| {
        let t = &deref(t, "t")?.0;
        let (i, j) = (i as usize, j as usize);
        if i >= t.dim || j >= t.dim {
            return fail(PerfhomStatus::OutOfRange, format!("entry ({i}, {j}) outside a {0}×{0} tensor", t.dim));
        }
        write_out(out, t.get(i, j), "out")
    })
}

/// Fluid volume fraction of the rastered cell.
///
/// # Safety
/// `t` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn perfhom_tensor_porosity(t: *const PerfhomTensor, out: *mut f64) -> PerfhomStatus {
    guard(|| write_out(out, deref(t, "t")?.0.theta, "out"))
}

/// Largest difference between the energy and flux forms of the tensor.
///
/// # Safety
/// `t` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn perfhom_tensor_formula_gap(t: *const PerfhomTensor, out: *mut f64) -> PerfhomStatus {
    guard(|| write_out(out, deref(t, "t")?.0.formula_gap, "out"))
}

/// # Safety
/// `t` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn perfhom_tensor_free(t: *mut PerfhomTensor) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

// ---------------------------------------------------------------- runs

/// Micro run on the perforated domain at scale `epsilon`, which need not be
/// one of the configured values. The cell problem is solved at the
/// configured cells-per-period resolution.
///
/// # Safety
/// `cfg` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn perfhom_micro_run(
    cfg: *const PerfhomConfig,
    epsilon: f64,
    out: *mut *mut PerfhomRun,
) -> PerfhomStatus {
    guard(|| {
        let cfg = deref(cfg, "cfg")?;
        if out.is_null() {
            return fail(PerfhomStatus::NullPointer, "`out` is null");
        }
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return fail(PerfhomStatus::InvalidArgument, format!("epsilon must be positive, got {epsilon}"));
        }
        let study = cfg.0.study();
        let cell = study.cell_solution()?;
        let run = study.run_micro(epsilon, &cell)?;
        let handle = PerfhomRun {
            dim: run.grid.dim(),
            extents: run.grid.shape.extents,
            h: run.grid.h(),
            record: run.record,
            snapshots: run.snapshots,
        };
        write_out(out, Box::into_raw(Box::new(handle)), "out")
    })
}

/// Homogenized run with the effective coefficients of the configuration.
///
/// # Safety
/// `cfg` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn perfhom_macro_run(cfg: *const PerfhomConfig, out: *mut *mut PerfhomRun) -> PerfhomStatus {
    guard(|| {
        let cfg = deref(cfg, "cfg")?;
        if out.is_null() {
            return fail(PerfhomStatus::NullPointer, "`out` is null");
        }
        let study = cfg.0.study();
        let cell = study.cell_solution()?;
        let run = study.run_macro(&cell)?;
        let handle = PerfhomRun {
            dim: run.grid.dim,
            extents: run.grid.shape.extents,
            h: run.grid.h,
            record: run.record,
            snapshots: run.snapshots,
        };
        write_out(out, Box::into_raw(Box::new(handle)), "out")
    })
}

impl PerfhomRun {
    fn points(&self) -> usize {
        self.extents[..self.dim].iter().product()
    }
}

/// # Safety
/// `run` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn perfhom_run_summary(run: *const PerfhomRun, out: *mut PerfhomRunSummary) -> PerfhomStatus {
    guard(|| {
        let run = deref(run, "run")?;
        let r = &run.record;
        let summary = PerfhomRunSummary {
            final_time: r.final_time(),
            max_balance_residual: r.max_balance_residual(),
            min_value: r.min_value(),
            inflow: r.total_inflow(),
            h: run.h,
            dim: run.dim as u32,
            halvings: r.halvings as u32,
            steps: r.rows.len(),
            snapshots: run.snapshots.len(),
            points: run.points(),
        };
        write_out(out, summary, "out")
    })
}

/// Grid extents, first axis first. `extents` must hold `len >= dim` values.
///
/// # Safety
/// `run` must be a live handle; `extents` must point to `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn perfhom_run_shape(run: *const PerfhomRun, extents: *mut usize, len: usize) -> PerfhomStatus {
    guard(|| {
        let run = deref(run, "run")?;
        if extents.is_null() {
            return fail(PerfhomStatus::NullPointer, "`extents` is null");
        }
        if len < run.dim {
            return fail(PerfhomStatus::OutOfRange, format!("need {} extents, buffer holds {len}", run.dim));
        }
        std::slice::from_raw_parts_mut(extents, run.dim).copy_from_slice(&run.extents[..run.dim]);
        Ok(())
    })
}

/// Copies species `species` (0–2) of snapshot `index` into `buf`, first axis
/// fastest, zeros in the holes. `time` (optional) receives the snapshot time.
///
/// # Safety
/// `run` must be a live handle; `buf` must point to `len` writable values;
/// `time` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn perfhom_run_snapshot(
    run: *const PerfhomRun,
    index: usize,
    species: u32,
    buf: *mut f64,
    len: usize,
    time: *mut f64,
) -> PerfhomStatus {
    guard(|| {
        let run = deref(run, "run")?;
        let Some(snap) = run.snapshots.get(index) else {
            return fail(PerfhomStatus::OutOfRange, format!("snapshot {index} out of range (have {})", run.snapshots.len()));
        };
        if species >= 3 {
            return fail(PerfhomStatus::OutOfRange, format!("species {species} out of range (0-2)"));
        }
        if buf.is_null() {
            return fail(PerfhomStatus::NullPointer, "`buf` is null");
        }
        let field = &snap.a[species as usize];
        if len < field.len() {
            return fail(PerfhomStatus::OutOfRange, format!("need {} values, buffer holds {len}", field.len()));
        }
        std::slice::from_raw_parts_mut(buf, field.len()).copy_from_slice(field);
        if !time.is_null() {
            time.write(snap.t);
        }
        Ok(())
    })
}

/// The per-step record as CSV. Release with [`perfhom_string_free`].
///
/// # Safety
/// `run` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn perfhom_run_record_csv(run: *const PerfhomRun, out: *mut *mut c_char) -> PerfhomStatus {
    guard(|| write_out(out, into_c_string(deref(run, "run")?.record.to_csv()), "out"))
}

/// # Safety
/// `run` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn perfhom_run_free(run: *mut PerfhomRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}
