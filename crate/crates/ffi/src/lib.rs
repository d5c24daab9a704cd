//! C ABI over the case loader, the registration methods and the reprojection metric.
//!
//! Every fallible call returns a [`LapregStatus`]. On failure the message is kept per
//! thread and can be copied out with [`lapreg_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use lapreg::geometry::RigidPose;
use lapreg::metrics::{reprojection_error, Score};
use lapreg::tooling::{load_bundle, register_bundle, CaseBundle, PnpSettings, RegisterMethod};
use lapreg::{Error, ErrorKind};
use nalgebra::{Matrix3, Vector3};

/// Result codes; the non-zero ones match the command-line exit codes where they overlap.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LapregStatus {
    Ok = 0,
    InvalidArgument = 1,
    DataError = 2,
    AlgorithmFailed = 3,
    NullPointer = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LapregMethod {
    Pnp = 0,
    PnpRansac = 1,
    Silhouette = 2,
    LandmarkRender = 3,
    Chamfer = 4,
}

impl From<LapregMethod> for RegisterMethod {
    fn from(m: LapregMethod) -> Self {
        match m {
            LapregMethod::Pnp => RegisterMethod::Pnp,
            LapregMethod::PnpRansac => RegisterMethod::PnpRansac,
            LapregMethod::Silhouette => RegisterMethod::Silhouette,
            LapregMethod::LandmarkRender => RegisterMethod::LandmarkDr,
            LapregMethod::Chamfer => RegisterMethod::ChamferDr,
        }
    }
}

/// Model-to-camera transform: row-major rotation and translation in millimetres.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LapregPose {
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

impl From<&RigidPose> for LapregPose {
    fn from(p: &RigidPose) -> Self {
        let t = p.translation();
        Self {
            rotation: p.rotation_row_major(),
            translation: [t.x, t.y, t.z],
        }
    }
}

impl TryFrom<&LapregPose> for RigidPose {
    type Error = Error;

    fn try_from(p: &LapregPose) -> Result<Self, Error> {
        RigidPose::try_new(
            Matrix3::from_row_slice(&p.rotation),
            Vector3::from_column_slice(&p.translation),
        )
    }
}

/// Registration settings. Start from [`lapreg_register_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LapregRegisterOptions {
    /// Restarts; 0 keeps the method's default.
    pub restarts: u32,
    /// Iterations; negative keeps the method's default.
    pub iterations: i32,
    /// Render scale; 0 keeps the method's default.
    pub render_scale: f64,
    pub seed: u64,
    /// RANSAC inlier threshold in pixels.
    pub ransac_threshold: f64,
}

/// Registration reprojection error in pixels. A class that could not be scored is NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LapregReport {
    pub ridge: f64,
    pub ligament: f64,
    pub combined: f64,
    pub hausdorff: f64,
}

/// A loaded case.
pub struct LapregCase(CaseBundle);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(message: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = message);
}

fn status_of(e: &Error) -> LapregStatus {
    match e.kind() {
        ErrorKind::Usage => LapregStatus::InvalidArgument,
        ErrorKind::Data => LapregStatus::DataError,
        ErrorKind::Algorithmic => LapregStatus::AlgorithmFailed,
    }
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> LapregStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LapregStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("{what} is null"));
            LapregStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            LapregStatus::Panic
        }
    }
}

unsafe fn non_null<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn non_null_mut<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

fn nan_if_missing(s: Score) -> f64 {
    s.value().unwrap_or(f64::NAN)
}

/// Copies the calling thread's last error message into `buf` as a NUL-terminated string,
/// truncating to `len - 1` bytes. Returns the full message length in bytes.
///
/// # Safety
/// `buf` must be null or point to at least `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn lapreg_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Loads the case manifest at `path` into `*out`. Release it with [`lapreg_case_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lapreg_case_load(path: *const c_char, out: *mut *mut LapregCase) -> LapregStatus {
    guard(|| {
        let path = CStr::from_ptr(non_null(path, "path")?);
        let out = non_null_mut(out, "out")?;
        let path = path
            .to_str()
            .map_err(|_| Error::InvalidArgument("path is not UTF-8".into()))?;
        let bundle = load_bundle(&PathBuf::from(path))?;
        *out = Box::into_raw(Box::new(LapregCase(bundle)));
        Ok(())
    })
}

/// # Safety
/// `case` must be null or a handle from [`lapreg_case_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lapreg_case_free(case: *mut LapregCase) {
    if !case.is_null() {
        drop(Box::from_raw(case));
    }
}

/// Ground-truth pose of the case; an invalid argument when its manifest names none.
///
/// # Safety
/// `case` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lapreg_case_ground_truth(case: *const LapregCase, out: *mut LapregPose) -> LapregStatus {
    guard(|| {
        let case = non_null(case, "case")?;
        let out = non_null_mut(out, "out")?;
        let pose =
            (case.0.pose.as_ref()).ok_or_else(|| Error::InvalidArgument("the case has no ground-truth pose".into()))?;
        *out = pose.into();
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn lapreg_register_options_default() -> LapregRegisterOptions {
    LapregRegisterOptions {
        restarts: 0,
        iterations: -1,
        render_scale: 0.0,
        seed: 0,
        ransac_threshold: PnpSettings::default().threshold,
    }
}

/// Registers the case with `method`, writing the best pose and its final loss.
///
/// # Safety
/// `case` must be a live handle; `options`, `pose` and `loss` valid pointers, `loss`
/// may be null.
#[no_mangle]
pub unsafe extern "C" fn lapreg_register(
    case: *const LapregCase,
    method: LapregMethod,
    options: *const LapregRegisterOptions,
    pose: *mut LapregPose,
    loss: *mut f64,
) -> LapregStatus {
    guard(|| {
        let case = non_null(case, "case")?;
        let o = non_null(options, "options")?;
        let pose = non_null_mut(pose, "pose")?;
        let method = RegisterMethod::from(method);
        let mut cfg = method.config();
        cfg.seed = o.seed;
        if o.restarts > 0 {
            cfg.restarts = o.restarts as usize;
        }
        if o.iterations >= 0 {
            cfg.iterations = o.iterations as usize;
        }
        if o.render_scale > 0.0 {
            cfg.render_scale = o.render_scale;
        }
        let pnp = PnpSettings {
            threshold: o.ransac_threshold,
            ..PnpSettings::default()
        };
        let outcome = register_bundle(&case.0, method, &cfg, &pnp)?;
        *pose = (&outcome.best.pose).into();
        if let Some(l) = loss.as_mut() {
            *l = outcome.best.final_loss;
        }
        Ok(())
    })
}

/// Reprojection error of the case's landmarks under `pose`.
///
/// # Safety
/// `case` must be a live handle; `pose` and `out` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn lapreg_reprojection_error(
    case: *const LapregCase,
    pose: *const LapregPose,
    out: *mut LapregReport,
) -> LapregStatus {
    guard(|| {
        let b = &non_null(case, "case")?.0;
        let pose = RigidPose::try_from(non_null(pose, "pose")?)?;
        let out = non_null_mut(out, "out")?;
        let r = reprojection_error(&pose, b.landmarks3d(), &b.mesh, &b.landmarks2d, &b.camera)?;
        *out = LapregReport {
            ridge: nan_if_missing(r.ridge),
            ligament: nan_if_missing(r.ligament),
            combined: r.combined().unwrap_or(f64::NAN),
            hausdorff: nan_if_missing(r.hausdorff),
        };
        Ok(())
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lapreg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
