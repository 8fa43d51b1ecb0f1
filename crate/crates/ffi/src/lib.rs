//! C interface to the augmentation pipeline and the theory audits.
//!
//! Worlds and schedules are opaque handles created and freed through this
//! interface. Every fallible call returns an [`OdStatus`]; on failure the
//! message is kept per thread and read with [`od_last_error_message`].
//! Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use oneshot_daug::augment::{augment_once, AugConfig};
use oneshot_daug::diffusion::{eta_to_start_time, NoiseLevel, SigmaPolicy, VarianceSchedule};
use oneshot_daug::fsl::{run_benchmark, AugMode, BenchmarkConfig, EpisodeSpec};
use oneshot_daug::geometry::ShapeTweakRanges;
use oneshot_daug::rng::stream;
use oneshot_daug::theory::radius::{verify_prop3, RadiusDistribution};
use oneshot_daug::theory::risk::exhaustive_prop1;
use oneshot_daug::world::{default_glyphs, GmmWorld, GLYPH_SIZE};
use oneshot_daug::{Error, RasterImage};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Precondition = 4,
    Io = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Source of the extra views in a benchmark.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OdMode {
    None = 0,
    OneShotDaug = 1,
    Traditional = 2,
    Oracle = 3,
}

/// Opaque synthetic image world.
pub struct OdWorld(GmmWorld);

/// Opaque noise schedule.
pub struct OdSchedule(VarianceSchedule);

/// Augmentation settings; `deterministic` and `shape_tweak` are 0 or 1.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct OdAugParams {
    pub eta: f64,
    pub lambda_img: f64,
    pub deterministic: i32,
    pub shape_tweak: i32,
}

/// Benchmark settings; `mode` takes an [`OdMode`] value.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct OdBenchmarkParams {
    pub mode: u32,
    pub way: usize,
    pub shot: usize,
    pub queries: usize,
    pub episodes: usize,
    pub k_sup: usize,
    pub k_qry: usize,
    pub original_weight: f64,
    pub aug: OdAugParams,
}

/// Benchmark summary; `diversity` is meaningful only when `has_diversity` is 1.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct OdBenchmarkResult {
    pub mean: f64,
    pub std_error: f64,
    pub ci95: f64,
    pub diversity: f64,
    pub has_diversity: i32,
    pub episodes: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn fail(status: OdStatus, msg: impl Into<String>) -> OdStatus {
    set_error(msg.into());
    status
}

fn from_error(e: Error) -> OdStatus {
    let status = match &e {
        Error::InvalidArgument(_) | Error::Config(_) => OdStatus::InvalidArgument,
        Error::DimensionMismatch(_) => OdStatus::DimensionMismatch,
        Error::Precondition(_) => OdStatus::Precondition,
        Error::Io { .. } | Error::Csv(_) | Error::Format { .. } => OdStatus::Io,
    };
    fail(status, e.to_string())
}

/// Runs `f`, converting panics into [`OdStatus::Panic`].
fn guard(f: impl FnOnce() -> OdStatus) -> OdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => {
            if status == OdStatus::Ok {
                set_error(String::new());
            }
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(OdStatus::Panic, format!("panic: {msg}"))
        }
    }
}

macro_rules! non_null {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            return fail(OdStatus::NullPointer, concat!(stringify!($p), " is null"));
        })+
    };
}

macro_rules! try_od {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(e) => return from_error(e),
        }
    };
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn od_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copies the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `len`) and returns the full message length plus one.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn od_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        bytes.len() + 1
    })
}

/// Creates the default 16-class glyph world with per-pixel spread `std`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn od_world_new_default(std: f64, out: *mut *mut OdWorld) -> OdStatus {
    guard(|| {
        non_null!(out);
        let w = try_od!(GmmWorld::new(default_glyphs(), std));
        *out = Box::into_raw(Box::new(OdWorld(w)));
        OdStatus::Ok
    })
}

/// Creates a world from `count` row-major templates of `width x height` pixels.
///
/// # Safety
/// `templates` must point to `count * width * height` readable doubles and
/// `out` to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn od_world_new(
    templates: *const f64,
    count: usize,
    width: usize,
    height: usize,
    std: f64,
    out: *mut *mut OdWorld,
) -> OdStatus {
    guard(|| {
        non_null!(templates, out);
        if count == 0 || width == 0 || height == 0 {
            return fail(
                OdStatus::InvalidArgument,
                "count, width and height must be positive",
            );
        }
        let Some(len) = count.checked_mul(width).and_then(|v| v.checked_mul(height)) else {
            return fail(OdStatus::InvalidArgument, "template size overflows");
        };
        let data = std::slice::from_raw_parts(templates, len);
        let imgs = try_od!(data
            .chunks(width * height)
            .map(|c| RasterImage::new(width, height, c.to_vec()))
            .collect::<Result<Vec<_>, _>>());
        let w = try_od!(GmmWorld::new(imgs, std));
        *out = Box::into_raw(Box::new(OdWorld(w)));
        OdStatus::Ok
    })
}

/// Frees a world; null is ignored.
///
/// # Safety
/// `world` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn od_world_free(world: *mut OdWorld) {
    if !world.is_null() {
        drop(Box::from_raw(world));
    }
}

/// Reports the template width, height and class count.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn od_world_shape(
    world: *const OdWorld,
    width: *mut usize,
    height: *mut usize,
    classes: *mut usize,
) -> OdStatus {
    guard(|| {
        non_null!(world, width, height, classes);
        let w = &(*world).0;
        *width = w.width();
        *height = w.height();
        *classes = w.class_count();
        OdStatus::Ok
    })
}

/// Copies template `k` into `out`, which holds `len` doubles.
///
/// # Safety
/// `world` must be a valid handle and `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn od_world_template(
    world: *const OdWorld,
    k: usize,
    out: *mut f64,
    len: usize,
) -> OdStatus {
    guard(|| {
        non_null!(world, out);
        let w = &(*world).0;
        if k >= w.class_count() {
            return fail(OdStatus::InvalidArgument, format!("class {k} out of range"));
        }
        let t = w.template(k);
        if len < t.len() {
            return fail(
                OdStatus::BufferTooSmall,
                format!("need {} doubles", t.len()),
            );
        }
        std::slice::from_raw_parts_mut(out, t.len()).copy_from_slice(t.pixels());
        OdStatus::Ok
    })
}

/// Creates a linear noise schedule.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn od_schedule_new(
    steps: usize,
    beta_start: f64,
    beta_end: f64,
    out: *mut *mut OdSchedule,
) -> OdStatus {
    guard(|| {
        non_null!(out);
        let s = try_od!(VarianceSchedule::linear(steps, beta_start, beta_end));
        *out = Box::into_raw(Box::new(OdSchedule(s)));
        OdStatus::Ok
    })
}

/// Frees a schedule; null is ignored.
///
/// # Safety
/// `schedule` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn od_schedule_free(schedule: *mut OdSchedule) {
    if !schedule.is_null() {
        drop(Box::from_raw(schedule));
    }
}

/// Maps a noise level in `[0, 1]` to its start step.
///
/// # Safety
/// `schedule` must be a valid handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn od_eta_to_start_time(
    schedule: *const OdSchedule,
    eta: f64,
    out: *mut usize,
) -> OdStatus {
    guard(|| {
        non_null!(schedule, out);
        let eta = try_od!(NoiseLevel::new(eta));
        *out = eta_to_start_time(&(*schedule).0, eta);
        OdStatus::Ok
    })
}

fn aug_config(p: &OdAugParams) -> Result<AugConfig, Error> {
    let cfg = AugConfig {
        eta: NoiseLevel::new(p.eta)?,
        lambda_img: p.lambda_img,
        sigma_policy: if p.deterministic != 0 {
            SigmaPolicy::Deterministic
        } else {
            SigmaPolicy::default()
        },
        ranges: if p.shape_tweak != 0 {
            ShapeTweakRanges::default()
        } else {
            ShapeTweakRanges::none()
        },
        ..AugConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Default augmentation settings.
#[no_mangle]
pub extern "C" fn od_aug_params_default() -> OdAugParams {
    let d = AugConfig::default();
    OdAugParams {
        eta: d.eta.value(),
        lambda_img: d.lambda_img,
        deterministic: 0,
        shape_tweak: 1,
    }
}

/// Default benchmark settings (5-way 1-shot, 3 queries, 2000 episodes, two views each side).
#[no_mangle]
pub extern "C" fn od_benchmark_params_default() -> OdBenchmarkParams {
    let d = BenchmarkConfig::default();
    OdBenchmarkParams {
        mode: OdMode::OneShotDaug as u32,
        way: d.spec.way,
        shot: d.spec.shot,
        queries: d.spec.queries,
        episodes: d.spec.episodes,
        k_sup: d.k_sup,
        k_qry: d.k_qry,
        original_weight: d.original_weight,
        aug: od_aug_params_default(),
    }
}

/// Generates one variant of `image` (row-major, world-sized) into `out`.
///
/// # Safety
/// Handles must be valid, `image` must point to `len` doubles and `out` to
/// `len` writable doubles, `params` must be valid.
#[no_mangle]
pub unsafe extern "C" fn od_augment_once(
    world: *const OdWorld,
    schedule: *const OdSchedule,
    image: *const f64,
    len: usize,
    params: *const OdAugParams,
    seed: u64,
    out: *mut f64,
) -> OdStatus {
    guard(|| {
        non_null!(world, schedule, image, params, out);
        let w = &(*world).0;
        if len != w.pixel_count() {
            return fail(
                OdStatus::DimensionMismatch,
                format!("image has {len} pixels, world has {}", w.pixel_count()),
            );
        }
        let x = try_od!(RasterImage::new(
            w.width(),
            w.height(),
            std::slice::from_raw_parts(image, len).to_vec()
        ));
        let cfg = try_od!(aug_config(&*params));
        let y = try_od!(augment_once(
            &x,
            &cfg,
            w,
            &(*schedule).0,
            &mut stream(seed, &[])
        ));
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(y.pixels());
        OdStatus::Ok
    })
}

/// Runs the few-shot benchmark.
///
/// # Safety
/// Handles and pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn od_run_benchmark(
    world: *const OdWorld,
    schedule: *const OdSchedule,
    params: *const OdBenchmarkParams,
    seed: u64,
    out: *mut OdBenchmarkResult,
) -> OdStatus {
    guard(|| {
        non_null!(world, schedule, params, out);
        let p = &*params;
        let cfg = BenchmarkConfig {
            spec: EpisodeSpec {
                way: p.way,
                shot: p.shot,
                queries: p.queries,
                episodes: p.episodes,
            },
            mode: match p.mode {
                m if m == OdMode::None as u32 => AugMode::None,
                m if m == OdMode::OneShotDaug as u32 => AugMode::OneShotDaug,
                m if m == OdMode::Traditional as u32 => AugMode::Traditional,
                m if m == OdMode::Oracle as u32 => AugMode::Oracle,
                m => return fail(OdStatus::InvalidArgument, format!("unknown mode {m}")),
            },
            k_sup: p.k_sup,
            k_qry: p.k_qry,
            original_weight: p.original_weight,
            aug: try_od!(aug_config(&p.aug)),
            ..BenchmarkConfig::default()
        };
        let s = try_od!(run_benchmark(&(*world).0, &(*schedule).0, &cfg, seed));
        *out = OdBenchmarkResult {
            mean: s.mean,
            std_error: s.stderr,
            ci95: s.ci95,
            diversity: s.diversity.unwrap_or(0.0),
            has_diversity: s.diversity.is_some() as i32,
            episodes: s.episodes.len(),
        };
        OdStatus::Ok
    })
}

/// Checks the risk decomposition on every table with up to `max_outcomes`
/// outcomes and probabilities in multiples of `1 / denominator`.
///
/// # Safety
/// `tables` and `max_gap` must be writable.
#[no_mangle]
pub unsafe extern "C" fn od_prop1_exhaustive(
    max_outcomes: usize,
    denominator: u32,
    tables: *mut usize,
    max_gap: *mut f64,
) -> OdStatus {
    guard(|| {
        non_null!(tables, max_gap);
        if max_outcomes == 0 || denominator == 0 {
            return fail(
                OdStatus::InvalidArgument,
                "max_outcomes and denominator must be positive",
            );
        }
        let a = exhaustive_prop1(max_outcomes, denominator);
        *tables = a.tables;
        *max_gap = a.max_gap;
        OdStatus::Ok
    })
}

/// Estimates the probability that averaging one extra view shrinks the
/// largest feature norm, for standard normal features.
///
/// # Safety
/// `estimate` and `std_error` must be writable.
#[no_mangle]
pub unsafe extern "C" fn od_prop3(
    dim: usize,
    m: usize,
    trials: usize,
    seed: u64,
    estimate: *mut f64,
    std_error: *mut f64,
) -> OdStatus {
    guard(|| {
        non_null!(estimate, std_error);
        let r = try_od!(verify_prop3(
            dim,
            m,
            trials,
            &RadiusDistribution::StandardNormal,
            seed
        ));
        *estimate = r.estimate;
        *std_error = r.stderr;
        OdStatus::Ok
    })
}

/// Side length of the default glyph templates.
#[no_mangle]
pub extern "C" fn od_glyph_size() -> usize {
    GLYPH_SIZE
}
