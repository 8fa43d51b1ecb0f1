//! Calls the C interface through its Rust symbols and inspects the generated header.

use std::ffi::CStr;
use std::ptr;

use oneshot_daug_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 256];
    unsafe { od_last_error_message(buf.as_mut_ptr(), buf.len()) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }
        .to_string_lossy()
        .into_owned()
}

struct Handles {
    world: *mut OdWorld,
    schedule: *mut OdSchedule,
}

impl Handles {
    fn new(std: f64) -> Self {
        let mut world = ptr::null_mut();
        let mut schedule = ptr::null_mut();
        unsafe {
            assert_eq!(od_world_new_default(std, &mut world), OdStatus::Ok);
            assert_eq!(
                od_schedule_new(1000, 1e-4, 0.02, &mut schedule),
                OdStatus::Ok
            );
        }
        Self { world, schedule }
    }
}

impl Drop for Handles {
    fn drop(&mut self) {
        unsafe {
            od_world_free(self.world);
            od_schedule_free(self.schedule);
        }
    }
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(od_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn world_shape_and_templates() {
    let h = Handles::new(0.65);
    let (mut w, mut hgt, mut k) = (0, 0, 0);
    unsafe {
        assert_eq!(
            od_world_shape(h.world, &mut w, &mut hgt, &mut k),
            OdStatus::Ok
        );
    }
    assert_eq!((w, hgt, k), (od_glyph_size(), od_glyph_size(), 16));
    let mut buf = vec![0.0; w * hgt];
    unsafe {
        assert_eq!(
            od_world_template(h.world, 0, buf.as_mut_ptr(), buf.len()),
            OdStatus::Ok
        );
        assert_eq!(
            od_world_template(h.world, 0, buf.as_mut_ptr(), 3),
            OdStatus::BufferTooSmall
        );
        assert_eq!(
            od_world_template(h.world, 99, buf.as_mut_ptr(), buf.len()),
            OdStatus::InvalidArgument
        );
    }
    let norm: f64 = buf.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!((norm - 6.0).abs() < 1e-9);
}

#[test]
fn custom_world_rejects_duplicates() {
    let data = [1.0, 0.0, 1.0, 0.0];
    let mut world = ptr::null_mut();
    let status = unsafe { od_world_new(data.as_ptr(), 2, 2, 1, 0.1, &mut world) };
    assert_eq!(status, OdStatus::InvalidArgument);
    assert!(!last_error().is_empty());
    let data = [1.0, 0.0, 0.0, 1.0];
    unsafe {
        assert_eq!(
            od_world_new(data.as_ptr(), 2, 2, 1, 0.1, &mut world),
            OdStatus::Ok
        );
        od_world_free(world);
    }
}

#[test]
fn null_pointers_are_reported() {
    let status = unsafe { od_world_new_default(0.5, ptr::null_mut()) };
    assert_eq!(status, OdStatus::NullPointer);
    assert!(last_error().contains("out"));
    let mut t = 0;
    assert_eq!(
        unsafe { od_eta_to_start_time(ptr::null(), 0.7, &mut t) },
        OdStatus::NullPointer
    );
}

#[test]
fn start_time_at_operating_point() {
    let h = Handles::new(0.65);
    let mut t = 0;
    unsafe {
        assert_eq!(od_eta_to_start_time(h.schedule, 0.7, &mut t), OdStatus::Ok);
        assert_eq!(
            od_eta_to_start_time(h.schedule, 1.5, &mut t),
            OdStatus::InvalidArgument
        );
    }
    assert_eq!(t, 255);
}

#[test]
fn augment_is_seeded_and_checks_sizes() {
    let h = Handles::new(0.65);
    let n = od_glyph_size() * od_glyph_size();
    let mut x = vec![0.0; n];
    unsafe { od_world_template(h.world, 4, x.as_mut_ptr(), n) };
    let p = od_aug_params_default();
    let (mut a, mut b, mut c) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    unsafe {
        assert_eq!(
            od_augment_once(h.world, h.schedule, x.as_ptr(), n, &p, 7, a.as_mut_ptr()),
            OdStatus::Ok
        );
        assert_eq!(
            od_augment_once(h.world, h.schedule, x.as_ptr(), n, &p, 7, b.as_mut_ptr()),
            OdStatus::Ok
        );
        assert_eq!(
            od_augment_once(h.world, h.schedule, x.as_ptr(), n, &p, 8, c.as_mut_ptr()),
            OdStatus::Ok
        );
        assert_eq!(
            od_augment_once(
                h.world,
                h.schedule,
                x.as_ptr(),
                n - 1,
                &p,
                7,
                a.as_mut_ptr()
            ),
            OdStatus::DimensionMismatch
        );
    }
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn benchmark_on_noiseless_world_is_perfect() {
    let h = Handles::new(0.0);
    let mut p = od_benchmark_params_default();
    p.mode = OdMode::None as u32;
    p.episodes = 20;
    let mut r = OdBenchmarkResult::default();
    unsafe {
        assert_eq!(
            od_run_benchmark(h.world, h.schedule, &p, 1, &mut r),
            OdStatus::Ok
        );
    }
    assert_eq!(r.mean, 1.0);
    assert_eq!(r.episodes, 20);
    assert_eq!(r.has_diversity, 0);
    p.mode = 9;
    assert_eq!(
        unsafe { od_run_benchmark(h.world, h.schedule, &p, 1, &mut r) },
        OdStatus::InvalidArgument
    );
}

#[test]
fn theory_entry_points() {
    let (mut tables, mut gap) = (0, 1.0);
    unsafe {
        assert_eq!(
            od_prop1_exhaustive(3, 6, &mut tables, &mut gap),
            OdStatus::Ok
        );
    }
    assert!(tables > 0 && gap <= 1e-12);
    let (mut est, mut se) = (0.0, 0.0);
    unsafe {
        assert_eq!(od_prop3(2, 4, 5000, 1, &mut est, &mut se), OdStatus::Ok);
        assert_eq!(
            od_prop3(2, 1, 5000, 1, &mut est, &mut se),
            OdStatus::Precondition
        );
    }
    assert!(est - 3.0 * se > 0.5);
}

#[test]
fn header_declares_the_interface() {
    let header = std::fs::read_to_string(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/include/oneshot_daug.h"
    ))
    .unwrap();
    for name in [
        "od_world_new_default",
        "od_world_free",
        "od_schedule_new",
        "od_augment_once",
        "od_run_benchmark",
        "od_prop1_exhaustive",
        "od_prop3",
        "od_last_error_message",
        "typedef struct OdWorld OdWorld",
        "OD_STATUS_OK",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}

#[test]
fn header_compiles_as_c() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(
        &src,
        "#include <stdio.h>\n#include \"oneshot_daug.h\"\nint main(void) { OdWorld *w = 0; OdStatus s = od_world_new_default(0.5, &w); od_world_free(w); return (int)s; }\n",
    )
    .unwrap();
    let status = match std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include"))
        .arg(&src)
        .status()
    {
        Ok(s) => s,
        Err(_) => {
            eprintln!("no C compiler on PATH; header syntax not checked");
            return;
        }
    };
    assert!(status.success());
}
