use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use perfhom_ffi::*;

const SMALL: &str = r#"
[geometry]
epsilon = "1/4"
cells_per_period = 16
Theta = 0.25

[physics]
T = 0.2
dt = 0.01

[ic]
mode = "constant"
values = [1.0, 1.0, 0.5]

[run]
snapshots = 3
"#;

fn config(text: &str) -> (PerfhomStatus, *mut PerfhomConfig) {
    let c = CString::new(text).unwrap();
    let mut cfg = ptr::null_mut();
    let s = unsafe { perfhom_config_from_toml(c.as_ptr(), &mut cfg) };
    (s, cfg)
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(perfhom_last_error_message()) }.to_string_lossy().into_owned()
}

#[test]
fn tensor_without_holes_is_identity() {
    let mut t = ptr::null_mut();
    assert_eq!(unsafe { perfhom_cell_homogenize(2, 0.0, 16, &mut t) }, PerfhomStatus::Ok);
    let (mut dim, mut theta, mut d) = (0u32, 0.0, [0.0; 4]);
    unsafe {
        assert_eq!(perfhom_tensor_dim(t, &mut dim), PerfhomStatus::Ok);
        assert_eq!(perfhom_tensor_porosity(t, &mut theta), PerfhomStatus::Ok);
        for (k, v) in d.iter_mut().enumerate() {
            assert_eq!(perfhom_tensor_entry(t, k as u32 / 2, k as u32 % 2, v), PerfhomStatus::Ok);
        }
        assert_eq!(perfhom_tensor_entry(t, 2, 0, &mut theta), PerfhomStatus::OutOfRange);
        perfhom_tensor_free(t);
    }
    assert_eq!(dim, 2);
    assert_eq!(theta, 1.0);
    for (k, v) in d.iter().enumerate() {
        let want = if k == 0 || k == 3 { 1.0 } else { 0.0 };
        assert!((v - want).abs() < 1e-12, "D[{k}] = {v}");
    }
}

#[test]
fn perforated_tensor_is_symmetric_and_contracted() {
    let mut t = ptr::null_mut();
    assert_eq!(unsafe { perfhom_cell_homogenize(2, 0.25, 32, &mut t) }, PerfhomStatus::Ok);
    let (mut d01, mut d10, mut d00) = (0.0, 0.0, 0.0);
    unsafe {
        perfhom_tensor_entry(t, 0, 1, &mut d01);
        perfhom_tensor_entry(t, 1, 0, &mut d10);
        perfhom_tensor_entry(t, 0, 0, &mut d00);
        perfhom_tensor_free(t);
    }
    assert!((d01 - d10).abs() < 1e-10);
    assert!(d00 > 0.5 && d00 < 1.0);
}

#[test]
fn bad_configuration_reports_all_fields() {
    let (s, cfg) = config("[geometry]\nTheta = 0.3\n[physics]\ndt = -1.0\n");
    assert_eq!(s, PerfhomStatus::Config);
    assert!(cfg.is_null());
    let msg = last_error();
    assert!(msg.contains("hole_radius") && msg.contains("dt"), "{msg}");

    let (s, _) = config("[nonsense]\n");
    assert_eq!(s, PerfhomStatus::Config);
}

#[test]
fn resolved_configuration_round_trips() {
    let (s, cfg) = config(SMALL);
    assert_eq!(s, PerfhomStatus::Ok);
    let mut text = ptr::null_mut();
    let (mut n, mut eps) = (0usize, 0.0);
    unsafe {
        assert_eq!(perfhom_config_to_toml(cfg, &mut text), PerfhomStatus::Ok);
        assert_eq!(perfhom_config_epsilon_count(cfg, &mut n), PerfhomStatus::Ok);
        assert_eq!(perfhom_config_epsilon(cfg, 0, &mut eps), PerfhomStatus::Ok);
        assert_eq!(perfhom_config_epsilon(cfg, 1, &mut eps), PerfhomStatus::OutOfRange);
    }
    assert_eq!((n, eps), (1, 0.25));
    let (s2, cfg2) = config(unsafe { CStr::from_ptr(text) }.to_str().unwrap());
    assert_eq!(s2, PerfhomStatus::Ok);
    unsafe {
        perfhom_string_free(text);
        perfhom_config_free(cfg);
        perfhom_config_free(cfg2);
    }
}

#[test]
fn micro_and_macro_runs_through_handles() {
    let (_, cfg) = config(SMALL);
    let (mut micro, mut mac) = (ptr::null_mut(), ptr::null_mut());
    unsafe {
        assert_eq!(perfhom_micro_run(cfg, 0.25, &mut micro), PerfhomStatus::Ok);
        assert_eq!(perfhom_macro_run(cfg, &mut mac), PerfhomStatus::Ok);
        assert_eq!(perfhom_micro_run(cfg, -1.0, &mut micro), PerfhomStatus::InvalidArgument);
    }
    for run in [micro, mac] {
        let mut sum = PerfhomRunSummary::default();
        assert_eq!(unsafe { perfhom_run_summary(run, &mut sum) }, PerfhomStatus::Ok);
        assert!((sum.final_time - 0.2).abs() < 1e-12);
        assert!(sum.max_balance_residual <= 1e-12, "{}", sum.max_balance_residual);
        assert!(sum.min_value >= 0.0);
        assert!(sum.inflow[0] > 0.0);
        assert_eq!(sum.snapshots, 3);
        let mut ext = [0usize; 2];
        unsafe {
            assert_eq!(perfhom_run_shape(run, ext.as_mut_ptr(), 2), PerfhomStatus::Ok);
            assert_eq!(perfhom_run_shape(run, ext.as_mut_ptr(), 1), PerfhomStatus::OutOfRange);
        }
        assert_eq!(ext[0] * ext[1], sum.points);
        let mut buf = vec![0.0; sum.points];
        let mut t = -1.0;
        unsafe {
            assert_eq!(perfhom_run_snapshot(run, 2, 2, buf.as_mut_ptr(), buf.len(), &mut t), PerfhomStatus::Ok);
            assert_eq!(perfhom_run_snapshot(run, 3, 0, buf.as_mut_ptr(), buf.len(), &mut t), PerfhomStatus::OutOfRange);
            assert_eq!(perfhom_run_snapshot(run, 0, 3, buf.as_mut_ptr(), buf.len(), &mut t), PerfhomStatus::OutOfRange);
            assert_eq!(perfhom_run_snapshot(run, 0, 0, buf.as_mut_ptr(), 1, &mut t), PerfhomStatus::OutOfRange);
        }
        assert!((t - 0.2).abs() < 1e-12);
        assert!(buf.iter().all(|v| v.is_finite() && *v >= 0.0));
        let mut csv = ptr::null_mut();
        unsafe {
            assert_eq!(perfhom_run_record_csv(run, &mut csv), PerfhomStatus::Ok);
            assert!(CStr::from_ptr(csv).to_str().unwrap().starts_with("step,t,"));
            perfhom_string_free(csv);
            perfhom_run_free(run);
        }
    }
    unsafe { perfhom_config_free(cfg) };
}

#[test]
fn null_handles_are_rejected() {
    let mut x = 0.0;
    let mut sum = PerfhomRunSummary::default();
    unsafe {
        assert_eq!(perfhom_tensor_porosity(ptr::null(), &mut x), PerfhomStatus::NullPointer);
        assert_eq!(perfhom_run_summary(ptr::null(), &mut sum), PerfhomStatus::NullPointer);
        assert_eq!(perfhom_config_from_toml(ptr::null(), &mut ptr::null_mut()), PerfhomStatus::NullPointer);
        perfhom_tensor_free(ptr::null_mut());
        perfhom_run_free(ptr::null_mut());
        perfhom_config_free(ptr::null_mut());
        perfhom_string_free(ptr::null_mut());
    }
}

#[test]
fn header_declares_every_entry_point_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/perfhom.h");
    let text = std::fs::read_to_string(&header).unwrap();
    let src = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("src/lib.rs")).unwrap();
    for line in src.lines().filter(|l| l.contains("extern \"C\" fn perfhom_")) {
        let name = line.split("fn ").nth(1).unwrap().split('(').next().unwrap();
        assert!(text.contains(&format!("{name}(")), "{name} missing from header");
    }
    let Ok(cc) = which_cc() else { return };
    let probe = std::env::temp_dir().join(format!("perfhom-header-{}.c", std::process::id()));
    std::fs::write(&probe, "#include \"perfhom.h\"\nint main(void) { PerfhomTensor *t = 0; return perfhom_cell_homogenize(2, 0.25, 16, &t) == PERFHOM_STATUS_OK ? 0 : 1; }\n").unwrap();
    let out = Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header.parent().unwrap())
        .arg(&probe)
        .output()
        .unwrap();
    std::fs::remove_file(&probe).ok();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn which_cc() -> Result<&'static str, ()> {
    for cc in ["cc", "gcc", "clang"] {
        if Command::new(cc).arg("--version").output().is_ok_and(|o| o.status.success()) {
            return Ok(cc);
        }
    }
    Err(())
}
