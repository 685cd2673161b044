use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use rdaudit_ffi::*;

const HEAT: &str = r#"
d = [1.0]
audits = ["mass", "key_estimate", "pierre_l2"]

[system]
kind = "inert"
species = 1

[grid]
cells = [32]

[init]
kind = "cosine-mix"
base = [1.0]
amplitude = [1.0]

[time]
T = 0.1
dt = 1e-3
"#;

fn last_error() -> String {
    let p = rd_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn load(text: &str) -> Result<*mut RdExperiment, RdStatus> {
    let text = CString::new(text).unwrap();
    let mut exp = ptr::null_mut();
    match unsafe { rd_experiment_from_toml(text.as_ptr(), ptr::null(), &mut exp) } {
        RdStatus::Ok => Ok(exp),
        s => {
            assert!(exp.is_null());
            Err(s)
        }
    }
}

#[test]
fn run_through_the_c_interface() {
    let exp = load(HEAT).unwrap();
    unsafe {
        assert_eq!(rd_experiment_species(exp), 1);
        assert_eq!(rd_experiment_cells(exp), 32);
        let cfg = rd_experiment_config(exp);
        assert!(CStr::from_ptr(cfg).to_str().unwrap().contains("stride = 10"));
        rd_string_free(cfg);

        let mut run = ptr::null_mut();
        assert_eq!(rd_experiment_run(exp, ptr::null(), &mut run), RdStatus::Ok);
        assert!(rd_run_passed(run));
        assert_eq!(rd_run_steps(run), 100);
        assert!((rd_run_final_time(run) - 0.1).abs() < 1e-15);

        let n = rd_run_audit_count(run);
        assert!(n >= 4);
        let mut names = Vec::new();
        for i in 0..n {
            let mut row = RdAuditRow {
                name: ptr::null(),
                lhs: 0.0,
                rhs: 0.0,
                margin: 0.0,
                tol: 0.0,
                status: RdAuditStatus::Fail,
            };
            assert_eq!(rd_run_audit(run, i, &mut row), RdStatus::Ok);
            assert_ne!(row.status, RdAuditStatus::Fail);
            names.push(CStr::from_ptr(row.name).to_str().unwrap().to_string());
        }
        assert!(names.iter().any(|s| s == "key_estimate"));
        let mut row = std::mem::zeroed::<RdAuditRow>();
        assert_eq!(rd_run_audit(run, n, &mut row), RdStatus::OutOfRange);

        // mean is conserved exactly by the Neumann solve
        let mut u = vec![0.0; 32];
        assert_eq!(rd_run_final_state(run, 0, u.as_mut_ptr(), u.len()), RdStatus::Ok);
        let mean = u.iter().sum::<f64>() / 32.0;
        assert!((mean - 1.0).abs() < 1e-12);
        assert_eq!(rd_run_final_state(run, 0, u.as_mut_ptr(), 31), RdStatus::OutOfRange);
        assert_eq!(rd_run_final_state(run, 1, u.as_mut_ptr(), 32), RdStatus::OutOfRange);

        let csv = rd_run_csv(run);
        assert!(CStr::from_ptr(csv).to_str().unwrap().starts_with("step,t,dt,species,mass,l2,min,max,f_l1,clipped\n"));
        rd_string_free(csv);
        let report = rd_run_report(run);
        assert!(CStr::from_ptr(report).to_str().unwrap().starts_with("status pass"));
        rd_string_free(report);

        rd_run_free(run);
        rd_experiment_free(exp);
    }
}

#[test]
fn run_writes_files_when_asked() {
    let dir = tempfile::tempdir().unwrap();
    let exp = load(HEAT).unwrap();
    let out = CString::new(dir.path().to_str().unwrap()).unwrap();
    let mut run = ptr::null_mut();
    unsafe {
        assert_eq!(rd_experiment_run(exp, out.as_ptr(), &mut run), RdStatus::Ok);
        rd_run_free(run);
        rd_experiment_free(exp);
    }
    assert!(dir.path().join("diagnostics.csv").exists());
    assert!(dir.path().join("report.txt").exists());
}

#[test]
fn errors_map_to_status_codes() {
    assert_eq!(load("d = [1.0]").unwrap_err(), RdStatus::InvalidConfig);
    assert!(last_error().contains("invalid configuration"));

    let growing = HEAT
        .replace("kind = \"inert\"\nspecies = 1", "kind = \"custom\"\nweights = [1.0]\nterms = [[{ coef = 5.0, powers = [[0, 1.0]] }]]\nmass_class = { kind = \"linear-growth\", c0 = 5.0 }")
        .replace("dt = 1e-3", "dt = 1e-3\nblowup_threshold = 2.0")
        .replace("audits = [\"mass\", \"key_estimate\", \"pierre_l2\"]", "audits = []");
    let exp = load(&growing).unwrap();
    let mut run = ptr::null_mut();
    unsafe {
        assert_eq!(rd_experiment_run(exp, ptr::null(), &mut run), RdStatus::BlowUp);
        assert!(run.is_null());
        rd_experiment_free(exp);
    }
    assert!(last_error().contains("blow-up"));

    let mut exp = ptr::null_mut();
    unsafe {
        assert_eq!(rd_experiment_from_toml(ptr::null(), ptr::null(), &mut exp), RdStatus::NullPointer);
        assert_eq!(rd_experiment_run(ptr::null(), ptr::null(), &mut ptr::null_mut()), RdStatus::NullPointer);
        let missing = CString::new("/nonexistent/config.toml").unwrap();
        assert_eq!(rd_experiment_load(missing.as_ptr(), &mut exp), RdStatus::InvalidConfig);
        // NULL handles are harmless
        rd_experiment_free(ptr::null_mut());
        rd_run_free(ptr::null_mut());
        rd_string_free(ptr::null_mut());
        assert_eq!(rd_experiment_species(ptr::null()), 0);
        assert!(!rd_run_passed(ptr::null()));
    }
}

#[test]
fn last_error_is_per_thread() {
    assert_eq!(load("not toml [").unwrap_err(), RdStatus::InvalidConfig);
    let other = std::thread::spawn(|| rd_last_error().is_null()).join().unwrap();
    assert!(other);
    assert!(!rd_last_error().is_null());
}

#[test]
fn hminus1_norm_of_cosine() {
    let n = 256;
    let v: Vec<f64> = (0..n).map(|i| (std::f64::consts::PI * (i as f64 + 0.5) / n as f64).cos()).collect();
    let mut out = 0.0;
    assert_eq!(unsafe { rd_hminus1_norm_1d(v.as_ptr(), n, 1.0, &mut out) }, RdStatus::Ok);
    let exact = 1.0 / (std::f64::consts::PI * 2f64.sqrt());
    assert!((out - exact).abs() < 1e-2 * exact);
    assert_eq!(unsafe { rd_hminus1_norm_1d(v.as_ptr(), 2, 1.0, &mut out) }, RdStatus::InvalidConfig);
}

#[test]
fn version_is_the_package_version() {
    let v = unsafe { CStr::from_ptr(rd_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_the_api_and_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/rdaudit.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for f in ["rd_experiment_from_toml", "rd_experiment_run", "rd_run_audit", "rd_last_error", "rd_string_free"] {
        assert!(text.contains(&format!("{f}(")), "{f} missing from header");
    }
    assert!(text.contains("typedef struct RdExperiment RdExperiment;"));

    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"rdaudit.h\"\n\
         int main(void) {\n\
             RdExperiment *e = NULL;\n\
             RdStatus s = rd_experiment_from_toml(\"\", NULL, &e);\n\
             RdAuditRow row;\n\
             (void)row;\n\
             return s == RD_STATUS_OK ? 0 : 1;\n\
         }\n",
    )
    .unwrap();
    let Ok(out) = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header.parent().unwrap())
        .arg(&src)
        .output()
    else {
        eprintln!("no C compiler found; skipping the compile check");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
