//! Acceptance suite: one test per criterion, each printing a pass/fail line
//! with the measured quantities. Heavy pipelines (the stationary solve, the
//! benchmark training, the tube comparison) run once behind shared fixtures;
//! the determinism criterion reruns them and compares artifacts byte for
//! byte.
//!
//! Run with `cargo test --test acceptance -- --nocapture` for the measured
//! numbers; the suite is part of the default workspace test run.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use hjrl_cli::config::ExperimentConfig;
use hjrl_cli::{cmd_compare, cmd_properties, cmd_solve_pde, cmd_stage1, cmd_train_rl};
use hjrl_core::grid::read_field;
use hjrl_core::Real;

fn work_dir(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

// ------------------------------------------------------------------ fixtures

/// Benchmark Stage II pipeline with the paper defaults: dt = 0.05, rate = 1,
/// ROI [-2.5, 2.5]^2 at 201x201, r = 1, alpha = 1, a_max = 1, seed 0.
struct Stage2Fixture {
    cfg: ExperimentConfig,
    pde_dir: PathBuf,
    rl_dir: PathBuf,
    cmp_dir: PathBuf,
    pde: hjrl_cli::SolvePdeReport,
    compare: hjrl_cli::CompareReport,
    pde_secs: f64,
    train_secs: f64,
}

fn stage2() -> &'static Stage2Fixture {
    static FIXTURE: OnceLock<Stage2Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let cfg = ExperimentConfig::default();
        assert_eq!(
            (cfg.dt, cfg.rate, cfg.nx, cfg.ny, cfg.radius, cfg.scale, cfg.a_max),
            (0.05, 1.0, 201, 201, 1.0, 1.0, 1.0),
            "stage II fixture must run the benchmark constants"
        );
        let pde_dir = work_dir("pde");
        let rl_dir = work_dir("rl");
        let cmp_dir = work_dir("cmp");

        let t0 = Instant::now();
        let pde = cmd_solve_pde(&cfg, &pde_dir).expect("pde solve");
        let pde_secs = t0.elapsed().as_secs_f64();

        let t0 = Instant::now();
        let train = cmd_train_rl(&cfg, &rl_dir).expect("training");
        let train_secs = t0.elapsed().as_secs_f64();
        assert!(
            train.non_increasing_fraction >= 0.8,
            "probe TD residual must be non-increasing (within jitter) in 80% of measurements, got {}",
            train.non_increasing_fraction
        );

        let compare = cmd_compare(
            &cfg,
            &pde.field_path,
            &train.checkpoint_path,
            &cmp_dir,
        )
        .expect("compare");

        Stage2Fixture {
            cfg,
            pde_dir,
            rl_dir,
            cmp_dir,
            pde,
            compare,
            pde_secs,
            train_secs,
        }
    })
}

/// Stage I fixture: 51x51 grid over [-10, 10]^2, horizon 1.0.
struct Stage1Fixture {
    cfg: ExperimentConfig,
    dir: PathBuf,
    report: hjrl_cli::Stage1Report,
    secs: f64,
}

fn stage1_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.x_min = -10.0;
    cfg.x_max = 10.0;
    cfg.y_min = -10.0;
    cfg.y_max = 10.0;
    cfg.nx = 51;
    cfg.ny = 51;
    cfg
}

fn stage1() -> &'static Stage1Fixture {
    static FIXTURE: OnceLock<Stage1Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let cfg = stage1_config();
        let dir = work_dir("stage1");
        let t0 = Instant::now();
        let report = cmd_stage1(&cfg, &dir).expect("stage1");
        let secs = t0.elapsed().as_secs_f64();
        Stage1Fixture {
            cfg,
            dir,
            report,
            secs,
        }
    })
}

fn properties() -> &'static hjrl_cli::PropertiesReport {
    static FIXTURE: OnceLock<hjrl_cli::PropertiesReport> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let cfg = ExperimentConfig::default();
        cmd_properties(&cfg, &work_dir("properties")).expect("properties")
    })
}

// ------------------------------------------------------------------ criteria

#[test]
fn criterion_01_stage2_error_reproduction() {
    let fx = stage2();
    let (max_abs, mean_abs) = (fx.compare.max_abs, fx.compare.mean_abs);
    println!(
        "criterion 1: max|W - V| = {max_abs:.4} (<= 0.15), mean = {mean_abs:.4} (<= 0.04); \
         paper reference 0.1006 / 0.0215; pde {:.1}s, training {:.1}s",
        fx.pde_secs, fx.train_secs
    );
    assert!(fx.pde.converged, "stationary solve must converge");
    assert!(max_abs <= 0.15, "max error {max_abs}");
    assert!(mean_abs <= 0.04, "mean error {mean_abs}");
    assert!(fx.pde_secs <= 120.0, "pde took {:.1}s", fx.pde_secs);
    assert!(fx.train_secs <= 900.0, "training took {:.1}s", fx.train_secs);
}

#[test]
fn criterion_02_contraction_suite() {
    let p = properties();
    println!(
        "criterion 2: contraction violations = {} over 50 pairs x {{0.5,1,2}} x {{0.025,0.05,0.1}} \
         ({:.1}s, <= 30s)",
        p.contraction_violations, p.contraction_secs
    );
    assert_eq!(p.contraction_violations, 0);
    assert!(p.contraction_secs <= 30.0);
}

#[test]
fn criterion_03_geometric_convergence() {
    let fx = stage2();
    let gamma = (-fx.cfg.rate * fx.cfg.dt).exp();
    let mut worst: Real = Real::NEG_INFINITY;
    for w in fx.pde.deltas[1..].windows(2) {
        worst = worst.max(w[1] - gamma * w[0]);
    }
    println!(
        "criterion 3: max(deltas[k+1] - gamma deltas[k]) = {worst:.3e} (<= 1e-12) over {} iterations",
        fx.pde.iterations
    );
    assert!(worst <= 1e-12, "geometric rate violated by {worst:e}");
}

#[test]
fn criterion_04_monotone_backup() {
    let p = properties();
    println!(
        "criterion 4: monotonicity violations = {} over 50 ordered pairs ({:.1}s, <= 10s)",
        p.monotonicity_violations, p.monotonicity_secs
    );
    assert_eq!(p.monotonicity_violations, 0);
    assert!(p.monotonicity_secs <= 10.0);
}

#[test]
fn criterion_05_residual_consistency() {
    let p = properties();
    println!(
        "criterion 5: gap-ratio violations = {} over 20 probes x sigma {{0.1,0.05,0.025,0.0125}} \
         ({:.1}s, <= 10s)",
        p.consistency_violations, p.consistency_secs
    );
    assert_eq!(p.consistency_violations, 0);
    assert!(p.consistency_secs <= 10.0);
}

#[test]
fn criterion_06_stage1_brt_equivalence() {
    let fx = stage1();
    println!(
        "criterion 6: travel vs oracle mask on 51x51 X_10: {} disagreements, {} out of band \
         (= 0) ({:.1}s, <= 120s)",
        fx.report.oracle_disagreements, fx.report.oracle_out_of_band, fx.secs
    );
    assert_eq!(fx.report.oracle_out_of_band, 0);
    assert!(fx.secs <= 120.0, "stage1 took {:.1}s", fx.secs);
    // interior of the reach-cost sublevel carries strictly negative travel values
    assert!(fx.report.interior_count > 0);
    assert!(fx.report.interior_max_travel < 0.0);
}

#[test]
fn criterion_07_discount_invariance_of_the_mask() {
    let fx = stage1();
    println!(
        "criterion 7: rate-0 vs rate-1 travel masks: {} out-of-band disagreements (= 0)",
        fx.report.discount_out_of_band
    );
    assert_eq!(fx.report.discount_out_of_band, 0);
}

#[test]
fn criterion_08_value_range() {
    let fx = stage2();
    let field = read_field::<Real>(&fx.pde.field_path).expect("stored field");
    let lo = -fx.cfg.scale * fx.cfg.radius / fx.cfg.rate;
    let (mut min_v, mut max_v) = (Real::INFINITY, Real::NEG_INFINITY);
    for &v in field.values() {
        min_v = min_v.min(v);
        max_v = max_v.max(v);
    }
    println!(
        "criterion 8: stationary values in [{min_v:.6}, {max_v:.6}] within \
         [{:.6} - 1e-6, 1e-6]",
        lo
    );
    assert!(min_v >= lo - 1e-6, "value {min_v} below {lo} - 1e-6");
    assert!(max_v <= 1e-6, "value {max_v} above 1e-6");
}

#[test]
fn criterion_09_gradient_oracle() {
    let p = properties();
    println!(
        "criterion 9: gradient-check violations = {} over 100 (net, probe) pairs at 1e-5 \
         ({:.1}s, <= 5s)",
        p.gradient_violations, p.gradient_secs
    );
    assert_eq!(p.gradient_violations, 0);
    assert!(p.gradient_secs <= 5.0);
}

/// Numeric artifacts a rerun must reproduce byte for byte (the manifest
/// carries wall-clock times and is excluded by design).
fn numeric_files(dir: &Path) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| {
            let name = p.file_name().unwrap().to_string_lossy();
            name != "manifest.txt" && name != "config.cfg"
        })
        .collect();
    files.sort();
    files
}

fn assert_dirs_byte_identical(a: &Path, b: &Path) {
    let fa = numeric_files(a);
    let fb = numeric_files(b);
    assert_eq!(
        fa.iter().map(|p| p.file_name().unwrap()).collect::<Vec<_>>(),
        fb.iter().map(|p| p.file_name().unwrap()).collect::<Vec<_>>(),
        "artifact sets differ between {} and {}",
        a.display(),
        b.display()
    );
    for (pa, pb) in fa.iter().zip(&fb) {
        let ba = std::fs::read(pa).unwrap();
        let bb = std::fs::read(pb).unwrap();
        assert_eq!(ba, bb, "{} differs between runs", pa.display());
    }
}

#[test]
fn criterion_10_determinism() {
    // first runs
    let fx2 = stage2();
    let fx1 = stage1();

    // reruns with identical config + seed
    let pde_dir = work_dir("pde_rerun");
    let rl_dir = work_dir("rl_rerun");
    let cmp_dir = work_dir("cmp_rerun");
    let pde = cmd_solve_pde(&fx2.cfg, &pde_dir).expect("pde rerun");
    let train = cmd_train_rl(&fx2.cfg, &rl_dir).expect("training rerun");
    cmd_compare(&fx2.cfg, &pde.field_path, &train.checkpoint_path, &cmp_dir)
        .expect("compare rerun");

    let stage1_dir = work_dir("stage1_rerun");
    cmd_stage1(&fx1.cfg, &stage1_dir).expect("stage1 rerun");

    assert_dirs_byte_identical(&fx2.pde_dir, &pde_dir);
    assert_dirs_byte_identical(&fx2.rl_dir, &rl_dir);
    assert_dirs_byte_identical(&fx2.cmp_dir, &cmp_dir);
    assert_dirs_byte_identical(&fx1.dir, &stage1_dir);
    println!("criterion 10: reruns of criteria 1 and 6 pipelines are byte-identical");
}
