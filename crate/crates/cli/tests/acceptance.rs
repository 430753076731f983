//! Acceptance run over the shipped configurations. Prints one PASS/FAIL line
//! per criterion and fails if any criterion fails. Single-threaded throughout.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;

use kmflow_cli::output::read_report;
use kmflow_cli::{RunReport, Status};
use kmflow_core::flow::{FlowReport, Termination, MAX_PRINCIPLE_SLACK};
use kmflow_core::paracomplex::ParaComplex;

struct Run {
    exit: Option<i32>,
    report: RunReport,
    dir: PathBuf,
}

fn run(config: &str, out: &Path) -> Run {
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(config);
    let dir = out.join(config.trim_end_matches(".toml"));
    let o = Command::new(env!("CARGO_BIN_EXE_kmflow"))
        .args([
            "run",
            cfg.to_str().unwrap(),
            "--out",
            dir.to_str().unwrap(),
            "--threads",
            "1",
        ])
        .output()
        .expect("binary runs");
    print!("{}", String::from_utf8_lossy(&o.stdout));
    eprint!("{}", String::from_utf8_lossy(&o.stderr));
    let report = read_report(&dir.join("report.json")).expect("report.json");
    Run {
        exit: o.status.code(),
        report,
        dir,
    }
}

fn check(report: &RunReport, name: &str) -> Option<(f64, bool)> {
    report
        .checks
        .iter()
        .find(|c| c.name == name)
        .map(|c| (c.value.unwrap_or(f64::NAN), c.passed))
}

/// Recompute monotonicity of the extrema from the series itself.
fn extrema_monotone(f: &FlowReport) -> usize {
    f.theta_max
        .windows(2)
        .filter(|w| w[1] > w[0] + MAX_PRINCIPLE_SLACK)
        .count()
        + f.theta_min
            .windows(2)
            .filter(|w| w[1] < w[0] - MAX_PRINCIPLE_SLACK)
            .count()
}

#[derive(Default)]
struct Ledger {
    lines: Vec<(usize, bool, String)>,
}

impl Ledger {
    fn record(&mut self, id: usize, passed: bool, detail: String) {
        let tag = if passed { "PASS" } else { "FAIL" };
        // the stderr handle bypasses test output capture, so these lines
        // show in a plain `cargo test` log
        let _ = writeln!(std::io::stderr(), "ACCEPTANCE {id:>2} {tag} {detail}");
        self.lines.push((id, passed, detail));
    }
}

#[test]
fn acceptance_criteria() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path();
    let mut ledger = Ledger::default();

    let r1 = run("run1_1d.toml", out);
    let r1_again = run("run1_1d.toml", &out.join("repeat"));
    let r2 = run("run2_2d.toml", out);
    let exact = run("lagrangian_exact.toml", out);
    let shear = run("lagrangian_shear.toml", out);
    let geo = run("geometry_perturbed.toml", out);
    let flat = run("geometry_flat.toml", out);

    let f1 = r1.report.flow.as_ref().expect("run 1 flow");
    let f2 = r2.report.flow.as_ref().expect("run 2 flow");

    // 1. 1-D oracle equivalence
    let (e1, _) = check(&r1.report, "oracle_sup_error").unwrap_or((f64::NAN, false));
    let t1 = r1.report.runtime_seconds;
    ledger.record(
        1,
        f1.termination == Termination::Converged && e1 < 5e-3 && t1 < 60.0 && r1.exit == Some(0),
        format!("1-D flow vs rearrangement: sup error {e1:.3e} (< 5e-3), runtime {t1:.1} s (< 60 s), {:?}", f1.termination),
    );

    // 2. 2-D oracle equivalence
    let (e2, _) = check(&r2.report, "oracle_sup_error").unwrap_or((f64::NAN, false));
    let t2 = r2.report.runtime_seconds;
    let sinkhorn_eps = r2.report.oracle.as_ref().and_then(|o| o.epsilon);
    ledger.record(
        2,
        f2.termination == Termination::Converged
            && e2 < 2e-2
            && t2 < 600.0
            && sinkhorn_eps == Some(1e-3)
            && r2.exit == Some(0),
        format!("2-D flow vs Sinkhorn (eps {sinkhorn_eps:?}): sup error {e2:.3e} (< 2e-2), runtime {t2:.1} s (< 600 s)"),
    );

    // 3. maximum principle, from the engine counters and from the series
    let counted = f1.max_principle_violations + f2.max_principle_violations;
    let series = extrema_monotone(f1) + extrema_monotone(f2);
    ledger.record(
        3,
        counted == 0 && series == 0,
        format!("max principle over runs 1-2: {counted} step violations, {series} series violations (slack {MAX_PRINCIPLE_SLACK:e})"),
    );

    // 4. exponential convergence
    let fit = f1.decay_fit.as_ref();
    ledger.record(
        4,
        fit.is_some_and(|d| d.r_squared > 0.99 && d.rate < 0.0),
        match fit {
            Some(d) => format!(
                "run 1 tail fit: r^2 {:.6}, rate {:.4e} over t in [{:.3e}, {:.3e}]",
                d.r_squared, d.rate, d.window.0, d.window.1
            ),
            None => "run 1 has no decay fit".into(),
        },
    );

    // 5. Lagrangian preservation, exact start and sheared start
    let fe = exact.report.flow.as_ref().expect("exact flow");
    let fs = shear.report.flow.as_ref().expect("shear flow");
    let exact_max = fe.lagrangian_defect.iter().cloned().fold(0.0, f64::max);
    let shear_max = fs.lagrangian_defect.iter().cloned().fold(0.0, f64::max);
    let delta = shear.report.config.initial.shear;
    let span = |f: &FlowReport| (f.times[0], *f.times.last().unwrap());
    let covers = |f: &FlowReport| {
        let (a, b) = span(f);
        a == 0.0 && (b - 1.0).abs() < 1e-12 && f.termination == Termination::TMax
    };
    ledger.record(
        5,
        exact.report.config.grid.resolution()[0] == 128
            && covers(fe)
            && covers(fs)
            && exact_max < 1e-7
            && delta > 0.0
            && shear_max <= 10.0 * delta,
        format!(
            "N=128, t in [0, 1]: exact start defect max {exact_max:.3e} (< 1e-7); shear delta {delta:e} defect max {shear_max:.3e} (<= {:.1e}), envelope C = {:.4e}",
            10.0 * delta,
            shear.report.defect_envelope_rate.unwrap_or(f64::NAN)
        ),
    );

    // 6. curvature against the finite-difference oracle; zero for flat costs
    let g = geo.report.geometry.as_ref().expect("geometry report");
    let gf = flat.report.geometry.as_ref().expect("flat geometry report");
    let curv = g.curvature_rel_max.unwrap_or(f64::NAN);
    let chr = g.christoffel_rel_max.unwrap_or(f64::NAN);
    let zero = gf.flat_max_abs.unwrap_or(f64::NAN);
    ledger.record(
        6,
        g.points >= 50 && curv < 1e-5 && chr < 1e-5 && zero < 1e-12 && geo.exit == Some(0) && flat.exit == Some(0),
        format!("{} points: curvature rel {curv:.3e}, Christoffel rel {chr:.3e} (< 1e-5); flat max {zero:.3e} (< 1e-12)", g.points),
    );

    // 7. para-complex identities, plus an independent sweep of |theta| <= 5
    let sweep = (0..=1000)
        .map(|i| -5.0 + 0.01 * i as f64)
        .map(|t| (ParaComplex::exp_k(t).para_norm_sq() - 1.0).abs())
        .fold(0.0, f64::max);
    let para = g.para_norm_error_max.max(gf.para_norm_error_max).max(sweep);
    let wedge = g.wedge_residual_max.max(gf.wedge_residual_max);
    ledger.record(
        7,
        g.identity_points >= 100 && wedge < 1e-10 && para < 1e-12,
        format!("{} points: wedge residual {wedge:.3e} (< 1e-10), |norm(e^(k theta)) - 1| {para:.3e} (< 1e-12)", g.identity_points),
    );

    // 8. calibration at stationarity
    let (dev, _) = check(&r1.report, "theta_deviation").unwrap_or((f64::NAN, false));
    let (cal, _) = check(&r1.report, "calibration_defect").unwrap_or((f64::NAN, false));
    let (push, _) = check(&r1.report, "pushforward").unwrap_or((f64::NAN, false));
    ledger.record(
        8,
        dev < 1e-6 && cal < 1e-5 && push < 5e-3,
        format!("run 1: sup|theta - mean| {dev:.3e} (< 1e-6), calibration {cal:.3e} (< 1e-5), pushforward {push:.3e} (< 5e-3)"),
    );

    // 9. det DT identity over every monitored snapshot
    let det = f1.det_dt_identity_max.max(f2.det_dt_identity_max);
    ledger.record(
        9,
        det < 1e-6,
        format!("runs 1-2: sup|det DT e^(2 theta) rho_bar(T)/rho - 1| {det:.3e} (< 1e-6)"),
    );

    // 10. determinism
    let a = std::fs::read(r1.dir.join("series.csv")).unwrap();
    let b = std::fs::read(r1_again.dir.join("series.csv")).unwrap();
    ledger.record(
        10,
        a == b && r1.report.seed == r1_again.report.seed && !a.is_empty(),
        format!(
            "run 1 repeated with seed {}: series.csv {} bytes, identical = {}",
            r1.report.seed,
            a.len(),
            a == b
        ),
    );

    assert_eq!(r1.report.status, Status::Passed);
    let failed: Vec<_> = ledger.lines.iter().filter(|l| !l.1).map(|l| l.0).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
