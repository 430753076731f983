//! Scenario execution. Each scenario produces a [`RunReport`] with a list of
//! named checks; the exit status follows from the checks and the run outcome.

use std::sync::Arc;
use std::time::Instant;

use kmflow_core::cost::{verify_partials, VerificationReport};
use kmflow_core::flow::{defect_envelope_rate, run_flow, FlowReport, Initial, Termination};
use kmflow_core::geometry::{
    christoffel, christoffel_fd_oracle, curvature, curvature_fd_oracle, flatten3, flatten4,
    mtw_scan, relative_error, MtwReport,
};
use kmflow_core::lagrangian::{c_exponential, wedge_identity_check, DensityPair};
use kmflow_core::oracle::{
    compare_maps, rearrangement_1d, sinkhorn, MapComparison, OracleMap, OracleMethod, MASS_TOL,
};
use kmflow_core::paracomplex::ParaComplex;
use kmflow_core::{CostModel, ScalarField, VectorField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{OracleSpec, RunConfig, Scenario};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Passed,
    PropertyViolation,
    Error,
}

impl Status {
    pub fn exit_code(self) -> u8 {
        match self {
            Status::Passed => 0,
            Status::PropertyViolation => 2,
            Status::Error => 1,
        }
    }
}

/// One verified property. `value` is `None` when the quantity could not be
/// computed, which counts as a failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: Option<f64>,
    pub limit: f64,
    pub passed: bool,
}

impl Check {
    /// Passes when `value < limit`.
    fn below(name: &str, value: Option<f64>, limit: f64) -> Self {
        Self {
            name: name.into(),
            value,
            limit,
            passed: value.is_some_and(|v| v < limit),
        }
    }

    /// Passes when `value ≤ limit`; used for counts.
    fn at_most(name: &str, value: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            value: Some(value),
            limit,
            passed: value <= limit,
        }
    }

    fn above(name: &str, value: Option<f64>, limit: f64) -> Self {
        Self {
            name: name.into(),
            value,
            limit,
            passed: value.is_some_and(|v| v > limit),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSummary {
    pub method: OracleMethod,
    pub epsilon: Option<f64>,
    pub iterations: Option<usize>,
    pub marginal_residual: Option<f64>,
    pub anchor: Option<f64>,
    /// What the oracle map was compared with: "flow" or "rearrangement_1d".
    pub compared_with: String,
    pub comparison: MapComparison,
}

impl OracleSummary {
    fn new(map: &OracleMap, compared_with: &str, comparison: MapComparison) -> Self {
        Self {
            method: map.method,
            epsilon: map.epsilon,
            iterations: map.iterations,
            marginal_residual: map.marginal_residual,
            anchor: map.anchor,
            compared_with: compared_with.into(),
            comparison,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryVerification {
    pub partials: VerificationReport,
    pub points: usize,
    /// Norm-wise relative error against the finite-difference oracles
    /// (curved costs only).
    pub curvature_rel_max: Option<f64>,
    pub christoffel_rel_max: Option<f64>,
    /// Largest analytic curvature or Christoffel component (flat costs only).
    pub flat_max_abs: Option<f64>,
    pub identity_points: usize,
    pub wedge_residual_max: f64,
    pub para_norm_error_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: Scenario,
    pub seed: u64,
    pub status: Status,
    pub checks: Vec<Check>,
    pub runtime_seconds: f64,
    pub config: RunConfig,
    pub flow: Option<FlowReport>,
    /// Smallest C with defect(t) ≤ defect(0)·e^{Ct} over the run.
    pub defect_envelope_rate: Option<f64>,
    pub oracle: Option<OracleSummary>,
    pub mtw: Option<MtwReport>,
    pub geometry: Option<GeometryVerification>,
}

impl RunReport {
    fn new(config: &RunConfig) -> Self {
        Self {
            scenario: config.scenario,
            seed: config.seed,
            status: Status::Passed,
            checks: vec![],
            runtime_seconds: 0.0,
            config: config.clone(),
            flow: None,
            defect_envelope_rate: None,
            oracle: None,
            mtw: None,
            geometry: None,
        }
    }

    pub fn failed_checks(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

pub struct Execution {
    pub report: RunReport,
    /// Final map (flow) or oracle map, written to final_map.csv.
    pub final_map: Option<VectorField>,
}

pub fn execute(config: &RunConfig) -> Result<Execution> {
    let start = Instant::now();
    let mut report = RunReport::new(config);
    let final_map = match config.scenario {
        Scenario::Flow => flow(config, &mut report)?,
        Scenario::MtwScan => {
            report.mtw = Some(mtw_scan(
                &config.cost,
                &config.grid,
                config.directions_per_point,
                config.seed,
            )?);
            None
        }
        Scenario::GeometryVerify => {
            geometry(config, &mut report)?;
            None
        }
        Scenario::OracleCompare => Some(oracle_compare(config, &mut report)?),
    };
    report.runtime_seconds = start.elapsed().as_secs_f64();
    if let Some(limit) = config.verify.max_runtime_seconds {
        report.checks.push(Check::below(
            "runtime_seconds",
            Some(report.runtime_seconds),
            limit,
        ));
    }
    let errored = matches!(
        report.flow.as_ref().map(|f| &f.termination),
        Some(Termination::Error { .. })
    );
    report.status = if errored {
        Status::Error
    } else if report.checks.iter().all(|c| c.passed) {
        Status::Passed
    } else {
        Status::PropertyViolation
    };
    Ok(Execution { report, final_map })
}

fn density_pair(config: &RunConfig) -> Result<(ScalarField, ScalarField, Arc<DensityPair>)> {
    let (rho, rho_bar) = config.densities();
    let pair = Arc::new(DensityPair::new(rho.clone(), rho_bar.clone())?);
    Ok((rho, rho_bar, pair))
}

fn run_oracle(
    spec: &OracleSpec,
    model: &CostModel,
    rho: &ScalarField,
    rho_bar: &ScalarField,
) -> Result<OracleMap> {
    Ok(match spec.method {
        OracleMethod::Rearrangement1d => rearrangement_1d(rho, rho_bar)?,
        OracleMethod::Sinkhorn => {
            sinkhorn(rho, rho_bar, model, spec.epsilon, spec.max_iters, spec.tol)?
        }
    })
}

fn default_oracle_tolerance(method: OracleMethod) -> f64 {
    match method {
        OracleMethod::Rearrangement1d => 5e-3,
        OracleMethod::Sinkhorn => 2e-2,
    }
}

fn flow(config: &RunConfig, report: &mut RunReport) -> Result<Option<VectorField>> {
    let model = config.cost;
    let (rho, rho_bar, pair) = density_pair(config)?;
    let u0 = config.initial.potential(config.grid);
    let initial = if config.initial.shear != 0.0 {
        let base = c_exponential(&model, &u0, None)?;
        let delta = config.initial.shear;
        let g = config.grid;
        let shear = VectorField::from_fn(g, |x| {
            [delta * (2.0 * std::f64::consts::PI * x[1]).sin(), 0.0]
        });
        let values = base
            .values()
            .iter()
            .zip(shear.values())
            .map(|(a, b)| a + b)
            .collect();
        Initial::Displacement(VectorField::new(g, values)?)
    } else {
        Initial::Potential(u0)
    };
    let outcome = run_flow(&model, pair.clone(), initial, &config.flow)?;
    let (fr, state) = (outcome.report, outcome.state);
    let v = &config.verify;
    let checks = &mut report.checks;

    checks.push(Check::at_most(
        "max_principle_violations",
        fr.max_principle_violations as f64,
        0.0,
    ));
    // θ is read off the symmetric part of W, so the identity only holds on
    // Lagrangian graphs; a sheared start reports the value without gating on it
    if config.initial.shear == 0.0 {
        checks.push(Check::below(
            "det_dt_identity",
            Some(fr.det_dt_identity_max),
            v.det_dt_identity,
        ));
    }
    if model.kind().is_flat() {
        checks.push(Check::at_most(
            "slope_bound_violations",
            fr.slope_bound_violations as f64,
            0.0,
        ));
    }
    let converged = fr.termination == Termination::Converged;
    if v.require_converged {
        checks.push(Check::below(
            "converged",
            Some(fr.final_grad_theta),
            config.flow.stop_grad_theta,
        ));
    }
    if converged {
        let theta = state.theta();
        let mean = theta.mean();
        let dev = theta
            .values()
            .iter()
            .fold(0.0f64, |m, t| m.max((t - mean).abs()));
        checks.push(Check::below(
            "theta_deviation",
            Some(dev),
            v.theta_deviation,
        ));
        checks.push(Check::below(
            "calibration_defect",
            fr.calibration_defect_final,
            v.calibration_defect,
        ));
        if (pair.mass() - pair.mass_bar()).abs() <= MASS_TOL {
            checks.push(Check::below(
                "pushforward",
                fr.pushforward_residual_final,
                v.pushforward,
            ));
        }
    }
    if let Some(r2) = v.decay_r_squared {
        let fit = fr.decay_fit.as_ref();
        checks.push(Check::above(
            "decay_r_squared",
            fit.map(|f| f.r_squared),
            r2,
        ));
        checks.push(Check::below("decay_rate", fit.map(|f| f.rate), 0.0));
    }
    if let Some(limit) = v.defect_max {
        let worst = fr.lagrangian_defect.iter().copied().fold(0.0, f64::max);
        checks.push(Check::below("lagrangian_defect_max", Some(worst), limit));
    }
    if let Some(spec) = &config.oracle {
        let map = run_oracle(spec, &model, &rho, &rho_bar)?;
        let cmp = compare_maps(state.displacement(), &map.displacement)?;
        let limit = v
            .oracle_sup_error
            .unwrap_or(default_oracle_tolerance(spec.method));
        checks.push(Check::below("oracle_sup_error", Some(cmp.sup_error), limit));
        report.oracle = Some(OracleSummary::new(&map, "flow", cmp));
    }
    if config.initial.shear != 0.0 {
        report.defect_envelope_rate = defect_envelope_rate(&fr);
    }
    report.flow = Some(fr);
    Ok(Some(state.displacement().clone()))
}

fn oracle_compare(config: &RunConfig, report: &mut RunReport) -> Result<VectorField> {
    let (rho, rho_bar, _) = density_pair(config)?;
    let spec = config.oracle.unwrap_or(OracleSpec {
        method: OracleMethod::Sinkhorn,
        epsilon: 1e-3,
        max_iters: 100_000,
        tol: 1e-9,
    });
    let exact = rearrangement_1d(&rho, &rho_bar)?;
    let sk = sinkhorn(
        &rho,
        &rho_bar,
        &config.cost,
        spec.epsilon,
        spec.max_iters,
        spec.tol,
    )?;
    let cmp = compare_maps(&sk.displacement, &exact.displacement)?;
    let limit = config.verify.oracle_sup_error.unwrap_or(5e-3);
    report
        .checks
        .push(Check::below("oracle_sup_error", Some(cmp.sup_error), limit));
    report.oracle = Some(OracleSummary::new(&sk, "rearrangement_1d", cmp));
    Ok(exact.displacement)
}

fn geometry(config: &RunConfig, report: &mut RunReport) -> Result<()> {
    let model = &config.cost;
    let n = model.n_dims();
    let v = &config.verify;
    let (_, _, pair) = density_pair(config)?;
    let partials = verify_partials(model, config.geometry_samples, config.seed);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let flat = model.kind().is_flat();
    let (mut curv, mut chris, mut flat_abs) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..config.geometry_samples {
        let (x, xb) = model.sample_valid_pair(&mut rng, 0.0);
        let r = flatten4(&curvature(model, &x, &xb)?, n);
        let (gu, gb) = christoffel(model, &x, &xb)?;
        let mut g = flatten3(&gu, n);
        g.extend(flatten3(&gb, n));
        if flat {
            flat_abs = r.iter().chain(&g).fold(flat_abs, |m, c| m.max(c.abs()));
        } else {
            let fd_r = flatten4(&curvature_fd_oracle(model, &x, &xb)?, n);
            let (fu, fb) = christoffel_fd_oracle(model, &x, &xb)?;
            let mut fd_g = flatten3(&fu, n);
            fd_g.extend(flatten3(&fb, n));
            curv = curv.max(relative_error(&r, &fd_r));
            chris = chris.max(relative_error(&g, &fd_g));
        }
    }

    let mut wedge = 0.0f64;
    let mut para = 0.0f64;
    for _ in 0..config.identity_samples {
        let (x, xb) = model.sample_valid_pair(&mut rng, 0.0);
        wedge = wedge.max(wedge_identity_check(model, &pair, &x[..n], &xb[..n])?);
        let theta: f64 = rng.gen_range(-5.0..=5.0);
        para = para.max((ParaComplex::exp_k(theta).para_norm_sq() - 1.0).abs());
    }
    for theta in [-5.0, 5.0] {
        para = para.max((ParaComplex::exp_k(theta).para_norm_sq() - 1.0).abs());
    }

    let checks = &mut report.checks;
    checks.push(Check::at_most(
        "partial_failures",
        partials.failures as f64,
        0.0,
    ));
    if flat {
        checks.push(Check::below(
            "flat_curvature_zero",
            Some(flat_abs),
            v.flat_zero,
        ));
    } else {
        checks.push(Check::below(
            "curvature_rel_error",
            Some(curv),
            v.curvature_rel,
        ));
        checks.push(Check::below(
            "christoffel_rel_error",
            Some(chris),
            v.christoffel_rel,
        ));
    }
    checks.push(Check::below(
        "wedge_identity",
        Some(wedge),
        v.wedge_identity,
    ));
    checks.push(Check::below("para_norm", Some(para), v.para_norm));
    report.geometry = Some(GeometryVerification {
        partials,
        points: config.geometry_samples,
        curvature_rel_max: (!flat).then_some(curv),
        christoffel_rel_max: (!flat).then_some(chris),
        flat_max_abs: flat.then_some(flat_abs),
        identity_points: config.identity_samples,
        wedge_residual_max: wedge,
        para_norm_error_max: para,
    });
    Ok(())
}
