//! Time integration of the generalized Lagrangian mean curvature flow
//! u_t = −2θ (potential form) or T_t = −2 b⁻¹∇θ (map form), with monitors.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cost::CostModel;
use crate::error::{Error, Result};
use crate::grid::{gradient, Accuracy, ScalarField, VectorField};
use crate::lagrangian::{DensityPair, LagrangianState};

pub const DEFAULT_STOP_GRAD_THETA: f64 = 1e-8;
pub const DEFAULT_MONITOR_STRIDE: usize = 10;
pub const DEFAULT_MAX_HALVINGS: usize = 10;
pub const MAX_PRINCIPLE_SLACK: f64 = 1e-9;
/// Slope ratio may grow to this multiple of max(initial maximum, floor).
pub const SLOPE_GROWTH_BOUND: f64 = 1.05;
/// The slope ratio (1 + λ²)/λ is 2 at the identity and only comes under the
/// control of the maximum principle once it reaches 10, so a flow started near
/// the identity may legitimately climb toward its limit's value below that.
pub const SLOPE_CONTROL_FLOOR: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    Potential,
    Map,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    #[default]
    Euler,
    Midpoint,
    /// First-order Runge–Kutta–Legendre super time stepping with `stages`
    /// stages; stable for steps up to s(s+1)/2 times the forward Euler limit.
    Rkl1 {
        stages: usize,
    },
}

impl Integrator {
    /// Factor by which a CFL step may be enlarged.
    pub fn stability_gain(&self) -> f64 {
        match *self {
            Integrator::Rkl1 { stages } => (stages * (stages + 1)) as f64 / 2.0,
            _ => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DtPolicy {
    Fixed { dt: f64 },
    Cfl { safety: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub formulation: Formulation,
    pub integrator: Integrator,
    pub dt_policy: DtPolicy,
    pub t_max: f64,
    pub stop_grad_theta: f64,
    pub monitor_stride: usize,
    pub max_steps: usize,
    pub max_halvings: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            formulation: Formulation::Potential,
            integrator: Integrator::Euler,
            dt_policy: DtPolicy::Cfl { safety: 0.5 },
            t_max: 1.0,
            stop_grad_theta: DEFAULT_STOP_GRAD_THETA,
            monitor_stride: DEFAULT_MONITOR_STRIDE,
            max_steps: 10_000_000,
            max_halvings: DEFAULT_MAX_HALVINGS,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.t_max > 0.0) {
            return bad(format!("t_max = {} must be positive", self.t_max));
        }
        if !(self.stop_grad_theta > 0.0) {
            return bad(format!(
                "stop_grad_theta = {} must be positive",
                self.stop_grad_theta
            ));
        }
        if self.monitor_stride == 0 {
            return bad("monitor_stride must be at least 1".into());
        }
        if self.integrator == (Integrator::Rkl1 { stages: 0 }) {
            return bad("RKL needs at least one stage".into());
        }
        match self.dt_policy {
            DtPolicy::Fixed { dt } if !(dt > 0.0) => {
                bad(format!("fixed dt = {dt} must be positive"))
            }
            DtPolicy::Cfl { safety } if !(safety > 0.0 && safety <= 1.0) => {
                bad(format!("CFL safety = {safety} outside (0, 1]"))
            }
            _ => Ok(()),
        }
    }
}

/// Initial graph: a potential (its c-exponential) or a displacement field.
#[derive(Debug, Clone)]
pub enum Initial {
    Potential(ScalarField),
    Displacement(VectorField),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Termination {
    Converged,
    TMax,
    MaxSteps,
    Error { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub rate: f64,
    pub r_squared: f64,
    /// (first, last) time of the fitted window
    pub window: (f64, f64),
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowReport {
    pub times: Vec<f64>,
    pub theta_min: Vec<f64>,
    pub theta_max: Vec<f64>,
    pub theta_osc: Vec<f64>,
    pub slope_ratio_max: Vec<f64>,
    pub lagrangian_defect: Vec<f64>,
    pub calibration_defect_final: Option<f64>,
    pub decay_fit: Option<DecayFit>,
    pub steps: usize,
    pub termination: Termination,
    pub formulation: Formulation,
    pub integrator: Integrator,
    pub final_time: f64,
    pub final_grad_theta: f64,
    pub rejected_steps: usize,
    pub dt_min: Option<f64>,
    pub dt_max: Option<f64>,
    /// Accepted steps on which θ_max rose or θ_min fell by more than the slack.
    pub max_principle_violations: usize,
    /// Largest per-step rise of θ_max or fall of θ_min (0 when monotone).
    pub max_principle_worst: f64,
    /// Largest sup|det DT e^{2θ} ρ̄∘T/ρ − 1| over monitored snapshots.
    pub det_dt_identity_max: f64,
    /// Largest det-g vs det-DT gap in θ over monitored snapshots.
    pub route_gap_max: f64,
    /// Snapshots whose slope ratio exceeded 1.05 × max(initial value, 10).
    pub slope_bound_violations: usize,
    /// Largest slope_ratio_max relative to its initial value.
    pub slope_growth_max: f64,
    /// Mean of u removed by re-centering, in total (potential form only).
    pub potential_drift: f64,
    pub pushforward_residual_final: Option<f64>,
}

impl FlowReport {
    fn new(config: &FlowConfig) -> Self {
        Self {
            times: vec![],
            theta_min: vec![],
            theta_max: vec![],
            theta_osc: vec![],
            slope_ratio_max: vec![],
            lagrangian_defect: vec![],
            calibration_defect_final: None,
            decay_fit: None,
            steps: 0,
            termination: Termination::TMax,
            formulation: config.formulation,
            integrator: config.integrator,
            final_time: 0.0,
            final_grad_theta: f64::INFINITY,
            rejected_steps: 0,
            dt_min: None,
            dt_max: None,
            max_principle_violations: 0,
            max_principle_worst: 0.0,
            det_dt_identity_max: 0.0,
            route_gap_max: 0.0,
            slope_bound_violations: 0,
            slope_growth_max: 1.0,
            potential_drift: 0.0,
            pushforward_residual_final: None,
        }
    }

    fn record(&mut self, state: &LagrangianState) -> Result<()> {
        let th = state.theta();
        let (lo, hi) = (th.min(), th.max());
        let slope = state.slope_ratio_max()?;
        if let Some(&first) = self.slope_ratio_max.first() {
            if slope > SLOPE_GROWTH_BOUND * first.max(SLOPE_CONTROL_FLOOR) {
                self.slope_bound_violations += 1;
            }
            self.slope_growth_max = self.slope_growth_max.max(slope / first);
        }
        self.times.push(state.time);
        self.theta_min.push(lo);
        self.theta_max.push(hi);
        self.theta_osc.push(hi - lo);
        self.slope_ratio_max.push(slope);
        self.lagrangian_defect.push(state.lagrangian_defect());
        self.det_dt_identity_max = self
            .det_dt_identity_max
            .max(state.det_dt_identity_residual());
        self.route_gap_max = self.route_gap_max.max(state.route_gap());
        Ok(())
    }
}

pub struct FlowOutcome {
    pub report: FlowReport,
    /// Last accepted state.
    pub state: LagrangianState,
}

/// dt = safety · h² / (2n · max over nodes of the spectral radius of g⁻¹).
pub fn cfl_dt(state: &LagrangianState, safety: f64) -> Result<f64> {
    if !(safety > 0.0 && safety <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "CFL safety = {safety} outside (0, 1]"
        )));
    }
    let lam = state.min_metric_eigenvalue();
    if !(lam > 0.0) {
        return Err(Error::SpacelikeViolation {
            node: 0,
            min_eig: lam,
        });
    }
    let g = state.grid();
    let h = g.min_spacing();
    Ok(safety * h * h * lam / (2.0 * g.n_dims() as f64))
}

pub fn grad_theta(state: &LagrangianState) -> VectorField {
    gradient(state.theta(), Accuracy::Fourth)
}

/// Map velocity −2 b⁻¹∇θ.
pub fn map_velocity(state: &LagrangianState) -> Result<VectorField> {
    velocity_from_grad(state, &grad_theta(state))
}

fn velocity_from_grad(state: &LagrangianState, grad: &VectorField) -> Result<VectorField> {
    let g = *state.grid();
    let n = g.n_dims();
    let mut vals = Vec::with_capacity(g.len() * n);
    for i in 0..g.len() {
        let s = state
            .b_at(i)
            .solve(grad.at(i))
            .ok_or(Error::SingularHessian(f64::INFINITY))?;
        vals.extend(s[..n].iter().map(|v| -2.0 * v));
    }
    VectorField::new(g, vals)
}

/// The unknown being integrated: u in potential form, T − x in map form.
trait Unknown {
    fn values(state: &LagrangianState) -> Result<Vec<f64>>;
    fn rate(state: &LagrangianState, grad: Option<&VectorField>) -> Result<Vec<f64>>;
    fn build(
        like: &LagrangianState,
        values: Vec<f64>,
        warm: &VectorField,
    ) -> Result<LagrangianState>;
}

struct PotentialForm;
struct MapForm;

impl Unknown for PotentialForm {
    fn values(state: &LagrangianState) -> Result<Vec<f64>> {
        state
            .potential()
            .map(|u| u.values().to_vec())
            .ok_or_else(|| {
                Error::InvalidParameter("potential step on a state without a potential".into())
            })
    }

    fn rate(state: &LagrangianState, _: Option<&VectorField>) -> Result<Vec<f64>> {
        Ok(state.theta().values().iter().map(|t| -2.0 * t).collect())
    }

    fn build(
        like: &LagrangianState,
        values: Vec<f64>,
        warm: &VectorField,
    ) -> Result<LagrangianState> {
        let u = ScalarField::new(*like.grid(), values)?;
        LagrangianState::from_potential(like.model(), like.densities().clone(), u, Some(warm))
    }
}

impl Unknown for MapForm {
    fn values(state: &LagrangianState) -> Result<Vec<f64>> {
        Ok(state.displacement().values().to_vec())
    }

    fn rate(state: &LagrangianState, grad: Option<&VectorField>) -> Result<Vec<f64>> {
        let v = match grad {
            Some(g) => velocity_from_grad(state, g)?,
            None => map_velocity(state)?,
        };
        Ok(v.values().to_vec())
    }

    fn build(like: &LagrangianState, values: Vec<f64>, _: &VectorField) -> Result<LagrangianState> {
        let d = VectorField::new(*like.grid(), values)?;
        LagrangianState::from_displacement(like.model(), like.densities().clone(), d)
    }
}

fn lincomb(terms: &[(f64, &[f64])]) -> Vec<f64> {
    let len = terms[0].1.len();
    (0..len)
        .map(|k| terms.iter().map(|(c, v)| c * v[k]).sum())
        .collect()
}

/// New values of the unknown after one step of size dt. `grad` may carry ∇θ
/// of `state`; building the stepped state is left to the caller.
fn advance<F: Unknown>(
    state: &LagrangianState,
    grad: Option<&VectorField>,
    dt: f64,
    integrator: Integrator,
) -> Result<Vec<f64>> {
    let y0 = F::values(state)?;
    let r0 = F::rate(state, grad)?;
    let y1 = match integrator {
        Integrator::Euler => lincomb(&[(1.0, &y0), (dt, &r0)]),
        Integrator::Midpoint => {
            let mid = F::build(
                state,
                lincomb(&[(1.0, &y0), (0.5 * dt, &r0)]),
                state.displacement(),
            )?;
            lincomb(&[(1.0, &y0), (dt, &F::rate(&mid, None)?)])
        }
        Integrator::Rkl1 { stages } => {
            if stages == 0 {
                return Err(Error::InvalidParameter(
                    "RKL needs at least one stage".into(),
                ));
            }
            let s = stages as f64;
            let w1 = 2.0 / (s * s + s);
            let mut prev2 = y0.clone();
            let mut prev = lincomb(&[(1.0, &y0), (w1 * dt, &r0)]);
            for j in 2..=stages {
                let jf = j as f64;
                let stage = F::build(state, prev.clone(), state.displacement())?;
                let mu = (2.0 * jf - 1.0) / jf;
                let nu = -(jf - 1.0) / jf;
                let next = lincomb(&[
                    (mu, &prev),
                    (nu, &prev2),
                    (mu * w1 * dt, &F::rate(&stage, None)?),
                ]);
                prev2 = std::mem::replace(&mut prev, next);
            }
            prev
        }
    };
    Ok(y1)
}

/// One step of u_t = −2θ followed by re-centering u to zero mean. Returns the
/// new state and the mean that was removed.
pub fn step_potential(
    state: &LagrangianState,
    dt: f64,
    integrator: Integrator,
) -> Result<(LagrangianState, f64)> {
    let mut u = advance::<PotentialForm>(state, None, dt, integrator)?;
    let mean = u.iter().sum::<f64>() / u.len() as f64;
    u.iter_mut().for_each(|v| *v -= mean);
    let mut next = PotentialForm::build(state, u, state.displacement())?;
    next.time = state.time + dt;
    Ok((next, mean))
}

/// One step of T_t = −2 b⁻¹∇θ. No symmetrisation is applied, so any drift
/// away from the Lagrangian condition stays visible.
pub fn step_map(
    state: &LagrangianState,
    dt: f64,
    integrator: Integrator,
) -> Result<LagrangianState> {
    step_map_from(state, None, dt, integrator)
}

fn step_map_from(
    state: &LagrangianState,
    grad: Option<&VectorField>,
    dt: f64,
    integrator: Integrator,
) -> Result<LagrangianState> {
    let d = advance::<MapForm>(state, grad, dt, integrator)?;
    let mut next = MapForm::build(state, d, state.displacement())?;
    next.time = state.time + dt;
    Ok(next)
}

fn rejectable(e: &Error) -> bool {
    matches!(
        e,
        Error::SpacelikeViolation { .. } | Error::CutLocusViolation { .. }
    )
}

pub fn initial_state(
    model: &CostModel,
    densities: Arc<DensityPair>,
    initial: Initial,
    formulation: Formulation,
) -> Result<LagrangianState> {
    match (initial, formulation) {
        (Initial::Potential(u), Formulation::Potential) => {
            LagrangianState::from_potential(model, densities, u, None)
        }
        (Initial::Potential(u), Formulation::Map) => {
            let d = crate::lagrangian::c_exponential(model, &u, None)?;
            LagrangianState::from_displacement(model, densities, d)
        }
        (Initial::Displacement(d), Formulation::Map) => {
            LagrangianState::from_displacement(model, densities, d)
        }
        (Initial::Displacement(_), Formulation::Potential) => Err(Error::InvalidParameter(
            "the potential formulation needs a potential as initial data".into(),
        )),
    }
}

/// Integrate until sup|∇θ| < tol, t ≥ t_max, or the step budget runs out.
pub fn run_flow(
    model: &CostModel,
    densities: Arc<DensityPair>,
    initial: Initial,
    config: &FlowConfig,
) -> Result<FlowOutcome> {
    config.validate()?;
    let mut state = initial_state(model, densities, initial, config.formulation)?;
    let mut report = FlowReport::new(config);
    report.record(&state)?;
    let mut since_record = 0usize;

    loop {
        let grad = grad_theta(&state);
        report.final_grad_theta = grad.max_norm();
        if report.final_grad_theta < config.stop_grad_theta {
            report.termination = Termination::Converged;
            break;
        }
        if state.time >= config.t_max * (1.0 - 1e-12) {
            report.termination = Termination::TMax;
            break;
        }
        if report.steps >= config.max_steps {
            report.termination = Termination::MaxSteps;
            break;
        }
        let mut dt = match config.dt_policy {
            DtPolicy::Fixed { dt } => dt,
            DtPolicy::Cfl { safety } => {
                cfl_dt(&state, safety)? * config.integrator.stability_gain()
            }
        };
        dt = dt.min(config.t_max - state.time);

        let mut attempt = 0;
        let accepted = loop {
            let result = match config.formulation {
                Formulation::Potential => step_potential(&state, dt, config.integrator),
                Formulation::Map => {
                    step_map_from(&state, Some(&grad), dt, config.integrator).map(|s| (s, 0.0))
                }
            };
            match result {
                Ok(next) => break Ok(next),
                Err(e) if rejectable(&e) && attempt < config.max_halvings => {
                    attempt += 1;
                    report.rejected_steps += 1;
                    dt *= 0.5;
                }
                Err(e) => break Err(e),
            }
        };
        let (next, drift) = match accepted {
            Ok(v) => v,
            Err(e) => {
                report.termination = Termination::Error {
                    message: e.to_string(),
                };
                break;
            }
        };

        let rise = next.theta().max() - state.theta().max();
        let fall = state.theta().min() - next.theta().min();
        let worst = rise.max(fall);
        if worst > MAX_PRINCIPLE_SLACK {
            report.max_principle_violations += 1;
        }
        report.max_principle_worst = report.max_principle_worst.max(worst.max(0.0));
        report.potential_drift += drift;
        report.dt_min = Some(report.dt_min.map_or(dt, |m| m.min(dt)));
        report.dt_max = Some(report.dt_max.map_or(dt, |m| m.max(dt)));
        report.steps += 1;
        state = next;
        since_record += 1;
        if since_record == config.monitor_stride {
            report.record(&state)?;
            since_record = 0;
        }
    }
    if since_record > 0 {
        report.record(&state)?;
    }
    report.final_time = state.time;
    report.calibration_defect_final = Some(state.calibration_defect()?);
    report.pushforward_residual_final = Some(state.pushforward_residual());
    report.decay_fit = fit_decay(&report, 0.5).ok();
    Ok(FlowOutcome { report, state })
}

/// Least-squares line through (t, ln osc θ) over the last `tail_fraction` of
/// the monitored samples.
pub fn fit_decay(report: &FlowReport, tail_fraction: f64) -> Result<DecayFit> {
    fit_decay_series(&report.times, &report.theta_osc, tail_fraction)
}

pub fn fit_decay_series(times: &[f64], osc: &[f64], tail_fraction: f64) -> Result<DecayFit> {
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "tail fraction {tail_fraction} outside (0, 1]"
        )));
    }
    let len = times.len().min(osc.len());
    let count = ((len as f64) * tail_fraction).floor() as usize;
    if count < 20 {
        return Err(Error::InsufficientTail(format!(
            "{count} samples in the tail, need 20"
        )));
    }
    let start = len - count;
    let t = &times[start..len];
    let o = &osc[start..len];
    if let Some(v) = o.iter().find(|v| !(**v > 1e-14)) {
        return Err(Error::InsufficientTail(format!(
            "oscillation {v:e} at or below 1e-14"
        )));
    }
    let y: Vec<f64> = o.iter().map(|v| v.ln()).collect();
    let k = count as f64;
    let tm = t.iter().sum::<f64>() / k;
    let ym = y.iter().sum::<f64>() / k;
    let sxx: f64 = t.iter().map(|v| (v - tm).powi(2)).sum();
    let sxy: f64 = t.iter().zip(&y).map(|(a, b)| (a - tm) * (b - ym)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientTail("tail spans zero time".into()));
    }
    let rate = sxy / sxx;
    let ss_res: f64 = t
        .iter()
        .zip(&y)
        .map(|(a, b)| (b - ym - rate * (a - tm)).powi(2))
        .sum();
    let ss_tot: f64 = y.iter().map(|b| (b - ym).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else {
        1.0
    };
    Ok(DecayFit {
        rate,
        r_squared,
        window: (t[0], t[count - 1]),
        samples: count,
    })
}

/// Smallest C with defect(t) ≤ defect(0)·e^{Ct} on every monitored sample.
pub fn defect_envelope_rate(report: &FlowReport) -> Option<f64> {
    let d0 = *report.lagrangian_defect.first()?;
    if !(d0 > 0.0) {
        return None;
    }
    report
        .times
        .iter()
        .zip(&report.lagrangian_defect)
        .filter(|(t, _)| **t > 0.0)
        .map(|(t, d)| (d / d0).ln() / t)
        .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))))
}
