//! Run configuration. The TOML file is first read into loosely typed sections
//! (unknown keys are parse errors), then validated in a single pass so that
//! every problem is reported at once.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use kmflow_core::flow::{DtPolicy, FlowConfig, Formulation, Integrator};
use kmflow_core::oracle::{OracleMethod, SINKHORN_MAX_RESOLUTION};
use kmflow_core::{CostKind, CostModel, CutLocusGuard, Grid, ScalarField};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Flow,
    MtwScan,
    GeometryVerify,
    OracleCompare,
}

impl Scenario {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "flow" => Self::Flow,
            "mtw_scan" => Self::MtwScan,
            "geometry_verify" => Self::GeometryVerify,
            "oracle_compare" => Self::OracleCompare,
            _ => return None,
        })
    }
}

/// Built-in density families. Sine factors are 1 + a·sin(2πk(x_axis + phase)).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DensitySpec {
    Constant {
        value: f64,
    },
    Sine {
        amplitude: f64,
        frequency: u32,
        axis: usize,
        phase: f64,
    },
    Product {
        factors: Vec<DensitySpec>,
    },
    /// One value per node in row-major node order.
    Csv {
        path: PathBuf,
        #[serde(skip)]
        values: Vec<f64>,
    },
}

impl DensitySpec {
    pub fn field(&self, grid: Grid) -> ScalarField {
        match self {
            Self::Csv { values, .. } => {
                ScalarField::new(grid, values.clone()).expect("length checked at validation")
            }
            _ => ScalarField::from_fn(grid, |x| self.eval(x)),
        }
    }

    fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Self::Constant { value } => *value,
            Self::Sine {
                amplitude,
                frequency,
                axis,
                phase,
            } => 1.0 + amplitude * (2.0 * PI * *frequency as f64 * (x[*axis] + phase)).sin(),
            Self::Product { factors } => factors.iter().map(|f| f.eval(x)).product(),
            Self::Csv { .. } => unreachable!("tabulated densities are not pointwise"),
        }
    }
}

/// One term a·cos(2π(k·x + phase)) of the initial potential.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mode {
    pub amplitude: f64,
    pub k: Vec<i64>,
    #[serde(default)]
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct InitialSpec {
    pub modes: Vec<Mode>,
    /// Amplitude δ of the non-gradient perturbation δ·(sin 2πx₂, 0) added to
    /// the c-exponential of the potential (2-D map formulation only).
    pub shear: f64,
}

impl InitialSpec {
    pub fn potential(&self, grid: Grid) -> ScalarField {
        let n = grid.n_dims();
        ScalarField::from_fn(grid, |x| {
            self.modes
                .iter()
                .map(|m| {
                    let kx: f64 = (0..n).map(|a| m.k[a] as f64 * x[a]).sum();
                    m.amplitude * (2.0 * PI * (kx + m.phase)).cos()
                })
                .sum()
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleSpec {
    pub method: OracleMethod,
    pub epsilon: f64,
    pub max_iters: usize,
    pub tol: f64,
}

/// Thresholds applied after a run. Unset optional checks are skipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySpec {
    pub require_converged: bool,
    /// Defaults to 5e-3 against the rearrangement oracle and 2e-2 against Sinkhorn.
    pub oracle_sup_error: Option<f64>,
    pub decay_r_squared: Option<f64>,
    pub defect_max: Option<f64>,
    pub max_runtime_seconds: Option<f64>,
    pub det_dt_identity: f64,
    pub theta_deviation: f64,
    pub calibration_defect: f64,
    pub pushforward: f64,
    pub curvature_rel: f64,
    pub christoffel_rel: f64,
    pub flat_zero: f64,
    pub wedge_identity: f64,
    pub para_norm: f64,
}

impl Default for VerifySpec {
    fn default() -> Self {
        Self {
            require_converged: false,
            oracle_sup_error: None,
            decay_r_squared: None,
            defect_max: None,
            max_runtime_seconds: None,
            det_dt_identity: 1e-6,
            theta_deviation: 1e-6,
            calibration_defect: 1e-5,
            pushforward: 5e-3,
            curvature_rel: 1e-5,
            christoffel_rel: 1e-6,
            flat_zero: 1e-12,
            wedge_identity: 1e-10,
            para_norm: 1e-12,
        }
    }
}

/// A validated configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub seed: u64,
    pub grid: Grid,
    pub cost: CostModel,
    pub rho: DensitySpec,
    pub rho_bar: DensitySpec,
    /// Scale both densities to unit mass before use.
    pub normalize: bool,
    pub flow: FlowConfig,
    pub initial: InitialSpec,
    pub oracle: Option<OracleSpec>,
    pub directions_per_point: usize,
    /// Random points for the curvature and Christoffel checks.
    pub geometry_samples: usize,
    /// Random points for the wedge identity and θ values for the para-norm check.
    pub identity_samples: usize,
    pub verify: VerifySpec,
    pub output_dir: PathBuf,
}

impl RunConfig {
    pub fn densities(&self) -> (ScalarField, ScalarField) {
        let rho = self.rho.field(self.grid);
        let rho_bar = self.rho_bar.field(self.grid);
        if self.normalize {
            let (m, mb) = (rho.integral(), rho_bar.integral());
            (rho.map(|v| v / m), rho_bar.map(|v| v / mb))
        } else {
            (rho, rho_bar)
        }
    }
}

// ---- raw sections ----

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum Points {
    Same(usize),
    PerAxis(Vec<usize>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    scenario: String,
    seed: Option<u64>,
    grid: RawGrid,
    #[serde(default)]
    cost: RawCost,
    #[serde(default)]
    density: RawDensities,
    #[serde(default)]
    flow: RawFlow,
    #[serde(default)]
    initial: RawInitial,
    oracle: Option<RawOracle>,
    #[serde(default)]
    mtw: RawMtw,
    #[serde(default)]
    geometry: RawGeometry,
    #[serde(default)]
    verify: VerifySpec,
    #[serde(default)]
    output: RawOutput,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    dims: usize,
    points: Points,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCost {
    kind: Option<String>,
    epsilon: Option<f64>,
    frequency: Option<u32>,
    guard_margin: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDensities {
    rho: Option<RawDensity>,
    rho_bar: Option<RawDensity>,
    #[serde(default)]
    normalize: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDensity {
    kind: String,
    value: Option<f64>,
    amplitude: Option<f64>,
    frequency: Option<u32>,
    axis: Option<usize>,
    phase: Option<f64>,
    factors: Option<Vec<RawDensity>>,
    path: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFlow {
    formulation: Option<String>,
    integrator: Option<String>,
    stages: Option<usize>,
    dt: Option<f64>,
    cfl_safety: Option<f64>,
    t_max: Option<f64>,
    stop_grad_theta: Option<f64>,
    monitor_stride: Option<usize>,
    max_steps: Option<usize>,
    max_halvings: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInitial {
    #[serde(default)]
    modes: Vec<Mode>,
    shear: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOracle {
    method: String,
    epsilon: Option<f64>,
    max_iters: Option<usize>,
    tol: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMtw {
    directions_per_point: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGeometry {
    samples: Option<usize>,
    identity_samples: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<PathBuf>,
}

/// Read and validate a config file. Relative CSV paths resolve against the
/// file's directory.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config_str(&text, base)
}

pub fn parse_config_str(text: &str, base_dir: &Path) -> Result<RunConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| CliError::Parse(e.to_string()))?;
    let mut v = Validator {
        errors: vec![],
        base_dir,
    };
    match v.config(raw) {
        Some(cfg) if v.errors.is_empty() => Ok(cfg),
        _ => Err(CliError::Validation(v.errors)),
    }
}

struct Validator<'a> {
    errors: Vec<String>,
    base_dir: &'a Path,
}

impl Validator<'_> {
    fn err(&mut self, field: &str, msg: impl std::fmt::Display) {
        self.errors.push(format!("{field}: {msg}"));
    }

    fn positive(&mut self, field: &str, v: f64) -> f64 {
        if !(v > 0.0 && v.is_finite()) {
            self.err(field, format!("must be positive and finite, got {v}"));
        }
        v
    }

    fn config(&mut self, raw: RawConfig) -> Option<RunConfig> {
        let scenario = Scenario::parse(&raw.scenario);
        if scenario.is_none() {
            self.err(
                "scenario",
                format!(
                    "unknown scenario \"{}\" (expected flow, mtw_scan, geometry_verify or oracle_compare)",
                    raw.scenario
                ),
            );
        }
        let grid = self.grid(&raw.grid);
        let cost = grid.and_then(|g| self.cost(&raw.cost, g.n_dims()));
        let rho = self.density("density.rho", raw.density.rho, grid);
        let rho_bar = self.density("density.rho_bar", raw.density.rho_bar, grid);
        let flow = self.flow(&raw.flow);
        let initial = self.initial(raw.initial, grid, flow.map(|f| f.formulation));
        let oracle = raw.oracle.and_then(|o| self.oracle(&o, grid));
        let verify = self.verify(raw.verify);
        let directions_per_point = raw.mtw.directions_per_point.unwrap_or(16);
        if directions_per_point < 8 {
            self.err("mtw.directions_per_point", "must be at least 8");
        }
        let geometry_samples = raw.geometry.samples.unwrap_or(50);
        let identity_samples = raw.geometry.identity_samples.unwrap_or(100);
        if geometry_samples == 0 || identity_samples == 0 {
            self.err("geometry", "sample counts must be at least 1");
        }

        let (scenario, grid) = (scenario?, grid?);
        if scenario == Scenario::OracleCompare {
            if grid.n_dims() != 1 {
                self.err(
                    "grid.dims",
                    "oracle_compare needs a 1-D grid (the rearrangement oracle is one-dimensional)",
                );
            }
            if grid.resolution()[0] > SINKHORN_MAX_RESOLUTION {
                self.err("grid.points", format!("oracle_compare runs Sinkhorn, which allows at most {SINKHORN_MAX_RESOLUTION} points"));
            }
        }
        Some(RunConfig {
            scenario,
            seed: raw.seed.unwrap_or(0),
            grid,
            cost: cost?,
            rho: rho?,
            rho_bar: rho_bar?,
            normalize: raw.density.normalize,
            flow: flow?,
            initial: initial?,
            oracle,
            directions_per_point,
            geometry_samples,
            identity_samples,
            verify,
            output_dir: raw
                .output
                .dir
                .unwrap_or_else(|| PathBuf::from("kmflow-out")),
        })
    }

    fn grid(&mut self, raw: &RawGrid) -> Option<Grid> {
        let points = match &raw.points {
            Points::Same(p) => vec![*p; raw.dims],
            Points::PerAxis(p) => p.clone(),
        };
        match Grid::new(raw.dims, &points, &vec![1.0; raw.dims]) {
            Ok(g) => Some(g),
            Err(e) => {
                self.err("grid", e);
                None
            }
        }
    }

    fn cost(&mut self, raw: &RawCost, n: usize) -> Option<CostModel> {
        let name = raw.kind.as_deref().unwrap_or("torus_squared_distance");
        let kind = match name {
            "torus_squared_distance" => CostKind::TorusSquaredDistance,
            "bilinear_flat" => CostKind::BilinearFlat,
            "perturbed_quadratic" => CostKind::PerturbedQuadratic {
                epsilon: raw.epsilon.unwrap_or(0.01),
                frequency: raw.frequency.unwrap_or(1),
            },
            other => {
                self.err(
                    "cost.kind",
                    format!(
                        "unknown cost kind \"{other}\" (expected torus_squared_distance, bilinear_flat or perturbed_quadratic)"
                    ),
                );
                return None;
            }
        };
        if !matches!(kind, CostKind::PerturbedQuadratic { .. })
            && (raw.epsilon.is_some() || raw.frequency.is_some())
        {
            self.err(
                "cost",
                format!("epsilon and frequency only apply to perturbed_quadratic, not {name}"),
            );
        }
        let guard = match CutLocusGuard::new(
            raw.guard_margin
                .unwrap_or(kmflow_core::cost::DEFAULT_GUARD_MARGIN),
        ) {
            Ok(g) => g,
            Err(e) => {
                self.err("cost.guard_margin", e);
                return None;
            }
        };
        match CostModel::new(n, kind, guard) {
            Ok(m) => Some(m),
            Err(e) => {
                self.err("cost", e);
                None
            }
        }
    }

    fn density(
        &mut self,
        field: &str,
        raw: Option<RawDensity>,
        grid: Option<Grid>,
    ) -> Option<DensitySpec> {
        let spec = match raw {
            None => DensitySpec::Constant { value: 1.0 },
            Some(r) => self.density_spec(field, r, grid)?,
        };
        let grid = grid?;
        let min = spec.field(grid).min();
        if !(min > 0.0) || !min.is_finite() {
            self.err(
                field,
                format!("density not positive (minimum {min} on the grid)"),
            );
            return None;
        }
        Some(spec)
    }

    fn density_spec(
        &mut self,
        field: &str,
        r: RawDensity,
        grid: Option<Grid>,
    ) -> Option<DensitySpec> {
        let allowed: &[&str] = match r.kind.as_str() {
            "constant" => &["value"],
            "sine" => &["amplitude", "frequency", "axis", "phase"],
            "product" => &["factors"],
            "csv" => &["path"],
            other => {
                self.err(
                    &format!("{field}.kind"),
                    format!("unknown density kind \"{other}\" (expected constant, sine, product or csv)"),
                );
                return None;
            }
        };
        let present = [
            ("value", r.value.is_some()),
            ("amplitude", r.amplitude.is_some()),
            ("frequency", r.frequency.is_some()),
            ("axis", r.axis.is_some()),
            ("phase", r.phase.is_some()),
            ("factors", r.factors.is_some()),
            ("path", r.path.is_some()),
        ];
        for (key, set) in present {
            if set && !allowed.contains(&key) {
                self.err(
                    &format!("{field}.{key}"),
                    format!("not used by kind \"{}\"", r.kind),
                );
            }
        }
        match r.kind.as_str() {
            "constant" => match r.value {
                Some(value) => Some(DensitySpec::Constant { value }),
                None => {
                    self.err(&format!("{field}.value"), "required for a constant density");
                    None
                }
            },
            "sine" => {
                let axis = r.axis.unwrap_or(0);
                if let Some(g) = grid {
                    if axis >= g.n_dims() {
                        self.err(
                            &format!("{field}.axis"),
                            format!("axis {axis} on a {}-D grid", g.n_dims()),
                        );
                    }
                }
                let Some(amplitude) = r.amplitude else {
                    self.err(&format!("{field}.amplitude"), "required for a sine density");
                    return None;
                };
                Some(DensitySpec::Sine {
                    amplitude,
                    frequency: r.frequency.unwrap_or(1),
                    axis,
                    phase: r.phase.unwrap_or(0.0),
                })
            }
            "product" => {
                let factors = r.factors.unwrap_or_default();
                if factors.is_empty() {
                    self.err(
                        &format!("{field}.factors"),
                        "a product needs at least one factor",
                    );
                    return None;
                }
                let specs: Vec<Option<DensitySpec>> = factors
                    .into_iter()
                    .enumerate()
                    .map(|(i, f)| {
                        let sub = format!("{field}.factors[{i}]");
                        if f.kind == "csv" {
                            self.err(&sub, "tabulated densities cannot be product factors");
                            return None;
                        }
                        self.density_spec(&sub, f, grid)
                    })
                    .collect();
                Some(DensitySpec::Product {
                    factors: specs.into_iter().collect::<Option<_>>()?,
                })
            }
            _ => {
                let Some(path) = r.path else {
                    self.err(&format!("{field}.path"), "required for a csv density");
                    return None;
                };
                let path = self.base_dir.join(path);
                let values = self.read_table(field, &path, grid?)?;
                Some(DensitySpec::Csv { path, values })
            }
        }
    }

    fn read_table(&mut self, field: &str, path: &Path, grid: Grid) -> Option<Vec<f64>> {
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => {
                self.err(
                    &format!("{field}.path"),
                    format!("cannot read {}: {e}", path.display()),
                );
                return None;
            }
        };
        let mut values = vec![];
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            // the last column holds the value, so `node,value` tables work too
            let cell = line.rsplit(',').next().unwrap_or(line).trim();
            match cell.parse::<f64>() {
                Ok(v) => values.push(v),
                Err(_) if values.is_empty() => {} // header
                Err(_) => {
                    self.err(
                        &format!("{field}.path"),
                        format!("{}:{}: not a number: {cell:?}", path.display(), lineno + 1),
                    );
                    return None;
                }
            }
        }
        if values.len() != grid.len() {
            self.err(
                &format!("{field}.path"),
                format!(
                    "{} has {} values, the grid has {} nodes",
                    path.display(),
                    values.len(),
                    grid.len()
                ),
            );
            return None;
        }
        Some(values)
    }

    fn flow(&mut self, raw: &RawFlow) -> Option<FlowConfig> {
        let d = FlowConfig::default();
        let formulation = match raw.formulation.as_deref().unwrap_or("potential") {
            "potential" => Formulation::Potential,
            "map" => Formulation::Map,
            other => {
                self.err(
                    "flow.formulation",
                    format!("unknown formulation \"{other}\" (expected potential or map)"),
                );
                return None;
            }
        };
        let integrator = match raw.integrator.as_deref().unwrap_or("euler") {
            "euler" => Integrator::Euler,
            "midpoint" => Integrator::Midpoint,
            "rkl1" => Integrator::Rkl1 {
                stages: raw.stages.unwrap_or(16),
            },
            other => {
                self.err(
                    "flow.integrator",
                    format!("unknown integrator \"{other}\" (expected euler, midpoint or rkl1)"),
                );
                return None;
            }
        };
        if raw.stages.is_some() && !matches!(integrator, Integrator::Rkl1 { .. }) {
            self.err("flow.stages", "only used by the rkl1 integrator");
        }
        let dt_policy = match (raw.dt, raw.cfl_safety) {
            (Some(_), Some(_)) => {
                self.err("flow", "set either dt (fixed step) or cfl_safety, not both");
                return None;
            }
            (Some(dt), None) => DtPolicy::Fixed { dt },
            (None, safety) => DtPolicy::Cfl {
                safety: safety.unwrap_or(0.5),
            },
        };
        let cfg = FlowConfig {
            formulation,
            integrator,
            dt_policy,
            t_max: raw.t_max.unwrap_or(d.t_max),
            stop_grad_theta: raw.stop_grad_theta.unwrap_or(d.stop_grad_theta),
            monitor_stride: raw.monitor_stride.unwrap_or(d.monitor_stride),
            max_steps: raw.max_steps.unwrap_or(d.max_steps),
            max_halvings: raw.max_halvings.unwrap_or(d.max_halvings),
        };
        if let Err(e) = cfg.validate() {
            self.err("flow", e);
            return None;
        }
        Some(cfg)
    }

    fn initial(
        &mut self,
        raw: RawInitial,
        grid: Option<Grid>,
        formulation: Option<Formulation>,
    ) -> Option<InitialSpec> {
        let mut ok = true;
        if let Some(g) = grid {
            for (i, m) in raw.modes.iter().enumerate() {
                if m.k.len() != g.n_dims() {
                    self.err(
                        &format!("initial.modes[{i}].k"),
                        format!("needs {} wavenumbers, got {}", g.n_dims(), m.k.len()),
                    );
                    ok = false;
                }
            }
        }
        let shear = raw.shear.unwrap_or(0.0);
        if shear != 0.0 {
            if grid.is_some_and(|g| g.n_dims() != 2) {
                self.err(
                    "initial.shear",
                    "a non-gradient perturbation needs a 2-D grid",
                );
                ok = false;
            }
            if formulation == Some(Formulation::Potential) {
                self.err(
                    "initial.shear",
                    "a perturbed map has no potential; use flow.formulation = \"map\"",
                );
                ok = false;
            }
        }
        ok.then_some(InitialSpec {
            modes: raw.modes,
            shear,
        })
    }

    fn oracle(&mut self, raw: &RawOracle, grid: Option<Grid>) -> Option<OracleSpec> {
        let method = match raw.method.as_str() {
            "rearrangement" => OracleMethod::Rearrangement1d,
            "sinkhorn" => OracleMethod::Sinkhorn,
            other => {
                self.err(
                    "oracle.method",
                    format!("unknown oracle \"{other}\" (expected rearrangement or sinkhorn)"),
                );
                return None;
            }
        };
        let g = grid?;
        if method == OracleMethod::Rearrangement1d && g.n_dims() != 1 {
            self.err("oracle.method", "rearrangement needs a 1-D grid");
        }
        if method == OracleMethod::Sinkhorn
            && g.resolution().iter().any(|&p| p > SINKHORN_MAX_RESOLUTION)
        {
            self.err(
                "oracle.method",
                format!("sinkhorn allows at most {SINKHORN_MAX_RESOLUTION} points per axis"),
            );
        }
        let epsilon = self.positive("oracle.epsilon", raw.epsilon.unwrap_or(1e-3));
        let tol = self.positive("oracle.tol", raw.tol.unwrap_or(1e-9));
        Some(OracleSpec {
            method,
            epsilon,
            max_iters: raw.max_iters.unwrap_or(100_000),
            tol,
        })
    }

    fn verify(&mut self, v: VerifySpec) -> VerifySpec {
        for (name, val) in [
            ("det_dt_identity", v.det_dt_identity),
            ("theta_deviation", v.theta_deviation),
            ("calibration_defect", v.calibration_defect),
            ("pushforward", v.pushforward),
            ("curvature_rel", v.curvature_rel),
            ("christoffel_rel", v.christoffel_rel),
            ("flat_zero", v.flat_zero),
            ("wedge_identity", v.wedge_identity),
            ("para_norm", v.para_norm),
        ] {
            self.positive(&format!("verify.{name}"), val);
        }
        for (name, val) in [
            ("oracle_sup_error", v.oracle_sup_error),
            ("defect_max", v.defect_max),
            ("max_runtime_seconds", v.max_runtime_seconds),
        ] {
            if let Some(x) = val {
                self.positive(&format!("verify.{name}"), x);
            }
        }
        if let Some(r) = v.decay_r_squared {
            if !(0.0..1.0).contains(&r) {
                self.err(
                    "verify.decay_r_squared",
                    format!("must lie in [0, 1), got {r}"),
                );
            }
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig> {
        parse_config_str(text, Path::new("."))
    }

    const MINIMAL: &str = r#"
scenario = "flow"
[grid]
dims = 1
points = 128
[cost]
kind = "torus_squared_distance"
[density.rho_bar]
kind = "sine"
amplitude = 0.3
"#;

    #[test]
    fn minimal_flow_config_is_valid() {
        let c = parse(MINIMAL).unwrap();
        assert_eq!(c.scenario, Scenario::Flow);
        assert_eq!(c.grid.resolution(), &[128]);
        assert_eq!(c.flow, FlowConfig::default());
        assert_eq!(c.rho, DensitySpec::Constant { value: 1.0 });
        let (_, rb) = c.densities();
        assert!((rb.max() - 1.3).abs() < 1e-3);
    }

    #[test]
    fn negative_amplitude_is_not_a_density() {
        let text = MINIMAL.replace("amplitude = 0.3", "amplitude = -2.0");
        match parse(&text) {
            Err(CliError::Validation(errs)) => {
                assert_eq!(errs.len(), 1);
                assert!(errs[0].contains("density not positive"), "{errs:?}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_cost_kind_names_the_field() {
        let text = MINIMAL.replace("torus_squared_distance", "manhattan");
        match parse(&text) {
            Err(CliError::Validation(errs)) => {
                assert!(errs.iter().any(|e| e.starts_with("cost.kind")), "{errs:?}")
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn all_errors_are_collected() {
        let text = MINIMAL
            .replace("torus_squared_distance", "manhattan")
            .replace("amplitude = 0.3", "amplitude = -2.0")
            .replace("scenario = \"flow\"", "scenario = \"dance\"");
        match parse(&text) {
            Err(CliError::Validation(errs)) => assert_eq!(errs.len(), 3, "{errs:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_parse_errors_with_location() {
        let text = MINIMAL.replace("points = 128", "points = 128\npionts = 3");
        match parse(&text) {
            Err(CliError::Parse(msg)) => {
                assert!(msg.contains("pionts") && msg.contains("line"), "{msg}")
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn fixed_dt_and_cfl_are_exclusive() {
        let text = format!("{MINIMAL}\n[flow]\ndt = 1e-3\ncfl_safety = 0.5\n");
        assert!(matches!(parse(&text), Err(CliError::Validation(_))));
    }

    #[test]
    fn product_densities_multiply() {
        let text = r#"
scenario = "flow"
[grid]
dims = 2
points = 16
[density.rho]
kind = "product"
factors = [
  { kind = "sine", amplitude = 0.2, axis = 0 },
  { kind = "sine", amplitude = 0.2, axis = 1, phase = 0.25 },
]
"#;
        let c = parse(text).unwrap();
        let (rho, _) = c.densities();
        // node (4, 0) sits at x = (1/4, 0): (1 + 0.2)(1 + 0.2 sin(π/2))
        let i = c.grid.flat_index([4, 0]);
        assert!((rho.values()[i] - 1.44).abs() < 1e-14);
    }

    #[test]
    fn tabulated_density_reads_one_value_per_node() {
        let dir = std::env::temp_dir().join(format!("kmflow-cfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let values: Vec<String> = (0..16)
            .map(|i| format!("{i},{}", 1.0 + 0.01 * i as f64))
            .collect();
        std::fs::write(
            dir.join("rb.csv"),
            format!("node,value\n{}\n", values.join("\n")),
        )
        .unwrap();
        let text = r#"
scenario = "flow"
[grid]
dims = 1
points = 16
[density.rho_bar]
kind = "csv"
path = "rb.csv"
"#;
        let c = parse_config_str(text, &dir).unwrap();
        let (_, rb) = c.densities();
        assert_eq!(rb.values()[3], 1.03);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn shear_needs_the_map_formulation() {
        let text = r#"
scenario = "flow"
[grid]
dims = 2
points = 16
[initial]
shear = 1e-3
"#;
        assert!(matches!(parse(text), Err(CliError::Validation(_))));
        let ok = format!("{text}\n[flow]\nformulation = \"map\"\n");
        assert_eq!(parse(&ok).unwrap().initial.shear, 1e-3);
    }
}
