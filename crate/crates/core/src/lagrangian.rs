//! Lagrangian graphs {(x, T(x))} over the torus: the c-exponential, the matrix
//! W = b·DT, the induced metric g = sym W, the Lagrangian angle θ and the
//! slope diagnostics.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cost::CostModel;
use crate::error::{Error, Result};
use crate::geometry::conformal_factor;
use crate::grid::{
    gradient, hessian, interpolate, jacobian_parts, map_nodes, Accuracy, Grid, MatrixField,
    ScalarField, VectorField,
};
use crate::linalg::{generalized_max_eigenvalue, SmallMat};
use crate::paracomplex::{wedge_identity_residual, ParaComplex};

pub const NEWTON_TOL: f64 = 1e-12;
pub const NEWTON_MAX_ITERS: usize = 50;
/// θ routes may disagree by at most this much on a Lagrangian state.
pub const ROUTE_TOL: f64 = 1e-6;
/// Defect below which a state is treated as Lagrangian.
pub const LAGRANGIAN_TOL: f64 = 1e-6;

/// Positive densities ρ on M and ρ̄ on M̄, sampled on a common grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityPair {
    rho: ScalarField,
    rho_bar: ScalarField,
}

impl DensityPair {
    pub fn new(rho: ScalarField, rho_bar: ScalarField) -> Result<Self> {
        if rho.grid() != rho_bar.grid() {
            return Err(Error::GridMismatch(
                "ρ and ρ̄ live on different grids".into(),
            ));
        }
        for (name, f) in [("ρ", &rho), ("ρ̄", &rho_bar)] {
            if let Some(i) = f.values().iter().position(|v| !(*v > 0.0)) {
                return Err(Error::NonpositiveDensity(format!(
                    "{name} = {} at node {i}",
                    f.values()[i]
                )));
            }
        }
        Ok(Self { rho, rho_bar })
    }

    pub fn uniform(grid: Grid) -> Self {
        Self {
            rho: ScalarField::constant(grid, 1.0),
            rho_bar: ScalarField::constant(grid, 1.0),
        }
    }

    pub fn grid(&self) -> &Grid {
        self.rho.grid()
    }

    pub fn rho(&self) -> &ScalarField {
        &self.rho
    }

    pub fn rho_bar(&self) -> &ScalarField {
        &self.rho_bar
    }

    pub fn mass(&self) -> f64 {
        self.rho.integral()
    }

    pub fn mass_bar(&self) -> f64 {
        self.rho_bar.integral()
    }

    pub fn is_normalized(&self) -> bool {
        (self.mass() - 1.0).abs() < 1e-12 && (self.mass_bar() - 1.0).abs() < 1e-12
    }

    /// Both densities divided by their own mass.
    pub fn normalized(&self) -> Self {
        let (m, mb) = (self.mass(), self.mass_bar());
        Self {
            rho: self.rho.map(|v| v / m),
            rho_bar: self.rho_bar.map(|v| v / mb),
        }
    }

    pub fn rho_at(&self, p: &[f64]) -> f64 {
        interpolate(&self.rho, p)
    }

    pub fn rho_bar_at(&self, p: &[f64]) -> f64 {
        interpolate(&self.rho_bar, p)
    }
}

fn check_unit_grid(grid: &Grid, model: &CostModel) -> Result<()> {
    if grid.n_dims() != model.n_dims() {
        return Err(Error::GridMismatch(format!(
            "{}-D grid for a {}-D cost",
            grid.n_dims(),
            model.n_dims()
        )));
    }
    if !grid.is_unit_period() {
        return Err(Error::InvalidParameter(
            "costs live on the unit torus; grid period must be 1".into(),
        ));
    }
    Ok(())
}

/// Solve Du(x) + D_x c(x, x + d) = 0 for the displacement d at one node.
fn newton_displacement(
    model: &CostModel,
    node: usize,
    x: &[f64],
    du: &[f64],
    start: [f64; 2],
) -> Result<[f64; 2]> {
    let n = model.n_dims();
    let mut d = start;
    let mut xb = [0.0; 2];
    let mut residual = f64::INFINITY;
    for _ in 0..=NEWTON_MAX_ITERS {
        if !model.guard().accepts_displacement(&d[..n]) {
            return Err(Error::CutLocusViolation {
                x: x.to_vec(),
                xbar: (0..n).map(|a| x[a] + d[a]).collect(),
            });
        }
        for a in 0..n {
            xb[a] = x[a] + d[a];
        }
        let cx = model.grad_x(x, &xb);
        let mut f = [0.0; 2];
        for a in 0..n {
            f[a] = du[a] + cx[a];
        }
        residual = f[..n].iter().fold(0.0, |m, v| m.max(v.abs()));
        if residual <= NEWTON_TOL {
            return Ok(d);
        }
        // ∂F/∂d = c_{x x̄} = −b, so the Newton update is d += b⁻¹F
        let b = model.mixed(x, &xb).scale(-1.0);
        let step = b
            .lu()
            .ok_or(Error::SingularHessian(f64::INFINITY))?
            .solve(&f[..n]);
        for a in 0..n {
            d[a] += step[a];
        }
    }
    Err(Error::NewtonDivergence { node, residual })
}

/// The c-exponential map of a potential, returned as the displacement field
/// T(x) − x. `warm` supplies starting displacements; otherwise Du is used
/// (exact for the flat costs).
pub fn c_exponential(
    model: &CostModel,
    u: &ScalarField,
    warm: Option<&VectorField>,
) -> Result<VectorField> {
    let grid = *u.grid();
    check_unit_grid(&grid, model)?;
    let n = grid.n_dims();
    let du = gradient(u, Accuracy::Fourth);
    let disp: Vec<[f64; 2]> = map_nodes(grid.len(), |i| {
        let x = grid.coord(i);
        let g = du.at(i);
        let mut start = [0.0; 2];
        match warm {
            Some(w) => start[..n].copy_from_slice(w.at(i)),
            None => start[..n].copy_from_slice(g),
        }
        newton_displacement(model, i, &x[..n], g, start)
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let values = disp.iter().flat_map(|d| d[..n].iter().copied()).collect();
    VectorField::new(grid, values)
}

/// Graph state with cached geometric fields. Built once and never mutated.
#[derive(Debug, Clone)]
pub struct LagrangianState {
    grid: Grid,
    model: CostModel,
    densities: Arc<DensityPair>,
    potential: Option<ScalarField>,
    displacement: VectorField,
    /// W_ij = −c_{i s̄} T^s_j
    w: Vec<Packed>,
    b: Vec<Packed>,
    det_dt: Vec<f64>,
    rho_bar_t: Vec<f64>,
    theta: ScalarField,
    theta_det_dt: ScalarField,
    min_g_eig: f64,
    pub time: f64,
}

struct NodeGeometry {
    w: Packed,
    b: Packed,
    det_dt: f64,
    rho_bar_t: f64,
    theta: f64,
    theta_det_dt: f64,
    min_eig: f64,
}

impl LagrangianState {
    /// State from a potential: T = c-exp(u), W = D²u + c_xx(x, T).
    pub fn from_potential(
        model: &CostModel,
        densities: Arc<DensityPair>,
        u: ScalarField,
        warm: Option<&VectorField>,
    ) -> Result<Self> {
        let disp = c_exponential(model, &u, warm)?;
        let hess = hessian(&u, Accuracy::Fourth);
        let grid = *u.grid();
        let n = grid.n_dims();
        let nodes: Vec<Result<NodeGeometry>> = map_nodes(grid.len(), |i| {
            let (x, xb) = node_points(&grid, &disp, i);
            let w = hess.at(i).add(&model.hess_xx(&x[..n], &xb[..n]));
            let b = model.mixed(&x[..n], &xb[..n]).scale(-1.0);
            let lu_b = b.lu().ok_or(Error::SingularHessian(f64::INFINITY))?;
            let det_dt = w.det() / lu_b.det();
            node_geometry(&densities, i, &xb[..n], w, b, det_dt)
        });
        Self::assemble(model, densities, Some(u), disp, nodes)
    }

    /// State from a displacement field: DT = I + D(displacement), W = b·DT.
    pub fn from_displacement(
        model: &CostModel,
        densities: Arc<DensityPair>,
        displacement: VectorField,
    ) -> Result<Self> {
        let grid = *displacement.grid();
        check_unit_grid(&grid, model)?;
        let n = grid.n_dims();
        let jac = jacobian_parts(&displacement, Accuracy::Fourth);
        let nodes: Vec<Result<NodeGeometry>> = map_nodes(grid.len(), |i| {
            let (x, xb) = node_points(&grid, &displacement, i);
            if !model.guard().accepts(&x[..n], &xb[..n]) {
                return Err(Error::CutLocusViolation {
                    x: x[..n].to_vec(),
                    xbar: xb[..n].to_vec(),
                });
            }
            let dt = SmallMat::from_fn(n, |r, c| {
                jac[r * n + c].values()[i] + if r == c { 1.0 } else { 0.0 }
            });
            let b = model.mixed(&x[..n], &xb[..n]).scale(-1.0);
            let w = b.mul(&dt);
            node_geometry(&densities, i, &xb[..n], w, b, dt.det())
        });
        Self::assemble(model, densities, None, displacement, nodes)
    }

    fn assemble(
        model: &CostModel,
        densities: Arc<DensityPair>,
        potential: Option<ScalarField>,
        displacement: VectorField,
        nodes: Vec<Result<NodeGeometry>>,
    ) -> Result<Self> {
        let grid = *displacement.grid();
        if densities.grid() != &grid {
            return Err(Error::GridMismatch(
                "densities and state use different grids".into(),
            ));
        }
        let len = grid.len();
        let mut w = Vec::with_capacity(len);
        let mut b = Vec::with_capacity(len);
        let mut det_dt = Vec::with_capacity(len);
        let mut rho_bar_t = Vec::with_capacity(len);
        let mut theta = Vec::with_capacity(len);
        let mut theta2 = Vec::with_capacity(len);
        let mut min_g_eig = f64::INFINITY;
        for (i, node) in nodes.into_iter().enumerate() {
            let ng = node?;
            if !(ng.min_eig > 0.0) {
                return Err(Error::SpacelikeViolation {
                    node: i,
                    min_eig: ng.min_eig,
                });
            }
            min_g_eig = min_g_eig.min(ng.min_eig);
            w.push(ng.w);
            b.push(ng.b);
            det_dt.push(ng.det_dt);
            rho_bar_t.push(ng.rho_bar_t);
            theta.push(ng.theta);
            theta2.push(ng.theta_det_dt);
        }
        let state = Self {
            grid,
            model: *model,
            densities,
            potential,
            displacement,
            w,
            b,
            det_dt,
            rho_bar_t,
            theta: ScalarField::new(grid, theta)?,
            theta_det_dt: ScalarField::new(grid, theta2)?,
            min_g_eig,
            time: 0.0,
        };
        let gap = state.route_gap();
        if gap > ROUTE_TOL && state.lagrangian_defect() < LAGRANGIAN_TOL {
            return Err(Error::RouteMismatch(gap));
        }
        Ok(state)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn model(&self) -> &CostModel {
        &self.model
    }

    pub fn densities(&self) -> &Arc<DensityPair> {
        &self.densities
    }

    pub fn potential(&self) -> Option<&ScalarField> {
        self.potential.as_ref()
    }

    pub fn displacement(&self) -> &VectorField {
        &self.displacement
    }

    /// T(x) = x + displacement, not wrapped.
    pub fn map_values(&self) -> VectorField {
        let g = self.grid;
        let n = g.n_dims();
        let vals = (0..g.len())
            .flat_map(|i| {
                let x = g.coord(i);
                let d = self.displacement.at(i);
                (0..n).map(move |a| x[a] + d[a]).collect::<Vec<_>>()
            })
            .collect();
        VectorField::new(g, vals).expect("finite map")
    }

    pub fn w_at(&self, i: usize) -> SmallMat {
        unpack(&self.w[i], self.grid.n_dims())
    }

    pub fn b_at(&self, i: usize) -> SmallMat {
        unpack(&self.b[i], self.grid.n_dims())
    }

    pub fn g_at(&self, i: usize) -> SmallMat {
        self.w_at(i).symmetric_part()
    }

    pub fn w_field(&self) -> MatrixField {
        let w: Vec<SmallMat> = (0..self.grid.len()).map(|i| self.w_at(i)).collect();
        MatrixField::from_mats(self.grid, &w)
    }

    pub fn g_field(&self) -> MatrixField {
        let g: Vec<SmallMat> = (0..self.grid.len()).map(|i| self.g_at(i)).collect();
        MatrixField::from_mats(self.grid, &g)
    }

    /// θ from the det-g route.
    pub fn theta(&self) -> &ScalarField {
        &self.theta
    }

    /// θ from the det-DT route.
    pub fn theta_det_dt(&self) -> &ScalarField {
        &self.theta_det_dt
    }

    pub fn det_dt(&self) -> &[f64] {
        &self.det_dt
    }

    /// ρ̄ interpolated at T(x).
    pub fn rho_bar_at_map(&self) -> &[f64] {
        &self.rho_bar_t
    }

    /// Smallest eigenvalue of g over the grid.
    pub fn min_metric_eigenvalue(&self) -> f64 {
        self.min_g_eig
    }

    /// sup |θ_det-g − θ_det-DT|.
    pub fn route_gap(&self) -> f64 {
        self.theta
            .values()
            .iter()
            .zip(self.theta_det_dt.values())
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// max over nodes of the largest entry of (W − Wᵀ)/2.
    pub fn lagrangian_defect(&self) -> f64 {
        let n = self.grid.n_dims();
        let mut worst: f64 = 0.0;
        for c in &self.w {
            for r in 0..n {
                for s in r + 1..n {
                    worst = worst.max((0.5 * (c[r * n + s] - c[s * n + r])).abs());
                }
            }
        }
        worst
    }

    /// sup |det DT · e^{2θ} · ρ̄∘T / ρ − 1| with the stored det-g θ.
    pub fn det_dt_identity_residual(&self) -> f64 {
        let rho = self.densities.rho().values();
        (0..self.grid.len())
            .map(|i| {
                (self.det_dt[i] * (2.0 * self.theta.values()[i]).exp() * self.rho_bar_t[i] / rho[i]
                    - 1.0)
                    .abs()
            })
            .fold(0.0, f64::max)
    }

    /// sup |det DT · ρ̄∘T − ρ|.
    pub fn pushforward_residual(&self) -> f64 {
        let rho = self.densities.rho().values();
        (0..self.grid.len())
            .map(|i| (self.det_dt[i] * self.rho_bar_t[i] - rho[i]).abs())
            .fold(0.0, f64::max)
    }

    /// sup over nodes of |Ω(F₁,…,Fₙ) − e^{kθ+nψ} √det g| in the null-basis
    /// modulus, with Ω(F₁,…,Fₙ) = τρ + τ̄ ρ̄(T) det DT.
    pub fn calibration_defect(&self) -> Result<f64> {
        let n = self.grid.n_dims();
        let rho = self.densities.rho().values();
        let mut worst: f64 = 0.0;
        for i in 0..self.grid.len() {
            let (x, xb) = node_points(&self.grid, &self.displacement, i);
            let omega = ParaComplex::tau().scale(rho[i])
                + ParaComplex::tau_bar().scale(self.rho_bar_t[i] * self.det_dt[i]);
            let psi = conformal_factor(&self.model, rho[i], self.rho_bar_t[i], &x[..n], &xb[..n])?;
            let det_g = self.g_at(i).det();
            let vol = ParaComplex::exp_k(self.theta.values()[i])
                .scale((n as f64 * psi).exp() * det_g.sqrt());
            worst = worst.max((omega - vol).null_modulus());
        }
        Ok(worst)
    }

    /// Per-node max_V Ŝ(V,V)/h(V,V) over tangent vectors V = v ⊕ DT v.
    /// Uses the eigenvalues of sym W when the state is Lagrangian, otherwise the
    /// generalized eigenproblem (I + WᵀW, sym W), which is exact for any W.
    pub fn slope_ratio(&self) -> Result<ScalarField> {
        let lagrangian = self.lagrangian_defect() < LAGRANGIAN_TOL;
        let vals = (0..self.grid.len())
            .map(|i| {
                if lagrangian {
                    slope_ratio_eigen(&self.w_at(i), i)
                } else {
                    slope_ratio_general(&self.w_at(i), i)
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        ScalarField::new(self.grid, vals)
    }

    pub fn slope_ratio_max(&self) -> Result<f64> {
        Ok(self.slope_ratio()?.max())
    }
}

/// Row-major n×n entries of a matrix of order at most 2.
type Packed = [f64; 4];

fn pack(m: &SmallMat) -> Packed {
    let n = m.order();
    let mut c = [0.0; 4];
    for r in 0..n {
        for s in 0..n {
            c[r * n + s] = m[(r, s)];
        }
    }
    c
}

fn unpack(c: &Packed, n: usize) -> SmallMat {
    SmallMat::from_row_slice(n, &c[..n * n])
}

fn node_points(grid: &Grid, disp: &VectorField, i: usize) -> ([f64; 2], [f64; 2]) {
    let x = grid.coord(i);
    let d = disp.at(i);
    let mut xb = [0.0; 2];
    for a in 0..grid.n_dims() {
        xb[a] = x[a] + d[a];
    }
    (x, xb)
}

fn node_geometry(
    densities: &DensityPair,
    i: usize,
    xb: &[f64],
    w: SmallMat,
    b: SmallMat,
    det_dt: f64,
) -> Result<NodeGeometry> {
    let rho = densities.rho().values()[i];
    let rho_bar_t = densities.rho_bar_at(xb);
    if !(rho_bar_t > 0.0) {
        return Err(Error::NonpositiveDensity(format!(
            "interpolated ρ̄ = {rho_bar_t} at node {i}"
        )));
    }
    let g = w.symmetric_part();
    let min_eig = g.min_sym_eigenvalue();
    let (theta, theta_det_dt) = if min_eig > 0.0 && det_dt > 0.0 {
        (
            theta_det_g(&g, &b, rho, rho_bar_t),
            theta_from_det_dt(det_dt, rho, rho_bar_t),
        )
    } else {
        (0.0, 0.0)
    };
    Ok(NodeGeometry {
        w: pack(&w),
        b: pack(&b),
        det_dt,
        rho_bar_t,
        theta,
        theta_det_dt,
        min_eig,
    })
}

/// θ = −½ (ln det g − ln ρ + ln ρ̄ − ln det b)
pub fn theta_det_g(g: &SmallMat, b: &SmallMat, rho: f64, rho_bar: f64) -> f64 {
    -0.5 * (g.det().ln() - rho.ln() + rho_bar.ln() - b.det().ln())
}

/// θ = ½ ln(ρ / (ρ̄ det DT))
pub fn theta_from_det_dt(det_dt: f64, rho: f64, rho_bar: f64) -> f64 {
    0.5 * (rho / (rho_bar * det_dt)).ln()
}

fn slope_ratio_eigen(w: &SmallMat, node: usize) -> Result<f64> {
    let ev = w.symmetric_part().sym_eigenvalues();
    let mut best = f64::NEG_INFINITY;
    for &l in ev.iter().take(w.order()) {
        if !(l > 0.0) {
            return Err(Error::SpacelikeViolation { node, min_eig: l });
        }
        best = best.max((1.0 + l * l) / l);
    }
    Ok(best)
}

fn slope_ratio_general(w: &SmallMat, node: usize) -> Result<f64> {
    let n = w.order();
    let num = SmallMat::identity(n).add(&w.transpose().mul(w));
    let den = w.symmetric_part();
    generalized_max_eigenvalue(&num, &den).ok_or(Error::SpacelikeViolation {
        node,
        min_eig: den.min_sym_eigenvalue(),
    })
}

/// (|v|² + |Wv|²) / (vᵀ W v)
pub fn slope_quotient(w: &SmallMat, v: &[f64]) -> f64 {
    let n = w.order();
    let wv = w.mul_vec(v);
    let num: f64 =
        v[..n].iter().map(|a| a * a).sum::<f64>() + wv[..n].iter().map(|a| a * a).sum::<f64>();
    num / w.bilinear(v, v)
}

/// Direct maximisation of the slope quotient over unit vectors: random
/// sampling followed by golden-section refinement of the angle (n = 2).
pub fn slope_ratio_direct(w: &SmallMat, samples: usize, rng: &mut impl Rng) -> f64 {
    if w.order() == 1 {
        return slope_quotient(w, &[1.0]);
    }
    let q = |phi: f64| slope_quotient(w, &[phi.cos(), phi.sin()]);
    let mut best_phi = 0.0;
    let mut best = f64::NEG_INFINITY;
    for _ in 0..samples {
        let phi = rng.gen_range(0.0..std::f64::consts::PI);
        let v = q(phi);
        if v > best {
            best = v;
            best_phi = phi;
        }
    }
    let width = std::f64::consts::PI / samples.max(1) as f64 * 4.0;
    let (mut a, mut b) = (best_phi - width, best_phi + width);
    let gr = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - gr * (b - a);
    let mut d = a + gr * (b - a);
    for _ in 0..100 {
        if q(c) > q(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - gr * (b - a);
        d = a + gr * (b - a);
    }
    best.max(q(0.5 * (a + b)))
}

/// Cross-check the eigen route against direct maximisation at `nodes` random
/// nodes; returns the largest relative disagreement.
pub fn slope_route_disagreement(
    state: &LagrangianState,
    nodes: usize,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let ratio = state.slope_ratio()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..nodes {
        let i = rng.gen_range(0..state.grid().len());
        let direct = slope_ratio_direct(&state.w_at(i), samples, &mut rng);
        let eig = ratio.values()[i];
        worst = worst.max((direct - eig).abs() / eig.abs());
    }
    Ok(worst)
}

/// Wedge identity residual at (x, x̄) with densities interpolated there.
pub fn wedge_identity_check(
    model: &CostModel,
    densities: &DensityPair,
    x: &[f64],
    xbar: &[f64],
) -> Result<f64> {
    model.check_guard(x, xbar)?;
    wedge_identity_residual(
        model,
        densities.rho_at(x),
        densities.rho_bar_at(xbar),
        x,
        xbar,
    )
}
