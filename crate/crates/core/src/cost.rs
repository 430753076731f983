//! Cost functions c(x, x̄) on Tⁿ × Tⁿ with closed-form partials up to total
//! order 4.
//!
//! Torus-based costs are written through the signed nearest-representative
//! displacement δ_a = wrap(x_a − x̄_a) ∈ (−½, ½]. Every built-in kind is a sum
//! of per-axis terms φ_a(x_a, x̄_a), so any partial that differentiates along
//! two distinct axes vanishes.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fd;
use crate::grid::wrap_signed;
use crate::linalg::SmallMat;

pub const MAX_PARTIAL_ORDER: usize = 4;
pub const DEFAULT_GUARD_MARGIN: f64 = 0.1;
/// Upper bound on |ε|·(2πk)², which keeps −c_{i s̄} = 1 − ε(2πk)² cos·cos positive.
pub const MAX_PERTURBATION_STRENGTH: f64 = 0.9;

/// Relative tolerance and absolute floor for the FD partial check.
pub const PARTIAL_REL_TOL: f64 = 1e-5;
pub const PARTIAL_ABS_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CostKind {
    /// −x·x̄ with x̄ replaced by its representative nearest to x.
    BilinearFlat,
    /// ½ Σ d_per(x_a, x̄_a)².
    TorusSquaredDistance,
    /// ½ Σ d_per² + ε Σ sin(2πk x_a) sin(2πk x̄_a).
    PerturbedQuadratic { epsilon: f64, frequency: u32 },
}

impl CostKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::BilinearFlat => "bilinear_flat",
            Self::TorusSquaredDistance => "torus_squared_distance",
            Self::PerturbedQuadratic { .. } => "perturbed_quadratic",
        }
    }

    /// True when the mixed Hessian is constant (zero curvature).
    pub fn is_flat(&self) -> bool {
        match self {
            Self::PerturbedQuadratic { epsilon, .. } => *epsilon == 0.0,
            _ => true,
        }
    }
}

/// Excludes a band of per-axis width `margin` around the antipode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutLocusGuard {
    margin: f64,
}

impl CutLocusGuard {
    pub fn new(margin: f64) -> Result<Self> {
        if !(margin > 0.0 && margin < 0.5) {
            return Err(Error::InvalidParameter(format!(
                "guard margin {margin} outside (0, 0.5)"
            )));
        }
        Ok(Self { margin })
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    /// Largest admissible per-axis displacement.
    pub fn max_displacement(&self) -> f64 {
        0.5 - self.margin
    }

    pub fn accepts(&self, x: &[f64], xbar: &[f64]) -> bool {
        let lim = self.max_displacement();
        x.iter()
            .zip(xbar)
            .all(|(a, b)| wrap_signed(a - b, 1.0).abs() <= lim)
    }

    pub fn accepts_displacement(&self, d: &[f64]) -> bool {
        let lim = self.max_displacement();
        d.iter().all(|v| wrap_signed(*v, 1.0).abs() <= lim)
    }
}

impl Default for CutLocusGuard {
    fn default() -> Self {
        Self {
            margin: DEFAULT_GUARD_MARGIN,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    n_dims: usize,
    kind: CostKind,
    guard: CutLocusGuard,
}

#[inline]
fn sin_derivative(m: usize, t: f64) -> f64 {
    match m % 4 {
        0 => t.sin(),
        1 => t.cos(),
        2 => -t.sin(),
        _ => -t.cos(),
    }
}

impl CostModel {
    pub fn new(n_dims: usize, kind: CostKind, guard: CutLocusGuard) -> Result<Self> {
        if !(1..=2).contains(&n_dims) {
            return Err(Error::UnsupportedDimension(n_dims));
        }
        if let CostKind::PerturbedQuadratic { epsilon, frequency } = kind {
            if frequency == 0 {
                return Err(Error::InvalidParameter(
                    "perturbation frequency must be ≥ 1".into(),
                ));
            }
            let omega = 2.0 * PI * frequency as f64;
            let strength = epsilon.abs() * omega * omega;
            if !epsilon.is_finite() || strength > MAX_PERTURBATION_STRENGTH {
                return Err(Error::InvalidParameter(format!(
                    "perturbation |ε|(2πk)² = {strength:.4} exceeds {MAX_PERTURBATION_STRENGTH} \
                     (mixed Hessian would lose definiteness)"
                )));
            }
        }
        Ok(Self {
            n_dims,
            kind,
            guard,
        })
    }

    pub fn torus_squared_distance(n_dims: usize) -> Result<Self> {
        Self::new(
            n_dims,
            CostKind::TorusSquaredDistance,
            CutLocusGuard::default(),
        )
    }

    pub fn bilinear_flat(n_dims: usize) -> Result<Self> {
        Self::new(n_dims, CostKind::BilinearFlat, CutLocusGuard::default())
    }

    pub fn perturbed_quadratic(n_dims: usize, epsilon: f64, frequency: u32) -> Result<Self> {
        Self::new(
            n_dims,
            CostKind::PerturbedQuadratic { epsilon, frequency },
            CutLocusGuard::default(),
        )
    }

    pub fn with_guard(mut self, guard: CutLocusGuard) -> Self {
        self.guard = guard;
        self
    }

    pub fn n_dims(&self) -> usize {
        self.n_dims
    }

    pub fn kind(&self) -> CostKind {
        self.kind
    }

    pub fn guard(&self) -> &CutLocusGuard {
        &self.guard
    }

    pub fn check_guard(&self, x: &[f64], xbar: &[f64]) -> Result<()> {
        if self.guard.accepts(&x[..self.n_dims], &xbar[..self.n_dims]) {
            Ok(())
        } else {
            Err(Error::CutLocusViolation {
                x: x[..self.n_dims].to_vec(),
                xbar: xbar[..self.n_dims].to_vec(),
            })
        }
    }

    /// ∂^p_{x_a} ∂^q_{x̄_a} φ_a(x_a, x̄_a).
    #[inline]
    fn axis_term(&self, p: usize, q: usize, xa: f64, xba: f64) -> f64 {
        let delta = wrap_signed(xa - xba, 1.0);
        let quad = |p: usize, q: usize| -> f64 {
            let sign = if q.is_multiple_of(2) { 1.0 } else { -1.0 };
            match p + q {
                0 => 0.5 * delta * delta,
                1 => sign * delta,
                2 => sign,
                _ => 0.0,
            }
        };
        match self.kind {
            CostKind::BilinearFlat => {
                let xb_rep = xa - delta;
                match (p, q) {
                    (0, 0) => -xa * xb_rep,
                    (1, 0) => -xb_rep,
                    (0, 1) => -xa,
                    (1, 1) => -1.0,
                    _ => 0.0,
                }
            }
            CostKind::TorusSquaredDistance => quad(p, q),
            CostKind::PerturbedQuadratic { epsilon, frequency } => {
                let w = 2.0 * PI * frequency as f64;
                quad(p, q)
                    + epsilon
                        * w.powi((p + q) as i32)
                        * sin_derivative(p, w * xa)
                        * sin_derivative(q, w * xba)
            }
        }
    }

    /// Partial with per-axis derivative counts, no guard check.
    pub fn partial_counts_unguarded(
        &self,
        x: &[f64],
        xbar: &[f64],
        px: &[usize],
        qx: &[usize],
    ) -> f64 {
        let n = self.n_dims;
        let total: usize = px[..n].iter().chain(&qx[..n]).sum();
        if total == 0 {
            return (0..n).map(|a| self.axis_term(0, 0, x[a], xbar[a])).sum();
        }
        let mut axis = None;
        for a in 0..n {
            if px[a] + qx[a] > 0 {
                if axis.is_some() {
                    return 0.0;
                }
                axis = Some(a);
            }
        }
        let a = axis.expect("total > 0");
        self.axis_term(px[a], qx[a], x[a], xbar[a])
    }

    /// Cost value without the cut-locus check; continuous on all of Tⁿ × Tⁿ
    /// for the torus-based kinds.
    pub fn value_unguarded(&self, x: &[f64], xbar: &[f64]) -> f64 {
        self.partial_counts_unguarded(x, xbar, &[0, 0], &[0, 0])
    }

    pub fn value(&self, x: &[f64], xbar: &[f64]) -> Result<f64> {
        self.check_guard(x, xbar)?;
        Ok(self.value_unguarded(x, xbar))
    }

    /// Analytic partial derivative. `orders_x` / `orders_xbar` list the axis of
    /// each derivative, e.g. `&[0, 0]` is ∂²/∂x₀².
    pub fn partial(
        &self,
        x: &[f64],
        xbar: &[f64],
        orders_x: &[usize],
        orders_xbar: &[usize],
    ) -> Result<f64> {
        let total = orders_x.len() + orders_xbar.len();
        if total > MAX_PARTIAL_ORDER {
            return Err(Error::UnsupportedOrder(total));
        }
        let mut px = [0usize; 2];
        let mut qx = [0usize; 2];
        for &a in orders_x {
            if a >= self.n_dims {
                return Err(Error::InvalidParameter(format!("axis {a} out of range")));
            }
            px[a] += 1;
        }
        for &a in orders_xbar {
            if a >= self.n_dims {
                return Err(Error::InvalidParameter(format!("axis {a} out of range")));
            }
            qx[a] += 1;
        }
        self.check_guard(x, xbar)?;
        Ok(self.partial_counts_unguarded(x, xbar, &px, &qx))
    }

    /// D_x c as an n-vector.
    #[inline]
    pub fn grad_x(&self, x: &[f64], xbar: &[f64]) -> [f64; 2] {
        let mut g = [0.0; 2];
        for (a, ga) in g.iter_mut().enumerate().take(self.n_dims) {
            *ga = self.axis_term(1, 0, x[a], xbar[a]);
        }
        g
    }

    /// [c_{ij}] (both derivatives in x).
    #[inline]
    pub fn hess_xx(&self, x: &[f64], xbar: &[f64]) -> SmallMat {
        let mut m = SmallMat::zeros(self.n_dims);
        for a in 0..self.n_dims {
            m[(a, a)] = self.axis_term(2, 0, x[a], xbar[a]);
        }
        m
    }

    /// [c_{i s̄}].
    #[inline]
    pub fn mixed(&self, x: &[f64], xbar: &[f64]) -> SmallMat {
        let mut m = SmallMat::zeros(self.n_dims);
        for a in 0..self.n_dims {
            m[(a, a)] = self.axis_term(1, 1, x[a], xbar[a]);
        }
        m
    }

    /// Draw a point pair accepted by the guard, displacement uniform in the
    /// admissible box shrunk by `inset`.
    pub fn sample_valid_pair(&self, rng: &mut impl Rng, inset: f64) -> ([f64; 2], [f64; 2]) {
        let lim = (self.guard.max_displacement() - inset).max(0.0);
        let mut x = [0.0; 2];
        let mut xb = [0.0; 2];
        for a in 0..self.n_dims {
            x[a] = rng.gen::<f64>();
            let d = rng.gen_range(-lim..=lim);
            xb[a] = (x[a] - d).rem_euclid(1.0);
        }
        (x, xb)
    }
}

/// Free-function form of [`CostModel::value`].
pub fn cost_value(model: &CostModel, x: &[f64], xbar: &[f64]) -> Result<f64> {
    model.value(x, xbar)
}

/// Free-function form of [`CostModel::partial`].
pub fn cost_partial(
    model: &CostModel,
    x: &[f64],
    xbar: &[f64],
    orders_x: &[usize],
    orders_xbar: &[usize],
) -> Result<f64> {
    model.partial(x, xbar, orders_x, orders_xbar)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialCheck {
    pub x: Vec<f64>,
    pub xbar: Vec<f64>,
    /// Per-axis derivative counts in x and x̄.
    pub counts_x: Vec<usize>,
    pub counts_xbar: Vec<usize>,
    pub analytic: f64,
    pub finite_difference: f64,
    /// |analytic − fd| / max(|analytic|, floor / rel_tol)
    pub scaled_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub cost: String,
    pub samples: usize,
    pub checks: usize,
    pub failures: usize,
    pub max_abs_error: f64,
    pub max_scaled_error: f64,
    pub worst: Option<PartialCheck>,
    pub passed: bool,
}

/// All per-variable count vectors over 2n variables with total order ≤ 4.
fn count_vectors(n_vars: usize) -> Vec<Vec<usize>> {
    let mut out = vec![];
    let mut cur = vec![0usize; n_vars];
    fn rec(v: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if v == cur.len() {
            out.push(cur.clone());
            return;
        }
        for m in 0..=left {
            cur[v] = m;
            rec(v + 1, left - m, cur, out);
        }
        cur[v] = 0;
    }
    rec(0, MAX_PARTIAL_ORDER, &mut cur, &mut out);
    out
}

/// Base step for the FD oracle: the largest power of two with 3h below the
/// guard margin, since stencils move δ by at most 3 steps and must stay short
/// of the antipode.
pub fn fd_base_step(model: &CostModel) -> f64 {
    let target = (model.guard().margin() / 3.1).min(1.0 / 32.0);
    2f64.powi(target.log2().floor() as i32)
}

/// Sample points live on this dyadic lattice so that stencil offsets and the
/// resulting displacements are exact in floating point.
const SAMPLE_LATTICE: f64 = (1u64 << 24) as f64;

fn sample_lattice_pair(model: &CostModel, rng: &mut impl Rng) -> ([f64; 2], [f64; 2]) {
    loop {
        let (mut x, mut xb) = model.sample_valid_pair(rng, 0.0);
        for v in x.iter_mut().chain(xb.iter_mut()) {
            *v = ((*v * SAMPLE_LATTICE).round() / SAMPLE_LATTICE).rem_euclid(1.0);
        }
        if model
            .guard()
            .accepts(&x[..model.n_dims()], &xb[..model.n_dims()])
        {
            return (x, xb);
        }
    }
}

/// Check every partial up to order 4 against an extrapolated finite difference
/// of the cost value at `sample_count` random guarded points.
pub fn verify_partials(model: &CostModel, sample_count: usize, seed: u64) -> VerificationReport {
    let n = model.n_dims();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vectors = count_vectors(2 * n);
    let h0 = fd_base_step(model);
    let mut report = VerificationReport {
        cost: model.kind().name().to_string(),
        samples: sample_count,
        checks: 0,
        failures: 0,
        max_abs_error: 0.0,
        max_scaled_error: 0.0,
        worst: None,
        passed: true,
    };
    for _ in 0..sample_count {
        let (x, xb) = sample_lattice_pair(model, &mut rng);
        let z: Vec<f64> = x[..n].iter().chain(&xb[..n]).copied().collect();
        let f = |p: &[f64]| model.value_unguarded(&p[..n], &p[n..]);
        for counts in &vectors {
            let (px, qx) = counts.split_at(n);
            let mut pa = [0usize; 2];
            let mut qa = [0usize; 2];
            pa[..n].copy_from_slice(px);
            qa[..n].copy_from_slice(qx);
            let analytic = model.partial_counts_unguarded(&x, &xb, &pa, &qa);
            let (numeric, _) = fd::ridders_with_ratio(&f, &z, counts, h0, fd::DYADIC_RATIO);
            let abs_err = (analytic - numeric).abs();
            let scaled = abs_err / analytic.abs().max(PARTIAL_ABS_FLOOR / PARTIAL_REL_TOL);
            report.checks += 1;
            report.max_abs_error = report.max_abs_error.max(abs_err);
            if scaled > PARTIAL_REL_TOL {
                report.failures += 1;
            }
            if scaled > report.max_scaled_error || report.worst.is_none() {
                report.max_scaled_error = report.max_scaled_error.max(scaled);
                report.worst = Some(PartialCheck {
                    x: x[..n].to_vec(),
                    xbar: xb[..n].to_vec(),
                    counts_x: px.to_vec(),
                    counts_xbar: qx.to_vec(),
                    analytic,
                    finite_difference: numeric,
                    scaled_error: scaled,
                });
            }
        }
    }
    report.passed = report.failures == 0;
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn perturbed_closed_form(eps: f64, k: f64, x: f64, xb: f64) -> f64 {
        let d = x - xb;
        0.5 * d * d + eps * (2.0 * PI * k * x).sin() * (2.0 * PI * k * xb).sin()
    }

    #[test]
    fn value_examples() {
        let c = CostModel::torus_squared_distance(1).unwrap();
        assert_eq!(c.value(&[0.2], &[0.2]).unwrap(), 0.0);
        assert_eq!(c.value(&[0.0], &[0.25]).unwrap(), 0.03125);
        // wraps across the seam
        assert!((c.value(&[0.95], &[0.05]).unwrap() - 0.005).abs() < 1e-15);

        let p = CostModel::perturbed_quadratic(1, 0.01, 1).unwrap();
        let v = p.value(&[0.1], &[0.3]).unwrap();
        assert!((v - perturbed_closed_form(0.01, 1.0, 0.1, 0.3)).abs() < 1e-15);
    }

    #[test]
    fn guard_rejects_near_antipode() {
        let c = CostModel::torus_squared_distance(1).unwrap();
        assert!(matches!(
            c.value(&[0.0], &[0.45]),
            Err(Error::CutLocusViolation { .. })
        ));
        assert!(c.value(&[0.0], &[0.4]).is_ok());
        assert!(matches!(
            c.partial(&[0.0], &[0.5], &[0], &[0]),
            Err(Error::CutLocusViolation { .. })
        ));
    }

    #[test]
    fn flat_partials() {
        let c = CostModel::torus_squared_distance(2).unwrap();
        let (x, xb) = ([0.3, 0.9], [0.5, 0.1]);
        assert_eq!(c.partial(&x, &xb, &[0], &[0]).unwrap(), -1.0);
        assert_eq!(c.partial(&x, &xb, &[1], &[1]).unwrap(), -1.0);
        assert_eq!(c.partial(&x, &xb, &[0], &[1]).unwrap(), 0.0);
        assert_eq!(c.partial(&x, &xb, &[0, 0], &[0, 0]).unwrap(), 0.0);
        assert_eq!(c.partial(&x, &xb, &[0], &[0, 0]).unwrap(), 0.0);
    }

    #[test]
    fn order_limit() {
        let c = CostModel::torus_squared_distance(1).unwrap();
        assert_eq!(
            c.partial(&[0.1], &[0.1], &[0, 0, 0], &[0, 0]),
            Err(Error::UnsupportedOrder(5))
        );
    }

    #[test]
    fn perturbation_cap() {
        assert!(CostModel::perturbed_quadratic(2, 0.02, 1).is_ok());
        assert!(CostModel::perturbed_quadratic(2, 0.05, 1).is_err());
        assert!(CostModel::perturbed_quadratic(2, 0.005, 2).is_ok());
        assert!(CostModel::perturbed_quadratic(2, 0.01, 0).is_err());
    }

    #[test]
    fn fourth_mixed_partial_matches_fd() {
        let p = CostModel::perturbed_quadratic(1, 0.01, 1).unwrap();
        let exact = p.partial(&[0.1], &[0.3], &[0, 0], &[0, 0]).unwrap();
        // FD straight from the closed-form expression, not through the model
        let f = |z: &[f64]| perturbed_closed_form(0.01, 1.0, z[0], z[1]);
        let (num, _) = fd::ridders(&f, &[0.1, 0.3], &[2, 2], 0.03);
        assert!((exact - num).abs() < 1e-5 * exact.abs(), "{exact} vs {num}");
    }

    #[test]
    fn verify_partials_all_kinds() {
        for model in [
            CostModel::bilinear_flat(1).unwrap(),
            CostModel::torus_squared_distance(2).unwrap(),
            CostModel::perturbed_quadratic(1, 0.02, 1).unwrap(),
            CostModel::perturbed_quadratic(2, -0.02, 1).unwrap(),
            CostModel::perturbed_quadratic(2, 0.005, 2).unwrap(),
        ] {
            let r = verify_partials(&model, 100, 11);
            assert!(r.passed, "{}: {:?}", r.cost, r.worst);
            assert_eq!(r.checks, 100 * count_vectors(2 * model.n_dims()).len());
        }
    }

    #[test]
    fn bilinear_flat_fd_error_is_roundoff_level() {
        let r = verify_partials(&CostModel::bilinear_flat(2).unwrap(), 100, 3);
        assert!(r.passed);
        assert!(r.max_abs_error < 1e-10, "{}", r.max_abs_error);
    }

    #[test]
    fn count_vector_enumeration() {
        // multisets of size ≤ 4 over 2 variables: 1 + 2 + 3 + 4 + 5
        assert_eq!(count_vectors(2).len(), 15);
        assert_eq!(count_vectors(4).len(), 70);
    }
}
