//! Kim–McCann geometry on the product Tⁿ × T̄ⁿ.
//!
//! Coordinates are z = (x, x̄) ∈ R²ⁿ. The pseudo-metric is
//! h = ½ [[0, −C], [−Cᵀ, 0]] with C_{is} = c_{i s̄}, and b = −C.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::{fd_base_step, CostModel};
use crate::error::{Error, Result};
use crate::fd;
use crate::grid::Grid;
use crate::linalg::SmallMat;

/// Rank-3 array indexed `[i][j][m]`; only the leading n entries per axis are used.
pub type Tensor3 = [[[f64; 2]; 2]; 2];
/// Rank-4 array indexed `[i][j][k][l]`.
pub type Tensor4 = [[[[f64; 2]; 2]; 2]; 2];

pub const SINGULAR_CONDITION: f64 = 1e10;
/// Threshold separating the three MTW verdicts.
pub const MTW_ZERO_TOL: f64 = 1e-10;
/// Largest sub-lattice extent per axis used by the MTW scan.
pub const MTW_LATTICE_MAX: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixedHessian {
    pub b: SmallMat,
    pub b_inv: SmallMat,
    pub condition_number: f64,
}

/// b = −[c_{i s̄}] and its inverse.
pub fn mixed_hessian(model: &CostModel, x: &[f64], xbar: &[f64]) -> Result<MixedHessian> {
    model.check_guard(x, xbar)?;
    mixed_hessian_unguarded(model, x, xbar)
}

pub(crate) fn mixed_hessian_unguarded(
    model: &CostModel,
    x: &[f64],
    xbar: &[f64],
) -> Result<MixedHessian> {
    let b = model.mixed(x, xbar).scale(-1.0);
    let lu = b.lu().ok_or(Error::SingularHessian(f64::INFINITY))?;
    let b_inv = lu.inverse();
    let cond = norm_inf(&b) * norm_inf(&b_inv);
    if !cond.is_finite() || cond > SINGULAR_CONDITION {
        return Err(Error::SingularHessian(cond));
    }
    Ok(MixedHessian {
        b,
        b_inv,
        condition_number: cond,
    })
}

fn norm_inf(m: &SmallMat) -> f64 {
    (0..m.order())
        .map(|i| (0..m.order()).map(|j| m[(i, j)].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

struct Partials<'a> {
    model: &'a CostModel,
    x: &'a [f64],
    xbar: &'a [f64],
}

impl Partials<'_> {
    /// c with derivatives along the listed unbarred and barred axes.
    fn c(&self, ux: &[usize], bx: &[usize]) -> f64 {
        let mut p = [0usize; 2];
        let mut q = [0usize; 2];
        for &a in ux {
            p[a] += 1;
        }
        for &a in bx {
            q[a] += 1;
        }
        self.model
            .partial_counts_unguarded(self.x, self.xbar, &p, &q)
    }
}

/// Γ^m_{ij} = c^{m k̄} c_{k̄ i j} and Γ^{m̄}_{ī j̄} = c^{m̄ k} c_{k ī j̄}, returned
/// as `(unbarred[i][j][m], barred[i][j][m])`. The contraction uses the inverse
/// of C = [c_{i s̄}] (so c^{m k̄} = (C⁻¹)_{km}).
pub fn christoffel(model: &CostModel, x: &[f64], xbar: &[f64]) -> Result<(Tensor3, Tensor3)> {
    let mh = mixed_hessian(model, x, xbar)?;
    let n = model.n_dims();
    let c_inv = mh.b_inv.scale(-1.0);
    let p = Partials { model, x, xbar };
    let mut un = Tensor3::default();
    let mut ba = Tensor3::default();
    for i in 0..n {
        for j in 0..n {
            for m in 0..n {
                let mut s_un = 0.0;
                let mut s_ba = 0.0;
                for k in 0..n {
                    s_un += c_inv[(k, m)] * p.c(&[i, j], &[k]);
                    s_ba += c_inv[(m, k)] * p.c(&[k], &[i, j]);
                }
                un[i][j][m] = s_un;
                ba[i][j][m] = s_ba;
            }
        }
    }
    Ok((un, ba))
}

/// R_{i j̄ k̄ l} = ½ (c_{i l j̄ k̄} − c_{i l q̄} c^{q̄ a} c_{a j̄ k̄}).
pub fn curvature(model: &CostModel, x: &[f64], xbar: &[f64]) -> Result<Tensor4> {
    let mh = mixed_hessian(model, x, xbar)?;
    let n = model.n_dims();
    let c_inv = mh.b_inv.scale(-1.0);
    let p = Partials { model, x, xbar };
    let mut r = Tensor4::default();
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    let mut corr = 0.0;
                    for q in 0..n {
                        for a in 0..n {
                            corr += p.c(&[i, l], &[q]) * c_inv[(q, a)] * p.c(&[a], &[j, k]);
                        }
                    }
                    r[i][j][k][l] = 0.5 * (p.c(&[i, l], &[j, k]) - corr);
                }
            }
        }
    }
    Ok(r)
}

/// Derivatives of a matrix-valued metric by extrapolated finite differences.
struct MetricDerivatives {
    dim: usize,
    g: SmallMat,
    /// ∂_α g_{μν} at `[(α·d + μ)·d + ν]`
    d1: Vec<f64>,
    /// ∂_α ∂_β g_{μν} at `[((α·d + β)·d + μ)·d + ν]`
    d2: Vec<f64>,
}

impl MetricDerivatives {
    fn new(
        dim: usize,
        metric: &dyn Fn(&[f64]) -> SmallMat,
        z: &[f64],
        h0: f64,
        structural_zero: &dyn Fn(usize, usize) -> bool,
    ) -> Self {
        let d = dim;
        let g = metric(z);
        let mut d1 = vec![0.0; d * d * d];
        let mut d2 = vec![0.0; d * d * d * d];
        for mu in 0..d {
            for nu in mu..d {
                if structural_zero(mu, nu) {
                    continue;
                }
                let f = |p: &[f64]| metric(p)[(mu, nu)];
                for a in 0..d {
                    let mut counts = vec![0usize; d];
                    counts[a] = 1;
                    let (v, _) = fd::ridders_with_ratio(&f, z, &counts, h0, fd::DYADIC_RATIO);
                    d1[(a * d + mu) * d + nu] = v;
                    d1[(a * d + nu) * d + mu] = v;
                    for b in a..d {
                        let mut counts = vec![0usize; d];
                        counts[a] += 1;
                        counts[b] += 1;
                        let (v, _) = fd::ridders_with_ratio(&f, z, &counts, h0, fd::DYADIC_RATIO);
                        for (s, t) in [(a, b), (b, a)] {
                            d2[((s * d + t) * d + mu) * d + nu] = v;
                            d2[((s * d + t) * d + nu) * d + mu] = v;
                        }
                    }
                }
            }
        }
        Self { dim, g, d1, d2 }
    }

    fn dg(&self, a: usize, mu: usize, nu: usize) -> f64 {
        self.d1[(a * self.dim + mu) * self.dim + nu]
    }

    fn ddg(&self, a: usize, b: usize, mu: usize, nu: usize) -> f64 {
        let d = self.dim;
        self.d2[((a * d + b) * d + mu) * d + nu]
    }

    /// Γ^α_{μν} at `[(α·d + μ)·d + ν]`.
    fn christoffel_second_kind(&self) -> Result<Vec<f64>> {
        let d = self.dim;
        let g_inv = self
            .g
            .inverse()
            .ok_or(Error::SingularHessian(f64::INFINITY))?;
        let mut first = vec![0.0; d * d * d];
        for mu in 0..d {
            for nu in 0..d {
                for rho in 0..d {
                    first[(mu * d + nu) * d + rho] =
                        0.5 * (self.dg(mu, nu, rho) + self.dg(nu, mu, rho) - self.dg(rho, mu, nu));
                }
            }
        }
        let mut out = vec![0.0; d * d * d];
        for al in 0..d {
            for mu in 0..d {
                for nu in 0..d {
                    out[(al * d + mu) * d + nu] = (0..d)
                        .map(|rho| g_inv[(al, rho)] * first[(mu * d + nu) * d + rho])
                        .sum();
                }
            }
        }
        Ok(out)
    }

    /// All-lower Riemann tensor R_{ρσμν} at `[((ρ·d + σ)·d + μ)·d + ν]`.
    fn riemann(&self) -> Result<Vec<f64>> {
        let d = self.dim;
        let gam = self.christoffel_second_kind()?;
        let ga = |a: usize, m: usize, n: usize| gam[(a * d + m) * d + n];
        let mut out = vec![0.0; d * d * d * d];
        for r in 0..d {
            for s in 0..d {
                for m in 0..d {
                    for n in 0..d {
                        let second = 0.5
                            * (self.ddg(s, m, r, n) + self.ddg(r, n, s, m)
                                - self.ddg(s, n, r, m)
                                - self.ddg(r, m, s, n));
                        let mut quad = 0.0;
                        for a in 0..d {
                            for b in 0..d {
                                quad += self.g[(a, b)]
                                    * (ga(a, s, m) * ga(b, r, n) - ga(a, s, n) * ga(b, r, m));
                            }
                        }
                        out[((r * d + s) * d + m) * d + n] = second + quad;
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Full 2n×2n pseudo-metric h at (x, x̄), no guard check.
pub fn km_metric_unguarded(model: &CostModel, x: &[f64], xbar: &[f64]) -> SmallMat {
    let n = model.n_dims();
    let c = model.mixed(x, xbar);
    let mut h = SmallMat::zeros(2 * n);
    for i in 0..n {
        for s in 0..n {
            h[(i, n + s)] = -0.5 * c[(i, s)];
            h[(n + s, i)] = -0.5 * c[(i, s)];
        }
    }
    h
}

/// The 2n×2n pseudo-metric h.
pub fn km_metric(model: &CostModel, x: &[f64], xbar: &[f64]) -> Result<SmallMat> {
    model.check_guard(x, xbar)?;
    Ok(km_metric_unguarded(model, x, xbar))
}

fn metric_derivatives(model: &CostModel, x: &[f64], xbar: &[f64]) -> MetricDerivatives {
    let n = model.n_dims();
    let z: Vec<f64> = x[..n].iter().chain(&xbar[..n]).copied().collect();
    let metric = |p: &[f64]| km_metric_unguarded(model, &p[..n], &p[n..]);
    // the diagonal blocks of h vanish by construction
    let zero_block = |mu: usize, nu: usize| (mu < n) == (nu < n);
    MetricDerivatives::new(2 * n, &metric, &z, fd_base_step(model), &zero_block)
}

/// Full all-lower Riemann tensor of h, flat index `((ρ·2n + σ)·2n + μ)·2n + ν`,
/// obtained by differencing the assembled metric and applying the coordinate
/// formula.
pub fn riemann_fd_full(model: &CostModel, x: &[f64], xbar: &[f64]) -> Result<Vec<f64>> {
    model.check_guard(x, xbar)?;
    metric_derivatives(model, x, xbar).riemann()
}

/// Full Christoffel symbols Γ^α_{μν} of h, flat index `(α·2n + μ)·2n + ν`.
pub fn christoffel_fd_full(model: &CostModel, x: &[f64], xbar: &[f64]) -> Result<Vec<f64>> {
    model.check_guard(x, xbar)?;
    metric_derivatives(model, x, xbar).christoffel_second_kind()
}

/// Independent estimate of R_{i j̄ k̄ l}: the (i, n+j, n+k, l) components of
/// [`riemann_fd_full`].
pub fn curvature_fd_oracle(model: &CostModel, x: &[f64], xbar: &[f64]) -> Result<Tensor4> {
    let n = model.n_dims();
    let d = 2 * n;
    let full = riemann_fd_full(model, x, xbar)?;
    let mut r = Tensor4::default();
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    r[i][j][k][l] = full[((i * d + n + j) * d + n + k) * d + l];
                }
            }
        }
    }
    Ok(r)
}

/// Independent estimate of (Γ^m_{ij}, Γ^{m̄}_{ī j̄}) from the metric.
pub fn christoffel_fd_oracle(
    model: &CostModel,
    x: &[f64],
    xbar: &[f64],
) -> Result<(Tensor3, Tensor3)> {
    let n = model.n_dims();
    let d = 2 * n;
    let full = christoffel_fd_full(model, x, xbar)?;
    let mut un = Tensor3::default();
    let mut ba = Tensor3::default();
    for i in 0..n {
        for j in 0..n {
            for m in 0..n {
                un[i][j][m] = full[(m * d + i) * d + j];
                ba[i][j][m] = full[((n + m) * d + n + i) * d + n + j];
            }
        }
    }
    Ok((un, ba))
}

/// Riemann tensor of an arbitrary metric by finite differences; exposed for
/// validating the coordinate formula on known geometries.
pub fn riemann_of_metric(
    dim: usize,
    metric: &dyn Fn(&[f64]) -> SmallMat,
    z: &[f64],
    h0: f64,
) -> Result<Vec<f64>> {
    MetricDerivatives::new(dim, metric, z, h0, &|_, _| false).riemann()
}

pub fn flatten3(t: &Tensor3, n: usize) -> Vec<f64> {
    let mut v = Vec::with_capacity(n * n * n);
    for a in t.iter().take(n) {
        for b in a.iter().take(n) {
            v.extend_from_slice(&b[..n]);
        }
    }
    v
}

pub fn flatten4(t: &Tensor4, n: usize) -> Vec<f64> {
    let mut v = Vec::with_capacity(n * n * n * n);
    for a in t.iter().take(n) {
        for b in a.iter().take(n) {
            for c in b.iter().take(n) {
                v.extend_from_slice(&c[..n]);
            }
        }
    }
    v
}

/// max|a − b| / max|b|, or the absolute difference when `b` vanishes.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(p, q)| (p - q).abs())
        .fold(0.0, f64::max);
    let scale = b.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

/// Remove the h-non-orthogonal part of ξ̄: ξ̄ − (ξᵀbξ̄)/(ξᵀbbᵀξ) · bᵀξ.
pub fn project_null(b: &SmallMat, xi: &[f64], xi_bar: &[f64]) -> Result<[f64; 2]> {
    let n = b.order();
    let bt_xi = b.transpose().mul_vec(xi);
    let denom: f64 = bt_xi[..n].iter().map(|v| v * v).sum();
    if denom == 0.0 {
        return Err(Error::NullPairUnavailable("ξ is zero".into()));
    }
    let num = b.bilinear(xi, xi_bar);
    let mut out = [0.0; 2];
    for a in 0..n {
        out[a] = xi_bar[a] - num / denom * bt_xi[a];
    }
    Ok(out)
}

/// R̂(ξ⊕0, 0⊕ξ̄, ξ⊕0, 0⊕ξ̄) after projecting ξ̄ onto the h-orthogonal
/// complement of ξ. With the mixed components this is
/// −Σ R_{i j̄ k̄ l} ξ_i ξ̄_j ξ̄_k ξ_l. Quadratic in each argument; no
/// normalisation is applied.
pub fn cross_curvature(
    model: &CostModel,
    x: &[f64],
    xbar: &[f64],
    xi: &[f64],
    xi_bar: &[f64],
) -> Result<f64> {
    let n = model.n_dims();
    if n == 1 {
        return Err(Error::NullPairUnavailable(
            "in one dimension h-orthogonality forces ξ̄ = 0".into(),
        ));
    }
    let mh = mixed_hessian(model, x, xbar)?;
    let eta = project_null(&mh.b, xi, xi_bar)?;
    let r = curvature(model, x, xbar)?;
    Ok(contract_cross(&r, n, xi, &eta))
}

fn contract_cross(r: &Tensor4, n: usize, xi: &[f64], eta: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    s += r[i][j][k][l] * xi[i] * eta[j] * eta[k] * xi[l];
                }
            }
        }
    }
    -s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MtwVerdict {
    Positive,
    NonnegativeWithNulls,
    Violated,
}

impl MtwVerdict {
    pub fn from_min(min: Option<f64>) -> Self {
        match min {
            None => Self::Positive,
            Some(m) if m > MTW_ZERO_TOL => Self::Positive,
            Some(m) if m.abs() <= MTW_ZERO_TOL => Self::NonnegativeWithNulls,
            Some(_) => Self::Violated,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MtwArgmin {
    pub x: Vec<f64>,
    pub xbar: Vec<f64>,
    pub xi: Vec<f64>,
    /// Already h-orthogonal to ξ.
    pub xi_bar: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MtwReport {
    pub min_value: Option<f64>,
    pub argmin: Option<MtwArgmin>,
    /// Number of cross-curvature evaluations.
    pub samples: usize,
    pub point_pairs: usize,
    pub directions_per_point: usize,
    pub verdict: MtwVerdict,
}

fn unit_vector(rng: &mut impl Rng, n: usize) -> [f64; 2] {
    loop {
        let mut v = [0.0; 2];
        for c in v.iter_mut().take(n) {
            *c = rng.gen_range(-1.0..1.0);
        }
        let r2: f64 = v.iter().map(|c| c * c).sum();
        if r2 > 1e-6 && r2 <= 1.0 {
            let r = r2.sqrt();
            return v.map(|c| c / r);
        }
    }
}

/// Scan the cross-curvature over guarded pairs of a product sub-lattice of
/// `grid` (at most 8 points per axis) with random unit null pairs.
pub fn mtw_scan(
    model: &CostModel,
    grid: &Grid,
    directions_per_point: usize,
    seed: u64,
) -> Result<MtwReport> {
    if directions_per_point < 8 {
        return Err(Error::InvalidParameter(format!(
            "directions_per_point = {directions_per_point}, need at least 8"
        )));
    }
    let n = model.n_dims();
    if grid.n_dims() != n {
        return Err(Error::GridMismatch(format!(
            "{}-D grid for a {n}-D cost",
            grid.n_dims()
        )));
    }
    if n == 1 {
        return Err(Error::NullPairUnavailable(
            "in one dimension h-orthogonality forces ξ̄ = 0".into(),
        ));
    }
    let axis_points: Vec<Vec<f64>> = (0..n)
        .map(|a| {
            let na = grid.resolution()[a];
            let stride = na.div_ceil(MTW_LATTICE_MAX);
            (0..na)
                .step_by(stride)
                .map(|i| i as f64 * grid.spacing(a))
                .collect()
        })
        .collect();
    let lattice: Vec<[f64; 2]> = axis_points[0]
        .iter()
        .flat_map(|&p0| axis_points[1].iter().map(move |&p1| [p0, p1]))
        .collect();
    let pairs: Vec<([f64; 2], [f64; 2])> = lattice
        .iter()
        .flat_map(|x| lattice.iter().map(move |xb| (*x, *xb)))
        .filter(|(x, xb)| model.guard().accepts(x, xb))
        .collect();

    let per_pair: Vec<Result<(f64, MtwArgmin)>> = pairs
        .par_iter()
        .enumerate()
        .map(|(idx, (x, xb))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(idx as u64);
            let mh = mixed_hessian(model, x, xb)?;
            let r = curvature(model, x, xb)?;
            let mut best: Option<(f64, MtwArgmin)> = None;
            for _ in 0..directions_per_point {
                let xi = unit_vector(&mut rng, n);
                let raw = unit_vector(&mut rng, n);
                let eta = project_null(&mh.b, &xi, &raw)?;
                let norm = eta.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm < 1e-8 {
                    continue;
                }
                let eta = eta.map(|v| v / norm);
                let val = contract_cross(&r, n, &xi, &eta);
                if best.as_ref().is_none_or(|(m, _)| val < *m) {
                    best = Some((
                        val,
                        MtwArgmin {
                            x: x.to_vec(),
                            xbar: xb.to_vec(),
                            xi: xi.to_vec(),
                            xi_bar: eta.to_vec(),
                        },
                    ));
                }
            }
            best.ok_or_else(|| Error::NullPairUnavailable("no admissible direction drawn".into()))
        })
        .collect();

    let mut min: Option<(f64, MtwArgmin)> = None;
    for item in per_pair {
        let (v, arg) = item?;
        // strict comparison in index order breaks ties lexicographically
        if min.as_ref().is_none_or(|(m, _)| v < *m) {
            min = Some((v, arg));
        }
    }
    let min_value = min.as_ref().map(|(v, _)| *v);
    Ok(MtwReport {
        min_value,
        argmin: min.map(|(_, a)| a),
        samples: pairs.len() * directions_per_point,
        point_pairs: pairs.len(),
        directions_per_point,
        verdict: MtwVerdict::from_min(min_value),
    })
}

/// ψ = (1/2n)(ln ρ + ln ρ̄ − ln det b).
pub fn conformal_factor(
    model: &CostModel,
    rho: f64,
    rho_bar: f64,
    x: &[f64],
    xbar: &[f64],
) -> Result<f64> {
    if !(rho > 0.0) || !(rho_bar > 0.0) {
        return Err(Error::NonpositiveDensity(format!(
            "ρ = {rho}, ρ̄ = {rho_bar}"
        )));
    }
    let mh = mixed_hessian(model, x, xbar)?;
    let (log_det, sign) =
        mh.b.lu()
            .ok_or(Error::SingularHessian(f64::INFINITY))?
            .log_abs_det();
    if sign <= 0.0 {
        return Err(Error::SingularHessian(mh.condition_number));
    }
    let n = model.n_dims() as f64;
    Ok((rho.ln() + rho_bar.ln() - log_det) / (2.0 * n))
}

/// Conformally rescaled metric h̃ = e^{2ψ} h.
pub fn kmw_metric(
    model: &CostModel,
    rho: f64,
    rho_bar: f64,
    x: &[f64],
    xbar: &[f64],
) -> Result<SmallMat> {
    let psi = conformal_factor(model, rho, rho_bar, x, xbar)?;
    Ok(km_metric_unguarded(model, x, xbar).scale((2.0 * psi).exp()))
}

/// Per-point bundle of geometric quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometrySample {
    pub x: Vec<f64>,
    pub xbar: Vec<f64>,
    pub b: Vec<f64>,
    pub b_inv: Vec<f64>,
    pub condition_number: f64,
    pub gamma_unbarred: Vec<f64>,
    pub gamma_barred: Vec<f64>,
    pub riem_mixed: Vec<f64>,
    pub psi: f64,
}

pub fn geometry_sample(
    model: &CostModel,
    rho: f64,
    rho_bar: f64,
    x: &[f64],
    xbar: &[f64],
) -> Result<GeometrySample> {
    let n = model.n_dims();
    let mh = mixed_hessian(model, x, xbar)?;
    let (un, ba) = christoffel(model, x, xbar)?;
    let r = curvature(model, x, xbar)?;
    Ok(GeometrySample {
        x: x[..n].to_vec(),
        xbar: xbar[..n].to_vec(),
        b: mh.b.to_row_vec(),
        b_inv: mh.b_inv.to_row_vec(),
        condition_number: mh.condition_number,
        gamma_unbarred: flatten3(&un, n),
        gamma_barred: flatten3(&ba, n),
        riem_mixed: flatten4(&r, n),
        psi: conformal_factor(model, rho, rho_bar, x, xbar)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn perturbed(n: usize, eps: f64) -> CostModel {
        CostModel::perturbed_quadratic(n, eps, 1).unwrap()
    }

    #[test]
    fn flat_mixed_hessian_is_identity() {
        let c = CostModel::torus_squared_distance(2).unwrap();
        let mh = mixed_hessian(&c, &[0.1, 0.2], &[0.3, 0.05]).unwrap();
        assert_eq!(mh.b, SmallMat::identity(2));
        assert_eq!(mh.b_inv, SmallMat::identity(2));
    }

    #[test]
    fn perturbed_mixed_hessian_closed_form() {
        let c = perturbed(1, 0.01);
        let mh = mixed_hessian(&c, &[0.1], &[0.3]).unwrap();
        let w = 2.0 * PI;
        let expect = 1.0 - 0.01 * w * w * (w * 0.1).cos() * (w * 0.3).cos();
        assert!((mh.b[(0, 0)] - expect).abs() < 1e-15);
        let via_partial = -c.partial(&[0.1], &[0.3], &[0], &[0]).unwrap();
        assert_eq!(mh.b[(0, 0)], via_partial);
    }

    #[test]
    fn guard_violation_propagates() {
        let c = CostModel::torus_squared_distance(1).unwrap();
        assert!(matches!(
            mixed_hessian(&c, &[0.0], &[0.47]),
            Err(Error::CutLocusViolation { .. })
        ));
    }

    #[test]
    fn flat_costs_have_zero_geometry() {
        for c in [
            CostModel::torus_squared_distance(2).unwrap(),
            CostModel::bilinear_flat(2).unwrap(),
        ] {
            let (un, ba) = christoffel(&c, &[0.1, 0.7], &[0.2, 0.9]).unwrap();
            assert!(flatten3(&un, 2)
                .iter()
                .chain(&flatten3(&ba, 2))
                .all(|v| *v == 0.0));
            let r = curvature(&c, &[0.1, 0.7], &[0.2, 0.9]).unwrap();
            assert!(flatten4(&r, 2).iter().all(|v| *v == 0.0));
            let fd = curvature_fd_oracle(&c, &[0.1, 0.7], &[0.2, 0.9]).unwrap();
            assert!(flatten4(&fd, 2).iter().all(|v| v.abs() < 1e-8));
        }
    }

    #[test]
    fn sphere_curvature_from_coordinate_formula() {
        // dθ² + sin²θ dφ² has R_{θφθφ} = sin²θ
        let metric = |z: &[f64]| SmallMat::from_row_slice(2, &[1.0, 0.0, 0.0, z[0].sin().powi(2)]);
        let th: f64 = 0.9;
        let r = riemann_of_metric(2, &metric, &[th, 0.3], 1.0 / 32.0).unwrap();
        assert!((r[0b0101] - th.sin().powi(2)).abs() < 1e-8, "{}", r[0b0101]);
        assert!((r[0b0110] + th.sin().powi(2)).abs() < 1e-8);
    }

    #[test]
    fn curvature_matches_fd_oracle_at_a_point() {
        let c = perturbed(2, 0.02);
        let (x, xb) = ([0.13, 0.71], [0.29, 0.52]);
        let an = flatten4(&curvature(&c, &x, &xb).unwrap(), 2);
        let fd = flatten4(&curvature_fd_oracle(&c, &x, &xb).unwrap(), 2);
        assert!(relative_error(&an, &fd) < 1e-5, "{an:?} {fd:?}");
    }

    #[test]
    fn christoffel_symmetric_in_lower_indices() {
        let c = perturbed(2, 0.02);
        let (un, ba) = christoffel(&c, &[0.4, 0.1], &[0.3, 0.25]).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                for m in 0..2 {
                    assert_eq!(un[i][j][m], un[j][i][m]);
                    assert_eq!(ba[i][j][m], ba[j][i][m]);
                }
            }
        }
    }

    #[test]
    fn cross_curvature_is_quadratic_and_even() {
        let c = perturbed(2, 0.02);
        let (x, xb) = ([0.13, 0.71], [0.29, 0.52]);
        let xi = [0.6, 0.8];
        let eta = [0.8, -0.3];
        let v = cross_curvature(&c, &x, &xb, &xi, &eta).unwrap();
        let v2 = cross_curvature(&c, &x, &xb, &[1.2, 1.6], &eta).unwrap();
        assert!((v2 - 4.0 * v).abs() <= 1e-14 * v.abs().max(1.0));
        let vm = cross_curvature(&c, &x, &xb, &[-0.6, -0.8], &[-0.8, 0.3]).unwrap();
        assert_eq!(v, vm);
    }

    #[test]
    fn cross_curvature_unavailable_in_1d() {
        let c = perturbed(1, 0.02);
        assert!(matches!(
            cross_curvature(&c, &[0.1], &[0.2], &[1.0], &[1.0]),
            Err(Error::NullPairUnavailable(_))
        ));
    }

    #[test]
    fn conformal_factor_examples() {
        let c1 = CostModel::torus_squared_distance(1).unwrap();
        assert_eq!(
            conformal_factor(&c1, 1.0, 1.0, &[0.1], &[0.2]).unwrap(),
            0.0
        );
        let psi = conformal_factor(&c1, 4.0, 3.0, &[0.1], &[0.2]).unwrap();
        assert!((psi - 0.5 * 12f64.ln()).abs() < 1e-15);
        assert!(matches!(
            conformal_factor(&c1, 0.0, 3.0, &[0.1], &[0.2]),
            Err(Error::NonpositiveDensity(_))
        ));
        let p = perturbed(2, 0.02);
        let (x, xb) = ([0.3, 0.8], [0.1, 0.95]);
        let psi = conformal_factor(&p, 1.7, 0.6, &x, &xb).unwrap();
        let det_b = mixed_hessian(&p, &x, &xb).unwrap().b.det();
        assert!(((4.0 * psi).exp() * det_b - 1.7 * 0.6).abs() < 1e-12);
    }

    #[test]
    fn kmw_metric_examples() {
        let c1 = CostModel::torus_squared_distance(1).unwrap();
        let h = km_metric(&c1, &[0.1], &[0.2]).unwrap();
        assert_eq!(kmw_metric(&c1, 1.0, 1.0, &[0.1], &[0.2]).unwrap(), h);
        // e^{2ψ} = ρρ̄ = 12 in one dimension, times the ½ of h
        let ht = kmw_metric(&c1, 4.0, 3.0, &[0.1], &[0.2]).unwrap();
        assert!((ht[(0, 1)] - 6.0).abs() < 1e-14);
        assert_eq!(ht[(0, 0)], 0.0);
    }

    #[test]
    fn mtw_scan_flat_and_preconditions() {
        let g = Grid::unit(2, 16).unwrap();
        let c = CostModel::torus_squared_distance(2).unwrap();
        let r = mtw_scan(&c, &g, 8, 1).unwrap();
        assert_eq!(r.verdict, MtwVerdict::NonnegativeWithNulls);
        assert_eq!(r.min_value, Some(0.0));
        assert!(r.samples > 0);
        assert!(mtw_scan(&c, &g, 0, 1).is_err());
    }

    #[test]
    fn mtw_scan_argmin_reevaluates() {
        let g = Grid::unit(2, 16).unwrap();
        let c = perturbed(2, 0.02);
        let r = mtw_scan(&c, &g, 8, 5).unwrap();
        let a = r.argmin.clone().unwrap();
        let v = cross_curvature(&c, &a.x, &a.xbar, &a.xi, &a.xi_bar).unwrap();
        assert!((v - r.min_value.unwrap()).abs() < 1e-12);
        assert_eq!(mtw_scan(&c, &g, 8, 5).unwrap(), r);
    }
}
