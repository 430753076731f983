//! Independent optimal-transport solvers used to check flow limits: periodic
//! monotone rearrangement in 1-D and log-domain Sinkhorn on small grids.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::CostModel;
use crate::error::{Error, Result};
use crate::grid::{wrap_signed, Grid, ScalarField, VectorField};

pub const MASS_TOL: f64 = 1e-10;
pub const ROTATION_CANDIDATES: usize = 64;
/// Largest per-axis resolution accepted by the dense Sinkhorn kernel.
pub const SINKHORN_MAX_RESOLUTION: usize = 64;
pub const SINKHORN_START_EPSILON: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMethod {
    Rearrangement1d,
    Sinkhorn,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleMap {
    pub grid: Grid,
    /// T* − x, wrapped to (−½, ½] per axis.
    pub displacement: VectorField,
    pub method: OracleMethod,
    pub epsilon: Option<f64>,
    pub iterations: Option<usize>,
    pub marginal_residual: Option<f64>,
    /// Mass shift α in T* = F̄⁻¹(F + α) (rearrangement only).
    pub anchor: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapComparison {
    pub sup_error: f64,
    /// Root mean square over nodes.
    pub l2_error: f64,
}

fn check_masses(rho: &ScalarField, rho_bar: &ScalarField) -> Result<(f64, f64)> {
    if rho.grid() != rho_bar.grid() {
        return Err(Error::GridMismatch(
            "ρ and ρ̄ live on different grids".into(),
        ));
    }
    if rho
        .values()
        .iter()
        .chain(rho_bar.values())
        .any(|v| !(*v > 0.0))
    {
        return Err(Error::NonpositiveDensity(
            "oracle densities must be positive".into(),
        ));
    }
    let cell = rho.grid().cell_volume();
    let m = rho.values().iter().sum::<f64>() * cell;
    let mb = rho_bar.values().iter().sum::<f64>() * cell;
    if (m - mb).abs() > MASS_TOL {
        return Err(Error::MassMismatch(m, mb));
    }
    Ok((m, mb))
}

/// Exact integral of the periodic Catmull-Rom interpolant, sampled at nodes
/// and inverted cell by cell.
struct PeriodicCdf<'a> {
    vals: &'a [f64],
    h: f64,
    /// cum[j] = ∫ from 0 to x_j; cum[n] is the total mass.
    cum: Vec<f64>,
}

impl<'a> PeriodicCdf<'a> {
    fn new(field: &'a ScalarField) -> Self {
        let vals = field.values();
        let n = vals.len();
        let h = field.grid().spacing(0);
        let mut cum = Vec::with_capacity(n + 1);
        cum.push(0.0);
        for j in 0..n {
            let at = |k: isize| vals[(j as isize + k).rem_euclid(n as isize) as usize];
            let cell = h * (-at(-1) + 13.0 * at(0) + 13.0 * at(1) - at(2)) / 24.0;
            cum.push(cum[j] + cell);
        }
        Self { vals, h, cum }
    }

    fn total(&self) -> f64 {
        self.cum[self.vals.len()]
    }

    /// ∫ over the first fraction t of cell j.
    fn partial(&self, j: usize, t: f64) -> f64 {
        let n = self.vals.len() as isize;
        let at = |k: isize| self.vals[(j as isize + k).rem_euclid(n) as usize];
        let (t2, t3, t4) = (t * t, t * t * t, t * t * t * t);
        let w = [
            0.5 * (-t2 / 2.0 + 2.0 * t3 / 3.0 - t4 / 4.0),
            0.5 * (2.0 * t - 5.0 * t3 / 3.0 + 3.0 * t4 / 4.0),
            0.5 * (t2 / 2.0 + 4.0 * t3 / 3.0 - 3.0 * t4 / 4.0),
            0.5 * (-t3 / 3.0 + t4 / 4.0),
        ];
        self.h * (w[0] * at(-1) + w[1] * at(0) + w[2] * at(1) + w[3] * at(2))
    }

    fn density_in_cell(&self, j: usize, t: f64) -> f64 {
        let n = self.vals.len() as isize;
        let at = |k: isize| self.vals[(j as isize + k).rem_euclid(n) as usize];
        let (t2, t3) = (t * t, t * t * t);
        0.5 * ((-t + 2.0 * t2 - t3) * at(-1)
            + (2.0 - 5.0 * t2 + 3.0 * t3) * at(0)
            + (t + 4.0 * t2 - 3.0 * t3) * at(1)
            + (-t2 + t3) * at(2))
    }

    /// F at node i (no wrapping needed).
    fn at_node(&self, i: usize) -> f64 {
        self.cum[i]
    }

    /// Inverse of the periodically extended CDF, F(y + 1) = F(y) + total.
    fn inverse(&self, m: f64) -> f64 {
        let n = self.vals.len();
        let total = self.total();
        let turns = (m / total).floor();
        let mut r = m - turns * total;
        if r >= total {
            r -= total;
        }
        // last j with cum[j] <= r
        let j = match self.cum[..n].binary_search_by(|c| c.partial_cmp(&r).expect("finite")) {
            Ok(j) => j,
            Err(j) => j - 1,
        };
        let target = r - self.cum[j];
        let cell = self.cum[j + 1] - self.cum[j];
        // safeguarded Newton on the monotone quartic
        let (mut lo, mut hi) = (0.0, 1.0);
        let mut t = (target / cell).clamp(0.0, 1.0);
        for _ in 0..100 {
            let f = self.partial(j, t) - target;
            if f.abs() <= 1e-15 * total {
                break;
            }
            if f > 0.0 {
                hi = t;
            } else {
                lo = t;
            }
            let d = self.h * self.density_in_cell(j, t);
            let step = if d > 0.0 { t - f / d } else { f64::NAN };
            t = if step > lo && step < hi {
                step
            } else {
                0.5 * (lo + hi)
            };
            if hi - lo < 1e-16 {
                break;
            }
        }
        turns + (j as f64 + t) * self.h
    }
}

/// Unwrapped T(x_i) = F̄⁻¹(F(x_i) + α).
fn quantile_map(f: &PeriodicCdf, fb: &PeriodicCdf, alpha: f64) -> Vec<f64> {
    (0..f.vals.len())
        .map(|i| fb.inverse(f.at_node(i) + alpha))
        .collect()
}

fn wrapped_displacement(grid: &Grid, t: &[f64]) -> Vec<f64> {
    t.iter()
        .enumerate()
        .map(|(i, ti)| wrap_signed(ti - grid.coord(i)[0], 1.0))
        .collect()
}

fn check_1d(rho: &ScalarField) -> Result<Grid> {
    let g = *rho.grid();
    if g.n_dims() != 1 {
        return Err(Error::UnsupportedDimension(g.n_dims()));
    }
    if !g.is_unit_period() {
        return Err(Error::InvalidParameter(
            "rearrangement expects the unit circle".into(),
        ));
    }
    Ok(g)
}

/// T = F̄⁻¹(F(x) + α) without any anchor selection.
pub fn quantile_composition(
    rho: &ScalarField,
    rho_bar: &ScalarField,
    alpha: f64,
) -> Result<VectorField> {
    let g = check_1d(rho)?;
    check_masses(rho, rho_bar)?;
    let (f, fb) = (PeriodicCdf::new(rho), PeriodicCdf::new(rho_bar));
    VectorField::new(g, wrapped_displacement(&g, &quantile_map(&f, &fb, alpha)))
}

/// Periodic monotone rearrangement for the quadratic cost on the circle. The
/// rotation sector is chosen by scanning 64 mass shifts for the least total
/// cost; the shift is then refined so the mean displacement vanishes, which
/// is what x + ∇φ with periodic φ gives.
pub fn rearrangement_1d(rho: &ScalarField, rho_bar: &ScalarField) -> Result<OracleMap> {
    let g = check_1d(rho)?;
    check_masses(rho, rho_bar)?;
    let (f, fb) = (PeriodicCdf::new(rho), PeriodicCdf::new(rho_bar));
    let total = f.total();
    let n = g.len();
    let mean_disp = |alpha: f64| -> f64 {
        quantile_map(&f, &fb, alpha)
            .iter()
            .enumerate()
            .map(|(i, t)| t - g.coord(i)[0])
            .sum::<f64>()
            / n as f64
    };
    let cost = |alpha: f64| -> f64 {
        wrapped_displacement(&g, &quantile_map(&f, &fb, alpha))
            .iter()
            .zip(rho.values())
            .map(|(d, r)| 0.5 * d * d * r)
            .sum::<f64>()
    };
    let step = total / ROTATION_CANDIDATES as f64;
    let best = (0..ROTATION_CANDIDATES)
        .map(|k| k as f64 * step - 0.5 * total)
        .map(|a| (a, cost(a)))
        .fold((0.0, f64::INFINITY), |b, c| if c.1 < b.1 { c } else { b })
        .0;

    // mean displacement increases with α and gains one per turn of mass
    let (mut lo, mut hi) = (best - step, best + step);
    while mean_disp(lo) > 0.0 {
        lo -= step;
    }
    while mean_disp(hi) < 0.0 {
        hi += step;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_disp(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * total {
            break;
        }
    }
    let alpha = 0.5 * (lo + hi);
    Ok(OracleMap {
        grid: g,
        displacement: VectorField::new(g, wrapped_displacement(&g, &quantile_map(&f, &fb, alpha)))?,
        method: OracleMethod::Rearrangement1d,
        epsilon: None,
        iterations: None,
        marginal_residual: None,
        anchor: Some(alpha),
    })
}

fn log_sum_exp(terms: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = terms.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + terms.map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// Entropic OT by log-domain Sinkhorn with ε halved from 0.1 down to the
/// target. T* is the barycentric projection of the coupling, taken on wrapped
/// displacements. `max_iters` bounds the total number of sweeps; `tol` bounds
/// the L¹ error of the second marginal.
pub fn sinkhorn(
    rho: &ScalarField,
    rho_bar: &ScalarField,
    model: &CostModel,
    epsilon: f64,
    max_iters: usize,
    tol: f64,
) -> Result<OracleMap> {
    let g = *rho.grid();
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "ε = {epsilon} must be positive"
        )));
    }
    if g.resolution().iter().any(|&r| r > SINKHORN_MAX_RESOLUTION) {
        return Err(Error::InvalidParameter(format!(
            "dense Sinkhorn supports at most {SINKHORN_MAX_RESOLUTION} nodes per axis"
        )));
    }
    if model.n_dims() != g.n_dims() {
        return Err(Error::GridMismatch(
            "cost and grid dimensions differ".into(),
        ));
    }
    check_masses(rho, rho_bar)?;
    let n = g.n_dims();
    let len = g.len();
    let cell = g.cell_volume();
    let log_a: Vec<f64> = rho.values().iter().map(|v| (v * cell).ln()).collect();
    let log_b: Vec<f64> = rho_bar.values().iter().map(|v| (v * cell).ln()).collect();
    let coords: Vec<[f64; 2]> = (0..len).map(|i| g.coord(i)).collect();
    let cost: Vec<f64> = (0..len * len)
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k / len, k % len);
            model.value_unguarded(&coords[i][..n], &coords[j][..n])
        })
        .collect();
    let cost_t: Vec<f64> = (0..len * len)
        .map(|k| cost[(k % len) * len + k / len])
        .collect();

    let mut f = vec![0.0; len];
    let mut gpot = vec![0.0; len];
    let mut iterations = 0usize;
    let mut residual: f64;
    let mut eps = SINKHORN_START_EPSILON.max(epsilon);
    loop {
        let final_level = eps <= epsilon;
        loop {
            if iterations >= max_iters {
                return Err(Error::NonConvergence(max_iters));
            }
            iterations += 1;
            f = (0..len)
                .into_par_iter()
                .map(|i| {
                    let row = &cost[i * len..(i + 1) * len];
                    -eps * log_sum_exp(
                        row.iter()
                            .zip(&gpot)
                            .zip(&log_b)
                            .map(|((c, gj), lb)| (gj - c) / eps + lb),
                    )
                })
                .collect();
            gpot = (0..len)
                .into_par_iter()
                .map(|j| {
                    let col = &cost_t[j * len..(j + 1) * len];
                    -eps * log_sum_exp(
                        col.iter()
                            .zip(&f)
                            .zip(&log_a)
                            .map(|((c, fi), la)| (fi - c) / eps + la),
                    )
                })
                .collect();
            // after the g update the second marginal is exact; measure the first
            residual = (0..len)
                .into_par_iter()
                .map(|i| {
                    let row = &cost[i * len..(i + 1) * len];
                    let s: f64 = row
                        .iter()
                        .zip(&gpot)
                        .zip(&log_b)
                        .map(|((c, gj), lb)| ((f[i] + gj - c) / eps + lb + log_a[i]).exp())
                        .sum();
                    (s - log_a[i].exp()).abs()
                })
                .collect::<Vec<f64>>()
                .iter()
                .sum();
            // intermediate levels only warm-start the next one
            if residual < tol || (!final_level && residual < tol.max(1e-6)) {
                break;
            }
        }
        if final_level {
            break;
        }
        eps = (0.5 * eps).max(epsilon);
    }

    let disp: Vec<f64> = (0..len)
        .into_par_iter()
        .flat_map_iter(|i| {
            let row = &cost[i * len..(i + 1) * len];
            let mut mass = 0.0;
            let mut acc = [0.0; 2];
            for j in 0..len {
                let w = ((f[i] + gpot[j] - row[j]) / eps + log_b[j] + log_a[i]).exp();
                mass += w;
                for a in 0..n {
                    acc[a] += w * wrap_signed(coords[j][a] - coords[i][a], g.period()[a]);
                }
            }
            (0..n).map(move |a| wrap_signed(acc[a] / mass, g.period()[a]))
        })
        .collect();
    Ok(OracleMap {
        grid: g,
        displacement: VectorField::new(g, disp)?,
        method: OracleMethod::Sinkhorn,
        epsilon: Some(epsilon),
        iterations: Some(iterations),
        marginal_residual: Some(residual),
        anchor: None,
    })
}

/// Sup and RMS of the wrapped difference of two displacement fields.
pub fn compare_maps(t: &VectorField, t_star: &VectorField) -> Result<MapComparison> {
    let g = *t.grid();
    if t_star.grid() != &g {
        return Err(Error::GridMismatch(
            "compared maps use different grids".into(),
        ));
    }
    let n = g.n_dims();
    let mut sup: f64 = 0.0;
    let mut sq = 0.0;
    for i in 0..g.len() {
        let d2: f64 = (0..n)
            .map(|a| wrap_signed(t.at(i)[a] - t_star.at(i)[a], g.period()[a]).powi(2))
            .sum();
        sup = sup.max(d2.sqrt());
        sq += d2;
    }
    Ok(MapComparison {
        sup_error: sup,
        l2_error: (sq / g.len() as f64).sqrt(),
    })
}
