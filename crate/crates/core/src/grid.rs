//! Uniform periodic grids on T¹ and T², the fields living on them, and the
//! finite-difference and interpolation kernels everything else is built on.
//!
//! Node ordering is row-major: for a 2-D grid the flat index is
//! `i0 * N1 + i1`, so axis 1 varies fastest.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::SmallMat;

pub const MIN_RESOLUTION: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    n_dims: usize,
    resolution: [usize; 2],
    period: [f64; 2],
}

/// Grids with fewer nodes than this are processed inline: handing a job to
/// the thread pool costs more than the per-node work saves.
pub const PARALLEL_MIN_NODES: usize = 1024;

/// `f` over node indices 0..len, in node order. Runs on the rayon pool only
/// when there is more than one worker and enough nodes to pay for it.
pub fn map_nodes<T: Send>(len: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    if len < PARALLEL_MIN_NODES || rayon::current_num_threads() == 1 {
        (0..len).map(f).collect()
    } else {
        (0..len).into_par_iter().map(f).collect()
    }
}

/// Build a grid, checking dimension, resolution and period.
pub fn make_grid(n_dims: usize, resolution: &[usize], period: &[f64]) -> Result<Grid> {
    Grid::new(n_dims, resolution, period)
}

impl Grid {
    pub fn new(n_dims: usize, resolution: &[usize], period: &[f64]) -> Result<Self> {
        if !(1..=2).contains(&n_dims) {
            return Err(Error::UnsupportedDimension(n_dims));
        }
        if resolution.len() != n_dims || period.len() != n_dims {
            return Err(Error::DegenerateGrid(format!(
                "expected {n_dims} resolutions and periods, got {} and {}",
                resolution.len(),
                period.len()
            )));
        }
        let mut res = [1usize; 2];
        let mut per = [1.0f64; 2];
        for a in 0..n_dims {
            if resolution[a] < MIN_RESOLUTION {
                return Err(Error::DegenerateGrid(format!(
                    "axis {a} has {} points (minimum {MIN_RESOLUTION})",
                    resolution[a]
                )));
            }
            if !(period[a] > 0.0 && period[a].is_finite()) {
                return Err(Error::DegenerateGrid(format!(
                    "axis {a} has non-positive period {}",
                    period[a]
                )));
            }
            res[a] = resolution[a];
            per[a] = period[a];
        }
        Ok(Self {
            n_dims,
            resolution: res,
            period: per,
        })
    }

    /// Unit-period grid with the same count on every axis.
    pub fn unit(n_dims: usize, points_per_axis: usize) -> Result<Self> {
        Self::new(n_dims, &vec![points_per_axis; n_dims], &vec![1.0; n_dims])
    }

    pub fn n_dims(&self) -> usize {
        self.n_dims
    }

    pub fn resolution(&self) -> &[usize] {
        &self.resolution[..self.n_dims]
    }

    pub fn period(&self) -> &[f64] {
        &self.period[..self.n_dims]
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.period[axis] / self.resolution[axis] as f64
    }

    pub fn min_spacing(&self) -> f64 {
        (0..self.n_dims)
            .map(|a| self.spacing(a))
            .fold(f64::INFINITY, f64::min)
    }

    /// Volume of one grid cell.
    pub fn cell_volume(&self) -> f64 {
        (0..self.n_dims).map(|a| self.spacing(a)).product()
    }

    pub fn len(&self) -> usize {
        self.resolution[..self.n_dims].iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_unit_period(&self) -> bool {
        self.period().iter().all(|&p| p == 1.0)
    }

    #[inline]
    pub fn multi_index(&self, idx: usize) -> [usize; 2] {
        if self.n_dims == 1 {
            [idx, 0]
        } else {
            [idx / self.resolution[1], idx % self.resolution[1]]
        }
    }

    #[inline]
    pub fn flat_index(&self, mi: [usize; 2]) -> usize {
        if self.n_dims == 1 {
            mi[0]
        } else {
            mi[0] * self.resolution[1] + mi[1]
        }
    }

    /// Index of the node `offset` steps along `axis`, wrapping periodically.
    #[inline]
    pub fn neighbor(&self, idx: usize, axis: usize, offset: isize) -> usize {
        let mut mi = self.multi_index(idx);
        let n = self.resolution[axis] as isize;
        mi[axis] = (mi[axis] as isize + offset).rem_euclid(n) as usize;
        self.flat_index(mi)
    }

    #[inline]
    pub fn coord(&self, idx: usize) -> [f64; 2] {
        let mi = self.multi_index(idx);
        let mut x = [0.0; 2];
        for a in 0..self.n_dims {
            x[a] = mi[a] as f64 * self.spacing(a);
        }
        x
    }

    /// Wrap a point into `[0, period)` on every axis.
    pub fn wrap_point(&self, p: &[f64]) -> [f64; 2] {
        let mut w = [0.0; 2];
        for a in 0..self.n_dims {
            let l = self.period[a];
            let mut v = p[a].rem_euclid(l);
            if v >= l {
                v -= l;
            }
            w[a] = v;
        }
        w
    }

    /// Signed nearest-representative displacement in `(-L/2, L/2]`.
    #[inline]
    pub fn wrap_displacement(&self, axis: usize, d: f64) -> f64 {
        wrap_signed(d, self.period[axis])
    }
}

/// Map `d` to its representative in `(-l/2, l/2]`.
#[inline]
pub fn wrap_signed(d: f64, l: f64) -> f64 {
    let mut r = d - l * (d / l).round();
    if r <= -0.5 * l {
        r += l;
    } else if r > 0.5 * l {
        r -= l;
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Accuracy {
    Second,
    #[default]
    Fourth,
}

impl Accuracy {
    pub fn from_order(order: usize) -> Result<Self> {
        match order {
            2 => Ok(Self::Second),
            4 => Ok(Self::Fourth),
            o => Err(Error::InvalidParameter(format!(
                "accuracy {o} (use 2 or 4)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "non-finite field value at node {i}"
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..grid.len())
            .map(|i| f(&grid.coord(i)[..grid.n_dims()]))
            .collect();
        Self { grid, values }
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.len()],
        }
    }

    pub(crate) fn from_vec_unchecked(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Periodic rectangle rule; exact for trigonometric polynomials below
    /// the Nyquist frequency.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Shift the stored samples by whole cells: result[i] = self[i + offset].
    pub fn shifted(&self, axis: usize, offset: isize) -> Self {
        let g = self.grid;
        Self {
            grid: g,
            values: (0..g.len())
                .map(|i| self.values[g.neighbor(i, axis, offset)])
                .collect(),
        }
    }
}

/// An n-vector at every node, stored node-major.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VectorField {
    grid: Grid,
    values: Vec<f64>,
}

impl VectorField {
    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len() * grid.n_dims()],
        }
    }

    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() * grid.n_dims() {
            return Err(Error::GridMismatch(format!(
                "{} values for {} nodes of dimension {}",
                values.len(),
                grid.len(),
                grid.n_dims()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "non-finite vector field value".into(),
            ));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> [f64; 2]) -> Self {
        let n = grid.n_dims();
        let mut values = Vec::with_capacity(grid.len() * n);
        for i in 0..grid.len() {
            let v = f(&grid.coord(i)[..n]);
            values.extend_from_slice(&v[..n]);
        }
        Self { grid, values }
    }

    pub fn from_components(comps: &[ScalarField]) -> Result<Self> {
        let grid = *comps[0].grid();
        let n = grid.n_dims();
        if comps.len() != n || comps.iter().any(|c| *c.grid() != grid) {
            return Err(Error::GridMismatch("component fields disagree".into()));
        }
        let mut values = vec![0.0; grid.len() * n];
        for (a, c) in comps.iter().enumerate() {
            for (i, v) in c.values().iter().enumerate() {
                values[i * n + a] = *v;
            }
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn at(&self, idx: usize) -> &[f64] {
        let n = self.grid.n_dims();
        &self.values[idx * n..(idx + 1) * n]
    }

    pub fn component(&self, axis: usize) -> ScalarField {
        let n = self.grid.n_dims();
        ScalarField::from_vec_unchecked(
            self.grid,
            (0..self.grid.len())
                .map(|i| self.values[i * n + axis])
                .collect(),
        )
    }

    /// Largest Euclidean norm over nodes.
    pub fn max_norm(&self) -> f64 {
        (0..self.grid.len())
            .map(|i| self.at(i).iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }
}

/// An n×n matrix at every node, row-major per node.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixField {
    grid: Grid,
    values: Vec<f64>,
}

impl MatrixField {
    pub fn from_mats(grid: Grid, mats: &[SmallMat]) -> Self {
        let n = grid.n_dims();
        debug_assert_eq!(mats.len(), grid.len());
        let mut values = Vec::with_capacity(grid.len() * n * n);
        for m in mats {
            for i in 0..n {
                for j in 0..n {
                    values.push(m[(i, j)]);
                }
            }
        }
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn at(&self, idx: usize) -> SmallMat {
        let n = self.grid.n_dims();
        SmallMat::from_row_slice(n, &self.values[idx * n * n..(idx + 1) * n * n])
    }
}

// Central stencils as (offset, weight) pairs, weights before division by h^order.
const D1_ACC2: [(isize, f64); 2] = [(-1, -0.5), (1, 0.5)];
const D1_ACC4: [(isize, f64); 4] = [
    (-2, 1.0 / 12.0),
    (-1, -8.0 / 12.0),
    (1, 8.0 / 12.0),
    (2, -1.0 / 12.0),
];
const D2_ACC2: [(isize, f64); 3] = [(-1, 1.0), (0, -2.0), (1, 1.0)];
const D2_ACC4: [(isize, f64); 5] = [
    (-2, -1.0 / 12.0),
    (-1, 16.0 / 12.0),
    (0, -30.0 / 12.0),
    (1, 16.0 / 12.0),
    (2, -1.0 / 12.0),
];

fn stencil(order: usize, acc: Accuracy) -> &'static [(isize, f64)] {
    match (order, acc) {
        (1, Accuracy::Second) => &D1_ACC2,
        (1, Accuracy::Fourth) => &D1_ACC4,
        (2, Accuracy::Second) => &D2_ACC2,
        _ => &D2_ACC4,
    }
}

/// Periodic central-difference derivative along one axis.
pub fn diff(field: &ScalarField, axis: usize, order: usize, acc: Accuracy) -> Result<ScalarField> {
    let g = *field.grid();
    if axis >= g.n_dims() {
        return Err(Error::InvalidParameter(format!(
            "axis {axis} out of range for {}-D grid",
            g.n_dims()
        )));
    }
    if !(1..=2).contains(&order) {
        return Err(Error::InvalidParameter(format!(
            "derivative order {order} (use 1 or 2)"
        )));
    }
    let st = stencil(order, acc);
    let scale = g.spacing(axis).powi(order as i32).recip();
    let vals = field.values();
    let res = g.resolution();
    let m = res[axis];
    let stride: usize = res[axis + 1..].iter().product();
    let reach = st.iter().map(|(o, _)| o.unsigned_abs()).max().unwrap_or(0);
    let mut out = vec![0.0; vals.len()];
    // weights sum to zero, so differencing against the centre is equivalent
    // and makes constants give exact zeros
    if stride == 1 {
        // contiguous lines: copy each into a periodically padded buffer
        let mut pad = vec![0.0; m + 2 * reach];
        for (line, dst) in vals.chunks_exact(m).zip(out.chunks_exact_mut(m)) {
            for (k, v) in pad.iter_mut().enumerate() {
                *v = line[(k + m - reach % m) % m];
            }
            for (p, o) in dst.iter_mut().enumerate() {
                let c = pad[p + reach];
                let mut acc_v = 0.0;
                for &(off, w) in st {
                    acc_v += w * (pad[(p + reach).wrapping_add_signed(off)] - c);
                }
                *o = acc_v * scale;
            }
        }
    } else {
        // strided axis: combine whole rows of the remaining axes at once
        let block_len = m * stride;
        for (block, dst) in vals
            .chunks_exact(block_len)
            .zip(out.chunks_exact_mut(block_len))
        {
            for p in 0..m {
                let centre = &block[p * stride..(p + 1) * stride];
                let d = &mut dst[p * stride..(p + 1) * stride];
                for &(off, w) in st {
                    let q = (p as isize + off).rem_euclid(m as isize) as usize;
                    let row = &block[q * stride..(q + 1) * stride];
                    for ((o, r), c) in d.iter_mut().zip(row).zip(centre) {
                        *o += w * (r - c);
                    }
                }
                d.iter_mut().for_each(|o| *o *= scale);
            }
        }
    }
    Ok(ScalarField::from_vec_unchecked(g, out))
}

/// ∂²f/∂x_a∂x_b. Mixed partials compose first-derivative stencils in
/// ascending axis order; pure second derivatives use the second-order stencil.
pub fn diff_mixed(field: &ScalarField, a: usize, b: usize, acc: Accuracy) -> Result<ScalarField> {
    if a == b {
        return diff(field, a, 2, acc);
    }
    let (lo, hi) = (a.min(b), a.max(b));
    diff(&diff(field, lo, 1, acc)?, hi, 1, acc)
}

pub fn gradient(field: &ScalarField, acc: Accuracy) -> VectorField {
    let g = *field.grid();
    let comps: Vec<ScalarField> = (0..g.n_dims())
        .map(|a| diff(field, a, 1, acc).expect("axis in range"))
        .collect();
    VectorField::from_components(&comps).expect("components share a grid")
}

/// Finite-difference Hessian; symmetric by construction.
pub fn hessian(field: &ScalarField, acc: Accuracy) -> MatrixField {
    let g = *field.grid();
    let n = g.n_dims();
    let mut parts = vec![vec![]; n * n];
    for a in 0..n {
        for b in a..n {
            let d = diff_mixed(field, a, b, acc)
                .expect("axes in range")
                .into_values();
            if a != b {
                parts[b * n + a] = d.clone();
            }
            parts[a * n + b] = d;
        }
    }
    let mats: Vec<SmallMat> = (0..g.len())
        .map(|i| SmallMat::from_fn(n, |r, c| parts[r * n + c][i]))
        .collect();
    MatrixField::from_mats(g, &mats)
}

/// Jacobian of a vector field: entry (i, j) = ∂_j v_i.
pub fn jacobian(field: &VectorField, acc: Accuracy) -> MatrixField {
    let g = *field.grid();
    let n = g.n_dims();
    let parts = jacobian_parts(field, acc);
    let mats: Vec<SmallMat> = (0..g.len())
        .map(|k| SmallMat::from_fn(n, |r, c| parts[r * n + c].values()[k]))
        .collect();
    MatrixField::from_mats(g, &mats)
}

/// Entries of the Jacobian as separate fields, row-major: ∂_c f_r at r·n + c.
pub fn jacobian_parts(field: &VectorField, acc: Accuracy) -> Vec<ScalarField> {
    let n = field.grid().n_dims();
    let mut parts = Vec::with_capacity(n * n);
    for i in 0..n {
        let comp = field.component(i);
        for j in 0..n {
            parts.push(diff(&comp, j, 1, acc).expect("axis in range"));
        }
    }
    parts
}

#[inline]
fn catmull_rom_weights(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        0.5 * (-t + 2.0 * t2 - t3),
        0.5 * (2.0 - 5.0 * t2 + 3.0 * t3),
        0.5 * (t + 4.0 * t2 - 3.0 * t3),
        0.5 * (-t2 + t3),
    ]
}

/// Periodic Catmull-Rom interpolation (tensor product in 2-D).
pub fn interpolate(field: &ScalarField, point: &[f64]) -> f64 {
    let g = field.grid();
    let vals = field.values();
    let mut base = [0usize; 2];
    let mut w = [[0.0; 4]; 2];
    for a in 0..g.n_dims() {
        // the weights depend only on the fractional cell position, so
        // wrapping is done on the integer cell index
        let s = point[a] / g.spacing(a);
        let fl = s.floor();
        let m = g.resolution[a] as i64;
        base[a] = (fl as i64 - 1).rem_euclid(m) as usize;
        w[a] = catmull_rom_weights(s - fl);
    }
    let wrap = |i: usize, m: usize| if i >= m { i - m } else { i };
    let n0 = g.resolution[0];
    if g.n_dims() == 1 {
        let mut acc = 0.0;
        for (k, wk) in w[0].iter().enumerate() {
            acc += wk * vals[wrap(base[0] + k, n0)];
        }
        acc
    } else {
        let n1 = g.resolution[1];
        let mut acc = 0.0;
        for (k0, w0) in w[0].iter().enumerate() {
            let row = &vals[wrap(base[0] + k0, n0) * n1..][..n1];
            let mut r = 0.0;
            for (k1, w1) in w[1].iter().enumerate() {
                r += w1 * row[wrap(base[1] + k1, n1)];
            }
            acc += w0 * r;
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sine_1d(n: usize) -> ScalarField {
        let g = Grid::unit(1, n).unwrap();
        ScalarField::from_fn(g, |x| (2.0 * PI * x[0]).sin())
    }

    #[test]
    fn make_grid_examples() {
        let g = make_grid(1, &[64], &[1.0]).unwrap();
        assert_eq!(g.spacing(0), 1.0 / 64.0);
        let g = make_grid(2, &[32, 32], &[1.0, 1.0]).unwrap();
        assert_eq!(g.len(), 1024);
        assert_eq!(
            make_grid(3, &[16, 16, 16], &[1.0, 1.0, 1.0]),
            Err(Error::UnsupportedDimension(3))
        );
        assert!(matches!(
            make_grid(1, &[4], &[1.0]),
            Err(Error::DegenerateGrid(_))
        ));
        assert!(matches!(
            make_grid(1, &[16], &[0.0]),
            Err(Error::DegenerateGrid(_))
        ));
    }

    #[test]
    fn periodic_indexing_wraps() {
        let g = Grid::unit(2, 8).unwrap();
        assert_eq!(g.neighbor(0, 0, -1), g.flat_index([7, 0]));
        assert_eq!(g.neighbor(0, 1, -1), g.flat_index([0, 7]));
        assert_eq!(g.neighbor(g.flat_index([7, 7]), 1, 1), g.flat_index([7, 0]));
    }

    #[test]
    fn first_derivative_errors_on_sine() {
        let f = sine_1d(256);
        let exact = |x: f64| 2.0 * PI * (2.0 * PI * x).cos();
        for (acc, tol) in [(Accuracy::Second, 1e-3), (Accuracy::Fourth, 1e-7)] {
            let d = diff(&f, 0, 1, acc).unwrap();
            let err = (0..256)
                .map(|i| (d.values()[i] - exact(i as f64 / 256.0)).abs())
                .fold(0.0, f64::max);
            assert!(err < tol, "{acc:?}: {err}");
        }
    }

    #[test]
    fn second_derivative_on_sine() {
        let f = sine_1d(256);
        let d = diff(&f, 0, 2, Accuracy::Fourth).unwrap();
        let err = (0..256)
            .map(|i| {
                let x = i as f64 / 256.0;
                (d.values()[i] + 4.0 * PI * PI * (2.0 * PI * x).sin()).abs()
            })
            .fold(0.0, f64::max);
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn constant_field_has_zero_derivatives() {
        let g = Grid::unit(2, 16).unwrap();
        let f = ScalarField::constant(g, 3.25);
        for axis in 0..2 {
            for order in 1..=2 {
                assert_eq!(
                    diff(&f, axis, order, Accuracy::Fourth).unwrap().max_abs(),
                    0.0
                );
            }
        }
    }

    #[test]
    fn diff_rejects_bad_axis() {
        let f = sine_1d(16);
        assert!(diff(&f, 1, 1, Accuracy::Fourth).is_err());
        assert!(diff(&f, 0, 3, Accuracy::Fourth).is_err());
    }

    #[test]
    fn fourth_order_stencil_exact_on_cubics_away_from_seam() {
        // The cubic is not periodic, so only nodes whose stencil stays inside
        // one period are checked.
        let n = 64;
        let g = Grid::unit(1, n).unwrap();
        let p = |x: f64| 0.3 - 1.2 * x + 2.5 * x * x - 0.7 * x * x * x;
        let dp = |x: f64| -1.2 + 5.0 * x - 2.1 * x * x;
        let d2p = |x: f64| 5.0 - 4.2 * x;
        let f = ScalarField::from_fn(g, |x| p(x[0]));
        let d1 = diff(&f, 0, 1, Accuracy::Fourth).unwrap();
        let d2 = diff(&f, 0, 2, Accuracy::Fourth).unwrap();
        for i in 2..n - 2 {
            let x = i as f64 / n as f64;
            assert!((d1.values()[i] - dp(x)).abs() < 1e-12 * dp(x).abs().max(1.0));
            assert!((d2.values()[i] - d2p(x)).abs() < 1e-9 * d2p(x).abs().max(1.0));
        }
    }

    #[test]
    fn interpolation_examples() {
        let g = Grid::unit(2, 16).unwrap();
        let c = ScalarField::constant(g, 2.5);
        assert!((interpolate(&c, &[0.3712, 0.9]) - 2.5).abs() < 1e-14);

        let f = ScalarField::from_fn(g, |x| (x[0] * 7.0).sin() + x[1]);
        let node = g.flat_index([3, 11]);
        let x = g.coord(node);
        assert_eq!(interpolate(&f, &x), f.values()[node]);

        let s = sine_1d(256);
        let v = interpolate(&s, &[0.123]);
        assert!((v - (2.0 * PI * 0.123).sin()).abs() < 1e-6);
    }

    #[test]
    fn interpolation_reproduces_linear_in_cell_data() {
        let g = Grid::unit(1, 32).unwrap();
        // linear on a window of four nodes around the query cell
        let f = ScalarField::from_fn(g, |x| 1.0 + 2.0 * x[0]);
        let v = interpolate(&f, &[0.5 + 0.3 / 32.0]);
        assert!((v - (1.0 + 2.0 * (0.5 + 0.3 / 32.0))).abs() < 1e-13);
    }

    #[test]
    fn hessian_is_symmetric() {
        let g = Grid::unit(2, 16).unwrap();
        let f = ScalarField::from_fn(g, |x| (2.0 * PI * x[0]).sin() * (4.0 * PI * x[1]).cos());
        let h = hessian(&f, Accuracy::Fourth);
        for i in 0..g.len() {
            let m = h.at(i);
            assert_eq!(m[(0, 1)], m[(1, 0)]);
        }
    }
}
