//! Finite-difference partial derivatives of black-box functions, used as
//! independent oracles for the analytic cost partials and the curvature
//! formulas.

/// Central stencils for a derivative of multiplicity m (second-order
/// accurate, error expansion in even powers of h).
const STENCILS: [&[(i32, f64)]; 5] = [
    &[(0, 1.0)],
    &[(-1, -0.5), (1, 0.5)],
    &[(-1, 1.0), (0, -2.0), (1, 1.0)],
    &[(-2, -0.5), (-1, 1.0), (1, -1.0), (2, 0.5)],
    &[(-2, 1.0), (-1, -4.0), (0, 6.0), (1, -4.0), (2, 1.0)],
];

/// Step ratio between extrapolation levels. Each level multiplies h by 13/16,
/// so a dyadic base step keeps every offset dyadic and polynomial functions
/// sampled at dyadic points difference exactly.
pub const DYADIC_RATIO: f64 = 16.0 / 13.0;

/// Largest stencil offset (in steps) for a derivative of multiplicity m.
pub fn stencil_reach(m: usize) -> usize {
    match m {
        0 => 0,
        1 | 2 => 1,
        _ => 2,
    }
}

/// Tensor-product central difference with a common step `h`.
/// `counts[v]` is the derivative multiplicity in variable `v` (each ≤ 4).
pub fn central_difference(f: &impl Fn(&[f64]) -> f64, z: &[f64], counts: &[usize], h: f64) -> f64 {
    debug_assert_eq!(z.len(), counts.len());
    let active: Vec<usize> = (0..z.len()).filter(|&v| counts[v] > 0).collect();
    let total: usize = counts.iter().sum();
    let mut point = z.to_vec();
    let mut sum = 0.0;
    // odometer over the stencils of the active variables
    let mut pos = vec![0usize; active.len()];
    loop {
        let mut w = 1.0;
        for (k, &v) in active.iter().enumerate() {
            let (o, wt) = STENCILS[counts[v]][pos[k]];
            point[v] = z[v] + o as f64 * h;
            w *= wt;
        }
        sum += w * f(&point);
        let mut k = 0;
        loop {
            if k == active.len() {
                return sum / h.powi(total as i32);
            }
            pos[k] += 1;
            if pos[k] < STENCILS[counts[active[k]]].len() {
                break;
            }
            pos[k] = 0;
            k += 1;
        }
    }
}

/// Adaptive Richardson extrapolation (Ridders) of `central_difference`,
/// starting from step `h0` and shrinking by 1.4 per level. Returns the
/// estimate with the smallest internal error estimate, and that estimate.
pub fn ridders(f: &impl Fn(&[f64]) -> f64, z: &[f64], counts: &[usize], h0: f64) -> (f64, f64) {
    ridders_with_ratio(f, z, counts, h0, 1.4)
}

/// Ridders extrapolation with a caller-chosen step ratio. A ratio of 2 with a
/// dyadic `h0` keeps every stencil offset exactly representable.
pub fn ridders_with_ratio(
    f: &impl Fn(&[f64]) -> f64,
    z: &[f64],
    counts: &[usize],
    h0: f64,
    ratio: f64,
) -> (f64, f64) {
    let con = ratio;
    let con2 = con * con;
    const NTAB: usize = 10;
    const SAFE: f64 = 2.0;
    let mut a = [[0.0f64; NTAB]; NTAB];
    let mut h = h0;
    a[0][0] = central_difference(f, z, counts, h);
    let mut ans = a[0][0];
    let mut err = f64::INFINITY;
    for i in 1..NTAB {
        h /= con;
        a[0][i] = central_difference(f, z, counts, h);
        let mut fac = con2;
        for j in 1..=i {
            a[j][i] = (a[j - 1][i] * fac - a[j - 1][i - 1]) / (fac - 1.0);
            fac *= con2;
            let errt = (a[j][i] - a[j - 1][i])
                .abs()
                .max((a[j][i] - a[j - 1][i - 1]).abs());
            if errt <= err {
                err = errt;
                ans = a[j][i];
            }
        }
        if (a[i][i] - a[i - 1][i - 1]).abs() >= SAFE * err {
            break;
        }
    }
    (ans, err)
}

/// Classical two-level Richardson: (4 D(h/2) − D(h)) / 3.
pub fn richardson(f: &impl Fn(&[f64]) -> f64, z: &[f64], counts: &[usize], h: f64) -> f64 {
    let coarse = central_difference(f, z, counts, h);
    let fine = central_difference(f, z, counts, 0.5 * h);
    (4.0 * fine - coarse) / 3.0
}
