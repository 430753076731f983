use kmflow_core::geometry::{
    christoffel, christoffel_fd_oracle, cross_curvature, curvature, curvature_fd_oracle, flatten3,
    flatten4, mixed_hessian, project_null, relative_error, riemann_fd_full,
};
use kmflow_core::CostModel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn models() -> Vec<CostModel> {
    vec![
        CostModel::perturbed_quadratic(1, 0.02, 1).unwrap(),
        CostModel::perturbed_quadratic(2, 0.02, 1).unwrap(),
        CostModel::perturbed_quadratic(2, -0.015, 1).unwrap(),
        CostModel::perturbed_quadratic(2, 0.005, 2).unwrap(),
    ]
}

#[test]
fn analytic_curvature_and_christoffels_match_metric_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for model in models() {
        let n = model.n_dims();
        let mut worst_r: f64 = 0.0;
        let mut worst_g: f64 = 0.0;
        for _ in 0..50 {
            let (x, xb) = model.sample_valid_pair(&mut rng, 0.0);
            let an = flatten4(&curvature(&model, &x, &xb).unwrap(), n);
            let fd = flatten4(&curvature_fd_oracle(&model, &x, &xb).unwrap(), n);
            worst_r = worst_r.max(relative_error(&an, &fd));
            let (gu, gb) = christoffel(&model, &x, &xb).unwrap();
            let (fu, fb) = christoffel_fd_oracle(&model, &x, &xb).unwrap();
            let mut a = flatten3(&gu, n);
            a.extend(flatten3(&gb, n));
            let mut f = flatten3(&fu, n);
            f.extend(flatten3(&fb, n));
            worst_g = worst_g.max(relative_error(&a, &f));
        }
        assert!(
            worst_r < 1e-5,
            "{:?}: curvature rel error {worst_r:e}",
            model.kind()
        );
        assert!(
            worst_g < 1e-6,
            "{:?}: christoffel rel error {worst_g:e}",
            model.kind()
        );
    }
}

#[test]
fn only_mixed_pattern_components_survive() {
    // components whose index pattern is not two barred + two unbarred with one
    // of each in every antisymmetric pair must vanish
    let model = CostModel::perturbed_quadratic(2, 0.02, 1).unwrap();
    let (x, xb) = ([0.21, 0.64], [0.35, 0.47]);
    let full = riemann_fd_full(&model, &x, &xb).unwrap();
    let scale = full.iter().map(|v| v.abs()).fold(0.0, f64::max);
    assert!(scale > 1e-3);
    let d = 4;
    for r in 0..d {
        for s in 0..d {
            for m in 0..d {
                for nn in 0..d {
                    let barred = |i: usize| i >= 2;
                    let mixed_first = barred(r) != barred(s);
                    let mixed_second = barred(m) != barred(nn);
                    if !(mixed_first && mixed_second) {
                        let v = full[((r * d + s) * d + m) * d + nn];
                        assert!(v.abs() < 1e-6 * scale, "({r},{s},{m},{nn}) = {v:e}");
                    }
                }
            }
        }
    }
}

#[test]
fn cross_curvature_equals_full_tensor_contraction() {
    let model = CostModel::perturbed_quadratic(2, 0.02, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let (x, xb) = model.sample_valid_pair(&mut rng, 0.0);
        let xi = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let raw = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let b = mixed_hessian(&model, &x, &xb).unwrap().b;
        let eta = project_null(&b, &xi, &raw).unwrap();
        assert!(b.bilinear(&xi, &eta).abs() < 1e-12);
        let value = cross_curvature(&model, &x, &xb, &xi, &raw).unwrap();

        let full = riemann_fd_full(&model, &x, &xb).unwrap();
        let d = 4;
        let big_x = [xi[0], xi[1], 0.0, 0.0];
        let big_y = [0.0, 0.0, eta[0], eta[1]];
        let mut oracle = 0.0;
        let mut scale = 0.0;
        for r in 0..d {
            for s in 0..d {
                for m in 0..d {
                    for nn in 0..d {
                        let t = full[((r * d + s) * d + m) * d + nn]
                            * big_x[r]
                            * big_y[s]
                            * big_x[m]
                            * big_y[nn];
                        oracle += t;
                        scale += t.abs();
                    }
                }
            }
        }
        assert!(
            (value - oracle).abs() <= 1e-5 * scale.max(1e-12),
            "{value} vs {oracle}"
        );
    }
}

#[test]
fn curvature_leading_order_is_linear_in_epsilon() {
    let (x, xb) = ([0.17, 0.43], [0.31, 0.36]);
    let r1 = flatten4(
        &curvature(
            &CostModel::perturbed_quadratic(2, 0.001, 1).unwrap(),
            &x,
            &xb,
        )
        .unwrap(),
        2,
    );
    let r2 = flatten4(
        &curvature(
            &CostModel::perturbed_quadratic(2, 0.002, 1).unwrap(),
            &x,
            &xb,
        )
        .unwrap(),
        2,
    );
    for (a, b) in r1.iter().zip(&r2) {
        if a.abs() > 1e-9 {
            assert!((b / a - 2.0).abs() < 0.2, "{a} {b}");
        }
    }
}
