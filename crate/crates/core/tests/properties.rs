use std::f64::consts::PI;
use std::sync::Arc;

use approx::assert_abs_diff_eq;
use kmflow_core::geometry::{
    christoffel, cross_curvature, curvature, flatten3, flatten4, mixed_hessian,
};
use kmflow_core::grid::{diff, interpolate};
use kmflow_core::lagrangian::{DensityPair, LagrangianState};
use kmflow_core::oracle::{rearrangement_1d, sinkhorn};
use kmflow_core::paracomplex::ParaComplex;
use kmflow_core::{Accuracy, CostModel, Grid, ScalarField};
use proptest::prelude::*;

fn perturbed_2d() -> impl Strategy<Value = CostModel> {
    (-0.02f64..0.02, 1u32..=2).prop_map(|(e, k)| {
        let cap = 0.9 / (2.0 * PI * k as f64).powi(2);
        CostModel::perturbed_quadratic(2, e.clamp(-cap, cap), k).unwrap()
    })
}

fn any_cost_2d() -> impl Strategy<Value = CostModel> {
    prop_oneof![
        Just(CostModel::torus_squared_distance(2).unwrap()),
        Just(CostModel::bilinear_flat(2).unwrap()),
        perturbed_2d(),
    ]
}

/// x in the unit square and a displacement safely inside the guard.
fn guarded_pair() -> impl Strategy<Value = ([f64; 2], [f64; 2])> {
    (0.0f64..1.0, 0.0f64..1.0, -0.39f64..0.39, -0.39f64..0.39)
        .prop_map(|(a, b, d0, d1)| ([a, b], [a + d0, b + d1]))
}

fn positive_density(g: Grid) -> impl Strategy<Value = ScalarField> {
    (-0.4f64..0.4, -0.3f64..0.3, 0.0f64..1.0).prop_map(move |(a1, a2, phase)| {
        let f = ScalarField::from_fn(g, |x| {
            1.0 + a1 * (2.0 * PI * (x[0] + phase)).sin() + a2 * (4.0 * PI * x[0]).cos()
        });
        let m = f.mean();
        f.map(|v| v / m)
    })
}

proptest! {
    #[test]
    fn diff_commutes_with_translation(
        vals in prop::collection::vec(-1.0f64..1.0, 12 * 8),
        axis in 0usize..2,
        order in 1usize..=2,
        shift_axis in 0usize..2,
    ) {
        let g = Grid::new(2, &[12, 8], &[1.0, 1.0]).unwrap();
        let f = ScalarField::new(g, vals).unwrap();
        let shift = |h: &ScalarField| {
            ScalarField::new(g, (0..g.len()).map(|i| h.values()[g.neighbor(i, shift_axis, 1)]).collect()).unwrap()
        };
        let a = diff(&shift(&f), axis, order, Accuracy::Fourth).unwrap();
        let b = shift(&diff(&f, axis, order, Accuracy::Fourth).unwrap());
        prop_assert_eq!(a.values(), b.values());
    }

    #[test]
    fn fourth_order_stencils_are_exact_on_low_degree_polynomials(c in prop::array::uniform5(-1.0f64..1.0)) {
        let g = Grid::unit(1, 64).unwrap();
        let p = |x: f64| c[0] + x * (c[1] + x * (c[2] + x * (c[3] + x * c[4])));
        let dp = |x: f64| c[1] + x * (2.0 * c[2] + x * (3.0 * c[3] + x * 4.0 * c[4]));
        let ddp = |x: f64| 2.0 * c[2] + x * (6.0 * c[3] + x * 12.0 * c[4]);
        let f = ScalarField::from_fn(g, |x| p(x[0]));
        let d1 = diff(&f, 0, 1, Accuracy::Fourth).unwrap();
        let d2 = diff(&f, 0, 2, Accuracy::Fourth).unwrap();
        // away from the periodic seam the samples are those of the polynomial
        for i in 2..62 {
            let x = g.coord(i)[0];
            prop_assert!((d1.values()[i] - dp(x)).abs() < 1e-12 * 64.0);
            prop_assert!((d2.values()[i] - ddp(x)).abs() < 1e-12 * 64.0 * 64.0);
        }
    }

    #[test]
    fn interpolation_is_periodic(
        vals in prop::collection::vec(-1.0f64..1.0, 16 * 8),
        k0 in 0u32..(1 << 20),
        k1 in 0u32..(1 << 20),
        turns in -3i32..3,
    ) {
        let g = Grid::new(2, &[16, 8], &[1.0, 1.0]).unwrap();
        let f = ScalarField::new(g, vals).unwrap();
        let p = [k0 as f64 / (1u32 << 20) as f64, k1 as f64 / (1u32 << 20) as f64];
        let q = [p[0] + turns as f64, p[1] - turns as f64];
        prop_assert_eq!(interpolate(&f, &p), interpolate(&f, &q));
    }

    #[test]
    fn partials_ignore_derivative_order(
        model in any_cost_2d(),
        (x, xb) in guarded_pair(),
        ix in prop::collection::vec(0usize..2, 0..=2),
        ixb in prop::collection::vec(0usize..2, 0..=2),
    ) {
        let base = model.partial(&x, &xb, &ix, &ixb).unwrap();
        let mut rx = ix.clone();
        rx.reverse();
        let mut rxb = ixb.clone();
        rxb.reverse();
        prop_assert_eq!(model.partial(&x, &xb, &rx, &rxb).unwrap(), base);
    }

    #[test]
    fn mixed_hessian_is_symmetric_positive_definite(model in any_cost_2d(), (x, xb) in guarded_pair()) {
        let b = mixed_hessian(&model, &x, &xb).unwrap().b;
        prop_assert!(b.sub(&b.transpose()).max_abs() == 0.0);
        prop_assert!(b.min_sym_eigenvalue() > 0.0);
    }

    #[test]
    fn torus_cost_has_unit_mixed_hessian(x in prop::array::uniform2(0.0f64..1.0), d in prop::array::uniform2(-0.39f64..0.39)) {
        let model = CostModel::torus_squared_distance(2).unwrap();
        let xb = [x[0] + d[0], x[1] + d[1]];
        for i in 0..2 {
            for s in 0..2 {
                let expect = if i == s { -1.0 } else { 0.0 };
                prop_assert_eq!(model.partial(&x, &xb, &[i], &[s]).unwrap(), expect);
            }
        }
    }

    #[test]
    fn cross_curvature_is_even(
        model in perturbed_2d(),
        (x, xb) in guarded_pair(),
        xi in prop::array::uniform2(-1.0f64..1.0),
        eta in prop::array::uniform2(-1.0f64..1.0),
    ) {
        prop_assume!(xi[0].abs() + xi[1].abs() > 1e-3);
        let a = cross_curvature(&model, &x, &xb, &xi, &eta);
        prop_assume!(a.is_ok());
        let b = cross_curvature(&model, &x, &xb, &[-xi[0], -xi[1]], &[-eta[0], -eta[1]]).unwrap();
        prop_assert_eq!(a.unwrap(), b);
    }

    #[test]
    fn flat_costs_have_no_curvature(flat in prop_oneof![Just(0), Just(1)], (x, xb) in guarded_pair()) {
        let model = if flat == 0 { CostModel::torus_squared_distance(2) } else { CostModel::bilinear_flat(2) }.unwrap();
        let r = flatten4(&curvature(&model, &x, &xb).unwrap(), 2);
        let (gu, gb) = christoffel(&model, &x, &xb).unwrap();
        prop_assert!(r.iter().chain(&flatten3(&gu, 2)).chain(&flatten3(&gb, 2)).all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn para_norm_of_exponential_is_one(theta in -5.0f64..5.0) {
        let e = ParaComplex::exp_k(theta);
        assert_abs_diff_eq!(e.para_norm_sq(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn para_multiplication_is_componentwise_in_the_null_basis(a in prop::array::uniform4(-3.0f64..3.0)) {
        let p = ParaComplex::from_null(a[0], a[1]);
        let q = ParaComplex::from_null(a[2], a[3]);
        let (r1, r2) = (p * q).null_components();
        assert_abs_diff_eq!(r1, a[0] * a[2], epsilon = 1e-12);
        assert_abs_diff_eq!(r2, a[1] * a[3], epsilon = 1e-12);
    }

    #[test]
    fn rearrangement_is_monotone(rho in positive_density(Grid::unit(1, 64).unwrap()), rho_bar in positive_density(Grid::unit(1, 64).unwrap())) {
        let m = rearrangement_1d(&rho, &rho_bar).unwrap();
        let g = m.grid;
        let d = m.displacement.values();
        for i in 0..g.len() {
            let j = (i + 1) % g.len();
            // T(x_j) − T(x_i) along the positive direction, wrapped
            let step = kmflow_core::grid::wrap_signed(g.spacing(0) + d[j] - d[i], 1.0);
            prop_assert!(step >= 0.0, "node {i}: {step}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn theta_routes_agree_on_lagrangian_states(
        model in perturbed_2d(),
        amp in prop::array::uniform3(-0.0005f64..0.0005),
        rho_bar in positive_density(Grid::unit(2, 16).unwrap()),
    ) {
        let g = Grid::unit(2, 16).unwrap();
        let u = ScalarField::from_fn(g, |x| {
            amp[0] * (2.0 * PI * x[0]).cos() + amp[1] * (2.0 * PI * x[1]).sin() + amp[2] * (2.0 * PI * (x[0] + x[1])).cos()
        });
        let dens = Arc::new(DensityPair::new(ScalarField::constant(g, 1.0), rho_bar).unwrap());
        let s = LagrangianState::from_potential(&model, dens, u, None).unwrap();
        prop_assert!(s.route_gap() < 1e-8, "{}", s.route_gap());
        prop_assert!(s.det_dt_identity_residual() < 1e-8);
    }

    #[test]
    fn sinkhorn_marginals_match(rho in positive_density(Grid::unit(1, 24).unwrap()), rho_bar in positive_density(Grid::unit(1, 24).unwrap())) {
        let model = CostModel::torus_squared_distance(1).unwrap();
        let m = sinkhorn(&rho, &rho_bar, &model, 1e-2, 100_000, 1e-11).unwrap();
        prop_assert!(m.marginal_residual.unwrap() < 1e-11);
    }
}
