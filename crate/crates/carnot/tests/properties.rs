//! Randomized laws that must hold for every group table, expression, and
//! grid the library accepts.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use carnot::expr;
use carnot::grid::GridFunction;
use carnot::group::{sample_in_ball, GroupSpec};
use carnot::op::{estimate_moduli, OperatorSpec};
use carnot::semiconvex::{inf_convolution, sup_convolution};

fn builtin_groups() -> impl Strategy<Value = GroupSpec> {
    prop_oneof![
        Just(GroupSpec::heisenberg()),
        Just(GroupSpec::heisenberg_n(2)),
        Just(GroupSpec::engel()),
        Just(GroupSpec::abelian(3)),
        Just(GroupSpec::free_step2()),
    ]
}

/// A builtin group together with `k` coordinate vectors of matching length.
fn group_with_points(k: usize) -> impl Strategy<Value = (GroupSpec, Vec<Vec<f64>>)> {
    builtin_groups().prop_flat_map(move |g| {
        let dim = g.dim;
        let points = proptest::collection::vec(
            proptest::collection::vec(-1.5f64..1.5, dim),
            k,
        );
        (Just(g), points)
    })
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Grammar-driven expression text; every string is valid by construction.
fn expr_text() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![
        (0u32..1000).prop_map(|n| n.to_string()),
        (0.001f64..100.0).prop_map(|v| format!("{v:.3}")),
        prop_oneof![
            Just("x"),
            Just("y"),
            Just("t"),
            Just("x1"),
            Just("x2"),
            Just("x4")
        ]
        .prop_map(String::from),
    ];
    leaf.prop_recursive(4, 24, 3, |inner| {
        prop_oneof![
            (
                inner.clone(),
                inner.clone(),
                prop_oneof![Just("+"), Just("-"), Just("*"), Just("/")]
            )
                .prop_map(|(a, b, op)| format!("({a}) {op} ({b})")),
            (inner.clone(), 1u32..4).prop_map(|(a, k)| format!("({a})^{k}")),
            inner.clone().prop_map(|a| format!("-({a})")),
            (
                prop_oneof![Just("sin"), Just("cos"), Just("exp"), Just("abs"), Just("sqrt")],
                inner.clone()
            )
                .prop_map(|(f, a)| format!("{f}({a})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("min({a}, {b})")),
        ]
    })
}

/// Grids with 1 to 3 axes, varied boxes, and values spanning many orders of
/// magnitude (denormals included; the codecs must keep every finite bit).
fn small_grids() -> impl Strategy<Value = GridFunction> {
    (1usize..=3)
        .prop_flat_map(|nd| {
            (
                proptest::collection::vec(3usize..=5, nd),
                proptest::collection::vec((-10.0f64..10.0, 0.1f64..5.0), nd),
            )
        })
        .prop_flat_map(|(shape, corners)| {
            let lo: Vec<f64> = corners.iter().map(|(l, _)| *l).collect();
            let hi: Vec<f64> = corners.iter().map(|(l, w)| l + w).collect();
            let n: usize = shape.iter().product();
            let value = prop_oneof![
                -1e6f64..1e6,
                (-1.0f64..1.0).prop_map(|v| v * 1e300),
                (-1.0f64..1.0).prop_map(|v| v * 1e-300),
                Just(0.0f64),
            ];
            proptest::collection::vec(value, n).prop_map(move |vals| {
                GridFunction::from_values(&lo, &hi, &shape, vals).unwrap()
            })
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn product_is_associative((g, pts) in group_with_points(3)) {
        let (x, y, z) = (&pts[0], &pts[1], &pts[2]);
        let left = g.multiply(&g.multiply(x, y).unwrap(), z).unwrap();
        let right = g.multiply(x, &g.multiply(y, z).unwrap()).unwrap();
        prop_assert!(max_abs_diff(&left, &right) <= 1e-9);
    }

    #[test]
    fn dilations_are_automorphisms((g, pts) in group_with_points(2), lambda in 0.1f64..2.0) {
        let (x, y) = (&pts[0], &pts[1]);
        let of_product = g.dilate(lambda, &g.multiply(x, y).unwrap()).unwrap();
        let of_factors = g
            .multiply(&g.dilate(lambda, x).unwrap(), &g.dilate(lambda, y).unwrap())
            .unwrap();
        prop_assert!(max_abs_diff(&of_product, &of_factors) <= 1e-8);
    }

    #[test]
    fn norm_is_homogeneous((g, pts) in group_with_points(1), lambda in 0.1f64..3.0) {
        let scaled = g.hom_norm(&g.dilate(lambda, &pts[0]).unwrap());
        let expected = lambda * g.hom_norm(&pts[0]);
        prop_assert!((scaled - expected).abs() <= 1e-10 * (1.0 + expected));
    }

    #[test]
    fn inverse_cancels((g, pts) in group_with_points(1)) {
        let x = &pts[0];
        let e = g.multiply(x, &g.inverse(x)).unwrap();
        prop_assert!(e.iter().all(|v| v.abs() <= 1e-12));
    }

    #[test]
    fn metric_is_symmetric((g, pts) in group_with_points(2)) {
        let d_xy = g.metric(&pts[0], &pts[1]).unwrap();
        let d_yx = g.metric(&pts[1], &pts[0]).unwrap();
        prop_assert!(d_xy >= 0.0);
        prop_assert!((d_xy - d_yx).abs() <= 1e-12 * (1.0 + d_xy));
    }

    #[test]
    fn multiply_buf_matches_multiply((g, pts) in group_with_points(2)) {
        let expected = g.multiply(&pts[0], &pts[1]).unwrap();
        let mut out = vec![0.0; g.dim];
        g.multiply_buf(&pts[0], &pts[1], &mut out);
        prop_assert_eq!(out, expected);
    }

    #[test]
    fn ball_sampler_respects_radius(
        g in builtin_groups(),
        nu in 0.01f64..1.0,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..8 {
            let p = sample_in_ball(&g, nu, &mut rng);
            prop_assert!(g.hom_norm(&p) <= nu * (1.0 + 1e-9));
        }
    }

    #[test]
    fn printed_expressions_reparse_to_the_same_tree(text in expr_text()) {
        let parsed = expr::parse(&text).unwrap();
        let printed = parsed.to_string();
        let reparsed = expr::parse(&printed).unwrap();
        prop_assert_eq!(parsed.root(), reparsed.root(), "canonical text: {}", printed);
        prop_assert_eq!(printed, reparsed.to_string());
    }

    #[test]
    fn grid_binary_codec_round_trips(g in small_grids()) {
        let back = GridFunction::decode(&g.encode_binary()).unwrap();
        prop_assert_eq!(&back, &g);
    }

    #[test]
    fn grid_text_codec_round_trips(g in small_grids()) {
        let back = GridFunction::decode(g.encode_text().as_bytes()).unwrap();
        prop_assert_eq!(&back, &g);
    }

    #[test]
    fn interpolation_reproduces_multilinear_data(
        a in -2.0f64..2.0,
        b in -2.0f64..2.0,
        c in -2.0f64..2.0,
        d in -2.0f64..2.0,
        tx in 0.0f64..1.0,
        ty in 0.0f64..1.0,
    ) {
        let f = |x: f64, y: f64| a + b * x + c * y + d * x * y;
        let mut grid = GridFunction::zeros(&[-1.0, -1.0], &[1.0, 1.0], &[4, 5]).unwrap();
        let mut idx = [0usize; 2];
        let mut coord = [0.0f64; 2];
        for lin in 0..grid.len() {
            grid.unravel(lin, &mut idx);
            grid.node_coord(&idx, &mut coord);
            grid.values[lin] = f(coord[0], coord[1]);
        }
        let p = [-1.0 + 2.0 * tx, -1.0 + 2.0 * ty];
        let got = grid.interpolate(&p).unwrap();
        let want = f(p[0], p[1]);
        prop_assert!((got - want).abs() <= 1e-12 * (1.0 + want.abs()));
    }

    #[test]
    fn convolution_duality_holds_on_random_data(
        values in proptest::collection::vec(-5.0f64..5.0, 9),
        eps in 0.05f64..1.0,
    ) {
        let g = GroupSpec::abelian(1);
        let w = GridFunction::from_values(&[-1.0], &[1.0], &[9], values.clone()).unwrap();
        let negated: Vec<f64> = values.iter().map(|v| -v).collect();
        let neg_w = GridFunction::from_values(&[-1.0], &[1.0], &[9], negated).unwrap();
        let inf = inf_convolution(&g, &w, eps).unwrap();
        let sup = sup_convolution(&g, &neg_w, eps).unwrap();
        for (lo_val, hi_val) in inf.values.iter().zip(&sup.values) {
            prop_assert_eq!(*lo_val, -*hi_val);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn moduli_estimates_are_monotone_in_radius(seed in any::<u64>()) {
        let ops = [
            OperatorSpec::infinity(),
            OperatorSpec::sub_laplacian(),
            OperatorSpec::normalized_p(4.0).unwrap(),
            OperatorSpec::mean_curvature(),
        ];
        for op in &ops {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = estimate_moduli(op, 2, 0.5, 2.0, &[0.05, 0.1, 0.2, 0.4], 100, &mut rng)
                .unwrap();
            prop_assert!(m.omega_a.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(m.omega_h.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(m.omega_a.iter().chain(&m.omega_h).all(|v| v.is_finite()));
        }
    }
}
