//! Property tests for module invariants.

use hbargeo::cell_pde::{solve_cell, sweep_hbar_grid, SolverParams};
use hbargeo::geometry::{build_f0, homology_fan};
use hbargeo::metric::{
    build_metric_grid, geodesic_distance, primitive_classes, support_value, SupportEntry, SupportTable,
};
use hbargeo::orbits::{
    integrate_characteristic, limiting_direction, lyapunov_perron_orbit, IntegrateOptions, LPProblem,
    QuadraticModel,
};
use hbargeo::potential::{check_assumption_m, CriticalData, FourierTerm};
use hbargeo::{Point, PotentialSpec};
use proptest::prelude::*;

fn fourier_spec() -> impl Strategy<Value = PotentialSpec> {
    prop::collection::vec((-1.5f64..1.5, -2i64..=2, -2i64..=2, 0.0f64..6.3), 1..5).prop_map(|ts| {
        PotentialSpec::new(
            ts.into_iter()
                .filter(|t| t.1 != 0 || t.2 != 0)
                .map(|(amp, k1, k2, phase)| FourierTerm { amp, k: [k1, k2], phase })
                .collect(),
            0.3,
        )
    })
}

fn template(k: usize, param: f64) -> PotentialSpec {
    match k {
        0 => PotentialSpec::separable(1.0, 0.5 + param),
        1 => PotentialSpec::perturbed_separable(0.4 * param - 0.2),
        _ => PotentialSpec::annulus_barrier(param),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn potential_is_periodic(spec in fourier_spec(), x in -3.0f64..3.0, y in -3.0f64..3.0, m in -4i64..=4, n in -4i64..=4) {
        let p = Point::new(x, y);
        let q = Point::new(x + m as f64, y + n as f64);
        prop_assert!((spec.value(&p) - spec.value(&q)).abs() <= 1e-11);
    }

    #[test]
    fn derivatives_match_finite_differences(spec in fourier_spec(), x in -1.0f64..1.0, y in -1.0f64..1.0) {
        // Fourth-order central differences.
        let h = 1e-3;
        let p = Point::new(x, y);
        let (g, hess) = spec.derivatives(&p);
        for i in 0..2 {
            let mut e = Point::zeros();
            e[i] = h;
            let d4 = |f: &dyn Fn(&Point) -> f64| {
                (8.0 * (f(&(p + e)) - f(&(p - e))) - (f(&(p + 2.0 * e)) - f(&(p - 2.0 * e)))) / (12.0 * h)
            };
            let fd = d4(&|q| spec.value(q));
            prop_assert!((fd - g[i]).abs() <= 1e-6, "gradient {} vs {}", fd, g[i]);
            for j in 0..2 {
                let fd = d4(&|q| spec.gradient(q)[j]);
                prop_assert!((fd - hess[(j, i)]).abs() <= 1e-6, "hessian {} vs {}", fd, hess[(j, i)]);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn accepted_templates_vanish_only_on_lattice(k in 0usize..3, param in 0.1f64..0.9) {
        let (spec, norm) = template(k, param).normalized();
        let rep = check_assumption_m(&spec, 64).unwrap();
        if rep.passed() {
            let m = norm.maximizer;
            for i in 0..64 {
                for j in 0..64 {
                    let x = Point::new(m[0] + i as f64 / 64.0, m[1] + j as f64 / 64.0);
                    if i != 0 || j != 0 {
                        prop_assert!(spec.value(&x) < 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn lattice_distance_triangle_inequality(pts in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 3)) {
        let spec = PotentialSpec::perturbed_separable(0.2);
        let g = build_metric_grid(&spec, 0.1, 64, 1).unwrap();
        let p: Vec<Point> = pts.iter().map(|&(x, y)| Point::new(x, y)).collect();
        let d = |a: &Point, b: &Point| geodesic_distance(&g, a, b).unwrap();
        prop_assert!(d(&p[0], &p[2]) <= d(&p[0], &p[1]) + d(&p[1], &p[2]) + 1e-12);
    }

    #[test]
    fn distance_is_monotone_in_level(c in 0.0f64..0.5, dc in 0.0f64..0.5, x in -1.0f64..1.0, y in -1.0f64..1.0) {
        let spec = PotentialSpec::separable(1.0, 1.0);
        let (a, b) = (Point::new(0.1, -0.2), Point::new(x, y));
        let lo = geodesic_distance(&build_metric_grid(&spec, c, 64, 1).unwrap(), &a, &b).unwrap();
        let hi = geodesic_distance(&build_metric_grid(&spec, c + dc, 64, 1).unwrap(), &a, &b).unwrap();
        prop_assert!(lo <= hi + 1e-12);
    }

    #[test]
    fn energy_drift_is_small(x in -0.5f64..0.5, y in -0.5f64..0.5, v1 in -1.0f64..1.0, v2 in -1.0f64..1.0) {
        let spec = PotentialSpec::perturbed_separable(0.3);
        let o = integrate_characteristic(&spec, [x, y], [v1, v2], 10.0, 1e-3, IntegrateOptions::default()).unwrap();
        prop_assert!(o.max_energy_drift() <= 1e-9);
    }

    #[test]
    fn lp_iterates_stay_in_envelope(theta_frac in -0.25f64..0.25, b in 1.2f64..3.0) {
        let mut prob = LPProblem::quadratic_example(1.0, b, 3.0, 0.0);
        prob.theta = theta_frac * prob.r0();
        let (_, rep) = lyapunov_perron_orbit(&prob).unwrap();
        prop_assert!(rep.envelope <= 3.0, "{}", rep.envelope);
    }

    #[test]
    fn decaying_tails_approach_eigendirections(a in 0.5f64..1.5, ratio in 2.0f64..3.5, phi in -1.2f64..1.2, flip: bool) {
        // Start on the stable subspace of the pure quadratic model with the
        // component ratio bounded by tan 1.2, so that the horizon 6/(b - a) resolves
        // the direction while keeping (a + b)T small enough that round-off in the
        // unstable modes stays far below the decaying solution.
        let b = a * ratio;
        let phi = if flip { phi + std::f64::consts::PI } else { phi };
        let model = QuadraticModel { a, b };
        let crit = CriticalData::from_curvatures([0.0, 0.0], a, b, [1.0, 0.0], [0.0, 1.0]);
        let x0 = [0.1 * phi.cos(), 0.1 * phi.sin()];
        let v0 = [-a * x0[0], -b * x0[1]];
        let o = integrate_characteristic(&model, x0, v0, 6.0 / (b - a), 1e-3, IntegrateOptions { project: false, bound: 10.0 }).unwrap();
        let dir = limiting_direction(&o, &crit).unwrap();
        prop_assert!(dir.residual <= 1e-2, "{}", dir.residual);
    }
}

fn random_table() -> impl Strategy<Value = SupportTable> {
    let classes = primitive_classes(2);
    let half: Vec<[i64; 2]> = classes.iter().copied().filter(|w| (w[0], w[1]) > (0, 0)).collect();
    let k = half.len();
    prop::collection::vec(0.8f64..1.6, k).prop_map(move |scales| {
        let mut entries = Vec::new();
        for (w, s) in half.iter().zip(scales) {
            let sigma = s * ((w[0] * w[0] + w[1] * w[1]) as f64).sqrt();
            for v in [*w, [-w[0], -w[1]]] {
                entries.push(SupportEntry { w: v, sigma, sigma_homoclinic: None });
            }
        }
        SupportTable { resolution: 0, window: 2, entries }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn f0_respects_every_constraint(table in random_table()) {
        let poly = build_f0(&table).unwrap();
        for e in &table.entries {
            let support = poly.support(e.w);
            prop_assert!(support <= e.sigma + 1e-9, "{:?}: {} > {}", e.w, support, e.sigma);
        }
        for e in &poly.edges {
            let sigma = table.sigma(e.w).unwrap();
            prop_assert!((poly.support(e.w) - sigma).abs() <= 1e-9);
        }
    }

    #[test]
    fn fans_have_at_most_three_classes(table in random_table(), t in 0.0f64..1.0) {
        let poly = build_f0(&table).unwrap();
        let k = ((t * poly.len() as f64) as usize).min(poly.len() - 1);
        for p in [poly.vertices[k], {
            let (a, b) = poly.edge_endpoints(k);
            [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
        }] {
            let fan = homology_fan(p, &table, &poly, 1e-9);
            prop_assert!(fan.classes.len() <= 3, "{:?}", fan.classes);
        }
    }
}

#[test]
fn support_value_is_subadditive_along_multiples() {
    let spec = PotentialSpec::perturbed_separable(0.3);
    for w in [[1i64, 0], [1, 1]] {
        let s1 = support_value(&spec, w, 64, 4).unwrap();
        for k in [2i64, 3] {
            let sk = support_value(&spec, [k * w[0], k * w[1]], 64, 4).unwrap();
            assert!(sk <= k as f64 * s1 + 1e-12, "{w:?} x{k}: {sk} > {}", k as f64 * s1);
        }
    }
}

#[test]
fn mirrored_sweep_is_exactly_even_and_independent_solves_agree() {
    let spec = PotentialSpec::perturbed_separable(0.3);
    let params = SolverParams::new(32, 1e-3);
    let g = sweep_hbar_grid(&spec, 1.0, 0.5, &params).unwrap();
    let n = g.len();
    for k in 0..n {
        assert_eq!(g.hbar_values[k].to_bits(), g.hbar_values[n - 1 - k].to_bits());
        assert!(g.hbar_values[k] >= 0.0);
    }
    let p = [0.7, 1.9];
    let a = solve_cell(&spec, p, &params).unwrap().hbar;
    let b = solve_cell(&spec, [-p[0], -p[1]], &params).unwrap().hbar;
    assert!((a - b).abs() <= 2.0 * params.tol, "{a} vs {b}");
}
