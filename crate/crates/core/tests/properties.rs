use gradual_core::analysis::{mixing_time, Channel, ProfileContext, TvProfile};
use gradual_core::density::{tv_density, DensityGrid, GridSpec};
use gradual_core::flow::{integrate_field, FlowScheme, ScalarField};
use gradual_core::potential::{
    localize, make_ginzburg_landau, make_harmonic, make_power_potential, make_scaled_power, scaling, Potential,
};
use proptest::prelude::*;

fn potentials() -> impl Strategy<Value = Potential> {
    prop_oneof![
        (0.1f64..4.0).prop_map(|a| make_power_potential(a).unwrap()),
        (0.1f64..4.0, 0.2f64..5.0).prop_map(|(a, c)| make_scaled_power(c, a).unwrap()),
        Just(make_ginzburg_landau()),
        (0.2f64..5.0).prop_map(|k| make_harmonic(k).unwrap()),
        (0.2f64..3.0, 0.5f64..4.0).prop_map(|(a, m)| localize(&make_power_potential(a).unwrap(), m).unwrap()),
    ]
}

fn random_density(grid: GridSpec) -> impl Strategy<Value = DensityGrid> {
    prop::collection::vec((-3.0f64..3.0, 0.05f64..1.5, 0.1f64..1.0), 1..4).prop_map(move |bumps| {
        let values = grid
            .nodes()
            .iter()
            .map(|&z| {
                bumps
                    .iter()
                    .map(|&(m, s, w)| w * (-0.5 * ((z - m) / s).powi(2)).exp())
                    .sum::<f64>()
            })
            .collect();
        DensityGrid::from_values(grid, values, "mixture").unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn potential_symmetry_and_convexity(p in potentials(), z in -20.0f64..20.0) {
        prop_assert_eq!(p.value(0.0), 0.0);
        prop_assert_eq!(p.deriv1(0.0), 0.0);
        let v = p.value(z);
        prop_assert!((v - p.value(-z)).abs() <= 1e-12 * (1.0 + v.abs()));
        prop_assert!((p.deriv1(z) + p.deriv1(-z)).abs() <= 1e-12 * (1.0 + p.deriv1(z).abs()));
        prop_assert!((p.deriv2(z) - p.deriv2(-z)).abs() <= 1e-12 * (1.0 + p.deriv2(z).abs()));
        prop_assert!(p.deriv2(z) >= -1e-10);
    }

    #[test]
    fn derivatives_match_difference_quotients(p in potentials(), z in -5.0f64..5.0) {
        let h = 1e-5 * (1.0 + z.abs());
        let d1 = (p.value(z + h) - p.value(z - h)) / (2.0 * h);
        let d2 = (p.deriv1(z + h) - p.deriv1(z - h)) / (2.0 * h);
        prop_assert!((d1 - p.deriv1(z)).abs() <= 1e-5 * (1.0 + p.deriv1(z).abs()));
        prop_assert!((d2 - p.deriv2(z)).abs() <= 1e-4 * (1.0 + p.deriv2(z).abs()));
    }

    #[test]
    fn localize_keeps_inner_values(a in 0.1f64..4.0, m in 0.2f64..6.0, u in -1.0f64..1.0) {
        let base = make_power_potential(a).unwrap();
        let loc = localize(&base, m).unwrap();
        let z = u * m;
        prop_assert!((loc.value(z) - base.value(z)).abs() <= 1e-14 * base.value(z).abs());
        prop_assert!((loc.deriv1(z) - base.deriv1(z)).abs() <= 1e-14 * base.deriv1(z).abs());
    }

    #[test]
    fn scaling_residuals(log_eps in -12.0f64..0.0, alpha in 0.05f64..8.0) {
        let s = scaling(10f64.powf(log_eps), alpha).unwrap();
        let (r1, r2) = s.residuals();
        prop_assert!(r1 < 1e-12 && r2 < 1e-12, "{r1} {r2}");
    }

    #[test]
    fn tv_is_a_metric(
        (f, g, h) in (random_density(GridSpec::symmetric(8.0, 401).unwrap()),
                      random_density(GridSpec::symmetric(8.0, 401).unwrap()),
                      random_density(GridSpec::symmetric(8.0, 401).unwrap()))
    ) {
        let fg = tv_density(&f, &g).unwrap();
        let gf = tv_density(&g, &f).unwrap();
        let fh = tv_density(&f, &h).unwrap();
        let hg = tv_density(&h, &g).unwrap();
        prop_assert!((fg - gf).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&fg));
        prop_assert!(fg <= fh + hg + 1e-12);
        prop_assert!(tv_density(&f, &f).unwrap() <= 1e-12);
    }

    #[test]
    fn implicit_flow_preserves_order(
        p in 0.5f64..3.0,
        x1 in -20.0f64..20.0,
        gap in 0.0f64..10.0,
    ) {
        let field = ScalarField::new("power", move |u: f64| -u.signum() * u.abs().powf(p));
        let x2 = x1 + gap;
        let lo = integrate_field(&field, x1, 2.0, 0.01, FlowScheme::BackwardEuler).unwrap();
        let hi = integrate_field(&field, x2, 2.0, 0.01, FlowScheme::BackwardEuler).unwrap();
        for (a, b) in lo.states.iter().zip(&hi.states) {
            prop_assert!(a <= b);
        }
    }

    #[test]
    fn mixing_time_monotone_in_eta(
        raw in prop::collection::vec(0.0f64..1.0, 5..40),
        e1 in 0.01f64..0.98,
        de in 0.001f64..0.5,
    ) {
        let mut values = raw;
        values.sort_by(|a, b| b.partial_cmp(a).unwrap());
        values.push(0.0);
        let times = (0..values.len()).map(|i| 0.1 * (i + 1) as f64).collect();
        let prof = TvProfile { times, values, channel: Channel::FpExact, context: ProfileContext::limit(1.0, "test") };
        let e2 = (e1 + de).min(0.99);
        let t1 = mixing_time(&prof, e1, None).unwrap().tau;
        let t2 = mixing_time(&prof, e2, None).unwrap().tau;
        prop_assert!(t1 >= t2);
    }
}
