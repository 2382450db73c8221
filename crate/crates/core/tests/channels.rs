//! Cross-checks between the Fokker–Planck solver, Monte Carlo ensembles and
//! closed forms.

use gradual_core::analysis::{
    disintegration_check, profile_fp, profile_fp_with, profile_mc, tv_scale_invariance, FpProfileOptions,
    ProfileContext,
};
use gradual_core::density::{
    drift_invariant_density, fp_evolve, gaussian_tv, invariant_density, limit_invariant_density, DensityGrid,
    FpConfig, GridSpec,
};
use gradual_core::flow::{integrate_flow, l2_envelope};
use gradual_core::potential::{check_hypotheses, make_ginzburg_landau, make_harmonic, make_power_potential};
use gradual_core::sde::{make_drift, simulate, simulate_from_infinity, DriftField, DriftKind, SdeConfig};

fn limit_drift() -> DriftField {
    DriftField::limit(2.0, 4.0).unwrap()
}

#[test]
fn ou_transition_matches_gaussian() {
    let eps = 0.5;
    let drift = make_drift(&make_harmonic(1.0).unwrap(), DriftKind::Original, Some(eps)).unwrap();
    let grid = GridSpec::symmetric(6.0, 4001).unwrap();
    let x0 = 1.0;
    // Start from an exact Gaussian so the comparison isolates the solver.
    let s0 = 0.1;
    let rho0 = DensityGrid::gaussian(grid, x0, s0).unwrap();
    let cfg = FpConfig::new(drift, grid, 1e-3, 2.0);
    let mut ev = fp_evolve(&cfg, &rho0).unwrap();
    for t in [0.5, 1.0, 2.0] {
        ev.advance_to(t).unwrap();
        let m = x0 * (-t).exp();
        let var = s0 * s0 * (-2.0 * t).exp() + 0.5 * eps * (1.0 - (-2.0 * t).exp());
        let exact = DensityGrid::gaussian(grid, m, var.sqrt()).unwrap();
        let tv = gradual_core::density::tv_density(&ev.snapshot().unwrap(), &exact).unwrap();
        assert!(tv < 1e-3, "t = {t}: tv = {tv}");
        assert!(ev.mass_drift() < 1e-8);
    }
}

#[test]
fn invariant_density_is_a_fixed_point() {
    let p = make_ginzburg_landau();
    let drift = make_drift(&p, DriftKind::Original, Some(0.5)).unwrap();
    let grid = GridSpec::symmetric(5.0, 2001).unwrap();
    let mu = invariant_density(&p, 0.5, grid).unwrap();
    let cfg = FpConfig::new(drift, grid, 1e-2, 5.0);
    let mut ev = fp_evolve(&cfg, &mu).unwrap();
    for t in [1.0, 2.5, 5.0] {
        ev.advance_to(t).unwrap();
        assert!(ev.tv_to(&mu).unwrap() < 1e-6);
    }
}

#[test]
fn fp_profiles_are_monotone_and_bounded() {
    let grid = GridSpec::symmetric(6.0, 2001).unwrap();
    let nu = limit_invariant_density(2.0, 4.0, grid).unwrap();
    let times: Vec<f64> = (1..=40).map(|i| 0.05 * i as f64).collect();
    for x0 in [0.0, 2.0, f64::INFINITY, f64::NEG_INFINITY] {
        let prof = profile_fp(&limit_drift(), x0, &nu, &times).unwrap();
        assert!(prof.values.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(prof.is_non_increasing(1e-8), "x0 = {x0}");
    }
}

#[test]
fn limit_profile_strictly_decreases() {
    let grid = GridSpec::symmetric(6.0, 4001).unwrap();
    let nu = limit_invariant_density(2.0, 4.0, grid).unwrap();
    let times = [0.25, 0.5, 0.75, 1.0];
    let g = profile_fp(&limit_drift(), f64::INFINITY, &nu, &times).unwrap();
    for (i, t) in [0.25, 0.5].iter().enumerate() {
        for s in [0.25, 0.5] {
            let j = times.iter().position(|&u| (u - t - s).abs() < 1e-12).unwrap();
            assert!(g.values[j] < g.values[i], "G({}) >= G({t})", t + s);
        }
    }
}

#[test]
fn entrance_bootstrap_time_is_immaterial() {
    let grid = GridSpec::symmetric(9.0, 4001).unwrap();
    let nu = limit_invariant_density(2.0, 4.0, grid).unwrap();
    let times = [0.25, 0.5, 1.0];
    let run = |t0| {
        let opts = FpProfileOptions { dt: 1e-3, t0 };
        profile_fp_with(&limit_drift(), f64::INFINITY, &nu, &times, opts, ProfileContext::limit(f64::INFINITY, "x"))
            .unwrap()
    };
    let (a, b) = (run(0.01), run(0.005));
    for (u, v) in a.values.iter().zip(&b.values) {
        assert!((u - v).abs() < 2e-3, "{u} vs {v}");
    }
}

#[test]
fn disintegration_inequality_holds() {
    let grid = GridSpec::symmetric(5.0, 1601).unwrap();
    let opts = FpProfileOptions { dt: 2e-3, t0: 0.01 };
    let r = disintegration_check(&limit_drift(), 1.5, 0.1, 0.3, grid, 51, opts).unwrap();
    assert!(r.lhs <= r.rhs + 1e-3, "{r:?}");
    assert!(r.lhs > 0.01);
}

#[test]
fn total_variation_is_scale_invariant() {
    let p = make_power_potential(2.0).unwrap();
    let grid = GridSpec::symmetric(6.0, 3001).unwrap();
    let opts = FpProfileOptions { dt: 1e-3, t0: 0.01 };
    for (eps, x, t) in [(0.1, 1.0, 0.5), (0.01, 0.5, 0.25)] {
        let (orig, resc) = tv_scale_invariance(&p, eps, x, t, grid, opts).unwrap();
        assert!((orig - resc).abs() < 1e-3, "eps = {eps}: {orig} vs {resc}");
    }
}

#[test]
fn monte_carlo_agrees_with_fokker_planck() {
    let grid = GridSpec::symmetric(4.0, 2001).unwrap();
    let nu = drift_invariant_density(&limit_drift(), 1.0, grid).unwrap();
    let fp = profile_fp(&limit_drift(), 0.0, &nu, &[1.0]).unwrap();
    let cfg = SdeConfig::new(limit_drift(), 1.0, 1e-3, 100_000, 11, 0.0).with_record_every(100);
    let ens = simulate(&cfg).unwrap();
    let draws = nu.sample(100_000, 12);
    let mc = profile_mc(&ens, &draws, &[1.0]).unwrap();
    let diff = (mc.values[0] - fp.values[0]).abs();
    assert!(diff < 0.03, "mc {} fp {}", mc.values[0], fp.values[0]);
}

#[test]
fn power_potential_satisfies_local_behaviour_exactly() {
    let p = make_power_potential(2.0).unwrap();
    let rep = check_hypotheses(&p, &[1e-1, 1e-2, 1e-3, 1e-4], 1.0, 50.0, 1e-3).unwrap();
    assert!(rep.h1_ok && rep.h2_ok && rep.h3_ok);
    assert!(rep.h2_sup_errors.iter().all(|&(_, e)| e < 1e-14), "{:?}", rep.h2_sup_errors);
}

#[test]
fn ginzburg_landau_invariants_converge() {
    let p = make_ginzburg_landau();
    let grid = GridSpec::symmetric(6.0, 4001).unwrap();
    let nu = limit_invariant_density(p.alpha(), p.c0_local(), grid).unwrap();
    let tvs: Vec<f64> = [1e-1, 1e-2, 1e-3]
        .iter()
        .map(|&e| {
            let r = gradual_core::density::rescaled_invariant_density(&p, e, grid).unwrap();
            gradual_core::density::tv_density(&r, &nu).unwrap()
        })
        .collect();
    assert!(tvs.windows(2).all(|w| w[1] < w[0]), "{tvs:?}");
}

#[test]
fn uniform_entrance_in_a_compact() {
    let (delta, a) = (0.05, 0.1);
    let b = 2.0 * l2_envelope(2.0, 4.0, delta).unwrap().sqrt();
    let p = make_power_potential(2.0).unwrap();
    let n = 20_000;
    let drifts = [
        limit_drift(),
        make_drift(&p, DriftKind::RescaledEps, Some(1e-2)).unwrap(),
        make_drift(&p, DriftKind::RescaledEps, Some(1e-1)).unwrap(),
    ];
    for drift in drifts {
        let cfg = SdeConfig::new(drift, 0.2, 1e-3, n, 5, f64::INFINITY);
        let ens = simulate_from_infinity(&cfg, 1e-3).unwrap();
        let outside = ens.marginal(delta).unwrap().iter().filter(|y| !(a..=b).contains(*y)).count();
        let freq = outside as f64 / n as f64;
        let se = (0.1 * 0.9 / n as f64).sqrt();
        assert!(freq <= 0.1 + 3.0 * se, "frequency {freq}");
    }
}

#[test]
fn zero_noise_recovers_the_flow() {
    let p = make_power_potential(2.0).unwrap();
    let drift = make_drift(&p, DriftKind::Original, Some(1.0)).unwrap();
    let cfg = SdeConfig::new(drift, 1.0, 1e-4, 3, 1, 1.5).with_noise_scale(0.0);
    let ens = simulate(&cfg).unwrap();
    let flow = integrate_flow(&p, 1.5, 1.0, 1e-4).unwrap();
    let y = *ens.path(0).last().unwrap();
    assert!((y - flow.final_state()).abs() < 1e-3, "{y} vs {}", flow.final_state());
}

#[test]
fn paths_do_not_depend_on_ensemble_size() {
    let cfg = SdeConfig::new(limit_drift(), 0.5, 1e-3, 64, 99, 0.3);
    let small = simulate(&cfg).unwrap();
    let large = simulate(&SdeConfig { n_paths: 256, ..cfg.clone() }).unwrap();
    let again = simulate(&cfg).unwrap();
    for i in 0..64 {
        assert_eq!(small.path(i), large.path(i));
        assert_eq!(small.path(i), again.path(i));
    }
}

#[test]
fn gaussian_tv_oracle() {
    let expected = 2.0 * gradual_core::numerics::normal_cdf(0.5) - 1.0;
    assert!((gaussian_tv(0.0, 1.0, 1.0, 1.0) - expected).abs() < 1e-14);
    assert!((expected - 0.382_924_922_548_026).abs() < 1e-12);
}
