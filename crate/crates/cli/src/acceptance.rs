//! Acceptance criteria. Each check computes its quantities from scratch,
//! compares them with a pinned threshold and returns the table it used.
//!
//! Thresholds and budgets are fixed here; nothing is calibrated at run time.

use std::path::Path;
use std::sync::OnceLock;
use std::time::Instant;

use gradual_core::analysis::{
    cutoff_verdict, default_t_grid, geometric_grid, gradual_convergence_check, mixing_time, ou_exact_profile,
    ou_window_scale, profile_fp, profile_mc, FamilyMember, GradualOptions, GradualReport, Verdict,
    NO_CUTOFF_MARGIN,
};
use gradual_core::density::{
    drift_invariant_density, fp_evolve, limit_invariant_density, rescaled_invariant_density, tv_density,
    tv_samples, BinRule, DensityGrid, FpConfig, GridSpec,
};
use gradual_core::flow::{descend_from_infinity, l2_envelope, ScalarField};
use gradual_core::potential::{localize, make_ginzburg_landau, make_harmonic, make_power_potential, scaling};
use gradual_core::sde::{
    make_drift, monitor_exits, order_violation_fraction, simulate, simulate_any, synchronous_couple_with,
    DriftField, DriftKind, SdeConfig, SdeScheme,
};

use crate::config::ExperimentConfig;
use crate::output::{Cell, RunDir, Table};
use crate::Result;

pub const CRITERIA: [(u8, &str); 12] = [
    (1, "descent-from-infinity"),
    (2, "fokker-planck-ou"),
    (3, "invariant-convergence"),
    (4, "gradual-convergence"),
    (5, "profile-shape"),
    (6, "no-cutoff-verdict"),
    (7, "mixing-asymptotics"),
    (8, "mc-fp-agreement"),
    (9, "coupling-order"),
    (10, "l2-envelope"),
    (11, "tv-continuity-at-infinity"),
    (12, "determinism"),
];

/// Criteria whose numbers depend on the seed.
pub const SEEDED: [u8; 4] = [8, 9, 10, 11];

#[derive(Debug, Clone)]
pub struct CriterionResult {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub measured: String,
    pub threshold: String,
    pub seconds: f64,
    pub budget_seconds: Option<f64>,
    pub table: Table,
}

impl CriterionResult {
    pub fn line(&self) -> String {
        format!(
            "[{}] {:02} {:<26} {} | required: {} | {:.2} s",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.measured,
            self.threshold,
            self.seconds
        )
    }
}

struct Check {
    passed: bool,
    measured: String,
    threshold: String,
    budget: Option<f64>,
    table: Table,
}

const ALPHA: f64 = 2.0;
const EPS_LIST: [f64; 3] = [1e-1, 1e-2, 1e-3];

fn power() -> gradual_core::Potential {
    make_power_potential(ALPHA).expect("alpha = 2 is valid")
}

fn limit_drift() -> DriftField {
    let p = power();
    DriftField::limit(p.alpha(), p.c0_local()).expect("valid limit drift")
}

/// Shared state for one acceptance run. The default-grid profile family is
/// computed once and reused by the criteria that read it.
pub struct Acceptance {
    seed: u64,
    default_family: OnceLock<std::result::Result<GradualReport, String>>,
}

impl Acceptance {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            default_family: OnceLock::new(),
        }
    }

    fn default_family(&self) -> Result<&GradualReport> {
        let r = self.default_family.get_or_init(|| {
            gradual_convergence_check(&power(), 1.0, &EPS_LIST, &default_t_grid(), GradualOptions::default())
                .map_err(|e| e.to_string())
        });
        r.as_ref()
            .map_err(|e| crate::CliError::Core(gradual_core::Error::InvalidInput(e.clone())))
    }

    pub fn run(&self, id: u8) -> Result<CriterionResult> {
        let name = CRITERIA
            .iter()
            .find(|c| c.0 == id)
            .map(|c| c.1)
            .ok_or_else(|| crate::CliError::Config(format!("no acceptance criterion {id}")))?;
        let start = Instant::now();
        let check = match id {
            1 => self.descent()?,
            2 => self.fokker_planck()?,
            3 => self.invariants()?,
            4 => self.gradual()?,
            5 => self.profile_shape()?,
            6 => self.no_cutoff()?,
            7 => self.mixing()?,
            8 => self.channels()?,
            9 => self.coupling()?,
            10 => self.envelope()?,
            11 => self.continuity()?,
            _ => {
                return Err(crate::CliError::Config(
                    "criterion 12 compares two complete runs; use run_all or determinism".into(),
                ))
            }
        };
        let seconds = start.elapsed().as_secs_f64();
        let in_budget = check.budget.is_none_or(|b| seconds <= b);
        let threshold = match check.budget {
            Some(b) => format!("{}; runtime < {b} s", check.threshold),
            None => check.threshold,
        };
        Ok(CriterionResult {
            id,
            name,
            passed: check.passed && in_budget,
            measured: check.measured,
            threshold,
            seconds,
            budget_seconds: check.budget,
            table: check.table,
        })
    }

    fn descent(&self) -> Result<Check> {
        let square = ScalarField::new("-u^2", |u: f64| -u * u.abs()).with_derivative(|u: f64| -2.0 * u.abs());
        let cube = ScalarField::new("-u^3", |u: f64| -u * u * u).with_derivative(|u: f64| -3.0 * u * u);
        let mut t = Table::new(["field", "t", "psi", "exact", "relative_error"]);
        let mut worst: f64 = 0.0;
        for (name, field, exact) in [
            ("-u^2", &square, (|t: f64| 1.0 / t) as fn(f64) -> f64),
            ("-u^3", &cube, |t: f64| (2.0 * t).powf(-0.5)),
        ] {
            for s in [0.1, 0.5, 1.0, 2.0] {
                let psi = descend_from_infinity(field, 1e-2, s)?;
                let e = exact(s);
                let rel = (psi - e).abs() / e;
                worst = worst.max(rel);
                t.push(vec![name.into(), s.into(), psi.into(), e.into(), rel.into()]);
            }
        }
        Ok(Check {
            passed: worst < 1e-6,
            measured: format!("max relative error {worst:.2e}"),
            threshold: "relative error < 1e-6".into(),
            budget: Some(1.0),
            table: t,
        })
    }

    fn fokker_planck(&self) -> Result<Check> {
        // dX = -X dt + dB: N(x e^-t, (1 - e^-2t) / 2) from x.
        let drift = make_drift(&make_harmonic(1.0)?, DriftKind::Original, Some(1.0))?;
        let grid = GridSpec::symmetric(6.0, 4001)?;
        let x0 = 1.0;
        let cfg = FpConfig::new(drift, grid, 1e-3, 2.0);
        let mut ev = fp_evolve(&cfg, &DensityGrid::point_mass(grid, x0)?)?;
        let mut t = Table::new(["t", "tv_to_exact", "mass_drift"]);
        let (mut worst_tv, mut worst_mass): (f64, f64) = (0.0, 0.0);
        for s in [0.5, 1.0, 2.0] {
            ev.advance_to(s)?;
            let mean = x0 * (-s).exp();
            let sd = (0.5 * -(-2.0 * s).exp_m1()).sqrt();
            let exact = DensityGrid::gaussian(grid, mean, sd)?;
            let tv = tv_density(&ev.snapshot()?, &exact)?;
            worst_tv = worst_tv.max(tv);
            worst_mass = worst_mass.max(ev.mass_drift());
            t.push(vec![s.into(), tv.into(), ev.mass_drift().into()]);
        }
        Ok(Check {
            passed: worst_tv < 1e-3 && worst_mass < 1e-8,
            measured: format!("max TV {worst_tv:.2e}, max mass drift {worst_mass:.2e}"),
            threshold: "TV < 1e-3; mass drift < 1e-8".into(),
            budget: Some(30.0),
            table: t,
        })
    }

    fn invariants(&self) -> Result<Check> {
        let grid = GridSpec::symmetric(6.0, 4001)?;
        let mut t = Table::new(["potential", "eps", "tv_rescaled_vs_limit"]);
        let gl = make_ginzburg_landau();
        let nu_gl = limit_invariant_density(gl.alpha(), gl.c0_local(), grid)?;
        let mut gl_tv = Vec::new();
        for e in EPS_LIST {
            let tv = tv_density(&rescaled_invariant_density(&gl, e, grid)?, &nu_gl)?;
            t.push(vec!["ginzburg-landau".into(), e.into(), tv.into()]);
            gl_tv.push(tv);
        }
        let p = power();
        let nu_p = limit_invariant_density(p.alpha(), p.c0_local(), grid)?;
        let mut power_worst: f64 = 0.0;
        for e in EPS_LIST {
            let tv = tv_density(&rescaled_invariant_density(&p, e, grid)?, &nu_p)?;
            t.push(vec!["power:2".into(), e.into(), tv.into()]);
            power_worst = power_worst.max(tv);
        }
        let decreasing = gl_tv.windows(2).all(|w| w[1] < w[0]);
        let last = gl_tv[2];
        Ok(Check {
            passed: decreasing && last < 0.05 && power_worst < 1e-10,
            measured: format!(
                "GL TV {:.3e} > {:.3e} > {:.3e}, power max TV {power_worst:.1e}",
                gl_tv[0], gl_tv[1], gl_tv[2]
            ),
            threshold: "GL strictly decreasing and < 0.05 at eps=1e-3; power < 1e-10".into(),
            budget: Some(10.0),
            table: t,
        })
    }

    fn gradual(&self) -> Result<Check> {
        let times = [0.25, 0.5, 1.0, 2.0];
        let rep = gradual_convergence_check(&power(), 1.0, &EPS_LIST, &times, GradualOptions::default())?;
        let mut t = Table::new(["eps", "t", "d", "G", "gap", "coupling_term", "invariant_term"]);
        for row in &rep.rows {
            for (k, &s) in times.iter().enumerate() {
                t.push(vec![
                    row.eps.into(),
                    s.into(),
                    row.distance[k].into(),
                    rep.limit.values[k].into(),
                    row.gap[k].into(),
                    row.coupling_term[k].into(),
                    row.invariant_term.into(),
                ]);
            }
        }
        // Strictly decreasing along eps at every t.
        let decreasing = (0..times.len()).all(|k| rep.rows.windows(2).all(|w| w[1].gap[k] < w[0].gap[k]));
        let last = rep.rows.last().expect("three rows");
        let worst_last = last.gap.iter().copied().fold(0.0, f64::max);
        Ok(Check {
            passed: decreasing && worst_last < 0.05,
            measured: format!("gap decreasing along eps: {decreasing}; max gap at eps=1e-3 {worst_last:.3e}"),
            threshold: "gap decreasing in eps; < 0.05 at eps=1e-3".into(),
            budget: Some(300.0),
            table: t,
        })
    }

    fn profile_shape(&self) -> Result<Check> {
        let g = &self.default_family()?.limit;
        let mut t = Table::new(["t", "G"]);
        for (s, v) in g.times.iter().zip(&g.values) {
            t.push(vec![(*s).into(), (*v).into()]);
        }
        let strict = g.values.windows(2).all(|w| w[1] < w[0]);
        let window: Vec<f64> = g
            .times
            .iter()
            .zip(&g.values)
            .filter(|(s, _)| (0.1..=5.0).contains(*s))
            .map(|(_, v)| *v)
            .collect();
        let lo = window.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = window.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Check {
            passed: strict && lo > 0.001 && hi < 0.999,
            measured: format!("strictly decreasing: {strict}; G on [0.1, 5] spans [{lo:.3e}, {hi:.4}]"),
            threshold: "strictly decreasing; G in (0.001, 0.999) on [0.1, 5]".into(),
            budget: Some(60.0),
            table: t,
        })
    }

    fn no_cutoff(&self) -> Result<Check> {
        let rep = self.default_family()?;
        let deltas = [0.5, 2.0];
        let family: Vec<FamilyMember> = rep
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| FamilyMember {
                eps: r.eps,
                scale: r.scaling.a_eps,
                profile: rep.profile(i, "power:2"),
            })
            .collect();
        let main = cutoff_verdict(&family, &deltas, 0.25, NO_CUTOFF_MARGIN)?;
        let ou_times = geometric_grid(1e-3, 60.0, 4000);
        let ou: Vec<FamilyMember> = EPS_LIST
            .iter()
            .map(|&e| FamilyMember {
                eps: e,
                scale: ou_window_scale(e),
                profile: ou_exact_profile(e, 1.0, &ou_times),
            })
            .collect();
        let contrast = cutoff_verdict(&ou, &deltas, 0.25, NO_CUTOFF_MARGIN)?;
        let mut t = Table::new(["family", "eps", "scale", "d_delta_0.5", "d_delta_2", "ratio"]);
        for (name, r) in [("power:2", &main), ("ou", &contrast)] {
            for row in &r.rows {
                t.push(vec![
                    name.into(),
                    row.eps.into(),
                    row.scale.into(),
                    row.values[0].into(),
                    row.values[1].into(),
                    row.ratio.into(),
                ]);
            }
        }
        let ratios: Vec<f64> = contrast.rows.iter().map(|r| r.ratio).collect();
        let toward_one = ratios.windows(2).all(|w| w[1] < w[0] && w[1] > 1.0)
            && (ratios[2] - 1.0) < (ratios[0] - 1.0);
        let (lo, hi) = main
            .rows
            .iter()
            .flat_map(|r| r.values.iter().copied())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        Ok(Check {
            passed: main.verdict == Verdict::NoCutoff && main.values_inside && toward_one,
            measured: format!(
                "power verdict {} (values in [{lo:.4}, {hi:.4}]); OU ratios {:.3} > {:.3} > {:.3} ({})",
                main.verdict, ratios[0], ratios[1], ratios[2], contrast.verdict
            ),
            threshold: "NO_CUTOFF with values in (0.05, 0.95); OU ratios decreasing toward 1".into(),
            budget: Some(300.0),
            table: t,
        })
    }

    fn mixing(&self) -> Result<Check> {
        let rep = self.default_family()?;
        let mut t = Table::new(["eps", "tau_over_a_eps", "h_eta", "relative_gap"]);
        let mut last_gap = f64::NAN;
        for (i, row) in rep.rows.iter().enumerate() {
            let m = mixing_time(&rep.profile(i, "power:2"), 0.5, Some(&rep.limit))?;
            let gap = m.relative_gap.unwrap_or(f64::NAN);
            t.push(vec![row.eps.into(), m.tau_over_a_eps.into(), m.h_eta.unwrap_or(f64::NAN).into(), gap.into()]);
            last_gap = gap;
        }
        Ok(Check {
            passed: last_gap < 0.1,
            measured: format!("relative gap at eps=1e-3 {last_gap:.3e}"),
            threshold: "|tau/a - H| / H < 0.1 at eps=1e-3".into(),
            budget: None,
            table: t,
        })
    }

    fn channels(&self) -> Result<Check> {
        let times = [0.5, 1.0, 2.0];
        let grid = GridSpec::symmetric(4.0, 4001)?;
        let nu = drift_invariant_density(&limit_drift(), 1.0, grid)?;
        let fp = profile_fp(&limit_drift(), 0.0, &nu, &times)?;
        let n = 100_000;
        let cfg = SdeConfig::new(limit_drift(), 2.0, 1e-3, n, self.seed, 0.0).with_record_times(&times);
        let ens = simulate(&cfg)?;
        let draws = nu.sample(n, self.seed);
        let mc = profile_mc(&ens, &draws, &times)?;
        let mut t = Table::new(["t", "fp", "mc", "abs_diff"]);
        let mut worst: f64 = 0.0;
        for ((&s, &f), &m) in times.iter().zip(&fp.values).zip(&mc.values) {
            let d = (m - f).abs();
            worst = worst.max(d);
            t.push(vec![s.into(), f.into(), m.into(), d.into()]);
        }
        Ok(Check {
            passed: worst < 0.03,
            measured: format!("max |mc - fp| {worst:.3e}"),
            threshold: "|mc - fp| < 0.03".into(),
            budget: Some(120.0),
            table: t,
        })
    }

    fn coupling(&self) -> Result<Check> {
        let n = 10_000;
        let mut t = Table::new(["check", "scheme_or_eps", "value", "bound"]);
        let mut ok = true;
        let starts = [0.0, 1.0, f64::INFINITY];
        let mut worst: f64 = 0.0;
        for scheme in [SdeScheme::TamedEuler, SdeScheme::DriftImplicit, SdeScheme::FlowSplitting] {
            let cfg = SdeConfig::new(limit_drift(), 1.0, 1e-3, n, self.seed, 0.0)
                .with_scheme(scheme)
                .with_record_every(10);
            let ens = synchronous_couple_with(&cfg, &starts, 1e-3)?;
            for (i, j) in [(0, 1), (1, 2), (0, 2)] {
                let v = order_violation_fraction(&ens[i], &ens[j])?;
                worst = worst.max(v);
                let pair = format!("order {}<={}", starts[i], starts[j]);
                t.push(vec![pair.into(), format!("{scheme:?}").into(), v.into(), 1e-3.into()]);
            }
        }
        ok &= worst < 1e-3;

        // Localized potential: exits from [-L, L] vs the martingale bound.
        let p = power();
        let (x, l, s) = (0.5, 1.2, 0.5);
        let mut exits = Vec::new();
        for eps in [1e-2, 1e-3] {
            let sc = scaling(eps, p.alpha())?;
            let horizon = sc.a_eps * s;
            let dt = 1e-3;
            let t_end = (horizon / dt).round() * dt;
            let local = make_drift(&localize(&p, l)?, DriftKind::Original, Some(eps))?;
            let base = make_drift(&p, DriftKind::Original, Some(eps))?;
            let cfg = SdeConfig::new(local, t_end, dt, n, self.seed, x);
            let loc = monitor_exits(&cfg, l)?;
            let orig = monitor_exits(&SdeConfig { drift: base, ..cfg.clone() }, l)?;
            let bound = 16.0 * x * x * eps * horizon + 8.0 * (eps * horizon).powi(2);
            let se = (bound.min(1.0) * (1.0 - bound.min(1.0)) / n as f64).sqrt();
            let freq = loc.fraction();
            // Synchronous paths may only separate after leaving [-L, L].
            let split_inside = (0..n)
                .filter(|&i| loc.exit_times[i].is_none() && (loc.finals[i] - orig.finals[i]).abs() > 1e-12)
                .count();
            ok &= freq <= bound + 3.0 * se && split_inside == 0;
            t.push(vec!["exit_frequency".into(), Cell::from(eps), freq.into(), (bound + 3.0 * se).into()]);
            t.push(vec!["split_before_exit".into(), Cell::from(eps), (split_inside as f64).into(), 0.0.into()]);
            exits.push(format!("eps {eps:e}: {freq:.4} <= {bound:.4}"));
        }
        Ok(Check {
            passed: ok,
            measured: format!("max violation fraction {worst:.1e}; exit {}", exits.join(", ")),
            threshold: "violations < 1e-3; exit frequency <= bound + 3 se".into(),
            budget: Some(120.0),
            table: t,
        })
    }

    fn envelope(&self) -> Result<Check> {
        let p = power();
        let times = [0.1, 0.5, 1.0];
        let mut t = Table::new(["x0", "t", "second_moment", "se", "envelope"]);
        let mut ok = true;
        let mut worst = f64::NEG_INFINITY;
        for x0 in [0.0, 10.0, 1e3, f64::INFINITY] {
            let cfg = SdeConfig::new(limit_drift(), 1.0, 1e-3, 10_000, self.seed, x0)
                .with_scheme(SdeScheme::FlowSplitting)
                .with_record_times(&times);
            let ens = simulate_any(&cfg, 1e-3)?;
            for s in times {
                let (m2, se) = ens.second_moment(s)?;
                let env = l2_envelope(p.alpha(), p.c0_local(), s)?;
                ok &= m2 <= env + 4.0 * se;
                worst = worst.max(m2 - env - 4.0 * se);
                t.push(vec![x0.into(), s.into(), m2.into(), se.into(), env.into()]);
            }
        }
        Ok(Check {
            passed: ok,
            measured: format!("max of E|Y|^2 - envelope - 4 se = {worst:.3e}"),
            threshold: "E|Y_t|^2 <= envelope + 4 se".into(),
            budget: Some(60.0),
            table: t,
        })
    }

    fn continuity(&self) -> Result<Check> {
        let n = 100_000;
        let cfg = SdeConfig::new(limit_drift(), 0.5, 1e-3, n, self.seed, 50.0)
            .with_scheme(SdeScheme::FlowSplitting)
            .with_record_times(&[0.5]);
        let ens = synchronous_couple_with(&cfg, &[50.0, 100.0], 1e-3)?;
        let tv = tv_samples(&ens[0].marginal(0.5)?, &ens[1].marginal(0.5)?, BinRule::FreedmanDiaconis)?;
        let mut t = Table::new(["x_a", "x_b", "t", "sample_tv"]);
        t.push(vec![50.0.into(), 100.0.into(), 0.5.into(), tv.into()]);
        Ok(Check {
            passed: tv < 0.01,
            measured: format!("sample TV {tv:.3e}"),
            threshold: "TV < 0.01".into(),
            budget: Some(60.0),
            table: t,
        })
    }
}

fn criterion_file(id: u8) -> String {
    format!("criterion_{id:02}.csv")
}

/// Rerun the seeded criteria into `dir` and compare their tables with the
/// ones already written to `reference`.
pub fn determinism(cfg: &ExperimentConfig, reference: &RunDir, dir: &Path) -> Result<CriterionResult> {
    let start = Instant::now();
    let rerun = RunDir::at(dir.to_path_buf(), &reference.subcommand, cfg)?;
    let ctx = Acceptance::new(cfg.seed);
    let mut t = Table::new(["criterion", "identical"]);
    let mut all = true;
    for id in SEEDED {
        let r = ctx.run(id)?;
        rerun.write_table(&criterion_file(id), &r.table)?;
        let a = std::fs::read(reference.file(&criterion_file(id)))?;
        let b = std::fs::read(rerun.file(&criterion_file(id)))?;
        all &= a == b;
        t.push(vec![id.to_string().into(), (a == b).into()]);
    }
    Ok(CriterionResult {
        id: 12,
        name: "determinism",
        passed: all,
        measured: format!("seeded tables byte-identical on rerun: {all}"),
        threshold: "byte-identical artifacts".into(),
        seconds: start.elapsed().as_secs_f64(),
        budget_seconds: None,
        table: t,
    })
}

/// Run every criterion, writing `criterion_XX.csv`, `acceptance.csv` and a
/// timing log into `out`.
pub fn run_all(cfg: &ExperimentConfig, out: &RunDir) -> Result<Vec<CriterionResult>> {
    let ctx = Acceptance::new(cfg.seed);
    let mut results = Vec::new();
    for id in 1..=11 {
        let r = ctx.run(id)?;
        out.write_table(&criterion_file(id), &r.table)?;
        results.push(r);
    }
    let scratch = out.path.join("rerun");
    let det = determinism(cfg, out, &scratch)?;
    std::fs::remove_dir_all(&scratch)?;
    out.write_table(&criterion_file(12), &det.table)?;
    results.push(det);

    let mut summary = Table::new(["criterion", "name", "status", "measured", "required"]);
    for r in &results {
        summary.push(vec![
            r.id.to_string().into(),
            r.name.into(),
            (if r.passed { "PASS" } else { "FAIL" }).into(),
            format!("\"{}\"", r.measured).into(),
            format!("\"{}\"", r.threshold).into(),
        ]);
    }
    out.write_table("acceptance.csv", &summary)?;
    let log: String = results.iter().map(|r| format!("{}\n", r.line())).collect();
    std::fs::write(out.file("timings.log"), log)?;
    Ok(results)
}
