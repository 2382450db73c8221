//! Subcommand implementations. Each writes its tables into a [`RunDir`].

use gradual_core::analysis::{
    cutoff_verdict, gradual_convergence_check, mixing_time, ou_exact_profile, ou_window_scale, profile_fp_with,
    profile_mc, Clock, CutoffReport, FamilyMember, FpProfileOptions, GradualOptions, ProfileContext, TvProfile,
};
use gradual_core::density::{
    invariant_density, limit_invariant_density, rescaled_invariant_density, tv_density, DensityGrid, GridSpec,
};
use gradual_core::flow::{descend, l2_envelope, ScalarField};
use gradual_core::potential::{check_hypotheses_with, scaling, HypothesisProtocol, Potential, ScalingPair};
use gradual_core::sde::{make_drift, simulate_any, DriftField, DriftKind, PathEnsemble, SdeConfig};
use gradual_core::Error;

use crate::config::{ChannelName, ExperimentConfig};
use crate::output::{Cell, RunDir, Table};
use crate::{acceptance, CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Hypotheses,
    Simulate,
    Invariant,
    Profile,
    Mixing,
    Cutoff,
    Descend,
    ReproduceAll,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Hypotheses => "hypotheses",
            Command::Simulate => "simulate",
            Command::Invariant => "invariant",
            Command::Profile => "profile",
            Command::Mixing => "mixing",
            Command::Cutoff => "cutoff",
            Command::Descend => "descend",
            Command::ReproduceAll => "reproduce-all",
        }
    }
}

/// What a run printed and whether it should exit non-zero.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub summary: Vec<String>,
    pub failed_criteria: usize,
}

pub fn run(cmd: Command, cfg: &ExperimentConfig, out: &RunDir) -> Result<Outcome> {
    match cmd {
        Command::Hypotheses => hypotheses(cfg, out),
        Command::Simulate => simulate(cfg, out),
        Command::Invariant => invariant(cfg, out),
        Command::Profile => profile(cfg, out),
        Command::Mixing => mixing(cfg, out),
        Command::Cutoff => cutoff(cfg, out),
        Command::Descend => descend_table(cfg, out),
        Command::ReproduceAll => reproduce_all(cfg, out),
    }
}

fn hypotheses(cfg: &ExperimentConfig, out: &RunDir) -> Result<Outcome> {
    let p = cfg.potential()?;
    let rep = check_hypotheses_with(&p, &HypothesisProtocol::default())?;
    let mut t = Table::new(["lambda", "sup_error"]);
    for &(l, e) in &rep.h2_sup_errors {
        t.push(vec![l.into(), e.into()]);
    }
    out.write_table("h2_errors.csv", &t)?;
    out.write_json("hypotheses.json", &rep)?;
    let mut summary = vec![
        format!("potential {}", p.label()),
        format!("h1 (regular, convex, even): {}", rep.h1_ok),
        format!("h2 (local power behaviour): {}", rep.h2_ok),
        format!("h3 (growth at infinity): {} (witness {:.3e})", rep.h3_ok, rep.h3_witness),
    ];
    summary.extend(rep.notes.iter().cloned());
    Ok(Outcome { summary, ..Default::default() })
}

fn label(eps: Option<f64>) -> String {
    match eps {
        Some(e) => format!("eps={e:?}"),
        None => "limit".into(),
    }
}

/// Snap `times` onto the step grid `k dt`.
fn snap(times: &[f64], dt: f64) -> Vec<f64> {
    let mut v: Vec<f64> = times.iter().map(|t| (t / dt).round() * dt).collect();
    v.dedup();
    v
}

/// Rescaled-clock ensemble for each eps and for the limit process (last).
fn ensembles(cfg: &ExperimentConfig, p: &Potential, times: &[f64]) -> Result<Vec<(Option<f64>, PathEnsemble)>> {
    let dt = cfg.sde.dt;
    let t_end = (times.last().copied().unwrap_or(1.0).max(10.0 * dt) / dt).ceil() * dt;
    let mut runs: Vec<(Option<f64>, DriftField, f64)> = Vec::new();
    for &eps in &cfg.eps_list {
        let s = scaling(eps, p.alpha())?;
        runs.push((Some(eps), make_drift(p, DriftKind::RescaledEps, Some(eps))?, cfg.x0.0 / s.b_eps));
    }
    let x_limit = if cfg.x0.0 == 0.0 { 0.0 } else { cfg.x0.0.signum() * f64::INFINITY };
    runs.push((None, DriftField::limit(p.alpha(), p.c0_local())?, x_limit));
    let mut outs = Vec::with_capacity(runs.len());
    for (eps, drift, x0) in runs {
        let sc = SdeConfig::new(drift, t_end, dt, cfg.n_paths, cfg.seed, x0)
            .with_scheme(cfg.sde.scheme)
            .with_record_times(times);
        outs.push((eps, simulate_any(&sc, cfg.sde.t0)?));
    }
    Ok(outs)
}

fn simulate(cfg: &ExperimentConfig, out: &RunDir) -> Result<Outcome> {
    let p = cfg.potential()?;
    let times: Vec<f64> = snap(&cfg.times(), cfg.sde.dt).into_iter().filter(|&t| t > 0.0).collect();
    let mut summary = Vec::new();
    for (eps, ens) in ensembles(cfg, &p, &times)? {
        let name = label(eps);
        let mut t = Table::new(["t", "mean", "second_moment", "second_moment_se", "l2_envelope"]);
        for &tk in &times {
            let Ok(m) = ens.marginal(tk) else { continue };
            let (mean, _) = gradual_core::sde::mean_and_standard_error(&m);
            let (m2, se) = ens.second_moment(tk)?;
            let env = if eps.is_none() {
                l2_envelope(p.alpha(), p.c0_local(), tk)?
            } else {
                f64::NAN
            };
            t.push(vec![tk.into(), mean.into(), m2.into(), se.into(), env.into()]);
        }
        out.write_table(&format!("moments_{name}.csv"), &t)?;
        let shown = ens.n_paths().min(100);
        out.write_with(&format!("paths_{name}.csv"), |w| {
            use std::io::Write;
            write!(w, "t")?;
            for i in 0..shown {
                write!(w, ",path_{i}")?;
            }
            writeln!(w)?;
            for (k, tk) in ens.times.iter().enumerate() {
                write!(w, "{tk:?}")?;
                for i in 0..shown {
                    write!(w, ",{:?}", ens.path(i)[k])?;
                }
                writeln!(w)?;
            }
            Ok(())
        })?;
        summary.push(format!("{name}: {} paths, {} recorded times", ens.n_paths(), ens.n_times()));
    }
    Ok(Outcome { summary, ..Default::default() })
}

/// Build a density on a symmetric grid, widening it until the tail
/// certificate holds.
pub fn fit_grid<F>(z: f64, n: usize, build: F) -> Result<DensityGrid>
where
    F: Fn(GridSpec) -> gradual_core::Result<DensityGrid>,
{
    let mut z = z;
    for _ in 0..40 {
        match build(GridSpec::symmetric(z, n)?) {
            Ok(d) => return Ok(d),
            Err(Error::DomainTooSmall { suggested, .. }) if suggested > z => z = suggested,
            Err(e) => return Err(e.into()),
        }
    }
    Err(CliError::Core(Error::InvalidInput("could not certify the grid truncation".into())))
}

fn invariant(cfg: &ExperimentConfig, out: &RunDir) -> Result<Outcome> {
    let p = cfg.potential()?;
    let n = cfg.fp.n;
    let z = cfg.fp.z_extent;
    let nu = fit_grid(z, n, |g| limit_invariant_density(p.alpha(), p.c0_local(), g))?;
    let mut t = Table::new(["eps", "a_eps", "b_eps", "C_eps", "tail_bound", "tv_rescaled_vs_limit"]);
    let mut summary = Vec::new();
    for &eps in &cfg.eps_list {
        let s = scaling(eps, p.alpha())?;
        let mu = fit_grid(z * s.b_eps, n, |g| invariant_density(&p, eps, g))?;
        let resc = rescaled_invariant_density(&p, eps, nu.grid)?;
        let tv = tv_density(&resc, &nu)?;
        out.write_with(&format!("invariant_{}.csv", label(Some(eps))), |w| mu.write_csv(w))?;
        t.push(vec![
            eps.into(),
            s.a_eps.into(),
            s.b_eps.into(),
            mu.normalizer.unwrap_or(f64::NAN).into(),
            mu.certificate.map_or(f64::NAN, |c| c.tail_bound).into(),
            tv.into(),
        ]);
        summary.push(format!("eps {eps:e}: C_eps = {:.12}  TV(rescaled, limit) = {tv:.3e}", mu.normalizer.unwrap_or(f64::NAN)));
    }
    out.write_with("invariant_limit.csv", |w| nu.write_csv(w))?;
    out.write_table("invariant_summary.csv", &t)?;
    Ok(Outcome { summary, ..Default::default() })
}

/// Profiles in the rescaled clock: one per eps, plus the limit profile.
#[derive(Debug, Clone)]
pub struct ProfileFamily {
    pub channel: ChannelName,
    pub limit: TvProfile,
    pub members: Vec<TvProfile>,
    pub scalings: Vec<ScalingPair>,
}

impl ProfileFamily {
    fn table(&self, eps_list: &[f64]) -> Table {
        let mut cols = vec!["t".to_string(), "G".to_string()];
        cols.extend(eps_list.iter().map(|e| format!("d_eps={e:?}")));
        let mc = self.channel == ChannelName::Mc;
        if mc {
            cols.push("G_regularized".into());
            cols.extend(eps_list.iter().map(|e| format!("d_eps={e:?}_regularized")));
        }
        let mut t = Table::new(cols);
        let g_reg = self.limit.regularized();
        let regs: Vec<Vec<f64>> = self.members.iter().map(|m| m.regularized()).collect();
        for (k, &tk) in self.limit.times.iter().enumerate() {
            let mut row: Vec<Cell> = vec![tk.into(), self.limit.values[k].into()];
            row.extend(self.members.iter().map(|m| Cell::from(m.values[k])));
            if mc {
                row.push(g_reg[k].into());
                row.extend(regs.iter().map(|r| Cell::from(r[k])));
            }
            t.push(row);
        }
        t
    }
}

fn fp_options(cfg: &ExperimentConfig) -> FpProfileOptions {
    FpProfileOptions {
        dt: cfg.fp.dt,
        t0: cfg.fp.t0,
    }
}

pub fn fp_family(cfg: &ExperimentConfig) -> Result<ProfileFamily> {
    let p = cfg.potential()?;
    let times = cfg.times();
    let x = cfg.x0.0;
    if x.is_finite() {
        let opts = GradualOptions {
            fp: fp_options(cfg),
            n: cfg.fp.n,
            z_extent: cfg.fp.z_extent,
        };
        let rep = gradual_convergence_check(&p, x, &cfg.eps_list, &times, opts)?;
        let members = (0..rep.rows.len()).map(|i| rep.profile(i, p.label())).collect();
        return Ok(ProfileFamily {
            channel: ChannelName::Fp,
            limit: rep.limit.clone(),
            members,
            scalings: rep.rows.iter().map(|r| r.scaling).collect(),
        });
    }
    // Entrance from infinity for every member.
    let limit_drift = DriftField::limit(p.alpha(), p.c0_local())?;
    let z = cfg.fp.z_extent.max(descend(limit_drift.as_scalar_field(), cfg.fp.t0)? + 1.5);
    let grid = GridSpec::symmetric(z, cfg.fp.n)?;
    let nu = limit_invariant_density(p.alpha(), p.c0_local(), grid)?;
    let limit = profile_fp_with(&limit_drift, x, &nu, &times, fp_options(cfg), ProfileContext::limit(x, p.label()))?;
    let mut members = Vec::new();
    let mut scalings = Vec::new();
    for &eps in &cfg.eps_list {
        let s = scaling(eps, p.alpha())?;
        let drift = make_drift(&p, DriftKind::RescaledEps, Some(eps))?;
        let nu_eps = rescaled_invariant_density(&p, eps, grid)?;
        let ctx = ProfileContext {
            eps: Some(eps),
            x0: x,
            potential: p.label().to_string(),
            scaling: Some(s),
            clock: Clock::Rescaled,
        };
        members.push(profile_fp_with(&drift, x, &nu_eps, &times, fp_options(cfg), ctx)?);
        scalings.push(s);
    }
    Ok(ProfileFamily {
        channel: ChannelName::Fp,
        limit,
        members,
        scalings,
    })
}

pub fn mc_family(cfg: &ExperimentConfig) -> Result<ProfileFamily> {
    let p = cfg.potential()?;
    let times: Vec<f64> = snap(&cfg.times(), cfg.sde.dt).into_iter().filter(|&t| t > 0.0).collect();
    let z = cfg.fp.z_extent;
    let nu = fit_grid(z, cfg.fp.n, |g| limit_invariant_density(p.alpha(), p.c0_local(), g))?;
    let mut limit = None;
    let mut members = Vec::new();
    let mut scalings = Vec::new();
    for (eps, ens) in ensembles(cfg, &p, &times)? {
        let target = match eps {
            Some(e) => fit_grid(z, cfg.fp.n, |g| rescaled_invariant_density(&p, e, g))?,
            None => nu.clone(),
        };
        let draws = target.sample(cfg.n_paths, cfg.seed);
        let mut prof = profile_mc(&ens, &draws, &times)?;
        prof.context.eps = eps;
        prof.context.x0 = cfg.x0.0;
        prof.context.potential = p.label().to_string();
        match eps {
            Some(e) => {
                let s = scaling(e, p.alpha())?;
                prof.context.scaling = Some(s);
                prof.context.clock = Clock::Rescaled;
                members.push(prof);
                scalings.push(s);
            }
            None => {
                prof.context.clock = Clock::Rescaled;
                limit = Some(prof);
            }
        }
    }
    Ok(ProfileFamily {
        channel: ChannelName::Mc,
        limit: limit.expect("the limit run is always present"),
        members,
        scalings,
    })
}

fn families(cfg: &ExperimentConfig) -> Result<Vec<ProfileFamily>> {
    let mut v = Vec::new();
    if cfg.has_channel(ChannelName::Fp) {
        v.push(fp_family(cfg)?);
    }
    if cfg.has_channel(ChannelName::Mc) {
        v.push(mc_family(cfg)?);
    }
    Ok(v)
}

fn channel_name(c: ChannelName) -> &'static str {
    match c {
        ChannelName::Fp => "fp",
        ChannelName::Mc => "mc",
    }
}

fn profile(cfg: &ExperimentConfig, out: &RunDir) -> Result<Outcome> {
    let mut summary = Vec::new();
    for fam in families(cfg)? {
        let ch = channel_name(fam.channel);
        out.write_table(&format!("profile_{ch}.csv"), &fam.table(&cfg.eps_list))?;
        let mut gaps = Table::new(["eps", "max_gap_to_limit"]);
        for (m, &eps) in fam.members.iter().zip(&cfg.eps_list) {
            let gap = m
                .values
                .iter()
                .zip(&fam.limit.values)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            gaps.push(vec![eps.into(), gap.into()]);
            summary.push(format!("{ch} eps {eps:e}: max |d - G| over the grid = {gap:.3e}"));
        }
        out.write_table(&format!("profile_{ch}_gaps.csv"), &gaps)?;
    }
    Ok(Outcome { summary, ..Default::default() })
}

fn mixing(cfg: &ExperimentConfig, out: &RunDir) -> Result<Outcome> {
    let mut t = Table::new([
        "channel",
        "eps",
        "eta",
        "tau",
        "tau_over_a_eps",
        "h_eta",
        "relative_gap",
        "tau_raw",
    ]);
    let mut reports = Vec::new();
    let mut summary = Vec::new();
    for fam in families(cfg)? {
        let ch = channel_name(fam.channel);
        for &eta in &cfg.mixing.eta {
            for (m, &eps) in fam.members.iter().zip(&cfg.eps_list) {
                match mixing_time(m, eta, Some(&fam.limit)) {
                    Ok(r) => {
                        t.push(vec![
                            ch.into(),
                            eps.into(),
                            eta.into(),
                            r.tau.into(),
                            r.tau_over_a_eps.into(),
                            r.h_eta.unwrap_or(f64::NAN).into(),
                            r.relative_gap.unwrap_or(f64::NAN).into(),
                            r.tau_raw.unwrap_or(f64::NAN).into(),
                        ]);
                        summary.push(format!(
                            "{ch} eps {eps:e} eta {eta}: tau/a = {:.4}  H = {:.4}",
                            r.tau_over_a_eps,
                            r.h_eta.unwrap_or(f64::NAN)
                        ));
                        reports.push((ch, eps, r));
                    }
                    Err(e @ Error::Horizon { .. }) => summary.push(format!("{ch} eps {eps:e} eta {eta}: {e}")),
                    Err(e) => return Err(e.into()),
                }
            }
        }
    }
    out.write_table("mixing.csv", &t)?;
    out.write_json("mixing.json", &reports)?;
    Ok(Outcome { summary, ..Default::default() })
}

/// Verdicts for the configured potential (window `a_eps`) and for the OU
/// contrast family (window `ln(1 / sqrt(eps))`).
pub fn cutoff_reports(fam: &ProfileFamily, cfg: &ExperimentConfig) -> Result<(CutoffReport, CutoffReport)> {
    let members: Vec<FamilyMember> = fam
        .members
        .iter()
        .zip(&fam.scalings)
        .map(|(m, s)| FamilyMember {
            eps: s.eps,
            scale: s.a_eps,
            profile: m.clone(),
        })
        .collect();
    let mix = &cfg.mixing;
    let main = cutoff_verdict(&members, &mix.deltas, mix.ratio_eta, mix.margin)?;
    let ou_times = gradual_core::analysis::geometric_grid(1e-3, 60.0, 4000);
    let ou: Vec<FamilyMember> = cfg
        .eps_list
        .iter()
        .map(|&e| FamilyMember {
            eps: e,
            scale: ou_window_scale(e),
            profile: ou_exact_profile(e, 1.0, &ou_times),
        })
        .collect();
    let contrast = cutoff_verdict(&ou, &mix.deltas, mix.ratio_eta, mix.margin)?;
    Ok((main, contrast))
}

fn cutoff_table(rep: &CutoffReport) -> Table {
    let mut cols = vec!["eps".to_string(), "scale".to_string()];
    cols.extend(rep.deltas.iter().map(|d| format!("d_at_delta={d:?}")));
    cols.push("ratio".into());
    let mut t = Table::new(cols);
    for r in &rep.rows {
        let mut row: Vec<Cell> = vec![r.eps.into(), r.scale.into()];
        row.extend(r.values.iter().map(|&v| Cell::from(v)));
        row.push(r.ratio.into());
        t.push(row);
    }
    t
}

fn cutoff(cfg: &ExperimentConfig, out: &RunDir) -> Result<Outcome> {
    let mut summary = vec!["finite-eps diagnostic over the configured eps values".to_string()];
    for fam in families(cfg)? {
        let ch = channel_name(fam.channel);
        let (main, contrast) = cutoff_reports(&fam, cfg)?;
        out.write_table(&format!("cutoff_{ch}.csv"), &cutoff_table(&main))?;
        out.write_table(&format!("cutoff_{ch}_ou_contrast.csv"), &cutoff_table(&contrast))?;
        out.write_json(&format!("cutoff_{ch}.json"), &serde_json::json!({ "main": &main, "ou_contrast": &contrast }))?;
        summary.push(format!("{ch}: verdict {} (window a_eps)", main.verdict));
        summary.push(format!("{ch}: OU contrast verdict {} (window ln(1/sqrt(eps)))", contrast.verdict));
    }
    Ok(Outcome { summary, ..Default::default() })
}

fn descend_table(cfg: &ExperimentConfig, out: &RunDir) -> Result<Outcome> {
    let p = cfg.potential()?;
    let limit = DriftField::limit(p.alpha(), p.c0_local())?;
    let original = ScalarField::gradient_flow(&p);
    let mut summary = Vec::new();
    let original_ok = match descend(&original, 1.0) {
        Ok(_) => true,
        Err(e) => {
            summary.push(format!("gradient flow of {} has no entrance from infinity: {e}", p.label()));
            false
        }
    };
    let mut t = Table::new(["t", "psi_limit", "psi_potential", "l2_envelope"]);
    for &tk in cfg.times().iter().filter(|&&t| t > 0.0) {
        let a = descend(limit.as_scalar_field(), tk)?;
        let b = if original_ok { descend(&original, tk)? } else { f64::NAN };
        let c = l2_envelope(p.alpha(), p.c0_local(), tk)?;
        t.push(vec![tk.into(), a.into(), b.into(), c.into()]);
    }
    summary.push(format!("{} rows written", t.rows.len()));
    out.write_table("descend.csv", &t)?;
    Ok(Outcome { summary, ..Default::default() })
}

fn reproduce_all(cfg: &ExperimentConfig, out: &RunDir) -> Result<Outcome> {
    let results = acceptance::run_all(cfg, out)?;
    let failed = results.iter().filter(|r| !r.passed).count();
    let summary = results.iter().map(|r| r.line()).collect();
    Ok(Outcome {
        summary,
        failed_criteria: failed,
    })
}
