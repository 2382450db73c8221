//! Distance-to-equilibrium profiles, their rescaled limit, mixing times and
//! cut-off diagnostics.

use rayon::prelude::*;
use serde::Serialize;

use crate::density::{
    drift_invariant_density, fp_evolve, gaussian_tv, invariant_density, rescaled_invariant_density, tv_density,
    tv_samples, BinRule, DensityGrid, FpConfig, GridSpec,
};
use crate::error::{Error, Result};
use crate::flow::descend;
use crate::potential::{scaling, Potential, ScalingPair};
use crate::sde::{make_drift, DriftField, DriftKind, PathEnsemble};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    FpExact,
    MonteCarlo,
}

/// Clock in which profile times are expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Clock {
    Original,
    /// Times `t` stand for original times `a_eps t`.
    Rescaled,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileContext {
    /// `None` for the limit process.
    pub eps: Option<f64>,
    pub x0: f64,
    pub potential: String,
    pub scaling: Option<ScalingPair>,
    pub clock: Clock,
}

impl ProfileContext {
    pub fn limit(x0: f64, potential: impl Into<String>) -> Self {
        Self {
            eps: None,
            x0,
            potential: potential.into(),
            scaling: None,
            clock: Clock::Rescaled,
        }
    }

    fn time_factor(&self) -> f64 {
        match (self.clock, self.scaling) {
            (Clock::Rescaled, Some(s)) => s.a_eps,
            _ => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TvProfile {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub channel: Channel,
    pub context: ProfileContext,
}

impl TvProfile {
    pub fn is_non_increasing(&self, slack: f64) -> bool {
        self.values.windows(2).all(|w| w[1] <= w[0] + slack)
    }

    /// Running minimum of the values.
    pub fn regularized(&self) -> Vec<f64> {
        let mut m = f64::INFINITY;
        self.values
            .iter()
            .map(|&v| {
                m = m.min(v);
                m
            })
            .collect()
    }

    /// Linear interpolation in the profile clock.
    pub fn value_at(&self, t: f64) -> Result<f64> {
        let (first, last) = (self.times[0], *self.times.last().unwrap());
        if t < first - 1e-12 || t > last + 1e-12 {
            return Err(Error::Range(format!("t = {t} outside the profile range [{first}, {last}]")));
        }
        let j = self.times.partition_point(|&s| s < t).clamp(1, self.times.len() - 1);
        let (t0, t1) = (self.times[j - 1], self.times[j]);
        let (v0, v1) = (self.values[j - 1], self.values[j]);
        if t1 == t0 {
            return Ok(v1);
        }
        let w = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
        Ok(v0 + w * (v1 - v0))
    }

    /// Value at original time `t`, converting through the profile clock.
    pub fn value_at_original(&self, t: f64) -> Result<f64> {
        self.value_at(t / self.context.time_factor())
    }
}

/// Geometric grid of `n` times from `t_first` to `t_last`.
pub fn geometric_grid(t_first: f64, t_last: f64, n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![t_first];
    }
    let r = (t_last / t_first).ln() / (n - 1) as f64;
    (0..n)
        .map(|i| if i + 1 == n { t_last } else { t_first * (r * i as f64).exp() })
        .collect()
}

/// Default horizon grid: 40 geometric points on `[0.05, 20]`.
pub fn default_t_grid() -> Vec<f64> {
    geometric_grid(0.05, 20.0, 40)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FpProfileOptions {
    /// Largest solver step.
    pub dt: f64,
    /// Descent time used to start marginals at `+-inf`.
    pub t0: f64,
}

impl Default for FpProfileOptions {
    fn default() -> Self {
        Self { dt: 1e-3, t0: 1e-2 }
    }
}

/// Initial density and clock offset for a start at `x0` (possibly infinite).
fn initial_density(drift: &DriftField, x0: f64, grid: GridSpec, t0: f64) -> Result<(DensityGrid, f64)> {
    if x0.is_finite() {
        return Ok((DensityGrid::point_mass(grid, x0)?, 0.0));
    }
    let psi = descend(drift.as_scalar_field(), t0)? * x0.signum();
    if psi.abs() > 0.9 * grid.z_max.abs().min(grid.z_min.abs()) {
        return Err(Error::param(
            "grid",
            format!("descent state {psi} at t0 = {t0} is too close to the grid edge"),
        ));
    }
    Ok((DensityGrid::point_mass(grid, psi)?, t0))
}

/// Marginal TVs against `target` and, optionally, the marginals themselves.
fn fp_run(
    drift: &DriftField,
    x0: f64,
    target: &DensityGrid,
    times: &[f64],
    opts: FpProfileOptions,
    keep: bool,
) -> Result<(Vec<f64>, Vec<DensityGrid>)> {
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::param("t_grid", "must be strictly increasing"));
    }
    let (rho0, offset) = initial_density(drift, x0, target.grid, opts.t0)?;
    if let Some(&t) = times.first() {
        if t < 0.0 || (offset > 0.0 && t <= offset) {
            return Err(Error::Range(format!(
                "t = {t} precedes the entrance bootstrap time {offset}"
            )));
        }
    }
    let t_end = times.last().copied().unwrap_or(offset) - offset;
    let cfg = FpConfig::new(drift.clone(), target.grid, opts.dt, t_end.max(opts.dt));
    let mut ev = fp_evolve(&cfg, &rho0)?;
    let mut tvs = Vec::with_capacity(times.len());
    let mut snaps = Vec::new();
    for &t in times {
        ev.advance_to(t - offset)?;
        tvs.push(ev.tv_to(target)?);
        if keep {
            snaps.push(ev.snapshot()?);
        }
    }
    Ok((tvs, snaps))
}

/// `t -> TV(rho_t, invariant)` from the Fokker–Planck channel.
pub fn profile_fp(drift: &DriftField, x0: f64, invariant: &DensityGrid, t_grid: &[f64]) -> Result<TvProfile> {
    let context = ProfileContext {
        eps: match drift.kind {
            DriftKind::Limit => None,
            _ => Some(drift.params.eps),
        },
        x0,
        potential: drift.label().to_string(),
        scaling: None,
        clock: Clock::Original,
    };
    profile_fp_with(drift, x0, invariant, t_grid, FpProfileOptions::default(), context)
}

pub fn profile_fp_with(
    drift: &DriftField,
    x0: f64,
    invariant: &DensityGrid,
    t_grid: &[f64],
    opts: FpProfileOptions,
    context: ProfileContext,
) -> Result<TvProfile> {
    let (values, _) = fp_run(drift, x0, invariant, t_grid, opts, false)?;
    Ok(TvProfile {
        times: t_grid.to_vec(),
        values,
        channel: Channel::FpExact,
        context,
    })
}

/// `t -> TV` between ensemble marginals and invariant draws.
pub fn profile_mc(ens: &PathEnsemble, invariant_samples: &[f64], t_grid: &[f64]) -> Result<TvProfile> {
    let mut values = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let m = ens.marginal(t)?;
        values.push(tv_samples(&m, invariant_samples, BinRule::FreedmanDiaconis)?);
    }
    Ok(TvProfile {
        times: t_grid.to_vec(),
        values,
        channel: Channel::MonteCarlo,
        context: ProfileContext {
            eps: None,
            x0: ens.config.x0,
            potential: ens.config.drift.label().to_string(),
            scaling: None,
            clock: Clock::Original,
        },
    })
}

/// Options for [`gradual_convergence_check`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradualOptions {
    pub fp: FpProfileOptions,
    /// Grid nodes; the half-width is chosen to cover every start.
    pub n: usize,
    /// Minimum grid half-width.
    pub z_extent: f64,
}

impl Default for GradualOptions {
    fn default() -> Self {
        Self {
            fp: FpProfileOptions::default(),
            n: 4001,
            z_extent: 6.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradualRow {
    pub eps: f64,
    pub scaling: ScalingPair,
    /// `d^eps_{a t}(x)` at each `t`.
    pub distance: Vec<f64>,
    /// `|d^eps_{a t}(x) - G_x(t)|`.
    pub gap: Vec<f64>,
    /// `TV(law of the rescaled process from x / b, law of Y_t(sgn(x) inf))`.
    pub coupling_term: Vec<f64>,
    /// `TV(rescaled invariant, limit invariant)`.
    pub invariant_term: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradualReport {
    pub x: f64,
    pub times: Vec<f64>,
    pub grid: GridSpec,
    /// `G_x(t)`.
    pub limit: TvProfile,
    pub rows: Vec<GradualRow>,
    /// Per `t`: the gap is non-increasing along the `eps` list.
    pub gap_decreasing: Vec<bool>,
    /// Per row and `t`: `gap <= coupling_term + invariant_term`.
    pub triangle_ok: bool,
}

impl GradualReport {
    /// `d^eps` as a profile in the rescaled clock.
    pub fn profile(&self, row: usize, potential: &str) -> TvProfile {
        let r = &self.rows[row];
        TvProfile {
            times: self.times.clone(),
            values: r.distance.clone(),
            channel: Channel::FpExact,
            context: ProfileContext {
                eps: Some(r.eps),
                x0: self.x,
                potential: potential.to_string(),
                scaling: Some(r.scaling),
                clock: Clock::Rescaled,
            },
        }
    }
}

/// Compare `d^eps_{a_eps t}(x)`, computed in the rescaled clock, with the
/// limit profile `G_x(t)` of the process started at `sgn(x) inf`.
pub fn gradual_convergence_check(
    p: &Potential,
    x: f64,
    eps_list: &[f64],
    t_grid: &[f64],
    opts: GradualOptions,
) -> Result<GradualReport> {
    if eps_list.is_empty() || eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::param("eps_list", "must be non-empty and strictly decreasing"));
    }
    if !x.is_finite() {
        return Err(Error::param("x", "must be finite"));
    }
    let alpha = p.alpha();
    let c0 = p.c0_local();
    let limit_drift = DriftField::limit(alpha, c0)?;
    let x_limit = if x == 0.0 { 0.0 } else { x.signum() * f64::INFINITY };
    let mut extent = opts.z_extent;
    for &eps in eps_list {
        extent = extent.max(x.abs() / scaling(eps, alpha)?.b_eps + 1.5);
    }
    if x != 0.0 {
        extent = extent.max(descend(limit_drift.as_scalar_field(), opts.fp.t0)? + 1.5);
    }
    let grid = GridSpec::symmetric(extent, opts.n)?;
    let nu = drift_invariant_density(&limit_drift, 1.0, grid)?;

    let limit_job = || fp_run(&limit_drift, x_limit, &nu, t_grid, opts.fp, true);
    let eps_job = |eps: f64| -> Result<(ScalingPair, Vec<f64>, Vec<DensityGrid>, f64)> {
        let s = scaling(eps, alpha)?;
        let drift = make_drift(p, DriftKind::RescaledEps, Some(eps))?;
        let nu_eps = rescaled_invariant_density(p, eps, grid)?;
        let (d, snaps) = fp_run(&drift, x / s.b_eps, &nu_eps, t_grid, opts.fp, true)?;
        let inv = tv_density(&nu_eps, &nu)?;
        Ok((s, d, snaps, inv))
    };
    let (limit, per_eps) = rayon::join(limit_job, || {
        eps_list.par_iter().map(|&e| eps_job(e)).collect::<Vec<_>>()
    });
    let (g_values, g_snaps) = limit?;

    let mut rows = Vec::with_capacity(eps_list.len());
    let mut triangle_ok = true;
    for (&eps, job) in eps_list.iter().zip(per_eps) {
        let (s, d, snaps, inv) = job?;
        let gap: Vec<f64> = d.iter().zip(&g_values).map(|(a, b)| (a - b).abs()).collect();
        let coupling: Vec<f64> = snaps
            .iter()
            .zip(&g_snaps)
            .map(|(a, b)| tv_density(a, b))
            .collect::<Result<_>>()?;
        triangle_ok &= gap.iter().zip(&coupling).all(|(g, c)| *g <= c + inv + 1e-9);
        rows.push(GradualRow {
            eps,
            scaling: s,
            distance: d,
            gap,
            coupling_term: coupling,
            invariant_term: inv,
        });
    }
    let gap_decreasing = (0..t_grid.len())
        .map(|k| rows.windows(2).all(|w| w[1].gap[k] <= w[0].gap[k] + 1e-12))
        .collect();
    Ok(GradualReport {
        x,
        times: t_grid.to_vec(),
        grid,
        limit: TvProfile {
            times: t_grid.to_vec(),
            values: g_values,
            channel: Channel::FpExact,
            context: ProfileContext::limit(x_limit, p.label()),
        },
        rows,
        gap_decreasing,
        triangle_ok,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixingReport {
    pub eta: f64,
    /// Crossing time in the original clock.
    pub tau: f64,
    /// Crossing time in the profile clock (`tau / a_eps` for rescaled profiles).
    pub tau_over_a_eps: f64,
    /// Crossing in the raw values when the profile was regularized.
    pub tau_raw: Option<f64>,
    /// `H_x(eta)` from the limit profile, when supplied.
    pub h_eta: Option<f64>,
    /// `|tau / a_eps - h_eta| / h_eta`.
    pub relative_gap: Option<f64>,
    /// The profile starts at or below `eta`.
    pub at_first_point: bool,
}

fn crossing(times: &[f64], values: &[f64], eta: f64) -> Result<(f64, bool)> {
    let i = values.iter().position(|&v| v <= eta).ok_or_else(|| Error::Horizon {
        eta,
        last: *values.last().unwrap_or(&f64::NAN),
        t_last: *times.last().unwrap_or(&f64::NAN),
    })?;
    if i == 0 {
        return Ok((times[0], true));
    }
    let (t0, t1, v0, v1) = (times[i - 1], times[i], values[i - 1], values[i]);
    let w = if v0 > v1 { (v0 - eta) / (v0 - v1) } else { 1.0 };
    Ok((t0 + w * (t1 - t0), false))
}

/// Linear-interpolated first crossing of level `eta`. Monte Carlo profiles
/// are replaced by their running minimum first.
pub fn mixing_time(profile: &TvProfile, eta: f64, limit: Option<&TvProfile>) -> Result<MixingReport> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::param("eta", format!("must lie in (0, 1), got {eta}")));
    }
    if profile.times.is_empty() {
        return Err(Error::InvalidInput("empty profile".into()));
    }
    let (values, tau_raw) = match profile.channel {
        Channel::MonteCarlo => {
            let raw = crossing(&profile.times, &profile.values, eta).ok().map(|c| c.0);
            (profile.regularized(), raw)
        }
        Channel::FpExact => (profile.values.clone(), None),
    };
    let (tau_p, at_first_point) = crossing(&profile.times, &values, eta)?;
    let factor = profile.context.time_factor();
    let h_eta = match limit {
        Some(l) => Some(crossing(&l.times, &l.regularized(), eta)?.0),
        None => None,
    };
    Ok(MixingReport {
        eta,
        tau: tau_p * factor,
        tau_over_a_eps: tau_p,
        tau_raw: tau_raw.map(|t| t * factor),
        h_eta,
        relative_gap: h_eta.map(|h| (tau_p - h).abs() / h),
        at_first_point,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    NoCutoff,
    CutoffLike,
    Inconclusive,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::NoCutoff => "NO_CUTOFF",
            Verdict::CutoffLike => "CUTOFF_LIKE",
            Verdict::Inconclusive => "INCONCLUSIVE",
        })
    }
}

/// One member of a profile family: a profile together with its window
/// scale `t_eps` in the original clock.
#[derive(Debug, Clone)]
pub struct FamilyMember {
    pub eps: f64,
    pub scale: f64,
    pub profile: TvProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CutoffRow {
    pub eps: f64,
    pub scale: f64,
    /// `d^eps_{delta t_eps}` for each delta.
    pub values: Vec<f64>,
    /// `tau(eta) / tau(1 - eta)`.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CutoffReport {
    pub verdict: Verdict,
    pub margin: f64,
    pub eta: f64,
    pub deltas: Vec<f64>,
    pub rows: Vec<CutoffRow>,
    /// Every tested value lies in `(margin, 1 - margin)`.
    pub values_inside: bool,
    /// Values below `delta = 1` rise and values above fall as eps decreases.
    pub window_sharpening: bool,
    pub ratio_decreasing: bool,
}

/// Margin for the `NO_CUTOFF` band `(margin, 1 - margin)`.
pub const NO_CUTOFF_MARGIN: f64 = 0.05;

/// Finite-eps cut-off diagnostic over a family ordered by decreasing eps.
pub fn cutoff_verdict(family: &[FamilyMember], delta_grid: &[f64], eta: f64, margin: f64) -> Result<CutoffReport> {
    if family.len() < 3 {
        return Err(Error::InvalidInput(format!("need at least 3 values of eps, got {}", family.len())));
    }
    if family.windows(2).any(|w| w[1].eps >= w[0].eps) {
        return Err(Error::InvalidInput("family must be ordered by strictly decreasing eps".into()));
    }
    let span = family[0].eps / family[family.len() - 1].eps;
    if span < 100.0 * (1.0 - 1e-9) {
        return Err(Error::InvalidInput(format!("eps must span at least two decades, got a factor {span}")));
    }
    if !(eta > 0.0 && eta < 0.5) {
        return Err(Error::param("eta", "must lie in (0, 1/2)"));
    }
    let mut rows = Vec::with_capacity(family.len());
    for m in family {
        let values = delta_grid
            .iter()
            .map(|d| m.profile.value_at_original(d * m.scale))
            .collect::<Result<Vec<_>>>()?;
        let lo = mixing_time(&m.profile, eta, None)?.tau;
        let hi = mixing_time(&m.profile, 1.0 - eta, None)?.tau;
        rows.push(CutoffRow {
            eps: m.eps,
            scale: m.scale,
            values,
            ratio: lo / hi,
        });
    }
    let values_inside = rows
        .iter()
        .all(|r| r.values.iter().all(|&v| v > margin && v < 1.0 - margin));
    let window_sharpening = delta_grid.iter().enumerate().all(|(k, &d)| {
        rows.windows(2).all(|w| {
            if d < 1.0 {
                w[1].values[k] >= w[0].values[k]
            } else if d > 1.0 {
                w[1].values[k] <= w[0].values[k]
            } else {
                true
            }
        })
    });
    let ratio_decreasing = rows.windows(2).all(|w| w[1].ratio < w[0].ratio);
    let verdict = if window_sharpening && ratio_decreasing {
        Verdict::CutoffLike
    } else if values_inside {
        Verdict::NoCutoff
    } else {
        Verdict::Inconclusive
    };
    Ok(CutoffReport {
        verdict,
        margin,
        eta,
        deltas: delta_grid.to_vec(),
        rows,
        values_inside,
        window_sharpening,
        ratio_decreasing,
    })
}

/// Exact profile of the Ornstein–Uhlenbeck process `dX = -X dt + sqrt(eps) dB`
/// from `x` against its invariant law `N(0, eps/2)`.
pub fn ou_exact_profile(eps: f64, x: f64, times: &[f64]) -> TvProfile {
    let s_inf = (0.5 * eps).sqrt();
    let values = times
        .iter()
        .map(|&t| {
            if t <= 0.0 {
                return 1.0;
            }
            let m = x * (-t).exp();
            let s = (0.5 * eps * -(-2.0 * t).exp_m1()).sqrt();
            gaussian_tv(m, s, 0.0, s_inf)
        })
        .collect();
    TvProfile {
        times: times.to_vec(),
        values,
        channel: Channel::FpExact,
        context: ProfileContext {
            eps: Some(eps),
            x0: x,
            potential: "harmonic".into(),
            scaling: None,
            clock: Clock::Original,
        },
    }
}

/// The OU window scale `ln(1 / sqrt(eps))`.
pub fn ou_window_scale(eps: f64) -> f64 {
    -0.5 * eps.ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DisintegrationReport {
    /// `TV(law at r + s from a, invariant)`.
    pub lhs: f64,
    /// Average over quantile points `y` of the time-`r` law of
    /// `TV(law at s from y, invariant)`.
    pub rhs: f64,
    pub points: usize,
}

/// Check `TV(P_{r+s}(a), pi) <= ∫ TV(P_s(y), pi) P_r(a, dy)` with the outer
/// law discretized at `points` mid-quantiles.
pub fn disintegration_check(
    drift: &DriftField,
    a: f64,
    r: f64,
    s: f64,
    grid: GridSpec,
    points: usize,
    opts: FpProfileOptions,
) -> Result<DisintegrationReport> {
    let noise = drift.default_noise_scale();
    let pi = drift_invariant_density(drift, noise, grid)?;
    let (lhs_tv, snaps) = fp_run(drift, a, &pi, &[r, r + s], opts, true)?;
    let outer = &snaps[0];
    let ys: Vec<f64> = (0..points)
        .map(|k| outer.quantile((k as f64 + 0.5) / points as f64))
        .collect();
    let inner = ys
        .par_iter()
        .map(|&y| fp_run(drift, y, &pi, &[s], opts, false).map(|v| v.0[0]))
        .collect::<Result<Vec<_>>>()?;
    Ok(DisintegrationReport {
        lhs: lhs_tv[1],
        rhs: inner.iter().sum::<f64>() / points as f64,
        points,
    })
}

/// The same distance computed in the original clock (`d^eps_{a t}(x)`) and in
/// the rescaled clock (`TV` of `X_{a t} / b` against the rescaled invariant).
pub fn tv_scale_invariance(
    p: &Potential,
    eps: f64,
    x: f64,
    t: f64,
    grid: GridSpec,
    opts: FpProfileOptions,
) -> Result<(f64, f64)> {
    let s = scaling(eps, p.alpha())?;
    let (a, b) = (s.a_eps, s.b_eps);
    let grid_x = GridSpec::new(grid.z_min * b, grid.z_max * b, grid.n)?;
    let orig = make_drift(p, DriftKind::Original, Some(eps))?;
    let mu = invariant_density(p, eps, grid_x)?;
    let orig_opts = FpProfileOptions {
        dt: opts.dt * a,
        t0: opts.t0 * a,
    };
    let (d_orig, _) = fp_run(&orig, x, &mu, &[a * t], orig_opts, false)?;
    let resc = make_drift(p, DriftKind::RescaledEps, Some(eps))?;
    let nu = rescaled_invariant_density(p, eps, grid)?;
    let (d_resc, _) = fp_run(&resc, x / b, &nu, &[t], opts, false)?;
    Ok((d_orig[0], d_resc[0]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_profile(times: Vec<f64>) -> TvProfile {
        let values = times.iter().map(|t| (1.0 - t).max(0.0)).collect();
        TvProfile {
            times,
            values,
            channel: Channel::FpExact,
            context: ProfileContext::limit(1.0, "test"),
        }
    }

    #[test]
    fn linear_crossing() {
        let p = linear_profile((0..=10).map(|i| i as f64 * 0.1).collect());
        let m = mixing_time(&p, 0.25, None).unwrap();
        assert!((m.tau - 0.75).abs() < 1e-12);
        assert!(!m.at_first_point);
    }

    #[test]
    fn crossing_at_first_point_and_horizon() {
        let p = linear_profile(vec![0.5, 0.6, 0.7]);
        let m = mixing_time(&p, 0.9, None).unwrap();
        assert!(m.at_first_point && m.tau == 0.5);
        assert!(matches!(mixing_time(&p, 0.1, None), Err(Error::Horizon { .. })));
        assert!(mixing_time(&p, 1.5, None).is_err());
    }

    #[test]
    fn mc_profiles_use_running_minimum() {
        let p = TvProfile {
            times: vec![0.0, 1.0, 2.0, 3.0],
            values: vec![0.9, 0.4, 0.6, 0.2],
            channel: Channel::MonteCarlo,
            context: ProfileContext::limit(0.0, "test"),
        };
        assert_eq!(p.regularized(), vec![0.9, 0.4, 0.4, 0.2]);
        let m = mixing_time(&p, 0.5, None).unwrap();
        assert!((m.tau - 0.8).abs() < 1e-12);
    }

    #[test]
    fn geometric_grid_endpoints() {
        let g = default_t_grid();
        assert_eq!(g.len(), 40);
        assert_eq!(g[0], 0.05);
        assert_eq!(g[39], 20.0);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn cutoff_needs_coverage() {
        let prof = ou_exact_profile(1e-2, 1.0, &geometric_grid(0.01, 30.0, 200));
        let m = |eps| FamilyMember {
            eps,
            scale: ou_window_scale(eps),
            profile: prof.clone(),
        };
        assert!(cutoff_verdict(&[m(1e-1)], &[0.5, 2.0], 0.25, NO_CUTOFF_MARGIN).is_err());
        assert!(cutoff_verdict(&[m(1e-1), m(5e-2), m(2e-2)], &[0.5, 2.0], 0.25, NO_CUTOFF_MARGIN).is_err());
    }

    #[test]
    fn ou_profile_limits() {
        let p = ou_exact_profile(1e-2, 1.0, &[0.0, 1.0, 50.0]);
        assert_eq!(p.values[0], 1.0);
        assert!(p.values[1] > 0.9);
        assert!(p.values[2] < 1e-12);
    }
}
