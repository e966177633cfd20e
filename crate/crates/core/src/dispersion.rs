//! Infinitesimal dispersion from simulation, and the closed-form oracles.
//!
//! `estimate_infinitesimal` runs M single Euler steps of length h from a
//! frozen state for each h on a grid, forms mean/variance/covariance of the
//! increments divided by h, and extrapolates to h = 0 with a weighted linear
//! fit in h. Standard errors come from 30 batch means per h.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::graph::{GroupKind, SystemState};
use crate::kernels::{leading_event_rate, DrawStats, Law};
use crate::model::{Model, Scratch};
use crate::rng::{stream, tag};
use crate::stats::{covariance, mean, t_quantile, variance, wls_intercept};
use crate::{Error, Result};

pub const BATCHES: usize = 30;
pub const CLASSIFY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub estimate: f64,
    pub se: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    fn new(estimate: f64, se: f64, tq: f64) -> Self {
        Self { estimate, se, lo: estimate - tq * se, hi: estimate + tq * se }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrowEstimate {
    pub arrow: String,
    pub mean_rate: Interval,
    pub var_rate: Interval,
    pub dispersion: Interval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovEstimate {
    pub arrows: (String, String),
    pub cov_rate: Interval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispersionEstimate {
    pub h_grid: Vec<f64>,
    pub replicates: usize,
    pub level: f64,
    pub arrows: Vec<ArrowEstimate>,
    pub covariances: Vec<CovEstimate>,
    pub draw_stats: DrawStats,
}

struct BatchMoments {
    mean: Vec<f64>,
    var: Vec<f64>,
    cov: Vec<f64>,
    stats: DrawStats,
}

fn pairs(k: usize) -> Vec<(usize, usize)> {
    (0..k).flat_map(|i| (i + 1..k).map(move |j| (i, j))).collect()
}

/// Runs `n` single steps of length h and calls `record` with each increment
/// vector over the selected arrows.
#[allow(clippy::too_many_arguments)]
fn single_steps(
    model: &Model,
    params: &[f64],
    state: &SystemState,
    arrows: &[usize],
    h: f64,
    n: usize,
    path: &[u64],
    seed: u64,
    mut record: impl FnMut(&[i64]),
) -> Result<DrawStats> {
    let mut rng = stream(seed, path);
    let mut stats = DrawStats::default();
    let mut scratch = Scratch::default();
    let mut d = vec![0i64; arrows.len()];
    for _ in 0..n {
        let mut s = state.clone();
        model.step(&mut s, h, params, &mut rng, &mut stats, &mut scratch)?;
        for (k, &a) in arrows.iter().enumerate() {
            d[k] = s.flows[a] - state.flows[a];
        }
        record(&d);
    }
    Ok(stats)
}

fn check_inputs(state: &SystemState, h_grid: &[f64], m: usize) -> Result<()> {
    if m < 1000 {
        return Err(Error::Estimate(format!("need at least 1000 replicates per step size, got {m}")));
    }
    if h_grid.len() < 2 || h_grid.iter().any(|&h| !(h > 0.0)) || h_grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Estimate("h grid needs at least two positive, decreasing values".into()));
    }
    if state.counts.iter().all(|&c| c == 0) {
        return Err(Error::Estimate("degenerate state: every count is zero".into()));
    }
    Ok(())
}

/// Estimates infinitesimal mean, variance, dispersion index and pairwise
/// covariance rates of `arrows` at the frozen state, with `level` intervals.
#[allow(clippy::too_many_arguments)]
pub fn estimate_infinitesimal(
    model: &Model,
    params: &[f64],
    state: &SystemState,
    arrows: &[usize],
    h_grid: &[f64],
    m: usize,
    seed: u64,
    level: f64,
) -> Result<DispersionEstimate> {
    check_inputs(state, h_grid, m)?;
    if arrows.is_empty() {
        return Err(Error::Estimate("no arrows selected".into()));
    }
    let k = arrows.len();
    let pr = pairs(k);
    let per_batch = m.div_ceil(BATCHES);
    let jobs: Vec<(usize, usize)> = (0..h_grid.len()).flat_map(|hi| (0..BATCHES).map(move |b| (hi, b))).collect();
    let batches: Vec<BatchMoments> = jobs
        .par_iter()
        .map(|&(hi, b)| {
            let h = h_grid[hi];
            let mut samples: Vec<Vec<f64>> = vec![Vec::with_capacity(per_batch); k];
            let stats = single_steps(model, params, state, arrows, h, per_batch, &[tag::DIAGNOSE, hi as u64, b as u64], seed, |d| {
                for (i, &v) in d.iter().enumerate() {
                    samples[i].push(v as f64);
                }
            })?;
            Ok(BatchMoments {
                mean: samples.iter().map(|s| mean(s) / h).collect(),
                var: samples.iter().map(|s| variance(s) / h).collect(),
                cov: pr.iter().map(|&(i, j)| covariance(&samples[i], &samples[j]) / h).collect(),
                stats,
            })
        })
        .collect::<Result<_>>()?;

    let mut draw_stats = DrawStats::default();
    for b in &batches {
        draw_stats.merge(&b.stats);
    }
    let tq = t_quantile(level, (BATCHES - 1) as f64);
    let nb = BATCHES as f64;
    let by_h = |hi: usize| &batches[hi * BATCHES..(hi + 1) * BATCHES];
    // Per-h batch means and their sampling variances, then the WLS intercept.
    let extrapolate = |get: &dyn Fn(&BatchMoments) -> f64| -> (f64, f64, Vec<f64>, Vec<Vec<f64>>) {
        let mut y = Vec::new();
        let mut v = Vec::new();
        let mut raw = Vec::new();
        for hi in 0..h_grid.len() {
            let xs: Vec<f64> = by_h(hi).iter().map(get).collect();
            y.push(mean(&xs));
            v.push(variance(&xs) / nb);
            raw.push(xs);
        }
        let w: Vec<f64> = v.iter().map(|s| if *s > 0.0 { 1.0 / s } else { 1.0 }).collect();
        let (a, coef) = wls_intercept(h_grid, &y, &w);
        let se = coef.iter().zip(&v).map(|(c, s)| c * c * s).sum::<f64>().sqrt();
        (a, se, coef, raw)
    };

    let mut out_arrows = Vec::with_capacity(k);
    for i in 0..k {
        let (mu, mu_se, coef, raw_m) = extrapolate(&|b: &BatchMoments| b.mean[i]);
        let (s2, s2_se, coef_v, raw_v) = extrapolate(&|b: &BatchMoments| b.var[i]);
        // Delta method for D = s2/mu; the two fits share the design, but the
        // weights can differ, so pair the coefficients explicitly.
        let cov_mv: f64 = (0..h_grid.len())
            .map(|hi| coef[hi] * coef_v[hi] * covariance(&raw_m[hi], &raw_v[hi]) / nb)
            .sum();
        let d = s2 / mu;
        let d_var = s2_se * s2_se / (mu * mu) - 2.0 * s2 * cov_mv / mu.powi(3) + s2 * s2 * mu_se * mu_se / mu.powi(4);
        out_arrows.push(ArrowEstimate {
            arrow: model.graph().arrow_ids()[arrows[i]].clone(),
            mean_rate: Interval::new(mu, mu_se, tq),
            var_rate: Interval::new(s2, s2_se, tq),
            dispersion: Interval::new(d, d_var.max(0.0).sqrt(), tq),
        });
    }
    let covariances = pr
        .iter()
        .enumerate()
        .map(|(p, &(i, j))| {
            let (c, se, _, _) = extrapolate(&|b: &BatchMoments| b.cov[p]);
            let ids = model.graph().arrow_ids();
            CovEstimate { arrows: (ids[arrows[i]].clone(), ids[arrows[j]].clone()), cov_rate: Interval::new(c, se, tq) }
        })
        .collect();
    Ok(DispersionEstimate { h_grid: h_grid.to_vec(), replicates: m, level, arrows: out_arrows, covariances, draw_stats })
}

/// P(two or more of `arrows` jump in one step of length h)/h with its batch
/// standard error.
pub fn simultaneous_jump_rate(
    model: &Model,
    params: &[f64],
    state: &SystemState,
    arrows: &[usize],
    h: f64,
    m: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let per_batch = m.div_ceil(BATCHES);
    let fr: Vec<f64> = (0..BATCHES)
        .into_par_iter()
        .map(|b| {
            let mut hits = 0usize;
            single_steps(model, params, state, arrows, h, per_batch, &[tag::DIAGNOSE, h.to_bits(), b as u64], seed, |d| {
                if d.iter().filter(|&&v| v > 0).count() >= 2 {
                    hits += 1;
                }
            })?;
            Ok(hits as f64 / per_batch as f64 / h)
        })
        .collect::<Result<_>>()?;
    Ok((mean(&fr), (variance(&fr) / BATCHES as f64).sqrt()))
}

/// Kendall's time-inhomogeneous death process: (mean, variance, D) of the
/// number of deaths by the time the hazard has accumulated to `hazard`.
pub fn integrated_death_oracle(x0: f64, hazard: f64) -> Result<(f64, f64, f64)> {
    if !(x0 >= 0.0) || !(hazard >= 0.0) {
        return Err(Error::Estimate(format!("need x0 >= 0 and hazard >= 0, got {x0}, {hazard}")));
    }
    let p = -(-hazard).exp_m1();
    let s = (-hazard).exp();
    Ok((x0 * p, x0 * s * p, s))
}

/// The pure birth counterpart: births from x0 founders.
pub fn integrated_birth_oracle(x0: f64, hazard: f64) -> Result<(f64, f64, f64)> {
    if !(x0 >= 0.0) || !(hazard >= 0.0) {
        return Err(Error::Estimate(format!("need x0 >= 0 and hazard >= 0, got {x0}, {hazard}")));
    }
    let g = hazard.exp_m1();
    let e = hazard.exp();
    Ok((x0 * g, x0 * e * g, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Systemic {
    Equi,
    Over,
    Under,
    Mixed,
    Indeterminate,
}

/// Systemic classification from per-arrow dispersion intervals. An arrow
/// counts as over-dispersed when its lower bound clears 1, under-dispersed
/// when its upper bound falls below 1, and equi when its interval covers 1.
pub fn classify_systemic(estimates: &[ArrowEstimate], arrow_ids: &[String]) -> Result<Systemic> {
    if arrow_ids.is_empty() || estimates.is_empty() {
        return Err(Error::Estimate("cannot classify a graph without arrows".into()));
    }
    for id in arrow_ids {
        if !estimates.iter().any(|e| &e.arrow == id) {
            return Err(Error::Estimate(format!("no dispersion estimate for arrow {id}")));
        }
    }
    let mut over = false;
    let mut under = false;
    for e in estimates {
        let d = e.dispersion;
        if !(d.lo.is_finite() && d.hi.is_finite()) {
            return Ok(Systemic::Indeterminate);
        }
        over |= d.lo > 1.0 + CLASSIFY_TOL;
        under |= d.hi < 1.0 - CLASSIFY_TOL;
    }
    Ok(match (over, under) {
        (true, true) => Systemic::Mixed,
        (true, false) => Systemic::Over,
        (false, true) => Systemic::Under,
        (false, false) => Systemic::Equi,
    })
}

/// Per-group leading-order rate of exactly one transition event at the
/// state; λ is their sum.
pub fn group_event_rates(model: &Model, params: &[f64], state: &SystemState) -> Result<Vec<f64>> {
    let g = model.graph();
    model
        .groups()
        .iter()
        .enumerate()
        .map(|(gi, grp)| {
            let (law, c) = model.group_kernel(gi, params);
            let r: Vec<f64> = grp
                .members
                .iter()
                .map(|&a| model.rates().eval_rate(a, state.time, &state.counts, params))
                .collect::<Result<_>>()?;
            let tails = || grp.members.iter().map(|&a| state.counts[g.endpoints(a).0]).collect::<Vec<_>>();
            let heads = || grp.members.iter().map(|&a| state.counts[g.endpoints(a).1]).collect::<Vec<_>>();
            let counts = match (grp.kind, law) {
                (_, Law::Poisson) => vec![],
                (GroupKind::OutgoingStar, _) => vec![tails()[0]],
                (GroupKind::IncomingStar, _) => vec![heads()[0]],
                (GroupKind::ColorMatchedBounded, _) => tails(),
                (GroupKind::ColorMatchedUnbounded, _) => heads(),
                (GroupKind::Singleton, l) if l.is_bounded() => tails(),
                (GroupKind::Singleton, _) => heads(),
            };
            let counts: Vec<i64> = counts.into_iter().map(|x| x.max(0)).collect();
            leading_event_rate(law, &counts, c, &r)
        })
        .collect()
}

/// λ(t, x) with P(exactly one transition in [t, t+h) | x) = λh + o(h).
pub fn single_transition_rate(model: &Model, params: &[f64], state: &SystemState) -> Result<f64> {
    Ok(group_event_rates(model, params, state)?.iter().sum())
}
