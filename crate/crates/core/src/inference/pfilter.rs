//! Bootstrap particle filter over the Euler simulator.
//!
//! Particle j between observations n−1 and n draws from stream
//! (seed, PROCESS, n, j); resampling at n uses (seed, RESAMPLE, n) and
//! parameter perturbation uses (seed, PERTURB, n, j). Results do not depend
//! on the thread count.

use std::path::Path;

use chrono::NaiveDate;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::graph::SystemState;
use crate::inference::params::ParamSpace;
use crate::kernels::DrawStats;
use crate::model::{Model, Scratch};
use crate::rng::{derive_seed, stream, tag};
use crate::stats::{log_mean_exp, log_mean_exp_se};
use crate::{Error, Result};

/// Reported counts at observation times. `None` marks a missing report.
#[derive(Debug, Clone, PartialEq)]
pub struct Observations {
    pub times: Vec<f64>,
    pub cases: Vec<Option<i64>>,
}

/// Decimal year with 365.25-day years counted from 1970-01-01.
pub fn decimal_year(d: NaiveDate) -> f64 {
    let epoch = NaiveDate::from_ymd_opt(1970, 1, 1).expect("valid date");
    1970.0 + (d - epoch).num_days() as f64 / 365.25
}

impl Observations {
    pub fn new(times: Vec<f64>, cases: Vec<Option<i64>>) -> Result<Self> {
        if times.len() != cases.len() || times.is_empty() {
            return Err(Error::Data("need matching, nonempty times and cases".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Data("observation times must increase strictly".into()));
        }
        if let Some(y) = cases.iter().flatten().find(|&&y| y < 0) {
            return Err(Error::Data(format!("negative report {y}")));
        }
        Ok(Self { times, cases })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Reads `date,cases` (ISO dates) or `time,cases` (decimal years).
    /// Empty or `NA` cases are missing.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let headers = rdr.headers().map_err(|e| Error::Data(e.to_string()))?.clone();
        let col = |name: &str| headers.iter().position(|h| h.trim() == name);
        let cases_col = col("cases").ok_or_else(|| Error::Data(format!("{}: no 'cases' column", path.display())))?;
        let (time_col, is_date) = match (col("date"), col("time")) {
            (Some(c), _) => (c, true),
            (None, Some(c)) => (c, false),
            _ => return Err(Error::Data(format!("{}: need a 'date' or 'time' column", path.display()))),
        };
        let (mut times, mut cases) = (Vec::new(), Vec::new());
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Data(e.to_string()))?;
            let bad = |what: &str| Error::Data(format!("{} row {}: bad {what}", path.display(), line + 2));
            let t = rec.get(time_col).ok_or_else(|| bad("time"))?.trim();
            times.push(if is_date {
                decimal_year(NaiveDate::parse_from_str(t, "%Y-%m-%d").map_err(|_| bad("date"))?)
            } else {
                t.parse::<f64>().map_err(|_| bad("time"))?
            });
            let c = rec.get(cases_col).ok_or_else(|| bad("cases"))?.trim();
            cases.push(match c {
                "" | "NA" => None,
                s => Some(s.parse::<f64>().map_err(|_| bad("cases"))?.round() as i64),
            });
        }
        Self::new(times, cases)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterOptions {
    pub particles: usize,
    pub dt: f64,
}

impl FilterOptions {
    fn check(&self) -> Result<()> {
        if self.particles < 2 {
            return Err(Error::Param("need at least two particles".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Param("dt must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterResult {
    pub loglik: f64,
    pub cond_loglik: Vec<f64>,
    pub ess: Vec<f64>,
    pub times: Vec<f64>,
    /// Weighted mean vertex counts at each observation time, before resampling.
    pub filter_mean: Vec<Vec<f64>>,
    pub stats: DrawStats,
}

/// Random-walk perturbation of per-particle parameters on the estimation
/// scale. Initial-value coordinates move only before the first observation.
#[derive(Debug, Clone, Copy)]
pub struct Perturbation<'a> {
    pub space: &'a ParamSpace,
    pub sd: &'a [f64],
    pub ivp: &'a [bool],
}

/// Systematic resampling: n evenly spaced points offset by u ∈ [0,1).
pub fn systematic_resample(weights: &[f64], u: f64, n: usize) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let mut out = Vec::with_capacity(n);
    let mut i = 0;
    let mut cum = weights[0];
    for k in 0..n {
        let pos = (u + k as f64) / n as f64 * total;
        while cum <= pos && i + 1 < weights.len() {
            i += 1;
            cum += weights[i];
        }
        out.push(i);
    }
    out
}

#[derive(Clone)]
struct Particle {
    state: SystemState,
    params: Option<Vec<f64>>,
}

fn perturb_params(p: &mut [f64], pt: &Perturbation, first: bool, rng: &mut impl Rng) {
    let mask: Vec<bool> = (0..p.len()).map(|i| pt.sd[i] > 0.0 && (first || !pt.ivp[i])).collect();
    if !mask.iter().any(|&m| m) {
        return;
    }
    let mut z = pt.space.to_estimation_masked(p, &mask);
    for i in 0..z.len() {
        if mask[i] {
            let e: f64 = rng.sample(rand_distr::StandardNormal);
            z[i] += pt.sd[i] * e;
        }
    }
    p.copy_from_slice(&pt.space.from_estimation_masked(&z, &mask));
}

fn is_numeric_failure(e: &Error) -> bool {
    matches!(e, Error::Rate { .. } | Error::Kernel(_) | Error::Param(_) | Error::Overflow { .. })
}

fn run(
    model: &Model,
    data: &Observations,
    shared: &[f64],
    swarm: Option<Vec<Vec<f64>>>,
    perturb: Option<Perturbation>,
    opts: &FilterOptions,
    seed: u64,
) -> Result<(FilterResult, Option<Vec<Vec<f64>>>)> {
    opts.check()?;
    let obs = model
        .observation()
        .ok_or_else(|| Error::Config("the model has no observation block".into()))?;
    let t0 = model.t0();
    if !(data.times[0] > t0) {
        return Err(Error::Data(format!("first observation at {} is not after t0 = {t0}", data.times[0])));
    }
    let j_count = opts.particles;
    let init = model.initial_state(shared)?;
    let mut particles: Vec<Particle> = match swarm {
        Some(s) => {
            if s.len() != j_count {
                return Err(Error::Param(format!("swarm has {} members, expected {j_count}", s.len())));
            }
            s.into_iter().map(|p| Particle { state: init.clone(), params: Some(p) }).collect()
        }
        None => vec![Particle { state: init.clone(), params: None }; j_count],
    };
    let arrow = obs.arrow;
    let nv = model.graph().n_vertices();
    let mut res = FilterResult {
        loglik: 0.0,
        cond_loglik: Vec::with_capacity(data.len()),
        ess: Vec::with_capacity(data.len()),
        times: data.times.clone(),
        filter_mean: Vec::with_capacity(data.len()),
        stats: DrawStats::default(),
    };
    for (n, (&t, &y)) in data.times.iter().zip(&data.cases).enumerate() {
        let out: Vec<Result<(f64, DrawStats)>> = particles
            .par_iter_mut()
            .enumerate()
            .map_init(Scratch::default, |scratch, (j, p)| {
                let mut stats = DrawStats::default();
                if let (Some(pt), Some(theta)) = (perturb.as_ref(), p.params.as_mut()) {
                    let mut rng = stream(seed, &[tag::PERTURB, n as u64, j as u64]);
                    perturb_params(theta, pt, n == 0, &mut rng);
                    if n == 0 {
                        match model.initial_state(theta) {
                            Ok(s) => p.state = s,
                            Err(e) if is_numeric_failure(&e) => return Ok((f64::NEG_INFINITY, stats)),
                            Err(e) => return Err(e),
                        }
                    }
                }
                let theta = p.params.as_deref().unwrap_or(shared);
                let prev = p.state.flows[arrow];
                let mut rng = stream(seed, &[tag::PROCESS, n as u64, j as u64]);
                match model.advance(&mut p.state, t, opts.dt, theta, &mut rng, &mut stats, scratch) {
                    Ok(()) => {}
                    Err(e) if perturb.is_some() && is_numeric_failure(&e) => return Ok((f64::NEG_INFINITY, stats)),
                    Err(e) => return Err(e),
                }
                let cases = (p.state.flows[arrow] - prev) as f64;
                let lw = y.map_or(0.0, |y| obs.measurement(theta).log_density(y, cases));
                Ok((if lw.is_nan() { f64::NEG_INFINITY } else { lw }, stats))
            })
            .collect();
        let mut logw = Vec::with_capacity(j_count);
        for r in out {
            let (lw, st) = r?;
            res.stats.merge(&st);
            logw.push(lw);
        }
        let m = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            return Err(Error::FilterFailure { index: n, time: t });
        }
        let w: Vec<f64> = logw.iter().map(|l| (l - m).exp()).collect();
        let sw: f64 = w.iter().sum();
        let sw2: f64 = w.iter().map(|x| x * x).sum();
        res.cond_loglik.push(log_mean_exp(&logw));
        res.ess.push(sw * sw / sw2);
        let mut fm = vec![0.0; nv];
        for (p, wj) in particles.iter().zip(&w) {
            for (acc, &c) in fm.iter_mut().zip(&p.state.counts) {
                *acc += wj * c as f64;
            }
        }
        fm.iter_mut().for_each(|x| *x /= sw);
        res.filter_mean.push(fm);

        let u: f64 = stream(seed, &[tag::RESAMPLE, n as u64]).random();
        let idx = systematic_resample(&w, u, j_count);
        particles = idx.into_iter().map(|i| particles[i].clone()).collect();
    }
    res.loglik = res.cond_loglik.iter().sum();
    let swarm = if particles[0].params.is_some() {
        Some(particles.into_iter().map(|p| p.params.expect("every particle carries parameters")).collect())
    } else {
        None
    };
    Ok((res, swarm))
}

pub fn particle_filter(model: &Model, data: &Observations, params: &[f64], opts: &FilterOptions, seed: u64) -> Result<FilterResult> {
    run(model, data, params, None, None, opts, seed).map(|(r, _)| r)
}

/// One IF2 pass: every particle carries its own parameter vector, perturbed
/// before each propagation. Returns the filter output and the final swarm.
pub fn perturbed_filter(
    model: &Model,
    data: &Observations,
    swarm: Vec<Vec<f64>>,
    perturbation: Perturbation,
    opts: &FilterOptions,
    seed: u64,
) -> Result<(FilterResult, Vec<Vec<f64>>)> {
    let shared = swarm.first().cloned().ok_or_else(|| Error::Param("empty swarm".into()))?;
    let (r, s) = run(model, data, &shared, Some(swarm), Some(perturbation), opts, seed)?;
    Ok((r, s.expect("swarm requested")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicatedLoglik {
    /// log of the mean likelihood over replicates.
    pub loglik: f64,
    pub se: f64,
    pub logliks: Vec<f64>,
}

/// Independent filters on seeds derived from (seed, REPLICATE, r).
pub fn replicated_loglik(
    model: &Model,
    data: &Observations,
    params: &[f64],
    opts: &FilterOptions,
    reps: usize,
    seed: u64,
) -> Result<ReplicatedLoglik> {
    if reps == 0 {
        return Err(Error::Param("need at least one replicate".into()));
    }
    let logliks = (0..reps)
        .into_par_iter()
        .map(|r| particle_filter(model, data, params, opts, derive_seed(seed, &[tag::REPLICATE, r as u64])).map(|f| f.loglik))
        .collect::<Result<Vec<f64>>>()?;
    Ok(ReplicatedLoglik { loglik: log_mean_exp(&logliks), se: log_mean_exp_se(&logliks), logliks })
}
