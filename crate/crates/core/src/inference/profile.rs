//! Profile likelihood over a grid of one coordinate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::inference::mif::{iterated_filtering, MifSettings};
use crate::inference::params::ResolvedParams;
use crate::inference::pfilter::{replicated_loglik, FilterOptions, Observations};
use crate::model::Model;
use crate::rng::{derive_seed, tag};
use crate::stats::quadratic_fit;
use crate::{Error, Result};

/// Points further than this many cutoffs below the best one are left out of
/// the quadratic smooth.
const SMOOTH_WINDOW: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileSettings {
    /// `iterations = 0` evaluates the slice without maximizing.
    pub mif: MifSettings,
    pub eval_particles: usize,
    pub eval_reps: usize,
    pub level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub value: f64,
    pub loglik: Option<f64>,
    pub se: Option<f64>,
    pub params: Option<Vec<f64>>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileCi {
    pub lo: f64,
    pub hi: f64,
    /// Maximizer and maximum of the smoothed profile.
    pub mle: f64,
    pub max_loglik: f64,
    pub cutoff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileResult {
    pub param: String,
    pub points: Vec<ProfilePoint>,
    pub ci: Option<ProfileCi>,
}

/// Half the chi-square(1) quantile: 1.92 at level 0.95.
pub fn drop_cutoff(level: f64) -> f64 {
    ChiSquared::new(1.0).expect("df > 0").inverse_cdf(level) / 2.0
}

/// Confidence interval from a quadratic smooth of (value, loglik) pairs.
/// None when the smooth is not concave or too few points are finite.
pub fn profile_ci(values: &[f64], logliks: &[f64], level: f64) -> Option<ProfileCi> {
    let cutoff = drop_cutoff(level);
    let best = logliks.iter().copied().filter(|l| l.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for (&v, &l) in values.iter().zip(logliks) {
        if l.is_finite() && l >= best - SMOOTH_WINDOW * cutoff {
            x.push(v);
            y.push(l);
        }
    }
    let [c0, c1, c2] = quadratic_fit(&x, &y)?;
    if !(c2 < 0.0) {
        return None;
    }
    let mle = -c1 / (2.0 * c2);
    let max_loglik = c0 + c1 * mle + c2 * mle * mle;
    let half = (cutoff / -c2).sqrt();
    Some(ProfileCi { lo: mle - half, hi: mle + half, mle, max_loglik, cutoff })
}

fn is_soft_failure(e: &Error) -> bool {
    !e.is_input_error() || matches!(e, Error::Param(_))
}

pub fn profile_likelihood(
    model: &Model,
    data: &Observations,
    start: &ResolvedParams,
    param: &str,
    grid: &[f64],
    settings: &ProfileSettings,
    seed: u64,
) -> Result<ProfileResult> {
    if grid.len() < 3 {
        return Err(Error::Param("a profile grid needs at least three points".into()));
    }
    let k = model.param_index(param)?;
    let mut sd = start.sd.clone();
    sd[k] = 0.0;
    let eval = FilterOptions { particles: settings.eval_particles, dt: settings.mif.dt };
    let points = grid
        .par_iter()
        .enumerate()
        .map(|(i, &value)| {
            let mut theta = start.theta.clone();
            theta[k] = value;
            let fitted = if settings.mif.iterations == 0 {
                start.space.validate(&theta).map(|_| theta)
            } else {
                iterated_filtering(model, data, &start.space, &theta, &sd, &start.ivp, &settings.mif, derive_seed(seed, &[tag::PROFILE, i as u64, 0]))
                    .map(|r| r.params)
            };
            let res = fitted.and_then(|p| {
                let ll = replicated_loglik(model, data, &p, &eval, settings.eval_reps, derive_seed(seed, &[tag::PROFILE, i as u64, 1]))?;
                Ok((p, ll))
            });
            match res {
                Ok((p, ll)) => Ok(ProfilePoint { value, loglik: Some(ll.loglik), se: Some(ll.se), params: Some(p), failure: None }),
                Err(e) if is_soft_failure(&e) => Ok(ProfilePoint { value, loglik: None, se: None, params: None, failure: Some(e.to_string()) }),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let (xs, ys): (Vec<f64>, Vec<f64>) = points.iter().filter_map(|p| p.loglik.map(|l| (p.value, l))).unzip();
    let ci = profile_ci(&xs, &ys, settings.level);
    Ok(ProfileResult { param: param.to_string(), points, ci })
}
