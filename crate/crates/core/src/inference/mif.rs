//! Iterated filtering (IF2).
//!
//! Iteration m runs a perturbed filter on the seed derived from
//! (seed, ITERATION, m) with random-walk sd scaled by cooling^m. The swarm
//! carries over between iterations; the estimate is its centre on the
//! estimation scale.

use serde::{Deserialize, Serialize};

use crate::inference::params::ParamSpace;
use crate::inference::pfilter::{perturbed_filter, FilterOptions, Observations, Perturbation};
use crate::model::Model;
use crate::rng::{derive_seed, tag};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MifSettings {
    pub particles: usize,
    pub iterations: usize,
    pub cooling: f64,
    pub dt: f64,
}

impl Default for MifSettings {
    fn default() -> Self {
        Self { particles: 2000, iterations: 50, cooling: 0.95, dt: 1.0 / 365.25 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MifResult {
    pub params: Vec<f64>,
    /// Perturbed-filter loglik of each iteration.
    pub loglik_trace: Vec<f64>,
    /// Swarm centre after each iteration.
    pub params_trace: Vec<Vec<f64>>,
}

pub fn iteration_seed(seed: u64, m: usize) -> u64 {
    derive_seed(seed, &[tag::ITERATION, m as u64])
}

fn swarm_centre(space: &ParamSpace, swarm: &[Vec<f64>], sd: &[f64]) -> Vec<f64> {
    let mask: Vec<bool> = sd.iter().map(|&s| s > 0.0).collect();
    let mut acc = vec![0.0; swarm[0].len()];
    for p in swarm {
        for (a, z) in acc.iter_mut().zip(space.to_estimation_masked(p, &mask)) {
            *a += z;
        }
    }
    acc.iter_mut().for_each(|a| *a /= swarm.len() as f64);
    // Fixed coordinates are identical across the swarm; keep them exact.
    let mut out = space.from_estimation_masked(&acc, &mask);
    for (i, m) in mask.iter().enumerate() {
        if !m {
            out[i] = swarm[0][i];
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn iterated_filtering(
    model: &Model,
    data: &Observations,
    space: &ParamSpace,
    start: &[f64],
    sd: &[f64],
    ivp: &[bool],
    settings: &MifSettings,
    seed: u64,
) -> Result<MifResult> {
    if sd.len() != start.len() || ivp.len() != start.len() || space.len() != start.len() {
        return Err(Error::Param("start, sd, ivp and transforms must have the same length".into()));
    }
    if sd.iter().any(|&s| !(s >= 0.0) || !s.is_finite()) {
        return Err(Error::Param("perturbation sd must be finite and nonnegative".into()));
    }
    if !(settings.cooling > 0.0 && settings.cooling <= 1.0) {
        return Err(Error::Param(format!("cooling {} outside (0, 1]", settings.cooling)));
    }
    if settings.iterations == 0 {
        return Err(Error::Param("need at least one iteration".into()));
    }
    space.validate(start)?;
    let opts = FilterOptions { particles: settings.particles, dt: settings.dt };
    let mut swarm = vec![start.to_vec(); settings.particles];
    let mut out = MifResult { params: start.to_vec(), loglik_trace: Vec::new(), params_trace: Vec::new() };
    for m in 0..settings.iterations {
        let scale = settings.cooling.powi(m as i32);
        let sd_m: Vec<f64> = sd.iter().map(|s| s * scale).collect();
        let pt = Perturbation { space, sd: &sd_m, ivp };
        let (res, next) = perturbed_filter(model, data, swarm, pt, &opts, iteration_seed(seed, m))?;
        if m == 0 && !res.loglik.is_finite() {
            return Err(Error::Estimate(format!("non-finite loglik {} at the starting point", res.loglik)));
        }
        swarm = next;
        out.params = swarm_centre(space, &swarm, sd);
        out.loglik_trace.push(res.loglik);
        out.params_trace.push(out.params.clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::pfilter::{particle_filter, tests::poisson_model};
    use std::collections::BTreeMap;

    fn data() -> Observations {
        let ys = [7, 12, 9, 4, 15, 10, 8, 11, 6, 13];
        Observations::new((1..=ys.len()).map(|i| i as f64).collect(), ys.iter().map(|&y| Some(y)).collect()).unwrap()
    }

    #[test]
    fn zero_sd_reproduces_plain_filters() {
        let model = poisson_model(6.0);
        let space = ParamSpace::new(model.param_names(), &BTreeMap::new()).unwrap();
        let start = model.default_params().to_vec();
        let n = start.len();
        let s = MifSettings { particles: 100, iterations: 3, cooling: 0.9, dt: 0.5 };
        let r = iterated_filtering(&model, &data(), &space, &start, &vec![0.0; n], &vec![false; n], &s, 21).unwrap();
        assert_eq!(r.params, start);
        for m in 0..3 {
            let f = particle_filter(&model, &data(), &start, &FilterOptions { particles: 100, dt: 0.5 }, iteration_seed(21, m)).unwrap();
            assert_eq!(r.loglik_trace[m], f.loglik);
        }
    }

    #[test]
    fn single_iteration_equals_perturbed_filter() {
        let model = poisson_model(6.0);
        let mut tf = BTreeMap::new();
        tf.insert("lambda".to_string(), crate::inference::params::Transform::Log);
        tf.insert("rho".to_string(), crate::inference::params::Transform::Logit);
        let space = ParamSpace::new(model.param_names(), &tf).unwrap();
        let start = model.default_params().to_vec();
        let sd: Vec<f64> = model.param_names().iter().map(|n| if n == "psi" { 0.0 } else { 0.05 }).collect();
        let ivp = vec![false; start.len()];
        let s = MifSettings { particles: 80, iterations: 1, cooling: 1.0, dt: 1.0 };
        let r = iterated_filtering(&model, &data(), &space, &start, &sd, &ivp, &s, 4).unwrap();
        let pt = Perturbation { space: &space, sd: &sd, ivp: &ivp };
        let opts = FilterOptions { particles: 80, dt: 1.0 };
        let (f, _) = perturbed_filter(&model, &data(), vec![start.clone(); 80], pt, &opts, iteration_seed(4, 0)).unwrap();
        assert_eq!(r.loglik_trace[0], f.loglik);
        assert_ne!(r.params, start);
    }

    #[test]
    fn recovers_poisson_rate() {
        let truth = 30.0;
        let model = poisson_model(truth);
        // Reports drawn from the model itself.
        let p = model.default_params().to_vec();
        let mm = model.observation().unwrap().measurement(&p);
        let mut rng = crate::rng::stream(77, &[]);
        let ys: Vec<Option<i64>> =
            (0..80).map(|_| Some(mm.sample(crate::kernels::poisson(truth, &mut rng) as f64, &mut rng))).collect();
        let data = Observations::new((1..=80).map(|i| i as f64).collect(), ys).unwrap();
        let mut tf = BTreeMap::new();
        tf.insert("lambda".to_string(), crate::inference::params::Transform::Log);
        let space = ParamSpace::new(model.param_names(), &tf).unwrap();
        let mut start = p.clone();
        start[model.param_index("lambda").unwrap()] = 10.0;
        let sd: Vec<f64> = model.param_names().iter().map(|n| if n == "lambda" { 0.05 } else { 0.0 }).collect();
        let s = MifSettings { particles: 300, iterations: 30, cooling: 0.9, dt: 1.0 };
        let r = iterated_filtering(&model, &data, &space, &start, &sd, &vec![false; p.len()], &s, 8).unwrap();
        let est = r.params[model.param_index("lambda").unwrap()];
        assert!((est / truth - 1.0).abs() < 0.15, "estimate {est}");
        assert!(r.loglik_trace.last().unwrap() > &r.loglik_trace[0]);
    }

    #[test]
    fn bad_settings_are_rejected() {
        let model = poisson_model(6.0);
        let space = ParamSpace::new(model.param_names(), &BTreeMap::new()).unwrap();
        let start = model.default_params().to_vec();
        let n = start.len();
        let s = MifSettings { particles: 10, iterations: 1, cooling: 1.5, dt: 1.0 };
        assert!(iterated_filtering(&model, &data(), &space, &start, &vec![0.0; n], &vec![false; n], &s, 1).is_err());
        let s = MifSettings { cooling: 0.5, ..s };
        assert!(iterated_filtering(&model, &data(), &space, &start, &vec![-1.0; n], &vec![false; n], &s, 1).is_err());
    }
}
