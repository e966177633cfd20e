//! Parameter transforms between the natural scale and the unconstrained
//! scale on which IF2 perturbs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::Model;
use crate::{Error, Result};

pub const LOGIT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    #[default]
    Identity,
    Log,
    /// Values are clamped to [ε, 1 − ε] first, so boundary estimates such as
    /// a cohort fraction of 1 stay finite.
    Logit,
    /// Members share one simplex: y_i = log(x_i / Σx).
    Simplex,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpace {
    names: Vec<String>,
    transforms: Vec<Transform>,
    simplex: Vec<usize>,
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(LOGIT_EPS, 1.0 - LOGIT_EPS);
    (p / (1.0 - p)).ln()
}

fn expit(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl ParamSpace {
    pub fn new(names: &[String], transforms: &BTreeMap<String, Transform>) -> Result<Self> {
        for k in transforms.keys() {
            if !names.contains(k) {
                return Err(Error::Param(format!("transform given for unknown parameter '{k}'")));
            }
        }
        let tf: Vec<Transform> = names.iter().map(|n| transforms.get(n).copied().unwrap_or_default()).collect();
        let simplex: Vec<usize> = (0..names.len()).filter(|&i| tf[i] == Transform::Simplex).collect();
        if simplex.len() == 1 {
            return Err(Error::Param("a simplex needs at least two members".into()));
        }
        Ok(Self { names: names.to_vec(), transforms: tf, simplex })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn transform(&self, i: usize) -> Transform {
        self.transforms[i]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Checks the constraints each transform implies.
    pub fn validate(&self, theta: &[f64]) -> Result<()> {
        for (i, &x) in theta.iter().enumerate() {
            let ok = match self.transforms[i] {
                Transform::Identity => x.is_finite(),
                Transform::Log => x > 0.0 && x.is_finite(),
                Transform::Logit => (0.0..=1.0).contains(&x),
                Transform::Simplex => x >= 0.0 && x.is_finite(),
            };
            if !ok {
                return Err(Error::Param(format!("{} = {x} violates its {:?} constraint", self.names[i], self.transforms[i])));
            }
        }
        if !self.simplex.is_empty() && !(self.simplex.iter().map(|&i| theta[i]).sum::<f64>() > 0.0) {
            return Err(Error::Param("simplex members sum to zero".into()));
        }
        Ok(())
    }

    /// Natural → estimation scale. Only coordinates flagged in `mask` are
    /// transformed (the simplex as a block if any member is flagged); the
    /// rest are copied so they come back bit-for-bit.
    pub fn to_estimation_masked(&self, theta: &[f64], mask: &[bool]) -> Vec<f64> {
        let mut z = theta.to_vec();
        for i in 0..theta.len() {
            if !mask[i] {
                continue;
            }
            z[i] = match self.transforms[i] {
                Transform::Identity | Transform::Simplex => theta[i],
                Transform::Log => theta[i].ln(),
                Transform::Logit => logit(theta[i]),
            };
        }
        if self.simplex.iter().any(|&i| mask[i]) {
            let total: f64 = self.simplex.iter().map(|&i| theta[i]).sum();
            for &i in &self.simplex {
                z[i] = (theta[i].max(f64::MIN_POSITIVE) / total).ln();
            }
        }
        z
    }

    pub fn from_estimation_masked(&self, z: &[f64], mask: &[bool]) -> Vec<f64> {
        let mut theta = z.to_vec();
        for i in 0..z.len() {
            if !mask[i] {
                continue;
            }
            theta[i] = match self.transforms[i] {
                Transform::Identity | Transform::Simplex => z[i],
                Transform::Log => z[i].exp(),
                Transform::Logit => expit(z[i]),
            };
        }
        if self.simplex.iter().any(|&i| mask[i]) {
            let m = self.simplex.iter().map(|&i| z[i]).fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = self.simplex.iter().map(|&i| (z[i] - m).exp()).sum();
            for &i in &self.simplex {
                theta[i] = (z[i] - m).exp() / total;
            }
        }
        theta
    }

    pub fn to_estimation(&self, theta: &[f64]) -> Vec<f64> {
        self.to_estimation_masked(theta, &vec![true; theta.len()])
    }

    pub fn from_estimation(&self, z: &[f64]) -> Vec<f64> {
        self.from_estimation_masked(z, &vec![true; z.len()])
    }
}

/// Parameter file for filter, mif and profile runs.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
pub struct ParamConfig {
    /// Overrides of the model's defaults.
    #[serde(default)]
    pub values: BTreeMap<String, f64>,
    #[serde(default)]
    pub transforms: BTreeMap<String, Transform>,
    /// Random-walk sd on the estimation scale; absent means fixed.
    #[serde(default)]
    pub sd: BTreeMap<String, f64>,
    /// Initial-value parameters, perturbed only at the start time.
    #[serde(default)]
    pub ivp: Vec<String>,
}

/// Everything IF2 needs about the parameters, indexed like the model's.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedParams {
    pub theta: Vec<f64>,
    pub space: ParamSpace,
    pub sd: Vec<f64>,
    pub ivp: Vec<bool>,
}

impl ParamConfig {
    pub fn from_json_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn resolve(&self, model: &Model) -> Result<ResolvedParams> {
        let theta = model.params_from(&self.values)?;
        let space = ParamSpace::new(model.param_names(), &self.transforms)?;
        space.validate(&theta)?;
        let mut sd = vec![0.0; theta.len()];
        for (k, &v) in &self.sd {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Param(format!("sd of {k} must be finite and nonnegative")));
            }
            sd[model.param_index(k)?] = v;
        }
        let mut ivp = vec![false; theta.len()];
        for k in &self.ivp {
            ivp[model.param_index(k)?] = true;
        }
        Ok(ResolvedParams { theta, space, sd, ivp })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn space() -> ParamSpace {
        let names: Vec<String> = ["R0", "rho", "S_0", "E_0", "I_0", "R_0", "x"].iter().map(|s| s.to_string()).collect();
        let mut tf = BTreeMap::new();
        tf.insert("R0".into(), Transform::Log);
        tf.insert("rho".into(), Transform::Logit);
        for k in ["S_0", "E_0", "I_0", "R_0"] {
            tf.insert(k.into(), Transform::Simplex);
        }
        ParamSpace::new(&names, &tf).unwrap()
    }

    #[test]
    fn constraints_are_checked() {
        let s = space();
        assert!(s.validate(&[30.0, 0.5, 0.03, 1e-4, 1e-4, 0.9698, -2.0]).is_ok());
        assert!(s.validate(&[-1.0, 0.5, 0.03, 1e-4, 1e-4, 0.9698, 0.0]).is_err());
        assert!(s.validate(&[1.0, 1.5, 0.03, 1e-4, 1e-4, 0.9698, 0.0]).is_err());
        assert!(ParamSpace::new(&["a".into()], &BTreeMap::from([("b".into(), Transform::Log)])).is_err());
        assert!(ParamSpace::new(&["a".into()], &BTreeMap::from([("a".into(), Transform::Simplex)])).is_err());
    }

    #[test]
    fn logit_boundary_is_finite() {
        let s = space();
        let z = s.to_estimation(&[1.0, 1.0, 0.25, 0.25, 0.25, 0.25, 0.0]);
        assert!(z.iter().all(|v| v.is_finite()));
        let back = s.from_estimation(&z);
        assert!((back[1] - (1.0 - LOGIT_EPS)).abs() < 1e-15);
    }

    #[test]
    fn masked_coordinates_are_untouched() {
        let s = space();
        let theta = [34.09, 0.492, 0.032, 1e-4, 1e-4, 0.9678, 0.3];
        let mask = [false; 7];
        assert_eq!(s.from_estimation_masked(&s.to_estimation_masked(&theta, &mask), &mask), theta.to_vec());
    }

    proptest! {
        #[test]
        fn round_trip(r0 in 1e-3f64..1e4, rho in 1e-6f64..(1.0 - 1e-6), x in -1e3f64..1e3,
                      f in proptest::collection::vec(1e-6f64..1.0, 4)) {
            let s = space();
            let tot: f64 = f.iter().sum();
            let theta = vec![r0, rho, f[0] / tot, f[1] / tot, f[2] / tot, f[3] / tot, x];
            let back = s.from_estimation(&s.to_estimation(&theta));
            for (a, b) in theta.iter().zip(&back) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} vs {b}");
            }
        }
    }
}
