//! Discretized normal reporting model.
//!
//! Given C true cases in an observation window, reports have mean ρC and
//! variance ρ(1−ρ)C + (ψρC)². The report y gets the normal mass on
//! [y − ½, y + ½); y = 0 absorbs the whole lower tail.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementModel {
    pub rho: f64,
    pub psi: f64,
    /// Added to the standard deviation and to the mass before the log, so a
    /// single wild observation cannot zero every particle. 0 disables it.
    pub tol: f64,
}

/// Φ(b) − Φ(a) for a ≤ b, computed on whichever tail keeps precision.
fn normal_mass(a: f64, b: f64) -> f64 {
    let s = std::f64::consts::SQRT_2;
    if a > 0.0 {
        0.5 * (erfc(a / s) - erfc(b / s))
    } else if b < 0.0 {
        0.5 * (erfc(-b / s) - erfc(-a / s))
    } else {
        1.0 - 0.5 * (erfc(-a / s) + erfc(b / s))
    }
}

impl MeasurementModel {
    pub fn mean_var(&self, cases: f64) -> (f64, f64) {
        let m = self.rho * cases;
        (m, m * (1.0 - self.rho + self.psi * self.psi * m))
    }

    /// Probability of reporting y given `cases`.
    pub fn mass(&self, y: i64, cases: f64) -> f64 {
        if y < 0 {
            return 0.0;
        }
        let (m, v) = self.mean_var(cases.max(0.0));
        let sd = v.max(0.0).sqrt() + self.tol;
        let yf = y as f64;
        let p = if sd == 0.0 {
            let inside = if y == 0 { m < 0.5 } else { m >= yf - 0.5 && m < yf + 0.5 };
            if inside {
                1.0
            } else {
                0.0
            }
        } else if y == 0 {
            normal_mass(f64::NEG_INFINITY, (0.5 - m) / sd)
        } else {
            normal_mass((yf - 0.5 - m) / sd, (yf + 0.5 - m) / sd)
        };
        p.max(0.0)
    }

    pub fn log_density(&self, y: i64, cases: f64) -> f64 {
        (self.mass(y, cases) + self.tol).ln()
    }

    /// A report drawn from the model, rounded and floored at zero.
    pub fn sample<R: rand::Rng + ?Sized>(&self, cases: f64, rng: &mut R) -> i64 {
        use rand_distr::{Distribution, StandardNormal};
        let (m, v) = self.mean_var(cases.max(0.0));
        let z: f64 = StandardNormal.sample(rng);
        (m + (v.max(0.0).sqrt() + self.tol) * z).round().max(0.0) as i64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mm(rho: f64, psi: f64) -> MeasurementModel {
        MeasurementModel { rho, psi, tol: 0.0 }
    }

    #[test]
    fn zero_cases_put_all_mass_at_zero() {
        assert_eq!(mm(0.5, 0.1).log_density(0, 0.0), 0.0);
        assert_eq!(mm(0.5, 0.1).log_density(3, 0.0), f64::NEG_INFINITY);
        let with_tol = MeasurementModel { rho: 0.5, psi: 0.1, tol: 1e-18 };
        assert!(with_tol.log_density(0, 0.0).abs() < 1e-12);
        assert!((with_tol.log_density(3, 0.0) - 1e-18f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn near_modal_at_table_values() {
        let m = mm(0.492, 0.118);
        let at_mode = m.log_density(492, 1000.0);
        for y in [300, 400, 450, 540, 600, 700] {
            assert!(m.log_density(y, 1000.0) < at_mode);
        }
        // Normal density at its centre, sd = sqrt(492·0.508 + (0.118·492)²).
        let sd = (492.0f64 * 0.508 + (0.118f64 * 492.0).powi(2)).sqrt();
        let approx = -(sd * (2.0 * std::f64::consts::PI).sqrt()).ln();
        assert!((at_mode - approx).abs() < 1e-3);
    }

    #[test]
    fn masses_sum_to_one() {
        for &(c, rho, psi) in &[(0.0, 0.5, 0.1), (3.0, 0.3, 0.0), (1000.0, 0.492, 0.118), (5e4, 0.9, 0.3), (20.0, 0.1, 2.0)] {
            let m = mm(rho, psi);
            let (mu, v) = m.mean_var(c);
            let hi = (mu + 40.0 * v.sqrt() + 10.0) as i64;
            let s: f64 = (0..=hi).map(|y| m.mass(y, c)).sum();
            assert!((s - 1.0).abs() < 1e-6, "c={c} sum={s}");
        }
    }

    #[test]
    fn tail_masses_keep_precision() {
        let m = mm(0.5, 0.0);
        let lp = m.log_density(900, 1000.0);
        assert!(lp.is_finite() && lp < -250.0);
    }
}
