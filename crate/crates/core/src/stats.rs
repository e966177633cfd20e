//! Small numerical helpers shared across modules.

use statrs::distribution::{ContinuousCDF, StudentsT};

pub use statrs::function::gamma::{digamma, ln_gamma};

/// ln C(n, k) for real n ≥ k ≥ 0.
pub fn ln_choose(n: f64, k: f64) -> f64 {
    ln_gamma(n + 1.0) - ln_gamma(k + 1.0) - ln_gamma(n - k + 1.0)
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// log of the mean of exp(xs).
pub fn log_mean_exp(xs: &[f64]) -> f64 {
    log_sum_exp(xs) - (xs.len() as f64).ln()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

pub fn covariance(xs: &[f64], ys: &[f64]) -> f64 {
    let (mx, my) = (mean(xs), mean(ys));
    xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Two-sided Student-t critical value at confidence `level`.
pub fn t_quantile(level: f64, df: f64) -> f64 {
    let t = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    t.inverse_cdf(0.5 + level / 2.0)
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2)
}

/// Standard error of log_mean_exp(xs) by the delta method.
pub fn log_mean_exp_se(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() || xs.len() < 2 {
        return f64::NAN;
    }
    let w: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let mw = mean(&w);
    (variance(&w) / xs.len() as f64).sqrt() / mw
}

/// Weighted least squares fit y ≈ a + b·x. Returns the intercept together with
/// the weights w such that a = Σ wᵢ yᵢ, which callers use to propagate errors.
pub fn wls_intercept(x: &[f64], y: &[f64], weight: &[f64]) -> (f64, Vec<f64>) {
    let sw: f64 = weight.iter().sum();
    let sx: f64 = weight.iter().zip(x).map(|(w, x)| w * x).sum();
    let sxx: f64 = weight.iter().zip(x).map(|(w, x)| w * x * x).sum();
    let det = sw * sxx - sx * sx;
    let coef: Vec<f64> = weight.iter().zip(x).map(|(w, x)| w * (sxx - sx * x) / det).collect();
    let a = coef.iter().zip(y).map(|(c, y)| c * y).sum();
    (a, coef)
}

/// Ordinary least squares quadratic fit, returns (c0, c1, c2).
pub fn quadratic_fit(x: &[f64], y: &[f64]) -> Option<[f64; 3]> {
    if x.len() < 3 {
        return None;
    }
    // Centre x for conditioning.
    let xm = mean(x);
    let mut m = [[0.0f64; 4]; 3];
    for (&xi, &yi) in x.iter().zip(y) {
        let u = xi - xm;
        let p = [1.0, u, u * u];
        for r in 0..3 {
            for c in 0..3 {
                m[r][c] += p[r] * p[c];
            }
            m[r][3] += p[r] * yi;
        }
    }
    for col in 0..3 {
        let piv = (col..3).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))?;
        if m[piv][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, piv);
        for r in 0..3 {
            if r != col {
                let f = m[r][col] / m[col][col];
                for c in col..4 {
                    m[r][c] -= f * m[col][c];
                }
            }
        }
    }
    let (b0, b1, b2) = (m[0][3] / m[0][0], m[1][3] / m[1][1], m[2][3] / m[2][2]);
    // Undo the centring.
    Some([b0 - b1 * xm + b2 * xm * xm, b1 - 2.0 * b2 * xm, b2])
}

/// Batch means summary for a sequence of per-batch estimates.
#[derive(Debug, Clone, Copy)]
pub struct BatchSummary {
    pub mean: f64,
    pub se: f64,
}

pub fn batch_summary(xs: &[f64]) -> BatchSummary {
    BatchSummary { mean: mean(xs), se: (variance(xs) / xs.len() as f64).sqrt() }
}
