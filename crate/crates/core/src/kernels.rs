//! Step laws for arrow groups.
//!
//! Each law draws one Euler-step increment vector for a group given the
//! integrated hazards of its members. Noisy laws first draw step
//! probabilities Π from a Dirichlet or beta law with concentration c around
//! the deterministic probabilities π, then draw counts given Π.
//!
//! The closed-form infinitesimal moments and leading-order transition rates of
//! every law live here too; they are the oracles for the Monte Carlo suites.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use crate::graph::GroupKind;
use crate::stats::{digamma, ln_choose, ln_gamma, log_sum_exp};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Hash)]
#[serde(rename_all = "snake_case")]
pub enum Law {
    EquiMultinomial,
    DirichletMultinomial,
    BetaBinomialShared,
    EquiNegMultinomial,
    DirichletNegMultinomial,
    BetaNegBinomialShared,
    /// Counts arriving from a source at an absolute rate: Poisson(∫r).
    Poisson,
}

impl Law {
    /// Binomial-family laws whose increments never exceed the tail count.
    pub fn is_bounded(self) -> bool {
        matches!(self, Law::EquiMultinomial | Law::DirichletMultinomial | Law::BetaBinomialShared)
    }

    pub fn is_unbounded(self) -> bool {
        matches!(self, Law::EquiNegMultinomial | Law::DirichletNegMultinomial | Law::BetaNegBinomialShared)
    }

    pub fn needs_c(self) -> bool {
        matches!(
            self,
            Law::DirichletMultinomial | Law::BetaBinomialShared | Law::DirichletNegMultinomial | Law::BetaNegBinomialShared
        )
    }

    pub fn is_shared(self) -> bool {
        matches!(self, Law::BetaBinomialShared | Law::BetaNegBinomialShared)
    }

    pub fn compatible_with(self, kind: GroupKind) -> bool {
        use GroupKind::*;
        match self {
            Law::EquiMultinomial => matches!(kind, OutgoingStar | ColorMatchedBounded | Singleton),
            Law::DirichletMultinomial => matches!(kind, OutgoingStar | Singleton),
            Law::BetaBinomialShared => matches!(kind, ColorMatchedBounded | Singleton),
            Law::EquiNegMultinomial => matches!(kind, IncomingStar | ColorMatchedUnbounded | Singleton),
            Law::DirichletNegMultinomial => matches!(kind, IncomingStar | Singleton),
            Law::BetaNegBinomialShared => matches!(kind, ColorMatchedUnbounded | Singleton),
            Law::Poisson => matches!(kind, Singleton),
        }
    }

    /// The noise-free counterpart, used for equi-dispersed baselines.
    pub fn equi(self) -> Law {
        if self.is_bounded() {
            Law::EquiMultinomial
        } else if self.is_unbounded() {
            Law::EquiNegMultinomial
        } else {
            self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub law: Law,
    pub c: Option<f64>,
}

impl KernelSpec {
    pub fn new(law: Law, c: Option<f64>) -> Result<Self> {
        match (law.needs_c(), c) {
            (true, Some(c)) if c > 0.0 && c.is_finite() => Ok(Self { law, c: Some(c) }),
            (true, Some(c)) => Err(Error::Kernel(format!("{law:?} needs c > 0, got {c}"))),
            (true, None) => Err(Error::Kernel(format!("{law:?} needs an inverse-noise parameter c"))),
            (false, _) => Ok(Self { law, c: None }),
        }
    }
}

/// π_0 (retention / success slot) followed by π_1..π_m.
#[derive(Debug, Clone, PartialEq)]
pub struct StepProbabilities {
    pub pi: Vec<f64>,
}

impl StepProbabilities {
    pub fn members(&self) -> usize {
        self.pi.len() - 1
    }

    /// Dirichlet parameters α_i = c·π_i; they sum to c.
    pub fn alpha(&self, c: f64) -> Vec<f64> {
        self.pi.iter().map(|p| c * p).collect()
    }
}

/// π from integrated hazards: π_i = (1 − e^{−ΣH})·H_i/ΣH.
pub fn step_probs(hazards: &[f64]) -> Result<StepProbabilities> {
    step_probs_split(hazards, hazards)
}

/// π_i = (1 − e^{−ΣH})·r_i/Σr, with the split taken from instantaneous rates
/// at the left endpoint. Falls back to the hazards when all rates vanish.
pub fn step_probs_split(hazards: &[f64], rates: &[f64]) -> Result<StepProbabilities> {
    if hazards.is_empty() {
        return Err(Error::Kernel("step probabilities need at least one member".into()));
    }
    if hazards.iter().chain(rates).any(|h| !(*h >= 0.0) || !h.is_finite()) {
        return Err(Error::Kernel(format!("hazards and rates must be finite and nonnegative: {hazards:?} {rates:?}")));
    }
    let total: f64 = hazards.iter().sum();
    let mut pi = Vec::with_capacity(hazards.len() + 1);
    if total == 0.0 {
        pi.push(1.0);
        pi.extend(hazards.iter().map(|_| 0.0));
        return Ok(StepProbabilities { pi });
    }
    let leave = -(-total).exp_m1();
    let rsum: f64 = rates.iter().sum();
    let split: &[f64] = if rsum > 0.0 { rates } else { hazards };
    let ssum = if rsum > 0.0 { rsum } else { total };
    pi.push((-total).exp());
    pi.extend(split.iter().map(|r| leave * r / ssum));
    Ok(StepProbabilities { pi })
}

/// Counters for boundary events in unbounded laws.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DrawStats {
    /// Draws where the success probability fell below `PI0_FLOOR` and was redrawn.
    pub redraws: u64,
    /// Redraws that were still below the floor and got clamped to it.
    pub clamped: u64,
}

impl DrawStats {
    pub fn merge(&mut self, other: &DrawStats) {
        self.redraws += other.redraws;
        self.clamped += other.clamped;
    }
}

pub const PI0_FLOOR: f64 = 1e-12;

/// log of a Gamma(shape, 1) variate. Small shapes use the
/// Gamma(shape+1)·U^{1/shape} identity so tiny values stay representable.
pub fn ln_gamma_variate<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if shape >= 1.0 {
        return Gamma::new(shape, 1.0).expect("shape > 0").sample(rng).ln();
    }
    let g = Gamma::new(shape + 1.0, 1.0).expect("shape > 0").sample(rng);
    let u: f64 = 1.0 - rng.random::<f64>();
    g.ln() + u.ln() / shape
}

/// log Π for Π ~ Dir(alpha). Zero parameters give Π_i = 0 exactly.
pub fn ln_dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Vec<f64> {
    let mut lg: Vec<f64> = alpha.iter().map(|&a| ln_gamma_variate(a, rng)).collect();
    let norm = log_sum_exp(&lg);
    for v in &mut lg {
        *v -= norm;
    }
    lg
}

/// (log Π, log(1 − Π)) for Π ~ Beta(a, b).
pub fn ln_beta<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> (f64, f64) {
    let la = ln_gamma_variate(a, rng);
    let lb = ln_gamma_variate(b, rng);
    let norm = log_sum_exp(&[la, lb]);
    (la - norm, lb - norm)
}

pub fn binomial<R: Rng + ?Sized>(n: i64, p: f64, rng: &mut R) -> i64 {
    if n <= 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n as u64, p).expect("valid binomial").sample(rng) as i64
}

pub fn poisson<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> i64 {
    if lambda <= 0.0 {
        return 0;
    }
    let x: f64 = Poisson::new(lambda).expect("finite positive mean").sample(rng);
    x as i64
}

/// Multinomial(n, p) with p given on the log scale; slot 0 receives the
/// remainder. Conditional binomials run over slots 1..m.
pub fn multinomial_ln<R: Rng + ?Sized>(n: i64, ln_p: &[f64], rng: &mut R) -> Vec<i64> {
    let mut out = vec![0i64; ln_p.len()];
    let p: Vec<f64> = ln_p.iter().map(|l| l.exp()).collect();
    let mut rest = n;
    // Mass of the slots not yet visited, summed from the small end so the
    // conditional probabilities keep their relative precision.
    let mut tail: f64 = p.iter().sum();
    for i in 1..p.len() {
        if rest == 0 {
            break;
        }
        let q = if tail > 0.0 { (p[i] / tail).min(1.0) } else { 0.0 };
        let k = binomial(rest, q, rng);
        out[i] = k;
        rest -= k;
        tail -= p[i];
        if i == 1 {
            // p[0] is visited last; recompute to shed rounding.
            tail = p[0] + p[2..].iter().sum::<f64>();
        }
    }
    out[0] = rest;
    out
}

/// Negative binomial failure count before `x` successes with success
/// probability exp(ln_success), sampled as a gamma-Poisson mixture.
pub fn neg_binomial_ln<R: Rng + ?Sized>(x: i64, ln_success: f64, ln_failure: f64, rng: &mut R) -> i64 {
    if x <= 0 || ln_failure == f64::NEG_INFINITY {
        return 0;
    }
    let lam = (ln_gamma_variate(x as f64, rng) + ln_failure - ln_success).exp();
    poisson(lam, rng)
}

fn check_c(c: f64) -> Result<()> {
    if c > 0.0 && c.is_finite() {
        Ok(())
    } else {
        Err(Error::Kernel(format!("inverse noise parameter must be positive, got {c}")))
    }
}

/// Dirichlet-multinomial step of an outgoing star. Slot 0 holds the retained
/// individuals; the result always sums to `x_tail`.
pub fn sample_bounded_star<R: Rng + ?Sized>(x_tail: i64, sp: &StepProbabilities, c: f64, rng: &mut R) -> Result<Vec<i64>> {
    check_c(c)?;
    let mut out = vec![0; sp.pi.len()];
    out[0] = x_tail.max(0);
    if x_tail <= 0 || sp.pi[0] >= 1.0 {
        return Ok(out);
    }
    let ln_pi = ln_dirichlet(&sp.alpha(c), rng);
    Ok(multinomial_ln(x_tail, &ln_pi, rng))
}

/// Beta-binomial step of a single arrow.
pub fn sample_beta_binomial<R: Rng + ?Sized>(x_tail: i64, hazard: f64, c: f64, rng: &mut R) -> Result<i64> {
    check_c(c)?;
    let sp = step_probs(&[hazard])?;
    if x_tail <= 0 || sp.pi[1] == 0.0 {
        return Ok(0);
    }
    let (lp, _) = ln_beta(c * sp.pi[1], c * sp.pi[0], rng);
    Ok(binomial(x_tail, lp.exp(), rng))
}

/// Color-matched bounded group: one shared Π ~ Beta(cπ, c(1−π)), then
/// conditionally independent Binomial(x_i, Π) per member.
pub fn sample_shared_beta_bounded<R: Rng + ?Sized>(x_tails: &[i64], hazard: f64, c: f64, rng: &mut R) -> Result<Vec<i64>> {
    check_c(c)?;
    let sp = step_probs(&[hazard])?;
    if x_tails.iter().all(|&x| x <= 0) || sp.pi[1] == 0.0 {
        return Ok(vec![0; x_tails.len()]);
    }
    let (lp, _) = ln_beta(c * sp.pi[1], c * sp.pi[0], rng);
    let p = lp.exp();
    Ok(x_tails.iter().map(|&x| binomial(x, p, rng)).collect())
}

/// Draws log Π_0 for an unbounded law, redrawing once and then clamping when
/// the success probability falls below the floor.
fn guarded_success<R: Rng + ?Sized>(
    draw: &mut dyn FnMut(&mut R) -> (f64, f64),
    rng: &mut R,
    stats: &mut DrawStats,
) -> (f64, f64) {
    let floor = PI0_FLOOR.ln();
    let (mut ls, mut lf) = draw(rng);
    if ls <= floor {
        stats.redraws += 1;
        (ls, lf) = draw(rng);
        if ls <= floor {
            stats.clamped += 1;
            ls = floor;
            lf = (-PI0_FLOOR).ln_1p();
        }
    }
    (ls, lf)
}

/// Dirichlet-negative-multinomial step of an incoming star: Π ~ Dir(c·π),
/// total failures ~ NB(x_head, Π_0), thinned across arrows ∝ Π_i.
pub fn sample_unbounded_star<R: Rng + ?Sized>(
    x_head: i64,
    sp: &StepProbabilities,
    c: f64,
    rng: &mut R,
    stats: &mut DrawStats,
) -> Result<Vec<i64>> {
    check_c(c)?;
    let m = sp.members();
    if x_head <= 0 || sp.pi[0] >= 1.0 {
        return Ok(vec![0; m]);
    }
    let alpha = sp.alpha(c);
    let mut ln_pi = Vec::new();
    let mut draw = |rng: &mut R| {
        ln_pi = ln_dirichlet(&alpha, rng);
        (ln_pi[0], log_sum_exp(&ln_pi[1..]))
    };
    let (ls, lf) = guarded_success(&mut draw, rng, stats);
    let total = neg_binomial_ln(x_head, ls, lf, rng);
    if m == 1 {
        return Ok(vec![total]);
    }
    // Thinning weights Π_i / (1 − Π_0) with a dummy slot 0 of zero mass.
    let mut w = Vec::with_capacity(m + 1);
    w.push(f64::NEG_INFINITY);
    w.extend(ln_pi[1..].iter().map(|l| l - lf));
    let split = multinomial_ln(total, &w, rng);
    Ok(split[1..].to_vec())
}

/// Color-matched unbounded group: one shared Π ~ Beta(cπ, c(1−π)) as the
/// per-trial failure probability, then NB(x_head_i, 1 − Π) per member.
pub fn sample_shared_beta_unbounded<R: Rng + ?Sized>(
    x_heads: &[i64],
    hazard: f64,
    c: f64,
    rng: &mut R,
    stats: &mut DrawStats,
) -> Result<Vec<i64>> {
    check_c(c)?;
    let sp = step_probs(&[hazard])?;
    if x_heads.iter().all(|&x| x <= 0) || sp.pi[1] == 0.0 {
        return Ok(vec![0; x_heads.len()]);
    }
    let (a, b) = (c * sp.pi[1], c * sp.pi[0]);
    let mut draw = |rng: &mut R| {
        let (lfail, lsucc) = ln_beta(a, b, rng);
        (lsucc, lfail)
    };
    let (ls, lf) = guarded_success(&mut draw, rng, stats);
    Ok(x_heads.iter().map(|&x| neg_binomial_ln(x, ls, lf, rng)).collect())
}

/// Noise-free step at fixed π: Multinomial for bounded laws (slot 0 retained,
/// result sums to the count) or negative multinomial for unbounded laws
/// (one entry per member).
pub fn sample_equi_step<R: Rng + ?Sized>(law: Law, count: i64, sp: &StepProbabilities, rng: &mut R) -> Result<Vec<i64>> {
    match law {
        Law::EquiMultinomial => {
            if count <= 0 || sp.pi[0] >= 1.0 {
                let mut out = vec![0; sp.pi.len()];
                out[0] = count.max(0);
                return Ok(out);
            }
            let ln_p: Vec<f64> = sp.pi.iter().map(|p| p.ln()).collect();
            Ok(multinomial_ln(count, &ln_p, rng))
        }
        Law::EquiNegMultinomial => {
            let m = sp.members();
            if count <= 0 || sp.pi[0] >= 1.0 {
                return Ok(vec![0; m]);
            }
            let ls = sp.pi[0].ln();
            let lf = log_sum_exp(&sp.pi[1..].iter().map(|p| p.ln()).collect::<Vec<_>>());
            let total = neg_binomial_ln(count, ls, lf, rng);
            if m == 1 {
                return Ok(vec![total]);
            }
            let mut w = vec![f64::NEG_INFINITY];
            w.extend(sp.pi[1..].iter().map(|p| p.ln() - lf));
            Ok(multinomial_ln(total, &w, rng)[1..].to_vec())
        }
        other => Err(Error::Kernel(format!("{other:?} is not an equi-dispersed law"))),
    }
}

/// ln Γ(a + n) − ln Γ(a). Short integer runs are summed directly, which keeps
/// precision when a is huge.
fn ln_rising(a: f64, n: f64) -> f64 {
    if n >= 0.0 && n <= 64.0 && n.fract() == 0.0 {
        (0..n as i64).map(|j| (a + j as f64).ln()).sum()
    } else {
        ln_gamma(a + n) - ln_gamma(a)
    }
}

fn check_rates_equal(r: &[f64]) -> Result<f64> {
    let r0 = r[0];
    if r.iter().any(|&x| (x - r0).abs() > 1e-12 * r0.abs().max(1e-300)) {
        return Err(Error::Kernel(format!("shared-beta members need a common rate, got {r:?}")));
    }
    Ok(r0)
}

fn check_pattern(k: &[i64], m: usize) -> Result<()> {
    if k.len() != m {
        return Err(Error::Pattern(format!("pattern has {} entries for {m} members", k.len())));
    }
    if k.iter().any(|&v| v < 0) || k.iter().all(|&v| v == 0) {
        return Err(Error::Pattern(format!("pattern {k:?} must be nonnegative and nonzero")));
    }
    Ok(())
}

/// Leading-order transition rate q = lim P(Δ = k)/h of one group.
///
/// `counts` holds the tail count (stars), the head count (incoming stars) or
/// one count per member (shared laws); `r` holds per-member rates at t.
/// Patterns with two or more nonzero star arrows have rate 0.
pub fn exact_transition_rate(law: Law, counts: &[i64], k: &[i64], c: Option<f64>, r: &[f64]) -> Result<f64> {
    check_pattern(k, r.len())?;
    let need_c = || c.filter(|c| *c > 0.0).ok_or_else(|| Error::Kernel(format!("{law:?} needs c > 0")));
    let single = || {
        let nz: Vec<usize> = (0..k.len()).filter(|&i| k[i] != 0).collect();
        (nz.len() == 1).then(|| nz[0])
    };
    let one_count = || {
        if counts.len() != 1 {
            return Err(Error::Pattern(format!("{law:?} takes a single count, got {}", counts.len())));
        }
        Ok(counts[0])
    };
    Ok(match law {
        Law::Poisson => {
            if k.len() != 1 {
                return Err(Error::Pattern("Poisson arrows are singletons".into()));
            }
            if k[0] == 1 {
                r[0]
            } else {
                0.0
            }
        }
        Law::EquiMultinomial | Law::EquiNegMultinomial => {
            let x = if counts.len() == 1 { counts[0] } else { counts.iter().sum() };
            if law == Law::EquiMultinomial && k.iter().sum::<i64>() > x {
                return Err(Error::Pattern(format!("pattern {k:?} exceeds count {x}")));
            }
            match single() {
                Some(i) if k[i] == 1 => {
                    let xi = if counts.len() == k.len() { counts[i] } else { x };
                    xi as f64 * r[i]
                }
                _ => 0.0,
            }
        }
        Law::DirichletMultinomial => {
            let c = need_c()?;
            let x = one_count()?;
            if k.iter().sum::<i64>() > x {
                return Err(Error::Pattern(format!("pattern {k:?} exceeds count {x}")));
            }
            match single() {
                Some(i) => {
                    let (x, ki) = (x as f64, k[i] as f64);
                    c * (ln_choose(x, ki) + ln_gamma(ki) - ln_rising(x - ki + c, ki)).exp() * r[i]
                }
                None => 0.0,
            }
        }
        Law::BetaBinomialShared => {
            let c = need_c()?;
            let r0 = check_rates_equal(r)?;
            if counts.len() != k.len() {
                return Err(Error::Pattern("shared laws take one count per member".into()));
            }
            if k.iter().zip(counts).any(|(ki, xi)| ki > xi) {
                return Err(Error::Pattern(format!("pattern {k:?} exceeds counts {counts:?}")));
            }
            let (sx, sk) = (counts.iter().sum::<i64>() as f64, k.iter().sum::<i64>() as f64);
            let lc: f64 = counts.iter().zip(k).map(|(&x, &ki)| ln_choose(x as f64, ki as f64)).sum();
            c * (lc + ln_gamma(sk) - ln_rising(sx - sk + c, sk)).exp() * r0
        }
        Law::DirichletNegMultinomial => {
            let c = need_c()?;
            let x = one_count()? as f64;
            match single() {
                Some(i) => {
                    let ki = k[i] as f64;
                    c * (ln_choose(x + ki - 1.0, ki) + ln_gamma(ki) - ln_rising(x + c, ki)).exp() * r[i]
                }
                None => 0.0,
            }
        }
        Law::BetaNegBinomialShared => {
            let c = need_c()?;
            let r0 = check_rates_equal(r)?;
            if counts.len() != k.len() {
                return Err(Error::Pattern("shared laws take one count per member".into()));
            }
            let (sx, sk) = (counts.iter().sum::<i64>() as f64, k.iter().sum::<i64>() as f64);
            let lc: f64 =
                counts.iter().zip(k).map(|(&x, &ki)| ln_choose(x as f64 + ki as f64 - 1.0, ki as f64)).sum();
            c * (lc + ln_gamma(sk) - ln_rising(sx + c, sk)).exp() * r0
        }
    })
}

/// Infinitesimal mean, variance and covariance rates of one group.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// Symmetric matrix of covariance rates with the variances on the diagonal.
    pub cov: Vec<Vec<f64>>,
}

/// Closed-form infinitesimal moments. Unbounded noisy laws need c > 2.
pub fn infinitesimal_moments(law: Law, counts: &[i64], c: Option<f64>, r: &[f64]) -> Result<Moments> {
    let m = r.len();
    let need_c = |min: f64| {
        c.filter(|c| *c > min).ok_or_else(|| Error::Kernel(format!("{law:?} moments need c > {min}")))
    };
    let count = |i: usize| if counts.len() == m { counts[i] as f64 } else { counts[0] as f64 };
    let mut mean = vec![0.0; m];
    let mut var = vec![0.0; m];
    let mut cov = vec![vec![0.0; m]; m];
    match law {
        Law::Poisson => {
            mean[0] = r[0];
            var[0] = r[0];
        }
        Law::EquiMultinomial | Law::EquiNegMultinomial => {
            for i in 0..m {
                mean[i] = count(i) * r[i];
                var[i] = mean[i];
            }
        }
        Law::DirichletMultinomial | Law::BetaBinomialShared => {
            let c = need_c(0.0)?;
            for i in 0..m {
                let x = count(i);
                mean[i] = x * r[i];
                var[i] = (1.0 + (x - 1.0) / (c + 1.0)) * x * r[i];
            }
            if law == Law::BetaBinomialShared {
                let r0 = check_rates_equal(r)?;
                for i in 0..m {
                    for j in 0..m {
                        if i != j {
                            cov[i][j] = count(i) * count(j) * r0 / (c + 1.0);
                        }
                    }
                }
            }
        }
        Law::DirichletNegMultinomial | Law::BetaNegBinomialShared => {
            let c = need_c(2.0)?;
            for i in 0..m {
                let x = count(i);
                mean[i] = x * r[i] * c / (c - 1.0);
                var[i] = x * x * r[i] * c / ((c - 1.0) * (c - 2.0)) + x * r[i] * c / (c - 2.0);
            }
            if law == Law::BetaNegBinomialShared {
                let r0 = check_rates_equal(r)?;
                for i in 0..m {
                    for j in 0..m {
                        if i != j {
                            cov[i][j] = count(i) * count(j) * c * r0 / ((c - 1.0) * (c - 2.0));
                        }
                    }
                }
            }
        }
    }
    for i in 0..m {
        cov[i][i] = var[i];
    }
    Ok(Moments { mean, var, cov })
}

/// Rate of exactly one transition event in the group: Σ_k q(k). For the
/// noisy laws this has the closed form c·(ψ(c + x) − ψ(c))·r summed over
/// members, with x the (summed) count.
pub fn leading_event_rate(law: Law, counts: &[i64], c: Option<f64>, r: &[f64]) -> Result<f64> {
    let m = r.len();
    Ok(match law {
        Law::Poisson => r[0],
        Law::EquiMultinomial | Law::EquiNegMultinomial => {
            (0..m).map(|i| if counts.len() == m { counts[i] } else { counts[0] } as f64 * r[i]).sum()
        }
        _ => {
            let c = c.filter(|c| *c > 0.0).ok_or_else(|| Error::Kernel(format!("{law:?} needs c > 0")))?;
            let (x, rate) = if law.is_shared() {
                (counts.iter().sum::<i64>() as f64, check_rates_equal(r)?)
            } else {
                (counts[0] as f64, r.iter().sum())
            };
            if x <= 0.0 {
                0.0
            } else {
                c * (digamma(c + x) - digamma(c)) * rate
            }
        }
    })
}
