//! Per-capita transition rates r(t, x): covariates, school-term forcing and a
//! small declarative expression language, plus their integrals over an Euler
//! step with the state frozen at the left endpoint.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::graph::DirectedGraph;
use crate::{Error, Result};

/// Calendar year length used to map model time (years) to day-of-year.
pub const DAYS_PER_YEAR: f64 = 365.25;

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    #[default]
    Linear,
    /// Value of the last grid point at or before t.
    Step,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovariateTable {
    grid: Vec<f64>,
    names: Vec<String>,
    series: Vec<Vec<f64>>,
    interp: Vec<Interpolation>,
}

impl CovariateTable {
    pub fn new(grid: Vec<f64>, columns: Vec<(String, Vec<f64>, Interpolation)>) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::Data("covariate grid is empty".into()));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) || grid.iter().any(|t| !t.is_finite()) {
            return Err(Error::Data("covariate grid must be finite and strictly increasing".into()));
        }
        let mut names = Vec::new();
        let mut series = Vec::new();
        let mut interp = Vec::new();
        for (name, values, i) in columns {
            if values.len() != grid.len() {
                return Err(Error::Data(format!(
                    "covariate '{name}' has {} values for {} grid points",
                    values.len(),
                    grid.len()
                )));
            }
            names.push(name);
            series.push(values);
            interp.push(i);
        }
        Ok(Self { grid, names, series, interp })
    }

    /// Reads `time,<name>...`; columns not listed in `interp` are linear.
    pub fn from_csv(path: &Path, interp: &BTreeMap<String, Interpolation>) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let headers = rdr.headers().map_err(|e| Error::Data(format!("{}: {e}", path.display())))?.clone();
        if headers.get(0) != Some("time") {
            return Err(Error::Data(format!("{}: first column must be 'time'", path.display())));
        }
        let mut grid = Vec::new();
        let mut cols: Vec<Vec<f64>> = vec![Vec::new(); headers.len() - 1];
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
            let parse = |s: &str| {
                s.trim().parse::<f64>().map_err(|e| Error::Data(format!("{}: '{s}': {e}", path.display())))
            };
            grid.push(parse(&rec[0])?);
            for (j, c) in cols.iter_mut().enumerate() {
                c.push(parse(&rec[j + 1])?);
            }
        }
        let columns = headers
            .iter()
            .skip(1)
            .zip(cols)
            .map(|(n, v)| (n.to_string(), v, interp.get(n).copied().unwrap_or_default()))
            .collect();
        Self::new(grid, columns)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn range(&self) -> (f64, f64) {
        (self.grid[0], *self.grid.last().unwrap())
    }

    pub fn eval(&self, col: usize, t: f64) -> Option<f64> {
        let g = &self.grid;
        let (lo, hi) = self.range();
        if !(t >= lo && t <= hi) {
            return None;
        }
        let y = &self.series[col];
        // Index of the last knot <= t.
        let i = g.partition_point(|&x| x <= t).saturating_sub(1);
        if i + 1 >= g.len() {
            return Some(y[g.len() - 1]);
        }
        Some(match self.interp[col] {
            Interpolation::Step => y[i],
            Interpolation::Linear => {
                let w = (t - g[i]) / (g[i + 1] - g[i]);
                y[i] + w * (y[i + 1] - y[i])
            }
        })
    }
}

/// All covariate tables of a model, addressed by column name.
#[derive(Debug, Clone, Default)]
pub struct CovariateSet {
    tables: Vec<CovariateTable>,
    lookup: BTreeMap<String, (usize, usize)>,
}

impl CovariateSet {
    pub fn new(tables: Vec<CovariateTable>) -> Result<Self> {
        let mut lookup = BTreeMap::new();
        for (ti, t) in tables.iter().enumerate() {
            for (ci, n) in t.names.iter().enumerate() {
                if lookup.insert(n.clone(), (ti, ci)).is_some() {
                    return Err(Error::Data(format!("covariate '{n}' defined twice")));
                }
            }
        }
        Ok(Self { tables, lookup })
    }

    pub fn column(&self, name: &str) -> Option<(usize, usize)> {
        self.lookup.get(name).copied()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.lookup.keys()
    }

    pub fn eval(&self, (ti, ci): (usize, usize), t: f64) -> Option<f64> {
        self.tables[ti].eval(ci, t)
    }

    pub fn range(&self, (ti, _): (usize, usize)) -> (f64, f64) {
        self.tables[ti].range()
    }

    fn grid(&self, (ti, _): (usize, usize)) -> &[f64] {
        &self.tables[ti].grid
    }

    fn name(&self, (ti, ci): (usize, usize)) -> &str {
        &self.tables[ti].names[ci]
    }
}

/// School-term day-of-year intervals `[start, end)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermCalendar {
    pub terms: Vec<TermInterval>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TermInterval {
    pub start_doy: f64,
    pub end_doy: f64,
}

impl Default for TermCalendar {
    /// England-style terms: 277 term days, so the term fraction is 277/365.25.
    fn default() -> Self {
        let t = |s, e| TermInterval { start_doy: s, end_doy: e };
        Self { terms: vec![t(7.0, 101.0), t(115.0, 200.0), t(252.0, 301.0), t(308.0, 357.0)] }
    }
}

impl TermCalendar {
    pub fn validate(&self) -> Result<()> {
        let mut prev = 0.0;
        for iv in &self.terms {
            if !(iv.start_doy >= prev && iv.end_doy > iv.start_doy && iv.end_doy <= DAYS_PER_YEAR) {
                return Err(Error::Config("term calendar intervals must be ordered, disjoint and within one year".into()));
            }
            prev = iv.end_doy;
        }
        Ok(())
    }

    pub fn from_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let terms: Vec<TermInterval> =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let cal = Self { terms };
        cal.validate()?;
        Ok(cal)
    }

    pub fn day_of_year(t: f64) -> f64 {
        (t - t.floor()) * DAYS_PER_YEAR
    }

    pub fn in_term(&self, t: f64) -> bool {
        let d = Self::day_of_year(t);
        self.terms.iter().any(|iv| d >= iv.start_doy && d < iv.end_doy)
    }

    pub fn term_fraction(&self) -> f64 {
        self.terms.iter().map(|iv| iv.end_doy - iv.start_doy).sum::<f64>() / DAYS_PER_YEAR
    }

    /// Term switch instants strictly inside (a, b).
    pub fn boundaries(&self, a: f64, b: f64, out: &mut Vec<f64>) {
        let mut year = a.floor();
        while year < b {
            for iv in &self.terms {
                for d in [iv.start_doy, iv.end_doy] {
                    let s = year + d / DAYS_PER_YEAR;
                    if s > a && s < b {
                        out.push(s);
                    }
                }
            }
            year += 1.0;
        }
    }
}

/// How the holiday effect θ_a enters β(t).
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum SeasonalityConvention {
    /// (1 + 2(1−p)θ_a)β̄ in term, (1 − 2pθ_a)β̄ in vacation.
    #[default]
    Symmetric,
    /// (1 + θ_a(1−p)/p)β̄ in term, (1 − θ_a)β̄ in vacation, as in pomp's He10
    /// model. Equivalent to the symmetric form with θ_a replaced by θ_a/(2p).
    Pomp,
}

impl SeasonalityConvention {
    pub fn multipliers(self, p: f64, theta_a: f64) -> (f64, f64) {
        match self {
            Self::Symmetric => (1.0 + 2.0 * (1.0 - p) * theta_a, 1.0 - 2.0 * p * theta_a),
            Self::Pomp => (1.0 + theta_a * (1.0 - p) / p, 1.0 - theta_a),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeasonalForcing {
    pub calendar: TermCalendar,
    pub p: f64,
    pub theta_a: f64,
    pub beta_bar: f64,
    pub convention: SeasonalityConvention,
}

impl SeasonalForcing {
    pub fn new(calendar: TermCalendar, p: f64, theta_a: f64, beta_bar: f64, convention: SeasonalityConvention) -> Result<Self> {
        calendar.validate()?;
        if !(p > 0.0 && p < 1.0) || !(theta_a >= 0.0) || !(beta_bar > 0.0) {
            return Err(Error::Config(format!("invalid forcing p={p} theta_a={theta_a} beta_bar={beta_bar}")));
        }
        if convention.multipliers(p, theta_a).1 <= 0.0 {
            return Err(Error::Config(format!("holiday transmission is not positive for theta_a={theta_a}")));
        }
        Ok(Self { calendar, p, theta_a, beta_bar, convention })
    }

    pub fn beta(&self, t: f64) -> f64 {
        let (term, vac) = self.convention.multipliers(self.p, self.theta_a);
        self.beta_bar * if self.calendar.in_term(t) { term } else { vac }
    }
}

/// Declarative rate expression, as found in model files.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RateExpr {
    Const {
        value: f64,
    },
    Param {
        name: String,
    },
    Covariate {
        name: String,
        /// Read the covariate at t − lag.
        #[serde(default)]
        lag: f64,
    },
    Count {
        vertex: String,
    },
    Time,
    Sum {
        terms: Vec<RateExpr>,
    },
    Product {
        factors: Vec<RateExpr>,
    },
    Quotient {
        num: Box<RateExpr>,
        den: Box<RateExpr>,
    },
    Power {
        base: Box<RateExpr>,
        exponent: Box<RateExpr>,
    },
    Exp {
        arg: Box<RateExpr>,
    },
    Expm1 {
        arg: Box<RateExpr>,
    },
    /// β(t) with mean `mean` and holiday effect `amplitude`.
    TermTime {
        mean: Box<RateExpr>,
        amplitude: Box<RateExpr>,
        p: f64,
        #[serde(default)]
        convention: SeasonalityConvention,
    },
    /// β(t)(x_I + ι)^α / N(t).
    ForceOfInfection {
        beta: Box<RateExpr>,
        infectious: String,
        iota: Box<RateExpr>,
        alpha: Box<RateExpr>,
        population: Box<RateExpr>,
    },
    /// Recruitment where a fraction `cohort` of each year's births arrives at
    /// once on the admission day and the rest arrive continuously. Only
    /// allowed as the top-level expression of an arrow.
    CohortBirths {
        births: Box<RateExpr>,
        cohort: Box<RateExpr>,
        #[serde(default = "default_admission_doy")]
        admission_doy: f64,
    },
}

fn default_admission_doy() -> f64 {
    251.0
}

impl RateExpr {
    pub fn constant(value: f64) -> Self {
        Self::Const { value }
    }

    pub fn param(name: &str) -> Self {
        Self::Param { name: name.into() }
    }

    pub fn covariate(name: &str) -> Self {
        Self::Covariate { name: name.into(), lag: 0.0 }
    }

    pub fn count(vertex: &str) -> Self {
        Self::Count { vertex: vertex.into() }
    }

    pub fn product(factors: Vec<RateExpr>) -> Self {
        Self::Product { factors }
    }

    pub fn sum(terms: Vec<RateExpr>) -> Self {
        Self::Sum { terms }
    }

    pub fn quotient(num: RateExpr, den: RateExpr) -> Self {
        Self::Quotient { num: Box::new(num), den: Box::new(den) }
    }
}

#[derive(Debug, Clone)]
enum Node {
    Const(f64),
    Param(usize),
    Covariate { col: (usize, usize), lag: f64 },
    Count(usize),
    Time,
    Sum(Vec<Node>),
    Product(Vec<Node>),
    Quotient(Box<Node>, Box<Node>),
    Power(Box<Node>, Box<Node>),
    Exp(Box<Node>),
    Expm1(Box<Node>),
    TermTime { mean: Box<Node>, amplitude: Box<Node>, p: f64, convention: SeasonalityConvention },
    Foi { beta: Box<Node>, infectious: usize, iota: Box<Node>, alpha: Box<Node>, population: Box<Node> },
}

/// Everything an expression may read besides parameters and counts.
#[derive(Debug, Clone, Default)]
pub struct RateEnv {
    pub covariates: CovariateSet,
    pub calendar: TermCalendar,
}

struct Ctx<'a> {
    env: &'a RateEnv,
    params: &'a [f64],
    counts: &'a [i64],
}

#[derive(Default)]
struct Usage {
    terms: bool,
    time: bool,
    covariates: Vec<((usize, usize), f64)>,
}

impl Node {
    fn compile(e: &RateExpr, g: &DirectedGraph, params: &[String], env: &RateEnv, used: &mut Usage) -> Result<Node> {
        let mut rec = |e: &RateExpr| Node::compile(e, g, params, env, used).map(Box::new);
        Ok(match e {
            RateExpr::Const { value } => Node::Const(*value),
            RateExpr::Param { name } => Node::Param(
                params
                    .iter()
                    .position(|p| p == name)
                    .ok_or_else(|| Error::Param(format!("rate expression uses unknown parameter '{name}'")))?,
            ),
            RateExpr::Covariate { name, lag } => {
                let col = env
                    .covariates
                    .column(name)
                    .ok_or_else(|| Error::Data(format!("rate expression uses unknown covariate '{name}'")))?;
                Node::Covariate { col, lag: *lag }
            }
            RateExpr::Count { vertex } => Node::Count(g.require_vertex(vertex)?),
            RateExpr::Time => Node::Time,
            RateExpr::Sum { terms } => {
                Node::Sum(terms.iter().map(|t| rec(t).map(|b| *b)).collect::<Result<_>>()?)
            }
            RateExpr::Product { factors } => {
                Node::Product(factors.iter().map(|t| rec(t).map(|b| *b)).collect::<Result<_>>()?)
            }
            RateExpr::Quotient { num, den } => Node::Quotient(rec(num)?, rec(den)?),
            RateExpr::Power { base, exponent } => Node::Power(rec(base)?, rec(exponent)?),
            RateExpr::Exp { arg } => Node::Exp(rec(arg)?),
            RateExpr::Expm1 { arg } => Node::Expm1(rec(arg)?),
            RateExpr::TermTime { mean, amplitude, p, convention } => {
                if !(*p > 0.0 && *p < 1.0) {
                    return Err(Error::Config(format!("term fraction p={p} outside (0,1)")));
                }
                Node::TermTime { mean: rec(mean)?, amplitude: rec(amplitude)?, p: *p, convention: *convention }
            }
            RateExpr::ForceOfInfection { beta, infectious, iota, alpha, population } => Node::Foi {
                beta: rec(beta)?,
                infectious: g.require_vertex(infectious)?,
                iota: rec(iota)?,
                alpha: rec(alpha)?,
                population: rec(population)?,
            },
            RateExpr::CohortBirths { .. } => {
                return Err(Error::Config("cohort_births must be the top-level rate expression".into()))
            }
        })
        .inspect(|n| match n {
            Node::TermTime { .. } => used.terms = true,
            Node::Time => used.time = true,
            Node::Covariate { col, lag } => used.covariates.push((*col, *lag)),
            _ => {}
        })
    }

    fn eval(&self, t: f64, cx: &Ctx) -> std::result::Result<f64, (String, f64)> {
        Ok(match self {
            Node::Const(v) => *v,
            Node::Param(i) => cx.params[*i],
            Node::Covariate { col, lag } => match cx.env.covariates.eval(*col, t - lag) {
                Some(v) => v,
                None => return Err((cx.env.covariates.name(*col).to_string(), t - lag)),
            },
            Node::Count(v) => cx.counts[*v] as f64,
            Node::Time => t,
            Node::Sum(xs) => {
                let mut s = 0.0;
                for x in xs {
                    s += x.eval(t, cx)?;
                }
                s
            }
            Node::Product(xs) => {
                let mut s = 1.0;
                for x in xs {
                    s *= x.eval(t, cx)?;
                }
                s
            }
            Node::Quotient(a, b) => a.eval(t, cx)? / b.eval(t, cx)?,
            Node::Power(a, b) => a.eval(t, cx)?.powf(b.eval(t, cx)?),
            Node::Exp(a) => a.eval(t, cx)?.exp(),
            Node::Expm1(a) => a.eval(t, cx)?.exp_m1(),
            Node::TermTime { mean, amplitude, p, convention } => {
                let (term, vac) = convention.multipliers(*p, amplitude.eval(t, cx)?);
                mean.eval(t, cx)? * if cx.env.calendar.in_term(t) { term } else { vac }
            }
            Node::Foi { beta, infectious, iota, alpha, population } => {
                let x = cx.counts[*infectious] as f64 + iota.eval(t, cx)?;
                beta.eval(t, cx)? * x.powf(alpha.eval(t, cx)?) / population.eval(t, cx)?
            }
        })
    }
}

#[derive(Debug, Clone)]
struct CompiledRate {
    cont: Node,
    /// Impulse mass evaluated at the admission instant, and its day of year.
    impulse: Option<(Node, f64)>,
    time_dependent: bool,
    uses_terms: bool,
    covariates: Vec<((usize, usize), f64)>,
}

/// Compiled per-arrow rate expressions together with their environment.
#[derive(Debug, Clone)]
pub struct RateSpec {
    rates: Vec<CompiledRate>,
    arrow_ids: Vec<String>,
    env: RateEnv,
}

const GL2: f64 = 0.577_350_269_189_625_8; // 1/sqrt(3)

impl RateSpec {
    pub fn compile(
        g: &DirectedGraph,
        exprs: &BTreeMap<String, RateExpr>,
        params: &[String],
        env: RateEnv,
    ) -> Result<Self> {
        for id in exprs.keys() {
            g.require_arrow(id)?;
        }
        env.calendar.validate()?;
        let mut rates = Vec::with_capacity(g.n_arrows());
        for id in g.arrow_ids() {
            let e = exprs.get(id).ok_or_else(|| Error::Rate { arrow: id.clone(), msg: "no rate expression".into() })?;
            let mut used = Usage::default();
            let (cont, impulse) = match e {
                RateExpr::CohortBirths { births, cohort, admission_doy } => {
                    if !(0.0..DAYS_PER_YEAR).contains(admission_doy) {
                        return Err(Error::Config(format!("admission day {admission_doy} outside the year")));
                    }
                    let b = Node::compile(births, g, params, &env, &mut used)?;
                    let c = Node::compile(cohort, g, params, &env, &mut used)?;
                    let cont = Node::Product(vec![
                        b.clone(),
                        Node::Sum(vec![Node::Const(1.0), Node::Product(vec![Node::Const(-1.0), c.clone()])]),
                    ]);
                    (cont, Some((Node::Product(vec![b, c]), *admission_doy)))
                }
                other => (Node::compile(other, g, params, &env, &mut used)?, None),
            };
            let time_dependent = used.terms || used.time || !used.covariates.is_empty();
            rates.push(CompiledRate {
                cont,
                impulse,
                time_dependent,
                uses_terms: used.terms,
                covariates: used.covariates,
            });
        }
        Ok(Self { rates, arrow_ids: g.arrow_ids().to_vec(), env })
    }

    pub fn env(&self) -> &RateEnv {
        &self.env
    }

    /// Interval of t on which every covariate read is defined.
    pub fn time_domain(&self) -> (f64, f64) {
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        for r in &self.rates {
            for &(col, lag) in &r.covariates {
                let (a, b) = self.env.covariates.range(col);
                lo = lo.max(a + lag);
                hi = hi.min(b + lag);
            }
        }
        (lo, hi)
    }

    fn check(&self, arrow: usize, v: std::result::Result<f64, (String, f64)>) -> Result<f64> {
        match v {
            Ok(v) if v >= 0.0 && v.is_finite() => Ok(v),
            Ok(v) => Err(Error::Rate { arrow: self.arrow_ids[arrow].clone(), msg: format!("evaluated to {v}") }),
            Err((name, t)) => Err(Error::CovariateRange { name, t }),
        }
    }

    /// r(t, x) for one arrow. Impulses contribute only to integrals.
    pub fn eval_rate(&self, arrow: usize, t: f64, counts: &[i64], params: &[f64]) -> Result<f64> {
        let cx = Ctx { env: &self.env, params, counts };
        self.check(arrow, self.rates[arrow].cont.eval(t, &cx))
    }

    /// ∫_t^{t+h} r(s, x) ds with x frozen. Exact for rates that are piecewise
    /// linear in s between term boundaries and covariate knots; other smooth
    /// pieces get two-point Gauss-Legendre.
    pub fn integrate_rate(&self, arrow: usize, t: f64, h: f64, counts: &[i64], params: &[f64]) -> Result<f64> {
        if h < 0.0 {
            return Err(Error::Plan(format!("negative step {h}")));
        }
        if h == 0.0 {
            return Ok(0.0);
        }
        let r = &self.rates[arrow];
        let cx = Ctx { env: &self.env, params, counts };
        let mut total = if !r.time_dependent {
            self.check(arrow, r.cont.eval(t, &cx))? * h
        } else {
            let mut cuts: Vec<f64> = Vec::new();
            if r.uses_terms {
                self.env.calendar.boundaries(t, t + h, &mut cuts);
            }
            for &(col, lag) in &r.covariates {
                let grid = self.env.covariates.grid(col);
                let start = grid.partition_point(|&k| k + lag <= t);
                for &k in &grid[start..] {
                    if k + lag >= t + h {
                        break;
                    }
                    cuts.push(k + lag);
                }
            }
            cuts.sort_by(f64::total_cmp);
            cuts.dedup();
            let mut acc = 0.0;
            let mut a = t;
            for b in cuts.into_iter().chain(std::iter::once(t + h)) {
                let (m, half) = (0.5 * (a + b), 0.5 * (b - a));
                let f1 = self.check(arrow, r.cont.eval(m - half * GL2, &cx))?;
                let f2 = self.check(arrow, r.cont.eval(m + half * GL2, &cx))?;
                acc += half * (f1 + f2);
                a = b;
            }
            acc
        };
        if let Some((mass, doy)) = &r.impulse {
            let mut year = t.floor();
            while year < t + h {
                let s = year + doy / DAYS_PER_YEAR;
                if s >= t && s < t + h {
                    total += self.check(arrow, mass.eval(s, &cx))?;
                }
                year += 1.0;
            }
        }
        Ok(total)
    }
}
