//! Model files and their compiled form.
//!
//! A model file bundles the graph, the group policy with a step law per
//! group, the rate expressions, parameter defaults, covariates, the term
//! calendar, the initial state and an optional observation model. Compiling
//! it yields a [`Model`] whose `step` advances one Euler step.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::graph::{
    partition_arrow_groups, ArrowGroup, DirectedGraph, GraphSpec, GroupKind, GroupSpec, SystemState, VertexMode,
};
use crate::inference::measurement::MeasurementModel;
use crate::kernels::{self, DrawStats, Law};
use crate::rates::{CovariateSet, CovariateTable, Interpolation, RateEnv, RateExpr, RateSpec, TermCalendar, TermInterval};
use crate::{Error, Result};

/// A literal value or the name of a parameter (or, where noted, a covariate).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum Scalar {
    Value(f64),
    Name(String),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelGroupSpec {
    pub kind: GroupKind,
    pub members: Vec<String>,
    /// Defaults to the equi-dispersed law of the group's family.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub law: Option<Law>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<Scalar>,
}

/// Covariates from a CSV file (`time,<name>...`) or given inline.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
pub struct CovariateSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub columns: Option<BTreeMap<String, Vec<f64>>>,
    #[serde(default)]
    pub interpolation: BTreeMap<String, Interpolation>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum CalendarSource {
    Inline(Vec<TermInterval>),
    Path(PathBuf),
}

/// Initial state: explicit counts, fractions of a population, or both (the
/// explicit counts then cover the vertices not listed in `fractions`).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
pub struct InitSpec {
    pub time: f64,
    #[serde(default)]
    pub counts: BTreeMap<String, i64>,
    #[serde(default)]
    pub fractions: BTreeMap<String, Scalar>,
    /// Population size: a number, a parameter or a covariate read at `time`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub population: Option<Scalar>,
}

fn default_tol() -> f64 {
    1e-18
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ObservationSpec {
    /// Arrow whose flow between observation times is the true incidence.
    pub incidence_arrow: String,
    pub rho: Scalar,
    pub psi: Scalar,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelSpec {
    pub graph: GraphSpec,
    #[serde(default)]
    pub groups: Vec<ModelGroupSpec>,
    pub rates: BTreeMap<String, RateExpr>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default)]
    pub covariates: Vec<CovariateSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calendar: Option<CalendarSource>,
    pub init: InitSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation: Option<ObservationSpec>,
    /// Directory that relative paths resolve against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl ModelSpec {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut spec: ModelSpec =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        spec.base_dir = path.parent().map(Path::to_path_buf);
        Ok(spec)
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        match &self.base_dir {
            Some(d) if p.is_relative() => d.join(p),
            _ => p.to_path_buf(),
        }
    }

    /// Same model with every law replaced by its equi-dispersed counterpart.
    pub fn equi_variant(&self) -> ModelSpec {
        let mut s = self.clone();
        for g in &mut s.groups {
            g.law = g.law.map(Law::equi);
            g.c = None;
        }
        s
    }

    pub fn compile(&self) -> Result<Model> {
        Model::compile(self.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Value {
    Fixed(f64),
    Param(usize),
}

impl Value {
    fn get(self, params: &[f64]) -> f64 {
        match self {
            Value::Fixed(v) => v,
            Value::Param(i) => params[i],
        }
    }
}

/// One independently sampled block of arrows.
#[derive(Debug, Clone)]
struct Unit {
    law: Law,
    c: Option<Value>,
    members: Vec<usize>,
    /// Tail (bounded stars), head (unbounded stars), or one vertex per
    /// member (shared laws) whose count drives the draw.
    anchors: Vec<usize>,
}

#[derive(Debug, Clone)]
enum PopulationRef {
    Value(Value),
    Covariate((usize, usize)),
}

#[derive(Debug, Clone)]
pub struct Observation {
    pub arrow: usize,
    rho: Value,
    psi: Value,
    tol: f64,
}

impl Observation {
    pub fn measurement(&self, params: &[f64]) -> MeasurementModel {
        MeasurementModel { rho: self.rho.get(params), psi: self.psi.get(params), tol: self.tol }
    }
}

/// Reusable buffers for `Model::step`.
#[derive(Debug, Default, Clone)]
pub struct Scratch {
    deltas: Vec<i64>,
    hazards: Vec<f64>,
    rates: Vec<f64>,
    counts: Vec<i64>,
}

#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    graph: DirectedGraph,
    groups: Vec<ArrowGroup>,
    group_laws: Vec<(Law, Option<Value>)>,
    units: Vec<Unit>,
    rates: RateSpec,
    param_names: Vec<String>,
    defaults: Vec<f64>,
    modes: Vec<VertexMode>,
    init_counts: Vec<i64>,
    init_fractions: Vec<(usize, Value)>,
    population: Option<PopulationRef>,
    observation: Option<Observation>,
    hash: String,
}

fn value_of(s: &Scalar, names: &[String], what: &str) -> Result<Value> {
    match s {
        Scalar::Value(v) => Ok(Value::Fixed(*v)),
        Scalar::Name(n) => names
            .iter()
            .position(|p| p == n)
            .map(Value::Param)
            .ok_or_else(|| Error::Param(format!("{what} refers to unknown parameter '{n}'"))),
    }
}

impl Model {
    pub fn compile(spec: ModelSpec) -> Result<Self> {
        let graph = DirectedGraph::build(&spec.graph)?;
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_vec(&spec).expect("model spec serializes"));

        let param_names: Vec<String> = spec.params.keys().cloned().collect();
        let defaults: Vec<f64> = spec.params.values().copied().collect();

        let mut tables = Vec::new();
        for src in &spec.covariates {
            let table = match (&src.path, &src.time, &src.columns) {
                (Some(p), None, None) => {
                    let p = spec.resolve(p);
                    let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
                    hasher.update(&bytes);
                    CovariateTable::from_csv(&p, &src.interpolation)?
                }
                (None, Some(t), Some(cols)) => CovariateTable::new(
                    t.clone(),
                    cols.iter()
                        .map(|(n, v)| (n.clone(), v.clone(), src.interpolation.get(n).copied().unwrap_or_default()))
                        .collect(),
                )?,
                _ => return Err(Error::Config("a covariate source needs either `path` or `time` with `columns`".into())),
            };
            tables.push(table);
        }
        let calendar = match &spec.calendar {
            None => TermCalendar::default(),
            Some(CalendarSource::Inline(terms)) => TermCalendar { terms: terms.clone() },
            Some(CalendarSource::Path(p)) => {
                let p = spec.resolve(p);
                let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
                hasher.update(&bytes);
                TermCalendar::from_json(&p)?
            }
        };
        let env = RateEnv { covariates: CovariateSet::new(tables)?, calendar };
        let rates = RateSpec::compile(&graph, &spec.rates, &param_names, env)?;

        let policy: Vec<GroupSpec> =
            spec.groups.iter().map(|g| GroupSpec { kind: g.kind, members: g.members.clone() }).collect();
        let groups = partition_arrow_groups(&graph, &policy)?;
        let mut group_laws = Vec::with_capacity(groups.len());
        for (gi, grp) in groups.iter().enumerate() {
            let declared = spec.groups.get(gi);
            let law = match declared.and_then(|d| d.law) {
                Some(l) => l,
                None => match grp.kind {
                    GroupKind::IncomingStar | GroupKind::ColorMatchedUnbounded => Law::EquiNegMultinomial,
                    _ => Law::EquiMultinomial,
                },
            };
            if !law.compatible_with(grp.kind) {
                return Err(Error::Group(format!("law {law:?} cannot drive a {:?} group", grp.kind)));
            }
            let c = match declared.and_then(|d| d.c.as_ref()) {
                Some(s) if law.needs_c() => Some(value_of(s, &param_names, "group c")?),
                Some(_) => None,
                None if law.needs_c() => {
                    return Err(Error::Group(format!("law {law:?} needs an inverse-noise parameter c")));
                }
                None => None,
            };
            if let Some(Value::Fixed(v)) = c {
                kernels::KernelSpec::new(law, Some(v))?;
            }
            group_laws.push((law, c));
        }

        let units = Self::build_units(&graph, &groups, &group_laws)?;
        let mut arrow_law = vec![Law::Poisson; graph.n_arrows()];
        for u in &units {
            for &a in &u.members {
                arrow_law[a] = u.law;
            }
        }
        let modes: Vec<VertexMode> = (0..graph.n_vertices())
            .map(|v| {
                let out = graph.out_arrows(v);
                if out.is_empty() {
                    VertexMode::Unbounded
                } else if out.iter().all(|&a| arrow_law[a] == Law::Poisson) {
                    VertexMode::Reservoir
                } else if out.iter().all(|&a| arrow_law[a].is_bounded()) {
                    VertexMode::Bounded
                } else {
                    VertexMode::Unbounded
                }
            })
            .collect();

        let mut init_counts = vec![0; graph.n_vertices()];
        for (id, &c) in &spec.init.counts {
            if c < 0 {
                return Err(Error::Config(format!("initial count of {id} is negative")));
            }
            init_counts[graph.require_vertex(id)?] = c;
        }
        let mut init_fractions = Vec::new();
        for (id, s) in &spec.init.fractions {
            init_fractions.push((graph.require_vertex(id)?, value_of(s, &param_names, "initial fraction")?));
        }
        let population = match &spec.init.population {
            None if !init_fractions.is_empty() => {
                return Err(Error::Config("initial fractions need a population".into()));
            }
            None => None,
            Some(Scalar::Value(v)) => Some(PopulationRef::Value(Value::Fixed(*v))),
            Some(Scalar::Name(n)) => match value_of(&Scalar::Name(n.clone()), &param_names, "population") {
                Ok(v) => Some(PopulationRef::Value(v)),
                Err(_) => Some(PopulationRef::Covariate(rates.env().covariates.column(n).ok_or_else(|| {
                    Error::Config(format!("population '{n}' is neither a parameter nor a covariate"))
                })?)),
            },
        };

        let observation = match &spec.observation {
            None => None,
            Some(o) => Some(Observation {
                arrow: graph.require_arrow(&o.incidence_arrow)?,
                rho: value_of(&o.rho, &param_names, "rho")?,
                psi: value_of(&o.psi, &param_names, "psi")?,
                tol: o.tol,
            }),
        };

        let hash = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
        Ok(Self {
            spec,
            graph,
            groups,
            group_laws,
            units,
            rates,
            param_names,
            defaults,
            modes,
            init_counts,
            init_fractions,
            population,
            observation,
            hash,
        })
    }

    fn build_units(g: &DirectedGraph, groups: &[ArrowGroup], laws: &[(Law, Option<Value>)]) -> Result<Vec<Unit>> {
        let mut units: Vec<Unit> = Vec::new();
        // Equi bounded single arrows, fused per tail into one multinomial.
        let mut equi_by_tail: BTreeMap<usize, usize> = BTreeMap::new();
        for (grp, &(law, c)) in groups.iter().zip(laws) {
            let ends: Vec<(usize, usize)> = grp.members.iter().map(|&a| g.endpoints(a)).collect();
            match law {
                Law::Poisson => {
                    if !g.is_source(ends[0].0) {
                        return Err(Error::Group(format!(
                            "Poisson arrow {} must leave a source vertex",
                            g.arrow_ids()[grp.members[0]]
                        )));
                    }
                    units.push(Unit { law, c, members: grp.members.clone(), anchors: vec![] });
                }
                Law::EquiMultinomial if grp.kind != GroupKind::OutgoingStar => {
                    for (&a, &(t, _)) in grp.members.iter().zip(&ends) {
                        match equi_by_tail.get(&t) {
                            Some(&ui) => units[ui].members.push(a),
                            None => {
                                equi_by_tail.insert(t, units.len());
                                units.push(Unit { law, c: None, members: vec![a], anchors: vec![t] });
                            }
                        }
                    }
                }
                Law::EquiMultinomial | Law::DirichletMultinomial => {
                    units.push(Unit { law, c, members: grp.members.clone(), anchors: vec![ends[0].0] });
                }
                Law::BetaBinomialShared => {
                    units.push(Unit { law, c, members: grp.members.clone(), anchors: ends.iter().map(|e| e.0).collect() });
                }
                Law::EquiNegMultinomial if grp.kind != GroupKind::IncomingStar => {
                    for (&a, &(_, h)) in grp.members.iter().zip(&ends) {
                        units.push(Unit { law, c: None, members: vec![a], anchors: vec![h] });
                    }
                }
                Law::EquiNegMultinomial | Law::DirichletNegMultinomial => {
                    units.push(Unit { law, c, members: grp.members.clone(), anchors: vec![ends[0].1] });
                }
                Law::BetaNegBinomialShared => {
                    units.push(Unit { law, c, members: grp.members.clone(), anchors: ends.iter().map(|e| e.1).collect() });
                }
            }
        }
        // Each vertex may feed at most one bounded unit.
        let mut owner: Vec<Option<usize>> = vec![None; g.n_vertices()];
        for (ui, u) in units.iter().enumerate() {
            if !u.law.is_bounded() {
                continue;
            }
            for &a in &u.members {
                let t = g.endpoints(a).0;
                match owner[t] {
                    Some(o) if o != ui => {
                        return Err(Error::Group(format!(
                            "vertex {} feeds two bounded groups; put its outgoing arrows in one star",
                            g.vertex_ids()[t]
                        )));
                    }
                    _ => owner[t] = Some(ui),
                }
            }
        }
        Ok(units)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn graph(&self) -> &DirectedGraph {
        &self.graph
    }

    pub fn groups(&self) -> &[ArrowGroup] {
        &self.groups
    }

    /// Law and resolved c of each group in `groups()` order.
    pub fn group_kernel(&self, gi: usize, params: &[f64]) -> (Law, Option<f64>) {
        let (law, c) = self.group_laws[gi];
        (law, c.map(|c| c.get(params)))
    }

    pub fn rates(&self) -> &RateSpec {
        &self.rates
    }

    pub fn param_names(&self) -> &[String] {
        &self.param_names
    }

    pub fn default_params(&self) -> &[f64] {
        &self.defaults
    }

    pub fn param_index(&self, name: &str) -> Result<usize> {
        self.param_names.iter().position(|p| p == name).ok_or_else(|| Error::Param(format!("unknown parameter '{name}'")))
    }

    /// Defaults overridden by `values`; unknown names are an error.
    pub fn params_from(&self, values: &BTreeMap<String, f64>) -> Result<Vec<f64>> {
        let mut p = self.defaults.clone();
        for (k, v) in values {
            p[self.param_index(k)?] = *v;
        }
        Ok(p)
    }

    pub fn modes(&self) -> &[VertexMode] {
        &self.modes
    }

    pub fn observation(&self) -> Option<&Observation> {
        self.observation.as_ref()
    }

    /// sha256 over the model file and every data file it reads.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn t0(&self) -> f64 {
        self.spec.init.time
    }

    /// X(t0): explicit counts, plus round(N·f_v/Σf) for fractional vertices.
    pub fn initial_state(&self, params: &[f64]) -> Result<SystemState> {
        let mut counts = self.init_counts.clone();
        if !self.init_fractions.is_empty() {
            let t0 = self.t0();
            let pop = match self.population.as_ref().expect("checked at compile") {
                PopulationRef::Value(v) => v.get(params),
                PopulationRef::Covariate(col) => self.rates.env().covariates.eval(*col, t0).ok_or_else(|| {
                    Error::CovariateRange { name: "population".into(), t: t0 }
                })?,
            };
            let fr: Vec<f64> = self.init_fractions.iter().map(|(_, v)| v.get(params)).collect();
            let total: f64 = fr.iter().sum();
            if !(total > 0.0) || fr.iter().any(|f| !(*f >= 0.0)) || !(pop >= 0.0) {
                return Err(Error::Param(format!("invalid initial fractions {fr:?} or population {pop}")));
            }
            for (&(v, _), f) in self.init_fractions.iter().zip(&fr) {
                counts[v] = (pop * f / total).round() as i64;
            }
        }
        SystemState::new(&self.graph, self.t0(), counts)
    }

    /// One Euler step of length h from `state`. Every unit reads the same
    /// frozen counts; increments are applied together at the end.
    pub fn step<R: Rng + ?Sized>(
        &self,
        state: &mut SystemState,
        h: f64,
        params: &[f64],
        rng: &mut R,
        stats: &mut DrawStats,
        scratch: &mut Scratch,
    ) -> Result<()> {
        let t = state.time;
        scratch.deltas.clear();
        scratch.deltas.resize(self.graph.n_arrows(), 0);
        for u in &self.units {
            scratch.hazards.clear();
            for &a in &u.members {
                scratch.hazards.push(self.rates.integrate_rate(a, t, h, &state.counts, params)?);
            }
            let c = u.c.map(|c| c.get(params));
            let c_or = || c.ok_or_else(|| Error::Kernel(format!("{:?} without c", u.law)));
            let x = |v: usize| state.counts[v];
            match u.law {
                Law::Poisson => {
                    scratch.deltas[u.members[0]] = kernels::poisson(scratch.hazards[0], rng);
                }
                Law::EquiMultinomial | Law::DirichletMultinomial | Law::EquiNegMultinomial | Law::DirichletNegMultinomial => {
                    scratch.rates.clear();
                    if u.members.len() > 1 {
                        for &a in &u.members {
                            scratch.rates.push(self.rates.eval_rate(a, t, &state.counts, params)?);
                        }
                    } else {
                        scratch.rates.push(scratch.hazards[0]);
                    }
                    let sp = kernels::step_probs_split(&scratch.hazards, &scratch.rates)?;
                    let n = x(u.anchors[0]);
                    let draw = match u.law {
                        Law::DirichletMultinomial => kernels::sample_bounded_star(n, &sp, c_or()?, rng)?,
                        Law::DirichletNegMultinomial => kernels::sample_unbounded_star(n, &sp, c_or()?, rng, stats)?,
                        law => kernels::sample_equi_step(law, n, &sp, rng)?,
                    };
                    let off = if u.law.is_bounded() { 1 } else { 0 };
                    for (i, &a) in u.members.iter().enumerate() {
                        scratch.deltas[a] = draw[i + off];
                    }
                }
                Law::BetaBinomialShared | Law::BetaNegBinomialShared => {
                    let h0 = scratch.hazards[0];
                    if scratch.hazards.iter().any(|&hz| (hz - h0).abs() > 1e-9 * h0.abs().max(1e-300)) {
                        return Err(Error::Rate {
                            arrow: self.graph.arrow_ids()[u.members[0]].clone(),
                            msg: format!("shared-beta members need equal hazards, got {:?}", scratch.hazards),
                        });
                    }
                    scratch.counts.clear();
                    scratch.counts.extend(u.anchors.iter().map(|&v| x(v)));
                    let draw = if u.law == Law::BetaBinomialShared {
                        kernels::sample_shared_beta_bounded(&scratch.counts, h0, c_or()?, rng)?
                    } else {
                        kernels::sample_shared_beta_unbounded(&scratch.counts, h0, c_or()?, rng, stats)?
                    };
                    for (i, &a) in u.members.iter().enumerate() {
                        scratch.deltas[a] = draw[i];
                    }
                }
            }
        }
        state.apply_increments_mut(&self.graph, &scratch.deltas, &self.modes)?;
        state.time = t + h;
        Ok(())
    }

    /// Advances from `state.time` to `t_end` in equal steps no longer than
    /// `dt`. The step count is ceil((t_end − t)/dt) up to rounding.
    pub fn advance<R: Rng + ?Sized>(
        &self,
        state: &mut SystemState,
        t_end: f64,
        dt: f64,
        params: &[f64],
        rng: &mut R,
        stats: &mut DrawStats,
        scratch: &mut Scratch,
    ) -> Result<()> {
        let t_start = state.time;
        let span = t_end - t_start;
        if span < 0.0 || !(dt > 0.0) {
            return Err(Error::Plan(format!("cannot advance from {t_start} to {t_end} with dt {dt}")));
        }
        if span == 0.0 {
            return Ok(());
        }
        let n = ((span / dt) - 1e-9).ceil().max(1.0) as usize;
        let h = span / n as f64;
        for i in 0..n {
            state.time = t_start + i as f64 * h;
            self.step(state, h, params, rng, stats, scratch)?;
        }
        state.time = t_end;
        Ok(())
    }
}
