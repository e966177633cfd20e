//! The London measles study: SEIR model assembly, data ingestion and the
//! loglik comparison between the Dirichlet-multinomial and equi-dispersed
//! models.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::graph::{ArrowSpec, GraphSpec, GroupKind, VertexSpec};
use crate::inference::mif::{iterated_filtering, MifResult, MifSettings};
use crate::inference::params::{ParamSpace, ResolvedParams, Transform};
use crate::inference::pfilter::{decimal_year, replicated_loglik, FilterOptions, Observations, ReplicatedLoglik};
use crate::inference::profile::{profile_likelihood, ProfileResult, ProfileSettings};
use crate::kernels::Law;
use crate::model::{CalendarSource, CovariateSource, InitSpec, Model, ModelGroupSpec, ModelSpec, ObservationSpec, Scalar};
use crate::rates::{Interpolation, RateExpr, SeasonalityConvention, TermInterval, DAYS_PER_YEAR};
use crate::rng::derive_seed;
use crate::{Error, Result};

pub const PARAM_NAMES: [&str; 14] =
    ["R0", "r_EI", "r_IR", "alpha", "iota", "theta_c", "theta_a", "rho", "psi", "c", "S_0", "E_0", "I_0", "R_0"];

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Correction {
    pub date: NaiveDate,
    pub cases: i64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DataConfig {
    pub cases: PathBuf,
    #[serde(default)]
    pub births: Option<PathBuf>,
    #[serde(default)]
    pub population: Option<PathBuf>,
    /// Monthly `time,pop,birthrate` with births already shifted by the birth
    /// delay. Takes precedence over the yearly tables.
    #[serde(default)]
    pub smoothed_covariates: Option<PathBuf>,
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    pub first_year: i32,
    pub last_year: i32,
    #[serde(default)]
    pub corrections: Vec<Correction>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum BetaForm {
    /// β̄ = R0·r_IR.
    #[default]
    Ratio,
    /// β̄ = R0·(1 − exp(−(r_IR + μ)dt))/dt.
    Pomp,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct ModelConfig {
    pub p: f64,
    /// Years from birth to entering the susceptible pool.
    pub birth_delay: f64,
    pub mortality: f64,
    pub admission_doy: f64,
    /// Law of the outgoing star {S->E, S->D}.
    pub kernel: Law,
    pub incidence_arrow: String,
    pub seasonality: SeasonalityConvention,
    pub beta_form: BetaForm,
    pub calendar: Option<Vec<TermInterval>>,
    pub tol: f64,
    pub dt: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            p: 0.7589,
            birth_delay: 4.0,
            mortality: 0.02,
            admission_doy: 251.0,
            kernel: Law::DirichletMultinomial,
            incidence_arrow: "I->R".into(),
            seasonality: SeasonalityConvention::Pomp,
            beta_form: BetaForm::Pomp,
            calendar: None,
            tol: 1e-18,
            dt: 1.0 / DAYS_PER_YEAR,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct EstimationConfig {
    /// Random-walk sd for every estimated parameter unless overridden.
    pub rw_sd: f64,
    pub sd: BTreeMap<String, f64>,
    pub fixed: Vec<String>,
    pub ivp: Vec<String>,
    pub transforms: BTreeMap<String, Transform>,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        let mut transforms = BTreeMap::new();
        for k in ["R0", "r_EI", "r_IR", "alpha", "iota", "psi", "c"] {
            transforms.insert(k.to_string(), Transform::Log);
        }
        for k in ["theta_c", "theta_a", "rho"] {
            transforms.insert(k.to_string(), Transform::Logit);
        }
        for k in ["S_0", "E_0", "I_0", "R_0"] {
            transforms.insert(k.to_string(), Transform::Simplex);
        }
        Self {
            rw_sd: 0.02,
            sd: BTreeMap::new(),
            fixed: Vec::new(),
            ivp: ["S_0", "E_0", "I_0", "R_0"].iter().map(|s| s.to_string()).collect(),
            transforms,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct DeskSettings {
    pub particles: usize,
    pub reps: usize,
}

impl Default for DeskSettings {
    fn default() -> Self {
        Self { particles: 10_000, reps: 10 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct FullSettings {
    pub mif_particles: usize,
    pub mif_iterations: usize,
    pub cooling: f64,
    pub eval_particles: usize,
    pub eval_reps: usize,
    pub profile_param: String,
    pub profile_grid: Vec<f64>,
    /// Values held fixed throughout the profile.
    pub profile_fixed: BTreeMap<String, f64>,
    pub level: f64,
}

impl Default for FullSettings {
    fn default() -> Self {
        Self {
            mif_particles: 2000,
            mif_iterations: 50,
            cooling: 0.95,
            eval_particles: 10_000,
            eval_reps: 10,
            profile_param: "R0".into(),
            profile_grid: (0..=12).map(|i| 26.0 + 2.5 * i as f64).collect(),
            profile_fixed: BTreeMap::from([("alpha".to_string(), 1.0)]),
            level: 0.95,
        }
    }
}

/// Published figures echoed into the report for comparison.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
pub struct Reference {
    #[serde(default)]
    pub loglik: Option<f64>,
    #[serde(default)]
    pub baseline_loglik: Option<f64>,
    #[serde(default)]
    pub r0_ci: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StudyConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    /// Parameter values for the model with noise on the S-star.
    pub params: BTreeMap<String, f64>,
    /// Values at which the equi-dispersed model is also evaluated.
    #[serde(default)]
    pub baseline_params: Option<BTreeMap<String, f64>>,
    #[serde(default)]
    pub estimation: EstimationConfig,
    #[serde(default)]
    pub desk: DeskSettings,
    #[serde(default)]
    pub full: FullSettings,
    #[serde(default)]
    pub reference: Reference,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl StudyConfig {
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: StudyConfig = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_relative() {
            self.base_dir.join(p)
        } else {
            p.to_path_buf()
        }
    }

    fn check(&self) -> Result<()> {
        for k in self.params.keys().chain(self.baseline_params.iter().flat_map(|b| b.keys())) {
            if !PARAM_NAMES.contains(&k.as_str()) {
                return Err(Error::Config(format!("unknown study parameter '{k}'")));
            }
        }
        for k in PARAM_NAMES {
            if !self.params.contains_key(k) {
                return Err(Error::Config(format!("study parameter '{k}' is missing")));
            }
        }
        let m = &self.model;
        if !(m.p > 0.0 && m.p < 1.0) || !(m.mortality >= 0.0) || !(m.birth_delay >= 0.0) || !(m.dt > 0.0) {
            return Err(Error::Config("model constants out of range".into()));
        }
        if !m.kernel.is_bounded() {
            return Err(Error::Config(format!("the S-star needs a bounded law, got {:?}", m.kernel)));
        }
        if self.data.first_year > self.data.last_year {
            return Err(Error::Config("first_year is after last_year".into()));
        }
        Ok(())
    }
}

/// A weekly case series.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseSeries {
    pub dates: Vec<NaiveDate>,
    pub cases: Vec<Option<i64>>,
}

impl CaseSeries {
    pub fn observations(&self) -> Result<Observations> {
        Observations::new(self.dates.iter().map(|&d| decimal_year(d)).collect(), self.cases.clone())
    }
}

#[derive(Deserialize)]
struct CaseRow {
    date: NaiveDate,
    cases: String,
}

fn read_cases(path: &Path, cfg: &DataConfig) -> Result<CaseSeries> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let (mut dates, mut cases) = (Vec::new(), Vec::new());
    for row in rdr.deserialize::<CaseRow>() {
        let row = row.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let y = chrono::Datelike::year(&row.date);
        if y < cfg.first_year || y > cfg.last_year {
            continue;
        }
        dates.push(row.date);
        cases.push(match row.cases.trim() {
            "" | "NA" => None,
            s => Some(s.parse::<i64>().map_err(|_| Error::Data(format!("{}: bad count '{s}'", path.display())))?),
        });
    }
    if dates.len() < 2 {
        return Err(Error::Data(format!("{}: fewer than two weeks in {}–{}", path.display(), cfg.first_year, cfg.last_year)));
    }
    if let Some(w) = dates.windows(2).find(|w| (w[1] - w[0]).num_days() != 7) {
        return Err(Error::Data(format!("{}: cadence is not weekly between {} and {}", path.display(), w[0], w[1])));
    }
    for c in &cfg.corrections {
        match dates.iter().position(|d| *d == c.date) {
            Some(i) => cases[i] = Some(c.cases),
            None => return Err(Error::Data(format!("correction for {} matches no row", c.date))),
        }
    }
    Ok(CaseSeries { dates, cases })
}

#[derive(Deserialize)]
struct Manifest {
    sha256: BTreeMap<String, String>,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Checks every data file listed in the manifest that the study reads.
fn verify_checksums(manifest: &Path, files: &[PathBuf]) -> Result<usize> {
    let text = std::fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", manifest.display())))?;
    let mut checked = 0;
    for f in files {
        let name = f.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if let Some(want) = m.sha256.get(name) {
            let got = sha256_file(f)?;
            if &got != want {
                return Err(Error::Data(format!("{} has sha256 {got}, manifest says {want}", f.display())));
            }
            checked += 1;
        }
    }
    Ok(checked)
}

#[derive(Deserialize)]
struct YearRow {
    year: f64,
    #[serde(alias = "births", alias = "population")]
    value: f64,
}

fn read_yearly(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut out = (Vec::new(), Vec::new());
    for row in rdr.deserialize::<YearRow>() {
        let row = row.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        out.0.push(row.year);
        out.1.push(row.value);
    }
    Ok(out)
}

fn p(name: &str) -> RateExpr {
    RateExpr::param(name)
}

fn c(v: f64) -> RateExpr {
    RateExpr::constant(v)
}

/// The SEIR model of the study as a model file.
pub fn study_model_spec(cfg: &StudyConfig, t0: f64) -> Result<ModelSpec> {
    let m = &cfg.model;
    let ids = ["B", "S", "E", "I", "R", "D"];
    let arrows = [("B", "S"), ("S", "E"), ("E", "I"), ("I", "R"), ("S", "D"), ("E", "D"), ("I", "D"), ("R", "D")];
    let graph = GraphSpec {
        vertices: ids.iter().map(|id| VertexSpec { id: id.to_string(), color: None }).collect(),
        arrows: arrows.iter().map(|(t, h)| ArrowSpec { tail: t.to_string(), head: h.to_string() }).collect(),
    };
    let groups = vec![
        ModelGroupSpec { kind: GroupKind::Singleton, members: vec!["B->S".into()], law: Some(Law::Poisson), c: None },
        ModelGroupSpec {
            kind: GroupKind::OutgoingStar,
            members: vec!["S->E".into(), "S->D".into()],
            law: Some(m.kernel),
            c: if m.kernel.needs_c() { Some(Scalar::Name("c".into())) } else { None },
        },
    ];
    let (covariates, births_lag) = match (&cfg.data.smoothed_covariates, &cfg.data.births, &cfg.data.population) {
        (Some(s), _, _) => (vec![CovariateSource { path: Some(cfg.resolve(s)), ..Default::default() }], 0.0),
        (None, Some(b), Some(pop)) => {
            let (by, bv) = read_yearly(&cfg.resolve(b))?;
            let (py, pv) = read_yearly(&cfg.resolve(pop))?;
            let src = |t: Vec<f64>, name: &str, v: Vec<f64>| CovariateSource {
                time: Some(t),
                columns: Some(BTreeMap::from([(name.to_string(), v)])),
                interpolation: BTreeMap::from([(name.to_string(), Interpolation::Linear)]),
                ..Default::default()
            };
            // Yearly births are centred mid-year.
            (vec![src(py, "pop", pv), src(by.iter().map(|y| y + 0.5).collect(), "birthrate", bv)], m.birth_delay)
        }
        _ => return Err(Error::Config("need smoothed_covariates or both births and population".into())),
    };
    let beta_bar = match m.beta_form {
        BetaForm::Ratio => RateExpr::product(vec![p("R0"), p("r_IR")]),
        BetaForm::Pomp => RateExpr::quotient(
            RateExpr::product(vec![
                p("R0"),
                c(-1.0),
                RateExpr::Expm1 { arg: Box::new(RateExpr::product(vec![c(-m.dt), RateExpr::sum(vec![p("r_IR"), c(m.mortality)])])) },
            ]),
            c(m.dt),
        ),
    };
    let mut rates = BTreeMap::new();
    rates.insert(
        "B->S".to_string(),
        RateExpr::CohortBirths {
            births: Box::new(RateExpr::Covariate { name: "birthrate".into(), lag: births_lag }),
            cohort: Box::new(p("theta_c")),
            admission_doy: m.admission_doy,
        },
    );
    rates.insert(
        "S->E".to_string(),
        RateExpr::ForceOfInfection {
            beta: Box::new(RateExpr::TermTime { mean: Box::new(beta_bar), amplitude: Box::new(p("theta_a")), p: m.p, convention: m.seasonality }),
            infectious: "I".into(),
            iota: Box::new(p("iota")),
            alpha: Box::new(p("alpha")),
            population: Box::new(RateExpr::covariate("pop")),
        },
    );
    rates.insert("E->I".to_string(), p("r_EI"));
    rates.insert("I->R".to_string(), p("r_IR"));
    for a in ["S->D", "E->D", "I->D", "R->D"] {
        rates.insert(a.to_string(), c(m.mortality));
    }
    let fractions: BTreeMap<String, Scalar> =
        [("S", "S_0"), ("E", "E_0"), ("I", "I_0"), ("R", "R_0")].iter().map(|(v, n)| (v.to_string(), Scalar::Name(n.to_string()))).collect();
    Ok(ModelSpec {
        graph,
        groups,
        rates,
        params: cfg.params.clone(),
        covariates,
        calendar: m.calendar.clone().map(CalendarSource::Inline),
        init: InitSpec {
            time: t0,
            counts: BTreeMap::from([("B".to_string(), 0), ("D".to_string(), 0)]),
            fractions,
            population: Some(Scalar::Name("pop".into())),
        },
        observation: Some(ObservationSpec {
            incidence_arrow: m.incidence_arrow.clone(),
            rho: Scalar::Name("rho".into()),
            psi: Scalar::Name("psi".into()),
            tol: m.tol,
        }),
        base_dir: None,
    })
}

#[derive(Debug, Clone)]
pub struct Study {
    pub config: StudyConfig,
    pub spec: ModelSpec,
    pub model: Model,
    pub series: CaseSeries,
    pub data: Observations,
    pub checksums_verified: usize,
}

impl Study {
    pub fn equi_model(&self) -> Result<Model> {
        self.spec.equi_variant().compile()
    }

    /// Parameters in model order for the given overrides.
    pub fn params(&self, values: &BTreeMap<String, f64>) -> Result<Vec<f64>> {
        self.model.params_from(values)
    }

    pub fn resolved(&self, values: &BTreeMap<String, f64>, fixed_extra: &[String]) -> Result<ResolvedParams> {
        let est = &self.config.estimation;
        let theta = self.params(values)?;
        let space = ParamSpace::new(self.model.param_names(), &est.transforms)?;
        space.validate(&theta)?;
        let mut sd = vec![est.rw_sd; theta.len()];
        for (k, &v) in &est.sd {
            sd[self.model.param_index(k)?] = v;
        }
        for k in est.fixed.iter().chain(fixed_extra) {
            sd[self.model.param_index(k)?] = 0.0;
        }
        if !self.config.model.kernel.needs_c() {
            sd[self.model.param_index("c")?] = 0.0;
        }
        let mut ivp = vec![false; theta.len()];
        for k in &est.ivp {
            ivp[self.model.param_index(k)?] = true;
        }
        Ok(ResolvedParams { theta, space, sd, ivp })
    }
}

pub fn build_study(cfg: &StudyConfig) -> Result<Study> {
    cfg.check()?;
    let cases_path = cfg.resolve(&cfg.data.cases);
    let series = read_cases(&cases_path, &cfg.data)?;
    let data = series.observations()?;
    let checksums_verified = match &cfg.data.manifest {
        Some(mf) => {
            let mut files = vec![cases_path.clone()];
            files.extend([&cfg.data.smoothed_covariates, &cfg.data.births, &cfg.data.population].into_iter().flatten().map(|f| cfg.resolve(f)));
            verify_checksums(&cfg.resolve(mf), &files)?
        }
        None => 0,
    };
    let t0 = 2.0 * data.times[0] - data.times[1];
    let spec = study_model_spec(cfg, t0)?;
    let model = spec.compile()?;
    let (lo, hi) = model.rates().time_domain();
    let t_end = *data.times.last().expect("nonempty");
    if t0 < lo || t_end > hi {
        return Err(Error::Data(format!("covariates cover [{lo}, {hi}] but the study needs [{t0}, {t_end}]")));
    }
    Ok(Study { config: cfg.clone(), spec, model, series, data, checksums_verified })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Desk,
    Full,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ParamRow {
    pub name: String,
    pub input: f64,
    pub baseline: Option<f64>,
    pub estimate: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LoglikTable {
    pub particles: usize,
    pub reps: usize,
    pub dispersed: ReplicatedLoglik,
    pub equi_at_input: ReplicatedLoglik,
    pub equi_at_baseline: Option<ReplicatedLoglik>,
    /// Dispersed loglik minus the larger equi loglik.
    pub advantage: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DataSummary {
    pub weeks: usize,
    pub first_date: NaiveDate,
    pub last_date: NaiveDate,
    pub t0: f64,
    pub checksums_verified: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FullReport {
    pub mif: MifResult,
    pub mif_loglik: ReplicatedLoglik,
    pub profile: ProfileResult,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Table1Report {
    pub mode: Mode,
    pub seed: u64,
    pub model_hash: String,
    pub equi_model_hash: String,
    pub data: DataSummary,
    pub rows: Vec<ParamRow>,
    pub loglik: LoglikTable,
    pub reference: Reference,
    pub full: Option<FullReport>,
}

pub fn reproduce_table1(study: &Study, mode: Mode, seed: u64) -> Result<Table1Report> {
    let cfg = &study.config;
    let equi = study.equi_model()?;
    let desk = cfg.desk;
    let opts = FilterOptions { particles: desk.particles, dt: cfg.model.dt };
    let theta = study.params(&cfg.params)?;
    let dispersed = replicated_loglik(&study.model, &study.data, &theta, &opts, desk.reps, derive_seed(seed, &[1]))?;
    let equi_at_input = replicated_loglik(&equi, &study.data, &theta, &opts, desk.reps, derive_seed(seed, &[2]))?;
    let equi_at_baseline = match &cfg.baseline_params {
        Some(b) => {
            let tb = equi.params_from(b)?;
            Some(replicated_loglik(&equi, &study.data, &tb, &opts, desk.reps, derive_seed(seed, &[3]))?)
        }
        None => None,
    };
    let best_equi = equi_at_baseline.as_ref().map_or(equi_at_input.loglik, |b| b.loglik.max(equi_at_input.loglik));
    let loglik = LoglikTable {
        particles: desk.particles,
        reps: desk.reps,
        advantage: dispersed.loglik - best_equi,
        dispersed,
        equi_at_input,
        equi_at_baseline,
    };

    let full = match mode {
        Mode::Desk => None,
        Mode::Full => Some(full_run(study, seed)?),
    };
    let rows = study
        .model
        .param_names()
        .iter()
        .enumerate()
        .map(|(i, n)| ParamRow {
            name: n.clone(),
            input: theta[i],
            baseline: cfg.baseline_params.as_ref().and_then(|b| b.get(n).copied()),
            estimate: full.as_ref().map(|f| f.mif.params[i]),
        })
        .collect();
    Ok(Table1Report {
        mode,
        seed,
        model_hash: study.model.hash().to_string(),
        equi_model_hash: equi.hash().to_string(),
        data: DataSummary {
            weeks: study.series.dates.len(),
            first_date: study.series.dates[0],
            last_date: *study.series.dates.last().expect("nonempty"),
            t0: study.model.t0(),
            checksums_verified: study.checksums_verified,
        },
        rows,
        loglik,
        reference: cfg.reference.clone(),
        full,
    })
}

fn full_run(study: &Study, seed: u64) -> Result<FullReport> {
    let cfg = &study.config;
    let f = &cfg.full;
    let mif = MifSettings { particles: f.mif_particles, iterations: f.mif_iterations, cooling: f.cooling, dt: cfg.model.dt };
    let start = study.resolved(&cfg.params, &[])?;
    let fit = iterated_filtering(&study.model, &study.data, &start.space, &start.theta, &start.sd, &start.ivp, &mif, derive_seed(seed, &[4]))?;
    let opts = FilterOptions { particles: f.eval_particles, dt: cfg.model.dt };
    let mif_loglik = replicated_loglik(&study.model, &study.data, &fit.params, &opts, f.eval_reps, derive_seed(seed, &[5]))?;

    let mut values = cfg.params.clone();
    for (k, v) in study.model.param_names().iter().zip(&fit.params) {
        values.insert(k.clone(), *v);
    }
    values.extend(f.profile_fixed.clone());
    let fixed: Vec<String> = f.profile_fixed.keys().cloned().collect();
    let prof_start = study.resolved(&values, &fixed)?;
    let settings = ProfileSettings { mif, eval_particles: f.eval_particles, eval_reps: f.eval_reps, level: f.level };
    let profile =
        profile_likelihood(&study.model, &study.data, &prof_start, &f.profile_param, &f.profile_grid, &settings, derive_seed(seed, &[6]))?;
    Ok(FullReport { mif: fit, mif_loglik, profile })
}
