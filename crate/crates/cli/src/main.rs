use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use dispersim::dispersion::{classify_systemic, estimate_infinitesimal, DispersionEstimate, Systemic};
use dispersim::graph::{StateSpec, SystemState};
use dispersim::inference::mif::{iterated_filtering, MifSettings};
use dispersim::inference::params::ParamConfig;
use dispersim::inference::pfilter::{particle_filter, FilterOptions, FilterResult, Observations};
use dispersim::inference::profile::{profile_likelihood, ProfileSettings};
use dispersim::measles::{build_study, reproduce_table1, Mode, StudyConfig, Table1Report};
use dispersim::model::{Model, ModelSpec};
use dispersim::rng::{derive_seed, tag};
use dispersim::sim::{simulate, write_binary, write_csv, SimulationPlan};
use dispersim::stats::{log_mean_exp, log_mean_exp_se};
use dispersim::Error;

const DAY: f64 = 1.0 / 365.25;

#[derive(Parser)]
#[command(name = "dispersim", version, about = "Over-dispersed Markov counting processes on directed graphs")]
struct Cli {
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Master seed; every random draw of the run derives from it.
    #[arg(long)]
    seed: u64,
    /// Primary output file. A manifest is written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ModelArgs {
    /// Model file (JSON).
    #[arg(long)]
    model: PathBuf,
    /// Parameter file (JSON: values, transforms, sd, ivp).
    #[arg(long)]
    params: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SimFormat {
    Csv,
    Bin,
}

#[derive(Clone, Copy, ValueEnum)]
enum StudyMode {
    Desk,
    Full,
}

#[derive(Subcommand)]
enum Command {
    /// Euler simulation from the model's initial state.
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        common: Common,
        /// End time.
        #[arg(long)]
        t1: f64,
        /// Step length; must divide the horizon.
        #[arg(long)]
        dt: f64,
        /// Record every k-th step.
        #[arg(long)]
        record_every: Option<usize>,
        #[arg(long, default_value_t = 1)]
        replicates: usize,
        #[arg(long, value_enum, default_value_t = SimFormat::Csv)]
        format: SimFormat,
    },
    /// Infinitesimal moment and dispersion estimates at a frozen state.
    Diagnose {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        common: Common,
        /// State file (JSON: time, counts); defaults to the initial state.
        #[arg(long)]
        state: Option<PathBuf>,
        /// Arrows to examine; defaults to all.
        #[arg(long, value_delimiter = ',')]
        arrows: Vec<String>,
        /// Decreasing step sizes for the extrapolation.
        #[arg(long, value_delimiter = ',', default_values_t = [1e-3, 5e-4])]
        h: Vec<f64>,
        /// Single steps per step size.
        #[arg(long, default_value_t = 200_000)]
        m: usize,
        #[arg(long, default_value_t = 0.99)]
        level: f64,
    },
    /// Particle-filter log-likelihood.
    Filter {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        common: Common,
        /// Case data (CSV: date,cases or time,cases).
        #[arg(long)]
        data: PathBuf,
        #[arg(long = "J", default_value_t = 2000)]
        particles: usize,
        #[arg(long, default_value_t = 1)]
        reps: usize,
        #[arg(long, default_value_t = DAY)]
        dt: f64,
    },
    /// Iterated filtering (IF2).
    Mif {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long = "J", default_value_t = 2000)]
        particles: usize,
        #[arg(long, default_value_t = 50)]
        iterations: usize,
        #[arg(long, default_value_t = 0.95)]
        cooling: f64,
        #[arg(long, default_value_t = DAY)]
        dt: f64,
    },
    /// Profile likelihood over a grid of one parameter.
    Profile {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Profiled parameter.
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        grid: Vec<f64>,
        #[arg(long = "J", default_value_t = 2000)]
        particles: usize,
        /// IF2 iterations per grid point; 0 evaluates the slice.
        #[arg(long, default_value_t = 50)]
        iterations: usize,
        #[arg(long, default_value_t = 0.95)]
        cooling: f64,
        #[arg(long = "eval-J", default_value_t = 10_000)]
        eval_particles: usize,
        #[arg(long, default_value_t = 10)]
        eval_reps: usize,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        #[arg(long, default_value_t = DAY)]
        dt: f64,
    },
    /// London measles study.
    Measles {
        /// Study configuration (TOML).
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = StudyMode::Desk)]
        mode: StudyMode,
        #[command(flatten)]
        common: Common,
        /// Overrides the configured particle count for loglik evaluation.
        #[arg(long = "J")]
        particles: Option<usize>,
        /// Overrides the configured number of replicate filters.
        #[arg(long)]
        reps: Option<usize>,
    },
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    argv: Vec<String>,
    config_hash: String,
    inputs: Vec<(String, String)>,
    seed: u64,
    versions: serde_json::Value,
    threads: usize,
    wall_time_s: f64,
    outputs: Vec<String>,
}

/// Collects input hashes and output paths while a command runs.
struct Run {
    command: &'static str,
    seed: u64,
    inputs: Vec<(String, String)>,
    outputs: Vec<PathBuf>,
}

type Res<T> = Result<T, Error>;

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Run {
    fn new(command: &'static str, seed: u64) -> Self {
        Self { command, seed, inputs: Vec::new(), outputs: Vec::new() }
    }

    fn input(&mut self, path: &Path) -> Res<()> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        self.inputs.push((path.display().to_string(), sha256_hex(&bytes)));
        Ok(())
    }

    fn create(&mut self, path: &Path) -> Res<BufWriter<File>> {
        self.outputs.push(path.to_path_buf());
        Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
    }

    fn write_json<T: Serialize>(&mut self, path: &Path, value: &T) -> Res<()> {
        let mut w = self.create(path)?;
        serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Config(e.to_string()))?;
        writeln!(w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
    }

    fn write_text(&mut self, path: &Path, text: &str) -> Res<()> {
        let mut w = self.create(path)?;
        w.write_all(text.as_bytes()).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
    }

    fn finish(self, out: &Path, started: Instant) -> Res<()> {
        let mut h = Sha256::new();
        for (_, d) in &self.inputs {
            h.update(d.as_bytes());
        }
        let manifest = RunManifest {
            command: self.command.to_string(),
            argv: std::env::args().collect(),
            config_hash: h.finalize().iter().map(|b| format!("{b:02x}")).collect(),
            inputs: self.inputs,
            seed: self.seed,
            versions: json!({ "dispersim": env!("CARGO_PKG_VERSION") }),
            threads: rayon::current_num_threads(),
            wall_time_s: started.elapsed().as_secs_f64(),
            outputs: self.outputs.iter().map(|p| p.display().to_string()).collect(),
        };
        let path = out.with_extension("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }
}

/// `dir/name.ext` → `dir/name_suffix.csv`.
fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    out.with_file_name(format!("{stem}_{suffix}.csv"))
}

fn load_model(args: &ModelArgs, run: &mut Run) -> Res<(Model, Vec<f64>, ParamConfig)> {
    run.input(&args.model)?;
    let model = ModelSpec::from_json_file(&args.model)?.compile()?;
    let cfg = match &args.params {
        Some(p) => {
            run.input(p)?;
            ParamConfig::from_json_file(p)?
        }
        None => ParamConfig::default(),
    };
    let theta = model.params_from(&cfg.values)?;
    Ok((model, theta, cfg))
}

fn load_data(path: &Path, run: &mut Run) -> Res<Observations> {
    run.input(path)?;
    Observations::from_csv(path)
}

fn named(model: &Model, values: &[f64]) -> serde_json::Map<String, serde_json::Value> {
    model.param_names().iter().zip(values).map(|(k, v)| (k.clone(), json!(v))).collect()
}

fn arrows_csv(est: &DispersionEstimate) -> String {
    let mut s = String::from("arrow,mean_rate,mean_lo,mean_hi,var_rate,var_lo,var_hi,dispersion,dispersion_lo,dispersion_hi\n");
    for a in &est.arrows {
        let (m, v, d) = (a.mean_rate, a.var_rate, a.dispersion);
        s += &format!("{},{},{},{},{},{},{},{},{},{}\n", a.arrow, m.estimate, m.lo, m.hi, v.estimate, v.lo, v.hi, d.estimate, d.lo, d.hi);
    }
    s
}

fn filter_csv(model: &Model, f: &FilterResult) -> String {
    let mut s = String::from("time,cond_loglik,ess");
    for v in model.graph().vertex_ids() {
        s += &format!(",mean_{v}");
    }
    s.push('\n');
    for i in 0..f.times.len() {
        s += &format!("{},{},{}", f.times[i], f.cond_loglik[i], f.ess[i]);
        for m in &f.filter_mean[i] {
            s += &format!(",{m}");
        }
        s.push('\n');
    }
    s
}

fn table1_csv(r: &Table1Report) -> String {
    let mut s = String::from("model,params,loglik,se\n");
    let l = &r.loglik;
    s += &format!("dispersed,input,{},{}\n", l.dispersed.loglik, l.dispersed.se);
    s += &format!("equi,input,{},{}\n", l.equi_at_input.loglik, l.equi_at_input.se);
    if let Some(b) = &l.equi_at_baseline {
        s += &format!("equi,baseline,{},{}\n", b.loglik, b.se);
    }
    s
}

fn dispatch(cli: Cli) -> Res<()> {
    let started = Instant::now();
    match cli.command {
        Command::Simulate { model, common, t1, dt, record_every, replicates, format } => {
            let mut run = Run::new("simulate", common.seed);
            let (m, theta, _) = load_model(&model, &mut run)?;
            let init = m.initial_state(&theta)?;
            let plan = SimulationPlan { t0: None, t1, dt, record_times: None, record_every, seed: common.seed, replicates };
            let trajs = simulate(&m, &theta, &init, &plan)?;
            let mut w = run.create(&common.out)?;
            match format {
                SimFormat::Csv => write_csv(&trajs, &mut w)?,
                SimFormat::Bin => write_binary(&trajs, &mut w)?,
            }
            w.flush().map_err(|e| Error::io(&common.out, e))?;
            drop(w);
            let stats: Vec<_> = trajs.iter().map(|t| t.stats).collect();
            run.write_json(&common.out.with_extension("stats.json"), &json!({ "model_hash": m.hash(), "draw_stats": stats }))?;
            run.finish(&common.out, started)
        }
        Command::Diagnose { model, common, state, arrows, h, m: reps, level } => {
            let mut run = Run::new("diagnose", common.seed);
            let (m, theta, _) = load_model(&model, &mut run)?;
            let st = match &state {
                Some(p) => {
                    run.input(p)?;
                    let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                    let spec: StateSpec = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                    SystemState::from_spec(m.graph(), &spec)?
                }
                None => m.initial_state(&theta)?,
            };
            let ids: Vec<String> = if arrows.is_empty() { m.graph().arrow_ids().to_vec() } else { arrows };
            let idx = ids.iter().map(|a| m.graph().require_arrow(a)).collect::<Res<Vec<_>>>()?;
            let est = estimate_infinitesimal(&m, &theta, &st, &idx, &h, reps, common.seed, level)?;
            let class = classify_systemic(&est.arrows, &ids).unwrap_or(Systemic::Indeterminate);
            run.write_json(&common.out, &json!({ "model_hash": m.hash(), "classification": class, "estimate": est }))?;
            run.write_text(&sibling(&common.out, "arrows"), &arrows_csv(&est))?;
            run.finish(&common.out, started)
        }
        Command::Filter { model, common, data, particles, reps, dt } => {
            let mut run = Run::new("filter", common.seed);
            let (m, theta, _) = load_model(&model, &mut run)?;
            let obs = load_data(&data, &mut run)?;
            if reps == 0 {
                return Err(Error::Param("--reps must be positive".into()));
            }
            let opts = FilterOptions { particles, dt };
            let results = (0..reps)
                .map(|r| particle_filter(&m, &obs, &theta, &opts, derive_seed(common.seed, &[tag::REPLICATE, r as u64])))
                .collect::<Res<Vec<_>>>()?;
            let lls: Vec<f64> = results.iter().map(|f| f.loglik).collect();
            let se = if reps > 1 { Some(log_mean_exp_se(&lls)) } else { None };
            let first = &results[0];
            run.write_json(
                &common.out,
                &json!({
                    "model_hash": m.hash(),
                    "params": named(&m, &theta),
                    "particles": particles,
                    "loglik": log_mean_exp(&lls),
                    "se": se,
                    "logliks": lls,
                    "cond_loglik": first.cond_loglik,
                    "ess": first.ess,
                    "draw_stats": first.stats,
                }),
            )?;
            run.write_text(&sibling(&common.out, "filter"), &filter_csv(&m, first))?;
            run.finish(&common.out, started)
        }
        Command::Mif { model, common, data, particles, iterations, cooling, dt } => {
            let mut run = Run::new("mif", common.seed);
            let (m, _, cfg) = load_model(&model, &mut run)?;
            let obs = load_data(&data, &mut run)?;
            let rp = cfg.resolve(&m)?;
            let settings = MifSettings { particles, iterations, cooling, dt };
            let r = iterated_filtering(&m, &obs, &rp.space, &rp.theta, &rp.sd, &rp.ivp, &settings, common.seed)?;
            run.write_json(
                &common.out,
                &json!({
                    "model_hash": m.hash(),
                    "settings": settings,
                    "start": named(&m, &rp.theta),
                    "params": named(&m, &r.params),
                    "loglik_trace": r.loglik_trace,
                }),
            )?;
            let mut s = format!("iteration,loglik,{}\n", m.param_names().join(","));
            for (i, (ll, p)) in r.loglik_trace.iter().zip(&r.params_trace).enumerate() {
                let vals: Vec<String> = p.iter().map(|v| v.to_string()).collect();
                s += &format!("{},{},{}\n", i + 1, ll, vals.join(","));
            }
            run.write_text(&sibling(&common.out, "trace"), &s)?;
            run.finish(&common.out, started)
        }
        Command::Profile { model, common, data, param, grid, particles, iterations, cooling, eval_particles, eval_reps, level, dt } => {
            let mut run = Run::new("profile", common.seed);
            let (m, _, cfg) = load_model(&model, &mut run)?;
            let obs = load_data(&data, &mut run)?;
            let rp = cfg.resolve(&m)?;
            let mif = MifSettings { particles, iterations, cooling, dt };
            let settings = ProfileSettings { mif, eval_particles, eval_reps, level };
            let r = profile_likelihood(&m, &obs, &rp, &param, &grid, &settings, common.seed)?;
            run.write_json(&common.out, &json!({ "model_hash": m.hash(), "settings": settings, "profile": r }))?;
            let mut s = String::from("value,loglik,se,failure\n");
            for p in &r.points {
                let f = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
                s += &format!("{},{},{},{}\n", p.value, f(p.loglik), f(p.se), p.failure.as_deref().unwrap_or("").replace(',', ";"));
            }
            run.write_text(&sibling(&common.out, "profile"), &s)?;
            run.finish(&common.out, started)
        }
        Command::Measles { config, mode, common, particles, reps } => {
            let mut run = Run::new("measles", common.seed);
            run.input(&config)?;
            let mut cfg = StudyConfig::from_toml_file(&config)?;
            if let Some(j) = particles {
                cfg.desk.particles = j;
            }
            if let Some(r) = reps {
                cfg.desk.reps = r;
            }
            let study = build_study(&cfg)?;
            let mode = match mode {
                StudyMode::Desk => Mode::Desk,
                StudyMode::Full => Mode::Full,
            };
            let report = reproduce_table1(&study, mode, common.seed)?;
            run.write_json(&common.out, &report)?;
            run.write_text(&sibling(&common.out, "loglik"), &table1_csv(&report))?;
            run.finish(&common.out, started)
        }
    }
}

fn fail(kind: &str, message: String, code: u8) -> ExitCode {
    eprintln!("{}", json!({ "error": { "kind": kind, "message": message, "exit_code": code } }));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            return fail("usage", e.render().to_string().trim().to_string(), 2);
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            return fail("usage", "--threads must be positive".into(), 2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return fail("engine", e.to_string(), 1);
        }
    }
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is_input_error() => fail("input", e.to_string(), 2),
        Err(e) => fail("engine", e.to_string(), 1),
    }
}
