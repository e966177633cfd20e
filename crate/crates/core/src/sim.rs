//! The Euler scheme over a whole graph, replicated in parallel.
//!
//! Trajectory files come in two flavours. CSV has the header
//! `rep,time,<vertex ids>,<arrow ids>` where arrow columns hold the flow
//! since the previous recorded time. The binary format is little-endian:
//!
//! ```text
//! magic "DSPT", version u8 = 1
//! u32 vertices, u32 arrows, u32 replicates, u32 times
//! ids: u32 byte length + UTF-8, vertices then arrows
//! per replicate, per time: f64 time, i64 counts[vertices], i64 cumulative flows[arrows]
//! ```

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::graph::SystemState;
use crate::kernels::DrawStats;
use crate::model::{Model, Scratch};
use crate::rng::{stream, tag};
use crate::{Error, Result};

pub const BINARY_MAGIC: &[u8; 4] = b"DSPT";
pub const BINARY_VERSION: u8 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SimulationPlan {
    /// Defaults to the model's initial time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t0: Option<f64>,
    pub t1: f64,
    pub dt: f64,
    /// Grid times to record; all grid times when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_times: Option<Vec<f64>>,
    /// Record every k-th grid time (and the last) instead.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_every: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub replicates: usize,
}

fn one() -> usize {
    1
}

impl SimulationPlan {
    /// Number of steps and the grid indices to record.
    fn grid(&self, t0: f64) -> Result<(usize, Vec<usize>)> {
        if !(self.dt > 0.0) || !(self.t1 > t0) {
            return Err(Error::Plan(format!("need dt > 0 and t0 < t1, got dt={} t0={t0} t1={}", self.dt, self.t1)));
        }
        let span = self.t1 - t0;
        let n = (span / self.dt).round();
        if (n * self.dt - span).abs() > 1e-9 * span.max(1.0) || n < 1.0 {
            return Err(Error::Plan(format!("dt={} does not divide [{t0}, {}]", self.dt, self.t1)));
        }
        let n = n as usize;
        let mut rec: Vec<usize> = match (&self.record_times, self.record_every) {
            (Some(_), Some(_)) => return Err(Error::Plan("give record_times or record_every, not both".into())),
            (Some(ts), None) => {
                let mut out = Vec::with_capacity(ts.len());
                for &t in ts {
                    let k = ((t - t0) / self.dt).round();
                    if (t0 + k * self.dt - t).abs() > 1e-9 * span.max(1.0) || k < 0.0 || k > n as f64 {
                        return Err(Error::Plan(format!("record time {t} is not on the grid")));
                    }
                    out.push(k as usize);
                }
                out
            }
            (None, Some(0)) => return Err(Error::Plan("record_every must be positive".into())),
            (None, Some(k)) => (0..=n).filter(|i| i % k == 0 || *i == n).collect(),
            (None, None) => (0..=n).collect(),
        };
        rec.push(0);
        rec.sort_unstable();
        rec.dedup();
        Ok((n, rec))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub vertex_ids: Vec<String>,
    pub arrow_ids: Vec<String>,
    pub times: Vec<f64>,
    pub counts: Vec<Vec<i64>>,
    /// Cumulative arrow flows since the start.
    pub flows: Vec<Vec<i64>>,
    pub stats: DrawStats,
}

impl Trajectory {
    /// Arrow flows over (times[i−1], times[i]]; zero at i = 0.
    pub fn increments(&self, i: usize) -> Vec<i64> {
        if i == 0 {
            return vec![0; self.arrow_ids.len()];
        }
        self.flows[i].iter().zip(&self.flows[i - 1]).map(|(a, b)| a - b).collect()
    }

    pub fn state(&self, i: usize) -> SystemState {
        SystemState { time: self.times[i], counts: self.counts[i].clone(), flows: self.flows[i].clone() }
    }
}

fn grid_time(t0: f64, t1: f64, dt: f64, i: usize, n: usize) -> f64 {
    if i == n {
        t1
    } else {
        t0 + i as f64 * dt
    }
}

/// One replicate on stream (seed, SIMULATE, rep).
pub fn simulate_one(model: &Model, params: &[f64], init: &SystemState, plan: &SimulationPlan, rep: u64) -> Result<Trajectory> {
    let t0 = plan.t0.unwrap_or(init.time);
    let (n, rec) = plan.grid(t0)?;
    let mut rng = stream(plan.seed, &[tag::SIMULATE, rep]);
    let mut state = init.clone();
    state.time = t0;
    let mut stats = DrawStats::default();
    let mut scratch = Scratch::default();
    let mut traj = Trajectory {
        vertex_ids: model.graph().vertex_ids().to_vec(),
        arrow_ids: model.graph().arrow_ids().to_vec(),
        times: Vec::with_capacity(rec.len()),
        counts: Vec::with_capacity(rec.len()),
        flows: Vec::with_capacity(rec.len()),
        stats,
    };
    let mut next = 0;
    for i in 0..=n {
        if next < rec.len() && rec[next] == i {
            traj.times.push(state.time);
            traj.counts.push(state.counts.clone());
            traj.flows.push(state.flows.clone());
            next += 1;
        }
        if i == n {
            break;
        }
        let t = grid_time(t0, plan.t1, plan.dt, i, n);
        let h = grid_time(t0, plan.t1, plan.dt, i + 1, n) - t;
        state.time = t;
        model.step(&mut state, h, params, &mut rng, &mut stats, &mut scratch)?;
        state.time = grid_time(t0, plan.t1, plan.dt, i + 1, n);
    }
    traj.stats = stats;
    Ok(traj)
}

/// All replicates of a plan. Each replicate owns its stream, so the result
/// does not depend on how rayon schedules them.
pub fn simulate(model: &Model, params: &[f64], init: &SystemState, plan: &SimulationPlan) -> Result<Vec<Trajectory>> {
    if plan.replicates == 0 {
        return Err(Error::Plan("replicates must be positive".into()));
    }
    (0..plan.replicates as u64).into_par_iter().map(|r| simulate_one(model, params, init, plan, r)).collect()
}

pub fn write_csv<W: Write>(trajs: &[Trajectory], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Data(format!("writing trajectory CSV: {e}"));
    let Some(first) = trajs.first() else { return Ok(()) };
    let mut header = vec!["rep".to_string(), "time".to_string()];
    header.extend(first.vertex_ids.iter().cloned());
    header.extend(first.arrow_ids.iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    for (r, tr) in trajs.iter().enumerate() {
        for i in 0..tr.times.len() {
            let mut row = vec![r.to_string(), tr.times[i].to_string()];
            row.extend(tr.counts[i].iter().map(|c| c.to_string()));
            row.extend(tr.increments(i).iter().map(|c| c.to_string()));
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::Data(format!("writing trajectory CSV: {e}")))?;
    Ok(())
}

pub fn write_binary<W: Write>(trajs: &[Trajectory], mut out: W) -> Result<()> {
    let io = |e: std::io::Error| Error::Data(format!("writing trajectory binary: {e}"));
    let (nv, na, nt) = trajs.first().map_or((0, 0, 0), |t| (t.vertex_ids.len(), t.arrow_ids.len(), t.times.len()));
    let mut buf = Vec::new();
    buf.extend_from_slice(BINARY_MAGIC);
    buf.push(BINARY_VERSION);
    for v in [nv, na, trajs.len(), nt] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    if let Some(t) = trajs.first() {
        for id in t.vertex_ids.iter().chain(&t.arrow_ids) {
            buf.extend_from_slice(&(id.len() as u32).to_le_bytes());
            buf.extend_from_slice(id.as_bytes());
        }
    }
    for tr in trajs {
        if tr.times.len() != nt {
            return Err(Error::Data("replicates have different record counts".into()));
        }
        for i in 0..nt {
            buf.extend_from_slice(&tr.times[i].to_le_bytes());
            for c in tr.counts[i].iter().chain(&tr.flows[i]) {
                buf.extend_from_slice(&c.to_le_bytes());
            }
        }
    }
    out.write_all(&buf).map_err(io)
}

pub fn read_binary<R: Read>(mut input: R) -> Result<Vec<Trajectory>> {
    let mut buf = Vec::new();
    input.read_to_end(&mut buf).map_err(|e| Error::Data(format!("reading trajectory binary: {e}")))?;
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = buf.get(pos..pos + n).ok_or_else(|| Error::Data("truncated trajectory binary".into()))?;
        pos += n;
        Ok(s)
    };
    if take(4)? != BINARY_MAGIC {
        return Err(Error::Data("not a trajectory binary (bad magic)".into()));
    }
    let version = take(1)?[0];
    if version != BINARY_VERSION {
        return Err(Error::Data(format!("unsupported trajectory binary version {version}")));
    }
    let mut u32s = [0usize; 4];
    for v in &mut u32s {
        *v = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    }
    let [nv, na, nr, nt] = u32s;
    let mut ids = Vec::with_capacity(nv + na);
    for _ in 0..nv + na {
        let len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        ids.push(String::from_utf8(take(len)?.to_vec()).map_err(|_| Error::Data("id is not UTF-8".into()))?);
    }
    let arrow_ids = ids.split_off(nv);
    let mut out = Vec::with_capacity(nr);
    for _ in 0..nr {
        let mut tr = Trajectory {
            vertex_ids: ids.clone(),
            arrow_ids: arrow_ids.clone(),
            times: Vec::with_capacity(nt),
            counts: Vec::with_capacity(nt),
            flows: Vec::with_capacity(nt),
            stats: DrawStats::default(),
        };
        for _ in 0..nt {
            tr.times.push(f64::from_le_bytes(take(8)?.try_into().unwrap()));
            let mut row = |n: usize| -> Result<Vec<i64>> {
                (0..n).map(|_| Ok(i64::from_le_bytes(take(8)?.try_into().unwrap()))).collect()
            };
            tr.counts.push(row(nv)?);
            tr.flows.push(row(na)?);
        }
        out.push(tr);
    }
    Ok(out)
}
