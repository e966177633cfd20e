//! Directed graphs, arrow groups and configurations.
//!
//! Vertex and arrow ids are strings in specs and dense indices everywhere
//! else. An arrow's id is `"tail->head"`.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct VertexSpec {
    pub id: String,
    /// Defaults to the vertex id, i.e. every vertex gets its own color.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ArrowSpec {
    pub tail: String,
    pub head: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GraphSpec {
    pub vertices: Vec<VertexSpec>,
    pub arrows: Vec<ArrowSpec>,
}

pub fn arrow_id(tail: &str, head: &str) -> String {
    format!("{tail}->{head}")
}

#[derive(Debug, Clone)]
pub struct DirectedGraph {
    vertices: Vec<String>,
    vertex_index: HashMap<String, usize>,
    colors: Vec<usize>,
    palette: Vec<String>,
    arrows: Vec<(usize, usize)>,
    arrow_ids: Vec<String>,
    arrow_index: HashMap<String, usize>,
    out_arrows: Vec<Vec<usize>>,
    in_arrows: Vec<Vec<usize>>,
}

impl DirectedGraph {
    pub fn build(spec: &GraphSpec) -> Result<Self> {
        let mut vertices = Vec::new();
        let mut vertex_index = HashMap::new();
        let mut palette: Vec<String> = Vec::new();
        let mut colors = Vec::new();
        for v in &spec.vertices {
            if vertex_index.insert(v.id.clone(), vertices.len()).is_some() {
                return Err(Error::Graph(format!("duplicate vertex '{}'", v.id)));
            }
            vertices.push(v.id.clone());
            let color = v.color.clone().unwrap_or_else(|| v.id.clone());
            let ci = match palette.iter().position(|c| *c == color) {
                Some(i) => i,
                None => {
                    palette.push(color);
                    palette.len() - 1
                }
            };
            colors.push(ci);
        }
        let n = vertices.len();
        let mut arrows = Vec::new();
        let mut arrow_ids = Vec::new();
        let mut arrow_index = HashMap::new();
        let mut out_arrows = vec![Vec::new(); n];
        let mut in_arrows = vec![Vec::new(); n];
        for a in &spec.arrows {
            let lookup = |id: &str| {
                vertex_index
                    .get(id)
                    .copied()
                    .ok_or_else(|| Error::Graph(format!("arrow {}->{} references unknown vertex '{id}'", a.tail, a.head)))
            };
            let (t, h) = (lookup(&a.tail)?, lookup(&a.head)?);
            if t == h {
                return Err(Error::Graph(format!("self-loop at '{}'", a.tail)));
            }
            let id = arrow_id(&a.tail, &a.head);
            if arrow_index.insert(id.clone(), arrows.len()).is_some() {
                return Err(Error::Graph(format!("duplicate arrow {id}")));
            }
            out_arrows[t].push(arrows.len());
            in_arrows[h].push(arrows.len());
            arrows.push((t, h));
            arrow_ids.push(id);
        }
        Ok(Self { vertices, vertex_index, colors, palette, arrows, arrow_ids, arrow_index, out_arrows, in_arrows })
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_arrows(&self) -> usize {
        self.arrows.len()
    }

    pub fn vertex_ids(&self) -> &[String] {
        &self.vertices
    }

    pub fn arrow_ids(&self) -> &[String] {
        &self.arrow_ids
    }

    pub fn vertex(&self, id: &str) -> Option<usize> {
        self.vertex_index.get(id).copied()
    }

    pub fn arrow(&self, id: &str) -> Option<usize> {
        self.arrow_index.get(id).copied()
    }

    pub fn require_vertex(&self, id: &str) -> Result<usize> {
        self.vertex(id).ok_or_else(|| Error::Graph(format!("unknown vertex '{id}'")))
    }

    pub fn require_arrow(&self, id: &str) -> Result<usize> {
        self.arrow(id).ok_or_else(|| Error::Graph(format!("unknown arrow '{id}'")))
    }

    /// (tail, head) of an arrow.
    pub fn endpoints(&self, arrow: usize) -> (usize, usize) {
        self.arrows[arrow]
    }

    pub fn color(&self, vertex: usize) -> usize {
        self.colors[vertex]
    }

    pub fn color_name(&self, color: usize) -> &str {
        &self.palette[color]
    }

    pub fn out_arrows(&self, v: usize) -> &[usize] {
        &self.out_arrows[v]
    }

    pub fn in_arrows(&self, v: usize) -> &[usize] {
        &self.in_arrows[v]
    }

    pub fn is_source(&self, v: usize) -> bool {
        self.in_arrows[v].is_empty()
    }

    pub fn is_sink(&self, v: usize) -> bool {
        self.out_arrows[v].is_empty()
    }

    /// S_o: vertices with indegree 0.
    pub fn sources(&self) -> Vec<usize> {
        (0..self.n_vertices()).filter(|&v| self.is_source(v)).collect()
    }

    /// S_i: vertices with outdegree 0.
    pub fn sinks(&self) -> Vec<usize> {
        (0..self.n_vertices()).filter(|&v| self.is_sink(v)).collect()
    }

    pub fn spec(&self) -> GraphSpec {
        GraphSpec {
            vertices: self
                .vertices
                .iter()
                .zip(&self.colors)
                .map(|(id, &c)| VertexSpec { id: id.clone(), color: Some(self.palette[c].clone()) })
                .collect(),
            arrows: self
                .arrows
                .iter()
                .map(|&(t, h)| ArrowSpec { tail: self.vertices[t].clone(), head: self.vertices[h].clone() })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Hash)]
#[serde(rename_all = "snake_case")]
pub enum GroupKind {
    OutgoingStar,
    IncomingStar,
    ColorMatchedBounded,
    ColorMatchedUnbounded,
    Singleton,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GroupSpec {
    pub kind: GroupKind,
    pub members: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Anchor {
    Tail(usize),
    Head(usize),
    Colors { tail: usize, head: usize },
    Arrow(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArrowGroup {
    pub kind: GroupKind,
    pub members: Vec<usize>,
    pub anchor: Anchor,
}

/// Validates the declared groups and completes them with singletons so that
/// every arrow lands in exactly one group. Declared groups keep their order;
/// implicit singletons follow in arrow order.
pub fn partition_arrow_groups(g: &DirectedGraph, policy: &[GroupSpec]) -> Result<Vec<ArrowGroup>> {
    let mut owner: Vec<Option<usize>> = vec![None; g.n_arrows()];
    let mut groups = Vec::with_capacity(policy.len());
    for (gi, spec) in policy.iter().enumerate() {
        if spec.members.is_empty() {
            return Err(Error::Group(format!("group {gi} has no members")));
        }
        let mut members = Vec::with_capacity(spec.members.len());
        for id in &spec.members {
            let a = g.arrow(id).ok_or_else(|| Error::Group(format!("group {gi}: unknown arrow '{id}'")))?;
            if let Some(prev) = owner[a] {
                return Err(Error::Group(format!("arrow {id} is in groups {prev} and {gi}")));
            }
            owner[a] = Some(gi);
            members.push(a);
        }
        let ends: Vec<(usize, usize)> = members.iter().map(|&a| g.endpoints(a)).collect();
        let anchor = match spec.kind {
            GroupKind::Singleton => {
                if members.len() != 1 {
                    return Err(Error::Group(format!("singleton group {gi} has {} members", members.len())));
                }
                Anchor::Arrow(members[0])
            }
            GroupKind::OutgoingStar => {
                let t = ends[0].0;
                if ends.iter().any(|e| e.0 != t) {
                    return Err(Error::Group(format!("outgoing star {gi} members do not share a tail")));
                }
                Anchor::Tail(t)
            }
            GroupKind::IncomingStar => {
                let h = ends[0].1;
                if ends.iter().any(|e| e.1 != h) {
                    return Err(Error::Group(format!("incoming star {gi} members do not share a head")));
                }
                Anchor::Head(h)
            }
            GroupKind::ColorMatchedBounded | GroupKind::ColorMatchedUnbounded => {
                let (ct, ch) = (g.color(ends[0].0), g.color(ends[0].1));
                for (i, &(t, h)) in ends.iter().enumerate() {
                    if g.color(t) != ct || g.color(h) != ch {
                        return Err(Error::Group(format!(
                            "color-matched group {gi}: {} does not match colors ({}, {})",
                            g.arrow_ids()[members[i]],
                            g.color_name(ct),
                            g.color_name(ch)
                        )));
                    }
                    for &(t2, h2) in &ends[..i] {
                        if t == t2 || t == h2 || h == t2 || h == h2 {
                            return Err(Error::Group(format!(
                                "color-matched group {gi} contains adjacent arrows"
                            )));
                        }
                    }
                }
                Anchor::Colors { tail: ct, head: ch }
            }
        };
        groups.push(ArrowGroup { kind: spec.kind, members, anchor });
    }
    for (a, o) in owner.iter().enumerate() {
        if o.is_none() {
            groups.push(ArrowGroup { kind: GroupKind::Singleton, members: vec![a], anchor: Anchor::Arrow(a) });
        }
    }
    Ok(groups)
}

/// The pair (X(t), N(t)).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub time: f64,
    pub counts: Vec<i64>,
    pub flows: Vec<i64>,
}

/// JSON form of a state: counts by vertex id, missing vertices are zero.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct StateSpec {
    #[serde(default)]
    pub time: f64,
    pub counts: BTreeMap<String, i64>,
}

impl SystemState {
    pub fn new(g: &DirectedGraph, time: f64, counts: Vec<i64>) -> Result<Self> {
        if counts.len() != g.n_vertices() {
            return Err(Error::Graph(format!("expected {} counts, got {}", g.n_vertices(), counts.len())));
        }
        Ok(Self { time, counts, flows: vec![0; g.n_arrows()] })
    }

    pub fn from_spec(g: &DirectedGraph, spec: &StateSpec) -> Result<Self> {
        let mut counts = vec![0; g.n_vertices()];
        for (id, &c) in &spec.counts {
            counts[g.require_vertex(id)?] = c;
        }
        Self::new(g, spec.time, counts)
    }

    /// Applies one synchronized batch of arrow increments.
    pub fn apply_increments(&self, g: &DirectedGraph, deltas: &[i64], modes: &[VertexMode]) -> Result<SystemState> {
        let mut next = self.clone();
        next.apply_increments_mut(g, deltas, modes)?;
        Ok(next)
    }

    pub fn apply_increments_mut(&mut self, g: &DirectedGraph, deltas: &[i64], modes: &[VertexMode]) -> Result<()> {
        if deltas.len() != g.n_arrows() {
            return Err(Error::Graph(format!("expected {} increments, got {}", g.n_arrows(), deltas.len())));
        }
        for (v, &m) in modes.iter().enumerate() {
            if m == VertexMode::Bounded {
                let out: i64 = g.out_arrows(v).iter().map(|&a| deltas[a]).sum();
                if out > self.counts[v] {
                    return Err(Error::Overflow { vertex: g.vertex_ids()[v].clone(), count: self.counts[v], outflow: out });
                }
            }
        }
        for (a, &d) in deltas.iter().enumerate() {
            if d < 0 {
                return Err(Error::Graph(format!("negative increment on {}", g.arrow_ids()[a])));
            }
            if d == 0 {
                continue;
            }
            let (t, h) = g.endpoints(a);
            self.flows[a] += d;
            if modes[t] != VertexMode::Reservoir {
                self.counts[t] -= d;
            }
            self.counts[h] += d;
        }
        Ok(())
    }

    /// The balance identity relative to an initial state; reservoirs must
    /// keep their initial count instead.
    pub fn balance_holds(&self, g: &DirectedGraph, initial: &SystemState, modes: &[VertexMode]) -> bool {
        (0..g.n_vertices()).all(|v| {
            if modes[v] == VertexMode::Reservoir {
                return self.counts[v] == initial.counts[v];
            }
            let inflow: i64 = g.in_arrows(v).iter().map(|&a| self.flows[a] - initial.flows[a]).sum();
            let outflow: i64 = g.out_arrows(v).iter().map(|&a| self.flows[a] - initial.flows[a]).sum();
            self.counts[v] == initial.counts[v] + inflow - outflow
        })
    }
}

/// How a vertex's count reacts to outflow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VertexMode {
    /// Outflow may not exceed the count.
    Bounded,
    /// Outflow is subtracted without a check; the count may go negative.
    Unbounded,
    /// A source whose count is never decremented.
    Reservoir,
}
