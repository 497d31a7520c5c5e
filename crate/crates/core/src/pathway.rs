//! Base-DAG, hysteresis bounds tests and the time-indexed pathway-DAG.
//!
//! A pathway is stored as an activation matrix, one row per step and one
//! column per base vertex. The graph for step `m` is materialized on demand:
//! its vertices are the active QOIs and its edges are the base edges whose
//! endpoints are both active.

use std::collections::{HashMap, HashSet, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Zone;
use crate::qoi::{Field, QoiSeries};
use crate::stats::{first_activation, total_active, ActivationSummary, Baseline};

/// Static hypothesis graph over QOI ids. Acyclic by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BaseDagDoc", into = "BaseDagDoc")]
pub struct BaseDag {
    vertices: Vec<String>,
    edges: Vec<(usize, usize)>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct BaseDagDoc {
    vertices: Vec<String>,
    edges: Vec<(String, String)>,
}

impl TryFrom<BaseDagDoc> for BaseDag {
    type Error = Error;

    fn try_from(doc: BaseDagDoc) -> Result<Self> {
        BaseDag::new(doc.vertices, doc.edges)
    }
}

impl From<BaseDag> for BaseDagDoc {
    fn from(dag: BaseDag) -> Self {
        let edges = dag.edge_names().map(|(a, b)| (a.to_string(), b.to_string())).collect();
        BaseDagDoc {
            vertices: dag.vertices,
            edges,
        }
    }
}

impl BaseDag {
    pub fn new(vertices: Vec<String>, edges: Vec<(String, String)>) -> Result<Self> {
        let index = Self::index_of(&vertices)?;
        let lookup = |v: &str| {
            index
                .get(v)
                .copied()
                .ok_or_else(|| Error::config(format!("edge endpoint {v} is not a vertex")))
        };
        let edges = edges
            .iter()
            .map(|(a, b)| Ok((lookup(a)?, lookup(b)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::from_indices(vertices, edges)
    }

    pub fn from_indices(vertices: Vec<String>, edges: Vec<(usize, usize)>) -> Result<Self> {
        let index = Self::index_of(&vertices)?;
        let r = vertices.len();
        let mut seen = HashSet::new();
        for &(a, b) in &edges {
            if a >= r || b >= r {
                return Err(Error::config(format!("edge ({a}, {b}) references a missing vertex")));
            }
            if a == b {
                return Err(Error::config(format!("self-loop on {}", vertices[a])));
            }
            if !seen.insert((a, b)) {
                return Err(Error::config(format!("duplicate edge {} -> {}", vertices[a], vertices[b])));
            }
        }
        let dag = BaseDag { vertices, edges, index };
        if dag.topological_order().is_none() {
            return Err(Error::config("base graph contains a cycle"));
        }
        Ok(dag)
    }

    fn index_of(vertices: &[String]) -> Result<HashMap<String, usize>> {
        let mut index = HashMap::with_capacity(vertices.len());
        for (i, v) in vertices.iter().enumerate() {
            if index.insert(v.clone(), i).is_some() {
                return Err(Error::config(format!("duplicate vertex {v}")));
            }
        }
        Ok(index)
    }

    /// Kahn's algorithm; `None` if the graph has a cycle. Ties resolve by vertex index.
    pub fn topological_order(&self) -> Option<Vec<usize>> {
        let r = self.vertices.len();
        let mut indegree = vec![0usize; r];
        let mut out: Vec<Vec<usize>> = vec![Vec::new(); r];
        for &(a, b) in &self.edges {
            indegree[b] += 1;
            out[a].push(b);
        }
        let mut queue: VecDeque<usize> = (0..r).filter(|&v| indegree[v] == 0).collect();
        let mut order = Vec::with_capacity(r);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            for &w in &out[v] {
                indegree[w] -= 1;
                if indegree[w] == 0 {
                    queue.push_back(w);
                }
            }
        }
        (order.len() == r).then_some(order)
    }

    pub fn vertices(&self) -> &[String] {
        &self.vertices
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_names(&self) -> impl Iterator<Item = (&str, &str)> {
        self.edges
            .iter()
            .map(|&(a, b)| (self.vertices[a].as_str(), self.vertices[b].as_str()))
    }

    pub fn vertex_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Number of vertices, `r`.
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn contains_edge(&self, from: &str, to: &str) -> bool {
        match (self.vertex_index(from), self.vertex_index(to)) {
            (Some(a), Some(b)) => self.edges.contains(&(a, b)),
            _ => false,
        }
    }
}

/// Canonical 16-vertex base graph: per-zone chemistry chains
/// SO2 -> SUL -> AOD -> T and per-field poleward chains e -> s -> t -> p.
pub fn base_dag_canonical() -> BaseDag {
    let id = |f: Field, z: Zone| format!("{}({})", f.name(), z.label());
    let vertices: Vec<String> = Field::ALL
        .iter()
        .flat_map(|&f| Zone::ALL.iter().map(move |&z| id(f, z)))
        .collect();
    let mut edges = Vec::with_capacity(24);
    for z in Zone::ALL {
        for pair in Field::ALL.windows(2) {
            edges.push((id(pair[0], z), id(pair[1], z)));
        }
    }
    for f in Field::ALL {
        for pair in Zone::ALL.windows(2) {
            edges.push((id(f, pair[0]), id(f, pair[1])));
        }
    }
    BaseDag::new(vertices, edges).expect("canonical base graph is a DAG")
}

/// Hysteresis classifier for one QOI.
#[derive(Debug, Clone, PartialEq)]
pub enum BoundsTest {
    /// Inactive at or below `lower`, active at or above `upper`, otherwise hold.
    Absolute { lower: f64, upper: f64 },
    /// Same rule on the z-score against an eruption-free baseline; always
    /// inactive at step 0.
    ZScore {
        lower: f64,
        upper: f64,
        baseline: Arc<Baseline>,
    },
}

impl BoundsTest {
    pub fn absolute(lower: f64, upper: f64) -> Result<Self> {
        if !(lower < upper) {
            return Err(Error::config(format!(
                "absolute bounds need lower < upper, got {lower} and {upper}"
            )));
        }
        Ok(BoundsTest::Absolute { lower, upper })
    }

    pub fn zscore(lower: f64, upper: f64, baseline: Arc<Baseline>) -> Result<Self> {
        if !(upper > 0.0 && lower <= upper) {
            return Err(Error::config(format!(
                "z-score bounds need upper > 0 and lower <= upper, got {lower} and {upper}"
            )));
        }
        Ok(BoundsTest::ZScore {
            lower,
            upper,
            baseline,
        })
    }

    pub fn bounds(&self) -> (f64, f64) {
        match self {
            BoundsTest::Absolute { lower, upper } | BoundsTest::ZScore { lower, upper, .. } => (*lower, *upper),
        }
    }
}

/// Memory of a bounds test; inactive before the first step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestState {
    pub qoi_id: String,
    pub previous: bool,
}

impl TestState {
    pub fn new(qoi_id: impl Into<String>) -> Self {
        TestState {
            qoi_id: qoi_id.into(),
            previous: false,
        }
    }
}

/// `(value - mu) / sigma`; a non-positive sigma is a degenerate baseline.
pub fn zscore(value: f64, mu: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::DegenerateBaseline {
            qoi: String::new(),
            step: 0,
            sigma,
        });
    }
    Ok((value - mu) / sigma)
}

fn hysteresis(x: f64, lower: f64, upper: f64, previous: bool) -> bool {
    // at exact ties the inactive branch wins, then the active one, then hold
    if x <= lower {
        false
    } else if x >= upper {
        true
    } else {
        previous
    }
}

/// Evaluates `test` on `value` at step `m` and stores the result in `state`.
pub fn eval_bounds_test(test: &BoundsTest, state: &mut TestState, value: f64, m: usize) -> Result<bool> {
    let tau = match test {
        BoundsTest::Absolute { lower, upper } => hysteresis(value, *lower, *upper, state.previous),
        BoundsTest::ZScore { .. } if m == 0 => false,
        BoundsTest::ZScore {
            lower,
            upper,
            baseline,
        } => {
            let (mu, sigma) = match (baseline.mean.get(m), baseline.std.get(m)) {
                (Some(&mu), Some(&sigma)) => (mu, sigma),
                _ => {
                    return Err(Error::Bounds(format!(
                        "baseline for {} has {} steps, step {m} requested",
                        state.qoi_id,
                        baseline.mean.len()
                    )))
                }
            };
            let z = zscore(value, mu, sigma).map_err(|_| Error::DegenerateBaseline {
                qoi: state.qoi_id.clone(),
                step: m,
                sigma,
            })?;
            hysteresis(z, *lower, *upper, state.previous)
        }
    };
    state.previous = tau;
    Ok(tau)
}

/// One materialized graph `(V_m, E_m)`, by vertex index into the base graph.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DagSnapshot {
    pub vertices: Vec<usize>,
    pub edges: Vec<(usize, usize)>,
}

/// Active vertices and the base edges with both endpoints active.
pub fn pathway_step(base: &BaseDag, taus: &[bool]) -> Result<DagSnapshot> {
    if taus.len() != base.len() {
        return Err(Error::Data(format!(
            "activation row has {} entries for {} vertices",
            taus.len(),
            base.len()
        )));
    }
    let vertices = (0..base.len()).filter(|&l| taus[l]).collect();
    let edges = base
        .edges()
        .iter()
        .copied()
        .filter(|&(a, b)| taus[a] && taus[b])
        .collect();
    Ok(DagSnapshot { vertices, edges })
}

/// Activation record for steps `0..=M` over the vertices of a base graph.
#[derive(Debug, Clone, PartialEq)]
pub struct PathwayDag {
    base: Arc<BaseDag>,
    dt: f64,
    activation: Vec<bool>,
}

impl PathwayDag {
    pub fn new(base: Arc<BaseDag>, dt: f64) -> Self {
        PathwayDag {
            base,
            dt,
            activation: Vec::new(),
        }
    }

    /// Rebuilds a pathway from stored rows.
    pub fn from_rows(base: Arc<BaseDag>, dt: f64, rows: Vec<Vec<bool>>) -> Result<Self> {
        let r = base.len();
        if let Some((m, row)) = rows.iter().enumerate().find(|(_, row)| row.len() != r) {
            return Err(Error::Data(format!("activation row {m} has {} entries, expected {r}", row.len())));
        }
        Ok(PathwayDag {
            base,
            dt,
            activation: rows.into_iter().flatten().collect(),
        })
    }

    pub fn base(&self) -> &Arc<BaseDag> {
        &self.base
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Number of recorded steps (`M + 1` once complete).
    pub fn n_rows(&self) -> usize {
        if self.base.is_empty() {
            0
        } else {
            self.activation.len() / self.base.len()
        }
    }

    pub fn row(&self, m: usize) -> Result<&[bool]> {
        let r = self.base.len();
        if m >= self.n_rows() {
            return Err(Error::Bounds(format!("step {m} outside 0..{}", self.n_rows())));
        }
        Ok(&self.activation[m * r..(m + 1) * r])
    }

    pub fn rows(&self) -> impl Iterator<Item = &[bool]> {
        self.activation.chunks(self.base.len().max(1))
    }

    /// Activation series of vertex `l` over all steps.
    pub fn column(&self, l: usize) -> Vec<bool> {
        self.rows().map(|row| row[l]).collect()
    }

    fn push_row(&mut self, row: &[bool]) {
        self.activation.extend_from_slice(row);
    }

    pub fn materialize(&self, m: usize) -> Result<DagSnapshot> {
        pathway_step(&self.base, self.row(m)?)
    }

    /// Step index for a simulation day, rounded to the nearest step.
    pub fn step_for_day(&self, day: f64) -> Result<usize> {
        let m = (day / self.dt).round();
        if !(m >= 0.0 && (m as usize) < self.n_rows()) {
            return Err(Error::Bounds(format!(
                "day {day} outside the recorded run (0 to {} days)",
                (self.n_rows().saturating_sub(1)) as f64 * self.dt
            )));
        }
        Ok(m as usize)
    }

    pub fn summaries(&self, member_index: usize, never_active_day: f64) -> Vec<ActivationSummary> {
        (0..self.base.len())
            .map(|l| {
                let col = self.column(l);
                ActivationSummary {
                    qoi_id: self.base.vertices()[l].clone(),
                    member_index,
                    first_active: first_activation(&col, self.dt, never_active_day),
                    total_active: total_active(&col, self.dt),
                }
            })
            .collect()
    }
}

/// `(V_m, E_m)` for step `m` of a pathway.
pub fn materialize_dag(pathway: &PathwayDag, m: usize) -> Result<DagSnapshot> {
    pathway.materialize(m)
}

/// Incremental form of the pathway computation, driven once per model step.
#[derive(Debug, Clone)]
pub struct PathwayTracker {
    tests: Vec<BoundsTest>,
    states: Vec<TestState>,
    row: Vec<bool>,
    pathway: PathwayDag,
}

impl PathwayTracker {
    /// `tests[l]` classifies base vertex `l`.
    pub fn new(base: Arc<BaseDag>, tests: Vec<BoundsTest>, dt: f64) -> Result<Self> {
        if tests.len() != base.len() {
            return Err(Error::config(format!(
                "{} bounds tests for {} base vertices",
                tests.len(),
                base.len()
            )));
        }
        for (test, id) in tests.iter().zip(base.vertices()) {
            if let BoundsTest::ZScore { baseline, .. } = test {
                if &baseline.qoi_id != id {
                    return Err(Error::config(format!(
                        "z-score test for {id} references the baseline of {}",
                        baseline.qoi_id
                    )));
                }
            }
        }
        let states = base.vertices().iter().map(TestState::new).collect();
        Ok(PathwayTracker {
            tests,
            states,
            row: vec![false; base.len()],
            pathway: PathwayDag::new(base, dt),
        })
    }

    pub fn base(&self) -> &Arc<BaseDag> {
        self.pathway.base()
    }

    /// Classifies the QOI values of the next step and records the row.
    pub fn observe(&mut self, m: usize, values: &[f64]) -> Result<&[bool]> {
        if m != self.pathway.n_rows() {
            return Err(Error::Bounds(format!(
                "expected step {}, got {m}",
                self.pathway.n_rows()
            )));
        }
        if values.len() != self.tests.len() {
            return Err(Error::Data(format!(
                "{} values for {} QOIs",
                values.len(),
                self.tests.len()
            )));
        }
        for l in 0..self.tests.len() {
            self.row[l] = eval_bounds_test(&self.tests[l], &mut self.states[l], values[l], m)?;
        }
        self.pathway.push_row(&self.row);
        Ok(&self.row)
    }

    pub fn pathway(&self) -> &PathwayDag {
        &self.pathway
    }

    pub fn finish(self) -> PathwayDag {
        self.pathway
    }
}

/// Offline pathway computation from stored series, matched to base vertices by id.
pub fn compute_pathway(base: Arc<BaseDag>, series: &[QoiSeries], tests: Vec<BoundsTest>, dt: f64) -> Result<PathwayDag> {
    if series.len() != base.len() {
        return Err(Error::config(format!(
            "{} series for {} base vertices",
            series.len(),
            base.len()
        )));
    }
    let ordered: Vec<&QoiSeries> = base
        .vertices()
        .iter()
        .map(|id| {
            series
                .iter()
                .find(|s| &s.qoi_id == id)
                .ok_or_else(|| Error::config(format!("no series for vertex {id}")))
        })
        .collect::<Result<_>>()?;
    let n = ordered.first().map_or(0, |s| s.len());
    if let Some(s) = ordered.iter().find(|s| s.len() != n) {
        return Err(Error::Data(format!(
            "series {} has {} values, expected {n}",
            s.qoi_id,
            s.len()
        )));
    }
    let mut tracker = PathwayTracker::new(base, tests, dt)?;
    let mut values = vec![0.0; ordered.len()];
    for m in 0..n {
        for (v, s) in values.iter_mut().zip(&ordered) {
            *v = s.values[m];
        }
        tracker.observe(m, &values)?;
    }
    Ok(tracker.finish())
}
