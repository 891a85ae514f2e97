//! Finite rooted conductance graphs and the monotone surgery primitives.
//!
//! A [`ConductanceGraph`] carries the energy `sum_e c_e (phi_u - phi_v)^2`
//! with the root pinned at height zero. Parallel edges are merged by summing
//! conductances, zero conductance means "no edge", and self-loops never exist.
//!
//! Vertex identification goes through a union-find layer: merged-away ids keep
//! resolving to their representative, so recorded surgery steps stay valid
//! after later merges.

mod chain;
mod text;
mod transcript;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub use chain::{new_chain_graph, ChainSpec, MAX_GRAPH_HALF_LENGTH};
pub use transcript::{Branch, Direction, PathAllotment, SurgeryStep, SurgeryTranscript};

/// Opaque vertex id. Chain graphs use the integer position as id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VertexId(pub i64);

impl fmt::Display for VertexId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<i64> for VertexId {
    fn from(v: i64) -> Self {
        VertexId(v)
    }
}

/// Optional geometric position of a vertex.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    Line(i64),
    Plane(i64, i64),
}

/// Rooted weighted graph with symmetric adjacency maps.
#[derive(Clone, Debug)]
pub struct ConductanceGraph {
    root: VertexId,
    adj: BTreeMap<VertexId, BTreeMap<VertexId, f64>>,
    merged_into: BTreeMap<VertexId, VertexId>,
    labels: BTreeMap<VertexId, Label>,
    next_fresh: i64,
}

impl PartialEq for ConductanceGraph {
    fn eq(&self, other: &Self) -> bool {
        self.root == other.root && self.adj == other.adj && self.labels == other.labels
    }
}

fn check_conductance(c: f64) -> Result<()> {
    if !c.is_finite() || c < 0.0 {
        return Err(invalid(format!("conductance must be finite and >= 0, got {c}")));
    }
    Ok(())
}

impl ConductanceGraph {
    /// Graph holding only the root.
    pub fn new(root: VertexId) -> Self {
        let mut adj = BTreeMap::new();
        adj.insert(root, BTreeMap::new());
        Self {
            root,
            adj,
            merged_into: BTreeMap::new(),
            labels: BTreeMap::new(),
            next_fresh: root.0.saturating_add(1),
        }
    }

    pub fn root(&self) -> VertexId {
        self.root
    }

    /// Inserts an isolated vertex; no-op if the id is already known.
    pub fn add_vertex(&mut self, v: VertexId) {
        if self.resolve(v).is_some() {
            return;
        }
        self.adj.insert(v, BTreeMap::new());
        if v.0 >= self.next_fresh {
            self.next_fresh = v.0.saturating_add(1);
        }
    }

    /// Adds `c` to the conductance between `u` and `v`, creating vertices as needed.
    pub fn add_edge(&mut self, u: VertexId, v: VertexId, c: f64) -> Result<()> {
        check_conductance(c)?;
        self.add_vertex(u);
        self.add_vertex(v);
        let (u, v) = (self.resolve(u).unwrap(), self.resolve(v).unwrap());
        if u == v {
            return Err(Error::SelfLoop(u));
        }
        if c > 0.0 {
            self.bump(u, v, c);
        }
        Ok(())
    }

    pub fn set_label(&mut self, v: VertexId, label: Label) {
        if let Some(v) = self.resolve(v) {
            self.labels.insert(v, label);
        }
    }

    pub fn label(&self, v: VertexId) -> Option<Label> {
        self.resolve(v).and_then(|v| self.labels.get(&v).copied())
    }

    /// Integer line position of `v`, if labelled.
    pub fn position(&self, v: VertexId) -> Option<i64> {
        match self.label(v) {
            Some(Label::Line(x)) => Some(x),
            _ => None,
        }
    }

    /// Current representative of `v`, following identifications.
    pub fn resolve(&self, mut v: VertexId) -> Option<VertexId> {
        while let Some(&next) = self.merged_into.get(&v) {
            v = next;
        }
        self.adj.contains_key(&v).then_some(v)
    }

    fn resolve_or_err(&self, v: VertexId) -> Result<VertexId> {
        self.resolve(v).ok_or(Error::UnknownVertex(v))
    }

    pub fn contains(&self, v: VertexId) -> bool {
        self.resolve(v).is_some()
    }

    pub fn num_vertices(&self) -> usize {
        self.adj.len()
    }

    pub fn num_edges(&self) -> usize {
        self.adj.values().map(BTreeMap::len).sum::<usize>() / 2
    }

    /// Vertices in ascending id order.
    pub fn vertices(&self) -> impl Iterator<Item = VertexId> + '_ {
        self.adj.keys().copied()
    }

    /// Non-root vertices in ascending id order.
    pub fn free_vertices(&self) -> impl Iterator<Item = VertexId> + '_ {
        let root = self.root;
        self.adj.keys().copied().filter(move |&v| v != root)
    }

    /// Edges as `(u, v, c)` with `u < v`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (VertexId, VertexId, f64)> + '_ {
        self.adj.iter().flat_map(|(&u, nb)| {
            nb.range((std::ops::Bound::Excluded(u), std::ops::Bound::Unbounded))
                .map(move |(&v, &c)| (u, v, c))
        })
    }

    /// Neighbours of `v` with their conductances.
    pub fn neighbors(&self, v: VertexId) -> impl Iterator<Item = (VertexId, f64)> + '_ {
        self.resolve(v)
            .and_then(|v| self.adj.get(&v))
            .into_iter()
            .flat_map(|nb| nb.iter().map(|(&w, &c)| (w, c)))
    }

    /// Conductance between `u` and `v`; zero when absent.
    pub fn conductance(&self, u: VertexId, v: VertexId) -> f64 {
        match (self.resolve(u), self.resolve(v)) {
            (Some(u), Some(v)) => self.adj[&u].get(&v).copied().unwrap_or(0.0),
            _ => 0.0,
        }
    }

    /// Total conductance at `v`.
    pub fn total_conductance(&self, v: VertexId) -> f64 {
        self.neighbors(v).map(|(_, c)| c).sum()
    }

    /// Vertices in the connected component of the root.
    pub fn root_component(&self) -> BTreeSet<VertexId> {
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::new();
        seen.insert(self.root);
        queue.push_back(self.root);
        while let Some(u) = queue.pop_front() {
            for &w in self.adj[&u].keys() {
                if seen.insert(w) {
                    queue.push_back(w);
                }
            }
        }
        seen
    }

    /// Whether every vertex is connected to the root.
    pub fn is_connected(&self) -> bool {
        self.root_component().len() == self.adj.len()
    }

    /// Compares two graphs with a relative tolerance on conductances.
    pub fn approx_eq(&self, other: &Self, rel: f64) -> bool {
        if self.root != other.root || self.adj.len() != other.adj.len() {
            return false;
        }
        if self.labels != other.labels {
            return false;
        }
        self.adj.iter().zip(other.adj.iter()).all(|((u, a), (v, b))| {
            u == v
                && a.len() == b.len()
                && a.iter().zip(b.iter()).all(|((x, c), (y, d))| {
                    x == y && (c - d).abs() <= rel * c.abs().max(d.abs())
                })
        })
    }

    /// Electrical effective conductance between `v` and the root.
    pub fn effective_conductance(&self, v: VertexId) -> Result<f64> {
        let r = crate::exact_real::effective_resistance(self, v)?;
        if r.is_infinite() {
            return Err(Error::Disconnected(v));
        }
        Ok(1.0 / r)
    }

    fn bump(&mut self, u: VertexId, v: VertexId, c: f64) {
        *self.adj.get_mut(&u).unwrap().entry(v).or_insert(0.0) += c;
        *self.adj.get_mut(&v).unwrap().entry(u).or_insert(0.0) += c;
    }

    fn fresh(&mut self) -> VertexId {
        let id = VertexId(self.next_fresh);
        self.next_fresh += 1;
        self.adj.insert(id, BTreeMap::new());
        id
    }

    fn edge_endpoints(&self, u: VertexId, v: VertexId) -> Result<(VertexId, VertexId, f64)> {
        let (ru, rv) = (self.resolve_or_err(u)?, self.resolve_or_err(v)?);
        match self.adj[&ru].get(&rv) {
            Some(&c) if ru != rv => Ok((ru, rv, c)),
            _ => Err(Error::MissingEdge(u, v)),
        }
    }

    fn remove_edge_raw(&mut self, u: VertexId, v: VertexId) -> f64 {
        let c = self.adj.get_mut(&u).unwrap().remove(&v).unwrap_or(0.0);
        self.adj.get_mut(&v).unwrap().remove(&u);
        c
    }

    // ---- in-place surgery -------------------------------------------------

    /// Removes the edge `{u, v}` and returns its conductance.
    pub fn delete_edge_mut(&mut self, u: VertexId, v: VertexId) -> Result<f64> {
        let (u, v, _) = self.edge_endpoints(u, v)?;
        Ok(self.remove_edge_raw(u, v))
    }

    /// Merges `y` and `z`; the root always survives, otherwise the smaller id.
    /// Returns the surviving id.
    pub fn identify_mut(&mut self, y: VertexId, z: VertexId) -> Result<VertexId> {
        let (ry, rz) = (self.resolve_or_err(y)?, self.resolve_or_err(z)?);
        if ry == rz {
            return Err(invalid(format!("cannot identify {y} with itself")));
        }
        let (keep, gone) = if ry == self.root || (rz != self.root && ry < rz) {
            (ry, rz)
        } else {
            (rz, ry)
        };
        let nb = self.adj.remove(&gone).unwrap();
        for (w, c) in nb {
            self.adj.get_mut(&w).unwrap().remove(&gone);
            if w != keep {
                self.bump(keep, w, c);
            }
        }
        self.labels.remove(&gone);
        self.merged_into.insert(gone, keep);
        Ok(keep)
    }

    /// Replaces edge `{y, z}` of conductance `c` by `y - t - z` with
    /// conductances `theta c` and `theta c / (theta - 1)`. Returns `t`.
    pub fn split_theta_mut(&mut self, y: VertexId, z: VertexId, theta: f64) -> Result<VertexId> {
        if !(theta > 1.0 && theta.is_finite()) {
            return Err(invalid(format!("theta must be finite and > 1, got {theta}")));
        }
        let (ry, rz, _) = self.edge_endpoints(y, z)?;
        let c = self.remove_edge_raw(ry, rz);
        let t = self.fresh();
        self.bump(ry, t, theta * c);
        self.bump(t, rz, theta * c / (theta - 1.0));
        Ok(t)
    }

    /// Replaces edge `{y, z}` by a path through `n` new vertices, every edge
    /// carrying `(n + 1) c`. `n = 0` leaves the graph unchanged.
    pub fn split_uniform_mut(&mut self, y: VertexId, z: VertexId, n: usize) -> Result<Vec<VertexId>> {
        let (ry, rz, _) = self.edge_endpoints(y, z)?;
        if n == 0 {
            return Ok(Vec::new());
        }
        let c = self.remove_edge_raw(ry, rz);
        let w = (n as f64 + 1.0) * c;
        let mut prev = ry;
        let mut fresh = Vec::with_capacity(n);
        for _ in 0..n {
            let t = self.fresh();
            self.bump(prev, t, w);
            fresh.push(t);
            prev = t;
        }
        self.bump(prev, rz, w);
        Ok(fresh)
    }

    /// Uniform split of `{y, z}` into `via.len() + 1` pieces followed by
    /// identification of the k-th new vertex with `via[k]`.
    ///
    /// Equivalent to `split_uniform_mut` plus `identify_mut` calls, without
    /// materialising the intermediate vertices.
    pub fn split_onto_path_mut(&mut self, y: VertexId, z: VertexId, via: &[VertexId]) -> Result<()> {
        let (ry, rz, _) = self.edge_endpoints(y, z)?;
        if via.is_empty() {
            return Ok(());
        }
        let stops = via
            .iter()
            .map(|&v| self.resolve_or_err(v))
            .collect::<Result<Vec<_>>>()?;
        let c = self.remove_edge_raw(ry, rz);
        let w = (via.len() as f64 + 1.0) * c;
        self.next_fresh += via.len() as i64;
        let mut prev = ry;
        for &s in stops.iter().chain(std::iter::once(&rz)) {
            if s != prev {
                self.bump(prev, s, w);
            }
            prev = s;
        }
        Ok(())
    }

    /// Sets the conductance of `{u, v}` (an existing edge, or a new one when
    /// `c > 0`). Returns the previous value.
    pub fn set_conductance_mut(&mut self, u: VertexId, v: VertexId, c: f64) -> Result<f64> {
        check_conductance(c)?;
        let (ru, rv) = (self.resolve_or_err(u)?, self.resolve_or_err(v)?);
        if ru == rv {
            return Err(Error::SelfLoop(ru));
        }
        let old = self.remove_edge_raw(ru, rv);
        if c > 0.0 {
            self.bump(ru, rv, c);
        }
        Ok(old)
    }

    /// Removes every edge except the listed ones.
    pub fn retain_edges_mut(&mut self, keep: &[(VertexId, VertexId)]) -> Result<()> {
        let mut kept = Vec::with_capacity(keep.len());
        for &(u, v) in keep {
            let (ru, rv, c) = self.edge_endpoints(u, v)?;
            kept.push((ru, rv, c));
        }
        for nb in self.adj.values_mut() {
            nb.clear();
        }
        for (u, v, c) in kept {
            if self.adj[&u].contains_key(&v) {
                continue;
            }
            self.bump(u, v, c);
        }
        Ok(())
    }

    /// Drops all edges and leaves a single edge `{v, root}` of conductance `c`.
    pub fn collapse_to_edge_mut(&mut self, v: VertexId, c: f64) -> Result<()> {
        check_conductance(c)?;
        let rv = self.resolve_or_err(v)?;
        if rv == self.root {
            return Err(Error::SelfLoop(rv));
        }
        for nb in self.adj.values_mut() {
            nb.clear();
        }
        if c > 0.0 {
            self.bump(rv, self.root, c);
        }
        Ok(())
    }

    // ---- value-returning surgery -----------------------------------------

    /// Graph with edge `{u, v}` removed.
    pub fn delete_edge(&self, u: VertexId, v: VertexId) -> Result<Self> {
        let mut g = self.clone();
        g.delete_edge_mut(u, v)?;
        Ok(g)
    }

    /// Graph with `y` and `z` merged.
    pub fn identify_vertices(&self, y: VertexId, z: VertexId) -> Result<Self> {
        let mut g = self.clone();
        g.identify_mut(y, z)?;
        Ok(g)
    }

    /// Graph with edge `{y, z}` split at ratio `theta`, plus the new vertex id.
    pub fn split_edge_theta(&self, y: VertexId, z: VertexId, theta: f64) -> Result<(Self, VertexId)> {
        let mut g = self.clone();
        let t = g.split_theta_mut(y, z, theta)?;
        Ok((g, t))
    }

    /// Graph with edge `{y, z}` split into `n + 1` equal pieces, plus the new ids.
    pub fn split_edge_uniform(&self, y: VertexId, z: VertexId, n: usize) -> Result<(Self, Vec<VertexId>)> {
        let mut g = self.clone();
        let t = g.split_uniform_mut(y, z, n)?;
        Ok((g, t))
    }

    /// Connected random graph on ids `0..vertices` with root `0`: a random
    /// spanning tree plus each remaining pair with probability `density`.
    /// Conductances are log-uniform on `[lo, hi]`.
    pub fn random_connected<R: rand::Rng + ?Sized>(
        vertices: usize,
        density: f64,
        (lo, hi): (f64, f64),
        rng: &mut R,
    ) -> Result<Self> {
        if vertices < 2 || !(lo > 0.0 && hi >= lo) {
            return Err(invalid("need at least 2 vertices and 0 < lo <= hi"));
        }
        let draw = |rng: &mut R| (lo.ln() + rng.random::<f64>() * (hi / lo).ln()).exp();
        let mut g = Self::new(VertexId(0));
        for k in 1..vertices {
            let parent = rng.random_range(0..k);
            let c = draw(rng);
            g.add_edge(VertexId(k as i64), VertexId(parent as i64), c)?;
        }
        for a in 0..vertices {
            for b in a + 1..vertices {
                let (va, vb) = (VertexId(a as i64), VertexId(b as i64));
                if g.conductance(va, vb) == 0.0 && rng.random::<f64>() < density {
                    let c = draw(rng);
                    g.add_edge(va, vb, c)?;
                }
            }
        }
        Ok(g)
    }
}
