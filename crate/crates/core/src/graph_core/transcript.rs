//! Replayable logs of surgery steps.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ConductanceGraph, Label, VertexId};
use crate::error::{Error, Result};

/// Relative slack for raise and lower checks, matching replay comparisons.
const ROUNDING: f64 = 1e-12;

/// Effect of a step on every surviving height variance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Variances can only grow.
    Increases,
    /// Variances can only shrink.
    Decreases,
    /// No variance of an existing vertex changes.
    Neutral,
}

/// One path of a path packing, with the conductance share it takes from each
/// edge it traverses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathAllotment {
    pub vertices: Vec<VertexId>,
    pub shares: Vec<f64>,
}

impl PathAllotment {
    /// Series conductance of the shares.
    pub fn series_conductance(&self) -> f64 {
        1.0 / self.shares.iter().map(|s| 1.0 / s).sum::<f64>()
    }
}

/// A branch of a routed edge: intermediate stops and the conductance of each
/// of the `via.len() + 1` segments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub via: Vec<VertexId>,
    pub conductances: Vec<f64>,
}

impl Branch {
    pub fn series_conductance(&self) -> f64 {
        1.0 / self.conductances.iter().map(|c| 1.0 / c).sum::<f64>()
    }
}

/// A surgery step. The first four variants are the primitives; the rest are
/// compositions of primitives, parallel splits and monotone conductance
/// changes, recorded compactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum SurgeryStep {
    DeleteEdge { u: VertexId, v: VertexId },
    IdentifyVertices { y: VertexId, z: VertexId },
    SplitEdgeTheta { y: VertexId, z: VertexId, theta: f64 },
    SplitEdgeUniform { y: VertexId, z: VertexId, n: usize },
    /// Uniform split of `{y, z}` whose new vertices are identified with `via`.
    SplitOntoPath { y: VertexId, z: VertexId, via: Vec<VertexId> },
    /// `SplitOntoPath` applied to every edge of a line-labelled graph, routing
    /// each edge through the multiples of `block` strictly between its
    /// endpoints. Edges to the root run toward the nearer end of the line
    /// (non-negative positions to the right).
    RouteThroughBlockPoints { block: i64 },
    /// Parallel split of `{y, z}` into branches, each a chain of theta
    /// splits, raises and identifications. Requires the summed series
    /// conductance of the branches to be at least the edge conductance.
    RoutePaths { y: VertexId, z: VertexId, branches: Vec<Branch> },
    AddVertex { id: VertexId, label: Option<Label> },
    RaiseConductance { u: VertexId, v: VertexId, to: f64 },
    LowerConductance { u: VertexId, v: VertexId, to: f64 },
    /// Deletes every edge not listed.
    RetainEdges { keep: Vec<(VertexId, VertexId)> },
    /// Parallel split of the used edges into path shares, deletion of the
    /// rest, separation of the paths and series reduction: leaves the single
    /// edge `{source, root}` with the summed path conductance.
    PackPaths { source: VertexId, paths: Vec<PathAllotment> },
    /// Packing of all paths that visit one vertex of each level in turn,
    /// every edge shared equally among the paths using it. The first level
    /// is `[source]`, the last `[root]`.
    PackLevels { levels: Vec<Vec<VertexId>> },
}

impl SurgeryStep {
    pub fn direction(&self) -> Direction {
        use SurgeryStep::*;
        match self {
            DeleteEdge { .. } | LowerConductance { .. } | RetainEdges { .. } => Direction::Increases,
            PackPaths { .. } | PackLevels { .. } => Direction::Increases,
            IdentifyVertices { .. }
            | SplitEdgeTheta { .. }
            | SplitEdgeUniform { .. }
            | SplitOntoPath { .. }
            | RouteThroughBlockPoints { .. }
            | RoutePaths { .. }
            | RaiseConductance { .. } => Direction::Decreases,
            AddVertex { .. } => Direction::Neutral,
        }
    }

    /// Applies the step in place.
    pub fn apply(&self, g: &mut ConductanceGraph) -> Result<()> {
        use SurgeryStep::*;
        match self {
            DeleteEdge { u, v } => g.delete_edge_mut(*u, *v).map(|_| ()),
            IdentifyVertices { y, z } => g.identify_mut(*y, *z).map(|_| ()),
            SplitEdgeTheta { y, z, theta } => g.split_theta_mut(*y, *z, *theta).map(|_| ()),
            SplitEdgeUniform { y, z, n } => g.split_uniform_mut(*y, *z, *n).map(|_| ()),
            SplitOntoPath { y, z, via } => g.split_onto_path_mut(*y, *z, via),
            RouteThroughBlockPoints { block } => route_through_block_points(g, *block),
            RoutePaths { y, z, branches } => route_paths(g, *y, *z, branches),
            AddVertex { id, label } => {
                if g.contains(*id) {
                    return Err(Error::Surgery(format!("vertex {id} already exists")));
                }
                g.add_vertex(*id);
                if let Some(l) = label {
                    g.set_label(*id, *l);
                }
                Ok(())
            }
            RaiseConductance { u, v, to } => {
                let old = g.conductance(*u, *v);
                if *to < old * (1.0 - ROUNDING) {
                    return Err(Error::Surgery(format!("raise of {{{u},{v}}} from {old} to {to}")));
                }
                g.set_conductance_mut(*u, *v, *to).map(|_| ())
            }
            LowerConductance { u, v, to } => {
                let old = g.conductance(*u, *v);
                if *to > old * (1.0 + ROUNDING) {
                    return Err(Error::Surgery(format!("lowering of {{{u},{v}}} from {old} to {to}")));
                }
                g.set_conductance_mut(*u, *v, *to).map(|_| ())
            }
            RetainEdges { keep } => g.retain_edges_mut(keep),
            PackPaths { source, paths } => pack_paths(g, *source, paths),
            PackLevels { levels } => pack_levels(g, levels),
        }
    }
}

/// Ordered log of steps applied to an initial graph.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SurgeryTranscript {
    steps: Vec<SurgeryStep>,
}

#[derive(Serialize, Deserialize)]
struct StepRecord {
    #[serde(flatten)]
    step: SurgeryStep,
    direction: Direction,
}

impl Serialize for SurgeryTranscript {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let records: Vec<StepRecord> = self
            .steps
            .iter()
            .map(|step| StepRecord { step: step.clone(), direction: step.direction() })
            .collect();
        records.serialize(s)
    }
}

impl<'de> Deserialize<'de> for SurgeryTranscript {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let records = Vec::<StepRecord>::deserialize(d)?;
        for r in &records {
            if r.direction != r.step.direction() {
                return Err(serde::de::Error::custom(format!(
                    "step {:?} tagged {:?}",
                    r.step, r.direction
                )));
            }
        }
        Ok(Self { steps: records.into_iter().map(|r| r.step).collect() })
    }
}

impl SurgeryTranscript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, step: SurgeryStep) {
        self.steps.push(step);
    }

    /// Applies `step` to `g` and records it.
    pub fn apply(&mut self, g: &mut ConductanceGraph, step: SurgeryStep) -> Result<()> {
        step.apply(g)?;
        self.steps.push(step);
        Ok(())
    }

    pub fn steps(&self) -> &[SurgeryStep] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Rebuilds the final graph from `initial`.
    pub fn replay(&self, initial: &ConductanceGraph) -> Result<ConductanceGraph> {
        let mut g = initial.clone();
        for step in &self.steps {
            step.apply(&mut g)?;
        }
        Ok(g)
    }

    /// True if no step moves variances against `dir`.
    pub fn is_pure(&self, dir: Direction) -> bool {
        self.steps
            .iter()
            .all(|s| matches!(s.direction(), d if d == dir || d == Direction::Neutral))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Multiples of `block` strictly inside `(lo, hi)`, ascending.
pub(crate) fn multiples_between(lo: i64, hi: i64, block: i64) -> impl DoubleEndedIterator<Item = i64> {
    let first = lo.div_euclid(block) + 1;
    let last = (hi - 1).div_euclid(block);
    (first..=last).map(move |k| k * block)
}

fn route_through_block_points(g: &mut ConductanceGraph, block: i64) -> Result<()> {
    if block < 1 {
        return Err(Error::Surgery(format!("block size must be positive, got {block}")));
    }
    let root = g.root();
    let n = g
        .position(root)
        .ok_or_else(|| Error::Surgery("root carries no line label".into()))?;
    let mut at: BTreeMap<i64, VertexId> = BTreeMap::new();
    for v in g.vertices() {
        if let Some(p) = g.position(v) {
            at.insert(p, v);
        }
    }
    let lookup = |p: i64| {
        at.get(&p)
            .copied()
            .ok_or_else(|| Error::Surgery(format!("no vertex at position {p}")))
    };
    let edges: Vec<(VertexId, VertexId)> = g.edges().map(|(u, v, _)| (u, v)).collect();
    for (u, v) in edges {
        let (free, other) = if v == root { (u, None) } else if u == root { (v, None) } else { (u, Some(v)) };
        let p = g
            .position(free)
            .ok_or_else(|| Error::Surgery(format!("vertex {free} carries no line label")))?;
        let (y, z, via) = match other {
            Some(w) => {
                let q = g
                    .position(w)
                    .ok_or_else(|| Error::Surgery(format!("vertex {w} carries no line label")))?;
                let (a, b, ya, zb) = if p < q { (p, q, free, w) } else { (q, p, w, free) };
                let via = multiples_between(a, b, block).map(&lookup).collect::<Result<Vec<_>>>()?;
                (ya, zb, via)
            }
            None if p >= 0 => {
                let via = multiples_between(p, n, block).map(&lookup).collect::<Result<Vec<_>>>()?;
                (free, root, via)
            }
            None => {
                let via = multiples_between(-n, p, block)
                    .rev()
                    .map(&lookup)
                    .collect::<Result<Vec<_>>>()?;
                (free, root, via)
            }
        };
        g.split_onto_path_mut(y, z, &via)?;
    }
    Ok(())
}

fn route_paths(g: &mut ConductanceGraph, y: VertexId, z: VertexId, branches: &[Branch]) -> Result<()> {
    let c = g.conductance(y, z);
    if c <= 0.0 {
        return Err(Error::MissingEdge(y, z));
    }
    let mut capacity = 0.0;
    for b in branches {
        if b.conductances.len() != b.via.len() + 1 || b.conductances.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::Surgery("malformed branch".into()));
        }
        capacity += b.series_conductance();
    }
    if capacity < c * (1.0 - 1e-12) {
        return Err(Error::Surgery(format!(
            "branches of {{{y},{z}}} carry {capacity}, below the edge conductance {c}"
        )));
    }
    let (y, z) = (g.resolve(y).unwrap(), g.resolve(z).unwrap());
    g.delete_edge_mut(y, z)?;
    for b in branches {
        let mut prev = y;
        for (&s, &w) in b.via.iter().chain(std::iter::once(&z)).zip(&b.conductances) {
            let s = g.resolve(s).ok_or(Error::UnknownVertex(s))?;
            if s != prev {
                g.bump(prev, s, w);
            }
            prev = s;
        }
    }
    Ok(())
}

fn pack_paths(g: &mut ConductanceGraph, source: VertexId, paths: &[PathAllotment]) -> Result<()> {
    let root = g.root();
    let source = g.resolve(source).ok_or(Error::UnknownVertex(source))?;
    let mut used: BTreeMap<(VertexId, VertexId), f64> = BTreeMap::new();
    let mut total = 0.0;
    for p in paths {
        let vs = p
            .vertices
            .iter()
            .map(|&v| g.resolve(v).ok_or(Error::UnknownVertex(v)))
            .collect::<Result<Vec<_>>>()?;
        if vs.first() != Some(&source) || vs.last() != Some(&root) || p.shares.len() + 1 != vs.len() {
            return Err(Error::Surgery("path must run from the source to the root".into()));
        }
        for (w, &s) in vs.windows(2).zip(&p.shares) {
            if !(s > 0.0) {
                return Err(Error::Surgery("path shares must be positive".into()));
            }
            let key = if w[0] < w[1] { (w[0], w[1]) } else { (w[1], w[0]) };
            *used.entry(key).or_insert(0.0) += s;
        }
        total += p.series_conductance();
    }
    for (&(a, b), &s) in &used {
        let c = g.conductance(a, b);
        if s > c * (1.0 + 1e-12) {
            return Err(Error::Surgery(format!("edge {{{a},{b}}} over-allotted: {s} > {c}")));
        }
    }
    g.collapse_to_edge_mut(source, total)
}

fn pack_levels(g: &mut ConductanceGraph, levels: &[Vec<VertexId>]) -> Result<()> {
    if levels.len() < 2 || levels[0].len() != 1 || levels.last().unwrap() != &vec![g.root()] {
        return Err(Error::Surgery("levels must start at a single source and end at the root".into()));
    }
    let mut resistance = 0.0;
    for pair in levels.windows(2) {
        let mut min = f64::INFINITY;
        for &a in &pair[0] {
            for &b in &pair[1] {
                min = min.min(g.conductance(a, b));
            }
        }
        if !(min > 0.0) {
            return Err(Error::Surgery("consecutive levels are not completely joined".into()));
        }
        resistance += 1.0 / (pair[0].len() as f64 * pair[1].len() as f64 * min);
    }
    g.collapse_to_edge_mut(levels[0][0], 1.0 / resistance)
}
