//! Reductions of a long-range chain to graphs whose variance at the origin
//! bounds the chain's from below or from above.
//!
//! Every pipeline returns the reduced graph together with the transcript of
//! monotone steps that produces it from [`new_chain_graph`]. Lower pipelines
//! only identify vertices, split edges and raise conductances; upper pipelines
//! only delete, pack and lower. For large `N` the reduced graph is assembled
//! directly from the same bookkeeping, and tests replay the transcript at small
//! `N` to check the two agree.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::exact_real::{real_chain_variance, real_gff_variance};
use crate::graph_core::{
    new_chain_graph, Branch, ChainSpec, ConductanceGraph, Direction, Label, PathAllotment, SurgeryStep,
    SurgeryTranscript, VertexId,
};
use crate::special::{hurwitz_zeta, zeta, KahanSum};

/// Largest half-length accepted by the planar embedding.
pub const MAX_EMBED_HALF_LENGTH: usize = 32;

/// The available reductions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pipeline {
    LowerGt3,
    #[serde(rename = "lower-23")]
    Lower23,
    #[serde(rename = "lower-3")]
    Lower3,
    #[serde(rename = "lower-embed2d")]
    LowerEmbed2d,
    UpperGt3,
    #[serde(rename = "upper-3")]
    Upper3,
    UpperBaumler,
}

impl Pipeline {
    pub const ALL: [Pipeline; 7] = [
        Pipeline::LowerGt3,
        Pipeline::Lower23,
        Pipeline::Lower3,
        Pipeline::LowerEmbed2d,
        Pipeline::UpperGt3,
        Pipeline::Upper3,
        Pipeline::UpperBaumler,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Pipeline::LowerGt3 => "lower-gt3",
            Pipeline::Lower23 => "lower-23",
            Pipeline::Lower3 => "lower-3",
            Pipeline::LowerEmbed2d => "lower-embed2d",
            Pipeline::UpperGt3 => "upper-gt3",
            Pipeline::Upper3 => "upper-3",
            Pipeline::UpperBaumler => "upper-baumler",
        }
    }

    pub fn direction(self) -> BoundDirection {
        match self {
            Pipeline::LowerGt3 | Pipeline::Lower23 | Pipeline::Lower3 | Pipeline::LowerEmbed2d => {
                BoundDirection::LowerBoundsVariance
            }
            _ => BoundDirection::UpperBoundsVariance,
        }
    }

    /// Lower pipeline covering `alpha`, if any.
    pub fn lower_for(alpha: f64) -> Option<Pipeline> {
        if is_three(alpha) {
            Some(Pipeline::Lower3)
        } else if alpha > 3.0 {
            Some(Pipeline::LowerGt3)
        } else if alpha > 2.0 {
            Some(Pipeline::Lower23)
        } else if (alpha - 2.0).abs() <= 1e-12 {
            Some(Pipeline::LowerEmbed2d)
        } else {
            None
        }
    }

    /// Upper pipeline covering `alpha`, if any.
    pub fn upper_for(alpha: f64) -> Option<Pipeline> {
        if is_three(alpha) {
            Some(Pipeline::Upper3)
        } else if alpha > 3.0 {
            Some(Pipeline::UpperGt3)
        } else if alpha > 1.0 {
            Some(Pipeline::UpperBaumler)
        } else {
            None
        }
    }

    pub fn run(self, spec: &ChainSpec) -> Result<PipelineResult> {
        match self {
            Pipeline::LowerGt3 => lower_pipeline_alpha_gt3(spec),
            Pipeline::Lower23 => lower_pipeline_alpha_23(spec),
            Pipeline::Lower3 => lower_pipeline_alpha_3(spec),
            Pipeline::LowerEmbed2d => lower_pipeline_alpha_2_embed2d(spec),
            Pipeline::UpperGt3 => upper_pipeline_alpha_gt3(spec),
            Pipeline::Upper3 => upper_pipeline_alpha_3(spec),
            Pipeline::UpperBaumler => upper_pipeline_baumler(spec),
        }
    }
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Pipeline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Pipeline::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Pipeline::ALL.iter().map(|p| p.name()).collect();
                invalid(format!("unknown pipeline `{s}`; expected one of {}", names.join(", ")))
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundDirection {
    LowerBoundsVariance,
    UpperBoundsVariance,
}

impl BoundDirection {
    /// Transcript direction a pipeline of this kind may use.
    pub fn step_direction(self) -> Direction {
        match self {
            BoundDirection::LowerBoundsVariance => Direction::Decreases,
            BoundDirection::UpperBoundsVariance => Direction::Increases,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundKind {
    Equals,
    AtLeast,
    AtMost,
}

/// Claim about one edge of the reduced graph.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertifiedBound {
    pub edge: (VertexId, VertexId),
    pub kind: BoundKind,
    pub value: f64,
}

/// Output of a pipeline.
#[derive(Clone, Debug)]
pub struct PipelineResult {
    pub pipeline: Pipeline,
    pub spec: ChainSpec,
    pub reduced_graph: ConductanceGraph,
    pub transcript: SurgeryTranscript,
    pub direction: BoundDirection,
    pub certified_bounds: Vec<CertifiedBound>,
    /// Named numbers produced along the way (block size, constants, maxima).
    pub details: BTreeMap<String, f64>,
}

#[derive(Serialize)]
struct Certificate<'a> {
    pipeline: Pipeline,
    spec: &'a ChainSpec,
    direction: BoundDirection,
    transcript_steps: usize,
    reduced_vertices: usize,
    reduced_edges: usize,
    variance_at_origin: Option<f64>,
    certified_bounds: &'a [CertifiedBound],
    details: &'a BTreeMap<String, f64>,
}

impl PipelineResult {
    /// Real-valued variance of the reduced graph at the origin.
    pub fn variance_at_origin(&self) -> Result<f64> {
        Ok(real_gff_variance(&self.reduced_graph, VertexId(0))?.value)
    }

    /// Checks every certified bound against the reduced graph and the
    /// transcript against the pipeline direction.
    pub fn audit(&self) -> Result<()> {
        if !self.transcript.is_pure(self.direction.step_direction()) {
            return Err(Error::Surgery(format!("{} transcript mixes directions", self.pipeline)));
        }
        for b in &self.certified_bounds {
            let c = self.reduced_graph.conductance(b.edge.0, b.edge.1);
            let tol = 1e-12 * b.value.abs().max(c.abs());
            let ok = match b.kind {
                BoundKind::Equals => (c - b.value).abs() <= tol,
                BoundKind::AtLeast => c >= b.value - tol,
                BoundKind::AtMost => c <= b.value + tol,
            };
            if !ok {
                return Err(Error::Surgery(format!(
                    "bound {:?} {} on {{{},{}}} fails: conductance {c}",
                    b.kind, b.value, b.edge.0, b.edge.1
                )));
            }
        }
        Ok(())
    }

    /// JSON bound certificate.
    pub fn certificate_json(&self) -> Result<String> {
        let cert = Certificate {
            pipeline: self.pipeline,
            spec: &self.spec,
            direction: self.direction,
            transcript_steps: self.transcript.len(),
            reduced_vertices: self.reduced_graph.num_vertices(),
            reduced_edges: self.reduced_graph.num_edges(),
            variance_at_origin: self.variance_at_origin().ok().filter(|v| v.is_finite()),
            certified_bounds: &self.certified_bounds,
            details: &self.details,
        };
        Ok(serde_json::to_string_pretty(&cert)?)
    }
}

fn is_three(alpha: f64) -> bool {
    (alpha - 3.0).abs() <= 1e-12
}

fn v(i: i64) -> VertexId {
    VertexId(i)
}

// ---- lower pipelines on a line of blocks -------------------------------------

/// Result of routing every chain edge through block points, collapsing the
/// blocks and folding the line.
struct BlockLine {
    block: i64,
    /// Conductance of folded bond `t` (between levels `t` and `t + 1`).
    bonds: Vec<f64>,
    /// Smallest and largest `n_ij * B / |i - j|` over pairs with `n_ij >= 2`.
    crossing_ratio: (f64, f64),
}

fn block_line(spec: &ChainSpec, block: i64) -> BlockLine {
    let n = spec.n as i64;
    let b = |x: i64| x.div_euclid(block);
    let lo_bond = b(-n);
    let width = (b(n) - lo_bond) as usize;
    let mut diff = vec![0.0f64; width + 1];
    let mut add = |from: i64, to: i64, c: f64| {
        if to > from {
            diff[(from - lo_bond) as usize] += c;
            diff[(to - lo_bond) as usize] -= c;
        }
    };
    let mut ratio = (f64::INFINITY, f64::NEG_INFINITY);
    for i in (-n + 1)..n {
        for j in (i + 1)..n {
            let crossings = b(j - 1) - b(i);
            let d = (j - i) as f64;
            if crossings >= 2 {
                let r = crossings as f64 * block as f64 / d;
                ratio = (ratio.0.min(r), ratio.1.max(r));
            }
            add(b(i), b(j), (crossings + 1) as f64 * spec.pair_conductance(i, j));
        }
        let c = spec.root_conductance(i);
        if i >= 0 {
            let crossings = b(n - 1) - b(i);
            add(b(i), b(n), (crossings + 1) as f64 * c);
        } else {
            let crossings = b(i - 1) - b(-n);
            add(b(-n), b(i), (crossings + 1) as f64 * c);
        }
    }
    // Prefix sums give the unfolded bonds; bond `k` folds onto level
    // `k` (k >= 0) or `-k - 1` (k < 0).
    let levels = root_level(n, block);
    let mut bonds = vec![0.0; levels as usize];
    let mut run = 0.0;
    for (off, d) in diff.iter().take(width).enumerate() {
        run += d;
        let k = off as i64 + lo_bond;
        let t = if k >= 0 { k } else { -k - 1 };
        if t < levels {
            bonds[t as usize] += run;
        }
    }
    BlockLine { block, bonds, crossing_ratio: ratio }
}

/// First folded level whose block meets `|x| >= N`; also the reduced length.
fn root_level(n: i64, block: i64) -> i64 {
    (0..).find(|&f: &i64| (f + 1) * block > n || f * block >= n).unwrap()
}

/// Representative id of folded level `t`.
fn level_rep(t: i64, block: i64) -> VertexId {
    v(-t * block)
}

fn block_line_graph(spec: &ChainSpec, line: &BlockLine) -> ConductanceGraph {
    let root = spec.root();
    let mut g = ConductanceGraph::new(root);
    g.set_label(root, Label::Line(root.0));
    let len = line.bonds.len() as i64;
    for t in 0..len {
        let r = level_rep(t, line.block);
        g.add_vertex(r);
        g.set_label(r, Label::Line(r.0));
    }
    for (t, &c) in line.bonds.iter().enumerate() {
        let t = t as i64;
        let next = if t + 1 == len { root } else { level_rep(t + 1, line.block) };
        g.add_edge(level_rep(t, line.block), next, c).expect("bond conductances are finite");
    }
    g
}

fn block_line_transcript(spec: &ChainSpec, block: i64, levels: i64) -> SurgeryTranscript {
    let n = spec.n as i64;
    let root = spec.root();
    let mut t = SurgeryTranscript::new();
    t.push(SurgeryStep::RouteThroughBlockPoints { block });
    // Collapse blocks onto their smallest member, or onto the root.
    let b = |x: i64| x.div_euclid(block);
    let mut members: BTreeMap<i64, Vec<i64>> = BTreeMap::new();
    for x in (-n + 1)..n {
        members.entry(b(x)).or_default().push(x);
    }
    let is_root_block = |k: i64| k * block <= -n || (k + 1) * block > n;
    let mut rep: BTreeMap<i64, VertexId> = BTreeMap::new();
    for (&k, xs) in &members {
        let keep = if is_root_block(k) { root } else { v(xs[0]) };
        for &x in xs {
            if v(x) != keep {
                t.push(SurgeryStep::IdentifyVertices { y: keep, z: v(x) });
            }
        }
        rep.insert(k, keep);
    }
    // Fold block -k onto block k.
    for k in 1.. {
        let (pos, neg) = (rep.get(&k).copied(), rep.get(&-k).copied());
        if pos.is_none() && neg.is_none() {
            break;
        }
        let pos = pos.unwrap_or(root);
        let neg = neg.unwrap_or(root);
        if pos != neg {
            t.push(SurgeryStep::IdentifyVertices { y: neg, z: pos });
        }
    }
    debug_assert!(levels >= 0);
    t
}

fn lower_block_pipeline(
    pipeline: Pipeline,
    spec: &ChainSpec,
    block: i64,
    raise_to: Option<f64>,
) -> Result<PipelineResult> {
    let mut line = block_line(spec, block);
    let levels = line.bonds.len() as i64;
    let mut transcript = block_line_transcript(spec, block, levels);
    let mut details = BTreeMap::new();
    details.insert("block_size".into(), block as f64);
    details.insert("reduced_length".into(), levels as f64);
    let max_before = line.bonds.iter().cloned().fold(0.0, f64::max);
    details.insert("max_routed_conductance".into(), max_before);
    if line.crossing_ratio.0.is_finite() {
        details.insert("crossing_ratio_min".into(), line.crossing_ratio.0);
        details.insert("crossing_ratio_max".into(), line.crossing_ratio.1);
    }
    let root = spec.root();
    let ends = |t: i64| {
        let next = if t + 1 == levels { root } else { level_rep(t + 1, block) };
        (level_rep(t, block), next)
    };
    let mut bounds = Vec::with_capacity(line.bonds.len());
    if let Some(target) = raise_to {
        if max_before > target * (1.0 + 1e-12) {
            return Err(Error::Surgery(format!(
                "routed bond conductance {max_before} exceeds the raise target {target}"
            )));
        }
        for t in 0..levels {
            let (a, b) = ends(t);
            transcript.push(SurgeryStep::RaiseConductance { u: a, v: b, to: target });
        }
        line.bonds.iter_mut().for_each(|c| *c = target);
        details.insert("raise_target".into(), target);
    }
    for (t, &c) in line.bonds.iter().enumerate() {
        bounds.push(CertifiedBound { edge: ends(t as i64), kind: BoundKind::Equals, value: c });
    }
    let reduced_graph = block_line_graph(spec, &line);
    let result = PipelineResult {
        pipeline,
        spec: *spec,
        reduced_graph,
        transcript,
        direction: BoundDirection::LowerBoundsVariance,
        certified_bounds: bounds,
        details,
    };
    result.audit()?;
    Ok(result)
}

/// Splits every edge into unit steps along the line, folds `i` onto `-i` and
/// raises each bond to `2 beta zeta(alpha - 2)`: a nearest-neighbour line of
/// length `N`.
pub fn lower_pipeline_alpha_gt3(spec: &ChainSpec) -> Result<PipelineResult> {
    spec.validate()?;
    if !(spec.alpha > 3.0) || is_three(spec.alpha) {
        return Err(invalid(format!("lower-gt3 needs alpha > 3, got {}", spec.alpha)));
    }
    let target = 2.0 * spec.beta * zeta(spec.alpha - 2.0);
    lower_block_pipeline(Pipeline::LowerGt3, spec, 1, Some(target))
}

/// Block size `ceil(N^(3 - alpha))` for `2 < alpha < 3`.
pub fn block_size_23(n: usize, alpha: f64) -> i64 {
    ((n as f64).powf(3.0 - alpha).ceil() as i64).max(1)
}

/// Block size `ceil(ln N)` for `alpha = 3`.
pub fn block_size_3(n: usize) -> i64 {
    ((n as f64).ln().ceil() as i64).max(1)
}

/// Routes edges through block boundaries at scale `ceil(N^(3 - alpha))` and
/// collapses the blocks: a nearest-neighbour line of length `floor(N / B)`.
pub fn lower_pipeline_alpha_23(spec: &ChainSpec) -> Result<PipelineResult> {
    spec.validate()?;
    if !(spec.alpha > 2.0 && spec.alpha < 3.0) || is_three(spec.alpha) {
        return Err(invalid(format!("lower-23 needs 2 < alpha < 3, got {}", spec.alpha)));
    }
    lower_block_pipeline(Pipeline::Lower23, spec, block_size_23(spec.n, spec.alpha), None)
}

/// Same construction with blocks of size `ceil(ln N)`.
pub fn lower_pipeline_alpha_3(spec: &ChainSpec) -> Result<PipelineResult> {
    spec.validate()?;
    if !is_three(spec.alpha) {
        return Err(invalid(format!("lower-3 needs alpha = 3, got {}", spec.alpha)));
    }
    lower_block_pipeline(Pipeline::Lower3, spec, block_size_3(spec.n), None)
}

// ---- planar embedding at alpha = 2 ------------------------------------------

/// Constants of the planar embedding for half-length `n`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EmbedConstants {
    /// Smallest `C1` with `1 / C1 + 2 H_l / (C1 sqrt l) <= 1` for all `l <= 4n`,
    /// where `H_l = sum_{k <= l} k^(-1/2)`.
    pub c1: f64,
    /// `sup_k sqrt(k) sum_{l >= k} l^(-3/2)`.
    pub c2: f64,
    pub c0: f64,
}

impl EmbedConstants {
    pub fn new(n: usize) -> Self {
        let lmax = 4 * n.max(1);
        let mut h = 0.0;
        let mut c1 = 0.0f64;
        let mut c2 = 0.0f64;
        for l in 1..=lmax {
            let lf = l as f64;
            h += lf.powf(-0.5);
            c1 = c1.max(1.0 + 2.0 * h / lf.sqrt());
            c2 = c2.max(lf.sqrt() * hurwitz_zeta(1.5, lf));
        }
        Self { c1, c2, c0: 2.0 * c1 * c2 }
    }
}

/// Maps the chain into the rectangle `{-N..N} x {-2N..2N}`: each coupling is
/// routed along a path that climbs to height `|i - j|`, crosses, and comes
/// down (or leaves the rectangle), then every rectangle edge is raised to
/// `C0 beta`.
pub fn lower_pipeline_alpha_2_embed2d(spec: &ChainSpec) -> Result<PipelineResult> {
    spec.validate()?;
    if (spec.alpha - 2.0).abs() > 1e-12 {
        return Err(invalid(format!("lower-embed2d needs alpha = 2, got {}", spec.alpha)));
    }
    if spec.n > MAX_EMBED_HALF_LENGTH {
        return Err(Error::TooLarge {
            what: "planar embedding",
            size: spec.n,
            limit: MAX_EMBED_HALF_LENGTH,
        });
    }
    let n = spec.n as i64;
    let beta = spec.beta;
    let k = EmbedConstants::new(spec.n);
    let root = spec.root();
    let inside = |x: i64, y: i64| x.abs() <= n && y.abs() <= 2 * n;
    let node = |x: i64, y: i64| -> VertexId {
        if !inside(x, y) {
            root
        } else if y == 0 && x.abs() < n {
            v(x)
        } else {
            v(n + 1 + (y + 2 * n) * (2 * n + 1) + (x + n))
        }
    };
    let climb = |kk: i64, l: i64| k.c1 * ((kk as f64) / (l as f64)).sqrt() * beta / l as f64;

    let mut g = new_chain_graph(spec)?;
    let mut transcript = SurgeryTranscript::new();
    let mut apply = |g: &mut ConductanceGraph, step: SurgeryStep| transcript.apply(g, step);
    for y in -2 * n..=2 * n {
        for x in -n..=n {
            if y == 0 && x.abs() < n {
                continue;
            }
            apply(&mut g, SurgeryStep::AddVertex { id: node(x, y), label: Some(Label::Plane(x, y)) })?;
        }
    }
    // Pairs inside the chain: up column i, across at height d, down column j.
    for i in (-n + 1)..n {
        for j in (i + 1)..n {
            let d = j - i;
            let mut via = Vec::with_capacity(3 * d as usize);
            let mut cond = Vec::with_capacity(3 * d as usize);
            for h in 1..=d {
                via.push(node(i, h));
                cond.push(climb(h, d));
            }
            for x in (i + 1)..=j {
                via.push(node(x, d));
                cond.push(k.c1 * beta / d as f64);
            }
            for h in (1..d).rev() {
                via.push(node(j, h));
                cond.push(climb(h + 1, d));
            }
            cond.push(climb(1, d));
            let branch = Branch { via, conductances: cond };
            apply(&mut g, SurgeryStep::RoutePaths { y: v(i), z: v(j), branches: vec![branch] })?;
        }
    }
    // Couplings to the boundary: one branch per partner distance up to 2N,
    // leaving sideways; all longer ones share the climb out of the top.
    let top_tail = hurwitz_zeta(1.5, (2 * n + 1) as f64);
    for i in (-n + 1)..n {
        let mut branches = Vec::new();
        for (dir, first) in [(1i64, n - i), (-1i64, n + i)] {
            for d in first..=2 * n {
                let mut via = Vec::new();
                let mut cond = Vec::new();
                for h in 1..=d {
                    via.push(node(i, h));
                    cond.push(climb(h, d));
                }
                let mut x = i;
                loop {
                    x += dir;
                    let p = node(x, d);
                    cond.push(k.c1 * beta / d as f64);
                    if p == root {
                        break;
                    }
                    via.push(p);
                }
                branches.push(Branch { via, conductances: cond });
            }
        }
        let via: Vec<VertexId> = (1..=2 * n).map(|h| node(i, h)).collect();
        let cond: Vec<f64> = (1..=2 * n + 1)
            .map(|h| 2.0 * k.c1 * beta * (h as f64).sqrt() * top_tail)
            .collect();
        branches.push(Branch { via, conductances: cond });
        apply(&mut g, SurgeryStep::RoutePaths { y: v(i), z: root, branches })?;
    }
    // Accumulated loads before the final raise.
    let (mut max_h, mut max_v) = (0.0f64, 0.0f64);
    for y in -2 * n..=2 * n {
        for x in -n..=n {
            if inside(x + 1, y) {
                max_h = max_h.max(g.conductance(node(x, y), node(x + 1, y)));
            }
            if inside(x, y + 1) {
                max_v = max_v.max(g.conductance(node(x, y), node(x, y + 1)));
            }
        }
    }
    let mut bounds = Vec::new();
    for y in -2 * n..=2 * n {
        for x in -n..=n {
            let p = node(x, y);
            let mut outside = 0;
            for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                let q = node(x + dx, y + dy);
                if q == root {
                    outside += 1;
                } else if (dx, dy) == (1, 0) || (dx, dy) == (0, 1) {
                    let to = k.c0 * beta;
                    apply(&mut g, SurgeryStep::RaiseConductance { u: p, v: q, to })?;
                    bounds.push(CertifiedBound { edge: (p, q), kind: BoundKind::Equals, value: to });
                }
            }
            if outside > 0 {
                let to = outside as f64 * k.c0 * beta;
                apply(&mut g, SurgeryStep::RaiseConductance { u: p, v: root, to })?;
                bounds.push(CertifiedBound { edge: (p, root), kind: BoundKind::Equals, value: to });
            }
        }
    }
    let mut details = BTreeMap::new();
    details.insert("c1".into(), k.c1);
    details.insert("c2".into(), k.c2);
    details.insert("c0".into(), k.c0);
    details.insert("max_horizontal_load".into(), max_h);
    details.insert("max_vertical_load".into(), max_v);
    details.insert("horizontal_bound".into(), k.c1 * beta);
    details.insert("vertical_bound".into(), 2.0 * k.c1 * k.c2 * beta);
    let result = PipelineResult {
        pipeline: Pipeline::LowerEmbed2d,
        spec: *spec,
        reduced_graph: g,
        transcript,
        direction: BoundDirection::LowerBoundsVariance,
        certified_bounds: bounds,
        details,
    };
    result.audit()?;
    Ok(result)
}

// ---- upper pipelines ---------------------------------------------------------

/// Chain vertices without edges, labelled by position.
fn bare_chain(spec: &ChainSpec) -> ConductanceGraph {
    let root = spec.root();
    let mut g = ConductanceGraph::new(root);
    g.set_label(root, Label::Line(root.0));
    for i in spec.free_positions() {
        g.add_vertex(v(i));
        g.set_label(v(i), Label::Line(i));
    }
    g
}

fn upper_single_edge(
    pipeline: Pipeline,
    spec: &ChainSpec,
    transcript: SurgeryTranscript,
    c: f64,
    details: BTreeMap<String, f64>,
) -> Result<PipelineResult> {
    let root = spec.root();
    let mut g = bare_chain(spec);
    g.add_edge(v(0), root, c)?;
    let result = PipelineResult {
        pipeline,
        spec: *spec,
        reduced_graph: g,
        transcript,
        direction: BoundDirection::UpperBoundsVariance,
        certified_bounds: vec![CertifiedBound { edge: (v(0), root), kind: BoundKind::AtLeast, value: c }],
        details,
    };
    result.audit()?;
    Ok(result)
}

/// Keeps the nearest-neighbour edges `0 - 1 - ... - N` and lowers the last one
/// to `beta`. Valid for every `alpha`; [`upper_pipeline_alpha_gt3`] gates it.
pub fn upper_pipeline_nearest_neighbour(spec: &ChainSpec) -> Result<PipelineResult> {
    spec.validate()?;
    let n = spec.n as i64;
    let root = spec.root();
    let mut keep: Vec<(VertexId, VertexId)> = (0..n - 1).map(|i| (v(i), v(i + 1))).collect();
    keep.push((v(n - 1), root));
    let mut transcript = SurgeryTranscript::new();
    transcript.push(SurgeryStep::RetainEdges { keep: keep.clone() });
    transcript.push(SurgeryStep::LowerConductance { u: v(n - 1), v: root, to: spec.beta });
    let mut g = bare_chain(spec);
    let mut bounds = Vec::new();
    for &(a, b) in &keep {
        g.add_edge(a, b, spec.beta)?;
        bounds.push(CertifiedBound { edge: (a, b), kind: BoundKind::Equals, value: spec.beta });
    }
    let mut details = BTreeMap::new();
    details.insert("implied_variance".into(), n as f64 / (2.0 * spec.beta));
    let result = PipelineResult {
        pipeline: Pipeline::UpperGt3,
        spec: *spec,
        reduced_graph: g,
        transcript,
        direction: BoundDirection::UpperBoundsVariance,
        certified_bounds: bounds,
        details,
    };
    result.audit()?;
    Ok(result)
}

/// Deletes all but the nearest-neighbour edges on the right half.
pub fn upper_pipeline_alpha_gt3(spec: &ChainSpec) -> Result<PipelineResult> {
    spec.validate()?;
    if !(spec.alpha > 3.0) || is_three(spec.alpha) {
        return Err(invalid(format!("upper-gt3 needs alpha > 3, got {}", spec.alpha)));
    }
    upper_pipeline_nearest_neighbour(spec)
}

/// Paths for the `alpha = 3` packing: for every even `k <= sqrt N` and
/// `i in {-k, ..., -k/2}`, the walk `0, i, i - k, i - 2k, ...` into the
/// boundary, with shares `beta / |i|^4` on the first edge and `beta / k^3`
/// on each jump.
pub fn alpha3_paths(spec: &ChainSpec) -> Vec<PathAllotment> {
    let n = spec.n as i64;
    let root = spec.root();
    let kmax = (spec.n as f64).sqrt().floor() as i64;
    let mut paths = Vec::new();
    for k in (2..=kmax).step_by(2) {
        for i in -k..=-k / 2 {
            let mut vertices = vec![v(0), v(i)];
            let mut shares = vec![spec.beta / (i as f64).powi(4)];
            let mut x = i;
            loop {
                x -= k;
                shares.push(spec.beta / (k as f64).powi(3));
                if x <= -n {
                    vertices.push(root);
                    break;
                }
                vertices.push(v(x));
            }
            paths.push(PathAllotment { vertices, shares });
        }
    }
    paths
}

/// `sum_{k even <= sqrt N} sum_{i=k/2}^{k} 1 / (ceil(N/k) k^3 / beta + i^4 / beta)`.
pub fn alpha3_packed_conductance(spec: &ChainSpec) -> f64 {
    let n = spec.n as i64;
    let kmax = (spec.n as f64).sqrt().floor() as i64;
    let mut acc = KahanSum::new();
    for k in (2..=kmax).step_by(2) {
        let jumps = (n + k - 1) / k;
        for i in k / 2..=k {
            let r = (jumps * k * k * k) as f64 / spec.beta + (i as f64).powi(4) / spec.beta;
            acc.add(1.0 / r);
        }
    }
    acc.value()
}

/// Packs edge-disjoint jump paths from the origin into the boundary and
/// lowers the merged conductance to the closed-form `c*`.
pub fn upper_pipeline_alpha_3(spec: &ChainSpec) -> Result<PipelineResult> {
    spec.validate()?;
    if !is_three(spec.alpha) {
        return Err(invalid(format!("upper-3 needs alpha = 3, got {}", spec.alpha)));
    }
    if spec.n < 16 {
        return Err(invalid(format!("upper-3 needs N >= 16, got {}", spec.n)));
    }
    let paths = alpha3_paths(spec);
    let packed: f64 = paths.iter().map(PathAllotment::series_conductance).sum();
    let c_star = alpha3_packed_conductance(spec);
    if c_star > packed * (1.0 + 1e-12) {
        return Err(Error::Surgery(format!("closed form {c_star} exceeds packed conductance {packed}")));
    }
    let root = spec.root();
    let mut details = BTreeMap::new();
    details.insert("paths".into(), paths.len() as f64);
    details.insert("packed_conductance".into(), packed);
    details.insert("c_star".into(), c_star);
    details.insert("c_star_n_over_ln_n".into(), c_star * spec.n as f64 / (spec.n as f64).ln());
    let mut transcript = SurgeryTranscript::new();
    transcript.push(SurgeryStep::PackPaths { source: v(0), paths });
    transcript.push(SurgeryStep::LowerConductance { u: v(0), v: root, to: c_star });
    upper_single_edge(Pipeline::Upper3, spec, transcript, c_star, details)
}

/// Dyadic levels `{0}, I_1, ..., I_{K-1}, {root}` with `I_k = {2^k, ..., 2^{k+1} - 1}`
/// and `K = floor(log2 N)`.
pub fn baumler_levels(spec: &ChainSpec) -> Vec<Vec<VertexId>> {
    let kk = (usize::BITS - 1 - spec.n.leading_zeros()) as i64;
    let mut levels = vec![vec![v(0)]];
    for k in 1..kk {
        levels.push(((1i64 << k)..(1i64 << (k + 1))).map(v).collect());
    }
    levels.push(vec![spec.root()]);
    levels
}

/// Lower bound on the level-packing conductance using the worst distance
/// `2^(k+2)` between consecutive levels, and the weakest root edge of the
/// last level.
pub fn baumler_conductance(spec: &ChainSpec) -> f64 {
    let levels = baumler_levels(spec);
    let last = levels.len() - 2;
    let mut resistance = KahanSum::new();
    for k in 0..last {
        let size = (levels[k].len() * levels[k + 1].len()) as f64;
        resistance.add(2f64.powf((k as f64 + 2.0) * spec.alpha) / (size * spec.beta));
    }
    let weakest = levels[last]
        .iter()
        .map(|x| spec.root_conductance(x.0))
        .fold(f64::INFINITY, f64::min);
    resistance.add(1.0 / (levels[last].len() as f64 * weakest));
    1.0 / resistance.value()
}

/// Packs all paths through the dyadic levels, sharing each edge equally,
/// and lowers the result to the worst-case bound.
pub fn upper_pipeline_baumler(spec: &ChainSpec) -> Result<PipelineResult> {
    spec.validate()?;
    if !(spec.alpha > 1.0 && spec.alpha < 3.0) || is_three(spec.alpha) {
        return Err(invalid(format!("upper-baumler needs 1 < alpha < 3, got {}", spec.alpha)));
    }
    let levels = baumler_levels(spec);
    let c = baumler_conductance(spec);
    let n = spec.n as f64;
    let mut details = BTreeMap::new();
    details.insert("levels".into(), levels.len() as f64);
    details.insert("c_lower".into(), c);
    let scaled = if spec.alpha < 2.0 {
        c
    } else if (spec.alpha - 2.0).abs() <= 1e-12 {
        c * n.ln()
    } else {
        c * n.powf(spec.alpha - 2.0)
    };
    details.insert("c_lower_scaled".into(), scaled);
    let mut transcript = SurgeryTranscript::new();
    transcript.push(SurgeryStep::PackLevels { levels });
    transcript.push(SurgeryStep::LowerConductance { u: v(0), v: spec.root(), to: c });
    upper_single_edge(Pipeline::UpperBaumler, spec, transcript, c, details)
}

// ---- sandwich ------------------------------------------------------------------

/// Lower-pipeline variance, exact chain variance and upper-pipeline variance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SandwichRow {
    pub n: usize,
    pub lower: f64,
    pub oracle: f64,
    pub upper: f64,
}

impl SandwichRow {
    pub fn holds(&self) -> bool {
        self.lower < self.oracle && self.oracle < self.upper
    }
}

/// Runs both pipelines for `spec.alpha` and the exact solve at one `N`.
pub fn sandwich(spec: &ChainSpec) -> Result<SandwichRow> {
    let lo = Pipeline::lower_for(spec.alpha)
        .ok_or_else(|| invalid(format!("no lower pipeline for alpha = {}", spec.alpha)))?;
    let up = Pipeline::upper_for(spec.alpha)
        .ok_or_else(|| invalid(format!("no upper pipeline for alpha = {}", spec.alpha)))?;
    let lower = lo.run(spec)?.variance_at_origin()?;
    let upper = up.run(spec)?.variance_at_origin()?;
    let oracle = real_chain_variance(spec)?;
    Ok(SandwichRow { n: spec.n, lower, oracle, upper })
}
