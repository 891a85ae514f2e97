//! Integer-valued field on a conductance graph: exact enumeration for tiny
//! graphs and heat-bath Monte Carlo for larger ones.
//!
//! Heights live on the free vertices, the root is pinned at zero, and a
//! configuration has weight `exp(-sum_e c_e psi(phi_u - phi_v))` with
//! `psi(x) = x^2` (or `|x|^q` for the q-SOS enumeration).

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::exact_real::{sample_shifted, VarianceEstimate, VarianceMethod};
use crate::graph_core::{ConductanceGraph, VertexId};
use crate::rng::{stream, Domain};

/// Heights of the free vertices; the root is implicitly zero.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeightConfig {
    pub heights: BTreeMap<VertexId, i64>,
}

impl HeightConfig {
    /// All-zero configuration on the free vertices of `g`.
    pub fn flat(g: &ConductanceGraph) -> Self {
        Self { heights: g.free_vertices().map(|v| (v, 0)).collect() }
    }

    pub fn height(&self, v: VertexId) -> i64 {
        self.heights.get(&v).copied().unwrap_or(0)
    }
}

// ---- enumeration ------------------------------------------------------------

/// Edge potential.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Potential {
    /// `x^2`
    Quadratic,
    /// `|x|^q`
    Power(f64),
}

impl Potential {
    pub fn eval(self, x: i64) -> f64 {
        match self {
            Potential::Quadratic => (x * x) as f64,
            Potential::Power(q) => (x.unsigned_abs() as f64).powf(q),
        }
    }
}

/// Limits for [`enumerate`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnumerationOptions {
    /// Cap on the vertex count, root included.
    pub max_vertices: usize,
    /// Starting height cut-off `M`.
    pub start_m: i64,
    /// Largest `M` tried before giving up.
    pub max_m: i64,
    /// Relative change between `M` and `M + 1` accepted as converged.
    pub rel_tol: f64,
}

impl Default for EnumerationOptions {
    fn default() -> Self {
        Self { max_vertices: 6, start_m: 3, max_m: 12, rel_tol: 1e-8 }
    }
}

/// Exact moments of the field over all heights `|phi| <= m`.
#[derive(Clone, Debug)]
pub struct Enumeration {
    /// Free vertices in index order.
    pub vertices: Vec<VertexId>,
    /// `E[phi_a]`.
    pub mean: Vec<f64>,
    /// `E[phi_a phi_b]`.
    pub second: Vec<Vec<f64>>,
    /// Log of the (unnormalised) partition function.
    pub ln_z: f64,
    /// Height cut-off actually used.
    pub m: i64,
}

impl Enumeration {
    fn index(&self, v: VertexId) -> Result<usize> {
        self.vertices
            .binary_search(&v)
            .map_err(|_| Error::UnknownVertex(v))
    }

    pub fn variance(&self, v: VertexId) -> Result<f64> {
        let a = self.index(v)?;
        Ok(self.second[a][a] - self.mean[a] * self.mean[a])
    }

    /// `Var[phi(u) - phi(v)]`; either vertex may be the root.
    pub fn difference_variance(&self, u: VertexId, v: VertexId, root: VertexId) -> Result<f64> {
        let pick = |x: VertexId| if x == root { Ok(None) } else { self.index(x).map(Some) };
        let (a, b) = (pick(u)?, pick(v)?);
        let m = |p: Option<usize>| p.map_or(0.0, |i| self.mean[i]);
        let s = |p: Option<usize>, q: Option<usize>| match (p, q) {
            (Some(p), Some(q)) => self.second[p][q],
            _ => 0.0,
        };
        let diff_mean = m(a) - m(b);
        Ok(s(a, a) + s(b, b) - 2.0 * s(a, b) - diff_mean * diff_mean)
    }
}

/// Energies below `PRUNE` relative to the flat configuration are kept; the
/// dropped mass is below `e^-60` per configuration.
const PRUNE: f64 = 60.0;

fn enumerate_at(
    g: &ConductanceGraph,
    vertices: &[VertexId],
    pot: Potential,
    m: i64,
) -> (Vec<f64>, Vec<Vec<f64>>, f64) {
    let n = vertices.len();
    let root = g.root();
    let idx: BTreeMap<VertexId, usize> = vertices.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    // For vertex k: conductance to the root and to each earlier vertex.
    let mut to_root = vec![0.0; n];
    let mut earlier: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (k, &v) in vertices.iter().enumerate() {
        for (w, c) in g.neighbors(v) {
            if w == root {
                to_root[k] += c;
            } else if let Some(&j) = idx.get(&w) {
                if j < k {
                    earlier[k].push((j, c));
                }
            }
        }
    }
    let table: Vec<f64> = (0..=2 * m).map(|x| pot.eval(x)).collect();
    let psi = |x: i64| table[x.unsigned_abs() as usize];

    struct Acc {
        z: f64,
        first: Vec<f64>,
        second: Vec<Vec<f64>>,
    }
    let mut acc = Acc { z: 0.0, first: vec![0.0; n], second: vec![vec![0.0; n]; n] };
    let mut phi = vec![0i64; n];

    fn dfs(
        k: usize,
        energy: f64,
        phi: &mut Vec<i64>,
        m: i64,
        to_root: &[f64],
        earlier: &[Vec<(usize, f64)>],
        psi: &dyn Fn(i64) -> f64,
        acc: &mut Acc,
    ) {
        let n = phi.len();
        if k == n {
            let w = (-energy).exp();
            acc.z += w;
            for a in 0..n {
                let pa = phi[a] as f64 * w;
                acc.first[a] += pa;
                for b in a..n {
                    acc.second[a][b] += pa * phi[b] as f64;
                }
            }
            return;
        }
        for h in -m..=m {
            let mut e = energy + to_root[k] * psi(h);
            for &(j, c) in &earlier[k] {
                e += c * psi(h - phi[j]);
            }
            if e > PRUNE {
                continue;
            }
            phi[k] = h;
            dfs(k + 1, e, phi, m, to_root, earlier, psi, acc);
        }
    }
    dfs(0, 0.0, &mut phi, m, &to_root, &earlier, &psi, &mut acc);
    let mut second = acc.second;
    for a in 0..n {
        for b in a..n {
            second[a][b] /= acc.z;
            second[b][a] = second[a][b];
        }
    }
    let mean = acc.first.iter().map(|x| x / acc.z).collect();
    (mean, second, acc.z.ln())
}

/// Exact moments by enumeration, raising `M` until the second moments and
/// `ln Z` change by less than `opts.rel_tol` between `M` and `M + 1`.
pub fn enumerate(g: &ConductanceGraph, pot: Potential, opts: &EnumerationOptions) -> Result<Enumeration> {
    if g.num_vertices() > opts.max_vertices {
        return Err(Error::TooLarge {
            what: "enumeration graph",
            size: g.num_vertices(),
            limit: opts.max_vertices,
        });
    }
    if opts.start_m < 1 {
        return Err(invalid(format!("height cut-off must be at least 1, got {}", opts.start_m)));
    }
    let vertices: Vec<VertexId> = g.free_vertices().collect();
    let comp = g.root_component();
    if let Some(&v) = vertices.iter().find(|v| !comp.contains(v)) {
        return Err(Error::Disconnected(v));
    }
    let mut m = opts.start_m;
    let mut prev = enumerate_at(g, &vertices, pot, m);
    let mut change = f64::INFINITY;
    while m < opts.max_m {
        let next = enumerate_at(g, &vertices, pot, m + 1);
        change = relative_change(&prev, &next);
        m += 1;
        prev = next;
        if change < opts.rel_tol {
            let (mean, second, ln_z) = prev;
            return Ok(Enumeration { vertices, mean, second, ln_z, m });
        }
    }
    Err(Error::NonConvergentTruncation { max_m: opts.max_m, change })
}

/// Moments at a fixed cut-off `m`, without the convergence check.
pub fn enumerate_at_cutoff(g: &ConductanceGraph, pot: Potential, m: i64) -> Result<Enumeration> {
    if m < 1 {
        return Err(invalid(format!("height cut-off must be at least 1, got {m}")));
    }
    let vertices: Vec<VertexId> = g.free_vertices().collect();
    let comp = g.root_component();
    if let Some(&v) = vertices.iter().find(|v| !comp.contains(v)) {
        return Err(Error::Disconnected(v));
    }
    let (mean, second, ln_z) = enumerate_at(g, &vertices, pot, m);
    Ok(Enumeration { vertices, mean, second, ln_z, m })
}

/// Starting cut-off for weakly coupled graphs: eight standard deviations of
/// the widest real-valued marginal, at least 3.
pub fn suggested_cutoff(g: &ConductanceGraph) -> Result<i64> {
    let cov = crate::exact_real::RealCovariance::new(g)?;
    let widest = g.free_vertices().map(|v| cov.variance(v)).fold(0.0f64, f64::max);
    if !widest.is_finite() {
        return Err(Error::Disconnected(g.free_vertices().find(|&v| cov.variance(v).is_infinite()).unwrap()));
    }
    Ok(((8.0 * widest.sqrt()).ceil() as i64 + 2).max(3))
}

fn relative_change(a: &(Vec<f64>, Vec<Vec<f64>>, f64), b: &(Vec<f64>, Vec<Vec<f64>>, f64)) -> f64 {
    let mut worst = ((a.2 - b.2) / b.2.abs().max(1.0)).abs();
    let n = b.1.len();
    for i in 0..n {
        for j in 0..n {
            // Off-diagonal moments may vanish; measure them against the diagonal.
            let scale = (b.1[i][i] * b.1[j][j]).sqrt().max(1e-300);
            worst = worst.max(((a.1[i][j] - b.1[i][j]) / scale).abs());
        }
    }
    worst
}

/// Exact `Var[phi(v)]` of the integer-valued field with automatic cut-off.
pub fn exact_iv_variance(g: &ConductanceGraph, v: VertexId, m: i64) -> Result<VarianceEstimate> {
    let v = g.resolve(v).ok_or(Error::UnknownVertex(v))?;
    if v == g.root() {
        return Err(invalid("the root height is pinned"));
    }
    let opts = EnumerationOptions { start_m: m, ..Default::default() };
    let e = enumerate(g, Potential::Quadratic, &opts)?;
    Ok(VarianceEstimate::exact(e.variance(v)?, VarianceMethod::EnumerationExact))
}

// ---- heat bath ----------------------------------------------------------------

/// Monte Carlo run lengths and seeding.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McmcParams {
    pub burn_in_sweeps: u64,
    pub measure_sweeps: u64,
    pub thinning: u64,
    pub seed: u64,
    pub batch_count: u64,
    /// Stream index, so independent replicas never share randomness.
    #[serde(default)]
    pub replica: u64,
    /// Visit vertices in random order instead of ascending id.
    #[serde(default)]
    pub random_scan: bool,
    /// Edges at least this stiff glue vertices into clusters that also get
    /// collective +-1 shift proposals.
    #[serde(default = "default_stiff")]
    pub stiff_threshold: f64,
}

fn default_stiff() -> f64 {
    2.0
}

impl Default for McmcParams {
    fn default() -> Self {
        Self {
            burn_in_sweeps: 2_000,
            measure_sweeps: 20_000,
            thinning: 1,
            seed: 0,
            batch_count: 32,
            replica: 0,
            random_scan: false,
            stiff_threshold: default_stiff(),
        }
    }
}

impl McmcParams {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in_sweeps == 0 || self.measure_sweeps == 0 || self.thinning == 0 {
            return Err(invalid("sweep counts and thinning must be positive"));
        }
        if self.batch_count < 8 {
            return Err(invalid(format!("need at least 8 batches, got {}", self.batch_count)));
        }
        if self.measure_sweeps / self.thinning < self.batch_count {
            return Err(invalid("fewer measurements than batches"));
        }
        if !(self.stiff_threshold > 0.0) {
            return Err(invalid("stiff threshold must be positive"));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Graph compiled into flat neighbour lists for fast sweeps.
#[derive(Clone, Debug)]
pub(crate) struct CompiledGraph {
    pub vertices: Vec<VertexId>,
    /// `offsets[k]..offsets[k + 1]` indexes the neighbours of vertex `k`.
    pub offsets: Vec<usize>,
    /// Neighbour index, `ROOT` for the root.
    pub targets: Vec<usize>,
    pub conductances: Vec<f64>,
    pub totals: Vec<f64>,
}

pub(crate) const ROOT: usize = usize::MAX;

impl CompiledGraph {
    pub fn new(g: &ConductanceGraph) -> Result<Self> {
        let root = g.root();
        let comp = g.root_component();
        let vertices: Vec<VertexId> = g.free_vertices().collect();
        let idx: BTreeMap<VertexId, usize> = vertices.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let mut offsets = vec![0];
        let (mut targets, mut conductances, mut totals) = (Vec::new(), Vec::new(), Vec::new());
        for &v in &vertices {
            if !comp.contains(&v) {
                return Err(Error::Disconnected(v));
            }
            let mut s = 0.0;
            for (w, c) in g.neighbors(v) {
                targets.push(if w == root { ROOT } else { idx[&w] });
                conductances.push(c);
                s += c;
            }
            offsets.push(targets.len());
            totals.push(s);
        }
        Ok(Self { vertices, offsets, targets, conductances, totals })
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn index(&self, v: VertexId) -> Option<usize> {
        self.vertices.binary_search(&v).ok()
    }

    pub fn neighbours(&self, k: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[k]..self.offsets[k + 1];
        self.targets[r.clone()].iter().copied().zip(self.conductances[r].iter().copied())
    }

    fn centre(&self, k: usize, phi: &[i64]) -> f64 {
        let mut s = 0.0;
        for (t, c) in self.neighbours(k) {
            if t != ROOT {
                s += c * phi[t] as f64;
            }
        }
        s / self.totals[k]
    }

    /// Clusters of two or more vertices joined by edges of conductance at
    /// least `threshold`, root excluded.
    pub fn stiff_clusters(&self, threshold: f64) -> Vec<Vec<usize>> {
        let n = self.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for k in 0..n {
            for (t, c) in self.neighbours(k) {
                if t != ROOT && c >= threshold {
                    let (a, b) = (find(&mut parent, k), find(&mut parent, t));
                    if a != b {
                        parent[a.max(b)] = a.min(b);
                    }
                }
            }
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for k in 0..n {
            let r = find(&mut parent, k);
            groups.entry(r).or_default().push(k);
        }
        groups.into_values().filter(|g| g.len() > 1).collect()
    }
}

/// Heat-bath chain with optional cluster shifts.
pub(crate) struct HeatBath {
    graph: CompiledGraph,
    clusters: Vec<(Vec<usize>, Vec<bool>)>,
    pub phi: Vec<i64>,
    random_scan: bool,
}

impl HeatBath {
    pub fn new(graph: CompiledGraph, stiff_threshold: f64, random_scan: bool) -> Result<Self> {
        if let Some(k) = graph.totals.iter().position(|&s| !(s > 0.0)) {
            return Err(Error::Disconnected(graph.vertices[k]));
        }
        let n = graph.len();
        let clusters = graph
            .stiff_clusters(stiff_threshold)
            .into_iter()
            .map(|c| {
                let mut member = vec![false; n];
                for &k in &c {
                    member[k] = true;
                }
                (c, member)
            })
            .collect();
        Ok(Self { phi: vec![0; n], graph, clusters, random_scan })
    }

    pub fn sweep<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let n = self.graph.len();
        for step in 0..n {
            let k = if self.random_scan { rng.random_range(0..n) } else { step };
            let m = self.graph.centre(k, &self.phi);
            self.phi[k] = sample_shifted(self.graph.totals[k], m, rng);
        }
        for ci in 0..self.clusters.len() {
            self.shift_cluster(ci, rng);
        }
    }

    fn shift_cluster<R: Rng + ?Sized>(&mut self, ci: usize, rng: &mut R) {
        let (members, inside) = &self.clusters[ci];
        let d: i64 = if rng.random::<bool>() { 1 } else { -1 };
        // Only edges leaving the cluster change energy.
        let mut delta = 0.0;
        for &k in members {
            for (t, c) in self.graph.neighbours(k) {
                if t != ROOT && inside[t] {
                    continue;
                }
                let other = if t == ROOT { 0 } else { self.phi[t] };
                let x = (self.phi[k] - other) as f64;
                delta += c * ((x + d as f64).powi(2) - x * x);
            }
        }
        if delta <= 0.0 || rng.random::<f64>() < (-delta).exp() {
            for &k in members {
                self.phi[k] += d;
            }
        }
    }
}

/// One heat-bath sweep: every free vertex is resampled once from its exact
/// conditional law, in ascending id order.
pub fn heat_bath_sweep<R: Rng + ?Sized>(
    g: &ConductanceGraph,
    state: &HeightConfig,
    rng: &mut R,
) -> Result<HeightConfig> {
    let compiled = CompiledGraph::new(g)?;
    let mut hb = HeatBath::new(compiled, f64::INFINITY, false)?;
    for (k, v) in hb.graph.vertices.iter().enumerate() {
        hb.phi[k] = state.height(*v);
    }
    hb.sweep(rng);
    Ok(HeightConfig {
        heights: hb.graph.vertices.iter().copied().zip(hb.phi.iter().copied()).collect(),
    })
}

/// Batch means of a scalar series: `(mean, standard error)`.
pub fn batch_means(xs: &[f64], batches: usize) -> (f64, f64) {
    let per = xs.len() / batches;
    let means: Vec<f64> = (0..batches)
        .map(|b| xs[b * per..(b + 1) * per].iter().sum::<f64>() / per as f64)
        .collect();
    let mean = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (batches as f64 - 1.0);
    (mean, (var / batches as f64).sqrt())
}

/// Heat-bath estimate of `Var[phi(v)]` as the mean of `phi(v)^2` (the mean
/// vanishes by the `phi -> -phi` symmetry), with batch-means error bars.
pub fn mcmc_variance(g: &ConductanceGraph, v: VertexId, params: &McmcParams) -> Result<VarianceEstimate> {
    params.validate()?;
    let v = g.resolve(v).ok_or(Error::UnknownVertex(v))?;
    if v == g.root() {
        return Err(invalid("the root height is pinned"));
    }
    let compiled = CompiledGraph::new(g)?;
    let target = compiled.index(v).ok_or(Error::UnknownVertex(v))?;
    let mut hb = HeatBath::new(compiled, params.stiff_threshold, params.random_scan)?;
    let mut rng = stream(params.seed, Domain::HeatBath, params.replica, 0);
    for _ in 0..params.burn_in_sweeps {
        hb.sweep(&mut rng);
    }
    let count = (params.measure_sweeps / params.thinning) as usize;
    let mut xs = Vec::with_capacity(count);
    for s in 1..=params.measure_sweeps {
        hb.sweep(&mut rng);
        if s % params.thinning == 0 {
            let h = hb.phi[target] as f64;
            xs.push(h * h);
        }
    }
    let (value, std_error) = batch_means(&xs, params.batch_count as usize);
    Ok(VarianceEstimate { value, std_error, method: VarianceMethod::Mcmc, samples_used: xs.len() as u64 })
}

/// Pools `replicas` independent heat-bath runs, one stream each.
pub fn mcmc_variance_replicas(
    g: &ConductanceGraph,
    v: VertexId,
    params: &McmcParams,
    replicas: u64,
) -> Result<VarianceEstimate> {
    if replicas == 0 {
        return Err(invalid("need at least one replica"));
    }
    let runs = (0..replicas)
        .into_par_iter()
        .map(|r| mcmc_variance(g, v, &McmcParams { replica: r, ..*params }))
        .collect::<Result<Vec<_>>>()?;
    let k = replicas as f64;
    let value = runs.iter().map(|e| e.value).sum::<f64>() / k;
    let se = runs.iter().map(|e| e.std_error.powi(2)).sum::<f64>().sqrt() / k;
    Ok(VarianceEstimate {
        value,
        std_error: se,
        method: VarianceMethod::Mcmc,
        samples_used: runs.iter().map(|e| e.samples_used).sum(),
    })
}
