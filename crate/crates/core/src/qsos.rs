//! q-SOS chains through their Gaussian-mixture representation.
//!
//! `exp(-|x|^q) = E[exp(-lambda x^2)]` when `lambda` follows the one-sided
//! stable law of index `q/2` with Laplace transform `exp(-t^(q/2))`. Averaging
//! discrete Gaussian chains with such random conductances gives the lower
//! bound, and the `lambda^(-1/2)`-tilted law gives the upper bound. A direct
//! Metropolis sampler and exact enumeration provide the reference values.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::exact_real::{real_gff_variance, sample_shifted, VarianceEstimate, VarianceMethod};
use crate::graph_core::{ChainSpec, ConductanceGraph, Label, VertexId, MAX_GRAPH_HALF_LENGTH};
use crate::iv_chain::{
    batch_means, enumerate, enumerate_at_cutoff, suggested_cutoff, CompiledGraph, EnumerationOptions,
    McmcParams, Potential, ROOT,
};
use crate::rng::{mix, pair_key, stream, Domain};
use crate::special::{hurwitz_zeta, KahanSum};

// ---- mixing laws ----------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixtureKind {
    /// One-sided stable law of index `q/2`.
    MuQ,
    /// The same law tilted by `lambda^(-1/2)`.
    TildeMuQ,
}

/// Law of a random conductance multiplier.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureLaw {
    pub q: f64,
    pub kind: MixtureKind,
}

impl MixtureLaw {
    pub fn new(q: f64, kind: MixtureKind) -> Result<Self> {
        if !(q > 0.0 && q <= 2.0) {
            return Err(invalid(format!("q must lie in (0, 2], got {q}")));
        }
        Ok(Self { q, kind })
    }

    /// At `q = 2` both laws are the point mass at 1.
    pub fn is_degenerate(&self) -> bool {
        self.q == 2.0
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.is_degenerate() {
            return 1.0;
        }
        match self.kind {
            MixtureKind::MuQ => stable_draw(self.q / 2.0, rng),
            MixtureKind::TildeMuQ => tilted_stable_draw(self.q / 2.0, rng).0,
        }
    }
}

fn check_open_q(q: f64) -> Result<()> {
    if !(q > 0.0 && q < 2.0) {
        return Err(invalid(format!("q must lie in (0, 2) for the stable sampler, got {q}")));
    }
    Ok(())
}

/// `ln A(u)` in the angle representation of the one-sided stable law:
/// `A(u) = sin(a u)^(a/(1-a)) sin((1-a) u) / sin(u)^(1/(1-a))`.
fn ln_zolotarev(a: f64, u: f64) -> f64 {
    let b = 1.0 - a;
    (a / b) * (a * u).sin().ln() + (b * u).sin().ln() - (1.0 / b) * u.sin().ln()
}

/// Limit of `ln A(u)` as `u -> 0`, which is also its minimum.
fn ln_zolotarev_at_zero(a: f64) -> f64 {
    let b = 1.0 - a;
    (a / b) * a.ln() + b.ln()
}

fn uniform_angle<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random::<f64>() * PI;
        if u > 0.0 {
            return u;
        }
    }
}

/// `X = (A(U) / E)^((1-a)/a)` with `U` uniform on `(0, pi)`, `E ~ Exp(1)`.
fn stable_draw<R: Rng + ?Sized>(a: f64, rng: &mut R) -> f64 {
    let u = uniform_angle(rng);
    let e: f64 = Exp1.sample(rng);
    (((1.0 - a) / a) * (ln_zolotarev(a, u) - e.ln())).exp()
}

/// Tilting the joint law of `(U, E)` by `X^(-1/2) = (E / A(U))^r` with
/// `r = (1-a)/(2a)` makes `E ~ Gamma(1 + r)` and gives `U` density
/// proportional to `A(u)^(-r)`, drawn by rejection from the uniform angle.
/// Returns the draw and the number of angle proposals used.
fn tilted_stable_draw<R: Rng + ?Sized>(a: f64, rng: &mut R) -> (f64, u64) {
    let r = (1.0 - a) / (2.0 * a);
    let floor = ln_zolotarev_at_zero(a);
    let mut tries = 0;
    let u = loop {
        tries += 1;
        let u = uniform_angle(rng);
        let v: f64 = rng.random();
        if v.ln() <= -r * (ln_zolotarev(a, u) - floor) {
            break u;
        }
    };
    let e: f64 = Gamma::new(1.0 + r, 1.0).expect("shape is positive").sample(rng);
    ((((1.0 - a) / a) * (ln_zolotarev(a, u) - e.ln())).exp(), tries)
}

/// Draw from `mu_q`, normalised so that `E[exp(-t lambda)] = exp(-t^(q/2))`.
pub fn sample_mu_q<R: Rng + ?Sized>(q: f64, rng: &mut R) -> Result<f64> {
    check_open_q(q)?;
    Ok(stable_draw(q / 2.0, rng))
}

/// Draw from the `lambda^(-1/2)`-tilted law.
pub fn sample_tilde_mu_q<R: Rng + ?Sized>(q: f64, rng: &mut R) -> Result<f64> {
    Ok(sample_tilde_mu_q_counted(q, rng)?.0)
}

/// As [`sample_tilde_mu_q`], also returning the number of proposals spent.
pub fn sample_tilde_mu_q_counted<R: Rng + ?Sized>(q: f64, rng: &mut R) -> Result<(f64, u64)> {
    check_open_q(q)?;
    Ok(tilted_stable_draw(q / 2.0, rng))
}

// ---- chain parameters -------------------------------------------------------------

/// q-SOS chain together with the parameters of its Gaussian representation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QChainParams {
    pub spec: ChainSpec,
}

impl QChainParams {
    pub fn new(spec: ChainSpec) -> Result<Self> {
        spec.validate()?;
        if spec.q.is_none() {
            return Err(invalid("q-SOS parameters need q"));
        }
        Ok(Self { spec })
    }

    pub fn q(&self) -> f64 {
        self.spec.q_or_two()
    }

    /// `beta^(2/q)`
    pub fn beta_q(&self) -> f64 {
        self.spec.beta.powf(2.0 / self.q())
    }

    /// `2 alpha / q`
    pub fn alpha_q(&self) -> f64 {
        2.0 * self.spec.alpha / self.q()
    }
}

/// Outside partners per side drawn explicitly for tilted root edges, in
/// units of `N`. Dropping the rest lowers conductances, so the variance can
/// only grow.
pub const TILTED_TAIL_RANGE: usize = 16;

/// Chain with random conductances `beta_q lambda_ij |i - j|^(-alpha_q)`,
/// fully determined by `(seed, draw)`.
///
/// Root edges: under `mu_q` the sum of all outside couplings of a vertex is
/// again a single stable draw times `beta_q W^(2/q)`, with `W` the tail sum
/// at exponent `alpha`. Under the tilted law each outside partner within
/// `TILTED_TAIL_RANGE * N` gets its own draw and the remainder is dropped.
pub fn conductance_field(params: &QChainParams, kind: MixtureKind, seed: u64, draw: u64) -> Result<ConductanceGraph> {
    let spec = &params.spec;
    if spec.n > MAX_GRAPH_HALF_LENGTH {
        return Err(Error::TooLarge {
            what: "conductance field",
            size: 2 * spec.n,
            limit: 2 * MAX_GRAPH_HALF_LENGTH,
        });
    }
    let law = MixtureLaw::new(params.q(), kind)?;
    let (beta_q, alpha_q) = (params.beta_q(), params.alpha_q());
    let n = spec.n as i64;
    let root = spec.root();
    let mut g = ConductanceGraph::new(root);
    g.set_label(root, Label::Line(root.0));
    for i in spec.free_positions() {
        g.add_vertex(VertexId(i));
        g.set_label(VertexId(i), Label::Line(i));
    }
    let lambda = |key: u64| law.sample(&mut stream(seed, Domain::ConductanceField, draw, key));
    for i in spec.free_positions() {
        for j in (i + 1)..n {
            let c = beta_q * ((j - i) as f64).powf(-alpha_q) * lambda(pair_key(i, j));
            g.add_edge(VertexId(i), VertexId(j), c)?;
        }
        let c = if law.is_degenerate() {
            beta_q * (hurwitz_zeta(alpha_q, (n - i) as f64) + hurwitz_zeta(alpha_q, (n + i) as f64))
        } else if kind == MixtureKind::MuQ {
            let w = hurwitz_zeta(spec.alpha, (n - i) as f64) + hurwitz_zeta(spec.alpha, (n + i) as f64);
            beta_q * w.powf(2.0 / law.q) * lambda(pair_key(i, n))
        } else {
            let mut rng = stream(seed, Domain::ConductanceField, draw, mix(&[u64::MAX, i as u64]));
            let mut acc = KahanSum::new();
            let reach = (TILTED_TAIL_RANGE * spec.n) as i64;
            for d in 1..=reach {
                // Partners at i + (n - i) - 1 + d on the right, mirrored on the left.
                for dist in [n - i - 1 + d, n + i - 1 + d] {
                    acc.add((dist as f64).powf(-alpha_q) * law.sample(&mut rng));
                }
            }
            beta_q * acc.value()
        };
        g.add_edge(VertexId(i), root, c)?;
    }
    Ok(g)
}

// ---- annealed estimators ---------------------------------------------------------

/// How the variance of each random-conductance chain is computed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum InnerMethod {
    /// Heat-bath Monte Carlo of the integer-valued field.
    Mcmc(McmcParams),
    /// Exact enumeration of the integer-valued field; also yields the
    /// partition-function-weighted ratio.
    Enumeration,
    /// Real-valued field, solved exactly.
    Real,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnealedOptions {
    pub draws: u64,
    pub seed: u64,
    pub inner: InnerMethod,
}

/// Outcome of an annealed average over conductance draws.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AnnealedReport {
    pub kind: MixtureKind,
    /// Plain average of the per-draw variances.
    pub estimate: VarianceEstimate,
    /// `E[Var Z] / E[Z]` and its standard error; enumeration mode only.
    pub ratio: Option<(f64, f64)>,
    pub per_draw: Vec<f64>,
    pub per_draw_ln_z: Option<Vec<f64>>,
}

fn draw_variance(g: &ConductanceGraph, inner: &InnerMethod, seed: u64, draw: u64) -> Result<(f64, Option<f64>)> {
    let origin = VertexId(0);
    match inner {
        InnerMethod::Real => Ok((real_gff_variance(g, origin)?.value, None)),
        InnerMethod::Mcmc(p) => {
            let p = p.with_seed(mix(&[seed, draw]));
            Ok((crate::iv_chain::mcmc_variance(g, origin, &p)?.value, None))
        }
        InnerMethod::Enumeration => {
            let m = suggested_cutoff(g)?;
            let opts = EnumerationOptions { start_m: m, max_m: m + 8, ..Default::default() };
            let e = enumerate(g, Potential::Quadratic, &opts)?;
            Ok((e.variance(origin)?, Some(e.ln_z)))
        }
    }
}

/// Annealed average of `Var[phi(0)]` over i.i.d. conductance fields of the
/// given kind. Draws run in parallel; each owns its random streams.
pub fn annealed_estimate(params: &QChainParams, kind: MixtureKind, opts: &AnnealedOptions) -> Result<AnnealedReport> {
    if opts.draws < 2 {
        return Err(invalid("need at least two conductance draws"));
    }
    if let InnerMethod::Mcmc(p) = &opts.inner {
        p.validate()?;
    }
    let rows: Vec<(f64, Option<f64>)> = (0..opts.draws)
        .into_par_iter()
        .map(|d| {
            let g = conductance_field(params, kind, opts.seed, d)?;
            draw_variance(&g, &opts.inner, opts.seed, d)
        })
        .collect::<Result<_>>()?;
    let per_draw: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let k = per_draw.len() as f64;
    let mean = per_draw.iter().copied().collect::<KahanSum>().value() / k;
    let var = per_draw.iter().map(|v| (v - mean).powi(2)).collect::<KahanSum>().value() / (k - 1.0);
    // The outer average is a Monte Carlo estimate whatever the inner method.
    let estimate = VarianceEstimate {
        value: mean,
        std_error: (var / k).sqrt(),
        method: VarianceMethod::Mcmc,
        samples_used: opts.draws,
    };
    let per_draw_ln_z: Option<Vec<f64>> = rows.iter().map(|r| r.1).collect();
    let ratio = per_draw_ln_z.as_ref().map(|lz| weighted_ratio(&per_draw, lz));
    Ok(AnnealedReport { kind, estimate, ratio, per_draw, per_draw_ln_z })
}

/// `sum w v / sum w` with `w = exp(ln_z)`, and its delta-method error.
fn weighted_ratio(values: &[f64], ln_z: &[f64]) -> (f64, f64) {
    let top = ln_z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = ln_z.iter().map(|l| (l - top).exp()).collect();
    let sw: f64 = w.iter().sum();
    let r = w.iter().zip(values).map(|(w, v)| w * v).sum::<f64>() / sw;
    let spread: f64 = w.iter().zip(values).map(|(w, v)| (w * (v - r)).powi(2)).sum();
    (r, spread.sqrt() / sw)
}

/// Average of the integer-valued variance over `mu_q` conductance fields,
/// by heat-bath Monte Carlo per draw.
pub fn annealed_lower_estimate(params: &QChainParams, mcmc: &McmcParams, draws: u64) -> Result<VarianceEstimate> {
    let opts = AnnealedOptions { draws, seed: mcmc.seed, inner: InnerMethod::Mcmc(*mcmc) };
    Ok(annealed_estimate(params, MixtureKind::MuQ, &opts)?.estimate)
}

/// Same over tilted conductance fields.
pub fn annealed_upper_estimate(params: &QChainParams, mcmc: &McmcParams, draws: u64) -> Result<VarianceEstimate> {
    let opts = AnnealedOptions { draws, seed: mcmc.seed, inner: InnerMethod::Mcmc(*mcmc) };
    Ok(annealed_estimate(params, MixtureKind::TildeMuQ, &opts)?.estimate)
}

// ---- direct q-SOS ----------------------------------------------------------------

fn q_of(spec: &ChainSpec) -> f64 {
    spec.q_or_two()
}

/// Default enumeration limits for `|x|^q` edges, whose tails decay only
/// exponentially at `q = 1`.
pub fn qsos_enumeration_options(m: i64) -> EnumerationOptions {
    EnumerationOptions { start_m: m, max_m: m.max(60), ..Default::default() }
}

/// Exact `Var[phi(0)]` of the q-SOS chain, for `N <= 3`.
pub fn qsos_exact(spec: &ChainSpec, m: i64) -> Result<VarianceEstimate> {
    qsos_exact_with(spec, &qsos_enumeration_options(m))
}

pub fn qsos_exact_with(spec: &ChainSpec, opts: &EnumerationOptions) -> Result<VarianceEstimate> {
    spec.validate()?;
    if spec.n > 3 {
        return Err(Error::TooLarge { what: "q-SOS enumeration chain", size: spec.n, limit: 3 });
    }
    let g = crate::graph_core::new_chain_graph(spec)?;
    let pot = if q_of(spec) == 2.0 { Potential::Quadratic } else { Potential::Power(q_of(spec)) };
    let e = enumerate(&g, pot, opts)?;
    Ok(VarianceEstimate::exact(e.variance(VertexId(0))?, VarianceMethod::EnumerationExact))
}

/// Direct Metropolis run with its per-move acceptance rates.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QsosMcmcRun {
    pub estimate: VarianceEstimate,
    pub acceptance_step: f64,
    pub acceptance_gaussian: f64,
    pub acceptance_shift: f64,
}

struct QsosSampler {
    graph: CompiledGraph,
    q: f64,
    pow_table: Vec<f64>,
    clusters: Vec<(Vec<usize>, Vec<bool>)>,
    phi: Vec<i64>,
    tally: [(u64, u64); 3],
}

impl QsosSampler {
    fn psi(&self, x: i64) -> f64 {
        let a = x.unsigned_abs() as usize;
        match self.pow_table.get(a) {
            Some(&v) => v,
            None => (a as f64).powf(self.q),
        }
    }

    fn local_energy(&self, k: usize, h: i64) -> f64 {
        let mut e = 0.0;
        for (t, c) in self.graph.neighbours(k) {
            let other = if t == ROOT { 0 } else { self.phi[t] };
            e += c * self.psi(h - other);
        }
        e
    }

    fn sweep<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for k in 0..self.graph.len() {
            let old = self.phi[k];
            let e_old = self.local_energy(k, old);
            if rng.random::<bool>() {
                let new = old + if rng.random::<bool>() { 1 } else { -1 };
                let accept = self.metropolis(e_old, self.local_energy(k, new), 0.0, rng);
                self.record(0, accept, k, new);
            } else {
                let s = self.graph.totals[k];
                let m = self.centre(k);
                let new = sample_shifted(s, m, rng);
                // Independence proposal: the ratio of proposal masses enters.
                let log_q = s * ((new as f64 - m).powi(2) - (old as f64 - m).powi(2));
                let accept = self.metropolis(e_old, self.local_energy(k, new), log_q, rng);
                self.record(1, accept, k, new);
            }
        }
        for ci in 0..self.clusters.len() {
            self.shift(ci, rng);
        }
    }

    fn centre(&self, k: usize) -> f64 {
        let mut s = 0.0;
        for (t, c) in self.graph.neighbours(k) {
            if t != ROOT {
                s += c * self.phi[t] as f64;
            }
        }
        s / self.graph.totals[k]
    }

    fn metropolis<R: Rng + ?Sized>(&self, e_old: f64, e_new: f64, log_q: f64, rng: &mut R) -> bool {
        let log_a = e_old - e_new + log_q;
        log_a >= 0.0 || rng.random::<f64>().ln() < log_a
    }

    fn record(&mut self, kind: usize, accept: bool, k: usize, new: i64) {
        self.tally[kind].1 += 1;
        if accept {
            self.tally[kind].0 += 1;
            self.phi[k] = new;
        }
    }

    fn shift<R: Rng + ?Sized>(&mut self, ci: usize, rng: &mut R) {
        let d: i64 = if rng.random::<bool>() { 1 } else { -1 };
        let (members, inside) = &self.clusters[ci];
        let mut delta = 0.0;
        for &k in members {
            for (t, c) in self.graph.neighbours(k) {
                if t != ROOT && inside[t] {
                    continue;
                }
                let other = if t == ROOT { 0 } else { self.phi[t] };
                let x = self.phi[k] - other;
                delta += c * (self.psi(x + d) - self.psi(x));
            }
        }
        let accept = delta <= 0.0 || rng.random::<f64>() < (-delta).exp();
        self.tally[2].1 += 1;
        if accept {
            self.tally[2].0 += 1;
            for &k in &self.clusters[ci].0 {
                self.phi[k] += d;
            }
        }
    }
}

/// Metropolis estimate of `Var[phi(0)]` for the q-SOS chain. Each sweep
/// visits every vertex once with either a `+-1` step or a discrete Gaussian
/// proposal around the local weighted mean, then tries shifting each stiff
/// cluster by one.
pub fn qsos_mcmc(spec: &ChainSpec, params: &McmcParams) -> Result<QsosMcmcRun> {
    params.validate()?;
    let g = crate::graph_core::new_chain_graph(spec)?;
    let graph = CompiledGraph::new(&g)?;
    let target = graph.index(VertexId(0)).ok_or(Error::UnknownVertex(VertexId(0)))?;
    let n = graph.len();
    let q = q_of(spec);
    let clusters = graph
        .stiff_clusters(params.stiff_threshold)
        .into_iter()
        .map(|c| {
            let mut member = vec![false; n];
            for &k in &c {
                member[k] = true;
            }
            (c, member)
        })
        .collect();
    let pow_table = (0..=512).map(|x| (x as f64).powf(q)).collect();
    let mut s = QsosSampler { graph, q, pow_table, clusters, phi: vec![0; n], tally: [(0, 0); 3] };
    let mut rng = stream(params.seed, Domain::QsosMetropolis, params.replica, 0);
    for _ in 0..params.burn_in_sweeps {
        s.sweep(&mut rng);
    }
    s.tally = [(0, 0); 3];
    let mut xs = Vec::with_capacity((params.measure_sweeps / params.thinning) as usize);
    for sweep in 1..=params.measure_sweeps {
        s.sweep(&mut rng);
        if sweep % params.thinning == 0 {
            let h = s.phi[target] as f64;
            xs.push(h * h);
        }
    }
    let (value, std_error) = batch_means(&xs, params.batch_count as usize);
    let rate = |(a, t): (u64, u64)| if t == 0 { f64::NAN } else { a as f64 / t as f64 };
    Ok(QsosMcmcRun {
        estimate: VarianceEstimate { value, std_error, method: VarianceMethod::Mcmc, samples_used: xs.len() as u64 },
        acceptance_step: rate(s.tally[0]),
        acceptance_gaussian: rate(s.tally[1]),
        acceptance_shift: rate(s.tally[2]),
    })
}

// ---- derivative identity ------------------------------------------------------------

/// Comparison of `d ln Z / d lambda` on one edge with minus the coupling
/// coefficient times `Var[phi(k) - phi(l)]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DerivativeReport {
    pub lambda: f64,
    pub finite_difference: f64,
    pub identity: f64,
    pub relative_error: f64,
    pub difference_variance: f64,
    /// `1 / (2 c_kl)`, the Gaussian domination bound.
    pub domination_bound: f64,
    pub bound_holds: bool,
}

/// Vertex cap for the derivative check, root included.
pub const DERIVATIVE_MAX_VERTICES: usize = 4;

/// Checks the edge derivative identity for the integer-valued field on `g`.
/// The conductance of `{k, l}` is read as `coefficient * lambda`; the
/// derivative in `lambda` is a central difference with step `1e-5 lambda`,
/// at the same height cut-off on both sides.
pub fn derivative_identity_check(
    g: &ConductanceGraph,
    k: VertexId,
    l: VertexId,
    coefficient: f64,
) -> Result<DerivativeReport> {
    if g.num_vertices() > DERIVATIVE_MAX_VERTICES {
        return Err(Error::TooLarge {
            what: "derivative check graph",
            size: g.num_vertices(),
            limit: DERIVATIVE_MAX_VERTICES,
        });
    }
    if !(coefficient > 0.0 && coefficient.is_finite()) {
        return Err(invalid("coefficient must be positive"));
    }
    let c = g.conductance(k, l);
    if c == 0.0 {
        return Err(Error::MissingEdge(k, l));
    }
    let base = enumerate(g, Potential::Quadratic, &EnumerationOptions { max_m: 40, ..Default::default() })?;
    let m = base.m;
    let lambda = c / coefficient;
    let h = 1e-5 * lambda;
    let ln_z_at = |lam: f64| -> Result<f64> {
        let mut g2 = g.clone();
        g2.set_conductance_mut(k, l, coefficient * lam)?;
        Ok(enumerate_at_cutoff(&g2, Potential::Quadratic, m)?.ln_z)
    };
    let fd = (ln_z_at(lambda + h)? - ln_z_at(lambda - h)?) / (2.0 * h);
    let dv = base.difference_variance(k, l, g.root())?;
    let identity = -coefficient * dv;
    let bound = 1.0 / (2.0 * c);
    Ok(DerivativeReport {
        lambda,
        finite_difference: fd,
        identity,
        relative_error: ((fd - identity) / identity).abs(),
        difference_variance: dv,
        domination_bound: bound,
        bound_holds: dv <= bound * (1.0 + 1e-12),
    })
}
