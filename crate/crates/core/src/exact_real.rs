//! Exact oracles: the real-valued field through Laplacian solves, and the
//! one-dimensional discrete Gaussian law.
//!
//! For conductances `c_e` the real-valued field has density proportional to
//! `exp(-sum_e c_e (phi_u - phi_v)^2)` with the root pinned at zero, so its
//! covariance is `L^{-1} / 2` where `L` is the Laplacian with the root row and
//! column removed.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::graph_core::{ChainSpec, ConductanceGraph, VertexId};
use crate::special::normal_interval;

/// Largest number of free vertices handed to a dense factorisation.
pub const MAX_DENSE_VERTICES: usize = 8192;

/// How a variance was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceMethod {
    LaplacianExact,
    SeriesExact,
    EnumerationExact,
    Mcmc,
}

impl VarianceMethod {
    pub fn is_exact(self) -> bool {
        self != VarianceMethod::Mcmc
    }

    pub fn as_str(self) -> &'static str {
        match self {
            VarianceMethod::LaplacianExact => "laplacian-exact",
            VarianceMethod::SeriesExact => "series-exact",
            VarianceMethod::EnumerationExact => "enumeration-exact",
            VarianceMethod::Mcmc => "mcmc",
        }
    }
}

/// Point value with uncertainty. An infinite value marks a vertex cut off
/// from the root.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    #[serde(with = "maybe_infinite")]
    pub value: f64,
    pub std_error: f64,
    pub method: VarianceMethod,
    pub samples_used: u64,
}

impl VarianceEstimate {
    pub fn exact(value: f64, method: VarianceMethod) -> Self {
        Self { value, std_error: 0.0, method, samples_used: 0 }
    }

    pub fn is_infinite(&self) -> bool {
        self.value.is_infinite()
    }
}

mod maybe_infinite {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str("infinite")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Text(t) if t == "infinite" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("unexpected `{t}`"))),
        }
    }
}

/// Covariance of the real-valued field on the root component.
#[derive(Clone, Debug)]
pub struct RealCovariance {
    index: BTreeMap<VertexId, usize>,
    cov: DMatrix<f64>,
    root: VertexId,
}

impl RealCovariance {
    /// Factorises the reduced Laplacian of `g`'s root component.
    pub fn new(g: &ConductanceGraph) -> Result<Self> {
        let root = g.root();
        let index: BTreeMap<VertexId, usize> = g
            .root_component()
            .into_iter()
            .filter(|&v| v != root)
            .enumerate()
            .map(|(i, v)| (v, i))
            .collect();
        let n = index.len();
        if n > MAX_DENSE_VERTICES {
            return Err(Error::TooLarge { what: "Laplacian", size: n, limit: MAX_DENSE_VERTICES });
        }
        let mut lap = DMatrix::<f64>::zeros(n, n);
        for (&v, &i) in &index {
            for (w, c) in g.neighbors(v) {
                lap[(i, i)] += c;
                if let Some(&j) = index.get(&w) {
                    lap[(i, j)] -= c;
                }
            }
        }
        let inv = lap
            .cholesky()
            .ok_or_else(|| Error::Numerical("reduced Laplacian is not positive definite".into()))?
            .inverse();
        Ok(Self { index, cov: inv * 0.5, root })
    }

    /// `Var[phi(v)]`; infinite off the root component.
    pub fn variance(&self, v: VertexId) -> f64 {
        if v == self.root {
            return 0.0;
        }
        match self.index.get(&v) {
            Some(&i) => self.cov[(i, i)],
            None => f64::INFINITY,
        }
    }

    /// `Var[phi(u) - phi(v)]`.
    pub fn difference_variance(&self, u: VertexId, v: VertexId) -> f64 {
        if u == v {
            return 0.0;
        }
        let idx = |x: VertexId| if x == self.root { Some(None) } else { self.index.get(&x).map(|&i| Some(i)) };
        match (idx(u), idx(v)) {
            (Some(a), Some(b)) => {
                let get = |p: Option<usize>, q: Option<usize>| match (p, q) {
                    (Some(p), Some(q)) => self.cov[(p, q)],
                    _ => 0.0,
                };
                get(a, a) + get(b, b) - 2.0 * get(a, b)
            }
            _ => f64::INFINITY,
        }
    }
}

fn check_free(g: &ConductanceGraph, v: VertexId) -> Result<VertexId> {
    let r = g.resolve(v).ok_or(Error::UnknownVertex(v))?;
    if r == g.root() {
        return Err(invalid(format!("vertex {v} is the root, whose height is pinned")));
    }
    Ok(r)
}

/// Exact `Var[phi(v)]` of the real-valued field.
pub fn real_gff_variance(g: &ConductanceGraph, v: VertexId) -> Result<VarianceEstimate> {
    let v = check_free(g, v)?;
    if !g.root_component().contains(&v) {
        return Ok(VarianceEstimate::exact(f64::INFINITY, VarianceMethod::LaplacianExact));
    }
    let cov = RealCovariance::new(g)?;
    Ok(VarianceEstimate::exact(cov.variance(v), VarianceMethod::LaplacianExact))
}

/// Exact `Var[phi(u) - phi(v)]` of the real-valued field.
pub fn real_difference_variance(g: &ConductanceGraph, u: VertexId, v: VertexId) -> Result<f64> {
    let (u, v) = (
        g.resolve(u).ok_or(Error::UnknownVertex(u))?,
        g.resolve(v).ok_or(Error::UnknownVertex(v))?,
    );
    Ok(RealCovariance::new(g)?.difference_variance(u, v))
}

/// Effective resistance between `v` and the root (infinite if disconnected).
pub fn effective_resistance(g: &ConductanceGraph, v: VertexId) -> Result<f64> {
    let v = check_free(g, v)?;
    if !g.root_component().contains(&v) {
        return Ok(f64::INFINITY);
    }
    Ok(2.0 * RealCovariance::new(g)?.variance(v))
}

/// Exact `Var[phi(0)]` of the real-valued chain, without building the graph.
///
/// The reflection `i -> -i` commutes with the Laplacian and fixes `e_0`, so the
/// solve runs on the `N`-dimensional symmetric subspace spanned by `e_0` and
/// `(e_i + e_{-i}) / sqrt 2`.
pub fn real_chain_variance(spec: &ChainSpec) -> Result<f64> {
    spec.validate()?;
    let n = spec.n;
    if n > MAX_DENSE_VERTICES {
        return Err(Error::TooLarge { what: "chain", size: n, limit: MAX_DENSE_VERTICES });
    }
    let ni = n as i64;
    // Pair couplings by distance, and the Laplacian diagonal per position.
    let coupling: Vec<f64> = (0..2 * n).map(|d| if d == 0 { 0.0 } else { spec.pair_conductance(0, d as i64) }).collect();
    let diag = |i: i64| -> f64 {
        let mut s = spec.root_conductance(i);
        for j in (-ni + 1)..ni {
            if j != i {
                s += coupling[(i - j).unsigned_abs() as usize];
            }
        }
        s
    };
    let lap = |i: i64, j: i64| -> f64 {
        if i == j {
            diag(i)
        } else {
            -coupling[(i - j).unsigned_abs() as usize]
        }
    };
    let diags: Vec<f64> = (0..ni).map(diag).collect();
    let mut a = DMatrix::<f64>::zeros(n, n);
    let s2 = std::f64::consts::SQRT_2;
    for i in 0..ni {
        for j in 0..ni {
            let v = match (i, j) {
                (0, 0) => diags[0],
                (0, j) => s2 * lap(0, j),
                (i, 0) => s2 * lap(i, 0),
                (i, j) if i == j => diags[i as usize] - coupling[(2 * i) as usize],
                (i, j) => lap(i, j) + lap(i, -j),
            };
            a[(i as usize, j as usize)] = v;
        }
    }
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::Numerical("chain Laplacian is not positive definite".into()))?;
    let mut e0 = DVector::<f64>::zeros(n);
    e0[0] = 1.0;
    Ok(chol.solve(&e0)[0] / 2.0)
}

// ---- discrete Gaussian ------------------------------------------------------

/// Law on the integers with mass proportional to `exp(-lambda k^2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteGaussianDist {
    lambda: f64,
}

impl DiscreteGaussianDist {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(invalid(format!("lambda must be positive and finite, got {lambda}")));
        }
        Ok(Self { lambda })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn variance(&self) -> f64 {
        dg_moments(self.lambda).1
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> i64 {
        sample_shifted(self.lambda, 0.0, rng)
    }
}

/// Series cut-off: beyond it the omitted mass times `K^2` is negligible.
fn truncation(lambda: f64) -> i64 {
    (40.0 / lambda).sqrt().ceil() as i64 + 2
}

/// `(ln Z, Var)` of the centred discrete Gaussian.
///
/// Below `lambda = pi` the Poisson-summed series converges faster and gives
/// `Var = 1/(2 lambda) - (non-negative term)`, so the Gaussian bound holds
/// exactly in floating point as well.
fn dg_moments(lambda: f64) -> (f64, f64) {
    if lambda < std::f64::consts::PI {
        return dg_moments_dual(lambda);
    }
    let k_max = truncation(lambda);
    let (mut z, mut m2) = (0.0, 0.0);
    // Smallest terms first.
    for k in (1..=k_max).rev() {
        let k2 = (k * k) as f64;
        let w = (-lambda * k2).exp();
        z += w;
        m2 += k2 * w;
    }
    let z = 1.0 + 2.0 * z;
    (z.ln(), 2.0 * m2 / z)
}

/// `Z = sqrt(pi / lambda) theta` with `theta = sum_k exp(-pi^2 k^2 / lambda)`.
fn dg_moments_dual(lambda: f64) -> (f64, f64) {
    let pi2 = std::f64::consts::PI.powi(2);
    let k_max = ((40.0 * lambda).sqrt() / std::f64::consts::PI).ceil() as i64 + 2;
    let (mut theta, mut weighted) = (0.0, 0.0);
    for k in (1..=k_max).rev() {
        let a = pi2 * (k * k) as f64 / lambda;
        let w = (-a).exp();
        theta += w;
        weighted += a / lambda * w;
    }
    let theta = 1.0 + 2.0 * theta;
    let ln_z = 0.5 * (std::f64::consts::PI / lambda).ln() + theta.ln();
    (ln_z, 0.5 / lambda - 2.0 * weighted / theta)
}

/// Exact variance of the discrete Gaussian of conductance `lambda`.
pub fn dg_variance(lambda: f64) -> Result<f64> {
    Ok(DiscreteGaussianDist::new(lambda)?.variance())
}

/// `ln sum_k exp(-lambda k^2)`.
pub fn dg_log_partition(lambda: f64) -> Result<f64> {
    DiscreteGaussianDist::new(lambda)?;
    Ok(dg_moments(lambda).0)
}

/// Draws `k` with mass proportional to `exp(-lambda (k - m)^2)`.
///
/// Proposal: round a continuous normal with the same centre and variance
/// `1 / (2 lambda)`. The likelihood ratio is largest at `round(m)`, which
/// fixes the rejection constant; acceptance stays above one half.
pub fn sample_shifted<R: Rng + ?Sized>(lambda: f64, m: f64, rng: &mut R) -> i64 {
    debug_assert!(lambda > 0.0 && m.is_finite());
    let sigma = (0.5 / lambda).sqrt();
    let k0 = m.round();
    let log_ratio = |k: f64| -> f64 {
        let q = normal_interval((k - 0.5 - m) / sigma, (k + 0.5 - m) / sigma);
        if q > 0.0 {
            -lambda * (k - m) * (k - m) - q.ln()
        } else {
            f64::NEG_INFINITY
        }
    };
    let top = log_ratio(k0);
    loop {
        let x: f64 = rng.sample(StandardNormal);
        let k = (m + sigma * x).round();
        let lr = log_ratio(k);
        if lr == f64::NEG_INFINITY {
            continue;
        }
        let u: f64 = rng.random();
        if u.ln() <= lr - top {
            return k as i64;
        }
    }
}
