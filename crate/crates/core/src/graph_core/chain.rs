//! Long-range chains with Dirichlet boundary folded into the root.

use serde::{Deserialize, Serialize};

use super::{ConductanceGraph, Label, VertexId};
use crate::error::{invalid, Error, Result};
use crate::special::hurwitz_zeta;

/// Largest half-length for which the complete chain graph is materialised.
pub const MAX_GRAPH_HALF_LENGTH: usize = 2048;

/// Parameters of a long-range chain on `{-N+1, ..., N-1}` with the root at `N`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainSpec {
    pub n: usize,
    pub beta: f64,
    pub alpha: f64,
    /// SOS exponent; `None` means the Gaussian chain.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
}

impl ChainSpec {
    /// Gaussian chain parameters, validated.
    pub fn new(n: usize, beta: f64, alpha: f64) -> Result<Self> {
        let s = Self { n, beta, alpha, q: None };
        s.validate()?;
        Ok(s)
    }

    /// q-SOS chain parameters, validated.
    pub fn with_q(n: usize, beta: f64, alpha: f64, q: f64) -> Result<Self> {
        let s = Self { n, beta, alpha, q: Some(q) };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(invalid("N must be at least 1"));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(invalid(format!("beta must be positive and finite, got {}", self.beta)));
        }
        if !(self.alpha > 1.0 && self.alpha.is_finite()) {
            return Err(invalid(format!(
                "alpha must be finite and > 1 (the boundary tail diverges otherwise), got {}",
                self.alpha
            )));
        }
        if let Some(q) = self.q {
            if !(q > 0.0 && q <= 2.0) {
                return Err(invalid(format!("q must lie in (0, 2], got {q}")));
            }
        }
        Ok(())
    }

    /// Effective SOS exponent (2 for the Gaussian chain).
    pub fn q_or_two(&self) -> f64 {
        self.q.unwrap_or(2.0)
    }

    /// Root vertex id.
    pub fn root(&self) -> VertexId {
        VertexId(self.n as i64)
    }

    /// Free positions `-N+1 ..= N-1`.
    pub fn free_positions(&self) -> std::ops::RangeInclusive<i64> {
        let n = self.n as i64;
        (-n + 1)..=(n - 1)
    }

    pub fn num_free(&self) -> usize {
        2 * self.n - 1
    }

    /// Coupling between two distinct free positions.
    pub fn pair_conductance(&self, i: i64, j: i64) -> f64 {
        let d = (i - j).unsigned_abs() as f64;
        self.beta * d.powf(-self.alpha)
    }

    /// Conductance between free position `i` and the root: all couplings to
    /// positions `|j| >= N`, summed as two Hurwitz zeta tails.
    pub fn root_conductance(&self, i: i64) -> f64 {
        let n = self.n as i64;
        let right = (n - i) as f64;
        let left = (n + i) as f64;
        self.beta * (hurwitz_zeta(self.alpha, right) + hurwitz_zeta(self.alpha, left))
    }

    /// Weight between two chain vertices, either of which may be the root.
    pub fn weight(&self, i: i64, j: i64) -> f64 {
        let n = self.n as i64;
        if i == n {
            self.root_conductance(j)
        } else if j == n {
            self.root_conductance(i)
        } else {
            self.pair_conductance(i, j)
        }
    }
}

/// Complete graph on `{-N+1, ..., N}` with root `N` and folded boundary
/// conductances. Vertex ids equal positions and carry line labels.
pub fn new_chain_graph(spec: &ChainSpec) -> Result<ConductanceGraph> {
    spec.validate()?;
    if spec.n > MAX_GRAPH_HALF_LENGTH {
        return Err(Error::TooLarge {
            what: "chain graph",
            size: 2 * spec.n,
            limit: 2 * MAX_GRAPH_HALF_LENGTH,
        });
    }
    let root = spec.root();
    let mut g = ConductanceGraph::new(root);
    g.set_label(root, Label::Line(root.0));
    for i in spec.free_positions() {
        g.add_vertex(VertexId(i));
        g.set_label(VertexId(i), Label::Line(i));
    }
    for i in spec.free_positions() {
        for j in (i + 1)..=(spec.n as i64 - 1) {
            g.add_edge(VertexId(i), VertexId(j), spec.pair_conductance(i, j))?;
        }
        g.add_edge(VertexId(i), root, spec.root_conductance(i))?;
    }
    Ok(g)
}
