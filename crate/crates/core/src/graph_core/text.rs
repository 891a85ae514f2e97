//! Line-oriented text format.
//!
//! ```text
//! graph v1 root=3
//! -2 0 0.5
//! 0 3 1.25
//! vertex 7
//! label 0 line 0
//! label 7 plane 1 -2
//! ```
//!
//! Edge lines carry the shortest decimal that round-trips the conductance.
//! `vertex` lines list vertices without edges so they survive a round trip.
//! `label` lines carry line or plane positions.
//! Blank lines and lines starting with `#` are skipped.

use super::{ConductanceGraph, Label, VertexId};
use crate::error::{Error, Result};

impl ConductanceGraph {
    pub fn to_text(&self) -> String {
        let mut out = format!("graph v1 root={}\n", self.root);
        for (u, v, c) in self.edges() {
            out.push_str(&format!("{u} {v} {c}\n"));
        }
        for v in self.vertices() {
            if v != self.root && self.neighbors(v).next().is_none() {
                out.push_str(&format!("vertex {v}\n"));
            }
        }
        for (v, label) in &self.labels {
            match label {
                Label::Line(x) => out.push_str(&format!("label {v} line {x}\n")),
                Label::Plane(x, y) => out.push_str(&format!("label {v} plane {x} {y}\n")),
            }
        }
        out
    }

    pub fn from_text(s: &str) -> Result<Self> {
        let parse_err = |line: usize, message: String| Error::Parse { line, message };
        let mut lines = s
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (hl, header) = lines.next().ok_or_else(|| parse_err(1, "empty input".into()))?;
        let root = header
            .strip_prefix("graph v1 root=")
            .ok_or_else(|| parse_err(hl, format!("expected `graph v1 root=<id>`, got `{header}`")))?;
        let root: i64 = root
            .trim()
            .parse()
            .map_err(|e| parse_err(hl, format!("bad root id: {e}")))?;
        let mut g = ConductanceGraph::new(VertexId(root));
        let id = |line: usize, tok: &str| -> Result<VertexId> {
            tok.parse::<i64>()
                .map(VertexId)
                .map_err(|e| parse_err(line, format!("bad vertex id `{tok}`: {e}")))
        };
        for (ln, l) in lines {
            let toks: Vec<&str> = l.split_whitespace().collect();
            match toks.as_slice() {
                ["vertex", v] => g.add_vertex(id(ln, v)?),
                ["label", v, "line", x] => g.set_label(id(ln, v)?, Label::Line(id(ln, x)?.0)),
                ["label", v, "plane", x, y] => g.set_label(id(ln, v)?, Label::Plane(id(ln, x)?.0, id(ln, y)?.0)),
                [u, v, c] => {
                    let c: f64 = c
                        .parse()
                        .map_err(|e| parse_err(ln, format!("bad conductance `{c}`: {e}")))?;
                    let (u, v) = (id(ln, u)?, id(ln, v)?);
                    g.add_edge(u, v, c).map_err(|e| parse_err(ln, e.to_string()))?;
                }
                _ => return Err(parse_err(ln, format!("expected `<id> <id> <conductance>`, got `{l}`"))),
            }
        }
        Ok(g)
    }
}
