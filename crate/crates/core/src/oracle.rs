//! Exact inference on small binary MRFs by exhaustive enumeration.
//!
//! The joint log-potential of an assignment `y` is
//! `Σ_i unary[i][y_i] + Σ_(i,j,w) w · (+1 if y_i == y_j else -1)`,
//! each listed edge counted once. Listing an edge in both directions counts
//! it twice.

use crate::affinity::AffinityGraph;
use crate::error::{Error, Result};
use crate::math::two_class_posterior;

pub const MAX_NODES: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct TinyMrf {
    /// `unary[i] = [log-potential of y_i = 0, log-potential of y_i = 1]`.
    pub unary: Vec<[f64; 2]>,
    pub edges: Vec<(usize, usize, f64)>,
}

impl TinyMrf {
    pub fn new(unary: Vec<[f64; 2]>, edges: Vec<(usize, usize, f64)>) -> Result<Self> {
        let n = unary.len();
        if n > MAX_NODES {
            return Err(Error::SizeLimit {
                n,
                limit: MAX_NODES,
            });
        }
        if unary.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Schema("unary log-potentials must be finite".into()));
        }
        for &(i, j, w) in &edges {
            if i >= n || j >= n || !w.is_finite() {
                return Err(Error::Schema(format!("bad edge ({i}, {j}, {w})")));
            }
        }
        Ok(TinyMrf { unary, edges })
    }

    /// Uses every undirected edge of `graph` once.
    pub fn from_graph(unary: Vec<[f64; 2]>, graph: &AffinityGraph) -> Result<Self> {
        if unary.len() != graph.n() {
            return Err(Error::DimensionMismatch {
                expected: graph.n(),
                found: unary.len(),
                context: "unary rows vs graph nodes".into(),
            });
        }
        TinyMrf::new(unary, graph.edges())
    }

    pub fn n(&self) -> usize {
        self.unary.len()
    }

    pub fn joint_log_potential(&self, y: &[bool]) -> f64 {
        let unary: f64 = self
            .unary
            .iter()
            .zip(y)
            .map(|(u, &yi)| u[usize::from(yi)])
            .sum();
        let pairwise: f64 = self
            .edges
            .iter()
            .map(|&(i, j, w)| if y[i] == y[j] { w } else { -w })
            .sum();
        unary + pairwise
    }

    /// `p(y_i = 1 | y_{-i})` with every other node fixed to `y`.
    pub fn exact_conditional(&self, i: usize, y: &[bool]) -> f64 {
        let mut a = y.to_vec();
        a[i] = false;
        let l0 = self.joint_log_potential(&a);
        a[i] = true;
        let l1 = self.joint_log_potential(&a);
        two_class_posterior(l0, l1)[1]
    }

    fn check_size(&self) -> Result<()> {
        if self.n() > MAX_NODES {
            Err(Error::SizeLimit {
                n: self.n(),
                limit: MAX_NODES,
            })
        } else {
            Ok(())
        }
    }
}

/// Assignment number `k` in lexicographic order: node 0 is the most significant bit.
fn decode(k: u32, n: usize, out: &mut [bool]) {
    for (i, slot) in out.iter_mut().enumerate().take(n) {
        *slot = (k >> (n - 1 - i)) & 1 == 1;
    }
}

/// Exact `p(y_i = 1)` for every node.
pub fn exact_marginals(m: &TinyMrf) -> Result<Vec<f64>> {
    m.check_size()?;
    let n = m.n();
    let total = 1u32 << n;
    let mut y = vec![false; n];
    let mut scores = Vec::with_capacity(total as usize);
    let mut max = f64::NEG_INFINITY;
    for k in 0..total {
        decode(k, n, &mut y);
        let s = m.joint_log_potential(&y);
        max = max.max(s);
        scores.push(s);
    }
    let mut z = 0.0;
    let mut ones = vec![0.0; n];
    for (k, s) in scores.into_iter().enumerate() {
        let p = (s - max).exp();
        z += p;
        decode(k as u32, n, &mut y);
        for (acc, &yi) in ones.iter_mut().zip(&y) {
            if yi {
                *acc += p;
            }
        }
    }
    Ok(ones.into_iter().map(|o| o / z).collect())
}

/// Highest-scoring assignment; ties go to the lexicographically smallest.
pub fn exact_map(m: &TinyMrf) -> Result<Vec<bool>> {
    m.check_size()?;
    let n = m.n();
    let mut y = vec![false; n];
    let mut best = vec![false; n];
    let mut best_score = f64::NEG_INFINITY;
    for k in 0..(1u32 << n) {
        decode(k, n, &mut y);
        let s = m.joint_log_potential(&y);
        if s > best_score {
            best_score = s;
            best.copy_from_slice(&y);
        }
    }
    Ok(best)
}
