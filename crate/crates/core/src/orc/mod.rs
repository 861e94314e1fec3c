//! Ollivier-Ricci curvature of edges and nodes.
//!
//! Edge curvature is `κ(x, y) = 1 − W₁(m_x, m_y) / d(x, y)` where `m_x` is
//! the lazy random-walk measure keeping mass `delta` at `x` and spreading the
//! rest uniformly over its neighbours. Three solvers are available: exact
//! transport, entropic (Sinkhorn) transport, and the closed-form degree and
//! triangle bounds for unweighted graphs.

mod transport;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub use transport::{exact_transport, sinkhorn_transport, SinkhornOutcome};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::graph::Graph;
use crate::linalg::Mat;

/// Discrete probability measure on graph nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Measure {
    support: Vec<usize>,
    mass: Vec<f64>,
}

impl Measure {
    pub fn new(support: Vec<usize>, mass: Vec<f64>) -> Result<Self> {
        if support.len() != mass.len() {
            return Err(Error::dims("support and mass lengths differ"));
        }
        let mut seen = std::collections::HashSet::new();
        if !support.iter().all(|s| seen.insert(*s)) {
            return Err(Error::invalid("measure support has repeated nodes"));
        }
        if mass.iter().any(|&m| !(m >= 0.0)) {
            return Err(Error::invalid("negative mass"));
        }
        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("measure mass sums to {total}")));
        }
        Ok(Measure { support, mass })
    }

    pub fn point(x: usize) -> Self {
        Measure {
            support: vec![x],
            mass: vec![1.0],
        }
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    /// Mass at node `x` (zero off the support).
    pub fn mass_at(&self, x: usize) -> f64 {
        self.support
            .iter()
            .position(|&s| s == x)
            .map_or(0.0, |i| self.mass[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrcMethod {
    Exact,
    Sinkhorn,
    Bounds,
}

impl std::str::FromStr for OrcMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(OrcMethod::Exact),
            "sinkhorn" => Ok(OrcMethod::Sinkhorn),
            "bounds" => Ok(OrcMethod::Bounds),
            other => Err(Error::invalid(format!("unknown ORC method {other:?}"))),
        }
    }
}

impl std::fmt::Display for OrcMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OrcMethod::Exact => "exact",
            OrcMethod::Sinkhorn => "sinkhorn",
            OrcMethod::Bounds => "bounds",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrcConfig {
    /// Mass kept at the node by the lazy walk.
    pub delta: f64,
    pub method: OrcMethod,
    /// Entropic regularisation; `None` picks `0.01 ×` the median positive
    /// support distance.
    pub sinkhorn_eps: Option<f64>,
    pub sinkhorn_max_iters: usize,
    pub sinkhorn_tol: f64,
    /// Clamp results to `[−1, 1]`.
    pub normalize: bool,
    pub exec: Exec,
}

impl Default for OrcConfig {
    fn default() -> Self {
        OrcConfig {
            delta: 0.5,
            method: OrcMethod::Exact,
            sinkhorn_eps: None,
            sinkhorn_max_iters: 1000,
            sinkhorn_tol: 1e-9,
            normalize: false,
            exec: Exec::Parallel,
        }
    }
}

impl OrcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(Error::invalid(format!("delta = {} outside [0, 1]", self.delta)));
        }
        if let Some(eps) = self.sinkhorn_eps {
            if !(eps > 0.0) {
                return Err(Error::invalid(format!("sinkhorn eps = {eps} must be positive")));
            }
        }
        if !(self.sinkhorn_tol > 0.0) {
            return Err(Error::invalid("sinkhorn tol must be positive"));
        }
        Ok(())
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = delta;
        self
    }

    pub fn with_method(mut self, method: OrcMethod) -> Self {
        self.method = method;
        self
    }
}

/// Lazy random-walk measure around `x`.
pub fn node_measure(g: &Graph, x: usize, delta: f64) -> Result<Measure> {
    if x >= g.n() {
        return Err(Error::invalid(format!("node {x} out of range")));
    }
    let deg = g.degree(x);
    if deg == 0 {
        return Err(Error::IsolatedNode(x));
    }
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::invalid(format!("delta = {delta} outside [0, 1]")));
    }
    let share = (1.0 - delta) / deg as f64;
    let mut support = vec![x];
    let mut mass = vec![delta];
    for v in g.neighbors(x) {
        support.push(v);
        mass.push(share);
    }
    Ok(Measure { support, mass })
}

fn cost_matrix(mu: &Measure, nu: &Measure, dist: &impl Fn(usize, usize) -> Option<f64>) -> Result<Mat> {
    let mut c = Mat::zeros(mu.support.len(), nu.support.len());
    for (i, &a) in mu.support.iter().enumerate() {
        for (j, &b) in nu.support.iter().enumerate() {
            c[(i, j)] = dist(a, b).ok_or(Error::Unreachable(a, b))?;
        }
    }
    Ok(c)
}

/// Exact W₁ between two measures under the ground metric `dist`.
pub fn wasserstein_exact(
    mu: &Measure,
    nu: &Measure,
    dist: impl Fn(usize, usize) -> Option<f64>,
) -> Result<f64> {
    let cost = cost_matrix(mu, nu, &dist)?;
    Ok(exact_transport(&mu.mass, &nu.mass, &cost)?.0)
}

/// Entropic approximation of W₁; the outcome carries the convergence flag.
pub fn wasserstein_sinkhorn(
    mu: &Measure,
    nu: &Measure,
    dist: impl Fn(usize, usize) -> Option<f64>,
    cfg: &OrcConfig,
) -> Result<SinkhornOutcome> {
    let cost = cost_matrix(mu, nu, &dist)?;
    let eps = cfg.sinkhorn_eps.unwrap_or_else(|| default_eps(&cost));
    sinkhorn_transport(
        &mu.mass,
        &nu.mass,
        &cost,
        eps,
        cfg.sinkhorn_max_iters,
        cfg.sinkhorn_tol,
    )
}

fn default_eps(cost: &Mat) -> f64 {
    let mut pos: Vec<f64> = cost.as_slice().iter().copied().filter(|&c| c > 0.0).collect();
    if pos.is_empty() {
        return 0.01;
    }
    pos.sort_by(f64::total_cmp);
    0.01 * pos[pos.len() / 2]
}

/// Hop distance between nodes of the supports of an edge `(u, v)`; such
/// nodes are never more than three hops apart.
fn support_distance(g: &Graph, a: usize, b: usize) -> usize {
    if a == b {
        0
    } else if g.has_edge(a, b) {
        1
    } else if g.common_neighbors(a, b) > 0 {
        2
    } else {
        3
    }
}

/// Curvature of an edge plus whether an iterative solver converged.
fn edge_orc_detail(g: &Graph, u: usize, v: usize, cfg: &OrcConfig) -> Result<(f64, bool)> {
    if u >= g.n() || v >= g.n() || !g.has_edge(u, v) {
        return Err(Error::MissingEdge(u, v));
    }
    // canonical orientation
    let (u, v) = (u.min(v), u.max(v));
    if cfg.method == OrcMethod::Bounds {
        return Ok((orc_bounds(g, u, v)?.approx, true));
    }
    let (mu, nu) = (node_measure(g, u, cfg.delta)?, node_measure(g, v, cfg.delta)?);
    let dist = |a: usize, b: usize| Some(support_distance(g, a, b) as f64);
    let (w1, converged) = match cfg.method {
        OrcMethod::Exact => (wasserstein_exact(&mu, &nu, dist)?, true),
        OrcMethod::Sinkhorn => {
            let out = wasserstein_sinkhorn(&mu, &nu, dist, cfg)?;
            (out.cost, out.converged)
        }
        OrcMethod::Bounds => unreachable!(),
    };
    // adjacent endpoints are one hop apart
    Ok((1.0 - w1, converged))
}

/// Ollivier-Ricci curvature of the edge `(u, v)`.
pub fn edge_orc(g: &Graph, u: usize, v: usize, cfg: &OrcConfig) -> Result<f64> {
    cfg.validate()?;
    Ok(edge_orc_detail(g, u, v, cfg)?.0)
}

/// Mean curvature of the edges incident to `x`; `edge_values` is aligned
/// with [`Graph::edges`].
pub fn node_orc(g: &Graph, edge_values: &[f64], x: usize) -> Result<f64> {
    if edge_values.len() != g.m() {
        return Err(Error::dims(format!(
            "{} edge values for {} edges",
            edge_values.len(),
            g.m()
        )));
    }
    node_values(g, edge_values)?
        .get(x)
        .copied()
        .ok_or_else(|| Error::invalid(format!("node {x} out of range")))
}

fn node_values(g: &Graph, edge_values: &[f64]) -> Result<Vec<f64>> {
    let mut sum = vec![0.0; g.n()];
    let mut cnt = vec![0usize; g.n()];
    for (e, &k) in g.edges().iter().zip(edge_values) {
        sum[e.u] += k;
        sum[e.v] += k;
        cnt[e.u] += 1;
        cnt[e.v] += 1;
    }
    if let Some(x) = cnt.iter().position(|&c| c == 0) {
        return Err(Error::IsolatedNode(x));
    }
    Ok(sum.iter().zip(&cnt).map(|(s, &c)| s / c as f64).collect())
}

/// Degree/triangle bounds on the curvature of `(u, v)` for the plain
/// neighbourhood walk (`delta = 0`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrcBounds {
    pub lower: f64,
    pub upper: f64,
    /// Midpoint of the bounds, a linear-time curvature estimate.
    pub approx: f64,
}

pub fn orc_bounds(g: &Graph, u: usize, v: usize) -> Result<OrcBounds> {
    if !g.is_unweighted() {
        return Err(Error::Unsupported(
            "curvature bounds are defined for unweighted graphs only".into(),
        ));
    }
    if u >= g.n() || v >= g.n() || !g.has_edge(u, v) {
        return Err(Error::MissingEdge(u, v));
    }
    let (dx, dy) = (g.degree(u) as f64, g.degree(v) as f64);
    let tri = g.common_neighbors(u, v) as f64;
    let (lo_deg, hi_deg) = (dx.min(dy), dx.max(dy));
    let pos = |x: f64| x.max(0.0);
    let base = 1.0 - 1.0 / dx - 1.0 / dy;
    let upper = tri / hi_deg;
    let lower = -pos(base - tri / lo_deg) - pos(base - tri / hi_deg) + tri / hi_deg;
    Ok(OrcBounds {
        lower,
        upper,
        approx: 0.5 * (lower + upper),
    })
}

/// Edge and node curvature for a whole graph.
#[derive(Debug, Clone, PartialEq)]
pub struct OrcResult {
    edges: Vec<(usize, usize)>,
    edge_values: Vec<f64>,
    node_values: Vec<f64>,
    pub method: OrcMethod,
    pub normalized: bool,
    /// Edges whose Sinkhorn solve hit the iteration cap.
    pub unconverged: usize,
    index: HashMap<(usize, usize), usize>,
}

impl OrcResult {
    /// Assemble a result from per-edge values aligned with [`Graph::edges`].
    pub fn from_edge_values(
        g: &Graph,
        mut values: Vec<f64>,
        method: OrcMethod,
        normalize: bool,
    ) -> Result<Self> {
        if values.len() != g.m() {
            return Err(Error::dims(format!(
                "{} edge values for {} edges",
                values.len(),
                g.m()
            )));
        }
        if normalize {
            for k in &mut values {
                *k = k.clamp(-1.0, 1.0);
            }
        }
        let node_values = node_values(g, &values)?;
        let edges: Vec<(usize, usize)> = g.edges().iter().map(|e| (e.u, e.v)).collect();
        let index = edges.iter().enumerate().map(|(i, &e)| (e, i)).collect();
        Ok(OrcResult {
            edges,
            edge_values: values,
            node_values,
            method,
            normalized: normalize,
            unconverged: 0,
            index,
        })
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_values(&self) -> &[f64] {
        &self.edge_values
    }

    pub fn node_values(&self) -> &[f64] {
        &self.node_values
    }

    /// Curvature of edge `(u, v)` in either orientation.
    pub fn edge(&self, u: usize, v: usize) -> Option<f64> {
        let key = if u < v { (u, v) } else { (v, u) };
        self.index.get(&key).map(|&i| self.edge_values[i])
    }

    pub fn node(&self, x: usize) -> Option<f64> {
        self.node_values.get(x).copied()
    }

    /// Node values clamped to `[−1, 1]`.
    pub fn clamped_node_values(&self) -> Vec<f64> {
        self.node_values.iter().map(|k| k.clamp(-1.0, 1.0)).collect()
    }
}

/// Curvature of every edge and node. Per-edge work runs on `cfg.exec`;
/// results are identical under either strategy.
pub fn compute_all(g: &Graph, cfg: &OrcConfig) -> Result<OrcResult> {
    cfg.validate()?;
    if let Some(x) = g.first_isolated() {
        return Err(Error::IsolatedNode(x));
    }
    let edges = g.edges();
    let per_edge = cfg
        .exec
        .try_map(edges.len(), |i| edge_orc_detail(g, edges[i].u, edges[i].v, cfg))?;
    let unconverged = per_edge.iter().filter(|(_, ok)| !ok).count();
    let values = per_edge.into_iter().map(|(k, _)| k).collect();
    let mut res = OrcResult::from_edge_values(g, values, cfg.method, cfg.normalize)?;
    res.unconverged = unconverged;
    Ok(res)
}

/// Equal-width histogram over `[lo, hi]`; returns `(bin_center, count)`.
/// Values outside the range land in the edge bins.
pub fn histogram(values: &[f64], bins: usize, lo: f64, hi: f64) -> Vec<(f64, usize)> {
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        let b = (((v - lo) / width).floor() as isize).clamp(0, bins as isize - 1) as usize;
        counts[b] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (lo + (i as f64 + 0.5) * width, c))
        .collect()
}
