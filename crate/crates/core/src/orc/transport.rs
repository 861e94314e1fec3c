//! Optimal transport between small discrete measures.
//!
//! The exact solver runs successive shortest paths on the bipartite
//! transportation network. Supports here are neighbourhoods of an edge's
//! endpoints, so the networks are tiny and Bellman-Ford on the residual graph
//! is plenty.

use crate::error::{Error, Result};
use crate::linalg::Mat;

const MASS_EPS: f64 = 1e-15;

/// Exact minimum-cost transport between weight vectors `a` and `b` under
/// `cost` (`a.len() × b.len()`). Returns the optimal cost and plan.
pub fn exact_transport(a: &[f64], b: &[f64], cost: &Mat) -> Result<(f64, Mat)> {
    check_problem(a, b, cost)?;
    let (na, nb) = (a.len(), b.len());
    // node layout: 0 = source, 1..=na supplies, na+1..=na+nb demands, sink last
    let sink = na + nb + 1;
    let mut net = Network::new(sink + 1);
    for (i, &ai) in a.iter().enumerate() {
        net.add_arc(0, 1 + i, ai, 0.0);
    }
    let mut plan_arcs = Vec::with_capacity(na * nb);
    for i in 0..na {
        for j in 0..nb {
            let id = net.add_arc(1 + i, 1 + na + j, f64::INFINITY, cost[(i, j)]);
            plan_arcs.push(id);
        }
    }
    for (j, &bj) in b.iter().enumerate() {
        net.add_arc(1 + na + j, sink, bj, 0.0);
    }

    let target: f64 = a.iter().sum();
    let mut sent = 0.0;
    while target - sent > MASS_EPS {
        let Some(path) = net.shortest_path(0, sink) else {
            break;
        };
        let push = path
            .iter()
            .map(|&arc| net.arcs[arc].cap)
            .fold(target - sent, f64::min);
        if push <= MASS_EPS {
            break;
        }
        for &arc in &path {
            net.arcs[arc].cap -= push;
            net.arcs[arc ^ 1].cap += push;
        }
        sent += push;
    }
    if (target - sent).abs() > 1e-12 {
        return Err(Error::Numerical(format!(
            "transport left {:.3e} mass unrouted",
            target - sent
        )));
    }

    let mut plan = Mat::zeros(na, nb);
    let mut total = 0.0;
    for (k, &arc) in plan_arcs.iter().enumerate() {
        // flow on a forward arc is the residual capacity of its twin
        let flow = net.arcs[arc ^ 1].cap;
        let (i, j) = (k / nb, k % nb);
        plan[(i, j)] = flow;
        total += flow * cost[(i, j)];
    }
    Ok((total, plan))
}

pub(crate) fn check_problem(a: &[f64], b: &[f64], cost: &Mat) -> Result<()> {
    if cost.shape() != (a.len(), b.len()) {
        return Err(Error::dims(format!(
            "cost is {}x{}, measures have {} and {} atoms",
            cost.rows(),
            cost.cols(),
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::invalid("masses must be finite and non-negative"));
    }
    let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
    if (sa - sb).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "measures have different total mass {sa} vs {sb}"
        )));
    }
    if cost.as_slice().iter().any(|&c| !(c >= 0.0) || !c.is_finite()) {
        return Err(Error::invalid("costs must be finite and non-negative"));
    }
    Ok(())
}

#[derive(Debug, Clone)]
struct Arc {
    to: usize,
    cap: f64,
    cost: f64,
}

struct Network {
    arcs: Vec<Arc>,
    out: Vec<Vec<usize>>,
}

impl Network {
    fn new(n: usize) -> Self {
        Network {
            arcs: Vec::new(),
            out: vec![Vec::new(); n],
        }
    }

    fn add_arc(&mut self, from: usize, to: usize, cap: f64, cost: f64) -> usize {
        let id = self.arcs.len();
        self.arcs.push(Arc { to, cap, cost });
        self.arcs.push(Arc {
            to: from,
            cap: 0.0,
            cost: -cost,
        });
        self.out[from].push(id);
        self.out[to].push(id + 1);
        id
    }

    /// Cheapest residual path as a list of arc ids (Bellman-Ford / SPFA).
    fn shortest_path(&self, s: usize, t: usize) -> Option<Vec<usize>> {
        let n = self.out.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut prev = vec![usize::MAX; n];
        let mut in_queue = vec![false; n];
        let mut queue = std::collections::VecDeque::new();
        dist[s] = 0.0;
        queue.push_back(s);
        in_queue[s] = true;
        while let Some(u) = queue.pop_front() {
            in_queue[u] = false;
            for &id in &self.out[u] {
                let arc = &self.arcs[id];
                if arc.cap <= MASS_EPS {
                    continue;
                }
                let nd = dist[u] + arc.cost;
                // strict improvement with a tolerance keeps zero-cost cycles from looping
                if nd < dist[arc.to] - 1e-12 {
                    dist[arc.to] = nd;
                    prev[arc.to] = id;
                    if !in_queue[arc.to] {
                        queue.push_back(arc.to);
                        in_queue[arc.to] = true;
                    }
                }
            }
        }
        if dist[t].is_infinite() {
            return None;
        }
        let mut path = Vec::new();
        let mut v = t;
        while v != s {
            let id = prev[v];
            path.push(id);
            v = self.arcs[id ^ 1].to;
        }
        path.reverse();
        Some(path)
    }
}

/// Outcome of an entropic transport solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornOutcome {
    /// Transport cost `⟨P, C⟩` of the regularised plan.
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// L1 violation of the row marginal at exit.
    pub marginal_error: f64,
}

/// Log-domain Sinkhorn iterations.
pub fn sinkhorn_transport(
    a: &[f64],
    b: &[f64],
    cost: &Mat,
    eps: f64,
    max_iters: usize,
    tol: f64,
) -> Result<SinkhornOutcome> {
    check_problem(a, b, cost)?;
    if !(eps > 0.0) {
        return Err(Error::invalid(format!("sinkhorn eps must be positive, got {eps}")));
    }
    // zero-mass atoms carry no plan mass and would put ln 0 in the potentials
    let ia: Vec<usize> = (0..a.len()).filter(|&i| a[i] > 0.0).collect();
    let ib: Vec<usize> = (0..b.len()).filter(|&j| b[j] > 0.0).collect();
    let la: Vec<f64> = ia.iter().map(|&i| a[i].ln()).collect();
    let lb: Vec<f64> = ib.iter().map(|&j| b[j].ln()).collect();
    let c = |p: usize, q: usize| cost[(ia[p], ib[q])];

    let (na, nb) = (ia.len(), ib.len());
    let mut f = vec![0.0; na];
    let mut g = vec![0.0; nb];
    let mut scratch = Vec::with_capacity(na.max(nb));

    let mut iterations = 0;
    let mut err = f64::INFINITY;
    while iterations < max_iters {
        iterations += 1;
        for p in 0..na {
            scratch.clear();
            scratch.extend((0..nb).map(|q| (g[q] - c(p, q)) / eps));
            f[p] = eps * (la[p] - log_sum_exp(&scratch));
        }
        for q in 0..nb {
            scratch.clear();
            scratch.extend((0..na).map(|p| (f[p] - c(p, q)) / eps));
            g[q] = eps * (lb[q] - log_sum_exp(&scratch));
        }
        // columns are exact after the g update; measure the row marginal
        err = (0..na)
            .map(|p| {
                let row: f64 = (0..nb).map(|q| ((f[p] + g[q] - c(p, q)) / eps).exp()).sum();
                (row - a[ia[p]]).abs()
            })
            .sum();
        if err < tol {
            break;
        }
    }
    let mut total = 0.0;
    for p in 0..na {
        for q in 0..nb {
            total += ((f[p] + g[q] - c(p, q)) / eps).exp() * c(p, q);
        }
    }
    Ok(SinkhornOutcome {
        cost: total,
        iterations,
        converged: err < tol,
        marginal_error: err,
    })
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_measures_cost_nothing() {
        let a = [0.5, 0.25, 0.25];
        let cost = Mat::from_fn(3, 3, |i, j| if i == j { 0.0 } else { 1.0 });
        let (c, plan) = exact_transport(&a, &a, &cost).unwrap();
        assert!(c.abs() < 1e-15);
        for i in 0..3 {
            assert!((plan[(i, i)] - a[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn plan_has_correct_marginals() {
        let a = [0.2, 0.3, 0.5];
        let b = [0.6, 0.4];
        let cost = Mat::from_rows(&[vec![1.0, 3.0], vec![2.0, 1.0], vec![3.0, 2.0]]).unwrap();
        let (c, plan) = exact_transport(&a, &b, &cost).unwrap();
        for i in 0..3 {
            assert!((plan.row(i).iter().sum::<f64>() - a[i]).abs() < 1e-14);
        }
        for j in 0..2 {
            assert!((plan.col(j).iter().sum::<f64>() - b[j]).abs() < 1e-14);
        }
        // hand enumeration: 0.2→0 (0.2), 0.3→1 (0.3), 0.5: 0.4→0 (1.2), 0.1→1 (0.2)
        assert!((c - 1.9).abs() < 1e-12, "{c}");
    }

    #[test]
    fn rejects_unbalanced() {
        let cost = Mat::zeros(1, 1);
        assert!(exact_transport(&[1.0], &[0.5], &cost).is_err());
    }

    #[test]
    fn sinkhorn_point_masses() {
        let cost = Mat::from_rows(&[vec![2.0]]).unwrap();
        let out = sinkhorn_transport(&[1.0], &[1.0], &cost, 1e-3, 1000, 1e-12).unwrap();
        assert!((out.cost - 2.0).abs() < 1e-3);
        assert!(out.converged);
    }

    #[test]
    fn sinkhorn_flags_non_convergence() {
        let cost = Mat::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let out = sinkhorn_transport(&[0.9, 0.1], &[0.1, 0.9], &cost, 1e-3, 1, 1e-300).unwrap();
        assert!(!out.converged);
        assert_eq!(out.iterations, 1);
    }
}
