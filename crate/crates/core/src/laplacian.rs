//! Curvature-weighted graph Laplacian.
//!
//! Each edge gets weight `w̄ = exp(−1 / (1 − κ))` from its Ollivier-Ricci
//! curvature κ (clamped to `[−1, 1]` first), multiplied into the native edge
//! weight. At κ = 1 the weight is exactly zero and the edge is dropped.
//!
//! Note that `w̄` decreases as κ grows, so strongly positively curved edges
//! get the smallest weights. The implementation follows the formula.

use crate::error::{Error, Result};
use crate::graph::{Csr, Graph};
use crate::linalg::{self, Mat};
use crate::orc::OrcResult;

/// `exp(−1 / (1 − κ))`, extended by continuity to 0 at κ = 1.
pub fn curvature_weight(orc: f64) -> Result<f64> {
    if orc.is_nan() || orc > 1.0 {
        return Err(Error::Domain(format!("curvature {orc} exceeds 1")));
    }
    if orc == 1.0 {
        return Ok(0.0);
    }
    Ok((-1.0 / (1.0 - orc)).exp())
}

/// The curvature-weighted adjacency, degrees and Laplacians of a graph.
#[derive(Debug, Clone)]
pub struct CuspLaplacian {
    /// Curvature weight per edge, aligned with [`Graph::edges`].
    pub weights: Vec<f64>,
    pub a_tilde: Mat,
    pub d_tilde: Vec<f64>,
    pub l_tilde: Mat,
    pub a_norm: Mat,
    pub l_norm: Mat,
}

impl CuspLaplacian {
    /// Sparse copy of the normalized adjacency for propagation.
    pub fn a_norm_csr(&self) -> Csr {
        Csr::from_dense(&self.a_norm)
    }

    pub fn n(&self) -> usize {
        self.d_tilde.len()
    }

    /// `fᵀ L̃ f`.
    pub fn quadratic_form(&self, f: &[f64]) -> Result<f64> {
        Ok(linalg::dot(f, &self.l_tilde.matvec(f)?))
    }
}

/// Build the Laplacian family from per-edge curvature.
pub fn build(g: &Graph, orc: &OrcResult) -> Result<CuspLaplacian> {
    if orc.edge_values().len() != g.m() {
        return Err(Error::dims(format!(
            "curvature for {} edges, graph has {}",
            orc.edge_values().len(),
            g.m()
        )));
    }
    let mut weights = Vec::with_capacity(g.m());
    for e in g.edges() {
        let k = orc.edge(e.u, e.v).ok_or(Error::MissingEdge(e.u, e.v))?;
        weights.push(curvature_weight(k.clamp(-1.0, 1.0))?);
    }
    build_from_weights(g, weights)
}

/// Build from explicit curvature weights (aligned with [`Graph::edges`]).
pub fn build_from_weights(g: &Graph, weights: Vec<f64>) -> Result<CuspLaplacian> {
    let n = g.n();
    let mut a_tilde = Mat::zeros(n, n);
    for (e, &w) in g.edges().iter().zip(&weights) {
        let w = w * e.w;
        a_tilde[(e.u, e.v)] = w;
        a_tilde[(e.v, e.u)] = w;
    }
    let d_tilde: Vec<f64> = (0..n).map(|i| a_tilde.row(i).iter().sum()).collect();
    if let Some(x) = d_tilde.iter().position(|&d| !(d > 0.0)) {
        return Err(Error::ZeroDegree(x));
    }
    let l_tilde = Mat::from_fn(n, n, |i, j| {
        if i == j {
            d_tilde[i]
        } else {
            -a_tilde[(i, j)]
        }
    });
    let inv: Vec<f64> = d_tilde.iter().map(|d| 1.0 / d.sqrt()).collect();
    let a_norm = Mat::from_fn(n, n, |i, j| a_tilde[(i, j)] * inv[i] * inv[j]);
    let l_norm = Mat::from_fn(n, n, |i, j| {
        if i == j {
            1.0 - a_norm[(i, j)]
        } else {
            -a_norm[(i, j)]
        }
    });
    Ok(CuspLaplacian {
        weights,
        a_tilde,
        d_tilde,
        l_tilde,
        a_norm,
        l_norm,
    })
}

/// Numerical check of positive semidefiniteness and the `[0, 2]`
/// eigenvalue range of the normalized Laplacian.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumReport {
    pub eigenvalues: Vec<f64>,
    pub min_eig: f64,
    pub max_eig: f64,
    pub psd: bool,
    pub in_range: bool,
    /// `‖L̃_n τ‖` for the unit vector `τ ∝ sqrt(diag D̃)`.
    pub kernel_vector_residual: f64,
}

impl SpectrumReport {
    pub fn pass(&self) -> bool {
        self.psd && self.in_range
    }
}

pub fn verify_spectrum(cl: &CuspLaplacian) -> Result<SpectrumReport> {
    let eigenvalues = linalg::eigenvalues(&cl.l_norm)?;
    let min_eig = eigenvalues.first().copied().unwrap_or(0.0);
    let max_eig = eigenvalues.last().copied().unwrap_or(0.0);
    let total: f64 = cl.d_tilde.iter().sum();
    let tau: Vec<f64> = cl.d_tilde.iter().map(|d| (d / total).sqrt()).collect();
    let kernel_vector_residual = linalg::norm(&cl.l_norm.matvec(&tau)?);
    Ok(SpectrumReport {
        min_eig,
        max_eig,
        psd: min_eig >= -1e-9,
        in_range: max_eig <= 2.0 + 1e-9,
        kernel_vector_residual,
        eigenvalues,
    })
}
