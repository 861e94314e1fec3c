//! Generalized-PageRank polynomial filters on product manifolds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::graph::Csr;
use crate::linalg::Mat;
use crate::manifold::Signature;
use crate::stereo;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GprInit {
    Ppr(f64),
    HighPass(f64),
    Custom,
}

/// Hop weights `γ_0..γ_L` of a polynomial filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GprWeights {
    pub gamma: Vec<f64>,
    pub init: GprInit,
    pub trainable: bool,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

impl GprWeights {
    /// `γ_l = α(1−α)^l` for `l < L`, `γ_L = (1−α)^L`.
    pub fn ppr(alpha: f64, l: usize) -> Result<Self> {
        check_alpha(alpha)?;
        let mut gamma: Vec<f64> = (0..l).map(|k| alpha * (1.0 - alpha).powi(k as i32)).collect();
        gamma.push((1.0 - alpha).powi(l as i32));
        Ok(GprWeights {
            gamma,
            init: GprInit::Ppr(alpha),
            trainable: true,
        })
    }

    /// `γ_l = (−α)^l`.
    pub fn highpass(alpha: f64, l: usize) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(GprWeights {
            gamma: (0..=l).map(|k| (-alpha).powi(k as i32)).collect(),
            init: GprInit::HighPass(alpha),
            trainable: true,
        })
    }

    pub fn custom(gamma: Vec<f64>) -> Result<Self> {
        if gamma.is_empty() || gamma.iter().any(|g| !g.is_finite()) {
            return Err(Error::invalid("filter weights must be a non-empty finite vector"));
        }
        Ok(GprWeights {
            gamma,
            init: GprInit::Custom,
            trainable: true,
        })
    }

    /// Polynomial order `L`.
    pub fn order(&self) -> usize {
        self.gamma.len() - 1
    }

    /// `g(λ) = Σ_l γ_l λ^l`.
    pub fn response(&self, lambda: f64) -> f64 {
        filter_response(&self.gamma, lambda)
    }
}

/// Horner evaluation of `Σ_l γ_l λ^l`.
pub fn filter_response(gamma: &[f64], lambda: f64) -> f64 {
    gamma.iter().rev().fold(0.0, |acc, g| acc * lambda + g)
}

/// Rows of `(λ, g_0(λ), g_1(λ), …)` on an evenly spaced grid over `[−1, 1]`.
pub fn response_grid(filters: &[GprWeights], points: usize) -> Vec<Vec<f64>> {
    (0..points)
        .map(|i| {
            let lambda = if points == 1 {
                0.0
            } else {
                -1.0 + 2.0 * i as f64 / (points - 1) as f64
            };
            let mut row = vec![lambda];
            row.extend(filters.iter().map(|f| f.response(lambda)));
            row
        })
        .collect()
}

/// One propagation step `Ã_n ⊠_κ H`, taken per component.
pub fn propagate_step(a_n: &Csr, h: &Mat, sig: &Signature) -> Result<Mat> {
    if h.cols() != sig.dim() {
        return Err(Error::dims(format!("{} columns for signature of dimension {}", h.cols(), sig.dim())));
    }
    let parts = sig
        .split(h)?
        .iter()
        .zip(sig.components())
        .map(|(b, c)| stereo::left_matmul(a_n, b, c.curvature))
        .collect::<Result<Vec<_>>>()?;
    Mat::hcat(&parts.iter().collect::<Vec<_>>())
}

/// `[H^(0), …, H^(L)]` with `H^(l) = Ã_n ⊠ H^(l−1)`.
pub fn propagate(a_n: &Csr, h0: &Mat, sig: &Signature, l: usize) -> Result<Vec<Mat>> {
    let mut hops = vec![h0.clone()];
    for _ in 0..l {
        let next = propagate_step(a_n, hops.last().expect("non-empty"), sig)?;
        hops.push(next);
    }
    Ok(hops)
}

/// Per node and component, the left-to-right fold
/// `γ_0 ⊗ H^(0) ⊕ γ_1 ⊗ H^(1) ⊕ … ⊕ γ_L ⊗ H^(L)`.
pub fn gpr_combine(gamma: &[f64], hops: &[Mat], sig: &Signature) -> Result<Mat> {
    if gamma.len() != hops.len() || hops.is_empty() {
        return Err(Error::dims(format!("{} weights for {} hops", gamma.len(), hops.len())));
    }
    let (n, d) = hops[0].shape();
    if d != sig.dim() || hops.iter().any(|h| h.shape() != (n, d)) {
        return Err(Error::dims("hop matrices disagree with each other or the signature"));
    }
    let blocks = sig.blocks();
    let mut out = Mat::zeros(n, d);
    for i in 0..n {
        for (c, r) in sig.components().iter().zip(&blocks) {
            let k = c.curvature;
            let mut acc = stereo::scale(gamma[0], &hops[0].row(i)[r.clone()], k)?;
            for (g, h) in gamma.iter().zip(hops).skip(1) {
                let term = stereo::scale(*g, &h.row(i)[r.clone()], k)?;
                acc = stereo::mobius_add(&acc, &term, k)?;
            }
            out.row_mut(i)[r.clone()].copy_from_slice(&acc);
        }
    }
    Ok(out)
}

/// The filter bank `[Z^I, Z^(1), …, Z^(L)]` with mixing logits.
#[derive(Debug, Clone)]
pub struct FilterBank {
    pub entries: Vec<Mat>,
    pub weights: Vec<GprWeights>,
    pub epsilon_logits: Vec<f64>,
}

impl FilterBank {
    /// `softmax(epsilon_logits)`.
    pub fn epsilon(&self) -> Vec<f64> {
        softmax(&self.epsilon_logits)
    }
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Build the bank. `weights[0]` drives the identity entry (every hop equals
/// `H^(0)`); `weights[l]` drives entry `l`, which combines hops `0..=l`
/// with the first `l + 1` weights as they are.
pub fn build_filter_bank(
    a_n: &Csr,
    h0: &Mat,
    weights: &[GprWeights],
    l: usize,
    sig: &Signature,
    exec: Exec,
) -> Result<FilterBank> {
    if l == 0 {
        return Err(Error::invalid("filter bank needs L ≥ 1"));
    }
    if weights.len() != l + 1 || weights.iter().any(|w| w.gamma.len() != l + 1) {
        return Err(Error::dims(format!("filter bank of order {l} needs {} weight vectors of length {}", l + 1, l + 1)));
    }
    let hops = propagate(a_n, h0, sig, l)?;
    let identity_hops = vec![h0.clone(); l + 1];
    let entries = exec.try_map(l + 1, |e| {
        if e == 0 {
            gpr_combine(&weights[0].gamma, &identity_hops, sig)
        } else {
            gpr_combine(&weights[e].gamma[..=e], &hops[..=e], sig)
        }
    })?;
    Ok(FilterBank {
        entries,
        weights: weights.to_vec(),
        epsilon_logits: vec![0.0; l + 1],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate, normalized_adjacency, GraphKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ppr_closed_form() {
        let w = GprWeights::ppr(0.5, 2).unwrap();
        assert_eq!(w.gamma, vec![0.5, 0.25, 0.25]);
        for a in [0.1, 0.3, 0.9, 0.999999] {
            let w = GprWeights::ppr(a, 10).unwrap();
            assert!((w.gamma.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(w.gamma.iter().all(|&g| g >= 0.0));
        }
        assert!(GprWeights::ppr(0.999999, 4).unwrap().gamma[0] > 0.999);
        assert!(GprWeights::ppr(1.0, 2).is_err());
    }

    #[test]
    fn highpass_closed_form() {
        let w = GprWeights::highpass(0.5, 3).unwrap();
        assert_eq!(w.gamma, vec![1.0, -0.5, 0.25, -0.125]);
        let w = GprWeights::highpass(0.5, 64).unwrap();
        assert!((w.response(1.0) - 1.0 / 1.5).abs() < 1e-9);
    }

    #[test]
    fn responses() {
        let one_hot = GprWeights::custom(vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(one_hot.response(0.37), 1.0);
        let w = GprWeights::ppr(0.3, 10).unwrap();
        assert!((w.response(1.0) - 1.0).abs() < 1e-12);
        for lam in [-0.9, -0.5, 0.0, 0.5, 0.9] {
            assert!(w.response(lam).abs() < 1.0);
        }
        let grid = response_grid(&[w], 201);
        assert_eq!(grid.len(), 201);
        assert_eq!(grid[0][0], -1.0);
        assert_eq!(grid[200][0], 1.0);
    }

    fn random_rows(rng: &mut ChaCha8Rng, n: usize, d: usize, r: f64) -> Mat {
        Mat::from_fn(n, d, |_, _| rng.random_range(-r..r))
    }

    #[test]
    fn propagation_flat_and_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = generate(&GraphKind::Cycle(5)).unwrap();
        let a = normalized_adjacency(&g, None).unwrap();
        let h = random_rows(&mut rng, 5, 4, 0.3);
        let e = Signature::euclidean(4).unwrap();
        let flat = propagate_step(&Csr::from_dense(&a), &h, &e).unwrap();
        assert!(flat.sub(&a.matmul(&h).unwrap()).unwrap().max_abs() < 1e-15);
        let sig: Signature = "H:2:-1,S:2:0.5".parse().unwrap();
        let same = propagate_step(&Csr::identity(5), &h, &sig).unwrap();
        assert!(same.sub(&h).unwrap().max_abs() < 1e-14);
    }

    #[test]
    fn single_component_matches_left_matmul() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = generate(&GraphKind::Complete(3)).unwrap();
        let a = Csr::from_dense(&normalized_adjacency(&g, None).unwrap());
        let h = random_rows(&mut rng, 3, 16, 0.1);
        let sig: Signature = "H:16:-1".parse().unwrap();
        let got = propagate_step(&a, &h, &sig).unwrap();
        let want = stereo::left_matmul(&a, &h, -1.0).unwrap();
        assert_eq!(got, want);
    }

    #[test]
    fn combine_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sig: Signature = "H:3:-1".parse().unwrap();
        let hops: Vec<Mat> = (0..3).map(|_| random_rows(&mut rng, 4, 3, 0.2)).collect();
        let pick = gpr_combine(&[0.0, 1.0, 0.0], &hops, &sig).unwrap();
        assert!(pick.sub(&hops[1]).unwrap().max_abs() < 1e-15);

        let gamma = [0.5, -0.3, 0.2];
        let got = gpr_combine(&gamma, &hops, &sig).unwrap();
        for i in 0..4 {
            let terms: Vec<Vec<f64>> = (0..3)
                .map(|l| stereo::scale(gamma[l], hops[l].row(i), -1.0).unwrap())
                .collect();
            let want = stereo::mobius_sum(&terms, -1.0).unwrap();
            assert_eq!(got.row(i), &want[..]);
        }

        let e = Signature::euclidean(3).unwrap();
        let flat = gpr_combine(&gamma, &hops, &e).unwrap();
        let want = hops[0]
            .scale(gamma[0])
            .add(&hops[1].scale(gamma[1]))
            .unwrap()
            .add(&hops[2].scale(gamma[2]))
            .unwrap();
        assert!(flat.sub(&want).unwrap().max_abs() < 1e-12);
        assert_eq!(gpr_combine(&gamma, &hops, &sig).unwrap(), got);
    }

    #[test]
    fn bank_shape_and_entries() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = generate(&GraphKind::Path(6)).unwrap();
        let a = Csr::from_dense(&normalized_adjacency(&g, None).unwrap());
        let sig: Signature = "H:2:-0.5,E:2:0".parse().unwrap();
        let h0 = random_rows(&mut rng, 6, 4, 0.3);
        let l = 3;
        let ws = vec![GprWeights::ppr(0.3, l).unwrap(); l + 1];
        assert!(build_filter_bank(&a, &h0, &ws, 0, &sig, Exec::Sequential).is_err());
        let bank = build_filter_bank(&a, &h0, &ws, l, &sig, Exec::Sequential).unwrap();
        assert_eq!(bank.entries.len(), l + 1);
        let hops = propagate(&a, &h0, &sig, l).unwrap();
        assert_eq!(bank.entries[l], gpr_combine(&ws[l].gamma, &hops, &sig).unwrap());
        // E block of the identity entry is (Σγ) · H0
        let s: f64 = ws[0].gamma.iter().sum();
        for i in 0..6 {
            for c in 2..4 {
                assert!((bank.entries[0][(i, c)] - s * h0[(i, c)]).abs() < 1e-12);
            }
        }
        let par = build_filter_bank(&a, &h0, &ws, l, &sig, Exec::Parallel).unwrap();
        assert_eq!(par.entries, bank.entries);
        assert!((bank.epsilon().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
