//! Random Fourier curvature encodings.
//!
//! A curvature value κ maps to `√(1/d_C) [cos ω_1κ, sin ω_1κ, …]` with
//! frequencies drawn once from `N(0, σ²)`. The inner product of two
//! encodings approximates the Gaussian kernel `exp(−σ²(a−b)²/2)`. On the
//! product side every component applies its own linear projector to the
//! Euclidean features and maps the result with `exp_0`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::linalg::{dot, Mat};
use crate::manifold::{proportional_dims, Component, Signature};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FrequencySource {
    Gaussian { sigma: f64 },
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureEncoder {
    pub frequencies: Vec<f64>,
    pub source: FrequencySource,
    pub seed: u64,
    pub signature: Signature,
    /// One `2d_C × d_q` matrix per component of `signature`.
    pub projectors: Vec<Mat>,
}

/// Split `d_c` across the components of `model_sig` in proportion to their
/// dimensions, keeping kinds and curvatures.
pub fn encoding_signature(model_sig: &Signature, d_c: usize) -> Result<Signature> {
    if d_c < model_sig.len() {
        return Err(Error::invalid(format!(
            "encoding dimension {d_c} is smaller than the {} components",
            model_sig.len()
        )));
    }
    let weights: Vec<f64> = model_sig.components().iter().map(|c| c.dim as f64).collect();
    let dims = proportional_dims(d_c, &weights);
    let comps = model_sig
        .components()
        .iter()
        .zip(dims)
        .map(|(c, d)| Component::new(c.kind, d, c.curvature))
        .collect::<Result<Vec<_>>>()?;
    Signature::new(comps)
}

impl CurvatureEncoder {
    /// Gaussian frequencies and uniformly initialised projectors
    /// (`U(−a, a)`, `a = √(6 / (2d_C + d_q))`), all from one seeded stream.
    pub fn gaussian(d_c: usize, sigma: f64, seed: u64, signature: Signature) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::invalid(format!("frequency scale must be positive, got {sigma}")));
        }
        if signature.dim() != d_c {
            return Err(Error::dims(format!(
                "encoding signature has dimension {}, expected {d_c}",
                signature.dim()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
        let frequencies: Vec<f64> = (0..d_c).map(|_| normal.sample(&mut rng)).collect();
        let projectors = signature
            .components()
            .iter()
            .map(|c| {
                let a = (6.0 / (2 * d_c + c.dim) as f64).sqrt();
                let u = Uniform::new(-a, a).expect("valid range");
                Mat::from_fn(2 * d_c, c.dim, |_, _| u.sample(&mut rng))
            })
            .collect();
        Ok(CurvatureEncoder {
            frequencies,
            source: FrequencySource::Gaussian { sigma },
            seed,
            signature,
            projectors,
        })
    }

    /// Explicit frequencies with zero projectors.
    pub fn with_frequencies(frequencies: Vec<f64>, signature: Signature) -> Result<Self> {
        let d_c = frequencies.len();
        if signature.dim() != d_c || frequencies.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid("frequencies must be finite and match the signature dimension"));
        }
        let projectors = signature
            .components()
            .iter()
            .map(|c| Mat::zeros(2 * d_c, c.dim))
            .collect();
        Ok(CurvatureEncoder {
            frequencies,
            source: FrequencySource::Custom,
            seed: 0,
            signature,
            projectors,
        })
    }

    /// Projectors that pass through consecutive feature slices, so block
    /// `q` receives features `offset_q .. offset_q + d_q`.
    pub fn identity_projectors(mut self) -> Self {
        let d2 = 2 * self.d_c();
        let mut offset = 0;
        self.projectors = self
            .signature
            .components()
            .iter()
            .map(|c| {
                let m = Mat::from_fn(d2, c.dim, |i, j| if i == offset + j { 1.0 } else { 0.0 });
                offset += c.dim;
                m
            })
            .collect();
        self
    }

    pub fn set_projectors(&mut self, projectors: Vec<Mat>) -> Result<()> {
        let d2 = 2 * self.d_c();
        let ok = projectors.len() == self.signature.len()
            && projectors
                .iter()
                .zip(self.signature.components())
                .all(|(p, c)| p.shape() == (d2, c.dim));
        if !ok {
            return Err(Error::dims("projector shapes do not match the encoding signature"));
        }
        self.projectors = projectors;
        Ok(())
    }

    pub fn d_c(&self) -> usize {
        self.frequencies.len()
    }

    /// Interleaved `√(1/d_C) [cos ω_i κ, sin ω_i κ]`.
    pub fn phi_euclidean(&self, orc: f64) -> Vec<f64> {
        let s = (1.0 / self.d_c() as f64).sqrt();
        self.frequencies
            .iter()
            .flat_map(|w| {
                let (sin, cos) = (w * orc).sin_cos();
                [s * cos, s * sin]
            })
            .collect()
    }

    /// `⟨Φ(a), Φ(b)⟩`.
    pub fn kernel(&self, a: f64, b: f64) -> f64 {
        dot(&self.phi_euclidean(a), &self.phi_euclidean(b))
    }

    /// Euclidean features of many curvature values, one row each.
    pub fn phi_matrix(&self, orc: &[f64]) -> Mat {
        let d2 = 2 * self.d_c();
        let mut data = Vec::with_capacity(orc.len() * d2);
        for &k in orc {
            data.extend(self.phi_euclidean(k));
        }
        Mat::from_vec(orc.len(), d2, data).expect("consistent shape")
    }

    /// Projected tangent vector before `exp_0`.
    pub fn tangent(&self, orc: f64) -> Vec<f64> {
        let phi = self.phi_euclidean(orc);
        let mut out = Vec::with_capacity(self.d_c());
        for p in &self.projectors {
            out.extend((0..p.cols()).map(|j| (0..p.rows()).map(|i| phi[i] * p[(i, j)]).sum::<f64>()));
        }
        out
    }

    /// Product-manifold encoding of one curvature value.
    pub fn phi_product(&self, orc: f64) -> Result<Vec<f64>> {
        self.signature.exp0(&self.tangent(orc))
    }

    /// One encoded row per node.
    pub fn encode_all(&self, node_orc: &[f64], exec: Exec) -> Result<Mat> {
        if let Some(i) = node_orc.iter().position(|k| !k.is_finite()) {
            return Err(Error::invalid(format!("node {i} has no finite curvature value")));
        }
        let rows = exec.try_map(node_orc.len(), |i| self.phi_product(node_orc[i]))?;
        let d = self.d_c();
        Mat::from_vec(node_orc.len(), d, rows.into_iter().flatten().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::norm;

    fn sig(spec: &str) -> Signature {
        spec.parse().unwrap()
    }

    #[test]
    fn phi_at_zero_and_unit_norm() {
        let enc = CurvatureEncoder::gaussian(4, 1.0, 7, sig("E:4:0")).unwrap();
        let p = enc.phi_euclidean(0.0);
        assert_eq!(p, vec![0.5, 0.0, 0.5, 0.0, 0.5, 0.0, 0.5, 0.0]);
        for k in [-1.0, -0.3, 0.2, 0.9] {
            assert!((norm(&enc.phi_euclidean(k)) - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn kernel_identities() {
        let enc = CurvatureEncoder::gaussian(16, 1.0, 3, sig("H:8:-1,S:8:1")).unwrap();
        let (a, b) = (0.3, -0.55);
        let direct: f64 = enc.frequencies.iter().map(|w| (w * (a - b)).cos()).sum::<f64>() / 16.0;
        assert!((enc.kernel(a, b) - direct).abs() < 1e-12);
        assert!((enc.kernel(a, a) - 1.0).abs() < 1e-14);
        assert!((enc.kernel(a + 0.2, b + 0.2) - enc.kernel(a, b)).abs() < 1e-12);
    }

    #[test]
    fn gaussian_target() {
        let enc = CurvatureEncoder::gaussian(4096, 1.0, 11, Signature::euclidean(4096).unwrap()).unwrap();
        for (a, b) in [(0.0, 0.5), (-1.0, 1.0), (0.2, 0.25)] {
            let want = (-(a - b) * (a - b) / 2.0f64).exp();
            assert!((enc.kernel(a, b) - want).abs() <= 0.05);
        }
    }

    #[test]
    fn product_side() {
        let enc = CurvatureEncoder::gaussian(4, 1.0, 1, sig("E:4:0")).unwrap().identity_projectors();
        let phi = enc.phi_euclidean(0.4);
        assert_eq!(enc.phi_product(0.4).unwrap(), phi[..4].to_vec());

        let zero = CurvatureEncoder::with_frequencies(vec![1.0, 2.0, 3.0], sig("H:2:-1,S:1:0.5")).unwrap();
        assert_eq!(zero.phi_product(0.7).unwrap(), vec![0.0; 3]);

        let mixed = CurvatureEncoder::gaussian(6, 1.0, 2, sig("H:3:-1,S:3:2")).unwrap();
        let m = mixed.encode_all(&[-1.0, 0.0, 0.5, 1.0], Exec::Sequential).unwrap();
        for i in 0..4 {
            assert!(mixed.signature.contains(m.row(i)));
        }
    }

    #[test]
    fn encode_all_rows() {
        let enc = CurvatureEncoder::gaussian(4, 1.0, 5, sig("H:2:-1,E:2:0")).unwrap();
        let m = enc.encode_all(&[0.75, 0.75, 0.75], Exec::Sequential).unwrap();
        assert_eq!(m.row(0), m.row(2));
        let m = enc.encode_all(&[0.75, 0.0], Exec::Parallel).unwrap();
        assert_ne!(m.row(0), m.row(1));

        let w = 3.0;
        let single = CurvatureEncoder::with_frequencies(vec![w], sig("E:1:0")).unwrap();
        let a = single.phi_euclidean(-0.9);
        let b = single.phi_euclidean(-0.9 + 2.0 * std::f64::consts::PI / w);
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn encoding_signature_split() {
        let s = encoding_signature(&sig("H:16:-1,S:16:1,E:16:0"), 16).unwrap();
        assert_eq!(s.dim(), 16);
        assert_eq!(s.len(), 3);
        assert!(encoding_signature(&sig("H:16:-1,S:16:1,E:16:0"), 2).is_err());
    }
}
