//! Product manifolds of κ-stereographic components.
//!
//! A [`Signature`] lists components in block order; a point on the product
//! is a flat coordinate vector whose consecutive blocks belong to each
//! component, and a product matrix stores one such point per row.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::stereo;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Kind {
    H,
    S,
    E,
}

impl Kind {
    pub fn letter(self) -> char {
        match self {
            Kind::H => 'H',
            Kind::S => 'S',
            Kind::E => 'E',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub kind: Kind,
    pub dim: usize,
    pub curvature: f64,
    pub trainable: bool,
}

impl Component {
    pub fn new(kind: Kind, dim: usize, curvature: f64) -> Result<Self> {
        let ok = match kind {
            Kind::H => curvature < 0.0,
            Kind::S => curvature > 0.0,
            Kind::E => curvature == 0.0,
        };
        if !ok || !curvature.is_finite() {
            return Err(Error::invalid(format!(
                "curvature {curvature} does not fit component kind {}",
                kind.letter()
            )));
        }
        if dim == 0 {
            return Err(Error::invalid("component dimension must be positive"));
        }
        Ok(Component {
            kind,
            dim,
            curvature,
            trainable: kind != Kind::E,
        })
    }
}

/// Ordered list of product components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Component>", into = "Vec<Component>")]
pub struct Signature {
    components: Vec<Component>,
}

impl TryFrom<Vec<Component>> for Signature {
    type Error = Error;

    fn try_from(components: Vec<Component>) -> Result<Self> {
        Signature::new(components)
    }
}

impl From<Signature> for Vec<Component> {
    fn from(s: Signature) -> Self {
        s.components
    }
}

impl Signature {
    pub fn new(components: Vec<Component>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::invalid("signature has no components"));
        }
        for c in &components {
            Component::new(c.kind, c.dim, c.curvature)?;
        }
        if components.iter().filter(|c| c.kind == Kind::E).count() > 1 {
            return Err(Error::invalid("signature has more than one Euclidean component"));
        }
        Ok(Signature { components })
    }

    /// Single Euclidean component of dimension `d`.
    pub fn euclidean(d: usize) -> Result<Self> {
        Signature::new(vec![Component::new(Kind::E, d, 0.0)?])
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.components.iter().map(|c| c.dim).sum()
    }

    pub fn curvatures(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.curvature).collect()
    }

    /// Same layout with new curvatures (sign contract is re-checked).
    pub fn with_curvatures(&self, ks: &[f64]) -> Result<Self> {
        if ks.len() != self.len() {
            return Err(Error::dims(format!("{} curvatures for {} components", ks.len(), self.len())));
        }
        let mut components = self.components.clone();
        for (c, &k) in components.iter_mut().zip(ks) {
            c.curvature = k;
        }
        Signature::new(components)
    }

    /// Coordinate range of every component.
    pub fn blocks(&self) -> Vec<Range<usize>> {
        let mut start = 0;
        self.components
            .iter()
            .map(|c| {
                let r = start..start + c.dim;
                start += c.dim;
                r
            })
            .collect()
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n != self.dim() {
            return Err(Error::dims(format!("vector of length {n} for signature of dimension {}", self.dim())));
        }
        Ok(())
    }

    fn blockwise(&self, x: &[f64], f: impl Fn(&[f64], f64) -> Result<Vec<f64>>) -> Result<Vec<f64>> {
        self.check_len(x.len())?;
        let mut out = Vec::with_capacity(x.len());
        for (c, r) in self.components.iter().zip(self.blocks()) {
            out.extend(f(&x[r], c.curvature)?);
        }
        Ok(out)
    }

    pub fn exp0(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.blockwise(v, stereo::exp0)
    }

    pub fn log0(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.blockwise(x, stereo::log0)
    }

    /// `sqrt(Σ_q d_q(x_q, y_q)²)`.
    pub fn distance(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check_len(x.len())?;
        self.check_len(y.len())?;
        let mut total = 0.0;
        for (c, r) in self.components.iter().zip(self.blocks()) {
            let d = stereo::distance(&x[r.clone()], &y[r], c.curvature)?;
            total += d * d;
        }
        Ok(total.sqrt())
    }

    /// Whether every block lies in its component's domain.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && self
                .components
                .iter()
                .zip(self.blocks())
                .all(|(c, r)| stereo::in_domain(&x[r], c.curvature))
    }

    pub fn exp0_rows(&self, m: &Mat) -> Result<Mat> {
        self.rowwise(m, |r| self.exp0(r))
    }

    pub fn log0_rows(&self, m: &Mat) -> Result<Mat> {
        self.rowwise(m, |r| self.log0(r))
    }

    fn rowwise(&self, m: &Mat, f: impl Fn(&[f64]) -> Result<Vec<f64>>) -> Result<Mat> {
        let mut out = Vec::with_capacity(m.rows() * m.cols());
        for i in 0..m.rows() {
            out.extend(f(m.row(i))?);
        }
        Mat::from_vec(m.rows(), m.cols(), out)
    }

    /// Split a product matrix into its component blocks.
    pub fn split(&self, m: &Mat) -> Result<Vec<Mat>> {
        self.check_len(m.cols())?;
        Ok(self.blocks().into_iter().map(|r| m.cols_range(r.start, r.end)).collect())
    }

    /// Text form with curvatures rounded to `decimals` places.
    pub fn to_string_rounded(&self, decimals: usize) -> String {
        self.components
            .iter()
            .map(|c| {
                let k = format!("{:.*}", decimals, c.curvature);
                let k = if k.contains('.') {
                    k.trim_end_matches('0').trim_end_matches('.').to_string()
                } else {
                    k
                };
                let k = if k == "-0" { "0".to_string() } else { k };
                format!("{}:{}:{}", c.kind.letter(), c.dim, k)
            })
            .collect::<Vec<_>>()
            .join(",")
    }
}

impl fmt::Display for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .components
            .iter()
            .map(|c| format!("{}:{}:{}", c.kind.letter(), c.dim, c.curvature))
            .collect();
        f.write_str(&parts.join(","))
    }
}

impl FromStr for Signature {
    type Err = Error;

    /// Parses `kind:dim:curvature` items separated by commas, e.g.
    /// `H:16:-0.45,S:16:0.25,E:16:0`.
    fn from_str(s: &str) -> Result<Self> {
        let mut comps = Vec::new();
        for item in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let parts: Vec<&str> = item.split(':').map(str::trim).collect();
            let [kind, dim, k] = parts[..] else {
                return Err(Error::invalid(format!("bad signature item `{item}`")));
            };
            let kind = match kind {
                "H" | "h" => Kind::H,
                "S" | "s" => Kind::S,
                "E" | "e" => Kind::E,
                other => return Err(Error::invalid(format!("unknown component kind `{other}`"))),
            };
            let dim: usize = dim
                .parse()
                .map_err(|_| Error::invalid(format!("bad dimension in `{item}`")))?;
            let k: f64 = k
                .parse()
                .map_err(|_| Error::invalid(format!("bad curvature in `{item}`")))?;
            comps.push(Component::new(kind, dim, if kind == Kind::E { 0.0 } else { k })?);
            if kind == Kind::E && k != 0.0 {
                return Err(Error::invalid(format!("Euclidean component with curvature {k}")));
            }
        }
        Signature::new(comps)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Offset that keeps trainable curvatures away from zero.
pub const CURVATURE_FLOOR: f64 = 1e-5;

/// Map an unconstrained parameter to a curvature with the component's sign:
/// `−(softplus(raw) + floor)` for H, `softplus(raw) + floor` for S, 0 for E.
pub fn clamp_trainable_curvature(raw: f64, kind: Kind) -> f64 {
    match kind {
        Kind::H => -(softplus(raw) + CURVATURE_FLOOR),
        Kind::S => softplus(raw) + CURVATURE_FLOOR,
        Kind::E => 0.0,
    }
}

/// Inverse of [`clamp_trainable_curvature`] for H and S components.
pub fn curvature_to_raw(curvature: f64) -> f64 {
    let m = (curvature.abs() - CURVATURE_FLOOR).max(1e-12);
    if m > 30.0 {
        m
    } else {
        m.exp_m1().ln()
    }
}

/// Options for [`estimate_signature`].
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateConfig {
    pub eps: f64,
    pub h_max: usize,
    pub s_max: usize,
    pub d_m: usize,
    /// Per-kind dimensions `(h, s, e)`; when set they replace the
    /// proportional split and the total becomes their sum.
    pub preferred_dims: Option<(usize, usize, usize)>,
    pub seed: u64,
    pub restarts: usize,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        EstimateConfig {
            eps: 0.05,
            h_max: 2,
            s_max: 2,
            d_m: 48,
            preferred_dims: None,
            seed: 0,
            restarts: 50,
        }
    }
}

/// Result of weighted one-dimensional k-means.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub centroids: Vec<f64>,
    pub assignment: Vec<usize>,
    /// Weighted within-cluster sum of squares.
    pub inertia: f64,
}

fn nearest(x: f64, centroids: &[f64]) -> usize {
    let mut best = 0;
    for (c, &m) in centroids.iter().enumerate() {
        // strict comparison keeps ties on the lower index
        if (x - m).abs() < (x - centroids[best]).abs() {
            best = c;
        }
    }
    best
}

fn lloyd(points: &[f64], weights: &[f64], mut centroids: Vec<f64>) -> Clustering {
    let mut assignment = vec![usize::MAX; points.len()];
    for _ in 0..200 {
        let next: Vec<usize> = points.iter().map(|&x| nearest(x, &centroids)).collect();
        let changed = next != assignment;
        assignment = next;
        let k = centroids.len();
        let mut sw = vec![0.0; k];
        let mut sx = vec![0.0; k];
        for ((&x, &w), &a) in points.iter().zip(weights).zip(&assignment) {
            sw[a] += w;
            sx[a] += w * x;
        }
        for c in 0..k {
            if sw[c] > 0.0 {
                centroids[c] = sx[c] / sw[c];
            }
        }
        if !changed {
            break;
        }
    }
    let inertia = points
        .iter()
        .zip(weights)
        .zip(&assignment)
        .map(|((&x, &w), &a)| w * (x - centroids[a]).powi(2))
        .sum();
    Clustering {
        centroids,
        assignment,
        inertia,
    }
}

/// Weighted k-means on scalars with seeded k-means++ restarts; the best
/// restart (lowest inertia, earliest on ties) wins.
pub fn weighted_kmeans(points: &[f64], weights: &[f64], k: usize, restarts: usize, seed: u64) -> Result<Clustering> {
    if points.len() != weights.len() {
        return Err(Error::dims(format!("{} points and {} weights", points.len(), weights.len())));
    }
    let total: f64 = weights.iter().sum();
    if k == 0 || points.is_empty() || !(total > 0.0) {
        return Err(Error::invalid("k-means needs k ≥ 1 and positive total weight"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<Clustering> = None;
    for _ in 0..restarts.max(1) {
        let mut centroids = vec![pick(points, weights, &mut rng, |_| 1.0)];
        while centroids.len() < k {
            let c = pick(points, weights, &mut rng, |x| {
                centroids.iter().map(|m| (x - m).powi(2)).fold(f64::INFINITY, f64::min)
            });
            centroids.push(c);
        }
        let run = lloyd(points, weights, centroids);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    let mut best = best.expect("at least one restart");
    // order clusters by centroid so labels are canonical
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| best.centroids[a].total_cmp(&best.centroids[b]));
    let mut rank = vec![0; k];
    for (r, &c) in order.iter().enumerate() {
        rank[c] = r;
    }
    best.centroids = order.iter().map(|&c| best.centroids[c]).collect();
    best.assignment.iter_mut().for_each(|a| *a = rank[*a]);
    Ok(best)
}

fn pick(points: &[f64], weights: &[f64], rng: &mut ChaCha8Rng, score: impl Fn(f64) -> f64) -> f64 {
    let s: Vec<f64> = points.iter().zip(weights).map(|(&x, &w)| w * score(x)).collect();
    let total: f64 = s.iter().sum();
    if !(total > 0.0) {
        return points[0];
    }
    let mut t = rng.random_range(0.0..total);
    for (i, &v) in s.iter().enumerate() {
        if t < v {
            return points[i];
        }
        t -= v;
    }
    points[points.len() - 1]
}

/// Number of clusters by the elbow rule: the smallest K for which going to
/// K + 1 clusters explains less than 10% of the total weighted variance.
pub fn elbow_k(inertias: &[f64]) -> usize {
    let total = inertias.first().copied().unwrap_or(0.0);
    for k in 1..inertias.len() {
        if inertias[k - 1] - inertias[k] < 0.1 * total {
            return k;
        }
    }
    inertias.len().max(1)
}

/// Estimate a product signature from a curvature histogram of
/// `(curvature, frequency)` pairs.
pub fn estimate_signature(hist: &[(f64, f64)], cfg: &EstimateConfig) -> Result<Signature> {
    if !(cfg.eps > 0.0) {
        return Err(Error::invalid("eps must be positive"));
    }
    if hist.iter().any(|&(k, f)| !k.is_finite() || !(f >= 0.0) || !f.is_finite()) {
        return Err(Error::invalid("histogram entries must be finite with non-negative frequency"));
    }
    let pts: Vec<(f64, f64)> = hist.iter().copied().filter(|&(_, f)| f > 0.0).collect();
    let total: f64 = pts.iter().map(|p| p.1).sum();
    if pts.is_empty() || !(total > 0.0) {
        return Err(Error::invalid("curvature histogram is empty"));
    }
    let ks: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let ws: Vec<f64> = pts.iter().map(|p| p.1 / total).collect();

    let mut distinct = ks.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let k_max = (cfg.h_max + cfg.s_max + 1).min(distinct.len());

    let runs: Vec<Clustering> = (1..=k_max)
        .map(|k| weighted_kmeans(&ks, &ws, k, cfg.restarts, cfg.seed))
        .collect::<Result<_>>()?;
    let inertias: Vec<f64> = runs.iter().map(|r| r.inertia).collect();
    let chosen = &runs[elbow_k(&inertias) - 1];

    let mut weight = vec![0.0; chosen.centroids.len()];
    for (&a, &w) in chosen.assignment.iter().zip(&ws) {
        weight[a] += w;
    }
    let mut hs: Vec<(f64, f64)> = Vec::new();
    let mut ss: Vec<(f64, f64)> = Vec::new();
    let mut e_weight: Option<f64> = None;
    // heaviest clusters claim the limited H/S slots first
    let mut order: Vec<usize> = (0..weight.len()).filter(|&c| weight[c] > 0.0).collect();
    order.sort_by(|&a, &b| weight[b].total_cmp(&weight[a]).then(a.cmp(&b)));
    for c in order {
        let (k, w) = (chosen.centroids[c], weight[c]);
        if k < -cfg.eps && hs.len() < cfg.h_max {
            hs.push((k, w));
        } else if k > cfg.eps && ss.len() < cfg.s_max {
            ss.push((k, w));
        } else {
            *e_weight.get_or_insert(0.0) += w;
        }
    }
    hs.sort_by(|a, b| a.0.total_cmp(&b.0));
    ss.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut kinds: Vec<(Kind, f64, f64)> = Vec::new();
    kinds.extend(hs.iter().map(|&(k, w)| (Kind::H, k, w)));
    kinds.extend(ss.iter().map(|&(k, w)| (Kind::S, k, w)));
    if let Some(w) = e_weight {
        kinds.push((Kind::E, 0.0, w));
    }

    let dims: Vec<usize> = match cfg.preferred_dims {
        Some((h, s, e)) => kinds
            .iter()
            .map(|(kind, _, _)| match kind {
                Kind::H => h,
                Kind::S => s,
                Kind::E => e,
            })
            .collect(),
        None => {
            if cfg.d_m < kinds.len() {
                return Err(Error::invalid(format!(
                    "total dimension {} is smaller than the {} components found",
                    cfg.d_m,
                    kinds.len()
                )));
            }
            proportional_dims(cfg.d_m, &kinds.iter().map(|k| k.2).collect::<Vec<_>>())
        }
    };
    let comps = kinds
        .iter()
        .zip(dims)
        .map(|(&(kind, k, _), d)| Component::new(kind, d, k))
        .collect::<Result<Vec<_>>>()?;
    Signature::new(comps)
}

/// Floor of the proportional share, remainder handed to the heaviest
/// components; every component keeps at least one dimension.
pub fn proportional_dims(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let mut dims: Vec<usize> = weights
        .iter()
        .map(|w| ((total as f64 * w / sum).floor() as usize).max(1))
        .collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    let mut assigned: usize = dims.iter().sum();
    let mut i = 0;
    while assigned < total {
        dims[order[i % order.len()]] += 1;
        assigned += 1;
        i += 1;
    }
    // the minimum of one can overshoot; take back from the heaviest
    i = 0;
    while assigned > total {
        let q = order[i % order.len()];
        if dims[q] > 1 {
            dims[q] -= 1;
            assigned -= 1;
        }
        i += 1;
    }
    dims
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bumps(peaks: &[(f64, f64)], width: f64) -> Vec<(f64, f64)> {
        (0..200)
            .map(|i| {
                let k = -1.0 + 2.0 * i as f64 / 199.0;
                let f = peaks
                    .iter()
                    .map(|&(c, m)| m * (-(k - c).powi(2) / (2.0 * width * width)).exp())
                    .sum();
                (k, f)
            })
            .collect()
    }

    #[test]
    fn parse_and_display() {
        let s: Signature = "H:16:-0.45,S:16:0.25,E:16:0".parse().unwrap();
        assert_eq!(s.dim(), 48);
        assert_eq!(s.to_string(), "H:16:-0.45,S:16:0.25,E:16:0");
        assert_eq!(s.blocks(), vec![0..16, 16..32, 32..48]);
        assert!("E:4:0,E:4:0".parse::<Signature>().is_err());
        assert!("H:4:0.3".parse::<Signature>().is_err());
        assert!("X:4:1".parse::<Signature>().is_err());
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<Signature>(&json).unwrap(), s);
    }

    #[test]
    fn pythagorean_distance() {
        let s: Signature = "E:1:0,H:1:-1".parse().unwrap();
        let x = [0.0, 0.0];
        // E block: 2·|Δ| = 3; H block: 2·artanh(r) = 4
        let y = [1.5, (2.0f64).tanh()];
        assert!((s.distance(&x, &y).unwrap() - 5.0).abs() < 1e-12);
        assert_eq!(s.distance(&y, &y).unwrap(), 0.0);
    }

    #[test]
    fn single_flat_cluster() {
        let s = estimate_signature(&[(0.0, 5.0), (0.01, 1.0), (-0.01, 1.0)], &EstimateConfig::default()).unwrap();
        assert_eq!(s.to_string(), "E:48:0");
    }

    #[test]
    fn bimodal_histogram() {
        let cfg = EstimateConfig {
            h_max: 1,
            s_max: 1,
            preferred_dims: Some((16, 16, 16)),
            ..Default::default()
        };
        let s = estimate_signature(&bumps(&[(-0.45, 1.0), (0.25, 1.0)], 0.05), &cfg).unwrap();
        let c = s.components();
        assert_eq!(c.len(), 2, "{s}");
        assert_eq!((c[0].kind, c[1].kind), (Kind::H, Kind::S));
        assert!((c[0].curvature + 0.45).abs() < 0.05);
        assert!((c[1].curvature - 0.25).abs() < 0.05);
        assert_eq!(s.to_string_rounded(2), "H:16:-0.45,S:16:0.25");
    }

    #[test]
    fn two_hyperbolic_atoms() {
        let cfg = EstimateConfig {
            h_max: 2,
            ..Default::default()
        };
        let s = estimate_signature(&[(-0.8, 1.0), (-0.3, 1.0)], &cfg).unwrap();
        let ks = s.curvatures();
        assert_eq!(ks.len(), 2);
        assert!((ks[0] + 0.8).abs() < 1e-12 && (ks[1] + 0.3).abs() < 1e-12);
        assert_eq!(s.dim(), 48);
    }

    #[test]
    fn empty_histogram_is_error() {
        assert!(estimate_signature(&[], &EstimateConfig::default()).is_err());
        assert!(estimate_signature(&[(0.2, 0.0)], &EstimateConfig::default()).is_err());
    }

    #[test]
    fn caps_are_respected() {
        let cfg = EstimateConfig {
            h_max: 1,
            s_max: 0,
            ..Default::default()
        };
        let s = estimate_signature(&[(-0.9, 1.0), (-0.2, 1.0), (0.6, 1.0)], &cfg).unwrap();
        let n_h = s.components().iter().filter(|c| c.kind == Kind::H).count();
        assert!(n_h <= 1);
        assert!(s.components().iter().all(|c| c.kind != Kind::S));
        assert_eq!(s.dim(), 48);
    }

    #[test]
    fn curvature_map() {
        assert_eq!(clamp_trainable_curvature(3.0, Kind::E), 0.0);
        assert!(clamp_trainable_curvature(0.0, Kind::H) < 0.0);
        let grid: Vec<f64> = (-50..50).map(|i| i as f64 * 0.2).collect();
        for w in grid.windows(2) {
            for kind in [Kind::H, Kind::S] {
                let a = clamp_trainable_curvature(w[0], kind).abs();
                let b = clamp_trainable_curvature(w[1], kind).abs();
                assert!(b > a);
            }
        }
        for k in [-2.0, -0.45, 0.25, 1.0] {
            let kind = if k < 0.0 { Kind::H } else { Kind::S };
            assert!((clamp_trainable_curvature(curvature_to_raw(k), kind) - k).abs() < 1e-12);
        }
    }

    #[test]
    fn dims_sum() {
        assert_eq!(proportional_dims(48, &[0.5, 0.3, 0.2]), vec![25, 14, 9]);
        assert_eq!(proportional_dims(10, &[1.0, 1.0, 1.0]).iter().sum::<usize>(), 10);
        assert_eq!(proportional_dims(3, &[0.98, 0.01, 0.01]), vec![1, 1, 1]);
    }
}
