//! κ-stereographic gyrovector algebra.
//!
//! Points live in `{z : −κ‖z‖² < 1}`. Negative κ gives the Poincaré ball of
//! radius `1/√|κ|`, positive κ the stereographic projection of a sphere and
//! κ = 0 plain Euclidean space. All functions work on coordinate slices with
//! an explicit curvature; [`StereoPoint`] bundles the two with checks.
//!
//! Conventions:
//! * Möbius addition is
//!   `x ⊕ y = ((1 − 2κ⟨x,y⟩ − κ‖y‖²) x + (1 + κ‖x‖²) y) / (1 − 2κ⟨x,y⟩ + κ²‖x‖²‖y‖²)`.
//! * Distance is `2/√|κ| · artan_κ(√|κ| ‖(−x) ⊕ y‖)`, whose flat limit is
//!   `2‖x − y‖` (the conformal factor at κ = 0 is 2).
//! * Euclidean `log_x(y) = y − x`, the inverse of `exp_x(v) = x + v`.
//! * Scalar multiplication is `r ⊗ x = exp_0(r · log_0(x))`.

use crate::error::{Error, Result};
use crate::graph::Csr;
use crate::linalg::{dot, norm, Mat};

/// Relative margin kept from the boundary of the Poincaré ball.
pub const BALL_MARGIN: f64 = 1e-5;

const DENOM_EPS: f64 = 1e-15;

/// `tan` for κ > 0, `tanh` for κ < 0, identity for κ = 0.
pub fn tan_k(u: f64, kappa: f64) -> Result<f64> {
    if !u.is_finite() {
        return Err(Error::Domain(format!("tan_k of non-finite {u}")));
    }
    if kappa > 0.0 {
        if u.cos().abs() < 1e-12 {
            return Err(Error::Domain(format!("tan_k({u}) is at a pole")));
        }
        Ok(u.tan())
    } else if kappa < 0.0 {
        Ok(u.tanh())
    } else {
        Ok(u)
    }
}

/// Inverse of [`tan_k`].
pub fn arctan_k(u: f64, kappa: f64) -> Result<f64> {
    if !u.is_finite() {
        return Err(Error::Domain(format!("arctan_k of non-finite {u}")));
    }
    if kappa > 0.0 {
        Ok(u.atan())
    } else if kappa < 0.0 {
        if u.abs() >= 1.0 {
            return Err(Error::Domain(format!("artanh({u}) is undefined")));
        }
        Ok(u.atanh())
    } else {
        Ok(u)
    }
}

/// Conformal factor `λ_x = 2 / (1 + κ‖x‖²)`.
pub fn lambda(x: &[f64], kappa: f64) -> f64 {
    2.0 / (1.0 + kappa * dot(x, x))
}

/// Whether `x` satisfies `−κ‖x‖² < 1`.
pub fn in_domain(x: &[f64], kappa: f64) -> bool {
    x.iter().all(|v| v.is_finite()) && -kappa * dot(x, x) < 1.0
}

/// Largest admissible norm for κ < 0, infinite otherwise.
pub fn max_norm(kappa: f64) -> f64 {
    if kappa < 0.0 {
        (1.0 - BALL_MARGIN) / kappa.abs().sqrt()
    } else {
        f64::INFINITY
    }
}

/// Radially pull a hyperbolic point back inside the ball.
pub fn project(x: &mut [f64], kappa: f64) {
    let r = max_norm(kappa);
    let n = norm(x);
    if n > r {
        let s = r / n;
        x.iter_mut().for_each(|v| *v *= s);
    }
}

fn projected(mut x: Vec<f64>, kappa: f64) -> Vec<f64> {
    project(&mut x, kappa);
    x
}

fn same_dim(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::dims(format!("points of dimension {} and {}", x.len(), y.len())));
    }
    Ok(())
}

/// `x ⊕_κ y`.
pub fn mobius_add(x: &[f64], y: &[f64], kappa: f64) -> Result<Vec<f64>> {
    same_dim(x, y)?;
    let xy = dot(x, y);
    let x2 = dot(x, x);
    let y2 = dot(y, y);
    let a = 1.0 - 2.0 * kappa * xy - kappa * y2;
    let b = 1.0 + kappa * x2;
    let den = 1.0 - 2.0 * kappa * xy + kappa * kappa * x2 * y2;
    if den.abs() < DENOM_EPS {
        return Err(Error::Domain("Möbius addition denominator vanishes".into()));
    }
    let out = x.iter().zip(y).map(|(xi, yi)| (a * xi + b * yi) / den).collect();
    Ok(projected(out, kappa))
}

/// `(−x) ⊕_κ y`, the gyro-difference used by log and distance.
fn gyro_diff(x: &[f64], y: &[f64], kappa: f64) -> Result<Vec<f64>> {
    let neg: Vec<f64> = x.iter().map(|v| -v).collect();
    mobius_add(&neg, y, kappa)
}

/// Exponential map at the origin.
pub fn exp0(v: &[f64], kappa: f64) -> Result<Vec<f64>> {
    let n = norm(v);
    if kappa == 0.0 || n == 0.0 {
        return Ok(v.to_vec());
    }
    let s = kappa.abs().sqrt();
    let f = tan_k(s * n, kappa)? / (s * n);
    Ok(projected(v.iter().map(|x| f * x).collect(), kappa))
}

/// Logarithmic map at the origin.
pub fn log0(y: &[f64], kappa: f64) -> Result<Vec<f64>> {
    let n = norm(y);
    if kappa == 0.0 || n == 0.0 {
        return Ok(y.to_vec());
    }
    let s = kappa.abs().sqrt();
    let f = arctan_k(s * n, kappa)? / (s * n);
    Ok(y.iter().map(|x| f * x).collect())
}

/// Exponential map at `x`.
pub fn exp_map(x: &[f64], v: &[f64], kappa: f64) -> Result<Vec<f64>> {
    same_dim(x, v)?;
    let n = norm(v);
    if n == 0.0 {
        return Ok(x.to_vec());
    }
    if kappa == 0.0 {
        return Ok(x.iter().zip(v).map(|(a, b)| a + b).collect());
    }
    let s = kappa.abs().sqrt();
    let f = tan_k(s * lambda(x, kappa) * n / 2.0, kappa)? / (s * n);
    let step: Vec<f64> = v.iter().map(|t| f * t).collect();
    mobius_add(x, &step, kappa)
}

/// Logarithmic map at `x`.
pub fn log_map(x: &[f64], y: &[f64], kappa: f64) -> Result<Vec<f64>> {
    same_dim(x, y)?;
    if kappa == 0.0 {
        return Ok(y.iter().zip(x).map(|(a, b)| a - b).collect());
    }
    let w = gyro_diff(x, y, kappa)?;
    let n = norm(&w);
    if n == 0.0 {
        return Ok(vec![0.0; x.len()]);
    }
    let s = kappa.abs().sqrt();
    let f = 2.0 / (s * lambda(x, kappa)) * arctan_k(s * n, kappa)? / n;
    Ok(w.iter().map(|t| f * t).collect())
}

/// Geodesic distance.
pub fn distance(x: &[f64], y: &[f64], kappa: f64) -> Result<f64> {
    same_dim(x, y)?;
    if kappa == 0.0 {
        let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
        return Ok(2.0 * norm(&d));
    }
    let w = gyro_diff(x, y, kappa)?;
    let s = kappa.abs().sqrt();
    Ok(2.0 / s * arctan_k(s * norm(&w), kappa)?.abs())
}

/// Distance from the origin, `2/√|κ| · artan_κ(√|κ| ‖x‖)`.
pub fn norm0(x: &[f64], kappa: f64) -> Result<f64> {
    let n = norm(x);
    if kappa == 0.0 {
        return Ok(2.0 * n);
    }
    let s = kappa.abs().sqrt();
    Ok(2.0 / s * arctan_k(s * n, kappa)?)
}

/// `r ⊗_κ x`.
pub fn scale(r: f64, x: &[f64], kappa: f64) -> Result<Vec<f64>> {
    let t: Vec<f64> = log0(x, kappa)?.into_iter().map(|v| r * v).collect();
    exp0(&t, kappa)
}

/// Left-to-right fold `x_0 ⊕ x_1 ⊕ … ⊕ x_k`.
pub fn mobius_sum(points: &[Vec<f64>], kappa: f64) -> Result<Vec<f64>> {
    let mut it = points.iter();
    let Some(first) = it.next() else {
        return Err(Error::invalid("Möbius sum of no points"));
    };
    let mut acc = first.clone();
    for p in it {
        acc = mobius_add(&acc, p, kappa)?;
    }
    Ok(acc)
}

/// Weighted gyromidpoint
/// `½ ⊗ (Σ_i a_i λ_i x_i / Σ_j a_j (λ_j − 1))`.
pub fn gyromidpoint(points: &[&[f64]], weights: &[f64], kappa: f64) -> Result<Vec<f64>> {
    if points.len() != weights.len() {
        return Err(Error::dims(format!(
            "{} points and {} weights",
            points.len(),
            weights.len()
        )));
    }
    let d = points.first().map_or(0, |p| p.len());
    let mut num = vec![0.0; d];
    let mut den = 0.0;
    for (p, &a) in points.iter().zip(weights) {
        same_dim(p, &num)?;
        let l = lambda(p, kappa);
        for (n, x) in num.iter_mut().zip(p.iter()) {
            *n += a * l * x;
        }
        den += a * (l - 1.0);
    }
    if den.abs() < DENOM_EPS {
        return Err(Error::Domain("gyromidpoint weights cancel".into()));
    }
    num.iter_mut().for_each(|n| *n /= den);
    scale(0.5, &num, kappa)
}

/// Row-wise `exp_0`.
pub fn exp0_rows(x: &Mat, kappa: f64) -> Result<Mat> {
    map_rows(x, |r| exp0(r, kappa))
}

/// Row-wise `log_0`.
pub fn log0_rows(x: &Mat, kappa: f64) -> Result<Mat> {
    map_rows(x, |r| log0(r, kappa))
}

fn map_rows(x: &Mat, f: impl Fn(&[f64]) -> Result<Vec<f64>>) -> Result<Mat> {
    let mut out = Vec::with_capacity(x.rows() * x.cols());
    for i in 0..x.rows() {
        out.extend(f(x.row(i))?);
    }
    Mat::from_vec(x.rows(), x.cols(), out)
}

/// κ-right matrix multiplication `X ⊗_κ W`, in closed form per row:
/// `tan_κ(‖xW‖/‖x‖ · artan_κ(√|κ|‖x‖)) / √|κ| · xW / ‖xW‖`.
pub fn right_matmul(x: &Mat, w: &Mat, kappa: f64) -> Result<Mat> {
    let xw = x.matmul(w)?;
    if kappa == 0.0 {
        return Ok(xw);
    }
    let s = kappa.abs().sqrt();
    let mut out = Mat::zeros(x.rows(), w.cols());
    for i in 0..x.rows() {
        let nx = norm(x.row(i));
        let nxw = norm(xw.row(i));
        if nx == 0.0 || nxw == 0.0 {
            continue;
        }
        let f = tan_k(nxw / nx * arctan_k(s * nx, kappa)?, kappa)? / (s * nxw);
        let row = out.row_mut(i);
        for (o, v) in row.iter_mut().zip(xw.row(i)) {
            *o = f * v;
        }
        project(row, kappa);
    }
    Ok(out)
}

/// κ-left matrix multiplication: row `i` is
/// `(Σ_j A_ij) ⊗ m_κ(X; A_i)`. All-zero rows map to the origin.
pub fn left_matmul(a: &Csr, x: &Mat, kappa: f64) -> Result<Mat> {
    if a.n_cols != x.rows() {
        return Err(Error::dims(format!(
            "{}x{} operator applied to {} rows",
            a.n_rows,
            a.n_cols,
            x.rows()
        )));
    }
    if kappa == 0.0 {
        return a.matmul(x);
    }
    let mut out = Mat::zeros(a.n_rows, x.cols());
    for i in 0..a.n_rows {
        let (pts, ws): (Vec<&[f64]>, Vec<f64>) = a.row(i).map(|(j, v)| (x.row(j), v)).unzip();
        let total: f64 = ws.iter().sum();
        if ws.iter().all(|&v| v == 0.0) {
            continue;
        }
        let m = gyromidpoint(&pts, &ws, kappa)?;
        out.row_mut(i).copy_from_slice(&scale(total, &m, kappa)?);
    }
    Ok(out)
}

/// A point on a κ-stereographic model.
#[derive(Debug, Clone, PartialEq)]
pub struct StereoPoint {
    coords: Vec<f64>,
    kappa: f64,
}

impl StereoPoint {
    pub fn new(coords: Vec<f64>, kappa: f64) -> Result<Self> {
        if !kappa.is_finite() {
            return Err(Error::invalid(format!("curvature {kappa} is not finite")));
        }
        if !in_domain(&coords, kappa) {
            return Err(Error::Domain(format!("point lies outside the κ = {kappa} model")));
        }
        Ok(StereoPoint { coords, kappa })
    }

    pub fn origin(dim: usize, kappa: f64) -> Self {
        StereoPoint {
            coords: vec![0.0; dim],
            kappa,
        }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    fn compatible(&self, other: &StereoPoint) -> Result<()> {
        if self.kappa != other.kappa {
            return Err(Error::invalid(format!(
                "curvature mismatch: {} vs {}",
                self.kappa, other.kappa
            )));
        }
        same_dim(&self.coords, &other.coords)
    }

    fn wrap(&self, coords: Vec<f64>) -> StereoPoint {
        StereoPoint {
            coords,
            kappa: self.kappa,
        }
    }

    pub fn mobius_add(&self, other: &StereoPoint) -> Result<StereoPoint> {
        self.compatible(other)?;
        Ok(self.wrap(mobius_add(&self.coords, &other.coords, self.kappa)?))
    }

    pub fn exp_map(&self, v: &[f64]) -> Result<StereoPoint> {
        Ok(self.wrap(exp_map(&self.coords, v, self.kappa)?))
    }

    pub fn log_map(&self, other: &StereoPoint) -> Result<Vec<f64>> {
        self.compatible(other)?;
        log_map(&self.coords, &other.coords, self.kappa)
    }

    pub fn distance(&self, other: &StereoPoint) -> Result<f64> {
        self.compatible(other)?;
        distance(&self.coords, &other.coords, self.kappa)
    }

    pub fn scale(&self, r: f64) -> Result<StereoPoint> {
        Ok(self.wrap(scale(r, &self.coords, self.kappa)?))
    }
}
