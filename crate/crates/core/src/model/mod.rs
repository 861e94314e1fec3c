//! The CUSP network.
//!
//! Node features pass through a shared encoder `tanh(FW + b)` and are
//! mapped onto every component of the product manifold. A bank of GPR
//! filters propagates them with the curvature-weighted adjacency; each bank
//! entry is pooled over components with attention weights `β`, joined with
//! curvature encodings and mixed by `ε = softmax(logits)` in the tangent
//! space at the origin. Node classification reads `log_0` of the mixed
//! embedding with a linear head; link prediction scores pairs with a
//! Fermi–Dirac decoder on product distances.
//!
//! Everything differentiable is recorded on a [`Tape`], so the same forward
//! pass serves training, evaluation and gradient checking.

mod train;

pub use train::{
    auc, evaluate, gradient_check, lp_split, micro_f1, nc_split, train, EpochRecord, GradCheckReport, LpSplit,
    Metrics, NcSplit, Probe, Session, TaskData, TrainReport,
};

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, UnOp, Var};
use crate::encoding::{encoding_signature, CurvatureEncoder};
use crate::error::{Error, Result};
use crate::filter::GprWeights;
use crate::graph::{Csr, Graph};
use crate::laplacian::{self, CuspLaplacian};
use crate::linalg::Mat;
use crate::manifold::{
    clamp_trainable_curvature, curvature_to_raw, estimate_signature, EstimateConfig, Kind, Signature,
    CURVATURE_FLOOR,
};
use crate::orc::{self, OrcConfig, OrcResult};

pub const DEFAULT_SIGNATURE: &str = "H:16:-1,S:16:1,E:16:0";

/// Spherical blocks are first squashed to geodesic radius below this many
/// `1/√κ` so the initial embedding stays inside one chart.
pub const SPHERE_SQUASH: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Nc,
    Lp,
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "nc" => Ok(Task::Nc),
            "lp" => Ok(Task::Lp),
            other => Err(Error::invalid(format!("unknown task '{other}' (expected nc or lp)"))),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Nc => "nc",
            Task::Lp => "lp",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterInit {
    Ppr,
    HighPass,
}

impl FromStr for FilterInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ppr" => Ok(FilterInit::Ppr),
            "highpass" => Ok(FilterInit::HighPass),
            other => Err(Error::invalid(format!("unknown filter init '{other}' (expected ppr or highpass)"))),
        }
    }
}

impl fmt::Display for FilterInit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FilterInit::Ppr => "ppr",
            FilterInit::HighPass => "highpass",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// `None` estimates the signature from the curvature distribution.
    pub signature: Option<Signature>,
    /// Total manifold dimension used by signature estimation.
    pub d_m: usize,
    /// Curvature encoding dimension; 0 disables the encoding.
    pub d_c: usize,
    pub d_pool: usize,
    /// Filter order `L`.
    pub l: usize,
    pub alpha: f64,
    pub filter_init: FilterInit,
    /// Scale of the encoding frequencies.
    pub sigma: f64,
    /// `false` freezes `β` uniform.
    pub pooling: bool,
    pub train_gamma: bool,
    pub train_curvature: bool,
    pub lp_radius: f64,
    pub lp_temperature: f64,
    pub signature_eps: f64,
    pub signature_h_max: usize,
    pub signature_s_max: usize,
    pub signature_preferred_dims: Option<(usize, usize, usize)>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            signature: Some(DEFAULT_SIGNATURE.parse().expect("valid default signature")),
            d_m: 48,
            d_c: 16,
            d_pool: 16,
            l: 10,
            alpha: 0.3,
            filter_init: FilterInit::Ppr,
            sigma: 1.0,
            pooling: true,
            train_gamma: true,
            train_curvature: true,
            lp_radius: 2.0,
            lp_temperature: 1.0,
            signature_eps: 0.05,
            signature_h_max: 2,
            signature_s_max: 2,
            signature_preferred_dims: None,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.l == 0 {
            return Err(Error::invalid("model.l must be at least 1"));
        }
        if self.d_pool == 0 || self.d_m == 0 {
            return Err(Error::invalid("model.d_m and model.d_pool must be positive"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(format!("model.alpha = {} outside (0, 1)", self.alpha)));
        }
        if !(self.sigma > 0.0) || !(self.lp_temperature > 0.0) || !self.lp_radius.is_finite() {
            return Err(Error::invalid("model.sigma and model.lp_temperature must be positive"));
        }
        if let Some(sig) = &self.signature {
            if self.d_c > 0 && self.d_c < sig.len() {
                return Err(Error::invalid(format!(
                    "model.d_c = {} is smaller than the {} signature components",
                    self.d_c,
                    sig.len()
                )));
            }
        }
        Ok(())
    }

    fn initial_gamma(&self) -> Result<GprWeights> {
        match self.filter_init {
            FilterInit::Ppr => GprWeights::ppr(self.alpha, self.l),
            FilterInit::HighPass => GprWeights::highpass(self.alpha, self.l),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub task: Task,
    pub lr: f64,
    pub epochs: usize,
    pub weight_decay: f64,
    pub dropout: f64,
    pub seed: u64,
    /// Train/validation/test fractions; `None` uses the task default.
    pub split: Option<[f64; 3]>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            task: Task::Nc,
            lr: 4e-3,
            epochs: 100,
            weight_decay: 5e-4,
            dropout: 0.3,
            seed: 0,
            split: None,
        }
    }
}

impl TrainConfig {
    pub fn fractions(&self) -> [f64; 3] {
        self.split.unwrap_or(match self.task {
            Task::Nc => [0.6, 0.2, 0.2],
            Task::Lp => [0.85, 0.05, 0.1],
        })
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.fractions();
        if f.iter().any(|x| !(0.0..=1.0).contains(x)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("split fractions {f:?} must be in [0, 1] and sum to 1")));
        }
        if f.contains(&0.0) {
            return Err(Error::invalid("every split fraction must be positive"));
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::invalid("train.lr must be positive and train.weight_decay non-negative"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("train.dropout = {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Full experiment configuration.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CuspConfig {
    pub orc: OrcConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl CuspConfig {
    pub fn validate(&self) -> Result<()> {
        self.orc.validate()?;
        self.model.validate()?;
        self.train.validate()
    }
}

/// Graph-derived inputs that stay fixed during training.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub features: Mat,
    /// Curvature-weighted normalized adjacency.
    pub a_n: Csr,
    pub row_sums: Vec<f64>,
    /// Node curvature clamped to `[−1, 1]`.
    pub node_orc: Vec<f64>,
    pub orc: OrcResult,
    pub laplacian: CuspLaplacian,
}

pub fn prepare(g: &Graph, features: &Mat, orc_cfg: &OrcConfig) -> Result<Prepared> {
    if features.rows() != g.n() {
        return Err(Error::dims(format!("{} feature rows for {} nodes", features.rows(), g.n())));
    }
    let orc = orc::compute_all(g, orc_cfg)?;
    let laplacian = laplacian::build(g, &orc)?;
    let a_n = laplacian.a_norm_csr();
    let row_sums = a_n.row_sums();
    Ok(Prepared {
        features: features.clone(),
        node_orc: orc.clamped_node_values(),
        a_n,
        row_sums,
        orc,
        laplacian,
    })
}

/// The configured signature, or one estimated from the edge curvatures.
pub fn resolve_signature(cfg: &ModelConfig, orc: &OrcResult, seed: u64) -> Result<Signature> {
    if let Some(s) = &cfg.signature {
        return Ok(s.clone());
    }
    let hist: Vec<(f64, f64)> = orc.edge_values().iter().map(|k| (k.clamp(-1.0, 1.0), 1.0)).collect();
    let est = EstimateConfig {
        eps: cfg.signature_eps,
        h_max: cfg.signature_h_max,
        s_max: cfg.signature_s_max,
        d_m: cfg.d_m,
        preferred_dims: cfg.signature_preferred_dims,
        seed,
        ..EstimateConfig::default()
    };
    estimate_signature(&hist, &est)
}

/// Every learnable tensor of the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub signature: Signature,
    pub enc_signature: Option<Signature>,
    pub frequencies: Vec<f64>,
    pub feat_w: Mat,
    pub feat_b: Mat,
    /// Row `e` holds the hop weights of bank entry `e`.
    pub gamma: Mat,
    pub epsilon_logits: Mat,
    /// One raw value per component; unused on flat components.
    pub curvature_raw: Mat,
    pub pool_w: Vec<Mat>,
    pub theta: Mat,
    pub enc_proj: Vec<Mat>,
    /// Empty for link prediction.
    pub head_w: Mat,
    pub head_b: Mat,
}

fn glorot<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Mat {
    let a = (6.0 / (rows + cols).max(1) as f64).sqrt();
    let u = Uniform::new_inclusive(-a, a).expect("valid range");
    Mat::from_fn(rows, cols, |_, _| u.sample(rng))
}

impl ModelParams {
    /// Fresh parameters. `classes` is `Some` for node classification.
    pub fn init(signature: Signature, d_f: usize, classes: Option<usize>, cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if d_f == 0 {
            return Err(Error::invalid("nodes need at least one feature"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d_m = signature.dim();
        let q = signature.len();
        let base = cfg.initial_gamma()?;
        let l1 = cfg.l + 1;
        let gamma = Mat::from_fn(l1, l1, |_, j| base.gamma[j]);
        let curvature_raw = Mat::from_fn(1, q, |_, i| {
            let c = &signature.components()[i];
            match c.kind {
                Kind::E => 0.0,
                _ => curvature_to_raw(c.curvature),
            }
        });
        let feat_w = glorot(d_f, d_m, &mut rng);
        let pool_w = signature
            .components()
            .iter()
            .map(|c| glorot(c.dim, cfg.d_pool, &mut rng))
            .collect();
        let theta = glorot(cfg.d_pool, 1, &mut rng);
        let (enc_signature, frequencies, enc_proj) = if cfg.d_c > 0 {
            let es = encoding_signature(&signature, cfg.d_c)?;
            let enc = CurvatureEncoder::gaussian(cfg.d_c, cfg.sigma, rng.random(), es.clone())?;
            (Some(es), enc.frequencies, enc.projectors)
        } else {
            (None, Vec::new(), Vec::new())
        };
        let width = d_m + cfg.d_c;
        let (head_w, head_b) = match classes {
            Some(c) if c >= 2 => (glorot(width, c, &mut rng), Mat::zeros(1, c)),
            Some(c) => return Err(Error::invalid(format!("classification needs at least 2 classes, got {c}"))),
            None => (Mat::zeros(0, 0), Mat::zeros(0, 0)),
        };
        Ok(ModelParams {
            signature,
            enc_signature,
            frequencies,
            feat_w,
            feat_b: Mat::zeros(1, d_m),
            gamma,
            epsilon_logits: Mat::zeros(1, l1),
            curvature_raw,
            pool_w,
            theta,
            enc_proj,
            head_w,
            head_b,
        })
    }

    /// Order of the filter bank.
    pub fn order(&self) -> usize {
        self.gamma.rows() - 1
    }

    /// Current component curvatures.
    pub fn curvatures(&self) -> Vec<f64> {
        self.signature
            .components()
            .iter()
            .enumerate()
            .map(|(i, c)| match c.kind {
                Kind::E => 0.0,
                kind => clamp_trainable_curvature(self.curvature_raw[(0, i)], kind),
            })
            .collect()
    }

    /// Signature with the current curvatures.
    pub fn learned_signature(&self) -> Result<Signature> {
        self.signature.with_curvatures(&self.curvatures())
    }

    pub fn epsilon(&self) -> Vec<f64> {
        crate::filter::softmax(self.epsilon_logits.as_slice())
    }

    /// Named tensors in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &Mat)> {
        let mut out = vec![
            ("feat_w".to_string(), &self.feat_w),
            ("feat_b".to_string(), &self.feat_b),
            ("gamma".to_string(), &self.gamma),
            ("epsilon_logits".to_string(), &self.epsilon_logits),
            ("curvature_raw".to_string(), &self.curvature_raw),
        ];
        out.extend(self.pool_w.iter().enumerate().map(|(i, m)| (format!("pool_w.{i}"), m)));
        out.push(("theta".to_string(), &self.theta));
        out.extend(self.enc_proj.iter().enumerate().map(|(i, m)| (format!("enc_proj.{i}"), m)));
        out.push(("head_w".to_string(), &self.head_w));
        out.push(("head_b".to_string(), &self.head_b));
        out
    }

    /// Mutable tensors in the order of [`ModelParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Mat> {
        let mut out = vec![
            &mut self.feat_w,
            &mut self.feat_b,
            &mut self.gamma,
            &mut self.epsilon_logits,
            &mut self.curvature_raw,
        ];
        out.extend(self.pool_w.iter_mut());
        out.push(&mut self.theta);
        out.extend(self.enc_proj.iter_mut());
        out.push(&mut self.head_w);
        out.push(&mut self.head_b);
        out
    }

    /// Which tensors the optimiser updates under `cfg`.
    pub fn trainable(&self, cfg: &ModelConfig) -> Vec<bool> {
        let curved = self.signature.components().iter().any(|c| c.kind != Kind::E);
        self.tensors()
            .iter()
            .map(|(name, m)| {
                if m.as_slice().is_empty() {
                    return false;
                }
                match name.as_str() {
                    "gamma" => cfg.train_gamma,
                    "curvature_raw" => cfg.train_curvature && curved,
                    "theta" => cfg.pooling && self.signature.len() > 1,
                    n if n.starts_with("pool_w") => cfg.pooling && self.signature.len() > 1,
                    _ => true,
                }
            })
            .collect()
    }

    /// Which tensors carry weight decay.
    pub fn decayed(&self) -> Vec<bool> {
        self.tensors().iter().map(|(name, _)| name != "curvature_raw").collect()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, m)| m.as_slice().iter().all(|x| x.is_finite()))
    }

    pub fn encoder(&self) -> Option<CurvatureEncoder> {
        let es = self.enc_signature.clone()?;
        let mut enc = CurvatureEncoder::with_frequencies(self.frequencies.clone(), es).ok()?;
        enc.set_projectors(self.enc_proj.clone()).ok()?;
        Some(enc)
    }
}

/// Saved parameters together with the configuration that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: CuspConfig,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::invalid(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
        if !ck.params.is_finite() {
            return Err(Error::Numerical(format!("{}: non-finite parameters", path.display())));
        }
        Ok(ck)
    }
}

/// Tape variables of the parameter tensors.
#[derive(Debug, Clone)]
pub struct ParamVars {
    pub feat_w: Var,
    pub feat_b: Var,
    pub gamma: Var,
    pub epsilon_logits: Var,
    pub curvature_raw: Var,
    pub pool_w: Vec<Var>,
    pub theta: Var,
    pub enc_proj: Vec<Var>,
    pub head_w: Var,
    pub head_b: Var,
}

impl ParamVars {
    fn register(tape: &mut Tape, p: &ModelParams) -> Self {
        let mut reg = |m: &Mat| tape.param(m.clone());
        ParamVars {
            feat_w: reg(&p.feat_w),
            feat_b: reg(&p.feat_b),
            gamma: reg(&p.gamma),
            epsilon_logits: reg(&p.epsilon_logits),
            curvature_raw: reg(&p.curvature_raw),
            pool_w: p.pool_w.iter().map(&mut reg).collect(),
            theta: reg(&p.theta),
            enc_proj: p.enc_proj.iter().map(&mut reg).collect(),
            head_w: reg(&p.head_w),
            head_b: reg(&p.head_b),
        }
    }

    /// Variables in the order of [`ModelParams::tensors`].
    pub fn all(&self) -> Vec<Var> {
        let mut out = vec![self.feat_w, self.feat_b, self.gamma, self.epsilon_logits, self.curvature_raw];
        out.extend(&self.pool_w);
        out.push(self.theta);
        out.extend(&self.enc_proj);
        out.push(self.head_w);
        out.push(self.head_b);
        out
    }
}

/// One block of a product-manifold matrix on the tape.
#[derive(Debug, Clone, Copy)]
pub struct Block {
    pub value: Var,
    pub kappa: Var,
    pub kind: Kind,
}

/// A recorded forward pass.
pub struct Forward {
    pub tape: Tape,
    pub vars: ParamVars,
    /// Per model component.
    pub kappa: Vec<Var>,
    pub h0: Vec<Block>,
    /// Pooled and encoded blocks of every bank entry.
    pub entries: Vec<Vec<Block>>,
    /// `β` of every bank entry.
    pub beta: Vec<Vec<f64>>,
    pub epsilon: Vec<f64>,
    /// Mixed embedding: model components, then encoding components.
    pub zeta: Vec<Block>,
}

fn exp0_block(tape: &mut Tape, v: Var, k: Var, kind: Kind) -> Result<Var> {
    if kind == Kind::E {
        return Ok(v);
    }
    let x = tape.exp0(v, k)?;
    tape.project(x, k)
}

fn log0_block(tape: &mut Tape, x: Var, k: Var, kind: Kind) -> Result<Var> {
    if kind == Kind::E {
        return Ok(x);
    }
    tape.log0(x, k)
}

/// Tangent vectors onto a component; spherical inputs are squashed first.
fn embed_block(tape: &mut Tape, v: Var, k: Var, kind: Kind) -> Result<Var> {
    let v = if kind == Kind::S {
        let nk = tape.neg(k);
        let sq = tape.exp0(v, nk)?;
        tape.scale(sq, SPHERE_SQUASH)
    } else {
        v
    };
    exp0_block(tape, v, k, kind)
}

/// `Ã_n ⊠_κ X`: weighted gyromidpoint of the neighbours scaled by the row sum.
fn hop(tape: &mut Tape, a: usize, half_rows: Var, x: Var, k: Var, kind: Kind) -> Result<Var> {
    if kind == Kind::E {
        return tape.spmm(a, x);
    }
    let x2 = tape.row_sum_sq(x);
    let kx2 = tape.mul(x2, k)?;
    let denom = tape.add_scalar(kx2, 1.0);
    let inv = tape.unary(UnOp::Recip, denom);
    let lam = tape.scale(inv, 2.0);
    let lx = tape.mul(x, lam)?;
    let num = tape.spmm(a, lx)?;
    let lm1 = tape.add_scalar(lam, -1.0);
    let den = tape.spmm(a, lm1)?;
    let t = tape.div(num, den)?;
    let lt = tape.log0(t, k)?;
    let w = tape.mul(lt, half_rows)?;
    exp0_block(tape, w, k, kind)
}

/// `γ_0 ⊗ H_0 ⊕ … ⊕ γ_L ⊗ H_L` from precomputed `log_0 H_l`.
fn combine(tape: &mut Tape, gamma: &[Var], logs: &[Var], k: Var, kind: Kind) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for (&g, &lh) in gamma.iter().zip(logs) {
        let t = tape.mul(lh, g)?;
        acc = Some(match (acc, kind) {
            (None, _) => exp0_block(tape, t, k, kind)?,
            (Some(a), Kind::E) => tape.add(a, t)?,
            (Some(a), _) => {
                let term = exp0_block(tape, t, k, kind)?;
                let s = tape.mobius_add(a, term, k)?;
                tape.project(s, k)?
            }
        });
    }
    acc.ok_or_else(|| Error::invalid("empty filter"))
}

fn softmax_var(tape: &mut Tape, logits: Var) -> Result<Var> {
    let m = tape.value(logits).as_slice().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted = tape.add_scalar(logits, -m);
    let e = tape.exp(shifted);
    let s = tape.row_sum(e);
    tape.div(e, s)
}

/// Attention weights over components and the pooled blocks `β_q ⊗ Z_q`.
fn pool(tape: &mut Tape, vars: &ParamVars, blocks: &[Block], pooling: bool) -> Result<(Vec<f64>, Vec<Block>)> {
    let q = blocks.len();
    let logs = blocks
        .iter()
        .map(|b| log0_block(tape, b.value, b.kappa, b.kind))
        .collect::<Result<Vec<_>>>()?;
    let betas: Vec<Var> = if pooling && q > 1 {
        let u = logs
            .iter()
            .zip(&vars.pool_w)
            .map(|(&l, &w)| tape.matmul(l, w))
            .collect::<Result<Vec<_>>>()?;
        let mut sum = u[0];
        for &x in &u[1..] {
            sum = tape.add(sum, x)?;
        }
        let mu = tape.scale(sum, 1.0 / q as f64);
        let taus = u
            .iter()
            .map(|&x| {
                let d = tape.sub(x, mu)?;
                let s = tape.matmul(d, vars.theta)?;
                let sg = tape.sigmoid(s);
                Ok(tape.mean_all(sg))
            })
            .collect::<Result<Vec<_>>>()?;
        let tau = tape.hcat(&taus)?;
        let beta = softmax_var(tape, tau)?;
        (0..q).map(|i| tape.slice(beta, i, i + 1)).collect()
    } else {
        (0..q).map(|_| tape.scalar_const(1.0 / q as f64)).collect()
    };
    let values = betas.iter().map(|&b| tape.value(b)[(0, 0)]).collect();
    let pooled = blocks
        .iter()
        .zip(logs)
        .zip(betas)
        .map(|((b, l), beta)| {
            let t = tape.mul(l, beta)?;
            Ok(Block {
                value: exp0_block(tape, t, b.kappa, b.kind)?,
                ..*b
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((values, pooled))
}

/// Record the forward pass. `dropout` supplies the mask generator in
/// training mode.
pub fn forward(
    params: &ModelParams,
    prep: &Prepared,
    cfg: &ModelConfig,
    dropout: Option<(f64, &mut ChaCha8Rng)>,
) -> Result<Forward> {
    let sig = &params.signature;
    let n = prep.features.rows();
    if prep.features.cols() != params.feat_w.rows() {
        return Err(Error::dims(format!(
            "{} feature columns, encoder expects {}",
            prep.features.cols(),
            params.feat_w.rows()
        )));
    }
    if prep.a_n.n_rows != n {
        return Err(Error::dims("adjacency and features disagree on node count"));
    }
    let l = params.order();
    let mut tape = Tape::new();
    let vars = ParamVars::register(&mut tape, params);

    let kappa = sig
        .components()
        .iter()
        .enumerate()
        .map(|(i, c)| match c.kind {
            Kind::E => tape.scalar_const(0.0),
            kind => {
                let r = tape.slice(vars.curvature_raw, i, i + 1);
                let s = tape.softplus(r);
                let s = tape.add_scalar(s, CURVATURE_FLOOR);
                if kind == Kind::H {
                    tape.neg(s)
                } else {
                    s
                }
            }
        })
        .collect::<Vec<_>>();

    let mut f = prep.features.clone();
    if let Some((p, rng)) = dropout {
        if p > 0.0 {
            let keep = 1.0 / (1.0 - p);
            for x in f.as_mut_slice() {
                *x = if rng.random::<f64>() < p { 0.0 } else { *x * keep };
            }
        }
    }
    let fv = tape.constant(f);
    let lin = tape.matmul(fv, vars.feat_w)?;
    let lin = tape.add(lin, vars.feat_b)?;
    let enc = tape.tanh(lin);

    let mut h0 = Vec::with_capacity(sig.len());
    for ((c, r), &k) in sig.components().iter().zip(sig.blocks()).zip(&kappa) {
        let v = tape.slice(enc, r.start, r.end);
        h0.push(Block {
            value: embed_block(&mut tape, v, k, c.kind)?,
            kappa: k,
            kind: c.kind,
        });
    }

    let a = tape.sparse(prep.a_n.clone());
    let half_rows = tape.constant(Mat::from_fn(n, 1, |i, _| 0.5 * prep.row_sums[i]));
    // logs[q][l] = log_0 H_q^(l)
    let mut logs: Vec<Vec<Var>> = Vec::with_capacity(sig.len());
    for b in &h0 {
        let mut x = b.value;
        let mut per = vec![log0_block(&mut tape, x, b.kappa, b.kind)?];
        for _ in 0..l {
            x = hop(&mut tape, a, half_rows, x, b.kappa, b.kind)?;
            per.push(log0_block(&mut tape, x, b.kappa, b.kind)?);
        }
        logs.push(per);
    }

    let enc_blocks = match &params.enc_signature {
        Some(es) => {
            let freq = CurvatureEncoder::with_frequencies(params.frequencies.clone(), es.clone())?;
            let phi = tape.constant(freq.phi_matrix(&prep.node_orc));
            es.components()
                .iter()
                .zip(&vars.enc_proj)
                .zip(&kappa)
                .map(|((c, &p), &k)| {
                    let t = tape.matmul(phi, p)?;
                    Ok(Block {
                        value: embed_block(&mut tape, t, k, c.kind)?,
                        kappa: k,
                        kind: c.kind,
                    })
                })
                .collect::<Result<Vec<_>>>()?
        }
        None => Vec::new(),
    };

    let mut entries = Vec::with_capacity(l + 1);
    let mut beta = Vec::with_capacity(l + 1);
    for e in 0..=l {
        let row = tape.gather(vars.gamma, &[e])?;
        let terms = if e == 0 { l + 1 } else { e + 1 };
        let gamma: Vec<Var> = (0..terms).map(|j| tape.slice(row, j, j + 1)).collect();
        let mut blocks = Vec::with_capacity(sig.len());
        for (b, per) in h0.iter().zip(&logs) {
            let hops: Vec<Var> = if e == 0 { vec![per[0]; l + 1] } else { per[..=e].to_vec() };
            blocks.push(Block {
                value: combine(&mut tape, &gamma, &hops, b.kappa, b.kind)?,
                ..*b
            });
        }
        let (bv, mut pooled) = pool(&mut tape, &vars, &blocks, cfg.pooling)?;
        pooled.extend(enc_blocks.iter().copied());
        beta.push(bv);
        entries.push(pooled);
    }

    let eps = softmax_var(&mut tape, vars.epsilon_logits)?;
    let epsilon = tape.value(eps).as_slice().to_vec();
    let eps_vars: Vec<Var> = (0..=l).map(|e| tape.slice(eps, e, e + 1)).collect();
    let mut zeta = Vec::with_capacity(entries[0].len());
    for (qi, b) in h0.iter().enumerate() {
        let mut acc: Option<Var> = None;
        for (entry, &w) in entries.iter().zip(&eps_vars) {
            let lz = log0_block(&mut tape, entry[qi].value, b.kappa, b.kind)?;
            let t = tape.mul(lz, w)?;
            acc = Some(match acc {
                None => t,
                Some(a) => tape.add(a, t)?,
            });
        }
        let t = acc.expect("at least one entry");
        zeta.push(Block {
            value: exp0_block(&mut tape, t, b.kappa, b.kind)?,
            ..*b
        });
    }
    // Encoding blocks are shared by every entry, so their ε-mixture is themselves.
    zeta.extend(enc_blocks.iter().copied());

    Ok(Forward {
        tape,
        vars,
        kappa,
        h0,
        entries,
        beta,
        epsilon,
        zeta,
    })
}

impl Forward {
    /// Node-classification logits `log_0(ζ) W + b`.
    pub fn nc_logits(&mut self) -> Result<Var> {
        if self.tape.shape(self.vars.head_w).0 == 0 {
            return Err(Error::invalid("model has no classification head"));
        }
        let tape = &mut self.tape;
        let logs = self
            .zeta
            .iter()
            .map(|b| log0_block(tape, b.value, b.kappa, b.kind))
            .collect::<Result<Vec<_>>>()?;
        let z = tape.hcat(&logs)?;
        let out = tape.matmul(z, self.vars.head_w)?;
        tape.add(out, self.vars.head_b)
    }

    /// Squared product distances between the rows `src[i]` and `dst[i]`.
    pub fn pair_sq_dist(&mut self, src: &[usize], dst: &[usize]) -> Result<Var> {
        if src.len() != dst.len() || src.is_empty() {
            return Err(Error::invalid("pair lists must be non-empty and of equal length"));
        }
        let tape = &mut self.tape;
        let mut total: Option<Var> = None;
        for b in &self.zeta {
            let x = tape.gather(b.value, src)?;
            let y = tape.gather(b.value, dst)?;
            let nx = tape.neg(x);
            let w = tape.mobius_add(nx, y, b.kappa)?;
            let w = tape.project(w, b.kappa)?;
            let d = tape.sq_dist0(w, b.kappa)?;
            total = Some(match total {
                None => d,
                Some(t) => tape.add(t, d)?,
            });
        }
        total.ok_or_else(|| Error::invalid("empty embedding"))
    }

    /// Fermi–Dirac logits `(r − d²) / t`.
    pub fn lp_logits(&mut self, src: &[usize], dst: &[usize], cfg: &ModelConfig) -> Result<Var> {
        let d2 = self.pair_sq_dist(src, dst)?;
        let s = self.tape.scale(d2, -1.0 / cfg.lp_temperature);
        Ok(self.tape.add_scalar(s, cfg.lp_radius / cfg.lp_temperature))
    }

    /// `½ λ Σ θ²` over the decayed tensors.
    pub fn weight_decay(&mut self, params: &ModelParams, lambda: f64) -> Result<Option<Var>> {
        if lambda == 0.0 {
            return Ok(None);
        }
        let mut total: Option<Var> = None;
        for (v, keep) in self.vars.all().into_iter().zip(params.decayed()) {
            if !keep || self.tape.value(v).as_slice().is_empty() {
                continue;
            }
            let sq = self.tape.unary(UnOp::Square, v);
            let s = self.tape.sum_all(sq);
            total = Some(match total {
                None => s,
                Some(t) => self.tape.add(t, s)?,
            });
        }
        Ok(total.map(|t| self.tape.scale(t, 0.5 * lambda)))
    }

    /// Values of the mixed embedding, one row per node.
    pub fn embedding(&self) -> Result<Mat> {
        let parts: Vec<&Mat> = self.zeta.iter().map(|b| self.tape.value(b.value)).collect();
        Mat::hcat(&parts)
    }

    /// `β` averaged over bank entries with weights `ε`.
    pub fn mixed_beta(&self) -> Vec<f64> {
        let q = self.beta[0].len();
        (0..q)
            .map(|i| self.beta.iter().zip(&self.epsilon).map(|(b, e)| b[i] * e).sum())
            .collect()
    }
}
