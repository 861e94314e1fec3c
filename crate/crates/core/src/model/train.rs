//! Data splits, metrics, optimisation and gradient verification.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{forward, prepare, resolve_signature, CuspConfig, Forward, ModelParams, Prepared, Task};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::manifold::Signature;

const SPLIT_ATTEMPTS: u64 = 10;
const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NcSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Random node split; reseeds until every class appears in training.
pub fn nc_split(labels: &[usize], fractions: [f64; 3], seed: u64) -> Result<NcSplit> {
    let n = labels.len();
    let n_train = (fractions[0] * n as f64).round() as usize;
    let n_val = (fractions[1] * n as f64).round() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= n {
        return Err(Error::invalid(format!("{n} nodes are too few for split {fractions:?}")));
    }
    let classes: HashSet<usize> = labels.iter().copied().collect();
    for attempt in 0..SPLIT_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt));
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let seen: HashSet<usize> = perm[..n_train].iter().map(|&i| labels[i]).collect();
        if seen.len() == classes.len() {
            let part = |r: std::ops::Range<usize>| {
                let mut v = perm[r].to_vec();
                v.sort_unstable();
                v
            };
            return Ok(NcSplit {
                train: part(0..n_train),
                val: part(n_train..n_train + n_val),
                test: part(n_train + n_val..n),
            });
        }
    }
    Err(Error::invalid(format!(
        "a class is absent from the training split after {SPLIT_ATTEMPTS} attempts"
    )))
}

/// Edge split for link prediction with fixed 1:1 validation and test
/// negatives. Held-out edges never leave a node without training edges.
#[derive(Debug, Clone)]
pub struct LpSplit {
    pub train_graph: Graph,
    pub train_pos: Vec<(usize, usize)>,
    pub val_pos: Vec<(usize, usize)>,
    pub val_neg: Vec<(usize, usize)>,
    pub test_pos: Vec<(usize, usize)>,
    pub test_neg: Vec<(usize, usize)>,
}

pub fn lp_split(g: &Graph, fractions: [f64; 3], seed: u64) -> Result<LpSplit> {
    let m = g.m();
    let n_val = (fractions[1] * m as f64).round() as usize;
    let n_test = (fractions[2] * m as f64).round() as usize;
    if n_val == 0 || n_test == 0 || n_val + n_test >= m {
        return Err(Error::invalid(format!("{m} edges are too few for split {fractions:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut rng);
    let mut degree: Vec<usize> = (0..g.n()).map(|u| g.degree(u)).collect();
    let (mut held, mut train) = (Vec::new(), Vec::new());
    for &i in &order {
        let e = g.edges()[i];
        if held.len() < n_val + n_test && degree[e.u] > 1 && degree[e.v] > 1 {
            degree[e.u] -= 1;
            degree[e.v] -= 1;
            held.push((e.u, e.v));
        } else {
            train.push(e);
        }
    }
    if held.len() < n_val + n_test {
        return Err(Error::invalid(
            "cannot hold out enough edges without isolating nodes in the training graph",
        ));
    }
    let test_pos = held.split_off(n_val);
    let val_pos = held;
    let mut taken = HashSet::new();
    let val_neg = sample_negatives(g, val_pos.len(), &mut rng, &mut taken)?;
    let test_neg = sample_negatives(g, test_pos.len(), &mut rng, &mut taken)?;
    let train_graph = g.with_edges(train.iter().map(|e| (e.u, e.v, e.w)))?;
    Ok(LpSplit {
        train_pos: train.iter().map(|e| (e.u, e.v)).collect(),
        train_graph,
        val_pos,
        val_neg,
        test_pos,
        test_neg,
    })
}

/// Distinct node pairs that are not edges of `g` and not in `taken`.
pub fn sample_negatives<R: Rng>(
    g: &Graph,
    count: usize,
    rng: &mut R,
    taken: &mut HashSet<(usize, usize)>,
) -> Result<Vec<(usize, usize)>> {
    let n = g.n();
    let free = (n * n.saturating_sub(1) / 2).saturating_sub(g.m() + taken.len());
    if count > free {
        return Err(Error::invalid(format!("only {free} non-edges available, {count} requested")));
    }
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        let pair = (a.min(b), a.max(b));
        if a == b || g.has_edge(a, b) || !taken.insert(pair) {
            continue;
        }
        out.push(pair);
    }
    Ok(out)
}

/// Micro-averaged F1, equal to accuracy for single-label predictions.
pub fn micro_f1(pred: &[usize], truth: &[usize]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / pred.len() as f64
}

/// Area under the ROC curve from the rank statistic, ties counted half.
pub fn auc(pos: &[f64], neg: &[f64]) -> f64 {
    if pos.is_empty() || neg.is_empty() {
        return f64::NAN;
    }
    let mut all: Vec<(f64, bool)> = pos.iter().map(|&s| (s, true)).chain(neg.iter().map(|&s| (s, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += all[i..=j].iter().filter(|x| x.1).count() as f64 * mid;
        i = j + 1;
    }
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    (rank_sum - np * (np + 1.0) / 2.0) / (np * nn)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub val: f64,
    pub test: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Parameters of the best validation epoch.
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub metrics: Metrics,
    pub curvatures: Vec<f64>,
    /// `β` averaged over bank entries with weights `ε`.
    pub beta: Vec<f64>,
    pub epsilon: Vec<f64>,
}

#[derive(Debug, Clone)]
pub enum TaskData {
    Nc {
        labels: Vec<usize>,
        classes: usize,
        split: NcSplit,
    },
    Lp(LpSplit),
}

/// A graph prepared for one task under one configuration.
#[derive(Debug, Clone)]
pub struct Session {
    pub config: CuspConfig,
    pub prepared: Prepared,
    pub signature: Signature,
    pub data: TaskData,
}

impl Session {
    pub fn new(g: &Graph, config: &CuspConfig) -> Result<Self> {
        config.validate()?;
        let features = g.features().ok_or(Error::MissingFeatures)?;
        let tc = &config.train;
        let (prepared, data) = match tc.task {
            Task::Nc => {
                let labels = g.labels().ok_or(Error::MissingLabels)?.to_vec();
                let split = nc_split(&labels, tc.fractions(), tc.seed)?;
                let prepared = prepare(g, features, &config.orc)?;
                let classes = g.num_classes();
                (prepared, TaskData::Nc { labels, classes, split })
            }
            Task::Lp => {
                let split = lp_split(g, tc.fractions(), tc.seed)?;
                let prepared = prepare(&split.train_graph, features, &config.orc)?;
                (prepared, TaskData::Lp(split))
            }
        };
        let signature = resolve_signature(&config.model, &prepared.orc, tc.seed)?;
        Ok(Session {
            config: config.clone(),
            prepared,
            signature,
            data,
        })
    }

    pub fn init_params(&self) -> Result<ModelParams> {
        let classes = match &self.data {
            TaskData::Nc { classes, .. } => Some(*classes),
            TaskData::Lp(_) => None,
        };
        ModelParams::init(
            self.signature.clone(),
            self.prepared.features.cols(),
            classes,
            &self.config.model,
            self.config.train.seed,
        )
    }

    pub fn forward(&self, params: &ModelParams, dropout: Option<&mut ChaCha8Rng>) -> Result<Forward> {
        let p = self.config.train.dropout;
        forward(params, &self.prepared, &self.config.model, dropout.map(|r| (p, r)))
    }

    /// Fresh 1:1 negatives for the training positives (empty for NC).
    pub fn train_negatives<R: Rng>(&self, rng: &mut R) -> Result<Vec<(usize, usize)>> {
        match &self.data {
            TaskData::Nc { .. } => Ok(Vec::new()),
            TaskData::Lp(s) => {
                let mut taken: HashSet<(usize, usize)> = s.val_neg.iter().chain(&s.test_neg).copied().collect();
                let all = s.train_graph.with_edges(
                    s.train_pos
                        .iter()
                        .chain(&s.val_pos)
                        .chain(&s.test_pos)
                        .map(|&(u, v)| (u, v, 1.0)),
                )?;
                sample_negatives(&all, s.train_pos.len(), rng, &mut taken)
            }
        }
    }

    /// Task loss on the training split plus weight decay.
    pub fn objective(
        &self,
        params: &ModelParams,
        dropout: Option<&mut ChaCha8Rng>,
        negatives: &[(usize, usize)],
    ) -> Result<(Forward, Var)> {
        let mut fw = self.forward(params, dropout)?;
        let task_loss = match &self.data {
            TaskData::Nc { labels, split, .. } => {
                let logits = fw.nc_logits()?;
                let rows = fw.tape.gather(logits, &split.train)?;
                let targets: Vec<usize> = split.train.iter().map(|&i| labels[i]).collect();
                fw.tape.cross_entropy(rows, &targets)?
            }
            TaskData::Lp(s) => {
                if negatives.is_empty() {
                    return Err(Error::invalid("link prediction needs negative pairs"));
                }
                let pairs: Vec<(usize, usize)> = s.train_pos.iter().chain(negatives).copied().collect();
                let (src, dst): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
                let labels: Vec<f64> = (0..src.len())
                    .map(|i| if i < s.train_pos.len() { 1.0 } else { 0.0 })
                    .collect();
                let logits = fw.lp_logits(&src, &dst, &self.config.model)?;
                fw.tape.bce_logits(logits, &labels)?
            }
        };
        let loss = match fw.weight_decay(params, self.config.train.weight_decay)? {
            Some(wd) => fw.tape.add(task_loss, wd)?,
            None => task_loss,
        };
        let value = fw.tape.value(loss)[(0, 0)];
        if !value.is_finite() {
            return Err(Error::Numerical(format!("loss is {value}")));
        }
        Ok((fw, loss))
    }

    /// Validation and test metric: micro-F1 for NC, AUC for LP.
    pub fn metrics(&self, params: &ModelParams) -> Result<Metrics> {
        let mut fw = self.forward(params, None)?;
        match &self.data {
            TaskData::Nc { labels, split, .. } => {
                let logits = fw.nc_logits()?;
                let z = fw.tape.value(logits);
                let argmax = |i: usize| {
                    z.row(i)
                        .iter()
                        .enumerate()
                        .fold((0, f64::NEG_INFINITY), |b, (j, &v)| if v > b.1 { (j, v) } else { b })
                        .0
                };
                let score = |idx: &[usize]| {
                    let pred: Vec<usize> = idx.iter().map(|&i| argmax(i)).collect();
                    let truth: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
                    micro_f1(&pred, &truth)
                };
                Ok(Metrics {
                    val: score(&split.val),
                    test: score(&split.test),
                })
            }
            TaskData::Lp(s) => {
                let mut score = |pos: &[(usize, usize)], neg: &[(usize, usize)]| -> Result<f64> {
                    let (src, dst): (Vec<usize>, Vec<usize>) = pos.iter().chain(neg).copied().unzip();
                    let logits = fw.lp_logits(&src, &dst, &self.config.model)?;
                    let v = fw.tape.value(logits).as_slice();
                    Ok(auc(&v[..pos.len()], &v[pos.len()..]))
                };
                Ok(Metrics {
                    val: score(&s.val_pos, &s.val_neg)?,
                    test: score(&s.test_pos, &s.test_neg)?,
                })
            }
        }
    }

    /// Adam from fresh parameters, keeping the best validation epoch.
    pub fn train(&self) -> Result<TrainReport> {
        self.train_from(self.init_params()?)
    }

    pub fn train_from(&self, mut params: ModelParams) -> Result<TrainReport> {
        let tc = &self.config.train;
        let mut rng = ChaCha8Rng::seed_from_u64(tc.seed ^ 0x5DEE_CE66_D1CE_F00D);
        let trainable = params.trainable(&self.config.model);
        let mut adam = Adam::new(&params, tc.lr);
        let mut history = Vec::with_capacity(tc.epochs);
        let mut best: Option<(usize, f64, ModelParams)> = None;
        for epoch in 1..=tc.epochs {
            let negatives = self.train_negatives(&mut rng)?;
            let (fw, loss) = self.objective(&params, Some(&mut rng), &negatives)?;
            let grads = fw.tape.backward(loss)?;
            let gs: Vec<_> = fw
                .vars
                .all()
                .into_iter()
                .map(|v| grads.get_or_zeros(v, fw.tape.shape(v)))
                .collect();
            adam.step(&mut params, &gs, &trainable);
            if !params.is_finite() {
                return Err(Error::Numerical(format!("parameters diverged at epoch {epoch}")));
            }
            let val = self.metrics(&params)?.val;
            history.push(EpochRecord {
                epoch,
                train_loss: fw.tape.value(loss)[(0, 0)],
                val_metric: val,
            });
            if best.as_ref().is_none_or(|b| val > b.1) {
                best = Some((epoch, val, params.clone()));
            }
        }
        let (best_epoch, _, params) = best.unwrap_or((0, f64::NAN, params));
        let metrics = self.metrics(&params)?;
        let fw = self.forward(&params, None)?;
        Ok(TrainReport {
            curvatures: params.curvatures(),
            beta: fw.mixed_beta(),
            epsilon: params.epsilon(),
            params,
            history,
            best_epoch,
            metrics,
        })
    }
}

struct Adam {
    lr: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(p: &ModelParams, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = p.tensors().iter().map(|(_, m)| vec![0.0; m.as_slice().len()]).collect();
        Adam {
            lr,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    fn step(&mut self, p: &mut ModelParams, grads: &[crate::linalg::Mat], trainable: &[bool]) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for (i, t) in p.tensors_mut().into_iter().enumerate() {
            if !trainable[i] {
                continue;
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (x, g)) in t.as_mut_slice().iter_mut().zip(grads[i].as_slice()).enumerate() {
                m[j] = Self::B1 * m[j] + (1.0 - Self::B1) * g;
                v[j] = Self::B2 * v[j] + (1.0 - Self::B2) * g * g;
                *x -= self.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + Self::EPS);
            }
        }
    }
}

/// Train on `g` from fresh parameters.
pub fn train(g: &Graph, config: &CuspConfig) -> Result<TrainReport> {
    Session::new(g, config)?.train()
}

/// Validation and test metrics of `params` on the split implied by `config`.
pub fn evaluate(g: &Graph, params: &ModelParams, config: &CuspConfig) -> Result<Metrics> {
    Session::new(g, config)?.metrics(params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub probes: Vec<Probe>,
    /// Probes whose finite-difference stencil crosses a projection boundary.
    pub excluded: Vec<Probe>,
    pub max_rel_error: f64,
}

/// Compare tape gradients with central differences (`h = 1e-5`) on
/// `n_probes` scalar parameters drawn round-robin over the trainable
/// tensors. Dropout is off and link-prediction negatives are fixed.
pub fn gradient_check(session: &Session, params: &ModelParams, n_probes: usize, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let negatives = session.train_negatives(&mut rng)?;
    let eval = |p: &ModelParams| -> Result<(f64, usize)> {
        let (fw, loss) = session.objective(p, None, &negatives)?;
        Ok((fw.tape.value(loss)[(0, 0)], fw.tape.clipped_rows()))
    };
    let (fw, loss) = session.objective(params, None, &negatives)?;
    let base_clipped = fw.tape.clipped_rows();
    let grads = fw.tape.backward(loss)?;
    let vars = fw.vars.all();
    let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
    let pool: Vec<usize> = params
        .trainable(&session.config.model)
        .iter()
        .enumerate()
        .filter(|(_, &t)| t)
        .map(|(i, _)| i)
        .collect();
    if pool.is_empty() {
        return Err(Error::invalid("no trainable parameters to probe"));
    }
    let mut seen = HashSet::new();
    let (mut probes, mut excluded) = (Vec::new(), Vec::new());
    let mut turn = 0;
    while probes.len() < n_probes && turn < 8 * n_probes + pool.len() {
        let t = pool[turn % pool.len()];
        turn += 1;
        let len = params.tensors()[t].1.as_slice().len();
        let idx = rng.random_range(0..len);
        if !seen.insert((t, idx)) {
            continue;
        }
        let analytic = grads.get_or_zeros(vars[t], fw.tape.shape(vars[t])).as_slice()[idx];
        let nudge = |d: f64| {
            let mut p = params.clone();
            p.tensors_mut()[t].as_mut_slice()[idx] += d;
            eval(&p)
        };
        let (fp, cp) = nudge(FD_STEP)?;
        let (fm, cm) = nudge(-FD_STEP)?;
        let numeric = (fp - fm) / (2.0 * FD_STEP);
        if !analytic.is_finite() || !numeric.is_finite() {
            return Err(Error::Numerical(format!("non-finite gradient at {}[{idx}]", names[t])));
        }
        let probe = Probe {
            tensor: names[t].clone(),
            index: idx,
            analytic,
            numeric,
            rel_error: (analytic - numeric).abs() / numeric.abs().max(1e-8),
        };
        if cp != base_clipped || cm != base_clipped {
            excluded.push(probe);
        } else {
            probes.push(probe);
        }
    }
    let max_rel_error = probes.iter().map(|p| p.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        probes,
        excluded,
        max_rel_error,
    })
}
