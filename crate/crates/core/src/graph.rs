//! Undirected weighted graphs, edge-list I/O and synthetic generators.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linalg::Mat;

/// Undirected edge stored with `u < v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub w: f64,
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub vals: Vec<f64>,
}

impl Csr {
    pub fn identity(n: usize) -> Self {
        Csr {
            n_rows: n,
            n_cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            vals: vec![1.0; n],
        }
    }

    pub fn from_dense(m: &Mat) -> Self {
        let mut row_ptr = vec![0];
        let mut col_idx = vec![];
        let mut vals = vec![];
        for r in 0..m.rows() {
            for (c, &x) in m.row(r).iter().enumerate() {
                if x != 0.0 {
                    col_idx.push(c);
                    vals.push(x);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Csr {
            n_rows: m.rows(),
            n_cols: m.cols(),
            row_ptr,
            col_idx,
            vals,
        }
    }

    pub fn transpose(&self) -> Csr {
        let mut counts = vec![0usize; self.n_cols + 1];
        for &c in &self.col_idx {
            counts[c + 1] += 1;
        }
        for c in 0..self.n_cols {
            counts[c + 1] += counts[c];
        }
        let row_ptr = counts.clone();
        let mut col_idx = vec![0; self.nnz()];
        let mut vals = vec![0.0; self.nnz()];
        for r in 0..self.n_rows {
            for (c, v) in self.row(r) {
                let slot = counts[c];
                col_idx[slot] = r;
                vals[slot] = v;
                counts[c] += 1;
            }
        }
        Csr {
            n_rows: self.n_cols,
            n_cols: self.n_rows,
            row_ptr,
            col_idx,
            vals,
        }
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.vals[span].iter().copied())
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n_rows).map(|r| self.row(r).map(|(_, v)| v).sum()).collect()
    }

    pub fn to_dense(&self) -> Mat {
        let mut m = Mat::zeros(self.n_rows, self.n_cols);
        for r in 0..self.n_rows {
            for (c, v) in self.row(r) {
                m[(r, c)] += v;
            }
        }
        m
    }

    /// `self · x` for a dense right-hand side.
    pub fn matmul(&self, x: &Mat) -> Result<Mat> {
        if x.rows() != self.n_cols {
            return Err(Error::dims(format!(
                "sparse {}x{} by dense {}x{}",
                self.n_rows,
                self.n_cols,
                x.rows(),
                x.cols()
            )));
        }
        let d = x.cols();
        let mut out = Mat::zeros(self.n_rows, d);
        for r in 0..self.n_rows {
            let orow = out.row_mut(r);
            for (c, a) in self.row(r) {
                for (o, xv) in orow.iter_mut().zip(x.row(c)) {
                    *o += a * xv;
                }
            }
        }
        Ok(out)
    }
}

/// Simple undirected graph with positive edge weights and optional node
/// features and labels.
#[derive(Debug, Clone)]
pub struct Graph {
    n: usize,
    edges: Vec<Edge>,
    // sorted neighbour lists, built once at construction
    adj: Vec<Vec<(usize, f64)>>,
    features: Option<Mat>,
    labels: Option<Vec<usize>>,
}

impl Graph {
    /// Build a graph; duplicate undirected edges keep their first weight.
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for (u, v, w) in edges {
            if u >= n || v >= n {
                return Err(Error::invalid(format!(
                    "edge ({u}, {v}) out of range for {n} nodes"
                )));
            }
            if u == v {
                return Err(Error::invalid(format!("self-loop at node {u}")));
            }
            if !(w > 0.0) || !w.is_finite() {
                return Err(Error::invalid(format!(
                    "edge ({u}, {v}) has non-positive weight {w}"
                )));
            }
            let (a, b) = if u < v { (u, v) } else { (v, u) };
            if seen.insert((a, b)) {
                out.push(Edge { u: a, v: b, w });
            }
        }
        let mut adj = vec![Vec::new(); n];
        for e in &out {
            adj[e.u].push((e.v, e.w));
            adj[e.v].push((e.u, e.w));
        }
        for list in &mut adj {
            list.sort_by_key(|&(v, _)| v);
        }
        Ok(Graph {
            n,
            edges: out,
            adj,
            features: None,
            labels: None,
        })
    }

    pub fn unweighted(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        Graph::new(n, edges.into_iter().map(|(u, v)| (u, v, 1.0)))
    }

    pub fn with_features(mut self, f: Mat) -> Result<Self> {
        if f.rows() != self.n {
            return Err(Error::dims(format!(
                "{} feature rows for {} nodes",
                f.rows(),
                self.n
            )));
        }
        self.features = Some(f);
        Ok(self)
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.n {
            return Err(Error::dims(format!(
                "{} labels for {} nodes",
                labels.len(),
                self.n
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn features(&self) -> Option<&Mat> {
        self.features.as_ref()
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn num_classes(&self) -> usize {
        self.labels
            .as_ref()
            .map_or(0, |l| l.iter().max().map_or(0, |m| m + 1))
    }

    pub fn neighbors(&self, u: usize) -> impl ExactSizeIterator<Item = usize> + '_ {
        self.adj[u].iter().map(|&(v, _)| v)
    }

    pub fn weighted_neighbors(&self, u: usize) -> &[(usize, f64)] {
        &self.adj[u]
    }

    pub fn degree(&self, u: usize) -> usize {
        self.adj[u].len()
    }

    pub fn weighted_degree(&self, u: usize) -> f64 {
        self.adj[u].iter().map(|&(_, w)| w).sum()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        u < self.n && self.adj[u].binary_search_by_key(&v, |&(x, _)| x).is_ok()
    }

    pub fn is_unweighted(&self) -> bool {
        self.edges.iter().all(|e| e.w == 1.0)
    }

    /// Number of common neighbours of `u` and `v`.
    pub fn common_neighbors(&self, u: usize, v: usize) -> usize {
        let (a, b) = (&self.adj[u], &self.adj[v]);
        let (mut i, mut j, mut c) = (0, 0, 0);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    c += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        c
    }

    /// Weighted adjacency, optionally with per-edge weights overriding the
    /// stored ones (indexed like [`Graph::edges`]).
    pub fn adjacency(&self, weights: Option<&[f64]>) -> Result<Mat> {
        let mut a = Mat::zeros(self.n, self.n);
        if let Some(w) = weights {
            if w.len() != self.m() {
                return Err(Error::dims(format!(
                    "{} weights for {} edges",
                    w.len(),
                    self.m()
                )));
            }
        }
        for (i, e) in self.edges.iter().enumerate() {
            let w = weights.map_or(e.w, |w| w[i]);
            a[(e.u, e.v)] = w;
            a[(e.v, e.u)] = w;
        }
        Ok(a)
    }

    /// Combinatorial Laplacian `D − A` using stored weights.
    pub fn laplacian(&self) -> Mat {
        let mut l = Mat::zeros(self.n, self.n);
        for e in &self.edges {
            l[(e.u, e.v)] -= e.w;
            l[(e.v, e.u)] -= e.w;
            l[(e.u, e.u)] += e.w;
            l[(e.v, e.v)] += e.w;
        }
        l
    }

    /// Hop distances from `src`; `usize::MAX` marks unreachable nodes.
    pub fn bfs(&self, src: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.n];
        let mut q = VecDeque::new();
        dist[src] = 0;
        q.push_back(src);
        while let Some(u) = q.pop_front() {
            for v in self.neighbors(u) {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    q.push_back(v);
                }
            }
        }
        dist
    }

    /// Hop distances to every node within `max_depth` of `src`.
    pub fn bfs_limited(&self, src: usize, max_depth: usize) -> HashMap<usize, usize> {
        let mut dist = HashMap::new();
        let mut q = VecDeque::new();
        dist.insert(src, 0);
        q.push_back(src);
        while let Some(u) = q.pop_front() {
            let du = dist[&u];
            if du == max_depth {
                continue;
            }
            for v in self.neighbors(u) {
                if let std::collections::hash_map::Entry::Vacant(e) = dist.entry(v) {
                    e.insert(du + 1);
                    q.push_back(v);
                }
            }
        }
        dist
    }

    pub fn is_connected(&self) -> bool {
        self.n == 0 || self.bfs(0).iter().all(|&d| d != usize::MAX)
    }

    /// Component id per node.
    pub fn components(&self) -> Vec<usize> {
        let mut comp = vec![usize::MAX; self.n];
        let mut next = 0;
        for s in 0..self.n {
            if comp[s] != usize::MAX {
                continue;
            }
            let mut stack = vec![s];
            comp[s] = next;
            while let Some(u) = stack.pop() {
                for v in self.neighbors(u) {
                    if comp[v] == usize::MAX {
                        comp[v] = next;
                        stack.push(v);
                    }
                }
            }
            next += 1;
        }
        comp
    }

    pub fn first_isolated(&self) -> Option<usize> {
        (0..self.n).find(|&u| self.adj[u].is_empty())
    }

    /// Relabel nodes: node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Graph> {
        if perm.len() != self.n {
            return Err(Error::dims("permutation length"));
        }
        let mut g = Graph::new(
            self.n,
            self.edges.iter().map(|e| (perm[e.u], perm[e.v], e.w)),
        )?;
        if let Some(f) = &self.features {
            let mut pf = Mat::zeros(f.rows(), f.cols());
            for i in 0..self.n {
                pf.row_mut(perm[i]).copy_from_slice(f.row(i));
            }
            g.features = Some(pf);
        }
        if let Some(l) = &self.labels {
            let mut pl = vec![0; self.n];
            for i in 0..self.n {
                pl[perm[i]] = l[i];
            }
            g.labels = Some(pl);
        }
        Ok(g)
    }

    /// Same nodes, features and labels with a different edge set.
    pub fn with_edges(&self, edges: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Graph> {
        let mut g = Graph::new(self.n, edges)?;
        g.features = self.features.clone();
        g.labels = self.labels.clone();
        Ok(g)
    }
}

/// Parse a whitespace-separated `u v [w]` edge list. Without `n_hint` node
/// ids are compacted to `0..n` in order of first appearance; with a hint the
/// ids are kept verbatim and must be below it.
pub fn parse_edge_list(text: &str, n_hint: Option<usize>) -> Result<Graph> {
    let mut ids: HashMap<u64, usize> = HashMap::new();
    let mut edges = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let toks: Vec<&str> = content.split_whitespace().collect();
        if toks.len() < 2 || toks.len() > 3 {
            return Err(Error::Parse {
                line,
                msg: format!("expected `u v [w]`, got {content:?}"),
            });
        }
        let parse_id = |t: &str| {
            t.parse::<u64>().map_err(|_| Error::Parse {
                line,
                msg: format!("bad node id {t:?}"),
            })
        };
        let (a, b) = (parse_id(toks[0])?, parse_id(toks[1])?);
        if a == b {
            return Err(Error::Parse {
                line,
                msg: format!("self-loop at node {a}"),
            });
        }
        let w = match toks.get(2) {
            Some(t) => t.parse::<f64>().map_err(|_| Error::Parse {
                line,
                msg: format!("bad weight {t:?}"),
            })?,
            None => 1.0,
        };
        if !(w > 0.0) || !w.is_finite() {
            return Err(Error::Parse {
                line,
                msg: format!("weight must be positive, got {w}"),
            });
        }
        let (u, v) = match n_hint {
            Some(n) => {
                if a as usize >= n || b as usize >= n {
                    return Err(Error::Parse {
                        line,
                        msg: format!("node id out of range for {n} nodes"),
                    });
                }
                (a as usize, b as usize)
            }
            None => {
                let next = ids.len();
                let u = *ids.entry(a).or_insert(next);
                let next = ids.len();
                let v = *ids.entry(b).or_insert(next);
                (u, v)
            }
        };
        edges.push((u, v, w));
    }
    let n = n_hint.unwrap_or(ids.len());
    Graph::new(n, edges)
}

pub fn load_edge_list(path: impl AsRef<Path>, n_hint: Option<usize>) -> Result<Graph> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_edge_list(&text, n_hint)
}

pub fn format_edge_list(g: &Graph) -> String {
    let mut s = String::new();
    for e in g.edges() {
        if e.w == 1.0 {
            let _ = writeln!(s, "{} {}", e.u, e.v);
        } else {
            let _ = writeln!(s, "{} {} {:?}", e.u, e.v, e.w);
        }
    }
    s
}

pub fn save_edge_list(g: &Graph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_edge_list(g)).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Headerless numeric CSV, one row per node.
pub fn load_features_csv(path: impl AsRef<Path>) -> Result<Mat> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|t| {
                t.trim().parse::<f64>().map_err(|_| Error::Parse {
                    line: i + 1,
                    msg: format!("bad feature value {t:?}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Mat::from_rows(&rows)
}

/// Headerless single-column label CSV.
pub fn load_labels_csv(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let t = l.split(',').next().unwrap_or("").trim();
            t.parse::<usize>().map_err(|_| Error::Parse {
                line: i + 1,
                msg: format!("bad label {t:?}"),
            })
        })
        .collect()
}

/// Edge homophily: fraction of edges whose endpoints share a label.
pub fn homophily_ratio(g: &Graph) -> Result<f64> {
    let labels = g.labels().ok_or(Error::MissingLabels)?;
    if g.m() == 0 {
        return Err(Error::invalid("homophily needs at least one edge"));
    }
    let same = g
        .edges()
        .iter()
        .filter(|e| labels[e.u] == labels[e.v])
        .count();
    Ok(same as f64 / g.m() as f64)
}

/// `D^{-1/2} A D^{-1/2}` with optional edge-weight override.
pub fn normalized_adjacency(g: &Graph, weights: Option<&[f64]>) -> Result<Mat> {
    let a = g.adjacency(weights)?;
    let deg: Vec<f64> = (0..g.n()).map(|i| a.row(i).iter().sum()).collect();
    if let Some(i) = deg.iter().position(|&d| d <= 0.0) {
        return Err(Error::ZeroDegree(i));
    }
    let inv: Vec<f64> = deg.iter().map(|d| 1.0 / d.sqrt()).collect();
    Ok(Mat::from_fn(g.n(), g.n(), |i, j| a[(i, j)] * inv[i] * inv[j]))
}

/// Graph families for synthetic experiments.
#[derive(Debug, Clone, PartialEq)]
pub enum GraphKind {
    Path(usize),
    Cycle(usize),
    /// `n` nodes: one hub and `n − 1` leaves.
    Star(usize),
    Complete(usize),
    /// Balanced tree with the given branching factor and depth.
    Tree { branching: usize, depth: usize },
    Sbm(SbmParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SbmParams {
    pub blocks: Vec<usize>,
    pub p_in: f64,
    pub p_out: f64,
    pub seed: u64,
}

const SBM_MAX_ATTEMPTS: u64 = 100;

pub fn generate(kind: &GraphKind) -> Result<Graph> {
    let zero = || Error::invalid("graph must have at least one node");
    match *kind {
        GraphKind::Path(n) => {
            if n == 0 {
                return Err(zero());
            }
            Graph::unweighted(n, (1..n).map(|i| (i - 1, i)))
        }
        GraphKind::Cycle(n) => {
            if n < 3 {
                return Err(Error::invalid("cycle needs at least 3 nodes"));
            }
            Graph::unweighted(n, (0..n).map(|i| (i, (i + 1) % n)))
        }
        GraphKind::Star(n) => {
            if n == 0 {
                return Err(zero());
            }
            Graph::unweighted(n, (1..n).map(|i| (0, i)))
        }
        GraphKind::Complete(n) => {
            if n == 0 {
                return Err(zero());
            }
            Graph::unweighted(n, (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))))
        }
        GraphKind::Tree { branching, depth } => {
            if branching == 0 {
                return Err(Error::invalid("tree branching must be positive"));
            }
            let mut edges = Vec::new();
            let mut level = vec![0usize];
            let mut next_id = 1;
            for _ in 0..depth {
                let mut nxt = Vec::new();
                for &p in &level {
                    for _ in 0..branching {
                        edges.push((p, next_id));
                        nxt.push(next_id);
                        next_id += 1;
                    }
                }
                level = nxt;
            }
            Graph::unweighted(next_id, edges)
        }
        GraphKind::Sbm(ref p) => sbm(p),
    }
}

fn sbm(p: &SbmParams) -> Result<Graph> {
    let n: usize = p.blocks.iter().sum();
    if n == 0 || p.blocks.contains(&0) {
        return Err(Error::invalid("sbm blocks must be non-empty"));
    }
    for (name, q) in [("p_in", p.p_in), ("p_out", p.p_out)] {
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::invalid(format!("{name} = {q} outside [0, 1]")));
        }
    }
    let labels: Vec<usize> = p
        .blocks
        .iter()
        .enumerate()
        .flat_map(|(b, &size)| std::iter::repeat_n(b, size))
        .collect();
    for attempt in 0..SBM_MAX_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(p.seed.wrapping_add(attempt.wrapping_mul(0x9E37_79B9)));
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let q = if labels[i] == labels[j] { p.p_in } else { p.p_out };
                if rng.random::<f64>() < q {
                    edges.push((i, j));
                }
            }
        }
        let g = Graph::unweighted(n, edges)?;
        if g.first_isolated().is_none() {
            return g.with_labels(labels);
        }
    }
    Err(Error::invalid(format!(
        "sbm produced isolated nodes in {SBM_MAX_ATTEMPTS} attempts"
    )))
}

/// Noisy one-hot block indicators: `onehot(label) · signal + N(0, noise²)`
/// padded with pure-noise columns up to `dim`.
pub fn block_features(labels: &[usize], dim: usize, signal: f64, noise: f64, seed: u64) -> Result<Mat> {
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    if dim < classes {
        return Err(Error::invalid(format!(
            "feature dim {dim} below class count {classes}"
        )));
    }
    let normal = Normal::new(0.0, noise.max(0.0)).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(Mat::from_fn(labels.len(), dim, |i, j| {
        let base = if j == labels[i] { signal } else { 0.0 };
        base + normal.sample(&mut rng)
    }))
}

/// Erdős–Rényi graph conditioned on being connected (resampled until it is).
pub fn random_connected<R: Rng>(n: usize, p: f64, rng: &mut R) -> Graph {
    loop {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.random::<f64>() < p {
                    edges.push((i, j));
                }
            }
        }
        let g = Graph::unweighted(n, edges).expect("valid edges");
        if n >= 2 && g.is_connected() {
            return g;
        }
    }
}
