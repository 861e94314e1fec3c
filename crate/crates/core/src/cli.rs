//! Command-line interface.
//!
//! Every command reads its inputs, writes CSV files with a fixed header
//! and returns a short summary for stdout. Errors map to exit code 2 (bad
//! input) or 3 (numerical failure).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::config::Config;
use crate::encoding::CurvatureEncoder;
use crate::error::{Error, Result};
use crate::filter::{response_grid, GprWeights};
use crate::graph::{
    self, block_features, generate, load_features_csv, load_labels_csv, load_edge_list, GraphKind, SbmParams,
};
use crate::laplacian;
use crate::linalg::{spectral_energy, spectrum};
use crate::manifold::{estimate_signature, Signature};
use crate::model::{Checkpoint, Session, Task};
use crate::orc;
use crate::Graph;

/// Environment variable holding the worker count.
pub const THREADS_ENV: &str = "CUSP_THREADS";

#[derive(Debug, Parser)]
#[command(name = "cusp", version, about = "Curvature-aware spectral graph learning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GraphArgs {
    /// Edge list with one `u v [w]` per line.
    pub graph: PathBuf,
    /// Headerless feature CSV, row i = node i.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Headerless label CSV, row i = node i.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Node count; keeps node ids verbatim (implied by --features).
    #[arg(long)]
    pub nodes: Option<usize>,
    /// Flat key = value config file.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Edge and node curvature plus a histogram.
    Curvature {
        #[command(flatten)]
        input: GraphArgs,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Spectrum of the normalized curvature Laplacian and a range check.
    Laplacian {
        #[command(flatten)]
        input: GraphArgs,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Estimate a product-manifold signature.
    Signature {
        /// Edge list to take curvatures from.
        graph: Option<PathBuf>,
        /// Histogram CSV (`bin_center,count`) instead of a graph.
        #[arg(long, conflicts_with = "graph")]
        histogram: Option<PathBuf>,
        #[arg(long)]
        nodes: Option<usize>,
        #[arg(long, short)]
        config: Option<PathBuf>,
    },
    /// Energy of a node signal per Laplacian eigenvector.
    SpectralEnergy {
        #[command(flatten)]
        input: GraphArgs,
        /// `labels[:class]`, `eigenvector:k` or `file:path`.
        #[arg(long, default_value = "labels")]
        signal: String,
        #[arg(long, default_value = "spectral_energy.csv")]
        out: PathBuf,
    },
    /// Responses of every filter-bank entry on a grid over [-1, 1].
    FilterResponse {
        #[arg(long, short)]
        config: Option<PathBuf>,
        /// Use the learned filter weights of a checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "filter_response.csv")]
        out: PathBuf,
    },
    /// Train a model and save the best checkpoint.
    Train {
        #[command(flatten)]
        input: GraphArgs,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Evaluate a checkpoint on the split recorded in it.
    Eval {
        #[command(flatten)]
        input: GraphArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Dump node curvature encodings (first 8 values).
    Encode {
        #[command(flatten)]
        input: GraphArgs,
        #[arg(long, default_value = "encoding.csv")]
        out: PathBuf,
    },
    /// Write a stochastic block model with block-indicator features.
    Generate {
        /// Block sizes, comma separated.
        #[arg(long, default_value = "100,100")]
        blocks: String,
        #[arg(long, default_value_t = 0.1)]
        p_in: f64,
        #[arg(long, default_value_t = 0.01)]
        p_out: f64,
        #[arg(long, default_value_t = 16)]
        feature_dim: usize,
        #[arg(long, default_value_t = 1.0)]
        signal: f64,
        #[arg(long, default_value_t = 1.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Print every config key with its default.
    Defaults,
}

/// Worker count from [`THREADS_ENV`], if set.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::invalid(format!("{THREADS_ENV} must be a positive integer, got '{v}'"))),
        },
        Err(_) => Ok(None),
    }
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> u8 {
    if e.is_numerical() {
        3
    } else {
        2
    }
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    path.map_or_else(|| Ok(Config::default()), Config::load)
}

fn load_graph(a: &GraphArgs) -> Result<Graph> {
    let features = a.features.as_ref().map(load_features_csv).transpose()?;
    let labels = a.labels.as_ref().map(load_labels_csv).transpose()?;
    let hint = a.nodes.or(features.as_ref().map(|f| f.rows())).or(labels.as_ref().map(|l| l.len()));
    let mut g = load_edge_list(&a.graph, hint)?;
    if let Some(f) = features {
        g = g.with_features(f)?;
    }
    if let Some(l) = labels {
        g = g.with_labels(l)?;
    }
    Ok(g)
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

pub fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Curvature { input, out_dir } => cmd_curvature(&input, &out_dir),
        Command::Laplacian { input, out_dir } => cmd_laplacian(&input, &out_dir),
        Command::Signature {
            graph,
            histogram,
            nodes,
            config,
        } => cmd_signature(graph.as_deref(), histogram.as_deref(), nodes, config.as_deref()),
        Command::SpectralEnergy { input, signal, out } => cmd_spectral_energy(&input, &signal, &out),
        Command::FilterResponse {
            config,
            checkpoint,
            out,
        } => cmd_filter_response(config.as_deref(), checkpoint.as_deref(), &out),
        Command::Train { input, out_dir } => cmd_train(&input, &out_dir),
        Command::Eval { input, checkpoint } => cmd_eval(&input, &checkpoint),
        Command::Encode { input, out } => cmd_encode(&input, &out),
        Command::Generate {
            blocks,
            p_in,
            p_out,
            feature_dim,
            signal,
            noise,
            seed,
            out_dir,
        } => {
            let blocks = blocks
                .split(',')
                .map(|b| b.trim().parse::<usize>().map_err(|_| Error::invalid(format!("bad block size '{b}'"))))
                .collect::<Result<Vec<_>>>()?;
            cmd_generate(SbmParams { blocks, p_in, p_out, seed }, feature_dim, signal, noise, &out_dir)
        }
        Command::Defaults => Ok(Config::defaults_text()),
    }
}

/// Writes `edges.csv` (`u,v,orc`), `nodes.csv` (`node,orc`) and
/// `histogram.csv` (`bin_center,count`, bins over [-1, 1]).
pub fn cmd_curvature(input: &GraphArgs, out_dir: &Path) -> Result<String> {
    let cfg = load_config(input.config.as_deref())?;
    let g = load_graph(input)?;
    let res = orc::compute_all(&g, &cfg.cusp.orc)?;
    let mut edges = String::from("u,v,orc\n");
    for (&(u, v), k) in res.edges().iter().zip(res.edge_values()) {
        let _ = writeln!(edges, "{u},{v},{k}");
    }
    let mut nodes = String::from("node,orc\n");
    for (x, k) in res.node_values().iter().enumerate() {
        let _ = writeln!(nodes, "{x},{k}");
    }
    let mut hist = String::from("bin_center,count\n");
    for (c, n) in orc::histogram(res.edge_values(), cfg.histogram_bins, -1.0, 1.0) {
        let _ = writeln!(hist, "{c},{n}");
    }
    write(&out_dir.join("edges.csv"), &edges)?;
    write(&out_dir.join("nodes.csv"), &nodes)?;
    write(&out_dir.join("histogram.csv"), &hist)?;
    let mean = res.edge_values().iter().sum::<f64>() / res.edge_values().len().max(1) as f64;
    let mut msg = format!("{} edges, mean curvature {mean:.6}", g.m());
    if res.unconverged > 0 {
        let _ = write!(msg, ", {} edges hit the Sinkhorn iteration cap", res.unconverged);
    }
    Ok(msg)
}

/// Writes `spectrum.csv` (`index,eigenvalue`) and `report.txt`.
pub fn cmd_laplacian(input: &GraphArgs, out_dir: &Path) -> Result<String> {
    let cfg = load_config(input.config.as_deref())?;
    let g = load_graph(input)?;
    let res = orc::compute_all(&g, &cfg.cusp.orc)?;
    let cl = laplacian::build(&g, &res)?;
    let rep = laplacian::verify_spectrum(&cl)?;
    let mut csv = String::from("index,eigenvalue\n");
    for (i, l) in rep.eigenvalues.iter().enumerate() {
        let _ = writeln!(csv, "{i},{l}");
    }
    let verdict = |ok: bool| if ok { "PASS" } else { "FAIL" };
    let report = format!(
        "{} min_eig={:.6e} max_eig={:.6e} kernel_residual={:.3e} psd={} range={}",
        verdict(rep.pass()),
        rep.min_eig,
        rep.max_eig,
        rep.kernel_vector_residual,
        verdict(rep.psd),
        verdict(rep.in_range && rep.kernel_vector_residual <= 1e-8),
    );
    write(&out_dir.join("spectrum.csv"), &csv)?;
    write(&out_dir.join("report.txt"), &format!("{report}\n"))?;
    Ok(report)
}

fn load_histogram(path: &Path) -> Result<Vec<(f64, f64)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::Parse {
            line: i + 1,
            msg: format!("expected bin_center,count in '{line}'"),
        };
        let (c, n) = line.split_once(',').ok_or_else(bad)?;
        out.push((
            c.trim().parse().map_err(|_| bad())?,
            n.trim().parse().map_err(|_| bad())?,
        ));
    }
    Ok(out)
}

pub fn cmd_signature(graph: Option<&Path>, histogram: Option<&Path>, nodes: Option<usize>, config: Option<&Path>) -> Result<String> {
    let cfg = load_config(config)?;
    let hist = match (graph, histogram) {
        (_, Some(h)) => load_histogram(h)?,
        (Some(gp), None) => {
            let g = load_edge_list(gp, nodes)?;
            let res = orc::compute_all(&g, &cfg.cusp.orc)?;
            res.edge_values().iter().map(|k| (k.clamp(-1.0, 1.0), 1.0)).collect()
        }
        (None, None) => return Err(Error::invalid("give a graph or --histogram")),
    };
    let sig: Signature = estimate_signature(&hist, &cfg.estimate())?;
    Ok(sig.to_string_rounded(2))
}

fn signal(g: &Graph, spec: &str, vectors: &crate::Spectrum) -> Result<Vec<f64>> {
    let (kind, arg) = spec.split_once(':').unwrap_or((spec, ""));
    match kind {
        "labels" => {
            let labels = g.labels().ok_or(Error::MissingLabels)?;
            let class: usize = if arg.is_empty() {
                0
            } else {
                arg.parse().map_err(|_| Error::invalid(format!("bad class '{arg}'")))?
            };
            Ok(labels.iter().map(|&l| if l == class { 1.0 } else { -1.0 }).collect())
        }
        "eigenvector" => {
            let k: usize = arg.parse().map_err(|_| Error::invalid(format!("bad eigenvector index '{arg}'")))?;
            let u = vectors.eigenvectors.as_ref().expect("requested");
            if k >= u.cols() {
                return Err(Error::invalid(format!("eigenvector {k} out of range")));
            }
            Ok(u.col(k))
        }
        "file" => {
            let m = load_features_csv(arg)?;
            if m.rows() != g.n() {
                return Err(Error::dims(format!("signal has {} rows for {} nodes", m.rows(), g.n())));
            }
            Ok(m.col(0))
        }
        _ => Err(Error::invalid(format!("unknown signal '{spec}'"))),
    }
}

/// Writes `index,eigenvalue,energy` for the normalized curvature Laplacian.
pub fn cmd_spectral_energy(input: &GraphArgs, spec: &str, out: &Path) -> Result<String> {
    let cfg = load_config(input.config.as_deref())?;
    let g = load_graph(input)?;
    let res = orc::compute_all(&g, &cfg.cusp.orc)?;
    let cl = laplacian::build(&g, &res)?;
    let sp = spectrum(&cl.l_norm)?;
    let f = signal(&g, spec, &sp)?;
    let energy = spectral_energy(&sp, &f)?;
    let mut csv = String::from("index,eigenvalue,energy\n");
    for (i, (l, e)) in sp.eigenvalues.iter().zip(&energy).enumerate() {
        let _ = writeln!(csv, "{i},{l},{e}");
    }
    write(out, &csv)?;
    let quarter = energy.len().div_ceil(4);
    let low: f64 = energy[..quarter].iter().sum();
    Ok(format!("energy in lowest quarter of the spectrum: {low:.6}"))
}

/// Writes `lambda,g_filter_0,…,g_filter_L`.
pub fn cmd_filter_response(config: Option<&Path>, checkpoint: Option<&Path>, out: &Path) -> Result<String> {
    let cfg = load_config(config)?;
    let rows: Vec<Vec<f64>> = match checkpoint {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            (0..ck.params.gamma.rows()).map(|e| ck.params.gamma.row(e).to_vec()).collect()
        }
        None => {
            let m = &cfg.cusp.model;
            let w = match m.filter_init {
                crate::model::FilterInit::Ppr => GprWeights::ppr(m.alpha, m.l)?,
                crate::model::FilterInit::HighPass => GprWeights::highpass(m.alpha, m.l)?,
            };
            vec![w.gamma; m.l + 1]
        }
    };
    let filters = rows
        .iter()
        .enumerate()
        .map(|(e, g)| {
            if e == 0 {
                GprWeights::custom(vec![g.iter().sum()])
            } else {
                GprWeights::custom(g[..=e].to_vec())
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let grid = response_grid(&filters, cfg.filter_points);
    let mut csv = String::from("lambda");
    for e in 0..filters.len() {
        let _ = write!(csv, ",g_filter_{e}");
    }
    csv.push('\n');
    for r in &grid {
        csv.push_str(&join(r));
        csv.push('\n');
    }
    write(out, &csv)?;
    Ok(format!("{} rows x {} filters", grid.len(), filters.len()))
}

fn metric_name(task: Task) -> &'static str {
    match task {
        Task::Nc => "micro_f1",
        Task::Lp => "auc",
    }
}

/// Writes `history.csv` (`epoch,train_loss,val_metric`), `checkpoint.json`
/// and `report.json`.
pub fn cmd_train(input: &GraphArgs, out_dir: &Path) -> Result<String> {
    let cfg = load_config(input.config.as_deref())?;
    let g = load_graph(input)?;
    let session = Session::new(&g, &cfg.cusp)?;
    let rep = session.train()?;
    let mut csv = String::from("epoch,train_loss,val_metric\n");
    for h in &rep.history {
        let _ = writeln!(csv, "{},{},{}", h.epoch, h.train_loss, h.val_metric);
    }
    write(&out_dir.join("history.csv"), &csv)?;
    Checkpoint {
        config: cfg.cusp.clone(),
        params: rep.params.clone(),
    }
    .save(out_dir.join("checkpoint.json"))?;
    let gamma: Vec<Vec<f64>> = (0..rep.params.gamma.rows()).map(|e| rep.params.gamma.row(e).to_vec()).collect();
    let report = json!({
        "task": cfg.cusp.train.task.to_string(),
        "metric": metric_name(cfg.cusp.train.task),
        "best_epoch": rep.best_epoch,
        "val": rep.metrics.val,
        "test": rep.metrics.test,
        "signature": rep.params.learned_signature()?.to_string(),
        "curvatures": rep.curvatures,
        "beta": rep.beta,
        "epsilon": rep.epsilon,
        "gamma": gamma,
    });
    let text = serde_json::to_string_pretty(&report).map_err(|e| Error::invalid(e.to_string()))?;
    write(&out_dir.join("report.json"), &format!("{text}\n"))?;
    Ok(text)
}

/// Metrics of a saved checkpoint under the configuration stored with it.
pub fn cmd_eval(input: &GraphArgs, checkpoint: &Path) -> Result<String> {
    let ck = Checkpoint::load(checkpoint)?;
    let g = load_graph(input)?;
    let session = Session::new(&g, &ck.config)?;
    let m = session.metrics(&ck.params)?;
    let report = json!({
        "task": ck.config.train.task.to_string(),
        "metric": metric_name(ck.config.train.task),
        "val": m.val,
        "test": m.test,
    });
    serde_json::to_string_pretty(&report).map_err(|e| Error::invalid(e.to_string()))
}

/// Writes `node,orc,phi_0,…` with up to 8 encoding values per node.
pub fn cmd_encode(input: &GraphArgs, out: &Path) -> Result<String> {
    let cfg = load_config(input.config.as_deref())?;
    let m = &cfg.cusp.model;
    if m.d_c == 0 {
        return Err(Error::invalid("model.d_c = 0 disables the curvature encoding"));
    }
    let g = load_graph(input)?;
    let res = orc::compute_all(&g, &cfg.cusp.orc)?;
    let enc = CurvatureEncoder::gaussian(m.d_c, m.sigma, cfg.cusp.train.seed, Signature::euclidean(m.d_c)?)?;
    let width = (2 * m.d_c).min(8);
    let mut csv = String::from("node,orc");
    for j in 0..width {
        let _ = write!(csv, ",phi_{j}");
    }
    csv.push('\n');
    for (x, k) in res.clamped_node_values().into_iter().enumerate() {
        let phi = enc.phi_euclidean(k);
        let _ = writeln!(csv, "{x},{k},{}", join(&phi[..width]));
    }
    write(out, &csv)?;
    Ok(format!("{} nodes encoded", g.n()))
}

/// Writes `graph.txt`, `features.csv` and `labels.csv`.
pub fn cmd_generate(params: SbmParams, dim: usize, signal: f64, noise: f64, out_dir: &Path) -> Result<String> {
    let seed = params.seed;
    let g = generate(&GraphKind::Sbm(params))?;
    let labels = g.labels().ok_or(Error::MissingLabels)?.to_vec();
    let f = block_features(&labels, dim, signal, noise, seed.wrapping_add(1))?;
    write(&out_dir.join("graph.txt"), &graph::format_edge_list(&g))?;
    let mut feats = String::new();
    for i in 0..f.rows() {
        feats.push_str(&join(f.row(i)));
        feats.push('\n');
    }
    write(&out_dir.join("features.csv"), &feats)?;
    let lab: String = labels.iter().map(|l| format!("{l}\n")).collect();
    write(&out_dir.join("labels.csv"), &lab)?;
    Ok(format!("{} nodes, {} edges", g.n(), g.m()))
}
