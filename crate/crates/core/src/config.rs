//! Flat `key = value` configuration.
//!
//! Keys are namespaced (`orc.delta`, `model.d_m`, `train.lr`, …). Blank
//! lines and `#` comments are ignored; unknown or repeated keys are errors.
//! [`KEYS`] lists every key with its default.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::manifold::{EstimateConfig, Signature};
use crate::model::{CuspConfig, DEFAULT_SIGNATURE};
use crate::orc::OrcMethod;

/// `(key, default, description)` for every accepted key.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("orc.delta", "0.5", "mass kept at the node by the lazy walk"),
    ("orc.method", "exact", "exact | sinkhorn | bounds"),
    ("orc.sinkhorn_eps", "auto", "entropic regularisation; auto = 0.01 x median support distance"),
    ("orc.sinkhorn_max_iters", "1000", "Sinkhorn iteration cap"),
    ("orc.sinkhorn_tol", "1e-9", "Sinkhorn marginal tolerance"),
    ("orc.normalize", "false", "clamp curvature to [-1, 1]"),
    ("signature.spec", DEFAULT_SIGNATURE, "product signature kind:dim:curvature,... or auto"),
    ("signature.eps", "0.05", "clusters within eps of zero become flat"),
    ("signature.h_max", "2", "maximum hyperbolic components"),
    ("signature.s_max", "2", "maximum spherical components"),
    ("signature.preferred_dims", "none", "h,s,e dimensions per kind, or none"),
    ("signature.restarts", "50", "k-means restarts"),
    ("model.d_m", "48", "total manifold dimension for estimated signatures"),
    ("model.d_c", "16", "curvature encoding dimension (0 disables)"),
    ("model.d_pool", "16", "pooling projection width"),
    ("model.l", "10", "filter order L"),
    ("model.alpha", "0.3", "filter initialisation parameter"),
    ("model.filter_init", "ppr", "ppr | highpass"),
    ("model.sigma", "1", "encoding frequency scale"),
    ("model.pooling", "true", "learn component weights (false = uniform)"),
    ("model.train_gamma", "true", "learn filter weights"),
    ("model.train_curvature", "true", "learn component curvatures"),
    ("model.lp_radius", "2", "link decoder radius r"),
    ("model.lp_temperature", "1", "link decoder temperature t"),
    ("train.task", "nc", "nc | lp"),
    ("train.lr", "0.004", "learning rate"),
    ("train.epochs", "100", "training epochs"),
    ("train.weight_decay", "0.0005", "L2 weight decay"),
    ("train.dropout", "0.3", "input dropout rate"),
    ("train.seed", "0", "seed for splits, initialisation and sampling"),
    ("train.split", "default", "train,val,test fractions; default 0.6,0.2,0.2 (nc) or 0.85,0.05,0.1 (lp)"),
    ("output.histogram_bins", "40", "curvature histogram bins"),
    ("output.filter_points", "201", "filter response grid points over [-1, 1]"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub cusp: CuspConfig,
    pub signature_restarts: usize,
    pub histogram_bins: usize,
    pub filter_points: usize,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            cusp: CuspConfig::default(),
            signature_restarts: 50,
            histogram_bins: 40,
            filter_points: 201,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::invalid(format!("{key}: cannot parse '{value}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::invalid(format!("{key}: expected true or false, got '{value}'"))),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value.split(',').map(|x| parse(key, x.trim())).collect()
}

impl Config {
    /// Apply one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (orc, model, train) = (&mut self.cusp.orc, &mut self.cusp.model, &mut self.cusp.train);
        match key {
            "orc.delta" => orc.delta = parse(key, value)?,
            "orc.method" => orc.method = value.parse::<OrcMethod>()?,
            "orc.sinkhorn_eps" => orc.sinkhorn_eps = if value == "auto" { None } else { Some(parse(key, value)?) },
            "orc.sinkhorn_max_iters" => orc.sinkhorn_max_iters = parse(key, value)?,
            "orc.sinkhorn_tol" => orc.sinkhorn_tol = parse(key, value)?,
            "orc.normalize" => orc.normalize = parse_bool(key, value)?,
            "signature.spec" => {
                model.signature = if value == "auto" {
                    None
                } else {
                    Some(value.parse::<Signature>()?)
                }
            }
            "signature.eps" => model.signature_eps = parse(key, value)?,
            "signature.h_max" => model.signature_h_max = parse(key, value)?,
            "signature.s_max" => model.signature_s_max = parse(key, value)?,
            "signature.preferred_dims" => {
                model.signature_preferred_dims = if value == "none" {
                    None
                } else {
                    let d: Vec<usize> = value
                        .split(',')
                        .map(|x| parse(key, x.trim()))
                        .collect::<Result<_>>()?;
                    match d[..] {
                        [h, s, e] => Some((h, s, e)),
                        _ => return Err(Error::invalid(format!("{key}: expected h,s,e"))),
                    }
                }
            }
            "signature.restarts" => self.signature_restarts = parse(key, value)?,
            "model.d_m" => model.d_m = parse(key, value)?,
            "model.d_c" => model.d_c = parse(key, value)?,
            "model.d_pool" => model.d_pool = parse(key, value)?,
            "model.l" => model.l = parse(key, value)?,
            "model.alpha" => model.alpha = parse(key, value)?,
            "model.filter_init" => model.filter_init = value.parse()?,
            "model.sigma" => model.sigma = parse(key, value)?,
            "model.pooling" => model.pooling = parse_bool(key, value)?,
            "model.train_gamma" => model.train_gamma = parse_bool(key, value)?,
            "model.train_curvature" => model.train_curvature = parse_bool(key, value)?,
            "model.lp_radius" => model.lp_radius = parse(key, value)?,
            "model.lp_temperature" => model.lp_temperature = parse(key, value)?,
            "train.task" => train.task = value.parse()?,
            "train.lr" => train.lr = parse(key, value)?,
            "train.epochs" => train.epochs = parse(key, value)?,
            "train.weight_decay" => train.weight_decay = parse(key, value)?,
            "train.dropout" => train.dropout = parse(key, value)?,
            "train.seed" => train.seed = parse(key, value)?,
            "train.split" => {
                train.split = if value == "default" {
                    None
                } else {
                    match parse_list(key, value)?[..] {
                        [a, b, c] => Some([a, b, c]),
                        _ => return Err(Error::invalid(format!("{key}: expected three fractions"))),
                    }
                }
            }
            "output.histogram_bins" => self.histogram_bins = parse(key, value)?,
            "output.filter_points" => self.filter_points = parse(key, value)?,
            _ => return Err(Error::invalid(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse { line: i + 1, msg };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, got '{line}'")))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(err(format!("duplicate key '{key}'")));
            }
            cfg.set(key, value).map_err(|e| {
                err(match e {
                    Error::InvalidInput(m) => m,
                    other => other.to_string(),
                })
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.cusp.validate()?;
        if self.histogram_bins == 0 || self.filter_points < 2 || self.signature_restarts == 0 {
            return Err(Error::invalid(
                "output.histogram_bins and signature.restarts must be positive, output.filter_points at least 2",
            ));
        }
        Ok(())
    }

    /// Settings for signature estimation.
    pub fn estimate(&self) -> EstimateConfig {
        let m = &self.cusp.model;
        EstimateConfig {
            eps: m.signature_eps,
            h_max: m.signature_h_max,
            s_max: m.signature_s_max,
            d_m: m.d_m,
            preferred_dims: m.signature_preferred_dims,
            seed: self.cusp.train.seed,
            restarts: self.signature_restarts,
        }
    }

    /// A config file listing every key at its default.
    pub fn defaults_text() -> String {
        let mut out = String::new();
        for (key, default, doc) in KEYS {
            let _ = writeln!(out, "# {doc}\n{key} = {default}");
        }
        out
    }
}
