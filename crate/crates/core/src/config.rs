//! Flat `section.key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Unknown keys and repeated keys
//! are errors. Every key left at its default is reported so the caller can
//! log it, and [`RunConfig::to_text`] writes a complete snapshot that parses
//! back to the same configuration.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::eval::{random_feature_variant, EvalSplit};
use crate::graph::{load_edge_list, load_features, split_edges, CsrGraph, EdgeSplit, FeatureMatrix};
use crate::rng::derive_seed;
use crate::model::{EncoderKind, ModelConfig, TrainConfig};
use crate::propagation::PropagationConfig;

/// Environment variable that relocates dataset directories named by
/// `data.name`.
pub const DATA_DIR_ENV: &str = "YYGNN_DATA_DIR";

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub name: String,
    pub edges: PathBuf,
    /// `None` means one-hot identity features.
    pub features: Option<PathBuf>,
    pub num_nodes: Option<usize>,
    /// Uniform noise added to the features (random-feature variant).
    pub feature_noise: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitConfig {
    pub ratios: (f64, f64, f64),
    pub seed: u64,
    pub pool_size: usize,
    pub pool_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub k: usize,
    pub split: EvalSplit,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: DataConfig,
    pub split: SplitConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub output_dir: PathBuf,
}

fn cfg_err(key: &str, message: impl Into<String>) -> Error {
    Error::config(key, message)
}

fn list<T: Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(|s| s.trim().parse().map_err(|_| cfg_err(key, format!("bad list entry `{s}`"))))
        .collect()
}

fn split_name(s: EvalSplit) -> &'static str {
    match s {
        EvalSplit::Valid => "valid",
        EvalSplit::Test => "test",
    }
}

/// Raw entries plus bookkeeping of which keys were read.
struct Entries {
    values: BTreeMap<String, String>,
    defaulted: Vec<String>,
}

impl Entries {
    fn raw(&mut self, key: &str, default: &str) -> String {
        match self.values.remove(key) {
            Some(v) => v,
            None => {
                self.defaulted.push(format!("{key} = {default}"));
                default.to_string()
            }
        }
    }

    fn get<T: FromStr>(&mut self, key: &str, default: impl Display) -> Result<T> {
        let v = self.raw(key, &default.to_string());
        v.parse().map_err(|_| cfg_err(key, format!("cannot parse `{v}`")))
    }
}

impl RunConfig {
    /// Parses config text; relative paths resolve against `base_dir`.
    /// Returns the configuration and one `key = value` line per default used.
    pub fn parse(text: &str, base_dir: &Path) -> Result<(Self, Vec<String>)> {
        Self::parse_with(text, base_dir, &[])
    }

    /// Like [`RunConfig::parse`], with `key=value` overrides applied on top
    /// of the text (an override may replace a key the text already sets).
    pub fn parse_with(text: &str, base_dir: &Path, overrides: &[String]) -> Result<(Self, Vec<String>)> {
        let mut values = BTreeMap::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| cfg_err(&format!("line {}", idx + 1), "expected `key = value`"))?;
            let k = k.trim().to_string();
            if values.insert(k.clone(), v.trim().to_string()).is_some() {
                return Err(cfg_err(&k, "key given twice"));
            }
        }
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| cfg_err(o, "override must be `key=value`"))?;
            values.insert(k.trim().to_string(), v.trim().to_string());
        }
        let mut e = Entries {
            values,
            defaulted: Vec::new(),
        };
        let cfg = Self::from_entries(&mut e, base_dir)?;
        if let Some(k) = e.values.keys().next() {
            return Err(cfg_err(k, "unknown key"));
        }
        cfg.validate()?;
        Ok((cfg, e.defaulted))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, Vec<String>)> {
        Self::load_with(path, &[])
    }

    pub fn load_with(path: impl AsRef<Path>, overrides: &[String]) -> Result<(Self, Vec<String>)> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse_with(&text, base, overrides)
    }

    fn from_entries(e: &mut Entries, base: &Path) -> Result<Self> {
        let name: String = e.raw("data.name", "");
        let dir_raw = e.raw("data.dir", ".");
        let data_dir = match std::env::var_os(DATA_DIR_ENV) {
            Some(root) if !name.is_empty() => PathBuf::from(root).join(&name),
            _ => base.join(dir_raw),
        };
        let edges = data_dir.join(e.raw("data.edges", "edges.txt"));
        let features = match e.raw("data.features", "none").as_str() {
            "none" | "" => None,
            f => Some(data_dir.join(f)),
        };
        let num_nodes = match e.raw("data.num_nodes", "auto").as_str() {
            "auto" => None,
            v => Some(v.parse().map_err(|_| cfg_err("data.num_nodes", format!("cannot parse `{v}`")))?),
        };
        let data = DataConfig {
            name,
            edges,
            features,
            num_nodes,
            feature_noise: e.get("data.feature_noise", 0.0)?,
        };

        let ratios: Vec<f64> = parse_list("split.ratios", &e.raw("split.ratios", "0.7,0.1,0.2"))?;
        if ratios.len() != 3 {
            return Err(cfg_err("split.ratios", "expected three comma-separated ratios"));
        }
        let split = SplitConfig {
            ratios: (ratios[0], ratios[1], ratios[2]),
            seed: e.get("split.seed", 0)?,
            pool_size: e.get("split.pool_size", 5000)?,
            pool_seed: e.get("split.pool_seed", 1)?,
        };

        let dm = ModelConfig::default();
        let dp = PropagationConfig::default();
        let lambda_k = parse_list("prop.lambda_k", &e.raw("prop.lambda_k", &list(&dp.lambda_k)))?;
        let prop = PropagationConfig {
            lambda: e.get("prop.lambda", dp.lambda)?,
            lambda_k,
            learnable_lambda_k: e.get("prop.learnable_lambda_k", dp.learnable_lambda_k)?,
            gamma: e.get("prop.gamma", dp.gamma)?,
            alpha: e.get("prop.alpha", dp.alpha)?,
            steps: e.get("prop.T", dp.steps)?,
            lower_bound: e.get("prop.lower_bound", dp.lower_bound)?,
        };
        let encoder: EncoderKind = e.get("model.encoder", dm.encoder)?;
        let model = ModelConfig {
            encoder,
            hidden: e.get("model.hidden", dm.hidden)?,
            base_layers: e.get("model.base_layers", dm.base_layers)?,
            decoder_layers: e.get("model.decoder_layers", dm.decoder_layers)?,
            dropout: e.get("model.dropout", dm.dropout)?,
            sampler: e.get("model.sampler", dm.sampler)?,
            prop,
        };

        let dt = TrainConfig::default();
        let train = TrainConfig {
            epochs: e.get("train.epochs", dt.epochs)?,
            lr: e.get("train.lr", dt.lr)?,
            weight_decay: e.get("train.weight_decay", dt.weight_decay)?,
            neg_per_edge: e.get("train.neg_per_edge", dt.neg_per_edge)?,
            batch_size: e.get("train.batch_size", dt.batch_size)?,
            seed: e.get("train.seed", dt.seed)?,
            eval_every: e.get("train.eval_every", dt.eval_every)?,
            eval_k: e.get("train.eval_k", dt.eval_k)?,
            patience: e.get("train.patience", dt.patience)?,
        };

        let split_eval = match e.raw("eval.split", "test").as_str() {
            "test" => EvalSplit::Test,
            "valid" => EvalSplit::Valid,
            other => return Err(cfg_err("eval.split", format!("expected valid or test, got `{other}`"))),
        };
        let eval = EvalConfig {
            k: e.get("eval.k", 100)?,
            split: split_eval,
            seeds: parse_list("eval.seeds", &e.raw("eval.seeds", "0"))?,
        };
        let output_dir = base.join(e.raw("output.dir", "out"));
        Ok(Self {
            data,
            split,
            model,
            train,
            eval,
            output_dir,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |key: &str, r: Result<()>| r.map_err(|e| cfg_err(key, e.to_string()));
        wrap("model", self.model.validate())?;
        wrap("train", self.train.validate())?;
        let (a, b, c) = self.split.ratios;
        if a <= 0.0 || b < 0.0 || c < 0.0 || ((a + b + c) - 1.0).abs() > 1e-9 {
            return Err(cfg_err("split.ratios", "ratios must be non-negative, train positive, summing to 1"));
        }
        if self.eval.k == 0 {
            return Err(cfg_err("eval.k", "must be positive"));
        }
        if self.eval.seeds.is_empty() {
            return Err(cfg_err("eval.seeds", "need at least one seed"));
        }
        if !(self.data.feature_noise >= 0.0) || !self.data.feature_noise.is_finite() {
            return Err(cfg_err("data.feature_noise", "must be a finite non-negative number"));
        }
        Ok(())
    }

    /// Fails with an I/O error naming the first referenced file that is
    /// missing.
    pub fn check_files(&self) -> Result<()> {
        for p in std::iter::once(&self.data.edges).chain(self.data.features.as_ref()) {
            if !p.is_file() {
                return Err(Error::io(
                    p,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
                ));
            }
        }
        Ok(())
    }

    /// Loads the graph and features (one-hot identity when no feature file
    /// is configured), applying the configured feature noise.
    pub fn load_data(&self) -> Result<(CsrGraph, FeatureMatrix)> {
        self.check_files()?;
        let g = load_edge_list(&self.data.edges, self.data.num_nodes)?;
        let x = match &self.data.features {
            Some(p) => load_features(p)?,
            None => FeatureMatrix::identity(g.num_nodes()),
        };
        x.check_rows(&g)?;
        let x = random_feature_variant(&x, self.data.feature_noise, derive_seed(self.train.seed, 7))?;
        Ok((g, x))
    }

    /// The configured split of `g`, with its evaluation pools.
    pub fn make_split(&self, g: &CsrGraph) -> Result<EdgeSplit> {
        split_edges(g, self.split.ratios, self.split.seed)?.with_eval_pools(self.split.pool_size, self.split.pool_seed)
    }

    /// Every key with its resolved value; paths are written absolute where
    /// possible so the snapshot works from any directory.
    pub fn to_text(&self) -> String {
        let abs = |p: &Path| std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf()).display().to_string();
        let m = &self.model;
        let p = &m.prop;
        let t = &self.train;
        let rows: Vec<(&str, String)> = vec![
            ("data.name", self.data.name.clone()),
            ("data.dir", "/".into()),
            ("data.edges", abs(&self.data.edges)),
            ("data.features", self.data.features.as_deref().map_or("none".into(), abs)),
            ("data.num_nodes", self.data.num_nodes.map_or("auto".into(), |n| n.to_string())),
            ("data.feature_noise", format!("{:?}", self.data.feature_noise)),
            ("split.ratios", format!("{:?},{:?},{:?}", self.split.ratios.0, self.split.ratios.1, self.split.ratios.2)),
            ("split.seed", self.split.seed.to_string()),
            ("split.pool_size", self.split.pool_size.to_string()),
            ("split.pool_seed", self.split.pool_seed.to_string()),
            ("model.encoder", m.encoder.to_string()),
            ("model.hidden", m.hidden.to_string()),
            ("model.base_layers", m.base_layers.to_string()),
            ("model.decoder_layers", m.decoder_layers.to_string()),
            ("model.dropout", format!("{:?}", m.dropout)),
            ("model.sampler", m.sampler.to_string()),
            ("prop.lambda", format!("{:?}", p.lambda)),
            ("prop.lambda_k", p.lambda_k.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(",")),
            ("prop.learnable_lambda_k", p.learnable_lambda_k.to_string()),
            ("prop.gamma", format!("{:?}", p.gamma)),
            ("prop.alpha", format!("{:?}", p.alpha)),
            ("prop.T", p.steps.to_string()),
            ("prop.lower_bound", p.lower_bound.to_string()),
            ("train.epochs", t.epochs.to_string()),
            ("train.lr", format!("{:?}", t.lr)),
            ("train.weight_decay", format!("{:?}", t.weight_decay)),
            ("train.neg_per_edge", t.neg_per_edge.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.seed", t.seed.to_string()),
            ("train.eval_every", t.eval_every.to_string()),
            ("train.eval_k", t.eval_k.to_string()),
            ("train.patience", t.patience.to_string()),
            ("eval.k", self.eval.k.to_string()),
            ("eval.split", split_name(self.eval.split).into()),
            ("eval.seeds", list(&self.eval.seeds)),
            ("output.dir", abs(&self.output_dir)),
        ];
        rows.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
