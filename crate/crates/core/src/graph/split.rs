use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::{CsrGraph, Edge};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};

const MANIFEST_HEADER: &str = "# yygnn split manifest";

/// Train/valid/test partition of a graph's edges, plus the fixed pools of
/// non-edges that valid/test positives are ranked against.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSplit {
    pub num_nodes: usize,
    pub train_edges: Vec<Edge>,
    pub valid_edges: Vec<Edge>,
    pub test_edges: Vec<Edge>,
    pub split_seed: u64,
    pub ratios: (f64, f64, f64),
    pub valid_negatives: Vec<Edge>,
    pub test_negatives: Vec<Edge>,
    pub pool_seed: Option<u64>,
}

/// Shuffles the canonical edge list with `seed`; train and valid counts are
/// `floor(ratio * |E|)`, test takes the remainder.
pub fn split_edges(g: &CsrGraph, ratios: (f64, f64, f64), seed: u64) -> Result<EdgeSplit> {
    let (tr, va, te) = ratios;
    if tr <= 0.0 || va < 0.0 || te < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "split ratios must be positive, got {ratios:?}"
        )));
    }
    if (tr + va + te - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split ratios must sum to 1, got {}",
            tr + va + te
        )));
    }
    let mut edges: Vec<Edge> = g.edges().collect();
    let mut rng = seeded(seed);
    edges.shuffle(&mut rng);
    let m = edges.len() as f64;
    let n_train = (tr * m + 1e-9).floor() as usize;
    let n_valid = (va * m + 1e-9).floor() as usize;
    let test_edges = edges.split_off(n_train + n_valid);
    let valid_edges = edges.split_off(n_train);
    Ok(EdgeSplit {
        num_nodes: g.num_nodes(),
        train_edges: edges,
        valid_edges,
        test_edges,
        split_seed: seed,
        ratios,
        valid_negatives: Vec::new(),
        test_negatives: Vec::new(),
        pool_seed: None,
    })
}

/// Distinct non-edges of `full_graph`, drawn uniformly.
pub fn sample_eval_pool(full_graph: &CsrGraph, size: usize, seed: u64) -> Result<Vec<Edge>> {
    let n = full_graph.num_nodes();
    let total_pairs = (n as u128) * (n.saturating_sub(1) as u128) / 2;
    let available = total_pairs - full_graph.num_edges() as u128;
    if (size as u128) > available {
        return Err(Error::Sampling(format!(
            "requested {size} evaluation negatives but only {available} non-edges exist"
        )));
    }
    let mut rng = seeded(seed);
    let mut seen = HashSet::with_capacity(size);
    let mut pool = Vec::with_capacity(size);
    while pool.len() < size {
        let i = rng.gen_range(0..n);
        let j = rng.gen_range(0..n);
        if i == j || full_graph.has_edge(i, j) {
            continue;
        }
        let e = (i.min(j), i.max(j));
        if seen.insert(e) {
            pool.push(e);
        }
    }
    Ok(pool)
}

impl EdgeSplit {
    /// The graph the encoder sees: training edges only.
    pub fn train_graph(&self) -> CsrGraph {
        CsrGraph::from_edges(self.num_nodes, self.train_edges.iter().copied())
            .expect("split edges are in bounds")
    }

    pub fn full_graph(&self) -> CsrGraph {
        let all = self
            .train_edges
            .iter()
            .chain(&self.valid_edges)
            .chain(&self.test_edges)
            .copied();
        CsrGraph::from_edges(self.num_nodes, all).expect("split edges are in bounds")
    }

    /// Samples the valid and test negative pools from non-edges of the full
    /// graph.
    pub fn with_eval_pools(mut self, pool_size: usize, seed: u64) -> Result<Self> {
        let full = self.full_graph();
        self.valid_negatives = sample_eval_pool(&full, pool_size, derive_seed(seed, 1))?;
        self.test_negatives = sample_eval_pool(&full, pool_size, derive_seed(seed, 2))?;
        self.pool_seed = Some(seed);
        Ok(self)
    }

    pub fn to_manifest(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MANIFEST_HEADER}");
        let _ = writeln!(out, "version=1");
        let _ = writeln!(out, "num_nodes={}", self.num_nodes);
        let _ = writeln!(out, "seed={}", self.split_seed);
        let (a, b, c) = self.ratios;
        let _ = writeln!(out, "ratios={a},{b},{c}");
        if let Some(ps) = self.pool_seed {
            let _ = writeln!(out, "pool_seed={ps}");
        }
        let sections: [(&str, &[Edge]); 5] = [
            ("train", &self.train_edges),
            ("valid", &self.valid_edges),
            ("test", &self.test_edges),
            ("valid_negatives", &self.valid_negatives),
            ("test_negatives", &self.test_negatives),
        ];
        for (name, edges) in sections {
            let _ = writeln!(out, "[{name}]");
            for &(i, j) in edges {
                let _ = writeln!(out, "{i} {j}");
            }
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_manifest()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_manifest(&text, path)
    }

    pub fn parse_manifest(text: &str, path: &Path) -> Result<Self> {
        let mut split = EdgeSplit {
            num_nodes: 0,
            train_edges: Vec::new(),
            valid_edges: Vec::new(),
            test_edges: Vec::new(),
            split_seed: 0,
            ratios: (0.0, 0.0, 0.0),
            valid_negatives: Vec::new(),
            test_negatives: Vec::new(),
            pool_seed: None,
        };
        let mut section: Option<String> = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                message,
            };
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = Some(name.to_string());
                continue;
            }
            match section.as_deref() {
                None => {
                    let (key, value) = line
                        .split_once('=')
                        .ok_or_else(|| err(format!("expected key=value, got `{line}`")))?;
                    let bad = |_| err(format!("invalid value for `{key}`: `{value}`"));
                    match key {
                        "version" => {
                            if value != "1" {
                                return Err(err(format!("unsupported manifest version {value}")));
                            }
                        }
                        "num_nodes" => split.num_nodes = value.parse().map_err(bad)?,
                        "seed" => split.split_seed = value.parse().map_err(bad)?,
                        "pool_seed" => split.pool_seed = Some(value.parse().map_err(bad)?),
                        "ratios" => {
                            let parts: Vec<f64> = value
                                .split(',')
                                .map(|v| v.trim().parse::<f64>())
                                .collect::<std::result::Result<_, _>>()
                                .map_err(|_| err(format!("invalid ratios `{value}`")))?;
                            let [a, b, c] = parts[..] else {
                                return Err(err("ratios needs three values".into()));
                            };
                            split.ratios = (a, b, c);
                        }
                        other => return Err(err(format!("unknown manifest key `{other}`"))),
                    }
                }
                Some(name) => {
                    let mut it = line.split_whitespace();
                    let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
                        return Err(err(format!("expected an edge, got `{line}`")));
                    };
                    let i: usize = a.parse().map_err(|_| err(format!("bad node id `{a}`")))?;
                    let j: usize = b.parse().map_err(|_| err(format!("bad node id `{b}`")))?;
                    for id in [i, j] {
                        if id >= split.num_nodes {
                            return Err(Error::NodeOutOfBounds {
                                id,
                                num_nodes: split.num_nodes,
                            });
                        }
                    }
                    let target = match name {
                        "train" => &mut split.train_edges,
                        "valid" => &mut split.valid_edges,
                        "test" => &mut split.test_edges,
                        "valid_negatives" => &mut split.valid_negatives,
                        "test_negatives" => &mut split.test_negatives,
                        other => return Err(err(format!("unknown section `{other}`"))),
                    };
                    target.push((i, j));
                }
            }
        }
        Ok(split)
    }
}
