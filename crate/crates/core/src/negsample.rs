//! Negative graphs for the encoder's forward pass and negative pairs for the
//! supervision loss.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::graph::{CsrGraph, Edge, EdgeSplit};
use crate::rng::{seeded, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerMode {
    /// Uniform over all non-edges of the training graph.
    GlobalUniform,
    /// Keep one endpoint of the positive edge, draw the other uniformly
    /// among its non-neighbours.
    SourceUniform,
}

impl FromStr for SamplerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global_uniform" | "global" => Ok(Self::GlobalUniform),
            "source_uniform" | "source" => Ok(Self::SourceUniform),
            other => Err(Error::InvalidArgument(format!("unknown sampler `{other}`"))),
        }
    }
}

impl fmt::Display for SamplerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::GlobalUniform => "global_uniform",
            Self::SourceUniform => "source_uniform",
        })
    }
}

struct PairSampler<'a> {
    graph: &'a CsrGraph,
    max_attempts: usize,
}

impl<'a> PairSampler<'a> {
    fn new(graph: &'a CsrGraph) -> Result<Self> {
        if graph.is_complete() {
            return Err(Error::Sampling(format!(
                "graph with {} nodes and {} edges has no non-edges",
                graph.num_nodes(),
                graph.num_edges()
            )));
        }
        Ok(Self {
            graph,
            max_attempts: 100 * graph.num_nodes().max(1),
        })
    }

    fn global(&self, rng: &mut Rng) -> Result<Edge> {
        let n = self.graph.num_nodes();
        for _ in 0..self.max_attempts {
            let i = rng.gen_range(0..n);
            let j = rng.gen_range(0..n);
            if i != j && !self.graph.has_edge(i, j) {
                return Ok((i.min(j), i.max(j)));
            }
        }
        Err(self.exhausted())
    }

    fn from_source(&self, edge: Edge, rng: &mut Rng) -> Result<Edge> {
        let n = self.graph.num_nodes();
        let (a, b) = if rng.gen_bool(0.5) {
            (edge.0, edge.1)
        } else {
            (edge.1, edge.0)
        };
        let saturated = |v: usize| self.graph.degree(v) + 1 >= n;
        let source = match (saturated(a), saturated(b)) {
            (false, _) => a,
            (true, false) => b,
            (true, true) => {
                return Err(Error::Sampling(format!(
                    "both endpoints of ({}, {}) are adjacent to every node",
                    edge.0, edge.1
                )))
            }
        };
        for _ in 0..self.max_attempts {
            let j = rng.gen_range(0..n);
            if j != source && !self.graph.has_edge(source, j) {
                return Ok((source.min(j), source.max(j)));
            }
        }
        Err(self.exhausted())
    }

    fn draw(&self, mode: SamplerMode, edge: Edge, rng: &mut Rng) -> Result<Edge> {
        match mode {
            SamplerMode::GlobalUniform => self.global(rng),
            SamplerMode::SourceUniform => self.from_source(edge, rng),
        }
    }

    fn exhausted(&self) -> Error {
        Error::Sampling(format!(
            "no non-edge found after {} attempts",
            self.max_attempts
        ))
    }
}

/// One negative edge per positive edge of `g_train`, stored symmetrically.
/// Repeated negative pairs are kept as parallel edges.
pub fn sample_negative_graph(g_train: &CsrGraph, mode: SamplerMode, seed: u64) -> Result<CsrGraph> {
    let sampler = PairSampler::new(g_train)?;
    let mut rng = seeded(seed);
    let mut negatives = Vec::with_capacity(g_train.num_edges());
    for edge in g_train.edges() {
        negatives.push(sampler.draw(mode, edge, &mut rng)?);
    }
    CsrGraph::from_edge_multiset(g_train.num_nodes(), negatives)
}

/// `K` negative graphs sharing the training graph's node set, with the
/// combined degree `D⁻_K = Σ_k D⁻_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeGraphSet {
    graphs: Vec<CsrGraph>,
    combined_degrees: Vec<usize>,
    epoch_seed: u64,
}

impl NegativeGraphSet {
    pub fn from_graphs(graphs: Vec<CsrGraph>, epoch_seed: u64) -> Result<Self> {
        let n = match graphs.first() {
            Some(g) => g.num_nodes(),
            None => return Err(Error::InvalidArgument("need at least one negative graph".into())),
        };
        if let Some(g) = graphs.iter().find(|g| g.num_nodes() != n) {
            return Err(Error::dims("negative graph node count", n, g.num_nodes()));
        }
        let mut combined_degrees = vec![0usize; n];
        for g in &graphs {
            for (i, d) in combined_degrees.iter_mut().enumerate() {
                *d += g.degree(i);
            }
        }
        Ok(Self {
            graphs,
            combined_degrees,
            epoch_seed,
        })
    }

    /// `k` edgeless graphs: propagation with this set has no repulsion term.
    pub fn empty(num_nodes: usize, k: usize) -> Self {
        Self::from_graphs(vec![CsrGraph::empty(num_nodes); k.max(1)], 0)
            .expect("non-empty graph list")
    }

    pub fn graphs(&self) -> &[CsrGraph] {
        &self.graphs
    }

    pub fn num_graphs(&self) -> usize {
        self.graphs.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.combined_degrees.len()
    }

    pub fn combined_degrees(&self) -> &[usize] {
        &self.combined_degrees
    }

    pub fn epoch_seed(&self) -> u64 {
        self.epoch_seed
    }

    /// Re-derives the combined degrees and the no-positive-overlap invariant.
    pub fn check_consistency(&self, g_train: &CsrGraph) -> Result<()> {
        for (i, &d) in self.combined_degrees.iter().enumerate() {
            let sum: usize = self.graphs.iter().map(|g| g.degree(i)).sum();
            if sum != d {
                return Err(Error::InvalidArgument(format!(
                    "combined degree of node {i} is {d}, graphs sum to {sum}"
                )));
            }
        }
        for g in &self.graphs {
            if let Some((i, j)) = g.edges().find(|&(i, j)| g_train.has_edge(i, j)) {
                return Err(Error::InvalidArgument(format!(
                    "negative edge ({i}, {j}) is a positive edge"
                )));
            }
        }
        Ok(())
    }
}

/// `K` independent negative graphs; graph `k` is drawn with seed
/// `epoch_seed ^ k`.
pub fn sample_negative_set(
    g_train: &CsrGraph,
    k: usize,
    mode: SamplerMode,
    epoch_seed: u64,
) -> Result<NegativeGraphSet> {
    if k == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    let graphs = (0..k)
        .map(|idx| sample_negative_graph(g_train, mode, epoch_seed ^ idx as u64))
        .collect::<Result<Vec<_>>>()?;
    NegativeGraphSet::from_graphs(graphs, epoch_seed)
}

/// Negative pairs for the link loss: `per_edge` pairs for each training
/// edge, laid out edge-major (`pairs[e * per_edge + a]`).
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisionNegatives {
    pub pairs: Vec<Edge>,
    pub per_edge: usize,
    pub seed: u64,
}

pub fn sample_supervision_negatives(
    split: &EdgeSplit,
    per_edge: usize,
    seed: u64,
) -> Result<SupervisionNegatives> {
    let g_train = split.train_graph();
    sample_supervision_pairs(
        &g_train,
        &split.train_edges,
        per_edge,
        SamplerMode::GlobalUniform,
        seed,
    )
}

/// Negatives avoid every edge of `g_train`.
pub fn sample_supervision_pairs(
    g_train: &CsrGraph,
    train_edges: &[Edge],
    per_edge: usize,
    mode: SamplerMode,
    seed: u64,
) -> Result<SupervisionNegatives> {
    if per_edge == 0 {
        return Err(Error::InvalidArgument("need at least one negative per edge".into()));
    }
    let sampler = PairSampler::new(g_train)?;
    let mut rng = seeded(seed);
    let mut pairs = Vec::with_capacity(per_edge * train_edges.len());
    for &edge in train_edges {
        for _ in 0..per_edge {
            pairs.push(sampler.draw(mode, edge, &mut rng)?);
        }
    }
    Ok(SupervisionNegatives {
        pairs,
        per_edge,
        seed,
    })
}
