use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::graph::{CsrGraph, Edge};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeuristicKind {
    CommonNeighbors,
    AdamicAdar,
    ResourceAllocation,
}

impl FromStr for HeuristicKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cn" => Ok(Self::CommonNeighbors),
            "aa" => Ok(Self::AdamicAdar),
            "ra" => Ok(Self::ResourceAllocation),
            other => Err(Error::InvalidArgument(format!("unknown heuristic `{other}`"))),
        }
    }
}

impl fmt::Display for HeuristicKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::CommonNeighbors => "CN",
            Self::AdamicAdar => "AA",
            Self::ResourceAllocation => "RA",
        })
    }
}

/// Walks the sorted neighbour lists of `i` and `j` in lockstep.
fn for_common_neighbors(g: &CsrGraph, i: usize, j: usize, mut f: impl FnMut(usize)) {
    let (a, b) = (g.neighbors(i), g.neighbors(j));
    let (mut p, mut q) = (0, 0);
    while p < a.len() && q < b.len() {
        match a[p].cmp(&b[q]) {
            std::cmp::Ordering::Less => p += 1,
            std::cmp::Ordering::Greater => q += 1,
            std::cmp::Ordering::Equal => {
                f(a[p]);
                p += 1;
                q += 1;
            }
        }
    }
}

pub fn heuristic_score(g: &CsrGraph, pairs: &[Edge], kind: HeuristicKind) -> Result<Vec<f64>> {
    let n = g.num_nodes();
    pairs
        .iter()
        .map(|&(i, j)| {
            for id in [i, j] {
                if id >= n {
                    return Err(Error::NodeOutOfBounds { id, num_nodes: n });
                }
            }
            let mut score = 0.0;
            for_common_neighbors(g, i, j, |z| {
                let deg = g.degree(z);
                // A shared neighbour of two distinct nodes has degree ≥ 2.
                debug_assert!(i == j || deg >= 2);
                score += match kind {
                    HeuristicKind::CommonNeighbors => 1.0,
                    HeuristicKind::AdamicAdar => 1.0 / (deg as f64).ln(),
                    HeuristicKind::ResourceAllocation => 1.0 / deg as f64,
                };
            });
            Ok(score)
        })
        .collect()
}
