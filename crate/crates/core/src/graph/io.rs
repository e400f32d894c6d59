use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{CsrGraph, FeatureMatrix, Matrix};
use crate::error::{Error, Result};

/// Reads a `src dst` edge list. Node count is `max id + 1` unless given.
pub fn load_edge_list(path: impl AsRef<Path>, num_nodes: Option<usize>) -> Result<CsrGraph> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_edge_list(&text, path, num_nodes)
}

pub fn parse_edge_list(text: &str, path: &Path, num_nodes: Option<usize>) -> Result<CsrGraph> {
    let mut edges = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            message,
        };
        let mut fields = line.split_whitespace();
        let (Some(a), Some(b), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(parse_err(format!("expected two node ids, got `{line}`")));
        };
        let a: usize = a
            .parse()
            .map_err(|_| parse_err(format!("invalid node id `{a}`")))?;
        let b: usize = b
            .parse()
            .map_err(|_| parse_err(format!("invalid node id `{b}`")))?;
        edges.push((a, b));
    }
    let n = match num_nodes {
        Some(n) => n,
        None => edges.iter().map(|&(a, b)| a.max(b) + 1).max().unwrap_or(0),
    };
    CsrGraph::from_edges(n, edges)
}

pub fn write_edge_list(path: impl AsRef<Path>, edges: &[(usize, usize)]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::with_capacity(edges.len() * 12);
    for &(i, j) in edges {
        let _ = writeln!(out, "{i} {j}");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a comma-separated feature matrix, one node per line.
pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                message: e.to_string(),
            })?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    message: format!("expected {} columns, got {}", first.len(), row.len()),
                });
            }
        }
        rows.push(row);
    }
    let cols = rows.first().map_or(0, Vec::len);
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    let data = Matrix::from_shape_vec((rows.len(), cols), flat)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    FeatureMatrix::new(data)
}
