//! Edge indexing over the strict upper triangle of a `V x V` node matrix.
//!
//! Edges are numbered in row-major order over pairs `(i, j)` with `i < j`,
//! so for `V = 4` the order is `(0,1) (0,2) (0,3) (1,2) (1,3) (2,3)`.
//! Everything here is 0-based; 1-based labels only appear in files.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of graph nodes (regions of interest).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct NodeCount(usize);

impl NodeCount {
    /// Smallest graph that can host one class of three nodes.
    pub const MIN: usize = 3;

    pub fn new(v: usize) -> Result<Self> {
        if v < Self::MIN {
            return Err(Error::InvalidArgument(format!(
                "node count must be at least {}, got {v}",
                Self::MIN
            )));
        }
        Ok(Self(v))
    }

    pub fn get(self) -> usize {
        self.0
    }

    pub fn edges(self) -> usize {
        self.0 * (self.0 - 1) / 2
    }

    /// Recovers `V` from an edge count `E = V(V-1)/2`.
    pub fn from_edge_count(e: usize) -> Result<Self> {
        let mut v = 2;
        while v * (v - 1) / 2 < e {
            v += 1;
        }
        if v * (v - 1) / 2 != e {
            return Err(Error::DimensionMismatch(format!(
                "{e} columns is not a triangular number V(V-1)/2"
            )));
        }
        Self::new(v)
    }
}

impl TryFrom<usize> for NodeCount {
    type Error = Error;

    fn try_from(v: usize) -> Result<Self> {
        Self::new(v)
    }
}

impl From<NodeCount> for usize {
    fn from(v: NodeCount) -> usize {
        v.0
    }
}

/// `E = v(v-1)/2`.
pub fn edge_count(v: usize) -> Result<usize> {
    if v < 2 {
        return Err(Error::InvalidArgument(format!(
            "edge count needs at least 2 nodes, got {v}"
        )));
    }
    Ok(v * (v - 1) / 2)
}

/// Index of the unordered pair `(i, j)`, `i < j < v`.
pub fn edge_index(i: usize, j: usize, v: usize) -> Result<usize> {
    if i >= j || j >= v {
        return Err(Error::InvalidArgument(format!(
            "edge ({i}, {j}) is not a valid pair with i < j < {v}"
        )));
    }
    Ok(unchecked_index(i, j, v))
}

#[inline]
pub(crate) fn unchecked_index(i: usize, j: usize, v: usize) -> usize {
    i * v - i * (i + 1) / 2 + (j - i - 1)
}

/// Inverse of [`edge_index`].
pub fn edge_pair(idx: usize, v: usize) -> Result<(usize, usize)> {
    let e = edge_count(v)?;
    if idx >= e {
        return Err(Error::InvalidArgument(format!(
            "edge index {idx} out of range for {v} nodes ({e} edges)"
        )));
    }
    // Row i starts at i*v - i(i+1)/2 and holds v-1-i entries.
    let mut i = 0;
    let mut start = 0;
    loop {
        let row_len = v - 1 - i;
        if idx < start + row_len {
            return Ok((i, i + 1 + idx - start));
        }
        start += row_len;
        i += 1;
    }
}

/// Precomputed pair table for one graph size.
#[derive(Debug, Clone)]
pub struct EdgeIndexMap {
    v: NodeCount,
    pairs: Vec<(usize, usize)>,
}

impl EdgeIndexMap {
    pub fn new(v: NodeCount) -> Self {
        let n = v.get();
        let mut pairs = Vec::with_capacity(v.edges());
        for i in 0..n {
            for j in i + 1..n {
                pairs.push((i, j));
            }
        }
        Self { v, pairs }
    }

    pub fn nodes(&self) -> NodeCount {
        self.v
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn index(&self, i: usize, j: usize) -> Result<usize> {
        edge_index(i, j, self.v.get())
    }

    pub fn pair(&self, idx: usize) -> Result<(usize, usize)> {
        self.pairs.get(idx).copied().ok_or_else(|| {
            Error::InvalidArgument(format!(
                "edge index {idx} out of range ({} edges)",
                self.pairs.len()
            ))
        })
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }
}
