use std::ops::Range;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Compressed sparse row adjacency.
///
/// Graphs built by [`CsrGraph::from_edge_list`] are undirected, simple and
/// self-loop-free. Derived propagation operators (see
/// [`CsrGraph::sym_norm_weights`]) may add self-loops and carry per-edge
/// weights.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrGraph {
    n: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    edge_weights: Option<Vec<f64>>,
}

impl CsrGraph {
    /// Symmetrizes and deduplicates `edges`; self-loops are dropped.
    pub fn from_edge_list(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::Validation(format!(
                    "edge ({i}, {j}) out of range for {n} nodes"
                )));
            }
            if i != j {
                adjacency[i].push(j);
                adjacency[j].push(i);
            }
        }
        Ok(Self::from_adjacency(adjacency, None))
    }

    fn from_adjacency(mut adjacency: Vec<Vec<usize>>, weights: Option<Vec<Vec<f64>>>) -> Self {
        let n = adjacency.len();
        let mut row_offsets = Vec::with_capacity(n + 1);
        let mut col_indices = Vec::new();
        row_offsets.push(0);
        for row in &mut adjacency {
            row.sort_unstable();
            row.dedup();
            col_indices.extend_from_slice(row);
            row_offsets.push(col_indices.len());
        }
        CsrGraph {
            n,
            row_offsets,
            col_indices,
            edge_weights: weights.map(|w| w.into_iter().flatten().collect()),
        }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of stored (directed) entries.
    #[inline]
    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }

    /// Number of undirected edges, counting a self-loop once.
    pub fn undirected_edge_count(&self) -> usize {
        let loops = (0..self.n).filter(|&i| self.neighbors(i).binary_search(&i).is_ok()).count();
        (self.nnz() - loops) / 2 + loops
    }

    #[inline]
    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    #[inline]
    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    #[inline]
    pub fn edge_weights(&self) -> Option<&[f64]> {
        self.edge_weights.as_deref()
    }

    #[inline]
    pub fn row_range(&self, i: usize) -> Range<usize> {
        self.row_offsets[i]..self.row_offsets[i + 1]
    }

    #[inline]
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.col_indices[self.row_range(i)]
    }

    #[inline]
    pub fn degree(&self, i: usize) -> usize {
        self.row_offsets[i + 1] - self.row_offsets[i]
    }

    /// Weight of the `k`-th stored entry; 1 for unweighted graphs.
    #[inline]
    pub fn weight_at(&self, k: usize) -> f64 {
        self.edge_weights.as_ref().map_or(1.0, |w| w[k])
    }

    /// Undirected edges `(i, j)` with `i < j`, in CSR order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |i| {
            self.neighbors(i)
                .iter()
                .copied()
                .filter(move |&j| i < j)
                .map(move |j| (i, j))
        })
    }

    /// The same structure with every node linked to itself; weights dropped.
    pub fn with_self_loops(&self) -> CsrGraph {
        let adjacency = (0..self.n)
            .map(|i| {
                let mut row = self.neighbors(i).to_vec();
                row.push(i);
                row
            })
            .collect();
        Self::from_adjacency(adjacency, None)
    }

    fn unweighted(&self) -> CsrGraph {
        CsrGraph {
            edge_weights: None,
            ..self.clone()
        }
    }

    /// Symmetric normalization `w_ij = 1 / sqrt(d_i d_j)`, with degrees taken
    /// after the optional self-loop insertion.
    pub fn sym_norm_weights(&self, add_self_loops: bool) -> Result<CsrGraph> {
        let mut g = if add_self_loops {
            self.with_self_loops()
        } else {
            self.unweighted()
        };
        if let Some(node) = (0..g.n).find(|&i| g.degree(i) == 0) {
            return Err(Error::ZeroDegree { node });
        }
        let inv_sqrt: Vec<f64> = (0..g.n).map(|i| 1.0 / (g.degree(i) as f64).sqrt()).collect();
        let mut weights = Vec::with_capacity(g.nnz());
        for i in 0..g.n {
            for &j in g.neighbors(i) {
                weights.push(inv_sqrt[i] * inv_sqrt[j]);
            }
        }
        g.edge_weights = Some(weights);
        Ok(g)
    }

    /// Row-normalized weights `1 / d_i`, so that propagation takes the
    /// neighbor mean. Isolated nodes keep an empty row (zero mean).
    pub fn mean_weights(&self) -> CsrGraph {
        let mut g = self.unweighted();
        let mut weights = Vec::with_capacity(g.nnz());
        for i in 0..g.n {
            let d = g.degree(i) as f64;
            weights.extend(std::iter::repeat_n(1.0 / d, g.degree(i)));
        }
        g.edge_weights = Some(weights);
        g
    }

    /// Materialized (weighted) adjacency matrix.
    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for k in self.row_range(i) {
                let j = self.col_indices[k];
                m.set(i, j, m.get(i, j) + self.weight_at(k));
            }
        }
        m
    }

    /// Relabels nodes so that new node `k` is old node `order[k]`. Weights
    /// follow their edges.
    pub fn permuted(&self, order: &[usize]) -> Result<CsrGraph> {
        if order.len() != self.n {
            return Err(Error::Validation(format!(
                "permutation of length {} for {} nodes",
                order.len(),
                self.n
            )));
        }
        let mut new_index = vec![usize::MAX; self.n];
        for (k, &old) in order.iter().enumerate() {
            if old >= self.n || new_index[old] != usize::MAX {
                return Err(Error::Validation("order is not a permutation".into()));
            }
            new_index[old] = k;
        }
        let mut adjacency = Vec::with_capacity(self.n);
        let mut weights = self.edge_weights.as_ref().map(|_| Vec::with_capacity(self.n));
        for &old in order {
            let mut row: Vec<(usize, f64)> = self
                .row_range(old)
                .map(|k| (new_index[self.col_indices[k]], self.weight_at(k)))
                .collect();
            row.sort_unstable_by_key(|e| e.0);
            adjacency.push(row.iter().map(|e| e.0).collect());
            if let Some(w) = &mut weights {
                w.push(row.iter().map(|e| e.1).collect());
            }
        }
        Ok(Self::from_adjacency(adjacency, weights))
    }

    /// Checks sortedness, index range, and structural symmetry.
    pub fn validate(&self) -> Result<()> {
        if self.row_offsets.len() != self.n + 1 || self.row_offsets[0] != 0 {
            return Err(Error::Validation("row_offsets has the wrong length".into()));
        }
        if *self.row_offsets.last().unwrap() != self.col_indices.len() {
            return Err(Error::Validation("row_offsets does not cover col_indices".into()));
        }
        if let Some(w) = &self.edge_weights {
            if w.len() != self.col_indices.len() {
                return Err(Error::Validation("edge weights misaligned".into()));
            }
        }
        for i in 0..self.n {
            if self.row_offsets[i] > self.row_offsets[i + 1] {
                return Err(Error::Validation(format!("row_offsets decreases at {i}")));
            }
            let row = self.neighbors(i);
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Validation(format!("row {i} not strictly increasing")));
            }
            for &j in row {
                if j >= self.n {
                    return Err(Error::Validation(format!("column {j} out of range in row {i}")));
                }
                if self.neighbors(j).binary_search(&i).is_err() {
                    return Err(Error::Validation(format!("edge ({i}, {j}) has no reverse")));
                }
            }
        }
        Ok(())
    }
}
