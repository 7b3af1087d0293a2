//! Graphs, datasets and the per-graph structural side information.

mod features;
mod synth;
mod tu;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{DenseMatrix, SparseMatrix};

pub use features::{structural_features, Standardizer, StructFeatures, STRUCT_DIM};
pub use synth::{synth_dataset, BandRule, SizeBand, SynthConfig};
pub use tu::load_tu_dataset;

/// An undirected graph with node features and a class label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    /// Position of the graph in its dataset.
    pub id: usize,
    adjacency: SparseMatrix,
    features: DenseMatrix,
    pub label: usize,
}

impl Graph {
    /// Builds a graph from undirected edges. Edges are symmetrized and
    /// deduplicated; self-loops are dropped.
    pub fn from_edges(
        id: usize,
        n: usize,
        edges: &[(usize, usize)],
        features: DenseMatrix,
        label: usize,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid(format!("graph {id} has no nodes")));
        }
        if features.rows() != n {
            return Err(Error::shape(
                "Graph::from_edges",
                format!("{} feature rows for {n} nodes", features.rows()),
            ));
        }
        let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(edges.len() * 2);
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::invalid(format!(
                    "graph {id}: edge ({a}, {b}) outside {n} nodes"
                )));
            }
            if a != b {
                pairs.push((a, b));
                pairs.push((b, a));
            }
        }
        pairs.sort_unstable();
        pairs.dedup();
        let triplets: Vec<_> = pairs.into_iter().map(|(a, b)| (a, b, 1.0)).collect();
        let adjacency = SparseMatrix::from_triplets(n, n, &triplets)?;
        Ok(Self {
            id,
            adjacency,
            features,
            label,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.adjacency.rows()
    }

    /// Undirected edge count.
    pub fn num_edges(&self) -> usize {
        self.adjacency.nnz() / 2
    }

    pub fn adjacency(&self) -> &SparseMatrix {
        &self.adjacency
    }

    pub fn features(&self) -> &DenseMatrix {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.num_nodes())
            .map(|r| self.adjacency.row_entries(r).count())
            .collect()
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.adjacency
            .iter()
            .filter(|&(r, c, _)| r < c)
            .map(|(r, c, _)| (r, c))
            .collect()
    }

    /// Relabels nodes so old node `i` becomes node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Graph> {
        let n = self.num_nodes();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::invalid("not a permutation of the node set"));
        }
        let edges: Vec<_> = self.edges().into_iter().map(|(a, b)| (perm[a], perm[b])).collect();
        let mut features = DenseMatrix::zeros(n, self.feature_dim());
        for i in 0..n {
            features.row_mut(perm[i]).copy_from_slice(self.features.row(i));
        }
        Graph::from_edges(self.id, n, &edges, features, self.label)
    }
}

/// `D̃^{-1/2}(A + I)D̃^{-1/2}`. Every node carries its self-loop, so all
/// degrees are at least one.
pub fn normalize_adjacency(g: &Graph) -> SparseMatrix {
    normalize_sparse(g.adjacency())
}

pub(crate) fn normalize_sparse(a: &SparseMatrix) -> SparseMatrix {
    let n = a.rows();
    let degree: Vec<f64> = a.row_sums().into_iter().map(|d| d + 1.0).collect();
    let inv_sqrt: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut triplets = Vec::with_capacity(a.nnz() + n);
    for (r, c, v) in a.iter() {
        if r != c {
            triplets.push((r, c, v * inv_sqrt[r] * inv_sqrt[c]));
        }
    }
    for i in 0..n {
        triplets.push((i, i, (a.get(i, i) + 1.0) * inv_sqrt[i] * inv_sqrt[i]));
    }
    SparseMatrix::from_triplets(n, n, &triplets).expect("indices in range")
}

/// A graph with its derived, immutable per-graph inputs cached.
#[derive(Debug, Clone)]
pub struct PreparedGraph<'a> {
    pub graph: &'a Graph,
    pub raw_adjacency: Arc<SparseMatrix>,
    pub norm_adjacency: Arc<SparseMatrix>,
    pub structure: Vec<f64>,
}

impl<'a> PreparedGraph<'a> {
    pub fn new(graph: &'a Graph, standardized: Vec<f64>) -> Self {
        Self {
            graph,
            raw_adjacency: Arc::new(graph.adjacency().clone()),
            norm_adjacency: Arc::new(normalize_adjacency(graph)),
            structure: standardized,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub graphs: Vec<Graph>,
    pub num_classes: usize,
}

impl Dataset {
    /// Validates non-emptiness, a consistent feature dimension and that every
    /// class in `0..num_classes` occurs.
    pub fn new(name: impl Into<String>, graphs: Vec<Graph>, num_classes: usize) -> Result<Self> {
        let name = name.into();
        let first = graphs
            .first()
            .ok_or_else(|| Error::invalid(format!("dataset {name} is empty")))?;
        let dim = first.feature_dim();
        let mut present = vec![false; num_classes];
        for (i, g) in graphs.iter().enumerate() {
            if g.feature_dim() != dim {
                return Err(Error::invalid(format!(
                    "graph {i} has feature dim {} (expected {dim})",
                    g.feature_dim()
                )));
            }
            if g.id != i {
                return Err(Error::invalid(format!("graph at position {i} carries id {}", g.id)));
            }
            match present.get_mut(g.label) {
                Some(slot) => *slot = true,
                None => {
                    return Err(Error::invalid(format!(
                        "graph {i} label {} >= {num_classes} classes",
                        g.label
                    )))
                }
            }
        }
        if let Some(missing) = present.iter().position(|p| !p) {
            return Err(Error::invalid(format!("class {missing} has no graphs")));
        }
        Ok(Self {
            name,
            graphs,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.graphs[0].feature_dim()
    }

    pub fn subset(&self, ids: &[usize]) -> Vec<&Graph> {
        ids.iter().map(|&i| &self.graphs[i]).collect()
    }

    /// Fraction of graphs in the most frequent class.
    pub fn majority_fraction(&self, ids: &[usize]) -> f64 {
        let mut counts = vec![0usize; self.num_classes];
        for &i in ids {
            counts[self.graphs[i].label] += 1;
        }
        counts.into_iter().max().unwrap_or(0) as f64 / ids.len().max(1) as f64
    }
}
