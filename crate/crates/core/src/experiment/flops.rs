//! Analytic multiply-add counts for adapting the weights of a customized model
//! against running its filters on one graph.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::STRUCT_DIM;
use crate::layers::{topk_count, FilmMode};
use crate::model::{build_model, Backbone, Block, ModelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopReport {
    pub adaptation: u64,
    pub filter: u64,
}

impl FlopReport {
    pub fn ratio(&self) -> f64 {
        self.adaptation as f64 / self.filter as f64
    }
}

/// Multiply-adds of one adaptor net plus applying its output to a
/// `rows × cols` weight.
pub fn adaptation_flops(input: usize, hidden: usize, rows: usize, cols: usize, mode: FilmMode) -> u64 {
    let net = input * hidden + hidden * 2 * rows;
    let apply = match mode {
        FilmMode::Full => 2 * rows * cols,
        FilmMode::GammaOnly | FilmMode::BetaOnly => rows * cols,
    };
    (net + apply) as u64
}

/// `Â X W` on a graph with `nnz` stored adjacency entries.
pub fn filter_flops(n: usize, nnz: usize, d_in: usize, d_out: usize) -> u64 {
    (nnz * d_in + n * d_in * d_out) as u64
}

/// Counts for one graph with `n` nodes and `m` undirected edges. Coarsened
/// DiffPool levels are dense; top-k levels keep the expected induced edge
/// share `(n'/n)²`.
pub fn flop_report(spec: &ModelSpec, n: usize, m: usize) -> Result<FlopReport> {
    let Some(mode) = spec.variant.film_mode() else {
        return Err(Error::invalid(format!(
            "flop report needs a customized variant, got {}",
            spec.variant.name()
        )));
    };
    if n == 0 {
        return Err(Error::invalid("flop report needs n >= 1"));
    }
    let params = build_model(spec, 0)?;
    let mut adaptation = 0;
    let mut filter = 0;
    let (mut nodes, mut edges) = (n, m as f64);
    let nnz = |nodes: usize, edges: f64, dense: bool| {
        if dense {
            nodes * nodes
        } else {
            2 * edges.round() as usize + nodes
        }
    };
    let mut dense = false;
    for block in &params.blocks {
        let w = params.store.get(block.weight());
        adaptation += adaptation_flops(STRUCT_DIM, spec.adaptor_hidden, w.rows(), w.cols(), mode);
        match block {
            Block::Filter(_) => filter += filter_flops(nodes, nnz(nodes, edges, dense), w.rows(), w.cols()),
            Block::Assign(layer) => {
                filter += filter_flops(nodes, nnz(nodes, edges, dense), w.rows(), w.cols());
                nodes = layer.clusters;
                dense = true;
            }
            Block::TopK(layer) => {
                let kept = topk_count(nodes, layer.ratio);
                edges *= (kept as f64 / nodes as f64).powi(2);
                nodes = kept;
            }
        }
    }
    debug_assert!(spec.backbone != Backbone::Gcn || !dense);
    Ok(FlopReport { adaptation, filter })
}
