//! Filtering and pooling layers, each optionally adapted by FiLM vectors.
//!
//! FiLM adaptation of a weight `W ∈ R^{d×d_new}` broadcasts the per-row
//! vectors across columns: `W ⋄ φ = W ⊙ br(γ) + br(β)`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::adaptor::{FilmParams, FilmVars};
use crate::error::{Error, Result};
use crate::numeric::{DenseMatrix, SparseMatrix, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilmMode {
    #[default]
    Full,
    GammaOnly,
    BetaOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Identity => Ok(x),
        }
    }
}

/// A FiLM adaptation to apply to one layer's weight.
#[derive(Debug, Clone, Copy)]
pub struct Film {
    pub vars: FilmVars,
    pub mode: FilmMode,
}

/// Graph structure feeding a layer: either a constant CSR matrix or a dense
/// matrix produced on the tape (coarsened graphs).
#[derive(Debug, Clone)]
pub enum Adjacency {
    Sparse(Arc<SparseMatrix>),
    Dense(Var),
}

impl Adjacency {
    pub fn num_nodes(&self, tape: &Tape) -> usize {
        match self {
            Adjacency::Sparse(a) => a.rows(),
            Adjacency::Dense(v) => tape.value(*v).rows(),
        }
    }

    /// `A · x`.
    pub fn propagate(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Adjacency::Sparse(a) => tape.spmm(Arc::clone(a), x),
            Adjacency::Dense(a) => tape.matmul(*a, x),
        }
    }
}

pub fn film_adapt_var(tape: &mut Tape, w: Var, film: Film) -> Result<Var> {
    let (d, _) = tape.value(w).shape();
    let glen = tape.value(film.vars.gamma).rows();
    let blen = tape.value(film.vars.beta).rows();
    if glen != d || blen != d {
        return Err(Error::shape(
            "film_adapt",
            format!("weight has {d} rows, γ has {glen}, β has {blen}"),
        ));
    }
    match film.mode {
        FilmMode::Full => {
            let scaled = tape.scale_rows(w, film.vars.gamma)?;
            tape.shift_rows(scaled, film.vars.beta)
        }
        FilmMode::GammaOnly => tape.scale_rows(w, film.vars.gamma),
        FilmMode::BetaOnly => tape.shift_rows(w, film.vars.beta),
    }
}

/// Value-level `W ⋄ (γ, β)` under `mode`.
pub fn film_adapt(w: &DenseMatrix, fp: &FilmParams, mode: FilmMode) -> Result<DenseMatrix> {
    if fp.gamma.len() != fp.beta.len() {
        return Err(Error::shape(
            "film_adapt",
            format!("γ length {} vs β length {}", fp.gamma.len(), fp.beta.len()),
        ));
    }
    let mut tape = Tape::new();
    let wv = tape.constant(w.clone());
    let vars = fp.to_tape(&mut tape);
    let out = film_adapt_var(&mut tape, wv, Film { vars, mode })?;
    Ok(tape.value(out).clone())
}

fn adapted_weight(tape: &mut Tape, w: Var, film: Option<Film>) -> Result<Var> {
    match film {
        Some(f) => film_adapt_var(tape, w, f),
        None => Ok(w),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterLayer {
    pub weight: crate::params::ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

/// `σ(Â X W')` with `W' = W` or `W ⋄ φ`.
pub fn gcn_filter(
    tape: &mut Tape,
    norm_adj: &Adjacency,
    x: Var,
    w: Var,
    film: Option<Film>,
    activation: Activation,
) -> Result<Var> {
    let n = norm_adj.num_nodes(tape);
    let (xr, xc) = tape.value(x).shape();
    let (wr, _) = tape.value(w).shape();
    if xr != n || xc != wr {
        return Err(Error::shape(
            "gcn_filter",
            format!("Â is {n}x{n}, X is {xr}x{xc}, W has {wr} rows"),
        ));
    }
    let w = adapted_weight(tape, w, film)?;
    let xw = tape.matmul(x, w)?;
    let h = norm_adj.propagate(tape, xw)?;
    activation.apply(tape, h)
}

/// Node-wise max readout, `n×d → 1×d`.
pub fn max_pool(tape: &mut Tape, x: Var) -> Result<Var> {
    tape.col_max(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffPoolLayer {
    /// Embedded assignment filter weight, `d × clusters`.
    pub weight: crate::params::ParamId,
    pub in_dim: usize,
    pub clusters: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct DiffPoolOutput {
    /// `SᵀAS`, dense `clusters × clusters`.
    pub adjacency: Var,
    /// `SᵀZ`.
    pub features: Var,
    /// Row-stochastic `n × clusters` assignment.
    pub assignment: Var,
}

/// Soft-assignment pooling: `S = softmax(Â X W_a')`, `X_new = SᵀZ`,
/// `A_new = SᵀAS`.
#[allow(clippy::too_many_arguments)]
pub fn diffpool(
    tape: &mut Tape,
    raw_adj: &Adjacency,
    norm_adj: &Adjacency,
    x: Var,
    z: Var,
    w_assign: Var,
    film: Option<Film>,
) -> Result<DiffPoolOutput> {
    let clusters = tape.value(w_assign).cols();
    if clusters < 1 {
        return Err(Error::invalid("diffpool needs at least one cluster"));
    }
    let n = raw_adj.num_nodes(tape);
    if tape.value(z).rows() != n {
        return Err(Error::shape(
            "diffpool",
            format!("Z has {} rows for {n} nodes", tape.value(z).rows()),
        ));
    }
    let logits = gcn_filter(tape, norm_adj, x, w_assign, film, Activation::Identity)?;
    let s = tape.softmax_rows(logits)?;
    let st = tape.transpose(s)?;
    let features = tape.matmul(st, z)?;
    let a_s = raw_adj.propagate(tape, s)?;
    let adjacency = tape.matmul(st, a_s)?;
    Ok(DiffPoolOutput {
        adjacency,
        features,
        assignment: s,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopKPoolLayer {
    /// Score projection `p`, `d × 1`.
    pub projection: crate::params::ParamId,
    pub in_dim: usize,
    pub ratio: f64,
}

#[derive(Debug, Clone)]
pub struct TopKOutput {
    /// Kept original node indices, ascending.
    pub kept: Vec<usize>,
    pub adjacency: SparseMatrix,
    pub features: Var,
}

/// Number of nodes kept from `n` at `ratio`: `⌈ratio·n⌉` clamped to `[1, n]`.
pub fn topk_count(n: usize, ratio: f64) -> usize {
    let k = (ratio * n as f64 - 1e-9).ceil();
    (k.max(1.0) as usize).min(n)
}

/// Indices of the `k` largest scores, ties to the lower index, returned in
/// ascending index order.
pub fn topk_select(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut kept = order[..k.min(scores.len())].to_vec();
    kept.sort_unstable();
    kept
}

/// Top-k pooling: score `y = X p'/‖p'‖`, keep the top `⌈k·n⌉` nodes, gate
/// their features by `sigmoid(y)` and take the induced subgraph. Selection is
/// treated as constant in the backward pass.
pub fn topk_pool(
    tape: &mut Tape,
    raw_adj: &SparseMatrix,
    x: Var,
    p: Var,
    ratio: f64,
    film: Option<Film>,
) -> Result<TopKOutput> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::invalid(format!("top-k ratio {ratio} outside (0, 1]")));
    }
    let n = raw_adj.rows();
    let (xr, xc) = tape.value(x).shape();
    let (pr, pc) = tape.value(p).shape();
    if xr != n || pr != xc || pc != 1 {
        return Err(Error::shape(
            "topk_pool",
            format!("A is {n}x{n}, X is {xr}x{xc}, p is {pr}x{pc}"),
        ));
    }
    let p = adapted_weight(tape, p, film)?;
    let unit = tape.normalize(p)?;
    let scores = tape.matmul(x, unit)?;
    let kept = topk_select(tape.value(scores).as_slice(), topk_count(n, ratio));

    let kept_scores = tape.gather_rows(scores, kept.clone())?;
    let gate = tape.sigmoid(kept_scores)?;
    let kept_x = tape.gather_rows(x, kept.clone())?;
    let features = tape.scale_rows(kept_x, gate)?;
    Ok(TopKOutput {
        adjacency: raw_adj.induced(&kept),
        kept,
        features,
    })
}
