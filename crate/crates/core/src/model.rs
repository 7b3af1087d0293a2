//! Full classifiers: GCN, DiffPool and gPool backbones in base, customized,
//! ablated and concat variants, all ending in a max readout and a linear head.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adaptor::{split_film_var, AdaptorBank, FilmParams};
use crate::error::{Error, Result};
use crate::graph::{normalize_sparse, Graph, PreparedGraph, Standardizer, STRUCT_DIM};
use crate::layers::{
    diffpool, film_adapt, gcn_filter, max_pool, topk_pool, Activation, Adjacency, DiffPoolLayer,
    Film, FilmMode, FilterLayer, TopKPoolLayer,
};
use crate::numeric::{DenseMatrix, SparseMatrix, Tape, Var};
use crate::params::{Bound, ParamId, ParamStore};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    Gcn,
    Diffpool,
    Gpool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Base,
    Customized,
    Concat,
    CustomizedGamma,
    CustomizedBeta,
}

impl Variant {
    /// FiLM mode for adaptor-driven variants, `None` otherwise.
    pub fn film_mode(self) -> Option<FilmMode> {
        match self {
            Variant::Customized => Some(FilmMode::Full),
            Variant::CustomizedGamma => Some(FilmMode::GammaOnly),
            Variant::CustomizedBeta => Some(FilmMode::BetaOnly),
            Variant::Base | Variant::Concat => None,
        }
    }

    pub fn is_customized(self) -> bool {
        self.film_mode().is_some()
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::Customized => "customized",
            Variant::Concat => "concat",
            Variant::CustomizedGamma => "customized_gamma",
            Variant::CustomizedBeta => "customized_beta",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub backbone: Backbone,
    pub variant: Variant,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
    /// `K_p`. For the GCN backbone this is the single readout and must be 1.
    pub pool_layers: usize,
    /// `K_f`.
    pub filters_per_pool: usize,
    /// Reference node count for DiffPool cluster sizes.
    pub max_nodes: usize,
    pub topk_ratio: f64,
    pub adaptor_hidden: usize,
    pub activation: Activation,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            backbone: Backbone::Gcn,
            variant: Variant::Base,
            input_dim: 2,
            hidden_dim: 64,
            num_classes: 2,
            pool_layers: 1,
            filters_per_pool: 3,
            max_nodes: 120,
            topk_ratio: 0.5,
            adaptor_hidden: 16,
            activation: Activation::Relu,
        }
    }
}

impl ModelSpec {
    /// Default layout for a backbone.
    pub fn for_backbone(backbone: Backbone) -> Self {
        let (pool_layers, filters_per_pool) = match backbone {
            Backbone::Gcn => (1, 3),
            Backbone::Diffpool => (2, 2),
            Backbone::Gpool => (2, 1),
        };
        Self {
            backbone,
            pool_layers,
            filters_per_pool,
            ..Self::default()
        }
    }

    pub fn with_variant(&self, variant: Variant) -> Self {
        Self {
            variant,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Invalid(format!("model spec: {msg}")));
        if self.input_dim == 0 || self.hidden_dim == 0 {
            return bad("input and hidden dims must be positive".into());
        }
        if self.num_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.num_classes));
        }
        if self.pool_layers == 0 || self.filters_per_pool == 0 {
            return bad("K_p and K_f must both be at least 1".into());
        }
        if self.backbone == Backbone::Gcn && self.pool_layers != 1 {
            return bad(format!(
                "the gcn backbone has a single readout pool, got K_p = {}",
                self.pool_layers
            ));
        }
        if self.backbone == Backbone::Diffpool && self.max_nodes == 0 {
            return bad("diffpool needs max_nodes >= 1".into());
        }
        if self.backbone == Backbone::Gpool && !(self.topk_ratio > 0.0 && self.topk_ratio <= 1.0) {
            return bad(format!("top-k ratio {} outside (0, 1]", self.topk_ratio));
        }
        if self.variant.is_customized() && self.adaptor_hidden == 0 {
            return bad("adaptor hidden width must be positive".into());
        }
        Ok(())
    }

    /// Supernode counts of successive DiffPool stages.
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut n = self.max_nodes.max(1);
        (0..self.pool_layers)
            .map(|_| {
                n = ((n as f64) * 0.25).ceil().max(1.0) as usize;
                n
            })
            .collect()
    }

    fn embedding_dim(&self) -> usize {
        match self.variant {
            Variant::Concat => self.hidden_dim + STRUCT_DIM,
            _ => self.hidden_dim,
        }
    }
}

/// One adaptable block of the stack, in evaluation order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    Filter(FilterLayer),
    Assign(DiffPoolLayer),
    TopK(TopKPoolLayer),
}

impl Block {
    pub fn weight(&self) -> ParamId {
        match self {
            Block::Filter(l) => l.weight,
            Block::Assign(l) => l.weight,
            Block::TopK(l) => l.projection,
        }
    }

    /// Row count of the adapted weight, which is the FiLM vector length.
    pub fn in_dim(&self) -> usize {
        match self {
            Block::Filter(l) => l.in_dim,
            Block::Assign(l) => l.in_dim,
            Block::TopK(l) => l.in_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub store: ParamStore,
    pub blocks: Vec<Block>,
    pub head_weight: ParamId,
    pub head_bias: ParamId,
    pub adaptors: Option<AdaptorBank>,
}

impl ModelParams {
    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }
}

pub fn build_model(spec: &ModelSpec, seed: u64) -> Result<ModelParams> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Adaptor and concat-only tensors come from a separate stream so every
    // variant shares the same backbone draw for a given seed.
    let mut side_rng = ChaCha8Rng::seed_from_u64(seed);
    side_rng.set_stream(1);

    let mut store = ParamStore::new();
    let mut blocks = Vec::new();
    let (d_in, d) = (spec.input_dim, spec.hidden_dim);
    let filter = |store: &mut ParamStore, rng: &mut ChaCha8Rng, in_dim: usize| {
        Block::Filter(FilterLayer {
            weight: store.push(DenseMatrix::glorot(in_dim, d, rng)),
            in_dim,
            out_dim: d,
            activation: spec.activation,
        })
    };

    let mut width = d_in;
    match spec.backbone {
        Backbone::Gcn => {
            for _ in 0..spec.filters_per_pool {
                blocks.push(filter(&mut store, &mut rng, width));
                width = d;
            }
        }
        Backbone::Diffpool => {
            for clusters in spec.cluster_sizes() {
                let stage_in = width;
                for _ in 0..spec.filters_per_pool {
                    blocks.push(filter(&mut store, &mut rng, width));
                    width = d;
                }
                blocks.push(Block::Assign(DiffPoolLayer {
                    weight: store.push(DenseMatrix::glorot(stage_in, clusters, &mut rng)),
                    in_dim: stage_in,
                    clusters,
                }));
            }
        }
        Backbone::Gpool => {
            for _ in 0..spec.pool_layers {
                for _ in 0..spec.filters_per_pool {
                    blocks.push(filter(&mut store, &mut rng, width));
                    width = d;
                }
                blocks.push(Block::TopK(TopKPoolLayer {
                    projection: store.push(DenseMatrix::glorot(d, 1, &mut rng)),
                    in_dim: d,
                    ratio: spec.topk_ratio,
                }));
            }
            for _ in 0..spec.filters_per_pool {
                blocks.push(filter(&mut store, &mut rng, width));
            }
        }
    }

    let mut head = DenseMatrix::glorot(d, spec.num_classes, &mut rng);
    if spec.variant == Variant::Concat {
        let extra = DenseMatrix::glorot(STRUCT_DIM, spec.num_classes, &mut side_rng);
        let mut data = head.into_vec();
        data.extend_from_slice(extra.as_slice());
        head = DenseMatrix::from_vec(d + STRUCT_DIM, spec.num_classes, data)?;
    }
    let head_weight = store.push(head);
    let head_bias = store.push(DenseMatrix::zeros(1, spec.num_classes));

    let adaptors = if spec.variant.is_customized() {
        let widths: Vec<usize> = blocks.iter().map(Block::in_dim).collect();
        Some(AdaptorBank::new(
            &mut store,
            &mut side_rng,
            STRUCT_DIM,
            spec.adaptor_hidden,
            &widths,
        )?)
    } else {
        None
    };

    Ok(ModelParams {
        store,
        blocks,
        head_weight,
        head_bias,
        adaptors,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct ForwardOutput {
    /// `1 × num_classes`.
    pub logits: Var,
    /// Summed mean row entropy of the DiffPool assignments, when any.
    pub assignment_entropy: Option<Var>,
}

enum Level {
    Sparse {
        raw: Arc<SparseMatrix>,
        norm: Arc<SparseMatrix>,
    },
    Dense {
        raw: Var,
        norm: Var,
    },
}

impl Level {
    fn raw(&self) -> Adjacency {
        match self {
            Level::Sparse { raw, .. } => Adjacency::Sparse(Arc::clone(raw)),
            Level::Dense { raw, .. } => Adjacency::Dense(*raw),
        }
    }

    fn norm(&self) -> Adjacency {
        match self {
            Level::Sparse { norm, .. } => Adjacency::Sparse(Arc::clone(norm)),
            Level::Dense { norm, .. } => Adjacency::Dense(*norm),
        }
    }
}

fn check_compatible(params: &ModelParams, spec: &ModelSpec) -> Result<()> {
    if params.adaptors.is_some() != spec.variant.is_customized() {
        return Err(Error::invalid(format!(
            "parameters do not match the {} variant",
            spec.variant.name()
        )));
    }
    Ok(())
}

/// Records the forward pass of one graph on `tape`, with parameters already
/// bound to `bound`.
pub fn forward_on_tape(
    params: &ModelParams,
    spec: &ModelSpec,
    tape: &mut Tape,
    bound: &Bound,
    graph: &PreparedGraph<'_>,
) -> Result<ForwardOutput> {
    check_compatible(params, spec)?;
    let g = graph.graph;
    if g.feature_dim() != spec.input_dim {
        return Err(Error::shape(
            "forward",
            format!("graph {} has feature dim {}, model expects {}", g.id, g.feature_dim(), spec.input_dim),
        ));
    }
    if graph.structure.len() != STRUCT_DIM {
        return Err(Error::shape(
            "forward",
            format!("structure vector has length {}, expected {STRUCT_DIM}", graph.structure.len()),
        ));
    }
    let s = tape.constant(DenseMatrix::row_vector(&graph.structure));

    let films: Vec<Option<Film>> = match (&params.adaptors, spec.variant.film_mode()) {
        (Some(bank), Some(mode)) => bank
            .forward_all(tape, bound, s)?
            .into_iter()
            .map(|phi| Ok(Some(Film { vars: split_film_var(tape, phi)?, mode })))
            .collect::<Result<_>>()?,
        _ => vec![None; params.blocks.len()],
    };

    let mut level = Level::Sparse {
        raw: Arc::clone(&graph.raw_adjacency),
        norm: Arc::clone(&graph.norm_adjacency),
    };
    let mut x = tape.constant(g.features().clone());
    let mut stage_input = x;
    let mut entropy: Option<Var> = None;

    for (block, film) in params.blocks.iter().zip(films) {
        let w = bound.var(block.weight());
        match block {
            Block::Filter(layer) => {
                x = gcn_filter(tape, &level.norm(), x, w, film, layer.activation)?;
            }
            Block::Assign(_) => {
                let out = diffpool(tape, &level.raw(), &level.norm(), stage_input, x, w, film)?;
                let h = tape.mean_row_entropy(out.assignment)?;
                entropy = Some(match entropy {
                    Some(e) => tape.add(e, h)?,
                    None => h,
                });
                let norm = tape.gcn_normalize(out.adjacency)?;
                level = Level::Dense {
                    raw: out.adjacency,
                    norm,
                };
                x = out.features;
                stage_input = x;
            }
            Block::TopK(layer) => {
                let Level::Sparse { raw, .. } = &level else {
                    return Err(Error::invalid("top-k pooling needs a sparse adjacency"));
                };
                let out = topk_pool(tape, raw, x, w, layer.ratio, film)?;
                let norm = Arc::new(normalize_sparse(&out.adjacency));
                level = Level::Sparse {
                    raw: Arc::new(out.adjacency),
                    norm,
                };
                x = out.features;
                stage_input = x;
            }
        }
    }

    let mut embedding = max_pool(tape, x)?;
    if spec.variant == Variant::Concat {
        embedding = tape.concat_cols(embedding, s)?;
    }
    let head_w = bound.var(params.head_weight);
    if tape.value(head_w).rows() != spec.embedding_dim() {
        return Err(Error::shape(
            "forward",
            format!(
                "head expects {} inputs, embedding has {}",
                tape.value(head_w).rows(),
                spec.embedding_dim()
            ),
        ));
    }
    let logits = tape.matmul(embedding, head_w)?;
    let logits = tape.add_row(logits, bound.var(params.head_bias))?;
    Ok(ForwardOutput {
        logits,
        assignment_entropy: entropy,
    })
}

/// Logits of one graph, `1 × num_classes`. `s` is the standardized
/// structural feature vector.
pub fn forward(params: &ModelParams, spec: &ModelSpec, g: &Graph, s: &[f64; STRUCT_DIM]) -> Result<DenseMatrix> {
    let prepared = PreparedGraph::new(g, s.to_vec());
    forward_prepared(params, spec, &prepared)
}

pub fn forward_prepared(params: &ModelParams, spec: &ModelSpec, g: &PreparedGraph<'_>) -> Result<DenseMatrix> {
    let mut tape = Tape::new();
    let bound = bind_constants(&params.store, &mut tape);
    let out = forward_on_tape(params, spec, &mut tape, &bound, g)?;
    Ok(tape.value(out.logits).clone())
}

fn bind_constants(store: &ParamStore, tape: &mut Tape) -> Bound {
    Bound::from_vars(store.tensors().iter().map(|t| tape.constant(t.clone())).collect())
}

pub fn predict(params: &ModelParams, spec: &ModelSpec, g: &Graph, s: &[f64; STRUCT_DIM]) -> Result<usize> {
    Ok(argmax(forward(params, spec, g, s)?.as_slice()))
}

/// Index of the largest value, lowest index on exact ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// First-block weights adapted per graph, flattened row-major, alongside the
/// unadapted reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptedParamsExport {
    pub base: Vec<f64>,
    pub rows: Vec<(usize, Vec<f64>)>,
}

impl AdaptedParamsExport {
    pub fn width(&self) -> usize {
        self.base.len()
    }

    /// CSV with header `id,w0,w1,…`; the reference row has id `base`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["id".to_string()];
        header.extend((0..self.width()).map(|i| format!("w{i}")));
        w.write_record(&header)?;
        let record = |id: String, values: &[f64]| {
            std::iter::once(id).chain(values.iter().map(|v| v.to_string())).collect::<Vec<_>>()
        };
        w.write_record(record("base".into(), &self.base))?;
        for (id, values) in &self.rows {
            w.write_record(record(id.to_string(), values))?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn export_adapted_params(
    params: &ModelParams,
    spec: &ModelSpec,
    graphs: &[&Graph],
    structure: &[[f64; STRUCT_DIM]],
) -> Result<AdaptedParamsExport> {
    check_compatible(params, spec)?;
    let (Some(bank), Some(mode)) = (&params.adaptors, spec.variant.film_mode()) else {
        return Err(Error::invalid(format!(
            "adapted parameters need a customized model, got {}",
            spec.variant.name()
        )));
    };
    if graphs.len() != structure.len() {
        return Err(Error::invalid(format!(
            "{} graphs but {} structure vectors",
            graphs.len(),
            structure.len()
        )));
    }
    let first = params
        .blocks
        .first()
        .ok_or_else(|| Error::invalid("model has no blocks"))?;
    let w = params.store.get(first.weight());
    let rows = graphs
        .iter()
        .zip(structure)
        .map(|(g, s)| {
            let fp: FilmParams = bank
                .film_params(&params.store, s)?
                .into_iter()
                .next()
                .expect("bank has one net per block");
            Ok((g.id, film_adapt(w, &fp, mode)?.into_vec()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AdaptedParamsExport {
        base: w.as_slice().to_vec(),
        rows,
    })
}

/// Checkpoint: everything needed to rerun inference on new graphs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub format_version: u32,
    pub spec: ModelSpec,
    pub params: ModelParams,
    pub standardizer: Standardizer,
}

impl TrainedModel {
    pub fn new(spec: ModelSpec, params: ModelParams, standardizer: Standardizer) -> Self {
        Self {
            format_version: CHECKPOINT_VERSION,
            spec,
            params,
            standardizer,
        }
    }

    pub fn predict(&self, g: &Graph) -> Result<usize> {
        predict(&self.params, &self.spec, g, &self.standardizer.features(g).standardized)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.is_file() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let model: Self = serde_json::from_slice(&fs::read(path)?)?;
        if model.format_version != CHECKPOINT_VERSION {
            return Err(Error::invalid(format!(
                "checkpoint format {} is not supported (expected {CHECKPOINT_VERSION})",
                model.format_version
            )));
        }
        model.spec.validate()?;
        Ok(model)
    }
}
