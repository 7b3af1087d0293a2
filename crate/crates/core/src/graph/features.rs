use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};

/// Width of the structural feature vector: node count, edge count, density.
pub const STRUCT_DIM: usize = 3;

/// `(n, m, 2m / (n(n-1)))`, with density 0 for a single node.
pub fn structural_features(g: &Graph) -> [f64; STRUCT_DIM] {
    let n = g.num_nodes() as f64;
    let m = g.num_edges() as f64;
    let density = if g.num_nodes() > 1 {
        2.0 * m / (n * (n - 1.0))
    } else {
        0.0
    };
    [n, m, density]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructFeatures {
    pub raw: [f64; STRUCT_DIM],
    pub standardized: [f64; STRUCT_DIM],
}

/// Per-coordinate z-scoring fitted on training graphs. Node and edge counts
/// pass through `ln(1 + x)` first; a coordinate with zero spread maps to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: [f64; STRUCT_DIM],
    pub std: [f64; STRUCT_DIM],
}

fn transform(raw: &[f64; STRUCT_DIM]) -> [f64; STRUCT_DIM] {
    [raw[0].ln_1p(), raw[1].ln_1p(), raw[2]]
}

impl Standardizer {
    pub fn fit<'a>(train: impl IntoIterator<Item = &'a Graph>) -> Result<Self> {
        let rows: Vec<[f64; STRUCT_DIM]> = train.into_iter().map(|g| structural_features(g)).collect();
        Self::fit_raw(&rows)
    }

    pub fn fit_raw(raw: &[[f64; STRUCT_DIM]]) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::invalid("cannot fit a standardizer on zero graphs"));
        }
        let rows: Vec<_> = raw.iter().map(transform).collect();
        let count = rows.len() as f64;
        let mut mean = [0.0; STRUCT_DIM];
        for r in &rows {
            for k in 0..STRUCT_DIM {
                mean[k] += r[k];
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut std = [0.0; STRUCT_DIM];
        for r in &rows {
            for k in 0..STRUCT_DIM {
                std[k] += (r[k] - mean[k]).powi(2);
            }
        }
        std.iter_mut().for_each(|s| *s = (*s / count).sqrt());
        Ok(Self { mean, std })
    }

    pub fn apply(&self, raw: &[f64; STRUCT_DIM]) -> [f64; STRUCT_DIM] {
        let t = transform(raw);
        let mut out = [0.0; STRUCT_DIM];
        for k in 0..STRUCT_DIM {
            out[k] = if self.std[k] > 0.0 {
                (t[k] - self.mean[k]) / self.std[k]
            } else {
                0.0
            };
        }
        out
    }

    pub fn features(&self, g: &Graph) -> StructFeatures {
        let raw = structural_features(g);
        StructFeatures {
            raw,
            standardized: self.apply(&raw),
        }
    }
}
