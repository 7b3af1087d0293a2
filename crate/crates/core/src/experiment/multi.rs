//! Multi baseline: one base model per k-means cluster of structural features,
//! dispatched by nearest centroid.

use serde::{Deserialize, Serialize};

use super::kmeans::{kmeans, nearest};
use super::train::{train, TrainConfig, TrainHistory};
use crate::error::{Error, Result};
use crate::graph::{Graph, Standardizer, STRUCT_DIM};
use crate::model::TrainedModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModelBank {
    /// Centroids over standardized structural features.
    pub centroids: Vec<Vec<f64>>,
    pub models: Vec<TrainedModel>,
    pub standardizer: Standardizer,
}

impl ClusterModelBank {
    pub fn cluster_of(&self, s: &[f64; STRUCT_DIM]) -> usize {
        nearest(&self.centroids, s)
    }

    pub fn predict(&self, g: &Graph) -> Result<usize> {
        multi_predict(self, g, &self.standardizer.features(g).standardized)
    }
}

pub struct MultiOutcome {
    pub bank: ClusterModelBank,
    pub histories: Vec<TrainHistory>,
    /// Training graph ids per cluster.
    pub members: Vec<Vec<usize>>,
}

/// Clusters `graphs` on standardized structure and trains one base model per
/// cluster with `config`.
pub fn multi_baseline(graphs: &[&Graph], k: usize, config: &TrainConfig) -> Result<MultiOutcome> {
    if config.spec.variant.is_customized() {
        return Err(Error::invalid("multi baseline members must be non-customized models"));
    }
    let standardizer = Standardizer::fit(graphs.iter().copied())?;
    let points: Vec<Vec<f64>> = graphs
        .iter()
        .map(|g| standardizer.features(g).standardized.to_vec())
        .collect();
    let clusters = kmeans(&points, k, config.seed)?;

    let mut members: Vec<Vec<&Graph>> = vec![Vec::new(); k];
    for (g, &c) in graphs.iter().zip(&clusters.assignments) {
        members[c].push(g);
    }
    let mut models = Vec::with_capacity(k);
    let mut histories = Vec::with_capacity(k);
    for group in &members {
        let out = train(group, config)?;
        models.push(out.model);
        histories.push(out.history);
    }
    Ok(MultiOutcome {
        bank: ClusterModelBank {
            centroids: clusters.centroids,
            models,
            standardizer,
        },
        histories,
        members: members
            .iter()
            .map(|group| group.iter().map(|g| g.id).collect())
            .collect(),
    })
}

/// Prediction by the model of the cluster nearest to `s`.
pub fn multi_predict(bank: &ClusterModelBank, g: &Graph, s: &[f64; STRUCT_DIM]) -> Result<usize> {
    bank.models[bank.cluster_of(s)].predict(g)
}
