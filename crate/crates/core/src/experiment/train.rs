use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, PreparedGraph, Standardizer};
use crate::model::{argmax, build_model, forward_on_tape, ModelParams, ModelSpec, TrainedModel};
use crate::numeric::{adam_step, AdamConfig, AdamState, DenseMatrix, Tape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Graphs per optimizer step; gradients are averaged over the batch.
    pub batch_size: usize,
    pub spec: ModelSpec,
    /// Hold out a validation share and return the best-validation
    /// parameters; otherwise train for all epochs and return the final ones.
    pub early_stopping: bool,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub validation_fraction: f64,
    /// Adds the mean DiffPool assignment entropy to the loss.
    pub entropy_regularization: bool,
    pub entropy_weight: f64,
    /// Train one base model per k-means cluster of structural features.
    pub multi_clusters: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            learning_rate: 1e-3,
            seed: 0,
            batch_size: 16,
            spec: ModelSpec::default(),
            early_stopping: true,
            patience: 30,
            validation_fraction: 0.1,
            entropy_regularization: false,
            entropy_weight: 0.1,
            multi_clusters: None,
        }
    }
}

/// Early stopping is only used when the training set has at least this many
/// graphs.
pub const MIN_VALIDATION_POOL: usize = 10;

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::invalid(format!(
                "validation fraction {} outside [0, 1)",
                self.validation_fraction
            )));
        }
        if self.multi_clusters == Some(0) {
            return Err(Error::invalid("multi baseline needs at least one cluster"));
        }
        self.spec.validate()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mean training loss per epoch.
    pub loss: Vec<f64>,
    /// Validation accuracy per epoch, empty without early stopping.
    pub validation_accuracy: Vec<f64>,
    /// Epoch (0-based) whose parameters were returned.
    pub selected_epoch: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TrainedModel,
    pub history: TrainHistory,
    /// Ids of every graph training read.
    pub accessed: BTreeSet<usize>,
}

fn graph_loss(
    params: &ModelParams,
    config: &TrainConfig,
    g: &PreparedGraph<'_>,
) -> Result<(f64, Vec<DenseMatrix>)> {
    let mut tape = Tape::new();
    let bound = params.store.bind(&mut tape);
    let out = forward_on_tape(params, &config.spec, &mut tape, &bound, g)?;
    let mut loss = tape.cross_entropy(out.logits, g.graph.label)?;
    if config.entropy_regularization {
        if let Some(h) = out.assignment_entropy {
            let h = tape.scale(h, config.entropy_weight)?;
            loss = tape.add(loss, h)?;
        }
    }
    let grads = tape.backward(loss)?;
    Ok((tape.scalar(loss), bound.gradients(&grads)))
}

fn evaluate_prepared(params: &ModelParams, spec: &ModelSpec, graphs: &[PreparedGraph<'_>]) -> Result<(f64, f64)> {
    let mut correct = 0usize;
    let mut loss = 0.0;
    for g in graphs {
        let logits = crate::model::forward_prepared(params, spec, g)?;
        let row = logits.as_slice();
        if argmax(row) == g.graph.label {
            correct += 1;
        }
        loss += crate::numeric::log_sum_exp(row) - row[g.graph.label];
    }
    let n = graphs.len() as f64;
    Ok((correct as f64 / n, loss / n))
}

fn diverged(epoch: usize, err: Error) -> Error {
    match err {
        Error::NonFinite(_) => Error::Divergence { epoch, loss: f64::NAN },
        other => other,
    }
}

/// Trains a fresh model on `graphs` with Adam on the mean cross-entropy.
pub fn train(graphs: &[&Graph], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if graphs.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let accessed: BTreeSet<usize> = graphs.iter().map(|g| g.id).collect();
    let standardizer = Standardizer::fit(graphs.iter().copied())?;
    let prepared: Vec<PreparedGraph<'_>> = graphs
        .iter()
        .map(|g| PreparedGraph::new(g, standardizer.features(g).standardized.to_vec()))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(2);
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let early_stop = config.early_stopping && prepared.len() >= MIN_VALIDATION_POOL;
    let validation: Vec<PreparedGraph<'_>> = if early_stop {
        order.shuffle(&mut rng);
        let k = ((prepared.len() as f64 * config.validation_fraction).round() as usize).max(1);
        let held: Vec<usize> = order.split_off(order.len() - k);
        order.sort_unstable();
        held.into_iter().map(|i| prepared[i].clone()).collect()
    } else {
        Vec::new()
    };

    let mut params = build_model(&config.spec, config.seed)?;
    let adam = AdamConfig {
        learning_rate: config.learning_rate,
        ..AdamConfig::default()
    };
    let mut state = AdamState::new(params.store.tensors(), adam);
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, f64, usize, ModelParams)> = None;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut acc: Option<Vec<DenseMatrix>> = None;
            for &i in batch {
                let (loss, grads) = graph_loss(&params, config, &prepared[i]).map_err(|e| diverged(epoch, e))?;
                if !loss.is_finite() {
                    return Err(Error::Divergence { epoch, loss });
                }
                epoch_loss += loss;
                match &mut acc {
                    None => acc = Some(grads),
                    Some(sum) => sum.iter_mut().zip(&grads).for_each(|(s, g)| s.add_assign(g)),
                }
            }
            let mut grads = acc.expect("batches are non-empty");
            let scale = 1.0 / batch.len() as f64;
            grads.iter_mut().for_each(|g| g.scale_assign(scale));
            adam_step(&mut params.store.tensors_mut(), &grads, &mut state)?;
        }
        let mean_loss = epoch_loss / order.len() as f64;
        if !mean_loss.is_finite() {
            return Err(Error::Divergence { epoch, loss: mean_loss });
        }
        history.loss.push(mean_loss);

        if early_stop {
            let (acc, loss) = evaluate_prepared(&params, &config.spec, &validation)?;
            history.validation_accuracy.push(acc);
            let improved = match &best {
                None => true,
                Some((best_acc, best_loss, _, _)) => acc > *best_acc || (acc == *best_acc && loss < *best_loss),
            };
            if improved {
                best = Some((acc, loss, epoch, params.clone()));
            }
            let best_epoch = best.as_ref().map_or(epoch, |b| b.2);
            if epoch - best_epoch >= config.patience {
                break;
            }
        }
    }

    let params = match best {
        Some((_, _, epoch, p)) => {
            history.selected_epoch = epoch;
            p
        }
        None => {
            history.selected_epoch = history.loss.len() - 1;
            params
        }
    };
    Ok(TrainOutcome {
        model: TrainedModel::new(config.spec.clone(), params, standardizer),
        history,
        accessed,
    })
}

/// Accuracy as an exact count alongside the float.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub correct: usize,
    pub total: usize,
    pub value: f64,
}

impl Accuracy {
    pub fn new(correct: usize, total: usize) -> Self {
        Self {
            correct,
            total,
            value: correct as f64 / total as f64,
        }
    }
}

pub fn evaluate(model: &TrainedModel, test: &[&Graph]) -> Result<Accuracy> {
    evaluate_with(test, |g| model.predict(g))
}

/// Accuracy of an arbitrary predictor.
pub fn evaluate_with(test: &[&Graph], mut predict: impl FnMut(&Graph) -> Result<usize>) -> Result<Accuracy> {
    if test.is_empty() {
        return Err(Error::invalid("test set is empty"));
    }
    let mut correct = 0;
    for g in test {
        if predict(g)? == g.label {
            correct += 1;
        }
    }
    Ok(Accuracy::new(correct, test.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{synth_dataset, BandRule, SizeBand, SynthConfig};

    fn one_band(graphs: usize) -> crate::graph::Dataset {
        let cfg = SynthConfig {
            bands: vec![SizeBand {
                min_nodes: 6,
                max_nodes: 10,
                graphs,
                rule: BandRule::Majority,
            }],
            ..SynthConfig::default()
        };
        synth_dataset(&cfg, 2).unwrap()
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            epochs: 5,
            learning_rate: 0.01,
            spec: ModelSpec {
                hidden_dim: 8,
                ..ModelSpec::default()
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_rejected() {
        let ds = one_band(4);
        let cfg = TrainConfig {
            epochs: 0,
            ..quick()
        };
        assert!(train(&ds.subset(&[0, 1]), &cfg).is_err());
        let cfg = TrainConfig {
            batch_size: 0,
            ..quick()
        };
        assert!(train(&ds.subset(&[0, 1]), &cfg).is_err());
    }

    #[test]
    fn deterministic_per_seed() {
        let ds = one_band(20);
        let ids: Vec<usize> = (0..20).collect();
        let a = train(&ds.subset(&ids), &quick()).unwrap();
        let b = train(&ds.subset(&ids), &quick()).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.history, b.history);
        assert_eq!(a.accessed, ids.iter().copied().collect());
    }

    #[test]
    fn loss_decreases_on_easy_data() {
        let ds = one_band(32);
        let ids: Vec<usize> = (0..32).collect();
        let cfg = TrainConfig {
            epochs: 30,
            early_stopping: false,
            ..quick()
        };
        let out = train(&ds.subset(&ids), &cfg).unwrap();
        assert_eq!(out.history.loss.len(), 30);
        assert!(out.history.loss.last().unwrap() < &out.history.loss[0]);
    }

    #[test]
    fn evaluate_toy_cases() {
        let ds = one_band(10);
        let all = ds.subset(&(0..10).collect::<Vec<_>>());
        assert_eq!(evaluate_with(&all, |g| Ok(g.label)).unwrap().value, 1.0);
        let constant = evaluate_with(&all, |_| Ok(0)).unwrap();
        assert_eq!((constant.correct, constant.total), (5, 10));
        assert_eq!(constant.value, 0.5);
        assert!(evaluate_with(&[], |_| Ok(0)).is_err());
    }
}
