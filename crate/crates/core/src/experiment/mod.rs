//! Training, split protocols, repeated experiments and their reports.

pub mod flops;
pub mod kmeans;
pub mod multi;
pub mod split;
pub mod train;

use std::io::{Read, Write};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use flops::{adaptation_flops, filter_flops, flop_report, FlopReport};
pub use kmeans::{kmeans, nearest, KMeans};
pub use multi::{multi_baseline, multi_predict, ClusterModelBank, MultiOutcome};
pub use split::{split, BandSplit, Split, SplitKind, SplitPlan, SplitResult};
pub use train::{evaluate, evaluate_with, train, Accuracy, TrainConfig, TrainHistory, TrainOutcome};

use crate::error::{Error, Result};
use crate::graph::{Dataset, Graph};
use crate::model::TrainedModel;

/// `(split seed, init seed)` per run, derived from one master seed.
pub fn derive_run_seeds(master: u64, repeats: usize) -> Vec<(u64, u64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(3);
    (0..repeats).map(|_| (rng.gen(), rng.gen())).collect()
}

/// What a run produced: a single model or a per-cluster bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunModel {
    Single(TrainedModel),
    Multi(ClusterModelBank),
}

impl RunModel {
    pub fn predict(&self, g: &Graph) -> Result<usize> {
        match self {
            RunModel::Single(m) => m.predict(g),
            RunModel::Multi(b) => b.predict(g),
        }
    }
}

/// Flat per-run numbers, one CSV row each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub run: usize,
    pub split_seed: u64,
    pub init_seed: u64,
    pub train_size: usize,
    pub test_size: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub majority_accuracy: f64,
    pub epochs_run: usize,
    pub selected_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    #[serde(flatten)]
    pub row: RunRow,
    /// Per-epoch training loss of each trained model (one per cluster for
    /// the multi baseline).
    pub loss_curves: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub dataset: String,
    pub label: String,
    pub plan: SplitPlan,
    pub config: TrainConfig,
    pub runs: Vec<RunRecord>,
    pub mean: f64,
    /// Population standard deviation over runs.
    pub std: f64,
    pub majority_mean: f64,
    pub flops: Option<FlopReport>,
    /// Wall-clock seconds per run. Kept out of the serialized report so that
    /// reruns are byte-identical.
    #[serde(skip)]
    pub wall_seconds: Vec<f64>,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl ExperimentReport {
    pub fn accuracies(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.row.accuracy).collect()
    }

    pub fn rows(&self) -> Vec<RunRow> {
        self.runs.iter().map(|r| r.row.clone()).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_rows(&self.rows(), out)
    }
}

pub fn write_rows<W: Write>(rows: &[RunRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<R: Read>(input: R) -> Result<Vec<RunRow>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

/// Constant prediction of the most frequent training class, lowest class on
/// ties, scored on `test`.
pub fn majority_baseline(dataset: &Dataset, train_ids: &[usize], test_ids: &[usize]) -> Accuracy {
    let mut counts = vec![0usize; dataset.num_classes];
    for &i in train_ids {
        counts[dataset.graphs[i].label] += 1;
    }
    let class = crate::model::argmax(&counts.iter().map(|&c| c as f64).collect::<Vec<_>>());
    let correct = test_ids.iter().filter(|&&i| dataset.graphs[i].label == class).count();
    Accuracy::new(correct, test_ids.len())
}

/// Trains on `train_ids` (or clusters them for the multi baseline) without
/// reading anything else.
pub fn fit(dataset: &Dataset, train_ids: &[usize], config: &TrainConfig) -> Result<(RunModel, Vec<TrainHistory>)> {
    let graphs = dataset.subset(train_ids);
    match config.multi_clusters {
        Some(k) => {
            let out = multi_baseline(&graphs, k, config)?;
            Ok((RunModel::Multi(out.bank), out.histories))
        }
        None => {
            let out = train(&graphs, config)?;
            Ok((RunModel::Single(out.model), vec![out.history]))
        }
    }
}

pub struct RepeatedOutcome {
    pub report: ExperimentReport,
    pub models: Vec<RunModel>,
}

impl RepeatedOutcome {
    /// Model of the most accurate run, first on ties.
    pub fn best_model(&self) -> &RunModel {
        let accs = self.report.accuracies();
        &self.models[crate::model::argmax(&accs)]
    }
}

/// Runs `repeats` independent train/test cycles. Each run re-draws the split
/// and the initialization from seeds derived from `config.seed`.
pub fn run_repeated(
    dataset: &Dataset,
    plan: &SplitPlan,
    config: &TrainConfig,
    repeats: usize,
    label: &str,
) -> Result<RepeatedOutcome> {
    if repeats == 0 {
        return Err(Error::invalid("repeats must be at least 1"));
    }
    config.validate()?;
    let seeds = derive_run_seeds(config.seed, repeats);
    let results: Vec<(RunRecord, RunModel, f64)> = seeds
        .par_iter()
        .enumerate()
        .map(|(run, &(split_seed, init_seed))| {
            let started = Instant::now();
            let parts = split(dataset, &plan.with_seed(split_seed))?.merged();
            let run_config = TrainConfig {
                seed: init_seed,
                ..config.clone()
            };
            let (model, histories) = fit(dataset, &parts.train, &run_config)?;
            let test = dataset.subset(&parts.test);
            let acc = evaluate_with(&test, |g| model.predict(g))?;
            let majority = majority_baseline(dataset, &parts.train, &parts.test);
            let record = RunRecord {
                row: RunRow {
                    run,
                    split_seed,
                    init_seed,
                    train_size: parts.train.len(),
                    test_size: parts.test.len(),
                    correct: acc.correct,
                    accuracy: acc.value,
                    majority_accuracy: majority.value,
                    epochs_run: histories.iter().map(|h| h.loss.len()).max().unwrap_or(0),
                    selected_epoch: histories.first().map_or(0, |h| h.selected_epoch),
                },
                loss_curves: histories.into_iter().map(|h| h.loss).collect(),
            };
            Ok((record, model, started.elapsed().as_secs_f64()))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut runs = Vec::with_capacity(repeats);
    let mut models = Vec::with_capacity(repeats);
    let mut wall_seconds = Vec::with_capacity(repeats);
    for (record, model, secs) in results {
        runs.push(record);
        models.push(model);
        wall_seconds.push(secs);
    }
    let (mean, std) = mean_std(&runs.iter().map(|r| r.row.accuracy).collect::<Vec<_>>());
    let (majority_mean, _) = mean_std(&runs.iter().map(|r| r.row.majority_accuracy).collect::<Vec<_>>());
    let flops = if config.spec.variant.is_customized() {
        let n = dataset.graphs.iter().map(Graph::num_nodes).sum::<usize>() as f64 / dataset.len() as f64;
        let m = dataset.graphs.iter().map(Graph::num_edges).sum::<usize>() as f64 / dataset.len() as f64;
        Some(flop_report(&config.spec, n.round().max(1.0) as usize, m.round() as usize)?)
    } else {
        None
    };
    Ok(RepeatedOutcome {
        report: ExperimentReport {
            dataset: dataset.name.clone(),
            label: label.to_string(),
            plan: plan.clone(),
            config: config.clone(),
            runs,
            mean,
            std,
            majority_mean,
            flops,
            wall_seconds,
        },
        models,
    })
}

/// Cross-band accuracy: rows are training sets (each band, then all bands
/// combined), columns are the matching test sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandMatrix {
    pub labels: Vec<String>,
    /// Mean accuracy over repeats, `accuracy[train][test]`.
    pub accuracy: Vec<Vec<f64>>,
    pub repeats: usize,
}

impl BandMatrix {
    /// Whether each single-band row scores best on its own band's test set.
    /// The combined row is excluded: its test set pools the band test sets,
    /// so its accuracy there is an average of the other entries.
    pub fn band_rows_dominant(&self) -> bool {
        let bands = self.labels.len() - 1;
        (0..bands).all(|i| {
            (0..self.labels.len())
                .filter(|&j| j != i)
                .all(|j| self.accuracy[i][i] > self.accuracy[i][j])
        })
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["train\\test".to_string()];
        header.extend(self.labels.iter().cloned());
        w.write_record(&header)?;
        for (label, row) in self.labels.iter().zip(&self.accuracy) {
            let mut record = vec![label.clone()];
            record.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn band_matrix(dataset: &Dataset, plan: &SplitPlan, config: &TrainConfig, repeats: usize) -> Result<BandMatrix> {
    if plan.kind != SplitKind::SizeBands {
        return Err(Error::invalid("the band matrix needs a size_bands plan"));
    }
    if repeats == 0 {
        return Err(Error::invalid("repeats must be at least 1"));
    }
    config.validate()?;
    let mut labels: Vec<String> = plan.bands.iter().map(|b| format!("{}-{}", b[0], b[1])).collect();
    labels.push("combined".into());
    let size = labels.len();

    let per_repeat: Vec<Vec<Vec<f64>>> = derive_run_seeds(config.seed, repeats)
        .par_iter()
        .map(|&(split_seed, init_seed)| {
            let SplitResult::Banded(bands) = split(dataset, &plan.with_seed(split_seed))? else {
                unreachable!("size_bands plans split into bands");
            };
            let merged = SplitResult::Banded(bands.clone()).merged();
            let mut trains: Vec<&[usize]> = bands.iter().map(|b| b.split.train.as_slice()).collect();
            trains.push(&merged.train);
            let mut tests: Vec<&[usize]> = bands.iter().map(|b| b.split.test.as_slice()).collect();
            tests.push(&merged.test);
            let run_config = TrainConfig {
                seed: init_seed,
                ..config.clone()
            };
            trains
                .iter()
                .map(|train_ids| {
                    let (model, _) = fit(dataset, train_ids, &run_config)?;
                    tests
                        .iter()
                        .map(|test_ids| Ok(evaluate_with(&dataset.subset(test_ids), |g| model.predict(g))?.value))
                        .collect::<Result<Vec<f64>>>()
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut accuracy = vec![vec![0.0; size]; size];
    for m in &per_repeat {
        for (i, row) in m.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                accuracy[i][j] += v / repeats as f64;
            }
        }
    }
    Ok(BandMatrix {
        labels,
        accuracy,
        repeats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_of_one_value() {
        assert_eq!(mean_std(&[0.7]), (0.7, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
    }

    #[test]
    fn run_seeds_distinct_and_reproducible() {
        let a = derive_run_seeds(7, 4);
        assert_eq!(a, derive_run_seeds(7, 4));
        let mut all: Vec<u64> = a.iter().flat_map(|&(x, y)| [x, y]).collect();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 8);
    }

    #[test]
    fn rows_round_trip_csv() {
        let rows = vec![RunRow {
            run: 0,
            split_seed: u64::MAX,
            init_seed: 3,
            train_size: 90,
            test_size: 10,
            correct: 7,
            accuracy: 0.7,
            majority_accuracy: 0.1 + 0.2,
            epochs_run: 12,
            selected_epoch: 4,
        }];
        let mut buf = Vec::new();
        write_rows(&rows, &mut buf).unwrap();
        assert_eq!(read_rows(buf.as_slice()).unwrap(), rows);
    }
}
