use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Dataset;

pub const MIN_DATASET_SIZE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    #[default]
    #[serde(rename = "random_90_10")]
    Random9010,
    #[serde(rename = "size_ordered_80_20")]
    SizeOrdered8020,
    SizeBands,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitPlan {
    pub kind: SplitKind,
    /// Inclusive node-count ranges for the banded plan. A graph belongs to the
    /// first range containing its size.
    pub bands: Vec<[usize; 2]>,
    pub seed: u64,
}

impl SplitPlan {
    pub fn random(seed: u64) -> Self {
        Self {
            kind: SplitKind::Random9010,
            bands: Vec::new(),
            seed,
        }
    }

    pub fn size_ordered() -> Self {
        Self {
            kind: SplitKind::SizeOrdered8020,
            bands: Vec::new(),
            seed: 0,
        }
    }

    pub fn size_bands(bands: Vec<[usize; 2]>, seed: u64) -> Self {
        Self {
            kind: SplitKind::SizeBands,
            bands,
            seed,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

/// Graph ids on each side of a split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandSplit {
    pub band: [usize; 2],
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitResult {
    Single(Split),
    Banded(Vec<BandSplit>),
}

impl SplitResult {
    /// Banded plans collapse to the union of sub-trains against the union of
    /// sub-tests.
    pub fn merged(&self) -> Split {
        match self {
            SplitResult::Single(s) => s.clone(),
            SplitResult::Banded(bands) => {
                let mut train: Vec<usize> = bands.iter().flat_map(|b| b.split.train.iter().copied()).collect();
                let mut test: Vec<usize> = bands.iter().flat_map(|b| b.split.test.iter().copied()).collect();
                train.sort_unstable();
                test.sort_unstable();
                Split { train, test }
            }
        }
    }
}

/// Training share of `n` items, keeping both sides non-empty when `n >= 2`.
fn train_count(n: usize, fraction: f64) -> usize {
    let k = (n as f64 * fraction).round() as usize;
    if n >= 2 {
        k.clamp(1, n - 1)
    } else {
        n
    }
}

fn shuffled_split(mut ids: Vec<usize>, fraction: f64, rng: &mut ChaCha8Rng) -> Split {
    ids.shuffle(rng);
    let k = train_count(ids.len(), fraction);
    let test = ids.split_off(k);
    Split { train: ids, test }
}

pub fn split(dataset: &Dataset, plan: &SplitPlan) -> Result<SplitResult> {
    if dataset.len() < MIN_DATASET_SIZE {
        return Err(Error::invalid(format!(
            "splitting needs at least {MIN_DATASET_SIZE} graphs, dataset has {}",
            dataset.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let ids: Vec<usize> = (0..dataset.len()).collect();
    match plan.kind {
        SplitKind::Random9010 => Ok(SplitResult::Single(shuffled_split(ids, 0.9, &mut rng))),
        SplitKind::SizeOrdered8020 => {
            let mut order = ids;
            order.sort_by_key(|&i| dataset.graphs[i].num_nodes());
            let k = train_count(order.len(), 0.8);
            let test = order.split_off(k);
            Ok(SplitResult::Single(Split { train: order, test }))
        }
        SplitKind::SizeBands => {
            if plan.bands.is_empty() {
                return Err(Error::invalid("banded split needs at least one band"));
            }
            if let Some(b) = plan.bands.iter().find(|b| b[0] > b[1]) {
                return Err(Error::invalid(format!("band [{}, {}] is reversed", b[0], b[1])));
            }
            let mut members: Vec<Vec<usize>> = vec![Vec::new(); plan.bands.len()];
            for g in &dataset.graphs {
                let n = g.num_nodes();
                let band = plan
                    .bands
                    .iter()
                    .position(|b| (b[0]..=b[1]).contains(&n))
                    .ok_or_else(|| {
                        Error::invalid(format!("graph {} with {n} nodes falls outside every band", g.id))
                    })?;
                members[band].push(g.id);
            }
            plan.bands
                .iter()
                .zip(members)
                .map(|(&band, ids)| {
                    if ids.is_empty() {
                        return Err(Error::EmptyBand {
                            lo: band[0],
                            hi: band[1],
                        });
                    }
                    Ok(BandSplit {
                        band,
                        split: shuffled_split(ids, 0.8, &mut rng),
                    })
                })
                .collect::<Result<Vec<_>>>()
                .map(SplitResult::Banded)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::numeric::DenseMatrix;

    fn dataset(sizes: &[usize]) -> Dataset {
        let graphs = sizes
            .iter()
            .enumerate()
            .map(|(id, &n)| Graph::from_edges(id, n, &[], DenseMatrix::zeros(n, 1), id % 2).unwrap())
            .collect();
        Dataset::new("t", graphs, 2).unwrap()
    }

    fn assert_partition(ds: &Dataset, s: &Split) {
        let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..ds.len()).collect::<Vec<_>>());
    }

    #[test]
    fn random_plan_is_90_10() {
        let ds = dataset(&[3; 100]);
        let SplitResult::Single(s) = split(&ds, &SplitPlan::random(1)).unwrap() else {
            panic!()
        };
        assert_eq!((s.train.len(), s.test.len()), (90, 10));
        assert_partition(&ds, &s);
        assert_eq!(split(&ds, &SplitPlan::random(1)).unwrap(), SplitResult::Single(s));
    }

    #[test]
    fn ordered_plan_separates_sizes() {
        let sizes: Vec<usize> = (0..20).map(|i| 1 + (i * 7) % 11).collect();
        let ds = dataset(&sizes);
        let SplitResult::Single(s) = split(&ds, &SplitPlan::size_ordered()).unwrap() else {
            panic!()
        };
        assert_eq!(s.train.len(), 16);
        let max_train = s.train.iter().map(|&i| sizes[i]).max().unwrap();
        let min_test = s.test.iter().map(|&i| sizes[i]).min().unwrap();
        assert!(max_train <= min_test);
        assert_partition(&ds, &s);
    }

    #[test]
    fn bands_split_each_band() {
        let sizes: Vec<usize> = (0..30).map(|i| if i % 3 == 0 { 50 } else { 5 }).collect();
        let ds = dataset(&sizes);
        let plan = SplitPlan::size_bands(vec![[1, 10], [11, 100]], 4);
        let SplitResult::Banded(bands) = split(&ds, &plan).unwrap() else {
            panic!()
        };
        assert_eq!(bands.len(), 2);
        assert_eq!(bands[0].split.train.len() + bands[0].split.test.len(), 20);
        assert_eq!((bands[1].split.train.len(), bands[1].split.test.len()), (8, 2));
        assert_partition(&ds, &split(&ds, &plan).unwrap().merged());
    }

    #[test]
    fn empty_band_named() {
        let ds = dataset(&[5; 12]);
        let plan = SplitPlan::size_bands(vec![[1, 10], [200, 400]], 0);
        let err = split(&ds, &plan).unwrap_err();
        assert!(matches!(err, Error::EmptyBand { lo: 200, hi: 400 }));
        assert!(err.to_string().contains("200"));
    }

    #[test]
    fn tiny_dataset_rejected() {
        assert!(split(&dataset(&[2; 9]), &SplitPlan::random(0)).is_err());
    }
}
