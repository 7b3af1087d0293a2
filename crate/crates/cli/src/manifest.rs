//! TOML run manifests.

use std::path::{Path, PathBuf};

use customgnn::experiment::{SplitPlan, TrainConfig};
use customgnn::graph::{load_tu_dataset, synth_dataset, Dataset, SynthConfig};
use serde::{Deserialize, Serialize};

use crate::failure::{Failure, Outcome};

pub const DATA_ROOT_ENV: &str = "CUSTOMGNN_DATA_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    Synthetic {
        #[serde(default)]
        seed: u64,
        #[serde(flatten)]
        config: SynthConfig,
    },
    Tu {
        /// Directory holding the `NAME_*.txt` files. Relative paths resolve
        /// against the data root.
        path: PathBuf,
        name: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub dataset: DatasetSource,
    #[serde(default)]
    pub plan: SplitPlan,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    /// Directory that relative dataset paths resolve against; defaults to the
    /// manifest's own directory.
    #[serde(default)]
    pub data_root: Option<PathBuf>,
    #[serde(skip)]
    pub max_nodes_given: bool,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn default_repeats() -> usize {
    4
}

impl RunManifest {
    pub fn load(path: &Path) -> Outcome<Self> {
        if !path.is_file() {
            return Err(Failure::input(format!("manifest {} not found", path.display())));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
        let mut manifest = Self::parse(&text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
        manifest.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(manifest)
    }

    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        let raw: toml::Table = toml::from_str(text)?;
        let max_nodes_given = raw
            .get("train")
            .and_then(|t| t.get("spec"))
            .and_then(|s| s.get("max_nodes"))
            .is_some();
        let mut manifest: Self = toml::from_str(text)?;
        manifest.max_nodes_given = max_nodes_given;
        Ok(manifest)
    }

    pub fn validate(&self) -> Outcome<()> {
        if self.repeats == 0 {
            return Err(Failure::input("repeats must be at least 1"));
        }
        self.train.validate().map_err(Failure::from)
    }

    fn data_root(&self) -> PathBuf {
        if let Some(root) = std::env::var_os(DATA_ROOT_ENV) {
            return PathBuf::from(root);
        }
        match &self.data_root {
            Some(root) if root.is_absolute() => root.clone(),
            Some(root) => self.base_dir.join(root),
            None => self.base_dir.clone(),
        }
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.data_root().join(path)
        }
    }

    /// Loads the dataset and fits the model dimensions to it.
    pub fn load_dataset(&mut self) -> Outcome<Dataset> {
        let dataset = match &self.dataset {
            DatasetSource::Synthetic { seed, config } => synth_dataset(config, *seed)?,
            DatasetSource::Tu { path, name } => {
                let dir = self.resolve(path);
                if !dir.is_dir() {
                    return Err(Failure::input(format!("dataset directory {} does not exist", dir.display())));
                }
                load_tu_dataset(&dir, name)?
            }
        };
        let spec = &mut self.train.spec;
        spec.input_dim = dataset.feature_dim();
        spec.num_classes = dataset.num_classes;
        if !self.max_nodes_given {
            spec.max_nodes = dataset.graphs.iter().map(|g| g.num_nodes()).max().unwrap_or(1);
        }
        Ok(dataset)
    }

    /// Master seed into the training config.
    pub fn apply_seed(&mut self, seed: Option<u64>) {
        if let Some(s) = seed {
            self.seed = s;
        }
        self.train.seed = self.seed;
        self.plan.seed = self.seed;
    }
}
