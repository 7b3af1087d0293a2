//! Reader for the TU graph-classification text layout:
//!
//! ```text
//! NAME_A.txt                "i, j" per line, 1-indexed global node ids
//! NAME_graph_indicator.txt  graph id of node i on line i
//! NAME_graph_labels.txt     class of graph g on line g
//! NAME_node_labels.txt      optional, integer label of node i on line i
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::{Dataset, Graph};
use crate::error::{Error, Result};
use crate::numeric::DenseMatrix;

struct Lines {
    path: PathBuf,
    body: String,
}

impl Lines {
    fn read(path: PathBuf) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingFile(path));
        }
        let body = fs::read_to_string(&path)?;
        Ok(Self { path, body })
    }

    /// Non-blank lines with their 1-based line numbers.
    fn iter(&self) -> impl Iterator<Item = (usize, &str)> {
        self.body
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty())
    }

    fn err(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::Parse {
            file: self.path.clone(),
            line,
            msg: msg.into(),
        }
    }

    fn integers(&self) -> Result<Vec<(usize, i64)>> {
        self.iter()
            .map(|(no, l)| {
                l.parse::<i64>()
                    .map(|v| (no, v))
                    .map_err(|e| self.err(no, format!("expected an integer, got {l:?}: {e}")))
            })
            .collect()
    }
}

pub fn load_tu_dataset(directory: impl AsRef<Path>, name: &str) -> Result<Dataset> {
    let dir = directory.as_ref();
    let file = |suffix: &str| dir.join(format!("{name}_{suffix}.txt"));

    let edges_file = Lines::read(file("A"))?;
    let indicator_file = Lines::read(file("graph_indicator"))?;
    let labels_file = Lines::read(file("graph_labels"))?;
    let node_labels_path = file("node_labels");
    let node_labels_file = if node_labels_path.is_file() {
        Some(Lines::read(node_labels_path)?)
    } else {
        None
    };

    // Graph membership per global node (0-based) and local index inside it.
    let indicator = indicator_file.integers()?;
    let num_nodes = indicator.len();
    let mut graph_of = Vec::with_capacity(num_nodes);
    let mut local_of = Vec::with_capacity(num_nodes);
    let mut sizes: Vec<usize> = Vec::new();
    for &(no, gid) in &indicator {
        if gid < 1 {
            return Err(indicator_file.err(no, format!("graph id {gid} must be >= 1")));
        }
        let g = (gid - 1) as usize;
        if g >= sizes.len() {
            sizes.resize(g + 1, 0);
        }
        graph_of.push(g);
        local_of.push(sizes[g]);
        sizes[g] += 1;
    }
    let num_graphs = sizes.len();
    if let Some(empty) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::invalid(format!(
            "{}: graph {} has no nodes",
            indicator_file.path.display(),
            empty + 1
        )));
    }

    let mut edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); num_graphs];
    for (no, line) in edges_file.iter() {
        let mut parts = line.split(',').map(str::trim);
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(edges_file.err(no, format!("expected \"i, j\", got {line:?}")));
        };
        let parse = |s: &str| -> Result<usize> {
            let v: usize = s
                .parse()
                .map_err(|e| edges_file.err(no, format!("bad node index {s:?}: {e}")))?;
            if v == 0 || v > num_nodes {
                return Err(edges_file.err(
                    no,
                    format!("dangling node index {v} (dataset has {num_nodes} nodes)"),
                ));
            }
            Ok(v - 1)
        };
        let (a, b) = (parse(a)?, parse(b)?);
        if graph_of[a] != graph_of[b] {
            return Err(edges_file.err(
                no,
                format!("edge joins graphs {} and {}", graph_of[a] + 1, graph_of[b] + 1),
            ));
        }
        edges[graph_of[a]].push((local_of[a], local_of[b]));
    }

    let raw_labels = labels_file.integers()?;
    if raw_labels.len() != num_graphs {
        return Err(Error::invalid(format!(
            "{}: {} labels for {num_graphs} graphs",
            labels_file.path.display(),
            raw_labels.len()
        )));
    }
    let mut class_of: HashMap<i64, usize> = HashMap::new();
    let labels: Vec<usize> = raw_labels
        .iter()
        .map(|&(_, v)| {
            let next = class_of.len();
            *class_of.entry(v).or_insert(next)
        })
        .collect();
    let num_classes = class_of.len();

    // Node features: one-hot node labels when present, otherwise degree
    // scaled by the largest degree in the dataset.
    let mut features: Vec<DenseMatrix>;
    if let Some(nl) = &node_labels_file {
        let values = nl.integers()?;
        if values.len() != num_nodes {
            return Err(Error::invalid(format!(
                "{}: {} node labels for {num_nodes} nodes",
                nl.path.display(),
                values.len()
            )));
        }
        let mut alphabet: Vec<i64> = values.iter().map(|&(_, v)| v).collect();
        alphabet.sort_unstable();
        alphabet.dedup();
        let column: HashMap<i64, usize> = alphabet.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        features = sizes.iter().map(|&n| DenseMatrix::zeros(n, alphabet.len())).collect();
        for (node, &(_, v)) in values.iter().enumerate() {
            features[graph_of[node]].set(local_of[node], column[&v], 1.0);
        }
    } else {
        let graphs_deg: Vec<Vec<usize>> = sizes
            .iter()
            .zip(&edges)
            .map(|(&n, e)| {
                let tmp = Graph::from_edges(0, n, e, DenseMatrix::zeros(n, 1), 0)
                    .expect("edges validated above");
                tmp.degrees()
            })
            .collect();
        let max_deg = graphs_deg.iter().flatten().copied().max().unwrap_or(0).max(1) as f64;
        features = graphs_deg
            .iter()
            .map(|deg| {
                DenseMatrix::col_vector(&deg.iter().map(|&d| d as f64 / max_deg).collect::<Vec<_>>())
            })
            .collect();
    }

    let graphs = features
        .into_iter()
        .enumerate()
        .map(|(g, feats)| Graph::from_edges(g, sizes[g], &edges[g], feats, labels[g]))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(name, graphs, num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, suffix: &str, body: &str) {
        fs::write(dir.join(format!("{name}_{suffix}.txt")), body).unwrap();
    }

    fn two_graphs(dir: &Path, edges: &str) {
        write(dir, "T", "A", edges);
        write(dir, "T", "graph_indicator", "1\n1\n2\n2\n");
        write(dir, "T", "graph_labels", "5\n-1\n");
    }

    #[test]
    fn parses_two_graphs() {
        let tmp = tempfile::tempdir().unwrap();
        two_graphs(tmp.path(), "1, 2\n2, 1\n3, 4\n");
        let ds = load_tu_dataset(tmp.path(), "T").unwrap();
        assert_eq!(ds.len(), 2);
        for g in &ds.graphs {
            assert_eq!((g.num_nodes(), g.num_edges()), (2, 1));
            assert_eq!(g.feature_dim(), 1);
        }
        assert_eq!(ds.graphs[0].label, 0);
        assert_eq!(ds.graphs[1].label, 1);
        assert_eq!(ds.num_classes, 2);
    }

    #[test]
    fn empty_edge_file() {
        let tmp = tempfile::tempdir().unwrap();
        two_graphs(tmp.path(), "");
        let ds = load_tu_dataset(tmp.path(), "T").unwrap();
        assert!(ds.graphs.iter().all(|g| g.num_edges() == 0));
        assert!(ds.graphs.iter().all(|g| g.features().as_slice().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn node_labels_become_one_hot() {
        let tmp = tempfile::tempdir().unwrap();
        two_graphs(tmp.path(), "1, 2\n");
        write(tmp.path(), "T", "node_labels", "1\n3\n2\n1\n");
        let ds = load_tu_dataset(tmp.path(), "T").unwrap();
        assert_eq!(ds.feature_dim(), 3);
        assert_eq!(ds.graphs[0].features().row(1), &[0.0, 0.0, 1.0]);
        assert_eq!(ds.graphs[1].features().row(0), &[0.0, 1.0, 0.0]);
        for g in &ds.graphs {
            for r in 0..g.num_nodes() {
                assert_eq!(g.features().row(r).iter().sum::<f64>(), 1.0);
            }
        }
    }

    #[test]
    fn missing_file_named() {
        let tmp = tempfile::tempdir().unwrap();
        write(tmp.path(), "T", "A", "");
        write(tmp.path(), "T", "graph_indicator", "1\n");
        let err = load_tu_dataset(tmp.path(), "T").unwrap_err();
        assert!(err.to_string().contains("T_graph_labels.txt"), "{err}");
    }

    #[test]
    fn dangling_index_reports_line() {
        let tmp = tempfile::tempdir().unwrap();
        two_graphs(tmp.path(), "1, 2\n3, 9\n");
        match load_tu_dataset(tmp.path(), "T").unwrap_err() {
            Error::Parse { line, msg, .. } => {
                assert_eq!(line, 2);
                assert!(msg.contains("dangling"));
            }
            other => panic!("unexpected {other}"),
        }
    }
}
