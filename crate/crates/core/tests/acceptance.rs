//! One PASS/FAIL line per acceptance criterion, written straight to stderr so
//! the lines show without `--nocapture`.

mod common;

use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use common::{perturb_adaptors, random_graph, rng, uniform};
use customgnn::adaptor::FilmParams;
use customgnn::experiment::{band_matrix, flop_report, run_repeated, ExperimentReport, SplitPlan, TrainConfig};
use customgnn::graph::{load_tu_dataset, normalize_adjacency, synth_dataset, Dataset, SynthConfig};
use customgnn::layers::{diffpool, film_adapt, Adjacency, FilmMode};
use customgnn::model::{build_model, forward, Backbone, ModelSpec, Variant};
use customgnn::numeric::{DenseMatrix, Tape};
use rand::seq::SliceRandom;
use rand::Rng;

struct Verdict {
    criterion: usize,
    passed: bool,
    detail: String,
}

impl Verdict {
    fn new(criterion: usize, passed: bool, detail: String) -> Self {
        let line = format!(
            "criterion {criterion:>2} {}: {detail}\n",
            if passed { "PASS" } else { "FAIL" }
        );
        let _ = std::io::stderr().write_all(line.as_bytes());
        Self { criterion, passed, detail }
    }
}

const BACKBONES: [Backbone; 3] = [Backbone::Gcn, Backbone::Diffpool, Backbone::Gpool];

fn gradients() -> Verdict {
    let started = Instant::now();
    let worst = common::gradient_suite(0..24);
    let secs = started.elapsed().as_secs_f64();
    let (name, err) = worst.iter().cloned().fold((String::new(), 0.0), |a, b| if b.1 > a.1 { b } else { a });
    Verdict::new(
        1,
        err < 1e-4 && secs < 60.0,
        format!("{} cases x 24 instances, worst rel error {err:.2e} ({name}), {secs:.1}s", worst.len()),
    )
}

fn film_identity() -> Verdict {
    let mut r = rng(2024);
    let mut worst = 0.0f64;
    for backbone in BACKBONES {
        let custom = ModelSpec { max_nodes: 40, ..ModelSpec::for_backbone(backbone) }.with_variant(Variant::Customized);
        let base = custom.with_variant(Variant::Base);
        let p_custom = build_model(&custom, 17).unwrap();
        let p_base = build_model(&base, 17).unwrap();
        for _ in 0..100 {
            let n = r.gen_range(2..=40);
            let g = common::sign_graph(&mut r, n);
            let s = [r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0)];
            let a = forward(&p_custom, &custom, &g, &s).unwrap();
            let b = forward(&p_base, &base, &g, &s).unwrap();
            worst = worst.max(a.max_abs_diff(&b));
        }
    }
    Verdict::new(2, worst < 1e-12, format!("300 graphs over 3 backbones, max |Δ logits| {worst:.1e}"))
}

fn algebraic_oracles() -> Verdict {
    let mut norm_err = 0.0f64;
    for seed in 0..50u64 {
        let mut r = rng(seed);
        let n = r.gen_range(1..=50);
        let g = random_graph(&mut r, n, 0.15, 1, 0);
        let a = g.adjacency().to_dense();
        let deg: Vec<f64> = (0..n).map(|i| a.row(i).iter().sum::<f64>() + 1.0).collect();
        let mut want = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let tilde = a.get(i, j) + if i == j { 1.0 } else { 0.0 };
                want.set(i, j, tilde / (deg[i] * deg[j]).sqrt());
            }
        }
        norm_err = norm_err.max(normalize_adjacency(&g).to_dense().max_abs_diff(&want));
    }

    let mut row_err = 0.0f64;
    for seed in 0..100u64 {
        let mut r = rng(seed + 500);
        let n = r.gen_range(1..=30);
        let d = r.gen_range(1..=8);
        let g = random_graph(&mut r, n, 0.3, d, 0);
        let mut tape = Tape::new();
        let norm = Adjacency::Sparse(Arc::new(normalize_adjacency(&g)));
        let raw = Adjacency::Sparse(Arc::new(g.adjacency().clone()));
        let x = tape.constant(g.features().clone());
        let z = tape.constant(uniform(n, 3, &mut r));
        let w = tape.constant(DenseMatrix::uniform(d, r.gen_range(1..=8), -4.0, 4.0, &mut r));
        let out = diffpool(&mut tape, &raw, &norm, x, z, w, None).unwrap();
        let s = tape.value(out.assignment);
        for i in 0..n {
            row_err = row_err.max((s.row(i).iter().sum::<f64>() - 1.0).abs());
        }
    }

    let w = DenseMatrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
    let fp = FilmParams { gamma: vec![2.0, 0.0], beta: vec![1.0, -1.0] };
    let film = film_adapt(&w, &fp, FilmMode::Full).unwrap();
    let hand = film == DenseMatrix::from_rows(&[&[3.0, 5.0], &[-1.0, -1.0]]);
    Verdict::new(
        3,
        norm_err < 1e-12 && row_err < 1e-9 && hand,
        format!("normalize err {norm_err:.1e}, assignment row-sum err {row_err:.1e}, FiLM hand example exact: {hand}"),
    )
}

fn permutation_invariance() -> Verdict {
    let mut worst = 0.0f64;
    for seed in 0..50u64 {
        let mut r = rng(seed + 900);
        let n = r.gen_range(2..=40);
        let g = random_graph(&mut r, n, 0.2, 4, 0);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut r);
        let h = g.permuted(&perm).unwrap();
        for variant in [Variant::Base, Variant::Customized] {
            let spec = ModelSpec { input_dim: 4, hidden_dim: 16, ..ModelSpec::default() }.with_variant(variant);
            let mut params = build_model(&spec, seed).unwrap();
            perturb_adaptors(&mut params, seed);
            let s = [0.1, -1.0, 0.7];
            let a = forward(&params, &spec, &g, &s).unwrap();
            let b = forward(&params, &spec, &h, &s).unwrap();
            worst = worst.max(a.max_abs_diff(&b));
        }
    }
    Verdict::new(4, worst < 1e-9, format!("50 (graph, permutation) pairs, max |Δ logits| {worst:.1e}"))
}

fn synth_config(variant: Variant) -> TrainConfig {
    TrainConfig {
        epochs: 100,
        learning_rate: 0.01,
        seed: 1,
        spec: ModelSpec { hidden_dim: 16, ..ModelSpec::default() }.with_variant(variant),
        ..TrainConfig::default()
    }
}

fn run(ds: &Dataset, plan: &SplitPlan, config: &TrainConfig, label: &str) -> ExperimentReport {
    run_repeated(ds, plan, config, 4, label).unwrap().report
}

fn points(x: f64) -> f64 {
    100.0 * x
}

fn core_claim(ds: &Dataset, base: &ExperimentReport) -> Verdict {
    let started = Instant::now();
    let custom = run(ds, &SplitPlan::random(1), &synth_config(Variant::Customized), "customized");
    let bands = SplitPlan::size_bands(vec![[10, 20], [80, 120]], 1);
    let matrix = band_matrix(ds, &bands, &synth_config(Variant::Base), 4).unwrap();
    let gain = points(custom.mean - base.mean);
    let rows: Vec<String> = matrix
        .accuracy
        .iter()
        .map(|row| row.iter().map(|a| format!("{a:.3}")).collect::<Vec<_>>().join(" "))
        .collect();
    Verdict::new(
        5,
        gain >= 5.0 && matrix.band_rows_dominant(),
        format!(
            "GCN {:.1}±{:.1}, Customized-GCN {:.1}±{:.1} (+{gain:.1} pts); band matrix [{}] band rows dominant: {}; {:.0}s",
            points(base.mean),
            points(base.std),
            points(custom.mean),
            points(custom.std),
            rows.join(" | "),
            matrix.band_rows_dominant(),
            started.elapsed().as_secs_f64()
        ),
    )
}

fn adaptability(ds: &Dataset) -> Verdict {
    let plan = SplitPlan::size_ordered();
    let base = run(ds, &plan, &synth_config(Variant::Base), "base");
    let custom = run(ds, &plan, &synth_config(Variant::Customized), "customized");
    Verdict::new(
        6,
        custom.mean > base.mean,
        format!(
            "size-ordered split: GCN {:.1}, Customized-GCN {:.1}",
            points(base.mean),
            points(custom.mean)
        ),
    )
}

fn ablation(ds: &Dataset, base: &ExperimentReport) -> Verdict {
    let gamma = run(ds, &SplitPlan::random(1), &synth_config(Variant::CustomizedGamma), "gamma");
    let beta = run(ds, &SplitPlan::random(1), &synth_config(Variant::CustomizedBeta), "beta");
    let floor = base.mean - 0.01;
    Verdict::new(
        7,
        gamma.mean >= floor && beta.mean >= floor,
        format!(
            "GCN {:.1}, γ-only {:.1}, β-only {:.1}",
            points(base.mean),
            points(gamma.mean),
            points(beta.mean)
        ),
    )
}

fn data_root() -> PathBuf {
    std::env::var_os("CUSTOMGNN_DATA_ROOT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

fn real_data() -> Verdict {
    let started = Instant::now();
    let dir = data_root().join("MUTAG");
    let ds = match load_tu_dataset(&dir, "MUTAG") {
        Ok(ds) => ds,
        Err(e) => return Verdict::new(8, false, format!("cannot load {}: {e}", dir.display())),
    };
    let max_nodes = ds.graphs.iter().map(|g| g.num_nodes()).max().unwrap();
    let plan = SplitPlan::random(3);
    let mut parts = Vec::new();
    let mut passed = ds.len() <= 1200;
    let mut majority = f64::NAN;
    for backbone in BACKBONES {
        let spec = ModelSpec {
            input_dim: ds.feature_dim(),
            num_classes: ds.num_classes,
            hidden_dim: 32,
            max_nodes,
            ..ModelSpec::for_backbone(backbone)
        };
        let variants: [(&str, Variant, Option<usize>); 6] = [
            ("base", Variant::Base, None),
            ("customized", Variant::Customized, None),
            ("concat", Variant::Concat, None),
            ("multi", Variant::Base, Some(2)),
            ("gamma", Variant::CustomizedGamma, None),
            ("beta", Variant::CustomizedBeta, None),
        ];
        for (label, variant, clusters) in variants {
            let config = TrainConfig {
                epochs: 200,
                learning_rate: 0.01,
                seed: 3,
                early_stopping: false,
                multi_clusters: clusters,
                spec: spec.with_variant(variant),
                ..TrainConfig::default()
            };
            let r = run(&ds, &plan, &config, label);
            majority = points(r.majority_mean);
            let margin = points(r.mean - r.majority_mean);
            passed &= margin >= 5.0;
            parts.push(format!("{}/{label} {:.1}", backbone_name(backbone), points(r.mean)));
        }
    }
    Verdict::new(
        8,
        passed && started.elapsed().as_secs_f64() < 1800.0,
        format!(
            "MUTAG ({} graphs), majority {majority:.1}; {}; reference GCN 77.0±2.3 on PROT (not asserted); {:.0}s",
            ds.len(),
            parts.join(", "),
            started.elapsed().as_secs_f64()
        ),
    )
}

fn backbone_name(b: Backbone) -> &'static str {
    match b {
        Backbone::Gcn => "gcn",
        Backbone::Diffpool => "diffpool",
        Backbone::Gpool => "gpool",
    }
}

fn complexity() -> Verdict {
    let spec = ModelSpec { input_dim: 64, ..ModelSpec::default() }.with_variant(Variant::Customized);
    let report = flop_report(&spec, 500, 2000).unwrap();
    let (d, h, s, n, m) = (64u64, 16u64, 3u64, 500u64, 2000u64);
    let adapt = 3 * (s * h + h * 2 * d + 2 * d * d);
    let filter = 3 * ((2 * m + n) * d + n * d * d);
    let independent = [(1, 0), (50, 100), (5000, 100000)]
        .iter()
        .all(|&(n2, m2)| flop_report(&spec, n2, m2).unwrap().adaptation == report.adaptation);
    Verdict::new(
        9,
        report.adaptation == adapt && report.filter == filter && independent && report.ratio() < 0.05,
        format!(
            "adaptation {} vs filter {} multiply-adds, ratio {:.4}; independent of n, m: {independent}",
            report.adaptation,
            report.filter,
            report.ratio()
        ),
    )
}

fn reproducibility() -> Verdict {
    let cfg = SynthConfig {
        bands: vec![
            customgnn::graph::SizeBand { min_nodes: 6, max_nodes: 12, graphs: 30, rule: customgnn::graph::BandRule::Majority },
            customgnn::graph::SizeBand { min_nodes: 30, max_nodes: 40, graphs: 30, rule: customgnn::graph::BandRule::Inverted },
        ],
        ..SynthConfig::default()
    };
    let ds = synth_dataset(&cfg, 8).unwrap();
    let quick = |variant: Variant, backbone: Backbone| TrainConfig {
        epochs: 5,
        learning_rate: 0.01,
        seed: 42,
        spec: ModelSpec { hidden_dim: 8, max_nodes: 40, ..ModelSpec::for_backbone(backbone) }.with_variant(variant),
        ..TrainConfig::default()
    };
    let mut identical = true;
    let mut checked = 0;
    for plan in [SplitPlan::random(42), SplitPlan::size_ordered()] {
        for backbone in BACKBONES {
            for variant in [Variant::Base, Variant::Customized, Variant::Concat, Variant::CustomizedGamma] {
                let once = || run_repeated(&ds, &plan, &quick(variant, backbone), 2, "r").unwrap().report.to_json().unwrap();
                identical &= once() == once();
                checked += 1;
            }
        }
    }
    let multi = TrainConfig { multi_clusters: Some(2), ..quick(Variant::Base, Backbone::Gcn) };
    let once = || run_repeated(&ds, &SplitPlan::random(42), &multi, 2, "m").unwrap().report.to_json().unwrap();
    identical &= once() == once();
    let bands = SplitPlan::size_bands(vec![[6, 12], [30, 40]], 42);
    let once = || serde_json::to_string(&band_matrix(&ds, &bands, &quick(Variant::Base, Backbone::Gcn), 2).unwrap()).unwrap();
    identical &= once() == once();
    Verdict::new(10, identical, format!("{} experiment configurations rerun, reports bit-identical: {identical}", checked + 2))
}

#[test]
fn acceptance_criteria() {
    let _ = std::io::stderr().write_all(b"\n");
    let ds = synth_dataset(&SynthConfig::default(), 11).unwrap();
    let mut verdicts = vec![
        gradients(),
        film_identity(),
        algebraic_oracles(),
        permutation_invariance(),
    ];
    let base = run(&ds, &SplitPlan::random(1), &synth_config(Variant::Base), "base");
    verdicts.push(core_claim(&ds, &base));
    verdicts.push(adaptability(&ds));
    verdicts.push(ablation(&ds, &base));
    verdicts.push(real_data());
    verdicts.push(complexity());
    verdicts.push(reproducibility());
    let failed: Vec<String> = verdicts
        .iter()
        .filter(|v| !v.passed)
        .map(|v| format!("{}: {}", v.criterion, v.detail))
        .collect();
    assert!(failed.is_empty(), "failed criteria: {failed:#?}");
}
