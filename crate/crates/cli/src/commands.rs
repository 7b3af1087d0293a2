use std::fs;
use std::path::{Path, PathBuf};

use customgnn::experiment::{
    band_matrix, flop_report, run_repeated, ExperimentReport, RunModel, SplitKind, SplitPlan,
};
use customgnn::graph::Dataset;
use customgnn::model::{export_adapted_params, ModelSpec, TrainedModel, Variant};
use serde::Serialize;

use crate::failure::{Failure, Outcome};
use crate::manifest::RunManifest;
use crate::RunArgs;

struct Prepared {
    manifest: RunManifest,
    dataset: Dataset,
    out: PathBuf,
}

fn prepare(args: &RunArgs) -> Outcome<Prepared> {
    let mut manifest = RunManifest::load(&args.config)?;
    manifest.apply_seed(args.seed);
    if let Some(r) = args.repeats {
        manifest.repeats = r;
    }
    if let Some(e) = args.epochs {
        manifest.train.epochs = e;
    }
    manifest.validate()?;
    let dataset = manifest.load_dataset()?;
    let out = args.out.clone().unwrap_or_else(|| manifest.output.clone());
    fs::create_dir_all(&out)?;
    Ok(Prepared { manifest, dataset, out })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Outcome<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

#[derive(Serialize)]
struct Timing<'a> {
    label: &'a str,
    wall_seconds: &'a [f64],
}

fn write_report(dir: &Path, report: &ExperimentReport) -> Outcome<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.json"), report.to_json()?)?;
    report.write_csv(fs::File::create(dir.join("report.csv"))?)?;
    write_json(
        &dir.join("timing.json"),
        &Timing {
            label: &report.label,
            wall_seconds: &report.wall_seconds,
        },
    )
}

fn print_summary(report: &ExperimentReport) {
    println!(
        "{:<18} accuracy {:.4} ± {:.4} over {} runs (majority {:.4})",
        report.label,
        report.mean,
        report.std,
        report.runs.len(),
        report.majority_mean
    );
}

pub fn train(args: &RunArgs) -> Outcome<()> {
    let p = prepare(args)?;
    let m = &p.manifest;
    let outcome = run_repeated(&p.dataset, &m.plan, &m.train, m.repeats, m.train.spec.variant.name())?;
    write_report(&p.out, &outcome.report)?;
    let checkpoint = p.out.join("checkpoint.json");
    match outcome.best_model() {
        RunModel::Single(model) => model.save(&checkpoint)?,
        RunModel::Multi(bank) => write_json(&checkpoint, bank)?,
    }
    print_summary(&outcome.report);
    Ok(())
}

pub fn bands(args: &RunArgs) -> Outcome<()> {
    let p = prepare(args)?;
    let m = &p.manifest;
    if m.plan.kind != SplitKind::SizeBands {
        return Err(Failure::input("bands needs plan.kind = \"size_bands\""));
    }
    let matrix = band_matrix(&p.dataset, &m.plan, &m.train, m.repeats)?;
    matrix.write_csv(fs::File::create(p.out.join("bands.csv"))?)?;
    write_json(&p.out.join("bands.json"), &matrix)?;
    matrix.write_csv(std::io::stdout())?;
    Ok(())
}

fn compare(p: &Prepared, plan: &SplitPlan, variants: &[(&str, Variant)]) -> Outcome<()> {
    let m = &p.manifest;
    let mut summary = String::from("label,mean,std,majority_mean\n");
    for &(label, variant) in variants {
        let config = customgnn::experiment::TrainConfig {
            spec: m.train.spec.with_variant(variant),
            ..m.train.clone()
        };
        let outcome = run_repeated(&p.dataset, plan, &config, m.repeats, label)?;
        write_report(&p.out.join(label), &outcome.report)?;
        let r = &outcome.report;
        summary.push_str(&format!("{label},{},{},{}\n", r.mean, r.std, r.majority_mean));
        print_summary(r);
    }
    fs::write(p.out.join("summary.csv"), summary)?;
    Ok(())
}

pub fn adaptability(args: &RunArgs) -> Outcome<()> {
    let p = prepare(args)?;
    let plan = SplitPlan {
        seed: p.manifest.seed,
        ..SplitPlan::size_ordered()
    };
    compare(&p, &plan, &[("base", Variant::Base), ("customized", Variant::Customized)])
}

pub fn ablation(args: &RunArgs) -> Outcome<()> {
    let p = prepare(args)?;
    let plan = p.manifest.plan.clone();
    compare(
        &p,
        &plan,
        &[
            ("base", Variant::Base),
            ("full", Variant::Customized),
            ("gamma", Variant::CustomizedGamma),
            ("beta", Variant::CustomizedBeta),
        ],
    )
}

pub fn export_params(args: &RunArgs, checkpoint: &Path) -> Outcome<()> {
    let model = TrainedModel::load(checkpoint)?;
    if !model.spec.variant.is_customized() {
        return Err(Failure::input(format!(
            "checkpoint {} holds a {} model; adapted parameters need a customized one",
            checkpoint.display(),
            model.spec.variant.name()
        )));
    }
    let p = prepare(args)?;
    let graphs: Vec<_> = p.dataset.graphs.iter().collect();
    let structure: Vec<_> = graphs
        .iter()
        .map(|g| model.standardizer.features(g).standardized)
        .collect();
    let export = export_adapted_params(&model.params, &model.spec, &graphs, &structure)?;
    let path = p.out.join("adapted_params.csv");
    export.write_csv(fs::File::create(&path)?)?;
    println!("wrote {} rows to {}", export.rows.len() + 1, path.display());
    Ok(())
}

pub fn flops(config: Option<&Path>, nodes: usize, edges: usize) -> Outcome<()> {
    let spec = match config {
        Some(path) => RunManifest::load(path)?.train.spec,
        None => ModelSpec {
            variant: Variant::Customized,
            ..ModelSpec::default()
        },
    };
    let report = flop_report(&spec, nodes, edges)?;
    #[derive(Serialize)]
    struct Row {
        nodes: usize,
        edges: usize,
        adaptation: u64,
        filter: u64,
        ratio: f64,
    }
    println!(
        "{}",
        serde_json::to_string_pretty(&Row {
            nodes,
            edges,
            adaptation: report.adaptation,
            filter: report.filter,
            ratio: report.ratio(),
        })?
    );
    Ok(())
}
