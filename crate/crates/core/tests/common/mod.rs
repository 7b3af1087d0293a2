#![allow(dead_code)]

use std::sync::Arc;

use customgnn::adaptor::{AdaptorBank, FilmVars};
use customgnn::graph::{normalize_adjacency, Graph, PreparedGraph};
use customgnn::layers::{
    diffpool, film_adapt_var, gcn_filter, max_pool, topk_pool, Activation, Adjacency, Film, FilmMode,
};
use customgnn::model::{build_model, forward_on_tape, Backbone, ModelParams, ModelSpec, Variant};
use customgnn::numeric::{grad_check, DenseMatrix, SparseMatrix, Tape, Var};
use customgnn::params::{Bound, ParamStore};
use customgnn::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    DenseMatrix::uniform(rows, cols, -1.0, 1.0, rng)
}

/// Erdős–Rényi graph with uniform features in `[-1, 1]`.
pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, p: f64, d: usize, label: usize) -> Graph {
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.gen::<f64>() < p {
                edges.push((a, b));
            }
        }
    }
    Graph::from_edges(0, n, &edges, uniform(n, d, rng), label).unwrap()
}

/// `Σ out ⊙ R` for a fixed random `R`, so no gradient direction cancels.
fn weighted_sum(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let (r, c) = tape.value(out).shape();
    let weights = tape.constant(uniform(r, c, &mut rng(seed ^ 0x5eed)));
    let prod = tape.mul(out, weights)?;
    tape.sum(prod)
}

fn film_vars(vars: &[Var], mode: FilmMode) -> Film {
    Film {
        vars: FilmVars {
            gamma: vars[0],
            beta: vars[1],
        },
        mode,
    }
}

fn check(
    results: &mut Vec<(String, f64)>,
    name: &str,
    params: Vec<DenseMatrix>,
    f: impl Fn(&mut Tape, &[Var]) -> Result<Var>,
) {
    let report = grad_check(f, &params, STEP).unwrap_or_else(|e| panic!("{name}: {e}"));
    results.push((name.to_string(), report.max_rel_error));
}

/// Random heads so adaptors are not at their identity start.
pub fn perturb_adaptors(params: &mut ModelParams, seed: u64) {
    let mut r = rng(seed);
    if let Some(bank) = params.adaptors.clone() {
        for net in &bank.nets {
            for id in [net.out_w, net.out_b, net.hidden_b] {
                let (rows, cols) = params.store.get(id).shape();
                *params.store.get_mut(id) = DenseMatrix::uniform(rows, cols, -0.3, 0.3, &mut r);
            }
        }
    }
}

fn model_check(results: &mut Vec<(String, f64)>, name: &str, spec: &ModelSpec, g: &Graph, seed: u64) {
    let mut params = build_model(spec, seed).unwrap();
    perturb_adaptors(&mut params, seed);
    let s: Vec<f64> = uniform(1, 3, &mut rng(seed + 1)).into_vec();
    let prepared = PreparedGraph::new(g, s);
    let tensors = params.store.tensors().to_vec();
    check(results, name, tensors, |tape, vars| {
        let bound = Bound::from_vars(vars.to_vec());
        let out = forward_on_tape(&params, spec, tape, &bound, &prepared)?;
        tape.cross_entropy(out.logits, g.label)
    });
}

/// Worst relative finite-difference error per case over one random instance
/// (n ≤ 10, d ≤ 8) drawn from `seed`.
pub fn gradient_cases(seed: u64) -> Vec<(String, f64)> {
    let mut r = rng(seed);
    let n = r.gen_range(2..=10);
    let d = r.gen_range(1..=8);
    let d_new = r.gen_range(1..=8);
    let g = random_graph(&mut r, n, 0.4, d, 0);
    let norm = Arc::new(normalize_adjacency(&g));
    let raw = Arc::new(g.adjacency().clone());
    let x = g.features().clone();
    let w = uniform(d, d_new, &mut r);
    let gamma = DenseMatrix::uniform(d, 1, 0.5, 1.5, &mut r);
    let beta = uniform(d, 1, &mut r);
    let mut out = Vec::new();

    for (name, mode) in [
        ("film_full", FilmMode::Full),
        ("film_gamma", FilmMode::GammaOnly),
        ("film_beta", FilmMode::BetaOnly),
    ] {
        check(&mut out, name, vec![w.clone(), gamma.clone(), beta.clone()], |t, v| {
            let y = film_adapt_var(t, v[0], film_vars(&v[1..], mode))?;
            weighted_sum(t, y, seed)
        });
    }

    let adj = Adjacency::Sparse(Arc::clone(&norm));
    check(&mut out, "gcn_filter", vec![x.clone(), w.clone()], |t, v| {
        let y = gcn_filter(t, &adj, v[0], v[1], None, Activation::Relu)?;
        weighted_sum(t, y, seed)
    });
    check(
        &mut out,
        "gcn_filter_adapted",
        vec![x.clone(), w.clone(), gamma.clone(), beta.clone()],
        |t, v| {
            let y = gcn_filter(t, &adj, v[0], v[1], Some(film_vars(&v[2..], FilmMode::Full)), Activation::Relu)?;
            weighted_sum(t, y, seed)
        },
    );

    check(&mut out, "max_pool", vec![x.clone()], |t, v| {
        let y = max_pool(t, v[0])?;
        weighted_sum(t, y, seed)
    });

    let clusters = r.gen_range(1..=4);
    let z = uniform(n, d_new, &mut r);
    let wa = uniform(d, clusters, &mut r);
    let raw_adj = Adjacency::Sparse(Arc::clone(&raw));
    check(
        &mut out,
        "diffpool",
        vec![x.clone(), z.clone(), wa.clone(), gamma.clone(), beta.clone()],
        |t, v| {
            let p = diffpool(t, &raw_adj, &adj, v[0], v[1], v[2], Some(film_vars(&v[3..], FilmMode::Full)))?;
            let a = weighted_sum(t, p.adjacency, seed)?;
            let f = weighted_sum(t, p.features, seed + 1)?;
            let s = weighted_sum(t, p.assignment, seed + 2)?;
            let af = t.add(a, f)?;
            t.add(af, s)
        },
    );

    let mut dense_a = DenseMatrix::uniform(n, n, 0.0, 1.0, &mut r);
    dense_a = dense_a.zip_map(&dense_a.transpose(), |p, q| 0.5 * (p + q)).unwrap();
    check(&mut out, "diffpool_dense_level", vec![dense_a, x.clone(), z, wa], |t, v| {
        let norm = t.gcn_normalize(v[0])?;
        let p = diffpool(t, &Adjacency::Dense(v[0]), &Adjacency::Dense(norm), v[1], v[2], v[3], None)?;
        let a = weighted_sum(t, p.adjacency, seed)?;
        let f = weighted_sum(t, p.features, seed + 1)?;
        t.add(a, f)
    });

    let proj = uniform(d, 1, &mut r);
    check(
        &mut out,
        "topk_pool",
        vec![x.clone(), proj, gamma.clone(), beta.clone()],
        |t, v| {
            let p = topk_pool(t, &raw, v[0], v[1], 0.5, Some(film_vars(&v[2..], FilmMode::Full)))?;
            weighted_sum(t, p.features, seed)
        },
    );

    let mut store = ParamStore::new();
    let bank = AdaptorBank::new(&mut store, &mut r, 3, 5, &[d, d_new]).unwrap();
    for net in &bank.nets {
        for id in [net.out_w, net.out_b, net.hidden_b] {
            let (rows, cols) = store.get(id).shape();
            *store.get_mut(id) = uniform(rows, cols, &mut r);
        }
    }
    let s = uniform(1, 3, &mut r);
    check(&mut out, "adaptor", store.tensors().to_vec(), |t, v| {
        let bound = Bound::from_vars(v.to_vec());
        let sv = t.constant(s.clone());
        let phis = bank.forward_all(t, &bound, sv)?;
        let mut total = weighted_sum(t, phis[0], seed)?;
        for (k, &phi) in phis.iter().enumerate().skip(1) {
            let part = weighted_sum(t, phi, seed + k as u64)?;
            total = t.add(total, part)?;
        }
        Ok(total)
    });

    let small = |backbone: Backbone, variant: Variant| ModelSpec {
        input_dim: d,
        hidden_dim: 3,
        max_nodes: 10,
        adaptor_hidden: 4,
        ..ModelSpec::for_backbone(backbone)
    }
    .with_variant(variant);
    let g6 = random_graph(&mut r, 6, 0.5, d, seed as usize % 2);
    let two_block = ModelSpec {
        filters_per_pool: 2,
        ..small(Backbone::Gcn, Variant::Customized)
    };
    model_check(&mut out, "customized_gcn_two_block", &two_block, &g6, seed);
    model_check(&mut out, "customized_diffpool", &small(Backbone::Diffpool, Variant::Customized), &g, seed);
    model_check(&mut out, "customized_gpool", &small(Backbone::Gpool, Variant::Customized), &g, seed);
    model_check(&mut out, "concat_gcn", &small(Backbone::Gcn, Variant::Concat), &g, seed);
    out
}

/// Worst error per case across `seeds`.
pub fn gradient_suite(seeds: impl IntoIterator<Item = u64>) -> Vec<(String, f64)> {
    let mut worst: Vec<(String, f64)> = Vec::new();
    for seed in seeds {
        for (name, err) in gradient_cases(seed) {
            match worst.iter_mut().find(|(n, _)| *n == name) {
                Some(entry) => entry.1 = entry.1.max(err),
                None => worst.push((name, err)),
            }
        }
    }
    worst
}

/// Random graphs with the sign features of the synthetic corpus.
pub fn sign_graph(rng: &mut ChaCha8Rng, n: usize) -> Graph {
    let mut g = random_graph(rng, n, 0.3, 2, 0);
    let mut feats = DenseMatrix::zeros(n, 2);
    for r in 0..n {
        feats.set(r, rng.gen_range(0..2), 1.0);
    }
    g = Graph::from_edges(0, n, &g.edges(), feats, 0).unwrap();
    g
}

pub fn sparse_from_dense(m: &DenseMatrix) -> SparseMatrix {
    SparseMatrix::from_dense(m)
}
