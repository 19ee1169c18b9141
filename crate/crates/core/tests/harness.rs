use std::fs;
use std::path::Path;

use serde_json::{json, Value};
use tradbs_core::harness::{load_config, run_experiment, RunOptions};
use tradbs_core::scorer::{NGramModel, Scorer};
use tradbs_core::{Frame, ScorerContext};

fn write_config(dir: &Path, cfg: &Value) -> std::path::PathBuf {
    let path = dir.join("experiment.json");
    fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

fn records(path: &Path) -> Vec<Value> {
    fs::read_to_string(path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn ngram_config(strategies: Value, repeats: usize) -> Value {
    json!({
        "schema": "tradbs.experiment/v1",
        "scorer": { "kind": "ngram_corpus", "corpus": "corpus.txt", "order": 2, "add_k": 0.5,
                    "vocab": [{ "size": 6, "eos": 5 }] },
        "prompt": [[0]],
        "repeats": repeats,
        "strategies": strategies,
    })
}

fn setup(cfg: &Value) -> (tempfile::TempDir, std::path::PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("corpus.txt"), "0 1 2 3 4 5\n0 0 1 1 2 5\n1 2 3 1 2 3 5\n").unwrap();
    let path = write_config(dir.path(), cfg);
    (dir, path)
}

#[test]
fn greedy_and_trad_bs_record_counts() {
    let cfg = ngram_config(
        json!([
            { "name": "greedy", "decoder": "sample", "sampling": { "strategy": "greedy" },
              "penalty": { "max_steps": 30 } },
            { "name": "trad", "decoder": "trad_bs",
              "penalty": { "alpha": 10.0, "beta": 3.0, "window": 50, "beam_width": 5, "max_steps": 30 } }
        ]),
        1,
    );
    let (dir, path) = setup(&cfg);
    let out = dir.path().join("out.jsonl");
    let report = run_experiment(&path, &RunOptions { out: Some(out.clone()), seed_override: None }).unwrap();
    assert_eq!(report.sequence_records, 6);
    assert_eq!(report.summary_records, 2);

    let recs = records(&out);
    assert_eq!(recs.len(), 8);
    let seqs: Vec<&Value> = recs.iter().filter(|r| r["record"] == "sequence").collect();
    assert_eq!(seqs.iter().filter(|r| r["strategy"] == "greedy").count(), 1);
    assert_eq!(seqs.iter().filter(|r| r["strategy"] == "trad").count(), 5);
    for r in &recs {
        assert_eq!(r["schema"], "tradbs.result/v1");
    }
    assert!(recs[..6].iter().all(|r| r["record"] == "sequence"));
    assert!(recs[6..].iter().all(|r| r["record"] == "summary"));

    // summary best is the max and mean the arithmetic mean of the file's values
    for s in recs.iter().filter(|r| r["record"] == "summary") {
        let vals: Vec<f64> = seqs
            .iter()
            .filter(|r| r["strategy"] == s["strategy"])
            .map(|r| r["cum_original"].as_f64().unwrap())
            .collect();
        let best = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        assert_eq!(s["best"].as_f64().unwrap(), best);
        assert!((s["mean"].as_f64().unwrap() - mean).abs() <= 1e-9 * mean.abs().max(1.0));
        assert_eq!(s["first"].as_f64().unwrap(), vals[0]);
        assert_eq!(s["count"].as_u64().unwrap() as usize, vals.len());
    }
}

#[test]
fn repeats_use_distinct_seeds_and_rerun_identically() {
    let cfg = ngram_config(
        json!([{ "name": "nucleus", "decoder": "sample",
                 "sampling": { "strategy": "top_p", "p": 0.9, "seed": 40 },
                 "penalty": { "max_steps": 25 } }]),
        5,
    );
    let (dir, path) = setup(&cfg);
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    run_experiment(&path, &RunOptions { out: Some(a.clone()), seed_override: None }).unwrap();
    run_experiment(&path, &RunOptions { out: Some(b.clone()), seed_override: None }).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let seqs: Vec<Value> = records(&a).into_iter().filter(|r| r["record"] == "sequence").collect();
    assert_eq!(seqs.len(), 5);
    let seeds: Vec<u64> = seqs.iter().map(|r| r["seed"].as_u64().unwrap()).collect();
    assert_eq!(seeds, vec![40, 41, 42, 43, 44]);
    let runs: Vec<u64> = seqs.iter().map(|r| r["run"].as_u64().unwrap()).collect();
    assert_eq!(runs, vec![0, 1, 2, 3, 4]);
}

#[test]
fn seed_override_changes_base_seed() {
    let cfg = ngram_config(
        json!([{ "name": "k", "decoder": "sample", "sampling": { "strategy": "top_k", "k": 3, "seed": 1 },
                 "penalty": { "max_steps": 10 } }]),
        2,
    );
    let (dir, path) = setup(&cfg);
    let out = dir.path().join("o.jsonl");
    run_experiment(&path, &RunOptions { out: Some(out.clone()), seed_override: Some(900) }).unwrap();
    let seeds: Vec<u64> = records(&out).iter().filter_map(|r| r["seed"].as_u64()).collect();
    assert_eq!(seeds, vec![900, 901]);
}

#[test]
fn empty_strategy_list_is_a_config_error() {
    let (_dir, path) = setup(&ngram_config(json!([]), 1));
    let err = load_config(&path).unwrap_err();
    assert!(err.is_config_error());
    assert!(err.to_string().contains("strategies"), "{err}");
}

#[test]
fn invalid_strategy_names_the_field() {
    let cfg = ngram_config(
        json!([{ "name": "bad", "decoder": "sample", "sampling": { "strategy": "top_p", "p": 1.5 } }]),
        1,
    );
    let (_dir, path) = setup(&cfg);
    let err = load_config(&path).unwrap_err();
    assert!(err.is_config_error());
    assert!(err.to_string().contains("strategies[0]"), "{err}");
}

#[test]
fn missing_corpus_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(
        dir.path(),
        &ngram_config(json!([{ "name": "g", "decoder": "sample", "sampling": { "strategy": "greedy" } }]), 1),
    );
    let err = load_config(&path).unwrap_err();
    assert!(err.is_config_error());
    assert!(err.to_string().contains("corpus.txt"), "{err}");
}

#[test]
fn decode_failure_flushes_partial_results() {
    let cfg = json!({
        "schema": "tradbs.experiment/v1",
        "scorer": { "kind": "table", "logits": [[[0.0, 1.0]], [[1.0, 0.0]], [[0.0, 1.0]]] },
        "strategies": [
            { "name": "short", "decoder": "sample", "sampling": { "strategy": "greedy" },
              "penalty": { "max_steps": 3 } },
            { "name": "too_long", "decoder": "trad_bs", "penalty": { "beam_width": 2, "max_steps": 10 } }
        ]
    });
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), &cfg);
    let out = dir.path().join("partial.jsonl");
    let err = run_experiment(&path, &RunOptions { out: Some(out.clone()), seed_override: None }).unwrap_err();
    assert!(!err.is_config_error(), "{err}");
    let recs = records(&out);
    assert_eq!(recs.len(), 2);
    assert_eq!(recs[0]["strategy"], "short");
    assert_eq!(recs[0]["frames"], json!([[1], [0], [1]]));
    assert_eq!(recs[1]["record"], "summary");
}

#[test]
fn trained_model_reloads_and_scores_identically() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.txt");
    fs::write(&corpus, "0 1 0 1\n").unwrap();
    let model_path = dir.path().join("m.json");
    let opts = tradbs_core::harness::TrainOptions {
        corpus,
        order: 2,
        add_k: 1.0,
        output: model_path.clone(),
        vocab_size: None,
        eos: None,
    };
    let trained = tradbs_core::harness::train_ngram_cmd(&opts).unwrap();
    let loaded = NGramModel::load(&model_path).unwrap();
    for ctx in [vec![], vec![Frame::single(0)], vec![Frame::single(1)], vec![Frame::single(1), Frame::single(0)]] {
        let a = trained.score(&ScorerContext::new(&ctx, &[])).unwrap();
        let b = loaded.score(&ScorerContext::new(&ctx, &[])).unwrap();
        assert_eq!(a, b);
    }
}
