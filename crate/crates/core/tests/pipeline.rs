use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use cubenet::baselines::{cube_greedy, exhaustive_oracle};
use cubenet::harness::{execute_method, generate_synthetic, run_pipeline, Method, MetricsReport, RunConfig, SyntheticSpec};
use cubenet::relevance::EvalCounter;

fn config(data: &Path, out: &Path, method: Method) -> RunConfig {
    RunConfig {
        objects: data.join("objects.jsonl"),
        links: data.join("links.tsv"),
        query: data.join("query.txt"),
        words: Some(data.join("words.txt")),
        aliases: Some(data.join("aliases.json")),
        stopwords: Some(data.join("stopwords.txt")),
        schema: Some(data.join("schema.json")),
        method,
        m: 3,
        seed: 2,
        output: out.to_path_buf(),
        ..Default::default()
    }
}

fn dataset(dir: &Path, spec: &SyntheticSpec, seed: u64) -> std::path::PathBuf {
    let data = dir.join("data");
    generate_synthetic(spec, seed).unwrap().write_to(&data).unwrap();
    data
}

#[test]
fn nocube_scores_empty_retrieval() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), &SyntheticSpec::default(), 1);
    let report = run_pipeline(&config(&data, &dir.path().join("out"), Method::Nocube)).unwrap();
    let query = fs::read_to_string(data.join("query.txt")).unwrap();
    assert_eq!(report.nodes, query.lines().count());
    assert_eq!(report.quality, 0.0);
    assert_eq!(report.selected_cells, 0);
    let nodes = fs::read_to_string(dir.path().join("out/nodes.tsv")).unwrap();
    assert_eq!(nodes.lines().collect::<Vec<_>>(), query.lines().collect::<Vec<_>>());
}

#[test]
fn greedy_pipeline_matches_direct_call() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_synthetic(&SyntheticSpec::default(), 3).unwrap();
    ds.write_to(&dir.path().join("data")).unwrap();
    let cfg = config(&dir.path().join("data"), &dir.path().join("out"), Method::Greedy);
    let cube = ds.build_cube(cfg.min_cell_size).unwrap();
    let query = cube.resolve_query(&ds.query).unwrap();

    let direct = cube_greedy(&cube, &query, 3, &mut EvalCounter::new()).unwrap();
    let (via, trained) = execute_method(&cube, None, &query, &cfg).unwrap();
    assert!(trained.is_none());
    assert_eq!(via.selected, direct.selected);
    assert_eq!(via.nodes, direct.nodes);
    assert_eq!(via.quality, direct.quality);
    assert_eq!(via.quality_evaluations, direct.quality_evaluations);

    let report = run_pipeline(&cfg).unwrap();
    assert_eq!(report.quality, direct.quality);
    assert_eq!(report.nodes, direct.nodes.len());
    assert_eq!(report.quality_evaluations, 42);
}

#[test]
fn noiseless_planted_cells_are_the_oracle_optimum() {
    for seed in 0..5 {
        let spec = SyntheticSpec {
            noise: 0.0,
            query_fraction: 1.0,
            ..Default::default()
        };
        let ds = generate_synthetic(&spec, seed).unwrap();
        assert_eq!(ds.objects.len(), spec.cells * spec.objects_per_cell);
        let cube = ds.build_cube(10).unwrap();
        let query = cube.resolve_query(&ds.query).unwrap();
        let best = exhaustive_oracle(&cube, &query, spec.planted, &mut EvalCounter::new()).unwrap();
        assert_eq!(best.quality, 1.0);
        let tuples: BTreeSet<Vec<String>> = best
            .selected
            .iter()
            .map(|&c| cube.cell(c).unwrap().label_tuple.clone())
            .collect();
        assert_eq!(tuples, ds.planted.iter().cloned().collect());
    }
}

#[test]
fn partial_planted_query_has_analytic_optimum() {
    // 8 of 10 members of each planted cell, no noise: 24 / 30.
    let spec = SyntheticSpec {
        noise: 0.0,
        ..Default::default()
    };
    let ds = generate_synthetic(&spec, 7).unwrap();
    let cube = ds.build_cube(10).unwrap();
    let query = cube.resolve_query(&ds.query).unwrap();
    let best = exhaustive_oracle(&cube, &query, 3, &mut EvalCounter::new()).unwrap();
    assert_eq!(best.quality, 24.0 / 30.0);
    assert_eq!(best.selected.len(), 3);
}

#[test]
fn cube2net_writes_training_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), &SyntheticSpec::default(), 4);
    let out = dir.path().join("out");
    let mut cfg = config(&data, &out, Method::Cube2net);
    cfg.train.alpha = 4;
    cfg.train.beta = 3;
    cfg.train.hidden = 8;
    let report = run_pipeline(&cfg).unwrap();
    assert_eq!(report.quality_evaluations, 4 * 3 * 3);
    for f in ["nodes.tsv", "edges.tsv", "cells.json", "metrics.json", "timings.json", "train_report.json", "policy.json"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let back: MetricsReport = serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(back.quality, report.quality);
    assert_eq!(back.config.train.alpha, 4);
    assert!(!fs::read_to_string(out.join("metrics.json")).unwrap().contains("secs"));

    let edges = fs::read_to_string(out.join("edges.tsv")).unwrap();
    let nodes: BTreeSet<String> = fs::read_to_string(out.join("nodes.tsv")).unwrap().lines().map(String::from).collect();
    for line in edges.lines() {
        let f: Vec<&str> = line.split('\t').collect();
        assert_eq!(f.len(), 3);
        assert!(nodes.contains(f[0]) && nodes.contains(f[1]));
    }
}

#[test]
fn every_method_runs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), &SyntheticSpec::default(), 5);
    for method in Method::ALL {
        let mut cfg = config(&data, &dir.path().join(method.to_string()), method);
        cfg.train.alpha = 2;
        cfg.train.beta = 2;
        cfg.train.hidden = 4;
        let r = run_pipeline(&cfg).unwrap();
        assert!((0.0..=1.0).contains(&r.quality), "{method}: {}", r.quality);
    }
}

#[test]
fn missing_word_table_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), &SyntheticSpec::default(), 6);
    let mut cfg = config(&data, &dir.path().join("out"), Method::Cube2net);
    cfg.words = None;
    assert!(run_pipeline(&cfg).is_err());
    cfg.words = Some(data.join("nope.txt"));
    assert!(run_pipeline(&cfg).is_err());
}

#[test]
fn synthetic_files_are_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec::default();
    generate_synthetic(&spec, 11).unwrap().write_to(&dir.path().join("a")).unwrap();
    generate_synthetic(&spec, 11).unwrap().write_to(&dir.path().join("b")).unwrap();
    for entry in fs::read_dir(dir.path().join("a")).unwrap() {
        let name = entry.unwrap().file_name();
        let a = fs::read(dir.path().join("a").join(&name)).unwrap();
        let b = fs::read(dir.path().join("b").join(&name)).unwrap();
        assert_eq!(a, b, "{name:?}");
    }
}
