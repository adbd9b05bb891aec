use std::fs;

use perf_fl::harness::{ingest_csv, preset, presets, summarize_output, RunOptions};
use perf_fl::{run, run_preset, Algorithm, Error, ExperimentConfig, RunTrace};

fn pricing(extra: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml_str(&format!(
        r#"
        algorithm = "profl"
        eta = 0.01
        H = 5
        R = 3
        T = 60
        num_clients = 4
        initial_model = [0.5]
        sample_size = {{ mode = "fixed", n = 300 }}
        robust_filter = {{ c = 0.01, j = 0.01 }}
        projection = {{ lower = [0.0], upper = [10.0] }}
        {extra}
        [environment]
        kind = "gaussian-demand-pricing"
        dim = 1
        mu0 = [6.0, 7.0]
        gamma = [1.0, 3.0]
        sigma = 1.0
        [contamination]
        epsilon = 0.1
        mean = 15.0
        sigma = 1.0
        "#
    ))
    .unwrap()
}

#[test]
fn repeated_runs_are_bit_identical() {
    let cfg = pricing("");
    let (a, b) = (run(&cfg).unwrap(), run(&cfg).unwrap());
    assert_eq!(a.rows.len(), 61);
    for (x, y) in a.rows.iter().zip(&b.rows) {
        assert_eq!(x.loss.to_bits(), y.loss.to_bits());
        assert_eq!(x.theta.coords()[0].to_bits(), y.theta.coords()[0].to_bits());
        assert_eq!(x.n_per_client, y.n_per_client);
        assert_eq!(x.removed_total, y.removed_total);
    }
}

#[test]
fn thread_count_does_not_change_the_trace() {
    let cfg = pricing("");
    let on = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run(&cfg).unwrap())
    };
    assert_eq!(on(1), on(4));
}

#[test]
fn different_seeds_give_different_traces() {
    let a = run(&pricing("seed = 1")).unwrap();
    let b = run(&pricing("seed = 2")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn trace_csv_round_trips() {
    let trace = run(&pricing("")).unwrap();
    let mut buf = Vec::new();
    trace.write_csv(&mut buf).unwrap();
    let back = RunTrace::read_csv(buf.as_slice()).unwrap();
    assert_eq!(back, trace);
}

#[test]
fn partial_enrollment_freezes_the_rest() {
    let trace = run(&pricing("enrollment_fraction = 0.5")).unwrap();
    for row in &trace.rows[1..] {
        assert_eq!(row.enrolled, 2);
        assert_eq!(row.n_per_client.iter().filter(|n| **n > 0).count(), 2);
    }
}

#[test]
fn global_model_moves_only_at_round_ends() {
    let trace = run(&pricing("")).unwrap();
    for w in trace.rows.windows(2) {
        if w[1].t % 3 != 0 {
            assert_eq!(w[0].theta, w[1].theta, "moved at t = {}", w[1].t);
        }
    }
}

#[test]
fn summary_csv_matches_the_traces_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let opts = RunOptions {
        seeds: Some(vec![0, 1, 2]),
        overrides: vec![("T".into(), "30".into()), ("H".into(), "4".into())],
        out: Some(dir.path().to_path_buf()),
        ..RunOptions::default()
    };
    let run = run_preset("fig1a-contamination", &opts).unwrap();
    assert_eq!(run.cells.len(), 4 * 2 * 3);
    let root = dir.path().join("fig1a-contamination");
    let recomputed = summarize_output(&root).unwrap();
    assert_eq!(recomputed, run.summary);
    let stored = perf_fl::SummaryReport::read_csv_file(&root.join("summary.csv")).unwrap();
    assert_eq!(stored, run.summary);
    for cell in &run.cells {
        let trace = RunTrace::read_csv_file(&root.join(&cell.name).join("trace.csv")).unwrap();
        assert_eq!(trace, cell.trace);
    }
}

#[test]
fn fedavg_preset_collapses_profl_onto_pfl() {
    let opts = RunOptions {
        seeds: Some(vec![0, 1]),
        ..RunOptions::default()
    };
    let run = run_preset("appendix-fedavg-equivalence", &opts).unwrap();
    let a = run.summary.row("", Algorithm::Profl).unwrap();
    let b = run.summary.row("", Algorithm::Pfl).unwrap();
    assert!((a.final_loss_mean - b.final_loss_mean).abs() < 1e-6);
    assert!((a.accuracy_mean.unwrap() - b.accuracy_mean.unwrap()).abs() < 1e-6);
    assert!(a.accuracy_mean.unwrap() > 0.95);
}

#[test]
fn every_preset_builds_every_cell() {
    for p in presets().unwrap() {
        for sweep in p.sweep_labels() {
            for alg in &p.algorithms {
                let cfg = p.cell_config(&sweep, *alg, 0, &[]).unwrap();
                assert!(cfg.validate().is_ok(), "{} {sweep} {alg}", p.name);
                if p.name.contains("credit") || p.name.contains("adult") {
                    continue;
                }
                assert_eq!(cfg.build_clients().unwrap().len(), cfg.num_clients);
            }
        }
    }
}

#[test]
fn unknown_preset_names_the_alternatives() {
    match preset("fig9z") {
        Err(Error::UnknownPreset { name, available }) => {
            assert_eq!(name, "fig9z");
            assert!(available.contains("scalar-pricing"));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn csv_ingestion_reports_bad_rows_and_labels() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("toy.csv");
    fs::write(&good, "a,b,label\n1,2,0\n3,4,1\n5,6,0\n7,8,1\n").unwrap();
    let data = ingest_csv(&good).unwrap();
    assert_eq!((data.len(), data.num_features()), (4, 2));

    let nan = dir.path().join("nan.csv");
    fs::write(&nan, "a,b,label\n1,2,0\n3,4,1\nNaN,6,0\n7,8,1\n").unwrap();
    let err = ingest_csv(&nan).unwrap_err().to_string();
    assert!(err.contains("row 3"), "{err}");

    let labels = dir.path().join("labels.csv");
    fs::write(&labels, "a,label\n1,0\n2,2\n").unwrap();
    let err = ingest_csv(&labels).unwrap_err().to_string();
    assert!(err.contains("binary"), "{err}");
}
