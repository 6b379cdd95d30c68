use std::process::Command;

use dataval_harness::report::{CurveRow, SummaryRow, ValueRow};
use dataval_harness::{
    emit_svg, parse_config_str, read_report, run_experiment, write_csv, EvalReport,
    ExperimentConfig,
};

fn config(valuators: &[&str], tasks: &str, seeds: &str) -> ExperimentConfig {
    let mut text = format!(
        "name = \"t\"\ntasks = {tasks}\nseeds = {seeds}\n\n[dataset]\nkind = \"blobs\"\n\n[split]\ntrain = 200\nvalid = 50\ntest = 200\n"
    );
    for v in valuators {
        text.push_str(&format!("\n[[valuator]]\nname = \"{v}\"\n"));
        if *v == "data_oob" {
            text.push_str("n_estimators = 50\n");
        }
    }
    parse_config_str(&text, "t").unwrap()
}

fn with_threads<T: Send>(n: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .unwrap()
        .install(f)
}

#[test]
fn detect_rows_per_valuator_and_seed() {
    let cfg = config(&["data_oob", "random"], "[\"detect\"]", "[0, 1, 2]");
    let report = run_experiment(&cfg).unwrap();
    assert!(report.errors.is_empty(), "{:?}", report.errors);
    assert_eq!(report.summary.len(), 2 * 3);
    for r in &report.summary {
        assert_eq!(r.task, "detect");
        assert_eq!(r.metric_name, "f1");
        assert!((0.0..=1.0).contains(&r.metric_value));
        assert_eq!(r.noise_kind, "label_flip");
    }
    assert_eq!(report.values.len(), 2 * 3 * 200);
    for seed in 0..3 {
        let noisy = report
            .values
            .iter()
            .filter(|r| r.valuator == "random" && r.seed == seed && r.is_noisy)
            .count();
        assert_eq!(noisy, 40);
    }
}

#[test]
fn runtime_only_has_no_detect_or_curve_rows() {
    let cfg = config(&["knn_shapley", "random"], "[\"runtime\"]", "[0]");
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(report.summary.len(), 2);
    assert!(report
        .summary
        .iter()
        .all(|r| r.task == "runtime" && r.metric_name == "wall_time_s"));
    assert!(report.curves.is_empty());
}

#[test]
fn summary_count_matches_matrix() {
    let cfg = config(
        &["knn_shapley", "random"],
        "[\"detect\", \"removal\", \"addition\", \"runtime\"]",
        "[4, 5]",
    );
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(report.summary.len() + report.errors.len(), 2 * 2 * 4);
    // grid 0, 5, ..., 40 for m = 200 and step 5
    let removal = report
        .curves
        .iter()
        .filter(|r| r.valuator == "random" && r.seed == 4 && r.direction == "removal");
    assert_eq!(removal.count(), 200 / 5 / 5 + 1);
}

#[test]
fn values_bytes_identical_across_runs_and_threads() {
    let cfg = config(
        &["data_oob", "knn_shapley", "lava", "random"],
        "[\"detect\"]",
        "[0, 7]",
    );
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    write_csv(&with_threads(1, || run_experiment(&cfg).unwrap()), a.path()).unwrap();
    write_csv(&with_threads(3, || run_experiment(&cfg).unwrap()), b.path()).unwrap();
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("values.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn removing_a_valuator_leaves_others_unchanged() {
    let full = run_experiment(&config(
        &["data_oob", "knn_shapley", "random"],
        "[\"detect\"]",
        "[3]",
    ))
    .unwrap();
    let part = run_experiment(&config(&["data_oob", "random"], "[\"detect\"]", "[3]")).unwrap();
    let pick = |r: &EvalReport, v: &str| {
        r.values
            .iter()
            .filter(|x| x.valuator == v)
            .cloned()
            .collect::<Vec<_>>()
    };
    for v in ["data_oob", "random"] {
        assert_eq!(pick(&full, v), pick(&part, v));
    }
    let f1 = |r: &EvalReport| {
        r.summary
            .iter()
            .find(|x| x.valuator == "data_oob")
            .unwrap()
            .metric_value
    };
    assert_eq!(f1(&full), f1(&part));
}

#[test]
fn module_errors_become_rows() {
    // the split asks for more rows than the file has
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("tiny.csv");
    std::fs::write(&csv, "a,b,y\n0,1,0\n1,0,1\n0.5,0.5,0\n1,1,1\n").unwrap();
    let text = format!(
        "tasks = [\"detect\", \"runtime\"]\n[dataset]\nkind = \"csv\"\npath = \"{}\"\nlabel_column = 2\n[split]\ntrain = 10\nvalid = 2\ntest = 2\n[[valuator]]\nname = \"random\"\n",
        csv.display()
    );
    let report = run_experiment(&parse_config_str(&text, "tiny").unwrap()).unwrap();
    assert!(report.summary.is_empty());
    assert_eq!(report.errors.len(), 2);
}

fn summary_row(valuator: &str, seed: u64, task: &str, value: f64) -> SummaryRow {
    SummaryRow {
        experiment_id: "e".into(),
        dataset: "blobs".into(),
        valuator: valuator.into(),
        seed,
        noise_kind: "label_flip".into(),
        noise_rate: 0.2,
        task: task.into(),
        metric_name: "f1".into(),
        metric_value: value,
        runtime_s: 0.125,
    }
}

#[test]
fn empty_report_writes_headers_only() {
    let dir = tempfile::tempdir().unwrap();
    write_csv(&EvalReport::default(), dir.path()).unwrap();
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(
        summary,
        "experiment_id,dataset,valuator,seed,noise_kind,noise_rate,task,metric_name,metric_value,runtime_s\n"
    );
    let values = std::fs::read_to_string(dir.path().join("values.csv")).unwrap();
    assert_eq!(
        values,
        "experiment_id,valuator,seed,point_index,value,is_noisy\n"
    );
}

#[test]
fn one_row_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let report = EvalReport {
        summary: vec![summary_row("knn", 1, "detect", 1.0 / 3.0)],
        values: (0..4)
            .map(|i| ValueRow {
                experiment_id: "e".into(),
                valuator: "knn".into(),
                seed: 1,
                point_index: i,
                value: (i as f64 + 0.1).sqrt() * 1e-7,
                is_noisy: i % 2 == 0,
            })
            .collect(),
        ..Default::default()
    };
    write_csv(&report, dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert_eq!(read_report(dir.path()).unwrap(), report);
}

fn count(s: &str, needle: &str) -> usize {
    s.matches(needle).count()
}

#[test]
fn svg_structure() {
    let dir = tempfile::tempdir().unwrap();
    let mut report = EvalReport::default();
    for seed in 0..3 {
        report
            .summary
            .push(summary_row("a", seed, "detect", 0.2 + 0.1 * seed as f64));
        report.summary.push(summary_row("b", seed, "detect", 0.6));
    }
    let (k_max, step) = (40, 5);
    for k in (0..=k_max).step_by(step) {
        report.curves.push(CurveRow {
            experiment_id: "e".into(),
            valuator: "a".into(),
            seed: 0,
            direction: "removal".into(),
            k,
            performance: 0.9 - k as f64 / 100.0,
        });
    }
    let out = emit_svg(&report, dir.path()).unwrap();
    assert_eq!(out.files.len(), 2);
    assert_eq!(out.notices.len(), 2);
    assert!(!dir.path().join("addition.svg").exists());
    let detect = std::fs::read_to_string(dir.path().join("detect.svg")).unwrap();
    assert_eq!(count(&detect, "class=\"bar\""), 2);
    assert_eq!(count(&detect, "class=\"whisker\""), 2);
    assert!(detect.contains("version=\"1.1\"") && !detect.contains("<script"));
    let removal = std::fs::read_to_string(dir.path().join("removal.svg")).unwrap();
    assert_eq!(count(&removal, "<polyline"), 1);
    let points = removal
        .split("points=\"")
        .nth(1)
        .unwrap()
        .split('"')
        .next()
        .unwrap();
    assert_eq!(points.split_whitespace().count(), k_max / step + 1);

    let again = tempfile::tempdir().unwrap();
    emit_svg(&report, again.path()).unwrap();
    for f in ["detect.svg", "removal.svg"] {
        assert_eq!(
            std::fs::read(dir.path().join(f)).unwrap(),
            std::fs::read(again.path().join(f)).unwrap()
        );
    }
    assert!(emit_svg(&EvalReport::default(), again.path())
        .unwrap()
        .files
        .is_empty());
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_dataval"))
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.toml");
    std::fs::write(
        &good,
        "seeds = [0]\ntasks = [\"detect\"]\n[dataset]\nkind = \"blobs\"\n[split]\ntrain = 60\nvalid = 20\ntest = 40\n[[valuator]]\nname = \"knn_shapley\"\n[[valuator]]\nname = \"random\"\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = cli(&[
        "value",
        "--config",
        good.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "2",
        "3",
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let report = read_report(&out).unwrap();
    assert_eq!(report.summary.len(), 4);
    assert!(report.summary.iter().all(|r| r.seed == 2 || r.seed == 3));

    let o = cli(&[
        "curve",
        "--config",
        good.to_str().unwrap(),
        "--direction",
        "removal",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(read_report(&out)
        .unwrap()
        .summary
        .iter()
        .all(|r| r.task == "removal"));
    let o = cli(&["report", "--in", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(out.join("removal.svg").exists());

    let bad = dir.path().join("bad.toml");
    std::fs::write(
        &bad,
        "modle = 1\n[dataset]\nkind = \"blobs\"\n[[valuator]]\nname = \"random\"\n",
    )
    .unwrap();
    let o = cli(&["detect", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("modle"));

    let partial = dir.path().join("partial.toml");
    std::fs::write(
        &partial,
        "tasks = [\"detect\"]\n[noise]\nkind = \"none\"\n[dataset]\nkind = \"blobs\"\n[split]\ntrain = 60\nvalid = 20\ntest = 40\n[[valuator]]\nname = \"random\"\n",
    )
    .unwrap();
    let o = cli(&[
        "detect",
        "--config",
        partial.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(read_report(&out).unwrap().errors.len(), 1);
}
