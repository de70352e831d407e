mod common;

use ioforge::pipeline::{run_all, run_stage, PipelineError, RunManifest, Stage};

#[test]
fn full_pipeline_on_synthetic_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let (s, mut cfg) = common::fixture(dir.path(), 3, &[]);
    common::run_pipeline(&mut cfg, &s);
    let run = cfg.run_path();
    for f in [
        "report/table1.csv",
        "report/scatter.csv",
        "report/score_histogram.csv",
        "report/community_crosstab.csv",
        "impact/posterior.csv",
        "network/network.graphml",
        "manifest.json",
        "run.log",
    ] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let manifest = RunManifest::load(&run).unwrap().unwrap();
    assert_eq!(manifest.stages.len(), 11);

    let top: Vec<String> = common::impact_ranking(&cfg).into_iter().take(3).collect();
    let mut want = s.truth.sources.clone();
    want.sort();
    let mut got = top.clone();
    got.sort();
    assert_eq!(got, want, "top impact {top:?}");

    let mut scatter = csv::Reader::from_path(run.join("report/scatter.csv")).unwrap();
    assert_eq!(
        scatter.headers().unwrap().iter().collect::<Vec<_>>(),
        vec!["account_id", "score", "impact", "known_label"]
    );
    assert!(scatter.records().count() > 0);

    // An unchanged run skips every stage and leaves the manifest alone.
    let before = std::fs::read(run.join("manifest.json")).unwrap();
    let outcomes = run_all(&cfg, false).unwrap();
    assert!(outcomes.iter().all(|o| o.skipped));
    assert_eq!(std::fs::read(run.join("manifest.json")).unwrap(), before);

    // Changing a downstream setting recomputes from that stage on only.
    cfg.report.histogram_bins = 5;
    let outcomes = run_all(&cfg, false).unwrap();
    let rerun: Vec<Stage> = outcomes.iter().filter(|o| !o.skipped).map(|o| o.stage).collect();
    assert_eq!(rerun, vec![Stage::Report]);
}

#[test]
fn classify_before_train_names_the_train_stage() {
    let dir = tempfile::tempdir().unwrap();
    let (_, cfg) = common::fixture(dir.path(), 1, &[]);
    for stage in [Stage::Ingest, Stage::Label, Stage::Featurize] {
        run_stage(&cfg, stage).unwrap();
    }
    let err = run_stage(&cfg, Stage::Classify).unwrap_err();
    match &err {
        PipelineError::MissingArtifact { needs, .. } => assert_eq!(*needs, "train"),
        other => panic!("unexpected {other}"),
    }
    assert!(err.to_string().contains("run `ioforge train` first"));
    let err = run_stage(&cfg, Stage::SelectNarrative).unwrap_err();
    assert!(matches!(err, PipelineError::NoNarrativeSelection), "{err}");
}

#[test]
fn hashtag_narrative_and_no_known_labels() {
    let dir = tempfile::tempdir().unwrap();
    let (s, cfg) = common::fixture(
        dir.path(),
        2,
        &[
            "narrative.hashtag=leaks".into(),
            "ingest.known_io=\"missing_io.txt\"".into(),
        ],
    );
    std::fs::write(dir.path().join("missing_io.txt"), "").unwrap();
    let mut cfg = cfg;
    cfg.ingest.known_benign = None;
    cfg.impact.warmup = 200;
    cfg.impact.draws = 200;
    let outcomes = run_all(&cfg, false).unwrap();
    assert_eq!(outcomes.len(), 11);
    let run = cfg.run_path();
    let mut r = csv::Reader::from_path(run.join("report/scatter.csv")).unwrap();
    let labels: Vec<String> = r.records().map(|x| x.unwrap()[3].to_string()).collect();
    assert!(!labels.is_empty());
    assert!(labels.iter().all(|l| l == "unknown"));
    let narrative: ioforge::topics::Narrative =
        serde_json::from_slice(&std::fs::read(run.join("narrative/narrative.json")).unwrap()).unwrap();
    let planted = s.truth.tweet_topics.values().filter(|&&t| t == 0).count();
    assert_eq!(narrative.tweet_ids.len(), planted);

    let mut hist = csv::Reader::from_path(run.join("report/score_histogram.csv")).unwrap();
    let total: usize = hist.records().map(|x| x.unwrap()[3].parse::<usize>().unwrap()).sum();
    let scored = csv::Reader::from_path(run.join("classify/scores.csv")).unwrap().records().count();
    assert_eq!(total, scored);

    let src = ioforge::pipeline::SourceSpec::parse(&s.truth.sources.join(","));
    let rep = ioforge::pipeline::estimate_source_set(&cfg, &src).unwrap();
    assert_eq!(rep.sources.len(), 3);
    assert!(rep.joint.mean > 0.0);
    let narr = ioforge::pipeline::SourceSpec::parse(run.join("narrative/narrative.json").to_str().unwrap());
    let rep = ioforge::pipeline::estimate_source_set(&cfg, &narr).unwrap();
    for id in &s.truth.sources {
        assert!(rep.sources.contains(id));
    }
}

#[test]
fn same_seed_gives_identical_manifests() {
    let run = |d: &std::path::Path| {
        let (s, mut cfg) = common::fixture(d, 7, &["impact.warmup=200".into(), "impact.draws=200".into()]);
        common::run_pipeline(&mut cfg, &s);
        std::fs::read_to_string(cfg.run_path().join("manifest.json")).unwrap()
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (x, y) = (run(a.path()), run(b.path()));
    let diff: Vec<(&str, &str)> = x.lines().zip(y.lines()).filter(|(l, r)| l != r).collect();
    assert!(diff.is_empty(), "{diff:#?}");
    assert_eq!(x, y);
}
