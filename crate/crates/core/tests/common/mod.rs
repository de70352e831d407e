//! Synthetic pipeline fixtures shared by integration tests.
#![allow(dead_code)]

use std::path::Path;

use ioforge::pipeline::{run_stage, PipelineConfig, Stage};
use ioforge::synth::{synth_corpus, SynthCorpus, SynthCorpusSpec};
use ioforge::topics::TopicSummary;

pub const FIXTURE_CONFIG: &str = r#"
run_dir = "run"

[ingest]
tweets = "tweets.jsonl"
accounts = "accounts.jsonl"
known_io = "known_io.txt"
known_benign = "known_benign.txt"

[topics]
languages = ["en"]
k = 3
alpha = 0.1
iterations = 200

[label]
news = "news.txt"

[train]
n_trees = 50
cv_rounds = 5
"#;

/// Write a synthetic corpus and config into `dir` and load the config.
pub fn fixture(dir: &Path, seed: u64, overrides: &[String]) -> (SynthCorpus, PipelineConfig) {
    let s = synth_corpus(&SynthCorpusSpec::default(), seed).unwrap();
    s.write_to(dir).unwrap();
    std::fs::write(dir.join("config.toml"), FIXTURE_CONFIG).unwrap();
    let mut o = vec![format!("seed={seed}")];
    o.extend(overrides.iter().cloned());
    let cfg = PipelineConfig::load(&dir.join("config.toml"), &o).unwrap();
    (s, cfg)
}

/// The analyst step: the topic whose top words overlap most with the
/// planted narrative vocabulary.
pub fn pick_narrative_topic(cfg: &PipelineConfig, s: &SynthCorpus) -> usize {
    let text = std::fs::read_to_string(cfg.run_path().join("topics/topics_en.json")).unwrap();
    let topics: Vec<TopicSummary> = serde_json::from_str(&text).unwrap();
    let vocab = &s.truth.vocabularies[s.truth.narrative_topic];
    topics
        .iter()
        .max_by_key(|t| {
            (
                t.top_words.iter().filter(|w| vocab.contains(&w.token)).count(),
                std::cmp::Reverse(t.topic_index),
            )
        })
        .unwrap()
        .topic_index
}

/// All eleven stages, choosing the narrative topic after the topics stage.
pub fn run_pipeline(cfg: &mut PipelineConfig, s: &SynthCorpus) {
    for stage in Stage::ALL {
        if stage == Stage::SelectNarrative {
            cfg.narrative.topics = vec![pick_narrative_topic(cfg, s)];
        }
        run_stage(cfg, stage).unwrap_or_else(|e| panic!("{stage}: {e}"));
    }
}

/// Account ids ordered as in the report's impact table.
pub fn impact_ranking(cfg: &PipelineConfig) -> Vec<String> {
    let mut r = csv::Reader::from_path(cfg.run_path().join("report/table1.csv")).unwrap();
    let h = r.headers().unwrap().clone();
    let col = h.iter().position(|c| c == "account_id").unwrap();
    r.records().map(|rec| rec.unwrap()[col].to_string()).collect()
}
