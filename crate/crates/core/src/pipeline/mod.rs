//! Stage orchestration: configuration, flat-file artifacts, manifests and
//! reports.
//!
//! Each stage reads the artifacts of its upstream stages from the run
//! directory and writes its own. `manifest.json` at the run root records the
//! seed, config digest and input/output digests of every completed stage.

mod config;
mod estimand;
mod report;
mod stages;

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{
    BaseAssignment, ClassifyConfig, CommunitiesConfig, FeaturesConfig, ImpactConfig, IngestConfig, LabelConfig,
    NarrativeConfig, NetworkConfig, PipelineConfig, ReportConfig, TopicsConfig, TrainConfig, ALL_LANGUAGES,
};
pub use estimand::{estimate_source_set, SourceSetReport, SourceSpec, Summary};
pub use report::{score_histogram, HistogramBin};
pub use stages::{ImpactRow, NetworkArtifact, ScoreRow, TrainingLabel};

use crate::seed::digest_bytes;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("config parse: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("override: {0}")]
    Override(String),
    #[error("stage `{stage}` needs {path}; run `ioforge {needs}` first")]
    MissingArtifact {
        stage: &'static str,
        needs: &'static str,
        path: String,
    },
    #[error("unknown stage {0:?}")]
    UnknownStage(String),
    #[error("select-narrative needs topic indices (--topics) or a hashtag (--hashtag)")]
    NoNarrativeSelection,
    #[error("{0}")]
    Empty(String),
    #[error("malformed artifact {path}: {msg}")]
    Malformed { path: String, msg: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
    #[error(transparent)]
    Topic(#[from] crate::topics::TopicError),
    #[error(transparent)]
    Label(#[from] crate::weaklabel::LabelError),
    #[error(transparent)]
    Feature(#[from] crate::features::FeatureError),
    #[error(transparent)]
    Forest(#[from] crate::forest::ForestError),
    #[error(transparent)]
    Network(#[from] crate::network::NetworkError),
    #[error(transparent)]
    Causal(#[from] crate::causal::CausalError),
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Ingest,
    Topics,
    SelectNarrative,
    Label,
    Featurize,
    Train,
    Classify,
    Network,
    Communities,
    Impact,
    Report,
}

impl Stage {
    /// Execution order; every stage comes after its upstream stages.
    pub const ALL: [Stage; 11] = [
        Stage::Ingest,
        Stage::Topics,
        Stage::SelectNarrative,
        Stage::Label,
        Stage::Featurize,
        Stage::Train,
        Stage::Classify,
        Stage::Network,
        Stage::Communities,
        Stage::Impact,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Topics => "topics",
            Stage::SelectNarrative => "select-narrative",
            Stage::Label => "label",
            Stage::Featurize => "featurize",
            Stage::Train => "train",
            Stage::Classify => "classify",
            Stage::Network => "network",
            Stage::Communities => "communities",
            Stage::Impact => "impact",
            Stage::Report => "report",
        }
    }

    /// Stages whose artifacts this stage reads.
    pub fn upstream(self) -> &'static [Stage] {
        use Stage::*;
        match self {
            Ingest => &[],
            Topics => &[Ingest],
            SelectNarrative => &[Ingest, Topics],
            Label => &[Ingest],
            Featurize => &[Ingest, Label],
            Train => &[Label, Featurize],
            Classify => &[Ingest, Featurize, Train],
            Network => &[Ingest, SelectNarrative],
            Communities => &[Network],
            Impact => &[Ingest, SelectNarrative, Network, Communities],
            Report => &[Ingest, Classify, Network, Communities, Impact],
        }
    }

    fn config_digest(self, cfg: &PipelineConfig) -> Result<String> {
        let v = match self {
            Stage::Ingest => serde_json::to_value(&cfg.ingest)?,
            Stage::Topics => serde_json::to_value(&cfg.topics)?,
            Stage::SelectNarrative => serde_json::to_value((&cfg.narrative, &cfg.topics.stopwords))?,
            Stage::Label => serde_json::to_value(&cfg.label)?,
            Stage::Featurize => serde_json::to_value((&cfg.features, &cfg.topics.stopwords, &cfg.label.news))?,
            Stage::Train => serde_json::to_value(&cfg.train)?,
            Stage::Classify => serde_json::to_value(&cfg.classify)?,
            Stage::Network => serde_json::to_value(&cfg.network)?,
            Stage::Communities => serde_json::to_value(&cfg.communities)?,
            Stage::Impact => serde_json::to_value(&cfg.impact)?,
            Stage::Report => serde_json::to_value((&cfg.report, &cfg.classify))?,
        };
        Ok(digest_bytes(serde_json::to_string(&v)?.as_bytes()))
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| PipelineError::UnknownStage(s.to_string()))
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RUN_LOG_FILE: &str = "run.log";
const MANIFEST_FORMAT: &str = "ioforge-manifest/1";
const EXTERNAL_PREFIX: &str = "external:";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub seed: u64,
    pub config_digest: String,
    /// Run-relative artifact paths, or `external:<path>` for input files.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

/// Deterministic by construction: no timestamps or host details, so that
/// identical inputs, config and seed give identical bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub tool_version: String,
    pub master_seed: u64,
    pub stages: BTreeMap<String, StageRecord>,
}

impl RunManifest {
    fn new(master_seed: u64) -> Self {
        RunManifest {
            format: MANIFEST_FORMAT.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            master_seed,
            stages: BTreeMap::new(),
        }
    }

    pub fn load(run_dir: &Path) -> Result<Option<Self>> {
        let path = run_dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let text = read_file(&path)?;
        Ok(Some(serde_json::from_slice(&text)?))
    }

    fn save(&self, run_dir: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_file(&run_dir.join(MANIFEST_FILE), text.as_bytes())
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let io = |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    std::fs::write(path, bytes).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Per-stage view of the run directory that records what is read and
/// written.
pub(crate) struct StageContext<'a> {
    pub cfg: &'a PipelineConfig,
    pub stage: Stage,
    pub seed: u64,
    run_dir: PathBuf,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

impl<'a> StageContext<'a> {
    fn new(cfg: &'a PipelineConfig, stage: Stage) -> Self {
        StageContext {
            cfg,
            stage,
            seed: cfg.stage_seed(stage),
            run_dir: cfg.run_path(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    /// Read an upstream artifact.
    pub fn artifact(&mut self, producer: Stage, rel: &str) -> Result<Vec<u8>> {
        debug_assert!(self.stage.upstream().contains(&producer), "{} reads {producer}", self.stage);
        let path = self.run_dir.join(rel);
        if !path.is_file() {
            return Err(PipelineError::MissingArtifact {
                stage: self.stage.name(),
                needs: producer.name(),
                path: rel.to_string(),
            });
        }
        let bytes = read_file(&path)?;
        self.inputs.insert(rel.to_string(), digest_bytes(&bytes));
        Ok(bytes)
    }

    pub fn artifact_json<T: serde::de::DeserializeOwned>(&mut self, producer: Stage, rel: &str) -> Result<T> {
        let bytes = self.artifact(producer, rel)?;
        serde_json::from_slice(&bytes).map_err(|e| PipelineError::Malformed {
            path: rel.to_string(),
            msg: e.to_string(),
        })
    }

    pub fn artifact_csv<T: serde::de::DeserializeOwned>(&mut self, producer: Stage, rel: &str) -> Result<Vec<T>> {
        let bytes = self.artifact(producer, rel)?;
        csv::Reader::from_reader(bytes.as_slice())
            .deserialize()
            .collect::<std::result::Result<Vec<T>, _>>()
            .map_err(|e| PipelineError::Malformed {
                path: rel.to_string(),
                msg: e.to_string(),
            })
    }

    /// Read and digest an external input file given as configured.
    pub fn external(&mut self, configured: &Path) -> Result<(PathBuf, Vec<u8>)> {
        let path = self.cfg.resolve(configured);
        let bytes = read_file(&path)?;
        self.inputs
            .insert(format!("{EXTERNAL_PREFIX}{}", configured.display()), digest_bytes(&bytes));
        Ok((path, bytes))
    }

    /// Absolute path of an output, with its directory created. Call
    /// [`StageContext::record`] once the file is written.
    pub fn output_path(&self, rel: &str) -> Result<PathBuf> {
        let path = self.run_dir.join(rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|source| PipelineError::Io {
                path: dir.to_path_buf(),
                source,
            })?;
        }
        Ok(path)
    }

    pub fn record(&mut self, rel: &str) -> Result<()> {
        let bytes = read_file(&self.run_dir.join(rel))?;
        self.outputs.insert(rel.to_string(), digest_bytes(&bytes));
        Ok(())
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        write_file(&self.output_path(rel)?, bytes)?;
        self.outputs.insert(rel.to_string(), digest_bytes(bytes));
        Ok(())
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(rel, text.as_bytes())
    }

    /// Serialize rows with a header derived from `T`.
    pub fn write_csv_rows<T: Serialize>(&mut self, rel: &str, rows: &[T]) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| PipelineError::Io {
            path: rel.into(),
            source: e.into_error(),
        })?;
        self.write(rel, &bytes)
    }

    /// Write through a callback that fills an in-memory buffer.
    pub fn write_with<E>(&mut self, rel: &str, f: impl FnOnce(&mut Vec<u8>) -> std::result::Result<(), E>) -> Result<()>
    where
        PipelineError: From<E>,
    {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(rel, &buf)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageOutcome {
    pub stage: Stage,
    /// True when the stage was up to date and not recomputed.
    pub skipped: bool,
    pub summary: String,
}

fn append_log(run_dir: &Path, line: &str) -> Result<()> {
    let path = run_dir.join(RUN_LOG_FILE);
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|source| PipelineError::Io {
            path: path.clone(),
            source,
        })?;
    writeln!(f, "{line}").map_err(|source| PipelineError::Io { path, source })
}

/// Run one stage unconditionally and record it in the manifest.
pub fn run_stage(cfg: &PipelineConfig, stage: Stage) -> Result<StageOutcome> {
    let run_dir = cfg.run_path();
    std::fs::create_dir_all(&run_dir).map_err(|source| PipelineError::Io {
        path: run_dir.clone(),
        source,
    })?;
    let mut ctx = StageContext::new(cfg, stage);
    let summary = match stages::run(&mut ctx) {
        Ok(s) => s,
        Err(e) => {
            append_log(&run_dir, &format!("{stage}: failed: {e}"))?;
            return Err(e);
        }
    };
    let record = StageRecord {
        seed: ctx.seed,
        config_digest: stage.config_digest(cfg)?,
        inputs: ctx.inputs,
        outputs: ctx.outputs,
    };
    let mut manifest = match RunManifest::load(&run_dir)? {
        Some(m) if m.format == MANIFEST_FORMAT => m,
        _ => RunManifest::new(cfg.seed),
    };
    manifest.master_seed = cfg.seed;
    manifest.tool_version = env!("CARGO_PKG_VERSION").into();
    manifest.stages.insert(stage.name().to_string(), record);
    manifest.save(&run_dir)?;
    append_log(&run_dir, &format!("{stage}: {summary}"))?;
    Ok(StageOutcome {
        stage,
        skipped: false,
        summary,
    })
}

fn digest_matches(path: &Path, expected: &str) -> bool {
    std::fs::read(path).is_ok_and(|b| digest_bytes(&b) == expected)
}

/// Whether the manifest shows `stage` completed with the current config,
/// seed and inputs, and its outputs are untouched.
pub fn is_up_to_date(cfg: &PipelineConfig, stage: Stage) -> Result<bool> {
    let run_dir = cfg.run_path();
    let Some(manifest) = RunManifest::load(&run_dir)? else {
        return Ok(false);
    };
    let Some(rec) = manifest.stages.get(stage.name()) else {
        return Ok(false);
    };
    if rec.seed != cfg.stage_seed(stage) || rec.config_digest != stage.config_digest(cfg)? {
        return Ok(false);
    }
    let inputs_ok = rec.inputs.iter().all(|(k, d)| match k.strip_prefix(EXTERNAL_PREFIX) {
        Some(p) => digest_matches(&cfg.resolve(Path::new(p)), d),
        None => digest_matches(&run_dir.join(k), d),
    });
    let outputs_ok = rec.outputs.iter().all(|(k, d)| digest_matches(&run_dir.join(k), d));
    Ok(inputs_ok && outputs_ok)
}

/// Run every stage in order, skipping stages that are up to date unless
/// `force` is set. A recomputed stage invalidates its dependents through
/// their input digests.
pub fn run_all(cfg: &PipelineConfig, force: bool) -> Result<Vec<StageOutcome>> {
    let mut out = Vec::new();
    for stage in Stage::ALL {
        if !force && is_up_to_date(cfg, stage)? {
            append_log(&cfg.run_path(), &format!("{stage}: up to date"))?;
            out.push(StageOutcome {
                stage,
                skipped: true,
                summary: "up to date".into(),
            });
            continue;
        }
        out.push(run_stage(cfg, stage)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_order_respects_dependencies() {
        for (i, s) in Stage::ALL.iter().enumerate() {
            for up in s.upstream() {
                let j = Stage::ALL.iter().position(|x| x == up).unwrap();
                assert!(j < i, "{s} runs before {up}");
            }
            assert_eq!(s.name().parse::<Stage>().unwrap(), *s);
        }
        assert!("bogus".parse::<Stage>().is_err());
    }

    #[test]
    fn missing_artifact_names_the_upstream_stage() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = PipelineConfig::default();
        cfg.base_dir = dir.path().to_path_buf();
        let err = run_stage(&cfg, Stage::Classify).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, PipelineError::MissingArtifact { .. }), "{msg}");
        assert!(msg.contains("ioforge train"), "{msg}");
        assert!(!is_up_to_date(&cfg, Stage::Classify).unwrap());
    }
}
