//! TOML pipeline configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{PipelineError, Result, Stage};
use crate::causal::{ImputationMode, InfluenceUpdate, SamplerConfig};
use crate::features::SelectionSizes;
use crate::forest::{CvConfig, CvMode, ForestParams};
use crate::seed::derive_seed;
use crate::weaklabel::LabelMethod;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Output directory; relative paths resolve against the config file.
    pub run_dir: PathBuf,
    /// Master seed; every stage seed is derived from it.
    pub seed: u64,
    pub ingest: IngestConfig,
    pub topics: TopicsConfig,
    pub narrative: NarrativeConfig,
    pub label: LabelConfig,
    pub features: FeaturesConfig,
    pub train: TrainConfig,
    pub classify: ClassifyConfig,
    pub network: NetworkConfig,
    pub communities: CommunitiesConfig,
    pub impact: ImpactConfig,
    pub report: ReportConfig,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            run_dir: "run".into(),
            seed: 0,
            ingest: IngestConfig::default(),
            topics: TopicsConfig::default(),
            narrative: NarrativeConfig::default(),
            label: LabelConfig::default(),
            features: FeaturesConfig::default(),
            train: TrainConfig::default(),
            classify: ClassifyConfig::default(),
            network: NetworkConfig::default(),
            communities: CommunitiesConfig::default(),
            impact: ImpactConfig::default(),
            report: ReportConfig::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub tweets: PathBuf,
    pub accounts: Option<PathBuf>,
    pub known_io: Option<PathBuf>,
    pub known_benign: Option<PathBuf>,
    /// Case-insensitive substrings; empty keeps every tweet.
    pub keywords: Vec<String>,
    pub langs: Vec<String>,
    /// RFC 3339 bounds of the inclusive time window.
    pub start: Option<String>,
    pub end: Option<String>,
    pub cap_per_account: Option<usize>,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            tweets: "tweets.jsonl".into(),
            accounts: None,
            known_io: None,
            known_benign: None,
            keywords: Vec::new(),
            langs: Vec::new(),
            start: None,
            end: None,
            cap_per_account: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopicsConfig {
    /// One model per language; an empty list fits one model named "all".
    pub languages: Vec<String>,
    pub k: usize,
    pub k_per_language: BTreeMap<String, usize>,
    pub alpha: Option<f64>,
    pub beta: f64,
    pub iterations: usize,
    pub stopwords: Option<PathBuf>,
    pub top_words: usize,
}

impl Default for TopicsConfig {
    fn default() -> Self {
        TopicsConfig {
            languages: vec!["en".into()],
            k: 10,
            k_per_language: BTreeMap::new(),
            alpha: None,
            beta: 0.01,
            iterations: 500,
            stopwords: None,
            top_words: 15,
        }
    }
}

impl TopicsConfig {
    pub fn k_for(&self, lang: &str) -> usize {
        self.k_per_language.get(lang).copied().unwrap_or(self.k)
    }

    /// Model names: the configured languages, or "all".
    pub fn models(&self) -> Vec<String> {
        if self.languages.is_empty() {
            vec![ALL_LANGUAGES.to_string()]
        } else {
            self.languages.clone()
        }
    }
}

pub const ALL_LANGUAGES: &str = "all";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NarrativeConfig {
    /// Topic model to select from.
    pub language: String,
    /// Analyst-chosen topic indices; several are merged into one narrative.
    pub topics: Vec<usize>,
    /// Hashtag narrative; bypasses topic matching when set.
    pub hashtag: Option<String>,
    pub threshold: f64,
}

impl Default for NarrativeConfig {
    fn default() -> Self {
        NarrativeConfig {
            language: "en".into(),
            topics: Vec::new(),
            hashtag: None,
            threshold: crate::topics::DEFAULT_MATCH_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelConfig {
    /// News domains and account ids, one per line.
    pub news: Option<PathBuf>,
    pub method: LabelMethod,
    pub threshold: f64,
    pub sweep: Vec<f64>,
    /// Known IO / benign accounts override their weak labels in training.
    pub use_known_labels: bool,
}

impl Default for LabelConfig {
    fn default() -> Self {
        LabelConfig {
            news: None,
            method: LabelMethod::Em,
            threshold: 0.7,
            sweep: vec![0.5, 0.7, 0.9],
            use_known_labels: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturesConfig {
    pub min_ngram_count: u64,
    pub sizes: SelectionSizes,
}

impl Default for FeaturesConfig {
    fn default() -> Self {
        FeaturesConfig {
            min_ngram_count: crate::features::DEFAULT_MIN_NGRAM_COUNT,
            sizes: SelectionSizes::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub n_trees: usize,
    pub max_features: Option<usize>,
    pub min_samples_leaf: usize,
    pub max_depth: Option<usize>,
    pub cv_rounds: usize,
    pub test_fraction: f64,
    pub cv_mode: CvMode,
    pub op_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let cv = CvConfig::default();
        TrainConfig {
            n_trees: 100,
            max_features: None,
            min_samples_leaf: 1,
            max_depth: None,
            cv_rounds: cv.rounds,
            test_fraction: cv.test_fraction,
            cv_mode: cv.mode,
            op_threshold: cv.op_threshold,
        }
    }
}

impl TrainConfig {
    pub fn forest_params(&self, seed: u64) -> ForestParams {
        ForestParams {
            n_trees: self.n_trees,
            max_features: self.max_features,
            min_samples_leaf: self.min_samples_leaf,
            max_depth: self.max_depth,
            seed,
            ..Default::default()
        }
    }

    pub fn cv_config(&self, seed: u64) -> CvConfig {
        CvConfig {
            rounds: self.cv_rounds,
            test_fraction: self.test_fraction,
            mode: self.cv_mode,
            op_threshold: self.op_threshold,
            seed,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifyConfig {
    pub threshold: f64,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        ClassifyConfig { threshold: 0.6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub damping: f64,
    pub tolerance: f64,
    /// Keep only the n most active accounts.
    pub most_active: Option<usize>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            damping: crate::network::DEFAULT_DAMPING,
            tolerance: crate::network::DEFAULT_TOLERANCE,
            most_active: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CommunitiesConfig {
    pub b_min: usize,
    pub b_max: usize,
    pub sweeps: usize,
}

impl Default for CommunitiesConfig {
    fn default() -> Self {
        CommunitiesConfig {
            b_min: 1,
            b_max: 8,
            sweeps: 100,
        }
    }
}

/// Baseline assignment `z` against which single-source impacts are taken.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseAssignment {
    #[default]
    Zero,
    Observed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImpactConfig {
    pub n_hop: usize,
    pub chains: usize,
    pub warmup: usize,
    pub draws: usize,
    pub refresh_every: usize,
    pub adapt_every: usize,
    pub prior_sd: f64,
    pub sigma_prior_sd: f64,
    pub influence_update: InfluenceUpdate,
    pub imputation: ImputationMode,
    pub base: BaseAssignment,
    /// Posterior draws used for the impact estimands.
    pub max_draws: usize,
    pub ppc_draws: usize,
    pub degree_covariates: bool,
    pub community_covariates: bool,
}

impl Default for ImpactConfig {
    fn default() -> Self {
        let s = SamplerConfig::default();
        ImpactConfig {
            n_hop: s.n_hop,
            chains: s.chains,
            warmup: s.warmup,
            draws: s.draws,
            refresh_every: s.refresh_every,
            adapt_every: s.adapt_every,
            prior_sd: s.prior_sd,
            sigma_prior_sd: s.sigma_prior_sd,
            influence_update: s.influence_update,
            imputation: ImputationMode::Expected,
            base: BaseAssignment::Zero,
            max_draws: 1000,
            ppc_draws: 200,
            degree_covariates: true,
            community_covariates: true,
        }
    }
}

impl ImpactConfig {
    pub fn sampler(&self, seed: u64) -> SamplerConfig {
        SamplerConfig {
            n_hop: self.n_hop,
            chains: self.chains,
            warmup: self.warmup,
            draws: self.draws,
            refresh_every: self.refresh_every,
            adapt_every: self.adapt_every,
            prior_sd: self.prior_sd,
            sigma_prior_sd: self.sigma_prior_sd,
            influence_update: self.influence_update,
            seed,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub histogram_bins: usize,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig { histogram_bins: 10 }
    }
}

impl PipelineConfig {
    /// Parse TOML, apply `key.path=value` overrides, then validate.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut value: toml::Value = toml::from_str(text)?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: PipelineConfig = value.try_into()?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load a config file; relative paths resolve against its directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text, overrides)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        if cfg.base_dir.as_os_str().is_empty() {
            cfg.base_dir = PathBuf::from(".");
        }
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn run_path(&self) -> PathBuf {
        self.resolve(&self.run_dir)
    }

    pub fn stage_seed(&self, stage: Stage) -> u64 {
        derive_seed(self.seed, stage.name())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(PipelineError::Config(msg));
        if self.topics.k_per_language.values().chain([&self.topics.k]).any(|&k| k < 2) {
            return bad("topics.k must be at least 2".into());
        }
        if self.topics.iterations == 0 {
            return bad("topics.iterations must be positive".into());
        }
        if !(self.narrative.threshold > 0.0 && self.narrative.threshold <= 1.0) {
            return bad(format!("narrative.threshold must lie in (0, 1], got {}", self.narrative.threshold));
        }
        for (name, t) in [
            ("label.threshold", self.label.threshold),
            ("classify.threshold", self.classify.threshold),
            ("train.op_threshold", self.train.op_threshold),
        ] {
            if !(t > 0.0 && t < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {t}"));
            }
        }
        if self.label.sweep.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
            return bad("label.sweep thresholds must lie in (0, 1)".into());
        }
        if self.train.n_trees == 0 || self.train.cv_rounds == 0 {
            return bad("train.n_trees and train.cv_rounds must be positive".into());
        }
        if self.communities.b_min == 0 || self.communities.b_min > self.communities.b_max {
            return bad("communities requires 1 <= b_min <= b_max".into());
        }
        if !(self.network.damping > 0.0 && self.network.damping < 1.0) {
            return bad("network.damping must lie in (0, 1)".into());
        }
        if self.impact.n_hop == 0 || self.impact.chains == 0 || self.impact.draws == 0 {
            return bad("impact.n_hop, impact.chains and impact.draws must be positive".into());
        }
        if self.impact.max_draws == 0 {
            return bad("impact.max_draws must be positive".into());
        }
        if self.report.histogram_bins == 0 {
            return bad("report.histogram_bins must be positive".into());
        }
        if self.ingest.cap_per_account == Some(0) {
            return bad("ingest.cap_per_account must be positive".into());
        }
        for (name, s) in [("ingest.start", &self.ingest.start), ("ingest.end", &self.ingest.end)] {
            if let Some(s) = s {
                if crate::corpus::iso8601::parse(s).is_none() {
                    return bad(format!("{name} is not an RFC 3339 timestamp: {s:?}"));
                }
            }
        }
        Ok(())
    }
}

/// Set `a.b.c=value`; the value is parsed as a TOML literal, falling back to
/// a bare string.
fn apply_override(root: &mut toml::Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| PipelineError::Override(format!("expected key=value, got {spec:?}")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(PipelineError::Override(format!("bad key {key:?}")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut node = root;
    for p in &parts[..parts.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| PipelineError::Override(format!("{key:?} crosses a non-table value")))?;
        node = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    node.as_table_mut()
        .ok_or_else(|| PipelineError::Override(format!("{key:?} crosses a non-table value")))?
        .insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_uses_defaults() {
        let cfg = PipelineConfig::from_toml("", &[]).unwrap();
        assert_eq!(cfg.train.n_trees, 100);
        assert_eq!(cfg.label.sweep, vec![0.5, 0.7, 0.9]);
        assert_eq!(cfg.impact.n_hop, 2);
        assert_eq!(cfg.features.sizes, SelectionSizes::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(PipelineConfig::from_toml("bogus = 1", &[]).is_err());
        assert!(PipelineConfig::from_toml("[train]\nn_tree = 5", &[]).is_err());
        assert!(PipelineConfig::from_toml("", &["impact.nhop=3".into()]).is_err());
    }

    #[test]
    fn overrides_parse_literals_and_strings() {
        let cfg = PipelineConfig::from_toml(
            "seed = 1\n[topics]\nk = 4\n",
            &[
                "topics.k=3".into(),
                "narrative.topics=[0, 2]".into(),
                "narrative.hashtag=leaks".into(),
                "ingest.keywords=[\"macron\"]".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.topics.k, 3);
        assert_eq!(cfg.narrative.topics, vec![0, 2]);
        assert_eq!(cfg.narrative.hashtag.as_deref(), Some("leaks"));
        assert_eq!(cfg.ingest.keywords, vec!["macron"]);
        assert!(PipelineConfig::from_toml("", &["novalue".into()]).is_err());
        assert!(PipelineConfig::from_toml("seed = 1", &["seed.x=2".into()]).is_err());
    }

    #[test]
    fn validation_catches_bad_ranges() {
        assert!(PipelineConfig::from_toml("[topics]\nk = 1", &[]).is_err());
        assert!(PipelineConfig::from_toml("[label]\nthreshold = 1.0", &[]).is_err());
        assert!(PipelineConfig::from_toml("[communities]\nb_min = 3\nb_max = 2", &[]).is_err());
        assert!(PipelineConfig::from_toml("[ingest]\nstart = \"yesterday\"", &[]).is_err());
    }

    #[test]
    fn stage_seeds_are_distinct_and_follow_the_master_seed() {
        let a = PipelineConfig::from_toml("seed = 5", &[]).unwrap();
        let b = PipelineConfig::from_toml("seed = 6", &[]).unwrap();
        let seeds: std::collections::BTreeSet<u64> = Stage::ALL.iter().map(|&s| a.stage_seed(s)).collect();
        assert_eq!(seeds.len(), Stage::ALL.len());
        assert_ne!(a.stage_seed(Stage::Impact), b.stage_seed(Stage::Impact));
    }
}
