//! Joint impact of an analyst-chosen source set, evaluated on a completed
//! impact stage.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::stages::{original_posters, ImpactRow, NetworkArtifact, COVARIATES, IMPACT, NARRATIVE, NETWORK, POSTERIOR};
use super::{read_file, write_file, PipelineConfig, PipelineError, Result};
use crate::causal::{posterior_set_impact, Covariates, Influence, Posterior};
use crate::corpus::{ingest_jsonl, TruthLists};
use crate::seed::{derive_seed, digest_bytes};
use crate::topics::Narrative;

/// Which accounts to switch on as sources.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SourceSpec {
    Ids(Vec<String>),
    /// Newline-delimited account ids.
    IdFile(PathBuf),
    /// A narrative JSON (for example a hashtag narrative); its original
    /// posters become the sources.
    NarrativeFile(PathBuf),
}

impl SourceSpec {
    /// An existing `.json` file is a narrative, any other existing file an id
    /// list, and anything else a comma-separated list of ids.
    pub fn parse(s: &str) -> Self {
        let p = Path::new(s);
        if p.is_file() {
            if p.extension().is_some_and(|e| e == "json") {
                SourceSpec::NarrativeFile(p.to_path_buf())
            } else {
                SourceSpec::IdFile(p.to_path_buf())
            }
        } else {
            SourceSpec::Ids(
                s.split(',')
                    .map(str::trim)
                    .filter(|x| !x.is_empty())
                    .map(str::to_string)
                    .collect(),
            )
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSetReport {
    pub sources: Vec<String>,
    /// Requested accounts absent from the narrative network.
    pub not_in_network: Vec<String>,
    /// Mean per-account outcome with all sources on versus none.
    pub joint: Summary,
    /// Single-source impacts from the impact stage.
    pub single: BTreeMap<String, Summary>,
}

fn require(run_dir: &Path, rel: &str, needs: &'static str) -> Result<Vec<u8>> {
    let path = run_dir.join(rel);
    if !path.is_file() {
        return Err(PipelineError::MissingArtifact {
            stage: "estimand",
            needs,
            path: rel.to_string(),
        });
    }
    read_file(&path)
}

fn resolve_ids(cfg: &PipelineConfig, spec: &SourceSpec) -> Result<Vec<String>> {
    let run_dir = cfg.run_path();
    Ok(match spec {
        SourceSpec::Ids(ids) => ids.clone(),
        SourceSpec::IdFile(p) => String::from_utf8_lossy(&read_file(p)?)
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_string)
            .collect(),
        SourceSpec::NarrativeFile(p) => {
            let narrative: Narrative = serde_json::from_slice(&read_file(p)?)?;
            require(&run_dir, super::stages::TWEETS, "ingest")?;
            let corpus = ingest_jsonl(
                &run_dir.join(super::stages::TWEETS),
                Some(&run_dir.join(super::stages::ACCOUNTS)),
                &TruthLists::default(),
            )?
            .corpus;
            original_posters(&corpus, &narrative).into_iter().collect()
        }
    })
}

/// Evaluate the joint source-set effect and write it under
/// `estimands/` in the run directory.
pub fn estimate_source_set(cfg: &PipelineConfig, spec: &SourceSpec) -> Result<SourceSetReport> {
    let run_dir = cfg.run_path();
    let post: Posterior = serde_json::from_slice(&require(&run_dir, POSTERIOR, "impact")?)?;
    let x: Covariates = serde_json::from_slice(&require(&run_dir, COVARIATES, "impact")?)?;
    let art: NetworkArtifact = serde_json::from_slice(&require(&run_dir, NETWORK, "network")?)?;
    require(&run_dir, NARRATIVE, "select-narrative")?;
    let impact: Vec<ImpactRow> = csv::Reader::from_reader(require(&run_dir, IMPACT, "impact")?.as_slice())
        .deserialize()
        .collect::<std::result::Result<_, _>>()?;
    let net = &art.network;
    let counts = Influence::from_network(net);

    let requested: BTreeSet<String> = resolve_ids(cfg, spec)?.into_iter().collect();
    if requested.is_empty() {
        return Err(PipelineError::Empty("no source accounts were given".into()));
    }
    let (present, missing): (Vec<String>, Vec<String>) =
        requested.into_iter().partition(|id| net.index_of(id).is_some());
    if present.is_empty() {
        return Err(PipelineError::Empty("none of the sources is in the narrative network".into()));
    }
    let idx: Vec<usize> = present.iter().map(|id| net.index_of(id).expect("present")).collect();
    let seed = derive_seed(cfg.stage_seed(super::Stage::Impact), "source-set");
    let joint = posterior_set_impact(&post, &counts, &x, &idx, cfg.impact.imputation, cfg.impact.max_draws, seed)?;
    let single = idx
        .iter()
        .zip(&present)
        .map(|(&i, id)| {
            let r = &impact[i];
            (
                id.clone(),
                Summary {
                    mean: r.zeta_mean,
                    lo: r.zeta_lo,
                    hi: r.zeta_hi,
                },
            )
        })
        .collect();
    let report = SourceSetReport {
        sources: present,
        not_in_network: missing,
        joint: Summary {
            mean: joint.mean,
            lo: joint.lo,
            hi: joint.hi,
        },
        single,
    };
    let key = digest_bytes(report.sources.join("\n").as_bytes());
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    write_file(&run_dir.join(format!("estimands/sources_{}.json", &key[..12])), text.as_bytes())?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn source_specs_parse_by_shape() {
        assert_eq!(
            SourceSpec::parse("a1, a2,,a3"),
            SourceSpec::Ids(vec!["a1".into(), "a2".into(), "a3".into()])
        );
        let dir = tempfile::tempdir().unwrap();
        let ids = dir.path().join("ids.txt");
        let narr = dir.path().join("n.json");
        std::fs::write(&ids, "a1\n").unwrap();
        std::fs::write(&narr, "{}").unwrap();
        assert_eq!(SourceSpec::parse(ids.to_str().unwrap()), SourceSpec::IdFile(ids.clone()));
        assert_eq!(SourceSpec::parse(narr.to_str().unwrap()), SourceSpec::NarrativeFile(narr.clone()));
    }
}
