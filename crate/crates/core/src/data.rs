//! Dataset files: JSON-lines with a self-describing header.
//!
//! Line 1 is a header recording the schema name, the generation parameters,
//! and the complete token-id layout (tag ids, reserved symbols, first content
//! id). Every following line is one episode record. Files written for
//! supervised training also carry the episode's gold trajectory, which is
//! re-derived and cross-checked on load so a stale or hand-edited file
//! cannot silently feed wrong targets into training.
//!
//! Readers validate structure eagerly: header fields must match the compiled
//! layout, token ids must be inside the declared vocabulary, and episode
//! invariants (query shape, evidence arity, answer/sufficiency agreement)
//! must hold. A file that passes `read_dataset` needs no further checking
//! downstream.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{gold_trajectory, DatasetSpec, Episode};
use crate::error::{Error, Result};
use crate::grammar::TrajectoryRecord;
use crate::vocab::{
    Tag, Vocabulary, CONTENT_BASE, DOC_SEP, HOP_1, HOP_2, INSUFFICIENT_TO_ANSWER,
    NO_RELEVANT_INFO,
};

pub const SCHEMA: &str = "evidence-qa-episodes/v1";

/// First line of every dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub schema: String,
    pub spec: DatasetSpec,
    /// Tag text to token id, e.g. `"<observe>" -> 0`.
    pub tags: BTreeMap<String, u32>,
    pub no_relevant_info: u32,
    pub insufficient_to_answer: u32,
    pub doc_sep: u32,
    pub hop_1: u32,
    pub hop_2: u32,
    pub content_base: u32,
}

impl DatasetHeader {
    pub fn new(spec: DatasetSpec) -> DatasetHeader {
        DatasetHeader {
            schema: SCHEMA.to_string(),
            spec,
            tags: Tag::ALL
                .into_iter()
                .map(|t| (t.text().to_string(), t.id()))
                .collect(),
            no_relevant_info: NO_RELEVANT_INFO,
            insufficient_to_answer: INSUFFICIENT_TO_ANSWER,
            doc_sep: DOC_SEP,
            hop_1: HOP_1,
            hop_2: HOP_2,
            content_base: CONTENT_BASE,
        }
    }

    /// Reject headers whose token layout disagrees with this build.
    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA {
            return Err(Error::HeaderMismatch(format!(
                "schema {:?}, expected {SCHEMA:?}",
                self.schema
            )));
        }
        let expected = DatasetHeader::new(self.spec.clone());
        if self.tags != expected.tags {
            return Err(Error::HeaderMismatch("tag id assignment differs".into()));
        }
        for (name, got, want) in [
            ("no_relevant_info", self.no_relevant_info, NO_RELEVANT_INFO),
            (
                "insufficient_to_answer",
                self.insufficient_to_answer,
                INSUFFICIENT_TO_ANSWER,
            ),
            ("doc_sep", self.doc_sep, DOC_SEP),
            ("hop_1", self.hop_1, HOP_1),
            ("hop_2", self.hop_2, HOP_2),
            ("content_base", self.content_base, CONTENT_BASE),
        ] {
            if got != want {
                return Err(Error::HeaderMismatch(format!(
                    "{name} is {got}, this build uses {want}"
                )));
            }
        }
        self.spec.validate()?;
        Ok(())
    }
}

/// One line after the header: an episode, plus its gold trajectory in files
/// meant for supervised training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    #[serde(flatten)]
    pub episode: Episode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<TrajectoryRecord>,
}

/// Structural invariants every stored episode must satisfy.
pub fn validate_episode(episode: &Episode, vocab: &Vocabulary) -> Result<()> {
    let fail = |msg: String| Err(Error::BadEpisode(msg));
    if episode.query.len() != 2 {
        return fail(format!("query has {} tokens, expected 2", episode.query.len()));
    }
    if episode.query[1] != HOP_1 && episode.query[1] != HOP_2 {
        return fail(format!("query marker {} is not a hop marker", episode.query[1]));
    }
    if episode.docs.is_empty() {
        return fail("episode has no documents".into());
    }
    for &id in episode
        .query
        .iter()
        .chain(episode.docs.iter().flatten())
        .chain(episode.gold_evidence.iter().flatten())
        .chain(episode.gold_answer.iter())
    {
        if !vocab.contains(id) {
            return Err(Error::TokenOutOfRange {
                id,
                size: vocab.size(),
            });
        }
    }
    if episode.gold_evidence.len() != episode.k() {
        return fail(format!(
            "{} gold evidence blocks for {} documents",
            episode.gold_evidence.len(),
            episode.k()
        ));
    }
    if episode.sufficient == episode.gold_answer.is_empty() {
        return fail(format!(
            "sufficient={} but gold answer length {}",
            episode.sufficient,
            episode.gold_answer.len()
        ));
    }
    Ok(())
}

/// Write a dataset file. With `with_gold`, each record carries the episode's
/// full-grammar gold trajectory.
pub fn write_dataset(
    path: &Path,
    header: &DatasetHeader,
    episodes: &[Episode],
    with_gold: bool,
) -> Result<()> {
    header.validate()?;
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut line = serde_json::to_string(header).map_err(|e| Error::json(path, e))?;
    line.push('\n');
    w.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
    for episode in episodes {
        let record = EpisodeRecord {
            episode: episode.clone(),
            trajectory: with_gold.then(|| {
                let gold = gold_trajectory(episode);
                TrajectoryRecord {
                    tokens: gold.tokens,
                    k: episode.k(),
                }
            }),
        };
        let mut line = serde_json::to_string(&record).map_err(|e| Error::json(path, e))?;
        line.push('\n');
        w.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Read and fully validate a dataset file.
pub fn read_dataset(path: &Path) -> Result<(DatasetHeader, Vec<Episode>)> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header_line = match lines.next() {
        Some(l) => l.map_err(|e| Error::io(path, e))?,
        None => return Err(Error::EmptyDataset("file")),
    };
    let header: DatasetHeader =
        serde_json::from_str(&header_line).map_err(|e| Error::json(path, e))?;
    header.validate()?;
    let vocab = header.spec.vocab()?;
    let mut episodes = Vec::new();
    for (index, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: EpisodeRecord =
            serde_json::from_str(&line).map_err(|e| Error::json(path, e))?;
        validate_episode(&record.episode, &vocab).map_err(|e| match e {
            Error::BadEpisode(msg) => Error::BadEpisode(format!("record {index}: {msg}")),
            other => other,
        })?;
        if let Some(stored) = &record.trajectory {
            let gold = gold_trajectory(&record.episode);
            if stored.k != record.episode.k() || stored.tokens != gold.tokens {
                return Err(Error::BadGold { index });
            }
        }
        episodes.push(record.episode);
    }
    if episodes.is_empty() {
        return Err(Error::EmptyDataset("episode list"));
    }
    Ok((header, episodes))
}
