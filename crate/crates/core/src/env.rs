//! Synthetic multi-document evidence-QA environment.
//!
//! An episode retrieves k documents for a key-lookup query. Each document is
//! a fixed-length token sequence: a front-aligned region of key-value pairs
//! (key at even offsets, value immediately after) padded with noise symbols.
//! The query is a key plus a hop marker. One-hop episodes answer with the
//! value paired to the query key; two-hop episodes chain through an
//! intermediate link (key -> mid, mid -> answer, in two distinct documents).
//! Insufficient episodes omit the key entirely, or (two-hop only, half the
//! time) plant the first link with a dead-end value.
//!
//! Symbol discipline makes lookups unambiguous: all key slots in an episode
//! hold distinct symbols, non-link values never collide with keys, and noise
//! never collides with keys, values, or the query key. Consequently "probe
//! appears at an even document offset" identifies a pair uniquely, and
//! sufficiency is a pure function of (query, documents) - which is what the
//! evaluation harness' context classifier and its brute-force oracle both
//! rely on.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::{Grammar, TaggedTrajectory};
use crate::rng::{stream, Purpose};
use crate::vocab::{Vocabulary, DOC_SEP, HOP_1, HOP_2, INSUFFICIENT_TO_ANSWER, NO_RELEVANT_INFO};

// ---------------------------------------------------------------------------
// Episode
// ---------------------------------------------------------------------------

/// One retrieval episode. `gold_evidence[i]` holds the matching pair's tokens
/// for document i, or is empty when document i contributes nothing to the
/// derivation. `gold_answer` is empty iff the episode is insufficient (no
/// true answer exists; scoring substitutes the reserved abstention token).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Episode {
    /// `[key, hop_marker]`.
    pub query: Vec<u32>,
    pub docs: Vec<Vec<u32>>,
    pub gold_evidence: Vec<Vec<u32>>,
    pub gold_answer: Vec<u32>,
    pub sufficient: bool,
    pub hops: u8,
}

impl Episode {
    pub fn k(&self) -> usize {
        self.docs.len()
    }

    pub fn query_key(&self) -> u32 {
        self.query[0]
    }

    /// Documents whose gold evidence is non-empty (relevance labels y_i).
    pub fn relevance(&self) -> Vec<bool> {
        self.gold_evidence.iter().map(|e| !e.is_empty()).collect()
    }
}

/// Flatten an episode for policy conditioning:
/// `query ++ SEP ++ doc_1 ++ SEP ++ ... ++ doc_k ++ SEP`.
pub fn encode_episode(episode: &Episode) -> Vec<u32> {
    let mut enc = Vec::with_capacity(
        episode.query.len() + 1 + episode.docs.iter().map(|d| d.len() + 1).sum::<usize>(),
    );
    enc.extend_from_slice(&episode.query);
    enc.push(DOC_SEP);
    for doc in &episode.docs {
        enc.extend_from_slice(doc);
        enc.push(DOC_SEP);
    }
    enc
}

/// Value paired to `probe` in one document: first even offset holding the
/// probe, value immediately after. Symbol discipline guarantees at most one
/// hit per episode.
pub fn doc_lookup(doc: &[u32], probe: u32) -> Option<u32> {
    doc.iter()
        .step_by(2)
        .position(|&t| t == probe)
        .and_then(|i| doc.get(2 * i + 1).copied())
}

/// First pair match for `probe` across all documents, with the document index.
pub fn chain_lookup(docs: &[Vec<u32>], probe: u32) -> Option<(usize, u32)> {
    docs.iter()
        .enumerate()
        .find_map(|(i, d)| doc_lookup(d, probe).map(|v| (i, v)))
}

// ---------------------------------------------------------------------------
// Dataset spec and generation
// ---------------------------------------------------------------------------

/// Generation parameters. `k` is drawn uniformly from `k_min..=k_max` per
/// episode; the default pins k = 3.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub k_min: usize,
    pub k_max: usize,
    pub vocab_size: u32,
    pub doc_len: usize,
    pub distractor_pairs: usize,
    pub insufficiency_rate: f64,
    pub two_hop_rate: f64,
    pub episodes: usize,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            k_min: 3,
            k_max: 3,
            vocab_size: 64,
            doc_len: 8,
            distractor_pairs: 2,
            insufficiency_rate: 0.3,
            two_hop_rate: 0.2,
            episodes: 1000,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    /// Pairs per document: every document carries the same count, so pair
    /// slots sit at identical offsets whether or not a document hosts a link.
    pub fn pairs_per_doc(&self) -> usize {
        self.distractor_pairs + 1
    }

    pub fn vocab(&self) -> Result<Vocabulary> {
        Vocabulary::new(self.vocab_size)
    }

    pub fn validate(&self) -> Result<()> {
        let vocab = self.vocab()?;
        if self.k_min < 1 || self.k_min > self.k_max {
            return Err(Error::Config(format!(
                "document count range {}..={} is invalid",
                self.k_min, self.k_max
            )));
        }
        let pairs = self.pairs_per_doc();
        if self.doc_len < 2 * pairs {
            return Err(Error::DocTooShort {
                doc_len: self.doc_len,
                pairs,
            });
        }
        for (name, rate) in [
            ("insufficiency_rate", self.insufficiency_rate),
            ("two_hop_rate", self.two_hop_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::Config(format!("{name} {rate} outside [0, 1]")));
            }
        }
        // Distinct symbols drawn per episode: one key and one value per pair
        // slot plus spare query/answer symbols.
        let need = 2 * self.k_max * pairs + 2;
        let pool = vocab.content_ids().len();
        if pool < need {
            return Err(Error::Config(format!(
                "vocabulary provides {pool} content symbols but k_max={} needs {need}",
                self.k_max
            )));
        }
        if self.episodes == 0 {
            return Err(Error::Config("episode count must be positive".into()));
        }
        Ok(())
    }
}

/// Draw one episode. The rng is consumed in a fixed documented order (k, hop,
/// sufficiency, symbol batch, link placement, noise), so generation is
/// reproducible from the stream alone.
pub fn generate_episode(spec: &DatasetSpec, rng: &mut ChaCha8Rng) -> Result<Episode> {
    spec.validate()?;
    let vocab = spec.vocab()?;
    let k = rng.gen_range(spec.k_min..=spec.k_max);
    let pairs = spec.pairs_per_doc();
    let slots = k * pairs;

    let hops: u8 = if k >= 2 && rng.gen::<f64>() < spec.two_hop_rate {
        2
    } else {
        1
    };
    let sufficient = rng.gen::<f64>() >= spec.insufficiency_rate;
    // Two-hop insufficiency: half "first link present, dead end", half "no
    // links at all".
    let dead_end_link = !sufficient && hops == 2 && rng.gen_bool(0.5);

    // One batch of distinct content symbols: keys for every pair slot, values
    // for every pair slot, plus spares for a foreign query key and the answer.
    let pool: Vec<u32> = vocab.content_ids().collect();
    let batch: Vec<u32> = rand::seq::index::sample(rng, pool.len(), 2 * slots + 2)
        .into_iter()
        .map(|i| pool[i])
        .collect();
    let keys = &batch[0..slots];
    let mut values: Vec<u32> = batch[slots..2 * slots].to_vec();
    let spare_query = batch[2 * slots];

    let slot_of = |doc: usize, pair: usize| doc * pairs + pair;

    // Link placement.
    let g1 = rng.gen_range(0..k);
    let s1 = rng.gen_range(0..pairs);
    let (g2, s2) = if k >= 2 {
        let mut g2 = rng.gen_range(0..k - 1);
        if g2 >= g1 {
            g2 += 1;
        }
        (g2, rng.gen_range(0..pairs))
    } else {
        (g1, s1)
    };

    let query_key;
    let mut gold_evidence = vec![Vec::new(); k];
    let mut gold_answer = Vec::new();
    if sufficient {
        query_key = keys[slot_of(g1, s1)];
        if hops == 1 {
            let answer = values[slot_of(g1, s1)];
            gold_evidence[g1] = vec![query_key, answer];
            gold_answer = vec![answer];
        } else {
            let mid = keys[slot_of(g2, s2)];
            values[slot_of(g1, s1)] = mid;
            let answer = values[slot_of(g2, s2)];
            gold_evidence[g1] = vec![query_key, mid];
            gold_evidence[g2] = vec![mid, answer];
            gold_answer = vec![answer];
        }
    } else if dead_end_link {
        // First link present; its value is a non-key symbol, so the chain
        // stops after one step and no document contributes gold evidence.
        query_key = keys[slot_of(g1, s1)];
    } else {
        query_key = spare_query;
    }

    // Materialize documents: pair region then noise. Noise avoids keys,
    // values and the query key, so an even-offset scan for any symbol a
    // chain can ever probe (the query key, then values it reads) only hits
    // genuine pair slots. In particular a dead-end link's value must not
    // resurface as noise and fabricate a second hop.
    let hop_marker = if hops == 2 { HOP_2 } else { HOP_1 };
    let mut docs = Vec::with_capacity(k);
    for d in 0..k {
        let mut doc = Vec::with_capacity(spec.doc_len);
        for p in 0..pairs {
            doc.push(keys[slot_of(d, p)]);
            doc.push(values[slot_of(d, p)]);
        }
        while doc.len() < spec.doc_len {
            let sym = loop {
                let cand = pool[rng.gen_range(0..pool.len())];
                if !keys.contains(&cand) && !values.contains(&cand) && cand != query_key {
                    break cand;
                }
            };
            doc.push(sym);
        }
        docs.push(doc);
    }

    Ok(Episode {
        query: vec![query_key, hop_marker],
        docs,
        gold_evidence,
        gold_answer,
        sufficient,
        hops,
    })
}

/// Generate `spec.episodes` episodes from the data stream derived from
/// `spec.seed`.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Vec<Episode>> {
    spec.validate()?;
    let mut out = Vec::with_capacity(spec.episodes);
    for i in 0..spec.episodes {
        let mut rng = stream(spec.seed, Purpose::Data, i as u64);
        out.push(generate_episode(spec, &mut rng)?);
    }
    Ok(out)
}

/// Deterministic shuffle then 8:2 split (SFT set first).
pub fn split_dataset(mut episodes: Vec<Episode>, seed: u64) -> (Vec<Episode>, Vec<Episode>) {
    let mut rng = stream(seed, Purpose::Split, 0);
    episodes.shuffle(&mut rng);
    let sft = episodes.len() * 4 / 5;
    let rl = episodes.split_off(sft);
    (episodes, rl)
}

// ---------------------------------------------------------------------------
// Gold trajectories
// ---------------------------------------------------------------------------

/// Reference trajectory under the full grammar: observe lists each document's
/// first key, evidence blocks replay the gold pair or abstain, think restates
/// the link values in chain order, answer states the value or abstains.
pub fn gold_trajectory(episode: &Episode) -> TaggedTrajectory {
    gold_trajectory_for(episode, Grammar::Full { k: episode.k() })
}

/// Gold trajectory under either grammar (think/answer spans are shared).
pub fn gold_trajectory_for(episode: &Episode, grammar: Grammar) -> TaggedTrajectory {
    let think = gold_think(episode);
    let answer = if episode.sufficient {
        episode.gold_answer.clone()
    } else {
        vec![INSUFFICIENT_TO_ANSWER]
    };
    match grammar {
        Grammar::Full { k } => {
            debug_assert_eq!(k, episode.k());
            let observe: Vec<u32> = episode.docs.iter().map(|d| d[0]).collect();
            let abstain = [NO_RELEVANT_INFO];
            let evidence: Vec<&[u32]> = episode
                .gold_evidence
                .iter()
                .map(|e| if e.is_empty() { &abstain[..] } else { e.as_slice() })
                .collect();
            TaggedTrajectory::from_parts(&observe, &evidence, &think, &answer)
                .expect("gold content contains no tag ids")
        }
        Grammar::ThinkAnswer => TaggedTrajectory::from_think_answer(&think, &answer)
            .expect("gold content contains no tag ids"),
    }
}

/// Link values in chain order; the abstention token when insufficient.
fn gold_think(episode: &Episode) -> Vec<u32> {
    if !episode.sufficient {
        return vec![INSUFFICIENT_TO_ANSWER];
    }
    let key = episode.query_key();
    if episode.hops == 1 {
        episode.gold_answer.clone()
    } else {
        let first = episode
            .gold_evidence
            .iter()
            .find(|e| e.first() == Some(&key))
            .expect("two-hop episode carries its first link");
        vec![first[1], episode.gold_answer[0]]
    }
}

// ---------------------------------------------------------------------------
// Curriculum filter
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumEntry {
    pub index: usize,
    pub scores: Vec<f64>,
    pub mean: f64,
    pub dropped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumReport {
    pub group_size: usize,
    pub kept: usize,
    pub dropped: usize,
    pub entries: Vec<CurriculumEntry>,
}

/// Difficulty filter for the RL set. `score` maps (episode index, completion
/// index) to that completion's answer reward in [0, 1]. Episodes whose G
/// completions are all perfect are dropped; survivors are ordered easiest
/// first (descending mean score, stable on ties).
pub fn curriculum_filter(
    episodes: &[Episode],
    g: usize,
    mut score: impl FnMut(usize, usize) -> f64,
) -> (Vec<Episode>, CurriculumReport) {
    assert!(g >= 1, "curriculum needs at least one completion per episode");
    let mut entries = Vec::with_capacity(episodes.len());
    for index in 0..episodes.len() {
        let scores: Vec<f64> = (0..g).map(|r| score(index, r)).collect();
        let mean = scores.iter().sum::<f64>() / g as f64;
        let dropped = scores.iter().all(|&s| s == 1.0);
        entries.push(CurriculumEntry {
            index,
            scores,
            mean,
            dropped,
        });
    }
    let mut kept: Vec<&CurriculumEntry> = entries.iter().filter(|e| !e.dropped).collect();
    kept.sort_by(|a, b| b.mean.partial_cmp(&a.mean).expect("scores are finite"));
    let ordered: Vec<Episode> = kept.iter().map(|e| episodes[e.index].clone()).collect();
    let report = CurriculumReport {
        group_size: g,
        kept: ordered.len(),
        dropped: entries.len() - ordered.len(),
        entries,
    };
    (ordered, report)
}
