//! Token vocabulary with a fixed reserved prefix.
//!
//! Ids 0..CONTENT_BASE are reserved and have the same meaning in every
//! vocabulary: eight stage tags, two special content tokens ("no relevant
//! information" for per-document abstention, "insufficient to answer" for
//! whole-query abstention), a document separator used by the episode
//! encoding, and two hop-count markers appended to queries. Everything from
//! CONTENT_BASE up to the vocabulary size is an ordinary content symbol.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Id of the token marking per-document abstention ("no relevant information").
pub const NO_RELEVANT_INFO: u32 = 8;
/// Id of the token marking query-level abstention ("insufficient to answer").
pub const INSUFFICIENT_TO_ANSWER: u32 = 9;
/// Separator between documents in the episode encoding.
pub const DOC_SEP: u32 = 10;
/// Query marker: the key resolves to the answer directly.
pub const HOP_1: u32 = 11;
/// Query marker: the key resolves through one intermediate link.
pub const HOP_2: u32 = 12;
/// First id available for content symbols.
pub const CONTENT_BASE: u32 = 13;

/// The eight stage tags. Open/close pairs delimit the four trajectory spans.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tag {
    ObserveOpen,
    ObserveClose,
    EvidenceOpen,
    EvidenceClose,
    ThinkOpen,
    ThinkClose,
    AnswerOpen,
    AnswerClose,
}

impl Tag {
    pub const ALL: [Tag; 8] = [
        Tag::ObserveOpen,
        Tag::ObserveClose,
        Tag::EvidenceOpen,
        Tag::EvidenceClose,
        Tag::ThinkOpen,
        Tag::ThinkClose,
        Tag::AnswerOpen,
        Tag::AnswerClose,
    ];

    pub fn id(self) -> u32 {
        match self {
            Tag::ObserveOpen => 0,
            Tag::ObserveClose => 1,
            Tag::EvidenceOpen => 2,
            Tag::EvidenceClose => 3,
            Tag::ThinkOpen => 4,
            Tag::ThinkClose => 5,
            Tag::AnswerOpen => 6,
            Tag::AnswerClose => 7,
        }
    }

    pub fn from_id(id: u32) -> Option<Tag> {
        Tag::ALL.get(id as usize).copied()
    }

    /// Human-readable form, used in dataset headers and rendered traces.
    pub fn text(self) -> &'static str {
        match self {
            Tag::ObserveOpen => "<observe>",
            Tag::ObserveClose => "</observe>",
            Tag::EvidenceOpen => "<evidence>",
            Tag::EvidenceClose => "</evidence>",
            Tag::ThinkOpen => "<think>",
            Tag::ThinkClose => "</think>",
            Tag::AnswerOpen => "<answer>",
            Tag::AnswerClose => "</answer>",
        }
    }
}

/// A sized vocabulary. Only the size varies; the reserved layout is fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    size: u32,
}

impl Vocabulary {
    /// Smallest legal size: all reserved ids plus at least two content symbols
    /// (a key and a value).
    pub const MIN_SIZE: u32 = CONTENT_BASE + 2;

    pub fn new(size: u32) -> Result<Vocabulary> {
        if size < Self::MIN_SIZE {
            return Err(Error::VocabTooSmall {
                size,
                min: Self::MIN_SIZE,
            });
        }
        Ok(Vocabulary { size })
    }

    pub fn size(&self) -> u32 {
        self.size
    }

    /// Content symbol ids: everything at or above CONTENT_BASE.
    pub fn content_ids(&self) -> std::ops::Range<u32> {
        CONTENT_BASE..self.size
    }

    pub fn contains(&self, id: u32) -> bool {
        id < self.size
    }

    pub fn is_tag(&self, id: u32) -> bool {
        id < 8
    }

    pub fn tag_of(&self, id: u32) -> Option<Tag> {
        Tag::from_id(id)
    }
}
