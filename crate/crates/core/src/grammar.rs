//! Structured trajectory grammar.
//!
//! A full trajectory is
//!
//! ```text
//! <observe> c* </observe> ( <evidence> c* </evidence> ) x k <think> c* </think> <answer> c* </answer>
//! ```
//!
//! where `c` is any non-tag token and k is the episode's document count. The
//! i-th evidence block is bound to the i-th document by position. A reduced
//! two-span grammar (`<think> c* </think> <answer> c* </answer>`) exists for
//! the think-then-answer ablation.
//!
//! Parsing is total: any token sequence yields a [`TaggedTrajectory`], with
//! malformedness recorded as `well_formed = false` and an empty span list
//! rather than an error. Malformed output is a legitimate policy sample that
//! simply earns zero format reward downstream.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::{Tag, Vocabulary};

/// Which span a content token belongs to. Evidence blocks are numbered from 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScopeId {
    Observe,
    Evidence(usize),
    Think,
    Answer,
}

/// Trajectory shape: the full four-stage grammar over k documents, or the
/// two-stage think/answer reduction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Grammar {
    Full { k: usize },
    ThinkAnswer,
}

impl Grammar {
    /// Number of spans a well-formed trajectory carries: k + 3, or 2.
    pub fn span_count(&self) -> usize {
        match self {
            Grammar::Full { k } => k + 3,
            Grammar::ThinkAnswer => 2,
        }
    }

    /// Number of tag tokens in any well-formed trajectory: 2k + 6, or 4.
    pub fn tag_count(&self) -> usize {
        match self {
            Grammar::Full { k } => 2 * k + 6,
            Grammar::ThinkAnswer => 4,
        }
    }
}

/// Half-open content interval `start..end` into the token buffer, tagged with
/// its scope. Tag tokens lie in no span.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub scope: ScopeId,
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn contains(&self, pos: usize) -> bool {
        self.start <= pos && pos < self.end
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

// ---------------------------------------------------------------------------
// Incremental parser
// ---------------------------------------------------------------------------

/// Parser state before consuming the next token. `Expect*` states sit between
/// spans (the next legal token is a specific open tag); `In*` states sit
/// inside a span. Evidence blocks count from 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseState {
    ExpectObserveOpen,
    InObserve { pos: usize },
    ExpectEvidenceOpen { block: usize },
    InEvidence { block: usize, pos: usize },
    ExpectThinkOpen,
    InThink { pos: usize },
    ExpectAnswerOpen,
    InAnswer { pos: usize },
    Done,
    Failed,
}

/// Streaming recognizer for one grammar. Fed one token at a time; records
/// span boundaries as it goes. Shared by [`parse`] and by the policy's
/// context tracker, so generation-time phase information and post-hoc parsing
/// can never disagree.
#[derive(Debug, Clone)]
pub struct StreamParser {
    vocab_size: u32,
    grammar: Grammar,
    state: ParseState,
    consumed: usize,
    spans: Vec<Span>,
    open: Option<(ScopeId, usize)>,
}

impl StreamParser {
    pub fn new(vocab: &Vocabulary, grammar: Grammar) -> StreamParser {
        let state = match grammar {
            Grammar::Full { .. } => ParseState::ExpectObserveOpen,
            Grammar::ThinkAnswer => ParseState::ExpectThinkOpen,
        };
        StreamParser {
            vocab_size: vocab.size(),
            grammar,
            state,
            consumed: 0,
            spans: Vec::with_capacity(grammar.span_count()),
            open: None,
        }
    }

    pub fn state(&self) -> ParseState {
        self.state
    }

    pub fn is_done(&self) -> bool {
        self.state == ParseState::Done
    }

    pub fn is_failed(&self) -> bool {
        self.state == ParseState::Failed
    }

    fn fail(&mut self) {
        self.state = ParseState::Failed;
        self.open = None;
        self.spans.clear();
    }

    fn open_span(&mut self, scope: ScopeId) {
        self.open = Some((scope, self.consumed + 1));
    }

    fn close_span(&mut self) {
        let (scope, start) = self.open.take().expect("close without open span");
        self.spans.push(Span {
            scope,
            start,
            end: self.consumed,
        });
    }

    /// Consume one token. Out-of-vocabulary ids, wrong tags, and trailing
    /// tokens after the answer close all route to `Failed`; the parser never
    /// panics on input.
    pub fn advance(&mut self, token: u32) {
        use ParseState::*;
        if token >= self.vocab_size {
            self.consumed += 1;
            self.fail();
            return;
        }
        let tag = Tag::from_id(token);
        let k = match self.grammar {
            Grammar::Full { k } => k,
            Grammar::ThinkAnswer => 0,
        };
        let next = match (self.state, tag) {
            (ExpectObserveOpen, Some(Tag::ObserveOpen)) => {
                self.open_span(ScopeId::Observe);
                InObserve { pos: 0 }
            }
            (InObserve { pos }, None) => InObserve { pos: pos + 1 },
            (InObserve { .. }, Some(Tag::ObserveClose)) => {
                self.close_span();
                if k > 0 {
                    ExpectEvidenceOpen { block: 1 }
                } else {
                    ExpectThinkOpen
                }
            }
            (ExpectEvidenceOpen { block }, Some(Tag::EvidenceOpen)) => {
                self.open_span(ScopeId::Evidence(block));
                InEvidence { block, pos: 0 }
            }
            (InEvidence { block, pos }, None) => InEvidence { block, pos: pos + 1 },
            (InEvidence { block, .. }, Some(Tag::EvidenceClose)) => {
                self.close_span();
                if block < k {
                    ExpectEvidenceOpen { block: block + 1 }
                } else {
                    ExpectThinkOpen
                }
            }
            (ExpectThinkOpen, Some(Tag::ThinkOpen)) => {
                self.open_span(ScopeId::Think);
                InThink { pos: 0 }
            }
            (InThink { pos }, None) => InThink { pos: pos + 1 },
            (InThink { .. }, Some(Tag::ThinkClose)) => {
                self.close_span();
                ExpectAnswerOpen
            }
            (ExpectAnswerOpen, Some(Tag::AnswerOpen)) => {
                self.open_span(ScopeId::Answer);
                InAnswer { pos: 0 }
            }
            (InAnswer { pos }, None) => InAnswer { pos: pos + 1 },
            (InAnswer { .. }, Some(Tag::AnswerClose)) => {
                self.close_span();
                Done
            }
            _ => {
                self.consumed += 1;
                self.fail();
                return;
            }
        };
        self.consumed += 1;
        self.state = next;
    }

    fn into_spans(self) -> Option<Vec<Span>> {
        if self.state == ParseState::Done {
            Some(self.spans)
        } else {
            None
        }
    }
}

// ---------------------------------------------------------------------------
// TaggedTrajectory
// ---------------------------------------------------------------------------

/// A token sequence together with its parse. `spans` index content intervals
/// of `tokens` in grammar order; malformed input has `well_formed = false`
/// and zero spans.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedTrajectory {
    pub tokens: Vec<u32>,
    pub spans: Vec<Span>,
    pub well_formed: bool,
}

/// JSONL form of a trajectory: the raw tokens plus the document count needed
/// to re-parse them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub tokens: Vec<u32>,
    pub k: usize,
}

/// Total parse: never fails, never panics.
pub fn parse(tokens: &[u32], vocab: &Vocabulary, grammar: Grammar) -> TaggedTrajectory {
    let mut parser = StreamParser::new(vocab, grammar);
    for &t in tokens {
        parser.advance(t);
    }
    match parser.into_spans() {
        Some(spans) => TaggedTrajectory {
            tokens: tokens.to_vec(),
            spans,
            well_formed: true,
        },
        None => TaggedTrajectory {
            tokens: tokens.to_vec(),
            spans: Vec::new(),
            well_formed: false,
        },
    }
}

impl TaggedTrajectory {
    /// Re-emit tags and span content in canonical order. Inverse of [`parse`]
    /// on well-formed input; errors on malformed trajectories.
    pub fn serialize(&self) -> Result<Vec<u32>> {
        if !self.well_formed {
            return Err(Error::NotWellFormed);
        }
        let mut out = Vec::with_capacity(self.tokens.len());
        for span in &self.spans {
            let (open, close) = match span.scope {
                ScopeId::Observe => (Tag::ObserveOpen, Tag::ObserveClose),
                ScopeId::Evidence(_) => (Tag::EvidenceOpen, Tag::EvidenceClose),
                ScopeId::Think => (Tag::ThinkOpen, Tag::ThinkClose),
                ScopeId::Answer => (Tag::AnswerOpen, Tag::AnswerClose),
            };
            out.push(open.id());
            out.extend_from_slice(&self.tokens[span.start..span.end]);
            out.push(close.id());
        }
        Ok(out)
    }

    /// Scope of the token at `pos`: `None` for tag tokens and for any token
    /// of a malformed trajectory.
    ///
    /// Panics if `pos` is out of range.
    pub fn scope_of(&self, pos: usize) -> Option<ScopeId> {
        assert!(
            pos < self.tokens.len(),
            "position {pos} out of range for trajectory of length {}",
            self.tokens.len()
        );
        self.spans
            .iter()
            .find(|s| s.contains(pos))
            .map(|s| s.scope)
    }

    fn span(&self, scope: ScopeId) -> Option<&Span> {
        self.spans.iter().find(|s| s.scope == scope)
    }

    pub fn observe_content(&self) -> Option<&[u32]> {
        self.span(ScopeId::Observe).map(|s| &self.tokens[s.start..s.end])
    }

    /// Content of the i-th evidence block (1-based).
    pub fn evidence_content(&self, block: usize) -> Option<&[u32]> {
        self.span(ScopeId::Evidence(block))
            .map(|s| &self.tokens[s.start..s.end])
    }

    pub fn evidence_blocks(&self) -> usize {
        self.spans
            .iter()
            .filter(|s| matches!(s.scope, ScopeId::Evidence(_)))
            .count()
    }

    pub fn think_content(&self) -> Option<&[u32]> {
        self.span(ScopeId::Think).map(|s| &self.tokens[s.start..s.end])
    }

    pub fn answer_content(&self) -> Option<&[u32]> {
        self.span(ScopeId::Answer).map(|s| &self.tokens[s.start..s.end])
    }

    /// Assemble a well-formed full-grammar trajectory from span contents.
    /// Rejects tag ids inside content.
    pub fn from_parts(
        observe: &[u32],
        evidence: &[&[u32]],
        think: &[u32],
        answer: &[u32],
    ) -> Result<TaggedTrajectory> {
        let mut tokens = Vec::new();
        let mut spans = Vec::new();
        let mut push_span = |tokens: &mut Vec<u32>,
                             scope: ScopeId,
                             open: Tag,
                             close: Tag,
                             content: &[u32]|
         -> Result<()> {
            tokens.push(open.id());
            let start = tokens.len();
            for &c in content {
                if Tag::from_id(c).is_some() {
                    return Err(Error::NotWellFormed);
                }
                tokens.push(c);
            }
            spans.push(Span {
                scope,
                start,
                end: tokens.len(),
            });
            tokens.push(close.id());
            Ok(())
        };
        push_span(
            &mut tokens,
            ScopeId::Observe,
            Tag::ObserveOpen,
            Tag::ObserveClose,
            observe,
        )?;
        for (i, ev) in evidence.iter().enumerate() {
            push_span(
                &mut tokens,
                ScopeId::Evidence(i + 1),
                Tag::EvidenceOpen,
                Tag::EvidenceClose,
                ev,
            )?;
        }
        push_span(&mut tokens, ScopeId::Think, Tag::ThinkOpen, Tag::ThinkClose, think)?;
        push_span(
            &mut tokens,
            ScopeId::Answer,
            Tag::AnswerOpen,
            Tag::AnswerClose,
            answer,
        )?;
        Ok(TaggedTrajectory {
            tokens,
            spans,
            well_formed: true,
        })
    }

    /// Assemble a well-formed think/answer trajectory from span contents.
    pub fn from_think_answer(think: &[u32], answer: &[u32]) -> Result<TaggedTrajectory> {
        let mut tokens = Vec::new();
        let mut spans = Vec::new();
        for (scope, open, close, content) in [
            (ScopeId::Think, Tag::ThinkOpen, Tag::ThinkClose, think),
            (ScopeId::Answer, Tag::AnswerOpen, Tag::AnswerClose, answer),
        ] {
            tokens.push(open.id());
            let start = tokens.len();
            for &c in content {
                if Tag::from_id(c).is_some() {
                    return Err(Error::NotWellFormed);
                }
                tokens.push(c);
            }
            spans.push(Span {
                scope,
                start,
                end: tokens.len(),
            });
            tokens.push(close.id());
        }
        Ok(TaggedTrajectory {
            tokens,
            spans,
            well_formed: true,
        })
    }
}
