//! Generation-time context: grammar phase plus deterministic lookups.
//!
//! The policy conditions on two things. First, its position in the trajectory
//! grammar, refined into one of [`Phase::COUNT`] phases by episode structure:
//! documents are classified by chain role (hosts the first link, hosts the
//! second link, background) and the episode by hop/sufficiency class, all
//! computed from (query, documents) alone - never from gold labels - so the
//! tracker is a legitimate policy input. Second, a handful of symbol lookups,
//! at most one of which is live per phase: the head token of the next
//! unlisted document, the query key, the value the documents pair with the
//! query key (and one hop further), and the value the *generated* evidence
//! pairs with the query key (and one hop further).
//!
//! Document-side lookups are episode-static. Evidence-side lookups read what
//! the policy itself wrote into its evidence blocks, so a rollout that
//! extracted the wrong pair carries that mistake into its own think/answer
//! context: getting the answer right is structurally downstream of getting
//! the evidence right.
//!
//! The tracker drives the same [`StreamParser`] used for post-hoc parsing,
//! so generation-time phases and reward-time spans cannot disagree.

use crate::env::{chain_lookup, doc_lookup, Episode};
use crate::grammar::{Grammar, ParseState, StreamParser};
use crate::vocab::{Tag, Vocabulary, HOP_1, HOP_2, INSUFFICIENT_TO_ANSWER, NO_RELEVANT_INFO};

/// Hop/sufficiency class of an episode, judged from observables: does the
/// chain the query asks for actually complete in the documents?
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpisodeClass {
    OneHop,
    TwoHop,
    Insufficient,
}

/// Chain role of one document.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DocRole {
    FirstLink,
    SecondLink,
    Background,
}

/// Grammar position refined by document role and episode class. Declaration
/// order is the feature-row order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    /// Expect `<observe>`.
    ObserveOpen,
    /// Inside observe; a document head remains to list.
    ObserveToken,
    /// Inside observe; all documents listed, expect `</observe>`.
    ObserveClose,
    /// Expect `<evidence>`.
    EvidenceOpen,
    /// Key position of the document hosting the first link.
    EvidenceKey1,
    /// Value position of the document hosting the first link.
    EvidenceValue1,
    /// Key position of the document hosting the second link.
    EvidenceKey2,
    /// Value position of the document hosting the second link.
    EvidenceValue2,
    /// First position of a background document's block: abstain.
    EvidenceAbstain,
    /// Block content complete, expect `</evidence>`.
    EvidenceClose,
    /// Expect `<think>`.
    ThinkOpen,
    /// Think position 0 of a one-hop episode: state the answer.
    ThinkHop1,
    /// Think position 0 of a two-hop episode: state the intermediate value.
    ThinkFirstOfTwo,
    /// Think position 1 of a two-hop episode: state the answer.
    ThinkSecondOfTwo,
    /// Think position 0 of an insufficient episode: abstain.
    ThinkAbstain,
    /// Think content complete, expect `</think>`.
    ThinkClose,
    /// Expect `<answer>`.
    AnswerOpen,
    /// Answer position 0 of a one-hop episode.
    AnswerHop1,
    /// Answer position 0 of a two-hop episode.
    AnswerHop2,
    /// Answer position 0 of an insufficient episode: abstain.
    AnswerAbstain,
    /// Answer content complete, expect `</answer>`.
    AnswerClose,
    /// Trajectory accepted; only reachable as a context for trailing tokens.
    Done,
    /// Grammar violated; absorbing.
    Failed,
}

impl Phase {
    pub const COUNT: usize = 23;

    pub const ALL: [Phase; Phase::COUNT] = [
        Phase::ObserveOpen,
        Phase::ObserveToken,
        Phase::ObserveClose,
        Phase::EvidenceOpen,
        Phase::EvidenceKey1,
        Phase::EvidenceValue1,
        Phase::EvidenceKey2,
        Phase::EvidenceValue2,
        Phase::EvidenceAbstain,
        Phase::EvidenceClose,
        Phase::ThinkOpen,
        Phase::ThinkHop1,
        Phase::ThinkFirstOfTwo,
        Phase::ThinkSecondOfTwo,
        Phase::ThinkAbstain,
        Phase::ThinkClose,
        Phase::AnswerOpen,
        Phase::AnswerHop1,
        Phase::AnswerHop2,
        Phase::AnswerAbstain,
        Phase::AnswerClose,
        Phase::Done,
        Phase::Failed,
    ];

    pub fn id(self) -> usize {
        self as usize
    }

    /// Token the phase calls for when that token is context-independent
    /// (tags and the two reserved abstention symbols). Phases whose target
    /// depends on the episode answer `None`; their target comes from the
    /// live lookup instead.
    pub fn fixed_target(self) -> Option<u32> {
        match self {
            Phase::ObserveOpen => Some(Tag::ObserveOpen.id()),
            Phase::ObserveClose => Some(Tag::ObserveClose.id()),
            Phase::EvidenceOpen => Some(Tag::EvidenceOpen.id()),
            Phase::EvidenceAbstain => Some(NO_RELEVANT_INFO),
            Phase::EvidenceClose => Some(Tag::EvidenceClose.id()),
            Phase::ThinkOpen => Some(Tag::ThinkOpen.id()),
            Phase::ThinkAbstain => Some(INSUFFICIENT_TO_ANSWER),
            Phase::ThinkClose => Some(Tag::ThinkClose.id()),
            Phase::AnswerOpen => Some(Tag::AnswerOpen.id()),
            Phase::AnswerAbstain => Some(INSUFFICIENT_TO_ANSWER),
            Phase::AnswerClose => Some(Tag::AnswerClose.id()),
            _ => None,
        }
    }
}

/// The six symbol lookups. At most one is live per phase; each owns a
/// one-hot feature block in the policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LookupBlock {
    /// Head token of the next unlisted document.
    DocHead,
    /// The query key itself.
    QueryKey,
    /// Value the documents pair with the query key.
    DocHop1,
    /// Value the documents pair with [`LookupBlock::DocHop1`].
    DocHop2,
    /// Value the generated evidence pairs with the query key.
    EvHop1,
    /// Value the generated evidence pairs with [`LookupBlock::EvHop1`].
    EvHop2,
}

impl LookupBlock {
    pub const COUNT: usize = 6;

    pub const ALL: [LookupBlock; LookupBlock::COUNT] = [
        LookupBlock::DocHead,
        LookupBlock::QueryKey,
        LookupBlock::DocHop1,
        LookupBlock::DocHop2,
        LookupBlock::EvHop1,
        LookupBlock::EvHop2,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Incremental context for one rollout over one episode.
#[derive(Debug, Clone)]
pub struct ContextTracker {
    parser: StreamParser,
    query_key: u32,
    class: EpisodeClass,
    roles: Vec<DocRole>,
    heads: Vec<u32>,
    doc_hop1: Option<u32>,
    doc_hop2: Option<u32>,
    ev_blocks: Vec<Vec<u32>>,
}

impl ContextTracker {
    /// Build the static half of the context from the episode's observable
    /// part (query and documents; gold fields are never read).
    ///
    /// Panics on episodes violating the data contract (query is not
    /// `[key, hop marker]`, or a full grammar whose k disagrees with the
    /// document count); loaders validate episodes before they get here.
    pub fn new(episode: &Episode, vocab: &Vocabulary, grammar: Grammar) -> ContextTracker {
        assert_eq!(episode.query.len(), 2, "query must be [key, hop marker]");
        let query_key = episode.query[0];
        let marker = episode.query[1];
        assert!(
            marker == HOP_1 || marker == HOP_2,
            "unknown hop marker {marker}"
        );
        if let Grammar::Full { k } = grammar {
            assert_eq!(k, episode.k(), "grammar k must match the document count");
        }
        let first = chain_lookup(&episode.docs, query_key);
        let second = if marker == HOP_2 {
            first.and_then(|(_, v)| chain_lookup(&episode.docs, v))
        } else {
            None
        };
        let class = match (marker == HOP_2, first, second) {
            (false, Some(_), _) => EpisodeClass::OneHop,
            (true, Some(_), Some(_)) => EpisodeClass::TwoHop,
            _ => EpisodeClass::Insufficient,
        };
        let mut roles = vec![DocRole::Background; episode.k()];
        if class != EpisodeClass::Insufficient {
            roles[first.expect("sufficient episode has a first link").0] = DocRole::FirstLink;
            if class == EpisodeClass::TwoHop {
                roles[second.expect("two-hop class has a second link").0] = DocRole::SecondLink;
            }
        }
        ContextTracker {
            parser: StreamParser::new(vocab, grammar),
            query_key,
            class,
            roles,
            heads: episode.docs.iter().map(|d| d[0]).collect(),
            doc_hop1: first.map(|(_, v)| v),
            doc_hop2: second.map(|(_, v)| v),
            ev_blocks: Vec::new(),
        }
    }

    pub fn class(&self) -> EpisodeClass {
        self.class
    }

    pub fn roles(&self) -> &[DocRole] {
        &self.roles
    }

    pub fn is_terminal(&self) -> bool {
        self.parser.is_done() || self.parser.is_failed()
    }

    pub fn is_failed(&self) -> bool {
        self.parser.is_failed()
    }

    /// Phase the *next* token will be emitted in.
    pub fn phase(&self) -> Phase {
        match self.parser.state() {
            ParseState::ExpectObserveOpen => Phase::ObserveOpen,
            ParseState::InObserve { pos } => {
                if pos < self.heads.len() {
                    Phase::ObserveToken
                } else {
                    Phase::ObserveClose
                }
            }
            ParseState::ExpectEvidenceOpen { .. } => Phase::EvidenceOpen,
            ParseState::InEvidence { block, pos } => {
                match (self.roles[block - 1], pos) {
                    (DocRole::FirstLink, 0) => Phase::EvidenceKey1,
                    (DocRole::FirstLink, 1) => Phase::EvidenceValue1,
                    (DocRole::SecondLink, 0) => Phase::EvidenceKey2,
                    (DocRole::SecondLink, 1) => Phase::EvidenceValue2,
                    (DocRole::Background, 0) => Phase::EvidenceAbstain,
                    _ => Phase::EvidenceClose,
                }
            }
            ParseState::ExpectThinkOpen => Phase::ThinkOpen,
            ParseState::InThink { pos } => match (self.class, pos) {
                (EpisodeClass::OneHop, 0) => Phase::ThinkHop1,
                (EpisodeClass::TwoHop, 0) => Phase::ThinkFirstOfTwo,
                (EpisodeClass::TwoHop, 1) => Phase::ThinkSecondOfTwo,
                (EpisodeClass::Insufficient, 0) => Phase::ThinkAbstain,
                _ => Phase::ThinkClose,
            },
            ParseState::ExpectAnswerOpen => Phase::AnswerOpen,
            ParseState::InAnswer { pos } => match (self.class, pos) {
                (EpisodeClass::OneHop, 0) => Phase::AnswerHop1,
                (EpisodeClass::TwoHop, 0) => Phase::AnswerHop2,
                (EpisodeClass::Insufficient, 0) => Phase::AnswerAbstain,
                _ => Phase::AnswerClose,
            },
            ParseState::Done => Phase::Done,
            ParseState::Failed => Phase::Failed,
        }
    }

    /// The lookup live in the current phase, with its symbol (`None` when the
    /// lookup is consulted but comes up empty; that maps to the block's pad
    /// row, distinct from "no lookup live").
    pub fn live_lookup(&self) -> Option<(LookupBlock, Option<u32>)> {
        match self.phase() {
            Phase::ObserveToken => {
                let pos = match self.parser.state() {
                    ParseState::InObserve { pos } => pos,
                    _ => unreachable!("phase fixes the parser state"),
                };
                Some((LookupBlock::DocHead, Some(self.heads[pos])))
            }
            Phase::EvidenceKey1 => Some((LookupBlock::QueryKey, Some(self.query_key))),
            Phase::EvidenceValue1 | Phase::EvidenceKey2 => {
                Some((LookupBlock::DocHop1, self.doc_hop1))
            }
            Phase::EvidenceValue2 => Some((LookupBlock::DocHop2, self.doc_hop2)),
            Phase::ThinkHop1 | Phase::ThinkFirstOfTwo | Phase::AnswerHop1 => {
                Some((LookupBlock::EvHop1, self.ev_hop1()))
            }
            Phase::ThinkSecondOfTwo | Phase::AnswerHop2 => {
                Some((LookupBlock::EvHop2, self.ev_hop2()))
            }
            _ => None,
        }
    }

    /// Value the generated evidence pairs with the query key.
    fn ev_hop1(&self) -> Option<u32> {
        self.ev_blocks
            .iter()
            .find_map(|b| doc_lookup(b, self.query_key))
    }

    /// Value the generated evidence pairs with [`Self::ev_hop1`].
    fn ev_hop2(&self) -> Option<u32> {
        self.ev_hop1()
            .and_then(|v| self.ev_blocks.iter().find_map(|b| doc_lookup(b, v)))
    }

    /// Consume one emitted token, capturing evidence content as it streams.
    pub fn advance(&mut self, token: u32) {
        let pre = self.parser.state();
        self.parser.advance(token);
        if self.parser.is_failed() {
            return;
        }
        match pre {
            ParseState::ExpectEvidenceOpen { .. } => self.ev_blocks.push(Vec::new()),
            ParseState::InEvidence { .. } if Tag::from_id(token).is_none() => {
                self.ev_blocks
                    .last_mut()
                    .expect("content inside an opened block")
                    .push(token);
            }
            _ => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{generate_dataset, gold_trajectory, gold_trajectory_for, DatasetSpec};
    use crate::vocab::{Vocabulary, DOC_SEP};

    fn vocab() -> Vocabulary {
        Vocabulary::new(64).unwrap()
    }

    /// Hand-built two-hop episode: key 20 -> 30 (doc 1), 30 -> 40 (doc 0),
    /// doc 2 background. Pairs occupy offsets 0..6, noise fills 6..8.
    fn two_hop_episode() -> Episode {
        Episode {
            query: vec![20, HOP_2],
            docs: vec![
                vec![30, 40, 21, 41, 22, 42, 50, 50],
                vec![20, 30, 23, 43, 24, 44, 51, 51],
                vec![25, 45, 26, 46, 27, 47, 52, 52],
            ],
            gold_evidence: vec![vec![30, 40], vec![20, 30], vec![]],
            gold_answer: vec![40],
            sufficient: true,
            hops: 2,
        }
    }

    #[test]
    fn phase_ids_follow_declaration_order() {
        for (i, p) in Phase::ALL.iter().enumerate() {
            assert_eq!(p.id(), i);
        }
        for (i, b) in LookupBlock::ALL.iter().enumerate() {
            assert_eq!(b.index(), i);
        }
        // Every tag and both reserved abstention symbols are some phase's
        // fixed target.
        let targets: Vec<u32> = Phase::ALL.iter().filter_map(|p| p.fixed_target()).collect();
        for tag in Tag::ALL {
            assert!(targets.contains(&tag.id()), "{tag:?} unreachable");
        }
        assert!(targets.contains(&NO_RELEVANT_INFO));
        assert!(targets.contains(&INSUFFICIENT_TO_ANSWER));
    }

    #[test]
    fn classifier_reads_observables_only() {
        let e = two_hop_episode();
        let t = ContextTracker::new(&e, &vocab(), Grammar::Full { k: 3 });
        assert_eq!(t.class(), EpisodeClass::TwoHop);
        assert_eq!(
            t.roles(),
            &[DocRole::SecondLink, DocRole::FirstLink, DocRole::Background]
        );
        assert_eq!(t.doc_hop1, Some(30));
        assert_eq!(t.doc_hop2, Some(40));

        // Same documents, one-hop marker: the chain stops after one step.
        let mut one_hop = e.clone();
        one_hop.query = vec![20, HOP_1];
        let t = ContextTracker::new(&one_hop, &vocab(), Grammar::Full { k: 3 });
        assert_eq!(t.class(), EpisodeClass::OneHop);
        assert_eq!(
            t.roles(),
            &[DocRole::Background, DocRole::FirstLink, DocRole::Background]
        );

        // Absent key: insufficient, no roles.
        let mut absent = e.clone();
        absent.query = vec![28, HOP_2];
        let t = ContextTracker::new(&absent, &vocab(), Grammar::Full { k: 3 });
        assert_eq!(t.class(), EpisodeClass::Insufficient);
        assert!(t.roles().iter().all(|&r| r == DocRole::Background));

        // Dead end: 21 -> 41 exists but 41 pairs with nothing.
        let mut dead = e.clone();
        dead.query = vec![21, HOP_2];
        let t = ContextTracker::new(&dead, &vocab(), Grammar::Full { k: 3 });
        assert_eq!(t.class(), EpisodeClass::Insufficient);
        assert!(t.roles().iter().all(|&r| r == DocRole::Background));
    }

    #[test]
    fn classifier_agrees_with_generator_labels() {
        let spec = DatasetSpec {
            episodes: 500,
            two_hop_rate: 0.5,
            insufficiency_rate: 0.4,
            k_min: 1,
            k_max: 4,
            seed: 17,
            ..DatasetSpec::default()
        };
        let v = vocab();
        for e in generate_dataset(&spec).unwrap() {
            let t = ContextTracker::new(&e, &v, Grammar::Full { k: e.k() });
            assert_eq!(t.class() == EpisodeClass::Insufficient, !e.sufficient);
            if e.sufficient {
                assert_eq!(t.class() == EpisodeClass::TwoHop, e.hops == 2);
            }
            // Role assignment matches gold evidence: the first-link document
            // is the one whose gold pair starts with the query key.
            for (d, role) in t.roles().iter().enumerate() {
                let gold = &e.gold_evidence[d];
                match role {
                    DocRole::FirstLink => assert_eq!(gold.first(), Some(&e.query_key())),
                    DocRole::SecondLink => {
                        assert!(!gold.is_empty() && gold.first() != Some(&e.query_key()))
                    }
                    DocRole::Background => assert!(gold.is_empty()),
                }
            }
        }
    }

    /// Walking the gold trajectory visits the expected phase sequence, and
    /// each content phase's live lookup already points at the token the gold
    /// trajectory emits next.
    #[test]
    fn gold_walk_phases_and_lookups() {
        let e = two_hop_episode();
        let mut t = ContextTracker::new(&e, &vocab(), Grammar::Full { k: 3 });
        let gold = gold_trajectory(&e);
        use Phase::*;
        let expect = [
            ObserveOpen,
            ObserveToken, // 30 (doc 0 head)
            ObserveToken, // 20
            ObserveToken, // 25
            ObserveClose,
            EvidenceOpen,
            EvidenceKey2,   // doc 0 hosts the second link: 30
            EvidenceValue2, // 40
            EvidenceClose,
            EvidenceOpen,
            EvidenceKey1,   // doc 1 hosts the first link: 20
            EvidenceValue1, // 30
            EvidenceClose,
            EvidenceOpen,
            EvidenceAbstain, // doc 2: no relevant info
            EvidenceClose,
            ThinkOpen,
            ThinkFirstOfTwo,  // 30
            ThinkSecondOfTwo, // 40
            ThinkClose,
            AnswerOpen,
            AnswerHop2, // 40
            AnswerClose,
        ];
        for (i, &token) in gold.tokens.iter().enumerate() {
            assert_eq!(t.phase(), expect[i], "position {i}");
            if let Some((_, sym)) = t.live_lookup() {
                assert_eq!(sym, Some(token), "lookup at position {i} predicts gold");
            } else {
                assert_eq!(t.phase().fixed_target(), Some(token), "bias at position {i}");
            }
            t.advance(token);
        }
        assert!(t.is_terminal());
        assert_eq!(t.phase(), Done);
    }

    /// Evidence-side hops read the *generated* blocks: feed wrong evidence
    /// and the think-phase lookup dutifully reports the wrong value.
    #[test]
    fn evidence_hops_follow_generated_blocks() {
        let e = two_hop_episode();
        let v = vocab();
        let mut t = ContextTracker::new(&e, &v, Grammar::Full { k: 3 });
        // Observe, then evidence blocks [30, 40], [20, 33], [8]: the first
        // link's value is misstated as 33 instead of 30.
        let tokens = [
            0, 30, 20, 25, 1, // observe
            2, 30, 40, 3, // evidence doc 0
            2, 20, 33, 3, // evidence doc 1 (wrong value)
            2, 8, 3, // evidence doc 2
            4, // <think>
        ];
        for &tok in &tokens {
            t.advance(tok);
        }
        assert_eq!(t.phase(), Phase::ThinkFirstOfTwo);
        assert_eq!(t.live_lookup(), Some((LookupBlock::EvHop1, Some(33))));
        t.advance(33);
        // 33 pairs with nothing in the generated evidence.
        assert_eq!(t.live_lookup(), Some((LookupBlock::EvHop2, None)));
    }

    #[test]
    fn think_answer_grammar_has_no_evidence_lookups() {
        let e = two_hop_episode();
        let v = vocab();
        let mut t = ContextTracker::new(&e, &v, Grammar::ThinkAnswer);
        assert_eq!(t.phase(), Phase::ThinkOpen);
        t.advance(Tag::ThinkOpen.id());
        assert_eq!(t.phase(), Phase::ThinkFirstOfTwo);
        // No evidence was ever generated, so the lookup is empty.
        assert_eq!(t.live_lookup(), Some((LookupBlock::EvHop1, None)));
        let gold = gold_trajectory_for(&e, Grammar::ThinkAnswer);
        let mut t = ContextTracker::new(&e, &v, Grammar::ThinkAnswer);
        for &tok in &gold.tokens {
            t.advance(tok);
        }
        assert!(t.is_terminal() && !t.is_failed());
    }

    #[test]
    fn failed_is_absorbing_and_stops_capture() {
        let e = two_hop_episode();
        let mut t = ContextTracker::new(&e, &vocab(), Grammar::Full { k: 3 });
        t.advance(DOC_SEP); // content where <observe> is required
        assert!(t.is_failed());
        assert_eq!(t.phase(), Phase::Failed);
        t.advance(Tag::ObserveOpen.id());
        assert_eq!(t.phase(), Phase::Failed);
        assert!(t.ev_blocks.is_empty());
    }

    #[test]
    fn overlong_spans_fall_through_to_close_phases() {
        let e = two_hop_episode();
        let mut t = ContextTracker::new(&e, &vocab(), Grammar::Full { k: 3 });
        for &tok in &[0u32, 30, 20, 25, 50, 50] {
            t.advance(tok);
        }
        // More observe tokens than documents: the phase pins the close tag.
        assert_eq!(t.phase(), Phase::ObserveClose);
        assert_eq!(t.live_lookup(), None);
    }

    #[test]
    #[should_panic(expected = "hop marker")]
    fn malformed_query_panics() {
        let mut e = two_hop_episode();
        e.query = vec![20, 20];
        ContextTracker::new(&e, &vocab(), Grammar::Full { k: 3 });
    }
}
