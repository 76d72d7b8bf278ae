//! The question/interlocutor graph over the key utterances.
//!
//! Node order is fixed: the question node, question speakers (sorted by
//! name), dialogue speakers (by first key utterance), then one word node per
//! text token of each key utterance in sequence order.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{match_roster, normalize_name_word, Dialogue, Question, SpeakerMention};
use crate::extractor::KeySet;
use crate::textseq::{AlignmentMap, TokenSequence};
use crate::{Error, Result};

pub const DEFAULT_WORD_WINDOW: usize = 2;

/// Interrogatives recognised as the questioning word.
pub const QUESTION_WORDS: [&str; 9] = ["what", "who", "whom", "whose", "when", "where", "why", "how", "which"];
const MULTIWORD_QUESTION: [&str; 3] = ["for", "what", "reason"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeType {
    Qw,
    Qs,
    Ds,
    Dw,
}

impl NodeType {
    pub const COUNT: usize = 4;

    /// Position of the type in the one-hot encoding.
    pub fn index(self) -> usize {
        match self {
            Self::Qw => 0,
            Self::Qs => 1,
            Self::Ds => 2,
            Self::Dw => 3,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Qw => "qw",
            Self::Qs => "qs",
            Self::Ds => "ds",
            Self::Dw => "dw",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Mean,
    Single,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NodeOrigin {
    QuestionWord { words: Vec<usize> },
    QuestionSpeaker { words: Vec<usize>, speaker: String },
    DialogueSpeaker { speaker: String, utterances: Vec<usize> },
    DialogueWord { utterance: usize, word: usize, token: usize, scene: bool },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub node_type: NodeType,
    pub pooling: Pooling,
    /// Absolute rows of `H_QC` the initial state is pooled from.
    pub rows: Vec<usize>,
    pub origin: NodeOrigin,
}

impl Node {
    pub fn speaker(&self) -> Option<&str> {
        match &self.origin {
            NodeOrigin::QuestionSpeaker { speaker, .. } | NodeOrigin::DialogueSpeaker { speaker, .. } => Some(speaker),
            _ => None,
        }
    }

    /// `(utterance, word, scene)` for word nodes.
    pub fn word_position(&self) -> Option<(usize, usize, bool)> {
        match self.origin {
            NodeOrigin::DialogueWord { utterance, word, scene, .. } => Some((utterance, word, scene)),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EdgeRule {
    /// Word nodes of one utterance within the word window.
    R1,
    /// Word node to the speaker node of its utterance.
    R2,
    /// Word node to the question node.
    R3,
    /// Question speakers among themselves.
    R4,
    /// Question speaker to the matching dialogue speaker.
    R5,
    /// Question speaker to the question node.
    R6,
    /// Scene word to a dialogue speaker named in the scene.
    R7,
}

impl EdgeRule {
    pub fn label(self) -> &'static str {
        match self {
            Self::R1 => "R1",
            Self::R2 => "R2",
            Self::R3 => "R3",
            Self::R4 => "R4",
            Self::R5 => "R5",
            Self::R6 => "R6",
            Self::R7 => "R7",
        }
    }
}

/// Undirected edge with `a < b`; self-loops are implicit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub rule: EdgeRule,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GraphRecord", into = "GraphRecord")]
pub struct QuisgGraph {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    adjacency: Vec<bool>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct GraphRecord {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
}

impl TryFrom<GraphRecord> for QuisgGraph {
    type Error = Error;

    fn try_from(r: GraphRecord) -> Result<Self> {
        Self::from_parts(r.nodes, r.edges)
    }
}

impl From<QuisgGraph> for GraphRecord {
    fn from(g: QuisgGraph) -> Self {
        Self {
            nodes: g.nodes,
            edges: g.edges,
        }
    }
}

impl QuisgGraph {
    /// Assembles a graph, deriving the adjacency with self-loops.
    pub fn from_parts(nodes: Vec<Node>, mut edges: Vec<Edge>) -> Result<Self> {
        let n = nodes.len();
        let mut adjacency = alloc::vec![false; n * n];
        for i in 0..n {
            adjacency[i * n + i] = true;
        }
        for e in &edges {
            if e.a >= e.b || e.b >= n {
                return Err(Error::Dimension {
                    op: "graph",
                    detail: format!("edge {}-{} invalid for {n} nodes", e.a, e.b),
                });
            }
            if adjacency[e.a * n + e.b] {
                return Err(Error::Dimension {
                    op: "graph",
                    detail: format!("duplicate edge {}-{}", e.a, e.b),
                });
            }
            adjacency[e.a * n + e.b] = true;
            adjacency[e.b * n + e.a] = true;
        }
        edges.sort();
        Ok(Self { nodes, edges, adjacency })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Row-major `n × n` adjacency, diagonal set.
    pub fn adjacency(&self) -> &[bool] {
        &self.adjacency
    }

    pub fn connected(&self, a: usize, b: usize) -> bool {
        self.adjacency[a * self.len() + b]
    }

    pub fn neighbors(&self, m: usize) -> impl Iterator<Item = usize> + '_ {
        let n = self.len();
        (0..n).filter(move |&o| self.adjacency[m * n + o])
    }

    pub fn question_node(&self) -> usize {
        0
    }

    pub fn nodes_of(&self, t: NodeType) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().enumerate().filter(move |(_, v)| v.node_type == t).map(|(i, _)| i)
    }

    pub fn speaker_node(&self, t: NodeType, speaker: &str) -> Option<usize> {
        self.nodes_of(t).find(|&i| self.nodes[i].speaker() == Some(speaker))
    }

    /// Word node of an absolute token index.
    pub fn word_node(&self, token: usize) -> Option<usize> {
        self.nodes
            .iter()
            .position(|v| matches!(v.origin, NodeOrigin::DialogueWord { token: t, .. } if t == token))
    }

    /// Undirected edge count, self-loops excluded.
    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn to_dot(&self) -> String {
        let mut out = String::from("graph quisg {\n  node [style=filled];\n");
        for (i, v) in self.nodes.iter().enumerate() {
            let color = match v.node_type {
                NodeType::Qw => "gold",
                NodeType::Qs => "salmon",
                NodeType::Ds => "lightblue",
                NodeType::Dw => "palegreen",
            };
            let label = match &v.origin {
                NodeOrigin::QuestionWord { words } => format!("qw {words:?}"),
                NodeOrigin::QuestionSpeaker { speaker, .. } => format!("qs {speaker}"),
                NodeOrigin::DialogueSpeaker { speaker, .. } => format!("ds {speaker}"),
                NodeOrigin::DialogueWord {
                    utterance, word, token, scene,
                } => format!("dw u{utterance} w{word} t{token}{}", if *scene { " scene" } else { "" }),
            };
            let _ = writeln!(out, "  n{i} [label=\"{}\", fillcolor={color}, type={}];", escape(&label), v.node_type.label());
        }
        for e in &self.edges {
            let _ = writeln!(out, "  n{} -- n{} [label={}];", e.a, e.b, e.rule.label());
        }
        for i in 0..self.len() {
            let _ = writeln!(out, "  n{i} -- n{i} [label=self];");
        }
        out.push_str("}\n");
        out
    }
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Word indices of the questioning word: the leftmost interrogative, or the
/// first word if there is none.
pub fn questioning_words(words: &[String]) -> Vec<usize> {
    let norm: Vec<String> = words.iter().map(|w| normalize_name_word(w)).collect();
    for i in 0..norm.len() {
        let multi = norm.len() >= i + MULTIWORD_QUESTION.len()
            && norm[i..i + MULTIWORD_QUESTION.len()].iter().zip(MULTIWORD_QUESTION).all(|(a, b)| a == b);
        if multi {
            return (i..i + MULTIWORD_QUESTION.len()).collect();
        }
        if QUESTION_WORDS.contains(&norm[i].as_str()) {
            return alloc::vec![i];
        }
    }
    if words.is_empty() {
        Vec::new()
    } else {
        alloc::vec![0]
    }
}

pub fn build_nodes(
    question: &Question,
    mentions: &[SpeakerMention],
    keyset: &KeySet,
    dialogue: &Dialogue,
    map: &AlignmentMap,
    seq: &TokenSequence,
) -> Result<Vec<Node>> {
    if keyset.is_empty() {
        return Err(Error::EmptyKeySet);
    }
    let mut nodes = Vec::new();

    let qwords = questioning_words(&question.words);
    let mut rows: Vec<usize> = qwords
        .iter()
        .filter_map(|&w| map.question_word_tokens.get(w))
        .flat_map(|s| s.iter())
        .collect();
    if rows.is_empty() {
        rows.push(seq.question_range.start);
    }
    nodes.push(Node {
        node_type: NodeType::Qw,
        pooling: if rows.len() == 1 { Pooling::Single } else { Pooling::Mean },
        rows,
        origin: NodeOrigin::QuestionWord { words: qwords },
    });

    let speakers: BTreeSet<&str> = mentions.iter().map(|m| m.resolved_speaker.as_str()).collect();
    for speaker in speakers {
        let words: Vec<usize> = mentions
            .iter()
            .filter(|m| m.resolved_speaker == speaker)
            .map(|m| m.question_word_index)
            .collect();
        let rows: Vec<usize> = words
            .iter()
            .map(|&w| map.question_word_tokens.get(w).copied().ok_or(Error::NodeOutOfContext { node: nodes.len() }))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flat_map(|s| s.iter())
            .collect();
        nodes.push(Node {
            node_type: NodeType::Qs,
            pooling: if rows.len() == 1 { Pooling::Single } else { Pooling::Mean },
            rows,
            origin: NodeOrigin::QuestionSpeaker {
                words,
                speaker: speaker.into(),
            },
        });
    }

    let mut ds_order: Vec<&str> = Vec::new();
    for &u in &keyset.utterances {
        if let Some(s) = dialogue.utterances.get(u).and_then(|u| u.speaker.as_deref()) {
            if !ds_order.contains(&s) {
                ds_order.push(s);
            }
        }
    }
    for speaker in ds_order {
        let utterances: Vec<usize> = keyset
            .utterances
            .iter()
            .copied()
            .filter(|&u| dialogue.utterances[u].speaker.as_deref() == Some(speaker))
            .collect();
        let rows: Vec<usize> = utterances
            .iter()
            .filter_map(|&u| map.speaker_token_spans[u])
            .flat_map(|s| s.iter())
            .collect();
        if rows.is_empty() {
            return Err(Error::NodeOutOfContext { node: nodes.len() });
        }
        nodes.push(Node {
            node_type: NodeType::Ds,
            pooling: if rows.len() == 1 { Pooling::Single } else { Pooling::Mean },
            rows,
            origin: NodeOrigin::DialogueSpeaker {
                speaker: speaker.into(),
                utterances,
            },
        });
    }

    for &u in &keyset.utterances {
        let scene = dialogue.utterances.get(u).is_some_and(|u| u.is_scene);
        let words = map.word_token_spans.get(u).filter(|w| !w.is_empty()).ok_or(Error::NodeOutOfContext { node: nodes.len() })?;
        for (w, span) in words.iter().enumerate() {
            for token in span.iter() {
                nodes.push(Node {
                    node_type: NodeType::Dw,
                    pooling: Pooling::Single,
                    rows: alloc::vec![token],
                    origin: NodeOrigin::DialogueWord {
                        utterance: u,
                        word: w,
                        token,
                        scene,
                    },
                });
            }
        }
    }

    for (i, v) in nodes.iter().enumerate() {
        let range = match v.node_type {
            NodeType::Qw | NodeType::Qs => seq.question_range,
            NodeType::Ds | NodeType::Dw => seq.context_range,
        };
        if v.rows.iter().any(|&r| !range.contains(r)) {
            return Err(Error::NodeOutOfContext { node: i });
        }
    }
    Ok(nodes)
}

/// Connects the nodes by the seven construction rules.
pub fn build_edges(nodes: Vec<Node>, dialogue: &Dialogue, word_window: usize) -> Result<QuisgGraph> {
    let mut set: alloc::collections::BTreeMap<(usize, usize), EdgeRule> = Default::default();
    let mut link = |x: usize, y: usize, rule: EdgeRule| {
        if x != y {
            set.entry((x.min(y), x.max(y))).or_insert(rule);
        }
    };

    let qw = nodes.iter().position(|v| v.node_type == NodeType::Qw);
    let of = |t: NodeType| nodes.iter().enumerate().filter(move |(_, v)| v.node_type == t).map(|(i, _)| i);
    let ds_by_speaker = |s: &str| of(NodeType::Ds).find(|&i| nodes[i].speaker() == Some(s));

    // Speakers named in each scene utterance among the dialogue speakers.
    let ds_names: Vec<String> = of(NodeType::Ds).filter_map(|i| nodes[i].speaker().map(String::from)).collect();
    let scene_speakers = |u: usize| -> BTreeSet<String> {
        match_roster(&dialogue.utterances[u].words, &ds_names).into_iter().map(|(_, s)| s).collect()
    };

    let dw: Vec<usize> = of(NodeType::Dw).collect();
    for (pos, &x) in dw.iter().enumerate() {
        let (ux, wx, scene) = nodes[x].word_position().expect("dw");
        for &y in &dw[pos + 1..] {
            let (uy, wy, _) = nodes[y].word_position().expect("dw");
            if ux == uy && wx.abs_diff(wy) <= word_window {
                link(x, y, EdgeRule::R1);
            }
        }
        if scene {
            for s in scene_speakers(ux) {
                if let Some(d) = ds_by_speaker(&s) {
                    link(x, d, EdgeRule::R7);
                }
            }
        } else if let Some(d) = dialogue.utterances[ux].speaker.as_deref().and_then(ds_by_speaker) {
            link(x, d, EdgeRule::R2);
        }
        if let Some(q) = qw {
            link(x, q, EdgeRule::R3);
        }
    }

    let qs: Vec<usize> = of(NodeType::Qs).collect();
    for (pos, &x) in qs.iter().enumerate() {
        for &y in &qs[pos + 1..] {
            link(x, y, EdgeRule::R4);
        }
        if let Some(d) = nodes[x].speaker().and_then(ds_by_speaker) {
            link(x, d, EdgeRule::R5);
        }
        if let Some(q) = qw {
            link(x, q, EdgeRule::R6);
        }
    }

    let edges = set.into_iter().map(|((a, b), rule)| Edge { a, b, rule }).collect();
    QuisgGraph::from_parts(nodes, edges)
}

/// Nodes and edges in one call.
pub fn build_graph(
    question: &Question,
    mentions: &[SpeakerMention],
    keyset: &KeySet,
    dialogue: &Dialogue,
    map: &AlignmentMap,
    seq: &TokenSequence,
    word_window: usize,
) -> Result<QuisgGraph> {
    let nodes = build_nodes(question, mentions, keyset, dialogue, map, seq)?;
    build_edges(nodes, dialogue, word_window)
}
