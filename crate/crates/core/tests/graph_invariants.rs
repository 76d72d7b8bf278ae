use proptest::prelude::*;
use quisg_core::corpus::{resolve_question_speakers, Dialogue, Question};
use quisg_core::extractor::KeySet;
use quisg_core::graph::{build_graph, NodeType};
use quisg_core::textseq::{build_sequence, SequenceOptions, WhitespaceTokenizer};

const NAMES: [&str; 3] = ["Ross Geller", "Monica Geller", "Phoebe"];
const WORDS: [&str; 8] = ["ross", "monica", "coffee", "phoebe's", "geller", "we", "on", "break"];

fn dialogue() -> impl Strategy<Value = Dialogue> {
    let turn = (0..3usize, prop::collection::vec(0..8usize, 1..5));
    (prop::option::of(prop::collection::vec(0..8usize, 1..5)), prop::collection::vec(turn, 1..5)).prop_map(|(scene, turns)| {
        let w = |ix: Vec<usize>| ix.into_iter().map(|i| WORDS[i].to_string()).collect::<Vec<_>>();
        let turns = turns.into_iter().map(|(s, ix)| (NAMES[s].to_string(), w(ix))).collect();
        Dialogue::new("d", scene.map(w), turns).unwrap()
    })
}

proptest! {
    #[test]
    fn graph_is_symmetric_with_self_loops(
        d in dialogue(),
        q in prop::collection::vec(0..8usize, 1..5),
        keep in prop::collection::vec(any::<bool>(), 6),
        k_w in 1..4usize,
    ) {
        let q = Question::new("q", q.into_iter().map(|i| WORDS[i].to_string()).collect(), Vec::new());
        let mentions = resolve_question_speakers(&q, &d, None);
        let keyset = KeySet::from_utterances((0..d.len()).filter(|&u| keep[u] || u == 0));
        let (seq, map) = build_sequence(&q, &d, &WhitespaceTokenizer, SequenceOptions::default()).unwrap();
        let g = build_graph(&q, &mentions, &keyset, &d, &map, &seq, k_w).unwrap();
        let n = g.len();
        let a = g.adjacency();
        for i in 0..n {
            prop_assert!(a[i * n + i]);
            for j in 0..n {
                prop_assert_eq!(a[i * n + j], a[j * n + i]);
            }
        }
        prop_assert_eq!(g.nodes().iter().filter(|x| x.node_type == NodeType::Qw).count(), 1);
        // Every dialogue word reaches the question node directly.
        let qw = g.nodes().iter().position(|x| x.node_type == NodeType::Qw).unwrap();
        for (i, x) in g.nodes().iter().enumerate() {
            if x.node_type == NodeType::Dw {
                prop_assert!(g.connected(i, qw));
            }
        }
    }
}
