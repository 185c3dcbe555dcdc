mod common;

use common::*;
use proptest::prelude::*;
use stepcode_core::canonical::to_canonical_string;
use stepcode_core::HyperParams;
use stepcode_engine::tree::PotentialLabel;
use stepcode_engine::{collect_tree, emit_jsonl, label_pairs, load_jsonl, RolloutConfig, ScriptBook};

fn full_tree(depth: u32, salt: u32) -> Node {
    if depth == 0 {
        Node::Final { correct: !salt.is_multiple_of(3) }
    } else {
        Node::Continue {
            ok: salt % 5 != 1,
            children: Box::new([full_tree(depth - 1, salt * 7 + 1), full_tree(depth - 1, salt * 7 + 2)]),
        }
    }
}

fn rig_for(roots: &[Node; 2]) -> Rig {
    let mut book = ScriptBook::new();
    script_tree(&mut book, "t", roots);
    Rig::offline(book)
}

#[test]
fn depth_capped_tree_shape_and_pairs() {
    let roots = [full_tree(3, 1), full_tree(3, 2)];
    let rig = rig_for(&roots);
    let hp = HyperParams::default();
    let tree = collect_tree(&task("t", 8), &rig.runtime(), &hp, &RolloutConfig::exhaustive(), 2).unwrap();
    assert_eq!(tree.step_nodes(), 6);
    assert!(tree.nodes.iter().all(|n| n.depth <= 2));
    assert!(tree.nodes[1..].iter().all(|n| n.latent.is_some()));

    let pairs = label_pairs(&tree);
    let distinct = tree
        .nodes
        .iter()
        .filter(|n| match n.children[..] {
            [a, b] => tree.nodes[a].latent.as_ref().unwrap().value != tree.nodes[b].latent.as_ref().unwrap().value,
            _ => false,
        })
        .count();
    assert_eq!(pairs.len(), distinct);
    for p in &pairs {
        assert!(p.chosen_latent > p.rejected_latent);
        assert_ne!(p.chosen, p.rejected);
    }
    let labelled = tree.nodes.iter().filter(|n| n.label == Some(PotentialLabel::MorePotential)).count();
    assert_eq!(labelled, pairs.len());
}

#[test]
fn finals_are_not_expanded() {
    let roots = [Node::Final { correct: true }, full_tree(1, 4)];
    let rig = rig_for(&roots);
    let tree = collect_tree(&task("t", 8), &rig.runtime(), &HyperParams::default(), &RolloutConfig::exhaustive(), 5).unwrap();
    // two roots plus the two children of the continuing one
    assert_eq!(tree.step_nodes(), 4);
    assert!(tree.nodes[1].children.is_empty());
    assert_eq!(tree.nodes[1].latent.as_ref().unwrap().value, 1.0);
}

#[test]
fn collection_is_deterministic_and_round_trips() {
    let roots = [full_tree(2, 3), full_tree(2, 5)];
    let collect = || {
        let rig = rig_for(&roots);
        let tree = collect_tree(&task("t", 8), &rig.runtime(), &HyperParams::default(), &RolloutConfig::exhaustive(), 3).unwrap();
        (to_canonical_string(&tree).unwrap(), label_pairs(&tree))
    };
    let (a, pairs) = collect();
    let (b, again) = collect();
    assert_eq!(a, b);
    assert_eq!(pairs, again);
    assert!(!pairs.is_empty());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pairs.jsonl");
    assert_eq!(emit_jsonl(&pairs, &path).unwrap(), pairs.len());
    let raw = std::fs::read_to_string(&path).unwrap();
    assert_eq!(raw.lines().count(), pairs.len());
    for line in raw.lines() {
        let value: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(to_canonical_string(&value).unwrap(), line);
    }
    assert_eq!(load_jsonl(&path).unwrap(), pairs);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn pairs_are_antisymmetric(salt_a in 0u32..500, salt_b in 0u32..500, depth in 1u32..3) {
        let roots = [full_tree(depth, salt_a), full_tree(depth, salt_b)];
        let rig = rig_for(&roots);
        let tree = collect_tree(&task("t", 8), &rig.runtime(), &HyperParams::default(), &RolloutConfig::exhaustive(), 3).unwrap();
        for p in label_pairs(&tree) {
            prop_assert!(p.chosen_latent > p.rejected_latent);
            let swapped = tree.nodes.iter().any(|n| match n.children[..] {
                [a, b] => {
                    let text = |i: usize| tree.nodes[i].step.as_ref().unwrap().raw_model_output.clone();
                    let lat = |i: usize| tree.nodes[i].latent.as_ref().unwrap().value;
                    (text(a) == p.rejected && text(b) == p.chosen && lat(b) > lat(a))
                        || (text(a) == p.chosen && text(b) == p.rejected && lat(a) > lat(b))
                }
                _ => false,
            });
            prop_assert!(swapped);
        }
    }
}
