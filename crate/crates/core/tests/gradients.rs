mod common;

use common::*;
use iotyper::ast::{ClassSet, Label, Node, Program, MODULE_SCOPE};
use iotyper::autodiff::grad_check;
use iotyper::iornn::{Head, Model, ModelConfig, SiblingsSource, Variant};

/// `x` used three times: one sink with three parents.
fn triple_use() -> Program {
    let name = |id, ctx_id, ctx: &str| Node::name(id, "x", vec![Node::new(ctx_id, ctx, vec![])]);
    let root = Node::new(
        0,
        "Module",
        vec![
            Node::new(1, "Assign", vec![name(2, 3, "Store"), Node::new(4, "Num", vec![])]),
            Node::new(
                5,
                "Expr",
                vec![Node::new(6, "Add", vec![name(7, 8, "Load"), name(9, 10, "Load")])],
            ),
            Node::new(11, "Assign", vec![Node::name(12, "y", vec![]), Node::new(13, "Str", vec![])]),
        ],
    );
    let classes = ClassSet::builtin();
    Program {
        path: "dag.py".into(),
        root,
        labels: vec![
            Label {
                scope: MODULE_SCOPE.into(),
                name: "x".into(),
                class: classes.index_of("int").unwrap(),
            },
            Label {
                scope: MODULE_SCOPE.into(),
                name: "y".into(),
                class: classes.index_of("str").unwrap(),
            },
        ],
    }
}

fn check(config: ModelConfig, seed: u64) -> f64 {
    let mut model: Model = random_model(config, seed);
    let prepared = model.prepare_program(&triple_use()).unwrap();
    let x = prepared
        .tree
        .sinks
        .iter()
        .find(|s| s.owner.name == "x")
        .unwrap();
    assert_eq!(x.occurrences.len(), 3);
    let layout = model.layout().clone();
    grad_check(model.store_mut(), 1e-5, |tape| Ok(layout.loss(tape, &prepared)?.unwrap()))
        .unwrap()
        .max_relative_error
}

#[test]
fn shared_sink_gradients_childsum() {
    let err = check(config(Variant::ChildSum, 4, SiblingsSource::Inside), 1);
    assert!(err < 1e-4, "{err}");
}

#[test]
fn shared_sink_gradients_nary() {
    let err = check(config(Variant::Nary, 4, SiblingsSource::Inside), 2);
    assert!(err < 1e-4, "{err}");
}

#[test]
fn shared_sink_gradients_nary_outside_siblings() {
    let err = check(config(Variant::Nary, 4, SiblingsSource::Outside), 3);
    assert!(err < 1e-4, "{err}");
}

#[test]
fn two_layer_head_gradients() {
    for variant in [Variant::ChildSum, Variant::Nary] {
        let mut c = config(variant, 4, SiblingsSource::Inside);
        c.head = Head::TwoLayer;
        let err = check(c, 4);
        assert!(err < 1e-4, "{variant}: {err}");
    }
}

#[test]
fn oracle_matches_with_outside_siblings_on_random_trees() {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    let model = random_model(config(Variant::Nary, 4, SiblingsSource::Outside), 9);
    for _ in 0..30 {
        let tree = random_tree(&mut rng, 10, 3);
        let gap = oracle_gap(&model, &augment(&tree), SiblingsSource::Outside);
        assert!(gap <= 1e-12, "{gap}");
    }
}
