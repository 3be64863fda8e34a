//! Small hand-built programs used by examples, tests and the CLI demo.

use crate::ast::{ClassSet, Dataset, Label, Node, Program, DEFAULT_VOCAB_VERSION, MODULE_SCOPE};

/// `a = 1; b = 2; c = a + b`, every identifier an `int`.
pub fn fig1a_tree() -> Node {
    let assign = |id, target: &str, value: Node| {
        Node::new(
            id,
            "Assign",
            vec![
                Node::name(id + 1, target, vec![Node::new(id + 2, "Store", vec![])]),
                value,
            ],
        )
    };
    Node::new(
        0,
        "Module",
        vec![
            assign(1, "a", Node::new(4, "Num", vec![])),
            assign(5, "b", Node::new(8, "Num", vec![])),
            assign(
                9,
                "c",
                Node::new(
                    12,
                    "Add",
                    vec![
                        Node::name(13, "a", vec![Node::new(14, "Load", vec![])]),
                        Node::name(15, "b", vec![Node::new(16, "Load", vec![])]),
                    ],
                ),
            ),
        ],
    )
}

pub fn fig1a_program() -> Program {
    let int = ClassSet::builtin().index_of("int").expect("int class");
    Program {
        path: "fig1a.py".into(),
        root: fig1a_tree(),
        labels: ["a", "b", "c"]
            .into_iter()
            .map(|n| Label {
                scope: MODULE_SCOPE.into(),
                name: n.into(),
                class: int,
            })
            .collect(),
    }
}

pub fn fig1a_dataset() -> Dataset {
    Dataset::new(ClassSet::builtin(), DEFAULT_VOCAB_VERSION, vec![fig1a_program()])
}
