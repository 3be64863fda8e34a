// Shared helpers for the integration tests: a straight-line reference
// implementation of both cells, tree generators and model builders.
#![allow(dead_code)]

use std::collections::HashMap;

use iotyper::ast::{ClassSet, Node, NodeId, Vocabulary, NAME_KIND};
use iotyper::autodiff::{ParameterStore, Tape};
use iotyper::iornn::{Model, ModelConfig, SiblingsSource, TreeGraph, Variant};
use iotyper::transforms::{add_sink_nodes, resolve_scopes, AugmentedTree};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------------
// Reference implementation. Plain vectors, recursion over the tree, no tape.

#[derive(Debug, Clone, PartialEq)]
pub struct St {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

fn mat<'a>(store: &'a ParameterStore, name: &str) -> (usize, usize, &'a [f64]) {
    let id = store.id(name).unwrap_or_else(|| panic!("missing parameter {name}"));
    let t = store.value(id);
    (t.rows(), t.cols(), t.data())
}

fn mv(store: &ParameterStore, name: &str, x: &[f64]) -> Vec<f64> {
    let (rows, cols, w) = mat(store, name);
    assert_eq!(cols, x.len(), "{name}");
    (0..rows)
        .map(|r| (0..cols).map(|c| w[r * cols + c] * x[c]).sum())
        .collect()
}

fn vadd(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn vmul(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

fn sig(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| 1.0 / (1.0 + (-x).exp())).collect()
}

fn th(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| x.tanh()).collect()
}

pub struct Oracle<'a> {
    pub store: &'a ParameterStore,
    pub vocab: &'a Vocabulary,
    pub variant: Variant,
    pub siblings: SiblingsSource,
    pub dm: usize,
}

/// Inside and outside states keyed by node id; sinks keyed by sink index.
pub struct OracleStates {
    pub inside: HashMap<NodeId, St>,
    pub outside: HashMap<NodeId, St>,
    pub sink_inside: Vec<St>,
    pub sink_outside: Vec<St>,
}

/// A child slot below a tree node: another tree node or the node's sink.
#[derive(Clone, Copy)]
enum Slot<'n> {
    Tree(&'n Node),
    Sink(usize),
}

fn slots<'n>(node: &'n Node, aug: &AugmentedTree) -> Vec<Slot<'n>> {
    let mut out: Vec<Slot<'n>> = node.children.iter().map(Slot::Tree).collect();
    if let Some(s) = aug.sink_for(node.id) {
        out.push(Slot::Sink(s));
    }
    out
}

impl Oracle<'_> {
    fn embed_row(&self, node: Option<&Node>) -> Vec<f64> {
        let row = match node {
            None => self.vocab.len() + 1,
            Some(n) if n.kind == NAME_KIND => self.vocab.len() + 1,
            Some(n) => self.vocab.lookup(&n.kind).unwrap_or(self.vocab.len()),
        };
        let (_, cols, e) = mat(self.store, "embed");
        e[row * cols..(row + 1) * cols].to_vec()
    }

    fn zeros(&self) -> Vec<f64> {
        vec![0.0; self.dm]
    }

    fn childsum(&self, dir: &str, x: Option<&[f64]>, sources: &[St]) -> St {
        let mut h_sum = self.zeros();
        for s in sources {
            h_sum = vadd(&h_sum, &s.h);
        }
        let pre = |g: &str, h: &[f64]| {
            let mut v = vadd(&mv(self.store, &format!("{dir}.u.{g}"), h), &mat(self.store, &format!("{dir}.b.{g}")).2.to_vec());
            if let Some(x) = x {
                v = vadd(&v, &mv(self.store, &format!("{dir}.w.{g}"), x));
            }
            v
        };
        let i = sig(&pre("i", &h_sum));
        let o = sig(&pre("o", &h_sum));
        let u = th(&pre("u", &h_sum));
        let mut c = vmul(&i, &u);
        for s in sources {
            let f = sig(&pre("f", &s.h));
            c = vadd(&c, &vmul(&f, &s.c));
        }
        St { h: vmul(&o, &th(&c)), c }
    }

    fn inside_slot(&self, slot: Slot<'_>, aug: &AugmentedTree, out: &mut OracleStates) -> St {
        match slot {
            Slot::Sink(s) => out.sink_inside[s].clone(),
            Slot::Tree(n) => self.inside_node(n, aug, out),
        }
    }

    fn inside_node(&self, node: &Node, aug: &AugmentedTree, out: &mut OracleStates) -> St {
        let kids: Vec<St> = slots(node, aug)
            .into_iter()
            .map(|s| self.inside_slot(s, aug, out))
            .collect();
        let x = self.embed_row(Some(node));
        let st = self.inside_cell(&x, &kids);
        out.inside.insert(node.id, st.clone());
        st
    }

    fn inside_cell(&self, x: &[f64], kids: &[St]) -> St {
        match self.variant {
            Variant::ChildSum => self.childsum("inside", Some(x), kids),
            Variant::Nary => {
                let wx = mv(self.store, "inside.w", x);
                let (mut h, mut c) = (wx.clone(), wx);
                for (k, s) in kids.iter().enumerate() {
                    h = vadd(&h, &mv(self.store, &format!("inside.u_h.{k}"), &s.h));
                    c = vadd(&c, &mv(self.store, &format!("inside.u_c.{k}"), &s.c));
                }
                St { h: th(&h), c: th(&c) }
            }
        }
    }

    /// One parent's contribution to the N-ary outside pre-activations.
    fn nary_context(&self, parent_out: &St, siblings: &[(usize, St)], h: &mut Vec<f64>, c: &mut Vec<f64>) {
        *h = vadd(h, &mv(self.store, "outside.w", &parent_out.h));
        *c = vadd(c, &mv(self.store, "outside.w", &parent_out.c));
        for (pos, s) in siblings {
            *h = vadd(h, &mv(self.store, &format!("outside.u_h.{pos}"), &s.h));
            *c = vadd(c, &mv(self.store, &format!("outside.u_c.{pos}"), &s.c));
        }
    }

    fn sibling_state(&self, slot: Slot<'_>, pos: usize, me: usize, out: &OracleStates) -> St {
        let use_outside = self.variant == Variant::Nary && self.siblings == SiblingsSource::Outside && pos < me;
        match (slot, use_outside) {
            (Slot::Tree(n), true) => out.outside[&n.id].clone(),
            (Slot::Tree(n), false) => out.inside[&n.id].clone(),
            (Slot::Sink(s), true) => out.sink_outside[s].clone(),
            (Slot::Sink(s), false) => out.sink_inside[s].clone(),
        }
    }

    fn outside_children(&self, node: &Node, aug: &AugmentedTree, out: &mut OracleStates) {
        let parent_out = out.outside[&node.id].clone();
        let kids = slots(node, aug);
        for (j, slot) in kids.iter().enumerate() {
            let Slot::Tree(child) = *slot else { continue };
            let siblings: Vec<(usize, St)> = kids
                .iter()
                .enumerate()
                .filter(|&(p, _)| p != j)
                .map(|(p, &s)| (p, self.sibling_state(s, p, j, out)))
                .collect();
            let st = match self.variant {
                Variant::ChildSum => {
                    let mut sources = vec![parent_out.clone()];
                    sources.extend(siblings.into_iter().map(|(_, s)| s));
                    self.childsum("outside", None, &sources)
                }
                Variant::Nary => {
                    let (mut h, mut c) = (self.zeros(), self.zeros());
                    self.nary_context(&parent_out, &siblings, &mut h, &mut c);
                    St { h: th(&h), c: th(&c) }
                }
            };
            out.outside.insert(child.id, st);
            self.outside_children(child, aug, out);
        }
    }

    pub fn run(&self, aug: &AugmentedTree) -> OracleStates {
        let mut out = OracleStates {
            inside: HashMap::new(),
            outside: HashMap::new(),
            sink_inside: Vec::new(),
            sink_outside: Vec::new(),
        };
        let x_var = self.embed_row(None);
        out.sink_inside = (0..aug.sinks.len()).map(|_| self.inside_cell(&x_var, &[])).collect();
        let root_inside = self.inside_node(&aug.root, aug, &mut out);
        out.outside.insert(aug.root.id, root_inside);
        self.outside_children(&aug.root, aug, &mut out);

        let mut by_id: HashMap<NodeId, &Node> = HashMap::new();
        aug.root.walk(&mut |n| {
            by_id.insert(n.id, n);
        });
        for sink in &aug.sinks {
            let mut cs_sources = Vec::new();
            let (mut h, mut c) = (self.zeros(), self.zeros());
            for occ in &sink.occurrences {
                let node = by_id[occ];
                let kids = slots(node, aug);
                let me = kids.len() - 1;
                let parent_out = out.outside[occ].clone();
                let siblings: Vec<(usize, St)> = kids[..me]
                    .iter()
                    .enumerate()
                    .map(|(p, &slot)| (p, self.sibling_state(slot, p, me, &out)))
                    .collect();
                match self.variant {
                    Variant::ChildSum => {
                        cs_sources.push(parent_out);
                        cs_sources.extend(siblings.into_iter().map(|(_, s)| s));
                    }
                    Variant::Nary => self.nary_context(&parent_out, &siblings, &mut h, &mut c),
                }
            }
            let st = match self.variant {
                Variant::ChildSum => self.childsum("outside", None, &cs_sources),
                Variant::Nary => St { h: th(&h), c: th(&c) },
            };
            out.sink_outside.push(st);
        }
        out
    }

    /// The one-layer head applied to a sink's outside hidden state.
    pub fn logits(&self, h: &[f64]) -> Vec<f64> {
        let z = vadd(&mv(self.store, "head.w", h), mat(self.store, "head.b").2);
        z.into_iter().map(|v| v.max(0.0)).collect()
    }
}

// ---------------------------------------------------------------------------
// Library-side helpers.

pub struct Computed {
    pub inside: Vec<St>,
    pub outside: Vec<St>,
    pub logits: Vec<Vec<f64>>,
}

/// Runs the library forward pass and reads every state off the tape.
pub fn library_states(model: &Model, graph: &TreeGraph) -> Computed {
    let mut tape = Tape::new(model.store());
    let out = model.layout().forward(&mut tape, graph).expect("forward");
    let read = |v| tape.value(v).data().to_vec();
    Computed {
        inside: out
            .states
            .iter()
            .map(|s| St { h: read(s.inside.h), c: read(s.inside.c) })
            .collect(),
        outside: out
            .states
            .iter()
            .map(|s| St { h: read(s.outside.h), c: read(s.outside.c) })
            .collect(),
        logits: out.logits.iter().map(|&l| read(l)).collect(),
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Largest disagreement between the library and the oracle over every
/// inside, outside and logit entry of `aug`.
pub fn oracle_gap(model: &Model, aug: &AugmentedTree, siblings: SiblingsSource) -> f64 {
    let graph = TreeGraph::build(aug, model.vocabulary());
    let lib = library_states(model, &graph);
    let oracle = Oracle {
        store: model.store(),
        vocab: model.vocabulary(),
        variant: model.config().variant,
        siblings,
        dm: model.config().d_hidden,
    };
    let want = oracle.run(aug);
    let mut gap: f64 = 0.0;
    for idx in 0..graph.len() {
        let node = graph.node(idx);
        let (i, o) = match node.sink {
            Some(s) => (&want.sink_inside[s], &want.sink_outside[s]),
            None => (&want.inside[&node.node_id], &want.outside[&node.node_id]),
        };
        gap = gap
            .max(max_abs_diff(&lib.inside[idx].h, &i.h))
            .max(max_abs_diff(&lib.inside[idx].c, &i.c))
            .max(max_abs_diff(&lib.outside[idx].h, &o.h))
            .max(max_abs_diff(&lib.outside[idx].c, &o.c));
    }
    for (s, logits) in lib.logits.iter().enumerate() {
        gap = gap.max(max_abs_diff(logits, &oracle.logits(&want.sink_outside[s].h)));
    }
    gap
}

pub fn augment(root: &Node) -> AugmentedTree {
    add_sink_nodes(root, &resolve_scopes(root).expect("scopes"))
}

/// Model with every parameter drawn uniformly from (−0.5, 0.5).
pub fn random_model(mut config: ModelConfig, seed: u64) -> Model {
    config.restructuring = false;
    let mut model = Model::init(config, ClassSet::builtin(), Vocabulary::builtin(), seed).expect("init");
    randomize(model.store_mut(), seed ^ 0x5eed);
    model
}

pub fn randomize(store: &mut ParameterStore, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in store.value_mut(id).data_mut() {
            *v = rng.gen_range(-0.5..0.5);
        }
    }
}

pub fn config(variant: Variant, max_children: usize, siblings: SiblingsSource) -> ModelConfig {
    let mut c = ModelConfig::new(variant);
    c.max_children = max_children;
    c.siblings_source = siblings;
    c.restructuring = false;
    c
}

// ---------------------------------------------------------------------------
// Tree generators.

/// Every ordered rooted tree shape with exactly `n` nodes, as child lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shape(pub Vec<Shape>);

impl Shape {
    pub fn size(&self) -> usize {
        1 + self.0.iter().map(Shape::size).sum::<usize>()
    }
}

pub fn shapes(n: usize) -> Vec<Shape> {
    if n == 0 {
        return Vec::new();
    }
    forests(n - 1).into_iter().map(Shape).collect()
}

fn forests(n: usize) -> Vec<Vec<Shape>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for first in 1..=n {
        for head in shapes(first) {
            for tail in forests(n - first) {
                let mut f = vec![head.clone()];
                f.extend(tail);
                out.push(f);
            }
        }
    }
    out
}

/// All shapes of 1..=max nodes.
pub fn all_shapes(max: usize) -> Vec<Shape> {
    (1..=max).flat_map(shapes).collect()
}

/// Internal nodes get syntax kinds (one of them outside the vocabulary);
/// with `names`, leaves become identifiers `x`/`y` alternating in pre-order
/// so that identifiers recur.
pub fn realize(shape: &Shape, names: bool) -> Node {
    const KINDS: &[&str] = &["Module", "Assign", "BinOp", "NotAKind", "Call"];
    fn go(s: &Shape, depth: usize, names: bool, next: &mut NodeId, leaves: &mut usize) -> Node {
        let id = *next;
        *next += 1;
        if s.0.is_empty() && names {
            let ident = if *leaves % 2 == 0 { "x" } else { "y" };
            *leaves += 1;
            return Node::name(id, ident, vec![]);
        }
        let kind = KINDS[depth % KINDS.len()];
        let children = s.0.iter().map(|c| go(c, depth + 1, names, next, leaves)).collect();
        Node::new(id, kind, children)
    }
    go(shape, 0, names, &mut 0, &mut 0)
}

/// Random tree of at most `max_nodes` nodes and fan-out at most `max_fan`
/// with at least one identifier occurring twice or more.
pub fn random_tree(rng: &mut impl Rng, max_nodes: usize, max_fan: usize) -> Node {
    assert!(max_nodes >= 3);
    loop {
        let n = rng.gen_range(3..=max_nodes);
        let mut parent = vec![usize::MAX; n];
        let mut fan = vec![0usize; n];
        for i in 1..n {
            let candidates: Vec<usize> = (0..i).filter(|&p| fan[p] < max_fan).collect();
            let p = candidates[rng.gen_range(0..candidates.len())];
            parent[i] = p;
            fan[p] += 1;
        }
        let idents = ["x", "y", "z"];
        let labels: Vec<Option<&str>> = (0..n)
            .map(|i| (i > 0 && rng.gen_bool(0.5)).then(|| idents[rng.gen_range(0..idents.len())]))
            .collect();
        let mut counts = HashMap::new();
        for l in labels.iter().flatten() {
            *counts.entry(*l).or_insert(0) += 1;
        }
        if !counts.values().any(|&c| c >= 2) {
            continue;
        }
        fn build(i: usize, parent: &[usize], labels: &[Option<&str>], rng_kinds: &[&str]) -> Node {
            let children = (0..parent.len())
                .filter(|&c| parent[c] == i)
                .map(|c| build(c, parent, labels, rng_kinds))
                .collect();
            match labels[i] {
                Some(ident) => Node::name(i as NodeId, ident, children),
                None => Node::new(i as NodeId, rng_kinds[i], children),
            }
        }
        let pool = ["Module", "Assign", "Expr", "Call", "Add", "Num", "Str", "Attribute"];
        let kinds: Vec<&str> = (0..n)
            .map(|i| if i == 0 { "Module" } else { pool[rng.gen_range(1..pool.len())] })
            .collect();
        return build(0, &parent, &labels, &kinds);
    }
}
