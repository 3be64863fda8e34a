//! Inside-outside recursive networks over sink-augmented trees.
//!
//! A [`Model`] owns its parameters and a [`ModelLayout`] of parameter
//! handles. The layout alone drives the forward pass, so the same code runs
//! against a model's own store during training and against a perturbed copy
//! during gradient checks.

pub mod childsum;
pub mod graph;
pub mod nary;

use std::fmt;
use std::str::FromStr;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use childsum::{ChildSumParams, GateParams};
pub use graph::{GraphNode, ParentContext, TreeGraph};
pub use nary::{NaryParams, SiblingsSource};

use crate::ast::{ClassSet, Node, Program, Vocabulary};
use crate::autodiff::{ParamId, ParameterStore, StoreWire, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::transforms::{add_sink_nodes, resolve_scopes, restructure, truncate_children, AugmentedTree};

/// Hidden and memory vectors of one node for one direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellState {
    pub h: Var,
    pub c: Var,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeState {
    pub inside: CellState,
    pub outside: CellState,
}

/// One recursive cell: a bottom-up and a top-down pass over a [`TreeGraph`].
pub trait Layer {
    fn inside(&self, tape: &mut Tape<'_>, graph: &TreeGraph, zero: Var) -> Result<Vec<CellState>>;

    fn outside(
        &self,
        tape: &mut Tape<'_>,
        graph: &TreeGraph,
        inside: &[CellState],
        zero: Var,
    ) -> Result<Vec<CellState>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    ChildSum,
    Nary,
}

impl Variant {
    /// Hidden size used when none is given.
    pub fn default_hidden(self) -> usize {
        match self {
            Variant::ChildSum => 15,
            Variant::Nary => 10,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::ChildSum => "childsum",
            Variant::Nary => "nary",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "childsum" => Ok(Variant::ChildSum),
            "nary" => Ok(Variant::Nary),
            other => Err(Error::Config(format!(
                "unknown variant `{other}` (expected `childsum` or `nary`)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// `relu(W_c h + b_c)`.
    #[default]
    OneLayer,
    /// `relu(W_c relu(W_h h + b_h) + b_c)`.
    TwoLayer,
}

/// Initialization of the classifier's output weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadInit {
    /// Same uniform scheme as every other weight matrix.
    #[default]
    Xavier,
    /// All zeros: every logit starts at 0, so the untrained model predicts
    /// the uniform distribution.
    Zero,
}

/// Architecture of a model; everything needed to rebuild its parameter
/// shapes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub d_input: usize,
    pub d_hidden: usize,
    pub max_children: usize,
    #[serde(default)]
    pub head: Head,
    #[serde(default)]
    pub head_init: HeadInit,
    #[serde(default)]
    pub siblings_source: SiblingsSource,
    #[serde(default = "default_true")]
    pub restructuring: bool,
}

fn default_true() -> bool {
    true
}

impl ModelConfig {
    pub fn new(variant: Variant) -> Self {
        ModelConfig {
            variant,
            d_input: 10,
            d_hidden: variant.default_hidden(),
            max_children: 20,
            head: Head::OneLayer,
            head_init: HeadInit::Xavier,
            siblings_source: SiblingsSource::Inside,
            restructuring: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_input == 0 || self.d_hidden == 0 {
            return Err(Error::Config("dimensions must be positive".into()));
        }
        if self.max_children < 2 {
            return Err(Error::Config(format!(
                "max_children must be at least 2, got {}",
                self.max_children
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum Cell {
    ChildSum(ChildSumParams),
    Nary(NaryParams),
}

impl Cell {
    fn layer(&self) -> &dyn Layer {
        match self {
            Cell::ChildSum(p) => p,
            Cell::Nary(p) => p,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HeadParams {
    pub hidden: Option<(ParamId, ParamId)>,
    pub w: ParamId,
    pub b: ParamId,
}

/// Parameter handles for one model, resolved by name against a store.
#[derive(Debug, Clone)]
pub struct ModelLayout {
    pub cell: Cell,
    pub head: HeadParams,
}

/// Result of one forward pass, recorded on the caller's tape.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub states: Vec<NodeState>,
    /// Logits of each sink, in sink order.
    pub logits: Vec<Var>,
}

/// Parameter names paired with their shapes, in initialization order.
fn parameter_shapes(config: &ModelConfig, vocab_rows: usize, classes: usize) -> Vec<(String, usize, usize)> {
    let (di, dm, k) = (config.d_input, config.d_hidden, config.max_children);
    let mut shapes = vec![("embed".to_string(), vocab_rows, di)];
    match config.variant {
        Variant::ChildSum => {
            for g in ["i", "f", "o", "u"] {
                shapes.push((format!("inside.w.{g}"), dm, di));
                shapes.push((format!("inside.u.{g}"), dm, dm));
                shapes.push((format!("inside.b.{g}"), dm, 1));
            }
            for g in ["i", "f", "o", "u"] {
                shapes.push((format!("outside.u.{g}"), dm, dm));
                shapes.push((format!("outside.b.{g}"), dm, 1));
            }
        }
        Variant::Nary => {
            shapes.push(("inside.w".into(), dm, di));
            for pos in 0..k {
                shapes.push((format!("inside.u_h.{pos}"), dm, dm));
                shapes.push((format!("inside.u_c.{pos}"), dm, dm));
            }
            shapes.push(("outside.w".into(), dm, dm));
            for pos in 0..k {
                shapes.push((format!("outside.u_h.{pos}"), dm, dm));
                shapes.push((format!("outside.u_c.{pos}"), dm, dm));
            }
        }
    }
    if config.head == Head::TwoLayer {
        shapes.push(("head.hidden.w".into(), dm, dm));
        shapes.push(("head.hidden.b".into(), dm, 1));
    }
    shapes.push(("head.w".into(), classes, dm));
    shapes.push(("head.b".into(), classes, 1));
    shapes
}

impl ModelLayout {
    /// Resolves every parameter of `config` in `store`, checking shapes.
    pub fn resolve(config: &ModelConfig, store: &ParameterStore, vocab_rows: usize, classes: usize) -> Result<Self> {
        let (di, dm, k) = (config.d_input, config.d_hidden, config.max_children);
        let get = |name: &str, r: usize, c: usize| store.expect(name, r, c);
        let embedding = get("embed", vocab_rows, di)?;
        let cell = match config.variant {
            Variant::ChildSum => {
                let gates = |prefix: &str, r: usize, c: usize| -> Result<GateParams> {
                    Ok(GateParams {
                        input: get(&format!("{prefix}.i"), r, c)?,
                        forget: get(&format!("{prefix}.f"), r, c)?,
                        output: get(&format!("{prefix}.o"), r, c)?,
                        update: get(&format!("{prefix}.u"), r, c)?,
                    })
                };
                Cell::ChildSum(ChildSumParams {
                    embedding,
                    inside_w: gates("inside.w", dm, di)?,
                    inside_u: gates("inside.u", dm, dm)?,
                    inside_b: gates("inside.b", dm, 1)?,
                    outside_u: gates("outside.u", dm, dm)?,
                    outside_b: gates("outside.b", dm, 1)?,
                })
            }
            Variant::Nary => {
                let positional = |prefix: &str| -> Result<Vec<ParamId>> {
                    (0..k).map(|pos| get(&format!("{prefix}.{pos}"), dm, dm)).collect()
                };
                Cell::Nary(NaryParams {
                    embedding,
                    inside_w: get("inside.w", dm, di)?,
                    inside_u_h: positional("inside.u_h")?,
                    inside_u_c: positional("inside.u_c")?,
                    outside_w: get("outside.w", dm, dm)?,
                    outside_u_h: positional("outside.u_h")?,
                    outside_u_c: positional("outside.u_c")?,
                    siblings_source: config.siblings_source,
                })
            }
        };
        let hidden = match config.head {
            Head::OneLayer => None,
            Head::TwoLayer => Some((get("head.hidden.w", dm, dm)?, get("head.hidden.b", dm, 1)?)),
        };
        let head = HeadParams {
            hidden,
            w: get("head.w", classes, dm)?,
            b: get("head.b", classes, 1)?,
        };
        let expected = parameter_shapes(config, vocab_rows, classes).len();
        if store.len() != expected {
            return Err(Error::Validation(format!(
                "parameter store holds {} tensors, the configuration needs {expected}",
                store.len()
            )));
        }
        Ok(ModelLayout { cell, head })
    }

    /// Classifier head applied to one outside hidden state.
    pub fn classify(&self, tape: &mut Tape<'_>, h: Var) -> Result<Var> {
        let mut x = h;
        if let Some((w, b)) = self.head.hidden {
            let (w, b) = (tape.param(w), tape.param(b));
            let z = tape.matvec(w, x)?;
            let z = tape.add(z, b)?;
            x = tape.relu(z)?;
        }
        let (w, b) = (tape.param(self.head.w), tape.param(self.head.b));
        let z = tape.matvec(w, x)?;
        let z = tape.add(z, b)?;
        tape.relu(z)
    }

    /// Inside pass, outside pass, then the head on every sink's outside state.
    pub fn forward(&self, tape: &mut Tape<'_>, graph: &TreeGraph) -> Result<ForwardOutput> {
        let dm = self.hidden_size(tape);
        let zero = tape.constant(Tensor::zeros(dm, 1));
        let layer = self.cell.layer();
        let inside = layer.inside(tape, graph, zero)?;
        let outside = layer.outside(tape, graph, &inside, zero)?;
        let logits = (0..graph.sink_count())
            .map(|i| self.classify(tape, outside[graph.sink_node(i)].h))
            .collect::<Result<Vec<_>>>()?;
        let states = inside
            .into_iter()
            .zip(outside)
            .map(|(inside, outside)| NodeState { inside, outside })
            .collect();
        Ok(ForwardOutput { states, logits })
    }

    /// Mean cross-entropy over the labeled sinks of `tree`; `None` when the
    /// tree has no labeled sink.
    pub fn loss(&self, tape: &mut Tape<'_>, tree: &PreparedTree) -> Result<Option<Var>> {
        if tree.targets.is_empty() {
            return Ok(None);
        }
        let out = self.forward(tape, &tree.graph)?;
        let terms = tree
            .targets
            .iter()
            .map(|&(sink, class)| tape.softmax_cross_entropy(out.logits[sink], class))
            .collect::<Result<Vec<_>>>()?;
        let total = tape.sum_list(&terms)?;
        Ok(Some(tape.scale(total, 1.0 / terms.len() as f64)?))
    }

    fn hidden_size(&self, tape: &Tape<'_>) -> usize {
        tape.store().value(self.head.w).cols()
    }
}

/// A program after the model's transforms, ready for the forward pass.
#[derive(Debug, Clone)]
pub struct PreparedTree {
    pub path: String,
    pub tree: AugmentedTree,
    pub graph: TreeGraph,
    /// `(sink index, class index)` for each labeled sink, in label order.
    pub targets: Vec<(usize, usize)>,
}

/// Applies the transforms a model of `config` expects: restructuring when
/// enabled; otherwise first-K truncation for the N-ary variant and the raw
/// tree for Child-Sum. Sinks are attached last.
pub fn prepare_tree(config: &ModelConfig, root: &Node) -> Result<AugmentedTree> {
    if config.restructuring {
        let restructured = restructure(root, config.max_children)?;
        let scopes = resolve_scopes(&restructured)?;
        Ok(add_sink_nodes(&restructured, &scopes))
    } else if config.variant == Variant::Nary {
        let scopes = resolve_scopes(root)?;
        let truncated = truncate_children(root, config.max_children);
        Ok(add_sink_nodes(&truncated, &scopes))
    } else {
        let scopes = resolve_scopes(root)?;
        Ok(add_sink_nodes(root, &scopes))
    }
}

/// Wire form of a model file: header fields followed by the parameters.
#[derive(Serialize, Deserialize)]
struct ModelWire {
    variant: Variant,
    d_input: usize,
    d_hidden: usize,
    max_children: usize,
    classes: Vec<String>,
    vocab_version: String,
    head: Head,
    #[serde(default)]
    head_init: HeadInit,
    siblings_source: SiblingsSource,
    nary_outside_source: String,
    restructuring: bool,
    #[serde(flatten)]
    params: StoreWire,
}

/// The only reading of the N-ary outside recurrence implemented.
pub const NARY_OUTSIDE_SOURCE: &str = "parent_outside";

/// A configured model with its parameters.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    classes: ClassSet,
    vocab: Vocabulary,
    store: ParameterStore,
    layout: ModelLayout,
}

impl Model {
    /// Seeded initialization: `U(−r, r)` with `r = sqrt(6 / (fan_in + fan_out))`
    /// for matrices and zero biases. With [`HeadInit::Zero`] the classifier's
    /// output weights start at zero instead.
    pub fn init(config: ModelConfig, classes: ClassSet, vocab: Vocabulary, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();
        for (name, rows, cols) in parameter_shapes(&config, vocab.embedding_rows(), classes.len()) {
            let tensor = if cols == 1 || (name == "head.w" && config.head_init == HeadInit::Zero) {
                Tensor::zeros(rows, cols)
            } else {
                let r = (6.0 / (rows + cols) as f64).sqrt();
                let dist = Uniform::new_inclusive(-r, r);
                let data = (0..rows * cols).map(|_| dist.sample(&mut rng)).collect();
                Tensor::new(rows, cols, data)?
            };
            store.insert(name, tensor)?;
        }
        let layout = ModelLayout::resolve(&config, &store, vocab.embedding_rows(), classes.len())?;
        Ok(Model {
            config,
            classes,
            vocab,
            store,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn classes(&self) -> &ClassSet {
        &self.classes
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn vocab_version(&self) -> &str {
        self.vocab.version()
    }

    pub fn store(&self) -> &ParameterStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParameterStore {
        &mut self.store
    }

    pub fn layout(&self) -> &ModelLayout {
        &self.layout
    }

    pub fn prepare(&self, root: &Node) -> Result<AugmentedTree> {
        prepare_tree(&self.config, root)
    }

    /// Transforms `program` and maps its labels onto sinks.
    pub fn prepare_program(&self, program: &Program) -> Result<PreparedTree> {
        let tree = self.prepare(&program.root)?;
        let graph = TreeGraph::build(&tree, &self.vocab);
        let targets = program
            .labels
            .iter()
            .map(|label| {
                tree.sink_index(&label.key()).map(|s| (s, label.class)).ok_or_else(|| {
                    Error::Validation(format!(
                        "{}: label `{}` in scope `{}` has no sink",
                        program.path, label.name, label.scope
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PreparedTree {
            path: program.path.clone(),
            tree,
            graph,
            targets,
        })
    }

    /// Logits of every sink of a prepared graph.
    pub fn logits(&self, graph: &TreeGraph) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new(&self.store);
        let out = self.layout.forward(&mut tape, graph)?;
        Ok(out.logits.iter().map(|&v| tape.value(v).data().to_vec()).collect())
    }

    /// Ranked predictions for every identifier of `root`.
    pub fn predict(&self, root: &Node) -> Result<Vec<Prediction>> {
        let tree = self.prepare(root)?;
        let graph = TreeGraph::build(&tree, &self.vocab);
        let logits = self.logits(&graph)?;
        Ok(tree
            .sinks
            .iter()
            .zip(logits)
            .map(|(sink, logits)| Prediction {
                scope: sink.owner.scope.clone(),
                name: sink.owner.name.clone(),
                ranking: rank_classes(&logits),
                probabilities: crate::autodiff::softmax(&logits),
            })
            .collect())
    }

    pub fn to_json(&self) -> String {
        let wire = ModelWire {
            variant: self.config.variant,
            d_input: self.config.d_input,
            d_hidden: self.config.d_hidden,
            max_children: self.config.max_children,
            classes: self.classes.names().to_vec(),
            vocab_version: self.vocab.version().to_string(),
            head: self.config.head,
            head_init: self.config.head_init,
            siblings_source: self.config.siblings_source,
            nary_outside_source: NARY_OUTSIDE_SOURCE.to_string(),
            restructuring: self.config.restructuring,
            params: self.store.to_wire(),
        };
        serde_json::to_string(&wire).expect("model serializes")
    }

    /// Loads a model file. Only the bundled vocabulary can be paired with a
    /// model, so any other version is a mismatch.
    pub fn from_json(raw: &[u8]) -> Result<Self> {
        let wire: ModelWire = serde_json::from_slice(raw).map_err(|e| Error::from_json(raw, e))?;
        let vocab = Vocabulary::builtin();
        if wire.vocab_version != vocab.version() {
            return Err(Error::VocabMismatch {
                expected: vocab.version().to_string(),
                found: wire.vocab_version,
            });
        }
        if wire.nary_outside_source != NARY_OUTSIDE_SOURCE {
            return Err(Error::Config(format!(
                "unsupported nary_outside_source `{}`",
                wire.nary_outside_source
            )));
        }
        let config = ModelConfig {
            variant: wire.variant,
            d_input: wire.d_input,
            d_hidden: wire.d_hidden,
            max_children: wire.max_children,
            head: wire.head,
            head_init: wire.head_init,
            siblings_source: wire.siblings_source,
            restructuring: wire.restructuring,
        };
        config.validate()?;
        let classes = ClassSet::new(wire.classes)?;
        let store = ParameterStore::from_wire(wire.params)?;
        let layout = ModelLayout::resolve(&config, &store, vocab.embedding_rows(), classes.len())?;
        Ok(Model {
            config,
            classes,
            vocab,
            store,
            layout,
        })
    }
}

/// Class indices sorted by logit descending, ties by lower index.
pub fn rank_classes(logits: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    order
}

/// Ranked classes for one identifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub scope: String,
    pub name: String,
    pub ranking: Vec<usize>,
    /// Softmax of the logits, indexed by class.
    pub probabilities: Vec<f64>,
}
