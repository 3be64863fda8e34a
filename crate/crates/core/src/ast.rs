//! Tree and dataset model: AST nodes, the token vocabulary, the type-class
//! label set and the JSON wire format shared with the corpus extractor.
//!
//! Wire format of a dataset:
//!
//! ```text
//! {"classes": [string; 21], "vocab_version": string,
//!  "trees": [{"path": string, "root": NODE,
//!             "labels": [{"scope": string, "name": string, "type": string}]}]}
//! NODE = {"id": int, "kind": string, "name": string?, "children": [NODE]}
//! ```
//!
//! Scope paths are `<module>` for globals and `<module>::f` (`<module>::f::g`
//! for nested functions) for function locals.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transforms::{resolve_scopes, ScopeKey};

pub type NodeId = u64;

/// Kind token of identifier nodes.
pub const NAME_KIND: &str = "Name";
/// Scope path of module-level bindings.
pub const MODULE_SCOPE: &str = "<module>";
pub const NUM_CLASSES: usize = 21;

pub const DEFAULT_VOCAB_VERSION: &str = "py-ast-v1";
const DEFAULT_VOCAB_TEXT: &str = include_str!("../data/vocab-py-ast-v1.txt");
const DEFAULT_CLASSES_TEXT: &str = include_str!("../data/classes.txt");

/// One AST node. Children keep source order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Node {
    pub id: NodeId,
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub children: Vec<Node>,
}

impl Node {
    pub fn new(id: NodeId, kind: impl Into<String>, children: Vec<Node>) -> Self {
        Node {
            id,
            kind: kind.into(),
            name: None,
            children,
        }
    }

    pub fn name(id: NodeId, ident: impl Into<String>, children: Vec<Node>) -> Self {
        Node {
            id,
            kind: NAME_KIND.to_string(),
            name: Some(ident.into()),
            children,
        }
    }

    pub fn is_name(&self) -> bool {
        self.kind == NAME_KIND
    }

    /// Visits the subtree in pre-order.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Node)) {
        f(self);
        for child in &self.children {
            child.walk(f);
        }
    }

    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(Node::node_count).sum::<usize>()
    }

    pub fn max_id(&self) -> NodeId {
        self.children
            .iter()
            .map(Node::max_id)
            .fold(self.id, NodeId::max)
    }

    pub fn max_fan_out(&self) -> usize {
        self.children
            .iter()
            .map(Node::max_fan_out)
            .fold(self.children.len(), usize::max)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNode {
    id: Option<NodeId>,
    kind: String,
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    children: Vec<RawNode>,
}

impl RawNode {
    fn max_id(&self) -> Option<NodeId> {
        self.children
            .iter()
            .filter_map(RawNode::max_id)
            .chain(self.id)
            .max()
    }

    /// Converts to a [`Node`], giving fresh ids (above every explicit id)
    /// to nodes that arrived without one.
    fn into_node(self, next: &mut NodeId) -> Node {
        let id = self.id.unwrap_or_else(|| {
            let id = *next;
            *next += 1;
            id
        });
        Node {
            id,
            kind: self.kind,
            name: self.name,
            children: self
                .children
                .into_iter()
                .map(|c| c.into_node(next))
                .collect(),
        }
    }
}

impl<'de> Deserialize<'de> for Node {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = RawNode::deserialize(deserializer)?;
        let mut next = raw.max_id().map_or(0, |m| m + 1);
        Ok(raw.into_node(&mut next))
    }
}

/// Fixed token list. Rows `len()` and `len() + 1` of the embedding matrix
/// are UNK and VAR.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    version: String,
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new(version: impl Into<String>, tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if index.insert(tok.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate vocabulary token `{tok}`")));
            }
        }
        if tokens.is_empty() {
            return Err(Error::Validation("empty vocabulary".into()));
        }
        Ok(Vocabulary {
            version: version.into(),
            tokens,
            index,
        })
    }

    /// Parses one token per line; blank lines and `#` comments are skipped.
    pub fn parse(version: impl Into<String>, text: &str) -> Result<Self> {
        Self::new(version, data_lines(text).map(str::to_string).collect())
    }

    /// The vocabulary shipped with the crate.
    pub fn builtin() -> Self {
        Self::parse(DEFAULT_VOCAB_VERSION, DEFAULT_VOCAB_TEXT).expect("bundled vocabulary is valid")
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn unk_index(&self) -> usize {
        self.tokens.len()
    }

    pub fn var_index(&self) -> usize {
        self.tokens.len() + 1
    }

    /// Rows of the embedding matrix.
    pub fn embedding_rows(&self) -> usize {
        self.tokens.len() + 2
    }

    pub fn lookup(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }
}

/// Embedding row for `node`: identifiers share the VAR row, known keywords
/// their own row, everything else UNK.
pub fn token_index(vocab: &Vocabulary, node: &Node) -> usize {
    if node.is_name() {
        vocab.var_index()
    } else {
        vocab.lookup(&node.kind).unwrap_or_else(|| vocab.unk_index())
    }
}

/// The ordered label set. Indices are positions in the list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassSet {
    names: Vec<String>,
}

impl ClassSet {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.len() != NUM_CLASSES {
            return Err(Error::Validation(format!(
                "expected {NUM_CLASSES} type classes, found {}",
                names.len()
            )));
        }
        let mut seen = HashSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(Error::Validation(format!("duplicate type class `{n}`")));
            }
        }
        Ok(ClassSet { names })
    }

    pub fn builtin() -> Self {
        Self::new(data_lines(DEFAULT_CLASSES_TEXT).map(str::to_string).collect())
            .expect("bundled class list is valid")
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

fn data_lines(text: &str) -> impl Iterator<Item = &str> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Label {
    pub scope: String,
    pub name: String,
    pub class: usize,
}

impl Label {
    pub fn key(&self) -> ScopeKey {
        ScopeKey::new(self.scope.clone(), self.name.clone())
    }
}

/// One source file: its AST and the ground-truth identifier types.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    pub path: String,
    pub root: Node,
    pub labels: Vec<Label>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub classes: ClassSet,
    pub vocab_version: String,
    pub programs: Vec<Program>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetWire {
    #[serde(default)]
    classes: Option<Vec<String>>,
    #[serde(default)]
    vocab_version: Option<String>,
    trees: Vec<ProgramWire>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProgramWire {
    #[serde(default)]
    path: String,
    root: Node,
    #[serde(default)]
    labels: Vec<LabelWire>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelWire {
    scope: String,
    name: String,
    #[serde(rename = "type")]
    ty: String,
}

/// Parses and validates a dataset. Missing `classes` or `vocab_version`
/// fall back to the bundled defaults.
pub fn parse_dataset(raw: &[u8]) -> Result<Dataset> {
    let wire: DatasetWire = serde_json::from_slice(raw).map_err(|e| Error::from_json(raw, e))?;
    let classes = match wire.classes {
        Some(names) => ClassSet::new(names)?,
        None => ClassSet::builtin(),
    };
    let mut programs = Vec::with_capacity(wire.trees.len());
    for tree in wire.trees {
        let labels = tree
            .labels
            .into_iter()
            .map(|l| {
                let class = classes.index_of(&l.ty).ok_or_else(|| {
                    Error::Validation(format!(
                        "{}: unknown type class `{}` for {}::{}",
                        tree.path, l.ty, l.scope, l.name
                    ))
                })?;
                Ok(Label {
                    scope: l.scope,
                    name: l.name,
                    class,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        programs.push(Program {
            path: tree.path,
            root: tree.root,
            labels,
        });
    }
    let dataset = Dataset {
        classes,
        vocab_version: wire
            .vocab_version
            .unwrap_or_else(|| DEFAULT_VOCAB_VERSION.to_string()),
        programs,
    };
    dataset.validate()?;
    Ok(dataset)
}

impl Dataset {
    pub fn new(classes: ClassSet, vocab_version: impl Into<String>, programs: Vec<Program>) -> Self {
        Dataset {
            classes,
            vocab_version: vocab_version.into(),
            programs,
        }
    }

    /// Checks tree invariants and that every label resolves to at least one
    /// identifier occurrence in its tree.
    pub fn validate(&self) -> Result<()> {
        for prog in &self.programs {
            let violations = validate_tree(&prog.root);
            if let Some(v) = violations.first() {
                return Err(Error::Validation(format!("{}: {v}", prog.path)));
            }
            let scopes = resolve_scopes(&prog.root)?;
            let mut seen = BTreeSet::new();
            for label in &prog.labels {
                if label.class >= self.classes.len() {
                    return Err(Error::Validation(format!(
                        "{}: class index {} out of range",
                        prog.path, label.class
                    )));
                }
                let key = label.key();
                if !scopes.contains(&key) {
                    return Err(Error::Validation(format!(
                        "{}: label for `{}` in scope `{}` does not resolve to any identifier",
                        prog.path, label.name, label.scope
                    )));
                }
                if !seen.insert(key) {
                    return Err(Error::Validation(format!(
                        "{}: duplicate label for `{}` in scope `{}`",
                        prog.path, label.name, label.scope
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn label_count(&self) -> usize {
        self.programs.iter().map(|p| p.labels.len()).sum()
    }

    /// A dataset sharing this one's class set and vocabulary version.
    pub fn with_programs(&self, programs: Vec<Program>) -> Dataset {
        Dataset {
            classes: self.classes.clone(),
            vocab_version: self.vocab_version.clone(),
            programs,
        }
    }

    pub fn to_json(&self) -> String {
        let wire = DatasetWire {
            classes: Some(self.classes.names().to_vec()),
            vocab_version: Some(self.vocab_version.clone()),
            trees: self
                .programs
                .iter()
                .map(|p| ProgramWire {
                    path: p.path.clone(),
                    root: p.root.clone(),
                    labels: p
                        .labels
                        .iter()
                        .map(|l| LabelWire {
                            scope: l.scope.clone(),
                            name: l.name.clone(),
                            ty: self.classes.name(l.class).to_string(),
                        })
                        .collect(),
                })
                .collect(),
        };
        serde_json::to_string(&wire).expect("dataset serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rule {
    DuplicateId,
    NameWithoutIdentifier,
    IdentifierOnNonName,
    EmptyKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub node_id: NodeId,
    pub rule: Rule,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let what = match self.rule {
            Rule::DuplicateId => "duplicate node id",
            Rule::NameWithoutIdentifier => "Name node without identifier",
            Rule::IdentifierOnNonName => "identifier on a non-Name node",
            Rule::EmptyKind => "empty kind",
        };
        write!(f, "node {}: {what}", self.node_id)
    }
}

pub fn validate_tree(root: &Node) -> Vec<Violation> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    root.walk(&mut |n| {
        if !seen.insert(n.id) {
            out.push(Violation {
                node_id: n.id,
                rule: Rule::DuplicateId,
            });
        }
        if n.kind.is_empty() {
            out.push(Violation {
                node_id: n.id,
                rule: Rule::EmptyKind,
            });
        }
        match (n.is_name(), n.name.as_deref()) {
            (true, None) | (true, Some("")) => out.push(Violation {
                node_id: n.id,
                rule: Rule::NameWithoutIdentifier,
            }),
            (false, Some(_)) => out.push(Violation {
                node_id: n.id,
                rule: Rule::IdentifierOnNonName,
            }),
            _ => {}
        }
    });
    out
}

/// Parses a single NODE object.
pub fn parse_node(raw: &[u8]) -> Result<Node> {
    serde_json::from_slice(raw).map_err(|e| Error::from_json(raw, e))
}
