//! Static passes run before training and inference: scope resolution,
//! identifier sink insertion and statement-block restructuring.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::Serialize;

use crate::ast::{Node, NodeId, MODULE_SCOPE};
use crate::error::{Error, Result};

/// Kinds whose children are all statements and may be regrouped.
pub const BLOCK_KINDS: &[&str] = &["Module", "Interactive", "body", "orelse", "finalbody", IF_TRUE];
/// Synthetic `if True:` block inserted by [`restructure`].
pub const IF_TRUE: &str = "IfTrue";

const FUNCTION_KINDS: &[&str] = &["FunctionDef", "AsyncFunctionDef"];
const DEFINITION_KINDS: &[&str] = &["FunctionDef", "AsyncFunctionDef", "ClassDef"];
const UNSUPPORTED_KINDS: &[&str] = &["Global", "Nonlocal"];
const BINDING_CONTEXTS: &[&str] = &["Store", "Del", "Param"];
const PARAMETER_KINDS: &[&str] = &["arg", "arguments"];

pub fn is_block(kind: &str) -> bool {
    BLOCK_KINDS.contains(&kind)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct ScopeKey {
    pub scope: String,
    pub name: String,
}

impl ScopeKey {
    pub fn new(scope: impl Into<String>, name: impl Into<String>) -> Self {
        ScopeKey {
            scope: scope.into(),
            name: name.into(),
        }
    }
}

/// Identifier occurrences grouped by binding scope. Occurrence lists are in
/// pre-order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ScopeTable {
    entries: BTreeMap<ScopeKey, Vec<NodeId>>,
}

impl ScopeTable {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, key: &ScopeKey) -> bool {
        self.entries.contains_key(key)
    }

    pub fn occurrences(&self, key: &ScopeKey) -> Option<&[NodeId]> {
        self.entries.get(key).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ScopeKey, &[NodeId])> {
        self.entries.iter().map(|(k, v)| (k, v.as_slice()))
    }
}

struct Scope<'a> {
    path: String,
    // None at module level.
    locals: Option<HashSet<&'a str>>,
}

/// Assigns every `Name` occurrence to a `(scope, identifier)` key.
///
/// A name bound anywhere in a function body (assignment target, parameter,
/// nested `def`/`class`) is local to that function; any other name resolves
/// to the module scope. `global` and `nonlocal` statements are rejected.
pub fn resolve_scopes(root: &Node) -> Result<ScopeTable> {
    let mut table = ScopeTable::default();
    let module = Scope {
        path: MODULE_SCOPE.to_string(),
        locals: None,
    };
    resolve_in(root, &module, &mut table)?;
    Ok(table)
}

fn resolve_in<'a>(
    node: &'a Node,
    scope: &Scope<'a>,
    table: &mut ScopeTable,
) -> Result<()> {
    if UNSUPPORTED_KINDS.contains(&node.kind.as_str()) {
        return Err(Error::UnsupportedConstruct {
            kind: node.kind.clone(),
            node_id: node.id,
        });
    }
    if let Some(ident) = node.name.as_deref().filter(|_| node.is_name()) {
        let owner = match &scope.locals {
            Some(locals) if locals.contains(ident) => scope.path.clone(),
            _ => MODULE_SCOPE.to_string(),
        };
        table
            .entries
            .entry(ScopeKey::new(owner, ident))
            .or_default()
            .push(node.id);
    }

    if FUNCTION_KINDS.contains(&node.kind.as_str()) {
        let (head, rest) = split_definition_name(node);
        if let Some(name_node) = head {
            resolve_in(name_node, scope, table)?;
        }
        let fname = head.and_then(|n| n.name.as_deref()).unwrap_or("<anonymous>");
        let mut locals = HashSet::new();
        for child in rest {
            collect_bindings(child, Some(&node.kind), &mut locals)?;
        }
        let inner = Scope {
            path: format!("{}::{fname}", scope.path),
            locals: Some(locals),
        };
        for child in rest {
            resolve_in(child, &inner, table)?;
        }
    } else {
        for child in &node.children {
            resolve_in(child, scope, table)?;
        }
    }
    Ok(())
}

/// Splits a `def`/`class` node into its leading name child and the rest.
fn split_definition_name(node: &Node) -> (Option<&Node>, &[Node]) {
    match node.children.split_first() {
        Some((first, rest)) if first.is_name() => (Some(first), rest),
        _ => (None, &node.children[..]),
    }
}

fn collect_bindings<'a>(
    node: &'a Node,
    parent_kind: Option<&str>,
    out: &mut HashSet<&'a str>,
) -> Result<()> {
    if UNSUPPORTED_KINDS.contains(&node.kind.as_str()) {
        return Err(Error::UnsupportedConstruct {
            kind: node.kind.clone(),
            node_id: node.id,
        });
    }
    if node.is_name() {
        let binds = node
            .children
            .iter()
            .any(|c| BINDING_CONTEXTS.contains(&c.kind.as_str()))
            || parent_kind.is_some_and(|p| PARAMETER_KINDS.contains(&p));
        if binds {
            if let Some(ident) = node.name.as_deref() {
                out.insert(ident);
            }
        }
    }
    if DEFINITION_KINDS.contains(&node.kind.as_str()) {
        let (head, rest) = split_definition_name(node);
        if let Some(ident) = head.and_then(|n| n.name.as_deref()) {
            out.insert(ident);
        }
        if FUNCTION_KINDS.contains(&node.kind.as_str()) {
            // Bindings inside a nested function belong to that function.
            return Ok(());
        }
        for child in rest {
            collect_bindings(child, Some(&node.kind), out)?;
        }
        return Ok(());
    }
    for child in &node.children {
        collect_bindings(child, Some(&node.kind), out)?;
    }
    Ok(())
}

/// Shared VAR node linking every occurrence of one identifier in one scope.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SinkNode {
    #[serde(rename = "id")]
    pub sink_id: NodeId,
    #[serde(flatten)]
    pub owner: ScopeKey,
    pub occurrences: Vec<NodeId>,
}

/// A tree whose `Name` occurrences each gain their owner's sink as an extra
/// last child. The attachment is implicit: `root` is left untouched and
/// [`AugmentedTree::sink_for`] answers which sink hangs below a node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AugmentedTree {
    pub root: Node,
    pub sinks: Vec<SinkNode>,
    #[serde(skip)]
    attach: HashMap<NodeId, usize>,
}

impl AugmentedTree {
    /// Index into `sinks` of the sink attached below `node_id`.
    pub fn sink_for(&self, node_id: NodeId) -> Option<usize> {
        self.attach.get(&node_id).copied()
    }

    pub fn sink_index(&self, key: &ScopeKey) -> Option<usize> {
        self.sinks.iter().position(|s| &s.owner == key)
    }

    /// The tree with every sink detached.
    pub fn detach(&self) -> &Node {
        &self.root
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("augmented tree serializes")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("augmented tree serializes")
    }
}

/// Creates one sink per scope key and attaches it below each occurrence.
///
/// Sinks are ordered by first occurrence in pre-order and numbered above the
/// largest node id. When `scopes` was computed on a larger tree than `root`
/// (see [`truncate_children`]) occurrences missing from `root` are dropped;
/// keys left without occurrences keep a detached sink, ordered last.
pub fn add_sink_nodes(root: &Node, scopes: &ScopeTable) -> AugmentedTree {
    let mut preorder = HashMap::new();
    root.walk(&mut |n| {
        if n.is_name() {
            let pos = preorder.len();
            preorder.insert(n.id, pos);
        }
    });

    let mut keyed: Vec<(Option<usize>, ScopeKey, Vec<NodeId>)> = scopes
        .iter()
        .map(|(key, occs)| {
            let mut present: Vec<NodeId> =
                occs.iter().copied().filter(|id| preorder.contains_key(id)).collect();
            present.sort_by_key(|id| preorder[id]);
            let first = present.first().map(|id| preorder[id]);
            (first, key.clone(), present)
        })
        .collect();
    keyed.sort_by(|a, b| match (a.0, b.0) {
        (Some(x), Some(y)) => x.cmp(&y),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.1.cmp(&b.1),
    });

    let base = root.max_id() + 1;
    let mut attach = HashMap::new();
    let sinks = keyed
        .into_iter()
        .enumerate()
        .map(|(i, (_, owner, occurrences))| {
            for id in &occurrences {
                attach.insert(*id, i);
            }
            SinkNode {
                sink_id: base + i as NodeId,
                owner,
                occurrences,
            }
        })
        .collect();
    AugmentedTree {
        root: root.clone(),
        sinks,
        attach,
    }
}

/// Bounds the fan-out of every node by `max_children` by wrapping runs of
/// statements in synthetic `if True:` blocks.
///
/// Oversized blocks are chunked greedily left to right into groups of
/// `max_children`; singleton chunks stay unwrapped. The step repeats until
/// the block fits. New nodes get ids above the largest existing id.
pub fn restructure(root: &Node, max_children: usize) -> Result<Node> {
    if max_children < 2 {
        return Err(Error::Config(format!(
            "max_children must be at least 2, got {max_children}"
        )));
    }
    let mut next_id = root.max_id() + 1;
    restructure_node(root, max_children, &mut next_id)
}

fn restructure_node(node: &Node, k: usize, next_id: &mut NodeId) -> Result<Node> {
    let mut children = node
        .children
        .iter()
        .map(|c| restructure_node(c, k, next_id))
        .collect::<Result<Vec<_>>>()?;
    if children.len() > k {
        if !is_block(&node.kind) {
            return Err(Error::NotRestructurable {
                kind: node.kind.clone(),
                node_id: node.id,
                count: children.len(),
                max: k,
            });
        }
        while children.len() > k {
            let mut grouped = Vec::with_capacity(children.len().div_ceil(k));
            let mut iter = children.into_iter().peekable();
            while iter.peek().is_some() {
                let chunk: Vec<Node> = iter.by_ref().take(k).collect();
                if chunk.len() == 1 {
                    grouped.extend(chunk);
                } else {
                    grouped.push(Node::new(*next_id, IF_TRUE, chunk));
                    *next_id += 1;
                }
            }
            children = grouped;
        }
    }
    Ok(Node {
        id: node.id,
        kind: node.kind.clone(),
        name: node.name.clone(),
        children,
    })
}

/// Removes every synthetic `if True:` block, splicing its statements into
/// the enclosing block. Inverse of [`restructure`].
pub fn flatten_blocks(node: &Node) -> Node {
    let mut children = Vec::with_capacity(node.children.len());
    for child in &node.children {
        let flat = flatten_blocks(child);
        if flat.kind == IF_TRUE {
            children.extend(flat.children);
        } else {
            children.push(flat);
        }
    }
    Node {
        id: node.id,
        kind: node.kind.clone(),
        name: node.name.clone(),
        children,
    }
}

/// Keeps only the first `max_children` children of every node.
pub fn truncate_children(node: &Node, max_children: usize) -> Node {
    Node {
        id: node.id,
        kind: node.kind.clone(),
        name: node.name.clone(),
        children: node
            .children
            .iter()
            .take(max_children)
            .map(|c| truncate_children(c, max_children))
            .collect(),
    }
}
