use crate::ast::{token_index, Node, NodeId, Vocabulary};
use crate::transforms::{AugmentedTree, ScopeKey};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphNode {
    /// Id of the AST node, or the sink id.
    pub node_id: NodeId,
    pub embed: usize,
    /// Ordered children; an identifier occurrence ends with its sink.
    pub children: Vec<usize>,
    /// One parent for tree nodes, every occurrence for a sink, none at the root.
    pub parents: Vec<usize>,
    pub sink: Option<usize>,
}

/// Flat DAG view of an [`AugmentedTree`]: tree nodes in pre-order followed
/// by the sinks in sink order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeGraph {
    nodes: Vec<GraphNode>,
    tree_len: usize,
    postorder: Vec<usize>,
    sink_keys: Vec<ScopeKey>,
}

/// One outside-pass source: a parent whose outside state flows in, plus the
/// other children of that parent with their child positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParentContext {
    pub parent: usize,
    pub siblings: Vec<(usize, usize)>,
    /// Position of the node itself below `parent`.
    pub position: usize,
}

impl TreeGraph {
    pub fn build(tree: &AugmentedTree, vocab: &Vocabulary) -> Self {
        let mut nodes = Vec::with_capacity(tree.root.node_count() + tree.sinks.len());
        push_tree(&tree.root, None, vocab, &mut nodes);
        let tree_len = nodes.len();

        for (i, sink) in tree.sinks.iter().enumerate() {
            nodes.push(GraphNode {
                node_id: sink.sink_id,
                embed: vocab.var_index(),
                children: Vec::new(),
                parents: Vec::new(),
                sink: Some(i),
            });
        }
        for idx in 0..tree_len {
            if let Some(s) = tree.sink_for(nodes[idx].node_id) {
                let sink_idx = tree_len + s;
                nodes[idx].children.push(sink_idx);
                nodes[sink_idx].parents.push(idx);
            }
        }

        let mut postorder = Vec::with_capacity(tree_len);
        if tree_len > 0 {
            postorder_of(&nodes, 0, &mut postorder);
        }
        TreeGraph {
            nodes,
            tree_len,
            postorder,
            sink_keys: tree.sinks.iter().map(|s| s.owner.clone()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn node(&self, idx: usize) -> &GraphNode {
        &self.nodes[idx]
    }

    pub fn nodes(&self) -> &[GraphNode] {
        &self.nodes
    }

    pub fn sink_count(&self) -> usize {
        self.nodes.len() - self.tree_len
    }

    /// Graph index of sink `i`.
    pub fn sink_node(&self, i: usize) -> usize {
        self.tree_len + i
    }

    pub fn sink_key(&self, i: usize) -> &ScopeKey {
        &self.sink_keys[i]
    }

    /// Inside-pass order: sinks first, then tree nodes in post-order.
    pub fn inside_order(&self) -> impl Iterator<Item = usize> + '_ {
        (self.tree_len..self.nodes.len()).chain(self.postorder.iter().copied())
    }

    /// Outside-pass order: tree nodes in pre-order, then sinks.
    pub fn outside_order(&self) -> impl Iterator<Item = usize> {
        0..self.nodes.len()
    }

    /// Outside sources of `idx`, one per parent, in parent order.
    pub fn contexts(&self, idx: usize) -> Vec<ParentContext> {
        self.nodes[idx]
            .parents
            .iter()
            .map(|&parent| {
                let kids = &self.nodes[parent].children;
                let position = kids
                    .iter()
                    .position(|&c| c == idx)
                    .expect("parent lists its child");
                ParentContext {
                    parent,
                    position,
                    siblings: kids
                        .iter()
                        .enumerate()
                        .filter(|(_, &c)| c != idx)
                        .map(|(pos, &c)| (c, pos))
                        .collect(),
                }
            })
            .collect()
    }

    pub fn max_fan_out(&self) -> usize {
        self.nodes.iter().map(|n| n.children.len()).max().unwrap_or(0)
    }
}

fn push_tree(node: &Node, parent: Option<usize>, vocab: &Vocabulary, out: &mut Vec<GraphNode>) -> usize {
    let idx = out.len();
    out.push(GraphNode {
        node_id: node.id,
        embed: token_index(vocab, node),
        children: Vec::with_capacity(node.children.len() + 1),
        parents: parent.into_iter().collect(),
        sink: None,
    });
    for child in &node.children {
        let c = push_tree(child, Some(idx), vocab, out);
        out[idx].children.push(c);
    }
    idx
}

fn postorder_of(nodes: &[GraphNode], root: usize, out: &mut Vec<usize>) {
    // Iterative to stay safe on deep trees.
    let mut stack = vec![(root, false)];
    while let Some((idx, expanded)) = stack.pop() {
        if expanded {
            out.push(idx);
            continue;
        }
        stack.push((idx, true));
        for &c in nodes[idx].children.iter().rev() {
            if nodes[c].sink.is_none() {
                stack.push((c, false));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::fig1a_tree;
    use crate::transforms::{add_sink_nodes, resolve_scopes};

    #[test]
    fn fig1a_graph_layout() {
        let tree = fig1a_tree();
        let aug = add_sink_nodes(&tree, &resolve_scopes(&tree).unwrap());
        let vocab = Vocabulary::builtin();
        let g = TreeGraph::build(&aug, &vocab);
        assert_eq!(g.len(), 17 + 3);
        assert_eq!(g.sink_count(), 3);
        let sink_a = g.sink_node(0);
        assert_eq!(g.node(sink_a).parents.len(), 2);
        assert_eq!(g.node(sink_a).embed, vocab.var_index());
        // Name `a` (pre-order index 2) ends with its sink.
        assert_eq!(g.node(2).children.last(), Some(&sink_a));

        let inside: Vec<_> = g.inside_order().collect();
        assert_eq!(&inside[..3], &[17, 18, 19]);
        assert_eq!(*inside.last().unwrap(), 0);
        let mut seen = vec![false; g.len()];
        for idx in inside {
            for &c in &g.node(idx).children {
                assert!(seen[c], "child {c} before parent {idx}");
            }
            seen[idx] = true;
        }

        let ctx = g.contexts(sink_a);
        assert_eq!(ctx.len(), 2);
        assert_eq!(ctx[0].parent, 2);
        // The Store context token is the sink's sibling below `a`.
        assert_eq!(ctx[0].siblings, vec![(3, 0)]);
        assert_eq!(ctx[0].position, 1);
    }
}
