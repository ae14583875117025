use serde::{Deserialize, Serialize};

use super::TokenId;
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeNode {
    pub token: TokenId,
    /// `None` attaches the node directly to the committed context.
    pub parent: Option<usize>,
}

/// Candidate tree in topological order. A node at depth `d` (roots have
/// depth 1) occupies position `committed + d − 1`; siblings share positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeLayout {
    nodes: Vec<TreeNode>,
    depths: Vec<usize>,
}

impl TreeLayout {
    pub fn new(nodes: Vec<TreeNode>) -> Result<Self> {
        let mut depths = Vec::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            let depth = match n.parent {
                None => 1,
                Some(p) if p < i => depths[p] + 1,
                Some(p) => {
                    return invalid(format!(
                        "tree node {i} has parent {p}, which does not precede it"
                    ))
                }
            };
            depths.push(depth);
        }
        Ok(Self { nodes, depths })
    }

    /// A single path `tokens[0] → tokens[1] → …`.
    pub fn chain(tokens: &[TokenId]) -> Self {
        let nodes = tokens
            .iter()
            .enumerate()
            .map(|(i, &token)| TreeNode {
                token,
                parent: i.checked_sub(1),
            })
            .collect();
        Self::new(nodes).expect("a chain is always well formed")
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn depth(&self, i: usize) -> usize {
        self.depths[i]
    }

    pub fn max_depth(&self) -> usize {
        self.depths.iter().copied().max().unwrap_or(0)
    }

    pub fn parents(&self) -> Vec<Option<usize>> {
        self.nodes.iter().map(|n| n.parent).collect()
    }

    pub fn children(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter(move |(_, n)| n.parent == Some(i))
            .map(|(j, _)| j)
    }

    pub fn roots(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.parent.is_none())
            .map(|(j, _)| j)
    }

    /// Ancestors of `i` plus `i` itself, ascending.
    pub fn ancestors_inclusive(&self, i: usize) -> Vec<usize> {
        let mut out = vec![i];
        let mut cur = self.nodes[i].parent;
        while let Some(p) = cur {
            out.push(p);
            cur = self.nodes[p].parent;
        }
        out.reverse();
        out
    }

    /// Node-to-node visibility: `[i][j]` iff `j` is `i` or an ancestor of
    /// `i`. Every node additionally sees the whole committed context.
    pub fn visibility(&self) -> Vec<Vec<bool>> {
        (0..self.len())
            .map(|i| {
                let mut row = vec![false; self.len()];
                for a in self.ancestors_inclusive(i) {
                    row[a] = true;
                }
                row
            })
            .collect()
    }

    /// Prepends `token` as the single root and hangs `self` below it.
    pub fn under_root(&self, token: TokenId) -> Self {
        let mut nodes = vec![TreeNode {
            token,
            parent: None,
        }];
        nodes.extend(self.nodes.iter().map(|n| TreeNode {
            token: n.token,
            parent: Some(n.parent.map_or(0, |p| p + 1)),
        }));
        Self::new(nodes).expect("re-rooting preserves topological order")
    }
}
