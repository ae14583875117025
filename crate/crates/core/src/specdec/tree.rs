use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::kernels::Real;
use crate::model::{TokenId, TreeLayout, TreeNode};

/// Per-depth branching factors and a cap on the total node count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchSpec {
    pub branching: Vec<usize>,
    pub max_nodes: usize,
}

impl Default for BranchSpec {
    fn default() -> Self {
        Self {
            branching: vec![2, 2, 1, 1],
            max_nodes: 16,
        }
    }
}

impl BranchSpec {
    pub fn chain(depth: usize) -> Self {
        Self {
            branching: vec![1; depth],
            max_nodes: depth.max(1),
        }
    }

    pub fn depth(&self) -> usize {
        self.branching.len()
    }

    pub fn is_chain(&self) -> bool {
        self.branching.iter().all(|&b| b == 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.branching.contains(&0) {
            return invalid("branching factors must be at least 1");
        }
        let mut width = 1usize;
        for (k, &b) in self.branching.iter().enumerate() {
            width = width.saturating_mul(b);
            if width > self.max_nodes {
                return invalid(format!(
                    "depth {} has {width} nodes, more than max_nodes {}",
                    k + 1,
                    self.max_nodes
                ));
            }
        }
        Ok(())
    }

    /// The same spec cut or padded (with single branches) to `gamma` depths.
    pub fn for_depth(&self, gamma: usize) -> Self {
        let mut branching: Vec<usize> = self.branching.iter().copied().take(gamma).collect();
        branching.resize(gamma, 1);
        let max_nodes = self.max_nodes.max(gamma);
        Self {
            branching,
            max_nodes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DraftNode {
    pub token: TokenId,
    pub parent: Option<usize>,
    pub depth: usize,
    /// Draft probability of `token` under its depth's distribution.
    pub q: Real,
    /// Product of `q` along the path from the root.
    pub path_q: Real,
}

/// Candidate tree built from the simultaneous draft distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DraftTree {
    pub nodes: Vec<DraftNode>,
}

impl DraftTree {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn layout(&self) -> TreeLayout {
        TreeLayout::new(
            self.nodes
                .iter()
                .map(|n| TreeNode {
                    token: n.token,
                    parent: n.parent,
                })
                .collect(),
        )
        .expect("draft trees are built in topological order")
    }

    pub fn child_with_token(&self, parent: Option<usize>, token: TokenId) -> Option<usize> {
        self.nodes
            .iter()
            .position(|n| n.parent == parent && n.token == token)
    }

    pub fn max_depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }
}

/// Top `k` tokens by probability, ties to the lower token id.
pub(crate) fn top_k(dist: &[Real], k: usize) -> Vec<TokenId> {
    let mut idx: Vec<TokenId> = (0..dist.len()).collect();
    idx.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Expands the depth-`k` distribution's top-`b_k` tokens under every
/// depth-`(k−1)` node, then prunes the lowest path-probability leaves
/// until at most `max_nodes` remain. All depth-`k` nodes share one
/// distribution because the draft predicts every depth at once.
pub fn build_tree(dists: &[Vec<Real>], spec: &BranchSpec) -> Result<DraftTree> {
    spec.validate()?;
    if dists.len() != spec.depth() {
        return invalid(format!(
            "{} draft distributions for a spec of depth {}",
            dists.len(),
            spec.depth()
        ));
    }
    if dists.iter().any(Vec::is_empty) {
        return invalid("empty draft distribution");
    }
    let mut nodes: Vec<DraftNode> = Vec::new();
    let mut frontier: Vec<Option<usize>> = vec![None];
    for (k, (dist, &b)) in dists.iter().zip(&spec.branching).enumerate() {
        let candidates = top_k(dist, b);
        let mut next = Vec::with_capacity(frontier.len() * candidates.len());
        for &parent in &frontier {
            let parent_q = parent.map_or(1.0, |p| nodes[p].path_q);
            for &token in &candidates {
                nodes.push(DraftNode {
                    token,
                    parent,
                    depth: k + 1,
                    q: dist[token],
                    path_q: parent_q * dist[token],
                });
                next.push(Some(nodes.len() - 1));
            }
        }
        frontier = next;
    }
    prune(&mut nodes, spec.max_nodes);
    Ok(DraftTree { nodes })
}

fn prune(nodes: &mut Vec<DraftNode>, max_nodes: usize) {
    let mut alive = vec![true; nodes.len()];
    let mut count = nodes.len();
    while count > max_nodes {
        let mut has_child = vec![false; nodes.len()];
        for (i, n) in nodes.iter().enumerate() {
            if let (true, Some(p)) = (alive[i], n.parent) {
                has_child[p] = true;
            }
        }
        let victim = (0..nodes.len())
            .filter(|&i| alive[i] && !has_child[i])
            .min_by(|&a, &b| nodes[a].path_q.total_cmp(&nodes[b].path_q).then(b.cmp(&a)))
            .expect("a non-empty tree has a leaf");
        alive[victim] = false;
        count -= 1;
    }
    let mut remap = vec![usize::MAX; nodes.len()];
    let mut kept = Vec::with_capacity(count);
    for (i, n) in nodes.drain(..).enumerate() {
        if alive[i] {
            remap[i] = kept.len();
            kept.push(DraftNode {
                parent: n.parent.map(|p| remap[p]),
                ..n
            });
        }
    }
    *nodes = kept;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn greedy_chain() {
        let d1 = vec![0.1, 0.6, 0.3];
        let d2 = vec![0.5, 0.2, 0.3];
        let t = build_tree(&[d1, d2], &BranchSpec::chain(2)).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!((t.nodes[0].token, t.nodes[0].parent), (1, None));
        assert_eq!((t.nodes[1].token, t.nodes[1].parent), (0, Some(0)));
        assert!((t.nodes[1].path_q - 0.3).abs() < 1e-15);
    }

    #[test]
    fn shared_distribution_at_depth_two() {
        let d1 = vec![0.1, 0.6, 0.3];
        let d2 = vec![0.2, 0.2, 0.6];
        let spec = BranchSpec {
            branching: vec![2, 1],
            max_nodes: 16,
        };
        let t = build_tree(&[d1, d2], &spec).unwrap();
        let roots: Vec<_> = t.nodes.iter().filter(|n| n.parent.is_none()).collect();
        assert_eq!(roots.iter().map(|n| n.token).collect::<Vec<_>>(), vec![1, 2]);
        let leaves: Vec<_> = t.nodes.iter().filter(|n| n.depth == 2).collect();
        assert_eq!(leaves.len(), 2);
        assert!(leaves.iter().all(|n| n.token == 2));
    }

    #[test]
    fn ties_go_to_lower_token() {
        assert_eq!(top_k(&[0.25, 0.25, 0.5], 2), vec![2, 0]);
    }

    #[test]
    fn spec_validation() {
        assert!(BranchSpec::default().validate().is_ok());
        let bad = BranchSpec {
            branching: vec![4, 4, 2],
            max_nodes: 16,
        };
        assert!(bad.validate().is_err());
        assert!(BranchSpec {
            branching: vec![0],
            max_nodes: 4
        }
        .validate()
        .is_err());
        assert_eq!(BranchSpec::default().for_depth(2).branching, vec![2, 2]);
        assert_eq!(BranchSpec::default().for_depth(6).branching, vec![2, 2, 1, 1, 1, 1]);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(build_tree(&[vec![]], &BranchSpec::chain(1)).is_err());
        assert!(build_tree(&[vec![1.0]], &BranchSpec::chain(2)).is_err());
    }
}
