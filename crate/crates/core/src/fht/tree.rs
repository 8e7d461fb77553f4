use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    /// Coordinates covered by this node, in leaf order.
    pub coords: Vec<usize>,
    pub children: Option<[usize; 2]>,
    pub parent: Option<usize>,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }
}

/// Balanced binary tree over the CV coordinates. Nodes are stored in pre-order, so the
/// root is node 0 and every parent precedes its children.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionTree {
    pub nodes: Vec<TreeNode>,
    pub rank_cap: usize,
}

impl DimensionTree {
    /// Tree over coordinates `0..m` in natural order.
    pub fn balanced(m: usize, rank_cap: usize) -> Result<Self> {
        let order: Vec<usize> = (0..m).collect();
        Self::balanced_with_order(&order, rank_cap)
    }

    /// Tree whose leaves, left to right, are the coordinates in `order`.
    pub fn balanced_with_order(order: &[usize], rank_cap: usize) -> Result<Self> {
        if order.is_empty() {
            return Err(invalid!("dimension tree needs at least one coordinate"));
        }
        if rank_cap == 0 {
            return Err(invalid!("rank cap must be positive"));
        }
        let mut seen = vec![false; order.len()];
        for &c in order {
            if c >= order.len() || seen[c] {
                return Err(invalid!("leaf order must be a permutation of 0..{}", order.len()));
            }
            seen[c] = true;
        }
        let mut nodes = Vec::new();
        build(order, None, &mut nodes);
        Ok(DimensionTree { nodes, rank_cap })
    }

    pub fn m(&self) -> usize {
        self.nodes[0].coords.len()
    }

    pub const ROOT: usize = 0;

    /// Children before parents.
    pub fn bottom_up(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nodes.len());
        post_order(self, Self::ROOT, &mut out);
        out
    }

    pub fn sibling(&self, n: usize) -> Option<usize> {
        let p = self.nodes[n].parent?;
        let [a, b] = self.nodes[p].children?;
        Some(if a == n { b } else { a })
    }

    /// Leaf node holding coordinate `k`.
    pub fn leaf_of(&self, k: usize) -> Option<usize> {
        self.nodes.iter().position(|n| n.is_leaf() && n.coords[0] == k)
    }
}

fn build(coords: &[usize], parent: Option<usize>, nodes: &mut Vec<TreeNode>) -> usize {
    let id = nodes.len();
    nodes.push(TreeNode { coords: coords.to_vec(), children: None, parent });
    if coords.len() > 1 {
        let mid = coords.len().div_ceil(2);
        let a = build(&coords[..mid], Some(id), nodes);
        let b = build(&coords[mid..], Some(id), nodes);
        nodes[id].children = Some([a, b]);
    }
    id
}

fn post_order(t: &DimensionTree, n: usize, out: &mut Vec<usize>) {
    if let Some([a, b]) = t.nodes[n].children {
        post_order(t, a, out);
        post_order(t, b, out);
    }
    out.push(n);
}
