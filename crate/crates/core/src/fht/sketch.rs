//! Random sketch functions for every tree group.
//!
//! Node-side sketches are built bottom-up: a leaf sketch is a random combination of the
//! coordinate's orthonormal basis, an internal-node sketch is a random combination of the
//! Kronecker product of its children's sketches. Complement sketches are built top-down:
//! the root's complement is empty and sketched by the constant 1; a child's complement is
//! a random combination of the Kronecker product of its parent's complement sketch and its
//! sibling's node-side sketch.

use alloc::vec::Vec;

#[allow(unused_imports)] // inherent methods shadow it whenever std is linked
use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::tree::DimensionTree;
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SketchSpec {
    pub seed: u64,
    pub oversampling: usize,
    /// Output dimension of every non-root group sketch: rank cap plus oversampling.
    pub width: usize,
    /// Node-side combination matrices; `None` for the root.
    pub node_maps: Vec<Option<Matrix>>,
    /// Complement combination matrices; `None` for the root.
    pub complement_maps: Vec<Option<Matrix>>,
}

impl SketchSpec {
    /// Draws all sketch matrices from `seed`; `basis_sizes[k]` is the number of
    /// orthonormal functions on coordinate `k`.
    pub fn draw(tree: &DimensionTree, basis_sizes: &[usize], oversampling: usize, seed: u64) -> Self {
        let width = tree.rank_cap + oversampling;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = tree.nodes.len();
        let mut node_maps = Vec::with_capacity(n);
        let mut complement_maps = Vec::with_capacity(n);
        for (id, node) in tree.nodes.iter().enumerate() {
            if id == DimensionTree::ROOT {
                node_maps.push(None);
                complement_maps.push(None);
                continue;
            }
            let fan_in = match node.children {
                None => basis_sizes[node.coords[0]],
                Some(_) => width * width,
            };
            node_maps.push(Some(gaussian(&mut rng, width, fan_in)));
            let parent_out = if node.parent == Some(DimensionTree::ROOT) { 1 } else { width };
            complement_maps.push(Some(gaussian(&mut rng, width, parent_out * width)));
        }
        SketchSpec { seed, oversampling, width, node_maps, complement_maps }
    }

    /// Output dimension of the node-side sketch of `n` (unused for the root).
    pub fn node_width(&self, n: usize) -> usize {
        if n == DimensionTree::ROOT {
            0
        } else {
            self.width
        }
    }

    /// Output dimension of the complement sketch of `n`.
    pub fn complement_width(&self, n: usize) -> usize {
        if n == DimensionTree::ROOT {
            1
        } else {
            self.width
        }
    }
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let scale = 1.0 / (cols as f64).sqrt();
    let data: Vec<f64> =
        (0..rows * cols).map(|_| scale * Distribution::<f64>::sample(&StandardNormal, rng)).collect();
    Matrix::from_row_major(rows, cols, data)
}
