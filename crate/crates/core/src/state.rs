//! Augmented sampler state `z = (θ, r, ξ)` stored as one flat vector with
//! named blocks.

use std::fmt;
use std::ops::Range;

use crate::error::{Error, Result};

/// Names of the blocks an augmented state may carry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BlockKind {
    /// Model parameters.
    Theta,
    /// Auxiliary momentum.
    Momentum,
    /// Scalar thermostat variable.
    Thermostat,
}

impl BlockKind {
    pub fn name(self) -> &'static str {
        match self {
            BlockKind::Theta => "theta",
            BlockKind::Momentum => "r",
            BlockKind::Thermostat => "xi",
        }
    }
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Ordered block layout of a state vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    blocks: Vec<(BlockKind, usize)>,
}

impl Layout {
    /// Builds a layout. The θ block must be present and names must be unique.
    pub fn new(blocks: Vec<(BlockKind, usize)>) -> Result<Self> {
        if !blocks.iter().any(|(k, _)| *k == BlockKind::Theta) {
            return Err(Error::Config("layout has no theta block".into()));
        }
        for (i, (k, _)) in blocks.iter().enumerate() {
            if blocks[..i].iter().any(|(other, _)| other == k) {
                return Err(Error::Config(format!("duplicate block `{k}` in layout")));
            }
        }
        if blocks.iter().any(|(_, len)| *len == 0) {
            return Err(Error::Config("layout blocks must be non-empty".into()));
        }
        Ok(Self { blocks })
    }

    pub fn theta(dim: usize) -> Self {
        Self {
            blocks: vec![(BlockKind::Theta, dim)],
        }
    }

    pub fn with_momentum(dim: usize) -> Self {
        Self {
            blocks: vec![(BlockKind::Theta, dim), (BlockKind::Momentum, dim)],
        }
    }

    pub fn with_thermostat(dim: usize) -> Self {
        Self {
            blocks: vec![
                (BlockKind::Theta, dim),
                (BlockKind::Momentum, dim),
                (BlockKind::Thermostat, 1),
            ],
        }
    }

    pub fn blocks(&self) -> &[(BlockKind, usize)] {
        &self.blocks
    }

    pub fn dim(&self) -> usize {
        self.blocks.iter().map(|(_, n)| n).sum()
    }

    pub fn contains(&self, kind: BlockKind) -> bool {
        self.blocks.iter().any(|(k, _)| *k == kind)
    }

    /// Index range of a block inside the flat vector.
    pub fn range(&self, kind: BlockKind) -> Option<Range<usize>> {
        let mut start = 0;
        for (k, len) in &self.blocks {
            if *k == kind {
                return Some(start..start + len);
            }
            start += len;
        }
        None
    }

    pub fn theta_dim(&self) -> usize {
        self.range(BlockKind::Theta).map_or(0, |r| r.len())
    }

    /// Block that owns flat index `i`.
    pub fn block_of(&self, i: usize) -> Option<BlockKind> {
        let mut start = 0;
        for (k, len) in &self.blocks {
            if i < start + len {
                return Some(*k);
            }
            start += len;
        }
        None
    }
}

/// A point of the augmented state space.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    layout: Layout,
    values: Vec<f64>,
}

impl StateVector {
    pub fn zeros(layout: Layout) -> Self {
        let values = vec![0.0; layout.dim()];
        Self { layout, values }
    }

    /// Rebuilds a state from a flat vector.
    pub fn unflatten(layout: Layout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.dim() {
            return Err(Error::dimension("state unflatten", layout.dim(), values.len()));
        }
        Ok(Self { layout, values })
    }

    /// Builds a state from explicit blocks, in order.
    pub fn from_blocks(blocks: Vec<(BlockKind, Vec<f64>)>) -> Result<Self> {
        let layout = Layout::new(blocks.iter().map(|(k, v)| (*k, v.len())).collect())?;
        let values = blocks.into_iter().flat_map(|(_, v)| v).collect();
        Ok(Self { layout, values })
    }

    pub fn theta_only(theta: Vec<f64>) -> Self {
        Self {
            layout: Layout::theta(theta.len()),
            values: theta,
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.values.clone()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn block(&self, kind: BlockKind) -> Option<&[f64]> {
        self.layout.range(kind).map(|r| &self.values[r])
    }

    pub fn block_mut(&mut self, kind: BlockKind) -> Option<&mut [f64]> {
        self.layout.range(kind).map(move |r| &mut self.values[r])
    }

    pub fn theta(&self) -> &[f64] {
        self.block(BlockKind::Theta).expect("layout always has theta")
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        self.block_mut(BlockKind::Theta).expect("layout always has theta")
    }

    /// First block holding a NaN or infinity, if any.
    pub fn first_non_finite_block(&self) -> Option<BlockKind> {
        self.values
            .iter()
            .position(|v| !v.is_finite())
            .and_then(|i| self.layout.block_of(i))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}
