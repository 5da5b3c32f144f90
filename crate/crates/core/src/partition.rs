use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{BsblError, Result};

/// Division of a length-N coefficient vector into `g` contiguous blocks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct BlockPartition {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
}

impl BlockPartition {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() {
            return Err(BsblError::InvalidPartition("no blocks".into()));
        }
        if let Some(i) = sizes.iter().position(|&d| d == 0) {
            return Err(BsblError::InvalidPartition(format!("block {i} has size 0")));
        }
        let offsets = sizes
            .iter()
            .scan(0usize, |acc, &d| {
                let start = *acc;
                *acc += d;
                Some(start)
            })
            .collect();
        Ok(Self { sizes, offsets })
    }

    /// `g` blocks of identical size `d`.
    pub fn uniform(g: usize, d: usize) -> Result<Self> {
        Self::new(vec![d; g])
    }

    /// Split `n` into blocks of size `d`; the last block takes the remainder.
    pub fn with_block_size(n: usize, d: usize) -> Result<Self> {
        if d == 0 || n == 0 {
            return Err(BsblError::InvalidPartition(format!(
                "cannot split length {n} into blocks of size {d}"
            )));
        }
        let mut sizes = vec![d; n / d];
        if n % d != 0 {
            sizes.push(n % d);
        }
        Self::new(sizes)
    }

    pub fn num_blocks(&self) -> usize {
        self.sizes.len()
    }

    /// Total signal length N.
    pub fn len(&self) -> usize {
        self.offsets.last().unwrap() + self.sizes.last().unwrap()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn size(&self, block: usize) -> usize {
        self.sizes[block]
    }

    pub fn offset(&self, block: usize) -> usize {
        self.offsets[block]
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn range(&self, block: usize) -> Range<usize> {
        self.offsets[block]..self.offsets[block] + self.sizes[block]
    }

    /// Block containing coefficient `index`.
    pub fn block_of(&self, index: usize) -> usize {
        match self.offsets.binary_search(&index) {
            Ok(b) => b,
            Err(b) => b - 1,
        }
    }
}

impl TryFrom<Vec<usize>> for BlockPartition {
    type Error = BsblError;

    fn try_from(sizes: Vec<usize>) -> Result<Self> {
        Self::new(sizes)
    }
}

impl From<BlockPartition> for Vec<usize> {
    fn from(p: BlockPartition) -> Self {
        p.sizes
    }
}
