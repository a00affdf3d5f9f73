use indexmap::IndexMap;
use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Location of a named parameter block inside the flat value array.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl Block {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Ordered, contiguous assignment of names to blocks.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    blocks: IndexMap<String, Block>,
    len: usize,
}

impl Layout {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a block directly after the previous one.
    ///
    /// Panics if `name` is already registered; layouts are built once by the
    /// model definition, so a duplicate is a programming error.
    pub fn push(&mut self, name: impl Into<String>, shape: &[usize]) {
        let name = name.into();
        let block = Block { offset: self.len, shape: shape.to_vec() };
        self.len += block.len();
        let prev = self.blocks.insert(name.clone(), block);
        assert!(prev.is_none(), "duplicate parameter block `{name}`");
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, name: &str) -> Option<&Block> {
        self.blocks.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.blocks.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Block)> {
        self.blocks.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Block owning flat index `idx`.
    pub fn block_of(&self, idx: usize) -> Option<&str> {
        self.blocks
            .iter()
            .find(|(_, b)| b.range().contains(&idx))
            .map(|(k, _)| k.as_str())
    }

    /// Checks that offsets are disjoint and cover `0..len`.
    pub fn validate(&self) -> Result<()> {
        let mut next = 0;
        for (name, b) in &self.blocks {
            if b.offset != next {
                return Err(Error::config(format!("block `{name}` starts at {} (expected {next})", b.offset)));
            }
            next += b.len();
        }
        if next != self.len {
            return Err(Error::config(format!("layout covers {next} of {} entries", self.len)));
        }
        Ok(())
    }
}

/// All trainable parameters, stored flat with a named block layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub layout: Layout,
}

impl ParamVector {
    pub fn zeros(layout: Layout) -> Self {
        Self { values: vec![0.0; layout.len()], layout }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.layout.clone())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn block(&self, name: &str) -> &Block {
        self.layout
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter block `{name}`"))
    }

    pub fn has(&self, name: &str) -> bool {
        self.layout.contains(name)
    }

    pub fn slice(&self, name: &str) -> &[f64] {
        let r = self.block(name).range();
        &self.values[r]
    }

    pub fn slice_mut(&mut self, name: &str) -> &mut [f64] {
        let r = self.block(name).range();
        &mut self.values[r]
    }

    pub fn view1(&self, name: &str) -> ArrayView1<'_, f64> {
        ArrayView1::from(self.slice(name))
    }

    pub fn view1_mut(&mut self, name: &str) -> ArrayViewMut1<'_, f64> {
        ArrayViewMut1::from(self.slice_mut(name))
    }

    pub fn view2(&self, name: &str) -> ArrayView2<'_, f64> {
        let b = self.block(name);
        assert_eq!(b.shape.len(), 2, "block `{name}` is not a matrix");
        let shape = (b.shape[0], b.shape[1]);
        ArrayView2::from_shape(shape, &self.values[b.range()]).expect("layout shape")
    }

    pub fn view2_mut(&mut self, name: &str) -> ArrayViewMut2<'_, f64> {
        let b = self.block(name).clone();
        assert_eq!(b.shape.len(), 2, "block `{name}` is not a matrix");
        ArrayViewMut2::from_shape((b.shape[0], b.shape[1]), &mut self.values[b.range()]).expect("layout shape")
    }

    /// First block holding a non-finite entry, if any.
    pub fn non_finite_block(&self) -> Option<&str> {
        self.values
            .iter()
            .position(|v| !v.is_finite())
            .and_then(|i| self.layout.block_of(i))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `self += scale * other`, layouts must match.
    pub fn axpy(&mut self, scale: f64, other: &ParamVector) {
        debug_assert_eq!(self.layout, other.layout);
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}
