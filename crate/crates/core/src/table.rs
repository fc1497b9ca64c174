use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

/// Flat position of a state-option pair in the augmented space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AugmentedIndex {
    pub s: usize,
    pub o: usize,
}

impl AugmentedIndex {
    pub fn new(s: usize, o: usize) -> Self {
        Self { s, o }
    }

    /// `s * n_options + o`.
    pub fn flat(self, n_options: usize) -> usize {
        self.s * n_options + self.o
    }

    pub fn from_flat(z: usize, n_options: usize) -> Self {
        Self {
            s: z / n_options,
            o: z % n_options,
        }
    }
}

/// Dense table over state-option pairs, stored state-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateOptionTable {
    n_states: usize,
    n_options: usize,
    data: Vec<f64>,
}

impl StateOptionTable {
    pub fn zeros(n_states: usize, n_options: usize) -> Self {
        Self::filled(n_states, n_options, 0.0)
    }

    pub fn filled(n_states: usize, n_options: usize, value: f64) -> Self {
        Self {
            n_states,
            n_options,
            data: vec![value; n_states * n_options],
        }
    }

    /// Wraps a flat vector indexed by `AugmentedIndex::flat`.
    pub fn from_flat(n_states: usize, n_options: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n_states * n_options, "table size mismatch");
        Self {
            n_states,
            n_options,
            data,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_options(&self) -> usize {
        self.n_options
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.n_states == other.n_states && self.n_options == other.n_options
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.data[s * self.n_options..(s + 1) * self.n_options]
    }

    pub fn row_mut(&mut self, s: usize) -> &mut [f64] {
        &mut self.data[s * self.n_options..(s + 1) * self.n_options]
    }

    pub fn get(&self, s: usize, o: usize) -> f64 {
        self.data[s * self.n_options + o]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert!(self.same_shape(other), "table shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Index<(usize, usize)> for StateOptionTable {
    type Output = f64;

    fn index(&self, (s, o): (usize, usize)) -> &f64 {
        &self.data[s * self.n_options + o]
    }
}

impl IndexMut<(usize, usize)> for StateOptionTable {
    fn index_mut(&mut self, (s, o): (usize, usize)) -> &mut f64 {
        &mut self.data[s * self.n_options + o]
    }
}

/// Maximum absolute elementwise difference of two equal-length slices.
pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
