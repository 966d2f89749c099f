//! Named, trainable parameter buffers. Training math is pinned to f64.

use rand::Rng;
use rand_distr::{Distribution, Normal};

/// One named parameter tensor (weights live outside any tape; each training
/// step re-registers them as leaves).
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    /// `[rows, cols]`
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Param {
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Gaussian init with the given standard deviation.
    pub fn normal(name: impl Into<String>, rows: usize, cols: usize, std: f64, rng: &mut impl Rng) -> Param {
        let dist = Normal::new(0.0, std).expect("std must be finite and positive");
        let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
        Param {
            name: name.into(),
            shape: vec![rows, cols],
            data,
        }
    }

    pub fn zeros(name: impl Into<String>, rows: usize, cols: usize) -> Param {
        Param {
            name: name.into(),
            shape: vec![rows, cols],
            data: vec![0.0; rows * cols],
        }
    }

    pub fn ones(name: impl Into<String>, rows: usize, cols: usize) -> Param {
        Param {
            name: name.into(),
            shape: vec![rows, cols],
            data: vec![1.0; rows * cols],
        }
    }

    /// Square identity matrix.
    pub fn identity(name: impl Into<String>, n: usize) -> Param {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Param {
            name: name.into(),
            shape: vec![n, n],
            data,
        }
    }
}
