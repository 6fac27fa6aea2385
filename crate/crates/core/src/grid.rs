//! Dense row-major matrix used for spectrogram power and mask bits.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn new(rows: usize, cols: usize, fill: T) -> Self {
        Grid {
            rows,
            cols,
            data: vec![fill; rows * cols],
        }
    }

    /// Transposed copy, walked in tiles so both sides stay cache friendly.
    pub fn transposed(&self) -> Grid<T> {
        const TILE: usize = 64;
        let mut data = Vec::with_capacity(self.data.len());
        // Every slot is written exactly once below; start from a clone-filled buffer.
        if let Some(first) = self.data.first() {
            data.resize(self.data.len(), first.clone());
        }
        for r0 in (0..self.rows).step_by(TILE) {
            for c0 in (0..self.cols).step_by(TILE) {
                for r in r0..(r0 + TILE).min(self.rows) {
                    for c in c0..(c0 + TILE).min(self.cols) {
                        data[c * self.rows + r] = self.data[r * self.cols + c].clone();
                    }
                }
            }
        }
        Grid {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Invariant(format!(
                "grid of {rows}x{cols} needs {} cells, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Grid { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, row: usize, col: usize) -> &T {
        &self.data[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: T) {
        self.data[row * self.cols + col] = value;
    }

    pub fn row(&self, row: usize) -> &[T] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn row_mut(&mut self, row: usize) -> &mut [T] {
        &mut self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }
}
