//! Placement of matrix entries onto fixed-size square tiles.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

/// One tile's source rows and columns. Tile slot `(a, b)` holds matrix entry
/// `(rows[a], cols[b])`; slots past the ends of the lists are padding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub row_block: usize,
    pub col_block: usize,
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
}

impl Placement {
    pub fn row_pad(&self, n: usize) -> usize {
        n - self.rows.len()
    }

    pub fn col_pad(&self, n: usize) -> usize {
        n - self.cols.len()
    }
}

pub fn blocks(len: usize, n: usize) -> usize {
    len.div_ceil(n)
}

fn block_range(b: usize, len: usize, n: usize) -> Vec<usize> {
    (b * n..((b + 1) * n).min(len)).collect()
}

/// Row-block-major grid of `ceil(rows/n) x ceil(cols/n)` tiles.
pub fn grid(rows: usize, cols: usize, n: usize) -> Vec<Placement> {
    let mut out = Vec::with_capacity(blocks(rows, n) * blocks(cols, n));
    for rb in 0..blocks(rows, n) {
        for cb in 0..blocks(cols, n) {
            out.push(Placement {
                row_block: rb,
                col_block: cb,
                rows: block_range(rb, rows, n),
                cols: block_range(cb, cols, n),
            });
        }
    }
    out
}

/// For each row block, packs the listed columns left to right into tiles.
pub fn pack_columns(rows: usize, n: usize, per_block: &[Vec<usize>]) -> Vec<Placement> {
    let mut out = Vec::new();
    for (rb, cols) in per_block.iter().enumerate() {
        for (k, chunk) in cols.chunks(n).enumerate() {
            out.push(Placement {
                row_block: rb,
                col_block: k,
                rows: block_range(rb, rows, n),
                cols: chunk.to_vec(),
            });
        }
    }
    out
}

/// For each column block, packs the listed rows top to bottom into tiles.
pub fn pack_rows(cols: usize, n: usize, per_block: &[Vec<usize>]) -> Vec<Placement> {
    let mut out = Vec::new();
    for (cb, rows) in per_block.iter().enumerate() {
        for (k, chunk) in rows.chunks(n).enumerate() {
            out.push(Placement {
                row_block: k,
                col_block: cb,
                rows: chunk.to_vec(),
                cols: block_range(cb, cols, n),
            });
        }
    }
    out
}

/// Copies the placed entries into a zero-padded `n x n` tile.
pub fn gather(w: &Array2<f64>, p: &Placement, n: usize) -> Array2<f64> {
    let mut t = Array2::zeros((n, n));
    for (a, &r) in p.rows.iter().enumerate() {
        for (b, &c) in p.cols.iter().enumerate() {
            t[[a, b]] = w[[r, c]];
        }
    }
    t
}

/// Writes the non-padding part of `tile` back to its source positions.
pub fn scatter(out: &mut Array2<f64>, p: &Placement, tile: &Array2<f64>) {
    for (a, &r) in p.rows.iter().enumerate() {
        for (b, &c) in p.cols.iter().enumerate() {
            out[[r, c]] = tile[[a, b]];
        }
    }
}
