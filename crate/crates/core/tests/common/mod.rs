//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use ndarray::Array2;
use rand::Rng;
use xbar_core::circuit::{ConductanceTile, CrossbarParams};
use xbar_core::rng;

/// Dense nodal analysis of the crossbar network, written independently of the
/// library solver: every row and column node is an unknown, the system is
/// assembled as a full matrix and solved by Gaussian elimination with partial
/// pivoting. All resistances must be strictly positive.
pub fn oracle_currents(g: &Array2<f64>, p: &CrossbarParams, v: &[f64]) -> Vec<f64> {
    let (nr, nc) = g.dim();
    assert_eq!(v.len(), nr);
    let r = |i: usize, j: usize| i * nc + j;
    let c = |i: usize, j: usize| nr * nc + i * nc + j;
    let n = 2 * nr * nc;
    let mut y = vec![vec![0.0; n]; n];
    let mut b = vec![0.0; n];
    let stamp = |y: &mut Vec<Vec<f64>>, a: usize, bb: usize, cond: f64| {
        y[a][a] += cond;
        y[bb][bb] += cond;
        y[a][bb] -= cond;
        y[bb][a] -= cond;
    };
    for i in 0..nr {
        for j in 0..nc {
            stamp(&mut y, r(i, j), c(i, j), g[[i, j]]);
            if j + 1 < nc {
                stamp(&mut y, r(i, j), r(i, j + 1), 1.0 / p.r_wire_row);
            }
            if i + 1 < nr {
                stamp(&mut y, c(i, j), c(i + 1, j), 1.0 / p.r_wire_col);
            }
        }
        let gd = 1.0 / p.r_driver;
        y[r(i, 0)][r(i, 0)] += gd;
        b[r(i, 0)] += gd * v[i];
    }
    for j in 0..nc {
        y[c(nr - 1, j)][c(nr - 1, j)] += 1.0 / p.r_sense;
    }
    let x = gauss(y, b);
    (0..nc).map(|j| x[c(nr - 1, j)] / p.r_sense).collect()
}

fn gauss(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for k in 0..n {
        let piv = (k..n)
            .max_by(|&x, &y| a[x][k].abs().total_cmp(&a[y][k].abs()))
            .unwrap();
        a.swap(k, piv);
        b.swap(k, piv);
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            if f == 0.0 {
                continue;
            }
            let pivot = a[k].clone();
            for (x, p) in a[i][k..].iter_mut().zip(&pivot[k..]) {
                *x -= f * p;
            }
            b[i] -= f * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| a[k][j] * x[j]).sum();
        x[k] = (b[k] - s) / a[k][k];
    }
    x
}

/// Largest `|a - b| / |b|` over paired entries.
pub fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            if *y == 0.0 {
                x.abs()
            } else {
                (x - y).abs() / y.abs()
            }
        })
        .fold(0.0, f64::max)
}

pub fn uniform_tile(nr: usize, nc: usize, p: &CrossbarParams, r: &mut impl Rng) -> ConductanceTile {
    ConductanceTile(Array2::from_shape_fn((nr, nc), |_| {
        r.random_range(p.g_min..=p.g_max)
    }))
}

/// Tile with random size-independent parasitics and conductances.
pub fn random_case(nr: usize, nc: usize, seed: u64) -> (ConductanceTile, CrossbarParams, Vec<f64>) {
    let mut r = rng::stream(seed, &[nr as u64, nc as u64]);
    let p = CrossbarParams {
        n_rows: nr,
        n_cols: nc,
        r_driver: r.random_range(10.0..5000.0),
        r_wire_row: r.random_range(0.1..100.0),
        r_wire_col: r.random_range(0.1..100.0),
        r_sense: r.random_range(10.0..5000.0),
        ..CrossbarParams::default()
    };
    let tile = uniform_tile(nr, nc, &p, &mut r);
    let v = (0..nr).map(|_| r.random_range(0.0..1.0)).collect();
    (tile, p, v)
}

pub fn random_weights(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut r = rng::stream(seed, &[rows as u64, cols as u64]);
    Array2::from_shape_fn((rows, cols), |_| r.random_range(-1.0..1.0))
}
