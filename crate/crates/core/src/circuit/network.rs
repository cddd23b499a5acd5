//! Nodal analysis of the parasitic crossbar network.
//!
//! Every cell `(i, j)` owns a row node `r(i,j)` and a column node `c(i,j)`
//! joined by the device conductance. Row nodes are chained by `r_wire_row`,
//! column nodes by `r_wire_col`. Row `i` is driven from an ideal source `V_i`
//! through `r_driver` into `r(i,0)`; column `j` drains from `c(n_rows-1,j)`
//! through `r_sense` into a grounded sense terminal.
//!
//! Zero-ohm branches are collapsed by merging their end nodes before
//! assembly, so the ideal limit is handled exactly rather than through huge
//! conductances. The remaining free nodes form a symmetric positive-definite
//! system whose natural (cell-major, row/column interleaved) ordering has a
//! bandwidth of about `2 * n_cols`; it is factorized once with a banded
//! Cholesky and reused for any number of right-hand sides.

use ndarray::Array2;
use rayon::prelude::*;

use super::{ConductanceTile, CrossbarParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Fixed {
    Source(usize),
    Ground(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Class {
    Free(usize),
    Fixed(Fixed),
}

#[derive(Debug, Clone, Copy)]
struct Branch {
    a: usize,
    b: usize,
    g: f64,
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n).collect())
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // keep the smaller index as root so the ordering stays cell-major
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.0[hi] = lo;
        }
    }
}

/// Lower band of a symmetric matrix, row-major, `bw + 1` slots per row.
#[derive(Debug, Clone)]
struct Band {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl Band {
    fn zeros(n: usize, bw: usize) -> Self {
        Band {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        i * (self.bw + 1) + (j + self.bw - i)
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        self.data[self.idx(i, j)]
    }

    fn add(&mut self, i: usize, j: usize, x: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let k = self.idx(i, j);
        self.data[k] += x;
    }

    fn row(&self, i: usize, from: usize, to: usize) -> &[f64] {
        let a = self.idx(i, from);
        &self.data[a..a + (to - from)]
    }

    /// In-place `L L^T` factorization.
    fn cholesky(mut self) -> Result<Band> {
        let bw = self.bw;
        for i in 0..self.n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let k0 = lo.max(j.saturating_sub(bw));
                let dot: f64 = self
                    .row(i, k0, j)
                    .iter()
                    .zip(self.row(j, k0, j))
                    .map(|(a, b)| a * b)
                    .sum();
                let s = self.get(i, j) - dot;
                let k = self.idx(i, j);
                if i == j {
                    let scale = self.get(i, i).abs();
                    if !s.is_finite() || s <= 1e-14 * scale {
                        return Err(Error::Singular(format!(
                            "non-positive pivot {s:e} at free node {i}"
                        )));
                    }
                    self.data[k] = s.sqrt();
                } else {
                    self.data[k] = s / self.get(j, j);
                }
            }
        }
        Ok(self)
    }

    fn solve_in_place(&self, x: &mut [f64]) {
        let bw = self.bw;
        for i in 0..self.n {
            let lo = i.saturating_sub(bw);
            let dot: f64 = self
                .row(i, lo, i)
                .iter()
                .zip(&x[lo..i])
                .map(|(a, b)| a * b)
                .sum();
            x[i] = (x[i] - dot) / self.get(i, i);
        }
        for i in (0..self.n).rev() {
            x[i] /= self.get(i, i);
            let xi = x[i];
            let lo = i.saturating_sub(bw);
            for (xj, l) in x[lo..i].iter_mut().zip(self.row(i, lo, i)) {
                *xj -= l * xi;
            }
        }
    }

    /// `y = A x` using the symmetric lower band.
    fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            let row = self.row(i, lo, i + 1);
            for (k, &a) in row.iter().enumerate() {
                let j = lo + k;
                y[i] += a * x[j];
                if j != i {
                    y[j] += a * x[i];
                }
            }
        }
        y
    }
}

/// Voltages of every row and column node, indexed by cell.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeVoltages {
    pub row: Array2<f64>,
    pub col: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    /// Sense current of each column, amperes.
    pub currents: Vec<f64>,
    pub nodes: NodeVoltages,
}

/// Kirchhoff current-law check over the free (non-driven) nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct KclReport {
    /// Largest `|sum of currents| / sum of |currents|` over free nodes.
    pub max_relative: f64,
    pub nodes_checked: usize,
}

/// A factorized crossbar circuit, reusable across input vectors.
pub struct CrossbarSolver {
    n_rows: usize,
    n_cols: usize,
    /// Class of each original node (row/col node per cell, then sources, then grounds).
    class: Vec<Class>,
    branches: Vec<Branch>,
    matrix: Band,
    factor: Band,
    /// `(free index, source row, g)` terms feeding the right-hand side.
    couplings: Vec<(usize, usize, f64)>,
    /// Per column, branches entering its ground cluster: `(far node, g)`.
    sense_terms: Vec<Vec<(usize, f64)>>,
}

fn row_node(n_cols: usize, i: usize, j: usize) -> usize {
    2 * (i * n_cols + j)
}

fn col_node(n_cols: usize, i: usize, j: usize) -> usize {
    2 * (i * n_cols + j) + 1
}

impl CrossbarSolver {
    pub fn new(tile: &ConductanceTile, params: &CrossbarParams) -> Result<Self> {
        params.validate()?;
        tile.check_dims(params)?;
        if tile.0.iter().any(|g| !g.is_finite() || *g < 0.0) {
            return Err(Error::NonFinite("tile conductance".into()));
        }
        let (nr, nc) = (params.n_rows, params.n_cols);
        let cells = 2 * nr * nc;
        let source = |i: usize| cells + i;
        let ground = |j: usize| cells + nr + j;
        let total = cells + nr + nc;

        // Devices first, row-major, so each column's sense terms accumulate in
        // row order; this makes the ideal limit bitwise equal to `ideal_mac`.
        let mut branches = Vec::with_capacity(4 * nr * nc + nr + nc);
        let mut shorts = Vec::new();
        let mut push = |a: usize, b: usize, r_or_g: Resistance| match r_or_g {
            Resistance::Ohms(0.0) => shorts.push((a, b)),
            Resistance::Ohms(r) => branches.push(Branch { a, b, g: 1.0 / r }),
            Resistance::Siemens(g) if g > 0.0 => branches.push(Branch { a, b, g }),
            Resistance::Siemens(_) => {}
        };
        for i in 0..nr {
            for j in 0..nc {
                push(
                    row_node(nc, i, j),
                    col_node(nc, i, j),
                    Resistance::Siemens(tile.0[[i, j]]),
                );
            }
        }
        for i in 0..nr {
            push(
                source(i),
                row_node(nc, i, 0),
                Resistance::Ohms(params.r_driver),
            );
            for j in 0..nc.saturating_sub(1) {
                push(
                    row_node(nc, i, j),
                    row_node(nc, i, j + 1),
                    Resistance::Ohms(params.r_wire_row),
                );
            }
        }
        for j in 0..nc {
            for i in 0..nr.saturating_sub(1) {
                push(
                    col_node(nc, i, j),
                    col_node(nc, i + 1, j),
                    Resistance::Ohms(params.r_wire_col),
                );
            }
            push(
                col_node(nc, nr - 1, j),
                ground(j),
                Resistance::Ohms(params.r_sense),
            );
        }

        let mut uf = UnionFind::new(total);
        for &(a, b) in &shorts {
            uf.union(a, b);
        }

        let mut root_fixed: Vec<Option<Fixed>> = vec![None; total];
        for (node, fixed) in (0..nr)
            .map(|i| (source(i), Fixed::Source(i)))
            .chain((0..nc).map(|j| (ground(j), Fixed::Ground(j))))
        {
            let root = uf.find(node);
            if let Some(prev) = root_fixed[root] {
                return Err(Error::Singular(format!(
                    "zero-resistance path joins {prev:?} and {fixed:?}"
                )));
            }
            root_fixed[root] = Some(fixed);
        }

        let mut free_of_root: Vec<Option<usize>> = vec![None; total];
        let mut n_free = 0;
        let mut class = Vec::with_capacity(total);
        for node in 0..total {
            let root = uf.find(node);
            let c = match root_fixed[root] {
                Some(f) => Class::Fixed(f),
                None => Class::Free(*free_of_root[root].get_or_insert_with(|| {
                    n_free += 1;
                    n_free - 1
                })),
            };
            class.push(c);
        }

        let mut bw = 0;
        for br in &branches {
            if let (Class::Free(p), Class::Free(q)) = (class[br.a], class[br.b]) {
                bw = bw.max(p.abs_diff(q));
            }
        }

        let mut matrix = Band::zeros(n_free, bw);
        let mut couplings = Vec::new();
        let mut sense_terms = vec![Vec::new(); nc];
        for br in &branches {
            match (class[br.a], class[br.b]) {
                (Class::Free(p), Class::Free(q)) => {
                    if p != q {
                        matrix.add(p, p, br.g);
                        matrix.add(q, q, br.g);
                        matrix.add(p, q, -br.g);
                    }
                }
                (Class::Free(p), Class::Fixed(f)) | (Class::Fixed(f), Class::Free(p)) => {
                    matrix.add(p, p, br.g);
                    if let Fixed::Source(i) = f {
                        couplings.push((p, i, br.g));
                    }
                }
                (Class::Fixed(_), Class::Fixed(_)) => {}
            }
            for (here, there) in [(br.a, br.b), (br.b, br.a)] {
                if let (Class::Fixed(Fixed::Ground(j)), other) = (class[here], class[there]) {
                    if other != Class::Fixed(Fixed::Ground(j)) {
                        sense_terms[j].push((there, br.g));
                    }
                }
            }
        }

        let factor = matrix.clone().cholesky()?;
        Ok(CrossbarSolver {
            n_rows: nr,
            n_cols: nc,
            class,
            branches,
            matrix,
            factor,
            couplings,
            sense_terms,
        })
    }

    /// Number of unknown node voltages after merging shorted nodes.
    pub fn free_nodes(&self) -> usize {
        self.matrix.n
    }

    pub fn bandwidth(&self) -> usize {
        self.matrix.bw
    }

    fn voltage(&self, node: usize, free: &[f64], v: &[f64]) -> f64 {
        match self.class[node] {
            Class::Free(p) => free[p],
            Class::Fixed(Fixed::Source(i)) => v[i],
            Class::Fixed(Fixed::Ground(_)) => 0.0,
        }
    }

    fn check_input(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.n_rows {
            return Err(Error::dims(
                format!("{} input voltages", self.n_rows),
                v.len().to_string(),
            ));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("input voltage".into()));
        }
        Ok(())
    }

    fn free_voltages(&self, v: &[f64]) -> Vec<f64> {
        let mut rhs = vec![0.0; self.matrix.n];
        for &(p, i, g) in &self.couplings {
            rhs[p] += g * v[i];
        }
        let mut x = rhs.clone();
        self.factor.solve_in_place(&mut x);
        // one step of iterative refinement
        let ax = self.matrix.matvec(&x);
        let mut r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
        self.factor.solve_in_place(&mut r);
        for (xi, di) in x.iter_mut().zip(&r) {
            *xi += di;
        }
        x
    }

    fn currents_from(&self, free: &[f64], v: &[f64]) -> Vec<f64> {
        self.sense_terms
            .iter()
            .map(|terms| {
                terms
                    .iter()
                    .fold(0.0, |acc, &(node, g)| acc + g * self.voltage(node, free, v))
            })
            .collect()
    }

    /// Column sense currents only.
    pub fn currents(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_input(v)?;
        let free = self.free_voltages(v);
        Ok(self.currents_from(&free, v))
    }

    pub fn solve(&self, v: &[f64]) -> Result<Solution> {
        self.check_input(v)?;
        let free = self.free_voltages(v);
        let currents = self.currents_from(&free, v);
        let (nr, nc) = (self.n_rows, self.n_cols);
        let row = Array2::from_shape_fn((nr, nc), |(i, j)| {
            self.voltage(row_node(nc, i, j), &free, v)
        });
        let col = Array2::from_shape_fn((nr, nc), |(i, j)| {
            self.voltage(col_node(nc, i, j), &free, v)
        });
        Ok(Solution {
            currents,
            nodes: NodeVoltages { row, col },
        })
    }

    /// Re-derives branch currents from a solution's node voltages and checks
    /// current conservation at every free node (merged nodes count as one).
    pub fn kcl(&self, v: &[f64], solution: &Solution) -> Result<KclReport> {
        self.check_input(v)?;
        let nc = self.n_cols;
        let mut free = vec![0.0; self.matrix.n];
        for i in 0..self.n_rows {
            for j in 0..nc {
                for (node, val) in [
                    (row_node(nc, i, j), solution.nodes.row[[i, j]]),
                    (col_node(nc, i, j), solution.nodes.col[[i, j]]),
                ] {
                    if let Class::Free(p) = self.class[node] {
                        free[p] = val;
                    }
                }
            }
        }
        let mut net = vec![0.0; self.matrix.n];
        let mut gross = vec![0.0; self.matrix.n];
        for br in &self.branches {
            let i_ab = br.g * (self.voltage(br.a, &free, v) - self.voltage(br.b, &free, v));
            if let Class::Free(p) = self.class[br.a] {
                net[p] -= i_ab;
                gross[p] += i_ab.abs();
            }
            if let Class::Free(q) = self.class[br.b] {
                net[q] += i_ab;
                gross[q] += i_ab.abs();
            }
        }
        let max_relative = net
            .iter()
            .zip(&gross)
            .map(|(n, g)| if *g > 0.0 { n.abs() / g } else { n.abs() })
            .fold(0.0, f64::max);
        Ok(KclReport {
            max_relative,
            nodes_checked: net.len(),
        })
    }
}

enum Resistance {
    Ohms(f64),
    Siemens(f64),
}

/// Sense currents and node voltages of the parasitic network for input `v`.
pub fn solve_crossbar(
    tile: &ConductanceTile,
    params: &CrossbarParams,
    v: &[f64],
) -> Result<Solution> {
    CrossbarSolver::new(tile, params)?.solve(v)
}

/// Input-independent matrix `G'` with `I_j = sum_i G'_ij V_i` for the
/// parasitic network. Row `i` is the current vector obtained by driving only
/// row `i` at `v_read`, divided by `v_read`.
pub fn extract_effective_conductance(
    tile: &ConductanceTile,
    params: &CrossbarParams,
) -> Result<Array2<f64>> {
    let solver = CrossbarSolver::new(tile, params)?;
    let (nr, nc) = (params.n_rows, params.n_cols);
    let rows: Vec<Vec<f64>> = (0..nr)
        .into_par_iter()
        .map(|i| {
            let mut v = vec![0.0; nr];
            v[i] = params.v_read;
            let mut cur = solver.currents(&v)?;
            for c in &mut cur {
                *c /= params.v_read;
            }
            Ok(cur)
        })
        .collect::<Result<_>>()?;
    let mut g = Array2::zeros((nr, nc));
    for (i, row) in rows.into_iter().enumerate() {
        for (j, x) in row.into_iter().enumerate() {
            g[[i, j]] = x;
        }
    }
    Ok(g)
}
