use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column ordering used by the rearrangement transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Arrangement {
    /// Increasing metric from left to right.
    #[default]
    Ascending,
    /// Lowest metric in the middle, increasing towards both edges.
    CenterOut,
}

/// `sqrt(mean(|w|) * std(|w|))` with the population standard deviation.
pub fn column_metric(column: ArrayView1<f64>) -> f64 {
    let n = column.len() as f64;
    if column.is_empty() {
        return 0.0;
    }
    let mean = column.iter().map(|x| x.abs()).sum::<f64>() / n;
    let var = column.iter().map(|x| (x.abs() - mean).powi(2)).sum::<f64>() / n;
    (mean * var.sqrt()).sqrt()
}

fn ascending_order(w: &Array2<f64>) -> Vec<usize> {
    let metrics: Vec<f64> = w.columns().into_iter().map(column_metric).collect();
    let mut order: Vec<usize> = (0..w.ncols()).collect();
    // stable: ties keep their original order
    order.sort_by(|&a, &b| metrics[a].total_cmp(&metrics[b]));
    order
}

fn center_out(sorted: &[usize]) -> Vec<usize> {
    let n = sorted.len();
    let mut slots: Vec<usize> = (0..n).collect();
    let mid = (n as f64 - 1.0) / 2.0;
    slots.sort_by(|&a, &b| (a as f64 - mid).abs().total_cmp(&(b as f64 - mid).abs()));
    let mut out = vec![0; n];
    for (&slot, &col) in slots.iter().zip(sorted) {
        out[slot] = col;
    }
    out
}

/// Reorders columns by ascending metric. Returns the rearranged matrix and
/// the permutation, where `perm[k]` is the source column now at position `k`.
pub fn rearrange_columns(w: &Array2<f64>) -> (Array2<f64>, Vec<usize>) {
    arrange(w, Arrangement::Ascending)
}

pub(crate) fn arrange(w: &Array2<f64>, how: Arrangement) -> (Array2<f64>, Vec<usize>) {
    let sorted = ascending_order(w);
    let perm = match how {
        Arrangement::Ascending => sorted,
        Arrangement::CenterOut => center_out(&sorted),
    };
    (w.select(Axis(1), &perm), perm)
}

pub(crate) fn unpermute(arranged: &Array2<f64>, perm: &[usize]) -> Result<Array2<f64>> {
    let n = arranged.ncols();
    let mut seen = vec![false; n];
    if perm.len() != n
        || perm
            .iter()
            .any(|&c| c >= n || std::mem::replace(&mut seen[c], true))
    {
        return Err(Error::InvalidParam(format!(
            "column permutation is not a bijection on 0..{n}"
        )));
    }
    let mut out = Array2::zeros(arranged.dim());
    for (k, &c) in perm.iter().enumerate() {
        out.column_mut(c).assign(&arranged.column(k));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use ndarray::{array, Array1};
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn metric_examples() {
        assert_eq!(column_metric(Array1::from(vec![0.2, 0.2]).view()), 0.0);
        let m = column_metric(Array1::from(vec![0.1, 0.3]).view());
        assert!((m - 0.02f64.sqrt()).abs() < 1e-12);
        let m = column_metric(Array1::from(vec![0.9, -0.7]).view());
        assert!((m - 0.08f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn ordering_examples() {
        let w = array![[0.1, 0.9, 0.2], [0.3, 0.7, 0.2]];
        let (r, perm) = rearrange_columns(&w);
        assert_eq!(perm, vec![2, 0, 1]);
        assert_eq!(r.column(0), w.column(2));

        let same = Array2::from_elem((3, 4), 0.5);
        assert_eq!(rearrange_columns(&same).1, vec![0, 1, 2, 3]);

        let sorted = array![[0.2, 0.1, 0.1], [0.2, 0.3, 0.5]];
        assert_eq!(rearrange_columns(&sorted).1, vec![0, 1, 2]);
    }

    #[test]
    fn center_out_puts_lowest_in_the_middle() {
        let w = array![[0.0, 0.1, 0.1, 0.5, 0.1], [0.0, 0.2, 0.4, 1.0, 0.7]];
        let (_, perm) = arrange(&w, Arrangement::CenterOut);
        assert_eq!(perm[2], 0);
        assert_eq!(
            perm.iter().position(|&c| c == 3).map(|k| k == 0 || k == 4),
            Some(true)
        );
    }

    #[test]
    fn unpermute_rejects_non_bijection() {
        let w = Array2::zeros((2, 3));
        assert!(unpermute(&w, &[0, 0, 1]).is_err());
        assert!(unpermute(&w, &[0, 1]).is_err());
    }

    proptest! {
        #[test]
        fn permutation_is_sound(rows in 1usize..10, cols in 1usize..12, seed in any::<u64>(), center in any::<bool>()) {
            let mut r = rng::stream(seed, &[]);
            let w = Array2::from_shape_fn((rows, cols), |_| r.random_range(-1.0..1.0));
            let how = if center { Arrangement::CenterOut } else { Arrangement::Ascending };
            let (arranged, perm) = arrange(&w, how);
            prop_assert_eq!(unpermute(&arranged, &perm).unwrap(), w.clone());
            if !center {
                let m: Vec<f64> = arranged.columns().into_iter().map(column_metric).collect();
                prop_assert!(m.windows(2).all(|p| p[0] <= p[1]));
            }
        }
    }
}
