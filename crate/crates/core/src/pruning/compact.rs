use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::{LayerGeometry, Mask, PruneMethod, SparsityPattern};
use crate::error::{Error, Result};
use crate::tiling::{self, blocks, Placement};

/// How a sparse layer is squeezed before tiling, with everything needed to
/// undo it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Compaction {
    /// Keep only the listed rows and columns (C/F).
    Dense {
        rows: usize,
        cols: usize,
        kept_rows: Vec<usize>,
        kept_cols: Vec<usize>,
    },
    /// Per row block of height `n`, the columns whose segment survives (XCS).
    ColumnSegments {
        rows: usize,
        cols: usize,
        n: usize,
        kept: Vec<Vec<usize>>,
    },
    /// Per column block of width `n`, the rows whose segment survives (XRS).
    RowSegments {
        rows: usize,
        cols: usize,
        n: usize,
        kept: Vec<Vec<usize>>,
    },
}

fn any_kept(m: &Mask, axis: Axis) -> Vec<usize> {
    m.axis_iter(axis)
        .enumerate()
        .filter(|(_, lane)| lane.iter().any(|k| *k))
        .map(|(i, _)| i)
        .collect()
}

impl Compaction {
    /// Reads the surviving structure off a mask. Segment schemes are read at
    /// tile size `n`, which may differ from the size the mask was drawn at.
    pub fn from_mask(method: PruneMethod, mask: &Mask, n: usize) -> Result<Self> {
        let (rows, cols) = mask.dim();
        if n == 0 {
            return Err(Error::InvalidParam("tile size must be >= 1".into()));
        }
        Ok(match method {
            PruneMethod::Cf => Compaction::Dense {
                rows,
                cols,
                kept_rows: any_kept(mask, Axis(0)),
                kept_cols: any_kept(mask, Axis(1)),
            },
            PruneMethod::Xcs => Compaction::ColumnSegments {
                rows,
                cols,
                n,
                kept: (0..blocks(rows, n))
                    .map(|b| {
                        (0..cols)
                            .filter(|&c| (b * n..((b + 1) * n).min(rows)).any(|r| mask[[r, c]]))
                            .collect()
                    })
                    .collect(),
            },
            PruneMethod::Xrs => Compaction::RowSegments {
                rows,
                cols,
                n,
                kept: (0..blocks(cols, n))
                    .map(|b| {
                        (0..rows)
                            .filter(|&r| (b * n..((b + 1) * n).min(cols)).any(|c| mask[[r, c]]))
                            .collect()
                    })
                    .collect(),
            },
        })
    }

    pub fn source_shape(&self) -> (usize, usize) {
        match self {
            Compaction::Dense { rows, cols, .. }
            | Compaction::ColumnSegments { rows, cols, .. }
            | Compaction::RowSegments { rows, cols, .. } => (*rows, *cols),
        }
    }

    /// Shape of the matrix handed to tiling.
    pub fn staged_shape(&self) -> (usize, usize) {
        match self {
            Compaction::Dense {
                kept_rows,
                kept_cols,
                ..
            } => (kept_rows.len(), kept_cols.len()),
            _ => self.source_shape(),
        }
    }

    fn check_source(&self, w: &Array2<f64>) -> Result<()> {
        if w.dim() != self.source_shape() {
            return Err(Error::dims(
                format!("{:?}", self.source_shape()),
                format!("{:?}", w.dim()),
            ));
        }
        Ok(())
    }

    /// Applies the dense part of the transform. Segment schemes act only at
    /// placement time, so their staged matrix is the source itself.
    pub fn stage(&self, w: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_source(w)?;
        Ok(match self {
            Compaction::Dense {
                kept_rows,
                kept_cols,
                ..
            } => w.select(Axis(0), kept_rows).select(Axis(1), kept_cols),
            _ => w.clone(),
        })
    }

    /// Inverse of [`stage`](Self::stage): pruned positions come back as exact zeros.
    pub fn unstage(&self, staged: &Array2<f64>) -> Result<Array2<f64>> {
        if staged.dim() != self.staged_shape() {
            return Err(Error::dims(
                format!("{:?}", self.staged_shape()),
                format!("{:?}", staged.dim()),
            ));
        }
        Ok(match self {
            Compaction::Dense {
                rows,
                cols,
                kept_rows,
                kept_cols,
            } => {
                let mut out = Array2::zeros((*rows, *cols));
                for (a, &r) in kept_rows.iter().enumerate() {
                    for (b, &c) in kept_cols.iter().enumerate() {
                        out[[r, c]] = staged[[a, b]];
                    }
                }
                out
            }
            _ => staged.clone(),
        })
    }

    /// Tile placements in staged coordinates. `col_order[k]` names the staged
    /// column that sits at position `k` after any rearrangement; placements
    /// refer to those positions.
    pub fn placements(&self, n: usize, col_order: Option<&[usize]>) -> Result<Vec<Placement>> {
        let (sr, sc) = self.staged_shape();
        match self {
            Compaction::Dense { .. } => Ok(tiling::grid(sr, sc, n)),
            Compaction::ColumnSegments {
                rows, n: seg, kept, ..
            } => {
                check_segment(*seg, n)?;
                let mut position: Vec<usize> = (0..sc).collect();
                if let Some(order) = col_order {
                    for (k, &c) in order.iter().enumerate() {
                        position[c] = k;
                    }
                }
                let per_block: Vec<Vec<usize>> = kept
                    .iter()
                    .map(|cols| {
                        let mut p: Vec<usize> = cols.iter().map(|&c| position[c]).collect();
                        p.sort_unstable();
                        p
                    })
                    .collect();
                Ok(tiling::pack_columns(*rows, n, &per_block))
            }
            Compaction::RowSegments {
                cols, n: seg, kept, ..
            } => {
                check_segment(*seg, n)?;
                if let Some(order) = col_order {
                    if order.iter().enumerate().any(|(k, &c)| k != c) {
                        return Err(Error::InvalidParam(
                            "column rearrangement would break XRS row-segment alignment".into(),
                        ));
                    }
                }
                Ok(tiling::pack_rows(*cols, n, kept))
            }
        }
    }

    pub fn tile_count(&self, n: usize) -> usize {
        let (sr, sc) = self.staged_shape();
        match self {
            Compaction::Dense { .. } => blocks(sr, n) * blocks(sc, n),
            Compaction::ColumnSegments { kept, .. } | Compaction::RowSegments { kept, .. } => {
                kept.iter().map(|k| blocks(k.len(), n)).sum()
            }
        }
    }
}

fn check_segment(seg: usize, n: usize) -> Result<()> {
    if seg != n {
        return Err(Error::InvalidParam(format!(
            "segment compaction built for n = {seg} used with tile size {n}"
        )));
    }
    Ok(())
}

/// Removes the pruned filters of layer `l`: their columns from `w_l` and the
/// matching unrolled rows from `w_next`.
///
/// Returns both compacted matrices and the removed filter indices.
pub fn compact_cf(
    w_l: &Array2<f64>,
    w_next: &Array2<f64>,
    pattern: &SparsityPattern,
    l: usize,
) -> Result<(Array2<f64>, Array2<f64>, Vec<usize>)> {
    let (m_l, m_next) = match (pattern.masks.get(l), pattern.masks.get(l + 1)) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::InvalidParam(format!(
                "pattern has no layers {l}, {}",
                l + 1
            )))
        }
    };
    if w_l.dim() != m_l.dim() || w_next.dim() != m_next.dim() {
        return Err(Error::dims(
            format!("{:?} and {:?}", m_l.dim(), m_next.dim()),
            format!("{:?} and {:?}", w_l.dim(), w_next.dim()),
        ));
    }
    if m_l.ncols() == 0 || m_next.nrows() % m_l.ncols() != 0 {
        return Err(Error::dims(
            format!("multiple of {} rows", m_l.ncols()),
            m_next.nrows().to_string(),
        ));
    }
    let rpc = m_next.nrows() / m_l.ncols();
    let removed: Vec<usize> = (0..m_l.ncols())
        .filter(|&c| m_l.column(c).iter().all(|k| !k))
        .collect();
    for &f in &removed {
        if (f * rpc..(f + 1) * rpc).any(|r| m_next.row(r).iter().any(|k| *k)) {
            return Err(Error::InvalidParam(format!(
                "filter {f} is pruned in layer {l} but its rows survive in layer {}",
                l + 1
            )));
        }
    }
    let kept_cols: Vec<usize> = (0..m_l.ncols()).filter(|c| !removed.contains(c)).collect();
    let kept_rows: Vec<usize> = (0..m_next.nrows())
        .filter(|r| !removed.contains(&(r / rpc)))
        .collect();
    Ok((
        w_l.select(Axis(1), &kept_cols),
        w_next.select(Axis(0), &kept_rows),
        removed,
    ))
}

fn compact_segments(
    w: &Array2<f64>,
    n: usize,
    mask: &Mask,
    method: PruneMethod,
) -> Result<(Vec<Array2<f64>>, Vec<Placement>, Compaction)> {
    if w.dim() != mask.dim() {
        return Err(Error::dims(
            format!("{:?}", mask.dim()),
            format!("{:?}", w.dim()),
        ));
    }
    let c = Compaction::from_mask(method, mask, n)?;
    let placements = c.placements(n, None)?;
    let tiles = placements.iter().map(|p| tiling::gather(w, p, n)).collect();
    Ok((tiles, placements, c))
}

/// Packs surviving column segments of each row block into `n`-wide tiles.
pub fn compact_xcs(
    w: &Array2<f64>,
    n: usize,
    mask: &Mask,
) -> Result<(Vec<Array2<f64>>, Vec<Placement>, Compaction)> {
    compact_segments(w, n, mask, PruneMethod::Xcs)
}

/// Packs surviving row segments of each column block into `n`-tall tiles.
pub fn compact_xrs(
    w: &Array2<f64>,
    n: usize,
    mask: &Mask,
) -> Result<(Vec<Array2<f64>>, Vec<Placement>, Compaction)> {
    compact_segments(w, n, mask, PruneMethod::Xrs)
}

/// Tiles needed to map one layer, after compaction when a pattern is given.
pub fn tile_count(
    geom: &LayerGeometry,
    mask: Option<(PruneMethod, &Mask)>,
    n: usize,
) -> Result<usize> {
    match mask {
        None => Ok(blocks(geom.rows, n) * blocks(geom.cols, n)),
        Some((method, m)) => Ok(Compaction::from_mask(method, m, n)?.tile_count(n)),
    }
}

/// Crossbar-compression-rate: tiles for the unpruned model over tiles after
/// compaction, both at tile size `n`.
pub fn compression_rate(
    geoms: &[LayerGeometry],
    pattern: &SparsityPattern,
    n: usize,
) -> Result<f64> {
    if pattern.masks.len() != geoms.len() {
        return Err(Error::dims(
            format!("{} layer masks", geoms.len()),
            pattern.masks.len().to_string(),
        ));
    }
    let mut dense = 0;
    let mut sparse = 0;
    for (g, m) in geoms.iter().zip(&pattern.masks) {
        dense += tile_count(g, None, n)?;
        sparse += tile_count(g, Some((pattern.method, m)), n)?;
    }
    if sparse == 0 {
        return Err(Error::InvalidParam("pattern leaves nothing to map".into()));
    }
    Ok(dense as f64 / sparse as f64)
}
