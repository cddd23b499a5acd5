use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Columns whose ideal current is below this many amperes are excluded.
pub const DEFAULT_NF_EPSILON: f64 = 1e-12;

/// Non-ideality factor `(I_ideal - I_nonideal) / I_ideal` per column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NfReport {
    pub per_column_nf: Vec<f64>,
    /// Mean over non-excluded columns; `None` when every column was excluded.
    pub mean_nf: Option<f64>,
    pub excluded_columns: Vec<usize>,
}

pub fn nonideality_factor(i_ideal: &[f64], i_nonideal: &[f64], epsilon: f64) -> Result<NfReport> {
    if i_ideal.len() != i_nonideal.len() {
        return Err(Error::dims(
            format!("{} non-ideal currents", i_ideal.len()),
            i_nonideal.len().to_string(),
        ));
    }
    let mut per_column_nf = Vec::with_capacity(i_ideal.len());
    let mut excluded_columns = Vec::new();
    let mut sum = 0.0;
    for (j, (&id, &nid)) in i_ideal.iter().zip(i_nonideal).enumerate() {
        if id.abs() < epsilon {
            excluded_columns.push(j);
            per_column_nf.push(f64::NAN);
        } else {
            let nf = (id - nid) / id;
            sum += nf;
            per_column_nf.push(nf);
        }
    }
    let kept = i_ideal.len() - excluded_columns.len();
    let mean_nf = (kept > 0).then(|| sum / kept as f64);
    Ok(NfReport {
        per_column_nf,
        mean_nf,
        excluded_columns,
    })
}

/// NF of every tile of one layer, with the three aggregations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct LayerNf {
    pub tiles: Vec<NfReport>,
}

impl LayerNf {
    /// Mean of the per-tile means. This is the figure used in reports.
    pub fn mean_tile_nf(&self) -> Option<f64> {
        let means: Vec<f64> = self.tiles.iter().filter_map(|t| t.mean_nf).collect();
        (!means.is_empty()).then(|| means.iter().sum::<f64>() / means.len() as f64)
    }

    /// Mean over every non-excluded column of every tile.
    pub fn mean_column_nf(&self) -> Option<f64> {
        let cols: Vec<f64> = self
            .tiles
            .iter()
            .flat_map(|t| t.per_column_nf.iter().copied().filter(|x| !x.is_nan()))
            .collect();
        (!cols.is_empty()).then(|| cols.iter().sum::<f64>() / cols.len() as f64)
    }

    pub fn merge(layers: &[LayerNf]) -> LayerNf {
        LayerNf {
            tiles: layers
                .iter()
                .flat_map(|l| l.tiles.iter().cloned())
                .collect(),
        }
    }
}
