//! Resistive-network model of a single crossbar tile.
//!
//! A tile is an `n_rows x n_cols` grid of programmable conductances. Inputs are
//! row voltages applied through a driver resistance at the left end of each
//! row, outputs are currents sensed into virtual ground at the bottom of each
//! column. Wire segments between neighbouring cells carry a fixed resistance.

mod network;
mod nf;
mod variation;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use network::{
    extract_effective_conductance, solve_crossbar, CrossbarSolver, KclReport, NodeVoltages,
    Solution,
};
pub use nf::{nonideality_factor, LayerNf, NfReport, DEFAULT_NF_EPSILON};
pub use variation::apply_device_variation;

pub const MAX_DIM: usize = 1024;

/// Circuit and device parameters of one crossbar tile.
///
/// The ON/OFF ratio is `g_max / g_min` and is never stored separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossbarParams {
    pub n_rows: usize,
    pub n_cols: usize,
    /// Ohms.
    pub r_driver: f64,
    /// Ohms per cell segment.
    pub r_wire_row: f64,
    /// Ohms per cell segment.
    pub r_wire_col: f64,
    /// Ohms.
    pub r_sense: f64,
    /// Siemens.
    pub g_min: f64,
    /// Siemens.
    pub g_max: f64,
    /// Std. dev. of the multiplicative device variation.
    pub sigma_dev: f64,
    /// Volts.
    pub v_read: f64,
}

impl Default for CrossbarParams {
    fn default() -> Self {
        CrossbarParams {
            n_rows: 64,
            n_cols: 64,
            r_driver: 1e3,
            r_wire_row: 5.0,
            r_wire_col: 5.0,
            r_sense: 1e3,
            g_min: 5e-6,
            g_max: 5e-5,
            sigma_dev: 0.1,
            v_read: 1.0,
        }
    }
}

impl CrossbarParams {
    /// Square `n x n` tile with default device and circuit values.
    pub fn square(n: usize) -> Self {
        CrossbarParams::default().with_size(n)
    }

    pub fn with_size(mut self, n: usize) -> Self {
        self.n_rows = n;
        self.n_cols = n;
        self
    }

    /// Same tile with every parasitic resistance removed and no device variation.
    pub fn ideal(mut self) -> Self {
        self.r_driver = 0.0;
        self.r_wire_row = 0.0;
        self.r_wire_col = 0.0;
        self.r_sense = 0.0;
        self.sigma_dev = 0.0;
        self
    }

    pub fn on_off_ratio(&self) -> f64 {
        self.g_max / self.g_min
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParam(msg));
        for (name, n) in [("n_rows", self.n_rows), ("n_cols", self.n_cols)] {
            if n == 0 || n > MAX_DIM {
                return bad(format!("{name} = {n} outside 1..={MAX_DIM}"));
            }
        }
        for (name, r) in [
            ("r_driver", self.r_driver),
            ("r_wire_row", self.r_wire_row),
            ("r_wire_col", self.r_wire_col),
            ("r_sense", self.r_sense),
        ] {
            if !r.is_finite() || r < 0.0 {
                return bad(format!("{name} = {r} must be finite and >= 0"));
            }
        }
        if !(self.g_min.is_finite() && self.g_max.is_finite()) {
            return bad("g_min/g_max must be finite".into());
        }
        if !(self.g_min > 0.0 && self.g_max > self.g_min) {
            return bad(format!(
                "need g_max > g_min > 0, got g_min = {}, g_max = {}",
                self.g_min, self.g_max
            ));
        }
        if !(0.0..1.0 / 3.0).contains(&self.sigma_dev) {
            return bad(format!("sigma_dev = {} outside [0, 1/3)", self.sigma_dev));
        }
        if !(self.v_read.is_finite() && self.v_read > 0.0) {
            return bad(format!("v_read = {} must be finite and > 0", self.v_read));
        }
        Ok(())
    }
}

/// Programmed synapse conductances of one tile, in siemens.
#[derive(Debug, Clone, PartialEq)]
pub struct ConductanceTile(pub Array2<f64>);

impl ConductanceTile {
    pub fn new(g: Array2<f64>) -> Result<Self> {
        if let Some(x) = g.iter().find(|x| !x.is_finite() || **x < 0.0) {
            return Err(Error::NonFinite(format!(
                "conductance {x} is not a finite non-negative value"
            )));
        }
        Ok(ConductanceTile(g))
    }

    pub fn uniform(n_rows: usize, n_cols: usize, g: f64) -> Self {
        ConductanceTile(Array2::from_elem((n_rows, n_cols), g))
    }

    pub fn n_rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.0
    }

    pub(crate) fn check_dims(&self, params: &CrossbarParams) -> Result<()> {
        if self.n_rows() != params.n_rows || self.n_cols() != params.n_cols {
            return Err(Error::dims(
                format!("{}x{} tile", params.n_rows, params.n_cols),
                format!("{}x{}", self.n_rows(), self.n_cols()),
            ));
        }
        Ok(())
    }

    /// Every entry lies in `[g_min, g_max]`.
    pub fn is_programmable(&self, params: &CrossbarParams) -> bool {
        self.0
            .iter()
            .all(|&g| g >= params.g_min && g <= params.g_max)
    }
}

/// Ideal analog dot product: `I_j = sum_i G_ij * V_i`.
pub fn ideal_mac(tile: &ConductanceTile, v: &[f64]) -> Result<Vec<f64>> {
    mac(&tile.0, v)
}

/// Column currents of an arbitrary conductance matrix, summed in row order.
pub(crate) fn mac(g: &Array2<f64>, v: &[f64]) -> Result<Vec<f64>> {
    if v.len() != g.nrows() {
        return Err(Error::dims(
            format!("{} input voltages", g.nrows()),
            v.len().to_string(),
        ));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("input voltage".into()));
    }
    let mut out = vec![0.0; g.ncols()];
    for (row, &vi) in g.rows().into_iter().zip(v) {
        for (acc, &gij) in out.iter_mut().zip(row) {
            *acc += gij * vi;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn ideal_mac_single_cell() {
        let t = ConductanceTile::uniform(1, 1, 1e-4);
        assert_eq!(ideal_mac(&t, &[1.0]).unwrap(), vec![1e-4]);
    }

    #[test]
    fn ideal_mac_zero_input_is_zero() {
        let t = ConductanceTile(array![[1e-4, 2e-4], [3e-4, 4e-4]]);
        assert_eq!(ideal_mac(&t, &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn ideal_mac_column_sums() {
        let t = ConductanceTile(array![[1e-4, 2e-4], [3e-4, 4e-4]]);
        let i = ideal_mac(&t, &[1.0, 1.0]).unwrap();
        assert!((i[0] - 4e-4).abs() < 1e-18);
        assert!((i[1] - 6e-4).abs() < 1e-18);
    }

    #[test]
    fn ideal_mac_rejects_wrong_length() {
        let t = ConductanceTile::uniform(2, 2, 1e-4);
        assert!(matches!(
            ideal_mac(&t, &[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn default_params_are_valid() {
        let p = CrossbarParams::default();
        p.validate().unwrap();
        assert!((p.on_off_ratio() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn params_validation_catches_bad_values() {
        let mut p = CrossbarParams::default();
        p.g_min = p.g_max;
        assert!(p.validate().is_err());
        let p = CrossbarParams {
            sigma_dev: 0.34,
            ..Default::default()
        };
        assert!(p.validate().is_err());
        let p = CrossbarParams {
            r_wire_col: -1.0,
            ..Default::default()
        };
        assert!(p.validate().is_err());
        assert!(CrossbarParams::square(0).validate().is_err());
        assert!(CrossbarParams::square(1025).validate().is_err());
    }
}
