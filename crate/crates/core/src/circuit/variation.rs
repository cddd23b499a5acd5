use rand::Rng;
use rand_distr::StandardNormal;

use super::ConductanceTile;
use crate::error::{Error, Result};

/// Multiplies every conductance by `1 + eps`, `eps ~ N(0, sigma^2)` truncated
/// to `[-3 sigma, 3 sigma]` by rejection. With `sigma < 1/3` the result stays
/// strictly positive. `sigma == 0` returns the input untouched and draws nothing.
pub fn apply_device_variation<R: Rng + ?Sized>(
    tile: &ConductanceTile,
    sigma_dev: f64,
    rng: &mut R,
) -> Result<ConductanceTile> {
    if !(0.0..1.0 / 3.0).contains(&sigma_dev) {
        return Err(Error::InvalidParam(format!(
            "sigma_dev = {sigma_dev} outside [0, 1/3)"
        )));
    }
    if sigma_dev == 0.0 {
        return Ok(tile.clone());
    }
    let mut g = tile.0.clone();
    for x in g.iter_mut() {
        let z = loop {
            let z: f64 = rng.sample(StandardNormal);
            if z.abs() <= 3.0 {
                break z;
            }
        };
        *x *= 1.0 + sigma_dev * z;
    }
    Ok(ConductanceTile(g))
}
