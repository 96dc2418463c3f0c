//! Point-wise encoder combinations outside the tape.

use crate::error::{Error, Result};
use crate::field::spec::Fusion;
use crate::grid::{GridLayout, LevelMask};
use crate::nn::tape::sigmoid;
use crate::render::Modality;

/// Gate parameters of [`Fusion::Gated`]: `n x n` weights then `n` biases.
pub type GateParams<'a> = &'a [f64];

/// Fuses the own-modality encoding with the `beta`-masked encoding of the
/// other grid, own features first.
#[allow(clippy::too_many_arguments)]
pub fn gaa_fuse(
    x: [f64; 3],
    modality: Modality,
    layout: &GridLayout,
    lidar_table: &[f64],
    camera_table: &[f64],
    beta: f64,
    fusion: Fusion,
    gate: Option<GateParams>,
) -> Result<Vec<f64>> {
    let (own_t, cross_t) = match modality {
        Modality::Lidar => (lidar_table, camera_table),
        Modality::Camera => (camera_table, lidar_table),
    };
    let own = layout.encode(x, own_t, None);
    let cross = layout.encode(x, cross_t, Some(LevelMask::new(beta)));
    fuse(&own, &cross, fusion, gate)
}

pub fn fuse(
    own: &[f64],
    cross: &[f64],
    fusion: Fusion,
    gate: Option<GateParams>,
) -> Result<Vec<f64>> {
    let n = own.len();
    match fusion {
        Fusion::Concat => Ok([own, cross].concat()),
        Fusion::Add => Ok(own.iter().zip(cross).map(|(a, b)| a + b).collect()),
        Fusion::Gated => {
            let gate = gate.ok_or_else(|| Error::config("gated fusion needs gate parameters"))?;
            if gate.len() != n * n + n {
                return Err(Error::Shape(format!(
                    "gate has {} entries for width {n}",
                    gate.len()
                )));
            }
            let mut out = own.to_vec();
            for o in 0..n {
                let z: f64 =
                    (0..n).map(|i| gate[o * n + i] * own[i]).sum::<f64>() + gate[n * n + o];
                out.push(sigmoid(z) * cross[o]);
            }
            Ok(out)
        }
    }
}

/// `encode(x, init) + encode(x, residual, mask)`; the mask never touches
/// the initialization grid.
pub fn sgi_encode(
    x: [f64; 3],
    init_layout: &GridLayout,
    init_table: &[f64],
    layout: &GridLayout,
    table: &[f64],
    mask: Option<LevelMask>,
) -> Result<Vec<f64>> {
    if !init_layout.config.same_geometry(&layout.config) {
        return Err(Error::config(
            "initialization grid geometry differs from the residual grid",
        ));
    }
    let base = init_layout.encode(x, init_table, None);
    let res = layout.encode(x, table, mask);
    Ok(base.iter().zip(&res).map(|(a, b)| a + b).collect())
}
