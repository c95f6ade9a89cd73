//! Discretized Berry-flux Chern numbers (link-variable plaquette method).

use super::FloquetSpectrum;
use crate::error::{Error, Result};
use crate::linalg::{phase_from, CVector, C64, TWO_PI};

/// Degeneracy tolerance (rad) below which band labelling is refused.
pub const DEGENERACY_TOL: f64 = 1e-6;

/// Largest admissible single-plaquette Berry flux.
pub const MAX_PLAQUETTE_FLUX: f64 = 0.5 * std::f64::consts::PI;

fn link(a: &CVector, b: &CVector) -> Result<C64> {
    let z = a.dotc(b);
    let m = z.norm();
    if m < 1e-12 {
        return Err(Error::GridTooCoarse("vanishing overlap between neighbouring states".into()));
    }
    Ok(z / m)
}

/// Chern number of the states `states[ix * ny + iy]` on an `nx x ny`
/// periodic grid.
pub fn fhs_chern(nx: usize, ny: usize, states: &[CVector]) -> Result<i64> {
    if states.len() != nx * ny || nx < 2 || ny < 2 {
        return Err(Error::DimensionMismatch(format!(
            "{} states for a {nx}x{ny} grid",
            states.len()
        )));
    }
    let at = |ix: usize, iy: usize| &states[(ix % nx) * ny + (iy % ny)];
    let mut total = 0.0;
    let mut worst = 0.0_f64;
    for ix in 0..nx {
        for iy in 0..ny {
            let u1 = link(at(ix, iy), at(ix + 1, iy))?;
            let u2 = link(at(ix + 1, iy), at(ix + 1, iy + 1))?;
            let u3 = link(at(ix, iy + 1), at(ix + 1, iy + 1))?;
            let u4 = link(at(ix, iy), at(ix, iy + 1))?;
            let f = (u1 * u2 * u3.conj() * u4.conj()).arg();
            worst = worst.max(f.abs());
            total += f;
        }
    }
    if worst > MAX_PLAQUETTE_FLUX {
        return Err(Error::GridTooCoarse(format!("plaquette flux {worst:.3} rad")));
    }
    let c = total / TWO_PI;
    let rounded = c.round();
    if (c - rounded).abs() > 1e-6 {
        return Err(Error::GridTooCoarse(format!("non-integer flux sum {c}")));
    }
    Ok(rounded as i64)
}

/// Chern number of band `band` of a bulk spectrum on a periodic grid.
///
/// A band that touches a neighbour is refused, except when every band is
/// mutually degenerate: the projector is then the identity and the Chern
/// number of the full space is zero.
pub fn chern_number(spectrum: &FloquetSpectrum, band: usize) -> Result<i64> {
    let (nx, ny) = spectrum.grid_shape;
    let nb = spectrum.band_count();
    if band >= nb {
        return Err(Error::InvalidParameter(format!("band {band} of {nb}")));
    }
    if spectrum.quasienergies.len() != nx * ny {
        return Err(Error::DimensionMismatch("spectrum is not on a full 2D grid".into()));
    }
    if nb > 1 {
        // Minimum separation between cyclically adjacent bands.
        let mut touch = vec![false; nb];
        for q in &spectrum.quasienergies {
            for b in 0..nb {
                let next = (b + 1) % nb;
                let d = phase_from(q[next], q[b]);
                let d = d.min(TWO_PI - d);
                if d < DEGENERACY_TOL {
                    touch[b] = true;
                }
            }
        }
        if touch.iter().all(|&t| t) {
            return Ok(0);
        }
        let prev = (band + nb - 1) % nb;
        if touch[band] || touch[prev] {
            return Err(Error::BandTouching(format!(
                "band {band} comes within {DEGENERACY_TOL:e} rad of a neighbour"
            )));
        }
    }
    let states: Vec<CVector> =
        spectrum.eigenvectors.iter().map(|v| v.column(band).into_owned()).collect();
    fhs_chern(nx, ny, &states)
}
