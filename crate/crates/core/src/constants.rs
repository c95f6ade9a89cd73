//! Physical constants (CODATA 2018 exact or recommended values).

/// Reduced Planck constant (J s).
pub const HBAR: f64 = 1.054_571_817e-34;

/// Vacuum permittivity (F/m).
pub const EPSILON_0: f64 = 8.854_187_812_8e-12;

/// Speed of light in vacuum (m/s).
pub const C_LIGHT: f64 = 299_792_458.0;

/// Angular frequency (rad/s) for a vacuum wavelength in nm.
pub fn omega_from_nm(lambda_nm: f64) -> f64 {
    2.0 * std::f64::consts::PI * C_LIGHT / (lambda_nm * 1e-9)
}

/// Vacuum wavelength (nm) for an angular frequency in rad/s.
pub fn nm_from_omega(omega: f64) -> f64 {
    2.0 * std::f64::consts::PI * C_LIGHT / omega * 1e9
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wavelength_round_trip() {
        let w = omega_from_nm(1545.265);
        assert!((nm_from_omega(w) - 1545.265).abs() < 1e-9);
        assert!((w - 1.218_982_871_746e15).abs() / w < 1e-9);
    }
}
