use fdmr_core::constants::omega_from_nm;
use fdmr_core::sfwm::{
    channel_rates_numeric, pair_rate_closed_form, pair_rate_numeric, parametric_gain, single_rates, Mode, ModeParams,
    PumpDrive, QuadratureOptions,
};
use proptest::prelude::*;

fn triplet(q: f64, ext_s: f64, ext_i: f64, q_ratio: f64, mismatch: f64) -> ModeParams {
    let wp = omega_from_nm(1545.265);
    let off = 2.0 * std::f64::consts::PI * 2.2e11;
    let kp = wp / q;
    let ks = kp;
    let ki = kp * q_ratio;
    ModeParams {
        pump: Mode { omega: wp, kappa_ext: 0.5 * kp, kappa_int: 0.5 * kp },
        signal: Mode { omega: wp + off, kappa_ext: ext_s * ks, kappa_int: (1.0 - ext_s) * ks },
        idler: Mode { omega: wp - off - mismatch * ki, kappa_ext: ext_i * ki, kappa_int: (1.0 - ext_i) * ki },
    }
}

/// Power giving `G^2 = r kappa_s kappa_i`.
fn power_for(m: &ModeParams, g_nl: f64, r: f64) -> f64 {
    let unit = PumpDrive { power_w: 1.0, omega_laser: m.pump.omega };
    let g1 = parametric_gain(m, &unit, g_nl);
    (r * m.signal.kappa() * m.idler.kappa()).sqrt() / g1
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn numeric_matches_closed_form(
        q in 1e4f64..1e5, ext_s in 0.1f64..0.9, ext_i in 0.1f64..0.9, q_ratio in 0.5f64..2.0,
        mismatch in -1.0f64..1.0, r in 1e-6f64..1e-4,
    ) {
        let m = triplet(q, ext_s, ext_i, q_ratio, mismatch);
        let g_nl = 1000.0;
        let d = PumpDrive { power_w: power_for(&m, g_nl, r), omega_laser: m.pump.omega };
        let opts = QuadratureOptions::default();
        let num = channel_rates_numeric(&m, &d, g_nl, &opts).unwrap();
        let closed = pair_rate_closed_form(&m, &d, g_nl).unwrap();
        prop_assert!((num.pairs / closed - 1.0).abs() < 0.01, "{} vs {}", num.pairs, closed);
        let (ns, ni) = single_rates(&m, &d, g_nl).unwrap();
        prop_assert!((num.signal / ns - 1.0).abs() < 0.01);
        prop_assert!((num.idler / ni - 1.0).abs() < 0.01);
    }

    #[test]
    fn pair_rate_is_quadratic_in_power(q in 1e4f64..1e5, r in 1e-6f64..1e-4, scale in 0.1f64..0.9) {
        let m = triplet(q, 0.5, 0.5, 1.0, 0.0);
        let g_nl = 1000.0;
        let p = power_for(&m, g_nl, r);
        let at = |p: f64| pair_rate_numeric(&m, &PumpDrive { power_w: p, omega_laser: m.pump.omega }, g_nl, &QuadratureOptions::default()).unwrap();
        let slope = (at(p).ln() - at(p * scale).ln()) / (1.0 / scale).ln();
        prop_assert!((slope - 2.0).abs() < 0.01, "slope {slope}");
    }

    #[test]
    fn pair_rate_scales_as_inverse_cube_of_linewidth(q in 1e4f64..1e5, factor in 1.5f64..4.0) {
        let g_nl = 1000.0;
        let a = triplet(q, 0.5, 0.5, 1.0, 0.0);
        let b = triplet(q * factor, 0.5, 0.5, 1.0, 0.0);
        let p = power_for(&a, g_nl, 1e-6);
        let rate = |m: &ModeParams| pair_rate_closed_form(m, &PumpDrive { power_w: p, omega_laser: m.pump.omega }, g_nl).unwrap();
        prop_assert!((rate(&b) / rate(&a) / factor.powi(3) - 1.0).abs() < 1e-9);
    }
}

#[test]
fn vanishing_intrinsic_loss_removes_singles() {
    let g_nl = 1000.0;
    let mut prev = f64::INFINITY;
    for loss in [0.1, 0.01, 0.001, 0.0] {
        let mut m = triplet(4e4, 1.0 - loss, 1.0 - loss, 1.0, 0.0);
        m.pump.kappa_ext = m.pump.kappa();
        m.pump.kappa_int = 0.0;
        let d = PumpDrive { power_w: power_for(&m, g_nl, 1e-6), omega_laser: m.pump.omega };
        let (ns, _) = single_rates(&m, &d, g_nl).unwrap();
        let nc = pair_rate_closed_form(&m, &d, g_nl).unwrap();
        let ratio = ns / nc;
        assert!(ratio < prev);
        prev = ratio;
        if loss == 0.0 {
            assert_eq!(ns, 0.0);
        }
    }
}
