//! Property-based invariants of the building blocks.

use homlab_core::fft;
use homlab_core::fields::{build_preset, Preset};
use homlab_core::grid::GridFunction;
use homlab_core::harness::fit_rate;
use homlab_core::smoothing::{smooth_seps, smooth_steklov};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn preset_fields_are_periodic(
        x in 0.0f64..1.0,
        y in 0.0f64..1.0,
        sx in -2i32..3,
        sy in -2i32..3,
    ) {
        let cs = build_preset(Preset::Smooth2d, &[2.0, 1.0], 1, 2, 32, 1.0).unwrap();
        let comp = cs.a_comp(0, 0, 0, 0);
        let v0 = cs.a.sample(comp, &[x, y]);
        let v1 = cs.a.sample(comp, &[x + sx as f64, y + sy as f64]);
        prop_assert!((v0 - v1).abs() < 1e-11);
    }

    #[test]
    fn fft_round_trip(vals in proptest::collection::vec(-10.0f64..10.0, 64)) {
        let dims = [8usize, 8];
        let spec = fft::forward(&dims, &vals);
        let back = fft::inverse(&dims, &spec);
        for (a, b) in vals.iter().zip(back.iter()) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn smoothers_are_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, k in 1i32..4) {
        let n = 64;
        let eps = 0.125;
        let f = GridFunction::from_fn(2, n, 1, |_, x| (2.0 * std::f64::consts::PI * k as f64 * x[0]).sin());
        let g = GridFunction::from_fn(2, n, 1, |_, x| x[0] * x[1]);
        let mut combo = GridFunction::zeros(2, n, 1);
        for i in 0..combo.num_nodes() {
            combo.comp_mut(0)[i] = a * f.comp(0)[i] + b * g.comp(0)[i];
        }
        for smooth in [smooth_seps, smooth_steklov] {
            let sf = smooth(&f, eps).unwrap();
            let sg = smooth(&g, eps).unwrap();
            let sc = smooth(&combo, eps).unwrap();
            for i in 0..sc.num_nodes() {
                let lin = a * sf.comp(0)[i] + b * sg.comp(0)[i];
                prop_assert!((sc.comp(0)[i] - lin).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn fit_rate_recovers_exact_power_laws(slope in 0.1f64..3.0, c in 0.1f64..10.0) {
        let points: Vec<(f64, f64)> = [0.5f64, 0.25, 0.125, 0.0625]
            .iter()
            .map(|&e| (e, c * e.powf(slope)))
            .collect();
        let fit = fit_rate(&points);
        prop_assert!(!fit.degenerate);
        prop_assert!((fit.slope - slope).abs() < 1e-9);
        prop_assert!(fit.interval95 < 1e-8);
    }

    #[test]
    fn grid_nodal_round_trip(vals in proptest::collection::vec(-5.0f64..5.0, 25)) {
        let g = GridFunction::from_nodal(2, 4, vals.clone());
        prop_assert_eq!(g.m(), 1);
        for (i, &v) in vals.iter().enumerate() {
            prop_assert_eq!(g.comp(0)[i], v);
        }
    }
}
