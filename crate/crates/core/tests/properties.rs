use std::f64::consts::TAU;

use num_complex::Complex64;
use proptest::prelude::*;

use tfqkd::analysis::{
    extract_path_from_power, fit_double_exponential, fit_exponential, fit_polynomial, rmse_to_frequency, Point,
};
use tfqkd::drift::{apparent_path_from_frequency, output_power, DriftTrace};
use tfqkd::optics::{build_cascade, cw_port_powers, measure_cascade, InterferometerSpec, SPEED_OF_LIGHT};
use tfqkd::states::{dft_oracle, inner_product, make_frequency_state, make_time_state, PhotonicState};
use tfqkd::waveform::{
    delay_interfere_waveform, detect, synthesize_frame, DetectorModel, PulseTrainSpec,
};

const LAMBDA: f64 = 1550e-9;

fn dimension() -> impl Strategy<Value = usize> {
    prop::sample::select(vec![2usize, 4, 8, 16])
}

fn unit_state(d: usize) -> impl Strategy<Value = PhotonicState> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), d)
        .prop_filter("non-zero state", |v| v.iter().any(|(a, b)| a.abs() + b.abs() > 1e-3))
        .prop_map(move |v| {
            let mut amps: Vec<Complex64> = v.into_iter().map(|(a, b)| Complex64::new(a, b)).collect();
            let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
            amps.iter_mut().for_each(|a| *a /= norm);
            PhotonicState::from_amplitudes(d, amps).unwrap()
        })
}

fn state_of_some_dimension() -> impl Strategy<Value = PhotonicState> {
    dimension().prop_flat_map(unit_state)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn time_and_frequency_bases_unbiased((d, m, n) in dimension().prop_flat_map(|d| (Just(d), 0..d, 0..d))) {
        let t = make_time_state(d, m).unwrap();
        let f = make_frequency_state(d, n).unwrap();
        let overlap = inner_product(&t, &f).unwrap().norm_sqr();
        prop_assert!((overlap - 1.0 / d as f64).abs() < 1e-12);
    }

    #[test]
    fn frequency_basis_orthonormal((d, m, n) in dimension().prop_flat_map(|d| (Just(d), 0..d, 0..d))) {
        let a = make_frequency_state(d, m).unwrap();
        let b = make_frequency_state(d, n).unwrap();
        let ip = inner_product(&a, &b).unwrap();
        let expected = if m == n { 1.0 } else { 0.0 };
        prop_assert!((ip - Complex64::new(expected, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn oracle_maps_frequency_state_to_unit_vector((d, n) in dimension().prop_flat_map(|d| (Just(d), 0..d))) {
        let out = dft_oracle(&make_frequency_state(d, n).unwrap()).unwrap();
        for (k, v) in out.iter().enumerate() {
            let expected = if k == n { 1.0 } else { 0.0 };
            prop_assert!((v - Complex64::new(expected, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn cascade_conserves_energy(state in state_of_some_dimension()) {
        let cascade = build_cascade(state.dimension(), 1.0).unwrap();
        let out = measure_cascade(&state, &cascade).unwrap();
        prop_assert!((out.total_probability() - state.norm_sqr()).abs() < 1e-12);
    }

    #[test]
    fn central_bin_matches_library_oracle(state in prop::sample::select(vec![2usize, 4, 8]).prop_flat_map(unit_state)) {
        let d = state.dimension();
        let cascade = build_cascade(d, 1.0).unwrap();
        let out = measure_cascade(&state, &cascade).unwrap();
        let oracle = dft_oracle(&state).unwrap();
        for (n, p) in out.central_probabilities().iter().enumerate() {
            prop_assert!((p - oracle[n].norm_sqr() / d as f64).abs() < 1e-10);
        }
    }

    #[test]
    fn outermost_bins_never_interfere(
        (a, b) in dimension().prop_flat_map(|d| (unit_state(d), unit_state(d)))
    ) {
        let d = a.dimension();
        // same first and last amplitudes, arbitrary interior
        let mut mixed = b.amplitudes().to_vec();
        mixed[0] = a.amplitudes()[0];
        mixed[d - 1] = a.amplitudes()[d - 1];
        let mixed = PhotonicState::from_amplitudes(d, mixed).unwrap();
        let cascade = build_cascade(d, 1.0).unwrap();
        let pa = measure_cascade(&a, &cascade).unwrap();
        let pm = measure_cascade(&mixed, &cascade).unwrap();
        let d2 = (d * d) as f64;
        for port in 0..d {
            let first = pa.probabilities[port][0];
            let last = pa.probabilities[port][2 * d - 2];
            prop_assert!((first - a.amplitudes()[0].norm_sqr() / d2).abs() < 1e-12);
            prop_assert!((last - a.amplitudes()[d - 1].norm_sqr() / d2).abs() < 1e-12);
            prop_assert!((first - pm.probabilities[port][0]).abs() < 1e-12);
            prop_assert!((last - pm.probabilities[port][2 * d - 2]).abs() < 1e-12);
        }
    }

    #[test]
    fn path_shift_phase_reproduces_port_powers(dl_nm in -800.0f64..800.0, phi in 0.0f64..TAU) {
        let k_dl = TAU * dl_nm * 1e-9 / LAMBDA;
        let spec = InterferometerSpec::new(1, phi + k_dl, 0.12).unwrap();
        let (p, m) = cw_port_powers(&spec, 200e-6);
        let (ep, em) = output_power(200e-6, 1.0, LAMBDA, dl_nm * 1e-9, phi).unwrap();
        prop_assert!((p - ep).abs() < 1e-15 && (m - em).abs() < 1e-15);
    }

    #[test]
    fn waveform_interferometer_conserves_energy(
        weights in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 4),
        delay_samples in 1usize..400,
        phase in 0.0f64..TAU,
    ) {
        let weights: Vec<Complex64> = weights.into_iter().map(|(a, b)| Complex64::new(a, b)).collect();
        prop_assume!(weights.iter().any(|w| w.norm() > 1e-3));
        let wf = synthesize_frame(&PulseTrainSpec::new(100e-12, 400e-12, weights), 5e-12).unwrap();
        let (p, m) = delay_interfere_waveform(&wf, delay_samples as f64 * 5e-12, phase).unwrap();
        let total = p.energy() + m.energy();
        prop_assert!((total - wf.energy()).abs() <= 1e-9 * wf.energy());
    }

    #[test]
    fn detector_preserves_area(
        weights in prop::collection::vec(0.0f64..1.0, 4),
        bandwidth_ghz in 2.0f64..40.0,
    ) {
        prop_assume!(weights.iter().any(|w| *w > 1e-3));
        let weights: Vec<Complex64> = weights.into_iter().map(|w| Complex64::new(w, 0.0)).collect();
        let wf = synthesize_frame(&PulseTrainSpec::new(100e-12, 400e-12, weights), 5e-12).unwrap();
        let raw = detect(&wf, &DetectorModel::ideal()).area();
        let filtered = detect(&wf, &DetectorModel::bessel4(bandwidth_ghz * 1e9).unwrap()).area();
        prop_assert!((filtered - raw).abs() <= 1e-3 * raw);
    }

    #[test]
    fn frequency_and_path_conversions_invert(rmse_nm in 1e-3f64..100.0, path in 0.01f64..1.0) {
        let f0 = SPEED_OF_LIGHT / LAMBDA;
        let df = rmse_to_frequency(rmse_nm * 1e-9, path, f0).unwrap();
        let back = apparent_path_from_frequency(df, path, f0);
        prop_assert!(((back - rmse_nm * 1e-9) / (rmse_nm * 1e-9)).abs() < 1e-12);
    }

    #[test]
    fn power_extraction_inverts_power_model(
        dl in prop::collection::vec(-380.0f64..380.0, 1..50),
        alpha in 0.05f64..1.0,
        p0_uw in 1.0f64..1000.0,
    ) {
        let p0 = p0_uw * 1e-6;
        let mut trace = DriftTrace {
            time_s: (0..dl.len()).map(|k| k as f64).collect(),
            temperature_c: vec![22.0; dl.len()],
            delta_l_nm: vec![0.0; dl.len()],
            p_plus_w: Vec::new(),
            p_minus_w: Vec::new(),
            p_ref_w: vec![p0; dl.len()],
        };
        for &x in &dl {
            let (p, m) = output_power(p0, alpha, LAMBDA, x * 1e-9, std::f64::consts::FRAC_PI_2).unwrap();
            trace.p_plus_w.push(p);
            trace.p_minus_w.push(m);
        }
        let back = extract_path_from_power(&trace, alpha, LAMBDA).unwrap();
        for (b, x) in back.iter().zip(&dl) {
            prop_assert!((b - x).abs() < 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn noiseless_exponential_recovered(
        y_inf in 25.0f64..60.0,
        y0 in 15.0f64..25.0,
        rate in 0.3f64..3.0,
    ) {
        let series: Vec<(f64, f64)> = (0..=360)
            .map(|k| {
                let t = k as f64 * 60.0;
                (t, y_inf + (y0 - y_inf) * (-rate * t / 3600.0).exp())
            })
            .collect();
        let fit = fit_exponential(&series).unwrap();
        for (p, t) in fit.params.iter().zip([y_inf, y0, rate]) {
            prop_assert!(((p - t) / t).abs() < 1e-6, "{:?}", fit.params);
        }
    }

    #[test]
    fn noiseless_double_exponential_recovered(
        l_inf in 50.0f64..400.0,
        fast_share in 0.5f64..0.9,
        r1 in 1.0f64..2.0,
        ratio in 4.0f64..20.0,
    ) {
        let (a1, a2, r2) = (fast_share * l_inf, (1.0 - fast_share) * l_inf, r1 / ratio);
        let series: Vec<(f64, f64)> = (0..=720)
            .map(|k| {
                let h = k as f64 * 30.0 / 3600.0;
                (k as f64 * 30.0, l_inf - a1 * (-r1 * h).exp() - a2 * (-r2 * h).exp())
            })
            .collect();
        let fit = fit_double_exponential(&series).unwrap();
        for (p, t) in fit.params.iter().zip([l_inf, a1, r1, a2, r2]) {
            prop_assert!(((p - t) / t).abs() < 1e-6, "{:?}", fit.params);
        }
    }

    #[test]
    fn noiseless_polynomials_recovered(
        c0 in -100.0f64..100.0,
        c1 in -50.0f64..50.0,
        c2 in prop_oneof![Just(0.0), -3.0f64..-0.5, 0.5f64..3.0],
    ) {
        let points: Vec<Point> = (0..8)
            .map(|k| {
                let x = 20.0 + 4.0 * k as f64;
                Point::new(x, c0 + c1 * x + c2 * x * x)
            })
            .collect();
        let degree = if c2 == 0.0 { 1 } else { 2 };
        let fit = fit_polynomial(&points, degree).unwrap();
        let truth = [c0, c1, c2];
        for (p, t) in fit.coefficients().iter().zip(truth) {
            prop_assert!((p - t).abs() <= 1e-6 * t.abs().max(1.0), "{:?}", fit.coefficients());
        }
    }
}
