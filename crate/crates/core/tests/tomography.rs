use phonon_core::dynamics::DeviceParams;
use phonon_core::fit::fit_sinusoid;
use phonon_core::hilbert::*;
use phonon_core::pulses::ProtocolConfig;
use phonon_core::readout::VisibilityMatrix;
use phonon_core::rng::stream;
use phonon_core::tomography::*;
use proptest::prelude::*;

fn bell(levels: usize) -> DensityMatrix {
    let psi = noon_state(1, levels, 0.0).unwrap();
    DensityMatrix::pure(HilbertLayout::new(vec![levels, levels]).unwrap(), &psi).unwrap()
}

fn options(fit_levels: usize, shots: Option<u64>) -> SynthesisOptions {
    let mut o = SynthesisOptions::new(&DeviceParams::reference(), &ProtocolConfig::default(), fit_levels);
    o.shots = shots;
    o
}

#[test]
fn ideal_bell_traces_never_excite_both_qubits() {
    let o = options(5, None);
    let pops = JointPopulations::from_density(&bell(3), 3).unwrap();
    let traces = model_traces(&pops, &o.model, &o.taus);
    let worst = traces.probabilities.iter().map(|p| p[3]).fold(0.0, f64::max);
    assert!(worst < 0.01, "P_ee reached {worst}");
    for p in &traces.probabilities {
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn two_phonon_oscillation_is_root_two_faster() {
    let model = TraceModel {
        coupling: [5.58e6, 6.87e6],
        decay: [1.0, 1.0],
    };
    let taus: Vec<f64> = (0..300).map(|i| i as f64 * 1e-9).collect();
    let fit = |n: usize| {
        let y: Vec<f64> = taus.iter().map(|&t| model.excitation(0, n, t)).collect();
        fit_sinusoid(&taus, &y, 2e6, 40e6).unwrap().frequency
    };
    let ratio = fit(2) / fit(1);
    assert!((ratio / 2f64.sqrt() - 1.0).abs() < 0.03, "ratio {ratio}");
}

#[test]
fn noiseless_bell_round_trip() {
    let rho = bell(6);
    let ds = synthesize_dataset(&rho, &make_grid(GridStyle::Bell), &options(5, None), 3).unwrap();
    let rec = reconstruct(&ds, 6, Some(4)).unwrap();
    let f = fidelity(&rec.rho, &noon_state(1, 6, 0.0).unwrap()).unwrap();
    assert!(f > 0.999, "F = {f}");
    assert_eq!(rec.rho.dim(), 36);
    rec.rho.validate().unwrap();
}

#[test]
fn random_states_round_trip() {
    let grid = make_grid(GridStyle::Noon);
    let o = options(6, None);
    for k in 0..3 {
        let mut rng = stream(11, "roundtrip", k);
        let truth = random_state(3, 1 + k as usize, &mut rng).unwrap();
        let ds = synthesize_dataset(&truth, &grid, &o, 0).unwrap();
        let rec = reconstruct(&ds, 6, Some(2)).unwrap();
        let f = state_fidelity(&resize_modes(&rec.rho, 3).unwrap(), &truth).unwrap();
        assert!(f > 0.999, "state {k}: F = {f}");
    }
}

#[test]
fn sampled_dataset_is_seed_deterministic() {
    let rho = bell(4);
    let grid = make_grid(GridStyle::Bell);
    let mut o = options(5, Some(500));
    o.readout = Some(VisibilityMatrix::reference_measured());
    let a = synthesize_dataset(&rho, &grid, &o, 9).unwrap();
    let b = synthesize_dataset(&rho, &grid, &o, 9).unwrap();
    let c = synthesize_dataset(&rho, &grid, &o, 10).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    assert_ne!(a.to_json().unwrap(), c.to_json().unwrap());
    let back = TomographyDataset::from_json(&a.to_json().unwrap()).unwrap();
    assert_eq!(back, a);
}

#[test]
fn bootstrap_spread_and_determinism() {
    let rho = bell(6);
    let ds = synthesize_dataset(&rho, &make_grid(GridStyle::Bell), &options(5, Some(3000)), 4).unwrap();
    let opts = ReconstructOptions::new(6, Some(4));
    let target = noon_state(1, 6, 0.0).unwrap();
    let a = bootstrap(&ds, &opts, &target, 4, 2).unwrap();
    let b = bootstrap(&ds, &opts, &target, 4, 2).unwrap();
    assert_eq!(a, b);
    assert!(a.std > 0.0 && a.std < 0.05, "{a:?}");
    assert!(a.mean > 0.9);
}

#[test]
fn magnitude_csv_layout() {
    let csv = magnitude_csv(&bell(6));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 37);
    assert!(lines[0].starts_with("ket,00,01,02"));
    assert!(lines[0].ends_with(",55"));
    assert_eq!(lines[36].split(',').count(), 37);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn displacement_preserves_state_validity(
        seed in 0u64..1000,
        ra in 0.0f64..0.6, pa in 0.0f64..6.3,
        rb in 0.0f64..0.6, pb in 0.0f64..6.3,
    ) {
        let mut rng = stream(seed, "prop", 0);
        let rho = resize_modes(&random_state(3, 2, &mut rng).unwrap(), 10).unwrap();
        let d = displaced_density(&rho, C64::from_polar(ra, pa), C64::from_polar(rb, pb)).unwrap();
        prop_assert!((d.trace() - 1.0).abs() < 1e-3);
        prop_assert!(d.min_eigenvalue() > -1e-9);
        prop_assert!(d.hermiticity_error() < 1e-12);
    }

    #[test]
    fn population_fit_inverts_forward_model(seed in 0u64..1000) {
        let mut rng = stream(seed, "prop-fit", 0);
        let rho = random_state(3, 3, &mut rng).unwrap();
        let pops = JointPopulations::from_density(&rho, 3).unwrap();
        let o = options(3, None);
        let traces = model_traces(&pops, &o.model, &o.taus);
        let fit = fit_populations(&traces, &o.model, 3).unwrap();
        for (a, b) in fit.values().iter().zip(pops.values()) {
            prop_assert!((a - b).abs() < 1e-8);
        }
    }
}
