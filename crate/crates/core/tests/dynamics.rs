use std::f64::consts::{PI, TAU};

use phonon_core::dynamics::{
    build_hamiltonian, chevron, collapse_operators, evolve, ControlFrame, DeviceParams, EvolveOptions, Frame,
};
use phonon_core::hilbert::{build_space, embed, CMatrix, CVector, DensityMatrix, Operator, C64, QA, QB, RA};
use phonon_core::pulses::{Channel, Node, Payload, ProtocolConfig, PulseSchedule, Segment, Shape, Transition};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn seg(channel: Channel, t0: f64, duration: f64, payload: Payload) -> Segment {
    Segment {
        channel,
        t0,
        duration,
        payload,
    }
}

fn pi_pulse(channel: Channel, t0: f64) -> Segment {
    seg(
        channel,
        t0,
        0.0,
        Payload::QubitPulse {
            transition: Transition::Ge,
            angle: PI,
            phase: 0.0,
            shape: Shape::Instant,
        },
    )
}

fn lossless() -> EvolveOptions {
    EvolveOptions {
        dissipation: false,
        ..EvolveOptions::default()
    }
}

fn isolated_device() -> DeviceParams {
    let mut d = DeviceParams::reference();
    d.g_q = 0.0;
    d
}

#[test]
fn hamiltonian_qubit_coupling_block() {
    let d = DeviceParams::reference();
    let layout = build_space(3, 2).unwrap();
    let frame = ControlFrame::from_schedule(&d, &PulseSchedule::empty()).unwrap();
    let h = build_hamiltonian(&d, &frame, 0.0, &layout, Frame::Rotating).unwrap();
    let eg = layout.index(&[1, 0, 0, 0]);
    let ge = layout.index(&[0, 1, 0, 0]);
    assert!((h.matrix()[(eg, ge)].norm() - TAU * 8.6e6).abs() < 1e-3);
    // no qubit-resonator matrix elements with the couplers off
    let g1 = layout.index(&[0, 0, 1, 0]);
    assert_eq!(h.matrix()[(eg, g1)].norm(), 0.0);
}

#[test]
fn bare_spectrum_in_lab_frame() {
    let d = isolated_device();
    let layout = build_space(3, 2).unwrap();
    let frame = ControlFrame::from_schedule(&d, &PulseSchedule::empty()).unwrap();
    let h = build_hamiltonian(&d, &frame, 0.0, &layout, Frame::Lab).unwrap();
    let ev = h.hermitian_eigenvalues();
    let target = TAU * 3.245e9;
    assert!(ev.iter().any(|&e| (e - target).abs() < 1.0), "no eigenvalue at 3.245 GHz");
    let gf = TAU * (2.0 * 3.245e9 - 207e6);
    assert!(ev.iter().any(|&e| (e - gf).abs() < 1.0));
}

#[test]
fn hamiltonian_hermitian_for_random_frames() {
    let d = DeviceParams::reference();
    let layout = build_space(3, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let mut segs = vec![
            seg(Channel::QaZ, 0.0, 2e-9, Payload::FrequencyRamp { to_hz: rng.random_range(2.9e9..3.6e9) }),
            seg(Channel::QbZ, 1e-9, 3e-9, Payload::FrequencyRamp { to_hz: rng.random_range(2.9e9..3.6e9) }),
            seg(Channel::Ga, 0.0, 20e-9, Payload::Coupler { amplitude: rng.random_range(0.0..1.0), rise: 1e-9 }),
            seg(Channel::Gb, 3e-9, 15e-9, Payload::Coupler { amplitude: rng.random_range(0.0..1.0), rise: 2e-9 }),
        ];
        segs.push(seg(
            Channel::QaXy,
            0.0,
            20e-9,
            Payload::QubitPulse {
                transition: Transition::Ef,
                angle: rng.random_range(0.0..PI),
                phase: rng.random_range(0.0..TAU),
                shape: Shape::Gaussian { sigma: 5e-9 },
            },
        ));
        segs.push(seg(
            Channel::Db,
            0.0,
            20e-9,
            Payload::Displacement {
                alpha: C64::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)),
                shape: Shape::Gaussian { sigma: 4e-9 },
            },
        ));
        let s = PulseSchedule::new(segs).unwrap();
        let frame = ControlFrame::from_schedule(&d, &s).unwrap();
        let t = rng.random_range(0.0..20e-9);
        let h = build_hamiltonian(&d, &frame, t, &layout, Frame::Rotating).unwrap();
        assert!(h.hermiticity_error() < 1e-9);
    }
}

#[test]
fn collapse_rates() {
    let d = DeviceParams::reference();
    let layout = build_space(3, 2).unwrap();
    let find = |ops: &[(Operator, f64)], target: &Operator| {
        ops.iter()
            .find(|(op, _)| op == target)
            .map(|(_, r)| *r)
            .expect("operator present")
    };
    let ops = collapse_operators(&d, &layout, [false, true]).unwrap();
    let s_ge_a = embed(&Operator::s_ge(3), QA, &layout).unwrap();
    let s_ge_b = embed(&Operator::s_ge(3), QB, &layout).unwrap();
    let a_a = embed(&Operator::annihilation(2), RA, &layout).unwrap();
    assert!((find(&ops, &s_ge_a) - 1.0 / 40.8e-6).abs() < 1e-6);
    assert!((find(&ops, &s_ge_b) - 1.0 / 350e-9).abs() < 1e-3);
    assert!((find(&ops, &a_a) - 1.0 / 380e-9).abs() < 1e-3);
    let n_a = embed(&Operator::number(2), RA, &layout).unwrap().scale(C64::new(2f64.sqrt(), 0.0));
    let deph = find(&ops, &n_a);
    assert!((deph - (1.0 / 709e-9 - 0.5 / 380e-9)).abs() < 1e-3);
    assert!(deph >= 0.0);
    assert!(ops.iter().all(|(_, r)| *r >= 0.0));
}

#[test]
fn negative_dephasing_is_config_error() {
    let mut d = DeviceParams::reference();
    // T2R = 2 T1 is the boundary with zero pure dephasing
    d.a.qubit_t2r = 2.0 * d.a.qubit_t1;
    let layout = build_space(3, 2).unwrap();
    assert!(collapse_operators(&d, &layout, [false; 2]).is_ok());
    d.a.qubit_t2r = 2.0 * d.a.qubit_t1 * (1.0 + 1e-9);
    assert!(collapse_operators(&d, &layout, [false; 2]).is_err());
}

#[test]
fn free_evolution_is_exact() {
    let d = isolated_device();
    let layout = build_space(3, 3).unwrap();
    // diagonal state is stationary
    let mut m = CMatrix::zeros(81, 81);
    m[(layout.index(&[1, 0, 2, 0]), layout.index(&[1, 0, 2, 0]))] = C64::new(0.3, 0.0);
    m[(layout.index(&[0, 2, 0, 1]), layout.index(&[0, 2, 0, 1]))] = C64::new(0.7, 0.0);
    let rho = DensityMatrix::new(layout.clone(), m).unwrap();
    let schedule = PulseSchedule::new(vec![seg(Channel::Readout, 50e-9, 0.0, Payload::Measure)]).unwrap();
    let tr = evolve(&d, &rho, &schedule, &lossless()).unwrap();
    assert_eq!(tr.final_state.matrix(), rho.matrix());

    // superposition picks up the bare phase (ω_ge − ω_R) t
    let mut psi = CVector::zeros(81);
    psi[layout.index(&[0, 0, 0, 0])] = C64::new(1.0, 0.0);
    psi[layout.index(&[1, 0, 0, 0])] = C64::new(1.0, 0.0);
    let rho = DensityMatrix::pure(layout.clone(), &psi).unwrap();
    let t = 50e-9;
    let tr = evolve(&d, &rho, &schedule, &lossless()).unwrap();
    let c = tr.final_state.matrix()[(layout.index(&[1, 0, 0, 0]), 0)];
    let expect = C64::from_polar(0.5, -TAU * (3.245e9 - 3.027e9) * t);
    assert!((c - expect).norm() < 1e-9, "{c} vs {expect}");
}

#[test]
fn resonant_swap_at_quarter_period() {
    let d = isolated_device();
    let layout = build_space(3, 2).unwrap();
    let g = d.b.g_ge;
    let rise = 1e-9;
    let t_swap = 1.0 / (4.0 * g);
    assert!((t_swap - 35.2e-9).abs() < 0.05e-9);
    let schedule = PulseSchedule::new(vec![
        pi_pulse(Channel::QbXy, 0.0),
        seg(Channel::QbZ, 0.0, 2e-9, Payload::FrequencyRamp { to_hz: d.b.resonator }),
        seg(Channel::Gb, 2e-9, t_swap + rise, Payload::Coupler { amplitude: 1.0, rise }),
    ])
    .unwrap();
    let rho0 = DensityMatrix::basis(layout.clone(), &[0, 0, 0, 0]).unwrap();
    let tr = evolve(&d, &rho0, &schedule, &lossless()).unwrap();
    let p_g1 = tr.final_state.matrix()[(layout.index(&[0, 0, 0, 1]), layout.index(&[0, 0, 0, 1]))].re;
    assert!(p_g1 > 0.9999, "P(g1) = {p_g1}");
}

#[test]
fn qubit_decay_matches_exponential() {
    let d = isolated_device();
    let layout = build_space(3, 2).unwrap();
    let rho0 = DensityMatrix::basis(layout, &[0, 1, 0, 0]).unwrap();
    let times: Vec<f64> = (0..=5).map(|i| i as f64 * 0.4e-6).collect();
    let opts = EvolveOptions {
        sample_times: times.clone(),
        ..EvolveOptions::default()
    };
    let tr = evolve(&d, &rho0, &PulseSchedule::empty(), &opts).unwrap();
    for (i, &t) in times.iter().enumerate() {
        let p = tr.excited(i, Node::B);
        let expect = (-t / 19.3e-6).exp();
        assert!((p - expect).abs() / expect < 1e-4, "t={t}: {p} vs {expect}");
    }
}

#[test]
fn chevron_resonant_and_detuned() {
    let d = DeviceParams::reference();
    let cfg = ProtocolConfig::default();
    let times: Vec<f64> = (0..=300).map(|i| i as f64 * 0.5e-9).collect();
    let g = d.a.g_ge;
    let map = chevron(&d, &cfg, Node::A, &[0.0, 2.0 * g, 60e6], &times, &lossless()).unwrap();

    let first_min = |row: &[f64]| {
        let k = (1..row.len() - 1)
            .find(|&k| row[k] < row[k - 1] && row[k] <= row[k + 1])
            .unwrap();
        times[k]
    };
    let t0 = first_min(&map.excited[0]);
    assert!((t0 - 42e-9).abs() < 1.5e-9, "first minimum at {t0}");
    // period ratio via first minimum: half-period scales as 1/Ω
    let t1 = first_min(&map.excited[1]);
    let ratio = t0 / t1;
    assert!((ratio - 2f64.sqrt()).abs() / 2f64.sqrt() < 0.03, "ratio {ratio}");
    // far detuned: stays excited over a resonant period
    let period = 1.0 / (2.0 * g);
    let far = &map.excited[2];
    assert!(times.iter().zip(far).filter(|(t, _)| **t <= period).all(|(_, p)| *p > 0.95));
}

#[test]
fn frame_invariance() {
    let d = DeviceParams::reference();
    let cfg = ProtocolConfig::default();
    let schedule = phonon_core::pulses::bell_sequence(&d, &cfg).unwrap();
    let layout = build_space(3, 2).unwrap();
    let rho0 = DensityMatrix::basis(layout, &[0, 0, 0, 0]).unwrap();
    let times: Vec<f64> = (0..8).map(|i| i as f64 * 10e-9).collect();
    let rot = evolve(
        &d,
        &rho0,
        &schedule,
        &EvolveOptions {
            sample_times: times.clone(),
            ..EvolveOptions::default()
        },
    )
    .unwrap();
    let lab = evolve(
        &d,
        &rho0,
        &schedule,
        &EvolveOptions {
            sample_times: times,
            frame: Frame::Lab,
            ..EvolveOptions::default()
        },
    )
    .unwrap();
    for (a, b) in rot.qubit_populations.iter().zip(&lab.qubit_populations) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-4);
        }
    }
}

#[test]
fn lossless_purity_and_positivity() {
    let d = DeviceParams::reference();
    let layout = build_space(3, 2).unwrap();
    let schedule = PulseSchedule::new(vec![
        seg(
            Channel::QaXy,
            0.0,
            20e-9,
            Payload::QubitPulse {
                transition: Transition::Ge,
                angle: PI / 2.0,
                phase: 0.3,
                shape: Shape::Gaussian { sigma: 5e-9 },
            },
        ),
        seg(Channel::QaZ, 20e-9, 2e-9, Payload::FrequencyRamp { to_hz: d.a.resonator }),
        seg(Channel::Ga, 22e-9, 30e-9, Payload::Coupler { amplitude: 1.0, rise: 1e-9 }),
    ])
    .unwrap();
    let rho0 = DensityMatrix::basis(layout, &[0, 0, 0, 0]).unwrap();
    let tr = evolve(
        &d,
        &rho0,
        &schedule,
        &EvolveOptions {
            monitor: true,
            ..lossless()
        },
    )
    .unwrap();
    assert!((tr.final_state.purity() - 1.0).abs() < 1e-6);
    assert!(tr.diagnostics.max_trace_error < 1e-9);
    assert!(tr.diagnostics.max_hermiticity_error < 1e-9);
    assert!(tr.diagnostics.min_eigenvalue.unwrap() > -1e-6);
}

#[test]
fn energy_conserved_for_static_hamiltonian() {
    let d = isolated_device();
    let layout = build_space(3, 3).unwrap();
    let schedule = PulseSchedule::new(vec![
        seg(Channel::QaZ, 0.0, 2e-9, Payload::FrequencyRamp { to_hz: d.a.resonator + 3e6 }),
        seg(Channel::Ga, 2e-9, 100e-9, Payload::Coupler { amplitude: 0.7, rise: 1e-9 }),
    ])
    .unwrap();
    let mut psi = CVector::zeros(81);
    psi[layout.index(&[1, 0, 1, 0])] = C64::new(0.8, 0.0);
    psi[layout.index(&[2, 0, 0, 0])] = C64::new(0.0, 0.6);
    let rho0 = DensityMatrix::pure(layout.clone(), &psi).unwrap();
    let opts = EvolveOptions {
        checkpoint_times: vec![10e-9, 50e-9, 90e-9],
        ..lossless()
    };
    let tr = evolve(&d, &rho0, &schedule, &opts).unwrap();
    let frame = ControlFrame::from_schedule(&d, &schedule).unwrap();
    let h = build_hamiltonian(&d, &frame, 50e-9, &layout, Frame::Rotating).unwrap();
    let e: Vec<f64> = tr.checkpoints.iter().map(|(_, r)| r.expectation(&h).unwrap().re).collect();
    for x in &e[1..] {
        assert!((x - e[0]).abs() <= 1e-6 * e[0].abs(), "{e:?}");
    }
}

#[test]
fn step_underflow_and_bad_layout() {
    let d = DeviceParams::reference();
    let layout = build_space(3, 2).unwrap();
    let rho0 = DensityMatrix::basis(layout, &[0, 0, 0, 0]).unwrap();
    let opts = EvolveOptions {
        dt_max: 0.0,
        ..EvolveOptions::default()
    };
    assert!(evolve(&d, &rho0, &PulseSchedule::empty(), &opts).is_err());
    let small = phonon_core::hilbert::HilbertLayout::new(vec![2, 2, 2, 2]).unwrap();
    let rho = DensityMatrix::basis(small, &[0, 0, 0, 0]).unwrap();
    assert!(evolve(&d, &rho, &PulseSchedule::empty(), &EvolveOptions::default()).is_err());
}

#[test]
fn truncation_leak_warning() {
    let d = DeviceParams::reference();
    let layout = build_space(3, 3).unwrap();
    let rho0 = DensityMatrix::basis(layout, &[0, 0, 0, 0]).unwrap();
    let schedule = PulseSchedule::new(vec![seg(
        Channel::Da,
        1e-9,
        0.0,
        Payload::Displacement {
            alpha: C64::new(1.0, 0.0),
            shape: Shape::Instant,
        },
    )])
    .unwrap();
    let tr = evolve(&d, &rho0, &schedule, &lossless()).unwrap();
    assert_eq!(tr.warnings.len(), 1);
}
