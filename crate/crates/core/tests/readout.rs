use phonon_core::readout::*;
use phonon_core::rng::stream;
use proptest::prelude::*;

#[test]
fn printed_matrix_round_trips_exactly() {
    let v = VisibilityMatrix::reference_measured();
    let mut rng = stream(5, "readout-exact", 0);
    for _ in 0..50 {
        let p = random_probability(4, &mut rng);
        let p = [p[0], p[1], p[2], p[3]];
        let back = v.correct(&v.apply(&p), CorrectionMode::Raw).probabilities;
        for k in 0..4 {
            assert!((back[k] - p[k]).abs() < 1e-9);
        }
    }
}

#[test]
fn corrected_frequencies_within_multinomial_bounds() {
    let v = VisibilityMatrix::reference_measured();
    let n = 100_000u64;
    let mut inside = 0;
    for trial in 0..40 {
        let mut rng = stream(17, "readout-mc", trial);
        let p = random_probability(4, &mut rng);
        let p = [p[0], p[1], p[2], p[3]];
        let q = v.apply(&p);
        let f = frequencies(&sample_shots(&q, n, &mut rng).unwrap());
        let est = v.correct(&f, CorrectionMode::Raw).probabilities;
        // propagate the multinomial covariance of f through V⁻¹
        let rows = v.rows();
        let mut inv = nalgebra::Matrix4::from_fn(|i, j| rows[i][j]);
        assert!(inv.try_inverse_mut());
        let cov = nalgebra::Matrix4::from_fn(|i, j| {
            let d = if i == j { q[i] } else { 0.0 };
            (d - q[i] * q[j]) / n as f64
        });
        let c = inv * cov * inv.transpose();
        if (0..4).all(|k| (est[k] - p[k]).abs() <= 3.0 * c[(k, k)].sqrt() + 1e-12) {
            inside += 1;
        }
    }
    assert!(inside >= 36, "{inside}/40 trials inside 3σ");
}

#[test]
fn visibility_matrix_checks() {
    assert!(VisibilityMatrix::new([[0.5; 4]; 4]).is_err());
    let v = build_visibility(&QubitReadout::reference()).unwrap();
    assert!(v.condition_number() < 2.0);
    let three = build_three_level_visibility(&QubitReadout::reference()).unwrap();
    for c in 0..9 {
        assert!((three.column(c).sum() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn sampling_is_reproducible() {
    let p = [0.1, 0.2, 0.3, 0.4];
    let a = sample_shots(&p, 1000, &mut stream(1, "shots", 0)).unwrap();
    let b = sample_shots(&p, 1000, &mut stream(1, "shots", 0)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.iter().sum::<u64>(), 1000);
    assert!(sample_shots(&p, 0, &mut stream(1, "shots", 0)).is_err());
}

proptest! {
    #[test]
    fn simplex_projection_is_a_distribution(v in proptest::collection::vec(-2.0f64..2.0, 1..9)) {
        let p = project_simplex(&v);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|x| *x >= 0.0));
    }

    #[test]
    fn counts_sum_to_shots(seed in 0u64..500, n in 1u64..5000) {
        let mut rng = stream(seed, "prop-counts", 0);
        let p = random_probability(6, &mut rng);
        let c = sample_counts(&p, n, &mut rng).unwrap();
        prop_assert_eq!(c.iter().sum::<u64>(), n);
    }
}
