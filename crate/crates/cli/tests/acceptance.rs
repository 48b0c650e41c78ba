//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Exits non-zero on a failed criterion only with `PHONON_ACCEPTANCE_STRICT=1`.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use phonon_cli::{run_with_config, Config, RunReport, Scenario};
use phonon_core::dynamics::{evolve, DeviceParams, EvolveOptions};
use phonon_core::fit::fit_sinusoid;
use phonon_core::hilbert::{build_space, displacement_operator, CMatrix, DensityMatrix, C64};
use phonon_core::pulses::{noon_sequence, Node, Payload, ProtocolConfig, PulseSchedule, Segment};
use phonon_core::readout::{frequencies, random_probability, sample_shots, CorrectionMode, VisibilityMatrix};
use phonon_core::rng::stream;
use phonon_core::tomography::{
    make_grid, model_traces, random_state, reconstruct, resize_modes, state_fidelity, synthesize_dataset, GridStyle,
    JointPopulations, SynthesisOptions,
};

struct Suite {
    failed: usize,
    last: Instant,
}

impl Suite {
    fn line(&mut self, id: usize, name: &str, pass: bool, detail: String) {
        if !pass {
            self.failed += 1;
        }
        println!(
            "{} [{id}] {name}: {detail} ({:.0} s)",
            if pass { "PASS" } else { "FAIL" },
            self.last.elapsed().as_secs_f64()
        );
        self.last = Instant::now();
    }

    fn checks(&mut self, id: usize, name: &str, report: Result<&RunReport, String>, wanted: &[&str]) {
        match report {
            Ok(r) => {
                let mut parts = Vec::new();
                let mut pass = true;
                for w in wanted {
                    match r.check(w) {
                        Some(c) => {
                            pass &= c.pass;
                            parts.push(format!("{} = {:.4} in [{}, {}]", c.name, c.value, c.lo, c.hi));
                        }
                        None => {
                            pass = false;
                            parts.push(format!("{w} missing"));
                        }
                    }
                }
                self.line(id, name, pass, parts.join(", "));
            }
            Err(e) => self.line(id, name, false, format!("error: {e}")),
        }
    }
}

fn run(scenario: Scenario, config: &Config, out: &Path) -> Result<RunReport, String> {
    run_with_config(scenario, config, 1, 3000, out, false).map_err(|e| e.to_string())
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .map(|rd| {
            rd.filter_map(|e| e.ok())
                .map(|e| (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap_or_default()))
                .collect()
        })
        .unwrap_or_default()
}

fn round_trip(suite: &mut Suite) {
    let grid = make_grid(GridStyle::Noon);
    let mut options = SynthesisOptions::new(&DeviceParams::reference(), &ProtocolConfig::default(), 6);
    options.shots = None;
    let mut worst: f64 = 1.0;
    let mut error = None;
    for k in 0..20u64 {
        let mut rng = stream(2024, "acceptance-roundtrip", k);
        let result = random_state(3, 1 + (k % 4) as usize, &mut rng).and_then(|truth| {
            let ds = synthesize_dataset(&truth, &grid, &options, k)?;
            let rec = reconstruct(&ds, 6, Some(2))?;
            state_fidelity(&resize_modes(&rec.rho, 3)?, &truth)
        });
        match result {
            Ok(f) => worst = worst.min(f),
            Err(e) => error = Some(e.to_string()),
        }
    }
    match error {
        Some(e) => suite.line(7, "tomography round trip", false, format!("error: {e}")),
        None => suite.line(7, "tomography round trip", worst > 0.999, format!("min F over 20 states = {worst:.6} (> 0.999)")),
    }
}

fn readout(suite: &mut Suite) {
    let v = VisibilityMatrix::reference_measured();
    let mut exact: f64 = 0.0;
    for k in 0..100 {
        let mut rng = stream(3, "acceptance-readout-exact", k);
        let p = random_probability(4, &mut rng);
        let p = [p[0], p[1], p[2], p[3]];
        let back = v.correct(&v.apply(&p), CorrectionMode::Raw).probabilities;
        let forth = v.apply(&v.correct(&p, CorrectionMode::Raw).probabilities);
        for i in 0..4 {
            exact = exact.max((back[i] - p[i]).abs()).max((forth[i] - p[i]).abs());
        }
    }

    let p = [0.5, 0.25, 0.25, 0.0];
    let n = 100_000u64;
    let q = v.apply(&p);
    // columns of V⁻¹ are the corrections of unit vectors
    let inv: Vec<[f64; 4]> = (0..4)
        .map(|j| {
            let mut e = [0.0; 4];
            e[j] = 1.0;
            v.correct(&e, CorrectionMode::Raw).probabilities
        })
        .collect();
    let cov = |i: usize, j: usize| (if i == j { q[i] } else { 0.0 } - q[i] * q[j]) / n as f64;
    let sigma: Vec<f64> = (0..4)
        .map(|k| {
            let mut s = 0.0;
            for i in 0..4 {
                for j in 0..4 {
                    s += inv[i][k] * cov(i, j) * inv[j][k];
                }
            }
            s.sqrt()
        })
        .collect();
    let mut inside = 0;
    for trial in 0..100 {
        let mut rng = stream(4, "acceptance-readout-mc", trial);
        let counts = match sample_shots(&q, n, &mut rng) {
            Ok(c) => c,
            Err(e) => return suite.line(8, "readout correction", false, format!("error: {e}")),
        };
        let est = v.correct(&frequencies(&counts), CorrectionMode::Raw).probabilities;
        if (0..4).all(|k| (est[k] - p[k]).abs() <= 3.0 * sigma[k]) {
            inside += 1;
        }
    }
    suite.line(
        8,
        "readout correction",
        exact < 1e-9 && inside >= 95,
        format!("max exact error = {exact:.2e} (< 1e-9), {inside}/100 trials within 3σ (>= 95)"),
    );
}

fn invariants(suite: &mut Suite) {
    let mut unitarity: f64 = 0.0;
    for (k, a) in [C64::new(0.3, 0.0), C64::new(-0.7, 1.1), C64::new(1.5, -0.4)].iter().enumerate() {
        let dim = 12 + 4 * k;
        match displacement_operator(*a, dim) {
            Ok(d) => {
                let m = d.matrix();
                let e = (m.adjoint() * m - CMatrix::identity(dim, dim))
                    .iter()
                    .map(|z| z.norm())
                    .fold(0.0, f64::max);
                unitarity = unitarity.max(e);
            }
            Err(_) => unitarity = f64::INFINITY,
        }
    }

    let device = DeviceParams::reference();
    let protocol = ProtocolConfig::default();
    let monitored = |dissipation: bool| {
        let schedule = noon_sequence(&device, &protocol)?;
        let rho0 = DensityMatrix::basis(build_space(3, 3)?, &[0, 0, 0, 0])?;
        let opts = EvolveOptions {
            dissipation,
            monitor: true,
            ..EvolveOptions::default()
        };
        Ok::<_, phonon_core::Error>((evolve(&device, &rho0, &schedule, &opts)?, schedule.duration()))
    };
    let (lossless, lossy) = match (monitored(false), monitored(true)) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return suite.line(9, "invariants", false, format!("error: {e}")),
    };
    let purity_drop = 1.0 - lossless.0.final_state.purity();
    let drift = lossy.0.diagnostics.max_trace_error.max(lossless.0.diagnostics.max_trace_error) / (lossy.1 * 1e6);
    let herm = lossy.0.diagnostics.max_hermiticity_error.max(lossless.0.diagnostics.max_hermiticity_error);
    let min_eig = lossy.0.diagnostics.min_eigenvalue.unwrap_or(f64::NAN).min(lossless.0.diagnostics.min_eigenvalue.unwrap_or(f64::NAN));

    let options = SynthesisOptions::new(&device, &protocol, 5);
    let bell = phonon_core::tomography::noon_state(1, 3, 0.0)
        .and_then(|psi| DensityMatrix::pure(phonon_core::hilbert::HilbertLayout::new(vec![3, 3])?, &psi))
        .and_then(|rho| JointPopulations::from_density(&rho, 3));
    let p_ee = match bell {
        Ok(pops) => model_traces(&pops, &options.model, &options.taus)
            .probabilities
            .iter()
            .map(|p| p[3])
            .fold(0.0, f64::max),
        Err(_) => f64::INFINITY,
    };

    // qubit on resonance with a Fock state |n⟩: the swap rate scales with √n
    let swap_frequency = |node: Node, n: usize| -> phonon_core::Result<f64> {
        let schedule = PulseSchedule::new(vec![
            Segment {
                channel: node.z(),
                t0: 0.0,
                duration: 2e-9,
                payload: Payload::FrequencyRamp {
                    to_hz: device.node(node).resonator,
                },
            },
            Segment {
                channel: node.coupler(),
                t0: 2e-9,
                duration: 300e-9,
                payload: Payload::Coupler {
                    amplitude: 1.0,
                    rise: 1e-9,
                },
            },
        ])?;
        let mut levels = [0; 4];
        levels[node.resonator()] = n;
        let rho0 = DensityMatrix::basis(build_space(3, 4)?, &levels)?;
        let times: Vec<f64> = (0..290).map(|i| 3e-9 + i as f64 * 1e-9).collect();
        let opts = EvolveOptions {
            dissipation: false,
            sample_times: times.clone(),
            ..EvolveOptions::default()
        };
        let traj = evolve(&device, &rho0, &schedule, &opts)?;
        let y: Vec<f64> = (0..times.len()).map(|i| traj.excited(i, node)).collect();
        Ok(fit_sinusoid(&times, &y, 2e6, 60e6)?.frequency)
    };
    let mut ratio_error: f64 = 0.0;
    for node in Node::ALL {
        let r = match (swap_frequency(node, 1), swap_frequency(node, 2)) {
            (Ok(f1), Ok(f2)) => f2 / f1 / 2f64.sqrt() - 1.0,
            _ => f64::NAN,
        };
        ratio_error = ratio_error.max(if r.is_finite() { r.abs() } else { f64::INFINITY });
    }

    let pass = unitarity < 1e-10
        && purity_drop.abs() < 1e-6
        && drift < 1e-6
        && herm < 1e-9
        && min_eig > -1e-6
        && p_ee < 0.01
        && ratio_error < 0.03;
    suite.line(
        9,
        "invariants",
        pass,
        format!(
            "‖D†D − 1‖ = {unitarity:.1e}, lossless purity loss = {purity_drop:.1e}, trace drift = {drift:.1e}/µs, \
             hermiticity = {herm:.1e}, min eigenvalue = {min_eig:.1e}, max P_ee = {p_ee:.1e}, √2 ratio error = {:.2}%",
            100.0 * ratio_error
        ),
    );
}

fn main() -> ExitCode {
    let start = Instant::now();
    let scratch = tempfile::tempdir().expect("scratch directory");
    let dir = |name: &str| scratch.path().join(name);
    let config = Config::reference();
    let mut suite = Suite {
        failed: 0,
        last: Instant::now(),
    };

    // 1. Bell, single worker thread
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().expect("thread pool");
    let t = Instant::now();
    let bell = pool.install(|| run(Scenario::Bell, &config, &dir("bell")));
    let bell_secs = t.elapsed().as_secs_f64();
    match &bell {
        Ok(r) => {
            let c = r.check("fidelity").expect("bell fidelity check");
            suite.line(
                1,
                "Bell fidelity",
                c.pass && bell_secs < 600.0,
                format!("F = {:.4} in [0.89, 0.95], runtime {bell_secs:.0} s on one thread (< 600 s)", c.value),
            );
        }
        Err(e) => suite.line(1, "Bell fidelity", false, format!("error: {e}")),
    }

    let noon = run(Scenario::Noon, &config, &dir("noon"));
    suite.checks(2, "N00N fidelity", noon.as_ref().map_err(Clone::clone), &["fidelity"]);

    let swap = run(Scenario::ParallelSwap, &config, &dir("swap"));
    suite.checks(3, "parallel swap", swap.as_ref().map_err(Clone::clone), &["swap_time_a_ns", "swap_time_b_ns"]);

    let t1 = run(Scenario::ResonatorT1, &config, &dir("t1"));
    let ramsey = run(Scenario::ResonatorRamsey, &config, &dir("ramsey"));
    match (&t1, &ramsey) {
        (Ok(a), Ok(b)) => {
            let cs: Vec<_> = ["t1_a_ns", "t1_b_ns"]
                .iter()
                .filter_map(|n| a.check(n))
                .chain(["t2_a_ns", "t2_b_ns"].iter().filter_map(|n| b.check(n)))
                .collect();
            let detail = cs
                .iter()
                .map(|c| format!("{} = {:.1} in [{:.1}, {:.1}]", c.name, c.value, c.lo, c.hi))
                .collect::<Vec<_>>()
                .join(", ");
            suite.line(4, "resonator T1 and T2", cs.len() == 4 && cs.iter().all(|c| c.pass), detail);
        }
        (Err(e), _) | (_, Err(e)) => suite.line(4, "resonator T1 and T2", false, format!("error: {e}")),
    }
    suite.checks(5, "quality factors", t1.as_ref().map_err(Clone::clone), &["quality_factor_a", "quality_factor_b"]);

    let saw = run(Scenario::SawCurves, &config, &dir("saw"));
    let multimode = run(Scenario::Multimode, &config, &dir("multimode"));
    match (&saw, &multimode) {
        (Ok(s), Ok(m)) => {
            let cs: Vec<_> = s.checks.iter().chain(&m.checks).collect();
            let detail = cs
                .iter()
                .map(|c| format!("{} = {:.2}", c.name, c.value))
                .collect::<Vec<_>>()
                .join(", ");
            suite.line(6, "SAW model", cs.len() == 8 && cs.iter().all(|c| c.pass), detail);
        }
        (Err(e), _) | (_, Err(e)) => suite.line(6, "SAW model", false, format!("error: {e}")),
    }

    round_trip(&mut suite);
    readout(&mut suite);
    invariants(&mut suite);

    // 10. repeat runs: the full Bell pipeline plus every other scenario on reduced grids
    let mut small = Config::reference();
    small.scenarios.chevron.detuning_span = 4e6;
    small.scenarios.chevron.detuning_step = 2e6;
    small.scenarios.chevron.time_max = 100e-9;
    small.scenarios.coherence.t1_delay_max = 0.4e-6;
    small.scenarios.coherence.ramsey_delay_max = 0.6e-6;
    small.scenarios.displacement.points = 5;
    small.scenarios.multimode.sweep_step = 5e6;
    small.tomography.bootstrap = 3;
    small.tomography.tau_step = 4e-9;
    small.simulation.resonator_levels = 4;
    let mut differing = Vec::new();
    let mut compared = 0;
    let repeat = run(Scenario::Bell, &config, &dir("bell-repeat"));
    let mut pairs = vec![(Scenario::Bell, dir("bell"), repeat.map(|_| dir("bell-repeat")))];
    for s in Scenario::ALL.into_iter().filter(|s| *s != Scenario::Bell) {
        let a = run(s, &small, &dir(&format!("{s}-1")));
        let b = run(s, &small, &dir(&format!("{s}-2")));
        pairs.push((s, dir(&format!("{s}-1")), a.and(b).map(|_| dir(&format!("{s}-2")))));
    }
    let mut errors = Vec::new();
    for (s, first, second) in pairs {
        match second {
            Ok(second) => {
                let (a, b) = (files(&first), files(&second));
                compared += a.len();
                if a != b {
                    differing.push(s.to_string());
                }
            }
            Err(e) => errors.push(format!("{s}: {e}")),
        }
    }
    suite.line(
        10,
        "determinism",
        differing.is_empty() && errors.is_empty() && compared > 0,
        if errors.is_empty() {
            format!("{compared} files across 10 scenarios, differing: {differing:?}")
        } else {
            format!("errors: {}", errors.join("; "))
        },
    );

    println!(
        "{} of 10 criteria passed in {:.0} s",
        10 - suite.failed,
        start.elapsed().as_secs_f64()
    );
    // failures are reported above; set PHONON_ACCEPTANCE_STRICT=1 to make them fatal
    let strict = std::env::var("PHONON_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if suite.failed > 0 && strict {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
