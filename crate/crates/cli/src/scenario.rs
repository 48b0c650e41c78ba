use std::collections::BTreeMap;
use std::f64::consts::{FRAC_1_SQRT_2, PI, TAU};
use std::path::{Path, PathBuf};

use phonon_core::dynamics::{chevron, evolve, multimode_swaps, EvolveOptions, Trajectory};
use phonon_core::error::StageExt;
use phonon_core::fit::{fit_damped_cosine, fit_exponential};
use phonon_core::hilbert::{build_space, partial_trace, CMatrix, CVector, DensityMatrix, C64, RA, RB};
use phonon_core::pulses::{
    bell_sequence, lifetime_and_ramsey_sequences, noom_sequence, noon_sequence, CoherenceMeasurement, Node, Payload,
    PulseSchedule, Segment, Shape, Transition,
};
use phonon_core::readout::sample_counts;
use phonon_core::rng::{stream, Rng};
use phonon_core::sawcom::{
    cavity_response, emission_rate_profile, frequency_grid, main_lobe, CavityResponse, SawDesign,
};
use phonon_core::tomography::{
    bootstrap, calibrate_displacement, fidelity, magnitude_csv, make_grid, model_traces, reconstruct_with,
    resize_modes, synthesize_dataset, synthesize_traces, DensityJson, GridStyle, ReconstructOptions,
    SynthesisOptions,
};
use phonon_core::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{grid, Config};
use crate::plot::{heatmap, line_plot, matrix_plot, Series};
use crate::report::{emit_report, Check, Output, RunReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Chevron,
    ParallelSwap,
    ResonatorT1,
    ResonatorRamsey,
    Bell,
    Noon,
    Noom,
    Multimode,
    SawCurves,
    DisplacementCal,
}

impl Scenario {
    pub const ALL: [Scenario; 10] = [
        Scenario::Chevron,
        Scenario::ParallelSwap,
        Scenario::ResonatorT1,
        Scenario::ResonatorRamsey,
        Scenario::Bell,
        Scenario::Noon,
        Scenario::Noom,
        Scenario::Multimode,
        Scenario::SawCurves,
        Scenario::DisplacementCal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Chevron => "chevron",
            Scenario::ParallelSwap => "parallel-swap",
            Scenario::ResonatorT1 => "resonator-t1",
            Scenario::ResonatorRamsey => "resonator-ramsey",
            Scenario::Bell => "bell",
            Scenario::Noon => "noon",
            Scenario::Noom => "noom",
            Scenario::Multimode => "multimode",
            Scenario::SawCurves => "saw-curves",
            Scenario::DisplacementCal => "displacement-cal",
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One invocation of `run`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    pub config: PathBuf,
    pub seed: u64,
    pub shots: u64,
    pub out: PathBuf,
    pub overrides: Vec<String>,
    pub plots: bool,
}

pub fn run_scenario(spec: &ScenarioSpec) -> Result<RunReport> {
    let config = Config::load(&spec.config, &spec.overrides).stage("config")?;
    run_with_config(spec.scenario, &config, spec.seed, spec.shots, &spec.out, spec.plots)
}

/// Runs a scenario on an already resolved config and writes its artifacts and
/// `report.json` into `out`.
pub fn run_with_config(
    scenario: Scenario,
    config: &Config,
    seed: u64,
    shots: u64,
    out: &Path,
    plots: bool,
) -> Result<RunReport> {
    if seed == 0 || shots == 0 {
        return Err(Error::Config("seed and shots must be positive".into()));
    }
    config.validate().stage("config")?;
    let mut ctx = Ctx {
        cfg: config,
        seed,
        shots,
        out: Output::create(out, plots).stage("output")?,
        metrics: BTreeMap::new(),
        checks: Vec::new(),
        warnings: Vec::new(),
    };
    match scenario {
        Scenario::Chevron => run_chevron(&mut ctx)?,
        Scenario::ParallelSwap => run_parallel_swap(&mut ctx)?,
        Scenario::ResonatorT1 => run_resonator_t1(&mut ctx)?,
        Scenario::ResonatorRamsey => run_resonator_ramsey(&mut ctx)?,
        Scenario::Bell => run_state(&mut ctx, StateKind::Bell)?,
        Scenario::Noon => run_state(&mut ctx, StateKind::Noon)?,
        Scenario::Noom => run_state(&mut ctx, StateKind::Noom)?,
        Scenario::Multimode => run_multimode(&mut ctx)?,
        Scenario::SawCurves => run_saw_curves(&mut ctx)?,
        Scenario::DisplacementCal => run_displacement(&mut ctx)?,
    }
    let Ctx {
        metrics,
        checks,
        mut warnings,
        out: output,
        ..
    } = ctx;
    warnings.sort();
    warnings.dedup();
    let passed = checks.iter().all(|c| c.pass);
    let report = RunReport {
        scenario,
        seed,
        shots,
        config: config.clone(),
        metrics,
        checks,
        artifacts: output.into_artifacts(),
        warnings,
        passed,
    };
    emit_report(&report, out).stage("report")?;
    Ok(report)
}

struct Ctx<'a> {
    cfg: &'a Config,
    seed: u64,
    shots: u64,
    out: Output,
    metrics: BTreeMap<String, f64>,
    checks: Vec<Check>,
    warnings: Vec<String>,
}

impl Ctx<'_> {
    fn metric(&mut self, name: &str, value: f64) {
        self.metrics.insert(name.to_string(), value);
    }

    fn evolve_options(&self) -> EvolveOptions {
        let s = &self.cfg.simulation;
        EvolveOptions {
            dt_max: s.dt_max,
            dissipation: s.dissipation,
            frame: s.frame,
            ..EvolveOptions::default()
        }
    }

    fn absorb(&mut self, traj: &Trajectory) {
        self.warnings.extend(traj.warnings.iter().cloned());
    }
}

fn tag(node: Node) -> &'static str {
    match node {
        Node::A => "a",
        Node::B => "b",
    }
}

/// Fraction of `shots` single-qubit measurements that returned `|e⟩`.
fn measure(p: f64, shots: u64, rng: &mut Rng) -> Result<f64> {
    let p = p.clamp(0.0, 1.0);
    let c = sample_counts(&[p, 1.0 - p], shots, rng)?;
    Ok(c[0] as f64 / shots as f64)
}

fn csv(header: &str, rows: impl IntoIterator<Item = Vec<f64>>) -> String {
    let mut s = String::from(header);
    s.push('\n');
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

fn map_csv(first: &str, rows: &[f64], cols: &[f64], z: &[Vec<f64>]) -> String {
    let mut header = String::from(first);
    for c in cols {
        header.push_str(&format!(",{c}"));
    }
    csv(&header, rows.iter().zip(z).map(|(r, zr)| std::iter::once(*r).chain(zr.iter().copied()).collect()))
}

fn scaled(x: &[f64], y: &[f64], sx: f64, sy: f64) -> Vec<(f64, f64)> {
    x.iter().zip(y).map(|(a, b)| (a * sx, b * sy)).collect()
}

fn swap_fit(times: &[f64], y: &[f64]) -> Result<phonon_core::fit::DampedFit> {
    fit_damped_cosine(times, y, 2e6, 60e6, true)
}

fn run_chevron(ctx: &mut Ctx) -> Result<()> {
    let k = ctx.cfg.scenarios.chevron.clone();
    let detunings = grid(-k.detuning_span, k.detuning_span + 1e-3, k.detuning_step);
    let times = grid(0.0, k.time_max, k.time_step);
    let opts = ctx.evolve_options();
    for node in Node::ALL {
        let map = chevron(&ctx.cfg.device, &ctx.cfg.protocol, node, &detunings, &times, &opts).stage("chevron")?;
        let mut rng = stream(ctx.seed, "chevron", node.index() as u64);
        let measured = map
            .excited
            .iter()
            .map(|row| row.iter().map(|&p| measure(p, ctx.shots, &mut rng)).collect::<Result<Vec<f64>>>())
            .collect::<Result<Vec<_>>>()?;
        let t = tag(node);
        ctx.out.write(&format!("chevron_{t}.csv"), &map_csv("detuning_hz", &detunings, &times, &measured))?;
        let det_mhz: Vec<f64> = detunings.iter().map(|d| d * 1e-6).collect();
        let t_ns: Vec<f64> = times.iter().map(|d| d * 1e9).collect();
        ctx.out.plot(&format!("chevron_{t}.svg"), || {
            heatmap(
                &format!("Chevron node {}", t.to_uppercase()),
                "interaction time (ns)",
                "detuning (MHz)",
                &t_ns,
                &det_mhz,
                &measured,
            )
        })?;

        let g = ctx.cfg.device.node(node).g_ge;
        let centre = (0..detunings.len())
            .min_by(|&a, &b| detunings[a].abs().total_cmp(&detunings[b].abs()))
            .expect("non-empty detunings");
        let fit = swap_fit(&times, &measured[centre]).stage("chevron fit")?;
        let swap = 0.5 / fit.frequency;
        ctx.metric(&format!("chevron_swap_time_{t}_ns"), swap * 1e9);
        ctx.checks
            .push(Check::around(&format!("chevron_swap_time_{t}_ns"), swap * 1e9, [42.0, 35.0][node.index()], 2.0));

        // off-resonant column oscillates at the generalized Rabi frequency
        let half = 0.5 * k.detuning_span;
        let side = (0..detunings.len())
            .min_by(|&a, &b| (detunings[a] - half).abs().total_cmp(&(detunings[b] - half).abs()))
            .expect("non-empty detunings");
        if detunings[side].abs() > 0.0 {
            let expect = ((2.0 * g).powi(2) + detunings[side].powi(2)).sqrt();
            let f = swap_fit(&times, &measured[side]).stage("chevron fit")?.frequency;
            ctx.metric(&format!("chevron_detuned_frequency_{t}_mhz"), f * 1e-6);
            ctx.checks.push(Check::relative(
                &format!("chevron_detuned_frequency_{t}_mhz"),
                f * 1e-6,
                expect * 1e-6,
                0.05,
            ));
        }
    }
    Ok(())
}

/// π pulses on both qubits, both moved onto their resonators, both couplers
/// at full amplitude. Returns the schedule and the interaction time origin.
fn parallel_swap_schedule(ctx: &Ctx, max_time: f64) -> Result<(PulseSchedule, f64)> {
    let p = &ctx.cfg.protocol;
    let mut segments = Vec::new();
    for node in Node::ALL {
        segments.push(Segment {
            channel: node.xy(),
            t0: 0.0,
            duration: 0.0,
            payload: Payload::QubitPulse {
                transition: Transition::Ge,
                angle: PI,
                phase: 0.0,
                shape: Shape::Instant,
            },
        });
        segments.push(Segment {
            channel: node.z(),
            t0: 0.0,
            duration: p.ramp_time,
            payload: Payload::FrequencyRamp {
                to_hz: ctx.cfg.device.node(node).resonator,
            },
        });
        segments.push(Segment {
            channel: node.coupler(),
            t0: p.ramp_time,
            duration: max_time + 2.0 * p.coupler_rise,
            payload: Payload::Coupler {
                amplitude: 1.0,
                rise: p.coupler_rise,
            },
        });
    }
    segments.push(Segment {
        channel: phonon_core::pulses::Channel::Readout,
        t0: p.ramp_time + max_time + 2.0 * p.coupler_rise,
        duration: 0.0,
        payload: Payload::Measure,
    });
    Ok((PulseSchedule::new(segments)?, p.ramp_time + 0.5 * p.coupler_rise))
}

fn run_parallel_swap(ctx: &mut Ctx) -> Result<()> {
    let k = ctx.cfg.scenarios.swap.clone();
    let times = grid(0.0, k.time_max, k.time_step);
    let (schedule, origin) = parallel_swap_schedule(ctx, k.time_max).stage("schedule")?;
    let rho0 = DensityMatrix::basis(build_space(3, 2)?, &[0, 0, 0, 0])?;
    let opts = EvolveOptions {
        sample_times: times.iter().map(|t| t + origin).collect(),
        ..ctx.evolve_options()
    };
    let traj = evolve(&ctx.cfg.device, &rho0, &schedule, &opts).stage("evolve")?;
    ctx.absorb(&traj);
    let mut columns: Vec<Vec<f64>> = vec![times.clone()];
    let mut series = Vec::new();
    for node in Node::ALL {
        let exact: Vec<f64> = (0..times.len()).map(|i| traj.excited(i, node)).collect();
        let mut rng = stream(ctx.seed, "parallel-swap", node.index() as u64);
        let measured = exact
            .iter()
            .map(|&p| measure(p, ctx.shots, &mut rng))
            .collect::<Result<Vec<f64>>>()?;
        let fit = swap_fit(&times, &measured).stage("swap fit")?;
        let swap = 0.5 / fit.frequency;
        let t = tag(node);
        ctx.metric(&format!("swap_time_{t}_ns"), swap * 1e9);
        ctx.metric(&format!("swap_coupling_{t}_mhz"), 0.5 * fit.frequency * 1e-6);
        ctx.metric(&format!("swap_envelope_{t}_ns"), fit.tau * 1e9);
        ctx.checks
            .push(Check::around(&format!("swap_time_{t}_ns"), swap * 1e9, [42.0, 35.0][node.index()], 2.0));
        let model: Vec<f64> = times
            .iter()
            .map(|&x| (-x / fit.tau).exp() * (fit.offset + fit.amplitude * (TAU * fit.frequency * x + fit.phase).cos()))
            .collect();
        series.push(Series::dots(&format!("node {} data", t.to_uppercase()), scaled(&times, &measured, 1e9, 1.0)));
        series.push(Series::line(&format!("node {} fit", t.to_uppercase()), scaled(&times, &model, 1e9, 1.0)));
        columns.push(measured);
        columns.push(exact);
    }
    let rows = (0..times.len()).map(|i| columns.iter().map(|c| c[i]).collect());
    ctx.out.write("parallel_swap.csv", &csv("time_s,p_e_a,p_e_a_exact,p_e_b,p_e_b_exact", rows))?;
    ctx.out.plot("parallel_swap.svg", || line_plot("Parallel swaps", "time (ns)", "P_e", &series))?;
    Ok(())
}

/// Final `|e⟩` probability of each schedule, evolved in parallel.
fn final_excitation(ctx: &Ctx, node: Node, schedules: &[PulseSchedule]) -> Result<(Vec<f64>, Vec<String>)> {
    let rho0 = DensityMatrix::basis(build_space(3, 2)?, &[0, 0, 0, 0])?;
    let opts = ctx.evolve_options();
    let runs = schedules
        .par_iter()
        .map(|s| {
            let traj = evolve(&ctx.cfg.device, &rho0, s, &opts)?;
            let last = traj.times.len() - 1;
            Ok((traj.excited(last, node), traj.warnings))
        })
        .collect::<Result<Vec<_>>>()?;
    let warnings = runs.iter().flat_map(|r| r.1.iter().cloned()).collect();
    Ok((runs.into_iter().map(|r| r.0).collect(), warnings))
}

fn run_resonator_t1(ctx: &mut Ctx) -> Result<()> {
    let k = ctx.cfg.scenarios.coherence.clone();
    let delays = grid(0.0, k.t1_delay_max, k.t1_delay_step);
    let mut columns: Vec<Vec<f64>> = vec![delays.clone()];
    let mut series = Vec::new();
    for node in Node::ALL {
        let schedules = lifetime_and_ramsey_sequences(
            &ctx.cfg.device,
            &ctx.cfg.protocol,
            node,
            CoherenceMeasurement::T1,
            &delays,
            0.0,
        )
        .stage("schedule")?;
        let (exact, warnings) = final_excitation(ctx, node, &schedules).stage("evolve")?;
        ctx.warnings.extend(warnings);
        let mut rng = stream(ctx.seed, "resonator-t1", node.index() as u64);
        let measured = exact
            .iter()
            .map(|&p| measure(p, ctx.shots, &mut rng))
            .collect::<Result<Vec<f64>>>()?;
        let fit = fit_exponential(&delays, &measured, true).stage("t1 fit")?;
        let params = ctx.cfg.device.node(node);
        let q = TAU * params.resonator * fit.tau;
        let t = tag(node);
        ctx.metric(&format!("t1_{t}_ns"), fit.tau * 1e9);
        ctx.metric(&format!("quality_factor_{t}"), q);
        ctx.checks.push(Check::relative(&format!("t1_{t}_ns"), fit.tau * 1e9, params.resonator_t1 * 1e9, 0.05));
        ctx.checks.push(Check::relative(&format!("quality_factor_{t}"), q, [7200.0, 5600.0][node.index()], 0.05));
        let model: Vec<f64> = delays.iter().map(|&d| fit.offset + fit.amplitude * (-d / fit.tau).exp()).collect();
        series.push(Series::dots(&format!("node {} data", t.to_uppercase()), scaled(&delays, &measured, 1e9, 1.0)));
        series.push(Series::line(&format!("node {} fit", t.to_uppercase()), scaled(&delays, &model, 1e9, 1.0)));
        columns.push(measured);
        columns.push(exact);
    }
    let rows = (0..delays.len()).map(|i| columns.iter().map(|c| c[i]).collect());
    ctx.out.write("resonator_t1.csv", &csv("delay_s,p_e_a,p_e_a_exact,p_e_b,p_e_b_exact", rows))?;
    ctx.out.plot("resonator_t1.svg", || line_plot("Phonon energy decay", "delay (ns)", "P_e", &series))?;
    Ok(())
}

fn run_resonator_ramsey(ctx: &mut Ctx) -> Result<()> {
    let k = ctx.cfg.scenarios.coherence.clone();
    let delays = grid(0.0, k.ramsey_delay_max, k.ramsey_delay_step);
    let mut columns: Vec<Vec<f64>> = vec![delays.clone()];
    let mut series = Vec::new();
    for node in Node::ALL {
        // final pulse phase advances with the delay: a virtual detuning
        let mut schedules = Vec::with_capacity(delays.len());
        for &d in &delays {
            schedules.extend(
                lifetime_and_ramsey_sequences(
                    &ctx.cfg.device,
                    &ctx.cfg.protocol,
                    node,
                    CoherenceMeasurement::T2,
                    &[d],
                    TAU * k.ramsey_detuning * d,
                )
                .stage("schedule")?,
            );
        }
        let (exact, warnings) = final_excitation(ctx, node, &schedules).stage("evolve")?;
        ctx.warnings.extend(warnings);
        let mut rng = stream(ctx.seed, "resonator-ramsey", node.index() as u64);
        let measured = exact
            .iter()
            .map(|&p| measure(p, ctx.shots, &mut rng))
            .collect::<Result<Vec<f64>>>()?;
        let fit = fit_damped_cosine(&delays, &measured, 0.25 * k.ramsey_detuning, 4.0 * k.ramsey_detuning, false)
            .stage("ramsey fit")?;
        let t = tag(node);
        let params = ctx.cfg.device.node(node);
        ctx.metric(&format!("t2_{t}_ns"), fit.tau * 1e9);
        ctx.metric(&format!("ramsey_frequency_{t}_mhz"), fit.frequency * 1e-6);
        ctx.checks.push(Check::relative(&format!("t2_{t}_ns"), fit.tau * 1e9, params.resonator_t2 * 1e9, 0.05));
        let model: Vec<f64> = delays
            .iter()
            .map(|&x| fit.offset + fit.amplitude * (-x / fit.tau).exp() * (TAU * fit.frequency * x + fit.phase).cos())
            .collect();
        series.push(Series::dots(&format!("node {} data", t.to_uppercase()), scaled(&delays, &measured, 1e9, 1.0)));
        series.push(Series::line(&format!("node {} fit", t.to_uppercase()), scaled(&delays, &model, 1e9, 1.0)));
        columns.push(measured);
        columns.push(exact);
    }
    let rows = (0..delays.len()).map(|i| columns.iter().map(|c| c[i]).collect());
    ctx.out.write("resonator_ramsey.csv", &csv("delay_s,p_e_a,p_e_a_exact,p_e_b,p_e_b_exact", rows))?;
    ctx.out.plot("resonator_ramsey.svg", || line_plot("Phonon Ramsey fringes", "delay (ns)", "P_e", &series))?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum StateKind {
    Bell,
    Noon,
    Noom,
}

impl StateKind {
    /// Phonon numbers `(N, M)` of the target `(|N0⟩ + |0M⟩)/√2`.
    fn numbers(self) -> (usize, usize) {
        match self {
            StateKind::Bell => (1, 1),
            StateKind::Noon => (2, 2),
            StateKind::Noom => (2, 1),
        }
    }

    fn name(self) -> &'static str {
        match self {
            StateKind::Bell => "bell",
            StateKind::Noon => "noon",
            StateKind::Noom => "noom",
        }
    }
}

/// `(|N0⟩ + |0M⟩)/√2` on `levels` levels per mode, mode A first.
pub fn target_state(n: usize, m: usize, levels: usize) -> Result<CVector> {
    if n >= levels || m >= levels || n + m == 0 {
        return Err(Error::Dimension(format!("target |{n}0⟩ + |0{m}⟩ needs more than {levels} levels")));
    }
    let mut v = CVector::zeros(levels * levels);
    v[n * levels] += C64::new(FRAC_1_SQRT_2, 0.0);
    v[m] += C64::new(FRAC_1_SQRT_2, 0.0);
    Ok(v)
}

/// Rotates mode B so that the `|N0⟩⟨0M|` coherence of `reference` becomes real
/// and positive, and applies the same rotation to `rho`.
pub fn align_phase(rho: &DensityMatrix, reference: &DensityMatrix, n: usize, m: usize) -> Result<DensityMatrix> {
    let l = reference.layout();
    let phi = reference.matrix()[(l.index(&[n, 0]), l.index(&[0, m]))].arg();
    let w = phi / m as f64;
    let layout = rho.layout().clone();
    let rotated = CMatrix::from_fn(rho.dim(), rho.dim(), |a, b| {
        let d = layout.levels(a)[1] as f64 - layout.levels(b)[1] as f64;
        rho.matrix()[(a, b)] * C64::from_polar(1.0, w * d)
    });
    DensityMatrix::new(layout, rotated)
}

fn run_state(ctx: &mut Ctx, kind: StateKind) -> Result<()> {
    let cfg = ctx.cfg;
    let (n, m) = kind.numbers();
    let schedule = match kind {
        StateKind::Bell => bell_sequence(&cfg.device, &cfg.protocol),
        StateKind::Noon => noon_sequence(&cfg.device, &cfg.protocol),
        StateKind::Noom => noom_sequence(&cfg.device, &cfg.protocol),
    }
    .stage("schedule")?;
    ctx.out.write("schedule.json", &schedule.to_json()?)?;

    let layout = build_space(3, cfg.simulation.resonator_levels)?;
    let rho0 = DensityMatrix::basis(layout, &[0, 0, 0, 0])?;
    let opts = ctx.evolve_options();
    let traj = evolve(&cfg.device, &rho0, &schedule, &opts).stage("evolve")?;
    ctx.absorb(&traj);
    ctx.metric("evolve_steps", traj.diagnostics.steps as f64);
    ctx.metric("evolve_max_trace_error", traj.diagnostics.max_trace_error);
    let lossless = EvolveOptions {
        dissipation: false,
        ..opts
    };
    let reference = evolve(&cfg.device, &rho0, &schedule, &lossless).stage("reference evolve")?;
    let rho_m = partial_trace(&traj.final_state, &[RA, RB]).stage("partial trace")?;
    let rho_ref = partial_trace(&reference.final_state, &[RA, RB]).stage("partial trace")?;
    let rho_m = align_phase(&rho_m, &rho_ref, n, m).stage("phase alignment")?;
    ctx.out.write("density_simulated.json", &serde_json::to_string_pretty(&DensityJson::from(&rho_m))?)?;

    let t = &cfg.tomography;
    let levels = t.reconstruct_levels;
    let target = target_state(n, m, levels)?;
    let simulated = fidelity(&resize_modes(&rho_m, levels)?, &target)?;
    ctx.metric("fidelity_simulated", simulated);

    let (style, fit_levels, pad) = match kind {
        StateKind::Bell => (GridStyle::Bell, t.bell_fit_levels, t.bell_pad_above),
        _ => (GridStyle::Noon, t.noon_fit_levels, t.noon_pad_above),
    };
    let mut synth = SynthesisOptions::new(&cfg.device, &cfg.protocol, fit_levels);
    synth.taus = t.taus();
    synth.shots = Some(ctx.shots);
    synth.readout = if cfg.readout.enabled { Some(cfg.readout.matrix()?) } else { None };
    synth.correction = cfg.readout.correction;
    synth.work_levels = t.work_levels;
    let grid = make_grid(style);
    let dataset = synthesize_dataset(&rho_m, &grid, &synth, ctx.seed).stage("tomography data")?;
    ctx.out.write("dataset.json", &dataset.to_json()?)?;

    let mut pop_header = String::from("point,alpha_a_re,alpha_a_im,alpha_b_re,alpha_b_im");
    for a in 0..fit_levels {
        for b in 0..fit_levels {
            pop_header.push_str(&format!(",p_{a}{b}"));
        }
    }
    let pop_rows = grid.points().iter().zip(&dataset.populations).enumerate().map(|(k, (p, pops))| {
        [k as f64, p[0].re, p[0].im, p[1].re, p[1].im]
            .into_iter()
            .chain(pops.values().iter().copied())
            .collect()
    });
    ctx.out.write("populations.csv", &csv(&pop_header, pop_rows))?;

    let work = resize_modes(&rho_m, synth.work_levels.max(rho_m.layout().dim(0)))?;
    let traces = synthesize_traces(&work, grid.points()[0], &synth, &mut stream(ctx.seed, "tomography", 0))?;
    ctx.out.write("traces_point0.csv", &traces.to_csv())?;
    let model = model_traces(&dataset.populations[0], &synth.model, &synth.taus);
    ctx.out.plot("traces_point0.svg", || {
        let mut series = Vec::new();
        for (j, label) in ["gg", "ge", "eg", "ee"].iter().enumerate() {
            let data: Vec<f64> = traces.probabilities.iter().map(|p| p[j]).collect();
            let fit: Vec<f64> = model.probabilities.iter().map(|p| p[j]).collect();
            series.push(Series::dots(&format!("P_{label}"), scaled(&traces.taus, &data, 1e9, 1.0)));
            series.push(Series::line(&format!("P_{label} fit"), scaled(&traces.taus, &fit, 1e9, 1.0)));
        }
        line_plot("Swap traces, first displacement", "interaction time (ns)", "probability", &series)
    })?;

    let ropts = ReconstructOptions {
        max_iterations: t.max_iterations,
        tolerance: t.tolerance,
        ..ReconstructOptions::new(levels, Some(pad))
    };
    let rec = reconstruct_with(&dataset, &ropts).stage("reconstruction")?;
    let f = fidelity(&rec.rho, &target)?;
    ctx.metric("fidelity", f);
    ctx.metric("reconstruction_objective", rec.objective);
    ctx.metric("reconstruction_iterations", rec.iterations as f64);
    ctx.metric("purity", rec.rho.purity());
    ctx.out.write("density_magnitude.csv", &magnitude_csv(&rec.rho))?;
    ctx.out.write("density.json", &serde_json::to_string_pretty(&DensityJson::from(&rec.rho))?)?;
    let labels: Vec<String> = (0..rec.rho.dim())
        .map(|i| rec.rho.layout().levels(i).iter().map(|l| l.to_string()).collect())
        .collect();
    let mags: Vec<Vec<f64>> = (0..rec.rho.dim())
        .map(|r| (0..rec.rho.dim()).map(|c| rec.rho.matrix()[(r, c)].norm()).collect())
        .collect();
    ctx.out.plot("density_magnitude.svg", || {
        matrix_plot(&format!("|ρ| {} (F = {f:.3})", kind.name()), &labels, &mags)
    })?;

    let boot = bootstrap(&dataset, &ropts, &target, t.bootstrap, ctx.seed).stage("bootstrap")?;
    ctx.metric("fidelity_bootstrap_mean", boot.mean);
    ctx.metric("fidelity_bootstrap_std", boot.std);
    ctx.out.write("bootstrap.csv", &csv("resample,fidelity", boot.fidelities.iter().enumerate().map(|(i, f)| vec![i as f64, *f])))?;

    match kind {
        StateKind::Bell => ctx.checks.push(Check::range("fidelity", f, 0.89, 0.95)),
        StateKind::Noon => ctx.checks.push(Check::range("fidelity", f, 0.70, 0.79)),
        StateKind::Noom => {}
    }
    Ok(())
}

fn response_around(design: &SawDesign, centre: f64, span: f64, points: usize) -> CavityResponse {
    cavity_response(design, &frequency_grid(centre - span, centre + span, points))
}

fn response_plot(title: &str, r: &CavityResponse) -> Result<String> {
    let peak = r.re_y.iter().copied().fold(0.0, f64::max).max(1e-300);
    let ghz: Vec<f64> = r.frequencies.iter().map(|f| f * 1e-9).collect();
    let norm_y: Vec<f64> = r.re_y.iter().map(|y| y / peak).collect();
    line_plot(
        title,
        "frequency (GHz)",
        "magnitude",
        &[
            Series::line("|S21|", scaled(&ghz, &r.s21, 1.0, 1.0)),
            Series::line("|Γ| mirror", scaled(&ghz, &r.gamma, 1.0, 1.0)),
            Series::line("Re Y / max", scaled(&ghz, &norm_y, 1.0, 1.0)),
        ],
    )
}

fn modes_csv(r: &CavityResponse) -> String {
    csv(
        "frequency_hz,s21,gamma",
        r.modes.iter().map(|m| vec![m.frequency, m.transmission, m.reflectivity]),
    )
}

fn run_saw_curves(ctx: &mut Ctx) -> Result<()> {
    let k = ctx.cfg.scenarios.saw.clone();
    for (node, design) in [(Node::A, ctx.cfg.saw.a.clone()), (Node::B, ctx.cfg.saw.b.clone())] {
        let t = tag(node);
        let up = t.to_uppercase();
        let broad = response_around(&design, design.center_frequency(), k.broad_span, k.broad_points);
        let fine = response_around(&design, design.mirror_center_frequency(), k.fine_span, k.fine_points);
        ctx.out.write(&format!("saw_{t}_broad.csv"), &broad.to_csv())?;
        ctx.out.write(&format!("saw_{t}_fine.csv"), &fine.to_csv())?;
        ctx.out.write(&format!("saw_{t}_modes.csv"), &modes_csv(&fine))?;
        let profile = emission_rate_profile(&design, &broad.frequencies);
        ctx.out.write(
            &format!("saw_{t}_emission.csv"),
            &csv("frequency_hz,relative_rate", broad.frequencies.iter().zip(&profile).map(|(f, p)| vec![*f, *p])),
        )?;
        ctx.out.plot(&format!("saw_{t}_broad.svg"), || response_plot(&format!("SAW node {up}, transducer band"), &broad))?;
        ctx.out.plot(&format!("saw_{t}_fine.svg"), || response_plot(&format!("SAW node {up}, stopband"), &fine))?;

        ctx.metric(&format!("saw_{t}_center_frequency_ghz"), design.center_frequency() * 1e-9);
        match fine.stopband {
            Some((lo, hi)) => {
                ctx.metric(&format!("saw_{t}_stopband_lo_ghz"), lo * 1e-9);
                ctx.metric(&format!("saw_{t}_stopband_hi_ghz"), hi * 1e-9);
                ctx.checks.push(Check::around(&format!("saw_{t}_stopband_mhz"), (hi - lo) * 1e-6, 50.0, 15.0));
                let inside = fine.modes.iter().filter(|m| m.frequency > lo && m.frequency < hi).count();
                ctx.checks.push(Check::range(&format!("saw_{t}_modes_in_stopband"), inside as f64, 1.0, 1.0));
            }
            None => {
                ctx.warnings.push(format!("node {up}: no mirror stopband in the fine grid"));
                ctx.checks.push(Check::around(&format!("saw_{t}_stopband_mhz"), 0.0, 50.0, 15.0));
            }
        }
        for (i, mode) in fine.modes.iter().enumerate() {
            ctx.metric(&format!("saw_{t}_mode{i}_ghz"), mode.frequency * 1e-9);
        }
        let nominal = 2.0 * design.center_frequency() / design.finger_pairs as f64;
        let width = main_lobe(&design, &broad.frequencies).map(|(lo, hi)| hi - lo).unwrap_or(0.0);
        ctx.metric(&format!("saw_{t}_main_lobe_nominal_mhz"), nominal * 1e-6);
        ctx.checks
            .push(Check::relative(&format!("saw_{t}_main_lobe_mhz"), width * 1e-6, nominal * 1e-6, 0.10));
    }
    Ok(())
}

fn run_multimode(ctx: &mut Ctx) -> Result<()> {
    let k = ctx.cfg.scenarios.multimode.clone();
    let design = ctx.cfg.saw.multimode.clone();
    let r = response_around(&design, design.mirror_center_frequency(), k.response_span, k.response_points);
    ctx.out.write("multimode_response.csv", &r.to_csv())?;
    ctx.out.write("multimode_modes.csv", &modes_csv(&r))?;
    ctx.out.plot("multimode_response.svg", || response_plot("Multimode SAW resonator", &r))?;
    let modes: Vec<f64> = match r.stopband {
        Some((lo, hi)) => r.modes.iter().map(|m| m.frequency).filter(|f| *f > lo && *f < hi).collect(),
        None => Vec::new(),
    };
    ctx.metric("multimode_modes", modes.len() as f64);
    ctx.checks.push(Check::range("multimode_modes", modes.len() as f64, 3.0, f64::INFINITY));
    let fsr = if modes.len() >= 2 {
        (modes[modes.len() - 1] - modes[0]) / (modes.len() - 1) as f64
    } else {
        0.0
    };
    ctx.metric("multimode_fsr_mhz", fsr * 1e-6);
    ctx.checks.push(Check::around("multimode_fsr_mhz", fsr * 1e-6, 44.0, 4.0));
    if modes.is_empty() {
        ctx.warnings.push("no confined modes; multimode chevron skipped".into());
        return Ok(());
    }

    let node = ctx.cfg.device.a.clone();
    let sweep = grid(modes[0] - k.sweep_margin, modes[modes.len() - 1] + k.sweep_margin + 1.0, k.sweep_step);
    let times = grid(0.0, k.time_max, k.time_step);
    let exact = multimode_swaps(&modes, node.g_ge, &sweep, &times, node.qubit_t1_swap, node.resonator_t1)
        .stage("multimode swaps")?;
    let mut rng = stream(ctx.seed, "multimode", 0);
    let measured = exact
        .iter()
        .map(|row| row.iter().map(|&p| measure(p, ctx.shots, &mut rng)).collect::<Result<Vec<f64>>>())
        .collect::<Result<Vec<_>>>()?;
    ctx.out.write("multimode_chevron.csv", &map_csv("qubit_frequency_hz", &sweep, &times, &measured))?;
    let ghz: Vec<f64> = sweep.iter().map(|f| f * 1e-9).collect();
    let t_ns: Vec<f64> = times.iter().map(|t| t * 1e9).collect();
    ctx.out.plot("multimode_chevron.svg", || {
        heatmap("Qubit swaps with a multimode resonator", "interaction time (ns)", "qubit frequency (GHz)", &t_ns, &ghz, &measured)
    })?;
    Ok(())
}

fn run_displacement(ctx: &mut Ctx) -> Result<()> {
    let k = ctx.cfg.scenarios.displacement.clone();
    let amplitudes: Vec<f64> = (0..k.points).map(|i| i as f64 / (k.points - 1) as f64).collect();
    let mut series = Vec::new();
    for node in Node::ALL {
        let cal = calibrate_displacement(&ctx.cfg.device, node, &amplitudes, k.full_scale, k.sigma, k.levels)
            .stage("displacement calibration")?;
        let t = tag(node);
        let line: Vec<f64> = amplitudes.iter().map(|a| cal.slope * a * a).collect();
        ctx.out.write(
            &format!("displacement_{t}.csv"),
            &csv(
                "amplitude,mean_phonons,quadratic_model",
                (0..amplitudes.len()).map(|i| vec![amplitudes[i], cal.mean_phonons[i], line[i]]),
            ),
        )?;
        let ratio = cal.slope / k.full_scale.powi(2);
        ctx.metric(&format!("displacement_slope_{t}"), cal.slope);
        ctx.metric(&format!("displacement_residual_{t}"), cal.residual);
        ctx.metric(&format!("displacement_linear_range_{t}"), cal.linear_range);
        ctx.checks.push(Check::around(&format!("displacement_scale_{t}"), ratio, 1.0, 0.05));
        ctx.checks.push(Check::range(&format!("displacement_residual_{t}"), cal.residual, 0.0, 0.02));
        let up = t.to_uppercase();
        series.push(Series::dots(&format!("node {up}"), scaled(&amplitudes, &cal.mean_phonons, 1.0, 1.0)));
        series.push(Series::line(&format!("node {up} |α|² fit"), scaled(&amplitudes, &line, 1.0, 1.0)));
    }
    ctx.out.plot("displacement.svg", || line_plot("Displacement calibration", "drive amplitude", "⟨n⟩", &series))?;
    Ok(())
}
