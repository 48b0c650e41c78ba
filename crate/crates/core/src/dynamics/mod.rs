//! Hamiltonian assembly and Lindblad integration for the two-node device.
//!
//! States are integrated in an interaction picture with respect to the
//! diagonal part of the Hamiltonian, so the RK4 step only has to resolve the
//! couplings and drives. Reported states and observables are in the chosen
//! frame (per-node resonator frame or lab frame).

mod frame;
mod master;
mod params;
pub(crate) mod sparse;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use frame::{ControlFrame, CouplerWindow, Drive, DriveTarget, Event, EventKind};
pub use master::{
    build_hamiltonian, collapse_operators, evolve, Diagnostics, EmissionRate, EvolveOptions, Frame, Trajectory,
};
pub use params::{DeviceParams, NodeParams};

use crate::error::{Error, Result};
use crate::hilbert::{build_space, CMatrix, CVector, DensityMatrix, C64};
use crate::pulses::{Channel, Node, Payload, ProtocolConfig, PulseSchedule, Segment, Shape, Transition};

/// Qubit excited-state population versus detuning and interaction time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChevronMap {
    pub node: Node,
    /// Qubit minus resonator frequency (Hz).
    pub detunings: Vec<f64>,
    /// Effective interaction times (s).
    pub times: Vec<f64>,
    /// `excited[i][k]` at `detunings[i]`, `times[k]`.
    pub excited: Vec<Vec<f64>>,
}

/// Schedule for one chevron column: π pulse at idle, move to
/// `resonator + detuning`, then hold the coupler at full amplitude.
///
/// Returns the schedule and the time origin of the interaction: the coupler
/// start plus half a rise time, where the ramp has delivered half its area.
pub fn chevron_schedule(
    device: &DeviceParams,
    config: &ProtocolConfig,
    node: Node,
    detuning: f64,
    max_time: f64,
) -> Result<(PulseSchedule, f64)> {
    let target = device.node(node).resonator + detuning;
    let rise = config.coupler_rise;
    let ramp = config.ramp_time;
    let segments = vec![
        Segment {
            channel: node.xy(),
            t0: 0.0,
            duration: 0.0,
            payload: Payload::QubitPulse {
                transition: Transition::Ge,
                angle: std::f64::consts::PI,
                phase: 0.0,
                shape: Shape::Instant,
            },
        },
        Segment {
            channel: node.z(),
            t0: 0.0,
            duration: ramp,
            payload: Payload::FrequencyRamp { to_hz: target },
        },
        Segment {
            channel: node.coupler(),
            t0: ramp,
            duration: max_time + 2.0 * rise,
            payload: Payload::Coupler { amplitude: 1.0, rise },
        },
        Segment {
            channel: Channel::Readout,
            t0: ramp + max_time + 2.0 * rise,
            duration: 0.0,
            payload: Payload::Measure,
        },
    ];
    Ok((PulseSchedule::new(segments)?, ramp + 0.5 * rise))
}

/// Vacuum-Rabi chevron of one node; detuning columns run in parallel.
pub fn chevron(
    device: &DeviceParams,
    config: &ProtocolConfig,
    node: Node,
    detunings: &[f64],
    times: &[f64],
    options: &EvolveOptions,
) -> Result<ChevronMap> {
    if detunings.is_empty() || times.is_empty() {
        return Err(Error::Config("chevron grids must be non-empty".into()));
    }
    if times.iter().any(|t| !(*t >= 0.0)) {
        return Err(Error::Config("chevron times must be non-negative".into()));
    }
    let max_time = times.iter().copied().fold(0.0, f64::max);
    let layout = build_space(3, 2)?;
    let rho0 = DensityMatrix::basis(layout, &[0, 0, 0, 0])?;
    let excited = detunings
        .par_iter()
        .map(|&det| {
            let (schedule, origin) = chevron_schedule(device, config, node, det, max_time)?;
            let opts = EvolveOptions {
                sample_times: times.iter().map(|t| t + origin).collect(),
                checkpoint_times: Vec::new(),
                ..options.clone()
            };
            let traj = evolve(device, &rho0, &schedule, &opts)?;
            Ok((0..times.len()).map(|k| traj.excited(k, node)).collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    Ok(ChevronMap {
        node,
        detunings: detunings.to_vec(),
        times: times.to_vec(),
        excited,
    })
}

/// Qubit `|e⟩` population for a qubit coupled with strength `g` (Hz) to several
/// resonator modes, in the single-excitation subspace. Decay enters through a
/// non-Hermitian effective Hamiltonian with qubit lifetime `qubit_t1` and mode
/// lifetime `mode_t1`. Returns `excited[i][k]` at `qubit_frequencies[i]`, `times[k]`.
pub fn multimode_swaps(
    modes: &[f64],
    g: f64,
    qubit_frequencies: &[f64],
    times: &[f64],
    qubit_t1: f64,
    mode_t1: f64,
) -> Result<Vec<Vec<f64>>> {
    if modes.is_empty() || times.len() < 2 {
        return Err(Error::Config("multimode swaps need modes and at least two times".into()));
    }
    let dt = times[1] - times[0];
    if !(dt > 0.0) || times.windows(2).any(|w| ((w[1] - w[0]) - dt).abs() > 1e-6 * dt) {
        return Err(Error::Config("multimode swap times must be evenly spaced".into()));
    }
    if !(qubit_t1 > 0.0 && mode_t1 > 0.0) {
        return Err(Error::Config("lifetimes must be positive".into()));
    }
    let reference = modes[0];
    let n = modes.len() + 1;
    qubit_frequencies
        .par_iter()
        .map(|&fq| {
            let mut h = CMatrix::zeros(n, n);
            let w = |f: f64| std::f64::consts::TAU * (f - reference);
            h[(0, 0)] = C64::new(w(fq), -0.5 / qubit_t1);
            for (k, &fm) in modes.iter().enumerate() {
                h[(k + 1, k + 1)] = C64::new(w(fm), -0.5 / mode_t1);
                h[(0, k + 1)] = C64::new(std::f64::consts::TAU * g, 0.0);
                h[(k + 1, 0)] = C64::new(std::f64::consts::TAU * g, 0.0);
            }
            let step = (h * C64::new(0.0, -dt)).exp();
            let mut psi = CVector::zeros(n);
            psi[0] = C64::new(1.0, 0.0);
            let mut t = 0.0;
            while t + 0.5 * dt < times[0] {
                psi = &step * psi;
                t += dt;
            }
            let mut out = Vec::with_capacity(times.len());
            for _ in times {
                out.push(psi[0].norm_sqr());
                psi = &step * &psi;
            }
            Ok(out)
        })
        .collect()
}
