use std::f64::consts::TAU;

use crate::dynamics::DeviceParams;
use crate::error::{Error, Result};
use crate::hilbert::C64;
use crate::pulses::{Node, Payload, PulseSchedule, Shape, Transition};

/// Target of a finite-duration drive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DriveTarget {
    Qubit(Node, Transition),
    Resonator(Node),
}

/// Truncated Gaussian drive. For a qubit target the time integral of the Rabi
/// rate equals `area`; for a resonator it is the displacement `area · e^{iφ}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Drive {
    pub target: DriveTarget,
    pub t0: f64,
    pub t1: f64,
    pub sigma: f64,
    pub area: f64,
    pub phase: f64,
    /// Carrier frequency (Hz).
    pub carrier: f64,
    norm: f64,
}

impl Drive {
    fn new(target: DriveTarget, t0: f64, t1: f64, sigma: f64, area: f64, phase: f64, carrier: f64) -> Self {
        // Simpson integral of the unnormalized envelope over the window
        let m = 400;
        let h = (t1 - t0) / m as f64;
        let mut s = 0.0;
        for i in 0..=m {
            let w = if i == 0 || i == m { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * gaussian(t0 + i as f64 * h, 0.5 * (t0 + t1), sigma);
        }
        let norm = s * h / 3.0;
        Self {
            target,
            t0,
            t1,
            sigma,
            area,
            phase,
            carrier,
            norm,
        }
    }

    /// Envelope value with unit time integral over the window (s⁻¹).
    pub fn envelope(&self, t: f64) -> f64 {
        if t < self.t0 || t > self.t1 {
            return 0.0;
        }
        gaussian(t, 0.5 * (self.t0 + self.t1), self.sigma) / self.norm
    }
}

fn gaussian(t: f64, center: f64, sigma: f64) -> f64 {
    let x = (t - center) / sigma;
    (-0.5 * x * x).exp()
}

/// Ideal zero-duration operation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EventKind {
    /// Rotation by `angle`; `phase` is referenced to the carrier at the
    /// transition frequency, so the frame-picture phase is
    /// `phase + (ω_c − ω_frame) t`.
    QubitRotation {
        node: Node,
        transition: Transition,
        angle: f64,
        phase: f64,
        carrier: f64,
    },
    Displacement { node: Node, alpha: C64, carrier: f64 },
    Measure,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    pub t: f64,
    pub kind: EventKind,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CouplerWindow {
    pub t0: f64,
    pub t1: f64,
    pub amplitude: f64,
    pub rise: f64,
}

impl CouplerWindow {
    fn value(&self, t: f64) -> f64 {
        if t <= self.t0 || t >= self.t1 {
            return 0.0;
        }
        let ramp = ((t - self.t0) / self.rise).min((self.t1 - t) / self.rise).min(1.0);
        self.amplitude * ramp
    }
}

/// Time-resolved controls derived from a schedule: qubit g-e frequencies
/// (piecewise linear), coupler gates, finite drives and instantaneous events.
#[derive(Clone, Debug)]
pub struct ControlFrame {
    knots: [Vec<(f64, f64)>; 2],
    integral: [Vec<f64>; 2],
    couplers: [Vec<CouplerWindow>; 2],
    drives: Vec<Drive>,
    events: Vec<Event>,
    duration: f64,
}

impl ControlFrame {
    pub fn from_schedule(device: &DeviceParams, schedule: &PulseSchedule) -> Result<Self> {
        let mut knots = [vec![(0.0, device.a.qubit_idle)], vec![(0.0, device.b.qubit_idle)]];
        let mut couplers: [Vec<CouplerWindow>; 2] = [Vec::new(), Vec::new()];
        for seg in schedule.segments() {
            match seg.payload {
                Payload::FrequencyRamp { to_hz } => {
                    let node = seg.channel.node().expect("Z channel has a node");
                    let k = &mut knots[node.index()];
                    let current = k.last().expect("non-empty").1;
                    k.push((seg.t0, current));
                    k.push((seg.end(), to_hz));
                }
                Payload::Coupler { amplitude, rise } => {
                    let node = seg.channel.node().expect("coupler channel has a node");
                    couplers[node.index()].push(CouplerWindow {
                        t0: seg.t0,
                        t1: seg.end(),
                        amplitude,
                        rise,
                    });
                }
                _ => {}
            }
        }
        let integral = knots.clone().map(|k| cumulative(&k));
        let mut frame = Self {
            knots,
            integral,
            couplers,
            drives: Vec::new(),
            events: Vec::new(),
            duration: schedule.duration(),
        };

        for seg in schedule.segments() {
            let node = seg.channel.node();
            match seg.payload {
                Payload::QubitPulse {
                    transition,
                    angle,
                    phase,
                    shape,
                } => {
                    let node = node.expect("XY channel has a node");
                    let center = seg.t0 + 0.5 * seg.duration;
                    let carrier = frame.transition_frequency(device, node, transition, center);
                    match shape {
                        Shape::Instant => frame.events.push(Event {
                            t: seg.t0,
                            kind: EventKind::QubitRotation {
                                node,
                                transition,
                                angle,
                                phase,
                                carrier,
                            },
                        }),
                        Shape::Gaussian { sigma } => frame.drives.push(Drive::new(
                            DriveTarget::Qubit(node, transition),
                            seg.t0,
                            seg.end(),
                            sigma,
                            angle,
                            phase,
                            carrier,
                        )),
                    }
                }
                Payload::Displacement { alpha, shape } => {
                    let node = node.expect("drive channel has a node");
                    let carrier = device.node(node).resonator;
                    match shape {
                        Shape::Instant => frame.events.push(Event {
                            t: seg.t0,
                            kind: EventKind::Displacement { node, alpha, carrier },
                        }),
                        Shape::Gaussian { sigma } => frame.drives.push(Drive::new(
                            DriveTarget::Resonator(node),
                            seg.t0,
                            seg.end(),
                            sigma,
                            alpha.norm(),
                            alpha.arg(),
                            carrier,
                        )),
                    }
                }
                Payload::Measure => frame.events.push(Event {
                    t: seg.t0,
                    kind: EventKind::Measure,
                }),
                _ => {}
            }
        }
        frame.events.sort_by(|a, b| a.t.total_cmp(&b.t));
        frame.validate()?;
        Ok(frame)
    }

    fn validate(&self) -> Result<()> {
        for k in &self.knots {
            for w in k.windows(2) {
                if w[1].0 < w[0].0 {
                    return Err(Error::Schedule("frequency ramps out of order".into()));
                }
            }
        }
        for c in self.couplers.iter().flatten() {
            if !(0.0..=1.0).contains(&c.amplitude) || !(c.rise > 0.0) {
                return Err(Error::Schedule(format!("invalid coupler window {c:?}")));
            }
        }
        Ok(())
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn drives(&self) -> &[Drive] {
        &self.drives
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn coupler_windows(&self, node: Node) -> &[CouplerWindow] {
        &self.couplers[node.index()]
    }

    /// Qubit g-e frequency (Hz).
    pub fn qubit_frequency(&self, node: Node, t: f64) -> f64 {
        let k = &self.knots[node.index()];
        let i = segment_index(k, t);
        if i + 1 >= k.len() {
            return k[i].1;
        }
        let (t0, f0) = k[i];
        let (t1, f1) = k[i + 1];
        if t1 <= t0 {
            return f1;
        }
        f0 + (f1 - f0) * ((t - t0) / (t1 - t0)).clamp(0.0, 1.0)
    }

    /// `∫₀ᵗ 2π f_ge(s) ds` (rad).
    pub fn qubit_phase(&self, node: Node, t: f64) -> f64 {
        let k = &self.knots[node.index()];
        let cum = &self.integral[node.index()];
        let i = segment_index(k, t);
        let (t0, f0) = k[i];
        let dt = t - t0;
        let partial = if i + 1 < k.len() && k[i + 1].0 > t0 {
            let slope = (k[i + 1].1 - f0) / (k[i + 1].0 - t0);
            dt * (f0 + 0.5 * slope * dt)
        } else {
            dt * f0
        };
        TAU * (cum[i] + partial)
    }

    pub fn transition_frequency(&self, device: &DeviceParams, node: Node, transition: Transition, t: f64) -> f64 {
        let f = self.qubit_frequency(node, t);
        match transition {
            Transition::Ge => f,
            Transition::Ef => f + device.node(node).anharmonicity,
        }
    }

    /// Coupler gate λ(t) ∈ [0, 1].
    pub fn coupler(&self, node: Node, t: f64) -> f64 {
        self.couplers[node.index()].iter().map(|c| c.value(t)).sum::<f64>().min(1.0)
    }

    /// Times at which a control changes slope or an event happens.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut out = vec![0.0, self.duration];
        for k in &self.knots {
            out.extend(k.iter().map(|p| p.0));
        }
        for c in self.couplers.iter().flatten() {
            out.extend([c.t0, c.t0 + c.rise, c.t1 - c.rise, c.t1]);
        }
        for d in &self.drives {
            out.extend([d.t0, d.t1]);
        }
        out.extend(self.events.iter().map(|e| e.t));
        out
    }
}

/// Index of the knot segment containing `t` (last knot with time ≤ t).
fn segment_index(k: &[(f64, f64)], t: f64) -> usize {
    match k.iter().rposition(|p| p.0 <= t) {
        Some(i) => i,
        None => 0,
    }
}

fn cumulative(k: &[(f64, f64)]) -> Vec<f64> {
    let mut out = Vec::with_capacity(k.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in k.windows(2) {
        acc += (w[1].0 - w[0].0) * 0.5 * (w[0].1 + w[1].1);
        out.push(acc);
    }
    out
}

/// Rotation `exp(−i θ/2 (e^{−iφ} X† + e^{iφ} X))` restricted to the two
/// levels of `transition`; returns the 2×2 block `[[u00, u01], [u10, u11]]`
/// in the (lower, upper) basis.
pub(crate) fn rotation_block(angle: f64, phase: f64) -> [[C64; 2]; 2] {
    let c = C64::new((angle / 2.0).cos(), 0.0);
    let s = (angle / 2.0).sin();
    let minus_i = C64::new(0.0, -1.0);
    [
        [c, minus_i * s * C64::from_polar(1.0, phase)],
        [minus_i * s * C64::from_polar(1.0, -phase), c],
    ]
}
