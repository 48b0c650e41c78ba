//! Pulse schedules and the protocol library: Bell and N00N preparation,
//! N00M variant, tomography readout swaps, and resonator lifetime / Ramsey
//! sequences.
//!
//! Frequencies are linear (Hz) and times in seconds throughout.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlFrame, DeviceParams};
use crate::error::{Error, Result};
use crate::hilbert::C64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Node {
    A,
    B,
}

impl Node {
    pub const ALL: [Node; 2] = [Node::A, Node::B];

    pub fn index(self) -> usize {
        match self {
            Node::A => 0,
            Node::B => 1,
        }
    }

    pub fn other(self) -> Node {
        match self {
            Node::A => Node::B,
            Node::B => Node::A,
        }
    }

    pub fn qubit(self) -> usize {
        self.index()
    }

    pub fn resonator(self) -> usize {
        2 + self.index()
    }

    pub fn xy(self) -> Channel {
        match self {
            Node::A => Channel::QaXy,
            Node::B => Channel::QbXy,
        }
    }

    pub fn z(self) -> Channel {
        match self {
            Node::A => Channel::QaZ,
            Node::B => Channel::QbZ,
        }
    }

    pub fn coupler(self) -> Channel {
        match self {
            Node::A => Channel::Ga,
            Node::B => Channel::Gb,
        }
    }

    pub fn drive(self) -> Channel {
        match self {
            Node::A => Channel::Da,
            Node::B => Channel::Db,
        }
    }
}

impl std::fmt::Display for Node {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Node::A => write!(f, "A"),
            Node::B => write!(f, "B"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Channel {
    #[serde(rename = "QA-XY")]
    QaXy,
    #[serde(rename = "QB-XY")]
    QbXy,
    #[serde(rename = "QA-Z")]
    QaZ,
    #[serde(rename = "QB-Z")]
    QbZ,
    #[serde(rename = "GA")]
    Ga,
    #[serde(rename = "GB")]
    Gb,
    #[serde(rename = "DA")]
    Da,
    #[serde(rename = "DB")]
    Db,
    #[serde(rename = "M")]
    Readout,
}

impl Channel {
    pub fn node(self) -> Option<Node> {
        match self {
            Channel::QaXy | Channel::QaZ | Channel::Ga | Channel::Da => Some(Node::A),
            Channel::QbXy | Channel::QbZ | Channel::Gb | Channel::Db => Some(Node::B),
            Channel::Readout => None,
        }
    }
}

/// Qubit transition addressed by an XY pulse.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transition {
    Ge,
    Ef,
}

impl Transition {
    pub fn lower_level(self) -> usize {
        match self {
            Transition::Ge => 0,
            Transition::Ef => 1,
        }
    }
}

/// Pulse envelope. `Instant` pulses are ideal unitaries of zero duration;
/// Gaussian pulses are centred in their segment and truncated at its edges.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum Shape {
    Instant,
    Gaussian { sigma: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    /// Rotation by `angle` about the equatorial axis at `phase`.
    QubitPulse {
        transition: Transition,
        angle: f64,
        phase: f64,
        #[serde(flatten)]
        shape: Shape,
    },
    /// Linear ramp of the qubit g-e frequency to `to_hz` over the segment.
    FrequencyRamp { to_hz: f64 },
    /// Coupler gate with linear rise and fall of `rise` seconds.
    Coupler { amplitude: f64, rise: f64 },
    /// Resonator displacement `D(α)`.
    Displacement {
        alpha: C64,
        #[serde(flatten)]
        shape: Shape,
    },
    Measure,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub channel: Channel,
    pub t0: f64,
    pub duration: f64,
    pub payload: Payload,
}

impl Segment {
    pub fn end(&self) -> f64 {
        self.t0 + self.duration
    }

    fn check(&self) -> Result<()> {
        if !(self.t0.is_finite() && self.duration.is_finite()) || self.t0 < 0.0 || self.duration < 0.0 {
            return Err(Error::Schedule(format!(
                "segment on {:?} has invalid timing t0={} duration={}",
                self.channel, self.t0, self.duration
            )));
        }
        let kind_ok = match (&self.payload, self.channel) {
            (Payload::QubitPulse { .. }, Channel::QaXy | Channel::QbXy) => true,
            (Payload::FrequencyRamp { .. }, Channel::QaZ | Channel::QbZ) => true,
            (Payload::Coupler { .. }, Channel::Ga | Channel::Gb) => true,
            (Payload::Displacement { .. }, Channel::Da | Channel::Db) => true,
            (Payload::Measure, Channel::Readout) => true,
            _ => false,
        };
        if !kind_ok {
            return Err(Error::Schedule(format!(
                "payload {:?} not allowed on channel {:?}",
                self.payload, self.channel
            )));
        }
        match self.payload {
            Payload::QubitPulse { shape, .. } | Payload::Displacement { shape, .. } => match shape {
                Shape::Instant if self.duration != 0.0 => {
                    return Err(Error::Schedule("instant pulse must have zero duration".into()))
                }
                Shape::Gaussian { sigma } if !(sigma > 0.0) || self.duration <= 0.0 => {
                    return Err(Error::Schedule("gaussian pulse needs sigma > 0 and a window".into()))
                }
                _ => {}
            },
            Payload::FrequencyRamp { to_hz } => {
                if !(to_hz > 0.0) {
                    return Err(Error::Schedule(format!("ramp target {to_hz} Hz must be positive")));
                }
                if self.duration <= 0.0 {
                    return Err(Error::Schedule("frequency ramp needs a finite slope (duration > 0)".into()));
                }
            }
            Payload::Coupler { amplitude, rise } => {
                if !(0.0..=1.0).contains(&amplitude) {
                    return Err(Error::Schedule(format!("coupler amplitude {amplitude} outside [0, 1]")));
                }
                if !(rise > 0.0) || 2.0 * rise > self.duration * (1.0 + 1e-12) {
                    return Err(Error::Schedule(format!(
                        "coupler rise {rise} must be positive and fit twice in {}",
                        self.duration
                    )));
                }
            }
            Payload::Measure => {}
        }
        Ok(())
    }
}

/// Ordered list of timed control segments, validated against channel overlap.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseSchedule {
    segments: Vec<Segment>,
}

impl PulseSchedule {
    pub fn new(mut segments: Vec<Segment>) -> Result<Self> {
        segments.sort_by(|a, b| a.t0.total_cmp(&b.t0).then(a.channel.cmp(&b.channel)));
        for s in &segments {
            s.check()?;
        }
        let schedule = Self { segments };
        schedule.validate_overlap()?;
        Ok(schedule)
    }

    pub fn empty() -> Self {
        Self { segments: Vec::new() }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn on(&self, channel: Channel) -> impl Iterator<Item = &Segment> {
        self.segments.iter().filter(move |s| s.channel == channel)
    }

    pub fn duration(&self) -> f64 {
        self.segments.iter().map(Segment::end).fold(0.0, f64::max)
    }

    /// Segments on one channel must be disjoint; a zero-length segment may
    /// touch but not sit strictly inside another, and two zero-length
    /// segments may not share a time.
    pub fn validate_overlap(&self) -> Result<()> {
        const EPS: f64 = 1e-15;
        for (i, a) in self.segments.iter().enumerate() {
            for b in &self.segments[i + 1..] {
                if a.channel != b.channel {
                    continue;
                }
                let overlap = if a.duration == 0.0 && b.duration == 0.0 {
                    (a.t0 - b.t0).abs() < EPS
                } else if a.duration == 0.0 {
                    a.t0 > b.t0 + EPS && a.t0 < b.end() - EPS
                } else if b.duration == 0.0 {
                    b.t0 > a.t0 + EPS && b.t0 < a.end() - EPS
                } else {
                    a.t0 < b.end() - EPS && b.t0 < a.end() - EPS
                };
                if overlap {
                    return Err(Error::Schedule(format!(
                        "overlapping segments on {:?} at t = {:e} and {:e}",
                        a.channel, a.t0, b.t0
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: PulseSchedule = serde_json::from_str(s)?;
        Self::new(raw.segments)
    }
}

/// Timing and coupler knobs shared by the protocol builders.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    /// Qubit frequency move time (s).
    pub ramp_time: f64,
    /// Coupler rise/fall time (s).
    pub coupler_rise: f64,
    /// Full qubit-resonator swap durations for nodes A, B (s), coupler edges included.
    pub swap_time: [f64; 2],
    /// Frequency at which the qubits meet for the half-swap (Hz); defaults to qubit B idle.
    pub half_swap_frequency: Option<f64>,
    /// Qubit-qubit hold time (s); defaults to 1/(8 g_q).
    pub half_swap_time: Option<f64>,
    /// Coupler amplitudes for the f0 <-> e1 stage of the N00N protocol.
    pub noon_stage1_coupler: [f64; 2],
    /// Coupler amplitudes for the e1 <-> g2 stage; defaults to the Bell swap amplitudes.
    pub noon_stage2_coupler: Option<[f64; 2]>,
    /// Shape of qubit XY pulses.
    pub xy_shape: Shape,
    /// Shift swap frequencies to cancel second-order level shifts.
    pub dispersive_correction: bool,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            ramp_time: 2e-9,
            coupler_rise: 1e-9,
            swap_time: [44.8e-9, 36.4e-9],
            half_swap_frequency: None,
            half_swap_time: None,
            noon_stage1_coupler: [1.0, 1.0],
            noon_stage2_coupler: None,
            xy_shape: Shape::Instant,
            dispersive_correction: true,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.ramp_time, self.coupler_rise, self.swap_time[0], self.swap_time[1]];
        if positive.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Config("protocol times must be positive".into()));
        }
        for a in self.noon_stage1_coupler.iter().chain(self.noon_stage2_coupler.iter().flatten()) {
            if !(*a > 0.0 && *a <= 1.0) {
                return Err(Error::Config(format!("coupler amplitude {a} outside (0, 1]")));
            }
        }
        if let Shape::Gaussian { sigma } = self.xy_shape {
            if !(sigma > 0.0) {
                return Err(Error::Config("gaussian sigma must be positive".into()));
            }
        }
        Ok(())
    }

    /// Coupler amplitude that makes the configured swap duration a full
    /// `|e0⟩ ↔ |g1⟩` swap: `λ g (T − rise) = 1/4`.
    pub fn swap_coupler(&self, device: &DeviceParams, node: Node) -> Result<f64> {
        let g = device.node(node).g_ge;
        let effective = self.swap_time[node.index()] - self.coupler_rise;
        let lambda = 1.0 / (4.0 * g * effective);
        if !(lambda > 0.0 && lambda <= 1.0 + 1e-12) {
            return Err(Error::Config(format!(
                "swap time {:e} s on node {node} is shorter than 1/(4 g_ge)",
                self.swap_time[node.index()]
            )));
        }
        Ok(lambda.min(1.0))
    }

    pub fn half_swap_duration(&self, device: &DeviceParams) -> f64 {
        self.half_swap_time.unwrap_or(1.0 / (8.0 * device.g_q))
    }

    /// Gaussian window spans ±2σ.
    fn xy_window(&self) -> f64 {
        match self.xy_shape {
            Shape::Instant => 0.0,
            Shape::Gaussian { sigma } => 4.0 * sigma,
        }
    }
}

/// Incremental builder; keeps per-node qubit frequency so ramps can be skipped
/// when the qubit is already at its target.
struct Builder<'a> {
    device: &'a DeviceParams,
    config: &'a ProtocolConfig,
    segments: Vec<Segment>,
    freq: [f64; 2],
}

impl<'a> Builder<'a> {
    fn new(device: &'a DeviceParams, config: &'a ProtocolConfig) -> Self {
        Self {
            device,
            config,
            segments: Vec::new(),
            freq: [device.a.qubit_idle, device.b.qubit_idle],
        }
    }

    /// XY pulse starting at `t`; returns its end time.
    fn xy(&mut self, node: Node, t: f64, transition: Transition, angle: f64, phase: f64) -> f64 {
        let duration = self.config.xy_window();
        self.segments.push(Segment {
            channel: node.xy(),
            t0: t,
            duration,
            payload: Payload::QubitPulse {
                transition,
                angle,
                phase,
                shape: self.config.xy_shape,
            },
        });
        t + duration
    }

    /// Ramp the qubit to `to_hz` starting at `t`; returns the arrival time.
    fn ramp(&mut self, node: Node, t: f64, to_hz: f64) -> f64 {
        if (self.freq[node.index()] - to_hz).abs() < 1e-3 {
            return t;
        }
        self.freq[node.index()] = to_hz;
        self.segments.push(Segment {
            channel: node.z(),
            t0: t,
            duration: self.config.ramp_time,
            payload: Payload::FrequencyRamp { to_hz },
        });
        t + self.config.ramp_time
    }

    fn coupler(&mut self, node: Node, t: f64, duration: f64, amplitude: f64) -> f64 {
        if duration <= 0.0 {
            return t;
        }
        let rise = self.config.coupler_rise.min(duration / 2.0);
        self.segments.push(Segment {
            channel: node.coupler(),
            t0: t,
            duration,
            payload: Payload::Coupler { amplitude, rise },
        });
        t + duration
    }

    fn displacement(&mut self, node: Node, t: f64, alpha: C64) {
        if alpha.norm() == 0.0 {
            return;
        }
        self.segments.push(Segment {
            channel: node.drive(),
            t0: t,
            duration: 0.0,
            payload: Payload::Displacement {
                alpha,
                shape: Shape::Instant,
            },
        });
    }

    fn measure(&mut self, t: f64) {
        self.segments.push(Segment {
            channel: Channel::Readout,
            t0: t,
            duration: 0.0,
            payload: Payload::Measure,
        });
    }

    fn build(self) -> Result<PulseSchedule> {
        PulseSchedule::new(self.segments)
    }

    fn g_q_shift(&self, f_self: f64, f_other: f64) -> f64 {
        if !self.config.dispersive_correction {
            return 0.0;
        }
        let g = self.device.g_q;
        g * g / (f_self - f_other)
    }

    /// Qubit frequency for a resonant `|e0⟩ ↔ |g1⟩` swap with the other qubit at `f_other`.
    fn ge_swap_frequency(&self, node: Node, f_other: f64, lambda: f64, excited_phonons: usize) -> f64 {
        let p = self.device.node(node);
        let mut shift = self.g_q_shift(p.resonator, f_other);
        if self.config.dispersive_correction && excited_phonons > 0 {
            // |e,n⟩ also couples to |f,n−1⟩ through g_ef, detuned by −η
            let g = lambda * p.g_ef;
            shift += g * g * excited_phonons as f64 / (-p.anharmonicity);
        }
        p.resonator - shift
    }

    /// Qubit g-e frequency placing the e-f transition on the resonator with
    /// the other qubit at `f_other`.
    fn ef_swap_frequency(&self, node: Node, f_other: f64, lambda: f64) -> f64 {
        let p = self.device.node(node);
        let bare = p.resonator - p.anharmonicity;
        if !self.config.dispersive_correction {
            return bare;
        }
        let g = lambda * p.g_ge;
        // |e1⟩ pushed by √2·g_ge coupling to |g2⟩, plus the qubit-qubit shift of |e⟩
        let s = 2.0 * g * g / (-p.anharmonicity) + self.g_q_shift(bare, f_other);
        bare + s
    }
}

const BELL_SETTLE: f64 = 20e-9;

/// Bell-state protocol: π on QA, qubit half-swap, parallel qubit→resonator
/// swaps. Ideal output `(|10⟩ + e^{iφ}|01⟩)/√2` on the resonators.
pub fn bell_sequence(device: &DeviceParams, config: &ProtocolConfig) -> Result<PulseSchedule> {
    config.validate()?;
    let mut b = Builder::new(device, config);
    let lambda = [config.swap_coupler(device, Node::A)?, config.swap_coupler(device, Node::B)?];
    let f_swap = [
        b.ge_swap_frequency(Node::A, device.b.resonator, lambda[0], 0),
        b.ge_swap_frequency(Node::B, device.a.resonator, lambda[1], 0),
    ];
    let t = bell_stage(&mut b, f_swap, BELL_SETTLE)?;
    let t = parallel_stage(&mut b, t, f_swap, |n| (config.swap_time[n.index()], lambda[n.index()]));
    let mut end = t;
    for node in Node::ALL {
        end = end.max(b.ramp(node, t, device.node(node).qubit_idle));
    }
    b.measure(end);
    b.build()
}

/// π on QA, the qubit-qubit half-swap, then both qubits moved to `release`;
/// returns the time both have arrived.
fn bell_stage(b: &mut Builder<'_>, release: [f64; 2], settle: f64) -> Result<f64> {
    let hold = match b.config.half_swap_time {
        Some(t) => t,
        None => half_swap_hold(b.device, b.config, release, settle)?,
    };
    Ok(bell_stage_with_hold(b, release, hold))
}

fn bell_stage_with_hold(b: &mut Builder<'_>, release: [f64; 2], hold: f64) -> f64 {
    let meet = b.config.half_swap_frequency.unwrap_or(b.device.b.qubit_idle);
    let t = b.xy(Node::A, 0.0, Transition::Ge, PI, 0.0);
    let start = Node::ALL.map(|n| b.ramp(n, t, meet));
    let t = start[0].max(start[1]) + hold;
    let end = Node::ALL.map(|n| b.ramp(n, t, release[n.index()]));
    end[0].max(end[1])
}

/// Population of `|ge⟩` after the Bell stage with the given hold, from the
/// single-excitation two-level problem `{|eg⟩, |ge⟩}` including ramp
/// transients. Averaged over `settle` seconds after release, or taken at the
/// release time if `settle` is zero.
fn half_swap_transfer(
    device: &DeviceParams,
    config: &ProtocolConfig,
    release: [f64; 2],
    settle: f64,
    hold: f64,
) -> Result<f64> {
    let mut b = Builder::new(device, config);
    let end = bell_stage_with_hold(&mut b, release, hold);
    let schedule = b.build()?;
    let frame = ControlFrame::from_schedule(device, &schedule)?;
    let t_end = end + settle;
    let g = std::f64::consts::TAU * device.g_q;
    let theta = |t: f64| frame.qubit_phase(Node::A, t) - frame.qubit_phase(Node::B, t);
    let deriv = |t: f64, c: [C64; 2]| {
        let w = C64::from_polar(1.0, theta(t));
        let mi = C64::new(0.0, -g);
        [mi * w * c[1], mi * w.conj() * c[0]]
    };
    let steps = (t_end / 2e-12).ceil().max(1.0) as usize;
    let h = t_end / steps as f64;
    let mut c = [C64::new(1.0, 0.0), C64::new(0.0, 0.0)];
    let add = |c: [C64; 2], k: [C64; 2], s: f64| [c[0] + k[0] * s, c[1] + k[1] * s];
    let mut avg = 0.0;
    let mut count = 0usize;
    for i in 0..steps {
        let t = i as f64 * h;
        let k1 = deriv(t, c);
        let k2 = deriv(t + 0.5 * h, add(c, k1, 0.5 * h));
        let k3 = deriv(t + 0.5 * h, add(c, k2, 0.5 * h));
        let k4 = deriv(t + h, add(c, k3, h));
        for j in 0..2 {
            c[j] += (k1[j] + (k2[j] + k3[j]) * 2.0 + k4[j]) * (h / 6.0);
        }
        if t + h > end {
            avg += c[1].norm_sqr();
            count += 1;
        }
    }
    if count == 0 {
        return Ok(c[1].norm_sqr());
    }
    Ok(avg / count as f64)
}

/// Hold time at mutual resonance that splits the excitation evenly between
/// the qubits once the ramps in and out are accounted for. With `settle > 0`
/// the split is averaged over that window after release, which suits a
/// following swap; with zero it is balanced at the release instant, which
/// suits a following qubit pulse.
pub fn half_swap_hold(device: &DeviceParams, config: &ProtocolConfig, release: [f64; 2], settle: f64) -> Result<f64> {
    let nominal = config.half_swap_duration(device);
    let f = |hold: f64| half_swap_transfer(device, config, release, settle, hold).map(|p| p - 0.5);
    let n = 64;
    let mut lo = 0.0;
    if f(lo)? >= 0.0 {
        return Ok(0.0);
    }
    for i in 1..=n {
        let hi = 2.0 * nominal * i as f64 / n as f64;
        let f_hi = f(hi)?;
        if f_hi >= 0.0 {
            let (mut a, mut b) = (lo, hi);
            for _ in 0..50 {
                let m = 0.5 * (a + b);
                if f(m)? < 0.0 {
                    a = m;
                } else {
                    b = m;
                }
                if b - a < 1e-14 {
                    break;
                }
            }
            return Ok(0.5 * (a + b));
        }
        lo = hi;
    }
    Err(Error::Config("no hold time balances the qubit half-swap".into()))
}

/// Both nodes: ramp to `freq`, hold coupler for `(duration, amplitude)`;
/// returns when both couplers are off.
fn parallel_stage(b: &mut Builder<'_>, t: f64, freq: [f64; 2], params: impl Fn(Node) -> (f64, f64)) -> f64 {
    let arrive = Node::ALL.map(|n| b.ramp(n, t, freq[n.index()]));
    let start = arrive[0].max(arrive[1]);
    let mut end = start;
    for node in Node::ALL {
        let (duration, amplitude) = params(node);
        end = end.max(b.coupler(node, start, duration, amplitude));
    }
    end
}

/// N00N (N = 2) protocol: Bell stage, e→f π pulses, f0→e1 swaps, then
/// e1→g2 swaps. Ideal output `(|20⟩ + e^{iφ}|02⟩)/√2`.
pub fn noon_sequence(device: &DeviceParams, config: &ProtocolConfig) -> Result<PulseSchedule> {
    multi_phonon_sequence(device, config, [true, true])
}

/// N00M variant with qubit B left in `|e⟩`: ideal output `(|20⟩ + e^{iφ}|01⟩)/√2`.
pub fn noom_sequence(device: &DeviceParams, config: &ProtocolConfig) -> Result<PulseSchedule> {
    multi_phonon_sequence(device, config, [true, false])
}

fn multi_phonon_sequence(device: &DeviceParams, config: &ProtocolConfig, promote: [bool; 2]) -> Result<PulseSchedule> {
    config.validate()?;
    let mut b = Builder::new(device, config);
    // release the qubits back to idle for the e→f pulses
    let t_idle = bell_stage(&mut b, [device.a.qubit_idle, device.b.qubit_idle], 0.0)?;
    let mut t = t_idle;
    for node in Node::ALL {
        if promote[node.index()] {
            t = t.max(b.xy(node, t_idle, Transition::Ef, PI, 0.0));
        }
    }

    let bell_lambda = [config.swap_coupler(device, Node::A)?, config.swap_coupler(device, Node::B)?];
    let stage2_lambda = config.noon_stage2_coupler.unwrap_or(bell_lambda);
    let stage1_lambda = config.noon_stage1_coupler;

    // stage 1: f0 <-> e1 on promoted nodes
    if promote.iter().any(|&p| p) {
        let f_bare = Node::ALL.map(|n| {
            let p = device.node(n);
            if promote[n.index()] {
                p.resonator - p.anharmonicity
            } else {
                p.qubit_idle
            }
        });
        let freq = Node::ALL.map(|n| {
            if promote[n.index()] {
                b.ef_swap_frequency(n, f_bare[n.other().index()], stage1_lambda[n.index()])
            } else {
                f_bare[n.index()]
            }
        });
        let rise = config.coupler_rise;
        t = parallel_stage(&mut b, t, freq, |n| {
            if promote[n.index()] {
                let lambda = stage1_lambda[n.index()];
                (1.0 / (4.0 * device.node(n).g_ef * lambda) + rise, lambda)
            } else {
                (0.0, 0.0)
            }
        });
    }

    // stage 2: e1 <-> g2 (√2-enhanced) on promoted nodes, e0 <-> g1 otherwise
    let freq = Node::ALL.map(|n| {
        let other = device.node(n.other()).resonator;
        let phonons = usize::from(promote[n.index()]);
        b.ge_swap_frequency(n, other, stage2_lambda[n.index()], phonons)
    });
    let rise = config.coupler_rise;
    t = parallel_stage(&mut b, t, freq, |n| {
        let i = n.index();
        let lambda = stage2_lambda[i];
        let effective = 1.0 / (4.0 * device.node(n).g_ge * lambda);
        let effective = if promote[i] { effective / 2f64.sqrt() } else { effective };
        (effective + rise, lambda)
    });
    let mut end = t;
    for node in Node::ALL {
        end = end.max(b.ramp(node, t, device.node(node).qubit_idle));
    }
    b.measure(end);
    b.build()
}

/// Tomography readout: ideal displacements, then both qubits resonant with
/// their resonators for interaction time `tau`, then measurement.
pub fn readout_swap_sequence(
    device: &DeviceParams,
    config: &ProtocolConfig,
    tau: f64,
    displacements: (C64, C64),
) -> Result<PulseSchedule> {
    if !(tau >= 0.0) {
        return Err(Error::Schedule(format!("interaction time {tau} must be >= 0")));
    }
    config.validate()?;
    let mut b = Builder::new(device, config);
    b.displacement(Node::A, 0.0, displacements.0);
    b.displacement(Node::B, 0.0, displacements.1);
    let lambda = [config.swap_coupler(device, Node::A)?, config.swap_coupler(device, Node::B)?];
    let freq = [
        b.ge_swap_frequency(Node::A, device.b.resonator, lambda[0], 0),
        b.ge_swap_frequency(Node::B, device.a.resonator, lambda[1], 0),
    ];
    let end = if tau > 0.0 {
        parallel_stage(&mut b, 0.0, freq, |n| (tau, lambda[n.index()]))
    } else {
        0.0
    };
    b.measure(end);
    b.build()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CoherenceMeasurement {
    /// Energy relaxation of a one-phonon Fock state.
    T1,
    /// Ramsey coherence of a `|0⟩ + |1⟩` superposition.
    T2,
}

/// One schedule per delay. T1: π, swap in, wait, swap out, measure.
/// T2: π/2, swap in, wait, swap out, π/2 at `final_phase`, measure.
pub fn lifetime_and_ramsey_sequences(
    device: &DeviceParams,
    config: &ProtocolConfig,
    node: Node,
    which: CoherenceMeasurement,
    delays: &[f64],
    final_phase: f64,
) -> Result<Vec<PulseSchedule>> {
    config.validate()?;
    if let Some(d) = delays.iter().find(|&&d| !(d >= 0.0)) {
        return Err(Error::Schedule(format!("delay {d} must be >= 0")));
    }
    let lambda = config.swap_coupler(device, node)?;
    let swap = config.swap_time[node.index()];
    delays
        .iter()
        .map(|&delay| {
            let mut b = Builder::new(device, config);
            let idle = device.node(node).qubit_idle;
            let other_idle = device.node(node.other()).qubit_idle;
            let f_swap = b.ge_swap_frequency(node, other_idle, lambda, 0);
            let angle = match which {
                CoherenceMeasurement::T1 => PI,
                CoherenceMeasurement::T2 => FRAC_PI_2,
            };
            let t = b.xy(node, 0.0, Transition::Ge, angle, 0.0);
            let t = b.ramp(node, t, f_swap);
            let t = b.coupler(node, t, swap, lambda);
            let t = b.ramp(node, t, idle);
            let t = b.ramp(node, t + delay, f_swap);
            let t = b.coupler(node, t, swap, lambda);
            let mut t = b.ramp(node, t, idle);
            if which == CoherenceMeasurement::T2 {
                t = b.xy(node, t, Transition::Ge, FRAC_PI_2, final_phase);
            }
            b.measure(t);
            b.build()
        })
        .collect()
}
