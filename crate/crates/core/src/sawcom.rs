//! Coupling-of-modes model of a SAW Fabry-Pérot resonator, built by cascading
//! 2×2 transfer matrices of reflecting lines, transducer fingers and free gaps.
//!
//! Wave amplitudes are `(u, v)`: right- and left-going at a reference plane.
//! A section matrix maps the amplitudes at its left end to those at its right end.

use std::f64::consts::{PI, TAU};

use nalgebra::Matrix2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::EmissionRate;
use crate::error::{Error, Result};
use crate::hilbert::C64;

type M2 = Matrix2<C64>;

/// Mirror reflectivity a resonance must sit under to count as a confined mode.
pub const CONFINED_REFLECTIVITY: f64 = 0.99;
/// |Γ| level defining the stopband edges.
pub const STOPBAND_LEVEL: f64 = 0.9;

/// Geometry and per-element coefficients of one resonator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SawDesign {
    /// Transducer wavelength λ0 (m).
    pub wavelength: f64,
    /// Mirror grating period is half of this; defaults to λ0.
    #[serde(default)]
    pub mirror_wavelength: Option<f64>,
    /// Distance between the innermost lines of the two mirrors (m).
    pub cavity_length: f64,
    /// Free-surface sound speed (m/s).
    pub sound_speed: f64,
    pub k2: f64,
    pub finger_pairs: usize,
    /// Lines per mirror.
    pub mirror_lines: usize,
    pub idt_duty: f64,
    pub mirror_duty: f64,
    pub aperture: f64,
    pub thickness: f64,
    pub r_idt: C64,
    pub r_mirror: C64,
    /// Amplitude attenuation (Np/m).
    #[serde(default)]
    pub loss: f64,
    /// Static capacitance per finger pair per unit aperture (F/m).
    #[serde(default = "default_capacitance")]
    pub capacitance_per_pair: f64,
    #[serde(default = "default_impedance")]
    pub port_impedance: f64,
}

fn default_capacitance() -> f64 {
    4.6e-10
}

fn default_impedance() -> f64 {
    50.0
}

impl SawDesign {
    fn table(wavelength: f64, cavity_length: f64) -> Self {
        Self {
            wavelength,
            mirror_wavelength: None,
            cavity_length,
            sound_speed: 3979.0,
            k2: 0.054,
            finger_pairs: 10,
            mirror_lines: 200,
            idt_duty: 0.5,
            mirror_duty: 0.5,
            aperture: 180e-6,
            thickness: 10e-9,
            r_idt: C64::new(0.0, -0.042),
            r_mirror: C64::new(0.0, -0.0267),
            loss: 0.0,
            capacitance_per_pair: default_capacitance(),
            port_impedance: default_impedance(),
        }
    }

    /// Node A resonator. The cavity is trimmed from the nominal 74.0 μm so the
    /// symmetric mode sits at 3.027 GHz.
    pub fn node_a() -> Self {
        Self::table(1.301e-6, 74.5e-6)
    }

    /// Node B resonator.
    pub fn node_b() -> Self {
        Self::table(1.194e-6, 69.6e-6)
    }

    /// Larger-FSR multimode variant of node A: thicker, more reflective mirror
    /// lines and a cavity sized for a 44 MHz symmetric-mode spacing.
    pub fn multimode() -> Self {
        Self {
            r_mirror: C64::new(0.0, -0.06),
            thickness: 22e-9,
            ..Self::table(1.301e-6, 80.0e-6)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |x: f64, name: &str| {
            if x.is_finite() && x > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("saw {name} must be positive, got {x}")))
            }
        };
        pos(self.wavelength, "wavelength")?;
        pos(self.mirror_wavelength(), "mirror_wavelength")?;
        pos(self.sound_speed, "sound_speed")?;
        pos(self.aperture, "aperture")?;
        pos(self.capacitance_per_pair, "capacitance_per_pair")?;
        pos(self.port_impedance, "port_impedance")?;
        if !(self.thickness >= 0.0) {
            return Err(Error::Config("saw thickness must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.k2) {
            return Err(Error::Config(format!("K² = {} outside [0, 1)", self.k2)));
        }
        for (d, name) in [(self.idt_duty, "idt_duty"), (self.mirror_duty, "mirror_duty")] {
            if !(d > 0.0 && d < 1.0) {
                return Err(Error::Config(format!("{name} = {d} outside (0, 1)")));
            }
        }
        for (r, name) in [(self.r_idt, "r_idt"), (self.r_mirror, "r_mirror")] {
            if !(r.norm() < 1.0) {
                return Err(Error::Config(format!("|{name}| = {} must be below 1", r.norm())));
            }
        }
        if self.finger_pairs == 0 || self.mirror_lines == 0 {
            return Err(Error::Config("finger_pairs and mirror_lines must be at least 1".into()));
        }
        if !(self.loss >= 0.0 && self.loss.is_finite()) {
            return Err(Error::Config("saw loss must be non-negative".into()));
        }
        if !(self.cavity_length >= self.idt_length()) {
            return Err(Error::Config(format!(
                "cavity length {} m shorter than the transducer ({} m)",
                self.cavity_length,
                self.idt_length()
            )));
        }
        Ok(())
    }

    pub fn mirror_wavelength(&self) -> f64 {
        self.mirror_wavelength.unwrap_or(self.wavelength)
    }

    /// Transducer center frequency v/λ0.
    pub fn center_frequency(&self) -> f64 {
        self.sound_speed / self.wavelength
    }

    /// Bragg frequency of the mirror grating at its metallized speed.
    pub fn mirror_center_frequency(&self) -> f64 {
        self.metallized_speed(self.mirror_duty) / self.mirror_wavelength()
    }

    fn metallized_speed(&self, duty: f64) -> f64 {
        self.sound_speed * (1.0 - 0.5 * duty * self.k2)
    }

    pub fn idt_length(&self) -> f64 {
        self.finger_pairs as f64 * self.wavelength
    }

    /// Total static capacitance of the transducer.
    pub fn static_capacitance(&self) -> f64 {
        self.finger_pairs as f64 * self.aperture * self.capacitance_per_pair
    }

    /// Radiation conductance at center, `8 K² f0 C_T N_p`.
    pub fn peak_conductance(&self) -> f64 {
        8.0 * self.k2 * self.center_frequency() * self.static_capacitance() * self.finger_pairs as f64
    }
}

/// Transfer matrix with its determinant carried separately, so the
/// determinant of a long cascade never suffers cancellation.
#[derive(Clone, Copy, Debug)]
struct Section {
    t: M2,
    det: C64,
}

impl Section {
    fn new(t: M2) -> Self {
        Self { t, det: t.determinant() }
    }

    fn identity() -> Self {
        Self::new(M2::identity())
    }

    fn power(self, mut n: usize) -> Self {
        let mut acc = Self::identity();
        let mut base = self;
        while n > 0 {
            if n & 1 == 1 {
                acc = base * acc;
            }
            base = base * base;
            n >>= 1;
        }
        acc
    }

    /// Reflection seen from the left end when nothing returns from the right.
    fn reflection(&self) -> C64 {
        -self.t[(1, 0)] / self.t[(1, 1)]
    }
}

impl std::ops::Mul for Section {
    type Output = Section;

    fn mul(self, rhs: Section) -> Section {
        Section {
            t: self.t * rhs.t,
            det: self.det * rhs.det,
        }
    }
}

fn propagation(f: f64, speed: f64, loss: f64, d: f64) -> Section {
    let phase = TAU * f / speed * d;
    let fwd = C64::from_polar((-loss * d).exp(), -phase);
    let back = C64::from_polar((loss * d).exp(), phase);
    Section::new(M2::new(fwd, C64::new(0.0, 0.0), C64::new(0.0, 0.0), back))
}

/// Thin symmetric reflector with reflection `r` and real transmission √(1−|r|²).
fn reflector(r: C64) -> Section {
    let t = (1.0 - r.norm_sqr()).sqrt();
    Section::new(M2::new(t * t - r * r, r, -r, C64::new(1.0, 0.0)) / C64::new(t, 0.0))
}

/// `n` lines of period λ/2, starting at the first line and ending at the last.
fn grating(f: f64, speed: f64, loss: f64, wavelength: f64, r: C64, n: usize) -> Section {
    let cell = propagation(f, speed, loss, wavelength / 2.0) * reflector(r);
    propagation(f, speed, loss, -wavelength / 2.0) * cell.power(n)
}

fn mirror(d: &SawDesign, f: f64) -> Section {
    grating(
        f,
        d.metallized_speed(d.mirror_duty),
        d.loss,
        d.mirror_wavelength(),
        d.r_mirror,
        d.mirror_lines,
    )
}

/// `n` fingers with a λ/4 margin at both ends.
fn transducer(d: &SawDesign, f: f64, n: usize) -> Section {
    let v = d.metallized_speed(d.idt_duty);
    let q = d.wavelength / 4.0;
    propagation(f, v, d.loss, q) * grating(f, v, d.loss, d.wavelength, d.r_idt, n) * propagation(f, v, d.loss, q)
}

fn gap(d: &SawDesign) -> f64 {
    (d.cavity_length - d.idt_length()) / 2.0
}

fn stack(design: &SawDesign, f: f64) -> Section {
    let m = mirror(design, f);
    let g = propagation(f, design.sound_speed, design.loss, gap(design));
    m * g * transducer(design, f, 2 * design.finger_pairs) * g * m
}

/// Acoustic reflection Γ of one mirror, seen from the cavity side.
pub fn mirror_reflection(design: &SawDesign, f: f64) -> C64 {
    mirror(design, f).reflection()
}

/// Transfer matrix of the full mirror–gap–IDT–gap–mirror stack.
pub fn acoustic_transfer(design: &SawDesign, f: f64) -> Matrix2<C64> {
    stack(design, f).t
}

/// Acoustic transmission through the stack in both directions, `(S21, S12)`.
pub fn acoustic_transmission(design: &SawDesign, f: f64) -> (C64, C64) {
    let s = stack(design, f);
    let t11 = s.t[(1, 1)];
    (s.det / t11, C64::new(1.0, 0.0) / t11)
}

/// Reflection looking outward from the transducer center: half the fingers,
/// the gap and the mirror.
pub fn cavity_reflection(design: &SawDesign, f: f64) -> C64 {
    let g = propagation(f, design.sound_speed, design.loss, gap(design));
    (mirror(design, f) * g * transducer(design, f, design.finger_pairs)).reflection()
}

fn sinc_terms(x: f64) -> (f64, f64) {
    if x.abs() < 1e-4 {
        (1.0 - x * x / 3.0, -2.0 * x / 3.0)
    } else {
        let s = x.sin() / x;
        (s * s, ((2.0 * x).sin() - 2.0 * x) / (2.0 * x * x))
    }
}

/// Free transducer admittance `G_a + j(B_a + ωC_T)`.
pub fn idt_admittance(design: &SawDesign, f: f64) -> C64 {
    let f0 = design.center_frequency();
    let x = design.finger_pairs as f64 * PI * (f - f0) / f0;
    let (g, b) = sinc_terms(x);
    let ga0 = design.peak_conductance();
    C64::new(ga0 * g, ga0 * b + TAU * f * design.static_capacitance())
}

/// Transducer admittance with the cavity feedback; only modes symmetric about
/// the transducer load it.
pub fn loaded_admittance(design: &SawDesign, f: f64) -> C64 {
    let y = idt_admittance(design, f);
    let gamma = cavity_reflection(design, f);
    let one = C64::new(1.0, 0.0);
    y.re * (one + gamma) / (one - gamma) + C64::new(0.0, y.im)
}

/// Transmission of the resonator placed in series between two matched ports.
pub fn electrical_transmission(design: &SawDesign, f: f64) -> C64 {
    let w = 2.0 * design.port_impedance * loaded_admittance(design, f);
    w / (C64::new(1.0, 0.0) + w)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub frequency: f64,
    pub transmission: f64,
    pub reflectivity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CavityResponse {
    pub frequencies: Vec<f64>,
    pub s21: Vec<f64>,
    pub gamma: Vec<f64>,
    pub re_y: Vec<f64>,
    pub modes: Vec<Mode>,
    pub stopband: Option<(f64, f64)>,
}

impl CavityResponse {
    /// Mean spacing of adjacent modes.
    pub fn fsr(&self) -> Option<f64> {
        let n = self.modes.len();
        (n >= 2).then(|| (self.modes[n - 1].frequency - self.modes[0].frequency) / (n - 1) as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("frequency_hz,s21,gamma,re_y\n");
        for i in 0..self.frequencies.len() {
            out += &format!(
                "{:.6e},{:.6e},{:.6e},{:.6e}\n",
                self.frequencies[i], self.s21[i], self.gamma[i], self.re_y[i]
            );
        }
        out
    }
}

/// Evenly spaced grid of `n` points over `[lo, hi]`.
pub fn frequency_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Contiguous band around the strongest reflection where |Γ| exceeds `level`,
/// with linearly interpolated edges.
pub fn stopband(freqs: &[f64], gamma: &[f64], level: f64) -> Option<(f64, f64)> {
    let (peak, _) = gamma
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .filter(|(_, &g)| g > level)?;
    let edge = |i: usize, j: usize| {
        let w = (level - gamma[i]) / (gamma[j] - gamma[i]);
        freqs[i] + w * (freqs[j] - freqs[i])
    };
    let mut lo = peak;
    while lo > 0 && gamma[lo - 1] > level {
        lo -= 1;
    }
    let mut hi = peak;
    while hi + 1 < gamma.len() && gamma[hi + 1] > level {
        hi += 1;
    }
    let f_lo = if lo > 0 { edge(lo - 1, lo) } else { freqs[0] };
    let f_hi = if hi + 1 < gamma.len() { edge(hi + 1, hi) } else { freqs[gamma.len() - 1] };
    Some((f_lo, f_hi))
}

/// |S21|, |Γ| and Re Y over `freqs`, plus the confined resonances: local maxima
/// of |S21| where the mirrors reflect at least [`CONFINED_REFLECTIVITY`].
pub fn cavity_response(design: &SawDesign, freqs: &[f64]) -> CavityResponse {
    let rows: Vec<(f64, f64, f64)> = freqs
        .par_iter()
        .map(|&f| {
            (
                electrical_transmission(design, f).norm(),
                mirror_reflection(design, f).norm(),
                idt_admittance(design, f).re,
            )
        })
        .collect();
    let s21: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let gamma: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let re_y: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let mut modes = Vec::new();
    for i in 1..freqs.len().saturating_sub(1) {
        if s21[i] > s21[i - 1] && s21[i] >= s21[i + 1] && gamma[i] >= CONFINED_REFLECTIVITY {
            let (a, b, c) = (s21[i - 1], s21[i], s21[i + 1]);
            let den = a - 2.0 * b + c;
            let shift = if den.abs() > 0.0 { 0.5 * (a - c) / den } else { 0.0 };
            let step = 0.5 * (freqs[i + 1] - freqs[i - 1]);
            modes.push(Mode {
                frequency: freqs[i] + shift.clamp(-1.0, 1.0) * step,
                transmission: b,
                reflectivity: gamma[i],
            });
        }
    }
    let stopband = stopband(freqs, &gamma, STOPBAND_LEVEL);
    CavityResponse {
        frequencies: freqs.to_vec(),
        s21,
        gamma,
        re_y,
        modes,
        stopband,
    }
}

/// First minima of the IDT radiation conductance on either side of its
/// maximum over `freqs`.
pub fn main_lobe(design: &SawDesign, freqs: &[f64]) -> Option<(f64, f64)> {
    let g: Vec<f64> = freqs.iter().map(|&f| idt_admittance(design, f).re).collect();
    let peak = (0..g.len()).max_by(|&a, &b| g[a].total_cmp(&g[b]))?;
    let lower = (1..=peak).rev().find(|&i| g[i] <= g[i - 1])?;
    let upper = (peak..g.len().saturating_sub(1)).find(|&i| g[i] <= g[i + 1])?;
    Some((freqs[lower], freqs[upper]))
}

/// Relative acoustic emission rate `G_a (1 − |Γ|²)`, normalized to 1 at its maximum.
pub fn emission_rate_profile(design: &SawDesign, freqs: &[f64]) -> Vec<f64> {
    let raw: Vec<f64> = freqs
        .par_iter()
        .map(|&f| idt_admittance(design, f).re * (1.0 - mirror_reflection(design, f).norm_sqr()))
        .collect();
    let peak = raw.iter().copied().fold(0.0, f64::max);
    if peak > 0.0 {
        raw.iter().map(|r| r / peak).collect()
    } else {
        raw
    }
}

/// Emission table for the dynamics hook (frequencies in Hz), scaled so the
/// profile maximum equals `peak_rate` (s⁻¹).
pub fn emission_hook(design: &SawDesign, freqs: &[f64], peak_rate: f64) -> Result<EmissionRate> {
    let profile = emission_rate_profile(design, freqs);
    EmissionRate::new(freqs.to_vec(), profile.iter().map(|p| p * peak_rate).collect())
}
