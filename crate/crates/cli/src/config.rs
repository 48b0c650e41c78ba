use std::path::Path;

use phonon_core::dynamics::{DeviceParams, Frame};
use phonon_core::pulses::ProtocolConfig;
use phonon_core::readout::{CorrectionMode, VisibilityMatrix, MEASURED_VISIBILITY};
use phonon_core::sawcom::SawDesign;
use phonon_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Everything a run depends on. Units are SI throughout (Hz, s, m).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub device: DeviceParams,
    #[serde(default)]
    pub protocol: ProtocolConfig,
    #[serde(default)]
    pub saw: SawConfig,
    #[serde(default)]
    pub readout: ReadoutConfig,
    #[serde(default)]
    pub tomography: TomographyConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub scenarios: ScenarioKnobs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SawConfig {
    pub a: SawDesign,
    pub b: SawDesign,
    pub multimode: SawDesign,
}

impl Default for SawConfig {
    fn default() -> Self {
        Self {
            a: SawDesign::node_a(),
            b: SawDesign::node_b(),
            multimode: SawDesign::multimode(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReadoutConfig {
    /// Apply readout error to sampled tomography data and correct it.
    pub enabled: bool,
    /// Measured two-qubit visibility, rows measured, columns prepared (gg, ge, eg, ee).
    pub visibility: [[f64; 4]; 4],
    pub correction: CorrectionMode,
}

impl Default for ReadoutConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            visibility: MEASURED_VISIBILITY,
            correction: CorrectionMode::Raw,
        }
    }
}

impl ReadoutConfig {
    pub fn matrix(&self) -> Result<VisibilityMatrix> {
        VisibilityMatrix::from_measured(self.visibility)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TomographyConfig {
    pub tau_max: f64,
    pub tau_step: f64,
    pub bootstrap: usize,
    pub reconstruct_levels: usize,
    pub bell_fit_levels: usize,
    pub bell_pad_above: usize,
    pub noon_fit_levels: usize,
    pub noon_pad_above: usize,
    pub work_levels: usize,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for TomographyConfig {
    fn default() -> Self {
        Self {
            tau_max: 300e-9,
            tau_step: 2e-9,
            bootstrap: 10,
            reconstruct_levels: 6,
            bell_fit_levels: 5,
            bell_pad_above: 4,
            noon_fit_levels: 6,
            noon_pad_above: 2,
            work_levels: 12,
            max_iterations: 20_000,
            tolerance: 1e-9,
        }
    }
}

impl TomographyConfig {
    pub fn taus(&self) -> Vec<f64> {
        grid(0.0, self.tau_max, self.tau_step)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub resonator_levels: usize,
    pub dt_max: f64,
    pub dissipation: bool,
    pub frame: Frame,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            resonator_levels: 6,
            dt_max: 0.05e-9,
            dissipation: true,
            frame: Frame::Rotating,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioKnobs {
    pub chevron: ChevronKnobs,
    pub swap: SwapKnobs,
    pub coherence: CoherenceKnobs,
    pub multimode: MultimodeKnobs,
    pub saw: SawKnobs,
    pub displacement: DisplacementKnobs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChevronKnobs {
    pub detuning_span: f64,
    pub detuning_step: f64,
    pub time_max: f64,
    pub time_step: f64,
}

impl Default for ChevronKnobs {
    fn default() -> Self {
        Self {
            detuning_span: 30e6,
            detuning_step: 1e6,
            time_max: 250e-9,
            time_step: 2e-9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SwapKnobs {
    pub time_max: f64,
    pub time_step: f64,
}

impl Default for SwapKnobs {
    fn default() -> Self {
        Self {
            time_max: 300e-9,
            time_step: 1e-9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoherenceKnobs {
    pub t1_delay_max: f64,
    pub t1_delay_step: f64,
    pub ramsey_delay_max: f64,
    pub ramsey_delay_step: f64,
    /// Virtual detuning: the final Ramsey pulse phase advances by 2π · this · delay.
    pub ramsey_detuning: f64,
}

impl Default for CoherenceKnobs {
    fn default() -> Self {
        Self {
            t1_delay_max: 1.6e-6,
            t1_delay_step: 40e-9,
            ramsey_delay_max: 2e-6,
            ramsey_delay_step: 40e-9,
            ramsey_detuning: 3e6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MultimodeKnobs {
    /// Frequency span of the COM response around the mirror center.
    pub response_span: f64,
    pub response_points: usize,
    /// Qubit sweep extends this far beyond the outer modes.
    pub sweep_margin: f64,
    pub sweep_step: f64,
    pub time_max: f64,
    pub time_step: f64,
}

impl Default for MultimodeKnobs {
    fn default() -> Self {
        Self {
            response_span: 0.2e9,
            response_points: 40001,
            sweep_margin: 30e6,
            sweep_step: 1e6,
            time_max: 300e-9,
            time_step: 2e-9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SawKnobs {
    pub broad_span: f64,
    pub broad_points: usize,
    pub fine_span: f64,
    pub fine_points: usize,
}

impl Default for SawKnobs {
    fn default() -> Self {
        Self {
            broad_span: 0.6e9,
            broad_points: 24001,
            fine_span: 0.2e9,
            fine_points: 40001,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DisplacementKnobs {
    /// Displacement amplitude at drive amplitude 1.
    pub full_scale: f64,
    pub sigma: f64,
    pub levels: usize,
    pub points: usize,
}

impl Default for DisplacementKnobs {
    fn default() -> Self {
        Self {
            full_scale: 1.2,
            sigma: 2e-9,
            levels: 8,
            points: 21,
        }
    }
}

/// `start, start + step, …` up to `stop` inclusive (to rounding).
pub fn grid(start: f64, stop: f64, step: f64) -> Vec<f64> {
    if !(step > 0.0) || stop < start {
        return Vec::new();
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| start + i as f64 * step).collect()
}

impl Config {
    /// Reference device with every other section at its default.
    pub fn reference() -> Self {
        Self {
            device: DeviceParams::reference(),
            protocol: ProtocolConfig::default(),
            saw: SawConfig::default(),
            readout: ReadoutConfig::default(),
            tomography: TomographyConfig::default(),
            simulation: SimulationConfig::default(),
            scenarios: ScenarioKnobs::default(),
        }
    }

    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let config: Config = if overrides.is_empty() {
            toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?
        } else {
            let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
            for o in overrides {
                apply_override(&mut table, o)?;
            }
            toml::Value::Table(table)
                .try_into()
                .map_err(|e: toml::de::Error| Error::Parse(format!("after overrides: {e}")))?
        };
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text, overrides).map_err(|e| match e {
            Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Every violated invariant, not just the first.
    pub fn validate(&self) -> Result<()> {
        let mut problems: Vec<String> = Vec::new();
        let mut push = |what: &str, r: Result<()>| {
            if let Err(e) = r {
                problems.push(format!("{what}: {e}"));
            }
        };
        push("device", self.device.validate());
        push("protocol", self.protocol.validate());
        push("saw.a", self.saw.a.validate());
        push("saw.b", self.saw.b.validate());
        push("saw.multimode", self.saw.multimode.validate());
        push("readout", self.readout.matrix().map(|_| ()));

        let t = &self.tomography;
        let s = &self.simulation;
        let k = &self.scenarios;
        let positive = [
            ("tomography.tau_max", t.tau_max),
            ("tomography.tau_step", t.tau_step),
            ("tomography.tolerance", t.tolerance),
            ("simulation.dt_max", s.dt_max),
            ("scenarios.chevron.detuning_step", k.chevron.detuning_step),
            ("scenarios.chevron.time_max", k.chevron.time_max),
            ("scenarios.chevron.time_step", k.chevron.time_step),
            ("scenarios.swap.time_max", k.swap.time_max),
            ("scenarios.swap.time_step", k.swap.time_step),
            ("scenarios.coherence.t1_delay_max", k.coherence.t1_delay_max),
            ("scenarios.coherence.t1_delay_step", k.coherence.t1_delay_step),
            ("scenarios.coherence.ramsey_delay_max", k.coherence.ramsey_delay_max),
            ("scenarios.coherence.ramsey_delay_step", k.coherence.ramsey_delay_step),
            ("scenarios.coherence.ramsey_detuning", k.coherence.ramsey_detuning),
            ("scenarios.multimode.response_span", k.multimode.response_span),
            ("scenarios.multimode.sweep_step", k.multimode.sweep_step),
            ("scenarios.multimode.time_max", k.multimode.time_max),
            ("scenarios.multimode.time_step", k.multimode.time_step),
            ("scenarios.saw.broad_span", k.saw.broad_span),
            ("scenarios.saw.fine_span", k.saw.fine_span),
            ("scenarios.displacement.full_scale", k.displacement.full_scale),
            ("scenarios.displacement.sigma", k.displacement.sigma),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                problems.push(format!("{name} must be positive, got {v}"));
            }
        }
        let non_negative = [
            ("scenarios.chevron.detuning_span", k.chevron.detuning_span),
            ("scenarios.multimode.sweep_margin", k.multimode.sweep_margin),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                problems.push(format!("{name} must be non-negative, got {v}"));
            }
        }
        let at_least = [
            ("tomography.reconstruct_levels", t.reconstruct_levels, 2),
            ("tomography.bell_fit_levels", t.bell_fit_levels, 2),
            ("tomography.noon_fit_levels", t.noon_fit_levels, 3),
            ("tomography.work_levels", t.work_levels, t.reconstruct_levels),
            ("tomography.max_iterations", t.max_iterations, 1),
            ("tomography.bootstrap", t.bootstrap, 2),
            ("simulation.resonator_levels", s.resonator_levels, 4),
            ("scenarios.multimode.response_points", k.multimode.response_points, 3),
            ("scenarios.saw.broad_points", k.saw.broad_points, 3),
            ("scenarios.saw.fine_points", k.saw.fine_points, 3),
            ("scenarios.displacement.levels", k.displacement.levels, 3),
            ("scenarios.displacement.points", k.displacement.points, 3),
        ];
        for (name, v, min) in at_least {
            if v < min {
                problems.push(format!("{name} must be at least {min}, got {v}"));
            }
        }
        if t.bell_pad_above >= t.reconstruct_levels || t.noon_pad_above >= t.reconstruct_levels {
            problems.push("tomography pad indices must be below reconstruct_levels".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

/// Device parameters and the two node SAW designs from a config file.
pub fn load_device_config(path: &Path) -> Result<(DeviceParams, [SawDesign; 2])> {
    let c = Config::load(path, &[])?;
    Ok((c.device, [c.saw.a, c.saw.b]))
}

/// `dotted.key=value`; the value is parsed as a TOML value, falling back to a
/// bare string.
fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Parse(format!("override `{assignment}` is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Parse(format!("override key `{key}` is malformed")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Parse(format!("override `{key}`: `{p}` is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_round_trips_through_toml() {
        let c = Config::reference();
        let back = Config::from_toml(&c.to_toml(), &[]).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn overrides_reach_nested_keys() {
        let text = Config::reference().to_toml();
        let c = Config::from_toml(
            &text,
            &["device.a.g_ge=6.0e6".into(), "readout.correction=simplex".into(), "simulation.frame=lab".into()],
        )
        .unwrap();
        assert_eq!(c.device.a.g_ge, 6.0e6);
        assert_eq!(c.readout.correction, CorrectionMode::Simplex);
        assert_eq!(c.simulation.frame, Frame::Lab);
        assert!(Config::from_toml(&text, &["device.a.bogus=1".into()]).is_err());
        assert!(Config::from_toml(&text, &["noequals".into()]).is_err());
    }

    #[test]
    fn violations_are_collected() {
        let mut c = Config::reference();
        c.device.a.qubit_t1 = -1.0;
        c.tomography.tau_step = 0.0;
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("qubit T1") && msg.contains("tau_step"), "{msg}");
    }

    #[test]
    fn grid_is_inclusive() {
        assert_eq!(grid(0.0, 1.0, 0.25).len(), 5);
        assert_eq!(grid(0.0, 300e-9, 2e-9).len(), 151);
        assert!(grid(1.0, 0.0, 0.1).is_empty());
    }
}
