use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pulses::Node;

/// Per-node device parameters. Frequencies and couplings in Hz, times in s.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeParams {
    pub qubit_idle: f64,
    /// Negative for a transmon.
    pub anharmonicity: f64,
    pub qubit_t1: f64,
    pub qubit_t2r: f64,
    /// Lifetime of `|f⟩`.
    pub qubit_t1_f: f64,
    /// Lifetime of `|e⟩` while the node's coupler is active.
    pub qubit_t1_swap: f64,
    pub resonator: f64,
    pub resonator_t1: f64,
    pub resonator_t2: f64,
    pub g_ge: f64,
    pub g_ef: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceParams {
    pub a: NodeParams,
    pub b: NodeParams,
    /// Qubit-qubit coupling (Hz).
    pub g_q: f64,
}

impl NodeParams {
    /// Qubit pure dephasing rate `1/T2R − 1/(2 T1)` (s⁻¹).
    pub fn qubit_dephasing_rate(&self) -> f64 {
        1.0 / self.qubit_t2r - 0.5 / self.qubit_t1
    }

    /// Resonator pure dephasing rate `1/T2m − 1/(2 T1m)` (s⁻¹).
    pub fn resonator_dephasing_rate(&self) -> f64 {
        1.0 / self.resonator_t2 - 0.5 / self.resonator_t1
    }

    fn validate(&self, node: Node) -> Result<()> {
        let positive = [
            ("qubit idle frequency", self.qubit_idle),
            ("qubit T1", self.qubit_t1),
            ("qubit T2R", self.qubit_t2r),
            ("qubit f lifetime", self.qubit_t1_f),
            ("qubit swap lifetime", self.qubit_t1_swap),
            ("resonator frequency", self.resonator),
            ("resonator T1", self.resonator_t1),
            ("resonator T2", self.resonator_t2),
            ("g_ge", self.g_ge),
            ("g_ef", self.g_ef),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("node {node}: {name} must be positive, got {v}")));
            }
        }
        if !(self.anharmonicity < 0.0 && self.anharmonicity.is_finite()) {
            return Err(Error::Config(format!(
                "node {node}: anharmonicity must be negative, got {}",
                self.anharmonicity
            )));
        }
        if self.qubit_t2r > 2.0 * self.qubit_t1 {
            return Err(Error::Config(format!("node {node}: qubit T2R exceeds 2 T1")));
        }
        if self.resonator_t2 > 2.0 * self.resonator_t1 {
            return Err(Error::Config(format!("node {node}: resonator T2m exceeds 2 T1m")));
        }
        Ok(())
    }
}

impl DeviceParams {
    /// Measured two-node device.
    pub fn reference() -> Self {
        Self {
            a: NodeParams {
                qubit_idle: 3.245e9,
                anharmonicity: -207e6,
                qubit_t1: 40.8e-6,
                qubit_t2r: 2.7e-6,
                qubit_t1_f: 10.1e-6,
                qubit_t1_swap: 784e-9,
                resonator: 3.027e9,
                resonator_t1: 380e-9,
                resonator_t2: 709e-9,
                g_ge: 5.9e6,
                g_ef: 3.8e6,
            },
            b: NodeParams {
                qubit_idle: 3.557e9,
                anharmonicity: -196e6,
                qubit_t1: 19.3e-6,
                qubit_t2r: 3.0e-6,
                qubit_t1_f: 10.5e-6,
                qubit_t1_swap: 350e-9,
                resonator: 3.295e9,
                resonator_t1: 270e-9,
                resonator_t2: 527e-9,
                g_ge: 7.1e6,
                g_ef: 3.8e6,
            },
            g_q: 8.6e6,
        }
    }

    pub fn node(&self, node: Node) -> &NodeParams {
        match node {
            Node::A => &self.a,
            Node::B => &self.b,
        }
    }

    pub fn node_mut(&mut self, node: Node) -> &mut NodeParams {
        match node {
            Node::A => &mut self.a,
            Node::B => &mut self.b,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.a.validate(Node::A)?;
        self.b.validate(Node::B)?;
        if !(self.g_q >= 0.0 && self.g_q.is_finite()) {
            return Err(Error::Config(format!("g_q must be non-negative, got {}", self.g_q)));
        }
        Ok(())
    }
}
