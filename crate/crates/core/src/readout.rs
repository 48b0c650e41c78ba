//! Two-qubit readout: confusion (visibility) matrices, multinomial shot
//! sampling and measurement correction.
//!
//! Outcome order is `gg, ge, eg, ee` with the first letter for qubit A.
//! `V[(measured, prepared)]`, so `P_meas = V · P_exp`.

use nalgebra::{DMatrix, Matrix4, Vector4};
use rand::Rng as _;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

pub const OUTCOMES: [&str; 4] = ["gg", "ge", "eg", "ee"];

/// Two-qubit visibility matrix as measured on the device, rows measured and
/// columns prepared, in [`OUTCOMES`] order. Columns sum to one only up to rounding.
pub const MEASURED_VISIBILITY: [[f64; 4]; 4] = [
    [0.954, 0.042, 0.027, 0.002],
    [0.022, 0.939, 0.000, 0.028],
    [0.024, 0.003, 0.955, 0.037],
    [0.001, 0.017, 0.018, 0.934],
];

/// Single-qubit assignment fidelities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QubitReadout {
    pub ground: f64,
    pub excited: f64,
    /// Three-state readout fidelity of `|f⟩`; only used by the 9×9 model.
    #[serde(default)]
    pub second_excited: Option<f64>,
}

impl QubitReadout {
    pub fn reference() -> [QubitReadout; 2] {
        [
            QubitReadout {
                ground: 0.977,
                excited: 0.993,
                second_excited: Some(0.923),
            },
            QubitReadout {
                ground: 0.976,
                excited: 0.991,
                second_excited: Some(0.929),
            },
        ]
    }

    fn check(&self) -> Result<()> {
        for (name, f) in [("ground", Some(self.ground)), ("excited", Some(self.excited)), ("second_excited", self.second_excited)] {
            if let Some(f) = f {
                if !(f > 0.5 && f <= 1.0) {
                    return Err(Error::Probability(format!("{name} readout fidelity {f} outside (0.5, 1]")));
                }
            }
        }
        Ok(())
    }

    fn confusion(&self) -> [[f64; 2]; 2] {
        [[self.ground, 1.0 - self.excited], [1.0 - self.ground, self.excited]]
    }
}

/// How to treat negative entries after inverting `V`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionMode {
    #[default]
    Raw,
    /// Euclidean projection onto the probability simplex.
    Simplex,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Corrected {
    pub probabilities: [f64; 4],
    /// Some entry of the raw `V⁻¹ P` was negative.
    pub had_negative: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VisibilityJson", into = "VisibilityJson")]
pub struct VisibilityMatrix {
    m: Matrix4<f64>,
    inv: Matrix4<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VisibilityJson {
    /// Row-major, rows are measured outcomes.
    rows: [[f64; 4]; 4],
}

impl TryFrom<VisibilityJson> for VisibilityMatrix {
    type Error = Error;
    fn try_from(v: VisibilityJson) -> Result<Self> {
        VisibilityMatrix::new(v.rows)
    }
}

impl From<VisibilityMatrix> for VisibilityJson {
    fn from(v: VisibilityMatrix) -> Self {
        VisibilityJson { rows: v.rows() }
    }
}

impl VisibilityMatrix {
    /// Row-major matrix, rows measured and columns prepared.
    pub fn new(rows: [[f64; 4]; 4]) -> Result<Self> {
        let m = Matrix4::from_fn(|r, c| rows[r][c]);
        for c in 0..4 {
            let s: f64 = m.column(c).sum();
            if (s - 1.0).abs() > 1e-6 {
                return Err(Error::Probability(format!("visibility column {} sums to {s}", OUTCOMES[c])));
            }
        }
        if m.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::Probability("visibility entries must lie in [0, 1]".into()));
        }
        let inv = m
            .try_inverse()
            .filter(|inv| inv.iter().all(|x| x.is_finite()))
            .ok_or_else(|| Error::Singular("visibility matrix is not invertible".into()))?;
        Ok(VisibilityMatrix { m, inv })
    }

    /// Accepts a measured matrix whose columns are off by rounding and
    /// rescales each column to sum to one.
    pub fn from_measured(rows: [[f64; 4]; 4]) -> Result<Self> {
        let mut out = rows;
        for c in 0..4 {
            let s: f64 = (0..4).map(|r| rows[r][c]).sum();
            if !(s > 0.0) || (s - 1.0).abs() > 0.05 {
                return Err(Error::Probability(format!("visibility column {} sums to {s}", OUTCOMES[c])));
            }
            for row in out.iter_mut() {
                row[c] /= s;
            }
        }
        Self::new(out)
    }

    /// The two-qubit matrix measured for the device.
    pub fn reference_measured() -> Self {
        Self::from_measured(MEASURED_VISIBILITY).expect("reference visibility matrix is valid")
    }

    pub fn identity() -> Self {
        VisibilityMatrix {
            m: Matrix4::identity(),
            inv: Matrix4::identity(),
        }
    }

    pub fn rows(&self) -> [[f64; 4]; 4] {
        std::array::from_fn(|r| std::array::from_fn(|c| self.m[(r, c)]))
    }

    pub fn get(&self, measured: usize, prepared: usize) -> f64 {
        self.m[(measured, prepared)]
    }

    /// 2-norm condition number.
    pub fn condition_number(&self) -> f64 {
        let s = self.m.singular_values();
        s.max() / s.min()
    }

    pub fn apply(&self, p: &[f64; 4]) -> [f64; 4] {
        let v = self.m * Vector4::from_column_slice(p);
        [v[0], v[1], v[2], v[3]]
    }

    /// `V⁻¹ P_meas`.
    pub fn correct(&self, p_meas: &[f64; 4], mode: CorrectionMode) -> Corrected {
        let v = self.inv * Vector4::from_column_slice(p_meas);
        let raw = [v[0], v[1], v[2], v[3]];
        let had_negative = raw.iter().any(|x| *x < 0.0);
        let probabilities = match mode {
            CorrectionMode::Raw => raw,
            CorrectionMode::Simplex => {
                let p = project_simplex(&raw);
                [p[0], p[1], p[2], p[3]]
            }
        };
        Corrected {
            probabilities,
            had_negative,
        }
    }
}

/// `V = V_A ⊗ V_B` with single-qubit confusion matrices
/// `[[F_g, 1 − F_e], [1 − F_g, F_e]]`.
pub fn build_visibility(qubits: &[QubitReadout; 2]) -> Result<VisibilityMatrix> {
    qubits[0].check()?;
    qubits[1].check()?;
    let a = qubits[0].confusion();
    let b = qubits[1].confusion();
    let rows = std::array::from_fn(|r| std::array::from_fn(|c| a[r / 2][c / 2] * b[r % 2][c % 2]));
    VisibilityMatrix::new(rows)
}

/// 9×9 confusion over `{g, e, f}²` for |f⟩-aware diagnostics. Errors from
/// `g` land in `e`, from `e` in `g`, and from `f` in `e`.
pub fn build_three_level_visibility(qubits: &[QubitReadout; 2]) -> Result<DMatrix<f64>> {
    let single = |q: &QubitReadout| -> Result<[[f64; 3]; 3]> {
        q.check()?;
        let ff = q
            .second_excited
            .ok_or_else(|| Error::Config("three-level readout needs the |f⟩ fidelity".into()))?;
        Ok([
            [q.ground, 1.0 - q.excited, 0.0],
            [1.0 - q.ground, q.excited, 1.0 - ff],
            [0.0, 0.0, ff],
        ])
    };
    let a = single(&qubits[0])?;
    let b = single(&qubits[1])?;
    Ok(DMatrix::from_fn(9, 9, |r, c| a[r / 3][c / 3] * b[r % 3][c % 3]))
}

/// Multinomial counts drawn as a chain of conditional binomials.
pub fn sample_counts(p: &[f64], n: u64, rng: &mut Rng) -> Result<Vec<u64>> {
    if n == 0 {
        return Err(Error::Probability("shot count must be at least 1".into()));
    }
    if p.iter().any(|x| !(*x >= -1e-12) || !x.is_finite()) {
        return Err(Error::Probability("probabilities must be non-negative".into()));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::Probability(format!("probabilities sum to {total}")));
    }
    let mut counts = vec![0u64; p.len()];
    let mut left = n;
    let mut mass = 1.0;
    for (i, &pi) in p.iter().enumerate() {
        if left == 0 {
            break;
        }
        if i + 1 == p.len() {
            counts[i] = left;
            left = 0;
            break;
        }
        let q = (pi.max(0.0) / mass).clamp(0.0, 1.0);
        let k = if q >= 1.0 {
            left
        } else if q <= 0.0 {
            0
        } else {
            Binomial::new(left, q)
                .map_err(|e| Error::Probability(e.to_string()))?
                .sample(rng)
        };
        counts[i] = k;
        left -= k;
        mass -= pi.max(0.0);
        if mass <= 0.0 {
            break;
        }
    }
    if left > 0 {
        let last = p.iter().rposition(|x| *x > 0.0).unwrap_or(0);
        counts[last] += left;
    }
    Ok(counts)
}

/// Two-qubit shot counts in `gg, ge, eg, ee` order.
pub fn sample_shots(p: &[f64; 4], n: u64, rng: &mut Rng) -> Result<[u64; 4]> {
    let c = sample_counts(p, n, rng)?;
    Ok([c[0], c[1], c[2], c[3]])
}

pub fn frequencies(counts: &[u64; 4]) -> [f64; 4] {
    let n: u64 = counts.iter().sum();
    counts.map(|c| c as f64 / n as f64)
}

/// Euclidean projection onto `{x ≥ 0, Σx = 1}`.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        cum += ui;
        let t = (cum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

/// Counts table as CSV, one row per record.
pub fn counts_csv(labels: &[String], counts: &[[u64; 4]]) -> String {
    let mut s = String::from("label,gg,ge,eg,ee\n");
    for (l, c) in labels.iter().zip(counts) {
        s.push_str(&format!("{l},{},{},{},{}\n", c[0], c[1], c[2], c[3]));
    }
    s
}

/// Draw a uniformly random probability vector (flat Dirichlet).
pub fn random_probability(k: usize, rng: &mut Rng) -> Vec<f64> {
    let e: Vec<f64> = (0..k).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn perfect_fidelities_give_identity() {
        let q = QubitReadout {
            ground: 1.0,
            excited: 1.0,
            second_excited: None,
        };
        let v = build_visibility(&[q, q]).unwrap();
        assert_eq!(v.rows(), VisibilityMatrix::identity().rows());
    }

    #[test]
    fn tensor_entry_matches_measured_scale() {
        let v = build_visibility(&QubitReadout::reference()).unwrap();
        assert!((v.get(0, 0) - 0.977 * 0.976).abs() < 1e-12);
        assert!((v.get(0, 0) - 0.954).abs() < 0.001);
        for c in 0..4 {
            let s: f64 = (0..4).map(|r| v.get(r, c)).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fidelity_range_checked() {
        let q = QubitReadout {
            ground: 0.4,
            excited: 0.99,
            second_excited: None,
        };
        assert!(build_visibility(&[q, q]).is_err());
    }

    #[test]
    fn reference_measured_columns() {
        let v = VisibilityMatrix::reference_measured();
        for c in 0..4 {
            let s: f64 = (0..4).map(|r| v.get(r, c)).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!(v.condition_number() < 1.2);
    }

    #[test]
    fn exact_roundtrip() {
        let v = VisibilityMatrix::reference_measured();
        let p = [0.5, 0.25, 0.25, 0.0];
        let back = v.correct(&v.apply(&p), CorrectionMode::Raw).probabilities;
        for i in 0..4 {
            assert!((back[i] - p[i]).abs() < 1e-12);
        }
        let fwd = v.apply(&v.correct(&p, CorrectionMode::Raw).probabilities);
        for i in 0..4 {
            assert!((fwd[i] - p[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_point_mass() {
        let mut rng = stream(1, "t", 0);
        assert_eq!(sample_shots(&[1.0, 0.0, 0.0, 0.0], 77, &mut rng).unwrap(), [77, 0, 0, 0]);
        assert_eq!(sample_shots(&[0.0, 0.0, 0.0, 1.0], 5, &mut rng).unwrap(), [0, 0, 0, 5]);
        let a = sample_shots(&[0.1, 0.2, 0.3, 0.4], 1000, &mut stream(3, "t", 0)).unwrap();
        let b = sample_shots(&[0.1, 0.2, 0.3, 0.4], 1000, &mut stream(3, "t", 0)).unwrap();
        assert_eq!(a, b);
        assert!(sample_shots(&[0.5, 0.6, 0.0, 0.0], 10, &mut rng).is_err());
        assert!(sample_shots(&[0.25; 4], 0, &mut rng).is_err());
    }

    #[test]
    fn simplex_projection() {
        let p = project_simplex(&[0.6, 0.5, -0.05, -0.05]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|x| *x >= 0.0));
        assert_eq!(project_simplex(&[0.2, 0.3, 0.5]), vec![0.2, 0.3, 0.5]);
    }

    #[test]
    fn three_level_columns() {
        let v = build_three_level_visibility(&QubitReadout::reference()).unwrap();
        for c in 0..9 {
            assert!((v.column(c).sum() - 1.0).abs() < 1e-12);
        }
        assert!((v[(8, 8)] - 0.923 * 0.929).abs() < 1e-12);
    }

    #[test]
    fn json_roundtrip() {
        let v = VisibilityMatrix::reference_measured();
        let s = serde_json::to_string(&v).unwrap();
        let w: VisibilityMatrix = serde_json::from_str(&s).unwrap();
        assert_eq!(v.rows(), w.rows());
        assert!(serde_json::from_str::<VisibilityMatrix>(r#"{"rows":[[1,0,0,0],[0,1,0,0],[0,0,1,0],[0,0,0,2]]}"#).is_err());
    }
}
