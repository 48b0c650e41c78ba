//! Joint Wigner tomography of the two resonators.
//!
//! A dataset holds, for every displacement pair on the grid, the joint
//! resonator populations of the displaced state obtained by fitting qubit
//! swap traces. [`reconstruct`] inverts the displacement map with a convex
//! least-squares solve over unit-trace positive semidefinite matrices.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{evolve, DeviceParams, EvolveOptions};
use crate::error::{Error, Result};
use crate::hilbert::{
    displacement_operator, hermitian_eigen, partial_trace, sqrt_psd, CMatrix, CVector, DensityMatrix,
    HilbertLayout, C64,
};
use crate::pulses::{Channel, Node, Payload, ProtocolConfig, PulseSchedule, Segment, Shape};
use crate::readout::{frequencies, project_simplex, sample_shots, CorrectionMode, VisibilityMatrix};
use crate::rng::{stream, Rng};

const LEAK_WARN: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridStyle {
    Bell,
    Noon,
}

/// Displacement pairs `(α_A, α_B)`, all distinct.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[C64; 2]>", into = "Vec<[C64; 2]>")]
pub struct DisplacementGrid {
    points: Vec<[C64; 2]>,
}

impl TryFrom<Vec<[C64; 2]>> for DisplacementGrid {
    type Error = Error;
    fn try_from(points: Vec<[C64; 2]>) -> Result<Self> {
        DisplacementGrid::new(points)
    }
}

impl From<DisplacementGrid> for Vec<[C64; 2]> {
    fn from(g: DisplacementGrid) -> Self {
        g.points
    }
}

impl DisplacementGrid {
    pub fn new(points: Vec<[C64; 2]>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Config("displacement grid is empty".into()));
        }
        for (i, p) in points.iter().enumerate() {
            if !(p[0].re.is_finite() && p[0].im.is_finite() && p[1].re.is_finite() && p[1].im.is_finite()) {
                return Err(Error::Config(format!("grid point {i} is not finite")));
            }
            for q in &points[..i] {
                if (p[0] - q[0]).norm() < 1e-12 && (p[1] - q[1]).norm() < 1e-12 {
                    return Err(Error::Config(format!("grid point {i} duplicates an earlier point")));
                }
            }
        }
        Ok(Self { points })
    }

    /// Product of two phase circles per ring: `|α_A| e^{2πik/N}`, `|α_B| e^{2πil/N}`.
    pub fn circles(rings: &[(f64, f64, usize)]) -> Result<Self> {
        let mut points = Vec::new();
        for &(ma, mb, n) in rings {
            for ka in 0..n {
                for kb in 0..n {
                    points.push([
                        C64::from_polar(ma, TAU * ka as f64 / n as f64),
                        C64::from_polar(mb, TAU * kb as f64 / n as f64),
                    ]);
                }
            }
        }
        Self::new(points)
    }

    pub fn points(&self) -> &[[C64; 2]] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Message when fewer population constraints than free real parameters
    /// of a `support²`-dimensional density matrix are available.
    pub fn identifiability_warning(&self, support: usize, populations_per_point: usize) -> Option<String> {
        let d = support * support;
        let free = d * d - 1;
        let have = self.len() * populations_per_point;
        (have < free).then(|| format!("{have} population constraints for {free} free parameters"))
    }
}

pub fn make_grid(style: GridStyle) -> DisplacementGrid {
    let rings: &[(f64, f64, usize)] = match style {
        GridStyle::Bell => &[(0.35, 0.26, 15)],
        GridStyle::Noon => &[(0.3, 0.3, 6), (0.5, 0.5, 15)],
    };
    DisplacementGrid::circles(rings).expect("built-in grids are valid")
}

/// `D_A(−α_A) D_B(−α_B) ρ D_A(α_A) D_B(α_B)` in the state's own truncation.
pub fn displaced_density(rho_m: &DensityMatrix, alpha_a: C64, alpha_b: C64) -> Result<DensityMatrix> {
    let layout = rho_m.layout();
    if layout.num_subsystems() != 2 {
        return Err(Error::Subsystem(format!(
            "expected a two-resonator state, got {} subsystems",
            layout.num_subsystems()
        )));
    }
    let d = displacement_operator(-alpha_a, layout.dim(0))?.kron(&displacement_operator(-alpha_b, layout.dim(1))?);
    let out = rho_m.conjugate_by(&d)?;
    for s in 0..2 {
        let top = out.top_level_population(s);
        if top > LEAK_WARN {
            tracing::warn!(subsystem = s, population = top, "displaced state reaches the truncation edge");
        }
    }
    Ok(out)
}

/// Diagonal of [`displaced_density`], applying the two displacements mode by
/// mode instead of forming the full product.
pub fn displaced_populations(rho_m: &DensityMatrix, alpha_a: C64, alpha_b: C64) -> Result<JointPopulations> {
    let layout = rho_m.layout();
    if layout.num_subsystems() != 2 || layout.dim(0) != layout.dim(1) {
        return Err(Error::Subsystem("expected a two-mode state with equal truncations".into()));
    }
    let d = layout.dim(0);
    let n = d * d;
    let da = displacement_operator(-alpha_a, d)?.into_matrix();
    let db = displacement_operator(-alpha_b, d)?.into_matrix();
    let rho = rho_m.matrix();
    // Y = (1 ⊗ D_B) ρ, then X = (D_A ⊗ 1) Y
    let mut y = CMatrix::zeros(n, n);
    for x in 0..d {
        for b in 0..d {
            for yy in 0..d {
                let w = db[(b, yy)];
                if w.norm_sqr() == 0.0 {
                    continue;
                }
                for c in 0..n {
                    y[(x * d + b, c)] += w * rho[(x * d + yy, c)];
                }
            }
        }
    }
    let mut values = vec![0.0; n];
    for a in 0..d {
        for b in 0..d {
            let i = a * d + b;
            let mut acc = C64::new(0.0, 0.0);
            for c in 0..n {
                let mut xc = C64::new(0.0, 0.0);
                for x in 0..d {
                    xc += da[(a, x)] * y[(x * d + b, c)];
                }
                acc += xc * (da[(a, c / d)] * db[(b, c % d)]).conj();
            }
            values[i] = acc.re.max(0.0);
        }
    }
    for s in 0..2 {
        let top: f64 = (0..n)
            .filter(|&i| if s == 0 { i / d == d - 1 } else { i % d == d - 1 })
            .map(|i| values[i])
            .sum();
        if top > LEAK_WARN {
            tracing::warn!(subsystem = s, population = top, "displaced state reaches the truncation edge");
        }
    }
    JointPopulations::new(d, values, 0.0)
}

/// Copy a two-mode state into `levels` levels per mode, dropping or zero
/// filling as needed. Dropped weight is not renormalized.
pub fn resize_modes(rho: &DensityMatrix, levels: usize) -> Result<DensityMatrix> {
    let src = rho.layout();
    if src.num_subsystems() != 2 {
        return Err(Error::Subsystem("expected a two-mode state".into()));
    }
    let layout = HilbertLayout::new(vec![levels, levels])?;
    let n = layout.total_dim();
    let m = rho.matrix();
    let map: Vec<Option<usize>> = (0..n)
        .map(|i| {
            let (a, b) = (i / levels, i % levels);
            (a < src.dim(0) && b < src.dim(1)).then(|| src.index(&[a, b]))
        })
        .collect();
    let out = CMatrix::from_fn(n, n, |r, c| match (map[r], map[c]) {
        (Some(i), Some(j)) => m[(i, j)],
        _ => C64::new(0.0, 0.0),
    });
    DensityMatrix::unchecked(layout, out)
}

/// Analytic swap-trace model for resonator readout through the qubits.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceModel {
    /// Effective qubit-resonator coupling during readout (Hz).
    pub coupling: [f64; 2],
    /// Envelope decay constant of the swap oscillation (s).
    pub decay: [f64; 2],
}

impl TraceModel {
    /// Coupling from the calibrated swap times, decay from the swap-context
    /// qubit lifetimes.
    pub fn new(device: &DeviceParams, config: &ProtocolConfig) -> Self {
        TraceModel {
            coupling: [0.25 / config.swap_time[0], 0.25 / config.swap_time[1]],
            decay: [device.a.qubit_t1_swap, device.b.qubit_t1_swap],
        }
    }

    /// Qubit excitation after swapping with Fock state `n` for `tau`.
    pub fn excitation(&self, node: usize, n: usize, tau: f64) -> f64 {
        if n == 0 {
            return 0.0;
        }
        let w = TAU * 2.0 * self.coupling[node] * (n as f64).sqrt();
        0.5 * (1.0 - (-tau / self.decay[node]).exp() * (w * tau).cos())
    }

    /// Period of the one-phonon oscillation of the slower node.
    pub fn slowest_period(&self) -> f64 {
        0.5 / self.coupling[0].min(self.coupling[1])
    }

    fn check(&self) -> Result<()> {
        if self.coupling.iter().chain(&self.decay).any(|x| !(*x > 0.0 && x.is_finite())) {
            return Err(Error::Config("trace model couplings and decays must be positive".into()));
        }
        Ok(())
    }
}

/// Joint qubit probabilities `gg, ge, eg, ee` versus interaction time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceSet {
    pub taus: Vec<f64>,
    pub probabilities: Vec<[f64; 4]>,
    /// Shots per time point when the probabilities are empirical.
    pub shots: Option<u64>,
}

impl TraceSet {
    pub fn validate(&self) -> Result<()> {
        if self.taus.is_empty() || self.taus.len() != self.probabilities.len() {
            return Err(Error::Config("trace set needs one probability vector per time".into()));
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("tau_s,P_gg,P_ge,P_eg,P_ee\n");
        for (t, p) in self.taus.iter().zip(&self.probabilities) {
            s.push_str(&format!("{t:e},{},{},{},{}\n", p[0], p[1], p[2], p[3]));
        }
        s
    }
}

/// `P[n][m]` for `n, m < levels`, stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointPopulations {
    levels: usize,
    values: Vec<f64>,
    residual: f64,
}

impl JointPopulations {
    pub fn new(levels: usize, values: Vec<f64>, residual: f64) -> Result<Self> {
        if levels == 0 || values.len() != levels * levels {
            return Err(Error::DimensionMismatch {
                expected: levels * levels,
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite() || *v < -1e-12) {
            return Err(Error::Probability("populations must be finite and non-negative".into()));
        }
        Ok(Self {
            levels,
            values,
            residual,
        })
    }

    /// Diagonal of a two-mode state restricted to `levels` per mode.
    pub fn from_density(rho: &DensityMatrix, levels: usize) -> Result<Self> {
        let layout = rho.layout();
        if layout.num_subsystems() != 2 {
            return Err(Error::Subsystem("expected a two-mode state".into()));
        }
        let values = (0..levels * levels)
            .map(|k| {
                let (n, m) = (k / levels, k % levels);
                if n < layout.dim(0) && m < layout.dim(1) {
                    rho.matrix()[(layout.index(&[n, m]), layout.index(&[n, m]))].re.max(0.0)
                } else {
                    0.0
                }
            })
            .collect();
        Self::new(levels, values, 0.0)
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, n: usize, m: usize) -> f64 {
        self.values[n * self.levels + m]
    }

    /// Residual norm of the trace fit that produced these populations.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("n\\m");
        for m in 0..self.levels {
            s.push_str(&format!(",{m}"));
        }
        s.push('\n');
        for n in 0..self.levels {
            s.push_str(&n.to_string());
            for m in 0..self.levels {
                s.push_str(&format!(",{}", self.get(n, m)));
            }
            s.push('\n');
        }
        s
    }
}

fn outcome_weights(qa: f64, qb: f64) -> [f64; 4] {
    [(1.0 - qa) * (1.0 - qb), (1.0 - qa) * qb, qa * (1.0 - qb), qa * qb]
}

/// Forward model: joint outcome probabilities for given resonator populations,
/// treating the two readout swaps as independent.
pub fn model_traces(populations: &JointPopulations, model: &TraceModel, taus: &[f64]) -> TraceSet {
    let l = populations.levels();
    let probabilities = taus
        .iter()
        .map(|&tau| {
            let qa: Vec<f64> = (0..l).map(|n| model.excitation(0, n, tau)).collect();
            let qb: Vec<f64> = (0..l).map(|m| model.excitation(1, m, tau)).collect();
            let mut p = [0.0; 4];
            for n in 0..l {
                for m in 0..l {
                    let w = populations.get(n, m);
                    if w == 0.0 {
                        continue;
                    }
                    let o = outcome_weights(qa[n], qb[m]);
                    for k in 0..4 {
                        p[k] += w * o[k];
                    }
                }
            }
            p
        })
        .collect();
    TraceSet {
        taus: taus.to_vec(),
        probabilities,
        shots: None,
    }
}

/// Non-negative least squares by the Lawson-Hanson active-set method.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let n = a.ncols();
    let mut x = DVector::<f64>::zeros(n);
    let mut passive = vec![false; n];
    let tol = 1e-12 * a.norm().max(1.0) * b.norm().max(1.0);
    let solve = |passive: &[bool]| -> Result<DVector<f64>> {
        let cols: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
        let sub = a.select_columns(&cols);
        let z = sub
            .svd(true, true)
            .solve(b, 1e-13)
            .map_err(|e| Error::Fit(format!("least-squares subproblem failed: {e}")))?;
        let mut full = DVector::zeros(n);
        for (k, &j) in cols.iter().enumerate() {
            full[j] = z[k];
        }
        Ok(full)
    };
    for _ in 0..3 * n + 10 {
        let w = a.transpose() * (b - a * &x);
        let pick = (0..n)
            .filter(|&j| !passive[j])
            .max_by(|&i, &j| w[i].total_cmp(&w[j]))
            .filter(|&j| w[j] > tol);
        let Some(j) = pick else {
            return Ok(x);
        };
        passive[j] = true;
        loop {
            let z = solve(&passive)?;
            if (0..n).filter(|&k| passive[k]).all(|k| z[k] > 0.0) {
                x = z;
                break;
            }
            let mut alpha = f64::INFINITY;
            for k in (0..n).filter(|&k| passive[k] && z[k] <= 0.0) {
                alpha = alpha.min(x[k] / (x[k] - z[k]));
            }
            x += (&z - &x) * alpha;
            for k in 0..n {
                if passive[k] && x[k] <= 1e-15 {
                    passive[k] = false;
                    x[k] = 0.0;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    Ok(x)
}

/// Fit joint populations over `levels` Fock states per mode to a trace set.
pub fn fit_populations(traces: &TraceSet, model: &TraceModel, levels: usize) -> Result<JointPopulations> {
    traces.validate()?;
    model.check()?;
    if levels == 0 {
        return Err(Error::Config("fit needs at least one level".into()));
    }
    let t_min = traces.taus.iter().copied().fold(f64::INFINITY, f64::min);
    let t_max = traces.taus.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if t_max - t_min < model.slowest_period() {
        return Err(Error::Identifiability(format!(
            "time grid spans {:.3e} s, shorter than one oscillation period {:.3e} s",
            t_max - t_min,
            model.slowest_period()
        )));
    }
    let k = levels * levels;
    let rows = 4 * traces.taus.len();
    if rows < k {
        return Err(Error::Identifiability(format!("{rows} trace values for {k} populations")));
    }
    let mut data = DMatrix::<f64>::zeros(rows, k);
    let mut b = DVector::<f64>::zeros(rows);
    for (i, (&tau, p)) in traces.taus.iter().zip(&traces.probabilities).enumerate() {
        for n in 0..levels {
            let qa = model.excitation(0, n, tau);
            for m in 0..levels {
                let o = outcome_weights(qa, model.excitation(1, m, tau));
                for c in 0..4 {
                    data[(4 * i + c, n * levels + m)] = o[c];
                }
            }
        }
        for c in 0..4 {
            b[4 * i + c] = p[c];
        }
    }
    // same minimizer on the triangular factor: ‖Ax − b‖² = ‖Rx − Qᵀb‖² + const
    let qr = data.clone().qr();
    let r = qr.r();
    let qtb = qr.q().transpose() * &b;
    let s = r.singular_values();
    if s.min() < 1e-9 * s.max() {
        return Err(Error::Identifiability(format!(
            "design matrix is rank deficient (condition {:.1e})",
            s.max() / s.min()
        )));
    }
    let weight = 100.0 * (rows as f64).sqrt();
    let mut a = DMatrix::<f64>::zeros(k + 1, k);
    a.rows_mut(0, k).copy_from(&r);
    a.row_mut(k).fill(weight);
    let mut rhs = DVector::<f64>::zeros(k + 1);
    rhs.rows_mut(0, k).copy_from(&qtb);
    rhs[k] = weight;
    let x = nnls(&a, &rhs)?;
    let residual = (&data * &x - &b).norm();
    let total: f64 = x.sum();
    let values = x.iter().map(|v| (v / total).max(0.0)).collect();
    JointPopulations::new(levels, values, residual)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    /// Shots per trace time point; `None` for exact probabilities.
    pub shots: Option<u64>,
    pub seed: u64,
    /// Fock levels per mode used in the population fits.
    pub levels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TomographyDataset {
    pub grid: DisplacementGrid,
    pub populations: Vec<JointPopulations>,
    pub meta: DatasetMeta,
}

impl TomographyDataset {
    pub fn new(grid: DisplacementGrid, populations: Vec<JointPopulations>, meta: DatasetMeta) -> Result<Self> {
        if grid.len() != populations.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                got: populations.len(),
            });
        }
        if populations.iter().any(|p| p.levels() != meta.levels) {
            return Err(Error::Config("population records disagree on the level count".into()));
        }
        Ok(Self {
            grid,
            populations,
            meta,
        })
    }

    /// Points `indices` in the given order; repeats allowed.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let points = indices.iter().map(|&i| self.grid.points[i]).collect();
        let populations = indices.iter().map(|&i| self.populations[i].clone()).collect();
        Ok(Self {
            grid: DisplacementGrid { points },
            populations,
            meta: self.meta.clone(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let d: Self = serde_json::from_str(s)?;
        Self::new(d.grid, d.populations, d.meta)
    }
}

/// How synthetic tomography data are produced from a resonator state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthesisOptions {
    pub taus: Vec<f64>,
    /// Shots per time point; `None` gives exact probabilities.
    pub shots: Option<u64>,
    pub model: TraceModel,
    /// Fock levels per mode in the population fits.
    pub fit_levels: usize,
    /// Readout error applied before sampling and inverted afterwards.
    pub readout: Option<VisibilityMatrix>,
    pub correction: CorrectionMode,
    /// Truncation used when displacing the state.
    pub work_levels: usize,
}

impl SynthesisOptions {
    /// 0 to 300 ns in 2 ns steps, 3000 shots, no readout error.
    pub fn new(device: &DeviceParams, config: &ProtocolConfig, fit_levels: usize) -> Self {
        SynthesisOptions {
            taus: (0..=150).map(|i| i as f64 * 2e-9).collect(),
            shots: Some(3000),
            model: TraceModel::new(device, config),
            fit_levels,
            readout: None,
            correction: CorrectionMode::Raw,
            work_levels: 12,
        }
    }
}

/// Swap traces for one displacement point: exact, or sampled through readout
/// error and corrected.
pub fn synthesize_traces(
    rho_work: &DensityMatrix,
    alphas: [C64; 2],
    options: &SynthesisOptions,
    rng: &mut Rng,
) -> Result<TraceSet> {
    let pops = displaced_populations(rho_work, alphas[0], alphas[1])?;
    let mut traces = model_traces(&pops, &options.model, &options.taus);
    if let Some(n) = options.shots {
        for p in traces.probabilities.iter_mut() {
            let mut q = *p;
            if let Some(v) = &options.readout {
                q = v.apply(&q);
            }
            let s: f64 = q.iter().sum();
            let q = q.map(|x| x.max(0.0) / s);
            let mut f = frequencies(&sample_shots(&q, n, rng)?);
            if let Some(v) = &options.readout {
                f = v.correct(&f, options.correction).probabilities;
            }
            *p = f;
        }
        traces.shots = Some(n);
    }
    Ok(traces)
}

/// Full synthetic measurement of `rho_m` on `grid`; grid points run in
/// parallel with one random stream each.
pub fn synthesize_dataset(
    rho_m: &DensityMatrix,
    grid: &DisplacementGrid,
    options: &SynthesisOptions,
    seed: u64,
) -> Result<TomographyDataset> {
    let work = resize_modes(rho_m, options.work_levels.max(rho_m.layout().dim(0)).max(rho_m.layout().dim(1)))?;
    let populations = grid
        .points()
        .par_iter()
        .enumerate()
        .map(|(k, &alphas)| {
            let mut rng = stream(seed, "tomography", k as u64);
            let traces = synthesize_traces(&work, alphas, options, &mut rng)?;
            fit_populations(&traces, &options.model, options.fit_levels)
        })
        .collect::<Result<Vec<_>>>()?;
    TomographyDataset::new(
        grid.clone(),
        populations,
        DatasetMeta {
            shots: options.shots,
            seed,
            levels: options.fit_levels,
        },
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconstructOptions {
    /// Fock levels per mode of the returned matrix.
    pub levels: usize,
    /// Force zero rows and columns above this Fock index in either mode.
    pub zero_pad_above: Option<usize>,
    pub max_iterations: usize,
    /// Relative objective change that stops the iteration.
    pub tolerance: f64,
}

impl ReconstructOptions {
    pub fn new(levels: usize, zero_pad_above: Option<usize>) -> Self {
        Self {
            levels,
            zero_pad_above,
            max_iterations: 20_000,
            tolerance: 1e-9,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    pub rho: DensityMatrix,
    /// `Σ_k ‖diag(D_k ρ D_k†) − p_k‖²` at the solution.
    pub objective: f64,
    pub iterations: usize,
    /// Norm of the projected-gradient step at exit.
    pub gradient_norm: f64,
}

/// Hermitian `s × s` matrices as real vectors of length `s²`, isometric in
/// the Frobenius norm: diagonal, then √2·Re and √2·Im of the upper triangle.
struct HermitianCoords {
    s: usize,
    pairs: Vec<(usize, usize)>,
}

impl HermitianCoords {
    fn new(s: usize) -> Self {
        let pairs = (0..s).flat_map(|i| ((i + 1)..s).map(move |j| (i, j))).collect();
        Self { s, pairs }
    }

    fn len(&self) -> usize {
        self.s * self.s
    }

    fn to_matrix(&self, x: &DVector<f64>) -> CMatrix {
        let s = self.s;
        let np = self.pairs.len();
        let mut m = CMatrix::zeros(s, s);
        for i in 0..s {
            m[(i, i)] = C64::new(x[i], 0.0);
        }
        for (k, &(i, j)) in self.pairs.iter().enumerate() {
            let z = C64::new(x[s + k], x[s + np + k]) * std::f64::consts::FRAC_1_SQRT_2;
            m[(i, j)] = z;
            m[(j, i)] = z.conj();
        }
        m
    }

    fn from_matrix(&self, m: &CMatrix) -> DVector<f64> {
        let s = self.s;
        let np = self.pairs.len();
        let mut x = DVector::zeros(self.len());
        for i in 0..s {
            x[i] = m[(i, i)].re;
        }
        for (k, &(i, j)) in self.pairs.iter().enumerate() {
            let z = (m[(i, j)] + m[(j, i)].conj()) * std::f64::consts::FRAC_1_SQRT_2;
            x[s + k] = z.re;
            x[s + np + k] = z.im;
        }
        x
    }

    /// Coefficients of `⟨c|ρ|c⟩ = Σ c_a ρ_ab c_b*` in these coordinates.
    fn row(&self, c: &[C64], out: &mut [f64]) {
        let s = self.s;
        let np = self.pairs.len();
        for i in 0..s {
            out[i] = c[i].norm_sqr();
        }
        for (k, &(i, j)) in self.pairs.iter().enumerate() {
            let w = c[i] * c[j].conj() * std::f64::consts::SQRT_2;
            out[s + k] = w.re;
            out[s + np + k] = -w.im;
        }
    }
}

/// Euclidean projection onto unit-trace PSD matrices: eigenvalues are
/// projected onto the probability simplex.
fn project_density(m: &CMatrix) -> CMatrix {
    let (values, vectors) = hermitian_eigen(m);
    let p = project_simplex(&values);
    let d = CVector::from_iterator(p.len(), p.iter().map(|&v| C64::new(v, 0.0)));
    let out = &vectors * CMatrix::from_diagonal(&d) * vectors.adjoint();
    (&out + out.adjoint()) * C64::new(0.5, 0.0)
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
fn spectral_bound(g: &DMatrix<f64>) -> f64 {
    let n = g.nrows();
    let mut v = DVector::from_fn(n, |i, _| 1.0 + (i as f64 * 0.618).fract());
    let mut lambda = 0.0;
    for _ in 0..500 {
        let w = g * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = v.dot(&w) / v.norm_squared();
        v = w / norm;
        if (next - lambda).abs() <= 1e-10 * next.abs() {
            lambda = next;
            break;
        }
        lambda = next;
    }
    lambda * 1.01
}

/// Least-squares density matrix consistent with the dataset.
pub fn reconstruct(
    dataset: &TomographyDataset,
    levels: usize,
    zero_pad_above: Option<usize>,
) -> Result<Reconstruction> {
    reconstruct_with(dataset, &ReconstructOptions::new(levels, zero_pad_above))
}

pub fn reconstruct_with(dataset: &TomographyDataset, options: &ReconstructOptions) -> Result<Reconstruction> {
    if dataset.populations.is_empty() {
        return Err(Error::Config("dataset is empty".into()));
    }
    let levels = options.levels;
    if levels < 2 {
        return Err(Error::Config("reconstruction needs at least two levels".into()));
    }
    let support_levels = options.zero_pad_above.map_or(levels, |p| (p + 1).min(levels));
    let support = support_levels * support_levels;
    let coords = HermitianCoords::new(support);
    let pop_levels = dataset.meta.levels;
    let work = pop_levels.max(support_levels) + 14;
    let per_point = pop_levels * pop_levels;
    let n_par = coords.len();

    if let Some(w) = dataset.grid.identifiability_warning(support_levels, per_point) {
        tracing::warn!("{w}");
    }

    // forward map rows, one block per grid point
    let blocks: Vec<Vec<f64>> = dataset
        .grid
        .points()
        .par_iter()
        .map(|&[aa, ab]| -> Result<Vec<f64>> {
            let da = displacement_operator(-aa, work)?.into_matrix();
            let db = displacement_operator(-ab, work)?.into_matrix();
            let mut block = vec![0.0; per_point * n_par];
            let mut c = vec![C64::new(0.0, 0.0); support];
            for n in 0..pop_levels {
                for m in 0..pop_levels {
                    for a in 0..support_levels {
                        for b in 0..support_levels {
                            c[a * support_levels + b] = da[(n, a)] * db[(m, b)];
                        }
                    }
                    let r = n * pop_levels + m;
                    coords.row(&c, &mut block[r * n_par..(r + 1) * n_par]);
                }
            }
            Ok(block)
        })
        .collect::<Result<_>>()?;
    let rows = blocks.len() * per_point;
    let a = DMatrix::from_row_iterator(rows, n_par, blocks.iter().flatten().copied());
    let b = DVector::from_iterator(rows, dataset.populations.iter().flat_map(|p| p.values().iter().copied()));
    let g = a.tr_mul(&a);
    let h = a.tr_mul(&b);
    let c0 = b.norm_squared();
    let objective = |x: &DVector<f64>| -> f64 { (x.dot(&(&g * x)) - 2.0 * h.dot(x) + c0).max(0.0) };
    let lipschitz = 2.0 * spectral_bound(&g);
    if !(lipschitz > 0.0) {
        return Err(Error::Identifiability("forward map is identically zero".into()));
    }
    let step = 1.0 / lipschitz;
    let project = |x: &DVector<f64>| coords.from_matrix(&project_density(&coords.to_matrix(x)));
    let floor = 1e-6 * c0;

    let mut x = coords.from_matrix(&(CMatrix::identity(support, support) * C64::new(1.0 / support as f64, 0.0)));
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut f = objective(&x);
    let mut calm = 0;
    let mut gradient_norm = f64::INFINITY;
    for it in 1..=options.max_iterations {
        let grad = (&g * &y - &h) * 2.0;
        let x_new = project(&(&y - &grad * step));
        let f_new = objective(&x_new);
        gradient_norm = (&y - &x_new).norm() * lipschitz;
        // restart momentum when it points uphill
        if (&y - &x_new).dot(&(&x_new - &x)) > 0.0 {
            t = 1.0;
        }
        let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = &x_new + (&x_new - &x) * ((t - 1.0) / t_new);
        t = t_new;
        let change = (f - f_new).abs();
        x = x_new;
        f = f_new;
        if change <= options.tolerance * f.max(floor) {
            calm += 1;
            if calm >= 3 {
                return finish(&coords, &x, levels, support_levels, f, it, gradient_norm);
            }
        } else {
            calm = 0;
        }
    }
    Err(Error::NoConvergence {
        iterations: options.max_iterations,
        gradient_norm,
    })
}

fn finish(
    coords: &HermitianCoords,
    x: &DVector<f64>,
    levels: usize,
    support_levels: usize,
    objective: f64,
    iterations: usize,
    gradient_norm: f64,
) -> Result<Reconstruction> {
    let small = coords.to_matrix(x);
    let n = levels * levels;
    let mut full = CMatrix::zeros(n, n);
    let embed = |k: usize| (k / support_levels) * levels + k % support_levels;
    for r in 0..small.nrows() {
        for c in 0..small.ncols() {
            full[(embed(r), embed(c))] = small[(r, c)];
        }
    }
    let rho = DensityMatrix::new(HilbertLayout::new(vec![levels, levels])?, full)?;
    Ok(Reconstruction {
        rho,
        objective,
        iterations,
        gradient_norm,
    })
}

/// `F = √⟨ψ|ρ|ψ⟩`.
pub fn fidelity(rho: &DensityMatrix, target: &CVector) -> Result<f64> {
    if target.len() != rho.dim() {
        return Err(Error::DimensionMismatch {
            expected: rho.dim(),
            got: target.len(),
        });
    }
    let norm = target.norm();
    if norm == 0.0 {
        return Err(Error::InvalidState("zero target vector".into()));
    }
    let v = (target.adjoint() * rho.matrix() * target)[(0, 0)].re / (norm * norm);
    Ok(v.clamp(0.0, 1.0).sqrt())
}

/// Root fidelity `Tr √(√ρ σ √ρ)` between mixed states.
pub fn state_fidelity(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    if rho.dim() != sigma.dim() {
        return Err(Error::DimensionMismatch {
            expected: rho.dim(),
            got: sigma.dim(),
        });
    }
    let s = sqrt_psd(rho.matrix());
    let inner = &s * sigma.matrix() * &s;
    let inner = (&inner + inner.adjoint()) * C64::new(0.5, 0.0);
    Ok(sqrt_psd(&inner).trace().re.clamp(0.0, 1.0))
}

/// `(|N0⟩ + e^{iφ}|0N⟩)/√2` on `levels` levels per mode.
pub fn noon_state(n: usize, levels: usize, phase: f64) -> Result<CVector> {
    if n == 0 || n >= levels {
        return Err(Error::Dimension(format!("N = {n} does not fit in {levels} levels")));
    }
    let mut v = CVector::zeros(levels * levels);
    v[n * levels] = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    v[n] = C64::from_polar(std::f64::consts::FRAC_1_SQRT_2, phase);
    Ok(v)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub mean: f64,
    /// Sample standard deviation.
    pub std: f64,
    pub fidelities: Vec<f64>,
}

/// Resample grid points with replacement and reconstruct each resample.
pub fn bootstrap(
    dataset: &TomographyDataset,
    options: &ReconstructOptions,
    target: &CVector,
    resamples: usize,
    seed: u64,
) -> Result<BootstrapResult> {
    use rand::Rng as _;
    if resamples < 2 {
        return Err(Error::Config("bootstrap needs at least two resamples".into()));
    }
    let k = dataset.grid.len();
    let fidelities = (0..resamples)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(seed, "bootstrap", r as u64);
            let idx: Vec<usize> = (0..k).map(|_| rng.random_range(0..k)).collect();
            let rec = reconstruct_with(&dataset.select(&idx)?, options)?;
            fidelity(&rec.rho, target)
        })
        .collect::<Result<Vec<f64>>>()?;
    let n = fidelities.len() as f64;
    let mean = fidelities.iter().sum::<f64>() / n;
    let var = fidelities.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(BootstrapResult {
        mean,
        std: var.sqrt(),
        fidelities,
    })
}

/// Matrix magnitudes with `|nm⟩` row and column labels, row-major.
pub fn magnitude_csv(rho: &DensityMatrix) -> String {
    let layout = rho.layout();
    let labels: Vec<String> = (0..rho.dim())
        .map(|i| layout.levels(i).iter().map(|l| l.to_string()).collect::<String>())
        .collect();
    let mut s = String::from("ket");
    for l in &labels {
        s.push_str(&format!(",{l}"));
    }
    s.push('\n');
    for (r, l) in labels.iter().enumerate() {
        s.push_str(l);
        for c in 0..rho.dim() {
            s.push_str(&format!(",{}", rho.matrix()[(r, c)].norm()));
        }
        s.push('\n');
    }
    s
}

/// Random two-mode state on `levels` levels per mode: `G G† / Tr` for a complex
/// Gaussian `G` with `rank` columns.
pub fn random_state(levels: usize, rank: usize, rng: &mut Rng) -> Result<DensityMatrix> {
    use rand_distr::{Distribution, StandardNormal};
    if levels == 0 || rank == 0 {
        return Err(Error::Dimension("random state needs levels and rank >= 1".into()));
    }
    let d = levels * levels;
    let g = CMatrix::from_fn(d, rank, |_, _| {
        C64::new(StandardNormal.sample(&mut *rng), StandardNormal.sample(&mut *rng))
    });
    let m = &g * g.adjoint();
    let tr = m.trace().re;
    DensityMatrix::new(HilbertLayout::new(vec![levels, levels])?, m / C64::new(tr, 0.0))
}

/// Real and imaginary parts of a density matrix for JSON output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityJson {
    pub dims: Vec<usize>,
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
}

impl From<&DensityMatrix> for DensityJson {
    fn from(rho: &DensityMatrix) -> Self {
        let n = rho.dim();
        let m = rho.matrix();
        DensityJson {
            dims: rho.layout().dims().to_vec(),
            re: (0..n).map(|r| (0..n).map(|c| m[(r, c)].re).collect()).collect(),
            im: (0..n).map(|r| (0..n).map(|c| m[(r, c)].im).collect()).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisplacementCalibration {
    pub node: Node,
    pub amplitudes: Vec<f64>,
    pub mean_phonons: Vec<f64>,
    /// `⟨n⟩ / amplitude²` from the low-amplitude points.
    pub slope: f64,
    /// Relative RMS deviation of the low-amplitude points from the line.
    pub residual: f64,
    /// Largest amplitude whose `⟨n⟩` stays within 5% of the line.
    pub linear_range: f64,
}

/// Drive one resonator with Gaussian pulses of area `amplitude · full_scale`
/// and record the mean phonon number left behind.
pub fn calibrate_displacement(
    device: &DeviceParams,
    node: Node,
    amplitudes: &[f64],
    full_scale: f64,
    sigma: f64,
    levels: usize,
) -> Result<DisplacementCalibration> {
    if amplitudes.is_empty() || amplitudes.iter().any(|a| !(0.0..=1.0).contains(a)) {
        return Err(Error::Config("displacement amplitudes must lie in [0, 1]".into()));
    }
    if !(sigma > 0.0 && full_scale > 0.0) {
        return Err(Error::Config("sigma and full scale must be positive".into()));
    }
    if levels < 2 {
        return Err(Error::Dimension("displacement calibration needs at least two levels".into()));
    }
    // the undriven resonator stays in vacuum
    let mut dims = vec![3, 3, 2, 2];
    dims[node.resonator()] = levels;
    let rho0 = DensityMatrix::basis(HilbertLayout::new(dims)?, &[0, 0, 0, 0])?;
    let mean_phonons = amplitudes
        .par_iter()
        .map(|&amp| -> Result<f64> {
            if amp == 0.0 {
                return Ok(0.0);
            }
            let window = 6.0 * sigma;
            let schedule = PulseSchedule::new(vec![
                Segment {
                    channel: node.drive(),
                    t0: 0.0,
                    duration: window,
                    payload: Payload::Displacement {
                        alpha: C64::new(amp * full_scale, 0.0),
                        shape: Shape::Gaussian { sigma },
                    },
                },
                Segment {
                    channel: Channel::Readout,
                    t0: window,
                    duration: 0.0,
                    payload: Payload::Measure,
                },
            ])?;
            let traj = evolve(device, &rho0, &schedule, &EvolveOptions::default())?;
            let res = partial_trace(&traj.final_state, &[node.resonator()])?;
            Ok(res.mean_level(0))
        })
        .collect::<Result<Vec<f64>>>()?;

    let a_max = amplitudes.iter().copied().fold(0.0, f64::max);
    let low: Vec<usize> = (0..amplitudes.len()).filter(|&i| amplitudes[i] <= 0.5 * a_max).collect();
    let low = if low.len() >= 2 { low } else { (0..amplitudes.len()).collect() };
    let x: Vec<f64> = low.iter().map(|&i| amplitudes[i].powi(2)).collect();
    let y: Vec<f64> = low.iter().map(|&i| mean_phonons[i]).collect();
    let slope = crate::fit::slope_through_origin(&x, &y);
    let scale = y.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    let residual = x.iter().zip(&y).map(|(a, b)| (slope * a - b).powi(2)).sum::<f64>().sqrt() / scale;
    let mut order: Vec<usize> = (0..amplitudes.len()).collect();
    order.sort_by(|&i, &j| amplitudes[i].total_cmp(&amplitudes[j]));
    let mut linear_range = 0.0;
    for &i in &order {
        let expect = slope * amplitudes[i].powi(2);
        if expect == 0.0 || ((mean_phonons[i] - expect) / expect).abs() < 0.05 {
            linear_range = amplitudes[i];
        } else {
            break;
        }
    }
    Ok(DisplacementCalibration {
        node,
        amplitudes: amplitudes.to_vec(),
        mean_phonons,
        slope,
        residual,
        linear_range,
    })
}
