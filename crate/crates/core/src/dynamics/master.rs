use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use super::frame::{rotation_block, ControlFrame, DriveTarget, EventKind};
use super::sparse::Sparse;
use super::DeviceParams;
use crate::error::{Error, Result};
use crate::hilbert::{
    displacement_operator, hermitian_eigen, CMatrix, DensityMatrix, HilbertLayout, Operator, C64, QA, QB, RA, RB, ZERO,
};
use crate::pulses::{Node, PulseSchedule, Transition};

/// Reference frame of the simulation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    /// Each node rotates at its resonator frequency.
    #[default]
    Rotating,
    Lab,
}

/// Frequency-dependent extra qubit decay rate (s⁻¹) applied while the node's
/// coupler is active, in place of the fixed swap-context lifetime.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmissionRate {
    frequencies: Vec<f64>,
    rates: Vec<f64>,
}

impl EmissionRate {
    pub fn new(frequencies: Vec<f64>, rates: Vec<f64>) -> Result<Self> {
        if frequencies.is_empty() || frequencies.len() != rates.len() {
            return Err(Error::Config("emission rate table must be non-empty with matching lengths".into()));
        }
        if frequencies.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("emission rate frequencies must increase".into()));
        }
        if rates.iter().any(|r| !(*r >= 0.0)) {
            return Err(Error::Config("emission rates must be non-negative".into()));
        }
        Ok(Self { frequencies, rates })
    }

    /// Linear interpolation, clamped at the table ends.
    pub fn rate(&self, f: f64) -> f64 {
        let fs = &self.frequencies;
        if f <= fs[0] {
            return self.rates[0];
        }
        if f >= fs[fs.len() - 1] {
            return self.rates[fs.len() - 1];
        }
        let i = fs.partition_point(|&x| x <= f) - 1;
        let w = (f - fs[i]) / (fs[i + 1] - fs[i]);
        self.rates[i] * (1.0 - w) + self.rates[i + 1] * w
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvolveOptions {
    pub dt_max: f64,
    /// Observables are recorded here; the end time alone if empty.
    pub sample_times: Vec<f64>,
    /// Full density matrices are stored here.
    pub checkpoint_times: Vec<f64>,
    pub dissipation: bool,
    pub frame: Frame,
    pub emission: [Option<EmissionRate>; 2],
    /// Check Hermiticity, trace and positivity after every step (slow).
    pub monitor: bool,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self {
            dt_max: 0.05e-9,
            sample_times: Vec::new(),
            checkpoint_times: Vec::new(),
            dissipation: true,
            frame: Frame::Rotating,
            emission: [None, None],
            monitor: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub steps: usize,
    pub max_trace_error: f64,
    /// Populated only with `monitor`.
    pub max_hermiticity_error: f64,
    /// Populated only with `monitor`.
    pub min_eigenvalue: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// Joint qubit populations, index `k_A · levels + k_B`.
    pub qubit_populations: Vec<Vec<f64>>,
    pub phonon_numbers: Vec<[f64; 2]>,
    pub checkpoints: Vec<(f64, DensityMatrix)>,
    pub final_state: DensityMatrix,
    /// Truncation warnings; a two-level resonator is taken as a deliberate
    /// single-excitation model and never warns.
    pub warnings: Vec<String>,
    pub diagnostics: Diagnostics,
    qubit_levels: usize,
}

impl Trajectory {
    pub fn qubit_levels(&self) -> usize {
        self.qubit_levels
    }

    pub fn joint(&self, sample: usize, ka: usize, kb: usize) -> f64 {
        self.qubit_populations[sample][ka * self.qubit_levels + kb]
    }

    /// Probability that the given node's qubit is in `|e⟩`.
    pub fn excited(&self, sample: usize, node: Node) -> f64 {
        (0..self.qubit_levels)
            .map(|k| match node {
                Node::A => self.joint(sample, 1, k),
                Node::B => self.joint(sample, k, 1),
            })
            .sum()
    }
}

#[derive(Clone, Debug)]
enum RateKind {
    Constant(f64),
    QubitRelax { node: Node, idle: f64, swap: f64 },
}

#[derive(Clone, Debug)]
struct Jump {
    op: Sparse,
    gram: Vec<f64>,
    kind: RateKind,
}

/// Precomputed operators for one device and layout.
pub(crate) struct Model {
    layout: HilbertLayout,
    n: usize,
    qubit_levels: usize,
    frame_freq: [f64; 2],
    level: [Vec<f64>; 2],
    phonons: [Vec<f64>; 2],
    static_energy: Vec<f64>,
    couple: [[Sparse; 2]; 2],
    qq: Sparse,
    raise: [[Sparse; 2]; 2],
    adag: [Sparse; 2],
    g: [[f64; 2]; 2],
    g_q: f64,
    jumps: Vec<Jump>,
    dephasing: Option<Vec<f64>>,
    dephasing_ops: Vec<(Sparse, f64)>,
    emission: [Option<EmissionRate>; 2],
}

fn check_layout(layout: &HilbertLayout) -> Result<()> {
    let d = layout.dims();
    if d.len() != 4 || d[QA] < 3 || d[QB] < 3 || d[QA] != d[QB] || d[RA] < 2 || d[RB] < 2 {
        return Err(Error::Dimension(format!(
            "expected (qubit, qubit, resonator, resonator) layout with >= 3 equal qubit levels, got {d:?}"
        )));
    }
    Ok(())
}

impl Model {
    pub fn new(device: &DeviceParams, layout: &HilbertLayout, options: &EvolveOptions) -> Result<Self> {
        device.validate()?;
        check_layout(layout)?;
        let n = layout.total_dim();
        let q = layout.dim(QA);
        let frame_freq = match options.frame {
            Frame::Rotating => [TAU * device.a.resonator, TAU * device.b.resonator],
            Frame::Lab => [0.0, 0.0],
        };
        let mut level = [vec![0.0; n], vec![0.0; n]];
        let mut phonons = [vec![0.0; n], vec![0.0; n]];
        let mut static_energy = vec![0.0; n];
        for r in 0..n {
            let lv = layout.levels(r);
            for node in Node::ALL {
                let j = node.index();
                let p = device.node(node);
                let k = lv[node.qubit()] as f64;
                let m = lv[node.resonator()] as f64;
                level[j][r] = k;
                phonons[j][r] = m;
                static_energy[r] += 0.5 * k * (k - 1.0) * TAU * p.anharmonicity + m * (TAU * p.resonator - frame_freq[j]);
            }
        }

        let s_ge = Operator::s_ge(q);
        let s_ef = Operator::s_ef(q);
        let s_ge_dag = s_ge.adjoint();
        let s_ef_dag = s_ef.adjoint();
        let a = [Operator::annihilation(layout.dim(RA)), Operator::annihilation(layout.dim(RB))];
        let couple = Node::ALL.map(|node| {
            let (qs, rs) = (node.qubit(), node.resonator());
            let am = a[node.index()].matrix();
            [
                Sparse::product(layout, &[(qs, s_ge_dag.matrix()), (rs, am)]),
                Sparse::product(layout, &[(qs, s_ef_dag.matrix()), (rs, am)]),
            ]
        });
        let qq = Sparse::product(layout, &[(QA, s_ge_dag.matrix()), (QB, s_ge.matrix())]);
        let raise = Node::ALL.map(|node| {
            [
                Sparse::product(layout, &[(node.qubit(), s_ge_dag.matrix())]),
                Sparse::product(layout, &[(node.qubit(), s_ef_dag.matrix())]),
            ]
        });
        let adag = Node::ALL.map(|node| Sparse::product(layout, &[(node.resonator(), a[node.index()].adjoint().matrix())]));
        let g = Node::ALL.map(|node| [TAU * device.node(node).g_ge, TAU * device.node(node).g_ef]);

        let mut jumps = Vec::new();
        let mut dephasing_ops = Vec::new();
        let mut dephasing = None;
        if options.dissipation {
            let mut deph = vec![0.0; n * n];
            for node in Node::ALL {
                let p = device.node(node);
                let j = node.index();
                let (qs, rs) = (node.qubit(), node.resonator());
                jumps.push(Jump {
                    op: Sparse::product(layout, &[(qs, s_ge.matrix())]),
                    gram: Vec::new(),
                    kind: RateKind::QubitRelax {
                        node,
                        idle: 1.0 / p.qubit_t1,
                        swap: 1.0 / p.qubit_t1_swap,
                    },
                });
                jumps.push(Jump {
                    op: Sparse::product(layout, &[(qs, s_ef.matrix())]),
                    gram: Vec::new(),
                    kind: RateKind::Constant(1.0 / p.qubit_t1_f),
                });
                jumps.push(Jump {
                    op: Sparse::product(layout, &[(rs, a[j].matrix())]),
                    gram: Vec::new(),
                    kind: RateKind::Constant(1.0 / p.resonator_t1),
                });
                let rates = [
                    (p.qubit_dephasing_rate(), &level[j], qs),
                    (p.resonator_dephasing_rate(), &phonons[j], rs),
                ];
                for (rate, lv, sub) in rates {
                    if rate < 0.0 {
                        return Err(Error::Config(format!(
                            "node {node}: negative pure dephasing rate {rate:e} s^-1 on subsystem {sub}"
                        )));
                    }
                    let num = Operator::number(layout.dim(sub)).scale(C64::new(2f64.sqrt(), 0.0));
                    dephasing_ops.push((Sparse::product(layout, &[(sub, num.matrix())]), rate));
                    for c in 0..n {
                        for r in 0..n {
                            let d = lv[r] - lv[c];
                            deph[r + c * n] += rate * d * d;
                        }
                    }
                }
            }
            for jmp in &mut jumps {
                debug_assert!(jmp.op.is_monomial(n));
                jmp.gram = jmp.op.gram_diagonal(n);
            }
            dephasing = Some(deph);
        }

        Ok(Self {
            layout: layout.clone(),
            n,
            qubit_levels: q,
            frame_freq,
            level,
            phonons,
            static_energy,
            couple,
            qq,
            raise,
            adag,
            g,
            g_q: TAU * device.g_q,
            jumps,
            dephasing,
            dephasing_ops,
            emission: options.emission.clone(),
        })
    }

    fn rate(&self, kind: &RateKind, ctrl: &ControlFrame, t: f64) -> f64 {
        match *kind {
            RateKind::Constant(r) => r,
            RateKind::QubitRelax { node, idle, swap } => {
                if ctrl.coupler(node, t) > 0.0 {
                    match &self.emission[node.index()] {
                        Some(hook) => idle + hook.rate(ctrl.qubit_frequency(node, t)),
                        None => swap,
                    }
                } else {
                    idle
                }
            }
        }
    }

    /// Off-diagonal Hamiltonian terms `c·T + h.c.` at time `t` (frame picture).
    fn terms(&self, ctrl: &ControlFrame, t: f64, mut f: impl FnMut(&Sparse, C64)) {
        for node in Node::ALL {
            let lambda = ctrl.coupler(node, t);
            if lambda > 0.0 {
                let j = node.index();
                f(&self.couple[j][0], C64::new(lambda * self.g[j][0], 0.0));
                f(&self.couple[j][1], C64::new(lambda * self.g[j][1], 0.0));
            }
        }
        if self.g_q != 0.0 {
            let w = self.frame_freq[0] - self.frame_freq[1];
            f(&self.qq, C64::from_polar(self.g_q, w * t));
        }
        for d in ctrl.drives() {
            let env = d.envelope(t);
            if env == 0.0 {
                continue;
            }
            match d.target {
                DriveTarget::Qubit(node, tr) => {
                    let detuning = TAU * d.carrier - self.frame_freq[node.index()];
                    let c = C64::from_polar(0.5 * d.area * env, -(detuning * t + d.phase));
                    let k = match tr {
                        Transition::Ge => 0,
                        Transition::Ef => 1,
                    };
                    f(&self.raise[node.index()][k], c);
                }
                DriveTarget::Resonator(node) => {
                    let detuning = TAU * d.carrier - self.frame_freq[node.index()];
                    let c = C64::new(0.0, 1.0) * C64::from_polar(d.area * env, d.phase - detuning * t);
                    f(&self.adag[node.index()], c);
                }
            }
        }
    }

    fn node_phase(&self, ctrl: &ControlFrame, t: f64) -> [f64; 2] {
        Node::ALL.map(|node| ctrl.qubit_phase(node, t) - self.frame_freq[node.index()] * t)
    }

    /// `p_r = exp(−i Φ_r(t))`, `Φ_r` the integrated diagonal energy.
    fn phases(&self, ctrl: &ControlFrame, t: f64, out: &mut [C64]) {
        let [a0, a1] = self.node_phase(ctrl, t);
        for (r, p) in out.iter_mut().enumerate() {
            let phi = self.level[0][r] * a0 + self.level[1][r] * a1 + self.static_energy[r] * t;
            *p = C64::from_polar(1.0, -phi);
        }
    }

    /// Diagonal energies in the frame picture.
    fn diagonal_energy(&self, ctrl: &ControlFrame, t: f64) -> Vec<f64> {
        let w = Node::ALL.map(|node| TAU * ctrl.qubit_frequency(node, t) - self.frame_freq[node.index()]);
        (0..self.n)
            .map(|r| self.level[0][r] * w[0] + self.level[1][r] * w[1] + self.static_energy[r])
            .collect()
    }

    pub fn hamiltonian(&self, ctrl: &ControlFrame, t: f64) -> CMatrix {
        let n = self.n;
        let mut h = CMatrix::zeros(n, n);
        for (r, e) in self.diagonal_energy(ctrl, t).into_iter().enumerate() {
            h[(r, r)] = C64::new(e, 0.0);
        }
        self.terms(ctrl, t, |op, c| {
            for e in &op.entries {
                let v = c * e.v;
                h[(e.r, e.c)] += v;
                h[(e.c, e.r)] += v.conj();
            }
        });
        h
    }

    /// Time derivative of the interaction-picture state `ρ̃ = U₀† ρ U₀`,
    /// `U₀ = diag(p)`.
    fn rhs(&self, ctrl: &ControlFrame, t: f64, rho: &[C64], out: &mut [C64], w: &mut Work) {
        let n = self.n;
        self.phases(ctrl, t, &mut w.phase);
        let p = &w.phase;

        w.entries.clear();
        let entries = &mut w.entries;
        self.terms(ctrl, t, |op, c| {
            for e in &op.entries {
                let v = c * e.v * p[e.r].conj() * p[e.c];
                entries.push((e.r, e.c, v));
                entries.push((e.c, e.r, v.conj()));
            }
        });

        for d in w.hdiag.iter_mut() {
            *d = ZERO;
        }
        w.rates.clear();
        for jmp in &self.jumps {
            let g = self.rate(&jmp.kind, ctrl, t);
            w.rates.push(g);
            if g > 0.0 {
                for (d, &x) in w.hdiag.iter_mut().zip(&jmp.gram) {
                    d.im -= 0.5 * g * x;
                }
            }
        }

        // K = H_eff ρ̃
        for j in 0..n {
            let col = &rho[j * n..(j + 1) * n];
            let kcol = &mut w.k[j * n..(j + 1) * n];
            for r in 0..n {
                kcol[r] = w.hdiag[r] * col[r];
            }
            for &(r, c, v) in w.entries.iter() {
                kcol[r] += v * col[c];
            }
        }
        // −i (K − K†)
        for c in 0..n {
            for r in 0..n {
                let d = w.k[r + c * n] - w.k[c + r * n].conj();
                out[r + c * n] = C64::new(d.im, -d.re);
            }
        }
        if let Some(deph) = &self.dephasing {
            for ((o, &x), &g) in out.iter_mut().zip(rho).zip(deph) {
                *o -= x * g;
            }
        }
        for (jmp, &g) in self.jumps.iter().zip(&w.rates) {
            if g <= 0.0 {
                continue;
            }
            w.jump.clear();
            w.jump
                .extend(jmp.op.entries.iter().map(|e| (e.r, e.c, e.v * p[e.r].conj() * p[e.c])));
            for &(r2, c2, v2) in &w.jump {
                let v2 = v2.conj() * g;
                let rcol = &rho[c2 * n..(c2 + 1) * n];
                let ocol = &mut out[r2 * n..(r2 + 1) * n];
                for &(r1, c1, v1) in &w.jump {
                    ocol[r1] += v1 * v2 * rcol[c1];
                }
            }
        }
    }

    fn event_operator(&self, kind: &EventKind, t: f64) -> Result<Option<(usize, CMatrix)>> {
        Ok(match *kind {
            EventKind::QubitRotation {
                node,
                transition,
                angle,
                phase,
                carrier,
            } => {
                let detuning = TAU * carrier - self.frame_freq[node.index()];
                let block = rotation_block(angle, phase + detuning * t);
                let lo = transition.lower_level();
                let mut u = CMatrix::identity(self.qubit_levels, self.qubit_levels);
                for i in 0..2 {
                    for j in 0..2 {
                        u[(lo + i, lo + j)] = block[i][j];
                    }
                }
                Some((node.qubit(), u))
            }
            EventKind::Displacement { node, alpha, carrier } => {
                let detuning = TAU * carrier - self.frame_freq[node.index()];
                let a = alpha * C64::from_polar(1.0, -detuning * t);
                let d = displacement_operator(a, self.layout.dim(node.resonator()))?;
                Some((node.resonator(), d.into_matrix()))
            }
            EventKind::Measure => None,
        })
    }

    /// `ρ = U₀ ρ̃ U₀†`
    fn to_frame(&self, rho: &CMatrix, p: &[C64]) -> CMatrix {
        CMatrix::from_fn(self.n, self.n, |r, c| p[r] * rho[(r, c)] * p[c].conj())
    }

    fn observe(&self, rho: &CMatrix) -> (Vec<f64>, [f64; 2], [f64; 2]) {
        let q = self.qubit_levels;
        let mut pops = vec![0.0; q * q];
        let mut nbar = [0.0; 2];
        let mut top = [0.0; 2];
        let tops = [self.layout.dim(RA) - 1, self.layout.dim(RB) - 1];
        for r in 0..self.n {
            let x = rho[(r, r)].re;
            let ka = self.level[0][r] as usize;
            let kb = self.level[1][r] as usize;
            pops[ka * q + kb] += x;
            for j in 0..2 {
                nbar[j] += self.phonons[j][r] * x;
                if self.phonons[j][r] as usize == tops[j] {
                    top[j] += x;
                }
            }
        }
        (pops, nbar, top)
    }
}

struct Work {
    k: Vec<C64>,
    phase: Vec<C64>,
    hdiag: Vec<C64>,
    entries: Vec<(usize, usize, C64)>,
    rates: Vec<f64>,
    jump: Vec<(usize, usize, C64)>,
}

impl Work {
    fn new(n: usize) -> Self {
        Self {
            k: vec![ZERO; n * n],
            phase: vec![ZERO; n],
            hdiag: vec![ZERO; n],
            entries: Vec::new(),
            rates: Vec::new(),
            jump: Vec::new(),
        }
    }
}

/// Frame-picture Hamiltonian (angular units) at time `t`.
pub fn build_hamiltonian(
    device: &DeviceParams,
    frame: &ControlFrame,
    t: f64,
    layout: &HilbertLayout,
    kind: Frame,
) -> Result<Operator> {
    if !(t >= 0.0 && t <= frame.duration().max(0.0) + 1e-15) {
        return Err(Error::Schedule(format!("t = {t:e} outside control support")));
    }
    let options = EvolveOptions {
        frame: kind,
        dissipation: false,
        ..EvolveOptions::default()
    };
    let model = Model::new(device, layout, &options)?;
    let h = Operator::new(model.hamiltonian(frame, t))?;
    let scale = h.max_abs().max(1.0);
    assert!(
        h.hermiticity_error() <= 1e-12 * scale,
        "Hamiltonian assembly produced a non-Hermitian operator"
    );
    Ok(h)
}

/// Lindblad operators with rates (s⁻¹) for the given coupler activity.
pub fn collapse_operators(
    device: &DeviceParams,
    layout: &HilbertLayout,
    swap_active: [bool; 2],
) -> Result<Vec<(Operator, f64)>> {
    let model = Model::new(device, layout, &EvolveOptions::default())?;
    let n = model.n;
    let mut out = Vec::new();
    for jmp in &model.jumps {
        let rate = match jmp.kind {
            RateKind::Constant(r) => r,
            RateKind::QubitRelax { node, idle, swap } => {
                if swap_active[node.index()] {
                    swap
                } else {
                    idle
                }
            }
        };
        out.push((Operator::new(jmp.op.to_dense(n))?, rate));
    }
    for (op, rate) in &model.dephasing_ops {
        out.push((Operator::new(op.to_dense(n))?, *rate));
    }
    Ok(out)
}

/// Integrate the master equation under `schedule` with fixed-step RK4.
pub fn evolve(
    device: &DeviceParams,
    rho0: &DensityMatrix,
    schedule: &PulseSchedule,
    options: &EvolveOptions,
) -> Result<Trajectory> {
    if !(options.dt_max.is_finite() && options.dt_max >= 1e-15) {
        return Err(Error::StepUnderflow(options.dt_max));
    }
    let layout = rho0.layout().clone();
    let model = Model::new(device, &layout, options)?;
    let ctrl = ControlFrame::from_schedule(device, schedule)?;
    let n = model.n;

    let t_end = options
        .sample_times
        .iter()
        .chain(&options.checkpoint_times)
        .fold(ctrl.duration(), |m, &t| m.max(t));
    if options.sample_times.iter().chain(&options.checkpoint_times).any(|t| !(*t >= 0.0)) {
        return Err(Error::Schedule("sample times must be non-negative".into()));
    }
    let samples = if options.sample_times.is_empty() {
        vec![t_end]
    } else {
        options.sample_times.clone()
    };

    const TOL: f64 = 1e-15;
    let mut points = ctrl.breakpoints();
    points.extend(&samples);
    points.extend(&options.checkpoint_times);
    points.retain(|&t| (0.0..=t_end).contains(&t));
    points.push(0.0);
    points.push(t_end);
    points.sort_by(f64::total_cmp);
    points.dedup_by(|a, b| (*a - *b).abs() < TOL);

    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| samples[a].total_cmp(&samples[b]));
    let mut ck_order: Vec<usize> = (0..options.checkpoint_times.len()).collect();
    ck_order.sort_by(|&a, &b| options.checkpoint_times[a].total_cmp(&options.checkpoint_times[b]));

    let mut work = Work::new(n);
    let mut phase = vec![ZERO; n];
    let mut rho = rho0.matrix().clone();
    let mut k = [vec![ZERO; n * n], vec![ZERO; n * n], vec![ZERO; n * n], vec![ZERO; n * n]];
    let mut tmp = vec![ZERO; n * n];

    let q = model.qubit_levels;
    let mut times = vec![0.0; samples.len()];
    let mut pops = vec![Vec::new(); samples.len()];
    let mut nbar = vec![[0.0; 2]; samples.len()];
    let mut checkpoints: Vec<Option<(f64, DensityMatrix)>> = vec![None; options.checkpoint_times.len()];
    let mut warnings = Vec::new();
    let mut leak_warned = [false; 2];
    let mut diag = Diagnostics::default();
    let (mut next_event, mut next_sample, mut next_ck) = (0, 0, 0);
    let events = ctrl.events();

    for (pi, &tb) in points.iter().enumerate() {
        if pi > 0 {
            let ta = points[pi - 1];
            let len = tb - ta;
            let steps = ((len / options.dt_max) - 1e-9).ceil().max(1.0) as usize;
            let h = len / steps as f64;
            if h < TOL * 1e-3 {
                return Err(Error::StepUnderflow(h));
            }
            for s in 0..steps {
                let t = ta + s as f64 * h;
                let y = rho.as_mut_slice();
                model.rhs(&ctrl, t, y, &mut k[0], &mut work);
                axpy(&mut tmp, y, &k[0], 0.5 * h);
                model.rhs(&ctrl, t + 0.5 * h, &tmp, &mut k[1], &mut work);
                axpy(&mut tmp, y, &k[1], 0.5 * h);
                model.rhs(&ctrl, t + 0.5 * h, &tmp, &mut k[2], &mut work);
                axpy(&mut tmp, y, &k[2], h);
                model.rhs(&ctrl, t + h, &tmp, &mut k[3], &mut work);
                let c = h / 6.0;
                for i in 0..n * n {
                    y[i] += (k[0][i] + (k[1][i] + k[2][i]) * 2.0 + k[3][i]) * c;
                }
                diag.steps += 1;
                if options.monitor {
                    monitor(&rho, &mut diag);
                }
            }
        }

        while next_event < events.len() && events[next_event].t <= tb + TOL {
            let ev = &events[next_event];
            if let Some((sub, u)) = model.event_operator(&ev.kind, ev.t)? {
                model.phases(&ctrl, ev.t, &mut phase);
                let mut op = Sparse::product(&layout, &[(sub, &u)]);
                for e in &mut op.entries {
                    e.v *= phase[e.r].conj() * phase[e.c];
                }
                rho = op.conjugate(&rho);
            }
            next_event += 1;
        }

        let tr: f64 = (0..n).map(|i| rho[(i, i)].re).sum();
        diag.max_trace_error = diag.max_trace_error.max((tr - 1.0).abs());

        while next_sample < order.len() && samples[order[next_sample]] <= tb + TOL {
            let i = order[next_sample];
            let (p, nb, top) = model.observe(&rho);
            for j in 0..2 {
                if top[j] > 1e-3 && !leak_warned[j] && layout.dim(RA + j) > 2 {
                    leak_warned[j] = true;
                    let msg = format!(
                        "resonator {} top Fock level population {:.2e} at t = {:.3e} s exceeds 1e-3; truncation may be too small",
                        Node::ALL[j],
                        top[j],
                        tb
                    );
                    tracing::warn!("{msg}");
                    warnings.push(msg);
                }
            }
            debug_assert_eq!(p.len(), q * q);
            times[i] = samples[i];
            pops[i] = p;
            nbar[i] = nb;
            next_sample += 1;
        }
        while next_ck < ck_order.len() && options.checkpoint_times[ck_order[next_ck]] <= tb + TOL {
            let i = ck_order[next_ck];
            let t = options.checkpoint_times[i];
            model.phases(&ctrl, tb, &mut phase);
            let m = model.to_frame(&rho, &phase);
            checkpoints[i] = Some((t, DensityMatrix::from_numerical(layout.clone(), m, 1e-6)?));
            next_ck += 1;
        }
    }

    model.phases(&ctrl, t_end, &mut phase);
    let final_state = DensityMatrix::from_numerical(layout.clone(), model.to_frame(&rho, &phase), 1e-6)?;
    Ok(Trajectory {
        times,
        qubit_populations: pops,
        phonon_numbers: nbar,
        checkpoints: checkpoints.into_iter().map(|c| c.expect("every checkpoint visited")).collect(),
        final_state,
        warnings,
        diagnostics: diag,
        qubit_levels: q,
    })
}

fn axpy(out: &mut [C64], y: &[C64], k: &[C64], h: f64) {
    for ((o, &a), &b) in out.iter_mut().zip(y).zip(k) {
        *o = a + b * h;
    }
}

fn monitor(rho: &CMatrix, diag: &mut Diagnostics) {
    let n = rho.nrows();
    let mut herm: f64 = 0.0;
    for c in 0..n {
        for r in 0..c {
            herm = herm.max((rho[(r, c)] - rho[(c, r)].conj()).norm());
        }
    }
    diag.max_hermiticity_error = diag.max_hermiticity_error.max(herm);
    let tr: f64 = (0..n).map(|i| rho[(i, i)].re).sum();
    diag.max_trace_error = diag.max_trace_error.max((tr - 1.0).abs());
    let sym = (rho + rho.adjoint()) * C64::new(0.5, 0.0);
    let (ev, _) = hermitian_eigen(&sym);
    let min = ev.iter().copied().fold(f64::INFINITY, f64::min);
    diag.min_eigenvalue = Some(diag.min_eigenvalue.map_or(min, |m| m.min(min)));
}
