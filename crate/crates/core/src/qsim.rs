//! Exact statevector simulation for few-qubit circuits.
//!
//! Qubit 0 is the most significant bit of a basis index, so on three qubits
//! the basis state `|q0 q1 q2> = |100>` lives at index 4. Rotations follow
//! the usual half-angle convention, `R_a(t) = exp(-i t A / 2)`.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Largest register the simulator will allocate.
pub const MAX_QUBITS: usize = 10;

static CIRCUIT_EVALUATIONS: AtomicU64 = AtomicU64::new(0);

/// Number of [`run_circuit`] calls made by this process so far.
///
/// Used to check that stages which must not touch the simulator really don't.
pub fn circuit_evaluations() -> u64 {
    CIRCUIT_EVALUATIONS.load(Ordering::Relaxed)
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantumState<T> {
    n_qubits: usize,
    amplitudes: Vec<Complex<T>>,
}

/// `|0...0>` on `n_qubits` qubits.
pub fn zero_state<T: Scalar>(n_qubits: usize) -> Result<QuantumState<T>> {
    check_qubit_count(n_qubits)?;
    let mut amplitudes = vec![Complex::new(T::zero(), T::zero()); 1 << n_qubits];
    amplitudes[0] = Complex::new(T::one(), T::zero());
    Ok(QuantumState {
        n_qubits,
        amplitudes,
    })
}

fn check_qubit_count(n_qubits: usize) -> Result<()> {
    if n_qubits == 0 || n_qubits > MAX_QUBITS {
        return Err(Error::invalid(format!(
            "qubit count {n_qubits} outside 1..={MAX_QUBITS}"
        )));
    }
    Ok(())
}

impl<T: Scalar> QuantumState<T> {
    /// Wraps an amplitude vector, checking its length and normalization.
    pub fn from_amplitudes(n_qubits: usize, amplitudes: Vec<Complex<T>>) -> Result<Self> {
        check_qubit_count(n_qubits)?;
        if amplitudes.len() != 1 << n_qubits {
            return Err(Error::invalid(format!(
                "expected {} amplitudes for {n_qubits} qubits, got {}",
                1usize << n_qubits,
                amplitudes.len()
            )));
        }
        let norm: T = amplitudes.iter().map(|a| a.norm_sqr()).sum();
        if !norm.is_finite() || (norm - T::one()).abs() > T::lit(1e-6) {
            return Err(Error::invalid(format!(
                "amplitudes are not normalized (squared norm {norm})"
            )));
        }
        Ok(Self {
            n_qubits,
            amplitudes,
        })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[Complex<T>] {
        &self.amplitudes
    }

    pub fn norm_sqr(&self) -> T {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    /// Computational-basis probabilities `|a_i|^2`.
    pub fn basis_distribution(&self) -> Vec<T> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }

    /// `<psi| Z (x) Z (x) ... (x) Z |psi>`, the joint parity of every qubit.
    pub fn z_tensor_expectation(&self) -> T {
        let mut acc = T::zero();
        for (i, a) in self.amplitudes.iter().enumerate() {
            if i.count_ones() % 2 == 0 {
                acc += a.norm_sqr();
            } else {
                acc -= a.norm_sqr();
            }
        }
        acc.max(-T::one()).min(T::one())
    }

    fn bit(&self, qubit: usize) -> usize {
        1 << (self.n_qubits - 1 - qubit)
    }

    fn apply_in_place(&mut self, gate: &GateOp<T>) -> Result<()> {
        gate.validate(self.n_qubits)?;
        match gate.kind {
            GateKind::Rx | GateKind::Ry | GateKind::Rz | GateKind::H => {
                let m = single_qubit_matrix(gate.kind, gate.angle_or_zero());
                self.apply_single(gate.targets[0], &m, None);
            }
            GateKind::Crx | GateKind::Cry | GateKind::Crz => {
                let base = match gate.kind {
                    GateKind::Crx => GateKind::Rx,
                    GateKind::Cry => GateKind::Ry,
                    _ => GateKind::Rz,
                };
                let m = single_qubit_matrix(base, gate.angle_or_zero());
                self.apply_single(gate.targets[1], &m, Some(gate.targets[0]));
            }
            GateKind::Cnot => {
                let c = self.bit(gate.targets[0]);
                let t = self.bit(gate.targets[1]);
                for i in 0..self.amplitudes.len() {
                    if i & c != 0 && i & t == 0 {
                        self.amplitudes.swap(i, i | t);
                    }
                }
            }
            GateKind::Cz => {
                let mask = self.bit(gate.targets[0]) | self.bit(gate.targets[1]);
                for (i, a) in self.amplitudes.iter_mut().enumerate() {
                    if i & mask == mask {
                        *a = -*a;
                    }
                }
            }
        }
        Ok(())
    }

    fn apply_single(&mut self, target: usize, m: &[[Complex<T>; 2]; 2], control: Option<usize>) {
        let t = self.bit(target);
        let c = control.map(|q| self.bit(q)).unwrap_or(0);
        for i in 0..self.amplitudes.len() {
            if i & t != 0 || i & c != c {
                continue;
            }
            let a0 = self.amplitudes[i];
            let a1 = self.amplitudes[i | t];
            self.amplitudes[i] = m[0][0] * a0 + m[0][1] * a1;
            self.amplitudes[i | t] = m[1][0] * a0 + m[1][1] * a1;
        }
    }
}

/// 2x2 unitary of a single-qubit kind; `angle` is ignored for `H`.
pub fn single_qubit_matrix<T: Scalar>(kind: GateKind, angle: T) -> [[Complex<T>; 2]; 2] {
    let z = T::zero();
    let half = angle / T::lit(2.0);
    let (s, c) = half.sin_cos();
    let re = |x: T| Complex::new(x, z);
    match kind {
        GateKind::Rx => [
            [re(c), Complex::new(z, -s)],
            [Complex::new(z, -s), re(c)],
        ],
        GateKind::Ry => [[re(c), re(-s)], [re(s), re(c)]],
        GateKind::Rz => [
            [Complex::new(c, -s), re(z)],
            [re(z), Complex::new(c, s)],
        ],
        GateKind::H => {
            let h = T::FRAC_1_SQRT_2();
            [[re(h), re(h)], [re(h), re(-h)]]
        }
        other => panic!("{other} is not a single-qubit kind"),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum GateKind {
    Rx,
    Ry,
    Rz,
    H,
    Cnot,
    Cz,
    Crx,
    Cry,
    Crz,
}

impl GateKind {
    pub const ALL: [GateKind; 9] = [
        GateKind::Rx,
        GateKind::Ry,
        GateKind::Rz,
        GateKind::H,
        GateKind::Cnot,
        GateKind::Cz,
        GateKind::Crx,
        GateKind::Cry,
        GateKind::Crz,
    ];

    pub fn arity(self) -> usize {
        match self {
            GateKind::Rx | GateKind::Ry | GateKind::Rz | GateKind::H => 1,
            _ => 2,
        }
    }

    pub fn is_rotation(self) -> bool {
        matches!(
            self,
            GateKind::Rx | GateKind::Ry | GateKind::Rz | GateKind::Crx | GateKind::Cry | GateKind::Crz
        )
    }
}

impl fmt::Display for GateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            GateKind::Rx => "RX",
            GateKind::Ry => "RY",
            GateKind::Rz => "RZ",
            GateKind::H => "H",
            GateKind::Cnot => "CNOT",
            GateKind::Cz => "CZ",
            GateKind::Crx => "CRX",
            GateKind::Cry => "CRY",
            GateKind::Crz => "CRZ",
        };
        f.write_str(s)
    }
}

/// One gate of a circuit. For two-qubit kinds `targets[0]` is the control.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateOp<T> {
    pub kind: GateKind,
    pub targets: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angle: Option<T>,
}

impl<T: Scalar> GateOp<T> {
    pub fn new(kind: GateKind, targets: Vec<usize>, angle: Option<T>) -> Self {
        Self {
            kind,
            targets,
            angle,
        }
    }

    pub fn rx(q: usize, angle: T) -> Self {
        Self::new(GateKind::Rx, vec![q], Some(angle))
    }
    pub fn ry(q: usize, angle: T) -> Self {
        Self::new(GateKind::Ry, vec![q], Some(angle))
    }
    pub fn rz(q: usize, angle: T) -> Self {
        Self::new(GateKind::Rz, vec![q], Some(angle))
    }
    pub fn h(q: usize) -> Self {
        Self::new(GateKind::H, vec![q], None)
    }
    pub fn cnot(control: usize, target: usize) -> Self {
        Self::new(GateKind::Cnot, vec![control, target], None)
    }
    pub fn cz(a: usize, b: usize) -> Self {
        Self::new(GateKind::Cz, vec![a, b], None)
    }
    pub fn crx(control: usize, target: usize, angle: T) -> Self {
        Self::new(GateKind::Crx, vec![control, target], Some(angle))
    }
    pub fn cry(control: usize, target: usize, angle: T) -> Self {
        Self::new(GateKind::Cry, vec![control, target], Some(angle))
    }
    pub fn crz(control: usize, target: usize, angle: T) -> Self {
        Self::new(GateKind::Crz, vec![control, target], Some(angle))
    }

    fn angle_or_zero(&self) -> T {
        self.angle.unwrap_or_else(T::zero)
    }

    /// Checks arity, index range, distinctness and angle presence.
    pub fn validate(&self, n_qubits: usize) -> Result<()> {
        if self.targets.len() != self.kind.arity() {
            return Err(Error::invalid(format!(
                "{} takes {} qubit(s), got {:?}",
                self.kind,
                self.kind.arity(),
                self.targets
            )));
        }
        if let Some(&q) = self.targets.iter().find(|&&q| q >= n_qubits) {
            return Err(Error::invalid(format!(
                "{} targets qubit {q} on a {n_qubits}-qubit register",
                self.kind
            )));
        }
        if self.targets.len() == 2 && self.targets[0] == self.targets[1] {
            return Err(Error::invalid(format!(
                "{} control and target coincide ({})",
                self.kind, self.targets[0]
            )));
        }
        match (self.kind.is_rotation(), self.angle) {
            (true, None) => Err(Error::invalid(format!("{} requires an angle", self.kind))),
            (false, Some(_)) => Err(Error::invalid(format!("{} takes no angle", self.kind))),
            (true, Some(a)) if !a.is_finite() => {
                Err(Error::invalid(format!("{} angle is not finite", self.kind)))
            }
            _ => Ok(()),
        }
    }

    pub fn cast<U: Scalar>(&self) -> GateOp<U> {
        GateOp {
            kind: self.kind,
            targets: self.targets.clone(),
            angle: self.angle.map(|a| U::lit(a.to_f64_lossy())),
        }
    }
}

/// Returns `gate` applied to `state`.
pub fn apply_gate<T: Scalar>(state: &QuantumState<T>, gate: &GateOp<T>) -> Result<QuantumState<T>> {
    let mut out = state.clone();
    out.apply_in_place(gate)?;
    Ok(out)
}

/// Applies `gates` left to right. Every gate is validated before any is applied.
pub fn run_circuit<T: Scalar>(init: &QuantumState<T>, gates: &[GateOp<T>]) -> Result<QuantumState<T>> {
    for g in gates {
        g.validate(init.n_qubits)?;
    }
    CIRCUIT_EVALUATIONS.fetch_add(1, Ordering::Relaxed);
    let mut out = init.clone();
    for g in gates {
        out.apply_in_place(g)?;
    }
    Ok(out)
}

/// A validated gate list on a fixed register size.
#[derive(Clone, Debug, PartialEq)]
pub struct Circuit<T> {
    n_qubits: usize,
    gates: Vec<GateOp<T>>,
}

impl<T: Scalar> Circuit<T> {
    pub fn new(n_qubits: usize, gates: Vec<GateOp<T>>) -> Result<Self> {
        check_qubit_count(n_qubits)?;
        for g in &gates {
            g.validate(n_qubits)?;
        }
        Ok(Self { n_qubits, gates })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn gates(&self) -> &[GateOp<T>] {
        &self.gates
    }

    pub fn run(&self, init: &QuantumState<T>) -> Result<QuantumState<T>> {
        if init.n_qubits != self.n_qubits {
            return Err(Error::invalid(format!(
                "circuit on {} qubits applied to a {}-qubit state",
                self.n_qubits, init.n_qubits
            )));
        }
        run_circuit(init, &self.gates)
    }

    /// Output state when started from `|0...0>`.
    pub fn run_from_zero(&self) -> QuantumState<T> {
        let init = zero_state(self.n_qubits).expect("qubit count validated");
        run_circuit(&init, &self.gates).expect("gates validated")
    }
}
