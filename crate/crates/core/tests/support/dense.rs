//! Dense-matrix reference simulator built from explicit Kronecker products.
//! Shares nothing with the statevector code beyond the gate description.

#![allow(dead_code)]

use nalgebra::{Complex, DMatrix, DVector};
use quanv::qsim::{GateKind, GateOp};
use rand::Rng;

pub type C = Complex<f64>;

fn c(re: f64, im: f64) -> C {
    Complex::new(re, im)
}

fn m2(a: [[C; 2]; 2]) -> DMatrix<C> {
    DMatrix::from_row_slice(2, 2, &[a[0][0], a[0][1], a[1][0], a[1][1]])
}

pub fn pauli_x() -> DMatrix<C> {
    m2([[c(0., 0.), c(1., 0.)], [c(1., 0.), c(0., 0.)]])
}
pub fn pauli_y() -> DMatrix<C> {
    m2([[c(0., 0.), c(0., -1.)], [c(0., 1.), c(0., 0.)]])
}
pub fn pauli_z() -> DMatrix<C> {
    m2([[c(1., 0.), c(0., 0.)], [c(0., 0.), c(-1., 0.)]])
}

/// `exp(-i t P / 2) = cos(t/2) I - i sin(t/2) P` for a Pauli `P`.
fn rotation(p: DMatrix<C>, t: f64) -> DMatrix<C> {
    let id = DMatrix::<C>::identity(2, 2);
    id * c((t / 2.0).cos(), 0.0) - p * c(0.0, (t / 2.0).sin())
}

fn hadamard() -> DMatrix<C> {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    m2([[c(h, 0.), c(h, 0.)], [c(h, 0.), c(-h, 0.)]])
}

/// Operator `ops[q]` on qubit `q`, identity elsewhere; qubit 0 is leftmost.
fn kron_all(n: usize, ops: &[(usize, DMatrix<C>)]) -> DMatrix<C> {
    let mut out = DMatrix::<C>::identity(1, 1);
    for q in 0..n {
        let factor = ops
            .iter()
            .find(|(t, _)| *t == q)
            .map(|(_, m)| m.clone())
            .unwrap_or_else(|| DMatrix::identity(2, 2));
        out = out.kronecker(&factor);
    }
    out
}

fn controlled(n: usize, control: usize, target: usize, u: DMatrix<C>) -> DMatrix<C> {
    let p0 = m2([[c(1., 0.), c(0., 0.)], [c(0., 0.), c(0., 0.)]]);
    let p1 = m2([[c(0., 0.), c(0., 0.)], [c(0., 0.), c(1., 0.)]]);
    kron_all(n, &[(control, p0)]) + kron_all(n, &[(control, p1), (target, u)])
}

pub fn gate_unitary(n: usize, g: &GateOp<f64>) -> DMatrix<C> {
    let a = g.angle.unwrap_or(0.0);
    let t = &g.targets;
    match g.kind {
        GateKind::Rx => kron_all(n, &[(t[0], rotation(pauli_x(), a))]),
        GateKind::Ry => kron_all(n, &[(t[0], rotation(pauli_y(), a))]),
        GateKind::Rz => kron_all(n, &[(t[0], rotation(pauli_z(), a))]),
        GateKind::H => kron_all(n, &[(t[0], hadamard())]),
        GateKind::Cnot => controlled(n, t[0], t[1], pauli_x()),
        GateKind::Cz => controlled(n, t[0], t[1], pauli_z()),
        GateKind::Crx => controlled(n, t[0], t[1], rotation(pauli_x(), a)),
        GateKind::Cry => controlled(n, t[0], t[1], rotation(pauli_y(), a)),
        GateKind::Crz => controlled(n, t[0], t[1], rotation(pauli_z(), a)),
    }
}

/// Full unitary of a gate list applied left to right.
pub fn circuit_unitary(n: usize, gates: &[GateOp<f64>]) -> DMatrix<C> {
    let mut u = DMatrix::<C>::identity(1 << n, 1 << n);
    for g in gates {
        u = gate_unitary(n, g) * u;
    }
    u
}

pub fn z_observable(n: usize) -> DMatrix<C> {
    let ops: Vec<_> = (0..n).map(|q| (q, pauli_z())).collect();
    kron_all(n, &ops)
}

pub fn zero_vector(n: usize) -> DVector<C> {
    let mut v = DVector::from_element(1 << n, c(0., 0.));
    v[0] = c(1., 0.);
    v
}

pub fn expectation(psi: &DVector<C>, obs: &DMatrix<C>) -> f64 {
    (psi.adjoint() * obs * psi)[(0, 0)].re
}

pub fn random_amplitudes<R: Rng>(n: usize, rng: &mut R) -> Vec<C> {
    let raw: Vec<C> = (0..1 << n)
        .map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    let norm = raw.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    raw.into_iter().map(|a| a / norm).collect()
}

pub fn random_gate<R: Rng>(n: usize, rng: &mut R) -> GateOp<f64> {
    loop {
        let kind = GateKind::ALL[rng.random_range(0..GateKind::ALL.len())];
        if kind.arity() == 2 && n < 2 {
            continue;
        }
        let a = rng.random_range(0..n);
        let mut targets = vec![a];
        if kind.arity() == 2 {
            let mut b = rng.random_range(0..n - 1);
            if b >= a {
                b += 1;
            }
            targets.push(b);
        }
        let angle = kind.is_rotation().then(|| rng.random_range(-10.0..10.0));
        return GateOp::new(kind, targets, angle);
    }
}

pub fn random_circuit<R: Rng>(n: usize, len: usize, rng: &mut R) -> Vec<GateOp<f64>> {
    (0..len).map(|_| random_gate(n, rng)).collect()
}

/// Dense reference for a filter response: encode, filter, Z...Z, activation.
pub fn dense_filter_response(angles: &[f64], filter: &[GateOp<f64>]) -> f64 {
    let n = angles.len();
    let encode: Vec<GateOp<f64>> = angles.iter().enumerate().map(|(q, &a)| GateOp::ry(q, a)).collect();
    let psi = circuit_unitary(n, filter) * circuit_unitary(n, &encode) * zero_vector(n);
    std::f64::consts::PI * expectation(&psi, &z_observable(n)).tanh()
}
