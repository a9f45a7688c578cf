//! Candidate circuit templates, random parameter binding and the
//! distribution embeddings that the clustering step works on.

use std::f64::consts::TAU;
use std::fmt;
use std::ops::RangeInclusive;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qsim::{Circuit, GateKind, GateOp, MAX_QUBITS};
use crate::scalar::Scalar;
use crate::textfmt::{read_to_string, write_file, Num17};

/// Bumped whenever a template's gate layout changes.
pub const CATALOGUE_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    /// One RY per qubit.
    RyOnly,
    /// RY layer, then a CNOT ring.
    RyRingCnot,
    /// RX and RZ on every qubit, then a CZ chain.
    RxRzChainCz,
    /// Hadamard layer, then a controlled-RY chain.
    HCryChain,
    /// RY layer, then CZ on every pair.
    RyFullCz,
    /// RX and RY on every qubit, then a controlled-RX ring.
    RxRyRingCrx,
    /// RZ and RY on every qubit, then a CNOT chain.
    RzRyChainCnot,
    /// RY/RZ pairs whose order alternates between neighbouring qubits, then a CZ ring.
    RyRzAlternatingCz,
}

pub const CATALOGUE: [TemplateId; 8] = [
    TemplateId::RyOnly,
    TemplateId::RyRingCnot,
    TemplateId::RxRzChainCz,
    TemplateId::HCryChain,
    TemplateId::RyFullCz,
    TemplateId::RxRyRingCrx,
    TemplateId::RzRyChainCnot,
    TemplateId::RyRzAlternatingCz,
];

impl TemplateId {
    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::RyOnly => "ry_only",
            TemplateId::RyRingCnot => "ry_ring_cnot",
            TemplateId::RxRzChainCz => "rx_rz_chain_cz",
            TemplateId::HCryChain => "h_cry_chain",
            TemplateId::RyFullCz => "ry_full_cz",
            TemplateId::RxRyRingCrx => "rx_ry_ring_crx",
            TemplateId::RzRyChainCnot => "rz_ry_chain_cnot",
            TemplateId::RyRzAlternatingCz => "ry_rz_alternating_cz",
        }
    }

    /// Gate layout of a single layer as `(kind, targets)` pairs.
    fn layer(self, n: usize) -> Vec<(GateKind, Vec<usize>)> {
        use GateKind::*;
        let each = |k: GateKind| (0..n).map(move |q| (k, vec![q]));
        let chain = |k: GateKind| chain_edges(n).into_iter().map(move |(a, b)| (k, vec![a, b]));
        let ring = |k: GateKind| ring_edges(n).into_iter().map(move |(a, b)| (k, vec![a, b]));
        match self {
            TemplateId::RyOnly => each(Ry).collect(),
            TemplateId::RyRingCnot => each(Ry).chain(ring(Cnot)).collect(),
            TemplateId::RxRzChainCz => each(Rx).chain(each(Rz)).chain(chain(Cz)).collect(),
            TemplateId::HCryChain => each(H).chain(chain(Cry)).collect(),
            TemplateId::RyFullCz => {
                let pairs = (0..n).flat_map(|a| (a + 1..n).map(move |b| (Cz, vec![a, b])));
                each(Ry).chain(pairs).collect()
            }
            TemplateId::RxRyRingCrx => each(Rx).chain(each(Ry)).chain(ring(Crx)).collect(),
            TemplateId::RzRyChainCnot => each(Rz).chain(each(Ry)).chain(chain(Cnot)).collect(),
            TemplateId::RyRzAlternatingCz => {
                let rot = (0..n).flat_map(|q| {
                    let (a, b) = if q % 2 == 0 { (Ry, Rz) } else { (Rz, Ry) };
                    [(a, vec![q]), (b, vec![q])]
                });
                rot.chain(ring(Cz)).collect()
            }
        }
    }
}

fn chain_edges(n: usize) -> Vec<(usize, usize)> {
    (0..n.saturating_sub(1)).map(|q| (q, q + 1)).collect()
}

/// Closed ring; on two qubits the ring degenerates to the single edge.
fn ring_edges(n: usize) -> Vec<(usize, usize)> {
    match n {
        0 | 1 => Vec::new(),
        2 => vec![(0, 1)],
        _ => (0..n).map(|q| (q, (q + 1) % n)).collect(),
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CATALOGUE
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown template '{s}'")))
    }
}

/// Position of a free rotation angle inside the expanded gate list.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamSlot {
    pub gate_index: usize,
    pub kind: GateKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CircuitTemplate {
    pub id: TemplateId,
    pub n_qubits: usize,
    pub n_layers: usize,
    structure: Vec<(GateKind, Vec<usize>)>,
    param_slots: Vec<ParamSlot>,
}

impl CircuitTemplate {
    pub fn new(id: TemplateId, n_qubits: usize, n_layers: usize) -> Result<Self> {
        if n_qubits == 0 || n_qubits > MAX_QUBITS {
            return Err(Error::invalid(format!(
                "template qubit count {n_qubits} outside 1..={MAX_QUBITS}"
            )));
        }
        if n_layers == 0 {
            return Err(Error::invalid("template needs at least one layer"));
        }
        let layer = id.layer(n_qubits);
        let structure: Vec<_> = (0..n_layers).flat_map(|_| layer.iter().cloned()).collect();
        let param_slots = structure
            .iter()
            .enumerate()
            .filter(|(_, (k, _))| k.is_rotation())
            .map(|(gate_index, &(kind, _))| ParamSlot { gate_index, kind })
            .collect();
        Ok(Self {
            id,
            n_qubits,
            n_layers,
            structure,
            param_slots,
        })
    }

    pub fn param_slots(&self) -> &[ParamSlot] {
        &self.param_slots
    }

    pub fn n_gates(&self) -> usize {
        self.structure.len()
    }

    /// Expands the template with one angle per parameter slot.
    pub fn expand(&self, params: &[f64]) -> Result<Vec<GateOp<f64>>> {
        if params.len() != self.param_slots.len() {
            return Err(Error::invalid(format!(
                "{} expects {} parameters, got {}",
                self.id,
                self.param_slots.len(),
                params.len()
            )));
        }
        let mut next = params.iter();
        Ok(self
            .structure
            .iter()
            .map(|(kind, targets)| {
                let angle = kind.is_rotation().then(|| *next.next().expect("slot count checked"));
                GateOp::new(*kind, targets.clone(), angle)
            })
            .collect())
    }
}

/// Every catalogue template at the given size, in catalogue order.
pub fn catalogue_templates(n_qubits: usize, n_layers: usize) -> Result<Vec<CircuitTemplate>> {
    CATALOGUE
        .iter()
        .map(|&id| CircuitTemplate::new(id, n_qubits, n_layers))
        .collect()
}

/// A template with its parameters frozen.
///
/// `gates` is the expanded circuit and is what gets executed. The template
/// metadata and `params` describe where it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundCircuit {
    pub template: CircuitTemplate,
    pub params: Vec<f64>,
    pub bind_seed: u64,
    gates: Vec<GateOp<f64>>,
}

impl BoundCircuit {
    /// Draws every parameter uniformly from `[0, 2*pi)` using `bind_seed`.
    pub fn bind_random(template: &CircuitTemplate, bind_seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(bind_seed);
        let params: Vec<f64> = (0..template.param_slots.len())
            .map(|_| rng.random_range(0.0..TAU))
            .collect();
        Self::with_params(template, params, bind_seed).expect("parameter count matches template")
    }

    /// Binds explicit parameters.
    pub fn with_params(template: &CircuitTemplate, params: Vec<f64>, bind_seed: u64) -> Result<Self> {
        let gates = template.expand(&params)?;
        Ok(Self {
            template: template.clone(),
            params,
            bind_seed,
            gates,
        })
    }

    pub fn n_qubits(&self) -> usize {
        self.template.n_qubits
    }

    pub fn gates(&self) -> &[GateOp<f64>] {
        &self.gates
    }

    pub fn circuit<T: Scalar>(&self) -> Circuit<T> {
        let gates = self.gates.iter().map(GateOp::cast).collect();
        Circuit::new(self.n_qubits(), gates).expect("bound circuits hold validated gates")
    }

    /// Basis distribution of the circuit's output on `|0...0>`.
    pub fn embedding<T: Scalar>(&self) -> Vec<T> {
        self.circuit::<T>().run_from_zero().basis_distribution()
    }

    pub fn to_json(&self) -> String {
        let record = CircuitRecord {
            template_id: self.template.id,
            n_qubits: self.template.n_qubits,
            n_layers: self.template.n_layers,
            bind_seed: self.bind_seed,
            params: self.params.iter().copied().map(Num17).collect(),
            gates: self
                .gates
                .iter()
                .map(|g| GateRecord {
                    kind: g.kind,
                    targets: g.targets.clone(),
                    angle: g.angle.map(Num17),
                })
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&record).expect("record serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, String> {
        let record: CircuitRecord = serde_json::from_str(text).map_err(|e| e.to_string())?;
        let template = CircuitTemplate::new(record.template_id, record.n_qubits, record.n_layers)
            .map_err(|e| e.to_string())?;
        let gates: Vec<GateOp<f64>> = record
            .gates
            .into_iter()
            .map(|g| GateOp::new(g.kind, g.targets, g.angle.map(|a| a.0)))
            .collect();
        for g in &gates {
            g.validate(record.n_qubits).map_err(|e| e.to_string())?;
        }
        Ok(Self {
            template,
            params: record.params.into_iter().map(|p| p.0).collect(),
            bind_seed: record.bind_seed,
            gates,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_json())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_to_string(path)?;
        Self::from_json(&text).map_err(|msg| Error::parse(path, msg))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CircuitRecord {
    template_id: TemplateId,
    n_qubits: usize,
    n_layers: usize,
    bind_seed: u64,
    params: Vec<Num17>,
    gates: Vec<GateRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GateRecord {
    kind: GateKind,
    targets: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    angle: Option<Num17>,
}

/// Bound candidates and their distribution embeddings, one row per circuit.
#[derive(Clone, Debug)]
pub struct CandidatePool<T> {
    pub circuits: Vec<BoundCircuit>,
    pub embeddings: Array2<T>,
}

impl<T: Scalar> CandidatePool<T> {
    /// Evaluates every circuit; all must share a register size.
    pub fn from_circuits(circuits: Vec<BoundCircuit>) -> Result<Self> {
        let n = circuits
            .first()
            .map(BoundCircuit::n_qubits)
            .ok_or_else(|| Error::invalid("candidate pool is empty"))?;
        if let Some(c) = circuits.iter().find(|c| c.n_qubits() != n) {
            return Err(Error::invalid(format!(
                "pool mixes {n}-qubit and {}-qubit circuits",
                c.n_qubits()
            )));
        }
        let rows: Vec<Vec<T>> = circuits.par_iter().map(BoundCircuit::embedding).collect();
        let dim = 1 << n;
        let mut embeddings = Array2::zeros((circuits.len(), dim));
        for (mut dst, src) in embeddings.rows_mut().into_iter().zip(&rows) {
            dst.iter_mut().zip(src).for_each(|(d, &s)| *d = s);
        }
        Ok(Self {
            circuits,
            embeddings,
        })
    }

    pub fn len(&self) -> usize {
        self.circuits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.circuits.is_empty()
    }
}

/// `(template, depth)` for pool slot `i`: templates cycle fastest, so every
/// pair appears once before any repeats.
pub fn pool_slot(i: usize, layers: &RangeInclusive<usize>) -> (TemplateId, usize) {
    let depths = layers.end() - layers.start() + 1;
    let template = CATALOGUE[i % CATALOGUE.len()];
    let depth = layers.start() + (i / CATALOGUE.len()) % depths;
    (template, depth)
}

/// Builds `pool_size` randomly bound candidates cycling over templates and depths.
///
/// Bind seeds are drawn for every slot from `master_seed` before any circuit
/// runs, so evaluation order never affects the result.
pub fn build_pool<T: Scalar>(
    n_qubits: usize,
    pool_size: usize,
    layers: RangeInclusive<usize>,
    master_seed: u64,
) -> Result<CandidatePool<T>> {
    if pool_size == 0 {
        return Err(Error::invalid("pool size must be at least 1"));
    }
    if layers.is_empty() || *layers.start() == 0 {
        return Err(Error::invalid(format!(
            "layer range {}..={} must be non-empty and start at 1 or more",
            layers.start(),
            layers.end()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    let seeds: Vec<u64> = (0..pool_size).map(|_| rng.next_u64()).collect();
    let circuits = seeds
        .into_iter()
        .enumerate()
        .map(|(i, seed)| {
            let (id, depth) = pool_slot(i, &layers);
            CircuitTemplate::new(id, n_qubits, depth).map(|t| BoundCircuit::bind_random(&t, seed))
        })
        .collect::<Result<Vec<_>>>()?;
    CandidatePool::from_circuits(circuits)
}
