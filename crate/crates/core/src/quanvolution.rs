//! Quanvolution over 1-D multi-channel signals.
//!
//! Each window of `f` samples is angle-encoded with one RY per qubit, pushed
//! through a fixed filter circuit, and read out as `pi * tanh(<Z...Z>)`.

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::cluster::FilterBank;
use crate::error::{Error, Result};
use crate::qsim::{run_circuit, zero_state, Circuit, GateOp, QuantumState};
use crate::scalar::Scalar;

/// Number of windows of width `f` and stride `s` that fit in `n` samples.
pub fn output_length(n: usize, f: usize, s: usize) -> Result<usize> {
    if f == 0 || s == 0 {
        return Err(Error::invalid(format!("window {f} and stride {s} must be positive")));
    }
    if n < f {
        return Err(Error::invalid(format!("length {n} is shorter than window {f}")));
    }
    Ok((n - f) / s + 1)
}

/// Affine map from data values to rotation angles: `lo -> 0`, `hi -> pi`,
/// clamped to `[0, pi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngleScale<T> {
    pub lo: T,
    pub hi: T,
}

impl<T: Scalar> AngleScale<T> {
    pub fn new(lo: T, hi: T) -> Self {
        Self { lo, hi }
    }

    /// Identity-like scale that sends `0 -> 0` and `pi -> pi`.
    pub fn radians() -> Self {
        Self::new(T::zero(), T::PI())
    }

    /// Range of the given values. Panics on an empty iterator.
    pub fn fit(values: impl IntoIterator<Item = T>) -> Self {
        let mut it = values.into_iter().peekable();
        assert!(it.peek().is_some(), "cannot fit a scale to no values");
        let (lo, hi) = it.fold((T::infinity(), T::neg_infinity()), |(lo, hi), v| (lo.min(v), hi.max(v)));
        Self::new(lo, hi)
    }

    pub fn angle(&self, x: T) -> T {
        let span = self.hi - self.lo;
        if span <= T::zero() {
            return T::zero();
        }
        let a = T::PI() * (x - self.lo) / span;
        a.max(T::zero()).min(T::PI())
    }
}

/// `(x) RY(angle(x_i))|0>`, one qubit per patch element.
pub fn encode_patch<T: Scalar>(patch: &[T], scale: &AngleScale<T>) -> Result<QuantumState<T>> {
    if patch.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("patch contains non-finite values"));
    }
    let init = zero_state(patch.len())?;
    let gates: Vec<GateOp<T>> = patch
        .iter()
        .enumerate()
        .map(|(q, &x)| GateOp::ry(q, scale.angle(x)))
        .collect();
    run_circuit(&init, &gates)
}

/// `pi * tanh(z)`.
pub fn activation<T: Scalar>(z: T) -> T {
    T::PI() * z.tanh()
}

pub fn filter_response<T: Scalar>(patch: &[T], filter: &Circuit<T>, scale: &AngleScale<T>) -> Result<T> {
    if patch.len() != filter.n_qubits() {
        return Err(Error::invalid(format!(
            "patch of {} samples for a {}-qubit filter",
            patch.len(),
            filter.n_qubits()
        )));
    }
    let encoded = encode_patch(patch, scale)?;
    let out = filter.run(&encoded)?;
    Ok(activation(out.z_tensor_expectation()))
}

/// A `channels x length` array of reals. Used both for raw input signals and
/// for the feature maps that quanvolution and pooling produce.
#[derive(Clone, Debug, PartialEq)]
pub struct Signal<T> {
    values: Array2<T>,
}

pub type FeatureMap<T> = Signal<T>;

impl<T: Scalar> Signal<T> {
    pub fn new(values: Array2<T>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::invalid("signal needs at least one channel and one sample"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("signal contains non-finite values"));
        }
        Ok(Self { values })
    }

    pub fn single_channel(samples: &[T]) -> Result<Self> {
        Self::new(Array2::from_shape_vec((1, samples.len()), samples.to_vec()).expect("shape matches"))
    }

    pub fn channels(&self) -> usize {
        self.values.nrows()
    }

    pub fn len(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &Array2<T> {
        &self.values
    }

    pub fn channel(&self, c: usize) -> ArrayView1<'_, T> {
        self.values.row(c)
    }

    /// Row-major (channel-major) flattening.
    pub fn flatten(&self) -> Vec<T> {
        self.values.iter().copied().collect()
    }
}

/// One quanvolution layer: filters on `window` qubits slid with `stride`.
#[derive(Clone, Debug)]
pub struct QuanvLayerConfig<T> {
    pub window: usize,
    pub stride: usize,
    pub filters: Vec<Circuit<T>>,
    pub scale: AngleScale<T>,
}

impl<T: Scalar> QuanvLayerConfig<T> {
    pub fn new(window: usize, stride: usize, filters: Vec<Circuit<T>>, scale: AngleScale<T>) -> Result<Self> {
        if window == 0 || stride == 0 {
            return Err(Error::invalid("window and stride must be positive"));
        }
        if filters.is_empty() {
            return Err(Error::invalid("a layer needs at least one filter"));
        }
        if let Some(f) = filters.iter().find(|f| f.n_qubits() != window) {
            return Err(Error::invalid(format!(
                "{}-qubit filter in a layer with window {window}",
                f.n_qubits()
            )));
        }
        Ok(Self {
            window,
            stride,
            filters,
            scale,
        })
    }

    /// Uses the bank's qubit count as the window.
    pub fn from_bank(bank: &FilterBank, stride: usize, scale: AngleScale<T>) -> Result<Self> {
        Self::new(
            bank.n_qubits(),
            stride,
            bank.filters.iter().map(|f| f.circuit()).collect(),
            scale,
        )
    }
}

/// Applies every filter to every window of every channel. Output channel
/// `c * K + k` holds filter `k` on input channel `c`.
pub fn quanvolve<T: Scalar>(signal: &Signal<T>, layer: &QuanvLayerConfig<T>) -> Result<FeatureMap<T>> {
    let positions = output_length(signal.len(), layer.window, layer.stride)?;
    let k = layer.filters.len();
    let mut out = Array2::zeros((signal.channels() * k, positions));
    let mut patch = vec![T::zero(); layer.window];
    for c in 0..signal.channels() {
        let channel = signal.channel(c);
        for p in 0..positions {
            let start = p * layer.stride;
            patch
                .iter_mut()
                .zip(channel.iter().skip(start))
                .for_each(|(d, &s)| *d = s);
            for (fi, filter) in layer.filters.iter().enumerate() {
                out[[c * k + fi, p]] = filter_response(&patch, filter, &layer.scale)?;
            }
        }
    }
    Signal::new(out)
}

/// Per-channel sliding maximum.
pub fn max_pool<T: Scalar>(map: &FeatureMap<T>, window: usize, stride: usize) -> Result<FeatureMap<T>> {
    let positions = output_length(map.len(), window, stride)?;
    let mut out = Array2::zeros((map.channels(), positions));
    for (c, row) in map.values.axis_iter(Axis(0)).enumerate() {
        for p in 0..positions {
            let start = p * stride;
            out[[c, p]] = row
                .iter()
                .skip(start)
                .take(window)
                .copied()
                .fold(T::neg_infinity(), T::max);
        }
    }
    Signal::new(out)
}

/// A quanvolution layer followed by max-pooling.
#[derive(Clone, Debug)]
pub struct HierarchyLevel<T> {
    pub layer: QuanvLayerConfig<T>,
    pub pool_window: usize,
    pub pool_stride: usize,
}

/// Shape-only description of a level, enough to validate a stack before
/// any circuit is built.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelGeometry {
    pub window: usize,
    pub stride: usize,
    pub k: usize,
    pub pool_window: usize,
    pub pool_stride: usize,
}

impl<T: Scalar> From<&HierarchyLevel<T>> for LevelGeometry {
    fn from(l: &HierarchyLevel<T>) -> Self {
        Self {
            window: l.layer.window,
            stride: l.layer.stride,
            k: l.layer.filters.len(),
            pool_window: l.pool_window,
            pool_stride: l.pool_stride,
        }
    }
}

/// `(channels, length)` after each level's pooling, or an error naming the
/// first level (1-based) whose geometry does not fit its input.
pub fn hierarchy_shapes(channels: usize, length: usize, levels: &[LevelGeometry]) -> Result<Vec<(usize, usize)>> {
    let mut shape = (channels, length);
    let mut shapes = Vec::with_capacity(levels.len());
    for (i, g) in levels.iter().enumerate() {
        let fail = |e: Error| Error::invalid(format!("level {}: {e}", i + 1));
        if g.k == 0 {
            return Err(fail(Error::invalid("K must be positive")));
        }
        let conv = output_length(shape.1, g.window, g.stride).map_err(fail)?;
        let pooled = output_length(conv, g.pool_window, g.pool_stride).map_err(fail)?;
        shape = (shape.0 * g.k, pooled);
        shapes.push(shape);
    }
    Ok(shapes)
}

/// Runs quanvolution then pooling for each level and flattens the result.
pub fn extract_hierarchy<T: Scalar>(signal: &Signal<T>, levels: &[HierarchyLevel<T>]) -> Result<Vec<T>> {
    let geometry: Vec<LevelGeometry> = levels.iter().map(LevelGeometry::from).collect();
    hierarchy_shapes(signal.channels(), signal.len(), &geometry)?;
    let mut current = signal.clone();
    for level in levels {
        let map = quanvolve(&current, &level.layer)?;
        current = max_pool(&map, level.pool_window, level.pool_stride)?;
    }
    Ok(current.flatten())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ansatz::{build_pool, BoundCircuit, CircuitTemplate, TemplateId};
    use crate::cluster::select_filters;
    use std::f64::consts::PI;

    fn identity_filter(n: usize) -> Circuit<f64> {
        Circuit::new(n, vec![]).unwrap()
    }

    #[test]
    fn output_length_examples() {
        assert_eq!(output_length(192, 4, 2).unwrap(), 95);
        assert_eq!(output_length(7, 7, 1).unwrap(), 1);
        assert_eq!(output_length(10, 3, 3).unwrap(), 3);
        assert!(output_length(3, 4, 1).is_err());
        assert!(output_length(3, 0, 1).is_err());
        assert!(output_length(3, 1, 0).is_err());
    }

    #[test]
    fn encode_extremes() {
        let zero = encode_patch(&[0.0; 4], &AngleScale::radians()).unwrap();
        assert_eq!(zero, zero_state(4).unwrap());
        assert_eq!(zero.z_tensor_expectation(), 1.0);
        for f in 1..=4 {
            let s = encode_patch(&vec![PI; f], &AngleScale::radians()).unwrap();
            let p = s.basis_distribution();
            assert!((p[(1 << f) - 1] - 1.0).abs() < 1e-15);
            let expect = if f % 2 == 0 { 1.0 } else { -1.0 };
            assert!((s.z_tensor_expectation() - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn encode_half_pi_pair() {
        let s = encode_patch(&[PI / 2.0, PI / 2.0], &AngleScale::radians()).unwrap();
        for a in s.amplitudes() {
            assert!((a.re - 0.5).abs() < 1e-15 && a.im == 0.0);
        }
        assert!(s.z_tensor_expectation().abs() < 1e-15);
    }

    #[test]
    fn scale_clamps() {
        let s = AngleScale::new(-1.0, 1.0);
        assert_eq!(s.angle(-5.0), 0.0);
        assert_eq!(s.angle(5.0), PI);
        assert!((s.angle(0.0) - PI / 2.0).abs() < 1e-15);
        assert_eq!(AngleScale::new(2.0, 2.0).angle(3.0), 0.0);
        assert_eq!(AngleScale::fit([3.0, -1.0, 2.0]), AngleScale::new(-1.0, 3.0));
    }

    #[test]
    fn identity_filter_on_zero_patch() {
        let r = filter_response(&[0.0; 4], &identity_filter(4), &AngleScale::radians()).unwrap();
        assert!((r - 2.392_619).abs() < 1e-6);
        assert_eq!(r, PI * 1f64.tanh());
    }

    #[test]
    fn zero_expectation_gives_zero() {
        let r = filter_response(&[PI / 2.0, 0.0], &identity_filter(2), &AngleScale::radians()).unwrap();
        assert!(r.abs() < 1e-15);
        assert_eq!(activation(0.0f64), 0.0);
    }

    #[test]
    fn size_mismatch_rejected() {
        assert!(filter_response(&[0.0; 3], &identity_filter(4), &AngleScale::radians()).is_err());
        assert!(QuanvLayerConfig::new(3, 1, vec![identity_filter(4)], AngleScale::radians()).is_err());
    }

    fn default_layer(seed: u64) -> QuanvLayerConfig<f64> {
        let pool = build_pool::<f64>(4, 40, 1..=3, seed).unwrap();
        let bank = select_filters(&pool, 4, None, seed).unwrap();
        QuanvLayerConfig::from_bank(&bank, 2, AngleScale::new(-3.0, 3.0)).unwrap()
    }

    fn wave(n: usize, phase: f64) -> Vec<f64> {
        (0..n).map(|t| (0.37 * t as f64 + phase).sin() * 2.0).collect()
    }

    #[test]
    fn quanvolve_shape() {
        let sig = Signal::single_channel(&wave(192, 0.1)).unwrap();
        let map = quanvolve(&sig, &default_layer(1)).unwrap();
        assert_eq!((map.channels(), map.len()), (4, 95));
        let limit = PI * 1f64.tanh() + 1e-9;
        assert!(map.values().iter().all(|v| v.abs() <= limit));
        assert!(quanvolve(&Signal::single_channel(&[0.0; 3]).unwrap(), &default_layer(1)).is_err());
    }

    #[test]
    fn constant_zero_signal_through_identity_filter() {
        let layer = QuanvLayerConfig::new(4, 2, vec![identity_filter(4)], AngleScale::radians()).unwrap();
        let map = quanvolve(&Signal::single_channel(&[0.0; 20]).unwrap(), &layer).unwrap();
        assert!(map.values().iter().all(|&v| v == PI * 1f64.tanh()));
    }

    #[test]
    fn stride_shift_equivariance() {
        let layer = default_layer(3);
        let base = wave(60, 0.0);
        let shifted: Vec<f64> = base[layer.stride..].to_vec();
        let a = quanvolve(&Signal::single_channel(&base).unwrap(), &layer).unwrap();
        let b = quanvolve(&Signal::single_channel(&shifted).unwrap(), &layer).unwrap();
        for c in 0..a.channels() {
            for p in 0..b.len() {
                assert_eq!(b.values()[[c, p]], a.values()[[c, p + 1]]);
            }
        }
    }

    #[test]
    fn channel_permutation_permutes_blocks() {
        let layer = default_layer(4);
        let (x, y) = (wave(30, 0.0), wave(30, 1.3));
        let mut v = Array2::zeros((2, 30));
        v.row_mut(0).assign(&ndarray::arr1(&x));
        v.row_mut(1).assign(&ndarray::arr1(&y));
        let mut w = v.clone();
        w.row_mut(0).assign(&ndarray::arr1(&y));
        w.row_mut(1).assign(&ndarray::arr1(&x));
        let a = quanvolve(&Signal::new(v).unwrap(), &layer).unwrap();
        let b = quanvolve(&Signal::new(w).unwrap(), &layer).unwrap();
        for k in 0..4 {
            assert_eq!(a.values().row(k), b.values().row(4 + k));
            assert_eq!(a.values().row(4 + k), b.values().row(k));
        }
    }

    #[test]
    fn max_pool_examples() {
        let m = Signal::single_channel(&[1.0, 3.0, 2.0, 0.0]).unwrap();
        assert_eq!(max_pool(&m, 2, 2).unwrap().flatten(), vec![3.0, 2.0]);
        assert_eq!(max_pool(&m, 4, 1).unwrap().flatten(), vec![3.0]);
        let c = Signal::single_channel(&[0.5; 9]).unwrap();
        assert_eq!(max_pool(&c, 2, 2).unwrap().flatten(), vec![0.5; 4]);
        assert!(max_pool(&m, 5, 1).is_err());
    }

    #[test]
    fn two_level_chain_is_176() {
        let g = LevelGeometry {
            window: 4,
            stride: 2,
            k: 4,
            pool_window: 2,
            pool_stride: 2,
        };
        assert_eq!(hierarchy_shapes(1, 192, &[g, g]).unwrap(), vec![(4, 47), (16, 11)]);
        assert_eq!(hierarchy_shapes(1, 192, &[g]).unwrap(), vec![(4, 47)]);
        let err = hierarchy_shapes(1, 64, &[g, g, g]).unwrap_err().to_string();
        assert!(err.contains("level 3"), "{err}");

        let l1 = default_layer(5);
        let l2 = default_layer(6);
        let levels = vec![
            HierarchyLevel { layer: l1, pool_window: 2, pool_stride: 2 },
            HierarchyLevel { layer: l2, pool_window: 2, pool_stride: 2 },
        ];
        let sig = Signal::single_channel(&wave(192, 0.2)).unwrap();
        let v = extract_hierarchy(&sig, &levels).unwrap();
        assert_eq!(v.len(), 176);
        assert_eq!(v, extract_hierarchy(&sig, &levels).unwrap());
    }

    #[test]
    fn one_level_is_composition() {
        let layer = default_layer(8);
        let sig = Signal::single_channel(&wave(50, 0.4)).unwrap();
        let direct = max_pool(&quanvolve(&sig, &layer).unwrap(), 2, 2).unwrap().flatten();
        let level = HierarchyLevel { layer, pool_window: 2, pool_stride: 2 };
        assert_eq!(extract_hierarchy(&sig, &[level]).unwrap(), direct);
    }

    #[test]
    fn bound_filter_from_template() {
        let t = CircuitTemplate::new(TemplateId::RyOnly, 4, 1).unwrap();
        let c = BoundCircuit::with_params(&t, vec![0.0; 4], 0).unwrap();
        let r = filter_response(&[0.0; 4], &c.circuit(), &AngleScale::radians()).unwrap();
        assert_eq!(r, PI * 1f64.tanh());
    }
}
