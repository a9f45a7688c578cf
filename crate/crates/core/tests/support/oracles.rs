//! Independent reference computations used by the property and acceptance tests.

#![allow(dead_code)]

use ndarray::{Array2, ArrayView2};
use quanv::classifier::MlpModel;
use quanv::data::{Dataset, SignalRecipe};
use std::f64::consts::TAU;

/// Window count by enumerating every start position.
pub fn brute_force_windows(n: usize, f: usize, s: usize) -> usize {
    (0..n).filter(|&start| start % s == 0 && start + f <= n).count()
}

/// Mean cross-entropy of a model, computed directly from the definition.
pub fn reference_loss(model: &MlpModel<f64>, x: ArrayView2<f64>, y: ArrayView2<f64>) -> f64 {
    let mut total = 0.0;
    for (row, target) in x.rows().into_iter().zip(y.rows()) {
        let mut h: Vec<f64> = row.to_vec();
        for l in 0..3 {
            let w = &model.weights[l];
            let b = &model.biases[l];
            let mut z: Vec<f64> = (0..w.nrows())
                .map(|o| b[o] + (0..w.ncols()).map(|i| w[[o, i]] * h[i]).sum::<f64>())
                .collect();
            if l < 2 {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            h = z;
        }
        let m = h.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + h.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total -= target.iter().zip(&h).map(|(t, z)| t * (z - lse)).sum::<f64>();
    }
    total / x.nrows() as f64
}

/// Largest relative difference between analytic gradients and central
/// finite differences of [`reference_loss`].
pub fn gradient_check(model: &MlpModel<f64>, x: ArrayView2<f64>, y: ArrayView2<f64>, eps: f64) -> f64 {
    let (_, grads) = model.loss_and_gradients(x, y).unwrap();
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
    let mut worst = 0.0f64;
    for l in 0..3 {
        for idx in 0..model.weights[l].len() {
            let (r, c) = (idx / model.weights[l].ncols(), idx % model.weights[l].ncols());
            let mut plus = model.clone();
            plus.weights[l][[r, c]] += eps;
            let mut minus = model.clone();
            minus.weights[l][[r, c]] -= eps;
            let fd = (reference_loss(&plus, x, y) - reference_loss(&minus, x, y)) / (2.0 * eps);
            worst = worst.max(rel(grads.weights[l][[r, c]], fd));
        }
        for i in 0..model.biases[l].len() {
            let mut plus = model.clone();
            plus.biases[l][i] += eps;
            let mut minus = model.clone();
            minus.biases[l][i] -= eps;
            let fd = (reference_loss(&plus, x, y) - reference_loss(&minus, x, y)) / (2.0 * eps);
            worst = worst.max(rel(grads.biases[l][i], fd));
        }
    }
    worst
}

/// Solves the small normal equations `a x = b` by Gaussian elimination.
fn solve(mut a: Array2<f64>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[[i, col]].abs().total_cmp(&a[[j, col]].abs())).unwrap();
        for k in 0..n {
            a.swap([col, k], [piv, k]);
        }
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[[r, col]] / a[[col, col]];
            for k in col..n {
                a[[r, k]] -= f * a[[col, k]];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        x[r] = (b[r] - (r + 1..n).map(|k| a[[r, k]] * x[k]).sum::<f64>()) / a[[r, r]];
    }
    x
}

/// Energy at the harmonics of the impulse period after least-squares removal
/// of the DC level and the known carriers.
pub fn impulse_band_energy(signal: &[f64], carriers: &[f64], period: usize) -> f64 {
    let n = signal.len();
    let mut basis: Vec<Vec<f64>> = vec![vec![1.0; n]];
    for &f in carriers {
        basis.push((0..n).map(|t| (TAU * f * t as f64 / n as f64).sin()).collect());
        basis.push((0..n).map(|t| (TAU * f * t as f64 / n as f64).cos()).collect());
    }
    let p = basis.len();
    let gram = Array2::from_shape_fn((p, p), |(i, j)| basis[i].iter().zip(&basis[j]).map(|(a, b)| a * b).sum());
    let rhs = basis.iter().map(|b| b.iter().zip(signal).map(|(a, s)| a * s).sum()).collect();
    let coef = solve(gram, rhs);
    let resid: Vec<f64> = (0..n)
        .map(|t| signal[t] - (0..p).map(|i| coef[i] * basis[i][t]).sum::<f64>())
        .collect();
    let fundamental = n / period;
    (1..)
        .map(|h| h * fundamental)
        .take_while(|&k| k <= n / 2)
        .map(|k| {
            let (re, im) = resid.iter().enumerate().fold((0.0, 0.0), |(re, im), (t, &v)| {
                let w = TAU * (k * t) as f64 / n as f64;
                (re + v * w.cos(), im - v * w.sin())
            });
            re * re + im * im
        })
        .sum()
}

/// Best single-threshold accuracy of the impulse-band energy detector.
pub fn energy_threshold_accuracy(ds: &Dataset, faulty: &SignalRecipe) -> f64 {
    let period = faulty.fault.as_ref().expect("faulty recipe").period;
    let mut scored: Vec<(f64, usize)> = ds
        .samples
        .rows()
        .into_iter()
        .zip(&ds.labels)
        .map(|(row, &l)| (impulse_band_energy(&row.to_vec(), &faulty.base_frequencies, period), l))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let m = scored.len();
    let total_faulty = scored.iter().filter(|s| s.1 == 1).count();
    // Threshold between positions i-1 and i: below is healthy, above faulty.
    let mut best = 0;
    let mut healthy_below = 0;
    let mut faulty_below = 0;
    for i in 0..=m {
        best = best.max(healthy_below + (total_faulty - faulty_below));
        if i < m {
            if scored[i].1 == 0 {
                healthy_below += 1;
            } else {
                faulty_below += 1;
            }
        }
    }
    best as f64 / m as f64
}
