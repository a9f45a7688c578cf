//! Synthetic bearing vibration signals and the dataset/split file formats.
//!
//! Healthy signals are a few carrier sinusoids plus Gaussian noise. Faulty
//! signals add a train of exponentially decaying impulses, the signature a
//! localized bearing defect leaves as rolling elements pass over it.

use std::f64::consts::TAU;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textfmt::{fmt17, read_to_string, write_file};

pub const SIGNAL_LEN: usize = 192;
pub const N_CLASSES: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HealthClass {
    Healthy,
    Faulty,
}

impl HealthClass {
    pub fn index(self) -> usize {
        match self {
            HealthClass::Healthy => 0,
            HealthClass::Faulty => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultImpulses {
    /// Samples between impulses.
    pub period: usize,
    pub amplitude: f64,
    /// Per-sample multiplicative decay after each impulse.
    pub decay: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalRecipe {
    pub class: HealthClass,
    /// Carrier frequencies in cycles per signal window.
    pub base_frequencies: Vec<f64>,
    pub noise_std: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault: Option<FaultImpulses>,
}

impl SignalRecipe {
    pub fn default_healthy() -> Self {
        Self {
            class: HealthClass::Healthy,
            base_frequencies: vec![3.1, 7.4],
            noise_std: 0.3,
            fault: None,
        }
    }

    pub fn default_faulty() -> Self {
        Self {
            class: HealthClass::Faulty,
            fault: Some(FaultImpulses {
                period: 24,
                amplitude: 0.9,
                decay: 0.8,
            }),
            ..Self::default_healthy()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::invalid("noise_std must be finite and non-negative"));
        }
        if self.base_frequencies.iter().any(|f| !f.is_finite()) {
            return Err(Error::invalid("base frequencies must be finite"));
        }
        match (self.class, &self.fault) {
            (HealthClass::Healthy, Some(_)) => Err(Error::invalid("healthy recipe cannot carry impulses")),
            (HealthClass::Faulty, None) => Err(Error::invalid("faulty recipe needs impulse parameters")),
            (_, Some(f)) if f.period == 0 => Err(Error::invalid("impulse period must be positive")),
            (_, Some(f)) if !(f.amplitude.is_finite() && f.decay.is_finite() && f.decay >= 0.0) => {
                Err(Error::invalid("impulse amplitude and decay must be finite, decay non-negative"))
            }
            _ => Ok(()),
        }
    }

    /// One signal of `length` samples. The random draws happen in a fixed
    /// order (carrier phases, noise, then impulse offset) so a faulty recipe
    /// with zero amplitude reproduces the healthy signal for the same seed.
    pub fn synthesize(&self, length: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phases: Vec<f64> = self
            .base_frequencies
            .iter()
            .map(|_| rng.random_range(0.0..TAU))
            .collect();
        let mut x: Vec<f64> = (0..length)
            .map(|t| {
                let noise: f64 = rng.sample(StandardNormal);
                let carrier: f64 = self
                    .base_frequencies
                    .iter()
                    .zip(&phases)
                    .map(|(&f, &ph)| (TAU * f * t as f64 / length as f64 + ph).sin())
                    .sum();
                carrier + self.noise_std * noise
            })
            .collect();
        if let Some(f) = &self.fault {
            let start = rng.random_range(0..f.period);
            for (t, v) in x.iter_mut().enumerate() {
                let since = (t + f.period - start) % f.period;
                *v += f.amplitude * f.decay.powi(since as i32);
            }
        }
        x
    }
}

/// Indices into a dataset's rows.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `m x length`.
    pub samples: Array2<f64>,
    /// Class index per row.
    pub labels: Vec<usize>,
    pub seed: u64,
    pub split: Option<Split>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for sample `i` of a dataset generated with `seed`.
pub fn sample_seed(seed: u64, i: usize) -> u64 {
    splitmix64(splitmix64(seed) ^ i as u64)
}

/// `m` signals alternating healthy (even rows) and faulty (odd rows).
pub fn generate_dataset(healthy: &SignalRecipe, faulty: &SignalRecipe, m: usize, seed: u64) -> Result<Dataset> {
    if m < 2 {
        return Err(Error::invalid(format!("need at least 2 samples, got {m}")));
    }
    healthy.validate()?;
    faulty.validate()?;
    if healthy.class != HealthClass::Healthy || faulty.class != HealthClass::Faulty {
        return Err(Error::invalid("recipes must be (healthy, faulty) in that order"));
    }
    let mut samples = Array2::zeros((m, SIGNAL_LEN));
    let mut labels = Vec::with_capacity(m);
    for i in 0..m {
        let recipe = if i % 2 == 0 { healthy } else { faulty };
        let x = recipe.synthesize(SIGNAL_LEN, sample_seed(seed, i));
        samples.row_mut(i).iter_mut().zip(x).for_each(|(d, v)| *d = v);
        labels.push(recipe.class.index());
    }
    Ok(Dataset {
        samples,
        labels,
        seed,
        split: None,
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn signal_len(&self) -> usize {
        self.samples.ncols()
    }

    /// Count per class index.
    pub fn class_counts(&self) -> [usize; N_CLASSES] {
        let mut c = [0; N_CLASSES];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }

    /// Uniformly random `n_train` rows for training, the rest for testing.
    /// Both index lists are sorted.
    pub fn split(mut self, n_train: usize, seed: u64) -> Result<Self> {
        let m = self.len();
        if n_train == 0 || n_train >= m {
            return Err(Error::invalid(format!("n_train {n_train} must lie in 1..{m}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut train = rand::seq::index::sample(&mut rng, m, n_train).into_vec();
        train.sort_unstable();
        let mut in_train = vec![false; m];
        train.iter().for_each(|&i| in_train[i] = true);
        let test = (0..m).filter(|&i| !in_train[i]).collect();
        self.split = Some(Split { train, test });
        Ok(self)
    }

    /// Header `m length n_classes`, then `label v_1 ... v_length` per row.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {} {}\n", self.len(), self.signal_len(), N_CLASSES);
        for (row, &label) in self.samples.rows().into_iter().zip(&self.labels) {
            out.push_str(&label.to_string());
            for &v in row {
                out.push(' ');
                out.push_str(&fmt17(v));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(path: &Path, text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<usize> = lines
            .next()
            .ok_or_else(|| Error::parse(path, "missing header"))?
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse(path, format!("header: {e}")))?;
        let [m, length, n_classes] = header[..] else {
            return Err(Error::parse(path, "header must be `m length n_classes`"));
        };
        if n_classes != N_CLASSES {
            return Err(Error::parse(path, format!("{n_classes} classes, only {N_CLASSES} supported")));
        }
        let mut samples = Array2::zeros((m, length));
        let mut labels = Vec::with_capacity(m);
        for i in 0..m {
            let line = lines
                .next()
                .ok_or_else(|| Error::parse(path, format!("expected {m} samples, found {i}")))?;
            let mut tok = line.split_whitespace();
            let label: usize = tok
                .next()
                .and_then(|t| t.parse().ok())
                .filter(|&l| l < N_CLASSES)
                .ok_or_else(|| Error::parse(path, format!("sample {i}: bad label")))?;
            let values: Vec<f64> = tok
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::parse(path, format!("sample {i}: {e}")))?;
            if values.len() != length || values.iter().any(|v| !v.is_finite()) {
                return Err(Error::parse(path, format!("sample {i}: expected {length} finite values")));
            }
            samples.row_mut(i).iter_mut().zip(values).for_each(|(d, v)| *d = v);
            labels.push(label);
        }
        if lines.next().is_some() {
            return Err(Error::parse(path, "trailing lines after the last sample"));
        }
        Ok(Self {
            samples,
            labels,
            seed: 0,
            split: None,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_text())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(path, &read_to_string(path)?)
    }
}

impl Split {
    /// Two lines of space-separated indices: train, then test.
    pub fn to_text(&self) -> String {
        let line = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
        format!("{}\n{}\n", line(&self.train), line(&self.test))
    }

    /// Parses and checks that the two lists partition `0..m`.
    pub fn from_text(path: &Path, text: &str, m: usize) -> Result<Self> {
        let mut lines = text.lines();
        let mut parse = |what: &str| -> Result<Vec<usize>> {
            lines
                .next()
                .ok_or_else(|| Error::parse(path, format!("missing {what} line")))?
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::parse(path, format!("{what}: {e}")))
        };
        let split = Split {
            train: parse("train")?,
            test: parse("test")?,
        };
        let mut seen = vec![false; m];
        for &i in split.train.iter().chain(&split.test) {
            if i >= m || seen[i] {
                return Err(Error::parse(path, format!("index {i} out of range or repeated")));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::parse(path, "split does not cover every sample"));
        }
        Ok(split)
    }
}
