//! Lloyd K-means over circuit embeddings, PCA pre-reduction, and selection
//! of the pool members nearest to each cluster centre.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ansatz::{BoundCircuit, CandidatePool, TemplateId, CATALOGUE_VERSION};
use crate::error::{Error, Result};
use crate::linalg::{orthonormalize_rows, sq_dist, symmetric_eigen};
use crate::scalar::Scalar;
use crate::textfmt::{read_to_string, sha256_hex, verify_file, write_file, Num17};

pub const DEFAULT_MAX_ITER: usize = 300;
pub const DEFAULT_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansResult<T> {
    pub centroids: Array2<T>,
    pub assignments: Vec<usize>,
    pub objective: T,
    pub n_iterations: usize,
    pub converged: bool,
    /// Objective after every assignment step, starting with the initial one.
    pub objective_history: Vec<T>,
}

/// Sum of squared distances from each row to its assigned centroid.
pub fn kmeans_objective<T: Scalar>(x: ArrayView2<T>, centroids: ArrayView2<T>, assignments: &[usize]) -> T {
    x.rows()
        .into_iter()
        .zip(assignments)
        .map(|(row, &k)| sq_dist(row, centroids.row(k)))
        .sum()
}

fn nearest<T: Scalar>(row: ndarray::ArrayView1<T>, centroids: ArrayView2<T>) -> (usize, T) {
    let mut best = (0, T::infinity());
    for (k, c) in centroids.rows().into_iter().enumerate() {
        let d = sq_dist(row, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn assign<T: Scalar>(x: ArrayView2<T>, centroids: ArrayView2<T>) -> Vec<usize> {
    x.rows().into_iter().map(|r| nearest(r, centroids).0).collect()
}

/// New centroids as cluster means. An empty cluster is moved onto the point
/// farthest from its nearest centroid.
fn update<T: Scalar>(x: ArrayView2<T>, assignments: &[usize], k: usize) -> Array2<T> {
    let d = x.ncols();
    let mut sums = Array2::<T>::zeros((k, d));
    let mut counts = vec![0usize; k];
    for (row, &a) in x.rows().into_iter().zip(assignments) {
        sums.row_mut(a).zip_mut_with(&row, |s, &v| *s += v);
        counts[a] += 1;
    }
    let mut empty = Vec::new();
    for (c, &n) in counts.iter().enumerate() {
        if n == 0 {
            empty.push(c);
        } else {
            let inv = T::from_usize_lossy(n);
            sums.row_mut(c).mapv_inplace(|v| v / inv);
        }
    }
    if empty.is_empty() {
        return sums;
    }
    let mut live: Vec<usize> = (0..k).filter(|c| counts[*c] > 0).collect();
    for c in empty {
        let mut far = (0usize, -T::one());
        for (i, row) in x.rows().into_iter().enumerate() {
            let dist = live
                .iter()
                .map(|&l| sq_dist(row, sums.row(l)))
                .fold(T::infinity(), T::min);
            if dist > far.1 {
                far = (i, dist);
            }
        }
        sums.row_mut(c).assign(&x.row(far.0));
        live.push(c);
    }
    sums
}

/// Lloyd's algorithm with uniformly sampled distinct rows as initial means.
///
/// Stops once no centroid moves more than `tol` and the assignment is
/// stable, or after `max_iter` update steps.
pub fn kmeans<T: Scalar>(
    x: ArrayView2<T>,
    k: usize,
    seed: u64,
    max_iter: usize,
    tol: T,
) -> Result<KMeansResult<T>> {
    let m = x.nrows();
    if k == 0 || k > m {
        return Err(Error::invalid(format!("K = {k} must lie in 1..={m}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("K-means input contains non-finite values"));
    }
    if tol < T::zero() {
        return Err(Error::invalid("tolerance must be non-negative"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = rand::seq::index::sample(&mut rng, m, k);
    let mut centroids = x.select(Axis(0), &init.into_vec());
    let mut assignments = assign(x, centroids.view());
    let mut history = vec![kmeans_objective(x, centroids.view(), &assignments)];
    let mut n_iterations = 0;
    let mut converged = false;

    while n_iterations < max_iter {
        n_iterations += 1;
        let next = update(x, &assignments, k);
        let movement = centroids
            .rows()
            .into_iter()
            .zip(next.rows())
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(T::zero(), T::max);
        centroids = next;
        let relabelled = assign(x, centroids.view());
        let changed = relabelled != assignments;
        assignments = relabelled;
        history.push(kmeans_objective(x, centroids.view(), &assignments));
        if movement <= tol && !changed {
            converged = true;
            break;
        }
    }

    Ok(KMeansResult {
        objective: *history.last().expect("history is never empty"),
        centroids,
        assignments,
        n_iterations,
        converged,
        objective_history: history,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PcaModel<T> {
    pub mean: Array1<T>,
    /// `r x d`, orthonormal rows in order of decreasing variance.
    pub components: Array2<T>,
    pub explained_variance: Vec<T>,
}

impl<T: Scalar> PcaModel<T> {
    pub fn transform(&self, x: ArrayView2<T>) -> Array2<T> {
        let centred = &x - &self.mean.view().insert_axis(Axis(0));
        centred.dot(&self.components.t())
    }

    pub fn inverse_transform(&self, z: ArrayView2<T>) -> Array2<T> {
        z.dot(&self.components) + &self.mean.view().insert_axis(Axis(0))
    }
}

/// Principal components of `x`, keeping the top `r`.
///
/// Diagonalizes whichever of the covariance or Gram matrix is smaller. Each
/// component is signed so that its largest-magnitude entry is positive.
pub fn fit_pca<T: Scalar>(x: ArrayView2<T>, r: usize) -> Result<PcaModel<T>> {
    let (m, d) = x.dim();
    if r == 0 || r > m.min(d) {
        return Err(Error::invalid(format!(
            "PCA rank {r} must lie in 1..={}",
            m.min(d)
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("PCA input contains non-finite values"));
    }
    let mean = x.mean_axis(Axis(0)).expect("at least one row");
    let centred = &x - &mean.view().insert_axis(Axis(0));
    let denom = T::from_usize_lossy(m.saturating_sub(1).max(1));

    let (values, mut components) = if d <= m {
        let (vals, vecs) = symmetric_eigen(centred.t().dot(&centred));
        (vals, vecs.t().slice(ndarray::s![..r, ..]).to_owned())
    } else {
        let (vals, u) = symmetric_eigen(centred.dot(&centred.t()));
        let cutoff = vals.first().copied().unwrap_or_else(T::zero).max(T::zero()) * T::epsilon() * T::lit(1e3);
        let mut comps = Array2::zeros((r, d));
        for i in 0..r {
            if vals[i] > cutoff && vals[i] > T::zero() {
                let v = centred.t().dot(&u.column(i)) / vals[i].sqrt();
                comps.row_mut(i).assign(&v);
            }
        }
        (vals, comps)
    };
    orthonormalize_rows(&mut components);
    for mut row in components.rows_mut() {
        let mut lead = T::zero();
        for &v in row.iter() {
            if v.abs() > lead.abs() {
                lead = v;
            }
        }
        if lead < T::zero() {
            row.mapv_inplace(|v| -v);
        }
    }
    let explained_variance = values
        .into_iter()
        .take(r)
        .map(|v| v.max(T::zero()) / denom)
        .collect();
    Ok(PcaModel {
        mean,
        components,
        explained_variance,
    })
}

/// Where a bank came from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub pool_seed: Option<u64>,
    pub pool_size: usize,
    pub k: usize,
    pub pca_dims: Option<usize>,
    pub kmeans_seed: u64,
}

/// The filters of one quanvolution level.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterBank {
    pub level: usize,
    pub filters: Vec<BoundCircuit>,
    pub selection_indices: Vec<usize>,
    pub provenance: Provenance,
    pub objective: f64,
    pub kmeans_iterations: usize,
}

/// Clusters the pool's embeddings (optionally PCA-reduced) into `k` groups and
/// picks, for each centroid in order, the nearest pool member not already
/// taken. Distance ties go to the lower pool index.
pub fn select_filters<T: Scalar>(
    pool: &CandidatePool<T>,
    k: usize,
    pca_dims: Option<usize>,
    seed: u64,
) -> Result<FilterBank> {
    if k == 0 || k > pool.len() {
        return Err(Error::invalid(format!(
            "cannot select {k} filters from a pool of {}",
            pool.len()
        )));
    }
    let space = match pca_dims {
        Some(r) => fit_pca(pool.embeddings.view(), r)?.transform(pool.embeddings.view()),
        None => pool.embeddings.clone(),
    };
    let km = kmeans(space.view(), k, seed, DEFAULT_MAX_ITER, T::lit(DEFAULT_TOL))?;
    let selection_indices = nearest_unclaimed(space.view(), km.centroids.view());
    Ok(FilterBank {
        level: 1,
        filters: selection_indices.iter().map(|&i| pool.circuits[i].clone()).collect(),
        selection_indices,
        provenance: Provenance {
            pool_seed: None,
            pool_size: pool.len(),
            k,
            pca_dims,
            kmeans_seed: seed,
        },
        objective: km.objective.to_f64_lossy(),
        kmeans_iterations: km.n_iterations,
    })
}

/// Greedy per-centroid nearest row among rows not yet chosen.
pub fn nearest_unclaimed<T: Scalar>(rows: ArrayView2<T>, centroids: ArrayView2<T>) -> Vec<usize> {
    let mut taken = vec![false; rows.nrows()];
    let mut picks = Vec::with_capacity(centroids.nrows());
    for c in centroids.rows() {
        let mut best: Option<(usize, T)> = None;
        for (i, r) in rows.rows().into_iter().enumerate() {
            if taken[i] {
                continue;
            }
            let d = sq_dist(r, c);
            if best.map_or(true, |(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        let (i, _) = best.expect("k <= number of rows");
        taken[i] = true;
        picks.push(i);
    }
    picks
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BankManifest {
    level: usize,
    k: usize,
    n_qubits: usize,
    catalogue_version: u32,
    provenance: Provenance,
    selection_indices: Vec<usize>,
    templates: Vec<TemplateId>,
    objective: Num17,
    kmeans_iterations: usize,
    files: Vec<FileEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileEntry {
    name: String,
    sha256: String,
}

pub const BANK_MANIFEST: &str = "manifest.json";

impl FilterBank {
    pub fn k(&self) -> usize {
        self.filters.len()
    }

    pub fn n_qubits(&self) -> usize {
        self.filters.first().map_or(0, BoundCircuit::n_qubits)
    }

    pub fn at_level(mut self, level: usize) -> Self {
        self.level = level;
        self
    }

    pub fn with_pool_seed(mut self, seed: u64) -> Self {
        self.provenance.pool_seed = Some(seed);
        self
    }

    /// Writes one record per filter plus `manifest.json` into `dir`.
    /// Returns the manifest's SHA-256.
    pub fn save(&self, dir: &Path) -> Result<String> {
        let mut files = Vec::with_capacity(self.filters.len());
        for (i, f) in self.filters.iter().enumerate() {
            let name = format!("filter_{i:02}.json");
            let text = f.to_json();
            write_file(&dir.join(&name), &text)?;
            files.push(FileEntry {
                name,
                sha256: sha256_hex(text.as_bytes()),
            });
        }
        let manifest = BankManifest {
            level: self.level,
            k: self.k(),
            n_qubits: self.n_qubits(),
            catalogue_version: CATALOGUE_VERSION,
            provenance: self.provenance.clone(),
            selection_indices: self.selection_indices.clone(),
            templates: self.filters.iter().map(|f| f.template.id).collect(),
            objective: Num17(self.objective),
            kmeans_iterations: self.kmeans_iterations,
            files,
        };
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        write_file(&dir.join(BANK_MANIFEST), &text)?;
        Ok(sha256_hex(text.as_bytes()))
    }

    /// Loads a bank, checking every filter file against the manifest's hashes.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(BANK_MANIFEST);
        let text = read_to_string(&manifest_path)?;
        let manifest: BankManifest =
            serde_json::from_str(&text).map_err(|e| Error::parse(&manifest_path, e))?;
        if manifest.catalogue_version != CATALOGUE_VERSION {
            return Err(Error::parse(
                &manifest_path,
                format!(
                    "catalogue version {} does not match {CATALOGUE_VERSION}",
                    manifest.catalogue_version
                ),
            ));
        }
        if manifest.files.len() != manifest.k {
            return Err(Error::parse(&manifest_path, "file count differs from K"));
        }
        let mut filters = Vec::with_capacity(manifest.k);
        for entry in &manifest.files {
            let path = dir.join(&entry.name);
            verify_file(&path, &entry.sha256)?;
            let f = BoundCircuit::load(&path)?;
            if f.n_qubits() != manifest.n_qubits {
                return Err(Error::parse(&path, "qubit count differs from manifest"));
            }
            filters.push(f);
        }
        Ok(Self {
            level: manifest.level,
            filters,
            selection_indices: manifest.selection_indices,
            provenance: manifest.provenance,
            objective: manifest.objective.0,
            kmeans_iterations: manifest.kmeans_iterations,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ansatz::{build_pool, CircuitTemplate};
    use ndarray::array;

    #[test]
    fn k_equals_m_is_exact() {
        let x: Array2<f64> = array![[0.0, 1.0], [3.0, -2.0]];
        let r = kmeans(x.view(), 2, 5, 300, 1e-8).unwrap();
        assert_eq!(r.objective, 0.0);
        let mut a = r.assignments.clone();
        a.sort();
        assert_eq!(a, vec![0, 1]);
    }

    #[test]
    fn two_blobs_from_straddling_init() {
        let x: Array2<f64> = array![[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]];
        // Seeds whose initial sample takes one row from each blob always
        // land on the optimum; same-blob starts stall at E = 100.
        let mut hits = 0;
        for seed in 0..40 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let init = rand::seq::index::sample(&mut rng, 4, 2).into_vec();
            let straddles = (init[0] < 2) != (init[1] < 2);
            let r = kmeans(x.view(), 2, seed, 300, 1e-8).unwrap();
            if straddles {
                hits += 1;
                assert_eq!(r.objective, 1.0);
                assert_eq!(r.assignments[0], r.assignments[1]);
                assert_eq!(r.assignments[2], r.assignments[3]);
                assert_ne!(r.assignments[0], r.assignments[2]);
            } else {
                assert_eq!(r.objective, 100.0);
            }
        }
        assert!(hits > 0);
    }

    #[test]
    fn single_cluster_is_column_mean() {
        let x: Array2<f64> = array![[1.0, 2.0], [3.0, 6.0], [5.0, 1.0]];
        let r = kmeans(x.view(), 1, 0, 300, 1e-8).unwrap();
        let mean = x.mean_axis(Axis(0)).unwrap();
        for (a, b) in r.centroids.row(0).iter().zip(mean.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        let total_var: f64 = x.var_axis(Axis(0), 0.0).sum() * 3.0;
        assert!((r.objective - total_var).abs() < 1e-12);
    }

    #[test]
    fn kmeans_errors() {
        let x: Array2<f64> = array![[0.0], [1.0]];
        assert!(kmeans(x.view(), 3, 0, 10, 1e-8).is_err());
        assert!(kmeans(x.view(), 0, 0, 10, 1e-8).is_err());
        let bad: Array2<f64> = array![[0.0], [f64::NAN]];
        assert!(kmeans(bad.view(), 1, 0, 10, 1e-8).is_err());
    }

    #[test]
    fn empty_cluster_reseeded_to_farthest_point() {
        let x: Array2<f64> = array![[0.0], [1.0], [10.0]];
        // Every point assigned to cluster 0; cluster 1 is empty.
        let c = update(x.view(), &[0, 0, 0], 2);
        assert!((c[[0, 0]] - 11.0 / 3.0).abs() < 1e-12);
        assert_eq!(c[[1, 0]], 10.0);
    }

    #[test]
    fn max_iter_respected() {
        let x = Array2::from_shape_fn((40, 3), |(i, j)| ((i * 7 + j * 3) % 11) as f64);
        let r = kmeans(x.view(), 5, 1, 1, 0.0).unwrap();
        assert_eq!(r.n_iterations, 1);
    }

    #[test]
    fn pca_axis_aligned() {
        let x: Array2<f64> = array![[1.0, 0.0], [-1.0, 0.0]];
        let p = fit_pca(x.view(), 1).unwrap();
        assert!((p.components[[0, 0]] - 1.0).abs() < 1e-12);
        assert!(p.components[[0, 1]].abs() < 1e-12);
        let z = p.transform(x.view());
        assert!((z[[0, 0]] - 1.0).abs() < 1e-12);
        assert!((z[[1, 0]] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn pca_identical_rows_project_to_zero() {
        let x: Array2<f64> = array![[2.0, 3.0, 4.0], [2.0, 3.0, 4.0], [2.0, 3.0, 4.0]];
        let p = fit_pca(x.view(), 2).unwrap();
        assert!(p.transform(x.view()).iter().all(|v| v.abs() < 1e-12));
        let g = p.components.dot(&p.components.t());
        assert!((g[[0, 0]] - 1.0).abs() < 1e-12 && g[[0, 1]].abs() < 1e-12);
    }

    #[test]
    fn pca_rank_checked() {
        let x: Array2<f64> = array![[1.0, 2.0], [3.0, 4.0], [5.0, 7.0]];
        assert!(fit_pca(x.view(), 0).is_err());
        assert!(fit_pca(x.view(), 3).is_err());
    }

    #[test]
    fn whole_pool_selected_when_k_equals_size() {
        let pool = build_pool::<f64>(3, 6, 1..=2, 11).unwrap();
        let bank = select_filters(&pool, 6, None, 3).unwrap();
        let mut idx = bank.selection_indices.clone();
        idx.sort();
        assert_eq!(idx, (0..6).collect::<Vec<_>>());
        assert!(select_filters(&pool, 7, None, 3).is_err());
    }

    #[test]
    fn separated_families_each_contribute_one_filter() {
        let delta = CircuitTemplate::new(TemplateId::RyOnly, 3, 1).unwrap();
        let spread = CircuitTemplate::new(TemplateId::HCryChain, 3, 1).unwrap();
        let mut circuits = Vec::new();
        for i in 0..5 {
            circuits.push(BoundCircuit::with_params(&delta, vec![0.01 * i as f64; 3], i).unwrap());
            circuits.push(BoundCircuit::with_params(&spread, vec![0.0; 2], 100 + i).unwrap());
        }
        let pool = CandidatePool::<f64>::from_circuits(circuits).unwrap();
        for seed in 0..10 {
            let bank = select_filters(&pool, 2, None, seed).unwrap();
            let ids: std::collections::HashSet<_> = bank.filters.iter().map(|f| f.template.id).collect();
            assert_eq!(ids.len(), 2, "seed {seed}");
        }
    }

    #[test]
    fn collisions_fall_back_to_next_nearest() {
        let rows: Array2<f64> = array![[0.0], [0.1], [5.0]];
        let centroids: Array2<f64> = array![[0.0], [0.0]];
        assert_eq!(nearest_unclaimed(rows.view(), centroids.view()), vec![0, 1]);
    }

    #[test]
    fn bank_round_trip_and_tamper_detection() {
        let pool = build_pool::<f64>(4, 20, 1..=2, 5).unwrap();
        let bank = select_filters(&pool, 4, None, 9).unwrap().at_level(2).with_pool_seed(5);
        let dir = tempfile::tempdir().unwrap();
        bank.save(dir.path()).unwrap();
        assert_eq!(FilterBank::load(dir.path()).unwrap(), bank);

        let victim = dir.path().join("filter_01.json");
        let mut text = std::fs::read_to_string(&victim).unwrap();
        text.push(' ');
        std::fs::write(&victim, text).unwrap();
        match FilterBank::load(dir.path()) {
            Err(Error::HashMismatch { path, .. }) => assert_eq!(path, victim),
            other => panic!("expected hash mismatch, got {other:?}"),
        }
    }
}
