//! Spherical k-means over unit gradient vectors.
//!
//! Points are assigned to the centroid with the largest cosine similarity and
//! centroids are the renormalized means of their members. The objective is the
//! total cosine similarity of every point to its centroid; each iteration
//! (assign, repair empty clusters, update centroids) never decreases it.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grdm;
use crate::matrix::{dot, l2_norm, GradientMatrix, ZERO_NORM};

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansParams {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Stop once the relative objective improvement drops below this.
    pub tol: f64,
}

impl KMeansParams {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            seed,
            max_iter: 100,
            tol: 1e-6,
        }
    }
}

/// A partition of `N` samples into `k` non-empty clusters.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    k: usize,
    assignments: Vec<usize>,
    sizes: Vec<usize>,
    /// `k x dim`, row-major, unit rows. Empty when loaded without centroids.
    centroids: Vec<f64>,
    dim: usize,
    /// Objective after each completed iteration.
    objective_history: Vec<f64>,
}

impl Clustering {
    /// Builds a clustering from explicit assignments. Every cluster must be non-empty.
    pub fn from_assignments(k: usize, assignments: Vec<usize>) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidConfig("k must be positive".into()));
        }
        if k > assignments.len() {
            return Err(Error::KTooLarge {
                k,
                n: assignments.len(),
            });
        }
        let mut sizes = vec![0usize; k];
        for (i, &c) in assignments.iter().enumerate() {
            if c >= k {
                return Err(Error::InconsistentInputs(format!(
                    "sample {i} assigned to cluster {c} but k = {k}"
                )));
            }
            sizes[c] += 1;
        }
        if let Some(c) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::InconsistentInputs(format!("cluster {c} is empty")));
        }
        Ok(Self {
            k,
            assignments,
            sizes,
            centroids: Vec::new(),
            dim: 0,
            objective_history: Vec::new(),
        })
    }

    pub fn with_centroids(mut self, centroids: &GradientMatrix) -> Result<Self> {
        if centroids.rows() != self.k {
            return Err(Error::LengthMismatch {
                expected: self.k,
                found: centroids.rows(),
            });
        }
        self.dim = centroids.dim();
        self.centroids = centroids.data().to_vec();
        Ok(self)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn has_centroids(&self) -> bool {
        !self.centroids.is_empty()
    }

    pub fn centroid(&self, cluster: usize) -> &[f64] {
        &self.centroids[cluster * self.dim..(cluster + 1) * self.dim]
    }

    pub fn centroid_matrix(&self) -> Result<GradientMatrix> {
        let ids = (0..self.k).map(|c| format!("centroid-{c}")).collect();
        GradientMatrix::new(ids, self.dim, self.centroids.clone())
    }

    pub fn objective_history(&self) -> &[f64] {
        &self.objective_history
    }

    /// Sample indices assigned to `cluster`, ascending.
    pub fn members(&self, cluster: usize) -> Result<Vec<usize>> {
        if cluster >= self.k {
            return Err(Error::IndexOutOfRange {
                index: cluster,
                len: self.k,
            });
        }
        Ok(self
            .assignments
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == cluster)
            .map(|(i, _)| i)
            .collect())
    }

    /// Member lists for every cluster in one pass.
    pub fn all_members(&self) -> Vec<Vec<usize>> {
        let mut out: Vec<Vec<usize>> = self.sizes.iter().map(|&s| Vec::with_capacity(s)).collect();
        for (i, &c) in self.assignments.iter().enumerate() {
            out[c].push(i);
        }
        out
    }

    /// Total cosine similarity of each point in `m` to its assigned centroid.
    pub fn objective(&self, m: &GradientMatrix) -> f64 {
        objective(m, &self.centroids, &self.assignments)
    }
}

fn objective(m: &GradientMatrix, centroids: &[f64], assignments: &[usize]) -> f64 {
    let dim = m.dim();
    m.iter_rows()
        .zip(assignments)
        .map(|(x, &c)| dot(x, &centroids[c * dim..(c + 1) * dim]))
        .sum()
}

/// Nearest centroid by cosine for every row; ties go to the lowest cluster index.
fn assign(m: &GradientMatrix, centroids: &[f64], k: usize) -> Vec<(usize, f64)> {
    let dim = m.dim();
    m.data()
        .par_chunks_exact(dim)
        .map(|x| {
            let mut best = (0, f64::NEG_INFINITY);
            for c in 0..k {
                let s = dot(x, &centroids[c * dim..(c + 1) * dim]);
                if s > best.1 {
                    best = (c, s);
                }
            }
            best
        })
        .collect()
}

/// k-means++ seeding with `1 - cos` as the sampling weight.
///
/// On unit vectors `1 - cos` is half the squared Euclidean distance, so this
/// is the usual D^2 weighting.
fn init_plus_plus(m: &GradientMatrix, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = m.rows();
    let dim = m.dim();
    let mut centroids = Vec::with_capacity(k * dim);
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    centroids.extend_from_slice(m.row(first));

    let mut best_cos: Vec<f64> = m.iter_rows().map(|x| dot(x, m.row(first))).collect();
    for _ in 1..k {
        let weights: Vec<f64> = best_cos
            .iter()
            .zip(&chosen)
            .map(|(&s, &taken)| {
                let w = 1.0 - s;
                if taken || w < 1e-12 {
                    0.0
                } else {
                    w
                }
            })
            .collect();
        let total: f64 = weights.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in weights.iter().enumerate() {
                if w > 0.0 {
                    pick = Some(i);
                    if target < w {
                        break;
                    }
                    target -= w;
                }
            }
            pick.expect("positive total weight")
        } else {
            // Every remaining point duplicates a chosen centroid.
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[next] = true;
        let row = m.row(next);
        centroids.extend_from_slice(row);
        best_cos
            .par_iter_mut()
            .zip(m.data().par_chunks_exact(dim))
            .for_each(|(b, x)| *b = b.max(dot(x, row)));
    }
    centroids
}

/// Moves the worst-fitting point of a multi-member cluster into each empty cluster.
fn repair_empty(
    m: &GradientMatrix,
    assignments: &mut [usize],
    sims: &mut [f64],
    sizes: &mut [usize],
    centroids: &mut [f64],
) {
    let dim = m.dim();
    for empty in 0..sizes.len() {
        if sizes[empty] > 0 {
            continue;
        }
        let worst = (0..assignments.len())
            .filter(|&i| sizes[assignments[i]] > 1)
            .min_by(|&a, &b| sims[a].total_cmp(&sims[b]).then(a.cmp(&b)))
            .expect("k <= N leaves a multi-member cluster");
        sizes[assignments[worst]] -= 1;
        assignments[worst] = empty;
        sizes[empty] = 1;
        sims[worst] = 1.0;
        centroids[empty * dim..(empty + 1) * dim].copy_from_slice(m.row(worst));
    }
}

/// Renormalized member means. A cluster whose members sum to zero keeps its old centroid.
fn update_centroids(m: &GradientMatrix, assignments: &[usize], k: usize, centroids: &mut [f64]) {
    let dim = m.dim();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &c) in assignments.iter().enumerate() {
        members[c].push(i);
    }
    centroids
        .par_chunks_exact_mut(dim)
        .zip(members.par_iter())
        .for_each(|(centroid, idx)| {
            let mut sum = vec![0.0; dim];
            for &i in idx {
                sum.iter_mut().zip(m.row(i)).for_each(|(s, x)| *s += x);
            }
            let norm = l2_norm(&sum);
            if norm >= ZERO_NORM {
                centroid
                    .iter_mut()
                    .zip(&sum)
                    .for_each(|(c, s)| *c = s / norm);
            }
        });
}

/// Clusters the rows of a normalized matrix into `params.k` groups.
pub fn spherical_kmeans(m: &GradientMatrix, params: &KMeansParams) -> Result<Clustering> {
    let n = m.rows();
    let k = params.k;
    if k == 0 {
        return Err(Error::InvalidConfig("k must be positive".into()));
    }
    if k > n {
        return Err(Error::KTooLarge { k, n });
    }
    if !m.is_normalized() {
        return Err(Error::NotNormalized);
    }
    if params.max_iter == 0 {
        return Err(Error::InvalidConfig("max_iter must be positive".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut centroids = init_plus_plus(m, k, &mut rng);
    let mut assignments = vec![usize::MAX; n];
    let mut history: Vec<f64> = Vec::new();

    for _ in 0..params.max_iter {
        let best = assign(m, &centroids, k);
        let mut changes = 0usize;
        let mut sizes = vec![0usize; k];
        let mut sims = Vec::with_capacity(n);
        for (a, (c, s)) in assignments.iter_mut().zip(best) {
            if *a != c {
                changes += 1;
                *a = c;
            }
            sizes[c] += 1;
            sims.push(s);
        }
        repair_empty(m, &mut assignments, &mut sims, &mut sizes, &mut centroids);
        update_centroids(m, &assignments, k, &mut centroids);

        let obj = objective(m, &centroids, &assignments);
        let prev = history.last().copied();
        history.push(obj);
        if changes == 0 {
            break;
        }
        if let Some(prev) = prev {
            if obj - prev <= params.tol * prev.abs().max(f64::MIN_POSITIVE) {
                break;
            }
        }
    }

    let mut sizes = vec![0usize; k];
    assignments.iter().for_each(|&c| sizes[c] += 1);
    Ok(Clustering {
        k,
        assignments,
        sizes,
        centroids,
        dim: m.dim(),
        objective_history: history,
    })
}

/// On-disk JSON form of a clustering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringRecord {
    pub k: usize,
    pub assignments: Vec<usize>,
    pub sizes: Vec<usize>,
}

impl From<&Clustering> for ClusteringRecord {
    fn from(c: &Clustering) -> Self {
        Self {
            k: c.k,
            assignments: c.assignments.clone(),
            sizes: c.sizes.clone(),
        }
    }
}

/// Path of the centroid matrix stored alongside a clustering JSON file.
pub fn centroids_path(json_path: &Path) -> PathBuf {
    json_path.with_extension("centroids.grdm")
}

/// Writes the clustering JSON and, when centroids are present, the centroid GRDM file.
pub fn save_clustering(json_path: &Path, c: &Clustering) -> Result<()> {
    let w = BufWriter::new(File::create(json_path)?);
    serde_json::to_writer(w, &ClusteringRecord::from(c))?;
    if c.has_centroids() {
        grdm::save_gradients(&centroids_path(json_path), &c.centroid_matrix()?)?;
    }
    Ok(())
}

/// Loads a clustering JSON file, picking up centroids if they were saved next to it.
pub fn load_clustering(json_path: &Path) -> Result<Clustering> {
    let record: ClusteringRecord =
        serde_json::from_reader(BufReader::new(File::open(json_path)?))?;
    let c = Clustering::from_assignments(record.k, record.assignments)?;
    if c.sizes != record.sizes {
        return Err(Error::InconsistentInputs(
            "stored sizes disagree with assignments".into(),
        ));
    }
    let cpath = centroids_path(json_path);
    if cpath.exists() {
        c.with_centroids(&grdm::load_gradients(&cpath)?)
    } else {
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(rows: &[Vec<f64>]) -> GradientMatrix {
        let ids = (0..rows.len()).map(|i| i.to_string()).collect();
        GradientMatrix::from_rows(ids, rows).unwrap().normalize_rows().unwrap()
    }

    fn four_points() -> GradientMatrix {
        unit(&[
            vec![1.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, 1.0],
        ])
    }

    #[test]
    fn separates_two_axes() {
        let m = four_points();
        let c = spherical_kmeans(&m, &KMeansParams::new(2, 3)).unwrap();
        assert_eq!(c.sizes(), &[2, 2]);
        let a = c.assignments();
        assert_eq!(a[0], a[1]);
        assert_eq!(a[2], a[3]);
        assert_ne!(a[0], a[2]);
        assert_eq!(c.centroid(a[0]), &[1.0, 0.0]);
        assert_eq!(c.centroid(a[2]), &[0.0, 1.0]);
        assert_eq!(c.members(a[0]).unwrap(), vec![0, 1]);
    }

    #[test]
    fn single_cluster_centroid_is_normalized_mean() {
        let m = unit(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]);
        let c = spherical_kmeans(&m, &KMeansParams::new(1, 0)).unwrap();
        assert_eq!(c.sizes(), &[3]);
        assert!(c.assignments().iter().all(|&a| a == 0));
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((c.centroid(0)[0] - h).abs() < 1e-12);
        assert!((c.centroid(0)[1] - h).abs() < 1e-12);
    }

    #[test]
    fn k_equal_n_gives_singletons() {
        let m = unit(&[
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![1.0, 1.0, 0.0],
        ]);
        let c = spherical_kmeans(&m, &KMeansParams::new(4, 11)).unwrap();
        assert_eq!(c.sizes(), &[1, 1, 1, 1]);
        assert!((c.objective(&m) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn duplicate_points_still_fill_every_cluster() {
        let m = unit(&vec![vec![1.0, 0.0]; 5]);
        let c = spherical_kmeans(&m, &KMeansParams::new(3, 2)).unwrap();
        assert!(c.sizes().iter().all(|&s| s > 0));
        assert_eq!(c.sizes().iter().sum::<usize>(), 5);
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = four_points();
        assert!(matches!(
            spherical_kmeans(&m, &KMeansParams::new(5, 0)),
            Err(Error::KTooLarge { k: 5, n: 4 })
        ));
        let raw = GradientMatrix::with_index_ids(2, 1, vec![2.0, 3.0]).unwrap();
        assert!(matches!(
            spherical_kmeans(&raw, &KMeansParams::new(1, 0)),
            Err(Error::NotNormalized)
        ));
        assert!(spherical_kmeans(&m, &KMeansParams::new(0, 0)).is_err());
    }

    #[test]
    fn members_out_of_range() {
        let c = Clustering::from_assignments(2, vec![0, 1, 1]).unwrap();
        assert!(matches!(
            c.members(2),
            Err(Error::IndexOutOfRange { index: 2, len: 2 })
        ));
        assert_eq!(c.all_members(), vec![vec![0], vec![1, 2]]);
    }

    #[test]
    fn from_assignments_validates() {
        assert!(Clustering::from_assignments(2, vec![0, 0]).is_err());
        assert!(Clustering::from_assignments(2, vec![0, 2]).is_err());
        assert!(Clustering::from_assignments(3, vec![0, 1]).is_err());
    }

    #[test]
    fn save_and_load_with_centroids() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clusters.json");
        let m = four_points();
        let c = spherical_kmeans(&m, &KMeansParams::new(2, 5)).unwrap();
        save_clustering(&path, &c).unwrap();
        assert!(centroids_path(&path).exists());
        let back = load_clustering(&path).unwrap();
        assert_eq!(back.assignments(), c.assignments());
        assert_eq!(back.sizes(), c.sizes());
        assert_eq!(back.centroid(0), c.centroid(0));
        let json: serde_json::Value =
            serde_json::from_reader(File::open(&path).unwrap()).unwrap();
        assert_eq!(json["k"], 2);
    }
}
