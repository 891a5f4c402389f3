//! Lloyd's k-means with k-means++ seeding.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{norm, squared_distance, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iters: usize,
    /// Relative centroid shift below which iteration stops.
    pub tol: f64,
    pub seed: u64,
    pub n_init: usize,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        KMeansConfig {
            k,
            max_iters: 100,
            tol: 1e-6,
            seed,
            n_init: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Matrix,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    pub iterations_run: usize,
    pub seed: u64,
    /// Objective after each Lloyd iteration of the retained restart.
    pub inertia_trace: Vec<f64>,
}

impl ClusterModel {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }

    /// Cache-order member indices of every cluster.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut m = vec![Vec::new(); self.k];
        for (i, &a) in self.assignments.iter().enumerate() {
            m[a].push(i);
        }
        m
    }

    /// Audit dump: one JSON header line, then `k × width` little-endian f32.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = ClusterDumpHeader {
            k: self.k,
            d: self.centroids.cols() / 2,
            seed: self.seed,
            inertia: self.inertia,
            iterations_run: self.iterations_run,
        };
        let mut out = serde_json::to_vec(&header)?;
        out.push(b'\n');
        for &x in self.centroids.as_slice() {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
        Ok(out)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterDumpHeader {
    pub k: usize,
    pub d: usize,
    pub seed: u64,
    pub inertia: f64,
    pub iterations_run: usize,
}

/// Reads a centroid dump back as `(header, centroids)`.
pub fn read_centroids(path: impl AsRef<Path>) -> Result<(ClusterDumpHeader, Matrix)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let malformed = |reason: String| Error::Malformed {
        what: "cluster dump",
        reason,
    };
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| malformed("missing header line".into()))?;
    let header: ClusterDumpHeader = serde_json::from_slice(&bytes[..nl])?;
    let body = &bytes[nl + 1..];
    let want = header.k * 2 * header.d * 4;
    if body.len() != want {
        return Err(Error::TruncatedFile {
            expected: (nl + 1 + want) as u64,
            found: bytes.len() as u64,
        });
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let m = Matrix::from_vec(header.k, 2 * header.d, data)?;
    Ok((header, m))
}

/// Index of the nearest centroid; ties go to the lowest index.
pub fn assign(feature: &[f64], centroids: &Matrix) -> Result<usize> {
    if feature.len() != centroids.cols() {
        return Err(Error::DimensionMismatch {
            expected: centroids.cols(),
            got: feature.len(),
        });
    }
    Ok(nearest(feature, centroids).0)
}

fn nearest(x: &[f64], centroids: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter_rows().enumerate() {
        let d = squared_distance(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn assign_all(data: &Matrix, centroids: &Matrix) -> Vec<(usize, f64)> {
    (0..data.rows())
        .into_par_iter()
        .map(|i| nearest(data.row(i), centroids))
        .collect()
}

/// Within-cluster sum of squared distances for the given assignment.
pub fn inertia_of(data: &Matrix, centroids: &Matrix, assignments: &[usize]) -> Result<f64> {
    if data.cols() != centroids.cols() {
        return Err(Error::DimensionMismatch {
            expected: centroids.cols(),
            got: data.cols(),
        });
    }
    if assignments.len() != data.rows() {
        return Err(Error::DimensionMismatch {
            expected: data.rows(),
            got: assignments.len(),
        });
    }
    let mut total = 0.0;
    for (i, &a) in assignments.iter().enumerate() {
        if a >= centroids.rows() {
            return Err(Error::LabelOutOfRange {
                label: a,
                k: centroids.rows(),
            });
        }
        total += squared_distance(data.row(i), centroids.row(a));
    }
    Ok(total)
}

pub fn inertia(data: &Matrix, model: &ClusterModel) -> Result<f64> {
    inertia_of(data, &model.centroids, &model.assignments)
}

pub fn kmeanspp_init(data: &Matrix, k: usize, seed: u64) -> Result<Matrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(data.select_rows(&kmeanspp_indices(data, k, &mut rng)?))
}

/// k-means++ seeding: first row uniform, each further row drawn with
/// probability proportional to its squared distance to the nearest pick.
pub fn kmeanspp_indices<R: Rng>(data: &Matrix, k: usize, rng: &mut R) -> Result<Vec<usize>> {
    let n = data.rows();
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if k > n {
        return Err(Error::KTooLarge { k, n });
    }
    let mut chosen = Vec::with_capacity(k);
    let mut taken = vec![false; n];
    let first = rng.random_range(0..n);
    chosen.push(first);
    taken[first] = true;

    let mut d2: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| squared_distance(data.row(i), data.row(first)))
        .collect();

    while chosen.len() < k {
        let total: f64 = d2
            .iter()
            .zip(&taken)
            .filter(|(_, &t)| !t)
            .map(|(w, _)| *w)
            .sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            let mut last_positive = None;
            for i in 0..n {
                if taken[i] || d2[i] <= 0.0 {
                    continue;
                }
                last_positive = Some(i);
                acc += d2[i];
                if acc > target {
                    pick = Some(i);
                    break;
                }
            }
            pick.or(last_positive).expect("positive total weight")
        } else {
            // every remaining row coincides with a pick
            let free: Vec<usize> = (0..n).filter(|&i| !taken[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(pick);
        taken[pick] = true;
        let p = data.row(pick);
        d2.par_iter_mut().enumerate().for_each(|(i, w)| {
            let d = squared_distance(data.row(i), p);
            if d < *w {
                *w = d;
            }
        });
    }
    Ok(chosen)
}

/// Recomputes centroids as member means, reseeding empty clusters from the
/// member farthest from its own centroid.
fn update_centroids(data: &Matrix, assignments: &mut [usize], centroids: &mut Matrix) {
    let k = centroids.rows();
    let width = data.cols();
    let mut sums = Matrix::zeros(k, width);
    let mut counts = vec![0usize; k];
    for (i, &a) in assignments.iter().enumerate() {
        counts[a] += 1;
        for (s, x) in sums.row_mut(a).iter_mut().zip(data.row(i)) {
            *s += x;
        }
    }
    for (j, &count) in counts.iter().enumerate() {
        if count > 0 {
            let c = count as f64;
            for (dst, s) in centroids.row_mut(j).iter_mut().zip(sums.row(j)) {
                *dst = s / c;
            }
        }
    }

    for empty in 0..k {
        if counts[empty] > 0 {
            continue;
        }
        let mut far: Option<(usize, f64)> = None;
        for (i, &a) in assignments.iter().enumerate() {
            if counts[a] < 2 {
                continue;
            }
            let d = squared_distance(data.row(i), centroids.row(a));
            if far.is_none_or(|(_, best)| d > best) {
                far = Some((i, d));
            }
        }
        let Some((i, _)) = far else { break };
        let donor = assignments[i];
        assignments[i] = empty;
        counts[donor] -= 1;
        counts[empty] = 1;
        for (s, x) in sums.row_mut(donor).iter_mut().zip(data.row(i)) {
            *s -= x;
        }
        sums.row_mut(empty).copy_from_slice(data.row(i));
        centroids.row_mut(empty).copy_from_slice(data.row(i));
        // recompute the donor mean from scratch to avoid cancellation drift
        let mut fresh = vec![0.0; width];
        for (r, &a) in assignments.iter().enumerate() {
            if a == donor {
                for (f, x) in fresh.iter_mut().zip(data.row(r)) {
                    *f += x;
                }
            }
        }
        let c = counts[donor] as f64;
        for (dst, f) in centroids.row_mut(donor).iter_mut().zip(&fresh) {
            *dst = f / c;
        }
        sums.row_mut(donor).copy_from_slice(&fresh);
    }
}

fn lloyd(data: &Matrix, mut centroids: Matrix, cfg: &KMeansConfig, seed: u64) -> ClusterModel {
    let mut assignments = vec![0usize; data.rows()];
    let mut trace = Vec::new();
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        iterations += 1;
        for (a, (j, _)) in assignments.iter_mut().zip(assign_all(data, &centroids)) {
            *a = j;
        }
        let previous = centroids.clone();
        update_centroids(data, &mut assignments, &mut centroids);
        trace.push(inertia_of(data, &centroids, &assignments).expect("shapes checked"));

        let shift = previous
            .iter_rows()
            .zip(centroids.iter_rows())
            .map(|(old, new)| squared_distance(old, new).sqrt() / (1.0 + norm(old)))
            .fold(0.0, f64::max);
        if shift < cfg.tol || shift == 0.0 {
            break;
        }
    }
    ClusterModel {
        k: cfg.k,
        inertia: *trace.last().unwrap_or(&0.0),
        centroids,
        assignments,
        iterations_run: iterations,
        seed,
        inertia_trace: trace,
    }
}

/// Fits `cfg.n_init` seeded restarts and keeps the lowest-inertia model
/// (earliest restart on ties).
pub fn fit_kmeans(data: &Matrix, cfg: &KMeansConfig) -> Result<ClusterModel> {
    if cfg.k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if cfg.k > data.rows() {
        return Err(Error::KTooLarge {
            k: cfg.k,
            n: data.rows(),
        });
    }
    if cfg.max_iters == 0 {
        return Err(Error::Config("max_iters must be at least 1".into()));
    }
    if !(cfg.tol >= 0.0) {
        return Err(Error::Config(format!("tol must be >= 0, got {}", cfg.tol)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<ClusterModel> = None;
    for _ in 0..cfg.n_init.max(1) {
        let init = data.select_rows(&kmeanspp_indices(data, cfg.k, &mut rng)?);
        let model = lloyd(data, init, cfg, cfg.seed);
        if best.as_ref().is_none_or(|b| model.inertia < b.inertia) {
            best = Some(model);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Clusters a pool against fixed centroids (no Lloyd updates).
pub fn model_from_centroids(data: &Matrix, centroids: Matrix, seed: u64) -> Result<ClusterModel> {
    if data.cols() != centroids.cols() {
        return Err(Error::DimensionMismatch {
            expected: centroids.cols(),
            got: data.cols(),
        });
    }
    let assignments: Vec<usize> = assign_all(data, &centroids)
        .into_iter()
        .map(|(j, _)| j)
        .collect();
    let inertia = inertia_of(data, &centroids, &assignments)?;
    Ok(ClusterModel {
        k: centroids.rows(),
        centroids,
        assignments,
        inertia,
        iterations_run: 0,
        seed,
        inertia_trace: vec![inertia],
    })
}
