//! Planted Gaussian mixtures written as embedding caches, for tests and demos.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cache::{write_cache, SampleRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// Number of planted components.
    pub k_true: usize,
    pub n: usize,
    /// Per-encoder dimension; generated vectors are `2d` wide.
    pub d: usize,
    /// Norm of every planted centroid. Centroid directions are random, so
    /// pairwise centroid distances scale with this.
    pub separation: f64,
    /// Expected norm of the isotropic noise added to each point.
    #[serde(default = "default_noise")]
    pub noise: f64,
    pub outlier_fraction: f64,
    pub seed: u64,
}

fn default_noise() -> f64 {
    1.0
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.k_true == 0 || self.d == 0 {
            return bad("k_true and d must be at least 1".into());
        }
        if self.n < self.k_true {
            return bad(format!("n = {} is below k_true = {}", self.n, self.k_true));
        }
        if !(self.separation > 0.0) {
            return bad("separation must be positive".into());
        }
        if !(self.noise >= 0.0) {
            return bad("noise must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return bad("outlier_fraction must be in [0, 1)".into());
        }
        if self.outlier_fraction > 0.0 && self.k_true < 2 {
            return bad("outliers need at least two components".into());
        }
        if self.n - self.outlier_count() < self.k_true {
            return bad("too many outliers to populate every component".into());
        }
        Ok(())
    }

    pub fn outlier_count(&self) -> usize {
        (self.outlier_fraction * self.n as f64).floor() as usize
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub records: Vec<SampleRecord>,
    /// Planted component of each sample; `None` marks an injected outlier.
    pub components: Vec<Option<usize>>,
    /// Planted centroids in the raw (un-normalized) `2d` space.
    pub centroids: Vec<Vec<f64>>,
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * scale
        })
        .collect()
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let dim = 2 * spec.d;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let centroids: Vec<Vec<f64>> = (0..spec.k_true)
        .map(|_| {
            let mut u = gaussian(&mut rng, dim, 1.0);
            let n = u.iter().map(|x| x * x).sum::<f64>().sqrt();
            u.iter_mut().for_each(|x| *x *= spec.separation / n);
            u
        })
        .collect();

    let n_out = spec.outlier_count();
    let mut kinds: Vec<Option<usize>> = (0..spec.n - n_out)
        .map(|i| Some(i % spec.k_true))
        .chain(std::iter::repeat_n(None, n_out))
        .collect();
    kinds.shuffle(&mut rng);

    let noise_scale = spec.noise / (dim as f64).sqrt();
    let mut records = Vec::with_capacity(spec.n);
    for (i, kind) in kinds.iter().enumerate() {
        let base: Vec<f64> = match *kind {
            Some(c) => centroids[c].clone(),
            None => {
                let a = rng.random_range(0..spec.k_true);
                let mut b = rng.random_range(0..spec.k_true - 1);
                if b >= a {
                    b += 1;
                }
                let t: f64 = rng.random_range(0.3..0.7);
                centroids[a]
                    .iter()
                    .zip(&centroids[b])
                    .map(|(x, y)| t * x + (1.0 - t) * y)
                    .collect()
            }
        };
        let v: Vec<f32> = base
            .iter()
            .zip(gaussian(&mut rng, dim, noise_scale))
            .map(|(b, e)| (b + e) as f32)
            .collect();
        let (img, txt) = v.split_at(spec.d);
        records.push(SampleRecord::new(
            format!("syn-{i}"),
            img.to_vec(),
            txt.to_vec(),
        ));
    }
    Ok(SyntheticData {
        records,
        components: kinds,
        centroids,
    })
}

/// Generates a mixture and writes it as a cache file.
pub fn gen_synthetic(spec: &SyntheticSpec, path: impl AsRef<Path>) -> Result<SyntheticData> {
    let data = generate(spec)?;
    write_cache(&data.records, path)?;
    Ok(data)
}
