#![allow(dead_code)]

use std::path::{Path, PathBuf};

use lowconf_core::synthetic::{gen_synthetic, SyntheticData, SyntheticSpec};
use lowconf_core::{Matrix, PipelineConfig};

/// The planted pool used by the under-training and informativeness checks:
/// five components, 5000 samples, 10% inter-centroid outliers.
pub fn planted_pool(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        k_true: 5,
        n: 5000,
        d: 32,
        separation: 1.0,
        noise: 0.6,
        outlier_fraction: 0.1,
        seed,
    }
}

pub fn write_pool(dir: &Path, name: &str, spec: &SyntheticSpec) -> (PathBuf, SyntheticData) {
    let path = dir.join(name);
    let data = gen_synthetic(spec, &path).expect("synthetic cache");
    (path, data)
}

/// Default pipeline settings apart from the pool-specific ones.
pub fn pipeline(cache: &Path, out_dir: &Path, k: usize, seed: u64) -> PipelineConfig {
    PipelineConfig {
        cache: cache.to_path_buf(),
        out_dir: out_dir.to_path_buf(),
        k,
        seed,
        ..PipelineConfig::default()
    }
}

/// Unit-norm rows drawn around two antipodal-ish centres.
pub fn two_blobs(n: usize, dim: usize, seed: u64) -> Matrix {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        let mut r: Vec<f64> = (0..dim).map(|_| rng.random_range(-0.3..0.3)).collect();
        r[0] += 2.0 * sign;
        let norm = r.iter().map(|x| x * x).sum::<f64>().sqrt();
        r.iter_mut().for_each(|x| *x /= norm);
        rows.push(r);
    }
    Matrix::from_rows(&rows).unwrap()
}

/// A random small selector problem: `(params, features, labels)`.
pub fn small_problem(seed: u64) -> (lowconf_core::SelectorParams, Matrix, Vec<usize>) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let input = rng.random_range(4..=16);
    let hidden = rng.random_range(3..=8);
    let k = rng.random_range(2..=5);
    let batch = rng.random_range(3..=8);
    let mut params = lowconf_core::init_selector(input, hidden, k, seed);
    // non-zero biases so every parameter block is exercised
    for p in params.as_mut_slice().iter_mut() {
        if *p == 0.0 {
            *p = rng.random_range(-0.5..0.5);
        }
    }
    let rows: Vec<Vec<f64>> = (0..batch)
        .map(|_| (0..input).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let labels = (0..batch).map(|_| rng.random_range(0..k)).collect();
    (params, Matrix::from_rows(&rows).unwrap(), labels)
}

/// Central-difference gradient of the mean loss, one parameter at a time.
pub fn finite_difference_grad(
    params: &lowconf_core::SelectorParams,
    x: &Matrix,
    labels: &[usize],
    step: f64,
) -> Vec<f64> {
    let mut p = params.clone();
    (0..p.len())
        .map(|i| {
            let orig = p.as_slice()[i];
            p.as_mut_slice()[i] = orig + step;
            let up = lowconf_core::selector::loss(&p, x, labels).unwrap();
            p.as_mut_slice()[i] = orig - step;
            let down = lowconf_core::selector::loss(&p, x, labels).unwrap();
            p.as_mut_slice()[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}
