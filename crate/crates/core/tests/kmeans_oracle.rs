use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lowconf_core::kmeans::{inertia_of, kmeanspp_indices};
use lowconf_core::matrix::squared_distance;
use lowconf_core::{assign, fit_kmeans, inertia, KMeansConfig, Matrix};

fn gaussian_pair(seed: u64, n: usize) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let c = if i < n / 2 { -1.5 } else { 1.5 };
            vec![c + rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)]
        })
        .collect();
    Matrix::from_rows(&rows).unwrap()
}

fn brute_force_two_partition(data: &Matrix) -> f64 {
    let n = data.rows();
    let mut best = f64::INFINITY;
    for mask in 1u32..(1 << (n - 1)) {
        let mut total = 0.0;
        for side in 0..2 {
            let members: Vec<usize> = (0..n).filter(|&i| (mask >> i) & 1 == side).collect();
            let dim = data.cols();
            let mean: Vec<f64> = (0..dim)
                .map(|c| {
                    members.iter().map(|&i| data.get(i, c)).sum::<f64>() / members.len() as f64
                })
                .collect();
            total += members
                .iter()
                .map(|&i| squared_distance(data.row(i), &mean))
                .sum::<f64>();
        }
        best = best.min(total);
    }
    best
}

#[test]
fn planted_eight_points_reach_the_global_optimum() {
    for seed in 0..10 {
        let data = gaussian_pair(seed, 8);
        let cfg = KMeansConfig {
            n_init: 10,
            ..KMeansConfig::new(2, seed)
        };
        let model = fit_kmeans(&data, &cfg).unwrap();
        let best = brute_force_two_partition(&data);
        assert!(
            (model.inertia - best).abs() <= 1e-9,
            "{} vs {best}",
            model.inertia
        );
    }
}

#[test]
fn kmeanspp_picks_one_point_per_pair() {
    let data = Matrix::from_rows(&[
        vec![0.0, 0.0],
        vec![0.01, 0.0],
        vec![100.0, 100.0],
        vec![100.0, 100.01],
    ])
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let hits = (0..1000)
        .filter(|_| {
            let picked = kmeanspp_indices(&data, 2, &mut rng).unwrap();
            (picked[0] < 2) != (picked[1] < 2)
        })
        .count();
    assert!(hits >= 950, "{hits}/1000");
}

#[test]
fn assign_matches_linear_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let dim = rng.random_range(1..12);
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let centroids = Matrix::from_rows(&rows).unwrap();
        let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut best = (f64::INFINITY, 0);
        for (j, c) in rows.iter().enumerate() {
            let d: f64 = c.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.0 {
                best = (d, j);
            }
        }
        assert_eq!(assign(&x, &centroids).unwrap(), best.1);
    }
}

#[test]
fn fitted_model_is_internally_consistent() {
    let data = common_blobs(400, 6, 3);
    let model = fit_kmeans(&data, &KMeansConfig::new(7, 3)).unwrap();
    assert!((inertia(&data, &model).unwrap() - model.inertia).abs() <= 1e-9);
    assert!(model.assignments.iter().all(|&a| a < 7));
    assert!(model.cluster_sizes().iter().all(|&s| s > 0));
    for (j, members) in model.members().iter().enumerate() {
        for c in 0..data.cols() {
            let mean = members.iter().map(|&i| data.get(i, c)).sum::<f64>() / members.len() as f64;
            assert!((mean - model.centroids.get(j, c)).abs() < 1e-9);
        }
    }
}

fn common_blobs(n: usize, dim: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centres: Vec<Vec<f64>> = (0..5)
        .map(|_| (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect())
        .collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            centres[i % 5]
                .iter()
                .map(|c| c + rng.random_range(-0.7..0.7))
                .collect()
        })
        .collect();
    Matrix::from_rows(&rows).unwrap()
}

/// Five blobs at the corners of a large simplex, radius 0.5.
fn separated_blobs(n: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut r: Vec<f64> = (0..5).map(|_| rng.random_range(-0.5..0.5)).collect();
            r[i % 5] += 10.0;
            r
        })
        .collect();
    Matrix::from_rows(&rows).unwrap()
}

#[test]
fn fitting_is_deterministic() {
    let data = common_blobs(500, 8, 11);
    let cfg = KMeansConfig::new(6, 42);
    let a = fit_kmeans(&data, &cfg).unwrap();
    let b = fit_kmeans(&data, &cfg).unwrap();
    assert_eq!(a.assignments, b.assignments);
    assert_eq!(a.inertia.to_bits(), b.inertia.to_bits());
    assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
}

#[test]
fn permuting_rows_permutes_assignments() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for trial in 0..20 {
        // well-separated blobs so the optimum is unique and every restart finds it
        let data = separated_blobs(60, trial);
        let cfg = KMeansConfig {
            n_init: 10,
            ..KMeansConfig::new(5, trial)
        };
        let base = fit_kmeans(&data, &cfg).unwrap();
        let mut perm: Vec<usize> = (0..data.rows()).collect();
        perm.shuffle(&mut rng);
        let permuted = data.select_rows(&perm);
        let other = fit_kmeans(&permuted, &cfg).unwrap();

        let mut relabel: HashMap<usize, usize> = HashMap::new();
        for (pos, &orig) in perm.iter().enumerate() {
            let mapped = *relabel
                .entry(other.assignments[pos])
                .or_insert(base.assignments[orig]);
            assert_eq!(mapped, base.assignments[orig], "trial {trial}");
        }
        let mut targets: Vec<usize> = relabel.values().copied().collect();
        targets.sort_unstable();
        targets.dedup();
        assert_eq!(targets.len(), relabel.len(), "relabeling is not one-to-one");
        let total = inertia_of(&permuted, &other.centroids, &other.assignments).unwrap();
        assert!((total - base.inertia).abs() <= 1e-9 * base.inertia.max(1.0));
    }
}

#[test]
fn inertia_never_rises_across_iterations() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for seed in 0..30 {
        let n = rng.random_range(10..200);
        let k = rng.random_range(1..=n.min(12));
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let data = Matrix::from_rows(&rows).unwrap();
        let model = fit_kmeans(&data, &KMeansConfig::new(k, seed)).unwrap();
        for w in model.inertia_trace.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-9));
        }
    }
}
