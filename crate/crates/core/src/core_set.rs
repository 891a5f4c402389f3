//! Cluster-balanced core set with cluster-index pseudo-labels.
//!
//! Each cluster admits its `ceil(q·m)` members nearest to the centroid
//! (nearest-rank percentile of the centroid distances). Distance ties at the
//! cut are resolved by cache index.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kmeans::ClusterModel;
use crate::matrix::{ceil_fraction, squared_distance, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoreSet {
    /// Admitted cache indices, ascending.
    pub indices: Vec<usize>,
    /// Cluster index of each admitted sample.
    pub labels: Vec<usize>,
    /// Per-cluster admission radius.
    pub radii: Vec<f64>,
    pub q: f64,
    pub k: usize,
}

impl CoreSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn admitted_per_cluster(&self) -> Vec<usize> {
        let mut c = vec![0; self.k];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }

    pub fn audit(&self, model: &ClusterModel) -> Vec<ClusterAudit> {
        let sizes = model.cluster_sizes();
        let admitted = self.admitted_per_cluster();
        (0..self.k)
            .map(|j| ClusterAudit {
                cluster: j,
                size: sizes[j],
                gamma: self.radii[j],
                admitted: admitted[j],
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAudit {
    pub cluster: usize,
    pub size: usize,
    pub gamma: f64,
    pub admitted: usize,
}

fn check_q(q: f64) -> Result<()> {
    if q > 0.0 && q <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "core fraction q must be in (0, 1], got {q}"
        )))
    }
}

/// Members of each cluster sorted by (distance to centroid, cache index).
fn ranked_members(data: &Matrix, model: &ClusterModel) -> Result<Vec<Vec<(f64, usize)>>> {
    if data.rows() != model.assignments.len() {
        return Err(Error::DimensionMismatch {
            expected: model.assignments.len(),
            got: data.rows(),
        });
    }
    if data.cols() != model.centroids.cols() {
        return Err(Error::DimensionMismatch {
            expected: model.centroids.cols(),
            got: data.cols(),
        });
    }
    let mut per: Vec<Vec<(f64, usize)>> = vec![Vec::new(); model.k];
    for (i, &a) in model.assignments.iter().enumerate() {
        let dist = squared_distance(data.row(i), model.centroids.row(a)).sqrt();
        per[a].push((dist, i));
    }
    for (j, members) in per.iter_mut().enumerate() {
        if members.is_empty() {
            return Err(Error::EmptyCluster(j));
        }
        members.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    }
    Ok(per)
}

/// Nearest-rank `q`-th percentile of the centroid distances of each cluster.
pub fn core_radii(data: &Matrix, model: &ClusterModel, q: f64) -> Result<Vec<f64>> {
    check_q(q)?;
    Ok(ranked_members(data, model)?
        .iter()
        .map(|m| m[ceil_fraction(q, m.len()).max(1) - 1].0)
        .collect())
}

pub fn build_core_set(data: &Matrix, model: &ClusterModel, q: f64) -> Result<CoreSet> {
    check_q(q)?;
    let ranked = ranked_members(data, model)?;
    let mut admitted: Vec<(usize, usize)> = Vec::new();
    let mut radii = Vec::with_capacity(model.k);
    for (j, members) in ranked.iter().enumerate() {
        let count = ceil_fraction(q, members.len()).max(1);
        radii.push(members[count - 1].0);
        admitted.extend(members[..count].iter().map(|&(_, i)| (i, j)));
    }
    admitted.sort_unstable();
    Ok(CoreSet {
        indices: admitted.iter().map(|&(i, _)| i).collect(),
        labels: admitted.iter().map(|&(_, j)| j).collect(),
        radii,
        q,
        k: model.k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// One cluster centred at the origin with members on the x axis.
    fn line_cluster(xs: &[f64]) -> (Matrix, ClusterModel) {
        let rows: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x, 0.0]).collect();
        let data = Matrix::from_rows(&rows).unwrap();
        let model = ClusterModel {
            k: 1,
            centroids: Matrix::from_rows(&[[0.0, 0.0]]).unwrap(),
            assignments: vec![0; xs.len()],
            inertia: 0.0,
            iterations_run: 0,
            seed: 0,
            inertia_trace: vec![],
        };
        (data, model)
    }

    #[test]
    fn median_of_four_is_second_order_statistic() {
        let (data, model) = line_cluster(&[3.0, 1.0, 4.0, 2.0]);
        assert_eq!(core_radii(&data, &model, 0.5).unwrap(), vec![2.0]);
        let core = build_core_set(&data, &model, 0.5).unwrap();
        assert_eq!(core.indices, vec![1, 3]);
    }

    #[test]
    fn singleton_at_centroid() {
        let (data, model) = line_cluster(&[0.0]);
        for q in [0.01, 0.5, 1.0] {
            assert_eq!(core_radii(&data, &model, q).unwrap(), vec![0.0]);
            assert_eq!(build_core_set(&data, &model, q).unwrap().indices, vec![0]);
        }
    }

    #[test]
    fn full_fraction_takes_everything() {
        let (data, model) = line_cluster(&[3.0, 1.0, 4.0, 2.0]);
        assert_eq!(core_radii(&data, &model, 1.0).unwrap(), vec![4.0]);
        let core = build_core_set(&data, &model, 1.0).unwrap();
        assert_eq!(core.indices, vec![0, 1, 2, 3]);
        assert_eq!(core.labels, vec![0; 4]);
    }

    #[test]
    fn ties_at_cut_go_to_lower_index() {
        let (data, model) = line_cluster(&[1.0, 2.0, -2.0, 2.0]);
        let core = build_core_set(&data, &model, 0.5).unwrap();
        assert_eq!(core.indices, vec![0, 1]);
    }

    #[test]
    fn rejects_bad_q() {
        let (data, model) = line_cluster(&[1.0]);
        for q in [0.0, -0.1, 1.5, f64::NAN] {
            assert!(build_core_set(&data, &model, q).is_err());
        }
    }

    #[test]
    fn empty_cluster_is_reported() {
        let (data, mut model) = line_cluster(&[1.0, 2.0]);
        model.k = 2;
        model.centroids = Matrix::from_rows(&[[0.0, 0.0], [5.0, 0.0]]).unwrap();
        assert!(matches!(
            build_core_set(&data, &model, 0.5),
            Err(Error::EmptyCluster(1))
        ));
    }
}
