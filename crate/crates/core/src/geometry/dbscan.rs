use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::grid::SpatialGrid;
use super::PointCloud;

/// A set of indices into the clustered cloud.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cluster {
    /// Ascending, unique.
    pub member_indices: Vec<usize>,
    pub is_noise: bool,
}

impl Cluster {
    pub fn len(&self) -> usize {
        self.member_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.member_indices.is_empty()
    }
}

/// Density-based clustering.
///
/// A point is core when at least `min_pts` points (itself included) lie within
/// `eps`, inclusive. Clusters are the connected components of core points and
/// are numbered by their lowest core index. A border point joins the cluster of
/// its lowest-indexed core neighbour. Remaining points form a single trailing
/// noise cluster, present only when non-empty.
///
/// # Panics
/// If `eps` is not positive or `min_pts` is zero.
pub fn dbscan(cloud: &PointCloud, eps: f64, min_pts: usize) -> Vec<Cluster> {
    assert!(eps > 0.0 && eps.is_finite(), "eps must be positive, got {eps}");
    assert!(min_pts >= 1, "min_pts must be at least 1");
    let pts = cloud.points();
    let n = pts.len();
    if n == 0 {
        return Vec::new();
    }

    let grid = SpatialGrid::new(pts, eps);
    let neighbors: Vec<Vec<usize>> = pts.iter().map(|p| grid.within(p, eps)).collect();
    let core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= min_pts).collect();

    const UNSET: usize = usize::MAX;
    let mut label = vec![UNSET; n];
    let mut next = 0;
    for seed in 0..n {
        if !core[seed] || label[seed] != UNSET {
            continue;
        }
        label[seed] = next;
        let mut queue = VecDeque::from([seed]);
        while let Some(i) = queue.pop_front() {
            for &j in &neighbors[i] {
                if core[j] && label[j] == UNSET {
                    label[j] = next;
                    queue.push_back(j);
                }
            }
        }
        next += 1;
    }

    for i in 0..n {
        if !core[i] {
            // neighbour lists are ascending, so the first core hit is the lowest index
            if let Some(&c) = neighbors[i].iter().find(|&&j| core[j]) {
                label[i] = label[c];
            }
        }
    }

    let mut clusters: Vec<Cluster> = (0..next)
        .map(|_| Cluster {
            member_indices: Vec::new(),
            is_noise: false,
        })
        .collect();
    let mut noise = Vec::new();
    for (i, &l) in label.iter().enumerate() {
        if l == UNSET {
            noise.push(i);
        } else {
            clusters[l].member_indices.push(i);
        }
    }
    if !noise.is_empty() {
        clusters.push(Cluster {
            member_indices: noise,
            is_noise: true,
        });
    }
    clusters
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Point3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn blob(rng: &mut ChaCha8Rng, center: Point3<f64>, n: usize, r: f64) -> Vec<Point3<f64>> {
        (0..n)
            .map(|_| {
                center
                    + nalgebra::Vector3::new(
                        rng.random_range(-r..r),
                        rng.random_range(-r..r),
                        rng.random_range(-r..r),
                    )
            })
            .collect()
    }

    #[test]
    fn two_separated_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pts = blob(&mut rng, Point3::origin(), 50, 0.03);
        pts.extend(blob(&mut rng, Point3::new(1.0, 0.0, 0.0), 50, 0.03));
        let clusters = dbscan(&PointCloud::new(pts).unwrap(), 0.1, 5);
        assert_eq!(clusters.len(), 2);
        assert!(clusters.iter().all(|c| !c.is_noise && c.len() == 50));
        assert_eq!(clusters[0].member_indices, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn tight_group_is_one_cluster() {
        let pts = (0..8).map(|i| Point3::new(i as f64 * 0.001, 0.0, 0.0)).collect();
        let clusters = dbscan(&PointCloud::new(pts).unwrap(), 0.1, 8);
        assert_eq!(clusters.len(), 1);
        assert_eq!(clusters[0].len(), 8);
    }

    #[test]
    fn lone_point_is_noise() {
        let clusters = dbscan(&PointCloud::new(vec![Point3::origin()]).unwrap(), 0.1, 3);
        assert_eq!(
            clusters,
            vec![Cluster {
                member_indices: vec![0],
                is_noise: true
            }]
        );
        assert!(dbscan(&PointCloud::empty(), 0.1, 3).is_empty());
    }

    #[test]
    fn eps_boundary_is_inclusive() {
        let pts = vec![Point3::origin(), Point3::new(0.5, 0.0, 0.0)];
        let clusters = dbscan(&PointCloud::new(pts).unwrap(), 0.5, 2);
        assert_eq!(clusters.len(), 1);
        assert!(!clusters[0].is_noise);
    }

    #[test]
    fn border_joins_lowest_core() {
        // with min_pts 2 every point is core and the chain is connected
        let pts = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(0.9, 0.0, 0.0),
            Point3::new(1.9, 0.0, 0.0),
            Point3::new(2.9, 0.0, 0.0),
            Point3::new(3.8, 0.0, 0.0),
        ];
        let clusters = dbscan(&PointCloud::new(pts).unwrap(), 1.0, 2);
        assert_eq!(clusters.len(), 1);

        // right group first so the border point's lowest core neighbour is index 0
        let xs = [2.0, 2.05, 2.1, 2.15, 1.0, 0.0, -0.05, -0.1, -0.15];
        let pts = xs.iter().map(|&x| Point3::new(x, 0.0, 0.0)).collect();
        let clusters = dbscan(&PointCloud::new(pts).unwrap(), 1.0, 4);
        assert_eq!(clusters.len(), 2);
        assert_eq!(clusters[0].member_indices, vec![0, 1, 2, 3, 4]);
        assert_eq!(clusters[1].member_indices, vec![5, 6, 7, 8]);
    }
}
