#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec::Vec;
use core::cmp::Ordering;

use super::{FlowField, PointCloud, Vec3};
use crate::error::{Error, Result};

/// Regulariser of the inverse-distance weights `1 / (ε + d)`.
pub const IDW_EPSILON: f64 = 1e-8;

fn by_distance_then_index(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1))
}

/// Indices and squared distances of the `k` nearest references to `query`.
fn nearest(query: &Vec3, reference: &[Vec3], k: usize, scratch: &mut Vec<(f64, usize)>) {
    scratch.clear();
    scratch.extend(
        reference
            .iter()
            .enumerate()
            .map(|(j, r)| ((query - r).norm_squared(), j)),
    );
    if k < scratch.len() {
        scratch.select_nth_unstable_by(k - 1, by_distance_then_index);
        scratch.truncate(k);
    }
    scratch.sort_unstable_by(by_distance_then_index);
}

/// Exact k-nearest neighbours over raw coordinates; ties go to the smaller index.
pub fn knn_points(query: &[Vec3], reference: &[Vec3], k: usize) -> Result<Vec<Vec<usize>>> {
    if k > reference.len() {
        return Err(Error::KTooLarge {
            k,
            available: reference.len(),
        });
    }
    if k == 0 {
        return Ok(alloc::vec![Vec::new(); query.len()]);
    }
    let mut scratch = Vec::with_capacity(reference.len());
    Ok(query
        .iter()
        .map(|q| {
            nearest(q, reference, k, &mut scratch);
            scratch.iter().map(|&(_, j)| j).collect()
        })
        .collect())
}

pub fn knn(query: &PointCloud, reference: &PointCloud, k: usize) -> Result<Vec<Vec<usize>>> {
    knn_points(query.points(), reference.points(), k)
}

/// Inverse-distance interpolation of anchor displacements over `source`.
///
/// Anchors are `(source_index, displacement)`. Each point blends its `k`
/// nearest anchors (fewer if there are fewer anchors) with weights
/// `1 / (ε + dist)`; a point sitting exactly on an anchor takes that
/// anchor's displacement unchanged.
pub fn interpolate_flow(
    source: &PointCloud,
    anchors: &[(usize, Vec3)],
    k: usize,
) -> Result<FlowField> {
    if anchors.is_empty() {
        return Err(Error::EmptyAnchors);
    }
    if k == 0 {
        return Err(Error::InvalidParameter {
            name: "k",
            reason: "must be at least 1",
        });
    }
    let mut positions = Vec::with_capacity(anchors.len());
    for &(i, _) in anchors {
        if i >= source.len() {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: source.len(),
            });
        }
        positions.push(source.point(i));
    }
    let k = k.min(anchors.len());
    let mut scratch = Vec::with_capacity(anchors.len());
    let mut flow = Vec::with_capacity(source.len());
    for p in source.points() {
        nearest(p, &positions, k, &mut scratch);
        let (d0, a0) = scratch[0];
        if d0 == 0.0 {
            flow.push(anchors[a0].1);
            continue;
        }
        let mut acc = Vec3::zeros();
        let mut total = 0.0;
        for &(d2, a) in scratch.iter() {
            let w = 1.0 / (IDW_EPSILON + d2.sqrt());
            acc += anchors[a].1 * w;
            total += w;
        }
        flow.push(acc / total);
    }
    FlowField::new(flow)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
        (0..n)
            .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()))
            .collect()
    }

    fn brute_force(query: &[Vec3], reference: &[Vec3], k: usize) -> Vec<Vec<usize>> {
        query
            .iter()
            .map(|q| {
                let mut all: Vec<(f64, usize)> = reference
                    .iter()
                    .enumerate()
                    .map(|(j, r)| ((q - r).norm(), j))
                    .collect();
                all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
                all.into_iter().take(k).map(|(_, j)| j).collect()
            })
            .collect()
    }

    #[test]
    fn self_query_maps_to_self() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let pts = random_points(&mut rng, 30);
        let nn = knn_points(&pts, &pts, 1).unwrap();
        for (i, row) in nn.iter().enumerate() {
            assert_eq!(row, &[i]);
        }
    }

    #[test]
    fn full_k_is_sorted_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let q = random_points(&mut rng, 5);
        let r = random_points(&mut rng, 9);
        for (qi, row) in knn_points(&q, &r, 9).unwrap().iter().enumerate() {
            let mut sorted = row.clone();
            sorted.sort();
            assert_eq!(sorted, (0..9).collect::<Vec<_>>());
            for w in row.windows(2) {
                assert!((q[qi] - r[w[0]]).norm() <= (q[qi] - r[w[1]]).norm());
            }
        }
    }

    #[test]
    fn matches_exhaustive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let q = random_points(&mut rng, 50);
            let r = random_points(&mut rng, 50);
            assert_eq!(knn_points(&q, &r, 3).unwrap(), brute_force(&q, &r, 3));
        }
    }

    #[test]
    fn ties_prefer_smaller_index() {
        let r = [Vec3::new(1.0, 0.0, 0.0), Vec3::new(-1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)];
        let nn = knn_points(&[Vec3::zeros()], &r, 2).unwrap();
        assert_eq!(nn[0], [0, 1]);
    }

    #[test]
    fn k_too_large() {
        let r = [Vec3::zeros(); 3];
        assert_eq!(knn_points(&r, &r, 4), Err(Error::KTooLarge { k: 4, available: 3 }));
    }

    #[test]
    fn anchors_everywhere_reproduce_displacements() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let cloud = PointCloud::new(random_points(&mut rng, 25)).unwrap();
        let anchors: Vec<(usize, Vec3)> = (0..25).map(|i| (i, Vec3::new(rng.random(), rng.random(), rng.random()))).collect();
        let flow = interpolate_flow(&cloud, &anchors, 1).unwrap();
        for (i, v) in flow.vectors().iter().enumerate() {
            assert_eq!(*v, anchors[i].1);
        }
        // also exact for k > 1 because the query coincides with its anchor
        let flow = interpolate_flow(&cloud, &anchors, 3).unwrap();
        for (i, v) in flow.vectors().iter().enumerate() {
            assert_eq!(*v, anchors[i].1);
        }
    }

    #[test]
    fn constant_field_is_reproduced() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let cloud = PointCloud::new(random_points(&mut rng, 40)).unwrap();
        let v = Vec3::new(0.3, -0.2, 0.7);
        let anchors: Vec<(usize, Vec3)> = (0..40).step_by(7).map(|i| (i, v)).collect();
        let flow = interpolate_flow(&cloud, &anchors, 3).unwrap();
        for f in flow.vectors() {
            assert!((f - v).amax() < 1e-12);
        }
    }

    #[test]
    fn equidistant_query_averages() {
        let cloud = PointCloud::from_arrays(&[[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.5, 0.0]]).unwrap();
        let v1 = Vec3::new(1.0, 0.0, 0.0);
        let v2 = Vec3::new(0.0, 2.0, -1.0);
        let flow = interpolate_flow(&cloud, &[(0, v1), (1, v2)], 2).unwrap();
        assert!((flow.vectors()[2] - (v1 + v2) / 2.0).amax() < 1e-12);
    }

    #[test]
    fn interpolation_errors() {
        let cloud = PointCloud::from_arrays(&[[0.0; 3]]).unwrap();
        assert_eq!(interpolate_flow(&cloud, &[], 3), Err(Error::EmptyAnchors));
        assert!(interpolate_flow(&cloud, &[(0, Vec3::zeros())], 0).is_err());
        assert!(interpolate_flow(&cloud, &[(4, Vec3::zeros())], 1).is_err());
    }
}
