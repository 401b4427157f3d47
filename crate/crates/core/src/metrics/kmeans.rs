use rand::Rng;

use super::{MetricError, KMEANS_ITERATIONS};
use crate::geometry::Vec3;
use crate::seed::rng_for;

const INIT_CANDIDATES: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centers: [Vec3; 2],
    pub labels: Vec<u8>,
    pub iterations: usize,
}

/// Lloyd's algorithm with k = 2. Initial centers are the mutually farthest
/// pair among 64 seeded random candidates.
pub fn kmeans2(points: &[Vec3], seed: u64) -> Result<KMeansResult, MetricError> {
    let n = points.len();
    if n < 2 || points.iter().all(|p| *p == points[0]) {
        return Err(MetricError::DegenerateInput);
    }
    let mut rng = rng_for(seed, "kmeans2");
    let cand: Vec<usize> = (0..INIT_CANDIDATES).map(|_| rng.random_range(0..n)).collect();
    let mut best = (0.0, cand[0], cand[0]);
    for (i, &a) in cand.iter().enumerate() {
        for &b in &cand[i + 1..] {
            let d = (points[a] - points[b]).norm_squared();
            if d > best.0 {
                best = (d, a, b);
            }
        }
    }
    if best.0 == 0.0 {
        // All candidates coincide; pair the first with the farthest point overall.
        let a = cand[0];
        let b = (0..n)
            .max_by(|&i, &j| {
                (points[i] - points[a])
                    .norm_squared()
                    .partial_cmp(&(points[j] - points[a]).norm_squared())
                    .unwrap()
            })
            .unwrap();
        best = (0.0, a, b);
    }
    let mut centers = [points[best.1], points[best.2]];
    let mut labels = vec![0u8; n];
    let mut iterations = 0;
    while iterations < KMEANS_ITERATIONS {
        iterations += 1;
        for (l, p) in labels.iter_mut().zip(points) {
            *l = u8::from((p - centers[1]).norm_squared() < (p - centers[0]).norm_squared());
        }
        let mut sum = [Vec3::zeros(); 2];
        let mut cnt = [0usize; 2];
        for (l, p) in labels.iter().zip(points) {
            sum[*l as usize] += p;
            cnt[*l as usize] += 1;
        }
        let mut shift: f64 = 0.0;
        for k in 0..2 {
            if cnt[k] > 0 {
                let c = sum[k] / cnt[k] as f64;
                shift = shift.max((c - centers[k]).norm());
                centers[k] = c;
            }
        }
        if shift < 1e-9 {
            break;
        }
    }
    Ok(KMeansResult {
        centers,
        labels,
        iterations,
    })
}

/// Within-cluster sum of squared distances to each cluster's centroid.
pub fn wcss(points: &[Vec3], labels: &[u8]) -> f64 {
    let mut total = 0.0;
    for k in 0..2u8 {
        let members: Vec<&Vec3> = points.iter().zip(labels).filter(|(_, l)| **l == k).map(|(p, _)| p).collect();
        if members.is_empty() {
            continue;
        }
        let c = members.iter().fold(Vec3::zeros(), |a, p| a + *p) / members.len() as f64;
        total += members.iter().map(|p| (*p - c).norm_squared()).sum::<f64>();
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob(cx: f64) -> Vec<Vec3> {
        let mut v = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                for k in 0..5 {
                    v.push(Vec3::new(cx + (i as f64 - 4.5) * 0.005, (j as f64 - 4.5) * 0.005, k as f64 * 0.005));
                }
            }
        }
        v
    }

    #[test]
    fn separates_two_blobs() {
        let mut pts = blob(-0.1);
        pts.extend(blob(0.1));
        let r = kmeans2(&pts, 9).unwrap();
        let mut xs = [r.centers[0].x, r.centers[1].x];
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((xs[0] + 0.1).abs() < 1e-3 && (xs[1] - 0.1).abs() < 1e-3);
    }

    #[test]
    fn degenerate_and_deterministic() {
        assert_eq!(kmeans2(&[Vec3::zeros(); 5], 1), Err(MetricError::DegenerateInput));
        let pts = blob(0.0);
        assert_eq!(kmeans2(&pts, 4).unwrap(), kmeans2(&pts, 4).unwrap());
    }
}
