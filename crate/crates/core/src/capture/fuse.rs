use std::cmp::Ordering;

use nalgebra::Vector3;

use super::MarkerObservation;
use crate::corruption::MarkerFrame;
use crate::error::{param, Result};

pub const CLUSTER_RADIUS: f64 = 0.01;
const MAX_ROUNDS: usize = 100;

fn lex(a: &Vector3<f64>, b: &Vector3<f64>) -> Ordering {
    a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)).then(a.z.total_cmp(&b.z))
}

fn nearest_within(p: &Vector3<f64>, centroids: &[Vector3<f64>], radius: f64) -> Option<usize> {
    centroids
        .iter()
        .enumerate()
        .map(|(i, c)| (i, (c - p).norm()))
        .filter(|&(_, d)| d <= radius)
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
}

/// Relabels clusters by first appearance and returns their centroids.
fn canonical(points: &[Vector3<f64>], assign: &mut [usize]) -> Vec<Vector3<f64>> {
    let mut relabel = vec![usize::MAX; assign.len()];
    let mut sums: Vec<(Vector3<f64>, usize)> = Vec::new();
    for (p, a) in points.iter().zip(assign.iter_mut()) {
        if relabel[*a] == usize::MAX {
            relabel[*a] = sums.len();
            sums.push((Vector3::zeros(), 0));
        }
        *a = relabel[*a];
        sums[*a].0 += p;
        sums[*a].1 += 1;
    }
    sums.into_iter().map(|(s, n)| s / n as f64).collect()
}

/// Greedy radius clustering of world-frame observations into one unlabeled
/// point per cluster. Points are sorted first, so the result does not depend
/// on input order. After a greedy pass, clusters whose centroids come within
/// `radius` merge and points move to their nearest centroid, until the
/// partition stops changing.
pub fn fuse_and_cluster(observations: &[MarkerObservation], radius: f64, frame_id: u64) -> Result<MarkerFrame> {
    if !(radius > 0.0 && radius.is_finite()) {
        return param("cluster radius must be positive");
    }
    let mut points: Vec<Vector3<f64>> = observations.iter().map(|o| o.position).collect();
    if points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
        return param("observation positions must be finite");
    }
    points.sort_by(lex);

    let mut centroids: Vec<Vector3<f64>> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    let mut assign = Vec::with_capacity(points.len());
    for p in &points {
        match nearest_within(p, &centroids, radius) {
            Some(i) => {
                counts[i] += 1;
                let delta = (p - centroids[i]) / counts[i] as f64;
                centroids[i] += delta;
                assign.push(i);
            }
            None => {
                assign.push(centroids.len());
                centroids.push(*p);
                counts.push(1);
            }
        }
    }
    let mut centroids = canonical(&points, &mut assign);

    for _ in 0..MAX_ROUNDS {
        // Merge clusters whose centroids are within the radius.
        let mut target: Vec<usize> = (0..centroids.len()).collect();
        for i in 0..centroids.len() {
            if target[i] != i {
                continue;
            }
            for j in i + 1..centroids.len() {
                if target[j] == j && (centroids[i] - centroids[j]).norm() <= radius {
                    target[j] = i;
                }
            }
        }
        let merged: Vec<usize> = assign.iter().map(|&a| target[a]).collect();
        let mut next = merged.clone();
        let merged_centroids = canonical(&points, &mut next);
        // Reassign each point to its nearest centroid, or a fresh cluster.
        let mut fresh = merged_centroids.len();
        for (p, a) in points.iter().zip(next.iter_mut()) {
            *a = nearest_within(p, &merged_centroids, radius).unwrap_or_else(|| {
                fresh += 1;
                fresh - 1
            });
        }
        let updated = canonical(&points, &mut next);
        if next == assign {
            centroids = updated;
            break;
        }
        assign = next;
        centroids = updated;
    }
    centroids.sort_by(lex);
    let n = centroids.len();
    MarkerFrame::new(frame_id, centroids, vec![None; n])
}
