//! K-means codebook over descriptors and Euclidean nearest-centroid
//! assignment.
//!
//! Clustering is Lloyd's algorithm with k-means++ initialization; everything
//! is a pure function of (descriptors, k, seed, max_iters, tol), so repeated
//! runs are bit-identical. Assignment is a brute-force scan, which at K = 400
//! is both the oracle and the implementation.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::feature::{Descriptor, DESCRIPTOR_LEN};
use crate::scalar::Real;

/// K centroids in descriptor space plus the clustering provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook<F> {
    pub k: usize,
    pub dim: usize,
    /// `k` centroids of `dim` components each.
    pub centroids: Vec<Vec<F>>,
    /// RNG seed the clustering ran with.
    pub seed: u64,
    /// Final sum of squared point-to-centroid distances.
    pub inertia: F,
}

/// Nearest centroid for one descriptor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Assignment<F> {
    pub cluster: usize,
    pub distance: F,
}

/// Euclidean distance between equal-length vectors.
pub fn euclidean<F: Real>(a: &[F], b: &[F]) -> F {
    squared_distance(a, b).sqrt()
}

#[inline]
pub(crate) fn squared_distance<F: Real>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = F::zero();
    for (&x, &y) in a.iter().zip(b) {
        let d = x - y;
        acc = acc + d * d;
    }
    acc
}

/// Index of the nearest centroid plus its squared distance; ties go to the
/// lowest index because only a strictly smaller distance replaces the best.
#[inline]
fn nearest<F: Real>(point: &[F], centroids: &[Vec<F>]) -> (usize, F) {
    let mut best = 0;
    let mut best_d2 = squared_distance(point, &centroids[0]);
    for (j, c) in centroids.iter().enumerate().skip(1) {
        let d2 = squared_distance(point, c);
        if d2 < best_d2 {
            best = j;
            best_d2 = d2;
        }
    }
    (best, best_d2)
}

/// Clusters descriptors into `k` centroids. See [`kmeans_with_trace`] for the
/// per-iteration inertia history.
pub fn kmeans<F: Real>(
    descriptors: &[Descriptor<F>],
    k: usize,
    seed: u64,
    max_iters: usize,
    tol: F,
) -> Result<Codebook<F>> {
    kmeans_with_trace(descriptors, k, seed, max_iters, tol).map(|(cb, _)| cb)
}

/// Lloyd's algorithm with seeded k-means++ initialization.
///
/// Iterates assign/update until the largest centroid shift drops below `tol`
/// or `max_iters` is reached. A cluster left empty by an assignment step is
/// re-seeded to the point farthest from its current centroid. The returned
/// trace holds the inertia at every assignment step (ending with the final
/// centroids) and is non-increasing.
pub fn kmeans_with_trace<F: Real>(
    descriptors: &[Descriptor<F>],
    k: usize,
    seed: u64,
    max_iters: usize,
    tol: F,
) -> Result<(Codebook<F>, Vec<F>)> {
    if descriptors.is_empty() {
        return Err(Error::EmptyInput("kmeans needs at least one descriptor".into()));
    }
    if k == 0 {
        return Err(Error::InvalidParam("k must be >= 1".into()));
    }
    if tol < F::zero() {
        return Err(Error::InvalidParam("tol must be >= 0".into()));
    }
    if max_iters == 0 {
        return Err(Error::InvalidParam("max_iters must be >= 1".into()));
    }
    let distinct = distinct_count(descriptors);
    if k > distinct {
        return Err(Error::TooFewPoints { k, distinct });
    }

    let points: Vec<&[F]> = descriptors.iter().map(|d| d.values()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(&points, k, &mut rng);

    let n = points.len();
    let mut trace = Vec::new();
    let mut assignments = vec![(0usize, F::zero()); n];
    for _ in 0..max_iters {
        let mut inertia = F::zero();
        for (i, p) in points.iter().enumerate() {
            let (j, d2) = nearest(p, &centroids);
            assignments[i] = (j, d2);
            inertia = inertia + d2;
        }
        trace.push(inertia);

        let new_centroids = update_centroids(&points, &assignments, &centroids, k);
        let mut max_shift = F::zero();
        for (old, new) in centroids.iter().zip(&new_centroids) {
            max_shift = max_shift.max(euclidean(old, new));
        }
        centroids = new_centroids;
        if max_shift < tol {
            break;
        }
    }

    // Inertia of the final centroids.
    let mut inertia = F::zero();
    for p in &points {
        inertia = inertia + nearest(p, &centroids).1;
    }
    trace.push(inertia);

    Ok((
        Codebook {
            k,
            dim: DESCRIPTOR_LEN,
            centroids,
            seed,
            inertia,
        },
        trace,
    ))
}

/// Mean of each cluster's points, summed in point order so the result does
/// not depend on scheduling. Clusters emptied by the assignment are re-seeded
/// to the point farthest from its current centroid (each stolen point is used
/// once and leaves its old cluster's mean).
fn update_centroids<F: Real>(
    points: &[&[F]],
    assignments: &[(usize, F)],
    centroids: &[Vec<F>],
    k: usize,
) -> Vec<Vec<F>> {
    let dim = points[0].len();
    let mut counts = vec![0usize; k];
    for &(j, _) in assignments {
        counts[j] += 1;
    }

    let mut stolen = vec![false; points.len()];
    let mut reseeded: Vec<Option<usize>> = vec![None; k];
    for j in 0..k {
        if counts[j] > 0 {
            continue;
        }
        let mut far_idx = None;
        let mut far_d2 = F::neg_infinity();
        for (i, &(_, d2)) in assignments.iter().enumerate() {
            if !stolen[i] && d2 > far_d2 {
                far_d2 = d2;
                far_idx = Some(i);
            }
        }
        if let Some(i) = far_idx {
            stolen[i] = true;
            reseeded[j] = Some(i);
        }
    }

    let mut sums = vec![vec![F::zero(); dim]; k];
    let mut kept = vec![0usize; k];
    for (i, &(j, _)) in assignments.iter().enumerate() {
        if stolen[i] {
            continue;
        }
        kept[j] += 1;
        let sum = &mut sums[j];
        for (s, &v) in sum.iter_mut().zip(points[i]) {
            *s = *s + v;
        }
    }

    (0..k)
        .map(|j| {
            if let Some(i) = reseeded[j] {
                points[i].to_vec()
            } else if kept[j] > 0 {
                let denom = F::from_usize(kept[j]).unwrap();
                sums[j].iter().map(|&s| s / denom).collect()
            } else {
                // Lost its only points to re-seeding; keep the old centroid.
                centroids[j].clone()
            }
        })
        .collect()
}

/// k-means++: first centroid uniform, each next one sampled with probability
/// proportional to the squared distance to the nearest chosen centroid.
/// Sampling arithmetic runs in f64 so the RNG stream does not depend on `F`.
fn plus_plus_init<F: Real>(points: &[&[F]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<F>> {
    let n = points.len();
    let first = rng.random_range(0..n as u64) as usize;
    let mut centroids: Vec<Vec<F>> = vec![points[first].to_vec()];
    let mut best_d2: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, &centroids[0]).to_f64().unwrap())
        .collect();

    while centroids.len() < k {
        let total: f64 = best_d2.iter().sum();
        let chosen = if total > 0.0 {
            let r = rng.random::<f64>() * total;
            let mut cum = 0.0;
            let mut pick = None;
            for (i, &d2) in best_d2.iter().enumerate() {
                cum += d2;
                if r < cum {
                    pick = Some(i);
                    break;
                }
            }
            // r landed on the accumulated rounding tail; take the last point
            // that still has positive weight.
            pick.unwrap_or_else(|| {
                best_d2
                    .iter()
                    .rposition(|&d2| d2 > 0.0)
                    .expect("total > 0 implies a positive weight")
            })
        } else {
            // All remaining mass is zero, which cannot happen while
            // k <= distinct points; guarded for robustness.
            best_d2.iter().position(|&d2| d2 >= 0.0).unwrap()
        };
        let new = points[chosen].to_vec();
        for (i, p) in points.iter().enumerate() {
            let d2 = squared_distance(p, &new).to_f64().unwrap();
            if d2 < best_d2[i] {
                best_d2[i] = d2;
            }
        }
        centroids.push(new);
    }
    centroids
}

/// Counts distinct descriptors by exact component equality.
fn distinct_count<F: Real>(descriptors: &[Descriptor<F>]) -> usize {
    let mut set = HashSet::new();
    for d in descriptors {
        let bits: Vec<u64> = d
            .values()
            .iter()
            .map(|v| v.to_f64().unwrap().to_bits())
            .collect();
        set.insert(bits);
    }
    set.len()
}

/// Nearest centroid by exhaustive Euclidean scan; exact ties break to the
/// lowest index.
pub fn assign<F: Real>(d: &Descriptor<F>, cb: &Codebook<F>) -> Result<Assignment<F>> {
    if cb.dim != DESCRIPTOR_LEN {
        return Err(Error::DimensionMismatch(format!(
            "codebook dim {} != descriptor dim {DESCRIPTOR_LEN}",
            cb.dim
        )));
    }
    if cb.centroids.is_empty() {
        return Err(Error::EmptyInput("codebook has no centroids".into()));
    }
    let (cluster, d2) = nearest(d.values(), &cb.centroids);
    Ok(Assignment {
        cluster,
        distance: d2.sqrt(),
    })
}
