//! Field-to-skeleton clustering.
//!
//! 1. Votes below [`ClusterParams::min_confidence`] are discarded.
//! 2. Up to `iterations` mean-shift passes move every point toward the
//!    confidence- and Gaussian-weighted mean of its neighbors within the
//!    bandwidth `h`. A pass whose largest displacement is at most
//!    `convergence_tol` stops the loop and is not applied.
//! 3. Shifted points closer than `merge_radius` are linked into clusters
//!    (connected components).
//! 4. Each cluster's joint is the confidence-weighted mean of its original
//!    joint votes, and its parent estimate the weighted mean of its parent
//!    votes. Clusters with fewer than `min_cluster_size` members are dropped.
//! 5. Every joint is linked to the joint nearest its parent estimate. A joint
//!    whose estimate is nearest to itself is a root.

use std::collections::HashMap;

use rayon::prelude::*;

use super::Votes;
use crate::error::{Error, Result};
use crate::rig::{Skeleton, Vec3};

/// Regularizer in the mean-shift denominator.
const WEIGHT_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterParams {
    /// Kernel bandwidth and neighbor radius, world units.
    pub bandwidth: f64,
    pub iterations: usize,
    pub convergence_tol: f64,
    pub merge_radius: f64,
    pub min_cluster_size: usize,
    /// Votes with joint confidence below this are discarded up front.
    pub min_confidence: f64,
    /// Carried through for callers that configure a vote threshold; the
    /// clustering itself ignores it.
    pub threshold: f64,
}

impl ClusterParams {
    /// Defaults derived from the bandwidth: 10 passes, tolerance `h/10`,
    /// merge radius `h/2`, clusters of at least 3 votes.
    pub fn new(bandwidth: f64) -> Self {
        Self {
            bandwidth,
            iterations: 10,
            convergence_tol: bandwidth / 10.0,
            merge_radius: bandwidth / 2.0,
            min_cluster_size: 3,
            min_confidence: 0.05,
            threshold: 0.0,
        }
    }

    /// Bandwidth of two voxel edges at the given grid resolution.
    pub fn for_resolution(resolution: u32) -> Self {
        Self::new(2.0 / resolution as f64)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.bandwidth > 0.0
            && self.bandwidth.is_finite()
            && self.iterations >= 1
            && self.merge_radius > 0.0
            && self.convergence_tol >= 0.0
            && self.min_cluster_size >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::precondition(format!("invalid cluster parameters: {self:?}")))
        }
    }
}

/// Everything the clustering computed, for inspection and testing.
#[derive(Debug, Clone)]
pub struct Clustering {
    /// Indices into the input votes that survived the confidence filter.
    pub kept_votes: Vec<usize>,
    /// Mean-shifted positions of the kept votes.
    pub shifted: Vec<Vec3>,
    /// Number of mean-shift passes computed (including the one that
    /// triggered the early stop).
    pub passes: usize,
    pub converged: bool,
    /// Cluster label for each kept vote.
    pub labels: Vec<usize>,
    /// Member count for each label.
    pub sizes: Vec<usize>,
    /// For each output joint, the label it came from.
    pub joint_labels: Vec<usize>,
    /// Parent position estimate per output joint.
    pub parent_estimates: Vec<Vec3>,
    pub skeleton: Skeleton,
}

/// Buckets points into cubic cells of side `cell` for radius queries.
struct SpatialHash {
    cell: f64,
    buckets: HashMap<[i64; 3], Vec<usize>>,
}

impl SpatialHash {
    fn new(points: &[Vec3], cell: f64) -> Self {
        let mut buckets: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            buckets.entry(Self::key(p, cell)).or_default().push(i);
        }
        Self { cell, buckets }
    }

    fn key(p: &Vec3, cell: f64) -> [i64; 3] {
        [0, 1, 2].map(|a| (p[a] / cell).floor() as i64)
    }

    /// Indices of points within `radius <= cell` of `p`, in ascending order.
    fn within(&self, points: &[Vec3], p: &Vec3, radius: f64) -> Vec<usize> {
        let [x, y, z] = Self::key(p, self.cell);
        let r2 = radius * radius;
        let mut out = Vec::new();
        for i in x - 1..=x + 1 {
            for j in y - 1..=y + 1 {
                for k in z - 1..=z + 1 {
                    if let Some(bucket) = self.buckets.get(&[i, j, k]) {
                        out.extend(
                            bucket
                                .iter()
                                .copied()
                                .filter(|&q| (points[q] - p).norm_squared() <= r2),
                        );
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

/// One mean-shift pass: the weighted neighborhood mean of every point.
pub(crate) fn mean_shift_pass(points: &[Vec3], weights: &[f64], bandwidth: f64) -> Vec<Vec3> {
    let hash = SpatialHash::new(points, bandwidth);
    let inv = 1.0 / (2.0 * bandwidth * bandwidth);
    points
        .par_iter()
        .map(|p| {
            let mut num = Vec3::zeros();
            let mut den = 0.0;
            for q in hash.within(points, p, bandwidth) {
                let w = weights[q] * (-(points[q] - p).norm_squared() * inv).exp();
                num += points[q] * w;
                den += w;
            }
            num / (den + WEIGHT_EPSILON)
        })
        .collect()
}

/// Runs the mean-shift loop. Returns the final points, the number of passes
/// computed and whether the loop stopped on the tolerance.
pub(crate) fn mean_shift(
    points: &[Vec3],
    weights: &[f64],
    params: &ClusterParams,
) -> (Vec<Vec3>, usize, bool) {
    let mut current = points.to_vec();
    for pass in 1..=params.iterations {
        let next = mean_shift_pass(&current, weights, params.bandwidth);
        let max_shift = current
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        if max_shift <= params.convergence_tol {
            return (current, pass, true);
        }
        current = next;
    }
    (current, params.iterations, false)
}

/// Connected components of the graph linking points at most `radius` apart.
/// Labels are numbered in order of each component's lowest point index.
pub(crate) fn merge_labels(points: &[Vec3], radius: f64) -> Vec<usize> {
    let mut parent: Vec<usize> = (0..points.len()).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let hash = SpatialHash::new(points, radius);
    for (i, p) in points.iter().enumerate() {
        for j in hash.within(points, p, radius) {
            let (a, b) = (find(&mut parent, i), find(&mut parent, j));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut label_of_root = HashMap::new();
    (0..points.len())
        .map(|i| {
            let root = find(&mut parent, i);
            let next = label_of_root.len();
            *label_of_root.entry(root).or_insert(next)
        })
        .collect()
}

fn weighted_mean(points: impl Iterator<Item = (Vec3, f64)>) -> Option<Vec3> {
    let (sum, total) = points.fold((Vec3::zeros(), 0.0), |(s, t), (p, w)| (s + p * w, t + w));
    (total > 0.0).then(|| sum / total)
}

fn lexicographic(a: &Vec3, b: &Vec3) -> std::cmp::Ordering {
    a.x.total_cmp(&b.x)
        .then(a.y.total_cmp(&b.y))
        .then(a.z.total_cmp(&b.z))
}

fn nearest_joint(joints: &[Vec3], target: &Vec3, allowed: impl Fn(usize) -> bool) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (u, j) in joints.iter().enumerate() {
        if !allowed(u) {
            continue;
        }
        let d = (j - target).norm_squared();
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((u, d));
        }
    }
    best.map(|(u, _)| u)
}

/// Links each joint to the joint nearest its parent estimate, then breaks any
/// cycles. In a cycle, the member with the largest confidence mass is
/// re-linked to the nearest joint outside the cycle and its descendants, or
/// becomes a root if it is nearest to itself.
fn link_parents(joints: &[Vec3], estimates: &[Vec3], mass: &[f64]) -> Vec<Option<usize>> {
    let m = joints.len();
    let mut parents: Vec<Option<usize>> = (0..m)
        .map(|k| nearest_joint(joints, &estimates[k], |_| true).filter(|&u| u != k))
        .collect();
    while let Some(cycle) = find_cycle(&parents) {
        let head = *cycle
            .iter()
            .max_by(|&&a, &&b| mass[a].total_cmp(&mass[b]).then(b.cmp(&a)))
            .expect("cycles are nonempty");
        let mut reaches_cycle = vec![false; m];
        for &c in &cycle {
            reaches_cycle[c] = true;
        }
        for start in 0..m {
            let mut cur = Some(start);
            let mut steps = 0;
            while let Some(c) = cur {
                if reaches_cycle[c] {
                    reaches_cycle[start] = true;
                    break;
                }
                steps += 1;
                if steps > m {
                    break;
                }
                cur = parents[c];
            }
        }
        parents[head] = nearest_joint(joints, &estimates[head], |u| u == head || !reaches_cycle[u])
            .filter(|&u| u != head);
    }
    parents
}

fn find_cycle(parents: &[Option<usize>]) -> Option<Vec<usize>> {
    let m = parents.len();
    let mut state = vec![0u8; m];
    for start in 0..m {
        let mut path = Vec::new();
        let mut cur = Some(start);
        while let Some(c) = cur {
            match state[c] {
                2 => break,
                1 => {
                    let at = path.iter().position(|&p| p == c).expect("on current path");
                    return Some(path[at..].to_vec());
                }
                _ => {
                    state[c] = 1;
                    path.push(c);
                    cur = parents[c];
                }
            }
        }
        for p in path {
            state[p] = 2;
        }
    }
    None
}

/// Runs the full clustering and returns all intermediate results.
pub fn cluster_votes(votes: &Votes, params: &ClusterParams) -> Result<Clustering> {
    params.validate()?;
    let n = votes.len();
    if n == 0
        || votes.parents.len() != n
        || votes.conf_joint.len() != n
        || votes.conf_parent.len() != n
    {
        return Err(Error::precondition(
            "votes must be nonempty with one parent vote and confidence pair per joint vote",
        ));
    }
    let kept_votes: Vec<usize> = (0..n)
        .filter(|&i| votes.conf_joint[i] >= params.min_confidence)
        .collect();
    let points: Vec<Vec3> = kept_votes.iter().map(|&i| votes.joints[i]).collect();
    let weights: Vec<f64> = kept_votes.iter().map(|&i| votes.conf_joint[i]).collect();
    let (shifted, passes, converged) = mean_shift(&points, &weights, params);
    let labels = merge_labels(&shifted, params.merge_radius);
    let label_count = labels.iter().map(|&l| l + 1).max().unwrap_or(0);

    let mut members = vec![Vec::new(); label_count];
    for (k, &l) in labels.iter().enumerate() {
        members[l].push(kept_votes[k]);
    }
    let sizes: Vec<usize> = members.iter().map(Vec::len).collect();

    // (label, joint centroid, parent estimate, confidence mass)
    let mut clusters: Vec<(usize, Vec3, Vec3, f64)> = members
        .iter()
        .enumerate()
        .filter(|(_, m)| m.len() >= params.min_cluster_size)
        .filter_map(|(l, m)| {
            let joint = weighted_mean(m.iter().map(|&i| (votes.joints[i], votes.conf_joint[i])))?;
            let parent = weighted_mean(m.iter().map(|&i| (votes.parents[i], votes.conf_parent[i])))
                .unwrap_or(joint);
            let mass = m.iter().map(|&i| votes.conf_joint[i]).sum();
            Some((l, joint, parent, mass))
        })
        .collect();
    if clusters.is_empty() {
        return Err(Error::Numeric(
            "every cluster was filtered out; the decoded skeleton would be empty".into(),
        ));
    }
    clusters.sort_by(|a, b| lexicographic(&a.1, &b.1).then(a.0.cmp(&b.0)));

    let joints: Vec<Vec3> = clusters.iter().map(|c| c.1).collect();
    let parent_estimates: Vec<Vec3> = clusters.iter().map(|c| c.2).collect();
    let mass: Vec<f64> = clusters.iter().map(|c| c.3).collect();
    let parents = link_parents(&joints, &parent_estimates, &mass);
    let skeleton = Skeleton::new(joints, parents)?;
    Ok(Clustering {
        kept_votes,
        shifted,
        passes,
        converged,
        labels,
        sizes,
        joint_labels: clusters.iter().map(|c| c.0).collect(),
        parent_estimates,
        skeleton,
    })
}

/// Clusters joint and parent votes into a skeleton.
pub fn cluster_skeleton(votes: &Votes, params: &ClusterParams) -> Result<Skeleton> {
    cluster_votes(votes, params).map(|c| c.skeleton)
}
