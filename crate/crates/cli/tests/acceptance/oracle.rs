//! Independent reference computations. Nothing here calls into the library
//! except for plain data types.

use nalgebra::DMatrix;
use rigfield::{Skeleton, Vec3};

/// Closest point on a triangle by projecting onto the plane and, when the
/// projection falls outside, taking the best of the three edge projections.
pub fn closest_on_triangle(q: &Vec3, tri: &[Vec3; 3]) -> Vec3 {
    let [a, b, c] = *tri;
    let n = (b - a).cross(&(c - a));
    let area2 = n.norm_squared();
    if area2 > 0.0 {
        let p = q - n * ((q - a).dot(&n) / area2);
        let u = (c - b).cross(&(p - b)).dot(&n);
        let v = (a - c).cross(&(p - c)).dot(&n);
        let w = (b - a).cross(&(p - a)).dot(&n);
        if u >= 0.0 && v >= 0.0 && w >= 0.0 {
            return p;
        }
    }
    [(a, b), (b, c), (c, a)]
        .into_iter()
        .map(|(s, e)| closest_on_segment(q, &s, &e))
        .min_by(|x, y| (x - q).norm_squared().total_cmp(&(y - q).norm_squared()))
        .expect("three edges")
}

pub fn closest_on_segment(q: &Vec3, s: &Vec3, e: &Vec3) -> Vec3 {
    let d = e - s;
    let len2 = d.norm_squared();
    if len2 == 0.0 {
        return *s;
    }
    s + d * ((q - s).dot(&d) / len2).clamp(0.0, 1.0)
}

/// Lowest-index triangle among those within `1e-12` of the minimal
/// distance, and the minimal distance.
pub fn brute_closest(q: &Vec3, tris: &[[Vec3; 3]]) -> (usize, f64) {
    let d: Vec<f64> = tris.iter().map(|t| (closest_on_triangle(q, t) - q).norm()).collect();
    let min = d.iter().copied().fold(f64::INFINITY, f64::min);
    let first = d.iter().position(|&x| x <= min + 1e-12).expect("nonempty mesh");
    (first, min)
}

/// Nearest-joint confidence evaluated directly from its definition,
/// clamped to the unit interval.
pub fn confidence(x: &Vec3, joints: &[Vec3]) -> f64 {
    if joints.len() < 2 {
        return 1.0;
    }
    let mut d: Vec<f64> = joints.iter().map(|j| (j - x).norm_squared()).collect();
    d.sort_by(f64::total_cmp);
    if d[1] == 0.0 {
        return 0.0;
    }
    (1.0 - d[0] / d[1]).clamp(0.0, 1.0)
}

/// Exact optimal transport cost with uniform marginals. Scaling the masses by
/// `n * m` makes every supply and demand integral, so successive shortest
/// augmenting paths give the exact optimum of the linear program.
pub fn exact_uniform_transport(cost: &DMatrix<f64>) -> f64 {
    let (n, m) = cost.shape();
    // Nodes: 0 source, 1..=n rows, n+1..=n+m columns, n+m+1 sink.
    let nodes = n + m + 2;
    let sink = nodes - 1;
    struct Edge {
        to: usize,
        cap: i64,
        cost: f64,
    }
    let mut edges: Vec<Edge> = Vec::new();
    let mut adj = vec![Vec::new(); nodes];
    let add = |edges: &mut Vec<Edge>, adj: &mut Vec<Vec<usize>>, u: usize, v: usize, cap: i64, c: f64| {
        adj[u].push(edges.len());
        edges.push(Edge { to: v, cap, cost: c });
        adj[v].push(edges.len());
        edges.push(Edge { to: u, cap: 0, cost: -c });
    };
    for i in 0..n {
        add(&mut edges, &mut adj, 0, 1 + i, m as i64, 0.0);
        for k in 0..m {
            add(&mut edges, &mut adj, 1 + i, 1 + n + k, i64::MAX / 4, cost[(i, k)]);
        }
    }
    for k in 0..m {
        add(&mut edges, &mut adj, 1 + n + k, sink, n as i64, 0.0);
    }
    let mut remaining = (n * m) as i64;
    let mut total = 0.0;
    while remaining > 0 {
        let mut dist = vec![f64::INFINITY; nodes];
        let mut via = vec![usize::MAX; nodes];
        dist[0] = 0.0;
        for _ in 0..nodes {
            let mut changed = false;
            for u in 0..nodes {
                if dist[u].is_infinite() {
                    continue;
                }
                for &e in &adj[u] {
                    let edge = &edges[e];
                    if edge.cap > 0 && dist[u] + edge.cost < dist[edge.to] - 1e-15 {
                        dist[edge.to] = dist[u] + edge.cost;
                        via[edge.to] = e;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        assert!(dist[sink].is_finite(), "flow network disconnected");
        let mut push = remaining;
        let mut v = sink;
        while v != 0 {
            let e = via[v];
            push = push.min(edges[e].cap);
            v = edges[e ^ 1].to;
        }
        let mut v = sink;
        while v != 0 {
            let e = via[v];
            edges[e].cap -= push;
            edges[e ^ 1].cap += push;
            v = edges[e ^ 1].to;
        }
        total += push as f64 * dist[sink];
        remaining -= push;
    }
    total / (n * m) as f64
}

pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for slot in 0..n {
            let mut q = p.clone();
            q.insert(slot, n - 1);
            out.push(q);
        }
    }
    out
}

/// Exact assignment cost for square problems, averaged over rows.
pub fn exact_assignment(cost: &DMatrix<f64>) -> f64 {
    let n = cost.nrows();
    permutations(n)
        .iter()
        .map(|p| (0..n).map(|i| cost[(i, p[i])]).sum::<f64>() / n as f64)
        .fold(f64::INFINITY, f64::min)
}

/// All-pairs shortest paths over bones, with unreachable pairs left infinite.
pub fn floyd_geodesics(s: &Skeleton) -> DMatrix<f64> {
    let n = s.joints.len();
    let mut d = DMatrix::from_element(n, n, f64::INFINITY);
    for i in 0..n {
        d[(i, i)] = 0.0;
        if let Some(p) = s.parents[i] {
            let len = (s.joints[i] - s.joints[p]).norm();
            d[(i, p)] = len;
            d[(p, i)] = len;
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = d[(i, k)] + d[(k, j)];
                if via < d[(i, j)] {
                    d[(i, j)] = via;
                }
            }
        }
    }
    d
}

/// Best Gromov–Wasserstein value over permutation plans between two
/// equal-size connected skeletons, as the square root of the mean squared
/// distance discrepancy.
pub fn gw_permutation_brute_force(a: &Skeleton, b: &Skeleton) -> f64 {
    let (da, db) = (floyd_geodesics(a), floyd_geodesics(b));
    let n = a.joints.len();
    assert_eq!(n, b.joints.len());
    permutations(n)
        .iter()
        .map(|p| {
            let mut sum = 0.0;
            for i in 0..n {
                for j in 0..n {
                    sum += (da[(i, j)] - db[(p[i], p[j])]).powi(2);
                }
            }
            (sum / (n * n) as f64).sqrt()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Plain mean-shift: every pass replaces each point by the Gaussian-weighted
/// mean of the input points within the bandwidth of it.
pub fn mean_shift_pass(points: &[Vec3], weights: &[f64], h: f64) -> Vec<Vec3> {
    points
        .iter()
        .map(|p| {
            let mut num = Vec3::zeros();
            let mut den = 0.0;
            for (q, w) in points.iter().zip(weights) {
                let d2 = (q - p).norm_squared();
                if d2 <= h * h {
                    let k = w * (-d2 / (2.0 * h * h)).exp();
                    num += q * k;
                    den += k;
                }
            }
            num / (den + 1e-8)
        })
        .collect()
}

/// Connected components at the given linking radius, each given as the
/// sorted list of member indices; components are sorted by first member.
pub fn components(points: &[Vec3], radius: f64) -> Vec<Vec<usize>> {
    let n = points.len();
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for s in 0..n {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        let mut stack = vec![s];
        let mut comp = Vec::new();
        while let Some(u) = stack.pop() {
            comp.push(u);
            for v in 0..n {
                if !seen[v] && (points[u] - points[v]).norm() <= radius {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Mean over vertices of the KL divergence of `target` from `pred`.
pub fn mean_kl(target: &[Vec<f64>], pred: &[Vec<f64>]) -> f64 {
    let total: f64 = target
        .iter()
        .zip(pred)
        .map(|(t, p)| {
            t.iter()
                .zip(p)
                .filter(|(t, _)| **t > 0.0)
                .map(|(t, p)| t * (t / p.max(1e-300)).ln())
                .sum::<f64>()
        })
        .sum();
    total / target.len() as f64
}

pub fn mean_l1(target: &[Vec<f64>], pred: &[Vec<f64>]) -> f64 {
    let total: f64 = target
        .iter()
        .zip(pred)
        .map(|(t, p)| t.iter().zip(p).map(|(a, b)| (a - b).abs()).sum::<f64>())
        .sum();
    total / target.len() as f64
}

pub fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .expect("nonempty row")
}
