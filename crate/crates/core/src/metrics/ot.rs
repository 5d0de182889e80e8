//! Entropic optimal transport: Sinkhorn, Wasserstein and Gromov–Wasserstein.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rig::{Skeleton, Vec3};

/// Solver knobs shared by every transport problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OtSettings {
    /// Regularization as a fraction of the mean ground cost.
    pub epsilon_scale: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub gw_outer: usize,
    /// Extra randomized starting plans for Gromov–Wasserstein.
    pub gw_restarts: usize,
}

impl Default for OtSettings {
    fn default() -> Self {
        OtSettings {
            epsilon_scale: 1e-3,
            max_iter: 2000,
            tol: 1e-7,
            gw_outer: 20,
            gw_restarts: 8,
        }
    }
}

impl OtSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon_scale > 0.0 && self.epsilon_scale.is_finite()) {
            return Err(Error::precondition("epsilon scale must be positive"));
        }
        if !(self.tol > 0.0) || self.max_iter == 0 || self.gw_outer == 0 {
            return Err(Error::precondition(
                "tolerance, iteration and outer-loop limits must be positive",
            ));
        }
        Ok(())
    }
}

/// A coupling between two discrete measures.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub plan: DMatrix<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// Iterations spent at the target regularization.
    pub iterations: usize,
    pub converged: bool,
    /// L1 deviation of the row sums from `a` (columns are exact on return).
    pub marginal_error: f64,
}

impl TransportPlan {
    pub fn cost(&self, cost: &DMatrix<f64>) -> f64 {
        self.plan.component_mul(cost).sum()
    }

    pub fn transpose(&self) -> TransportPlan {
        TransportPlan {
            plan: self.plan.transpose(),
            a: self.b.clone(),
            b: self.a.clone(),
            ..self.clone()
        }
    }

    /// Each row divided by its sum, so row i is a distribution over columns.
    pub fn row_normalized(&self) -> DMatrix<f64> {
        let mut out = self.plan.clone();
        for mut row in out.row_iter_mut() {
            let s = row.sum();
            if s > 0.0 {
                row /= s;
            }
        }
        out
    }
}

pub fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

fn check_marginal(name: &str, m: &[f64]) -> Result<()> {
    if m.is_empty() || m.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
        return Err(Error::precondition(format!("marginal {name} must be positive")));
    }
    let s: f64 = m.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::precondition(format!("marginal {name} sums to {s}, not 1")));
    }
    Ok(())
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Entropic transport by alternating scaling in the log domain.
///
/// The regularization is annealed from the cost spread down to `epsilon`,
/// warm-starting the dual potentials, before the final stage iterates until
/// the row marginals are within `tol` (L1) or `max_iter` is reached.
pub fn sinkhorn(
    cost: &DMatrix<f64>,
    a: &[f64],
    b: &[f64],
    epsilon: f64,
    max_iter: usize,
    tol: f64,
) -> Result<TransportPlan> {
    let (n, m) = cost.shape();
    if a.len() != n || b.len() != m {
        return Err(Error::precondition(format!(
            "cost is {n}x{m} but marginals have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    check_marginal("a", a)?;
    check_marginal("b", b)?;
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::precondition("cost matrix contains non-finite entries"));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::precondition("epsilon must be positive"));
    }
    let log_a: Vec<f64> = a.iter().map(|x| x.ln()).collect();
    let log_b: Vec<f64> = b.iter().map(|x| x.ln()).collect();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];

    let update = |f: &mut [f64], g: &mut [f64], eps: f64| {
        for i in 0..n {
            let lse = log_sum_exp((0..m).map(|k| (g[k] - cost[(i, k)]) / eps));
            f[i] = eps * (log_a[i] - lse);
        }
        for k in 0..m {
            let lse = log_sum_exp((0..n).map(|i| (f[i] - cost[(i, k)]) / eps));
            g[k] = eps * (log_b[k] - lse);
        }
    };
    let row_error = |f: &[f64], g: &[f64], eps: f64| -> f64 {
        (0..n)
            .map(|i| {
                let s: f64 = (0..m).map(|k| ((f[i] + g[k] - cost[(i, k)]) / eps).exp()).sum();
                (s - a[i]).abs()
            })
            .sum()
    };

    let spread = cost.max() - cost.min();
    let mut eps = spread.max(epsilon);
    while eps > epsilon {
        for _ in 0..10 {
            update(&mut f, &mut g, eps);
        }
        eps = (eps * 0.5).max(epsilon);
        if eps == epsilon {
            break;
        }
    }
    let mut iterations = 0;
    let mut err = f64::INFINITY;
    while iterations < max_iter {
        update(&mut f, &mut g, epsilon);
        iterations += 1;
        if iterations % 10 == 0 || iterations == max_iter {
            err = row_error(&f, &g, epsilon);
            if err < tol {
                break;
            }
        }
    }
    let plan = DMatrix::from_fn(n, m, |i, k| ((f[i] + g[k] - cost[(i, k)]) / epsilon).exp());
    if plan.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("Sinkhorn produced a non-finite plan".into()));
    }
    Ok(TransportPlan {
        plan,
        a: a.to_vec(),
        b: b.to_vec(),
        iterations,
        converged: err < tol,
        marginal_error: err,
    })
}

fn regularization(cost: &DMatrix<f64>, settings: &OtSettings) -> f64 {
    let mean = cost.mean();
    if mean > 0.0 {
        settings.epsilon_scale * mean
    } else {
        settings.epsilon_scale
    }
}

fn lexicographic_cmp(x: &[Vec3], y: &[Vec3]) -> std::cmp::Ordering {
    x.len().cmp(&y.len()).then_with(|| {
        x.iter()
            .flat_map(|p| p.iter())
            .zip(y.iter().flat_map(|p| p.iter()))
            .map(|(u, v)| u.total_cmp(v))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    })
}

pub fn squared_distance_matrix(x: &[Vec3], y: &[Vec3]) -> DMatrix<f64> {
    DMatrix::from_fn(x.len(), y.len(), |i, k| (x[i] - y[k]).norm_squared())
}

/// L2 Wasserstein distance between uniform measures on two point sets,
/// together with the plan (rows index `pred`).
pub fn wasserstein(
    pred: &[Vec3],
    gt: &[Vec3],
    settings: &OtSettings,
) -> Result<(f64, TransportPlan)> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::precondition("Wasserstein needs two nonempty point sets"));
    }
    settings.validate()?;
    // Solve in a canonical argument order so swapping inputs gives the same
    // number bit for bit.
    let swap = lexicographic_cmp(pred, gt).is_gt();
    let (x, y) = if swap { (gt, pred) } else { (pred, gt) };
    let cost = squared_distance_matrix(x, y);
    let plan = sinkhorn(
        &cost,
        &uniform(x.len()),
        &uniform(y.len()),
        regularization(&cost, settings),
        settings.max_iter,
        settings.tol,
    )?;
    let distance = plan.cost(&cost).max(0.0).sqrt();
    Ok((distance, if swap { plan.transpose() } else { plan }))
}

/// All-pairs path lengths along bones. Joints in different trees are set
/// apart by twice the largest within-tree distance of the two trees, or by
/// their Euclidean distance when both trees are single points.
pub fn skeleton_geodesics(skeleton: &Skeleton) -> DMatrix<f64> {
    let n = skeleton.len();
    let mut adjacency = vec![Vec::new(); n];
    for (p, c) in skeleton.bones() {
        let len = (skeleton.joints[c] - skeleton.joints[p]).norm();
        adjacency[p].push((c, len));
        adjacency[c].push((p, len));
    }
    let mut dist = DMatrix::from_element(n, n, f64::INFINITY);
    for s in 0..n {
        dist[(s, s)] = 0.0;
        let mut stack = vec![s];
        while let Some(u) = stack.pop() {
            for &(v, len) in &adjacency[u] {
                if dist[(s, v)].is_infinite() {
                    dist[(s, v)] = dist[(s, u)] + len;
                    stack.push(v);
                }
            }
        }
    }
    // Each joint is labelled by the lowest joint index in its tree.
    let component: Vec<usize> = (0..n)
        .map(|i| (0..n).find(|&j| dist[(i, j)].is_finite()).unwrap_or(i))
        .collect();
    let mut diameter = vec![0.0f64; n];
    for i in 0..n {
        for j in 0..n {
            if dist[(i, j)].is_finite() {
                let c = component[i];
                diameter[c] = diameter[c].max(dist[(i, j)]);
            }
        }
    }
    for i in 0..n {
        for j in 0..n {
            if dist[(i, j)].is_infinite() {
                let penalty = 2.0 * diameter[component[i]].max(diameter[component[j]]);
                dist[(i, j)] = if penalty > 0.0 {
                    penalty
                } else {
                    (skeleton.joints[i] - skeleton.joints[j]).norm()
                };
            }
        }
    }
    dist
}

struct GwProblem<'a> {
    dp: &'a DMatrix<f64>,
    dg: &'a DMatrix<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
    /// Part of the objective's gradient that does not depend on the plan.
    linear: DMatrix<f64>,
}

impl<'a> GwProblem<'a> {
    fn new(dp: &'a DMatrix<f64>, dg: &'a DMatrix<f64>) -> Self {
        let (n, m) = (dp.nrows(), dg.nrows());
        let a = uniform(n);
        let b = uniform(m);
        let c1: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| dp[(i, j)].powi(2) * a[j]).sum())
            .collect();
        let c2: Vec<f64> = (0..m)
            .map(|k| (0..m).map(|l| dg[(k, l)].powi(2) * b[l]).sum())
            .collect();
        let linear = DMatrix::from_fn(n, m, |i, k| c1[i] + c2[k]);
        GwProblem { dp, dg, a, b, linear }
    }

    /// Plan-dependent cross term `dp * plan * dg`.
    fn cross(&self, plan: &DMatrix<f64>) -> DMatrix<f64> {
        self.dp * plan * self.dg
    }

    fn objective(&self, plan: &DMatrix<f64>) -> f64 {
        (&self.linear - 2.0 * self.cross(plan)).component_mul(plan).sum()
    }

    /// Conditional-gradient descent: each step solves an entropic transport
    /// problem on the linearized cost and moves toward it by exact line
    /// search on the quadratic objective.
    fn descend(&self, mut plan: DMatrix<f64>, settings: &OtSettings) -> Result<DMatrix<f64>> {
        for _ in 0..settings.gw_outer {
            let cross = self.cross(&plan);
            let grad = &self.linear - 4.0 * &cross;
            let shifted = grad.add_scalar(-grad.min());
            let eps = regularization(&shifted, settings);
            let target = sinkhorn(&shifted, &self.a, &self.b, eps, settings.max_iter, settings.tol)?;
            let delta = &target.plan - &plan;
            let c2 = -2.0 * self.cross(&delta).component_mul(&delta).sum();
            let c1 = (&self.linear - 4.0 * &cross).component_mul(&delta).sum();
            let step = if c2 > 0.0 {
                (-c1 / (2.0 * c2)).clamp(0.0, 1.0)
            } else if c1 + c2 < 0.0 {
                1.0
            } else {
                0.0
            };
            if step == 0.0 {
                break;
            }
            plan += step * delta;
        }
        Ok(plan)
    }
}

/// Pose-invariant starting plan from comparing each joint's distribution of
/// distances to all other joints.
fn profile_plan(problem: &GwProblem, settings: &OtSettings) -> Result<DMatrix<f64>> {
    let sorted_rows = |d: &DMatrix<f64>| -> Vec<Vec<f64>> {
        d.row_iter()
            .map(|r| {
                let mut v: Vec<f64> = r.iter().copied().collect();
                v.sort_by(f64::total_cmp);
                v
            })
            .collect()
    };
    let rp = sorted_rows(problem.dp);
    let rg = sorted_rows(problem.dg);
    let cost = DMatrix::from_fn(rp.len(), rg.len(), |i, k| quantile_gap(&rp[i], &rg[k]));
    let eps = regularization(&cost, settings).max(1e-3 * cost.max());
    Ok(sinkhorn(&cost, &problem.a, &problem.b, eps.max(1e-12), settings.max_iter, settings.tol)?.plan)
}

/// Squared L2 gap between the quantile functions of two sorted samples with
/// uniform weights.
fn quantile_gap(x: &[f64], y: &[f64]) -> f64 {
    let (n, m) = (x.len(), y.len());
    let mut cuts: Vec<f64> = (0..=n)
        .map(|i| i as f64 / n as f64)
        .chain((0..=m).map(|k| k as f64 / m as f64))
        .collect();
    cuts.sort_by(f64::total_cmp);
    cuts.windows(2)
        .map(|w| {
            let mid = 0.5 * (w[0] + w[1]);
            let xi = ((mid * n as f64) as usize).min(n - 1);
            let yi = ((mid * m as f64) as usize).min(m - 1);
            (w[1] - w[0]) * (x[xi] - y[yi]).powi(2)
        })
        .sum()
}

/// Projects a positive matrix onto the coupling polytope.
fn project(mut seed: DMatrix<f64>, a: &[f64], b: &[f64]) -> DMatrix<f64> {
    for _ in 0..500 {
        for (i, mut row) in seed.row_iter_mut().enumerate() {
            let s = row.sum();
            row *= a[i] / s;
        }
        for (k, mut col) in seed.column_iter_mut().enumerate() {
            let s = col.sum();
            col *= b[k] / s;
        }
    }
    seed
}

/// Geodesic Gromov–Wasserstein distance between two skeletons with uniform
/// joint measures. Returns the square root of the best objective reached
/// from a uniform start, a distance-profile start and seeded perturbations
/// of the latter.
pub fn gromov_wasserstein(pred: &Skeleton, gt: &Skeleton, settings: &OtSettings) -> Result<f64> {
    Ok(gromov_wasserstein_plan(pred, gt, settings)?.0)
}

pub fn gromov_wasserstein_plan(
    pred: &Skeleton,
    gt: &Skeleton,
    settings: &OtSettings,
) -> Result<(f64, TransportPlan)> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::precondition("Gromov–Wasserstein needs two nonempty skeletons"));
    }
    settings.validate()?;
    let dp = skeleton_geodesics(pred);
    let dg = skeleton_geodesics(gt);
    let swap = canonical_matrix_cmp(&dp, &dg).is_gt();
    let (dx, dy) = if swap { (&dg, &dp) } else { (&dp, &dg) };
    let (value, plan) = gw_from_distances(dx, dy, settings)?;
    Ok((value, if swap { plan.transpose() } else { plan }))
}

fn canonical_matrix_cmp(x: &DMatrix<f64>, y: &DMatrix<f64>) -> std::cmp::Ordering {
    x.nrows().cmp(&y.nrows()).then_with(|| {
        x.iter()
            .zip(y.iter())
            .map(|(u, v)| u.total_cmp(v))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    })
}

/// Gromov–Wasserstein between two metric spaces given as distance matrices.
pub fn gw_from_distances(
    dp: &DMatrix<f64>,
    dg: &DMatrix<f64>,
    settings: &OtSettings,
) -> Result<(f64, TransportPlan)> {
    let problem = GwProblem::new(dp, dg);
    let (n, m) = (dp.nrows(), dg.nrows());
    let base = profile_plan(&problem, settings)?;
    let mut starts = vec![DMatrix::from_fn(n, m, |i, k| problem.a[i] * problem.b[k]), base.clone()];
    let mut rng = ChaCha8Rng::seed_from_u64(0x6757);
    let floor = 1.0 / (n * m) as f64;
    for _ in 0..settings.gw_restarts {
        let noisy = DMatrix::from_fn(n, m, |i, k| {
            (base[(i, k)] + 0.1 * floor) * rng.random_range(0.25..1.0)
        });
        starts.push(project(noisy, &problem.a, &problem.b));
    }
    let descended: Vec<Result<DMatrix<f64>>> = starts
        .into_par_iter()
        .map(|start| problem.descend(start, settings))
        .collect();
    let mut best: Option<(f64, DMatrix<f64>)> = None;
    for plan in descended {
        let plan = plan?;
        let value = problem.objective(&plan);
        if value.is_nan() {
            return Err(Error::Numeric("Gromov–Wasserstein objective diverged".into()));
        }
        if best.as_ref().is_none_or(|(v, _)| value < *v) {
            best = Some((value, plan));
        }
    }
    let (value, plan) = best.expect("at least one start");
    let marginal_error = plan
        .row_iter()
        .zip(&problem.a)
        .map(|(r, a)| (r.sum() - a).abs())
        .sum();
    Ok((
        value.max(0.0).sqrt(),
        TransportPlan {
            plan,
            a: problem.a.clone(),
            b: problem.b.clone(),
            iterations: settings.gw_outer,
            converged: true,
            marginal_error,
        },
    ))
}
