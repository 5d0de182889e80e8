use nalgebra::{DMatrix, Isometry3, Translation3, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rigfield::metrics::{
    align_icp, chamfer_metrics, evaluate, gromov_wasserstein, sinkhorn, uniform, wasserstein,
    EvalSettings, OtSettings,
};
use rigfield::syngen::{corrupt, generate, Corruption, Family, SynthSpec};
use rigfield::{Rig, Skeleton, Vec3};

use crate::{oracle, Outcome};

pub fn sinkhorn_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let ot = OtSettings::default();
    let (mut worst_rel, mut worst_marg) = (0.0f64, 0.0f64);
    let mut square_checked = 0;
    for _ in 0..100 {
        let n = rng.random_range(1..=6);
        let m = rng.random_range(1..=6);
        let cost = DMatrix::from_fn(n, m, |_, _| rng.random_range(0.0..1.0));
        let exact = oracle::exact_uniform_transport(&cost);
        if n == m {
            // The flow oracle agrees with permutation enumeration.
            assert!((exact - oracle::exact_assignment(&cost)).abs() < 1e-12);
            square_checked += 1;
        }
        let eps = ot.epsilon_scale * cost.mean();
        let plan = sinkhorn(&cost, &uniform(n), &uniform(m), eps, ot.max_iter, ot.tol).unwrap();
        let got = plan.plan.component_mul(&cost).sum();
        worst_rel = worst_rel.max((got - exact).abs() / exact.max(1e-12));
        for i in 0..n {
            worst_marg = worst_marg.max((plan.plan.row(i).sum() - 1.0 / n as f64).abs());
        }
        for k in 0..m {
            worst_marg = worst_marg.max((plan.plan.column(k).sum() - 1.0 / m as f64).abs());
        }
    }
    Outcome::new(
        worst_rel <= 0.01 && worst_marg <= 1e-6,
        format!(
            "100 problems ({square_checked} also by permutation enumeration): worst relative gap {worst_rel:.1e}, worst marginal error {worst_marg:.1e}"
        ),
    )
}

fn rig(family: Family, joints: usize, seed: u64) -> Rig {
    generate(&SynthSpec {
        family,
        joint_count: joints,
        seed,
        ..SynthSpec::default()
    })
    .unwrap()
}

fn random_motion(rng: &mut ChaCha8Rng) -> Isometry3<f64> {
    let axis = Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0));
    let angle = rng.random_range(0.0..std::f64::consts::PI);
    let t = Vec3::from_fn(|_, _| rng.random_range(-0.5..0.5));
    Isometry3::from_parts(
        Translation3::from(t),
        UnitQuaternion::from_scaled_axis(axis.normalize() * angle),
    )
}

fn moved(s: &Skeleton, m: &Isometry3<f64>) -> Skeleton {
    let joints = s.joints.iter().map(|p| m.transform_point(&(*p).into()).coords).collect();
    Skeleton::new(joints, s.parents.clone()).unwrap()
}

fn three_joint(rng: &mut ChaCha8Rng) -> Skeleton {
    let joints: Vec<Vec3> = (0..3)
        .map(|_| Vec3::from_fn(|_, _| rng.random_range(-0.5..0.5)))
        .collect();
    let parents = if rng.random_bool(0.5) {
        vec![None, Some(0), Some(1)]
    } else {
        vec![None, Some(0), Some(0)]
    };
    Skeleton::new(joints, parents).unwrap()
}

pub fn axioms() -> Outcome {
    let ot = OtSettings::default();
    let settings = EvalSettings::default();
    let mut problems = Vec::new();
    let rigs = [
        rig(Family::Chain, 6, 1),
        rig(Family::Star, 7, 2),
        rig(Family::Tree, 9, 3),
        rig(Family::Quadruped, 0, 4),
    ];

    let mut worst_identity = 0.0f64;
    for r in &rigs {
        let report = evaluate(r, r, &settings).unwrap();
        for v in report.scores.columns().into_iter().flatten() {
            worst_identity = worst_identity.max(v);
        }
    }
    if worst_identity >= 1e-2 {
        problems.push(format!("identity metric {worst_identity:.1e}"));
    }

    let mut worst_sym = 0.0f64;
    let mut worst_rigid = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for (i, a) in rigs.iter().enumerate() {
        let b = &rigs[(i + 1) % rigs.len()];
        let (a, b) = (&a.skeleton, &b.skeleton);
        let w_ab = wasserstein(&a.joints, &b.joints, &ot).unwrap().0;
        let w_ba = wasserstein(&b.joints, &a.joints, &ot).unwrap().0;
        let g_ab = gromov_wasserstein(a, b, &ot).unwrap();
        let g_ba = gromov_wasserstein(b, a, &ot).unwrap();
        worst_sym = worst_sym.max((w_ab - w_ba).abs()).max((g_ab - g_ba).abs());
        let ma = moved(a, &random_motion(&mut rng));
        let mb = moved(b, &random_motion(&mut rng));
        worst_rigid = worst_rigid
            .max((gromov_wasserstein(&ma, b, &ot).unwrap() - g_ab).abs())
            .max((gromov_wasserstein(a, &mb, &ot).unwrap() - g_ab).abs());
    }
    if worst_sym > 1e-6 {
        problems.push(format!("asymmetry {worst_sym:.1e}"));
    }
    if worst_rigid >= 1e-2 {
        problems.push(format!("rigid-motion change {worst_rigid:.1e}"));
    }

    let mut worst_brute = 0.0f64;
    for _ in 0..20 {
        let (a, b) = (three_joint(&mut rng), three_joint(&mut rng));
        let exact = oracle::gw_permutation_brute_force(&a, &b);
        let got = gromov_wasserstein(&a, &b, &ot).unwrap();
        worst_brute = worst_brute.max((got - exact).abs() / exact.max(1e-12));
    }
    if worst_brute > 0.05 {
        problems.push(format!("three-joint gap {worst_brute:.3}"));
    }

    Outcome::new(
        problems.is_empty(),
        format!(
            "identity max {worst_identity:.1e}, asymmetry {worst_sym:.1e}, rigid change {worst_rigid:.1e}, three-joint relative gap {worst_brute:.1e}{}",
            if problems.is_empty() { String::new() } else { format!(" [{}]", problems.join("; ")) }
        ),
    )
}

pub fn separation() -> Outcome {
    let ot = OtSettings::default();
    let families = [Family::Chain, Family::Star, Family::Tree, Family::Quadruped];
    let mut failures = Vec::new();
    let (mut worst_chamfer, mut min_ratio) = (0.0f64, f64::INFINITY);
    let mut cases = 0;
    for k in 0..20u64 {
        let gt = rig(families[k as usize % 4], 12 + k as usize % 3, 100 + k);
        let base = chamfer_metrics(&gt.skeleton, &gt.skeleton, 32).unwrap();
        let base_gw = gromov_wasserstein(&gt.skeleton, &gt.skeleton, &ot).unwrap();
        for kind in [Corruption::InsertMidBone, Corruption::DuplicateBranch] {
            let bad = corrupt(&gt, kind, 0.01, k).unwrap();
            let c = chamfer_metrics(&bad.skeleton, &gt.skeleton, 32).unwrap();
            let dc = (c.joint_to_joint - base.joint_to_joint)
                .abs()
                .max((c.joint_to_bone - base.joint_to_bone).abs())
                .max((c.bone_to_bone - base.bone_to_bone).abs());
            let dg = (gromov_wasserstein(&bad.skeleton, &gt.skeleton, &ot).unwrap() - base_gw).abs();
            worst_chamfer = worst_chamfer.max(dc);
            min_ratio = min_ratio.min(dg / dc);
            cases += 1;
            if dc >= 0.01 || dg <= 5.0 * dc {
                failures.push(format!("rig {k} {kind:?}: chamfer {dc:.4}, gw {dg:.4}"));
            }
        }
    }
    Outcome::new(
        failures.is_empty(),
        format!(
            "{cases} cases: worst chamfer delta {worst_chamfer:.4}, smallest gw/chamfer ratio {min_ratio:.1}{}",
            if failures.is_empty() { String::new() } else { format!(" [{}]", failures.join("; ")) }
        ),
    )
}

pub fn icp() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let families = [Family::Chain, Family::Star, Family::Tree, Family::Quadruped];
    let mut recovered = 0;
    let mut worst = 0.0f64;
    for t in 0..100u64 {
        let gt = rig(families[t as usize % 4], 6 + t as usize % 8, 300 + t);
        let m = random_motion(&mut rng);
        let src = moved(&gt.skeleton, &m).joints;
        let r = align_icp(&src, &gt.skeleton.joints, 100, 50, t).unwrap();
        worst = worst.max(r.residual);
        recovered += (r.residual < 1e-6) as usize;
    }

    let mut worst_metric = 0.0f64;
    for k in 0..4u64 {
        let gt = rig(families[k as usize], 8, 400 + k);
        let m = random_motion(&mut rng);
        let pred = gt.map_positions(|p| m.transform_point(&(*p).into()).coords);
        let report = evaluate(&pred, &gt, &EvalSettings::default()).unwrap();
        for v in report.scores.columns().into_iter().flatten() {
            worst_metric = worst_metric.max(v);
        }
    }
    Outcome::new(
        recovered >= 99 && worst_metric < 1e-2,
        format!(
            "{recovered}/100 recovered below 1e-6 (worst residual {worst:.1e}); moved-reference evaluation max metric {worst_metric:.1e}"
        ),
    )
}
