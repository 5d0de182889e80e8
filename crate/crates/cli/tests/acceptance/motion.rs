use nalgebra::{UnitQuaternion, Vector3};
use rigfield::animate::{perturb_pose, posed_joints, skin_mesh, Pose};
use rigfield::syngen::{generate, Family, SynthSpec};
use rigfield::{Mesh, Rig, Skeleton, SkinWeights, Vec3};

use crate::Outcome;

pub fn sampler() -> Outcome {
    let n: usize = 10_000;
    let joints = (0..n).map(|i| Vec3::new(i as f64 * 1e-4, 0.0, 0.0)).collect();
    let parents = (0..n).map(|i| i.checked_sub(1)).collect();
    let s = Skeleton::new(joints, parents).unwrap();
    let a = perturb_pose(&s, 0.8, 60.0, 12).unwrap();
    let b = perturb_pose(&s, 0.8, 60.0, 12).unwrap();
    let c = perturb_pose(&s, 0.8, 60.0, 13).unwrap();
    let bits = |p: &Pose| -> Vec<u64> {
        p.rotations
            .iter()
            .flat_map(|q| q.coords.iter().map(|x| x.to_bits()).collect::<Vec<_>>())
            .collect()
    };
    let rotated = a.rotations.iter().filter(|q| q.angle() > 0.0).count();
    let fraction = rotated as f64 / n as f64;
    let max_angle = a.rotations.iter().map(|q| q.angle().to_degrees()).fold(0.0, f64::max);
    let same = bits(&a) == bits(&b);
    let differs = bits(&a) != bits(&c);
    Outcome::new(
        (0.78..=0.82).contains(&fraction) && max_angle <= 60.0 + 1e-9 && same && differs,
        format!(
            "fraction {fraction:.4}, largest angle {max_angle:.3} deg, same seed identical {same}, other seed differs {differs}"
        ),
    )
}

fn max_gap(a: &[Vec3], b: &[Vec3]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max)
}

pub fn kinematics() -> Outcome {
    let mut gaps = Vec::new();

    // Identity pose on a generated rig.
    let rig = generate(&SynthSpec {
        family: Family::Tree,
        joint_count: 8,
        seed: 5,
        ..SynthSpec::default()
    })
    .unwrap();
    let id = Pose::identity(rig.skeleton.len());
    let mesh = skin_mesh(&rig, &id).unwrap();
    let joints = posed_joints(&rig.skeleton, &id).unwrap();
    gaps.push((
        "identity",
        max_gap(&mesh.vertices, &rig.mesh.vertices).max(max_gap(&joints, &rig.skeleton.joints)),
    ));

    // Two-bone chain, root turned a quarter about z; a vertex bound to the
    // root swings about the origin, a vertex bound to the tip follows it.
    let chain = Skeleton::new(
        vec![Vec3::zeros(), Vec3::x(), Vec3::new(2.0, 0.0, 0.0)],
        vec![None, Some(0), Some(1)],
    )
    .unwrap();
    let verts = vec![Vec3::new(0.5, 0.0, 0.3), Vec3::new(2.5, 0.1, 0.0)];
    let skin = SkinWeights::new(3, vec![vec![(0, 1.0)], vec![(2, 1.0)]]).unwrap();
    let r = Rig::new(Mesh::new(verts, vec![]).unwrap(), chain.clone(), Some(skin)).unwrap();
    let mut pose = Pose::identity(3);
    pose.rotations[0] = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2);
    let got = skin_mesh(&r, &pose).unwrap().vertices;
    let expected = [Vec3::new(0.0, 0.5, 0.3), Vec3::new(-0.1, 2.5, 0.0)];
    let expected_joints = [Vec3::zeros(), Vec3::y(), Vec3::new(0.0, 2.0, 0.0)];
    gaps.push((
        "single rotation",
        max_gap(&got, &expected).max(max_gap(&posed_joints(&chain, &pose).unwrap(), &expected_joints)),
    ));

    // Joint 1 counter-rotated so its frame is a pure translation by
    // (-1, 1, 0); joint 3 is a separate, unmoved root. Half of each moves a
    // vertex by half the translation.
    let forest = Skeleton::new(
        vec![Vec3::zeros(), Vec3::x(), Vec3::new(2.0, 0.0, 0.0), Vec3::new(0.0, 0.0, 5.0)],
        vec![None, Some(0), Some(1), None],
    )
    .unwrap();
    let v = Vec3::new(1.5, -0.2, 0.4);
    let skin = SkinWeights::new(4, vec![vec![(1, 0.5), (3, 0.5)]]).unwrap();
    let r = Rig::new(Mesh::new(vec![v], vec![]).unwrap(), forest, Some(skin)).unwrap();
    let mut pose = Pose::identity(4);
    let quarter = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2);
    pose.rotations[0] = quarter;
    pose.rotations[1] = quarter.inverse();
    let got = skin_mesh(&r, &pose).unwrap().vertices[0];
    gaps.push(("half-weight translation", (got - (v + Vec3::new(-0.5, 0.5, 0.0))).norm()));

    // Rigid-motion equivariance with a conjugated pose.
    let pose = perturb_pose(&rig.skeleton, 0.8, 60.0, 3).unwrap();
    let q = UnitQuaternion::from_scaled_axis(Vector3::new(0.3, -1.1, 0.7));
    let u = Vec3::new(0.2, -0.4, 0.9);
    let moved = rig.map_positions(|p| q * p + u);
    let mut conj = pose.clone();
    for r in &mut conj.rotations {
        *r = q * *r * q.inverse();
    }
    conj.root_translation = q * pose.root_translation;
    let lhs = skin_mesh(&moved, &conj).unwrap().vertices;
    let rhs: Vec<Vec3> = skin_mesh(&rig, &pose)
        .unwrap()
        .vertices
        .iter()
        .map(|p| q * p + u)
        .collect();
    gaps.push(("equivariance", max_gap(&lhs, &rhs)));

    let pass = gaps.iter().all(|(_, g)| *g <= 1e-6);
    Outcome::new(
        pass,
        gaps.iter()
            .map(|(n, g)| format!("{n} {g:.1e}"))
            .collect::<Vec<_>>()
            .join(", "),
    )
}
