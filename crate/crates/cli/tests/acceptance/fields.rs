use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rigfield::skeleton_field::{
    cluster_votes, decode_skeleton, encode_field, structural_match, ClusterParams, Votes,
};
use rigfield::syngen::random_forest;
use rigfield::voxel::{voxel_center, voxelize_skeleton, SparseVoxelGrid};
use rigfield::{Skeleton, Vec3};

use crate::{oracle, Outcome};

const RESOLUTION: u32 = 64;

fn recovers(reference: &Skeleton, noise_edges: f64, seed: u64) -> bool {
    let edge = 1.0 / RESOLUTION as f64;
    let grid = voxelize_skeleton(reference, RESOLUTION, 2).expect("voxelize");
    let mut field = encode_field(reference, &grid).expect("encode");
    if noise_edges > 0.0 {
        field = field.with_offset_noise(noise_edges * edge, seed).expect("noise");
    }
    match decode_skeleton(&field, &ClusterParams::for_resolution(RESOLUTION)) {
        Ok(decoded) => structural_match(reference, &decoded, edge).is_some(),
        Err(_) => false,
    }
}

pub fn round_trip() -> Outcome {
    let start = std::time::Instant::now();
    let min_sep = 4.0 / RESOLUTION as f64;
    let trials = 200u64;
    let (mut clean, mut noisy) = (0, 0);
    for seed in 0..trials {
        let n = 2 + (seed as usize * 7919) % 19;
        let s = random_forest(n, min_sep, seed).expect("forest");
        clean += recovers(&s, 0.0, seed) as u32;
        noisy += recovers(&s, 0.25, seed ^ 0x9e37) as u32;
    }
    let secs = start.elapsed().as_secs_f64();
    let (fc, fn_) = (clean as f64 / trials as f64, noisy as f64 / trials as f64);
    Outcome::new(
        fc >= 0.95 && fn_ >= 0.90 && secs < 60.0,
        format!("clean {clean}/{trials}, noise 0.25 edges {noisy}/{trials}, {secs:.1} s"),
    )
}

fn conf_at(voxel: [u32; 3], joints: [Vec3; 2]) -> f64 {
    let grid = SparseVoxelGrid::new(RESOLUTION, [voxel]).expect("grid");
    let s = Skeleton::new(joints.to_vec(), vec![None, Some(0)]).expect("skeleton");
    let field = encode_field(&s, &grid).expect("encode");
    field.samples()[0].conf_joint
}

pub fn confidence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut equidistant_bad = 0;
    let mut at_joint_bad = 0;
    for _ in 0..1000 {
        let voxel = [0; 3].map(|_| rng.random_range(0..RESOLUTION));
        let c = voxel_center(RESOLUTION, &voxel);
        let joints = [0; 2].map(|_| Vec3::from_fn(|_, _| rng.random_range(-0.5..0.5)));
        let got = conf_at(voxel, joints);
        worst = worst.max((got - oracle::confidence(&c, &joints)).abs());

        // Mirror pair with dyadic offsets so both distances are exact.
        let d = Vec3::from_fn(|_, _| rng.random_range(-16i32..=16) as f64 / 256.0);
        let d = if d == Vec3::zeros() { Vec3::x() / 256.0 } else { d };
        if conf_at(voxel, [c + d, c - d]) != 0.0 {
            equidistant_bad += 1;
        }
        if conf_at(voxel, [c, joints[1] + Vec3::repeat(2.0)]) != 1.0 {
            at_joint_bad += 1;
        }
    }
    Outcome::new(
        worst <= 1e-9 && equidistant_bad == 0 && at_joint_bad == 0,
        format!(
            "max deviation {worst:.1e}, nonzero equidistant {equidistant_bad}, non-unit at-joint {at_joint_bad}"
        ),
    )
}

/// A three-joint chain with tight vote blobs, two isolated stray votes and a
/// handful of low-confidence votes scattered between the blobs.
fn chain_votes(h: f64) -> (Votes, [Vec3; 3]) {
    let joints = [
        Vec3::new(0.0, 0.0, 0.0),
        Vec3::new(0.2, 0.0, 0.0),
        Vec3::new(0.2, 0.2, 0.0),
    ];
    let parent = [joints[0], joints[0], joints[1]];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut v = Votes::default();
    for (j, p) in joints.iter().zip(parent) {
        for _ in 0..12 {
            let jitter = Vec3::from_fn(|_, _| rng.random_range(-0.2..0.2) * h);
            v.joints.push(j + jitter);
            v.parents.push(p + jitter * 0.5);
            let c = rng.random_range(0.5..1.0);
            v.conf_joint.push(c);
            v.conf_parent.push(c);
        }
    }
    for stray in [Vec3::new(0.1, 0.1, 0.1), Vec3::new(-0.1, 0.1, -0.1)] {
        v.joints.push(stray);
        v.parents.push(joints[0]);
        v.conf_joint.push(1.0);
        v.conf_parent.push(1.0);
    }
    for k in 0..6 {
        v.joints.push(Vec3::new(0.03 * k as f64, 0.1, 0.0));
        v.parents.push(joints[0]);
        v.conf_joint.push(0.01);
        v.conf_parent.push(0.01);
    }
    (v, joints)
}

pub fn clustering() -> Outcome {
    let h = 0.03;
    let mut problems = Vec::new();
    let params = ClusterParams::new(h);
    if params.iterations != 10
        || params.convergence_tol != h / 10.0
        || params.merge_radius != h / 2.0
        || params.min_cluster_size != 3
    {
        problems.push("defaults".to_string());
    }

    let (votes, joints) = chain_votes(h);
    let c = cluster_votes(&votes, &params).expect("cluster");
    let kept: Vec<usize> = (0..votes.len()).filter(|&i| votes.conf_joint[i] >= 0.05).collect();
    if c.kept_votes != kept {
        problems.push("confidence filter".into());
    }

    // Replay the loop with the oracle and check the stopping pass.
    let pts: Vec<Vec3> = kept.iter().map(|&i| votes.joints[i]).collect();
    let w: Vec<f64> = kept.iter().map(|&i| votes.conf_joint[i]).collect();
    let mut current = pts.clone();
    let mut stop = None;
    for pass in 1..=10 {
        let next = oracle::mean_shift_pass(&current, &w, h);
        let shift = current.iter().zip(&next).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        if shift <= h / 10.0 {
            stop = Some(pass);
            break;
        }
        current = next;
    }
    if c.passes > 10 || stop != Some(c.passes) || !c.converged {
        problems.push(format!("stopping pass {} vs {stop:?}", c.passes));
    }
    let drift = c.shifted.iter().zip(&current).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    if drift > 1e-12 {
        problems.push(format!("shifted points differ by {drift:.1e}"));
    }

    // Labels are exactly the components at the merge radius.
    let comps = oracle::components(&c.shifted, h / 2.0);
    let mut by_label = vec![Vec::new(); c.sizes.len()];
    for (k, &l) in c.labels.iter().enumerate() {
        by_label[l].push(k);
    }
    let mut sorted = by_label.clone();
    sorted.sort();
    if sorted != comps {
        problems.push("merge components".into());
    }
    let expected_kept: Vec<usize> = (0..c.sizes.len()).filter(|&l| c.sizes[l] >= 3).collect();
    let mut got_kept = c.joint_labels.clone();
    got_kept.sort_unstable();
    if got_kept != expected_kept {
        problems.push("size filter".into());
    }

    // Expected clusters: the three blobs, strays dropped, chain linked by
    // nearest parent estimate.
    let s = &c.skeleton;
    let reference = Skeleton::new(joints.to_vec(), vec![None, Some(0), Some(1)]).unwrap();
    if structural_match(&reference, s, h).is_none() {
        problems.push(format!("decoded {} joints, parents {:?}", s.len(), s.parents));
    }
    for (k, est) in c.parent_estimates.iter().enumerate() {
        let nearest = (0..s.len())
            .min_by(|&a, &b| {
                (s.joints[a] - est).norm().total_cmp(&(s.joints[b] - est).norm())
            })
            .unwrap();
        let expected = (nearest != k).then_some(nearest);
        if s.parents[k] != expected {
            problems.push(format!("joint {k} not linked to the nearest parent estimate"));
        }
    }

    // A long evenly spaced line keeps shifting at its ends, so the loop must
    // stop at the pass limit.
    let line: Vec<Vec3> = (0..200).map(|i| Vec3::new(i as f64 * h / 4.0, 0.0, 0.0)).collect();
    let n = line.len();
    let line_votes = Votes::uniform(line.clone(), line, vec![1.0; n]);
    let lc = cluster_votes(&line_votes, &params).expect("line");
    if lc.passes != 10 || lc.converged {
        problems.push(format!("line stopped after {} passes", lc.passes));
    }

    Outcome::new(
        problems.is_empty(),
        if problems.is_empty() {
            format!(
                "{} kept votes, stopped at pass {}, {} clusters, {} joints",
                c.kept_votes.len(),
                c.passes,
                c.sizes.len(),
                s.len()
            )
        } else {
            problems.join("; ")
        },
    )
}
