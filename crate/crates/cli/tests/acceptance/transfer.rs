use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rigfield::bvh::{build_bvh, transfer_skin_bvh, transfer_skin_nn};
use rigfield::skin_field::{decode_skin, AffineLift, SkinEmbeddings};
use rigfield::syngen::{generate, uv_sphere, Family, MeshStyle, SynthSpec};
use rigfield::{Mesh, Rig, Skeleton, SkinWeights, Vec3};

use crate::{oracle, Outcome};

fn triangles(mesh: &Mesh) -> Vec<[Vec3; 3]> {
    mesh.triangles
        .iter()
        .map(|t| t.map(|i| mesh.vertices[i]))
        .collect()
}

fn soup(count: usize, seed: u64) -> Mesh {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vertices = Vec::new();
    let mut tris = Vec::new();
    for t in 0..count {
        let a = Vec3::from_fn(|_, _| rng.random_range(-0.5..0.5));
        let b = a + Vec3::from_fn(|_, _| rng.random_range(-0.1..0.1));
        // Every tenth triangle is a sliver along one edge.
        let c = if t % 10 == 0 {
            a + (b - a) * 0.3
        } else {
            a + Vec3::from_fn(|_, _| rng.random_range(-0.1..0.1))
        };
        vertices.extend([a, b, c]);
        tris.push([3 * t, 3 * t + 1, 3 * t + 2]);
    }
    Mesh::new(vertices, tris).unwrap()
}

pub fn bvh_oracle() -> Outcome {
    let start = Instant::now();
    let capsule = generate(&SynthSpec {
        family: Family::Tree,
        joint_count: 7,
        ..SynthSpec::default()
    })
    .unwrap()
    .mesh;
    let meshes = [
        uv_sphere(&Vec3::zeros(), 0.4, 8, 5),
        uv_sphere(&Vec3::new(0.1, 0.0, 0.0), 0.45, 24, 12),
        soup(300, 1),
        soup(1000, 2),
        capsule,
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut mismatches, mut index_diffs, mut queries) = (0, 0, 0);
    let mut max_tris = 0;
    for mesh in &meshes {
        let tris = triangles(mesh);
        max_tris = max_tris.max(tris.len());
        let bvh = build_bvh(mesh).unwrap();
        for _ in 0..500 {
            let q = Vec3::from_fn(|_, _| rng.random_range(-0.7..0.7));
            let hit = bvh.closest_point(&q);
            let (t, d) = oracle::brute_closest(&q, &tris);
            queries += 1;
            let at_hit = (oracle::closest_on_triangle(&q, &tris[hit.triangle]) - q).norm();
            if (hit.distance - d).abs() > 1e-9 || (at_hit - d).abs() > 1e-9 {
                mismatches += 1;
            } else if hit.triangle != t {
                index_diffs += 1;
            }
        }
    }
    if max_tris > 1000 {
        return Outcome::new(false, format!("oracle mesh too large ({max_tris})"));
    }

    let big = uv_sphere(&Vec3::zeros(), 0.5, 225, 112);
    let tris = triangles(&big);
    let qs: Vec<Vec3> = (0..10_000)
        .map(|_| Vec3::from_fn(|_, _| rng.random_range(-0.6..0.6)))
        .collect();
    let t0 = Instant::now();
    let bvh = build_bvh(&big).unwrap();
    let accel: Vec<usize> = qs.iter().map(|q| bvh.closest_point(q).triangle).collect();
    let t_bvh = t0.elapsed().as_secs_f64();
    let t0 = Instant::now();
    let brute: Vec<usize> = qs
        .iter()
        .map(|q| rigfield::bvh::closest_point_brute_force(&tris, q).triangle)
        .collect();
    let t_brute = t0.elapsed().as_secs_f64();
    let agree = accel.iter().zip(&brute).filter(|(a, b)| a == b).count();
    let speedup = t_brute / t_bvh;
    let secs = start.elapsed().as_secs_f64();
    Outcome::new(
        mismatches == 0 && index_diffs == 0 && speedup >= 10.0 && agree == qs.len() && secs < 120.0,
        format!(
            "{queries} queries, {mismatches} distance mismatches, {index_diffs} index differences; {} triangles x 10000 queries: \
             bvh {:.0} ms with build, brute force {:.0} ms, speedup {speedup:.0}x, {agree} identical",
            tris.len(),
            t_bvh * 1e3,
            t_brute * 1e3
        ),
    )
}

/// Smooth four-way partition of the sphere used as the analytic skin.
fn analytic(p: &Vec3) -> Vec<f64> {
    let centers = [
        Vec3::new(1.0, 0.0, 0.0),
        Vec3::new(-0.5, 0.8, 0.0),
        Vec3::new(-0.5, -0.4, 0.7),
        Vec3::new(0.0, -0.5, -0.8),
    ];
    let e: Vec<f64> = centers
        .iter()
        .map(|c| (-(p.normalize() - c).norm_squared() / 0.5).exp())
        .collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

fn four_joints() -> Skeleton {
    Skeleton::new(
        (0..4).map(|i| Vec3::new(0.1 * i as f64, 0.0, 0.0)).collect(),
        vec![None, Some(0), Some(1), Some(2)],
    )
    .unwrap()
}

fn transfer_error(w: &SkinWeights, dst: &Mesh) -> f64 {
    let truth: Vec<Vec<f64>> = dst.vertices.iter().map(analytic).collect();
    oracle::mean_l1(&truth, &w.to_dense())
}

pub fn fidelity() -> Outcome {
    // A latitude-longitude sphere is unevenly sampled: rings crowd at the
    // poles. The source is that sphere decimated by the given ratio.
    let dst = uv_sphere(&Vec3::zeros(), 1.0, 96, 48);
    let mut lines = Vec::new();
    let mut pass = true;
    for ratio in [2usize, 4, 8] {
        let f = (ratio as f64).sqrt();
        let src = uv_sphere(
            &Vec3::zeros(),
            1.0,
            (96.0 / f).round() as usize,
            (48.0 / f).round() as usize,
        );
        let rows: Vec<Vec<f64>> = src.vertices.iter().map(analytic).collect();
        let rig = Rig::new(src, four_joints(), Some(SkinWeights::from_dense(4, &rows))).unwrap();
        let eb = transfer_error(&transfer_skin_bvh(&rig, &dst).unwrap(), &dst);
        let en = transfer_error(&transfer_skin_nn(&rig, &dst).unwrap(), &dst);
        pass &= eb < en;
        if ratio == 8 {
            pass &= en >= 2.0 * eb;
        }
        lines.push(format!("ratio {ratio}: bvh {eb:.4} vs nearest {en:.4} ({:.1}x)", en / eb));
    }
    Outcome::new(pass, lines.join(", "))
}

fn random_embeddings(vertices: usize, joints: usize, rng: &mut ChaCha8Rng) -> SkinEmbeddings {
    let c = 4;
    let scale = rng.random_range(0.1..30.0);
    SkinEmbeddings {
        joint_embeddings: DMatrix::from_fn(joints, c, |_, _| rng.random_range(-scale..scale)),
        vertex_embeddings: DMatrix::from_fn(vertices, c, |_, _| rng.random_range(-scale..scale)),
        temperatures: (0..vertices).map(|_| 10f64.powf(rng.random_range(-3.0..2.0))).collect(),
        lift_joint: AffineLift::identity(c),
        lift_vertex: AffineLift::identity(c),
    }
}

fn worst_sum_error(w: &SkinWeights) -> f64 {
    (0..w.vertex_count())
        .map(|v| (w.weight_sum(v) - 1.0).abs())
        .fold(0.0, f64::max)
}

pub fn partition_of_unity() -> Outcome {
    let families = [Family::Chain, Family::Star, Family::Tree, Family::Quadruped];
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut decoded, mut bvh, mut nn) = (0usize, 0usize, 0usize);
    let mut worst = 0.0f64;
    let mut seed = 0;
    while decoded.min(bvh).min(nn) < 10_000 {
        let spec = |seed: u64, style| SynthSpec {
            family: families[seed as usize % 4],
            joint_count: 3 + seed as usize % 6,
            mesh_style: style,
            seed,
            ..SynthSpec::default()
        };
        let src = generate(&spec(seed, MeshStyle::Capsule)).unwrap();
        let dst = generate(&spec(seed + 1000, MeshStyle::Sphere)).unwrap().mesh;
        let emb = random_embeddings(src.mesh.vertices.len(), src.skeleton.len(), &mut rng);
        let d = decode_skin(&emb).unwrap();
        let b = transfer_skin_bvh(&src, &dst).unwrap();
        let n = transfer_skin_nn(&src, &dst).unwrap();
        for w in [&d, &b, &n] {
            worst = worst.max(worst_sum_error(w));
        }
        decoded += d.vertex_count();
        bvh += b.vertex_count();
        nn += n.vertex_count();
        seed += 1;
    }
    Outcome::new(
        worst <= 1e-6,
        format!(
            "{seed} rigs; {decoded} decoded, {bvh} bvh and {nn} nearest-vertex rows; worst |sum - 1| {worst:.1e}"
        ),
    )
}
