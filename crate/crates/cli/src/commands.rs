use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use rigfield::animate::{perturb_pose, posed_joints, skin_mesh};
use rigfield::bvh::{build_bvh, transfer_skin_nn, transfer_with, TriangleBvh};
use rigfield::metrics::{
    chamfer_metrics, evaluate, format_table, gromov_wasserstein, Alignment, EvalSettings,
    MetricReport, OtSettings, Scores, DEFAULT_SAMPLES_PER_BONE,
};
use rigfield::skeleton_field::{self as field, structural_match, ClusterParams, SkeletonField};
use rigfield::skin_field::{decode_skin, fit_skin_embeddings, FitConfig, LiftMode};
use rigfield::syngen::{corrupt, generate, Corruption, Family, MeshStyle, SynthSpec};
use rigfield::voxel::{voxelize_skeleton, voxelize_surface};
use rigfield::{load_rig, normalize_rig, save_rig, Error, ErrorKind, Mesh, Result, Rig};
use serde::Serialize;
use serde_json::json;

use crate::{
    AlignArg, CorruptionArg, DecodeArgs, EncodeArgs, EvalArgs, FamilyArg, FitSkinArgs, LiftArg,
    MeshArg, PerturbArgs, RoundtripArgs, SyngenArgs, TransferArgs, TransferMethod, VoxelizeArgs,
};

pub struct Output {
    pub quiet: bool,
}

impl Output {
    fn line(&self, text: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", text.as_ref());
        }
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::Precondition(msg.into())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn normalized_rig(path: &Path) -> Result<Rig> {
    Ok(normalize_rig(&load_rig(path)?)?.rig)
}

pub fn voxelize(args: &VoxelizeArgs, out: &Output) -> Result<()> {
    let rig = normalized_rig(&args.input)?;
    let surface = voxelize_surface(&rig.mesh, args.resolution)?;
    let bones = voxelize_skeleton(&rig.skeleton, args.resolution, args.dilate)?;
    fs::create_dir_all(&args.out_dir)?;
    surface.save(args.out_dir.join("surface_grid.json"))?;
    bones.save(args.out_dir.join("skeleton_grid.json"))?;
    out.line(format!(
        "surface voxels: {}\nskeleton voxels: {}",
        surface.len(),
        bones.len()
    ));
    Ok(())
}

fn check_noise(noise: f64) -> Result<()> {
    if noise >= 0.0 && noise.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("noise {noise} must be finite and nonnegative")))
    }
}

pub fn encode_field(args: &EncodeArgs, out: &Output) -> Result<()> {
    check_noise(args.noise)?;
    let rig = normalized_rig(&args.input)?;
    let grid = voxelize_skeleton(&rig.skeleton, args.resolution, args.dilate)?;
    let mut encoded = field::encode_field(&rig.skeleton, &grid)?;
    if args.noise > 0.0 {
        encoded = encoded.with_offset_noise(args.noise / args.resolution as f64, args.seed)?;
    }
    encoded.save(&args.output)?;
    out.line(format!("field samples: {}", encoded.len()));
    Ok(())
}

fn cluster_params(bandwidth_edges: f64, resolution: u32) -> Result<ClusterParams> {
    let params = ClusterParams::new(bandwidth_edges / resolution as f64);
    params.validate()?;
    Ok(params)
}

pub fn decode_skeleton(args: &DecodeArgs, out: &Output) -> Result<()> {
    let input = SkeletonField::load(&args.input)?;
    let mut params = cluster_params(args.bandwidth, input.grid().resolution())?;
    params.min_cluster_size = args.min_cluster_size;
    params.iterations = args.iterations;
    params.validate()?;
    let skeleton = field::decode_skeleton(&input, &params)?;
    let joints = skeleton.len();
    save_rig(&Rig::new(Mesh::default(), skeleton, None)?, &args.output)?;
    out.line(format!("decoded joints: {joints}"));
    Ok(())
}

#[derive(Serialize)]
struct TrialReport {
    seed: u64,
    joint_count: Option<usize>,
    topology_exact: bool,
    joint_to_joint: Option<f64>,
    joint_to_joint_edges: Option<f64>,
    joint_to_bone: Option<f64>,
    bone_to_bone: Option<f64>,
    gromov_wasserstein: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

pub fn roundtrip(args: &RoundtripArgs, out: &Output) -> Result<()> {
    check_noise(args.noise)?;
    if args.trials == 0 {
        return Err(invalid("at least one trial is required"));
    }
    let rig = normalized_rig(&args.input)?;
    let grid = voxelize_skeleton(&rig.skeleton, args.resolution, args.dilate)?;
    let clean = field::encode_field(&rig.skeleton, &grid)?;
    let params = cluster_params(args.bandwidth, args.resolution)?;
    let edge = 1.0 / args.resolution as f64;
    let ot = OtSettings::default();

    let mut trials = Vec::with_capacity(args.trials);
    let mut first_decoded = None;
    for t in 0..args.trials {
        let seed = args.seed.wrapping_add(t as u64);
        let noisy = if args.noise > 0.0 {
            clean.with_offset_noise(args.noise * edge, seed)?
        } else {
            clean.clone()
        };
        let report = match field::decode_skeleton(&noisy, &params) {
            Ok(decoded) => {
                let c = chamfer_metrics(&decoded, &rig.skeleton, DEFAULT_SAMPLES_PER_BONE)?;
                let gw = gromov_wasserstein(&decoded, &rig.skeleton, &ot)?;
                let exact = structural_match(&rig.skeleton, &decoded, edge).is_some();
                let joints = decoded.len();
                if first_decoded.is_none() {
                    first_decoded = Some(decoded);
                }
                TrialReport {
                    seed,
                    joint_count: Some(joints),
                    topology_exact: exact,
                    joint_to_joint: Some(c.joint_to_joint),
                    joint_to_joint_edges: Some(c.joint_to_joint / edge),
                    joint_to_bone: Some(c.joint_to_bone),
                    bone_to_bone: Some(c.bone_to_bone),
                    gromov_wasserstein: Some(gw),
                    error: None,
                }
            }
            Err(e) if e.kind() == ErrorKind::Numeric => TrialReport {
                seed,
                joint_count: None,
                topology_exact: false,
                joint_to_joint: None,
                joint_to_joint_edges: None,
                joint_to_bone: None,
                bone_to_bone: None,
                gromov_wasserstein: None,
                error: Some(e.to_string()),
            },
            Err(e) => return Err(e),
        };
        trials.push(report);
    }
    let exact = trials.iter().filter(|t| t.topology_exact).count();
    let fraction = exact as f64 / args.trials as f64;
    fs::create_dir_all(&args.out_dir)?;
    if let Some(skeleton) = first_decoded {
        save_rig(&Rig::new(Mesh::default(), skeleton, None)?, args.out_dir.join("recovered.json"))?;
    }
    let report = json!({
        "resolution": args.resolution,
        "dilation": args.dilate,
        "bandwidth_edges": args.bandwidth,
        "noise_edges": args.noise,
        "seed": args.seed,
        "trials": args.trials,
        "reference_joint_count": rig.skeleton.len(),
        "topology_exact_count": exact,
        "topology_exact_fraction": fraction,
        "topology_exact": exact == args.trials,
        "per_trial": trials,
    });
    write_json(&args.out_dir.join("roundtrip.json"), &report)?;
    out.line(format!(
        "topology exact in {exact}/{} trials ({:.1}%)",
        args.trials,
        100.0 * fraction
    ));
    Ok(())
}

fn cached_bvh(mesh: &Mesh, cache: Option<&PathBuf>, out: &Output) -> Result<TriangleBvh> {
    if let Some(path) = cache {
        if path.exists() {
            match TriangleBvh::load(path, mesh) {
                Ok(bvh) => return Ok(bvh),
                Err(e) if e.kind() == ErrorKind::Io => return Err(e),
                Err(e) => out.line(format!("rebuilding stale cache: {e}")),
            }
        }
        let bvh = build_bvh(mesh)?;
        bvh.save(path)?;
        return Ok(bvh);
    }
    build_bvh(mesh)
}

pub fn transfer_skin(args: &TransferArgs, out: &Output) -> Result<()> {
    let source = load_rig(&args.source)?;
    let skin = source.require_skin()?.clone();
    let target = load_rig(&args.target)?;
    let mesh = target.mesh;
    let weights = match args.method {
        TransferMethod::Bvh => {
            let bvh = cached_bvh(&source.mesh, args.cache.as_ref(), out)?;
            transfer_with(&bvh, &source.mesh, &skin, &mesh)?
        }
        TransferMethod::Nn => transfer_skin_nn(&source, &mesh)?,
    };
    if args.bench {
        bench(&source, &mesh, args.bench_sample, out)?;
    }
    let result = Rig::new(mesh, source.skeleton.clone(), Some(weights))?;
    save_rig(&result, &args.output)?;
    out.line(format!("transferred skin to {} vertices", result.mesh.vertices.len()));
    Ok(())
}

fn bench(source: &Rig, mesh: &Mesh, sample: usize, out: &Output) -> Result<()> {
    if mesh.vertices.is_empty() {
        return Err(invalid("benchmark needs destination vertices"));
    }
    let queries = &mesh.vertices;
    let t = Instant::now();
    let bvh = build_bvh(&source.mesh)?;
    let build = t.elapsed();
    let t = Instant::now();
    let hits = bvh.closest_points(queries);
    let bvh_time = t.elapsed();
    let t = Instant::now();
    transfer_skin_nn(source, mesh)?;
    let nn_time = t.elapsed();
    let sample = sample.clamp(1, queries.len());
    let stride = queries.len() / sample;
    let picked: Vec<usize> = (0..sample).map(|k| k * stride).collect();
    let t = Instant::now();
    let brute: Vec<_> = picked
        .par_iter()
        .map(|&i| bvh.closest_point_brute_force(&queries[i]))
        .collect();
    let brute_time = t.elapsed();
    let agree = picked
        .iter()
        .zip(&brute)
        .filter(|(&i, b)| hits[i].triangle == b.triangle)
        .count();
    let per = |d: std::time::Duration, n: usize| d.as_secs_f64() * 1e6 / n as f64;
    let (b, n, s) = (
        per(bvh_time, queries.len()),
        per(nn_time, queries.len()),
        per(brute_time, sample),
    );
    out.line(format!(
        "triangles: {}, queries: {}\n\
         bvh build: {:.3} ms\n\
         bvh: {b:.3} us/query\n\
         nearest vertex: {n:.3} us/query\n\
         brute force: {s:.3} us/query over {sample} queries ({agree} identical hits)\n\
         bvh speedup over brute force: {:.1}x",
        source.mesh.triangles.len(),
        queries.len(),
        build.as_secs_f64() * 1e3,
        s / b,
    ));
    Ok(())
}

pub fn perturb(args: &PerturbArgs, out: &Output) -> Result<()> {
    let rig = load_rig(&args.input)?;
    rig.require_skin()?;
    let pose = perturb_pose(&rig.skeleton, args.prob, args.max_deg, args.seed)?;
    let mesh = skin_mesh(&rig, &pose)?;
    let mut skeleton = rig.skeleton.clone();
    skeleton.joints = posed_joints(&rig.skeleton, &pose)?;
    let posed = Rig::new(mesh, skeleton, rig.skin.clone())?;
    save_rig(&posed, &args.output)?;
    pose.save(&args.pose_output)?;
    let rotated = pose.rotations.iter().filter(|q| q.angle() > 0.0).count();
    out.line(format!("rotated {rotated} of {} joints (seed {})", pose.len(), args.seed));
    Ok(())
}

fn rig_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut files = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "json") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                files.insert(stem.to_string(), path.clone());
            }
        }
    }
    Ok(files)
}

fn pairs(pred: &Path, gt: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    match (pred.is_dir(), gt.is_dir()) {
        (false, false) => {
            let name = pred
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("pred")
                .to_string();
            Ok(vec![(name, pred.to_path_buf(), gt.to_path_buf())])
        }
        (true, true) => {
            let p = rig_files(pred)?;
            let g = rig_files(gt)?;
            if !p.keys().eq(g.keys()) {
                return Err(invalid(format!(
                    "prediction and reference directories hold different file stems ({} vs {} files)",
                    p.len(),
                    g.len()
                )));
            }
            if p.is_empty() {
                return Err(invalid("no rig files to evaluate"));
            }
            Ok(p.into_iter()
                .zip(g.into_values())
                .map(|((name, pp), gp)| (name, pp, gp))
                .collect())
        }
        _ => Err(invalid("--pred and --gt must both be files or both be directories")),
    }
}

fn rebuild(kind: ErrorKind, msg: String) -> Error {
    match kind {
        ErrorKind::Io => Error::Io(std::io::Error::other(msg)),
        ErrorKind::Validation => Error::Precondition(msg),
        ErrorKind::Numeric => Error::Numeric(msg),
    }
}

pub fn eval(args: &EvalArgs, out: &Output) -> Result<()> {
    let settings = EvalSettings {
        alignment: match args.align {
            AlignArg::None => Alignment::None,
            AlignArg::Icp => Alignment::Icp,
        },
        icp_restarts: args.icp_restarts,
        icp_iterations: args.icp_iterations,
        seed: args.seed,
        samples_per_bone: args.samples_per_bone,
        ot: OtSettings {
            epsilon_scale: args.epsilon_scale,
            ..OtSettings::default()
        },
    };
    settings.ot.validate()?;
    if args.icp_restarts == 0 {
        return Err(invalid("--icp-restarts must be at least 1"));
    }
    let pairs = pairs(&args.pred, &args.gt)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs)
        .build()
        .map_err(|e| invalid(e.to_string()))?;
    let results: Vec<Result<MetricReport>> = pool.install(|| {
        pairs
            .par_iter()
            .map(|(_, p, g)| evaluate(&load_rig(p)?, &load_rig(g)?, &settings))
            .collect()
    });

    let mut rows = Vec::new();
    let mut entries = Vec::new();
    let mut failure = None;
    for ((name, _, _), result) in pairs.iter().zip(results) {
        match result {
            Ok(report) => {
                rows.push((name.clone(), report.scores));
                entries.push(json!({ "name": name, "report": report }));
            }
            Err(e) => {
                let msg = format!("{name}: {e}");
                eprintln!("error: {msg}");
                entries.push(json!({ "name": name, "error": e.to_string() }));
                failure.get_or_insert((e.kind(), msg));
            }
        }
    }
    let mean = Scores::mean(rows.iter().map(|(_, s)| s));
    let mut table_rows = rows.clone();
    if let Some(m) = mean {
        table_rows.push(("mean".to_string(), m));
    }
    let table = format_table(&table_rows);
    if let Some(dir) = &args.out_dir {
        fs::create_dir_all(dir)?;
        for entry in &entries {
            if let (Some(name), Some(report)) = (entry["name"].as_str(), entry.get("report")) {
                write_json(&dir.join(format!("{name}.json")), report)?;
            }
        }
        let summary = json!({
            "seed": args.seed,
            "align": format!("{:?}", args.align).to_lowercase(),
            "icp_restarts": args.icp_restarts,
            "pairs": entries,
            "mean": mean,
        });
        write_json(&dir.join("summary.json"), &summary)?;
        fs::write(dir.join("table.txt"), &table)?;
    }
    out.line(table.trim_end());
    match failure {
        Some((kind, msg)) => Err(rebuild(kind, msg)),
        None => Ok(()),
    }
}

pub fn fit_skin(args: &FitSkinArgs, out: &Output) -> Result<()> {
    let rig = load_rig(&args.input)?;
    let skin = rig.require_skin()?;
    let config = FitConfig {
        iterations: args.iterations,
        learning_rate: args.learning_rate,
        seed: args.seed,
        channels: args.channels,
        lifted_dim: args.lifted_dim,
        lift: match args.lift {
            LiftArg::Affine => LiftMode::Affine,
            LiftArg::Identity => LiftMode::Identity,
        },
        ..FitConfig::default()
    };
    let report = fit_skin_embeddings(skin, &rig.skeleton, &config)?;
    report.embeddings.save(&args.output)?;
    if let Some(path) = &args.decoded_output {
        let decoded = decode_skin(&report.embeddings)?;
        save_rig(&Rig::new(rig.mesh.clone(), rig.skeleton.clone(), Some(decoded))?, path)?;
    }
    out.line(format!(
        "final mean KL: {:.6} after {} iterations",
        report.final_loss, report.iterations
    ));
    Ok(())
}

pub fn syngen(args: &SyngenArgs, out: &Output) -> Result<()> {
    let spec = SynthSpec {
        family: match args.family {
            FamilyArg::Chain => Family::Chain,
            FamilyArg::Star => Family::Star,
            FamilyArg::Tree => Family::Tree,
            FamilyArg::Quadruped => Family::Quadruped,
        },
        joint_count: args.joints,
        bone_length: (args.min_bone, args.max_bone),
        mesh_style: match args.mesh {
            MeshArg::Capsule => MeshStyle::Capsule,
            MeshArg::Sphere => MeshStyle::Sphere,
        },
        falloff: args.falloff,
        seed: args.seed,
    };
    let mut rig = generate(&spec)?;
    if let Some(kind) = args.corrupt {
        let kind = match kind {
            CorruptionArg::InsertMidBone => Corruption::InsertMidBone,
            CorruptionArg::DuplicateBranch => Corruption::DuplicateBranch,
            CorruptionArg::DeleteBranch => Corruption::DeleteBranch,
            CorruptionArg::JitterJoints => Corruption::JitterJoints,
        };
        rig = corrupt(&rig, kind, args.magnitude, args.corrupt_seed.unwrap_or(args.seed))?;
    }
    save_rig(&rig, &args.output)?;
    out.line(format!(
        "{} joints, {} vertices, {} triangles",
        rig.skeleton.len(),
        rig.mesh.vertices.len(),
        rig.mesh.triangles.len()
    ));
    Ok(())
}
