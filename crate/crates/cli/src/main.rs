//! `rigfield` command line tool.
//!
//! Exit codes: 0 on success, 1 for I/O failures, 2 for invalid input or
//! arguments, 3 for numeric failures.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rigfield::{Error, ErrorKind};

#[derive(Parser, Debug)]
#[command(name = "rigfield", version, about = "Skeleton and skin fields for rigged meshes")]
struct Cli {
    /// Suppress summaries on standard output.
    #[arg(long, short, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Rasterize a rig's surface and bones into sparse voxel grids.
    Voxelize(VoxelizeArgs),
    /// Encode a rig's skeleton as a voxel field.
    EncodeField(EncodeArgs),
    /// Recover a skeleton from a field by mean-shift clustering.
    DecodeSkeleton(DecodeArgs),
    /// Encode, optionally perturb, decode, and score against the input.
    Roundtrip(RoundtripArgs),
    /// Move a rig's skin onto another mesh.
    TransferSkin(TransferArgs),
    /// Sample a random pose and skin the mesh with it.
    Perturb(PerturbArgs),
    /// Score predicted rigs against reference rigs.
    Eval(EvalArgs),
    /// Fit skin embeddings that decode to a rig's skin.
    FitSkin(FitSkinArgs),
    /// Generate a synthetic rig, optionally corrupted.
    Syngen(SyngenArgs),
}

#[derive(clap::Args, Debug)]
struct VoxelizeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 64)]
    resolution: u32,
    /// Chebyshev dilation radius of the bone support, in voxels.
    #[arg(long, default_value_t = 2)]
    dilate: u32,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(clap::Args, Debug)]
struct EncodeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 64)]
    resolution: u32,
    #[arg(long, default_value_t = 2)]
    dilate: u32,
    /// Gaussian noise on both offsets, in voxel edges.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(clap::Args, Debug)]
struct DecodeArgs {
    #[arg(long)]
    input: PathBuf,
    /// Output rig; its mesh is empty.
    #[arg(long)]
    output: PathBuf,
    /// Mean-shift bandwidth, in voxel edges.
    #[arg(long, default_value_t = 2.0)]
    bandwidth: f64,
    #[arg(long, default_value_t = 3)]
    min_cluster_size: usize,
    #[arg(long, default_value_t = 10)]
    iterations: usize,
}

#[derive(clap::Args, Debug)]
struct RoundtripArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 64)]
    resolution: u32,
    #[arg(long, default_value_t = 2)]
    dilate: u32,
    /// Mean-shift bandwidth, in voxel edges.
    #[arg(long, default_value_t = 2.0)]
    bandwidth: f64,
    /// Gaussian noise on both offsets, in voxel edges.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 1)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum TransferMethod {
    Bvh,
    Nn,
}

#[derive(clap::Args, Debug)]
struct TransferArgs {
    /// Rig whose skin is transferred.
    #[arg(long)]
    source: PathBuf,
    /// Rig providing the destination mesh; its skeleton and skin are ignored.
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, value_enum, default_value_t = TransferMethod::Bvh)]
    method: TransferMethod,
    /// Hierarchy cache for the source mesh, reused when valid and written
    /// otherwise.
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Print per-query timings of the hierarchy, nearest-vertex lookup and a
    /// brute-force scan.
    #[arg(long)]
    bench: bool,
    /// Number of queries timed for the brute-force scan.
    #[arg(long, default_value_t = 1000)]
    bench_sample: usize,
}

#[derive(clap::Args, Debug)]
struct PerturbArgs {
    #[arg(long)]
    input: PathBuf,
    /// Posed rig.
    #[arg(long)]
    output: PathBuf,
    /// Pose file.
    #[arg(long)]
    pose_output: PathBuf,
    /// Probability that a joint is rotated.
    #[arg(long, default_value_t = 0.8)]
    prob: f64,
    /// Largest rotation angle, in degrees.
    #[arg(long, default_value_t = 60.0)]
    max_deg: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum AlignArg {
    None,
    Icp,
}

#[derive(clap::Args, Debug)]
struct EvalArgs {
    /// Predicted rig file, or a directory of them.
    #[arg(long)]
    pred: PathBuf,
    /// Reference rig file, or a directory paired with `--pred` by file stem.
    #[arg(long)]
    gt: PathBuf,
    /// Directory for per-pair reports, the summary and the table.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = AlignArg::Icp)]
    align: AlignArg,
    #[arg(long, default_value_t = 100)]
    icp_restarts: usize,
    #[arg(long, default_value_t = 50)]
    icp_iterations: usize,
    #[arg(long, default_value_t = 32)]
    samples_per_bone: usize,
    /// Entropic regularization relative to the mean transport cost.
    #[arg(long, default_value_t = 1e-3)]
    epsilon_scale: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads for evaluating pairs; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum LiftArg {
    Affine,
    Identity,
}

#[derive(clap::Args, Debug)]
struct FitSkinArgs {
    #[arg(long)]
    input: PathBuf,
    /// Embeddings file.
    #[arg(long)]
    output: PathBuf,
    /// Optional copy of the input rig with the decoded skin.
    #[arg(long)]
    decoded_output: Option<PathBuf>,
    #[arg(long, default_value_t = 5000)]
    iterations: usize,
    #[arg(long, default_value_t = 0.5)]
    learning_rate: f64,
    #[arg(long, default_value_t = 4)]
    channels: usize,
    #[arg(long, default_value_t = 64)]
    lifted_dim: usize,
    #[arg(long, value_enum, default_value_t = LiftArg::Affine)]
    lift: LiftArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum FamilyArg {
    Chain,
    Star,
    Tree,
    Quadruped,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum MeshArg {
    Capsule,
    Sphere,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum CorruptionArg {
    InsertMidBone,
    DuplicateBranch,
    DeleteBranch,
    JitterJoints,
}

#[derive(clap::Args, Debug)]
struct SyngenArgs {
    #[arg(long, value_enum, default_value_t = FamilyArg::Chain)]
    family: FamilyArg,
    /// Joint count; the quadruped layout ignores it.
    #[arg(long, default_value_t = 5)]
    joints: usize,
    #[arg(long, default_value_t = 0.8)]
    min_bone: f64,
    #[arg(long, default_value_t = 1.2)]
    max_bone: f64,
    #[arg(long, value_enum, default_value_t = MeshArg::Capsule)]
    mesh: MeshArg,
    /// Skin falloff relative to the mean bone length.
    #[arg(long, default_value_t = 0.15)]
    falloff: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, value_enum)]
    corrupt: Option<CorruptionArg>,
    #[arg(long, default_value_t = 0.01)]
    magnitude: f64,
    /// Seed of the corruption; defaults to `--seed`.
    #[arg(long)]
    corrupt_seed: Option<u64>,
}

fn exit_code(err: &Error) -> u8 {
    match err.kind() {
        ErrorKind::Io => 1,
        ErrorKind::Validation => 2,
        ErrorKind::Numeric => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out = commands::Output { quiet: cli.quiet };
    let result = match cli.command {
        Command::Voxelize(a) => commands::voxelize(&a, &out),
        Command::EncodeField(a) => commands::encode_field(&a, &out),
        Command::DecodeSkeleton(a) => commands::decode_skeleton(&a, &out),
        Command::Roundtrip(a) => commands::roundtrip(&a, &out),
        Command::TransferSkin(a) => commands::transfer_skin(&a, &out),
        Command::Perturb(a) => commands::perturb(&a, &out),
        Command::Eval(a) => commands::eval(&a, &out),
        Command::FitSkin(a) => commands::fit_skin(&a, &out),
        Command::Syngen(a) => commands::syngen(&a, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
