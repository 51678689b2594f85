use std::path::PathBuf;

use clap::Args;
use morphfit::shapemodel::{build_low_rank_with, BuildOptions, GaussianKernel};
use morphfit::Result;

#[derive(Args)]
pub struct BuildModelArgs {
    /// Reference mesh (.ply or .obj).
    #[arg(long)]
    pub reference: PathBuf,
    /// Kernel variance s (mm^2).
    #[arg(long)]
    pub scale: f64,
    /// Kernel bandwidth sigma (mm).
    #[arg(long)]
    pub bandwidth: f64,
    /// Number of basis functions to keep.
    #[arg(long)]
    pub rank: usize,
    /// Output model file (JSON container).
    #[arg(long)]
    pub output: PathBuf,
    /// Vertex count above which the landmark approximation kicks in.
    #[arg(long)]
    pub nystrom_threshold: Option<usize>,
    /// Landmark count for the approximation.
    #[arg(long)]
    pub nystrom_landmarks: Option<usize>,
    /// Seed of the landmark subsample.
    #[arg(long, default_value_t = 0)]
    pub nystrom_seed: u64,
}

pub fn run(args: BuildModelArgs) -> Result<()> {
    let reference = super::load_mesh_auto(&args.reference)?;
    let kernel = GaussianKernel::new(args.scale, args.bandwidth)?;

    let capacity = 3 * reference.vertex_count();
    let rank = if args.rank > capacity {
        eprintln!(
            "warning: rank {} exceeds 3 x vertex count; clamping to {capacity}",
            args.rank
        );
        capacity
    } else {
        args.rank
    };

    let defaults = BuildOptions::default();
    let options = BuildOptions {
        nystrom_threshold: args.nystrom_threshold.unwrap_or(defaults.nystrom_threshold),
        nystrom_landmarks: args.nystrom_landmarks.unwrap_or(defaults.nystrom_landmarks),
        nystrom_seed: args.nystrom_seed,
    };
    let model = build_low_rank_with(&kernel, &reference, rank, &options)?;
    model.save(&args.output)?;

    let ev = model.eigenvalues();
    let total: f64 = ev.iter().sum();
    println!(
        "model: {} vertices, rank {}",
        reference.vertex_count(),
        model.rank()
    );
    println!(
        "spectrum: lambda_1 = {:.6} mm^2, lambda_{} = {:.6} mm^2, total variance = {:.6} mm^2",
        ev[0],
        model.rank(),
        ev[model.rank() - 1],
        total
    );
    println!("wrote {}", args.output.display());
    Ok(())
}
