use std::path::PathBuf;

use clap::Args;
use morphfit::mesh::io::{save_mesh, MeshFormat};
use morphfit::shapemodel::{build_low_rank, GaussianKernel};
use morphfit::{synth, Error, Result};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Args)]
pub struct SynthArgs {
    /// Base shape: ellipsoid, cylinder, or plate.
    #[arg(long)]
    pub shape: String,
    #[arg(long, default_value_t = 16)]
    pub resolution: u32,
    #[arg(long)]
    pub output_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of deformed targets to generate (with --deform).
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// Draw random in-span targets from a model built on the base shape;
    /// ships the true coefficients next to each target.
    #[arg(long)]
    pub deform: bool,
    /// Kernel variance for --deform (mm^2).
    #[arg(long)]
    pub scale: Option<f64>,
    /// Kernel bandwidth for --deform (mm).
    #[arg(long)]
    pub bandwidth: Option<f64>,
    /// Model rank for --deform.
    #[arg(long)]
    pub rank: Option<usize>,
    /// Scale factor on the drawn coefficients for --deform.
    #[arg(long, default_value_t = 1.0)]
    pub deform_scale: f64,
    /// Centre of the excised region, as "x,y,z" (mm).
    #[arg(long)]
    pub excise_center: Option<String>,
    /// Radius of the excised region (mm).
    #[arg(long)]
    pub excise_radius: Option<f64>,
    /// Ellipsoid semi-axes as "a,b,c" (mm).
    #[arg(long)]
    pub radii: Option<String>,
    /// Cylinder radius (mm).
    #[arg(long, default_value_t = 3.0)]
    pub radius: f64,
    /// Cylinder length (mm).
    #[arg(long, default_value_t = 60.0)]
    pub length: f64,
    /// Plate side length (mm).
    #[arg(long, default_value_t = 60.0)]
    pub size: f64,
    #[arg(long, default_value_t = 12.0)]
    pub bump_height: f64,
    #[arg(long, default_value_t = 10.0)]
    pub bump_radius: f64,
}

#[derive(serde::Serialize)]
struct Truth {
    seed: u64,
    coefficients: Vec<f64>,
}

pub fn run(args: SynthArgs) -> Result<()> {
    let base = match args.shape.as_str() {
        "ellipsoid" => {
            let radii = match &args.radii {
                Some(text) => {
                    let p = super::parse_point(text)?;
                    [p.x, p.y, p.z]
                }
                None => [30.0, 25.0, 20.0],
            };
            synth::ellipsoid(args.resolution, radii)?
        }
        "cylinder" => synth::thin_cylinder(args.resolution, args.radius, args.length)?,
        "plate" => synth::plate_with_bump(
            args.resolution,
            args.size,
            args.bump_height,
            args.bump_radius,
        )?,
        other => {
            return Err(Error::Validation(format!(
                "unknown shape {other:?}; expected ellipsoid, cylinder, or plate"
            )))
        }
    };

    std::fs::create_dir_all(&args.output_dir)
        .map_err(|e| Error::Io { path: Some(args.output_dir.clone()), source: e })?;

    let excision = match (&args.excise_center, args.excise_radius) {
        (Some(center), Some(radius)) => Some((super::parse_point(center)?, radius)),
        (None, None) => None,
        _ => {
            return Err(Error::Validation(
                "excision needs both --excise-center and --excise-radius".to_string(),
            ))
        }
    };

    let reference_path = args.output_dir.join("reference.ply");
    save_mesh(&base, &reference_path, MeshFormat::PlyBinaryLe, None)?;
    println!("wrote {}", reference_path.display());

    let excise_applied = |mesh: &morphfit::TriangleMesh| -> Result<morphfit::TriangleMesh> {
        match &excision {
            Some((center, radius)) => {
                if *radius > 0.0 {
                    synth::excise(mesh, center, *radius)
                } else {
                    Ok(mesh.clone())
                }
            }
            None => Ok(mesh.clone()),
        }
    };

    if args.deform {
        let (Some(scale), Some(bandwidth), Some(rank)) =
            (args.scale, args.bandwidth, args.rank)
        else {
            return Err(Error::Validation(
                "--deform needs --scale, --bandwidth, and --rank".to_string(),
            ));
        };
        let kernel = GaussianKernel::new(scale, bandwidth)?;
        let model = build_low_rank(&kernel, &base, rank)?;
        let model_path = args.output_dir.join("model.json");
        model.save(&model_path)?;
        println!("wrote {}", model_path.display());

        for k in 0..args.count {
            let target_seed = args.seed + k as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(target_seed);
            let alpha = DVector::from_fn(model.rank(), |_, _| {
                rng.sample::<f64, _>(rand_distr::StandardNormal) * args.deform_scale
            });
            let target = excise_applied(&model.instance(&alpha)?)?;

            let mesh_path = args.output_dir.join(format!("target-{k:03}.ply"));
            save_mesh(&target, &mesh_path, MeshFormat::PlyBinaryLe, None)?;
            let truth = Truth {
                seed: target_seed,
                coefficients: alpha.iter().copied().collect(),
            };
            let truth_path = args.output_dir.join(format!("truth-{k:03}.json"));
            let json = serde_json::to_vec_pretty(&truth)
                .map_err(|e| Error::Validation(format!("truth serialization failed: {e}")))?;
            std::fs::write(&truth_path, json)
                .map_err(|e| Error::Io { path: Some(truth_path.clone()), source: e })?;
            println!("wrote {} (+ {})", mesh_path.display(), truth_path.display());
        }
    } else if excision.is_some() {
        let target = excise_applied(&base)?;
        let path = args.output_dir.join("target-000.ply");
        save_mesh(&target, &path, MeshFormat::PlyBinaryLe, None)?;
        println!("wrote {}", path.display());
    }

    Ok(())
}
