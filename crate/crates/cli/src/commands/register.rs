use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use clap::Args;
use morphfit::registration::{
    artifacts, register_icp, register_mcmc, RegistrationResult,
};
use morphfit::shapemodel::{build_low_rank, GaussianKernel, LowRankGP};
use morphfit::{Error, Result, TriangleMesh};

use crate::config::{ReconstructSection, RunConfig};

#[derive(Args)]
pub struct RegisterArgs {
    /// TOML run configuration; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Serialized model file.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Target mesh; repeat for batches.
    #[arg(long = "target")]
    pub targets: Vec<PathBuf>,
    /// mcmc or icp.
    #[arg(long)]
    pub method: Option<String>,
    /// l2, hausdorff, or collective.
    #[arg(long)]
    pub likelihood: Option<String>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub rate: Option<f64>,
    /// cp, random-walk, or mixture.
    #[arg(long)]
    pub proposal: Option<String>,
    /// Enable boundary filtering in both the likelihood and the proposal.
    #[arg(long)]
    pub boundary_filter: bool,
    #[arg(long)]
    pub iterations: Option<u64>,
    #[arg(long)]
    pub burn_in: Option<u64>,
    #[arg(long)]
    pub thinning: Option<u64>,
    /// Chain seed; repeat for batches.
    #[arg(long = "seed")]
    pub seeds: Vec<u64>,
    /// zero or random.
    #[arg(long)]
    pub init: Option<String>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Baseline iteration cap (icp method).
    #[arg(long)]
    pub icp_iterations: Option<u64>,
    /// Baseline regression noise sigma in mm (icp method).
    #[arg(long)]
    pub icp_sigma: Option<f64>,
    /// Excised-region centre "x,y,z" (reconstruct).
    #[arg(long)]
    pub excise_center: Option<String>,
    /// Excised-region radius in mm (reconstruct).
    #[arg(long)]
    pub excise_radius: Option<f64>,
}

fn merge(args: &RegisterArgs) -> Result<RunConfig> {
    let mut config = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(model) = &args.model {
        config.model.path = Some(model.clone());
    }
    if !args.targets.is_empty() {
        config.targets = args.targets.clone();
    }
    if let Some(method) = &args.method {
        config.run.method = method.clone();
    }
    if let Some(likelihood) = &args.likelihood {
        config.likelihood.kind = likelihood.clone();
    }
    if let Some(sigma) = args.sigma {
        config.likelihood.sigma = sigma;
    }
    if let Some(rate) = args.rate {
        config.likelihood.rate = rate;
    }
    if let Some(proposal) = &args.proposal {
        config.proposal.kind = proposal.clone();
    }
    if args.boundary_filter {
        config.likelihood.boundary_filter = true;
        config.proposal.boundary_filter = true;
    }
    if let Some(iterations) = args.iterations {
        config.run.iterations = iterations;
    }
    if let Some(burn_in) = args.burn_in {
        config.run.burn_in = burn_in;
    }
    if let Some(thinning) = args.thinning {
        config.run.thinning = thinning;
    }
    if !args.seeds.is_empty() {
        config.run.seeds = args.seeds.clone();
    }
    if let Some(init) = &args.init {
        config.run.init = init.clone();
    }
    if let Some(output) = &args.output {
        config.run.output = output.clone();
    }
    if let Some(icp_iterations) = args.icp_iterations {
        config.run.icp_iterations = icp_iterations;
    }
    if let Some(icp_sigma) = args.icp_sigma {
        config.run.icp_sigma = icp_sigma;
    }
    if let (Some(center), Some(radius)) = (&args.excise_center, args.excise_radius) {
        let p = super::parse_point(center)?;
        config.reconstruct = Some(ReconstructSection {
            excise_center: [p.x, p.y, p.z],
            excise_radius: radius,
        });
    }
    Ok(config)
}

fn resolve_model(config: &RunConfig) -> Result<LowRankGP> {
    if let Some(path) = &config.model.path {
        return LowRankGP::load(path);
    }
    let (Some(reference), Some(scale), Some(bandwidth), Some(rank)) = (
        &config.model.reference,
        config.model.scale,
        config.model.bandwidth,
        config.model.rank,
    ) else {
        return Err(Error::Validation(
            "model: set either `path` or all of `reference`, `scale`, `bandwidth`, `rank`"
                .to_string(),
        ));
    };
    let mesh = super::load_mesh_auto(reference)?;
    let kernel = GaussianKernel::new(scale, bandwidth)?;
    build_low_rank(&kernel, &mesh, rank.min(3 * mesh.vertex_count()))
}

struct Job {
    target_path: PathBuf,
    target: Arc<TriangleMesh>,
    seed: u64,
    output: PathBuf,
}

fn worker_count(jobs: usize) -> usize {
    let default = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    std::env::var("MORPHFIT_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(default)
        .min(jobs.max(1))
}

pub fn run(args: RegisterArgs, reconstruct_mode: bool) -> Result<()> {
    let config = merge(&args)?;
    if config.targets.is_empty() {
        return Err(Error::Validation("no targets given".to_string()));
    }
    if config.run.seeds.is_empty() {
        return Err(Error::Validation("no seeds given".to_string()));
    }

    let reconstruct = if reconstruct_mode {
        let Some(section) = config.reconstruct.clone() else {
            return Err(Error::Validation(
                "reconstruct needs an excision region (--excise-center/--excise-radius)"
                    .to_string(),
            ));
        };
        if config.run.method != "mcmc" {
            return Err(Error::Validation(
                "reconstruct requires the mcmc method (posterior samples)".to_string(),
            ));
        }
        if config.likelihood.kind != "collective" || !config.likelihood.boundary_filter {
            return Err(Error::Validation(
                "reconstruct requires the collective likelihood with boundary_filter = true"
                    .to_string(),
            ));
        }
        Some(section)
    } else {
        None
    };

    let model = Arc::new(resolve_model(&config)?);
    let snapshot = config.to_toml();

    let mut jobs = Vec::new();
    for target_path in &config.targets {
        let target = Arc::new(super::load_mesh_auto(target_path)?);
        for &seed in &config.run.seeds {
            jobs.push(Job {
                target_path: target_path.clone(),
                target: Arc::clone(&target),
                seed,
                output: PathBuf::new(),
            });
        }
    }
    let multi = jobs.len() > 1;
    for job in &mut jobs {
        let stem = job
            .target_path
            .file_stem()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_else(|| "target".to_string());
        job.output = if multi {
            config.run.output.join(format!("{stem}-s{}", job.seed))
        } else {
            config.run.output.clone()
        };
    }

    let threads = worker_count(jobs.len());
    let cursor = AtomicUsize::new(0);
    let failures: Mutex<Vec<Error>> = Mutex::new(Vec::new());
    let summaries: Mutex<Vec<(usize, String)>> = Mutex::new(Vec::new());

    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let index = cursor.fetch_add(1, Ordering::SeqCst);
                if index >= jobs.len() {
                    break;
                }
                let job = &jobs[index];
                match run_job(&config, &model, job, &snapshot, reconstruct.as_ref()) {
                    Ok(line) => summaries.lock().unwrap().push((index, line)),
                    Err(err) => failures.lock().unwrap().push(err),
                }
            });
        }
    });

    let mut summaries = summaries.into_inner().unwrap();
    summaries.sort_by_key(|(index, _)| *index);
    for (_, line) in summaries {
        println!("{line}");
    }

    let failures = failures.into_inner().unwrap();
    if let Some(first) = failures.into_iter().next() {
        return Err(first);
    }
    Ok(())
}

fn run_job(
    config: &RunConfig,
    model: &Arc<LowRankGP>,
    job: &Job,
    snapshot: &str,
    reconstruct: Option<&ReconstructSection>,
) -> Result<String> {
    let mut result = match config.run.method.as_str() {
        "mcmc" => register_mcmc(
            model,
            &job.target,
            config.likelihood_model()?,
            &config.proposal_config()?,
            &config.mcmc_settings(job.seed)?,
        )?,
        "icp" => register_icp(
            model,
            &job.target,
            config.run.icp_iterations,
            config.run.icp_sigma,
        )?,
        other => {
            return Err(Error::Validation(format!(
                "unknown method {other:?}; expected mcmc or icp"
            )))
        }
    };
    result.metrics.seed = job.seed;
    result.metrics.target = Some(
        job.target_path
            .file_stem()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_default(),
    );

    artifacts::write_result_dir(&job.output, &result)?;
    let config_path = job.output.join("config.toml");
    std::fs::write(&config_path, snapshot)
        .map_err(|e| Error::Io { path: Some(config_path), source: e })?;

    if let Some(section) = reconstruct {
        write_uncertainty_csv(&job.output, model, &result, section)?;
    }

    Ok(format!(
        "{}: method={} seed={} mean_l2={:.4} mm hausdorff={:.4} mm",
        job.output.display(),
        result.metrics.method,
        job.seed,
        result.metrics.mean_l2_mm,
        result.metrics.hausdorff_mm
    ))
}

/// Per-vertex uncertainty decomposition with region labels; a reference
/// vertex is `excised` when it lies inside the excision ball.
fn write_uncertainty_csv(
    dir: &Path,
    model: &LowRankGP,
    result: &RegistrationResult,
    section: &ReconstructSection,
) -> Result<()> {
    let Some(uncertainty) = &result.uncertainty else {
        return Err(Error::Validation(
            "reconstruction produced no posterior samples; raise iterations".to_string(),
        ));
    };
    let center = nalgebra::Point3::new(
        section.excise_center[0],
        section.excise_center[1],
        section.excise_center[2],
    );
    let labels: Vec<&str> = model
        .reference()
        .vertices()
        .iter()
        .map(|p| {
            if (p - center).norm() <= section.excise_radius {
                "excised"
            } else {
                "observed"
            }
        })
        .collect();
    if labels.iter().all(|&l| l == "excised") {
        return Err(Error::Validation(
            "excision region covers the whole reference".to_string(),
        ));
    }

    let mut csv =
        String::from("vertex,region,total_variance,normal_variance,tangential_variance\n");
    for v in 0..labels.len() {
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            v, labels[v], uncertainty.total[v], uncertainty.normal[v], uncertainty.tangential[v]
        );
    }
    let path = dir.join("uncertainty.csv");
    std::fs::write(&path, csv).map_err(|e| Error::Io { path: Some(path), source: e })?;
    Ok(())
}
