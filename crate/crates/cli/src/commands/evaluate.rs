use std::path::PathBuf;

use clap::Args;
use morphfit::registration::artifacts::read_metrics;
use morphfit::{Error, Result};

#[derive(Args)]
pub struct EvaluateArgs {
    /// Result directories or glob patterns (e.g. "results/*").
    #[arg(long = "results", required = true)]
    pub results: Vec<String>,
    /// Output CSV path.
    #[arg(long, default_value = "summary.csv")]
    pub output: PathBuf,
}

pub fn run(args: EvaluateArgs) -> Result<()> {
    let mut candidates: Vec<PathBuf> = Vec::new();
    for pattern in &args.results {
        if pattern.contains(['*', '?', '[']) {
            let paths = glob::glob(pattern)
                .map_err(|e| Error::Validation(format!("bad glob {pattern:?}: {e}")))?;
            for entry in paths {
                let path = entry
                    .map_err(|e| Error::Validation(format!("glob failure: {e}")))?;
                if path.is_dir() {
                    candidates.push(path);
                }
            }
        } else {
            candidates.push(PathBuf::from(pattern));
        }
    }
    candidates.sort();
    candidates.dedup();
    if candidates.is_empty() {
        return Err(Error::Validation(
            "no result directories matched".to_string(),
        ));
    }

    let mut rows = Vec::new();
    for dir in &candidates {
        match read_metrics(dir) {
            Ok(metrics) => rows.push(metrics),
            Err(err) => eprintln!("warning: skipping {}: {err}", dir.display()),
        }
    }
    if rows.is_empty() {
        return Err(Error::Validation(
            "every candidate directory was skipped".to_string(),
        ));
    }
    rows.sort_by(|a, b| {
        (a.target.as_deref(), &a.method, a.seed).cmp(&(b.target.as_deref(), &b.method, b.seed))
    });

    let mut writer = csv::Writer::from_path(&args.output)
        .map_err(|e| Error::Validation(format!("cannot write {}: {e}", args.output.display())))?;
    writer
        .write_record([
            "target",
            "method",
            "seed",
            "mean_l2_mm",
            "hausdorff_mm",
            "acceptance_rate",
            "iterations",
            "wall_clock_ms",
        ])
        .and_then(|_| {
            for m in &rows {
                writer.write_record([
                    m.target.clone().unwrap_or_default(),
                    m.method.clone(),
                    m.seed.to_string(),
                    m.mean_l2_mm.to_string(),
                    m.hausdorff_mm.to_string(),
                    m.acceptance_rate.map(|a| a.to_string()).unwrap_or_default(),
                    m.iterations.to_string(),
                    m.wall_clock_ms.to_string(),
                ])?;
            }
            writer.flush()?;
            Ok(())
        })
        .map_err(|e| Error::Validation(format!("csv write failed: {e}")))?;

    println!("wrote {} ({} rows)", args.output.display(), rows.len());
    Ok(())
}
