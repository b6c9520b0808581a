use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tetamr::io::read_mesh;
use tetamr::mesh::validate;
use tetamr::pipeline::{mesh_stats, run_pipeline, PipelineConfig, PipelineError};

/// Tetrahedral meshing, sliver removal, smoothing and adaptive refinement.
///
/// Exit codes: 0 ok, 2 parse error, 3 invariant violation, 4 stage failure.
#[derive(Parser)]
#[command(name = "mesh", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the stages listed in a key=value config file.
    Run { config: PathBuf },
    /// Write dihedral, quality, aspect ratio and size histograms of a mesh.
    Stats {
        /// Mesh basename (reads <base>.node, .ele and, if present, .face).
        base: PathBuf,
        /// Output basename; defaults to the input basename.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check mesh invariants.
    Validate { base: PathBuf },
}

fn fail(e: &PipelineError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config } => {
            let cfg = match PipelineConfig::from_file(&config) {
                Ok(c) => c,
                Err(e) => return fail(&e),
            };
            match run_pipeline(&cfg) {
                Ok(summary) => {
                    for s in &summary.stages {
                        let v = &s["validation"];
                        println!(
                            "{:>2} {:<15} tets {} slivers {} below 10deg {}",
                            s["index"],
                            s["stage"].as_str().unwrap_or(""),
                            v.get("tets").unwrap_or(&v["triangles"]),
                            s.get("slivers").map_or("-".into(), |x| x.to_string()),
                            s.get("below_10deg").map_or("-".into(), |x| x.to_string()),
                        );
                    }
                    if let Some(m) = summary.mesh {
                        println!("mesh written to {}", m.display());
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&e),
            }
        }
        Command::Stats { base, out } => {
            let result = read_mesh(&base)
                .map_err(PipelineError::from)
                .and_then(|m| mesh_stats(&m))
                .and_then(|s| {
                    s.write(out.as_ref().unwrap_or(&base))?;
                    Ok(s)
                });
            match result {
                Ok(s) => {
                    print!("{}", s.describe());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&e),
            }
        }
        Command::Validate { base } => match read_mesh(&base) {
            Ok(m) => {
                let r = validate(&m);
                println!(
                    "tets {} vertices {} facets {} min dihedral {:.3} max dihedral {:.3}",
                    r.tets, r.vertices, r.facets, r.min_dihedral_deg, r.max_dihedral_deg
                );
                for v in r.violations.iter().take(20) {
                    println!("violation: {v:?}");
                }
                if r.is_valid() {
                    println!("valid");
                    ExitCode::SUCCESS
                } else {
                    println!("{} violations", r.violations.len());
                    ExitCode::from(3)
                }
            }
            Err(e) => fail(&PipelineError::from(e)),
        },
    }
}
