//! `lapsmooth`: generate, smooth, evaluate and repair meshes.
//!
//! Exit status: 0 on success (a smoothing run that stalls still succeeds
//! and reports `converged: false`), 1 on usage errors, 2 on data errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lapsmooth::generate::{self, Kind};
use lapsmooth::io::{load_mesh, save_mesh};
use lapsmooth::quality::quality_report;
use lapsmooth::report::{self, RunReport};
use lapsmooth::smooth::{attach_boundary_geometry, AdaptiveWeights, BoundaryShape, Method, SmoothConfig};
use lapsmooth::svg::render_svg;
use lapsmooth::topo::{remove_bad_elements, RemovalLog};
use lapsmooth::{Error, Mesh, QualityKind};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "lapsmooth", version, about = "Mesh smoothing with convex quality objectives")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a generated test mesh.
    Generate {
        /// square_tri, square_mixed, disk_tri, ball_tet or square_slivers.
        #[arg(long)]
        kind: Kind,
        /// Resolution (cells per side, or rings).
        #[arg(long, default_value_t = 8)]
        n: usize,
        /// Noise amplitude on free vertices, in mean edge lengths.
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Smooth a mesh.
    Smooth {
        #[arg(long = "in")]
        input: PathBuf,
        /// laplace, laplace-weighted, q2, q3, lambda1..lambda5, mr or sqrt-mr.
        #[arg(long)]
        method: Method,
        /// Adapt element weights during gradient ascent.
        #[arg(long)]
        adaptive_weights: bool,
        /// Let boundary vertices slide on a circle, sphere or the boundary polyline.
        #[arg(long)]
        project: Option<BoundaryShape>,
        #[command(flatten)]
        stop: Stopping,
        /// Measure written to the report.
        #[arg(long, default_value = "mr")]
        measure: QualityKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Also render the result (planar meshes only).
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Report element quality.
    Quality {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "mr", value_parser = ["mr", "iq2", "iq3"])]
        measure: String,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Remove elements of low iq2 by smoothing and edge collapses.
    Modify {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 0.6)]
        remove_below: f64,
        #[command(flatten)]
        stop: Stopping,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run several methods on copies of one mesh and tabulate the results.
    Compare {
        #[arg(long = "in")]
        input: PathBuf,
        /// Comma-separated; defaults to the Laplacian, lambda1..lambda5, mr and sqrt-mr.
        #[arg(long, value_delimiter = ',')]
        methods: Vec<Method>,
        #[arg(long, default_value = "mr")]
        measure: QualityKind,
        #[command(flatten)]
        stop: Stopping,
        /// Defaults to standard output.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct Stopping {
    #[arg(long, default_value_t = 1000)]
    iters: usize,
    /// Displacement tolerance (default 1e-8 times the bounding-box diagonal).
    #[arg(long)]
    tol: Option<f64>,
}

impl Stopping {
    fn config(&self, method: Method) -> SmoothConfig {
        let cfg = SmoothConfig::new(method).max_iters(self.iters);
        match self.tol {
            Some(t) => cfg.tol(t),
            None => cfg,
        }
    }
}

#[derive(Serialize)]
struct ModifyReport {
    threshold: f64,
    below_threshold: usize,
    removal: RemovalLog,
    quality: RunReport,
}

fn write_json<T: Serialize>(value: &T, path: Option<&Path>) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    match path {
        Some(p) => std::fs::write(p, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}

fn write_svg(m: &Mesh, measure: QualityKind, path: Option<&Path>) -> Result<(), Error> {
    if let Some(p) = path {
        std::fs::write(p, render_svg(m, measure)?)?;
    }
    Ok(())
}

fn execute(cmd: Command) -> Result<(), Error> {
    match cmd {
        Command::Generate { kind, n, sigma, seed, out } => {
            let m = generate::perturbed(&kind.build(n, seed)?, sigma, seed)?;
            save_mesh(&m, out)
        }
        Command::Smooth {
            input,
            method,
            adaptive_weights,
            project,
            stop,
            measure,
            out,
            report,
            svg,
        } => {
            let mut m = load_mesh(input)?;
            let mut cfg = stop.config(method);
            if let Some(shape) = project {
                cfg = cfg.with_projection(attach_boundary_geometry(&mut m, shape)?);
            }
            if adaptive_weights {
                cfg.adaptive = Some(AdaptiveWeights::default());
            }
            let r = report::run(&mut m, &cfg, measure)?;
            if !r.converged {
                log::warn!("{} did not converge in {} iterations", r.method, r.iterations);
            }
            save_mesh(&m, out)?;
            write_json(&r, Some(&report))?;
            write_svg(&m, measure, svg.as_deref())
        }
        Command::Quality {
            input,
            measure,
            report,
            svg,
        } => {
            let m = load_mesh(input)?;
            let measure: QualityKind = measure.parse()?;
            let r = RunReport::new("none", quality_report(&m, measure)?, 0, true, 0.0);
            write_json(&r, Some(&report))?;
            write_svg(&m, measure, svg.as_deref())
        }
        Command::Modify {
            input,
            remove_below,
            stop,
            out,
            report,
        } => {
            let mut m = load_mesh(input)?;
            let cfg = stop.config(Method::GradAscent(QualityKind::Q2.into()));
            let t = std::time::Instant::now();
            let removal = remove_bad_elements(&mut m, remove_below, &cfg)?;
            let q = quality_report(&m, QualityKind::Iq2)?;
            let below_threshold = q.values.iter().filter(|&&v| v < remove_below).count();
            let iters = removal.phases.len();
            let quality = RunReport::new("modify", q, iters, removal.success, t.elapsed().as_secs_f64() * 1e3);
            save_mesh(&m, out)?;
            let rep = ModifyReport {
                threshold: remove_below,
                below_threshold,
                removal,
                quality,
            };
            if !rep.removal.success {
                log::warn!("{} elements below {} could not be removed", rep.removal.irreducible.len(), remove_below);
            }
            write_json(&rep, report.as_deref())
        }
        Command::Compare {
            input,
            methods,
            measure,
            stop,
            report,
        } => {
            let m = load_mesh(input)?;
            let methods = if methods.is_empty() { report::table_methods() } else { methods };
            let rep = report::compare(&m, &methods, measure, &stop.config(Method::Laplace))?;
            write_json(&rep, report.as_deref())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
