use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use contour_mean::config::{ConfigArgs, RunConfig};
use contour_mean::contour::{distance_sq, to_rpsv, Contour, ContourSystem};
use contour_mean::geometry::{diameter, Vec2};
use contour_mean::interp::{dissimilarity, interpolate_stack, outliers_from_distances};
use contour_mean::io::{ContourFile, LabeledContour};
use contour_mean::mean::solve_double_optimization;
use contour_mean::reconstruct::reconstruct_detailed;
use contour_mean::svg::{self, Layer};
use contour_mean::{Error, Result};

/// Means, dissimilarities and interpolation of closed planar contours.
#[derive(Parser)]
#[command(name = "contour-mean", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mean contour of a set of contours
    Mean(Args),
    /// Pairwise dissimilarity matrix
    Distance(Args),
    /// Insert interpolated frames between consecutive slices
    Interpolate(Args),
    /// Reconstruct every contour from its own representation and report the error
    #[command(hide = true)]
    RoundtripCheck(Args),
}

#[derive(clap::Args)]
struct Args {
    /// Contour file (`contourset v1`)
    input: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { 2 } else { 1 })
        }
    }
}

fn run(command: Command) -> Result<()> {
    let (Command::Mean(args) | Command::Distance(args) | Command::Interpolate(args) | Command::RoundtripCheck(args)) =
        &command;
    let cfg = args.config.resolve()?;
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidOptions(format!("thread pool: {e}")))?;
    }
    let input = ContourFile::read(&args.input)?;
    match command {
        Command::Mean(_) => mean(&input, &cfg),
        Command::Distance(_) => distance(&input, &cfg),
        Command::Interpolate(_) => interpolate(&input, &cfg),
        Command::RoundtripCheck(_) => roundtrip_check(&input, &cfg),
    }
}

fn resampled(input: &ContourFile, cfg: &RunConfig, need: usize) -> Result<Vec<Contour>> {
    if input.len() < need {
        return Err(Error::TooFewContours { need, got: input.len() });
    }
    input.resampled(cfg.points)
}

fn output_path(cfg: &RunConfig, name: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::Io(format!("{}: {e}", cfg.output_dir.display())))?;
    Ok(cfg.output_dir.join(name))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn index_list(indices: &[usize]) -> String {
    indices.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
}

fn mean(input: &ContourFile, cfg: &RunConfig) -> Result<()> {
    let contours = resampled(input, cfg, 2)?;
    let sys = ContourSystem::new(contours)?;
    let result = solve_double_optimization(&sys, &cfg.mean_options())?;

    let dissimilarities = result
        .aligned
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let q = to_rpsv(&c.translated(-result.origin), cfg.exponent).map_err(|e| e.in_contour(k))?;
            distance_sq(&q, &result.mean_rpsv)
        })
        .collect::<Result<Vec<f64>>>()?;

    let mean_path = output_path(cfg, "mean.txt")?;
    ContourFile::new(vec![LabeledContour::new(Some("mean"), result.mean_contour.points().to_vec())]).write(&mean_path)?;

    let trace: String = result.energy_trace.iter().map(|e| format!("{e:.16e}\n")).collect();
    write_text(&output_path(cfg, "energy_trace.txt")?, &trace)?;

    let mut summary = String::new();
    let d = result.centroid_displacement;
    writeln!(summary, "outer-iterations {}", result.outer_iterations).unwrap();
    writeln!(summary, "converged {}", result.converged).unwrap();
    writeln!(summary, "identical-system {}", result.identical_system).unwrap();
    writeln!(summary, "energy {:.16e}", result.energy()).unwrap();
    writeln!(summary, "origin {:.16e} {:.16e}", result.origin.x, result.origin.y).unwrap();
    writeln!(summary, "centroid-displacement {:.16e} {:.16e}", d.x, d.y).unwrap();
    for (k, v) in dissimilarities.iter().enumerate() {
        writeln!(summary, "dissimilarity {k} {v:.16e}").unwrap();
    }
    if let Some(factor) = cfg.flag_outliers {
        if sys.len() < 3 {
            return Err(Error::TooFewContours { need: 3, got: sys.len() });
        }
        let distances: Vec<f64> = dissimilarities.iter().map(|v| v.sqrt()).collect();
        writeln!(summary, "outliers {}", index_list(&outliers_from_distances(&distances, factor))).unwrap();
    }
    write_text(&output_path(cfg, "summary.txt")?, &summary)?;

    if let Some(path) = &cfg.svg {
        let svg = svg::mean_overlay(input.contours.iter().map(|c| c.points.as_slice()), result.mean_contour.points());
        write_text(path, &svg)?;
    }
    print!("{summary}");
    if !result.converged {
        log::warn!("outer loop stopped after {} iterations without converging", result.outer_iterations);
    }
    Ok(())
}

fn distance(input: &ContourFile, cfg: &RunConfig) -> Result<()> {
    let contours = resampled(input, cfg, 2)?;
    let n = contours.len();
    let ropts = cfg.reparam_options();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).collect();
    let values = pairs
        .par_iter()
        .map(|&(i, j)| {
            dissimilarity(&contours[i], &contours[j], cfg.exponent, &ropts).map_err(|e| e.in_contour(j))
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut raw = vec![vec![0.0; n]; n];
    for (&(i, j), v) in pairs.iter().zip(values) {
        raw[i][j] = v;
    }

    let sym: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| 0.5 * (raw[i][j] + raw[j][i])).collect()).collect();
    let asymmetry = pairs
        .iter()
        .map(|&(i, j)| {
            let (a, b) = (raw[i][j], raw[j][i]);
            let scale = a.abs().max(b.abs());
            if scale > 0.0 { (a - b).abs() / scale } else { 0.0 }
        })
        .fold(0.0, f64::max);

    let mut text = String::new();
    for row in &sym {
        let row: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(text, "{}", row.join(" ")).unwrap();
    }
    writeln!(text, "# asymmetry {asymmetry:.3e}").unwrap();
    if let Some(factor) = cfg.flag_outliers {
        if n < 3 {
            return Err(Error::TooFewContours { need: 3, got: n });
        }
        // each member's typical distance to the others
        let scores: Vec<f64> = (0..n)
            .map(|i| {
                let mut d: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| sym[i][j].max(0.0).sqrt()).collect();
                d.sort_by(f64::total_cmp);
                let k = d.len();
                if k % 2 == 1 { d[k / 2] } else { 0.5 * (d[k / 2 - 1] + d[k / 2]) }
            })
            .collect();
        writeln!(text, "# outliers {}", index_list(&outliers_from_distances(&scores, factor))).unwrap();
    }
    write_text(&output_path(cfg, "distance.txt")?, &text)?;
    print!("{text}");
    Ok(())
}

fn interpolate(input: &ContourFile, cfg: &RunConfig) -> Result<()> {
    let slices = resampled(input, cfg, 2)?;
    let stack = interpolate_stack(&slices, cfg.frames_per_gap, &cfg.stack_options())?;

    let per_gap = cfg.frames_per_gap + 1;
    let labeled: Vec<LabeledContour> = stack
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let label = if k % per_gap == 0 { input.contours[k / per_gap].label.as_deref() } else { Some("interpolated") };
            LabeledContour::new(label, c.points().to_vec())
        })
        .collect();
    let path = output_path(cfg, "interpolated.txt")?;
    ContourFile::new(labeled).write(&path)?;

    if let Some(svg_path) = &cfg.svg {
        let stem = svg_path.file_stem().and_then(|s| s.to_str()).unwrap_or("frame");
        let dir = svg_path.parent().unwrap_or(Path::new(""));
        for (k, frame) in stack.iter().enumerate() {
            let mut layers: Vec<Layer<'_>> =
                stack.iter().map(|c| Layer { points: c.points(), stroke: svg::MEMBER_STROKE, width: 1.0 }).collect();
            layers.push(Layer { points: frame.points(), stroke: svg::MEAN_STROKE, width: 2.5 });
            write_text(&dir.join(format!("{stem}-{k:03}.svg")), &svg::render(&layers))?;
        }
    }
    println!("{} contours written to {}", stack.len(), path.display());
    Ok(())
}

fn roundtrip_check(input: &ContourFile, cfg: &RunConfig) -> Result<()> {
    let contours = resampled(input, cfg, 1)?;
    let ropts = cfg.reconstruct_options();
    let reports = contours
        .par_iter()
        .enumerate()
        .map(|(k, c)| {
            let center = c.centroid();
            let centered = c.translated(-center);
            let q = to_rpsv(&centered, cfg.exponent).map_err(|e| e.in_contour(k))?;
            let rec = reconstruct_detailed(&q, &ropts, None).map_err(|e| e.in_contour(k))?;
            let err = centered
                .points()
                .iter()
                .zip(rec.contour.points())
                .map(|(a, b): (&Vec2, &Vec2)| a.distance(*b))
                .fold(0.0, f64::max);
            Ok((err / diameter(c.points()), rec.iterations))
        })
        .collect::<Result<Vec<(f64, usize)>>>()?;
    let (mut worst, mut most) = (0.0f64, 0);
    for (k, &(err, iters)) in reports.iter().enumerate() {
        println!("contour {k} relative-error {err:.3e} newton-iterations {iters}");
        worst = worst.max(err);
        most = most.max(iters);
    }
    if worst > ROUNDTRIP_TOL {
        return Err(Error::NotConverged { iterations: most, residual: worst });
    }
    Ok(())
}

const ROUNDTRIP_TOL: f64 = 1e-6;
