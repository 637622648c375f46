use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use normalcs::config::{parse_size, ConfigDocument, Method};
use normalcs::error::HarnessError;
use normalcs::experiment::run_experiment;
use normalcs::table::{load_table_dir, run_table};
use normalcs_core::io::{write_pbm, write_pgm, write_raw};
use normalcs_core::phantom::shepp_logan;
use normalcs_core::sensing::{lines_for_ratio, radial_mask, NoiseDomain};

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;
const EXIT_PARTIAL: u8 = 4;

/// Compressed-sensing reconstruction from radial partial Fourier samples.
#[derive(Parser)]
#[command(name = "normalcs", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the Shepp-Logan phantom (16-bit PGM, or raw float for `.raw`).
    Phantom {
        #[arg(long, value_parser = parse_size)]
        size: [usize; 2],
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a radial sampling mask as PBM.
    Mask {
        #[arg(long, value_parser = parse_size)]
        size: [usize; 2],
        #[arg(long, conflicts_with = "ratio", required_unless_present = "ratio")]
        lines: Option<usize>,
        /// Target sampling ratio; picks the smallest line count reaching it.
        #[arg(long)]
        ratio: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one experiment from a config document.
    Reconstruct {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the document's `method`.
        #[arg(long)]
        method: Option<String>,
        /// Per-sweep CSV of the last inner solve.
        #[arg(long, num_args = 0..=1, default_missing_value = "trace.csv")]
        trace: Option<PathBuf>,
        #[arg(long, value_parser = parse_noise_domain)]
        noise_domain: Option<NoiseDomain>,
        /// Reconstruction as 16-bit PGM.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Metrics report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run every config in a directory and print a comparison table.
    Table {
        #[arg(long)]
        configs: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn parse_noise_domain(s: &str) -> Result<NoiseDomain, String> {
    match s {
        "measurement" => Ok(NoiseDomain::Measurement),
        "image" => Ok(NoiseDomain::Image),
        _ => Err(format!("expected `measurement` or `image`, got {s:?}")),
    }
}

fn fail(err: HarnessError) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(err.exit_code() as u8)
}

fn write_failure(path: &Path, e: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: cannot write {}: {e}", path.display());
    ExitCode::from(EXIT_RUNTIME)
}

fn configure_threads() -> Result<(), String> {
    let Ok(value) = std::env::var("NORMALCS_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("NORMALCS_THREADS must be a positive integer, got {value:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(EXIT_CONFIG);
    }
    match cli.command {
        Command::Phantom { size, out } => {
            let img = match shepp_logan(size[0], size[1]) {
                Ok(img) => img,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_CONFIG);
                }
            };
            let written = if out.extension().is_some_and(|e| e == "raw") {
                write_raw(&out, &img)
            } else {
                write_pgm(&out, &img, 16)
            };
            match written {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => write_failure(&out, e),
            }
        }
        Command::Mask { size, lines, ratio, seed, out } => {
            let plan = match lines {
                Some(l) => radial_mask(size[0], size[1], l, seed),
                None => lines_for_ratio(size[0], size[1], ratio.expect("clap requires one"))
                    .and_then(|l| radial_mask(size[0], size[1], l, seed)),
            };
            let plan = match plan {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_CONFIG);
                }
            };
            if let Err(e) = write_pbm(&out, &plan) {
                return write_failure(&out, e);
            }
            println!(
                "{} lines, {} samples, ratio {:.4}",
                plan.line_count(),
                plan.sample_count(),
                plan.sample_ratio()
            );
            ExitCode::SUCCESS
        }
        Command::Reconstruct { config, method, trace, noise_domain, out, report } => {
            let doc = match ConfigDocument::load(&config) {
                Ok(d) => d,
                Err(e) => return fail(e),
            };
            let method = match method.map(|m| m.parse::<Method>()).transpose() {
                Ok(m) => m.or(doc.method),
                Err(e) => return fail(e),
            };
            let Some(method) = method else {
                return fail(HarnessError::Config("no method: set `method` in the config or pass --method".into()));
            };
            let mut spec = match doc.resolve(method) {
                Ok(s) => s,
                Err(e) => return fail(e),
            };
            if let Some(d) = noise_domain {
                spec.noise.domain = d;
            }
            if trace.is_some() {
                spec.output.trace = trace;
            }
            if out.is_some() {
                spec.output.image = out;
            }
            if report.is_some() {
                spec.output.report = report;
            }
            match run_experiment(&spec) {
                Ok(exp) => {
                    let r = &exp.report;
                    println!("method        {}", r.method);
                    println!("snr_db        {:.4}", r.snr_db);
                    if let Some(tv) = r.tv_snr_db {
                        println!("tv_snr_db     {tv:.4}");
                    }
                    println!("backproj_db   {:.4}", r.backprojection_snr_db);
                    println!("lines         {} (ratio {:.4})", r.line_count, r.sample_ratio);
                    println!("config_hash   {}", r.config_hash);
                    for o in &r.outer {
                        println!("outer {:>2}      snr {:.4}", o.iteration, o.snr_db);
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Command::Table { configs, csv } => {
            let entries = match load_table_dir(&configs) {
                Ok(e) => e,
                Err(e) => return fail(e),
            };
            let table = run_table(&entries);
            print!("{}", table.render());
            if let Some(path) = csv {
                if let Err(e) = std::fs::write(&path, table.to_csv()) {
                    return write_failure(&path, e);
                }
            }
            if table.has_failures() {
                ExitCode::from(EXIT_PARTIAL)
            } else {
                ExitCode::SUCCESS
            }
        }
    }
}
