use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use noisesearch::experiment::SweepReport;
use noisesearch::report::{read_records, write_audit, write_records, write_trajectory};
use noisesearch::summary::{aggregate, render};
use noisesearch::{baseline_run, plot, run_experiment, search_run, ExperimentConfig, HarnessError, Plan, Result, RunOptions};

#[derive(Parser)]
#[command(name = "noisesearch", version, about = "Verifier-guided noise search on analytic diffusion models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config's `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Added to every configured seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed_offset: u64,
    /// Worker threads, 0 for one per core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Column to plot.
    #[arg(long, global = true, default_value = "frechet")]
    metric: String,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Denoise without search; writes baseline.csv.
    Baseline,
    /// Run the first sweep point; writes search.csv, audit.csv, trajectory.csv.
    Search,
    /// Baseline plus every sweep point; writes baseline.csv and sweep.csv.
    Sweep,
    /// Draw <metric>.svg from the CSVs in the output directory.
    Plot,
    /// Print per-point means and standard deviations of sweep.csv.
    Summary,
}

fn load_plan(cli: &Cli) -> Result<Plan> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| HarnessError::config("--config", "this command needs a config file"))?;
    let base = path.parent().unwrap_or(Path::new("."));
    ExperimentConfig::load(path)?.resolve(base)
}

fn out_dir(cli: &Cli) -> Result<PathBuf> {
    if let Some(o) = &cli.out {
        return Ok(o.clone());
    }
    Ok(load_plan(cli)?.output_dir)
}

fn report_failures(report: &SweepReport) -> bool {
    let mut failed = false;
    for row in report.failures() {
        failed = true;
        eprintln!(
            "row point={:?} seed={} failed: {}",
            row.point,
            row.record.seed,
            row.error.as_deref().unwrap_or("")
        );
    }
    failed
}

fn write_report(path: &Path, report: &SweepReport) -> Result<bool> {
    write_records(path, &report.records(), report.dim)?;
    println!("wrote {}", path.display());
    Ok(report_failures(report))
}

fn run(cli: &Cli) -> Result<bool> {
    let opts = RunOptions {
        threads: cli.threads,
        seed_offset: cli.seed_offset,
    };
    match cli.command {
        Command::Baseline => {
            let plan = load_plan(cli)?;
            let out = cli.out.clone().unwrap_or_else(|| plan.output_dir.clone());
            write_report(&out.join("baseline.csv"), &baseline_run(&plan, opts)?)
        }
        Command::Search => {
            let plan = load_plan(cli)?;
            let out = cli.out.clone().unwrap_or_else(|| plan.output_dir.clone());
            let report = search_run(&plan, opts)?;
            let failed = write_report(&out.join("search.csv"), &report)?;
            if let Some(first) = report.rows.first().and_then(|r| r.first.as_ref()) {
                write_audit(&out.join("audit.csv"), &first.audit)?;
                write_trajectory(&out.join("trajectory.csv"), &first.final_trajectory)?;
            }
            Ok(failed)
        }
        Command::Sweep => {
            let plan = load_plan(cli)?;
            let out = cli.out.clone().unwrap_or_else(|| plan.output_dir.clone());
            let a = write_report(&out.join("baseline.csv"), &baseline_run(&plan, opts)?)?;
            let b = write_report(&out.join("sweep.csv"), &run_experiment(&plan, opts)?)?;
            Ok(a || b)
        }
        Command::Plot => {
            let out = out_dir(cli)?;
            let (dim, sweep) = read_records(&out.join("sweep.csv"))?;
            let baseline_path = out.join("baseline.csv");
            let baseline = if baseline_path.exists() {
                read_records(&baseline_path)?.1
            } else {
                Vec::new()
            };
            let svg = plot::plot_scaling(&baseline, &sweep, dim, &cli.metric)?;
            let path = out.join(format!("{}.svg", cli.metric));
            std::fs::write(&path, svg).map_err(|e| HarnessError::io(&path, e))?;
            println!("wrote {}", path.display());
            Ok(false)
        }
        Command::Summary => {
            let out = out_dir(cli)?;
            for name in ["baseline.csv", "sweep.csv"] {
                let path = out.join(name);
                if path.exists() {
                    let (dim, records) = read_records(&path)?;
                    println!("{name}");
                    print!("{}", render(&aggregate(&records, dim)));
                }
            }
            Ok(false)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(false) => ExitCode::SUCCESS,
        // rows that failed were already reported and written as NaN
        Ok(true) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
