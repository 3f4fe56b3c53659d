mod error;
mod inspect;
mod manifest;
mod plot;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;
use slide_core::baselines::run_flat_sac;
use slide_core::config::{Config, Selector};
use slide_core::discovery::{DiscoveryRun, SkillSet, METRICS_CSV, SKILLS_CHECKPOINT, STATE_CHECKPOINT};
use slide_core::hrl::{run_transfer, TransferOptions, TRANSFER_HEADER};

use error::{CliError, CliResult};
use manifest::{write_completion, Manifest};

/// Checkpoint holding the low-level policy after transfer.
const TRANSFERRED_SKILLS: &str = "transferred_skills.ckpt";
const TRANSFER_CSV: &str = "transfer.csv";
const REPORT_JSON: &str = "report.json";

#[derive(Parser)]
#[command(name = "slide", version, about = "Skill discovery through learned task generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Baseline {
    /// Skill-free SAC trained on the target task.
    FlatSac,
    /// Discovered skills chosen uniformly at random.
    RandomSelection,
}

#[derive(Subcommand)]
enum Command {
    /// Discover skills.
    Discover {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, env = "SLIDE_OUT_DIR")]
        out: PathBuf,
        #[arg(long, env = "SLIDE_SEED")]
        seed: Option<u64>,
        /// Overrides `discovery.iterations`.
        #[arg(long)]
        iterations: Option<u64>,
        /// Continue the run whose state checkpoint lives in this directory.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        quiet: bool,
    },
    /// Train a high-level policy over discovered skills on the target task.
    Transfer {
        #[arg(long)]
        skills: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, env = "SLIDE_OUT_DIR")]
        out: PathBuf,
        #[arg(long, env = "SLIDE_SEED")]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        baseline: Option<Baseline>,
        /// Keep the low-level policy fixed.
        #[arg(long)]
        freeze_skills: bool,
        /// Evaluate without training and write a single row.
        #[arg(long)]
        eval_only: bool,
    },
    /// Sample each skill's task distribution and plot it.
    InspectTasks {
        #[arg(long)]
        skills: PathBuf,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 20)]
        bins: usize,
        #[arg(long, env = "SLIDE_SEED", default_value_t = 0)]
        seed: u64,
        /// Where to write the report and images; defaults to the skills directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean and standard deviation curves across runs.
    Plot {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Column to plot; defaults by file type.
        #[arg(long)]
        column: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Discover {
            config,
            out,
            seed,
            iterations,
            resume,
            quiet,
        } => discover(&config, &out, seed, iterations, resume.as_deref(), quiet),
        Command::Transfer {
            skills,
            config,
            out,
            seed,
            baseline,
            freeze_skills,
            eval_only,
        } => transfer(&skills, &config, &out, seed, baseline, freeze_skills, eval_only),
        Command::InspectTasks {
            skills,
            samples,
            bins,
            seed,
            out,
        } => inspect_tasks(&skills, samples, bins, seed, out.as_deref()),
        Command::Plot { csv, out, column } => plot_cmd(&csv, &out, column.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> CliResult<(String, Config)> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut config = Config::parse(&text)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    Ok((text, config))
}

fn discover(
    config_path: &Path,
    out: &Path,
    seed: Option<u64>,
    iterations: Option<u64>,
    resume: Option<&Path>,
    quiet: bool,
) -> CliResult<()> {
    let (text, mut config) = load_config(config_path, seed)?;
    if let Some(n) = iterations {
        config.discovery.iterations = n;
    }
    config.validate()?;
    let run = match resume {
        Some(dir) => DiscoveryRun::resume(&dir.join(STATE_CHECKPOINT))?,
        None => DiscoveryRun::new(config.clone())?,
    };
    let method = config.discovery.method.name();
    let outputs = [METRICS_CSV, SKILLS_CHECKPOINT].iter().map(|f| out.join(f)).collect();
    Manifest::new("discover", method, config.seed, &text, outputs).write(out, &text)?;
    let total = config.discovery.iterations;
    let outcome = run.run_with_progress(Some(out), |row| {
        if !quiet {
            eprintln!(
                "[{method}] iter {}/{total}  mi {:.4}  entropy {:.3}  alpha {:.4}  return {:.4}  acc {:.3}",
                row.iteration, row.mi_lower_bound, row.mean_entropy, row.alpha, row.mean_return, row.disc_accuracy
            );
        }
    })?;
    let last = outcome.metrics.last();
    write_completion(
        out,
        outcome.out_files.clone(),
        json!({
            "iterations": outcome.iterations,
            "stopped_early": outcome.stopped_early,
            "final_mi_lower_bound": last.map(|r| r.mi_lower_bound),
            "final_mean_entropy": last.map(|r| r.mean_entropy),
        }),
    )?;
    if !quiet {
        println!("discovery finished after {} iterations; artifacts in {}", outcome.iterations, out.display());
    }
    Ok(())
}

fn transfer(
    skills_dir: &Path,
    config_path: &Path,
    out: &Path,
    seed: Option<u64>,
    baseline: Option<Baseline>,
    freeze_skills: bool,
    eval_only: bool,
) -> CliResult<()> {
    let (text, mut config) = load_config(config_path, seed)?;
    if freeze_skills {
        config.transfer.finetune = false;
    }
    config.validate()?;
    let options = TransferOptions { eval_only };
    let outputs = vec![out.join(TRANSFER_CSV)];
    let (name, outcome, skills) = match baseline {
        Some(Baseline::FlatSac) => {
            Manifest::new("transfer", "transfer:flat_sac", config.seed, &text, outputs).write(out, &text)?;
            (None, run_flat_sac(&config, Some(out))?, None)
        }
        other => {
            let skills = load_skills(skills_dir, &config)?;
            let mut name = format!("transfer:{}", skills.method.name());
            if matches!(other, Some(Baseline::RandomSelection)) {
                config.transfer.selector = Selector::Random;
                name.push_str(":random");
            }
            Manifest::new("transfer", &name, config.seed, &text, outputs).write(out, &text)?;
            let outcome = run_transfer(&skills, &config, options, Some(out))?;
            (Some(name), outcome, Some(skills))
        }
    };
    let mut files = vec![out.join(TRANSFER_CSV)];
    if let Some(mut skills) = skills {
        skills.policy = outcome.policy.clone();
        let fingerprint = config.world.build()?.param_spec().fingerprint();
        let path = out.join(TRANSFERRED_SKILLS);
        skills.save(&path, &fingerprint)?;
        files.push(path);
    }
    let last = outcome.rows.last();
    write_completion(
        out,
        files,
        json!({
            "arm": name.unwrap_or_else(|| "transfer:flat_sac".into()),
            "rows": outcome.rows.len(),
            "final_eval_return_mean": last.map(|r| r.eval_return_mean),
        }),
    )?;
    if let Some(r) = last {
        println!("step {}: eval return {:.4} ± {:.4}", r.step, r.eval_return_mean, r.eval_return_std);
    }
    Ok(())
}

fn load_skills(dir: &Path, config: &Config) -> CliResult<SkillSet> {
    let path = dir.join(SKILLS_CHECKPOINT);
    if !path.exists() {
        return Err(CliError::Usage(format!("no skill checkpoint at {}", path.display())));
    }
    let fingerprint = config.world.build()?.param_spec().fingerprint();
    Ok(SkillSet::load(&path, Some(&fingerprint))?)
}

fn inspect_tasks(skills_dir: &Path, samples: usize, bins: usize, seed: u64, out: Option<&Path>) -> CliResult<()> {
    let path = skills_dir.join(SKILLS_CHECKPOINT);
    if !path.exists() {
        return Err(CliError::Usage(format!("no skill checkpoint at {}", path.display())));
    }
    if bins == 0 {
        return Err(CliError::Usage("--bins must be positive".into()));
    }
    let skills = SkillSet::load(&path, None)?;
    let out = out.unwrap_or(skills_dir);
    std::fs::create_dir_all(out)?;
    let report = inspect::build_report(&skills, samples, bins, seed)?;
    let json = serde_json::to_vec_pretty(&report).expect("report serializes");
    slide_core::checkpoint::write_atomic(&out.join(REPORT_JSON), &json)?;
    print!("{}", inspect::summary_table(&report));
    if samples > 0 {
        inspect::write_histogram_plots(&report, out)?;
        inspect::write_rollout_plots(&skills, out, seed)?;
    }
    Ok(())
}

fn plot_cmd(paths: &[PathBuf], out: &Path, column: Option<&str>) -> CliResult<()> {
    let (column, series) = plot::read_series(paths, column)?;
    let curves = plot::aggregate(&series);
    let x_label = if TRANSFER_HEADER.split(',').any(|c| c == column) { "environment steps" } else { "iteration" };
    plot::mean_std_svg(out, &curves, x_label, &column)?;
    for c in &curves {
        println!("{}: {} seed(s), {} points", c.label, c.seeds, c.points.len());
    }
    Ok(())
}
