use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qleak::adversary::AdversaryView;
use qleak::pipeline::{self, AttackOptions, HeuristicChoice, PipelineError, RunConfig, OUTPUT_ROOT_ENV};

#[derive(Parser)]
#[command(name = "qleak", version, about = "Training-data extraction attack and masking defense on a simulated quantum cloud")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Subcommand, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Train the victim with the cloud-side logger attached.
    Train,
    /// Extract labels from the victim log.
    Attack,
    /// Relabel or prune the extraction with the classifier ensemble.
    Refine,
    /// Train a clone on the refined data.
    Clone,
    /// Train the masked model and compare the adversary against the victim.
    Defend,
    /// Merge stage outputs into report.json and plots/*.csv.
    Report,
    /// Every stage in order.
    All,
}

#[derive(Args)]
struct Opts {
    /// JSON run configuration; without it `train` uses the built-in Iris setup.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Run directory; defaults to <output root>/<dataset>-seed<seed>.
    #[arg(long, global = true, value_name = "PATH")]
    run_dir: Option<PathBuf>,
    #[arg(long, global = true, value_name = "INT")]
    seed: Option<u64>,
    #[arg(long, global = true, value_parser = ["majority", "wlinear", "wexp", "all"])]
    heuristic: Option<String>,
    #[arg(long, global = true, value_parser = ["expvals", "class_probs"])]
    view: Option<String>,
    #[arg(long, global = true, value_name = "FLOAT")]
    alpha: Option<f64>,
}

fn config_error(msg: impl Into<String>) -> PipelineError {
    PipelineError::Config(msg.into())
}

impl Opts {
    fn heuristic(&self) -> Result<Option<HeuristicChoice>, PipelineError> {
        self.heuristic.as_deref().map(str::parse).transpose()
    }

    fn view(&self) -> Result<Option<AdversaryView>, PipelineError> {
        self.view
            .as_deref()
            .map(|v| v.parse().map_err(|e: qleak::adversary::AdversaryError| config_error(e.to_string())))
            .transpose()
    }

    /// The config file (or built-in Iris setup) with flag overrides applied.
    fn fresh_config(&self) -> Result<RunConfig, PipelineError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => {
                let seed = self
                    .seed
                    .ok_or_else(|| config_error("--seed is required when no --config is given"))?;
                RunConfig::iris(seed)
            }
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(h) = self.heuristic()? {
            cfg.heuristic = h;
        }
        if let Some(v) = self.view()? {
            cfg.adversary_view = v;
        }
        if let Some(a) = self.alpha {
            cfg.defense.get_or_insert_with(Default::default).alpha = a;
        }
        Ok(cfg)
    }

    fn run_dir(&self, cfg: Option<&RunConfig>) -> Result<PathBuf, PipelineError> {
        if let Some(d) = &self.run_dir {
            return Ok(d.clone());
        }
        let cfg = match cfg {
            Some(c) => c.clone(),
            None if self.config.is_some() || self.seed.is_some() => self.fresh_config()?,
            None => return Err(config_error(format!("--run-dir is required (or --config/--seed to derive one under ${OUTPUT_ROOT_ENV})"))),
        };
        Ok(cfg.output_root().join(cfg.run_name()))
    }
}

/// Rejects a --seed that disagrees with the run directory's config.
fn check_seed(opts: &Opts, dir: &Path) -> Result<(), PipelineError> {
    let (Some(seed), Ok(text)) = (opts.seed, std::fs::read_to_string(dir.join(pipeline::files::CONFIG))) else {
        return Ok(());
    };
    let stored = RunConfig::from_json(&text)?;
    if stored.seed != seed {
        return Err(config_error(format!(
            "{} was trained with seed {}, not {seed}",
            dir.display(),
            stored.seed
        )));
    }
    Ok(())
}

fn pct(x: f64) -> String {
    format!("{:.1}%", 100.0 * x)
}

fn pct_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".into(), pct)
}

fn run(cli: &Cli) -> Result<(), PipelineError> {
    let opts = &cli.opts;
    match cli.command {
        Command::Train => {
            let cfg = opts.fresh_config()?;
            let dir = opts.run_dir(Some(&cfg))?;
            let r = pipeline::cmd_train(&cfg, &dir)?;
            println!(
                "victim: train {} test {} after {} epochs",
                pct_opt(r.final_train_accuracy()),
                pct_opt(r.final_test_accuracy),
                r.epochs.len()
            );
            println!("run directory: {}", dir.display());
        }
        Command::Attack => {
            let dir = opts.run_dir(None)?;
            check_seed(opts, &dir)?;
            let s = pipeline::cmd_attack(
                &dir,
                AttackOptions {
                    heuristic: opts.heuristic()?,
                    view: opts.view()?,
                },
            )?;
            for row in &s.accuracies {
                println!("{:<9} {:<11} {}", row.heuristic, row.view, pct(row.accuracy));
            }
        }
        Command::Refine => {
            let dir = opts.run_dir(None)?;
            check_seed(opts, &dir)?;
            let s = pipeline::cmd_refine(&dir)?;
            println!(
                "wrong labels {} -> {}, relabeled {}, pruned {} of {}",
                s.wrong_before, s.wrong_after, s.n_relabeled, s.n_pruned, s.n_points
            );
        }
        Command::Clone => {
            let dir = opts.run_dir(None)?;
            check_seed(opts, &dir)?;
            let r = pipeline::cmd_clone(&dir)?;
            println!(
                "victim test {}, clone test {} (trained on {} points)",
                pct_opt(r.victim_test_accuracy),
                pct_opt(r.clone_test_accuracy),
                r.n_train
            );
        }
        Command::Defend => {
            let cfg = if opts.config.is_some() || opts.seed.is_some() {
                Some(opts.fresh_config()?)
            } else {
                None
            };
            let dir = opts.run_dir(cfg.as_ref())?;
            check_seed(opts, &dir)?;
            let r = pipeline::cmd_defend(cfg.as_ref(), &dir, opts.alpha)?;
            println!(
                "user accuracy {} (baseline {})",
                pct(r.user_accuracy),
                pct(r.baseline_user_accuracy)
            );
            for c in &r.adversary {
                println!(
                    "adversary {:<9} {} -> {} ({} relative drop)",
                    c.heuristic,
                    pct(c.baseline_accuracy),
                    pct(c.defended_accuracy),
                    pct(c.relative_drop)
                );
            }
        }
        Command::Report => {
            let dir = opts.run_dir(None)?;
            let out = pipeline::cmd_report(&dir)?;
            for w in &out.warnings {
                eprintln!("warning: {w}");
            }
            println!("{}", dir.join(pipeline::files::REPORT).display());
            for p in &out.plots {
                println!("{}", p.display());
            }
        }
        Command::All => {
            let cfg = opts.fresh_config()?;
            let dir = opts.run_dir(Some(&cfg))?;
            let out = pipeline::run_all(&cfg, &dir)?;
            println!("{}", dir.join(pipeline::files::REPORT).display());
            for w in &out.warnings {
                eprintln!("warning: {w}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
