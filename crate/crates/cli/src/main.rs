//! `mixreg` command-line front end.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use mixreg::analysis::{LipschitzReport, ValueSurface};
use mixreg::harness::analyze::{LIPSCHITZ_JSON, SURFACE_JSON};
use mixreg::harness::{analyze, load_run, plot, run, sweep, AnalyzeOptions, ExperimentConfig, SweepAxis};

#[derive(Parser)]
#[command(name = "mixreg", version, about = "Train and analyse mixture-regularized RL agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured seed (or just `--seed`).
    Train {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Dotted `key=value`, repeatable (e.g. `augment.method=mixreg`).
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// One run per (value, seed) along a single axis.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Diagnostics for a finished run; all of them when no flag is given.
    Analyze {
        run_dir: PathBuf,
        #[arg(long)]
        lipschitz: bool,
        #[arg(long)]
        surface: bool,
        #[arg(long)]
        scores: bool,
    },
    /// Render an SVG from one or more run directories.
    Plot {
        #[arg(required = true)]
        run_dirs: Vec<PathBuf>,
        #[arg(long, value_enum)]
        kind: PlotKind,
        #[arg(short, long)]
        output: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PlotKind {
    Curves,
    Bars,
    Surface,
    LipschitzBox,
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, seed, overrides } => {
            let cfg = ExperimentConfig::load(&config, &overrides)?;
            let seeds = seed.map_or_else(|| cfg.seeds.clone(), |s| vec![s]);
            for s in seeds {
                let a = run(&cfg, s)?;
                match a.last() {
                    Some(r) => println!(
                        "{} seed {s}: timestep {} train {:.3} test {:.3} -> {}",
                        cfg.name,
                        r.timestep,
                        r.train_eval_return,
                        r.test_return,
                        a.dir.display()
                    ),
                    None => println!("{} seed {s}: no eval points -> {}", cfg.name, a.dir.display()),
                }
            }
        }
        Command::Sweep { config, axis, values, overrides } => {
            let cfg = ExperimentConfig::load(&config, &overrides)?;
            let axis: SweepAxis = axis.parse()?;
            let rows = sweep(&cfg, axis, &values)?;
            println!("{axis}\tseed\ttrain\ttest\tstatus");
            for r in &rows {
                let f = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.3}"));
                println!(
                    "{}\t{}\t{}\t{}\t{}",
                    r.value,
                    r.seed,
                    f(r.train_return),
                    f(r.test_return),
                    r.error.as_deref().unwrap_or("ok")
                );
            }
        }
        Command::Analyze { run_dir, lipschitz, surface, scores } => {
            let opts = if lipschitz || surface || scores {
                AnalyzeOptions { lipschitz, surface, scores }
            } else {
                AnalyzeOptions::all()
            };
            let out = analyze(&run_dir, opts)?;
            if let Some(l) = out.lipschitz {
                println!(
                    "lipschitz: max {:.4} q3 {:.4} median {:.4} q1 {:.4} over {} pairs",
                    l.max,
                    l.q3,
                    l.median,
                    l.q1,
                    l.ratios.len()
                );
            }
            if let Some(s) = out.surface {
                println!("surface: {} points written", s.points.len());
            }
            if let Some(s) = out.scores {
                for g in &s.games {
                    println!(
                        "scores {}: train {:.3} test {:.3} gap {:.3} normalized train {:.3} test {:.3} gap {:.3}",
                        g.game, g.train, g.test, g.gap, g.norm_train, g.norm_test, g.norm_gap
                    );
                }
            }
        }
        Command::Plot { run_dirs, kind, output } => {
            let svg = match kind {
                PlotKind::Curves | PlotKind::Bars => {
                    let runs = run_dirs.iter().map(|d| load_run(d)).collect::<Result<Vec<_>, _>>()?;
                    if matches!(kind, PlotKind::Curves) {
                        plot::curves_svg(&runs)?
                    } else {
                        plot::bars_svg(&runs)?
                    }
                }
                PlotKind::Surface => {
                    let dir = &run_dirs[0];
                    let path = dir.join(SURFACE_JSON);
                    let text = std::fs::read_to_string(&path)
                        .with_context(|| format!("{} (run `analyze --surface` first)", path.display()))?;
                    let s: ValueSurface = serde_json::from_str(&text)?;
                    plot::surface_svg(&s, &dir.display().to_string())
                }
                PlotKind::LipschitzBox => {
                    let runs = run_dirs.iter().map(|d| load_run(d)).collect::<Result<Vec<_>, _>>()?;
                    let game = runs[0].config.env.game;
                    if let Some(r) = runs.iter().find(|r| r.config.env.game != game) {
                        return Err(mixreg::Error::Config(format!(
                            "mismatched games: {} vs {}",
                            game.name(),
                            r.config.env.game.name()
                        ))
                        .into());
                    }
                    let mut reports = Vec::new();
                    for r in &runs {
                        let path = r.dir.join(LIPSCHITZ_JSON);
                        let text = std::fs::read_to_string(&path)
                            .with_context(|| format!("{} (run `analyze --lipschitz` first)", path.display()))?;
                        let rep: LipschitzReport = serde_json::from_str(&text)?;
                        reports.push((format!("{}/seed-{}", r.config.name, r.seed), rep));
                    }
                    plot::lipschitz_box_svg(&reports)?
                }
            };
            if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(&output, svg)?;
            println!("wrote {}", output.display());
        }
    }
    Ok(())
}

/// `error kind=<tag>: <message>` on a single line.
fn report(err: &anyhow::Error) -> String {
    let kind = err
        .chain()
        .find_map(|e| e.downcast_ref::<mixreg::Error>())
        .map_or("other", mixreg::Error::kind);
    let msg = err.chain().map(ToString::to_string).collect::<Vec<_>>().join(": ");
    format!("error kind={kind}: {}", msg.split_whitespace().collect::<Vec<_>>().join(" "))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", report(&e));
            ExitCode::FAILURE
        }
    }
}
