//! The `weaves` command line. Every subcommand prints a report of
//! `key=value` lines on standard output.

use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use weaves_core::recommender::{extract_policy_rules, QPolicy};
use weaves_core::{Policy, RunOutcome, Status, Tapestry};

use crate::apps::delay::{median, run_delay_benchmark, variation, DEFAULT_CHUNK};
use crate::apps::ode::{integrate_explicit_only, integrate_ode_switching, train_ode_policy, OdeConfig, OdeProblem};
use crate::apps::pde::{solve_mediated_pde, unit_split, MediatorConfig, Source};
use crate::apps::quad::{
    integrate_adaptive_quadrature, integrate_fixed, train_quadrature_policy, QuadRule, QuadratureProblem,
};
use crate::checkpoint_file::{load_checkpoint, save_checkpoint};
use crate::config::{load_grid, parse_tapestry_config, TapestryConfig};
use crate::error::{AppError, Result};
use crate::monitor::{serve, Session};
use crate::policy_file::{load_policy, save_policy};

#[derive(Parser, Debug)]
#[command(name = "weaves", version, about = "Compose, run, checkpoint and inspect weaves tapestries")]
pub struct Cli {
    /// Seed for scheduling and learning.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Scheduler quantum in steps.
    #[arg(long, global = true)]
    pub quantum: Option<u32>,
    /// Learned policy: loaded when the file exists, otherwise trained and saved.
    #[arg(long, global = true)]
    pub policy_file: Option<PathBuf>,
    /// Write the scheduler trace to this file.
    #[arg(long, global = true)]
    pub trace: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run a tapestry configuration to completion.
    Run {
        config: PathBuf,
        /// Pick among runnable classes at random (seeded) instead of in turn.
        #[arg(long)]
        random_schedule: bool,
    },
    /// Timing benchmarks.
    Bench {
        #[command(subcommand)]
        which: Bench,
    },
    /// Demonstration applications.
    Demo {
        #[command(subcommand)]
        which: Demo,
    },
    /// Run a configuration for some dispatches and save a checkpoint file.
    Checkpoint {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Whole dispatches to run before saving.
        #[arg(long, default_value_t = 0)]
        dispatches: u64,
    },
    /// Resume a checkpoint file against the configuration it came from.
    Restore { file: PathBuf, config: PathBuf },
    /// Grid scenarios.
    Grid {
        #[command(subcommand)]
        which: GridCommand,
    },
    /// Answer one monitor query, or serve the line protocol on standard
    /// streams when the query is `-`.
    Monitor {
        query: String,
        config: PathBuf,
        /// Whole dispatches to run before answering.
        #[arg(long, default_value_t = 0)]
        after: u64,
    },
}

#[derive(Subcommand, Debug)]
pub enum Bench {
    /// Woven delay loops against one plain loop.
    Delay(DelayArgs),
}

#[derive(Args, Debug)]
pub struct DelayArgs {
    /// Number of strings.
    #[arg(long, default_value_t = 1)]
    pub n: usize,
    /// Baseline duration to calibrate the work to, in milliseconds.
    #[arg(long, default_value_t = 200)]
    pub millis: u64,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SourceArg {
    Zero,
    Unit,
    Sine,
}

#[derive(Subcommand, Debug)]
pub enum Demo {
    /// Two Poisson subdomains joined by an interface mediator.
    Pde {
        #[arg(long, default_value_t = 41)]
        n: usize,
        #[arg(long, value_enum, default_value_t = SourceArg::Sine)]
        source: SourceArg,
        /// Write x,u samples as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Adaptive quadrature with learned rule selection.
    Quad {
        #[arg(long, default_value_t = 1e-7)]
        tol: f64,
        #[arg(long, default_value_t = 0.45)]
        alpha: f64,
        /// Write the accepted and failed attempts as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// ODE integration with learned algorithm switching.
    Ode {
        #[arg(long, default_value_t = 1000.0)]
        lambda: f64,
        #[arg(long, default_value_t = 3.0)]
        t1: f64,
        /// Write t,y samples as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
pub enum GridCommand {
    /// Run a configuration with a `[grid]` section and its events.
    Run {
        config: PathBuf,
        #[arg(long, default_value_t = 100_000)]
        ticks: u64,
    },
}

fn read_config(path: &Path) -> Result<TapestryConfig> {
    parse_tapestry_config(&std::fs::read_to_string(path)?)
}

fn apply_flags(cli: &Cli, t: &mut Tapestry) -> Result<()> {
    if let Some(q) = cli.quantum {
        t.set_quantum(q)?;
    }
    Ok(())
}

fn write_trace(cli: &Cli, t: &Tapestry) -> Result<()> {
    if let Some(path) = &cli.trace {
        let mut f = io::BufWriter::new(std::fs::File::create(path)?);
        for line in t.trace().lines() {
            writeln!(f, "{line}")?;
        }
        f.flush()?;
    }
    Ok(())
}

fn outcome_name(o: RunOutcome) -> &'static str {
    match o {
        RunOutcome::Done => "done",
        RunOutcome::Waiting => "waiting",
        RunOutcome::Budget => "budget",
    }
}

fn report_tapestry(out: &mut dyn Write, t: &Tapestry) -> Result<()> {
    let count = |s: Status| t.strings().filter(|x| x.status() == s).count();
    writeln!(out, "strings={}", t.strings().count())?;
    writeln!(out, "finished={}", count(Status::Finished))?;
    writeln!(out, "failed={}", count(Status::Failed))?;
    writeln!(out, "steps={}", t.scheduler().step())?;
    writeln!(out, "dispatches={}", t.scheduler().dispatches())?;
    Ok(())
}

fn csv_file(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| AppError::Format(e.to_string()))?;
    w.write_record(header).map_err(|e| AppError::Format(e.to_string()))?;
    for r in rows {
        w.write_record(&r).map_err(|e| AppError::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Load the policy file if it exists; otherwise train and save when a path
/// was given.
fn policy_or_train(cli: &Cli, out: &mut dyn Write, train: impl FnOnce() -> Result<QPolicy>) -> Result<QPolicy> {
    if let Some(path) = cli.policy_file.as_ref().filter(|p| p.exists()) {
        writeln!(out, "policy=loaded")?;
        return load_policy(path);
    }
    let p = train()?;
    writeln!(out, "policy=trained")?;
    if let Some(path) = &cli.policy_file {
        save_policy(&p, path)?;
    }
    Ok(p)
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Run { config, random_schedule } => {
            let mut s = Session::from_config(&read_config(config)?)?;
            if *random_schedule {
                s.tapestry_mut().set_policy(Policy::SeededRandom, cli.seed);
            }
            apply_flags(cli, s.tapestry_mut())?;
            let outcome = s.run();
            write_trace(cli, s.tapestry())?;
            let outcome = outcome?;
            writeln!(out, "outcome={}", outcome_name(outcome))?;
            writeln!(out, "commands={}", s.applied().len())?;
            report_tapestry(out, s.tapestry())?;
        }
        Command::Bench { which: Bench::Delay(a) } => {
            let work = crate::apps::delay::calibrate(Duration::from_millis(a.millis));
            let mut totals = Vec::new();
            let mut baselines = Vec::new();
            let mut dispatches = 0;
            for _ in 0..a.repeats.max(1) {
                let r = run_delay_benchmark(a.n, work)?;
                totals.push(r.total);
                baselines.push(r.baseline);
                dispatches = r.dispatches;
            }
            let (t, b) = (median(&totals), median(&baselines));
            writeln!(out, "strings={}", a.n)?;
            writeln!(out, "work={work}")?;
            writeln!(out, "chunk={DEFAULT_CHUNK}")?;
            writeln!(out, "repeats={}", totals.len())?;
            writeln!(out, "baseline_s={:.6}", b.as_secs_f64())?;
            writeln!(out, "total_s={:.6}", t.as_secs_f64())?;
            writeln!(out, "ratio={:.4}", t.as_secs_f64() / b.as_secs_f64())?;
            writeln!(out, "dispatches={dispatches}")?;
            writeln!(out, "per_switch_s={:.3e}", (t.as_secs_f64() - b.as_secs_f64()) / dispatches.max(1) as f64)?;
            writeln!(out, "cv={:.4}", variation(&totals))?;
        }
        Command::Demo { which } => demo(cli, which, out)?,
        Command::Checkpoint { config, out: file, dispatches } => {
            let mut s = Session::from_config(&read_config(config)?)?;
            apply_flags(cli, s.tapestry_mut())?;
            let outcome = s.run_for(*dispatches)?;
            save_checkpoint(s.tapestry(), file)?;
            write_trace(cli, s.tapestry())?;
            writeln!(out, "outcome={}", outcome_name(outcome))?;
            writeln!(out, "file={}", file.display())?;
            writeln!(out, "bytes={}", std::fs::metadata(file)?.len())?;
            report_tapestry(out, s.tapestry())?;
        }
        Command::Restore { file, config } => {
            let mut s = Session::from_config(&read_config(config)?)?;
            apply_flags(cli, s.tapestry_mut())?;
            load_checkpoint(s.tapestry_mut(), file)?;
            writeln!(out, "resumed_at_step={}", s.tapestry().scheduler().step())?;
            let outcome = s.run();
            write_trace(cli, s.tapestry())?;
            writeln!(out, "outcome={}", outcome_name(outcome?))?;
            report_tapestry(out, s.tapestry())?;
        }
        Command::Grid { which: GridCommand::Run { config, ticks } } => {
            let cfg = read_config(config)?;
            if cfg.grid.is_none() {
                return Err(AppError::UnresolvedReference("[grid] section".into()));
            }
            let mut g = load_grid(&cfg)?;
            let complete = g.run(*ticks)?;
            writeln!(out, "complete={complete}")?;
            writeln!(out, "ticks={}", g.tick())?;
            writeln!(out, "regions_disjoint={}", g.regions_disjoint())?;
            let stats = g.transport().stats();
            writeln!(out, "sent={}", stats.sent)?;
            writeln!(out, "delivered={}", stats.delivered)?;
            writeln!(out, "retransmitted={}", stats.retransmitted)?;
            for (id, t) in g.nodes() {
                let done = t.strings().filter(|s| !s.status().is_live()).count();
                writeln!(out, "node.{}={}/{} strings done", id.0, done, t.strings().count())?;
            }
            for line in g.log() {
                writeln!(out, "log={line}")?;
            }
        }
        Command::Monitor { query, config, after } => {
            let mut s = Session::from_config(&read_config(config)?)?;
            apply_flags(cli, s.tapestry_mut())?;
            s.run_for(*after)?;
            if query == "-" {
                let stdin = io::stdin();
                serve(&mut s, stdin.lock(), &mut *out)?;
            } else {
                write!(out, "{}", s.query(query)?)?;
            }
        }
    }
    Ok(())
}

fn demo(cli: &Cli, which: &Demo, out: &mut dyn Write) -> Result<()> {
    match which {
        Demo::Pde { n, source, csv } => {
            let source = match source {
                SourceArg::Zero => Source::Zero,
                SourceArg::Unit => Source::Unit,
                SourceArg::Sine => Source::SineMode,
            };
            let (l, r) = unit_split(*n, source, 0.0, 0.0);
            let sol = solve_mediated_pde(&l, &r, &MediatorConfig::default())?;
            writeln!(out, "source={}", source.name())?;
            writeln!(out, "points_per_side={n}")?;
            writeln!(out, "iterations={}", sol.iterations)?;
            writeln!(out, "interface={:.12}", sol.interface)?;
            if let Some(path) = csv {
                let h = 0.5 / (*n - 1) as f64;
                let rows = sol
                    .left
                    .iter()
                    .enumerate()
                    .map(|(i, u)| (i as f64 * h, *u))
                    .chain(sol.right.iter().enumerate().skip(1).map(|(i, u)| (0.5 + i as f64 * h, *u)))
                    .map(|(x, u)| vec![x.to_string(), u.to_string()]);
                csv_file(path, &["x", "u"], rows)?;
            }
        }
        Demo::Quad { tol, alpha, csv } => {
            let rules = QuadRule::ALL;
            let budget = 200_000;
            let mut policy = policy_or_train(cli, out, || {
                let problems = QuadratureProblem::power_family(*tol);
                Ok(train_quadrature_policy(&problems, &rules, 200, 100, cli.seed, budget)?.0)
            })?;
            policy.set_epsilon(0.0);
            let p = QuadratureProblem::power(*alpha, *tol);
            let learned = integrate_adaptive_quadrature(&p, &rules, &mut policy, budget)?;
            writeln!(out, "problem={}", p.name)?;
            writeln!(out, "exact={:.15}", 1.0 / (1.0 - alpha))?;
            writeln!(out, "value={:.15}", learned.value)?;
            writeln!(out, "error_estimate={:.3e}", learned.error_estimate)?;
            writeln!(out, "evaluations={}", learned.evaluations)?;
            writeln!(out, "failed_choices={}", learned.failures())?;
            for rule in rules {
                let q = QuadratureProblem::power(*alpha, *tol);
                match integrate_fixed(&q, rule, budget) {
                    Ok(o) => writeln!(out, "fixed.{}={}", rule.name(), o.evaluations)?,
                    Err(e) => writeln!(out, "fixed.{}=error: {e}", rule.name())?,
                }
            }
            for rule in extract_policy_rules(&policy, policy.config().margin) {
                writeln!(out, "rule={}", rule.to_string().replace('\n', " "))?;
            }
            if let Some(path) = csv {
                let rows = learned.trace.iter().map(|a| {
                    vec![
                        a.interval.0.to_string(),
                        a.interval.1.to_string(),
                        a.action.payload.clone(),
                        format!("{:?}", a.outcome).to_lowercase(),
                        a.evaluations.to_string(),
                    ]
                });
                csv_file(path, &["a", "b", "rule", "outcome", "evaluations"], rows)?;
            }
        }
        Demo::Ode { lambda, t1, csv } => {
            let cfg = OdeConfig::default();
            let mut policy = policy_or_train(cli, out, || {
                let problems = [
                    OdeProblem::relaxation(*lambda, *t1),
                    OdeProblem::alternating(*lambda, *t1),
                    OdeProblem::decay(*t1),
                ];
                Ok(train_ode_policy(&problems, &cfg, 60, 30, cli.seed)?.0)
            })?;
            policy.set_epsilon(0.0);
            let p = OdeProblem::relaxation(*lambda, *t1);
            let switching = integrate_ode_switching(&p, &mut policy, &cfg)?;
            let explicit = integrate_explicit_only(&p, &cfg)?;
            writeln!(out, "problem={}", p.name)?;
            writeln!(out, "steps_switching={}", switching.steps)?;
            writeln!(out, "steps_explicit={}", explicit.steps)?;
            writeln!(out, "step_ratio={:.2}", explicit.steps as f64 / switching.steps.max(1) as f64)?;
            writeln!(out, "final_switching={:.9}", switching.final_value)?;
            writeln!(out, "final_explicit={:.9}", explicit.final_value)?;
            for s in &switching.switches {
                writeln!(out, "switch=t {:.6} {} -> {}", s.t, s.from.name(), s.to.name())?;
            }
            for rule in extract_policy_rules(&policy, policy.config().margin) {
                writeln!(out, "rule={}", rule.to_string().replace('\n', " "))?;
            }
            if let Some(path) = csv {
                let rows = switching.samples.iter().map(|(t, y)| vec![t.to_string(), y.to_string()]);
                csv_file(path, &["t", "y"], rows)?;
            }
        }
    }
    Ok(())
}

