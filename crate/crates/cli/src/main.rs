use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use rand::Rng;
use swarm_mc::config::{AcceptanceKind, RunConfig};
use swarm_mc::kernels::{kernel_sum_with, InteractionKernel, KernelSumPlan};
use swarm_mc::meanfield::{default_grid_target, Evolution, Grid, GridDensity, GridProposal, Phi};
use swarm_mc::points::Points;
use swarm_mc::rng::{stream_rng, Stream};
use swarm_mc::run::{run_chain_with, write_atomic, write_outputs, RunOptions};
use swarm_mc::targets::TargetSpec;
use swarm_mc_cli::entropy_csv;
use swarm_mc_cli::suite::{run_suite, ExperimentSuite};

/// Collective Monte Carlo samplers and mean-field simulations.
#[derive(Parser)]
#[command(name = "swarm-mc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one sampler configuration.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Overrides the seed of the configuration.
        #[arg(long)]
        seed: Option<u64>,
        /// Write an SVG scatter of the swarm at every diagnostics iteration.
        #[arg(long)]
        svg: bool,
    },
    /// Run a suite of configurations with repetitions.
    Suite {
        suite: PathBuf,
        #[arg(long, default_value = "suite_out")]
        out: PathBuf,
        /// Repetitions run concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Evolve the mean-field equation on a grid.
    Meanfield {
        /// Cells per axis.
        #[arg(long, default_value_t = 200)]
        grid: usize,
        #[arg(long, default_value_t = 1)]
        dim: usize,
        /// `conv:<sigma>`, `degenerate` or `linear:<sigma>`.
        #[arg(long, default_value = "conv:0.1", value_parser = parse_grid_proposal)]
        proposal: GridProposal,
        /// Entropy used for the dissipation column.
        #[arg(long, default_value = "chi2", value_parser = parse_phi)]
        phi: Phi,
        #[arg(long, default_value_t = 0.1)]
        dt: f64,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(long, value_enum, default_value_t = Acceptance::Metropolis)]
        acceptance: Acceptance,
        #[arg(long, default_value = "meanfield_out")]
        out: PathBuf,
    },
    /// Time the kernel-sum engine.
    BenchKernel {
        #[arg(long, value_delimiter = ',', default_value = "1000,4000,16000")]
        n: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "2,8")]
        dim: Vec<usize>,
        #[arg(long, default_value_t = 0.2)]
        scale: f64,
        #[arg(long, default_value_t = 3)]
        reps: usize,
    },
    /// Inspect the benchmark targets.
    Targets {
        #[command(subcommand)]
        command: TargetsCommand,
    },
}

#[derive(Subcommand)]
enum TargetsCommand {
    /// Print target ids and their default parameters.
    List,
}

#[derive(Clone, Copy, ValueEnum)]
enum Acceptance {
    Metropolis,
    Barker,
}

fn parse_grid_proposal(s: &str) -> Result<GridProposal, String> {
    GridProposal::parse(s).map_err(|e| e.to_string())
}

fn parse_phi(s: &str) -> Result<Phi, String> {
    Phi::parse(s).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<swarm_mc::Error>() {
        Some(err) if err.is_config() => 2,
        Some(swarm_mc::Error::Io { .. }) => 1,
        Some(_) => 3,
        None => 1,
    }
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(v) = std::env::var("SWARM_MC_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .with_context(|| format!("SWARM_MC_THREADS must be a positive integer, got `{v}`"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn dispatch(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::Run { config, out, seed, svg } => cmd_run(config, out, seed, svg),
        Command::Suite { suite, out, jobs } => {
            let s = ExperimentSuite::load(&suite)?;
            let report = run_suite(&s, &out, jobs)?;
            println!("{:<16} {:>5} {:>7} {:>14} {:>14}", "method", "reps", "failed", "final_mean", "final_var");
            for m in &report.methods {
                let f = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.6e}"));
                println!(
                    "{:<16} {:>5} {:>7} {:>14} {:>14}",
                    m.name,
                    m.succeeded,
                    m.failed,
                    f(m.final_mean),
                    f(m.final_variance)
                );
            }
            Ok(())
        }
        Command::Meanfield {
            grid,
            dim,
            proposal,
            phi,
            dt,
            steps,
            acceptance,
            out,
        } => {
            let g = Grid::unit(dim, grid)?;
            let pi = default_grid_target(&g)?;
            let f0 = GridDensity::uniform(g);
            let mut evo = Evolution::new(proposal, dt, steps);
            evo.phi = phi;
            evo.dissipation = true;
            evo.h = match acceptance {
                Acceptance::Metropolis => AcceptanceKind::Metropolis,
                Acceptance::Barker => AcceptanceKind::Barker,
            }
            .function();
            let traj = evo.run(&f0, &pi)?;
            write_atomic(&out.join("entropy.csv"), entropy_csv(&traj.records).as_bytes())?;
            if let Some(last) = traj.records.last() {
                println!("step {}: chi2 {:.6e} kl {:.6e}", last.step, last.chi2, last.kl);
            }
            Ok(())
        }
        Command::BenchKernel { n, dim, scale, reps } => {
            bench_kernel(&n, &dim, scale, reps);
            Ok(())
        }
        Command::Targets {
            command: TargetsCommand::List,
        } => {
            for id in ["banana3", "gauss8", "cauchy_mix"] {
                let spec = TargetSpec::from_id(id)?;
                let t = spec.build()?;
                println!("{id}  dim={}  {}", swarm_mc::targets::Target::dim(&t), serde_json::to_string(&spec)?);
            }
            println!(r#"uniform  {{"id":"uniform","dim":<d>,"log_level":0.0}}"#);
            println!(
                r#"custom  {{"id":"custom","dim":<d>,"components":[{{"weight":1,"kind":"gaussian","mean":[..],"std":<s>}}]}}"#
            );
            Ok(())
        }
    }
}

fn cmd_run(config: PathBuf, out: PathBuf, seed: Option<u64>, svg: bool) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(&config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let start = Instant::now();
    let options = RunOptions {
        frames: svg,
        ..RunOptions::default()
    };
    let output = run_chain_with(&cfg, &options)?;
    write_outputs(&output, &out, svg)?;
    let last = output.records.last().expect("at least the initial record");
    println!(
        "{} iterations in {:.1}s; final energy distance {}, acceptance {}",
        cfg.n_iterations,
        start.elapsed().as_secs_f64(),
        last.energy_distance.map_or("-".into(), |e| format!("{e:.4e}")),
        last.acceptance_rate.map_or("-".into(), |a| format!("{a:.3}")),
    );
    Ok(())
}

fn bench_kernel(ns: &[usize], dims: &[usize], scale: f64, reps: usize) {
    println!("{:>8} {:>4} {:>12} {:>10}", "N", "d", "kernel", "ms");
    let plan = KernelSumPlan::default();
    for &d in dims {
        for &n in ns {
            let mut rng = stream_rng(0, Stream::Init, &[n as u64, d as u64]);
            let pts = Points::new(d, (0..n * d).map(|_| rng.random::<f64>()).collect());
            let w = vec![1.0 / n as f64; n];
            for (label, k) in [
                ("ball", InteractionKernel::uniform_ball(scale)),
                ("gaussian", InteractionKernel::gaussian(scale)),
            ] {
                let mut best = f64::INFINITY;
                for _ in 0..reps.max(1) {
                    let t = Instant::now();
                    std::hint::black_box(kernel_sum_with(&pts, &pts, &k, &w, &plan));
                    best = best.min(t.elapsed().as_secs_f64() * 1e3);
                }
                println!("{n:>8} {d:>4} {label:>12} {best:>10.2}");
            }
        }
    }
}
