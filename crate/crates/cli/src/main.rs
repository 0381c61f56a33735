//! Command-line pipeline for congestion-game equilibria:
//! `generate` a charging scenario, `solve` its atomic (vne) or clustered
//! population (svwe) equilibrium, `compare` the approximations against the
//! exact equilibrium across population counts.
//!
//! Exit codes: 0 converged, 2 completed without convergence, 1 usage or
//! I/O errors.

mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use congame::bounds::{compute_constants, compute_rho, k_bound, distance_bounds, BoundReport, KBound};
use congame::io::{ResultDoc, ScenarioDoc};
use congame::reduce::{
    build_aux_game, kmeans_cluster, param_vectors, reduction_report, standardize, AuxiliaryGame,
    ReductionReport,
};
use congame::scenario::{generate, ScenarioSpec};
use congame::solver::{solve_svwe, solve_vne, SolveResult};
use congame::{GameInstance, SolverConfig};
use manifest::{config_hash, now_ms, RunManifest};

#[derive(Parser)]
#[command(name = "congame", version, about = "Congestion-game equilibria and clustered approximations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Serialize)]
enum Command {
    /// Generate a charging scenario file.
    Generate(GenerateArgs),
    /// Solve one equilibrium problem from a scenario file.
    Solve(SolveArgs),
    /// Solve the exact equilibrium once, then every clustered
    /// approximation, and report errors, timings and bounds.
    Compare(CompareArgs),
}

#[derive(Args, Serialize)]
struct GenerateArgs {
    #[arg(long)]
    players: usize,
    #[arg(long, default_value_t = 24)]
    horizon: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1400.0)]
    capacity: f64,
    #[arg(long, default_value_t = 50.0)]
    ramp: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum, Serialize)]
enum Mode {
    Vne,
    Svwe,
}

#[derive(Args, Serialize)]
struct SolveArgs {
    #[arg(long)]
    game: PathBuf,
    #[arg(long, value_enum)]
    mode: Mode,
    /// Population count for svwe (defaults to one population per player).
    #[arg(long)]
    populations: Option<usize>,
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
    #[arg(long, default_value_t = 200_000)]
    max_iters: usize,
    /// Worker threads for the per-unit updates; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    #[arg(long, default_value_t = 0)]
    kmeans_seed: u64,
    /// Standardize parameter vectors per coordinate before clustering.
    #[arg(long, default_value_t = false)]
    standardize: bool,
    #[arg(long)]
    out: PathBuf,
    /// Also write the aggregate demand profile as CSV (t, X_t).
    #[arg(long)]
    agg_csv: Option<PathBuf>,
    /// Stream an iteration trace as CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    trace_every: usize,
}

#[derive(Args, Serialize)]
struct CompareArgs {
    #[arg(long)]
    game: PathBuf,
    /// Comma-separated population counts, e.g. 5,10,20,50.
    #[arg(long, value_delimiter = ',')]
    populations: Vec<usize>,
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
    #[arg(long, default_value_t = 200_000)]
    max_iters: usize,
    #[arg(long, default_value_t = 0)]
    threads: usize,
    #[arg(long, default_value_t = 0)]
    kmeans_seed: u64,
    /// Standardize parameter vectors per coordinate before clustering.
    #[arg(long, default_value_t = false)]
    standardize: bool,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // help/version requests are not usage errors
            if err.use_stderr() {
                eprintln!("{err}");
                return ExitCode::from(1);
            }
            print!("{err}");
            return ExitCode::SUCCESS;
        }
    };
    let outcome = match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Solve(args) => cmd_solve(args),
        Command::Compare(args) => cmd_compare(args),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

fn cmd_generate(args: GenerateArgs) -> Result<u8> {
    let started = now_ms();
    let hash = config_hash(&args);
    let spec = ScenarioSpec {
        players: args.players,
        horizon: args.horizon,
        seed: args.seed,
        capacity: args.capacity,
        ramp: args.ramp,
        ..Default::default()
    };
    let clock = Instant::now();
    let (game, meta) = generate(&spec)?;
    let generate_ms = elapsed_ms(clock);

    let doc = ScenarioDoc::from_game(&spec, &game, &meta);
    std::fs::write(&args.out, doc.to_json()?)
        .with_context(|| format!("writing {}", args.out.display()))?;

    RunManifest {
        command: "generate".into(),
        config_hash: hash,
        scenario_seed: Some(args.seed),
        started_unix_ms: started,
        finished_unix_ms: now_ms(),
        phases_ms: vec![("generate".into(), generate_ms)],
        iteration_counts: vec![],
        outputs: vec![args.out.display().to_string()],
    }
    .write(&manifest_path(&args.out))?;
    println!(
        "generated {} players over {} slots (seed {}) -> {}",
        args.players,
        args.horizon,
        args.seed,
        args.out.display()
    );
    Ok(0)
}

fn load_game(path: &Path) -> Result<GameInstance> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let doc = ScenarioDoc::from_json(&text)?;
    Ok(doc.to_game()?)
}

fn solver_config(tol: f64, max_iters: usize, threads: usize, trace_every: usize) -> SolverConfig {
    SolverConfig {
        stop_tol: tol,
        max_iters,
        parallel_units: threads != 1,
        trace_every,
        ..Default::default()
    }
}

fn setup_threads(threads: usize) -> Result<()> {
    if threads > 1 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("configuring the thread pool")?;
    }
    Ok(())
}

/// k-means over player parameter vectors followed by the population-game
/// construction; returns the reduction quality report alongside.
fn reduce_game(
    game: &GameInstance,
    populations: usize,
    seed: u64,
    standardize_params: bool,
) -> Result<(AuxiliaryGame, ReductionReport)> {
    let mut params = param_vectors(game)?;
    if standardize_params {
        standardize(&mut params);
    }
    let outcome = kmeans_cluster(&params, populations, seed, 300)?;
    let aux = build_aux_game(game, &outcome.assignment)?;
    let report = reduction_report(game, &aux, outcome.objective_trace.last().copied());
    for repair in aux.repairs() {
        eprintln!("note: {repair}");
    }
    Ok((aux, report))
}

fn write_aggregate_csv(path: &Path, aggregate: &[f64]) -> Result<()> {
    let mut text = String::from("t,X\n");
    for (t, x) in aggregate.iter().enumerate() {
        text.push_str(&format!("{},{}\n", t + 1, x));
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn write_trace_csv(path: &Path, result: &SolveResult) -> Result<()> {
    let mut text = String::from("iter,residual,max_primal_violation,duality_gap_proxy\n");
    if let Some(rows) = &result.trace {
        for row in rows {
            text.push_str(&format!(
                "{},{},{},{}\n",
                row.iter, row.residual, row.max_primal_violation, row.duality_gap_proxy
            ));
        }
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn elapsed_ms(clock: Instant) -> f64 {
    clock.elapsed().as_secs_f64() * 1e3
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn cmd_solve(args: SolveArgs) -> Result<u8> {
    let started = now_ms();
    let hash = config_hash(&args);
    setup_threads(args.threads)?;
    let game = load_game(&args.game)?;
    let trace_every = if args.trace.is_some() { args.trace_every } else { 0 };
    let config = solver_config(args.tol, args.max_iters, args.threads, trace_every);

    let mut phases = Vec::new();
    let clock = Instant::now();
    let result = match args.mode {
        Mode::Vne => {
            let result = solve_vne(&game, &config);
            phases.push(("solve_vne".to_string(), elapsed_ms(clock)));
            result
        }
        Mode::Svwe => {
            let populations = args.populations.unwrap_or(game.player_count());
            let (aux, report) = reduce_game(&game, populations, args.kmeans_seed, args.standardize)?;
            phases.push(("cluster".to_string(), elapsed_ms(clock)));
            eprintln!(
                "clustered {} players into {} populations (delta_x {:.4}, delta_u {:.4})",
                game.player_count(),
                populations,
                report.delta_x,
                report.delta_u
            );
            let clock = Instant::now();
            let result = solve_svwe(&aux, &config);
            phases.push(("solve_svwe".to_string(), elapsed_ms(clock)));
            result
        }
    };

    std::fs::write(&args.out, ResultDoc::from_result(&result).to_json()?)
        .with_context(|| format!("writing {}", args.out.display()))?;
    let mut outputs = vec![args.out.display().to_string()];
    if let Some(path) = &args.agg_csv {
        write_aggregate_csv(path, &result.aggregate)?;
        outputs.push(path.display().to_string());
    }
    if let Some(path) = &args.trace {
        write_trace_csv(path, &result)?;
        outputs.push(path.display().to_string());
    }

    RunManifest {
        command: "solve".into(),
        config_hash: hash,
        scenario_seed: None,
        started_unix_ms: started,
        finished_unix_ms: now_ms(),
        phases_ms: phases,
        iteration_counts: vec![("solve".into(), result.iterations)],
        outputs,
    }
    .write(&manifest_path(&args.out))?;

    println!(
        "{} in {} iterations, residual {:.3e}",
        if result.converged { "converged" } else { "did not converge" },
        result.iterations,
        result.final_residual
    );
    Ok(if result.converged { 0 } else { 2 })
}

fn relative_aggregate_error(approx: &[f64], exact: &[f64]) -> f64 {
    let mut diff_sq = 0.0;
    let mut norm_sq = 0.0;
    for (a, e) in approx.iter().zip(exact) {
        diff_sq += (a - e) * (a - e);
        norm_sq += e * e;
    }
    (diff_sq / norm_sq.max(f64::MIN_POSITIVE)).sqrt()
}

fn cmd_compare(args: CompareArgs) -> Result<u8> {
    let started = now_ms();
    let hash = config_hash(&args);
    if args.populations.is_empty() {
        bail!("--populations needs at least one entry");
    }
    setup_threads(args.threads)?;
    let game = load_game(&args.game)?;
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let config = solver_config(args.tol, args.max_iters, args.threads, 0);

    let mut phases = Vec::new();
    let mut iteration_counts = Vec::new();
    let mut outputs = Vec::new();

    let clock = Instant::now();
    let vne = solve_vne(&game, &config);
    let vne_ms = elapsed_ms(clock);
    phases.push(("solve_vne".to_string(), vne_ms));
    iteration_counts.push(("vne".to_string(), vne.iterations));
    let path = args.out.join("vne_result.json");
    std::fs::write(&path, ResultDoc::from_result(&vne).to_json()?)?;
    outputs.push(path.display().to_string());
    if !vne.converged {
        eprintln!(
            "exact solve did not converge within {} iterations (residual {:.3e}); comparison aborted",
            vne.iterations, vne.final_residual
        );
        return Ok(2);
    }

    // game-level constants and the interior margin do not depend on the
    // clustering, so compute them once
    let constants = compute_constants(&game);
    let rho = compute_rho(&game);

    struct Row {
        populations: usize,
        rel_err: f64,
        cluster_ms: f64,
        wall_ms: f64,
        iterations: usize,
        k_value: Option<f64>,
        end_to_end_agg: Option<f64>,
        aggregate: Vec<f64>,
    }
    let mut rows: Vec<Row> = Vec::new();

    for &populations in &args.populations {
        let clock = Instant::now();
        let (aux, report) = reduce_game(&game, populations, args.kmeans_seed, args.standardize)?;
        let cluster_ms = elapsed_ms(clock);
        phases.push((format!("cluster_n{populations}"), cluster_ms));
        let clock = Instant::now();
        let result = solve_svwe(&aux, &config);
        let wall_ms = elapsed_ms(clock);
        phases.push((format!("svwe_n{populations}"), wall_ms));
        iteration_counts.push((format!("svwe_n{populations}"), result.iterations));
        if !result.converged {
            eprintln!(
                "warning: approximation with {populations} populations did not converge (residual {:.3e})",
                result.final_residual
            );
        }

        let k = k_bound(report.delta_x, report.delta_u, &constants, rho.rho);
        let bounds = distance_bounds(&constants, game.player_count(), game.horizon(), &k);
        let bound_report = BoundReport {
            constants: constants.clone(),
            rho: rho.rho,
            rho_capped: rho.capped,
            delta_x: report.delta_x,
            delta_u: report.delta_u,
            k: k.clone(),
            bounds: bounds.clone(),
        };
        let path = args.out.join(format!("bounds_n{populations}.json"));
        std::fs::write(
            &path,
            serde_json::to_string_pretty(&serde_json::json!({
                "reduction": report,
                "bounds": bound_report,
            }))?,
        )?;
        outputs.push(path.display().to_string());
        let path = args.out.join(format!("svwe_n{populations}.json"));
        std::fs::write(&path, ResultDoc::from_result(&result).to_json()?)?;
        outputs.push(path.display().to_string());

        rows.push(Row {
            populations,
            rel_err: relative_aggregate_error(&result.aggregate, &vne.aggregate),
            cluster_ms,
            wall_ms,
            iterations: result.iterations,
            k_value: match &k {
                KBound::Value(v) => Some(*v),
                KBound::NotApplicable { .. } => None,
            },
            end_to_end_agg: bounds.total_agg,
            aggregate: result.aggregate.clone(),
        });
    }

    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    let mut csv = String::from("n,rel_err_agg,wall_ms,iterations,k_value,end_to_end_agg_bound\n");
    for row in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.populations,
            row.rel_err,
            row.wall_ms,
            row.iterations,
            opt(row.k_value),
            opt(row.end_to_end_agg),
        ));
    }
    let path = args.out.join("comparison.csv");
    std::fs::write(&path, csv)?;
    outputs.push(path.display().to_string());

    // plot data: aggregate profiles, error vs N, time vs N
    let mut agg = String::from("t,vne");
    for row in &rows {
        agg.push_str(&format!(",n{}", row.populations));
    }
    agg.push('\n');
    for t in 0..game.horizon() {
        agg.push_str(&format!("{},{}", t + 1, vne.aggregate[t]));
        for row in &rows {
            agg.push_str(&format!(",{}", row.aggregate[t]));
        }
        agg.push('\n');
    }
    let path = args.out.join("aggregates.csv");
    std::fs::write(&path, agg)?;
    outputs.push(path.display().to_string());

    let mut err_csv = String::from("n,rel_err_agg\n");
    let mut time_csv = String::from("n,cluster_ms,solve_ms,ms_per_iter\n");
    for row in &rows {
        err_csv.push_str(&format!("{},{}\n", row.populations, row.rel_err));
        time_csv.push_str(&format!(
            "{},{},{},{}\n",
            row.populations,
            row.cluster_ms,
            row.wall_ms,
            row.wall_ms / row.iterations.max(1) as f64
        ));
    }
    let path = args.out.join("error_vs_n.csv");
    std::fs::write(&path, err_csv)?;
    outputs.push(path.display().to_string());
    let path = args.out.join("time_vs_n.csv");
    std::fs::write(&path, time_csv)?;
    outputs.push(path.display().to_string());

    RunManifest {
        command: "compare".into(),
        config_hash: hash,
        scenario_seed: None,
        started_unix_ms: started,
        finished_unix_ms: now_ms(),
        phases_ms: phases,
        iteration_counts,
        outputs,
    }
    .write(&args.out.join("manifest.json"))?;

    for row in &rows {
        println!(
            "N = {:>4}: rel_err {:.4e}, solve {:.2} ms (+ cluster {:.2} ms), {} iterations",
            row.populations, row.rel_err, row.wall_ms, row.cluster_ms, row.iterations
        );
    }
    println!("exact solve: {vne_ms:.2} ms, {} iterations", vne.iterations);
    Ok(0)
}
