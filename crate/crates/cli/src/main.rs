mod args;

use std::collections::BTreeMap;
use std::process::ExitCode;

use clap::Parser;
use tfrt::algorithms::kmeans::{run_kmeans, KmeansParams};
use tfrt::algorithms::knn::{run_knn, KnnParams};
use tfrt::algorithms::linreg::{run_linreg, LinRegParams};
use tfrt::algorithms::toy::{run_noop, run_sleep, run_toy};
use tfrt::{RuntimeConfig, RuntimeSession, SessionReport};
use tfrt_bench::{run_bench, BenchPlan};

use args::{App, BenchArgs, Cli, Command, RunArgs, SizeArgs};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => run(args),
        Command::Bench(args) => bench(args),
        Command::Worker => return ExitCode::from(tfrt::executor::worker::main_with_builtins() as u8),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn run(args: RunArgs) -> Result<(), String> {
    let config = args.runtime.to_config(args.app.name(), args.workers).map_err(|e| e.to_string())?;
    if args.print_config {
        print!("{}", config.to_toml());
        return Ok(());
    }
    let mut session = RuntimeSession::start(config.clone()).map_err(|e| e.to_string())?;
    let outcome = drive(&mut session, args.app, &args.size, &config);
    let report = session.stop().map_err(|e| e.to_string())?;
    let lines = outcome.map_err(|e| e.to_string())?;
    for line in lines {
        println!("{line}");
    }
    print_report(&report);
    Ok(())
}

fn drive(session: &mut RuntimeSession, app: App, s: &SizeArgs, config: &RuntimeConfig) -> tfrt::Result<Vec<String>> {
    let seed = config.base_seed;
    Ok(match app {
        App::Toy => vec![format!("result: {}", run_toy(session)?)],
        App::Sleep => {
            run_sleep(session, s.tasks, s.ms)?;
            vec![format!("completed {} sleep tasks of {} ms", s.tasks, s.ms)]
        }
        App::Noop => {
            run_noop(session, s.tasks)?;
            vec![format!("completed {} noop tasks", s.tasks)]
        }
        App::Knn => {
            let d = KnnParams::default();
            let p = KnnParams {
                train_rows: s.rows.unwrap_or(d.train_rows),
                test_rows: s.test_rows.unwrap_or(d.test_rows),
                cols: s.cols.unwrap_or(d.cols),
                k: s.k.unwrap_or(d.k),
                classes: s.classes.unwrap_or(d.classes),
                fragments: s.fragments.unwrap_or(d.fragments),
                merge_arity: s.arity.unwrap_or(d.merge_arity),
                test_blocks: s.test_blocks.unwrap_or(d.test_blocks),
                seed,
            };
            let labels = run_knn(session, &p)?;
            let mut counts = BTreeMap::new();
            for l in &labels {
                *counts.entry(*l).or_insert(0usize) += 1;
            }
            let mut out = vec![format!("classified {} test rows", labels.len())];
            out.extend(counts.iter().map(|(l, n)| format!("  class {l}: {n}")));
            out
        }
        App::Kmeans => {
            let d = KmeansParams::default();
            let p = KmeansParams {
                rows: s.rows.unwrap_or(d.rows),
                cols: s.cols.unwrap_or(d.cols),
                k: s.k.unwrap_or(d.k),
                fragments: s.fragments.unwrap_or(d.fragments),
                merge_arity: s.arity.unwrap_or(d.merge_arity),
                tol: s.tol.unwrap_or(d.tol),
                max_iter: s.max_iter.unwrap_or(d.max_iter),
                seed,
                track_wcss: s.wcss,
            };
            let r = run_kmeans(session, &p)?;
            let mut out = vec![format!("iterations: {} (converged: {})", r.iterations(), r.converged)];
            out.extend(r.centers().row_iter().enumerate().map(|(i, c)| format!("center {i}: {c:?}")));
            out.extend(r.wcss.iter().enumerate().map(|(i, w)| format!("wcss {}: {w:?}", i + 1)));
            out
        }
        App::Linreg => {
            let d = LinRegParams::default();
            let p = LinRegParams {
                rows: s.rows.unwrap_or(d.rows),
                cols: s.cols.unwrap_or(d.cols),
                fragments: s.fragments.unwrap_or(d.fragments),
                merge_arity: s.arity.unwrap_or(d.merge_arity),
                noise_scale: s.noise.unwrap_or(d.noise_scale),
                test_rows: s.test_rows.unwrap_or(d.test_rows),
                test_blocks: s.test_blocks.unwrap_or(d.test_blocks),
                seed,
            };
            let r = run_linreg(session, &p)?;
            vec![format!("beta: {:?}", r.beta), format!("predictions: {}", r.predictions.len())]
        }
    })
}

fn print_report(r: &SessionReport) {
    println!(
        "tasks: {} submitted, {} completed, {} failed in {:.3} s",
        r.submitted,
        r.completed,
        r.failed,
        r.wall_time.as_secs_f64()
    );
    if r.transfers > 0 || r.worker_respawns > 0 {
        println!("transfers: {} ({} bytes), worker respawns: {}", r.transfers, r.transfer_bytes, r.worker_respawns);
    }
    if let Some(p) = &r.graph_path {
        println!("graph: {}", p.display());
    }
    if let Some(e) = &r.graph_error {
        eprintln!("warning: graph export failed: {e}");
    }
    if let Some(p) = &r.trace_path {
        println!("trace: {}", p.display());
    }
    if let Some(e) = &r.trace_error {
        eprintln!("warning: trace export failed: {e}");
    }
    if r.trace_truncated {
        eprintln!("warning: trace buffer full, later events dropped");
    }
    if let Some(summary) = &r.trace_summary {
        print!("{}", summary.to_table());
    }
}

fn bench(args: BenchArgs) -> Result<(), String> {
    let runtime = args.runtime.to_config(args.app.name(), None).map_err(|e| e.to_string())?;
    let out_dir = runtime.output_dir().to_path_buf();
    let mut plan = BenchPlan::new(args.app, args.mode, args.workers);
    plan.repetitions = args.repetitions;
    plan.sleep_ms = args.ms;
    plan.seed = runtime.base_seed;
    if let Some(n) = args.size {
        plan.base_size = n;
    }
    if let Some(f) = args.fragments {
        plan.fragments = f;
    }
    plan.runtime = runtime;

    let (result, failure) = match run_bench(&plan) {
        Ok(r) => (r, None),
        Err(e) => {
            let msg = e.to_string();
            (e.partial, Some(msg))
        }
    };
    std::fs::create_dir_all(&out_dir).map_err(|e| format!("{}: {e}", out_dir.display()))?;
    let csv_path = out_dir.join("bench.csv");
    result.write_csv(&csv_path).map_err(|e| format!("{}: {e}", csv_path.display()))?;
    print!("{}", result.to_table());
    println!("csv: {}", csv_path.display());
    match failure {
        Some(msg) => Err(msg),
        None => Ok(()),
    }
}
