use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tfrt::executor::WorkerProgram;
use tfrt::{Backend, RuntimeConfig, SchedulerPolicy};
use tfrt_bench::{BenchApp, Mode};

#[derive(Debug, Parser)]
#[command(name = "tfrt", version, about = "Run task-based dataflow applications")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one application and write its outputs.
    Run(RunArgs),
    /// Measure wall time over a range of worker counts.
    Bench(BenchArgs),
    #[command(hide = true)]
    Worker,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum App {
    Toy,
    Knn,
    Kmeans,
    Linreg,
    Sleep,
    Noop,
}

impl App {
    pub fn name(self) -> &'static str {
        match self {
            Self::Toy => "toy",
            Self::Knn => "knn",
            Self::Kmeans => "kmeans",
            Self::Linreg => "linreg",
            Self::Sleep => "sleep",
            Self::Noop => "noop",
        }
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    pub app: App,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Print the effective configuration as TOML and exit.
    #[arg(long)]
    pub print_config: bool,
    #[command(flatten)]
    pub runtime: RuntimeArgs,
    #[command(flatten)]
    pub size: SizeArgs,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_parser = parse_bench_app)]
    pub app: BenchApp,
    #[arg(long, default_value = "strong", value_parser = parse_mode)]
    pub mode: Mode,
    /// Ascending worker counts, starting at 1.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
    pub workers: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    pub repetitions: usize,
    /// Problem size at one worker (app dependent).
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub fragments: Option<usize>,
    /// Duration of each task for the sleep app.
    #[arg(long, default_value_t = 50)]
    pub ms: u64,
    #[command(flatten)]
    pub runtime: RuntimeArgs,
}

#[derive(Debug, Args)]
pub struct RuntimeArgs {
    /// TOML or JSON file; flags given on the command line take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = parse_backend)]
    pub backend: Option<Backend>,
    #[arg(long)]
    pub nodes: Option<usize>,
    #[arg(long, value_parser = parse_policy)]
    pub policy: Option<SchedulerPolicy>,
    #[arg(long)]
    pub retries: Option<u32>,
    /// Export the task graph as DOT.
    #[arg(short = 'g', long)]
    pub graph: bool,
    /// Record and export the execution trace as CSV.
    #[arg(long)]
    pub trace: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for graphs, traces and bench.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub scratch: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SizeArgs {
    /// Training rows for knn, points for kmeans, samples for linreg.
    #[arg(long)]
    pub rows: Option<usize>,
    #[arg(long)]
    pub cols: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub fragments: Option<usize>,
    #[arg(long)]
    pub arity: Option<usize>,
    #[arg(long)]
    pub test_rows: Option<usize>,
    #[arg(long)]
    pub test_blocks: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    /// Report within-cluster sum of squares per iteration.
    #[arg(long)]
    pub wcss: bool,
    /// Task count for sleep and noop.
    #[arg(long, default_value_t = 16)]
    pub tasks: usize,
    #[arg(long, default_value_t = 50)]
    pub ms: u64,
}

fn parse_backend(s: &str) -> Result<Backend, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn parse_policy(s: &str) -> Result<SchedulerPolicy, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn parse_bench_app(s: &str) -> Result<BenchApp, String> {
    s.parse()
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse()
}

impl RuntimeArgs {
    pub fn to_config(&self, app_name: &str, workers: Option<usize>) -> tfrt::Result<RuntimeConfig> {
        let mut c = match &self.config {
            Some(path) => RuntimeConfig::from_file(path)?,
            None => RuntimeConfig::default(),
        };
        c.app_name = app_name.to_string();
        if let Some(b) = self.backend {
            c.backend = b;
        }
        if let Some(w) = workers {
            c.worker_count = w;
        }
        if let Some(n) = self.nodes {
            c.virtual_node_count = n;
        }
        if let Some(p) = self.policy {
            c.scheduler_policy = p;
        }
        if let Some(r) = self.retries {
            c.max_retries = r;
        }
        if let Some(s) = self.seed {
            c.base_seed = s;
        }
        if let Some(dir) = &self.scratch {
            c.scratch_dir = dir.clone();
        }
        if let Some(dir) = &self.out {
            c.output_dir = Some(dir.clone());
        }
        c.graph_export_enabled |= self.graph;
        c.trace_enabled |= self.trace;
        if c.backend == Backend::MultiProcess && c.worker_program.is_none() {
            // this binary doubles as the worker through the hidden subcommand
            let exe = std::env::current_exe()?;
            c.worker_program = Some(WorkerProgram::new(exe).with_args(["worker"]));
        }
        Ok(c)
    }
}
