//! Scaling experiments: runs an application at several worker counts, takes
//! the median wall time over repetitions and reports parallel efficiency
//! against the single-worker run.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use tfrt::algorithms::kmeans::{run_kmeans, KmeansParams};
use tfrt::algorithms::knn::{run_knn, KnnParams};
use tfrt::algorithms::linreg::{run_linreg, LinRegParams};
use tfrt::algorithms::toy::{run_noop, run_sleep};
use tfrt::{RuntimeConfig, RuntimeError, RuntimeSession};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchApp {
    Knn,
    Kmeans,
    Linreg,
    /// Independent copies of the four-number addition.
    Toy,
    Sleep,
    Noop,
}

impl BenchApp {
    pub const ALL: [BenchApp; 6] = [Self::Knn, Self::Kmeans, Self::Linreg, Self::Toy, Self::Sleep, Self::Noop];

    pub fn name(self) -> &'static str {
        match self {
            Self::Knn => "knn",
            Self::Kmeans => "kmeans",
            Self::Linreg => "linreg",
            Self::Toy => "toy",
            Self::Sleep => "sleep",
            Self::Noop => "noop",
        }
    }

    /// Problem size at one worker when none is given.
    pub fn default_size(self) -> usize {
        match self {
            Self::Knn => 4_000,
            Self::Kmeans => 20_000,
            Self::Linreg => 50_000,
            Self::Toy => 100,
            Self::Sleep => 16,
            Self::Noop => 500,
        }
    }
}

impl FromStr for BenchApp {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown app `{s}` (expected knn|kmeans|linreg|toy|sleep|noop)"))
    }
}

impl fmt::Display for BenchApp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Fixed total problem size.
    Strong,
    /// Problem size proportional to the worker count.
    Weak,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "strong" => Ok(Self::Strong),
            "weak" => Ok(Self::Weak),
            other => Err(format!("unknown mode `{other}` (expected strong|weak)")),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Strong => "strong",
            Self::Weak => "weak",
        })
    }
}

/// What `size` means depends on the app: training rows for KNN (a quarter as
/// many test rows), points for k-means, samples for regression, program
/// copies for toy and task counts for sleep and noop.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchPlan {
    pub app: BenchApp,
    pub mode: Mode,
    pub worker_counts: Vec<usize>,
    pub base_size: usize,
    pub repetitions: usize,
    /// Data fragments for the three algorithms; the same at every worker count.
    pub fragments: usize,
    pub sleep_ms: u64,
    pub seed: u64,
    /// Template for every session; `worker_count` is overwritten per point.
    pub runtime: RuntimeConfig,
}

impl BenchPlan {
    pub fn new(app: BenchApp, mode: Mode, worker_counts: Vec<usize>) -> Self {
        let fragments = 2 * worker_counts.iter().copied().max().unwrap_or(1);
        Self {
            app,
            mode,
            worker_counts,
            base_size: app.default_size(),
            repetitions: 3,
            fragments,
            sleep_ms: 50,
            seed: 0,
            runtime: RuntimeConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.worker_counts.first() != Some(&1) {
            return Err("worker counts must start at 1".into());
        }
        if self.worker_counts.windows(2).any(|w| w[0] >= w[1]) {
            return Err("worker counts must be strictly ascending".into());
        }
        if self.repetitions == 0 {
            return Err("repetitions must be at least 1".into());
        }
        if self.base_size == 0 || self.fragments == 0 {
            return Err("size and fragments must be positive".into());
        }
        Ok(())
    }

    pub fn size_at(&self, workers: usize) -> usize {
        match self.mode {
            Mode::Strong => self.base_size,
            Mode::Weak => self.base_size * workers,
        }
    }

    fn config_for(&self, workers: usize) -> RuntimeConfig {
        let mut c = self.runtime.clone();
        c.worker_count = workers;
        // keep an even split when the node count does not divide this point
        if workers % c.virtual_node_count != 0 {
            c.virtual_node_count = 1;
        }
        c.trace_enabled = false;
        c.graph_export_enabled = false;
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub app: BenchApp,
    pub mode: Mode,
    pub workers: usize,
    pub size: usize,
    pub wall_seconds: f64,
    pub efficiency: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BenchResult {
    pub rows: Vec<BenchRow>,
}

#[derive(Debug, Error)]
#[error("{app} with {workers} worker(s) failed: {source}")]
pub struct BenchError {
    pub app: BenchApp,
    pub workers: usize,
    #[source]
    pub source: RuntimeError,
    /// Rows finished before the failure.
    pub partial: BenchResult,
}

pub fn median(samples: &[f64]) -> f64 {
    assert!(!samples.is_empty());
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

/// Strong: `T(1) / (P * T(P))`; weak: `T(1) / T(P)`. Rounded to 3 decimals.
pub fn efficiency(mode: Mode, t1: f64, tp: f64, workers: usize) -> f64 {
    let e = match mode {
        Mode::Strong => t1 / (workers as f64 * tp),
        Mode::Weak => t1 / tp,
    };
    (e * 1000.0).round() / 1000.0
}

fn toy_copies(session: &mut RuntimeSession, copies: usize) -> tfrt::Result<()> {
    let add = session.task("add", 2, true)?;
    let mut outs = Vec::with_capacity(copies);
    for _ in 0..copies {
        let a = session.invoke(&add, [4i64, 5])?;
        let b = session.invoke(&add, [6i64, 7])?;
        outs.push(session.invoke(&add, [a, b])?);
    }
    for h in &outs {
        session.wait_on(h)?;
    }
    Ok(())
}

/// Runs the app once on an already started session and returns the wall
/// time of the submission through the final result.
pub fn run_app(session: &mut RuntimeSession, plan: &BenchPlan, size: usize) -> tfrt::Result<Duration> {
    let t0 = Instant::now();
    match plan.app {
        BenchApp::Knn => {
            let p = KnnParams {
                train_rows: size,
                test_rows: (size / 4).max(1),
                fragments: plan.fragments,
                seed: plan.seed,
                ..KnnParams::default()
            };
            run_knn(session, &p)?;
        }
        BenchApp::Kmeans => {
            let p = KmeansParams { rows: size, fragments: plan.fragments, seed: plan.seed, ..KmeansParams::default() };
            run_kmeans(session, &p)?;
        }
        BenchApp::Linreg => {
            let p = LinRegParams { rows: size, fragments: plan.fragments, seed: plan.seed, ..LinRegParams::default() };
            run_linreg(session, &p)?;
        }
        BenchApp::Toy => toy_copies(session, size)?,
        BenchApp::Sleep => run_sleep(session, size, plan.sleep_ms)?,
        BenchApp::Noop => run_noop(session, size)?,
    }
    session.barrier()?;
    Ok(t0.elapsed())
}

/// Median wall time of `plan.repetitions` fresh sessions at one worker count.
pub fn measure(plan: &BenchPlan, workers: usize) -> tfrt::Result<f64> {
    let size = plan.size_at(workers);
    let mut samples = Vec::with_capacity(plan.repetitions);
    for _ in 0..plan.repetitions {
        let mut session = RuntimeSession::start(plan.config_for(workers))?;
        let took = run_app(&mut session, plan, size);
        session.stop()?;
        samples.push(took?.as_secs_f64());
    }
    Ok(median(&samples))
}

/// Runs every worker count in order, baseline first.
pub fn run_bench(plan: &BenchPlan) -> Result<BenchResult, BenchError> {
    run_bench_with(plan, measure)
}

/// [`run_bench`] with a custom timing function returning seconds.
pub fn run_bench_with<F>(plan: &BenchPlan, mut measure: F) -> Result<BenchResult, BenchError>
where
    F: FnMut(&BenchPlan, usize) -> tfrt::Result<f64>,
{
    let mut result = BenchResult::default();
    let fail = |workers, source, partial| BenchError { app: plan.app, workers, source, partial };
    if let Err(msg) = plan.validate() {
        return Err(fail(0, RuntimeError::Config(msg), result));
    }
    let mut t1 = None;
    for &workers in &plan.worker_counts {
        log::info!("{} {}: {workers} worker(s)", plan.app, plan.mode);
        let t = match measure(plan, workers) {
            Ok(t) => t,
            Err(e) => return Err(fail(workers, e, result)),
        };
        let base = *t1.get_or_insert(t);
        result.rows.push(BenchRow {
            app: plan.app,
            mode: plan.mode,
            workers,
            size: plan.size_at(workers),
            wall_seconds: t,
            efficiency: efficiency(plan.mode, base, t, workers),
        });
    }
    Ok(result)
}

impl BenchResult {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).expect("in-memory CSV write");
        }
        // serde writes the header only along with the first record
        if self.rows.is_empty() {
            w.write_record(["app", "mode", "workers", "size", "wall_seconds", "efficiency"])
                .expect("in-memory CSV write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("CSV is UTF-8")
    }

    pub fn from_csv(text: &str) -> Result<Self, csv::Error> {
        let rows = csv::Reader::from_reader(text.as_bytes())
            .deserialize()
            .collect::<Result<Vec<BenchRow>, _>>()?;
        Ok(Self { rows })
    }

    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        fs::write(path, self.to_csv())
    }

    pub fn read_csv(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_csv(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn to_table(&self) -> String {
        let header = ["app", "mode", "workers", "size", "wall_s", "efficiency"].map(String::from);
        let mut lines = vec![header];
        for r in &self.rows {
            lines.push([
                r.app.to_string(),
                r.mode.to_string(),
                r.workers.to_string(),
                r.size.to_string(),
                format!("{:.3}", r.wall_seconds),
                format!("{:.3}", r.efficiency),
            ]);
        }
        let widths: Vec<usize> = (0..6).map(|c| lines.iter().map(|l| l[c].len()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for l in &lines {
            let cells: Vec<String> = l
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (cell, w))| if i < 2 { format!("{cell:<w$}") } else { format!("{cell:>w$}") })
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
    }

    #[test]
    fn efficiency_definitions() {
        assert_eq!(efficiency(Mode::Strong, 4.0, 4.0, 1), 1.0);
        assert_eq!(efficiency(Mode::Strong, 4.0, 1.25, 4), 0.8);
        assert_eq!(efficiency(Mode::Weak, 1.0, 1.25, 4), 0.8);
        assert_eq!(efficiency(Mode::Strong, 1.0, 3.0, 1), 0.333);
    }

    #[test]
    fn plan_validation() {
        let ok = BenchPlan::new(BenchApp::Noop, Mode::Weak, vec![1, 2, 4]);
        assert!(ok.validate().is_ok());
        assert_eq!(ok.size_at(4), 4 * ok.base_size);
        assert!(BenchPlan::new(BenchApp::Noop, Mode::Weak, vec![2, 4]).validate().is_err());
        assert!(BenchPlan::new(BenchApp::Noop, Mode::Weak, vec![1, 1]).validate().is_err());
        let mut zero = ok.clone();
        zero.repetitions = 0;
        assert!(zero.validate().is_err());
    }

    #[test]
    fn csv_round_trip() {
        let r = BenchResult {
            rows: vec![
                BenchRow { app: BenchApp::Knn, mode: Mode::Strong, workers: 1, size: 10, wall_seconds: 0.1 + 0.2, efficiency: 1.0 },
                BenchRow { app: BenchApp::Knn, mode: Mode::Strong, workers: 2, size: 10, wall_seconds: 1e-7, efficiency: 0.951 },
            ],
        };
        let text = r.to_csv();
        assert!(text.starts_with("app,mode,workers,size,wall_seconds,efficiency\n"));
        assert_eq!(BenchResult::from_csv(&text).unwrap(), r);
        assert_eq!(BenchResult::from_csv(&BenchResult::default().to_csv()).unwrap(), BenchResult::default());
    }

    #[test]
    fn table_is_aligned() {
        let r = BenchResult {
            rows: vec![BenchRow { app: BenchApp::Sleep, mode: Mode::Weak, workers: 16, size: 256, wall_seconds: 0.81, efficiency: 0.987 }],
        };
        let t = r.to_table();
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0].len(), lines[1].len());
        assert!(lines[1].ends_with("0.987"));
    }
}
