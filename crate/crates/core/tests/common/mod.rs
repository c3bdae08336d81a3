//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tfrt::executor::WorkerProgram;
use tfrt::{Arg, Backend, FutureHandle, RuntimeConfig, RuntimeSession, SchedulerPolicy, Value};

pub const POLICIES: [SchedulerPolicy; 3] = [SchedulerPolicy::Fifo, SchedulerPolicy::Lifo, SchedulerPolicy::Locality];

pub fn worker_program() -> WorkerProgram {
    WorkerProgram::new(env!("CARGO_BIN_EXE_tfrt-worker"))
}

/// Config rooted in a fresh temporary directory.
pub fn config(backend: Backend, workers: usize, nodes: usize) -> (tempfile::TempDir, RuntimeConfig) {
    let dir = tempfile::tempdir().expect("tempdir");
    let mut c = match backend {
        Backend::ThreadPool => RuntimeConfig::threads(workers),
        Backend::MultiProcess => RuntimeConfig::processes(nodes, workers),
    };
    c.scratch_dir = dir.path().join("scratch");
    c.output_dir = Some(dir.path().join("out"));
    c.worker_program = Some(worker_program());
    (dir, c)
}

pub fn start(backend: Backend, workers: usize, nodes: usize) -> (tempfile::TempDir, RuntimeSession) {
    let (dir, c) = config(backend, workers, nodes);
    (dir, RuntimeSession::start(c).expect("session starts"))
}

pub fn scratch(dir: &tempfile::TempDir) -> PathBuf {
    dir.path().join("scratch")
}

// ---------------------------------------------------------------------------
// Arithmetic programs and the eager interpreter

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Operand {
    Imm(i64),
    /// Output of an earlier operation.
    Ref(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Add,
    Sub,
    Mul,
    Neg,
    Identity,
    Sum3,
}

impl Func {
    pub const ALL: [Func; 6] = [Func::Add, Func::Sub, Func::Mul, Func::Neg, Func::Identity, Func::Sum3];

    pub fn id(self) -> &'static str {
        match self {
            Func::Add => "add",
            Func::Sub => "sub",
            Func::Mul => "mul",
            Func::Neg => "neg",
            Func::Identity => "identity",
            Func::Sum3 => "sum/3",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Neg | Func::Identity => 1,
            Func::Add | Func::Sub | Func::Mul => 2,
            Func::Sum3 => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Op {
    pub func: Func,
    pub args: Vec<Operand>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    pub ops: Vec<Op>,
    /// Operations whose values the program waits on, in order.
    pub outputs: Vec<usize>,
}

pub fn random_program(rng: &mut impl Rng, max_ops: usize) -> Program {
    let n = rng.random_range(1..=max_ops);
    let mut ops = Vec::with_capacity(n);
    for i in 0..n {
        let func = Func::ALL[rng.random_range(0..Func::ALL.len())];
        let args = (0..func.arity())
            .map(|_| {
                if i > 0 && rng.random_bool(0.6) {
                    Operand::Ref(rng.random_range(0..i))
                } else {
                    Operand::Imm(rng.random_range(-1000..=1000))
                }
            })
            .collect();
        ops.push(Op { func, args });
    }
    let mut outputs: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.3)).collect();
    outputs.push(n - 1);
    outputs.dedup();
    Program { ops, outputs }
}

pub fn random_programs(seed: u64, count: usize, max_ops: usize) -> Vec<Program> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| random_program(&mut rng, max_ops)).collect()
}

/// Runs every operation immediately in program order.
pub fn eval_eager(p: &Program) -> Vec<i64> {
    let mut vals: Vec<i64> = Vec::with_capacity(p.ops.len());
    for op in &p.ops {
        let a: Vec<i64> = op
            .args
            .iter()
            .map(|o| match *o {
                Operand::Imm(v) => v,
                Operand::Ref(j) => vals[j],
            })
            .collect();
        vals.push(match op.func {
            Func::Add => a[0].wrapping_add(a[1]),
            Func::Sub => a[0].wrapping_sub(a[1]),
            Func::Mul => a[0].wrapping_mul(a[1]),
            Func::Neg => a[0].wrapping_neg(),
            Func::Identity => a[0],
            Func::Sum3 => a[0].wrapping_add(a[1]).wrapping_add(a[2]),
        });
    }
    p.outputs.iter().map(|&i| vals[i]).collect()
}

/// Submits the program as tasks and waits on its outputs.
pub fn run_program(s: &mut RuntimeSession, p: &Program) -> tfrt::Result<Vec<Value>> {
    let mut handles: Vec<FutureHandle> = Vec::with_capacity(p.ops.len());
    for op in &p.ops {
        let reg = s.task(op.func.id(), op.func.arity(), true)?;
        let args: Vec<Arg> = op
            .args
            .iter()
            .map(|o| match *o {
                Operand::Imm(v) => Arg::from(v),
                Operand::Ref(j) => Arg::from(&handles[j]),
            })
            .collect();
        handles.push(s.invoke(&reg, args)?);
    }
    p.outputs.iter().map(|&i| s.wait_on(&handles[i])).collect()
}

// ---------------------------------------------------------------------------
// Brute-force KNN

fn distance(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        let d = a[i] - b[i];
        s += d * d;
    }
    s.sqrt()
}

/// Sorts every training point by (distance, label), keeps `k`, and votes;
/// the nearest member of the tied classes decides ties.
pub fn knn_oracle(train: &[(Vec<f64>, i64)], test: &[Vec<f64>], k: usize) -> Vec<i64> {
    test.iter()
        .map(|x| {
            let mut all: Vec<(f64, i64)> = train.iter().map(|(t, l)| (distance(x, t), *l)).collect();
            all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            all.truncate(k);
            let mut votes: BTreeMap<i64, usize> = BTreeMap::new();
            for (_, l) in &all {
                *votes.entry(*l).or_default() += 1;
            }
            let best = *votes.values().max().unwrap();
            all.iter().find(|(_, l)| votes[l] == best).unwrap().1
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Sequential Lloyd

/// Runs `iterations` Lloyd steps and returns the centres after each step.
pub fn lloyd_oracle(points: &[Vec<f64>], init: &[Vec<f64>], iterations: usize) -> Vec<Vec<Vec<f64>>> {
    let d = init[0].len();
    let mut centers = init.to_vec();
    let mut history = Vec::new();
    for _ in 0..iterations {
        let mut sums = vec![vec![0.0; d]; centers.len()];
        let mut counts = vec![0usize; centers.len()];
        for p in points {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (i, c) in centers.iter().enumerate() {
                let dist: f64 = p.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
                if dist < best_d {
                    best_d = dist;
                    best = i;
                }
            }
            counts[best] += 1;
            for j in 0..d {
                sums[best][j] += p[j];
            }
        }
        for i in 0..centers.len() {
            if counts[i] > 0 {
                for j in 0..d {
                    centers[i][j] = sums[i][j] / counts[i] as f64;
                }
            }
        }
        history.push(centers.clone());
    }
    history
}

pub fn wcss_oracle(points: &[Vec<f64>], centers: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .map(|p| {
            centers
                .iter()
                .map(|c| p.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
                .fold(f64::INFINITY, f64::min)
        })
        .sum()
}

// ---------------------------------------------------------------------------
// Least squares through Householder QR

/// Least-squares coefficients (intercept first) for `y ≈ β₀ + xβ`.
pub fn qr_oracle(x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let p = x[0].len() + 1;
    let z = nalgebra::DMatrix::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { x[i][j - 1] });
    let qr = z.qr();
    let qty = qr.q().transpose() * nalgebra::DVector::from_column_slice(y);
    let beta = qr.r().solve_upper_triangular(&qty).expect("full rank");
    beta.iter().copied().collect()
}

/// `max |a - b| / max |b|`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    diff / scale
}

// ---------------------------------------------------------------------------
// DOT parsing

#[derive(Debug, Default, PartialEq, Eq)]
pub struct Dot {
    pub nodes: BTreeSet<String>,
    /// (from, to, label or empty)
    pub edges: BTreeSet<(String, String, String)>,
    pub node_labels: BTreeMap<String, String>,
}

fn label_of(attrs: &str) -> String {
    attrs
        .split("label=\"")
        .nth(1)
        .and_then(|r| r.split('"').next())
        .unwrap_or("")
        .to_owned()
}

pub fn parse_dot(text: &str) -> Dot {
    let mut dot = Dot::default();
    for line in text.lines().map(str::trim) {
        let line = line.trim_end_matches(';');
        let graph_attr = !line.contains("->") && !line.contains('[') && line.contains('=');
        if line.starts_with("digraph") || line == "}" || line.is_empty() || graph_attr {
            continue;
        }
        let (head, attrs) = match line.find('[') {
            Some(i) => (line[..i].trim(), &line[i..]),
            None => (line, ""),
        };
        if let Some((a, b)) = head.split_once("->") {
            let (a, b) = (a.trim().to_owned(), b.trim().to_owned());
            dot.nodes.insert(a.clone());
            dot.nodes.insert(b.clone());
            dot.edges.insert((a, b, label_of(attrs)));
        } else {
            dot.nodes.insert(head.to_owned());
            dot.node_labels.insert(head.to_owned(), label_of(attrs));
        }
    }
    dot
}

pub fn edge_pairs(dot: &Dot) -> BTreeSet<(String, String)> {
    dot.edges.iter().map(|(a, b, _)| (a.clone(), b.clone())).collect()
}

// ---------------------------------------------------------------------------
// Algorithm expectations built from the generated datasets

pub fn rows_of(m: &tfrt::Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(<[f64]>::to_vec).collect()
}

pub fn knn_expected(p: &tfrt::algorithms::knn::KnnParams) -> Vec<i64> {
    let (train, test) = tfrt::algorithms::knn::knn_dataset(p);
    let labelled: Vec<(Vec<f64>, i64)> = train
        .iter()
        .flat_map(|f| {
            let labels = f.labels.clone().expect("labelled fragment");
            rows_of(&f.values).into_iter().zip(labels)
        })
        .collect();
    test.iter().flat_map(|t| knn_oracle(&labelled, &rows_of(t), p.k)).collect()
}

pub fn kmeans_expected(p: &tfrt::algorithms::kmeans::KmeansParams, iterations: usize) -> Vec<Vec<Vec<f64>>> {
    let points: Vec<Vec<f64>> = p.dataset().iter().flat_map(rows_of).collect();
    lloyd_oracle(&points, &rows_of(&p.initial_centers()), iterations)
}

pub fn kmeans_points(p: &tfrt::algorithms::kmeans::KmeansParams) -> Vec<Vec<f64>> {
    p.dataset().iter().flat_map(rows_of).collect()
}

pub fn max_abs_diff(m: &tfrt::Matrix, rows: &[Vec<f64>]) -> f64 {
    rows_of(m)
        .iter()
        .flatten()
        .zip(rows.iter().flatten())
        .fold(0.0, |acc, (a, b)| acc.max((a - b).abs()))
}

/// Least-squares fit of the generated training set.
pub fn linreg_expected(p: &tfrt::algorithms::linreg::LinRegParams) -> Vec<f64> {
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for f in p.dataset() {
        x.extend(rows_of(&f.values));
        y.extend(f.response.expect("response column"));
    }
    qr_oracle(&x, &y)
}

/// Number of combine steps in a reduction tree where a lone trailing item
/// moves up a level untouched.
pub fn merges(leaves: usize, arity: usize) -> usize {
    if leaves <= 1 {
        return 0;
    }
    let groups = leaves / arity + usize::from(leaves % arity > 1);
    let carried = usize::from(leaves % arity == 1);
    groups + merges(groups + carried, arity)
}

/// Task count per function, with merge arities folded into the base name.
pub fn function_counts(g: &tfrt::TaskGraph) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for n in g.nodes() {
        let base = n.function_id.split('/').next().unwrap().to_owned();
        *out.entry(base).or_insert(0) += 1;
    }
    out
}
