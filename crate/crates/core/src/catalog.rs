//! Task functions addressable by id.
//!
//! Task functions are compiled into the binary; worker processes resolve the
//! same ids against [`FunctionCatalog::builtin`]. Functions must be pure with
//! respect to their arguments so that a resubmitted attempt computes the same
//! result.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use crate::error::TaskError;
use crate::value::Value;

pub type TaskFn = Arc<dyn Fn(&[Arc<Value>]) -> Result<Value, TaskError> + Send + Sync>;

/// Set in the environment of spawned worker processes.
pub const WORKER_ENV: &str = "TFRT_WORKER_PROCESS";

#[derive(Clone, Default)]
pub struct FunctionCatalog {
    fns: HashMap<String, TaskFn>,
}

impl fmt::Debug for FunctionCatalog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut ids: Vec<_> = self.fns.keys().collect();
        ids.sort();
        f.debug_struct("FunctionCatalog").field("ids", &ids).finish()
    }
}

impl FunctionCatalog {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Primitive test functions plus every algorithm task.
    pub fn builtin() -> Self {
        let mut c = Self::empty();
        install_primitives(&mut c);
        crate::algorithms::install(&mut c);
        c
    }

    pub fn insert<F>(&mut self, id: &str, f: F)
    where
        F: Fn(&[Arc<Value>]) -> Result<Value, TaskError> + Send + Sync + 'static,
    {
        self.fns.insert(id.to_owned(), Arc::new(f));
    }

    /// Exact lookup first; an id of the form `name/N` falls back to `name`,
    /// which lets one variadic function back registrations of several arities.
    pub fn get(&self, id: &str) -> Option<TaskFn> {
        self.fns.get(id).cloned().or_else(|| {
            let (base, arity) = id.rsplit_once('/')?;
            arity.parse::<usize>().ok()?;
            self.fns.get(base).cloned()
        })
    }

    pub fn contains(&self, id: &str) -> bool {
        self.get(id).is_some()
    }
}

pub(crate) fn arg(args: &[Arc<Value>], i: usize) -> Result<&Value, TaskError> {
    args.get(i)
        .map(|a| a.as_ref())
        .ok_or_else(|| TaskError::new(format!("missing argument {i}")))
}

fn numeric(
    args: &[Arc<Value>],
    int: fn(i64, i64) -> i64,
    float: fn(f64, f64) -> f64,
) -> Result<Value, TaskError> {
    match (arg(args, 0)?, arg(args, 1)?) {
        (Value::I64(a), Value::I64(b)) => Ok(Value::I64(int(*a, *b))),
        (Value::F64(a), Value::F64(b)) => Ok(Value::F64(float(*a, *b))),
        (Value::I64(a), Value::F64(b)) => Ok(Value::F64(float(*a as f64, *b))),
        (Value::F64(a), Value::I64(b)) => Ok(Value::F64(float(*a, *b as f64))),
        (Value::F64Vec(a), Value::F64Vec(b)) if a.len() == b.len() => {
            Ok(Value::F64Vec(a.iter().zip(b).map(|(x, y)| float(*x, *y)).collect()))
        }
        (a, b) => Err(TaskError::new(format!(
            "cannot combine {} and {}",
            a.kind(),
            b.kind()
        ))),
    }
}

fn install_primitives(c: &mut FunctionCatalog) {
    c.insert("add", |a| numeric(a, i64::wrapping_add, |x, y| x + y));
    c.insert("sub", |a| numeric(a, i64::wrapping_sub, |x, y| x - y));
    c.insert("mul", |a| numeric(a, i64::wrapping_mul, |x, y| x * y));
    c.insert("neg", |a| match arg(a, 0)? {
        Value::I64(v) => Ok(Value::I64(v.wrapping_neg())),
        Value::F64(v) => Ok(Value::F64(-v)),
        other => Err(TaskError::type_mismatch("number", other)),
    });
    c.insert("identity", |a| Ok(arg(a, 0)?.clone()));
    // variadic wrapping sum of i64 arguments
    c.insert("sum", |a| {
        a.iter()
            .try_fold(0i64, |acc, v| Ok(acc.wrapping_add(v.as_i64()?)))
            .map(Value::I64)
    });
    c.insert("noop", |_| Ok(Value::Unit));
    // sleep_ms(ms, value) -> value
    c.insert("sleep_ms", |a| {
        let ms = arg(a, 0)?.as_i64()?;
        std::thread::sleep(Duration::from_millis(ms.max(0) as u64));
        Ok(arg(a, 1)?.clone())
    });
    c.insert("always_fail", |a| {
        let msg = match a.first() {
            Some(v) => v.to_string(),
            None => "always_fail".into(),
        };
        Err(TaskError::new(msg))
    });
    c.insert("panic", |a| {
        let msg = a.first().map_or("panic task".into(), |v| v.to_string());
        panic!("{msg}");
    });
    // flaky(counter_path, fail_times, value): fails while fewer than
    // `fail_times` earlier attempts were recorded in the counter file.
    c.insert("flaky", |a| {
        let path = path_arg(arg(a, 0)?)?;
        let fail_times = arg(a, 1)?.as_i64()?;
        let seen: i64 = fs::read_to_string(&path)
            .ok()
            .and_then(|s| s.trim().parse().ok())
            .unwrap_or(0);
        fs::write(&path, (seen + 1).to_string())
            .map_err(|e| TaskError::new(format!("counter file: {e}")))?;
        if seen < fail_times {
            Err(TaskError::new(format!("injected failure {}", seen + 1)))
        } else {
            Ok(arg(a, 2)?.clone())
        }
    });
    // crash_worker_once(marker_path, value): kills the hosting worker process
    // the first time it runs, then behaves like identity.
    c.insert("crash_worker_once", |a| {
        let path = path_arg(arg(a, 0)?)?;
        if std::env::var_os(WORKER_ENV).is_none() {
            return Err(TaskError::new(
                "crash_worker_once only runs inside worker processes",
            ));
        }
        if !Path::new(&path).exists() {
            let _ = fs::write(&path, b"crashed");
            std::process::exit(101);
        }
        Ok(arg(a, 1)?.clone())
    });
}

fn path_arg(v: &Value) -> Result<String, TaskError> {
    String::from_utf8(v.as_bytes()?.to_vec()).map_err(|_| TaskError::new("path is not UTF-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(c: &FunctionCatalog, id: &str, args: Vec<Value>) -> Result<Value, TaskError> {
        let args: Vec<_> = args.into_iter().map(Arc::new).collect();
        (c.get(id).unwrap())(&args)
    }

    #[test]
    fn add_handles_ints_and_floats() {
        let c = FunctionCatalog::builtin();
        assert_eq!(call(&c, "add", vec![4.into(), 5.into()]), Ok(Value::I64(9)));
        assert_eq!(
            call(&c, "add", vec![1.5.into(), 2i64.into()]),
            Ok(Value::F64(3.5))
        );
        assert_eq!(
            call(&c, "add", vec![i64::MAX.into(), 1.into()]),
            Ok(Value::I64(i64::MIN))
        );
        assert!(call(&c, "add", vec![Value::Unit, 1.into()]).is_err());
        assert_eq!(
            call(&c, "mul", vec![vec![1.0, 2.0].into(), vec![3.0, 4.0].into()]),
            Ok(Value::F64Vec(vec![3.0, 8.0]))
        );
        assert!(call(&c, "add", vec![vec![1.0].into(), vec![1.0, 2.0].into()]).is_err());
    }

    #[test]
    fn arity_suffix_falls_back() {
        let c = FunctionCatalog::builtin();
        assert_eq!(
            call(&c, "sum/3", vec![1.into(), 2.into(), 3.into()]),
            Ok(Value::I64(6))
        );
        assert!(c.get("sum/x").is_none());
        assert!(c.get("nope").is_none());
    }

    #[test]
    fn flaky_counts_attempts() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("count").display().to_string().into_bytes();
        let c = FunctionCatalog::builtin();
        let args = || vec![Value::Bytes(p.clone()), 2.into(), 7.into()];
        assert!(call(&c, "flaky", args()).is_err());
        assert!(call(&c, "flaky", args()).is_err());
        assert_eq!(call(&c, "flaky", args()), Ok(Value::I64(7)));
    }

    #[test]
    fn crash_refuses_outside_workers() {
        let c = FunctionCatalog::builtin();
        let r = call(&c, "crash_worker_once", vec![Value::Bytes(b"/nonexistent/x".to_vec()), 1.into()]);
        assert!(r.is_err());
    }
}
