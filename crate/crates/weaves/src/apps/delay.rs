//! Context-switch benchmark: a calibrated delay loop split across n
//! singleton weaves, each string doing 1/n of the work and yielding between
//! chunks.

use std::hint::black_box;
use std::time::{Duration, Instant};

use weaves_core::value;
use weaves_core::{Exec, Function, ModuleDef, RunOutcome, Signature, Step, Tapestry};

use crate::error::Result;

/// Iterations of the delay loop run between yields.
pub const DEFAULT_CHUNK: u64 = 100_000;

#[inline(never)]
pub fn spin(iterations: u64) -> u64 {
    let mut x = 0u64;
    for i in 0..iterations {
        x = black_box(x.wrapping_mul(6364136223846793005).wrapping_add(i));
    }
    x
}

/// Iterations of [`spin`] that take about `target` on this host.
pub fn calibrate(target: Duration) -> u64 {
    let mut probe = 1_000_000u64;
    loop {
        let start = Instant::now();
        black_box(spin(probe));
        let took = start.elapsed();
        if took >= Duration::from_millis(50) {
            return ((probe as f64) * target.as_secs_f64() / took.as_secs_f64()).max(1.0) as u64;
        }
        probe *= 4;
    }
}

/// Runs up to `chunk` iterations of the remaining work, then yields.
pub fn delay_body(ex: &mut Exec<'_>) -> Result<Step, weaves_core::Error> {
    let remaining = ex.read_u64("remaining")?;
    if remaining == 0 {
        return Ok(Step::ret());
    }
    let n = remaining.min(ex.read_u64("chunk")?.max(1));
    let x = spin(n);
    ex.write_u64("sink", x)?;
    ex.write_u64("remaining", remaining - n)?;
    Ok(Step::Yield)
}

pub fn delay_module() -> ModuleDef {
    ModuleDef::new("delay")
        .global("remaining", value::from_u64(0))
        .global("chunk", value::from_u64(DEFAULT_CHUNK))
        .global("sink", value::from_u64(0))
        .entry(Function::new("main", Signature::default(), delay_body))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DelayReport {
    pub strings: usize,
    /// Total delay-loop iterations across all strings.
    pub work: u64,
    /// One plain loop over all the work.
    pub baseline: Duration,
    /// Composition of the beads, weaves and strings.
    pub setup: Duration,
    /// Running the composed strings to completion.
    pub total: Duration,
    pub dispatches: u64,
}

impl DelayReport {
    pub fn ratio(&self) -> f64 {
        self.total.as_secs_f64() / self.baseline.as_secs_f64()
    }

    /// Extra time per dispatch over the baseline, in seconds; negative when
    /// the woven run happened to be faster.
    pub fn per_switch(&self) -> f64 {
        (self.total.as_secs_f64() - self.baseline.as_secs_f64()) / self.dispatches.max(1) as f64
    }
}

/// Build `n` singleton weaves over one delay module, splitting `work`
/// iterations between their strings.
pub fn compose_delay(n: usize, work: u64, chunk: u64) -> Result<Tapestry> {
    if n == 0 || chunk == 0 {
        return Err(weaves_core::Error::InvalidArgument("need at least one string and a positive chunk".into()).into());
    }
    let mut t = Tapestry::default();
    t.trace_mut().set_enabled(false);
    let m = t.register_module(delay_module())?;
    for i in 0..n {
        let share = work / n as u64 + u64::from((i as u64) < work % n as u64);
        let b = t.instantiate_bead(m)?;
        t.write_bead_value(b, "remaining", value::from_u64(share))?;
        t.write_bead_value(b, "chunk", value::from_u64(chunk))?;
        let w = t.define_weave(&[b])?;
        t.spawn_string(w, "main")?;
    }
    Ok(t)
}

pub fn run_delay_benchmark(n: usize, work: u64) -> Result<DelayReport> {
    run_delay_benchmark_chunked(n, work, DEFAULT_CHUNK)
}

pub fn run_delay_benchmark_chunked(n: usize, work: u64, chunk: u64) -> Result<DelayReport> {
    let start = Instant::now();
    black_box(spin(work));
    let baseline = start.elapsed();

    let start = Instant::now();
    let mut t = compose_delay(n, work, chunk)?;
    let setup = start.elapsed();

    let start = Instant::now();
    let outcome = t.run(None)?;
    let total = start.elapsed();
    debug_assert_eq!(outcome, RunOutcome::Done);
    Ok(DelayReport {
        strings: n,
        work,
        baseline,
        setup,
        total,
        dispatches: t.scheduler().dispatches(),
    })
}

/// Coefficient of variation of a set of durations.
pub fn variation(samples: &[Duration]) -> f64 {
    let xs: Vec<f64> = samples.iter().map(Duration::as_secs_f64).collect();
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
    var.sqrt() / mean
}

pub fn median(samples: &[Duration]) -> Duration {
    let mut v = samples.to_vec();
    v.sort();
    v[v.len() / 2]
}
