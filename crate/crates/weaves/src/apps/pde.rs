//! Two 1D Poisson solvers joined by a mediator that relaxes the interface
//! value until the one-sided derivatives agree.
//!
//! The composition is three beads: `left` and `right` solver beads, each in
//! its own weave with the shared `mediator` bead. One string runs per
//! solver. The mediator acts as a barrier: it updates the interface value
//! only once both solvers have reported, so the result does not depend on
//! how the two strings interleave.

use std::f64::consts::PI;

use weaves_core::value;
use weaves_core::{BeadId, Exec, Function, ModuleDef, RunOutcome, Signature, Status, Step, StringId, Tapestry};

use crate::error::{AppError, Result};

/// Right-hand side f of -u'' = f.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Zero,
    Unit,
    /// pi^2 sin(pi x), whose solution with zero ends is sin(pi x).
    SineMode,
}

impl Source {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Source::Zero => 0.0,
            Source::Unit => 1.0,
            Source::SineMode => PI * PI * (PI * x).sin(),
        }
    }

    fn code(self) -> u64 {
        self as u64
    }

    fn from_code(c: u64) -> Source {
        match c {
            0 => Source::Zero,
            1 => Source::Unit,
            _ => Source::SineMode,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Source::Zero => "zero",
            Source::Unit => "unit",
            Source::SineMode => "sine",
        }
    }

    pub fn parse(s: &str) -> Option<Source> {
        [Source::Zero, Source::Unit, Source::SineMode]
            .into_iter()
            .find(|x| x.name() == s)
    }
}

/// One subdomain: interval, grid points including both ends, and the
/// Dirichlet value at the outer end.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PdeDomainSpec {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    pub boundary: f64,
    pub source: Source,
}

impl PdeDomainSpec {
    fn validate(&self) -> Result<()> {
        if self.n < 3 || !(self.lo < self.hi) {
            return Err(weaves_core::Error::InvalidArgument("subdomain needs n >= 3 and lo < hi".into()).into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MediatorConfig {
    pub theta: f64,
    pub tolerance: f64,
    pub max_iterations: u64,
    pub initial: f64,
}

impl Default for MediatorConfig {
    fn default() -> Self {
        MediatorConfig {
            theta: 0.5,
            tolerance: 1e-12,
            max_iterations: 200,
            initial: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PdeSolution {
    pub left: Vec<f64>,
    pub right: Vec<f64>,
    pub interface: f64,
    pub iterations: u64,
}

/// Solve -u'' = f on the interior of a uniform grid with Dirichlet ends
/// (Thomas algorithm).
pub fn solve_dirichlet(lo: f64, hi: f64, n: usize, ua: f64, ub: f64, f: impl Fn(f64) -> f64) -> Vec<f64> {
    let h = (hi - lo) / (n - 1) as f64;
    let m = n - 2;
    let mut rhs: Vec<f64> = (1..=m).map(|i| h * h * f(lo + i as f64 * h)).collect();
    rhs[0] += ua;
    rhs[m - 1] += ub;
    // diagonal 2, off-diagonals -1
    let mut c = vec![0.0; m];
    let mut d = vec![0.0; m];
    c[0] = -0.5;
    d[0] = rhs[0] / 2.0;
    for i in 1..m {
        let denom = 2.0 + c[i - 1];
        c[i] = -1.0 / denom;
        d[i] = (rhs[i] + d[i - 1]) / denom;
    }
    let mut u = vec![0.0; n];
    u[0] = ua;
    u[n - 1] = ub;
    u[m] = d[m - 1];
    for i in (1..m).rev() {
        u[i] = d[i - 1] - c[i - 1] * u[i + 1];
    }
    u
}

fn solver_body(ex: &mut Exec<'_>) -> Result<Step, weaves_core::Error> {
    match ex.pc() {
        0 => {
            let (lo, hi) = (ex.read_f64("lo")?, ex.read_f64("hi")?);
            let n = ex.read_u64("n")? as usize;
            let outer = ex.read_f64("outer")?;
            let src = Source::from_code(ex.read_u64("src")?);
            let gamma = ex.read_f64("gamma")?;
            let left = ex.read_u64("side")? == 0;
            let (ua, ub) = if left { (outer, gamma) } else { (gamma, outer) };
            let u = solve_dirichlet(lo, hi, n, ua, ub, |x| src.eval(x));
            let h = (hi - lo) / (n - 1) as f64;
            // second-order one-sided derivative at the interface end
            let d = if left {
                (3.0 * u[n - 1] - 4.0 * u[n - 2] + u[n - 3]) / (2.0 * h)
            } else {
                (-3.0 * u[0] + 4.0 * u[1] - u[2]) / (2.0 * h)
            };
            ex.write_f64s("u", &u)?;
            ex.set_reg(0, ex.read_u64("generation")?);
            ex.advance();
            Ok(Step::call("post", &[left as u64, value::f64_word(d)]))
        }
        _ => {
            if ex.read_u64("generation")? == ex.reg(0) {
                return Ok(Step::Yield);
            }
            if ex.read_u64("status")? != 0 {
                return Ok(Step::ret());
            }
            ex.set_pc(0);
            Ok(Step::Continue)
        }
    }
}

/// Mediator entry: record one side's derivative; once both are in, relax
/// the interface value and open the next generation.
fn post_body(ex: &mut Exec<'_>) -> Result<Step, weaves_core::Error> {
    let (left, d) = (ex.reg(0) != 0, value::word_f64(ex.reg(1)));
    ex.write_f64(if left { "d_left" } else { "d_right" }, d)?;
    let arrived = ex.read_u64("arrived")? + 1;
    if arrived < 2 {
        ex.write_u64("arrived", arrived)?;
        return Ok(Step::ret());
    }
    ex.write_u64("arrived", 0)?;
    let mismatch = ex.read_f64("d_left")? - ex.read_f64("d_right")?;
    let (a, b) = (ex.read_f64("len_left")?, ex.read_f64("len_right")?);
    let scale = a * b / (a + b);
    let theta = ex.read_f64("theta")?;
    let gamma = ex.read_f64("gamma")?;
    let delta = -theta * scale * mismatch;
    ex.write_f64("gamma", gamma + delta)?;
    let iters = ex.read_u64("iterations")? + 1;
    ex.write_u64("iterations", iters)?;
    if delta.abs() < ex.read_f64("tolerance")? {
        ex.write_u64("status", 1)?;
    } else if iters >= ex.read_u64("max_iterations")? {
        ex.write_u64("status", 2)?;
    }
    let g = ex.read_u64("generation")?;
    ex.write_u64("generation", g + 1)?;
    Ok(Step::ret())
}

pub fn solver_module() -> ModuleDef {
    ModuleDef::new("pde_solver")
        .global("side", value::from_u64(0))
        .global("lo", value::from_f64(0.0))
        .global("hi", value::from_f64(1.0))
        .global("n", value::from_u64(3))
        .global("outer", value::from_f64(0.0))
        .global("src", value::from_u64(0))
        .global("u", Vec::new())
        .entry(Function::new("main", Signature::default(), solver_body))
}

pub fn mediator_module() -> ModuleDef {
    ModuleDef::new("mediator")
        .global("gamma", value::from_f64(0.0))
        .global("theta", value::from_f64(0.5))
        .global("tolerance", value::from_f64(1e-12))
        .global("max_iterations", value::from_u64(200))
        .global("iterations", value::from_u64(0))
        .global("generation", value::from_u64(0))
        .global("arrived", value::from_u64(0))
        .global("status", value::from_u64(0))
        .global("d_left", value::from_f64(0.0))
        .global("d_right", value::from_f64(0.0))
        .global("len_left", value::from_f64(0.5))
        .global("len_right", value::from_f64(0.5))
        .export(Function::new("post", Signature::new(2, 0), post_body))
}

/// Beads and strings of an installed PDE composition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PdeHandles {
    pub left: BeadId,
    pub right: BeadId,
    pub mediator: BeadId,
    pub strings: [StringId; 2],
}

/// Register the modules (if needed) and instantiate the solver/mediator
/// composition in `t`.
pub fn install_pde(t: &mut Tapestry, left: &PdeDomainSpec, right: &PdeDomainSpec, cfg: &MediatorConfig) -> Result<PdeHandles> {
    left.validate()?;
    right.validate()?;
    if left.hi != right.lo {
        return Err(weaves_core::Error::InvalidArgument("subdomains must meet at the interface".into()).into());
    }
    if !(cfg.theta > 0.0 && cfg.theta <= 1.0) || !(cfg.tolerance > 0.0) {
        return Err(weaves_core::Error::InvalidArgument("need theta in (0,1] and tolerance > 0".into()).into());
    }
    let sm = t.module_id("pde_solver").or_else(|_| t.register_module(solver_module()))?;
    let mm = t.module_id("mediator").or_else(|_| t.register_module(mediator_module()))?;
    let m = t.instantiate_labeled(mm, Some("mediator".into()))?;
    for (sym, v) in [
        ("gamma", value::from_f64(cfg.initial)),
        ("theta", value::from_f64(cfg.theta)),
        ("tolerance", value::from_f64(cfg.tolerance)),
        ("max_iterations", value::from_u64(cfg.max_iterations)),
        ("len_left", value::from_f64(left.hi - left.lo)),
        ("len_right", value::from_f64(right.hi - right.lo)),
    ] {
        t.write_bead_value(m, sym, v)?;
    }
    let mut beads = Vec::new();
    let mut strings = Vec::new();
    for (side, sub) in [(0u64, left), (1, right)] {
        let label = if side == 0 { "left" } else { "right" };
        let b = t.instantiate_labeled(sm, Some(label.into()))?;
        for (sym, v) in [
            ("side", value::from_u64(side)),
            ("lo", value::from_f64(sub.lo)),
            ("hi", value::from_f64(sub.hi)),
            ("n", value::from_u64(sub.n as u64)),
            ("outer", value::from_f64(sub.boundary)),
            ("src", value::from_u64(sub.source.code())),
        ] {
            t.write_bead_value(b, sym, v)?;
        }
        let w = t.define_labeled_weave(&[b, m], Some(format!("{label}_weave")))?;
        strings.push(t.spawn_string(w, "main")?);
        beads.push(b);
    }
    Ok(PdeHandles {
        left: beads[0],
        right: beads[1],
        mediator: m,
        strings: [strings[0], strings[1]],
    })
}

fn labeled(t: &Tapestry, label: &str) -> Result<BeadId> {
    t.beads()
        .find(|b| b.label.as_deref() == Some(label))
        .map(|b| b.id)
        .ok_or_else(|| AppError::UnresolvedReference(label.into()))
}

/// Read the composition's result from whichever tapestry now holds it.
pub fn read_solution(t: &Tapestry) -> Result<PdeSolution> {
    let (l, r, m) = (labeled(t, "left")?, labeled(t, "right")?, labeled(t, "mediator")?);
    let status = value::to_u64(t.bead_value(m, "status")?)?;
    let iterations = value::to_u64(t.bead_value(m, "iterations")?)?;
    if status == 2 {
        return Err(AppError::NoConvergence { iterations });
    }
    Ok(PdeSolution {
        left: value::to_f64s(t.bead_value(l, "u")?)?,
        right: value::to_f64s(t.bead_value(r, "u")?)?,
        interface: value::to_f64(t.bead_value(m, "gamma")?)?,
        iterations,
    })
}

/// Build, run and read back the mediated solve on a fresh tapestry.
pub fn solve_mediated_pde(left: &PdeDomainSpec, right: &PdeDomainSpec, cfg: &MediatorConfig) -> Result<PdeSolution> {
    let mut t = Tapestry::default();
    t.trace_mut().set_enabled(false);
    install_pde(&mut t, left, right, cfg)?;
    match t.run(None)? {
        RunOutcome::Done => {}
        other => {
            return Err(weaves_core::Error::InvalidArgument(format!("pde run ended with {other:?}")).into());
        }
    }
    if t.strings().any(|s| s.status() == Status::Failed) {
        return Err(weaves_core::Error::InvalidArgument("a solver string failed".into()).into());
    }
    read_solution(&t)
}

/// The two-subdomain split of [0,1] at 0.5 with `n` points per side.
pub fn unit_split(n: usize, source: Source, ua: f64, ub: f64) -> (PdeDomainSpec, PdeDomainSpec) {
    (
        PdeDomainSpec {
            lo: 0.0,
            hi: 0.5,
            n,
            boundary: ua,
            source,
        },
        PdeDomainSpec {
            lo: 0.5,
            hi: 1.0,
            n,
            boundary: ub,
            source,
        },
    )
}
