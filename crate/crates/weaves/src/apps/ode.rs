//! Scalar ODE integration that switches between an explicit and an implicit
//! method while it runs.
//!
//! A driver string advances the solution by calling `step`, which is bound
//! in the driver's weave to either the explicit or the implicit module. At
//! regular decision points the driver blocks on a channel; the controller
//! reads the driver's cells, lets the policy choose, rebinds `step` if the
//! choice is a switch, and wakes the driver.

use std::fmt;
use std::sync::Arc;

use weaves_core::recommender::{Action, ActionKind, Feature, FeatureState, PolicyMode, QConfig, QPolicy, Transition};
use weaves_core::value;
use weaves_core::{BeadId, ChannelId, Exec, Function, ModuleDef, RunOutcome, Signature, Step, Tapestry, WeaveId};

use crate::error::{AppError, Result};

type Rhs = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// y' = f(t, y) on [t0, t1] with y(t0) = y0.
#[derive(Clone)]
pub struct OdeProblem {
    pub name: String,
    f: Rhs,
    pub t0: f64,
    pub t1: f64,
    pub y0: f64,
}

impl OdeProblem {
    pub fn new(name: &str, f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static, t0: f64, t1: f64, y0: f64) -> Self {
        OdeProblem {
            name: name.into(),
            f: Arc::new(f),
            t0,
            t1,
            y0,
        }
    }

    /// y' = -y, y(0) = 1.
    pub fn decay(t1: f64) -> Self {
        OdeProblem::new("decay", |_, y| -y, 0.0, t1, 1.0)
    }

    /// y' = -lambda (y - cos t), y(0) = 0.
    pub fn relaxation(lambda: f64, t1: f64) -> Self {
        OdeProblem::new(&format!("relaxation({lambda})"), move |t, y| -lambda * (y - t.cos()), 0.0, t1, 0.0)
    }

    /// Relaxation toward cos t whose rate jumps from 1 to `lambda` on
    /// [t1/3, 2 t1/3]: non-stiff, stiff, non-stiff again.
    pub fn alternating(lambda: f64, t1: f64) -> Self {
        let (a, b) = (t1 / 3.0, 2.0 * t1 / 3.0);
        OdeProblem::new(
            &format!("alternating({lambda})"),
            move |t, y| {
                let rate = if t >= a && t < b { lambda } else { 1.0 };
                -rate * (y - t.cos())
            },
            0.0,
            t1,
            0.0,
        )
    }

    pub fn rhs(&self, t: f64, y: f64) -> f64 {
        (self.f)(t, y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Algorithm {
    NonStiff,
    Stiff,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::NonStiff => "non-stiff",
            Algorithm::Stiff => "stiff",
        }
    }

    fn module(self) -> &'static str {
        match self {
            Algorithm::NonStiff => "ode_explicit",
            Algorithm::Stiff => "ode_implicit",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub const STAY: &str = "stay";
pub const TO_STIFF: &str = "switch-to-stiff";
pub const TO_NON_STIFF: &str = "switch-to-non-stiff";

pub fn ode_actions() -> Vec<Action> {
    [STAY, TO_STIFF, TO_NON_STIFF]
        .into_iter()
        .map(|p| Action::new(ActionKind::SwitchAlgorithm, p))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OdeConfig {
    /// Bound on the local error estimate of each accepted step.
    pub tolerance: f64,
    pub initial: Algorithm,
    pub allow_switching: bool,
    /// Initial step as a fraction of the span.
    pub initial_step: f64,
    /// Decision points per span.
    pub decisions: u32,
    /// A decision is also taken after this many attempted steps.
    pub window_steps: u64,
    /// Extra cost, in integrand evaluations, charged for a switch.
    pub switch_penalty: f64,
}

impl Default for OdeConfig {
    fn default() -> Self {
        OdeConfig {
            tolerance: 1e-2,
            initial: Algorithm::NonStiff,
            allow_switching: true,
            initial_step: 1e-4,
            decisions: 30,
            window_steps: 10,
            switch_penalty: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SwitchEvent {
    pub t: f64,
    pub from: Algorithm,
    pub to: Algorithm,
}

#[derive(Clone, Debug)]
pub struct OdeOutcome {
    /// (t, y) at every decision point and at the end.
    pub samples: Vec<(f64, f64)>,
    pub switches: Vec<SwitchEvent>,
    /// Attempted steps, rejected ones included.
    pub steps: u64,
    pub accepted: u64,
    pub evaluations: u64,
    pub final_value: f64,
    pub transitions: Vec<Transition>,
}

/// Stiffness class from h |df/dy| of the last accepted step. The explicit
/// method is stable for ratios up to 1, so accepted explicit steps that sit
/// above half of that have collapsed onto the stability bound.
pub fn stiffness_class(ratio: f64) -> &'static str {
    if ratio < 0.5 {
        "non-stiff"
    } else if ratio < 2.0 {
        "near-stiff"
    } else {
        "stiff"
    }
}

const DECIDE: ChannelId = ChannelId(0);
const UNDERFLOW: u64 = 3;

pub fn driver_module() -> ModuleDef {
    ModuleDef::new("ode_driver")
        .global("t", value::from_f64(0.0))
        .global("y", value::from_f64(0.0))
        .global("h", value::from_f64(0.0))
        .global("h_prev", value::from_f64(0.0))
        .global("f_prev", value::from_f64(0.0))
        .global("has_prev", value::from_u64(0))
        .global("t_end", value::from_f64(0.0))
        .global("tol", value::from_f64(1e-2))
        .global("steps", value::from_u64(0))
        .global("accepted", value::from_u64(0))
        .global("fevals", value::from_u64(0))
        .global("window_steps", value::from_u64(0))
        .global("window_cap", value::from_u64(10))
        .global("next_decision", value::from_f64(0.0))
        .global("stiffness", value::from_f64(0.0))
        .global("status", value::from_u64(0))
        .entry(Function::new("main", Signature::default(), driver_body))
}

fn driver_body(ex: &mut Exec<'_>) -> Result<Step, weaves_core::Error> {
    let (t, t_end) = (ex.read_f64("t")?, ex.read_f64("t_end")?);
    if t >= t_end || ex.read_u64("status")? != 0 {
        return Ok(Step::ret());
    }
    if ex.read_u64("window_steps")? >= ex.read_u64("window_cap")? || t >= ex.read_f64("next_decision")? {
        return Ok(match ex.recv(DECIDE) {
            Some(_) => Step::Continue,
            None => Step::Wait(DECIDE),
        });
    }
    Ok(Step::call("step", &[]))
}

/// Finish one attempted step: accept or shrink, update the controller.
fn conclude(ex: &mut Exec<'_>, y_new: f64, est: f64, fn_: f64, jac: f64) -> Result<Step, weaves_core::Error> {
    let (t, h, tol) = (ex.read_f64("t")?, ex.read_f64("h")?, ex.read_f64("tol")?);
    let t_end = ex.read_f64("t_end")?;
    ex.write_u64("steps", ex.read_u64("steps")? + 1)?;
    ex.write_u64("window_steps", ex.read_u64("window_steps")? + 1)?;
    let fac = if est > 0.0 { (0.9 * (tol / est).sqrt()).clamp(0.2, 2.0) } else { 2.0 };
    let (now, next_h) = if y_new.is_finite() && est.is_finite() && est <= tol {
        ex.write_f64("t", t + h)?;
        ex.write_f64("y", y_new)?;
        ex.write_f64("f_prev", fn_)?;
        ex.write_f64("h_prev", h)?;
        ex.write_u64("has_prev", 1)?;
        ex.write_f64("stiffness", h * jac.abs())?;
        ex.write_u64("accepted", ex.read_u64("accepted")? + 1)?;
        (t + h, (h * fac).min((t_end - (t + h)).max(0.0)))
    } else {
        (t, h * fac.min(0.5))
    };
    ex.write_f64("h", next_h)?;
    let h_min = 1e-12 * (t_end.abs() + 1.0);
    if next_h < h_min && t_end - now > h_min {
        ex.write_u64("status", UNDERFLOW)?;
    }
    Ok(Step::ret())
}

fn fd_jacobian(f: &Rhs, t: f64, y: f64, fy: f64) -> f64 {
    let d = 1e-7 * (1.0 + y.abs());
    (f(t, y + d) - fy) / d
}

fn count(ex: &mut Exec<'_>, n: u64) -> Result<(), weaves_core::Error> {
    ex.write_u64("fevals", ex.read_u64("fevals")? + n)
}

/// Second-order Adams-Bashforth with variable step; the first step after a
/// start or a switch uses Heun's method.
pub fn explicit_module(p: &OdeProblem) -> ModuleDef {
    let f = p.f.clone();
    ModuleDef::new("ode_explicit").export(Function::new("step", Signature::default(), move |ex: &mut Exec<'_>| {
        let (t, y, h) = (ex.read_f64("t")?, ex.read_f64("y")?, ex.read_f64("h")?);
        let fn_ = f(t, y);
        let (y_new, est, n) = if ex.read_u64("has_prev")? != 0 {
            let r = h / ex.read_f64("h_prev")?;
            let fp = ex.read_f64("f_prev")?;
            (y + h * ((1.0 + r / 2.0) * fn_ - (r / 2.0) * fp), (h * r / 2.0 * (fn_ - fp)).abs(), 1)
        } else {
            let f1 = f(t + h, y + h * fn_);
            (y + h / 2.0 * (fn_ + f1), (h / 2.0 * (f1 - fn_)).abs(), 2)
        };
        let jac = fd_jacobian(&f, t, y, fn_);
        count(ex, n + 1)?;
        conclude(ex, y_new, est, fn_, jac)
    }))
}

/// Backward Euler, Newton iteration with a difference-quotient Jacobian.
pub fn implicit_module(p: &OdeProblem) -> ModuleDef {
    let f = p.f.clone();
    ModuleDef::new("ode_implicit").export(Function::new("step", Signature::default(), move |ex: &mut Exec<'_>| {
        let (t, y, h) = (ex.read_f64("t")?, ex.read_f64("y")?, ex.read_f64("h")?);
        let fn_ = f(t, y);
        let tn = t + h;
        let mut big_y = y + h * fn_;
        let mut evals = 1;
        let mut jac = 0.0;
        let mut converged = false;
        for _ in 0..20 {
            let fy = f(tn, big_y);
            jac = fd_jacobian(&f, tn, big_y, fy);
            evals += 2;
            let dy = -(big_y - y - h * fy) / (1.0 - h * jac);
            big_y += dy;
            if dy.abs() <= 1e-10 * (1.0 + big_y.abs()) {
                converged = true;
                break;
            }
        }
        let f1 = f(tn, big_y);
        count(ex, evals + 1)?;
        let est = if converged { (h / 2.0 * (f1 - fn_)).abs() } else { f64::INFINITY };
        conclude(ex, big_y, est, fn_, jac)
    }))
}

struct Run {
    t: Tapestry,
    driver: BeadId,
    weave: WeaveId,
}

impl Run {
    fn get(&self, sym: &str) -> Result<f64> {
        Ok(value::to_f64(self.t.bead_value(self.driver, sym)?)?)
    }

    fn count(&self, sym: &str) -> Result<u64> {
        Ok(value::to_u64(self.t.bead_value(self.driver, sym)?)?)
    }

    fn set(&mut self, sym: &str, v: Vec<u8>) -> Result<()> {
        Ok(self.t.write_bead_value(self.driver, sym, v)?)
    }

    fn state(&self, alg: Algorithm) -> Result<FeatureState> {
        Ok(FeatureState::new()
            .with("state", Feature::sym(stiffness_class(self.get("stiffness")?)))
            .with("algorithm", Feature::sym(alg.name())))
    }
}

fn install(p: &OdeProblem, cfg: &OdeConfig) -> Result<Run> {
    if !(p.t1 > p.t0) || !(cfg.tolerance > 0.0) {
        return Err(weaves_core::Error::InvalidArgument("need t1 > t0 and tolerance > 0".into()).into());
    }
    let mut t = Tapestry::default();
    t.trace_mut().set_enabled(false);
    let dm = t.register_module(driver_module())?;
    let em = t.register_module(explicit_module(p))?;
    t.register_module(implicit_module(p))?;
    let driver = t.instantiate_labeled(dm, Some("driver".into()))?;
    let ex = t.instantiate_labeled(em, Some("integrator".into()))?;
    let weave = t.define_labeled_weave(&[driver, ex], Some("ode".into()))?;
    let span = p.t1 - p.t0;
    for (sym, v) in [
        ("t", value::from_f64(p.t0)),
        ("y", value::from_f64(p.y0)),
        ("h", value::from_f64(cfg.initial_step * span)),
        ("t_end", value::from_f64(p.t1)),
        ("tol", value::from_f64(cfg.tolerance)),
        ("window_cap", value::from_u64(cfg.window_steps)),
        ("next_decision", value::from_f64(p.t0 + span / cfg.decisions as f64)),
    ] {
        t.write_bead_value(driver, sym, v)?;
    }
    let mut run = Run { t, driver, weave };
    if cfg.initial == Algorithm::Stiff {
        let f = run.t.export_ref("ode_implicit", "step")?;
        run.t.rebind_function(weave, "step", f)?;
    }
    run.t.spawn_string(weave, "main")?;
    Ok(run)
}

/// Integrate `p`, letting `policy` decide at each decision point whether to
/// switch methods.
pub fn integrate_ode_switching(p: &OdeProblem, policy: &mut QPolicy, cfg: &OdeConfig) -> Result<OdeOutcome> {
    let mut run = install(p, cfg)?;
    let all = ode_actions();
    let mut alg = cfg.initial;
    let legal = |alg: Algorithm| -> Vec<Action> {
        if !cfg.allow_switching {
            return all[..1].to_vec();
        }
        let skip = if alg == Algorithm::Stiff { TO_STIFF } else { TO_NON_STIFF };
        all.iter().filter(|a| a.payload != skip).cloned().collect()
    };
    let window = (p.t1 - p.t0) / cfg.decisions as f64;
    let mut samples = Vec::new();
    let mut switches = Vec::new();
    let mut transitions: Vec<Transition> = Vec::new();
    // decision awaiting its window cost: (state, action, evaluations, t, switched)
    let mut open: Option<(FeatureState, Action, u64, f64, bool)> = None;
    policy.begin_episode();

    let close = |open: &mut Option<(FeatureState, Action, u64, f64, bool)>, run: &Run, next: Option<(FeatureState, Vec<Action>)>, transitions: &mut Vec<Transition>| -> Result<()> {
        if let Some((state, action, steps0, t0, switched)) = open.take() {
            let work = (run.count("fevals")? - steps0) as f64;
            let dt = (run.get("t")? - t0).max(f64::MIN_POSITIVE);
            let mut reward = -work * (window / dt).max(1.0);
            if switched {
                reward -= cfg.switch_penalty;
            }
            transitions.push(Transition { state, action, reward, next });
        }
        Ok(())
    };

    loop {
        match run.t.run(None)? {
            RunOutcome::Done => break,
            RunOutcome::Budget => unreachable!("run without a step budget"),
            RunOutcome::Waiting => {}
        }
        let (t, y) = (run.get("t")?, run.get("y")?);
        samples.push((t, y));
        let state = run.state(alg)?;
        let actions = legal(alg);
        close(&mut open, &run, Some((state.clone(), actions.clone())), &mut transitions)?;
        let action = policy.select_action(&state, &actions)?;
        let to = match action.payload.as_str() {
            TO_STIFF => Algorithm::Stiff,
            TO_NON_STIFF => Algorithm::NonStiff,
            _ => alg,
        };
        if to != alg {
            let f = run.t.export_ref(to.module(), "step")?;
            run.t.rebind_function(run.weave, "step", f)?;
            run.set("has_prev", value::from_u64(0))?;
            switches.push(SwitchEvent { t, from: alg, to });
        }
        open = Some((state, action, run.count("fevals")?, t, to != alg));
        alg = to;
        run.set("window_steps", value::from_u64(0))?;
        run.set("next_decision", value::from_f64(t + window))?;
        run.t.deliver(DECIDE, Vec::new());
    }

    if run.count("status")? == UNDERFLOW {
        return Err(AppError::StepUnderflow {
            t: run.get("t")?,
            h: run.get("h")?,
        });
    }
    close(&mut open, &run, None, &mut transitions)?;
    let (t, y) = (run.get("t")?, run.get("y")?);
    samples.push((t, y));
    Ok(OdeOutcome {
        samples,
        switches,
        steps: run.count("steps")?,
        accepted: run.count("accepted")?,
        evaluations: run.count("fevals")?,
        final_value: y,
        transitions,
    })
}

/// Learning settings for switching. The state cannot see upcoming phases of
/// the problem, so each decision is judged by the window it governs.
pub fn ode_qconfig() -> QConfig {
    QConfig {
        gamma: 0.5,
        ..QConfig::default()
    }
}

/// Integrate with the explicit method throughout.
pub fn integrate_explicit_only(p: &OdeProblem, cfg: &OdeConfig) -> Result<OdeOutcome> {
    let cfg = OdeConfig {
        allow_switching: false,
        initial: Algorithm::NonStiff,
        ..*cfg
    };
    integrate_ode_switching(p, &mut QPolicy::new(QConfig::default(), 0), &cfg)
}

/// Train on `problems` in round-robin, `explore` episodes in explore mode
/// and `exploit` in exploit mode. Returns the policy and the attempted
/// steps of each episode.
pub fn train_ode_policy(problems: &[OdeProblem], cfg: &OdeConfig, explore: usize, exploit: usize, seed: u64) -> Result<(QPolicy, Vec<u64>)> {
    let mut policy = QPolicy::new(ode_qconfig(), seed);
    let mut costs = Vec::new();
    for ep in 0..explore + exploit {
        policy.set_mode(if ep < explore { PolicyMode::Explore } else { PolicyMode::Exploit });
        let out = integrate_ode_switching(&problems[ep % problems.len()], &mut policy, cfg)?;
        policy.learn(&out.transitions)?;
        costs.push(out.steps);
    }
    Ok((policy, costs))
}
