//! Globally adaptive quadrature with a rule chosen per subinterval by a
//! learned policy.
//!
//! Interval records live in tapestry cells, one allocation per evaluated
//! subinterval. Every rule choice is preceded by a checkpoint; a rule that
//! produces a non-finite result is rolled back, pruned for that state, and
//! the choice is made again from the state augmented with what the failure
//! revealed.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::sync::Arc;

use weaves_core::recommender::{Action, ActionKind, Feature, FeatureState, PolicyMode, QConfig, QPolicy, Transition, TupleView};
use weaves_core::value;
use weaves_core::{Addr, BeadId, Function, Mode, ModuleDef, Scope, Signature, Step, Tapestry};

use crate::error::{AppError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum QuadRule {
    Midpoint,
    Trapezoid,
    Simpson,
    Gauss5,
    /// Three-point Gauss rule that reports failure on any subinterval
    /// touching a singular point of the problem.
    Fragile3,
}

const GAUSS5: [(f64, f64); 5] = [
    (0.0, 0.568_888_888_888_888_9),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (-0.906_179_845_938_664_0, 0.236_926_885_056_189_1),
    (0.906_179_845_938_664_0, 0.236_926_885_056_189_1),
];

const GAUSS3: [(f64, f64); 3] = [
    (0.0, 8.0 / 9.0),
    (-0.774_596_669_241_483_4, 5.0 / 9.0),
    (0.774_596_669_241_483_4, 5.0 / 9.0),
];

impl QuadRule {
    pub const ALL: [QuadRule; 5] = [
        QuadRule::Midpoint,
        QuadRule::Trapezoid,
        QuadRule::Simpson,
        QuadRule::Gauss5,
        QuadRule::Fragile3,
    ];

    pub fn name(self) -> &'static str {
        match self {
            QuadRule::Midpoint => "midpoint",
            QuadRule::Trapezoid => "trapezoid",
            QuadRule::Simpson => "simpson",
            QuadRule::Gauss5 => "gauss5",
            QuadRule::Fragile3 => "fragile3",
        }
    }

    pub fn parse(s: &str) -> Option<QuadRule> {
        QuadRule::ALL.into_iter().find(|r| r.name() == s)
    }

    pub fn action(self) -> Action {
        Action::new(ActionKind::ChooseModule, self.name())
    }

    fn code(self) -> f64 {
        self as u8 as f64
    }

    /// One application of the rule on [a, b].
    pub fn apply(self, p: &QuadratureProblem, a: f64, b: f64) -> f64 {
        let (c, r) = ((a + b) / 2.0, (b - a) / 2.0);
        let gauss = |nodes: &[(f64, f64)]| nodes.iter().map(|(x, w)| w * p.eval(c + r * x)).sum::<f64>() * r;
        match self {
            QuadRule::Midpoint => (b - a) * p.eval(c),
            QuadRule::Trapezoid => (b - a) * (p.eval(a) + p.eval(b)) / 2.0,
            QuadRule::Simpson => (b - a) * (p.eval(a) + 4.0 * p.eval(c) + p.eval(b)) / 6.0,
            QuadRule::Gauss5 => gauss(&GAUSS5),
            QuadRule::Fragile3 => {
                let v = gauss(&GAUSS3);
                if p.singular.iter().any(|s| *s >= a && *s <= b) {
                    f64::NAN
                } else {
                    v
                }
            }
        }
    }
}

impl fmt::Display for QuadRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

type Integrand = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// An integrand on an interval with a target absolute accuracy. Every call
/// of the integrand is counted.
#[derive(Clone)]
pub struct QuadratureProblem {
    pub name: String,
    f: Integrand,
    pub a: f64,
    pub b: f64,
    pub tolerance: f64,
    /// Points where the integrand is singular.
    pub singular: Vec<f64>,
    evaluations: Arc<std::sync::atomic::AtomicU64>,
}

impl QuadratureProblem {
    pub fn new(name: &str, f: impl Fn(f64) -> f64 + Send + Sync + 'static, a: f64, b: f64, tolerance: f64) -> Self {
        QuadratureProblem {
            name: name.into(),
            f: Arc::new(f),
            a,
            b,
            tolerance,
            singular: Vec::new(),
            evaluations: Default::default(),
        }
    }

    pub fn with_singularity(mut self, x: f64) -> Self {
        self.singular.push(x);
        self
    }

    /// x^(-alpha) on [0, 1].
    pub fn power(alpha: f64, tolerance: f64) -> Self {
        QuadratureProblem::new(&format!("x^-{alpha}"), move |x: f64| x.powf(-alpha), 0.0, 1.0, tolerance).with_singularity(0.0)
    }

    /// The ten-member family x^(-alpha), alpha = 0.05, 0.10, ..., 0.50.
    pub fn power_family(tolerance: f64) -> Vec<QuadratureProblem> {
        (1..=10).map(|k| QuadratureProblem::power(0.05 * k as f64, tolerance)).collect()
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.evaluations.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        (self.f)(x)
    }

    pub fn evaluations(&self) -> u64 {
        self.evaluations.load(std::sync::atomic::Ordering::Relaxed)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttemptOutcome {
    Accepted,
    Failed,
}

/// One rule choice on one subinterval.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadAttempt {
    pub interval: (f64, f64),
    pub state: FeatureState,
    pub action: Action,
    pub outcome: AttemptOutcome,
    pub evaluations: u64,
}

#[derive(Clone, Debug)]
pub struct QuadOutcome {
    pub value: f64,
    pub error_estimate: f64,
    pub evaluations: u64,
    pub intervals: usize,
    pub trace: Vec<QuadAttempt>,
    /// Learning transitions, one per attempt, with subtree cost as reward.
    pub transitions: Vec<Transition>,
}

impl QuadOutcome {
    pub fn failures(&self) -> usize {
        self.trace.iter().filter(|t| t.outcome == AttemptOutcome::Failed).count()
    }
}

/// Fraction of the tolerance the summed error estimates must reach. The
/// pair estimate on a subinterval ending at an x^(-alpha) singularity
/// understates the error by up to 1/(2^(1-alpha) - 1).
const ESTIMATE_SAFETY: f64 = 0.25;

pub fn quadrature_module() -> ModuleDef {
    ModuleDef::new("quadrature")
        .global("choices", value::from_u64(0))
        .global("total", value::from_f64(0.0))
        .entry(Function::new("main", Signature::default(), |_| Ok(Step::ret())))
}

fn features(p: &QuadratureProblem, a: f64, b: f64, depth: u32) -> FeatureState {
    let position = match (a == p.a, b == p.b) {
        (true, true) => "whole",
        (true, false) => "left_end",
        (false, true) => "right_end",
        (false, false) => "interior",
    };
    FeatureState::new()
        .with("position", Feature::sym(position))
        .with("depth", Feature::Int((depth.min(15) / 4) as i64))
}

/// Interval bookkeeping kept in tapestry cells.
struct Store {
    t: Tapestry,
    bead: BeadId,
}

impl Store {
    fn new() -> Result<Self> {
        let mut t = Tapestry::default();
        t.trace_mut().set_enabled(false);
        let m = t.register_module(quadrature_module())?;
        let bead = t.instantiate_labeled(m, Some("quadrature".into()))?;
        Ok(Store { t, bead })
    }

    fn choices(&self) -> Result<u64> {
        Ok(value::to_u64(self.t.bead_value(self.bead, "choices")?)?)
    }

    /// Each choice gets its own record of (a, b, rule).
    fn note_choice(&mut self, a: f64, b: f64, rule: QuadRule) -> Result<()> {
        let n = self.choices()?;
        self.t.write_bead_value(self.bead, "choices", value::from_u64(n + 1))?;
        let addr = self.t.alloc_for(self.bead, 24)?;
        self.t.store(addr, &value::from_f64s(&[a, b, rule.code()]))?;
        Ok(())
    }

    fn record(&mut self, rec: [f64; 5]) -> Result<Addr> {
        let addr = self.t.alloc_for(self.bead, 40)?;
        self.t.store(addr, &value::from_f64s(&rec))?;
        Ok(addr)
    }

    /// (a, b, value, error, depth)
    fn read(&self, addr: Addr) -> Result<[f64; 5]> {
        let v = value::to_f64s(self.t.memory().value(addr)?)?;
        Ok([v[0], v[1], v[2], v[3], v[4]])
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct ByError(f64);

impl Eq for ByError {}

impl PartialOrd for ByError {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ByError {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

struct Node {
    parent: Option<usize>,
    /// Indices into the transition list for this node's attempts, and the
    /// evaluations each spent.
    attempts: Vec<(usize, u64)>,
    subtree: u64,
}

/// Integrate with rules chosen by `policy` from `rules`. Returns
/// `BudgetExceeded` when more than `budget` evaluations would be needed.
pub fn integrate_adaptive_quadrature(p: &QuadratureProblem, rules: &[QuadRule], policy: &mut QPolicy, budget: u64) -> Result<QuadOutcome> {
    let legal: Vec<Action> = rules.iter().map(|r| r.action()).collect();
    let start = p.evaluations();
    let spent = || p.evaluations() - start;
    let mut store = Store::new()?;
    let mut trace = Vec::new();
    let mut transitions: Vec<Transition> = Vec::new();
    let mut nodes: Vec<Node> = Vec::new();
    // error estimate, record, node; mirrors the errors stored in the cells
    let mut open: BinaryHeap<(ByError, Addr, usize)> = BinaryHeap::new();
    let mut total_err = 0.0;
    let mut pending: Vec<(f64, f64, u32, Option<usize>)> = vec![(p.a, p.b, 0, None)];
    policy.begin_episode();

    loop {
        while let Some((a, b, depth, parent)) = pending.pop() {
            let node = nodes.len();
            nodes.push(Node {
                parent,
                attempts: Vec::new(),
                subtree: 0,
            });
            let mut state = features(p, a, b, depth);
            let mut tried = Vec::new();
            loop {
                let cp = store.t.take_checkpoint(Scope::Tapestry, Mode::Cow)?;
                let action = policy.select_action(&state, &legal)?;
                let rule = QuadRule::parse(&action.payload).expect("legal actions name rules");
                store.note_choice(a, b, rule)?;
                let before = spent();
                let m = (a + b) / 2.0;
                let coarse = rule.apply(p, a, b);
                let fine = rule.apply(p, a, m) + rule.apply(p, m, b);
                let err = (fine - coarse).abs();
                // provisional record, released again if the attempt fails
                let addr = store.record([a, b, fine, err, depth as f64])?;
                let cost = spent() - before;
                nodes[node].attempts.push((transitions.len(), cost));
                transitions.push(Transition {
                    state: state.clone(),
                    action: action.clone(),
                    reward: 0.0,
                    next: None,
                });
                tried.push(action.clone());
                if fine.is_finite() && coarse.is_finite() {
                    store.t.drop_checkpoint(cp)?;
                    trace.push(QuadAttempt {
                        interval: (a, b),
                        state,
                        action,
                        outcome: AttemptOutcome::Accepted,
                        evaluations: cost,
                    });
                    open.push((ByError(err), addr, node));
                    total_err += err;
                    break;
                }
                store.t.restore(cp)?;
                store.t.drop_checkpoint(cp)?;
                trace.push(QuadAttempt {
                    interval: (a, b),
                    state: state.clone(),
                    action: action.clone(),
                    outcome: AttemptOutcome::Failed,
                    evaluations: cost,
                });
                let view = TupleView {
                    state: state.clone(),
                    failed: action,
                    history: tried.clone(),
                    values: vec![("singular".into(), Feature::Flag(true))],
                };
                state = policy.prune_failed_path(&view);
                if spent() > budget {
                    return Err(AppError::BudgetExceeded { budget });
                }
            }
            if spent() > budget {
                return Err(AppError::BudgetExceeded { budget });
            }
        }

        if total_err <= ESTIMATE_SAFETY * p.tolerance {
            // the running sum drifts; decide on an exact one
            total_err = 0.0;
            for (_, addr, _) in &open {
                total_err += store.read(*addr)?[3];
            }
        }
        if total_err <= ESTIMATE_SAFETY * p.tolerance {
            let mut value = 0.0;
            for (_, addr, _) in &open {
                value += store.read(*addr)?[2];
            }
            store.t.write_bead_value(store.bead, "total", value::from_f64(value))?;
            settle_rewards(&mut nodes, &mut transitions);
            return Ok(QuadOutcome {
                value,
                error_estimate: total_err,
                evaluations: spent(),
                intervals: open.len(),
                trace,
                transitions,
            });
        }
        let (_, addr, node) = open.pop().expect("at least one interval");
        let [a, b, _, err, depth] = store.read(addr)?;
        total_err -= err;
        store.t.free(addr)?;
        let m = (a + b) / 2.0;
        let d = depth as u32 + 1;
        pending.push((m, b, d, Some(node)));
        pending.push((a, m, d, Some(node)));
    }
}

/// Reward of each attempt: minus the evaluations spent from that attempt
/// on, including everything spent below the node it belongs to.
fn settle_rewards(nodes: &mut [Node], transitions: &mut [Transition]) {
    for i in (0..nodes.len()).rev() {
        let own: u64 = nodes[i].attempts.iter().map(|(_, c)| c).sum();
        nodes[i].subtree += own;
        if let Some(p) = nodes[i].parent {
            let s = nodes[i].subtree;
            nodes[p].subtree += s;
        }
    }
    for n in nodes.iter() {
        let below = n.subtree - n.attempts.iter().map(|(_, c)| c).sum::<u64>();
        let mut remaining = n.subtree - below;
        for (t, c) in &n.attempts {
            transitions[*t].reward = -((remaining + below) as f64);
            remaining -= c;
        }
    }
}

/// A policy that knows nothing and never explores: always the first rule.
pub fn fixed_policy() -> QPolicy {
    let mut p = QPolicy::new(QConfig::default(), 0);
    p.set_epsilon(0.0);
    p
}

/// Integrate with a single rule throughout.
pub fn integrate_fixed(p: &QuadratureProblem, rule: QuadRule, budget: u64) -> Result<QuadOutcome> {
    integrate_adaptive_quadrature(p, &[rule], &mut fixed_policy(), budget)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingReport {
    /// Evaluations per episode, in order; `None` for an episode that ran out
    /// of budget.
    pub costs: Vec<Option<u64>>,
    pub explore_episodes: usize,
}

/// Train on `problems` in round-robin: `explore` episodes in explore mode,
/// then `exploit` episodes in exploit mode.
pub fn train_quadrature_policy(
    problems: &[QuadratureProblem],
    rules: &[QuadRule],
    explore: usize,
    exploit: usize,
    seed: u64,
    budget: u64,
) -> Result<(QPolicy, TrainingReport)> {
    let mut policy = QPolicy::new(QConfig::default(), seed);
    let mut costs = Vec::new();
    for ep in 0..explore + exploit {
        policy.set_mode(if ep < explore { PolicyMode::Explore } else { PolicyMode::Exploit });
        let p = &problems[ep % problems.len()];
        match integrate_adaptive_quadrature(p, rules, &mut policy, budget) {
            Ok(out) => {
                policy.learn(&out.transitions)?;
                costs.push(Some(out.evaluations));
            }
            Err(AppError::BudgetExceeded { .. }) => costs.push(None),
            Err(AppError::Core(weaves_core::Error::NoLegalAction)) => costs.push(None),
            Err(e) => return Err(e),
        }
    }
    Ok((
        policy,
        TrainingReport {
            costs,
            explore_episodes: explore,
        },
    ))
}
