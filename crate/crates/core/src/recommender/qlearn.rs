use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A discretised feature value.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Feature {
    Sym(String),
    Int(i64),
    Flag(bool),
}

impl Feature {
    pub fn sym(s: &str) -> Feature {
        Feature::Sym(s.into())
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Feature::Sym(s) => f.write_str(s),
            Feature::Int(i) => write!(f, "{i}"),
            Feature::Flag(b) => write!(f, "{}", if *b { "yes" } else { "no" }),
        }
    }
}

/// Named features in a fixed, domain-chosen order.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FeatureState(Vec<(String, Feature)>);

impl FeatureState {
    pub fn new() -> Self {
        FeatureState(Vec::new())
    }

    /// Set `name`, replacing an existing value in place.
    pub fn with(mut self, name: &str, value: Feature) -> Self {
        self.set(name, value);
        self
    }

    pub fn set(&mut self, name: &str, value: Feature) {
        match self.0.iter_mut().find(|(n, _)| n == name) {
            Some(slot) => slot.1 = value,
            None => self.0.push((name.into(), value)),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Feature> {
        self.0.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    pub fn features(&self) -> &[(String, Feature)] {
        &self.0
    }
}

impl fmt::Display for FeatureState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (n, v)) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{n}({v})")?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ActionKind {
    ChooseModule,
    SwitchAlgorithm,
    SetParameter,
    TerminateStage,
}

impl ActionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ActionKind::ChooseModule => "choose_module",
            ActionKind::SwitchAlgorithm => "switch_algorithm",
            ActionKind::SetParameter => "set_parameter",
            ActionKind::TerminateStage => "terminate_stage",
        }
    }

    pub fn parse(s: &str) -> Option<ActionKind> {
        [
            ActionKind::ChooseModule,
            ActionKind::SwitchAlgorithm,
            ActionKind::SetParameter,
            ActionKind::TerminateStage,
        ]
        .into_iter()
        .find(|k| k.as_str() == s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Action {
    pub kind: ActionKind,
    pub payload: String,
}

impl Action {
    pub fn new(kind: ActionKind, payload: &str) -> Self {
        Action {
            kind,
            payload: payload.into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PolicyMode {
    Explore,
    Exploit,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon_explore: f64,
    pub epsilon_exploit: f64,
    /// Minimum lead of the best action over the runner-up for a rule.
    pub margin: f64,
}

impl Default for QConfig {
    fn default() -> Self {
        QConfig {
            alpha: 0.1,
            gamma: 0.9,
            epsilon_explore: 0.5,
            epsilon_exploit: 0.05,
            margin: 0.1,
        }
    }
}

/// One observed step of an episode.
#[derive(Clone, Debug)]
pub struct Transition {
    pub state: FeatureState,
    pub action: Action,
    pub reward: f64,
    /// Next state and its legal actions; `None` when the episode ended.
    pub next: Option<(FeatureState, Vec<Action>)>,
}

/// What a rollback reveals about a failed choice.
#[derive(Clone, Debug)]
pub struct TupleView {
    pub state: FeatureState,
    pub failed: Action,
    /// Decisions made before the failure, oldest first.
    pub history: Vec<Action>,
    /// Intermediate values exposed by the failed attempt.
    pub values: Vec<(String, Feature)>,
}

#[derive(Clone, Debug)]
pub struct QPolicy {
    pub(crate) table: BTreeMap<(FeatureState, Action), f64>,
    mode: PolicyMode,
    epsilon: f64,
    config: QConfig,
    seed: u64,
    rng: ChaCha8Rng,
    pruned: BTreeSet<(FeatureState, Action)>,
}

impl QPolicy {
    pub fn new(config: QConfig, seed: u64) -> Self {
        QPolicy {
            table: BTreeMap::new(),
            mode: PolicyMode::Explore,
            epsilon: config.epsilon_explore,
            config,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            pruned: BTreeSet::new(),
        }
    }

    pub fn config(&self) -> &QConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mode(&self) -> PolicyMode {
        self.mode
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Override epsilon directly (e.g. 0 for greedy evaluation).
    pub fn set_epsilon(&mut self, epsilon: f64) {
        self.epsilon = epsilon.clamp(0.0, 1.0);
    }

    pub fn set_mode(&mut self, mode: PolicyMode) {
        self.mode = mode;
        self.epsilon = match mode {
            PolicyMode::Explore => self.config.epsilon_explore,
            PolicyMode::Exploit => self.config.epsilon_exploit,
        };
    }

    pub fn q(&self, state: &FeatureState, action: &Action) -> f64 {
        self.table
            .get(&(state.clone(), action.clone()))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn set_q(&mut self, state: FeatureState, action: Action, value: f64) {
        self.table.insert((state, action), value);
    }

    pub fn entries(&self) -> impl Iterator<Item = (&FeatureState, &Action, f64)> {
        self.table.iter().map(|((s, a), q)| (s, a, *q))
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    /// Forget pruned choices; call at the start of every episode.
    pub fn begin_episode(&mut self) {
        self.pruned.clear();
    }

    pub fn is_pruned(&self, state: &FeatureState, action: &Action) -> bool {
        self.pruned.contains(&(state.clone(), action.clone()))
    }

    /// Epsilon-greedy choice among the unpruned legal actions. Ties on
    /// utility go to the earliest action in `legal`.
    pub fn select_action(&mut self, state: &FeatureState, legal: &[Action]) -> Result<Action> {
        let open: Vec<&Action> = legal
            .iter()
            .filter(|a| !self.is_pruned(state, a))
            .collect();
        if open.is_empty() {
            return Err(Error::NoLegalAction);
        }
        if self.epsilon > 0.0 && self.rng.gen::<f64>() < self.epsilon {
            let i = self.rng.gen_range(0..open.len());
            return Ok(open[i].clone());
        }
        Ok(self.greedy(state, &open).clone())
    }

    fn greedy<'a>(&self, state: &FeatureState, open: &[&'a Action]) -> &'a Action {
        let mut best = open[0];
        let mut best_q = self.q(state, best);
        for a in &open[1..] {
            let q = self.q(state, a);
            if q > best_q {
                best = a;
                best_q = q;
            }
        }
        best
    }

    /// Max utility over `legal` in `state` (0 for an empty set).
    pub fn max_q(&self, state: &FeatureState, legal: &[Action]) -> f64 {
        legal
            .iter()
            .map(|a| self.q(state, a))
            .reduce(f64::max)
            .unwrap_or(0.0)
    }

    /// Q(s,a) += alpha * (r + gamma * max Q(s', .) - Q(s,a)); a terminal
    /// next state contributes 0.
    pub fn update_q(
        &mut self,
        state: &FeatureState,
        action: &Action,
        reward: f64,
        next: Option<(&FeatureState, &[Action])>,
    ) -> Result<()> {
        if !reward.is_finite() {
            return Err(Error::InvalidArgument("reward must be finite".into()));
        }
        let future = match next {
            Some((s, legal)) => self.max_q(s, legal),
            None => 0.0,
        };
        let key = (state.clone(), action.clone());
        let q = self.table.get(&key).copied().unwrap_or(0.0);
        let target = reward + self.config.gamma * future;
        self.table.insert(key, q + self.config.alpha * (target - q));
        Ok(())
    }

    /// Apply the updates of a whole episode, last step first so rewards
    /// propagate in one pass.
    pub fn learn(&mut self, episode: &[Transition]) -> Result<()> {
        for t in episode.iter().rev() {
            let next = t.next.as_ref().map(|(s, l)| (s, l.as_slice()));
            self.update_q(&t.state, &t.action, t.reward, next)?;
        }
        Ok(())
    }

    /// Exclude the failed choice for the rest of the episode and return the
    /// state augmented with the values the failed attempt exposed.
    pub fn prune_failed_path(&mut self, view: &TupleView) -> FeatureState {
        self.pruned.insert((view.state.clone(), view.failed.clone()));
        let mut augmented = view.state.clone();
        for (n, v) in &view.values {
            augmented.set(n, v.clone());
        }
        self.pruned.insert((augmented.clone(), view.failed.clone()));
        augmented
    }
}
