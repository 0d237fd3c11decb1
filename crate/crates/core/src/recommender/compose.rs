use alloc::string::String;
use alloc::vec::Vec;

use super::qlearn::{Action, ActionKind, Feature, FeatureState, QPolicy, Transition};
use crate::error::{Error, Result};

/// A semantic precondition on the features known when a stage runs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Guard {
    Requires(String, Feature),
    Forbids(String, Feature),
}

impl Guard {
    fn admits(&self, state: &FeatureState) -> bool {
        match self {
            Guard::Requires(n, v) => state.get(n) == Some(v),
            Guard::Forbids(n, v) => state.get(n) != Some(v),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Candidate {
    pub module: String,
    pub guards: Vec<Guard>,
    /// Features this choice makes known to later stages.
    pub produces: Vec<(String, Feature)>,
}

impl Candidate {
    pub fn new(module: &str) -> Self {
        Candidate {
            module: module.into(),
            guards: Vec::new(),
            produces: Vec::new(),
        }
    }

    pub fn guard(mut self, g: Guard) -> Self {
        self.guards.push(g);
        self
    }

    pub fn produces(mut self, name: &str, value: Feature) -> Self {
        self.produces.push((name.into(), value));
        self
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Stage {
    pub name: String,
    pub candidates: Vec<Candidate>,
    /// Indices of stages that must run first.
    pub after: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StageGraph {
    pub stages: Vec<Stage>,
}

impl StageGraph {
    /// Topological order, lowest index first among ready stages.
    pub fn order(&self) -> Result<Vec<usize>> {
        let n = self.stages.len();
        let mut indeg: Vec<usize> = self.stages.iter().map(|s| s.after.len()).collect();
        for s in &self.stages {
            if s.after.iter().any(|d| *d >= n) {
                return Err(Error::InvalidArgument("stage dependency out of range".into()));
            }
        }
        let mut done = alloc::vec![false; n];
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let next = (0..n).find(|i| !done[*i] && indeg[*i] == 0);
            let Some(i) = next else {
                return Err(Error::InvalidArgument("stage graph has a cycle".into()));
            };
            done[i] = true;
            out.push(i);
            for (j, s) in self.stages.iter().enumerate() {
                if s.after.contains(&i) {
                    indeg[j] -= 1;
                }
            }
        }
        Ok(out)
    }
}

/// Choose one module per stage in dependency order. The state seen by a
/// stage is the problem's features, the stage name, and everything produced
/// by earlier choices. Returns the choices and the transitions taken, which
/// carry zero reward; the caller adds the episode's outcome to the last one.
pub fn staged_compose(
    problem: &FeatureState,
    graph: &StageGraph,
    policy: &mut QPolicy,
) -> Result<(Vec<(String, String)>, Vec<Transition>)> {
    let order = graph.order()?;
    let mut known = problem.clone();
    let mut choices = Vec::new();
    let mut steps: Vec<Transition> = Vec::new();
    for idx in order {
        let stage = &graph.stages[idx];
        let state = known.clone().with("stage", Feature::Sym(stage.name.clone()));
        let legal: Vec<Action> = stage
            .candidates
            .iter()
            .filter(|c| c.guards.iter().all(|g| g.admits(&known)))
            .map(|c| Action::new(ActionKind::ChooseModule, &c.module))
            .collect();
        if legal.is_empty() {
            return Err(Error::NoFeasibleComposition);
        }
        let action = policy
            .select_action(&state, &legal)
            .map_err(|_| Error::NoFeasibleComposition)?;
        if let Some(prev) = steps.last_mut() {
            prev.next = Some((state.clone(), legal.clone()));
        }
        let cand = stage
            .candidates
            .iter()
            .find(|c| c.module == action.payload)
            .unwrap();
        for (n, v) in &cand.produces {
            known.set(n, v.clone());
        }
        choices.push((stage.name.clone(), action.payload.clone()));
        steps.push(Transition {
            state,
            action,
            reward: 0.0,
            next: None,
        });
    }
    Ok((choices, steps))
}
