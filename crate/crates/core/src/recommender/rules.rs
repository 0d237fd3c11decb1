use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;

use super::qlearn::{Action, FeatureState, QPolicy};

/// "In this state, take this action": emitted when the best action's
/// utility leads the runner-up by at least the margin.
#[derive(Clone, Debug, PartialEq)]
pub struct Rule {
    pub state: FeatureState,
    pub action: Action,
    pub utility: f64,
    pub lead: f64,
}

/// Clause text. The head `qvalue(1)` marks the action as the top-ranked
/// choice for the listed conjunction of features.
impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "qvalue(1) :-")?;
        writeln!(f, "  {},", self.state)?;
        write!(f, "  action({}).", self.action.payload)
    }
}

/// Rules for every state whose argmax clears the runner-up by `margin`.
/// A state with a single known action is compared against 0.
pub fn extract_policy_rules(policy: &QPolicy, margin: f64) -> Vec<Rule> {
    let mut by_state: BTreeMap<&FeatureState, Vec<(&Action, f64)>> = BTreeMap::new();
    for (s, a, q) in policy.entries() {
        by_state.entry(s).or_default().push((a, q));
    }
    let mut out = Vec::new();
    for (state, mut actions) in by_state {
        actions.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(y.0)));
        let best = actions[0];
        let runner = actions.get(1).map(|r| r.1).unwrap_or(0.0);
        let lead = best.1 - runner;
        if lead >= margin {
            out.push(Rule {
                state: state.clone(),
                action: best.0.clone(),
                utility: best.1,
                lead,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recommender::{ActionKind, Feature, QConfig};
    use alloc::string::ToString;

    #[test]
    fn clear_argmax_per_bin_and_margin() {
        let mut p = QPolicy::new(QConfig::default(), 0);
        let s1 = FeatureState::new()
            .with("state", Feature::sym("near-stiff"))
            .with("algorithm", Feature::sym("non-stiff"));
        let s2 = FeatureState::new().with("state", Feature::sym("beginning"));
        let sw = Action::new(ActionKind::SwitchAlgorithm, "switch-to-stiff");
        let go = Action::new(ActionKind::SwitchAlgorithm, "continue");
        p.set_q(s1.clone(), sw.clone(), 1.0);
        p.set_q(s1.clone(), go.clone(), 0.2);
        p.set_q(s2.clone(), sw.clone(), 0.5);
        p.set_q(s2.clone(), go.clone(), 0.45);
        let rules = extract_policy_rules(&p, 0.1);
        assert_eq!(rules.len(), 1);
        assert_eq!(
            rules[0].to_string(),
            "qvalue(1) :-\n  state(near-stiff), algorithm(non-stiff),\n  action(switch-to-stiff)."
        );
        assert_eq!(extract_policy_rules(&p, 0.01).len(), 2);
    }
}
