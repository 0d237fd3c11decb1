use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use weaves_core::recommender::{
    extract_policy_rules, mine_regions, staged_compose, Action, ActionKind, Candidate, Feature,
    FeatureState, Guard, Outcome, PerformanceRecord, PolicyMode, QConfig, QPolicy, Stage,
    StageGraph, TupleView,
};
use weaves_core::Error;

fn st(name: &str) -> FeatureState {
    FeatureState::new().with("state", Feature::sym(name))
}

fn act(name: &str) -> Action {
    Action::new(ActionKind::SwitchAlgorithm, name)
}

#[test]
fn two_state_chain_converges_to_bellman_fixed_point() {
    // s0 -go-> s1 (r=1), s0 -stay-> s0 (r=0), s1 -go-> s0 (r=2), s1 -stay-> s1 (r=0.5)
    let gamma = 0.9;
    let mut p = QPolicy::new(QConfig::default(), 0);
    let acts = [act("go"), act("stay")];
    let step = |s: usize, a: usize| -> (usize, f64) {
        match (s, a) {
            (0, 0) => (1, 1.0),
            (0, _) => (0, 0.0),
            (1, 0) => (0, 2.0),
            _ => (1, 0.5),
        }
    };
    let states = [st("s0"), st("s1")];
    for _ in 0..10_000 {
        for s in 0..2 {
            for a in 0..2 {
                let (n, r) = step(s, a);
                p.update_q(&states[s], &acts[a], r, Some((&states[n], &acts))).unwrap();
            }
        }
    }
    // both states prefer "go": V0 = 1 + g V1, V1 = 2 + g V0
    let v0 = (1.0 + gamma * 2.0) / (1.0 - gamma * gamma);
    let v1 = 2.0 + gamma * v0;
    let expect = [[v0, gamma * v0], [v1, 0.5 + gamma * v1]];
    for s in 0..2 {
        for a in 0..2 {
            let q = p.q(&states[s], &acts[a]);
            assert!((q - expect[s][a]).abs() < 1e-6, "Q(s{s},{a}) = {q}");
        }
    }
}

#[test]
fn full_exploration_is_uniform() {
    let mut p = QPolicy::new(QConfig::default(), 42);
    p.set_epsilon(1.0);
    let legal: Vec<Action> = (0..4).map(|i| act(&format!("a{i}"))).collect();
    p.set_q(st("x"), legal[0].clone(), 100.0);
    let mut counts = [0usize; 4];
    let draws = 10_000;
    for _ in 0..draws {
        let a = p.select_action(&st("x"), &legal).unwrap();
        counts[legal.iter().position(|l| *l == a).unwrap()] += 1;
    }
    let mean = draws as f64 / 4.0;
    let sigma = (draws as f64 * 0.25 * 0.75).sqrt();
    for c in counts {
        assert!((c as f64 - mean).abs() <= 3.0 * sigma, "{counts:?}");
    }
}

#[test]
fn identical_seeds_reproduce_selections() {
    let run = |seed| {
        let mut p = QPolicy::new(QConfig::default(), seed);
        let legal = [act("a"), act("b"), act("c")];
        (0..200)
            .map(|_| p.select_action(&st("x"), &legal).unwrap().payload)
            .collect::<Vec<_>>()
    };
    assert_eq!(run(9), run(9));
}

proptest! {
    #[test]
    fn positive_scaling_keeps_the_greedy_choice(
        qs in prop::collection::vec(-100.0f64..100.0, 1..8),
        k in 0.01f64..100.0,
    ) {
        let legal: Vec<Action> = (0..qs.len()).map(|i| act(&format!("a{i}"))).collect();
        let mut p = QPolicy::new(QConfig::default(), 0);
        let mut scaled = QPolicy::new(QConfig::default(), 0);
        p.set_epsilon(0.0);
        scaled.set_epsilon(0.0);
        for (a, q) in legal.iter().zip(&qs) {
            p.set_q(st("x"), a.clone(), *q);
            scaled.set_q(st("x"), a.clone(), *q * k);
        }
        prop_assert_eq!(
            p.select_action(&st("x"), &legal).unwrap(),
            scaled.select_action(&st("x"), &legal).unwrap()
        );
    }

    #[test]
    fn pruned_actions_are_never_selected(
        seed in any::<u64>(),
        eps in 0.0f64..=1.0,
        n in 2usize..6,
        pruned in 0usize..6,
    ) {
        let pruned = pruned % n;
        let legal: Vec<Action> = (0..n).map(|i| act(&format!("a{i}"))).collect();
        let mut p = QPolicy::new(QConfig::default(), seed);
        p.set_epsilon(eps);
        p.set_q(st("x"), legal[pruned].clone(), 1e9);
        p.prune_failed_path(&TupleView {
            state: st("x"),
            failed: legal[pruned].clone(),
            history: vec![],
            values: vec![],
        });
        for _ in 0..100 {
            prop_assert_ne!(p.select_action(&st("x"), &legal).unwrap(), legal[pruned].clone());
        }
    }
}

#[test]
fn explore_then_exploit_lowers_episode_cost() {
    // bandit with 5 arms of fixed cost; flip mode after 300 episodes
    let costs = [0.9, 0.5, 0.2, 0.7, 0.8];
    let legal: Vec<Action> = (0..5).map(|i| act(&format!("arm{i}"))).collect();
    let mut p = QPolicy::new(QConfig::default(), 5);
    let mut before = Vec::new();
    let mut after = Vec::new();
    for ep in 0..600 {
        if ep == 300 {
            p.set_mode(PolicyMode::Exploit);
        }
        let a = p.select_action(&st("s"), &legal).unwrap();
        let c = costs[legal.iter().position(|l| *l == a).unwrap()];
        p.update_q(&st("s"), &a, -c, None).unwrap();
        if ep < 300 { before.push(c) } else { after.push(c) }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(mean(&after) <= mean(&before));
}

/// discretise -> (optional) precondition -> solve. The discretiser flags
/// ill-conditioning; solving an ill-conditioned system without a
/// preconditioner is expensive.
fn pipeline() -> StageGraph {
    let ill = |v| Feature::Flag(v);
    StageGraph {
        stages: vec![
            Stage {
                name: "discretizer".into(),
                candidates: vec![Candidate::new("fd").produces("ill-conditioned", ill(true))],
                after: vec![],
            },
            Stage {
                name: "preconditioner".into(),
                candidates: vec![
                    Candidate::new("none"),
                    Candidate::new("ilu"),
                    Candidate::new("jacobi"),
                    Candidate::new("ssor"),
                ],
                after: vec![0],
            },
            Stage {
                name: "solver".into(),
                candidates: vec![
                    Candidate::new("gmres"),
                    Candidate::new("cg").guard(Guard::Forbids("nonsymmetric".into(), ill(true))),
                ],
                after: vec![1],
            },
        ],
    }
}

fn pipeline_cost(choices: &[(String, String)]) -> f64 {
    let pre = &choices[1].1;
    let solver = &choices[2].1;
    let base = match pre.as_str() {
        "ilu" => 0.2,
        "none" => 1.0,
        _ => 0.6,
    };
    base + if solver == "gmres" { 0.0 } else { 0.1 }
}

#[test]
fn trained_policy_finds_the_best_composition() {
    let graph = pipeline();
    // exhaustive oracle over all compositions
    let mut best = (f64::MAX, String::new());
    for pre in ["none", "ilu", "jacobi", "ssor"] {
        for sol in ["gmres", "cg"] {
            let c = vec![
                ("discretizer".to_string(), "fd".to_string()),
                ("preconditioner".to_string(), pre.to_string()),
                ("solver".to_string(), sol.to_string()),
            ];
            let cost = pipeline_cost(&c);
            if cost < best.0 {
                best = (cost, format!("{pre}+{sol}"));
            }
        }
    }
    let mut p = QPolicy::new(QConfig::default(), 11);
    for _ in 0..2000 {
        let (choices, mut steps) = staged_compose(&FeatureState::new(), &graph, &mut p).unwrap();
        steps.last_mut().unwrap().reward = -pipeline_cost(&choices);
        p.learn(&steps).unwrap();
    }
    p.set_epsilon(0.0);
    let (choices, _) = staged_compose(&FeatureState::new(), &graph, &mut p).unwrap();
    assert_eq!(format!("{}+{}", choices[1].1, choices[2].1), best.1);

    // an untrained uniform policy picks the preconditioner about 1/4 of the time
    let mut u = QPolicy::new(QConfig::default(), 12);
    u.set_epsilon(1.0);
    let hits = (0..4000)
        .filter(|_| staged_compose(&FeatureState::new(), &graph, &mut u).unwrap().0[1].1 == "ilu")
        .count();
    assert!((hits as f64 / 4000.0 - 0.25).abs() < 0.03);
}

#[test]
fn extracted_rules_follow_the_trained_table() {
    let mut p = QPolicy::new(QConfig::default(), 3);
    let near = FeatureState::new()
        .with("state", Feature::sym("near-stiff"))
        .with("algorithm", Feature::sym("non-stiff"));
    for _ in 0..200 {
        p.update_q(&near, &act("switch-to-stiff"), 1.0, None).unwrap();
        p.update_q(&near, &act("continue"), -1.0, None).unwrap();
    }
    let rules = extract_policy_rules(&p, 0.1);
    assert_eq!(rules.len(), 1);
    let text = rules[0].to_string();
    assert!(text.contains("state(near-stiff), algorithm(non-stiff)"));
    assert!(text.ends_with("action(switch-to-stiff)."));
}

// ---- mining ----------------------------------------------------------

/// A is preferred iff lfill lies in a band that narrows as alpha grows.
fn truth(ai: usize, lf: usize) -> bool {
    let centre = 10.0;
    let half = 8.0 - 0.35 * ai as f64;
    (lf as f64 - centre).abs() <= half
}

fn synthetic_db(seed: u64, noise: f64) -> Vec<PerformanceRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut db = Vec::new();
    for ai in 0..20 {
        for lf in 0..21 {
            let params = vec![ai as f64 * 0.05, lf as f64];
            for _ in 0..6 {
                let flip = rng.gen::<f64>() < noise;
                let good = truth(ai, lf) != flip;
                db.push(PerformanceRecord {
                    params: params.clone(),
                    method: "gmres".into(),
                    outcome: if good || rng.gen::<bool>() { Outcome::Success } else { Outcome::Failure },
                    time: if good { 1.0 } else { 3.0 },
                    evals: 0,
                });
                db.push(PerformanceRecord {
                    params: params.clone(),
                    method: "gauss".into(),
                    outcome: Outcome::Success,
                    time: 2.0,
                    evals: 0,
                });
            }
        }
    }
    db
}

#[test]
fn mined_region_recovers_the_narrowing_band() {
    let db = synthetic_db(1, 0.02);
    let region = mine_regions(&db, "gmres", "gauss", 0.9).unwrap();
    let cells = region.cells();
    let truth_cells: Vec<Vec<usize>> = (0..20)
        .flat_map(|a| (0..21).map(move |l| vec![a, l]))
        .filter(|c| truth(c[0], c[1]))
        .collect();
    let hit = truth_cells.iter().filter(|c| cells.contains(*c)).count();
    let false_cells = cells.iter().filter(|c| !truth(c[0], c[1])).count();
    assert!(hit as f64 >= 0.9 * truth_cells.len() as f64);
    assert!(false_cells as f64 <= 0.1 * cells.len() as f64);
    // boxes never overlap
    for (i, a) in region.boxes.iter().enumerate() {
        for b in &region.boxes[i + 1..] {
            let overlap = (0..2).all(|d| a.lo[d] <= b.hi[d] && b.lo[d] <= a.hi[d]);
            assert!(!overlap);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn raising_confidence_never_grows_the_region(seed in any::<u64>(), lo in 0.51f64..0.99, d in 0.0f64..0.49) {
        let hi = (lo + d).min(1.0);
        let db = synthetic_db(seed, 0.15);
        let a = mine_regions(&db, "gmres", "gauss", lo).unwrap().cells();
        let b = mine_regions(&db, "gmres", "gauss", hi).unwrap().cells();
        prop_assert!(b.is_subset(&a));
    }
}

#[test]
fn mining_rejects_bad_confidence() {
    let db = synthetic_db(0, 0.0);
    assert!(matches!(mine_regions(&db, "gmres", "gauss", 0.5), Err(Error::InvalidArgument(_))));
}
