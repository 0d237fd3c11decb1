use weaves::apps::quad::*;

const BUDGET: u64 = 2_000_000;

#[test]
fn linear_integrand_is_exact_on_one_interval() {
    for rule in [QuadRule::Midpoint, QuadRule::Trapezoid, QuadRule::Simpson, QuadRule::Gauss5] {
        let p = QuadratureProblem::new("x", |x| x, 0.0, 1.0, 1e-10);
        let out = integrate_fixed(&p, rule, BUDGET).unwrap();
        assert_eq!(out.intervals, 1, "{rule}");
        assert!((out.value - 0.5).abs() < 1e-15, "{rule}: {}", out.value);
    }
}

#[test]
fn power_family_meets_tolerance_with_every_robust_rule() {
    let tol = 1e-6;
    for p in QuadratureProblem::power_family(tol) {
        let alpha: f64 = p.name.trim_start_matches("x^-").parse().unwrap();
        let exact = 1.0 / (1.0 - alpha);
        for rule in [QuadRule::Midpoint, QuadRule::Gauss5] {
            let out = integrate_fixed(&p, rule, BUDGET).unwrap();
            assert!((out.value - exact).abs() <= tol, "{} {rule}: {} vs {exact}", p.name, out.value);
        }
    }
}

#[test]
fn fragile_rule_alone_cannot_finish_singular_problem() {
    let p = QuadratureProblem::power(0.3, 1e-6);
    assert!(integrate_fixed(&p, QuadRule::Fragile3, BUDGET).is_err());
}

#[test]
fn evaluation_count_matches_integrand_calls() {
    let p = QuadratureProblem::power(0.25, 1e-6);
    let before = p.evaluations();
    let out = integrate_fixed(&p, QuadRule::Gauss5, BUDGET).unwrap();
    assert_eq!(out.evaluations, p.evaluations() - before);
    assert_eq!(out.trace.iter().map(|t| t.evaluations).sum::<u64>(), out.evaluations);
}

#[test]
fn budget_is_enforced() {
    let p = QuadratureProblem::power(0.5, 1e-10);
    assert!(matches!(
        integrate_fixed(&p, QuadRule::Midpoint, 500),
        Err(weaves::AppError::BudgetExceeded { budget: 500 })
    ));
}

#[test]
fn failed_choices_are_never_repeated_on_the_same_interval() {
    let problems = QuadratureProblem::power_family(1e-6);
    let mut policy = weaves_core_policy(7);
    let mut saw_failure = false;
    for p in &problems {
        let out = integrate_adaptive_quadrature(p, &QuadRule::ALL, &mut policy, BUDGET);
        let Ok(out) = out else { continue };
        saw_failure |= out.failures() > 0;
        for (i, t) in out.trace.iter().enumerate() {
            if t.outcome == AttemptOutcome::Failed {
                for later in out.trace[i + 1..].iter().take_while(|l| l.interval == t.interval) {
                    assert_ne!(later.action, t.action);
                }
            }
        }
        let exact = {
            let alpha: f64 = p.name.trim_start_matches("x^-").parse().unwrap();
            1.0 / (1.0 - alpha)
        };
        assert!((out.value - exact).abs() <= p.tolerance);
    }
    assert!(saw_failure);
}

fn weaves_core_policy(seed: u64) -> weaves_core::recommender::QPolicy {
    let mut p = weaves_core::recommender::QPolicy::new(Default::default(), seed);
    p.set_epsilon(0.3);
    p
}

#[test]
fn trained_policy_is_no_worse_than_best_fixed_rule() {
    let problems = QuadratureProblem::power_family(1e-7);
    let mean = |f: &mut dyn FnMut(&QuadratureProblem) -> u64| problems.iter().map(|p| f(p) as f64).sum::<f64>() / problems.len() as f64;
    let mut best = f64::INFINITY;
    for rule in QuadRule::ALL {
        if problems.iter().all(|p| integrate_fixed(p, rule, BUDGET).is_ok()) {
            let m = mean(&mut |p| integrate_fixed(p, rule, BUDGET).unwrap().evaluations);
            best = best.min(m);
        }
    }
    let (mut policy, report) = train_quadrature_policy(&problems, &QuadRule::ALL, 200, 100, 11, BUDGET).unwrap();
    policy.set_epsilon(0.0);
    let trained = mean(&mut |p| integrate_adaptive_quadrature(p, &QuadRule::ALL, &mut policy, BUDGET).unwrap().evaluations);
    eprintln!("trained {trained} best fixed {best}");
    assert!(trained <= best, "trained {trained} > best fixed {best}");

    let avg = |c: &[Option<u64>]| {
        let v: Vec<f64> = c.iter().flatten().map(|x| *x as f64).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let (pre, post) = report.costs.split_at(report.explore_episodes);
    assert!(avg(post) <= avg(pre));
}
