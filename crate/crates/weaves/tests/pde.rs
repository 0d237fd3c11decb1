use std::collections::BTreeSet;

use weaves::apps::pde::{install_pde, read_solution, solve_mediated_pde, solve_dirichlet, unit_split, MediatorConfig, Source};
use weaves::AppError;
use weaves_core::grid::{Grid, GridConfig, GridEvent, GridEventKind};
use weaves_core::NodeId;

fn max_error(sol: &weaves::apps::pde::PdeSolution, n: usize, exact: impl Fn(f64) -> f64) -> f64 {
    let h = 0.5 / (n - 1) as f64;
    let mut e: f64 = 0.0;
    for i in 0..n {
        e = e.max((sol.left[i] - exact(i as f64 * h)).abs());
        e = e.max((sol.right[i] - exact(0.5 + i as f64 * h)).abs());
    }
    e
}

#[test]
fn dirichlet_solver_is_exact_for_quadratics() {
    let u = solve_dirichlet(0.0, 1.0, 11, 0.0, 0.0, |_| 1.0);
    for (i, v) in u.iter().enumerate() {
        let x = i as f64 / 10.0;
        assert!((v - x * (1.0 - x) / 2.0).abs() < 1e-14);
    }
}

#[test]
fn laplace_interface_is_one_half() {
    let (l, r) = unit_split(21, Source::Zero, 0.0, 1.0);
    let s = solve_mediated_pde(&l, &r, &MediatorConfig::default()).unwrap();
    assert!((s.interface - 0.5).abs() < 1e-6, "{}", s.interface);
    assert!(max_error(&s, 21, |x| x) < 1e-6);
}

#[test]
fn unit_source_interface_is_one_eighth() {
    let (l, r) = unit_split(21, Source::Unit, 0.0, 0.0);
    let s = solve_mediated_pde(&l, &r, &MediatorConfig::default()).unwrap();
    assert!((s.interface - 0.125).abs() < 1e-6, "{}", s.interface);
}

#[test]
fn symmetric_guess_converges_in_one_iteration() {
    let (l, r) = unit_split(11, Source::Zero, 2.0, 2.0);
    let cfg = MediatorConfig {
        initial: 2.0,
        ..Default::default()
    };
    let s = solve_mediated_pde(&l, &r, &cfg).unwrap();
    assert_eq!(s.iterations, 1);
    assert!((s.interface - 2.0).abs() < 1e-12);
}

#[test]
fn error_is_second_order() {
    let exact = |x: f64| (std::f64::consts::PI * x).sin();
    let mut errs = Vec::new();
    for n in [41, 81, 161] {
        let (l, r) = unit_split(n, Source::SineMode, 0.0, 0.0);
        let s = solve_mediated_pde(&l, &r, &MediatorConfig::default()).unwrap();
        errs.push(max_error(&s, n, exact));
    }
    for w in errs.windows(2) {
        let ratio = w[0] / w[1];
        assert!((ratio - 4.0).abs() <= 0.8, "ratio {ratio}");
    }
}

#[test]
fn iteration_cap_reports_no_convergence() {
    let (l, r) = unit_split(11, Source::Zero, 0.0, 1.0);
    let cfg = MediatorConfig {
        max_iterations: 3,
        ..Default::default()
    };
    assert!(matches!(
        solve_mediated_pde(&l, &r, &cfg),
        Err(AppError::NoConvergence { iterations: 3 })
    ));
}

fn pde_grid(migrate_at: Option<u64>) -> Grid {
    let mut g = Grid::new(GridConfig {
        steps_per_tick: 3,
        ..Default::default()
    })
    .unwrap();
    let (l, r) = unit_split(31, Source::SineMode, 0.0, 0.0);
    let t = g.add_node(NodeId(0)).unwrap();
    t.trace_mut().set_enabled(false);
    let h = install_pde(t, &l, &r, &MediatorConfig::default()).unwrap();
    let dst = g.add_node(NodeId(1)).unwrap();
    dst.register_module(weaves::apps::pde::mediator_module()).unwrap();
    dst.register_module(weaves::apps::pde::solver_module()).unwrap();
    if let Some(tick) = migrate_at {
        g.schedule(GridEvent {
            tick,
            kind: GridEventKind::Migrate {
                beads: BTreeSet::from([h.left, h.right, h.mediator]),
                from: NodeId(0),
                to: NodeId(1),
            },
        });
    }
    g
}

#[test]
fn migration_mid_run_is_invisible() {
    let mut base = pde_grid(None);
    assert!(base.run(100_000).unwrap());
    let expected = read_solution(base.node(NodeId(0)).unwrap()).unwrap();
    for tick in [1, 7, 20, 33] {
        let mut g = pde_grid(Some(tick));
        assert!(g.run(100_000).unwrap());
        assert_eq!(g.node(NodeId(0)).unwrap().beads().count(), 0);
        let got = read_solution(g.node(NodeId(1)).unwrap()).unwrap();
        assert_eq!(got.interface.to_bits(), expected.interface.to_bits());
        assert_eq!(got.iterations, expected.iterations);
        assert_eq!(got.left, expected.left);
        assert_eq!(got.right, expected.right);
    }
}
