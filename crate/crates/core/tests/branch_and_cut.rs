mod common;

use common::*;
use gridsched::bc::{solve_minlp, BcOptions, BcStatus, GateOutcome, NodeStatus, SolveMode};
use proptest::prelude::*;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

#[test]
fn toys_match_enumeration() {
    for (name, net) in toys() {
        for (m, rho) in [(0.5, 40.0), (1.0, 50.0)] {
            let net = with_load(&net, m);
            let oracle = enumerate(&net, prices(rho), 1.0);
            let r = solve_minlp(&problem(&net, rho), &bc_options()).unwrap();
            match (oracle, &r.incumbent) {
                (Some((best, _)), Some(inc)) => {
                    assert_eq!(r.status, BcStatus::Optimal);
                    assert!(rel(inc.objective, best) < 1e-4, "{name} x{m}: {} vs {best}", inc.objective);
                }
                (None, None) => assert_eq!(r.status, BcStatus::Infeasible),
                (o, i) => panic!("{name} x{m}: oracle {o:?} vs incumbent {i:?}"),
            }
        }
    }
}

#[test]
fn infeasible_toy_is_reported() {
    let net = with_load(&toy_b(), 1.6);
    assert!(enumerate(&net, prices(75.0), 1.0).is_none());
    let r = solve_minlp(&problem(&net, 75.0), &bc_options()).unwrap();
    assert_eq!(r.status, BcStatus::Infeasible);
    assert!(r.incumbent.is_none());
}

#[test]
fn gate_and_workers_do_not_change_the_optimum() {
    for (name, net) in toys() {
        let p = problem(&net, 50.0);
        let base = solve_minlp(&p, &bc_options()).unwrap();
        let Some(b) = base.incumbent else { continue };
        for opts in [
            BcOptions { gate: false, ..bc_options() },
            BcOptions { cuts: false, ..bc_options() },
            BcOptions { heuristic: false, ..bc_options() },
            BcOptions { workers: 4, ..bc_options() },
        ] {
            let r = solve_minlp(&p, &opts).unwrap();
            let o = r.incumbent.expect("same problem stays feasible");
            assert!(rel(o.objective, b.objective) < 1e-6, "{name}: {} vs {}", o.objective, b.objective);
        }
    }
}

#[test]
fn node_report_is_consistent() {
    let net = toy_a();
    let r = solve_minlp(&problem(&net, 50.0), &bc_options()).unwrap();
    assert_eq!(r.nodes.len(), r.stats.nodes_opened);
    assert_eq!(r.nodes[0].parent, None);
    let count = |s: NodeStatus| r.nodes.iter().filter(|n| n.status == s).count();
    assert_eq!(count(NodeStatus::Branched), r.stats.branched);
    assert_eq!(count(NodeStatus::PrunedBound), r.stats.pruned_bound);
    assert_eq!(count(NodeStatus::PrunedInfeasible), r.stats.pruned_infeasible);
    for n in &r.nodes[1..] {
        let parent = &r.nodes[n.parent.unwrap()];
        assert_eq!(n.depth, parent.depth + 1);
        assert_eq!(parent.status, NodeStatus::Branched);
        for (c, p) in n.lower.iter().zip(&parent.lower) {
            assert!(c >= p);
        }
        for (c, p) in n.upper.iter().zip(&parent.upper) {
            assert!(c <= p);
        }
    }
    let json = serde_json::to_string(&r.nodes[0]).unwrap();
    assert!(json.contains("\"gate\":{\"outcome\""), "{json}");
}

#[test]
fn gate_off_never_prunes_by_lp() {
    let net = toy_e();
    let r = solve_minlp(&problem(&net, 50.0), &BcOptions { gate: false, ..bc_options() }).unwrap();
    assert_eq!(r.stats.lp_solves, 0);
    assert!(r.nodes.iter().all(|n| matches!(n.gate, GateOutcome::Skipped | GateOutcome::ParentBound)));
}

#[test]
fn budget_stops_the_search() {
    let net = toy_d();
    let r = solve_minlp(&problem(&net, 50.0), &BcOptions { node_budget: 1, heuristic: false, ..bc_options() }).unwrap();
    assert_eq!(r.stats.nodes_opened, 1);
    assert_eq!(r.status, BcStatus::BudgetExceeded);
    assert!(!r.optimal);
}

#[test]
fn lp_only_returns_integral_vertices() {
    for (_, net) in toys() {
        let r = solve_minlp(&problem(&net, 50.0), &BcOptions { mode: SolveMode::LpOnly, ..bc_options() }).unwrap();
        assert_eq!(r.stats.nlp_solves, 0);
        if let Some(i) = r.incumbent {
            assert!(i.controls.is_integral());
            assert_eq!(i.verified, verified_cost(&net, &prices(50.0), 1.0, &i.x, 1e-6).is_some());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn incumbents_are_integral_and_verified(m in 0.2f64..1.2, rho in 20.0f64..90.0) {
        let net = with_load(&toy_a(), m);
        let r = solve_minlp(&problem(&net, rho), &bc_options()).unwrap();
        if let Some(i) = r.incumbent {
            prop_assert!(i.controls.is_integral());
            prop_assert!(i.verified);
            let cost = verified_cost(&net, &prices(rho), 1.0, &i.x, 1e-6);
            prop_assert!(cost.is_some());
            prop_assert!(rel(cost.unwrap(), i.objective) < 1e-9);
        }
    }
}
