//! Solver properties: bounds, regularity, fixed points, monotone iterates and
//! closed forms on degenerate models.

use std::sync::Arc;

use poswitch::beliefgrid::NodeFunction;
use poswitch::bellman::{
    apply_first_jump_l, fixed_point_residual, iterate_first_jump, solve_finite, solve_infinite, stationary_noaction,
    value_noaction_u0, Horizon, SolverConfig, ValueSurface,
};
use poswitch::bundled;
use poswitch::filter::propagate_m;
use poswitch::model::config::parse_model;
use poswitch::model::{Belief, SwitchingModel};
use poswitch::strategy::{classify_regions, default_switch_tolerance, Action};

fn single_state(k: f64, rho: f64) -> SwitchingModel<f64> {
    parse_model(&format!(
        r#"
        states = ["only"]
        policies = ["a", "b"]
        Q = [[0.0]]
        lambda = [2.0]
        c = [[1.0, 0.5]]
        K = {k}
        rho = {rho}
        "#
    ))
    .unwrap()
}

fn onoff_surface() -> ValueSurface<f64> {
    let model = bundled::onoff::<f64>();
    solve_finite(1.0, &model, &SolverConfig::default().with_resolution(50).with_dt(1.0 / 100.0)).unwrap()
}

#[test]
fn single_state_closed_forms() {
    let rho = 0.5;
    let model = single_state(0.1, rho);
    let t = 2.0;
    let cfg = SolverConfig::default().with_dt(1.0 / 4000.0).with_resolution(1);
    let u0 = value_noaction_u0(t, &model, &cfg).unwrap();
    let pi = Belief::vertex(1, 0);
    let exact = |c: f64| c * (1.0 - (-rho * t).exp()) / rho;
    assert!((u0.value(t, &pi, 0) - exact(1.0)).abs() < 1e-8);
    assert!((u0.value(t, &pi, 1) - exact(0.5)).abs() < 1e-8);
    let u = solve_finite(t, &model, &cfg).unwrap();
    assert!((u.value(t, &pi, 0) - exact(1.0)).abs() < 1e-8);
    // from the worse policy, switch at once
    assert!((u.value(t, &pi, 1) - (exact(1.0) - 0.1)).abs() < 1e-8);
}

#[test]
fn prohibitive_switching_reduces_to_no_action() {
    let model = bundled::fed::<f64>();
    let p = model.params();
    let huge = 10.0 * model.cmax() * 1.0;
    let mut q = p.clone();
    q.switch_cost = poswitch::model::ModelParams::uniform_switch_cost(3, 3, huge);
    let model = SwitchingModel::validate(q).unwrap();
    let cfg = SolverConfig::default().with_resolution(12).with_dt(1.0 / 50.0);
    let u = solve_finite(1.0, &model, &cfg).unwrap();
    let u0 = value_noaction_u0(1.0, &model, &cfg).unwrap();
    for (a, b) in u.layers().iter().zip(u0.layers()) {
        assert!(a.sup_distance(b) < 1e-12);
    }
    let table = classify_regions(&u, default_switch_tolerance(&u));
    for n in 0..table.n_layers() {
        for a in 0..3 {
            assert!(!table.has_switching(n, a));
        }
    }
}

#[test]
fn value_dominates_no_action_and_respects_bounds() {
    let u = onoff_surface();
    let model = u.model().clone();
    let cfg = SolverConfig::default().with_resolution(50).with_dt(1.0 / 100.0);
    let u0 = value_noaction_u0(1.0, &model, &cfg).unwrap();
    let bound = model.cmax() * 1.0;
    for (a, b) in u.layers().iter().zip(u0.layers()) {
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!(x >= &(y - 1e-12));
            assert!(x.abs() <= bound + 1e-12);
        }
    }
}

#[test]
fn layers_are_lipschitz_in_the_horizon() {
    let u = onoff_surface();
    let c = u.model().cmax() * u.dt() + 1e-9;
    for w in u.layers().windows(2) {
        assert!(w[0].sup_distance(&w[1]) <= c);
    }
}

#[test]
fn layers_are_nearly_convex_in_the_belief() {
    let u = onoff_surface();
    let lat = u.lattice();
    let eps = 4.0 * u.model().cmax() * 1.0 / lat.resolution() as f64;
    for layer in u.layers() {
        for a in 0..2 {
            for i in 1..lat.len() - 1 {
                let mid = layer.at(i, a);
                let avg = 0.5 * (layer.at(i - 1, a) + layer.at(i + 1, a));
                assert!(mid <= avg + eps);
            }
        }
    }
}

#[test]
fn converged_surface_is_a_fixed_point() {
    let u = onoff_surface();
    let cfg = SolverConfig::default().with_resolution(50).with_dt(1.0 / 100.0);
    let r = fixed_point_residual(&u, &cfg).unwrap();
    assert!(r <= 1e-9 * u.model().cmax() * 1.0, "residual {r}");
}

#[test]
fn switch_nodes_are_consistent_with_values() {
    let u = onoff_surface();
    let model = u.model().clone();
    let table = classify_regions(&u, default_switch_tolerance(&u));
    let lat = u.lattice();
    for n in 0..table.n_layers() {
        for node in 0..lat.len() {
            for a in 0..2 {
                if let Action::Switch(b) = table.action(n, node, a) {
                    let pi = lat.node(node);
                    let k = model.cost_k(a, b, &Belief::new(pi.to_vec()).unwrap());
                    let row = u.layers()[n].row(node);
                    assert!((row[a] - (row[b] - k)).abs() <= 1e-9);
                }
            }
        }
    }
}

#[test]
fn first_jump_iterates_increase_to_the_value() {
    let model = bundled::onoff::<f64>();
    let cfg = SolverConfig::default().with_resolution(20).with_dt(1.0 / 40.0);
    let iters = iterate_first_jump(1.0, &model, &cfg, 30).unwrap();
    for w in iters.windows(2) {
        for (a, b) in w[1].layers().iter().zip(w[0].layers()) {
            for (x, y) in a.values().iter().zip(b.values()) {
                assert!(*x >= y - 1e-9);
            }
        }
    }
    let u = solve_finite(1.0, &model, &cfg).unwrap();
    let last = iters.last().unwrap();
    let gap = u.layers().iter().zip(last.layers()).map(|(a, b)| a.sup_distance(b)).fold(0.0, f64::max);
    assert!(gap < 1e-9, "gap {gap}");
}

#[test]
fn first_jump_with_zero_values_is_a_discounted_switch_cost() {
    let model = Arc::new(
        parse_model::<f64>(
            r#"
            states = ["x", "y"]
            policies = ["1", "2"]
            Q = [[-1.0, 1.0], [2.0, -2.0]]
            lambda = [1.0, 3.0]
            c = [[0.0, 0.0], [0.0, 0.0]]
            K = 0.3
            rho = 0.7
            "#,
        )
        .unwrap(),
    );
    let lat = Arc::new(poswitch::beliefgrid::SimplexLattice::build(2, 10).unwrap());
    let zero = NodeFunction::zeros(lat, 2);
    let dt = 0.05;
    let s = ValueSurface::from_layers(model.clone(), dt, Horizon::Finite(dt), vec![zero.clone(), zero]).unwrap();
    let pi = Belief::new(vec![0.35, 0.65]).unwrap();
    let cand = apply_first_jump_l(&s, 1, &pi, 0, None).unwrap();
    let surv = propagate_m(dt, &pi, &model).unwrap().s;
    assert_eq!(cand.switch_at.len(), 1);
    assert!((cand.switch_at[0] - (-0.3 * surv * (-0.7 * dt).exp())).abs() < 1e-14);
    assert_eq!(cand.hold, 0.0);
}

#[test]
fn stationary_constant_benefit() {
    let model = single_state(1e3, 0.5);
    let cfg = SolverConfig::default().with_resolution(1);
    let v = solve_infinite(&model, &cfg).unwrap();
    let tol = cfg.fix_tol_for(&model).unwrap();
    let pi = Belief::vertex(1, 0);
    assert!((v.value(0.0, &pi, 0) - 2.0).abs() <= tol + 1e-3);
    assert!((v.value(0.0, &pi, 1) - 1.0).abs() <= tol + 1e-3);
}

#[test]
fn stationary_iterates_increase_and_dominate_no_action() {
    let model = bundled::callcenter::<f64>();
    let cfg = SolverConfig::default().with_resolution(12);
    let v = solve_infinite(&model, &cfg).unwrap();
    assert!(v.stats.min_increment >= -1e-9, "{}", v.stats.min_increment);
    let w0 = stationary_noaction(&model, &cfg).unwrap();
    for (x, y) in v.top().values().iter().zip(w0.top().values()) {
        assert!(*x >= y - 1e-9);
    }
    let bound = model.cmax() / model.discount();
    assert!(v.top().values().iter().all(|x| x.abs() <= bound));
}

#[test]
fn surface_csv_round_trip() {
    let u = onoff_surface();
    let mut buf = Vec::new();
    u.write_csv(&mut buf).unwrap();
    let back = ValueSurface::read_csv(u.model().clone(), 50, u.dt(), u.horizon(), buf.as_slice()).unwrap();
    for (a, b) in u.layers().iter().zip(back.layers()) {
        assert_eq!(a.values(), b.values());
    }
}

#[test]
fn thread_count_does_not_change_values() {
    let model = bundled::fed::<f64>();
    let base = SolverConfig::default().with_resolution(10).with_dt(1.0 / 20.0);
    let one = solve_finite(1.0, &model, &base.clone().with_threads(1)).unwrap();
    let three = solve_finite(1.0, &model, &base.with_threads(3)).unwrap();
    for (a, b) in one.layers().iter().zip(three.layers()) {
        assert_eq!(a.values(), b.values());
    }
}
