//! Invariant checks run by `poswitch check` at reduced scale.

use poswitch::beliefgrid::SimplexLattice;
use poswitch::bellman::{fixed_point_residual, solve_finite, value_noaction_u0, SolverConfig, ValueSurface};
use poswitch::filter::{flow_x, jump_update};
use poswitch::model::{Belief, SwitchingModel};
use poswitch::simkit::rules::NeverSwitch;
use poswitch::simkit::{evaluate_strategy, filter_consistency_check};

type Model = SwitchingModel<f64>;

const HORIZON: f64 = 1.0;
const DT: f64 = 1.0 / 100.0;
/// Deviation allowed in Monte Carlo checks, in standard errors.
const Z_MAX: f64 = 4.0;

#[derive(Debug, Clone)]
pub struct Outcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: &'static str, passed: bool, detail: String) -> Outcome {
    Outcome { name, passed, detail }
}

fn failed(name: &'static str, e: impl std::fmt::Display) -> Outcome {
    outcome(name, false, format!("error: {e}"))
}

/// Probe beliefs: the nodes of a coarse lattice.
fn probes(m: usize) -> Vec<Belief<f64>> {
    let n = if m <= 2 { 8 } else { 4 };
    let lat = SimplexLattice::<f64>::build(m, n).expect("small lattice");
    (0..lat.len()).map(|i| lat.node_belief(i)).collect()
}

fn grid_for(m: usize) -> usize {
    match m {
        1 => 1,
        2 => 40,
        _ => 12,
    }
}

pub fn run_all(model: &Model, paths: usize, seed: u64) -> Vec<Outcome> {
    let mut out = vec![semigroup(model), normalization(model)];
    let cfg = SolverConfig::default().with_resolution(grid_for(model.n_states())).with_dt(DT);
    let solved = solve_finite(HORIZON, model, &cfg).and_then(|u| Ok((u, value_noaction_u0(HORIZON, model, &cfg)?)));
    match solved {
        Ok((u, u0)) => {
            out.push(bounds(model, &u, &u0));
            out.push(lipschitz(model, &u));
            out.push(convexity(model, &u));
            out.push(fixed_point(model, &u, &cfg));
            out.push(mc_no_action(model, &u0, paths, seed));
            if model.n_states() == 1 {
                out.push(degenerate_value(model, &u));
            }
        }
        Err(e) => out.push(failed("solve", e)),
    }
    out.push(mc_filter(model, paths, seed));
    if model.n_states() == 1 {
        out.push(degenerate_filter(model));
    }
    out
}

fn semigroup(model: &Model) -> Outcome {
    let times = [0.05, 0.4, 1.0, 1.7];
    let mut worst = 0.0f64;
    for pi in probes(model.n_states()) {
        for &t in &times {
            for &u in &times {
                let r = (|| {
                    let whole = flow_x(t + u, &pi, model)?;
                    let split = flow_x(u, &flow_x(t, &pi, model)?, model)?;
                    Ok::<f64, poswitch::filter::FilterError>(whole.dist_inf(&split))
                })();
                match r {
                    Ok(d) => worst = worst.max(d),
                    Err(e) => return failed("semigroup", e),
                }
            }
        }
    }
    outcome("semigroup", worst < 1e-8, format!("max |x(t+u) - x(u, x(t))| = {worst:.2e}"))
}

fn normalization(model: &Model) -> Outcome {
    let mut worst = 0.0f64;
    let mut negative = false;
    for pi in probes(model.n_states()) {
        let mut check = |b: &Belief<f64>| {
            let s: f64 = b.as_slice().iter().sum();
            worst = worst.max((s - 1.0).abs());
            negative |= b.as_slice().iter().any(|&x| x < 0.0);
        };
        match flow_x(0.7, &pi, model) {
            Ok(b) => check(&b),
            Err(e) => return failed("normalization", e),
        }
        for mark in 0..model.n_marks() {
            // a mark may be impossible at a vertex; that is not a failure
            if let Ok(b) = jump_update(&pi, mark, model) {
                check(&b);
            }
        }
    }
    outcome(
        "normalization",
        worst < 1e-12 && !negative,
        format!("max |sum - 1| = {worst:.2e}{}", if negative { ", negative entries" } else { "" }),
    )
}

fn bounds(model: &Model, u: &ValueSurface<f64>, u0: &ValueSurface<f64>) -> Outcome {
    let bound = model.value_bound(Some(HORIZON)) + 1e-12;
    let mut over = 0.0f64;
    let mut below_u0 = 0.0f64;
    for (a, b) in u.layers().iter().zip(u0.layers()) {
        for (x, y) in a.values().iter().zip(b.values()) {
            over = over.max(x.abs() - bound);
            below_u0 = below_u0.max(y - x);
        }
    }
    outcome(
        "bounds",
        over <= 0.0 && below_u0 <= 1e-12 * bound.max(1.0),
        format!("|U| <= {bound:.6} (excess {:.2e}); max U0 - U = {below_u0:.2e}", over.max(0.0)),
    )
}

fn lipschitz(model: &Model, u: &ValueSurface<f64>) -> Outcome {
    let c = model.cmax() * u.dt() + 1e-9;
    let worst = u.layers().windows(2).map(|w| w[0].sup_distance(&w[1])).fold(0.0, f64::max);
    outcome("lipschitz", worst <= c, format!("max layer change {worst:.3e} vs cmax dt = {c:.3e}"))
}

fn convexity(model: &Model, u: &ValueSurface<f64>) -> Outcome {
    let lat = u.lattice();
    let m = lat.dim();
    let eps = 4.0 * model.cmax() * HORIZON / lat.resolution() as f64;
    let mut worst = f64::NEG_INFINITY;
    let mut k = vec![0u32; m];
    for layer in u.layers() {
        for node in 0..lat.len() {
            k.copy_from_slice(lat.tuple(node));
            for p in 0..m {
                for q in p + 1..m {
                    if k[p] == 0 || k[q] == 0 {
                        continue;
                    }
                    let mut lo = k.clone();
                    lo[p] -= 1;
                    lo[q] += 1;
                    let mut hi = k.clone();
                    hi[p] += 1;
                    hi[q] -= 1;
                    let (l, h) = (lat.index_of(&lo), lat.index_of(&hi));
                    for a in 0..model.n_policies() {
                        let gap = layer.at(node, a) - 0.5 * (layer.at(l, a) + layer.at(h, a));
                        worst = worst.max(gap);
                    }
                }
            }
        }
    }
    if worst == f64::NEG_INFINITY {
        return outcome("convexity", true, "no interior triples".into());
    }
    outcome("convexity", worst <= eps, format!("max midpoint excess {worst:.3e} vs {eps:.3e}"))
}

fn fixed_point(model: &Model, u: &ValueSurface<f64>, cfg: &SolverConfig<f64>) -> Outcome {
    let tol = 1e-9 * (model.cmax() * HORIZON).max(1.0);
    match fixed_point_residual(u, cfg) {
        Ok(r) => outcome("fixed-point", r <= tol, format!("residual {r:.2e} vs {tol:.2e}")),
        Err(e) => failed("fixed-point", e),
    }
}

fn mc_filter(model: &Model, paths: usize, seed: u64) -> Outcome {
    let pi0 = Belief::uniform(model.n_states());
    match filter_consistency_check(model, &pi0, HORIZON, paths, seed) {
        Ok(r) => {
            let z = r.max_z();
            outcome("mc-filter", z < Z_MAX, format!("max deviation {:.2e} = {z:.2} s.e.", r.max_deviation()))
        }
        Err(e) => failed("mc-filter", e),
    }
}

fn mc_no_action(model: &Model, u0: &ValueSurface<f64>, paths: usize, seed: u64) -> Outcome {
    let pi0 = Belief::uniform(model.n_states());
    let quad = 1e-3 * model.cmax().max(1.0);
    let mut worst = 0.0f64;
    for a in 0..model.n_policies() {
        let est = match evaluate_strategy(model, &NeverSwitch, &pi0, a, HORIZON, paths, seed) {
            Ok(e) => e,
            Err(e) => return failed("mc-no-action", e),
        };
        let target = u0.value(HORIZON, &pi0, a);
        let excess = (est.mean - target).abs() - quad;
        let z = if est.std_error > 0.0 {
            excess.max(0.0) / est.std_error
        } else if excess > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        worst = worst.max(z);
    }
    outcome("mc-no-action", worst < Z_MAX, format!("never-switch estimate vs U0: {worst:.2} s.e. beyond {quad:.1e}"))
}

/// One state: the belief never moves.
fn degenerate_filter(model: &Model) -> Outcome {
    let pi = Belief::vertex(1, 0);
    let mut worst = 0.0f64;
    for t in [0.1, 1.0, 5.0] {
        match flow_x(t, &pi, model) {
            Ok(b) => worst = worst.max(b.dist_inf(&pi)),
            Err(e) => return failed("degenerate-filter", e),
        }
    }
    for mark in 0..model.n_marks() {
        if let Ok(b) = jump_update(&pi, mark, model) {
            worst = worst.max(b.dist_inf(&pi));
        }
    }
    outcome("degenerate-filter", worst == 0.0, format!("max belief movement {worst:.1e}"))
}

/// One state: switch once at time zero to the best policy, then hold.
fn degenerate_value(model: &Model, u: &ValueSurface<f64>) -> Outcome {
    let rho = model.discount();
    let annuity = if rho > 0.0 { (1.0 - (-rho * HORIZON).exp()) / rho } else { HORIZON };
    let pi = Belief::vertex(1, 0);
    let hold: Vec<f64> = (0..model.n_policies()).map(|a| model.effective_rate(0, a) * annuity).collect();
    let tol = 1e-3 * (model.cmax() * HORIZON).max(1.0);
    let mut worst = 0.0f64;
    for a in 0..model.n_policies() {
        let exact =
            (0..model.n_policies()).map(|b| hold[b] - model.cost_k(a, b, &pi)).fold(f64::NEG_INFINITY, f64::max);
        worst = worst.max((u.value(HORIZON, &pi, a) - exact).abs());
    }
    outcome("degenerate-value", worst <= tol, format!("max |U - closed form| = {worst:.2e}"))
}
