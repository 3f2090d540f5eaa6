//! Finite- and infinite-horizon solvers built on [`FlowRow`] tables.

use std::sync::Arc;

use rayon::prelude::*;

use super::{flow_tables, with_threads, BellmanError, FlowRow, Horizon, SolveStats, SolverConfig, ValueSurface};
use crate::beliefgrid::{NodeFunction, SimplexLattice};
use crate::filter::FlowCache;
use crate::model::{Belief, SwitchingModel};
use crate::Scalar;

/// Which deadlines the sweep may choose.
#[derive(Clone, Copy, PartialEq)]
enum Mode {
    /// Keep the policy throughout.
    Hold,
    /// Switch at any mesh point or hold to the end.
    Switch,
}

/// Best candidate over deadlines `u_1..u_steps`, excluding the `u = 0`
/// quadrature endpoint (the caller adds `w_start * f_0`).
fn sweep<'a, T: Scalar>(
    row: &FlowRow<T>,
    steps: usize,
    layer_at: impl Fn(usize) -> &'a NodeFunction<T>,
    mode: Mode,
    out: &mut [T],
) {
    let na = out.len();
    let mut cum = vec![T::zero(); na];
    let mut f = vec![T::zero(); na];
    let mut wx = vec![T::zero(); na];
    out.iter_mut().for_each(|v| *v = T::neg_infinity());
    for k in 1..=steps {
        let w = layer_at(k);
        row.integrand(k, w, &mut f);
        let last = k == steps;
        if mode == Mode::Switch || last {
            row.at_flow(k, w, &mut wx);
            let d = row.disc(k);
            let end = row.w_end(k);
            for a in 0..na {
                let q = cum[a] + end * f[a];
                let tail = match (mode, last) {
                    (Mode::Hold, _) => wx[a],
                    (Mode::Switch, false) => row.intervene(k, a, &wx).0,
                    (Mode::Switch, true) => wx[a].max(row.intervene(k, a, &wx).0),
                };
                let cand = q + d * tail;
                if cand > out[a] {
                    out[a] = cand;
                }
            }
        }
        if !last {
            let inner = row.w_inner(k);
            for a in 0..na {
                cum[a] += inner * f[a];
            }
        }
    }
}

/// One application of the layer map: `max(base + w_start f_0(cur), M cur)`.
fn close_layer<T: Scalar>(rows: &[FlowRow<T>], base: &[T], cur: &NodeFunction<T>, switching: bool, next: &mut [T]) {
    let na = cur.n_policies();
    next.par_chunks_mut(na).enumerate().for_each(|(node, out)| {
        let row = &rows[node];
        row.integrand(0, cur, out);
        let own = cur.row(node);
        for a in 0..na {
            let mut v = base[node * na + a] + row.w_start() * out[a];
            if switching {
                v = v.max(row.intervene(0, a, own).0);
            }
            out[a] = v;
        }
    });
}

/// Solves a layer's self-referential equation by Jacobi iteration from `start`.
fn fixed_point<T: Scalar>(
    rows: &[FlowRow<T>],
    base: &[T],
    start: &NodeFunction<T>,
    switching: bool,
    tol: T,
    cap: usize,
) -> Result<(NodeFunction<T>, usize), BellmanError> {
    let mut cur = start.clone();
    let mut next = cur.clone();
    for sweep in 1..=cap {
        close_layer(rows, base, &cur, switching, next.values_mut());
        let change = cur.sup_distance(&next);
        std::mem::swap(&mut cur, &mut next);
        if change <= tol {
            return Ok((cur, sweep));
        }
        if sweep == cap {
            return Err(BellmanError::MaxIterations { iterations: cap, change: change.as_f64() });
        }
    }
    unreachable!()
}

fn layer_tol<T: Scalar>(scale: T) -> T {
    T::epsilon() * T::of(64.0) * scale.max(T::one())
}

struct Prepared<T> {
    model: Arc<SwitchingModel<T>>,
    lattice: Arc<SimplexLattice<T>>,
    rows: Vec<FlowRow<T>>,
    steps: usize,
    dt: T,
}

fn prepare<T: Scalar>(
    model: &SwitchingModel<T>,
    horizon: T,
    config: &SolverConfig<T>,
) -> Result<Prepared<T>, BellmanError> {
    let (steps, dt) = config.mesh(horizon)?;
    let lattice = Arc::new(SimplexLattice::build(model.n_states(), config.resolution_for(model.n_states()))?);
    let rows = flow_tables(model, &lattice, dt, steps);
    Ok(Prepared { model: Arc::new(model.clone()), lattice, rows, steps, dt })
}

fn layered<T: Scalar>(
    p: &Prepared<T>,
    config: &SolverConfig<T>,
    mode: Mode,
    horizon: T,
) -> Result<ValueSurface<T>, BellmanError> {
    let na = p.model.n_policies();
    let tol = layer_tol(p.model.value_bound(Some(horizon)));
    let mut layers = vec![NodeFunction::zeros(p.lattice.clone(), na)];
    let mut stats = SolveStats::default();
    let mut base = vec![T::zero(); p.lattice.len() * na];
    for n in 1..=p.steps {
        base.par_chunks_mut(na).enumerate().for_each(|(node, out)| {
            sweep(&p.rows[node], n, |k| &layers[n - k], mode, out);
        });
        let (layer, sweeps) = fixed_point(&p.rows, &base, &layers[n - 1], mode == Mode::Switch, tol, config.sweep_cap)?;
        stats.max_sweeps = stats.max_sweeps.max(sweeps);
        layers.push(layer);
    }
    stats.iterations = p.steps;
    let mut s = ValueSurface::from_layers(p.model.clone(), p.dt, Horizon::Finite(horizon), layers)?;
    s.stats = stats;
    Ok(s)
}

/// Finite-horizon value `U(n dt, ., .)` for every layer `n = 0..=T/dt`.
pub fn solve_finite<T: Scalar>(
    horizon: T,
    model: &SwitchingModel<T>,
    config: &SolverConfig<T>,
) -> Result<ValueSurface<T>, BellmanError> {
    with_threads(config.threads, || {
        let p = prepare(model, horizon, config)?;
        layered(&p, config, Mode::Switch, horizon)
    })
}

/// Value of never switching, `U_0(n dt, ., a)`, on the same mesh.
pub fn value_noaction_u0<T: Scalar>(
    horizon: T,
    model: &SwitchingModel<T>,
    config: &SolverConfig<T>,
) -> Result<ValueSurface<T>, BellmanError> {
    with_threads(config.threads, || {
        let p = prepare(model, horizon, config)?;
        layered(&p, config, Mode::Hold, horizon)
    })
}

/// Sup-norm change when every layer of `surface` is recomputed once from the
/// stored layers (all layers below it and itself for the `t = 0` terms).
pub fn fixed_point_residual<T: Scalar>(surface: &ValueSurface<T>, config: &SolverConfig<T>) -> Result<T, BellmanError> {
    if surface.is_infinite() {
        return stationary_residual(surface, config);
    }
    with_threads(config.threads, || {
        let model = surface.model();
        let lattice = surface.lattice();
        let steps = surface.n_layers() - 1;
        let rows = flow_tables(model, lattice, surface.dt(), steps);
        let na = model.n_policies();
        let layers = surface.layers();
        let mut worst = T::zero();
        let mut base = vec![T::zero(); lattice.len() * na];
        let mut next = vec![T::zero(); lattice.len() * na];
        for n in 1..=steps {
            base.par_chunks_mut(na).enumerate().for_each(|(node, out)| {
                sweep(&rows[node], n, |k| &layers[n - k], Mode::Switch, out);
            });
            close_layer(&rows, &base, &layers[n], true, &mut next);
            let diff = next.iter().zip(layers[n].values()).fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()));
            worst = worst.max(diff);
        }
        Ok(worst)
    })
}

/// Candidate values of the first-jump operator at an arbitrary belief.
#[derive(Debug, Clone, PartialEq)]
pub struct FirstJumpCandidates<T> {
    /// `switch_at[k - 1]`: follow the flow with `a`, then switch optimally at
    /// `u_k` if no arrival occurred (`k = 1..=n`, including maturity).
    pub switch_at: Vec<T>,
    /// Keep `a` until the end of the window.
    pub hold: T,
}

impl<T: Scalar> FirstJumpCandidates<T> {
    /// Operator value over positive deadlines.
    pub fn value(&self) -> T {
        self.switch_at.iter().copied().fold(self.hold, T::max)
    }
}

/// Evaluates the first-jump operator at layer `n` of `surface` for belief `pi`
/// and policy `a`, over deadlines `dt, 2 dt, .., n dt`.
///
/// The `u = 0` endpoint of the running integral uses `current` when given and
/// the layer below otherwise.
pub fn apply_first_jump_l<T: Scalar>(
    surface: &ValueSurface<T>,
    n: usize,
    pi: &Belief<T>,
    a: usize,
    current: Option<&NodeFunction<T>>,
) -> Result<FirstJumpCandidates<T>, BellmanError> {
    if n == 0 || n >= surface.n_layers() + usize::from(current.is_some()) {
        return Err(BellmanError::MissingLayer { layer: n });
    }
    let model = surface.model();
    let layers = surface.layers();
    let cache = FlowCache::new(model, surface.dt());
    let row = FlowRow::build(model, surface.lattice(), &cache, pi.as_slice(), n);
    let zero_layer = current.unwrap_or(&layers[n - 1]);
    let na = model.n_policies();
    let mut f = vec![T::zero(); na];
    let mut wx = vec![T::zero(); na];
    row.integrand(0, zero_layer, &mut f);
    let mut cum = row.w_start() * f[a];
    let mut switch_at = Vec::with_capacity(n);
    let mut hold = T::zero();
    for k in 1..=n {
        let w = &layers[n - k];
        row.integrand(k, w, &mut f);
        row.at_flow(k, w, &mut wx);
        let q = cum + row.w_end(k) * f[a];
        switch_at.push(q + row.disc(k) * row.intervene(k, a, &wx).0);
        if k == n {
            hold = q + row.disc(k) * wx[a];
        } else {
            cum += row.w_inner(k) * f[a];
        }
    }
    Ok(FirstJumpCandidates { switch_at, hold })
}

/// Monotone approximation `W_0 = U_0`, `W_{j+1} = L W_j` on a finite horizon.
/// Every iterate treats all layers of the previous one as given, including the
/// immediate switch and the `u = 0` endpoint. Returns `W_0..=W_iterations`.
pub fn iterate_first_jump<T: Scalar>(
    horizon: T,
    model: &SwitchingModel<T>,
    config: &SolverConfig<T>,
    iterations: usize,
) -> Result<Vec<ValueSurface<T>>, BellmanError> {
    with_threads(config.threads, || {
        let p = prepare(model, horizon, config)?;
        let na = model.n_policies();
        let mut out = vec![layered(&p, config, Mode::Hold, horizon)?];
        for _ in 0..iterations {
            let prev = out.last().unwrap().layers();
            let mut layers = vec![NodeFunction::zeros(p.lattice.clone(), na)];
            let mut base = vec![T::zero(); p.lattice.len() * na];
            for n in 1..=p.steps {
                base.par_chunks_mut(na).enumerate().for_each(|(node, o)| {
                    sweep(&p.rows[node], n, |k| &prev[n - k], Mode::Switch, o);
                });
                let mut next = NodeFunction::zeros(p.lattice.clone(), na);
                close_layer(&p.rows, &base, &prev[n], true, next.values_mut());
                layers.push(next);
            }
            out.push(ValueSurface::from_layers(p.model.clone(), p.dt, Horizon::Finite(horizon), layers)?);
        }
        Ok(out)
    })
}

struct Stationary<T> {
    model: Arc<SwitchingModel<T>>,
    lattice: Arc<SimplexLattice<T>>,
    rows: Vec<FlowRow<T>>,
    steps: usize,
    dt: T,
}

fn prepare_stationary<T: Scalar>(
    model: &SwitchingModel<T>,
    config: &SolverConfig<T>,
) -> Result<Stationary<T>, BellmanError> {
    let t_eff = config.effective_horizon(model)?;
    let sub = SolverConfig { dt: Some(config.dt.unwrap_or(t_eff / T::of(400.0))), ..config.clone() };
    let (steps, dt) = sub.mesh(t_eff)?;
    let lattice = Arc::new(SimplexLattice::build(model.n_states(), config.resolution_for(model.n_states()))?);
    let rows = flow_tables(model, &lattice, dt, steps);
    Ok(Stationary { model: Arc::new(model.clone()), lattice, rows, steps, dt })
}

/// One application of the stationary operator to `w`.
fn stationary_step<T: Scalar>(s: &Stationary<T>, w: &NodeFunction<T>, mode: Mode) -> NodeFunction<T> {
    let na = w.n_policies();
    let mut base = vec![T::zero(); s.lattice.len() * na];
    base.par_chunks_mut(na).enumerate().for_each(|(node, out)| {
        sweep(&s.rows[node], s.steps, |_| w, mode, out);
    });
    let mut next = w.clone();
    close_layer(&s.rows, &base, w, mode == Mode::Switch, next.values_mut());
    next
}

fn noaction_fixed_point<T: Scalar>(
    s: &Stationary<T>,
    config: &SolverConfig<T>,
) -> Result<NodeFunction<T>, BellmanError> {
    let tol = layer_tol(s.model.value_bound(None));
    let mut w = NodeFunction::zeros(s.lattice.clone(), s.model.n_policies());
    let mut change = T::infinity();
    for _ in 0..config.max_iterations {
        let next = stationary_step(s, &w, Mode::Hold);
        change = next.sup_distance(&w);
        w = next;
        if change <= tol {
            return Ok(w);
        }
    }
    Err(BellmanError::MaxIterations { iterations: config.max_iterations, change: change.as_f64() })
}

/// Infinite-horizon value of never switching, on a single stationary layer.
pub fn stationary_noaction<T: Scalar>(
    model: &SwitchingModel<T>,
    config: &SolverConfig<T>,
) -> Result<ValueSurface<T>, BellmanError> {
    with_threads(config.threads, || {
        let s = prepare_stationary(model, config)?;
        let w = noaction_fixed_point(&s, config)?;
        ValueSurface::from_layers(s.model.clone(), s.dt, Horizon::Infinite, vec![w])
    })
}

/// Discounted infinite-horizon value `V_rho`, by iterating the stationary
/// first-jump operator from the no-action value until the sup-norm change
/// drops below the tolerance.
pub fn solve_infinite<T: Scalar>(
    model: &SwitchingModel<T>,
    config: &SolverConfig<T>,
) -> Result<ValueSurface<T>, BellmanError> {
    with_threads(config.threads, || {
        let s = prepare_stationary(model, config)?;
        let eps = config.fix_tol_for(model)?;
        let mut w = noaction_fixed_point(&s, config)?;
        let mut stats = SolveStats { min_increment: f64::INFINITY, ..Default::default() };
        loop {
            let next = stationary_step(&s, &w, Mode::Switch);
            let (change, min_inc) = next
                .values()
                .iter()
                .zip(w.values())
                .fold((T::zero(), T::infinity()), |(c, m), (&n, &o)| (c.max((n - o).abs()), m.min(n - o)));
            stats.iterations += 1;
            stats.last_change = change.as_f64();
            stats.changes.push(change.as_f64());
            stats.min_increment = stats.min_increment.min(min_inc.as_f64());
            w = next;
            if change < eps {
                break;
            }
            if stats.iterations >= config.max_iterations {
                return Err(BellmanError::MaxIterations { iterations: stats.iterations, change: change.as_f64() });
            }
        }
        let mut out = ValueSurface::from_layers(s.model.clone(), s.dt, Horizon::Infinite, vec![w])?;
        out.stats = stats;
        Ok(out)
    })
}

fn stationary_residual<T: Scalar>(surface: &ValueSurface<T>, config: &SolverConfig<T>) -> Result<T, BellmanError> {
    with_threads(config.threads, || {
        let sub =
            SolverConfig { dt: Some(surface.dt()), resolution: Some(surface.lattice().resolution()), ..config.clone() };
        let s = prepare_stationary(surface.model(), &sub)?;
        let next = stationary_step(&s, surface.top(), Mode::Switch);
        Ok(next.sup_distance(surface.top()))
    })
}
