//! Dynamic programming for the switching problem.
//!
//! The value function is computed through the first-jump operator: condition
//! on the first arrival, follow the deterministic belief flow until either the
//! arrival or a chosen deadline `t`, and then continue optimally. On the time
//! mesh `u_k = k dt` the running integral is a product rule (exponential
//! discounted survival times a linear interpolant of the rest), the flowed and post-jump beliefs are interpolated on a simplex lattice, and the
//! supremum over deadlines becomes a maximum over mesh points.
//!
//! Conventions used by every solver here:
//!
//! * the candidate "switch at `u_k`" is `Q_k + d_k M w(x_k, a)` where `Q_k`
//!   is the discounted running integral up to `u_k` and `d_k` the discounted
//!   survival mass;
//! * at the last mesh point the controller may also simply keep its policy, so
//!   that candidate is `Q_K + d_K max(w, Mw)(x_K, a)`; for a finite horizon
//!   `w = 0` at maturity and this is the no-switch payoff;
//! * the `u = 0` quadrature endpoint and the immediate switch at `t = 0` refer to
//!   the layer being computed; each layer is therefore closed by a short
//!   fixed-point iteration.

mod flow;
mod solve;

use std::io::{Read, Write};
use std::sync::Arc;

use thiserror::Error;

use crate::beliefgrid::{default_resolution, GridError, NodeFunction, SimplexLattice};
use crate::filter::{jump_raw, FlowCache};
use crate::model::{Belief, SwitchingModel};
use crate::Scalar;

pub(crate) use flow::FlowRow;
pub use solve::{
    apply_first_jump_l, fixed_point_residual, iterate_first_jump, solve_finite, solve_infinite, stationary_noaction,
    value_noaction_u0, FirstJumpCandidates,
};

#[derive(Debug, Error)]
pub enum BellmanError {
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("infinite-horizon problems need a positive discount rate")]
    NoDiscount,
    #[error("no convergence after {iterations} iterations (last sup change {change:e})")]
    MaxIterations { iterations: usize, change: f64 },
    #[error("value layer {layer} is not available")]
    MissingLayer { layer: usize },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("value table: {0}")]
    Table(String),
}

/// Numerical parameters. Unset fields take problem-dependent defaults.
#[derive(Debug, Clone)]
pub struct SolverConfig<T> {
    /// Time step. Defaults to `T / 400` (finite) or `T_eff / 400` (infinite).
    pub dt: Option<T>,
    /// Lattice resolution `N`. Defaults to 200 for two states, 60 for three.
    pub resolution: Option<usize>,
    /// Infinite-horizon stopping tolerance on the sup-norm change.
    /// Defaults to `1e-4 * cmax / rho`.
    pub fix_tol: Option<T>,
    /// Cap on infinite-horizon outer iterations.
    pub max_iterations: usize,
    /// Cap on the per-layer fixed-point sweeps.
    pub sweep_cap: usize,
    /// Worker threads; `None` uses the ambient rayon pool.
    pub threads: Option<usize>,
}

impl<T: Scalar> Default for SolverConfig<T> {
    fn default() -> Self {
        Self { dt: None, resolution: None, fix_tol: None, max_iterations: 5000, sweep_cap: 1000, threads: None }
    }
}

impl<T: Scalar> SolverConfig<T> {
    pub fn with_dt(mut self, dt: T) -> Self {
        self.dt = Some(dt);
        self
    }

    pub fn with_resolution(mut self, n: usize) -> Self {
        self.resolution = Some(n);
        self
    }

    pub fn with_fix_tol(mut self, tol: T) -> Self {
        self.fix_tol = Some(tol);
        self
    }

    pub fn with_threads(mut self, threads: usize) -> Self {
        self.threads = Some(threads);
        self
    }

    pub fn resolution_for(&self, m: usize) -> usize {
        self.resolution.unwrap_or_else(|| default_resolution(m))
    }

    /// Number of steps and the step actually used for horizon `horizon`.
    /// The step is shrunk so that the horizon is a whole number of steps.
    pub fn mesh(&self, horizon: T) -> Result<(usize, T), BellmanError> {
        if !(horizon > T::zero()) || !horizon.is_finite() {
            return Err(BellmanError::InvalidConfig(format!("horizon must be > 0, got {horizon}")));
        }
        let dt = self.dt.unwrap_or(horizon / T::of(400.0));
        if !(dt > T::zero()) || !dt.is_finite() {
            return Err(BellmanError::InvalidConfig(format!("dt must be > 0, got {dt}")));
        }
        let ratio = horizon / dt;
        let rounded = ratio.round();
        let n = if (ratio - rounded).abs() <= T::of(1e-6) * rounded.max(T::one()) { rounded } else { ratio.ceil() };
        let n = n.to_usize().unwrap_or(1).max(1);
        Ok((n, horizon / T::of_usize(n)))
    }

    pub fn fix_tol_for(&self, model: &SwitchingModel<T>) -> Result<T, BellmanError> {
        let rho = model.discount();
        let tol = self.fix_tol.unwrap_or(T::of(1e-4) * model.cmax().max(T::epsilon()) / rho);
        if !(tol > T::zero()) {
            return Err(BellmanError::InvalidConfig(format!("fix tolerance must be > 0, got {tol}")));
        }
        Ok(tol)
    }

    /// Truncation horizon `ln(cmax / (rho eps)) / rho` of the infinite problem.
    pub fn effective_horizon(&self, model: &SwitchingModel<T>) -> Result<T, BellmanError> {
        let rho = model.discount();
        if !(rho > T::zero()) {
            return Err(BellmanError::NoDiscount);
        }
        let tol = self.fix_tol_for(model)?;
        let ratio = (model.cmax() / (rho * tol)).max(T::of(std::f64::consts::E));
        Ok(ratio.ln() / rho)
    }
}

/// Horizon of a solved surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Horizon<T> {
    Finite(T),
    Infinite,
}

/// Convergence diagnostics of a solve.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolveStats {
    /// Outer iterations (infinite horizon) or layers (finite horizon).
    pub iterations: usize,
    /// Largest number of fixed-point sweeps needed by any layer.
    pub max_sweeps: usize,
    /// Last sup-norm change of the outer iteration (infinite horizon).
    pub last_change: f64,
    /// Sup-norm change of every outer iteration (infinite horizon).
    pub changes: Vec<f64>,
    /// Most negative change between consecutive iterates (infinite horizon).
    pub min_increment: f64,
}

/// Value function on a lattice: one layer per remaining horizon `n dt`
/// (finite horizon, layer 0 is maturity) or a single stationary layer.
#[derive(Debug, Clone)]
pub struct ValueSurface<T> {
    model: Arc<SwitchingModel<T>>,
    lattice: Arc<SimplexLattice<T>>,
    dt: T,
    horizon: Horizon<T>,
    layers: Vec<NodeFunction<T>>,
    pub stats: SolveStats,
}

impl<T: Scalar> ValueSurface<T> {
    /// Assembles a surface from precomputed layers (layer `n` at remaining
    /// horizon `n dt`).
    pub fn from_layers(
        model: Arc<SwitchingModel<T>>,
        dt: T,
        horizon: Horizon<T>,
        layers: Vec<NodeFunction<T>>,
    ) -> Result<Self, BellmanError> {
        let first = layers.first().ok_or(BellmanError::MissingLayer { layer: 0 })?;
        let lattice = first.lattice().clone();
        if lattice.dim() != model.n_states()
            || layers.iter().any(|l| l.n_policies() != model.n_policies() || !Arc::ptr_eq(l.lattice(), &lattice))
        {
            return Err(BellmanError::Table("layers do not match the model or each other".into()));
        }
        Ok(Self { model, lattice, dt, horizon, layers, stats: SolveStats::default() })
    }

    pub fn model(&self) -> &Arc<SwitchingModel<T>> {
        &self.model
    }

    pub fn lattice(&self) -> &Arc<SimplexLattice<T>> {
        &self.lattice
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    pub fn horizon(&self) -> Horizon<T> {
        self.horizon
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self.horizon, Horizon::Infinite)
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[NodeFunction<T>] {
        &self.layers
    }

    pub fn layer(&self, n: usize) -> Result<&NodeFunction<T>, BellmanError> {
        self.layers.get(n).ok_or(BellmanError::MissingLayer { layer: n })
    }

    /// The last layer: `U(T, ., .)` or the stationary value.
    pub fn top(&self) -> &NodeFunction<T> {
        self.layers.last().expect("surfaces have at least one layer")
    }

    /// Remaining horizon of layer `n`.
    pub fn tau(&self, n: usize) -> T {
        self.dt * T::of_usize(n)
    }

    /// Layer used for remaining horizon `tau`: the nearest layer not above it.
    pub fn layer_index_for(&self, tau: T) -> usize {
        if self.is_infinite() {
            return 0;
        }
        let n = (tau / self.dt + T::of(1e-9)).floor().to_usize().unwrap_or(0);
        n.min(self.layers.len() - 1)
    }

    /// `U(tau, pi, a)` using the nearest lower layer and lattice interpolation.
    pub fn value(&self, tau: T, pi: &Belief<T>, a: usize) -> T {
        self.layers[self.layer_index_for(tau)].interpolate(pi, a)
    }

    /// Uniform bound on `|U|` implied by the benefit rates.
    pub fn bound(&self) -> T {
        match self.horizon {
            Horizon::Finite(t) => self.model.value_bound(Some(t)),
            Horizon::Infinite => self.model.value_bound(None),
        }
    }

    /// Rows `tau,node,pi1..pim,policy,value` with policy labels.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), BellmanError> {
        let csv_err = |e: csv::Error| BellmanError::Table(e.to_string());
        let mut wr = csv::Writer::from_writer(w);
        let m = self.lattice.dim();
        let mut header = vec!["tau".to_string(), "node".to_string()];
        header.extend((1..=m).map(|i| format!("pi{i}")));
        header.extend(["policy".to_string(), "value".to_string()]);
        wr.write_record(&header).map_err(csv_err)?;
        let labels = self.model.policies();
        for (n, layer) in self.layers.iter().enumerate() {
            let tau = if self.is_infinite() { "inf".to_string() } else { self.tau(n).to_string() };
            for node in 0..self.lattice.len() {
                for (a, label) in labels.iter().enumerate() {
                    let mut rec = vec![tau.clone(), node.to_string()];
                    rec.extend(self.lattice.node(node).iter().map(|x| x.to_string()));
                    rec.push(label.clone());
                    rec.push(layer.at(node, a).to_string());
                    wr.write_record(&rec).map_err(csv_err)?;
                }
            }
        }
        wr.flush().map_err(|e| BellmanError::Table(e.to_string()))?;
        Ok(())
    }

    /// Reads the output of [`write_csv`](Self::write_csv). The mesh
    /// parameters are not stored in the table and must be supplied.
    pub fn read_csv<R: Read>(
        model: Arc<SwitchingModel<T>>,
        resolution: usize,
        dt: T,
        horizon: Horizon<T>,
        r: R,
    ) -> Result<Self, BellmanError> {
        let lattice = Arc::new(SimplexLattice::build(model.n_states(), resolution)?);
        let na = model.n_policies();
        let m = lattice.dim();
        let n_layers = match horizon {
            Horizon::Infinite => 1,
            Horizon::Finite(t) => (t / dt).round().to_usize().unwrap_or(0) + 1,
        };
        let mut values = vec![vec![T::nan(); lattice.len() * na]; n_layers];
        let mut layer = 0usize;
        let mut last_tau: Option<String> = None;
        let bad = |s: String| BellmanError::Table(s);
        for rec in csv::Reader::from_reader(r).records() {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            if rec.len() != m + 4 {
                return Err(bad(format!("expected {} columns, found {}", m + 4, rec.len())));
            }
            let tau = rec[0].to_string();
            if let Some(prev) = &last_tau {
                if *prev != tau {
                    layer += 1;
                }
            }
            last_tau = Some(tau);
            if layer >= n_layers {
                return Err(bad("more layers than the horizon implies".into()));
            }
            let node: usize = rec[1].parse().map_err(|_| bad(format!("bad node '{}'", &rec[1])))?;
            let a = model.policy_index(&rec[m + 2]).ok_or_else(|| bad(format!("unknown policy '{}'", &rec[m + 2])))?;
            let v: f64 = rec[m + 3].parse().map_err(|_| bad(format!("bad value '{}'", &rec[m + 3])))?;
            if node >= lattice.len() {
                return Err(bad(format!("node {node} outside the lattice")));
            }
            values[layer][node * na + a] = T::of(v);
        }
        if layer + 1 != n_layers || values.iter().flatten().any(|v| v.is_nan()) {
            return Err(bad("table is incomplete for the given mesh".into()));
        }
        let layers = values
            .into_iter()
            .map(|v| NodeFunction::from_values(lattice.clone(), na, v))
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_layers(model, dt, horizon, layers)
    }
}

/// `Mw(pi, a) = max_{b != a} (w(pi, b) - K(a, b, pi))` with the smallest
/// maximizing `b`.
pub fn intervene<T: Scalar>(
    layer: &NodeFunction<T>,
    pi: &Belief<T>,
    a: usize,
    model: &SwitchingModel<T>,
) -> (T, usize) {
    let stencil = layer.lattice().locate(pi.as_slice());
    let mut w = vec![T::zero(); layer.n_policies()];
    layer.interpolate_all(&stencil, &mut w);
    intervene_values(&w, pi.as_slice(), a, model)
}

/// Intervention on already-interpolated values `w[b]` at belief `pi`.
pub fn intervene_values<T: Scalar>(w: &[T], pi: &[T], a: usize, model: &SwitchingModel<T>) -> (T, usize) {
    let mut best = T::neg_infinity();
    let mut arg = usize::MAX;
    for (b, &v) in w.iter().enumerate() {
        if b != a {
            let c = v - model.cost_k_raw(a, b, pi);
            if c > best {
                best = c;
                arg = b;
            }
        }
    }
    (best, arg)
}

/// `S_i w(pi, a) = sum_j nu_ij w(J_j(pi), a)`. Marks that cannot occur from
/// `pi` contribute nothing.
pub fn jump_expectation_s<T: Scalar>(
    layer: &NodeFunction<T>,
    i: usize,
    pi: &Belief<T>,
    a: usize,
    model: &SwitchingModel<T>,
) -> T {
    (0..model.n_marks())
        .filter(|&j| model.mark_prob(i, j) > T::zero())
        .filter_map(|j| jump_raw(pi.as_slice(), j, model).ok().map(|p| (j, p)))
        .map(|(j, p)| model.mark_prob(i, j) * layer.interpolate_raw(&p, a))
        .sum()
}

/// Builds the lattice and per-node flow tables shared by the solvers.
pub(crate) fn flow_tables<T: Scalar>(
    model: &SwitchingModel<T>,
    lattice: &SimplexLattice<T>,
    dt: T,
    steps: usize,
) -> Vec<FlowRow<T>> {
    use rayon::prelude::*;
    let cache = FlowCache::new(model, dt);
    (0..lattice.len())
        .into_par_iter()
        .map(|node| FlowRow::build(model, lattice, &cache, lattice.node(node), steps))
        .collect()
}

/// Runs `f` on a dedicated pool when a thread count is configured.
pub(crate) fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    match threads {
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build().expect("thread pool").install(f),
        None => f(),
    }
}
