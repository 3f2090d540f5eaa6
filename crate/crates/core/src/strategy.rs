//! Switching regions, their boundaries and an executable controller built
//! from a solved [`ValueSurface`].
//!
//! A node `(tau, pi, a)` is in the switching region when the value gains
//! nothing over switching immediately, `U - MU <= eps`. On a grid the exact
//! equality of the continuous problem needs the tolerance `eps`; see
//! [`default_switch_tolerance`].

use std::io::Write;
use std::sync::Arc;

use thiserror::Error;

use crate::beliefgrid::SimplexLattice;
use crate::bellman::{intervene_values, Horizon, ValueSurface};
use crate::model::{Belief, SwitchingModel};
use crate::simkit::{DecisionContext, Strategy};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StrategyError {
    #[error("remaining horizon {tau} exceeds the solved horizon {horizon}")]
    HorizonExceeded { tau: f64, horizon: f64 },
    #[error("policy {0} is not part of the model")]
    UnknownPolicy(usize),
    #[error("belief has dimension {got}, the model has {expected} states")]
    Dimension { got: usize, expected: usize },
    #[error("csv output failed: {0}")]
    Io(String),
}

/// What to do at a `(tau, pi, a)` node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Continue,
    Switch(usize),
}

impl Action {
    pub fn target(self) -> Option<usize> {
        match self {
            Action::Continue => None,
            Action::Switch(b) => Some(b),
        }
    }
}

/// `1e-6 max(1, cmax T)`, with `cmax / rho` in place of `cmax T` for the
/// stationary problem.
pub fn default_switch_tolerance<T: Scalar>(surface: &ValueSurface<T>) -> T {
    T::of(1e-6) * T::one().max(surface.bound())
}

/// Switch gap `U(a) - max_b (U(b) - K(a, b, pi))` and the smallest maximizer,
/// from values `u[b]` already evaluated at `pi`.
fn gap<T: Scalar>(u: &[T], pi: &[T], a: usize, model: &SwitchingModel<T>) -> (T, usize) {
    let (mu, b) = intervene_values(u, pi, a, model);
    (u[a] - mu, b)
}

/// Action label for every `(layer, node, policy)` of a surface.
#[derive(Debug, Clone)]
pub struct StrategyTable<T> {
    model: Arc<SwitchingModel<T>>,
    lattice: Arc<SimplexLattice<T>>,
    dt: T,
    horizon: Horizon<T>,
    eps: T,
    layers: Vec<Vec<Action>>,
}

/// Labels a node `switch-to-b` when `U - MU <= eps`, with `b` the smallest
/// maximizer of the intervention, and `continue` otherwise.
pub fn classify_regions<T: Scalar>(surface: &ValueSurface<T>, eps: T) -> StrategyTable<T> {
    let model = surface.model().clone();
    let lattice = surface.lattice().clone();
    let na = model.n_policies();
    let layers = surface
        .layers()
        .iter()
        .map(|layer| {
            let mut out = Vec::with_capacity(lattice.len() * na);
            for node in 0..lattice.len() {
                let u = layer.row(node);
                let pi = lattice.node(node);
                for a in 0..na {
                    let (g, b) = gap(u, pi, a, &model);
                    out.push(if g <= eps { Action::Switch(b) } else { Action::Continue });
                }
            }
            out
        })
        .collect();
    StrategyTable { model, lattice, dt: surface.dt(), horizon: surface.horizon(), eps, layers }
}

/// Boundary of one switching region `Gamma_tau(a, b)` on one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerBoundary<T> {
    pub tau: T,
    /// For two states: smallest and largest `pi_1` of the region's nodes,
    /// `None` when the region is empty.
    pub interval: Option<(T, T)>,
    /// Region nodes with at least one lattice neighbour outside the region.
    pub nodes: Vec<usize>,
}

impl<T: Scalar> StrategyTable<T> {
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

    pub fn tolerance(&self) -> T {
        self.eps
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    /// Remaining horizon of layer `n` (infinite for a stationary table).
    pub fn tau(&self, n: usize) -> T {
        match self.horizon {
            Horizon::Infinite => T::infinity(),
            Horizon::Finite(_) => self.dt * T::of_usize(n),
        }
    }

    pub fn action(&self, layer: usize, node: usize, a: usize) -> Action {
        self.layers[layer][node * self.model.n_policies() + a]
    }

    /// Builds a table from explicit labels, `layers[n][node * |A| + a]`.
    pub fn from_actions(
        model: Arc<SwitchingModel<T>>,
        lattice: Arc<SimplexLattice<T>>,
        dt: T,
        horizon: Horizon<T>,
        layers: Vec<Vec<Action>>,
    ) -> Self {
        Self { model, lattice, dt, horizon, eps: T::zero(), layers }
    }

    /// Whether policy `a` has any switching node on layer `n`.
    pub fn has_switching(&self, n: usize, a: usize) -> bool {
        (0..self.lattice.len()).any(|node| self.action(n, node, a) != Action::Continue)
    }

    /// Per layer, the boundary of `Gamma_tau(a, b)`.
    pub fn boundary_curve(&self, a: usize, b: usize) -> Vec<LayerBoundary<T>> {
        (0..self.layers.len())
            .map(|n| {
                let inside = |node: usize| self.action(n, node, a) == Action::Switch(b);
                let mut interval: Option<(T, T)> = None;
                let mut nodes = Vec::new();
                for node in (0..self.lattice.len()).filter(|&v| inside(v)) {
                    if self.lattice.dim() == 2 {
                        let p = self.lattice.node(node)[0];
                        interval = Some(interval.map_or((p, p), |(lo, hi)| (lo.min(p), hi.max(p))));
                    }
                    if self.lattice.neighbors(node).into_iter().any(|v| !inside(v)) {
                        nodes.push(node);
                    }
                }
                LayerBoundary { tau: self.tau(n), interval, nodes }
            })
            .collect()
    }

    /// Rows `tau,node,pi1..pim,policy,action`; the action is `continue` or
    /// `switch:<policy>`.
    pub fn write_regions_csv<W: Write>(&self, w: W) -> Result<(), StrategyError> {
        let io = |e: csv::Error| StrategyError::Io(e.to_string());
        let mut wr = csv::Writer::from_writer(w);
        let m = self.lattice.dim();
        let mut header = vec!["tau".to_string(), "node".to_string()];
        header.extend((1..=m).map(|i| format!("pi{i}")));
        header.extend(["policy".to_string(), "action".to_string()]);
        wr.write_record(&header).map_err(io)?;
        let labels = self.model.policies();
        for n in 0..self.layers.len() {
            let tau = tau_label(self, n);
            for node in 0..self.lattice.len() {
                for (a, label) in labels.iter().enumerate() {
                    let mut rec = vec![tau.clone(), node.to_string()];
                    rec.extend(self.lattice.node(node).iter().map(|x| x.to_string()));
                    rec.push(label.clone());
                    rec.push(match self.action(n, node, a) {
                        Action::Continue => "continue".to_string(),
                        Action::Switch(b) => format!("switch:{}", labels[b]),
                    });
                    wr.write_record(&rec).map_err(io)?;
                }
            }
        }
        wr.flush().map_err(|e| StrategyError::Io(e.to_string()))
    }

    /// Rows `tau,from,to,lower_pi1,upper_pi1` for every ordered policy pair;
    /// the bounds are empty when the region is. Two-state models only.
    pub fn write_boundaries_csv<W: Write>(&self, w: W) -> Result<(), StrategyError> {
        let io = |e: csv::Error| StrategyError::Io(e.to_string());
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["tau", "from", "to", "lower_pi1", "upper_pi1"]).map_err(io)?;
        let labels = self.model.policies();
        let na = labels.len();
        let curves: Vec<_> = (0..na)
            .flat_map(|a| (0..na).filter(move |&b| b != a).map(move |b| (a, b)))
            .map(|(a, b)| ((a, b), self.boundary_curve(a, b)))
            .collect();
        for n in 0..self.layers.len() {
            for ((a, b), curve) in &curves {
                let (lo, hi) =
                    curve[n].interval.map_or((String::new(), String::new()), |(l, h)| (l.to_string(), h.to_string()));
                wr.write_record([tau_label(self, n), labels[*a].clone(), labels[*b].clone(), lo, hi]).map_err(io)?;
            }
        }
        wr.flush().map_err(|e| StrategyError::Io(e.to_string()))
    }
}

fn tau_label<T: Scalar>(t: &StrategyTable<T>, n: usize) -> String {
    match t.horizon {
        Horizon::Infinite => "inf".to_string(),
        Horizon::Finite(_) => t.tau(n).to_string(),
    }
}

/// Optimal feedback rule: switch to `b` as soon as the interpolated gap
/// `U(tau, pi, a) - MU(tau, pi, a)` drops to `eps`.
///
/// The controller is a pure function of `(pi, tau, a)`; the simulator keeps
/// the current belief and policy. Remaining horizons between mesh points use
/// the nearest lower layer.
#[derive(Debug, Clone)]
pub struct Controller<T> {
    surface: Arc<ValueSurface<T>>,
    eps: T,
}

impl<T: Scalar> Controller<T> {
    pub fn new(surface: Arc<ValueSurface<T>>, eps: T) -> Self {
        Self { surface, eps }
    }

    /// Controller with [`default_switch_tolerance`].
    pub fn with_default_tolerance(surface: Arc<ValueSurface<T>>) -> Self {
        let eps = default_switch_tolerance(&surface);
        Self::new(surface, eps)
    }

    pub fn surface(&self) -> &Arc<ValueSurface<T>> {
        &self.surface
    }

    pub fn tolerance(&self) -> T {
        self.eps
    }

    /// Gap `U - MU` at `(tau, pi, a)` and the policy an intervention would pick.
    pub fn gap(&self, pi: &[T], tau: T, a: usize) -> Result<(T, usize), StrategyError> {
        let model = self.surface.model();
        if a >= model.n_policies() {
            return Err(StrategyError::UnknownPolicy(a));
        }
        if pi.len() != model.n_states() {
            return Err(StrategyError::Dimension { got: pi.len(), expected: model.n_states() });
        }
        if let Horizon::Finite(h) = self.surface.horizon() {
            if tau > h * (T::one() + T::of(1e-12)) || tau < T::zero() {
                return Err(StrategyError::HorizonExceeded { tau: tau.as_f64(), horizon: h.as_f64() });
            }
        }
        let layer = &self.surface.layers()[self.surface.layer_index_for(tau)];
        let stencil = self.surface.lattice().locate(pi);
        let mut u = vec![T::zero(); model.n_policies()];
        layer.interpolate_all(&stencil, &mut u);
        Ok(gap(&u, pi, a, model))
    }

    pub fn decide(&self, pi: &Belief<T>, tau: T, a: usize) -> Result<Action, StrategyError> {
        let (g, b) = self.gap(pi.as_slice(), tau, a)?;
        Ok(if g <= self.eps { Action::Switch(b) } else { Action::Continue })
    }
}

impl<T: Scalar> Strategy<T> for Controller<T> {
    fn decide(&self, ctx: &DecisionContext<'_, T>) -> Option<usize> {
        let (g, b) = self.gap(ctx.belief, ctx.remaining, ctx.policy).ok()?;
        (g <= self.eps).then_some(b)
    }

    fn scan_step(&self) -> Option<T> {
        Some(self.surface.dt())
    }

    fn max_horizon(&self) -> Option<T> {
        match self.surface.horizon() {
            Horizon::Finite(h) => Some(h),
            Horizon::Infinite => None,
        }
    }

    fn name(&self) -> String {
        "optimal".into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beliefgrid::NodeFunction;
    use crate::bundled;

    fn onoff_surface(values: impl Fn(&[f64], usize) -> f64, horizon: f64) -> ValueSurface<f64> {
        let model = Arc::new(bundled::onoff::<f64>());
        let lattice = Arc::new(SimplexLattice::build(2, 10).unwrap());
        let layer = NodeFunction::from_fn(lattice, 2, |pi, a| values(pi, a));
        let zero = NodeFunction::zeros(layer.lattice().clone(), 2);
        ValueSurface::from_layers(model, horizon, Horizon::Finite(horizon), vec![zero, layer]).unwrap()
    }

    #[test]
    fn zero_layer_continues_everywhere() {
        let s = onoff_surface(|_, _| 1.0, 1.0);
        let t = classify_regions(&s, 1e-6);
        assert!(!t.has_switching(0, 0) && !t.has_switching(0, 1));
    }

    #[test]
    fn switching_region_from_values() {
        // policy 1 (index 1) is worth K more wherever pi_1 <= 0.3
        let s = onoff_surface(|pi, a| if a == 1 && pi[0] <= 0.3 + 1e-12 { 1.05 } else { 1.0 }, 1.0);
        let t = classify_regions(&s, 1e-9);
        let curve = t.boundary_curve(0, 1);
        assert_eq!(curve[0].interval, None);
        let (lo, hi) = curve[1].interval.unwrap();
        assert!(lo.abs() < 1e-12 && (hi - 0.3).abs() < 1e-12);
        assert_eq!(curve[1].nodes.len(), 1);
        // on switch nodes the value equals the switch value
        for node in 0..t.lattice().len() {
            if let Action::Switch(b) = t.action(1, node, 0) {
                let u = s.layers()[1].row(node);
                assert!((u[0] - (u[b] - 0.05)).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn controller_checks_horizon() {
        let s = Arc::new(onoff_surface(|_, _| 0.0, 1.0));
        let c = Controller::new(s, 1e-6);
        let pi = Belief::uniform(2);
        assert_eq!(c.decide(&pi, 0.5, 0).unwrap(), Action::Continue);
        assert!(matches!(c.decide(&pi, 1.5, 0), Err(StrategyError::HorizonExceeded { .. })));
    }

    #[test]
    fn no_double_switch_on_a_constructed_surface() {
        let s = Arc::new(onoff_surface(|pi, a| if a == 1 { 1.0 - pi[0] } else { pi[0] }, 1.0));
        let c = Controller::new(s, 1e-9);
        for k in 0..=20 {
            let pi = Belief::new(vec![k as f64 / 20.0, 1.0 - k as f64 / 20.0]).unwrap();
            for a in 0..2 {
                if let Action::Switch(b) = c.decide(&pi, 1.0, a).unwrap() {
                    assert_eq!(c.decide(&pi, 1.0, b).unwrap(), Action::Continue);
                }
            }
        }
    }
}
