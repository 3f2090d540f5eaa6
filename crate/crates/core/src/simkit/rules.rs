//! Simple reference strategies used as baselines.

use std::sync::Arc;

use super::{DecisionContext, SimError, Strategy};
use crate::model::SwitchingModel;
use crate::Scalar;

/// Keeps the initial policy forever.
#[derive(Debug, Clone, Copy, Default)]
pub struct NeverSwitch;

impl<T: Scalar> Strategy<T> for NeverSwitch {
    fn decide(&self, _: &DecisionContext<'_, T>) -> Option<usize> {
        None
    }

    fn name(&self) -> String {
        "never-switch".into()
    }
}

/// Follows the policy with the largest instantaneous expected benefit rate,
/// `argmax_a sum_i pi_i (c_i(a) + lambda_i E_i[c1(Y, a)])`, keeping the current
/// policy on ties.
#[derive(Debug, Clone)]
pub struct Myopic<T> {
    model: Arc<SwitchingModel<T>>,
    scan: T,
}

impl<T: Scalar> Myopic<T> {
    pub fn new(model: Arc<SwitchingModel<T>>, scan: T) -> Self {
        Self { model, scan }
    }
}

impl<T: Scalar> Strategy<T> for Myopic<T> {
    fn decide(&self, ctx: &DecisionContext<'_, T>) -> Option<usize> {
        let rate = |a| self.model.effective_cost(ctx.belief, a);
        let mut best = ctx.policy;
        let mut best_rate = rate(ctx.policy);
        for a in 0..self.model.n_policies() {
            let r = rate(a);
            if r > best_rate {
                best = a;
                best_rate = r;
            }
        }
        (best != ctx.policy).then_some(best)
    }

    fn scan_step(&self) -> Option<T> {
        Some(self.scan)
    }

    fn name(&self) -> String {
        "myopic".into()
    }
}

/// Moves to the next policy (cyclically) at every arrival.
#[derive(Debug, Clone, Copy)]
pub struct EveryArrival {
    pub n_policies: usize,
}

impl<T: Scalar> Strategy<T> for EveryArrival {
    fn decide(&self, ctx: &DecisionContext<'_, T>) -> Option<usize> {
        ctx.at_arrival.then_some((ctx.policy + 1) % self.n_policies)
    }

    fn name(&self) -> String {
        "switch-at-every-arrival".into()
    }
}

/// Fixed open-loop schedule of `(time, policy)` switches.
#[derive(Debug, Clone)]
pub struct Scripted<T> {
    schedule: Vec<(T, usize)>,
}

impl<T: Scalar> Scripted<T> {
    /// Times must be nonnegative and strictly increasing.
    pub fn new(schedule: Vec<(T, usize)>) -> Result<Self, SimError> {
        for (i, w) in schedule.windows(2).enumerate() {
            if !(w[1].0 > w[0].0) {
                return Err(SimError::InadmissibleStrategy(format!(
                    "scheduled switch {} at t = {} is not after t = {}",
                    i + 1,
                    w[1].0,
                    w[0].0
                )));
            }
        }
        if let Some(&(t, _)) = schedule.first() {
            if !(t >= T::zero()) {
                return Err(SimError::InadmissibleStrategy(format!("switch at negative time {t}")));
            }
        }
        Ok(Self { schedule })
    }

    /// Policy prescribed at time `t`, if the schedule has started.
    fn target(&self, t: T) -> Option<usize> {
        let i = self.schedule.partition_point(|&(s, _)| s <= t);
        i.checked_sub(1).map(|i| self.schedule[i].1)
    }
}

impl<T: Scalar> Strategy<T> for Scripted<T> {
    fn decide(&self, ctx: &DecisionContext<'_, T>) -> Option<usize> {
        self.target(ctx.time).filter(|&b| b != ctx.policy)
    }

    fn next_deadline(&self, after: T) -> Option<T> {
        self.schedule.iter().map(|&(t, _)| t).find(|&t| t > after)
    }

    fn name(&self) -> String {
        "scripted".into()
    }
}
