//! Exact simulation of the hidden chain and its observations, and Monte Carlo
//! evaluation of switching strategies.
//!
//! A path is generated in two stages. [`simulate_system`] draws the chain and
//! the marked arrivals; it never looks at the strategy. [`run_strategy`] then
//! replays the arrivals through the filter, asks the strategy for decisions
//! and accounts for the discounted payoff. Strategies only ever see the
//! filtered belief.
//!
//! Every path has its own random stream derived from `(seed, path index)`, and
//! estimates are reduced with a fixed pairwise tree, so results do not depend
//! on the number of worker threads.

mod io;
pub mod rules;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::filter::{flow_x, jump_update, Arrival, FilterError, FlowCache};
use crate::linalg::Mat;
use crate::model::{Belief, SwitchingModel};
use crate::{pairwise_sum, Scalar};

pub use io::{parse_path, write_path, PathHeader};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("inadmissible strategy: {0}")]
    InadmissibleStrategy(String),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error("bad simulation input: {0}")]
    Input(String),
}

/// What a strategy sees when asked for a decision.
#[derive(Debug, Clone, Copy)]
pub struct DecisionContext<'a, T> {
    pub time: T,
    /// Time left until the horizon.
    pub remaining: T,
    pub belief: &'a [T],
    pub policy: usize,
    /// True right after the belief jumped at an arrival.
    pub at_arrival: bool,
}

/// A non-anticipative switching rule driven by the filtered belief.
///
/// Implementations must be deterministic functions of the context; the
/// simulator locates switch times between arrivals by bisecting on
/// [`decide`](Self::decide).
pub trait Strategy<T: Scalar>: Sync {
    /// `Some(b)` to switch to policy `b` now.
    fn decide(&self, ctx: &DecisionContext<'_, T>) -> Option<usize>;

    /// Mesh on which the belief flow is monitored between arrivals, or `None`
    /// when the strategy only acts at arrivals and deadlines.
    fn scan_step(&self) -> Option<T> {
        None
    }

    /// First pre-scheduled decision time strictly after `after`.
    fn next_deadline(&self, _after: T) -> Option<T> {
        None
    }

    /// Longest horizon the strategy is defined on.
    fn max_horizon(&self) -> Option<T> {
        None
    }

    fn name(&self) -> String;
}

/// Hidden chain trajectory: `(jump time, new state)`, starting at time 0.
pub type ChainPath<T> = Vec<(T, usize)>;

/// Output of [`simulate_system`].
#[derive(Debug, Clone, PartialEq)]
pub struct SystemPath<T> {
    pub chain: ChainPath<T>,
    pub arrivals: Vec<Arrival<T>>,
    pub horizon: T,
}

impl<T: Scalar> SystemPath<T> {
    /// Hidden state at time `t` (right-continuous).
    pub fn state_at(&self, t: T) -> usize {
        state_at(&self.chain, t)
    }
}

fn state_at<T: Scalar>(chain: &[(T, usize)], t: T) -> usize {
    let i = chain.partition_point(|&(s, _)| s <= t);
    chain[i.saturating_sub(1)].1
}

/// A switch applied by the strategy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwitchRecord<T> {
    pub time: T,
    pub from: usize,
    pub to: usize,
    /// Decided right after an arrival jump (as opposed to during the flow).
    pub at_arrival: bool,
}

/// A controlled path with everything needed to recompute its payoff.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath<T> {
    pub seed: u64,
    pub index: u64,
    pub initial_policy: usize,
    pub system: SystemPath<T>,
    /// Filtered belief at time 0, after each arrival and at each switch.
    pub beliefs: Vec<(T, Vec<T>)>,
    pub switches: Vec<SwitchRecord<T>>,
    /// Discounted payoff accumulated while simulating.
    pub payoff: T,
}

fn discount_integral<T: Scalar>(rho: T, t0: T, t1: T) -> T {
    if rho == T::zero() {
        t1 - t0
    } else {
        ((-rho * t0).exp() - (-rho * t1).exp()) / rho
    }
}

impl<T: Scalar> SamplePath<T> {
    /// Payoff recomputed from the stored chain, arrivals and switches alone.
    pub fn recompute_payoff(&self, model: &SwitchingModel<T>) -> T {
        let rho = model.discount();
        let chain = &self.system.chain;
        let horizon = self.system.horizon;
        let policy_before = |t: T, include_flow_at_t: bool| {
            let mut a = self.initial_policy;
            for s in &self.switches {
                if s.time < t || (include_flow_at_t && s.time == t && !s.at_arrival) {
                    a = s.to;
                }
            }
            a
        };
        let mut total = T::zero();
        for (idx, &(start, state)) in chain.iter().enumerate() {
            let end = chain.get(idx + 1).map_or(horizon, |&(t, _)| t).min(horizon);
            if start >= end {
                continue;
            }
            let mut cuts: Vec<T> = vec![start];
            cuts.extend(self.switches.iter().map(|s| s.time).filter(|&t| t > start && t < end));
            cuts.push(end);
            for w in cuts.windows(2) {
                let a = policy_before(w[1], false);
                total += model.running_cost(state, a) * discount_integral(rho, w[0], w[1]);
            }
        }
        for arr in &self.system.arrivals {
            let a = policy_before(arr.time, true);
            total += (-rho * arr.time).exp() * model.arrival_cost(arr.mark, a);
        }
        for s in &self.switches {
            let i = state_at(chain, s.time);
            total -= (-rho * s.time).exp() * model.switch_cost(i, s.from, s.to);
        }
        total
    }
}

fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn exp_sample<T: Scalar>(rng: &mut ChaCha8Rng, rate: T) -> T {
    let u: f64 = rng.gen();
    T::of(-(1.0 - u).ln()) / rate
}

fn categorical<T: Scalar>(rng: &mut ChaCha8Rng, weights: impl Iterator<Item = T> + Clone) -> usize {
    let total: T = weights.clone().sum();
    let target = T::of(rng.gen::<f64>()) * total;
    let mut acc = T::zero();
    let mut last = 0;
    for (i, w) in weights.enumerate() {
        if w > T::zero() {
            last = i;
            acc += w;
            if target < acc {
                return i;
            }
        }
    }
    last
}

/// Draws the hidden chain on `[0, horizon]` from `pi0` and, within each
/// sojourn in state `i`, Poisson(`lambda_i`) arrivals with marks from row `i`
/// of the mark distribution.
pub fn simulate_system<T: Scalar>(
    model: &SwitchingModel<T>,
    pi0: &Belief<T>,
    horizon: T,
    seed: u64,
    index: u64,
) -> SystemPath<T> {
    let mut rng = path_rng(seed, index);
    let q = model.generator();
    let m = model.n_states();
    let mut state = categorical(&mut rng, pi0.as_slice().iter().copied());
    let mut chain = vec![(T::zero(), state)];
    let mut arrivals = Vec::new();
    let mut t = T::zero();
    while t < horizon {
        let out_rate = -q[(state, state)];
        let leave = if out_rate > T::zero() { t + exp_sample(&mut rng, out_rate) } else { T::infinity() };
        let end = leave.min(horizon);
        let lambda = model.intensity(state);
        let mut s = t;
        loop {
            s += exp_sample(&mut rng, lambda);
            if s >= end {
                break;
            }
            let mark = categorical(&mut rng, (0..model.n_marks()).map(|j| model.mark_prob(state, j)));
            arrivals.push(Arrival { time: s, mark });
        }
        if leave >= horizon {
            break;
        }
        state = categorical(&mut rng, (0..m).map(|j| if j == state { T::zero() } else { q[(state, j)] }));
        chain.push((leave, state));
        t = leave;
    }
    SystemPath { chain, arrivals, horizon }
}

/// Result of running a strategy along a fixed arrival sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlledRun<T> {
    pub beliefs: Vec<(T, Vec<T>)>,
    pub switches: Vec<SwitchRecord<T>>,
    /// Streamed payoff; zero when no chain was supplied.
    pub payoff: T,
}

struct Engine<'a, T: Scalar, S: ?Sized> {
    model: &'a SwitchingModel<T>,
    strategy: &'a S,
    horizon: T,
    chain: Option<&'a [(T, usize)]>,
    scan: Option<(T, FlowCache<T>)>,
    t: T,
    pi: Vec<T>,
    a: usize,
    out: ControlledRun<T>,
}

impl<'a, T: Scalar, S: Strategy<T> + ?Sized> Engine<'a, T, S> {
    fn ask(&self, t: T, pi: &[T], at_arrival: bool) -> Option<usize> {
        self.strategy.decide(&DecisionContext {
            time: t,
            remaining: self.horizon - t,
            belief: pi,
            policy: self.a,
            at_arrival,
        })
    }

    fn accrue(&mut self, t1: T) {
        let Some(chain) = self.chain else { return };
        let rho = self.model.discount();
        let mut s = self.t;
        while s < t1 {
            let i = chain.partition_point(|&(c, _)| c <= s);
            let state = chain[i - 1].1;
            let next = chain.get(i).map_or(t1, |&(c, _)| c.min(t1));
            self.out.payoff += self.model.running_cost(state, self.a) * discount_integral(rho, s, next);
            s = next;
        }
    }

    fn switch(&mut self, to: usize, at_arrival: bool) -> Result<(), SimError> {
        if to == self.a || to >= self.model.n_policies() {
            return Err(SimError::InadmissibleStrategy(format!(
                "{} requested policy {to} while in policy {} at t = {}",
                self.strategy.name(),
                self.a,
                self.t
            )));
        }
        if let Some(prev) = self.out.switches.last() {
            if !(self.t > prev.time) {
                return Err(SimError::InadmissibleStrategy(format!("two switches at t = {}", self.t)));
            }
        }
        if let Some(chain) = self.chain {
            let i = state_at(chain, self.t);
            let k = self.model.switch_cost(i, self.a, to);
            self.out.payoff -= (-self.model.discount() * self.t).exp() * k;
        }
        self.out.switches.push(SwitchRecord { time: self.t, from: self.a, to, at_arrival });
        self.out.beliefs.push((self.t, self.pi.clone()));
        self.a = to;
        Ok(())
    }

    /// Moves the state to `target` along the flow, switching on the way when
    /// the strategy asks to.
    fn flow_to(&mut self, target: T) -> Result<(), SimError> {
        while self.t < target {
            let stop = match self.strategy.next_deadline(self.t) {
                Some(d) if !(d > self.t) => {
                    return Err(SimError::InadmissibleStrategy(format!(
                        "deadline {d} is not after the current time {}",
                        self.t
                    )))
                }
                Some(d) if d < target => d,
                _ => target,
            };
            match self.scan_until(stop)? {
                Some((tau, pi_tau, b)) => {
                    self.accrue(tau);
                    self.t = tau;
                    self.pi = pi_tau;
                    self.switch(b, false)?;
                }
                None => {
                    self.pi =
                        flow_x(stop - self.t, &Belief::new(self.pi.clone()).map_err(bad)?, self.model)?.into_inner();
                    self.accrue(stop);
                    self.t = stop;
                    if stop < target {
                        if let Some(b) = self.ask(self.t, &self.pi.clone(), false) {
                            self.switch(b, false)?;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// First time in `(t, stop)` at which the strategy wants to switch, located
    /// on the scan mesh and refined by bisection.
    #[allow(clippy::type_complexity)]
    fn scan_until(&self, stop: T) -> Result<Option<(T, Vec<T>, usize)>, SimError> {
        let Some((h, cache)) = &self.scan else { return Ok(None) };
        let mut t = self.t;
        let mut pi = self.pi.clone();
        while t < stop {
            let (t_next, pi_next) =
                if t + *h < stop { (t + *h, cache.step(&pi).0) } else { (stop, self.flow(stop - t, &pi)?) };
            // a switch exactly at the horizon cannot pay off
            let inside = t_next < self.horizon;
            if inside && self.ask(t_next, &pi_next, false).is_some() {
                let (mut lo, mut hi) = (t, t_next);
                let mut hi_pi = pi_next;
                let tol = *h / T::of(100.0);
                while hi - lo > tol {
                    let mid = lo + (hi - lo) * T::of(0.5);
                    let mid_pi = self.flow(mid - t, &pi)?;
                    if self.ask(mid, &mid_pi, false).is_some() {
                        hi = mid;
                        hi_pi = mid_pi;
                    } else {
                        lo = mid;
                    }
                }
                if hi >= stop {
                    // a crossing at the stop itself is left to the decision taken there
                    return Ok(None);
                }
                let b = self.ask(hi, &hi_pi, false).expect("bisection keeps the upper end inside");
                return Ok(Some((hi, hi_pi, b)));
            }
            t = t_next;
            pi = pi_next;
        }
        Ok(None)
    }

    fn flow(&self, dt: T, pi: &[T]) -> Result<Vec<T>, SimError> {
        Ok(flow_x(dt, &Belief::new(pi.to_vec()).map_err(bad)?, self.model)?.into_inner())
    }
}

fn bad(e: impl std::fmt::Display) -> SimError {
    SimError::Input(e.to_string())
}

/// Runs `strategy` along a given arrival sequence on `[0, horizon]`.
///
/// With a chain the streamed payoff is accumulated; without one (a replay of
/// observed data) only beliefs and switches are produced. Arrival benefits are
/// charged with the policy in force just before the arrival.
pub fn run_controlled<T: Scalar, S: Strategy<T> + ?Sized>(
    model: &SwitchingModel<T>,
    strategy: &S,
    pi0: &Belief<T>,
    a0: usize,
    horizon: T,
    arrivals: &[Arrival<T>],
    chain: Option<&[(T, usize)]>,
) -> Result<ControlledRun<T>, SimError> {
    if a0 >= model.n_policies() || pi0.dim() != model.n_states() {
        return Err(SimError::Input("initial policy or belief does not match the model".into()));
    }
    if let Some(h) = strategy.max_horizon() {
        if horizon > h * (T::one() + T::of(1e-12)) {
            return Err(SimError::InadmissibleStrategy(format!(
                "{} is defined up to horizon {h}, asked for {horizon}",
                strategy.name()
            )));
        }
    }
    let scan = strategy.scan_step().map(|h| (h, FlowCache::new(model, h)));
    if let Some((h, _)) = &scan {
        if !(*h > T::zero()) {
            return Err(SimError::Input(format!("scan step must be positive, got {h}")));
        }
    }
    let mut e = Engine {
        model,
        strategy,
        horizon,
        chain,
        scan,
        t: T::zero(),
        pi: pi0.as_slice().to_vec(),
        a: a0,
        out: ControlledRun { beliefs: vec![(T::zero(), pi0.as_slice().to_vec())], switches: vec![], payoff: T::zero() },
    };
    if let Some(b) = e.ask(T::zero(), &e.pi.clone(), false) {
        e.switch(b, false)?;
    }
    let rho = model.discount();
    for (idx, arr) in arrivals.iter().enumerate() {
        if arr.time < e.t || arr.time > horizon || (idx > 0 && arr.time <= arrivals[idx - 1].time) {
            return Err(FilterError::UnsortedArrivals { index: idx }.into());
        }
        e.flow_to(arr.time)?;
        if chain.is_some() {
            e.out.payoff += (-rho * arr.time).exp() * model.arrival_cost(arr.mark, e.a);
        }
        e.pi = jump_update(&Belief::new(e.pi.clone()).map_err(bad)?, arr.mark, model)?.into_inner();
        e.out.beliefs.push((arr.time, e.pi.clone()));
        if arr.time < horizon {
            if let Some(b) = e.ask(arr.time, &e.pi.clone(), true) {
                e.switch(b, true)?;
            }
        }
    }
    e.flow_to(horizon)?;
    Ok(e.out)
}

/// Simulates path `index` of a Monte Carlo run and applies the strategy.
pub fn run_strategy<T: Scalar, S: Strategy<T> + ?Sized>(
    model: &SwitchingModel<T>,
    strategy: &S,
    pi0: &Belief<T>,
    a0: usize,
    horizon: T,
    seed: u64,
    index: u64,
) -> Result<SamplePath<T>, SimError> {
    let system = simulate_system(model, pi0, horizon, seed, index);
    let run = run_controlled(model, strategy, pi0, a0, horizon, &system.arrivals, Some(&system.chain))?;
    Ok(SamplePath {
        seed,
        index,
        initial_policy: a0,
        system,
        beliefs: run.beliefs,
        switches: run.switches,
        payoff: run.payoff,
    })
}

/// Monte Carlo estimate of an expectation.
#[derive(Debug, Clone, PartialEq)]
pub struct McEstimate<T> {
    pub mean: T,
    /// Sample standard deviation divided by the square root of the count.
    pub std_error: T,
    pub count: usize,
    pub seed: u64,
}

impl<T: Scalar> McEstimate<T> {
    /// Mean and standard error of `samples`, reduced in a fixed order.
    pub fn from_samples(samples: &[T], seed: u64) -> Self {
        let n = samples.len();
        if n == 0 {
            return Self { mean: T::nan(), std_error: T::nan(), count: 0, seed };
        }
        let nf = T::of_usize(n);
        let mean = pairwise_sum(samples) / nf;
        let sq: Vec<T> = samples.iter().map(|&x| (x - mean) * (x - mean)).collect();
        let var = if n > 1 { pairwise_sum(&sq) / T::of_usize(n - 1) } else { T::zero() };
        Self { mean, std_error: (var / nf).sqrt(), count: n, seed }
    }

    /// `|mean - target|` in units of the standard error (0 when both vanish).
    pub fn z_score(&self, target: T) -> T {
        let d = (self.mean - target).abs();
        if self.std_error > T::zero() {
            d / self.std_error
        } else if d <= T::epsilon() * (T::one() + target.abs()) * T::of(16.0) {
            T::zero()
        } else {
            T::infinity()
        }
    }
}

/// Expected discounted payoff of `strategy` from `(pi0, a0)` over `[0, horizon]`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_strategy<T: Scalar, S: Strategy<T> + ?Sized>(
    model: &SwitchingModel<T>,
    strategy: &S,
    pi0: &Belief<T>,
    a0: usize,
    horizon: T,
    paths: usize,
    seed: u64,
) -> Result<McEstimate<T>, SimError> {
    let payoffs = (0..paths as u64)
        .into_par_iter()
        .map(|i| run_strategy(model, strategy, pi0, a0, horizon, seed, i).map(|p| p.payoff))
        .collect::<Result<Vec<T>, _>>()?;
    Ok(McEstimate::from_samples(&payoffs, seed))
}

/// Averages of the filtered belief at one checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointStat<T> {
    pub time: T,
    pub mean: Vec<T>,
    pub std_error: Vec<T>,
    /// `(pi0 exp(t Q))_i`.
    pub exact: Vec<T>,
}

impl<T: Scalar> CheckpointStat<T> {
    /// Largest deviation in standard errors over the components.
    pub fn max_z(&self) -> T {
        (0..self.mean.len())
            .map(|i| {
                McEstimate { mean: self.mean[i], std_error: self.std_error[i], count: 0, seed: 0 }
                    .z_score(self.exact[i])
            })
            .fold(T::zero(), T::max)
    }

    pub fn max_deviation(&self) -> T {
        self.mean.iter().zip(&self.exact).fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }
}

/// Compares path averages of the filter with the unconditional law of the
/// chain at each checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyReport<T> {
    pub paths: usize,
    pub seed: u64,
    pub checkpoints: Vec<CheckpointStat<T>>,
}

impl<T: Scalar> ConsistencyReport<T> {
    pub fn max_z(&self) -> T {
        self.checkpoints.iter().map(CheckpointStat::max_z).fold(T::zero(), T::max)
    }

    pub fn max_deviation(&self) -> T {
        self.checkpoints.iter().map(CheckpointStat::max_deviation).fold(T::zero(), T::max)
    }
}

/// Filter consistency at `T/4`, `T/2` and `T`.
pub fn filter_consistency_check<T: Scalar>(
    model: &SwitchingModel<T>,
    pi0: &Belief<T>,
    horizon: T,
    paths: usize,
    seed: u64,
) -> Result<ConsistencyReport<T>, SimError> {
    let times = [horizon / T::of(4.0), horizon / T::of(2.0), horizon];
    filter_consistency_at(model, pi0, &times, paths, seed)
}

/// Filter consistency at arbitrary checkpoint times.
pub fn filter_consistency_at<T: Scalar>(
    model: &SwitchingModel<T>,
    pi0: &Belief<T>,
    times: &[T],
    paths: usize,
    seed: u64,
) -> Result<ConsistencyReport<T>, SimError> {
    let horizon = times.iter().copied().fold(T::zero(), T::max);
    let m = model.n_states();
    let samples = (0..paths as u64)
        .into_par_iter()
        .map(|i| {
            let sys = simulate_system(model, pi0, horizon, seed, i);
            let tr = crate::filter::filter_path(&sys.arrivals, pi0, horizon, times, model)?;
            Ok(tr.into_iter().map(|s| s.belief.into_inner()).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    let q = model.generator();
    let mut sorted: Vec<T> = times.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let checkpoints = sorted
        .iter()
        .enumerate()
        .map(|(c, &t)| {
            let law = q.scaled(t).expm().left_mul(pi0.as_slice());
            let mut mean = Vec::with_capacity(m);
            let mut se = Vec::with_capacity(m);
            for i in 0..m {
                let xs: Vec<T> = samples.iter().map(|s| s[c][i]).collect();
                let est = McEstimate::from_samples(&xs, seed);
                mean.push(est.mean);
                se.push(est.std_error);
            }
            CheckpointStat { time: t, mean, std_error: se, exact: law }
        })
        .collect();
    Ok(ConsistencyReport { paths, seed, checkpoints })
}

/// Unconditional law `pi0 exp(t Q)` of the hidden chain.
pub fn chain_law<T: Scalar>(model: &SwitchingModel<T>, pi0: &Belief<T>, t: T) -> Vec<T> {
    let q: &Mat<T> = model.generator();
    q.scaled(t).expm().left_mul(pi0.as_slice())
}
