//! Belief filter for the hidden chain.
//!
//! Between arrivals the posterior follows a deterministic flow: with
//! `m(t, pi) = pi exp(t (Q - Lambda))` and survival mass `s = sum_i m_i`, the
//! flowed belief is `x = m / s`. At an arrival with mark `j` the posterior
//! jumps to `pi_i lambda_i nu_ij / sum_k pi_k lambda_k nu_kj`.

use thiserror::Error;

use crate::linalg::Mat;
use crate::model::{Belief, SwitchingModel};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FilterError {
    #[error("negative time {0}")]
    NegativeTime(f64),
    #[error("survival mass underflowed at t = {0}; chain shorter steps")]
    DegenerateMass(f64),
    #[error("mark {mark} has zero likelihood under the current belief")]
    ImpossibleMark { mark: usize },
    #[error("arrival {index} is not strictly after its predecessor or lies outside [0, T]")]
    UnsortedArrivals { index: usize },
    #[error("mark index {mark} out of range")]
    UnknownMark { mark: usize },
}

/// An observed arrival: time and zero-based mark index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arrival<T> {
    pub time: T,
    pub mark: usize,
}

/// `m(t, pi)` together with its total mass `s(t, pi) = P(no arrival in [0, t])`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnnormalizedBelief<T> {
    pub m: Vec<T>,
    pub s: T,
}

impl<T: Scalar> UnnormalizedBelief<T> {
    fn from_vec(m: Vec<T>) -> Self {
        let s = m.iter().copied().sum();
        Self { m, s }
    }
}

/// `exp(dt (Q - Lambda))` for a fixed step, reused across many propagations.
#[derive(Debug, Clone)]
pub struct FlowCache<T> {
    dt: T,
    p: Mat<T>,
}

impl<T: Scalar> FlowCache<T> {
    pub fn new(model: &SwitchingModel<T>, dt: T) -> Self {
        assert!(dt >= T::zero(), "flow step must be nonnegative");
        Self { dt, p: model.sub_generator().scaled(dt).expm() }
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    pub fn matrix(&self) -> &Mat<T> {
        &self.p
    }

    /// Advances an unnormalized vector by one step.
    pub fn advance(&self, m: &[T]) -> Vec<T> {
        self.p.left_mul(m)
    }

    /// Advances a belief by one step, returning the flowed belief and the
    /// one-step survival factor `s(dt, x)`.
    pub fn step(&self, x: &[T]) -> (Vec<T>, T) {
        let mut y = self.p.left_mul(x);
        let s: T = y.iter().copied().sum();
        for v in &mut y {
            *v = (*v / s).max(T::zero());
        }
        (y, s)
    }
}

/// `pi exp(t (Q - Lambda))`.
pub fn propagate_m<T: Scalar>(
    t: T,
    pi: &Belief<T>,
    model: &SwitchingModel<T>,
) -> Result<UnnormalizedBelief<T>, FilterError> {
    if t < T::zero() {
        return Err(FilterError::NegativeTime(t.as_f64()));
    }
    if t == T::zero() {
        return Ok(UnnormalizedBelief::from_vec(pi.as_slice().to_vec()));
    }
    let p = model.sub_generator().scaled(t).expm();
    Ok(UnnormalizedBelief::from_vec(p.left_mul(pi.as_slice())))
}

/// Longest single step taken by [`flow_x`] before renormalizing.
pub fn chain_step<T: Scalar>(model: &SwitchingModel<T>) -> T {
    T::of(5.0) / model.lambda_max()
}

/// Flowed belief `x(t, pi)`. Long horizons are split into steps of at most
/// `5 / lambda_max` with renormalization in between, so the survival mass
/// never underflows.
pub fn flow_x<T: Scalar>(t: T, pi: &Belief<T>, model: &SwitchingModel<T>) -> Result<Belief<T>, FilterError> {
    if t < T::zero() {
        return Err(FilterError::NegativeTime(t.as_f64()));
    }
    let h = chain_step(model);
    let n = (t / h).ceil().to_usize().unwrap_or(1).max(1);
    let step = FlowCache::new(model, t / T::of_usize(n));
    let mut x = pi.as_slice().to_vec();
    for _ in 0..n {
        let (y, s) = step.step(&x);
        if !(s > T::min_positive_value()) || !s.is_finite() {
            return Err(FilterError::DegenerateMass(t.as_f64()));
        }
        x = y;
    }
    Belief::from_unnormalized(x).map_err(|_| FilterError::DegenerateMass(t.as_f64()))
}

/// Right side of the belief ODE:
/// `mu_i = sum_j q_ji pi_j - lambda_i pi_i + pi_i sum_j lambda_j pi_j`.
pub fn flow_drift<T: Scalar>(pi: &Belief<T>, model: &SwitchingModel<T>) -> Vec<T> {
    drift_raw(pi.as_slice(), model)
}

pub(crate) fn drift_raw<T: Scalar>(pi: &[T], model: &SwitchingModel<T>) -> Vec<T> {
    let q = model.generator();
    let rate: T = pi.iter().zip(model.intensities()).map(|(&p, &l)| p * l).sum();
    let inflow = q.left_mul(pi);
    (0..pi.len()).map(|i| inflow[i] - model.intensity(i) * pi[i] + pi[i] * rate).collect()
}

/// Unnormalized jump weights `pi_i lambda_i nu_ij`.
pub(crate) fn jump_weights<T: Scalar>(pi: &[T], mark: usize, model: &SwitchingModel<T>) -> Vec<T> {
    pi.iter().enumerate().map(|(i, &p)| p * model.intensity(i) * model.mark_prob(i, mark)).collect()
}

/// Posterior after observing an arrival with mark index `mark`.
pub fn jump_update<T: Scalar>(
    pi: &Belief<T>,
    mark: usize,
    model: &SwitchingModel<T>,
) -> Result<Belief<T>, FilterError> {
    jump_raw(pi.as_slice(), mark, model).map(|v| Belief::from_unnormalized(v).expect("positive mass"))
}

pub(crate) fn jump_raw<T: Scalar>(pi: &[T], mark: usize, model: &SwitchingModel<T>) -> Result<Vec<T>, FilterError> {
    if mark >= model.n_marks() {
        return Err(FilterError::UnknownMark { mark });
    }
    let mut w = jump_weights(pi, mark, model);
    let z: T = w.iter().copied().sum();
    if !(z > T::zero()) {
        return Err(FilterError::ImpossibleMark { mark });
    }
    for v in &mut w {
        *v /= z;
    }
    Ok(w)
}

/// One sample of a filtered trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefSample<T> {
    pub time: T,
    pub belief: Belief<T>,
}

/// Runs the filter along an observed arrival sequence and samples the
/// (right-continuous) posterior at each time in `mesh`.
///
/// Mesh points after `horizon` are ignored. At an arrival time the sample is
/// the post-jump belief.
pub fn filter_path<T: Scalar>(
    arrivals: &[Arrival<T>],
    pi0: &Belief<T>,
    horizon: T,
    mesh: &[T],
    model: &SwitchingModel<T>,
) -> Result<Vec<BeliefSample<T>>, FilterError> {
    let mut prev = T::zero();
    for (index, a) in arrivals.iter().enumerate() {
        let bad_order = if index == 0 { a.time < T::zero() } else { a.time <= prev };
        if bad_order || a.time > horizon {
            return Err(FilterError::UnsortedArrivals { index });
        }
        prev = a.time;
    }
    let mut mesh: Vec<T> = mesh.iter().copied().filter(|&t| t >= T::zero() && t <= horizon).collect();
    mesh.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut out = Vec::with_capacity(mesh.len());
    let mut anchor_t = T::zero();
    let mut anchor = pi0.clone();
    let mut next = 0;
    for &t in &mesh {
        while next < arrivals.len() && arrivals[next].time <= t {
            let a = arrivals[next];
            let before = flow_x(a.time - anchor_t, &anchor, model)?;
            anchor = jump_update(&before, a.mark, model)?;
            anchor_t = a.time;
            next += 1;
        }
        out.push(BeliefSample { time: t, belief: flow_x(t - anchor_t, &anchor, model)? });
    }
    Ok(out)
}

/// Stationary point of the flow: the normalized dominant left eigenvector of
/// `Q - Lambda`, found by power iteration on `exp(Q - Lambda)`.
pub fn flow_fixed_point<T: Scalar>(model: &SwitchingModel<T>) -> Belief<T> {
    let unit = T::one() / model.lambda_max().max(T::one());
    let cache = FlowCache::new(model, unit);
    let mut x = Belief::<T>::uniform(model.n_states()).into_inner();
    for _ in 0..200_000 {
        let (y, _) = cache.step(&x);
        let diff = x.iter().zip(&y).fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()));
        x = y;
        if diff <= T::epsilon() * T::of(4.0) {
            break;
        }
    }
    Belief::from_unnormalized(x).expect("positive mass")
}
