//! Problem instance: hidden chain, modulated marked arrivals, benefits and
//! switching costs.
//!
//! A [`ModelParams`] is a plain, unchecked bag of numbers. [`SwitchingModel`]
//! is only obtainable through [`SwitchingModel::validate`], which checks every
//! structural assumption the solver relies on and caches derived constants.

mod belief;
pub mod config;

use std::fmt;

use thiserror::Error;

pub use belief::{Belief, BeliefError};

use crate::linalg::Mat;
use crate::Scalar;

/// Smallest admissible off-diagonal switching cost.
pub const MIN_SWITCH_COST: f64 = 1e-12;

/// Unvalidated model data. Indices are zero-based throughout.
#[derive(Debug, Clone)]
pub struct ModelParams<T> {
    pub states: Vec<String>,
    /// Generator of the hidden chain, `m x m`.
    pub generator: Vec<Vec<T>>,
    /// Arrival intensity per hidden state.
    pub intensities: Vec<T>,
    /// Mark values `y_1..y_d`.
    pub marks: Vec<T>,
    /// `m x d`, row `i` is the mark law in state `i`.
    pub mark_dist: Vec<Vec<T>>,
    pub policies: Vec<String>,
    /// `m x |A|` running benefit rates.
    pub running_cost: Vec<Vec<T>>,
    /// `d x |A|` benefit collected per arrival carrying mark `j`.
    pub arrival_cost: Option<Vec<Vec<T>>>,
    /// `m x |A| x |A|` switching costs.
    pub switch_cost: Vec<Vec<Vec<T>>>,
    pub discount: T,
}

/// One failed structural check.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Violation {
    #[error("{what}: expected {expected}, got {got}")]
    Shape { what: &'static str, expected: String, got: String },
    #[error("{what} contains a non-finite entry")]
    NonFinite { what: &'static str },
    #[error("generator row {row} is not a rate row ({detail})")]
    NonGenerator { row: usize, detail: String },
    #[error("mark distribution row {row} is not a probability vector")]
    BadStochasticRow { row: usize },
    #[error("intensity of state {state} is {value}, must be > 0")]
    NonPositiveIntensity { state: usize, value: f64 },
    #[error(
        "switching costs violate the triangle inequality in state {state}: \
         K({a},{b}) + K({b},{c}) < K({a},{c})"
    )]
    TriangleViolation { state: usize, a: usize, b: usize, c: usize },
    #[error("switching cost K_{state}({a},{b}) = {value} must exceed {MIN_SWITCH_COST}")]
    NonPositiveSwitchCost { state: usize, a: usize, b: usize, value: f64 },
    #[error("switching cost K_{state}({a},{a}) must be zero")]
    NonZeroSelfSwitch { state: usize, a: usize },
    #[error("at least two policies are required, got {0}")]
    TooFewPolicies(usize),
    #[error("discount rate must be >= 0, got {0}")]
    NegativeDiscount(f64),
}

/// Every violation found while validating a model.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "model validation failed ({} problem(s)):", self.violations.len())?;
        for v in &self.violations {
            writeln!(f, "  - {v}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ValidationReport {}

/// A validated problem instance. Immutable and shareable across threads.
#[derive(Debug, Clone)]
pub struct SwitchingModel<T> {
    states: Vec<String>,
    policies: Vec<String>,
    generator: Mat<T>,
    intensities: Vec<T>,
    marks: Vec<T>,
    mark_dist: Mat<T>,
    running_cost: Mat<T>,
    arrival_cost: Option<Mat<T>>,
    // flat [state][from][to]
    switch_cost: Vec<T>,
    discount: T,
    // derived
    sub_generator: Mat<T>,
    // [state][policy]: c_i(a) + lambda_i * sum_j nu_ij c1_j(a)
    effective_rate: Mat<T>,
    cmax: T,
    lambda_max: T,
    lambda_min: T,
    k0: T,
}

impl<T: Scalar> SwitchingModel<T> {
    /// Checks every model invariant. On failure all violations are reported.
    pub fn validate(p: ModelParams<T>) -> Result<Self, ValidationReport> {
        let mut v = Vec::new();
        let m = p.states.len();
        let na = p.policies.len();
        let d = p.marks.len();

        let shape = |v: &mut Vec<Violation>, what, expected: String, got: String| {
            v.push(Violation::Shape { what, expected, got })
        };
        if m == 0 {
            shape(&mut v, "states", ">= 1".into(), "0".into());
        }
        if d == 0 {
            shape(&mut v, "marks", ">= 1".into(), "0".into());
        }
        if na < 2 {
            v.push(Violation::TooFewPolicies(na));
        }
        let check_mat = |v: &mut Vec<Violation>, what, x: &Vec<Vec<T>>, r: usize, c: usize| {
            if x.len() != r || x.iter().any(|row| row.len() != c) {
                let got = format!("{}x{:?}", x.len(), x.iter().map(Vec::len).collect::<Vec<_>>());
                shape(v, what, format!("{r}x{c}"), got);
                false
            } else if x.iter().flatten().any(|e| !e.is_finite()) {
                v.push(Violation::NonFinite { what });
                false
            } else {
                true
            }
        };
        let gen_ok = check_mat(&mut v, "generator", &p.generator, m, m);
        let nu_ok = check_mat(&mut v, "mark distribution", &p.mark_dist, m, d);
        check_mat(&mut v, "running cost", &p.running_cost, m, na);
        if let Some(c1) = &p.arrival_cost {
            check_mat(&mut v, "arrival cost", c1, d, na);
        }
        if p.intensities.len() != m {
            shape(&mut v, "intensities", m.to_string(), p.intensities.len().to_string());
        }
        if p.marks.iter().any(|y| !y.is_finite()) {
            v.push(Violation::NonFinite { what: "marks" });
        }
        let k_ok =
            p.switch_cost.len() == m && p.switch_cost.iter().all(|s| s.len() == na && s.iter().all(|r| r.len() == na));
        if !k_ok {
            shape(&mut v, "switching cost", format!("{m}x{na}x{na}"), "mismatched".into());
        }
        if !(p.discount >= T::zero()) || !p.discount.is_finite() {
            v.push(Violation::NegativeDiscount(p.discount.as_f64()));
        }

        if gen_ok {
            for (row, q) in p.generator.iter().enumerate() {
                let scale = q.iter().fold(T::one(), |s, x| s + x.abs());
                let sum: T = q.iter().copied().sum();
                if let Some((j, x)) = q.iter().enumerate().find(|&(j, x)| j != row && *x < T::zero()) {
                    v.push(Violation::NonGenerator {
                        row,
                        detail: format!("negative off-diagonal rate q[{row}][{j}] = {x}"),
                    });
                } else if sum.abs() > T::roundoff() * scale {
                    v.push(Violation::NonGenerator { row, detail: format!("row sum {sum} != 0") });
                }
            }
        }
        if nu_ok {
            for (row, r) in p.mark_dist.iter().enumerate() {
                let sum: T = r.iter().copied().sum();
                let tol = T::roundoff() * T::of_usize(d.max(1));
                if r.iter().any(|x| *x < T::zero()) || (sum - T::one()).abs() > tol {
                    v.push(Violation::BadStochasticRow { row });
                }
            }
        }
        if p.intensities.len() == m {
            for (state, &l) in p.intensities.iter().enumerate() {
                if !(l > T::zero()) || !l.is_finite() {
                    v.push(Violation::NonPositiveIntensity { state, value: l.as_f64() });
                }
            }
        }
        let mut k0 = T::infinity();
        if k_ok {
            if p.switch_cost.iter().flatten().flatten().any(|x| !x.is_finite()) {
                v.push(Violation::NonFinite { what: "switching cost" });
            }
            let floor = T::of(MIN_SWITCH_COST);
            for (state, ks) in p.switch_cost.iter().enumerate() {
                for a in 0..na {
                    if ks[a][a] != T::zero() {
                        v.push(Violation::NonZeroSelfSwitch { state, a });
                    }
                    for b in 0..na {
                        if a != b {
                            k0 = k0.min(ks[a][b]);
                            if !(ks[a][b] > floor) {
                                v.push(Violation::NonPositiveSwitchCost { state, a, b, value: ks[a][b].as_f64() });
                            }
                        }
                    }
                }
                for a in 0..na {
                    for b in 0..na {
                        for c in 0..na {
                            let lhs = ks[a][b] + ks[b][c];
                            let slack = T::roundoff() * (T::one() + ks[a][c].abs());
                            if lhs + slack < ks[a][c] {
                                v.push(Violation::TriangleViolation { state, a, b, c });
                            }
                        }
                    }
                }
            }
        }

        if !v.is_empty() {
            return Err(ValidationReport { violations: v });
        }

        let generator = Mat::from_rows(&p.generator);
        let mark_dist = Mat::from_rows(&p.mark_dist);
        let running_cost = Mat::from_rows(&p.running_cost);
        let arrival_cost = p.arrival_cost.as_ref().map(|c| Mat::from_rows(c));
        let sub_generator = generator.sub(&Mat::diag(&p.intensities));
        let mut effective_rate = Mat::zeros(m, na);
        let mut cmax = T::zero();
        for i in 0..m {
            for a in 0..na {
                let (mut mean, mut mean_abs) = (T::zero(), T::zero());
                if let Some(c1) = &arrival_cost {
                    for j in 0..d {
                        mean += mark_dist[(i, j)] * c1[(j, a)];
                        mean_abs += mark_dist[(i, j)] * c1[(j, a)].abs();
                    }
                }
                let l = p.intensities[i];
                effective_rate[(i, a)] = running_cost[(i, a)] + l * mean;
                cmax = cmax.max(running_cost[(i, a)].abs() + l * mean_abs);
            }
        }
        let lambda_max = p.intensities.iter().copied().fold(T::zero(), T::max);
        let lambda_min = p.intensities.iter().copied().fold(T::infinity(), T::min);
        let switch_cost = p.switch_cost.into_iter().flatten().flatten().collect();

        Ok(Self {
            states: p.states,
            policies: p.policies,
            generator,
            intensities: p.intensities,
            marks: p.marks,
            mark_dist,
            running_cost,
            arrival_cost,
            switch_cost,
            discount: p.discount,
            sub_generator,
            effective_rate,
            cmax,
            lambda_max,
            lambda_min,
            k0,
        })
    }

    /// Number of hidden states `m`.
    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn n_policies(&self) -> usize {
        self.policies.len()
    }

    pub fn n_marks(&self) -> usize {
        self.marks.len()
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn policies(&self) -> &[String] {
        &self.policies
    }

    pub fn policy_index(&self, label: &str) -> Option<usize> {
        self.policies.iter().position(|p| p == label)
    }

    pub fn generator(&self) -> &Mat<T> {
        &self.generator
    }

    /// `Q - diag(lambda)`.
    pub fn sub_generator(&self) -> &Mat<T> {
        &self.sub_generator
    }

    pub fn intensities(&self) -> &[T] {
        &self.intensities
    }

    pub fn intensity(&self, i: usize) -> T {
        self.intensities[i]
    }

    pub fn marks(&self) -> &[T] {
        &self.marks
    }

    /// `P{Y = y_j | M = i}`.
    pub fn mark_prob(&self, i: usize, j: usize) -> T {
        self.mark_dist[(i, j)]
    }

    pub fn running_cost(&self, i: usize, a: usize) -> T {
        self.running_cost[(i, a)]
    }

    /// Per-arrival benefit for mark `j` under policy `a` (zero when absent).
    pub fn arrival_cost(&self, j: usize, a: usize) -> T {
        self.arrival_cost.as_ref().map_or(T::zero(), |c| c[(j, a)])
    }

    pub fn has_arrival_cost(&self) -> bool {
        self.arrival_cost.is_some()
    }

    /// `K_i(a, b)`.
    pub fn switch_cost(&self, i: usize, a: usize, b: usize) -> T {
        let na = self.policies.len();
        self.switch_cost[(i * na + a) * na + b]
    }

    pub fn discount(&self) -> T {
        self.discount
    }

    /// Benefit rate in state `i` under policy `a`, including the expected
    /// per-arrival benefit `lambda_i * E_i[c1(Y, a)]`.
    pub fn effective_rate(&self, i: usize, a: usize) -> T {
        self.effective_rate[(i, a)]
    }

    /// Uniform bound on the absolute benefit rate (arrival benefits included).
    pub fn cmax(&self) -> T {
        self.cmax
    }

    pub fn lambda_max(&self) -> T {
        self.lambda_max
    }

    pub fn lambda_min(&self) -> T {
        self.lambda_min
    }

    /// Smallest off-diagonal switching cost.
    pub fn k0(&self) -> T {
        self.k0
    }

    /// `C(pi, a) = sum_i c_i(a) pi_i`.
    pub fn cost_c(&self, pi: &Belief<T>, a: usize) -> T {
        pi.as_slice().iter().enumerate().map(|(i, &p)| self.running_cost[(i, a)] * p).sum()
    }

    /// `K(a, b, pi) = sum_i K_i(a, b) pi_i`; zero when `a == b`.
    pub fn cost_k(&self, a: usize, b: usize, pi: &Belief<T>) -> T {
        self.cost_k_raw(a, b, pi.as_slice())
    }

    pub(crate) fn cost_k_raw(&self, a: usize, b: usize, pi: &[T]) -> T {
        if a == b {
            return T::zero();
        }
        pi.iter().enumerate().map(|(i, &p)| self.switch_cost(i, a, b) * p).sum()
    }

    /// Expected benefit rate with arrival benefits folded in, `sum_i pi_i * effective_rate(i, a)`.
    pub fn effective_cost(&self, pi: &[T], a: usize) -> T {
        pi.iter().enumerate().map(|(i, &p)| self.effective_rate[(i, a)] * p).sum()
    }

    /// Uniform bound on `|U|` for horizon `horizon` (or infinite horizon when `None`).
    pub fn value_bound(&self, horizon: Option<T>) -> T {
        let rho = self.discount;
        match horizon {
            Some(t) if rho > T::zero() => self.cmax * (T::one() - (-rho * t).exp()) / rho,
            Some(t) => self.cmax * t,
            None => self.cmax / rho,
        }
    }

    /// Converts to another precision. Mark rows are renormalized and
    /// generator diagonals recomputed in the target precision, then the result
    /// is re-validated.
    pub fn cast<U: Scalar>(&self) -> Result<SwitchingModel<U>, ValidationReport> {
        let mut p: ModelParams<U> = self.params().cast();
        for row in &mut p.mark_dist {
            let z: U = row.iter().copied().sum();
            row.iter_mut().for_each(|x| *x /= z);
        }
        for (i, row) in p.generator.iter_mut().enumerate() {
            let off: U = row.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &x)| x).sum();
            row[i] = -off;
        }
        SwitchingModel::validate(p)
    }

    /// The raw parameters this model was validated from.
    pub fn params(&self) -> ModelParams<T> {
        let m = self.n_states();
        let na = self.n_policies();
        ModelParams {
            states: self.states.clone(),
            generator: self.generator.to_rows(),
            intensities: self.intensities.clone(),
            marks: self.marks.clone(),
            mark_dist: self.mark_dist.to_rows(),
            policies: self.policies.clone(),
            running_cost: self.running_cost.to_rows(),
            arrival_cost: self.arrival_cost.as_ref().map(Mat::to_rows),
            switch_cost: (0..m)
                .map(|i| (0..na).map(|a| (0..na).map(|b| self.switch_cost(i, a, b)).collect()).collect())
                .collect(),
            discount: self.discount,
        }
    }
}

impl<T: Scalar> ModelParams<T> {
    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        let c = |x: &T| U::of(x.as_f64());
        let v = |x: &Vec<T>| x.iter().map(c).collect::<Vec<U>>();
        let mm = |x: &Vec<Vec<T>>| x.iter().map(v).collect::<Vec<_>>();
        ModelParams {
            states: self.states.clone(),
            generator: mm(&self.generator),
            intensities: v(&self.intensities),
            marks: v(&self.marks),
            mark_dist: mm(&self.mark_dist),
            policies: self.policies.clone(),
            running_cost: mm(&self.running_cost),
            arrival_cost: self.arrival_cost.as_ref().map(mm),
            switch_cost: self.switch_cost.iter().map(mm).collect(),
            discount: c(&self.discount),
        }
    }

    /// Broadcasts a state-independent `|A| x |A|` cost matrix over states.
    pub fn broadcast_switch_cost(m: usize, k: &[Vec<T>]) -> Vec<Vec<Vec<T>>> {
        vec![k.to_vec(); m]
    }

    /// Uniform cost `k` for every `a != b`.
    pub fn uniform_switch_cost(m: usize, na: usize, k: T) -> Vec<Vec<Vec<T>>> {
        let mat: Vec<Vec<T>> = (0..na).map(|a| (0..na).map(|b| if a == b { T::zero() } else { k }).collect()).collect();
        Self::broadcast_switch_cost(m, &mat)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundled;

    fn onoff_params() -> ModelParams<f64> {
        bundled::onoff::<f64>().params()
    }

    #[test]
    fn accepts_bundled_examples() {
        let _ = bundled::onoff::<f64>();
        let fed = bundled::fed::<f64>();
        let cc = bundled::callcenter::<f64>();
        assert_eq!(fed.n_states(), 3);
        assert_eq!(cc.n_marks(), 3);
    }

    #[test]
    fn onoff_is_valid_and_caches_constants() {
        let m = SwitchingModel::validate(onoff_params()).unwrap();
        assert_eq!(m.cmax(), 1.0);
        assert_eq!(m.lambda_max(), 4.0);
        assert_eq!(m.lambda_min(), 1.0);
        assert_eq!(m.k0(), 0.05);
    }

    #[test]
    fn rejects_bad_row_sum() {
        let mut p = onoff_params();
        p.generator = vec![vec![-1.0, 1.0], vec![3.0, -2.0]];
        let err = SwitchingModel::validate(p).unwrap_err();
        assert!(matches!(err.violations[0], Violation::NonGenerator { row: 1, .. }));
    }

    #[test]
    fn rejects_negative_off_diagonal() {
        let mut p = onoff_params();
        p.generator = vec![vec![1.0, -1.0], vec![3.0, -3.0]];
        let err = SwitchingModel::validate(p).unwrap_err();
        assert!(matches!(err.violations[0], Violation::NonGenerator { row: 0, .. }));
    }

    #[test]
    fn reports_triangle_violation_triple() {
        let mut p = bundled::fed::<f64>().params();
        // policies 1,2,3 in one-based terms -> 0,1,2
        let mut k = vec![vec![0.0, 1.0, 5.0], vec![1.0, 0.0, 1.0], vec![5.0, 1.0, 0.0]];
        p.switch_cost = ModelParams::broadcast_switch_cost(3, &k);
        let err = SwitchingModel::validate(p.clone()).unwrap_err();
        assert!(err.violations.contains(&Violation::TriangleViolation { state: 0, a: 0, b: 1, c: 2 }));
        k[0][2] = 2.0;
        k[2][0] = 2.0;
        p.switch_cost = ModelParams::broadcast_switch_cost(3, &k);
        assert!(SwitchingModel::validate(p).is_ok());
    }

    #[test]
    fn rejects_zero_switch_cost_and_bad_rows() {
        let mut p = onoff_params();
        p.switch_cost = ModelParams::uniform_switch_cost(2, 2, 0.0);
        p.intensities = vec![1.0, 0.0];
        p.mark_dist = vec![vec![1.0], vec![0.9]];
        let err = SwitchingModel::validate(p).unwrap_err();
        let has = |f: &dyn Fn(&Violation) -> bool| err.violations.iter().any(f);
        assert!(has(&|v| matches!(v, Violation::NonPositiveSwitchCost { .. })));
        assert!(has(&|v| matches!(v, Violation::NonPositiveIntensity { state: 1, .. })));
        assert!(has(&|v| matches!(v, Violation::BadStochasticRow { row: 1 })));
    }

    #[test]
    fn rejects_single_policy() {
        let mut p = onoff_params();
        p.policies.truncate(1);
        p.running_cost = vec![vec![1.0], vec![0.0]];
        p.switch_cost = vec![vec![vec![0.0]]; 2];
        let err = SwitchingModel::validate(p).unwrap_err();
        assert!(err.violations.contains(&Violation::TooFewPolicies(1)));
    }

    #[test]
    fn cost_c_examples() {
        let m = bundled::onoff::<f64>();
        assert_eq!(m.cost_c(&Belief::vertex(2, 0), 0), 1.0);
        for i in 0..2 {
            for a in 0..2 {
                assert_eq!(m.cost_c(&Belief::vertex(2, i), a), m.running_cost(i, a));
            }
        }
        let fed = bundled::fed::<f64>();
        let u = Belief::uniform(3);
        assert!((fed.cost_c(&u, 0) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn cost_k_examples() {
        let m = bundled::onoff::<f64>();
        let pi = Belief::new(vec![0.3, 0.7]).unwrap();
        assert_eq!(m.cost_k(1, 1, &pi), 0.0);
        assert!((m.cost_k(0, 1, &pi) - 0.05).abs() < 1e-15);
        let cc = bundled::callcenter::<f64>();
        let pi = Belief::new(vec![0.2, 0.5, 0.3]).unwrap();
        assert!((cc.cost_k(0, 1, &pi) - 2.0).abs() < 1e-14);
        assert!((cc.cost_k(1, 0, &pi) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn callcenter_effective_rates_include_arrivals() {
        let cc = bundled::callcenter::<f64>();
        // state 3, one agent: -30 - 4 * (6/4 + 12/4 + 24/2)
        assert!((cc.effective_rate(2, 0) - (-30.0 - 66.0)).abs() < 1e-12);
        assert!((cc.effective_rate(2, 1) - (-50.0 - 33.0)).abs() < 1e-12);
        assert!((cc.cmax() - 96.0).abs() < 1e-12);
    }

    #[test]
    fn f32_models_validate() {
        let m = bundled::callcenter::<f32>();
        assert_eq!(m.n_states(), 3);
        let back: SwitchingModel<f64> = m.cast().unwrap();
        assert!((back.discount() - 0.5).abs() < 1e-7);
    }
}
