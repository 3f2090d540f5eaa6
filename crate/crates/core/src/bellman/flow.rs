//! Per-node tables of everything the first-jump operator needs along the
//! deterministic flow, sampled on the solver's time mesh.
//!
//! For a start belief `pi` and steps `u_k = k dt`, row entry `k` stores the
//! discounted survival mass `d_k = e^{-rho u_k} s(u_k, pi)`, the discounted
//! running benefit per policy, switching costs at `x(u_k, pi)`, the
//! interpolation stencil of `x(u_k, pi)` and, per mark, the discounted arrival
//! weight together with the stencil of the post-jump belief.
//!
//! Time integrals use product quadrature: on each step the discounted survival
//! `d(u)` is taken exponential between its two sampled values and integrated
//! exactly against the linear interpolant of the remaining integrand. With
//! constant `d` decay rate (one state) only the smooth part is interpolated.

use crate::beliefgrid::{NodeFunction, SimplexLattice};
use crate::filter::{jump_weights, FlowCache};
use crate::model::SwitchingModel;
use crate::Scalar;

#[derive(Debug, Clone)]
pub(crate) struct FlowRow<T> {
    m: usize,
    na: usize,
    nm: usize,
    disc: Vec<T>,
    /// Quadrature weights of the left and right end of each step, applied to
    /// discounted integrands.
    left: Vec<T>,
    right: Vec<T>,
    run: Vec<T>,
    kx: Vec<T>,
    xn: Vec<u32>,
    xw: Vec<T>,
    jw: Vec<T>,
    jn: Vec<u32>,
    js: Vec<T>,
}

/// Weights `(A, B)` with `int_0^h d(u) g(u) du ~ A d0 g(0) + B d1 g(h)`, for
/// `d` exponential through `d0`, `d1` and `g` linear.
pub(crate) fn step_weights<T: Scalar>(h: T, d0: T, d1: T) -> (T, T) {
    let half = T::of(0.5);
    if !(d1 > T::zero()) || !(d0 > T::zero()) {
        return (h * half, T::zero());
    }
    let x = (d0 / d1).ln();
    // (1 - e^-x)/x and (1 - e^-x (1 + x))/x^2
    let (p, q) = if x.abs() < T::of(1e-4) {
        let x2 = x * x;
        (
            T::one() - x * half + x2 / T::of(6.0) - x2 * x / T::of(24.0),
            half - x / T::of(3.0) + x2 / T::of(8.0) - x2 * x / T::of(30.0),
        )
    } else {
        let e = (-x).exp();
        ((T::one() - e) / x, (T::one() - e * (T::one() + x)) / (x * x))
    };
    (h * (p - q), h * q * (d0 / d1))
}

impl<T: Scalar> FlowRow<T> {
    pub fn build(
        model: &SwitchingModel<T>,
        lattice: &SimplexLattice<T>,
        cache: &FlowCache<T>,
        pi: &[T],
        steps: usize,
    ) -> Self {
        let m = model.n_states();
        let na = model.n_policies();
        let nm = model.n_marks();
        let len = steps + 1;
        let mut row = Self {
            m,
            na,
            nm,
            disc: Vec::with_capacity(len),
            left: Vec::with_capacity(steps),
            right: Vec::with_capacity(steps),
            run: Vec::with_capacity(len * na),
            kx: Vec::with_capacity(len * na * na),
            xn: Vec::with_capacity(len * m),
            xw: Vec::with_capacity(len * m),
            jw: Vec::with_capacity(len * nm),
            jn: Vec::with_capacity(len * nm * m),
            js: Vec::with_capacity(len * nm * m),
        };
        let decay = (-model.discount() * cache.dt()).exp();
        let mut x = pi.to_vec();
        let mut d = T::one();
        let mut stencil = Default::default();
        for k in 0..len {
            row.disc.push(d);
            for a in 0..na {
                row.run.push(d * model.effective_cost(&x, a));
            }
            for a in 0..na {
                for b in 0..na {
                    row.kx.push(model.cost_k_raw(a, b, &x));
                }
            }
            lattice.locate_into(&x, &mut stencil);
            row.push_stencil(&stencil, false);
            for j in 0..nm {
                let mut v = jump_weights(&x, j, model);
                let z: T = v.iter().copied().sum();
                if z > T::zero() {
                    v.iter_mut().for_each(|p| *p /= z);
                    lattice.locate_into(&v, &mut stencil);
                    row.jw.push(d * z);
                    row.push_stencil(&stencil, true);
                } else {
                    // the mark cannot occur from this belief
                    row.jw.push(T::zero());
                    row.jn.extend(std::iter::repeat_n(0, m));
                    row.js.extend(std::iter::repeat_n(T::zero(), m));
                }
            }
            if k < steps {
                let (y, s) = cache.step(&x);
                x = y;
                let next = d * s * decay;
                let (l, r) = step_weights(cache.dt(), d, next);
                row.left.push(l);
                row.right.push(r);
                d = next;
            }
        }
        row
    }

    fn push_stencil(&mut self, s: &crate::beliefgrid::Stencil<T>, jump: bool) {
        debug_assert_eq!(s.nodes.len(), self.m);
        let (n, w) = if jump { (&mut self.jn, &mut self.js) } else { (&mut self.xn, &mut self.xw) };
        n.extend(s.nodes.iter().map(|&i| i as u32));
        w.extend_from_slice(&s.weights);
    }

    #[inline]
    pub fn disc(&self, k: usize) -> T {
        self.disc[k]
    }

    /// Weight of the integrand at `u = 0`.
    #[inline]
    pub fn w_start(&self) -> T {
        self.left[0]
    }

    /// Weight of the integrand at an interior point `u_k` of `[0, u_K]`, `K > k`.
    #[inline]
    pub fn w_inner(&self, k: usize) -> T {
        self.right[k - 1] + self.left[k]
    }

    /// Weight of the integrand at the right end `u_k` of `[0, u_k]`.
    #[inline]
    pub fn w_end(&self, k: usize) -> T {
        self.right[k - 1]
    }

    /// `K(a, b, x_k)`.
    #[inline]
    pub fn switch_cost(&self, k: usize, a: usize, b: usize) -> T {
        self.kx[(k * self.na + a) * self.na + b]
    }

    /// Integrand of the running integral at step `k` for every policy:
    /// `e^{-rho u} sum_i m_i (c_i(a) + lambda_i E_i[c1] + lambda_i S_i w(x, a))`.
    #[inline]
    pub fn integrand(&self, k: usize, w: &NodeFunction<T>, out: &mut [T]) {
        let na = self.na;
        out.copy_from_slice(&self.run[k * na..(k + 1) * na]);
        for j in 0..self.nm {
            let om = self.jw[k * self.nm + j];
            if om == T::zero() {
                continue;
            }
            let base = (k * self.nm + j) * self.m;
            for v in 0..self.m {
                let wt = om * self.js[base + v];
                let row = w.row(self.jn[base + v] as usize);
                for a in 0..na {
                    out[a] += wt * row[a];
                }
            }
        }
    }

    /// Interpolated `w(x_k, b)` for every policy.
    #[inline]
    pub fn at_flow(&self, k: usize, w: &NodeFunction<T>, out: &mut [T]) {
        out.iter_mut().for_each(|v| *v = T::zero());
        let base = k * self.m;
        for v in 0..self.m {
            let wt = self.xw[base + v];
            let row = w.row(self.xn[base + v] as usize);
            for (o, &r) in out.iter_mut().zip(row) {
                *o += wt * r;
            }
        }
    }

    /// `max_{b != a} (w(b) - K(a, b, x_k))` and its smallest maximizer.
    #[inline]
    pub fn intervene(&self, k: usize, a: usize, wx: &[T]) -> (T, usize) {
        let mut best = T::neg_infinity();
        let mut arg = usize::MAX;
        for (b, &v) in wx.iter().enumerate() {
            if b != a {
                let c = v - self.switch_cost(k, a, b);
                if c > best {
                    best = c;
                    arg = b;
                }
            }
        }
        (best, arg)
    }
}
