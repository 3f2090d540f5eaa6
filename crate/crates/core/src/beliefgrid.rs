//! Regular lattices on the probability simplex and piecewise-linear
//! interpolation over them.
//!
//! Nodes are the points `k / N` with `k` a nonnegative integer `m`-tuple
//! summing to `N`, stored in ascending lexicographic order of `k`.
//! Interpolation uses the Freudenthal (Kuhn) triangulation expressed in the
//! cumulative coordinates `z_p = N (pi_1 + ... + pi_p)`, `p < m`: each cell is
//! located by flooring `z` and sorting the fractional parts.

use std::io::{Read, Write};
use std::sync::Arc;

use thiserror::Error;

use crate::model::Belief;
use crate::Scalar;

/// Default cap on the number of lattice nodes.
pub const DEFAULT_MAX_NODES: usize = 4_000_000;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("lattice with m = {m}, N = {n} would have {count} nodes (cap {cap})")]
    ResolutionTooLarge { m: usize, n: usize, count: u128, cap: usize },
    #[error("lattice needs m >= 1 and N >= 1 (got m = {m}, N = {n})")]
    Degenerate { m: usize, n: usize },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("node function table does not match the lattice: {0}")]
    Mismatch(String),
}

/// Resolution used when none is requested.
pub fn default_resolution(m: usize) -> usize {
    match m {
        0 | 1 => 1,
        2 => 200,
        3 => 60,
        4 => 20,
        _ => 8,
    }
}

/// `C(n, k)` in 128-bit arithmetic, saturating.
fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u128) / (i as u128 + 1);
    }
    acc
}

/// Interpolation stencil: lattice nodes and nonnegative weights summing to one.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Stencil<T> {
    pub nodes: Vec<usize>,
    pub weights: Vec<T>,
}

impl<T: Scalar> Stencil<T> {
    /// Weighted sum of `f(node)`.
    #[inline]
    pub fn apply(&self, f: impl Fn(usize) -> T) -> T {
        self.nodes.iter().zip(&self.weights).fold(T::zero(), |acc, (&n, &w)| acc + w * f(n))
    }
}

#[derive(Debug, Clone)]
pub struct SimplexLattice<T> {
    m: usize,
    n: usize,
    count: usize,
    tuples: Vec<u32>,
    coords: Vec<T>,
    // binom[r][d] = C(r, d) for r <= n + m, d <= m
    binom: Vec<Vec<usize>>,
}

impl<T: Scalar> SimplexLattice<T> {
    pub fn build(m: usize, n: usize) -> Result<Self, GridError> {
        Self::build_capped(m, n, DEFAULT_MAX_NODES)
    }

    pub fn build_capped(m: usize, n: usize, cap: usize) -> Result<Self, GridError> {
        if m == 0 || n == 0 {
            return Err(GridError::Degenerate { m, n });
        }
        let count = binomial(n + m - 1, m - 1);
        if count > cap as u128 {
            return Err(GridError::ResolutionTooLarge { m, n, count, cap });
        }
        let count = count as usize;
        let binom = (0..=n + m).map(|r| (0..=m).map(|d| binomial(r, d) as usize).collect()).collect();

        let mut tuples = Vec::with_capacity(count * m);
        let mut k = vec![0u32; m];
        k[m - 1] = n as u32;
        loop {
            tuples.extend_from_slice(&k);
            // next tuple in ascending lexicographic order with the same sum
            let Some(p) = (0..m - 1).rev().find(|&p| k[p + 1..].iter().any(|&v| v > 0)) else {
                break;
            };
            k[p] += 1;
            let rest: u32 = n as u32 - k[..=p].iter().sum::<u32>();
            for v in &mut k[p + 1..] {
                *v = 0;
            }
            k[m - 1] = rest;
        }
        debug_assert_eq!(tuples.len(), count * m);
        let inv = T::one() / T::of_usize(n);
        let coords = tuples.iter().map(|&v| T::of_usize(v as usize) * inv).collect();
        Ok(Self { m, n, count, tuples, coords, binom })
    }

    /// Lattice with the default resolution for dimension `m`.
    pub fn with_default_resolution(m: usize) -> Result<Self, GridError> {
        Self::build(m, default_resolution(m))
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn resolution(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Belief coordinates of node `idx`.
    pub fn node(&self, idx: usize) -> &[T] {
        &self.coords[idx * self.m..(idx + 1) * self.m]
    }

    pub fn node_belief(&self, idx: usize) -> Belief<T> {
        Belief::new(self.node(idx).to_vec()).expect("lattice nodes are beliefs")
    }

    /// Integer tuple of node `idx`.
    pub fn tuple(&self, idx: usize) -> &[u32] {
        &self.tuples[idx * self.m..(idx + 1) * self.m]
    }

    /// Flat index of an integer tuple summing to `N`.
    pub fn index_of(&self, k: &[u32]) -> usize {
        debug_assert_eq!(k.len(), self.m);
        let mut rank = 0;
        let mut rem = self.n;
        for (p, &kp) in k[..self.m - 1].iter().enumerate() {
            let d = self.m - p - 1;
            let kp = kp as usize;
            rank += self.binom[rem + d][d] - self.binom[rem - kp + d][d];
            rem -= kp;
        }
        rank
    }

    /// Index of vertex `e_i`.
    pub fn vertex_index(&self, i: usize) -> usize {
        let mut k = vec![0; self.m];
        k[i] = self.n as u32;
        self.index_of(&k)
    }

    /// Nodes reachable by moving one unit of mass between two coordinates.
    pub fn neighbors(&self, idx: usize) -> Vec<usize> {
        let mut k = self.tuple(idx).to_vec();
        let mut out = Vec::new();
        for i in 0..self.m {
            if k[i] == 0 {
                continue;
            }
            for j in 0..self.m {
                if i != j {
                    k[i] -= 1;
                    k[j] += 1;
                    out.push(self.index_of(&k));
                    k[j] -= 1;
                    k[i] += 1;
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Cell containing `pi` and its barycentric weights.
    pub fn locate(&self, pi: &[T]) -> Stencil<T> {
        let mut s = Stencil::default();
        self.locate_into(pi, &mut s);
        s
    }

    /// Like [`locate`](Self::locate), reusing the buffers of `out`.
    pub fn locate_into(&self, pi: &[T], out: &mut Stencil<T>) {
        let m = self.m;
        out.nodes.clear();
        out.weights.clear();
        if m == 1 {
            out.nodes.push(0);
            out.weights.push(T::one());
            return;
        }
        let d = m - 1;
        let nf = T::of_usize(self.n);
        let top = (self.n - 1) as i64;
        let mut base = vec![0i64; d];
        let mut frac = vec![T::zero(); d];
        let mut order: Vec<usize> = (0..d).collect();
        let mut cum = T::zero();
        for p in 0..d {
            cum += pi[p];
            let z = (cum * nf).max(T::zero()).min(nf);
            let b = z.floor().to_i64().unwrap_or(0).clamp(0, top);
            base[p] = b;
            frac[p] = (z - T::of(b as f64)).max(T::zero()).min(T::one());
        }
        // keep base monotone if roundoff pushed a later floor below an earlier one
        for p in 1..d {
            if base[p] < base[p - 1] {
                base[p] = base[p - 1];
                frac[p] = T::zero();
            }
        }
        // fractional parts descending, ties by higher coordinate first
        order.sort_by(|&a, &b| frac[b].partial_cmp(&frac[a]).unwrap().then(b.cmp(&a)));

        let mut k = vec![0u32; m];
        let mut z = base;
        let push = |z: &[i64], k: &mut Vec<u32>, out: &mut Stencil<T>, w: T| {
            let mut prev = 0i64;
            for p in 0..d {
                k[p] = (z[p] - prev) as u32;
                prev = z[p];
            }
            k[d] = (self.n as i64 - prev) as u32;
            out.nodes.push(self.index_of(k));
            out.weights.push(w);
        };
        push(&z, &mut k, out, T::one() - frac[order[0]]);
        for r in 0..d {
            z[order[r]] += 1;
            let w = if r + 1 < d { frac[order[r]] - frac[order[r + 1]] } else { frac[order[r]] };
            push(&z, &mut k, out, w);
        }
    }

    /// Index of the node closest to `pi` in the sup norm (ties to lower index).
    pub fn nearest(&self, pi: &[T]) -> usize {
        let s = self.locate(pi);
        *s.nodes
            .iter()
            .min_by(|&&a, &&b| {
                let da = dist(self.node(a), pi);
                let db = dist(self.node(b), pi);
                da.partial_cmp(&db).unwrap().then(a.cmp(&b))
            })
            .unwrap()
    }
}

fn dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |m, (&x, &y)| m.max((x - y).abs()))
}

/// Per-policy values at every lattice node, laid out `values[node * |A| + a]`.
#[derive(Debug, Clone)]
pub struct NodeFunction<T> {
    lattice: Arc<SimplexLattice<T>>,
    n_policies: usize,
    values: Vec<T>,
}

impl<T: Scalar> NodeFunction<T> {
    pub fn zeros(lattice: Arc<SimplexLattice<T>>, n_policies: usize) -> Self {
        let values = vec![T::zero(); lattice.len() * n_policies];
        Self { lattice, n_policies, values }
    }

    pub fn from_fn(lattice: Arc<SimplexLattice<T>>, n_policies: usize, f: impl Fn(&[T], usize) -> T) -> Self {
        let mut values = Vec::with_capacity(lattice.len() * n_policies);
        for node in 0..lattice.len() {
            for a in 0..n_policies {
                values.push(f(lattice.node(node), a));
            }
        }
        Self { lattice, n_policies, values }
    }

    pub fn from_values(lattice: Arc<SimplexLattice<T>>, n_policies: usize, values: Vec<T>) -> Result<Self, GridError> {
        if values.len() != lattice.len() * n_policies {
            return Err(GridError::Mismatch(format!(
                "{} values for {} nodes x {} policies",
                values.len(),
                lattice.len(),
                n_policies
            )));
        }
        Ok(Self { lattice, n_policies, values })
    }

    pub fn lattice(&self) -> &Arc<SimplexLattice<T>> {
        &self.lattice
    }

    pub fn n_policies(&self) -> usize {
        self.n_policies
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    #[inline]
    pub fn at(&self, node: usize, a: usize) -> T {
        self.values[node * self.n_policies + a]
    }

    #[inline]
    pub fn set(&mut self, node: usize, a: usize, v: T) {
        self.values[node * self.n_policies + a] = v;
    }

    /// All policies' values at `node`.
    pub fn row(&self, node: usize) -> &[T] {
        &self.values[node * self.n_policies..(node + 1) * self.n_policies]
    }

    pub fn interpolate(&self, pi: &Belief<T>, a: usize) -> T {
        self.interpolate_raw(pi.as_slice(), a)
    }

    pub fn interpolate_raw(&self, pi: &[T], a: usize) -> T {
        self.lattice.locate(pi).apply(|n| self.at(n, a))
    }

    /// Interpolated values for every policy at once.
    pub fn interpolate_all(&self, stencil: &Stencil<T>, out: &mut [T]) {
        out.iter_mut().for_each(|v| *v = T::zero());
        for (&n, &w) in stencil.nodes.iter().zip(&stencil.weights) {
            for (o, &v) in out.iter_mut().zip(self.row(n)) {
                *o += w * v;
            }
        }
    }

    /// Largest absolute difference to another function on the same lattice.
    pub fn sup_distance(&self, other: &Self) -> T {
        self.values.iter().zip(&other.values).fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    /// Writes `node,pi_1..pi_m,policy,value` rows (policy is a zero-based index).
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), GridError> {
        let mut wr = csv::Writer::from_writer(w);
        let m = self.lattice.dim();
        let mut header = vec!["node".to_string()];
        header.extend((1..=m).map(|i| format!("pi{i}")));
        header.extend(["policy".to_string(), "value".to_string()]);
        wr.write_record(&header)?;
        for node in 0..self.lattice.len() {
            for a in 0..self.n_policies {
                let mut rec = vec![node.to_string()];
                rec.extend(self.lattice.node(node).iter().map(|x| x.to_string()));
                rec.push(a.to_string());
                rec.push(self.at(node, a).to_string());
                wr.write_record(&rec)?;
            }
        }
        wr.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Reads back the output of [`write_csv`](Self::write_csv).
    pub fn read_csv<R: Read>(lattice: Arc<SimplexLattice<T>>, n_policies: usize, r: R) -> Result<Self, GridError> {
        let mut out = Self::zeros(lattice.clone(), n_policies);
        let mut seen = vec![false; out.values.len()];
        let m = lattice.dim();
        for rec in csv::Reader::from_reader(r).records() {
            let rec = rec?;
            let field = |i: usize| rec.get(i).ok_or_else(|| GridError::Mismatch("short row".into()));
            let parse_err = |e: &dyn std::fmt::Display| GridError::Mismatch(e.to_string());
            let node: usize = field(0)?.parse().map_err(|e| parse_err(&e))?;
            let a: usize = field(m + 1)?.parse().map_err(|e| parse_err(&e))?;
            let v: f64 = field(m + 2)?.parse().map_err(|e| parse_err(&e))?;
            if node >= lattice.len() || a >= n_policies {
                return Err(GridError::Mismatch(format!("entry ({node}, {a}) out of range")));
            }
            out.set(node, a, T::of(v));
            seen[node * n_policies + a] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(GridError::Mismatch("missing entries".into()));
        }
        Ok(out)
    }
}
