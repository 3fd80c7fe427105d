//! Finite continuous-time Markov chains: indexed state sets, sparse
//! generators and steady-state solvers shared by every sub-model.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Debug;
use std::hash::Hash;

use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;

use crate::error::CtmcError;

/// Above this many states the direct solver is replaced by power iteration.
pub const DIRECT_SOLVE_LIMIT: usize = 50_000;

/// Ordered set of state labels with a label -> index map.
#[derive(Debug, Clone)]
pub struct StateSpace<S> {
    states: Vec<S>,
    index: HashMap<S, usize>,
}

impl<S: Clone + Eq + Hash + Debug> StateSpace<S> {
    /// Builds a state space from labels in the order given. Duplicate
    /// labels and empty sequences are rejected.
    pub fn new(states: Vec<S>) -> Result<Self, CtmcError> {
        if states.is_empty() {
            return Err(CtmcError::EmptySpace);
        }
        let mut index = HashMap::with_capacity(states.len());
        for (n, s) in states.iter().enumerate() {
            if index.insert(s.clone(), n).is_some() {
                return Err(CtmcError::DuplicateState(format!("{s:?}")));
            }
        }
        Ok(Self { states, index })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn index_of(&self, s: &S) -> Option<usize> {
        self.index.get(s).copied()
    }

    pub fn state(&self, idx: usize) -> &S {
        &self.states[idx]
    }

    pub fn states(&self) -> &[S] {
        &self.states
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &S)> {
        self.states.iter().enumerate()
    }
}

/// Sparse infinitesimal generator. Only off-diagonal rates are stored;
/// the diagonal is the negated row sum.
#[derive(Debug, Clone)]
pub struct Generator {
    n: usize,
    /// Off-diagonal entries sorted by (row, col).
    entries: Vec<(usize, usize, f64)>,
    diagonal: Vec<f64>,
}

impl Generator {
    /// Builds a generator from raw index triples, summing duplicates.
    pub fn from_indexed(
        n: usize,
        transitions: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self, CtmcError> {
        let mut agg: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (from, to, rate) in transitions {
            if from >= n || to >= n {
                return Err(CtmcError::UnknownState(format!("index {}", from.max(to))));
            }
            if from == to {
                return Err(CtmcError::SelfLoop(format!("index {from}")));
            }
            if !(rate > 0.0) || !rate.is_finite() {
                return Err(CtmcError::NonPositiveRate { from, to, rate });
            }
            *agg.entry((from, to)).or_insert(0.0) += rate;
        }
        let mut diagonal = vec![0.0; n];
        let entries: Vec<_> = agg
            .into_iter()
            .map(|((r, c), v)| {
                diagonal[r] -= v;
                (r, c, v)
            })
            .collect();
        Ok(Self {
            n,
            entries,
            diagonal,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Off-diagonal entries `(row, col, rate)` in row-major order.
    pub fn off_diagonal(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diagonal
    }

    /// Rate of the `from -> to` transition (zero if absent). Diagonal
    /// queries return the diagonal entry.
    pub fn rate(&self, from: usize, to: usize) -> f64 {
        if from == to {
            return self.diagonal[from];
        }
        self.entries
            .binary_search_by(|&(r, c, _)| (r, c).cmp(&(from, to)))
            .map(|p| self.entries[p].2)
            .unwrap_or(0.0)
    }

    /// Largest absolute row sum (off-diagonals plus diagonal).
    pub fn max_row_sum_error(&self) -> f64 {
        let mut sums = self.diagonal.clone();
        for &(r, _, v) in &self.entries {
            sums[r] += v;
        }
        sums.into_iter().map(f64::abs).fold(0.0, f64::max)
    }

    /// `x Q` for a row vector `x`.
    pub fn left_multiply(&self, x: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = x.iter().zip(&self.diagonal).map(|(a, d)| a * d).collect();
        for &(r, c, v) in &self.entries {
            out[c] += x[r] * v;
        }
        out
    }

    /// `‖πQ‖∞`.
    pub fn residual(&self, pi: &[f64]) -> f64 {
        self.left_multiply(pi)
            .into_iter()
            .map(f64::abs)
            .fold(0.0, f64::max)
    }
}

/// A labelled chain: state space plus generator over its indices.
#[derive(Debug, Clone)]
pub struct CtmcModel<S> {
    pub space: StateSpace<S>,
    pub generator: Generator,
}

impl<S: Clone + Eq + Hash + Debug> CtmcModel<S> {
    pub fn n(&self) -> usize {
        self.space.len()
    }

    /// Rate between two labelled states (zero if either label is unknown
    /// or there is no edge).
    pub fn rate(&self, from: &S, to: &S) -> f64 {
        match (self.space.index_of(from), self.space.index_of(to)) {
            (Some(a), Some(b)) => self.generator.rate(a, b),
            _ => 0.0,
        }
    }

    /// Outgoing edges of `from` as labelled pairs.
    pub fn edges_from(&self, from: &S) -> Vec<(S, f64)> {
        let Some(r) = self.space.index_of(from) else {
            return Vec::new();
        };
        self.generator
            .off_diagonal()
            .iter()
            .filter(|&&(row, _, _)| row == r)
            .map(|&(_, c, v)| (self.space.state(c).clone(), v))
            .collect()
    }

    /// All edges as labelled triples in row-major index order.
    pub fn transitions(&self) -> Vec<(S, S, f64)> {
        self.generator
            .off_diagonal()
            .iter()
            .map(|&(r, c, v)| (self.space.state(r).clone(), self.space.state(c).clone(), v))
            .collect()
    }
}

/// Builds a generator over `space` from labelled transitions.
pub fn build_generator<S: Clone + Eq + Hash + Debug>(
    space: &StateSpace<S>,
    transitions: impl IntoIterator<Item = (S, S, f64)>,
) -> Result<Generator, CtmcError> {
    let mut indexed = Vec::new();
    for (from, to, rate) in transitions {
        let a = space
            .index_of(&from)
            .ok_or_else(|| CtmcError::UnknownState(format!("{from:?}")))?;
        let b = space
            .index_of(&to)
            .ok_or_else(|| CtmcError::UnknownState(format!("{to:?}")))?;
        if a == b {
            return Err(CtmcError::SelfLoop(format!("{from:?}")));
        }
        if !(rate > 0.0) || !rate.is_finite() {
            return Err(CtmcError::NonPositiveRate {
                from: a,
                to: b,
                rate,
            });
        }
        indexed.push((a, b, rate));
    }
    Generator::from_indexed(space.len(), indexed)
}

/// Which solver path to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolverMethod {
    /// Direct up to [`DIRECT_SOLVE_LIMIT`] states, iterative above.
    #[default]
    Auto,
    Direct,
    Iterative,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub method: SolverMethod,
    /// Bound on `‖πQ‖∞` accepted from either solver.
    pub residual_tol: f64,
    /// Maximum power-iteration sweeps.
    pub max_sweeps: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            method: SolverMethod::Auto,
            residual_tol: 1e-10,
            max_sweeps: 1_000_000,
        }
    }
}

/// Stationary distribution over the indices of a state space.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    /// Wraps a vector after checking entries lie in [0,1] and sum to one.
    pub fn new(pi: Vec<f64>) -> Result<Self, CtmcError> {
        let sum: f64 = pi.iter().sum();
        if pi.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > 1e-10 {
            return Err(CtmcError::NotAProbabilityVector);
        }
        Ok(Self(pi))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, idx: usize) -> f64 {
        self.0[idx]
    }

    /// `Σ π_i f(i)`.
    pub fn expectation(&self, f: impl Fn(usize) -> f64) -> f64 {
        expectation(self, f)
    }
}

/// `Σ π_i f(i)`.
pub fn expectation(pi: &ProbabilityVector, f: impl Fn(usize) -> f64) -> f64 {
    pi.0.iter().enumerate().map(|(i, p)| p * f(i)).sum()
}

/// Computes the stationary distribution of `gen`.
///
/// The direct path solves `Qᵀπᵀ = 0` with the last balance equation
/// replaced by the normalisation constraint, using a sparse LU
/// factorisation. The iterative path runs power iteration on the
/// uniformised chain `P = I + Q/Λ` with `Λ = 1.1·max|q_ii|`.
pub fn solve_steady_state(
    gen: &Generator,
    opts: &SolverOptions,
) -> Result<ProbabilityVector, CtmcError> {
    let n = gen.n();
    if n == 1 {
        return ProbabilityVector::new(vec![1.0]);
    }
    let use_direct = match opts.method {
        SolverMethod::Direct => true,
        SolverMethod::Iterative => false,
        SolverMethod::Auto => n <= DIRECT_SOLVE_LIMIT,
    };
    let raw = if use_direct {
        solve_direct(gen)?
    } else {
        solve_power(gen, opts)?
    };
    let pi = clean(raw)?;
    let residual = gen.residual(&pi);
    if !(residual <= opts.residual_tol) {
        return Err(if use_direct {
            CtmcError::SingularOrReducible(format!("residual {residual:e} after direct solve"))
        } else {
            CtmcError::NotConverged {
                sweeps: opts.max_sweeps,
                residual,
            }
        });
    }
    ProbabilityVector::new(pi)
}

fn solve_direct(gen: &Generator) -> Result<Vec<f64>, CtmcError> {
    let accept = |pi: &[f64]| gen.residual(pi) <= 1e-10 && pi.iter().all(|&v| v > -1e-12);
    // Pinning a state of negligible mass loses all precision, so pin the
    // heaviest state of a rough iterate and refine once.
    let mut pin = argmax(&rough_iterate(gen, 256));
    for _ in 0..2 {
        match solve_pinned(gen, pin) {
            Ok(pi) if accept(&pi) => return Ok(pi),
            Ok(pi) => pin = argmax(&pi),
            Err(_) => break,
        }
    }
    solve_bordered(gen)
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

fn rough_iterate(gen: &Generator, sweeps: usize) -> Vec<f64> {
    let n = gen.n();
    let max_exit = gen.diagonal().iter().map(|d| d.abs()).fold(0.0, f64::max);
    let mut pi = vec![1.0 / n as f64; n];
    if max_exit == 0.0 {
        return pi;
    }
    let lambda = 1.1 * max_exit;
    let mut next = vec![0.0; n];
    for _ in 0..sweeps {
        uniformized_step(gen, lambda, &pi, &mut next);
        std::mem::swap(&mut pi, &mut next);
    }
    pi
}

fn uniformized_step(gen: &Generator, lambda: f64, pi: &[f64], next: &mut [f64]) {
    for (x, (p, d)) in next.iter_mut().zip(pi.iter().zip(gen.diagonal())) {
        *x = p * (1.0 + d / lambda);
    }
    for &(r, c, v) in gen.off_diagonal() {
        next[c] += pi[r] * v / lambda;
    }
    let sum: f64 = next.iter().sum();
    next.iter_mut().for_each(|x| *x /= sum);
}

fn sparse_lu_solve(
    m: usize,
    trip: &[Triplet<usize, usize, f64>],
    rhs: &Mat<f64>,
) -> Result<Vec<f64>, CtmcError> {
    let a = SparseColMat::<usize, f64>::try_new_from_triplets(m, m, trip)
        .map_err(|e| CtmcError::SingularOrReducible(format!("{e:?}")))?;
    let lu = a
        .sp_lu()
        .map_err(|e| CtmcError::SingularOrReducible(format!("{e:?}")))?;
    let x = lu.solve(rhs);
    let out: Vec<f64> = (0..m).map(|i| x[(i, 0)]).collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(CtmcError::SingularOrReducible(
            "non-finite entries in direct solution".into(),
        ));
    }
    Ok(out)
}

/// Fixes `π_pin = 1`, drops its balance equation and renormalises. The
/// reduced system keeps the sparsity of `Q`, but is singular when the
/// pinned state is transient.
fn solve_pinned(gen: &Generator, pin: usize) -> Result<Vec<f64>, CtmcError> {
    let n = gen.n();
    let shift = |i: usize| if i > pin { i - 1 } else { i };
    let m = n - 1;
    let mut trip = Vec::with_capacity(gen.off_diagonal().len() + n);
    let mut rhs = Mat::<f64>::zeros(m, 1);
    // Column j of Qᵀ is row j of Q.
    for &(r, c, v) in gen.off_diagonal() {
        if c == pin {
            continue;
        }
        if r == pin {
            rhs[(shift(c), 0)] -= v;
        } else {
            trip.push(Triplet::new(shift(c), shift(r), v));
        }
    }
    for (i, &d) in gen.diagonal().iter().enumerate() {
        if i != pin && d != 0.0 {
            trip.push(Triplet::new(shift(i), shift(i), d));
        }
    }
    let x = sparse_lu_solve(m, &trip, &rhs)?;
    let mut pi = Vec::with_capacity(n);
    pi.extend_from_slice(&x[..pin]);
    pi.push(1.0);
    pi.extend_from_slice(&x[pin..]);
    let total: f64 = pi.iter().sum();
    if !(total.is_finite() && total > 0.0) {
        return Err(CtmcError::SingularOrReducible("zero normalisation".into()));
    }
    pi.iter_mut().for_each(|v| *v /= total);
    Ok(pi)
}

/// Replaces the last balance equation by `Σπ = 1`.
fn solve_bordered(gen: &Generator) -> Result<Vec<f64>, CtmcError> {
    let n = gen.n();
    let last = n - 1;
    let mut trip = Vec::with_capacity(gen.off_diagonal().len() + 2 * n);
    for &(r, c, v) in gen.off_diagonal() {
        if c != last {
            trip.push(Triplet::new(c, r, v));
        }
    }
    for (i, &d) in gen.diagonal().iter().enumerate() {
        if i != last && d != 0.0 {
            trip.push(Triplet::new(i, i, d));
        }
        trip.push(Triplet::new(last, i, 1.0));
    }
    let mut rhs = Mat::<f64>::zeros(n, 1);
    rhs[(last, 0)] = 1.0;
    sparse_lu_solve(n, &trip, &rhs)
}

fn solve_power(gen: &Generator, opts: &SolverOptions) -> Result<Vec<f64>, CtmcError> {
    let n = gen.n();
    let max_exit = gen.diagonal().iter().map(|d| d.abs()).fold(0.0, f64::max);
    if max_exit == 0.0 {
        return Err(CtmcError::SingularOrReducible("generator is zero".into()));
    }
    let lambda = 1.1 * max_exit;
    let mut pi = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for sweep in 0..opts.max_sweeps {
        uniformized_step(gen, lambda, &pi, &mut next);
        std::mem::swap(&mut pi, &mut next);
        if sweep % 16 == 15 {
            residual = gen.residual(&pi);
            if residual <= opts.residual_tol {
                return Ok(pi);
            }
        }
    }
    Err(CtmcError::NotConverged {
        sweeps: opts.max_sweeps,
        residual,
    })
}

/// Clears round-off negatives and renormalises. Materially negative
/// entries mean the system had no unique nonnegative solution.
fn clean(mut pi: Vec<f64>) -> Result<Vec<f64>, CtmcError> {
    let scale = pi.iter().map(|v| v.abs()).fold(0.0, f64::max);
    for v in pi.iter_mut() {
        if *v < 0.0 {
            if *v < -1e-9 * scale.max(1.0) {
                return Err(CtmcError::SingularOrReducible(format!(
                    "negative probability {v:e}"
                )));
            }
            *v = 0.0;
        }
    }
    let sum: f64 = pi.iter().sum();
    if !(sum > 0.0) {
        return Err(CtmcError::SingularOrReducible("zero mass".into()));
    }
    pi.iter_mut().for_each(|v| *v = (*v / sum).min(1.0));
    Ok(pi)
}
