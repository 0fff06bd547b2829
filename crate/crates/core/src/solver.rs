//! Stationary distributions of finite row-stochastic matrices.
//!
//! Three methods are available: a dense direct solve of `pi (P - I) = 0`
//! with one balance equation replaced by the normalization, plain power
//! iteration, and sparse state reduction (Grassmann-Taksar-Heyman
//! elimination), which avoids subtractions and is fast on the nearly
//! triangular chains built by the policy analyzers.

use thiserror::Error;

/// Row sums must match 1 within this tolerance.
pub const ROW_SUM_TOL: f64 = 1e-9;
pub const DEFAULT_TOL: f64 = 1e-12;
pub const DEFAULT_MAX_ITER: usize = 1_000_000;
/// Above this many states `Method::Auto` switches from direct to power iteration.
pub const DEFAULT_DIRECT_LIMIT: usize = 2000;

const PIVOT_TOL: f64 = 1e-12;
const CLAMP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("entry ({row}, {col}) out of range for a {n}-state matrix")]
    OutOfRange { row: usize, col: usize, n: usize },
    #[error("row {row} is not a probability vector (sum {sum}, min entry {min})")]
    NotStochastic { row: usize, sum: f64, min: f64 },
    #[error("matrix is not square: row {row} has {len} entries, expected {n}")]
    NotSquare { row: usize, len: usize, n: usize },
    #[error("chain has no unique stationary distribution (reducible)")]
    Reducible,
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("empty matrix")]
    Empty,
}

/// Sparse row-stochastic matrix in compressed-row form.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

/// Accumulates transitions, merging repeated `(row, col)` pairs.
#[derive(Debug, Clone)]
pub struct MatrixBuilder {
    rows: Vec<Vec<(usize, f64)>>,
}

impl MatrixBuilder {
    pub fn new(n: usize) -> Self {
        Self {
            rows: vec![Vec::new(); n],
        }
    }

    pub fn add(&mut self, row: usize, col: usize, prob: f64) -> &mut Self {
        if prob == 0.0 {
            return self;
        }
        let r = &mut self.rows[row];
        match r.iter_mut().find(|(c, _)| *c == col) {
            Some(entry) => entry.1 += prob,
            None => r.push((col, prob)),
        }
        self
    }

    pub fn build(self) -> Result<StochasticMatrix, SolveError> {
        StochasticMatrix::from_rows(self.rows)
    }
}

impl StochasticMatrix {
    /// Builds from sparse rows; zero entries are dropped, entries are sorted.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Result<Self, SolveError> {
        let n = rows.len();
        if n == 0 {
            return Err(SolveError::Empty);
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for (i, mut row) in rows.into_iter().enumerate() {
            row.sort_by_key(|&(c, _)| c);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len());
            for (c, v) in row {
                if c >= n {
                    return Err(SolveError::OutOfRange { row: i, col: c, n });
                }
                match merged.last_mut() {
                    Some(last) if last.0 == c => last.1 += v,
                    _ => merged.push((c, v)),
                }
            }
            let (mut sum, mut min) = (0.0, 0.0f64);
            for (c, v) in merged {
                min = min.min(v);
                sum += v;
                if v != 0.0 {
                    cols.push(c);
                    vals.push(v);
                }
            }
            if min < 0.0 || !sum.is_finite() || (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(SolveError::NotStochastic { row: i, sum, min });
            }
            row_ptr.push(cols.len());
        }
        Ok(Self {
            n,
            row_ptr,
            cols,
            vals,
        })
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Result<Self, SolveError> {
        let n = rows.len();
        let mut sparse = Vec::with_capacity(n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(SolveError::NotSquare {
                    row: i,
                    len: row.len(),
                    n,
                });
            }
            sparse.push(
                row.iter()
                    .enumerate()
                    .filter(|(_, &v)| v != 0.0)
                    .map(|(j, &v)| (j, v))
                    .collect(),
            );
        }
        Self::from_rows(sparse)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[range.clone()]
            .iter()
            .copied()
            .zip(self.vals[range].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.row(i).map(|(_, v)| v).sum()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|i| {
                let mut r = vec![0.0; self.n];
                for (j, v) in self.row(i) {
                    r[j] = v;
                }
                r
            })
            .collect()
    }

    /// Row vector times matrix, `x P`.
    pub fn left_mul(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.left_mul_into(x, &mut out);
        out
    }

    fn left_mul_into(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (j, v) in self.row(i) {
                out[j] += xi * v;
            }
        }
    }

    /// `Q = S P S^T` for the permutation `perm`, where state `i` of `self`
    /// becomes state `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self, SolveError> {
        let mut rows = vec![Vec::new(); self.n];
        for i in 0..self.n {
            rows[perm[i]] = self.row(i).map(|(j, v)| (perm[j], v)).collect();
        }
        Self::from_rows(rows)
    }
}

/// `max_j |(pi P)_j - pi_j|`.
pub fn residual(p: &StochasticMatrix, pi: &[f64]) -> f64 {
    p.left_mul(pi)
        .iter()
        .zip(pi)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Method {
    /// Direct solve up to `direct_limit` states, power iteration above.
    #[default]
    Auto,
    Direct,
    Power,
    StateReduction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMethod {
    Direct,
    Power,
    StateReduction,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub method: Method,
    pub direct_limit: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            method: Method::Auto,
            direct_limit: DEFAULT_DIRECT_LIMIT,
        }
    }
}

impl SolveOptions {
    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveReport {
    pub method: SolveMethod,
    pub residual: f64,
    /// Power-iteration sweeps; zero for the elimination methods.
    pub iterations: usize,
}

/// Stationary distribution `pi` with `pi P = pi`, `sum(pi) = 1`.
///
/// The direct and state-reduction methods fail with [`SolveError::Reducible`]
/// when the stationary distribution is not unique. A direct solution whose
/// residual misses `tol` is refined by power iteration.
pub fn solve_stationary(p: &StochasticMatrix, opts: &SolveOptions) -> Result<(Vec<f64>, SolveReport), SolveError> {
    let method = match opts.method {
        Method::Auto if p.len() <= opts.direct_limit => Method::Direct,
        Method::Auto => Method::Power,
        m => m,
    };
    match method {
        Method::Direct => {
            let pi = direct(p)?;
            finish(p, pi, SolveMethod::Direct, opts)
        }
        Method::StateReduction => {
            let pi = state_reduction(p)?;
            finish(p, pi, SolveMethod::StateReduction, opts)
        }
        Method::Power | Method::Auto => {
            let start = vec![1.0 / p.len() as f64; p.len()];
            power_iteration(p, &start, opts.tol, opts.max_iter)
        }
    }
}

fn finish(
    p: &StochasticMatrix,
    pi: Vec<f64>,
    method: SolveMethod,
    opts: &SolveOptions,
) -> Result<(Vec<f64>, SolveReport), SolveError> {
    let res = residual(p, &pi);
    if res < opts.tol {
        return Ok((
            pi,
            SolveReport {
                method,
                residual: res,
                iterations: 0,
            },
        ));
    }
    let (pi, mut report) = power_iteration(p, &pi, opts.tol, opts.max_iter)?;
    report.method = method;
    Ok((pi, report))
}

/// Clamps tiny negative round-off to zero and renormalizes.
fn clean(mut pi: Vec<f64>) -> Result<Vec<f64>, SolveError> {
    for v in pi.iter_mut() {
        if *v < 0.0 {
            if *v < -CLAMP_TOL {
                return Err(SolveError::Reducible);
            }
            *v = 0.0;
        }
    }
    let total: f64 = pi.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(SolveError::Reducible);
    }
    pi.iter_mut().for_each(|v| *v /= total);
    Ok(pi)
}

/// Solves `(P^T - I) x = 0` with the last equation replaced by `sum(x) = 1`.
fn direct(p: &StochasticMatrix) -> Result<Vec<f64>, SolveError> {
    let n = p.len();
    // a[r * n + c]: row r is the balance equation of state r
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for (j, v) in p.row(i) {
            a[j * n + i] += v;
        }
        a[i * n + i] -= 1.0;
    }
    for c in 0..n {
        a[(n - 1) * n + c] = 1.0;
    }
    let mut b = vec![0.0; n];
    b[n - 1] = 1.0;

    for col in 0..n {
        let (piv, max) = (col..n)
            .map(|r| (r, a[r * n + col].abs()))
            .fold((col, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if max < PIVOT_TOL {
            return Err(SolveError::Reducible);
        }
        if piv != col {
            for c in 0..n {
                a.swap(piv * n + c, col * n + c);
            }
            b.swap(piv, col);
        }
        let d = a[col * n + col];
        for r in col + 1..n {
            let f = a[r * n + col] / d;
            if f == 0.0 {
                continue;
            }
            a[r * n + col] = 0.0;
            for c in col + 1..n {
                a[r * n + c] -= f * a[col * n + c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let mut s = b[r];
        for c in r + 1..n {
            s -= a[r * n + c] * x[c];
        }
        x[r] = s / a[r * n + r];
    }
    clean(x)
}

/// Power iteration `pi <- pi P` from `start`. Stops once the step
/// `r = ||pi P - pi||_inf` and the geometric tail bound `r rho / (1 - rho)`
/// are both below `tol`, where `rho` is the largest step ratio over the last
/// few iterations, or once `r` reaches rounding level.
pub fn power_iteration(
    p: &StochasticMatrix,
    start: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, SolveReport), SolveError> {
    const WINDOW: usize = 8;
    let floor = 64.0 * f64::EPSILON;
    let mut pi = start.to_vec();
    let mut next = vec![0.0; p.len()];
    let mut res = f64::INFINITY;
    let mut ratios = [f64::INFINITY; WINDOW];
    for it in 0..=max_iter {
        p.left_mul_into(&pi, &mut next);
        let prev = res;
        res = next
            .iter()
            .zip(&pi)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        ratios[it % WINDOW] = res / prev;
        let rho = ratios.iter().copied().fold(0.0, f64::max);
        let tail = if rho < 1.0 { res * rho / (1.0 - rho) } else { f64::INFINITY };
        if res < tol && (tail < tol || res < floor) {
            let pi = clean(next)?;
            let residual = residual(p, &pi);
            return Ok((
                pi,
                SolveReport {
                    method: SolveMethod::Power,
                    residual,
                    iterations: it + 1,
                },
            ));
        }
        std::mem::swap(&mut pi, &mut next);
    }
    Err(SolveError::NotConverged {
        iterations: max_iter,
        residual: res,
    })
}

/// GTH state reduction on the sparse structure. States are eliminated from
/// the highest index down, so callers should place a state of the recurrent
/// class at index 0 and order the rest so that late states have few
/// predecessors.
pub fn state_reduction(p: &StochasticMatrix) -> Result<Vec<f64>, SolveError> {
    let n = p.len();
    // out-edges without self loops; diagonal entries never enter GTH
    let mut rows: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|i| p.row(i).filter(|&(j, _)| j != i).collect())
        .collect();
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, row) in rows.iter().enumerate() {
        for &(j, _) in row {
            preds[j].push(i);
        }
    }
    let mut inflow: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut outflow = vec![0.0; n];
    let mut pos = vec![0usize; n];
    let mut mark = vec![usize::MAX; n];

    for k in (1..n).rev() {
        let row_k = std::mem::take(&mut rows[k]);
        let s: f64 = row_k.iter().map(|&(_, v)| v).sum();
        if !(s > 0.0) {
            return Err(SolveError::Reducible);
        }
        outflow[k] = s;
        let preds_k = std::mem::take(&mut preds[k]);
        for &i in &preds_k {
            if i >= k {
                continue;
            }
            let row_i = &mut rows[i];
            let Some(at) = row_i.iter().position(|&(c, _)| c == k) else {
                continue;
            };
            let w = row_i.swap_remove(at).1;
            inflow[k].push((i, w));
            for (idx, &(c, _)) in row_i.iter().enumerate() {
                pos[c] = idx;
                mark[c] = i;
            }
            let f = w / s;
            for &(j, v) in &row_k {
                if j == i {
                    continue;
                }
                if mark[j] == i {
                    row_i[pos[j]].1 += f * v;
                } else {
                    row_i.push((j, f * v));
                    preds[j].push(i);
                }
            }
            // stale markers from an earlier pass over row i must not match
            for &(c, _) in row_i.iter() {
                mark[c] = usize::MAX;
            }
        }
    }
    let mut pi = vec![0.0; n];
    pi[0] = 1.0;
    for k in 1..n {
        let s: f64 = inflow[k].iter().map(|&(i, w)| pi[i] * w).sum();
        pi[k] = s / outflow[k];
    }
    clean(pi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn m(rows: &[&[f64]]) -> StochasticMatrix {
        StochasticMatrix::from_dense(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn symmetric_two_state() {
        let p = m(&[&[0.5, 0.5], &[0.5, 0.5]]);
        let (pi, report) = solve_stationary(&p, &SolveOptions::default()).unwrap();
        assert_abs_diff_eq!(pi[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(pi[1], 0.5, epsilon = 1e-15);
        assert_eq!(report.method, SolveMethod::Direct);
    }

    #[test]
    fn asymmetric_two_state() {
        // 0.1 pi0 = 0.5 pi1 -> (5/6, 1/6)
        let p = m(&[&[0.9, 0.1], &[0.5, 0.5]]);
        for method in [Method::Direct, Method::Power, Method::StateReduction] {
            let (pi, _) = solve_stationary(&p, &SolveOptions::default().with_method(method)).unwrap();
            assert_abs_diff_eq!(pi[0], 5.0 / 6.0, epsilon = 1e-11);
            assert_abs_diff_eq!(pi[1], 1.0 / 6.0, epsilon = 1e-11);
        }
    }

    #[test]
    fn identity_is_reducible() {
        let p = m(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        assert_eq!(
            solve_stationary(&p, &SolveOptions::default()).unwrap_err(),
            SolveError::Reducible
        );
        assert_eq!(state_reduction(&p).unwrap_err(), SolveError::Reducible);
    }

    #[test]
    fn periodic_chain() {
        let p = m(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let (pi, report) = solve_stationary(&p, &SolveOptions::default()).unwrap();
        assert_eq!(report.method, SolveMethod::Direct);
        assert_abs_diff_eq!(pi[0], 0.5, epsilon = 1e-15);
        let err = power_iteration(&p, &[1.0, 0.0], 1e-12, 1000).unwrap_err();
        assert!(matches!(err, SolveError::NotConverged { .. }));
    }

    #[test]
    fn rejects_non_stochastic() {
        let err = StochasticMatrix::from_dense(&[vec![0.5, 0.4], vec![0.5, 0.5]]).unwrap_err();
        assert!(matches!(err, SolveError::NotStochastic { row: 0, .. }));
        let err = StochasticMatrix::from_dense(&[vec![1.5, -0.5], vec![0.5, 0.5]]).unwrap_err();
        assert!(matches!(err, SolveError::NotStochastic { row: 0, .. }));
        let err = StochasticMatrix::from_dense(&[vec![1.0], vec![0.5, 0.5]]).unwrap_err();
        assert!(matches!(err, SolveError::NotSquare { .. }));
    }

    #[test]
    fn transient_states_get_zero_mass() {
        // state 2 is never entered
        let p = m(&[&[0.5, 0.5, 0.0], &[1.0, 0.0, 0.0], &[0.2, 0.3, 0.5]]);
        for method in [Method::Direct, Method::StateReduction] {
            let (pi, _) = solve_stationary(&p, &SolveOptions::default().with_method(method)).unwrap();
            assert_abs_diff_eq!(pi[2], 0.0, epsilon = 1e-15);
            assert_abs_diff_eq!(pi[0], 2.0 / 3.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn builder_merges_duplicates() {
        let mut b = MatrixBuilder::new(2);
        b.add(0, 1, 0.25).add(0, 1, 0.25).add(0, 0, 0.5).add(1, 0, 1.0).add(1, 1, 0.0);
        let p = b.build().unwrap();
        assert_eq!(p.get(0, 1), 0.5);
        assert_eq!(p.nnz(), 3);
    }
}
