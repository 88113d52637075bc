//! Finite Markov chain numerics: ergodicity checks, stationary distributions,
//! second-largest eigenvalue modulus (SLEM) and the SLEM-based mixing time
//!
//! ```text
//! L = ln(1/eps) / (1 - lambda_2)
//! ```
//!
//! Ergodicity is established structurally first (irreducibility by
//! reachability, aperiodicity by the gcd of cycle lengths) and then confirmed
//! numerically through `lambda_2 < 1 - 1e-12`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Tolerance on transition-row sums.
pub const ROW_SUM_TOL: f64 = 1e-9;

/// Maximum `||dP - d||_inf` accepted for a stationary distribution.
pub const STATIONARY_TOL: f64 = 1e-10;

/// Default accuracy level for mixing times.
pub const DEFAULT_MIXING_EPS: f64 = 1.0 / 8.0;

const SLEM_ERGODIC_MARGIN: f64 = 1e-12;

/// Chains up to this size use a dense eigen-decomposition for the SLEM; larger
/// chains use repeated squaring of the deflated matrix.
const DENSE_EIGEN_MAX_STATES: usize = 8;

/// Stationary distribution, arm mean, SLEM and mixing time of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainSummary {
    pub stationary: Vec<f64>,
    pub arm_mean: f64,
    pub slem: f64,
    pub mixing_time: f64,
}

/// Checks squareness, entry range and row sums.
pub fn check_row_stochastic(p: &[Vec<f64>]) -> Result<()> {
    let n = p.len();
    if n == 0 {
        return Err(Error::InvalidTransition("matrix has no rows".into()));
    }
    for (i, row) in p.iter().enumerate() {
        if row.len() != n {
            return Err(Error::InvalidTransition(format!(
                "row {i} has {} entries, expected {n}",
                row.len()
            )));
        }
        if let Some(j) = row.iter().position(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::InvalidTransition(format!(
                "entry [{i}][{j}] = {} outside [0, 1]",
                row[j]
            )));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::InvalidTransition(format!(
                "row {i} sums to {sum}, outside 1 +/- {ROW_SUM_TOL:e}"
            )));
        }
    }
    Ok(())
}

fn successors(p: &[Vec<f64>], i: usize) -> impl Iterator<Item = usize> + '_ {
    p[i].iter()
        .enumerate()
        .filter(|(_, &x)| x > 0.0)
        .map(|(j, _)| j)
}

fn reachable_from(p: &[Vec<f64>], start: usize, reverse: bool) -> Vec<bool> {
    let n = p.len();
    let mut seen = vec![false; n];
    let mut stack = vec![start];
    seen[start] = true;
    while let Some(i) = stack.pop() {
        for j in 0..n {
            let edge = if reverse { p[j][i] > 0.0 } else { p[i][j] > 0.0 };
            if edge && !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen
}

pub fn is_irreducible(p: &[Vec<f64>]) -> bool {
    if p.is_empty() {
        return false;
    }
    reachable_from(p, 0, false).into_iter().all(|x| x)
        && reachable_from(p, 0, true).into_iter().all(|x| x)
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Period of an irreducible chain: gcd over edges `i -> j` of
/// `level(i) + 1 - level(j)` where `level` is BFS depth from state 0.
pub fn period(p: &[Vec<f64>]) -> usize {
    let n = p.len();
    let mut level = vec![usize::MAX; n];
    level[0] = 0;
    let mut queue = std::collections::VecDeque::from([0usize]);
    while let Some(i) = queue.pop_front() {
        for j in successors(p, i) {
            if level[j] == usize::MAX {
                level[j] = level[i] + 1;
                queue.push_back(j);
            }
        }
    }
    let mut g = 0;
    for i in 0..n {
        if level[i] == usize::MAX {
            continue;
        }
        for j in successors(p, i) {
            if level[j] == usize::MAX {
                continue;
            }
            let diff = (level[i] + 1).abs_diff(level[j]);
            g = gcd(g, diff);
        }
    }
    g
}

/// Structural ergodicity: row-stochastic, irreducible and aperiodic.
pub fn check_ergodic(p: &[Vec<f64>]) -> Result<()> {
    check_row_stochastic(p)?;
    if !is_irreducible(p) {
        return Err(Error::NotErgodic("chain is reducible".into()));
    }
    let d = period(p);
    if d != 1 {
        return Err(Error::NotErgodic(format!("chain has period {d}")));
    }
    Ok(())
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
/// Returns `None` when the system is numerically singular.
pub(crate) fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))?;
        if a[pivot][col].abs() < 1e-14 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    Some(x)
}

/// `d P` for a row vector `d`.
pub fn left_multiply(d: &[f64], p: &[Vec<f64>]) -> Vec<f64> {
    let n = p.len();
    let mut out = vec![0.0; n];
    for (i, &di) in d.iter().enumerate() {
        for (o, &pij) in out.iter_mut().zip(&p[i]) {
            *o += di * pij;
        }
    }
    out
}

pub fn fixed_point_residual(d: &[f64], p: &[Vec<f64>]) -> f64 {
    left_multiply(d, p)
        .iter()
        .zip(d)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// Solves `d (P - I) = 0, sum(d) = 1` without any ergodicity check, followed by
/// a few power-iteration sweeps to polish the fixed point. `None` if singular.
pub(crate) fn solve_stationary(p: &[Vec<f64>]) -> Option<Vec<f64>> {
    let n = p.len();
    // Transposed system (P^T - I) d = 0 with the last equation replaced by the
    // normalization constraint.
    let mut a = vec![vec![0.0; n]; n];
    for (i, row) in a.iter_mut().enumerate().take(n - 1) {
        for (j, x) in row.iter_mut().enumerate() {
            *x = p[j][i] - if i == j { 1.0 } else { 0.0 };
        }
    }
    a[n - 1] = vec![1.0; n];
    let mut b = vec![0.0; n];
    b[n - 1] = 1.0;
    let mut d = solve_linear(a, b)?;
    for _ in 0..4 {
        for x in d.iter_mut() {
            *x = x.max(0.0);
        }
        let total: f64 = d.iter().sum();
        if !(total > 0.0) {
            return None;
        }
        d.iter_mut().for_each(|x| *x /= total);
        if fixed_point_residual(&d, p) <= STATIONARY_TOL * 1e-2 {
            break;
        }
        d = left_multiply(&d, p);
    }
    Some(d)
}

/// Unique stationary distribution `d = d P` of an ergodic chain.
pub fn stationary_distribution(p: &[Vec<f64>]) -> Result<Vec<f64>> {
    check_ergodic(p)?;
    let lambda2 = slem_unchecked(p)?;
    if lambda2 >= 1.0 - SLEM_ERGODIC_MARGIN {
        return Err(Error::NotErgodic(format!("SLEM {lambda2} too close to 1")));
    }
    let d = solve_stationary(p)
        .ok_or_else(|| Error::NotErgodic("stationary system is singular".into()))?;
    let residual = fixed_point_residual(&d, p);
    if residual > STATIONARY_TOL {
        return Err(Error::NotErgodic(format!(
            "fixed point did not converge (residual {residual:e})"
        )));
    }
    Ok(d)
}

/// Steady-state arm mean `d . R`, clamped into `[0, 1]` against rounding.
pub fn arm_mean(d: &[f64], r: &[f64]) -> Result<f64> {
    if d.len() != r.len() {
        return Err(Error::DimensionMismatch {
            expected: d.len(),
            got: r.len(),
        });
    }
    let m: f64 = d.iter().zip(r).map(|(a, b)| a * b).sum();
    Ok(m.clamp(0.0, 1.0))
}

/// Second-largest eigenvalue modulus of an ergodic chain.
pub fn slem(p: &[Vec<f64>]) -> Result<f64> {
    check_ergodic(p)?;
    let lambda2 = slem_unchecked(p)?;
    if lambda2 >= 1.0 - SLEM_ERGODIC_MARGIN {
        return Err(Error::NotErgodic(format!("SLEM {lambda2} too close to 1")));
    }
    Ok(lambda2)
}

fn slem_unchecked(p: &[Vec<f64>]) -> Result<f64> {
    if p.len() <= DENSE_EIGEN_MAX_STATES {
        Ok(slem_dense(p))
    } else {
        slem_deflated_power(p)
    }
}

pub(crate) fn slem_dense(p: &[Vec<f64>]) -> f64 {
    let n = p.len();
    if n == 1 {
        return 0.0;
    }
    let m = DMatrix::from_fn(n, n, |i, j| p[i][j]);
    let eig = m.complex_eigenvalues();
    let perron = eig
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| {
            let da = (*a - nalgebra::Complex::new(1.0, 0.0)).norm();
            let db = (*b - nalgebra::Complex::new(1.0, 0.0)).norm();
            da.total_cmp(&db)
        })
        .map(|(i, _)| i)
        .unwrap_or(0);
    eig.iter()
        .enumerate()
        .filter(|(i, _)| *i != perron)
        .map(|(_, z)| z.norm())
        .fold(0.0, f64::max)
}

/// Spectral radius of `P - 1 d^T` via Gelfand's formula, evaluated with
/// normalized repeated squaring: `rho = lim ||A^m||^(1/m)` for `m = 2^j`.
pub(crate) fn slem_deflated_power(p: &[Vec<f64>]) -> Result<f64> {
    let n = p.len();
    if n == 1 {
        return Ok(0.0);
    }
    // A reducible or periodic chain may lack a unique stationary vector; such
    // chains report SLEM 1.
    let Some(d) = solve_stationary(p) else {
        return Ok(1.0);
    };
    let mut a = DMatrix::from_fn(n, n, |i, j| p[i][j] - d[j]);
    let norm_of = |m: &DMatrix<f64>| m.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));

    let mut log_scale = 0.0;
    let first = norm_of(&a);
    if first == 0.0 {
        return Ok(0.0);
    }
    a /= first;
    log_scale += first.ln();
    let mut power = 1.0f64;
    let mut prev = f64::NAN;
    for _ in 0..48 {
        let sq = &a * &a;
        let s = norm_of(&sq);
        if s == 0.0 || !s.is_finite() {
            return Ok(0.0);
        }
        log_scale = 2.0 * log_scale + s.ln();
        power *= 2.0;
        a = sq / s;
        let est = (log_scale / power).exp();
        if (est - prev).abs() < 1e-13 {
            return Ok(est.min(1.0));
        }
        prev = est;
    }
    Ok(prev.min(1.0))
}

/// `ln(1/eps) / (1 - lambda_2)`.
pub fn mixing_time(p: &[Vec<f64>], eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidTransition(format!(
            "mixing accuracy {eps} outside (0, 1)"
        )));
    }
    let lambda2 = slem(p)?;
    Ok((1.0 / eps).ln() / (1.0 - lambda2))
}

pub fn summarize(p: &[Vec<f64>], rewards: &[f64], eps: f64) -> Result<ChainSummary> {
    let stationary = stationary_distribution(p)?;
    let arm_mean = arm_mean(&stationary, rewards)?;
    let slem = slem(p)?;
    let mixing_time = mixing_time(p, eps)?;
    Ok(ChainSummary {
        stationary,
        arm_mean,
        slem,
        mixing_time,
    })
}
