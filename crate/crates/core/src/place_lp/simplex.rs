//! Bounded-variable primal simplex on a dense tableau.
//!
//! Solves `min cᵀx  s.t.  A x = b,  l ≤ x ≤ u` where bounds may be infinite.
//! Phase I starts from one artificial per row; nonbasic variables sit at a
//! finite bound (or at zero when free). The entering column is the one with
//! the largest reduced cost until several consecutive degenerate pivots occur;
//! from then on entering and leaving choices follow Bland's rule, which rules
//! out cycling, until the objective moves again. An optimal basis is only returned
//! after an independent certificate: the basis is refactorized from the
//! original data, primal values and duals are recomputed, and both primal and
//! dual feasibility are checked at [`CERT_TOL`].

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Feasibility and optimality tolerance of the certificate.
pub const CERT_TOL: f64 = 1e-7;
/// Reduced-cost threshold used while pivoting.
const PRICE_TOL: f64 = 1e-9;
/// Smallest admissible pivot magnitude.
const PIVOT_TOL: f64 = 1e-9;
/// Certification failures trigger a refactorization; give up after this many.
const MAX_REFACTOR: usize = 3;
/// Degenerate pivots in a row before switching to Bland's rule.
const BLAND_AFTER: usize = 8;

#[derive(Clone, Debug)]
pub struct LpProblem {
    pub objective: Vec<f64>,
    /// Equality rows, one column per variable.
    pub eq_matrix: DMatrix<f64>,
    pub eq_rhs: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Row multipliers `y` with `Bᵀ y = c_B`.
    pub duals: Vec<f64>,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LpOutcome {
    Optimal(LpSolution),
    Infeasible,
    Unbounded,
}

impl LpOutcome {
    pub fn optimal(self) -> Option<LpSolution> {
        match self {
            LpOutcome::Optimal(s) => Some(s),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum LpError {
    #[error("malformed problem: {0}")]
    Malformed(String),
    #[error("simplex stalled after {0} iterations")]
    Stalled(usize),
    #[error("optimal basis failed certification: {0}")]
    Uncertified(String),
}

impl LpProblem {
    /// Problem with `n` variables, no rows, zero cost and bounds `[0, ∞)`.
    pub fn new(n: usize) -> Self {
        LpProblem {
            objective: vec![0.0; n],
            eq_matrix: DMatrix::zeros(0, n),
            eq_rhs: Vec::new(),
            lower: vec![0.0; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn n_rows(&self) -> usize {
        self.eq_rhs.len()
    }

    fn check(&self) -> Result<(), LpError> {
        let n = self.n_vars();
        if self.eq_matrix.ncols() != n || self.lower.len() != n || self.upper.len() != n {
            return Err(LpError::Malformed(
                "dimension mismatch between objective, matrix and bounds".into(),
            ));
        }
        if self.eq_matrix.nrows() != self.eq_rhs.len() {
            return Err(LpError::Malformed(
                "row count differs from right-hand side length".into(),
            ));
        }
        for j in 0..n {
            if self.lower[j] > self.upper[j] || self.lower[j] == f64::INFINITY || self.upper[j] == f64::NEG_INFINITY {
                return Err(LpError::Malformed(format!("variable {j} has empty bounds")));
            }
            if !self.objective[j].is_finite() {
                return Err(LpError::Malformed(format!("variable {j} has a non-finite cost")));
            }
        }
        if self.eq_matrix.iter().chain(&self.eq_rhs).any(|v| !v.is_finite()) {
            return Err(LpError::Malformed("non-finite constraint data".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Status {
    Basic,
    AtLower,
    AtUpper,
    /// Nonbasic free variable held at zero.
    Free,
}

struct Tableau {
    m: usize,
    /// Structural plus artificial columns.
    cols: usize,
    /// Row-major `B⁻¹ [A | diag(σ)]`.
    t: Vec<f64>,
    /// Values of the basic variables, by row.
    beta: Vec<f64>,
    basis: Vec<usize>,
    status: Vec<Status>,
    /// Current value of every variable (nonbasic ones exact).
    x: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    /// Original augmented constraint matrix, for refactorization.
    a: DMatrix<f64>,
    b: DVector<f64>,
    iterations: usize,
    max_iterations: usize,
    /// Consecutive pivots without objective progress.
    degenerate_run: usize,
}

enum Step {
    Optimal,
    Unbounded,
    Moved,
}

impl Tableau {
    fn new(p: &LpProblem) -> Self {
        let (m, n) = (p.n_rows(), p.n_vars());
        let cols = n + m;
        let mut lower = p.lower.clone();
        let mut upper = p.upper.clone();
        lower.extend(std::iter::repeat_n(0.0, m));
        upper.extend(std::iter::repeat_n(f64::INFINITY, m));

        let mut x = vec![0.0; cols];
        let mut status = vec![Status::Basic; cols];
        for j in 0..n {
            let (s, v) = if p.lower[j].is_finite() {
                (Status::AtLower, p.lower[j])
            } else if p.upper[j].is_finite() {
                (Status::AtUpper, p.upper[j])
            } else {
                (Status::Free, 0.0)
            };
            status[j] = s;
            x[j] = v;
        }

        let b = DVector::from_column_slice(&p.eq_rhs);
        let xn = DVector::from_column_slice(&x[..n]);
        let resid = &b - &p.eq_matrix * xn;
        let sigma: Vec<f64> = resid.iter().map(|&r| if r >= 0.0 { 1.0 } else { -1.0 }).collect();

        let mut a = DMatrix::zeros(m, cols);
        a.view_mut((0, 0), (m, n)).copy_from(&p.eq_matrix);
        for i in 0..m {
            a[(i, n + i)] = sigma[i];
        }

        let mut t = vec![0.0; m * cols];
        for i in 0..m {
            for j in 0..cols {
                t[i * cols + j] = sigma[i] * a[(i, j)];
            }
        }
        let basis: Vec<usize> = (n..cols).collect();
        let beta: Vec<f64> = resid.iter().map(|r| r.abs()).collect();
        x[n..n + m].copy_from_slice(&beta);

        Tableau {
            m,
            cols,
            t,
            beta,
            basis,
            status,
            x,
            lower,
            upper,
            a,
            b,
            iterations: 0,
            degenerate_run: 0,
            max_iterations: 20_000 + 50 * (m + cols),
        }
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * self.cols + j]
    }

    fn reduced_costs(&self, cost: &[f64]) -> Vec<f64> {
        let mut d = cost.to_vec();
        for i in 0..self.m {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                let row = &self.t[i * self.cols..(i + 1) * self.cols];
                for (dj, &tij) in d.iter_mut().zip(row) {
                    *dj -= cb * tij;
                }
            }
        }
        d
    }

    fn pivot(&mut self, r: usize, j: usize) {
        let cols = self.cols;
        let piv = self.at(r, j);
        for v in &mut self.t[r * cols..(r + 1) * cols] {
            *v /= piv;
        }
        let (before, rest) = self.t.split_at_mut(r * cols);
        let (prow, after) = rest.split_at_mut(cols);
        for row in before.chunks_mut(cols).chain(after.chunks_mut(cols)) {
            let f = row[j];
            if f != 0.0 {
                for (v, &p) in row.iter_mut().zip(prow.iter()) {
                    *v -= f * p;
                }
                row[j] = 0.0;
            }
        }
    }

    /// One Bland iteration for `cost`.
    fn step(&mut self, cost: &[f64]) -> Step {
        let d = self.reduced_costs(cost);
        let eligible = (0..self.cols).filter_map(|j| {
            if self.lower[j] == self.upper[j] {
                return None;
            }
            match self.status[j] {
                Status::Basic => None,
                Status::AtLower if d[j] < -PRICE_TOL => Some((j, 1.0)),
                Status::AtUpper if d[j] > PRICE_TOL => Some((j, -1.0)),
                Status::Free if d[j].abs() > PRICE_TOL => Some((j, if d[j] < 0.0 { 1.0 } else { -1.0 })),
                _ => None,
            }
        });
        // Dantzig pricing; Bland's rule once progress stalls on a degenerate vertex.
        let entering = if self.degenerate_run >= BLAND_AFTER {
            eligible.into_iter().next()
        } else {
            eligible.fold(None, |best: Option<(usize, f64)>, (j, dir)| match best {
                Some((b, _)) if d[b].abs() >= d[j].abs() => best,
                _ => Some((j, dir)),
            })
        };
        let Some((j, dir)) = entering else {
            return Step::Optimal;
        };

        // Ratio test; ties go to the smallest basic variable index.
        let mut theta = f64::INFINITY;
        let mut leave: Option<(usize, bool)> = None;
        for i in 0..self.m {
            let tij = self.at(i, j);
            if tij.abs() <= PIVOT_TOL {
                continue;
            }
            let alpha = -dir * tij;
            let bi = self.basis[i];
            let (limit, to_lower) = if alpha < 0.0 {
                if !self.lower[bi].is_finite() {
                    continue;
                }
                (((self.beta[i] - self.lower[bi]) / -alpha).max(0.0), true)
            } else {
                if !self.upper[bi].is_finite() {
                    continue;
                }
                (((self.upper[bi] - self.beta[i]) / alpha).max(0.0), false)
            };
            let better = match leave {
                None => true,
                Some((r, _)) => limit < theta || (limit == theta && bi < self.basis[r]),
            };
            if better {
                theta = limit;
                leave = Some((i, to_lower));
            }
        }
        let span = self.upper[j] - self.lower[j];
        let flip = span.is_finite() && span <= theta;
        if flip {
            theta = span;
        }
        if !theta.is_finite() {
            return Step::Unbounded;
        }

        self.iterations += 1;
        if theta > 0.0 {
            self.degenerate_run = 0;
        } else {
            self.degenerate_run += 1;
        }
        for i in 0..self.m {
            let tij = self.at(i, j);
            if tij != 0.0 {
                self.beta[i] -= dir * tij * theta;
                self.x[self.basis[i]] = self.beta[i];
            }
        }
        self.x[j] += dir * theta;

        if flip {
            self.status[j] = if dir > 0.0 { Status::AtUpper } else { Status::AtLower };
            self.x[j] = if dir > 0.0 { self.upper[j] } else { self.lower[j] };
            return Step::Moved;
        }

        let (r, to_lower) = leave.expect("finite ratio has a leaving row");
        let out = self.basis[r];
        self.status[out] = if to_lower { Status::AtLower } else { Status::AtUpper };
        self.x[out] = if to_lower { self.lower[out] } else { self.upper[out] };
        self.pivot(r, j);
        self.basis[r] = j;
        self.status[j] = Status::Basic;
        self.beta[r] = self.x[j];
        Step::Moved
    }

    fn run(&mut self, cost: &[f64]) -> Result<bool, LpError> {
        loop {
            if self.iterations >= self.max_iterations {
                return Err(LpError::Stalled(self.iterations));
            }
            match self.step(cost) {
                Step::Optimal => return Ok(true),
                Step::Unbounded => return Ok(false),
                Step::Moved => {}
            }
        }
    }

    fn basis_matrix(&self) -> DMatrix<f64> {
        let mut bm = DMatrix::zeros(self.m, self.m);
        for (c, &j) in self.basis.iter().enumerate() {
            bm.set_column(c, &self.a.column(j));
        }
        bm
    }

    /// Rebuilds tableau and basic values from the original data.
    fn refactor(&mut self) -> Result<(), LpError> {
        if self.m == 0 {
            return Ok(());
        }
        let lu = self.basis_matrix().lu();
        let Some(binv) = lu.try_inverse() else {
            return Err(LpError::Uncertified("basis matrix is singular".into()));
        };
        let t = &binv * &self.a;
        for i in 0..self.m {
            for j in 0..self.cols {
                self.t[i * self.cols + j] = t[(i, j)];
            }
        }
        let mut rhs = self.b.clone();
        for j in 0..self.cols {
            if self.status[j] != Status::Basic && self.x[j] != 0.0 {
                rhs -= self.a.column(j) * self.x[j];
            }
        }
        let xb = binv * rhs;
        for i in 0..self.m {
            self.beta[i] = xb[i];
            self.x[self.basis[i]] = xb[i];
        }
        Ok(())
    }

    /// Primal and dual feasibility check of the current basis, from scratch.
    fn certify(&self, cost: &[f64]) -> Result<Vec<f64>, String> {
        let scale_b = 1.0 + self.b.amax();
        let scale_c = 1.0 + cost.iter().fold(0.0f64, |a, c| a.max(c.abs()));
        let ptol = CERT_TOL * scale_b;
        let dtol = CERT_TOL * scale_c;

        for j in 0..self.cols {
            if self.x[j] < self.lower[j] - ptol || self.x[j] > self.upper[j] + ptol {
                return Err(format!("variable {j} = {} violates its bounds", self.x[j]));
            }
        }
        let resid = &self.a * DVector::from_column_slice(&self.x) - &self.b;
        if resid.amax() > ptol {
            return Err(format!("row residual {:e}", resid.amax()));
        }

        let y = if self.m == 0 {
            DVector::zeros(0)
        } else {
            let cb = DVector::from_iterator(self.m, self.basis.iter().map(|&j| cost[j]));
            self.basis_matrix()
                .transpose()
                .lu()
                .solve(&cb)
                .ok_or_else(|| "basis matrix is singular".to_string())?
        };
        for (j, &c) in cost.iter().enumerate().take(self.cols) {
            if self.lower[j] == self.upper[j] {
                continue;
            }
            let dj = c - self.a.column(j).dot(&y);
            let ok = match self.status[j] {
                Status::Basic => dj.abs() <= dtol,
                Status::AtLower => dj >= -dtol,
                Status::AtUpper => dj <= dtol,
                Status::Free => dj.abs() <= dtol,
            };
            if !ok {
                return Err(format!("reduced cost {dj:e} of variable {j} is not dual feasible"));
            }
        }
        Ok(y.iter().copied().collect())
    }

    /// Phase I residual: sum of artificial values.
    fn infeasibility(&self, n: usize) -> f64 {
        self.x[n..].iter().sum()
    }

    /// Pivots basic artificials out where possible and fixes all artificials at zero.
    fn retire_artificials(&mut self, n: usize) {
        for r in 0..self.m {
            if self.basis[r] < n {
                continue;
            }
            let best = (0..n)
                .filter(|&j| self.status[j] != Status::Basic)
                .map(|j| (j, self.at(r, j).abs()))
                .filter(|&(_, v)| v > PIVOT_TOL)
                .fold(None, |acc: Option<(usize, f64)>, c| match acc {
                    Some(a) if a.1 >= c.1 => Some(a),
                    _ => Some(c),
                });
            if let Some((j, _)) = best {
                let out = self.basis[r];
                self.pivot(r, j);
                self.basis[r] = j;
                self.status[j] = Status::Basic;
                self.beta[r] = self.x[j];
                self.status[out] = Status::AtLower;
                self.x[out] = 0.0;
            }
        }
        for j in n..self.cols {
            self.upper[j] = 0.0;
            if self.status[j] != Status::Basic {
                self.x[j] = 0.0;
            }
        }
    }
}

/// Solves `p`, returning a certified optimum, or an infeasibility/unboundedness verdict.
pub fn solve_lp(p: &LpProblem) -> Result<LpOutcome, LpError> {
    p.check()?;
    let n = p.n_vars();
    let mut tab = Tableau::new(p);

    let mut phase1 = vec![0.0; tab.cols];
    phase1[n..].iter_mut().for_each(|c| *c = 1.0);
    tab.run(&phase1)?;
    tab.refactor()?;
    let feas_tol = CERT_TOL * (1.0 + tab.b.amax());
    if tab.infeasibility(n) > feas_tol {
        // Confirm with a fresh factorization before declaring infeasibility.
        tab.run(&phase1)?;
        if tab.infeasibility(n) > feas_tol {
            return Ok(LpOutcome::Infeasible);
        }
    }
    tab.retire_artificials(n);

    let mut cost = p.objective.clone();
    cost.extend(std::iter::repeat_n(0.0, p.n_rows()));
    let mut attempts = 0;
    loop {
        if !tab.run(&cost)? {
            return Ok(LpOutcome::Unbounded);
        }
        tab.refactor()?;
        match tab.certify(&cost) {
            Ok(duals) => {
                let x: Vec<f64> = tab.x[..n]
                    .iter()
                    .zip(p.lower.iter().zip(&p.upper))
                    .map(|(&v, (&l, &u))| v.clamp(l, u))
                    .collect();
                let objective = x.iter().zip(&p.objective).map(|(a, c)| a * c).sum();
                return Ok(LpOutcome::Optimal(LpSolution {
                    x,
                    objective,
                    duals,
                    iterations: tab.iterations,
                }));
            }
            Err(msg) => {
                attempts += 1;
                if attempts > MAX_REFACTOR {
                    return Err(LpError::Uncertified(msg));
                }
            }
        }
    }
}
