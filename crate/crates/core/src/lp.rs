//! Dense two-phase simplex with dual certificates.
//!
//! Problems are stated as
//!
//! ```text
//! min/max  c'x   s.t.  A_ub x <= b_ub,  A_eq x = b_eq,  lower <= x <= upper
//! ```
//!
//! Row duals are reported as sensitivities `d(optimal value) / d(rhs)`, so
//! inequality duals are `<= 0` for minimization and `>= 0` for maximization.
//! Reduced costs are `c - A_ub' y_ub - A_eq' y_eq`.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const FEASIBILITY_TOL: f64 = 1e-8;
const PIVOT_TOL: f64 = 1e-9;
const OPTIMALITY_TOL: f64 = 1e-10;
const PHASE_ONE_TOL: f64 = 1e-9;
const DEGENERATE_STREAK_FOR_BLAND: usize = 50;
const REFACTOR_EVERY: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

impl Sense {
    fn sign(self) -> f64 {
        match self {
            Sense::Minimize => 1.0,
            Sense::Maximize => -1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearProgram {
    pub sense: Sense,
    pub cost: Vec<f64>,
    pub a_ub: Vec<Vec<f64>>,
    pub b_ub: Vec<f64>,
    pub a_eq: Vec<Vec<f64>>,
    pub b_eq: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LinearProgram {
    /// New program with all variables bounded to `[0, +inf)`.
    pub fn new(sense: Sense, cost: Vec<f64>) -> Self {
        let n = cost.len();
        LinearProgram {
            sense,
            cost,
            a_ub: Vec::new(),
            b_ub: Vec::new(),
            a_eq: Vec::new(),
            b_eq: Vec::new(),
            lower: vec![0.0; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.cost.len()
    }

    pub fn set_bounds(&mut self, var: usize, lower: f64, upper: f64) -> &mut Self {
        self.lower[var] = lower;
        self.upper[var] = upper;
        self
    }

    pub fn add_le(&mut self, row: Vec<f64>, rhs: f64) -> &mut Self {
        self.a_ub.push(row);
        self.b_ub.push(rhs);
        self
    }

    pub fn add_ge(&mut self, row: Vec<f64>, rhs: f64) -> &mut Self {
        self.a_ub.push(row.into_iter().map(|v| -v).collect());
        self.b_ub.push(-rhs);
        self
    }

    pub fn add_eq(&mut self, row: Vec<f64>, rhs: f64) -> &mut Self {
        self.a_eq.push(row);
        self.b_eq.push(rhs);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.cost.len();
        let bad = |what: String| Err(Error::MalformedLp(what));
        if self.lower.len() != n || self.upper.len() != n {
            return bad(format!("bounds must have {n} entries"));
        }
        if self.a_ub.len() != self.b_ub.len() || self.a_eq.len() != self.b_eq.len() {
            return bad("constraint rows and right-hand sides differ in count".into());
        }
        for (i, row) in self.a_ub.iter().chain(&self.a_eq).enumerate() {
            if row.len() != n {
                return bad(format!("constraint row {i} has {} entries, expected {n}", row.len()));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return bad(format!("constraint row {i} has a non-finite coefficient"));
            }
        }
        if self.cost.iter().chain(&self.b_ub).chain(&self.b_eq).any(|v| !v.is_finite()) {
            return bad("cost and right-hand sides must be finite".into());
        }
        for j in 0..n {
            let (l, u) = (self.lower[j], self.upper[j]);
            if l.is_nan() || u.is_nan() || l == f64::INFINITY || u == f64::NEG_INFINITY || l > u {
                return bad(format!("variable {j} has invalid bounds [{l}, {u}]"));
            }
        }
        Ok(())
    }

    pub fn objective_at(&self, x: &[f64]) -> f64 {
        dot(&self.cost, x)
    }

    /// Plain-text dump: a header with sizes, then one dense row per line.
    ///
    /// ```text
    /// lp max vars 2 ub 1 eq 1
    /// cost 1 2
    /// lower 0 -inf
    /// upper inf 3
    /// ub 1 1 <= 4
    /// eq 1 -1 = 0
    /// ```
    pub fn to_text(&self) -> String {
        let sense = match self.sense {
            Sense::Minimize => "min",
            Sense::Maximize => "max",
        };
        let mut s = format!(
            "lp {sense} vars {} ub {} eq {}\n",
            self.num_vars(),
            self.a_ub.len(),
            self.a_eq.len()
        );
        let join = |v: &[f64]| v.iter().map(|x| fmt_num(*x)).collect::<Vec<_>>().join(" ");
        let _ = writeln!(s, "cost {}", join(&self.cost));
        let _ = writeln!(s, "lower {}", join(&self.lower));
        let _ = writeln!(s, "upper {}", join(&self.upper));
        for (row, b) in self.a_ub.iter().zip(&self.b_ub) {
            let _ = writeln!(s, "ub {} <= {}", join(row), fmt_num(*b));
        }
        for (row, b) in self.a_eq.iter().zip(&self.b_eq) {
            let _ = writeln!(s, "eq {} = {}", join(row), fmt_num(*b));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let perr = |m: String| Error::Parse(m);
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header: Vec<&str> = lines.next().ok_or_else(|| perr("empty lp text".into()))?.split_whitespace().collect();
        if header.len() != 8 || header[0] != "lp" || header[2] != "vars" || header[4] != "ub" || header[6] != "eq" {
            return Err(perr(format!("bad header '{}'", header.join(" "))));
        }
        let sense = match header[1] {
            "min" => Sense::Minimize,
            "max" => Sense::Maximize,
            other => return Err(perr(format!("unknown sense '{other}'"))),
        };
        let count = |s: &str| s.parse::<usize>().map_err(|e| perr(format!("bad count '{s}': {e}")));
        let (n, mub, meq) = (count(header[3])?, count(header[5])?, count(header[7])?);
        let mut vector = |tag: &str, len: usize| -> Result<(Vec<f64>, Vec<String>)> {
            let line = lines.next().ok_or_else(|| perr(format!("missing '{tag}' line")))?;
            let mut toks = line.split_whitespace();
            if toks.next() != Some(tag) {
                return Err(perr(format!("expected '{tag}' line, got '{line}'")));
            }
            let toks: Vec<&str> = toks.collect();
            if toks.len() < len {
                return Err(perr(format!("'{tag}' line has {} values, expected {len}", toks.len())));
            }
            let vals = toks[..len].iter().map(|t| parse_num(t)).collect::<Result<Vec<_>>>()?;
            Ok((vals, toks[len..].iter().map(|s| s.to_string()).collect()))
        };
        let (cost, _) = vector("cost", n)?;
        let (lower, _) = vector("lower", n)?;
        let (upper, _) = vector("upper", n)?;
        let mut lp = LinearProgram::new(sense, cost);
        lp.lower = lower;
        lp.upper = upper;
        for (tag, op, m) in [("ub", "<=", mub), ("eq", "=", meq)] {
            for _ in 0..m {
                let (row, rest) = vector(tag, n)?;
                if rest.len() != 2 || rest[0] != op {
                    return Err(perr(format!("'{tag}' row must end with '{op} <rhs>'")));
                }
                let rhs = parse_num(&rest[1])?;
                if tag == "ub" {
                    lp.add_le(row, rhs);
                } else {
                    lp.add_eq(row, rhs);
                }
            }
        }
        lp.validate()?;
        Ok(lp)
    }
}

fn fmt_num(x: f64) -> String {
    if x == f64::INFINITY {
        "inf".into()
    } else if x == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{x:?}")
    }
}

fn parse_num(s: &str) -> Result<f64> {
    match s {
        "inf" | "+inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => s.parse::<f64>().map_err(|e| Error::Parse(format!("bad number '{s}': {e}"))),
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
    NumericalFailure,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub objective: f64,
    pub x: Vec<f64>,
    pub dual_ub: Vec<f64>,
    pub dual_eq: Vec<f64>,
    pub reduced_costs: Vec<f64>,
    pub iterations: usize,
}

/// Optimality certificate residuals of a solution against its program.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CertificateResiduals {
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
    pub dual_objective: f64,
    pub gap: f64,
}

impl CertificateResiduals {
    pub fn within(&self, tol: f64) -> bool {
        self.primal <= tol
            && self.dual <= tol
            && self.complementarity <= tol
            && self.gap <= tol * (1.0 + self.dual_objective.abs())
    }
}

impl LpSolution {
    fn without_solution(status: LpStatus, lp: &LinearProgram, iterations: usize) -> Self {
        LpSolution {
            status,
            objective: f64::NAN,
            x: vec![f64::NAN; lp.num_vars()],
            dual_ub: vec![f64::NAN; lp.a_ub.len()],
            dual_eq: vec![f64::NAN; lp.a_eq.len()],
            reduced_costs: vec![f64::NAN; lp.num_vars()],
            iterations,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }

    pub fn residuals(&self, lp: &LinearProgram) -> CertificateResiduals {
        let s = lp.sense.sign();
        let x = &self.x;
        let mut primal = 0.0f64;
        for (row, b) in lp.a_ub.iter().zip(&lp.b_ub) {
            primal = primal.max(dot(row, x) - b);
        }
        for (row, b) in lp.a_eq.iter().zip(&lp.b_eq) {
            primal = primal.max((dot(row, x) - b).abs());
        }
        for j in 0..x.len() {
            primal = primal.max(lp.lower[j] - x[j]).max(x[j] - lp.upper[j]);
        }

        let mut dual = 0.0f64;
        let mut comp = 0.0f64;
        let mut dual_obj = dot(&self.dual_ub, &lp.b_ub) + dot(&self.dual_eq, &lp.b_eq);
        for (i, (row, b)) in lp.a_ub.iter().zip(&lp.b_ub).enumerate() {
            let y = self.dual_ub[i];
            dual = dual.max(s * y);
            comp = comp.max((y * (b - dot(row, x))).abs());
        }
        for j in 0..x.len() {
            let d = self.reduced_costs[j];
            let (l, u) = (lp.lower[j], lp.upper[j]);
            // s*d > 0 pushes the variable to its lower bound, s*d < 0 to its upper.
            if s * d > 0.0 {
                if l.is_finite() {
                    comp = comp.max((d * (x[j] - l)).abs());
                    dual_obj += d * l;
                } else {
                    dual = dual.max((s * d).abs());
                    dual_obj += d * x[j];
                }
            } else if s * d < 0.0 {
                if u.is_finite() {
                    comp = comp.max((d * (u - x[j])).abs());
                    dual_obj += d * u;
                } else {
                    dual = dual.max((s * d).abs());
                    dual_obj += d * x[j];
                }
            }
        }
        CertificateResiduals {
            primal: primal.max(0.0),
            dual,
            complementarity: comp,
            dual_objective: dual_obj,
            gap: (self.objective - dual_obj).abs(),
        }
    }
}

/// One-shot solve.
pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution> {
    Ok(SimplexSolver::new(lp)?.solve())
}

#[derive(Clone, Debug)]
enum RowOrigin {
    Ub(usize),
    Eq(usize),
    Bound,
}

/// `x_j = offset + sum(coef * y_col)` over standard-form columns.
#[derive(Clone, Debug)]
struct VarMap {
    offset: f64,
    cols: Vec<(usize, f64)>,
}

/// `min c'y  s.t.  A y = b, y >= 0` with `b >= 0`.
#[derive(Clone, Debug)]
struct StandardForm {
    m: usize,
    n: usize,
    a: DMatrix<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    row_origin: Vec<RowOrigin>,
    row_sign: Vec<f64>,
    /// Column index of the `+1` slack for rows that have one.
    slack: Vec<Option<usize>>,
    vars: Vec<VarMap>,
}

impl StandardForm {
    fn build(lp: &LinearProgram) -> Self {
        let n_orig = lp.num_vars();
        let mut vars = Vec::with_capacity(n_orig);
        let mut ncols = 0usize;
        let mut bound_rows: Vec<(usize, f64)> = Vec::new();
        for j in 0..n_orig {
            let (l, u) = (lp.lower[j], lp.upper[j]);
            let map = if l.is_finite() {
                let col = ncols;
                ncols += 1;
                if u.is_finite() {
                    bound_rows.push((col, u - l));
                }
                VarMap {
                    offset: l,
                    cols: vec![(col, 1.0)],
                }
            } else if u.is_finite() {
                let col = ncols;
                ncols += 1;
                VarMap {
                    offset: u,
                    cols: vec![(col, -1.0)],
                }
            } else {
                let col = ncols;
                ncols += 2;
                VarMap {
                    offset: 0.0,
                    cols: vec![(col, 1.0), (col + 1, -1.0)],
                }
            };
            vars.push(map);
        }
        let n_struct = ncols;
        let m = lp.a_ub.len() + lp.a_eq.len() + bound_rows.len();
        let n_slack = lp.a_ub.len() + bound_rows.len();
        let n = n_struct + n_slack;
        let mut a = DMatrix::zeros(m, n);
        let mut b = vec![0.0; m];
        let mut row_origin = Vec::with_capacity(m);
        let mut slack = vec![None; m];
        let mut next_slack = n_struct;

        let fill_row = |r: usize, coeffs: &[f64], rhs: f64, a: &mut DMatrix<f64>, b: &mut [f64]| {
            let mut rhs = rhs;
            for (j, &coef) in coeffs.iter().enumerate() {
                if coef == 0.0 {
                    continue;
                }
                rhs -= coef * vars[j].offset;
                for &(col, s) in &vars[j].cols {
                    a[(r, col)] += coef * s;
                }
            }
            b[r] = rhs;
        };
        let mut r = 0;
        for (i, (row, rhs)) in lp.a_ub.iter().zip(&lp.b_ub).enumerate() {
            fill_row(r, row, *rhs, &mut a, &mut b);
            a[(r, next_slack)] = 1.0;
            slack[r] = Some(next_slack);
            next_slack += 1;
            row_origin.push(RowOrigin::Ub(i));
            r += 1;
        }
        for (i, (row, rhs)) in lp.a_eq.iter().zip(&lp.b_eq).enumerate() {
            fill_row(r, row, *rhs, &mut a, &mut b);
            row_origin.push(RowOrigin::Eq(i));
            r += 1;
        }
        for &(col, width) in &bound_rows {
            a[(r, col)] = 1.0;
            b[r] = width;
            a[(r, next_slack)] = 1.0;
            slack[r] = Some(next_slack);
            next_slack += 1;
            row_origin.push(RowOrigin::Bound);
            r += 1;
        }
        let mut row_sign = vec![1.0; m];
        for r in 0..m {
            if b[r] < 0.0 {
                b[r] = -b[r];
                a.row_mut(r).neg_mut();
                row_sign[r] = -1.0;
                slack[r] = None;
            }
        }
        let mut sf = StandardForm {
            m,
            n,
            a,
            b,
            c: vec![0.0; n],
            row_origin,
            row_sign,
            slack,
            vars,
        };
        sf.set_cost(lp);
        sf
    }

    fn set_cost(&mut self, lp: &LinearProgram) {
        let sign = lp.sense.sign();
        self.c.iter_mut().for_each(|c| *c = 0.0);
        for (j, map) in self.vars.iter().enumerate() {
            for &(col, s) in &map.cols {
                self.c[col] += sign * lp.cost[j] * s;
            }
        }
    }
}

#[derive(Clone, Debug)]
struct Tableau {
    m: usize,
    ncols: usize,
    /// Row-major `m x (ncols + 1)`, last column is the basic solution.
    t: Vec<f64>,
    basis: Vec<usize>,
    d: Vec<f64>,
    /// Standard-form rows still present (redundant rows are dropped).
    rows: Vec<usize>,
    can_enter: Vec<bool>,
    pivots_since_refactor: usize,
}

enum Outcome {
    Optimal,
    Unbounded,
    IterationLimit,
}

impl Tableau {
    #[inline]
    fn w(&self) -> usize {
        self.ncols + 1
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * (self.ncols + 1) + j]
    }

    #[inline]
    fn rhs(&self, i: usize) -> f64 {
        self.t[i * (self.ncols + 1) + self.ncols]
    }

    fn recompute_reduced_costs(&mut self, cost: &[f64]) {
        let w = self.w();
        self.d.copy_from_slice(&cost[..self.ncols]);
        for i in 0..self.m {
            let cb = cost[self.basis[i]];
            if cb == 0.0 {
                continue;
            }
            let row = &self.t[i * w..i * w + self.ncols];
            for (d, a) in self.d.iter_mut().zip(row) {
                *d -= cb * a;
            }
        }
        for &bj in &self.basis {
            self.d[bj] = 0.0;
        }
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let w = self.w();
        let piv = self.t[r * w + q];
        {
            let row = &mut self.t[r * w..(r + 1) * w];
            for v in row.iter_mut() {
                *v /= piv;
            }
            row[q] = 1.0;
        }
        let pivot_row: Vec<f64> = self.t[r * w..(r + 1) * w].to_vec();
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.t[i * w + q];
            if f == 0.0 {
                continue;
            }
            let row = &mut self.t[i * w..(i + 1) * w];
            for (v, p) in row.iter_mut().zip(&pivot_row) {
                *v -= f * p;
            }
            row[q] = 0.0;
        }
        let f = self.d[q];
        if f != 0.0 {
            for (d, p) in self.d.iter_mut().zip(&pivot_row[..self.ncols]) {
                *d -= f * p;
            }
            self.d[q] = 0.0;
        }
        self.basis[r] = q;
        self.pivots_since_refactor += 1;
    }

    /// Primal simplex on the current reduced costs.
    fn run(&mut self, max_iter: usize, iterations: &mut usize, refactor: &mut dyn FnMut(&mut Tableau)) -> Outcome {
        let mut degenerate_streak = 0usize;
        loop {
            if *iterations >= max_iter {
                return Outcome::IterationLimit;
            }
            if self.pivots_since_refactor >= REFACTOR_EVERY {
                refactor(self);
            }
            let bland = degenerate_streak >= DEGENERATE_STREAK_FOR_BLAND;
            let mut entering = None;
            let mut best = -OPTIMALITY_TOL;
            for j in 0..self.ncols {
                if !self.can_enter[j] {
                    continue;
                }
                let dj = self.d[j];
                if dj < best {
                    entering = Some(j);
                    if bland {
                        break;
                    }
                    best = dj;
                }
            }
            let Some(q) = entering else {
                return Outcome::Optimal;
            };
            let mut leave: Option<(usize, f64, f64)> = None;
            for i in 0..self.m {
                let a = self.at(i, q);
                if a <= PIVOT_TOL {
                    continue;
                }
                let ratio = self.rhs(i).max(0.0) / a;
                leave = match leave {
                    None => Some((i, ratio, a)),
                    Some((li, lr, la)) => {
                        let tie = (ratio - lr).abs() <= 1e-12 * (1.0 + lr.abs());
                        let better = if tie {
                            if bland {
                                self.basis[i] < self.basis[li]
                            } else {
                                a > la
                            }
                        } else {
                            ratio < lr
                        };
                        if better {
                            Some((i, ratio, a))
                        } else {
                            Some((li, lr, la))
                        }
                    }
                };
            }
            let Some((r, ratio, _)) = leave else {
                return Outcome::Unbounded;
            };
            if ratio <= 1e-12 {
                degenerate_streak += 1;
            } else {
                degenerate_streak = 0;
            }
            self.pivot(r, q);
            *iterations += 1;
        }
    }
}

/// Simplex solver that keeps its final basis so the objective can be
/// changed and the problem re-solved from the previous optimum.
#[derive(Clone, Debug)]
pub struct SimplexSolver {
    lp: LinearProgram,
    sf: StandardForm,
    /// Phase-two tableau once a feasible basis has been found.
    tableau: Option<Tableau>,
    infeasible: bool,
    iterations: usize,
}

impl SimplexSolver {
    pub fn new(lp: &LinearProgram) -> Result<Self> {
        lp.validate()?;
        Ok(SimplexSolver {
            lp: lp.clone(),
            sf: StandardForm::build(lp),
            tableau: None,
            infeasible: false,
            iterations: 0,
        })
    }

    pub fn program(&self) -> &LinearProgram {
        &self.lp
    }

    fn max_iter(&self) -> usize {
        20 * (self.sf.m + self.sf.n) + 1000
    }

    /// Replaces the objective; the constraint set and any feasible basis are kept.
    pub fn set_cost(&mut self, cost: &[f64]) -> Result<()> {
        if cost.len() != self.lp.num_vars() || cost.iter().any(|c| !c.is_finite()) {
            return Err(Error::MalformedLp("cost vector has wrong length or non-finite entries".into()));
        }
        self.lp.cost.copy_from_slice(cost);
        self.sf.set_cost(&self.lp);
        if let Some(tab) = self.tableau.as_mut() {
            tab.recompute_reduced_costs(&self.sf.c);
        }
        Ok(())
    }

    /// Finds a feasible basis; returns false if the program is infeasible.
    fn phase_one(&mut self) -> std::result::Result<bool, LpStatus> {
        let sf = &self.sf;
        let m = sf.m;
        let art_rows: Vec<usize> = (0..m).filter(|&r| sf.slack[r].is_none()).collect();
        let ncols = sf.n + art_rows.len();
        let w = ncols + 1;
        let mut t = vec![0.0; m * w];
        for r in 0..m {
            for j in 0..sf.n {
                t[r * w + j] = sf.a[(r, j)];
            }
            t[r * w + ncols] = sf.b[r];
        }
        let mut basis = vec![0usize; m];
        for r in 0..m {
            if let Some(s) = sf.slack[r] {
                basis[r] = s;
            }
        }
        for (k, &r) in art_rows.iter().enumerate() {
            t[r * w + sf.n + k] = 1.0;
            basis[r] = sf.n + k;
        }
        let mut cost1 = vec![0.0; ncols];
        cost1[sf.n..].iter_mut().for_each(|c| *c = 1.0);
        let mut tab = Tableau {
            m,
            ncols,
            t,
            basis,
            d: vec![0.0; ncols],
            rows: (0..m).collect(),
            can_enter: vec![true; ncols],
            pivots_since_refactor: 0,
        };
        tab.recompute_reduced_costs(&cost1);
        if !art_rows.is_empty() {
            let max_iter = self.max_iter();
            let mut iterations = self.iterations;
            let mut no_refactor = |_: &mut Tableau| {};
            let outcome = tab.run(max_iter, &mut iterations, &mut no_refactor);
            self.iterations = iterations;
            match outcome {
                Outcome::Optimal => {}
                Outcome::IterationLimit => return Err(LpStatus::IterationLimit),
                // Phase one is bounded below by zero.
                Outcome::Unbounded => return Err(LpStatus::NumericalFailure),
            }
            let infeasibility: f64 = (0..m)
                .filter(|&i| tab.basis[i] >= sf.n)
                .map(|i| tab.rhs(i))
                .sum();
            let scale = 1.0 + sf.b.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            if infeasibility > PHASE_ONE_TOL * scale {
                return Ok(false);
            }
            // Drive remaining artificials out of the basis, dropping redundant rows.
            let mut r = 0;
            while r < tab.m {
                if tab.basis[r] < sf.n {
                    r += 1;
                    continue;
                }
                let pick = (0..sf.n)
                    .filter(|&j| tab.at(r, j).abs() > PIVOT_TOL)
                    .max_by(|&a, &b| tab.at(r, a).abs().total_cmp(&tab.at(r, b).abs()));
                match pick {
                    Some(q) => {
                        tab.pivot(r, q);
                        r += 1;
                    }
                    None => {
                        tab.t.drain(r * w..(r + 1) * w);
                        tab.basis.remove(r);
                        tab.rows.remove(r);
                        tab.m -= 1;
                    }
                }
            }
        }
        // Drop artificial columns.
        let m2 = tab.m;
        let w2 = sf.n + 1;
        let mut t2 = vec![0.0; m2 * w2];
        for i in 0..m2 {
            t2[i * w2..i * w2 + sf.n].copy_from_slice(&tab.t[i * w..i * w + sf.n]);
            t2[i * w2 + sf.n] = tab.t[i * w + ncols];
        }
        let mut tab2 = Tableau {
            m: m2,
            ncols: sf.n,
            t: t2,
            basis: tab.basis,
            d: vec![0.0; sf.n],
            rows: tab.rows,
            can_enter: vec![true; sf.n],
            pivots_since_refactor: 0,
        };
        refactor(&self.sf, &mut tab2);
        tab2.recompute_reduced_costs(&self.sf.c);
        self.tableau = Some(tab2);
        Ok(true)
    }

    /// Solves (or re-solves after [`SimplexSolver::set_cost`]) with a full
    /// certificate computed from a fresh factorization of the final basis.
    pub fn solve(&mut self) -> LpSolution {
        self.solve_inner(true)
    }

    /// Like [`SimplexSolver::solve`] but reads the solution off the tableau
    /// without refactoring; duals and reduced costs are left empty.
    pub fn solve_primal(&mut self) -> LpSolution {
        self.solve_inner(false)
    }

    fn solve_inner(&mut self, certify: bool) -> LpSolution {
        self.iterations = 0;
        if self.infeasible {
            return LpSolution::without_solution(LpStatus::Infeasible, &self.lp, 0);
        }
        if self.tableau.is_none() {
            match self.phase_one() {
                Ok(true) => {}
                Ok(false) => {
                    self.infeasible = true;
                    return LpSolution::without_solution(LpStatus::Infeasible, &self.lp, self.iterations);
                }
                Err(status) => return LpSolution::without_solution(status, &self.lp, self.iterations),
            }
        }
        let max_iter = self.iterations + self.max_iter();
        for _attempt in 0..4 {
            let sf = &self.sf;
            let tab = self.tableau.as_mut().expect("phase one leaves a tableau");
            let mut iterations = self.iterations;
            let mut refac = |t: &mut Tableau| {
                refactor(sf, t);
                t.recompute_reduced_costs(&sf.c);
            };
            let outcome = tab.run(max_iter, &mut iterations, &mut refac);
            self.iterations = iterations;
            match outcome {
                Outcome::Unbounded => {
                    return LpSolution::without_solution(LpStatus::Unbounded, &self.lp, self.iterations)
                }
                Outcome::IterationLimit => {
                    return LpSolution::without_solution(LpStatus::IterationLimit, &self.lp, self.iterations)
                }
                Outcome::Optimal => {}
            }
            if !certify {
                return self.read_primal(tab_clone_rhs(self.tableau.as_ref().unwrap()));
            }
            match self.certify() {
                Some(sol) => return sol,
                None => {
                    // Refactor and keep iterating from the recovered basis.
                    let tab = self.tableau.as_mut().unwrap();
                    refactor(&self.sf, tab);
                    tab.recompute_reduced_costs(&self.sf.c);
                    if (0..tab.m).any(|i| tab.rhs(i) < -FEASIBILITY_TOL) {
                        return LpSolution::without_solution(LpStatus::NumericalFailure, &self.lp, self.iterations);
                    }
                }
            }
        }
        LpSolution::without_solution(LpStatus::NumericalFailure, &self.lp, self.iterations)
    }

    fn read_primal(&self, y_basic: Vec<(usize, f64)>) -> LpSolution {
        let mut y = vec![0.0; self.sf.n];
        for (col, v) in y_basic {
            y[col] = v.max(0.0);
        }
        let x = self.original_x(&y);
        LpSolution {
            status: LpStatus::Optimal,
            objective: self.lp.objective_at(&x),
            x,
            dual_ub: Vec::new(),
            dual_eq: Vec::new(),
            reduced_costs: Vec::new(),
            iterations: self.iterations,
        }
    }

    fn original_x(&self, y: &[f64]) -> Vec<f64> {
        self.sf
            .vars
            .iter()
            .map(|v| v.offset + v.cols.iter().map(|&(c, s)| s * y[c]).sum::<f64>())
            .collect()
    }

    /// Recomputes primal and dual solutions from an LU factorization of the
    /// final basis. Returns `None` if the basis is not optimal to tolerance.
    fn certify(&self) -> Option<LpSolution> {
        let sf = &self.sf;
        let tab = self.tableau.as_ref()?;
        let m = tab.m;
        let basis_matrix = DMatrix::from_fn(m, m, |i, k| sf.a[(tab.rows[i], tab.basis[k])]);
        let rhs = DVector::from_fn(m, |i, _| sf.b[tab.rows[i]]);
        let lu = basis_matrix.clone().lu();
        let y_b = lu.solve(&rhs)?;
        let c_b = DVector::from_fn(m, |k, _| sf.c[tab.basis[k]]);
        let pi = basis_matrix.transpose().lu().solve(&c_b)?;
        if y_b.iter().any(|v| *v < -FEASIBILITY_TOL) {
            return None;
        }
        let mut y = vec![0.0; sf.n];
        for k in 0..m {
            y[tab.basis[k]] = y_b[k].max(0.0);
        }
        // Standard-form reduced costs must be non-negative at an optimum.
        for j in 0..sf.n {
            let mut dj = sf.c[j];
            for (i, &r) in tab.rows.iter().enumerate() {
                dj -= pi[i] * sf.a[(r, j)];
            }
            if dj < -FEASIBILITY_TOL * (1.0 + sf.c[j].abs()) {
                return None;
            }
        }
        let x = self.original_x(&y);
        let sense = self.lp.sense.sign();
        let mut dual_ub = vec![0.0; self.lp.a_ub.len()];
        let mut dual_eq = vec![0.0; self.lp.a_eq.len()];
        for (i, &r) in tab.rows.iter().enumerate() {
            let val = sense * sf.row_sign[r] * pi[i];
            match sf.row_origin[r] {
                RowOrigin::Ub(k) => dual_ub[k] = val,
                RowOrigin::Eq(k) => dual_eq[k] = val,
                RowOrigin::Bound => {}
            }
        }
        let lp = &self.lp;
        let reduced_costs = (0..lp.num_vars())
            .map(|j| {
                let mut d = lp.cost[j];
                for (row, y) in lp.a_ub.iter().zip(&dual_ub) {
                    d -= row[j] * y;
                }
                for (row, y) in lp.a_eq.iter().zip(&dual_eq) {
                    d -= row[j] * y;
                }
                d
            })
            .collect();
        Some(LpSolution {
            status: LpStatus::Optimal,
            objective: lp.objective_at(&x),
            x,
            dual_ub,
            dual_eq,
            reduced_costs,
            iterations: self.iterations,
        })
    }
}

fn tab_clone_rhs(tab: &Tableau) -> Vec<(usize, f64)> {
    (0..tab.m).map(|i| (tab.basis[i], tab.rhs(i))).collect()
}

/// Rebuilds `B^-1 [A | b]` for the tableau's current basis.
fn refactor(sf: &StandardForm, tab: &mut Tableau) {
    let m = tab.m;
    tab.pivots_since_refactor = 0;
    if m == 0 {
        return;
    }
    let basis_matrix = DMatrix::from_fn(m, m, |i, k| sf.a[(tab.rows[i], tab.basis[k])]);
    let lu = basis_matrix.lu();
    let ncols = tab.ncols;
    let mut rhs = DMatrix::zeros(m, ncols + 1);
    for (i, &r) in tab.rows.iter().enumerate() {
        for j in 0..ncols {
            rhs[(i, j)] = sf.a[(r, j)];
        }
        rhs[(i, ncols)] = sf.b[r];
    }
    // A singular basis here means the tableau already drifted badly; keep it.
    if let Some(sol) = lu.solve(&rhs) {
        let w = ncols + 1;
        for i in 0..m {
            for j in 0..w {
                tab.t[i * w + j] = sol[(i, j)];
            }
        }
    }
}
