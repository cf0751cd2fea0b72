//! The outer decision problem: true optimum, noisy sample average, and the
//! distributionally robust solution.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::ambiguity::AmbiguitySpec;
use crate::dist::{same_support, DiscreteDistribution, SampleSet, Support};
use crate::error::{Error, Result};
use crate::worst_case::{worst_case_dual, WorstCaseEngine, WorstCaseResult};

pub const SUBGRADIENT_MAX_ITER: usize = 5000;
pub const SUBGRADIENT_WINDOW: usize = 50;
pub const SUBGRADIENT_MIN_IMPROVEMENT: f64 = 1e-7;
/// Step length (relative to the box diameter) below which a stall ends the run.
pub const SUBGRADIENT_MIN_STEP: f64 = 1e-7;
pub const SUBGRADIENT_RESTART_SHRINK: f64 = 4.0;

#[derive(Clone, Debug, PartialEq)]
pub enum LossModel {
    /// `h[j][k]` is the loss of decision `j` at the `k`-th point of `domain`.
    Table { domain: Arc<Support>, h: Vec<Vec<f64>> },
    /// `h(x, xi) = (xi_m - [xi_1 .. xi_{m-1} 1] . x)^2` with `lower <= x <= upper`.
    QuadraticRegression { lower: Vec<f64>, upper: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Decision {
    Row(usize),
    Vector(Vec<f64>),
}

impl std::fmt::Display for Decision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Decision::Row(j) => write!(f, "row {j}"),
            Decision::Vector(x) => {
                let parts: Vec<String> = x.iter().map(|v| format!("{v:.6}")).collect();
                write!(f, "[{}]", parts.join(", "))
            }
        }
    }
}

fn features(point: &[i64]) -> (Vec<f64>, f64) {
    let m = point.len();
    let mut phi: Vec<f64> = point[..m - 1].iter().map(|&v| v as f64).collect();
    phi.push(1.0);
    (phi, point[m - 1] as f64)
}

impl LossModel {
    pub fn table(domain: Arc<Support>, h: Vec<Vec<f64>>) -> Result<Self> {
        if h.is_empty() {
            return Err(Error::InvalidModel("loss table needs at least one decision".into()));
        }
        for (j, row) in h.iter().enumerate() {
            if row.len() != domain.len() {
                return Err(Error::InvalidModel(format!(
                    "row {j} has {} entries, domain has {} points",
                    row.len(),
                    domain.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidModel(format!("row {j} has a non-finite loss")));
            }
        }
        Ok(LossModel::Table { domain, h })
    }

    pub fn regression(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::InvalidModel("box bounds must be non-empty and of equal length".into()));
        }
        for (l, u) in lower.iter().zip(&upper) {
            if !l.is_finite() || !u.is_finite() || l > u {
                return Err(Error::InvalidModel(format!("box side [{l}, {u}] must be finite and ordered")));
            }
        }
        Ok(LossModel::QuadraticRegression { lower, upper })
    }

    pub fn num_rows(&self) -> Option<usize> {
        match self {
            LossModel::Table { h, .. } => Some(h.len()),
            LossModel::QuadraticRegression { .. } => None,
        }
    }

    fn check_support(&self, support: &Support) -> Result<()> {
        match self {
            LossModel::Table { .. } => Ok(()),
            LossModel::QuadraticRegression { lower, .. } => {
                if support.dim() != lower.len() {
                    Err(Error::DomainMismatch(format!(
                        "regression on {}-dimensional points needs {} coefficients, box has {}",
                        support.dim(),
                        support.dim(),
                        lower.len()
                    )))
                } else {
                    Ok(())
                }
            }
        }
    }

    pub fn check_decision(&self, decision: &Decision) -> Result<()> {
        match (self, decision) {
            (LossModel::Table { h, .. }, Decision::Row(j)) if *j < h.len() => Ok(()),
            (LossModel::QuadraticRegression { lower, upper }, Decision::Vector(x)) if x.len() == lower.len() => {
                let tol = 1e-9;
                if x.iter().zip(lower.iter().zip(upper)).all(|(v, (l, u))| *v >= l - tol && *v <= u + tol) {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!("decision {decision} lies outside the box")))
                }
            }
            _ => Err(Error::InvalidParameter(format!("decision {decision} does not fit the loss model"))),
        }
    }

    /// `h(decision, xi)` for every point of `support`.
    pub fn loss_vector(&self, decision: &Decision, support: &Arc<Support>) -> Result<Vec<f64>> {
        self.check_decision(decision)?;
        self.check_support(support)?;
        match (self, decision) {
            (LossModel::Table { domain, h }, Decision::Row(j)) => {
                if same_support(domain, support) {
                    return Ok(h[*j].clone());
                }
                support
                    .points()
                    .iter()
                    .map(|p| {
                        domain.index_of(p).map(|k| h[*j][k]).ok_or_else(|| {
                            Error::DomainMismatch(format!("point {p:?} is not in the loss table's domain"))
                        })
                    })
                    .collect()
            }
            (LossModel::QuadraticRegression { .. }, Decision::Vector(x)) => Ok(support
                .points()
                .iter()
                .map(|p| regression_loss(x, p))
                .collect()),
            _ => unreachable!("checked by check_decision"),
        }
    }

    /// Loss bound `L = sup |h|` over the decision set and `support`.
    pub fn loss_bound(&self, support: &Arc<Support>) -> Result<f64> {
        self.check_support(support)?;
        match self {
            LossModel::Table { .. } => {
                let rows = self.num_rows().unwrap_or(0);
                let mut l = 0.0f64;
                for j in 0..rows {
                    for v in self.loss_vector(&Decision::Row(j), support)? {
                        l = l.max(v.abs());
                    }
                }
                Ok(l)
            }
            LossModel::QuadraticRegression { lower, upper } => {
                // The residual is affine in x, so its largest magnitude over the
                // box is |residual at the center| + sum |phi_i| * half-width_i.
                let center: Vec<f64> = lower.iter().zip(upper).map(|(l, u)| 0.5 * (l + u)).collect();
                let half: Vec<f64> = lower.iter().zip(upper).map(|(l, u)| 0.5 * (u - l)).collect();
                let mut l = 0.0f64;
                for p in support.points() {
                    let (phi, y) = features(p);
                    let r0 = y - dot(&phi, &center);
                    let spread: f64 = phi.iter().zip(&half).map(|(a, h)| a.abs() * h).sum();
                    l = l.max((r0.abs() + spread).powi(2));
                }
                Ok(l)
            }
        }
    }

    fn regression_gradient(x: &[f64], support: &Support, q: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        for (p, w) in support.points().iter().zip(q) {
            if *w == 0.0 {
                continue;
            }
            let (phi, y) = features(p);
            let r = y - dot(&phi, x);
            for (gi, fi) in g.iter_mut().zip(&phi) {
                *gi -= 2.0 * w * r * fi;
            }
        }
        g
    }
}

fn regression_loss(x: &[f64], point: &[i64]) -> f64 {
    let (phi, y) = features(point);
    (y - dot(&phi, x)).powi(2)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((v, l), u) in x.iter_mut().zip(lower).zip(upper) {
        *v = v.clamp(*l, *u);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    pub value: f64,
    pub decision: Decision,
}

/// Exact `min_x E^p[h(x, xi)]`.
pub fn solve_true(p: &DiscreteDistribution, model: &LossModel) -> Result<Solution> {
    match model {
        LossModel::Table { h, .. } => {
            let mut best: Option<Solution> = None;
            for j in 0..h.len() {
                let d = Decision::Row(j);
                let v = p.expected_value(&model.loss_vector(&d, p.support())?)?;
                if best.as_ref().is_none_or(|b| v < b.value) {
                    best = Some(Solution { value: v, decision: d });
                }
            }
            Ok(best.expect("tables have at least one row"))
        }
        LossModel::QuadraticRegression { lower, upper } => {
            model.check_support(p.support())?;
            let x = box_least_squares(p, lower, upper);
            let value = p.expected_value(&model.loss_vector(&Decision::Vector(x.clone()), p.support())?)?;
            Ok(Solution {
                value,
                decision: Decision::Vector(x),
            })
        }
    }
}

/// `min E[(y - phi'x)^2]` over a box, by enumerating which coordinates sit at
/// which bound and solving the free block with a pseudo-inverse. A projected
/// gradient polish follows if the best candidate is not first-order optimal.
fn box_least_squares(p: &DiscreteDistribution, lower: &[f64], upper: &[f64]) -> Vec<f64> {
    let d = lower.len();
    let mut a = DMatrix::<f64>::zeros(d, d);
    let mut b = DVector::<f64>::zeros(d);
    let mut c = 0.0;
    for (pt, w) in p.support().points().iter().zip(p.mass()) {
        if *w == 0.0 {
            continue;
        }
        let (phi, y) = features(pt);
        let phi = DVector::from_vec(phi);
        a += *w * &phi * phi.transpose();
        b += *w * y * &phi;
        c += w * y * y;
    }
    let objective = |x: &DVector<f64>| (x.transpose() * &a * x)[(0, 0)] - 2.0 * b.dot(x) + c;
    let gradient = |x: &DVector<f64>| 2.0 * (&a * x - &b);

    let mut best: Option<(f64, DVector<f64>)> = None;
    let combos = 3usize.pow(d as u32);
    for code in 0..combos {
        // 0 = free, 1 = at lower, 2 = at upper
        let mut state = vec![0u8; d];
        let mut rest = code;
        for s in state.iter_mut() {
            *s = (rest % 3) as u8;
            rest /= 3;
        }
        let free: Vec<usize> = (0..d).filter(|&i| state[i] == 0).collect();
        let mut x = DVector::from_fn(d, |i, _| match state[i] {
            1 => lower[i],
            2 => upper[i],
            _ => 0.0,
        });
        if !free.is_empty() {
            let aff = DMatrix::from_fn(free.len(), free.len(), |i, j| a[(free[i], free[j])]);
            let rhs = DVector::from_fn(free.len(), |i, _| {
                let fi = free[i];
                b[fi] - (0..d).filter(|k| state[*k] != 0).map(|k| a[(fi, k)] * x[k]).sum::<f64>()
            });
            let Ok(pinv) = aff.pseudo_inverse(1e-12) else { continue };
            let xf = pinv * rhs;
            for (i, &fi) in free.iter().enumerate() {
                x[fi] = xf[i];
            }
        }
        if (0..d).any(|i| x[i] < lower[i] - 1e-12 || x[i] > upper[i] + 1e-12) {
            continue;
        }
        let f = objective(&x);
        if best.as_ref().is_none_or(|(bf, _)| f < *bf - 1e-15) {
            best = Some((f, x));
        }
    }
    let mut x = best
        .map(|(_, x)| x)
        .unwrap_or_else(|| DVector::from_fn(d, |i, _| 0.5 * (lower[i] + upper[i])));
    let lo = DVector::from_column_slice(lower);
    let hi = DVector::from_column_slice(upper);
    let clamp = |v: DVector<f64>| v.zip_zip_map(&lo, &hi, |x, l, u| x.clamp(l, u));
    x = clamp(x);
    let residual = |x: &DVector<f64>| (x - clamp(x - gradient(x))).norm();
    if residual(&x) > 1e-8 {
        let lmax = a.symmetric_eigenvalues().max().max(1e-12);
        let step = 1.0 / (2.0 * lmax);
        for _ in 0..200_000 {
            let next = clamp(&x - step * gradient(&x));
            let moved = (&next - &x).norm();
            x = next;
            if moved < 1e-14 || residual(&x) <= 1e-10 {
                break;
            }
        }
    }
    x.iter().copied().collect()
}

/// Noisy sample-average approximation: the true problem under the empirical
/// distribution of the observed samples.
pub fn solve_nsaa(samples: &SampleSet, model: &LossModel) -> Result<Solution> {
    solve_true(&samples.empirical_distribution()?, model)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Diagnostics {
    pub iterations: usize,
    pub converged: bool,
    pub loss_bound: f64,
    /// Worst-case value of each row (table models only).
    pub row_values: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct DroSolution {
    pub value: f64,
    pub decision: Decision,
    pub worst_case: WorstCaseResult,
    pub diagnostics: Diagnostics,
}

pub fn solve_dro(spec: &AmbiguitySpec, model: &LossModel) -> Result<DroSolution> {
    let support = spec.channel().input_support().clone();
    let loss_bound = model.loss_bound(&support)?;
    match model {
        LossModel::Table { h, .. } => {
            let rows: Vec<Result<WorstCaseResult>> = (0..h.len())
                .into_par_iter()
                .map(|j| worst_case_dual(spec, &model.loss_vector(&Decision::Row(j), &support)?))
                .collect();
            let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
            let row_values: Vec<f64> = rows.iter().map(|r| r.value).collect();
            let mut best = 0;
            for (j, v) in row_values.iter().enumerate() {
                if *v < row_values[best] {
                    best = j;
                }
            }
            let worst_case = rows.into_iter().nth(best).expect("index within rows");
            Ok(DroSolution {
                value: worst_case.value,
                decision: Decision::Row(best),
                worst_case,
                diagnostics: Diagnostics {
                    iterations: h.len(),
                    converged: true,
                    loss_bound,
                    row_values,
                },
            })
        }
        LossModel::QuadraticRegression { lower, upper } => {
            let mut engine = WorstCaseEngine::new(spec)?;
            let (x, iterations, converged) = projected_subgradient(&mut engine, lower, upper)?;
            let decision = Decision::Vector(x);
            let worst_case = worst_case_dual(spec, &model.loss_vector(&decision, &support)?)?;
            Ok(DroSolution {
                value: worst_case.value,
                decision,
                worst_case,
                diagnostics: Diagnostics {
                    iterations,
                    converged,
                    loss_bound,
                    row_values: Vec::new(),
                },
            })
        }
    }
}

/// Worst-case value at `x` and a subgradient of `x -> sup_Q E^Q[h(x, xi)]`.
pub fn worst_case_subgradient(engine: &mut WorstCaseEngine, x: &[f64]) -> Result<(f64, Vec<f64>)> {
    let support = engine.spec().channel().input_support().clone();
    let loss: Vec<f64> = support.points().iter().map(|p| regression_loss(x, p)).collect();
    let (value, q) = engine.evaluate(&loss)?;
    Ok((value, LossModel::regression_gradient(x, &support, &q)))
}

/// Projected subgradient with steps `c / sqrt(k)` and `c = diam / |g_0|`.
///
/// When the best value improves by less than the threshold over a window,
/// the schedule restarts from the best point with `c` shrunk; the run counts
/// as converged once such a stall happens with steps too short to matter.
fn projected_subgradient(
    engine: &mut WorstCaseEngine,
    lower: &[f64],
    upper: &[f64],
) -> Result<(Vec<f64>, usize, bool)> {
    let mut x: Vec<f64> = lower.iter().zip(upper).map(|(l, u)| 0.5 * (l + u)).collect();
    let diameter = lower.iter().zip(upper).map(|(l, u)| (u - l).powi(2)).sum::<f64>().sqrt();
    let (mut value, mut g) = worst_case_subgradient(engine, &x)?;
    let mut c = diameter / (norm(&g) + 1e-12);
    let mut best_x = x.clone();
    let mut best = value;
    let mut best_g = norm(&g);
    let mut history = vec![best];
    let mut k = 0usize;
    for iter in 1..=SUBGRADIENT_MAX_ITER {
        if norm(&g) == 0.0 {
            return Ok((best_x, iter - 1, true));
        }
        k += 1;
        let step = c / (k as f64).sqrt();
        for (xi, gi) in x.iter_mut().zip(&g) {
            *xi -= step * gi;
        }
        project(&mut x, lower, upper);
        (value, g) = worst_case_subgradient(engine, &x)?;
        if value < best {
            best = value;
            best_x.copy_from_slice(&x);
            best_g = norm(&g);
        }
        history.push(best);
        if k >= SUBGRADIENT_WINDOW && history[history.len() - 1 - SUBGRADIENT_WINDOW] - best < SUBGRADIENT_MIN_IMPROVEMENT {
            if c * best_g <= SUBGRADIENT_MIN_STEP * (1.0 + diameter) {
                return Ok((best_x, iter, true));
            }
            c /= SUBGRADIENT_RESTART_SHRINK;
            k = 0;
            x.copy_from_slice(&best_x);
            g = worst_case_subgradient(engine, &x)?.1;
            history.clear();
            history.push(best);
        }
    }
    Ok((best_x, SUBGRADIENT_MAX_ITER, false))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `E^p[h(decision, xi)]`.
pub fn out_of_sample(p_true: &DiscreteDistribution, model: &LossModel, decision: &Decision) -> Result<f64> {
    p_true.expected_value(&model.loss_vector(decision, p_true.support())?)
}
