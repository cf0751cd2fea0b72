//! Worst-case expectation over the ambiguity set, as a linear program in
//! primal form, in dual form, and by brute-force grid enumeration.

use crate::ambiguity::{AmbiguitySpec, MEMBERSHIP_SLACK};
use crate::dist::DiscreteDistribution;
use crate::error::{Error, Result};
use crate::lp::{LinearProgram, LpSolution, LpStatus, Sense, SimplexSolver};

/// Tolerance used when checking certificates and strong duality.
pub const CERTIFICATE_TOL: f64 = 1e-8;
pub const WEAK_DUALITY_SLACK: f64 = 1e-10;
/// Largest number of simplex grid points the oracle will enumerate.
pub const ORACLE_MAX_POINTS: u128 = 20_000_000;

/// Dual multipliers of the worst-case problem, indexed over the observed support.
#[derive(Clone, Debug, PartialEq)]
pub struct DualCertificate {
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub r: f64,
    pub t: f64,
}

impl DualCertificate {
    /// `r + 2 eps t + sum (mu - lambda) * center`.
    pub fn objective(&self, radius: f64, center: &[f64]) -> f64 {
        let inner: f64 = self
            .lambda
            .iter()
            .zip(&self.mu)
            .zip(center)
            .map(|((l, m), p)| (m - l) * p)
            .sum();
        self.r + 2.0 * radius * self.t + inner
    }
}

#[derive(Clone, Debug)]
pub struct WorstCaseResult {
    pub value: f64,
    pub q_star: DiscreteDistribution,
    pub certificate: DualCertificate,
}

impl WorstCaseResult {
    /// Checks feasibility of `q_star`, the sign and coupling constraints of
    /// the multipliers, dual feasibility and the objective identities.
    pub fn verify(&self, spec: &AmbiguitySpec, loss: &[f64]) -> Result<()> {
        let fail = |what: String| Err(Error::LpFailure(format!("certificate check failed: {what}")));
        let scale = 1.0 + self.value.abs();
        let dist = spec.observed_distance_of(self.q_star.mass());
        if dist > spec.radius() + CERTIFICATE_TOL {
            return fail(format!("q_star at distance {dist} exceeds radius {}", spec.radius()));
        }
        let c = &self.certificate;
        for (k, (l, m)) in c.lambda.iter().zip(&c.mu).enumerate() {
            if *l < -WEAK_DUALITY_SLACK || *m < -WEAK_DUALITY_SLACK || l + m > c.t + WEAK_DUALITY_SLACK {
                return fail(format!("multipliers at observed point {k}: lambda={l}, mu={m}, t={}", c.t));
            }
        }
        if c.t < -WEAK_DUALITY_SLACK {
            return fail(format!("t = {} is negative", c.t));
        }
        let o = spec.channel().matrix();
        for (j, l) in loss.iter().enumerate() {
            let lhs = l + (0..o.nrows()).map(|k| (c.lambda[k] - c.mu[k]) * o[(k, j)]).sum::<f64>();
            if lhs > c.r + CERTIFICATE_TOL * scale {
                return fail(format!("epigraph row {j}: {lhs} > r = {}", c.r));
            }
        }
        let dual = c.objective(spec.radius(), spec.center().mass());
        if (dual - self.value).abs() > CERTIFICATE_TOL * scale {
            return fail(format!("dual objective {dual} differs from value {}", self.value));
        }
        let attained = self.q_star.expected_value(loss)?;
        if (attained - self.value).abs() > 10.0 * CERTIFICATE_TOL * scale {
            return fail(format!("q_star attains {attained}, value is {}", self.value));
        }
        Ok(())
    }
}

fn check_loss(spec: &AmbiguitySpec, loss: &[f64]) -> Result<()> {
    let n = spec.channel().input_support().len();
    if loss.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            found: loss.len(),
        });
    }
    if loss.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("loss values must be finite".into()));
    }
    Ok(())
}

fn lp_failure(status: LpStatus) -> Error {
    Error::LpFailure(format!("simplex stopped with status {status:?}"))
}

fn empty_set(spec: &AmbiguitySpec) -> Error {
    match min_ambiguity_radius(spec) {
        Ok(min_radius) => Error::EmptyAmbiguitySet {
            radius: spec.radius(),
            min_radius,
        },
        Err(e) => e,
    }
}

/// Normalizes a clean-space mass vector that is a distribution up to solver noise.
fn to_distribution(spec: &AmbiguitySpec, raw: &[f64]) -> Result<DiscreteDistribution> {
    let clipped: Vec<f64> = raw.iter().map(|v| v.max(0.0)).collect();
    DiscreteDistribution::from_weights(spec.channel().input_support().clone(), clipped)
}

/// Variables `[Q (n) | s (m)]`; rows `P - OQ <= s` (m), `OQ - P <= s` (m),
/// `sum s <= 2 eps`, and `sum Q = 1`.
fn primal_rows(spec: &AmbiguitySpec, cost: Vec<f64>, sense: Sense, with_budget: bool) -> LinearProgram {
    let o = spec.channel().matrix();
    let (m, n) = (o.nrows(), o.ncols());
    let p = spec.center().mass();
    let mut lp = LinearProgram::new(sense, cost);
    for k in 0..m {
        let mut row = vec![0.0; n + m];
        for j in 0..n {
            row[j] = -o[(k, j)];
        }
        row[n + k] = -1.0;
        lp.add_le(row, -p[k]);
    }
    for k in 0..m {
        let mut row = vec![0.0; n + m];
        for j in 0..n {
            row[j] = o[(k, j)];
        }
        row[n + k] = -1.0;
        lp.add_le(row, p[k]);
    }
    if with_budget {
        let mut row = vec![0.0; n + m];
        row[n..].iter_mut().for_each(|v| *v = 1.0);
        lp.add_le(row, 2.0 * spec.radius());
    }
    let mut row = vec![0.0; n + m];
    row[..n].iter_mut().for_each(|v| *v = 1.0);
    lp.add_eq(row, 1.0);
    lp
}

/// The worst-case program as primal LP over `Q` with auxiliary `s`.
pub fn primal_program(spec: &AmbiguitySpec, loss: &[f64]) -> Result<LinearProgram> {
    check_loss(spec, loss)?;
    let m = spec.center().mass().len();
    let mut cost = loss.to_vec();
    cost.extend(std::iter::repeat_n(0.0, m));
    Ok(primal_rows(spec, cost, Sense::Maximize, true))
}

/// Variables `[lambda (m) | mu (m) | r | t]`.
pub fn dual_program(spec: &AmbiguitySpec, loss: &[f64]) -> Result<LinearProgram> {
    check_loss(spec, loss)?;
    let o = spec.channel().matrix();
    let (m, n) = (o.nrows(), o.ncols());
    let p = spec.center().mass();
    let nv = 2 * m + 2;
    let (ir, it) = (2 * m, 2 * m + 1);
    let mut cost = vec![0.0; nv];
    for k in 0..m {
        cost[k] = -p[k];
        cost[m + k] = p[k];
    }
    cost[ir] = 1.0;
    cost[it] = 2.0 * spec.radius();
    let mut lp = LinearProgram::new(Sense::Minimize, cost);
    lp.set_bounds(ir, f64::NEG_INFINITY, f64::INFINITY);
    // loss(xi) + sum_k (lambda_k - mu_k) O(k|xi) <= r
    for j in 0..n {
        let mut row = vec![0.0; nv];
        for k in 0..m {
            row[k] = o[(k, j)];
            row[m + k] = -o[(k, j)];
        }
        row[ir] = -1.0;
        lp.add_le(row, -loss[j]);
    }
    // lambda_k + mu_k <= t
    for k in 0..m {
        let mut row = vec![0.0; nv];
        row[k] = 1.0;
        row[m + k] = 1.0;
        row[it] = -1.0;
        lp.add_le(row, 0.0);
    }
    Ok(lp)
}

/// Smallest radius for which the ambiguity set is non-empty:
/// `min_Q d_TV(O * Q, center)`.
pub fn min_ambiguity_radius(spec: &AmbiguitySpec) -> Result<f64> {
    let o = spec.channel().matrix();
    let (m, n) = (o.nrows(), o.ncols());
    let mut cost = vec![0.0; n];
    cost.extend(std::iter::repeat_n(0.5, m));
    let lp = primal_rows(spec, cost, Sense::Minimize, false);
    let sol = SimplexSolver::new(&lp)?.solve();
    match sol.status {
        LpStatus::Optimal => Ok(sol.objective.max(0.0)),
        s => Err(lp_failure(s)),
    }
}

pub fn worst_case_primal(spec: &AmbiguitySpec, loss: &[f64]) -> Result<WorstCaseResult> {
    let lp = primal_program(spec, loss)?;
    let sol = SimplexSolver::new(&lp)?.solve();
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => return Err(empty_set(spec)),
        s => return Err(lp_failure(s)),
    }
    let n = loss.len();
    let m = spec.center().mass().len();
    let q_star = to_distribution(spec, &sol.x[..n])?;
    let certificate = DualCertificate {
        lambda: sol.dual_ub[..m].iter().map(|v| v.max(0.0)).collect(),
        mu: sol.dual_ub[m..2 * m].iter().map(|v| v.max(0.0)).collect(),
        t: sol.dual_ub[2 * m].max(0.0),
        r: sol.dual_eq[0],
    };
    Ok(WorstCaseResult {
        value: sol.objective,
        q_star,
        certificate,
    })
}

pub fn worst_case_dual(spec: &AmbiguitySpec, loss: &[f64]) -> Result<WorstCaseResult> {
    let lp = dual_program(spec, loss)?;
    let sol = SimplexSolver::new(&lp)?.solve();
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Unbounded | LpStatus::Infeasible => return Err(empty_set(spec)),
        s => return Err(lp_failure(s)),
    }
    let (m, n) = (spec.center().mass().len(), loss.len());
    // Multipliers of the epigraph rows are -dvalue/dloss, i.e. -Q*.
    let raw: Vec<f64> = sol.dual_ub[..n].iter().map(|y| -y).collect();
    let q_star = to_distribution(spec, &raw)?;
    let certificate = DualCertificate {
        lambda: sol.x[..m].to_vec(),
        mu: sol.x[m..2 * m].to_vec(),
        r: sol.x[2 * m],
        t: sol.x[2 * m + 1],
    };
    Ok(WorstCaseResult {
        value: sol.objective,
        q_star,
        certificate,
    })
}

fn binomial(n: u64, k: u64) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return u128::MAX;
        }
    }
    acc
}

/// Brute force: the best `loss . Q` over the grid `{k / K : sum k = K}` of
/// the clean simplex, restricted to grid points inside the ambiguity set.
/// A lower bound on the true value, within `max|loss| * |Xi| * grid_step`.
pub fn worst_case_oracle(spec: &AmbiguitySpec, loss: &[f64], grid_step: f64) -> Result<f64> {
    check_loss(spec, loss)?;
    let n = loss.len();
    if n > 4 {
        return Err(Error::ResourceLimit(format!("grid oracle supports at most 4 clean points, got {n}")));
    }
    if !(grid_step > 0.0 && grid_step <= 1.0) {
        return Err(Error::InvalidParameter(format!("grid step must lie in (0, 1], got {grid_step}")));
    }
    let k_total = (1.0 / grid_step).round() as u64;
    if ((k_total as f64) * grid_step - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!("grid step {grid_step} must divide 1")));
    }
    let points = binomial(k_total + n as u64 - 1, n as u64 - 1);
    if points > ORACLE_MAX_POINTS {
        return Err(Error::ResourceLimit(format!("grid has {points} points (limit {ORACLE_MAX_POINTS})")));
    }
    let mut best: Option<f64> = None;
    let mut counts = vec![0u64; n];
    let mut q = vec![0.0; n];
    let limit = spec.radius() + MEMBERSHIP_SLACK;
    enumerate(&mut counts, 0, k_total, &mut |c| {
        for (qi, ci) in q.iter_mut().zip(c) {
            *qi = *ci as f64 / k_total as f64;
        }
        if spec.observed_distance_of(&q) <= limit {
            let v: f64 = loss.iter().zip(&q).map(|(l, p)| l * p).sum();
            best = Some(best.map_or(v, |b: f64| b.max(v)));
        }
    });
    best.ok_or(Error::NoFeasibleGridPoint)
}

fn enumerate(counts: &mut [u64], pos: usize, remaining: u64, visit: &mut dyn FnMut(&[u64])) {
    if pos + 1 == counts.len() {
        counts[pos] = remaining;
        visit(counts);
        return;
    }
    for k in 0..=remaining {
        counts[pos] = k;
        enumerate(counts, pos + 1, remaining - k, visit);
    }
}

/// Re-solves the worst-case problem for a sequence of losses over one fixed
/// ambiguity set, warm-starting each solve from the previous basis.
///
/// Uses the split form `O Q - u + v = center`, `sum (u + v) <= 2 eps`, whose
/// row duals `y` give the certificate as `mu = y+`, `lambda = y-`.
#[derive(Clone, Debug)]
pub struct WorstCaseEngine {
    spec: AmbiguitySpec,
    solver: SimplexSolver,
    n: usize,
    m: usize,
}

impl WorstCaseEngine {
    pub fn new(spec: &AmbiguitySpec) -> Result<Self> {
        let o = spec.channel().matrix();
        let (m, n) = (o.nrows(), o.ncols());
        let p = spec.center().mass();
        let nv = n + 2 * m;
        let mut lp = LinearProgram::new(Sense::Maximize, vec![0.0; nv]);
        for k in 0..m {
            let mut row = vec![0.0; nv];
            for j in 0..n {
                row[j] = o[(k, j)];
            }
            row[n + k] = -1.0;
            row[n + m + k] = 1.0;
            lp.add_eq(row, p[k]);
        }
        let mut row = vec![0.0; nv];
        row[..n].iter_mut().for_each(|v| *v = 1.0);
        lp.add_eq(row, 1.0);
        let mut row = vec![0.0; nv];
        row[n..].iter_mut().for_each(|v| *v = 1.0);
        lp.add_le(row, 2.0 * spec.radius());
        let mut solver = SimplexSolver::new(&lp)?;
        // Establish feasibility once; later solves only change the cost.
        let sol = solver.solve_primal();
        match sol.status {
            LpStatus::Optimal => {}
            LpStatus::Infeasible => return Err(empty_set(spec)),
            s => return Err(lp_failure(s)),
        }
        Ok(WorstCaseEngine {
            spec: spec.clone(),
            solver,
            n,
            m,
        })
    }

    pub fn spec(&self) -> &AmbiguitySpec {
        &self.spec
    }

    fn load(&mut self, loss: &[f64]) -> Result<()> {
        check_loss(&self.spec, loss)?;
        let mut cost = loss.to_vec();
        cost.extend(std::iter::repeat_n(0.0, 2 * self.m));
        self.solver.set_cost(&cost)
    }

    fn run(&mut self, certify: bool) -> Result<LpSolution> {
        let sol = if certify {
            self.solver.solve()
        } else {
            self.solver.solve_primal()
        };
        match sol.status {
            LpStatus::Optimal => Ok(sol),
            s => Err(lp_failure(s)),
        }
    }

    /// Value and a maximizing `Q` (as raw masses) without certificates.
    pub fn evaluate(&mut self, loss: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.load(loss)?;
        let sol = self.run(false)?;
        let q: Vec<f64> = sol.x[..self.n].iter().map(|v| v.max(0.0)).collect();
        let total: f64 = q.iter().sum();
        Ok((sol.objective, q.into_iter().map(|v| v / total).collect()))
    }

    pub fn solve(&mut self, loss: &[f64]) -> Result<WorstCaseResult> {
        self.load(loss)?;
        let sol = self.run(true)?;
        let q_star = to_distribution(&self.spec, &sol.x[..self.n])?;
        let y = &sol.dual_eq[..self.m];
        let certificate = DualCertificate {
            lambda: y.iter().map(|v| (-v).max(0.0)).collect(),
            mu: y.iter().map(|v| v.max(0.0)).collect(),
            r: sol.dual_eq[self.m],
            t: sol.dual_ub[0].max(0.0),
        };
        Ok(WorstCaseResult {
            value: sol.objective,
            q_star,
            certificate,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::NoiseChannel;
    use crate::dist::Support;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn line(n: usize) -> Arc<Support> {
        Arc::new(Support::line(n).unwrap())
    }

    fn spec_with(o: NoiseChannel, center: Vec<f64>, eps: f64) -> AmbiguitySpec {
        let c = DiscreteDistribution::new(o.output_support().clone(), center).unwrap();
        AmbiguitySpec::new(c, Arc::new(o), eps).unwrap()
    }

    fn identity_spec(center: Vec<f64>, eps: f64) -> AmbiguitySpec {
        let s = line(center.len());
        spec_with(NoiseChannel::identity(s), center, eps)
    }

    fn both(spec: &AmbiguitySpec, loss: &[f64]) -> (WorstCaseResult, WorstCaseResult) {
        let p = worst_case_primal(spec, loss).unwrap();
        let d = worst_case_dual(spec, loss).unwrap();
        p.verify(spec, loss).unwrap();
        d.verify(spec, loss).unwrap();
        (p, d)
    }

    #[test]
    fn canonical_two_point_example() {
        let spec = identity_spec(vec![0.5, 0.5], 0.2);
        let loss = [0.0, 1.0];
        let (p, d) = both(&spec, &loss);
        for r in [&p, &d] {
            assert!((r.value - 0.7).abs() < 1e-10);
            assert!((r.q_star.mass()[0] - 0.3).abs() < 1e-9);
            assert!((r.q_star.mass()[1] - 0.7).abs() < 1e-9);
        }
        let oracle = worst_case_oracle(&spec, &loss, 1e-4).unwrap();
        assert!((oracle - 0.7).abs() < 1e-3);
    }

    #[test]
    fn zero_radius_identity_returns_center() {
        let spec = identity_spec(vec![0.2, 0.5, 0.3], 0.0);
        let loss = [3.0, -1.0, 2.0];
        let (p, d) = both(&spec, &loss);
        let expected = 0.6 - 0.5 + 0.6;
        assert!((p.value - expected).abs() < 1e-10);
        assert!((d.value - expected).abs() < 1e-10);
        assert!(p.q_star.tv_distance(spec.center()).unwrap() < 1e-9);
    }

    #[test]
    fn large_radius_gives_max_loss() {
        let spec = identity_spec(vec![0.2, 0.5, 0.3], 1.0);
        let loss = [3.0, -1.0, 2.0];
        let (p, d) = both(&spec, &loss);
        assert!((p.value - 3.0).abs() < 1e-10);
        assert!((d.value - 3.0).abs() < 1e-10);
        assert_eq!(worst_case_oracle(&spec, &loss, 0.05).unwrap(), 3.0);
    }

    #[test]
    fn zero_radius_noisy_channel() {
        let s = line(2);
        let o = NoiseChannel::from_rows(s.clone(), s, &[vec![0.9, 0.1], vec![0.1, 0.9]]).unwrap();
        let spec = spec_with(o, vec![0.5, 0.5], 0.0);
        let (p, d) = both(&spec, &[0.0, 1.0]);
        assert!((p.value - 0.5).abs() < 1e-10);
        assert!((d.value - 0.5).abs() < 1e-10);
    }

    #[test]
    fn empty_set_is_reported_consistently() {
        // O*Q has first coordinate in [0.1, 0.9]; a point-mass center at 0 is
        // at distance 0.1 from the closest push-forward.
        let s = line(2);
        let o = NoiseChannel::from_rows(s.clone(), s, &[vec![0.9, 0.1], vec![0.1, 0.9]]).unwrap();
        let spec = spec_with(o, vec![1.0, 0.0], 0.05);
        assert!((min_ambiguity_radius(&spec).unwrap() - 0.1).abs() < 1e-10);
        for res in [worst_case_primal(&spec, &[0.0, 1.0]), worst_case_dual(&spec, &[0.0, 1.0])] {
            match res {
                Err(Error::EmptyAmbiguitySet { radius, min_radius }) => {
                    assert_eq!(radius, 0.05);
                    assert!((min_radius - 0.1).abs() < 1e-10);
                }
                other => panic!("expected empty set, got {other:?}"),
            }
        }
        assert_eq!(worst_case_oracle(&spec, &[0.0, 1.0], 1e-3).unwrap_err(), Error::NoFeasibleGridPoint);
        assert!(WorstCaseEngine::new(&spec).is_err());
        let ok = spec.with_radius(0.1).unwrap();
        assert!((worst_case_dual(&ok, &[0.0, 1.0]).unwrap().value).abs() < 1e-10);
    }

    #[test]
    fn oracle_resource_limits() {
        let spec = identity_spec(vec![0.25; 4], 0.1);
        assert!(matches!(worst_case_oracle(&spec, &[0.0; 4], 1e-4), Err(Error::ResourceLimit(_))));
        let spec5 = identity_spec(vec![0.2; 5], 0.1);
        assert!(matches!(worst_case_oracle(&spec5, &[0.0; 5], 0.5), Err(Error::ResourceLimit(_))));
        assert!(worst_case_oracle(&spec, &[0.0; 4], 0.3).is_err());
    }

    #[test]
    fn value_is_monotone_in_radius() {
        let s = line(3);
        let o = NoiseChannel::ldp(s, 2.0, crate::dist::Norm::Euclidean).unwrap();
        let loss = [1.0, 0.0, 4.0];
        let mut last = f64::NEG_INFINITY;
        for eps in [0.2, 0.25, 0.3, 0.5, 0.8, 1.5] {
            let spec = spec_with(o.clone(), vec![0.5, 0.3, 0.2], eps);
            let v = worst_case_dual(&spec, &loss).unwrap().value;
            assert!(v >= last - 1e-12);
            assert!(v <= 4.0 + 1e-12);
            last = v;
        }
    }

    #[test]
    fn engine_matches_literal_forms() {
        let s = line(3);
        let o = NoiseChannel::ldp(s, 3.0, crate::dist::Norm::Euclidean).unwrap();
        let spec = spec_with(o, vec![0.6, 0.1, 0.3], 0.3);
        let mut engine = WorstCaseEngine::new(&spec).unwrap();
        for loss in [[1.0, 0.0, 4.0], [0.0, 2.0, 0.5], [-1.0, -1.0, 3.0], [1.0, 0.0, 4.0]] {
            let d = worst_case_dual(&spec, &loss).unwrap();
            let (v, q) = engine.evaluate(&loss).unwrap();
            assert!((v - d.value).abs() < 1e-9);
            let attained: f64 = q.iter().zip(&loss).map(|(a, b)| a * b).sum();
            assert!((attained - v).abs() < 1e-9);
            let full = engine.solve(&loss).unwrap();
            full.verify(&spec, &loss).unwrap();
        }
    }

    fn random_instance(rng: &mut ChaCha8Rng, n: usize, m: usize, eps: f64) -> (AmbiguitySpec, Vec<f64>) {
        let (si, so) = (line(n), line(m));
        let cols: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let w: Vec<f64> = (0..m).map(|_| rng.random::<f64>() + 0.05).collect();
                let t: f64 = w.iter().sum();
                w.into_iter().map(|v| v / t).collect()
            })
            .collect();
        let rows: Vec<Vec<f64>> = (0..m).map(|k| (0..n).map(|j| cols[j][k]).collect()).collect();
        let o = NoiseChannel::from_rows(si.clone(), so, &rows).unwrap();
        // Center is an exact push-forward so every radius, including 0, is feasible.
        let p: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let p = DiscreteDistribution::from_weights(si, p).unwrap();
        let center = o.push_forward(&p).unwrap();
        let spec = AmbiguitySpec::new(center, Arc::new(o), eps).unwrap();
        let loss = (0..n).map(|_| rng.random_range(-2.0..5.0)).collect();
        (spec, loss)
    }

    #[test]
    fn strong_duality_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in 2..=6 {
            for m in 2..=6 {
                for eps in [0.0, 0.05, 0.3, 1.5] {
                    for _ in 0..5 {
                        let (spec, loss) = random_instance(&mut rng, n, m, eps);
                        let (p, d) = both(&spec, &loss);
                        assert!((p.value - d.value).abs() <= CERTIFICATE_TOL * (1.0 + p.value.abs()));
                        let lmax = loss.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        assert!(p.value <= lmax + 1e-10);
                    }
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn oracle_is_a_close_lower_bound(seed in 0u64..10_000, n in 2usize..4, eps in 0.05f64..0.6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (spec, loss) = random_instance(&mut rng, n, 3, eps);
            let v = worst_case_primal(&spec, &loss).unwrap().value;
            let step = 0.01;
            let g = worst_case_oracle(&spec, &loss, step).unwrap();
            let l = loss.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            prop_assert!(g <= v + 1e-9);
            // Grid points near the optimum may fall outside a thin ball, so
            // only the coarse Lipschitz window is asserted.
            prop_assert!(v - g <= 2.0 * l * n as f64 * step / eps.min(1.0) + 1e-9, "{} vs {}", v, g);
        }
    }
}
