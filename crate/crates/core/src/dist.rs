//! Finite supports, probability vectors over them, and sampling.
//!
//! A [`Support`] is an ordered list of distinct integer points of a common
//! dimension. Distributions, sample sets and channels hold an `Arc` to the
//! support they live on; two supports are compatible when they are the same
//! allocation or compare equal point by point.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Mass vectors whose total deviates from one by more than this are rejected.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// Negative entries down to this magnitude are treated as rounding noise.
const NEGATIVE_MASS_SLACK: f64 = 1e-12;

pub type Point = Vec<i64>;

/// Vector norm used to measure distances between support points.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    #[default]
    Euclidean,
    Manhattan,
    Chebyshev,
}

impl Norm {
    pub fn distance(self, a: &[i64], b: &[i64]) -> f64 {
        let diffs = a.iter().zip(b).map(|(x, y)| (x - y).abs() as f64);
        match self {
            Norm::Euclidean => diffs.map(|d| d * d).sum::<f64>().sqrt(),
            Norm::Manhattan => diffs.sum(),
            Norm::Chebyshev => diffs.fold(0.0, f64::max),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Norm::Euclidean => "euclidean",
            Norm::Manhattan => "manhattan",
            Norm::Chebyshev => "chebyshev",
        }
    }
}

impl std::str::FromStr for Norm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euclidean" | "l2" => Ok(Norm::Euclidean),
            "manhattan" | "l1" => Ok(Norm::Manhattan),
            "chebyshev" | "linf" | "max" => Ok(Norm::Chebyshev),
            other => Err(Error::InvalidParameter(format!("unknown norm '{other}'"))),
        }
    }
}

/// An ordered finite set of distinct integer points of equal dimension.
#[derive(Clone)]
pub struct Support {
    points: Vec<Point>,
    labels: Option<Vec<String>>,
    dim: usize,
    index: HashMap<Point, usize>,
}

impl PartialEq for Support {
    fn eq(&self, other: &Self) -> bool {
        self.points == other.points
    }
}

impl fmt::Debug for Support {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Support")
            .field("len", &self.points.len())
            .field("dim", &self.dim)
            .field("points", &self.points)
            .finish()
    }
}

impl Support {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        let first = points.first().ok_or(Error::EmptySupport)?;
        let dim = first.len();
        if dim == 0 {
            return Err(Error::DimensionMismatch {
                index: 0,
                expected: 1,
                found: 0,
            });
        }
        let mut index = HashMap::with_capacity(points.len());
        for (i, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    index: i,
                    expected: dim,
                    found: p.len(),
                });
            }
            if let Some(&first) = index.get(p) {
                return Err(Error::DuplicatePoint { first, second: i });
            }
            index.insert(p.clone(), i);
        }
        Ok(Support {
            points,
            labels: None,
            dim,
            index,
        })
    }

    /// One-dimensional support `{0, 1, ..., n-1}`.
    pub fn line(n: usize) -> Result<Self> {
        Support::new((0..n as i64).map(|v| vec![v]).collect())
    }

    /// Cartesian grid `{1..s_1} x ... x {1..s_d}` in lexicographic order
    /// (last coordinate varies fastest).
    pub fn grid(sizes: &[i64]) -> Result<Self> {
        Support::grid_from(sizes, 1)
    }

    pub fn grid_from(sizes: &[i64], first_code: i64) -> Result<Self> {
        if sizes.is_empty() || sizes.iter().any(|&s| s < 1) {
            return Err(Error::InvalidParameter(format!("invalid grid sizes {sizes:?}")));
        }
        let mut points: Vec<Point> = vec![vec![]];
        for &s in sizes {
            let mut next = Vec::with_capacity(points.len() * s as usize);
            for p in &points {
                for v in 0..s {
                    let mut q = p.clone();
                    q.push(first_code + v);
                    next.push(q);
                }
            }
            points = next;
        }
        Support::new(points)
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.points.len() {
            return Err(Error::LengthMismatch {
                expected: self.points.len(),
                found: labels.len(),
            });
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[i64] {
        &self.points[i]
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn index_of(&self, point: &[i64]) -> Option<usize> {
        self.index.get(point).copied()
    }

    /// Largest pairwise distance between support points.
    pub fn diameter(&self, norm: Norm) -> f64 {
        let mut diam = 0.0f64;
        for (i, a) in self.points.iter().enumerate() {
            for b in &self.points[i + 1..] {
                diam = diam.max(norm.distance(a, b));
            }
        }
        diam
    }
}

pub(crate) fn same_support(a: &Arc<Support>, b: &Arc<Support>) -> bool {
    Arc::ptr_eq(a, b) || **a == **b
}

/// Probability vector over a finite support.
#[derive(Clone, Debug)]
pub struct DiscreteDistribution {
    support: Arc<Support>,
    mass: Vec<f64>,
}

impl PartialEq for DiscreteDistribution {
    fn eq(&self, other: &Self) -> bool {
        same_support(&self.support, &other.support) && self.mass == other.mass
    }
}

impl DiscreteDistribution {
    /// Validates and normalizes `mass`.
    ///
    /// Totals off by more than [`NORMALIZATION_TOLERANCE`] are rejected;
    /// smaller deviations are renormalized.
    pub fn new(support: Arc<Support>, mut mass: Vec<f64>) -> Result<Self> {
        if mass.len() != support.len() {
            return Err(Error::LengthMismatch {
                expected: support.len(),
                found: mass.len(),
            });
        }
        for (i, m) in mass.iter_mut().enumerate() {
            if !m.is_finite() {
                return Err(Error::InvalidMass(format!("entry {i} is not finite")));
            }
            if *m < 0.0 {
                if *m < -NEGATIVE_MASS_SLACK {
                    return Err(Error::InvalidMass(format!("entry {i} is negative ({m})")));
                }
                *m = 0.0;
            }
        }
        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(Error::InvalidMass(format!("entries sum to {total}")));
        }
        if total != 1.0 {
            mass.iter_mut().for_each(|m| *m /= total);
        }
        Ok(DiscreteDistribution { support, mass })
    }

    /// Rescales an arbitrary non-negative weight vector into a distribution.
    pub fn from_weights(support: Arc<Support>, weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) || weights.iter().any(|w| *w < 0.0) {
            return Err(Error::InvalidMass("weights must be non-negative with a positive total".into()));
        }
        DiscreteDistribution::new(support, weights.into_iter().map(|w| w / total).collect())
    }

    pub fn uniform(support: Arc<Support>) -> Self {
        let n = support.len();
        DiscreteDistribution {
            support,
            mass: vec![1.0 / n as f64; n],
        }
    }

    pub fn point_mass(support: Arc<Support>, index: usize) -> Result<Self> {
        if index >= support.len() {
            return Err(Error::IndexOutOfRange {
                index,
                len: support.len(),
            });
        }
        let mut mass = vec![0.0; support.len()];
        mass[index] = 1.0;
        Ok(DiscreteDistribution { support, mass })
    }

    pub fn support(&self) -> &Arc<Support> {
        &self.support
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    fn check_same_support(&self, other: &DiscreteDistribution) -> Result<()> {
        if same_support(&self.support, &other.support) {
            Ok(())
        } else {
            Err(Error::SupportMismatch)
        }
    }

    /// Total-variation distance, half the l1 distance of the mass vectors.
    pub fn tv_distance(&self, other: &DiscreteDistribution) -> Result<f64> {
        self.check_same_support(other)?;
        Ok(tv_of_slices(&self.mass, &other.mass))
    }

    /// `E[loss(xi)]` under this distribution.
    pub fn expected_value(&self, loss: &[f64]) -> Result<f64> {
        if loss.len() != self.mass.len() {
            return Err(Error::LengthMismatch {
                expected: self.mass.len(),
                found: loss.len(),
            });
        }
        Ok(self.mass.iter().zip(loss).map(|(p, l)| p * l).sum())
    }

    /// `weight * self + (1 - weight) * other`.
    pub fn mix(&self, other: &DiscreteDistribution, weight: f64) -> Result<Self> {
        self.check_same_support(other)?;
        if !(0.0..=1.0).contains(&weight) {
            return Err(Error::InvalidParameter(format!("mixture weight {weight} outside [0, 1]")));
        }
        let mass = self
            .mass
            .iter()
            .zip(&other.mass)
            .map(|(a, b)| weight * a + (1.0 - weight) * b)
            .collect();
        DiscreteDistribution::new(self.support.clone(), mass)
    }

    /// Draws `n` i.i.d. indices by inverse-CDF sampling.
    ///
    /// The generator is `ChaCha8Rng::seed_from_u64(seed)`; each draw consumes
    /// one `f64` uniform on `[0, 1)` and returns the first index whose
    /// cumulative mass exceeds it.
    pub fn sample(&self, n: usize, seed: u64) -> Result<SampleSet> {
        if n == 0 {
            return Err(Error::EmptySampleSet);
        }
        let sampler = InverseCdf::new(&self.mass);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let indices = (0..n).map(|_| sampler.draw(&mut rng)).collect();
        Ok(SampleSet {
            support: self.support.clone(),
            indices,
        })
    }
}

pub(crate) fn tv_of_slices(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// Inverse-CDF lookup table over an ordered mass vector.
#[derive(Clone, Debug)]
pub(crate) struct InverseCdf {
    cdf: Vec<f64>,
}

impl InverseCdf {
    pub(crate) fn new(mass: &[f64]) -> Self {
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = mass
            .iter()
            .map(|m| {
                acc += m;
                acc
            })
            .collect();
        // Close the table at the last index with positive mass so rounding in
        // the running sum never leaves a gap below 1.
        if let Some(last) = mass.iter().rposition(|&m| m > 0.0) {
            for c in &mut cdf[last..] {
                *c = 1.0;
            }
        }
        InverseCdf { cdf }
    }

    pub(crate) fn draw<R: Rng>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        self.cdf.partition_point(|&c| c <= u)
    }
}

/// Dataset of support indices, e.g. the noisy observations.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    support: Arc<Support>,
    indices: Vec<usize>,
}

impl SampleSet {
    pub fn new(support: Arc<Support>, indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptySampleSet);
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= support.len()) {
            return Err(Error::IndexOutOfRange {
                index: bad,
                len: support.len(),
            });
        }
        Ok(SampleSet { support, indices })
    }

    pub fn support(&self) -> &Arc<Support> {
        &self.support
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.support.len()];
        for &i in &self.indices {
            counts[i] += 1;
        }
        counts
    }

    /// Empirical distribution `count(i) / N`.
    pub fn empirical_distribution(&self) -> Result<DiscreteDistribution> {
        if self.indices.is_empty() {
            return Err(Error::EmptySampleSet);
        }
        let n = self.indices.len() as f64;
        let mass = self.counts().into_iter().map(|c| c as f64 / n).collect();
        DiscreteDistribution::new(self.support.clone(), mass)
    }
}
