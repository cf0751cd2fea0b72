//! Concentration radius and the convolution-constrained total-variation
//! ambiguity set around a noisy empirical distribution.

use std::sync::Arc;

use crate::channel::NoiseChannel;
use crate::dist::{same_support, DiscreteDistribution, SampleSet};
use crate::error::{Error, Result};

/// Inclusion slack for the closed ball `d_TV <= radius`.
pub const MEMBERSHIP_SLACK: f64 = 1e-12;

/// Significance level used to size the ball.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Significance {
    Fixed(f64),
    /// `alpha_N = 1 / N^2`, summable and driving the radius to zero.
    InverseSquare,
}

impl Significance {
    pub fn alpha(self, n: u64) -> f64 {
        match self {
            Significance::Fixed(a) => a,
            Significance::InverseSquare => 1.0 / (n as f64 * n as f64),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadiusPolicy {
    pub significance: Significance,
    pub cardinality: usize,
    pub n: u64,
}

impl RadiusPolicy {
    pub fn new(significance: Significance, cardinality: usize, n: u64) -> Result<Self> {
        if cardinality == 0 || n == 0 {
            return Err(Error::InvalidParameter("cardinality and N must be at least 1".into()));
        }
        let alpha = significance.alpha(n);
        // alpha_N = 1 at N = 1 is allowed for the schedule; the bound is vacuous there anyway.
        let ok = match significance {
            Significance::Fixed(a) => a > 0.0 && a < 1.0,
            Significance::InverseSquare => alpha > 0.0 && alpha <= 1.0,
        };
        if !ok {
            return Err(Error::InvalidParameter(format!("significance must lie in (0, 1), got {alpha}")));
        }
        Ok(RadiusPolicy {
            significance,
            cardinality,
            n,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.significance.alpha(self.n)
    }

    pub fn radius(&self) -> f64 {
        radius_tv(self.cardinality, self.alpha(), self.n)
    }
}

fn concentration_numerator(cardinality: usize, alpha: f64) -> f64 {
    (cardinality as f64).max(2.0 * (2.0 / alpha).ln())
}

/// `sqrt(max{|Xi|, 2 ln(2/alpha)} / N)`: with probability at least
/// `1 - alpha` the empirical distribution of `N` samples is within this
/// total-variation distance of the sampled distribution.
pub fn radius_tv(cardinality: usize, alpha: f64, n: u64) -> f64 {
    (concentration_numerator(cardinality, alpha) / n as f64).sqrt()
}

/// Smallest `N` with `radius_tv(cardinality, alpha, N) <= epsilon`.
pub fn min_samples(cardinality: usize, alpha: f64, epsilon: f64) -> Result<u64> {
    if !(alpha > 0.0 && alpha < 1.0) || !(epsilon > 0.0) || cardinality == 0 {
        return Err(Error::InvalidParameter(format!(
            "need 0 < alpha < 1, epsilon > 0, cardinality >= 1 (alpha={alpha}, epsilon={epsilon})"
        )));
    }
    let raw = concentration_numerator(cardinality, alpha) / (epsilon * epsilon);
    let mut n = raw.ceil().max(1.0) as u64;
    // Guard the ceiling against rounding in either direction.
    while n > 1 && radius_tv(cardinality, alpha, n - 1) <= epsilon {
        n -= 1;
    }
    while radius_tv(cardinality, alpha, n) > epsilon {
        n += 1;
    }
    Ok(n)
}

/// Clean-space ambiguity set `{Q : d_TV(O * Q, center) <= radius}`.
#[derive(Clone, Debug)]
pub struct AmbiguitySpec {
    center: DiscreteDistribution,
    channel: Arc<NoiseChannel>,
    radius: f64,
}

impl AmbiguitySpec {
    pub fn new(center: DiscreteDistribution, channel: Arc<NoiseChannel>, radius: f64) -> Result<Self> {
        if !(radius >= 0.0) || radius.is_infinite() {
            return Err(Error::InvalidParameter(format!("radius must be finite and >= 0, got {radius}")));
        }
        if !same_support(center.support(), channel.output_support()) {
            return Err(Error::SupportMismatch);
        }
        Ok(AmbiguitySpec { center, channel, radius })
    }

    pub fn from_samples(samples: &SampleSet, channel: Arc<NoiseChannel>, radius: f64) -> Result<Self> {
        AmbiguitySpec::new(samples.empirical_distribution()?, channel, radius)
    }

    pub fn center(&self) -> &DiscreteDistribution {
        &self.center
    }

    pub fn channel(&self) -> &Arc<NoiseChannel> {
        &self.channel
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn with_radius(&self, radius: f64) -> Result<Self> {
        AmbiguitySpec::new(self.center.clone(), self.channel.clone(), radius)
    }

    /// Is `q_observed` (on the observed support) in the closed TV ball?
    pub fn membership_observed(&self, q_observed: &DiscreteDistribution) -> Result<bool> {
        Ok(self.center.tv_distance(q_observed)? <= self.radius + MEMBERSHIP_SLACK)
    }

    /// Is `O * q_clean` in the closed TV ball?
    pub fn membership_clean(&self, q_clean: &DiscreteDistribution) -> Result<bool> {
        self.membership_observed(&self.channel.push_forward(q_clean)?)
    }

    /// `d_TV(O * q, center)` for a raw mass vector on the clean support.
    pub(crate) fn observed_distance_of(&self, q_mass: &[f64]) -> f64 {
        crate::dist::tv_of_slices(&self.channel.apply(q_mass), self.center.mass())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::Support;

    fn line(n: usize) -> Arc<Support> {
        Arc::new(Support::line(n).unwrap())
    }

    fn bsc(flip: f64) -> Arc<NoiseChannel> {
        let s = line(2);
        Arc::new(NoiseChannel::from_rows(s.clone(), s, &[vec![1.0 - flip, flip], vec![flip, 1.0 - flip]]).unwrap())
    }

    #[test]
    fn radius_examples() {
        // sqrt(max{4, 2 ln 40} / 100), evaluated in high precision: 0.27162...
        let r = radius_tv(4, 0.05, 100);
        assert!((r - 0.271_620_303_148_123_9).abs() < 1e-12, "{r}");
        // crossover alpha = 2 / e^{|Xi|/2}: both branches equal |Xi|
        let alpha = 2.0 / (3.0f64).exp();
        assert!((2.0 * (2.0 / alpha).ln() - 6.0).abs() < 1e-12);
        assert!((radius_tv(6, alpha, 6) - 1.0).abs() < 1e-12);
        // exact inverse: N = 100 / 0.1^2
        assert!((radius_tv(100, 0.05, 10_000) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn radius_monotonicity() {
        let mut last = f64::INFINITY;
        for n in [1u64, 2, 10, 100, 1000] {
            let r = radius_tv(3, 0.05, n);
            assert!(r < last);
            last = r;
        }
        assert!(radius_tv(3, 0.01, 50) >= radius_tv(3, 0.1, 50));
    }

    #[test]
    fn min_samples_examples() {
        assert_eq!(min_samples(4, 0.05, 0.271621).unwrap(), 100);
        assert_eq!(min_samples(2, 0.5, 1.0).unwrap(), 3);
        let a = min_samples(5, 0.05, 0.1).unwrap();
        let b = min_samples(5, 0.05, 0.05).unwrap();
        assert!((b as i64 - 4 * a as i64).abs() <= 4);
        assert!(min_samples(5, 1.5, 0.1).is_err());
    }

    #[test]
    fn schedule_radius_vanishes() {
        let r = |n| RadiusPolicy::new(Significance::InverseSquare, 3, n).unwrap().radius();
        assert!(r(1_000_000) < 0.01);
        assert!(r(100) > r(10_000));
        let partial: f64 = (1..10_000u64).map(|n| Significance::InverseSquare.alpha(n)).sum();
        assert!(partial < std::f64::consts::PI.powi(2) / 6.0);
    }

    #[test]
    fn membership_examples() {
        let s = line(2);
        let center = DiscreteDistribution::new(s.clone(), vec![0.5, 0.5]).unwrap();
        let id = Arc::new(NoiseChannel::identity(s.clone()));
        let spec = AmbiguitySpec::new(center.clone(), id.clone(), 0.0).unwrap();
        assert!(spec.membership_observed(&center).unwrap());
        let q = DiscreteDistribution::new(s.clone(), vec![0.8, 0.2]).unwrap();
        assert!(!spec.with_radius(0.2).unwrap().membership_observed(&q).unwrap());
        assert!(spec.with_radius(1.0).unwrap().membership_observed(&q).unwrap());
        // identity channel: clean and observed membership agree
        for r in [0.1, 0.3, 0.31] {
            let sp = spec.with_radius(r).unwrap();
            assert_eq!(sp.membership_clean(&q).unwrap(), sp.membership_observed(&q).unwrap());
        }
    }

    #[test]
    fn clean_membership_examples() {
        let s = line(2);
        let o = bsc(0.1);
        let p = DiscreteDistribution::new(s.clone(), vec![0.35, 0.65]).unwrap();
        let center = o.push_forward(&p).unwrap();
        assert!(AmbiguitySpec::new(center, o.clone(), 0.0).unwrap().membership_clean(&p).unwrap());
        // d_TV((0.9, 0.1), (0.5, 0.5)) = 0.4 > 0.3
        let spec = AmbiguitySpec::new(DiscreteDistribution::uniform(s.clone()), o, 0.3).unwrap();
        let e0 = DiscreteDistribution::point_mass(s, 0).unwrap();
        assert!(!spec.membership_clean(&e0).unwrap());
        assert!(spec.with_radius(0.4).unwrap().membership_clean(&e0).unwrap());
    }

    #[test]
    fn spec_validation() {
        let s = line(2);
        let c = DiscreteDistribution::uniform(s.clone());
        assert!(AmbiguitySpec::new(c.clone(), bsc(0.1), -0.1).is_err());
        let other = Arc::new(NoiseChannel::identity(line(3)));
        assert_eq!(AmbiguitySpec::new(c, other, 0.1).unwrap_err(), Error::SupportMismatch);
    }
}
