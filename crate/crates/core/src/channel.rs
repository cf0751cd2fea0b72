//! Noise channels `O(xi' | xi)`: column-stochastic matrices from a clean
//! support to an observed support.

use std::io::{Read, Write};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dist::{
    same_support, DiscreteDistribution, InverseCdf, Norm, SampleSet, Support, NORMALIZATION_TOLERANCE,
};
use crate::error::{Error, Result};

/// Relative slack applied to `exp(epsilon)` when checking privacy ratios.
pub const LDP_RATIO_SLACK: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct NoiseChannel {
    input: Arc<Support>,
    output: Arc<Support>,
    /// `matrix[(i, j)] = O(output_i | input_j)`.
    matrix: DMatrix<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LdpCheck {
    pub holds: bool,
    pub worst_ratio: f64,
}

/// Uniform diagonal dominance summary of a square channel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DominanceReport {
    pub min_diagonal: f64,
    pub max_off_diagonal: f64,
    pub cardinality: usize,
    pub is_udd: bool,
    /// `1 / (min_diagonal - cardinality * max_off_diagonal)`, present iff `is_udd`.
    pub c0: Option<f64>,
}

impl DominanceReport {
    /// `min_diagonal - cardinality * max_off_diagonal`.
    pub fn margin(&self) -> f64 {
        self.min_diagonal - self.cardinality as f64 * self.max_off_diagonal
    }
}

impl NoiseChannel {
    /// Builds a channel from `matrix[(i, j)] = O(output_i | input_j)`.
    ///
    /// Columns must sum to one within [`NORMALIZATION_TOLERANCE`]; smaller
    /// deviations are renormalized.
    pub fn new(input: Arc<Support>, output: Arc<Support>, mut matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != output.len() || matrix.ncols() != input.len() {
            return Err(Error::InvalidChannel(format!(
                "matrix is {}x{}, supports need {}x{}",
                matrix.nrows(),
                matrix.ncols(),
                output.len(),
                input.len()
            )));
        }
        for j in 0..matrix.ncols() {
            let mut col = matrix.column_mut(j);
            if col.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::InvalidChannel(format!("column {j} has a negative or non-finite entry")));
            }
            let total: f64 = col.sum();
            if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
                return Err(Error::InvalidChannel(format!("column {j} sums to {total}")));
            }
            if total != 1.0 {
                col /= total;
            }
        }
        Ok(NoiseChannel { input, output, matrix })
    }

    pub fn from_rows(input: Arc<Support>, output: Arc<Support>, rows: &[Vec<f64>]) -> Result<Self> {
        let ncols = input.len();
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(Error::InvalidChannel(format!("every row must have {ncols} entries")));
        }
        let matrix = DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]);
        NoiseChannel::new(input, output, matrix)
    }

    pub fn identity(support: Arc<Support>) -> Self {
        let n = support.len();
        NoiseChannel {
            input: support.clone(),
            output: support,
            matrix: DMatrix::identity(n, n),
        }
    }

    /// Every input is reported as a uniformly random point of the support.
    pub fn uniform(support: Arc<Support>) -> Self {
        let n = support.len();
        NoiseChannel {
            input: support.clone(),
            output: support,
            matrix: DMatrix::from_element(n, n, 1.0 / n as f64),
        }
    }

    /// Exponential-mechanism channel
    /// `O(xi' | xi) ∝ exp(-epsilon * ||xi - xi'|| / (2 diam))`, normalized per
    /// input point. `epsilon = 0` gives the uniform channel and
    /// `epsilon = +inf` the identity.
    pub fn ldp(support: Arc<Support>, epsilon: f64, norm: Norm) -> Result<Self> {
        if support.len() < 2 {
            return Err(Error::DegenerateSupport);
        }
        if epsilon.is_nan() || epsilon < 0.0 {
            return Err(Error::InvalidParameter(format!("privacy level must be >= 0, got {epsilon}")));
        }
        if epsilon == 0.0 {
            return Ok(NoiseChannel::uniform(support));
        }
        if epsilon.is_infinite() {
            return Ok(NoiseChannel::identity(support));
        }
        let diam = support.diameter(norm);
        let n = support.len();
        let scale = epsilon / (2.0 * diam);
        let mut matrix = DMatrix::from_fn(n, n, |i, j| {
            (-scale * norm.distance(support.point(i), support.point(j))).exp()
        });
        for j in 0..n {
            let mut col = matrix.column_mut(j);
            let total = col.sum();
            col /= total;
        }
        Ok(NoiseChannel {
            input: support.clone(),
            output: support,
            matrix,
        })
    }

    pub fn input_support(&self) -> &Arc<Support> {
        &self.input
    }

    pub fn output_support(&self) -> &Arc<Support> {
        &self.output
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// `O(output_i | input_j)`.
    pub fn prob(&self, output: usize, input: usize) -> f64 {
        self.matrix[(output, input)]
    }

    pub fn is_square(&self) -> bool {
        same_support(&self.input, &self.output)
    }

    /// `P'(xi') = sum_xi O(xi' | xi) P(xi)`.
    pub fn push_forward(&self, p: &DiscreteDistribution) -> Result<DiscreteDistribution> {
        if !same_support(&self.input, p.support()) {
            return Err(Error::SupportMismatch);
        }
        let mass = self.apply(p.mass());
        DiscreteDistribution::new(self.output.clone(), mass)
    }

    /// Raw matrix-vector product on mass vectors over the input support.
    pub(crate) fn apply(&self, mass: &[f64]) -> Vec<f64> {
        let v = DVector::from_column_slice(mass);
        (&self.matrix * v).iter().copied().collect()
    }

    /// Largest ratio `O(xi'|xi) / O(xi'|xi_bar)` over all triples, compared
    /// against `exp(epsilon)`.
    pub fn verify_ldp(&self, epsilon: f64) -> LdpCheck {
        let mut worst = 1.0f64;
        for row in self.matrix.row_iter() {
            let max = row.iter().copied().fold(0.0, f64::max);
            let min = row.iter().copied().fold(f64::INFINITY, f64::min);
            let ratio = if max == 0.0 {
                1.0
            } else if min == 0.0 {
                f64::INFINITY
            } else {
                max / min
            };
            worst = worst.max(ratio);
        }
        LdpCheck {
            holds: worst <= epsilon.exp() * (1.0 + LDP_RATIO_SLACK),
            worst_ratio: worst,
        }
    }

    pub fn dominance_report(&self) -> Result<DominanceReport> {
        if !self.is_square() {
            return Err(Error::AssumptionViolation(
                "diagonal dominance needs identical input and output supports".into(),
            ));
        }
        let n = self.matrix.nrows();
        let mut min_diagonal = f64::INFINITY;
        let mut max_off_diagonal = 0.0f64;
        for j in 0..n {
            for i in 0..n {
                let v = self.matrix[(i, j)];
                if i == j {
                    min_diagonal = min_diagonal.min(v);
                } else {
                    max_off_diagonal = max_off_diagonal.max(v);
                }
            }
        }
        let margin = min_diagonal - n as f64 * max_off_diagonal;
        let is_udd = margin > 0.0;
        Ok(DominanceReport {
            min_diagonal,
            max_off_diagonal,
            cardinality: n,
            is_udd,
            c0: is_udd.then(|| 1.0 / margin),
        })
    }

    /// Draws clean indices from `p` and passes each through the channel.
    ///
    /// Uses one `ChaCha8Rng::seed_from_u64(seed)` stream: for every sample a
    /// clean draw is followed by its noisy draw.
    pub fn sample_noisy(&self, p: &DiscreteDistribution, n: usize, seed: u64) -> Result<(SampleSet, SampleSet)> {
        if !same_support(&self.input, p.support()) {
            return Err(Error::SupportMismatch);
        }
        if n == 0 {
            return Err(Error::EmptySampleSet);
        }
        let clean_sampler = InverseCdf::new(p.mass());
        let columns: Vec<InverseCdf> = (0..self.matrix.ncols())
            .map(|j| InverseCdf::new(self.matrix.column(j).as_slice()))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut clean = Vec::with_capacity(n);
        let mut noisy = Vec::with_capacity(n);
        for _ in 0..n {
            let c = clean_sampler.draw(&mut rng);
            clean.push(c);
            noisy.push(columns[c].draw(&mut rng));
        }
        Ok((
            SampleSet::new(self.input.clone(), clean)?,
            SampleSet::new(self.output.clone(), noisy)?,
        ))
    }

    /// Writes the channel as CSV.
    ///
    /// The header row is `output\input` followed by the input points; each
    /// subsequent row starts with an output point followed by
    /// `O(output | input)` for every input. Points are written as
    /// `;`-separated coordinates.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["output\\input".to_string()];
        header.extend(self.input.points().iter().map(|p| format_point(p)));
        w.write_record(&header)?;
        for (i, p) in self.output.points().iter().enumerate() {
            let mut rec = vec![format_point(p)];
            rec.extend(self.matrix.row(i).iter().map(|v| format!("{v:e}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(reader);
        let mut records = r.records();
        let header = records
            .next()
            .ok_or_else(|| Error::Parse("channel csv is empty".into()))??;
        let inputs = header.iter().skip(1).map(parse_point).collect::<Result<Vec<_>>>()?;
        let mut outputs = Vec::new();
        let mut rows = Vec::new();
        for (line, rec) in records.enumerate() {
            let rec = rec?;
            let mut fields = rec.iter();
            let point = fields.next().ok_or_else(|| Error::Parse(format!("row {} is empty", line + 2)))?;
            outputs.push(parse_point(point)?);
            let row = fields
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|e| Error::Parse(format!("row {}: '{f}': {e}", line + 2)))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        let input = Arc::new(Support::new(inputs)?);
        let output = if outputs == input.points() {
            input.clone()
        } else {
            Arc::new(Support::new(outputs)?)
        };
        NoiseChannel::from_rows(input, output, &rows)
    }
}

pub fn format_point(p: &[i64]) -> String {
    p.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";")
}

pub fn parse_point(s: &str) -> Result<Vec<i64>> {
    s.split(';')
        .map(|t| t.trim().parse::<i64>().map_err(|e| Error::Parse(format!("point '{s}': {e}"))))
        .collect()
}

/// Smallest privacy level at which the exponential-mechanism channel on
/// `support` is uniformly diagonally dominant, found by bisection on
/// `[lo, hi]` until the bracket is at most `tol` wide.
pub fn udd_threshold(support: &Arc<Support>, norm: Norm, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    if !(lo >= 0.0 && hi > lo && tol > 0.0) {
        return Err(Error::InvalidParameter(format!("need 0 <= lo < hi and tol > 0 (lo={lo}, hi={hi}, tol={tol})")));
    }
    let udd_at = |eps: f64| -> Result<bool> {
        Ok(NoiseChannel::ldp(support.clone(), eps, norm)?.dominance_report()?.is_udd)
    };
    if udd_at(lo)? {
        return Err(Error::NotBracketed(format!("already dominant at lower end {lo}")));
    }
    if !udd_at(hi)? {
        return Err(Error::NotBracketed(format!("not dominant at upper end {hi}")));
    }
    let (mut lo, mut hi) = (lo, hi);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if udd_at(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize) -> Arc<Support> {
        Arc::new(Support::line(n).unwrap())
    }

    fn bsc(flip: f64) -> NoiseChannel {
        let s = line(2);
        NoiseChannel::from_rows(s.clone(), s, &[vec![1.0 - flip, flip], vec![flip, 1.0 - flip]]).unwrap()
    }

    #[test]
    fn push_forward_examples() {
        let s = line(2);
        let o = bsc(0.1);
        let e0 = DiscreteDistribution::point_mass(s.clone(), 0).unwrap();
        assert_eq!(o.push_forward(&e0).unwrap().mass(), &[0.9, 0.1]);
        let u = DiscreteDistribution::uniform(s.clone());
        let pu = o.push_forward(&u).unwrap();
        assert!((pu.mass()[0] - 0.5).abs() < 1e-15 && (pu.mass()[1] - 0.5).abs() < 1e-15);
        let p = DiscreteDistribution::new(s.clone(), vec![0.3, 0.7]).unwrap();
        assert_eq!(NoiseChannel::identity(s).push_forward(&p).unwrap(), p);
        assert_eq!(
            o.push_forward(&DiscreteDistribution::uniform(line(3))).unwrap_err(),
            Error::SupportMismatch
        );
    }

    #[test]
    fn rejects_non_stochastic_columns() {
        let s = line(2);
        assert!(NoiseChannel::from_rows(s.clone(), s.clone(), &[vec![0.9, 0.1], vec![0.2, 0.9]]).is_err());
        assert!(NoiseChannel::from_rows(s.clone(), s, &[vec![1.1, 0.0], vec![-0.1, 1.0]]).is_err());
    }

    #[test]
    fn identity_channel_dominance() {
        let id = NoiseChannel::identity(line(3));
        assert_eq!(id.matrix(), &DMatrix::<f64>::identity(3, 3));
        let r = id.dominance_report().unwrap();
        assert_eq!((r.min_diagonal, r.max_off_diagonal, r.c0), (1.0, 0.0, Some(1.0)));
        assert!(r.is_udd);
    }

    #[test]
    fn dominance_examples() {
        let r = bsc(0.1).dominance_report().unwrap();
        assert_eq!((r.min_diagonal, r.max_off_diagonal, r.cardinality), (0.9, 0.1, 2));
        assert!(r.is_udd);
        // 1 / (0.9 - 2 * 0.1)
        assert!((r.c0.unwrap() - 1.0 / 0.7).abs() < 1e-12);
        let r = bsc(0.4).dominance_report().unwrap();
        assert!(!r.is_udd);
        assert_eq!(r.c0, None);
    }

    #[test]
    fn dominance_needs_square_channel() {
        let a = line(2);
        let b = line(3);
        let o = NoiseChannel::from_rows(a, b, &[vec![0.5, 0.2], vec![0.3, 0.3], vec![0.2, 0.5]]).unwrap();
        assert!(matches!(o.dominance_report(), Err(Error::AssumptionViolation(_))));
    }

    #[test]
    fn ldp_limits_and_two_point_value() {
        let s = line(4);
        let u = NoiseChannel::ldp(s.clone(), 0.0, Norm::Euclidean).unwrap();
        assert!(u.matrix().iter().all(|&v| v == 0.25));
        let id = NoiseChannel::ldp(s.clone(), f64::INFINITY, Norm::Euclidean).unwrap();
        assert_eq!(id.matrix(), &DMatrix::<f64>::identity(4, 4));
        // diam = 1, eps = 2: diagonal 1 / (1 + e^-1)
        let two = NoiseChannel::ldp(line(2), 2.0, Norm::Euclidean).unwrap();
        assert!((two.prob(0, 0) - 0.731_058_578_630_004_9).abs() < 1e-15);
        assert!((two.prob(1, 0) - 0.268_941_421_369_995_1).abs() < 1e-15);
        assert_eq!(
            NoiseChannel::ldp(line(1), 1.0, Norm::Euclidean).unwrap_err(),
            Error::DegenerateSupport
        );
    }

    #[test]
    fn verify_ldp_examples() {
        let s = line(5);
        let uni = NoiseChannel::uniform(s.clone());
        let c = uni.verify_ldp(0.1);
        assert!(c.holds);
        assert_eq!(c.worst_ratio, 1.0);
        let ldp = NoiseChannel::ldp(s.clone(), 1.5, Norm::Euclidean).unwrap();
        assert!(ldp.verify_ldp(1.5).holds);
        assert!(!ldp.verify_ldp(0.5).holds);
        let id = NoiseChannel::identity(s).verify_ldp(10.0);
        assert!(!id.holds);
        assert!(id.worst_ratio.is_infinite());
    }

    #[test]
    fn udd_threshold_two_point_closed_form() {
        let t = udd_threshold(&line(2), Norm::Euclidean, 0.1, 10.0, 1e-9).unwrap();
        assert!((t - 2.0 * 2f64.ln()).abs() < 1e-8);
    }

    #[test]
    fn udd_threshold_requires_bracket() {
        assert!(matches!(
            udd_threshold(&line(2), Norm::Euclidean, 2.0, 10.0, 1e-6),
            Err(Error::NotBracketed(_))
        ));
        assert!(matches!(
            udd_threshold(&line(2), Norm::Euclidean, 0.1, 1.0, 1e-6),
            Err(Error::NotBracketed(_))
        ));
    }

    #[test]
    fn noisy_sampling_is_deterministic_and_identity_is_noiseless() {
        let s = line(3);
        let p = DiscreteDistribution::new(s.clone(), vec![0.2, 0.3, 0.5]).unwrap();
        let id = NoiseChannel::identity(s.clone());
        let (clean, noisy) = id.sample_noisy(&p, 500, 9).unwrap();
        assert_eq!(clean.indices(), noisy.indices());
        let o = NoiseChannel::ldp(s, 1.0, Norm::Euclidean).unwrap();
        assert_eq!(o.sample_noisy(&p, 100, 4).unwrap(), o.sample_noisy(&p, 100, 4).unwrap());
    }

    #[test]
    fn csv_round_trip() {
        let s = Arc::new(Support::grid(&[2, 2]).unwrap());
        let o = NoiseChannel::ldp(s, 3.0, Norm::Euclidean).unwrap();
        let mut buf = Vec::new();
        o.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("output\\input,1;1,1;2,2;1,2;2\n"));
        let back = NoiseChannel::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.input_support().points(), o.input_support().points());
        assert!((back.matrix() - o.matrix()).amax() < 1e-15);
        assert!(back.is_square());
    }
}
