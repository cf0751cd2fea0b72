//! Monte Carlo harnesses: coverage of the ambiguity set, consistency of the
//! robust optimum, and out-of-sample curves for the regression scenario.
//!
//! Every cell of a run draws from its own generator, seeded by mixing the
//! configured seed with the cell coordinates, so results do not depend on
//! evaluation order. Rows come back in a fixed order and are written as CSV
//! with a header line and no timestamp.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::ambiguity::{AmbiguitySpec, MEMBERSHIP_SLACK};
use crate::channel::NoiseChannel;
use crate::config::{RadiusConfig, Scenario};
use crate::dist::DiscreteDistribution;
use crate::dro::{out_of_sample, solve_dro, solve_nsaa, solve_true, Decision};
use crate::error::{Error, Result};

/// Tolerance for comparisons between optimal values.
const VALUE_TOL: f64 = 1e-9;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for one cell of an experiment grid.
pub fn cell_seed(base: u64, coords: &[u64]) -> u64 {
    coords.iter().fold(splitmix64(base), |acc, c| splitmix64(acc ^ splitmix64(*c)))
}

/// One noisy data set and the robust / naive solutions on it.
struct Trial {
    radius: f64,
    alpha: Option<f64>,
    covered: bool,
    dro: Option<(f64, Decision)>,
    nsaa: (f64, Decision),
}

fn run_trial(
    truth: &DiscreteDistribution,
    channel: &Arc<NoiseChannel>,
    scenario: &Scenario,
    radius: &RadiusConfig,
    n: u64,
    seed: u64,
) -> Result<Trial> {
    let (_, noisy) = channel.sample_noisy(truth, n as usize, seed)?;
    let center = noisy.empirical_distribution()?;
    let (eps, alpha) = radius.radius(channel.output_support().len(), n);
    let observed_truth = channel.push_forward(truth)?;
    let covered = observed_truth.tv_distance(&center)? <= eps + MEMBERSHIP_SLACK;
    let spec = AmbiguitySpec::new(center, channel.clone(), eps)?;
    let dro = match solve_dro(&spec, &scenario.model) {
        Ok(sol) => Some((sol.value, sol.decision)),
        Err(Error::EmptyAmbiguitySet { .. }) => None,
        Err(e) => return Err(e),
    };
    let nsaa = solve_nsaa(&noisy, &scenario.model)?;
    Ok(Trial {
        radius: eps,
        alpha,
        covered,
        dro,
        nsaa: (nsaa.value, nsaa.decision),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoverageRow {
    pub scenario: String,
    pub channel: String,
    pub n: u64,
    pub alpha: Option<f64>,
    pub trials: usize,
    pub radius: f64,
    pub coverage: f64,
    pub certificate_rate: f64,
    pub empty_sets: usize,
    /// `coverage >= 1 - alpha`; empty for fixed radii.
    pub pass: Option<bool>,
}

/// Frequency of `O * P` lying in the ball around the noisy empirical
/// distribution, and of the robust value bounding the true cost of the
/// robust decision, per (channel, N, alpha).
pub fn run_coverage(scenario: &Scenario) -> Result<Vec<CoverageRow>> {
    let truth = scenario.truth()?;
    let cfg = &scenario.config;
    let cov = cfg
        .coverage
        .as_ref()
        .ok_or_else(|| Error::Config("coverage run needs a [coverage] section".into()))?;
    let ns = cov.n.clone().unwrap_or_else(|| cfg.n_grid.clone());
    let policies: Vec<RadiusConfig> = match (&cov.alphas, &cfg.radius) {
        (Some(alphas), _) => alphas.iter().map(|a| cfg.radius.with_alpha(*a)).collect(),
        (None, r) => vec![r.clone()],
    };
    let base = cfg.seeds[0];
    let mut rows = Vec::new();
    for (ci, (label, channel)) in scenario.channels.iter().enumerate() {
        for &n in &ns {
            for (pi, policy) in policies.iter().enumerate() {
                let trials: Vec<Trial> = (0..cov.trials)
                    .into_par_iter()
                    .map(|t| {
                        let seed = cell_seed(base, &[ci as u64, n, pi as u64, t as u64]);
                        run_trial(truth, channel, scenario, policy, n, seed)
                    })
                    .collect::<Result<_>>()?;
                let covered = trials.iter().filter(|t| t.covered).count();
                let mut certified = 0;
                let mut empty = 0;
                for t in &trials {
                    match &t.dro {
                        Some((value, x)) => {
                            if out_of_sample(truth, &scenario.model, x)? <= value + VALUE_TOL {
                                certified += 1;
                            }
                        }
                        None => empty += 1,
                    }
                }
                let total = trials.len() as f64;
                let coverage = covered as f64 / total;
                let alpha = trials[0].alpha;
                rows.push(CoverageRow {
                    scenario: cfg.name.clone(),
                    channel: label.clone(),
                    n,
                    alpha,
                    trials: trials.len(),
                    radius: trials[0].radius,
                    coverage,
                    certificate_rate: certified as f64 / total,
                    empty_sets: empty,
                    pass: alpha.map(|a| coverage >= 1.0 - a),
                });
            }
        }
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConsistencyRow {
    pub scenario: String,
    pub channel: String,
    pub n: u64,
    pub seed: u64,
    pub alpha: Option<f64>,
    pub radius: f64,
    pub j_star: f64,
    /// NaN when the ambiguity set was empty.
    pub j_dro: f64,
    pub gap_dro: f64,
    pub j_nsaa: f64,
    pub gap_nsaa: f64,
    pub oos_dro: f64,
    pub oos_nsaa: f64,
    pub covered: bool,
    /// `J* <= J_DRO` (must hold whenever `covered`).
    pub bound_holds: bool,
    pub status: &'static str,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConsistencySummary {
    pub scenario: String,
    pub channel: String,
    pub n: u64,
    pub runs: usize,
    pub median_gap_dro: f64,
    pub median_gap_nsaa: f64,
    /// Least-squares slope of log median DRO gap against log N, per channel.
    pub slope: f64,
    /// Median DRO gaps are non-increasing in N, per channel.
    pub monotone: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConsistencyReport {
    pub rows: Vec<ConsistencyRow>,
    pub summary: Vec<ConsistencySummary>,
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let k = values.len();
    if k % 2 == 1 {
        values[k / 2]
    } else {
        0.5 * (values[k / 2 - 1] + values[k / 2])
    }
}

/// Ordinary least-squares slope of `y` on `x`.
pub fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Robust and naive optimal values against the true optimum across the
/// sample-size grid, one row per (channel, N, seed).
pub fn run_consistency(scenario: &Scenario) -> Result<ConsistencyReport> {
    let truth = scenario.truth()?;
    let cfg = &scenario.config;
    let star = solve_true(truth, &scenario.model)?;
    let mut cells = Vec::new();
    for ci in 0..scenario.channels.len() {
        for &n in &cfg.n_grid {
            for &seed in &cfg.seeds {
                cells.push((ci, n, seed));
            }
        }
    }
    let rows: Vec<ConsistencyRow> = cells
        .into_par_iter()
        .map(|(ci, n, seed)| {
            let (label, channel) = &scenario.channels[ci];
            let trial = run_trial(truth, channel, scenario, &cfg.radius, n, cell_seed(seed, &[ci as u64, n]))?;
            let (j_nsaa, x_nsaa) = trial.nsaa;
            let oos_nsaa = out_of_sample(truth, &scenario.model, &x_nsaa)?;
            let (j_dro, oos_dro, status) = match &trial.dro {
                Some((v, x)) => (*v, out_of_sample(truth, &scenario.model, x)?, "ok"),
                None => (f64::NAN, f64::NAN, "empty"),
            };
            Ok(ConsistencyRow {
                scenario: cfg.name.clone(),
                channel: label.clone(),
                n,
                seed,
                alpha: trial.alpha,
                radius: trial.radius,
                j_star: star.value,
                j_dro,
                gap_dro: (j_dro - star.value).abs(),
                j_nsaa,
                gap_nsaa: (j_nsaa - star.value).abs(),
                oos_dro,
                oos_nsaa,
                covered: trial.covered,
                bound_holds: j_dro >= star.value - VALUE_TOL,
                status,
            })
        })
        .collect::<Result<_>>()?;

    let mut summary = Vec::new();
    for (label, _) in &scenario.channels {
        let mut per_n = Vec::new();
        for &n in &cfg.n_grid {
            let cell: Vec<&ConsistencyRow> = rows.iter().filter(|r| &r.channel == label && r.n == n).collect();
            let mut dro: Vec<f64> = cell.iter().filter(|r| r.status == "ok").map(|r| r.gap_dro).collect();
            let mut nsaa: Vec<f64> = cell.iter().map(|r| r.gap_nsaa).collect();
            per_n.push((n, dro.len(), median(&mut dro), median(&mut nsaa)));
        }
        let xs: Vec<f64> = per_n.iter().map(|p| (p.0 as f64).ln()).collect();
        let ys: Vec<f64> = per_n.iter().map(|p| p.2.max(f64::MIN_POSITIVE).ln()).collect();
        let slope = if per_n.len() >= 2 { ls_slope(&xs, &ys) } else { f64::NAN };
        let monotone = per_n.windows(2).all(|w| w[1].2 <= w[0].2);
        for (n, runs, gd, gn) in per_n {
            summary.push(ConsistencySummary {
                scenario: cfg.name.clone(),
                channel: label.clone(),
                n,
                runs,
                median_gap_dro: gd,
                median_gap_nsaa: gn,
                slope,
                monotone,
            });
        }
    }
    Ok(ConsistencyReport { rows, summary })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Fig1Row {
    pub scenario: String,
    pub channel: String,
    pub n: u64,
    pub seed: u64,
    pub method: &'static str,
    pub out_of_sample: f64,
    /// In-sample objective of the method (the robust value for `dro`).
    pub objective: f64,
    pub radius: f64,
    pub status: &'static str,
}

/// Out-of-sample cost of three decisions per (channel, N, seed): the
/// population optimum on clean data (`noiseless`), least squares on the
/// noisy samples (`naive`), and the robust decision (`dro`).
pub fn run_fig1(scenario: &Scenario) -> Result<Vec<Fig1Row>> {
    let truth = scenario.truth()?;
    let cfg = &scenario.config;
    let star = solve_true(truth, &scenario.model)?;
    let mut cells = Vec::new();
    for ci in 0..scenario.channels.len() {
        for &n in &cfg.n_grid {
            for &seed in &cfg.seeds {
                cells.push((ci, n, seed));
            }
        }
    }
    let blocks: Vec<Vec<Fig1Row>> = cells
        .into_par_iter()
        .map(|(ci, n, seed)| {
            let (label, channel) = &scenario.channels[ci];
            let trial = run_trial(truth, channel, scenario, &cfg.radius, n, cell_seed(seed, &[ci as u64, n]))?;
            let row = |method, oos, objective, status| Fig1Row {
                scenario: cfg.name.clone(),
                channel: label.clone(),
                n,
                seed,
                method,
                out_of_sample: oos,
                objective,
                radius: trial.radius,
                status,
            };
            let (j_nsaa, x_nsaa) = &trial.nsaa;
            let mut out = vec![
                row("noiseless", star.value, star.value, "ok"),
                row("naive", out_of_sample(truth, &scenario.model, x_nsaa)?, *j_nsaa, "ok"),
            ];
            out.push(match &trial.dro {
                Some((v, x)) => row("dro", out_of_sample(truth, &scenario.model, x)?, *v, "ok"),
                None => row("dro", f64::NAN, f64::NAN, "empty"),
            });
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(blocks.into_iter().flatten().collect())
}

pub fn write_csv<T: Serialize, W: Write>(rows: &[T], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_file<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let f = std::fs::File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    write_csv(rows, std::io::BufWriter::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;

    fn scenario(extra: &str, radius: &str) -> Scenario {
        let text = format!(
            r#"
name = "unit"
n_grid = [50, 500]
seeds = [1, 2, 3]

[support]
kind = "line"
size = 3

[truth]
kind = "explicit"
mass = [0.5, 0.3, 0.2]

[[channel]]
label = "udd"
kind = "matrix"
rows = [[0.9, 0.05, 0.05], [0.05, 0.9, 0.05], [0.05, 0.05, 0.9]]

[[channel]]
label = "clean"
kind = "identity"

[loss]
kind = "table"
h = [[0, 2, 4], [1, 0, 2], [3, 1, 0]]

{radius}
{extra}
"#
        );
        Scenario::build(ExperimentConfig::from_toml(&text).unwrap(), Path::new(".")).unwrap()
    }

    #[test]
    fn seeds_mix_all_coordinates() {
        let a = cell_seed(1, &[0, 100]);
        assert_ne!(a, cell_seed(1, &[1, 100]));
        assert_ne!(a, cell_seed(1, &[0, 101]));
        assert_ne!(a, cell_seed(2, &[0, 100]));
        assert_eq!(a, cell_seed(1, &[0, 100]));
    }

    #[test]
    fn median_and_slope() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
        let x = [1.0, 2.0, 3.0];
        assert!((ls_slope(&x, &[1.0, 0.5, 0.0]) + 0.5).abs() < 1e-15);
    }

    #[test]
    fn forced_full_radius_covers_everything() {
        let s = scenario("[coverage]\ntrials = 20\nn = [30]", "[radius]\nkind = \"fixed\"\nepsilon = 1.0");
        let rows = run_coverage(&s).unwrap();
        assert_eq!(rows.len(), 2);
        for r in rows {
            assert_eq!(r.coverage, 1.0);
            assert_eq!(r.certificate_rate, 1.0);
            assert_eq!(r.pass, None);
        }
    }

    #[test]
    fn small_n_still_reports_formula_radius() {
        let s = scenario(
            "[coverage]\ntrials = 10\nn = [2]\nalphas = [0.05]",
            "[radius]\nkind = \"alpha\"\nalpha = 0.05",
        );
        let rows = run_coverage(&s).unwrap();
        assert!((rows[0].radius - crate::ambiguity::radius_tv(3, 0.05, 2)).abs() < 1e-15);
        assert!(rows[0].radius > 1.0);
    }

    #[test]
    fn consistency_rows_and_reproducibility() {
        let s = scenario("", "[radius]\nkind = \"schedule\"");
        let rep = run_consistency(&s).unwrap();
        assert_eq!(rep.rows.len(), 2 * 2 * 3);
        for r in &rep.rows {
            if r.covered {
                assert!(r.bound_holds);
            }
            assert!((r.j_star - 0.9).abs() < 1e-12);
        }
        assert_eq!(rep.summary.len(), 4);
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_csv(&rep.rows, &mut a).unwrap();
        write_csv(&run_consistency(&s).unwrap().rows, &mut b).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        assert!(text.starts_with("scenario,channel,n,seed,alpha,radius,j_star,j_dro,"));
        assert!(text.ends_with('\n'));
    }

    #[test]
    fn zero_radius_identity_matches_saa() {
        let s = scenario("", "[radius]\nkind = \"fixed\"\nepsilon = 0.0");
        let rep = run_consistency(&s).unwrap();
        for r in rep.rows.iter().filter(|r| r.channel == "clean") {
            assert!((r.j_dro - r.j_nsaa).abs() < 1e-10);
            assert!((r.gap_dro - r.gap_nsaa).abs() < 1e-10);
        }
    }
}
