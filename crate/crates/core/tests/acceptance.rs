//! Acceptance gate. Each test checks one criterion at its stated tolerance
//! and prints a single `criterion N: PASS|FAIL ...` line.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tvdro::channel::udd_threshold;
use tvdro::experiments::{run_consistency, run_coverage, run_fig1};
use tvdro::worst_case::CERTIFICATE_TOL;
use tvdro::*;

fn scenario(name: &str) -> Scenario {
    Scenario::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)).unwrap()
}

// Written to the raw stream so the lines survive libtest output capture.
fn emit(line: &str) {
    let _ = writeln!(std::io::stderr(), "{line}");
}

fn report(id: &str, ok: bool, detail: String) {
    emit(&format!("criterion {id}: {} {detail}", if ok { "PASS" } else { "FAIL" }));
    assert!(ok, "criterion {id} failed: {detail}");
}

fn random_channel(rng: &mut ChaCha8Rng, input: Arc<Support>, output: Arc<Support>) -> NoiseChannel {
    let (n, m) = (input.len(), output.len());
    let rows: Vec<Vec<f64>> = {
        let cols: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let w: Vec<f64> = (0..m).map(|_| rng.random::<f64>() + 0.01).collect();
                let t: f64 = w.iter().sum();
                w.into_iter().map(|v| v / t).collect()
            })
            .collect();
        (0..m).map(|k| (0..n).map(|j| cols[j][k]).collect()).collect()
    };
    NoiseChannel::from_rows(input, output, &rows).unwrap()
}

fn random_dist(rng: &mut ChaCha8Rng, s: Arc<Support>) -> DiscreteDistribution {
    let w = (0..s.len()).map(|_| rng.random::<f64>()).collect();
    DiscreteDistribution::from_weights(s, w).unwrap()
}

#[test]
fn criterion_1_strong_duality() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut checked, mut empty, mut worst) = (0usize, 0usize, 0.0f64);
    let mut failures = Vec::new();
    for n in 2..=6 {
        for m in 2..=6 {
            let (si, so) = (Arc::new(Support::line(n).unwrap()), Arc::new(Support::line(m).unwrap()));
            for eps in [0.0, 0.05, 0.3, 1.5] {
                for _ in 0..100 {
                    let o = random_channel(&mut rng, si.clone(), so.clone());
                    // A zero radius needs a center in the image of the channel.
                    let center = if eps == 0.0 {
                        o.push_forward(&random_dist(&mut rng, si.clone())).unwrap()
                    } else {
                        random_dist(&mut rng, so.clone())
                    };
                    let loss: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
                    let spec = AmbiguitySpec::new(center, Arc::new(o), eps).unwrap();
                    checked += 1;
                    match (worst_case_primal(&spec, &loss), worst_case_dual(&spec, &loss)) {
                        (Ok(p), Ok(d)) => {
                            let diff = (p.value - d.value).abs();
                            worst = worst.max(diff / (1.0 + p.value.abs()));
                            if diff > CERTIFICATE_TOL * (1.0 + p.value.abs()) {
                                failures.push(format!("n={n} m={m} eps={eps}: {} vs {}", p.value, d.value));
                            }
                        }
                        (
                            Err(Error::EmptyAmbiguitySet { min_radius: a, .. }),
                            Err(Error::EmptyAmbiguitySet { min_radius: b, .. }),
                        ) if (a - b).abs() < 1e-12 && a > eps => empty += 1,
                        (p, d) => failures.push(format!("n={n} m={m} eps={eps}: {:?} / {:?}", p.err(), d.err())),
                    }
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        "1",
        failures.is_empty() && secs < 30.0,
        format!(
            "{checked} instances, {empty} empty in both forms, worst relative gap {worst:.2e}, {secs:.1}s {:?}",
            failures.iter().take(3).collect::<Vec<_>>()
        ),
    );
}

#[test]
fn criterion_2_oracle_equivalence() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let radii = [0.1, 0.2, 0.3, 0.5, 1.5];
    let mut failures = Vec::new();
    let mut max_gap_ratio = 0.0f64;
    for (n, step) in [(2usize, 1e-3), (3, 1e-2)] {
        let s = Arc::new(Support::line(n).unwrap());
        for i in 0..50 {
            let o = random_channel(&mut rng, s.clone(), s.clone());
            let center = o.push_forward(&random_dist(&mut rng, s.clone())).unwrap();
            let loss: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let spec = AmbiguitySpec::new(center, Arc::new(o), radii[i % radii.len()]).unwrap();
            let d = worst_case_dual(&spec, &loss).unwrap().value;
            let g = worst_case_oracle(&spec, &loss, step).unwrap();
            let l = loss.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            let bound = l * n as f64 * step;
            max_gap_ratio = max_gap_ratio.max((d - g) / bound);
            if !(d >= g - 1e-12 && d - g <= bound) {
                failures.push(format!("n={n} #{i}: dual {d} grid {g} bound {bound}"));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        "2",
        failures.is_empty() && secs < 60.0,
        format!("100 instances, max (dual-grid)/bound {max_gap_ratio:.3}, {secs:.1}s {failures:?}"),
    );
}

#[test]
fn criterion_3_canonical_instance() {
    let s = Arc::new(Support::line(2).unwrap());
    let center = DiscreteDistribution::uniform(s.clone());
    let spec = AmbiguitySpec::new(center, Arc::new(NoiseChannel::identity(s)), 0.2).unwrap();
    let p = worst_case_primal(&spec, &[0.0, 1.0]).unwrap().value;
    let d = worst_case_dual(&spec, &[0.0, 1.0]).unwrap().value;
    let g = worst_case_oracle(&spec, &[0.0, 1.0], 1e-4).unwrap();
    report(
        "3",
        (p - 0.7).abs() <= 1e-8 && (d - 0.7).abs() <= 1e-8 && (g - 0.7).abs() <= 1e-3,
        format!("primal {p} dual {d} grid {g}"),
    );
}

#[test]
fn criteria_4_and_5_coverage_and_certificate() {
    let start = Instant::now();
    let s = scenario("default.toml");
    let udd = s.channels[0].1.dominance_report().unwrap().is_udd;
    let rows = run_coverage(&s).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let r = rows.iter().find(|r| r.n == 200 && r.alpha == Some(0.05)).unwrap();
    report(
        "4",
        udd && r.trials == 1000 && r.coverage >= 0.95 && secs < 60.0,
        format!("|Xi|=3, N=200, alpha=0.05, {} trials: coverage {:.3}, {secs:.1}s", r.trials, r.coverage),
    );
    report(
        "5",
        r.certificate_rate >= 0.95,
        format!("out-of-sample <= J_DRO in {:.3} of trials ({} empty sets)", r.certificate_rate, r.empty_sets),
    );
}

#[test]
fn criterion_6_consistency_rate() {
    let start = Instant::now();
    let s = scenario("default.toml");
    assert_eq!(s.config.n_grid, vec![100, 1000, 10_000, 100_000]);
    assert_eq!(s.config.seeds.len(), 20);
    let rep = run_consistency(&s).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let medians: Vec<f64> = rep.summary.iter().map(|r| r.median_gap_dro).collect();
    let nonincreasing = medians.windows(2).all(|w| w[1] <= w[0]);
    let slope = rep.summary[0].slope;
    let violations = rep.rows.iter().filter(|r| r.covered && !r.bound_holds).count();
    report(
        "6",
        nonincreasing && slope <= -0.35 && violations == 0 && secs < 300.0,
        format!("median gaps {medians:.4?}, log-log slope {slope:.3}, {violations} bound violations, {secs:.1}s"),
    );
}

#[test]
fn criterion_7_nsaa_bias() {
    let s = scenario("nsaa_bias.toml");
    // Closed form: P' = O*P, J* = min(P(1), P(0)) for the swap table, and the
    // naive limit is the same minimum under P'.
    let (p0, flip) = (0.9f64, 0.2f64);
    let p0_obs = (1.0 - flip) * p0 + flip * (1.0 - p0);
    let j_star = p0.min(1.0 - p0);
    let gap = p0_obs.min(1.0 - p0_obs) - j_star;
    assert!((gap - 0.16).abs() < 1e-12);
    let rep = run_consistency(&s).unwrap();
    let rows: Vec<_> = rep.rows.iter().filter(|r| r.n == 100_000).collect();
    assert!(!rows.is_empty());
    let nsaa_ok = rows.iter().all(|r| r.gap_nsaa >= 0.5 * gap);
    let dro_ok = rows.iter().all(|r| r.status == "ok" && r.gap_dro <= 0.25 * gap);
    let nsaa: Vec<f64> = rows.iter().map(|r| r.gap_nsaa).collect();
    let dro: Vec<f64> = rows.iter().map(|r| r.gap_dro).collect();
    report(
        "7",
        nsaa_ok && dro_ok,
        format!("gap {gap:.3}; N=1e5 NSAA gaps {nsaa:.4?} (>= {:.3}), DRO gaps {dro:.4?} (<= {:.3})", gap / 2.0, gap / 4.0),
    );
}

#[test]
fn criterion_8_ldp_and_dominance() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut ldp_ok = true;
    let mut grids = 0;
    for _ in 0..10 {
        let dims = rng.random_range(1..=3);
        let sizes: Vec<i64> = (0..dims).map(|_| rng.random_range(2..=5)).collect();
        let s = Arc::new(Support::grid(&sizes).unwrap());
        for norm in [Norm::Euclidean, Norm::Manhattan, Norm::Chebyshev] {
            for eps in [0.1, 1.0, 3.0, 10.0] {
                ldp_ok &= NoiseChannel::ldp(s.clone(), eps, norm).unwrap().verify_ldp(eps).holds;
                grids += 1;
            }
        }
    }

    let grid = Arc::new(Support::grid(&[5, 5, 7]).unwrap());
    let thresholds: Vec<(Norm, f64)> = [Norm::Euclidean, Norm::Manhattan, Norm::Chebyshev]
        .into_iter()
        .map(|n| (n, udd_threshold(&grid, n, 1.0, 1000.0, 1e-6).unwrap()))
        .collect();
    let euclid = thresholds[0].1;
    let in_band = (euclid - 64.17).abs() <= 1.0;
    // Outside the band, a norm-discrepancy report is the required outcome.
    let discrepancy = if in_band {
        String::new()
    } else {
        let lines: Vec<String> = thresholds.iter().map(|(n, t)| format!("{}={t:.4}", n.name())).collect();
        emit(&format!("norm-discrepancy report: 5x5x7 grid UDD thresholds {}; reference 64.17", lines.join(" ")));
        format!("(b) Euclidean {euclid:.4} outside 64.17 +- 1.0, norm-discrepancy report emitted;")
    };
    // Each reported threshold must actually separate UDD from non-UDD.
    let mut brackets_ok = true;
    for (norm, t) in &thresholds {
        let at = |e: f64| NoiseChannel::ldp(grid.clone(), e, *norm).unwrap().dominance_report().unwrap().is_udd;
        brackets_ok &= !at(t - 1e-3) && at(t + 1e-3);
    }

    let two = Arc::new(Support::line(2).unwrap());
    let t2 = udd_threshold(&two, Norm::Euclidean, 0.01, 10.0, 1e-9).unwrap();
    let closed_ok = (t2 - 2.0 * std::f64::consts::LN_2).abs() <= 1e-5;
    let secs = start.elapsed().as_secs_f64();
    report(
        "8",
        ldp_ok && brackets_ok && closed_ok && secs < 30.0,
        format!(
            "(a) verify_ldp on {grids} channels: {ldp_ok}; {discrepancy} (c) 2-point {t2:.7} vs 2 ln 2; {secs:.1}s"
        ),
    );
}

#[test]
fn criterion_9_fig1_ordering() {
    let start = Instant::now();
    let s = scenario("fig1.toml");
    assert_eq!(s.config.n_grid, vec![100, 1000, 10_000]);
    let rows = run_fig1(&s).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let mut envelope_ok = true;
    let mut ordering = Vec::new();
    for chunk in rows.chunks(3) {
        let get = |m: &str| chunk.iter().find(|r| r.method == m).unwrap().out_of_sample;
        let base = get("noiseless");
        envelope_ok &= base <= get("naive") + 1e-9 && base <= get("dro") + 1e-9;
        // ldp15 is the stronger-noise lane
        if chunk[0].channel == "ldp15" && chunk[0].n == 10_000 {
            ordering.push((chunk[0].seed, get("dro"), get("naive")));
        }
    }
    let dro_wins = !ordering.is_empty() && ordering.iter().all(|(_, d, n)| d <= n);
    report(
        "9",
        envelope_ok && dro_wins && secs < 600.0,
        format!("noiseless lower envelope: {envelope_ok}; N=1e4 ldp15 (seed, dro, naive) {ordering:.3?}; {secs:.1}s"),
    );
}

#[test]
fn criterion_10_contraction_inequality() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut violations = 0;
    let mut tightest = 0.0f64;
    for _ in 0..10_000 {
        let n = rng.random_range(2..=8usize);
        let s = Arc::new(Support::line(n).unwrap());
        let bound = rng.random::<f64>() / (2 * n - 1) as f64;
        let mut rows = vec![vec![0.0; n]; n];
        for j in 0..n {
            let mut col = 0.0;
            for (i, row) in rows.iter_mut().enumerate() {
                if i != j {
                    row[j] = rng.random::<f64>() * bound;
                    col += row[j];
                }
            }
            rows[j][j] = 1.0 - col;
        }
        let o = NoiseChannel::from_rows(s.clone(), s.clone(), &rows).unwrap();
        let rep = o.dominance_report().unwrap();
        assert!(rep.is_udd);
        let c0 = rep.c0.unwrap();
        let p = random_dist(&mut rng, s.clone());
        let q = random_dist(&mut rng, s.clone());
        let lhs = q.tv_distance(&p).unwrap();
        let rhs = o.push_forward(&q).unwrap().tv_distance(&o.push_forward(&p).unwrap()).unwrap();
        if lhs > c0 * rhs + 1e-12 {
            violations += 1;
        }
        tightest = tightest.max(lhs / (c0 * rhs));
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        "10",
        violations == 0 && secs < 10.0,
        format!("10000 triples, {violations} violations, max ratio {tightest:.4}, {secs:.2}s"),
    );
}
