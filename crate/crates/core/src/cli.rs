use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::ambiguity::{min_samples, radius_tv, AmbiguitySpec};
use crate::channel::{udd_threshold, NoiseChannel};
use crate::config::Scenario;
use crate::dist::{DiscreteDistribution, Norm, SampleSet, Support};
use crate::dro::{solve_dro, solve_nsaa};
use crate::error::{Error, Result};
use crate::experiments::{run_consistency, run_coverage, run_fig1, write_csv, write_csv_file};
use crate::ingest::ingest_csv;
use crate::worst_case::{
    dual_program, primal_program, worst_case_dual, worst_case_oracle, worst_case_primal, CERTIFICATE_TOL,
    WorstCaseResult,
};

#[derive(Parser, Debug)]
#[command(name = "tvdro", version, about = "Robust optimization over total-variation balls with noisy data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Concentration radius for N samples, or the N needed for a radius.
    Radius(RadiusArgs),
    /// Build a noise channel and inspect it.
    Channel(ChannelArgs),
    /// Solve one worst-case expectation problem.
    WorstCase(WorstCaseArgs),
    /// Robust decision for one data set drawn from (or given to) a scenario.
    Solve(SolveArgs),
    /// Noisy sample-average decision for the same inputs as `solve`.
    Nsaa(SolveArgs),
    /// Coverage of the ambiguity set and certificate frequency.
    Coverage(RunArgs),
    /// Optimality gaps across the sample-size grid.
    Consistency(RunArgs),
    /// Out-of-sample curves for the regression scenario.
    Fig1(RunArgs),
    /// Compare primal, dual and grid-enumeration values on a small instance.
    OracleCheck(OracleArgs),
}

#[derive(Args, Debug)]
pub struct RadiusArgs {
    /// Number of observed outcomes |Xi'|.
    #[arg(long)]
    card: usize,
    #[arg(long)]
    alpha: f64,
    /// Sample count; prints the radius.
    #[arg(long, conflicts_with = "epsilon")]
    n: Option<u64>,
    /// Target radius; prints the smallest sufficient N.
    #[arg(long)]
    epsilon: Option<f64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ChannelSource {
    Ldp,
    Identity,
    Uniform,
    Matrix,
}

#[derive(Clone, Copy, Debug, Default, ValueEnum)]
pub enum ChannelAction {
    #[default]
    Inspect,
    VerifyLdp,
    Dominance,
    UddThreshold,
    Dump,
}

#[derive(Args, Debug)]
pub struct ChannelArgs {
    source: ChannelSource,
    #[arg(default_value = "inspect")]
    action: ChannelAction,
    /// Grid of codes, e.g. 5x5x7.
    #[arg(long, conflicts_with = "line")]
    grid: Option<String>,
    /// Points 0..n-1 on a line.
    #[arg(long)]
    line: Option<usize>,
    /// Privacy level of the exponential mechanism.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, default_value = "euclidean")]
    norm: Norm,
    /// Channel matrix CSV (for `matrix`).
    #[arg(long)]
    file: Option<PathBuf>,
    /// Privacy level to verify; defaults to --epsilon.
    #[arg(long)]
    level: Option<f64>,
    #[arg(long, default_value_t = 1e-3)]
    lo: f64,
    #[arg(long, default_value_t = 1e4)]
    hi: f64,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Report the threshold under all three norms.
    #[arg(long)]
    all_norms: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq, Eq)]
pub enum Method {
    Primal,
    Dual,
    Both,
}

#[derive(Args, Debug)]
pub struct InstanceArgs {
    /// Observed center distribution, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    center: Option<Vec<f64>>,
    /// Loss per clean outcome, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    loss: Option<Vec<f64>>,
    /// Radius of the ball.
    #[arg(long)]
    eps: f64,
    /// Exponential-mechanism channel on the line instead of the identity.
    #[arg(long, conflicts_with = "channel_file")]
    ldp: Option<f64>,
    /// Channel matrix CSV.
    #[arg(long)]
    channel_file: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct WorstCaseArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    #[arg(long, value_enum, default_value = "dual")]
    method: Method,
    /// Write the LP(s) in plain-text form to this path.
    #[arg(long)]
    dump_lp: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct OracleArgs {
    /// Number of clean outcomes (2..=4).
    #[arg(long, default_value_t = 2)]
    size: usize,
    #[command(flatten)]
    instance: InstanceArgs,
    /// Grid resolution; defaults to 1e-4, 1e-2, 2e-2 for sizes 2, 3, 4.
    #[arg(long)]
    step: Option<f64>,
}

#[derive(Args, Debug)]
pub struct SolveArgs {
    #[arg(long)]
    config: PathBuf,
    /// Channel label; defaults to the first one.
    #[arg(long)]
    channel: Option<String>,
    /// Sample count when drawing synthetic data; defaults to the first of n_grid.
    #[arg(long)]
    n: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Observed data CSV, coded with the config's [ingest] rules.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output CSV; defaults to the config's `output`, else stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Six significant digits in plain decimal notation.
pub fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let mag = x.abs().log10().floor() as i32;
    if !(-5..=15).contains(&mag) {
        return format!("{x:.5e}");
    }
    let decimals = (5 - mag).max(0) as usize;
    format!("{x:.decimals$}")
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(",")
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Radius(a) => radius(a, out),
        Command::Channel(a) => channel(a, out),
        Command::WorstCase(a) => worst_case(a, out),
        Command::OracleCheck(a) => oracle_check(a, out),
        Command::Solve(a) => solve(a, false, out),
        Command::Nsaa(a) => solve(a, true, out),
        Command::Coverage(a) => coverage(a, out),
        Command::Consistency(a) => consistency(a, out),
        Command::Fig1(a) => fig1(a, out),
    }
}

fn radius(a: RadiusArgs, out: &mut dyn Write) -> Result<()> {
    match (a.n, a.epsilon) {
        (Some(n), None) => {
            if a.card == 0 || n == 0 || !(a.alpha > 0.0 && a.alpha < 1.0) {
                return Err(Error::InvalidParameter("need card >= 1, n >= 1, 0 < alpha < 1".into()));
            }
            writeln!(out, "{}", sig6(radius_tv(a.card, a.alpha, n)))?;
        }
        (None, Some(eps)) => writeln!(out, "{}", min_samples(a.card, a.alpha, eps)?)?,
        _ => return Err(Error::InvalidParameter("give exactly one of --n or --epsilon".into())),
    }
    Ok(())
}

fn parse_grid(s: &str) -> Result<Vec<i64>> {
    s.split(['x', 'X'])
        .map(|t| t.trim().parse::<i64>().map_err(|e| Error::Parse(format!("bad grid '{s}': {e}"))))
        .collect()
}

fn support_from(grid: &Option<String>, line: Option<usize>) -> Result<Arc<Support>> {
    match (grid, line) {
        (Some(g), _) => Ok(Arc::new(Support::grid(&parse_grid(g)?)?)),
        (None, Some(n)) => Ok(Arc::new(Support::line(n)?)),
        (None, None) => Err(Error::InvalidParameter("give --grid or --line".into())),
    }
}

fn read_channel(path: &Path) -> Result<NoiseChannel> {
    let f = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    NoiseChannel::read_csv(f)
}

fn channel(a: ChannelArgs, out: &mut dyn Write) -> Result<()> {
    if let (ChannelSource::Ldp, ChannelAction::UddThreshold) = (a.source, a.action) {
        let support = support_from(&a.grid, a.line)?;
        let norms: Vec<Norm> = if a.all_norms {
            vec![Norm::Euclidean, Norm::Manhattan, Norm::Chebyshev]
        } else {
            vec![a.norm]
        };
        for norm in norms {
            let t = udd_threshold(&support, norm, a.lo, a.hi, a.tol)?;
            writeln!(out, "threshold={t:.6} norm={}", norm.name())?;
        }
        return Ok(());
    }
    let ch = match a.source {
        ChannelSource::Ldp => {
            let eps = a.epsilon.ok_or_else(|| Error::InvalidParameter("ldp needs --epsilon".into()))?;
            NoiseChannel::ldp(support_from(&a.grid, a.line)?, eps, a.norm)?
        }
        ChannelSource::Identity => NoiseChannel::identity(support_from(&a.grid, a.line)?),
        ChannelSource::Uniform => NoiseChannel::uniform(support_from(&a.grid, a.line)?),
        ChannelSource::Matrix => {
            let path = a.file.as_ref().ok_or_else(|| Error::InvalidParameter("matrix needs --file".into()))?;
            read_channel(path)?
        }
    };
    match a.action {
        ChannelAction::Inspect => {
            let m = ch.matrix();
            writeln!(out, "inputs={} outputs={}", m.ncols(), m.nrows())?;
            writeln!(out, "min_entry={} max_entry={}", m.min(), m.max())?;
            if let Ok(d) = ch.dominance_report() {
                writeln!(out, "is_udd={} c0={}", d.is_udd, d.c0.map_or("none".into(), |c| c.to_string()))?;
            }
            if ch.is_square() {
                writeln!(out, "worst_log_ratio={}", ch.verify_ldp(f64::INFINITY).worst_ratio.ln())?;
            }
        }
        ChannelAction::VerifyLdp => {
            let level = a
                .level
                .or(a.epsilon)
                .ok_or_else(|| Error::InvalidParameter("verify-ldp needs --level or --epsilon".into()))?;
            let check = ch.verify_ldp(level);
            writeln!(
                out,
                "holds={} worst_ratio={} bound={}",
                check.holds,
                check.worst_ratio,
                level.exp()
            )?;
        }
        ChannelAction::Dominance => {
            let d = ch.dominance_report()?;
            writeln!(out, "is_udd={}", d.is_udd)?;
            writeln!(out, "min_diagonal={}", d.min_diagonal)?;
            writeln!(out, "max_off_diagonal={}", d.max_off_diagonal)?;
            writeln!(out, "cardinality={}", d.cardinality)?;
            writeln!(out, "margin={}", d.margin())?;
            writeln!(out, "c0={}", d.c0.map_or("none".into(), |c| c.to_string()))?;
        }
        ChannelAction::UddThreshold => {
            return Err(Error::InvalidParameter("udd-threshold applies to the ldp source".into()));
        }
        ChannelAction::Dump => match &a.out {
            Some(p) => {
                let f = std::fs::File::create(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
                ch.write_csv(f)?;
            }
            None => ch.write_csv(&mut *out)?,
        },
    }
    Ok(())
}

fn build_spec(inst: &InstanceArgs, default_size: Option<usize>) -> Result<(AmbiguitySpec, Vec<f64>)> {
    let ch = match &inst.channel_file {
        Some(p) => read_channel(p)?,
        None => {
            let n = inst
                .center
                .as_ref()
                .map(Vec::len)
                .or(inst.loss.as_ref().map(Vec::len))
                .or(default_size)
                .ok_or_else(|| Error::InvalidParameter("give --center or --loss".into()))?;
            let support = Arc::new(Support::line(n)?);
            match inst.ldp {
                Some(e) => NoiseChannel::ldp(support, e, Norm::Euclidean)?,
                None => NoiseChannel::identity(support),
            }
        }
    };
    let center = match &inst.center {
        Some(c) => DiscreteDistribution::new(ch.output_support().clone(), c.clone())?,
        None => DiscreteDistribution::uniform(ch.output_support().clone()),
    };
    let loss = inst
        .loss
        .clone()
        .unwrap_or_else(|| (0..ch.input_support().len()).map(|k| k as f64).collect());
    Ok((AmbiguitySpec::new(center, Arc::new(ch), inst.eps)?, loss))
}

fn print_result(out: &mut dyn Write, tag: &str, r: &WorstCaseResult) -> Result<()> {
    writeln!(out, "{tag}value={}", r.value)?;
    writeln!(out, "{tag}q_star={}", join(r.q_star.mass()))?;
    writeln!(out, "{tag}lambda={}", join(&r.certificate.lambda))?;
    writeln!(out, "{tag}mu={}", join(&r.certificate.mu))?;
    writeln!(out, "{tag}r={}", r.certificate.r)?;
    writeln!(out, "{tag}t={}", r.certificate.t)?;
    Ok(())
}

fn worst_case(a: WorstCaseArgs, out: &mut dyn Write) -> Result<()> {
    let (spec, loss) = build_spec(&a.instance, None)?;
    if let Some(path) = &a.dump_lp {
        let mut text = String::new();
        if a.method != Method::Dual {
            text.push_str(&primal_program(&spec, &loss)?.to_text());
        }
        if a.method != Method::Primal {
            text.push_str(&dual_program(&spec, &loss)?.to_text());
        }
        std::fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    }
    match a.method {
        Method::Primal => print_result(out, "", &worst_case_primal(&spec, &loss)?),
        Method::Dual => print_result(out, "", &worst_case_dual(&spec, &loss)?),
        Method::Both => {
            let p = worst_case_primal(&spec, &loss)?;
            let d = worst_case_dual(&spec, &loss)?;
            print_result(out, "primal.", &p)?;
            print_result(out, "dual.", &d)?;
            writeln!(out, "gap={}", (p.value - d.value).abs())?;
            Ok(())
        }
    }
}

fn oracle_check(a: OracleArgs, out: &mut dyn Write) -> Result<()> {
    if !(2..=4).contains(&a.size) {
        return Err(Error::InvalidParameter("oracle-check supports sizes 2 to 4".into()));
    }
    let (spec, loss) = build_spec(&a.instance, Some(a.size))?;
    let n = loss.len();
    let step = a.step.unwrap_or(match n {
        2 => 1e-4,
        3 => 1e-2,
        _ => 2e-2,
    });
    let primal = worst_case_primal(&spec, &loss);
    let dual = worst_case_dual(&spec, &loss);
    let grid = worst_case_oracle(&spec, &loss, step);
    match (primal, dual, grid) {
        (Ok(p), Ok(d), Ok(g)) => {
            let l = loss.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let dual_ok = (p.value - d.value).abs() <= CERTIFICATE_TOL * (1.0 + p.value.abs());
            let grid_ok = g <= d.value + 1e-9 && d.value - g <= l * n as f64 * step;
            writeln!(out, "primal={}", p.value)?;
            writeln!(out, "dual={}", d.value)?;
            writeln!(out, "grid={g}")?;
            writeln!(out, "step={step}")?;
            writeln!(out, "agree={}", dual_ok && grid_ok)?;
            if !(dual_ok && grid_ok) {
                return Err(Error::LpFailure("primal, dual and grid values disagree".into()));
            }
        }
        (
            Err(Error::EmptyAmbiguitySet { min_radius, .. }),
            Err(Error::EmptyAmbiguitySet { .. }),
            Err(Error::NoFeasibleGridPoint),
        ) => {
            writeln!(out, "empty=true")?;
            writeln!(out, "min_radius={min_radius}")?;
            writeln!(out, "agree=true")?;
        }
        (p, d, g) => {
            for e in [p.err(), d.err(), g.err()].into_iter().flatten() {
                if !matches!(e, Error::EmptyAmbiguitySet { .. } | Error::NoFeasibleGridPoint) {
                    return Err(e);
                }
            }
            writeln!(out, "agree=false")?;
            return Err(Error::LpFailure("methods disagree on emptiness".into()));
        }
    }
    Ok(())
}

fn solve(a: SolveArgs, naive: bool, out: &mut dyn Write) -> Result<()> {
    let scenario = Scenario::load(&a.config)?;
    let (label, ch) = scenario.channel(a.channel.as_deref())?.clone();
    let samples: SampleSet = match &a.data {
        Some(path) => {
            let ingest = scenario
                .config
                .ingest
                .as_ref()
                .ok_or_else(|| Error::Config("--data needs an [ingest] section".into()))?;
            let rep = ingest_csv(path, &ingest.column, ingest.full_grid)?;
            if rep.support.points() != ch.output_support().points() {
                return Err(Error::SupportMismatch);
            }
            writeln!(
                out,
                "rows_read={} dropped_out_of_range={} dropped_unparseable={}",
                rep.rows_read, rep.dropped_out_of_range, rep.dropped_unparseable
            )?;
            for d in &rep.diagnostics {
                eprintln!("warning: {d}");
            }
            SampleSet::new(ch.output_support().clone(), rep.samples.indices().to_vec())?
        }
        None => {
            let n = a.n.unwrap_or(scenario.config.n_grid[0]);
            let seed = a.seed.unwrap_or(scenario.config.seeds[0]);
            ch.sample_noisy(scenario.truth()?, n as usize, seed)?.1
        }
    };
    let n = samples.len() as u64;
    writeln!(out, "channel={label}")?;
    writeln!(out, "n={n}")?;
    if naive {
        let sol = solve_nsaa(&samples, &scenario.model)?;
        writeln!(out, "value={}", sol.value)?;
        writeln!(out, "decision={}", sol.decision)?;
        return Ok(());
    }
    let (eps, _) = scenario.config.radius.radius(ch.output_support().len(), n);
    let spec = AmbiguitySpec::from_samples(&samples, ch, eps)?;
    let sol = solve_dro(&spec, &scenario.model)?;
    writeln!(out, "radius={eps}")?;
    writeln!(out, "value={}", sol.value)?;
    writeln!(out, "decision={}", sol.decision)?;
    writeln!(out, "iterations={}", sol.diagnostics.iterations)?;
    writeln!(out, "converged={}", sol.diagnostics.converged)?;
    writeln!(out, "loss_bound={}", sol.diagnostics.loss_bound)?;
    Ok(())
}

fn output_target(a: &RunArgs, scenario: &Scenario) -> Option<PathBuf> {
    a.out.clone().or_else(|| scenario.output_path())
}

fn emit<T: serde::Serialize>(rows: &[T], target: &Option<PathBuf>, out: &mut dyn Write) -> Result<()> {
    match target {
        Some(p) => write_csv_file(rows, p),
        None => write_csv(rows, out),
    }
}

fn coverage(a: RunArgs, out: &mut dyn Write) -> Result<()> {
    let scenario = Scenario::load(&a.config)?;
    let rows = run_coverage(&scenario)?;
    let target = output_target(&a, &scenario);
    emit(&rows, &target, out)?;
    if target.is_some() {
        write_csv(&rows, out)?;
    }
    Ok(())
}

fn consistency(a: RunArgs, out: &mut dyn Write) -> Result<()> {
    let scenario = Scenario::load(&a.config)?;
    let rep = run_consistency(&scenario)?;
    match output_target(&a, &scenario) {
        Some(p) => {
            write_csv_file(&rep.rows, &p)?;
            let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            write_csv_file(&rep.summary, &p.with_file_name(format!("{stem}_summary.csv")))?;
        }
        None => {
            for r in rep.rows.iter().filter(|r| r.covered && !r.bound_holds) {
                eprintln!("warning: bound violated in covered trial n={} seed={}", r.n, r.seed);
            }
        }
    }
    write_csv(&rep.summary, out)?;
    for (label, ch) in &scenario.channels {
        if let Ok(d) = ch.dominance_report() {
            if !d.is_udd {
                eprintln!("warning: channel '{label}' is not uniformly diagonally dominant");
            }
        }
    }
    Ok(())
}

fn fig1(a: RunArgs, out: &mut dyn Write) -> Result<()> {
    let scenario = Scenario::load(&a.config)?;
    let rows = run_fig1(&scenario)?;
    emit(&rows, &output_target(&a, &scenario), out)
}

/// Parses arguments, runs, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match run(cli, &mut lock) {
        Ok(()) => 0,
        Err(e) => {
            let _ = lock.flush();
            eprintln!("error: {}: {}", e.kind(), e);
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> Result<String> {
        let cli = Cli::try_parse_from(std::iter::once("tvdro").chain(args.iter().copied())).unwrap();
        let mut buf = Vec::new();
        run(cli, &mut buf)?;
        Ok(String::from_utf8(buf).unwrap())
    }

    #[test]
    fn significant_digits() {
        assert_eq!(sig6(0.271_620_303), "0.271620");
        assert_eq!(sig6(12.345_678), "12.3457");
        assert_eq!(sig6(1234567.0), "1234567");
    }

    #[test]
    fn radius_command() {
        assert_eq!(run_args(&["radius", "--card", "4", "--alpha", "0.05", "--n", "100"]).unwrap(), "0.271620\n");
        assert_eq!(
            run_args(&["radius", "--card", "4", "--alpha", "0.05", "--epsilon", "0.271621"]).unwrap(),
            "100\n"
        );
    }

    #[test]
    fn worst_case_command() {
        let s = run_args(&["worst-case", "--center", "0.5,0.5", "--loss", "0,1", "--eps", "0.2"]).unwrap();
        assert!(s.starts_with("value=0.7"), "{s}");
        let s = run_args(&["oracle-check", "--size", "2", "--eps", "0.2"]).unwrap();
        assert!(s.contains("agree=true"), "{s}");
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(main_with_args(["tvdro", "frobnicate"]), 2);
        assert_eq!(main_with_args(["tvdro", "radius", "--card"]), 2);
    }
}
