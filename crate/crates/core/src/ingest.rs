//! Tabular data to integer codes.
//!
//! Each configured column is cut into brackets of a fixed width starting at
//! `lo`: `[lo, lo + w)`, `[lo + w, lo + 2w)`, ... with the last bracket closed
//! at `hi`. Bracket `k` (0-based) gets code `first_code + k`, and there are
//! `floor((hi - lo) / w) + 1` codes, so credit scores 650..=850 in steps of
//! 50 map onto codes 1..=5 with 850 alone in the top code.

use std::collections::BTreeSet;
use std::io::Read;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dist::{Point, SampleSet, Support};
use crate::error::{Error, Result};

fn default_first_code() -> i64 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscretizationRule {
    pub column: String,
    pub lo: f64,
    pub hi: f64,
    pub width: f64,
    #[serde(default = "default_first_code")]
    pub first_code: i64,
}

impl DiscretizationRule {
    pub fn new(column: &str, lo: f64, hi: f64, width: f64) -> Result<Self> {
        let r = DiscretizationRule {
            column: column.to_string(),
            lo,
            hi,
            width,
            first_code: 1,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi) {
            return Err(Error::Config(format!("column '{}': need finite lo < hi", self.column)));
        }
        if !(self.width > 0.0 && self.width.is_finite()) {
            return Err(Error::Config(format!("column '{}': bracket width must be positive", self.column)));
        }
        Ok(())
    }

    pub fn num_codes(&self) -> i64 {
        ((self.hi - self.lo) / self.width + 1e-9).floor() as i64 + 1
    }

    pub fn codes(&self) -> std::ops::RangeInclusive<i64> {
        self.first_code..=self.first_code + self.num_codes() - 1
    }

    /// Code of `value`, or `None` outside `[lo, hi]`.
    pub fn code(&self, value: f64) -> Option<i64> {
        if !(value >= self.lo && value <= self.hi) {
            return None;
        }
        // Relative slack keeps values like 0.10 / 0.05 on the upper bracket.
        let k = ((value - self.lo) / self.width * (1.0 + 1e-12)).floor() as i64;
        Some(self.first_code + k.min(self.num_codes() - 1))
    }
}

#[derive(Clone, Debug)]
pub struct IngestReport {
    pub support: Arc<Support>,
    pub samples: SampleSet,
    pub rows_read: usize,
    pub dropped_out_of_range: usize,
    pub dropped_unparseable: usize,
    /// One message per dropped unparseable row.
    pub diagnostics: Vec<String>,
}

fn parse_value(raw: &str) -> Option<f64> {
    let cleaned: String = raw
        .trim()
        .trim_start_matches('$')
        .trim_end_matches('%')
        .chars()
        .filter(|c| *c != ',' && *c != '_')
        .collect();
    cleaned.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

pub fn ingest_csv(path: &Path, rules: &[DiscretizationRule], full_grid: bool) -> Result<IngestReport> {
    let f = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    ingest_reader(f, rules, full_grid)
}

/// Codes every row of a headed CSV. With `full_grid` the support is the
/// Cartesian product of all declared codes; otherwise it is the set of
/// coded points that actually occur, in lexicographic order.
pub fn ingest_reader<R: Read>(reader: R, rules: &[DiscretizationRule], full_grid: bool) -> Result<IngestReport> {
    if rules.is_empty() {
        return Err(Error::Config("at least one discretization column is required".into()));
    }
    for r in rules {
        r.validate()?;
    }
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = match rdr.headers() {
        Ok(h) => h.clone(),
        Err(_) => return Err(Error::EmptyDataset),
    };
    if headers.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let cols = rules
        .iter()
        .map(|r| {
            headers
                .iter()
                .position(|h| h.trim() == r.column)
                .ok_or_else(|| Error::Parse(format!("column '{}' not found in CSV header", r.column)))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut coded: Vec<Point> = Vec::new();
    let (mut rows_read, mut out_of_range, mut unparseable) = (0, 0, 0);
    let mut diagnostics = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        rows_read += 1;
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                unparseable += 1;
                diagnostics.push(format!("line {line}: {e}"));
                continue;
            }
        };
        let mut point = Vec::with_capacity(rules.len());
        let mut status = Ok(());
        for (rule, &c) in rules.iter().zip(&cols) {
            let Some(raw) = rec.get(c) else {
                status = Err(format!("line {line}: missing column '{}'", rule.column));
                break;
            };
            let Some(v) = parse_value(raw) else {
                status = Err(format!("line {line}: cannot parse '{raw}' in column '{}'", rule.column));
                break;
            };
            match rule.code(v) {
                Some(code) => point.push(code),
                None => {
                    status = Err(String::new());
                    break;
                }
            }
        }
        match status {
            Ok(()) => coded.push(point),
            Err(msg) if msg.is_empty() => out_of_range += 1,
            Err(msg) => {
                unparseable += 1;
                diagnostics.push(msg);
            }
        }
    }
    if coded.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let support = if full_grid {
        let mut points: Vec<Point> = vec![vec![]];
        for r in rules {
            points = points
                .into_iter()
                .flat_map(|p| {
                    r.codes().map(move |c| {
                        let mut q = p.clone();
                        q.push(c);
                        q
                    })
                })
                .collect();
        }
        Support::new(points)?
    } else {
        let present: BTreeSet<Point> = coded.iter().cloned().collect();
        Support::new(present.into_iter().collect())?
    };
    let support = Arc::new(support);
    let indices = coded
        .iter()
        .map(|p| support.index_of(p).expect("every coded point lies on the support"))
        .collect();
    let samples = SampleSet::new(support.clone(), indices)?;
    Ok(IngestReport {
        support,
        samples,
        rows_read,
        dropped_out_of_range: out_of_range,
        dropped_unparseable: unparseable,
        diagnostics,
    })
}
