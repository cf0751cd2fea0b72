//! TOML experiment configuration.
//!
//! ```toml
//! name = "default"
//! n_grid = [100, 1000]
//! seeds = [1, 2, 3]
//! output = "results/default.csv"      # optional, relative to the config file
//!
//! [support]
//! kind = "line"                       # line { size } | grid { sizes } | points { points }
//! size = 3
//!
//! [truth]
//! kind = "explicit"                   # explicit { mass } | lending
//! mass = [0.5, 0.3, 0.2]
//!
//! [[channel]]
//! label = "udd"
//! kind = "matrix"                     # identity | ldp { epsilon, norm } | matrix { rows | file }
//! rows = [[0.9, 0.05, 0.05], [0.05, 0.9, 0.05], [0.05, 0.05, 0.9]]
//!
//! [loss]
//! kind = "table"                      # table { h } | regression { lower, upper }
//! h = [[0, 2, 4], [1, 0, 2], [3, 1, 0]]
//!
//! [radius]
//! kind = "schedule"                   # fixed { epsilon } | alpha { alpha, scale } | schedule { scale }
//!
//! [coverage]                          # optional
//! trials = 1000
//! alphas = [0.05]
//! n = [200]
//! ```

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::ambiguity::{radius_tv, Significance};
use crate::channel::NoiseChannel;
use crate::dist::{DiscreteDistribution, Norm, Support};
use crate::dro::LossModel;
use crate::error::{Error, Result};
use crate::ingest::DiscretizationRule;

pub const MAX_SUPPORT: usize = 256;
pub const MAX_SAMPLES: u64 = 1_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SupportConfig {
    Line { size: usize },
    Grid { sizes: Vec<i64> },
    Points { points: Vec<Vec<i64>> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TruthConfig {
    Explicit { mass: Vec<f64> },
    /// Synthetic credit / loan / rate distribution on a 3-D code grid.
    Lending,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ChannelKind {
    Identity,
    Ldp {
        epsilon: f64,
        #[serde(default)]
        norm: Norm,
    },
    Matrix {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rows: Option<Vec<Vec<f64>>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        file: Option<PathBuf>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub label: String,
    #[serde(flatten)]
    pub kind: ChannelKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum LossConfig {
    Table { h: Vec<Vec<f64>> },
    Regression { lower: Vec<f64>, upper: Vec<f64> },
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum RadiusConfig {
    Fixed {
        epsilon: f64,
    },
    /// `scale * radius_tv(|Xi'|, alpha, N)`.
    Alpha {
        alpha: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    /// `scale * radius_tv(|Xi'|, 1/N^2, N)`.
    Schedule {
        #[serde(default = "one")]
        scale: f64,
    },
}

impl RadiusConfig {
    pub fn significance(&self) -> Option<Significance> {
        match self {
            RadiusConfig::Fixed { .. } => None,
            RadiusConfig::Alpha { alpha, .. } => Some(Significance::Fixed(*alpha)),
            RadiusConfig::Schedule { .. } => Some(Significance::InverseSquare),
        }
    }

    /// Radius and the significance level it was sized for, if any.
    pub fn radius(&self, cardinality: usize, n: u64) -> (f64, Option<f64>) {
        match self {
            RadiusConfig::Fixed { epsilon } => (*epsilon, None),
            RadiusConfig::Alpha { alpha, scale } => (scale * radius_tv(cardinality, *alpha, n), Some(*alpha)),
            RadiusConfig::Schedule { scale } => {
                let alpha = Significance::InverseSquare.alpha(n);
                (scale * radius_tv(cardinality, alpha, n), Some(alpha))
            }
        }
    }

    /// Same policy with a different significance level.
    pub fn with_alpha(&self, alpha: f64) -> RadiusConfig {
        let scale = match self {
            RadiusConfig::Alpha { scale, .. } | RadiusConfig::Schedule { scale } => *scale,
            RadiusConfig::Fixed { .. } => 1.0,
        };
        RadiusConfig::Alpha { alpha, scale }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoverageConfig {
    pub trials: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alphas: Option<Vec<f64>>,
    /// Sample sizes for the coverage run; defaults to `n_grid`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<Vec<u64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestConfig {
    /// Use the full declared code grid as support instead of the observed codes.
    #[serde(default = "yes")]
    pub full_grid: bool,
    pub column: Vec<DiscretizationRule>,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub n_grid: Vec<u64>,
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub support: SupportConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<TruthConfig>,
    pub channel: Vec<ChannelConfig>,
    pub loss: LossConfig,
    pub radius: RadiusConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage: Option<CoverageConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ingest: Option<IngestConfig>,
}

fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks the invariants that do not need the file system.
    pub fn validate(&self) -> Result<()> {
        if self.n_grid.is_empty() {
            return config_err("n_grid must not be empty");
        }
        if self.n_grid[0] == 0 || self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return config_err("n_grid must be positive and strictly increasing");
        }
        if *self.n_grid.last().unwrap() > MAX_SAMPLES {
            return config_err(format!("sample sizes are capped at {MAX_SAMPLES}"));
        }
        if self.seeds.is_empty() || self.seeds.iter().collect::<HashSet<_>>().len() != self.seeds.len() {
            return config_err("seeds must be a non-empty list of distinct values");
        }
        if self.channel.is_empty() {
            return config_err("at least one [[channel]] is required");
        }
        let labels: HashSet<&str> = self.channel.iter().map(|c| c.label.as_str()).collect();
        if labels.len() != self.channel.len() || labels.contains("") {
            return config_err("channel labels must be non-empty and distinct");
        }
        for c in &self.channel {
            if let ChannelKind::Matrix { rows, file } = &c.kind {
                if rows.is_some() == file.is_some() {
                    return config_err(format!("channel '{}': give exactly one of rows or file", c.label));
                }
            }
        }
        match &self.radius {
            RadiusConfig::Fixed { epsilon } if !(*epsilon >= 0.0 && epsilon.is_finite()) => {
                return config_err("fixed radius must be finite and >= 0")
            }
            RadiusConfig::Alpha { alpha, .. } if !(*alpha > 0.0 && *alpha < 1.0) => {
                return config_err("alpha must lie in (0, 1)")
            }
            RadiusConfig::Alpha { scale, .. } | RadiusConfig::Schedule { scale } if !(*scale > 0.0) => {
                return config_err("radius scale must be positive")
            }
            _ => {}
        }
        if let Some(cov) = &self.coverage {
            if cov.trials == 0 {
                return config_err("coverage.trials must be positive");
            }
            if let Some(a) = &cov.alphas {
                if a.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
                    return config_err("coverage.alphas must lie in (0, 1)");
                }
            }
            if let Some(n) = &cov.n {
                if n.is_empty() || n.iter().any(|&v| v == 0 || v > MAX_SAMPLES) {
                    return config_err("coverage.n must hold sample sizes in [1, 1e6]");
                }
            }
        }
        Ok(())
    }
}

/// A configuration with its supports, channels and model built.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub config: ExperimentConfig,
    pub base_dir: PathBuf,
    pub support: Arc<Support>,
    pub truth: Option<DiscreteDistribution>,
    pub channels: Vec<(String, Arc<NoiseChannel>)>,
    pub model: LossModel,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let config = ExperimentConfig::from_toml(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Scenario::build(config, &base)
    }

    pub fn build(config: ExperimentConfig, base_dir: &Path) -> Result<Self> {
        config.validate()?;
        let support = Arc::new(match &config.support {
            SupportConfig::Line { size } => Support::line(*size)?,
            SupportConfig::Grid { sizes } => Support::grid(sizes)?,
            SupportConfig::Points { points } => Support::new(points.clone())?,
        });
        if support.len() > MAX_SUPPORT {
            return config_err(format!("support has {} points, limit is {MAX_SUPPORT}", support.len()));
        }
        let truth = match &config.truth {
            None => None,
            Some(TruthConfig::Explicit { mass }) => Some(DiscreteDistribution::new(support.clone(), mass.clone())?),
            Some(TruthConfig::Lending) => Some(lending_truth(support.clone())?),
        };
        let mut channels = Vec::new();
        for c in &config.channel {
            let ch = match &c.kind {
                ChannelKind::Identity => NoiseChannel::identity(support.clone()),
                ChannelKind::Ldp { epsilon, norm } => NoiseChannel::ldp(support.clone(), *epsilon, *norm)?,
                ChannelKind::Matrix { rows: Some(rows), .. } => {
                    NoiseChannel::from_rows(support.clone(), support.clone(), rows)?
                }
                ChannelKind::Matrix { file: Some(file), .. } => {
                    let path = base_dir.join(file);
                    let f = std::fs::File::open(&path)
                        .map_err(|e| Error::Config(format!("channel file {}: {e}", path.display())))?;
                    let ch = NoiseChannel::read_csv(f)?;
                    if ch.input_support().points() != support.points() {
                        return config_err(format!(
                            "channel file {} is defined on a different clean support",
                            path.display()
                        ));
                    }
                    ch
                }
                ChannelKind::Matrix { .. } => unreachable!("validated"),
            };
            if ch.output_support().len() > MAX_SUPPORT {
                return config_err(format!("channel '{}' has too many observed points", c.label));
            }
            channels.push((c.label.clone(), Arc::new(ch)));
        }
        let model = match &config.loss {
            LossConfig::Table { h } => LossModel::table(support.clone(), h.clone())?,
            LossConfig::Regression { lower, upper } => {
                let m = LossModel::regression(lower.clone(), upper.clone())?;
                if lower.len() != support.dim() {
                    return config_err(format!(
                        "regression box has {} sides, support points have {} coordinates",
                        lower.len(),
                        support.dim()
                    ));
                }
                m
            }
        };
        Ok(Scenario {
            config,
            base_dir: base_dir.to_path_buf(),
            support,
            truth,
            channels,
            model,
        })
    }

    pub fn truth(&self) -> Result<&DiscreteDistribution> {
        self.truth
            .as_ref()
            .ok_or_else(|| Error::Config("this run needs a [truth] section".into()))
    }

    pub fn channel(&self, label: Option<&str>) -> Result<&(String, Arc<NoiseChannel>)> {
        match label {
            None => Ok(&self.channels[0]),
            Some(l) => self
                .channels
                .iter()
                .find(|(name, _)| name == l)
                .ok_or_else(|| Error::Config(format!("no channel labelled '{l}'"))),
        }
    }

    pub fn output_path(&self) -> Option<PathBuf> {
        self.config.output.as_ref().map(|p| self.base_dir.join(p))
    }
}

/// Synthetic lending data on `(credit, loan, rate)` codes: credit is
/// centered on the middle code, larger loans are rarer, and the rate code
/// falls with credit and rises with loan size, with Gaussian spread 0.5.
pub fn lending_truth(support: Arc<Support>) -> Result<DiscreteDistribution> {
    if support.dim() != 3 {
        return Err(Error::Config("the lending truth needs 3-D (credit, loan, rate) points".into()));
    }
    let weights = support
        .points()
        .iter()
        .map(|p| {
            let (c, l, r) = (p[0] as f64, p[1] as f64, p[2] as f64);
            let mean_rate = 7.0 - 1.5 * (c - 1.0) + 0.5 * (l - 1.0);
            (-0.5 * ((c - 3.0) / 1.3).powi(2) - 0.2 * (l - 1.0) - 0.5 * ((r - mean_rate) / 0.5).powi(2)).exp()
        })
        .collect();
    DiscreteDistribution::from_weights(support, weights)
}
