//! Run configuration: TOML file, presets and command-line overrides.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use robsq::bart::BartConfig;
use robsq::estimators::{EstimatorConfig, PropensityMode};
use robsq::io::Format;
use robsq::sim::{RegimeTag, Scenario};
use robsq::uncertainty::{IntervalKind, UncertaintyMethod, UncertaintySpec, WithinVariance};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// m=200, burn-in 250, 1000 draws, D=200, 500 replicates.
    #[default]
    Full,
    /// m=50, burn-in 100, 200 draws, D=50, 100 replicates.
    Desk,
}

impl Preset {
    fn bart(self) -> BartConfig {
        match self {
            Preset::Full => BartConfig::default(),
            Preset::Desk => BartConfig::desk(),
        }
    }

    fn resamples(self) -> usize {
        match self {
            Preset::Full => 200,
            Preset::Desk => 50,
        }
    }

    fn replicates(self) -> usize {
        match self {
            Preset::Full => 500,
            Preset::Desk => 100,
        }
    }
}

/// Interval method, or none.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum UncertaintyChoice {
    None,
    Method(UncertaintyMethod),
}

impl FromStr for UncertaintyChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "none" {
            return Ok(UncertaintyChoice::None);
        }
        s.parse().map(UncertaintyChoice::Method).map_err(|_| {
            format!("unknown uncertainty method `{s}` (expected bootstrap, mi-mean, mi-draw or none)")
        })
    }
}

impl TryFrom<String> for UncertaintyChoice {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<UncertaintyChoice> for String {
    fn from(c: UncertaintyChoice) -> String {
        c.to_string()
    }
}

impl fmt::Display for UncertaintyChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UncertaintyChoice::None => f.write_str("none"),
            UncertaintyChoice::Method(m) => m.fmt(f),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BartOverrides {
    pub trees: Option<usize>,
    pub burn_in: Option<usize>,
    pub draws: Option<usize>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub k: Option<f64>,
    pub nu: Option<f64>,
    pub q: Option<f64>,
    pub min_node: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplineOverrides {
    pub degree: Option<usize>,
    pub knots: Option<usize>,
}

/// Model designs for `impute`; unset roles use main effects of every covariate.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelOverrides {
    pub propensity: Option<Vec<String>>,
    pub mean: Option<Vec<String>>,
    pub bart_propensity: Option<Vec<String>>,
    pub bart_mean: Option<Vec<String>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImputeFile {
    pub data: Option<PathBuf>,
    pub outcome: Option<String>,
    pub response: Option<String>,
    pub pipeline: Option<bool>,
    pub model: ModelOverrides,
}

/// Everything a config file may set.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub format: Option<Format>,
    pub preset: Option<Preset>,
    pub scenario: Option<Scenario>,
    pub n: Option<usize>,
    pub replicates: Option<usize>,
    pub methods: Option<Vec<String>>,
    pub regimes: Option<Vec<RegimeTag>>,
    pub uncertainty: Option<UncertaintyChoice>,
    pub resamples: Option<usize>,
    pub interval: Option<IntervalKind>,
    pub within: Option<WithinVariance>,
    pub clip: Option<f64>,
    pub propensity_mode: Option<PropensityMode>,
    pub bart: BartOverrides,
    pub spline: SplineOverrides,
    pub impute: ImputeFile,
}

pub fn read_file(path: &Path) -> Result<FileConfig, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

/// Flag value if given, else file value; logs when the flag overrides the file.
pub fn pick<T: fmt::Debug + PartialEq>(key: &str, flag: Option<T>, file: Option<T>) -> Option<T> {
    match (flag, file) {
        (Some(f), Some(c)) => {
            if f != c {
                log::info!("`{key}`: command-line value {f:?} overrides config value {c:?}");
            }
            Some(f)
        }
        (f, c) => f.or(c),
    }
}

/// Settings shared by `simulate` and `impute` after merging.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Common {
    pub seed: u64,
    pub output: PathBuf,
    pub format: Format,
    pub preset: Preset,
    pub methods: Vec<String>,
    pub uncertainty: Option<UncertaintySpec>,
    pub estimator: EstimatorConfig,
}

/// Command-line values for the common settings.
#[derive(Clone, Debug, Default)]
pub struct CommonFlags {
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub format: Option<Format>,
    pub preset: Option<Preset>,
    pub methods: Option<Vec<String>>,
    pub uncertainty: Option<UncertaintyChoice>,
    pub resamples: Option<usize>,
    pub interval: Option<IntervalKind>,
    pub trees: Option<usize>,
    pub burn_in: Option<usize>,
    pub draws: Option<usize>,
    pub knots: Option<usize>,
    pub clip: Option<f64>,
    pub propensity_mode: Option<PropensityMode>,
}

pub fn resolve_common(flags: CommonFlags, file: &FileConfig, default_methods: Vec<String>) -> Result<Common, String> {
    let preset = pick("preset", flags.preset, file.preset).unwrap_or_default();
    let mut bart = preset.bart();
    let b = &file.bart;
    if let Some(v) = pick("bart.trees", flags.trees, b.trees) {
        bart.trees = v;
    }
    if let Some(v) = pick("bart.burn_in", flags.burn_in, b.burn_in) {
        bart.burn_in = v;
    }
    if let Some(v) = pick("bart.draws", flags.draws, b.draws) {
        bart.draws = v;
    }
    bart.alpha = b.alpha.unwrap_or(bart.alpha);
    bart.beta = b.beta.unwrap_or(bart.beta);
    bart.k = b.k.unwrap_or(bart.k);
    bart.nu = b.nu.unwrap_or(bart.nu);
    bart.q = b.q.unwrap_or(bart.q);
    bart.min_node = b.min_node.unwrap_or(bart.min_node);

    let mut estimator = EstimatorConfig {
        bart,
        ..EstimatorConfig::default()
    };
    estimator.basis.degree = file.spline.degree.unwrap_or(estimator.basis.degree);
    if let Some(v) = pick("spline.knots", flags.knots, file.spline.knots) {
        estimator.basis.knots = v;
    }
    estimator.clip = pick("clip", flags.clip, file.clip);
    estimator.propensity_mode = pick("propensity_mode", flags.propensity_mode, file.propensity_mode).unwrap_or_default();
    estimator.validate().map_err(|e| e.to_string())?;

    let choice = pick("uncertainty", flags.uncertainty, file.uncertainty)
        .unwrap_or(UncertaintyChoice::Method(UncertaintyMethod::Bootstrap));
    let resamples = pick("resamples", flags.resamples, file.resamples).unwrap_or(preset.resamples());
    let interval = pick("interval", flags.interval, file.interval).unwrap_or_default();
    let uncertainty = match choice {
        UncertaintyChoice::None => None,
        UncertaintyChoice::Method(method) => {
            let spec = UncertaintySpec {
                method,
                resamples,
                interval,
                within: file.within.unwrap_or_default(),
            };
            spec.validate().map_err(|e| e.to_string())?;
            Some(spec)
        }
    };

    let methods = pick("methods", flags.methods, file.methods.clone()).unwrap_or(default_methods);
    if methods.is_empty() {
        return Err("no methods selected".into());
    }
    Ok(Common {
        seed: pick("seed", flags.seed, file.seed).unwrap_or(1),
        output: pick("output", flags.output, file.output.clone()).unwrap_or_else(|| PathBuf::from("-")),
        format: pick("format", flags.format, file.format).unwrap_or_default(),
        preset,
        methods,
        uncertainty,
        estimator,
    })
}

pub fn preset_replicates(preset: Preset) -> usize {
    preset.replicates()
}
