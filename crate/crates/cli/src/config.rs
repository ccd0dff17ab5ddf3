//! Run configuration: a TOML file overlaid by command-line flags.
//!
//! Every key is optional; anything left unset falls back to the library
//! defaults. Recognized keys:
//!
//! ```toml
//! input = "trial.csv"          # dataset (cram, split, diagnose)
//! output = "report.json"       # stdout when absent
//! format = "json"              # json | csv
//! golden = false               # omit the metadata block
//! seed = 0
//! alpha = 0.05
//! batches = 20
//! debias = false
//! estimand = "value_difference" # or policy_value
//! burn_in_min = 0
//! burn_out_min = 0
//! baseline = "none"            # none | all | const:P
//! threads = 8                  # simulate only
//!
//! [data]
//! outcome = "y"
//! treatment = "d"
//! propensity = "e"             # column name
//! constant_propensity = 0.5    # used instead of a propensity column
//! covariates = ["x1", "x2"]    # default: every other column
//! overlap = 0.01
//!
//! [learner]
//! name = "slearner_ridge"      # slearner_ridge | mlearner_ridge | constant | alternating
//! lambda = 0.1
//! penalize_intercept = true
//! policy = "none"              # policy emitted by `constant`; default: the baseline
//! stable = false
//! stable_c = 18.38             # default: ceil(0.8 T)^(1 + stable_delta)
//! stable_delta = 0.05
//!
//! [split]
//! train_fraction = 0.8
//!
//! [simulate]
//! dgp = "linear"               # linear | polynomial | null
//! p = 5
//! n = 500
//! replicates = 1000
//! methods = ["cram", "split_80_20"]
//! n_oracle = 1000000
//! records = false              # include per-replicate records in JSON
//!
//! [diagnose]
//! t_min = 1
//! bound = 18.38                # default: the stability constant C
//! ```
//!
//! Precedence is flag, then (for `threads`) `CRAMKIT_THREADS`, then file,
//! then default.

use std::path::{Path, PathBuf};

use cramkit::{
    CramError, CramOptions, CsvSchema, DgpSpec, Estimand, LearnerSpec, Method, OverlapConfig,
    Policy, Result, StabilityParams,
};
use serde::Deserialize;

use crate::args::Common;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub format: Option<Format>,
    pub golden: Option<bool>,
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
    pub batches: Option<usize>,
    pub debias: Option<bool>,
    pub estimand: Option<Estimand>,
    pub burn_in_min: Option<usize>,
    pub burn_out_min: Option<usize>,
    pub baseline: Option<String>,
    pub threads: Option<usize>,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub learner: LearnerSection,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub diagnose: DiagnoseSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub outcome: Option<String>,
    pub treatment: Option<String>,
    pub propensity: Option<String>,
    pub constant_propensity: Option<f64>,
    pub covariates: Option<Vec<String>>,
    pub overlap: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerSection {
    pub name: Option<String>,
    pub lambda: Option<f64>,
    pub penalize_intercept: Option<bool>,
    pub policy: Option<String>,
    pub stable: Option<bool>,
    pub stable_c: Option<f64>,
    pub stable_delta: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    pub train_fraction: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub dgp: Option<String>,
    pub p: Option<usize>,
    pub n: Option<usize>,
    pub replicates: Option<usize>,
    pub methods: Option<Vec<String>>,
    pub n_oracle: Option<usize>,
    pub records: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseSection {
    pub t_min: Option<usize>,
    pub bound: Option<f64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CramError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        toml::from_str(&text)
            .map_err(|e| CramError::Config(format!("config {}: {e}", path.display())))
    }
}

/// Dataset location and column layout.
#[derive(Debug, Clone)]
pub struct DataConfig {
    pub input: PathBuf,
    pub schema: CsvSchema,
    pub constant_propensity: Option<f64>,
    pub overlap: OverlapConfig,
}

/// Fully resolved settings shared by every command.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub format: Format,
    pub golden: bool,
    pub options: CramOptions,
    pub baseline: Policy,
    pub learner: LearnerSpec,
    pub learner_name: String,
    pub stability: Option<StabilityParams>,
    pub threads: Option<usize>,
    file: FileConfig,
    data: DataSection,
}

pub fn parse_baseline(text: &str) -> Result<Policy> {
    match text.trim() {
        "none" | "treat_none" => Ok(Policy::treat_none()),
        "all" | "treat_all" => Ok(Policy::treat_all()),
        other => match other.strip_prefix("const:") {
            Some(p) => {
                let p: f64 = p
                    .parse()
                    .map_err(|_| CramError::Config(format!("bad constant policy `{other}`")))?;
                Policy::constant(p)
            }
            None => Err(CramError::Config(format!(
                "baseline must be none, all or const:P, got `{other}`"
            ))),
        },
    }
}

impl RunConfig {
    pub fn resolve(common: &Common) -> Result<Self> {
        let mut file = match &common.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };

        let mut options = CramOptions {
            num_batches: common
                .batches
                .or(file.batches)
                .unwrap_or(cramkit::cram::DEFAULT_BATCHES),
            seed: common.seed.or(file.seed).unwrap_or(0),
            alpha: common
                .alpha
                .or(file.alpha)
                .unwrap_or(cramkit::cram::DEFAULT_ALPHA),
            debias_final: common.debias || file.debias.unwrap_or(false),
            estimand: match common.estimand.as_deref() {
                Some(text) => parse_estimand(text)?,
                None => file.estimand.unwrap_or_default(),
            },
            ..CramOptions::default()
        };
        options.burn_in_min = file.burn_in_min.unwrap_or(0);
        options.burn_out_min = file.burn_out_min.unwrap_or(0);
        options.validate()?;

        let baseline = match common.baseline.as_deref().or(file.baseline.as_deref()) {
            Some(text) => parse_baseline(text)?,
            None => Policy::treat_none(),
        };

        let ls = &file.learner;
        let learner_name = common
            .learner
            .clone()
            .or_else(|| ls.name.clone())
            .unwrap_or_else(|| "slearner_ridge".into());
        let lambda = common
            .lambda
            .or(ls.lambda)
            .unwrap_or(cramkit::learner::DEFAULT_LAMBDA);
        let penalize_intercept = ls.penalize_intercept.unwrap_or(true);
        let inner = match learner_name.as_str() {
            "slearner_ridge" => LearnerSpec::SlearnerRidge {
                lambda,
                penalize_intercept,
            },
            "mlearner_ridge" => LearnerSpec::MlearnerRidge {
                lambda,
                penalize_intercept,
            },
            "constant" => LearnerSpec::Constant {
                policy: match &ls.policy {
                    Some(text) => parse_baseline(text)?,
                    None => baseline.clone(),
                },
            },
            "alternating" => LearnerSpec::Alternating,
            other => {
                return Err(CramError::Config(format!(
                    "unknown learner `{other}` (expected slearner_ridge, mlearner_ridge, constant or alternating)"
                )))
            }
        };

        let stable = common.stable || ls.stable.unwrap_or(false);
        let stability = if stable {
            let defaults = StabilityParams::for_batches(options.num_batches);
            let delta = common
                .stable_delta
                .or(ls.stable_delta)
                .unwrap_or(defaults.delta());
            // default C keeps the first ceil(0.8 T) steps unmixed for any delta
            let c = common.stable_c.or(ls.stable_c).unwrap_or_else(|| {
                let free = (0.8 * options.num_batches as f64).ceil().max(1.0);
                free.powf(1.0 + delta)
            });
            Some(StabilityParams::new(c, delta)?)
        } else {
            None
        };
        let learner = match stability {
            Some(params) => LearnerSpec::Stable {
                inner: Box::new(inner),
                params,
            },
            None => inner,
        };

        let threads = common.threads.or(file.threads);
        if threads == Some(0) {
            return Err(CramError::Config("threads must be at least 1".into()));
        }

        let data = std::mem::take(&mut file.data);
        Ok(Self {
            input: common.input.clone().or_else(|| file.input.clone()),
            output: common.output.clone().or_else(|| file.output.clone()),
            format: common.format.or(file.format).unwrap_or(Format::Json),
            golden: common.golden || file.golden.unwrap_or(false),
            options,
            baseline,
            learner,
            learner_name,
            stability,
            threads,
            file,
            data,
        })
    }

    pub fn data(&self) -> Result<DataConfig> {
        let input = self
            .input
            .clone()
            .ok_or_else(|| CramError::Config("no input dataset (use --input or `input`)".into()))?;
        if !input.is_file() {
            return Err(CramError::Config(format!(
                "input file {} does not exist",
                input.display()
            )));
        }
        let d = &self.data;
        let constant_propensity = d.constant_propensity;
        let propensity = match (&d.propensity, constant_propensity) {
            (Some(name), _) => Some(name.clone()),
            (None, Some(_)) => None,
            (None, None) => Some("e".into()),
        };
        Ok(DataConfig {
            input,
            schema: CsvSchema {
                outcome: d.outcome.clone().unwrap_or_else(|| "y".into()),
                treatment: d.treatment.clone().unwrap_or_else(|| "d".into()),
                propensity,
                covariates: d.covariates.clone(),
            },
            constant_propensity,
            overlap: match d.overlap {
                Some(c) => OverlapConfig::new(c)?,
                None => OverlapConfig::default(),
            },
        })
    }

    pub fn train_fraction(&self, flag: Option<f64>) -> f64 {
        flag.or(self.file.split.train_fraction)
            .unwrap_or(cramkit::cram::DEFAULT_TRAIN_FRACTION)
    }

    pub fn simulate(&self) -> &SimulateSection {
        &self.file.simulate
    }

    pub fn diagnose(&self) -> &DiagnoseSection {
        &self.file.diagnose
    }
}

pub fn parse_estimand(text: &str) -> Result<Estimand> {
    match text {
        "value_difference" => Ok(Estimand::ValueDifference),
        "policy_value" => Ok(Estimand::PolicyValue),
        other => Err(CramError::Config(format!(
            "estimand must be value_difference or policy_value, got `{other}`"
        ))),
    }
}

pub fn parse_dgp(name: &str, p: usize) -> Result<DgpSpec> {
    match name {
        "linear" => Ok(DgpSpec::linear(p)),
        "polynomial" => Ok(DgpSpec::polynomial(p)),
        "null" => Ok(DgpSpec::null(p)),
        other => Err(CramError::Config(format!(
            "unknown dgp `{other}` (expected linear, polynomial or null)"
        ))),
    }
}

pub fn parse_methods(names: &[String]) -> Result<Vec<Method>> {
    names
        .iter()
        .flat_map(|s| s.split(','))
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(Method::parse)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn baseline_forms() {
        assert_eq!(parse_baseline("none").unwrap(), Policy::treat_none());
        assert_eq!(parse_baseline("all").unwrap(), Policy::treat_all());
        assert_eq!(
            parse_baseline("const:0.25").unwrap(),
            Policy::constant(0.25).unwrap()
        );
        assert!(parse_baseline("const:1.5").is_err());
        assert!(parse_baseline("some").is_err());
    }

    #[test]
    fn methods_accept_commas() {
        let m = parse_methods(&["cram,split_80_20".into()]).unwrap();
        assert_eq!(m, vec![Method::Cram, Method::Split8020]);
        assert!(parse_methods(&["bogus".into()]).is_err());
    }

    #[test]
    fn file_rejects_unknown_keys() {
        assert!(toml::from_str::<FileConfig>("bacthes = 3").is_err());
        let cfg: FileConfig =
            toml::from_str("batches = 3\n[learner]\nname = \"constant\"").unwrap();
        assert_eq!(cfg.batches, Some(3));
        assert_eq!(cfg.learner.name.as_deref(), Some("constant"));
    }
}
