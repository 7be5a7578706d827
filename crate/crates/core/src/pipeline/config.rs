use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PipelineError;
use crate::aggregation::RuleKind;
use crate::conformal::{default_gamma_grid, SourceSpec};
use crate::dataset::{CsvSchema, SyntheticConfig};
use crate::models::BaseLearner;

/// Top-level run configuration, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub dataset: DatasetSection,
    /// Named base learners; `run.base_models` picks among them.
    #[serde(default = "default_models")]
    pub models: BTreeMap<String, BaseLearner>,
    #[serde(default)]
    pub conformal: ConformalSection,
    #[serde(default)]
    pub evaluation: EvaluationSection,
    #[serde(default)]
    pub gridsearch: Option<GridSearchSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_hours")]
    pub hours: Vec<u8>,
    /// Target coverages `1 - alpha`.
    #[serde(default = "default_levels")]
    pub levels: Vec<f64>,
    /// Rolling window sizes in days, largest first by convention.
    #[serde(default = "default_windows")]
    pub windows: Vec<usize>,
    #[serde(default = "default_cal_fracs")]
    pub cal_fracs: Vec<f64>,
    pub methods: Vec<MethodSpec>,
    #[serde(default = "default_base_models")]
    pub base_models: Vec<String>,
    /// First forecast day.
    pub test_start: NaiveDate,
    /// Last forecast day (inclusive); defaults to the end of the data.
    #[serde(default)]
    pub test_end: Option<NaiveDate>,
    /// First day of the "post" reporting period.
    #[serde(default)]
    pub split_date: Option<NaiveDate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Price CSV; the synthetic generator is used when absent.
    #[serde(default)]
    pub csv: Option<PathBuf>,
    #[serde(default)]
    pub schema: CsvSchema,
    /// Day lags of the price features.
    #[serde(default = "default_lags")]
    pub lags: Vec<usize>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            csv: None,
            schema: CsvSchema::default(),
            lags: default_lags(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    #[serde(default)]
    pub synthetic: SyntheticConfig,
}

/// Calibration scheme underneath the ACI-type methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptiveSource {
    Osscp,
    Horizon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConformalSection {
    /// Learning rate of a bare `aci` method.
    pub aci_gamma: f64,
    /// Expert learning rates of AgACI.
    pub gammas: Vec<f64>,
    /// OSSCP refit period in steps; 0 never refits.
    pub refit_every: usize,
    pub horizon: usize,
    pub adaptive_source: AdaptiveSource,
    pub rule: RuleKind,
    pub gradient_trick: bool,
}

impl Default for ConformalSection {
    fn default() -> Self {
        Self {
            aci_gamma: 0.01,
            gammas: default_gamma_grid(),
            refit_every: 1,
            horizon: 1,
            adaptive_source: AdaptiveSource::Osscp,
            rule: RuleKind::Boa,
            gradient_trick: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub block_len: usize,
    pub n_boot: usize,
    pub ci: (f64, f64),
    pub format: ReportFormat,
    pub plot_data: bool,
    /// Also write per-day predictions and weight histories.
    pub write_predictions: bool,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            block_len: 30,
            n_boot: 500,
            ci: (0.05, 0.95),
            format: ReportFormat::Csv,
            plot_data: true,
            write_predictions: true,
        }
    }
}

/// Candidate grids for `gridsearch`. Grids apply to the base model of the
/// same name; an absent grid keeps that field at its configured value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSearchSection {
    pub validation_start: NaiveDate,
    /// Defaults to the day before `run.test_start`.
    #[serde(default)]
    pub validation_end: Option<NaiveDate>,
    /// Training days before the validation range; all available if absent.
    #[serde(default)]
    pub train_days: Option<usize>,
    #[serde(default)]
    pub grids: BTreeMap<String, CandidateGrid>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CandidateGrid {
    pub lambda: Vec<f64>,
    pub n_estimators: Vec<usize>,
    pub max_depth: Vec<usize>,
    pub learning_rate: Vec<f64>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_hours() -> Vec<u8> {
    vec![3, 8, 13, 18, 23]
}

fn default_levels() -> Vec<f64> {
    vec![0.6, 0.7, 0.8, 0.9, 0.95, 0.98]
}

fn default_windows() -> Vec<usize> {
    vec![1460, 1095, 730, 365, 270, 180, 90]
}

fn default_cal_fracs() -> Vec<f64> {
    vec![0.25, 0.5, 0.75]
}

fn default_base_models() -> Vec<String> {
    vec!["linear_qr".into()]
}

fn default_lags() -> Vec<usize> {
    vec![1, 7]
}

fn default_models() -> BTreeMap<String, BaseLearner> {
    BTreeMap::from([(
        "linear_qr".to_string(),
        BaseLearner::Linear {
            lambda: 0.0,
            options: Default::default(),
        },
    )])
}

/// A method entry of `run.methods`.
///
/// Written as strings: `raw_qr`, `osscp`, `osscp_horizon`, `aci` or
/// `aci:<gamma>`, `agaci`, and `agg:<m>` / `uniform:<m>` for BOA or uniform
/// averaging of method `<m>` run on every base model.
#[derive(Debug, Clone, PartialEq)]
pub enum MethodSpec {
    RawQr,
    Osscp,
    OsscpHorizon,
    Aci { gamma: Option<f64> },
    AgAci,
    Aggregate(Box<MethodSpec>),
    Uniform(Box<MethodSpec>),
}

impl MethodSpec {
    pub fn is_ensemble(&self) -> bool {
        matches!(self, Self::Aggregate(_) | Self::Uniform(_))
    }

    /// Calibration scheme the method runs on.
    pub(crate) fn source_spec(
        &self,
        window: usize,
        cal_frac: f64,
        c: &ConformalSection,
    ) -> SourceSpec {
        let osscp = SourceSpec::Osscp {
            window,
            cal_frac,
            refit_every: c.refit_every,
        };
        let horizon = SourceSpec::Horizon {
            window,
            cal_frac,
            horizon: c.horizon,
        };
        match self {
            Self::OsscpHorizon => horizon,
            Self::Aci { .. } | Self::AgAci if c.adaptive_source == AdaptiveSource::Horizon => horizon,
            _ => osscp,
        }
    }
}

impl fmt::Display for MethodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::RawQr => f.write_str("raw_qr"),
            Self::Osscp => f.write_str("osscp"),
            Self::OsscpHorizon => f.write_str("osscp_horizon"),
            Self::Aci { gamma: None } => f.write_str("aci"),
            Self::Aci { gamma: Some(g) } => write!(f, "aci:{g}"),
            Self::AgAci => f.write_str("agaci"),
            Self::Aggregate(m) => write!(f, "agg:{m}"),
            Self::Uniform(m) => write!(f, "uniform:{m}"),
        }
    }
}

impl FromStr for MethodSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        if let Some(inner) = s.strip_prefix("agg:").or_else(|| s.strip_prefix("uniform:")) {
            let m: MethodSpec = inner.parse()?;
            if m.is_ensemble() {
                return Err(format!("nested ensembles are not supported: `{s}`"));
            }
            let m = Box::new(m);
            return Ok(if s.starts_with("agg:") {
                Self::Aggregate(m)
            } else {
                Self::Uniform(m)
            });
        }
        match s {
            "raw_qr" => Ok(Self::RawQr),
            "osscp" => Ok(Self::Osscp),
            "osscp_horizon" => Ok(Self::OsscpHorizon),
            "aci" => Ok(Self::Aci { gamma: None }),
            "agaci" => Ok(Self::AgAci),
            _ => match s.strip_prefix("aci:") {
                Some(g) => match g.parse::<f64>() {
                    Ok(g) if g >= 0.0 && g.is_finite() => Ok(Self::Aci { gamma: Some(g) }),
                    _ => Err(format!("invalid ACI learning rate in `{s}`")),
                },
                None => Err(format!("unknown method `{s}`")),
            },
        }
    }
}

impl Serialize for MethodSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MethodSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub hours: Option<Vec<u8>>,
    pub levels: Option<Vec<f64>>,
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, PipelineError> {
        toml::from_str(s).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        // relative data paths are taken from the config's directory
        if let (Some(csv), Some(dir)) = (&cfg.data.csv, path.parent()) {
            if csv.is_relative() {
                cfg.data.csv = Some(dir.join(csv));
            }
        }
        Ok(cfg)
    }

    /// Applies overrides. A seed override reseeds both the synthetic panel
    /// and the run.
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.run.seed = seed;
            self.dataset.synthetic.seed = seed;
        }
        if let Some(dir) = &o.output_dir {
            self.run.output_dir.clone_from(dir);
        }
        if let Some(h) = &o.hours {
            self.run.hours.clone_from(h);
        }
        if let Some(l) = &o.levels {
            self.run.levels.clone_from(l);
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex digest of the canonical config, output location excluded.
    pub fn run_id(&self) -> String {
        let mut c = self.clone();
        c.run.output_dir = PathBuf::new();
        let digest = Sha256::digest(c.to_toml_string().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let err = |m: String| Err(PipelineError::Config(m));
        let r = &self.run;
        if r.hours.is_empty() || r.levels.is_empty() || r.methods.is_empty() {
            return err("hours, levels and methods must be non-empty".into());
        }
        if r.windows.is_empty() || r.cal_fracs.is_empty() || r.base_models.is_empty() {
            return err("windows, cal_fracs and base_models must be non-empty".into());
        }
        if let Some(h) = r.hours.iter().find(|h| **h > 23) {
            return err(format!("hour {h} outside 0..=23"));
        }
        if let Some(l) = r.levels.iter().find(|l| !(**l > 0.0 && **l < 1.0)) {
            return err(format!("target level {l} outside (0, 1)"));
        }
        for list in [&r.levels, &r.cal_fracs] {
            let mut s = list.clone();
            s.sort_by(f64::total_cmp);
            if s.windows(2).any(|w| w[0] == w[1]) {
                return err("levels and cal_fracs must not repeat".into());
            }
        }
        let mut names: Vec<String> = r.methods.iter().map(ToString::to_string).collect();
        names.sort();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return err("methods must not repeat".into());
        }
        for m in &r.base_models {
            if !self.models.contains_key(m) {
                return err(format!("base model `{m}` has no [models.{m}] entry"));
            }
        }
        for &w in &r.windows {
            for &f in &r.cal_fracs {
                for m in &r.methods {
                    let spec = match m {
                        MethodSpec::Aggregate(inner) | MethodSpec::Uniform(inner) => {
                            inner.source_spec(w, f, &self.conformal)
                        }
                        _ => m.source_spec(w, f, &self.conformal),
                    };
                    spec.sizes().map_err(|e| PipelineError::Config(format!("window {w}, cal_frac {f}: {e}")))?;
                }
            }
        }
        if self.conformal.gammas.is_empty() {
            return err("conformal.gammas must be non-empty".into());
        }
        if let Some(end) = r.test_end {
            if end < r.test_start {
                return err("test_end precedes test_start".into());
            }
        }
        if let Some(split) = r.split_date {
            let after_end = r.test_end.is_some_and(|e| split > e);
            if split <= r.test_start || after_end {
                return err(format!("split_date {split} must fall strictly inside the test range"));
            }
        }
        let e = &self.evaluation;
        if e.block_len == 0 || e.n_boot == 0 || !(0.0 <= e.ci.0 && e.ci.0 < e.ci.1 && e.ci.1 <= 1.0) {
            return err("evaluation needs block_len >= 1, n_boot >= 1 and 0 <= ci.0 < ci.1 <= 1".into());
        }
        if self.data.csv.is_none() {
            self.dataset
                .synthetic
                .validate()
                .map_err(|e| PipelineError::Config(e.to_string()))?;
        }
        Ok(())
    }
}
