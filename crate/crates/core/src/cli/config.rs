//! Run configuration: one flat JSON document whose keys default to a
//! preset.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::DataSchema;
use crate::error::{Error, Result};
use crate::losses::FairnessLoss;
use crate::model::Architecture;
use crate::ndcore::Activation;
use crate::optim::OptimizerKind;
use crate::trainer::{Mode, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Adult,
    Health,
}

impl Preset {
    pub fn architecture(self) -> Architecture {
        match self {
            Preset::Adult => Architecture::adult(),
            Preset::Health => Architecture::health(),
        }
    }

    pub fn schema(self) -> DataSchema {
        match self {
            Preset::Adult => DataSchema::adult(),
            Preset::Health => DataSchema::health(),
        }
    }

    /// Default data files, relative to the data root.
    fn files(self) -> (&'static str, Option<&'static str>) {
        match self {
            Preset::Adult => ("adult/adult_train.csv", Some("adult/adult_test.csv")),
            Preset::Health => ("health/health_train.csv", None),
        }
    }

    fn test_fraction(self) -> f64 {
        match self {
            Preset::Adult => 0.2,
            Preset::Health => 0.21,
        }
    }

    pub fn default_eta(self) -> f64 {
        100.0
    }
}

/// Directory the preset data paths are resolved against: `FAIRBINN_DATA`,
/// else `./data` when present, else the repository's `data/`.
pub fn data_root() -> PathBuf {
    if let Some(p) = std::env::var_os("FAIRBINN_DATA") {
        return PathBuf::from(p);
    }
    let local = PathBuf::from("data");
    if local.is_dir() {
        return local;
    }
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

/// Fully resolved configuration; serialized verbatim into run manifests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Option<Preset>,
    pub architecture: Architecture,
    /// Overrides the data-derived input width (lipaudit without data).
    pub input_width: Option<usize>,
    pub train_path: PathBuf,
    pub test_path: Option<PathBuf>,
    pub test_fraction: f64,
    pub split_seed: u64,
    pub schema: DataSchema,
    pub train: TrainConfig,
    pub etas: Vec<f64>,
    pub seeds: Vec<u64>,
    pub jobs: usize,
    pub lip_samples: usize,
}

/// Every key a config file may set. Unset keys come from the preset.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    preset: Option<Preset>,
    layers_before: Option<usize>,
    fairness_layers: Option<usize>,
    layers_after: Option<usize>,
    hidden_width: Option<usize>,
    activation: Option<String>,
    input_width: Option<usize>,
    train_path: Option<PathBuf>,
    test_path: Option<PathBuf>,
    test_fraction: Option<f64>,
    split_seed: Option<u64>,
    label_column: Option<String>,
    positive_label: Option<String>,
    sensitive_column: Option<String>,
    categorical_columns: Option<Vec<String>>,
    continuous_columns: Option<Vec<String>>,
    drop_columns: Option<Vec<String>>,
    sensitive_as_feature: Option<bool>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    lr_accuracy: Option<f64>,
    lr_fairness: Option<f64>,
    eta: Option<f64>,
    lambda: Option<f64>,
    seed: Option<u64>,
    fairness_loss: Option<FairnessLoss>,
    mode: Option<Mode>,
    optimizer: Option<OptimizerKind>,
    etas: Option<Vec<f64>>,
    seeds: Option<Vec<u64>>,
    jobs: Option<usize>,
    lip_samples: Option<usize>,
}

pub const DEFAULT_SWEEP_ETAS: [f64; 4] = [1.0, 100.0, 1000.0, 6000.0];
pub const DEFAULT_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn required<T>(v: Option<T>, key: &str) -> Result<T> {
    v.ok_or_else(|| Error::Config(format!("missing key `{key}` (no preset to default it from)")))
}

impl RunConfig {
    pub fn preset(p: Preset) -> Self {
        let root = data_root();
        let (train, test) = p.files();
        Self {
            preset: Some(p),
            architecture: p.architecture(),
            input_width: None,
            train_path: root.join(train),
            test_path: test.map(|t| root.join(t)),
            test_fraction: p.test_fraction(),
            split_seed: 0,
            schema: p.schema(),
            train: TrainConfig {
                eta: p.default_eta(),
                ..TrainConfig::default()
            },
            etas: DEFAULT_SWEEP_ETAS.to_vec(),
            seeds: DEFAULT_SEEDS.to_vec(),
            jobs: 1,
            lip_samples: 1000,
        }
    }

    /// Parses a config document. `preset` (from the command line) wins over
    /// the document's own `preset` key. Relative paths are resolved against
    /// `base_dir`.
    ///
    /// A run manifest is accepted too: its `config` object is used.
    pub fn from_json_str(text: &str, preset: Option<Preset>, base_dir: &Path) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("config is not valid JSON: {e}")))?;
        if let Some(cfg) = value.get("config").filter(|_| value.get("tool").is_some()) {
            let mut rc: RunConfig = serde_json::from_value(cfg.clone())
                .map_err(|e| Error::Config(format!("manifest config: {e}")))?;
            if let Some(p) = preset {
                rc.preset = Some(p);
            }
            return Ok(rc);
        }
        let file: ConfigFile = serde_json::from_value(value)
            .map_err(|e| Error::Config(format!("config: {e}")))?;
        Self::resolve(file, preset, base_dir)
    }

    pub fn load(path: &Path, preset: Option<Preset>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json_str(&text, preset, base)
    }

    fn resolve(f: ConfigFile, preset: Option<Preset>, base_dir: &Path) -> Result<Self> {
        let preset = preset.or(f.preset);
        let abs = |p: PathBuf| if p.is_absolute() { p } else { base_dir.join(p) };
        let mut rc = match preset {
            Some(p) => Self::preset(p),
            None => {
                // without a preset the data description must be explicit;
                // training knobs still default to the Adult table values
                let schema = DataSchema {
                    label_column: required(f.label_column.clone(), "label_column")?,
                    positive_label: required(f.positive_label.clone(), "positive_label")?,
                    sensitive_column: required(f.sensitive_column.clone(), "sensitive_column")?,
                    categorical_columns: None,
                    continuous_columns: None,
                    drop_columns: vec![],
                    sensitive_as_feature: false,
                };
                let train_path = match (&f.train_path, f.input_width) {
                    (Some(p), _) => p.clone(),
                    (None, Some(_)) => PathBuf::new(),
                    (None, None) => return Err(Error::Config("missing key `train_path`".into())),
                };
                Self {
                    preset: None,
                    schema,
                    train_path,
                    test_path: None,
                    ..Self::preset(Preset::Adult)
                }
            }
        };
        rc.preset = preset;

        let a = &mut rc.architecture;
        macro_rules! set {
            ($dst:expr, $src:expr) => {
                if let Some(v) = $src {
                    $dst = v;
                }
            };
        }
        set!(a.layers_before, f.layers_before);
        set!(a.fairness_layers, f.fairness_layers);
        set!(a.layers_after, f.layers_after);
        set!(a.hidden_width, f.hidden_width);
        if let Some(s) = f.activation {
            a.activation = s
                .parse::<Activation>()
                .map_err(|e| Error::Config(format!("activation: {e}")))?;
        }
        rc.input_width = f.input_width.or(rc.input_width);
        if let Some(p) = f.train_path {
            rc.train_path = abs(p);
        }
        if let Some(p) = f.test_path {
            rc.test_path = Some(abs(p));
        }
        set!(rc.test_fraction, f.test_fraction);
        set!(rc.split_seed, f.split_seed);
        let s = &mut rc.schema;
        set!(s.label_column, f.label_column);
        set!(s.positive_label, f.positive_label);
        set!(s.sensitive_column, f.sensitive_column);
        if f.categorical_columns.is_some() {
            s.categorical_columns = f.categorical_columns;
        }
        if f.continuous_columns.is_some() {
            s.continuous_columns = f.continuous_columns;
        }
        set!(s.drop_columns, f.drop_columns);
        set!(s.sensitive_as_feature, f.sensitive_as_feature);
        let t = &mut rc.train;
        set!(t.epochs, f.epochs);
        set!(t.batch_size, f.batch_size);
        set!(t.lr_accuracy, f.lr_accuracy);
        set!(t.lr_fairness, f.lr_fairness);
        set!(t.eta, f.eta);
        set!(t.lambda, f.lambda);
        set!(t.seed, f.seed);
        set!(t.fairness_loss, f.fairness_loss);
        set!(t.mode, f.mode);
        set!(t.optimizer, f.optimizer);
        set!(rc.etas, f.etas);
        set!(rc.seeds, f.seeds);
        set!(rc.jobs, f.jobs);
        set!(rc.lip_samples, f.lip_samples);
        rc.validate()?;
        Ok(rc)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.architecture.fairness_layers == 0 {
            return Err(Error::Config("fairness_layers must be at least 1".into()));
        }
        if self.architecture.hidden_width == 0 {
            return Err(Error::Config("hidden_width must be at least 1".into()));
        }
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        if self.etas.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return Err(Error::Config("etas must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Parses `1,100,1e3`.
pub fn parse_f64_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("`{t}` is not a number")))
        })
        .collect()
}

pub fn parse_u64_list(s: &str) -> Result<Vec<u64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<u64>()
                .map_err(|_| Error::Config(format!("`{t}` is not a non-negative integer")))
        })
        .collect()
}
