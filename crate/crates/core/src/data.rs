//! Tabular CSV ingestion.
//!
//! Categorical columns are one-hot encoded (categories sorted), continuous
//! columns are min-max scaled with bounds taken from the training file
//! only. The fitted [`EncodingManifest`] is then reused verbatim for the
//! test file.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcore::Matrix;

pub(crate) const SPLIT_STREAM: u64 = 3;

/// Category used for empty / `?` / `NA` cells of categorical columns.
pub const MISSING_CATEGORY: &str = "<missing>";

fn is_missing(v: &str) -> bool {
    matches!(v, "" | "?" | "NA" | "NaN" | "nan" | "null")
}

/// What the loader needs to know about a CSV beyond its header.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSchema {
    pub label_column: String,
    /// Either an exact label string (`">50K"`) or a numeric rule such as
    /// `">0"` / `">=1"`.
    pub positive_label: String,
    pub sensitive_column: String,
    #[serde(default)]
    pub categorical_columns: Option<Vec<String>>,
    #[serde(default)]
    pub continuous_columns: Option<Vec<String>>,
    #[serde(default)]
    pub drop_columns: Vec<String>,
    #[serde(default)]
    pub sensitive_as_feature: bool,
}

impl DataSchema {
    pub fn adult() -> Self {
        Self {
            label_column: "income".into(),
            positive_label: ">50K".into(),
            sensitive_column: "sex".into(),
            categorical_columns: None,
            continuous_columns: Some(
                [
                    "age",
                    "fnlwgt",
                    "education-num",
                    "capital-gain",
                    "capital-loss",
                    "hours-per-week",
                ]
                .map(String::from)
                .to_vec(),
            ),
            drop_columns: vec![],
            sensitive_as_feature: false,
        }
    }

    pub fn health() -> Self {
        Self {
            label_column: "max_CharlsonIndex".into(),
            positive_label: ">0".into(),
            sensitive_column: "AgeAtFirstClaim".into(),
            categorical_columns: None,
            continuous_columns: None,
            drop_columns: vec!["MemberID".into()],
            sensitive_as_feature: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum LabelRule {
    Equals { value: String },
    GreaterThan { threshold: f64 },
    AtLeast { threshold: f64 },
}

impl LabelRule {
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        let numeric = |rest: &str| {
            rest.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad numeric label rule `{s}`")))
        };
        if let Some(rest) = s.strip_prefix(">=") {
            Ok(LabelRule::AtLeast {
                threshold: numeric(rest)?,
            })
        } else if let Some(rest) = s.strip_prefix('>') {
            // ">50K" is a literal label, ">0" is a rule
            match rest.trim().parse::<f64>() {
                Ok(threshold) => Ok(LabelRule::GreaterThan { threshold }),
                Err(_) => Ok(LabelRule::Equals { value: s.into() }),
            }
        } else {
            Ok(LabelRule::Equals { value: s.into() })
        }
    }

    fn apply(&self, raw: &str) -> std::result::Result<f64, String> {
        match self {
            LabelRule::Equals { value } => Ok(f64::from(raw == value)),
            LabelRule::GreaterThan { threshold } | LabelRule::AtLeast { threshold } => {
                let v: f64 = raw
                    .parse()
                    .map_err(|_| format!("label `{raw}` is not numeric"))?;
                let pos = match self {
                    LabelRule::GreaterThan { .. } => v > *threshold,
                    _ => v >= *threshold,
                };
                Ok(f64::from(pos))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ColumnEncoding {
    Categorical {
        name: String,
        categories: Vec<String>,
    },
    Continuous {
        name: String,
        min: f64,
        max: f64,
        /// Fills missing cells.
        median: f64,
    },
}

impl ColumnEncoding {
    pub fn name(&self) -> &str {
        match self {
            ColumnEncoding::Categorical { name, .. } | ColumnEncoding::Continuous { name, .. } => {
                name
            }
        }
    }

    pub fn width(&self) -> usize {
        match self {
            ColumnEncoding::Categorical { categories, .. } => categories.len(),
            ColumnEncoding::Continuous { .. } => 1,
        }
    }
}

/// Everything needed to encode another file exactly like the training file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodingManifest {
    pub columns: Vec<ColumnEncoding>,
    pub label_column: String,
    pub label_rule: LabelRule,
    pub sensitive_column: String,
    /// Group id `i` is `sensitive_groups[i]`.
    pub sensitive_groups: Vec<String>,
    pub source: Option<PathBuf>,
    /// Missing cells per feature column in the fitting data.
    pub missing_counts: BTreeMap<String, usize>,
}

/// Per-file counts of rows that could not be used.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadStats {
    pub rows_read: usize,
    pub dropped_missing_label: usize,
    pub dropped_missing_group: usize,
    pub dropped_unknown_group: usize,
    pub unseen_categories: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    /// 0/1 labels.
    pub y: Vec<f64>,
    /// Sensitive group id per row, in `[0, k)`.
    pub groups: Vec<usize>,
    pub k: usize,
    pub feature_names: Vec<String>,
}

impl Dataset {
    pub fn new(x: Matrix, y: Vec<f64>, groups: Vec<usize>, k: usize) -> Result<Self> {
        let n = x.rows();
        if y.len() != n || groups.len() != n {
            return Err(Error::Contract(format!(
                "dataset lengths differ: x {n}, y {}, groups {}",
                y.len(),
                groups.len()
            )));
        }
        if k < 2 {
            return Err(Error::Contract(format!("need at least 2 groups, got {k}")));
        }
        if let Some(&g) = groups.iter().find(|&&g| g >= k) {
            return Err(Error::Contract(format!("group {g} outside [0, {k})")));
        }
        if let Some(&v) = y.iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::Contract(format!("label {v} is not binary")));
        }
        let feature_names = (0..x.cols()).map(|i| format!("x{i}")).collect();
        Ok(Self {
            x,
            y,
            groups,
            k,
            feature_names,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn width(&self) -> usize {
        self.x.cols()
    }

    pub fn group_counts(&self) -> Vec<usize> {
        group_counts(self)
    }

    /// Rows `idx` as `(x, y, groups)`.
    pub fn batch(&self, idx: &[usize]) -> (Matrix, Vec<f64>, Vec<usize>) {
        (
            self.x.select_rows(idx),
            idx.iter().map(|&i| self.y[i]).collect(),
            idx.iter().map(|&i| self.groups[i]).collect(),
        )
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let (x, y, groups) = self.batch(idx);
        Dataset {
            x,
            y,
            groups,
            k: self.k,
            feature_names: self.feature_names.clone(),
        }
    }

    /// Every group must be present in the full dataset.
    pub fn check_groups_nonempty(&self) -> Result<()> {
        match self.group_counts().iter().position(|&c| c == 0) {
            Some(g) => Err(Error::Config(format!("sensitive group {g} has no rows"))),
            None => Ok(()),
        }
    }

    pub fn positive_rate(&self) -> f64 {
        self.y.iter().sum::<f64>() / self.len().max(1) as f64
    }
}

pub fn group_counts(ds: &Dataset) -> Vec<usize> {
    let mut counts = vec![0; ds.k];
    for &g in &ds.groups {
        counts[g] += 1;
    }
    counts
}

/// Shuffles `0..n` and cuts it into `ceil(n / batch_size)` batches, the
/// last one possibly short.
pub fn minibatch_indices<R: Rng + ?Sized>(
    n: usize,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 || batch_size > n {
        return Err(Error::Precondition(format!(
            "batch size {batch_size} must be in [1, {n}]"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    Ok(idx.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

pub fn minibatches<R: Rng + ?Sized>(
    ds: &Dataset,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    minibatch_indices(ds.len(), batch_size, rng)
}

/// A CSV held as trimmed strings.
#[derive(Clone, Debug)]
pub struct RawTable {
    pub path: PathBuf,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
    /// 1-based line number of each row in the source file.
    pub lines: Vec<u64>,
}

impl RawTable {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(file);
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        let mut lines = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            if rec.len() != headers.len() {
                return Err(Error::Row {
                    path: path.into(),
                    line,
                    msg: format!("expected {} fields, found {}", headers.len(), rec.len()),
                });
            }
            rows.push(rec.iter().map(str::to_string).collect());
            lines.push(line);
        }
        Ok(Self {
            path: path.into(),
            headers,
            rows,
            lines,
        })
    }

    fn column_index(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.into()))
    }

    pub fn subset(&self, idx: &[usize]) -> RawTable {
        RawTable {
            path: self.path.clone(),
            headers: self.headers.clone(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            lines: idx.iter().map(|&i| self.lines[i]).collect(),
        }
    }
}

impl EncodingManifest {
    /// Fits the encoding on `table`.
    pub fn fit(table: &RawTable, schema: &DataSchema) -> Result<Self> {
        let label_idx = table.column_index(&schema.label_column)?;
        let sens_idx = table.column_index(&schema.sensitive_column)?;
        for name in schema
            .drop_columns
            .iter()
            .chain(schema.categorical_columns.iter().flatten())
            .chain(schema.continuous_columns.iter().flatten())
        {
            table.column_index(name)?;
        }
        let label_rule = LabelRule::parse(&schema.positive_label)?;

        // Rows that survive: label and group present.
        let usable: Vec<usize> = (0..table.rows.len())
            .filter(|&r| {
                !is_missing(&table.rows[r][label_idx]) && !is_missing(&table.rows[r][sens_idx])
            })
            .collect();

        let groups: BTreeSet<&str> = usable
            .iter()
            .map(|&r| table.rows[r][sens_idx].as_str())
            .collect();
        if groups.len() < 2 {
            return Err(Error::Config(format!(
                "sensitive column `{}` has {} distinct value(s); need at least 2",
                schema.sensitive_column,
                groups.len()
            )));
        }

        let declared = |list: &Option<Vec<String>>, name: &str| {
            list.as_ref().is_some_and(|l| l.iter().any(|c| c == name))
        };

        let mut columns = Vec::new();
        let mut missing_counts = BTreeMap::new();
        for (c, name) in table.headers.iter().enumerate() {
            if c == label_idx
                || (c == sens_idx && !schema.sensitive_as_feature)
                || schema.drop_columns.contains(name)
            {
                continue;
            }
            let values = usable.iter().map(|&r| (r, table.rows[r][c].as_str()));
            let missing = values.clone().filter(|(_, v)| is_missing(v)).count();
            missing_counts.insert(name.clone(), missing);

            let continuous = if declared(&schema.continuous_columns, name) {
                true
            } else if declared(&schema.categorical_columns, name) {
                false
            } else {
                values
                    .clone()
                    .filter(|(_, v)| !is_missing(v))
                    .all(|(_, v)| v.parse::<f64>().is_ok())
            };

            if continuous {
                let mut nums = Vec::with_capacity(usable.len());
                for (r, v) in values {
                    if is_missing(v) {
                        continue;
                    }
                    let x: f64 = v.parse().map_err(|_| Error::Row {
                        path: table.path.clone(),
                        line: table.lines[r],
                        msg: format!("column `{name}`: cannot parse `{v}` as a number"),
                    })?;
                    nums.push(x);
                }
                nums.sort_by(f64::total_cmp);
                let (min, max, median) = if nums.is_empty() {
                    (0.0, 0.0, 0.0)
                } else {
                    let mid = nums.len() / 2;
                    let median = if nums.len() % 2 == 0 {
                        0.5 * (nums[mid - 1] + nums[mid])
                    } else {
                        nums[mid]
                    };
                    (nums[0], nums[nums.len() - 1], median)
                };
                columns.push(ColumnEncoding::Continuous {
                    name: name.clone(),
                    min,
                    max,
                    median,
                });
            } else {
                let cats: BTreeSet<String> = values
                    .map(|(_, v)| {
                        if is_missing(v) {
                            MISSING_CATEGORY.to_string()
                        } else {
                            v.to_string()
                        }
                    })
                    .collect();
                columns.push(ColumnEncoding::Categorical {
                    name: name.clone(),
                    categories: cats.into_iter().collect(),
                });
            }
        }

        Ok(Self {
            columns,
            label_column: schema.label_column.clone(),
            label_rule,
            sensitive_column: schema.sensitive_column.clone(),
            sensitive_groups: groups.into_iter().map(String::from).collect(),
            source: Some(table.path.clone()),
            missing_counts,
        })
    }

    pub fn feature_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for col in &self.columns {
            match col {
                ColumnEncoding::Categorical { name, categories } => {
                    out.extend(categories.iter().map(|c| format!("{name}={c}")));
                }
                ColumnEncoding::Continuous { name, .. } => out.push(name.clone()),
            }
        }
        out
    }

    pub fn width(&self) -> usize {
        self.columns.iter().map(ColumnEncoding::width).sum()
    }

    /// Encodes `table` with this manifest.
    pub fn encode(&self, table: &RawTable) -> Result<(Dataset, LoadStats)> {
        let label_idx = table.column_index(&self.label_column)?;
        let sens_idx = table.column_index(&self.sensitive_column)?;
        let col_idx: Vec<usize> = self
            .columns
            .iter()
            .map(|c| table.column_index(c.name()))
            .collect::<Result<_>>()?;
        let cat_lookup: Vec<Option<BTreeMap<&str, usize>>> = self
            .columns
            .iter()
            .map(|c| match c {
                ColumnEncoding::Categorical { categories, .. } => Some(
                    categories
                        .iter()
                        .enumerate()
                        .map(|(i, s)| (s.as_str(), i))
                        .collect(),
                ),
                ColumnEncoding::Continuous { .. } => None,
            })
            .collect();
        let group_of: BTreeMap<&str, usize> = self
            .sensitive_groups
            .iter()
            .enumerate()
            .map(|(i, g)| (g.as_str(), i))
            .collect();

        let width = self.width();
        let mut stats = LoadStats {
            rows_read: table.rows.len(),
            ..LoadStats::default()
        };
        let mut data = Vec::with_capacity(table.rows.len() * width);
        let mut y = Vec::with_capacity(table.rows.len());
        let mut groups = Vec::with_capacity(table.rows.len());

        for (r, row) in table.rows.iter().enumerate() {
            let row_err = |msg: String| Error::Row {
                path: table.path.clone(),
                line: table.lines[r],
                msg,
            };
            let raw_label = row[label_idx].as_str();
            if is_missing(raw_label) {
                stats.dropped_missing_label += 1;
                continue;
            }
            let raw_group = row[sens_idx].as_str();
            if is_missing(raw_group) {
                stats.dropped_missing_group += 1;
                continue;
            }
            let Some(&g) = group_of.get(raw_group) else {
                stats.dropped_unknown_group += 1;
                continue;
            };
            let label = self.label_rule.apply(raw_label).map_err(row_err)?;

            for ((col, &c), lookup) in self.columns.iter().zip(&col_idx).zip(&cat_lookup) {
                let v = row[c].as_str();
                match col {
                    ColumnEncoding::Categorical { categories, .. } => {
                        let key = if is_missing(v) { MISSING_CATEGORY } else { v };
                        let start = data.len();
                        data.extend(std::iter::repeat_n(0.0, categories.len()));
                        match lookup.as_ref().and_then(|m| m.get(key)) {
                            Some(&i) => data[start + i] = 1.0,
                            None => stats.unseen_categories += 1,
                        }
                    }
                    ColumnEncoding::Continuous {
                        min,
                        max,
                        median,
                        name,
                    } => {
                        let raw = if is_missing(v) {
                            *median
                        } else {
                            v.parse::<f64>().map_err(|_| {
                                row_err(format!("column `{name}`: cannot parse `{v}` as a number"))
                            })?
                        };
                        let span = max - min;
                        data.push(if span > 0.0 { (raw - min) / span } else { 0.0 });
                    }
                }
            }
            y.push(label);
            groups.push(g);
        }

        let n = y.len();
        let x = Matrix::new(n, width, data)?;
        let mut ds = Dataset::new(x, y, groups, self.sensitive_groups.len())?;
        ds.feature_names = self.feature_names();
        Ok((ds, stats))
    }
}

/// Reads `path`, fits an encoding on it and encodes it.
pub fn load_csv(
    path: impl AsRef<Path>,
    schema: &DataSchema,
) -> Result<(Dataset, EncodingManifest, LoadStats)> {
    let table = RawTable::read(path)?;
    let manifest = EncodingManifest::fit(&table, schema)?;
    let (ds, stats) = manifest.encode(&table)?;
    Ok((ds, manifest, stats))
}

/// Reads `path` and encodes it with an existing manifest.
pub fn load_csv_with(
    path: impl AsRef<Path>,
    manifest: &EncodingManifest,
) -> Result<(Dataset, LoadStats)> {
    let table = RawTable::read(path)?;
    manifest.encode(&table)
}

/// Train/test pair sharing one encoding.
#[derive(Clone, Debug)]
pub struct SplitData {
    pub train: Dataset,
    pub test: Dataset,
    pub manifest: EncodingManifest,
    pub train_stats: LoadStats,
    pub test_stats: LoadStats,
}

/// Loads a train file and either a separate test file or a deterministic
/// `test_fraction` split of the train file (encoding fitted on the train
/// part only).
pub fn load_train_test(
    train_path: impl AsRef<Path>,
    test_path: Option<&Path>,
    test_fraction: f64,
    split_seed: u64,
    schema: &DataSchema,
) -> Result<SplitData> {
    let table = RawTable::read(train_path)?;
    let (train_table, test_table) = match test_path {
        Some(p) => (table, RawTable::read(p)?),
        None => {
            if !(test_fraction > 0.0 && test_fraction < 1.0) {
                return Err(Error::Config(format!(
                    "test_fraction must be in (0, 1) when no test file is given, got {test_fraction}"
                )));
            }
            let mut idx: Vec<usize> = (0..table.rows.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(split_seed);
            rng.set_stream(SPLIT_STREAM);
            idx.shuffle(&mut rng);
            let n_test = ((table.rows.len() as f64) * test_fraction).round() as usize;
            let (test_idx, train_idx) = idx.split_at(n_test);
            let mut train_idx = train_idx.to_vec();
            let mut test_idx = test_idx.to_vec();
            train_idx.sort_unstable();
            test_idx.sort_unstable();
            (table.subset(&train_idx), table.subset(&test_idx))
        }
    };
    let manifest = EncodingManifest::fit(&train_table, schema)?;
    let (train, train_stats) = manifest.encode(&train_table)?;
    let (test, test_stats) = manifest.encode(&test_table)?;
    train.check_groups_nonempty()?;
    Ok(SplitData {
        train,
        test,
        manifest,
        train_stats,
        test_stats,
    })
}
