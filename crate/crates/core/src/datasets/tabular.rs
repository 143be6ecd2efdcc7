//! CSV tabular preprocessing: row filtering, value remapping, one-hot
//! encoding, and standardization with statistics fitted on the training split.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::Matrix;

use super::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    /// One-hot block, levels in lexicographic order.
    Categorical,
    /// Two levels encoded as a single 0/1 column; the lexicographically first
    /// level is 0.
    Binary,
    Drop,
    Target,
    Protected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    /// Raw value → level. Applied before any encoding.
    #[serde(default)]
    pub map: BTreeMap<String, String>,
    /// Level for raw values missing from `map`. Without it they pass through.
    #[serde(default)]
    pub default_level: Option<String>,
    /// Remove rows whose value is not a key of `map`.
    #[serde(default)]
    pub drop_unmapped: bool,
    /// Remove rows carrying one of these raw values.
    #[serde(default)]
    pub drop_values: Vec<String>,
    /// Target only: levels labelled 1; every other level is 0. Empty means
    /// multi-class with lexicographic level order.
    #[serde(default)]
    pub positive: Vec<String>,
}

impl ColumnSpec {
    pub fn new(name: &str, kind: ColumnKind) -> Self {
        Self {
            name: name.to_string(),
            kind,
            map: BTreeMap::new(),
            default_level: None,
            drop_unmapped: false,
            drop_values: Vec::new(),
            positive: Vec::new(),
        }
    }

    /// `None` when the row must be dropped.
    fn level(&self, raw: &str) -> Option<String> {
        if self.drop_values.iter().any(|v| v == raw) {
            return None;
        }
        match self.map.get(raw) {
            Some(mapped) => Some(mapped.clone()),
            None if self.drop_unmapped => None,
            None => Some(self.default_level.clone().unwrap_or_else(|| raw.to_string())),
        }
    }
}

fn default_missing() -> Vec<String> {
    vec![String::new(), "?".to_string(), "NA".to_string()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabularSchema {
    pub columns: Vec<ColumnSpec>,
    /// Raw values treated as missing; rows containing them are dropped.
    #[serde(default = "default_missing")]
    pub missing_markers: Vec<String>,
}

impl TabularSchema {
    pub fn new(columns: Vec<ColumnSpec>) -> Self {
        Self {
            columns,
            missing_markers: default_missing(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let count = |k| self.columns.iter().filter(|c| c.kind == k).count();
        if count(ColumnKind::Target) != 1 {
            return Err(Error::param("schema needs exactly one target column"));
        }
        if count(ColumnKind::Protected) > 1 {
            return Err(Error::param("schema allows at most one protected column"));
        }
        let mut seen = BTreeSet::new();
        for c in &self.columns {
            if !seen.insert(&c.name) {
                return Err(Error::param(format!("column `{}` declared twice", c.name)));
            }
        }
        Ok(())
    }
}

/// Header plus raw string cells.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularRows {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

pub fn read_csv_rows(path: impl AsRef<Path>) -> Result<TabularRows> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let header = reader.headers()?.iter().map(str::to_string).collect();
    let rows = reader
        .records()
        .map(|r| r.map(|rec| rec.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<_, _>>()?;
    Ok(TabularRows { header, rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Fitted {
    Numeric { mean: f64, std: f64 },
    Categorical { levels: Vec<String> },
    Binary { levels: Vec<String> },
    Drop,
    Target { levels: Vec<String>, positive: Vec<String> },
    Protected { levels: Vec<String> },
}

/// Encoder fitted on a training split; reusable on held-out splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularEncoder {
    schema: TabularSchema,
    fitted: Vec<Fitted>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transformed {
    pub dataset: Dataset,
    /// Rows removed by missing values or filtering rules.
    pub dropped_rows: usize,
}

fn col_err(column: &str, message: impl Into<String>) -> Error {
    Error::Column {
        column: column.to_string(),
        message: message.into(),
    }
}

impl TabularEncoder {
    pub fn fit(data: &TabularRows, schema: &TabularSchema) -> Result<Self> {
        schema.validate()?;
        let positions = column_positions(&data.header, schema)?;
        let (kept, _) = filter_rows(data, schema, &positions);
        let mut fitted = Vec::with_capacity(schema.columns.len());
        for (spec, &pos) in schema.columns.iter().zip(&positions) {
            let levels = || -> Vec<String> {
                kept.iter()
                    .map(|r| r[pos].clone())
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect()
            };
            fitted.push(match spec.kind {
                ColumnKind::Numeric => {
                    let values = kept
                        .iter()
                        .map(|r| parse_numeric(&r[pos], &spec.name))
                        .collect::<Result<Vec<_>>>()?;
                    let n = values.len().max(1) as f64;
                    let mean = values.iter().sum::<f64>() / n;
                    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                    let std = var.sqrt();
                    Fitted::Numeric {
                        mean,
                        std: if std > 0.0 { std } else { 1.0 },
                    }
                }
                ColumnKind::Categorical => Fitted::Categorical { levels: levels() },
                ColumnKind::Binary => {
                    let levels = levels();
                    if levels.len() > 2 {
                        return Err(col_err(
                            &spec.name,
                            format!("binary column has {} levels after mapping", levels.len()),
                        ));
                    }
                    Fitted::Binary { levels }
                }
                ColumnKind::Drop => Fitted::Drop,
                ColumnKind::Target => Fitted::Target {
                    levels: levels(),
                    positive: spec.positive.clone(),
                },
                ColumnKind::Protected => Fitted::Protected { levels: levels() },
            });
        }
        Ok(Self {
            schema: schema.clone(),
            fitted,
        })
    }

    pub fn num_features(&self) -> usize {
        self.fitted
            .iter()
            .map(|f| match f {
                Fitted::Numeric { .. } | Fitted::Binary { .. } => 1,
                Fitted::Categorical { levels } => levels.len(),
                _ => 0,
            })
            .sum()
    }

    pub fn transform(&self, data: &TabularRows) -> Result<Transformed> {
        let positions = column_positions(&data.header, &self.schema)?;
        let (kept, dropped_rows) = filter_rows(data, &self.schema, &positions);
        let width = self.num_features();
        let mut features = Vec::with_capacity(kept.len() * width);
        let mut labels = Vec::with_capacity(kept.len());
        let mut groups = Vec::new();
        let mut num_classes = 2;
        let mut num_groups = 0;

        for row in &kept {
            for ((spec, fit), &pos) in self.schema.columns.iter().zip(&self.fitted).zip(&positions) {
                let value = &row[pos];
                let index_of = |levels: &[String]| {
                    levels
                        .iter()
                        .position(|l| l == value)
                        .ok_or_else(|| col_err(&spec.name, format!("unknown level `{value}`")))
                };
                match fit {
                    Fitted::Numeric { mean, std } => {
                        features.push((parse_numeric(value, &spec.name)? - mean) / std);
                    }
                    Fitted::Categorical { levels } => {
                        let hot = index_of(levels)?;
                        features.extend((0..levels.len()).map(|i| if i == hot { 1.0 } else { 0.0 }));
                    }
                    Fitted::Binary { levels } => features.push(index_of(levels)? as f64),
                    Fitted::Drop => {}
                    Fitted::Target { levels, positive } => {
                        if positive.is_empty() {
                            labels.push(index_of(levels)?);
                            num_classes = levels.len();
                        } else {
                            index_of(levels)?;
                            labels.push(usize::from(positive.contains(value)));
                        }
                    }
                    Fitted::Protected { levels } => {
                        groups.push(index_of(levels)?);
                        num_groups = levels.len();
                    }
                }
            }
        }
        let n = labels.len();
        let mut dataset = Dataset::new(Matrix::from_vec(n, width, features)?, labels, num_classes)?;
        if self.schema.columns.iter().any(|c| c.kind == ColumnKind::Protected) {
            dataset = dataset.with_groups(groups, num_groups)?;
        }
        Ok(Transformed { dataset, dropped_rows })
    }
}

/// Fits the encoder on `rows` and transforms them in one go.
pub fn preprocess_tabular(rows: &TabularRows, schema: &TabularSchema) -> Result<(TabularEncoder, Transformed)> {
    let enc = TabularEncoder::fit(rows, schema)?;
    let out = enc.transform(rows)?;
    Ok((enc, out))
}

fn column_positions(header: &[String], schema: &TabularSchema) -> Result<Vec<usize>> {
    for h in header {
        if !schema.columns.iter().any(|c| &c.name == h) {
            return Err(col_err(h, "present in the data but not in the schema"));
        }
    }
    schema
        .columns
        .iter()
        .map(|c| {
            header
                .iter()
                .position(|h| h == &c.name)
                .ok_or_else(|| col_err(&c.name, "declared in the schema but missing from the header"))
        })
        .collect()
}

/// Rows with every non-dropped cell mapped to its level; rows hitting a
/// missing marker or a drop rule are counted and discarded.
fn filter_rows(data: &TabularRows, schema: &TabularSchema, positions: &[usize]) -> (Vec<Vec<String>>, usize) {
    let mut kept = Vec::with_capacity(data.rows.len());
    'rows: for row in &data.rows {
        let mut mapped = row.clone();
        for (spec, &pos) in schema.columns.iter().zip(positions) {
            let Some(raw) = row.get(pos) else {
                continue 'rows;
            };
            if spec.kind == ColumnKind::Drop && spec.drop_values.is_empty() {
                continue;
            }
            if schema.missing_markers.iter().any(|m| m == raw) {
                continue 'rows;
            }
            match spec.level(raw) {
                Some(level) => mapped[pos] = level,
                None => continue 'rows,
            }
        }
        kept.push(mapped);
    }
    let dropped = data.rows.len() - kept.len();
    if dropped > 0 {
        log::info!("tabular preprocessing dropped {dropped} rows");
    }
    (kept, dropped)
}

fn parse_numeric(raw: &str, column: &str) -> Result<f64> {
    raw.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| col_err(column, format!("`{raw}` is not a finite number")))
}
