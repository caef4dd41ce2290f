//! Aggregated movie table with four feature groups and a rating target.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::text::Tfidf;

pub const TRAIN_YEARS: std::ops::RangeInclusive<i32> = 2000..=2013;
pub const MAX_TEXT_FEATURES: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureGroup {
    Numerical,
    Social,
    Categorical,
    Textual,
}

impl FeatureGroup {
    pub const ALL: [FeatureGroup; 4] = [
        FeatureGroup::Numerical,
        FeatureGroup::Social,
        FeatureGroup::Categorical,
        FeatureGroup::Textual,
    ];

    pub fn is_numeric(self) -> bool {
        matches!(self, FeatureGroup::Numerical | FeatureGroup::Social)
    }
}

impl fmt::Display for FeatureGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureGroup::Numerical => "numerical",
            FeatureGroup::Social => "social",
            FeatureGroup::Categorical => "categorical",
            FeatureGroup::Textual => "textual",
        })
    }
}

impl FromStr for FeatureGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "numerical" => Ok(FeatureGroup::Numerical),
            "social" => Ok(FeatureGroup::Social),
            "categorical" => Ok(FeatureGroup::Categorical),
            "textual" => Ok(FeatureGroup::Textual),
            other => Err(Error::Config(format!("unknown feature group {other:?}"))),
        }
    }
}

/// Maps table columns to feature groups and names the target and year.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub columns: Vec<(String, FeatureGroup)>,
    pub target: String,
    pub year: String,
}

impl Default for Manifest {
    fn default() -> Self {
        use FeatureGroup::*;
        let cols: [(&str, FeatureGroup); 18] = [
            ("budget", Numerical),
            ("duration", Numerical),
            ("total_companies", Numerical),
            ("release_day", Numerical),
            ("release_month", Numerical),
            ("release_year", Numerical),
            ("total_languages", Numerical),
            ("actor_fb_likes", Social),
            ("cast_fb_likes", Social),
            ("director_fb_likes", Social),
            ("crew_fb_likes", Social),
            ("production_countries", Categorical),
            ("content_rating", Categorical),
            ("genres", Categorical),
            ("title", Textual),
            ("plot_keywords", Textual),
            ("overview", Textual),
            ("tagline", Textual),
        ];
        Manifest {
            columns: cols.iter().map(|(c, g)| (c.to_string(), *g)).collect(),
            target: "vote_average".into(),
            year: "release_year".into(),
        }
    }
}

impl Manifest {
    /// Reads a `column,group` file; the group may also be `target` or `year`.
    pub fn load(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::ingest(path, e.to_string()))?;
        let mut columns = Vec::new();
        let (mut target, mut year) = (None, None);
        for rec in rdr.records() {
            let rec = rec?;
            let (col, group) = (rec.get(0).unwrap_or("").trim(), rec.get(1).unwrap_or("").trim());
            match group {
                "target" => target = Some(col.to_string()),
                "year" => year = Some(col.to_string()),
                g => columns.push((col.to_string(), g.parse()?)),
            }
        }
        let default = Manifest::default();
        Ok(Manifest {
            columns,
            target: target.unwrap_or(default.target),
            year: year.unwrap_or(default.year),
        })
    }

    pub fn group_columns(&self, group: FeatureGroup) -> Vec<&str> {
        self.columns.iter().filter(|(_, g)| *g == group).map(|(c, _)| c.as_str()).collect()
    }

    pub fn group_of(&self, column: &str) -> Option<FeatureGroup> {
        self.columns.iter().find(|(c, _)| c == column).map(|(_, g)| *g)
    }
}

/// Cleaning summary produced by [`load_movies`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LoadReport {
    pub rows: usize,
    pub dropped_missing_target: usize,
    pub dropped_missing_year: usize,
    pub unknown_columns: Vec<String>,
    pub group_columns: BTreeMap<String, usize>,
    pub imputed: BTreeMap<String, usize>,
    pub medians: BTreeMap<String, f64>,
}

/// Cleaned movie rows, stored column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct MovieTable {
    pub manifest: Manifest,
    numeric: BTreeMap<String, Vec<f64>>,
    text: BTreeMap<String, Vec<String>>,
    pub target: Vec<f64>,
    pub year: Vec<i32>,
}

fn parse_number(s: &str) -> Option<f64> {
    let t = s.trim();
    if t.is_empty() || ["na", "nan", "null", "none"].contains(&t.to_ascii_lowercase().as_str()) {
        return None;
    }
    t.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Reads a header-row CSV. Rows without a target or release year are
/// dropped; missing numeric cells are filled with the median of the
/// training-window rows.
pub fn load_movies(path: &Path, manifest: &Manifest) -> Result<(MovieTable, LoadReport)> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::ingest(path, e.to_string()))?;
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::ingest(path, e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if headers.iter().all(String::is_empty) {
        return Err(Error::ingest(path, "file is empty"));
    }
    let pos = |name: &str| headers.iter().position(|h| h == name);
    let target_at = pos(&manifest.target)
        .ok_or_else(|| Error::ingest(path, format!("target column {:?} is absent", manifest.target)))?;
    let year_at =
        pos(&manifest.year).ok_or_else(|| Error::ingest(path, format!("year column {:?} is absent", manifest.year)))?;
    let mut feature_at = Vec::new();
    for (c, g) in &manifest.columns {
        let i = pos(c).ok_or_else(|| Error::ingest(path, format!("manifest column {c:?} is absent")))?;
        feature_at.push((c.clone(), *g, i));
    }
    let mut report = LoadReport {
        unknown_columns: headers
            .iter()
            .filter(|h| manifest.group_of(h).is_none() && **h != manifest.target && **h != manifest.year)
            .cloned()
            .collect(),
        ..LoadReport::default()
    };
    if !report.unknown_columns.is_empty() {
        log::warn!("ignoring columns not in the manifest: {}", report.unknown_columns.join(", "));
    }

    let mut raw_numeric: BTreeMap<String, Vec<Option<f64>>> = BTreeMap::new();
    let mut text: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let (mut target, mut year) = (Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::ingest(path, e.to_string()))?;
        let Some(t) = rec.get(target_at).and_then(parse_number) else {
            report.dropped_missing_target += 1;
            continue;
        };
        let Some(y) = rec.get(year_at).and_then(parse_number) else {
            report.dropped_missing_year += 1;
            continue;
        };
        target.push(t);
        year.push(y.round() as i32);
        for (c, g, i) in &feature_at {
            let cell = rec.get(*i).unwrap_or("");
            if g.is_numeric() {
                raw_numeric.entry(c.clone()).or_default().push(parse_number(cell));
            } else {
                text.entry(c.clone()).or_default().push(cell.trim().to_string());
            }
        }
    }
    if target.is_empty() {
        return Err(Error::ingest(path, "no rows with a target value"));
    }

    let in_train: Vec<bool> = year.iter().map(|y| TRAIN_YEARS.contains(y)).collect();
    let mut numeric = BTreeMap::new();
    for (c, vals) in raw_numeric {
        let fill = median(vals.iter().zip(&in_train).filter_map(|(v, &t)| v.filter(|_| t)).collect()).unwrap_or(0.0);
        let missing = vals.iter().filter(|v| v.is_none()).count();
        if missing > 0 {
            report.imputed.insert(c.clone(), missing);
            report.medians.insert(c.clone(), fill);
        }
        numeric.insert(c, vals.into_iter().map(|v| v.unwrap_or(fill)).collect());
    }
    for g in FeatureGroup::ALL {
        report.group_columns.insert(g.to_string(), manifest.group_columns(g).len());
    }
    report.rows = target.len();
    log::info!(
        "loaded {} movies ({} dropped without target, {} without year)",
        report.rows,
        report.dropped_missing_target,
        report.dropped_missing_year
    );
    Ok((
        MovieTable {
            manifest: manifest.clone(),
            numeric,
            text,
            target,
            year,
        },
        report,
    ))
}

/// Row counts of a year split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub test: usize,
    pub dropped_before_window: usize,
}

impl MovieTable {
    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    pub fn numeric(&self, column: &str) -> Option<&[f64]> {
        self.numeric.get(column).map(Vec::as_slice)
    }

    pub fn text(&self, column: &str) -> Option<&[String]> {
        self.text.get(column).map(Vec::as_slice)
    }

    pub fn select(&self, rows: &[usize]) -> MovieTable {
        let pick_f = |v: &Vec<f64>| rows.iter().map(|&i| v[i]).collect();
        MovieTable {
            manifest: self.manifest.clone(),
            numeric: self.numeric.iter().map(|(k, v)| (k.clone(), pick_f(v))).collect(),
            text: self
                .text
                .iter()
                .map(|(k, v)| (k.clone(), rows.iter().map(|&i| v[i].clone()).collect()))
                .collect(),
            target: pick_f(&self.target),
            year: rows.iter().map(|&i| self.year[i]).collect(),
        }
    }
}

/// Train = release years 2000–2013 inclusive, test = after 2013. Earlier
/// films fall in neither split.
pub fn split_by_year(table: &MovieTable) -> (MovieTable, MovieTable, SplitCounts) {
    let train: Vec<usize> = (0..table.len()).filter(|&i| TRAIN_YEARS.contains(&table.year[i])).collect();
    let test: Vec<usize> = (0..table.len()).filter(|&i| table.year[i] > *TRAIN_YEARS.end()).collect();
    let counts = SplitCounts {
        train: train.len(),
        test: test.len(),
        dropped_before_window: table.len() - train.len() - test.len(),
    };
    if train.is_empty() && test.is_empty() {
        log::warn!("no films fall inside the train or test year windows");
    } else if counts.dropped_before_window > 0 {
        log::info!("{} films released before {} excluded from both splits", counts.dropped_before_window, TRAIN_YEARS.start());
    }
    (table.select(&train), table.select(&test), counts)
}

/// Dense row-major feature matrix with column names.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f32>,
    pub columns: Vec<String>,
}

impl FeatureMatrix {
    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.values[i * self.cols + j] as f64).collect()
    }
}

/// Feature encoder fitted on the training split.
#[derive(Debug, Clone, PartialEq)]
pub enum GroupEncoder {
    Standardize {
        columns: Vec<String>,
        mean: Vec<f64>,
        std: Vec<f64>,
    },
    MultiHot {
        vocab: Vec<(String, Vec<String>)>,
    },
    Tfidf {
        columns: Vec<String>,
        vectorizer: Tfidf,
    },
}

fn categories(cell: &str) -> impl Iterator<Item = String> + '_ {
    cell.split('|').map(str::trim).filter(|s| !s.is_empty()).map(str::to_string)
}

impl GroupEncoder {
    pub fn fit(train: &MovieTable, group: FeatureGroup) -> Result<Self> {
        let columns: Vec<String> = train.manifest.group_columns(group).iter().map(|s| s.to_string()).collect();
        if columns.is_empty() {
            return Err(Error::Config(format!("feature group {group} has no columns")));
        }
        Ok(match group {
            FeatureGroup::Numerical | FeatureGroup::Social => {
                let (mut mean, mut std) = (Vec::new(), Vec::new());
                for c in &columns {
                    let v = train.numeric(c).unwrap_or(&[]);
                    let n = v.len().max(1) as f64;
                    let m = v.iter().sum::<f64>() / n;
                    let s = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt();
                    mean.push(m);
                    std.push(if s > 0.0 { s } else { 1.0 });
                }
                GroupEncoder::Standardize { columns, mean, std }
            }
            FeatureGroup::Categorical => GroupEncoder::MultiHot {
                vocab: columns
                    .iter()
                    .map(|c| {
                        let mut v: Vec<String> =
                            train.text(c).unwrap_or(&[]).iter().flat_map(|cell| categories(cell)).collect();
                        v.sort();
                        v.dedup();
                        (c.clone(), v)
                    })
                    .collect(),
            },
            FeatureGroup::Textual => {
                let docs = joined_text(train, &columns);
                GroupEncoder::Tfidf {
                    vectorizer: Tfidf::fit(&docs, MAX_TEXT_FEATURES),
                    columns,
                }
            }
        })
    }

    pub fn width(&self) -> usize {
        match self {
            GroupEncoder::Standardize { columns, .. } => columns.len(),
            GroupEncoder::MultiHot { vocab } => vocab.iter().map(|(_, v)| v.len()).sum(),
            GroupEncoder::Tfidf { vectorizer, .. } => vectorizer.len(),
        }
    }

    pub fn transform(&self, table: &MovieTable) -> FeatureMatrix {
        let rows = table.len();
        let cols = self.width();
        let mut values = vec![0f32; rows * cols];
        let names: Vec<String>;
        match self {
            GroupEncoder::Standardize { columns, mean, std } => {
                for (j, c) in columns.iter().enumerate() {
                    let v = table.numeric(c).unwrap_or(&[]);
                    for (i, x) in v.iter().enumerate() {
                        values[i * cols + j] = ((x - mean[j]) / std[j]) as f32;
                    }
                }
                names = columns.clone();
            }
            GroupEncoder::MultiHot { vocab } => {
                let mut offset = 0;
                let mut n = Vec::with_capacity(cols);
                for (c, v) in vocab {
                    let cells = table.text(c).unwrap_or(&[]);
                    for (i, cell) in cells.iter().enumerate() {
                        for cat in categories(cell) {
                            if let Ok(k) = v.binary_search(&cat) {
                                values[i * cols + offset + k] = 1.0;
                            }
                        }
                    }
                    n.extend(v.iter().map(|cat| format!("{c}={cat}")));
                    offset += v.len();
                }
                names = n;
            }
            GroupEncoder::Tfidf { columns, vectorizer } => {
                for (i, doc) in joined_text(table, columns).iter().enumerate() {
                    for (j, x) in vectorizer.transform_one(doc).into_iter().enumerate() {
                        values[i * cols + j] = x as f32;
                    }
                }
                names = vectorizer.vocabulary().iter().map(|t| format!("tfidf:{t}")).collect();
            }
        }
        FeatureMatrix {
            rows,
            cols,
            values,
            columns: names,
        }
    }
}

fn joined_text(table: &MovieTable, columns: &[String]) -> Vec<String> {
    (0..table.len())
        .map(|i| {
            columns
                .iter()
                .filter_map(|c| table.text(c).map(|v| v[i].as_str()))
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect()
}

/// Fits the group encoder on `train` and applies it to both splits.
pub fn encode_group(train: &MovieTable, test: &MovieTable, group: FeatureGroup) -> Result<(FeatureMatrix, FeatureMatrix)> {
    let enc = GroupEncoder::fit(train, group)?;
    Ok((enc.transform(train), enc.transform(test)))
}
