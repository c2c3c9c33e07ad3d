//! Time series containers, UCR TSV ingestion and length equalization.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};

/// Class label token.
pub type Label = i64;

/// A `dim x len` block of samples stored row-major (one row per dimension).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Series {
    dim: usize,
    len: usize,
    values: Vec<f64>,
}

impl Series {
    pub fn new(dim: usize, len: usize, values: Vec<f64>) -> Result<Self> {
        if dim < 1 {
            return contract("series needs at least one dimension");
        }
        if len < 2 {
            return contract(format!("series needs at least 2 time steps, got {len}"));
        }
        if values.len() != dim * len {
            return contract(format!(
                "series buffer has {} values, expected {dim}x{len}",
                values.len()
            ));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return contract(format!("non-finite value at flat index {pos}"));
        }
        Ok(Self { dim, len, values })
    }

    pub fn univariate(values: Vec<f64>) -> Result<Self> {
        let len = values.len();
        Self::new(1, len, values)
    }

    /// Builds a series from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        let len = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != len) {
            return contract("rows have different lengths");
        }
        Self::new(dim, len, rows.concat())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.len..(r + 1) * self.len]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.len)
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Multiplies every sample by `c`.
    pub fn scaled(&self, c: f64) -> Series {
        Series {
            dim: self.dim,
            len: self.len,
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    /// Keeps only the time steps listed in `keep` (ascending).
    fn select_steps(&self, keep: &[usize]) -> Series {
        let mut values = Vec::with_capacity(self.dim * keep.len());
        for row in self.rows() {
            values.extend(keep.iter().map(|&i| row[i]));
        }
        Series {
            dim: self.dim,
            len: keep.len(),
            values,
        }
    }
}

/// Arithmetic mean of equal-shape series.
pub fn mean_series<'a>(series: impl IntoIterator<Item = &'a Series>) -> Result<Series> {
    let mut iter = series.into_iter();
    let Some(first) = iter.next() else {
        return contract("cannot average an empty set");
    };
    let mut acc = first.values.clone();
    let mut n = 1usize;
    for s in iter {
        if s.dim != first.dim || s.len != first.len {
            return contract("cannot average series of different shapes");
        }
        for (a, v) in acc.iter_mut().zip(&s.values) {
            *a += v;
        }
        n += 1;
    }
    let inv = 1.0 / n as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    Series::new(first.dim, first.len, acc)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledItem {
    pub label: Label,
    pub series: Series,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub name: String,
    pub items: Vec<LabeledItem>,
}

impl LabeledDataset {
    pub fn new(name: impl Into<String>, items: Vec<LabeledItem>) -> Result<Self> {
        if items.is_empty() {
            return contract("dataset has no items");
        }
        Ok(Self {
            name: name.into(),
            items,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Distinct labels in ascending order.
    pub fn labels(&self) -> Vec<Label> {
        let mut labels: Vec<Label> = self.items.iter().map(|it| it.label).collect();
        labels.sort_unstable();
        labels.dedup();
        labels
    }

    /// Series length shared by every item, if any.
    pub fn common_len(&self) -> Option<usize> {
        let len = self.items[0].series.len();
        self.items
            .iter()
            .all(|it| it.series.len() == len)
            .then_some(len)
    }
}

/// Series of one label, all with identical shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassGroup {
    pub label: Label,
    pub series: Vec<Series>,
}

impl ClassGroup {
    pub fn new(label: Label, series: Vec<Series>) -> Result<Self> {
        if let Some(first) = series.first() {
            if series
                .iter()
                .any(|s| s.len() != first.len() || s.dim() != first.dim())
            {
                return contract(format!("class {label} mixes series shapes"));
            }
        }
        Ok(Self { label, series })
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    /// `(dim, len)` of the members.
    pub fn shape(&self) -> Option<(usize, usize)> {
        self.series.first().map(|s| (s.dim(), s.len()))
    }
}

/// Reads a UCR 2018 style TSV file: label first, then tab separated values.
///
/// Trailing `NaN` fields (the archive's padding for variable-length sets) are
/// dropped. Integer labels are kept as-is; if any label is not an integer,
/// all labels are replaced by dense ids in first-seen order.
pub fn parse_ucr_tsv(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .map(|s| {
            s.trim_end_matches("_TRAIN")
                .trim_end_matches("_TEST")
                .to_string()
        })
        .unwrap_or_default();
    parse_ucr_str(&text, &name, path)
}

pub(crate) fn parse_ucr_str(text: &str, name: &str, path: &Path) -> Result<LabeledDataset> {
    let perr = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut tokens = Vec::new();
    let mut series = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let sep = if line.contains('\t') { '\t' } else { ',' };
        let mut fields = line.split(sep).map(str::trim);
        let label = fields.next().unwrap_or_default().to_string();
        let mut values = Vec::new();
        for f in fields {
            let v: f64 = f
                .parse()
                .map_err(|_| perr(line_no, format!("non-numeric value {f:?}")))?;
            values.push(v);
        }
        while values.last().is_some_and(|v| v.is_nan()) {
            values.pop();
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(perr(line_no, "missing or non-finite value".into()));
        }
        if values.len() < 2 {
            return Err(perr(
                line_no,
                format!("need at least 2 values, found {}", values.len()),
            ));
        }
        tokens.push(label);
        series.push(Series::univariate(values)?);
    }
    if series.is_empty() {
        return Err(Error::Format(format!(
            "{} contains no records",
            path.display()
        )));
    }

    let as_int: Option<Vec<Label>> = tokens.iter().map(|t| parse_int_label(t)).collect();
    let labels = match as_int {
        Some(labels) => labels,
        None => {
            let mut ids: Vec<&str> = Vec::new();
            tokens
                .iter()
                .map(|t| match ids.iter().position(|s| *s == t) {
                    Some(p) => p as Label,
                    None => {
                        ids.push(t);
                        (ids.len() - 1) as Label
                    }
                })
                .collect()
        }
    };
    let items = labels
        .into_iter()
        .zip(series)
        .map(|(label, series)| LabeledItem { label, series })
        .collect();
    LabeledDataset::new(name, items)
}

fn parse_int_label(token: &str) -> Option<Label> {
    if let Ok(v) = token.parse::<Label>() {
        return Some(v);
    }
    // "1.0000000e+00" style labels appear in some archive exports
    let f: f64 = token.parse().ok()?;
    (f.fract() == 0.0 && f.abs() < 1e15).then_some(f as Label)
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mean series length, rounded half-up.
pub fn mean_length(dataset: &LabeledDataset) -> usize {
    let total: usize = dataset.items.iter().map(|it| it.series.len()).sum();
    let n = dataset.items.len();
    (2 * total + n) / (2 * n)
}

/// Brings every series to the rounded mean length. Item `i` draws from
/// ChaCha8 stream `i` seeded with `seed`, so the result is independent of
/// evaluation order.
pub fn equalize_lengths(dataset: &LabeledDataset, seed: u64) -> Result<LabeledDataset> {
    if dataset.is_empty() {
        return contract("cannot equalize an empty dataset");
    }
    equalize_to(dataset, mean_length(dataset), seed)
}

/// Brings every series to `target` samples, drawing randomness as in
/// [`equalize_lengths`]. Used to match a test split to its training split.
pub fn equalize_to(dataset: &LabeledDataset, target: usize, seed: u64) -> Result<LabeledDataset> {
    if target < 2 {
        return contract(format!("target length {target} is below 2"));
    }
    let items = dataset
        .items
        .iter()
        .enumerate()
        .map(|(i, it)| {
            let len = it.series.len();
            let series = match len.cmp(&target) {
                std::cmp::Ordering::Equal => it.series.clone(),
                std::cmp::Ordering::Greater => {
                    shrink_with(&it.series, target, &mut rng_for(seed, i as u64))?
                }
                std::cmp::Ordering::Less => {
                    grow_with(&it.series, target, &mut rng_for(seed, i as u64))?
                }
            };
            Ok(LabeledItem {
                label: it.label,
                series,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    LabeledDataset::new(dataset.name.clone(), items)
}

/// Removes `len - target_len` distinct interior time steps, chosen uniformly
/// without replacement. Both endpoints are always kept.
pub fn shrink_series(series: &Series, target_len: usize, seed: u64) -> Result<Series> {
    if target_len == series.len() {
        return Ok(series.clone());
    }
    shrink_with(series, target_len, &mut rng_for(seed, 0))
}

fn shrink_with(series: &Series, target_len: usize, rng: &mut ChaCha8Rng) -> Result<Series> {
    let len = series.len();
    if target_len >= len {
        return contract(format!(
            "shrink target {target_len} must be below length {len}"
        ));
    }
    if target_len < 2 {
        return contract("shrink target must keep both endpoints");
    }
    let interior = len - 2;
    let mut drop = vec![false; len];
    for i in index::sample(rng, interior, len - target_len) {
        drop[i + 1] = true;
    }
    let keep: Vec<usize> = (0..len).filter(|&i| !drop[i]).collect();
    Ok(series.select_steps(&keep))
}

/// Inserts `target_len - len` midpoints. Each round picks distinct gaps of the
/// current series uniformly without replacement, so no gap is split twice
/// until every gap has been split once.
pub fn grow_series(series: &Series, target_len: usize, seed: u64) -> Result<Series> {
    grow_with(series, target_len, &mut rng_for(seed, 0))
}

fn grow_with(series: &Series, target_len: usize, rng: &mut ChaCha8Rng) -> Result<Series> {
    if target_len <= series.len() {
        return contract(format!(
            "grow target {target_len} must exceed length {}",
            series.len()
        ));
    }
    let dim = series.dim();
    let mut rows: Vec<Vec<f64>> = series.rows().map(<[f64]>::to_vec).collect();
    let mut remaining = target_len - series.len();
    while remaining > 0 {
        let gaps = rows[0].len() - 1;
        let take = remaining.min(gaps);
        let mut split = vec![false; gaps];
        for g in index::sample(rng, gaps, take) {
            split[g] = true;
        }
        for row in rows.iter_mut() {
            let mut next = Vec::with_capacity(row.len() + take);
            for (j, &v) in row.iter().enumerate() {
                next.push(v);
                if j < gaps && split[j] {
                    next.push(0.5 * (v + row[j + 1]));
                }
            }
            *row = next;
        }
        remaining -= take;
    }
    debug_assert_eq!(rows.len(), dim);
    Series::from_rows(&rows)
}

/// Partitions an equalized dataset by label, labels ascending, members in
/// dataset order.
pub fn group_by_label(dataset: &LabeledDataset) -> Result<Vec<ClassGroup>> {
    let mut groups: BTreeMap<Label, Vec<Series>> = BTreeMap::new();
    for it in &dataset.items {
        groups.entry(it.label).or_default().push(it.series.clone());
    }
    groups
        .into_iter()
        .map(|(label, series)| ClassGroup::new(label, series))
        .collect()
}
