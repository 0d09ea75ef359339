//! Price ingestion, calendar alignment, labels, normalization and windowing.
//!
//! The pipeline runs `load_prices` → `align_and_fill` → `make_labels` →
//! `minmax_normalize` → `window_dataset` → `chrono_split`. [`prepare`] wires
//! the whole chain together for the common case.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use ndarray::{s, Array1, Array2, Array3, ArrayView2};

use crate::error::{Error, Result};

/// Number of model input features per stock and day: open, high, low, volume.
pub const N_FEATURES: usize = 4;
pub const FEATURE_NAMES: [&str; N_FEATURES] = ["open", "high", "low", "volume"];

/// Values outside the training range are clamped to this interval after scaling.
pub const CLAMP_RANGE: (f64, f64) = (-0.5, 1.5);

pub const DATE_FORMAT: &str = "%Y-%m-%d";

/// Ordered registry of stock identifiers. Position in `ids` is the node index
/// shared by every matrix in the crate.
#[derive(Debug, Clone, PartialEq)]
pub struct StockUniverse {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl StockUniverse {
    pub fn new<I, S>(ids: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let ids: Vec<String> = ids.into_iter().map(Into::into).collect();
        if ids.len() < 2 {
            return Err(Error::Universe(format!("need at least 2 stocks, got {}", ids.len())));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if id.is_empty() {
                return Err(Error::Universe("empty stock identifier".into()));
            }
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::Universe(format!("duplicate stock identifier `{id}`")));
            }
        }
        Ok(Self { ids, index })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn require(&self, id: &str) -> Result<usize> {
        self.position(id).ok_or_else(|| Error::UnknownStock(id.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriceRow {
    pub date: NaiveDate,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub volume: f64,
    pub close: f64,
}

impl PriceRow {
    pub fn features(&self) -> [f64; N_FEATURES] {
        [self.open, self.high, self.low, self.volume]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawSeries {
    pub stock_id: String,
    pub rows: Vec<PriceRow>,
}

/// Result of [`load_prices`]: parsed series in universe order plus the ids
/// that were present in the file but not in the universe.
#[derive(Debug, Clone)]
pub struct PriceLoad {
    pub series: Vec<RawSeries>,
    pub unknown_ids: Vec<String>,
}

const PRICE_COLUMNS: [&str; 7] = ["date", "stock_id", "open", "high", "low", "volume", "close"];

/// Reads a comma-separated prices file. Columns are located by header name,
/// so any column order is accepted.
pub fn load_prices(path: impl AsRef<Path>, universe: &StockUniverse) -> Result<PriceLoad> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let malformed = |line: u64, msg: String| Error::Malformed { path: path.to_path_buf(), line, msg };

    let headers = reader.headers().map_err(|e| malformed(1, e.to_string()))?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::NoRows { path: path.to_path_buf() });
    }
    let mut col = [0usize; 7];
    for (slot, name) in col.iter_mut().zip(PRICE_COLUMNS) {
        *slot =
            headers.iter().position(|h| h == name).ok_or_else(|| malformed(1, format!("missing column `{name}`")))?;
    }

    let mut rows: Vec<Vec<PriceRow>> = vec![Vec::new(); universe.len()];
    let mut unknown = BTreeSet::new();
    let mut n_rows = 0usize;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            malformed(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        n_rows += 1;
        let field = |i: usize| record.get(col[i]).unwrap_or("");
        let id = field(1);
        let Some(stock) = universe.position(id) else {
            if unknown.insert(id.to_string()) {
                log::warn!("{}:{line}: unknown stock id `{id}` skipped", path.display());
            }
            continue;
        };
        let date = NaiveDate::parse_from_str(field(0), DATE_FORMAT)
            .map_err(|e| malformed(line, format!("bad date `{}`: {e}", field(0))))?;
        let mut num = [0.0; 5];
        for (k, v) in num.iter_mut().enumerate() {
            let raw = field(k + 2);
            *v = raw
                .parse::<f64>()
                .map_err(|_| malformed(line, format!("bad {} value `{raw}`", PRICE_COLUMNS[k + 2])))?;
            if !v.is_finite() {
                return Err(malformed(line, format!("non-finite {}", PRICE_COLUMNS[k + 2])));
            }
        }
        let [open, high, low, volume, close] = num;
        for (name, price) in [("open", open), ("high", high), ("low", low), ("close", close)] {
            if price <= 0.0 {
                return Err(malformed(line, format!("nonpositive {name} price {price}")));
            }
        }
        if volume < 0.0 {
            return Err(malformed(line, format!("negative volume {volume}")));
        }
        rows[stock].push(PriceRow { date, open, high, low, volume, close });
    }
    if n_rows == 0 {
        return Err(Error::NoRows { path: path.to_path_buf() });
    }

    let mut series = Vec::new();
    for (i, mut r) in rows.into_iter().enumerate() {
        if r.is_empty() {
            continue;
        }
        r.sort_by_key(|row| row.date);
        if let Some(w) = r.windows(2).find(|w| w[0].date == w[1].date) {
            return Err(Error::Invalid(format!("stock `{}` has duplicate rows for {}", universe.id(i), w[0].date)));
        }
        series.push(RawSeries { stock_id: universe.id(i).to_string(), rows: r });
    }
    Ok(PriceLoad { series, unknown_ids: unknown.into_iter().collect() })
}

/// Writes series in the canonical prices layout.
pub fn write_prices(path: impl AsRef<Path>, series: &[RawSeries]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Invalid(e.to_string()))?;
    let io = |e: csv::Error| Error::Invalid(format!("{}: {e}", path.display()));
    w.write_record(PRICE_COLUMNS).map_err(io)?;
    for s in series {
        for r in &s.rows {
            w.write_record([
                r.date.format(DATE_FORMAT).to_string(),
                s.stock_id.clone(),
                r.open.to_string(),
                r.high.to_string(),
                r.low.to_string(),
                r.volume.to_string(),
                r.close.to_string(),
            ])
            .map_err(io)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Calendar-aligned panel before normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedPanel {
    pub calendar: Vec<NaiveDate>,
    /// T×N×F raw features.
    pub raw: Array3<f64>,
    /// T×N closing prices.
    pub close: Array2<f64>,
}

impl AlignedPanel {
    pub fn n_days(&self) -> usize {
        self.calendar.len()
    }

    /// Converts back to one series per stock covering the full calendar.
    pub fn to_series(&self, universe: &StockUniverse) -> Vec<RawSeries> {
        (0..universe.len())
            .map(|s| RawSeries {
                stock_id: universe.id(s).to_string(),
                rows: self
                    .calendar
                    .iter()
                    .enumerate()
                    .map(|(t, &date)| PriceRow {
                        date,
                        open: self.raw[[t, s, 0]],
                        high: self.raw[[t, s, 1]],
                        low: self.raw[[t, s, 2]],
                        volume: self.raw[[t, s, 3]],
                        close: self.close[[t, s]],
                    })
                    .collect(),
            })
            .collect()
    }
}

/// Aligns all series onto the union calendar. Missing days repeat the most
/// recent prior row; days before a stock's first row repeat its first row.
pub fn align_and_fill(series: &[RawSeries], universe: &StockUniverse) -> Result<AlignedPanel> {
    let mut by_stock: Vec<Option<&RawSeries>> = vec![None; universe.len()];
    for s in series {
        let i = universe.require(&s.stock_id)?;
        by_stock[i] = Some(s);
    }
    if series.iter().all(|s| s.rows.is_empty()) {
        return Err(Error::Invalid("no series has any rows".into()));
    }
    for (i, s) in by_stock.iter().enumerate() {
        if s.is_none_or(|s| s.rows.is_empty()) {
            return Err(Error::EmptySeries(universe.id(i).to_string()));
        }
    }

    let calendar: Vec<NaiveDate> =
        series.iter().flat_map(|s| s.rows.iter().map(|r| r.date)).collect::<BTreeSet<_>>().into_iter().collect();
    let t_len = calendar.len();
    let n = universe.len();
    let mut raw = Array3::zeros((t_len, n, N_FEATURES));
    let mut close = Array2::zeros((t_len, n));

    for (s, series) in by_stock.iter().enumerate() {
        let rows = &series.expect("checked above").rows;
        let mut next = 0;
        let mut current = rows[0];
        for (t, date) in calendar.iter().enumerate() {
            while next < rows.len() && rows[next].date <= *date {
                current = rows[next];
                next += 1;
            }
            for (f, v) in current.features().into_iter().enumerate() {
                raw[[t, s, f]] = v;
            }
            close[[t, s]] = current.close;
        }
    }
    Ok(AlignedPanel { calendar, raw, close })
}

/// `labels[t][s] = 1` iff the close rose from day t−1 to day t. Day 0 is 0.
pub fn make_labels(close: ArrayView2<f64>) -> Result<Array2<u8>> {
    let (t_len, n) = close.dim();
    if t_len < 2 {
        return Err(Error::Invalid(format!("labels need at least 2 days, got {t_len}")));
    }
    let mut labels = Array2::zeros((t_len, n));
    for t in 1..t_len {
        for s in 0..n {
            labels[[t, s]] = u8::from(close[[t, s]] > close[[t - 1, s]]);
        }
    }
    Ok(labels)
}

/// Per-(stock, feature) scaling ranges measured on the training days.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    /// N×F minima.
    pub min: Array2<f64>,
    /// N×F maxima.
    pub max: Array2<f64>,
    pub train_end: usize,
}

impl Normalization {
    pub fn scale(&self, s: usize, f: usize, x: f64) -> f64 {
        let (lo, hi) = (self.min[[s, f]], self.max[[s, f]]);
        if hi > lo {
            (x - lo) / (hi - lo)
        } else {
            0.0
        }
    }

    pub fn unscale(&self, s: usize, f: usize, y: f64) -> f64 {
        let (lo, hi) = (self.min[[s, f]], self.max[[s, f]]);
        lo + y * (hi - lo)
    }

    /// Writes `stock_id,feature,min,max` rows.
    pub fn write_csv(&self, path: impl AsRef<Path>, universe: &StockUniverse) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("stock_id,feature,min,max\n");
        for s in 0..self.min.nrows() {
            for (f, name) in FEATURE_NAMES.iter().enumerate() {
                out.push_str(&format!("{},{name},{:e},{:e}\n", universe.id(s), self.min[[s, f]], self.max[[s, f]]));
            }
        }
        let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Min-max scales each (stock, feature) column using days `[0, train_end)`.
/// Later days are scaled with the same range and clamped to [`CLAMP_RANGE`].
pub fn minmax_normalize(raw: &Array3<f64>, train_end: usize) -> Result<(Array3<f64>, Normalization)> {
    let (t_len, n, f_len) = raw.dim();
    if train_end < 2 || train_end > t_len {
        return Err(Error::Invalid(format!("train_end {train_end} outside [2, {t_len}]")));
    }
    let train = raw.slice(s![..train_end, .., ..]);
    let mut min = Array2::from_elem((n, f_len), f64::INFINITY);
    let mut max = Array2::from_elem((n, f_len), f64::NEG_INFINITY);
    for day in train.outer_iter() {
        for ((s, f), &v) in day.indexed_iter() {
            min[[s, f]] = min[[s, f]].min(v);
            max[[s, f]] = max[[s, f]].max(v);
        }
    }
    let norm = Normalization { min, max, train_end };
    let mut out = Array3::zeros((t_len, n, f_len));
    for ((t, s, f), v) in out.indexed_iter_mut() {
        let y = norm.scale(s, f, raw[[t, s, f]]);
        *v = if t < train_end { y } else { y.clamp(CLAMP_RANGE.0, CLAMP_RANGE.1) };
    }
    Ok((out, norm))
}

/// Normalized features, labels and the day-index split boundaries.
#[derive(Debug, Clone)]
pub struct PanelDataset {
    pub calendar: Vec<NaiveDate>,
    /// T×N×F normalized features.
    pub features: Array3<f64>,
    /// T×N binary labels.
    pub labels: Array2<u8>,
    /// Target days `< train_end` are training, `< val_end` validation, rest test.
    pub split: (usize, usize),
}

impl PanelDataset {
    pub fn n_days(&self) -> usize {
        self.features.dim().0
    }

    pub fn n_stocks(&self) -> usize {
        self.features.dim().1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    /// Target day index d.
    pub day: usize,
    /// P×N×F features of days d−P … d−1.
    pub window: Array3<f64>,
    /// N labels of day d.
    pub labels: Array1<u8>,
}

pub fn window_dataset(panel: &PanelDataset, lag: usize) -> Result<Vec<WindowSample>> {
    window_range(&panel.features, &panel.labels, lag)
}

fn window_range(features: &Array3<f64>, labels: &Array2<u8>, lag: usize) -> Result<Vec<WindowSample>> {
    let t_len = features.dim().0;
    if lag == 0 {
        return Err(Error::Invalid("lag must be at least 1".into()));
    }
    if t_len <= lag {
        return Err(Error::Invalid(format!("{t_len} days is not enough for lag {lag}")));
    }
    Ok((lag..t_len)
        .map(|d| WindowSample {
            day: d,
            window: features.slice(s![d - lag..d, .., ..]).to_owned(),
            labels: labels.row(d).to_owned(),
        })
        .collect())
}

/// Sizes of the 70/10/20 chronological split of `m` samples.
pub fn split_sizes(m: usize) -> Result<(usize, usize, usize)> {
    if m < 10 {
        return Err(Error::Invalid(format!("chronological split needs at least 10 samples, got {m}")));
    }
    let train = (7 * m + 5) / 10;
    let val = (m + 5) / 10;
    Ok((train, val, m - train - val))
}

#[derive(Debug, Clone)]
pub struct Splits<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

pub fn chrono_split<T>(samples: Vec<T>) -> Result<Splits<T>> {
    let (n_train, n_val, _) = split_sizes(samples.len())?;
    let mut train = samples;
    let mut val = train.split_off(n_train);
    let test = val.split_off(n_val);
    Ok(Splits { train, val, test })
}

/// Everything a training or evaluation run needs from the raw prices.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub panel: PanelDataset,
    pub normalization: Normalization,
    pub samples: Splits<WindowSample>,
}

/// Runs alignment, labeling, normalization on the training range implied by
/// the 70/10/20 sample split, windowing and splitting.
pub fn prepare(series: &[RawSeries], universe: &StockUniverse, lag: usize) -> Result<Prepared> {
    let aligned = align_and_fill(series, universe)?;
    let t_len = aligned.n_days();
    if lag == 0 || t_len <= lag {
        return Err(Error::Invalid(format!("{t_len} days is not enough for lag {lag}")));
    }
    let (n_train, n_val, _) = split_sizes(t_len - lag)?;
    let train_end = lag + n_train;
    let val_end = train_end + n_val;
    let labels = make_labels(aligned.close.view())?;
    let (features, normalization) = minmax_normalize(&aligned.raw, train_end)?;
    let panel = PanelDataset { calendar: aligned.calendar, features, labels, split: (train_end, val_end) };
    let samples = chrono_split(window_dataset(&panel, lag)?)?;
    debug_assert!(samples.train.last().is_none_or(|s| s.day < train_end));
    Ok(Prepared { panel, normalization, samples })
}
