//! Records, windows and series, plus the preprocessing shared by every
//! layer of the engine: min-max scaling, lag-feature construction and the
//! historical/stream split.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Simulated time in microseconds.
pub type Tick = u64;

/// Number of variables in the default (wind-turbine temperature) schema.
pub const DEFAULT_VARIABLES: usize = 5;

/// Default lag: each prediction sees the five preceding observations.
pub const DEFAULT_LAG: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SeriesError {
    #[error("series is empty")]
    Empty,
    #[error("non-finite value at row {row}, column {column}")]
    NonFinite { row: usize, column: usize },
    #[error("row {row} has {found} values, expected {expected}")]
    WidthMismatch {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("timestamps must be strictly increasing (row {row})")]
    NotIncreasing { row: usize },
    #[error("dimension mismatch: expected {expected} variables, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("series of length {len} is too short for lag {lag}")]
    TooShort { len: usize, lag: usize },
    #[error("lag must be at least 1")]
    ZeroLag,
    #[error("train fraction {0} must lie strictly between 0 and 1")]
    InvalidFraction(f64),
    #[error("target column {target} out of range for {width} variables")]
    TargetOutOfRange { target: usize, width: usize },
}

/// One timestamped multivariate observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub timestamp: i64,
    pub values: Vec<f64>,
}

impl Record {
    pub fn new(timestamp: i64, values: Vec<f64>) -> Self {
        Self { timestamp, values }
    }
}

/// Descriptive metadata carried alongside a series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesMeta {
    pub source: String,
    pub seed: Option<u64>,
    pub names: Vec<String>,
    /// Index of the prediction variable within each record.
    pub target: usize,
}

impl SeriesMeta {
    /// Generic names `v0..v{width-1}` with the last variable as target.
    pub fn anonymous(source: impl Into<String>, width: usize) -> Self {
        Self {
            source: source.into(),
            seed: None,
            names: (0..width).map(|i| format!("v{i}")).collect(),
            target: width.saturating_sub(1),
        }
    }

    pub fn width(&self) -> usize {
        self.names.len()
    }
}

/// An ordered, validated sequence of records with strictly increasing
/// timestamps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    records: Vec<Record>,
    meta: SeriesMeta,
}

impl Series {
    pub fn new(records: Vec<Record>, meta: SeriesMeta) -> Result<Self, SeriesError> {
        let width = meta.width();
        if meta.target >= width {
            return Err(SeriesError::TargetOutOfRange {
                target: meta.target,
                width,
            });
        }
        validate_records(&records, width)?;
        Ok(Self { records, meta })
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn into_records(self) -> Vec<Record> {
        self.records
    }

    pub fn meta(&self) -> &SeriesMeta {
        &self.meta
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn width(&self) -> usize {
        self.meta.width()
    }

    pub fn target_index(&self) -> usize {
        self.meta.target
    }

    pub fn column(&self, index: usize) -> Vec<f64> {
        self.records.iter().map(|r| r.values[index]).collect()
    }

    pub fn target_values(&self) -> Vec<f64> {
        self.column(self.meta.target)
    }

    /// Replaces the value vectors while keeping timestamps and metadata.
    pub(crate) fn with_values(&self, values: Vec<Vec<f64>>) -> Self {
        let records = self
            .records
            .iter()
            .zip(values)
            .map(|(r, v)| Record::new(r.timestamp, v))
            .collect();
        Self {
            records,
            meta: self.meta.clone(),
        }
    }
}

pub(crate) fn validate_records(records: &[Record], width: usize) -> Result<(), SeriesError> {
    let mut previous: Option<i64> = None;
    for (row, record) in records.iter().enumerate() {
        if record.values.len() != width {
            return Err(SeriesError::WidthMismatch {
                row,
                expected: width,
                found: record.values.len(),
            });
        }
        if let Some(column) = record.values.iter().position(|v| !v.is_finite()) {
            return Err(SeriesError::NonFinite { row, column });
        }
        if let Some(prev) = previous {
            if record.timestamp <= prev {
                return Err(SeriesError::NotIncreasing { row });
            }
        }
        previous = Some(record.timestamp);
    }
    Ok(())
}

/// A throttled batch of stream records, the unit of pipeline work.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub index: u64,
    pub records: Vec<Record>,
    pub open_tick: Tick,
    pub close_tick: Tick,
}

impl TimeWindow {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Per-variable min-max scaler mapping the fitted range onto `[0, 1]`.
///
/// Values outside the fitted range are extrapolated linearly rather than
/// clipped, so drifted stream data keeps its excursion. A constant
/// (degenerate) variable maps to `0.0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    min: Vec<f64>,
    max: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(series: &Series) -> Result<Self, SeriesError> {
        Self::fit_records(series.records(), series.width())
    }

    pub fn fit_records(records: &[Record], width: usize) -> Result<Self, SeriesError> {
        if records.is_empty() {
            return Err(SeriesError::Empty);
        }
        let mut min = vec![f64::INFINITY; width];
        let mut max = vec![f64::NEG_INFINITY; width];
        for (row, record) in records.iter().enumerate() {
            if record.values.len() != width {
                return Err(SeriesError::WidthMismatch {
                    row,
                    expected: width,
                    found: record.values.len(),
                });
            }
            for (column, &v) in record.values.iter().enumerate() {
                if !v.is_finite() {
                    return Err(SeriesError::NonFinite { row, column });
                }
                min[column] = min[column].min(v);
                max[column] = max[column].max(v);
            }
        }
        Ok(Self { min, max })
    }

    pub fn from_bounds(min: Vec<f64>, max: Vec<f64>) -> Result<Self, SeriesError> {
        if min.len() != max.len() {
            return Err(SeriesError::DimensionMismatch {
                expected: min.len(),
                found: max.len(),
            });
        }
        for (column, (lo, hi)) in min.iter().zip(&max).enumerate() {
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                return Err(SeriesError::NonFinite { row: 0, column });
            }
        }
        Ok(Self { min, max })
    }

    pub fn min(&self) -> &[f64] {
        &self.min
    }

    pub fn max(&self) -> &[f64] {
        &self.max
    }

    pub fn width(&self) -> usize {
        self.min.len()
    }

    pub fn is_degenerate(&self, column: usize) -> bool {
        self.max[column] == self.min[column]
    }

    pub fn scale_value(&self, column: usize, value: f64) -> f64 {
        let range = self.max[column] - self.min[column];
        if range == 0.0 {
            0.0
        } else {
            (value - self.min[column]) / range
        }
    }

    pub fn unscale_value(&self, column: usize, value: f64) -> f64 {
        let range = self.max[column] - self.min[column];
        self.min[column] + value * range
    }

    pub fn transform_record(&self, record: &Record) -> Result<Record, SeriesError> {
        self.check_width(record.values.len())?;
        let values = record
            .values
            .iter()
            .enumerate()
            .map(|(c, &v)| self.scale_value(c, v))
            .collect();
        Ok(Record::new(record.timestamp, values))
    }

    pub fn transform(&self, series: &Series) -> Result<Series, SeriesError> {
        self.check_width(series.width())?;
        let values = series
            .records()
            .iter()
            .map(|r| {
                r.values
                    .iter()
                    .enumerate()
                    .map(|(c, &v)| self.scale_value(c, v))
                    .collect()
            })
            .collect();
        Ok(series.with_values(values))
    }

    pub fn inverse_transform(&self, series: &Series) -> Result<Series, SeriesError> {
        self.check_width(series.width())?;
        let values = series
            .records()
            .iter()
            .map(|r| {
                r.values
                    .iter()
                    .enumerate()
                    .map(|(c, &v)| self.unscale_value(c, v))
                    .collect()
            })
            .collect();
        Ok(series.with_values(values))
    }

    fn check_width(&self, found: usize) -> Result<(), SeriesError> {
        if found != self.width() {
            return Err(SeriesError::DimensionMismatch {
                expected: self.width(),
                found,
            });
        }
        Ok(())
    }
}

/// Lagged supervised samples: row `j` holds the observations at steps
/// `j..j+lag` flattened timestep-major, and target `j` is the target
/// variable at step `j+lag`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisedSet {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    pub lag: usize,
    pub variables: usize,
}

impl SupervisedSet {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn input_width(&self) -> usize {
        self.lag * self.variables
    }
}

pub fn make_supervised(series: &Series, lag: usize) -> Result<SupervisedSet, SeriesError> {
    supervised_from_records(series.records(), series.width(), series.target_index(), lag)
}

/// Same as [`make_supervised`] over a raw record slice, used for windows
/// with carried-over lag context.
pub fn supervised_from_records(
    records: &[Record],
    variables: usize,
    target: usize,
    lag: usize,
) -> Result<SupervisedSet, SeriesError> {
    if lag == 0 {
        return Err(SeriesError::ZeroLag);
    }
    if target >= variables {
        return Err(SeriesError::TargetOutOfRange {
            target,
            width: variables,
        });
    }
    if records.len() <= lag {
        return Err(SeriesError::TooShort {
            len: records.len(),
            lag,
        });
    }
    let samples = records.len() - lag;
    let mut inputs = Vec::with_capacity(samples);
    let mut targets = Vec::with_capacity(samples);
    for j in 0..samples {
        let mut row = Vec::with_capacity(lag * variables);
        for record in &records[j..j + lag] {
            if record.values.len() != variables {
                return Err(SeriesError::DimensionMismatch {
                    expected: variables,
                    found: record.values.len(),
                });
            }
            row.extend_from_slice(&record.values);
        }
        inputs.push(row);
        targets.push(records[j + lag].values[target]);
    }
    Ok(SupervisedSet {
        inputs,
        targets,
        lag,
        variables,
    })
}

/// Splits off the first `floor(fraction * len)` records as the historical
/// part; the remainder is the stream.
pub fn split(series: &Series, train_fraction: f64) -> Result<(Series, Series), SeriesError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(SeriesError::InvalidFraction(train_fraction));
    }
    let cut = (train_fraction * series.len() as f64).floor() as usize;
    let (head, tail) = series.records().split_at(cut);
    Ok((
        Series {
            records: head.to_vec(),
            meta: series.meta.clone(),
        },
        Series {
            records: tail.to_vec(),
            meta: series.meta.clone(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn univariate(values: &[f64]) -> Series {
        let records = values
            .iter()
            .enumerate()
            .map(|(i, &v)| Record::new(i as i64, vec![v]))
            .collect();
        Series::new(records, SeriesMeta::anonymous("test", 1)).unwrap()
    }

    #[test]
    fn scaler_uses_observed_extremes() {
        let s = univariate(&[2.0, 4.0, 6.0]);
        let scaler = MinMaxScaler::fit(&s).unwrap();
        assert_eq!(scaler.min(), &[2.0]);
        assert_eq!(scaler.max(), &[6.0]);
        let t = scaler.transform(&s).unwrap();
        assert_eq!(t.column(0), vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn constant_column_maps_to_zero() {
        let s = univariate(&[5.0, 5.0, 5.0]);
        let scaler = MinMaxScaler::fit(&s).unwrap();
        assert!(scaler.is_degenerate(0));
        assert_eq!(scaler.transform(&s).unwrap().column(0), vec![0.0; 3]);
    }

    #[test]
    fn unit_interval_column_is_identity() {
        let s = univariate(&[0.0, 1.0]);
        let scaler = MinMaxScaler::fit(&s).unwrap();
        assert_eq!(scaler.transform(&s).unwrap().column(0), vec![0.0, 1.0]);
    }

    #[test]
    fn out_of_range_values_are_not_clipped() {
        let scaler = MinMaxScaler::from_bounds(vec![2.0], vec![6.0]).unwrap();
        assert_eq!(scaler.scale_value(0, 8.0), 1.5);
    }

    #[test]
    fn empty_and_non_finite_rejected() {
        assert_eq!(
            MinMaxScaler::fit_records(&[], 1).unwrap_err(),
            SeriesError::Empty
        );
        let bad = [Record::new(0, vec![f64::NAN])];
        assert!(matches!(
            MinMaxScaler::fit_records(&bad, 1),
            Err(SeriesError::NonFinite { row: 0, column: 0 })
        ));
    }

    #[test]
    fn transform_dimension_mismatch() {
        let scaler = MinMaxScaler::from_bounds(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let s = univariate(&[1.0, 2.0]);
        assert!(matches!(
            scaler.transform(&s),
            Err(SeriesError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn supervised_univariate() {
        let s = univariate(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        let set = make_supervised(&s, 5).unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set.inputs[0], vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(set.targets[0], 6.0);
        assert_eq!(set.inputs[1], vec![2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(set.targets[1], 7.0);
    }

    #[test]
    fn supervised_multivariate_single_sample() {
        // value = 10 * step + variable, so every slot is identifiable.
        let records: Vec<Record> = (0..6)
            .map(|t| Record::new(t, (0..5).map(|v| (10 * t + v) as f64).collect()))
            .collect();
        let s = Series::new(records, SeriesMeta::anonymous("test", 5)).unwrap();
        let set = make_supervised(&s, 5).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.inputs[0].len(), 25);
        let expected: Vec<f64> = (0..5)
            .flat_map(|t| (0..5).map(move |v| (10 * t + v) as f64))
            .collect();
        assert_eq!(set.inputs[0], expected);
        // target is the last variable at step 5
        assert_eq!(set.targets[0], 54.0);
    }

    #[test]
    fn supervised_requires_more_than_lag() {
        let s = univariate(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(
            make_supervised(&s, 5).unwrap_err(),
            SeriesError::TooShort { len: 5, lag: 5 }
        );
    }

    #[test]
    fn split_uses_floor() {
        let s = univariate(&(0..10).map(f64::from).collect::<Vec<_>>());
        let (a, b) = split(&s, 0.5).unwrap();
        assert_eq!((a.len(), b.len()), (5, 5));
        let s = univariate(&[1.0, 2.0, 3.0]);
        let (a, b) = split(&s, 0.4).unwrap();
        assert_eq!((a.len(), b.len()), (1, 2));
        assert!(split(&s, 1.0).is_err());
        assert!(split(&s, 0.0).is_err());
    }

    #[test]
    fn published_scale_split() {
        let s = univariate(&vec![0.0; 50_000]);
        let (a, b) = split(&s, 0.4).unwrap();
        assert_eq!((a.len(), b.len()), (20_000, 30_000));
    }

    #[test]
    fn series_rejects_unordered_timestamps() {
        let records = vec![Record::new(2, vec![0.0]), Record::new(1, vec![0.0])];
        assert_eq!(
            Series::new(records, SeriesMeta::anonymous("t", 1)).unwrap_err(),
            SeriesError::NotIncreasing { row: 1 }
        );
    }
}
