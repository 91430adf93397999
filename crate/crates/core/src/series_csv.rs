//! CSV ingestion and export of series.
//!
//! Files carry a header row. One column holds timestamps (integer ticks or
//! ISO-8601); the configured variable columns are read in schema order and
//! one of them is the prediction target. Extra columns are ignored.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::drift::TURBINE_VARIABLES;
use crate::timeseries::{validate_records, Record, Series, SeriesError, SeriesMeta};

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("file contains no data rows")]
    Empty,
    #[error("line {line}: {source}")]
    Invalid { line: u64, source: SeriesError },
    #[error("target `{0}` is not one of the variable columns")]
    UnknownTarget(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TimestampFormat {
    #[default]
    Ticks,
    /// RFC 3339 / ISO-8601 date-times, stored as epoch seconds.
    Iso8601,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub timestamp_column: String,
    pub timestamp_format: TimestampFormat,
    pub variables: Vec<String>,
    pub target: String,
}

impl CsvSchema {
    /// Column names of the public turbine SCADA export.
    pub fn turbine() -> Self {
        Self {
            timestamp_column: "Date_time".into(),
            timestamp_format: TimestampFormat::Iso8601,
            variables: TURBINE_VARIABLES.iter().map(|s| s.to_string()).collect(),
            target: "Ot_avg".into(),
        }
    }

    /// Schema matching what [`write_csv`] emits for `series`.
    pub fn for_series(series: &Series, timestamp_format: TimestampFormat) -> Self {
        let meta = series.meta();
        Self {
            timestamp_column: "timestamp".into(),
            timestamp_format,
            variables: meta.names.clone(),
            target: meta.names[meta.target].clone(),
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Series, CsvError> {
    let path = path.as_ref();
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    parse_csv(&text, schema, &path.display().to_string())
}

pub fn parse_csv(text: &str, schema: &CsvSchema, source: &str) -> Result<Series, CsvError> {
    let target = schema
        .variables
        .iter()
        .position(|v| v == &schema.target)
        .ok_or_else(|| CsvError::UnknownTarget(schema.target.clone()))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CsvError::MissingColumn(name.to_string()))
    };
    let ts_col = find(&schema.timestamp_column)?;
    let var_cols = schema
        .variables
        .iter()
        .map(|v| find(v))
        .collect::<Result<Vec<_>, _>>()?;

    let mut records = Vec::new();
    let mut lines = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let field = |c: usize| row.get(c).unwrap_or("");
        let timestamp = parse_timestamp(field(ts_col), schema.timestamp_format)
            .map_err(|message| CsvError::Parse { line, message })?;
        let values = var_cols
            .iter()
            .zip(&schema.variables)
            .map(|(&c, name)| {
                field(c).parse::<f64>().map_err(|_| CsvError::Parse {
                    line,
                    message: format!("column `{name}`: cannot parse `{}` as a number", field(c)),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        records.push(Record::new(timestamp, values));
        lines.push(line);
    }
    if records.is_empty() {
        return Err(CsvError::Empty);
    }
    let width = schema.variables.len();
    if let Err(e) = validate_records(&records, width) {
        let row = match &e {
            SeriesError::NonFinite { row, .. }
            | SeriesError::WidthMismatch { row, .. }
            | SeriesError::NotIncreasing { row } => *row,
            _ => 0,
        };
        return Err(CsvError::Invalid {
            line: lines[row],
            source: e,
        });
    }
    let meta = SeriesMeta {
        source: source.to_string(),
        seed: None,
        names: schema.variables.clone(),
        target,
    };
    Series::new(records, meta).map_err(|source| CsvError::Invalid { line: 0, source })
}

fn parse_timestamp(raw: &str, format: TimestampFormat) -> Result<i64, String> {
    match format {
        TimestampFormat::Ticks => raw
            .parse::<i64>()
            .map_err(|_| format!("cannot parse tick `{raw}`")),
        TimestampFormat::Iso8601 => {
            if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
                return Ok(dt.timestamp());
            }
            for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S"] {
                if let Ok(dt) = NaiveDateTime::parse_from_str(raw, fmt) {
                    return Ok(dt.and_utc().timestamp());
                }
            }
            if let Ok(d) = NaiveDate::parse_from_str(raw, "%Y-%m-%d") {
                return Ok(d
                    .and_hms_opt(0, 0, 0)
                    .expect("midnight")
                    .and_utc()
                    .timestamp());
            }
            Err(format!("cannot parse ISO-8601 timestamp `{raw}`"))
        }
    }
}

fn format_timestamp(ts: i64, format: TimestampFormat) -> String {
    match format {
        TimestampFormat::Ticks => ts.to_string(),
        TimestampFormat::Iso8601 => DateTime::<Utc>::from_timestamp(ts, 0)
            .map(|d| d.to_rfc3339_opts(SecondsFormat::Secs, true))
            .unwrap_or_else(|| ts.to_string()),
    }
}

/// Writes `timestamp,<variable names...>` with full float precision.
pub fn write_csv<W: Write>(
    series: &Series,
    out: W,
    format: TimestampFormat,
) -> Result<(), CsvError> {
    let mut writer = csv::Writer::from_writer(out);
    let mut header = vec!["timestamp".to_string()];
    header.extend(series.meta().names.iter().cloned());
    writer.write_record(&header)?;
    for r in series.records() {
        let mut row = vec![format_timestamp(r.timestamp, format)];
        row.extend(r.values.iter().map(|v| format!("{v:?}")));
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn save_csv(
    series: &Series,
    path: impl AsRef<Path>,
    format: TimestampFormat,
) -> Result<(), CsvError> {
    write_csv(series, File::create(path)?, format)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> CsvSchema {
        CsvSchema {
            timestamp_column: "t".into(),
            timestamp_format: TimestampFormat::Ticks,
            variables: vec!["a".into(), "b".into()],
            target: "b".into(),
        }
    }

    #[test]
    fn parses_ticks_and_ignores_extra_columns() {
        let text = "t,a,extra,b\n1,0.5,x,2\n2,0.75,y,3\n";
        let s = parse_csv(text, &schema(), "mem").unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.records()[1].values, vec![0.75, 3.0]);
        assert_eq!(s.target_index(), 1);
    }

    #[test]
    fn empty_file_is_an_error() {
        assert!(matches!(
            parse_csv("t,a,b\n", &schema(), "mem"),
            Err(CsvError::Empty)
        ));
    }

    #[test]
    fn missing_column_named() {
        match parse_csv("t,a\n1,2\n", &schema(), "mem") {
            Err(CsvError::MissingColumn(c)) => assert_eq!(c, "b"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_number_reports_line() {
        match parse_csv("t,a,b\n1,1,1\n2,oops,1\n", &schema(), "mem") {
            Err(CsvError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn shuffled_timestamps_rejected_with_line() {
        match parse_csv("t,a,b\n1,1,1\n3,1,1\n2,1,1\n", &schema(), "mem") {
            Err(CsvError::Invalid { line, source }) => {
                assert_eq!(line, 4);
                assert_eq!(source, SeriesError::NotIncreasing { row: 2 });
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn iso_timestamps() {
        let mut sc = schema();
        sc.timestamp_format = TimestampFormat::Iso8601;
        let text = "t,a,b\n2017-01-01T00:00:00+01:00,1,1\n2017-01-01 00:10:00,1,1\n";
        let s = parse_csv(text, &sc, "mem").unwrap();
        assert_eq!(s.records()[0].timestamp, 1_483_225_200);
        assert_eq!(s.records()[1].timestamp, 1_483_229_400);
    }

    #[test]
    fn write_then_read_roundtrips() {
        let text = "t,a,b\n10,0.1,0.30000000000000004\n20,-1e-300,5\n";
        let s = parse_csv(text, &schema(), "mem").unwrap();
        for fmt in [TimestampFormat::Ticks, TimestampFormat::Iso8601] {
            let mut buf = Vec::new();
            write_csv(&s, &mut buf, fmt).unwrap();
            let back = parse_csv(
                std::str::from_utf8(&buf).unwrap(),
                &CsvSchema::for_series(&s, fmt),
                "mem",
            )
            .unwrap();
            assert_eq!(back.records(), s.records());
        }
    }
}
