use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use super::schema::{FactorSchema, FactorValues};
use crate::error::{Error, Result};

/// One production lot: the settings it ran with and which defects showed up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductionRecord {
    pub record_id: String,
    pub timestamp: NaiveDateTime,
    pub factor_values: FactorValues,
    pub defect_flags: BTreeMap<String, bool>,
}

const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S%.f";

pub fn parse_timestamp(raw: &str) -> Option<NaiveDateTime> {
    let raw = raw.trim();
    if let Ok(t) = NaiveDateTime::parse_from_str(raw, TIMESTAMP_FORMAT) {
        return Some(t);
    }
    if let Ok(t) = DateTime::parse_from_rfc3339(raw) {
        return Some(t.naive_utc());
    }
    if let Ok(t) = NaiveDateTime::parse_from_str(raw, "%Y-%m-%d %H:%M:%S%.f") {
        return Some(t);
    }
    NaiveDate::parse_from_str(raw, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
}

pub fn format_timestamp(t: &NaiveDateTime) -> String {
    t.format(TIMESTAMP_FORMAT).to_string()
}

fn parse_flag(raw: &str) -> Option<bool> {
    match raw.trim() {
        "0" | "false" => Some(false),
        "1" | "true" => Some(true),
        _ => None,
    }
}

/// Reads production records from CSV.
///
/// The header must be `record_id,timestamp,<schema factors in order>,<defect columns>`.
/// Row numbers in errors count data rows from 1.
pub fn load_records<R: Read>(source: R, schema: &FactorSchema) -> Result<Vec<ProductionRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let header = reader
        .headers()
        .map_err(|e| Error::Csv {
            row: 0,
            column: "header".into(),
            message: e.to_string(),
        })?
        .clone();

    let nf = schema.factors.len();
    let expect_prefix: Vec<&str> = ["record_id", "timestamp"]
        .into_iter()
        .chain(schema.factors.iter().map(|f| f.name.as_str()))
        .collect();
    for (i, want) in expect_prefix.iter().enumerate() {
        match header.get(i) {
            Some(got) if got == *want => {}
            got => {
                return Err(Error::Csv {
                    row: 0,
                    column: want.to_string(),
                    message: format!("header column {} is {:?}, expected `{want}`", i + 1, got),
                })
            }
        }
    }
    let defect_names: Vec<String> = header.iter().skip(2 + nf).map(str::to_string).collect();

    let mut records = Vec::new();
    for (idx, row) in reader.records().enumerate() {
        let row_no = idx + 1;
        let row = row.map_err(|e| Error::Csv {
            row: row_no,
            column: "*".into(),
            message: e.to_string(),
        })?;
        if row.len() != header.len() {
            return Err(Error::Csv {
                row: row_no,
                column: "*".into(),
                message: format!("expected {} fields, found {}", header.len(), row.len()),
            });
        }
        let record_id = row[0].to_string();
        let timestamp = parse_timestamp(&row[1]).ok_or_else(|| Error::Csv {
            row: row_no,
            column: "timestamp".into(),
            message: format!("`{}` is not an ISO-8601 timestamp", &row[1]),
        })?;
        let mut factor_values = FactorValues::new();
        for (j, f) in schema.factors.iter().enumerate() {
            let raw = &row[2 + j];
            let value = f.parse(raw).map_err(|msg| {
                if f.is_continuous() {
                    Error::Csv {
                        row: row_no,
                        column: f.name.clone(),
                        message: msg,
                    }
                } else {
                    Error::UnknownLabel {
                        row: row_no,
                        factor: f.name.clone(),
                        label: msg,
                    }
                }
            })?;
            factor_values.insert(f.name.clone(), value);
        }
        let mut defect_flags = BTreeMap::new();
        for (j, d) in defect_names.iter().enumerate() {
            let raw = &row[2 + nf + j];
            let flag = parse_flag(raw).ok_or_else(|| Error::Csv {
                row: row_no,
                column: d.clone(),
                message: format!("`{raw}` is not 0/1"),
            })?;
            defect_flags.insert(d.clone(), flag);
        }
        records.push(ProductionRecord {
            record_id,
            timestamp,
            factor_values,
            defect_flags,
        });
    }
    Ok(records)
}

pub fn load_records_path(
    path: impl AsRef<Path>,
    schema: &FactorSchema,
) -> Result<Vec<ProductionRecord>> {
    let file = std::fs::File::open(path)?;
    load_records(std::io::BufReader::new(file), schema)
}

/// Writes records in the same layout [`load_records`] reads. Defect columns are the
/// union of defect names, sorted.
pub fn write_records<W: Write>(
    sink: W,
    schema: &FactorSchema,
    records: &[ProductionRecord],
) -> Result<()> {
    let mut defects: Vec<&String> = records.iter().flat_map(|r| r.defect_flags.keys()).collect();
    defects.sort();
    defects.dedup();

    let mut w = csv::Writer::from_writer(sink);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    let mut header = vec!["record_id".to_string(), "timestamp".to_string()];
    header.extend(schema.factors.iter().map(|f| f.name.clone()));
    header.extend(defects.iter().map(|d| d.to_string()));
    w.write_record(&header).map_err(csv_err)?;

    for r in records {
        let mut row = vec![r.record_id.clone(), format_timestamp(&r.timestamp)];
        for f in &schema.factors {
            let v = r
                .factor_values
                .get(&f.name)
                .ok_or_else(|| Error::MissingValue(f.name.clone()))?;
            row.push(v.to_string());
        }
        for d in &defects {
            let flag = r.defect_flags.get(*d).copied().unwrap_or(false);
            row.push(if flag { "1" } else { "0" }.to_string());
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_records_path(
    path: impl AsRef<Path>,
    schema: &FactorSchema,
    records: &[ProductionRecord],
) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_records(std::io::BufWriter::new(file), schema, records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::schema::{FactorDef, Role};

    fn schema() -> FactorSchema {
        FactorSchema::new(vec![
            FactorDef::continuous("temperature", Role::NonControllable, 10.0, 30.0),
            FactorDef::discrete("passes", Role::Protocol, &["1", "2", "3"]),
        ])
        .unwrap()
    }

    #[test]
    fn reads_valid_rows() {
        let csv = "record_id,timestamp,temperature,passes,stains\n\
                   a,2012-02-01T08:00:00,20.5,1,0\n\
                   b,2012-02-01T09:00:00,21,2,1\n\
                   c,2012-02-01,19.25,3,0\n";
        let recs = load_records(csv.as_bytes(), &schema()).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[1].factor_values["temperature"], 21.0.into());
        assert_eq!(recs[1].factor_values["passes"], "2".into());
        assert!(recs[1].defect_flags["stains"]);
        assert_eq!(format_timestamp(&recs[2].timestamp), "2012-02-01T00:00:00");
    }

    #[test]
    fn unknown_label_names_the_label() {
        let csv = "record_id,timestamp,temperature,passes,stains\n\
                   a,2012-02-01T08:00:00,20.5,4,0\n";
        let err = load_records(csv.as_bytes(), &schema()).unwrap_err();
        assert!(matches!(err, Error::UnknownLabel { ref label, row: 1, .. } if label == "4"));
        assert!(err.to_string().contains("`4`"));
    }

    #[test]
    fn malformed_number_names_row_and_column() {
        let csv = "record_id,timestamp,temperature,passes,stains\n\
                   a,2012-02-01T08:00:00,20.5,1,0\n\
                   b,2012-02-01T08:00:00,warm,1,0\n";
        let err = load_records(csv.as_bytes(), &schema()).unwrap_err();
        match err {
            Error::Csv { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "temperature");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn header_must_follow_schema_order() {
        let csv = "record_id,timestamp,passes,temperature,stains\n";
        assert!(load_records(csv.as_bytes(), &schema()).is_err());
    }

    #[test]
    fn bad_flag_rejected() {
        let csv = "record_id,timestamp,temperature,passes,stains\n\
                   a,2012-02-01T08:00:00,20.5,1,yes\n";
        let err = load_records(csv.as_bytes(), &schema()).unwrap_err();
        assert!(matches!(err, Error::Csv { ref column, .. } if column == "stains"));
    }

    #[test]
    fn write_then_read() {
        let csv = "record_id,timestamp,temperature,passes,stains\n\
                   a,2012-02-01T08:00:00.500,0.1,1,0\n";
        let recs = load_records(csv.as_bytes(), &schema()).unwrap();
        let mut buf = Vec::new();
        write_records(&mut buf, &schema(), &recs).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), csv);
        assert_eq!(load_records(buf.as_slice(), &schema()).unwrap(), recs);
    }
}
