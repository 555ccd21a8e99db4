//! Portable CGM CSV: `timestamp,glucose_mg_dl` with ISO-8601 timestamps.
//! An empty glucose cell denotes a missing grid slot.

use chrono::NaiveDateTime;

use super::{canonicalize, plausible, CgmParse, CgmRecord, CgmSeries, IngestError, Result};

pub const CSV_HEADER: [&str; 2] = ["timestamp", "glucose_mg_dl"];
pub const CSV_TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    NaiveDateTime::parse_from_str(s, CSV_TIMESTAMP_FORMAT)
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S"))
        .ok()
}

/// Parses a single-patient CSV. The returned [`CgmParse`] always holds
/// exactly one series.
pub fn parse_cgm_csv(bytes: &[u8], patient_id: &str) -> Result<CgmParse> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let mut rows = reader.records();

    let header = match rows.next() {
        Some(Ok(h)) => h,
        Some(Err(e)) => return Err(IngestError::Format(e.to_string())),
        None => return Err(IngestError::Format("missing header".into())),
    };
    if header.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(IngestError::Format(format!(
            "expected header `{}`, found `{}`",
            CSV_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }

    let mut records = Vec::new();
    let mut rejected = 0usize;
    for (idx, row) in rows.enumerate() {
        // header is line 1
        let line = idx as u64 + 2;
        let row = row.map_err(|e| IngestError::Record {
            line,
            message: e.to_string(),
        })?;
        if row.len() != 2 {
            return Err(IngestError::Record {
                line,
                message: format!("expected 2 fields, found {}", row.len()),
            });
        }
        let timestamp = parse_timestamp(&row[0]).ok_or_else(|| IngestError::Record {
            line,
            message: format!("unparseable timestamp {:?}", &row[0]),
        })?;
        let glucose = if row[1].is_empty() {
            None
        } else {
            let v: f64 = row[1].parse().map_err(|_| IngestError::Record {
                line,
                message: format!("unparseable glucose {:?}", &row[1]),
            })?;
            if !plausible(v) {
                rejected += 1;
                continue;
            }
            Some(v)
        };
        records.push(CgmRecord {
            timestamp,
            glucose,
            imputed: false,
        });
    }
    canonicalize(&mut records);
    Ok(CgmParse {
        series: vec![CgmSeries::new(patient_id, records)],
        rejected,
    })
}

/// Writes a series in the CSV format accepted by [`parse_cgm_csv`].
pub fn export_cgm_csv(series: &CgmSeries) -> String {
    let mut out = String::with_capacity(32 * (series.len() + 1));
    out.push_str(&CSV_HEADER.join(","));
    out.push('\n');
    for r in &series.records {
        out.push_str(&r.timestamp.format(CSV_TIMESTAMP_FORMAT).to_string());
        out.push(',');
        if let Some(g) = r.glucose {
            out.push_str(&g.to_string());
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_rows() {
        let csv = "timestamp,glucose_mg_dl\n2021-12-07T01:17:00,100\n2021-12-07T01:22:00,110\n";
        let p = parse_cgm_csv(csv.as_bytes(), "a").unwrap();
        assert_eq!(p.series[0].len(), 2);
        assert_eq!(p.series[0].modal_interval_min(), Some(5));
    }

    #[test]
    fn header_only_is_empty_series() {
        let p = parse_cgm_csv(b"timestamp,glucose_mg_dl\n", "a").unwrap();
        assert!(p.series[0].is_empty());
        assert_eq!(p.rejected, 0);
    }

    #[test]
    fn missing_header_is_format_error() {
        let r = parse_cgm_csv(b"2021-12-07T01:17:00,100\n", "a");
        assert!(matches!(r, Err(IngestError::Format(_))));
        assert!(matches!(
            parse_cgm_csv(b"", "a"),
            Err(IngestError::Format(_))
        ));
    }

    #[test]
    fn bad_row_reports_line() {
        let csv = "timestamp,glucose_mg_dl\n2021-12-07T01:17:00,100\n2021-12-07T01:22:00,abc\n";
        match parse_cgm_csv(csv.as_bytes(), "a") {
            Err(IngestError::Record { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn export_parse_round_trip_with_gaps() {
        let csv = "timestamp,glucose_mg_dl\n2021-12-07T01:17:00,100.25\n2021-12-07T01:22:00,\n2021-12-07T01:27:00,99\n";
        let p = parse_cgm_csv(csv.as_bytes(), "a").unwrap();
        let again = parse_cgm_csv(export_cgm_csv(&p.series[0]).as_bytes(), "a").unwrap();
        assert_eq!(p.series, again.series);
    }
}
