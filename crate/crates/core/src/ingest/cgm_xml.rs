//! Patient XML fixtures.
//!
//! ```xml
//! <patient id="559">
//!   <glucose_level>
//!     <event ts="07-12-2021 01:17:00" value="101"/>
//!   </glucose_level>
//! </patient>
//! ```
//!
//! Elements other than `glucose_level` (meals, basal, ...) are skipped.

use std::fmt::Write as _;

use chrono::NaiveDateTime;
use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;

use super::{canonicalize, plausible, CgmParse, CgmRecord, CgmSeries, IngestError, Result};

pub const XML_TIMESTAMP_FORMAT: &str = "%d-%m-%Y %H:%M:%S";

/// Line of the first non-whitespace byte at or after `offset`.
fn line_of(bytes: &[u8], offset: u64) -> u64 {
    let mut end = (offset as usize).min(bytes.len());
    while end < bytes.len() && bytes[end].is_ascii_whitespace() {
        end += 1;
    }
    bytes[..end].iter().filter(|&&b| b == b'\n').count() as u64 + 1
}

struct Open {
    patient_id: String,
    records: Vec<CgmRecord>,
}

fn attr(e: &BytesStart<'_>, name: &[u8], offset: u64) -> Result<Option<String>> {
    for a in e.attributes() {
        let a = a.map_err(|err| IngestError::Xml {
            offset,
            message: err.to_string(),
        })?;
        if a.key.as_ref() == name {
            let v = a.unescape_value().map_err(|err| IngestError::Xml {
                offset,
                message: err.to_string(),
            })?;
            return Ok(Some(v.into_owned()));
        }
    }
    Ok(None)
}

/// Parses one or more `<patient>` elements. Readings outside the
/// plausibility band are dropped and counted in [`CgmParse::rejected`].
pub fn parse_cgm_xml(bytes: &[u8]) -> Result<CgmParse> {
    let mut reader = Reader::from_reader(bytes);
    reader.config_mut().trim_text(true);

    let mut series = Vec::new();
    let mut rejected = 0usize;
    let mut patient: Option<Open> = None;
    let mut in_glucose = false;
    let mut depth = 0usize;

    loop {
        let offset = reader.buffer_position();
        let event = reader.read_event().map_err(|err| IngestError::Xml {
            offset: reader.error_position(),
            message: err.to_string(),
        })?;
        match event {
            Event::Start(_) | Event::Empty(_) => {
                let (e, empty) = match event {
                    Event::Start(e) => (e, false),
                    Event::Empty(e) => (e, true),
                    _ => unreachable!(),
                };
                let name = e.name();
                match name.as_ref() {
                    b"patient" => {
                        if patient.is_some() {
                            return Err(IngestError::Xml {
                                offset,
                                message: "nested <patient> element".into(),
                            });
                        }
                        let id = attr(&e, b"id", offset)?.ok_or_else(|| IngestError::Xml {
                            offset,
                            message: "<patient> without id attribute".into(),
                        })?;
                        let open = Open {
                            patient_id: id,
                            records: Vec::new(),
                        };
                        if empty {
                            series.push(CgmSeries::new(open.patient_id, open.records));
                        } else {
                            patient = Some(open);
                        }
                    }
                    b"glucose_level" if patient.is_some() => in_glucose = !empty,
                    b"event" if in_glucose => {
                        let line = || line_of(bytes, offset);
                        let ts = attr(&e, b"ts", offset)?.ok_or_else(|| IngestError::Record {
                            line: line(),
                            message: "event without ts attribute".into(),
                        })?;
                        let timestamp = NaiveDateTime::parse_from_str(&ts, XML_TIMESTAMP_FORMAT)
                            .map_err(|_| IngestError::Record {
                                line: line(),
                                message: format!(
                                    "timestamp {ts:?} does not match DD-MM-YYYY HH:MM:SS"
                                ),
                            })?;
                        let raw =
                            attr(&e, b"value", offset)?.ok_or_else(|| IngestError::Record {
                                line: line(),
                                message: "event without value attribute".into(),
                            })?;
                        let glucose: f64 =
                            raw.trim().parse().map_err(|_| IngestError::Record {
                                line: line(),
                                message: format!("glucose value {raw:?} is not a number"),
                            })?;
                        if !plausible(glucose) {
                            rejected += 1;
                        } else if let Some(p) = patient.as_mut() {
                            p.records.push(CgmRecord::observed(timestamp, glucose));
                        }
                    }
                    _ => {}
                }
                if !empty {
                    depth += 1;
                }
            }
            Event::End(e) => {
                depth = depth.saturating_sub(1);
                match e.name().as_ref() {
                    b"glucose_level" => in_glucose = false,
                    b"patient" => {
                        if let Some(mut p) = patient.take() {
                            canonicalize(&mut p.records);
                            series.push(CgmSeries::new(p.patient_id, p.records));
                        }
                    }
                    _ => {}
                }
            }
            Event::Eof => {
                if depth > 0 {
                    return Err(IngestError::Xml {
                        offset: reader.buffer_position(),
                        message: "unexpected end of document inside an open element".into(),
                    });
                }
                break;
            }
            _ => {}
        }
    }
    Ok(CgmParse { series, rejected })
}

fn escape_attr(s: &str) -> String {
    quick_xml::escape::escape(s).into_owned()
}

/// Serialises series in the fixture schema, one `<patient>` root each.
/// Missing slots are skipped; values are written with full precision.
pub fn write_cgm_xml(series: &[CgmSeries]) -> String {
    let mut out = String::new();
    for s in series {
        let _ = writeln!(out, "<patient id=\"{}\">", escape_attr(&s.patient_id));
        out.push_str("  <glucose_level>\n");
        for r in &s.records {
            if let Some(g) = r.glucose {
                let _ = writeln!(
                    out,
                    "    <event ts=\"{}\" value=\"{}\"/>",
                    r.timestamp.format(XML_TIMESTAMP_FORMAT),
                    g
                );
            }
        }
        out.push_str("  </glucose_level>\n</patient>\n");
    }
    out
}
