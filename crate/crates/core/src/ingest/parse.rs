use std::fmt;
use std::io::{BufRead, BufReader, Read};
use std::str::FromStr;

use chrono::{DateTime, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{IngestError, RawCheckIn};
use crate::geo::Coordinates;
use crate::error::GeoError;

/// Supported public dataset layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DatasetFormat {
    /// Foursquare NYC/TKY: 8 tab-separated fields, optional 9th address.
    #[serde(rename = "foursquare-tsv")]
    FoursquareTsv,
    /// Gowalla check-ins joined with spot metadata, comma separated with a header.
    #[serde(rename = "gowalla-csv")]
    GowallaCsv,
}

impl FromStr for DatasetFormat {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "foursquare-tsv" => Ok(DatasetFormat::FoursquareTsv),
            "gowalla-csv" => Ok(DatasetFormat::GowallaCsv),
            other => Err(IngestError::UnknownFormat(other.to_string())),
        }
    }
}

impl fmt::Display for DatasetFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetFormat::FoursquareTsv => "foursquare-tsv",
            DatasetFormat::GowallaCsv => "gowalla-csv",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum RejectReason {
    FieldCount { got: usize, expected: usize },
    EmptyField(&'static str),
    BadNumber(&'static str),
    LatitudeOutOfRange,
    LongitudeOutOfRange,
    UnparseableTime(String),
    Malformed(String),
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::FieldCount { got, expected } => write!(f, "wrong field count (got {got}, expected {expected})"),
            RejectReason::EmptyField(name) => write!(f, "empty {name}"),
            RejectReason::BadNumber(name) => write!(f, "unparseable {name}"),
            RejectReason::LatitudeOutOfRange => f.write_str("latitude out of range"),
            RejectReason::LongitudeOutOfRange => f.write_str("longitude out of range"),
            RejectReason::UnparseableTime(t) => write!(f, "unparseable time `{t}`"),
            RejectReason::Malformed(m) => write!(f, "malformed record: {m}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rejection {
    pub line_no: usize,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, Default)]
pub struct ParseOutcome {
    pub records: Vec<RawCheckIn>,
    pub rejected: Vec<Rejection>,
}

pub fn parse_checkins<R: Read>(source: R, format: DatasetFormat) -> Result<ParseOutcome, IngestError> {
    let outcome = match format {
        DatasetFormat::FoursquareTsv => parse_foursquare(source)?,
        DatasetFormat::GowallaCsv => parse_gowalla(source)?,
    };
    tracing::info!(format = %format, parsed = outcome.records.len(), rejected = outcome.rejected.len(), "parsed check-ins");
    Ok(outcome)
}

fn parse_foursquare<R: Read>(source: R) -> Result<ParseOutcome, IngestError> {
    let mut reader = BufReader::new(source);
    let mut out = ParseOutcome::default();
    let mut buf = Vec::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        if reader.read_until(b'\n', &mut buf)? == 0 {
            break;
        }
        line_no += 1;
        // the public release is not strictly UTF-8
        let line = String::from_utf8_lossy(&buf);
        let line = line.trim_end_matches(['\n', '\r']);
        if line.trim().is_empty() {
            continue;
        }
        match foursquare_line(line, line_no) {
            Ok(r) => out.records.push(r),
            Err(reason) => out.rejected.push(Rejection { line_no, reason }),
        }
    }
    Ok(out)
}

fn foursquare_line(line: &str, line_no: usize) -> Result<RawCheckIn, RejectReason> {
    let fields: Vec<&str> = line.split('\t').collect();
    if !(8..=9).contains(&fields.len()) {
        return Err(RejectReason::FieldCount { got: fields.len(), expected: 8 });
    }
    let user_id = non_empty(fields[0], "user id")?;
    let venue_id = non_empty(fields[1], "venue id")?;
    let category_name = non_empty(fields[3], "category")?;
    let (latitude, longitude) = coordinates(fields[4], fields[5])?;
    let tz_offset_minutes: i32 = fields[6].trim().parse().map_err(|_| RejectReason::BadNumber("timezone offset"))?;
    let utc_time = foursquare_time(fields[7].trim())?;
    let address = fields.get(8).map(|a| a.trim()).filter(|a| !a.is_empty()).map(str::to_owned);
    Ok(RawCheckIn {
        user_id,
        venue_id,
        category_name,
        latitude,
        longitude,
        utc_time,
        tz_offset_minutes,
        address,
        name: None,
        line_no,
    })
}

fn foursquare_time(s: &str) -> Result<DateTime<Utc>, RejectReason> {
    // e.g. "Tue Apr 03 18:00:09 +0000 2012"
    DateTime::parse_from_str(s, "%a %b %d %H:%M:%S %z %Y")
        .map(|t| t.with_timezone(&Utc))
        .map_err(|_| RejectReason::UnparseableTime(s.to_string()))
}

fn non_empty(s: &str, what: &'static str) -> Result<String, RejectReason> {
    let t = s.trim();
    if t.is_empty() {
        Err(RejectReason::EmptyField(what))
    } else {
        Ok(t.to_string())
    }
}

fn coordinates(lat: &str, lon: &str) -> Result<(f64, f64), RejectReason> {
    let lat: f64 = lat.trim().parse().map_err(|_| RejectReason::BadNumber("latitude"))?;
    let lon: f64 = lon.trim().parse().map_err(|_| RejectReason::BadNumber("longitude"))?;
    match Coordinates::new(lat, lon) {
        Ok(_) => Ok((lat, lon)),
        Err(GeoError::LatitudeOutOfRange(_)) => Err(RejectReason::LatitudeOutOfRange),
        Err(GeoError::LongitudeOutOfRange(_)) => Err(RejectReason::LongitudeOutOfRange),
    }
}

struct GowallaColumns {
    user: usize,
    place: usize,
    time: usize,
    lat: usize,
    lon: usize,
    category: usize,
    tz: Option<usize>,
    address: Option<usize>,
    name: Option<usize>,
}

impl GowallaColumns {
    fn from_header(header: &csv::StringRecord) -> Result<Self, IngestError> {
        let find = |names: &[&str]| header.iter().position(|h| names.contains(&h.trim().to_ascii_lowercase().as_str()));
        let need = |names: &[&str], label: &'static str| find(names).ok_or(IngestError::MissingColumn(label));
        Ok(GowallaColumns {
            user: need(&["userid", "user_id", "user"], "userid")?,
            place: need(&["placeid", "venue_id", "poi_id", "spot_id"], "placeid")?,
            time: need(&["datetime", "utc_time", "checkin_time"], "datetime")?,
            lat: need(&["lat", "latitude"], "lat")?,
            lon: need(&["lng", "lon", "longitude"], "lng")?,
            category: need(&["category", "category_name"], "category")?,
            tz: find(&["tz_offset", "tz_offset_minutes"]),
            address: find(&["address"]),
            name: find(&["name", "venue_name"]),
        })
    }
}

fn parse_gowalla<R: Read>(source: R) -> Result<ParseOutcome, IngestError> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).has_headers(true).from_reader(source);
    let header = reader.byte_headers().map_err(csv_fatal)?.clone();
    let header = csv::StringRecord::from_byte_record_lossy(header);
    let cols = GowallaColumns::from_header(&header)?;
    let width = header.len();
    let mut out = ParseOutcome::default();
    let mut record = csv::ByteRecord::new();
    loop {
        let line_no = reader.position().line() as usize;
        match reader.read_byte_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {
                let row = csv::StringRecord::from_byte_record_lossy(record.clone());
                let line_no = record.position().map(|p| p.line() as usize).unwrap_or(line_no);
                if row.iter().all(|f| f.trim().is_empty()) {
                    continue;
                }
                match gowalla_row(&row, &cols, width, line_no) {
                    Ok(r) => out.records.push(r),
                    Err(reason) => out.rejected.push(Rejection { line_no, reason }),
                }
            }
            Err(e) if e.is_io_error() => return Err(csv_fatal(e)),
            Err(e) => out.rejected.push(Rejection { line_no, reason: RejectReason::Malformed(e.to_string()) }),
        }
    }
    Ok(out)
}

fn csv_fatal(e: csv::Error) -> IngestError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => IngestError::Unreadable(io),
        other => IngestError::Unreadable(std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{other:?}"))),
    }
}

fn gowalla_row(row: &csv::StringRecord, cols: &GowallaColumns, width: usize, line_no: usize) -> Result<RawCheckIn, RejectReason> {
    if row.len() != width {
        return Err(RejectReason::FieldCount { got: row.len(), expected: width });
    }
    let get = |i: usize| row.get(i).unwrap_or("");
    let opt = |i: Option<usize>| i.map(get).map(str::trim).filter(|s| !s.is_empty()).map(str::to_owned);
    let (latitude, longitude) = coordinates(get(cols.lat), get(cols.lon))?;
    let tz_offset_minutes = match opt(cols.tz) {
        Some(t) => t.parse().map_err(|_| RejectReason::BadNumber("timezone offset"))?,
        None => 0,
    };
    Ok(RawCheckIn {
        user_id: non_empty(get(cols.user), "user id")?,
        venue_id: non_empty(get(cols.place), "venue id")?,
        category_name: non_empty(get(cols.category), "category")?,
        latitude,
        longitude,
        utc_time: gowalla_time(get(cols.time).trim())?,
        tz_offset_minutes,
        address: opt(cols.address),
        name: opt(cols.name),
        line_no,
    })
}

fn gowalla_time(s: &str) -> Result<DateTime<Utc>, RejectReason> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.with_timezone(&Utc));
    }
    NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S")
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S"))
        .map(|n| n.and_utc())
        .map_err(|_| RejectReason::UnparseableTime(s.to_string()))
}
