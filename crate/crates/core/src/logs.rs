//! Impression/click event logs, CTR aggregation and the pre-aggregated training table.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::catalog::{keyword_set, AdCreative, Location, Placement, RequestContext};
use crate::error::{Error, Result};
use crate::features::{encode_size, SizeRegistry};
use crate::keywords::{resolve_page_value, KeywordMap, ResolveMode};

pub const EVENT_LOG_HEADER: [&str; 12] = [
    "timestamp", "ad_id", "placement", "size", "category", "keywords", "country", "city",
    "area", "ip", "browser", "clicked",
];

pub const TRAINING_TABLE_HEADER: [&str; 5] = ["placement", "size", "bid", "keyword_value", "ctr"];

#[derive(Debug, Clone, PartialEq)]
pub struct ImpressionEvent {
    /// Milliseconds since the Unix epoch.
    pub timestamp: i64,
    pub ad_id: String,
    pub context: RequestContext,
    /// Not part of the event-log CSV; filled from the catalog when absent.
    pub served_bid: Option<f64>,
    pub clicked: bool,
}

/// One regression-ready observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingRow {
    #[serde(rename = "placement")]
    pub placement_code: u8,
    #[serde(rename = "size")]
    pub size_code: u32,
    pub bid: f64,
    pub keyword_value: f64,
    pub ctr: f64,
}

impl TrainingRow {
    pub fn features(&self) -> [f64; 4] {
        [
            f64::from(self.placement_code),
            f64::from(self.size_code),
            self.bid,
            self.keyword_value,
        ]
    }
}

pub fn compute_ctr(clicks: u64, impressions: u64) -> Result<f64> {
    if impressions == 0 {
        return Err(Error::Domain("ctr undefined for zero impressions".into()));
    }
    if clicks > impressions {
        return Err(Error::Domain(format!(
            "{clicks} clicks exceed {impressions} impressions"
        )));
    }
    Ok(clicks as f64 / impressions as f64)
}

/// A training row together with the counts it was computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedRow {
    pub row: TrainingRow,
    pub impressions: u64,
    pub clicks: u64,
}

/// Groups events by (placement, size, bid, keyword value) and emits one row per group
/// in order of first appearance.
///
/// The bid is the event's `served_bid` when present, otherwise the catalog bid of its ad.
pub fn aggregate_events(
    events: &[ImpressionEvent],
    map: &KeywordMap,
    registry: &SizeRegistry,
    catalog: &[AdCreative],
    mode: ResolveMode,
) -> Result<Vec<AggregatedRow>> {
    let bids: HashMap<&str, f64> = catalog.iter().map(|a| (a.ad_id.as_str(), a.bid)).collect();
    let mut index: HashMap<(u8, u32, u64, u64), usize> = HashMap::new();
    let mut groups: Vec<(TrainingRow, u64, u64)> = Vec::new();

    for ev in events {
        let bid = match ev.served_bid {
            Some(b) => b,
            None => *bids.get(ev.ad_id.as_str()).ok_or_else(|| {
                Error::Validation(format!("event references unknown ad `{}`", ev.ad_id))
            })?,
        };
        let placement_code = ev.context.placement.code();
        let size_code = encode_size(&ev.context.size, registry)?;
        let keyword_value = resolve_page_value(map, &ev.context.page_keywords, mode)?;
        let key = (placement_code, size_code, bid.to_bits(), keyword_value.to_bits());
        let slot = *index.entry(key).or_insert_with(|| {
            groups.push((
                TrainingRow {
                    placement_code,
                    size_code,
                    bid,
                    keyword_value,
                    ctr: 0.0,
                },
                0,
                0,
            ));
            groups.len() - 1
        });
        let g = &mut groups[slot];
        g.1 += 1;
        g.2 += u64::from(ev.clicked);
    }

    groups
        .into_iter()
        .map(|(mut row, impressions, clicks)| {
            row.ctr = compute_ctr(clicks, impressions)?;
            Ok(AggregatedRow {
                row,
                impressions,
                clicks,
            })
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct EventRecord {
    timestamp: String,
    ad_id: String,
    placement: String,
    size: String,
    category: String,
    keywords: String,
    country: String,
    city: String,
    area: String,
    ip: String,
    browser: String,
    clicked: String,
}

impl From<&ImpressionEvent> for EventRecord {
    fn from(ev: &ImpressionEvent) -> Self {
        let c = &ev.context;
        EventRecord {
            timestamp: ev.timestamp.to_string(),
            ad_id: ev.ad_id.clone(),
            placement: c.placement.as_str().to_string(),
            size: c.size.clone(),
            category: c.category.clone(),
            keywords: c
                .page_keywords
                .iter()
                .map(String::as_str)
                .collect::<Vec<_>>()
                .join(";"),
            country: c.location.country.clone(),
            city: c.location.city.clone(),
            area: c.location.area.clone(),
            ip: c.ip.clone(),
            browser: c.browser.clone(),
            clicked: if ev.clicked { "1" } else { "0" }.to_string(),
        }
    }
}

fn check_header(headers: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    let got: Vec<&str> = headers.iter().map(str::trim).collect();
    if got != expected {
        return Err(Error::parse(
            1,
            "header",
            format!("expected `{}`, found `{}`", expected.join(","), got.join(",")),
        ));
    }
    Ok(())
}

/// Parses an event-log CSV. Row numbers in errors are file lines (header is line 1).
pub fn parse_event_log<R: Read>(reader: R) -> Result<Vec<ImpressionEvent>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
    let mut records = rdr.records();
    match records.next() {
        None => return Ok(Vec::new()),
        Some(h) => check_header(&h.map_err(|e| Error::parse(1, "header", e.to_string()))?, &EVENT_LOG_HEADER)?,
    }
    let mut events = Vec::new();
    for (i, rec) in records.enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::parse(line, "row", e.to_string()))?;
        if rec.len() != EVENT_LOG_HEADER.len() {
            return Err(Error::parse(
                line,
                "row",
                format!("expected {} fields, found {}", EVENT_LOG_HEADER.len(), rec.len()),
            ));
        }
        let f = |k: usize| rec[k].trim();
        let timestamp: i64 = f(0).parse().map_err(|_| {
            Error::Validation(format!("line {line}: unparseable timestamp `{}`", f(0)))
        })?;
        if timestamp <= 0 {
            return Err(Error::Validation(format!(
                "line {line}: timestamp must be positive"
            )));
        }
        let clicked = match f(11) {
            "1" => true,
            "0" => false,
            other => {
                return Err(Error::Validation(format!(
                    "line {line}: clicked must be 0 or 1, found `{other}`"
                )))
            }
        };
        let placement: Placement = f(2)
            .parse()
            .map_err(|_| Error::parse(line, "placement", format!("bad value `{}`", f(2))))?;
        events.push(ImpressionEvent {
            timestamp,
            ad_id: f(1).to_string(),
            context: RequestContext {
                placement,
                size: f(3).to_string(),
                category: f(4).to_string(),
                page_keywords: keyword_set(f(5).split(';')),
                location: Location {
                    country: f(6).to_string(),
                    city: f(7).to_string(),
                    area: f(8).to_string(),
                },
                ip: f(9).to_string(),
                browser: f(10).to_string(),
                cookies: String::new(),
            },
            served_bid: None,
            clicked,
        });
    }
    Ok(events)
}

pub fn write_event_log<W: Write>(events: &[ImpressionEvent], writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(EVENT_LOG_HEADER).map_err(csv_err)?;
    for ev in events {
        w.serialize(EventRecord::from(ev)).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Validation(format!("csv: {other:?}")),
    }
}

/// Appends events to an event-log file, one flushed row per call.
///
/// Appends from many threads are serialized; rows from one thread keep their order.
pub struct EventLogWriter {
    path: PathBuf,
    file: Mutex<File>,
}

impl EventLogWriter {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new().create(true).append(true).open(&path)?;
        if file.metadata()?.len() == 0 {
            writeln!(file, "{}", EVENT_LOG_HEADER.join(","))?;
        }
        Ok(EventLogWriter {
            path,
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, event: &ImpressionEvent) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        w.serialize(EventRecord::from(event)).map_err(csv_err)?;
        let row = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        let mut file = self.file.lock().unwrap_or_else(|p| p.into_inner());
        file.write_all(&row)?;
        file.flush()?;
        Ok(())
    }
}

/// Parses the pre-aggregated `placement,size,bid,keyword_value,ctr` table.
pub fn parse_training_table<R: Read>(reader: R) -> Result<Vec<TrainingRow>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::parse(1, "header", e.to_string()))?.clone();
    if headers.is_empty() {
        return Ok(Vec::new());
    }
    check_header(&headers, &TRAINING_TABLE_HEADER)?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.deserialize::<TrainingRow>().enumerate() {
        let line = i + 2;
        let row = rec.map_err(|e| Error::parse(line, "row", e.to_string()))?;
        if row.placement_code > 1 {
            return Err(Error::parse(line, "placement", "must be 0 or 1"));
        }
        if row.size_code == 0 {
            return Err(Error::parse(line, "size", "size codes start at 1"));
        }
        if !(row.bid.is_finite() && row.bid > 0.0) {
            return Err(Error::parse(line, "bid", "bid must be positive"));
        }
        if !row.keyword_value.is_finite() {
            return Err(Error::parse(line, "keyword_value", "not finite"));
        }
        if !(0.0..=1.0).contains(&row.ctr) {
            return Err(Error::parse(line, "ctr", "ctr must lie in [0, 1]"));
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_training_table<W: Write>(rows: &[TrainingRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    if rows.is_empty() {
        w.write_record(TRAINING_TABLE_HEADER).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// True when the first line of `text` is the training-table header.
pub fn looks_like_training_table(text: &str) -> bool {
    text.lines()
        .next()
        .map(|l| l.split(',').map(str::trim).eq(TRAINING_TABLE_HEADER))
        .unwrap_or(false)
}
