//! Ranked per-category downloads and category proportions.

use std::cmp::Ordering;
use std::io::Write;
use std::str::FromStr;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 6] = [
    "message_id",
    "text",
    "category",
    "confidence",
    "model_version",
    "received_at",
];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    #[default]
    Csv,
    Jsonl,
}

/// Download settings. Sender references are left out unless asked for.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ExportOptions {
    pub format: ExportFormat,
    pub include_sender: bool,
}

impl From<ExportFormat> for ExportOptions {
    fn from(format: ExportFormat) -> Self {
        ExportOptions {
            format,
            include_sender: false,
        }
    }
}

impl FromStr for ExportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ExportFormat::Csv),
            "jsonl" => Ok(ExportFormat::Jsonl),
            other => Err(Error::Validation(format!(
                "unknown export format {other:?}"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExportRow {
    pub message_id: String,
    pub text: String,
    pub category: String,
    pub confidence: f64,
    pub model_version: u64,
    #[serde(with = "rfc3339_micros")]
    pub received_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sender_ref: Option<String>,
}

/// Export order: confidence descending, then arrival ascending, then id.
pub fn rank_order(a: &ExportRow, b: &ExportRow) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then(a.received_at.cmp(&b.received_at))
        .then_with(|| a.message_id.cmp(&b.message_id))
}

/// Streams `rows` (already ranked) to `out`. CSV always carries the header,
/// even with no rows; with `include_sender` it gains a `sender_ref` column.
pub fn write_rows<'a, W, I>(rows: I, options: impl Into<ExportOptions>, out: W) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a ExportRow>,
{
    let options = options.into();
    match options.format {
        ExportFormat::Csv => {
            let mut w = csv::Writer::from_writer(out);
            let mut header = CSV_HEADER.to_vec();
            if options.include_sender {
                header.push("sender_ref");
            }
            w.write_record(&header)?;
            for r in rows {
                let mut record = vec![
                    r.message_id.clone(),
                    r.text.clone(),
                    r.category.clone(),
                    r.confidence.to_string(),
                    r.model_version.to_string(),
                    format_time(r.received_at),
                ];
                if options.include_sender {
                    record.push(r.sender_ref.clone().unwrap_or_default());
                }
                w.write_record(&record)?;
            }
            w.flush()?;
        }
        ExportFormat::Jsonl => {
            let mut out = out;
            for r in rows {
                serde_json::to_writer(&mut out, r)?;
                out.write_all(b"\n")?;
            }
            out.flush()?;
        }
    }
    Ok(())
}

pub fn format_time(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Micros, true)
}

mod rfc3339_micros {
    use chrono::{DateTime, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&super::format_time(*t))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let s = String::deserialize(d)?;
        DateTime::parse_from_rfc3339(&s)
            .map(|t| t.with_timezone(&Utc))
            .map_err(serde::de::Error::custom)
    }
}

/// Share of classified messages per category, largest first. Categories
/// with equal shares keep schema order. Empty when nothing is classified.
pub fn proportions(categories: &[String], counts: &[u64]) -> Vec<(String, f64)> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Vec::new();
    }
    let mut out: Vec<(usize, f64)> = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| (i, c as f64 / total as f64))
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    out.into_iter()
        .map(|(i, p)| (categories[i].clone(), p))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str, conf: f64, secs: i64) -> ExportRow {
        ExportRow {
            message_id: id.into(),
            text: format!("text, \"quoted\" {id}"),
            category: "Testing HIV".into(),
            confidence: conf,
            model_version: 3,
            received_at: DateTime::<Utc>::UNIX_EPOCH + chrono::Duration::seconds(secs),
            sender_ref: None,
        }
    }

    #[test]
    fn ranking() {
        let mut rows = [
            row("a", 0.9, 0),
            row("b", 0.7, 1),
            row("c", 0.95, 2),
            row("d", 0.9, -5),
        ];
        rows.sort_by(rank_order);
        let ids: Vec<_> = rows.iter().map(|r| r.message_id.as_str()).collect();
        assert_eq!(ids, ["c", "d", "a", "b"]);
    }

    #[test]
    fn empty_csv_is_header_only() {
        let mut buf = Vec::new();
        write_rows(&[], ExportFormat::Csv, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "message_id,text,category,confidence,model_version,received_at\n"
        );
    }

    #[test]
    fn csv_quoting_and_jsonl() {
        let rows = [row("a", 0.5, 0)];
        let mut buf = Vec::new();
        write_rows(&rows, ExportFormat::Csv, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("\"text, \"\"quoted\"\" a\""));
        assert!(text.contains("1970-01-01T00:00:00.000000Z"));

        let mut buf = Vec::new();
        write_rows(&rows, ExportFormat::Jsonl, &mut buf).unwrap();
        let back: ExportRow = serde_json::from_slice(buf.trim_ascii_end()).unwrap();
        assert_eq!(back, rows[0]);
    }

    #[test]
    fn sender_column_is_opt_in() {
        let mut r = row("a", 0.5, 0);
        r.sender_ref = Some("u00042".into());
        let opts = ExportOptions {
            format: ExportFormat::Csv,
            include_sender: true,
        };
        let mut buf = Vec::new();
        write_rows([&r], opts, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(
            "message_id,text,category,confidence,model_version,received_at,sender_ref\n"
        ));
        assert!(text.trim_end().ends_with(",u00042"));
    }

    #[test]
    fn proportions_by_counting() {
        let cats: Vec<String> = ["A", "B", "C"].iter().map(|s| s.to_string()).collect();
        let p = proportions(&cats, &[2, 1, 1]);
        assert_eq!(
            p,
            [("A".into(), 0.5), ("B".into(), 0.25), ("C".into(), 0.25)]
        );
        let only = proportions(&cats, &[0, 0, 4]);
        assert_eq!(only[0], ("C".to_string(), 1.0));
        assert!(proportions(&cats, &[0, 0, 0]).is_empty());
    }
}
