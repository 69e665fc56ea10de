//! Small helpers shared by the CSV readers and writers.

use std::fs;
use std::path::Path;

use chrono::NaiveDate;

use crate::error::{Error, Result};

pub(crate) fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Lines starting with `#`, without the marker.
pub(crate) fn comment_lines(content: &str) -> impl Iterator<Item = &str> {
    content
        .lines()
        .filter_map(|l| l.strip_prefix('#'))
        .map(str::trim)
}

pub(crate) fn reader(content: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(true)
        .from_reader(content.as_bytes())
}

pub(crate) fn check_header<R: std::io::Read>(
    path: &Path,
    reader: &mut csv::Reader<R>,
    expected: &[&str],
) -> Result<()> {
    let header = reader.byte_headers().map_err(|e| Error::Schema {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let found: Vec<String> = header
        .iter()
        .map(|f| String::from_utf8_lossy(f).trim().to_string())
        .collect();
    if found != expected {
        return Err(Error::Schema {
            path: path.to_path_buf(),
            message: format!(
                "expected header `{}`, found `{}`",
                expected.join(","),
                found.join(",")
            ),
        });
    }
    Ok(())
}

pub(crate) fn line_of(record: &csv::ByteRecord) -> u64 {
    record.position().map(|p| p.line()).unwrap_or(0)
}

pub(crate) fn field<'a>(record: &'a csv::ByteRecord, idx: usize) -> Option<&'a str> {
    record
        .get(idx)
        .and_then(|b| std::str::from_utf8(b).ok())
        .map(str::trim)
}

/// Parses a strict `YYYY-MM-DD` date.
pub fn parse_iso_date(s: &str) -> Option<NaiveDate> {
    let b = s.as_bytes();
    if b.len() != 10 || b[4] != b'-' || b[7] != b'-' {
        return None;
    }
    let digits = |r: std::ops::Range<usize>| -> Option<u32> {
        b[r].iter().try_fold(0u32, |acc, &c| {
            c.is_ascii_digit().then(|| acc * 10 + u32::from(c - b'0'))
        })
    };
    let year = digits(0..4)? as i32;
    let month = digits(5..7)?;
    let day = digits(8..10)?;
    NaiveDate::from_ymd_opt(year, month, day)
}

pub(crate) fn parse_bool(s: &str) -> Option<bool> {
    match s.to_ascii_lowercase().as_str() {
        "true" => Some(true),
        "false" => Some(false),
        _ => None,
    }
}

pub(crate) fn csv_writer<W: std::io::Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}
