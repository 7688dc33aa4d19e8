//! The raw log CSV (`record_id,label,t,tauJ1..7,tauExt1..7,e1..7,de1..7`)
//! and the windows cache (same columns with `window_id` first).

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use super::{window_id, Label5, Record, SensorFrame, SensorWindow, FEATURES, JOINTS};
use crate::error::{Error, Result};
use crate::nn::WINDOW;

/// Column names of the raw log. The windows cache uses `window_id` in place
/// of `record_id`.
pub fn log_header() -> Vec<String> {
    let mut h = vec!["record_id".to_string(), "label".into(), "t".into()];
    for prefix in ["tauJ", "tauExt", "e", "de"] {
        h.extend((1..=JOINTS).map(|j| format!("{prefix}{j}")));
    }
    h
}

const COLUMNS: usize = 3 + FEATURES;

/// One parsed CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRow {
    /// Record id (or window id in a windows cache).
    pub id: String,
    pub label5: Label5,
    pub frame: SensorFrame,
    pub line: usize,
}

/// Streams rows from a log. A header row is accepted (and checked) if the
/// first field of the first row is `record_id` or `window_id`.
pub struct FrameReader<R: Read> {
    inner: csv::Reader<R>,
    row: csv::StringRecord,
    first: bool,
    id_column: &'static str,
}

impl<R: Read> FrameReader<R> {
    pub fn new(reader: R) -> Self {
        Self::with_id_column(reader, "record_id")
    }

    fn with_id_column(reader: R, id_column: &'static str) -> Self {
        Self {
            inner: csv::ReaderBuilder::new()
                .has_headers(false)
                .flexible(true)
                .from_reader(reader),
            row: csv::StringRecord::new(),
            first: true,
            id_column,
        }
    }

    fn parse_row(&self, line: usize) -> Result<FrameRow> {
        let row = &self.row;
        if row.len() != COLUMNS {
            return Err(Error::Parse {
                line,
                msg: format!("expected {COLUMNS} columns, found {}", row.len()),
            });
        }
        let id = row[0].trim().to_string();
        if id.is_empty() {
            return Err(Error::Parse {
                line,
                msg: "empty id".into(),
            });
        }
        let label5: Label5 = row[1].trim().parse()?;
        let num = |k: usize| -> Result<f64> {
            let s = row[k].trim();
            let v: f64 = s.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("column {} is not a number: `{s}`", k + 1),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    msg: format!("column {} is not finite", k + 1),
                });
            }
            Ok(v)
        };
        let t = num(2)?;
        let mut f = [0.0; FEATURES];
        for (c, v) in f.iter_mut().enumerate() {
            *v = num(3 + c)?;
        }
        Ok(FrameRow {
            id,
            label5,
            frame: SensorFrame::from_features(t, &f),
            line,
        })
    }
}

impl<R: Read> Iterator for FrameReader<R> {
    type Item = Result<FrameRow>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            match self.inner.read_record(&mut self.row) {
                Ok(false) => return None,
                Err(e) => {
                    let line = e.position().map_or(0, |p| p.line() as usize);
                    return Some(Err(Error::Parse {
                        line,
                        msg: e.to_string(),
                    }));
                }
                Ok(true) => {}
            }
            let line = self.row.position().map_or(0, |p| p.line() as usize);
            if self.row.len() == 1 && self.row[0].trim().is_empty() {
                continue;
            }
            if self.first {
                self.first = false;
                let first = self.row.get(0).unwrap_or("").trim();
                if first == "record_id" || first == "window_id" {
                    let mut want = log_header();
                    want[0] = self.id_column.to_string();
                    let got: Vec<&str> = self.row.iter().map(str::trim).collect();
                    if got != want {
                        return Some(Err(Error::Parse {
                            line,
                            msg: format!("unexpected header; expected `{}`", want.join(",")),
                        }));
                    }
                    continue;
                }
            }
            return Some(self.parse_row(line));
        }
    }
}

/// Groups consecutive rows into records. Rows of a record must be contiguous,
/// share one label and have strictly increasing timestamps.
pub fn parse_log_reader<R: Read>(reader: R) -> Result<Vec<Record>> {
    let mut records: Vec<Record> = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for row in FrameReader::new(reader) {
        let row = row?;
        match records.last_mut() {
            Some(r) if r.id == row.id => {
                if r.label5 != row.label5 {
                    return Err(Error::Parse {
                        line: row.line,
                        msg: format!(
                            "record `{}` changes label from {} to {}",
                            r.id, r.label5, row.label5
                        ),
                    });
                }
                let prev = r.frames.last().expect("nonempty record").timestamp;
                if row.frame.timestamp <= prev {
                    return Err(Error::Parse {
                        line: row.line,
                        msg: format!(
                            "non-monotone timestamp {} after {prev} in record `{}`",
                            row.frame.timestamp, r.id
                        ),
                    });
                }
                r.frames.push(row.frame);
            }
            _ => {
                if !seen.insert(row.id.clone()) {
                    return Err(Error::Parse {
                        line: row.line,
                        msg: format!("record `{}` resumes after another record", row.id),
                    });
                }
                records.push(Record {
                    id: row.id,
                    label5: row.label5,
                    frames: vec![row.frame],
                });
            }
        }
    }
    Ok(records)
}

pub fn parse_log(path: impl AsRef<Path>) -> Result<Vec<Record>> {
    let path = path.as_ref();
    let file = File::open(path)
        .map_err(|e| Error::Input(format!("cannot open {}: {e}", path.display())))?;
    parse_log_reader(BufReader::new(file))
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Input(format!("{other:?}")),
    }
}

fn frame_fields(id: &str, label: Label5, frame: &SensorFrame) -> Vec<String> {
    let mut out = Vec::with_capacity(COLUMNS);
    out.push(id.to_string());
    out.push(label.as_str().to_string());
    out.push(frame.timestamp.to_string());
    out.extend(frame.features().iter().map(f64::to_string));
    out
}

pub fn write_log<W: Write>(records: &[Record], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(log_header()).map_err(csv_error)?;
    for r in records {
        for f in &r.frames {
            w.write_record(frame_fields(&r.id, r.label5, f))
                .map_err(csv_error)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_windows<W: Write>(windows: &[SensorWindow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = log_header();
    header[0] = "window_id".into();
    w.write_record(header).map_err(csv_error)?;
    for win in windows {
        for (r, &t) in win.timestamps.iter().enumerate() {
            let f: [f64; FEATURES] = win.row(r).try_into().expect("28 features");
            w.write_record(frame_fields(
                &win.id,
                win.label5,
                &SensorFrame::from_features(t, &f),
            ))
            .map_err(csv_error)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a windows cache: 28 consecutive rows per window id.
pub fn read_windows<R: Read>(reader: R) -> Result<Vec<SensorWindow>> {
    let mut out = Vec::new();
    let mut pending: Vec<FrameRow> = Vec::new();
    let flush = |pending: &mut Vec<FrameRow>, out: &mut Vec<SensorWindow>| -> Result<()> {
        if pending.is_empty() {
            return Ok(());
        }
        let first = &pending[0];
        if pending.len() != WINDOW {
            return Err(Error::Parse {
                line: first.line,
                msg: format!(
                    "window `{}` has {} rows, expected {WINDOW}",
                    first.id,
                    pending.len()
                ),
            });
        }
        let (record_id, start) = first
            .id
            .rsplit_once('/')
            .and_then(|(r, s)| s.parse::<usize>().ok().map(|s| (r.to_string(), s)))
            .ok_or_else(|| Error::Parse {
                line: first.line,
                msg: format!("window id `{}` is not `<record>/<start>`", first.id),
            })?;
        let frames: Vec<SensorFrame> = pending.iter().map(|r| r.frame).collect();
        let w = SensorWindow::from_frames(&record_id, start, first.label5, &frames)?;
        debug_assert_eq!(w.id, window_id(&record_id, start));
        out.push(w);
        pending.clear();
        Ok(())
    };
    for row in FrameReader::with_id_column(reader, "window_id") {
        let row = row?;
        if let Some(p) = pending.first() {
            if p.id != row.id {
                flush(&mut pending, &mut out)?;
            } else if p.label5 != row.label5 {
                return Err(Error::Parse {
                    line: row.line,
                    msg: format!("window `{}` changes label", row.id),
                });
            }
        }
        pending.push(row);
    }
    flush(&mut pending, &mut out)?;
    Ok(out)
}
