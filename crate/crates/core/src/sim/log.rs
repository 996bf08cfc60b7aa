//! Simulation log: every frame emission plus the derived range measurements
//! with ground truth, serializable to CSV.

use crate::model::{DeviceId, Point3, RangeMeasurement};
use std::fmt::Write as _;
use thiserror::Error;

pub const SIMLOG_HEADER: &str = "time_s,kind,src,dst,seq,anchor,distance_m,truth_x,truth_y,truth_z";

#[derive(Debug, Error, PartialEq)]
pub enum LogParseError {
    #[error("simlog row {row}: expected {expected} fields, got {got}")]
    FieldCount {
        row: usize,
        expected: usize,
        got: usize,
    },
    #[error("simlog row {row}: {message}")]
    BadField { row: usize, message: String },
    #[error("simlog: missing or wrong header")]
    BadHeader,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordKind {
    Poll,
    Response,
    Final,
    Report,
    Measurement,
}

impl RecordKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RecordKind::Poll => "POLL",
            RecordKind::Response => "RESPONSE",
            RecordKind::Final => "FINAL",
            RecordKind::Report => "REPORT",
            RecordKind::Measurement => "MEASUREMENT",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "POLL" => RecordKind::Poll,
            "RESPONSE" => RecordKind::Response,
            "FINAL" => RecordKind::Final,
            "REPORT" => RecordKind::Report,
            "MEASUREMENT" => RecordKind::Measurement,
            _ => return None,
        })
    }
}

/// One log row. Frame rows fill `src`/`dst`/`seq`; measurement rows fill
/// `anchor`/`distance_m`/`truth` (and `seq`).
#[derive(Debug, Clone, PartialEq)]
pub struct SimRecord {
    pub time_s: f64,
    pub kind: RecordKind,
    pub src: Option<DeviceId>,
    pub dst: Option<DeviceId>,
    pub seq: Option<u8>,
    pub anchor: Option<DeviceId>,
    pub distance_m: Option<f64>,
    pub truth: Option<Point3>,
}

impl SimRecord {
    pub fn frame(time_s: f64, kind: RecordKind, src: DeviceId, dst: DeviceId, seq: u8) -> Self {
        Self {
            time_s,
            kind,
            src: Some(src),
            dst: Some(dst),
            seq: Some(seq),
            anchor: None,
            distance_m: None,
            truth: None,
        }
    }

    pub fn measurement(time_s: f64, anchor: DeviceId, seq: u8, distance_m: f64, truth: Point3) -> Self {
        Self {
            time_s,
            kind: RecordKind::Measurement,
            src: None,
            dst: None,
            seq: Some(seq),
            anchor: Some(anchor),
            distance_m: Some(distance_m),
            truth: Some(truth),
        }
    }
}

/// Time-ordered record of a whole simulation run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimLog {
    pub records: Vec<SimRecord>,
}

impl SimLog {
    /// The estimator's input stream: each measurement with the true tag
    /// position at its timestamp.
    pub fn measurements(&self) -> Vec<(RangeMeasurement, Point3)> {
        self.records
            .iter()
            .filter(|r| r.kind == RecordKind::Measurement)
            .map(|r| {
                (
                    RangeMeasurement {
                        anchor: r.anchor.expect("measurement rows carry an anchor"),
                        seq: r.seq.expect("measurement rows carry a seq"),
                        distance: r.distance_m.expect("measurement rows carry a distance"),
                        time: r.time_s,
                    },
                    r.truth.expect("measurement rows carry ground truth"),
                )
            })
            .collect()
    }

    pub fn count_kind(&self, kind: RecordKind) -> usize {
        self.records.iter().filter(|r| r.kind == kind).count()
    }

    /// Emission times of the polls that start each cycle (polls addressed to
    /// the first anchor in the polling order).
    pub fn cycle_start_times(&self, first_anchor: DeviceId) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.kind == RecordKind::Poll && r.dst == Some(first_anchor))
            .map(|r| r.time_s)
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(SIMLOG_HEADER);
        out.push('\n');
        for r in &self.records {
            let opt_id = |v: Option<DeviceId>| v.map(|d| d.0.to_string()).unwrap_or_default();
            let opt_num = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            let (tx, ty, tz) = match r.truth {
                Some(p) => (p.x.to_string(), p.y.to_string(), p.z.to_string()),
                None => (String::new(), String::new(), String::new()),
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.time_s,
                r.kind.as_str(),
                opt_id(r.src),
                opt_id(r.dst),
                r.seq.map(|s| s.to_string()).unwrap_or_default(),
                opt_id(r.anchor),
                opt_num(r.distance_m),
                tx,
                ty,
                tz
            );
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, LogParseError> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim_end() == SIMLOG_HEADER => {}
            _ => return Err(LogParseError::BadHeader),
        }
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            let row = i + 2; // 1-based, after the header
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 10 {
                return Err(LogParseError::FieldCount {
                    row,
                    expected: 10,
                    got: fields.len(),
                });
            }
            let bad = |message: String| LogParseError::BadField { row, message };
            let time_s: f64 = fields[0]
                .parse()
                .map_err(|_| bad(format!("bad time `{}`", fields[0])))?;
            let kind = RecordKind::parse(fields[1])
                .ok_or_else(|| bad(format!("unknown kind `{}`", fields[1])))?;
            let opt_id = |s: &str| -> Result<Option<DeviceId>, LogParseError> {
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse::<u8>()
                        .map(|v| Some(DeviceId(v)))
                        .map_err(|_| bad(format!("bad device id `{s}`")))
                }
            };
            let opt_f64 = |s: &str| -> Result<Option<f64>, LogParseError> {
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse::<f64>()
                        .map(Some)
                        .map_err(|_| bad(format!("bad number `{s}`")))
                }
            };
            let seq = if fields[4].is_empty() {
                None
            } else {
                Some(
                    fields[4]
                        .parse::<u8>()
                        .map_err(|_| bad(format!("bad seq `{}`", fields[4])))?,
                )
            };
            let truth = match (opt_f64(fields[7])?, opt_f64(fields[8])?, opt_f64(fields[9])?) {
                (Some(x), Some(y), Some(z)) => Some(Point3::new(x, y, z)),
                (None, None, None) => None,
                _ => return Err(bad("partial ground-truth coordinates".into())),
            };
            records.push(SimRecord {
                time_s,
                kind,
                src: opt_id(fields[2])?,
                dst: opt_id(fields[3])?,
                seq,
                anchor: opt_id(fields[5])?,
                distance_m: opt_f64(fields[6])?,
                truth,
            });
        }
        Ok(Self { records })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trips() {
        let log = SimLog {
            records: vec![
                SimRecord::frame(0.25, RecordKind::Poll, DeviceId(0), DeviceId(3), 7),
                SimRecord::measurement(
                    0.5,
                    DeviceId(3),
                    7,
                    5.123,
                    Point3::new(1.0, 2.0, 0.75),
                ),
            ],
        };
        let csv = log.to_csv();
        let parsed = SimLog::from_csv(&csv).unwrap();
        assert_eq!(parsed, log);
    }

    #[test]
    fn bad_header_rejected() {
        assert_eq!(
            SimLog::from_csv("nope\n").unwrap_err(),
            LogParseError::BadHeader
        );
    }

    #[test]
    fn bad_row_reports_row_number() {
        let text = format!("{SIMLOG_HEADER}\n0.1,POLL,0,1,0,,,,,\nbroken");
        match SimLog::from_csv(&text).unwrap_err() {
            LogParseError::FieldCount { row, .. } => assert_eq!(row, 3),
            other => panic!("unexpected error {other:?}"),
        }
    }
}
