//! Heartbeat log files.
//!
//! ```text
//! hbtm-log v1[ <label>]
//! #ring,<id>,<id>,...
//! #start,<thread_id>
//! thread_id,seq_no,timestamp_ns,loop_id,iteration
//! #exit,<thread_id>
//! ```
//!
//! Threads are written in ring order. A table with no threads is the header
//! alone. Every line, including the last, ends with `\n`; a missing final
//! newline is reported as a truncated record.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::config::DEFAULT_WINDOW_CAPACITY;
use crate::heartbeat::{CoreError, Heartbeat, HeartbeatTable, SequenceSnapshot, TableSnapshot};

pub const LOG_MAGIC: &str = "hbtm-log";
pub const LOG_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("unsupported log version `{0}`")]
    UnsupportedVersion(String),
    #[error(transparent)]
    Table(#[from] CoreError),
}

fn malformed(line: usize, reason: impl Into<String>) -> LogError {
    LogError::MalformedRecord { line, reason: reason.into() }
}

/// A parsed log: the table image plus the optional session label from the header.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LogContents {
    pub label: Option<String>,
    pub table: TableSnapshot,
}

pub fn encode_log(snapshot: &TableSnapshot, label: Option<&str>) -> String {
    let mut out = String::new();
    out.push_str(LOG_MAGIC);
    let _ = write!(out, " v{LOG_VERSION}");
    if let Some(label) = label {
        out.push(' ');
        out.push_str(label);
    }
    out.push('\n');
    if snapshot.ring_order.is_empty() {
        return out;
    }
    out.push_str("#ring");
    for id in &snapshot.ring_order {
        let _ = write!(out, ",{id}");
    }
    out.push('\n');
    for seq in &snapshot.sequences {
        if seq.started {
            let _ = writeln!(out, "#start,{}", seq.thread_id);
        }
        for r in &seq.records {
            let _ = writeln!(out, "{},{},{},{},{}", r.thread_id, r.seq_no, r.timestamp_ns, r.loop_id, r.iteration);
        }
        if seq.exited {
            let _ = writeln!(out, "#exit,{}", seq.thread_id);
        }
    }
    out
}

fn parse_field<T: std::str::FromStr>(s: &str, what: &str, line: usize) -> Result<T, LogError> {
    s.parse().map_err(|_| malformed(line, format!("bad {what} `{s}`")))
}

pub fn decode_log(text: &str) -> Result<LogContents, LogError> {
    let mut lines = text.split_inclusive('\n').enumerate().map(|(i, l)| (i + 1, l));
    let Some((_, header)) = lines.next() else {
        return Err(malformed(1, "empty file"));
    };
    let label = parse_header(header)?;

    let mut ring: Option<Vec<u32>> = None;
    let mut seqs: BTreeMap<u32, SequenceSnapshot> = BTreeMap::new();
    for (n, raw) in lines {
        let Some(line) = raw.strip_suffix('\n') else {
            return Err(malformed(n, "truncated line (no terminating newline)"));
        };
        let line = line.strip_suffix('\r').unwrap_or(line);
        if let Some(rest) = line.strip_prefix('#') {
            let mut parts = rest.split(',');
            let tag = parts.next().unwrap_or_default();
            match tag {
                "ring" => {
                    if ring.is_some() {
                        return Err(malformed(n, "duplicate ring line"));
                    }
                    let ids: Vec<u32> = parts.map(|p| parse_field(p, "thread id", n)).collect::<Result<_, _>>()?;
                    for &id in &ids {
                        if seqs.insert(id, SequenceSnapshot::new(id)).is_some() {
                            return Err(malformed(n, format!("thread {id} repeated in ring")));
                        }
                    }
                    ring = Some(ids);
                }
                "start" | "exit" => {
                    let id_text = parts.next().ok_or_else(|| malformed(n, "marker without thread id"))?;
                    if parts.next().is_some() {
                        return Err(malformed(n, "extra fields after marker"));
                    }
                    let id: u32 = parse_field(id_text, "thread id", n)?;
                    let seq = seqs.get_mut(&id).ok_or_else(|| malformed(n, format!("thread {id} not in ring")))?;
                    if tag == "start" {
                        if seq.started || !seq.records.is_empty() {
                            return Err(malformed(n, "start marker out of place"));
                        }
                        seq.started = true;
                    } else {
                        if !seq.started || seq.exited {
                            return Err(malformed(n, "exit marker out of place"));
                        }
                        seq.exited = true;
                    }
                }
                other => return Err(malformed(n, format!("unknown marker `#{other}`"))),
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(malformed(n, format!("expected 5 fields, found {}", fields.len())));
        }
        let hb = Heartbeat {
            thread_id: parse_field(fields[0], "thread_id", n)?,
            seq_no: parse_field(fields[1], "seq_no", n)?,
            timestamp_ns: parse_field(fields[2], "timestamp_ns", n)?,
            loop_id: parse_field(fields[3], "loop_id", n)?,
            iteration: parse_field(fields[4], "iteration", n)?,
        };
        let seq = seqs
            .get_mut(&hb.thread_id)
            .ok_or_else(|| malformed(n, format!("thread {} not in ring", hb.thread_id)))?;
        if !seq.started || seq.exited {
            return Err(malformed(n, "record outside start/exit markers"));
        }
        if let Some(prev) = seq.records.last() {
            if hb.seq_no != prev.seq_no + 1 {
                return Err(malformed(n, format!("seq_no {} does not follow {}", hb.seq_no, prev.seq_no)));
            }
            if hb.timestamp_ns < prev.timestamp_ns {
                return Err(malformed(n, "timestamp regression"));
            }
        } else if hb.seq_no == 0 {
            return Err(malformed(n, "seq_no starts at 1"));
        }
        seq.last_seq_no = hb.seq_no;
        seq.records.push(hb);
    }

    let ring_order = ring.unwrap_or_default();
    let sequences = ring_order.iter().map(|id| seqs.remove(id).expect("inserted with ring")).collect();
    Ok(LogContents { label, table: TableSnapshot { ring_order, sequences } })
}

fn parse_header(raw: &str) -> Result<Option<String>, LogError> {
    let line = raw.strip_suffix('\n').ok_or_else(|| malformed(1, "truncated header"))?;
    let line = line.strip_suffix('\r').unwrap_or(line);
    let mut parts = line.splitn(3, ' ');
    if parts.next() != Some(LOG_MAGIC) {
        return Err(malformed(1, "missing hbtm-log header"));
    }
    let version = parts.next().unwrap_or_default();
    if version != format!("v{LOG_VERSION}") {
        return Err(LogError::UnsupportedVersion(version.to_string()));
    }
    Ok(parts.next().filter(|l| !l.is_empty()).map(str::to_string))
}

/// Writes the table's retained state and returns the number of heartbeat records written.
pub fn persist_log(table: &HeartbeatTable, path: &Path) -> Result<usize, LogError> {
    persist_log_labeled(table, path, None)
}

pub fn persist_log_labeled(table: &HeartbeatTable, path: &Path, label: Option<&str>) -> Result<usize, LogError> {
    let snapshot = table.snapshot();
    let count = snapshot.sequences.iter().map(|s| s.records.len()).sum();
    fs::write(path, encode_log(&snapshot, label))?;
    Ok(count)
}

pub fn read_log(path: &Path) -> Result<LogContents, LogError> {
    decode_log(&fs::read_to_string(path)?)
}

/// Loads a log into a live table. The window capacity is the default, or
/// larger if some thread retained more records.
pub fn load_log(path: &Path) -> Result<HeartbeatTable, LogError> {
    let contents = read_log(path)?;
    let longest = contents.table.sequences.iter().map(|s| s.records.len()).max().unwrap_or(0);
    Ok(HeartbeatTable::from_snapshot(&contents.table, longest.max(DEFAULT_WINDOW_CAPACITY))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_table() -> HeartbeatTable {
        let t = HeartbeatTable::new(8);
        for id in [0u32, 1] {
            let h = t.register_thread(id).unwrap();
            for i in 0..3u64 {
                h.record(7, i * 10, 1_000 + u64::from(id) * 3 + i * 100).unwrap();
            }
            if id == 1 {
                h.mark_exit();
            }
        }
        t
    }

    #[test]
    fn empty_table_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.log");
        let t = HeartbeatTable::new(4);
        assert_eq!(persist_log(&t, &path).unwrap(), 0);
        assert_eq!(fs::read_to_string(&path).unwrap(), "hbtm-log v1\n");
        let back = load_log(&path).unwrap();
        assert!(back.is_empty());
    }

    #[test]
    fn two_threads_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.log");
        let t = sample_table();
        assert_eq!(persist_log(&t, &path).unwrap(), 6);
        let back = load_log(&path).unwrap();
        assert_eq!(back.snapshot(), t.snapshot());
    }

    #[test]
    fn exact_layout() {
        let text = encode_log(&sample_table().snapshot(), Some("pthread"));
        let expected = "hbtm-log v1 pthread\n#ring,0,1\n#start,0\n0,1,1000,7,0\n0,2,1100,7,10\n0,3,1200,7,20\n\
                        #start,1\n1,1,1003,7,0\n1,2,1103,7,10\n1,3,1203,7,20\n#exit,1\n";
        assert_eq!(text, expected);
        let parsed = decode_log(&text).unwrap();
        assert_eq!(parsed.label.as_deref(), Some("pthread"));
    }

    #[test]
    fn truncated_last_line_reports_its_number() {
        let text = encode_log(&sample_table().snapshot(), None);
        let cut = &text[..text.len() - 12];
        let last_line = cut.lines().count();
        match decode_log(cut) {
            Err(LogError::MalformedRecord { line, .. }) => assert_eq!(line, last_line),
            other => panic!("expected malformed record, got {other:?}"),
        }
    }

    #[test]
    fn rejects_unknown_version() {
        assert!(matches!(decode_log("hbtm-log v2\n"), Err(LogError::UnsupportedVersion(v)) if v == "v2"));
        assert!(matches!(decode_log("something else\n"), Err(LogError::MalformedRecord { line: 1, .. })));
    }

    #[test]
    fn rejects_structural_errors() {
        let cases = [
            ("hbtm-log v1\n#ring,0\n0,1,5,0,0\n", 3),                  // record before start
            ("hbtm-log v1\n#ring,0\n#start,0\n0,2,5,0,0\n0,4,6,0,0\n", 5), // gap
            ("hbtm-log v1\n#ring,0\n#start,0\n0,1,5,0,0\n0,2,4,0,0\n", 5), // ts regression
            ("hbtm-log v1\n#ring,0\n#start,1\n", 3),                   // not in ring
            ("hbtm-log v1\n#ring,0\n#bogus,0\n", 3),
            ("hbtm-log v1\n#ring,0,0\n", 2),
            ("hbtm-log v1\n#ring,0\n#exit,0\n", 3),                    // exit before start
            ("hbtm-log v1\n#ring,0\n#start,0\n0,1,x,0,0\n", 4),
        ];
        for (text, want) in cases {
            match decode_log(text) {
                Err(LogError::MalformedRecord { line, .. }) => assert_eq!(line, want, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn evicted_window_round_trips() {
        let t = HeartbeatTable::new(3);
        let h = t.register_thread(4).unwrap();
        for i in 0..10 {
            h.record(0, i, i * 2).unwrap();
        }
        let snap = t.snapshot();
        let parsed = decode_log(&encode_log(&snap, None)).unwrap();
        assert_eq!(parsed.table, snap);
        assert_eq!(parsed.table.sequences[0].last_seq_no, 10);
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let t = sample_table();
        let err = persist_log(&t, Path::new("/nonexistent-dir/x/y.log")).unwrap_err();
        assert!(matches!(err, LogError::Io(_)));
    }
}
