//! Trace-driven workload input: one `key<TAB>value` record per LF-terminated
//! UTF-8 line, parsed streamingly in file order.

use std::fs::File;
use std::io::{BufRead, BufReader, Lines};
use std::path::Path;

use crate::store::MAX_VALUE_LEN;

use super::WorkloadError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub key: Vec<u8>,
    pub value: Vec<u8>,
}

pub struct TraceReader {
    lines: Lines<BufReader<File>>,
    line_no: usize,
}

/// Open a trace file for streaming. Records come back in file order;
/// parse errors carry their 1-based line number.
pub fn load_trace(path: &Path) -> Result<TraceReader, WorkloadError> {
    let file = File::open(path)?;
    Ok(TraceReader {
        lines: BufReader::new(file).lines(),
        line_no: 0,
    })
}

impl TraceReader {
    fn parse(&self, line: &str) -> Result<TraceRecord, WorkloadError> {
        let (key, value) = line
            .split_once('\t')
            .ok_or(WorkloadError::MalformedLine(self.line_no))?;
        if key.is_empty() {
            return Err(WorkloadError::MalformedLine(self.line_no));
        }
        if value.len() > MAX_VALUE_LEN {
            return Err(WorkloadError::ValueTooLarge {
                line: self.line_no,
                len: value.len(),
            });
        }
        Ok(TraceRecord {
            key: key.as_bytes().to_vec(),
            value: value.as_bytes().to_vec(),
        })
    }
}

impl Iterator for TraceReader {
    type Item = Result<TraceRecord, WorkloadError>;

    fn next(&mut self) -> Option<Self::Item> {
        let line = self.lines.next()?;
        self.line_no += 1;
        Some(match line {
            Ok(line) => self.parse(&line),
            Err(e) => Err(WorkloadError::Io(e)),
        })
    }
}

/// Read and validate a whole trace.
pub fn read_trace(path: &Path) -> Result<Vec<TraceRecord>, WorkloadError> {
    load_trace(path)?.collect()
}
