//! Checks that raw tracking values never leave a client: neither as f64
//! bytes in payloads/envelopes nor as text in hub or channel logs.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::scoring::TrackingSnapshot;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Finding {
    /// An 8-byte little-endian f64 of a raw value inside a binary blob.
    Bytes { blob: usize, offset: usize, value: f64 },
    /// A raw real value or learner id inside a log line.
    Text { line: usize, token: String },
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct LeakReport {
    pub blobs_scanned: usize,
    pub lines_scanned: usize,
    pub findings: Vec<Finding>,
}

impl LeakReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }
}

pub struct LeakScanner {
    patterns: BTreeSet<[u8; 8]>,
    reals: BTreeSet<String>,
    learner_ids: BTreeSet<String>,
}

impl LeakScanner {
    pub fn new<'a>(snapshots: impl IntoIterator<Item = &'a TrackingSnapshot>) -> Self {
        let mut patterns = BTreeSet::new();
        let mut reals = BTreeSet::new();
        let mut learner_ids = BTreeSet::new();
        for s in snapshots {
            learner_ids.insert(s.learner_id.clone());
            for v in s.values() {
                // zero is everywhere (padding, empty counters); skip it
                if v != 0.0 {
                    patterns.insert(v.to_le_bytes());
                }
                // integers collide with counters and versions in logs
                if v.fract() != 0.0 {
                    reals.insert(v.to_string());
                }
            }
        }
        LeakScanner {
            patterns,
            reals,
            learner_ids,
        }
    }

    pub fn pattern_count(&self) -> usize {
        self.patterns.len()
    }

    fn scan_blob(&self, idx: usize, blob: &[u8], out: &mut Vec<Finding>) {
        for (offset, w) in blob.windows(8).enumerate() {
            let key: [u8; 8] = w.try_into().expect("window of 8");
            if self.patterns.contains(&key) {
                out.push(Finding::Bytes {
                    blob: idx,
                    offset,
                    value: f64::from_le_bytes(key),
                });
            }
        }
    }

    fn scan_line(&self, line_no: usize, line: &str, out: &mut Vec<Finding>) {
        for id in &self.learner_ids {
            if line.contains(id.as_str()) {
                out.push(Finding::Text {
                    line: line_no,
                    token: id.clone(),
                });
            }
        }
        let is_num = |c: char| c.is_ascii_digit() || c == '.' || c == '-' || c == 'e' || c == 'E' || c == '+';
        for tok in line.split(|c: char| !is_num(c)).filter(|t| !t.is_empty()) {
            if self.reals.contains(tok) {
                out.push(Finding::Text {
                    line: line_no,
                    token: tok.to_string(),
                });
            }
        }
    }

    pub fn scan<'a>(&self, blobs: impl IntoIterator<Item = &'a [u8]>, logs: &[&str]) -> LeakReport {
        let mut report = LeakReport::default();
        for (i, b) in blobs.into_iter().enumerate() {
            self.scan_blob(i, b, &mut report.findings);
            report.blobs_scanned += 1;
        }
        let mut line_no = 0;
        for log in logs {
            for line in log.lines() {
                line_no += 1;
                self.scan_line(line_no, line, &mut report.findings);
            }
        }
        report.lines_scanned = line_no;
        report
    }
}
