use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::kernels::Real;
use crate::model::TokenId;

/// One draft/verify iteration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    /// Draft depth used this iteration.
    pub drafted: usize,
    pub accepted: usize,
    pub bonus: TokenId,
    /// Tokens actually appended to the output (after stop truncation).
    pub emitted: usize,
    pub draft_ns: u64,
    pub verify_ns: u64,
}

/// Conditional acceptance counts at one drafting depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DepthCount {
    /// Times every shallower draft was accepted, so this depth was tested.
    pub attempted: u64,
    pub accepted: u64,
}

impl DepthCount {
    /// `None` when the depth was never reached.
    pub fn rate(&self) -> Option<Real> {
        (self.attempted > 0).then(|| self.accepted as Real / self.attempted as Real)
    }
}

/// Adds one episode with `drafted` depths of which the first `accepted`
/// matched.
pub(crate) fn tally(counts: &mut Vec<DepthCount>, drafted: usize, accepted: usize) {
    if counts.len() < drafted {
        counts.resize(drafted, DepthCount::default());
    }
    for (k, c) in counts.iter_mut().enumerate().take(drafted) {
        if accepted >= k {
            c.attempted += 1;
        }
        if accepted > k {
            c.accepted += 1;
        }
    }
}

pub(crate) fn merge_counts(into: &mut Vec<DepthCount>, other: &[DepthCount]) {
    if into.len() < other.len() {
        into.resize(other.len(), DepthCount::default());
    }
    for (a, b) in into.iter_mut().zip(other) {
        a.attempted += b.attempted;
        a.accepted += b.accepted;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthSummary {
    pub depth: usize,
    pub attempted: u64,
    pub accepted: u64,
    pub rate: Option<Real>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetrySummary {
    pub iterations: usize,
    pub emitted: usize,
    pub mean_emitted: Option<Real>,
    pub per_depth: Vec<DepthSummary>,
}

/// Telemetry of one decode run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AcceptanceRecord {
    pub iterations: Vec<IterationRecord>,
    pub depth: Vec<DepthCount>,
}

impl AcceptanceRecord {
    pub(crate) fn push(&mut self, rec: IterationRecord) {
        tally(&mut self.depth, rec.drafted, rec.accepted);
        self.iterations.push(rec);
    }

    /// Appends another run's iterations and adds its depth counts.
    pub fn merge(&mut self, other: &AcceptanceRecord) {
        merge_counts(&mut self.depth, &other.depth);
        self.iterations.extend(other.iterations.iter().cloned());
    }

    pub fn emitted(&self) -> usize {
        self.iterations.iter().map(|r| r.emitted).sum()
    }

    /// Mean tokens per iteration from the untruncated accepted + bonus
    /// count (the empirical τ).
    pub fn mean_tokens_per_iteration(&self) -> Option<Real> {
        let n = self.iterations.len();
        (n > 0).then(|| {
            self.iterations.iter().map(|r| r.accepted + 1).sum::<usize>() as Real / n as Real
        })
    }

    pub fn rates(&self) -> Vec<Option<Real>> {
        self.depth.iter().map(DepthCount::rate).collect()
    }

    pub fn summary(&self) -> TelemetrySummary {
        TelemetrySummary {
            iterations: self.iterations.len(),
            emitted: self.emitted(),
            mean_emitted: self.mean_tokens_per_iteration(),
            per_depth: self
                .depth
                .iter()
                .enumerate()
                .map(|(k, c)| DepthSummary {
                    depth: k + 1,
                    attempted: c.attempted,
                    accepted: c.accepted,
                    rate: c.rate(),
                })
                .collect(),
        }
    }

    /// One JSON object per iteration, then `{"summary": …}`.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for rec in &self.iterations {
            serde_json::to_writer(&mut out, rec)?;
            out.write_all(b"\n")?;
        }
        serde_json::to_writer(&mut out, &serde_json::json!({ "summary": self.summary() }))?;
        out.write_all(b"\n")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tally_is_conditional() {
        let mut c = Vec::new();
        tally(&mut c, 3, 0);
        tally(&mut c, 3, 2);
        tally(&mut c, 3, 3);
        assert_eq!(c[0], DepthCount { attempted: 3, accepted: 2 });
        assert_eq!(c[1], DepthCount { attempted: 2, accepted: 2 });
        assert_eq!(c[2], DepthCount { attempted: 2, accepted: 1 });
        let empty = DepthCount::default();
        assert_eq!(empty.rate(), None);
    }

    #[test]
    fn jsonl_shape() {
        let mut r = AcceptanceRecord::default();
        r.push(IterationRecord {
            iter: 0,
            drafted: 2,
            accepted: 1,
            bonus: 4,
            emitted: 2,
            draft_ns: 10,
            verify_ns: 20,
        });
        let mut buf = Vec::new();
        r.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        let first: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
        for key in ["iter", "drafted", "accepted", "bonus", "draft_ns", "verify_ns"] {
            assert!(first.get(key).is_some(), "missing {key}");
        }
        let last: serde_json::Value = serde_json::from_str(lines[1]).unwrap();
        assert_eq!(last["summary"]["emitted"], 2);
        assert_eq!(last["summary"]["per_depth"][0]["rate"], 1.0);
    }
}
