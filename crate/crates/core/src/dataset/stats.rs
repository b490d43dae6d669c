use crate::label::{Flank, UndefinedReason};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write;

/// Label distribution of one source. `total` counts derived labels; records
/// whose image could not be read are tallied in `errors` only.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceStats {
    pub total: usize,
    pub left: usize,
    pub right: usize,
    pub undefined: usize,
    pub empty_group: usize,
    pub overlap: usize,
    pub anchor_tie: usize,
    pub errors: usize,
}

impl SourceStats {
    pub fn record(&mut self, value: Flank, reason: Option<UndefinedReason>) {
        self.total += 1;
        match value {
            Flank::Left => self.left += 1,
            Flank::Right => self.right += 1,
            Flank::Undefined => {
                self.undefined += 1;
                match reason {
                    Some(UndefinedReason::Overlap) => self.overlap += 1,
                    Some(UndefinedReason::AnchorTie) => self.anchor_tie += 1,
                    Some(UndefinedReason::EmptyGroup) | None => self.empty_group += 1,
                }
            }
        }
    }

    pub fn merge(&mut self, other: &SourceStats) {
        self.total += other.total;
        self.left += other.left;
        self.right += other.right;
        self.undefined += other.undefined;
        self.empty_group += other.empty_group;
        self.overlap += other.overlap;
        self.anchor_tie += other.anchor_tie;
        self.errors += other.errors;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistributionStats {
    pub sources: BTreeMap<String, SourceStats>,
}

impl DistributionStats {
    pub fn source_mut(&mut self, source_id: &str) -> &mut SourceStats {
        self.sources.entry(source_id.to_string()).or_default()
    }

    pub fn merge(&mut self, other: &DistributionStats) {
        for (id, s) in &other.sources {
            self.source_mut(id).merge(s);
        }
    }

    pub fn totals(&self) -> SourceStats {
        self.sources.values().fold(SourceStats::default(), |mut acc, s| {
            acc.merge(s);
            acc
        })
    }
}

pub const STATS_HEADER: &str =
    "Dataset | Labeled Annotations | Left / Right / Undefined | Empty / Overlap / Tie | Errors";

fn row(out: &mut String, name: &str, s: &SourceStats) {
    let _ = writeln!(
        out,
        "{name} | {} | {} / {} / {} | {} / {} / {} | {}",
        s.total, s.left, s.right, s.undefined, s.empty_group, s.overlap, s.anchor_tie, s.errors
    );
}

/// One row per source plus a totals row.
pub fn stats_report(stats: &DistributionStats) -> String {
    let mut out = String::new();
    out.push_str(STATS_HEADER);
    out.push('\n');
    for (id, s) in &stats.sources {
        row(&mut out, id, s);
    }
    row(&mut out, "Total", &stats.totals());
    out
}
