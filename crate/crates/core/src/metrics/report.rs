use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{cmc_from_firsts, ProtocolEcho};
use crate::error::{IoContext, Result};
use crate::fsutil::write_atomic;

/// Results of one evaluation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub map: f64,
    /// `cmc[k-1]` is the match rate at rank k.
    pub cmc: Vec<f64>,
    pub per_query_ap: Vec<f64>,
    pub n_queries: usize,
    pub n_gallery: usize,
    /// Queries without any relevant gallery item.
    pub n_excluded: usize,
    pub protocol: ProtocolEcho,
}

impl EvalReport {
    pub(super) fn from_parts(
        method: &str,
        aps: Vec<f64>,
        firsts: &[usize],
        n_queries: usize,
        n_gallery: usize,
        protocol: ProtocolEcho,
    ) -> Self {
        let map = if aps.is_empty() {
            0.0
        } else {
            aps.iter().sum::<f64>() / aps.len() as f64
        };
        EvalReport {
            method: method.to_string(),
            map,
            cmc: cmc_from_firsts(firsts, protocol.max_rank),
            n_excluded: n_queries - aps.len(),
            per_query_ap: aps,
            n_queries,
            n_gallery,
            protocol,
        }
    }

    /// Match rate at 1-based rank `k` (saturating at the last entry).
    pub fn rank(&self, k: usize) -> f64 {
        match self.cmc.len() {
            0 => 0.0,
            n => self.cmc[k.clamp(1, n) - 1],
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).io_ctx(|| format!("reading report {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn table_row(&self) -> TableRow {
        TableRow {
            method: self.method.clone(),
            map: self.map,
            rank1: self.rank(1),
            rank5: self.rank(5),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TableRow {
    pub method: String,
    pub map: f64,
    pub rank1: f64,
    pub rank5: f64,
}

/// Fixed-width `Method | mAP | Rank1 | Rank5` table, values in percent.
pub fn format_table(rows: &[TableRow]) -> String {
    let w = rows.iter().map(|r| r.method.len()).max().unwrap_or(0).max("Method".len());
    let mut out = String::new();
    let _ = writeln!(out, "{:<w$} | {:>6} | {:>6} | {:>6}", "Method", "mAP", "Rank1", "Rank5");
    let _ = writeln!(out, "{}-|-{}-|-{}-|-{}", "-".repeat(w), "-".repeat(6), "-".repeat(6), "-".repeat(6));
    for r in rows {
        let _ = writeln!(
            out,
            "{:<w$} | {:>6.2} | {:>6.2} | {:>6.2}",
            r.method,
            100.0 * r.map,
            100.0 * r.rank1,
            100.0 * r.rank5
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Protocol;
    use crate::retrieval::CameraFilter;

    fn report() -> EvalReport {
        let echo = ProtocolEcho::new(Protocol::Veri, CameraFilter::CrossCamera, 3, vec![], 5);
        EvalReport::from_parts("transfer-AANet-All", vec![1.0, 0.5], &[1, 2], 2, 10, echo)
    }

    #[test]
    fn json_roundtrip() {
        let r = report();
        let back: EvalReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
        assert_eq!(r.map, 0.75);
        assert_eq!(r.cmc, vec![0.5, 1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn table_layout() {
        let t = format_table(&[report().table_row()]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("Method"));
        assert!(lines[0].contains("| mAP") || lines[0].contains("|    mAP"));
        assert!(lines[2].contains("75.00"));
        assert!(lines[2].contains("50.00"));
        assert!(lines[2].contains("100.00"));
    }
}
