use std::fmt::Write as _;

use super::clear::clear_from_prepared;
use super::hota::hota_from_prepared;
use super::identity::{finish, id_from_prepared};
use super::{prepare, ClearMetrics, EvalOptions, HotaMetrics, IdMetrics};
use crate::error::{Error, Result};
use crate::types::{GtEntry, TrackOutput};

pub const REPORT_COLUMNS: [&str; 13] = [
    "sequence", "MOTA", "FN", "FP", "IDSW", "HOTA", "AssA", "IDR", "IDP", "IDF1", "DetA", "GT", "PRED",
];

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub sequence: String,
    pub clear: ClearMetrics,
    pub id: IdMetrics,
    pub hota: HotaMetrics,
    pub pred_count: usize,
}

impl MetricsRow {
    fn cells(&self) -> Vec<String> {
        let pct = |v: f64| format!("{:.2}", 100.0 * v);
        vec![
            self.sequence.clone(),
            pct(self.clear.mota),
            self.clear.false_negatives.to_string(),
            self.clear.false_positives.to_string(),
            self.clear.id_switches.to_string(),
            pct(self.hota.hota),
            pct(self.hota.ass_a),
            pct(self.id.idr),
            pct(self.id.idp),
            pct(self.id.idf1),
            pct(self.hota.det_a),
            self.clear.gt_count.to_string(),
            self.pred_count.to_string(),
        ]
    }
}

/// Evaluates one sequence.
pub fn evaluate_sequence(
    name: &str,
    gt: &[GtEntry],
    pred: &[TrackOutput],
    opts: &EvalOptions,
) -> Result<MetricsRow> {
    let data = prepare(gt, pred, opts)?;
    Ok(MetricsRow {
        sequence: name.to_string(),
        clear: clear_from_prepared(&data, opts),
        id: id_from_prepared(&data, opts),
        hota: hota_from_prepared(&data),
        pred_count: data.total_pred,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
    pub aggregate: MetricsRow,
    /// Optional verification table, pairs of (FAR, TPR).
    pub verification: Vec<(f64, f64)>,
}

impl MetricsReport {
    /// Rows are sorted by sequence name; the aggregate pools raw counts.
    pub fn from_rows(mut rows: Vec<MetricsRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyDataset);
        }
        rows.sort_by(|a, b| a.sequence.cmp(&b.sequence));
        let sum = |f: &dyn Fn(&MetricsRow) -> usize| rows.iter().map(f).sum::<usize>();
        let gt = sum(&|r| r.clear.gt_count);
        let fp = sum(&|r| r.clear.false_positives);
        let fn_ = sum(&|r| r.clear.false_negatives);
        let idsw = sum(&|r| r.clear.id_switches);
        let pred = sum(&|r| r.pred_count);
        let clear = ClearMetrics {
            mota: 1.0 - (fp + fn_ + idsw) as f64 / gt as f64,
            false_positives: fp,
            false_negatives: fn_,
            id_switches: idsw,
            gt_count: gt,
            matches: sum(&|r| r.clear.matches),
        };
        let id = finish(sum(&|r| r.id.idtp), gt, pred);
        let hota = HotaMetrics::combine(rows.iter().map(|r| &r.hota));
        let aggregate = MetricsRow { sequence: "AGGREGATE".into(), clear, id, hota, pred_count: pred };
        Ok(MetricsReport { rows, aggregate, verification: Vec::new() })
    }

    fn all_rows(&self) -> impl Iterator<Item = &MetricsRow> {
        self.rows.iter().chain(std::iter::once(&self.aggregate))
    }

    pub fn to_csv(&self) -> String {
        let mut out = REPORT_COLUMNS.join(",");
        out.push('\n');
        for row in self.all_rows() {
            out.push_str(&row.cells().join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_table(&self) -> String {
        let cells: Vec<Vec<String>> = self.all_rows().map(MetricsRow::cells).collect();
        let mut widths: Vec<usize> = REPORT_COLUMNS.iter().map(|c| c.len()).collect();
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        let line = |out: &mut String, row: &[String]| {
            for (i, (c, w)) in row.iter().zip(&widths).enumerate() {
                if i == 0 {
                    let _ = write!(out, "{c:<w$}");
                } else {
                    let _ = write!(out, "  {c:>w$}");
                }
            }
            out.push('\n');
        };
        let header: Vec<String> = REPORT_COLUMNS.iter().map(|s| s.to_string()).collect();
        line(&mut out, &header);
        for row in &cells {
            line(&mut out, row);
        }
        if !self.verification.is_empty() {
            out.push('\n');
            for (far, tpr) in &self.verification {
                let _ = writeln!(out, "TPR@FAR={far}: {:.2}", 100.0 * tpr);
            }
        }
        out
    }
}
