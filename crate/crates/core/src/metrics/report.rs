use std::fmt::Write as _;

use serde::Serialize;

use super::{mean_ap, EvalConfig, EvalMode};
use crate::dataio::coco::Frequency;
use crate::sample::CategoryId;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryAp {
    pub id: CategoryId,
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frequency: Option<Frequency>,
    pub n_gt: usize,
    pub n_detections: usize,
    /// Mean over IoU thresholds.
    pub ap: f64,
    pub per_threshold: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThresholdAp {
    pub iou: f64,
    pub ap: f64,
}

/// Evaluation results. Split APs are `None` when no category of that
/// frequency has ground truth.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub per_image_cap: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_class_global_cap: Option<usize>,
    pub ap: f64,
    pub ap_r: Option<f64>,
    pub ap_c: Option<f64>,
    pub ap_f: Option<f64>,
    pub per_threshold: Vec<ThresholdAp>,
    pub per_category: Vec<CategoryAp>,
}

impl EvalReport {
    pub(super) fn assemble(cfg: &EvalConfig, per_category: Vec<CategoryAp>) -> Self {
        let scored: Vec<&CategoryAp> = per_category.iter().filter(|c| c.n_gt > 0).collect();
        let per_threshold = cfg
            .iou_thresholds
            .iter()
            .enumerate()
            .map(|(t, &iou)| ThresholdAp {
                iou,
                ap: if scored.is_empty() {
                    0.0
                } else {
                    scored.iter().map(|c| c.per_threshold[t]).sum::<f64>() / scored.len() as f64
                },
            })
            .collect();
        Self {
            mode: cfg.mode,
            per_image_cap: cfg.per_image_cap,
            per_class_global_cap: (cfg.mode == EvalMode::Fixed).then_some(cfg.per_class_global_cap),
            ap: mean_ap(&per_category, None).unwrap_or(0.0),
            ap_r: mean_ap(&per_category, Some(Frequency::Rare)),
            ap_c: mean_ap(&per_category, Some(Frequency::Common)),
            ap_f: mean_ap(&per_category, Some(Frequency::Frequent)),
            per_threshold,
            per_category,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Plain-text summary with aligned columns.
    pub fn to_table(&self) -> String {
        let pct = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{:.1}", 100.0 * x));
        let mode = match self.mode {
            EvalMode::Standard => "standard",
            EvalMode::Fixed => "fixed",
        };
        let mut out = String::new();
        let _ = writeln!(out, "mode {mode}, per-image cap {}", self.per_image_cap);
        let _ = writeln!(out, "{:<8}{:>8}{:>8}{:>8}{:>8}", "", "AP", "AP_r", "AP_c", "AP_f");
        let _ = writeln!(
            out,
            "{:<8}{:>8}{:>8}{:>8}{:>8}",
            "all",
            pct(Some(self.ap)),
            pct(self.ap_r),
            pct(self.ap_c),
            pct(self.ap_f)
        );
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<8}{:>8}", "IoU", "AP");
        for t in &self.per_threshold {
            let _ = writeln!(out, "{:<8.2}{:>8}", t.iou, pct(Some(t.ap)));
        }
        let _ = writeln!(out);
        let width = self
            .per_category
            .iter()
            .map(|c| c.name.len())
            .max()
            .unwrap_or(0)
            .max(8);
        let _ = writeln!(
            out,
            "{:>6}  {:<width$}  {:>4}  {:>6}  {:>6}  {:>8}",
            "id", "name", "freq", "gt", "dets", "AP"
        );
        for c in &self.per_category {
            let freq = match c.frequency {
                Some(Frequency::Rare) => "r",
                Some(Frequency::Common) => "c",
                Some(Frequency::Frequent) => "f",
                None => "-",
            };
            let ap = if c.n_gt > 0 { pct(Some(c.ap)) } else { "-".into() };
            let _ = writeln!(
                out,
                "{:>6}  {:<width$}  {:>4}  {:>6}  {:>6}  {:>8}",
                c.id, c.name, freq, c.n_gt, c.n_detections, ap
            );
        }
        out
    }
}
