//! Text-aware query selection and the query supplement.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Box2D;
use crate::metrics::{Detection, Origin};
use crate::sample::{CategoryId, ImageId};
use crate::vlalign::{sigmoid, Matrix};

/// Decoder query count and the number of encoder candidates appended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QueryBudget {
    pub decoder_queries: usize,
    pub supplement_queries: usize,
}

impl Default for QueryBudget {
    fn default() -> Self {
        Self {
            decoder_queries: 300,
            supplement_queries: 700,
        }
    }
}

impl QueryBudget {
    /// Per-image prediction cap matching this budget.
    pub fn total(&self) -> usize {
        self.decoder_queries + self.supplement_queries
    }
}

/// How supplemented rows become detections.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupplementMode {
    /// One detection per row, labelled with its best-matching text.
    #[default]
    ArgmaxClass,
    /// The best `(row, text)` pairs, possibly several per row.
    PerClass,
}

/// Encoder output of one image: a logit row and a box per encoder feature.
#[derive(Debug, Clone)]
pub struct EncoderCandidates {
    pub image_id: ImageId,
    pub logits: Matrix,
    pub boxes: Vec<Box2D>,
}

/// Best logit of each row and the column achieving it (first on ties).
pub fn row_max_scores(logits: &Matrix) -> Vec<(f64, usize)> {
    (0..logits.rows())
        .map(|r| {
            logits
                .row(r)
                .iter()
                .enumerate()
                .fold((f64::NEG_INFINITY, 0), |best, (c, &v)| {
                    if v > best.0 {
                        (v, c)
                    } else {
                        best
                    }
                })
        })
        .collect()
}

fn rank_rows(scores: &[(f64, usize)], rows: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut idx: Vec<usize> = rows.collect();
    idx.sort_by(|&a, &b| scores[b].0.total_cmp(&scores[a].0).then(a.cmp(&b)));
    idx
}

/// Indices of the `k` rows with the highest max-over-text logit, best
/// first; ties go to the lower row index.
pub fn text_aware_select(logits: &Matrix, k: usize) -> Result<Vec<usize>> {
    if k > logits.rows() {
        return Err(Error::KTooLarge {
            k,
            rows: logits.rows(),
        });
    }
    let scores = row_max_scores(logits);
    let mut ranked = rank_rows(&scores, 0..logits.rows());
    ranked.truncate(k);
    Ok(ranked)
}

/// Appends `budget.supplement_queries` encoder candidates after the decoder
/// predictions. Rows in `exclude` (those already used as decoder queries)
/// are skipped; the rest are ranked by max-over-text probability. Text
/// column `j` maps to `column_categories[j]`.
pub fn supplement_predictions(
    decoder_preds: &[Detection],
    encoder: &EncoderCandidates,
    column_categories: &[CategoryId],
    budget: &QueryBudget,
    exclude: &[usize],
    mode: SupplementMode,
) -> Result<Vec<Detection>> {
    let logits = &encoder.logits;
    if logits.rows() != encoder.boxes.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} logit rows but {} encoder boxes",
            logits.rows(),
            encoder.boxes.len()
        )));
    }
    if logits.cols() != column_categories.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} logit columns but {} categories",
            logits.cols(),
            column_categories.len()
        )));
    }
    let excluded: HashSet<usize> = exclude.iter().copied().filter(|&r| r < logits.rows()).collect();
    let available_rows = logits.rows() - excluded.len();
    let n = budget.supplement_queries;

    let mut out = Vec::with_capacity(decoder_preds.len() + n);
    out.extend_from_slice(decoder_preds);
    if n == 0 {
        return Ok(out);
    }

    let make = |row: usize, col: usize| Detection {
        image_id: encoder.image_id,
        category_id: column_categories[col],
        bbox: encoder.boxes[row],
        score: sigmoid(logits.get(row, col)),
        origin: Origin::Supplement,
    };
    let open_rows = (0..logits.rows()).filter(|r| !excluded.contains(r));

    match mode {
        SupplementMode::ArgmaxClass => {
            if n > available_rows {
                return Err(Error::BudgetExceedsRows {
                    budget: n,
                    available: available_rows,
                });
            }
            let scores = row_max_scores(logits);
            out.extend(
                rank_rows(&scores, open_rows)
                    .into_iter()
                    .take(n)
                    .map(|r| make(r, scores[r].1)),
            );
        }
        SupplementMode::PerClass => {
            let available = available_rows * logits.cols();
            if n > available {
                return Err(Error::BudgetExceedsRows {
                    budget: n,
                    available,
                });
            }
            let mut pairs: Vec<(usize, usize)> = open_rows
                .flat_map(|r| (0..logits.cols()).map(move |c| (r, c)))
                .collect();
            pairs.sort_by(|a, b| {
                logits
                    .get(b.0, b.1)
                    .total_cmp(&logits.get(a.0, a.1))
                    .then(a.cmp(b))
            });
            out.extend(pairs.into_iter().take(n).map(|(r, c)| make(r, c)));
        }
    }
    Ok(out)
}
