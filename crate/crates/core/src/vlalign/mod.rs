//! Vision-text alignment: the cosine similarity head, the IoU-modulated
//! classification loss, box regression terms, and text-aware query
//! selection with query supplement.

mod loss;
mod query;

pub use loss::{
    composite_loss, mal_loss, run_loss_check, CompositeLoss, LossCheckConfig, LossCheckReport,
    LossWeights, MalLoss, MinimizerPoint, GRADIENT_TOLERANCE, MINIMIZER_TOLERANCE, PROB_EPS, REL_ERROR_FLOOR,
};
pub use query::{
    row_max_scores, supplement_predictions, text_aware_select, EncoderCandidates, QueryBudget,
    SupplementMode,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix of embeddings, one row per item.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    dim: usize,
    values: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::DimensionMismatch("embedding dimension is zero".into()));
        }
        if values.len() != rows * dim {
            return Err(Error::DimensionMismatch(format!(
                "{rows}x{dim} embedding needs {} values, got {}",
                rows * dim,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("embedding contains a non-finite value".into()));
        }
        Ok(Self { rows, dim, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch("ragged embedding rows".into()));
        }
        Self::new(rows.len(), dim, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// Rows scaled to unit length; fails on a zero row.
    fn normalized(&self, name: &'static str) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.values.len());
        for i in 0..self.rows {
            let r = self.row(i);
            let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::ZeroNormRow { matrix: name, row: i });
            }
            out.extend(r.iter().map(|v| v / norm));
        }
        Ok(out)
    }
}

/// Row-major real matrix used for logits and probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch("ragged matrix rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Scale and bias of the alignment head.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlignmentHeadParams {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for AlignmentHeadParams {
    /// `alpha = ln 15`, `beta = -ln 100`.
    fn default() -> Self {
        Self {
            alpha: 15f64.ln(),
            beta: -(100f64.ln()),
        }
    }
}

impl AlignmentHeadParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite() && self.beta.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "alignment head needs alpha > 0 and finite beta, got alpha={} beta={}",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }
}

/// `logits[i][j] = alpha * cos(visual_i, text_j) + beta`.
pub fn similarity_logits(
    visual: &EmbeddingMatrix,
    text: &EmbeddingMatrix,
    params: &AlignmentHeadParams,
) -> Result<Matrix> {
    params.validate()?;
    if visual.dim != text.dim {
        return Err(Error::DimensionMismatch(format!(
            "visual dim {} != text dim {}",
            visual.dim, text.dim
        )));
    }
    let v = visual.normalized("visual")?;
    let t = text.normalized("text")?;
    let d = visual.dim;
    let mut data = Vec::with_capacity(visual.rows * text.rows);
    for i in 0..visual.rows {
        let vi = &v[i * d..(i + 1) * d];
        for j in 0..text.rows {
            let tj = &t[j * d..(j + 1) * d];
            let cos: f64 = vi.iter().zip(tj).map(|(a, b)| a * b).sum();
            data.push(params.alpha * cos.clamp(-1.0, 1.0) + params.beta);
        }
    }
    Matrix::new(visual.rows, text.rows, data)
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Elementwise logistic map of a logit matrix.
pub fn similarity_prob(logits: &Matrix) -> Matrix {
    logits.map(sigmoid)
}
