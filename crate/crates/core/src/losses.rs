//! The training objective: directional and symmetric contrastive losses,
//! cosine distillation, the combined objective, and its analytic gradient
//! with respect to the raw (pre-normalization) audio embeddings.
//!
//! The contrastive term for one direction is
//! -(1/N) sum_i log[ exp(cos(q_i,k_i)/t) / sum_j exp(cos(q_i,k_j)/t) ],
//! computed with a log-sum-exp shift. The symmetric loss is the SUM of the
//! audio->vision and vision->audio directions. Distillation is the batch
//! mean of 1 - cos(a_i, t_i). Temperature defaults to 1, which reduces the
//! exponent to the raw cosine.

use serde::{Deserialize, Serialize};

use crate::embedding::{l2_normalize, similarity_matrix, Embedding, MIN_NORM};
use crate::error::{Error, Result};

/// Paired per-example embeddings for one minibatch. Text (teacher)
/// embeddings are optional; they are absent at inference and for the
/// no-distillation training condition.
#[derive(Debug, Clone)]
pub struct BatchEmbeddings {
    audio: Vec<Embedding>,
    vision: Vec<Embedding>,
    text: Option<Vec<Embedding>>,
}

impl BatchEmbeddings {
    pub fn new(
        audio: Vec<Embedding>,
        vision: Vec<Embedding>,
        text: Option<Vec<Embedding>>,
    ) -> Result<Self> {
        if audio.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if vision.len() != audio.len() {
            return Err(Error::DimensionMismatch {
                expected: audio.len(),
                got: vision.len(),
            });
        }
        if let Some(t) = &text {
            if t.len() != audio.len() {
                return Err(Error::DimensionMismatch {
                    expected: audio.len(),
                    got: t.len(),
                });
            }
        }
        let dim = audio[0].dim();
        let all = audio
            .iter()
            .chain(vision.iter())
            .chain(text.iter().flatten());
        for e in all {
            if e.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: e.dim(),
                });
            }
        }
        Ok(BatchEmbeddings {
            audio,
            vision,
            text,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.audio.len()
    }

    pub fn dim(&self) -> usize {
        self.audio[0].dim()
    }

    pub fn audio(&self) -> &[Embedding] {
        &self.audio
    }

    pub fn vision(&self) -> &[Embedding] {
        &self.vision
    }

    pub fn text(&self) -> Option<&[Embedding]> {
        self.text.as_deref()
    }
}

/// Every term of the combined objective for one batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub con_audio_to_vision: f64,
    pub con_vision_to_audio: f64,
    pub con_symmetric: f64,
    pub distill: f64,
    pub lambda: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.con_audio_to_vision.is_finite()
            && self.con_vision_to_audio.is_finite()
            && self.con_symmetric.is_finite()
            && self.distill.is_finite()
            && self.total.is_finite()
    }
}

fn check_temperature(temperature: f64) -> Result<()> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "temperature must be positive and finite, got {temperature}"
        )));
    }
    Ok(())
}

/// log(sum_j exp(row_j / t)) with the max shifted out.
fn log_sum_exp_scaled(row: &[f64], temperature: f64) -> f64 {
    let m = row
        .iter()
        .map(|&x| x / temperature)
        .fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = row.iter().map(|&x| (x / temperature - m).exp()).sum();
    m + s.ln()
}

/// Softmax-cross-entropy contrastive loss for one direction; queries are
/// matched to their same-index key against all keys in the batch.
pub fn contrastive_loss_directional(
    queries: &[Embedding],
    keys: &[Embedding],
    temperature: f64,
) -> Result<f64> {
    check_temperature(temperature)?;
    if queries.is_empty() || keys.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if queries.len() != keys.len() {
        return Err(Error::DimensionMismatch {
            expected: queries.len(),
            got: keys.len(),
        });
    }
    let sim = similarity_matrix(queries, keys)?;
    let n = queries.len();
    let mut total = 0.0;
    for i in 0..n {
        let row = sim.row(i);
        total += log_sum_exp_scaled(row, temperature) - row[i] / temperature;
    }
    Ok(total / n as f64)
}

/// Sum of the audio->vision and vision->audio contrastive terms.
pub fn contrastive_loss_symmetric(batch: &BatchEmbeddings, temperature: f64) -> Result<f64> {
    let a2v = contrastive_loss_directional(batch.audio(), batch.vision(), temperature)?;
    let v2a = contrastive_loss_directional(batch.vision(), batch.audio(), temperature)?;
    Ok(a2v + v2a)
}

/// Batch mean of 1 - cos(a_i, t_i); in [0, 2].
pub fn distillation_loss(audio: &[Embedding], teacher: &[Embedding]) -> Result<f64> {
    if audio.is_empty() || teacher.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if audio.len() != teacher.len() {
        return Err(Error::DimensionMismatch {
            expected: audio.len(),
            got: teacher.len(),
        });
    }
    let mut total = 0.0;
    for (a, t) in audio.iter().zip(teacher) {
        total += 1.0 - crate::embedding::cosine_similarity(a, t)?;
    }
    Ok(total / audio.len() as f64)
}

/// Combined objective: symmetric contrastive + lambda * distillation.
pub fn total_loss(batch: &BatchEmbeddings, lambda: f64, temperature: f64) -> Result<LossBreakdown> {
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "lambda must be nonnegative and finite, got {lambda}"
        )));
    }
    let con_audio_to_vision =
        contrastive_loss_directional(batch.audio(), batch.vision(), temperature)?;
    let con_vision_to_audio =
        contrastive_loss_directional(batch.vision(), batch.audio(), temperature)?;
    let con_symmetric = con_audio_to_vision + con_vision_to_audio;
    let distill = match batch.text() {
        Some(teacher) => distillation_loss(batch.audio(), teacher)?,
        None if lambda > 0.0 => return Err(Error::MissingTeacher),
        None => 0.0,
    };
    Ok(LossBreakdown {
        con_audio_to_vision,
        con_vision_to_audio,
        con_symmetric,
        distill,
        lambda,
        total: con_symmetric + lambda * distill,
    })
}

/// Result of [`total_loss_gradient`]: the loss terms plus the gradient of
/// `total` w.r.t. each raw (pre-normalization) audio embedding.
#[derive(Debug, Clone)]
pub struct TotalLossGrad {
    pub breakdown: LossBreakdown,
    pub grad_audio_raw: Vec<Vec<f64>>,
}

/// Analytic gradient of the combined objective w.r.t. the raw audio
/// embeddings, including the normalization Jacobian. Vision and text sides
/// are frozen; their gradients are not produced.
pub fn total_loss_gradient(
    audio_raw: &[Vec<f64>],
    vision: &[Embedding],
    text: Option<&[Embedding]>,
    lambda: f64,
    temperature: f64,
) -> Result<TotalLossGrad> {
    check_temperature(temperature)?;
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "lambda must be nonnegative and finite, got {lambda}"
        )));
    }
    if audio_raw.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if text.is_none() && lambda > 0.0 {
        return Err(Error::MissingTeacher);
    }

    let norms: Vec<f64> = audio_raw
        .iter()
        .map(|u| u.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    if norms.iter().any(|&r| r < MIN_NORM || !r.is_finite()) {
        return Err(Error::ZeroVector);
    }
    let audio: Vec<Embedding> = audio_raw
        .iter()
        .map(|u| l2_normalize(u))
        .collect::<Result<_>>()?;
    let batch = BatchEmbeddings::new(audio, vision.to_vec(), text.map(|t| t.to_vec()))?;
    let breakdown = total_loss(&batch, lambda, temperature)?;

    let n = batch.batch_size();
    let d = batch.dim();
    let nf = n as f64;
    let sim = similarity_matrix(batch.audio(), batch.vision())?;

    // Row softmax (audio->vision) and column softmax (vision->audio).
    let mut row_soft = vec![0.0; n * n];
    for i in 0..n {
        let row = sim.row(i);
        let lse = log_sum_exp_scaled(row, temperature);
        for j in 0..n {
            row_soft[i * n + j] = (row[j] / temperature - lse).exp();
        }
    }
    let mut col_soft = vec![0.0; n * n];
    for j in 0..n {
        let col: Vec<f64> = (0..n).map(|i| sim.get(i, j)).collect();
        let lse = log_sum_exp_scaled(&col, temperature);
        for i in 0..n {
            col_soft[i * n + j] = (col[i] / temperature - lse).exp();
        }
    }

    let mut grads = Vec::with_capacity(n);
    for i in 0..n {
        // d(total)/d(a_i) with a_i treated as a free vector.
        let mut g = vec![0.0; d];
        for j in 0..n {
            let delta = if i == j { 1.0 } else { 0.0 };
            let coeff =
                ((row_soft[i * n + j] - delta) + (col_soft[i * n + j] - delta)) / (nf * temperature);
            for (gk, vk) in g.iter_mut().zip(batch.vision()[j].as_slice()) {
                *gk += coeff * vk;
            }
        }
        if lambda > 0.0 {
            if let Some(teacher) = batch.text() {
                let scale = lambda / nf;
                for (gk, tk) in g.iter_mut().zip(teacher[i].as_slice()) {
                    *gk -= scale * tk;
                }
            }
        }
        // Chain through normalization: du = (I - a a^T) / |u| applied to g.
        let a = batch.audio()[i].as_slice();
        let ga: f64 = g.iter().zip(a).map(|(x, y)| x * y).sum();
        let inv_r = 1.0 / norms[i];
        let grad_u: Vec<f64> = g
            .iter()
            .zip(a)
            .map(|(gk, ak)| (gk - ga * ak) * inv_r)
            .collect();
        grads.push(grad_u);
    }

    Ok(TotalLossGrad {
        breakdown,
        grad_audio_raw: grads,
    })
}
