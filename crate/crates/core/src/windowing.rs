//! Sliding-window encoding of long audio-side inputs: fixed-length
//! overlapping windows, encoded separately and mean-pooled into one
//! embedding.
//!
//! A final partial stretch is covered by one right-anchored full-length
//! window rather than zero-padding, so every window has identical length.
//! Window embeddings are pooled raw (pre-normalization) and normalized
//! once at the end.

use crate::embedding::{l2_normalize, Embedding};
use crate::encoders::{student_forward, ForwardCache, StudentEncoderParams};
use crate::error::{Error, Result};

/// Feature-frame sequence standing in for a waveform. With the default
/// 1 Hz frame rate, durations in seconds map directly to frame counts.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioSignal {
    frames: Vec<Vec<f64>>,
    frame_rate_hz: f64,
}

impl AudioSignal {
    pub fn new(frames: Vec<Vec<f64>>, frame_rate_hz: f64) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::EmptyInput);
        }
        if !(frame_rate_hz > 0.0) {
            return Err(Error::InvalidWindowConfig(
                "frame rate must be positive".into(),
            ));
        }
        let dim = frames[0].len();
        if dim == 0 || frames.iter().any(|f| f.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: frames.iter().map(|f| f.len()).find(|&l| l != dim).unwrap_or(0),
            });
        }
        Ok(AudioSignal {
            frames,
            frame_rate_hz,
        })
    }

    pub fn total_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.frames[0].len()
    }

    pub fn frame_rate_hz(&self) -> f64 {
        self.frame_rate_hz
    }

    pub fn frames(&self) -> &[Vec<f64>] {
        &self.frames
    }
}

/// Ordered half-open frame intervals covering a signal.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowPlan {
    windows: Vec<(usize, usize)>,
    window_len_s: f64,
    overlap_s: f64,
}

impl WindowPlan {
    pub fn windows(&self) -> &[(usize, usize)] {
        &self.windows
    }

    pub fn window_len_s(&self) -> f64 {
        self.window_len_s
    }

    pub fn overlap_s(&self) -> f64 {
        self.overlap_s
    }
}

/// Plan stride-aligned windows of `window_len_s` seconds with `overlap_s`
/// seconds of overlap; a last stride-aligned window that falls short of the
/// end is followed by one right-anchored window, and a signal shorter than
/// one window becomes the single window (0, total_frames).
pub fn plan_windows(
    total_frames: usize,
    frame_rate_hz: f64,
    window_len_s: f64,
    overlap_s: f64,
) -> Result<WindowPlan> {
    if !(window_len_s > 0.0) {
        return Err(Error::InvalidWindowConfig(
            "window length must be positive".into(),
        ));
    }
    if !(overlap_s >= 0.0) || overlap_s >= window_len_s {
        return Err(Error::InvalidWindowConfig(format!(
            "overlap {overlap_s} s must satisfy 0 <= overlap < window length {window_len_s} s"
        )));
    }
    if !(frame_rate_hz > 0.0) {
        return Err(Error::InvalidWindowConfig(
            "frame rate must be positive".into(),
        ));
    }
    if total_frames == 0 {
        return Err(Error::EmptyInput);
    }
    let window_frames = (window_len_s * frame_rate_hz).round() as usize;
    let stride = ((window_len_s - overlap_s) * frame_rate_hz).round() as usize;
    if window_frames == 0 || stride == 0 {
        return Err(Error::InvalidWindowConfig(
            "window and stride must cover at least one frame".into(),
        ));
    }

    let mut windows = Vec::new();
    if total_frames < window_frames {
        windows.push((0, total_frames));
    } else {
        let mut start = 0;
        while start + window_frames <= total_frames {
            windows.push((start, start + window_frames));
            start += stride;
        }
        let last_end = windows.last().unwrap().1;
        if last_end < total_frames {
            windows.push((total_frames - window_frames, total_frames));
        }
    }
    Ok(WindowPlan {
        windows,
        window_len_s,
        overlap_s,
    })
}

/// Arithmetic mean of the raw window embeddings, then a single
/// normalization. Permutation-invariant over the window list.
pub fn pool_window_embeddings(window_embeddings: &[Embedding]) -> Result<Embedding> {
    if window_embeddings.is_empty() {
        return Err(Error::EmptyInput);
    }
    let dim = window_embeddings[0].dim();
    for e in window_embeddings {
        if e.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: e.dim(),
            });
        }
    }
    let mean = pool_raw(window_embeddings.iter().map(|e| e.as_slice()), dim);
    l2_normalize(&mean)
}

fn pool_raw<'a>(windows: impl Iterator<Item = &'a [f64]>, dim: usize) -> Vec<f64> {
    let mut mean = vec![0.0; dim];
    let mut count = 0usize;
    for w in windows {
        for (m, x) in mean.iter_mut().zip(w) {
            *m += x;
        }
        count += 1;
    }
    let inv = 1.0 / count as f64;
    for m in mean.iter_mut() {
        *m *= inv;
    }
    mean
}

/// Forward state of [`encode_long_audio`] kept around for backward: the
/// pooled raw embedding plus one cache per window.
#[derive(Debug)]
pub struct LongAudioForward {
    pub pooled_raw: Vec<f64>,
    pub window_caches: Vec<ForwardCache>,
}

/// Encode every planned window with the student and mean-pool the raw
/// outputs. The result still needs the final normalization (the loss-side
/// gradient path applies it, as does [`encode_long_audio`]).
pub fn encode_long_audio_forward(
    params: &StudentEncoderParams,
    signal: &AudioSignal,
    window_len_s: f64,
    overlap_s: f64,
) -> Result<LongAudioForward> {
    if signal.feature_dim() != params.arch().input_dim {
        return Err(Error::DimensionMismatch {
            expected: params.arch().input_dim,
            got: signal.feature_dim(),
        });
    }
    let plan = plan_windows(
        signal.total_frames(),
        signal.frame_rate_hz(),
        window_len_s,
        overlap_s,
    )?;
    let mut outputs: Vec<Vec<f64>> = Vec::with_capacity(plan.windows().len());
    let mut caches = Vec::with_capacity(plan.windows().len());
    for &(start, end) in plan.windows() {
        let (out, cache) = student_forward(params, &signal.frames()[start..end])?;
        outputs.push(out);
        caches.push(cache);
    }
    let pooled_raw = pool_raw(outputs.iter().map(|o| o.as_slice()), params.arch().output_dim);
    Ok(LongAudioForward {
        pooled_raw,
        window_caches: caches,
    })
}

/// Full long-input encoding: plan windows, encode each, pool, normalize.
pub fn encode_long_audio(
    params: &StudentEncoderParams,
    signal: &AudioSignal,
    window_len_s: f64,
    overlap_s: f64,
) -> Result<Embedding> {
    let fwd = encode_long_audio_forward(params, signal, window_len_s, overlap_s)?;
    l2_normalize(&fwd.pooled_raw)
}
