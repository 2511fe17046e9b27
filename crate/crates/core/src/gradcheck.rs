//! Finite-difference validation of the full training gradient: the
//! combined objective differentiated through normalization, window
//! pooling, and every student parameter, compared against central
//! differences over randomized configurations.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{l2_normalize, Embedding};
use crate::encoders::{init_student, Architecture, StudentEncoderParams};
use crate::error::Result;
use crate::losses::{total_loss, BatchEmbeddings};
use crate::rng::{domain, stream_rng};
use crate::training::{batch_loss_and_param_grads, BatchInputs};
use crate::windowing::{encode_long_audio, AudioSignal};

pub const DEFAULT_TRIALS: usize = 24;
pub const DEFAULT_STEP: f64 = 1e-5;
pub const REL_ERR_THRESHOLD: f64 = 1e-4;

const BATCH_CHOICES: [usize; 3] = [2, 4, 8];
const DIM_CHOICES: [usize; 2] = [8, 16];
const LAMBDA_CHOICES: [f64; 3] = [0.0, 0.5, 1.0];

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub trials: usize,
    pub seed: u64,
    pub step: f64,
    /// Test hook: flip the sign of the largest analytic gradient
    /// coordinate in trial 0, which must make the check fail.
    pub inject_sign_flip: bool,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            trials: DEFAULT_TRIALS,
            seed: 0,
            step: DEFAULT_STEP,
            inject_sign_flip: false,
        }
    }
}

/// The offending coordinate of the worst trial.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorstCase {
    pub trial: usize,
    pub batch_size: usize,
    pub embed_dim: usize,
    pub lambda: f64,
    pub temperature: f64,
    pub param_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub trials: usize,
    pub step: f64,
    pub threshold: f64,
    pub max_rel_err: f64,
    pub pass: bool,
    pub worst: WorstCase,
}

struct Trial {
    batch_size: usize,
    embed_dim: usize,
    lambda: f64,
    temperature: f64,
}

/// The first 18 trials sweep the full (N, d, lambda) grid at temperature 1;
/// extra trials draw randomly from the sets with temperature in [0.5, 2).
fn trial_specs(cfg: &GradCheckConfig) -> Vec<Trial> {
    let mut specs = Vec::with_capacity(cfg.trials);
    for &batch_size in &BATCH_CHOICES {
        for &embed_dim in &DIM_CHOICES {
            for &lambda in &LAMBDA_CHOICES {
                specs.push(Trial {
                    batch_size,
                    embed_dim,
                    lambda,
                    temperature: 1.0,
                });
            }
        }
    }
    let mut rng = stream_rng(cfg.seed, domain::GRADCHECK, u64::MAX);
    while specs.len() < cfg.trials {
        specs.push(Trial {
            batch_size: BATCH_CHOICES[rng.gen_range(0..BATCH_CHOICES.len())],
            embed_dim: DIM_CHOICES[rng.gen_range(0..DIM_CHOICES.len())],
            lambda: LAMBDA_CHOICES[rng.gen_range(0..LAMBDA_CHOICES.len())],
            temperature: rng.gen_range(0.5..2.0),
        });
    }
    specs.truncate(cfg.trials);
    specs
}

fn batch_total(
    params: &StudentEncoderParams,
    signals: &[AudioSignal],
    vision: &[Embedding],
    text: &[Embedding],
    lambda: f64,
    temperature: f64,
    window_len_s: f64,
    overlap_s: f64,
) -> Result<f64> {
    let audio: Vec<Embedding> = signals
        .iter()
        .map(|s| encode_long_audio(params, s, window_len_s, overlap_s))
        .collect::<Result<_>>()?;
    let batch = BatchEmbeddings::new(audio, vision.to_vec(), Some(text.to_vec()))?;
    Ok(total_loss(&batch, lambda, temperature)?.total)
}

/// Run every trial and report the worst coordinate. Relative error per
/// coordinate is |a - n| / max(|a|, |n|, 1e-5), so near-zero gradients are
/// judged on absolute error at the same 1e-4 scale.
pub fn run_gradcheck(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let (window_len_s, overlap_s) = (4.0, 1.0);
    let mut max_rel_err = -1.0f64;
    let mut worst = None;

    for (t, spec) in trial_specs(cfg).iter().enumerate() {
        let mut rng = stream_rng(cfg.seed, domain::GRADCHECK, t as u64);
        let arch = Architecture::new(7, vec![6], spec.embed_dim);
        let params = init_student(&arch, rng.gen())?;

        let signals: Vec<AudioSignal> = (0..spec.batch_size)
            .map(|_| {
                let frames = rng.gen_range(2..=10);
                let data: Vec<Vec<f64>> = (0..frames)
                    .map(|_| (0..7).map(|_| rng.gen_range(-1.0..1.0)).collect())
                    .collect();
                AudioSignal::new(data, 1.0)
            })
            .collect::<Result<_>>()?;
        let mut unit = |d: usize| -> Embedding {
            let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0) + 1e-3).collect();
            l2_normalize(&v).unwrap()
        };
        let vision: Vec<Embedding> = (0..spec.batch_size).map(|_| unit(spec.embed_dim)).collect();
        let text: Vec<Embedding> = (0..spec.batch_size).map(|_| unit(spec.embed_dim)).collect();

        let inputs = BatchInputs {
            audio: signals.iter().collect(),
            vision: vision.clone(),
            text: Some(text.clone()),
        };
        let (_, mut analytic) = batch_loss_and_param_grads(
            &params,
            &inputs,
            spec.lambda,
            spec.temperature,
            window_len_s,
            overlap_s,
        )?;
        if cfg.inject_sign_flip && t == 0 {
            let argmax = analytic
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
                .map(|(i, _)| i)
                .unwrap();
            analytic[argmax] = -analytic[argmax];
        }

        let flat = params.flatten();
        for i in 0..flat.len() {
            let mut plus = flat.clone();
            plus[i] += cfg.step;
            let mut minus = flat.clone();
            minus[i] -= cfg.step;
            let p_plus = StudentEncoderParams::from_flat(&arch, &plus)?;
            let p_minus = StudentEncoderParams::from_flat(&arch, &minus)?;
            let f_plus = batch_total(
                &p_plus,
                &signals,
                &vision,
                &text,
                spec.lambda,
                spec.temperature,
                window_len_s,
                overlap_s,
            )?;
            let f_minus = batch_total(
                &p_minus,
                &signals,
                &vision,
                &text,
                spec.lambda,
                spec.temperature,
                window_len_s,
                overlap_s,
            )?;
            let numeric = (f_plus - f_minus) / (2.0 * cfg.step);
            let a = analytic[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-5);
            if rel > max_rel_err {
                max_rel_err = rel;
                worst = Some(WorstCase {
                    trial: t,
                    batch_size: spec.batch_size,
                    embed_dim: spec.embed_dim,
                    lambda: spec.lambda,
                    temperature: spec.temperature,
                    param_index: i,
                    analytic: a,
                    numeric,
                    rel_err: rel,
                });
            }
        }
    }

    Ok(GradCheckReport {
        trials: cfg.trials,
        step: cfg.step,
        threshold: REL_ERR_THRESHOLD,
        max_rel_err,
        pass: max_rel_err < REL_ERR_THRESHOLD,
        worst: worst.expect("at least one trial"),
    })
}
