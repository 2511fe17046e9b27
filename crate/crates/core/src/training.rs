//! Minibatch training loop: Adam over the student parameters, frozen
//! vision/text projectors, the combined contrastive + distillation
//! objective, checkpointing, and the loss curve.
//!
//! Single-threaded runs are bit-reproducible; intra-batch parallelism only
//! computes per-example terms, which are then reduced in fixed index
//! order, so `--threads` never changes the bytes produced.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::Embedding;
use crate::encoders::{
    frozen_encode, init_student, save_checkpoint, student_backward, Architecture,
    StudentEncoderParams, StudentGrads,
};
use crate::error::{Error, Result};
use crate::losses::{total_loss_gradient, LossBreakdown};
use crate::rng::{derive_seed, domain, stream_rng};
use crate::synthdata::{
    load_generator_config, load_split, DatasetManifest, LoadedExample, SynthWorld,
};
use crate::windowing::{encode_long_audio_forward, AudioSignal};

/// Training hyperparameters. Desk-scale defaults (batch 32, 2000 steps,
/// lr 1e-3) are tuned for the toy student; the large-stack values they
/// replace (batch 8, 100k steps, lr 1.25e-6) remain selectable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    /// Distillation weight; ignored (treated as 0) when kd_enabled is off.
    pub lambda: f64,
    pub temperature: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Every this many steps, record a held-out loss snapshot; 0 disables.
    pub eval_every: usize,
    /// Off selects the contrastive-only baseline condition.
    pub kd_enabled: bool,
    pub window_len_s: f64,
    pub overlap_s: f64,
    pub arch: Architecture,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            steps: 2000,
            learning_rate: 1e-3,
            lambda: 1.0,
            temperature: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            eval_every: 0,
            kd_enabled: true,
            window_len_s: 30.0,
            overlap_s: 2.0,
            arch: Architecture::new(64, vec![128], 32),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return Err(Error::InvalidConfig("lambda must be nonnegative".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::InvalidConfig("temperature must be positive".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidConfig(format!("{name} must lie in [0, 1)")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidConfig("epsilon must be positive".into()));
        }
        self.arch.validate()
    }

    /// Effective distillation weight after the kd switch.
    pub fn effective_lambda(&self) -> f64 {
        if self.kd_enabled {
            self.lambda
        } else {
            0.0
        }
    }
}

/// Adam first/second-moment accumulators over the flattened parameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        AdamState {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }
}

/// One Adam update with bias correction: t is incremented first, then
/// m_hat = m/(1-b1^t), v_hat = v/(1-b2^t), p -= lr * m_hat/(sqrt(v_hat)+eps).
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::ShapeMismatch(format!(
            "params {}, grads {}, state {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if let Some(pos) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient(format!(
            "coordinate {pos} is {}",
            grads[pos]
        )));
    }
    state.t += 1;
    let bc1 = 1.0 - beta1.powi(state.t as i32);
    let bc2 = 1.0 - beta2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Epoch-based batch sampler: shuffles the index set each epoch and hands
/// out consecutive chunks, so every id is drawn exactly once per epoch.
/// Batches never straddle an epoch boundary (the last one may be short).
#[derive(Debug)]
pub struct EpochSampler {
    n: usize,
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl EpochSampler {
    pub fn new(n: usize, mut rng: ChaCha8Rng) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptySplit("sampler over zero examples".into()));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        Ok(EpochSampler {
            n,
            order,
            pos: 0,
            rng,
        })
    }

    pub fn next_batch(&mut self, batch_size: usize) -> Vec<usize> {
        if self.pos >= self.n {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let end = (self.pos + batch_size).min(self.n);
        let batch = self.order[self.pos..end].to_vec();
        self.pos = end;
        batch
    }
}

/// Per-example inputs to one batch loss evaluation.
pub struct BatchInputs<'a> {
    pub audio: Vec<&'a AudioSignal>,
    pub vision: Vec<Embedding>,
    pub text: Option<Vec<Embedding>>,
}

/// Loss and flattened parameter gradient for one batch: windows are
/// encoded per example, pooled raw, pushed through the objective, and the
/// upstream gradient is chained back through every window. This is the
/// exact path the gradient checker differentiates numerically.
pub fn batch_loss_and_param_grads(
    params: &StudentEncoderParams,
    inputs: &BatchInputs<'_>,
    lambda: f64,
    temperature: f64,
    window_len_s: f64,
    overlap_s: f64,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let n = inputs.audio.len();
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    let forwards = inputs
        .audio
        .par_iter()
        .map(|signal| encode_long_audio_forward(params, signal, window_len_s, overlap_s))
        .collect::<Result<Vec<_>>>()?;

    let pooled: Vec<Vec<f64>> = forwards.iter().map(|f| f.pooled_raw.clone()).collect();
    let grad = total_loss_gradient(
        &pooled,
        &inputs.vision,
        inputs.text.as_deref(),
        lambda,
        temperature,
    )?;

    let per_example: Vec<StudentGrads> = forwards
        .par_iter()
        .zip(grad.grad_audio_raw.par_iter())
        .map(|(fwd, du)| {
            let w = fwd.window_caches.len() as f64;
            let upstream: Vec<f64> = du.iter().map(|g| g / w).collect();
            let mut acc = StudentGrads::zeros_like(params);
            for cache in &fwd.window_caches {
                let g = student_backward(params, cache, &upstream)?;
                acc.add_assign(&g);
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;

    // Fixed summation order: example index order.
    let mut total = StudentGrads::zeros_like(params);
    for g in &per_example {
        total.add_assign(g);
    }
    Ok((grad.breakdown, total.flatten()))
}

/// Loss terms for one step of the curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    #[serde(flatten)]
    pub loss: LossBreakdown,
}

/// Held-out loss recorded every `eval_every` steps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSnapshot {
    pub step: usize,
    #[serde(flatten)]
    pub heldout: LossBreakdown,
}

/// Everything a run produced: config echo, per-step losses, snapshots, and
/// where the checkpoint went. Wall clock is reported on stdout, never
/// persisted, so artifacts stay byte-identical across reruns.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub n_train_examples: usize,
    pub vision_projector_hash: String,
    pub text_projector_hash: String,
    pub curve: Vec<CurvePoint>,
    pub snapshots: Vec<EvalSnapshot>,
    pub checkpoint_path: String,
    #[serde(skip)]
    pub wall_clock_s: f64,
}

fn heldout_loss(
    params: &StudentEncoderParams,
    probe: &BatchInputs<'_>,
    cfg: &TrainConfig,
) -> Result<LossBreakdown> {
    let (breakdown, _) = batch_loss_and_param_grads(
        params,
        probe,
        cfg.effective_lambda(),
        cfg.temperature,
        cfg.window_len_s,
        cfg.overlap_s,
    )?;
    Ok(breakdown)
}

fn batch_inputs<'a>(
    examples: &'a [LoadedExample],
    indices: &[usize],
    vision: &[Embedding],
    text: Option<&[Embedding]>,
) -> BatchInputs<'a> {
    BatchInputs {
        audio: indices.iter().map(|&i| &examples[i].audio).collect(),
        vision: indices.iter().map(|&i| vision[i].clone()).collect(),
        text: text.map(|t| indices.iter().map(|&i| t[i].clone()).collect()),
    }
}

/// Run the full loop against a generated dataset directory and write
/// checkpoint + report + loss-curve CSV into `out_dir`.
pub fn train(config: &TrainConfig, dataset_dir: &Path, out_dir: &Path) -> Result<TrainReport> {
    config.validate()?;
    if config.batch_size == 1 {
        eprintln!("warning: batch_size 1 gives no contrastive signal (softmax over one key)");
    }
    let started = Instant::now();
    let gen_config = load_generator_config(&dataset_dir.join("dataset.json"))?;
    if gen_config.audio_dim != config.arch.input_dim {
        return Err(Error::InvalidConfig(format!(
            "architecture input dim {} does not match dataset audio dim {}",
            config.arch.input_dim, gen_config.audio_dim
        )));
    }
    let manifest = DatasetManifest::load(&dataset_dir.join("manifest.jsonl"))?;
    let with_text = config.kd_enabled;
    let examples = load_split(
        dataset_dir,
        &manifest,
        "train",
        gen_config.frame_rate_hz,
        with_text,
    )?;

    let world = SynthWorld::new(gen_config.clone())?;
    let vision_proj = world.vision_projector(config.arch.output_dim)?;
    let text_proj = world.text_projector(config.arch.output_dim)?;
    let vision_hash_before = vision_proj.content_hash();
    let text_hash_before = text_proj.content_hash();

    // Frozen encoders never change mid-run; embed each side once.
    let vision_emb: Vec<Embedding> = examples
        .iter()
        .map(|ex| frozen_encode(&vision_proj, &ex.vision_features))
        .collect::<Result<_>>()?;
    let text_emb: Option<Vec<Embedding>> = if config.kd_enabled {
        Some(
            examples
                .iter()
                .map(|ex| {
                    frozen_encode(
                        &text_proj,
                        ex.text_features
                            .as_deref()
                            .expect("text loaded when kd is enabled"),
                    )
                })
                .collect::<Result<_>>()?,
        )
    } else {
        None
    };

    let mut params = init_student(&config.arch, derive_seed(config.seed, domain::STUDENT_INIT, 0))?;
    let mut state = AdamState::new(params.param_count());
    let mut sampler = EpochSampler::new(
        examples.len(),
        stream_rng(config.seed, domain::BATCH_SHUFFLE, 0),
    )?;

    // Held-out probe for snapshots (first examples of the test split).
    let probe_examples: Option<Vec<LoadedExample>> = if config.eval_every > 0 {
        let mut test = load_split(
            dataset_dir,
            &manifest,
            "test",
            gen_config.frame_rate_hz,
            with_text,
        )?;
        test.truncate(64);
        Some(test)
    } else {
        None
    };
    let probe = match &probe_examples {
        Some(test) => {
            let vision: Vec<Embedding> = test
                .iter()
                .map(|ex| frozen_encode(&vision_proj, &ex.vision_features))
                .collect::<Result<_>>()?;
            let text: Option<Vec<Embedding>> = if config.kd_enabled {
                Some(
                    test.iter()
                        .map(|ex| frozen_encode(&text_proj, ex.text_features.as_deref().unwrap()))
                        .collect::<Result<_>>()?,
                )
            } else {
                None
            };
            let indices: Vec<usize> = (0..test.len()).collect();
            Some(batch_inputs(test, &indices, &vision, text.as_deref()))
        }
        None => None,
    };

    let mut curve = Vec::with_capacity(config.steps);
    let mut snapshots = Vec::new();
    for step in 0..config.steps {
        let batch = sampler.next_batch(config.batch_size);
        let inputs = batch_inputs(&examples, &batch, &vision_emb, text_emb.as_deref());
        let (breakdown, grads) = batch_loss_and_param_grads(
            &params,
            &inputs,
            config.effective_lambda(),
            config.temperature,
            config.window_len_s,
            config.overlap_s,
        )?;
        if !breakdown.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        let mut flat = params.flatten();
        adam_step(
            &mut flat,
            &grads,
            &mut state,
            config.learning_rate,
            config.beta1,
            config.beta2,
            config.epsilon,
        )?;
        params.set_from_flat(&flat)?;
        curve.push(CurvePoint {
            step,
            loss: breakdown,
        });
        if config.eval_every > 0 && (step + 1) % config.eval_every == 0 {
            if let Some(probe) = &probe {
                snapshots.push(EvalSnapshot {
                    step,
                    heldout: heldout_loss(&params, probe, config)?,
                });
            }
        }
    }

    assert_eq!(vision_proj.content_hash(), vision_hash_before);
    assert_eq!(text_proj.content_hash(), text_hash_before);

    fs::create_dir_all(out_dir)?;
    let checkpoint_path = "checkpoint.xmdt".to_string();
    save_checkpoint(&params, &out_dir.join(&checkpoint_path))?;
    let report = TrainReport {
        config: config.clone(),
        n_train_examples: examples.len(),
        vision_projector_hash: format!("{:016x}", vision_hash_before),
        text_projector_hash: format!("{:016x}", text_hash_before),
        curve,
        snapshots,
        checkpoint_path,
        wall_clock_s: started.elapsed().as_secs_f64(),
    };
    save_train_report(&report, &out_dir.join("train_report.json"))?;
    write_loss_curve_csv(&report, &out_dir.join("loss_curve.csv"))?;
    Ok(report)
}

pub fn save_train_report(report: &TrainReport, path: &Path) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(report)?;
    bytes.push(b'\n');
    fs::write(path, bytes)?;
    Ok(())
}

/// Loss curve as CSV: step, con_a2v, con_v2a, distill, total.
pub fn write_loss_curve_csv(report: &TrainReport, path: &Path) -> Result<()> {
    let mut out = String::from("step,con_a2v,con_v2a,distill,total\n");
    for p in &report.curve {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            p.step,
            p.loss.con_audio_to_vision,
            p.loss.con_vision_to_audio,
            p.loss.distill,
            p.loss.total
        ));
    }
    fs::write(path, out)?;
    Ok(())
}
