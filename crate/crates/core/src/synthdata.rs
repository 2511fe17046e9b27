//! Deterministic generator of synthetic paired examples: a shared latent
//! per case drives three modality views (per-frame audio features with
//! speaker offsets and heavy noise, vision features, low-noise text
//! features), 18 binary labels, 8 speaker profiles, and duration jitter.
//! Also owns the on-disk manifest and the derivation of the frozen
//! vision/text projectors and evaluation prompts from the generator seed.
//!
//! The audio side is deliberately the weakest view (highest noise plus
//! label-independent speaker offsets) and the text side the strongest, so
//! a teacher built on text genuinely outranks what the audio-side student
//! can reach on its own.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoders::FrozenProjector;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, domain, stream_rng};
use crate::tensorio;
use crate::windowing::AudioSignal;

/// Full recipe for one synthetic dataset. Everything downstream (examples,
/// frozen projectors, prompts) is a pure function of this struct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n_examples: usize,
    pub n_labels: usize,
    pub latent_dim: usize,
    pub audio_dim: usize,
    pub vision_dim: usize,
    pub text_dim: usize,
    /// Per-label positive probability; None draws log-uniform in
    /// [0.05, 0.5] from the seed.
    pub label_prevalences: Option<Vec<f64>>,
    pub n_speakers: usize,
    pub duration_mean_s: f64,
    pub duration_jitter: f64,
    pub frame_rate_hz: f64,
    pub noise_latent: f64,
    pub noise_audio: f64,
    pub noise_vision: f64,
    pub noise_text: f64,
    pub speaker_offset_scale: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_examples: 100,
            n_labels: 18,
            latent_dim: 16,
            audio_dim: 64,
            vision_dim: 48,
            text_dim: 32,
            label_prevalences: None,
            n_speakers: 8,
            duration_mean_s: 86.0,
            duration_jitter: 0.15,
            frame_rate_hz: 1.0,
            noise_latent: 0.05,
            noise_audio: 3.0,
            noise_vision: 1.2,
            noise_text: 0.05,
            speaker_offset_scale: 0.75,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_examples == 0 {
            return bad("n_examples must be at least 1".into());
        }
        if self.n_labels == 0
            || self.latent_dim == 0
            || self.audio_dim == 0
            || self.vision_dim == 0
            || self.text_dim == 0
            || self.n_speakers == 0
        {
            return bad("all counts and dims must be at least 1".into());
        }
        if self.text_dim < self.latent_dim {
            return bad(format!(
                "text_dim {} must be >= latent_dim {} (text map has orthonormal columns)",
                self.text_dim, self.latent_dim
            ));
        }
        if let Some(p) = &self.label_prevalences {
            if p.len() != self.n_labels {
                return bad(format!(
                    "{} prevalences given for {} labels",
                    p.len(),
                    self.n_labels
                ));
            }
            if p.iter().any(|&x| !(x > 0.0 && x < 1.0)) {
                return bad("prevalences must lie in (0, 1)".into());
            }
        }
        if !(self.duration_mean_s > 0.0) || !(self.frame_rate_hz > 0.0) {
            return bad("duration mean and frame rate must be positive".into());
        }
        if !(0.0..1.0).contains(&self.duration_jitter) {
            return bad("duration jitter must lie in [0, 1)".into());
        }
        for (name, v) in [
            ("noise_latent", self.noise_latent),
            ("noise_audio", self.noise_audio),
            ("noise_vision", self.noise_vision),
            ("noise_text", self.noise_text),
            ("speaker_offset_scale", self.speaker_offset_scale),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be a nonnegative finite number"));
            }
        }
        if self.noise_audio < self.noise_text {
            return bad(format!(
                "noise_audio {} must be >= noise_text {} (the teacher view must be stronger)",
                self.noise_audio, self.noise_text
            ));
        }
        Ok(())
    }
}

/// Small row-major matrix used by the generator world.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    fn gaussian(rows: usize, cols: usize, std: f64, rng: &mut ChaCha8Rng) -> Matrix {
        let dist = Normal::new(0.0, std).unwrap();
        Matrix {
            rows,
            cols,
            data: (0..rows * cols).map(|_| dist.sample(rng)).collect(),
        }
    }

    /// Random matrix with orthonormal columns (modified Gram-Schmidt,
    /// run twice for numerical safety). Requires rows >= cols.
    fn orthonormal_columns(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        assert!(rows >= cols);
        let mut columns: Vec<Vec<f64>> = (0..cols)
            .map(|_| (0..rows).map(|_| StandardNormal.sample(rng)).collect())
            .collect();
        for _pass in 0..2 {
            for j in 0..cols {
                for i in 0..j {
                    let proj: f64 = columns[j]
                        .iter()
                        .zip(&columns[i])
                        .map(|(a, b)| a * b)
                        .sum();
                    let prev = columns[i].clone();
                    for (x, p) in columns[j].iter_mut().zip(&prev) {
                        *x -= proj * p;
                    }
                }
                let norm = columns[j].iter().map(|x| x * x).sum::<f64>().sqrt();
                for x in columns[j].iter_mut() {
                    *x /= norm;
                }
            }
        }
        let mut data = vec![0.0; rows * cols];
        for (j, col) in columns.iter().enumerate() {
            for (i, &x) in col.iter().enumerate() {
                data[i * cols + j] = x;
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        let mut out = vec![0.0; self.rows];
        for (r, out_r) in out.iter_mut().enumerate() {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            let mut acc = 0.0;
            for (w, xi) in row.iter().zip(x) {
                acc += w * xi;
            }
            *out_r = acc;
        }
        out
    }

    fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows);
        let mut data = vec![0.0; self.rows * other.cols];
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let row_k = &other.data[k * other.cols..(k + 1) * other.cols];
                let out_row = &mut data[i * other.cols..(i + 1) * other.cols];
                for (o, b) in out_row.iter_mut().zip(row_k) {
                    *o += a * b;
                }
            }
        }
        Matrix {
            rows: self.rows,
            cols: other.cols,
            data,
        }
    }

    fn transpose(&self) -> Matrix {
        let mut data = vec![0.0; self.rows * self.cols];
        for i in 0..self.rows {
            for j in 0..self.cols {
                data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        Matrix {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }

    /// Column `j` as an owned vector.
    fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.data[i * self.cols + j]).collect()
    }
}

/// One synthetic case: three modality views of one latent, plus labels,
/// speaker, and duration.
#[derive(Debug, Clone)]
pub struct PairedExample {
    pub id: String,
    pub labels: Vec<u8>,
    pub speaker_id: usize,
    pub duration_s: f64,
    pub audio: AudioSignal,
    pub vision_features: Vec<f64>,
    pub text_features: Vec<f64>,
}

/// The seeded matrices behind a dataset: label latent directions, the three
/// modality maps, and per-speaker offsets. Derived once per config.
#[derive(Debug, Clone)]
pub struct SynthWorld {
    config: GeneratorConfig,
    prevalences: Vec<f64>,
    /// k x n_labels; column l is label l's latent direction.
    label_embed: Matrix,
    /// vision_dim x k.
    vision_map: Matrix,
    /// text_dim x k with orthonormal columns, so its transpose inverts it
    /// on the latent subspace.
    text_map: Matrix,
    /// audio_dim x k.
    audio_map: Matrix,
    speaker_offsets: Vec<Vec<f64>>,
}

impl SynthWorld {
    pub fn new(config: GeneratorConfig) -> Result<Self> {
        config.validate()?;
        let seed = config.seed;
        let prevalences = match &config.label_prevalences {
            Some(p) => p.clone(),
            None => {
                let mut rng = stream_rng(seed, domain::PREVALENCES, 0);
                let (lo, hi) = (0.05f64.ln(), 0.5f64.ln());
                (0..config.n_labels)
                    .map(|_| rng.gen_range(lo..hi).exp())
                    .collect()
            }
        };
        let k = config.latent_dim;
        let scale = 1.0 / (k as f64).sqrt();
        let label_embed = Matrix::gaussian(
            k,
            config.n_labels,
            scale,
            &mut stream_rng(seed, domain::LABEL_EMBED, 0),
        );
        let vision_map = Matrix::gaussian(
            config.vision_dim,
            k,
            scale,
            &mut stream_rng(seed, domain::VISION_MAP, 0),
        );
        let text_map = Matrix::orthonormal_columns(
            config.text_dim,
            k,
            &mut stream_rng(seed, domain::TEXT_MAP, 0),
        );
        let audio_map = Matrix::gaussian(
            config.audio_dim,
            k,
            scale,
            &mut stream_rng(seed, domain::AUDIO_MAP, 0),
        );
        let mut offset_rng = stream_rng(seed, domain::SPEAKER_OFFSETS, 0);
        let offset_dist = Normal::new(0.0, config.speaker_offset_scale).unwrap();
        let speaker_offsets = (0..config.n_speakers)
            .map(|_| {
                (0..config.audio_dim)
                    .map(|_| offset_dist.sample(&mut offset_rng))
                    .collect()
            })
            .collect();
        Ok(SynthWorld {
            config,
            prevalences,
            label_embed,
            vision_map,
            text_map,
            audio_map,
            speaker_offsets,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn prevalences(&self) -> &[f64] {
        &self.prevalences
    }

    /// Latent direction of one label (column of the label embedding).
    pub fn label_latent(&self, label: usize) -> Vec<f64> {
        self.label_embed.column(label)
    }

    /// Population-mean latent E . prevalences; the bias that centers the
    /// evaluation prompts on a typical case.
    pub fn mean_latent(&self) -> Vec<f64> {
        self.label_embed.matvec(&self.prevalences)
    }

    /// Deterministic per-example draw. All randomness comes from the
    /// stream (seed, EXAMPLE, index), with a fixed draw order: labels,
    /// latent noise, duration, speaker, text noise, vision noise, then
    /// per-frame audio noise.
    pub fn sample_example(&self, index: usize) -> PairedExample {
        let cfg = &self.config;
        let mut rng = stream_rng(cfg.seed, domain::EXAMPLE, index as u64);

        let labels: Vec<u8> = self
            .prevalences
            .iter()
            .map(|&p| u8::from(rng.gen_range(0.0..1.0) < p))
            .collect();

        let y: Vec<f64> = labels.iter().map(|&b| b as f64).collect();
        let mut latent = self.label_embed.matvec(&y);
        for z in latent.iter_mut() {
            let eps: f64 = StandardNormal.sample(&mut rng);
            *z += cfg.noise_latent * eps;
        }

        let u: f64 = rng.gen_range(-1.0..1.0);
        let duration_s = cfg.duration_mean_s * (1.0 + cfg.duration_jitter * u);
        let frames = ((duration_s * cfg.frame_rate_hz).round() as usize).max(1);

        let speaker_id = rng.gen_range(0..cfg.n_speakers);

        let mut text_features = self.text_map.matvec(&latent);
        for t in text_features.iter_mut() {
            let eps: f64 = StandardNormal.sample(&mut rng);
            *t += cfg.noise_text * eps;
        }

        let mut vision_features = self.vision_map.matvec(&latent);
        for v in vision_features.iter_mut() {
            let eps: f64 = StandardNormal.sample(&mut rng);
            *v += cfg.noise_vision * eps;
        }

        let base = self.audio_map.matvec(&latent);
        let offset = &self.speaker_offsets[speaker_id];
        let frames_vec: Vec<Vec<f64>> = (0..frames)
            .map(|_| {
                base.iter()
                    .zip(offset)
                    .map(|(b, o)| {
                        let eps: f64 = StandardNormal.sample(&mut rng);
                        b + o + cfg.noise_audio * eps
                    })
                    .collect()
            })
            .collect();

        PairedExample {
            id: format!("ex{index:06}"),
            labels,
            speaker_id,
            duration_s,
            audio: AudioSignal::new(frames_vec, cfg.frame_rate_hz).expect("frames >= 1"),
            vision_features,
            text_features,
        }
    }

    /// Frozen vision-side encoder matrix for a given embedding dimension.
    pub fn vision_projector(&self, embed_dim: usize) -> Result<FrozenProjector> {
        let seed = derive_seed(self.config.seed, domain::VISION_PROJECTOR, embed_dim as u64);
        FrozenProjector::from_seed(embed_dim, self.config.vision_dim, seed)
    }

    /// Frozen text-side teacher matrix, aligned with the vision projector:
    /// H = G . A . B^T, so H(B z) = G(A z) exactly for every latent z. This
    /// mirrors a text and vision encoder pretrained into a common space.
    pub fn text_projector(&self, embed_dim: usize) -> Result<FrozenProjector> {
        let g = self.vision_projector(embed_dim)?;
        let g_mat = Matrix {
            rows: embed_dim,
            cols: self.config.vision_dim,
            data: g.matrix().to_vec(),
        };
        let h = g_mat.matmul(&self.vision_map).matmul(&self.text_map.transpose());
        FrozenProjector::from_matrix(h.data, embed_dim, self.config.text_dim, g.seed())
    }

    /// Prompt latents for one label: the mean latent plus/minus the label
    /// direction, i.e. an idealized "typical case with finding l" vs
    /// "typical case without finding l". The mean-latent bias keeps
    /// label-absent cases clearly below the positive prompt instead of
    /// sitting on the decision boundary.
    fn prompt_latents(&self, label: usize) -> (Vec<f64>, Vec<f64>) {
        let direction = self.label_latent(label);
        let mean = self.mean_latent();
        let pos: Vec<f64> = mean.iter().zip(&direction).map(|(m, d)| m + d).collect();
        let neg: Vec<f64> = mean.iter().zip(&direction).map(|(m, d)| m - d).collect();
        (pos, neg)
    }

    /// Audio-feature-space query features for one label: idealized
    /// single-finding utterances C(mean +/- E e_l), no noise, no speaker
    /// offset.
    pub fn audio_prompts(&self, label: usize) -> (Vec<f64>, Vec<f64>) {
        let (pos, neg) = self.prompt_latents(label);
        (self.audio_map.matvec(&pos), self.audio_map.matvec(&neg))
    }

    /// Text-feature-space query features for one label: B(mean +/- E e_l).
    pub fn text_prompts(&self, label: usize) -> (Vec<f64>, Vec<f64>) {
        let (pos, neg) = self.prompt_latents(label);
        (self.text_map.matvec(&pos), self.text_map.matvec(&neg))
    }
}

/// One manifest line: where a case's tensors live plus its metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub audio_path: String,
    pub vision_path: String,
    pub text_path: String,
    pub labels: Vec<u8>,
    pub speaker_id: usize,
    pub duration_s: f64,
    pub split: String,
}

/// Line-delimited manifest over one generated dataset.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for rec in &self.records {
            serde_json::to_writer(&mut out, rec)?;
            out.push(b'\n');
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = fs::File::open(path)?;
        let mut records = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line)?);
        }
        Ok(DatasetManifest { records })
    }

    pub fn split_records(&self, split: &str) -> Vec<&ManifestRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }
}

fn tensor_rel_path(id: &str, kind: &str) -> String {
    format!("tensors/{id}_{kind}.xmdt")
}

/// Generate every example, write tensor files and the manifest (all
/// records tagged "train" until [`split_dataset`] retags them), and write
/// the config echo `dataset.json`. Byte-identical for identical
/// (config, out_dir contents).
pub fn generate_dataset(config: &GeneratorConfig, out_dir: &Path) -> Result<DatasetManifest> {
    let world = SynthWorld::new(config.clone())?;
    fs::create_dir_all(out_dir.join("tensors"))?;

    // Per-example draws are independent streams; compute in parallel,
    // write in index order.
    let examples: Vec<PairedExample> = (0..config.n_examples)
        .into_par_iter()
        .map(|i| world.sample_example(i))
        .collect();

    let mut records = Vec::with_capacity(examples.len());
    for ex in &examples {
        let audio_path = tensor_rel_path(&ex.id, "audio");
        let vision_path = tensor_rel_path(&ex.id, "vision");
        let text_path = tensor_rel_path(&ex.id, "text");
        let flat_audio: Vec<f64> = ex.audio.frames().iter().flatten().copied().collect();
        tensorio::write_tensor(
            &out_dir.join(&audio_path),
            &[ex.audio.total_frames() as u64, config.audio_dim as u64],
            &flat_audio,
        )?;
        tensorio::write_tensor(
            &out_dir.join(&vision_path),
            &[config.vision_dim as u64],
            &ex.vision_features,
        )?;
        tensorio::write_tensor(
            &out_dir.join(&text_path),
            &[config.text_dim as u64],
            &ex.text_features,
        )?;
        records.push(ManifestRecord {
            id: ex.id.clone(),
            audio_path,
            vision_path,
            text_path,
            labels: ex.labels.clone(),
            speaker_id: ex.speaker_id,
            duration_s: ex.duration_s,
            split: "train".into(),
        });
    }
    let manifest = DatasetManifest { records };
    manifest.save(&out_dir.join("manifest.jsonl"))?;
    save_generator_config(config, &out_dir.join("dataset.json"))?;
    Ok(manifest)
}

/// Deterministically retag records with train/test splits. Record order is
/// preserved; only tags change.
pub fn split_dataset(
    manifest: &DatasetManifest,
    train_fraction: f64,
    seed: u64,
) -> Result<DatasetManifest> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidFraction(train_fraction));
    }
    let n = manifest.records.len();
    if n < 2 {
        return Err(Error::InvalidConfig(
            "need at least 2 records to split".into(),
        ));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, domain::SPLIT, 0));
    let n_train = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut out = manifest.clone();
    for (rank, &idx) in order.iter().enumerate() {
        out.records[idx].split = if rank < n_train { "train" } else { "test" }.into();
    }
    Ok(out)
}

pub fn save_generator_config(config: &GeneratorConfig, path: &Path) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(config)?;
    bytes.push(b'\n');
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_generator_config(path: &Path) -> Result<GeneratorConfig> {
    let bytes = fs::read(path)?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// An example read back from disk. Text features are only loaded when
/// requested; the speech-only inference path never touches them.
#[derive(Debug, Clone)]
pub struct LoadedExample {
    pub id: String,
    pub labels: Vec<u8>,
    pub speaker_id: usize,
    pub duration_s: f64,
    pub audio: AudioSignal,
    pub vision_features: Vec<f64>,
    pub text_features: Option<Vec<f64>>,
}

/// Load every record of one split. `with_text = false` skips the text
/// tensor files entirely.
pub fn load_split(
    root: &Path,
    manifest: &DatasetManifest,
    split: &str,
    frame_rate_hz: f64,
    with_text: bool,
) -> Result<Vec<LoadedExample>> {
    let records = manifest.split_records(split);
    if records.is_empty() {
        return Err(Error::EmptySplit(split.to_string()));
    }
    records
        .into_iter()
        .map(|rec| {
            let (dims, data) = tensorio::read_tensor(&root.join(&rec.audio_path))?;
            if dims.len() != 2 {
                return Err(Error::Format(format!(
                    "audio tensor for {} must be rank 2, got rank {}",
                    rec.id,
                    dims.len()
                )));
            }
            let feat = dims[1] as usize;
            let frames: Vec<Vec<f64>> = data.chunks_exact(feat).map(|c| c.to_vec()).collect();
            let audio = AudioSignal::new(frames, frame_rate_hz)?;
            let (_, vision_features) = tensorio::read_tensor(&root.join(&rec.vision_path))?;
            let text_features = if with_text {
                Some(tensorio::read_tensor(&root.join(&rec.text_path))?.1)
            } else {
                None
            };
            Ok(LoadedExample {
                id: rec.id.clone(),
                labels: rec.labels.clone(),
                speaker_id: rec.speaker_id,
                duration_s: rec.duration_s,
                audio,
                vision_features,
                text_features,
            })
        })
        .collect()
}
