//! Downstream protocols: zero-shot multi-label classification from
//! query-side embeddings matched against vision embeddings, the usual
//! classification metrics (AUROC by Mann-Whitney midranks, thresholded
//! precision/recall/F1/accuracy), and cross-modal retrieval Recall@K.
//!
//! The query side is either the student path (audio-feature prompts
//! through the trained encoder; consumes no text anywhere) or the teacher
//! path (text-feature prompts through the frozen text projector), selected
//! by [`QueryEncoder`].

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{cosine_similarity, Embedding};
use crate::encoders::{frozen_encode, FrozenProjector, StudentEncoderParams};
use crate::error::{Error, Result};
use crate::losses::BatchEmbeddings;
use crate::synthdata::{load_generator_config, load_split, DatasetManifest, SynthWorld};
use crate::windowing::{encode_long_audio, AudioSignal};

/// Per-label query features fed to the query-side encoder: one positive
/// ("finding present") and one negative ("finding absent") source vector.
#[derive(Debug, Clone)]
pub struct PromptPair {
    pub label: String,
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
}

/// Which encoder turns query features into embeddings. The student arm
/// holds no text-side state at all, which is what makes the speech-only
/// inference guarantee a property of the call graph rather than a runtime
/// convention.
pub enum QueryEncoder<'a> {
    Student {
        params: &'a StudentEncoderParams,
        window_len_s: f64,
        overlap_s: f64,
        frame_rate_hz: f64,
    },
    Teacher {
        projector: &'a FrozenProjector,
    },
}

impl QueryEncoder<'_> {
    pub fn encode(&self, features: &[f64]) -> Result<Embedding> {
        match self {
            QueryEncoder::Student {
                params,
                window_len_s,
                overlap_s,
                frame_rate_hz,
            } => {
                let signal = AudioSignal::new(vec![features.to_vec()], *frame_rate_hz)?;
                encode_long_audio(params, &signal, *window_len_s, *overlap_s)
            }
            QueryEncoder::Teacher { projector } => frozen_encode(projector, features),
        }
    }

    pub fn path_name(&self) -> &'static str {
        match self {
            QueryEncoder::Student { .. } => "student",
            QueryEncoder::Teacher { .. } => "teacher",
        }
    }
}

/// Two-way softmax over the positive/negative prompt similarities:
/// score = exp(c+) / (exp(c+) + exp(c-)), computed in the stable sigmoid
/// form. Always in (0, 1).
fn two_way_softmax(cos_pos: f64, cos_neg: f64) -> f64 {
    1.0 / (1.0 + (cos_neg - cos_pos).exp())
}

/// Score every (example, label) pair: encode each label's prompts once,
/// then softmax the cosine of each vision embedding against them.
pub fn zero_shot_scores(
    vision_embeddings: &[Embedding],
    prompts: &[PromptPair],
    encoder: &QueryEncoder<'_>,
) -> Result<Vec<Vec<f64>>> {
    if vision_embeddings.is_empty() || prompts.is_empty() {
        return Err(Error::EmptyInput);
    }
    let prompt_embeddings: Vec<(Embedding, Embedding)> = prompts
        .iter()
        .map(|p| Ok((encoder.encode(&p.positive)?, encoder.encode(&p.negative)?)))
        .collect::<Result<_>>()?;
    vision_embeddings
        .par_iter()
        .map(|v| {
            prompt_embeddings
                .iter()
                .map(|(pos, neg)| {
                    let cp = cosine_similarity(v, pos)?;
                    let cn = cosine_similarity(v, neg)?;
                    Ok(two_way_softmax(cp, cn))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect()
}

/// AUROC as the Mann-Whitney statistic: the probability that a random
/// positive outscores a random negative, ties counting one half. Computed
/// with midranks, which is exactly equivalent to pair counting.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            got: labels.len(),
        });
    }
    let n = scores.len();
    let pos = labels.iter().filter(|&&l| l != 0).count();
    let neg = n - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateLabels(format!(
            "{pos} positives, {neg} negatives"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let mut rank = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // Average of 1-based ranks i+1 ..= j+1; an exact multiple of 0.5.
        let mid = (i + j + 2) as f64 / 2.0;
        for k in i..=j {
            rank[idx[k]] = mid;
        }
        i = j + 1;
    }
    let rank_sum: f64 = (0..n).filter(|&e| labels[e] != 0).map(|e| rank[e]).sum();
    let p = pos as f64;
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * neg as f64))
}

/// Confusion-matrix metrics at a fixed threshold; degenerate cells are
/// defined to 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

/// Predictions are `score >= threshold`.
pub fn thresholded_metrics(scores: &[f64], labels: &[u8], threshold: f64) -> ThresholdMetrics {
    let (mut tp, mut fp, mut fn_, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l != 0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let precision = if tp + fp > 0 {
        tp as f64 / (tp + fp) as f64
    } else {
        0.0
    };
    let recall = if tp + fn_ > 0 {
        tp as f64 / (tp + fn_) as f64
    } else {
        0.0
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    let total = tp + fp + fn_ + tn;
    let accuracy = if total > 0 {
        (tp + tn) as f64 / total as f64
    } else {
        0.0
    };
    ThresholdMetrics {
        precision,
        recall,
        f1,
        accuracy,
        tp,
        fp,
        fn_,
        tn,
    }
}

/// Classification report: per-label metrics plus unweighted macro averages
/// (AUROC averaged only over labels where it is defined) and
/// support-weighted F1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub query_path: String,
    pub split: String,
    pub threshold: f64,
    pub n_labels: usize,
    pub n_examples: usize,
    pub per_label: Vec<LabelMetrics>,
    /// Labels excluded from the AUROC average for having a single class.
    pub auroc_excluded: Vec<String>,
    pub macro_auroc: f64,
    pub macro_f1: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_accuracy: f64,
    pub weighted_f1: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub label: String,
    /// None when the split contains a single class for this label.
    pub auroc: Option<f64>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    /// Positive count in the evaluated split.
    pub support: usize,
}

/// Compose scoring and metrics over one split's vision embeddings.
pub fn evaluate_zero_shot(
    vision_embeddings: &[Embedding],
    example_labels: &[Vec<u8>],
    prompts: &[PromptPair],
    encoder: &QueryEncoder<'_>,
    threshold: f64,
    split: &str,
) -> Result<MetricsReport> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "threshold {threshold} must lie in (0, 1)"
        )));
    }
    if vision_embeddings.len() != example_labels.len() {
        return Err(Error::DimensionMismatch {
            expected: vision_embeddings.len(),
            got: example_labels.len(),
        });
    }
    let n_labels = prompts.len();
    for l in example_labels {
        if l.len() != n_labels {
            return Err(Error::DimensionMismatch {
                expected: n_labels,
                got: l.len(),
            });
        }
    }
    let scores = zero_shot_scores(vision_embeddings, prompts, encoder)?;

    let mut per_label = Vec::with_capacity(n_labels);
    let mut auroc_excluded = Vec::new();
    for (l, prompt) in prompts.iter().enumerate() {
        let col_scores: Vec<f64> = scores.iter().map(|row| row[l]).collect();
        let col_labels: Vec<u8> = example_labels.iter().map(|y| y[l]).collect();
        let auc = match auroc(&col_scores, &col_labels) {
            Ok(a) => Some(a),
            Err(Error::DegenerateLabels(_)) => {
                auroc_excluded.push(prompt.label.clone());
                None
            }
            Err(e) => return Err(e),
        };
        let t = thresholded_metrics(&col_scores, &col_labels, threshold);
        per_label.push(LabelMetrics {
            label: prompt.label.clone(),
            auroc: auc,
            precision: t.precision,
            recall: t.recall,
            f1: t.f1,
            accuracy: t.accuracy,
            support: col_labels.iter().filter(|&&y| y != 0).count(),
        });
    }

    let nf = n_labels as f64;
    let mean = |f: &dyn Fn(&LabelMetrics) -> f64| per_label.iter().map(|m| f(m)).sum::<f64>() / nf;
    let defined: Vec<f64> = per_label.iter().filter_map(|m| m.auroc).collect();
    let macro_auroc = if defined.is_empty() {
        0.0
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    };
    let total_support: usize = per_label.iter().map(|m| m.support).sum();
    let weighted_f1 = if total_support > 0 {
        per_label
            .iter()
            .map(|m| m.support as f64 * m.f1)
            .sum::<f64>()
            / total_support as f64
    } else {
        0.0
    };
    Ok(MetricsReport {
        query_path: encoder.path_name().to_string(),
        split: split.to_string(),
        threshold,
        n_labels,
        n_examples: vision_embeddings.len(),
        macro_auroc,
        macro_f1: mean(&|m| m.f1),
        macro_precision: mean(&|m| m.precision),
        macro_recall: mean(&|m| m.recall),
        macro_accuracy: mean(&|m| m.accuracy),
        weighted_f1,
        per_label,
        auroc_excluded,
    })
}

/// Recall@K table for one retrieval run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub query_path: String,
    pub split: String,
    pub pool_size: usize,
    pub query_count: usize,
    /// (K, recall) pairs in ascending K.
    pub recalls: Vec<(usize, f64)>,
}

pub const DEFAULT_RECALL_KS: [usize; 4] = [5, 10, 50, 100];

/// Rank candidates per query by cosine descending (ties broken by
/// candidate index ascending); recall@K is the fraction of queries whose
/// true match ranks within K.
pub fn retrieval_recall_at_k(
    query_embeddings: &[Embedding],
    candidate_embeddings: &[Embedding],
    true_pairs: &[usize],
    ks: &[usize],
) -> Result<RetrievalReport> {
    if query_embeddings.is_empty() || candidate_embeddings.is_empty() {
        return Err(Error::EmptyInput);
    }
    if true_pairs.len() != query_embeddings.len() {
        return Err(Error::MissingPair {
            query: true_pairs.len().min(query_embeddings.len()),
        });
    }
    for (q, &t) in true_pairs.iter().enumerate() {
        if t >= candidate_embeddings.len() {
            return Err(Error::MissingPair { query: q });
        }
    }
    let ranks: Vec<usize> = query_embeddings
        .par_iter()
        .zip(true_pairs.par_iter())
        .map(|(q, &t)| {
            let sims: Vec<f64> = candidate_embeddings
                .iter()
                .map(|c| cosine_similarity(q, c))
                .collect::<Result<_>>()?;
            let st = sims[t];
            let ahead = sims
                .iter()
                .enumerate()
                .filter(|&(j, &s)| s > st || (s == st && j < t))
                .count();
            Ok(ahead + 1)
        })
        .collect::<Result<_>>()?;

    let mut sorted_ks = ks.to_vec();
    sorted_ks.sort_unstable();
    sorted_ks.dedup();
    let qn = query_embeddings.len() as f64;
    let recalls = sorted_ks
        .into_iter()
        .map(|k| {
            let hits = ranks.iter().filter(|&&r| r <= k).count();
            (k, hits as f64 / qn)
        })
        .collect();
    Ok(RetrievalReport {
        query_path: String::new(),
        split: String::new(),
        pool_size: candidate_embeddings.len(),
        query_count: query_embeddings.len(),
        recalls,
    })
}

/// Which query-side path an evaluation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryPath {
    Student,
    Teacher,
}

impl std::str::FromStr for QueryPath {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "student" => Ok(QueryPath::Student),
            "teacher" => Ok(QueryPath::Teacher),
            other => Err(Error::InvalidConfig(format!(
                "query path must be 'student' or 'teacher', got '{other}'"
            ))),
        }
    }
}

/// Zero-shot classification over a dataset directory. Loads only labels
/// and vision tensors; prompt features come from the generator config, so
/// the student path reads no text-side data at all.
pub fn run_zero_shot(
    dataset_dir: &Path,
    split: &str,
    params: &StudentEncoderParams,
    path: QueryPath,
    threshold: f64,
    window_len_s: f64,
    overlap_s: f64,
) -> Result<MetricsReport> {
    let gen_config = load_generator_config(&dataset_dir.join("dataset.json"))?;
    let manifest = DatasetManifest::load(&dataset_dir.join("manifest.jsonl"))?;
    let examples = load_split(
        dataset_dir,
        &manifest,
        split,
        gen_config.frame_rate_hz,
        false,
    )?;
    let world = SynthWorld::new(gen_config.clone())?;
    let embed_dim = params.arch().output_dim;
    let vision_proj = world.vision_projector(embed_dim)?;
    let vision_embeddings: Vec<Embedding> = examples
        .iter()
        .map(|ex| frozen_encode(&vision_proj, &ex.vision_features))
        .collect::<Result<_>>()?;
    let example_labels: Vec<Vec<u8>> = examples.iter().map(|ex| ex.labels.clone()).collect();

    let make_prompts = |features: &dyn Fn(usize) -> (Vec<f64>, Vec<f64>)| -> Vec<PromptPair> {
        (0..gen_config.n_labels)
            .map(|l| {
                let (positive, negative) = features(l);
                PromptPair {
                    label: format!("label_{l:02}"),
                    positive,
                    negative,
                }
            })
            .collect()
    };
    let text_proj;
    let (prompts, encoder) = match path {
        QueryPath::Student => (
            make_prompts(&|l| world.audio_prompts(l)),
            QueryEncoder::Student {
                params,
                window_len_s,
                overlap_s,
                frame_rate_hz: gen_config.frame_rate_hz,
            },
        ),
        QueryPath::Teacher => {
            text_proj = world.text_projector(embed_dim)?;
            (
                make_prompts(&|l| world.text_prompts(l)),
                QueryEncoder::Teacher {
                    projector: &text_proj,
                },
            )
        }
    };
    evaluate_zero_shot(
        &vision_embeddings,
        &example_labels,
        &prompts,
        &encoder,
        threshold,
        split,
    )
}

/// Cross-modal retrieval over a dataset directory: spoken (or teacher
/// text) reports retrieve their paired vision embedding from the full
/// split pool. The student path loads no text tensors.
pub fn run_retrieval(
    dataset_dir: &Path,
    split: &str,
    params: &StudentEncoderParams,
    path: QueryPath,
    ks: &[usize],
    window_len_s: f64,
    overlap_s: f64,
) -> Result<RetrievalReport> {
    let gen_config = load_generator_config(&dataset_dir.join("dataset.json"))?;
    let manifest = DatasetManifest::load(&dataset_dir.join("manifest.jsonl"))?;
    let with_text = path == QueryPath::Teacher;
    let examples = load_split(
        dataset_dir,
        &manifest,
        split,
        gen_config.frame_rate_hz,
        with_text,
    )?;
    let world = SynthWorld::new(gen_config.clone())?;
    let embed_dim = params.arch().output_dim;
    let vision_proj = world.vision_projector(embed_dim)?;
    let candidates: Vec<Embedding> = examples
        .iter()
        .map(|ex| frozen_encode(&vision_proj, &ex.vision_features))
        .collect::<Result<_>>()?;
    let queries: Vec<Embedding> = match path {
        QueryPath::Student => examples
            .par_iter()
            .map(|ex| encode_long_audio(params, &ex.audio, window_len_s, overlap_s))
            .collect::<Result<_>>()?,
        QueryPath::Teacher => {
            let text_proj = world.text_projector(embed_dim)?;
            examples
                .iter()
                .map(|ex| {
                    frozen_encode(
                        &text_proj,
                        ex.text_features
                            .as_deref()
                            .expect("text loaded for teacher path"),
                    )
                })
                .collect::<Result<_>>()?
        }
    };
    let true_pairs: Vec<usize> = (0..examples.len()).collect();
    let mut report = retrieval_recall_at_k(&queries, &candidates, &true_pairs, ks)?;
    report.query_path = match path {
        QueryPath::Student => "student",
        QueryPath::Teacher => "teacher",
    }
    .to_string();
    report.split = split.to_string();
    Ok(report)
}

/// Batch embeddings assembled for loss evaluation on a split; used by
/// training snapshots and tests. Kept here so the student/teacher paths
/// share one definition of "embed this split".
pub fn embed_split_for_loss(
    dataset_dir: &Path,
    split: &str,
    params: &StudentEncoderParams,
    with_text: bool,
    window_len_s: f64,
    overlap_s: f64,
) -> Result<BatchEmbeddings> {
    let gen_config = load_generator_config(&dataset_dir.join("dataset.json"))?;
    let manifest = DatasetManifest::load(&dataset_dir.join("manifest.jsonl"))?;
    let examples = load_split(
        dataset_dir,
        &manifest,
        split,
        gen_config.frame_rate_hz,
        with_text,
    )?;
    let world = SynthWorld::new(gen_config.clone())?;
    let embed_dim = params.arch().output_dim;
    let vision_proj = world.vision_projector(embed_dim)?;
    let audio: Vec<Embedding> = examples
        .par_iter()
        .map(|ex| encode_long_audio(params, &ex.audio, window_len_s, overlap_s))
        .collect::<Result<_>>()?;
    let vision: Vec<Embedding> = examples
        .iter()
        .map(|ex| frozen_encode(&vision_proj, &ex.vision_features))
        .collect::<Result<_>>()?;
    let text: Option<Vec<Embedding>> = if with_text {
        let text_proj = world.text_projector(embed_dim)?;
        Some(
            examples
                .iter()
                .map(|ex| frozen_encode(&text_proj, ex.text_features.as_deref().unwrap()))
                .collect::<Result<_>>()?,
        )
    } else {
        None
    };
    BatchEmbeddings::new(audio, vision, text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::l2_normalize;
    use proptest::prelude::*;
    use rand::Rng;

    fn identity_projector(d: usize) -> FrozenProjector {
        let mut m = vec![0.0; d * d];
        for i in 0..d {
            m[i * d + i] = 1.0;
        }
        FrozenProjector::from_matrix(m, d, d, 0).unwrap()
    }

    #[test]
    fn score_is_half_when_prompts_tie() {
        assert_eq!(two_way_softmax(0.3, 0.3), 0.5);
    }

    #[test]
    fn score_hand_softmax() {
        // cos+ = 1, cos- = 0 gives e/(e+1); frozen by hand arithmetic.
        let got = two_way_softmax(1.0, 0.0);
        assert!((got - 0.7310585786300049).abs() < 1e-15);
    }

    #[test]
    fn score_swap_complements() {
        let s = two_way_softmax(0.8, -0.2);
        let swapped = two_way_softmax(-0.2, 0.8);
        assert!((s + swapped - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_shot_scores_through_teacher_projector() {
        let proj = identity_projector(2);
        let encoder = QueryEncoder::Teacher { projector: &proj };
        let vision = vec![Embedding::new(vec![1.0, 0.0])];
        let prompts = vec![PromptPair {
            label: "l".into(),
            positive: vec![1.0, 0.0],
            negative: vec![0.0, 1.0],
        }];
        let scores = zero_shot_scores(&vision, &prompts, &encoder).unwrap();
        assert!((scores[0][0] - 0.7310585786300049).abs() < 1e-12);
    }

    #[test]
    fn auroc_perfect_ranking() {
        let got = auroc(&[0.9, 0.8, 0.3, 0.2], &[1, 1, 0, 0]).unwrap();
        assert_eq!(got, 1.0);
    }

    #[test]
    fn auroc_three_of_four_pairs() {
        // Pairs ordered correctly: (.9 vs .8) yes, (.9 vs .2) yes,
        // (.3 vs .8) no, (.3 vs .2) yes: 3/4.
        let got = auroc(&[0.9, 0.8, 0.3, 0.2], &[1, 0, 1, 0]).unwrap();
        assert_eq!(got, 0.75);
    }

    #[test]
    fn auroc_all_ties_is_half() {
        let got = auroc(&[0.4; 6], &[1, 0, 1, 0, 0, 1]).unwrap();
        assert_eq!(got, 0.5);
    }

    #[test]
    fn auroc_single_class_rejected() {
        assert!(matches!(
            auroc(&[0.1, 0.2], &[1, 1]),
            Err(Error::DegenerateLabels(_))
        ));
    }

    /// Brute-force oracle: count correctly ordered positive/negative
    /// pairs, ties worth one half.
    fn auroc_pair_counting(scores: &[f64], labels: &[u8]) -> f64 {
        let mut hits = 0.0;
        let mut pairs = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            if li == 0 {
                continue;
            }
            for (j, &lj) in labels.iter().enumerate() {
                if lj != 0 {
                    continue;
                }
                pairs += 1.0;
                if scores[i] > scores[j] {
                    hits += 1.0;
                } else if scores[i] == scores[j] {
                    hits += 0.5;
                }
            }
        }
        hits / pairs
    }

    #[test]
    fn auroc_equals_pair_counting_with_ties() {
        let mut rng = crate::rng::stream_rng(2, crate::rng::domain::GRADCHECK, 10);
        for _ in 0..300 {
            let n = rng.gen_range(2..=12);
            // Coarse score grid forces frequent ties.
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..5) as f64 / 4.0).collect();
            let mut labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2) as u8).collect();
            if labels.iter().all(|&l| l == 0) {
                labels[0] = 1;
            }
            if labels.iter().all(|&l| l == 1) {
                labels[0] = 0;
            }
            let got = auroc(&scores, &labels).unwrap();
            let expect = auroc_pair_counting(&scores, &labels);
            assert_eq!(got, expect, "scores {scores:?} labels {labels:?}");
        }
    }

    #[test]
    fn thresholded_metrics_confusion_counts() {
        // TP=2, FP=1, FN=1, TN=6 at threshold 0.5.
        let scores = [0.9, 0.8, 0.7, 0.2, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1];
        let labels = [1, 1, 0, 1, 0, 0, 0, 0, 0, 0];
        let m = thresholded_metrics(&scores, &labels, 0.5);
        assert_eq!((m.tp, m.fp, m.fn_, m.tn), (2, 1, 1, 6));
        assert!((m.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.accuracy - 0.8).abs() < 1e-12);
    }

    #[test]
    fn thresholded_metrics_perfect_and_degenerate() {
        let perfect = thresholded_metrics(&[0.9, 0.1], &[1, 0], 0.5);
        assert_eq!(
            (perfect.precision, perfect.recall, perfect.f1, perfect.accuracy),
            (1.0, 1.0, 1.0, 1.0)
        );
        // All-negative predictions with positives present.
        let none = thresholded_metrics(&[0.1, 0.2], &[1, 1], 0.5);
        assert_eq!((none.recall, none.f1), (0.0, 0.0));
    }

    #[test]
    fn retrieval_self_pool_is_perfect() {
        let mut rng = crate::rng::stream_rng(4, crate::rng::domain::GRADCHECK, 11);
        let pool: Vec<Embedding> = (0..8)
            .map(|_| {
                let v: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
                l2_normalize(&v).unwrap()
            })
            .collect();
        let pairs: Vec<usize> = (0..8).collect();
        let report = retrieval_recall_at_k(&pool, &pool, &pairs, &[1, 5, 100]).unwrap();
        for &(_, r) in &report.recalls {
            assert_eq!(r, 1.0);
        }
    }

    #[test]
    fn retrieval_matches_full_sort_oracle() {
        let mut rng = crate::rng::stream_rng(6, crate::rng::domain::GRADCHECK, 12);
        for _ in 0..50 {
            let pool = rng.gen_range(2..=10);
            let queries: Vec<Embedding> = (0..pool)
                .map(|_| {
                    let v: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    l2_normalize(&v).unwrap()
                })
                .collect();
            let candidates: Vec<Embedding> = (0..pool)
                .map(|_| {
                    let v: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    l2_normalize(&v).unwrap()
                })
                .collect();
            let pairs: Vec<usize> = (0..pool).collect();
            let ks = [1, 2, 3, pool];
            let got = retrieval_recall_at_k(&queries, &candidates, &pairs, &ks).unwrap();

            // Oracle: full sort with (sim desc, index asc) ordering.
            let mut expect = vec![0usize; ks.len()];
            for (qi, q) in queries.iter().enumerate() {
                let mut order: Vec<(usize, f64)> = candidates
                    .iter()
                    .enumerate()
                    .map(|(j, c)| (j, cosine_similarity(q, c).unwrap()))
                    .collect();
                order.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
                let rank = order.iter().position(|&(j, _)| j == pairs[qi]).unwrap() + 1;
                for (e, &k) in expect.iter_mut().zip(&ks) {
                    if rank <= k {
                        *e += 1;
                    }
                }
            }
            for (i, &(k, r)) in got.recalls.iter().enumerate() {
                assert_eq!(k, *ks.iter().filter(|&&x| x == k).next().unwrap());
                assert_eq!(r, expect[i] as f64 / pool as f64, "k={k}");
            }
        }
    }

    #[test]
    fn retrieval_recall_monotone_in_k() {
        let mut rng = crate::rng::stream_rng(8, crate::rng::domain::GRADCHECK, 13);
        let make = |n: usize, rng: &mut rand_chacha::ChaCha8Rng| -> Vec<Embedding> {
            (0..n)
                .map(|_| {
                    let v: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    l2_normalize(&v).unwrap()
                })
                .collect()
        };
        let q = make(20, &mut rng);
        let c = make(20, &mut rng);
        let pairs: Vec<usize> = (0..20).collect();
        let report = retrieval_recall_at_k(&q, &c, &pairs, &[1, 3, 5, 10, 20]).unwrap();
        for w in report.recalls.windows(2) {
            assert!(w[0].1 <= w[1].1);
        }
        assert_eq!(report.recalls.last().unwrap().1, 1.0, "recall@pool must be 1");
    }

    #[test]
    fn retrieval_missing_pair_rejected() {
        let e = vec![Embedding::new(vec![1.0, 0.0]); 3];
        assert!(matches!(
            retrieval_recall_at_k(&e, &e, &[0, 1], &[1]),
            Err(Error::MissingPair { .. })
        ));
        assert!(matches!(
            retrieval_recall_at_k(&e, &e, &[0, 1, 7], &[1]),
            Err(Error::MissingPair { query: 2 })
        ));
    }

    proptest! {
        #[test]
        fn auroc_invariant_under_monotone_transform(seed in 0u64..300) {
            let mut rng = crate::rng::stream_rng(seed, crate::rng::domain::GRADCHECK, 14);
            let n = rng.gen_range(4..=20);
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            let mut labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2) as u8).collect();
            if labels.iter().all(|&l| l == 0) { labels[0] = 1; }
            if labels.iter().all(|&l| l == 1) { labels[0] = 0; }
            let base = auroc(&scores, &labels).unwrap();
            // Strictly monotone transforms preserve all pairwise orderings.
            let exp_scores: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp()).collect();
            let affine_scores: Vec<f64> = scores.iter().map(|s| 0.2 * s - 7.0).collect();
            prop_assert_eq!(auroc(&exp_scores, &labels).unwrap(), base);
            prop_assert_eq!(auroc(&affine_scores, &labels).unwrap(), base);
        }
    }
}
