//! Assembly of utterances into stacked frame sets for the net.

use ndarray::Array2;

use crate::corpus::Utterance;
use crate::error::{Error, Result};
use crate::features::{stack_context, FeatureMatrix};
use crate::net::{evaluate, FrameSet, Metrics, NetworkSpec, Parameters};

/// Per-utterance, per-channel mean and variance normalization. Compressed
/// filterbank energies occupy a narrow band around 0.5; sigmoid layers need
/// unit-scale centered inputs to produce usable gradients.
pub fn normalize_features(features: &FeatureMatrix) -> FeatureMatrix {
    let mut frames = features.frames.clone();
    let n = frames.nrows().max(1) as f64;
    for mut col in frames.columns_mut() {
        let mean = col.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = col.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        let scale = 1.0 / var.sqrt().max(1e-6);
        col.mapv_inplace(|v| ((v as f64 - mean) * scale) as f32);
    }
    FeatureMatrix {
        utterance_id: features.utterance_id.clone(),
        frames,
        frame_period: features.frame_period,
    }
}

/// Normalizes and context-stacks one utterance to the net's input width.
pub fn stack_for_net(features: &FeatureMatrix, spec: &NetworkSpec) -> Result<Array2<f32>> {
    if features.dim() != spec.input_bands {
        return Err(Error::input(format!(
            "utterance {:?} has {} bands, net expects {}",
            features.utterance_id,
            features.dim(),
            spec.input_bands
        )));
    }
    let c = spec.context();
    Ok(stack_context(&normalize_features(features), c, c))
}

/// Stacks utterances (in the given order) into one frame set using their
/// reference labels.
pub fn frameset(utts: &[&Utterance], spec: &NetworkSpec) -> Result<FrameSet<f32>> {
    let labels: Vec<&[u32]> = utts
        .iter()
        .map(|u| {
            u.labels.as_deref().ok_or_else(|| {
                Error::input(format!("utterance {:?} has no labels", u.utterance_id))
            })
        })
        .collect::<Result<_>>()?;
    frameset_with_labels(utts, spec, &labels)
}

/// Stacks utterances into one frame set with caller-provided per-utterance
/// label tracks (used for pseudo-labels).
pub fn frameset_with_labels(
    utts: &[&Utterance],
    spec: &NetworkSpec,
    labels: &[&[u32]],
) -> Result<FrameSet<f32>> {
    if utts.len() != labels.len() {
        return Err(Error::input(format!(
            "{} utterances but {} label tracks",
            utts.len(),
            labels.len()
        )));
    }
    let total: usize = utts.iter().map(|u| u.features.num_frames()).sum();
    let mut inputs = Array2::<f32>::zeros((total, spec.input_dim()));
    let mut all_labels = Vec::with_capacity(total);
    let mut at = 0usize;
    for (utt, track) in utts.iter().zip(labels) {
        let frames = utt.features.num_frames();
        if track.len() != frames {
            return Err(Error::input(format!(
                "utterance {:?} has {} frames but {} labels",
                utt.utterance_id,
                frames,
                track.len()
            )));
        }
        let stacked = stack_for_net(&utt.features, spec)?;
        inputs
            .slice_mut(ndarray::s![at..at + frames, ..])
            .assign(&stacked);
        all_labels.extend_from_slice(track);
        at += frames;
    }
    FrameSet::new(inputs, all_labels)
}

/// Frame metrics over utterances, stacked one utterance at a time so the
/// context-expanded matrix never holds the whole split.
pub fn evaluate_utterances(
    spec: &NetworkSpec,
    params: &Parameters<f32>,
    utts: &[&Utterance],
) -> Result<Metrics> {
    if utts.is_empty() {
        return Err(Error::input("evaluation set is empty".to_string()));
    }
    let mut errors = 0.0f64;
    let mut ce = 0.0f64;
    let mut total = 0usize;
    for utt in utts {
        let set = frameset(&[utt], spec)?;
        let m = evaluate(spec, params, &set)?;
        let n = set.len();
        errors += m.frame_error_rate * n as f64;
        ce += m.mean_cross_entropy * n as f64;
        total += n;
    }
    Ok(Metrics {
        frame_error_rate: errors / total as f64,
        mean_cross_entropy: ce / total as f64,
    })
}
