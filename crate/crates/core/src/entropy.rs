//! Normalized windowed activation entropy (NRSE).
//!
//! For one tapped layer, activations are split into windows of
//! `window_frames` frames advancing by `hop_frames` (a shorter utterance
//! forms a single window). Per window and neuron, a histogram over
//! `num_bins` equal-width bins estimates the activation distribution; its
//! Shannon entropy is normalized by ln(num_bins) into [0, 1]. Per-neuron
//! window means are sorted descending and the top `top_fraction` share
//! (ceil of the count) is averaged into the utterance score. Low NRSE
//! means the activations stayed peaky and familiar; high NRSE means the
//! layer saw broadly scattered activations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{ActivationTrace, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntropyMode {
    /// Histogram sigmoid activations directly on fixed [0, 1] support.
    Direct,
    /// Softmax each frame across the layer first, then histogram each
    /// window on its own min-max support.
    LayerSoftmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EntropyParams {
    /// 1-based dense hidden layer to tap.
    pub layer_index: usize,
    /// Window length m in frames.
    pub window_frames: usize,
    /// Hop between window starts in frames.
    pub hop_frames: usize,
    /// Histogram bins B.
    pub num_bins: usize,
    /// Share of highest-entropy neurons averaged into the score.
    pub top_fraction: f64,
    pub mode: EntropyMode,
}

impl Default for EntropyParams {
    fn default() -> Self {
        EntropyParams {
            layer_index: 3,
            window_frames: 91,
            hop_frames: 20,
            num_bins: 32,
            top_fraction: 0.70,
            mode: EntropyMode::Direct,
        }
    }
}

impl EntropyParams {
    pub fn validate(&self) -> Result<()> {
        if self.layer_index == 0 {
            return Err(Error::config(
                "entropy.layer_index is 1-based, got 0".to_string(),
            ));
        }
        if self.window_frames == 0 {
            return Err(Error::config(
                "entropy.window_frames must be positive".to_string(),
            ));
        }
        if self.hop_frames == 0 {
            return Err(Error::config(
                "entropy.hop_frames must be positive".to_string(),
            ));
        }
        if self.num_bins < 2 {
            return Err(Error::config(format!(
                "entropy.num_bins must be at least 2, got {}",
                self.num_bins
            )));
        }
        if !(self.top_fraction > 0.0 && self.top_fraction <= 1.0) {
            return Err(Error::config(format!(
                "entropy.top_fraction must be in (0, 1], got {}",
                self.top_fraction
            )));
        }
        Ok(())
    }
}

/// Window start offsets: 0, hop, 2*hop, ... while a full window fits.
/// When fewer than `window` frames exist, the single window is the whole
/// sequence.
pub fn window_starts(total: usize, window: usize, hop: usize) -> Vec<usize> {
    if total < window {
        return vec![0];
    }
    (0..=total - window).step_by(hop).collect()
}

/// Shannon entropy (nats) of a histogram over `num_bins` equal-width bins
/// spanning [lo, hi]. Values outside the span clamp into the edge bins.
pub fn binned_entropy(values: &[f64], num_bins: usize, lo: f64, hi: f64) -> f64 {
    debug_assert!(num_bins >= 2);
    if values.is_empty() || !(hi > lo) {
        return 0.0;
    }
    let mut counts = vec![0usize; num_bins];
    let scale = num_bins as f64 / (hi - lo);
    for &v in values {
        let bin = (((v - lo) * scale) as isize).clamp(0, num_bins as isize - 1) as usize;
        counts[bin] += 1;
    }
    let n = values.len() as f64;
    let mut h = 0.0f64;
    for &c in &counts {
        if c > 0 {
            let p = c as f64 / n;
            h -= p * p.ln();
        }
    }
    h
}

/// Per-neuron mean normalized windowed entropy for one tapped layer.
#[derive(Debug, Clone)]
pub struct EntropyProfile {
    pub utterance_id: String,
    pub layer_index: usize,
    /// One value in [0, 1] per neuron of the tapped layer.
    pub per_neuron: Vec<f64>,
}

pub fn entropy_profile<F: Scalar>(
    trace: &ActivationTrace<F>,
    params: &EntropyParams,
) -> Result<EntropyProfile> {
    params.validate()?;
    let frames = trace.values.nrows();
    let neurons = trace.values.ncols();
    if frames == 0 || neurons == 0 {
        return Err(Error::input(format!(
            "activation trace for {:?} is empty ({frames} frames x {neurons} neurons)",
            trace.utterance_id
        )));
    }
    let values: Vec<Vec<f64>> = match params.mode {
        EntropyMode::Direct => (0..neurons)
            .map(|j| trace.values.column(j).iter().map(|v| v.to_f64()).collect())
            .collect(),
        EntropyMode::LayerSoftmax => {
            let mut cols = vec![vec![0.0f64; frames]; neurons];
            for t in 0..frames {
                let row = trace.values.row(t);
                let max = row
                    .iter()
                    .map(|v| v.to_f64())
                    .fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = row.iter().map(|v| (v.to_f64() - max).exp()).collect();
                let sum: f64 = exps.iter().sum();
                for (j, e) in exps.into_iter().enumerate() {
                    cols[j][t] = e / sum;
                }
            }
            cols
        }
    };
    let starts = window_starts(frames, params.window_frames, params.hop_frames);
    let norm = (params.num_bins as f64).ln();
    let per_neuron = values
        .iter()
        .map(|col| {
            let mut acc = 0.0f64;
            for &start in &starts {
                let end = (start + params.window_frames).min(frames);
                let window = &col[start..end];
                let h = match params.mode {
                    EntropyMode::Direct => binned_entropy(window, params.num_bins, 0.0, 1.0),
                    EntropyMode::LayerSoftmax => {
                        let lo = window.iter().cloned().fold(f64::INFINITY, f64::min);
                        let hi = window.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        binned_entropy(window, params.num_bins, lo, hi)
                    }
                };
                acc += h / norm;
            }
            acc / starts.len() as f64
        })
        .collect();
    Ok(EntropyProfile {
        utterance_id: trace.utterance_id.clone(),
        layer_index: trace.layer_index,
        per_neuron,
    })
}

/// Utterance score: mean of the top `top_fraction` share of per-neuron
/// entropies (count = ceil(fraction * neurons)).
pub fn nrse(profile: &EntropyProfile, top_fraction: f64) -> Result<f64> {
    if !(top_fraction > 0.0 && top_fraction <= 1.0) {
        return Err(Error::config(format!(
            "top_fraction must be in (0, 1], got {top_fraction}"
        )));
    }
    if profile.per_neuron.is_empty() {
        return Err(Error::input(format!(
            "entropy profile for {:?} has no neurons",
            profile.utterance_id
        )));
    }
    let mut sorted = profile.per_neuron.clone();
    sorted.sort_unstable_by(|a, b| b.partial_cmp(a).expect("entropies are finite"));
    let k = ((top_fraction * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    Ok(sorted[..k].iter().sum::<f64>() / k as f64)
}
