//! Gammatone filterbank front end.
//!
//! Audio is filtered through a bank of 4th-order gammatone filters with
//! center frequencies uniformly spaced on the ERB-rate scale, then reduced
//! to frame powers over a sliding window and compressed by a power root.
//! Filters are realized as cascades of four complex one-pole sections,
//! which keeps the filtering O(N) per channel and exactly repeatable.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The only sample rate the pipeline accepts.
pub const SAMPLE_RATE: u32 = 16_000;

/// Mono audio in [-1, 1) plus identity.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub utterance_id: String,
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(
        utterance_id: impl Into<String>,
        samples: Vec<f32>,
        sample_rate: u32,
    ) -> Result<Self> {
        let utterance_id = utterance_id.into();
        if samples.is_empty() {
            return Err(Error::input(format!(
                "audio {utterance_id:?} has no samples"
            )));
        }
        if let Some(pos) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::input(format!(
                "audio {utterance_id:?} has a non-finite sample at index {pos}"
            )));
        }
        if sample_rate == 0 {
            return Err(Error::input(format!(
                "audio {utterance_id:?} has sample rate 0"
            )));
        }
        Ok(AudioBuffer {
            utterance_id,
            samples,
            sample_rate,
        })
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Filterbank configuration. Defaults: 40 filters, 26 ms window, 10 ms hop,
/// 15th-root compression, 50..7400 Hz span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GfbConfig {
    pub num_filters: usize,
    /// Analysis window length in seconds.
    pub window_len: f64,
    /// Hop between windows in seconds.
    pub hop: f64,
    /// Root applied to frame power (value = power^(1/root)).
    pub root: u32,
    pub fmin: f64,
    pub fmax: f64,
}

impl Default for GfbConfig {
    fn default() -> Self {
        GfbConfig {
            num_filters: 40,
            window_len: 0.026,
            hop: 0.010,
            root: 15,
            fmin: 50.0,
            fmax: 7400.0,
        }
    }
}

impl GfbConfig {
    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        if self.num_filters < 2 {
            return Err(Error::config(format!(
                "gfb.num_filters must be at least 2, got {}",
                self.num_filters
            )));
        }
        if !(self.window_len > 0.0) || !(self.hop > 0.0) {
            return Err(Error::config(
                "gfb.window_len and gfb.hop must be positive".to_string(),
            ));
        }
        if self.hop > self.window_len {
            return Err(Error::config(format!(
                "gfb.hop ({}) must not exceed gfb.window_len ({})",
                self.hop, self.window_len
            )));
        }
        if self.root == 0 {
            return Err(Error::config("gfb.root must be positive".to_string()));
        }
        if !(self.fmin > 0.0) || !(self.fmax > self.fmin) {
            return Err(Error::config(format!(
                "gfb frequency span [{}, {}] is invalid",
                self.fmin, self.fmax
            )));
        }
        if self.fmax > sample_rate as f64 / 2.0 {
            return Err(Error::config(format!(
                "gfb.fmax ({}) exceeds the Nyquist frequency ({})",
                self.fmax,
                sample_rate as f64 / 2.0
            )));
        }
        Ok(())
    }

    pub fn window_samples(&self, sample_rate: u32) -> usize {
        (self.window_len * sample_rate as f64).round() as usize
    }

    pub fn hop_samples(&self, sample_rate: u32) -> usize {
        (self.hop * sample_rate as f64).round() as usize
    }
}

/// Frame-by-band feature matrix for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub utterance_id: String,
    /// Rows are frames, columns are filterbank channels.
    pub frames: Array2<f32>,
    /// Seconds between frame starts.
    pub frame_period: f64,
}

impl FeatureMatrix {
    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }
}

/// ERB bandwidth in Hz at a given center frequency (Glasberg & Moore).
pub fn erb_bandwidth(hz: f64) -> f64 {
    24.7 * (4.37e-3 * hz + 1.0)
}

/// ERB-rate scale value at a given frequency in Hz.
pub fn erb_rate(hz: f64) -> f64 {
    21.4 * (4.37e-3 * hz + 1.0).log10()
}

/// Inverse of [`erb_rate`].
pub fn erb_rate_inv(e: f64) -> f64 {
    (10f64.powf(e / 21.4) - 1.0) / 4.37e-3
}

/// Center frequencies uniformly spaced on the ERB-rate scale.
/// The first and last centers are exactly fmin and fmax.
pub fn erb_centers(cfg: &GfbConfig) -> Result<Vec<f64>> {
    cfg.validate(SAMPLE_RATE)?;
    let n = cfg.num_filters;
    let e_lo = erb_rate(cfg.fmin);
    let e_hi = erb_rate(cfg.fmax);
    let step = (e_hi - e_lo) / (n - 1) as f64;
    let centers = (0..n)
        .map(|k| {
            if k == 0 {
                cfg.fmin
            } else if k == n - 1 {
                cfg.fmax
            } else {
                erb_rate_inv(e_lo + k as f64 * step)
            }
        })
        .collect();
    Ok(centers)
}

/// One gammatone channel: four cascaded complex one-pole sections with
/// pole radius r = exp(-2 pi b / fs), b = 1.019 ERB(fc). Each section has
/// unit gain at the center frequency; the real output is recovered with a
/// factor of two.
struct GammatoneChannel {
    a_re: f64,
    a_im: f64,
    gain: f64,
}

impl GammatoneChannel {
    fn new(fc: f64, sample_rate: u32) -> Self {
        let fs = sample_rate as f64;
        let b = 1.019 * erb_bandwidth(fc);
        let r = (-2.0 * std::f64::consts::PI * b / fs).exp();
        let omega = 2.0 * std::f64::consts::PI * fc / fs;
        GammatoneChannel {
            a_re: r * omega.cos(),
            a_im: r * omega.sin(),
            gain: 1.0 - r,
        }
    }

    /// Filters `x` and writes the real bandpass output into `out`.
    fn run(&self, x: &[f32], out: &mut [f64]) {
        let mut state = [(0.0f64, 0.0f64); 4];
        let g4 = self.gain * self.gain * self.gain * self.gain;
        for (n, &xn) in x.iter().enumerate() {
            let mut in_re = xn as f64 * g4;
            let mut in_im = 0.0f64;
            for s in state.iter_mut() {
                let re = in_re + self.a_re * s.0 - self.a_im * s.1;
                let im = in_im + self.a_re * s.1 + self.a_im * s.0;
                *s = (re, im);
                in_re = re;
                in_im = im;
            }
            out[n] = 2.0 * state[3].0;
        }
    }
}

/// Extracts root-compressed gammatone filterbank features.
///
/// Frame t covers samples [t*hop, t*hop + window); the number of frames is
/// floor((N - W)/H) + 1. Frame values are (mean squared bandpass sample)
/// raised to 1/root.
pub fn gfb_extract(audio: &AudioBuffer, cfg: &GfbConfig) -> Result<FeatureMatrix> {
    cfg.validate(SAMPLE_RATE)?;
    if audio.sample_rate != SAMPLE_RATE {
        return Err(Error::input(format!(
            "audio {:?} has sample rate {}, expected {}",
            audio.utterance_id, audio.sample_rate, SAMPLE_RATE
        )));
    }
    let w = cfg.window_samples(SAMPLE_RATE);
    let h = cfg.hop_samples(SAMPLE_RATE);
    let n = audio.samples.len();
    if n < w {
        return Err(Error::input(format!(
            "audio {:?} is too short: {} samples, analysis window needs {}",
            audio.utterance_id, n, w
        )));
    }
    let num_frames = (n - w) / h + 1;
    let centers = erb_centers(cfg)?;
    let inv_root = 1.0 / cfg.root as f64;

    let mut frames = Array2::<f32>::zeros((num_frames, cfg.num_filters));
    let mut bandpass = vec![0.0f64; n];
    let mut cumsq = vec![0.0f64; n + 1];
    for (c, &fc) in centers.iter().enumerate() {
        GammatoneChannel::new(fc, SAMPLE_RATE).run(&audio.samples, &mut bandpass);
        let mut acc = 0.0f64;
        for (i, &v) in bandpass.iter().enumerate() {
            acc += v * v;
            cumsq[i + 1] = acc;
        }
        for t in 0..num_frames {
            let start = t * h;
            let power = (cumsq[start + w] - cumsq[start]) / w as f64;
            frames[[t, c]] = power.max(0.0).powf(inv_root) as f32;
        }
    }
    Ok(FeatureMatrix {
        utterance_id: audio.utterance_id.clone(),
        frames,
        frame_period: cfg.hop,
    })
}

/// Splices each frame with `left` and `right` neighbors, replicating the
/// first and last frames past the edges. Output is T x ((left+1+right)*D).
pub fn stack_context(features: &FeatureMatrix, left: usize, right: usize) -> Array2<f32> {
    let t = features.num_frames();
    let d = features.dim();
    let width = left + 1 + right;
    let mut out = Array2::<f32>::zeros((t, width * d));
    for row in 0..t {
        for (slot, offset) in (-(left as isize)..=(right as isize)).enumerate() {
            let src = (row as isize + offset).clamp(0, t as isize - 1) as usize;
            out.row_mut(row)
                .slice_mut(ndarray::s![slot * d..(slot + 1) * d])
                .assign(&features.frames.row(src));
        }
    }
    out
}
