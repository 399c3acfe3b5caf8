//! Synthetic acoustic-mismatch task.
//!
//! Each class is a pair of two-pole resonators excited by white noise, so
//! classes are spectrally distinct but share a common texture. Utterances
//! concatenate variable-length segments, each with a frame-accurate label
//! track. Mismatched splits pass the clean signal through a synthetic room
//! impulse response, truncate back to the clean length (keeping labels
//! aligned), then add noise at an exact signal-to-noise ratio.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::corpus::{wav, Manifest, ManifestEntry};
use crate::error::{Error, Result};
use crate::features::{AudioBuffer, GfbConfig, SAMPLE_RATE};
use crate::ioutil::{self, derive_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseColor {
    White,
    Pink,
}

/// Adds noise at an exact SNR: the noise is scaled by its own measured
/// power, so the realized ratio matches `snr_db` up to float rounding.
pub fn add_noise(audio: &AudioBuffer, snr_db: f64, seed: u64) -> Result<AudioBuffer> {
    add_noise_colored(audio, snr_db, seed, NoiseColor::White)
}

pub fn add_noise_colored(
    audio: &AudioBuffer,
    snr_db: f64,
    seed: u64,
    color: NoiseColor,
) -> Result<AudioBuffer> {
    if !snr_db.is_finite() {
        return Err(Error::input(format!("snr_db must be finite, got {snr_db}")));
    }
    let n = audio.samples.len();
    let signal_power = audio
        .samples
        .iter()
        .map(|&s| (s as f64) * (s as f64))
        .sum::<f64>()
        / n as f64;
    if signal_power == 0.0 {
        return Err(Error::input(format!(
            "cannot set an SNR on zero-power signal {:?}",
            audio.utterance_id
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noise: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    if color == NoiseColor::Pink {
        // Paul Kellet's three-stage pinking approximation.
        let mut b = [0.0f64; 7];
        for v in noise.iter_mut() {
            let w = *v;
            b[0] = 0.99886 * b[0] + w * 0.0555179;
            b[1] = 0.99332 * b[1] + w * 0.0750759;
            b[2] = 0.96900 * b[2] + w * 0.1538520;
            b[3] = 0.86650 * b[3] + w * 0.3104856;
            b[4] = 0.55000 * b[4] + w * 0.5329522;
            b[5] = -0.7616 * b[5] - w * 0.0168980;
            *v = b.iter().sum::<f64>() + w * 0.5362;
            b[6] = w * 0.115926;
        }
    }
    let noise_power = noise.iter().map(|&v| v * v).sum::<f64>() / n as f64;
    let target_power = signal_power / 10f64.powf(snr_db / 10.0);
    let scale = (target_power / noise_power).sqrt();
    let samples = audio
        .samples
        .iter()
        .zip(noise.iter())
        .map(|(&s, &v)| (s as f64 + scale * v) as f32)
        .collect();
    AudioBuffer::new(audio.utterance_id.clone(), samples, audio.sample_rate)
}

/// Exponential energy-decay envelope reaching -60 dB at t = t60.
pub fn rir_envelope(t: f64, t60: f64) -> f64 {
    (-6.908 * t / t60).exp()
}

/// Synthetic room impulse response: white noise shaped by [`rir_envelope`],
/// normalized to unit energy, length ceil(1.5 * t60 * fs). The leading tap
/// is made positive so the direct path has fixed polarity.
pub fn synthetic_rir(t60: f64, sample_rate: u32, seed: u64) -> Result<Vec<f64>> {
    if !(t60 > 0.0) || !t60.is_finite() {
        return Err(Error::input(format!(
            "t60 must be positive and finite, got {t60}"
        )));
    }
    let fs = sample_rate as f64;
    let len = (1.5 * t60 * fs).ceil().max(1.0) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut h: Vec<f64> = (0..len)
        .map(|i| {
            let g: f64 = StandardNormal.sample(&mut rng);
            g * rir_envelope(i as f64 / fs, t60)
        })
        .collect();
    let energy: f64 = h.iter().map(|&v| v * v).sum();
    let norm = energy.sqrt();
    let sign = if h[0] < 0.0 { -1.0 } else { 1.0 };
    for v in h.iter_mut() {
        *v = *v * sign / norm;
    }
    Ok(h)
}

/// Full linear convolution via FFT in f64.
fn fft_convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    let out_len = x.len() + h.len() - 1;
    let size = out_len.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let mut a: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    a.resize(size, Complex::new(0.0, 0.0));
    let mut b: Vec<Complex<f64>> = h.iter().map(|&v| Complex::new(v, 0.0)).collect();
    b.resize(size, Complex::new(0.0, 0.0));
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (av, bv) in a.iter_mut().zip(b.iter()) {
        *av *= bv;
    }
    inv.process(&mut a);
    a.truncate(out_len);
    a.into_iter().map(|c| c.re / size as f64).collect()
}

/// Convolves audio with a synthetic RIR. Output length is N + L - 1; the
/// unit-energy RIR keeps the output norm close to the input norm.
pub fn apply_reverb(audio: &AudioBuffer, t60: f64, seed: u64) -> Result<AudioBuffer> {
    let h = synthetic_rir(t60, audio.sample_rate, seed)?;
    let x: Vec<f64> = audio.samples.iter().map(|&s| s as f64).collect();
    let y = fft_convolve(&x, &h);
    AudioBuffer::new(
        audio.utterance_id.clone(),
        y.into_iter().map(|v| v as f32).collect(),
        audio.sample_rate,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticTaskConfig {
    pub num_classes: usize,
    pub train_utts: usize,
    pub cv_utts: usize,
    pub eval_matched_utts: usize,
    pub pool_utts: usize,
    pub eval_mismatched_utts: usize,
    /// Utterance duration range in seconds.
    pub min_duration: f64,
    pub max_duration: f64,
    /// Same-class segment length range in frames.
    pub min_segment_frames: usize,
    pub max_segment_frames: usize,
    /// SNR range for mismatched splits, dB.
    pub snr_db_min: f64,
    pub snr_db_max: f64,
    /// Reverberation time range for mismatched splits, seconds.
    pub t60_min: f64,
    pub t60_max: f64,
    pub seed: u64,
}

impl Default for SyntheticTaskConfig {
    fn default() -> Self {
        SyntheticTaskConfig {
            num_classes: 8,
            train_utts: 48,
            cv_utts: 12,
            eval_matched_utts: 100,
            pool_utts: 200,
            eval_mismatched_utts: 60,
            min_duration: 2.0,
            max_duration: 5.0,
            min_segment_frames: 30,
            max_segment_frames: 100,
            snr_db_min: 0.0,
            snr_db_max: 15.0,
            t60_min: 0.1,
            t60_max: 0.8,
            seed: 0,
        }
    }
}

impl SyntheticTaskConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::config(format!(
                "synth.num_classes must be at least 2, got {}",
                self.num_classes
            )));
        }
        for (name, v) in [
            ("train_utts", self.train_utts),
            ("cv_utts", self.cv_utts),
            ("eval_matched_utts", self.eval_matched_utts),
            ("pool_utts", self.pool_utts),
            ("eval_mismatched_utts", self.eval_mismatched_utts),
        ] {
            if v == 0 {
                return Err(Error::config(format!("synth.{name} must be positive")));
            }
        }
        if !(self.min_duration > 0.0) || self.max_duration < self.min_duration {
            return Err(Error::config("synth duration range is invalid".to_string()));
        }
        if self.min_segment_frames == 0 || self.max_segment_frames < self.min_segment_frames {
            return Err(Error::config("synth segment range is invalid".to_string()));
        }
        if !self.snr_db_min.is_finite() || self.snr_db_max < self.snr_db_min {
            return Err(Error::config("synth SNR range is invalid".to_string()));
        }
        if !(self.t60_min > 0.0) || self.t60_max < self.t60_min {
            return Err(Error::config("synth t60 range is invalid".to_string()));
        }
        Ok(())
    }
}

/// Spectral prototypes: two resonator center frequencies per class, drawn
/// without replacement from a log-spaced grid.
pub(crate) struct ClassBank {
    centers: Vec<[f64; 2]>,
}

pub(crate) fn class_bank(num_classes: usize, seed: u64) -> ClassBank {
    let grid_size = (2 * num_classes).max(16);
    let (lo, hi) = (300.0f64, 6000.0f64);
    let grid: Vec<f64> = (0..grid_size)
        .map(|i| lo * (hi / lo).powf(i as f64 / (grid_size - 1) as f64))
        .collect();
    let mut order: Vec<usize> = (0..grid_size).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 101, 0));
    use rand::seq::SliceRandom;
    order.shuffle(&mut rng);
    let centers = (0..num_classes)
        .map(|c| [grid[order[2 * c]], grid[order[2 * c + 1]]])
        .collect();
    ClassBank { centers }
}

/// Two-pole resonator response to an excitation, accumulated into `out`.
fn resonate(excitation: &[f64], fc: f64, out: &mut [f64]) {
    let r = 0.985f64;
    let omega = 2.0 * std::f64::consts::PI * fc / SAMPLE_RATE as f64;
    let a1 = 2.0 * r * omega.cos();
    let a2 = -r * r;
    let (mut y1, mut y2) = (0.0f64, 0.0f64);
    for (i, &x) in excitation.iter().enumerate() {
        let y = x + a1 * y1 + a2 * y2;
        y2 = y1;
        y1 = y;
        out[i] += y;
    }
}

/// Builds one clean utterance plus its frame labels. The waveform covers
/// exactly (frames-1)*hop + window samples so the label track and the
/// extracted feature frames line up one to one.
pub(crate) fn synth_utterance(
    id: &str,
    bank: &ClassBank,
    num_frames: usize,
    gfb: &GfbConfig,
    rng: &mut ChaCha8Rng,
    min_segment: usize,
    max_segment: usize,
) -> Result<(AudioBuffer, Vec<u32>)> {
    let w = gfb.window_samples(SAMPLE_RATE);
    let h = gfb.hop_samples(SAMPLE_RATE);
    let total = (num_frames - 1) * h + w;
    let mut samples = vec![0.0f32; total];
    let mut labels = Vec::with_capacity(num_frames);
    let mut at_frame = 0usize;
    while at_frame < num_frames {
        let seg = rng
            .random_range(min_segment..=max_segment)
            .min(num_frames - at_frame);
        let class = rng.random_range(0..bank.centers.len());
        let start = at_frame * h;
        let end = if at_frame + seg == num_frames {
            total
        } else {
            (at_frame + seg) * h
        };
        let excitation: Vec<f64> = (0..end - start)
            .map(|_| StandardNormal.sample(rng))
            .collect();
        let mut seg_samples = vec![0.0f64; end - start];
        for &fc in &bank.centers[class] {
            resonate(&excitation, fc, &mut seg_samples);
        }
        let rms =
            (seg_samples.iter().map(|&v| v * v).sum::<f64>() / seg_samples.len() as f64).sqrt();
        let scale = if rms > 0.0 { 0.1 / rms } else { 0.0 };
        for (dst, &v) in samples[start..end].iter_mut().zip(seg_samples.iter()) {
            *dst = (v * scale) as f32;
        }
        labels.extend(std::iter::repeat(class as u32).take(seg));
        at_frame += seg;
    }
    Ok((AudioBuffer::new(id, samples, SAMPLE_RATE)?, labels))
}

/// Manifest paths written by [`synth_corpus`].
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub train: PathBuf,
    pub cv: PathBuf,
    pub eval_matched: PathBuf,
    pub pool: PathBuf,
    pub eval_mismatched: PathBuf,
}

/// Generates the five splits of the synthetic task under `out_dir`:
/// clean train/cv/eval_matched, and reverb-plus-noise pool/eval_mismatched.
/// Every utterance derives its own RNG stream from (seed, split, index),
/// so output is byte-deterministic regardless of thread scheduling.
pub fn synth_corpus(
    cfg: &SyntheticTaskConfig,
    gfb: &GfbConfig,
    out_dir: &Path,
) -> Result<SynthOutput> {
    cfg.validate()?;
    gfb.validate(SAMPLE_RATE)?;
    let audio_dir = out_dir.join("audio");
    let label_dir = out_dir.join("labels");
    ioutil::create_dir_all(&audio_dir)?;
    ioutil::create_dir_all(&label_dir)?;
    let bank = class_bank(cfg.num_classes, cfg.seed);
    let hop = gfb.hop_samples(SAMPLE_RATE);
    let window = gfb.window_samples(SAMPLE_RATE);
    let min_frames_floor = ((window + hop - 1) / hop).max(2);

    let splits: [(&str, u64, usize, bool); 5] = [
        ("train", 1, cfg.train_utts, false),
        ("cv", 2, cfg.cv_utts, false),
        ("eval_matched", 3, cfg.eval_matched_utts, false),
        ("pool", 4, cfg.pool_utts, true),
        ("eval_mismatched", 5, cfg.eval_mismatched_utts, true),
    ];
    let mut manifests = Vec::new();
    for (split, stream, count, corrupted) in splits {
        let entries: Vec<ManifestEntry> = (0..count)
            .into_par_iter()
            .map(|i| -> Result<ManifestEntry> {
                let id = format!("{split}_{i:04}");
                let seed_u = derive_seed(cfg.seed, stream, i as u64);
                let mut rng = ChaCha8Rng::seed_from_u64(seed_u);
                let duration = rng.random_range(cfg.min_duration..=cfg.max_duration);
                let frames = ((duration / gfb.hop).round() as usize).max(min_frames_floor);
                let (clean, labels) = synth_utterance(
                    &id,
                    &bank,
                    frames,
                    gfb,
                    &mut rng,
                    cfg.min_segment_frames,
                    cfg.max_segment_frames,
                )?;
                let (audio, condition) = if corrupted {
                    let t60 = rng.random_range(cfg.t60_min..=cfg.t60_max);
                    let snr = rng.random_range(cfg.snr_db_min..=cfg.snr_db_max);
                    let mut rev = apply_reverb(&clean, t60, derive_seed(seed_u, 11, 0))?;
                    rev.samples.truncate(clean.samples.len());
                    let noisy = add_noise(&rev, snr, derive_seed(seed_u, 12, 0))?;
                    (noisy, format!("reverb+noise t60={t60:.3} snr={snr:.1}"))
                } else {
                    (clean, "clean".to_string())
                };
                wav::write_wav(&audio_dir.join(format!("{id}.wav")), &audio)?;
                super::write_labels(&label_dir.join(format!("{id}.labels")), &labels)?;
                Ok(ManifestEntry {
                    utterance_id: id.clone(),
                    audio_path: Some(format!("audio/{id}.wav")),
                    feature_path: None,
                    label_path: Some(format!("labels/{id}.labels")),
                    condition,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mpath = out_dir.join(format!("{split}.jsonl"));
        Manifest::save(&mpath, &entries)?;
        manifests.push(mpath);
    }
    let mut it = manifests.into_iter();
    Ok(SynthOutput {
        train: it.next().expect("five splits"),
        cv: it.next().expect("five splits"),
        eval_matched: it.next().expect("five splits"),
        pool: it.next().expect("five splits"),
        eval_mismatched: it.next().expect("five splits"),
    })
}
