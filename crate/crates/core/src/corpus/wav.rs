//! Minimal strict WAV reader/writer for RIFF PCM, 16-bit, mono, 16 kHz.

use std::path::Path;

use crate::error::{Error, Result};
use crate::features::{AudioBuffer, SAMPLE_RATE};
use crate::ioutil;

fn u16_at(data: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([data[at], data[at + 1]])
}

fn u32_at(data: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([data[at], data[at + 1], data[at + 2], data[at + 3]])
}

/// Reads a WAV file. Anything other than PCM 16-bit mono 16 kHz is an
/// input error. The utterance id is the file stem.
pub fn read_wav(path: &Path) -> Result<AudioBuffer> {
    let data = ioutil::read_bytes(path)?;
    let fail = |msg: String| Error::input(format!("{}: {msg}", path.display()));
    if data.len() < 12 || &data[0..4] != b"RIFF" || &data[8..12] != b"WAVE" {
        return Err(fail("not a RIFF/WAVE file".into()));
    }
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut pcm: Option<&[u8]> = None;
    let mut at = 12usize;
    while at + 8 <= data.len() {
        let id = &data[at..at + 4];
        let size = u32_at(&data, at + 4) as usize;
        let body = at + 8;
        if body + size > data.len() {
            return Err(fail(format!(
                "truncated chunk {:?} (declares {size} bytes past end of file)",
                String::from_utf8_lossy(id)
            )));
        }
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(fail("fmt chunk too small".into()));
                }
                fmt = Some((
                    u16_at(&data, body),
                    u16_at(&data, body + 2),
                    u32_at(&data, body + 4),
                    u16_at(&data, body + 14),
                ));
            }
            b"data" => pcm = Some(&data[body..body + size]),
            _ => {}
        }
        at = body + size + (size & 1);
    }
    let (format, channels, rate, bits) = fmt.ok_or_else(|| fail("missing fmt chunk".into()))?;
    if format != 1 {
        return Err(fail(format!("audio format {format} is not PCM (1)")));
    }
    if channels != 1 {
        return Err(fail(format!(
            "expected mono audio, found {channels} channels"
        )));
    }
    if rate != SAMPLE_RATE {
        return Err(fail(format!(
            "expected sample rate {SAMPLE_RATE}, found {rate}"
        )));
    }
    if bits != 16 {
        return Err(fail(format!("expected 16 bits per sample, found {bits}")));
    }
    let pcm = pcm.ok_or_else(|| fail("missing data chunk".into()))?;
    if pcm.len() % 2 != 0 {
        return Err(fail("data chunk has an odd byte count".into()));
    }
    let samples: Vec<f32> = pcm
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f32 / 32768.0)
        .collect();
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    AudioBuffer::new(stem, samples, SAMPLE_RATE)
}

/// Writes PCM 16-bit mono 16 kHz. Samples are scaled by 32768, rounded
/// to nearest, and clamped to the i16 range.
pub fn write_wav(path: &Path, audio: &AudioBuffer) -> Result<()> {
    if audio.sample_rate != SAMPLE_RATE {
        return Err(Error::input(format!(
            "audio {:?} has sample rate {}, writer only emits {}",
            audio.utterance_id, audio.sample_rate, SAMPLE_RATE
        )));
    }
    let data_len = audio.samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&SAMPLE_RATE.to_le_bytes());
    out.extend_from_slice(&(SAMPLE_RATE * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in &audio.samples {
        let q = (s as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    ioutil::write_bytes(path, &out)
}
