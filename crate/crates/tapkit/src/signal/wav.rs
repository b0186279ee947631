//! RIFF/WAVE PCM 16-bit reader and writer.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::Waveform;
use crate::error::{Result, TapError};

#[derive(Clone, Copy, Debug, Default)]
pub struct WavLoadOptions {
    /// Average stereo channels down to mono instead of rejecting them.
    pub downmix_stereo: bool,
}

/// Loads a 16-bit PCM WAV file. Stereo input is rejected; use
/// [`load_wav_with`] to downmix.
pub fn load_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    load_wav_with(path, WavLoadOptions::default())
}

pub fn load_wav_with(path: impl AsRef<Path>, opts: WavLoadOptions) -> Result<Waveform> {
    let bytes = fs::read(path.as_ref())?;
    parse_wav(&bytes, opts)
}

fn parse_wav(bytes: &[u8], opts: WavLoadOptions) -> Result<Waveform> {
    let malformed = |msg: &str| TapError::MalformedWav(msg.to_string());
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(malformed("missing RIFF/WAVE header"));
    }

    let mut pos = 12usize;
    let mut fmt: Option<(u16, u16, u32, u16)> = None; // (format, channels, rate, bits)
    let mut data: Option<&[u8]> = None;

    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_start = pos + 8;
        let body_end = body_start.checked_add(size).ok_or_else(|| malformed("chunk size overflow"))?;
        if body_end > bytes.len() {
            return Err(malformed("truncated chunk"));
        }
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(malformed("fmt chunk too small"));
                }
                let format = u16::from_le_bytes(body[0..2].try_into().unwrap());
                let channels = u16::from_le_bytes(body[2..4].try_into().unwrap());
                let rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
                let bits = u16::from_le_bytes(body[14..16].try_into().unwrap());
                fmt = Some((format, channels, rate, bits));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // Chunks are word-aligned.
        pos = body_end + (size & 1);
    }

    let (format, channels, rate, bits) = fmt.ok_or_else(|| malformed("missing fmt chunk"))?;
    let data = data.ok_or_else(|| malformed("missing data chunk"))?;

    if format != 1 {
        return Err(TapError::UnsupportedWav(format!("codec tag {format}, only PCM supported")));
    }
    if bits != 16 {
        return Err(TapError::UnsupportedWav(format!("{bits}-bit samples, only 16-bit supported")));
    }
    if rate == 0 {
        return Err(malformed("zero sample rate"));
    }
    if data.is_empty() {
        return Err(malformed("zero-length data chunk"));
    }
    let frame_bytes = 2 * channels as usize;
    if data.len() % frame_bytes != 0 {
        return Err(malformed("data chunk not a whole number of frames"));
    }

    let n_frames = data.len() / frame_bytes;
    let mut samples = Vec::with_capacity(n_frames);
    match channels {
        1 => {
            for i in 0..n_frames {
                let v = i16::from_le_bytes(data[2 * i..2 * i + 2].try_into().unwrap());
                samples.push(v as f64 / 32768.0);
            }
        }
        2 if opts.downmix_stereo => {
            for i in 0..n_frames {
                let l = i16::from_le_bytes(data[4 * i..4 * i + 2].try_into().unwrap()) as f64;
                let r = i16::from_le_bytes(data[4 * i + 2..4 * i + 4].try_into().unwrap()) as f64;
                samples.push((l + r) / 2.0 / 32768.0);
            }
        }
        2 => {
            return Err(TapError::UnsupportedWav(
                "stereo input (enable downmix to accept)".into(),
            ))
        }
        n => return Err(TapError::UnsupportedWav(format!("{n} channels"))),
    }

    Ok(Waveform::new(samples, rate))
}

/// Writes a PCM 16-bit mono WAV file. Samples outside [-1, 1] are
/// hard-clipped; the number of clipped samples is returned.
pub fn save_wav(w: &Waveform, path: impl AsRef<Path>) -> Result<usize> {
    w.validate()?;
    let mut clipped = 0usize;
    let mut pcm: Vec<u8> = Vec::with_capacity(2 * w.samples.len());
    for &s in &w.samples {
        let mut v = s;
        if v > 1.0 {
            v = 1.0;
            clipped += 1;
        } else if v < -1.0 {
            v = -1.0;
            clipped += 1;
        }
        let q = (v * 32768.0).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
        pcm.extend_from_slice(&q.to_le_bytes());
    }

    let data_len = pcm.len() as u32;
    let mut out = fs::File::create(path.as_ref())?;
    out.write_all(b"RIFF")?;
    out.write_all(&(36 + data_len).to_le_bytes())?;
    out.write_all(b"WAVE")?;
    out.write_all(b"fmt ")?;
    out.write_all(&16u32.to_le_bytes())?;
    out.write_all(&1u16.to_le_bytes())?; // PCM
    out.write_all(&1u16.to_le_bytes())?; // mono
    out.write_all(&w.sample_rate_hz.to_le_bytes())?;
    out.write_all(&(w.sample_rate_hz * 2).to_le_bytes())?; // byte rate
    out.write_all(&2u16.to_le_bytes())?; // block align
    out.write_all(&16u16.to_le_bytes())?; // bits
    out.write_all(b"data")?;
    out.write_all(&data_len.to_le_bytes())?;
    out.write_all(&pcm)?;
    Ok(clipped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::SAMPLE_RATE;

    fn tmpfile(name: &str) -> std::path::PathBuf {
        let dir = tempfile::tempdir().unwrap();
        // Leak the tempdir so the path stays alive for the test body.
        let path = dir.path().join(name);
        std::mem::forget(dir);
        path
    }

    #[test]
    fn load_scales_by_32768() {
        let path = tmpfile("one.wav");
        // Hand-build a wav with a single sample of 16384.
        let w = Waveform::new(vec![0.5], SAMPLE_RATE);
        save_wav(&w, &path).unwrap();
        let got = load_wav(&path).unwrap();
        assert_eq!(got.sample_rate_hz, SAMPLE_RATE);
        assert_eq!(got.samples, vec![0.5]);
    }

    #[test]
    fn save_clips_and_counts() {
        let path = tmpfile("clip.wav");
        let clipped = save_wav(&Waveform::new(vec![2.0], SAMPLE_RATE), &path).unwrap();
        assert_eq!(clipped, 1);
        let bytes = std::fs::read(&path).unwrap();
        let v = i16::from_le_bytes(bytes[44..46].try_into().unwrap());
        assert_eq!(v, 32767);
    }

    #[test]
    fn save_zero_sample() {
        let path = tmpfile("zero.wav");
        save_wav(&Waveform::new(vec![0.0], SAMPLE_RATE), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let v = i16::from_le_bytes(bytes[44..46].try_into().unwrap());
        assert_eq!(v, 0);
    }

    #[test]
    fn round_trip_within_one_lsb() {
        let path = tmpfile("rt.wav");
        let src: Vec<f64> = (0..2000)
            .map(|i| (i as f64 * 0.7).sin() * 0.9)
            .collect();
        let w = Waveform::new(src.clone(), SAMPLE_RATE);
        assert_eq!(save_wav(&w, &path).unwrap(), 0);
        let got = load_wav(&path).unwrap();
        for (a, b) in src.iter().zip(got.samples.iter()) {
            assert!((a - b).abs() <= 1.0 / 32768.0, "{a} vs {b}");
        }
    }

    #[test]
    fn truncated_data_chunk_is_malformed() {
        let path = tmpfile("trunc.wav");
        let w = Waveform::new(vec![0.1; 100], SAMPLE_RATE);
        save_wav(&w, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 50);
        std::fs::write(&path, &bytes).unwrap();
        let err = load_wav(&path).unwrap_err();
        assert!(err.to_string().contains("malformed container"), "{err}");
    }

    #[test]
    fn stereo_requires_downmix() {
        let path = tmpfile("st.wav");
        // Minimal stereo file: two frames of (L=0.25, R=0.75).
        let mut bytes = Vec::new();
        let l = (0.25f64 * 32768.0) as i16;
        let r = (0.75f64 * 32768.0) as i16;
        let mut pcm = Vec::new();
        for _ in 0..2 {
            pcm.extend_from_slice(&l.to_le_bytes());
            pcm.extend_from_slice(&r.to_le_bytes());
        }
        bytes.extend_from_slice(b"RIFF");
        bytes.extend_from_slice(&(36 + pcm.len() as u32).to_le_bytes());
        bytes.extend_from_slice(b"WAVE");
        bytes.extend_from_slice(b"fmt ");
        bytes.extend_from_slice(&16u32.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&2u16.to_le_bytes());
        bytes.extend_from_slice(&16000u32.to_le_bytes());
        bytes.extend_from_slice(&(16000u32 * 4).to_le_bytes());
        bytes.extend_from_slice(&4u16.to_le_bytes());
        bytes.extend_from_slice(&16u16.to_le_bytes());
        bytes.extend_from_slice(b"data");
        bytes.extend_from_slice(&(pcm.len() as u32).to_le_bytes());
        bytes.extend_from_slice(&pcm);
        std::fs::write(&path, &bytes).unwrap();

        assert!(load_wav(&path).is_err());
        let got = load_wav_with(&path, WavLoadOptions { downmix_stereo: true }).unwrap();
        assert_eq!(got.samples.len(), 2);
        assert!((got.samples[0] - 0.5).abs() < 1e-4);
    }
}
