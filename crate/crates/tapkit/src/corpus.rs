//! Corpus synthesis and manifest management.
//!
//! A manifest is a JSON-lines file whose first line declares the corpus
//! root and format version; each following line is one mixture entry with
//! all paths relative to that root. Every random choice made during
//! synthesis is recorded in the manifest, so a re-run with the same spec
//! reproduces the audio bit-exactly.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TapError};
use crate::signal::{apply_channel, load_wav, mix_at_snr, save_wav, ChannelProfile, Waveform};

pub const MANIFEST_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub clean_path: String,
    pub noise_path: String,
    pub snr_db: f64,
    pub noise_offset_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel_profile: Option<String>,
    pub out_noisy_path: String,
    pub out_clean_path: String,
    pub split: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestHeader {
    corpus_root: String,
    format_version: u32,
}

#[derive(Debug, Clone)]
pub struct MixtureManifest {
    pub corpus_root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl MixtureManifest {
    pub fn validate(&self) -> Result<()> {
        let mut ids = std::collections::BTreeSet::new();
        for e in &self.entries {
            if !ids.insert(&e.id) {
                return Err(TapError::InvalidInput(format!("duplicate id '{}'", e.id)));
            }
            if !e.snr_db.is_finite() {
                return Err(TapError::NonFinite(format!("snr_db for '{}'", e.id)));
            }
            if e.split != "train" && e.split != "test" {
                return Err(TapError::InvalidInput(format!(
                    "entry '{}': split '{}' is not 'train' or 'test'",
                    e.id, e.split
                )));
            }
            for p in [&e.out_noisy_path, &e.out_clean_path] {
                if Path::new(p).is_absolute() {
                    return Err(TapError::InvalidInput(format!(
                        "entry '{}': output path '{}' is not relative to the corpus root",
                        e.id, p
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn noisy_path(&self, e: &ManifestEntry) -> PathBuf {
        self.corpus_root.join(&e.out_noisy_path)
    }

    pub fn clean_path(&self, e: &ManifestEntry) -> PathBuf {
        self.corpus_root.join(&e.out_clean_path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        let header = ManifestHeader {
            corpus_root: self.corpus_root.to_string_lossy().into_owned(),
            format_version: MANIFEST_FORMAT_VERSION,
        };
        serde_json::to_writer(&mut f, &header)?;
        f.write_all(b"\n")?;
        for e in &self.entries {
            serde_json::to_writer(&mut f, e)?;
            f.write_all(b"\n")?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<MixtureManifest> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut lines = f.lines();
        let first = lines
            .next()
            .ok_or_else(|| TapError::InvalidInput("empty manifest".into()))??;
        let header: ManifestHeader = serde_json::from_str(&first)?;
        if header.format_version != MANIFEST_FORMAT_VERSION {
            return Err(TapError::InvalidInput(format!(
                "manifest format version {} (this build reads {})",
                header.format_version, MANIFEST_FORMAT_VERSION
            )));
        }
        let mut entries = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push(serde_json::from_str(&line)?);
        }
        let m = MixtureManifest { corpus_root: PathBuf::from(header.corpus_root), entries };
        m.validate()?;
        Ok(m)
    }
}

#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub count: usize,
    pub duration_s: f64,
    pub snr_range_db: (f64, f64),
    pub seed: u64,
    pub channel: Option<String>,
}

impl Default for SynthSpec {
    /// Desk-scale default: 40 four-second pairs over 0..20 dB.
    fn default() -> Self {
        SynthSpec {
            count: 40,
            duration_s: 4.0,
            snr_range_db: (0.0, 20.0),
            seed: 0,
            channel: None,
        }
    }
}

/// Sorted WAV listing; sort order makes file selection reproducible
/// across filesystems.
fn list_wavs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let p = entry?.path();
        if p.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
            out.push(p);
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(TapError::InvalidInput(format!("no WAV files in {}", dir.display())));
    }
    Ok(out)
}

/// Synthesize `spec.count` clean/noisy pairs under `out_root`.
///
/// Clean and noise source files, segment offsets, and per-pair SNR are all
/// drawn from one stream seeded by `spec.seed`. A clean file too short for
/// the requested duration falls through to the next one in sorted order;
/// only when no source fits does synthesis fail. Noise of any length works
/// because mixing tiles or crops it from a seeded offset.
pub fn synth_corpus(
    clean_dir: &Path,
    noise_dir: &Path,
    out_root: &Path,
    spec: &SynthSpec,
) -> Result<MixtureManifest> {
    if spec.duration_s < 1.0 {
        return Err(TapError::InvalidInput(format!(
            "duration {} s is below the 1 s minimum",
            spec.duration_s
        )));
    }
    if spec.count == 0 {
        return Err(TapError::InvalidInput("count must be at least 1".into()));
    }
    let (lo, hi) = spec.snr_range_db;
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(TapError::InvalidInput(format!("bad SNR range [{lo}, {hi}]")));
    }
    let profile = match &spec.channel {
        Some(name) => Some((name.clone(), ChannelProfile::by_name(name)?)),
        None => None,
    };
    let clean_files = list_wavs(clean_dir)?;
    let noise_files = list_wavs(noise_dir)?;
    std::fs::create_dir_all(out_root.join("wavs"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut entries = Vec::with_capacity(spec.count);
    for i in 0..spec.count {
        let id = format!("mix-{i:04}");
        let noise_path = &noise_files[rng.gen_range(0..noise_files.len())];
        let snr_db = rng.gen_range(lo..=hi);
        let noise_offset_seed: u64 = rng.gen();

        // Pick a clean source, skipping forward past files that are too
        // short for the requested duration.
        let start_idx = rng.gen_range(0..clean_files.len());
        let mut picked: Option<(&PathBuf, Waveform, usize)> = None;
        for k in 0..clean_files.len() {
            let path = &clean_files[(start_idx + k) % clean_files.len()];
            let w = load_wav(path)?;
            let need = (spec.duration_s * w.sample_rate_hz as f64).round() as usize;
            if w.len() >= need {
                picked = Some((path, w, need));
                break;
            }
        }
        let (clean_path, clean_full, need) = picked.ok_or_else(|| {
            TapError::InvalidInput(format!(
                "no clean source is at least {} s long",
                spec.duration_s
            ))
        })?;
        let offset = rng.gen_range(0..=(clean_full.len() - need));
        let clean_seg = Waveform::new(
            clean_full.samples[offset..offset + need].to_vec(),
            clean_full.sample_rate_hz,
        );

        let noise = load_wav(noise_path)?;
        let mix = mix_at_snr(&clean_seg, &noise, snr_db, noise_offset_seed)?;
        let noisy = match &profile {
            Some((_, p)) => apply_channel(&mix.noisy, p, noise_offset_seed)?,
            None => mix.noisy,
        };

        let out_clean = format!("wavs/{id}.clean.wav");
        let out_noisy = format!("wavs/{id}.noisy.wav");
        save_wav(&mix.clean, out_root.join(&out_clean))?;
        save_wav(&noisy, out_root.join(&out_noisy))?;

        entries.push(ManifestEntry {
            id,
            clean_path: clean_path.to_string_lossy().into_owned(),
            noise_path: noise_path.to_string_lossy().into_owned(),
            snr_db,
            noise_offset_seed,
            channel_profile: profile.as_ref().map(|(n, _)| n.clone()),
            out_noisy_path: out_noisy,
            out_clean_path: out_clean,
            split: "train".to_string(),
        });
    }
    let manifest = MixtureManifest { corpus_root: out_root.to_path_buf(), entries };
    manifest.validate()?;
    Ok(manifest)
}

/// Relabel entries into train/test with a seeded shuffle. The test set
/// gets floor(n * fraction) entries, never fewer than one; entry order in
/// the manifest is unchanged, only labels move.
pub fn split_manifest(
    m: &MixtureManifest,
    test_fraction: f64,
    seed: u64,
) -> Result<MixtureManifest> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(TapError::InvalidInput(format!(
            "test fraction {test_fraction} outside (0, 1)"
        )));
    }
    let n = m.entries.len();
    if n < 2 {
        return Err(TapError::InvalidInput(format!(
            "cannot split {n} entries into train and test"
        )));
    }
    let n_test = usize::max(1, (n as f64 * test_fraction).floor() as usize);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let mut out = m.clone();
    for (rank, &idx) in order.iter().enumerate() {
        out.entries[idx].split =
            if rank < n_test { "test".to_string() } else { "train".to_string() };
    }
    out.validate()?;
    Ok(out)
}
