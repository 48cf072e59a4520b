//! PCM WAV recordings and the per-directory sidecar index.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::adsb::Icao;
use crate::trigger::{make_filename, RecordingEvent, SampleClass};

pub const SAMPLE_RATE_HZ: u32 = 22_050;
pub const CHANNELS: u16 = 1;
pub const BITS_PER_SAMPLE: u16 = 16;
pub const HEADER_BYTES: usize = 44;
/// Largest block pulled from a source at once.
pub const BLOCK_SAMPLES: usize = 4096;
pub const SIDECAR_FILE: &str = "recordings.csv";

#[derive(Debug, thiserror::Error)]
pub enum CaptureError {
    #[error("audio source ended after {got} of {expected} samples")]
    SourceUnderrun { expected: usize, got: usize },
    #[error("I/O failure: {0}")]
    IoFailure(#[from] std::io::Error),
    #[error("not a RIFF/WAVE file")]
    NotRiff,
    #[error("unsupported WAV format: {0}")]
    UnsupportedFormat(String),
    #[error("bad trim range [{start_s}, {end_s}) for a {duration_s} s clip")]
    BadRange { start_s: f64, end_s: f64, duration_s: f64 },
    #[error("sidecar CSV: {0}")]
    Csv(#[from] csv::Error),
}

/// Mono 16-bit audio at [`SAMPLE_RATE_HZ`].
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AudioClip {
    pub samples: Vec<i16>,
}

impl AudioClip {
    pub fn new(samples: Vec<i16>) -> Self {
        AudioClip { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / SAMPLE_RATE_HZ as f64
    }
}

pub fn seconds_to_samples(s: f64) -> usize {
    (s * SAMPLE_RATE_HZ as f64).round() as usize
}

pub fn encode_wav(clip: &AudioClip) -> Vec<u8> {
    let data_len = (clip.samples.len() * 2) as u32;
    let block_align = CHANNELS * BITS_PER_SAMPLE / 8;
    let mut out = Vec::with_capacity(HEADER_BYTES + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&CHANNELS.to_le_bytes());
    out.extend_from_slice(&SAMPLE_RATE_HZ.to_le_bytes());
    out.extend_from_slice(&(SAMPLE_RATE_HZ * block_align as u32).to_le_bytes());
    out.extend_from_slice(&block_align.to_le_bytes());
    out.extend_from_slice(&BITS_PER_SAMPLE.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for s in &clip.samples {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out
}

fn u16_at(b: &[u8], i: usize) -> u16 {
    u16::from_le_bytes([b[i], b[i + 1]])
}

fn u32_at(b: &[u8], i: usize) -> u32 {
    u32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]])
}

/// Parses a RIFF/WAVE byte buffer. Chunks other than `fmt ` and `data` are
/// skipped.
pub fn decode_wav(bytes: &[u8]) -> Result<AudioClip, CaptureError> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(CaptureError::NotRiff);
    }
    let mut pos = 12;
    let mut fmt_ok = false;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body = pos + 8;
        let end = body.saturating_add(size);
        match id {
            b"fmt " => {
                if size < 16 || end > bytes.len() {
                    return Err(CaptureError::UnsupportedFormat("truncated fmt chunk".into()));
                }
                let (tag, ch, rate, bits) = (
                    u16_at(bytes, body),
                    u16_at(bytes, body + 2),
                    u32_at(bytes, body + 4),
                    u16_at(bytes, body + 14),
                );
                if tag != 1 || ch != CHANNELS || rate != SAMPLE_RATE_HZ || bits != BITS_PER_SAMPLE {
                    return Err(CaptureError::UnsupportedFormat(format!(
                        "format {tag}, {ch} channel(s), {rate} Hz, {bits} bit"
                    )));
                }
                fmt_ok = true;
            }
            b"data" => {
                if !fmt_ok {
                    return Err(CaptureError::UnsupportedFormat("data before fmt".into()));
                }
                let end = end.min(bytes.len());
                let samples = bytes[body..end]
                    .chunks_exact(2)
                    .map(|c| i16::from_le_bytes([c[0], c[1]]))
                    .collect();
                return Ok(AudioClip { samples });
            }
            _ => {}
        }
        pos = end + (size & 1);
    }
    Err(CaptureError::UnsupportedFormat("no data chunk".into()))
}

pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<(), CaptureError> {
    fs::write(path, encode_wav(clip))?;
    Ok(())
}

pub fn read_wav(path: &Path) -> Result<AudioClip, CaptureError> {
    decode_wav(&fs::read(path)?)
}

/// Samples in `[round(start_s·fs), round(end_s·fs))`.
pub fn trim(clip: &AudioClip, start_s: f64, end_s: f64) -> Result<AudioClip, CaptureError> {
    let duration_s = clip.duration_s();
    let bad = || CaptureError::BadRange {
        start_s,
        end_s,
        duration_s,
    };
    if !(start_s >= 0.0 && start_s < end_s) {
        return Err(bad());
    }
    let (a, b) = (seconds_to_samples(start_s), seconds_to_samples(end_s));
    if b > clip.len() {
        return Err(bad());
    }
    Ok(AudioClip::new(clip.samples[a..b].to_vec()))
}

/// Pull-based audio input. `pull` returns exactly `n` samples, or `None`
/// once the source cannot supply that many.
pub trait AudioSource {
    fn pull(&mut self, n: usize) -> Option<Vec<i16>>;
}

/// Replays a fixed buffer.
pub struct BufferSource {
    samples: Vec<i16>,
    pos: usize,
}

impl BufferSource {
    pub fn new(samples: Vec<i16>) -> Self {
        BufferSource { samples, pos: 0 }
    }
}

impl AudioSource for BufferSource {
    fn pull(&mut self, n: usize) -> Option<Vec<i16>> {
        let end = self.pos.checked_add(n)?;
        if end > self.samples.len() {
            self.pos = self.samples.len();
            return None;
        }
        let out = self.samples[self.pos..end].to_vec();
        self.pos = end;
        Some(out)
    }
}

/// Sum of sinusoids plus Gaussian noise, deterministic for a given seed.
pub struct SyntheticSource {
    tones: Vec<(f64, f64)>,
    noise: Normal<f64>,
    rng: ChaCha8Rng,
    t: u64,
    remaining: Option<usize>,
}

impl SyntheticSource {
    /// `tones` are `(frequency_hz, amplitude)` pairs; amplitudes in sample units.
    pub fn new(tones: Vec<(f64, f64)>, noise_std: f64, seed: u64) -> Self {
        SyntheticSource {
            tones,
            noise: Normal::new(0.0, noise_std.max(0.0)).expect("finite std"),
            rng: ChaCha8Rng::seed_from_u64(seed),
            t: 0,
            remaining: None,
        }
    }

    pub fn sine(freq_hz: f64, amplitude: f64, seed: u64) -> Self {
        Self::new(vec![(freq_hz, amplitude)], 0.0, seed)
    }

    pub fn noise(std: f64, seed: u64) -> Self {
        Self::new(Vec::new(), std, seed)
    }

    /// Engine-like harmonic stack over background noise, with a random
    /// fundamental between 80 and 160 Hz.
    pub fn aircraft_like(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA1C0);
        let f0 = rng.random_range(80.0..160.0);
        let tones = (1..=6).map(|k| (f0 * k as f64, 3000.0 / k as f64)).collect();
        Self::new(tones, 400.0, seed)
    }

    pub fn background(seed: u64) -> Self {
        Self::noise(400.0, seed)
    }

    /// Ends the stream after `n` more samples.
    pub fn limited(mut self, n: usize) -> Self {
        self.remaining = Some(n);
        self
    }
}

impl AudioSource for SyntheticSource {
    fn pull(&mut self, n: usize) -> Option<Vec<i16>> {
        if let Some(rem) = self.remaining.as_mut() {
            if *rem < n {
                *rem = 0;
                return None;
            }
            *rem -= n;
        }
        let fs = SAMPLE_RATE_HZ as f64;
        let out = (0..n)
            .map(|_| {
                let t = self.t as f64 / fs;
                self.t += 1;
                let tone: f64 = self
                    .tones
                    .iter()
                    .map(|&(f, a)| a * (std::f64::consts::TAU * f * t).sin())
                    .sum();
                let v = tone + self.noise.sample(&mut self.rng);
                v.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
            })
            .collect();
        Some(out)
    }
}

/// One row of `recordings.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarRow {
    pub filename: String,
    pub class: SampleClass,
    pub hex_id: Icao,
    pub altitude_ft: Option<i32>,
    pub date: String,
    pub time: String,
    pub location_id: u32,
    pub mic_id: u32,
    pub n_samples: usize,
}

impl SidecarRow {
    pub fn from_event(event: &RecordingEvent, n_samples: usize) -> Self {
        SidecarRow {
            filename: make_filename(event),
            class: event.class,
            hex_id: event.hex_id,
            altitude_ft: event.altitude_ft,
            date: event.started_at.format("%Y-%m-%d").to_string(),
            time: event.started_at.format("%H:%M:%S").to_string(),
            location_id: event.location_id,
            mic_id: event.mic_id,
            n_samples,
        }
    }
}

pub fn append_sidecar(out_dir: &Path, row: &SidecarRow) -> Result<(), CaptureError> {
    let path = out_dir.join(SIDECAR_FILE);
    let needs_header = fs::metadata(&path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new().create(true).append(true).open(&path)?;
    let mut w = csv::WriterBuilder::new().has_headers(needs_header).from_writer(file);
    w.serialize(row)?;
    w.flush()?;
    Ok(())
}

pub fn read_sidecar(out_dir: &Path) -> Result<Vec<SidecarRow>, CaptureError> {
    let path = out_dir.join(SIDECAR_FILE);
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

/// Rewrites `recordings.csv` with exactly `rows`.
pub fn write_sidecar(out_dir: &Path, rows: &[SidecarRow]) -> Result<(), CaptureError> {
    let mut w = csv::Writer::from_path(out_dir.join(SIDECAR_FILE))?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptureRecord {
    pub path: PathBuf,
    pub row: SidecarRow,
}

/// Pulls `duration_s` of audio and writes it with its sidecar row. An
/// underrun writes nothing.
pub fn record(
    source: &mut dyn AudioSource,
    duration_s: f64,
    event: &RecordingEvent,
    out_dir: &Path,
) -> Result<CaptureRecord, CaptureError> {
    let expected = seconds_to_samples(duration_s);
    let mut samples = Vec::with_capacity(expected);
    while samples.len() < expected {
        let n = (expected - samples.len()).min(BLOCK_SAMPLES);
        match source.pull(n) {
            Some(block) => samples.extend_from_slice(&block),
            None => {
                return Err(CaptureError::SourceUnderrun {
                    expected,
                    got: samples.len(),
                })
            }
        }
    }
    fs::create_dir_all(out_dir)?;
    let row = SidecarRow::from_event(event, samples.len());
    let path = out_dir.join(&row.filename);
    let mut f = fs::File::create(&path)?;
    f.write_all(&encode_wav(&AudioClip::new(samples)))?;
    f.sync_all()?;
    append_sidecar(out_dir, &row)?;
    Ok(CaptureRecord { path, row })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn event(class: SampleClass) -> RecordingEvent {
        let aircraft = class == SampleClass::Aircraft;
        RecordingEvent {
            class,
            hex_id: if aircraft { "7C7CD0".parse().unwrap() } else { Icao::SILENCE },
            altitude_ft: aircraft.then_some(1500),
            started_at: NaiveDate::from_ymd_opt(2023, 5, 9).unwrap().and_hms_opt(12, 42, 55).unwrap(),
            location_id: 2,
            mic_id: 1,
        }
    }

    #[test]
    fn header_is_canonical() {
        let bytes = encode_wav(&AudioClip::new(vec![1, -1, 3]));
        assert_eq!(bytes.len(), 44 + 6);
        assert_eq!(&bytes[0..4], b"RIFF");
        assert_eq!(u32_at(&bytes, 4), 36 + 6);
        assert_eq!(&bytes[8..16], b"WAVEfmt ");
        assert_eq!(u32_at(&bytes, 16), 16);
        assert_eq!(u16_at(&bytes, 20), 1);
        assert_eq!(u16_at(&bytes, 22), 1);
        assert_eq!(u32_at(&bytes, 24), 22050);
        assert_eq!(u32_at(&bytes, 28), 44100);
        assert_eq!(u16_at(&bytes, 32), 2);
        assert_eq!(u16_at(&bytes, 34), 16);
        assert_eq!(&bytes[36..40], b"data");
        assert_eq!(u32_at(&bytes, 40), 6);
    }

    #[test]
    fn decode_rejects_other_formats() {
        assert!(matches!(decode_wav(&[]), Err(CaptureError::NotRiff)));
        let mut stereo = encode_wav(&AudioClip::new(vec![0; 4]));
        stereo[22] = 2;
        stereo[24..28].copy_from_slice(&44100u32.to_le_bytes());
        assert!(matches!(decode_wav(&stereo), Err(CaptureError::UnsupportedFormat(_))));
    }

    #[test]
    fn decode_skips_unknown_chunks() {
        let plain = encode_wav(&AudioClip::new(vec![7, 8, 9]));
        let mut with_list = plain[..36].to_vec();
        with_list.extend_from_slice(b"LIST");
        with_list.extend_from_slice(&3u32.to_le_bytes());
        with_list.extend_from_slice(&[1, 2, 3, 0]);
        with_list.extend_from_slice(&plain[36..]);
        assert_eq!(decode_wav(&with_list).unwrap().samples, vec![7, 8, 9]);
    }

    #[test]
    fn record_ten_and_sixty_seconds() {
        let dir = tempfile::tempdir().unwrap();
        let rec = record(
            &mut SyntheticSource::sine(440.0, 8000.0, 0),
            10.0,
            &event(SampleClass::Silence),
            dir.path(),
        )
        .unwrap();
        assert_eq!(rec.row.n_samples, 220_500);
        let bytes = fs::read(&rec.path).unwrap();
        assert_eq!(u32_at(&bytes, 4) as usize, bytes.len() - 8);
        assert_eq!(u32_at(&bytes, 40) as usize, 220_500 * 2);
        assert_eq!(read_wav(&rec.path).unwrap().len(), 220_500);

        let rec = record(
            &mut SyntheticSource::aircraft_like(3),
            60.0,
            &event(SampleClass::Aircraft),
            dir.path(),
        )
        .unwrap();
        assert_eq!(read_wav(&rec.path).unwrap().len(), 1_323_000);
        assert_eq!(
            rec.path.file_name().unwrap().to_str().unwrap(),
            "7C7CD0_2023-05-09_12-42-55_2_1.wav"
        );

        let rows = read_sidecar(dir.path()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].altitude_ft, Some(1500));
        assert_eq!(rows[0].altitude_ft, None);
        assert_eq!(rows[1].date, "2023-05-09");
        assert_eq!(rows[1].time, "12:42:55");
    }

    #[test]
    fn write_read_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let samples: Vec<i16> = (0..5000).map(|i| ((i * 7919) % 65536 - 32768) as i16).collect();
        let path = dir.path().join("x.wav");
        write_wav(&path, &AudioClip::new(samples.clone())).unwrap();
        assert_eq!(read_wav(&path).unwrap().samples, samples);
    }

    #[test]
    fn underrun_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let err = record(
            &mut SyntheticSource::noise(100.0, 1).limited(10_000),
            10.0,
            &event(SampleClass::Silence),
            dir.path(),
        )
        .unwrap_err();
        assert!(matches!(err, CaptureError::SourceUnderrun { expected: 220_500, got: 8192 }));
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn trim_ranges() {
        let clip = AudioClip::new((0..220_500).map(|i| (i % 1000) as i16).collect());
        assert_eq!(trim(&clip, 0.0, 10.0).unwrap(), clip);
        let t = trim(&clip, 2.0, 7.0).unwrap();
        assert_eq!(t.len(), 110_250);
        assert_eq!(trim(&t, 0.0, 5.0).unwrap(), t);
        assert!(trim(&clip, 5.0, 5.0).is_err());
        assert!(trim(&clip, -1.0, 5.0).is_err());
        assert!(trim(&clip, 0.0, 10.5).is_err());
    }

    #[test]
    fn synthetic_sources_are_deterministic() {
        let a = SyntheticSource::aircraft_like(9).pull(1000).unwrap();
        let b = SyntheticSource::aircraft_like(9).pull(1000).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, SyntheticSource::aircraft_like(10).pull(1000).unwrap());
    }
}
