//! MFCC front end: Hann STFT → Slaney mel filterbank → log → DCT-II.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::capture::SAMPLE_RATE_HZ;
use crate::dataset::SEGMENT_SAMPLES;

pub const N_FFT: usize = 2048;
pub const HOP: usize = 512;
pub const N_BINS: usize = N_FFT / 2 + 1;
pub const N_MELS: usize = 128;
pub const N_MFCC: usize = 13;
pub const LOG_FLOOR: f64 = 1e-10;
/// Frames in one 5 s segment.
pub const N_FRAMES: usize = 1 + SEGMENT_SAMPLES / HOP;

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("empty input")]
    EmptyInput,
    #[error("bad mel band: {0}")]
    BadBand(String),
    #[error("expected {expected} samples, got {got}")]
    WrongLength { expected: usize, got: usize },
    #[error("feature cache: {0}")]
    BadCache(String),
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Index into a signal of length `n` extended by mirror reflection about its
/// end samples (the edge sample is not repeated).
fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Centered power spectrogram: frame `t` covers samples around `t · hop`,
/// with reflection beyond the ends. Returns `1 + len / hop` frames of
/// `n_fft / 2 + 1` bins.
pub fn stft_power(samples: &[f64], n_fft: usize, hop: usize) -> Result<Vec<Vec<f64>>, FeatureError> {
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n_fft);
    stft_power_with(samples, n_fft, hop, &hann(n_fft), fft.as_ref())
}

fn stft_power_with(
    samples: &[f64],
    n_fft: usize,
    hop: usize,
    window: &[f64],
    fft: &dyn Fft<f64>,
) -> Result<Vec<Vec<f64>>, FeatureError> {
    if samples.is_empty() {
        return Err(FeatureError::EmptyInput);
    }
    let n = samples.len();
    let n_frames = 1 + n / hop;
    let half = (n_fft / 2) as isize;
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut out = Vec::with_capacity(n_frames);
    for t in 0..n_frames {
        let start = (t * hop) as isize - half;
        for (j, b) in buf.iter_mut().enumerate() {
            let idx = start + j as isize;
            let x = if idx >= 0 && (idx as usize) < n {
                samples[idx as usize]
            } else {
                samples[reflect_index(idx, n)]
            };
            *b = Complex::new(x * window[j], 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        out.push(buf[..n_fft / 2 + 1].iter().map(|c| c.norm_sqr()).collect());
    }
    Ok(out)
}

pub fn hz_to_mel(hz: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = 6.4f64.ln() / 27.0;
    if hz >= MIN_LOG_HZ {
        min_log_mel + (hz / MIN_LOG_HZ).ln() / logstep
    } else {
        hz / F_SP
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = 6.4f64.ln() / 27.0;
    if mel >= min_log_mel {
        MIN_LOG_HZ * (logstep * (mel - min_log_mel)).exp()
    } else {
        F_SP * mel
    }
}

/// Triangular mel filters with area normalization, stored as
/// `(first_bin, weights)` per filter.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    pub n_bins: usize,
    pub filters: Vec<(usize, Vec<f64>)>,
}

impl MelFilterbank {
    pub fn n_mels(&self) -> usize {
        self.filters.len()
    }

    pub fn dense(&self) -> Vec<Vec<f64>> {
        self.filters
            .iter()
            .map(|(start, w)| {
                let mut row = vec![0.0; self.n_bins];
                row[*start..start + w.len()].copy_from_slice(w);
                row
            })
            .collect()
    }

    pub fn apply(&self, power: &[f64]) -> Vec<f64> {
        self.filters
            .iter()
            .map(|(start, w)| w.iter().zip(&power[*start..]).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Filterbank over `n_fft_bins` bins of a spectrum sampled at 22,050 Hz.
pub fn mel_filterbank(n_mels: usize, f_min: f64, f_max: f64, n_fft_bins: usize) -> Result<MelFilterbank, FeatureError> {
    let nyquist = SAMPLE_RATE_HZ as f64 / 2.0;
    if n_mels == 0 || n_fft_bins < 2 || !(f_min >= 0.0 && f_min < f_max && f_max <= nyquist) {
        return Err(FeatureError::BadBand(format!(
            "{n_mels} mels over [{f_min}, {f_max}] Hz with {n_fft_bins} bins"
        )));
    }
    let n_fft = 2 * (n_fft_bins - 1);
    let freqs: Vec<f64> = (0..n_fft_bins)
        .map(|k| k as f64 * SAMPLE_RATE_HZ as f64 / n_fft as f64)
        .collect();
    let (m_lo, m_hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
    let pts: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (n_mels + 1) as f64))
        .collect();

    let filters = (0..n_mels)
        .map(|m| {
            let (lo, c, hi) = (pts[m], pts[m + 1], pts[m + 2]);
            let norm = 2.0 / (hi - lo);
            let w: Vec<f64> = freqs
                .iter()
                .map(|&f| {
                    let up = (f - lo) / (c - lo);
                    let down = (hi - f) / (hi - c);
                    up.min(down).max(0.0) * norm
                })
                .collect();
            let first = w.iter().position(|&x| x > 0.0).unwrap_or(0);
            let last = w.iter().rposition(|&x| x > 0.0).map_or(first, |i| i + 1);
            (first, w[first..last].to_vec())
        })
        .collect();
    Ok(MelFilterbank {
        n_bins: n_fft_bins,
        filters,
    })
}

/// Orthonormal DCT-II via one complex FFT of length n.
pub struct Dct2 {
    n: usize,
    fft: Arc<dyn Fft<f64>>,
    twiddle: Vec<Complex<f64>>,
}

impl Dct2 {
    pub fn new(n: usize) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(n.max(1));
        let twiddle = (0..n)
            .map(|k| Complex::from_polar(1.0, -PI * k as f64 / (2.0 * n as f64)))
            .collect();
        Dct2 { n, fft, twiddle }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n;
        assert_eq!(x.len(), n, "DCT length mismatch");
        if n == 0 {
            return Vec::new();
        }
        // Even-indexed samples forward, odd-indexed samples reversed.
        let mut v = vec![Complex::new(0.0, 0.0); n];
        for k in 0..n.div_ceil(2) {
            v[k] = Complex::new(x[2 * k], 0.0);
        }
        for k in 0..n / 2 {
            v[n - 1 - k] = Complex::new(x[2 * k + 1], 0.0);
        }
        self.fft.process(&mut v);
        let s0 = (1.0 / n as f64).sqrt();
        let s = (2.0 / n as f64).sqrt();
        (0..n)
            .map(|k| (v[k] * self.twiddle[k]).re * if k == 0 { s0 } else { s })
            .collect()
    }
}

pub fn dct2_ortho(v: &[f64]) -> Vec<f64> {
    Dct2::new(v.len()).apply(v)
}

/// 13 × frames MFCC matrix, coefficient-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub source: String,
    pub n_frames: usize,
    pub coeffs: Vec<f64>,
}

impl FeatureMatrix {
    pub fn n_coeffs(&self) -> usize {
        N_MFCC
    }

    pub fn get(&self, coeff: usize, frame: usize) -> f64 {
        self.coeffs[coeff * self.n_frames + frame]
    }

    pub fn row(&self, coeff: usize) -> &[f64] {
        &self.coeffs[coeff * self.n_frames..(coeff + 1) * self.n_frames]
    }

    /// Frame-major copy (`frames × 13`). Models take `coeffs` as is.
    pub fn frame_major(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.coeffs.len());
        for t in 0..self.n_frames {
            for c in 0..N_MFCC {
                out.push(self.get(c, t));
            }
        }
        out
    }
}

/// Reusable MFCC pipeline with planned FFTs and a precomputed filterbank.
pub struct Mfcc {
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    mel: MelFilterbank,
    dct: Dct2,
}

impl Default for Mfcc {
    fn default() -> Self {
        Self::new()
    }
}

impl Mfcc {
    pub fn new() -> Self {
        Mfcc {
            window: hann(N_FFT),
            fft: FftPlanner::new().plan_fft_forward(N_FFT),
            mel: mel_filterbank(N_MELS, 0.0, SAMPLE_RATE_HZ as f64 / 2.0, N_BINS).expect("default band is valid"),
            dct: Dct2::new(N_MELS),
        }
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.mel
    }

    /// Log-mel energies (dB) per frame.
    pub fn log_mel(&self, samples: &[f64]) -> Result<Vec<Vec<f64>>, FeatureError> {
        let power = stft_power_with(samples, N_FFT, HOP, &self.window, self.fft.as_ref())?;
        Ok(power
            .iter()
            .map(|p| {
                self.mel
                    .apply(p)
                    .into_iter()
                    .map(|e| 10.0 * e.max(LOG_FLOOR).log10())
                    .collect()
            })
            .collect())
    }

    /// Features for one 5 s segment.
    pub fn segment(&self, source: &str, samples: &[f64]) -> Result<FeatureMatrix, FeatureError> {
        if samples.len() != SEGMENT_SAMPLES {
            return Err(FeatureError::WrongLength {
                expected: SEGMENT_SAMPLES,
                got: samples.len(),
            });
        }
        self.any_length(source, samples)
    }

    /// Features for an input of any non-zero length.
    pub fn any_length(&self, source: &str, samples: &[f64]) -> Result<FeatureMatrix, FeatureError> {
        let log_mel = self.log_mel(samples)?;
        let n_frames = log_mel.len();
        let mut coeffs = vec![0.0; N_MFCC * n_frames];
        for (t, frame) in log_mel.iter().enumerate() {
            let c = self.dct.apply(frame);
            for k in 0..N_MFCC {
                coeffs[k * n_frames + t] = c[k];
            }
        }
        Ok(FeatureMatrix {
            source: source.to_string(),
            n_frames,
            coeffs,
        })
    }
}

pub fn mfcc(samples: &[f64]) -> Result<FeatureMatrix, FeatureError> {
    Mfcc::new().segment("", samples)
}

const CACHE_MAGIC: &[u8; 8] = b"FLYMFCC\0";
const CACHE_VERSION: u32 = 1;

/// Layout: magic (8 bytes), version (u32), segment count (u64), then per
/// segment an id length (u32), the UTF-8 id, and 13 × 216 f64 values,
/// coefficient-major. All integers and floats little-endian.
pub fn write_cache(path: &Path, matrices: &[FeatureMatrix]) -> Result<(), FeatureError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(CACHE_MAGIC)?;
    w.write_all(&CACHE_VERSION.to_le_bytes())?;
    w.write_all(&(matrices.len() as u64).to_le_bytes())?;
    for m in matrices {
        if m.n_frames != N_FRAMES {
            return Err(FeatureError::BadCache(format!("{} has {} frames", m.source, m.n_frames)));
        }
        w.write_all(&(m.source.len() as u32).to_le_bytes())?;
        w.write_all(m.source.as_bytes())?;
        for v in &m.coeffs {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_cache(path: &Path) -> Result<Vec<FeatureMatrix>, FeatureError> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CACHE_MAGIC {
        return Err(FeatureError::BadCache("bad magic".into()));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b4)?;
    if u32::from_le_bytes(b4) != CACHE_VERSION {
        return Err(FeatureError::BadCache("unsupported version".into()));
    }
    r.read_exact(&mut b8)?;
    let n = u64::from_le_bytes(b8);
    let mut out = Vec::new();
    for _ in 0..n {
        r.read_exact(&mut b4)?;
        let mut id = vec![0u8; u32::from_le_bytes(b4) as usize];
        r.read_exact(&mut id)?;
        let source = String::from_utf8(id).map_err(|_| FeatureError::BadCache("id is not UTF-8".into()))?;
        let mut coeffs = Vec::with_capacity(N_MFCC * N_FRAMES);
        for _ in 0..N_MFCC * N_FRAMES {
            r.read_exact(&mut b8)?;
            coeffs.push(f64::from_le_bytes(b8));
        }
        out.push(FeatureMatrix {
            source,
            n_frames: N_FRAMES,
            coeffs,
        });
    }
    Ok(out)
}
