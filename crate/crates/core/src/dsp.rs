//! Log-mel filterbank front end: 25 ms Hann frames every 10 ms at 16 kHz,
//! 512-point power spectrum, 40 peak-normalized triangular mel filters,
//! natural log with a fixed power floor.

use std::sync::{Arc, OnceLock};

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub const SAMPLE_RATE_HZ: u32 = 16_000;
pub const FRAME_LEN: usize = 400;
pub const HOP_LEN: usize = 160;
pub const N_FFT: usize = 512;
pub const N_MELS: usize = 40;
/// Frame period in milliseconds.
pub const FRAME_MS: i64 = 10;
/// Power floor applied before the logarithm.
pub const POWER_FLOOR: f64 = 1e-10;

/// Mono PCM audio at 16 kHz.
#[derive(Debug, Clone, PartialEq)]
pub struct PcmSignal {
    samples: Vec<f32>,
}

impl PcmSignal {
    /// Wraps samples, rejecting non-finite values.
    pub fn new(samples: Vec<f32>) -> Result<Self> {
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite sample at index {i}")));
        }
        Ok(Self { samples })
    }

    pub fn silence(n_samples: usize) -> Self {
        Self {
            samples: vec![0.0; n_samples],
        }
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate_hz(&self) -> u32 {
        SAMPLE_RATE_HZ
    }

    pub fn duration_ms(&self) -> f64 {
        self.samples.len() as f64 * 1000.0 / SAMPLE_RATE_HZ as f64
    }
}

/// `[n_frames x 40]` log-mel energies, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMelFrames {
    data: Vec<f64>,
    n_frames: usize,
}

impl LogMelFrames {
    pub fn from_rows(data: Vec<f64>, n_frames: usize) -> Result<Self> {
        if data.len() != n_frames * N_MELS {
            return Err(Error::shape(
                "log-mel frames",
                n_frames * N_MELS,
                data.len(),
            ));
        }
        Ok(Self { data, n_frames })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_mels(&self) -> usize {
        N_MELS
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        &self.data[i * N_MELS..(i + 1) * N_MELS]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Frames `[start, end)` as a new feature matrix.
    pub fn slice(&self, start: usize, end: usize) -> LogMelFrames {
        let end = end.min(self.n_frames);
        let start = start.min(end);
        LogMelFrames {
            data: self.data[start * N_MELS..end * N_MELS].to_vec(),
            n_frames: end - start,
        }
    }
}

/// Number of full frames in a signal of `n_samples`.
pub fn frame_count(n_samples: usize) -> usize {
    if n_samples < FRAME_LEN {
        0
    } else {
        (n_samples - FRAME_LEN) / HOP_LEN + 1
    }
}

/// Sample index at the center of frame `i`.
pub fn frame_center(i: usize) -> usize {
    i * HOP_LEN + FRAME_LEN / 2
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Mel-spaced filter center frequencies in Hz (excluding the 0 Hz and
/// Nyquist edge points).
pub fn mel_center_frequencies(n_mels: usize, sample_rate_hz: u32) -> Vec<f64> {
    let top = hz_to_mel(sample_rate_hz as f64 / 2.0);
    (1..=n_mels)
        .map(|m| mel_to_hz(top * m as f64 / (n_mels + 1) as f64))
        .collect()
}

/// Triangular mel filterbank, `[n_mels x (n_fft/2 + 1)]` row-major.
///
/// Triangles are built on the mel axis between adjacent mel-spaced edge
/// points spanning 0 Hz to Nyquist, then each row is scaled so its peak is 1.
pub fn mel_filterbank_matrix(n_mels: usize, n_fft: usize, sample_rate_hz: u32) -> Result<Vec<f64>> {
    if n_mels == 0 {
        return Err(Error::Config("n_mels must be at least 1".into()));
    }
    if !n_fft.is_power_of_two() || n_fft < 2 * n_mels {
        return Err(Error::Config(format!(
            "n_fft must be a power of two >= 2*n_mels, got {n_fft} for {n_mels} mels"
        )));
    }
    if sample_rate_hz == 0 {
        return Err(Error::Config("sample rate must be positive".into()));
    }
    let n_bins = n_fft / 2 + 1;
    let top = hz_to_mel(sample_rate_hz as f64 / 2.0);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|m| top * m as f64 / (n_mels + 1) as f64)
        .collect();
    let bin_mel: Vec<f64> = (0..n_bins)
        .map(|k| hz_to_mel(k as f64 * sample_rate_hz as f64 / n_fft as f64))
        .collect();

    let mut fb = vec![0.0; n_mels * n_bins];
    for m in 0..n_mels {
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let row = &mut fb[m * n_bins..(m + 1) * n_bins];
        for (w, &mel) in row.iter_mut().zip(&bin_mel) {
            *w = if mel > lo && mel <= mid {
                (mel - lo) / (mid - lo)
            } else if mel > mid && mel < hi {
                (hi - mel) / (hi - mid)
            } else {
                0.0
            };
        }
        let peak = row.iter().cloned().fold(0.0, f64::max);
        if peak <= 0.0 {
            return Err(Error::Config(format!(
                "mel filter {m} covers no FFT bin; increase n_fft"
            )));
        }
        row.iter_mut().for_each(|w| *w /= peak);
    }
    Ok(fb)
}

/// Reusable front end holding the window, filterbank and FFT plan.
pub struct MelFrontend {
    window: Vec<f64>,
    /// Per filter: first nonzero bin and its weights.
    filters: Vec<(usize, Vec<f64>)>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for MelFrontend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MelFrontend")
            .field("n_mels", &self.filters.len())
            .finish()
    }
}

impl MelFrontend {
    pub fn new() -> Self {
        let fb = mel_filterbank_matrix(N_MELS, N_FFT, SAMPLE_RATE_HZ)
            .expect("default filterbank parameters are valid");
        let n_bins = N_FFT / 2 + 1;
        let filters = fb
            .chunks(n_bins)
            .map(|row| {
                let first = row.iter().position(|&w| w > 0.0).unwrap_or(0);
                let last = row.iter().rposition(|&w| w > 0.0).unwrap_or(0);
                (first, row[first..=last].to_vec())
            })
            .collect();
        // periodic Hann
        let window = (0..FRAME_LEN)
            .map(|n| {
                0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / FRAME_LEN as f64).cos()
            })
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(N_FFT);
        Self {
            window,
            filters,
            fft,
        }
    }

    /// Shared default instance.
    pub fn shared() -> &'static MelFrontend {
        static FRONTEND: OnceLock<MelFrontend> = OnceLock::new();
        FRONTEND.get_or_init(MelFrontend::new)
    }

    pub fn compute(&self, signal: &PcmSignal) -> Result<LogMelFrames> {
        self.compute_samples(signal.samples())
    }

    pub fn compute_samples(&self, samples: &[f32]) -> Result<LogMelFrames> {
        let n_frames = frame_count(samples.len());
        if n_frames == 0 {
            return Err(Error::EmptyFeatures {
                n_samples: samples.len(),
                min: FRAME_LEN,
            });
        }
        let mut data = Vec::with_capacity(n_frames * N_MELS);
        let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0; N_FFT / 2 + 1];
        for i in 0..n_frames {
            let frame = &samples[i * HOP_LEN..i * HOP_LEN + FRAME_LEN];
            for (b, (&x, &w)) in buf.iter_mut().zip(frame.iter().zip(&self.window)) {
                *b = Complex::new(x as f64 * w, 0.0);
            }
            buf[FRAME_LEN..].iter_mut().for_each(|b| *b = Complex::new(0.0, 0.0));
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            for (first, weights) in &self.filters {
                let energy: f64 = weights
                    .iter()
                    .zip(&power[*first..])
                    .map(|(w, p)| w * p)
                    .sum();
                data.push(energy.max(POWER_FLOOR).ln());
            }
        }
        Ok(LogMelFrames { data, n_frames })
    }
}

impl Default for MelFrontend {
    fn default() -> Self {
        Self::new()
    }
}

/// 40-dim log-mel features of `signal` using the shared front end.
pub fn log_mel_features(signal: &PcmSignal) -> Result<LogMelFrames> {
    MelFrontend::shared().compute(signal)
}
