//! Formant-filtered pulse-train voices and simple noise generators.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dsp::{PcmSignal, SAMPLE_RATE_HZ};
use crate::error::{Error, Result};

pub const MIN_SEGMENT_MS: u32 = 200;
pub const MAX_SEGMENT_MS: u32 = 5000;
pub const MIN_FORMANT_HZ: f64 = 200.0;
pub const MAX_FORMANT_HZ: f64 = 3500.0;
pub const SEGMENT_PEAK: f64 = 0.5;

const PITCH_RANGE: (f64, f64) = (90.0, 260.0);
const F1_RANGE: (f64, f64) = (300.0, 900.0);
const F2_RANGE: (f64, f64) = (900.0, 2300.0);
const F3_RANGE: (f64, f64) = (2300.0, 3400.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Formant {
    pub center_hz: f64,
    pub bandwidth_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpeaker {
    pub speaker_id: String,
    pub formants: Vec<Formant>,
    pub pitch_hz: f64,
    pub seed: u64,
}

impl SyntheticSpeaker {
    pub fn new(
        speaker_id: impl Into<String>,
        formants: Vec<Formant>,
        pitch_hz: f64,
        seed: u64,
    ) -> Result<Self> {
        if !(3..=4).contains(&formants.len()) {
            return Err(Error::Config(format!(
                "a speaker needs 3 or 4 formants, got {}",
                formants.len()
            )));
        }
        for f in &formants {
            if !(MIN_FORMANT_HZ..=MAX_FORMANT_HZ).contains(&f.center_hz) || f.bandwidth_hz <= 0.0 {
                return Err(Error::Config(format!("formant out of range: {f:?}")));
            }
        }
        if !(50.0..=500.0).contains(&pitch_hz) {
            return Err(Error::Config(format!("pitch {pitch_hz} Hz out of range")));
        }
        Ok(Self {
            speaker_id: speaker_id.into(),
            formants,
            pitch_hz,
            seed,
        })
    }

    /// Voice with pitch and formants drawn from `seed`.
    pub fn random(speaker_id: impl Into<String>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| rng.random_range(lo..hi);
        let pitch = u(&mut rng, PITCH_RANGE);
        let f1 = u(&mut rng, F1_RANGE);
        let f2 = u(&mut rng, F2_RANGE);
        let f3 = u(&mut rng, F3_RANGE);
        Self::with_params(speaker_id, seed, pitch, f1, f2, f3, &mut rng)
    }

    fn with_params(
        speaker_id: impl Into<String>,
        seed: u64,
        pitch: f64,
        f1: f64,
        f2: f64,
        f3: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let formants = vec![
            Formant {
                center_hz: f1,
                bandwidth_hz: rng.random_range(60.0..120.0),
            },
            Formant {
                center_hz: f2,
                bandwidth_hz: rng.random_range(80.0..160.0),
            },
            Formant {
                center_hz: f3,
                bandwidth_hz: rng.random_range(120.0..250.0),
            },
        ];
        Self {
            speaker_id: speaker_id.into(),
            formants,
            pitch_hz: pitch,
            seed,
        }
    }
}

/// `n` voices whose pitch, F1 and F2 are spread over their ranges by
/// independent stratified draws, so no two speakers share a stratum.
pub fn speaker_roster(n: usize, seed: u64) -> Vec<SyntheticSpeaker> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let strata = |rng: &mut ChaCha8Rng| {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(rng);
        idx
    };
    let pitch_idx = strata(&mut rng);
    let f1_idx = strata(&mut rng);
    let f2_idx = strata(&mut rng);
    let stratum = |rng: &mut ChaCha8Rng, k: usize, (lo, hi): (f64, f64)| {
        lo + (hi - lo) * (k as f64 + rng.random_range(0.15..0.85)) / n as f64
    };
    (0..n)
        .map(|k| {
            let speaker_seed = rng.random::<u64>();
            let pitch = stratum(&mut rng, pitch_idx[k], PITCH_RANGE);
            let f1 = stratum(&mut rng, f1_idx[k], F1_RANGE);
            let f2 = stratum(&mut rng, f2_idx[k], F2_RANGE);
            let f3 = rng.random_range(F3_RANGE.0..F3_RANGE.1);
            let mut local = ChaCha8Rng::seed_from_u64(speaker_seed);
            SyntheticSpeaker::with_params(
                format!("spk{k:02}"),
                speaker_seed,
                pitch,
                f1,
                f2,
                f3,
                &mut local,
            )
        })
        .collect()
}

/// Two-pole resonator with unity gain at DC.
#[derive(Debug, Clone, Copy, Default)]
struct Resonator {
    a: f64,
    b: f64,
    c: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn set(&mut self, center_hz: f64, bandwidth_hz: f64) {
        let fs = SAMPLE_RATE_HZ as f64;
        let r = (-std::f64::consts::PI * bandwidth_hz / fs).exp();
        let theta = 2.0 * std::f64::consts::PI * center_hz / fs;
        self.b = 2.0 * r * theta.cos();
        self.c = -r * r;
        self.a = 1.0 - self.b - self.c;
    }

    #[inline]
    fn process(&mut self, x: f64) -> f64 {
        let y = self.a * x + self.b * self.y1 + self.c * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

fn mix_seed(a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A voiced segment: jittered glottal pulses through the speaker's formant
/// cascade, shaped into syllables with per-syllable vowel and pitch
/// variation, normalized to a peak of 0.5.
pub fn synth_segment(speaker: &SyntheticSpeaker, duration_ms: u32, seed: u64) -> Result<PcmSignal> {
    if !(MIN_SEGMENT_MS..=MAX_SEGMENT_MS).contains(&duration_ms) {
        return Err(Error::Config(format!(
            "segment duration {duration_ms} ms outside [{MIN_SEGMENT_MS}, {MAX_SEGMENT_MS}]"
        )));
    }
    let fs = SAMPLE_RATE_HZ as f64;
    let n = duration_ms as usize * SAMPLE_RATE_HZ as usize / 1000;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(speaker.seed, seed));

    // syllable boundaries
    let mut bounds = vec![0usize];
    while *bounds.last().unwrap() < n {
        let len = rng.random_range(0.12..0.28) * fs;
        bounds.push((*bounds.last().unwrap() + len as usize).min(n));
    }
    let last = bounds.len() - 1;
    if last > 1 && bounds[last] - bounds[last - 1] < (0.06 * fs) as usize {
        bounds.remove(last - 1);
    }

    let mut resonators = vec![Resonator::default(); speaker.formants.len()];
    let mut out = vec![0.0f64; n];
    let mut phase = 0.0f64;
    let mut period_scale = 1.0f64;
    let mut glottal = 0.0f64;
    let ramp = 0.03 * fs;
    for w in bounds.windows(2) {
        let (s0, s1) = (w[0], w[1]);
        let vowel: Vec<f64> = (0..resonators.len())
            .map(|k| if k < 2 { rng.random_range(0.88..1.12) } else { rng.random_range(0.95..1.05) })
            .collect();
        for (res, (f, v)) in resonators.iter_mut().zip(speaker.formants.iter().zip(&vowel)) {
            res.set((f.center_hz * v).clamp(MIN_FORMANT_HZ, MAX_FORMANT_HZ), f.bandwidth_hz);
        }
        let pitch_start = speaker.pitch_hz * rng.random_range(0.92..1.08);
        let pitch_end = pitch_start * rng.random_range(0.9..1.05);
        let len = (s1 - s0) as f64;
        for (i, y) in out[s0..s1].iter_mut().enumerate() {
            let frac = i as f64 / len.max(1.0);
            let f0 = pitch_start + (pitch_end - pitch_start) * frac;
            phase += f0 * period_scale / fs;
            let mut x = 0.0;
            if phase >= 1.0 {
                phase -= 1.0;
                period_scale = 1.0 + rng.random_range(-0.02..0.02);
                x = 1.0;
            }
            // one-pole glottal smoothing plus a little aspiration
            glottal = 0.7 * glottal + x;
            let noise: f64 = StandardNormal.sample(&mut rng);
            let mut v = glottal + 0.03 * noise;
            for r in resonators.iter_mut() {
                v = r.process(v);
            }
            let i_f = i as f64;
            let env = (i_f / ramp).min(1.0).min((len - i_f) / ramp).clamp(0.0, 1.0);
            let env = 0.2 + 0.8 * (0.5 - 0.5 * (std::f64::consts::PI * env).cos());
            *y = v * env;
        }
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if peak > 0.0 { SEGMENT_PEAK / peak } else { 0.0 };
    PcmSignal::new(out.iter().map(|v| (v * scale) as f32).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    White,
    Modulated,
}

/// Noise of `n_samples` with unit-ish RMS. `Modulated` is low-passed noise
/// under a slow sinusoidal amplitude envelope.
pub fn synth_noise(kind: NoiseKind, n_samples: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<f64> = (0..n_samples).map(|_| StandardNormal.sample(&mut rng)).collect();
    if kind == NoiseKind::Modulated {
        let alpha: f64 = rng.random_range(0.3..0.9);
        let rate = rng.random_range(0.5..6.0);
        let phase0 = rng.random_range(0.0..std::f64::consts::TAU);
        let depth = rng.random_range(0.3..0.9);
        let mut state = 0.0;
        let fs = SAMPLE_RATE_HZ as f64;
        for (i, v) in out.iter_mut().enumerate() {
            state = alpha * state + (1.0 - alpha) * *v;
            let m = 1.0 + depth * (std::f64::consts::TAU * rate * i as f64 / fs + phase0).sin();
            *v = state * m;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn long_term_spectrum(x: &[f32], n_bins: usize) -> Vec<f64> {
        // direct DFT magnitude averaged over 512-sample blocks
        let block = 512;
        let mut acc = vec![0.0; n_bins];
        for chunk in x.chunks_exact(block) {
            for (k, a) in acc.iter_mut().enumerate() {
                let (mut re, mut im) = (0.0, 0.0);
                for (i, &s) in chunk.iter().enumerate() {
                    let ang = -std::f64::consts::TAU * (k * i) as f64 / block as f64;
                    re += s as f64 * ang.cos();
                    im += s as f64 * ang.sin();
                }
                *a += re * re + im * im;
            }
        }
        acc
    }

    fn argmax(v: &[f64]) -> usize {
        v.iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0
    }

    fn voice(pitch: f64, f1: f64, f2: f64) -> SyntheticSpeaker {
        let formants = [(f1, 80.0), (f2, 120.0), (2800.0, 200.0)]
            .iter()
            .map(|&(c, b)| Formant {
                center_hz: c,
                bandwidth_hz: b,
            })
            .collect();
        SyntheticSpeaker::new("x", formants, pitch, 11).unwrap()
    }

    #[test]
    fn segment_length_and_peak() {
        let s = speaker_roster(3, 1).remove(0);
        let x = synth_segment(&s, 1000, 4).unwrap();
        assert_eq!(x.len(), 16000);
        let peak = x.samples().iter().fold(0.0f32, |m, v| m.max(v.abs()));
        assert!((peak - 0.5).abs() < 1e-6);
    }

    #[test]
    fn segment_is_deterministic() {
        let s = speaker_roster(3, 1).remove(1);
        assert_eq!(synth_segment(&s, 730, 9).unwrap(), synth_segment(&s, 730, 9).unwrap());
        assert_ne!(synth_segment(&s, 730, 9).unwrap(), synth_segment(&s, 730, 10).unwrap());
    }

    #[test]
    fn duration_bounds() {
        let s = speaker_roster(1, 1).remove(0);
        assert!(synth_segment(&s, 199, 0).is_err());
        assert!(synth_segment(&s, 5001, 0).is_err());
        assert!(synth_segment(&s, 200, 0).is_ok());
    }

    #[test]
    fn different_speakers_have_distinct_spectral_peaks() {
        let a = voice(110.0, 350.0, 1000.0);
        let b = voice(200.0, 800.0, 1900.0);
        let bins = 160; // up to 5 kHz at 31.25 Hz per bin
        let sa = long_term_spectrum(synth_segment(&a, 1500, 1).unwrap().samples(), bins);
        let sb = long_term_spectrum(synth_segment(&b, 1500, 1).unwrap().samples(), bins);
        let (ka, kb) = (argmax(&sa), argmax(&sb));
        assert_ne!(ka, kb);
        // each peak sits near its own first formant
        assert!((ka as f64 * 31.25 - 350.0).abs() < 150.0, "{ka}");
        assert!((kb as f64 * 31.25 - 800.0).abs() < 200.0, "{kb}");
    }

    #[test]
    fn roster_is_valid_and_distinct() {
        let r = speaker_roster(12, 7);
        assert_eq!(r, speaker_roster(12, 7));
        for (i, s) in r.iter().enumerate() {
            assert_eq!(s.speaker_id, format!("spk{i:02}"));
            assert!(s
                .formants
                .iter()
                .all(|f| (MIN_FORMANT_HZ..=MAX_FORMANT_HZ).contains(&f.center_hz)));
            for t in &r[..i] {
                assert_ne!(s.seed, t.seed);
            }
        }
    }

    #[test]
    fn formant_validation() {
        let bad = vec![
            Formant {
                center_hz: 100.0,
                bandwidth_hz: 50.0,
            };
            3
        ];
        assert!(SyntheticSpeaker::new("x", bad, 120.0, 0).is_err());
    }

    #[test]
    fn noise_is_deterministic_and_finite() {
        for kind in [NoiseKind::White, NoiseKind::Modulated] {
            let a = synth_noise(kind, 4000, 3);
            assert_eq!(a, synth_noise(kind, 4000, 3));
            assert!(a.iter().all(|v| v.is_finite()));
            assert!(a.iter().map(|v| v * v).sum::<f64>() > 0.0);
        }
    }
}
