//! Noise mixing, utterance assembly and frame labelling.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dsp::{frame_center, frame_count, PcmSignal, SAMPLE_RATE_HZ};
use crate::error::{Error, Result};

pub const MIN_SNR_DB: f64 = 0.0;
pub const MAX_SNR_DB: f64 = 30.0;
pub const MAX_UTTERANCE_MS: u32 = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FrameLabel {
    /// target speaker speech
    Ts,
    /// non-target speech
    Nts,
    /// no speech
    Ns,
}

impl FrameLabel {
    pub fn class_index(self) -> usize {
        match self {
            FrameLabel::Ts => 0,
            FrameLabel::Nts => 1,
            FrameLabel::Ns => 2,
        }
    }

    pub fn is_speech(self) -> bool {
        self != FrameLabel::Ns
    }

    pub fn to_char(self) -> char {
        match self {
            FrameLabel::Ts => 't',
            FrameLabel::Nts => 'n',
            FrameLabel::Ns => 's',
        }
    }

    pub fn from_char(c: char) -> Result<Self> {
        match c {
            't' => Ok(FrameLabel::Ts),
            'n' => Ok(FrameLabel::Nts),
            's' => Ok(FrameLabel::Ns),
            other => Err(Error::Data(format!("unknown frame label `{other}`"))),
        }
    }
}

impl fmt::Display for FrameLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FrameLabel::Ts => "ts",
            FrameLabel::Nts => "nts",
            FrameLabel::Ns => "ns",
        })
    }
}

/// Compact `t`/`n`/`s` string form used in manifests.
pub fn labels_to_string(labels: &[FrameLabel]) -> String {
    labels.iter().map(|l| l.to_char()).collect()
}

pub fn labels_from_str(s: &str) -> Result<Vec<FrameLabel>> {
    s.chars().map(FrameLabel::from_char).collect()
}

/// Counts of `(ts, nts, ns)`.
pub fn label_counts(labels: &[FrameLabel]) -> (usize, usize, usize) {
    labels.iter().fold((0, 0, 0), |(t, n, s), l| match l {
        FrameLabel::Ts => (t + 1, n, s),
        FrameLabel::Nts => (t, n + 1, s),
        FrameLabel::Ns => (t, n, s + 1),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentSpan {
    pub speaker_id: String,
    pub start_sample: usize,
    pub end_sample: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixResult {
    pub signal: PcmSignal,
    pub gain: f64,
    pub clip_fraction: f64,
}

fn rms_over(x: impl Iterator<Item = f64>) -> (f64, usize) {
    let (sum, n) = x.fold((0.0, 0usize), |(s, n), v| (s + v * v, n + 1));
    if n == 0 {
        (0.0, 0)
    } else {
        ((sum / n as f64).sqrt(), n)
    }
}

/// `noise` repeated from `offset` (circularly) to `len` samples.
pub fn tile_noise(noise: &[f64], len: usize, offset: usize) -> Result<Vec<f64>> {
    if noise.is_empty() {
        return Err(Error::InvalidInput("empty noise signal".into()));
    }
    Ok((0..len).map(|i| noise[(offset + i) % noise.len()]).collect())
}

/// `clean + g * noise`, with `g` set so that the power ratio over the active
/// (nonzero) samples of `clean` equals `snr_db`. Output is clipped to
/// `[-1, 1]`.
pub fn mix_at_snr(clean: &PcmSignal, noise: &[f64], snr_db: f64) -> Result<MixResult> {
    if !snr_db.is_finite() {
        return Err(Error::InvalidInput("SNR must be finite".into()));
    }
    let noise = if noise.len() < clean.len() {
        tile_noise(noise, clean.len(), 0)?
    } else {
        noise[..clean.len()].to_vec()
    };
    let active: Vec<usize> = clean
        .samples()
        .iter()
        .enumerate()
        .filter(|(_, s)| **s != 0.0)
        .map(|(i, _)| i)
        .collect();
    let (rms_clean, _) = rms_over(active.iter().map(|&i| clean.samples()[i] as f64));
    if rms_clean == 0.0 {
        return Err(Error::InvalidInput("clean signal is silent; SNR undefined".into()));
    }
    let (rms_noise, _) = rms_over(active.iter().map(|&i| noise[i]));
    if rms_noise == 0.0 || !rms_noise.is_finite() {
        return Err(Error::InvalidInput("noise is silent over the speech region".into()));
    }
    let gain = rms_clean / rms_noise * 10f64.powf(-snr_db / 20.0);
    let mut clipped = 0usize;
    let out = clean
        .samples()
        .iter()
        .zip(&noise)
        .map(|(&c, &n)| {
            let v = c as f64 + gain * n;
            if v.abs() > 1.0 {
                clipped += 1;
            }
            v.clamp(-1.0, 1.0) as f32
        })
        .collect();
    let clip_fraction = if clean.is_empty() {
        0.0
    } else {
        clipped as f64 / clean.len() as f64
    };
    Ok(MixResult {
        signal: PcmSignal::new(out)?,
        gain,
        clip_fraction,
    })
}

/// Labels by the frame-center rule.
pub fn frame_labels(n_samples: usize, spans: &[SegmentSpan], target: &str) -> Vec<FrameLabel> {
    (0..frame_count(n_samples))
        .map(|i| {
            let c = frame_center(i);
            match spans.iter().find(|s| s.start_sample <= c && c < s.end_sample) {
                Some(s) if s.speaker_id == target => FrameLabel::Ts,
                Some(_) => FrameLabel::Nts,
                None => FrameLabel::Ns,
            }
        })
        .collect()
}

/// Mixed audio with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub signal: PcmSignal,
    pub frame_labels: Vec<FrameLabel>,
    pub target_speaker_id: String,
    pub segments: Vec<SegmentSpan>,
    pub snr_db: f64,
    pub clip_fraction: f64,
}

/// Concatenates `segments` with silence. `gaps_ms` has one more entry than
/// `segments`: leading gap, the gaps between segments, trailing gap. Noise
/// is mixed over the whole utterance at `snr_db`.
pub fn build_utterance(
    segments: &[(String, PcmSignal)],
    gaps_ms: &[u32],
    noise: &[f64],
    snr_db: f64,
    target_speaker_id: &str,
) -> Result<Utterance> {
    if segments.is_empty() {
        return Err(Error::InvalidInput("utterance needs at least one segment".into()));
    }
    if gaps_ms.len() != segments.len() + 1 {
        return Err(Error::shape("gap list", segments.len() + 1, gaps_ms.len()));
    }
    if !(MIN_SNR_DB..=MAX_SNR_DB).contains(&snr_db) {
        return Err(Error::InvalidInput(format!(
            "SNR {snr_db} dB outside [{MIN_SNR_DB}, {MAX_SNR_DB}]"
        )));
    }
    let per_ms = SAMPLE_RATE_HZ as usize / 1000;
    let mut samples: Vec<f32> = vec![0.0; gaps_ms[0] as usize * per_ms];
    let mut spans = Vec::with_capacity(segments.len());
    for ((speaker, seg), gap) in segments.iter().zip(&gaps_ms[1..]) {
        let start = samples.len();
        samples.extend_from_slice(seg.samples());
        spans.push(SegmentSpan {
            speaker_id: speaker.clone(),
            start_sample: start,
            end_sample: samples.len(),
        });
        samples.resize(samples.len() + *gap as usize * per_ms, 0.0);
    }
    let clean = PcmSignal::new(samples)?;
    if clean.duration_ms() > MAX_UTTERANCE_MS as f64 {
        return Err(Error::InvalidInput(format!(
            "utterance of {:.0} ms exceeds {MAX_UTTERANCE_MS} ms",
            clean.duration_ms()
        )));
    }
    let mixed = mix_at_snr(&clean, noise, snr_db)?;
    let frame_labels = frame_labels(clean.len(), &spans, target_speaker_id);
    Ok(Utterance {
        signal: mixed.signal,
        frame_labels,
        target_speaker_id: target_speaker_id.to_string(),
        segments: spans,
        snr_db,
        clip_fraction: mixed.clip_fraction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tone(n: usize, amp: f32) -> PcmSignal {
        PcmSignal::new((0..n).map(|i| amp * ((i as f32) * 0.05).sin()).collect()).unwrap()
    }

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        crate::corpus::synth_noise(crate::corpus::NoiseKind::White, n, seed)
    }

    fn snr_oracle(clean: &PcmSignal, mixed: &PcmSignal) -> f64 {
        let (mut ps, mut pn) = (0.0, 0.0);
        for (&c, &m) in clean.samples().iter().zip(mixed.samples()) {
            if c != 0.0 {
                ps += (c as f64).powi(2);
                pn += (m as f64 - c as f64).powi(2);
            }
        }
        10.0 * (ps / pn).log10()
    }

    #[test]
    fn gain_examples() {
        let clean = PcmSignal::new(vec![0.1, -0.1, 0.1, -0.1]).unwrap();
        let n = vec![0.1, 0.1, -0.1, -0.1];
        assert!((mix_at_snr(&clean, &n, 0.0).unwrap().gain - 1.0).abs() < 1e-6);
        assert!((mix_at_snr(&clean, &n, 20.0).unwrap().gain - 0.1).abs() < 1e-6);
    }

    #[test]
    fn silent_clean_is_rejected() {
        let clean = PcmSignal::silence(100);
        assert!(matches!(
            mix_at_snr(&clean, &noise(100, 1), 10.0),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn short_noise_is_tiled() {
        let clean = tone(1000, 0.3);
        let m = mix_at_snr(&clean, &noise(64, 2), 10.0).unwrap();
        assert_eq!(m.signal.len(), 1000);
    }

    proptest! {
        #[test]
        fn measured_snr_matches_request(snr in 0.0f64..30.0, seed in 0u64..1000) {
            let mut s = vec![0.0f32; 800];
            s.extend(tone(8000, 0.3).samples());
            s.extend(vec![0.0f32; 800]);
            let clean = PcmSignal::new(s).unwrap();
            let m = mix_at_snr(&clean, &noise(clean.len(), seed), snr).unwrap();
            prop_assume!(m.clip_fraction < 1e-3);
            prop_assert!((snr_oracle(&clean, &m.signal) - snr).abs() < 0.1);
        }
    }

    #[test]
    fn single_target_segment_labels() {
        let seg = tone(16000, 0.3);
        let u = build_utterance(
            &[("a".to_string(), seg)],
            &[0, 300],
            &noise(100, 3),
            20.0,
            "a",
        )
        .unwrap();
        let n = frame_count(u.signal.len());
        assert_eq!(u.frame_labels.len(), n);
        for (i, l) in u.frame_labels.iter().enumerate() {
            let expected = if frame_center(i) < 16000 {
                FrameLabel::Ts
            } else {
                FrameLabel::Ns
            };
            assert_eq!(*l, expected, "frame {i}");
        }
    }

    #[test]
    fn impostor_utterance_has_no_target_frames() {
        let u = build_utterance(
            &[("b".into(), tone(8000, 0.3)), ("c".into(), tone(8000, 0.2))],
            &[100, 200, 100],
            &noise(50000, 4),
            5.0,
            "a",
        )
        .unwrap();
        let (t, n, s) = label_counts(&u.frame_labels);
        assert_eq!(t, 0);
        assert!(n > 0 && s > 0);
        assert_eq!(t + n + s, u.frame_labels.len());
        assert_eq!(u.segments[1].start_sample, 1600 + 8000 + 3200);
    }

    #[test]
    fn build_rejects_bad_input() {
        let seg = || vec![("a".to_string(), tone(4000, 0.2))];
        assert!(build_utterance(&[], &[0], &noise(10, 1), 10.0, "a").is_err());
        assert!(build_utterance(&seg(), &[0], &noise(10, 1), 10.0, "a").is_err());
        assert!(build_utterance(&seg(), &[0, 0], &noise(10, 1), 31.0, "a").is_err());
        assert!(build_utterance(&seg(), &[0, 0], &noise(10, 1), -0.5, "a").is_err());
    }

    #[test]
    fn label_string_round_trip() {
        let l = vec![FrameLabel::Ts, FrameLabel::Nts, FrameLabel::Ns, FrameLabel::Ts];
        assert_eq!(labels_to_string(&l), "tnst");
        assert_eq!(labels_from_str("tnst").unwrap(), l);
        assert!(labels_from_str("tx").is_err());
    }
}
