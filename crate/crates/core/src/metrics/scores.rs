use serde::{Deserialize, Serialize};

use crate::corpus::FrameLabel;
use crate::error::{Error, Result};
use crate::models::FramePosterior;

/// Width of the trailing moving average used for utterance decisions.
pub const SMOOTHING_FRAMES: usize = 5;
pub const FRAME_HOP_MS: i64 = 10;

pub fn frame_score_pvad(p: &FramePosterior) -> f64 {
    p.p_ts
}

pub fn frame_score_vad(p: &FramePosterior) -> f64 {
    p.p_ts + p.p_nts
}

/// Trailing mean over the last `width` frames; the first frames average
/// over what is available.
pub fn moving_average(scores: &[f64], width: usize) -> Vec<f64> {
    let width = width.max(1);
    let mut out = Vec::with_capacity(scores.len());
    let mut sum = 0.0;
    for (t, &s) in scores.iter().enumerate() {
        sum += s;
        if t >= width {
            sum -= scores[t - width];
        }
        out.push(sum / (t + 1).min(width) as f64);
    }
    out
}

/// Maximum of the smoothed frame scores.
pub fn utterance_score(frame_scores: &[f64]) -> Result<f64> {
    if frame_scores.is_empty() {
        return Err(Error::InvalidInput("utterance has no frames".into()));
    }
    Ok(moving_average(frame_scores, SMOOTHING_FRAMES)
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Latency {
    /// Milliseconds from target onset to the first smoothed score at or
    /// above threshold. Negative when the crossing precedes the onset.
    Detected(i64),
    Miss,
}

impl Latency {
    pub fn ms(self) -> Option<i64> {
        match self {
            Latency::Detected(ms) => Some(ms),
            Latency::Miss => None,
        }
    }
}

/// First frame labelled as target speech.
pub fn target_onset(labels: &[FrameLabel]) -> Option<usize> {
    labels.iter().position(|&l| l == FrameLabel::Ts)
}

pub fn detection_latency(frame_scores: &[f64], labels: &[FrameLabel], threshold: f64) -> Result<Latency> {
    if frame_scores.len() != labels.len() {
        return Err(Error::shape("scores vs labels", labels.len(), frame_scores.len()));
    }
    let onset = target_onset(labels)
        .ok_or_else(|| Error::NotApplicable("utterance has no target-speech frames".into()))?;
    Ok(moving_average(frame_scores, SMOOTHING_FRAMES)
        .iter()
        .position(|&s| s >= threshold)
        .map_or(Latency::Miss, |t| {
            Latency::Detected((t as i64 - onset as i64) * FRAME_HOP_MS)
        }))
}

/// Fraction of utterance scores at or above `threshold`.
pub fn detection_accuracy(utterance_scores: &[f64], threshold: f64) -> Result<f64> {
    if utterance_scores.is_empty() {
        return Err(Error::Degenerate("no target utterances".into()));
    }
    let hits = utterance_scores.iter().filter(|&&s| s >= threshold).count();
    Ok(hits as f64 / utterance_scores.len() as f64)
}

/// Accuracy when only the audio from the target onset through `onset + d`
/// is available. `frame_scores[i]` must come from running the model on
/// utterance `i` starting at its target onset; with a causal model the
/// prefix of that run up to `d` equals a run on the `d` crop. Utterance `i`
/// counts as detected if its smoothed score reaches `threshold` within the
/// first `d / 10 + 1` frames.
pub fn accuracy_vs_duration(
    frame_scores: &[Vec<f64>],
    labels: &[Vec<FrameLabel>],
    durations_ms: &[u32],
    threshold: f64,
) -> Result<Vec<DurationAccuracy>> {
    if frame_scores.is_empty() {
        return Err(Error::Degenerate("no target utterances".into()));
    }
    if frame_scores.len() != labels.len() {
        return Err(Error::shape("utterance count", labels.len(), frame_scores.len()));
    }
    let latencies = frame_scores
        .iter()
        .zip(labels)
        .map(|(s, l)| detection_latency(s, l, threshold))
        .collect::<Result<Vec<_>>>()?;
    durations_ms
        .iter()
        .map(|&d| {
            if d == 0 {
                return Err(Error::InvalidInput("duration must be positive".into()));
            }
            let hits = latencies
                .iter()
                .filter(|l| l.ms().is_some_and(|ms| ms <= i64::from(d)))
                .count();
            Ok(DurationAccuracy {
                duration_ms: d,
                accuracy: hits as f64 / latencies.len() as f64,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DurationAccuracy {
    pub duration_ms: u32,
    pub accuracy: f64,
}

/// Lower median: always one of the inputs.
pub fn lower_median_i64(values: &[i64]) -> Option<i64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_unstable();
    Some(v[(v.len() - 1) / 2])
}

pub fn median_f64(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::corpus::labels_from_str;
    use FrameLabel::*;

    #[test]
    fn moving_average_matches_naive() {
        let s = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0];
        let ma = moving_average(&s, 5);
        for (t, m) in ma.iter().enumerate() {
            let lo = t.saturating_sub(4);
            let naive: f64 = s[lo..=t].iter().sum::<f64>() / (t - lo + 1) as f64;
            assert!((m - naive).abs() < 1e-12);
        }
    }

    #[test]
    fn latency_examples() {
        let labels = [Ns, Ns, Ts, Ts, Ts, Ts, Ts, Ts];
        let scores = [0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0];
        // smoothed: 0, 0, 1/3, 1/2, 3/5, 4/5, 1, 1
        assert_eq!(detection_latency(&scores, &labels, 0.5).unwrap(), Latency::Detected(10));
        assert_eq!(detection_latency(&scores, &labels, 0.9).unwrap(), Latency::Detected(40));
        assert_eq!(detection_latency(&scores, &labels, 1.1).unwrap(), Latency::Miss);
        assert_eq!(detection_latency(&[1.0; 8], &labels, 0.5).unwrap(), Latency::Detected(-20));
    }

    #[test]
    fn latency_needs_target_frames() {
        let r = detection_latency(&[0.5, 0.5], &[Ns, Nts], 0.1);
        assert!(matches!(r, Err(Error::NotApplicable(_))));
    }

    #[test]
    fn accuracy_counts_threshold_inclusive() {
        assert_eq!(detection_accuracy(&[0.5, 0.4, 0.6, 0.1], 0.5).unwrap(), 0.5);
        assert!(detection_accuracy(&[], 0.5).is_err());
    }

    #[test]
    fn duration_saturates_to_full_accuracy() {
        let labels = vec![
            labels_from_str("sssttttttt").unwrap(),
            labels_from_str("ttttssssss").unwrap(),
            labels_from_str("sssssssstt").unwrap(),
        ];
        let scores = vec![
            vec![0.0, 0.0, 0.0, 0.1, 0.2, 0.9, 0.9, 0.9, 0.9, 0.9],
            vec![0.0; 10],
            vec![1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        ];
        let full: Vec<f64> = scores.iter().map(|s| utterance_score(s).unwrap()).collect();
        let acc = accuracy_vs_duration(&scores, &labels, &[10, 40, 100_000], 0.5).unwrap();
        // third utterance triggers early; the first needs 40 ms
        assert_eq!(acc[0].accuracy, 1.0 / 3.0);
        assert_eq!(acc[1].accuracy, 2.0 / 3.0);
        assert_eq!(acc[2].accuracy, detection_accuracy(&full, 0.5).unwrap());
    }

    #[test]
    fn medians() {
        assert_eq!(lower_median_i64(&[40, 10, 30, 20]), Some(20));
        assert_eq!(lower_median_i64(&[]), None);
        assert_eq!(median_f64(&[0.25, 1.0, 0.5, 0.75]), Some(0.625));
    }

    proptest! {
        #[test]
        fn accuracy_is_monotone_in_duration(
            utts in prop::collection::vec(
                (prop::collection::vec(0.0f64..1.0, 2..120), 0usize..100), 1..20),
            threshold in 0.0f64..1.0,
        ) {
            let scores: Vec<Vec<f64>> = utts.iter().map(|u| u.0.clone()).collect();
            let labels: Vec<Vec<FrameLabel>> = utts
                .iter()
                .map(|(s, on)| {
                    let on = on % s.len();
                    (0..s.len()).map(|i| if i < on { Ns } else { Ts }).collect()
                })
                .collect();
            let durations = [10, 50, 100, 200, 400, 800, 1600, 100_000];
            let acc = accuracy_vs_duration(&scores, &labels, &durations, threshold).unwrap();
            for w in acc.windows(2) {
                prop_assert!(w[1].accuracy >= w[0].accuracy);
            }
            let full: Vec<f64> = scores.iter().map(|s| utterance_score(s).unwrap()).collect();
            prop_assert_eq!(acc[7].accuracy, detection_accuracy(&full, threshold).unwrap());
        }

        #[test]
        fn miss_iff_score_below_threshold(
            scores in prop::collection::vec(0.0f64..1.0, 3..60),
            threshold in 0.0f64..1.0,
        ) {
            let mut labels = vec![Ns; scores.len()];
            labels[scores.len() / 2] = Ts;
            let lat = detection_latency(&scores, &labels, threshold).unwrap();
            let miss = utterance_score(&scores).unwrap() < threshold;
            prop_assert_eq!(lat == Latency::Miss, miss);
            if let Latency::Detected(ms) = lat {
                prop_assert_eq!(ms % 10, 0);
            }
        }
    }
}
