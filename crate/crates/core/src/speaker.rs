//! Speaker embeddings: the stand-in d-vector encoder (3-layer LSTM, mean
//! pooling, L2 normalization), enrollment averaging and cosine scoring.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;

use crate::dsp::{log_mel_features, LogMelFrames, PcmSignal, N_MELS};
use crate::error::{Error, Result};
use crate::nn::{
    affine_param_count, lstm_param_count, Activation, AffineIds, Graph, Initializer, LstmIds,
    ParameterSet, Tensor, Var,
};

pub const EMBEDDING_DIM: usize = 256;
pub const ENCODER_HIDDEN: usize = 256;
pub const ENCODER_LAYERS: usize = 3;
pub const MIN_ENROLLMENT_SEGMENTS: usize = 3;
pub const MAX_ENROLLMENT_SEGMENTS: usize = 5;

/// 256-dim voice embedding. The exact all-zero vector is the reserved
/// "no enrollment" sentinel.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerEmbedding {
    values: Vec<f64>,
    normalized: bool,
}

impl SpeakerEmbedding {
    pub fn zero() -> Self {
        Self {
            values: vec![0.0; EMBEDDING_DIM],
            normalized: false,
        }
    }

    /// Raw (unnormalized) embedding.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.len() != EMBEDDING_DIM {
            return Err(Error::shape("speaker embedding", EMBEDDING_DIM, values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite embedding value".into()));
        }
        Ok(Self {
            values,
            normalized: false,
        })
    }

    /// Scales to unit L2 norm. The zero vector cannot be normalized.
    pub fn normalized(values: Vec<f64>) -> Result<Self> {
        let raw = Self::from_values(values)?;
        let norm = raw.norm();
        if norm == 0.0 {
            return Err(Error::ZeroSentinel);
        }
        Ok(Self {
            values: raw.values.iter().map(|v| v / norm).collect(),
            normalized: true,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Base64 of 256 little-endian `f32`s.
    pub fn to_base64(&self) -> String {
        let bytes: Vec<u8> = self
            .values
            .iter()
            .flat_map(|&v| (v as f32).to_le_bytes())
            .collect();
        B64.encode(bytes)
    }

    pub fn from_base64(s: &str) -> Result<Self> {
        let bytes = B64
            .decode(s)
            .map_err(|e| Error::Data(format!("embedding base64: {e}")))?;
        if bytes.len() != EMBEDDING_DIM * 4 {
            return Err(Error::shape("embedding bytes", EMBEDDING_DIM * 4, bytes.len()));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let mut e = Self::from_values(values)?;
        e.normalized = !e.is_zero() && (e.norm() - 1.0).abs() < 1e-6;
        Ok(e)
    }

    pub fn to_row(&self) -> Tensor {
        Tensor::row_vector(self.values.clone())
    }
}

/// `dot(a, b) / (|a| |b|)`; the zero sentinel is rejected.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("cosine_similarity", a.len(), b.len()));
    }
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroSentinel);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Element-wise mean of embeddings, renormalized to unit length.
pub fn average_embeddings(embeddings: &[SpeakerEmbedding]) -> Result<SpeakerEmbedding> {
    if embeddings.is_empty() {
        return Err(Error::EnrollmentCount(0));
    }
    let mut sum = vec![0.0; EMBEDDING_DIM];
    for e in embeddings {
        for (s, v) in sum.iter_mut().zip(e.values()) {
            *s += v;
        }
    }
    let n = embeddings.len() as f64;
    SpeakerEmbedding::normalized(sum.into_iter().map(|s| s / n).collect())
}

/// Stand-in d-vector model: 3 stacked LSTMs (40 -> 256 -> 256 -> 256) whose
/// last-layer states are mean-pooled and L2-normalized. A linear speaker
/// classifier head is used only during training.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerEncoder {
    params: ParameterSet,
    n_classes: usize,
}

impl SpeakerEncoder {
    pub fn new(seed: u64, n_classes: usize) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::Config("speaker encoder needs at least 2 classes".into()));
        }
        let mut init = Initializer::new(seed);
        let mut params = ParameterSet::new();
        let mut input = N_MELS;
        for layer in 1..=ENCODER_LAYERS {
            init.add_lstm(&mut params, &format!("lstm{layer}"), input, ENCODER_HIDDEN)?;
            input = ENCODER_HIDDEN;
        }
        init.add_affine(&mut params, "head", ENCODER_HIDDEN, n_classes)?;
        Ok(Self { params, n_classes })
    }

    /// Wraps loaded parameters after checking every expected shape.
    pub fn from_params(params: ParameterSet) -> Result<Self> {
        let n_classes = params
            .by_name("head.b")
            .map(|t| t.len())
            .ok_or_else(|| Error::Usage("speaker encoder is missing `head.b`".into()))?;
        let reference = Self::new(0, n_classes.max(2))?;
        crate::models::check_same_layout(&reference.params, &params)?;
        Ok(Self { params, n_classes })
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    /// Scalars used to produce embeddings (excludes the training head).
    pub fn embedding_parameter_count(&self) -> usize {
        (0..ENCODER_LAYERS)
            .map(|l| lstm_param_count(if l == 0 { N_MELS } else { ENCODER_HIDDEN }, ENCODER_HIDDEN))
            .sum()
    }

    pub fn parameter_count(&self) -> usize {
        self.embedding_parameter_count() + affine_param_count(ENCODER_HIDDEN, self.n_classes)
    }

    /// Records the LSTM stack and returns the `[T, 256]` last-layer states.
    pub fn hidden_states(g: &mut Graph<'_>, feats: Var) -> Result<Var> {
        let mut x = feats;
        for layer in 1..=ENCODER_LAYERS {
            let ids = LstmIds::lookup(g.params(), &format!("lstm{layer}"))?;
            x = g.lstm(x, ids)?;
        }
        Ok(x)
    }

    /// Records pooled classification logits `[1, n_classes]`.
    pub fn class_logits(g: &mut Graph<'_>, feats: Var) -> Result<Var> {
        let h = Self::hidden_states(g, feats)?;
        let pooled = g.mean_rows(h)?;
        let head = AffineIds::lookup(g.params(), "head")?;
        g.affine(pooled, head, Activation::Identity)
    }

    fn states(&self, features: &LogMelFrames) -> Result<Tensor> {
        if features.n_frames() == 0 {
            return Err(Error::EmptyFeatures {
                n_samples: 0,
                min: crate::dsp::FRAME_LEN,
            });
        }
        let mut g = Graph::new(&self.params);
        let x = g.input(features_tensor(features));
        let h = Self::hidden_states(&mut g, x)?;
        Ok(g.value(h).clone())
    }

    /// Mean-pooled, unit-norm embedding of a feature sequence.
    pub fn embed(&self, features: &LogMelFrames) -> Result<SpeakerEmbedding> {
        let h = self.states(features)?;
        let mut pooled = vec![0.0; ENCODER_HIDDEN];
        for t in 0..h.rows() {
            for (p, v) in pooled.iter_mut().zip(h.row(t)) {
                *p += v;
            }
        }
        let n = h.rows() as f64;
        pooled.iter_mut().for_each(|p| *p /= n);
        SpeakerEmbedding::normalized(pooled).map_err(|e| match e {
            Error::ZeroSentinel => Error::Numeric("encoder produced an all-zero state".into()),
            other => other,
        })
    }

    pub fn embed_signal(&self, signal: &PcmSignal) -> Result<SpeakerEmbedding> {
        self.embed(&log_mel_features(signal)?)
    }

    /// Per-frame cosine between the running (causal) mean of the encoder
    /// states and `enrollment`.
    pub fn running_cosines(
        &self,
        features: &LogMelFrames,
        enrollment: &SpeakerEmbedding,
    ) -> Result<Vec<f64>> {
        if enrollment.is_zero() {
            return Err(Error::ZeroSentinel);
        }
        let h = self.states(features)?;
        let mut sum = vec![0.0; ENCODER_HIDDEN];
        let mut out = Vec::with_capacity(h.rows());
        for t in 0..h.rows() {
            for (s, v) in sum.iter_mut().zip(h.row(t)) {
                *s += v;
            }
            // scale-invariant, so the running sum stands in for the mean
            out.push(cosine_similarity(&sum, enrollment.values()).unwrap_or(0.0));
        }
        Ok(out)
    }
}

/// Fixed scaling applied to log-mel values before any network.
pub const FEATURE_SCALE: f64 = 0.4;

/// Scaled features as a `[T, 40]` tensor.
pub fn features_tensor(features: &LogMelFrames) -> Tensor {
    let data = features
        .as_slice()
        .iter()
        .map(|v| v * FEATURE_SCALE)
        .collect();
    Tensor::from_vec(&[features.n_frames(), N_MELS], data).expect("frame layout matches")
}

/// Enrollment embedding from 3 to 5 segments: embed each, average, renormalize.
pub fn enrollment_embedding(
    encoder: &SpeakerEncoder,
    segments: &[PcmSignal],
) -> Result<SpeakerEmbedding> {
    if !(MIN_ENROLLMENT_SEGMENTS..=MAX_ENROLLMENT_SEGMENTS).contains(&segments.len()) {
        return Err(Error::EnrollmentCount(segments.len()));
    }
    let embeddings = segments
        .iter()
        .map(|s| encoder.embed_signal(s))
        .collect::<Result<Vec<_>>>()?;
    average_embeddings(&embeddings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tone(freq: f64, n: usize) -> PcmSignal {
        PcmSignal::new(
            (0..n)
                .map(|i| (0.3 * (2.0 * std::f64::consts::PI * freq * i as f64 / 16000.0).sin()) as f32)
                .collect(),
        )
        .unwrap()
    }

    fn unit(i: usize) -> SpeakerEmbedding {
        let mut v = vec![0.0; EMBEDDING_DIM];
        v[i] = 1.0;
        SpeakerEmbedding::normalized(v).unwrap()
    }

    #[test]
    fn cosine_examples() {
        let v: Vec<f64> = (0..EMBEDDING_DIM).map(|i| (i as f64).cos()).collect();
        assert!((cosine_similarity(&v, &v).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine_similarity(unit(0).values(), unit(1).values()).unwrap(), 0.0);
        let c = cosine_similarity(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert!((c - 32.0 / (14.0f64 * 77.0).sqrt()).abs() < 1e-12);
        assert!((c - 0.974632).abs() < 1e-6);
        assert!(matches!(
            cosine_similarity(SpeakerEmbedding::zero().values(), &v),
            Err(Error::ZeroSentinel)
        ));
    }

    proptest! {
        #[test]
        fn cosine_symmetric_and_scale_invariant(
            a in prop::collection::vec(-1.0f64..1.0, 8),
            b in prop::collection::vec(-1.0f64..1.0, 8),
            c in 0.01f64..100.0,
        ) {
            prop_assume!(a.iter().any(|v| v.abs() > 1e-3) && b.iter().any(|v| v.abs() > 1e-3));
            let ab = cosine_similarity(&a, &b).unwrap();
            let ba = cosine_similarity(&b, &a).unwrap();
            let scaled: Vec<f64> = b.iter().map(|v| v * c).collect();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!((ab - cosine_similarity(&a, &scaled).unwrap()).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&ab));
        }
    }

    #[test]
    fn orthogonal_pair_average() {
        let (e1, e2) = (unit(3), unit(7));
        let raw: Vec<f64> = e1.values().iter().zip(e2.values()).map(|(a, b)| (a + b) / 2.0).collect();
        let raw_norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((raw_norm - 2f64.sqrt() / 2.0).abs() < 1e-12);
        let avg = average_embeddings(&[e1, e2]).unwrap();
        assert!((avg.values()[3] - 1.0 / 2f64.sqrt()).abs() < 1e-12);
        assert!((avg.values()[7] - 1.0 / 2f64.sqrt()).abs() < 1e-12);
        assert!((avg.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn base64_roundtrip_at_f32_precision() {
        let e = SpeakerEmbedding::normalized((0..EMBEDDING_DIM).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let back = SpeakerEmbedding::from_base64(&e.to_base64()).unwrap();
        for (a, b) in e.values().iter().zip(back.values()) {
            assert_eq!(*a as f32, *b as f32);
        }
        assert!(back.is_normalized());
        let z = SpeakerEmbedding::from_base64(&SpeakerEmbedding::zero().to_base64()).unwrap();
        assert!(z.is_zero());
        assert!(SpeakerEmbedding::from_base64("AAAA").is_err());
    }

    #[test]
    fn encoder_embedding_is_unit_and_deterministic() {
        let enc = SpeakerEncoder::new(3, 4).unwrap();
        let seg = tone(220.0, 4000);
        let a = enc.embed_signal(&seg).unwrap();
        let b = enc.embed_signal(&seg).unwrap();
        assert_eq!(a, b);
        assert!((a.norm() - 1.0).abs() < 1e-9);
        assert!(a.values().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn enrollment_rules() {
        let enc = SpeakerEncoder::new(5, 4).unwrap();
        let seg = tone(180.0, 3200);
        let single = enc.embed_signal(&seg).unwrap();
        let three = enrollment_embedding(&enc, &[seg.clone(), seg.clone(), seg.clone()]).unwrap();
        for (a, b) in single.values().iter().zip(three.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(matches!(
            enrollment_embedding(&enc, &[seg.clone(), seg.clone()]),
            Err(Error::EnrollmentCount(2))
        ));
        assert!(matches!(
            enrollment_embedding(&enc, &vec![seg.clone(); 6]),
            Err(Error::EnrollmentCount(6))
        ));

        let segs = [tone(150.0, 3200), tone(300.0, 3600), tone(90.0, 4000), tone(600.0, 2400)];
        let fwd = enrollment_embedding(&enc, &segs).unwrap();
        let rev: Vec<PcmSignal> = segs.iter().rev().cloned().collect();
        let back = enrollment_embedding(&enc, &rev).unwrap();
        assert!((fwd.norm() - 1.0).abs() < 1e-9);
        for (a, b) in fwd.values().iter().zip(back.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn running_cosine_ends_at_full_embedding_cosine() {
        let enc = SpeakerEncoder::new(9, 3).unwrap();
        let feats = log_mel_features(&tone(250.0, 6000)).unwrap();
        let enroll = enc.embed_signal(&tone(260.0, 5000)).unwrap();
        let run = enc.running_cosines(&feats, &enroll).unwrap();
        let full = enc.embed(&feats).unwrap();
        let expected = cosine_similarity(full.values(), enroll.values()).unwrap();
        assert_eq!(run.len(), feats.n_frames());
        assert!((run.last().unwrap() - expected).abs() < 1e-12);
        assert!(enc.running_cosines(&feats, &SpeakerEmbedding::zero()).is_err());
    }

    #[test]
    fn encoder_parameter_budget() {
        let enc = SpeakerEncoder::new(0, 8).unwrap();
        assert_eq!(enc.embedding_parameter_count(), 1_354_752);
        assert_eq!(enc.params().scalar_count(), 1_354_752 + 256 * 8 + 8);
    }
}
