//! The five personalized detectors.
//!
//! * `DSC`: a standalone VAD and the speaker encoder run side by side; the
//!   VAD speech posterior is split by a per-frame speaker cosine.
//! * `EF`: enrollment embedding concatenated to every feature frame.
//! * `LF`: enrollment embedding concatenated to the LSTM encoder output.
//! * `CLF`: enrollment embedding generates FiLM scale/shift for the encoder
//!   output.
//! * `DCLF`: as CLF, but the FiLM generator also sees the cosine between the
//!   enrollment and a per-frame dynamic embedding from a jointly trained LSTM.

use std::fmt;
use std::str::FromStr;

use crate::dsp::{LogMelFrames, N_MELS};
use crate::error::{Error, Result};
use crate::nn::{
    affine_param_count, lstm_param_count, softmax_rows, Activation, AffineIds, Graph,
    Initializer, LstmIds, ParameterSet, Tensor, Var,
};
use crate::speaker::{features_tensor, SpeakerEmbedding, SpeakerEncoder, EMBEDDING_DIM};

pub const LSTM_HIDDEN: usize = 64;
pub const LSTM_LAYERS: usize = 2;
pub const FCN_HIDDEN: usize = 64;
pub const PVAD_CLASSES: usize = 3;
pub const VAD_CLASSES: usize = 2;
pub const DYNAMIC_HIDDEN: usize = 256;
/// FiLM generator output: scale and shift for each encoder unit.
pub const FILM_OUT: usize = 2 * LSTM_HIDDEN;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VariantKind {
    Dsc,
    Ef,
    Lf,
    Clf,
    Dclf,
}

impl VariantKind {
    pub const ALL: [VariantKind; 5] = [
        VariantKind::Dsc,
        VariantKind::Ef,
        VariantKind::Lf,
        VariantKind::Clf,
        VariantKind::Dclf,
    ];

    pub const END_TO_END: [VariantKind; 4] = [
        VariantKind::Ef,
        VariantKind::Lf,
        VariantKind::Clf,
        VariantKind::Dclf,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            VariantKind::Dsc => "DSC",
            VariantKind::Ef => "EF",
            VariantKind::Lf => "LF",
            VariantKind::Clf => "CLF",
            VariantKind::Dclf => "DCLF",
        }
    }

    /// Closed-form scalar parameter count for the end-to-end variants.
    pub fn analytic_parameter_count(self) -> Option<usize> {
        let encoder_tail = lstm_param_count(LSTM_HIDDEN, LSTM_HIDDEN)
            + affine_param_count(FCN_HIDDEN, FCN_HIDDEN)
            + affine_param_count(FCN_HIDDEN, PVAD_CLASSES);
        let front = lstm_param_count(N_MELS, LSTM_HIDDEN);
        match self {
            VariantKind::Dsc => None,
            VariantKind::Ef => Some(
                lstm_param_count(N_MELS + EMBEDDING_DIM, LSTM_HIDDEN)
                    + affine_param_count(LSTM_HIDDEN, FCN_HIDDEN)
                    + encoder_tail,
            ),
            VariantKind::Lf => Some(
                front + affine_param_count(LSTM_HIDDEN + EMBEDDING_DIM, FCN_HIDDEN) + encoder_tail,
            ),
            VariantKind::Clf => Some(
                front
                    + affine_param_count(EMBEDDING_DIM, FILM_OUT)
                    + affine_param_count(LSTM_HIDDEN, FCN_HIDDEN)
                    + encoder_tail,
            ),
            VariantKind::Dclf => Some(
                front
                    + lstm_param_count(N_MELS, DYNAMIC_HIDDEN)
                    + affine_param_count(EMBEDDING_DIM + 1, FILM_OUT)
                    + affine_param_count(LSTM_HIDDEN, FCN_HIDDEN)
                    + encoder_tail,
            ),
        }
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VariantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "DSC" => Ok(VariantKind::Dsc),
            "EF" => Ok(VariantKind::Ef),
            "LF" => Ok(VariantKind::Lf),
            "CLF" => Ok(VariantKind::Clf),
            "DCLF" => Ok(VariantKind::Dclf),
            other => Err(Error::Usage(format!(
                "unknown variant `{other}`; expected one of DSC, EF, LF, CLF, DCLF"
            ))),
        }
    }
}

/// Per-frame posterior over target speech, non-target speech, no speech.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FramePosterior {
    pub p_ts: f64,
    pub p_nts: f64,
    pub p_ns: f64,
}

impl FramePosterior {
    pub fn new(p_ts: f64, p_nts: f64, p_ns: f64) -> Self {
        Self { p_ts, p_nts, p_ns }
    }

    pub fn sum(&self) -> f64 {
        self.p_ts + self.p_nts + self.p_ns
    }

    pub fn is_valid(&self) -> bool {
        [self.p_ts, self.p_nts, self.p_ns]
            .iter()
            .all(|p| (0.0..=1.0).contains(p))
            && (self.sum() - 1.0).abs() <= 1e-9
    }
}

/// Per-frame speech / no-speech posterior from the standalone VAD.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VadPosterior {
    pub p_s: f64,
    pub p_ns: f64,
}

/// Combines a VAD posterior with a speaker cosine. `None` means no
/// enrollment: all speech counts as target speech.
pub fn dsc_combine(vad: VadPosterior, cosine: Option<f64>) -> Result<FramePosterior> {
    if !(0.0..=1.0).contains(&vad.p_s)
        || !(0.0..=1.0).contains(&vad.p_ns)
        || (vad.p_s + vad.p_ns - 1.0).abs() > 1e-9
    {
        return Err(Error::InvalidInput(format!("invalid VAD posterior {vad:?}")));
    }
    match cosine {
        None => Ok(FramePosterior::new(vad.p_s, 0.0, vad.p_ns)),
        Some(c) => {
            if !c.is_finite() {
                return Err(Error::InvalidInput("non-finite cosine".into()));
            }
            let s = ((c.clamp(-1.0, 1.0)) + 1.0) / 2.0;
            Ok(FramePosterior::new(vad.p_s * s, vad.p_s * (1.0 - s), vad.p_ns))
        }
    }
}

/// Standalone speech / no-speech detector: 2 LSTMs, 2 tanh layers, 2-way head.
#[derive(Debug, Clone, PartialEq)]
pub struct VadModel {
    params: ParameterSet,
}

impl VadModel {
    pub fn new(seed: u64) -> Result<Self> {
        let mut init = Initializer::new(seed);
        let mut params = ParameterSet::new();
        add_encoder_stack(&mut init, &mut params, N_MELS)?;
        init.add_affine(&mut params, "fcn1", LSTM_HIDDEN, FCN_HIDDEN)?;
        init.add_affine(&mut params, "fcn2", FCN_HIDDEN, FCN_HIDDEN)?;
        init.add_affine(&mut params, "head", FCN_HIDDEN, VAD_CLASSES)?;
        Ok(Self { params })
    }

    pub fn from_params(params: ParameterSet) -> Result<Self> {
        check_same_layout(&Self::new(0)?.params, &params)?;
        Ok(Self { params })
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Records the `[T, 2]` logits.
    pub fn logits(g: &mut Graph<'_>, feats: Var) -> Result<Var> {
        let h = encoder_stack(g, feats)?;
        fcn_head(g, h)
    }
}

/// Per-frame `(p_s, p_ns)`.
pub fn forward_vad(vad: &VadModel, features: &LogMelFrames) -> Result<Vec<VadPosterior>> {
    if features.n_frames() == 0 {
        return Err(Error::Usage("empty feature sequence".into()));
    }
    let mut g = Graph::new(&vad.params);
    let x = g.input(features_tensor(features));
    let z = VadModel::logits(&mut g, x)?;
    let p = softmax_rows(g.value(z));
    Ok((0..p.rows())
        .map(|t| VadPosterior {
            p_s: p.row(t)[0],
            p_ns: p.row(t)[1],
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
enum Inner {
    EndToEnd(ParameterSet),
    Dsc {
        vad: VadModel,
        encoder: SpeakerEncoder,
    },
}

/// One of the five systems with its weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PvadModel {
    variant: VariantKind,
    inner: Inner,
}

/// Builds a freshly initialized system. DSC uses a speaker encoder with a
/// two-class placeholder head; trained systems come from [`PvadModel::dsc`].
pub fn build_model(variant: VariantKind, seed: u64) -> Result<PvadModel> {
    PvadModel::build(variant, seed)
}

impl PvadModel {
    pub fn build(variant: VariantKind, seed: u64) -> Result<Self> {
        let inner = match variant {
            VariantKind::Dsc => Inner::Dsc {
                vad: VadModel::new(seed)?,
                encoder: SpeakerEncoder::new(seed.wrapping_add(1), 2)?,
            },
            _ => Inner::EndToEnd(end_to_end_params(variant, seed)?),
        };
        Ok(Self { variant, inner })
    }

    /// Cascade of separately trained components.
    pub fn dsc(vad: VadModel, encoder: SpeakerEncoder) -> Self {
        Self {
            variant: VariantKind::Dsc,
            inner: Inner::Dsc { vad, encoder },
        }
    }

    /// Wraps loaded end-to-end parameters after checking the layout.
    pub fn from_params(variant: VariantKind, params: ParameterSet) -> Result<Self> {
        if variant == VariantKind::Dsc {
            return Err(Error::Usage("DSC is assembled from a VAD and an encoder".into()));
        }
        check_same_layout(&end_to_end_params(variant, 0)?, &params)?;
        Ok(Self {
            variant,
            inner: Inner::EndToEnd(params),
        })
    }

    pub fn variant(&self) -> VariantKind {
        self.variant
    }

    /// Trainable parameters of an end-to-end variant.
    pub fn params(&self) -> Option<&ParameterSet> {
        match &self.inner {
            Inner::EndToEnd(p) => Some(p),
            Inner::Dsc { .. } => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<&mut ParameterSet> {
        match &mut self.inner {
            Inner::EndToEnd(p) => Some(p),
            Inner::Dsc { .. } => None,
        }
    }

    pub fn dsc_parts(&self) -> Option<(&VadModel, &SpeakerEncoder)> {
        match &self.inner {
            Inner::Dsc { vad, encoder } => Some((vad, encoder)),
            Inner::EndToEnd(_) => None,
        }
    }

    /// Scalar parameter count; DSC counts the VAD plus the embedding part of
    /// the speaker encoder.
    pub fn parameter_count(&self) -> usize {
        match &self.inner {
            Inner::EndToEnd(p) => p.scalar_count(),
            Inner::Dsc { vad, encoder } => {
                vad.parameter_count() + encoder.embedding_parameter_count()
            }
        }
    }

    /// Records the `[T, 3]` logits of an end-to-end variant.
    pub fn logits(
        variant: VariantKind,
        g: &mut Graph<'_>,
        feats: Var,
        enrollment: &SpeakerEmbedding,
    ) -> Result<Var> {
        let n_frames = g.value(feats).rows();
        let enroll = g.input(enrollment.to_row());
        let p = g.params();
        let film_ids = |p: &ParameterSet| AffineIds::lookup(p, "film");
        let h = match variant {
            VariantKind::Dsc => {
                return Err(Error::Usage("DSC has no end-to-end graph".into()));
            }
            VariantKind::Ef => {
                let x = g.concat(&[feats, enroll])?;
                encoder_stack(g, x)?
            }
            VariantKind::Lf => {
                let h = encoder_stack(g, feats)?;
                g.concat(&[h, enroll])?
            }
            VariantKind::Clf => {
                let ids = film_ids(p)?;
                let h = encoder_stack(g, feats)?;
                let gb = g.affine(enroll, ids, Activation::Identity)?;
                g.film(h, gb, 1.0)?
            }
            VariantKind::Dclf => {
                let ids = film_ids(p)?;
                let dyn_ids = LstmIds::lookup(p, "dyn")?;
                let h = encoder_stack(g, feats)?;
                let cos = if enrollment.is_zero() {
                    g.input(Tensor::filled(&[n_frames, 1], 1.0))
                } else {
                    let dynamic = g.lstm(feats, dyn_ids)?;
                    g.cosine(dynamic, enroll)?
                };
                let cond = g.concat(&[enroll, cos])?;
                let gb = g.affine(cond, ids, Activation::Identity)?;
                g.film(h, gb, 1.0)?
            }
        };
        fcn_head(g, h)
    }
}

/// Per-frame posteriors of an end-to-end variant.
pub fn forward_pvad(
    model: &PvadModel,
    features: &LogMelFrames,
    enrollment: &SpeakerEmbedding,
) -> Result<Vec<FramePosterior>> {
    let Inner::EndToEnd(params) = &model.inner else {
        return Err(Error::Usage(
            "forward_pvad does not run DSC; use posteriors() or dsc_combine".into(),
        ));
    };
    if features.n_frames() == 0 {
        return Err(Error::Usage("empty feature sequence".into()));
    }
    if enrollment.values().len() != EMBEDDING_DIM {
        return Err(Error::shape("enrollment", EMBEDDING_DIM, enrollment.values().len()));
    }
    let mut g = Graph::new(params);
    let x = g.input(features_tensor(features));
    let z = PvadModel::logits(model.variant, &mut g, x, enrollment)?;
    let p = softmax_rows(g.value(z));
    Ok((0..p.rows())
        .map(|t| FramePosterior::new(p.row(t)[0], p.row(t)[1], p.row(t)[2]))
        .collect())
}

impl PvadModel {
    /// Per-frame posteriors for any variant. For DSC the speaker cosine is
    /// taken against the running mean of the encoder states.
    pub fn posteriors(
        &self,
        features: &LogMelFrames,
        enrollment: &SpeakerEmbedding,
    ) -> Result<Vec<FramePosterior>> {
        match &self.inner {
            Inner::EndToEnd(_) => forward_pvad(self, features, enrollment),
            Inner::Dsc { vad, encoder } => {
                let vad_post = forward_vad(vad, features)?;
                if enrollment.is_zero() {
                    vad_post.into_iter().map(|v| dsc_combine(v, None)).collect()
                } else {
                    let cos = encoder.running_cosines(features, enrollment)?;
                    vad_post
                        .into_iter()
                        .zip(cos)
                        .map(|(v, c)| dsc_combine(v, Some(c)))
                        .collect()
                }
            }
        }
    }
}

fn add_encoder_stack(init: &mut Initializer, params: &mut ParameterSet, input: usize) -> Result<()> {
    init.add_lstm(params, "lstm1", input, LSTM_HIDDEN)?;
    init.add_lstm(params, "lstm2", LSTM_HIDDEN, LSTM_HIDDEN)
}

fn encoder_stack(g: &mut Graph<'_>, x: Var) -> Result<Var> {
    let l1 = LstmIds::lookup(g.params(), "lstm1")?;
    let l2 = LstmIds::lookup(g.params(), "lstm2")?;
    let h = g.lstm(x, l1)?;
    g.lstm(h, l2)
}

fn fcn_head(g: &mut Graph<'_>, h: Var) -> Result<Var> {
    let f1 = AffineIds::lookup(g.params(), "fcn1")?;
    let f2 = AffineIds::lookup(g.params(), "fcn2")?;
    let head = AffineIds::lookup(g.params(), "head")?;
    let a = g.affine(h, f1, Activation::Tanh)?;
    let b = g.affine(a, f2, Activation::Tanh)?;
    g.affine(b, head, Activation::Identity)
}

fn end_to_end_params(variant: VariantKind, seed: u64) -> Result<ParameterSet> {
    let mut init = Initializer::new(seed);
    let mut p = ParameterSet::new();
    match variant {
        VariantKind::Dsc => return Err(Error::Usage("DSC is not end-to-end".into())),
        VariantKind::Ef => {
            add_encoder_stack(&mut init, &mut p, N_MELS + EMBEDDING_DIM)?;
            init.add_affine(&mut p, "fcn1", LSTM_HIDDEN, FCN_HIDDEN)?;
        }
        VariantKind::Lf => {
            add_encoder_stack(&mut init, &mut p, N_MELS)?;
            init.add_affine(&mut p, "fcn1", LSTM_HIDDEN + EMBEDDING_DIM, FCN_HIDDEN)?;
        }
        VariantKind::Clf => {
            add_encoder_stack(&mut init, &mut p, N_MELS)?;
            init.add_affine(&mut p, "film", EMBEDDING_DIM, FILM_OUT)?;
            init.add_affine(&mut p, "fcn1", LSTM_HIDDEN, FCN_HIDDEN)?;
        }
        VariantKind::Dclf => {
            add_encoder_stack(&mut init, &mut p, N_MELS)?;
            init.add_lstm(&mut p, "dyn", N_MELS, DYNAMIC_HIDDEN)?;
            init.add_affine(&mut p, "film", EMBEDDING_DIM + 1, FILM_OUT)?;
            init.add_affine(&mut p, "fcn1", LSTM_HIDDEN, FCN_HIDDEN)?;
        }
    }
    init.add_affine(&mut p, "fcn2", FCN_HIDDEN, FCN_HIDDEN)?;
    init.add_affine(&mut p, "head", FCN_HIDDEN, PVAD_CLASSES)?;
    Ok(p)
}

/// Checks that `got` has exactly the names and shapes of `reference`.
pub(crate) fn check_same_layout(reference: &ParameterSet, got: &ParameterSet) -> Result<()> {
    if reference.len() != got.len() {
        return Err(Error::shape("parameter tensor count", reference.len(), got.len()));
    }
    for ((rn, rt), (gn, gt)) in reference.iter().zip(got.iter()) {
        if rn != gn || rt.shape() != gt.shape() {
            return Err(Error::shape(
                format!("parameter `{rn}`"),
                format!("{rn} {:?}", rt.shape()),
                format!("{gn} {:?}", gt.shape()),
            ));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests;
