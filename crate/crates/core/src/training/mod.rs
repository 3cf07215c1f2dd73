//! Training loops for the PVAD systems, the standalone VAD and the speaker
//! encoder, plus the checkpoint format.

mod checkpoint;
mod data;

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{
    expected_dims, load_checkpoint, save_checkpoint, Checkpoint, CheckpointTag, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use data::{
    build_enrollment_table, encoder_examples, ensure_speaker_encoder, pvad_examples, vad_examples, CorpusData, Example,
    ENCODER_CHECKPOINT_FILE, ENCODER_CROP_FRAMES,
};

use crate::error::{Error, Result};
use crate::models::{PvadModel, VadModel, VariantKind};
use crate::nn::{AdamState, Gradients, Graph, ParameterSet, DEFAULT_LR};
use crate::speaker::SpeakerEncoder;

pub const DEFAULT_EPOCHS: usize = 30;

/// What a training run produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainTarget {
    Pvad(VariantKind),
    Vad,
    SpeakerEncoder,
}

impl fmt::Display for TrainTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainTarget::Pvad(v) => write!(f, "{v}"),
            TrainTarget::Vad => f.write_str("VAD"),
            TrainTarget::SpeakerEncoder => f.write_str("SPK"),
        }
    }
}

impl FromStr for TrainTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "VAD" => Ok(TrainTarget::Vad),
            "SPK" | "SPEAKER_ENCODER" => Ok(TrainTarget::SpeakerEncoder),
            other => other.parse().map(TrainTarget::Pvad),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: DEFAULT_EPOCHS,
            lr: DEFAULT_LR,
            seed: 1,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Config(format!("invalid learning rate {}", self.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Parameters with the best validation loss, and the loss history. Epoch 0
/// is the initial model.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: ParameterSet,
    pub history: Vec<EpochLoss>,
    pub best_epoch: usize,
}

impl TrainOutcome {
    pub fn best(&self) -> EpochLoss {
        self.history[self.best_epoch]
    }

    /// `epoch,train_loss,val_loss` rows.
    pub fn history_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss\n");
        for h in &self.history {
            s.push_str(&format!("{},{},{}\n", h.epoch, h.train_loss, h.val_loss));
        }
        s
    }
}

/// Records the loss of one example; `None` for the gradient means forward only.
pub type LossFn<'a> = dyn Fn(&ParameterSet, &Example, bool) -> Result<(f64, Option<Gradients>)> + 'a;

fn mean_loss(params: &ParameterSet, data: &[Example], loss: &LossFn<'_>) -> Result<f64> {
    if data.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    for ex in data {
        total += loss(params, ex, false)?.0;
    }
    Ok(total / data.len() as f64)
}

/// Per-example Adam updates with seeded shuffling and best-validation
/// retention. A non-finite loss or gradient aborts with `Error::Numeric`.
pub fn train_loop(
    mut params: ParameterSet,
    train: &[Example],
    val: &[Example],
    config: &TrainConfig,
    loss: &LossFn<'_>,
    mut progress: impl FnMut(&EpochLoss),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState::new(&params, config.lr);
    let first = EpochLoss {
        epoch: 0,
        train_loss: mean_loss(&params, train, loss)?,
        val_loss: mean_loss(&params, val, loss)?,
    };
    progress(&first);
    let mut history = vec![first];
    let mut best = (0usize, params.clone());
    let score = |h: &EpochLoss| if val.is_empty() { h.train_loss } else { h.val_loss };
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=config.epochs {
        if config.shuffle {
            order.shuffle(&mut rng);
        }
        let mut total = 0.0;
        for &i in &order {
            let (l, grads) = loss(&params, &train[i], true)?;
            let grads = grads.expect("gradients requested");
            if !l.is_finite() || !grads.all_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss or gradient at epoch {epoch} on example {} ({})",
                    i, train[i].id
                )));
            }
            adam.step(&mut params, &grads)?;
            total += l;
        }
        let h = EpochLoss {
            epoch,
            train_loss: total / train.len() as f64,
            val_loss: mean_loss(&params, val, loss)?,
        };
        if !h.train_loss.is_finite() {
            return Err(Error::Numeric(format!("training loss diverged at epoch {epoch}")));
        }
        progress(&h);
        if score(&h) < score(&history[best.0]) {
            best = (epoch, params.clone());
        }
        history.push(h);
    }
    Ok(TrainOutcome {
        params: best.1,
        history,
        best_epoch: best.0,
    })
}

fn graph_loss(
    params: &ParameterSet,
    ex: &Example,
    want_grad: bool,
    logits: impl FnOnce(&mut Graph<'_>, crate::nn::Var) -> Result<crate::nn::Var>,
) -> Result<(f64, Option<Gradients>)> {
    let mut g = Graph::new(params);
    let x = g.input(ex.features.clone());
    let z = logits(&mut g, x)?;
    let l = g.softmax_cross_entropy(z, &ex.labels)?;
    let value = g.value(l).data()[0];
    let grads = if want_grad { Some(g.backward(l)?) } else { None };
    Ok((value, grads))
}

/// Frame-level 3-class cross-entropy for an end-to-end variant.
pub fn pvad_loss(variant: VariantKind) -> impl Fn(&ParameterSet, &Example, bool) -> Result<(f64, Option<Gradients>)> {
    move |p, ex, grad| {
        graph_loss(p, ex, grad, |g, x| PvadModel::logits(variant, g, x, &ex.enrollment))
    }
}

/// Frame-level speech / no-speech cross-entropy.
pub fn vad_loss(p: &ParameterSet, ex: &Example, grad: bool) -> Result<(f64, Option<Gradients>)> {
    graph_loss(p, ex, grad, VadModel::logits)
}

/// Segment-level speaker classification cross-entropy.
pub fn encoder_loss(p: &ParameterSet, ex: &Example, grad: bool) -> Result<(f64, Option<Gradients>)> {
    graph_loss(p, ex, grad, SpeakerEncoder::class_logits)
}

pub fn train_pvad(
    variant: VariantKind,
    train: &[Example],
    val: &[Example],
    config: &TrainConfig,
    progress: impl FnMut(&EpochLoss),
) -> Result<(PvadModel, TrainOutcome)> {
    let model = PvadModel::build(variant, config.seed)?;
    let params = model
        .params()
        .ok_or_else(|| Error::Usage("DSC is trained as a VAD plus a speaker encoder".into()))?
        .clone();
    let out = train_loop(params, train, val, config, &pvad_loss(variant), progress)?;
    Ok((PvadModel::from_params(variant, out.params.clone())?, out))
}

pub fn train_vad(
    train: &[Example],
    val: &[Example],
    config: &TrainConfig,
    progress: impl FnMut(&EpochLoss),
) -> Result<(VadModel, TrainOutcome)> {
    let vad = VadModel::new(config.seed)?;
    let out = train_loop(vad.params().clone(), train, val, config, &vad_loss, progress)?;
    Ok((VadModel::from_params(out.params.clone())?, out))
}

pub fn train_encoder(
    n_classes: usize,
    train: &[Example],
    val: &[Example],
    config: &TrainConfig,
    progress: impl FnMut(&EpochLoss),
) -> Result<(SpeakerEncoder, TrainOutcome)> {
    let enc = SpeakerEncoder::new(config.seed, n_classes)?;
    let out = train_loop(enc.params().clone(), train, val, config, &encoder_loss, progress)?;
    Ok((SpeakerEncoder::from_params(out.params.clone())?, out))
}

pub fn write_history_csv(outcome: &TrainOutcome, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(outcome.history_csv().as_bytes())
        .map_err(|e| Error::io(path, e))
}
