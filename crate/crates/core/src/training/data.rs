//! Turning a corpus directory into training examples.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::corpus::{
    load_wav, read_enrollment_table, write_enrollment_table, CorpusManifest, EnrollmentTable,
    Split, UtteranceRecord, ENROLLMENT_FILE,
};
use crate::dsp::{frame_center, log_mel_features, LogMelFrames, PcmSignal};
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::speaker::{enrollment_embedding, features_tensor, SpeakerEmbedding, SpeakerEncoder};

use super::{train_encoder, Checkpoint, EpochLoss, TrainConfig};

pub const ENCODER_CHECKPOINT_FILE: &str = "speaker_encoder.ckpt";
/// Longest single-speaker crop used for encoder training.
pub const ENCODER_CROP_FRAMES: usize = 80;

/// One training sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub features: Tensor,
    /// Per-frame class indices, or a single class for sequence targets.
    pub labels: Vec<usize>,
    pub enrollment: SpeakerEmbedding,
}

/// Manifest plus log-mel features of every utterance.
#[derive(Debug, Clone)]
pub struct CorpusData {
    pub dir: PathBuf,
    pub manifest: CorpusManifest,
    features: BTreeMap<String, LogMelFrames>,
}

impl CorpusData {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let manifest = CorpusManifest::read(&dir)?;
        let mut features = BTreeMap::new();
        for u in &manifest.utterances {
            let f = log_mel_features(&load_wav(dir.join(&u.wav))?)?;
            if f.n_frames() != u.n_frames {
                return Err(Error::Data(format!(
                    "utterance {}: audio has {} frames, manifest says {}",
                    u.id,
                    f.n_frames(),
                    u.n_frames
                )));
            }
            features.insert(u.id.clone(), f);
        }
        Ok(Self {
            dir,
            manifest,
            features,
        })
    }

    pub fn features(&self, id: &str) -> Result<&LogMelFrames> {
        self.features
            .get(id)
            .ok_or_else(|| Error::Data(format!("no features for utterance {id}")))
    }

    pub fn enrollment_signals(&self, speaker_id: &str) -> Result<Vec<PcmSignal>> {
        let entry = self
            .manifest
            .speaker(speaker_id)
            .ok_or_else(|| Error::Data(format!("unknown speaker {speaker_id}")))?;
        entry
            .enrollment_wavs
            .iter()
            .map(|p| load_wav(self.dir.join(p)))
            .collect()
    }

    /// Train-split speaker ids in class-index order.
    pub fn train_speaker_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .manifest
            .speakers_in(Split::Train)
            .iter()
            .map(|s| s.speaker.speaker_id.clone())
            .collect();
        ids.sort();
        ids
    }

    pub fn records(&self, split: Split) -> impl Iterator<Item = &UtteranceRecord> {
        self.manifest.split(split)
    }
}

/// Utterances of `split` with 3-class frame targets and their enrollment
/// (zero for dropped-out utterances).
pub fn pvad_examples(data: &CorpusData, split: Split, table: &EnrollmentTable) -> Result<Vec<Example>> {
    data.records(split)
        .map(|u| {
            let enrollment = if u.enrolled {
                table.get(&u.target_speaker_id).cloned().ok_or_else(|| {
                    Error::Data(format!("no enrollment embedding for {}", u.target_speaker_id))
                })?
            } else {
                SpeakerEmbedding::zero()
            };
            Ok(Example {
                id: u.id.clone(),
                features: features_tensor(data.features(&u.id)?),
                labels: u.frame_labels()?.iter().map(|l| l.class_index()).collect(),
                enrollment,
            })
        })
        .collect()
}

/// Utterances of `split` with speech (0) / no-speech (1) targets.
pub fn vad_examples(data: &CorpusData, split: Split) -> Result<Vec<Example>> {
    data.records(split)
        .map(|u| {
            Ok(Example {
                id: u.id.clone(),
                features: features_tensor(data.features(&u.id)?),
                labels: u
                    .frame_labels()?
                    .iter()
                    .map(|l| if l.is_speech() { 0 } else { 1 })
                    .collect(),
                enrollment: SpeakerEmbedding::zero(),
            })
        })
        .collect()
}

/// Single-speaker crops of at most [`ENCODER_CROP_FRAMES`] frames cut from
/// `split` utterances, at most `per_speaker` per train speaker, labelled
/// with the speaker's class index.
pub fn encoder_examples(data: &CorpusData, split: Split, per_speaker: usize) -> Result<Vec<Example>> {
    let ids = data.train_speaker_ids();
    let mut taken = vec![0usize; ids.len()];
    let mut out = Vec::new();
    for u in data.records(split) {
        let feats = data.features(&u.id)?;
        for span in &u.segments {
            let Some(class) = ids.iter().position(|s| *s == span.speaker_id) else {
                continue;
            };
            if taken[class] >= per_speaker {
                continue;
            }
            let frames: Vec<usize> = (0..feats.n_frames())
                .filter(|&i| (span.start_sample..span.end_sample).contains(&frame_center(i)))
                .take(ENCODER_CROP_FRAMES)
                .collect();
            let (Some(&first), Some(&last)) = (frames.first(), frames.last()) else {
                continue;
            };
            taken[class] += 1;
            out.push(Example {
                id: format!("{}:{}", u.id, span.start_sample),
                features: features_tensor(&feats.slice(first, last + 1)),
                labels: vec![class],
                enrollment: SpeakerEmbedding::zero(),
            });
        }
    }
    Ok(out)
}

/// Enrollment embedding for every speaker in the roster.
pub fn build_enrollment_table(
    data: &CorpusData,
    encoder: &SpeakerEncoder,
) -> Result<(EnrollmentTable, BTreeMap<String, usize>)> {
    let mut table = EnrollmentTable::new();
    let mut counts = BTreeMap::new();
    for s in &data.manifest.header.speakers {
        let id = &s.speaker.speaker_id;
        let signals = data.enrollment_signals(id)?;
        counts.insert(id.clone(), signals.len());
        table.insert(id.clone(), enrollment_embedding(encoder, &signals)?);
    }
    Ok((table, counts))
}

/// Loads the corpus speaker encoder and enrollment table, training and
/// writing them first if either is missing.
pub fn ensure_speaker_encoder(
    data: &CorpusData,
    config: &TrainConfig,
    per_speaker: usize,
    progress: impl FnMut(&EpochLoss),
) -> Result<(SpeakerEncoder, EnrollmentTable)> {
    let ckpt_path = data.dir.join(ENCODER_CHECKPOINT_FILE);
    if ckpt_path.exists() && data.dir.join(ENROLLMENT_FILE).exists() {
        let enc = Checkpoint::load(&ckpt_path)?.into_encoder()?;
        return Ok((enc, read_enrollment_table(&data.dir)?));
    }
    let n_classes = data.train_speaker_ids().len();
    let train = encoder_examples(data, Split::Train, per_speaker)?;
    let val = encoder_examples(data, Split::Val, per_speaker.div_ceil(3))?;
    let (enc, out) = train_encoder(n_classes, &train, &val, config, progress)?;
    let best = out.best();
    let ckpt = Checkpoint::from_encoder(&enc, config.seed, best.train_loss, best.val_loss);
    ckpt.save(&ckpt_path)?;
    // continue with the stored f32 weights
    let enc = Checkpoint::load(&ckpt_path)?.into_encoder()?;
    let (table, counts) = build_enrollment_table(data, &enc)?;
    write_enrollment_table(&data.dir, &table, &counts)?;
    Ok((enc, table))
}
