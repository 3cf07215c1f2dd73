//! Corpus planning, rendering and enrollment dropout.

use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::manifest::{
    CorpusConfig, CorpusManifest, ManifestHeader, SpeakerEntry, Split, UtteranceRecord,
    MANIFEST_SCHEMA_VERSION,
};
use super::mix::{build_utterance, labels_to_string, tile_noise};
use super::stream_seed;
use super::synth::{speaker_roster, synth_noise, synth_segment, NoiseKind, SyntheticSpeaker};
use super::wav::save_wav;
use crate::dsp::SAMPLE_RATE_HZ;
use crate::error::{Error, Result};

/// Length of the noise clip drawn per utterance before tiling.
pub const NOISE_CLIP_MS: usize = 3000;

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentPlan {
    pub speaker: usize,
    pub duration_ms: u32,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtterancePlan {
    pub id: String,
    pub split: Split,
    pub target: usize,
    pub impostor: bool,
    pub segments: Vec<SegmentPlan>,
    pub gaps_ms: Vec<u32>,
    pub snr_db: f64,
    pub noise_kind: NoiseKind,
    pub noise_seed: u64,
    pub noise_offset: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusPlan {
    pub config: CorpusConfig,
    pub roster: Vec<SyntheticSpeaker>,
    /// Roster indices per speaker split.
    pub train_speakers: Vec<usize>,
    pub test_speakers: Vec<usize>,
    /// Enrollment segments per roster index.
    pub enrollment: Vec<Vec<SegmentPlan>>,
    pub utterances: Vec<UtterancePlan>,
}

fn uniform_ms(rng: &mut ChaCha8Rng, [lo, hi]: [u32; 2]) -> u32 {
    rng.random_range(lo..=hi)
}

/// Everything about the corpus except the audio itself.
pub fn plan_corpus(config: &CorpusConfig) -> Result<CorpusPlan> {
    config.validate()?;
    let seed = config.seed;
    let roster = speaker_roster(config.n_speakers, stream_seed(seed, "roster", 0));

    let mut order: Vec<usize> = (0..config.n_speakers).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(stream_seed(seed, "speaker-split", 0)));
    let n_test = config.n_test_speakers();
    let mut test_speakers = order[..n_test].to_vec();
    let mut train_speakers = order[n_test..].to_vec();
    test_speakers.sort_unstable();
    train_speakers.sort_unstable();

    let enrollment = (0..config.n_speakers)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, "enroll", k as u64));
            let n = rng.random_range(3..=5);
            (0..n)
                .map(|_| SegmentPlan {
                    speaker: k,
                    duration_ms: uniform_ms(&mut rng, config.enrollment_ms),
                    seed: rng.random(),
                })
                .collect()
        })
        .collect();

    let n_impostor = (config.impostor_fraction * config.test_utterances as f64).round() as usize;
    let mut test_idx: Vec<usize> = (0..config.test_utterances).collect();
    test_idx.shuffle(&mut ChaCha8Rng::seed_from_u64(stream_seed(seed, "impostor", 0)));
    let mut is_impostor = vec![false; config.test_utterances];
    for &i in &test_idx[..n_impostor] {
        is_impostor[i] = true;
    }

    let mut utterances = Vec::new();
    for split in Split::ALL {
        let (count, pool) = match split {
            Split::Train => (config.train_utterances, &train_speakers),
            Split::Val => (config.val_utterances, &train_speakers),
            Split::Test => (config.test_utterances, &test_speakers),
        };
        for i in 0..count {
            let impostor = split == Split::Test && is_impostor[i];
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, split.as_str(), i as u64));
            utterances.push(plan_utterance(config, split, i, pool, impostor, &mut rng)?);
        }
    }
    Ok(CorpusPlan {
        config: config.clone(),
        roster,
        train_speakers,
        test_speakers,
        enrollment,
        utterances,
    })
}

fn plan_utterance(
    config: &CorpusConfig,
    split: Split,
    index: usize,
    pool: &[usize],
    impostor: bool,
    rng: &mut ChaCha8Rng,
) -> Result<UtterancePlan> {
    let (target, candidates): (Option<usize>, Vec<usize>) = if impostor {
        let t = *pool.choose(rng).expect("non-empty pool");
        (Some(t), pool.iter().copied().filter(|&s| s != t).collect())
    } else {
        (None, pool.to_vec())
    };
    let max_k = config.max_speakers_per_utterance.min(candidates.len());
    if max_k == 0 {
        return Err(Error::Infeasible(format!(
            "{split} split has too few speakers for impostor utterances"
        )));
    }
    let k = rng.random_range(1..=max_k);
    let chosen: Vec<usize> = candidates.choose_multiple(rng, k).copied().collect();
    let target = target.unwrap_or_else(|| *chosen.choose(rng).expect("k >= 1"));
    let segments = chosen
        .iter()
        .map(|&s| SegmentPlan {
            speaker: s,
            duration_ms: uniform_ms(rng, config.segment_ms),
            seed: rng.random(),
        })
        .collect();
    let gaps_ms = (0..=k).map(|_| uniform_ms(rng, config.gap_ms)).collect();
    let snr_db = if config.snr_max_db > config.snr_min_db {
        rng.random_range(config.snr_min_db..config.snr_max_db)
    } else {
        config.snr_min_db
    };
    let noise_kind = if rng.random::<bool>() {
        NoiseKind::White
    } else {
        NoiseKind::Modulated
    };
    let noise_seed = rng.random();
    let noise_offset = rng.random_range(0..NOISE_CLIP_MS * SAMPLE_RATE_HZ as usize / 1000);
    Ok(UtterancePlan {
        id: format!("{split}-{index:04}"),
        split,
        target,
        impostor,
        segments,
        gaps_ms,
        snr_db,
        noise_kind,
        noise_seed,
        noise_offset,
    })
}

/// Renders one planned utterance into its manifest record and audio.
pub fn render_utterance(
    plan: &CorpusPlan,
    u: &UtterancePlan,
) -> Result<(UtteranceRecord, crate::dsp::PcmSignal)> {
    let segments = u
        .segments
        .iter()
        .map(|s| {
            let spk = &plan.roster[s.speaker];
            Ok((spk.speaker_id.clone(), synth_segment(spk, s.duration_ms, s.seed)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let total: usize = segments.iter().map(|(_, s)| s.len()).sum::<usize>()
        + u.gaps_ms.iter().map(|&g| g as usize * SAMPLE_RATE_HZ as usize / 1000).sum::<usize>();
    let clip = synth_noise(
        u.noise_kind,
        NOISE_CLIP_MS * SAMPLE_RATE_HZ as usize / 1000,
        u.noise_seed,
    );
    let noise = tile_noise(&clip, total, u.noise_offset)?;
    let target_id = &plan.roster[u.target].speaker_id;
    let utt = build_utterance(&segments, &u.gaps_ms, &noise, u.snr_db, target_id)?;
    let record = UtteranceRecord {
        id: u.id.clone(),
        wav: format!("wavs/{}.wav", u.id),
        split: u.split,
        target_speaker_id: target_id.clone(),
        enrolled: true,
        impostor: u.impostor,
        snr_db: u.snr_db,
        clip_fraction: utt.clip_fraction,
        noise: u.noise_kind,
        segments: utt.segments,
        n_frames: utt.frame_labels.len(),
        labels: labels_to_string(&utt.frame_labels),
    };
    Ok((record, utt.signal))
}

/// Replaces the enrollment of exactly `round(fraction * N)` utterances per
/// split with the zero sentinel and relabels their speech as target speech.
pub fn apply_enrollment_dropout(
    records: &mut [UtteranceRecord],
    fraction: f64,
    seed: u64,
) -> Result<()> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidInput(format!("dropout fraction {fraction} outside [0, 1]")));
    }
    for split in Split::ALL {
        let mut idx: Vec<usize> = records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.split == split)
            .map(|(i, _)| i)
            .collect();
        let k = (fraction * idx.len() as f64).round() as usize;
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(stream_seed(seed, split.as_str(), 0)));
        for &i in &idx[..k] {
            let r = &mut records[i];
            r.enrolled = false;
            r.labels = r.labels.replace('n', "t");
        }
    }
    Ok(())
}

/// Writes WAVs and `manifest.jsonl` under `out_dir`.
pub fn generate_corpus(config: &CorpusConfig, out_dir: &Path) -> Result<CorpusManifest> {
    let plan = plan_corpus(config)?;
    for sub in ["wavs", "enroll"] {
        let d = out_dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(d, e))?;
    }
    let mut speakers = Vec::with_capacity(plan.roster.len());
    for (k, spk) in plan.roster.iter().enumerate() {
        let mut wavs = Vec::new();
        for (j, s) in plan.enrollment[k].iter().enumerate() {
            let rel = format!("enroll/{}_{j}.wav", spk.speaker_id);
            save_wav(&synth_segment(spk, s.duration_ms, s.seed)?, out_dir.join(&rel))?;
            wavs.push(rel);
        }
        let split = if plan.test_speakers.contains(&k) {
            Split::Test
        } else {
            Split::Train
        };
        speakers.push(SpeakerEntry {
            speaker: spk.clone(),
            split,
            enrollment_wavs: wavs,
        });
    }
    let mut records = Vec::with_capacity(plan.utterances.len());
    for u in &plan.utterances {
        let (record, signal) = render_utterance(&plan, u)?;
        save_wav(&signal, out_dir.join(&record.wav))?;
        records.push(record);
    }
    apply_enrollment_dropout(
        &mut records,
        config.dropout_fraction,
        stream_seed(config.seed, "dropout", 0),
    )?;
    let manifest = CorpusManifest {
        header: ManifestHeader {
            schema_version: MANIFEST_SCHEMA_VERSION,
            seed: config.seed,
            config: config.clone(),
            speakers,
        },
        utterances: records,
    };
    manifest.write(out_dir)?;
    Ok(manifest)
}
