//! Synthetic multi-speaker corpus: voices, noise, mixing, labels,
//! enrollment and on-disk layout.

mod generate;
mod manifest;
mod mix;
mod synth;
mod wav;

use sha2::{Digest, Sha256};

pub use generate::{
    apply_enrollment_dropout, generate_corpus, plan_corpus, render_utterance, CorpusPlan,
    SegmentPlan, UtterancePlan, NOISE_CLIP_MS,
};
pub use manifest::{
    read_enrollment_table, write_enrollment_table, CorpusConfig, CorpusManifest, EnrollmentTable,
    ManifestHeader, SpeakerEntry, Split, UtteranceRecord, ENROLLMENT_FILE, MANIFEST_FILE,
    MANIFEST_SCHEMA_VERSION, MIN_SPEAKERS,
};
pub use mix::{
    build_utterance, frame_labels, label_counts, labels_from_str, labels_to_string, mix_at_snr,
    tile_noise, FrameLabel, MixResult, SegmentSpan, Utterance, MAX_SNR_DB, MAX_UTTERANCE_MS,
    MIN_SNR_DB,
};
pub use synth::{
    speaker_roster, synth_noise, synth_segment, Formant, NoiseKind, SyntheticSpeaker,
    MAX_SEGMENT_MS, MIN_SEGMENT_MS,
};
pub use wav::{load_wav, save_wav};

/// Independent RNG seed for a named stream under a corpus seed.
pub fn stream_seed(seed: u64, tag: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(tag.as_bytes());
    h.update([0u8]);
    h.update(index.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}
