//! Corpus configuration, manifest records and the enrollment table.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mix::{labels_from_str, FrameLabel, SegmentSpan, MAX_SNR_DB, MIN_SNR_DB};
use super::synth::{NoiseKind, SyntheticSpeaker, MAX_SEGMENT_MS, MIN_SEGMENT_MS};
use crate::error::{Error, Result};
use crate::speaker::{SpeakerEmbedding, MAX_ENROLLMENT_SEGMENTS, MIN_ENROLLMENT_SEGMENTS};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const ENROLLMENT_FILE: &str = "enrollment.jsonl";
pub const MIN_SPEAKERS: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub n_speakers: usize,
    pub train_utterances: usize,
    pub val_utterances: usize,
    pub test_utterances: usize,
    pub seed: u64,
    pub snr_min_db: f64,
    pub snr_max_db: f64,
    pub dropout_fraction: f64,
    pub impostor_fraction: f64,
    pub max_speakers_per_utterance: usize,
    pub segment_ms: [u32; 2],
    pub gap_ms: [u32; 2],
    pub enrollment_ms: [u32; 2],
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_speakers: 12,
            train_utterances: 200,
            val_utterances: 40,
            test_utterances: 80,
            seed: 7,
            snr_min_db: MIN_SNR_DB,
            snr_max_db: MAX_SNR_DB,
            dropout_fraction: 0.2,
            impostor_fraction: 0.5,
            max_speakers_per_utterance: 3,
            segment_ms: [400, 1200],
            gap_ms: [100, 500],
            enrollment_ms: [800, 1500],
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let infeasible = |m: String| Err(Error::Infeasible(m));
        if self.n_speakers < MIN_SPEAKERS {
            return infeasible(format!(
                "need at least {MIN_SPEAKERS} speakers, got {}",
                self.n_speakers
            ));
        }
        if self.train_utterances == 0 || self.val_utterances == 0 || self.test_utterances == 0 {
            return infeasible("every split needs at least one utterance".into());
        }
        if !(MIN_SNR_DB <= self.snr_min_db
            && self.snr_min_db <= self.snr_max_db
            && self.snr_max_db <= MAX_SNR_DB)
        {
            return infeasible(format!(
                "SNR range [{}, {}] must lie within [{MIN_SNR_DB}, {MAX_SNR_DB}]",
                self.snr_min_db, self.snr_max_db
            ));
        }
        for (name, f) in [
            ("dropout_fraction", self.dropout_fraction),
            ("impostor_fraction", self.impostor_fraction),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return infeasible(format!("{name} must be in [0, 1], got {f}"));
            }
        }
        if !(1..=3).contains(&self.max_speakers_per_utterance) {
            return infeasible("max_speakers_per_utterance must be 1, 2 or 3".into());
        }
        for (name, [lo, hi]) in [("segment_ms", self.segment_ms), ("enrollment_ms", self.enrollment_ms)]
        {
            if lo > hi || lo < MIN_SEGMENT_MS || hi > MAX_SEGMENT_MS {
                return infeasible(format!(
                    "{name} [{lo}, {hi}] must lie within [{MIN_SEGMENT_MS}, {MAX_SEGMENT_MS}]"
                ));
            }
        }
        if self.gap_ms[0] > self.gap_ms[1] {
            return infeasible("gap_ms range is reversed".into());
        }
        let worst = self.max_speakers_per_utterance as u32 * self.segment_ms[1]
            + (self.max_speakers_per_utterance as u32 + 1) * self.gap_ms[1];
        if worst > super::mix::MAX_UTTERANCE_MS {
            return infeasible(format!("utterances could reach {worst} ms"));
        }
        Ok(())
    }

    pub fn n_test_speakers(&self) -> usize {
        ((self.n_speakers as f64 / 3.0).round() as usize).max(2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerEntry {
    #[serde(flatten)]
    pub speaker: SyntheticSpeaker,
    /// `train` speakers appear in train and val utterances, `test` speakers
    /// only in test utterances.
    pub split: Split,
    pub enrollment_wavs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub schema_version: u32,
    pub seed: u64,
    pub config: CorpusConfig,
    pub speakers: Vec<SpeakerEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub id: String,
    pub wav: String,
    pub split: Split,
    pub target_speaker_id: String,
    pub enrolled: bool,
    pub impostor: bool,
    pub snr_db: f64,
    pub clip_fraction: f64,
    pub noise: NoiseKind,
    pub segments: Vec<SegmentSpan>,
    pub n_frames: usize,
    /// One character per frame: `t` target, `n` non-target, `s` silence.
    pub labels: String,
}

impl UtteranceRecord {
    pub fn frame_labels(&self) -> Result<Vec<FrameLabel>> {
        let l = labels_from_str(&self.labels)?;
        if l.len() != self.n_frames {
            return Err(Error::Data(format!(
                "utterance {}: {} labels for {} frames",
                self.id,
                l.len(),
                self.n_frames
            )));
        }
        Ok(l)
    }

    pub fn has_target_speech(&self) -> bool {
        self.labels.contains('t')
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ManifestLine {
    Header(ManifestHeader),
    Utterance(UtteranceRecord),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifest {
    pub header: ManifestHeader,
    pub utterances: Vec<UtteranceRecord>,
}

impl CorpusManifest {
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = serde_json::to_string(&ManifestLine::Header(self.header.clone()))?;
        out.push('\n');
        for u in &self.utterances {
            out.push_str(&serde_json::to_string(&ManifestLine::Utterance(u.clone()))?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut header = None;
        let mut utterances = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: ManifestLine = serde_json::from_str(line)
                .map_err(|e| Error::Data(format!("manifest line {}: {e}", i + 1)))?;
            match parsed {
                ManifestLine::Header(h) if header.is_none() && i == 0 => header = Some(h),
                ManifestLine::Header(_) => {
                    return Err(Error::Data(format!("unexpected header on line {}", i + 1)))
                }
                ManifestLine::Utterance(u) => utterances.push(u),
            }
        }
        let header = header.ok_or_else(|| Error::Data("manifest has no header line".into()))?;
        if header.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::Data(format!(
                "manifest schema version {} is not supported (expected {MANIFEST_SCHEMA_VERSION})",
                header.schema_version
            )));
        }
        let m = Self { header, utterances };
        m.validate()?;
        Ok(m)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, self.to_jsonl()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::from_jsonl(&text)
    }

    fn validate(&self) -> Result<()> {
        let roster: BTreeMap<&str, Split> = self
            .header
            .speakers
            .iter()
            .map(|s| (s.speaker.speaker_id.as_str(), s.split))
            .collect();
        let mut seen = std::collections::BTreeSet::new();
        for u in &self.utterances {
            if !roster.contains_key(u.target_speaker_id.as_str()) {
                return Err(Error::Data(format!(
                    "utterance {} targets unknown speaker {}",
                    u.id, u.target_speaker_id
                )));
            }
            if !seen.insert(u.id.as_str()) {
                return Err(Error::Data(format!("duplicate utterance id {}", u.id)));
            }
            u.frame_labels()?;
        }
        Ok(())
    }

    pub fn speakers_in(&self, split: Split) -> Vec<&SpeakerEntry> {
        self.header.speakers.iter().filter(|s| s.split == split).collect()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &UtteranceRecord> {
        self.utterances.iter().filter(move |u| u.split == split)
    }

    pub fn speaker(&self, id: &str) -> Option<&SpeakerEntry> {
        self.header.speakers.iter().find(|s| s.speaker.speaker_id == id)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct EnrollmentLine {
    schema_version: u32,
    speaker_id: String,
    n_segments: usize,
    embedding: String,
}

/// Enrollment embeddings keyed by speaker id.
pub type EnrollmentTable = BTreeMap<String, SpeakerEmbedding>;

pub fn write_enrollment_table(
    dir: &Path,
    table: &EnrollmentTable,
    segment_counts: &BTreeMap<String, usize>,
) -> Result<()> {
    let path = dir.join(ENROLLMENT_FILE);
    let mut out = Vec::new();
    for (id, e) in table {
        let line = EnrollmentLine {
            schema_version: MANIFEST_SCHEMA_VERSION,
            speaker_id: id.clone(),
            n_segments: segment_counts.get(id).copied().unwrap_or(0),
            embedding: e.to_base64(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n").expect("write to Vec");
    }
    fs::write(&path, out).map_err(|e| Error::io(path, e))
}

pub fn read_enrollment_table(dir: &Path) -> Result<EnrollmentTable> {
    let path = dir.join(ENROLLMENT_FILE);
    let f = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut table = EnrollmentTable::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let l: EnrollmentLine = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("enrollment line {}: {e}", i + 1)))?;
        if l.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::Data(format!(
                "enrollment schema version {} is not supported",
                l.schema_version
            )));
        }
        if !(MIN_ENROLLMENT_SEGMENTS..=MAX_ENROLLMENT_SEGMENTS).contains(&l.n_segments) {
            return Err(Error::EnrollmentCount(l.n_segments));
        }
        table.insert(l.speaker_id, SpeakerEmbedding::from_base64(&l.embedding)?);
    }
    Ok(table)
}
