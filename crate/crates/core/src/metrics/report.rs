use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{EnrollmentTable, FrameLabel, Split};
use crate::dsp::LogMelFrames;
use crate::error::{Error, Result};
use crate::models::{FramePosterior, PvadModel};
use crate::speaker::SpeakerEmbedding;
use crate::training::CorpusData;

use super::det::{det_curve, eer_from_det, DetCurve};
use super::scores::{
    accuracy_vs_duration, detection_latency, frame_score_pvad, frame_score_vad, lower_median_i64,
    median_f64, target_onset, utterance_score, DurationAccuracy, Latency, FRAME_HOP_MS,
};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_DURATIONS_MS: [u32; 7] = [200, 400, 600, 800, 1000, 1500, 2000];
/// DET curves embedded in a report keep at most this many points.
pub const REPORT_DET_POINTS: usize = 200;

/// One test utterance ready for scoring.
#[derive(Debug, Clone)]
pub struct EvalUtterance {
    pub id: String,
    pub target_speaker_id: String,
    pub enrolled: bool,
    pub impostor: bool,
    pub labels: Vec<FrameLabel>,
    pub features: LogMelFrames,
    /// Zero for utterances without enrollment.
    pub enrollment: SpeakerEmbedding,
}

impl EvalUtterance {
    /// Enrolled, non-impostor, with at least one target-speech frame.
    pub fn is_target_trial(&self) -> bool {
        self.enrolled && !self.impostor && target_onset(&self.labels).is_some()
    }

    /// The utterance cut down to `n_frames` frames starting at the first
    /// target-speech frame.
    pub fn from_target_onset(&self, n_frames: usize) -> Option<EvalUtterance> {
        let start = target_onset(&self.labels)?;
        let end = (start + n_frames).min(self.labels.len());
        Some(EvalUtterance {
            id: format!("{}@{start}", self.id),
            labels: self.labels[start..end].to_vec(),
            features: self.features.slice(start, end),
            ..self.clone()
        })
    }
}

/// Test utterances of `split` with their enrollment embeddings.
pub fn eval_set(data: &CorpusData, split: Split, table: &EnrollmentTable) -> Result<Vec<EvalUtterance>> {
    data.records(split)
        .map(|u| {
            let enrollment = if u.enrolled {
                table.get(&u.target_speaker_id).cloned().ok_or_else(|| {
                    Error::Data(format!("no enrollment embedding for {}", u.target_speaker_id))
                })?
            } else {
                SpeakerEmbedding::zero()
            };
            Ok(EvalUtterance {
                id: u.id.clone(),
                target_speaker_id: u.target_speaker_id.clone(),
                enrolled: u.enrolled,
                impostor: u.impostor,
                labels: u.frame_labels()?,
                features: data.features(&u.id)?.clone(),
                enrollment,
            })
        })
        .collect()
}

/// Anything that yields per-frame posteriors for a whole utterance.
pub trait PosteriorSource {
    fn name(&self) -> String;
    fn posteriors(&self, utt: &EvalUtterance) -> Result<Vec<FramePosterior>>;
}

impl PosteriorSource for PvadModel {
    fn name(&self) -> String {
        self.variant().to_string()
    }

    fn posteriors(&self, utt: &EvalUtterance) -> Result<Vec<FramePosterior>> {
        PvadModel::posteriors(self, &utt.features, &utt.enrollment)
    }
}

/// One-hot posteriors from the ground-truth labels.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleSource;

impl PosteriorSource for OracleSource {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn posteriors(&self, utt: &EvalUtterance) -> Result<Vec<FramePosterior>> {
        Ok(utt
            .labels
            .iter()
            .map(|l| match l {
                FrameLabel::Ts => FramePosterior::new(1.0, 0.0, 0.0),
                FrameLabel::Nts => FramePosterior::new(0.0, 1.0, 0.0),
                FrameLabel::Ns => FramePosterior::new(0.0, 0.0, 1.0),
            })
            .collect())
    }
}

/// Oracle with the target-speech decision flipped.
#[derive(Debug, Clone, Copy, Default)]
pub struct InvertedOracleSource;

impl PosteriorSource for InvertedOracleSource {
    fn name(&self) -> String {
        "inverted-oracle".into()
    }

    fn posteriors(&self, utt: &EvalUtterance) -> Result<Vec<FramePosterior>> {
        Ok(utt
            .labels
            .iter()
            .map(|l| match l {
                FrameLabel::Ts => FramePosterior::new(0.0, 0.0, 1.0),
                _ => FramePosterior::new(1.0, 0.0, 0.0),
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EerSummary {
    pub eer: f64,
    pub threshold: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserReport {
    pub user_id: String,
    pub n_utterances: usize,
    pub n_detected: usize,
    pub accuracy: f64,
    /// Lower median over detected utterances.
    pub median_latency_ms: Option<i64>,
    /// Per utterance; `None` marks a miss.
    pub latencies_ms: Vec<Option<i64>>,
}

/// Identifies where a report came from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub corpus_seed: Option<u64>,
    pub checkpoint_sha256: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub toolkit_version: String,
    pub system: String,
    pub corpus_seed: Option<u64>,
    pub checkpoint_sha256: Option<String>,
    pub n_utterances: usize,
    pub feer_pvad: Option<EerSummary>,
    pub feer_vad: Option<EerSummary>,
    pub ueer: Option<EerSummary>,
    /// Utterance-level EER threshold used for latency and accuracy.
    pub operating_threshold: Option<f64>,
    /// Lower median over users of per-user median latency.
    pub median_latency_ms: Option<i64>,
    pub median_accuracy: Option<f64>,
    pub n_target_utterances: usize,
    pub n_misses: usize,
    pub users: Vec<UserReport>,
    pub accuracy_vs_duration: Vec<DurationAccuracy>,
    pub det_pvad: Option<DetCurve>,
    pub det_vad: Option<DetCurve>,
    pub det_utterance: Option<DetCurve>,
    /// Metrics that could not be computed, with the reason.
    pub unavailable: BTreeMap<String, String>,
}

fn eer_summary(curve: &DetCurve) -> EerSummary {
    let r = eer_from_det(curve);
    EerSummary {
        eer: r.eer,
        threshold: r.operating_threshold,
        n_pos: curve.n_pos,
        n_neg: curve.n_neg,
    }
}

/// Missing strata become entries of `unavailable`; anything else propagates.
fn optional<T>(name: &str, r: Result<T>, unavailable: &mut BTreeMap<String, String>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(e @ (Error::Degenerate(_) | Error::NotApplicable(_))) => {
            unavailable.insert(name.into(), e.to_string());
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

fn check_posteriors(utt: &EvalUtterance, post: &[FramePosterior]) -> Result<()> {
    let want = utt.labels.len();
    if post.len() != want {
        return Err(Error::shape(format!("posteriors of {}", utt.id), want, post.len()));
    }
    if let Some(p) = post.iter().find(|p| !p.is_valid()) {
        return Err(Error::Numeric(format!("invalid posterior {p:?} in {}", utt.id)));
    }
    Ok(())
}

/// The EER threshold, except that when the EER is hit exactly at a DET
/// point it moves down to the lowest value with the same decisions on
/// `scores`: just above the highest score below it.
pub fn operating_threshold(scores: &[f64], curve: &DetCurve, eer_threshold: f64) -> f64 {
    let exact = curve
        .points
        .iter()
        .any(|p| p.threshold == eer_threshold && p.fpr == p.fnr);
    if !exact {
        return eer_threshold;
    }
    scores
        .iter()
        .copied()
        .filter(|&s| s < eer_threshold)
        .fold(None, |m: Option<f64>, s| Some(m.map_or(s, |m| m.max(s))))
        .map_or(eer_threshold, f64::next_up)
}

/// Every metric for one system over a test set.
pub fn evaluate_suite(
    source: &dyn PosteriorSource,
    utterances: &[EvalUtterance],
    durations_ms: &[u32],
    meta: &ReportMeta,
) -> Result<MetricsReport> {
    let mut unavailable = BTreeMap::new();
    let mut pvad = (Vec::new(), Vec::new());
    let mut vad = (Vec::new(), Vec::new());
    let mut utt = (Vec::new(), Vec::new());
    let mut pvad_scores = Vec::with_capacity(utterances.len());
    for u in utterances {
        let post = source.posteriors(u)?;
        check_posteriors(u, &post)?;
        let s: Vec<f64> = post.iter().map(frame_score_pvad).collect();
        if u.enrolled {
            pvad.0.extend_from_slice(&s);
            pvad.1.extend(u.labels.iter().map(|&l| l == FrameLabel::Ts));
            if u.impostor || u.is_target_trial() {
                utt.0.push(utterance_score(&s)?);
                utt.1.push(!u.impostor);
            }
        } else {
            vad.0.extend(post.iter().map(frame_score_vad));
            vad.1.extend(u.labels.iter().map(|l| l.is_speech()));
        }
        pvad_scores.push(s);
    }
    let det_pvad = optional("feer_pvad", det_curve(&pvad.0, &pvad.1), &mut unavailable)?;
    let det_vad = optional("feer_vad", det_curve(&vad.0, &vad.1), &mut unavailable)?;
    let det_utt = optional("ueer", det_curve(&utt.0, &utt.1), &mut unavailable)?;
    let ueer = det_utt.as_ref().map(eer_summary);
    let threshold = det_utt
        .as_ref()
        .zip(ueer)
        .map(|(c, e)| operating_threshold(&utt.0, c, e.threshold));

    let mut users: BTreeMap<&str, Vec<(Latency, f64)>> = BTreeMap::new();
    let mut target_scores = Vec::new();
    let mut target_labels = Vec::new();
    let mut report_users = Vec::new();
    let mut n_targets = 0;
    let mut n_misses = 0;
    let mut avd = Vec::new();
    if let Some(th) = threshold {
        for (u, s) in utterances.iter().zip(&pvad_scores) {
            if !u.is_target_trial() {
                continue;
            }
            n_targets += 1;
            let lat = detection_latency(s, &u.labels, th)?;
            if lat == Latency::Miss {
                n_misses += 1;
            }
            users
                .entry(&u.target_speaker_id)
                .or_default()
                .push((lat, utterance_score(s)?));
            if let Some(&longest) = durations_ms.last() {
                let crop = u
                    .from_target_onset(longest as usize / FRAME_HOP_MS as usize + 1)
                    .expect("target trials have an onset");
                let post = source.posteriors(&crop)?;
                check_posteriors(&crop, &post)?;
                target_scores.push(post.iter().map(frame_score_pvad).collect());
                target_labels.push(crop.labels);
            }
        }
        for (id, trials) in &users {
            let lats: Vec<i64> = trials.iter().filter_map(|t| t.0.ms()).collect();
            report_users.push(UserReport {
                user_id: id.to_string(),
                n_utterances: trials.len(),
                n_detected: lats.len(),
                accuracy: lats.len() as f64 / trials.len() as f64,
                median_latency_ms: lower_median_i64(&lats),
                latencies_ms: trials.iter().map(|t| t.0.ms()).collect(),
            });
        }
        if !durations_ms.is_empty() {
            avd = optional(
                "accuracy_vs_duration",
                accuracy_vs_duration(&target_scores, &target_labels, durations_ms, th),
                &mut unavailable,
            )?
            .unwrap_or_default();
        }
    } else {
        unavailable.insert(
            "latency_accuracy".into(),
            "no operating threshold without an utterance-level EER".into(),
        );
    }
    let user_medians: Vec<i64> = report_users.iter().filter_map(|u| u.median_latency_ms).collect();
    let user_acc: Vec<f64> = report_users.iter().map(|u| u.accuracy).collect();
    if threshold.is_some() && user_medians.is_empty() {
        unavailable.insert("median_latency_ms".into(), "no detections".into());
    }
    Ok(MetricsReport {
        schema_version: REPORT_SCHEMA_VERSION,
        toolkit_version: crate::VERSION.to_string(),
        system: source.name(),
        corpus_seed: meta.corpus_seed,
        checkpoint_sha256: meta.checkpoint_sha256.clone(),
        n_utterances: utterances.len(),
        feer_pvad: det_pvad.as_ref().map(eer_summary),
        feer_vad: det_vad.as_ref().map(eer_summary),
        ueer,
        operating_threshold: threshold,
        median_latency_ms: lower_median_i64(&user_medians),
        median_accuracy: median_f64(&user_acc),
        n_target_utterances: n_targets,
        n_misses,
        users: report_users,
        accuracy_vs_duration: avd,
        det_pvad,
        det_vad,
        det_utterance: det_utt,
        unavailable,
    })
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let r: MetricsReport = serde_json::from_str(s)?;
        if r.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::Data(format!(
                "report schema {} is not supported (expected {REPORT_SCHEMA_VERSION})",
                r.schema_version
            )));
        }
        Ok(r)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s).map_err(|e| match e {
            Error::Json(j) => Error::Data(format!("{}: {j}", path.display())),
            other => other,
        })
    }

    /// `metric,value` rows; unavailable metrics have an empty value.
    pub fn summary_csv(&self) -> String {
        let mut rows: Vec<(String, String)> = vec![
            ("system".into(), self.system.clone()),
            ("toolkit_version".into(), self.toolkit_version.clone()),
            ("corpus_seed".into(), opt(self.corpus_seed)),
            ("checkpoint_sha256".into(), opt(self.checkpoint_sha256.clone())),
            ("n_utterances".into(), self.n_utterances.to_string()),
            ("feer_pvad".into(), opt(self.feer_pvad.map(|e| e.eer))),
            ("feer_vad".into(), opt(self.feer_vad.map(|e| e.eer))),
            ("ueer".into(), opt(self.ueer.map(|e| e.eer))),
            ("operating_threshold".into(), opt(self.operating_threshold)),
            ("median_latency_ms".into(), opt(self.median_latency_ms)),
            ("median_accuracy".into(), opt(self.median_accuracy)),
            ("n_target_utterances".into(), self.n_target_utterances.to_string()),
            ("n_misses".into(), self.n_misses.to_string()),
        ];
        for d in &self.accuracy_vs_duration {
            rows.push((format!("accuracy_at_{}ms", d.duration_ms), d.accuracy.to_string()));
        }
        let mut s = String::from("metric,value\n");
        for (k, v) in rows {
            s.push_str(&format!("{k},{v}\n"));
        }
        s
    }

    pub fn users_csv(&self) -> String {
        let mut s = String::from("user_id,n_utterances,n_detected,accuracy,median_latency_ms\n");
        for u in &self.users {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                u.user_id,
                u.n_utterances,
                u.n_detected,
                u.accuracy,
                opt(u.median_latency_ms)
            ));
        }
        s
    }

    /// Writes `<stem>.json` (with thinned DET curves), `<stem>.csv`, `<stem>_users.csv` and one
    /// `<stem>_det_<kind>.csv` per available DET curve. Returns the paths.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut files = vec![
            (format!("{stem}.json"), self.with_decimated_curves().to_json()? + "\n"),
            (format!("{stem}.csv"), self.summary_csv()),
            (format!("{stem}_users.csv"), self.users_csv()),
        ];
        for (kind, c) in [
            ("pvad", &self.det_pvad),
            ("vad", &self.det_vad),
            ("utterance", &self.det_utterance),
        ] {
            if let Some(c) = c {
                files.push((format!("{stem}_det_{kind}.csv"), c.to_csv()));
            }
        }
        files
            .into_iter()
            .map(|(name, body)| {
                let p = dir.join(name);
                std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
                Ok(p)
            })
            .collect()
    }

    /// Copy with DET curves thinned to [`REPORT_DET_POINTS`].
    pub fn with_decimated_curves(&self) -> Self {
        let mut r = self.clone();
        for c in [&mut r.det_pvad, &mut r.det_vad, &mut r.det_utterance] {
            if let Some(curve) = c {
                *curve = curve.decimated(REPORT_DET_POINTS);
            }
        }
        r
    }
}
