//! Binary checkpoint format.
//!
//! ```text
//! "PVADCKPT" | u32 version | tag | dims | u64 seed | f64 train_loss
//! | f64 val_loss | u64 parameter_count | u32 n_tensors | tensors
//! | u32 n_children | (u64 len, child bytes)* | sha256 of everything before
//! ```
//!
//! Strings are a u16 length plus UTF-8 bytes; tensors are name, u8 rank,
//! u32 dims and f32 little-endian values. All integers are little-endian.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::dsp::N_MELS;
use crate::error::{Error, Result};
use crate::models::{
    check_same_layout, PvadModel, VadModel, VariantKind, DYNAMIC_HIDDEN, FCN_HIDDEN, LSTM_HIDDEN,
    LSTM_LAYERS, PVAD_CLASSES, VAD_CLASSES,
};
use crate::nn::{ParameterSet, Tensor};
use crate::speaker::{SpeakerEncoder, EMBEDDING_DIM, ENCODER_HIDDEN, ENCODER_LAYERS};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PVADCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointTag {
    Pvad(VariantKind),
    Vad,
    SpeakerEncoder,
}

impl CheckpointTag {
    pub fn as_str(self) -> &'static str {
        match self {
            CheckpointTag::Pvad(v) => v.as_str(),
            CheckpointTag::Vad => "VAD",
            CheckpointTag::SpeakerEncoder => "SPK",
        }
    }
}

impl fmt::Display for CheckpointTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CheckpointTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "VAD" => Ok(CheckpointTag::Vad),
            "SPK" => Ok(CheckpointTag::SpeakerEncoder),
            other => other.parse().map(CheckpointTag::Pvad),
        }
    }
}

/// Dimension record stored with each checkpoint.
pub fn expected_dims(tag: CheckpointTag, n_classes: u32) -> Vec<(String, u32)> {
    let d = |pairs: &[(&str, usize)]| {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), *v as u32))
            .collect::<Vec<_>>()
    };
    match tag {
        CheckpointTag::Pvad(VariantKind::Dsc) => d(&[("input", N_MELS), ("enrollment", EMBEDDING_DIM)]),
        CheckpointTag::Pvad(v) => {
            let mut dims = d(&[
                ("input", N_MELS),
                ("enrollment", EMBEDDING_DIM),
                ("lstm_hidden", LSTM_HIDDEN),
                ("lstm_layers", LSTM_LAYERS),
                ("fcn_hidden", FCN_HIDDEN),
                ("classes", PVAD_CLASSES),
            ]);
            if v == VariantKind::Dclf {
                dims.extend(d(&[("dynamic_hidden", DYNAMIC_HIDDEN)]));
            }
            dims
        }
        CheckpointTag::Vad => d(&[
            ("input", N_MELS),
            ("lstm_hidden", LSTM_HIDDEN),
            ("lstm_layers", LSTM_LAYERS),
            ("fcn_hidden", FCN_HIDDEN),
            ("classes", VAD_CLASSES),
        ]),
        CheckpointTag::SpeakerEncoder => {
            let mut dims = d(&[
                ("input", N_MELS),
                ("hidden", ENCODER_HIDDEN),
                ("layers", ENCODER_LAYERS),
                ("embedding", EMBEDDING_DIM),
            ]);
            dims.push(("classes".into(), n_classes));
            dims
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub tag: CheckpointTag,
    pub seed: u64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub params: ParameterSet,
    pub children: Vec<Checkpoint>,
}

fn ckpt_err(field: &'static str, reason: impl Into<String>) -> Error {
    Error::Checkpoint {
        field,
        reason: reason.into(),
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(ckpt_err(field, "file is truncated"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, field: &'static str) -> Result<u8> {
        Ok(self.take(1, field)?[0])
    }

    fn u16(&mut self, field: &'static str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, field)?.try_into().unwrap()))
    }

    fn u32(&mut self, field: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }

    fn u64(&mut self, field: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }

    fn f64(&mut self, field: &'static str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }

    fn string(&mut self, field: &'static str) -> Result<String> {
        let n = self.u16(field)? as usize;
        String::from_utf8(self.take(n, field)?.to_vec()).map_err(|_| ckpt_err(field, "invalid UTF-8"))
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u16).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

impl Checkpoint {
    pub fn n_classes(&self) -> u32 {
        match self.tag {
            CheckpointTag::SpeakerEncoder => {
                self.params.by_name("head.b").map(|t| t.len() as u32).unwrap_or(0)
            }
            _ => 0,
        }
    }

    /// Trainable scalars, counted the same way as the model types do.
    pub fn parameter_count(&self) -> usize {
        match self.tag {
            CheckpointTag::Pvad(VariantKind::Dsc) => self
                .children
                .iter()
                .map(|c| match c.tag {
                    CheckpointTag::SpeakerEncoder => {
                        c.params.scalar_count() - c.params.scalar_count_with_prefix("head.")
                    }
                    _ => c.params.scalar_count(),
                })
                .sum(),
            _ => self.params.scalar_count(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        put_str(&mut out, self.tag.as_str());
        let dims = expected_dims(self.tag, self.n_classes());
        out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
        for (k, v) in &dims {
            put_str(&mut out, k);
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.train_loss.to_le_bytes());
        out.extend_from_slice(&self.val_loss.to_le_bytes());
        out.extend_from_slice(&(self.parameter_count() as u64).to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in self.params.iter() {
            put_str(&mut out, name);
            out.push(t.shape().len() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out.extend_from_slice(&(self.children.len() as u32).to_le_bytes());
        for c in &self.children {
            let b = c.to_bytes();
            out.extend_from_slice(&(b.len() as u64).to_le_bytes());
            out.extend_from_slice(&b);
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < CHECKPOINT_MAGIC.len() || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(ckpt_err("magic", "not a PVAD checkpoint"));
        }
        if bytes.len() < 8 + 4 + DIGEST_LEN {
            return Err(ckpt_err("length", "file is truncated"));
        }
        let mut r = Reader { buf: bytes, pos: 8 };
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(ckpt_err(
                "version",
                format!("found {version}, this build reads {CHECKPOINT_VERSION}"),
            ));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(ckpt_err("checksum", "content does not match its digest (truncated or corrupt)"));
        }
        let mut r = Reader { buf: body, pos: 12 };
        let tag: CheckpointTag = r
            .string("variant")?
            .parse()
            .map_err(|e: Error| ckpt_err("variant", e.to_string()))?;
        let n_dims = r.u32("dims")? as usize;
        let mut dims = Vec::with_capacity(n_dims.min(64));
        for _ in 0..n_dims {
            let k = r.string("dims")?;
            dims.push((k, r.u32("dims")?));
        }
        let seed = r.u64("seed")?;
        let train_loss = r.f64("train_loss")?;
        let val_loss = r.f64("val_loss")?;
        let stored_count = r.u64("parameter_count")? as usize;
        let n_tensors = r.u32("tensors")? as usize;
        let mut params = ParameterSet::new();
        for _ in 0..n_tensors {
            let name = r.string("tensors")?;
            let rank = r.u8("tensors")? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32("tensors")? as usize);
            }
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(4).ok_or_else(|| ckpt_err("tensors", "size overflow"))?, "tensors")?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            let t = Tensor::from_vec(&shape, data).map_err(|e| ckpt_err("tensors", e.to_string()))?;
            params
                .add(name, t)
                .map_err(|e| ckpt_err("tensors", e.to_string()))?;
        }
        let n_children = r.u32("children")? as usize;
        let mut children = Vec::new();
        for _ in 0..n_children {
            let len = r.u64("children")? as usize;
            children.push(Checkpoint::from_bytes(r.take(len, "children")?)?);
        }
        if r.pos != body.len() {
            return Err(ckpt_err("length", "trailing bytes after the last section"));
        }
        let ck = Checkpoint {
            tag,
            seed,
            train_loss,
            val_loss,
            params,
            children,
        };
        if dims != expected_dims(tag, ck.n_classes()) {
            return Err(ckpt_err(
                "dims",
                format!("dimension record {dims:?} does not match variant {tag}"),
            ));
        }
        ck.validate_layout()?;
        if stored_count != ck.parameter_count() {
            return Err(ckpt_err(
                "parameter_count",
                format!("header says {stored_count}, tensors hold {}", ck.parameter_count()),
            ));
        }
        Ok(ck)
    }

    fn validate_layout(&self) -> Result<()> {
        let layout = |e: Error| ckpt_err("dims", format!("parameter layout does not match {}: {e}", self.tag));
        match self.tag {
            CheckpointTag::Pvad(VariantKind::Dsc) => {
                let tags: Vec<_> = self.children.iter().map(|c| c.tag).collect();
                if tags != [CheckpointTag::Vad, CheckpointTag::SpeakerEncoder] || !self.params.is_empty() {
                    return Err(ckpt_err("children", "DSC must bundle exactly a VAD and a speaker encoder"));
                }
            }
            CheckpointTag::Pvad(v) => {
                let reference = PvadModel::build(v, 0)?;
                check_same_layout(reference.params().expect("end-to-end"), &self.params).map_err(layout)?;
            }
            CheckpointTag::Vad => {
                check_same_layout(VadModel::new(0)?.params(), &self.params).map_err(layout)?;
            }
            CheckpointTag::SpeakerEncoder => {
                let n = self.n_classes() as usize;
                let reference = SpeakerEncoder::new(0, n.max(2)).map_err(layout)?;
                check_same_layout(reference.params(), &self.params).map_err(layout)?;
            }
        }
        if self.tag != CheckpointTag::Pvad(VariantKind::Dsc) && !self.children.is_empty() {
            return Err(ckpt_err("children", format!("{} checkpoints have no children", self.tag)));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn from_model(model: &PvadModel, seed: u64, train_loss: f64, val_loss: f64) -> Self {
        match model.dsc_parts() {
            Some((vad, enc)) => Checkpoint {
                tag: CheckpointTag::Pvad(VariantKind::Dsc),
                seed,
                train_loss,
                val_loss,
                params: ParameterSet::new(),
                children: vec![
                    Self::from_vad(vad, seed, f64::NAN, f64::NAN),
                    Self::from_encoder(enc, seed, f64::NAN, f64::NAN),
                ],
            },
            None => Checkpoint {
                tag: CheckpointTag::Pvad(model.variant()),
                seed,
                train_loss,
                val_loss,
                params: model.params().expect("end-to-end").clone(),
                children: Vec::new(),
            },
        }
    }

    pub fn from_vad(vad: &VadModel, seed: u64, train_loss: f64, val_loss: f64) -> Self {
        Checkpoint {
            tag: CheckpointTag::Vad,
            seed,
            train_loss,
            val_loss,
            params: vad.params().clone(),
            children: Vec::new(),
        }
    }

    pub fn from_encoder(enc: &SpeakerEncoder, seed: u64, train_loss: f64, val_loss: f64) -> Self {
        Checkpoint {
            tag: CheckpointTag::SpeakerEncoder,
            seed,
            train_loss,
            val_loss,
            params: enc.params().clone(),
            children: Vec::new(),
        }
    }

    pub fn into_model(self) -> Result<PvadModel> {
        match self.tag {
            CheckpointTag::Pvad(VariantKind::Dsc) => {
                let mut it = self.children.into_iter();
                let vad = it.next().ok_or_else(|| ckpt_err("children", "missing VAD"))?.into_vad()?;
                let enc = it
                    .next()
                    .ok_or_else(|| ckpt_err("children", "missing speaker encoder"))?
                    .into_encoder()?;
                Ok(PvadModel::dsc(vad, enc))
            }
            CheckpointTag::Pvad(v) => PvadModel::from_params(v, self.params),
            other => Err(ckpt_err("variant", format!("{other} is not a PVAD system"))),
        }
    }

    pub fn into_vad(self) -> Result<VadModel> {
        if self.tag != CheckpointTag::Vad {
            return Err(ckpt_err("variant", format!("expected VAD, found {}", self.tag)));
        }
        VadModel::from_params(self.params)
    }

    pub fn into_encoder(self) -> Result<SpeakerEncoder> {
        if self.tag != CheckpointTag::SpeakerEncoder {
            return Err(ckpt_err("variant", format!("expected SPK, found {}", self.tag)));
        }
        SpeakerEncoder::from_params(self.params)
    }
}

/// Writes a PVAD system checkpoint.
pub fn save_checkpoint(model: &PvadModel, seed: u64, path: impl AsRef<Path>) -> Result<()> {
    Checkpoint::from_model(model, seed, f64::NAN, f64::NAN).save(path)
}

/// Reads and validates a PVAD system checkpoint.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<PvadModel> {
    Checkpoint::load(path)?.into_model()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::LogMelFrames;
    use crate::speaker::SpeakerEmbedding;

    fn features() -> LogMelFrames {
        let data = (0..6 * N_MELS).map(|i| ((i * 37) % 11) as f64 / 5.0 - 1.0).collect();
        LogMelFrames::from_rows(data, 6).unwrap()
    }

    fn enrollment() -> SpeakerEmbedding {
        SpeakerEmbedding::normalized((0..EMBEDDING_DIM).map(|i| (i as f64).cos()).collect()).unwrap()
    }

    fn round_to_f32(m: &PvadModel) -> PvadModel {
        Checkpoint::from_bytes(&Checkpoint::from_model(m, 1, 0.5, 0.6).to_bytes())
            .unwrap()
            .into_model()
            .unwrap()
    }

    #[test]
    fn round_trip_is_exact_at_f32() {
        for v in VariantKind::ALL {
            let m = PvadModel::build(v, 5).unwrap();
            let once = round_to_f32(&m);
            assert_eq!(round_to_f32(&once), once, "{v}");
            assert_eq!(once.parameter_count(), m.parameter_count());
            let a = m.posteriors(&features(), &enrollment()).unwrap();
            let b = once.posteriors(&features(), &enrollment()).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x.p_ts - y.p_ts).abs() < 1e-5, "{v}");
            }
        }
    }

    #[test]
    fn metadata_survives() {
        let m = PvadModel::build(VariantKind::Lf, 2).unwrap();
        let c = Checkpoint::from_bytes(&Checkpoint::from_model(&m, 99, 0.25, 0.5).to_bytes()).unwrap();
        assert_eq!((c.seed, c.train_loss, c.val_loss), (99, 0.25, 0.5));
        assert_eq!(c.tag, CheckpointTag::Pvad(VariantKind::Lf));
    }

    #[test]
    fn truncation_is_rejected() {
        let bytes = Checkpoint::from_model(&PvadModel::build(VariantKind::Ef, 1).unwrap(), 1, 0.0, 0.0)
            .to_bytes();
        for cut in [4, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(
                Checkpoint::from_bytes(&bytes[..cut]),
                Err(Error::Checkpoint { .. })
            ));
        }
    }

    fn reseal(mut body: Vec<u8>) -> Vec<u8> {
        let digest = Sha256::digest(&body);
        body.extend_from_slice(&digest);
        body
    }

    #[test]
    fn tampered_variant_tag_is_rejected() {
        let bytes = Checkpoint::from_model(&PvadModel::build(VariantKind::Clf, 1).unwrap(), 1, 0.0, 0.0)
            .to_bytes();
        let mut body = bytes[..bytes.len() - DIGEST_LEN].to_vec();
        // tag string starts at offset 14 ("CLF" -> "EF" would change lengths; use "LF ")
        assert_eq!(&body[14..17], b"CLF");
        body[12] = 2;
        body.remove(14);
        match Checkpoint::from_bytes(&reseal(body)) {
            Err(Error::Checkpoint { field, .. }) => assert!(field == "dims", "{field}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = Checkpoint::from_model(&PvadModel::build(VariantKind::Ef, 1).unwrap(), 1, 0.0, 0.0)
            .to_bytes();
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&wrong), Err(Error::Checkpoint { field: "magic", .. })));
        bytes[8] = 9;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Checkpoint { field: "version", .. })));
    }

    #[test]
    fn dsc_bundles_two_children() {
        let m = PvadModel::build(VariantKind::Dsc, 3).unwrap();
        let c = Checkpoint::from_model(&m, 3, 0.0, 0.0);
        assert_eq!(c.children.len(), 2);
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back.parameter_count(), 1_423_106);
        let model = back.into_model().unwrap();
        assert_eq!(model.variant(), VariantKind::Dsc);
    }
}
