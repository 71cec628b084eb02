//! Binary feature, clip and checkpoint files.
//!
//! All three share the layout "8-byte magic, little-endian header, float32
//! little-endian payload".
//!
//! | file       | magic      | header                                          | payload            |
//! |------------|------------|-------------------------------------------------|--------------------|
//! | features   | `WANEMF01` | u32 D, u32 T, u32 reserved = 0, u64 clip hash    | D×T, frame-major   |
//! | clip       | `WANEMC01` | u32 H·W, u32 T, u32 W, u64 clip hash             | H×W×T, frame-major |
//! | checkpoint | `WANEMW01` | u32 layers, u32 H, u32 D, u32 flags              | parameters         |
//!
//! Checkpoint flags: bit 0 set when the LSTM layers carry no bias, bit 1 set
//! when the network was trained on temporal-mean-subtracted inputs. The
//! parameter order is per layer `W` (rows `i, f, o, g`; columns `[h; x]`) then
//! `b`, followed by the head weights and head bias.

use std::fs;
use std::path::Path;

use windvis_core::features::Variant;
use windvis_core::types::clip_hash;
use windvis_core::{ClipTensor, FeatureSequence, LstmConfig, LstmNetwork};

use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 8] = b"WANEMF01";
pub const CLIP_MAGIC: &[u8; 8] = b"WANEMC01";
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"WANEMW01";

pub const FEATURE_HEADER_LEN: usize = 28;
pub const CHECKPOINT_HEADER_LEN: usize = 24;

const FLAG_NO_BIAS: u32 = 1;
const FLAG_NM: u32 = 2;

fn dim(value: usize, what: &str) -> std::result::Result<u32, String> {
    u32::try_from(value).map_err(|_| format!("dimension overflow: {what} = {value}"))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn u32(&mut self) -> u32 {
        let v = u32::from_le_bytes(self.bytes[self.pos..self.pos + 4].try_into().unwrap());
        self.pos += 4;
        v
    }

    fn u64(&mut self) -> u64 {
        let v = u64::from_le_bytes(self.bytes[self.pos..self.pos + 8].try_into().unwrap());
        self.pos += 8;
        v
    }

    fn rest(&self) -> &'a [u8] {
        &self.bytes[self.pos..]
    }
}

fn check_magic(
    bytes: &[u8],
    magic: &[u8; 8],
    header_len: usize,
) -> std::result::Result<(), String> {
    if bytes.len() < 8 || &bytes[..8] != magic {
        return Err(format!(
            "bad magic (expected {})",
            String::from_utf8_lossy(magic)
        ));
    }
    if bytes.len() < header_len {
        return Err("truncated header".into());
    }
    Ok(())
}

fn f32_payload(bytes: &[u8], count: usize) -> std::result::Result<Vec<f32>, String> {
    let needed = count.checked_mul(4).ok_or("dimension overflow")?;
    if bytes.len() < needed {
        return Err(format!(
            "truncated payload: need {needed} bytes, have {}",
            bytes.len()
        ));
    }
    if bytes.len() > needed {
        return Err(format!(
            "trailing bytes: expected {needed}, have {}",
            bytes.len()
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// A decoded feature file.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    pub sequence: FeatureSequence,
    pub clip_hash: u64,
}

pub fn encode_features(seq: &FeatureSequence, hash: u64) -> std::result::Result<Vec<u8>, String> {
    let d = dim(seq.num_features(), "features per frame")?;
    let t = dim(seq.num_frames(), "frames")?;
    let mut out = Vec::with_capacity(FEATURE_HEADER_LEN + 4 * seq.values().len());
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&d.to_le_bytes());
    out.extend_from_slice(&t.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&hash.to_le_bytes());
    for (i, &v) in seq.values().iter().enumerate() {
        let x = v as f32;
        if !x.is_finite() {
            let (frame, feature) = (i / seq.num_features(), i % seq.num_features());
            return Err(format!(
                "non-finite feature at frame {frame}, feature {feature} after narrowing to f32"
            ));
        }
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_features(bytes: &[u8]) -> std::result::Result<FeatureFile, String> {
    check_magic(bytes, FEATURE_MAGIC, FEATURE_HEADER_LEN)?;
    let mut r = Reader { bytes, pos: 8 };
    let (d, t, reserved, hash) = (r.u32() as usize, r.u32() as usize, r.u32(), r.u64());
    if reserved != 0 {
        return Err(format!("reserved header field is {reserved}, expected 0"));
    }
    let count = d.checked_mul(t).ok_or("dimension overflow")?;
    let values = f32_payload(r.rest(), count)?;
    let sequence = FeatureSequence::new(d, t, values.into_iter().map(f64::from).collect())
        .map_err(|e| e.to_string())?;
    Ok(FeatureFile {
        sequence,
        clip_hash: hash,
    })
}

/// Writes `seq` tagged with the hash of `clip_id`.
pub fn write_feature_file(path: &Path, seq: &FeatureSequence, clip_id: &str) -> Result<()> {
    let bytes = encode_features(seq, clip_hash(clip_id)).map_err(|e| Error::format(path, e))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_feature_file(path: &Path) -> Result<FeatureFile> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes).map_err(|e| Error::format(path, e))
}

pub fn encode_clip(clip: &ClipTensor, hash: u64) -> std::result::Result<Vec<u8>, String> {
    let hw = dim(clip.height() * clip.width(), "pixels per frame")?;
    let t = dim(clip.num_frames(), "frames")?;
    let w = dim(clip.width(), "width")?;
    let mut out = Vec::with_capacity(FEATURE_HEADER_LEN + 4 * clip.pixels().len());
    out.extend_from_slice(CLIP_MAGIC);
    out.extend_from_slice(&hw.to_le_bytes());
    out.extend_from_slice(&t.to_le_bytes());
    out.extend_from_slice(&w.to_le_bytes());
    out.extend_from_slice(&hash.to_le_bytes());
    for p in clip.pixels() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    Ok(out)
}

/// Decodes a clip file; frame rate and start time are not stored and come
/// from the caller.
pub fn decode_clip(
    bytes: &[u8],
    frame_rate_hz: f64,
    timestamp_s: f64,
) -> std::result::Result<(ClipTensor, u64), String> {
    check_magic(bytes, CLIP_MAGIC, FEATURE_HEADER_LEN)?;
    let mut r = Reader { bytes, pos: 8 };
    let (hw, t, w, hash) = (
        r.u32() as usize,
        r.u32() as usize,
        r.u32() as usize,
        r.u64(),
    );
    if w == 0 || hw % w != 0 {
        return Err(format!(
            "frame of {hw} pixels is not a multiple of width {w}"
        ));
    }
    let count = hw.checked_mul(t).ok_or("dimension overflow")?;
    let pixels = f32_payload(r.rest(), count)?;
    let clip = ClipTensor::new(t, hw / w, w, frame_rate_hz, timestamp_s, pixels)
        .map_err(|e| e.to_string())?;
    Ok((clip, hash))
}

pub fn write_clip_file(path: &Path, clip: &ClipTensor, clip_id: &str) -> Result<()> {
    let bytes = encode_clip(clip, clip_hash(clip_id)).map_err(|e| Error::format(path, e))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_clip_file(path: &Path, frame_rate_hz: f64, timestamp_s: f64) -> Result<ClipTensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_clip(&bytes, frame_rate_hz, timestamp_s)
        .map(|(c, _)| c)
        .map_err(|e| Error::format(path, e))
}

/// Which of the two file kinds a path holds, judged by its magic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFileKind {
    Features,
    Clip,
}

pub fn sniff(bytes: &[u8]) -> Option<DataFileKind> {
    match bytes.get(..8)? {
        m if m == FEATURE_MAGIC => Some(DataFileKind::Features),
        m if m == CLIP_MAGIC => Some(DataFileKind::Clip),
        _ => None,
    }
}

/// A network together with the input variant it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: LstmNetwork,
    pub variant: Variant,
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> std::result::Result<Vec<u8>, String> {
    let c = ckpt.network.config();
    let mut flags = 0;
    if !c.use_bias {
        flags |= FLAG_NO_BIAS;
    }
    if ckpt.variant == Variant::Nm {
        flags |= FLAG_NM;
    }
    let params = ckpt.network.params();
    let mut out = Vec::with_capacity(CHECKPOINT_HEADER_LEN + 4 * params.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&dim(c.num_layers, "layers")?.to_le_bytes());
    out.extend_from_slice(&dim(c.hidden_size, "hidden size")?.to_le_bytes());
    out.extend_from_slice(&dim(c.input_size, "input size")?.to_le_bytes());
    out.extend_from_slice(&flags.to_le_bytes());
    for &p in params {
        let x = p as f32;
        if !x.is_finite() {
            return Err("non-finite parameter".into());
        }
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> std::result::Result<Checkpoint, String> {
    check_magic(bytes, CHECKPOINT_MAGIC, CHECKPOINT_HEADER_LEN)?;
    let mut r = Reader { bytes, pos: 8 };
    let (layers, hidden, input, flags) = (r.u32(), r.u32(), r.u32(), r.u32());
    if flags & !(FLAG_NO_BIAS | FLAG_NM) != 0 {
        return Err(format!("unknown checkpoint flags {flags:#x}"));
    }
    let config = LstmConfig {
        input_size: input as usize,
        hidden_size: hidden as usize,
        num_layers: layers as usize,
        use_bias: flags & FLAG_NO_BIAS == 0,
    };
    config.validate().map_err(|e| e.to_string())?;
    let params = f32_payload(r.rest(), config.num_params())?;
    let network = LstmNetwork::from_params(config, params.into_iter().map(f64::from).collect())
        .map_err(|e| e.to_string())?;
    let variant = if flags & FLAG_NM != 0 {
        Variant::Nm
    } else {
        Variant::Raw
    };
    Ok(Checkpoint { network, variant })
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let bytes = encode_checkpoint(ckpt).map_err(|e| Error::format(path, e))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|e| Error::format(path, e))
}

/// Rounds every parameter to the nearest `f32`, which is what a checkpoint
/// round trip does.
pub fn quantize(net: &LstmNetwork) -> LstmNetwork {
    let params = net.params().iter().map(|&p| p as f32 as f64).collect();
    LstmNetwork::from_params(*net.config(), params).expect("rounded copy of a valid network")
}
