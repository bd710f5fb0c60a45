//! Multi-image bits-back archives.
//!
//! Layout, little-endian: magic `PCDMBB1`, model hash (32 bytes), latent bin
//! width (f64), chain length (u32), auxiliary seed (u64) and word count (u32),
//! image count (u32), then per image `channels, height, width` (u32 each),
//! a SHA-256 of all pixels, the final coder state (u64), the word count (u64)
//! and the words (u32 each).

use sha2::{Digest, Sha256};

use super::bitsback::{bb_decode, bb_encode, CodecConfig};
use super::rans::AnsState;
use crate::diffusion::CascadedModel;
use crate::error::{Error, Result};
use crate::nn::EpsNet;
use crate::rng::Rng;
use crate::tensor::ImageU8;

pub const MAGIC: &[u8; 7] = b"PCDMBB1";

/// Coder state seeded with `count` pseudo-random words: the initial
/// bits-back capital.
pub fn aux_state(seed: u64, count: usize) -> AnsState {
    let mut rng = Rng::new(seed);
    let state = (rng.next_u64() >> 2) | 1 << 62;
    AnsState::from_parts(state, (0..count).map(|_| rng.next_u32()).collect()).expect("state in range")
}

/// Default capital: half a word per image dimension, at least 64 words.
pub fn default_aux_words(model: &CascadedModel<EpsNet>) -> usize {
    (model.hierarchy.image_dim() / 2).max(64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncodeReport {
    /// Net bits each image added to the stream.
    pub net_bits: Vec<f64>,
    /// Capital in bits before the first image.
    pub aux_bits: f64,
    /// Bits held by the final stream, capital included.
    pub gross_bits: f64,
    /// Archive size in bytes.
    pub archive_bytes: usize,
}

impl EncodeReport {
    pub fn net_bpd(&self, dim: usize) -> f64 {
        self.net_bits.iter().sum::<f64>() / (dim * self.net_bits.len()) as f64
    }
}

fn checksum(images: &[ImageU8]) -> [u8; 32] {
    let mut h = Sha256::new();
    for img in images {
        h.update(img.pixels());
    }
    h.finalize().into()
}

/// Encodes `images` in order; the decoder recovers them last to first and
/// returns them in the original order.
pub fn compress(
    model: &CascadedModel<EpsNet>,
    images: &[ImageU8],
    cfg: &CodecConfig,
    aux_seed: u64,
    aux_words: usize,
) -> Result<(Vec<u8>, EncodeReport)> {
    cfg.validate()?;
    if images.is_empty() {
        return Err(Error::Empty("no images to compress".into()));
    }
    let mut ans = aux_state(aux_seed, aux_words);
    let aux_bits = ans.bits();
    let mut net_bits = Vec::with_capacity(images.len());
    for img in images {
        net_bits.push(bb_encode(model, img, &mut ans, cfg)?);
    }
    let gross_bits = ans.bits();

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&model.model_hash());
    out.extend_from_slice(&cfg.delta.to_le_bytes());
    out.extend_from_slice(&(cfg.steps as u32).to_le_bytes());
    out.extend_from_slice(&aux_seed.to_le_bytes());
    out.extend_from_slice(&(aux_words as u32).to_le_bytes());
    out.extend_from_slice(&(images.len() as u32).to_le_bytes());
    for img in images {
        for d in [img.channels(), img.height(), img.width()] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
    }
    out.extend_from_slice(&checksum(images));
    out.extend_from_slice(&ans.state().to_le_bytes());
    out.extend_from_slice(&(ans.words().len() as u64).to_le_bytes());
    for w in ans.words() {
        out.extend_from_slice(&w.to_le_bytes());
    }
    let archive_bytes = out.len();
    Ok((out, EncodeReport { net_bits, aux_bits, gross_bits, archive_bytes }))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Truncated { expected: self.pos + n, found: self.bytes.len() });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Decodes an archive produced by [`compress`] with the same model and
/// checks that the auxiliary capital comes back intact.
pub fn decompress(model: &CascadedModel<EpsNet>, bytes: &[u8]) -> Result<Vec<ImageU8>> {
    if bytes.is_empty() {
        return Err(Error::Empty("empty archive".into()));
    }
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Format("not a bits-back archive".into()));
    }
    if r.take(32)? != model.model_hash() {
        return Err(Error::Format("archive was written with a different model".into()));
    }
    let delta = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
    let cfg = CodecConfig { delta, steps: r.u32()? as usize };
    cfg.validate()?;
    let aux_seed = r.u64()?;
    let aux_words = r.u32()? as usize;
    let count = r.u32()? as usize;
    if count == 0 {
        return Err(Error::Format("archive holds no images".into()));
    }
    let spec = model.hierarchy;
    for _ in 0..count {
        let dims = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
        if dims != [spec.channels, spec.height, spec.width] {
            return Err(Error::Format(format!("image dims {dims:?} do not match the model")));
        }
    }
    let sum: [u8; 32] = r.take(32)?.try_into().unwrap();
    let state = r.u64()?;
    let n_words = r.u64()? as usize;
    let payload = r.take(n_words.checked_mul(4).ok_or_else(|| Error::Format("word count overflows".into()))?)?;
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let words = payload.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect();
    let mut ans = AnsState::from_parts(state, words)?;

    let mut images = Vec::with_capacity(count);
    for i in (0..count).rev() {
        // Any failure here means the words do not come from this model.
        let img = bb_decode(model, &mut ans, &cfg)
            .map_err(|e| Error::Corrupt { position: ans.words().len(), reason: format!("image {i}: {e}") })?;
        images.push(img);
    }
    images.reverse();
    if ans != aux_state(aux_seed, aux_words) {
        return Err(Error::Corrupt {
            position: ans.words().len(),
            reason: "auxiliary bits were not reclaimed intact".into(),
        });
    }
    if checksum(&images) != sum {
        return Err(Error::Corrupt { position: 0, reason: "pixel checksum mismatch".into() });
    }
    Ok(images)
}
