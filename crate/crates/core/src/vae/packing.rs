//! Bit packing of categorical latent codes into `k = c·⌈log2 l⌉` bits.

use crate::error::{Error, Result};

/// Shape of a categorical code: `c` variables with `l` categories each.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CodeGeometry {
    pub latents: usize,
    pub categories: usize,
}

impl CodeGeometry {
    pub fn new(latents: usize, categories: usize) -> Result<Self> {
        if latents == 0 || categories < 2 {
            return Err(Error::invalid(format!(
                "code geometry needs c >= 1 and l >= 2, got c={latents}, l={categories}"
            )));
        }
        Ok(CodeGeometry {
            latents,
            categories,
        })
    }

    /// `⌈log2 l⌉`
    pub fn bits_per_latent(&self) -> usize {
        ceil_log2(self.categories)
    }

    /// `k = c·⌈log2 l⌉`
    pub fn code_bits(&self) -> usize {
        self.latents * self.bits_per_latent()
    }

    pub fn byte_len(&self) -> usize {
        self.code_bits().div_ceil(8)
    }
}

pub(crate) fn ceil_log2(l: usize) -> usize {
    debug_assert!(l >= 1);
    (usize::BITS - (l - 1).leading_zeros()) as usize
}

/// One category index per latent variable.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LatentCode {
    indices: Vec<u32>,
}

impl LatentCode {
    pub fn new(indices: Vec<u32>, geometry: CodeGeometry) -> Result<Self> {
        if indices.len() != geometry.latents {
            return Err(Error::invalid(format!(
                "code has {} indices, geometry wants {}",
                indices.len(),
                geometry.latents
            )));
        }
        if let Some(bad) = indices.iter().find(|&&i| i as usize >= geometry.categories) {
            return Err(Error::invalid(format!(
                "index {bad} out of range for l={}",
                geometry.categories
            )));
        }
        Ok(LatentCode { indices })
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// A packed code: `⌈k/8⌉` bytes, MSB-first, zero padded.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PackedCode {
    bytes: Vec<u8>,
}

impl PackedCode {
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        PackedCode { bytes }
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }
}

/// Variable `i` occupies stream bits `[i·b, (i+1)·b)`, most significant bit first.
pub fn pack(code: &LatentCode, geometry: CodeGeometry) -> Result<PackedCode> {
    if code.indices.len() != geometry.latents {
        return Err(Error::Geometry {
            expected_c: geometry.latents,
            expected_l: geometry.categories,
            c: code.indices.len(),
            l: geometry.categories,
        });
    }
    let b = geometry.bits_per_latent();
    let mut bytes = vec![0u8; geometry.byte_len()];
    let mut pos = 0usize;
    for &idx in &code.indices {
        if idx as usize >= geometry.categories {
            return Err(Error::invalid(format!(
                "index {idx} >= l={}",
                geometry.categories
            )));
        }
        for bit in (0..b).rev() {
            if (idx >> bit) & 1 == 1 {
                bytes[pos / 8] |= 0x80 >> (pos % 8);
            }
            pos += 1;
        }
    }
    Ok(PackedCode { bytes })
}

pub fn unpack(packed: &PackedCode, geometry: CodeGeometry) -> Result<LatentCode> {
    if packed.bytes.len() != geometry.byte_len() {
        return Err(Error::Corrupt(format!(
            "packed code has {} bytes, geometry needs {}",
            packed.bytes.len(),
            geometry.byte_len()
        )));
    }
    let b = geometry.bits_per_latent();
    let bit = |pos: usize| (packed.bytes[pos / 8] >> (7 - pos % 8)) & 1;
    let k = geometry.code_bits();
    if let Some(pos) = (k..packed.bytes.len() * 8).find(|&p| bit(p) == 1) {
        return Err(Error::Corrupt(format!("pad bit {pos} is set")));
    }
    let mut indices = Vec::with_capacity(geometry.latents);
    for v in 0..geometry.latents {
        let mut idx = 0u32;
        for j in 0..b {
            idx = (idx << 1) | bit(v * b + j) as u32;
        }
        if idx as usize >= geometry.categories {
            return Err(Error::Corrupt(format!(
                "latent {v} decodes to {idx}, outside l={}",
                geometry.categories
            )));
        }
        indices.push(idx);
    }
    Ok(LatentCode { indices })
}
