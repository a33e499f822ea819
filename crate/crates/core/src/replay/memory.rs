use rand::Rng;

use crate::buffer::{BufferItem, EvictionPolicy, IndexBuffer};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};
use crate::vae::{unpack, CodeGeometry, DiscreteVae, LatentCode, PackedCode};

/// Episodic storage behind a learner.
#[derive(Clone, Debug)]
pub enum Memory {
    /// Nothing is stored.
    None,
    /// Real examples quantized to 8 bits per value, held in an index buffer
    /// whose codes are the raw pixel bytes.
    Raw {
        buffer: IndexBuffer,
        shape: [usize; 3],
    },
    /// Latent codes of the recollection module.
    Recollection {
        vae: DiscreteVae,
        buffer: IndexBuffer,
    },
}

/// Code geometry that stores an 8-bit image of `width` values verbatim.
pub fn raw_geometry(width: usize) -> Result<CodeGeometry> {
    CodeGeometry::new(width, 256)
}

impl Memory {
    pub fn raw(shape: [usize; 3], capacity: usize, policy: EvictionPolicy) -> Result<Self> {
        let geo = raw_geometry(shape.iter().product())?;
        Ok(Memory::Raw {
            buffer: IndexBuffer::new(geo, capacity, policy)?,
            shape,
        })
    }

    pub fn recollection(vae: DiscreteVae, capacity: usize, policy: EvictionPolicy) -> Result<Self> {
        let buffer = IndexBuffer::new(vae.geometry(), capacity, policy)?;
        Ok(Memory::Recollection { vae, buffer })
    }

    pub fn buffer(&self) -> Option<&IndexBuffer> {
        match self {
            Memory::None => None,
            Memory::Raw { buffer, .. } | Memory::Recollection { buffer, .. } => Some(buffer),
        }
    }

    pub fn buffer_mut(&mut self) -> Option<&mut IndexBuffer> {
        match self {
            Memory::None => None,
            Memory::Raw { buffer, .. } | Memory::Recollection { buffer, .. } => Some(buffer),
        }
    }

    pub fn vae(&self) -> Option<&DiscreteVae> {
        match self {
            Memory::Recollection { vae, .. } => Some(vae),
            _ => None,
        }
    }

    /// Code for one input; `None` when nothing is stored.
    pub fn encode<R: Rng + ?Sized>(&self, x: &Tensor, rng: &mut R) -> Result<Option<PackedCode>> {
        match self {
            Memory::None => Ok(None),
            Memory::Raw { buffer, .. } => {
                let idx = x.data().iter().map(|&v| quantize(v)).collect();
                let code = LatentCode::new(idx, buffer.geometry())?;
                Ok(Some(crate::vae::pack(&code, buffer.geometry())?))
            }
            Memory::Recollection { vae, .. } => Ok(vae.compress(x, rng)?.pop()),
        }
    }

    pub fn store<R: Rng + ?Sized>(
        &mut self,
        x: &Tensor,
        label: u16,
        task: u16,
        rng: &mut R,
    ) -> Result<()> {
        let Some(code) = self.encode(x, rng)? else {
            return Ok(());
        };
        let buffer = self.buffer_mut().expect("encode returned a code");
        buffer.insert(BufferItem { code, label, task }, rng)
    }

    /// Reconstructions `[n, C, H, W]` of stored items with the current decoder.
    pub fn recall(&self, items: &[BufferItem], shape: [usize; 3]) -> Result<Tensor> {
        let n = items.len();
        match self {
            Memory::None => {
                if n == 0 {
                    Ok(Tensor::zeros([0, shape[0], shape[1], shape[2]]))
                } else {
                    Err(Error::invalid("nothing to recall without a memory"))
                }
            }
            Memory::Raw { buffer, shape } => {
                let geo = buffer.geometry();
                let mut data = Vec::with_capacity(n * geo.latents);
                for it in items {
                    let code = unpack(&it.code, geo)?;
                    data.extend(code.indices().iter().map(|&v| v as Real / 255.0));
                }
                Tensor::new(vec![n, shape[0], shape[1], shape[2]], data)
            }
            Memory::Recollection { vae, .. } => {
                if n == 0 {
                    return Ok(Tensor::zeros([0, shape[0], shape[1], shape[2]]));
                }
                let codes: Vec<PackedCode> = items.iter().map(|it| it.code.clone()).collect();
                vae.decode_packed(&codes)
            }
        }
    }
}

fn quantize(v: Real) -> u32 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u32
}
