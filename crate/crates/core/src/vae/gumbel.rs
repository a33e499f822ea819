//! Gumbel-max sampling and the Gumbel-softmax relaxation.

use rand::Rng;

use crate::autodiff::{group_argmax, group_softmax};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

use super::packing::{CodeGeometry, LatentCode};

/// Per-variable category probabilities produced by the encoder, `[c, l]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderOutput {
    probs: Tensor,
}

impl EncoderOutput {
    /// Rows must be non-negative and sum to one (within 1e-9).
    pub fn new(probs: Tensor) -> Result<Self> {
        let [_, l] = probs.shape() else {
            return Err(Error::invalid(format!(
                "encoder output must be [c, l], got {:?}",
                probs.shape()
            )));
        };
        for row in probs.data().chunks(*l) {
            let total: Real = row.iter().sum();
            if row.iter().any(|&p| p < 0.0 || !p.is_finite()) || (total - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!(
                    "row is not a distribution: {row:?}"
                )));
            }
        }
        Ok(EncoderOutput { probs })
    }

    pub fn from_logits(logits: &[Real], latents: usize, categories: usize) -> Self {
        EncoderOutput {
            probs: Tensor::new([latents, categories], group_softmax(logits, categories))
                .expect("logit count matches geometry"),
        }
    }

    pub fn probs(&self) -> &Tensor {
        &self.probs
    }

    pub fn latents(&self) -> usize {
        self.probs.shape()[0]
    }

    pub fn categories(&self) -> usize {
        self.probs.shape()[1]
    }

    pub fn geometry(&self) -> CodeGeometry {
        CodeGeometry {
            latents: self.latents(),
            categories: self.categories(),
        }
    }

    /// Most probable category per variable.
    pub fn argmax(&self) -> LatentCode {
        let idx = group_argmax(self.probs.data(), self.categories());
        LatentCode::new(idx.into_iter().map(|i| i as u32).collect(), self.geometry())
            .expect("argmax within range")
    }
}

/// One Gumbel(0, 1) draw: `−log(−log u)`, `u ~ Uniform(0, 1)`.
pub fn gumbel<R: Rng + ?Sized>(rng: &mut R) -> Real {
    let u = loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            break u;
        }
    };
    -(-u.ln()).ln() as Real
}

pub fn gumbel_noise<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| gumbel(rng))
}

fn log_prob(p: Real) -> Real {
    if p > 0.0 {
        p.ln()
    } else {
        Real::NEG_INFINITY
    }
}

/// `index_i = argmax_j (g_ij + log p_ij)` with caller supplied noise.
pub fn gumbel_max_with_noise(p: &EncoderOutput, noise: &Tensor) -> Result<LatentCode> {
    if noise.shape() != p.probs.shape() {
        return Err(Error::shape("gumbel_max", p.probs.shape(), noise.shape()));
    }
    let l = p.categories();
    let mut indices = Vec::with_capacity(p.latents());
    for (row, g) in p.probs.data().chunks(l).zip(noise.data().chunks(l)) {
        let mut best = 0;
        let mut best_v = Real::NEG_INFINITY;
        for (j, (&pj, &gj)) in row.iter().zip(g).enumerate() {
            let v = gj + log_prob(pj);
            if v > best_v {
                best_v = v;
                best = j;
            }
        }
        indices.push(best as u32);
    }
    LatentCode::new(indices, p.geometry())
}

/// Exact categorical sample per variable via the Gumbel-max trick.
pub fn gumbel_max_sample<R: Rng + ?Sized>(p: &EncoderOutput, rng: &mut R) -> LatentCode {
    let noise = gumbel_noise(p.probs.shape(), rng);
    gumbel_max_with_noise(p, &noise).expect("noise shaped like probs")
}

/// `y_i = exp((g_i + log p_i)/τ) / Σ_j exp((g_j + log p_j)/τ)` per variable.
pub fn gumbel_softmax_relax(p: &EncoderOutput, tau: Real, noise: &Tensor) -> Result<Tensor> {
    if !(tau > 0.0) {
        return Err(Error::invalid(format!(
            "temperature must be > 0, got {tau}"
        )));
    }
    if noise.shape() != p.probs.shape() {
        return Err(Error::shape(
            "gumbel_softmax",
            p.probs.shape(),
            noise.shape(),
        ));
    }
    let l = p.categories();
    let mut out = Vec::with_capacity(p.probs.len());
    for (row, g) in p.probs.data().chunks(l).zip(noise.data().chunks(l)) {
        let s: Vec<Real> = row
            .iter()
            .zip(g)
            .map(|(&pj, &gj)| (gj + log_prob(pj)) / tau)
            .collect();
        let max = s.iter().copied().fold(Real::NEG_INFINITY, Real::max);
        let e: Vec<Real> = s.iter().map(|&v| (v - max).exp()).collect();
        let total: Real = e.iter().sum();
        out.extend(e.into_iter().map(|v| v / total));
    }
    Tensor::new(p.probs.shape().to_vec(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dist(rows: &[&[Real]]) -> EncoderOutput {
        let l = rows[0].len();
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        EncoderOutput::new(Tensor::new([rows.len(), l], data).unwrap()).unwrap()
    }

    #[test]
    fn degenerate_distribution_always_first() {
        let p = dist(&[&[1.0, 0.0, 0.0]]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            assert_eq!(gumbel_max_sample(&p, &mut rng).indices(), &[0]);
        }
    }

    #[test]
    fn injected_noise_hand_example() {
        // log 0.7 + 0.1 = −0.257 > log 0.3 + 0.9 = −0.304
        let p = dist(&[&[0.7, 0.3]]);
        let g = Tensor::new([1, 2], vec![0.1, 0.9]).unwrap();
        assert_eq!(gumbel_max_with_noise(&p, &g).unwrap().indices(), &[0]);

        let y = gumbel_softmax_relax(&p, 1.0, &g).unwrap();
        let s0 = 0.7f64.ln() + 0.1;
        let s1 = 0.3f64.ln() + 0.9;
        let want = 1.0 / (1.0 + (s1 - s0).exp());
        assert!((y.data()[0] as f64 - want).abs() < 1e-12);
        assert!((y.data()[0] - 0.5117).abs() < 5e-4);
        assert!((y.data().iter().sum::<Real>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nonpositive_temperature_rejected() {
        let p = dist(&[&[0.5, 0.5]]);
        let g = Tensor::zeros([1, 2]);
        assert!(gumbel_softmax_relax(&p, 0.0, &g).is_err());
        assert!(gumbel_softmax_relax(&p, -1.0, &g).is_err());
    }

    #[test]
    fn invalid_rows_rejected() {
        assert!(EncoderOutput::new(Tensor::new([1, 2], vec![0.6, 0.6]).unwrap()).is_err());
        assert!(EncoderOutput::new(Tensor::new([1, 2], vec![1.5, -0.5]).unwrap()).is_err());
    }
}
