//! Drawing recollections: uniform code sampling, buffer sampling, the
//! nearest-neighbour distortion used to compare them, hardest-of-k active
//! selection, and diverse selection by minimum sum of squared similarities.

use rand::seq::index::sample;
use rand::Rng;

use crate::buffer::{BufferItem, IndexBuffer};
use crate::classifier::Classifier;
use crate::error::{Error, Result};
use crate::tensor::{mean_abs_diff, Real, Tensor};
use crate::vae::{DiscreteVae, LatentCode};

#[derive(Clone, Debug, PartialEq)]
pub struct SamplingConfig {
    /// Candidates scored per active pick.
    pub k_active: usize,
    /// Oversampling factor before diverse filtering.
    pub n_diverse: usize,
    /// Fraction of the remaining points examined per selection step.
    pub msss_fraction: f64,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            k_active: 10,
            n_diverse: 10,
            msss_fraction: 1.0,
            seed: 0,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_active == 0 || self.n_diverse == 0 {
            return Err(Error::Config("k_active and n_diverse must be >= 1".into()));
        }
        if !(self.msss_fraction > 0.0 && self.msss_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "msss_fraction must lie in (0, 1], got {}",
                self.msss_fraction
            )));
        }
        Ok(())
    }
}

/// Decodes `count` codes whose variables are drawn uniformly from `[0, l)`.
pub fn code_sample<R: Rng + ?Sized>(
    vae: &DiscreteVae,
    count: usize,
    rng: &mut R,
) -> Result<Tensor> {
    let geo = vae.geometry();
    let codes = (0..count)
        .map(|_| {
            let idx = (0..geo.latents)
                .map(|_| rng.random_range(0..geo.categories as u32))
                .collect();
            LatentCode::new(idx, geo)
        })
        .collect::<Result<Vec<_>>>()?;
    vae.decode(&codes)
}

/// Decoded recollections of `count` buffer draws, with their items.
pub fn recollect<R: Rng + ?Sized>(
    buffer: &IndexBuffer,
    vae: &DiscreteVae,
    count: usize,
    rng: &mut R,
) -> Result<(Tensor, Vec<BufferItem>)> {
    if buffer.geometry() != vae.geometry() {
        return Err(Error::invalid(
            "buffer and autoencoder code geometries differ",
        ));
    }
    let items = buffer.sample(count, rng).items;
    if items.is_empty() {
        let [c, h, w] = vae.config().input_shape;
        return Ok((Tensor::zeros([0, c, h, w]), items));
    }
    let codes: Vec<_> = items.iter().map(|it| it.code.clone()).collect();
    Ok((vae.decode_packed(&codes)?, items))
}

/// Mean over `samples` of the L1 (mean absolute) distance to the nearest
/// reference.
pub fn nn_distortion(samples: &[&[Real]], references: &[&[Real]]) -> Result<Real> {
    if references.is_empty() {
        return Err(Error::invalid("nn_distortion needs at least one reference"));
    }
    if samples.is_empty() {
        return Ok(0.0);
    }
    let width = references[0].len();
    if samples.iter().chain(references).any(|r| r.len() != width) {
        return Err(Error::invalid("samples and references differ in width"));
    }
    let total: Real = samples
        .iter()
        .map(|s| {
            references
                .iter()
                .map(|r| mean_abs_diff(s, r))
                .fold(Real::INFINITY, Real::min)
        })
        .sum();
    Ok(total / samples.len() as Real)
}

/// Cross-entropy of each row of `targets` under the student's prediction.
pub fn per_example_losses(
    student: &Classifier,
    x: &Tensor,
    tasks: &[u16],
    targets: &Tensor,
) -> Result<Vec<Real>> {
    let p = student.probabilities(x, tasks)?;
    let k = student.classes();
    if targets.shape() != p.shape() {
        return Err(Error::shape(
            "per_example_losses",
            targets.shape(),
            p.shape(),
        ));
    }
    Ok(p.data()
        .chunks(k)
        .zip(targets.data().chunks(k))
        .map(|(pr, tr)| {
            pr.iter()
                .zip(tr)
                .filter(|(_, &t)| t > 0.0)
                .map(|(&q, &t)| -t * q.max(crate::autodiff::PROB_CLAMP).ln())
                .sum()
        })
        .collect())
}

/// Index of the candidate with the largest student loss; ties go to the
/// lowest index.
pub fn active_select(
    student: &Classifier,
    candidates: &Tensor,
    tasks: &[u16],
    targets: &Tensor,
) -> Result<usize> {
    let losses = per_example_losses(student, candidates, tasks, targets)?;
    argmax_first(&losses)
        .ok_or_else(|| Error::invalid("active_select needs at least one candidate"))
}

fn argmax_first(v: &[Real]) -> Option<usize> {
    let mut best: Option<(usize, Real)> = None;
    for (i, &x) in v.iter().enumerate() {
        if best.is_none_or(|(_, b)| x > b) {
            best = Some((i, x));
        }
    }
    best.map(|(i, _)| i)
}

fn dot(a: &[Real], b: &[Real]) -> Real {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Greedy landmark selection: two random seeds, then repeatedly the point
/// of a random `fraction` of the remainder whose summed squared dot-product
/// similarity to the landmarks is smallest (ties to the lowest index).
pub fn msss_select<R: Rng + ?Sized>(
    x: &[&[Real]],
    m: usize,
    fraction: f64,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if m < 2 {
        return Err(Error::invalid(format!("msss_select needs m >= 2, got {m}")));
    }
    if m > x.len() {
        return Err(Error::invalid(format!(
            "cannot pick {m} landmarks from {} points",
            x.len()
        )));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!(
            "fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let n = x.len();
    let mut chosen: Vec<usize> = sample(rng, n, 2).into_vec();
    let mut taken = vec![false; n];
    let mut score = vec![0.0 as Real; n];
    for &c in &chosen {
        taken[c] = true;
        for (i, s) in score.iter_mut().enumerate() {
            *s += dot(x[i], x[c]).powi(2);
        }
    }
    while chosen.len() < m {
        let remaining: Vec<usize> = (0..n).filter(|&i| !taken[i]).collect();
        let size = ((fraction * remaining.len() as f64).ceil() as usize).clamp(1, remaining.len());
        let mut subset: Vec<usize> = if size == remaining.len() {
            remaining
        } else {
            sample(rng, remaining.len(), size)
                .into_iter()
                .map(|j| remaining[j])
                .collect()
        };
        subset.sort_unstable();
        let pick = subset
            .iter()
            .copied()
            .fold(None::<usize>, |best, i| match best {
                Some(b) if score[b] <= score[i] => Some(b),
                _ => Some(i),
            })
            .expect("subset is nonempty");
        taken[pick] = true;
        chosen.push(pick);
        for (i, s) in score.iter_mut().enumerate() {
            if !taken[i] {
                *s += dot(x[i], x[pick]).powi(2);
            }
        }
    }
    Ok(chosen)
}

/// `Σ_{i<j} sim²(x_i, x_j)` over a selection.
pub fn sum_squared_similarity(x: &[&[Real]], selection: &[usize]) -> Real {
    let mut total = 0.0;
    for (a, &i) in selection.iter().enumerate() {
        for &j in &selection[a + 1..] {
            total += dot(x[i], x[j]).powi(2);
        }
    }
    total
}

/// Draws `k·n` items from the buffer, keeps a diverse `k` of them, and
/// returns their reconstructions with the items. With `k = 1`, a diverse
/// set of `n` is formed first and the hardest one for `student` is kept.
#[allow(clippy::too_many_arguments)]
pub fn active_diverse_select<R: Rng + ?Sized>(
    buffer: &IndexBuffer,
    vae: &DiscreteVae,
    student: &Classifier,
    targets_for: &dyn Fn(&Tensor, &[BufferItem]) -> Result<Tensor>,
    k: usize,
    n: usize,
    fraction: f64,
    rng: &mut R,
) -> Result<(Tensor, Vec<BufferItem>)> {
    if k == 0 || n == 0 {
        return Err(Error::invalid("k and n must be >= 1"));
    }
    let (x, items) = recollect(buffer, vae, k * n, rng)?;
    if items.is_empty() || n == 1 && k > 1 {
        return Ok((x, items));
    }
    let width = x.len() / items.len();
    let rows: Vec<&[Real]> = x.data().chunks(width).collect();
    let keep = if k == 1 { n } else { k };
    let mut picked = if keep >= 2 {
        msss_select(&rows, keep, fraction, rng)?
    } else {
        vec![0]
    };
    if k == 1 {
        let sub = take_rows(&x, &picked);
        let sub_items: Vec<BufferItem> = picked.iter().map(|&i| items[i].clone()).collect();
        let targets = targets_for(&sub, &sub_items)?;
        let tasks: Vec<u16> = sub_items.iter().map(|it| it.task).collect();
        let hardest = active_select(student, &sub, &tasks, &targets)?;
        picked = vec![picked[hardest]];
    }
    let out = take_rows(&x, &picked);
    Ok((out, picked.iter().map(|&i| items[i].clone()).collect()))
}

fn take_rows(x: &Tensor, rows: &[usize]) -> Tensor {
    let n = x.shape()[0];
    let width = x.len() / n.max(1);
    let data: Vec<Real> = rows
        .iter()
        .flat_map(|&r| x.data()[r * width..(r + 1) * width].iter().copied())
        .collect();
    let mut shape = x.shape().to_vec();
    shape[0] = rows.len();
    Tensor::new(shape, data).expect("row selection keeps the row shape")
}
