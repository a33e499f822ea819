//! Latent code sizing under storage budgets.

use crate::error::{Error, Result};
use crate::layers::DEFAULT_KERNEL;
use crate::vae::CodeGeometry;

/// Effective bottleneck capacity `c · log2 l` in bits.
pub fn capacity(c: usize, l: usize) -> f64 {
    c as f64 * (l as f64).log2()
}

/// Stored bits per code, `c · ⌈log2 l⌉`.
pub fn code_bits(c: usize, l: usize) -> Result<usize> {
    Ok(CodeGeometry::new(c, l)?.code_bits())
}

/// Per-sample compression of an `input_bits` example.
pub fn compression(c: usize, l: usize, input_bits: usize) -> Result<f64> {
    Ok(input_bits as f64 / code_bits(c, l)? as f64)
}

/// True iff `l^c ≥ big_l`, evaluated with exact saturating integer powers.
pub fn hypothesis1_holds(l: u64, c: u64, big_l: u64) -> bool {
    if big_l <= 1 {
        return true;
    }
    if l <= 1 {
        return false;
    }
    let mut acc: u64 = 1;
    for _ in 0..c {
        acc = acc.saturating_mul(l);
        if acc >= big_l {
            return true;
        }
    }
    false
}

/// Parameter bits of the compression model as a function of `(c, l)`.
#[derive(Clone, Debug, PartialEq)]
pub enum ParamModel {
    Zero,
    /// `scale · (c·l)²`
    Quadratic {
        scale: f64,
    },
    /// Exact weight count of the convolutional autoencoder with `⌈cl/4⌉`
    /// filters, at 64 bits per weight.
    Architecture {
        input_shape: [usize; 3],
    },
}

impl Default for ParamModel {
    fn default() -> Self {
        ParamModel::Architecture {
            input_shape: [1, 28, 28],
        }
    }
}

/// Weights and biases of the three-conv/three-deconv autoencoder.
pub fn conv_autoencoder_param_count(input: [usize; 3], filters: usize, bottleneck: usize) -> usize {
    let [ch, h, w] = input;
    let down = |n: usize| (n - 1) / 2 + 1;
    let flat = filters * down(down(down(h))) * down(down(down(w)));
    let kk = DEFAULT_KERNEL * DEFAULT_KERNEL;
    let edge = ch * filters * kk;
    let inner = filters * filters * kk + filters;
    let encoder = edge + filters + 2 * inner + flat * bottleneck + bottleneck;
    let decoder = bottleneck * flat + flat + 2 * inner + edge + ch;
    encoder + decoder
}

impl ParamModel {
    pub fn bits(&self, c: usize, l: usize) -> f64 {
        match self {
            ParamModel::Zero => 0.0,
            ParamModel::Quadratic { scale } => scale * ((c * l) as f64).powi(2),
            ParamModel::Architecture { input_shape } => {
                let cl = c * l;
                64.0 * conv_autoencoder_param_count(*input_shape, cl.div_ceil(4), cl) as f64
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BudgetSpec {
    /// `γ`, total storage in bits.
    pub gamma_bits: f64,
    /// `N`, expected number of incoming examples.
    pub examples: f64,
    /// `ρ`, probability that an incoming example is stored.
    pub rho: f64,
    pub param_model: ParamModel,
}

impl BudgetSpec {
    pub fn new(gamma_bits: f64, examples: f64, rho: f64) -> Result<Self> {
        let spec = BudgetSpec {
            gamma_bits,
            examples,
            rho,
            param_model: ParamModel::default(),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Budget given directly as `γ/N` bits per example.
    pub fn per_example(bits: f64, rho: f64) -> Result<Self> {
        Self::new(bits, 1.0, rho)
    }

    pub fn with_param_model(mut self, model: ParamModel) -> Self {
        self.param_model = model;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_bits > 0.0 && self.gamma_bits.is_finite()) {
            return Err(Error::invalid(format!(
                "budget must be > 0, got {}",
                self.gamma_bits
            )));
        }
        if !(self.examples > 0.0 && self.examples.is_finite()) {
            return Err(Error::invalid(format!(
                "example count must be > 0, got {}",
                self.examples
            )));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::invalid(format!(
                "rho must lie in (0, 1], got {}",
                self.rho
            )));
        }
        Ok(())
    }

    pub fn rate(&self) -> f64 {
        self.gamma_bits / self.examples
    }
}

/// Inclusive search ranges for `c` and `l`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Grid {
    pub c_min: usize,
    pub c_max: usize,
    pub l_min: usize,
    pub l_max: usize,
}

impl Grid {
    pub fn new(c_max: usize, l_max: usize) -> Self {
        Grid {
            c_min: 1,
            c_max,
            l_min: 2,
            l_max,
        }
    }

    pub fn points(&self) -> usize {
        let c = (self.c_max + 1).saturating_sub(self.c_min.max(1));
        let l = (self.l_max + 1).saturating_sub(self.l_min.max(2));
        c * l
    }

    fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.c_min.max(1)..=self.c_max)
            .flat_map(move |c| (self.l_min.max(2)..=self.l_max).map(move |l| (c, l)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CodeChoice {
    pub c: usize,
    pub l: usize,
    pub k: usize,
    pub capacity: f64,
}

const TIE_TOL: f64 = 1e-9;

fn better(a: &CodeChoice, b: &CodeChoice) -> bool {
    let scale = a.capacity.abs().max(b.capacity.abs()).max(1.0);
    if a.capacity > b.capacity + TIE_TOL * scale {
        return true;
    }
    if (a.capacity - b.capacity).abs() <= TIE_TOL * scale {
        return (a.c, a.l) < (b.c, b.l);
    }
    false
}

fn optimize(spec: &BudgetSpec, grid: &Grid, params: bool) -> Result<CodeChoice> {
    spec.validate()?;
    if grid.points() == 0 {
        return Err(Error::invalid("empty (c, l) grid"));
    }
    let limit = spec.rate();
    let mut best: Option<CodeChoice> = None;
    for (c, l) in grid.iter() {
        let k = code_bits(c, l)?;
        let mut cost = spec.rho * k as f64;
        if params {
            cost += spec.param_model.bits(c, l);
        }
        if cost > limit {
            continue;
        }
        let cand = CodeChoice {
            c,
            l,
            k,
            capacity: capacity(c, l),
        };
        if best.as_ref().is_none_or(|b| better(&cand, b)) {
            best = Some(cand);
        }
    }
    best.ok_or_else(|| {
        Error::Infeasible(format!(
            "no (c, l) in the grid fits {limit} bits per example"
        ))
    })
}

/// Maximizes capacity subject to `ρ·k ≤ γ/N`; ties go to smaller `c`, then
/// smaller `l`.
pub fn optimize_incremental(spec: &BudgetSpec, grid: &Grid) -> Result<CodeChoice> {
    optimize(spec, grid, false)
}

/// Maximizes capacity subject to `ρ·k + params(c, l) ≤ γ/N`.
pub fn optimize_total(spec: &BudgetSpec, grid: &Grid) -> Result<CodeChoice> {
    optimize(spec, grid, true)
}
