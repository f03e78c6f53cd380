//! Model families over a flat parameter vector: loss, analytic gradient,
//! and finite-difference Hessian-vector products.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Batch;
use crate::vecops::{all_finite, norm};
use crate::{Error, Result};

/// Anything that maps a parameter vector and a minibatch to a scalar loss
/// with an analytic gradient.
///
/// Implementations must be pure: identical inputs give bit-identical outputs.
pub trait Model {
    fn param_len(&self) -> usize;

    fn feature_dim(&self) -> usize;

    /// Mean loss over the batch.
    fn loss(&self, theta: &[f64], batch: &Batch) -> Result<f64>;

    /// Gradient of [`Model::loss`] with respect to `theta`.
    fn grad(&self, theta: &[f64], batch: &Batch) -> Result<Vec<f64>>;

    /// Pre-sigmoid score for one input; positive means class 1.
    fn logit(&self, theta: &[f64], x: &[f64]) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelFamily {
    /// `sigmoid(W·x + b)` trained with binary cross-entropy.
    LinearSigmoidBce,
    /// One tanh hidden layer of width `hidden`, sigmoid output, BCE.
    Mlp1 { hidden: usize },
}

/// Named contiguous blocks of a parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    blocks: Vec<(&'static str, Range<usize>)>,
}

impl Layout {
    /// Consecutive blocks with the given names and lengths.
    pub fn new(sizes: &[(&'static str, usize)]) -> Self {
        let mut start = 0;
        let blocks = sizes
            .iter()
            .map(|&(name, len)| {
                let r = start..start + len;
                start += len;
                (name, r)
            })
            .collect();
        Self { blocks }
    }

    pub fn blocks(&self) -> &[(&'static str, Range<usize>)] {
        &self.blocks
    }

    pub fn block(&self, name: &str) -> Option<Range<usize>> {
        self.blocks.iter().find(|(n, _)| *n == name).map(|(_, r)| r.clone())
    }

    pub fn len(&self) -> usize {
        self.blocks.last().map_or(0, |(_, r)| r.end)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Parameter values together with the layout that names them.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub layout: Layout,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, layout: Layout) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::DimensionMismatch { expected: layout.len(), got: values.len() });
        }
        Ok(Self { values, layout })
    }

    pub fn block(&self, name: &str) -> Option<&[f64]> {
        self.layout.block(name).map(|r| &self.values[r])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// A concrete model family bound to a feature dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GradEngine {
    family: ModelFamily,
    feature_dim: usize,
}

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
#[inline]
pub(crate) fn softplus(z: f64) -> f64 {
    z.max(0.0) + libm::log1p(libm::exp(-libm::fabs(z)))
}

/// Binary cross-entropy with logits: `softplus(z) - y·z`.
#[inline]
fn bce_logits(z: f64, y: f64) -> f64 {
    softplus(z) - y * z
}

impl GradEngine {
    pub fn new(family: ModelFamily, feature_dim: usize) -> Result<Self> {
        if feature_dim == 0 {
            return Err(Error::invalid("feature_dim must be at least 1"));
        }
        if let ModelFamily::Mlp1 { hidden: 0 } = family {
            return Err(Error::invalid("mlp1 needs at least one hidden unit"));
        }
        Ok(Self { family, feature_dim })
    }

    pub fn linear(feature_dim: usize) -> Result<Self> {
        Self::new(ModelFamily::LinearSigmoidBce, feature_dim)
    }

    pub fn family(&self) -> ModelFamily {
        self.family
    }

    pub fn layout(&self) -> Layout {
        let d = self.feature_dim;
        match self.family {
            ModelFamily::LinearSigmoidBce => Layout::new(&[("W", d), ("b", 1)]),
            ModelFamily::Mlp1 { hidden } => {
                Layout::new(&[("W1", hidden * d), ("b1", hidden), ("w2", hidden), ("b2", 1)])
            }
        }
    }

    /// Initial parameters: zeros for the linear family, seeded
    /// uniform(-0.1, 0.1) for mlp1.
    pub fn init(&self, seed: u64) -> ParamVector {
        let layout = self.layout();
        let values = match self.family {
            ModelFamily::LinearSigmoidBce => vec![0.0; layout.len()],
            ModelFamily::Mlp1 { .. } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..layout.len()).map(|_| rng.random_range(-0.1..0.1)).collect()
            }
        };
        ParamVector { values, layout }
    }

    /// Wraps raw values with this engine's layout.
    pub fn params(&self, values: Vec<f64>) -> Result<ParamVector> {
        ParamVector::new(values, self.layout())
    }

    fn check(&self, theta: &[f64], batch: &Batch) -> Result<()> {
        if theta.len() != self.param_len() {
            return Err(Error::DimensionMismatch { expected: self.param_len(), got: theta.len() });
        }
        if batch.dim() != self.feature_dim {
            return Err(Error::DimensionMismatch { expected: self.feature_dim, got: batch.dim() });
        }
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        Ok(())
    }

    fn hidden_pre(&self, theta: &[f64], x: &[f64], hidden: usize, out: &mut [f64]) {
        let d = self.feature_dim;
        let (w1, rest) = theta.split_at(hidden * d);
        let b1 = &rest[..hidden];
        for (h, o) in out.iter_mut().enumerate() {
            let row = &w1[h * d..(h + 1) * d];
            *o = b1[h] + row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>();
        }
    }
}

impl Model for GradEngine {
    fn param_len(&self) -> usize {
        let d = self.feature_dim;
        match self.family {
            ModelFamily::LinearSigmoidBce => d + 1,
            ModelFamily::Mlp1 { hidden } => hidden * d + 2 * hidden + 1,
        }
    }

    fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    fn logit(&self, theta: &[f64], x: &[f64]) -> f64 {
        let d = self.feature_dim;
        match self.family {
            ModelFamily::LinearSigmoidBce => theta[d] + theta[..d].iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>(),
            ModelFamily::Mlp1 { hidden } => {
                let mut a = vec![0.0; hidden];
                self.hidden_pre(theta, x, hidden, &mut a);
                let w2 = &theta[hidden * d + hidden..hidden * d + 2 * hidden];
                let b2 = theta[hidden * d + 2 * hidden];
                b2 + a.iter().zip(w2).map(|(ah, w)| w * libm::tanh(*ah)).sum::<f64>()
            }
        }
    }

    fn loss(&self, theta: &[f64], batch: &Batch) -> Result<f64> {
        self.check(theta, batch)?;
        let total: f64 = (0..batch.len()).map(|i| bce_logits(self.logit(theta, batch.row(i)), batch.label(i))).sum();
        Ok(total / batch.len() as f64)
    }

    fn grad(&self, theta: &[f64], batch: &Batch) -> Result<Vec<f64>> {
        self.check(theta, batch)?;
        let n = batch.len() as f64;
        let d = self.feature_dim;
        let mut g = vec![0.0; theta.len()];
        match self.family {
            ModelFamily::LinearSigmoidBce => {
                for i in 0..batch.len() {
                    let x = batch.row(i);
                    let r = (sigmoid(self.logit(theta, x)) - batch.label(i)) / n;
                    for (gj, xj) in g[..d].iter_mut().zip(x) {
                        *gj += r * xj;
                    }
                    g[d] += r;
                }
            }
            ModelFamily::Mlp1 { hidden } => {
                let (o_b1, o_w2, o_b2) = (hidden * d, hidden * d + hidden, hidden * d + 2 * hidden);
                let mut a = vec![0.0; hidden];
                let mut t = vec![0.0; hidden];
                for i in 0..batch.len() {
                    let x = batch.row(i);
                    self.hidden_pre(theta, x, hidden, &mut a);
                    for (th, ah) in t.iter_mut().zip(&a) {
                        *th = libm::tanh(*ah);
                    }
                    let z = theta[o_b2] + t.iter().zip(&theta[o_w2..o_b2]).map(|(th, w)| th * w).sum::<f64>();
                    let r = (sigmoid(z) - batch.label(i)) / n;
                    g[o_b2] += r;
                    for h in 0..hidden {
                        g[o_w2 + h] += r * t[h];
                        let da = r * theta[o_w2 + h] * (1.0 - t[h] * t[h]);
                        g[o_b1 + h] += da;
                        for (gj, xj) in g[h * d..(h + 1) * d].iter_mut().zip(x) {
                            *gj += da * xj;
                        }
                    }
                }
            }
        }
        Ok(g)
    }
}

fn check_step(step: f64) -> Result<()> {
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::invalid(format!("finite-difference step must be positive (got {step})")));
    }
    Ok(())
}

/// Default HVP step: `1e-4 * (1 + ‖θ‖)`.
pub fn default_hvp_step(theta: &[f64]) -> f64 {
    1e-4 * (1.0 + norm(theta))
}

/// Default step for [`fd_grad`].
pub const FD_GRAD_STEP: f64 = 1e-5;

/// Hessian-vector product by central differences of the analytic gradient.
///
/// Differences along `u = v/‖v‖` and rescales by `‖v‖`, so the truncation
/// error does not depend on the scale of `v`.
pub fn hvp<M: Model + ?Sized>(model: &M, theta: &[f64], batch: &Batch, v: &[f64], step: f64) -> Result<Vec<f64>> {
    check_step(step)?;
    if v.len() != theta.len() {
        return Err(Error::DimensionMismatch { expected: theta.len(), got: v.len() });
    }
    let vn = norm(v);
    if vn == 0.0 {
        return Err(Error::ZeroNorm("hvp direction"));
    }
    if !vn.is_finite() || !all_finite(theta) {
        return Err(Error::invalid("hvp inputs must be finite"));
    }
    let mut plus = theta.to_vec();
    let mut minus = theta.to_vec();
    let mut moved = false;
    for ((p, m), (t, vi)) in plus.iter_mut().zip(minus.iter_mut()).zip(theta.iter().zip(v)) {
        let du = step * (vi / vn);
        *p = t + du;
        *m = t - du;
        moved |= *p != *t || *m != *t;
    }
    if !moved {
        return Err(Error::StepUnderflow(step));
    }
    let gp = model.grad(&plus, batch)?;
    let gm = model.grad(&minus, batch)?;
    let scale = vn / (2.0 * step);
    Ok(gp.iter().zip(&gm).map(|(a, b)| (a - b) * scale).collect())
}

/// Central-difference gradient of [`Model::loss`], one coordinate at a time.
pub fn fd_grad<M: Model + ?Sized>(model: &M, theta: &[f64], batch: &Batch, step: f64) -> Result<Vec<f64>> {
    check_step(step)?;
    let mut probe = theta.to_vec();
    let mut out = Vec::with_capacity(theta.len());
    for j in 0..theta.len() {
        probe[j] = theta[j] + step;
        let lp = model.loss(&probe, batch)?;
        probe[j] = theta[j] - step;
        let lm = model.loss(&probe, batch)?;
        probe[j] = theta[j];
        out.push((lp - lm) / (2.0 * step));
    }
    Ok(out)
}
