//! ERM, Fish, direct IDGM, SmoothFish, Reptile and Fish with random grouping.
//!
//! Every trainer is a pure function of the model, the datasets and the
//! config. The per-iteration update rules are also exposed on their own so
//! the paired GIP tracker and callers with custom batch sequences can reuse
//! them.

use alloc::format;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::alignment::{gip, gip_gradient_from};
use crate::analysis::GipTrace;
use crate::data::{Batch, BatchStream, DomainDataset, OrderPolicy};
use crate::engine::{default_hvp_step, Model, ParamVector};
use crate::vecops::{all_finite, mean};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algo {
    Erm,
    Fish,
    Idgm,
    SmoothFish,
    Reptile,
    FishRg,
}

impl Algo {
    pub const ALL: [Algo; 6] = [Algo::Erm, Algo::Fish, Algo::Idgm, Algo::SmoothFish, Algo::Reptile, Algo::FishRg];

    pub fn as_str(self) -> &'static str {
        match self {
            Algo::Erm => "erm",
            Algo::Fish => "fish",
            Algo::Idgm => "idgm",
            Algo::SmoothFish => "smoothfish",
            Algo::Reptile => "reptile",
            Algo::FishRg => "fish_rg",
        }
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algo::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown algorithm `{s}`")))
    }
}

/// Algorithm selector and hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    pub algo: Algo,
    /// Inner-loop learning rate.
    pub alpha: f64,
    /// Outer (meta) step size.
    pub epsilon: f64,
    /// GIP scaling for IDGM and SmoothFish.
    pub gamma: f64,
    /// Inner steps per outer iteration: task length for Reptile, group count
    /// for Fish with random grouping, domains per loop otherwise. `None`
    /// means the number of train domains.
    pub inner_steps: Option<usize>,
    pub outer_iters: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Use the cosine form of GIP in IDGM.
    pub normalize_gip: bool,
    /// Finite-difference step for IDGM's Hessian-vector products; `None`
    /// uses `1e-4 * (1 + ‖θ‖)`.
    pub hvp_step: Option<f64>,
    /// Stop once train loss moved less than `1e-8` over the last 50 iterations.
    pub early_stop: bool,
    /// Record normalized GIP of the drawn batches before and after each update.
    pub record_gip: bool,
}

impl TrainerConfig {
    pub fn new(algo: Algo) -> Self {
        Self {
            algo,
            alpha: 0.1,
            epsilon: 0.05,
            gamma: 1.0,
            inner_steps: None,
            outer_iters: 1000,
            batch_size: 100,
            seed: 0,
            normalize_gip: true,
            hvp_step: None,
            early_stop: false,
            record_gip: false,
        }
    }

    /// Resolved inner-step count for a dataset with `num_domains` domains.
    pub fn steps_for(&self, num_domains: usize) -> usize {
        self.inner_steps.unwrap_or(num_domains)
    }

    /// Stream policy used by `algo`.
    pub fn policy(&self, num_domains: usize) -> OrderPolicy {
        let k = self.steps_for(num_domains);
        match self.algo {
            Algo::FishRg => OrderPolicy::RandomGroup { groups: k },
            Algo::Reptile => OrderPolicy::PermuteDomains,
            _ if k == num_domains => OrderPolicy::PermuteDomains,
            _ => OrderPolicy::SubsampleN(k),
        }
    }

    pub fn validate(&self, num_domains: usize) -> Result<()> {
        let positive = |v: f64, name: &str| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be positive and finite (got {v})")))
            }
        };
        positive(self.alpha, "alpha")?;
        positive(self.epsilon, "epsilon")?;
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::invalid(format!("gamma must be non-negative and finite (got {})", self.gamma)));
        }
        if let Some(h) = self.hvp_step {
            positive(h, "hvp_step")?;
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if num_domains == 0 {
            return Err(Error::Empty("train set has no domains"));
        }
        let k = self.steps_for(num_domains);
        if k == 0 {
            return Err(Error::invalid("inner_steps must be at least 1"));
        }
        let domain_grouped = !matches!(self.algo, Algo::Reptile | Algo::FishRg);
        if domain_grouped && k > num_domains {
            return Err(Error::invalid(format!("inner_steps {k} exceeds the {num_domains} train domains")));
        }
        if self.algo == Algo::Idgm && k < 2 {
            return Err(Error::invalid("idgm needs at least two domains per iteration"));
        }
        Ok(())
    }
}

/// Per-domain and pooled 0/1 accuracy.
#[derive(Debug, Clone, PartialEq)]
pub struct Accuracy {
    pub per_domain: Vec<(u32, f64)>,
    /// Unweighted mean over domains.
    pub macro_avg: f64,
    /// Fraction correct over all examples.
    pub pooled: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow {
    pub iter: usize,
    /// Pooled train loss after this iteration's update.
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: Option<f64>,
    pub gip_pre: Option<f64>,
    pub gip_post: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub theta_final: ParamVector,
    pub history: Vec<HistoryRow>,
    pub gip_trace: Option<GipTrace>,
}

/// Accuracy with threshold 0.5 on the sigmoid output; exactly 0.5 predicts 0.
pub fn evaluate(model: &(impl Model + ?Sized), theta: &[f64], dataset: &DomainDataset) -> Result<Accuracy> {
    if dataset.is_empty() {
        return Err(Error::Empty("evaluation dataset"));
    }
    if dataset.feature_dim() != model.feature_dim() {
        return Err(Error::DimensionMismatch { expected: model.feature_dim(), got: dataset.feature_dim() });
    }
    if theta.len() != model.param_len() {
        return Err(Error::DimensionMismatch { expected: model.param_len(), got: theta.len() });
    }
    let mut per_domain = Vec::with_capacity(dataset.num_domains());
    let (mut correct, mut total) = (0usize, 0usize);
    for d in dataset.domains() {
        if d.examples.is_empty() {
            return Err(Error::invalid(format!("domain {} has no examples", d.id)));
        }
        let ok = d.examples.iter().filter(|ex| u8::from(model.logit(theta, &ex.features) > 0.0) == ex.label).count();
        per_domain.push((d.id, ok as f64 / d.examples.len() as f64));
        correct += ok;
        total += d.examples.len();
    }
    let macro_avg = per_domain.iter().map(|(_, a)| a).sum::<f64>() / per_domain.len() as f64;
    Ok(Accuracy { per_domain, macro_avg, pooled: correct as f64 / total as f64 })
}

/// Sequential SGD over `batches` at rate `lr`.
pub fn sgd_steps(model: &(impl Model + ?Sized), theta: &[f64], batches: &[Batch], lr: f64) -> Result<Vec<f64>> {
    let mut t = theta.to_vec();
    for b in batches {
        let g = model.grad(&t, b)?;
        for (ti, gi) in t.iter_mut().zip(&g) {
            *ti -= lr * gi;
        }
    }
    Ok(t)
}

/// Inner loop from `theta`: returns the end point θ̃ and the displacement
/// θ̃ − θ, accumulated step by step so it carries no cancellation error.
pub fn inner_loop(
    model: &(impl Model + ?Sized),
    theta: &[f64],
    batches: &[Batch],
    alpha: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut clone = theta.to_vec();
    let mut delta = alloc::vec![0.0; theta.len()];
    for b in batches {
        let g = model.grad(&clone, b)?;
        for ((c, d), gi) in clone.iter_mut().zip(delta.iter_mut()).zip(&g) {
            let step = alpha * gi;
            *c -= step;
            *d -= step;
        }
    }
    Ok((clone, delta))
}

/// `θ + ε(θ̃ − θ)`, landing exactly on θ̃ when `ε = 1`.
fn outer(theta: &[f64], clone: Vec<f64>, delta: &[f64], epsilon: f64) -> Vec<f64> {
    if epsilon == 1.0 {
        return clone;
    }
    theta.iter().zip(delta).map(|(t, d)| t + epsilon * d).collect()
}

/// One Fish (or Reptile) outer iteration over the given inner-loop batches.
pub fn fish_update(
    model: &(impl Model + ?Sized),
    theta: &[f64],
    batches: &[Batch],
    alpha: f64,
    epsilon: f64,
) -> Result<Vec<f64>> {
    let (clone, delta) = inner_loop(model, theta, batches, alpha)?;
    Ok(outer(theta, clone, &delta, epsilon))
}

/// One SmoothFish iteration: blends the inner-loop displacement with the
/// scaled ERM step `−αS·ḡ` (ḡ the mean gradient at θ) by `γ`.
pub fn smoothfish_update(
    model: &(impl Model + ?Sized),
    theta: &[f64],
    batches: &[Batch],
    alpha: f64,
    epsilon: f64,
    gamma: f64,
) -> Result<Vec<f64>> {
    let (clone, delta) = inner_loop(model, theta, batches, alpha)?;
    if gamma == 1.0 {
        return Ok(outer(theta, clone, &delta, epsilon));
    }
    let grads = batches.iter().map(|b| model.grad(theta, b)).collect::<Result<Vec<_>>>()?;
    let g_bar = mean(&grads);
    let scale = alpha * batches.len() as f64;
    Ok(theta
        .iter()
        .zip(&g_bar)
        .zip(&delta)
        .map(|((t, g), d)| {
            let erm = -(scale * g);
            let g_sm = (1.0 - gamma) * erm + gamma * d;
            t + epsilon * g_sm
        })
        .collect())
}

/// One direct IDGM iteration: `θ − ε(ḡ − γ·∂GIP/∂θ)` with one batch per domain.
pub fn idgm_update(
    model: &(impl Model + ?Sized),
    theta: &[f64],
    batches: &[Batch],
    epsilon: f64,
    gamma: f64,
    normalized: bool,
    hvp_step: Option<f64>,
) -> Result<Vec<f64>> {
    let grads = batches.iter().map(|b| model.grad(theta, b)).collect::<Result<Vec<_>>>()?;
    let g_bar = mean(&grads);
    if gamma == 0.0 {
        return Ok(theta.iter().zip(&g_bar).map(|(t, g)| t - epsilon * g).collect());
    }
    let step = hvp_step.unwrap_or_else(|| default_hvp_step(theta));
    let d = gip_gradient_from(model, theta, batches, &grads, normalized, step)?;
    Ok(theta.iter().zip(&g_bar).zip(&d).map(|((t, g), di)| t - epsilon * (g - gamma * di)).collect())
}

/// Pools the batches, shuffles the rows and cuts them back into as many batches.
pub fn rebatch(batches: &[Batch], rng: &mut ChaCha8Rng) -> Vec<Batch> {
    let pooled = Batch::concat(batches);
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.shuffle(rng);
    pooled.permuted(&order).split(batches.len())
}

/// RNG for ERM's re-batching, independent of every stream the batch sampler uses.
pub fn rebatch_rng(seed: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(u64::MAX - 1);
    r
}

fn cosine_gip(model: &(impl Model + ?Sized), theta: &[f64], batches: &[Batch]) -> Result<Option<f64>> {
    if batches.len() < 2 {
        return Ok(None);
    }
    let grads = batches.iter().map(|b| model.grad(theta, b)).collect::<Result<Vec<_>>>()?;
    Ok(gip(&grads, true).ok())
}

/// Trains from `init` on `train_set`, evaluating on `test_set` after every iteration.
pub fn train(
    model: &(impl Model + ?Sized),
    train_set: &DomainDataset,
    test_set: Option<&DomainDataset>,
    config: &TrainerConfig,
    init: &ParamVector,
) -> Result<TrainResult> {
    let s = train_set.num_domains();
    config.validate(s)?;
    if init.len() != model.param_len() {
        return Err(Error::DimensionMismatch { expected: model.param_len(), got: init.len() });
    }
    if train_set.feature_dim() != model.feature_dim() {
        return Err(Error::DimensionMismatch { expected: model.feature_dim(), got: train_set.feature_dim() });
    }
    if let Some(t) = test_set {
        if t.feature_dim() != model.feature_dim() {
            return Err(Error::DimensionMismatch { expected: model.feature_dim(), got: t.feature_dim() });
        }
    }
    let steps = config.steps_for(s);
    let mut stream = BatchStream::new(train_set, config.batch_size, config.seed, config.policy(s))?;
    let mut shuffle_rng = rebatch_rng(config.seed);
    let pooled = train_set.pooled();
    let mut theta = init.values.clone();
    let mut history = Vec::with_capacity(config.outer_iters);

    for iter in 0..config.outer_iters {
        let batches = match config.algo {
            Algo::Reptile => stream.next_task(steps),
            _ => stream.next_batches(),
        };
        let gip_pre = if config.record_gip { cosine_gip(model, &theta, &batches)? } else { None };
        let next = match config.algo {
            Algo::Erm => sgd_steps(model, &theta, &rebatch(&batches, &mut shuffle_rng), config.alpha)?,
            Algo::Fish | Algo::FishRg | Algo::Reptile => {
                fish_update(model, &theta, &batches, config.alpha, config.epsilon)?
            }
            Algo::SmoothFish => smoothfish_update(model, &theta, &batches, config.alpha, config.epsilon, config.gamma)?,
            Algo::Idgm => idgm_update(
                model,
                &theta,
                &batches,
                config.epsilon,
                config.gamma,
                config.normalize_gip,
                config.hvp_step,
            )?,
        };
        if !all_finite(&next) {
            return Err(Error::Diverged { iter, what: "parameter vector" });
        }
        theta = next;
        let train_loss = model.loss(&theta, &pooled)?;
        if !train_loss.is_finite() {
            return Err(Error::Diverged { iter, what: "train loss" });
        }
        let gip_post = if config.record_gip { cosine_gip(model, &theta, &batches)? } else { None };
        let train_acc = evaluate(model, &theta, train_set)?.pooled;
        let test_acc = test_set.map(|t| evaluate(model, &theta, t).map(|a| a.pooled)).transpose()?;
        history.push(HistoryRow { iter, train_loss, train_acc, test_acc, gip_pre, gip_post });
        if config.early_stop && history.len() > EARLY_STOP_WINDOW {
            let past = history[history.len() - 1 - EARLY_STOP_WINDOW].train_loss;
            if libm::fabs(train_loss - past) < EARLY_STOP_TOL {
                break;
            }
        }
    }
    Ok(TrainResult { theta_final: ParamVector::new(theta, init.layout.clone())?, history, gip_trace: None })
}

const EARLY_STOP_WINDOW: usize = 50;
const EARLY_STOP_TOL: f64 = 1e-8;
