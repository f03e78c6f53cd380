//! Gradient-alignment instrumentation: the paired Fish/ERM GIP tracker and
//! a numerical check of the second-order expansion of the Fish inner loop.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::alignment::{gip, gip_gradient_from};
use crate::data::{Batch, BatchStream, DomainDataset, OrderPolicy};
use crate::engine::{default_hvp_step, Model, ParamVector};
use crate::trainers::{fish_update, inner_loop, rebatch, rebatch_rng, sgd_steps, TrainerConfig};
use crate::vecops::{all_finite, axpy, dot, mean, norm};
use crate::{Error, Result};

/// Normalized GIP of both runs at one iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GipRecord {
    pub iter: usize,
    pub fish_pre: f64,
    pub fish_post: f64,
    pub erm_pre: f64,
    pub erm_post: f64,
    /// Row checksum of the domain batches the Fish run consumed.
    pub fish_checksum: u64,
    /// Row checksum of the re-batched data the ERM run consumed.
    pub erm_checksum: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GipTrace {
    pub records: Vec<GipRecord>,
}

impl GipTrace {
    /// Mean `(fish_post, erm_post)` over the last `frac` of the records (at least one).
    pub fn tail_post_means(&self, frac: f64) -> Option<(f64, f64)> {
        let n = self.records.len();
        if n == 0 {
            return None;
        }
        let k = ((n as f64 * frac) as usize).clamp(1, n);
        let tail = &self.records[n - k..];
        let f = tail.iter().map(|r| r.fish_post).sum::<f64>() / k as f64;
        let e = tail.iter().map(|r| r.erm_post).sum::<f64>() / k as f64;
        Some((f, e))
    }
}

fn cosine_gip(model: &(impl Model + ?Sized), theta: &[f64], batches: &[Batch]) -> Result<f64> {
    let grads = batches.iter().map(|b| model.grad(theta, b)).collect::<Result<Vec<_>>>()?;
    gip(&grads, true)
}

/// Paired Fish/ERM runs from the same start on the same batches.
///
/// Every iteration draws one batch per domain. Both models record the
/// normalized GIP of those batches, Fish then runs its inner loop and outer
/// step, ERM pools the batches, shuffles, cuts them back into as many pieces
/// and takes sequential SGD steps at rate α. Both record GIP again on the
/// original batches.
pub fn track_gip(
    model: &(impl Model + ?Sized),
    train_set: &DomainDataset,
    config: &TrainerConfig,
    init: &ParamVector,
) -> Result<GipTrace> {
    let s = train_set.num_domains();
    if s < 2 {
        return Err(Error::invalid("GIP tracking needs at least two train domains"));
    }
    let mut fish_cfg = config.clone();
    fish_cfg.algo = crate::trainers::Algo::Fish;
    fish_cfg.validate(s)?;
    if init.len() != model.param_len() {
        return Err(Error::DimensionMismatch { expected: model.param_len(), got: init.len() });
    }
    let mut stream = BatchStream::new(train_set, config.batch_size, config.seed, fish_cfg.policy(s))?;
    let mut rng = rebatch_rng(config.seed);
    let mut theta_f = init.values.clone();
    let mut theta_e = init.values.clone();
    let mut records = Vec::with_capacity(config.outer_iters);
    for iter in 0..config.outer_iters {
        let batches = stream.next_batches();
        let fish_pre = cosine_gip(model, &theta_f, &batches)?;
        let erm_pre = cosine_gip(model, &theta_e, &batches)?;
        theta_f = fish_update(model, &theta_f, &batches, config.alpha, config.epsilon)?;
        let pieces = rebatch(&batches, &mut rng);
        theta_e = sgd_steps(model, &theta_e, &pieces, config.alpha)?;
        if !all_finite(&theta_f) || !all_finite(&theta_e) {
            return Err(Error::Diverged { iter, what: "parameter vector" });
        }
        records.push(GipRecord {
            iter,
            fish_pre,
            fish_post: cosine_gip(model, &theta_f, &batches)?,
            erm_pre,
            erm_post: cosine_gip(model, &theta_e, &batches)?,
            fish_checksum: batches.iter().fold(0u64, |a, b| a.wrapping_add(b.checksum())),
            erm_checksum: pieces.iter().fold(0u64, |a, b| a.wrapping_add(b.checksum())),
        });
    }
    Ok(GipTrace { records })
}

/// Norm below which `G_f` is treated as lost to round-off.
pub const GF_NORM_FLOOR: f64 = 1e-14;

/// Largest number of domain orders enumerated exactly in full-batch mode.
pub const MAX_EXACT_ORDERS: usize = 720;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeRow {
    pub alpha: f64,
    /// `cos(G_f, G_g)`; `None` when `‖G_f‖` is below [`GF_NORM_FLOOR`].
    pub cosine: Option<f64>,
    pub gf_norm: f64,
    pub gg_norm: f64,
    /// `‖E[θ − θ̃] − (αΣG − α²·S(S−1)/4·∂GIP/∂θ)‖`.
    pub residual_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoremProbe {
    pub alpha_grid: Vec<f64>,
    pub rows: Vec<ProbeRow>,
    /// `G_f` per grid point.
    pub g_f: Vec<Vec<f64>>,
    /// `G_g = −∂GIP/∂θ` (unnormalized GIP), independent of α.
    pub g_g: Vec<f64>,
    /// Inner-loop runs averaged per grid point.
    pub n_mc: usize,
    /// True when the expectation over domain orders was enumerated exactly.
    pub exact: bool,
}

impl TheoremProbe {
    pub fn cosines(&self) -> Vec<Option<f64>> {
        self.rows.iter().map(|r| r.cosine).collect()
    }

    /// Row at the smallest α whose `‖G_f‖` is at least `min_norm`.
    pub fn smallest_usable(&self, min_norm: f64) -> Option<&ProbeRow> {
        self.rows.iter().rfind(|r| r.gf_norm >= min_norm && r.cosine.is_some())
    }

    /// Least-squares slope of `ln residual` against `ln α` over rows with a
    /// positive residual.
    pub fn residual_slope(&self) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .rows
            .iter()
            .filter(|r| r.residual_norm > 0.0)
            .map(|r| (libm::log(r.alpha), libm::log(r.residual_norm)))
            .collect();
        if pts.len() < 2 {
            return None;
        }
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = pts.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
        Some(sxy / sxx)
    }
}

/// Advances `p` to the next lexicographic permutation; false after the last.
fn next_permutation(p: &mut [usize]) -> bool {
    let Some(i) = (1..p.len()).rev().find(|&i| p[i - 1] < p[i]) else {
        return false;
    };
    let j = (i..p.len()).rev().find(|&j| p[j] > p[i - 1]).unwrap_or(i);
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

fn factorial_capped(s: usize, cap: usize) -> Option<usize> {
    (1..=s).try_fold(1usize, |acc, k| acc.checked_mul(k).filter(|v| *v <= cap))
}

/// Compares the Fish inner-loop displacement with its second-order expansion at fixed `theta`.
///
/// With `batch_size = None` every inner step uses a whole domain; the
/// expectation over domain orders is then enumerated exactly when there are
/// at most [`MAX_EXACT_ORDERS`] orders, otherwise `n_mc` random orders are
/// averaged. With `Some(b)` the expectation is estimated from `n_mc` draws
/// of a seeded batch stream. `Ḡ` and `G_g` always use whole domains.
pub fn verify_theorem1(
    model: &(impl Model + ?Sized),
    dataset: &DomainDataset,
    theta: &[f64],
    alpha_grid: &[f64],
    n_mc: usize,
    seed: u64,
    batch_size: Option<usize>,
) -> Result<TheoremProbe> {
    let s = dataset.num_domains();
    if s < 2 {
        return Err(Error::invalid("the expansion needs at least two domains"));
    }
    if n_mc == 0 {
        return Err(Error::invalid("n_mc must be at least 1"));
    }
    if alpha_grid.is_empty() {
        return Err(Error::Empty("alpha grid"));
    }
    if alpha_grid.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
        return Err(Error::invalid("alpha values must be positive and finite"));
    }
    if alpha_grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::invalid("alpha grid must be strictly decreasing"));
    }
    if theta.len() != model.param_len() {
        return Err(Error::DimensionMismatch { expected: model.param_len(), got: theta.len() });
    }

    let full: Vec<Batch> = (0..s).map(|k| dataset.domain_batch(k)).collect();
    let grads = full.iter().map(|b| model.grad(theta, b)).collect::<Result<Vec<_>>>()?;
    let g_bar = mean(&grads);
    let d_gip = gip_gradient_from(model, theta, &full, &grads, false, default_hvp_step(theta))?;
    let g_g: Vec<f64> = d_gip.iter().map(|x| -x).collect();
    let gg_norm = norm(&g_g);
    let pair_coef = (s * (s - 1)) as f64 / 4.0;

    let exact_orders = if batch_size.is_none() { factorial_capped(s, MAX_EXACT_ORDERS) } else { None };
    let mut rows = Vec::with_capacity(alpha_grid.len());
    let mut g_fs = Vec::with_capacity(alpha_grid.len());
    for &alpha in alpha_grid {
        let mut disp_sum = vec![0.0; theta.len()];
        let mut runs = 0usize;
        let mut accumulate = |batches: &[Batch]| -> Result<()> {
            let (_, delta) = inner_loop(model, theta, batches, alpha)?;
            axpy(&mut disp_sum, -1.0, &delta);
            runs += 1;
            Ok(())
        };
        match (exact_orders, batch_size) {
            (Some(_), _) => {
                let mut order: Vec<usize> = (0..s).collect();
                loop {
                    let seq: Vec<Batch> = order.iter().map(|&k| full[k].clone()).collect();
                    accumulate(&seq)?;
                    if !next_permutation(&mut order) {
                        break;
                    }
                }
            }
            (None, None) => {
                // Same orders at every α so the grid points share their noise.
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut order: Vec<usize> = (0..s).collect();
                for _ in 0..n_mc {
                    order.shuffle(&mut rng);
                    let seq: Vec<Batch> = order.iter().map(|&k| full[k].clone()).collect();
                    accumulate(&seq)?;
                }
            }
            (None, Some(b)) => {
                let mut stream = BatchStream::new(dataset, b, seed, OrderPolicy::PermuteDomains)?;
                for _ in 0..n_mc {
                    accumulate(&stream.next_batches())?;
                }
            }
        }
        let measured: Vec<f64> = disp_sum.iter().map(|x| x / runs as f64).collect();
        let erm_part = alpha * s as f64;
        let g_f: Vec<f64> = measured.iter().zip(&g_bar).map(|(m, g)| m - erm_part * g).collect();
        let residual: Vec<f64> = measured
            .iter()
            .zip(&g_bar)
            .zip(&d_gip)
            .map(|((m, g), d)| m - (erm_part * g - alpha * alpha * pair_coef * d))
            .collect();
        let gf_norm = norm(&g_f);
        let cosine = (gf_norm >= GF_NORM_FLOOR && gg_norm > 0.0).then(|| dot(&g_f, &g_g) / (gf_norm * gg_norm));
        rows.push(ProbeRow { alpha, cosine, gf_norm, gg_norm, residual_norm: norm(&residual) });
        g_fs.push(g_f);
    }
    Ok(TheoremProbe {
        alpha_grid: alpha_grid.to_vec(),
        rows,
        g_f: g_fs,
        g_g,
        n_mc: if let Some(k) = exact_orders { k } else { n_mc },
        exact: exact_orders.is_some(),
    })
}
