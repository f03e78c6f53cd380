//! Inter-domain gradient inner product (GIP) and its parameter gradient.
//!
//! GIP is the mean over ordered pairs `i ≠ j` of `g_i·g_j`, or of the
//! cosine `g_i·g_j / (‖g_i‖‖g_j‖)` in normalized form. Both are evaluated
//! in linear time through `Σ_{i≠j} g_i·g_j = ‖Σ g_i‖² − Σ ‖g_i‖²`.

use alloc::vec;
use alloc::vec::Vec;

use crate::data::Batch;
use crate::engine::{hvp, Model};
use crate::vecops::{axpy, dot, norm};
use crate::{Error, Result};

/// Norm floor used when differentiating the cosine form.
pub const NORM_FLOOR: f64 = 1e-12;

fn check_grads(grads: &[Vec<f64>]) -> Result<usize> {
    if grads.len() < 2 {
        return Err(Error::invalid("GIP needs at least two gradients"));
    }
    let d = grads[0].len();
    if let Some(g) = grads.iter().find(|g| g.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, got: g.len() });
    }
    Ok(d)
}

fn pair_mean<'a>(d: usize, s: usize, vs: impl Iterator<Item = &'a [f64]>) -> f64 {
    let mut sum = vec![0.0; d];
    let mut sq = 0.0;
    for v in vs {
        axpy(&mut sum, 1.0, v);
        sq += dot(v, v);
    }
    (dot(&sum, &sum) - sq) / (s * (s - 1)) as f64
}

/// Mean pairwise inner product (or cosine, when `normalized`) of the gradients.
///
/// Normalized values are clamped to `[-1, 1]`; a zero gradient is rejected
/// in that mode.
pub fn gip(grads: &[Vec<f64>], normalized: bool) -> Result<f64> {
    let d = check_grads(grads)?;
    let s = grads.len();
    if s == 2 {
        // One pair: the direct product is cheaper and exact for orthogonal inputs.
        let ip = dot(&grads[0], &grads[1]);
        if !normalized {
            return Ok(ip);
        }
        let (n0, n1) = (norm(&grads[0]), norm(&grads[1]));
        if n0 == 0.0 || n1 == 0.0 {
            return Err(Error::ZeroNorm("gradient in normalized GIP"));
        }
        return Ok((ip / (n0 * n1)).clamp(-1.0, 1.0));
    }
    if !normalized {
        return Ok(pair_mean(d, s, grads.iter().map(Vec::as_slice)));
    }
    let mut units = Vec::with_capacity(s);
    for g in grads {
        let n = norm(g);
        if n == 0.0 {
            return Err(Error::ZeroNorm("gradient in normalized GIP"));
        }
        units.push(g.iter().map(|x| x / n).collect::<Vec<f64>>());
    }
    Ok(pair_mean(d, s, units.iter().map(Vec::as_slice)).clamp(-1.0, 1.0))
}

/// Per-domain coefficients `u_i = ∂GIP/∂g_i`.
///
/// The parameter gradient of GIP is then `Σ_i H_i·u_i` with `H_i` the
/// Hessian of domain `i`'s loss.
pub fn gip_dual(grads: &[Vec<f64>], normalized: bool) -> Result<Vec<Vec<f64>>> {
    let d = check_grads(grads)?;
    let s = grads.len();
    let k = 2.0 / (s * (s - 1)) as f64;
    if !normalized {
        let mut total = vec![0.0; d];
        for g in grads {
            axpy(&mut total, 1.0, g);
        }
        return Ok(grads.iter().map(|g| total.iter().zip(g).map(|(t, gi)| k * (t - gi)).collect()).collect());
    }
    let norms: Vec<f64> = grads.iter().map(|g| norm(g).max(NORM_FLOOR)).collect();
    let units: Vec<Vec<f64>> = grads.iter().zip(&norms).map(|(g, n)| g.iter().map(|x| x / n).collect()).collect();
    let mut total = vec![0.0; d];
    for u in &units {
        axpy(&mut total, 1.0, u);
    }
    // Σ_{j≠i} [ĝ_j/n_i − c_ij·g_i/n_i²] with ĝ = g/n and c_ij = ĝ_i·ĝ_j.
    Ok(units
        .iter()
        .zip(&norms)
        .map(|(ui, &ni)| {
            let others: Vec<f64> = total.iter().zip(ui).map(|(t, x)| t - x).collect();
            let cos_sum = dot(ui, &others);
            others.iter().zip(ui).map(|(o, x)| k * (o - cos_sum * x) / ni).collect()
        })
        .collect())
}

/// Parameter gradient of GIP over per-domain batches, given their gradients at `theta`.
pub(crate) fn gip_gradient_from(
    model: &(impl Model + ?Sized),
    theta: &[f64],
    batches: &[Batch],
    grads: &[Vec<f64>],
    normalized: bool,
    step: f64,
) -> Result<Vec<f64>> {
    let duals = gip_dual(grads, normalized)?;
    let mut out = vec![0.0; theta.len()];
    for (b, u) in batches.iter().zip(&duals) {
        if u.iter().all(|x| *x == 0.0) {
            continue;
        }
        let h = hvp(model, theta, b, u, step)?;
        axpy(&mut out, 1.0, &h);
    }
    Ok(out)
}

/// `∂GIP/∂θ` for one batch per domain, assembled from `S` Hessian-vector products.
pub fn gip_gradient(
    model: &(impl Model + ?Sized),
    theta: &[f64],
    batches: &[Batch],
    normalized: bool,
    step: f64,
) -> Result<Vec<f64>> {
    let grads = batches.iter().map(|b| model.grad(theta, b)).collect::<Result<Vec<_>>>()?;
    gip_gradient_from(model, theta, batches, &grads, normalized, step)
}
