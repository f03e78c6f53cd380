//! GIP identity against a brute-force pairwise sum, and the GIP parameter
//! gradient against finite differences of GIP itself.

use gradmatch_core::{default_hvp_step, gip, gip_gradient, hvp, Batch, GradEngine, Model, ModelFamily};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn brute_force(grads: &[Vec<f64>], normalized: bool) -> f64 {
    let s = grads.len();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut total = 0.0;
    for i in 0..s {
        for j in 0..s {
            if i == j {
                continue;
            }
            let mut ip: f64 = grads[i].iter().zip(&grads[j]).map(|(a, b)| a * b).sum();
            if normalized {
                ip /= norm(&grads[i]) * norm(&grads[j]);
            }
            total += ip;
        }
    }
    total / (s * (s - 1)) as f64
}

fn vectors(rng: &mut ChaCha8Rng, s: usize, d: usize) -> Vec<Vec<f64>> {
    (0..s).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

#[test]
fn two_orthogonal_vectors_give_exactly_zero() {
    let g = vec![vec![3.0, 0.0, 1.0], vec![0.0, 2.0, 0.0]];
    assert_eq!(gip(&g, false).unwrap(), 0.0);
    assert_eq!(gip(&g, true).unwrap(), 0.0);
}

#[test]
fn copies_of_one_vector() {
    let g = vec![1.5, -0.5, 2.0, 0.25];
    let sq: f64 = g.iter().map(|x| x * x).sum();
    for s in 2..9 {
        let gs = vec![g.clone(); s];
        assert!(rel(gip(&gs, false).unwrap(), sq) < 1e-14);
        assert!((gip(&gs, true).unwrap() - 1.0).abs() < 1e-14);
    }
}

#[test]
fn five_random_vectors_match_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let g = vectors(&mut rng, 5, 12);
    for normalized in [false, true] {
        let fast = gip(&g, normalized).unwrap();
        let slow = brute_force(&g, normalized);
        assert!(rel(fast, slow) <= 1e-12, "{normalized}: {fast} vs {slow}");
    }
}

#[test]
fn rejects_single_gradient_and_zero_norm() {
    assert!(gip(&[vec![1.0, 2.0]], false).is_err());
    assert!(gip(&[vec![1.0, 2.0], vec![0.0, 0.0], vec![1.0, 1.0]], true).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn linear_time_identity_matches_brute_force(s in 2usize..=10, d in 1usize..=100, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = vectors(&mut rng, s, d);
        for normalized in [false, true] {
            let fast = gip(&g, normalized).unwrap();
            let slow = brute_force(&g, normalized);
            // Relative to the size of the individual pair terms, which is
            // what the identity's cancellation is measured against.
            let scale = g.iter().map(|v| v.iter().map(|x| x * x).sum::<f64>()).sum::<f64>() / s as f64;
            let scale = if normalized { 1.0 } else { scale };
            prop_assert!((fast - slow).abs() <= 1e-10 * slow.abs().max(scale * 1e-3),
                "s={} d={} normalized={}: {} vs {}", s, d, normalized, fast, slow);
        }
    }

    #[test]
    fn normalized_gip_is_a_cosine(s in 2usize..=10, d in 1usize..=30, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = vectors(&mut rng, s, d);
        let v = gip(&g, true).unwrap();
        prop_assert!((-1.0..=1.0).contains(&v));
    }
}

fn random_batch(rng: &mut ChaCha8Rng, dim: usize, n: usize) -> Batch {
    let x: Vec<f64> = (0..dim * n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let y: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..2u8))).collect();
    Batch::from_rows(dim, x, y, None).unwrap()
}

/// Central differences of `θ ↦ f(θ)` along every coordinate.
fn fd_of(f: impl Fn(&[f64]) -> f64, theta: &[f64], h: f64) -> Vec<f64> {
    (0..theta.len())
        .map(|j| {
            let mut p = theta.to_vec();
            p[j] += h;
            let mut q = theta.to_vec();
            q[j] -= h;
            (f(&p) - f(&q)) / (2.0 * h)
        })
        .collect()
}

fn rel_vec(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    d / b.iter().map(|y| y * y).sum::<f64>().sqrt()
}

#[test]
fn gip_gradient_matches_finite_differences_of_gip() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for fam in [ModelFamily::LinearSigmoidBce, ModelFamily::Mlp1 { hidden: 3 }] {
        let e = GradEngine::new(fam, 3).unwrap();
        let batches: Vec<Batch> = (0..4).map(|_| random_batch(&mut rng, 3, 6)).collect();
        let theta: Vec<f64> = (0..e.param_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        for normalized in [false, true] {
            let analytic = gip_gradient(&e, &theta, &batches, normalized, default_hvp_step(&theta)).unwrap();
            let gip_at = |t: &[f64]| {
                let g: Vec<Vec<f64>> = batches.iter().map(|b| e.grad(t, b).unwrap()).collect();
                gip(&g, normalized).unwrap()
            };
            let numeric = fd_of(gip_at, &theta, 1e-5);
            let err = rel_vec(&analytic, &numeric);
            assert!(err < 1e-5, "{fam:?} normalized={normalized}: {err:e}");
        }
    }
}

#[test]
fn identical_batches_give_twice_hessian_times_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let e = GradEngine::new(ModelFamily::Mlp1 { hidden: 4 }, 3).unwrap();
    let b = random_batch(&mut rng, 3, 10);
    let theta: Vec<f64> = (0..e.param_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let step = default_hvp_step(&theta);
    let d = gip_gradient(&e, &theta, &[b.clone(), b.clone()], false, step).unwrap();

    let g = e.grad(&theta, &b).unwrap();
    let two_hg: Vec<f64> = hvp(&e, &theta, &b, &g, step).unwrap().iter().map(|x| 2.0 * x).collect();
    assert!(rel_vec(&d, &two_hg) < 1e-12);

    let sq_norm = |t: &[f64]| e.grad(t, &b).unwrap().iter().map(|x| x * x).sum::<f64>();
    let numeric = fd_of(sq_norm, &theta, 1e-5);
    assert!(rel_vec(&d, &numeric) < 1e-5);
}
