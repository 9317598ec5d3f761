#![allow(dead_code)]

use std::collections::BTreeMap;

use bimodal_cl::gcl::gcl_loss_full;
use bimodal_cl::{EncoderConfig, GclEstimatorState, GdroConfig, GdroEstimatorState, ParamVector, Sample, Temperature};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random encoder with every parameter (biases included) drawn uniformly.
pub fn random_params(rng: &mut ChaCha8Rng, cfg: EncoderConfig) -> ParamVector {
    let n = cfg.param_len();
    let values = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    ParamVector::from_values(cfg, values).unwrap()
}

pub fn random_samples(rng: &mut ChaCha8Rng, n: usize, dim: usize, classes: &[u32]) -> Vec<Sample> {
    (0..n)
        .map(|i| Sample {
            id: 1000 + i as u64,
            x: (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect(),
            class: classes[i % classes.len()],
            task: 0,
        })
        .collect()
}

/// Central finite differences of `f` at `p`, step `h`, every coordinate.
pub fn finite_diff(p: &ParamVector, h: f64, mut f: impl FnMut(&ParamVector) -> f64) -> Vec<f64> {
    let mut q = p.clone();
    (0..p.len())
        .map(|k| {
            let orig = q.values()[k];
            q.values_mut()[k] = orig + h;
            let up = f(&q);
            q.values_mut()[k] = orig - h;
            let down = f(&q);
            q.values_mut()[k] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Worst violation of `|a - b| <= max(rel * max(|a|, |b|), abs_floor)`; <= 1 passes.
pub fn worst_ratio(got: &[f64], want: &[f64], rel: f64, abs_floor: f64) -> f64 {
    assert_eq!(got.len(), want.len());
    got.iter()
        .zip(want)
        .map(|(a, b)| {
            let tol = (rel * a.abs().max(b.abs())).max(abs_floor);
            (a - b).abs() / tol
        })
        .fold(0.0, f64::max)
}

pub fn assert_close_vec(got: &[f64], want: &[f64], rel: f64, abs_floor: f64, what: &str) {
    let r = worst_ratio(got, want, rel, abs_floor);
    assert!(r <= 1.0, "{what}: worst tolerance ratio {r}");
}

/// Straight-line forward pass of one encoder tower written against the
/// documented layout: weights `[W1 (first_out x fan_in), W2 (out x hidden)]`
/// then biases `[b1, b2]`, starting at the given offsets.
pub fn tower_oracle(
    p: &[f64],
    weights_at: usize,
    biases_at: usize,
    input: &[f64],
    hidden: usize,
    out: usize,
) -> Vec<f64> {
    let fan_in = input.len();
    let first_out = if hidden == 0 { out } else { hidden };
    let mut a = vec![0.0; first_out];
    for r in 0..first_out {
        let mut acc = p[biases_at + r];
        for c in 0..fan_in {
            acc += p[weights_at + r * fan_in + c] * input[c];
        }
        a[r] = acc;
    }
    let z = if hidden == 0 {
        a
    } else {
        let h: Vec<f64> = a.iter().map(|v| v.tanh()).collect();
        let w2 = weights_at + hidden * fan_in;
        let b2 = biases_at + hidden;
        (0..out)
            .map(|r| p[b2 + r] + (0..hidden).map(|c| p[w2 + r * hidden + c] * h[c]).sum::<f64>())
            .collect()
    };
    let n = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    z.iter().map(|v| v / n).collect()
}

fn tower_sizes(fan_in: usize, hidden: usize, out: usize) -> (usize, usize) {
    if hidden == 0 {
        (out * fan_in, out)
    } else {
        (hidden * fan_in + out * hidden, hidden + out)
    }
}

pub fn input_oracle(p: &ParamVector, x: &[f64]) -> Vec<f64> {
    let c = p.config();
    tower_oracle(p.values(), 0, tower_sizes(c.input_dim, c.hidden_dim, c.embed_dim).0, x, c.hidden_dim, c.embed_dim)
}

pub fn label_oracle(p: &ParamVector, class_id: u32) -> Vec<f64> {
    let c = p.config();
    let (iw, ib) = tower_sizes(c.input_dim, c.hidden_dim, c.embed_dim);
    let (lw, _) = tower_sizes(c.num_classes_max, c.hidden_dim, c.embed_dim);
    let mut one_hot = vec![0.0; c.num_classes_max];
    one_hot[class_id as usize] = 1.0;
    tower_oracle(p.values(), iw + ib, iw + ib + lw, &one_hot, c.hidden_dim, c.embed_dim)
}

pub fn sim_oracle(p: &ParamVector, x: &[f64], class_id: u32) -> f64 {
    input_oracle(p, x).iter().zip(label_oracle(p, class_id)).map(|(a, b)| a * b).sum()
}

pub fn lse(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Symmetric contrastive loss over the whole pool, from naive sums.
pub fn gcl_loss_oracle(p: &ParamVector, pool: &[Sample], tau: f64) -> f64 {
    let n = pool.len();
    let s = |i: usize, j: usize| sim_oracle(p, &pool[i].x, pool[j].class);
    let mut total = 0.0;
    for i in 0..n {
        let gi: f64 = (0..n).map(|j| (s(i, j) / tau).exp()).sum();
        let gt: f64 = (0..n).map(|j| (s(j, i) / tau).exp()).sum();
        let pos = (s(i, i) / tau).exp();
        total += -(pos / gi).ln() - (pos / gt).ln();
    }
    total / n as f64
}

/// Hinge normalizers `(g1, g2)` of one anchor, naive loops.
pub fn hinge_oracle(p: &ParamVector, pool: &[Sample], i: usize, margin: f64, tau: f64) -> (f64, f64) {
    let a = &pool[i];
    let pos = sim_oracle(p, &a.x, a.class);
    let mut g1 = 0.0;
    let mut g2 = 0.0;
    let mut n = 0.0;
    for b in pool.iter().filter(|b| b.class != a.class) {
        let h1 = (sim_oracle(p, &a.x, b.class) - pos + margin).max(0.0);
        let h2 = (sim_oracle(p, &b.x, a.class) - pos + margin).max(0.0);
        g1 += (h1 * h1 / tau).exp();
        g2 += (h2 * h2 / tau).exp();
        n += 1.0;
    }
    (g1 / n, g2 / n)
}

pub fn hk_oracle(p: &ParamVector, pool: &[Sample], class_id: u32, margin: f64, tau: f64) -> f64 {
    let idx: Vec<usize> = (0..pool.len()).filter(|&i| pool[i].class == class_id).collect();
    let mut total = 0.0;
    for &i in &idx {
        let (g1, g2) = hinge_oracle(p, pool, i, margin, tau);
        total += tau * g1.ln() + tau * g2.ln();
    }
    total / (2.0 * idx.len() as f64)
}

/// `λ log mean exp(h/λ)` composed with the per-class losses, naive.
pub fn dro_of_params(p: &ParamVector, pool: &[Sample], classes: &[u32], margin: f64, tau: f64, lambda: f64) -> f64 {
    let h: Vec<f64> = classes.iter().map(|&c| hk_oracle(p, pool, c, margin, tau) / lambda).collect();
    lambda * (lse(&h) - (h.len() as f64).ln())
}

/// Inner maximization `max_p Σ p_k h_k - λ KL(p, 1/K)` by projected gradient
/// ascent with backtracking. Steps are scaled by `diag(p)` and projected onto
/// the simplex in the matching norm, which keeps the iteration well
/// conditioned when some weights are tiny.
pub fn simplex_ascent(h: &[f64], lambda: f64, max_iters: usize) -> Vec<f64> {
    let k = h.len();
    let grad_at = |p: &[f64]| -> Vec<f64> {
        (0..k).map(|i| h[i] - lambda * ((p[i].max(1e-300) * k as f64).ln() + 1.0)).collect()
    };
    let mut p = vec![1.0 / k as f64; k];
    let mut step = 1.0;
    for _ in 0..max_iters {
        let grad = grad_at(&p);
        let d: Vec<f64> = p.iter().map(|v| v.max(1e-12)).collect();
        loop {
            let z: Vec<f64> = (0..k).map(|i| p[i] + step * d[i] * grad[i]).collect();
            let y = project_simplex_scaled(&z, &d);
            // By concavity f(y) >= f(p) + <grad f(y), y - p>.
            let gy = grad_at(&y);
            let certified: f64 = (0..k).map(|i| gy[i] * (y[i] - p[i])).sum();
            if certified >= 0.0 || step < 1e-16 {
                let moved = (0..k).map(|i| (y[i] - p[i]).abs()).fold(0.0, f64::max);
                p = y;
                step = (step * 1.5).min(1e6);
                if moved < 1e-15 {
                    return p;
                }
                break;
            }
            step *= 0.5;
        }
    }
    p
}

/// Projection of `z` onto the simplex in the norm `Σ (y_i - z_i)^2 / d_i`:
/// `y_i = max(0, z_i - θ d_i)` with `θ` found by bisection.
pub fn project_simplex_scaled(z: &[f64], d: &[f64]) -> Vec<f64> {
    let mass = |theta: f64| -> f64 { z.iter().zip(d).map(|(zi, di)| (zi - theta * di).max(0.0)).sum() };
    let (mut lo, mut hi) = (-1.0, 1.0);
    while mass(lo) < 1.0 {
        lo *= 2.0;
    }
    while mass(hi) > 1.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if mass(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let y: Vec<f64> = z.iter().zip(d).map(|(zi, di)| (zi - hi * di).max(0.0)).collect();
    let total: f64 = y.iter().sum();
    y.iter().map(|v| v / total).collect()
}

pub fn enc(input_dim: usize, classes: usize, hidden: usize, embed: usize) -> EncoderConfig {
    EncoderConfig {
        input_dim,
        num_classes_max: classes,
        hidden_dim: hidden,
        embed_dim: embed,
        seed: 0,
    }
}

/// With batch = pool and γ = 1 the estimator equals (τ/2)·∇L.
pub fn gcl_full_batch_ratio(seed: u64) -> f64 {
    let mut r = rng(seed);
    let n = r.random_range(2..=12);
    let c = enc(3, 4, [0, 3][seed as usize % 2], 3);
    let p = random_params(&mut r, c);
    assert!(p.len() <= 200);
    let pool = random_samples(&mut r, n, 3, &[0, 1, 2, 3]);
    let tau = Temperature::new(r.random_range(0.2..1.0)).unwrap();
    let mut st = GclEstimatorState::new(1.0).unwrap();
    st.update(&p, &pool, n, tau).unwrap();
    let m = st.gradient_estimate(&p, &pool, n, tau).unwrap();
    let fd = finite_diff(&p, 1e-5, |q| gcl_loss_full(q, &pool, tau).unwrap());
    let scaled: Vec<f64> = fd.iter().map(|g| 0.5 * tau.get() * g).collect();
    worst_ratio(m.values(), &scaled, 1e-4, 1e-7)
}

pub fn gdro_cfg(lambda: f64, margin: f64, tau: f64) -> GdroConfig {
    GdroConfig {
        lambda,
        gamma: 1.0,
        margin,
        tau: Temperature::new(tau).unwrap(),
        batch_classes: 3,
        batch_per_class: 4,
    }
}

pub fn by_class(pool: &[Sample]) -> BTreeMap<u32, Vec<Sample>> {
    let mut m: BTreeMap<u32, Vec<Sample>> = BTreeMap::new();
    for s in pool {
        m.entry(s.class).or_default().push(s.clone());
    }
    m
}

pub fn gdro_full_batch_ratio(seed: u64) -> f64 {
    let mut r = rng(seed);
    let c = enc(3, 3, [0, 3][seed as usize % 2], 3);
    let p = random_params(&mut r, c);
    assert!(p.len() <= 200);
    let pool = random_samples(&mut r, 12, 3, &[0, 1, 2]);
    let tau = r.random_range(0.3..1.0);
    let lambda = r.random_range(0.1..2.0);
    let margin = r.random_range(0.5..1.5);
    let cfg = gdro_cfg(lambda, margin, tau);
    let batches = by_class(&pool);
    let mut st = GdroEstimatorState::new(1.0, lambda).unwrap();
    st.update(&p, &[0, 1, 2], &batches, &cfg).unwrap();
    let g = st.gradient_estimate(&p, &[0, 1, 2], &batches, &cfg).unwrap();
    let fd = finite_diff(&p, 1e-5, |q| dro_of_params(q, &pool, &[0, 1, 2], margin, tau, lambda));
    worst_ratio(g.values(), &fd, 1e-4, 1e-7)
}
