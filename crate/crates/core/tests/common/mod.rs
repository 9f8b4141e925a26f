//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vaecil::learner::batch_objective;
use vaecil::losses::{self, HyperParams, LossBreakdown};
use vaecil::numcore::{Activation, Mlp, Tensor};
use vaecil::vae::{kl_per_row, ClassVae};

/// MNIST directory: `$VAECIL_MNIST_DIR`, else `data/mnist` at the workspace root.
pub fn mnist_dir() -> PathBuf {
    std::env::var_os("VAECIL_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

pub fn mnist_available() -> bool {
    let dir = mnist_dir();
    [
        "train-images-idx3-ubyte",
        "train-labels-idx1-ubyte",
        "t10k-images-idx3-ubyte",
        "t10k-labels-idx1-ubyte",
    ]
    .iter()
    .all(|f| dir.join(f).is_file())
}

/// Plain-loop reimplementation of every loss term.
#[allow(clippy::needless_range_loop)]
pub mod oracle {
    pub fn hinge(v: f64) -> f64 {
        if v > 0.0 {
            v
        } else {
            0.0
        }
    }

    pub fn intra(s_pos: &[f64], r_intra: f64) -> f64 {
        let mut acc = 0.0;
        for &s in s_pos {
            acc += hinge(s - r_intra);
        }
        acc / s_pos.len() as f64
    }

    /// `old[i][j]` is predecessor `j`'s score of positive `i`.
    pub fn cc(s_pos: &[f64], old: &[Vec<f64>]) -> f64 {
        let m = old.first().map_or(0, Vec::len);
        if m == 0 {
            return 0.0;
        }
        let mut acc = 0.0;
        for (i, &s) in s_pos.iter().enumerate() {
            let mut row = 0.0;
            for j in 0..m {
                row += hinge(s - old[i][j]);
            }
            acc += row / m as f64;
        }
        acc / s_pos.len() as f64
    }

    pub fn inter(s_neg: &[f64], r_inter: f64) -> f64 {
        if s_neg.is_empty() {
            return 0.0;
        }
        let mut acc = 0.0;
        for &s in s_neg {
            acc += hinge(r_inter - s);
        }
        acc / s_neg.len() as f64
    }

    /// Batch mean of `-0.5 * sum(1 + lv - mu^2 - exp(lv))`.
    pub fn kl(mean: &[Vec<f64>], log_var: &[Vec<f64>]) -> f64 {
        let mut acc = 0.0;
        for (mu, lv) in mean.iter().zip(log_var) {
            let mut row = 0.0;
            for k in 0..mu.len() {
                row += 1.0 + lv[k] - mu[k] * mu[k] - lv[k].exp();
            }
            acc += -0.5 * row;
        }
        acc / mean.len() as f64
    }

    pub fn sse(a: &[f64], b: &[f64]) -> f64 {
        let mut acc = 0.0;
        for k in 0..a.len() {
            let d = a[k] - b[k];
            acc += d * d;
        }
        acc
    }
}

pub fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    if t.numel() == 0 {
        return Vec::new();
    }
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

/// Random score and latent inputs for one loss evaluation.
pub struct LossFixture {
    pub s_pos: Vec<f64>,
    pub s_neg: Vec<f64>,
    pub old: Tensor,
    pub mean: Tensor,
    pub log_var: Tensor,
    pub hp: HyperParams,
}

pub fn loss_fixture(rng: &mut ChaCha8Rng) -> LossFixture {
    let n_pos = rng.random_range(1..12);
    let n_neg = rng.random_range(0..12);
    let n_old = rng.random_range(0..5);
    let latent = rng.random_range(1..6);
    let r_intra = rng.random_range(0.0..30.0);
    let hp = HyperParams {
        r_intra,
        r_inter: r_intra + rng.random_range(0.5..100.0),
        lambda1: rng.random_range(0.0..3.0),
        lambda2: rng.random_range(0.0..3.0),
        ..HyperParams::default()
    };
    let mut draw = |n: usize, lo: f64, hi: f64| {
        (0..n)
            .map(|_| rng.random_range(lo..hi))
            .collect::<Vec<f64>>()
    };
    let s_pos = draw(n_pos, 0.0, 150.0);
    let s_neg = draw(n_neg, 0.0, 150.0);
    let old = Tensor::matrix(n_pos, n_old, draw(n_pos * n_old, 0.0, 150.0)).unwrap();
    let mean = Tensor::matrix(n_pos, latent, draw(n_pos * latent, -3.0, 3.0)).unwrap();
    let log_var = Tensor::matrix(n_pos, latent, draw(n_pos * latent, -4.0, 2.0)).unwrap();
    LossFixture {
        s_pos,
        s_neg,
        old,
        mean,
        log_var,
        hp,
    }
}

/// `(library, oracle)` breakdowns for one fixture.
pub fn compare_losses(f: &LossFixture) -> (LossBreakdown, LossBreakdown) {
    let hp = &f.hp;
    let kl_rows = kl_per_row(&f.mean, &f.log_var);
    let lib = losses::total_loss(
        losses::intra_loss(&f.s_pos, hp.r_intra).unwrap(),
        losses::cc_loss(&f.s_pos, &f.old).unwrap(),
        losses::inter_loss(&f.s_neg, hp.r_inter),
        kl_rows.iter().sum::<f64>() / kl_rows.len() as f64,
        hp,
    )
    .unwrap();
    let intra = oracle::intra(&f.s_pos, hp.r_intra);
    let cc = oracle::cc(&f.s_pos, &rows(&f.old));
    let inter = oracle::inter(&f.s_neg, hp.r_inter);
    let kl = oracle::kl(&rows(&f.mean), &rows(&f.log_var));
    let total = intra + hp.lambda1 * cc + hp.lambda2 * inter + kl;
    (
        lib,
        LossBreakdown {
            intra,
            cc,
            inter,
            kl,
            total,
        },
    )
}

pub fn max_loss_gap(a: &LossBreakdown, b: &LossBreakdown) -> f64 {
    [
        (a.intra - b.intra).abs(),
        (a.cc - b.cc).abs(),
        (a.inter - b.inter).abs(),
        (a.kl - b.kl).abs(),
        (a.total - b.total).abs(),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

/// Outcome of comparing analytic and central-difference gradients.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub checked: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub worst: String,
}

struct GradProblem {
    vae: ClassVae,
    x: Tensor,
    noise: Tensor,
    n_pos: usize,
    old: Tensor,
    hp: HyperParams,
}

impl GradProblem {
    /// Objective recomputed from the forward pass with the oracle loss terms.
    fn loss(&self, vae: &ClassVae) -> f64 {
        let trace = vae
            .forward_train_with_noise(&self.x, self.noise.clone())
            .unwrap();
        let recon = rows(trace.reconstruction());
        let x = rows(&self.x);
        let scores: Vec<f64> = recon
            .iter()
            .zip(&x)
            .map(|(r, x)| oracle::sse(r, x))
            .collect();
        let (s_pos, s_neg) = scores.split_at(self.n_pos);
        let mean = rows(&trace.draw.mean);
        let lv = rows(&trace.draw.log_variance);
        let hp = &self.hp;
        oracle::intra(s_pos, hp.r_intra)
            + hp.lambda1 * oracle::cc(s_pos, &rows(&self.old))
            + hp.lambda2 * oracle::inter(s_neg, hp.r_inter)
            + oracle::kl(&mean[..self.n_pos], &lv[..self.n_pos])
    }

    /// Smallest distance of any hinge argument from its kink.
    fn kink_margin(&self, vae: &ClassVae) -> f64 {
        let trace = vae
            .forward_train_with_noise(&self.x, self.noise.clone())
            .unwrap();
        let (s_pos, s_neg) = trace.scores.split_at(self.n_pos);
        let mut m = f64::INFINITY;
        for (i, &s) in s_pos.iter().enumerate() {
            m = m.min((s - self.hp.r_intra).abs());
            if self.old.numel() > 0 {
                for &o in self.old.row(i) {
                    m = m.min((s - o).abs());
                }
            }
        }
        for &s in s_neg {
            m = m.min((s - self.hp.r_inter).abs());
        }
        m
    }
}

fn perturbed(
    vae: &ClassVae,
    net: usize,
    layer: usize,
    bias: bool,
    idx: usize,
    delta: f64,
) -> ClassVae {
    let mut enc: Mlp = vae.encoder().clone();
    let mut dec: Mlp = vae.decoder().clone();
    let target = if net == 0 { &mut enc } else { &mut dec };
    let l = &mut target.layers_mut()[layer];
    if bias {
        l.bias_mut()[idx] += delta;
    } else {
        l.weights_mut()[idx] += delta;
    }
    ClassVae::from_parts(vae.label(), enc, dec, false).unwrap()
}

/// Checks every parameter of a small random VAE under the full training objective.
pub fn gradient_check(seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = rng.random_range(3..7);
    let hidden = [rng.random_range(2..6), rng.random_range(2..5)];
    let latent = rng.random_range(1..4);
    let output = if rng.random_bool(0.5) {
        Activation::Sigmoid
    } else {
        Activation::Identity
    };
    let mut vae = ClassVae::new(0, dim, &hidden, latent, output, &mut rng).unwrap();
    // Non-zero biases so every code path carries signal.
    let mut enc = vae.encoder().clone();
    let mut dec = vae.decoder().clone();
    for l in enc
        .layers_mut()
        .iter_mut()
        .chain(dec.layers_mut().iter_mut())
    {
        for b in l.bias_mut() {
            *b = rng.random_range(-0.3..0.3);
        }
    }
    vae = ClassVae::from_parts(0, enc, dec, false).unwrap();

    let n_pos = rng.random_range(2..6);
    let n_neg = rng.random_range(0..5);
    let n = n_pos + n_neg;
    let x = Tensor::matrix(
        n,
        dim,
        (0..n * dim).map(|_| rng.random_range(0.0..1.0)).collect(),
    )
    .unwrap();
    let noise = Tensor::matrix(
        n,
        latent,
        (0..n * latent)
            .map(|_| rng.random_range(-1.5..1.5))
            .collect(),
    )
    .unwrap();
    let trace = vae.forward_train_with_noise(&x, noise.clone()).unwrap();
    let (s_pos, s_neg) = trace.scores.split_at(n_pos);
    let mean_of = |s: &[f64]| s.iter().sum::<f64>() / s.len().max(1) as f64;
    let n_old = rng.random_range(0..4);
    let old: Vec<f64> = (0..n_pos * n_old)
        .map(|k| {
            s_pos[k / n_old.max(1)]
                + rng.random_range(0.05..0.5) * if rng.random_bool(0.5) { 1.0 } else { -1.0 }
        })
        .collect();
    let r_intra = mean_of(s_pos) + 0.0123;
    let mut problem = GradProblem {
        vae,
        x,
        noise,
        n_pos,
        old: Tensor::matrix(n_pos, n_old, old).unwrap(),
        hp: HyperParams {
            r_intra,
            r_inter: (mean_of(s_neg) + 0.0171).max(r_intra + 0.5),
            lambda1: rng.random_range(0.5..2.0),
            lambda2: rng.random_range(0.5..2.0),
            ..HyperParams::default()
        },
    };
    // Keep every hinge away from its kink.
    while problem.kink_margin(&problem.vae) < 1e-3 {
        problem.hp.r_intra += 2e-3;
        problem.hp.r_inter += 2e-3;
    }

    let mut vae = problem.vae.clone();
    let trace = vae
        .forward_train_with_noise(&problem.x, problem.noise.clone())
        .unwrap();
    batch_objective(&mut vae, &trace, problem.n_pos, &problem.old, &problem.hp).unwrap();

    let h = 1e-5;
    let mut report = GradCheck {
        checked: 0,
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        worst: String::new(),
    };
    for (net, mlp) in [vae.encoder(), vae.decoder()].into_iter().enumerate() {
        for (li, layer) in mlp.layers().iter().enumerate() {
            for (bias, grads) in [(false, layer.grad_weights()), (true, layer.grad_bias())] {
                for (idx, &analytic) in grads.iter().enumerate() {
                    let plus = perturbed(&problem.vae, net, li, bias, idx, h);
                    let minus = perturbed(&problem.vae, net, li, bias, idx, -h);
                    if problem.kink_margin(&plus).min(problem.kink_margin(&minus)) < 1e-6 {
                        continue;
                    }
                    let fd = (problem.loss(&plus) - problem.loss(&minus)) / (2.0 * h);
                    let diff = (fd - analytic).abs();
                    // Gradients below 1e-6 in magnitude are compared on an absolute scale.
                    let rel = diff / fd.abs().max(analytic.abs()).max(1e-6);
                    report.checked += 1;
                    report.max_abs_err = report.max_abs_err.max(diff);
                    if rel > report.max_rel_err {
                        report.max_rel_err = rel;
                        report.worst = format!(
                            "{}.{li}.{}[{idx}] analytic {analytic:e} fd {fd:e}",
                            if net == 0 { "encoder" } else { "decoder" },
                            if bias { "bias" } else { "weight" }
                        );
                    }
                }
            }
        }
    }
    report
}
