//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use spikedual::{ExperimentConfig, Kernel};

pub const FIVE_SPIKES: &str = "sources = 0.2, 0.4, 0.6, 0.7, 0.75\namplitudes = 1, 1, 1, 1, 1\n\
sigma = 0.1\nm = 15\npi = 10\nalpha = 0.25\niterations = 2000\n";

pub const THREE_SPIKES: &str = "sources = 0.25, 0.63, 0.889\namplitudes = 0.8, 0.5, 0.9\n\
sigma = 0.07\nm = 21\ntau = 1e5\npi = 100\niterations = 500\nreference_iterations = 500\n\
noise_iterations = 100\nwindow_start = 20\nwindow_end = 270\n";

pub fn five_spikes() -> ExperimentConfig {
    ExperimentConfig::parse(FIVE_SPIKES).unwrap()
}

pub fn three_spikes() -> ExperimentConfig {
    ExperimentConfig::parse(THREE_SPIKES).unwrap()
}

/// Gaussian written out again, independent of `Kernel`.
pub fn gauss(sigma: f64, t: f64) -> f64 {
    (-(t / sigma).powi(2)).exp()
}

fn stencil(f: &dyn Fn(f64) -> f64, t: f64, h: f64, order: u8) -> f64 {
    match order {
        1 => (f(t + h) - f(t - h)) / (2.0 * h),
        2 => (f(t + h) - 2.0 * f(t) + f(t - h)) / (h * h),
        3 => (f(t + 2.0 * h) - 2.0 * f(t + h) + 2.0 * f(t - h) - f(t - 2.0 * h)) / (2.0 * h * h * h),
        _ => panic!("order {order}"),
    }
}

/// Central difference of order 1 to 3, Richardson-extrapolated over `levels` halvings.
///
/// Every stencil here has an error expansion in even powers of `h`.
pub fn richardson(f: &dyn Fn(f64) -> f64, t: f64, h: f64, order: u8, levels: usize) -> f64 {
    let mut table: Vec<f64> = (0..=levels).map(|i| stencil(f, t, h / 2f64.powi(i as i32), order)).collect();
    for k in 1..=levels {
        let w = 4f64.powi(k as i32);
        for i in (k..=levels).rev() {
            table[i] = (w * table[i] - table[i - 1]) / (w - 1.0);
        }
    }
    table[levels]
}

/// Maximum of `g` on `[lo, hi]`: dense scan, then golden-section refinement of the best bracket.
pub fn global_max(g: &dyn Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> (f64, f64) {
    let step = (hi - lo) / (n - 1) as f64;
    let (mut bi, mut bv) = (0, f64::NEG_INFINITY);
    for i in 0..n {
        let v = g(lo + i as f64 * step);
        if v > bv {
            (bi, bv) = (i, v);
        }
    }
    let (mut a, mut b) = (lo + (bi.max(1) - 1) as f64 * step, lo + (bi + 1).min(n - 1) as f64 * step);
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let (mut x1, mut x2) = (b - r * (b - a), a + r * (b - a));
    let (mut f1, mut f2) = (g(x1), g(x2));
    for _ in 0..200 {
        if f1 > f2 {
            b = x2;
            (x2, f2) = (x1, f1);
            x1 = b - r * (b - a);
            f1 = g(x1);
        } else {
            a = x1;
            (x1, f1) = (x2, f2);
            x2 = a + r * (b - a);
            f2 = g(x2);
        }
    }
    let t = (a + b) / 2.0;
    (t, g(t).max(bv))
}

pub fn kernel_derivative(k: &Kernel, order: u8, t: f64) -> f64 {
    k.derivative(t, order).unwrap()
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}
