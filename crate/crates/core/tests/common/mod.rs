#![allow(dead_code)]

//! Independent oracles for the 2×2 Boltzmann machine, written against the
//! raw energy `θ₁x₁² + θ₂x₁x₂ + θ₃x₂²` rather than the crate's tables.

pub const STATES: [[i32; 2]; 4] = [[0, 0], [0, 1], [1, 0], [1, 1]];

pub fn phi(x: [i32; 2]) -> [f64; 3] {
    let (a, b) = (x[0] as f64, x[1] as f64);
    [a * a, a * b, b * b]
}

pub fn energy(theta: &[f64], x: [i32; 2]) -> f64 {
    let f = phi(x);
    theta[0] * f[0] + theta[1] * f[1] + theta[2] * f[2]
}

/// `P(x_j = 1 | x_{−j})`.
pub fn prob_on(theta: &[f64], x: [i32; 2], j: usize) -> f64 {
    let mut on = x;
    on[j] = 1;
    let mut off = x;
    off[j] = 0;
    let (e1, e0) = (energy(theta, on), energy(theta, off));
    1.0 / (1.0 + (e0 - e1).exp())
}

pub fn probabilities(theta: &[f64]) -> [f64; 4] {
    let w: Vec<f64> = STATES.iter().map(|x| energy(theta, *x).exp()).collect();
    let z: f64 = w.iter().sum();
    [w[0] / z, w[1] / z, w[2] / z, w[3] / z]
}

/// The four outcomes of one random-scan step from `x`, with probabilities.
fn step_outcomes(theta: &[f64], x: [i32; 2]) -> [([i32; 2], f64); 4] {
    let mut out = [([0, 0], 0.0); 4];
    for j in 0..2 {
        let p1 = prob_on(theta, x, j);
        let mut on = x;
        on[j] = 1;
        let mut off = x;
        off[j] = 0;
        out[2 * j] = (on, 0.5 * p1);
        out[2 * j + 1] = (off, 0.5 * (1.0 - p1));
    }
    out
}

/// Every joint outcome of `n` chains run `m` steps each, as
/// `(endpoints, probability)`; `4^{n m}` entries.
pub fn joint_paths(theta: &[f64], data: &[[i32; 2]], m: usize) -> Vec<(Vec<[i32; 2]>, f64)> {
    let mut paths = vec![(data.to_vec(), 1.0)];
    for i in 0..data.len() {
        for _ in 0..m {
            let mut next = Vec::with_capacity(paths.len() * 4);
            for (ends, p) in &paths {
                for (y, q) in step_outcomes(theta, ends[i]) {
                    let mut e = ends.clone();
                    e[i] = y;
                    next.push((e, p * q));
                }
            }
            paths = next;
        }
    }
    paths
}

/// `(E[g_cd], E[‖θ + η g_cd − θ̂‖²])` by summing over every joint path.
pub fn brute_force_moments(
    theta: &[f64],
    data: &[[i32; 2]],
    m: usize,
    eta: f64,
    theta_hat: &[f64],
) -> ([f64; 3], f64) {
    let n = data.len() as f64;
    let mut emp = [0.0; 3];
    for x in data {
        for (k, v) in phi(*x).iter().enumerate() {
            emp[k] += v / n;
        }
    }
    let mut mean = [0.0; 3];
    let mut h2 = 0.0;
    for (ends, p) in joint_paths(theta, data, m) {
        let mut g = emp;
        for y in &ends {
            for (k, v) in phi(*y).iter().enumerate() {
                g[k] -= v / n;
            }
        }
        let mut sq = 0.0;
        for k in 0..3 {
            mean[k] += p * g[k];
            let r = theta[k] + eta * g[k] - theta_hat[k];
            sq += r * r;
        }
        h2 += p * sq;
    }
    (mean, h2)
}
