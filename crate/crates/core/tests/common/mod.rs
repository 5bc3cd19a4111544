//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use dir_sparse::linalg::least_norm_solution;
use dir_sparse::{DenseMatrix, LossSpec, PenaltySpec, ProblemInstance};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut impl Rng, m: usize, n: usize) -> DenseMatrix {
    DenseMatrix::from_fn(m, n, |_, _| rng.sample(StandardNormal)).unwrap()
}

pub fn gaussian_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Projection onto `{sum w_i |x_i| <= tau}` by solving the piecewise-linear
/// multiplier equation: coarse grid for a bracket, then bisection.
pub fn brute_force_projection(y: &[f64], w: &[f64], tau: f64) -> Vec<f64> {
    let mass = |theta: f64| -> f64 { y.iter().zip(w).map(|(yi, wi)| wi * (yi.abs() - theta * wi).max(0.0)).sum() };
    let shrink = |theta: f64| -> Vec<f64> {
        y.iter().zip(w).map(|(yi, wi)| yi.signum() * (yi.abs() - theta * wi).max(0.0)).collect()
    };
    if mass(0.0) <= tau {
        return y.to_vec();
    }
    let top = y.iter().zip(w).map(|(yi, wi)| yi.abs() / wi).fold(0.0, f64::max);
    let grid = 2000;
    let mut lo = 0.0;
    let mut hi = top;
    for k in 1..=grid {
        let t = top * k as f64 / grid as f64;
        if mass(t) <= tau {
            hi = t;
            lo = top * (k - 1) as f64 / grid as f64;
            break;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mass(mid) > tau {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    shrink(0.5 * (lo + hi))
}

/// `argmin_x 0.5 (x - v)^2 + t |x|` by ternary search on a bracket. Accurate
/// to about the square root of machine epsilon, where the objective flattens.
pub fn ternary_prox(v: f64, t: f64) -> f64 {
    let f = |x: f64| 0.5 * (x - v) * (x - v) + t * x.abs();
    let (mut lo, mut hi) = (-v.abs() - 1.0, v.abs() + 1.0);
    for _ in 0..300 {
        let a = lo + (hi - lo) / 3.0;
        let b = hi - (hi - lo) / 3.0;
        if f(a) <= f(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    0.5 * (lo + hi)
}

/// Central differences of `f` at `x` with step `1e-6 (1 + |x_j|)`.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|j| {
            let h = 1e-6 * (1.0 + x[j].abs());
            xp[j] = x[j] + h;
            let fp = f(&xp);
            xp[j] = x[j] - h;
            let fm = f(&xp);
            xp[j] = x[j];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Solution of `min sum w_i |x_i|  s.t.  ||B x - c|| <= r` by enumerating
/// supports of size at most `rank(B)` and sign patterns.
///
/// On a fixed support and sign pattern the problem is a linear objective
/// over an ellipsoid, solved in closed form; candidates whose signs disagree
/// with the pattern are discarded.
#[derive(Debug, Clone)]
pub struct BpdnOracle {
    pub x: Vec<f64>,
    pub objective: f64,
    /// `dist(0, w o d|x| + nu B^T (B x - c))` at the best `nu >= 0`.
    pub kkt: f64,
}

pub fn bpdn_oracle(b: &DMatrix<f64>, c: &DVector<f64>, w: &[f64], r: f64) -> Option<BpdnOracle> {
    let (m, n) = b.shape();
    let max_support = m.min(n);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1u32..(1 << n) {
        let support: Vec<usize> = (0..n).filter(|j| mask & (1 << j) != 0).collect();
        if support.len() > max_support {
            continue;
        }
        let k = support.len();
        let bs = DMatrix::from_fn(m, k, |i, j| b[(i, support[j])]);
        let gram = bs.transpose() * &bs;
        let Some(gram_inv) = gram.clone().try_inverse() else { continue };
        let z0 = &gram_inv * bs.transpose() * c;
        let rho_sq = (c - &bs * &z0).norm_squared();
        let radius_sq = r * r - rho_sq;
        if radius_sq <= 0.0 {
            continue;
        }
        for signs in 0u32..(1 << k) {
            let g = DVector::from_fn(k, |j, _| {
                let s = if signs & (1 << j) != 0 { -1.0 } else { 1.0 };
                s * w[support[j]]
            });
            let mg = &gram_inv * &g;
            let q = g.dot(&mg);
            if q <= 0.0 {
                continue;
            }
            let z = &z0 - mg * (radius_sq.sqrt() / q.sqrt());
            let consistent = (0..k).all(|j| z[j] * g[j] >= -1e-14);
            if !consistent {
                continue;
            }
            let obj: f64 = (0..k).map(|j| w[support[j]] * z[j].abs()).sum();
            if best.as_ref().is_none_or(|(o, _)| obj < *o) {
                let mut x = vec![0.0; n];
                for (j, &col) in support.iter().enumerate() {
                    x[col] = z[j];
                }
                best = Some((obj, x));
            }
        }
    }
    let (objective, x) = best?;
    let xv = DVector::from_column_slice(&x);
    let u = b * &xv - c;
    let h = b.transpose() * &u;
    // Best multiplier for the support equations, then check the zero rows.
    let (mut num, mut den) = (0.0, 0.0);
    for j in 0..n {
        if x[j] != 0.0 {
            num -= h[j] * w[j] * x[j].signum();
            den += h[j] * h[j];
        }
    }
    let nu = if den > 0.0 { (num / den).max(0.0) } else { 0.0 };
    let kkt = (0..n)
        .map(|j| {
            let d = if x[j] != 0.0 { w[j] * x[j].signum() + nu * h[j] } else { ((nu * h[j]).abs() - w[j]).max(0.0) };
            d * d
        })
        .sum::<f64>()
        .sqrt();
    Some(BpdnOracle { x, objective, kkt })
}

/// A random instance plus a feasible, generally non-interpolating iterate.
pub fn random_instance_and_iterate(rng: &mut impl Rng, m: usize, n: usize, loss: LossSpec) -> (ProblemInstance, Vec<f64>) {
    loop {
        let a = gaussian_matrix(rng, m, n);
        let b = gaussian_vec(rng, m);
        let total: f64 = b.iter().map(|bi| loss.eval(bi * bi).unwrap()).sum();
        let fraction: f64 = rng.random_range(0.2..0.8);
        let Ok(inst) = ProblemInstance::new(a, b, fraction * total, loss, PenaltySpec::log(0.1).unwrap()) else { continue };
        let base = least_norm_solution(inst.a(), inst.b()).unwrap();
        let dir = gaussian_vec(rng, n);
        let mut t = 1.0;
        let x = loop {
            let cand: Vec<f64> = base.iter().zip(&dir).map(|(p, d)| p + t * d).collect();
            if inst.constraint_value(&cand) <= inst.sigma() * 0.9 {
                break cand;
            }
            t *= 0.5;
        };
        return (inst, x);
    }
}

pub fn to_dmatrix(a: &DenseMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(a.rows(), a.cols(), a.data())
}
