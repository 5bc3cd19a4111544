//! Random sparse-recovery instances with heavy-tailed noise.
//!
//! Draw order from a ChaCha20 stream seeded with `seed`: the entries of `A`
//! row by row, then the support (uniform without replacement), then the
//! Gaussian values on the support, then the uniforms behind the Cauchy noise.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Open01, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::losses::{loss_of_residual, LossSpec, PenaltySpec};
use crate::problem::ProblemInstance;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub m: usize,
    pub n: usize,
    pub s: usize,
    pub delta: f64,
    pub epsilon: f64,
    pub noise_scale: f64,
    pub sigma_factor: f64,
    pub seed: u64,
}

impl InstanceSpec {
    pub fn new(m: usize, n: usize, s: usize, seed: u64) -> Self {
        Self { m, n, s, delta: 0.05, epsilon: 0.1, noise_scale: 0.01, sigma_factor: 1.2, seed }
    }

    /// `(540 i, 2560 i, 80 i)`.
    pub fn benchmark(i: usize, seed: u64) -> Self {
        Self::new(540 * i, 2560 * i, 80 * i, seed)
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 || self.s == 0 {
            return Err(Error::Invalid("m, n and s must be positive".into()));
        }
        if self.s > self.n || self.m >= self.n {
            return Err(Error::Invalid(format!("need s <= n and m < n, got (m, n, s) = ({}, {}, {})", self.m, self.n, self.s)));
        }
        if !(self.delta > 0.0 && self.epsilon > 0.0 && self.sigma_factor > 0.0 && self.noise_scale >= 0.0) {
            return Err(Error::Invalid("delta, epsilon and sigma_factor must be positive; noise_scale nonnegative".into()));
        }
        Ok(())
    }

    pub fn loss(&self) -> Result<LossSpec> {
        LossSpec::cauchy(self.delta)
    }
}

/// The raw draws, before the instance is validated.
#[derive(Debug, Clone, PartialEq)]
pub struct RawInstance {
    pub a: DenseMatrix,
    pub x_orig: Vec<f64>,
    pub support: Vec<usize>,
    /// Standard Cauchy draws `eta`; `b = A x_orig + noise_scale * eta`.
    pub eta: Vec<f64>,
    pub b: Vec<f64>,
    pub sigma: f64,
}

pub fn generate_raw(spec: &InstanceSpec) -> Result<RawInstance> {
    spec.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let data: Vec<f64> = (0..spec.m * spec.n).map(|_| rng.sample(StandardNormal)).collect();
    let a = DenseMatrix::new(spec.m, spec.n, data)?;
    let mut support = index::sample(&mut rng, spec.n, spec.s).into_vec();
    let mut x_orig = vec![0.0; spec.n];
    for &j in &support {
        x_orig[j] = rng.sample(StandardNormal);
    }
    support.sort_unstable();
    let eta: Vec<f64> = (0..spec.m)
        .map(|_| {
            let u: f64 = rng.sample(Open01);
            (std::f64::consts::PI * (u - 0.5)).tan()
        })
        .collect();
    let mut b = vec![0.0; spec.m];
    a.mul_vec(&x_orig, &mut b);
    let noise: Vec<f64> = eta.iter().map(|e| spec.noise_scale * e).collect();
    for (bi, ni) in b.iter_mut().zip(&noise) {
        *bi += ni;
    }
    let sigma = spec.sigma_factor * loss_of_residual(&spec.loss()?, &noise);
    Ok(RawInstance { a, x_orig, support, eta, b, sigma })
}

/// A validated instance and the planted signal.
pub fn generate_instance(spec: &InstanceSpec) -> Result<(ProblemInstance, Vec<f64>)> {
    let raw = generate_raw(spec)?;
    let inst = ProblemInstance::new(raw.a, raw.b, raw.sigma, spec.loss()?, PenaltySpec::log(spec.epsilon)?)?;
    Ok((inst, raw.x_orig))
}
